use evnas::evaluation::SurrogateLandscape;
use evnas::evolution::{crossover, mutate, tournament_select, MutationUnit, Population};
use evnas::experiment::stats::rank_sum_greater;
use evnas::search_space::{softmax, ArchParam, CellKind, Genotype, Matrix, OpKind, SearchSpace};
use evnas::trainer::CosineSchedule;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn alpha() -> impl Strategy<Value = ArchParam> {
    (
        prop::collection::vec(-20.0f64..20.0, 14 * 8),
        prop::collection::vec(-20.0f64..20.0, 14 * 8),
    )
        .prop_map(|(n, r)| ArchParam::new(Matrix::from_vec(14, 8, n).unwrap(), Matrix::from_vec(14, 8, r).unwrap()).unwrap())
}

fn rows(a: &ArchParam) -> Vec<Vec<f64>> {
    CellKind::BOTH
        .iter()
        .flat_map(|&k| {
            let m = a.cell(k);
            (0..m.shape().0).map(move |i| m.row(i).to_vec())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derived_genotypes_are_well_formed(a in alpha()) {
        let s = SearchSpace::default();
        let g = s.derive(&a).unwrap();
        g.validate().unwrap();
        for kind in CellKind::BOTH {
            for t in 0..4 {
                let node = g.node(kind, t);
                prop_assert!(node[0].pred < node[1].pred);
                prop_assert!(node[1].pred < 2 + t);
                prop_assert!(node.iter().all(|e| e.op != OpKind::Zero));
            }
        }
        prop_assert_eq!(Genotype::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn decode_is_idempotent_with_fixed_support(a in alpha(), k in 0.1f64..5.0) {
        let s = SearchSpace::default();
        let d = s.decode(&a, k).unwrap().into_arch_param();
        prop_assert_eq!(s.derive(&d).unwrap(), s.derive(&a).unwrap());
        let dd = s.decode(&d, k).unwrap().into_arch_param();
        prop_assert_eq!(&dd, &d);
        for kind in CellKind::BOTH {
            let vals = d.cell(kind).as_slice();
            prop_assert_eq!(vals.iter().filter(|&&v| v == k).count(), 8);
            prop_assert_eq!(vals.iter().filter(|&&v| v == 0.0).count(), 14 * 8 - 8);
        }
    }

    #[test]
    fn softmax_is_a_distribution(row in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mutation_keeps_or_resamples_whole_rows(a in alpha(), seed in any::<u64>(), r in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = mutate(&a, r, MutationUnit::Row, &mut rng);
        for (x, y) in rows(&a).iter().zip(rows(&m)) {
            prop_assert!(*x == y || y.iter().all(|v| (0.0..1.0).contains(v)));
        }
        prop_assert_eq!(mutate(&a, 0.0, MutationUnit::Row, &mut rng), a);
    }

    #[test]
    fn crossover_rows_come_from_parents(a in alpha(), b in alpha(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = crossover(&a, &b, &mut rng).unwrap();
        for ((x, p), q) in rows(&c).iter().zip(rows(&a)).zip(rows(&b)) {
            prop_assert!(*x == p || *x == q);
        }
        prop_assert_eq!(crossover(&a, &a, &mut rng).unwrap(), a);
    }

    #[test]
    fn tournament_orders_parents(fits in prop::collection::vec(0.0f64..1.0, 2..30), t_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let n = fits.len();
        let t = 2 + ((n - 2) as f64 * t_frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pop = Population::random(n, &SearchSpace::default(), &mut rng);
        for (ind, &f) in pop.individuals.iter_mut().zip(&fits) {
            ind.fitness = Some(f);
        }
        let (p1, p2) = tournament_select(&pop, t, &mut rng).unwrap();
        prop_assert!(p1.id != p2.id);
        prop_assert!(p1.fitness >= p2.fitness);
        if t == n {
            let best = fits.iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(p1.fitness.unwrap(), best);
        }
    }

    #[test]
    fn cosine_schedule_is_bounded_and_monotone(total in 1usize..5000, a in 0usize..5000, b in 0usize..5000) {
        let s = CosineSchedule { lr_max: 0.025, lr_min: 0.001, total_steps: total };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(s.lr(hi) <= s.lr(lo));
        prop_assert!((0.001 - 1e-12..=0.025 + 1e-12).contains(&s.lr(a)));
    }

    #[test]
    fn rank_sum_statistic_is_bounded(x in prop::collection::vec(0.0f64..1.0, 1..15), y in prop::collection::vec(0.0f64..1.0, 1..15)) {
        let r = rank_sum_greater(&x, &y);
        let nm = (x.len() * y.len()) as f64;
        prop_assert!((0.0..=nm).contains(&r.u));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        let swapped = rank_sum_greater(&y, &x);
        prop_assert!((r.u + swapped.u - nm).abs() < 1e-9);
    }

    #[test]
    fn surrogate_fitness_is_a_fraction(a in alpha(), noise in 0.0f64..2.0, seed in any::<u64>()) {
        let s = SearchSpace::default();
        let land = SurrogateLandscape::random(&s, noise, seed).unwrap();
        let f = land.fitness(&a, &s).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(f, land.fitness(&a, &s).unwrap());
        if noise == 0.0 {
            prop_assert_eq!((f * 16.0).fract(), 0.0);
        }
    }
}
