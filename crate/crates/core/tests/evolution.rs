use std::collections::HashSet;

use evnas::evaluation::SurrogateLandscape;
use evnas::evolution::*;
use evnas::experiment::stats::rank_sum_greater;
use evnas::search_space::{ArchParam, CellKind, SearchSpace};
use evnas::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn space() -> SearchSpace {
    SearchSpace::default()
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

fn scored(fits: &[f64], seed: u64) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = Population::random(fits.len(), &space(), &mut rng);
    for (ind, &f) in pop.individuals.iter_mut().zip(fits) {
        ind.fitness = Some(f);
    }
    pop
}

#[test]
fn mutation_resamples_fraction_r() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = space();
    let (mut changed, mut total) = (0usize, 0usize);
    while total < 100_000 {
        let a = s.random_arch(&mut rng);
        let b = mutate(&a, 0.1, MutationUnit::Row, &mut rng);
        for (x, y) in rows(&a).iter().zip(rows(&b)) {
            changed += usize::from(*x != y);
            total += 1;
        }
    }
    let frac = changed as f64 / total as f64;
    assert!((frac - 0.1).abs() < 0.01, "{frac}");
}

#[test]
fn scalar_mutation_resamples_fraction_r() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = space();
    let (mut changed, mut total) = (0usize, 0usize);
    while total < 100_000 {
        let a = s.random_arch(&mut rng);
        let b = mutate(&a, 0.3, MutationUnit::Scalar, &mut rng);
        for k in CellKind::BOTH {
            for (x, y) in a.cell(k).as_slice().iter().zip(b.cell(k).as_slice()) {
                changed += usize::from(x != y);
                total += 1;
            }
        }
    }
    let frac = changed as f64 / total as f64;
    assert!((frac - 0.3).abs() < 0.01, "{frac}");
}

#[test]
fn crossover_takes_half_from_each_parent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = space();
    let (mut from_p1, mut total) = (0usize, 0usize);
    while total < 100_000 {
        let p1 = s.random_arch(&mut rng);
        let p2 = s.random_arch(&mut rng);
        let child = crossover(&p1, &p2, &mut rng).unwrap();
        for ((c, a), b) in rows(&child).iter().zip(rows(&p1)).zip(rows(&p2)) {
            assert!((*c == a) != (*c == b), "row must come from exactly one parent");
            from_p1 += usize::from(*c == a);
            total += 1;
        }
    }
    let frac = from_p1 as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn tournament_inclusion_probability() {
    let mut fits = vec![0.1; 50];
    fits[17] = 0.9;
    let pop = scored(&fits, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trials = 10_000;
    let hits = (0..trials)
        .filter(|_| tournament_select(&pop, 10, &mut rng).unwrap().0.id == 17)
        .count();
    let p = hits as f64 / trials as f64;
    assert!((p - 0.2).abs() < 0.02, "{p}");
}

#[test]
fn tournament_winners_beat_population_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for t in [2, 3, 10] {
        let fits: Vec<f64> = (0..30).map(|_| rng.gen()).collect();
        let pop = scored(&fits, 7);
        let pop_mean = fits.iter().sum::<f64>() / fits.len() as f64;
        let n = 5_000;
        let win_mean = (0..n)
            .map(|_| tournament_select(&pop, t, &mut rng).unwrap().0.fitness.unwrap())
            .sum::<f64>()
            / n as f64;
        assert!(win_mean > pop_mean + 0.05, "T={t}: {win_mean} vs {pop_mean}");
    }
}

#[test]
fn next_generation_keeps_size_and_one_exact_elite() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fits: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
    let pop = scored(&fits, 9);
    let elite = pop.elite().unwrap().alpha.clone();
    let cfg = EvolutionConfig::default();
    let next = next_generation(&pop, &cfg, &space(), &mut rng).unwrap();
    assert_eq!(next.len(), 50);
    assert_eq!(next.individuals[0].alpha, elite);
    assert_eq!(next.individuals.iter().filter(|i| i.alpha == elite).count(), 1);
    let ids: Vec<usize> = next.individuals.iter().map(|i| i.id).collect();
    assert_eq!(ids, (0..50).collect::<Vec<_>>());
}

#[test]
fn random_mode_keeps_elite_and_draws_fresh() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let fits: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
    let pop = scored(&fits, 11);
    let cfg = EvolutionConfig {
        population_size: 20,
        tournament_size: 5,
        ..EvolutionConfig::default()
    }
    .with_preset(Preset::Rand);
    let next = next_generation(&pop, &cfg, &space(), &mut rng).unwrap();
    assert_eq!(next.individuals[0].alpha, pop.elite().unwrap().alpha);
    let old: HashSet<Vec<u64>> = pop
        .individuals
        .iter()
        .flat_map(|i| rows(&i.alpha))
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    for child in &next.individuals[1..] {
        for r in rows(&child.alpha) {
            assert!(!old.contains(&r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
        }
    }
}

#[test]
fn crossover_only_never_invents_rows() {
    let s = space();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = EvolutionConfig {
        population_size: 16,
        tournament_size: 4,
        ..EvolutionConfig::default()
    }
    .with_preset(Preset::Cross);
    let mut pop = Population::random(16, &s, &mut rng);
    let pool: HashSet<Vec<u64>> = pop
        .individuals
        .iter()
        .flat_map(|i| rows(&i.alpha))
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    let land = SurrogateLandscape::random(&s, 0.0, 1).unwrap();
    for _ in 0..10 {
        for ind in pop.individuals.iter_mut() {
            ind.fitness = Some(land.fitness(&ind.alpha, &s).unwrap());
        }
        pop = next_generation(&pop, &cfg, &s, &mut rng).unwrap();
        for ind in &pop.individuals {
            for r in rows(&ind.alpha) {
                assert!(pool.contains(&r.iter().map(|v| v.to_bits()).collect::<Vec<_>>()));
            }
        }
    }
}

fn surrogate_run(preset: Preset, seed: u64, noise: f64, generations: usize) -> SearchOutcome {
    let s = space();
    let land = SurrogateLandscape::random(&s, noise, 1000 + seed).unwrap();
    let cfg = EvolutionConfig {
        generations,
        ..EvolutionConfig::default()
    }
    .with_preset(preset);
    let mut eval = land.evaluator(&s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_search(&cfg, &s, None, &mut eval, &mut rng).unwrap()
}

#[test]
fn elitism_is_monotone_under_deterministic_fitness() {
    for seed in 0..5 {
        let out = surrogate_run(Preset::Full, seed, 0.0, 30);
        for w in out.history.windows(2) {
            assert!(w[1].best_fitness >= w[0].best_fitness, "seed {seed}");
        }
        assert_eq!(out.history.len(), 30);
        assert_eq!(out.best.fitness, Some(out.history.last().unwrap().best_fitness));
    }
}

#[test]
fn single_generation_returns_initial_argmax() {
    let s = space();
    let land = SurrogateLandscape::random(&s, 0.0, 5).unwrap();
    let cfg = EvolutionConfig {
        generations: 1,
        ..EvolutionConfig::default()
    };
    let mut eval = land.evaluator(&s);
    let out = run_search(&cfg, &s, None, &mut eval, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let initial = Population::random(50, &s, &mut ChaCha8Rng::seed_from_u64(3));
    let fits: Vec<f64> = initial.individuals.iter().map(|i| land.fitness(&i.alpha, &s).unwrap()).collect();
    let best = fits.iter().cloned().fold(f64::MIN, f64::max);
    let first = fits.iter().position(|&f| f == best).unwrap();
    assert_eq!(out.best.alpha, initial.individuals[first].alpha);
    assert_eq!(out.history[0].evaluations, 50);
}

#[test]
fn identical_seed_reproduces_history() {
    let untimed = |o: &SearchOutcome| -> Vec<GenerationLog> {
        o.history
            .iter()
            .map(|h| GenerationLog { wall_seconds: 0.0, ..h.clone() })
            .collect()
    };
    let a = surrogate_run(Preset::Full, 9, 0.05, 15);
    let b = surrogate_run(Preset::Full, 9, 0.05, 15);
    assert_eq!(untimed(&a), untimed(&b));
    assert_eq!(a.best_genotype, b.best_genotype);
    assert_eq!(a.best.alpha, b.best.alpha);
    let c = surrogate_run(Preset::Full, 10, 0.05, 15);
    assert_ne!(untimed(&a), untimed(&c));
}

#[test]
fn counters_track_evaluations() {
    let out = surrogate_run(Preset::Full, 2, 0.0, 4);
    let evals: Vec<usize> = out.history.iter().map(|h| h.evaluations).collect();
    assert_eq!(evals, vec![50, 100, 150, 200]);
    for w in out.history.windows(2) {
        assert!(w[1].unique_genotypes >= w[0].unique_genotypes);
    }
    assert!(out.history[3].unique_genotypes <= 200);
    assert!(out.history[0].unique_genotypes > 40);
}

#[test]
fn search_beats_random_search() {
    let full: Vec<f64> = (0..20).map(|s| surrogate_run(Preset::Full, s, 0.0, 50).best.fitness.unwrap()).collect();
    let rand: Vec<f64> = (0..20).map(|s| surrogate_run(Preset::Rand, s, 0.0, 50).best.fitness.unwrap()).collect();
    let r = rank_sum_greater(&full, &rand);
    assert!(r.p_value < 0.05, "{r:?}");
    assert!(full.iter().sum::<f64>() > rand.iter().sum::<f64>());
}

struct Recorder {
    decoded: Vec<bool>,
}

fn looks_decoded(a: &ArchParam) -> bool {
    CellKind::BOTH
        .iter()
        .all(|&k| a.cell(k).as_slice().iter().all(|&v| v == 0.0 || v == 1.0))
}

impl Trainer for Recorder {
    fn train_generation(&mut self, params: &[ArchParam], _generation: usize) -> evnas::Result<()> {
        self.decoded.extend(params.iter().map(looks_decoded));
        Ok(())
    }
}

#[test]
fn decode_flags_route_raw_alpha_to_the_right_phase() {
    let s = space();
    for (preset, train_decoded, fit_decoded) in [
        (Preset::Full, true, true),
        (Preset::Nd, false, false),
        (Preset::Ndf, true, false),
        (Preset::Ndt, false, true),
    ] {
        let cfg = EvolutionConfig {
            population_size: 6,
            tournament_size: 2,
            generations: 3,
            ..EvolutionConfig::default()
        }
        .with_preset(preset);
        let mut trainer = Recorder { decoded: Vec::new() };
        let mut seen = Vec::new();
        let mut eval = |a: &ArchParam| -> evnas::Result<f64> {
            seen.push(looks_decoded(a));
            Ok(0.5)
        };
        run_search(&cfg, &s, Some(&mut trainer), &mut eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(trainer.decoded.len(), 18);
        assert!(trainer.decoded.iter().all(|&d| d == train_decoded), "{preset:?} training");
        assert_eq!(seen.len(), 18);
        assert!(seen.iter().all(|&d| d == fit_decoded), "{preset:?} fitness");
    }
}

#[test]
fn evaluator_failure_names_generation() {
    let s = space();
    let cfg = EvolutionConfig {
        population_size: 4,
        tournament_size: 2,
        generations: 5,
        ..EvolutionConfig::default()
    };
    let mut calls = 0;
    let mut eval = |_: &ArchParam| -> evnas::Result<f64> {
        calls += 1;
        if calls > 9 {
            Err(Error::EmptyData("validation stream has no examples".into()))
        } else {
            Ok(0.5)
        }
    };
    let err = run_search(&cfg, &s, None, &mut eval, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
    match err {
        Error::Generation { generation, source } => {
            assert_eq!(generation, 3);
            assert!(matches!(*source, Error::EmptyData(_)));
        }
        other => panic!("unexpected {other}"),
    }
    let mut nan = |_: &ArchParam| -> evnas::Result<f64> { Ok(f64::NAN) };
    assert!(run_search(&cfg, &s, None, &mut nan, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn invalid_config_is_rejected_before_search() {
    let cfg = EvolutionConfig {
        tournament_size: 60,
        ..EvolutionConfig::default()
    };
    let mut eval = |_: &ArchParam| -> evnas::Result<f64> { panic!("must not evaluate") };
    assert!(matches!(
        run_search(&cfg, &space(), None, &mut eval, &mut ChaCha8Rng::seed_from_u64(1)),
        Err(Error::Config(_))
    ));
}
