use rand::seq::index::sample;
use rand::Rng;

use super::{EvolutionConfig, Individual, MutationUnit, Population};
use crate::error::{Error, Result};
use crate::search_space::{ArchParam, CellKind, SearchSpace};

/// Resamples each edge row (or each scalar, for [`MutationUnit::Scalar`])
/// from U[0, 1) with probability `r`.
pub fn mutate<R: Rng + ?Sized>(alpha: &ArchParam, r: f64, unit: MutationUnit, rng: &mut R) -> ArchParam {
    let mut out = alpha.clone();
    for kind in CellKind::BOTH {
        let m = out.cell_mut(kind);
        let (rows, _) = m.shape();
        for i in 0..rows {
            let row = m.row_mut(i);
            match unit {
                MutationUnit::Row => {
                    if rng.gen_bool(r) {
                        row.iter_mut().for_each(|v| *v = rng.gen());
                    }
                }
                MutationUnit::Scalar => {
                    for v in row.iter_mut() {
                        if rng.gen_bool(r) {
                            *v = rng.gen();
                        }
                    }
                }
            }
        }
    }
    out
}

/// Each edge row of the child comes from `p1` with probability 0.5, else from `p2`.
pub fn crossover<R: Rng + ?Sized>(p1: &ArchParam, p2: &ArchParam, rng: &mut R) -> Result<ArchParam> {
    if p1.shape() != p2.shape() {
        return Err(Error::Shape(format!(
            "crossover parents differ in shape: {:?} vs {:?}",
            p1.shape(),
            p2.shape()
        )));
    }
    let mut child = p2.clone();
    for kind in CellKind::BOTH {
        let src = p1.cell(kind);
        let dst = child.cell_mut(kind);
        for i in 0..src.shape().0 {
            if rng.gen_bool(0.5) {
                dst.row_mut(i).copy_from_slice(src.row(i));
            }
        }
    }
    Ok(child)
}

/// Samples `t` individuals without replacement and returns the two fittest,
/// fitter first; ties go to the lower id.
pub fn tournament_select<'a, R: Rng + ?Sized>(
    pop: &'a Population,
    t: usize,
    rng: &mut R,
) -> Result<(&'a Individual, &'a Individual)> {
    let n = pop.len();
    if t < 2 || t > n {
        return Err(Error::Config(format!(
            "tournament size must satisfy 2 <= T <= N ({n}), got {t}"
        )));
    }
    for ind in &pop.individuals {
        ind.fitness()?;
    }
    let mut picked: Vec<&Individual> = sample(rng, n, t)
        .into_iter()
        .map(|i| &pop.individuals[i])
        .collect();
    picked.sort_by(|a, b| {
        b.fitness
            .partial_cmp(&a.fitness)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.id.cmp(&b.id))
    });
    Ok((picked[0], picked[1]))
}

/// Builds the next population: the elite is carried into slot 0 unchanged and
/// the remaining slots are bred (or drawn fresh in random mode).
pub fn next_generation<R: Rng + ?Sized>(
    pop: &Population,
    cfg: &EvolutionConfig,
    space: &SearchSpace,
    rng: &mut R,
) -> Result<Population> {
    let elite = pop.elite()?;
    let n = pop.len();
    let mut individuals = Vec::with_capacity(n);
    individuals.push(Individual::new(0, elite.alpha.clone()));
    for id in 1..n {
        let alpha = if cfg.random_mode {
            space.random_arch(rng)
        } else {
            let (p1, p2) = tournament_select(pop, cfg.tournament_size, rng)?;
            let child = if cfg.enable_crossover {
                crossover(&p1.alpha, &p2.alpha, rng)?
            } else {
                p1.alpha.clone()
            };
            if cfg.enable_mutation {
                mutate(&child, cfg.mutation_rate, cfg.mutation_unit, rng)
            } else {
                child
            }
        };
        individuals.push(Individual::new(id, alpha));
    }
    Ok(Population {
        individuals,
        generation: pop.generation + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space() -> SearchSpace {
        SearchSpace::default()
    }

    fn rows(a: &ArchParam) -> Vec<&[f64]> {
        CellKind::BOTH
            .iter()
            .flat_map(|&k| {
                let m = a.cell(k);
                (0..m.shape().0).map(move |i| m.row(i))
            })
            .collect()
    }

    #[test]
    fn mutation_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = space().random_arch(&mut rng);
        assert_eq!(mutate(&a, 0.0, MutationUnit::Row, &mut rng), a);
        assert_eq!(mutate(&a, 0.0, MutationUnit::Scalar, &mut rng), a);
        let b = mutate(&a, 1.0, MutationUnit::Row, &mut rng);
        for (x, y) in rows(&a).iter().zip(rows(&b)) {
            assert_ne!(*x, y);
            assert!(y.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }

    #[test]
    fn crossover_identical_parents_and_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = space().random_arch(&mut rng);
        assert_eq!(crossover(&a, &a, &mut rng).unwrap(), a);
        let small = SearchSpace::new(
            crate::search_space::CellTopology::new(2, 2).unwrap(),
            crate::search_space::OperationSpace::darts(),
        );
        let b = small.random_arch(&mut rng);
        assert!(matches!(crossover(&a, &b, &mut rng), Err(Error::Shape(_))));
    }

    fn scored(fits: &[f64]) -> Population {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pop = Population::random(fits.len(), &space(), &mut rng);
        for (ind, &f) in pop.individuals.iter_mut().zip(fits) {
            ind.fitness = Some(f);
        }
        pop
    }

    #[test]
    fn full_tournament_returns_global_top_two() {
        let pop = scored(&[0.3, 0.9, 0.1, 0.9, 0.5, 0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (a, b) = tournament_select(&pop, 6, &mut rng).unwrap();
            assert_eq!((a.id, b.id), (1, 3));
        }
    }

    #[test]
    fn minimal_tournament_orders_by_fitness() {
        let pop = scored(&[0.3, 0.8, 0.1, 0.6, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, b) = tournament_select(&pop, 2, &mut rng).unwrap();
            assert!(a.fitness.unwrap() > b.fitness.unwrap());
        }
    }

    #[test]
    fn tournament_errors() {
        let mut pop = scored(&[0.3, 0.8, 0.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(tournament_select(&pop, 4, &mut rng).is_err());
        assert!(tournament_select(&pop, 1, &mut rng).is_err());
        pop.individuals[2].fitness = None;
        assert!(matches!(
            tournament_select(&pop, 2, &mut rng),
            Err(Error::MissingFitness(2))
        ));
    }

    #[test]
    fn copies_only_when_operators_disabled() {
        let pop = scored(&[0.3, 0.8, 0.1, 0.6, 0.5, 0.55]);
        let cfg = EvolutionConfig {
            population_size: 6,
            tournament_size: 3,
            enable_crossover: false,
            enable_mutation: false,
            ..EvolutionConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let next = next_generation(&pop, &cfg, &space(), &mut rng).unwrap();
        assert_eq!(next.generation, pop.generation + 1);
        assert_eq!(next.individuals[0].alpha, pop.individuals[1].alpha);
        for child in &next.individuals[1..] {
            assert!(pop.individuals.iter().any(|p| p.alpha == child.alpha));
            assert!(child.fitness.is_none());
        }
    }
}
