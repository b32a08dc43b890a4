use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;
use web_time::Instant;

use super::{next_generation, EvolutionConfig, Individual, Population};
use crate::error::{Error, Result};
use crate::search_space::{ArchParam, Genotype, SearchSpace};

/// Training phase hook: receives the per-individual parameters, in
/// population order, that the supernet should be trained with.
pub trait Trainer {
    fn train_generation(&mut self, params: &[ArchParam], generation: usize) -> Result<()>;
}

/// Fitness phase hook: scores one architecture parameter.
pub trait FitnessEvaluator {
    fn evaluate(&mut self, params: &ArchParam) -> Result<f64>;
}

impl<F: FnMut(&ArchParam) -> Result<f64>> FitnessEvaluator for F {
    fn evaluate(&mut self, params: &ArchParam) -> Result<f64> {
        self(params)
    }
}

/// The parameters a phase sees: `decode(alpha, k)` or the raw alpha.
pub fn phenotype(alpha: &ArchParam, use_decode: bool, k: f64, space: &SearchSpace) -> Result<ArchParam> {
    if use_decode {
        Ok(space.decode(alpha, k)?.into_arch_param())
    } else {
        alpha.check_shape(&space.topology, &space.ops)?;
        Ok(alpha.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationLog {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub min_fitness: f64,
    pub elite_genotype_hash: String,
    pub wall_seconds: f64,
    /// Distinct genotypes evaluated so far.
    pub unique_genotypes: usize,
    /// Fitness evaluations so far.
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Elite of the final generation, with its fitness.
    pub best: Individual,
    pub best_genotype: Genotype,
    pub history: Vec<GenerationLog>,
    /// The final, evaluated population.
    pub population: Population,
}

/// Runs the generation loop: train, evaluate, record the elite, breed.
/// The final generation is evaluated but not bred.
pub fn run_search<R: Rng + ?Sized>(
    cfg: &EvolutionConfig,
    space: &SearchSpace,
    mut trainer: Option<&mut dyn Trainer>,
    evaluator: &mut dyn FitnessEvaluator,
    rng: &mut R,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut pop = Population::random(cfg.population_size, space, rng);
    let mut history = Vec::with_capacity(cfg.generations);
    let mut seen = HashSet::new();
    let mut evaluations = 0;
    for g in 1..=cfg.generations {
        let start = Instant::now();
        let mut step = |pop: &mut Population, seen: &mut HashSet<Genotype>, evaluations: &mut usize| -> Result<GenerationLog> {
            if let Some(t) = trainer.as_deref_mut() {
                let params = pop
                    .individuals
                    .iter()
                    .map(|ind| phenotype(&ind.alpha, cfg.use_decode_in_training, cfg.decode_k, space))
                    .collect::<Result<Vec<_>>>()?;
                t.train_generation(&params, g)?;
            }
            for ind in pop.individuals.iter_mut() {
                let params = phenotype(&ind.alpha, cfg.use_decode_in_fitness, cfg.decode_k, space)?;
                let f = evaluator.evaluate(&params)?;
                if !f.is_finite() {
                    return Err(Error::NonFinite(format!("fitness of individual {} is {f}", ind.id)));
                }
                ind.fitness = Some(f);
                seen.insert(space.derive(&ind.alpha)?);
                *evaluations += 1;
            }
            let fits: Vec<f64> = pop.individuals.iter().map(|i| i.fitness.unwrap_or(0.0)).collect();
            let elite = pop.elite()?;
            Ok(GenerationLog {
                generation: g,
                best_fitness: elite.fitness()?,
                mean_fitness: fits.iter().sum::<f64>() / fits.len() as f64,
                min_fitness: fits.iter().copied().fold(f64::INFINITY, f64::min),
                elite_genotype_hash: space.derive(&elite.alpha)?.fingerprint(),
                wall_seconds: 0.0,
                unique_genotypes: seen.len(),
                evaluations: *evaluations,
            })
        };
        let mut log = step(&mut pop, &mut seen, &mut evaluations).map_err(|e| e.in_generation(g))?;
        log.wall_seconds = start.elapsed().as_secs_f64();
        log::info!(
            "generation {g}/{}: best {:.4} mean {:.4} min {:.4} elite {}",
            cfg.generations,
            log.best_fitness,
            log.mean_fitness,
            log.min_fitness,
            log.elite_genotype_hash
        );
        history.push(log);
        if g < cfg.generations {
            pop = next_generation(&pop, cfg, space, rng).map_err(|e| e.in_generation(g))?;
        }
    }
    let best = pop.elite()?.clone();
    let best_genotype = space.derive(&best.alpha)?;
    Ok(SearchOutcome {
        best,
        best_genotype,
        history,
        population: pop,
    })
}
