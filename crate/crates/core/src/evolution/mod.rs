//! The genetic engine: individuals, population, operators and the
//! generation loop, with flags covering every ablation mode.

mod operators;
mod search;

pub use operators::{crossover, mutate, next_generation, tournament_select};
pub use search::{phenotype, run_search, FitnessEvaluator, GenerationLog, SearchOutcome, Trainer};

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{ArchParam, SearchSpace};

/// One architecture in the population.
#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    /// Position in its generation's population.
    pub id: usize,
    pub alpha: ArchParam,
    pub fitness: Option<f64>,
}

impl Individual {
    pub fn new(id: usize, alpha: ArchParam) -> Self {
        Self {
            id,
            alpha,
            fitness: None,
        }
    }

    pub fn fitness(&self) -> Result<f64> {
        self.fitness.ok_or(Error::MissingFitness(self.id))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    pub individuals: Vec<Individual>,
    /// 1-based generation counter.
    pub generation: usize,
}

impl Population {
    /// `size` individuals with U[0, 1) architecture parameters.
    pub fn random<R: Rng + ?Sized>(size: usize, space: &SearchSpace, rng: &mut R) -> Self {
        let individuals = (0..size)
            .map(|id| Individual::new(id, space.random_arch(rng)))
            .collect();
        Self {
            individuals,
            generation: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Fittest individual; ties go to the lower id.
    pub fn elite(&self) -> Result<&Individual> {
        let mut best: Option<(&Individual, f64)> = None;
        for ind in &self.individuals {
            let f = ind.fitness()?;
            if best.is_none_or(|(_, bf)| f > bf) {
                best = Some((ind, f));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| Error::Config("empty population".into()))
    }
}

/// Granularity of mutation resampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationUnit {
    /// A whole edge row is resampled at once.
    #[default]
    Row,
    /// Each scalar entry is resampled independently.
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub mutation_rate: f64,
    pub batches_per_generation: usize,
    pub decode_k: f64,
    pub use_decode_in_training: bool,
    pub use_decode_in_fitness: bool,
    pub enable_crossover: bool,
    pub enable_mutation: bool,
    pub random_mode: bool,
    pub mutation_unit: MutationUnit,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 50,
            generations: 50,
            tournament_size: 10,
            mutation_rate: 0.1,
            batches_per_generation: 100,
            decode_k: 1.0,
            use_decode_in_training: true,
            use_decode_in_fitness: true,
            enable_crossover: true,
            enable_mutation: true,
            random_mode: false,
            mutation_unit: MutationUnit::Row,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.population_size;
        let t = self.tournament_size;
        if n < 2 {
            return Err(Error::Config(format!("population size must be at least 2, got {n}")));
        }
        if !(2..=n).contains(&t) {
            return Err(Error::Config(format!(
                "tournament size must satisfy 2 <= T <= N ({n}), got {t}"
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Config(format!(
                "mutation rate must lie in [0, 1], got {}",
                self.mutation_rate
            )));
        }
        if self.generations == 0 {
            return Err(Error::Config("at least one generation is required".into()));
        }
        if !(self.decode_k > 0.0 && self.decode_k.is_finite()) {
            return Err(Error::Config(format!("decode k must be positive, got {}", self.decode_k)));
        }
        if self.batches_per_generation < n {
            log::warn!(
                "batches per generation ({}) is below the population size ({n}); some individuals will not train",
                self.batches_per_generation
            );
        }
        Ok(())
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        preset.apply(&mut self);
        self
    }
}

/// Named flag combinations: the full method and its ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Decoding in training and fitness, crossover and mutation.
    #[default]
    Full,
    /// Fresh random population every generation (elite kept).
    Rand,
    /// No decoding anywhere.
    Nd,
    /// No decoding during fitness evaluation.
    Ndf,
    /// No decoding during training.
    Ndt,
    /// Mutation only.
    Mut,
    /// Crossover only.
    Cross,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Full,
        Preset::Rand,
        Preset::Nd,
        Preset::Ndf,
        Preset::Ndt,
        Preset::Mut,
        Preset::Cross,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Full => "full",
            Preset::Rand => "rand",
            Preset::Nd => "nd",
            Preset::Ndf => "ndf",
            Preset::Ndt => "ndt",
            Preset::Mut => "mut",
            Preset::Cross => "cross",
        }
    }

    /// (decode in training, decode in fitness, crossover, mutation, random mode)
    pub fn flags(self) -> (bool, bool, bool, bool, bool) {
        match self {
            Preset::Full => (true, true, true, true, false),
            Preset::Rand => (true, true, false, false, true),
            Preset::Nd => (false, false, true, true, false),
            Preset::Ndf => (true, false, true, true, false),
            Preset::Ndt => (false, true, true, true, false),
            Preset::Mut => (true, true, false, true, false),
            Preset::Cross => (true, true, true, false, false),
        }
    }

    pub fn apply(self, cfg: &mut EvolutionConfig) {
        let (train, fit, cross, mutation, random) = self.flags();
        cfg.use_decode_in_training = train;
        cfg.use_decode_in_fitness = fit;
        cfg.enable_crossover = cross;
        cfg.enable_mutation = mutation;
        cfg.random_mode = random;
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (expected one of full, rand, nd, ndf, ndt, mut, cross)")))
    }
}
