//! Fitness estimation: validation accuracy through the shared supernet, and a
//! deterministic surrogate landscape for exercising search dynamics cheaply.

use std::cell::RefCell;
use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evolution::{phenotype, EvolutionConfig, FitnessEvaluator, Individual};
use crate::search_space::{ArchParam, CellKind, Genotype, SearchSpace};
use crate::supernet::Supernet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    pub fitness: f64,
    pub correct: usize,
    pub total: usize,
    pub eval_batches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalPlan {
    pub batch_size: usize,
    /// Cap on validation batches per fitness call; `None` uses the full split.
    pub max_batches: Option<usize>,
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_batches: None,
        }
    }
}

/// Top-1 accuracy of the supernet under `params` (ties go to the lower class).
pub fn evaluate_params(net: &Supernet, params: &ArchParam, data: &Dataset, plan: &EvalPlan) -> Result<FitnessReport> {
    if data.is_empty() {
        return Err(Error::EmptyData("validation stream has no examples".into()));
    }
    let limit = plan.max_batches.unwrap_or(usize::MAX);
    if limit == 0 {
        return Err(Error::EmptyData("fitness evaluation configured with zero batches".into()));
    }
    let (mut correct, mut total, mut batches) = (0, 0, 0);
    for idx in data.sequential_batches(plan.batch_size).take(limit) {
        let (x, labels) = data.batch(&idx)?;
        let logits = net.predict(&x, params)?;
        let classes = logits.shape()[1];
        for (row, &label) in logits.data().chunks(classes).zip(&labels) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
        total += labels.len();
        batches += 1;
    }
    Ok(FitnessReport {
        fitness: correct as f64 / total as f64,
        correct,
        total,
        eval_batches: batches,
    })
}

/// Scores `ind` with `decode(alpha, k)` or its raw alpha per `cfg`, storing the fitness.
pub fn evaluate_fitness(
    net: &Supernet,
    ind: &mut Individual,
    data: &Dataset,
    cfg: &EvolutionConfig,
    plan: &EvalPlan,
) -> Result<FitnessReport> {
    let space = SearchSpace::new(net.topology().clone(), net.ops().clone());
    let params = phenotype(&ind.alpha, cfg.use_decode_in_fitness, cfg.decode_k, &space)?;
    let report = evaluate_params(net, &params, data, plan)?;
    ind.fitness = Some(report.fitness);
    Ok(report)
}

/// [`FitnessEvaluator`] hook over a shared supernet.
pub struct SupernetEvaluator<'a> {
    net: &'a RefCell<Supernet>,
    data: &'a Dataset,
    plan: EvalPlan,
}

impl<'a> SupernetEvaluator<'a> {
    pub fn new(net: &'a RefCell<Supernet>, data: &'a Dataset, plan: EvalPlan) -> Self {
        Self { net, data, plan }
    }
}

impl FitnessEvaluator for SupernetEvaluator<'_> {
    fn evaluate(&mut self, params: &ArchParam) -> Result<f64> {
        Ok(evaluate_params(&self.net.borrow(), params, self.data, &self.plan)?.fitness)
    }
}

/// Fitness as the fraction of genotype slots matching a hidden target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateLandscape {
    #[serde(with = "genotype_json")]
    pub hidden_target: Genotype,
    pub noise_std: f64,
    pub seed: u64,
}

mod genotype_json {
    use super::Genotype;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(g: &Genotype, s: S) -> Result<S::Ok, S::Error> {
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).map_err(serde::ser::Error::custom)?;
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Genotype, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Genotype::from_json(&v.to_string()).map_err(D::Error::custom)
    }
}

impl SurrogateLandscape {
    pub fn new(hidden_target: Genotype, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std must be non-negative, got {noise_std}")));
        }
        hidden_target.validate()?;
        Ok(Self {
            hidden_target,
            noise_std,
            seed,
        })
    }

    /// Target derived from a seeded uniform alpha.
    pub fn random(space: &SearchSpace, noise_std: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = space.derive(&space.random_arch(&mut rng))?;
        Self::new(target, noise_std, seed)
    }

    pub fn slots(&self) -> usize {
        2 * self.hidden_target.normal.len()
    }

    /// Entries agreeing with the target on both predecessor and op.
    pub fn matches(&self, g: &Genotype) -> Result<usize> {
        if g.topology != self.hidden_target.topology {
            return Err(Error::Shape(format!(
                "genotype topology {:?} differs from target {:?}",
                g.topology, self.hidden_target.topology
            )));
        }
        let mut count = 0;
        for kind in CellKind::BOTH {
            for t in 0..g.topology.intermediates {
                let target: HashSet<_> = self.hidden_target.node(kind, t).iter().copied().collect();
                count += g.node(kind, t).iter().filter(|e| target.contains(e)).count();
            }
        }
        Ok(count)
    }

    pub fn fitness(&self, alpha: &ArchParam, space: &SearchSpace) -> Result<f64> {
        let g = space.derive(alpha)?;
        let clean = self.matches(&g)? as f64 / self.slots() as f64;
        if self.noise_std == 0.0 {
            return Ok(clean);
        }
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for kind in CellKind::BOTH {
            for v in alpha.cell(kind).as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        let noise = Normal::new(0.0, self.noise_std)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng);
        Ok((clean + noise).clamp(0.0, 1.0))
    }

    pub fn evaluator<'a>(&'a self, space: &'a SearchSpace) -> impl FitnessEvaluator + 'a {
        move |alpha: &ArchParam| self.fitness(alpha, space)
    }
}
