//! Round-robin weight-inheritance training of the shared supernet: SGD with
//! momentum, weight decay and a cosine-annealed learning rate.

use std::cell::RefCell;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::evolution::{phenotype, EvolutionConfig, Population, Trainer};
use crate::search_space::{ArchParam, SearchSpace};
use crate::supernet::{ParamStore, Supernet, Tape};

/// `lr_min + (lr_max - lr_min)(1 + cos(pi * step / total)) / 2`, no restarts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_max;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_max: 0.025,
            lr_min: 0.001,
            momentum: 0.9,
            weight_decay: 3e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub schedule: CosineSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f32>>,
    step: usize,
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, total_steps: usize, params: &ParamStore) -> Self {
        Self {
            schedule: CosineSchedule {
                lr_max: cfg.lr_max,
                lr_min: cfg.lr_min,
                total_steps,
            },
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: params.ids().map(|id| vec![0.0; params.get(id).len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Learning rate the next update will use.
    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    /// `v <- m v + (g + wd p)`, `p <- p - lr v`; gradients are zeroed and the
    /// schedule advances one step.
    pub fn sgd_step(&mut self, params: &mut ParamStore) -> Result<()> {
        if self.velocity.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let lr = self.lr() as f32;
        let m = self.momentum as f32;
        let wd = self.weight_decay as f32;
        for (id, v) in params.ids().zip(self.velocity.iter_mut()) {
            let (p, g) = params.value_and_grad_mut(id);
            if v.len() != p.len() {
                return Err(Error::Shape(format!(
                    "momentum buffer of `{id:?}` has {} entries, parameter has {}",
                    v.len(),
                    p.len()
                )));
            }
            for ((p, g), v) in p.iter_mut().zip(g.iter_mut()).zip(v.iter_mut()) {
                *v = m * *v + (*g + wd * *p);
                *p -= lr * *v;
                *g = 0.0;
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainPlan {
    pub batches_per_generation: usize,
    pub batch_size: usize,
    /// Global L2 norm cap on the gradient, if any.
    pub grad_clip: Option<f64>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            batches_per_generation: 100,
            batch_size: 32,
            grad_clip: None,
        }
    }
}

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub step: usize,
    pub generation: usize,
    pub individual_index: usize,
    pub loss: f64,
    pub lr: f64,
}

fn clip_gradients(params: &mut ParamStore, max_norm: f64) {
    let norm = params
        .ids()
        .flat_map(|id| params.grad(id).iter().map(|&g| g as f64 * g as f64).collect::<Vec<_>>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = (max_norm / norm) as f32;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            params.value_and_grad_mut(id).1.iter_mut().for_each(|g| *g *= scale);
        }
    }
}

/// Trains for `plan.batches_per_generation` batches; batch `i` uses `params[i mod N]`.
pub fn train_round_robin(
    net: &mut Supernet,
    params: &[ArchParam],
    plan: &TrainPlan,
    opt: &mut OptimizerState,
    stream: &mut BatchStream<'_>,
    generation: usize,
    sink: &mut dyn FnMut(TrainRecord),
) -> Result<()> {
    let n = params.len();
    let b = plan.batches_per_generation;
    if b == 0 {
        return Ok(());
    }
    if n == 0 {
        return Err(Error::Config("round-robin training needs at least one individual".into()));
    }
    if !b.is_multiple_of(n) {
        log::warn!("{b} batches do not divide evenly over {n} individuals; the lowest indices train once more");
    }
    for i in 0..b {
        let idx = i % n;
        let (batch, labels) = stream.next_batch()?;
        let mut tape = Tape::new();
        let loss = net
            .loss(&mut tape, &batch, &labels, &params[idx])
            .map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} at batch {i} (individual {idx})")),
                e => e,
            })?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss is {value} at batch {i} (individual {idx})"
            )));
        }
        net.backward(&tape, loss)?;
        if let Some(c) = plan.grad_clip {
            clip_gradients(net.params_mut(), c);
        }
        let lr = opt.lr();
        let step = opt.step();
        opt.sgd_step(net.params_mut())?;
        sink(TrainRecord {
            step,
            generation,
            individual_index: idx,
            loss: value,
            lr,
        });
    }
    Ok(())
}

/// The training phase of one generation: each individual contributes
/// `decode(alpha, k)` or its raw alpha, according to `cfg`.
#[allow(clippy::too_many_arguments)]
pub fn train_generation(
    net: &mut Supernet,
    pop: &Population,
    plan: &TrainPlan,
    opt: &mut OptimizerState,
    stream: &mut BatchStream<'_>,
    cfg: &EvolutionConfig,
    sink: &mut dyn FnMut(TrainRecord),
) -> Result<()> {
    let space = SearchSpace::new(net.topology().clone(), net.ops().clone());
    let params = pop
        .individuals
        .iter()
        .map(|ind| phenotype(&ind.alpha, cfg.use_decode_in_training, cfg.decode_k, &space))
        .collect::<Result<Vec<_>>>()?;
    train_round_robin(net, &params, plan, opt, stream, pop.generation, sink)
}

/// [`Trainer`] hook over a shared supernet; keeps every training record.
pub struct SupernetTrainer<'a> {
    net: &'a RefCell<Supernet>,
    plan: TrainPlan,
    opt: OptimizerState,
    stream: BatchStream<'a>,
    records: Vec<TrainRecord>,
}

impl<'a> SupernetTrainer<'a> {
    pub fn new(net: &'a RefCell<Supernet>, plan: TrainPlan, opt: OptimizerState, stream: BatchStream<'a>) -> Self {
        Self {
            net,
            plan,
            opt,
            stream,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[TrainRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TrainRecord> {
        self.records
    }
}

impl Trainer for SupernetTrainer<'_> {
    fn train_generation(&mut self, params: &[ArchParam], generation: usize) -> Result<()> {
        let mut net = self.net.borrow_mut();
        let records = &mut self.records;
        train_round_robin(
            &mut net,
            params,
            &self.plan,
            &mut self.opt,
            &mut self.stream,
            generation,
            &mut |r| records.push(r),
        )
    }
}
