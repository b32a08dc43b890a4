use std::cell::RefCell;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use web_time::Instant;

use super::config::{DataConfig, ExperimentConfig};
use super::stats::{mean, rank_sum_greater, RankSum};
use crate::data::BatchStream;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_params, EvalPlan, FitnessReport, SupernetEvaluator, SurrogateLandscape};
use crate::evolution::{run_search, GenerationLog, Preset, SearchOutcome};
use crate::search_space::{Genotype, SearchSpace};
use crate::supernet::{checkpoint, Supernet};
use crate::trainer::{OptimizerState, SupernetTrainer, TrainRecord};

pub const CONFIG_FILE: &str = "config.toml";
pub const GENERATIONS_CSV: &str = "generations.csv";
pub const TRAINING_CSV: &str = "training.csv";
pub const GENOTYPE_JSON: &str = "best.genotype.json";
pub const GENOTYPE_DOT: &str = "best.dot";
pub const CHECKPOINT: &str = "supernet.evns";
pub const MANIFEST: &str = "manifest.json";
pub const HIDDEN_TARGET_JSON: &str = "hidden_target.genotype.json";

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Creates the output directory and records the resolved config in it.
fn prepare_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(dir)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: csv error {other:?}", path.display())),
    }
}

#[derive(Serialize)]
struct GenerationRow<'a> {
    generation: usize,
    best_fitness: f64,
    mean_fitness: f64,
    min_fitness: f64,
    elite_genotype_hash: &'a str,
    wall_seconds: Option<f64>,
    unique_genotypes: usize,
    evaluations: usize,
}

/// Writes the per-generation log; wall time is left blank unless requested
/// so that reruns produce identical files.
pub fn write_generations_csv(path: &Path, history: &[GenerationLog], with_time: bool) -> Result<()> {
    let rows: Vec<GenerationRow> = history
        .iter()
        .map(|h| GenerationRow {
            generation: h.generation,
            best_fitness: h.best_fitness,
            mean_fitness: h.mean_fitness,
            min_fitness: h.min_fitness,
            elite_genotype_hash: &h.elite_genotype_hash,
            wall_seconds: with_time.then_some(h.wall_seconds),
            unique_genotypes: h.unique_genotypes,
            evaluations: h.evaluations,
        })
        .collect();
    write_csv(path, &rows)
}

fn write_genotype(dir: &Path, g: &Genotype) -> Result<()> {
    write(&dir.join(GENOTYPE_JSON), g.to_json() + "\n")?;
    write(&dir.join(GENOTYPE_DOT), g.to_dot())
}

fn manifest(cfg: &ExperimentConfig, kind: &str, outcome: &SearchOutcome, wall: f64) -> serde_json::Value {
    let last = outcome.history.last();
    json!({
        "tool": "evnas",
        "version": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": checkpoint::FORMAT_VERSION,
        "kind": kind,
        "seed": cfg.seed,
        "preset": cfg.preset.name(),
        "config_hash": cfg.hash(),
        "generations": outcome.history.len(),
        "best_fitness": outcome.best.fitness,
        "best_genotype_hash": outcome.best_genotype.fingerprint(),
        "unique_genotypes": last.map_or(0, |l| l.unique_genotypes),
        "evaluations": last.map_or(0, |l| l.evaluations),
        "wall_seconds": wall,
    })
}

/// Result of a supernet search run.
#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub outcome: SearchOutcome,
    pub training: Vec<TrainRecord>,
    pub wall_seconds: f64,
}

/// Full search: supernet training plus validation-accuracy fitness. Writes
/// every artifact into the configured output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate()?;
    let evo = cfg.evolution_config();
    let space = cfg.search_space()?;
    let dir = prepare_dir(cfg)?;
    let (train, val) = cfg.data.load()?;
    let net_cfg = cfg.supernet_config(&train)?;
    let net = RefCell::new(Supernet::new(net_cfg, &mut rng_for(cfg.seed, 1))?);
    let plan = cfg.train_plan();
    let total = evo.generations * plan.batches_per_generation;
    let opt = OptimizerState::new(&cfg.optimizer, total, net.borrow().params());
    let stream = BatchStream::new(&train, plan.batch_size, cfg.seed)?;
    let mut trainer = SupernetTrainer::new(&net, plan, opt, stream);
    let mut evaluator = SupernetEvaluator::new(&net, &val, cfg.eval);
    let outcome = run_search(&evo, &space, Some(&mut trainer), &mut evaluator, &mut rng_for(cfg.seed, 2))?;
    let training = trainer.into_records();
    let net = net.into_inner();

    write_generations_csv(&dir.join(GENERATIONS_CSV), &outcome.history, cfg.record_wall_time)?;
    write_csv(&dir.join(TRAINING_CSV), &training)?;
    write_genotype(&dir, &outcome.best_genotype)?;
    checkpoint::save(&net, &dir.join(CHECKPOINT))?;
    let wall = start.elapsed().as_secs_f64();
    let m = manifest(cfg, "supernet", &outcome, wall);
    write(&dir.join(MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n")?;
    Ok(RunReport {
        dir,
        outcome,
        training,
        wall_seconds: wall,
    })
}

#[derive(Debug)]
pub struct SurrogateReport {
    pub dir: Option<PathBuf>,
    pub outcome: SearchOutcome,
    pub landscape: SurrogateLandscape,
    /// Noise-free fitness of the final elite.
    pub clean_fitness: f64,
}

impl SurrogateReport {
    pub fn final_best(&self) -> f64 {
        self.outcome.history.last().map_or(f64::NAN, |h| h.best_fitness)
    }
}

/// Search against a hidden-target surrogate; no training. Artifacts are
/// written when `write_artifacts` is set.
pub fn run_surrogate_search(cfg: &ExperimentConfig, write_artifacts: bool) -> Result<SurrogateReport> {
    let start = Instant::now();
    cfg.validate()?;
    let evo = cfg.evolution_config();
    let space = cfg.search_space()?;
    let target_seed = cfg.surrogate.target_seed.unwrap_or(cfg.seed);
    let landscape = SurrogateLandscape::random(&space, cfg.surrogate.noise_std, target_seed)?;
    let outcome = {
        let mut evaluator = landscape.evaluator(&space);
        run_search(&evo, &space, None, &mut evaluator, &mut rng_for(cfg.seed, 2))?
    };
    let clean = SurrogateLandscape {
        noise_std: 0.0,
        ..landscape.clone()
    };
    let clean_fitness = clean.fitness(&outcome.best.alpha, &space)?;
    let mut dir = None;
    if write_artifacts {
        let d = prepare_dir(cfg)?;
        write_generations_csv(&d.join(GENERATIONS_CSV), &outcome.history, cfg.record_wall_time)?;
        write_genotype(&d, &outcome.best_genotype)?;
        write(&d.join(HIDDEN_TARGET_JSON), landscape.hidden_target.to_json() + "\n")?;
        let mut m = manifest(cfg, "surrogate", &outcome, start.elapsed().as_secs_f64());
        m["noise_std"] = json!(landscape.noise_std);
        m["target_seed"] = json!(target_seed);
        m["clean_best_fitness"] = json!(clean_fitness);
        write(&d.join(MANIFEST), serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n")?;
        dir = Some(d);
    }
    Ok(SurrogateReport {
        dir,
        outcome,
        landscape,
        clean_fitness,
    })
}

/// Validation accuracy of a saved supernet under a genotype's decoded parameters.
pub fn evaluate_checkpoint(
    checkpoint_path: &Path,
    genotype_path: &Path,
    data: &DataConfig,
    k: f64,
    plan: &EvalPlan,
) -> Result<FitnessReport> {
    let net = checkpoint::load(checkpoint_path)?;
    let text = fs::read_to_string(genotype_path).map_err(|e| Error::io(genotype_path, e))?;
    let genotype = Genotype::from_json(&text)?;
    let space = SearchSpace::new(net.topology().clone(), net.ops().clone());
    let decoded = genotype.to_decoded(k, &space.topology, &space.ops)?;
    let (_, val) = data.load()?;
    evaluate_params(&net, decoded.as_arch_param(), &val, plan)
}

#[derive(Clone, Debug, Serialize)]
pub struct PresetSamples {
    pub preset: &'static str,
    pub final_best: Vec<f64>,
    pub clean_best: Vec<f64>,
    pub mean_final_best: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub a: PresetSamples,
    pub b: PresetSamples,
    /// One-sided test that `a` beats `b` on final best fitness.
    pub rank_sum: RankSum,
}

/// Surrogate searches for two presets over the same seeds; equal budgets
/// since both share N and G.
pub fn compare_presets(cfg: &ExperimentConfig, a: Preset, b: Preset, seeds: &[u64]) -> Result<Comparison> {
    let run = |preset: Preset| -> Result<PresetSamples> {
        let (mut final_best, mut clean_best) = (Vec::new(), Vec::new());
        for &seed in seeds {
            let c = ExperimentConfig {
                seed,
                preset,
                ..cfg.clone()
            };
            let r = run_surrogate_search(&c, false)?;
            final_best.push(r.final_best());
            clean_best.push(r.clean_fitness);
        }
        Ok(PresetSamples {
            preset: preset.name(),
            mean_final_best: mean(&final_best),
            final_best,
            clean_best,
        })
    };
    let a = run(a)?;
    let b = run(b)?;
    let rank_sum = rank_sum_greater(&a.final_best, &b.final_best);
    Ok(Comparison {
        seeds: seeds.to_vec(),
        a,
        b,
        rank_sum,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_fitness: f64,
    pub genotype_hash: String,
    pub dir: PathBuf,
}

/// Independent searches, one subdirectory per seed, plus a summary CSV.
pub fn run_multi_seed(cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<SeedResult>> {
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let mut results = Vec::new();
    for &seed in seeds {
        let c = ExperimentConfig {
            seed,
            output_dir: root.join(format!("seed-{seed}")),
            ..cfg.clone()
        };
        let r = run_experiment(&c)?;
        log::info!("seed {seed}: elite fitness {:?}", r.outcome.best.fitness);
        results.push(SeedResult {
            seed,
            best_fitness: r.outcome.best.fitness.unwrap_or(f64::NAN),
            genotype_hash: r.outcome.best_genotype.fingerprint(),
            dir: r.dir,
        });
    }
    write_csv(&root.join("summary.csv"), &results)?;
    Ok(results)
}
