//! WebAssembly bindings for the browser demo in `www/`. Every export returns
//! a JSON string so the page needs no generated type definitions.

use evnas::evolution::Preset;
use evnas::experiment::{compare_presets, run_surrogate_search, ExperimentConfig};
use evnas::search_space::{softmax, ArchParam, CellKind, SearchSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn fail(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn matrices(a: &ArchParam) -> Value {
    let cell = |k: CellKind| -> Vec<Vec<f64>> {
        let m = a.cell(k);
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    };
    json!({ "normal": cell(CellKind::Normal), "reduce": cell(CellKind::Reduce) })
}

fn surrogate_config(seed: u64, population: usize, generations: usize, noise: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.evolution.population_size = population;
    cfg.evolution.tournament_size = cfg.evolution.tournament_size.min(population);
    cfg.evolution.generations = generations;
    cfg.surrogate.noise_std = noise;
    cfg
}

/// Random architecture parameters for `seed`, their per-edge softmax, the
/// derived genotype and its decoded matrices under constant `k`.
pub fn explore_json(seed: u64, k: f64) -> Result<String, String> {
    let space = SearchSpace::default();
    let alpha = space.random_arch(&mut ChaCha8Rng::seed_from_u64(seed));
    let genotype = space.derive(&alpha).map_err(|e| e.to_string())?;
    let decoded = space.decode(&alpha, k).map_err(|e| e.to_string())?;
    let weights = |a: &ArchParam| -> Value {
        let cell = |kind: CellKind| -> Vec<Vec<f64>> {
            let m = a.cell(kind);
            (0..m.rows()).map(|r| softmax(m.row(r))).collect()
        };
        json!({ "normal": cell(CellKind::Normal), "reduce": cell(CellKind::Reduce) })
    };
    let edges: Vec<[usize; 2]> = space.topology.edges().iter().map(|e| [e.source, e.target]).collect();
    let ops: Vec<&str> = space.ops.ops().iter().map(|o| o.name()).collect();
    Ok(json!({
        "ops": ops,
        "edges": edges,
        "inputs": space.topology.num_inputs(),
        "alpha": matrices(&alpha),
        "alpha_softmax": weights(&alpha),
        "decoded": matrices(decoded.as_arch_param()),
        "decoded_softmax": weights(decoded.as_arch_param()),
        "genotype": serde_json::from_str::<Value>(&genotype.to_json()).map_err(|e| e.to_string())?,
        "fingerprint": genotype.fingerprint(),
        "dot": genotype.to_dot(),
    })
    .to_string())
}

/// One surrogate search; per-generation best, mean and min fitness.
pub fn surrogate_json(
    seed: u64,
    preset: &str,
    population: usize,
    generations: usize,
    noise: f64,
) -> Result<String, String> {
    let mut cfg = surrogate_config(seed, population, generations, noise);
    cfg.preset = preset.parse::<Preset>().map_err(|e| e.to_string())?;
    let r = run_surrogate_search(&cfg, false).map_err(|e| e.to_string())?;
    let history: Vec<Value> = r
        .outcome
        .history
        .iter()
        .map(|h| {
            json!({
                "generation": h.generation,
                "best": h.best_fitness,
                "mean": h.mean_fitness,
                "min": h.min_fitness,
                "unique": h.unique_genotypes,
            })
        })
        .collect();
    Ok(json!({
        "preset": cfg.preset.name(),
        "history": history,
        "final_best": r.final_best(),
        "clean_fitness": r.clean_fitness,
        "best_genotype": r.outcome.best_genotype.fingerprint(),
        "target": r.landscape.hidden_target.fingerprint(),
    })
    .to_string())
}

/// Two presets over seeds `0..seeds` with the one-sided rank-sum test.
pub fn compare_json(
    a: &str,
    b: &str,
    seeds: u64,
    population: usize,
    generations: usize,
    noise: f64,
) -> Result<String, String> {
    let cfg = surrogate_config(0, population, generations, noise);
    let a = a.parse::<Preset>().map_err(|e| e.to_string())?;
    let b = b.parse::<Preset>().map_err(|e| e.to_string())?;
    let list: Vec<u64> = (0..seeds).collect();
    let c = compare_presets(&cfg, a, b, &list).map_err(|e| e.to_string())?;
    serde_json::to_string(&c).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn explore(seed: u32, k: f64) -> Result<String, JsError> {
    explore_json(seed.into(), k).map_err(fail)
}

#[wasm_bindgen]
pub fn surrogate_search(
    seed: u32,
    preset: &str,
    population: usize,
    generations: usize,
    noise: f64,
) -> Result<String, JsError> {
    surrogate_json(seed.into(), preset, population, generations, noise).map_err(fail)
}

#[wasm_bindgen]
pub fn compare(
    a: &str,
    b: &str,
    seeds: u32,
    population: usize,
    generations: usize,
    noise: f64,
) -> Result<String, JsError> {
    compare_json(a, b, seeds.into(), population, generations, noise).map_err(fail)
}
