//! Configuration, datasets, persistence and the runnable search harness.

mod config;
mod harness;
pub mod idx;
pub mod stats;
mod synthetic;

pub use config::{DataConfig, DataKind, ExperimentConfig, IdxConfig, SearchSpaceConfig, SupernetSection, SurrogateConfig, TrainSection};
pub use harness::{
    compare_presets, evaluate_checkpoint, run_experiment, run_multi_seed, run_surrogate_search, write_generations_csv,
    Comparison, PresetSamples, RunReport, SeedResult, SurrogateReport, CHECKPOINT, CONFIG_FILE, GENERATIONS_CSV,
    GENOTYPE_DOT, GENOTYPE_JSON, HIDDEN_TARGET_JSON, MANIFEST, TRAINING_CSV,
};
pub use idx::load_idx_dataset;
pub use synthetic::{generate_synthetic_dataset, SyntheticDatasetSpec};
