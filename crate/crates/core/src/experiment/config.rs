use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::idx::load_idx_dataset;
use super::synthetic::{generate_synthetic_dataset, SyntheticDatasetSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::EvalPlan;
use crate::evolution::{EvolutionConfig, Preset};
use crate::search_space::{CellTopology, OpKind, OperationSpace, SearchSpace};
use crate::supernet::SupernetConfig;
use crate::trainer::{OptimizerConfig, TrainPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpaceConfig {
    pub inputs: usize,
    pub intermediates: usize,
    pub ops: Vec<OpKind>,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        Self {
            inputs: 2,
            intermediates: 4,
            ops: OperationSpace::darts().ops().to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupernetSection {
    pub channels: usize,
    pub num_cells: usize,
    pub stem_multiplier: usize,
}

impl Default for SupernetSection {
    fn default() -> Self {
        Self {
            channels: 8,
            num_cells: 4,
            stem_multiplier: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            batch_size: 16,
            grad_clip: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Synthetic,
    Idx,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub val_images: PathBuf,
    pub val_labels: PathBuf,
    /// Resize images to this square size.
    pub image_size: Option<usize>,
    /// Defaults to the largest training label plus one.
    pub num_classes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub synthetic: SyntheticDatasetSpec,
    pub idx: IdxConfig,
}

impl DataConfig {
    /// `(train, validation)` datasets.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self.kind {
            DataKind::Synthetic => generate_synthetic_dataset(&self.synthetic),
            DataKind::Idx => {
                let c = &self.idx;
                let train = load_idx_dataset(&c.train_images, &c.train_labels, c.image_size, c.num_classes)?;
                let classes = Some(c.num_classes.unwrap_or(train.num_classes()));
                let val = load_idx_dataset(&c.val_images, &c.val_labels, c.image_size, classes)?;
                if val.image_shape() != train.image_shape() {
                    return Err(Error::Shape(format!(
                        "validation images {:?} differ from training images {:?}",
                        val.image_shape(),
                        train.image_shape()
                    )));
                }
                Ok((train, val))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub noise_std: f64,
    /// Seed of the hidden target; defaults to the run seed.
    pub target_seed: Option<u64>,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            noise_std: 0.05,
            target_seed: None,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/evnas")
}

/// A complete, reproducible run description. Every section except `seed`
/// has defaults; the preset overrides the evolution mode flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub preset: Preset,
    /// Write measured seconds into `generations.csv` (breaks bitwise reproducibility).
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub search_space: SearchSpaceConfig,
    #[serde(default)]
    pub supernet: SupernetSection,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub eval: EvalPlan,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            output_dir: default_output_dir(),
            preset: Preset::default(),
            record_wall_time: false,
            search_space: SearchSpaceConfig::default(),
            supernet: SupernetSection::default(),
            evolution: EvolutionConfig::default(),
            train: TrainSection::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalPlan::default(),
            data: DataConfig::default(),
            surrogate: SurrogateConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, column) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {column}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.search_space()?;
        self.evolution_config().validate()?;
        if self.train.batch_size == 0 || self.eval.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if let Some(c) = self.train.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("gradient clip must be positive, got {c}")));
            }
        }
        if !(self.surrogate.noise_std >= 0.0) {
            return Err(Error::Config("surrogate noise std must be non-negative".into()));
        }
        Ok(())
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        let s = &self.search_space;
        Ok(SearchSpace::new(
            CellTopology::new(s.inputs, s.intermediates)?,
            OperationSpace::new(s.ops.clone())?,
        ))
    }

    /// Evolution settings with the preset's mode flags applied.
    pub fn evolution_config(&self) -> EvolutionConfig {
        self.evolution.clone().with_preset(self.preset)
    }

    pub fn train_plan(&self) -> TrainPlan {
        TrainPlan {
            batches_per_generation: self.evolution.batches_per_generation,
            batch_size: self.train.batch_size,
            grad_clip: self.train.grad_clip,
        }
    }

    /// Supernet sizes for images shaped like `data`.
    pub fn supernet_config(&self, data: &Dataset) -> Result<SupernetConfig> {
        let [c, h, w] = data.image_shape();
        if h != w {
            return Err(Error::Shape(format!("supernet needs square images, got {h}x{w}")));
        }
        let space = self.search_space()?;
        Ok(SupernetConfig {
            in_channels: c,
            image_size: h,
            num_classes: data.num_classes(),
            channels: self.supernet.channels,
            num_cells: self.supernet.num_cells,
            stem_multiplier: self.supernet.stem_multiplier,
            cell_inputs: space.topology.num_inputs(),
            cell_intermediates: space.topology.num_intermediates(),
            ops: space.ops,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory() {
        let err = ExperimentConfig::from_toml_str("preset = \"rand\"\n").unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn dotted_keys_and_sections() {
        let text = r#"
seed = 7
preset = "rand"
output_dir = "out/x"
evolution.population_size = 12
evolution.tournament_size = 4
train.grad_clip = 5.0

[supernet]
channels = 6

[data.synthetic]
noise_std = 0.5
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.evolution.population_size, 12);
        assert_eq!(cfg.supernet.channels, 6);
        assert_eq!(cfg.supernet.num_cells, 4);
        assert_eq!(cfg.train.grad_clip, Some(5.0));
        assert_eq!(cfg.data.synthetic.noise_std, 0.5);
        let evo = cfg.evolution_config();
        assert!(evo.random_mode && !evo.enable_crossover && !evo.enable_mutation);
    }

    #[test]
    fn errors_carry_position() {
        let err = ExperimentConfig::from_toml_str("seed = 1\n\nevolution.tournament = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = ExperimentConfig::from_toml_str("seed = 1\npreset = \"best\"\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = ExperimentConfig::from_toml_str("seed = 1\nevolution.tournament_size = 99\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = ExperimentConfig::from_toml_str("seed = 1\nsearch_space.ops = [\"skip_connect\"]\n").unwrap_err();
        assert!(matches!(err, Error::OperationSpace(_)), "{err}");
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = ExperimentConfig::with_seed(3);
        cfg.train.grad_clip = Some(5.0);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(ExperimentConfig::with_seed(4).hash(), cfg.hash());
    }

    #[test]
    fn supernet_sizes_follow_data() {
        let cfg = ExperimentConfig::with_seed(0);
        let (train, _) = cfg.data.load().unwrap();
        let net = cfg.supernet_config(&train).unwrap();
        assert_eq!((net.in_channels, net.image_size, net.num_classes), (1, 16, 4));
        assert_eq!(net.channels, 8);
        assert_eq!(net.num_cells, 4);
    }
}
