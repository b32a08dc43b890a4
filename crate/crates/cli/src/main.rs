use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use evnas::evolution::Preset;
use evnas::experiment::{
    compare_presets, evaluate_checkpoint, run_experiment, run_multi_seed, run_surrogate_search, ExperimentConfig,
};
use evnas::search_space::Genotype;

#[derive(Parser)]
#[command(name = "evnas", version, about = "Evolutionary architecture search over a one-shot supernet")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Mode preset: full, rand, nd, ndf, ndt, mut or cross.
    #[arg(long)]
    preset: Option<Preset>,
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.output {
            cfg.output_dir = o.clone();
        }
        if let Some(p) = self.preset {
            cfg.preset = p;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Supernet search; writes CSV logs, the best genotype, a checkpoint and a manifest.
    Search(Overrides),
    /// Search against a hidden-target surrogate landscape (no training).
    SurrogateSearch {
        #[command(flatten)]
        run: Overrides,
        /// Compare the configured preset against this one over several seeds.
        #[arg(long)]
        compare: Option<Preset>,
        /// Number of seeds for the comparison, starting at the configured seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Validation accuracy of a checkpoint under a genotype.
    Eval {
        /// Run configuration supplying the dataset and decode k.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        genotype: PathBuf,
    },
    /// Render a genotype JSON file as Graphviz DOT.
    Export {
        #[arg(long)]
        genotype: PathBuf,
        /// Destination file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Independent searches over several seeds.
    MultiSeed {
        #[command(flatten)]
        run: Overrides,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3])]
        seeds: Vec<u64>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Search(o) => {
            let cfg = o.load()?;
            let r = run_experiment(&cfg)?;
            println!(
                "best fitness {:.4} ({}) in {:.1}s; artifacts in {}",
                r.outcome.best.fitness.unwrap_or(f64::NAN),
                r.outcome.best_genotype.fingerprint(),
                r.wall_seconds,
                r.dir.display()
            );
        }
        Command::SurrogateSearch { run, compare, seeds } => {
            let cfg = run.load()?;
            match compare {
                None => {
                    let r = run_surrogate_search(&cfg, true)?;
                    println!(
                        "best fitness {:.4} (noise-free {:.4}); artifacts in {}",
                        r.final_best(),
                        r.clean_fitness,
                        cfg.output_dir.display()
                    );
                }
                Some(other) => {
                    let list: Vec<u64> = (cfg.seed..cfg.seed + seeds).collect();
                    let c = compare_presets(&cfg, cfg.preset, other, &list)?;
                    fs::create_dir_all(&cfg.output_dir)
                        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
                    let path = cfg.output_dir.join("summary.json");
                    fs::write(&path, serde_json::to_string_pretty(&c)? + "\n")
                        .with_context(|| format!("writing {}", path.display()))?;
                    println!(
                        "{} mean {:.4} vs {} mean {:.4}; rank-sum p = {:.3e}; summary in {}",
                        c.a.preset,
                        c.a.mean_final_best,
                        c.b.preset,
                        c.b.mean_final_best,
                        c.rank_sum.p_value,
                        path.display()
                    );
                }
            }
        }
        Command::Eval {
            config,
            checkpoint,
            genotype,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = evaluate_checkpoint(&checkpoint, &genotype, &cfg.data, cfg.evolution.decode_k, &cfg.eval)?;
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Export { genotype, output } => {
            let text = fs::read_to_string(&genotype).with_context(|| format!("reading {}", genotype.display()))?;
            let dot = Genotype::from_json(&text)?.to_dot();
            match output {
                Some(p) => fs::write(&p, dot).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{dot}"),
            }
        }
        Command::MultiSeed { run, seeds } => {
            let cfg = run.load()?;
            for r in run_multi_seed(&cfg, &seeds)? {
                println!("seed {}: best fitness {:.4} ({})", r.seed, r.best_fitness, r.genotype_hash);
            }
        }
    }
    Ok(())
}
