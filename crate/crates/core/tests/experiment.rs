use std::fs;
use std::path::Path;
use std::time::Instant;

use evnas::data::BatchStream;
use evnas::evaluation::{evaluate_params, EvalPlan};
use evnas::evolution::Preset;
use evnas::experiment::idx::encode_idx;
use evnas::experiment::*;
use evnas::search_space::{CellTopology, Genotype, OperationSpace, SearchSpace};
use evnas::supernet::{Supernet, SupernetConfig};
use evnas::trainer::{train_round_robin, OptimizerConfig, OptimizerState, TrainPlan};
use evnas::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.output_dir = dir.to_path_buf();
    cfg.evolution.population_size = 4;
    cfg.evolution.tournament_size = 2;
    cfg.evolution.generations = 3;
    cfg.evolution.batches_per_generation = 4;
    cfg.train.batch_size = 4;
    cfg.train.grad_clip = Some(5.0);
    cfg.supernet.channels = 4;
    cfg.supernet.num_cells = 2;
    cfg.data.synthetic = SyntheticDatasetSpec {
        num_classes: 3,
        train_per_class: 8,
        val_per_class: 8,
        image_size: 8,
        frequency: 2.0,
        noise_std: 0.5,
        seed: 1,
    };
    cfg
}

#[test]
fn default_synthetic_task_is_learnable() {
    let spec = SyntheticDatasetSpec::default();
    let (train, val) = generate_synthetic_dataset(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Supernet::new(
        SupernetConfig {
            num_cells: 2,
            ..SupernetConfig::default()
        },
        &mut rng,
    )
    .unwrap();
    let space = SearchSpace::default();
    let arch = space.decode(&space.random_arch(&mut rng), 1.0).unwrap().into_arch_param();
    let steps = 500;
    let plan = TrainPlan {
        batches_per_generation: steps,
        batch_size: 16,
        grad_clip: None,
    };
    let mut opt = OptimizerState::new(&OptimizerConfig::default(), steps, net.params());
    let mut stream = BatchStream::new(&train, 16, 0).unwrap();
    train_round_robin(&mut net, std::slice::from_ref(&arch), &plan, &mut opt, &mut stream, 1, &mut |_| {}).unwrap();
    let r = evaluate_params(&net, &arch, &val, &EvalPlan::default()).unwrap();
    assert!(r.fitness > 0.6, "validation accuracy {}", r.fitness);
}

#[test]
fn idx_files_load_through_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let images: Vec<Vec<u8>> = (0..6u8).map(|i| vec![i * 40; 28 * 28]).collect();
    let (img, lab) = encode_idx(&images, 28, &[0, 1, 2, 0, 1, 2]);
    for name in ["train", "val"] {
        fs::write(tmp.path().join(format!("{name}-images")), &img).unwrap();
        fs::write(tmp.path().join(format!("{name}-labels")), &lab).unwrap();
    }
    let text = format!(
        "seed = 1\ndata.kind = \"idx\"\ndata.idx.train_images = \"{0}/train-images\"\ndata.idx.train_labels = \"{0}/train-labels\"\ndata.idx.val_images = \"{0}/val-images\"\ndata.idx.val_labels = \"{0}/val-labels\"\ndata.idx.image_size = 14\n",
        tmp.path().display()
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let (train, val) = cfg.data.load().unwrap();
    assert_eq!(train.len(), 6);
    assert_eq!(val.image_shape(), [1, 14, 14]);
    assert_eq!(train.num_classes(), 3);
    assert!((train.image(5)[0] - 200.0 / 255.0).abs() < 1e-6);

    fs::write(tmp.path().join("val-labels"), &img).unwrap();
    let err = cfg.data.load().unwrap_err();
    assert!(err.to_string().contains("magic mismatch"), "{err}");
}

#[test]
fn search_writes_reproducible_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("nested/a");
    let b = tmp.path().join("b");
    let ra = run_experiment(&tiny(3, &a)).unwrap();
    run_experiment(&tiny(3, &b)).unwrap();
    for f in [CONFIG_FILE, GENERATIONS_CSV, TRAINING_CSV, GENOTYPE_JSON, GENOTYPE_DOT, CHECKPOINT, MANIFEST] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    for f in [GENOTYPE_JSON, GENERATIONS_CSV, TRAINING_CSV, CHECKPOINT] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let csv = fs::read_to_string(a.join(GENERATIONS_CSV)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "generation,best_fitness,mean_fitness,min_fitness,elite_genotype_hash,wall_seconds,unique_genotypes,evaluations"
    );
    assert_eq!(lines.count(), 3);
    let training = fs::read_to_string(a.join(TRAINING_CSV)).unwrap();
    assert!(training.starts_with("step,generation,individual_index,loss,lr\n"));
    assert_eq!(training.lines().count(), 13);
    assert!(fs::read(a.join(CHECKPOINT)).unwrap().starts_with(b"EVNS"));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["evaluations"], 12);
    assert_eq!(manifest["config_hash"], tiny(3, &a).hash());
    let saved = ExperimentConfig::load(&a.join(CONFIG_FILE)).unwrap();
    assert_eq!(saved, tiny(3, &a));

    let g = Genotype::from_json(&fs::read_to_string(a.join(GENOTYPE_JSON)).unwrap()).unwrap();
    assert_eq!(g, ra.outcome.best_genotype);
    assert_eq!(fs::read_to_string(a.join(GENOTYPE_DOT)).unwrap(), g.to_dot());

    let cfg = tiny(3, &a);
    let report = evaluate_checkpoint(&a.join(CHECKPOINT), &a.join(GENOTYPE_JSON), &cfg.data, 1.0, &cfg.eval).unwrap();
    let logged = ra.outcome.history.last().unwrap().best_fitness;
    assert!((report.fitness - logged).abs() < 1e-6, "{} vs {logged}", report.fitness);
}

#[test]
fn eval_rejects_bad_genotypes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny(4, tmp.path());
    run_experiment(&cfg).unwrap();
    let ckpt = tmp.path().join(CHECKPOINT);

    let unknown = tmp.path().join("unknown.json");
    let text = fs::read_to_string(tmp.path().join(GENOTYPE_JSON)).unwrap();
    let first_op = ["sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5", "max_pool_3x3", "avg_pool_3x3", "skip_connect"]
        .into_iter()
        .find(|op| text.contains(op))
        .unwrap();
    fs::write(&unknown, text.replacen(first_op, "conv_7x7", 1)).unwrap();
    let err = evaluate_checkpoint(&ckpt, &unknown, &cfg.data, 1.0, &cfg.eval).unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err}");

    let small = SearchSpace::new(CellTopology::new(2, 3).unwrap(), OperationSpace::darts());
    let g = small.derive(&small.random_arch(&mut ChaCha8Rng::seed_from_u64(0))).unwrap();
    let mismatched = tmp.path().join("small.json");
    fs::write(&mismatched, g.to_json()).unwrap();
    let err = evaluate_checkpoint(&ckpt, &mismatched, &cfg.data, 1.0, &cfg.eval).unwrap_err();
    assert!(matches!(err, Error::Shape(_)), "{err}");
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain-file");
    fs::write(&file, "x").unwrap();
    let err = run_experiment(&tiny(1, &file.join("run"))).unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn preset_rand_disables_operators() {
    let mut cfg = ExperimentConfig::with_seed(0);
    cfg.preset = Preset::Rand;
    let evo = cfg.evolution_config();
    assert!(evo.random_mode && !evo.enable_crossover && !evo.enable_mutation);
}

#[test]
fn surrogate_search_artifacts_and_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::with_seed(5);
    cfg.output_dir = tmp.path().to_path_buf();
    cfg.surrogate.noise_std = 0.0;
    let start = Instant::now();
    let r = run_surrogate_search(&cfg, true).unwrap();
    assert!(start.elapsed().as_secs_f64() < 10.0);
    for f in [GENERATIONS_CSV, GENOTYPE_JSON, GENOTYPE_DOT, HIDDEN_TARGET_JSON, MANIFEST] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let target = Genotype::from_json(&fs::read_to_string(tmp.path().join(HIDDEN_TARGET_JSON)).unwrap()).unwrap();
    assert_eq!(target, r.landscape.hidden_target);
    assert_eq!(r.final_best(), r.clean_fitness);
    let mut rdr = csv::Reader::from_path(tmp.path().join(GENERATIONS_CSV)).unwrap();
    let best: Vec<f64> = rdr.records().map(|rec| rec.unwrap()[1].parse().unwrap()).collect();
    assert_eq!(best.len(), 50);
    assert!(best.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn preset_comparison_reports_both_samples() {
    let mut cfg = ExperimentConfig::with_seed(0);
    cfg.evolution.generations = 20;
    let seeds: Vec<u64> = (0..8).collect();
    let c = compare_presets(&cfg, Preset::Full, Preset::Rand, &seeds).unwrap();
    assert_eq!(c.a.final_best.len(), 8);
    assert_eq!(c.b.preset, "rand");
    assert!(c.a.mean_final_best > c.b.mean_final_best);
    assert!(c.rank_sum.p_value < 0.05, "{:?}", c.rank_sum);
    let json = serde_json::to_value(&c).unwrap();
    assert!(json["rank_sum"]["p_value"].is_number());
}

#[test]
fn multi_seed_writes_one_directory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny(0, tmp.path());
    cfg.evolution.generations = 1;
    let results = run_multi_seed(&cfg, &[4, 5]).unwrap();
    assert_eq!(results.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![4, 5]);
    for r in &results {
        assert!(r.dir.join(GENOTYPE_JSON).is_file());
    }
    let summary = fs::read_to_string(tmp.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
}
