//! Command-line harness: dataset generation, training, few-shot adaptation,
//! sweeps, and method comparison, with every artifact written under an
//! output directory and described by a run manifest.
//!
//! All randomness flows from one `--seed` per invocation; rerunning a command
//! with identical arguments and a clean output directory reproduces its CSV
//! outputs byte for byte.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use metaspoof_core::backbone::{load_checkpoint, save_checkpoint, BackboneConfig};
use metaspoof_core::data::{
    generate_synthetic, load_dataset, save_dataset, write_gen_metadata, GenConfig, TaskSpec,
};
use metaspoof_core::harness::{
    compare_methods, comparison_csv, comparison_table, evaluate_support, run_shot_sweep,
    run_steps_sweep, support_seed, train_supervised_baseline, write_manifest, BaselineConfig,
    CompareConfig, Method, SweepConfig, SweepResult,
};
use metaspoof_core::metrics::{save_scores, summarize_repeats};
use metaspoof_core::optim::CyclicLrConfig;
use metaspoof_core::protomaml::{train_protomaml, ProtoMamlConfig};
use metaspoof_core::protonet::{train_log_csv, train_protonet, ProtoTrainConfig, TrainOutcome};

use config::{ConfigFile, Settings};

const USAGE: &str = "\
metaspoof — few-shot adaptation of a bonafide/spoof detector

USAGE:
    metaspoof <COMMAND> [FLAGS]

COMMANDS:
    gen-data     write synthetic train/eval_seen/eval_unseen embedding CSVs
    train        train a model (--method protonet|protomaml|baseline)
    adapt-eval   adapt at one (k, steps) setting, 9 repeats, report EER
    sweep-shots  EER versus support size k
    sweep-steps  EER versus inner adaptation steps (protomaml only)
    compare      zero-shot baseline versus adapted meta-learners

FLAGS:
    --config PATH      key = value config file with a [section] per command
    --seed N           master seed (default 0)
    --out DIR          output directory (created if absent)
    --dataset PATH     dataset CSV, or a gen-data output directory
    --checkpoint PATH  model checkpoint (compare: directory of checkpoints)
    --method NAME      protonet | protomaml | baseline
    --k N              support size per class
    --steps N          inner adaptation steps
    --force            overwrite existing output files
";

/// Parsed command line.
struct Cli {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    method: Option<String>,
    k: Option<usize>,
    steps: Option<usize>,
    force: bool,
}

fn parse_args(args: &[String]) -> Result<Cli> {
    let Some(command) = args.first() else {
        bail!("missing command\n\n{USAGE}");
    };
    let mut cli = Cli {
        command: command.clone(),
        config: None,
        seed: None,
        out: None,
        dataset: None,
        checkpoint: None,
        method: None,
        k: None,
        steps: None,
        force: false,
    };
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String> {
            it.next()
                .cloned()
                .with_context(|| format!("flag {name} expects a value"))
        };
        match flag.as_str() {
            "--config" => cli.config = Some(PathBuf::from(value("--config")?)),
            "--seed" => cli.seed = Some(value("--seed")?.parse().context("--seed expects an integer")?),
            "--out" => cli.out = Some(PathBuf::from(value("--out")?)),
            "--dataset" => cli.dataset = Some(PathBuf::from(value("--dataset")?)),
            "--checkpoint" => cli.checkpoint = Some(PathBuf::from(value("--checkpoint")?)),
            "--method" => cli.method = Some(value("--method")?),
            "--k" => cli.k = Some(value("--k")?.parse().context("--k expects an integer")?),
            "--steps" => cli.steps = Some(value("--steps")?.parse().context("--steps expects an integer")?),
            "--force" => cli.force = true,
            other => bail!("unknown flag {other:?}\n\n{USAGE}"),
        }
    }
    Ok(cli)
}

/// Entry point used by the binary and by tests.
pub fn run(args: &[String]) -> Result<()> {
    let cli = parse_args(args)?;
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command.as_str() {
        "gen-data" => cmd_gen_data(&cli, &config),
        "train" => cmd_train(&cli, &config),
        "adapt-eval" => cmd_adapt_eval(&cli, &config),
        "sweep-shots" => cmd_sweep_shots(&cli, &config),
        "sweep-steps" => cmd_sweep_steps(&cli, &config),
        "compare" => cmd_compare(&cli, &config),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => bail!("unknown command {other:?}\n\n{USAGE}"),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .context("--out DIR is required for this command")?;
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

/// Refuses to clobber prior outputs unless --force was given.
fn check_outputs(dir: &Path, names: &[&str], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            bail!(
                "output file {} already exists; pass --force to overwrite",
                path.display()
            );
        }
    }
    Ok(())
}

fn common_overrides(cli: &Cli) -> Vec<(&'static str, String)> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("seed", seed.to_string()));
    }
    if let Some(method) = &cli.method {
        overrides.push(("method", method.clone()));
    }
    if let Some(k) = cli.k {
        overrides.push(("k", k.to_string()));
    }
    if let Some(steps) = cli.steps {
        overrides.push(("steps", steps.to_string()));
    }
    overrides
}

fn require_dataset(cli: &Cli) -> Result<PathBuf> {
    let path = cli
        .dataset
        .clone()
        .context("--dataset PATH is required for this command")?;
    if !path.exists() {
        bail!("dataset path {} does not exist", path.display());
    }
    Ok(path)
}

fn require_checkpoint(cli: &Cli) -> Result<PathBuf> {
    let path = cli
        .checkpoint
        .clone()
        .context("--checkpoint PATH is required for this command")?;
    if !path.exists() {
        bail!("checkpoint path {} does not exist", path.display());
    }
    Ok(path)
}

/// A dataset flag may point at a CSV or at a gen-data output directory; in
/// the directory case `name` selects the conventional file.
fn dataset_file(path: &Path, name: &str) -> Result<PathBuf> {
    let file = if path.is_dir() { path.join(name) } else { path.to_path_buf() };
    if !file.exists() {
        bail!("dataset file {} does not exist", file.display());
    }
    Ok(file)
}

fn manifest_base(cli: &Cli, settings: &Settings) -> BTreeMap<String, String> {
    let mut entries = settings.effective();
    entries.insert("command".into(), cli.command.clone());
    if let Some(p) = &cli.dataset {
        entries.insert("dataset".into(), p.display().to_string());
    }
    if let Some(p) = &cli.checkpoint {
        entries.insert("checkpoint".into(), p.display().to_string());
    }
    if let Some(p) = &cli.config {
        entries.insert("config".into(), p.display().to_string());
    }
    entries
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

const GEN_KEYS: &[&str] = &[
    "seed", "dim", "seen_attacks", "unseen_attacks", "train_per_class", "eval_per_class",
    "sigma", "separation", "delta", "channel_shift",
];

fn cmd_gen_data(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    let settings = Settings::new(
        "gen-data",
        config.section("gen-data"),
        common_overrides(cli),
        GEN_KEYS.to_vec(),
    )?;
    let defaults = GenConfig::default();
    let gen = GenConfig {
        dim: settings.get_usize("dim", defaults.dim)?,
        seen_attacks: settings.get_usize("seen_attacks", defaults.seen_attacks)?,
        unseen_attacks: settings.get_usize("unseen_attacks", defaults.unseen_attacks)?,
        train_per_class: settings.get_usize("train_per_class", defaults.train_per_class)?,
        eval_per_class: settings.get_usize("eval_per_class", defaults.eval_per_class)?,
        sigma: settings.get_f64("sigma", defaults.sigma)?,
        separation: settings.get_f64("separation", defaults.separation)?,
        delta: settings.get_f64("delta", defaults.delta)?,
        channel_shift: settings.get_f64("channel_shift", defaults.channel_shift)?,
    };
    let seed = settings.get_u64("seed", 0)?;
    let outputs = ["train.csv", "eval_seen.csv", "eval_unseen.csv", "metadata.txt", "manifest.txt"];
    check_outputs(&dir, &outputs, cli.force)?;

    let data = generate_synthetic(&gen, seed)?;
    save_dataset(&data.train, &dir.join("train.csv"))?;
    save_dataset(&data.eval_seen, &dir.join("eval_seen.csv"))?;
    save_dataset(&data.eval_unseen, &dir.join("eval_unseen.csv"))?;
    write_gen_metadata(&dir.join("metadata.txt"), &gen, seed, &data)?;
    write_manifest(&dir.join("manifest.txt"), &manifest_base(cli, &settings))?;
    println!(
        "wrote {} train, {} eval_seen, {} eval_unseen records to {}",
        data.train.len(),
        data.eval_seen.len(),
        data.eval_unseen.len(),
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

const TRAIN_KEYS: &[&str] = &[
    "seed", "method", "epochs", "episodes_per_epoch", "n_way", "k_shot", "query_per_class",
    "weight_decay", "base_lr", "max_lr", "step_size_epochs", "val_bank_size", "hidden_dims",
    "output_dim", "inner_lr", "train_inner_steps", "tasks_per_outer", "batch_size", "patience",
    "max_epochs", "lr", "val_dataset",
];

fn resolve_train_val(cli: &Cli, settings: &Settings) -> Result<(PathBuf, PathBuf)> {
    let dataset = require_dataset(cli)?;
    let train = dataset_file(&dataset, "train.csv")?;
    let val = match settings.get_opt_string("val_dataset") {
        Some(p) => PathBuf::from(p),
        None if dataset.is_dir() => dataset.join("eval_seen.csv"),
        // A bare train CSV: look for the conventional sibling.
        None => train.with_file_name("eval_seen.csv"),
    };
    if !val.exists() {
        bail!(
            "validation dataset {} does not exist; set val_dataset in [train]",
            val.display()
        );
    }
    Ok((train, val))
}

fn backbone_from(settings: &Settings) -> Result<BackboneConfig> {
    Ok(BackboneConfig {
        input_dim: 0, // overwritten from the dataset by every trainer
        hidden_dims: settings.get_usize_list("hidden_dims", &[256, 128])?,
        output_dim: settings.get_usize("output_dim", 64)?,
        seed: 0,
    })
}

fn task_spec_from(settings: &Settings) -> Result<TaskSpec> {
    Ok(TaskSpec {
        n_way: settings.get_usize("n_way", 3)?,
        k_shot: settings.get_usize("k_shot", 5)?,
        query_per_class: settings.get_usize("query_per_class", 5)?,
    })
}

fn schedule_from(settings: &Settings) -> Result<CyclicLrConfig> {
    Ok(CyclicLrConfig {
        base_lr: settings.get_f64("base_lr", 1e-6)?,
        max_lr: settings.get_f64("max_lr", 1e-3)?,
        step_size_epochs: settings.get_usize("step_size_epochs", 8)?,
    })
}

fn cmd_train(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    let settings = Settings::new(
        "train",
        config.section("train"),
        common_overrides(cli),
        TRAIN_KEYS.to_vec(),
    )?;
    let method = settings.get_string("method", "");
    if method.is_empty() {
        bail!("--method is required: protonet, protomaml, or baseline");
    }
    let (train_path, val_path) = resolve_train_val(cli, &settings)?;
    let train = load_dataset(&train_path)?;
    let val = load_dataset(&val_path)?;
    let seed = settings.get_u64("seed", 0)?;

    let ckpt_name = format!("{method}.ckpt");
    let log_name = format!("{method}_train_log.csv");
    check_outputs(&dir, &[&ckpt_name, &log_name, "manifest.txt"], cli.force)?;

    let (outcome, val_column): (TrainOutcome, &str) = match method.as_str() {
        "protonet" => {
            let cfg = ProtoTrainConfig {
                epochs: settings.get_usize("epochs", 200)?,
                episodes_per_epoch: settings.get_usize("episodes_per_epoch", 100)?,
                task_spec: task_spec_from(&settings)?,
                weight_decay: settings.get_f64("weight_decay", 0.01)?,
                schedule: schedule_from(&settings)?,
                val_bank_size: settings.get_usize("val_bank_size", 200)?,
                backbone: backbone_from(&settings)?,
                seed,
            };
            (train_protonet(&train, &val, &cfg)?, "val_acc")
        }
        "protomaml" => {
            let cfg = ProtoMamlConfig {
                inner_lr: settings.get_f64("inner_lr", 0.1)?,
                train_inner_steps: settings.get_usize("train_inner_steps", 1)?,
                adapt_inner_steps: 25,
                tasks_per_outer: settings.get_usize("tasks_per_outer", 4)?,
                epochs: settings.get_usize("epochs", 200)?,
                episodes_per_epoch: settings.get_usize("episodes_per_epoch", 100)?,
                task_spec: task_spec_from(&settings)?,
                weight_decay: settings.get_f64("weight_decay", 0.01)?,
                schedule: schedule_from(&settings)?,
                val_bank_size: settings.get_usize("val_bank_size", 200)?,
                backbone: backbone_from(&settings)?,
                seed,
            };
            (train_protomaml(&train, &val, &cfg)?, "val_acc")
        }
        "baseline" => {
            let cfg = BaselineConfig {
                max_epochs: settings.get_usize("max_epochs", 200)?,
                batch_size: settings.get_usize("batch_size", 64)?,
                lr: settings.get_f64("lr", 1e-6)?,
                patience: settings.get_usize("patience", 15)?,
                backbone: backbone_from(&settings)?,
                seed,
            };
            (train_supervised_baseline(&train, &val, &cfg)?, "val_eer")
        }
        other => bail!("unknown method {other:?}: expected protonet, protomaml, or baseline"),
    };

    save_checkpoint(&outcome.params, &dir.join(&ckpt_name))?;
    fs::write(dir.join(&log_name), train_log_csv(&outcome.log, val_column))?;
    let mut manifest = manifest_base(cli, &settings);
    manifest.insert("train_dataset".into(), train_path.display().to_string());
    manifest.insert("val_dataset_path".into(), val_path.display().to_string());
    manifest.insert(
        "trainable_params".into(),
        outcome.params.param_count().to_string(),
    );
    write_manifest(&dir.join("manifest.txt"), &manifest)?;
    println!(
        "trained {method} ({} params): best {val_column} {:.6} at epoch {} of {}; checkpoint {}",
        outcome.params.param_count(),
        outcome.best_val,
        outcome.best_epoch,
        outcome.log.len(),
        dir.join(&ckpt_name).display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// adapt-eval
// ---------------------------------------------------------------------------

const ADAPT_KEYS: &[&str] = &["seed", "method", "k", "steps", "repeats", "inner_lr"];

fn parse_method(settings: &Settings) -> Result<Method> {
    let name = settings.get_string("method", "");
    if name.is_empty() {
        bail!("--method is required: protonet or protomaml");
    }
    Method::parse(&name).with_context(|| format!("unknown method {name:?}: expected protonet or protomaml"))
}

fn cmd_adapt_eval(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    let settings = Settings::new(
        "adapt-eval",
        config.section("adapt-eval"),
        common_overrides(cli),
        ADAPT_KEYS.to_vec(),
    )?;
    let method = parse_method(&settings)?;
    let k = settings.get_usize("k", 96)?;
    let steps = settings.get_usize("steps", 25)?;
    let repeats = settings.get_usize("repeats", 9)?;
    let inner_lr = settings.get_f64("inner_lr", 0.1)?;
    let seed = settings.get_u64("seed", 0)?;

    let eval_path = dataset_file(&require_dataset(cli)?, "eval_unseen.csv")?;
    let eval = load_dataset(&eval_path)?;
    let params = load_checkpoint(&require_checkpoint(cli)?)?;

    let (bona, spoof) = eval.binary_counts();
    if bona < k + 1 || spoof < k + 1 {
        bail!(
            "eval set has {bona} bonafide / {spoof} spoof records; k={k} leaves no query remainder"
        );
    }

    let mut outputs: Vec<String> = vec!["eers.csv".into(), "manifest.txt".into()];
    outputs.extend((0..repeats).map(|r| format!("scores_repeat_{r}.csv")));
    let output_refs: Vec<&str> = outputs.iter().map(|s| s.as_str()).collect();
    check_outputs(&dir, &output_refs, cli.force)?;

    let mut eers = Vec::with_capacity(repeats);
    let mut csv = String::from("repeat,eer,support_seed\n");
    for repeat in 0..repeats {
        let job_seed = support_seed(seed, k, repeat);
        let (eer, trials) = evaluate_support(&params, &eval, method, k, steps, inner_lr, job_seed)?;
        save_scores(&trials, &dir.join(format!("scores_repeat_{repeat}.csv")))?;
        csv.push_str(&format!("{repeat},{eer},{job_seed}\n"));
        println!("repeat {repeat}: EER {eer:.6}");
        eers.push(eer);
    }
    let (mean, std, n) = summarize_repeats(&eers)?;
    println!("{method} k={k} steps={steps}: EER {mean:.6} ± {std:.6} over {n} repeats");
    fs::write(dir.join("eers.csv"), csv)?;
    write_manifest(&dir.join("manifest.txt"), &manifest_base(cli, &settings))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

const SWEEP_SHOTS_KEYS: &[&str] = &["seed", "method", "shots", "repeats", "steps", "inner_lr"];
const SWEEP_STEPS_KEYS: &[&str] = &["seed", "method", "k", "step_values", "repeats", "inner_lr"];

fn write_sweep(dir: &Path, prefix: &str, result: &SweepResult) -> Result<()> {
    fs::write(dir.join(format!("{prefix}_detail.csv")), result.detail_csv())?;
    fs::write(dir.join(format!("{prefix}_summary.csv")), result.summary_csv())?;
    Ok(())
}

fn cmd_sweep_shots(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    let settings = Settings::new(
        "sweep-shots",
        config.section("sweep-shots"),
        common_overrides(cli),
        SWEEP_SHOTS_KEYS.to_vec(),
    )?;
    let method = parse_method(&settings)?;
    let defaults = SweepConfig::default_for(method, 0);
    let sweep = SweepConfig {
        shots: settings.get_usize_list("shots", &defaults.shots)?,
        repeats: settings.get_usize("repeats", defaults.repeats)?,
        adapt_steps: settings.get_usize("steps", defaults.adapt_steps)?,
        inner_lr: settings.get_f64("inner_lr", defaults.inner_lr)?,
        method,
        seed: settings.get_u64("seed", 0)?,
    };
    let eval_path = dataset_file(&require_dataset(cli)?, "eval_unseen.csv")?;
    let eval = load_dataset(&eval_path)?;
    let params = load_checkpoint(&require_checkpoint(cli)?)?;

    check_outputs(&dir, &["shots_detail.csv", "shots_summary.csv", "manifest.txt"], cli.force)?;
    let result = run_shot_sweep(&params, &eval, &sweep)?;
    write_sweep(&dir, "shots", &result)?;
    write_manifest(&dir.join("manifest.txt"), &manifest_base(cli, &settings))?;
    for s in &result.summaries {
        println!("k={}: EER {:.6} ± {:.6}", s.key, s.mean_eer, s.std_eer);
    }
    Ok(())
}

fn cmd_sweep_steps(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    // A bare --steps N narrows the sweep to that single step count.
    let overrides = common_overrides(cli)
        .into_iter()
        .map(|(key, value)| if key == "steps" { ("step_values", value) } else { (key, value) })
        .collect();
    let settings = Settings::new(
        "sweep-steps",
        config.section("sweep-steps"),
        overrides,
        SWEEP_STEPS_KEYS.to_vec(),
    )?;
    let method = parse_method(&settings)?;
    let sweep = SweepConfig {
        shots: vec![1],
        repeats: settings.get_usize("repeats", 9)?,
        adapt_steps: 0,
        inner_lr: settings.get_f64("inner_lr", 0.1)?,
        method,
        seed: settings.get_u64("seed", 0)?,
    };
    let k = settings.get_usize("k", 96)?;
    let step_values = settings.get_usize_list("step_values", &[0, 5, 25, 100, 200])?;
    let eval_path = dataset_file(&require_dataset(cli)?, "eval_unseen.csv")?;
    let eval = load_dataset(&eval_path)?;
    let params = load_checkpoint(&require_checkpoint(cli)?)?;

    check_outputs(&dir, &["steps_detail.csv", "steps_summary.csv", "manifest.txt"], cli.force)?;
    let result = run_steps_sweep(&params, &eval, k, &step_values, &sweep)?;
    write_sweep(&dir, "steps", &result)?;
    write_manifest(&dir.join("manifest.txt"), &manifest_base(cli, &settings))?;
    for s in &result.summaries {
        println!("steps={}: EER {:.6} ± {:.6}", s.key, s.mean_eer, s.std_eer);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

const COMPARE_KEYS: &[&str] = &[
    "seed", "k", "steps", "repeats", "inner_lr", "baseline_checkpoint", "protonet_checkpoint",
    "protomaml_checkpoint", "eval_seen", "eval_unseen",
];

fn cmd_compare(cli: &Cli, config: &ConfigFile) -> Result<()> {
    let dir = out_dir(cli)?;
    let settings = Settings::new(
        "compare",
        config.section("compare"),
        common_overrides(cli),
        COMPARE_KEYS.to_vec(),
    )?;
    let cfg = CompareConfig {
        k: settings.get_usize("k", 96)?,
        adapt_steps: settings.get_usize("steps", 25)?,
        inner_lr: settings.get_f64("inner_lr", 0.1)?,
        repeats: settings.get_usize("repeats", 9)?,
        seed: settings.get_u64("seed", 0)?,
    };

    let ckpt_dir = require_checkpoint(cli)?;
    let model_path = |key: &str, name: &str| -> Result<PathBuf> {
        let path = match settings.get_opt_string(key) {
            Some(p) => PathBuf::from(p),
            None => ckpt_dir.join(name),
        };
        if !path.exists() {
            bail!(
                "checkpoint {} does not exist; train it first or set {key} in [compare]",
                path.display()
            );
        }
        Ok(path)
    };
    let baseline = load_checkpoint(&model_path("baseline_checkpoint", "baseline.ckpt")?)?;
    let protonet = load_checkpoint(&model_path("protonet_checkpoint", "protonet.ckpt")?)?;
    let protomaml = load_checkpoint(&model_path("protomaml_checkpoint", "protomaml.ckpt")?)?;

    let data_dir = require_dataset(cli)?;
    let set_path = |key: &str, name: &str| -> Result<PathBuf> {
        match settings.get_opt_string(key) {
            Some(p) => Ok(PathBuf::from(p)),
            None => dataset_file(&data_dir, name),
        }
    };
    let eval_seen = load_dataset(&set_path("eval_seen", "eval_seen.csv")?)?;
    let eval_unseen = load_dataset(&set_path("eval_unseen", "eval_unseen.csv")?)?;
    let sets = vec![
        ("eval_seen".to_string(), &eval_seen),
        ("eval_unseen".to_string(), &eval_unseen),
    ];

    check_outputs(&dir, &["compare.csv", "compare.txt", "manifest.txt"], cli.force)?;
    let rows = compare_methods(&baseline, &protonet, &protomaml, &sets, &cfg)?;
    let table = comparison_table(&rows);
    fs::write(dir.join("compare.csv"), comparison_csv(&rows))?;
    fs::write(dir.join("compare.txt"), &table)?;
    write_manifest(&dir.join("manifest.txt"), &manifest_base(cli, &settings))?;
    print!("{table}");
    Ok(())
}
