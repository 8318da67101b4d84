//! The evaluation protocol as a reproducible pipeline: few-shot sweeps over
//! the support size, adaptation-step sweeps, repeated support resampling with
//! mean/std summaries, and the jointly trained supervised baseline.
//!
//! Every (k, repeat) job derives its own support seed from the master seed,
//! so repeats are independent, a recorded seed reproduces its EER in
//! isolation, and extending a sweep with new k values never changes existing
//! rows.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, ParameterSet};
use crate::data::{sample_binary_support, BinaryLabel, EpisodeDataset, Task};
use crate::error::{Error, Result};
use crate::metrics::{compute_eer, summarize_repeats, ScoredTrial};
use crate::optim::{AdamW, AdamWConfig};
use crate::protomaml::protomaml_adapt_and_score;
use crate::protonet::{protonet_score, EpochLog, TrainOutcome};
use crate::seeds::{derive_seed, splitmix64, STREAM_BATCHES, STREAM_INIT, STREAM_SUPPORT};
use crate::tensor::{Graph, Tensor};

/// Few-shot adaptation strategy under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ProtoNet,
    ProtoMaml,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "protonet" => Some(Method::ProtoNet),
            "protomaml" => Some(Method::ProtoMaml),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::ProtoNet => write!(f, "protonet"),
            Method::ProtoMaml => write!(f, "protomaml"),
        }
    }
}

/// Deterministic support seed for one (master, k, repeat) job.
pub fn support_seed(master: u64, k: usize, repeat: usize) -> u64 {
    derive_seed(
        derive_seed(master, STREAM_SUPPORT, k as u64),
        splitmix64(STREAM_SUPPORT),
        repeat as u64,
    )
}

/// Shot-sweep settings.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Support sizes, ascending.
    pub shots: Vec<usize>,
    pub repeats: usize,
    pub adapt_steps: usize,
    pub inner_lr: f64,
    pub method: Method,
    pub seed: u64,
}

impl SweepConfig {
    /// Paper-protocol defaults: shots 2–256 for the nonparametric method,
    /// capped at 96 for the optimization-based one.
    pub fn default_for(method: Method, seed: u64) -> Self {
        let shots = match method {
            Method::ProtoNet => vec![2, 4, 8, 16, 32, 64, 96, 256],
            Method::ProtoMaml => vec![2, 4, 8, 16, 32, 64, 96],
        };
        SweepConfig {
            shots,
            repeats: 9,
            adapt_steps: 25,
            inner_lr: 0.1,
            method,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.shots.is_empty() || self.repeats == 0 {
            return Err(Error::InvalidConfig("sweep needs shots and repeats".into()));
        }
        if self.shots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("shot values must be strictly ascending".into()));
        }
        Ok(())
    }
}

/// One evaluated (key, repeat) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub key: usize,
    pub repeat: usize,
    pub eer: f64,
    pub support_seed: u64,
}

/// Mean and sample std over the repeats of one key.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub key: usize,
    pub mean_eer: f64,
    pub std_eer: f64,
}

/// Detail and summary rows of a sweep, keyed by shot count or step count.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub key_name: &'static str,
    pub details: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
}

impl SweepResult {
    pub fn detail_csv(&self) -> String {
        let mut out = format!("{},repeat,eer,support_seed\n", self.key_name);
        for r in &self.details {
            out.push_str(&format!("{},{},{},{}\n", r.key, r.repeat, r.eer, r.support_seed));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{},mean_eer,std_eer\n", self.key_name);
        for s in &self.summaries {
            out.push_str(&format!("{},{},{}\n", s.key, s.mean_eer, s.std_eer));
        }
        out
    }

    pub fn summary_for(&self, key: usize) -> Option<&SweepSummary> {
        self.summaries.iter().find(|s| s.key == key)
    }
}

/// Scores a binary task's query set under the chosen method.
pub fn score_binary_task(
    method: Method,
    params: &ParameterSet,
    task: &Task,
    adapt_steps: usize,
    inner_lr: f64,
) -> Result<Vec<ScoredTrial>> {
    let query = task.query_features();
    let scores = match method {
        Method::ProtoNet => protonet_score(params, task, &query)?,
        Method::ProtoMaml => protomaml_adapt_and_score(params, task, adapt_steps, inner_lr, &query)?,
    };
    Ok(task
        .query
        .iter()
        .zip(scores)
        .map(|(item, score)| ScoredTrial {
            id: item.id.clone(),
            score,
            truth: if item.class == 0 {
                BinaryLabel::Bonafide
            } else {
                BinaryLabel::Spoof
            },
        })
        .collect())
}

/// One complete adaptation+evaluation job: samples the binary support set
/// with the given seed, adapts per method, and computes the EER over the
/// query remainder.
pub fn evaluate_support(
    params: &ParameterSet,
    eval: &EpisodeDataset,
    method: Method,
    k: usize,
    adapt_steps: usize,
    inner_lr: f64,
    seed: u64,
) -> Result<(f64, Vec<ScoredTrial>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = sample_binary_support(eval, k, &mut rng)?;
    let trials = score_binary_task(method, params, &task, adapt_steps, inner_lr)?;
    let eer = compute_eer(&trials)?.eer;
    Ok((eer, trials))
}

/// Checks the eval set can support every requested k with a non-empty query
/// remainder on both classes.
fn check_capacity(eval: &EpisodeDataset, max_k: usize) -> Result<()> {
    let (bona, spoof) = eval.binary_counts();
    if bona < max_k + 1 {
        return Err(Error::InsufficientClass {
            class: "bonafide".into(),
            available: bona,
            needed: max_k + 1,
        });
    }
    if spoof < max_k + 1 {
        return Err(Error::InsufficientClass {
            class: "spoof".into(),
            available: spoof,
            needed: max_k + 1,
        });
    }
    Ok(())
}

/// EER versus support size: for every k and repeat, a fresh support set is
/// drawn, the model adapts, and the query remainder is scored. Fully
/// deterministic per master seed.
pub fn run_shot_sweep(
    params: &ParameterSet,
    eval: &EpisodeDataset,
    config: &SweepConfig,
) -> Result<SweepResult> {
    config.validate()?;
    check_capacity(eval, *config.shots.last().unwrap())?;
    let mut details = Vec::with_capacity(config.shots.len() * config.repeats);
    let mut summaries = Vec::with_capacity(config.shots.len());
    for &k in &config.shots {
        let mut eers = Vec::with_capacity(config.repeats);
        for repeat in 0..config.repeats {
            let seed = support_seed(config.seed, k, repeat);
            let (eer, _) = evaluate_support(
                params,
                eval,
                config.method,
                k,
                config.adapt_steps,
                config.inner_lr,
                seed,
            )?;
            details.push(SweepRow {
                key: k,
                repeat,
                eer,
                support_seed: seed,
            });
            eers.push(eer);
        }
        let (mean, std, _) = summarize_repeats(&eers)?;
        summaries.push(SweepSummary {
            key: k,
            mean_eer: mean,
            std_eer: std,
        });
    }
    Ok(SweepResult {
        key_name: "k",
        details,
        summaries,
    })
}

/// EER versus inner adaptation steps at a fixed k. Support seeds depend only
/// on (master seed, k, repeat), so every step count sees the same nine
/// support sets. Only the optimization-based method has an adaptation loop.
pub fn run_steps_sweep(
    params: &ParameterSet,
    eval: &EpisodeDataset,
    k: usize,
    step_values: &[usize],
    config: &SweepConfig,
) -> Result<SweepResult> {
    if config.method != Method::ProtoMaml {
        return Err(Error::InvalidConfig(
            "the steps sweep adapts with inner-loop updates; only protomaml has them".into(),
        ));
    }
    if step_values.is_empty() || config.repeats == 0 {
        return Err(Error::InvalidConfig("steps sweep needs step values and repeats".into()));
    }
    check_capacity(eval, k)?;
    let mut details = Vec::with_capacity(step_values.len() * config.repeats);
    let mut summaries = Vec::with_capacity(step_values.len());
    for &steps in step_values {
        let mut eers = Vec::with_capacity(config.repeats);
        for repeat in 0..config.repeats {
            let seed = support_seed(config.seed, k, repeat);
            let (eer, _) = evaluate_support(
                params,
                eval,
                Method::ProtoMaml,
                k,
                steps,
                config.inner_lr,
                seed,
            )?;
            details.push(SweepRow {
                key: steps,
                repeat,
                eer,
                support_seed: seed,
            });
            eers.push(eer);
        }
        let (mean, std, _) = summarize_repeats(&eers)?;
        summaries.push(SweepSummary {
            key: steps,
            mean_eer: mean,
            std_eer: std,
        });
    }
    Ok(SweepResult {
        key_name: "steps",
        details,
        summaries,
    })
}

// ---------------------------------------------------------------------------
// Supervised baseline
// ---------------------------------------------------------------------------

/// Settings for the jointly trained binary classifier.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Adam rate; the recipe value is 1e-6, configurable because the
    /// stand-in backbone is far smaller than the original.
    pub lr: f64,
    /// Early stopping: halt when validation EER has not improved for more
    /// than this many epochs.
    pub patience: usize,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            max_epochs: 200,
            batch_size: 64,
            lr: 1e-6,
            patience: 15,
            backbone: BackboneConfig::default(),
            seed: 0,
        }
    }
}

fn binary_targets(dataset: &EpisodeDataset) -> Vec<usize> {
    dataset
        .records()
        .iter()
        .map(|r| match r.binary_label {
            BinaryLabel::Bonafide => 0,
            BinaryLabel::Spoof => 1,
        })
        .collect()
}

fn features_tensor(dataset: &EpisodeDataset, indices: &[usize]) -> Tensor {
    let dim = dataset.dim();
    let mut values = Vec::with_capacity(indices.len() * dim);
    for &i in indices {
        values.extend_from_slice(&dataset.records()[i].features);
    }
    Tensor::new(vec![indices.len(), dim], values).expect("records share dim")
}

/// Bonafide-minus-spoof log-odds of each row under the 2-class network.
pub fn supervised_score(params: &ParameterSet, batch: &Tensor) -> Result<Vec<f64>> {
    let mut graph = Graph::new();
    let input = graph.leaf(batch.clone().requires_grad(false));
    let logits = params.embed_into(&mut graph, input)?;
    let log_probs = graph.log_softmax(logits)?;
    let lv = graph.values(log_probs);
    Ok((0..batch.rows()).map(|i| lv[i * 2] - lv[i * 2 + 1]).collect())
}

/// Validation EER of the 2-class network over a whole dataset.
pub fn supervised_eval_eer(params: &ParameterSet, dataset: &EpisodeDataset) -> Result<f64> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let scores = supervised_score(params, &features_tensor(dataset, &all))?;
    let trials: Vec<ScoredTrial> = dataset
        .records()
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoredTrial {
            id: r.id.clone(),
            score,
            truth: r.binary_label,
        })
        .collect();
    Ok(compute_eer(&trials)?.eer)
}

/// Trains backbone plus a 2-class log-softmax output jointly with NLL and
/// Adam, early-stopping on validation EER and returning the best-validation
/// checkpoint. The log's validation column is the epoch EER.
pub fn train_supervised_baseline(
    train: &EpisodeDataset,
    val: &EpisodeDataset,
    config: &BaselineConfig,
) -> Result<TrainOutcome> {
    if train.dim() != val.dim() {
        return Err(Error::InvalidConfig(format!(
            "train dim {} and val dim {} differ",
            train.dim(),
            val.dim()
        )));
    }
    // The embedding stack plus one more affine layer down to 2 logits.
    let mut net_cfg = config.backbone.clone();
    net_cfg.input_dim = train.dim();
    net_cfg.hidden_dims.push(net_cfg.output_dim);
    net_cfg.output_dim = 2;
    net_cfg.seed = derive_seed(config.seed, STREAM_INIT, 0);
    let mut params = ParameterSet::init_xavier(&net_cfg)?;

    let mut opt = AdamW::new(AdamWConfig::without_decay());
    let targets = binary_targets(train);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_BATCHES, 0));

    let mut log: Vec<EpochLog> = Vec::new();
    let mut best: Option<(ParameterSet, f64, usize)> = None;
    let mut since_improvement = 0usize;
    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in 0..order.len() {
            let j = batch_rng.random_range(i..order.len());
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch = features_tensor(train, chunk);
            let batch_targets: Vec<usize> = chunk.iter().map(|&i| targets[i]).collect();
            params.zero_grads();
            let mut graph = Graph::new();
            let ids = params.insert_leaves(&mut graph, true);
            let input = graph.leaf(batch);
            let logits = params.forward(&mut graph, &ids, input)?;
            let log_probs = graph.log_softmax(logits)?;
            let loss = graph.nll_loss(log_probs, &batch_targets)?;
            loss_sum += graph.values(loss)[0];
            batches += 1;
            graph.backward(loss)?;
            params.add_grads_from(&graph, &ids);
            opt.step(&mut params, config.lr);
        }
        let val_eer = supervised_eval_eer(&params, val)?;
        let improved = best.as_ref().map(|(_, b, _)| val_eer < *b).unwrap_or(true);
        if improved {
            best = Some((params.clone(), val_eer, epoch));
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / batches as f64,
            val_metric: val_eer,
            lr: config.lr,
        });
        if since_improvement > config.patience {
            break;
        }
    }
    let (best_params, best_val, best_epoch) = best.expect("max_epochs >= 1");
    Ok(TrainOutcome {
        params: best_params,
        log,
        best_val,
        best_epoch,
    })
}

// ---------------------------------------------------------------------------
// Method comparison
// ---------------------------------------------------------------------------

/// Settings for the side-by-side comparison table.
#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub k: usize,
    pub adapt_steps: usize,
    pub inner_lr: f64,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            k: 96,
            adapt_steps: 25,
            inner_lr: 0.1,
            repeats: 9,
            seed: 0,
        }
    }
}

/// One (model, eval set) cell of the comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub model: String,
    pub trainable_params: usize,
    /// None for the zero-shot baseline.
    pub shots: Option<usize>,
    pub eval_set: String,
    pub mean_eer: f64,
    pub std_eer: f64,
}

/// Zero-shot baseline versus adapted meta-learners on every eval set. The
/// meta methods adapt at `config.k` shots over `config.repeats` resampled
/// support sets; the baseline scores each set outright.
pub fn compare_methods(
    baseline: &ParameterSet,
    protonet: &ParameterSet,
    protomaml: &ParameterSet,
    eval_sets: &[(String, &EpisodeDataset)],
    config: &CompareConfig,
) -> Result<Vec<CompareRow>> {
    if eval_sets.is_empty() {
        return Err(Error::InvalidConfig("compare needs at least one eval set".into()));
    }
    let dims = [baseline.input_dim(), protonet.input_dim(), protomaml.input_dim()];
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(Error::InvalidConfig(format!(
            "models disagree on input dim: {dims:?}"
        )));
    }
    for (name, ds) in eval_sets {
        if ds.dim() != dims[0] {
            return Err(Error::InvalidConfig(format!(
                "eval set {name} has dim {}, models expect {}",
                ds.dim(),
                dims[0]
            )));
        }
        check_capacity(ds, config.k)?;
    }

    let mut rows = Vec::new();
    for (name, ds) in eval_sets {
        rows.push(CompareRow {
            model: "baseline".into(),
            trainable_params: baseline.param_count(),
            shots: None,
            eval_set: name.clone(),
            mean_eer: supervised_eval_eer(baseline, ds)?,
            std_eer: 0.0,
        });
    }
    for (model, params, method) in [
        ("protonet", protonet, Method::ProtoNet),
        ("protomaml", protomaml, Method::ProtoMaml),
    ] {
        for (name, ds) in eval_sets {
            let mut eers = Vec::with_capacity(config.repeats);
            for repeat in 0..config.repeats {
                let seed = support_seed(config.seed, config.k, repeat);
                let (eer, _) = evaluate_support(
                    params,
                    ds,
                    method,
                    config.k,
                    config.adapt_steps,
                    config.inner_lr,
                    seed,
                )?;
                eers.push(eer);
            }
            let (mean, std, _) = summarize_repeats(&eers)?;
            rows.push(CompareRow {
                model: model.into(),
                trainable_params: params.param_count(),
                shots: Some(config.k),
                eval_set: name.clone(),
                mean_eer: mean,
                std_eer: std,
            });
        }
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("model,eval_set,shots,eer_mean,eer_std,trainable_params\n");
    for r in rows {
        let shots = r.shots.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.model, r.eval_set, shots, r.mean_eer, r.std_eer, r.trainable_params
        ));
    }
    out
}

/// Aligned text table: one row per model, one EER column per eval set, plus
/// trainable-parameter and shot columns.
pub fn comparison_table(rows: &[CompareRow]) -> String {
    let mut models: Vec<&str> = Vec::new();
    let mut sets: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        if !sets.contains(&r.eval_set.as_str()) {
            sets.push(&r.eval_set);
        }
    }
    let cell = |model: &str, set: &str| -> String {
        rows.iter()
            .find(|r| r.model == model && r.eval_set == set)
            .map(|r| {
                if r.shots.is_some() {
                    format!("{:.4} ± {:.4}", r.mean_eer, r.std_eer)
                } else {
                    format!("{:.4}", r.mean_eer)
                }
            })
            .unwrap_or_else(|| "-".into())
    };
    let meta = |model: &str| -> (usize, String) {
        let r = rows.iter().find(|r| r.model == model).unwrap();
        (
            r.trainable_params,
            r.shots.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
        )
    };

    let mut header: Vec<String> = vec!["model".into(), "params".into(), "shots".into()];
    header.extend(sets.iter().map(|s| format!("eer:{s}")));
    let mut table: Vec<Vec<String>> = vec![header];
    for m in &models {
        let (params, shots) = meta(m);
        let mut row = vec![m.to_string(), params.to_string(), shots];
        row.extend(sets.iter().map(|s| cell(m, s)));
        table.push(row);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Writes a run manifest as sorted `key = value` lines.
pub fn write_manifest(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(&format!("{k} = {v}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}
