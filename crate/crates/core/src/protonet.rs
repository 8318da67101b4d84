//! Prototypical-network engine: class-centroid prototypes in embedding space,
//! distance-softmax classification, the episodic training loop, and
//! nonparametric few-shot scoring.
//!
//! An episode embeds its support set, averages per-class to get prototypes,
//! and classifies each query embedding by the softmax over negated squared
//! Euclidean distances to the prototypes. Training minimizes the query NLL;
//! adaptation at test time is just recomputing prototypes from a new support
//! set, with no parameter updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, ParameterSet};
use crate::data::{sample_task, EpisodeDataset, Task, TaskSpec, BONAFIDE_CLASS};
use crate::error::{Error, Result};
use crate::optim::{cyclic_lr, AdamW, AdamWConfig, CyclicLrConfig};
use crate::seeds::{derive_seed, STREAM_EPISODES, STREAM_INIT, STREAM_VAL_BANK};
use crate::tensor::{Graph, NodeId, Tensor};

/// Per-class centroid vectors with their class labels.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    /// `[n_classes x embed_dim]` centroid matrix.
    pub vectors: Tensor,
    /// Task-local class index -> dataset class label.
    pub class_labels: Vec<String>,
}

/// One prototype per task class: the arithmetic mean of the embeddings
/// carrying that label. Differentiable with respect to the embeddings, and
/// bit-identical to a naive per-class mean.
pub fn compute_prototypes(
    graph: &mut Graph,
    embeddings: NodeId,
    task_labels: &[usize],
    n_classes: usize,
) -> Result<NodeId> {
    graph.group_mean(embeddings, task_labels, n_classes)
}

/// Log-probabilities of each query row over task classes:
/// `log_softmax(-‖query_i − proto_j‖²)`.
pub fn proto_log_probs(graph: &mut Graph, query_emb: NodeId, prototypes: NodeId) -> Result<NodeId> {
    let dists = graph.sq_euclidean(query_emb, prototypes)?;
    let logits = graph.scale(dists, -1.0);
    graph.log_softmax(logits)
}

/// Fraction of rows whose arg-max matches the target.
pub fn accuracy_from_log_probs(log_probs: &[f64], n_classes: usize, targets: &[usize]) -> f64 {
    let mut correct = 0usize;
    for (i, &t) in targets.iter().enumerate() {
        let row = &log_probs[i * n_classes..(i + 1) * n_classes];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if argmax == t {
            correct += 1;
        }
    }
    correct as f64 / targets.len() as f64
}

/// Scalar loss and query accuracy of one episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeOutcome {
    pub loss: f64,
    pub accuracy: f64,
}

/// Builds the full episode loss on `graph` against parameter leaves already
/// inserted in declaration order: support embeddings, support-only
/// prototypes, then NLL of the query log-probabilities.
pub fn episode_loss_graph(
    graph: &mut Graph,
    params: &ParameterSet,
    param_ids: &[NodeId],
    task: &Task,
) -> Result<(NodeId, EpisodeOutcome)> {
    let support_x = graph.leaf(task.support_features());
    let support_emb = params.forward(graph, param_ids, support_x)?;
    let protos = compute_prototypes(graph, support_emb, &task.support_targets(), task.n_way())?;
    let query_x = graph.leaf(task.query_features());
    let query_emb = params.forward(graph, param_ids, query_x)?;
    let log_probs = proto_log_probs(graph, query_emb, protos)?;
    let targets = task.query_targets();
    let loss = graph.nll_loss(log_probs, &targets)?;
    let outcome = EpisodeOutcome {
        loss: graph.values(loss)[0],
        accuracy: accuracy_from_log_probs(graph.values(log_probs), task.n_way(), &targets),
    };
    Ok((loss, outcome))
}

/// Episode loss and accuracy without touching gradients.
pub fn episode_loss(params: &ParameterSet, task: &Task) -> Result<EpisodeOutcome> {
    let mut graph = Graph::new();
    let ids = params.insert_leaves(&mut graph, false);
    let (_, outcome) = episode_loss_graph(&mut graph, params, &ids, task)?;
    Ok(outcome)
}

/// Runs one episode forward and backward, adding gradients into `params`.
pub fn episode_backward(params: &mut ParameterSet, task: &Task) -> Result<EpisodeOutcome> {
    let mut graph = Graph::new();
    let ids = params.insert_leaves(&mut graph, true);
    let (loss, outcome) = episode_loss_graph(&mut graph, params, &ids, task)?;
    graph.backward(loss)?;
    params.add_grads_from(&graph, &ids);
    Ok(outcome)
}

/// Prototypes of a task's support set under the given parameters, as values.
pub fn support_prototypes(params: &ParameterSet, task: &Task) -> Result<PrototypeSet> {
    let mut graph = Graph::new();
    let support_x = graph.leaf(task.support_features());
    let emb = params.embed_into(&mut graph, support_x)?;
    let protos = compute_prototypes(&mut graph, emb, &task.support_targets(), task.n_way())?;
    Ok(PrototypeSet {
        vectors: graph.tensor(protos).clone(),
        class_labels: task.class_labels.clone(),
    })
}

/// Episodic training settings.
#[derive(Debug, Clone)]
pub struct ProtoTrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub task_spec: TaskSpec,
    pub weight_decay: f64,
    pub schedule: CyclicLrConfig,
    pub val_bank_size: usize,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl Default for ProtoTrainConfig {
    fn default() -> Self {
        ProtoTrainConfig {
            epochs: 200,
            episodes_per_epoch: 100,
            task_spec: TaskSpec::default(),
            weight_decay: 0.01,
            schedule: CyclicLrConfig::default(),
            val_bank_size: 200,
            backbone: BackboneConfig::default(),
            seed: 0,
        }
    }
}

/// One training-log row: `epoch,mean_loss,val_acc,lr`, where `lr` is the rate
/// applied at the epoch's first optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

/// Trained parameters plus the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterSet,
    pub log: Vec<EpochLog>,
    pub best_val: f64,
    pub best_epoch: usize,
}

/// Serializes a training log as CSV with the given validation-column name.
pub fn train_log_csv(log: &[EpochLog], val_column: &str) -> String {
    let mut out = format!("epoch,mean_loss,{val_column},lr\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.mean_loss, row.val_metric, row.lr
        ));
    }
    out
}

/// Samples the fixed validation-task bank used to pick the best epoch.
pub fn sample_val_bank(
    val: &EpisodeDataset,
    spec: &TaskSpec,
    size: usize,
    seed: u64,
) -> Result<Vec<Task>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size).map(|_| sample_task(val, spec, &mut rng)).collect()
}

/// Episodic training with the cyclic triangular schedule and best-validation
/// checkpoint selection. Deterministic per config seed, including the task
/// sampling order.
pub fn train_protonet(
    train: &EpisodeDataset,
    val: &EpisodeDataset,
    config: &ProtoTrainConfig,
) -> Result<TrainOutcome> {
    if train.dim() != val.dim() {
        return Err(Error::InvalidConfig(format!(
            "train dim {} and val dim {} differ",
            train.dim(),
            val.dim()
        )));
    }
    let mut backbone_cfg = config.backbone.clone();
    backbone_cfg.input_dim = train.dim();
    backbone_cfg.seed = derive_seed(config.seed, STREAM_INIT, 0);
    let mut params = ParameterSet::init_xavier(&backbone_cfg)?;

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let schedule = config.schedule.at_steps_per_epoch(config.episodes_per_epoch);
    let mut episode_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_EPISODES, 0));
    let val_bank = sample_val_bank(
        val,
        &config.task_spec,
        config.val_bank_size,
        derive_seed(config.seed, STREAM_VAL_BANK, 0),
    )?;

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(ParameterSet, f64, usize)> = None;
    let mut iteration = 0usize;
    for epoch in 1..=config.epochs {
        let epoch_lr = cyclic_lr(iteration, &schedule);
        let mut loss_sum = 0.0;
        for _ in 0..config.episodes_per_epoch {
            let task = sample_task(train, &config.task_spec, &mut episode_rng)?;
            params.zero_grads();
            let outcome = episode_backward(&mut params, &task)?;
            loss_sum += outcome.loss;
            opt.step(&mut params, cyclic_lr(iteration, &schedule));
            iteration += 1;
        }
        let mut acc_sum = 0.0;
        for task in &val_bank {
            acc_sum += episode_loss(&params, task)?.accuracy;
        }
        let val_acc = acc_sum / val_bank.len() as f64;
        if best.as_ref().map(|(_, b, _)| val_acc > *b).unwrap_or(true) {
            best = Some((params.clone(), val_acc, epoch));
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / config.episodes_per_epoch as f64,
            val_metric: val_acc,
            lr: epoch_lr,
        });
    }
    let (best_params, best_val, best_epoch) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        params: best_params,
        log,
        best_val,
        best_epoch,
    })
}

/// Locates the bonafide and spoof class indices of a 2-way task.
pub fn binary_class_indices(task: &Task) -> Result<(usize, usize)> {
    if task.n_way() != 2 {
        return Err(Error::InvalidConfig(format!(
            "binary scoring needs a 2-way task, got {}-way",
            task.n_way()
        )));
    }
    let bona = task
        .class_labels
        .iter()
        .position(|c| c == BONAFIDE_CLASS)
        .ok_or_else(|| Error::InvalidConfig("task has no bonafide class".into()))?;
    Ok((bona, 1 - bona))
}

/// Nonparametric few-shot scoring: prototypes come from the support set with
/// no parameter updates, and each query scores
/// `log p(bonafide|x) − log p(spoof|x)`.
pub fn protonet_score(params: &ParameterSet, support: &Task, query: &Tensor) -> Result<Vec<f64>> {
    let (bona, spoof) = binary_class_indices(support)?;
    let targets = support.support_targets();
    if !targets.contains(&0) || !targets.contains(&1) {
        return Err(Error::EmptyClass {
            index: if targets.contains(&0) { 1 } else { 0 },
        });
    }
    let mut graph = Graph::new();
    let support_x = graph.leaf(support.support_features());
    let support_emb = params.embed_into(&mut graph, support_x)?;
    let protos = compute_prototypes(&mut graph, support_emb, &targets, 2)?;
    let query_x = graph.leaf(query.clone());
    let query_emb = params.embed_into(&mut graph, query_x)?;
    let log_probs = proto_log_probs(&mut graph, query_emb, protos)?;
    let lv = graph.values(log_probs);
    Ok((0..query.rows())
        .map(|i| lv[i * 2 + bona] - lv[i * 2 + spoof])
        .collect())
}
