//! Prototype-initialized MAML: a linear head built from support prototypes,
//! inner-loop SGD adaptation of backbone and head together, and an outer loop
//! that accumulates first-order meta-gradients across tasks.
//!
//! The head initialization exploits the algebraic identity
//! `-‖f − v_i‖² = 2 v_iᵀ f − ‖v_i‖² + const`: with `W[i] = 2 v_i` and
//! `b[i] = −‖v_i‖²`, the softmax over `W f + b` reproduces the
//! distance-softmax probabilities exactly, and the head is then free to train
//! like any linear layer.
//!
//! The outer update is first-order: query-loss gradients evaluated at the
//! adapted parameters are applied to the base parameters, with no
//! differentiation through the inner SGD steps. With zero inner steps the
//! head stays a differentiable function of the backbone, so prototype
//! gradients flow and the update reduces to a prototypical episode step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BackboneConfig, ParameterSet};
use crate::data::{sample_task, EpisodeDataset, Task, TaskSpec};
use crate::error::{Error, Result};
use crate::optim::{cyclic_lr, sgd_update, AdamW, AdamWConfig, CyclicLrConfig};
use crate::protonet::{
    accuracy_from_log_probs, binary_class_indices, compute_prototypes, sample_val_bank,
    support_prototypes, EpochLog, PrototypeSet, TrainOutcome,
};
use crate::seeds::{derive_seed, STREAM_EPISODES, STREAM_INIT, STREAM_VAL_BANK};
use crate::tensor::{Graph, NodeId, Tensor};

/// Trainable output linear layer, one row per task class.
#[derive(Debug, Clone)]
pub struct LinearHead {
    /// `[n_classes x embed_dim]` weight matrix.
    pub w: Tensor,
    /// `[n_classes]` bias vector.
    pub b: Tensor,
}

impl LinearHead {
    /// Prototype initialization: `W[i] = 2 v_i`, `b[i] = −‖v_i‖²`.
    pub fn from_prototypes(protos: &PrototypeSet) -> Self {
        let n = protos.vectors.rows();
        let d = protos.vectors.cols();
        let v = protos.vectors.values();
        let mut w = vec![0.0; n * d];
        let mut b = vec![0.0; n];
        for i in 0..n {
            let mut norm_sq = 0.0;
            for t in 0..d {
                w[i * d + t] = 2.0 * v[i * d + t];
                norm_sq += v[i * d + t] * v[i * d + t];
            }
            b[i] = -norm_sq;
        }
        LinearHead {
            w: Tensor::new(vec![n, d], w).expect("shape matches"),
            b: Tensor::new(vec![n], b).expect("shape matches"),
        }
    }

    pub fn zeros(n_classes: usize, embed_dim: usize) -> Self {
        LinearHead {
            w: Tensor::zeros(vec![n_classes, embed_dim]),
            b: Tensor::zeros(vec![n_classes]),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.w.rows()
    }

    fn insert_leaves(&self, graph: &mut Graph, requires_grad: bool) -> (NodeId, NodeId) {
        let mut w = self.w.clone().requires_grad(requires_grad);
        w.grad = None;
        let mut b = self.b.clone().requires_grad(requires_grad);
        b.grad = None;
        (graph.leaf(w), graph.leaf(b))
    }

    fn sgd_step_from(&mut self, graph: &Graph, w_id: NodeId, b_id: NodeId, alpha: f64) {
        if let Some(g) = graph.grad(w_id) {
            sgd_update(self.w.values_mut(), g, alpha);
        }
        if let Some(g) = graph.grad(b_id) {
            sgd_update(self.b.values_mut(), g, alpha);
        }
    }
}

/// ProtoMAML training and adaptation settings.
#[derive(Debug, Clone)]
pub struct ProtoMamlConfig {
    /// Inner-loop SGD rate (much higher than the outer rate).
    pub inner_lr: f64,
    /// Inner updates per task during meta-training.
    pub train_inner_steps: usize,
    /// Inner updates during few-shot adaptation at meta-test time.
    pub adapt_inner_steps: usize,
    /// Tasks whose gradients are accumulated into one outer update.
    pub tasks_per_outer: usize,
    pub epochs: usize,
    /// Episodes sampled per epoch; outer updates per epoch is this divided by
    /// `tasks_per_outer`.
    pub episodes_per_epoch: usize,
    pub task_spec: TaskSpec,
    pub weight_decay: f64,
    pub schedule: CyclicLrConfig,
    pub val_bank_size: usize,
    pub backbone: BackboneConfig,
    pub seed: u64,
}

impl Default for ProtoMamlConfig {
    fn default() -> Self {
        ProtoMamlConfig {
            inner_lr: 0.1,
            train_inner_steps: 1,
            adapt_inner_steps: 25,
            tasks_per_outer: 4,
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

/// Head log-probabilities on a graph: `log_softmax(emb · Wᵀ + b)` from head
/// leaves already inserted.
fn head_forward(graph: &mut Graph, w: NodeId, b: NodeId, emb: NodeId) -> Result<NodeId> {
    let wt = graph.transpose(w)?;
    let logits = graph.matmul(emb, wt)?;
    let biased = graph.add_bias(logits, b)?;
    graph.log_softmax(biased)
}

/// In-graph prototype head: `W = 2 V`, `b = −‖v_i‖²`, both differentiable
/// functions of the prototype node.
fn prototype_head_nodes(graph: &mut Graph, protos: NodeId) -> Result<(NodeId, NodeId)> {
    let d = graph.tensor(protos).cols();
    let w = graph.scale(protos, 2.0);
    let origin = graph.leaf(Tensor::zeros(vec![1, d]));
    let norms = graph.sq_euclidean(protos, origin)?;
    let b = graph.scale(norms, -1.0);
    Ok((w, b))
}

/// Builds the head loss (embed, linear head, log-softmax, NLL) against
/// parameter and head leaves already on the graph. Returns the loss node and
/// the batch accuracy.
pub fn head_loss_graph(
    graph: &mut Graph,
    params: &ParameterSet,
    param_ids: &[NodeId],
    w: NodeId,
    b: NodeId,
    batch: NodeId,
    targets: &[usize],
) -> Result<(NodeId, f64)> {
    let emb = params.forward(graph, param_ids, batch)?;
    let log_probs = head_forward(graph, w, b, emb)?;
    let n = graph.tensor(log_probs).cols();
    let acc = accuracy_from_log_probs(graph.values(log_probs), n, targets);
    let loss = graph.nll_loss(log_probs, targets)?;
    Ok((loss, acc))
}

/// Log-probabilities of a batch under backbone + linear head, as values.
pub fn head_log_probs(params: &ParameterSet, head: &LinearHead, batch: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let input = graph.leaf(batch.clone().requires_grad(false));
    let emb = params.embed_into(&mut graph, input)?;
    let (w, b) = head.insert_leaves(&mut graph, false);
    let log_probs = head_forward(&mut graph, w, b, emb)?;
    Ok(graph.tensor(log_probs).clone())
}

/// Adapted copies of the parameters and head after inner-loop SGD, plus the
/// support-loss trace (evaluated at initialization and after every step).
#[derive(Debug)]
pub struct AdaptResult {
    pub params: ParameterSet,
    pub head: LinearHead,
    pub support_loss_trace: Vec<f64>,
}

/// Inner-loop adaptation: clones the base parameters, builds the head from
/// support prototypes once at initialization, then runs `steps` full-batch
/// SGD updates on the support NLL, training backbone and head together. The
/// base parameters are never touched.
pub fn inner_adapt(base: &ParameterSet, task: &Task, steps: usize, alpha: f64) -> Result<AdaptResult> {
    let mut adapted = base.clone();
    let protos = support_prototypes(base, task)?;
    let mut head = LinearHead::from_prototypes(&protos);
    let targets = task.support_targets();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let mut graph = Graph::new();
        let param_ids = adapted.insert_leaves(&mut graph, true);
        let (w, b) = head.insert_leaves(&mut graph, true);
        let batch = graph.leaf(task.support_features());
        let (loss, _) = head_loss_graph(&mut graph, &adapted, &param_ids, w, b, batch, &targets)?;
        trace.push(graph.values(loss)[0]);
        graph.backward(loss)?;
        adapted.zero_grads();
        adapted.add_grads_from(&graph, &param_ids);
        adapted.sgd_step(alpha);
        head.sgd_step_from(&graph, w, b, alpha);
    }
    // Loss at the final parameters closes the trace.
    let mut graph = Graph::new();
    let param_ids = adapted.insert_leaves(&mut graph, false);
    let (w, b) = head.insert_leaves(&mut graph, false);
    let batch = graph.leaf(task.support_features());
    let (loss, _) = head_loss_graph(&mut graph, &adapted, &param_ids, w, b, batch, &targets)?;
    trace.push(graph.values(loss)[0]);
    Ok(AdaptResult {
        params: adapted,
        head,
        support_loss_trace: trace,
    })
}

/// One accumulated outer update over a batch of tasks. For each task the
/// query loss is evaluated at the inner-adapted parameters and its gradient
/// applied to the base parameters (first-order). With zero inner steps the
/// whole episode stays on one graph and prototype gradients reach the
/// backbone through the head initialization. Gradients are averaged over
/// tasks, then one optimizer step runs. Returns the mean query loss.
pub fn outer_step(
    params: &mut ParameterSet,
    opt: &mut AdamW,
    lr: f64,
    tasks: &[Task],
    config: &ProtoMamlConfig,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("outer_step needs at least one task".into()));
    }
    params.zero_grads();
    let mut loss_sum = 0.0;
    for task in tasks {
        let query_targets = task.query_targets();
        if config.train_inner_steps == 0 {
            let mut graph = Graph::new();
            let param_ids = params.insert_leaves(&mut graph, true);
            let support_x = graph.leaf(task.support_features());
            let support_emb = params.forward(&mut graph, &param_ids, support_x)?;
            let protos =
                compute_prototypes(&mut graph, support_emb, &task.support_targets(), task.n_way())?;
            let (w, b) = prototype_head_nodes(&mut graph, protos)?;
            let query_x = graph.leaf(task.query_features());
            let (loss, _) =
                head_loss_graph(&mut graph, params, &param_ids, w, b, query_x, &query_targets)?;
            loss_sum += graph.values(loss)[0];
            graph.backward(loss)?;
            params.add_grads_from(&graph, &param_ids);
        } else {
            let adapted = inner_adapt(params, task, config.train_inner_steps, config.inner_lr)?;
            let mut graph = Graph::new();
            let param_ids = adapted.params.insert_leaves(&mut graph, true);
            // Head gradients are discarded by the outer update; the head is
            // rebuilt from prototypes for every task.
            let (w, b) = adapted.head.insert_leaves(&mut graph, false);
            let query_x = graph.leaf(task.query_features());
            let (loss, _) = head_loss_graph(
                &mut graph,
                &adapted.params,
                &param_ids,
                w,
                b,
                query_x,
                &query_targets,
            )?;
            loss_sum += graph.values(loss)[0];
            graph.backward(loss)?;
            params.add_grads_from(&graph, &param_ids);
        }
    }
    params.scale_grads(1.0 / tasks.len() as f64);
    opt.step(params, lr);
    Ok(loss_sum / tasks.len() as f64)
}

/// Query accuracy of one task after inner adaptation, for validation.
pub fn adapted_task_accuracy(
    params: &ParameterSet,
    task: &Task,
    steps: usize,
    alpha: f64,
) -> Result<f64> {
    let adapted = inner_adapt(params, task, steps, alpha)?;
    let log_probs = head_log_probs(&adapted.params, &adapted.head, &task.query_features())?;
    Ok(accuracy_from_log_probs(
        log_probs.values(),
        task.n_way(),
        &task.query_targets(),
    ))
}

/// Meta-training: same epoch, validation-bank, and best-checkpoint structure
/// as prototypical training, with the accumulated outer update as the unit of
/// progress. Deterministic per seed.
pub fn train_protomaml(
    train: &EpisodeDataset,
    val: &EpisodeDataset,
    config: &ProtoMamlConfig,
) -> Result<TrainOutcome> {
    if train.dim() != val.dim() {
        return Err(Error::InvalidConfig(format!(
            "train dim {} and val dim {} differ",
            train.dim(),
            val.dim()
        )));
    }
    if config.tasks_per_outer == 0 {
        return Err(Error::InvalidConfig("tasks_per_outer must be >= 1".into()));
    }
    let mut backbone_cfg = config.backbone.clone();
    backbone_cfg.input_dim = train.dim();
    backbone_cfg.seed = derive_seed(config.seed, STREAM_INIT, 0);
    let mut params = ParameterSet::init_xavier(&backbone_cfg)?;

    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let outer_per_epoch = (config.episodes_per_epoch / config.tasks_per_outer).max(1);
    let schedule = config.schedule.at_steps_per_epoch(outer_per_epoch);
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
        for _ in 0..outer_per_epoch {
            let tasks: Vec<Task> = (0..config.tasks_per_outer)
                .map(|_| sample_task(train, &config.task_spec, &mut episode_rng))
                .collect::<Result<_>>()?;
            let lr = cyclic_lr(iteration, &schedule);
            loss_sum += outer_step(&mut params, &mut opt, lr, &tasks, config)?;
            iteration += 1;
        }
        let mut acc_sum = 0.0;
        for task in &val_bank {
            acc_sum += adapted_task_accuracy(&params, task, config.train_inner_steps, config.inner_lr)?;
        }
        let val_acc = acc_sum / val_bank.len() as f64;
        if best.as_ref().map(|(_, b, _)| val_acc > *b).unwrap_or(true) {
            best = Some((params.clone(), val_acc, epoch));
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / outer_per_epoch as f64,
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

/// Optimization-based few-shot scoring: inner-adapts a private copy on the
/// binary support set, then scores each query row as
/// `log p(bonafide|x) − log p(spoof|x)` under the adapted model. The stored
/// base parameters are never mutated.
pub fn protomaml_adapt_and_score(
    params: &ParameterSet,
    support: &Task,
    steps: usize,
    alpha: f64,
    query: &Tensor,
) -> Result<Vec<f64>> {
    let (bona, spoof) = binary_class_indices(support)?;
    let adapted = inner_adapt(params, support, steps, alpha)?;
    let log_probs = head_log_probs(&adapted.params, &adapted.head, query)?;
    let lv = log_probs.values();
    Ok((0..query.rows())
        .map(|i| lv[i * 2 + bona] - lv[i * 2 + spoof])
        .collect())
}
