//! The trainable embedding network: a plain MLP mapping a D-dimensional input
//! embedding into the metric space where prototypes live.
//!
//! Hidden layers are affine + ReLU; the final layer is affine with no
//! nonlinearity, so embeddings (and therefore prototypes) are unconstrained.
//! No dropout or normalization layers: the forward pass is a deterministic
//! function of (parameters, batch), which keeps finite-difference checks
//! exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optim::sgd_update;
use crate::tensor::{Graph, NodeId, Tensor};

/// Architecture and initialization settings.
#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            input_dim: 32,
            hidden_dims: vec![256, 128],
            output_dim: 64,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::InvalidConfig("all layer dims must be >= 1".into()));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered weights and biases of the MLP. Weights are stored `[in x out]` so
/// the forward pass is `x · W + b` without transposition; biases are vectors.
///
/// `Clone` is a deep copy: inner-loop adaptation mutates the clone and must
/// never alias the meta-parameters.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    dims: Vec<usize>,
    params: Vec<NamedTensor>,
}

impl ParameterSet {
    /// Xavier-normal initialization: weights drawn from
    /// `Normal(0, 2 / (fan_in + fan_out))` (variance), biases zero.
    /// Deterministic per seed.
    pub fn init_xavier(config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let dims = config.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let mut wt = Tensor::new(vec![fan_in, fan_out], w)?.requires_grad(true);
            wt.grad = Some(vec![0.0; fan_in * fan_out]);
            params.push(NamedTensor {
                name: format!("w{l}"),
                tensor: wt,
            });
            let mut bt = Tensor::zeros(vec![fan_out]).requires_grad(true);
            bt.grad = Some(vec![0.0; fan_out]);
            params.push(NamedTensor {
                name: format!("b{l}"),
                tensor: bt,
            });
        }
        Ok(ParameterSet { dims, params })
    }

    /// Builds a parameter set from explicit layer tensors, for hand-built
    /// networks in tests and for checkpoint loading.
    pub fn from_layers(dims: Vec<usize>, layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        if dims.len() != layers.len() + 1 {
            return Err(Error::InvalidConfig(format!(
                "{} dims cannot frame {} layers",
                dims.len(),
                layers.len()
            )));
        }
        let mut params = Vec::new();
        for (l, (w, b)) in layers.into_iter().enumerate() {
            if w.shape() != [dims[l], dims[l + 1]] || b.numel() != dims[l + 1] {
                return Err(Error::ShapeMismatch {
                    op: "from_layers",
                    lhs: w.shape().to_vec(),
                    rhs: vec![dims[l], dims[l + 1]],
                });
            }
            let mut w = w.requires_grad(true);
            w.grad = Some(vec![0.0; w.numel()]);
            let mut b = b.requires_grad(true);
            b.grad = Some(vec![0.0; b.numel()]);
            params.push(NamedTensor {
                name: format!("w{l}"),
                tensor: w,
            });
            params.push(NamedTensor {
                name: format!("b{l}"),
                tensor: b,
            });
        }
        Ok(ParameterSet { dims, params })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Total trainable scalars: Σ (in·out + out) over layers.
    pub fn param_count(&self) -> usize {
        self.dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.params.iter().map(|p| &p.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.tensor)
    }

    pub fn named(&self) -> &[NamedTensor] {
        &self.params
    }

    /// Inserts every parameter as a leaf on `graph`, in declaration order.
    pub fn insert_leaves(&self, graph: &mut Graph, requires_grad: bool) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| {
                let mut t = p.tensor.clone();
                t.grad = None;
                graph.leaf(t.requires_grad(requires_grad))
            })
            .collect()
    }

    /// Concatenates all parameters into one flat leaf and narrows it back into
    /// per-tensor views. Gradient checks perturb the flat vector coordinate by
    /// coordinate while the network still sees properly shaped tensors.
    pub fn insert_narrowed(&self, graph: &mut Graph, flat: NodeId) -> Result<Vec<NodeId>> {
        let mut ids = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for p in &self.params {
            let shape = p.tensor.shape().to_vec();
            let len = p.tensor.numel();
            ids.push(graph.narrow(flat, offset, shape)?);
            offset += len;
        }
        Ok(ids)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in &self.params {
            out.extend_from_slice(p.tensor.values());
        }
        out
    }

    /// Forward pass through leaves previously inserted with
    /// [`ParameterSet::insert_leaves`] (or narrowed views in the same order).
    pub fn forward(&self, graph: &mut Graph, param_ids: &[NodeId], input: NodeId) -> Result<NodeId> {
        let width = graph.tensor(input).cols();
        if width != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: graph.tensor(input).shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let layers = self.dims.len() - 1;
        let mut x = input;
        for l in 0..layers {
            let w = param_ids[2 * l];
            let b = param_ids[2 * l + 1];
            let affine = graph.matmul(x, w)?;
            x = graph.add_bias(affine, b)?;
            if l + 1 < layers {
                x = graph.relu(x);
            }
        }
        Ok(x)
    }

    /// Inserts frozen leaves and runs the forward pass, for inference paths
    /// that do not need gradients.
    pub fn embed_into(&self, graph: &mut Graph, input: NodeId) -> Result<NodeId> {
        let ids = self.insert_leaves(graph, false);
        self.forward(graph, &ids, input)
    }

    /// Maps a `[m x D]` batch to `[m x output_dim]` embeddings.
    pub fn embed(&self, batch: &Tensor) -> Result<Tensor> {
        let mut graph = Graph::new();
        let input = graph.leaf(batch.clone().requires_grad(false));
        let out = self.embed_into(&mut graph, input)?;
        Ok(graph.tensor(out).clone())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            let n = p.tensor.numel();
            p.tensor.grad = Some(vec![0.0; n]);
        }
    }

    /// Adds the graph gradients of `ids` (same order as the parameters) into
    /// this set's gradient buffers.
    pub fn add_grads_from(&mut self, graph: &Graph, ids: &[NodeId]) {
        for (p, &id) in self.params.iter_mut().zip(ids) {
            if let Some(g) = graph.grad(id) {
                let buf = p
                    .tensor
                    .grad
                    .get_or_insert_with(|| vec![0.0; g.len()]);
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
        }
    }

    /// Divides every gradient buffer by `n`, for mean-over-tasks accumulation.
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            if let Some(g) = p.tensor.grad.as_mut() {
                for v in g.iter_mut() {
                    *v *= factor;
                }
            }
        }
    }

    /// One full-batch SGD step from the currently accumulated gradients.
    pub fn sgd_step(&mut self, alpha: f64) {
        for p in &mut self.params {
            if let Some(g) = p.tensor.grad.clone() {
                sgd_update(p.tensor.values_mut(), &g, alpha);
            }
        }
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"MSPF";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a parameter set as flat little-endian binary: magic `MSPF`,
/// version, the layer dimension list, then raw f64 buffers in declaration
/// order. Round-trips bit-exactly.
pub fn save_checkpoint(params: &ParameterSet, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.dims.len() as u32).to_le_bytes());
    for &d in &params.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in &params.params {
        for v in p.tensor.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterSet> {
    let bytes = fs::read(path)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint("file truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not an MSPF checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n_dims = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if n_dims < 2 {
        return Err(Error::Checkpoint("layer spec needs at least 2 dims".into()));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
    }
    let mut layers = Vec::new();
    for l in 0..n_dims - 1 {
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let mut w = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            w.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let mut b = Vec::with_capacity(fan_out);
        for _ in 0..fan_out {
            b.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        layers.push((
            Tensor::new(vec![fan_in, fan_out], w)?,
            Tensor::new(vec![fan_out], b)?,
        ));
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    ParameterSet::from_layers(dims, layers)
}
