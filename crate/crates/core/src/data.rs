//! Dataset model, N-way K-shot episodic task sampling, synthetic
//! attack-family generation, and embedding-file ingestion.
//!
//! Records are fixed-dimension feature embeddings with an attack-class label
//! and a binary bonafide/spoof label. The synthetic generator emulates the
//! seen-vs-unseen attack split of a cross-corpus evaluation: training attacks
//! occupy their own Gaussian clusters, while the unseen-domain set shifts the
//! bonafide cluster by a channel offset and places new attacks along
//! directions no training attack ever used.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The two detection outcomes. Bonafide is the positive class: scores are
/// oriented so that higher means more bonafide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryLabel {
    Bonafide,
    Spoof,
}

impl BinaryLabel {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bonafide" => Some(BinaryLabel::Bonafide),
            "spoof" => Some(BinaryLabel::Spoof),
            _ => None,
        }
    }
}

impl fmt::Display for BinaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryLabel::Bonafide => write!(f, "bonafide"),
            BinaryLabel::Spoof => write!(f, "spoof"),
        }
    }
}

/// One labeled embedding record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub id: String,
    pub features: Vec<f64>,
    pub attack_class: String,
    pub binary_label: BinaryLabel,
}

/// The class name reserved for genuine samples.
pub const BONAFIDE_CLASS: &str = "bonafide";

/// Immutable embedding collection with a per-class index.
#[derive(Debug, Clone)]
pub struct EpisodeDataset {
    records: Vec<LabeledEmbedding>,
    class_index: BTreeMap<String, Vec<usize>>,
    dim: usize,
}

impl EpisodeDataset {
    /// Validates record consistency and builds the class index.
    pub fn from_records(records: Vec<LabeledEmbedding>) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.features.len())
            .ok_or_else(|| Error::InvalidConfig("dataset has no records".into()))?;
        let mut class_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != dim {
                return Err(Error::InvalidConfig(format!(
                    "record {:?} has dim {}, dataset dim is {}",
                    r.id,
                    r.features.len(),
                    dim
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("record {:?} has non-finite features", r.id)));
            }
            let is_bona_class = r.attack_class == BONAFIDE_CLASS;
            let is_bona_label = r.binary_label == BinaryLabel::Bonafide;
            if is_bona_class != is_bona_label {
                return Err(Error::InvalidConfig(format!(
                    "record {:?}: attack_class {:?} conflicts with binary label {}",
                    r.id, r.attack_class, r.binary_label
                )));
            }
            class_index.entry(r.attack_class.clone()).or_default().push(i);
        }
        Ok(EpisodeDataset {
            records,
            class_index,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[LabeledEmbedding] {
        &self.records
    }

    /// Class names in deterministic (sorted) order.
    pub fn class_names(&self) -> Vec<String> {
        self.class_index.keys().cloned().collect()
    }

    pub fn class_members(&self, class: &str) -> Option<&[usize]> {
        self.class_index.get(class).map(|v| v.as_slice())
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    /// (bonafide count, spoof count).
    pub fn binary_counts(&self) -> (usize, usize) {
        let bona = self
            .class_index
            .get(BONAFIDE_CLASS)
            .map(|v| v.len())
            .unwrap_or(0);
        (bona, self.records.len() - bona)
    }
}

/// N-way K-shot episode shape.
#[derive(Debug, Clone, Copy)]
pub struct TaskSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub query_per_class: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        // 3-way 5-shot with 5 query samples per class.
        TaskSpec {
            n_way: 3,
            k_shot: 5,
            query_per_class: 5,
        }
    }
}

/// One item inside an episode: features plus a task-local class index.
#[derive(Debug, Clone)]
pub struct TaskItem {
    pub id: String,
    pub features: Vec<f64>,
    pub class: usize,
}

/// One episode: a support set for adaptation and a query set for evaluation.
#[derive(Debug, Clone)]
pub struct Task {
    pub support: Vec<TaskItem>,
    pub query: Vec<TaskItem>,
    /// Task-local class index -> dataset class label.
    pub class_labels: Vec<String>,
    pub feature_dim: usize,
}

impl Task {
    pub fn n_way(&self) -> usize {
        self.class_labels.len()
    }

    pub fn support_features(&self) -> Tensor {
        items_tensor(&self.support, self.feature_dim)
    }

    pub fn query_features(&self) -> Tensor {
        items_tensor(&self.query, self.feature_dim)
    }

    pub fn support_targets(&self) -> Vec<usize> {
        self.support.iter().map(|i| i.class).collect()
    }

    pub fn query_targets(&self) -> Vec<usize> {
        self.query.iter().map(|i| i.class).collect()
    }

    /// True when no record id appears in both halves.
    pub fn support_query_disjoint(&self) -> bool {
        let support_ids: std::collections::BTreeSet<&str> =
            self.support.iter().map(|i| i.id.as_str()).collect();
        self.query.iter().all(|q| !support_ids.contains(q.id.as_str()))
    }
}

fn items_tensor(items: &[TaskItem], dim: usize) -> Tensor {
    let mut values = Vec::with_capacity(items.len() * dim);
    for item in items {
        values.extend_from_slice(&item.features);
    }
    Tensor::new(vec![items.len(), dim], values).expect("items share the dataset dim")
}

/// First `take` entries of a seeded partial Fisher-Yates shuffle of `0..n`.
fn sample_indices(n: usize, take: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..take.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(take);
    idx
}

/// Samples one N-way K-shot episode: classes uniformly without replacement,
/// then records uniformly without replacement within each class, the first
/// `k_shot` going to support and the next `query_per_class` to query.
pub fn sample_task(dataset: &EpisodeDataset, spec: &TaskSpec, rng: &mut ChaCha8Rng) -> Result<Task> {
    let classes = dataset.class_names();
    if spec.n_way < 2 || spec.n_way > classes.len() {
        return Err(Error::InvalidConfig(format!(
            "n_way {} outside 2..={} available classes",
            spec.n_way,
            classes.len()
        )));
    }
    let per_class = spec.k_shot + spec.query_per_class;
    let chosen = sample_indices(classes.len(), spec.n_way, rng);
    let mut support = Vec::with_capacity(spec.n_way * spec.k_shot);
    let mut query = Vec::with_capacity(spec.n_way * spec.query_per_class);
    let mut class_labels = Vec::with_capacity(spec.n_way);
    for (task_class, &ci) in chosen.iter().enumerate() {
        let name = &classes[ci];
        let members = dataset.class_members(name).expect("indexed class");
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class: name.clone(),
                available: members.len(),
                needed: per_class,
            });
        }
        let picks = sample_indices(members.len(), per_class, rng);
        for (slot, &p) in picks.iter().enumerate() {
            let rec = &dataset.records()[members[p]];
            let item = TaskItem {
                id: rec.id.clone(),
                features: rec.features.clone(),
                class: task_class,
            };
            if slot < spec.k_shot {
                support.push(item);
            } else {
                query.push(item);
            }
        }
        class_labels.push(name.clone());
    }
    Ok(Task {
        support,
        query,
        class_labels,
        feature_dim: dataset.dim(),
    })
}

/// Samples a 2-way binary episode for few-shot adaptation: `k` bonafide and
/// `k` pooled-spoof records form the support set; every remaining record of
/// the dataset becomes the query set. Class 0 is bonafide, class 1 is spoof.
pub fn sample_binary_support(dataset: &EpisodeDataset, k: usize, rng: &mut ChaCha8Rng) -> Result<Task> {
    let bona: Vec<usize> = dataset
        .class_members(BONAFIDE_CLASS)
        .map(|v| v.to_vec())
        .unwrap_or_default();
    let spoof: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.records()[i].binary_label == BinaryLabel::Spoof)
        .collect();
    if bona.len() < k {
        return Err(Error::InsufficientClass {
            class: BONAFIDE_CLASS.into(),
            available: bona.len(),
            needed: k,
        });
    }
    if spoof.len() < k {
        return Err(Error::InsufficientClass {
            class: "spoof".into(),
            available: spoof.len(),
            needed: k,
        });
    }
    let mut in_support = vec![false; dataset.len()];
    let mut support = Vec::with_capacity(2 * k);
    for &p in &sample_indices(bona.len(), k, rng) {
        in_support[bona[p]] = true;
    }
    for &p in &sample_indices(spoof.len(), k, rng) {
        in_support[spoof[p]] = true;
    }
    let mut query = Vec::new();
    for (i, rec) in dataset.records().iter().enumerate() {
        let class = match rec.binary_label {
            BinaryLabel::Bonafide => 0,
            BinaryLabel::Spoof => 1,
        };
        let item = TaskItem {
            id: rec.id.clone(),
            features: rec.features.clone(),
            class,
        };
        if in_support[i] {
            support.push(item);
        } else {
            query.push(item);
        }
    }
    Ok(Task {
        support,
        query,
        class_labels: vec![BONAFIDE_CLASS.into(), "spoof".into()],
        feature_dim: dataset.dim(),
    })
}

// ---------------------------------------------------------------------------
// Embedding CSV format
// ---------------------------------------------------------------------------

/// Loads an embedding CSV: header `id,attack_class,binary_label,f0,...`, one
/// record per line.
pub fn load_dataset(path: &Path) -> Result<EpisodeDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text)
}

fn parse_dataset(text: &str) -> Result<EpisodeDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "attack_class" || cols[2] != "binary_label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with id,attack_class,binary_label,f0".into(),
        });
    }
    let dim = cols.len() - 3;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", dim + 3, fields.len()),
            });
        }
        let binary_label = BinaryLabel::parse(fields[2]).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unknown binary label {:?}", fields[2]),
        })?;
        let mut features = Vec::with_capacity(dim);
        for f in &fields[3..] {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad float {f:?}"),
            })?;
            features.push(v);
        }
        records.push(LabeledEmbedding {
            id: fields[0].to_string(),
            features,
            attack_class: fields[1].to_string(),
            binary_label,
        });
    }
    EpisodeDataset::from_records(records)
}

/// Writes a dataset in the embedding CSV format. Floats use the shortest
/// round-trip decimal form, so save/load is lossless.
pub fn save_dataset(dataset: &EpisodeDataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("id,attack_class,binary_label");
    for i in 0..dataset.dim() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for r in dataset.records() {
        out.push_str(&r.id);
        out.push(',');
        out.push_str(&r.attack_class);
        out.push(',');
        out.push_str(&r.binary_label.to_string());
        for v in &r.features {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic attack-family generator
// ---------------------------------------------------------------------------

/// Settings for the synthetic seen/unseen domain suite.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub dim: usize,
    pub seen_attacks: usize,
    pub unseen_attacks: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    /// Per-coordinate standard deviation of every cluster.
    pub sigma: f64,
    /// Distance from the bonafide center to each seen attack center.
    pub separation: f64,
    /// Displacement of unseen attack clusters along directions never used by
    /// seen attacks.
    pub delta: f64,
    /// Rigid translation applied to the whole unseen domain (its bonafide
    /// cluster included), emulating a channel mismatch.
    pub channel_shift: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            dim: 32,
            seen_attacks: 6,
            unseen_attacks: 4,
            train_per_class: 200,
            eval_per_class: 400,
            sigma: 1.0,
            separation: 4.0,
            delta: 5.0,
            channel_shift: 1.0,
        }
    }
}

impl GenConfig {
    fn validate(&self) -> Result<()> {
        // Axes: one per seen attack, one per unseen attack, one for the
        // channel offset.
        let needed = self.seen_attacks + self.unseen_attacks + 1;
        if self.dim < needed {
            return Err(Error::InvalidConfig(format!(
                "dim {} too small for {} attack directions plus a channel axis",
                self.dim, needed
            )));
        }
        if self.seen_attacks == 0 || self.unseen_attacks == 0 {
            return Err(Error::InvalidConfig("need at least one seen and one unseen attack".into()));
        }
        if self.train_per_class == 0 || self.eval_per_class == 0 {
            return Err(Error::InvalidConfig("per-class counts must be positive".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Generated splits plus the true cluster centers they were drawn from.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: EpisodeDataset,
    pub eval_seen: EpisodeDataset,
    pub eval_unseen: EpisodeDataset,
    /// True cluster centers of the training domain, keyed by class.
    pub train_centers: BTreeMap<String, Vec<f64>>,
    /// True cluster centers of the shifted unseen domain, keyed by class.
    pub unseen_centers: BTreeMap<String, Vec<f64>>,
}

fn axis(dim: usize, index: usize, magnitude: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[index] = magnitude;
    v
}

fn added(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn attack_name(index: usize) -> String {
    format!("S{:02}", index)
}

/// Draws the full synthetic suite. Bonafide sits at the origin; seen attack i
/// sits at `separation` along axis i; the unseen domain is the bonafide
/// distribution translated by a channel offset plus new attacks at `delta`
/// along axes no seen attack used. Deterministic per seed.
pub fn generate_synthetic(config: &GenConfig, seed: u64) -> Result<SyntheticData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.sigma).expect("sigma validated positive");
    let dim = config.dim;

    let channel = axis(dim, config.seen_attacks + config.unseen_attacks, config.channel_shift);

    let mut train_centers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    train_centers.insert(BONAFIDE_CLASS.into(), vec![0.0; dim]);
    for i in 0..config.seen_attacks {
        train_centers.insert(attack_name(i + 1), axis(dim, i, config.separation));
    }

    let mut unseen_centers: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    unseen_centers.insert(BONAFIDE_CLASS.into(), channel.clone());
    for j in 0..config.unseen_attacks {
        let direction = axis(dim, config.seen_attacks + j, config.delta);
        unseen_centers.insert(attack_name(config.seen_attacks + j + 1), added(&channel, &direction));
    }

    let draw_split = |split: &str,
                          centers: &BTreeMap<String, Vec<f64>>,
                          per_class: usize,
                          rng: &mut ChaCha8Rng|
     -> Result<EpisodeDataset> {
        let mut records = Vec::new();
        for (class, center) in centers {
            let binary = if class == BONAFIDE_CLASS {
                BinaryLabel::Bonafide
            } else {
                BinaryLabel::Spoof
            };
            for n in 0..per_class {
                let features: Vec<f64> = center.iter().map(|&c| c + normal.sample(rng)).collect();
                records.push(LabeledEmbedding {
                    id: format!("{split}-{class}-{n:05}"),
                    features,
                    attack_class: class.clone(),
                    binary_label: binary,
                });
            }
        }
        EpisodeDataset::from_records(records)
    };

    let train = draw_split("train", &train_centers, config.train_per_class, &mut rng)?;
    let eval_seen = draw_split("evalseen", &train_centers, config.eval_per_class, &mut rng)?;
    let eval_unseen = draw_split("evalunseen", &unseen_centers, config.eval_per_class, &mut rng)?;

    Ok(SyntheticData {
        train,
        eval_seen,
        eval_unseen,
        train_centers,
        unseen_centers,
    })
}

/// Writes the generator provenance sidecar as key=value lines.
pub fn write_gen_metadata(path: &Path, config: &GenConfig, seed: u64, data: &SyntheticData) -> Result<()> {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    kv("dim", config.dim.to_string());
    kv("seen_attacks", config.seen_attacks.to_string());
    kv("unseen_attacks", config.unseen_attacks.to_string());
    kv("train_per_class", config.train_per_class.to_string());
    kv("eval_per_class", config.eval_per_class.to_string());
    kv("sigma", config.sigma.to_string());
    kv("separation", config.separation.to_string());
    kv("delta", config.delta.to_string());
    kv("channel_shift", config.channel_shift.to_string());
    kv("seed", seed.to_string());
    kv("train_records", data.train.len().to_string());
    kv("eval_seen_records", data.eval_seen.len().to_string());
    kv("eval_unseen_records", data.eval_unseen.len().to_string());
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_dataset() -> EpisodeDataset {
        // 10 records: 4 bonafide, 3 each of two attacks.
        let mut records = Vec::new();
        for i in 0..4 {
            records.push(LabeledEmbedding {
                id: format!("b{i}"),
                features: vec![0.0, i as f64],
                attack_class: BONAFIDE_CLASS.into(),
                binary_label: BinaryLabel::Bonafide,
            });
        }
        for i in 0..3 {
            records.push(LabeledEmbedding {
                id: format!("x{i}"),
                features: vec![1.0, i as f64],
                attack_class: "S01".into(),
                binary_label: BinaryLabel::Spoof,
            });
        }
        for i in 0..3 {
            records.push(LabeledEmbedding {
                id: format!("y{i}"),
                features: vec![2.0, i as f64],
                attack_class: "S02".into(),
                binary_label: BinaryLabel::Spoof,
            });
        }
        EpisodeDataset::from_records(records).unwrap()
    }

    #[test]
    fn parse_small_file() {
        let text = "id,attack_class,binary_label,f0,f1\n\
                    a,bonafide,bonafide,0.5,1.5\n\
                    b,S01,spoof,2.5,-3.5\n\
                    c,S01,spoof,1e-2,4.25\n";
        let ds = parse_dataset(text).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.n_classes(), 2);
        assert_eq!(ds.records()[2].features, vec![0.01, 4.25]);
    }

    #[test]
    fn parse_reports_ragged_line() {
        let text = "id,attack_class,binary_label,f0,f1\n\
                    a,bonafide,bonafide,0.5,1.5\n\
                    b,S01,spoof,2.5\n";
        let err = parse_dataset(text).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn parse_rejects_unknown_binary_label() {
        let text = "id,attack_class,binary_label,f0\n\
                    a,bonafide,genuine,0.5\n";
        assert!(matches!(parse_dataset(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn dataset_rejects_label_conflict() {
        let records = vec![LabeledEmbedding {
            id: "a".into(),
            features: vec![0.0],
            attack_class: BONAFIDE_CLASS.into(),
            binary_label: BinaryLabel::Spoof,
        }];
        assert!(EpisodeDataset::from_records(records).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        let ds = tiny_dataset();
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.records(), ds.records());
    }

    #[test]
    fn generator_is_deterministic_and_counts_match() {
        let cfg = GenConfig {
            train_per_class: 20,
            eval_per_class: 30,
            ..GenConfig::default()
        };
        let a = generate_synthetic(&cfg, 99).unwrap();
        let b = generate_synthetic(&cfg, 99).unwrap();
        assert_eq!(a.train.records(), b.train.records());
        assert_eq!(a.eval_unseen.records(), b.eval_unseen.records());

        assert_eq!(a.train.len(), (cfg.seen_attacks + 1) * cfg.train_per_class);
        assert_eq!(a.eval_seen.len(), (cfg.seen_attacks + 1) * cfg.eval_per_class);
        assert_eq!(a.eval_unseen.len(), (cfg.unseen_attacks + 1) * cfg.eval_per_class);
        for class in a.train.class_names() {
            assert_eq!(a.train.class_members(&class).unwrap().len(), cfg.train_per_class);
        }
    }

    #[test]
    fn nearest_center_oracle_separates_when_spread_is_small() {
        let cfg = GenConfig {
            sigma: 0.05,
            separation: 5.0,
            delta: 5.0,
            train_per_class: 50,
            eval_per_class: 50,
            ..GenConfig::default()
        };
        let data = generate_synthetic(&cfg, 7).unwrap();
        for (ds, centers) in [
            (&data.train, &data.train_centers),
            (&data.eval_unseen, &data.unseen_centers),
        ] {
            for r in ds.records() {
                let mut best = (f64::INFINITY, String::new());
                for (class, center) in centers.iter() {
                    let d: f64 = r
                        .features
                        .iter()
                        .zip(center)
                        .map(|(x, c)| (x - c) * (x - c))
                        .sum();
                    if d < best.0 {
                        best = (d, class.clone());
                    }
                }
                assert_eq!(best.1, r.attack_class, "record {} misclassified", r.id);
            }
        }
    }

    #[test]
    fn empirical_means_converge_to_centers() {
        let cfg = GenConfig {
            train_per_class: 4000,
            eval_per_class: 10,
            ..GenConfig::default()
        };
        let data = generate_synthetic(&cfg, 7).unwrap();
        let n = cfg.train_per_class as f64;
        let bound = 3.0 * cfg.sigma / n.sqrt();
        for (class, center) in &data.train_centers {
            let members = data.train.class_members(class).unwrap();
            for (coord, target) in center.iter().enumerate() {
                let mean: f64 = members
                    .iter()
                    .map(|&i| data.train.records()[i].features[coord])
                    .sum::<f64>()
                    / n;
                assert!(
                    (mean - target).abs() < bound,
                    "class {class} coord {coord}: |{mean} - {target}| >= {bound}"
                );
            }
        }
    }

    #[test]
    fn sample_task_counts_and_disjointness() {
        let ds = tiny_dataset();
        let spec = TaskSpec {
            n_way: 2,
            k_shot: 2,
            query_per_class: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let task = sample_task(&ds, &spec, &mut rng).unwrap();
        assert_eq!(task.support.len(), 4);
        assert_eq!(task.query.len(), 2);
        assert!(task.support_query_disjoint());
        for c in 0..2 {
            assert_eq!(task.support.iter().filter(|i| i.class == c).count(), 2);
        }
    }

    #[test]
    fn sample_task_all_classes_one_shot() {
        let ds = tiny_dataset();
        let spec = TaskSpec {
            n_way: 3,
            k_shot: 1,
            query_per_class: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let task = sample_task(&ds, &spec, &mut rng).unwrap();
        let mut seen: Vec<&String> = task.class_labels.iter().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 3);
        for c in 0..3 {
            assert_eq!(task.support.iter().filter(|i| i.class == c).count(), 1);
        }
    }

    #[test]
    fn sample_task_replays_with_same_seed() {
        let ds = tiny_dataset();
        let spec = TaskSpec { n_way: 2, k_shot: 1, query_per_class: 1 };
        let t1 = sample_task(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let t2 = sample_task(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let ids = |t: &Task| -> Vec<String> {
            t.support.iter().chain(&t.query).map(|i| i.id.clone()).collect()
        };
        assert_eq!(ids(&t1), ids(&t2));
    }

    #[test]
    fn sample_task_names_insufficient_class() {
        let ds = tiny_dataset();
        let spec = TaskSpec {
            n_way: 3,
            k_shot: 3,
            query_per_class: 3,
        };
        let err = sample_task(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        match err {
            Error::InsufficientClass { class, .. } => {
                assert!(class == BONAFIDE_CLASS || class.starts_with('S'));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn binary_support_counts_and_pooling() {
        let ds = tiny_dataset();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let task = sample_binary_support(&ds, 2, &mut rng).unwrap();
        assert_eq!(task.support.len(), 4);
        assert_eq!(task.query.len(), 6);
        assert!(task.support_query_disjoint());
        assert_eq!(task.class_labels, vec!["bonafide".to_string(), "spoof".to_string()]);
        // Pooled spoof support may mix S01 and S02; both map to class 1.
        assert_eq!(task.support.iter().filter(|i| i.class == 1).count(), 2);
    }

    #[test]
    fn binary_support_errors_when_short() {
        let ds = tiny_dataset();
        let err = sample_binary_support(&ds, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientClass { .. }));
    }

    #[test]
    fn nine_seeds_give_distinct_supports() {
        let cfg = GenConfig {
            train_per_class: 100,
            eval_per_class: 100,
            ..GenConfig::default()
        };
        let data = generate_synthetic(&cfg, 1).unwrap();
        let mut supports: Vec<Vec<String>> = Vec::new();
        for seed in 0..9u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let task = sample_binary_support(&data.eval_unseen, 4, &mut rng).unwrap();
            let mut ids: Vec<String> = task.support.iter().map(|i| i.id.clone()).collect();
            ids.sort();
            supports.push(ids);
        }
        supports.sort();
        supports.dedup();
        assert_eq!(supports.len(), 9, "expected nine distinct support sets");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn sampled_tasks_are_disjoint_and_reproducible(seed in 0u64..1000, k in 1usize..3) {
            let ds = tiny_dataset();
            let spec = TaskSpec { n_way: 2, k_shot: k, query_per_class: 1 };
            let t1 = sample_task(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let t2 = sample_task(&ds, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(t1.support_query_disjoint());
            let ids1: Vec<&str> = t1.support.iter().map(|i| i.id.as_str()).collect();
            let ids2: Vec<&str> = t2.support.iter().map(|i| i.id.as_str()).collect();
            prop_assert_eq!(ids1, ids2);
        }
    }
}
