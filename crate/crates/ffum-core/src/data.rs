//! Datasets, ingestion, partitioning, and corruption scenarios.
//!
//! A scenario turns one base dataset into client shards plus a held-out
//! test split, stamps corruption onto the examples that are supposed to be
//! unlearned, and records which examples those are via per-shard forget
//! masks and per-example provenance flags.

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const BLOB_NOISE_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Clean,
    Backdoored,
    Confused,
}

/// Labeled examples: one image per row, pixel values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Tensor,
    labels: Vec<usize>,
    provenance: Vec<Provenance>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (rows, _) = images.row_shape();
        if images.shape().len() != 2 {
            return Err(Error::Usage("dataset images must be a rank-2 tensor".into()));
        }
        if labels.len() != rows {
            return Err(Error::Usage(format!(
                "{} labels for {} images",
                labels.len(),
                rows
            )));
        }
        if num_classes < 2 {
            return Err(Error::Usage("dataset needs at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Usage(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Usage("pixel values must lie in [0,1]".into()));
        }
        let provenance = vec![Provenance::Clean; rows];
        Ok(LabeledDataset { images, labels, provenance, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.row_shape().1
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::Usage("cannot build an empty dataset subset".into()));
        }
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let provenance = indices.iter().map(|&i| self.provenance[i]).collect();
        Ok(LabeledDataset { images, labels, provenance, num_classes: self.num_classes })
    }

    fn image_side(&self) -> Result<usize> {
        let d = self.dim();
        let side = (d as f64).sqrt().round() as usize;
        if side * side != d {
            return Err(Error::Config(format!(
                "corruption needs square images, but dim {d} is not a perfect square"
            )));
        }
        Ok(side)
    }
}

/// Concatenate datasets with identical width and class count.
pub fn merge_datasets(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Usage("merge needs at least one dataset".into()))?;
    let (dim, classes) = (first.dim(), first.num_classes);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut provenance = Vec::new();
    for p in parts {
        if p.dim() != dim || p.num_classes != classes {
            return Err(Error::Usage("merge needs identically shaped datasets".into()));
        }
        data.extend_from_slice(p.images.data());
        labels.extend_from_slice(&p.labels);
        provenance.extend_from_slice(&p.provenance);
    }
    let images = Tensor::new(vec![labels.len(), dim], data)?;
    Ok(LabeledDataset { images, labels, provenance, num_classes: classes })
}

/// One client's slice of the data plus its forget mask.
#[derive(Debug, Clone)]
pub struct ClientShard {
    pub client_id: usize,
    pub data: LabeledDataset,
    pub forget_mask: Vec<bool>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of examples marked for forgetting.
    pub fn n_f(&self) -> usize {
        self.forget_mask.iter().filter(|&&m| m).count()
    }

    /// Number of retained examples.
    pub fn n_r(&self) -> usize {
        self.len() - self.n_f()
    }

    pub fn forget_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.forget_mask[i]).collect()
    }

    pub fn retain_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.forget_mask[i]).collect()
    }

    pub fn forget_data(&self) -> Result<LabeledDataset> {
        self.data.subset(&self.forget_indices())
    }

    pub fn retain_data(&self) -> Result<LabeledDataset> {
        self.data.subset(&self.retain_indices())
    }

    /// Shard with the forget examples removed; `None` when nothing is left.
    pub fn without_forgotten(&self) -> Result<Option<ClientShard>> {
        let keep = self.retain_indices();
        if keep.is_empty() {
            return Ok(None);
        }
        Ok(Some(ClientShard {
            client_id: self.client_id,
            data: self.data.subset(&keep)?,
            forget_mask: vec![false; keep.len()],
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    None,
    Backdoor,
    Confusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    BottomRight,
    BottomLeft,
    TopRight,
    TopLeft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    #[serde(default)]
    pub backdoor_target_class: usize,
    #[serde(default = "default_trigger_size")]
    pub trigger_size: usize,
    #[serde(default = "default_trigger_corner")]
    pub trigger_corner: Corner,
    #[serde(default = "default_trigger_value")]
    pub trigger_value: f64,
    #[serde(default = "default_confuse_pairs")]
    pub confuse_pairs: Vec<(usize, usize)>,
}

fn default_trigger_size() -> usize {
    3
}
fn default_trigger_corner() -> Corner {
    Corner::BottomRight
}
fn default_trigger_value() -> f64 {
    1.0
}
fn default_confuse_pairs() -> Vec<(usize, usize)> {
    vec![(1, 2), (3, 4)]
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            kind: CorruptionKind::None,
            backdoor_target_class: 0,
            trigger_size: default_trigger_size(),
            trigger_corner: default_trigger_corner(),
            trigger_value: default_trigger_value(),
            confuse_pairs: default_confuse_pairs(),
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.kind {
            CorruptionKind::Backdoor => {
                if self.backdoor_target_class >= num_classes {
                    return Err(Error::Config(format!(
                        "backdoor target class {} out of range for {} classes",
                        self.backdoor_target_class, num_classes
                    )));
                }
                if self.trigger_size == 0 {
                    return Err(Error::Config("trigger_size must be positive".into()));
                }
                if !(0.0..=1.0).contains(&self.trigger_value) {
                    return Err(Error::Config("trigger_value must lie in [0,1]".into()));
                }
            }
            CorruptionKind::Confusion => {
                if self.confuse_pairs.is_empty() {
                    return Err(Error::Config("confusion needs at least one label pair".into()));
                }
                let mut seen = vec![false; num_classes];
                for &(a, b) in &self.confuse_pairs {
                    if a >= num_classes || b >= num_classes || a == b {
                        return Err(Error::Config(format!(
                            "bad confusion pair ({a},{b}) for {num_classes} classes"
                        )));
                    }
                    if seen[a] || seen[b] {
                        return Err(Error::Config(
                            "confusion pairs must not share classes".into(),
                        ));
                    }
                    seen[a] = true;
                    seen[b] = true;
                }
            }
            CorruptionKind::None => {}
        }
        Ok(())
    }

    fn swapped_label(&self, label: usize) -> Option<usize> {
        for &(a, b) in &self.confuse_pairs {
            if label == a {
                return Some(b);
            }
            if label == b {
                return Some(a);
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioLevel {
    Client,
    Data,
}

/// How the base dataset is split into clients and which part is slated for
/// removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub level: ScenarioLevel,
    pub num_clients: usize,
    #[serde(default = "default_target_clients")]
    pub target_clients: Vec<usize>,
    #[serde(default = "default_corrupted_fraction")]
    pub corrupted_fraction: f64,
    #[serde(default = "default_forget_fraction")]
    pub forget_fraction: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_target_clients() -> Vec<usize> {
    vec![0]
}
fn default_corrupted_fraction() -> f64 {
    0.8
}
fn default_forget_fraction() -> f64 {
    0.02
}
fn default_test_fraction() -> f64 {
    0.2
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be positive".into()));
        }
        for f in [self.corrupted_fraction, self.forget_fraction] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("fractions must lie in [0,1], got {f}")));
            }
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0,1)".into()));
        }
        if self.level == ScenarioLevel::Client {
            if self.target_clients.is_empty() {
                return Err(Error::Config(
                    "client-level scenario needs at least one target client".into(),
                ));
            }
            if self.target_clients.len() >= self.num_clients {
                return Err(Error::Config(
                    "at least one client must remain after removal".into(),
                ));
            }
            if let Some(&bad) = self.target_clients.iter().find(|&&c| c >= self.num_clients) {
                return Err(Error::Config(format!(
                    "target client {bad} out of range for {} clients",
                    self.num_clients
                )));
            }
        }
        Ok(())
    }
}

// --- ingestion -------------------------------------------------------------

fn read_be_u32<R: Read>(r: &mut R, pos: &mut u64, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    let at = *pos;
    r.read_exact(&mut buf).map_err(|e| Error::Ingest {
        message: format!("truncated while reading {what}: {e}"),
        offset: at,
    })?;
    *pos += 4;
    Ok(u32::from_be_bytes(buf))
}

/// Load an images/labels file pair in the classic big-endian IDX layout.
/// Pixels are scaled to `[0,1]`; `downsample_to` area-averages square
/// images down to `side x side`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
    downsample_to: Option<usize>,
) -> Result<LabeledDataset> {
    let mut imgf = std::fs::File::open(images_path)?;
    let mut pos = 0u64;
    let magic = read_be_u32(&mut imgf, &mut pos, "images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Ingest {
            message: format!("bad images magic {magic:#010x}"),
            offset: 0,
        });
    }
    let n = read_be_u32(&mut imgf, &mut pos, "image count")? as usize;
    let rows = read_be_u32(&mut imgf, &mut pos, "row count")? as usize;
    let cols = read_be_u32(&mut imgf, &mut pos, "column count")? as usize;
    let keep = limit.map_or(n, |l| l.min(n));
    let mut pixels = vec![0u8; keep * rows * cols];
    imgf.read_exact(&mut pixels).map_err(|e| Error::Ingest {
        message: format!("truncated image payload: {e}"),
        offset: pos,
    })?;

    let mut lblf = std::fs::File::open(labels_path)?;
    let mut lpos = 0u64;
    let lmagic = read_be_u32(&mut lblf, &mut lpos, "labels magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Ingest {
            message: format!("bad labels magic {lmagic:#010x}"),
            offset: 0,
        });
    }
    let ln = read_be_u32(&mut lblf, &mut lpos, "label count")? as usize;
    if ln != n {
        return Err(Error::Ingest {
            message: format!("label count {ln} does not match image count {n}"),
            offset: 4,
        });
    }
    let mut raw_labels = vec![0u8; ln];
    lblf.read_exact(&mut raw_labels).map_err(|e| Error::Ingest {
        message: format!("truncated label payload: {e}"),
        offset: lpos,
    })?;
    // The label space comes from the whole file, not just the rows kept.
    let num_classes = raw_labels.iter().copied().max().unwrap_or(0) as usize + 1;
    if num_classes < 2 {
        return Err(Error::Ingest {
            message: "labels describe fewer than two classes".into(),
            offset: 8,
        });
    }
    let labels: Vec<usize> = raw_labels[..keep].iter().map(|&l| l as usize).collect();

    let scaled: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let images = match downsample_to {
        None => Tensor::new(vec![keep, rows * cols], scaled)?,
        Some(side) => {
            if rows != cols {
                return Err(Error::Ingest {
                    message: format!("downsampling needs square images, got {rows}x{cols}"),
                    offset: 8,
                });
            }
            if side == 0 || rows % side != 0 {
                return Err(Error::Ingest {
                    message: format!("cannot area-average {rows}x{rows} down to {side}x{side}"),
                    offset: 8,
                });
            }
            let f = rows / side;
            let mut out = Vec::with_capacity(keep * side * side);
            for img in 0..keep {
                let base = img * rows * cols;
                for r in 0..side {
                    for c in 0..side {
                        let mut acc = 0.0;
                        for dr in 0..f {
                            for dc in 0..f {
                                acc += scaled[base + (r * f + dr) * cols + (c * f + dc)];
                            }
                        }
                        out.push(acc / (f * f) as f64);
                    }
                }
            }
            Tensor::new(vec![keep, side * side], out)?
        }
    };
    LabeledDataset::new(images, labels, num_classes)
}

// --- synthetic data --------------------------------------------------------

/// Gaussian class blobs: class `c` is drawn around `spread * e_c` with a
/// fixed noise scale, clipped to the pixel range. Deterministic in `seed`.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || per_class == 0 {
        return Err(Error::Config(
            "synthetic blobs need at least two classes and one example per class".into(),
        ));
    }
    if dim < num_classes {
        return Err(Error::Config(format!(
            "blob dim {dim} must be at least the class count {num_classes}"
        )));
    }
    if !spread.is_finite() || spread < 0.0 {
        return Err(Error::Config(format!("blob spread must be >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, BLOB_NOISE_SIGMA).expect("valid sigma");
    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        for _ in 0..per_class {
            for k in 0..dim {
                let center = if k == c { spread.min(1.0) } else { 0.0 };
                let v: f64 = center + noise.sample(&mut rng);
                data.push(v.clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![labels.len(), dim], data)?;
    LabeledDataset::new(images, labels, num_classes)
}

// --- partitioning and corruption -------------------------------------------

/// Shuffle and deal examples into near-equal shards (sizes differ by at
/// most one). Forget masks start empty.
pub fn partition_iid(ds: &LabeledDataset, num_clients: usize, seed: u64) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::Config("num_clients must be positive".into()));
    }
    if ds.len() < num_clients {
        return Err(Error::Config(format!(
            "cannot split {} examples across {num_clients} clients",
            ds.len()
        )));
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = ds.len() / num_clients;
    let extra = ds.len() % num_clients;
    let mut shards = Vec::with_capacity(num_clients);
    let mut start = 0;
    for client_id in 0..num_clients {
        let size = base + usize::from(client_id < extra);
        let mut chunk = indices[start..start + size].to_vec();
        chunk.sort_unstable();
        start += size;
        let data = ds.subset(&chunk)?;
        let forget_mask = vec![false; data.len()];
        shards.push(ClientShard { client_id, data, forget_mask });
    }
    Ok(shards)
}

fn choose_examples(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction must lie in [0,1], got {fraction}")));
    }
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(count);
    indices.sort_unstable();
    Ok(indices)
}

fn stamp_trigger(ds: &mut LabeledDataset, example: usize, spec: &CorruptionSpec) -> Result<()> {
    let side = ds.image_side()?;
    if spec.trigger_size > side {
        return Err(Error::Config(format!(
            "trigger {}x{} does not fit a {side}x{side} image",
            spec.trigger_size, spec.trigger_size
        )));
    }
    let ts = spec.trigger_size;
    let (r0, c0) = match spec.trigger_corner {
        Corner::BottomRight => (side - ts, side - ts),
        Corner::BottomLeft => (side - ts, 0),
        Corner::TopRight => (0, side - ts),
        Corner::TopLeft => (0, 0),
    };
    let dim = side * side;
    let data = ds.images.data_mut();
    for r in r0..r0 + ts {
        for c in c0..c0 + ts {
            data[example * dim + r * side + c] = spec.trigger_value;
        }
    }
    Ok(())
}

/// Stamp the trigger patch onto a deterministic fraction of the shard,
/// relabel those examples to the target class, and mark them forgettable.
/// Applying twice with the same seed changes nothing the second time.
pub fn apply_backdoor(
    shard: &mut ClientShard,
    fraction: f64,
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<()> {
    spec.validate(shard.data.num_classes)?;
    for &i in &choose_examples(shard.len(), fraction, seed)? {
        stamp_trigger(&mut shard.data, i, spec)?;
        shard.data.labels[i] = spec.backdoor_target_class;
        shard.data.provenance[i] = Provenance::Backdoored;
        shard.forget_mask[i] = true;
    }
    Ok(())
}

/// Swap the labels of a deterministic fraction of the shard according to
/// the confusion pairs. Chosen examples whose label belongs to no pair keep
/// their label but are still flagged and masked. Applying twice with the
/// same seed restores the original labels.
pub fn apply_confusion(
    shard: &mut ClientShard,
    fraction: f64,
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<()> {
    spec.validate(shard.data.num_classes)?;
    for &i in &choose_examples(shard.len(), fraction, seed)? {
        if let Some(swapped) = spec.swapped_label(shard.data.labels[i]) {
            shard.data.labels[i] = swapped;
        }
        shard.data.provenance[i] = Provenance::Confused;
        shard.forget_mask[i] = true;
    }
    Ok(())
}

/// Copy of a dataset with the trigger stamped onto every image; labels are
/// left alone. Used to measure the trigger's success rate.
pub fn triggered_variant(ds: &LabeledDataset, spec: &CorruptionSpec) -> Result<LabeledDataset> {
    let mut out = ds.clone();
    for i in 0..out.len() {
        stamp_trigger(&mut out, i, spec)?;
    }
    Ok(out)
}

/// Mark a deterministic fraction of the shard for forgetting without
/// touching pixels or labels (clean deletion).
pub fn select_forget(shard: &mut ClientShard, fraction: f64, seed: u64) -> Result<()> {
    for &i in &choose_examples(shard.len(), fraction, seed)? {
        shard.forget_mask[i] = true;
    }
    Ok(())
}

/// Carve the held-out test split, partition the rest across clients, and
/// apply the scenario's corruption and forget masks.
pub fn build_scenario(
    base: &LabeledDataset,
    scenario: &ScenarioSpec,
    corruption: &CorruptionSpec,
    seed: u64,
) -> Result<(Vec<ClientShard>, LabeledDataset)> {
    scenario.validate()?;
    corruption.validate(base.num_classes)?;

    // Stratified test split, carved before any partitioning.
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, "test-split", 0, 0));
    let mut test_indices = Vec::new();
    let mut train_indices = Vec::new();
    for class in 0..base.num_classes {
        let mut members: Vec<usize> =
            (0..base.len()).filter(|&i| base.labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = (scenario.test_fraction * members.len() as f64).round() as usize;
        let n_test = n_test.min(members.len());
        test_indices.extend_from_slice(&members[..n_test]);
        train_indices.extend_from_slice(&members[n_test..]);
    }
    if test_indices.is_empty() || train_indices.len() < scenario.num_clients {
        return Err(Error::Config(
            "dataset too small for the requested split and client count".into(),
        ));
    }
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    let test = base.subset(&test_indices)?;
    let train = base.subset(&train_indices)?;

    let mut shards =
        partition_iid(&train, scenario.num_clients, seed::derive(seed, "partition", 0, 0))?;

    match scenario.level {
        ScenarioLevel::Client => {
            for &target in &scenario.target_clients {
                let shard = &mut shards[target];
                let cseed = seed::derive(seed, "corrupt", target as u64, 0);
                match corruption.kind {
                    CorruptionKind::Backdoor => {
                        apply_backdoor(shard, scenario.corrupted_fraction, corruption, cseed)?
                    }
                    CorruptionKind::Confusion => {
                        apply_confusion(shard, scenario.corrupted_fraction, corruption, cseed)?
                    }
                    CorruptionKind::None => {}
                }
                // The whole client leaves, uncorrupted remainder included.
                shard.forget_mask.iter_mut().for_each(|m| *m = true);
            }
        }
        ScenarioLevel::Data => {
            for shard in &mut shards {
                let cseed = seed::derive(seed, "corrupt", shard.client_id as u64, 0);
                match corruption.kind {
                    CorruptionKind::Backdoor => {
                        apply_backdoor(shard, scenario.forget_fraction, corruption, cseed)?
                    }
                    CorruptionKind::Confusion => {
                        apply_confusion(shard, scenario.forget_fraction, corruption, cseed)?
                    }
                    CorruptionKind::None => {
                        select_forget(shard, scenario.forget_fraction, cseed)?
                    }
                }
            }
        }
    }
    Ok((shards, test))
}
