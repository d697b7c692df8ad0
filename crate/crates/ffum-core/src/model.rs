//! Multilayer perceptron classifier: parameter layout, initialization,
//! forward pass onto a graph, parameter arithmetic, and a binary
//! checkpoint format.

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"FFUM";
const CHECKPOINT_VERSION: u16 = 1;

/// Architecture description. The parameter layout is a pure function of
/// this struct, so two vectors built from equal specs are always aligned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub use_layer_norm: bool,
}

impl ModelSpec {
    /// Default used for 14x14 grayscale images.
    pub fn small_image_default() -> Self {
        ModelSpec {
            input_dim: 196,
            hidden_dims: vec![128],
            num_classes: 10,
            use_layer_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("model input_dim must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("model needs at least two classes".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Config(
                "model needs at least one hidden layer of positive width".into(),
            ));
        }
        Ok(())
    }

    /// Segment names and shapes in storage order.
    pub fn segment_plan(&self) -> Vec<(String, Vec<usize>)> {
        let mut plan = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            plan.push((format!("layer{i}.weight"), vec![fan_in, h]));
            plan.push((format!("layer{i}.bias"), vec![h]));
            if self.use_layer_norm {
                plan.push((format!("layer{i}.ln_gain"), vec![h]));
                plan.push((format!("layer{i}.ln_bias"), vec![h]));
            }
            fan_in = h;
        }
        plan.push(("head.weight".into(), vec![fan_in, self.num_classes]));
        plan.push(("head.bias".into(), vec![self.num_classes]));
        plan
    }

    pub fn param_count(&self) -> usize {
        self.segment_plan()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }
}

/// One named parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// All parameters of a model, in the order given by `ModelSpec::segment_plan`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            let numel: usize = s.shape.iter().product();
            if numel != s.values.len() || s.shape.is_empty() {
                return Err(Error::Usage(format!(
                    "segment {} has shape {:?} but {} values",
                    s.name,
                    s.shape,
                    s.values.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("segment {}", s.name)));
            }
        }
        Ok(ParamVector { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn dim(&self) -> usize {
        self.segments.iter().map(|s| s.values.len()).sum()
    }

    /// True when this vector has exactly the layout `spec` prescribes.
    pub fn conforms_to(&self, spec: &ModelSpec) -> bool {
        let plan = spec.segment_plan();
        self.segments.len() == plan.len()
            && self
                .segments
                .iter()
                .zip(&plan)
                .all(|(s, (name, shape))| &s.name == name && &s.shape == shape)
    }

    fn aligned_with(&self, other: &ParamVector) -> Result<()> {
        let ok = self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if ok {
            Ok(())
        } else {
            Err(Error::Usage("parameter vectors are not aligned".into()))
        }
    }

    /// Flip the sign of every value in the named segment.
    pub fn negate_segment(&mut self, name: &str) -> Result<()> {
        let seg = self
            .segments
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Usage(format!("no segment named {name}")))?;
        for v in &mut seg.values {
            *v = -*v;
        }
        Ok(())
    }

    /// Sum of weighted deviations from this vector, added in the order
    /// given: `self + sum_i w_i (x_i - self)`. Exact when every `x_i`
    /// equals `self`, because every delta is exactly zero.
    pub(crate) fn blend_towards(&self, others: &[(&ParamVector, f64)]) -> Result<ParamVector> {
        let mut out = self.clone();
        for (x, _) in others {
            self.aligned_with(x)?;
        }
        for (si, seg) in out.segments.iter_mut().enumerate() {
            for (vi, v) in seg.values.iter_mut().enumerate() {
                let anchor = *v;
                let mut acc = anchor;
                for (x, w) in others {
                    acc += w * (x.segments[si].values[vi] - anchor);
                }
                *v = acc;
            }
        }
        ParamVector::from_segments(out.segments)
    }
}

/// `a * x + y`, segmentwise. The operands must be aligned.
pub fn param_axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    x.aligned_with(y)?;
    if !a.is_finite() {
        return Err(Error::non_finite("axpy coefficient"));
    }
    let segments = x
        .segments
        .iter()
        .zip(&y.segments)
        .map(|(sx, sy)| {
            let values: Vec<f64> = sx
                .values
                .iter()
                .zip(&sy.values)
                .map(|(vx, vy)| a * vx + vy)
                .collect();
            Segment { name: sx.name.clone(), shape: sx.shape.clone(), values }
        })
        .collect();
    ParamVector::from_segments(segments)
}

/// Euclidean distance between two aligned parameter vectors.
pub fn param_distance(x: &ParamVector, y: &ParamVector) -> Result<f64> {
    x.aligned_with(y)?;
    let mut acc = 0.0;
    for (sx, sy) in x.segments.iter().zip(&y.segments) {
        for (vx, vy) in sx.values.iter().zip(&sy.values) {
            let d = vx - vy;
            acc += d * d;
        }
    }
    Ok(acc.sqrt())
}

/// Xavier-uniform weights, zero biases, unit normalization gains.
/// Deterministic in `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = spec
        .segment_plan()
        .into_iter()
        .map(|(name, shape)| {
            let numel: usize = shape.iter().product();
            let values = if name.ends_with(".weight") {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-limit..limit)).collect()
            } else if name.ends_with(".ln_gain") {
                vec![1.0; numel]
            } else {
                vec![0.0; numel]
            };
            Segment { name, shape, values }
        })
        .collect();
    ParamVector::from_segments(segments)
}

/// Handle returned by `forward_logits`: the logits node plus the leaf node
/// of every parameter segment, in segment order.
pub struct ForwardPass {
    pub logits: NodeId,
    param_nodes: Vec<(String, NodeId)>,
}

impl ForwardPass {
    /// Assemble the parameter gradient as a vector aligned with the
    /// parameters that produced this pass.
    pub fn param_gradients(&self, graph: &Graph, grads: &mut Gradients) -> Result<ParamVector> {
        let segments = self
            .param_nodes
            .iter()
            .map(|(name, id)| {
                let shape = graph.value(*id).shape().to_vec();
                let values = grads.take(*id).into_data();
                Segment { name: name.clone(), shape, values }
            })
            .collect();
        ParamVector::from_segments(segments)
    }
}

/// Run the model forward on a batch of rows, appending to `graph`.
/// Chain per hidden layer: linear, optional layer norm, relu; then a
/// linear head.
pub fn forward_logits(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Tensor,
    graph: &mut Graph,
) -> Result<ForwardPass> {
    if !params.conforms_to(spec) {
        return Err(Error::Usage(
            "parameter vector does not match the model description".into(),
        ));
    }
    let (_, cols) = batch.row_shape();
    if batch.shape().len() != 2 || cols != spec.input_dim {
        return Err(Error::ShapeMismatch {
            op: "forward_logits",
            detail: format!(
                "batch shape {:?} vs input_dim {}",
                batch.shape(),
                spec.input_dim
            ),
        });
    }

    let mut param_nodes = Vec::with_capacity(params.segments.len());
    let mut leaf_of = |g: &mut Graph, seg: &Segment| -> Result<NodeId> {
        let id = g.leaf(Tensor::new(seg.shape.clone(), seg.values.clone())?);
        param_nodes.push((seg.name.clone(), id));
        Ok(id)
    };

    let mut x = graph.leaf(batch.clone());
    let mut seg_iter = params.segments.iter();
    for _ in 0..spec.hidden_dims.len() {
        let w = leaf_of(graph, seg_iter.next().expect("aligned"))?;
        let b = leaf_of(graph, seg_iter.next().expect("aligned"))?;
        let z = graph.matmul(x, w)?;
        let z = graph.add(z, b)?;
        let z = if spec.use_layer_norm {
            let gain = leaf_of(graph, seg_iter.next().expect("aligned"))?;
            let bias = leaf_of(graph, seg_iter.next().expect("aligned"))?;
            graph.layer_norm(z, gain, bias)?
        } else {
            z
        };
        x = graph.relu(z)?;
    }
    let w = leaf_of(graph, seg_iter.next().expect("aligned"))?;
    let b = leaf_of(graph, seg_iter.next().expect("aligned"))?;
    let z = graph.matmul(x, w)?;
    let logits = graph.add(z, b)?;
    Ok(ForwardPass { logits, param_nodes })
}

/// Plain inference: logits for a batch without keeping the graph.
pub fn inference_logits(spec: &ModelSpec, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
    let mut graph = Graph::new();
    let pass = forward_logits(spec, params, batch, &mut graph)?;
    Ok(graph.value(pass.logits).clone())
}

// --- checkpoint format ---------------------------------------------------
//
// magic "FFUM", version u16, segment count u32, then per segment: name
// length u16, name bytes, rank u8, dims u32 each, f64 payload. All integers
// and floats little-endian.

pub fn write_checkpoint<W: Write>(params: &ParamVector, mut w: W) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(params.segments.len() as u32).to_le_bytes())?;
    for s in &params.segments {
        let name = s.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::Usage(format!("segment name too long: {}", s.name)));
        }
        if s.shape.len() > u8::MAX as usize {
            return Err(Error::Usage(format!("segment rank too large: {}", s.name)));
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[s.shape.len() as u8])?;
        for &d in &s.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &s.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct CountingReader<R> {
    inner: R,
    pos: u64,
}

impl<R: Read> CountingReader<R> {
    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.pos;
        self.inner.read_exact(buf).map_err(|e| Error::Ingest {
            message: format!("truncated while reading {what}: {e}"),
            offset: at,
        })?;
        self.pos += buf.len() as u64;
        Ok(())
    }
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<ParamVector> {
    let mut r = CountingReader { inner: reader, pos: 0 };
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Ingest { message: format!("bad magic {magic:?}"), offset: 0 });
    }
    let mut v2 = [0u8; 2];
    r.take(&mut v2, "version")?;
    let version = u16::from_le_bytes(v2);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Ingest {
            message: format!("unsupported checkpoint version {version}"),
            offset: 4,
        });
    }
    let mut v4 = [0u8; 4];
    r.take(&mut v4, "segment count")?;
    let count = u32::from_le_bytes(v4) as usize;
    let mut segments = Vec::with_capacity(count);
    for i in 0..count {
        r.take(&mut v2, "name length")?;
        let name_len = u16::from_le_bytes(v2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        let name_at = r.pos;
        r.take(&mut name_bytes, "segment name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Ingest {
            message: format!("segment {i} name is not utf-8"),
            offset: name_at,
        })?;
        let mut rank = [0u8; 1];
        r.take(&mut rank, "rank")?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            r.take(&mut v4, "dimension")?;
            shape.push(u32::from_le_bytes(v4) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut v8 = [0u8; 8];
        for _ in 0..numel {
            r.take(&mut v8, "payload")?;
            values.push(f64::from_le_bytes(v8));
        }
        segments.push(Segment { name, shape, values });
    }
    ParamVector::from_segments(segments)
}

/// Write a checkpoint file atomically (temp file in the same directory,
/// then rename).
pub fn save_checkpoint(params: &ParamVector, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into())
    ));
    {
        let mut f = std::fs::File::create(&tmp)?;
        write_checkpoint(params, &mut f)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
