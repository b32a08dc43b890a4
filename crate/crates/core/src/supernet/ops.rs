//! Candidate operations instantiated on one edge, and the mixed edge.

use rand::Rng;

use super::engine::{NodeId, ParamId, ParamStore, Tape, Tensor};
use super::kernels::ConvGeom;
use crate::error::{Error, Result};
use crate::search_space::{softmax, OpKind};

/// One candidate operation on one edge, with its own weights.
///
/// Convolutional kinds are ReLU-first. Separable convolutions apply
/// depthwise+pointwise twice (only the first depthwise is strided); dilated
/// convolutions use dilation 2. `skip_connect` with stride 2 is a ReLU plus
/// a learnable strided 1x1 projection. `zero` has no weights and no output.
#[derive(Clone, Debug)]
pub struct OpInstance {
    kind: OpKind,
    channels: usize,
    stride: usize,
    params: Vec<ParamId>,
}

pub(crate) fn kaiming_uniform<R: Rng + ?Sized>(shape: [usize; 4], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn depthwise(channels: usize, kernel: usize, stride: usize, dilation: usize) -> ConvGeom {
    ConvGeom {
        in_channels: channels,
        out_channels: channels,
        kernel,
        stride,
        padding: dilation * (kernel / 2),
        dilation,
        groups: channels,
    }
}

fn pointwise(channels: usize, stride: usize) -> ConvGeom {
    ConvGeom {
        in_channels: channels,
        out_channels: channels,
        kernel: 1,
        stride,
        padding: 0,
        dilation: 1,
        groups: 1,
    }
}

impl OpInstance {
    pub fn new<R: Rng + ?Sized>(
        kind: OpKind,
        channels: usize,
        stride: usize,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut R,
    ) -> Self {
        assert!(stride == 1 || stride == 2, "stride must be 1 or 2");
        let geoms = Self::geoms(kind, channels, stride);
        let params = geoms
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let w = kaiming_uniform(g.weight_shape(), g.fan_in(), rng);
                store.add(format!("{prefix}.{}.{i}", kind.name()), w)
            })
            .collect();
        Self {
            kind,
            channels,
            stride,
            params,
        }
    }

    /// Convolutions applied in order (empty for parameter-free kinds).
    fn geoms(kind: OpKind, c: usize, s: usize) -> Vec<ConvGeom> {
        match kind {
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if kind == OpKind::SepConv3x3 { 3 } else { 5 };
                vec![depthwise(c, k, s, 1), pointwise(c, 1), depthwise(c, k, 1, 1), pointwise(c, 1)]
            }
            OpKind::DilConv3x3 => vec![depthwise(c, 3, s, 2), pointwise(c, 1)],
            OpKind::DilConv5x5 => vec![depthwise(c, 5, s, 2), pointwise(c, 1)],
            OpKind::SkipConnect if s == 2 => vec![pointwise(c, 2)],
            _ => Vec::new(),
        }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// Apply the operation. `x_relu` must be `relu(x)`; it is shared by all
    /// ReLU-first kinds on an edge. Returns `None` for `zero`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, x_relu: NodeId) -> Result<Option<NodeId>> {
        let geoms = Self::geoms(self.kind, self.channels, self.stride);
        let out = match self.kind {
            OpKind::Zero => return Ok(None),
            OpKind::MaxPool3x3 => tape.max_pool3x3(x, self.stride)?,
            OpKind::AvgPool3x3 => tape.avg_pool3x3(x, self.stride)?,
            OpKind::SkipConnect if self.stride == 1 => x,
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let h = tape.conv2d(store, x_relu, self.params[0], geoms[0])?;
                let h = tape.conv2d(store, h, self.params[1], geoms[1])?;
                let h = tape.relu(h);
                let h = tape.conv2d(store, h, self.params[2], geoms[2])?;
                tape.conv2d(store, h, self.params[3], geoms[3])?
            }
            OpKind::DilConv3x3 | OpKind::DilConv5x5 => {
                let h = tape.conv2d(store, x_relu, self.params[0], geoms[0])?;
                tape.conv2d(store, h, self.params[1], geoms[1])?
            }
            OpKind::SkipConnect => tape.conv2d(store, x_relu, self.params[0], geoms[0])?,
        };
        Ok(Some(out))
    }
}

/// Softmax-weighted sum of precomputed op outputs; `None` entries are `zero`
/// ops, which take part in the softmax but contribute nothing.
pub fn mix(tape: &mut Tape, outputs: &[Option<NodeId>], weights_row: &[f64]) -> Result<NodeId> {
    if outputs.len() != weights_row.len() {
        return Err(Error::Shape(format!(
            "{} operation outputs but {} weights",
            outputs.len(),
            weights_row.len()
        )));
    }
    let probs = softmax(weights_row);
    let terms: Vec<(NodeId, f32)> = outputs
        .iter()
        .zip(&probs)
        .filter_map(|(o, &p)| o.map(|id| (id, p as f32)))
        .collect();
    if terms.is_empty() {
        return Err(Error::Shape("mixed edge has only zero operations".into()));
    }
    tape.weighted_sum(&terms)
}

/// Every candidate op on `x`, combined by the softmax of `weights_row`.
pub fn mixed_edge_forward(
    tape: &mut Tape,
    store: &ParamStore,
    x: NodeId,
    x_relu: NodeId,
    edge_ops: &[OpInstance],
    weights_row: &[f64],
) -> Result<NodeId> {
    if edge_ops.len() != weights_row.len() {
        return Err(Error::Shape(format!(
            "edge has {} operations but the weight row has {} entries",
            edge_ops.len(),
            weights_row.len()
        )));
    }
    let outputs = edge_ops
        .iter()
        .map(|op| op.forward(tape, store, x, x_relu))
        .collect::<Result<Vec<_>>>()?;
    mix(tape, &outputs, weights_row)
}
