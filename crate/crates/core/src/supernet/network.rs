//! The stacked-cell one-shot network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{NodeId, ParamId, ParamStore, Tape, Tensor};
use super::kernels::ConvGeom;
use super::ops::{kaiming_uniform, mixed_edge_forward, OpInstance};
use crate::error::{Error, Result};
use crate::search_space::{ArchParam, CellKind, CellTopology, OperationSpace};

/// Sizes of a supernet. Serialized into checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupernetConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub num_classes: usize,
    /// Channels per node in the first cell; doubled at every reduction cell.
    pub channels: usize,
    pub num_cells: usize,
    pub stem_multiplier: usize,
    pub cell_inputs: usize,
    pub cell_intermediates: usize,
    pub ops: OperationSpace,
}

impl Default for SupernetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            image_size: 16,
            num_classes: 4,
            channels: 8,
            num_cells: 4,
            stem_multiplier: 3,
            cell_inputs: 2,
            cell_intermediates: 4,
            ops: OperationSpace::darts(),
        }
    }
}

impl SupernetConfig {
    pub fn topology(&self) -> Result<CellTopology> {
        CellTopology::new(self.cell_inputs, self.cell_intermediates)
    }

    /// Cell indices holding reduction cells: floor(L/3) and floor(2L/3).
    pub fn reduction_positions(&self) -> Vec<usize> {
        let mut v = vec![self.num_cells / 3, 2 * self.num_cells / 3];
        v.dedup();
        v
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("image_size", self.image_size),
            ("num_classes", self.num_classes),
            ("channels", self.channels),
            ("num_cells", self.num_cells),
            ("stem_multiplier", self.stem_multiplier),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("supernet {name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("supernet needs at least 2 classes".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Preprocess {
    weight: ParamId,
    geom: ConvGeom,
}

#[derive(Clone, Debug)]
struct Cell {
    reduction: bool,
    preprocess: Vec<Preprocess>,
    /// `edges[e][column]`
    edges: Vec<Vec<OpInstance>>,
}

/// One-shot model: every candidate op of every edge, one shared weight set.
#[derive(Clone, Debug)]
pub struct Supernet {
    config: SupernetConfig,
    topology: CellTopology,
    params: ParamStore,
    stem: ParamId,
    stem_geom: ConvGeom,
    cells: Vec<Cell>,
    classifier: (ParamId, ParamId),
}

impl Supernet {
    pub fn new<R: Rng + ?Sized>(config: SupernetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let topology = config.topology()?;
        let mut params = ParamStore::new();
        let stem_channels = config.stem_multiplier * config.channels;
        let stem_geom = ConvGeom {
            in_channels: config.in_channels,
            out_channels: stem_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
            dilation: 1,
            groups: 1,
        };
        let stem = params.add("stem", kaiming_uniform(stem_geom.weight_shape(), stem_geom.fan_in(), rng));

        // (channels, reductions applied so far) of every tensor a cell can read
        let mut history: Vec<(usize, u32)> = vec![(stem_channels, 0); config.cell_inputs];
        let reductions = config.reduction_positions();
        let mut c = config.channels;
        let mut reduced = 0u32;
        let mut cells = Vec::with_capacity(config.num_cells);
        for i in 0..config.num_cells {
            let reduction = reductions.contains(&i);
            if reduction {
                c *= 2;
            }
            let mut preprocess = Vec::with_capacity(config.cell_inputs);
            for j in 0..config.cell_inputs {
                let (cin, r) = history[i + j];
                let stride = 1usize << (reduced - r);
                let geom = ConvGeom {
                    in_channels: cin,
                    out_channels: c,
                    kernel: 1,
                    stride,
                    padding: 0,
                    dilation: 1,
                    groups: 1,
                };
                let weight = params.add(
                    format!("cell{i}.pre{j}"),
                    kaiming_uniform(geom.weight_shape(), geom.fan_in(), rng),
                );
                preprocess.push(Preprocess { weight, geom });
            }
            let mut edges = Vec::with_capacity(topology.num_edges());
            for (e, edge) in topology.edges().iter().enumerate() {
                let stride = if reduction && edge.source < config.cell_inputs { 2 } else { 1 };
                let ops = config
                    .ops
                    .ops()
                    .iter()
                    .map(|&kind| OpInstance::new(kind, c, stride, &mut params, &format!("cell{i}.edge{e}"), rng))
                    .collect();
                edges.push(ops);
            }
            if reduction {
                reduced += 1;
            }
            history.push((c * config.cell_intermediates, reduced));
            cells.push(Cell {
                reduction,
                preprocess,
                edges,
            });
        }
        let features = history.last().expect("at least one cell").0;
        let bound = 1.0 / (features as f32).sqrt();
        let w = (0..config.num_classes * features)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let w = params.add("classifier.weight", Tensor::new(vec![config.num_classes, features], w)?);
        let b = params.add("classifier.bias", Tensor::zeros(vec![config.num_classes]));
        Ok(Self {
            config,
            topology,
            params,
            stem,
            stem_geom,
            cells,
            classifier: (w, b),
        })
    }

    pub fn config(&self) -> &SupernetConfig {
        &self.config
    }

    pub fn topology(&self) -> &CellTopology {
        &self.topology
    }

    pub fn ops(&self) -> &OperationSpace {
        &self.config.ops
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_reduction(&self, cell: usize) -> bool {
        self.cells[cell].reduction
    }

    /// Parameters of op `column` on edge `edge` of cell `cell`.
    pub fn op_params(&self, cell: usize, edge: usize, column: usize) -> &[ParamId] {
        self.cells[cell].edges[edge][column].params()
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    /// Record a forward pass and return the logits node.
    ///
    /// Normal cells read `arch.normal`, reduction cells `arch.reduce`. Every
    /// edge mixes all candidate ops by the softmax of its row.
    pub fn forward(&self, tape: &mut Tape, batch: &Tensor, arch: &ArchParam) -> Result<NodeId> {
        arch.check_shape(&self.topology, &self.config.ops)?;
        let want = [self.config.in_channels, self.config.image_size, self.config.image_size];
        if batch.shape().len() != 4 || batch.shape()[1..] != want {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match [n, {}, {}, {}]",
                batch.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
        let x = tape.input(batch.clone());
        let stem = tape.conv2d(&self.params, x, self.stem, self.stem_geom)?;
        let inputs = self.config.cell_inputs;
        let mut history = vec![stem; inputs];
        for (i, cell) in self.cells.iter().enumerate() {
            let weights = arch.cell(if cell.reduction { CellKind::Reduce } else { CellKind::Normal });
            let mut nodes = Vec::with_capacity(self.topology.num_nodes());
            for (j, pre) in cell.preprocess.iter().enumerate() {
                let r = tape.relu(history[i + j]);
                nodes.push(tape.conv2d(&self.params, r, pre.weight, pre.geom)?);
            }
            let mut relus: Vec<Option<NodeId>> = vec![None; self.topology.num_nodes()];
            for t in 0..self.topology.num_intermediates() {
                let mut incoming = Vec::with_capacity(inputs + t);
                for e in self.topology.incoming(t) {
                    let src = self.topology.edges()[e].source;
                    let xr = *relus[src].get_or_insert_with(|| tape.relu(nodes[src]));
                    let out = mixed_edge_forward(tape, &self.params, nodes[src], xr, &cell.edges[e], weights.row(e))?;
                    incoming.push((out, 1.0));
                }
                nodes.push(tape.weighted_sum(&incoming)?);
            }
            history.push(tape.concat_channels(&nodes[inputs..])?);
        }
        let pooled = tape.global_avg_pool(*history.last().expect("cells"))?;
        let logits = tape.linear(&self.params, pooled, self.classifier.0, self.classifier.1)?;
        if tape.value(logits).data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("supernet produced non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Forward without recording; returns `[n, classes]` logits.
    pub fn predict(&self, batch: &Tensor, arch: &ArchParam) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let logits = self.forward(&mut tape, batch, arch)?;
        Ok(tape.value(logits).clone())
    }

    /// Mean cross-entropy of one labelled batch, recorded on `tape`.
    pub fn loss(&self, tape: &mut Tape, batch: &Tensor, labels: &[usize], arch: &ArchParam) -> Result<NodeId> {
        let logits = self.forward(tape, batch, arch)?;
        tape.softmax_cross_entropy(logits, labels)
    }

    /// Forward, then back-propagate `loss` into the parameter gradients.
    pub fn backward(&mut self, tape: &Tape, loss: NodeId) -> Result<()> {
        tape.backward(loss, &mut self.params)
    }

    pub(crate) fn from_parts(config: SupernetConfig, params: ParamStore) -> Result<Self> {
        // rebuild the layout deterministically, then adopt the given weights
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Supernet::new(config, &mut rng)?;
        let want = net.params.infos();
        let got = params.infos();
        if want != got {
            let detail = want
                .iter()
                .zip(&got)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected `{}` {:?}, found `{}` {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_else(|| format!("expected {} tensors, found {}", want.len(), got.len()));
            return Err(Error::Shape(format!("checkpoint layout does not match its metadata: {detail}")));
        }
        net.params = params;
        Ok(net)
    }
}
