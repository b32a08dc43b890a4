//! Cell topology, operation space and the architecture-parameter representation.
//!
//! A cell is a DAG with `num_inputs` input nodes (the outputs of the two
//! preceding cells) followed by `num_intermediates` intermediate nodes. Every
//! intermediate node has one candidate edge from each earlier node; every edge
//! carries one candidate operation per [`OpKind`] in the [`OperationSpace`].
//! The architecture parameter holds one real weight per (edge, operation).

mod arch;
mod genotype;

pub use arch::{softmax, ArchParam, Matrix};
pub use genotype::{decode, derive_genotype, DecodedParam, GeneEntry, Genotype, TopologySize};

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Candidate operation kinds of the DARTS-style search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    SepConv3x3,
    SepConv5x5,
    DilConv3x3,
    DilConv5x5,
    MaxPool3x3,
    AvgPool3x3,
    SkipConnect,
    Zero,
}

impl OpKind {
    pub const ALL: [OpKind; 8] = [
        OpKind::SepConv3x3,
        OpKind::SepConv5x5,
        OpKind::DilConv3x3,
        OpKind::DilConv5x5,
        OpKind::MaxPool3x3,
        OpKind::AvgPool3x3,
        OpKind::SkipConnect,
        OpKind::Zero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::SepConv3x3 => "sep_conv_3x3",
            OpKind::SepConv5x5 => "sep_conv_5x5",
            OpKind::DilConv3x3 => "dil_conv_3x3",
            OpKind::DilConv5x5 => "dil_conv_5x5",
            OpKind::MaxPool3x3 => "max_pool_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::SkipConnect => "skip_connect",
            OpKind::Zero => "zero",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered list of candidate operations; the order fixes the matrix columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<OpKind>", into = "Vec<OpKind>")]
pub struct OperationSpace {
    ops: Vec<OpKind>,
}

impl TryFrom<Vec<OpKind>> for OperationSpace {
    type Error = Error;

    fn try_from(ops: Vec<OpKind>) -> Result<Self> {
        OperationSpace::new(ops)
    }
}

impl From<OperationSpace> for Vec<OpKind> {
    fn from(space: OperationSpace) -> Self {
        space.ops
    }
}

impl OperationSpace {
    pub fn new(ops: Vec<OpKind>) -> Result<Self> {
        if ops.len() < 2 {
            return Err(Error::OperationSpace(format!(
                "need at least 2 operations, got {}",
                ops.len()
            )));
        }
        let zeros = ops.iter().filter(|&&k| k == OpKind::Zero).count();
        if zeros != 1 {
            return Err(Error::OperationSpace(format!(
                "exactly one `zero` operation required, found {zeros}"
            )));
        }
        for (i, k) in ops.iter().enumerate() {
            if ops[..i].contains(k) {
                return Err(Error::OperationSpace(format!("duplicate operation `{k}`")));
            }
        }
        Ok(Self { ops })
    }

    /// The canonical 8-operation space.
    pub fn darts() -> Self {
        Self {
            ops: OpKind::ALL.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[OpKind] {
        &self.ops
    }

    pub fn kind(&self, column: usize) -> OpKind {
        self.ops[column]
    }

    pub fn column_of(&self, kind: OpKind) -> Option<usize> {
        self.ops.iter().position(|&k| k == kind)
    }

    pub fn zero_column(&self) -> usize {
        self.column_of(OpKind::Zero)
            .expect("operation space always holds a zero op")
    }
}

impl Default for OperationSpace {
    fn default() -> Self {
        Self::darts()
    }
}

/// One candidate edge of a cell. `target` is the 0-based intermediate index,
/// `source` a node index where inputs come first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

/// Which of the two cell types a matrix belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Normal,
    Reduce,
}

impl CellKind {
    pub const BOTH: [CellKind; 2] = [CellKind::Normal, CellKind::Reduce];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Normal => "normal",
            CellKind::Reduce => "reduce",
        }
    }
}

/// Cell DAG with canonical edge order: sorted by target, then by source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellTopology {
    num_inputs: usize,
    num_intermediates: usize,
    edges: Vec<Edge>,
    // first edge index of each intermediate node
    offsets: Vec<usize>,
}

impl CellTopology {
    pub fn new(num_inputs: usize, num_intermediates: usize) -> Result<Self> {
        if num_inputs == 0 {
            return Err(Error::Topology("a cell needs at least one input node".into()));
        }
        if num_intermediates == 0 {
            return Err(Error::Topology(
                "a cell needs at least one intermediate node".into(),
            ));
        }
        let mut edges = Vec::new();
        let mut offsets = Vec::with_capacity(num_intermediates);
        for target in 0..num_intermediates {
            offsets.push(edges.len());
            for source in 0..num_inputs + target {
                edges.push(Edge { source, target });
            }
        }
        Ok(Self {
            num_inputs,
            num_intermediates,
            edges,
            offsets,
        })
    }

    /// 2 inputs, 4 intermediate nodes, 14 edges.
    pub fn darts() -> Self {
        Self::new(2, 4).expect("default topology is valid")
    }

    pub fn num_inputs(&self) -> usize {
        self.num_inputs
    }

    pub fn num_intermediates(&self) -> usize {
        self.num_intermediates
    }

    pub fn num_nodes(&self) -> usize {
        self.num_inputs + self.num_intermediates
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Canonical edge indices of the edges entering intermediate node `target`.
    pub fn incoming(&self, target: usize) -> Range<usize> {
        let start = self.offsets[target];
        start..start + self.num_inputs + target
    }

    pub fn edge_index(&self, source: usize, target: usize) -> Option<usize> {
        if target >= self.num_intermediates || source >= self.num_inputs + target {
            return None;
        }
        Some(self.offsets[target] + source)
    }

    pub fn size(&self) -> TopologySize {
        TopologySize {
            inputs: self.num_inputs,
            intermediates: self.num_intermediates,
        }
    }
}

/// The topology and operation space an architecture parameter is laid out on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SearchSpace {
    pub topology: CellTopology,
    pub ops: OperationSpace,
}

impl SearchSpace {
    pub fn new(topology: CellTopology, ops: OperationSpace) -> Self {
        Self { topology, ops }
    }

    pub fn random_arch<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> ArchParam {
        ArchParam::random(&self.topology, &self.ops, rng)
    }

    pub fn derive(&self, alpha: &ArchParam) -> Result<Genotype> {
        derive_genotype(alpha, &self.topology, &self.ops)
    }

    pub fn decode(&self, alpha: &ArchParam, k: f64) -> Result<DecodedParam> {
        decode(alpha, k, &self.topology, &self.ops)
    }
}

impl Default for CellTopology {
    fn default() -> Self {
        Self::darts()
    }
}
