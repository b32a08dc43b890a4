//! Genotype derivation (discretization), the decoded parameter, and the
//! genotype's JSON and DOT renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{softmax, ArchParam, CellKind, CellTopology, Matrix, OpKind, OperationSpace};
use crate::error::{Error, Result};

/// Number of input and intermediate nodes a genotype was derived for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TopologySize {
    pub inputs: usize,
    pub intermediates: usize,
}

/// One selected incoming edge of an intermediate node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GeneEntry {
    pub pred: usize,
    pub op: OpKind,
}

/// Discrete cell pair. Each cell lists two entries per intermediate node, in
/// node order; within a node the entries are sorted by predecessor.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Genotype {
    pub normal: Vec<GeneEntry>,
    pub reduce: Vec<GeneEntry>,
    pub topology: TopologySize,
}

impl Genotype {
    pub fn cell(&self, kind: CellKind) -> &[GeneEntry] {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduce => &self.reduce,
        }
    }

    /// Entries of intermediate node `t` in the given cell.
    pub fn node(&self, kind: CellKind, t: usize) -> &[GeneEntry] {
        &self.cell(kind)[2 * t..2 * t + 2]
    }

    /// Structural checks: entry count, predecessor range and distinctness, no `zero`.
    pub fn validate(&self) -> Result<()> {
        let TopologySize {
            inputs,
            intermediates,
        } = self.topology;
        if inputs == 0 || intermediates == 0 {
            return Err(Error::Schema(format!(
                "topology needs inputs >= 1 and intermediates >= 1, got {inputs}/{intermediates}"
            )));
        }
        for kind in CellKind::BOTH {
            let cell = self.cell(kind);
            if cell.len() != 2 * intermediates {
                return Err(Error::Schema(format!(
                    "{} cell has {} entries, expected {}",
                    kind.name(),
                    cell.len(),
                    2 * intermediates
                )));
            }
            for t in 0..intermediates {
                let pair = &cell[2 * t..2 * t + 2];
                for e in pair {
                    if e.pred >= inputs + t {
                        return Err(Error::Schema(format!(
                            "{} cell node {t}: predecessor {} is not an earlier node",
                            kind.name(),
                            e.pred
                        )));
                    }
                    if e.op == OpKind::Zero {
                        return Err(Error::Schema(format!(
                            "{} cell node {t}: `zero` cannot be a selected operation",
                            kind.name()
                        )));
                    }
                }
                if pair[0].pred == pair[1].pred {
                    return Err(Error::Schema(format!(
                        "{} cell node {t}: duplicate predecessor {}",
                        kind.name(),
                        pair[0].pred
                    )));
                }
            }
        }
        Ok(())
    }

    /// Place `k` on every selected (edge, op) cell and 0 elsewhere.
    pub fn to_decoded(
        &self,
        k: f64,
        topology: &CellTopology,
        ops: &OperationSpace,
    ) -> Result<DecodedParam> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::Config(format!("decode constant k must be positive, got {k}")));
        }
        if self.topology != topology.size() {
            return Err(Error::Shape(format!(
                "genotype topology {:?} does not match cell topology {:?}",
                self.topology,
                topology.size()
            )));
        }
        self.validate()?;
        let mut params = ArchParam::zeros(topology, ops);
        for kind in CellKind::BOTH {
            let m = params.cell_mut(kind);
            for t in 0..topology.num_intermediates() {
                for e in self.node(kind, t) {
                    let row = topology.edge_index(e.pred, t).expect("validated predecessor");
                    let col = ops.column_of(e.op).ok_or_else(|| {
                        Error::Schema(format!("operation `{}` is not in the operation space", e.op))
                    })?;
                    m.set(row, col, k);
                }
            }
        }
        Ok(DecodedParam { params, k })
    }

    /// Short stable hash of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        let raw = RawGenotype {
            normal: self.normal.iter().map(|e| (e.pred, e.op.name().to_string())).collect(),
            reduce: self.reduce.iter().map(|e| (e.pred, e.op.name().to_string())).collect(),
            topology: self.topology,
        };
        serde_json::to_string_pretty(&raw).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawGenotype = serde_json::from_str(text).map_err(|e| Error::Parse {
            message: {
                let full = e.to_string();
                let suffix = format!(" at line {} column {}", e.line(), e.column());
                full.strip_suffix(&suffix).unwrap_or(&full).to_string()
            },
            line: e.line(),
            column: e.column(),
        })?;
        let convert = |cell: &str, entries: Vec<(usize, String)>| -> Result<Vec<GeneEntry>> {
            entries
                .into_iter()
                .map(|(pred, name)| {
                    OpKind::from_name(&name)
                        .map(|op| GeneEntry { pred, op })
                        .ok_or_else(|| {
                            Error::Schema(format!("{cell} cell: unknown operation `{name}`"))
                        })
                })
                .collect()
        };
        let mut g = Genotype {
            normal: convert("normal", raw.normal)?,
            reduce: convert("reduce", raw.reduce)?,
            topology: raw.topology,
        };
        g.validate()?;
        g.canonicalize();
        Ok(g)
    }

    fn canonicalize(&mut self) {
        for cell in [&mut self.normal, &mut self.reduce] {
            for pair in cell.chunks_mut(2) {
                pair.sort_by_key(|e| e.pred);
            }
        }
    }

    /// Graphviz rendering with one cluster per cell.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph genotype {\n  rankdir=LR;\n  node [shape=box];\n");
        let inputs = self.topology.inputs;
        for kind in CellKind::BOTH {
            let p = kind.name();
            let _ = writeln!(out, "  subgraph cluster_{p} {{");
            let _ = writeln!(out, "    label=\"{p}\";");
            for i in 0..inputs {
                let label = if inputs == 2 {
                    ["c_{k-2}", "c_{k-1}"][i].to_string()
                } else {
                    format!("in_{i}")
                };
                let _ = writeln!(out, "    {p}_{i} [label=\"{label}\", style=filled, fillcolor=darkseagreen2];");
            }
            for t in 0..self.topology.intermediates {
                let _ = writeln!(out, "    {p}_{} [label=\"{t}\", style=filled, fillcolor=lightblue];", inputs + t);
            }
            let _ = writeln!(out, "    {p}_out [label=\"c_{{k}}\", style=filled, fillcolor=palegoldenrod];");
            for t in 0..self.topology.intermediates {
                for e in self.node(kind, t) {
                    let _ = writeln!(out, "    {p}_{} -> {p}_{} [label=\"{}\"];", e.pred, inputs + t, e.op);
                }
            }
            for t in 0..self.topology.intermediates {
                let _ = writeln!(out, "    {p}_{} -> {p}_out;", inputs + t);
            }
            out.push_str("  }\n");
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Serialize, Deserialize)]
struct RawGenotype {
    normal: Vec<(usize, String)>,
    reduce: Vec<(usize, String)>,
    topology: TopologySize,
}

/// Discretize an architecture parameter.
///
/// Per cell and per edge, the row is softmax-normalized; the edge's operation
/// is the best non-`zero` column and its score that column's weight. Each
/// intermediate node keeps its two best-scoring incoming edges. Ties go to
/// the lower edge index, then the lower column.
pub fn derive_genotype(
    alpha: &ArchParam,
    topology: &CellTopology,
    ops: &OperationSpace,
) -> Result<Genotype> {
    alpha.check_shape(topology, ops)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("architecture parameter has non-finite entries".into()));
    }
    Ok(Genotype {
        normal: derive_cell(&alpha.normal, topology, ops)?,
        reduce: derive_cell(&alpha.reduce, topology, ops)?,
        topology: topology.size(),
    })
}

fn derive_cell(m: &Matrix, topology: &CellTopology, ops: &OperationSpace) -> Result<Vec<GeneEntry>> {
    let zero = ops.zero_column();
    let mut entries = Vec::with_capacity(2 * topology.num_intermediates());
    for t in 0..topology.num_intermediates() {
        let incoming = topology.incoming(t);
        if incoming.len() < 2 {
            return Err(Error::Topology(format!(
                "intermediate node {t} has {} candidate edge(s), need at least 2",
                incoming.len()
            )));
        }
        // (score, edge, column); strict comparisons keep the lowest index on ties
        let mut scored: Vec<(f64, usize, usize)> = incoming
            .map(|e| {
                let probs = softmax(m.row(e));
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (c, &p) in probs.iter().enumerate() {
                    if c != zero && p > best.0 {
                        best = (p, c);
                    }
                }
                (best.0, e, best.1)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut pair: Vec<GeneEntry> = scored[..2]
            .iter()
            .map(|&(_, e, c)| GeneEntry {
                pred: topology.edges()[e].source,
                op: ops.kind(c),
            })
            .collect();
        pair.sort_by_key(|g| g.pred);
        entries.extend(pair);
    }
    Ok(entries)
}

/// The decoded parameter: `k` on the derived architecture's operations, 0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedParam {
    params: ArchParam,
    k: f64,
}

impl DecodedParam {
    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn as_arch_param(&self) -> &ArchParam {
        &self.params
    }

    pub fn into_arch_param(self) -> ArchParam {
        self.params
    }
}

/// `derive_genotype` followed by placing `k` on the selected (edge, op) cells.
pub fn decode(
    alpha: &ArchParam,
    k: f64,
    topology: &CellTopology,
    ops: &OperationSpace,
) -> Result<DecodedParam> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("decode constant k must be positive, got {k}")));
    }
    derive_genotype(alpha, topology, ops)?.to_decoded(k, topology, ops)
}
