use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CellKind, CellTopology, OperationSpace};
use crate::error::{Error, Result};

/// Dense row-major matrix; one row per edge, one column per operation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Numerically stable softmax of one edge row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// One individual's architecture parameter: an (edges x ops) matrix per cell kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParam {
    pub normal: Matrix,
    pub reduce: Matrix,
}

impl ArchParam {
    pub fn new(normal: Matrix, reduce: Matrix) -> Result<Self> {
        if normal.shape() != reduce.shape() {
            return Err(Error::Shape(format!(
                "normal matrix is {:?} but reduce matrix is {:?}",
                normal.shape(),
                reduce.shape()
            )));
        }
        Ok(Self { normal, reduce })
    }

    pub fn zeros(topology: &CellTopology, ops: &OperationSpace) -> Self {
        let (r, c) = (topology.num_edges(), ops.len());
        Self {
            normal: Matrix::zeros(r, c),
            reduce: Matrix::zeros(r, c),
        }
    }

    /// Every entry drawn independently from U[0, 1).
    pub fn random<R: Rng + ?Sized>(
        topology: &CellTopology,
        ops: &OperationSpace,
        rng: &mut R,
    ) -> Self {
        let (r, c) = (topology.num_edges(), ops.len());
        let normal = Matrix::uniform(r, c, rng);
        let reduce = Matrix::uniform(r, c, rng);
        Self { normal, reduce }
    }

    pub fn cell(&self, kind: CellKind) -> &Matrix {
        match kind {
            CellKind::Normal => &self.normal,
            CellKind::Reduce => &self.reduce,
        }
    }

    pub fn cell_mut(&mut self, kind: CellKind) -> &mut Matrix {
        match kind {
            CellKind::Normal => &mut self.normal,
            CellKind::Reduce => &mut self.reduce,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.normal.shape()
    }

    pub fn check_shape(&self, topology: &CellTopology, ops: &OperationSpace) -> Result<()> {
        let want = (topology.num_edges(), ops.len());
        if self.normal.shape() != want || self.reduce.shape() != want {
            return Err(Error::Shape(format!(
                "architecture parameter is {:?}/{:?}, expected {want:?}",
                self.normal.shape(),
                self.reduce.shape()
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.normal
            .as_slice()
            .iter()
            .chain(self.reduce.as_slice())
            .all(|v| v.is_finite())
    }
}
