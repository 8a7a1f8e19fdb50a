//! Row-major observation matrices and datasets.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scm::{Dag, Permutation};
use crate::synth::ScmDescription;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::arg(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(CoreError::arg(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Column `j` of the result is column `idx[j]` of `self`.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in self.iter_rows() {
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn remove_column(&self, q: usize) -> Matrix {
        let keep: Vec<usize> = (0..self.cols).filter(|&j| j != q).collect();
        self.select_columns(&keep)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.rows as f64);
        m
    }

    /// Population standard deviation of each column.
    pub fn column_stds(&self) -> Vec<f64> {
        let means = self.column_means();
        let mut s = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for ((a, b), m) in s.iter_mut().zip(r).zip(&means) {
                *a += (b - m) * (b - m);
            }
        }
        s.iter().map(|v| (v / self.rows as f64).sqrt()).collect()
    }

    /// Sample covariance (denominator `n - 1`).
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let means = self.column_means();
        let mut c = vec![vec![0.0; self.cols]; self.cols];
        for r in self.iter_rows() {
            for i in 0..self.cols {
                let di = r[i] - means[i];
                for j in 0..=i {
                    c[i][j] += di * (r[j] - means[j]);
                }
            }
        }
        let denom = (self.rows.max(2) - 1) as f64;
        for i in 0..self.cols {
            for j in 0..=i {
                c[i][j] /= denom;
                c[j][i] = c[i][j];
            }
        }
        c
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry as `(row, col)`.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols.max(1), p % self.cols.max(1)))
    }
}

/// Per-column affine map `z = (x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Fits the record on `x`; constant columns keep unit scale.
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.rows() < 2 {
            return Err(CoreError::arg("standardization needs at least 2 rows"));
        }
        let mean = x.column_means();
        let std = x
            .column_stds()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            let r = self.apply_row(x.row(i));
            out.row_mut(i).copy_from_slice(&r);
        }
        out
    }

    pub fn invert(&self, z: &Matrix) -> Matrix {
        let mut out = z.clone();
        for i in 0..out.rows() {
            let r = self.invert_row(z.row(i));
            out.row_mut(i).copy_from_slice(&r);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub dag: Dag,
    /// A valid topological ordering of `dag`.
    pub order: Permutation,
    /// Generator description, when the dataset came from a known simulator.
    pub scm: Option<ScmDescription>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub seed: u64,
    pub preset: Option<String>,
    pub graph: Option<String>,
    pub mechanism: Option<String>,
    pub noise: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Observations, standardized when `standardization` is set.
    pub x: Matrix,
    /// Exogenous noise in the generator's units, row-aligned with `x`.
    pub noise: Option<Matrix>,
    pub truth: Option<GroundTruth>,
    pub standardization: Option<Standardization>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn from_matrix(x: Matrix) -> Result<Self> {
        if let Some((r, c)) = x.first_non_finite() {
            return Err(CoreError::Numeric {
                context: format!("dataset column {c}"),
                index: r,
            });
        }
        Ok(Self {
            x,
            noise: None,
            truth: None,
            standardization: None,
            provenance: Provenance::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// Observations in the generator's original units.
    pub fn raw_x(&self) -> Matrix {
        match &self.standardization {
            Some(s) => s.invert(&self.x),
            None => self.x.clone(),
        }
    }

    /// Returns a copy with standardized `x` and the record stored; already
    /// standardized datasets are returned unchanged.
    pub fn standardized(&self) -> Result<Self> {
        if self.standardization.is_some() {
            return Ok(self.clone());
        }
        let rec = Standardization::fit(&self.x)?;
        Ok(Self {
            x: rec.apply(&self.x),
            standardization: Some(rec),
            ..self.clone()
        })
    }

    pub fn truth(&self) -> Result<&GroundTruth> {
        self.truth.as_ref().ok_or_else(|| {
            CoreError::Data(format!(
                "dataset '{}' has no ground-truth graph",
                self.provenance.id
            ))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((r, c)) = self.x.first_non_finite() {
            return Err(CoreError::Numeric {
                context: format!("dataset column {c}"),
                index: r,
            });
        }
        if let Some(t) = &self.truth {
            if t.dag.d() != self.d() || t.order.len() != self.d() {
                return Err(CoreError::arg("ground truth dimension differs from data"));
            }
            if let Some((parent, child)) = t.order.first_violation(&t.dag) {
                return Err(CoreError::Ordering { parent, child });
            }
        }
        if let Some(n) = &self.noise {
            if n.rows() != self.n() || n.cols() != self.d() {
                return Err(CoreError::arg("noise matrix shape differs from data"));
            }
        }
        Ok(())
    }
}
