use std::sync::Arc;

use super::DenseMatrix;
use crate::error::{Error, Result};

/// Sparsity structure of a square CSR matrix. Shared between matrices that
/// differ only in their edge weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsrPattern {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    /// Row of every stored entry, cached for the backward kernels.
    entry_rows: Vec<u32>,
}

impl CsrPattern {
    /// Builds a pattern from `(row, col)` entries that are sorted and unique.
    pub fn from_sorted_entries(dim: usize, entries: &[(u32, u32)]) -> Result<Self> {
        let mut row_offsets = vec![0usize; dim + 1];
        for (k, &(r, c)) in entries.iter().enumerate() {
            if r as usize >= dim || c as usize >= dim {
                return Err(Error::Construction(format!(
                    "entry ({r}, {c}) outside dimension {dim}"
                )));
            }
            if k > 0 && entries[k - 1] >= (r, c) {
                return Err(Error::Construction(format!(
                    "entries not strictly sorted at ({r}, {c})"
                )));
            }
            row_offsets[r as usize + 1] += 1;
        }
        for r in 0..dim {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            dim,
            row_offsets,
            col_indices: entries.iter().map(|&(_, c)| c).collect(),
            entry_rows: entries.iter().map(|&(r, _)| r).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn entry_rows(&self) -> &[u32] {
        &self.entry_rows
    }

    pub fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        self.row_offsets[r]..self.row_offsets[r + 1]
    }

    /// Index of entry `(r, c)` if stored.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let range = self.row_range(r);
        self.col_indices[range.clone()]
            .binary_search(&(c as u32))
            .ok()
            .map(|k| range.start + k)
    }

    /// Per-row sums of `weights`.
    pub fn row_sums(&self, weights: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|r| weights[self.row_range(r)].iter().sum())
            .collect()
    }

    pub(crate) fn spmm_values(&self, weights: &[f64], x: &DenseMatrix) -> DenseMatrix {
        let d = x.cols();
        let mut out = DenseMatrix::zeros(self.dim, d);
        for r in 0..self.dim {
            let dst = out.row_mut(r);
            for e in self.row_range(r) {
                let w = weights[e];
                if w == 0.0 {
                    continue;
                }
                for (o, &v) in dst.iter_mut().zip(x.row(self.col_indices[e] as usize)) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `w'_e = w_e / sqrt(d_row · d_col)` with `d` the row sums. Rows with zero
    /// degree contribute zero.
    pub(crate) fn normalize_values(&self, weights: &[f64]) -> Vec<f64> {
        let scale = inv_sqrt_degrees(&self.row_sums(weights));
        weights
            .iter()
            .enumerate()
            .map(|(e, &w)| {
                w * scale[self.entry_rows[e] as usize] * scale[self.col_indices[e] as usize]
            })
            .collect()
    }
}

pub(crate) fn inv_sqrt_degrees(deg: &[f64]) -> Vec<f64> {
    deg.iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect()
}

/// Square sparse matrix: a shared pattern plus one weight per stored entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pattern: Arc<CsrPattern>,
    weights: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(pattern: Arc<CsrPattern>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != pattern.nnz() {
            return Err(Error::shape(
                "CsrMatrix::new",
                format!("{} weights for {} entries", weights.len(), pattern.nnz()),
            ));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::Construction(format!(
                "edge weight {w} is not a finite value >= 0"
            )));
        }
        Ok(Self { pattern, weights })
    }

    /// Builds from unsorted `(row, col, weight)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(u32, u32, f64)>) -> Result<Self> {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(u32, u32)> = Vec::with_capacity(triplets.len());
        let mut weights: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, w) in triplets {
            if entries.last() == Some(&(r, c)) {
                *weights.last_mut().unwrap() += w;
            } else {
                entries.push((r, c));
                weights.push(w);
            }
        }
        let pattern = CsrPattern::from_sorted_entries(dim, &entries)?;
        Self::new(Arc::new(pattern), weights)
    }

    pub fn identity(dim: usize) -> Self {
        let entries: Vec<(u32, u32)> = (0..dim as u32).map(|i| (i, i)).collect();
        Self {
            pattern: Arc::new(CsrPattern::from_sorted_entries(dim, &entries).unwrap()),
            weights: vec![1.0; dim],
        }
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.pattern.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pattern.find(r, c).map_or(0.0, |e| self.weights[e])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.dim(), self.dim());
        for (e, &w) in self.weights.iter().enumerate() {
            out.set(
                self.pattern.entry_rows[e] as usize,
                self.pattern.col_indices[e] as usize,
                w,
            );
        }
        out
    }
}

/// `y[i] = Σ_j w_ij · x[j]`
pub fn spmm(adj: &CsrMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if adj.dim() != x.rows() {
        return Err(Error::shape(
            "spmm",
            format!("adjacency {} vs input rows {}", adj.dim(), x.rows()),
        ));
    }
    Ok(adj.pattern.spmm_values(&adj.weights, x))
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row-sum degrees. The pattern is kept
/// unchanged, including entries whose normalized weight becomes zero.
pub fn symmetric_normalize(adj: &CsrMatrix) -> CsrMatrix {
    CsrMatrix {
        pattern: Arc::clone(&adj.pattern),
        weights: adj.pattern.normalize_values(&adj.weights),
    }
}
