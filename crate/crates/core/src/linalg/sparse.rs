use std::collections::HashMap;

use crate::error::{Error, Result};

/// Symmetric sparse matrix in compressed row form.
///
/// Both triangles are stored explicitly so that row traversal gives the full
/// matrix row. The builder mirrors every entry, which makes the stored matrix
/// symmetric to the last bit.
#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn identity(n: usize) -> Self {
        let mut b = SparseSymBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 1.0);
        }
        b.build()
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut b = SparseSymBuilder::new(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            b.add(i, i, d);
        }
        b.build()
    }

    /// Row access: parallel slices of column indices and values.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn diag(&self, i: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// y = A x with deterministic per-row accumulation order.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    /// Quadratic form x^T A x.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut row_acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                row_acc += v * x[j];
            }
            acc += x[i] * row_acc;
        }
        acc
    }

    /// Principal submatrix A[keep, keep]. `keep` must be strictly increasing.
    pub fn submatrix(&self, keep: &[usize]) -> SparseSymMatrix {
        debug_assert!(keep.windows(2).all(|w| w[0] < w[1]));
        let mut inv = vec![usize::MAX; self.n];
        for (local, &g) in keep.iter().enumerate() {
            inv[g] = local;
        }
        let mut row_ptr = Vec::with_capacity(keep.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for &g in keep {
            let (cols, vals) = self.row(g);
            for (&j, &v) in cols.iter().zip(vals) {
                if inv[j] != usize::MAX {
                    col_idx.push(inv[j]);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseSymMatrix {
            n: keep.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> super::DenseSymMatrix {
        let mut data = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                data[i * self.n + j] = v;
            }
        }
        super::DenseSymMatrix::from_raw(self.n, data)
    }

    /// Largest absolute row sum (infinity norm).
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Exact structural + numerical symmetry check.
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let (jc, jv) = self.row(j);
                match jc.binary_search(&i) {
                    Ok(p) => {
                        if jv[p] != v {
                            return false;
                        }
                    }
                    Err(_) => return false,
                }
            }
        }
        true
    }

    /// Adjacency of the matrix graph, excluding the diagonal.
    pub(crate) fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (cols, _) = self.row(i);
        cols.iter().copied().filter(move |&j| j != i)
    }
}

/// Accumulating builder. Entries are keyed on the upper triangle and mirrored
/// on `build`, so the result is symmetric by construction.
#[derive(Debug)]
pub struct SparseSymBuilder {
    n: usize,
    upper: HashMap<(u32, u32), f64>,
}

impl SparseSymBuilder {
    pub fn new(n: usize) -> Self {
        assert!(n < u32::MAX as usize);
        SparseSymBuilder {
            n,
            upper: HashMap::new(),
        }
    }

    /// Accumulate `v` into entry (i, j) and its mirror.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        let key = if i <= j {
            (i as u32, j as u32)
        } else {
            (j as u32, i as u32)
        };
        *self.upper.entry(key).or_insert(0.0) += v;
    }

    pub fn build(self) -> SparseSymMatrix {
        let n = self.n;
        let mut entries: Vec<((u32, u32), f64)> = self.upper.into_iter().collect();
        entries.sort_unstable_by_key(|&(k, _)| k);

        let mut counts = vec![0usize; n];
        for &((i, j), _) in &entries {
            counts[i as usize] += 1;
            if i != j {
                counts[j as usize] += 1;
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];
        let mut cursor = row_ptr.clone();
        // Upper-triangle entries arrive sorted by (row, col); mirrored entries
        // fill lower rows in increasing column order as well because for fixed
        // row j the mirrored columns i arrive in increasing order.
        for &((i, j), v) in &entries {
            let (i, j) = (i as usize, j as usize);
            col_idx[cursor[i]] = j;
            values[cursor[i]] = v;
            cursor[i] += 1;
            if i != j {
                col_idx[cursor[j]] = i;
                values[cursor[j]] = v;
                cursor[j] += 1;
            }
        }
        // Mirrors interleave with native upper entries, so rows need a final sort.
        for i in 0..n {
            let lo = row_ptr[i];
            let hi = row_ptr[i + 1];
            let mut pairs: Vec<(usize, f64)> = col_idx[lo..hi]
                .iter()
                .copied()
                .zip(values[lo..hi].iter().copied())
                .collect();
            pairs.sort_unstable_by_key(|&(c, _)| c);
            for (k, (c, v)) in pairs.into_iter().enumerate() {
                col_idx[lo + k] = c;
                values[lo + k] = v;
            }
        }
        SparseSymMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}
