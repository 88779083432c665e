//! Minimal CSR sparse matrix, sized for adjacency-shaped operands.

use ndarray::Array2;

/// Compressed sparse row matrix over `f64`.
///
/// Rows are stored in index order; duplicate entries within a row are not
/// allowed (construction sums would be wrong for adjacency use, so builders
/// deduplicate first).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets. Triplets are sorted and
    /// duplicates collapsed by keeping the last value.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        triplets.dedup_by(|a, b| {
            if a.0 == b.0 && a.1 == b.1 {
                b.2 = a.2;
                true
            } else {
                false
            }
        });
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        for &(r, c, v) in &triplets {
            debug_assert!(r < n_rows && c < n_cols);
            indptr[r + 1] += 1;
            indices.push(c);
            data.push(v);
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    /// Entry lookup by binary search within the row.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Sparse-times-dense product `self · rhs`.
    pub fn dot(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, rhs.nrows(), "spmm shape mismatch");
        let d = rhs.ncols();
        let mut out = Array2::zeros((self.n_rows, d));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            let mut acc = out.row_mut(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let src = rhs.row(j);
                for k in 0..d {
                    acc[k] += v * src[k];
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[[i, j]] = v;
            }
        }
        out
    }
}
