//! Minimal sparse matrices: triplet assembly plus compressed row/column storage.
//!
//! Only the operations the solver stack actually needs are implemented:
//! duplicate-summing assembly, matrix-vector products (plain and transposed),
//! and conversion to dense for small test oracles.

use std::ops::{AddAssign, Mul};

/// Scalar bound shared by f64 and Complex64.
pub trait Scalar: Copy + Default + AddAssign + Mul<Output = Self> + PartialEq {}
impl<T: Copy + Default + AddAssign + Mul<Output = T> + PartialEq> Scalar for T {}

/// Coordinate-format accumulator. Duplicate entries are summed on conversion.
#[derive(Debug, Clone)]
pub struct Triplets<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> Triplets<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: T) {
        debug_assert!(row < self.nrows && col < self.ncols);
        self.entries.push((row, col, value));
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    /// Compress to CSR, summing duplicates. Column indices within each row
    /// come out sorted.
    pub fn to_csr(&self) -> CsMat<T> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_unstable_by_key(|&k| {
            let (r, c, _) = self.entries[k];
            (r, c)
        });

        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.entries.len());
        let mut data: Vec<T> = Vec::with_capacity(self.entries.len());

        for &k in &order {
            let (r, c, v) = self.entries[k];
            // entries arrive sorted by (row, col); a duplicate is always adjacent
            if indptr[r + 1] > 0 && *indices.last().unwrap() == c {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..self.nrows {
            indptr[r + 1] += indptr[r];
        }
        CsMat {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Compress to CSC, summing duplicates. Row indices within each column
    /// come out sorted.
    pub fn to_csc(&self) -> CscMat<T> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_unstable_by_key(|&k| {
            let (r, c, _) = self.entries[k];
            (c, r)
        });

        let mut colptr = vec![0usize; self.ncols + 1];
        let mut rowidx = Vec::with_capacity(self.entries.len());
        let mut data: Vec<T> = Vec::with_capacity(self.entries.len());

        for &k in &order {
            let (r, c, v) = self.entries[k];
            if colptr[c + 1] > 0 && *rowidx.last().unwrap() == r {
                *data.last_mut().unwrap() += v;
            } else {
                rowidx.push(r);
                data.push(v);
                colptr[c + 1] += 1;
            }
        }
        for c in 0..self.ncols {
            colptr[c + 1] += colptr[c];
        }
        CscMat {
            nrows: self.nrows,
            ncols: self.ncols,
            colptr,
            rowidx,
            data,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsMat<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> CsMat<T> {
    pub fn zero(nrows: usize, ncols: usize) -> Self {
        CsMat {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.indices[lo..hi], &self.data[lo..hi])
    }

    /// Iterate `(row, col, value)` over all stored entries.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals.iter()).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => T::default(),
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        let mut y = vec![T::default(); self.nrows];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            let mut acc = T::default();
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x
    pub fn t_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows, "t_matvec dimension mismatch");
        let mut y = vec![T::default(); self.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += v * x[r];
            }
        }
        y
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::default(); self.ncols]; self.nrows];
        for (r, c, v) in self.iter() {
            out[r][c] += v;
        }
        out
    }
}

/// Compressed sparse column matrix (used by the KKT factorization path).
#[derive(Debug, Clone, PartialEq)]
pub struct CscMat<T> {
    nrows: usize,
    ncols: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> CscMat<T> {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    /// y = A x, treating the stored upper triangle as a symmetric matrix.
    /// Requires a square matrix whose entries all satisfy row <= col.
    pub fn sym_matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(self.nrows, self.ncols);
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![T::default(); self.nrows];
        for c in 0..self.ncols {
            for k in self.colptr[c]..self.colptr[c + 1] {
                let r = self.rowidx[k];
                let v = self.data[k];
                y[r] += v * x[c];
                if r != c {
                    y[c] += v * x[r];
                }
            }
        }
        y
    }
}
