//! Sparse LDL^T factorization of symmetric quasi-definite matrices.
//!
//! Up-looking factorization over the elimination tree, specialised to the
//! regularized KKT systems the interior-point iteration produces: with a
//! positive shift on the primal block and a negative shift on the dual
//! block every pivot has a known expected sign, so no pivoting is needed
//! and the inertia can be read off the diagonal. Pivots that cross zero
//! against their expected sign are forced back (dynamic regularization)
//! and counted, which the caller treats as a wrong-inertia signal.
//!
//! Input is the upper triangle in CSC form with sorted row indices and an
//! entry present on every diagonal position.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LdlError {
    #[error("matrix must carry an explicit diagonal entry in column {0}")]
    MissingDiagonal(usize),
    #[error("zero pivot in column {0}")]
    ZeroPivot(usize),
}

/// Symbolic analysis: elimination tree and column pointers of L.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    etree: Vec<usize>,
    l_colptr: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl LdlSymbolic {
    /// Analyze the pattern of an upper-triangular CSC matrix.
    pub fn analyze(n: usize, colptr: &[usize], rowidx: &[usize]) -> Result<Self, LdlError> {
        let mut etree = vec![NONE; n];
        let mut l_col_nnz = vec![0usize; n];
        let mut flag = vec![NONE; n];
        for j in 0..n {
            flag[j] = j;
            let (lo, hi) = (colptr[j], colptr[j + 1]);
            if lo == hi || rowidx[hi - 1] != j {
                return Err(LdlError::MissingDiagonal(j));
            }
            for &r in &rowidx[lo..hi] {
                let mut i = r;
                while flag[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    l_col_nnz[i] += 1;
                    flag[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + l_col_nnz[j];
        }
        Ok(LdlSymbolic { n, etree, l_colptr })
    }

    pub fn l_nnz(&self) -> usize {
        self.l_colptr[self.n]
    }

    pub fn order(&self) -> usize {
        self.n
    }
}

/// Numeric factor A = L D L^T with unit lower-triangular L.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    /// Positive / negative pivot counts (the inertia).
    pub n_pos: usize,
    pub n_neg: usize,
    /// Number of pivots forced back to their expected sign.
    pub n_forced: usize,
    // workspace reused across refactorizations
    y_val: Vec<f64>,
    y_mark: Vec<bool>,
    y_stack: Vec<usize>,
    y_pattern: Vec<usize>,
    col_next: Vec<usize>,
}

impl LdlFactor {
    pub fn new(sym: &LdlSymbolic) -> Self {
        let n = sym.n;
        LdlFactor {
            n,
            l_colptr: sym.l_colptr.clone(),
            l_rowidx: vec![0; sym.l_nnz()],
            l_values: vec![0.0; sym.l_nnz()],
            d: vec![0.0; n],
            d_inv: vec![0.0; n],
            n_pos: 0,
            n_neg: 0,
            n_forced: 0,
            y_val: vec![0.0; n],
            y_mark: vec![false; n],
            y_stack: vec![0; n],
            y_pattern: vec![0; n],
            col_next: vec![0; n],
        }
    }

    /// Factorize with expected pivot signs. Pivots with
    /// `sign * d < eps` are replaced by `sign * delta` and counted in
    /// `n_forced`.
    pub fn factor(
        &mut self,
        sym: &LdlSymbolic,
        colptr: &[usize],
        rowidx: &[usize],
        values: &[f64],
        signs: &[i8],
        reg_eps: f64,
        reg_delta: f64,
    ) -> Result<(), LdlError> {
        let n = self.n;
        debug_assert_eq!(sym.n, n);
        self.n_pos = 0;
        self.n_neg = 0;
        self.n_forced = 0;
        self.col_next.copy_from_slice(&self.l_colptr[..n]);
        self.y_val.fill(0.0);
        self.y_mark.fill(false);

        for k in 0..n {
            // gather the sparse column k of A above the diagonal and the
            // elimination pattern it reaches
            let mut n_pattern = 0usize;
            let mut dk = 0.0;
            for idx in colptr[k]..colptr[k + 1] {
                let r = rowidx[idx];
                if r == k {
                    dk = values[idx];
                    continue;
                }
                self.y_val[r] = values[idx];
                if !self.y_mark[r] {
                    self.y_mark[r] = true;
                    self.y_stack[0] = r;
                    let mut depth = 1usize;
                    let mut next = sym.etree[r];
                    while next != NONE && next < k && !self.y_mark[next] {
                        self.y_mark[next] = true;
                        self.y_stack[depth] = next;
                        depth += 1;
                        next = sym.etree[next];
                    }
                    // reverse into topological position
                    while depth > 0 {
                        depth -= 1;
                        self.y_pattern[n_pattern] = self.y_stack[depth];
                        n_pattern += 1;
                    }
                }
            }

            // eliminate along the pattern in reverse (topological) order
            for p in (0..n_pattern).rev() {
                let c = self.y_pattern[p];
                let yc = self.y_val[c];
                let (lo, hi) = (self.l_colptr[c], self.col_next[c]);
                for idx in lo..hi {
                    self.y_val[self.l_rowidx[idx]] -= self.l_values[idx] * yc;
                }
                let slot = self.col_next[c];
                let lkc = yc * self.d_inv[c];
                self.l_rowidx[slot] = k;
                self.l_values[slot] = lkc;
                self.col_next[c] += 1;
                dk -= yc * lkc;
                self.y_val[c] = 0.0;
                self.y_mark[c] = false;
            }

            // signed dynamic regularization
            let sign = f64::from(signs[k]);
            if dk * sign < reg_eps {
                dk = sign * reg_delta;
                self.n_forced += 1;
            }
            if dk == 0.0 {
                return Err(LdlError::ZeroPivot(k));
            }
            if dk > 0.0 {
                self.n_pos += 1;
            } else {
                self.n_neg += 1;
            }
            self.d[k] = dk;
            self.d_inv[k] = 1.0 / dk;
        }
        Ok(())
    }

    /// Solve A x = b in place using the factors.
    pub fn solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        // forward: L y = b
        for c in 0..self.n {
            let yc = b[c];
            if yc != 0.0 {
                for idx in self.l_colptr[c]..self.l_colptr[c + 1] {
                    b[self.l_rowidx[idx]] -= self.l_values[idx] * yc;
                }
            }
        }
        // diagonal
        for (bi, di) in b.iter_mut().zip(&self.d_inv) {
            *bi *= di;
        }
        // backward: L^T x = y
        for c in (0..self.n).rev() {
            let mut acc = b[c];
            for idx in self.l_colptr[c]..self.l_colptr[c + 1] {
                acc -= self.l_values[idx] * b[self.l_rowidx[idx]];
            }
            b[c] = acc;
        }
    }
}
