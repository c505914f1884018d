//! Assembly and solution of the interior-point KKT systems
//!
//!   [ H + Jh' D Jh + Sigma + dp I     Jg'    ] [dx  ]   [ r1 ]
//!   [ Jg                              -dd I  ] [dlam] = [ r2 ]
//!
//! The system is symmetric quasi-definite once the primal shift `dp` makes
//! the (1,1) block positive definite, so an LDL^T factorization without
//! pivoting exists for any symmetric ordering. Unknowns are ordered by the
//! caller's hint (period-contiguous for multiperiod problems, which keeps
//! factorization fill confined to the storage coupling between adjacent
//! periods); the expected inertia (n positive, m negative pivots) is
//! checked after each factorization and the primal shift is escalated
//! until it holds.

use super::ldl::{LdlFactor, LdlSymbolic};
use super::nlp::KktNode;
use crate::sparse::{CsMat, CscMat, Triplets};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KktError {
    #[error("KKT system remains singular or of wrong inertia at shift {0:.3e}")]
    Singular(f64),
    #[error("ordering hint must cover every variable and row exactly once")]
    BadOrdering,
}

/// Matrices and diagonals of one KKT assembly.
pub struct KktSystem<'a> {
    /// Upper triangle of the Lagrangian Hessian (n x n).
    pub h_upper: &'a CsMat<f64>,
    /// Equality Jacobian (m x n).
    pub jac_eq: &'a CsMat<f64>,
    /// Inequality Jacobian (k x n); condensed into the (1,1) block.
    pub jac_ineq: &'a CsMat<f64>,
    /// Positive row weights of the condensed inequality term (mu / s).
    pub d_ineq: &'a [f64],
    /// Positive diagonal from the bound barriers, length n.
    pub d_bounds: &'a [f64],
}

pub struct KktSolution {
    /// Primal then dual components, length n + m.
    pub step: Vec<f64>,
    /// Primal shift that produced the accepted factorization.
    pub shift_used: f64,
    /// Infinity norm of the final linear residual.
    pub residual: f64,
}

pub struct KktSolver {
    n: usize,
    m: usize,
    /// new position of old index (old: vars 0..n, rows n..n+m)
    iord: Vec<usize>,
    signs: Vec<i8>,
    /// dual regularization, fixed
    delta_dual: f64,
    /// adaptive primal shift floor, remembered across solves
    last_shift: f64,
    shift_floor: f64,
}

impl KktSolver {
    pub fn new(
        n: usize,
        m: usize,
        order: Option<Vec<KktNode>>,
        reg_floor: f64,
    ) -> Result<Self, KktError> {
        let dim = n + m;
        let mut iord = vec![usize::MAX; dim];
        match order {
            Some(nodes) => {
                if nodes.len() != dim {
                    return Err(KktError::BadOrdering);
                }
                for (pos, node) in nodes.iter().enumerate() {
                    let old = match *node {
                        KktNode::Var(v) if v < n => v,
                        KktNode::Eq(r) if r < m => n + r,
                        _ => return Err(KktError::BadOrdering),
                    };
                    if iord[old] != usize::MAX {
                        return Err(KktError::BadOrdering);
                    }
                    iord[old] = pos;
                }
            }
            None => {
                for (old, slot) in iord.iter_mut().enumerate() {
                    *slot = old;
                }
            }
        }
        if iord.iter().any(|&p| p == usize::MAX) {
            return Err(KktError::BadOrdering);
        }
        let mut signs = vec![0i8; dim];
        for old in 0..dim {
            signs[iord[old]] = if old < n { 1 } else { -1 };
        }
        Ok(KktSolver {
            n,
            m,
            iord,
            signs,
            delta_dual: reg_floor,
            last_shift: 0.0,
            shift_floor: reg_floor,
        })
    }

    /// Assemble, factor (escalating the primal shift until the inertia is
    /// right), solve and iteratively refine.
    pub fn solve(&mut self, sys: &KktSystem, rhs: &[f64]) -> Result<KktSolution, KktError> {
        let (n, m) = (self.n, self.m);
        let dim = n + m;
        assert_eq!(rhs.len(), dim);
        assert_eq!(sys.h_upper.nrows(), n);
        assert_eq!(sys.jac_eq.nrows(), m);
        assert_eq!(sys.d_bounds.len(), n);
        assert_eq!(sys.d_ineq.len(), sys.jac_ineq.nrows());

        let nnz_guess = sys.h_upper.nnz()
            + sys.jac_eq.nnz()
            + sys.jac_ineq.nnz() * 4
            + dim;
        let mut trip = Triplets::with_capacity(dim, dim, nnz_guess);
        let push_sym = |trip: &mut Triplets<f64>, a: usize, b: usize, v: f64| {
            let (pa, pb) = (self.iord[a], self.iord[b]);
            let (r, c) = if pa <= pb { (pa, pb) } else { (pb, pa) };
            trip.push(r, c, v);
        };

        for (r, c, v) in sys.h_upper.iter() {
            push_sym(&mut trip, r, c, v);
        }
        for k in 0..sys.jac_ineq.nrows() {
            let (cols, vals) = sys.jac_ineq.row(k);
            let w = sys.d_ineq[k];
            for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                for (&cb, &vb) in cols.iter().zip(vals).skip(a) {
                    push_sym(&mut trip, ca, cb, w * va * vb);
                }
            }
        }
        for (v, &d) in sys.d_bounds.iter().enumerate() {
            push_sym(&mut trip, v, v, d);
        }
        for (r, c, v) in sys.jac_eq.iter() {
            push_sym(&mut trip, n + r, c, v);
        }
        // explicit diagonal everywhere (shifts are added on top)
        for old in 0..dim {
            push_sym(&mut trip, old, old, 0.0);
        }

        let base = trip.to_csc();
        let sym = LdlSymbolic::analyze(dim, &base.colptr, &base.rowidx)
            .map_err(|_| KktError::Singular(0.0))?;
        let mut fac = LdlFactor::new(&sym);

        // locate diagonal slots once
        let mut diag_slot = vec![usize::MAX; dim];
        for c in 0..dim {
            for idx in base.colptr[c]..base.colptr[c + 1] {
                if base.rowidx[idx] == c {
                    diag_slot[c] = idx;
                }
            }
        }

        // escalate the primal shift until the inertia is (n, m)
        let mut shift = if self.last_shift > 0.0 {
            self.last_shift / 100.0
        } else {
            0.0
        };
        let mut vals = base.data.clone();
        loop {
            vals.copy_from_slice(&base.data);
            for old in 0..dim {
                let pos = self.iord[old];
                if old < n {
                    vals[diag_slot[pos]] += shift;
                } else {
                    vals[diag_slot[pos]] -= self.delta_dual;
                }
            }
            let ok = fac
                .factor(
                    &sym,
                    &base.colptr,
                    &base.rowidx,
                    &vals,
                    &self.signs,
                    1e-14,
                    self.shift_floor,
                )
                .is_ok();
            if ok && fac.n_pos == n && fac.n_neg == m && fac.n_forced == 0 {
                break;
            }
            shift = if shift == 0.0 {
                self.shift_floor.max(1e-8)
            } else {
                shift * 100.0
            };
            if shift > 1e12 {
                return Err(KktError::Singular(shift));
            }
        }
        self.last_shift = shift;

        // permuted solve with iterative refinement against the factored
        // (regularized) system
        let reg = assemble_csc(dim, &base.colptr, &base.rowidx, &vals);
        let mut x_perm = permute(rhs, &self.iord);
        fac.solve(&mut x_perm);
        let mut residual = 0.0;
        for _ in 0..2 {
            let kx = reg.sym_matvec(&x_perm);
            let rhs_perm = permute(rhs, &self.iord);
            let mut r: Vec<f64> = rhs_perm.iter().zip(&kx).map(|(b, k)| b - k).collect();
            residual = r.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
            let scale = 1.0 + rhs_perm.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
            if residual <= 1e-11 * scale {
                break;
            }
            fac.solve(&mut r);
            for (xi, di) in x_perm.iter_mut().zip(&r) {
                *xi += di;
            }
        }

        let mut step = vec![0.0; dim];
        for old in 0..dim {
            step[old] = x_perm[self.iord[old]];
        }
        Ok(KktSolution {
            step,
            shift_used: shift,
            residual,
        })
    }
}

fn permute(x: &[f64], iord: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (old, &pos) in iord.iter().enumerate() {
        out[pos] = x[old];
    }
    out
}

fn assemble_csc(dim: usize, colptr: &[usize], rowidx: &[usize], data: &[f64]) -> CscMat<f64> {
    let mut t = Triplets::with_capacity(dim, dim, data.len());
    for c in 0..dim {
        for idx in colptr[c]..colptr[c + 1] {
            t.push(rowidx[idx], c, data[idx]);
        }
    }
    t.to_csc()
}
