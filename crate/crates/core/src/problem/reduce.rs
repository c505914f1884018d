//! Presolve between the full formulation and the interior-point solver.
//!
//! Variables whose box collapsed to a point (pins, the slack angle) are
//! substituted out; the linear rows that restate them become trivially
//! satisfied and are dropped. SOC variables of devices that are absent in
//! a period are only referenced by that period's storage row, which just
//! freezes them at the previous value; both the variable and the row
//! leave the solve and the value is reconstructed afterwards.

use super::MpopfProblem;
use crate::ipm::nlp::{KktNode, NlpProblem};
use crate::sparse::{CsMat, Triplets};

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarClass {
    Free(usize),
    Fixed(f64),
    /// Absent-period SOC: carried forward from the predecessor period.
    Frozen,
}

pub struct ReducedProblem<'p> {
    prob: &'p MpopfProblem,
    class: Vec<VarClass>,
    red_to_full: Vec<usize>,
    /// Reduced equality row -> full row index.
    kept_eq: Vec<usize>,
    full_row_to_red: Vec<Option<usize>>,
}

impl<'p> ReducedProblem<'p> {
    pub fn new(prob: &'p MpopfProblem) -> Self {
        let l = &prob.layout;
        let n_full = l.total();
        let mut class = vec![VarClass::Frozen; n_full];
        let mut red_to_full = Vec::with_capacity(n_full);

        for v in 0..n_full {
            class[v] = if prob.lb[v] == prob.ub[v] {
                VarClass::Fixed(prob.lb[v])
            } else {
                VarClass::Free(0) // index assigned below
            };
        }
        for t in 0..l.t_count {
            for i in 0..l.n_y {
                if !prob.fleet.present(i, t) {
                    let v = l.soc(t, i);
                    if matches!(class[v], VarClass::Free(_)) {
                        class[v] = VarClass::Frozen;
                    }
                }
            }
        }
        for v in 0..n_full {
            if let VarClass::Free(_) = class[v] {
                class[v] = VarClass::Free(red_to_full.len());
                red_to_full.push(v);
            }
        }

        let counts = prob.counts();
        let n_full_eq = counts.equalities();
        let mut kept_eq = Vec::with_capacity(n_full_eq);
        let mut full_row_to_red = vec![None; n_full_eq];
        for row in 0..counts.balance {
            full_row_to_red[row] = Some(kept_eq.len());
            kept_eq.push(row);
        }
        // all linear rows restate fixed variables: dropped
        let st0 = counts.balance + counts.linear;
        for t in 0..l.t_count {
            for i in 0..l.n_y {
                if prob.fleet.present(i, t) {
                    let row = st0 + t * l.n_y + i;
                    full_row_to_red[row] = Some(kept_eq.len());
                    kept_eq.push(row);
                }
            }
        }

        ReducedProblem {
            prob,
            class,
            red_to_full,
            kept_eq,
            full_row_to_red,
        }
    }

    pub fn problem(&self) -> &MpopfProblem {
        self.prob
    }

    /// Expand a reduced point to the full variable vector, resolving fixed
    /// values and the frozen SOC chains.
    pub fn full_point(&self, red_x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(red_x.len(), self.red_to_full.len());
        let l = &self.prob.layout;
        let mut x = vec![0.0; l.total()];
        for (v, cls) in self.class.iter().enumerate() {
            match *cls {
                VarClass::Free(k) => x[v] = red_x[k],
                VarClass::Fixed(val) => x[v] = val,
                VarClass::Frozen => {} // second pass below
            }
        }
        for i in 0..l.n_y {
            for t in 0..l.t_count {
                if self.class[l.soc(t, i)] == VarClass::Frozen {
                    x[l.soc(t, i)] = if t == 0 {
                        self.prob.fleet.soci.get(i, 0)
                    } else {
                        x[l.soc(t - 1, i)]
                    };
                }
            }
        }
        x
    }

    pub fn n_free(&self) -> usize {
        self.red_to_full.len()
    }

    fn reduce_jacobian(&self, full: &CsMat<f64>, keep_rows: Option<&[usize]>) -> CsMat<f64> {
        let (n_rows, rows): (usize, Box<dyn Fn(usize) -> Option<usize> + '_>) = match keep_rows {
            Some(_) => (
                self.kept_eq.len(),
                Box::new(|r| self.full_row_to_red[r]),
            ),
            None => (full.nrows(), Box::new(|r| Some(r))),
        };
        let mut t = Triplets::with_capacity(n_rows, self.red_to_full.len(), full.nnz());
        for (r, c, v) in full.iter() {
            if let Some(rr) = rows(r) {
                match self.class[c] {
                    VarClass::Free(k) => t.push(rr, k, v),
                    VarClass::Fixed(_) => {}
                    VarClass::Frozen => {
                        debug_assert!(false, "kept row {r} references frozen var {c}");
                    }
                }
            }
        }
        t.to_csr()
    }
}

impl NlpProblem for ReducedProblem<'_> {
    fn num_vars(&self) -> usize {
        self.red_to_full.len()
    }

    fn num_eq(&self) -> usize {
        self.kept_eq.len()
    }

    fn num_ineq(&self) -> usize {
        self.prob.counts().line
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lb = self.red_to_full.iter().map(|&v| self.prob.lb[v]).collect();
        let ub = self.red_to_full.iter().map(|&v| self.prob.ub[v]).collect();
        (lb, ub)
    }

    fn initial_point(&self) -> Vec<f64> {
        let full = self.prob.initial_x();
        self.red_to_full.iter().map(|&v| full[v]).collect()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let full = self.full_point(x);
        self.prob.eval_objective(&full).0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let full = self.full_point(x);
        let (_, grad) = self.prob.eval_objective(&full);
        self.red_to_full.iter().map(|&v| grad[v]).collect()
    }

    fn equalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>) {
        let full = self.full_point(x);
        let (resid, jac) = self.prob.eval_equalities(&full);
        let red_resid = self.kept_eq.iter().map(|&r| resid[r]).collect();
        (red_resid, self.reduce_jacobian(&jac, Some(&self.kept_eq)))
    }

    fn inequalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>) {
        let full = self.full_point(x);
        let (resid, jac) = self.prob.eval_inequalities(&full);
        (resid, self.reduce_jacobian(&jac, None))
    }

    fn lagrangian_hessian(&self, x: &[f64], obj_scale: f64, lam: &[f64], mu: &[f64]) -> CsMat<f64> {
        let full = self.full_point(x);
        let mut full_lam = vec![0.0; self.prob.counts().equalities()];
        for (rr, &r) in self.kept_eq.iter().enumerate() {
            full_lam[r] = lam[rr];
        }
        let h = self.prob.eval_lagrangian_hessian(&full, obj_scale, &full_lam, mu);
        let n = self.red_to_full.len();
        let mut t = Triplets::with_capacity(n, n, h.nnz());
        for (r, c, v) in h.iter() {
            if let (VarClass::Free(kr), VarClass::Free(kc)) = (self.class[r], self.class[c]) {
                // the free-index map is monotone, so upper stays upper
                t.push(kr, kc, v);
            }
        }
        t.to_csr()
    }

    fn kkt_order(&self) -> Option<Vec<KktNode>> {
        let prob = self.prob;
        let l = &prob.layout;
        let bus_order = elimination_bus_order(prob);
        let counts = prob.counts();
        let st0 = counts.balance + counts.linear;

        // generators and devices grouped by bus
        let mut gens_at = vec![Vec::new(); l.n_b];
        for g in 0..l.n_g {
            gens_at[prob.gen_bus[g]].push(g);
        }
        let mut devs_at = vec![Vec::new(); l.n_b];
        for i in 0..l.n_y {
            devs_at[prob.dev_bus[i]].push(i);
        }

        let mut order = Vec::with_capacity(self.red_to_full.len() + self.kept_eq.len());
        let push_var = |order: &mut Vec<KktNode>, full_idx: usize| {
            if let VarClass::Free(k) = self.class[full_idx] {
                order.push(KktNode::Var(k));
            }
        };
        for t in 0..l.t_count {
            for &b in &bus_order {
                push_var(&mut order, l.theta(t, b));
                push_var(&mut order, l.vm(t, b));
                for &g in &gens_at[b] {
                    push_var(&mut order, l.pg(t, g));
                    push_var(&mut order, l.qg(t, g));
                }
                for &i in &devs_at[b] {
                    push_var(&mut order, l.pch(t, i));
                    push_var(&mut order, l.pdch(t, i));
                    push_var(&mut order, l.qs(t, i));
                }
                let p_row = t * 2 * l.n_b + b;
                let q_row = t * 2 * l.n_b + l.n_b + b;
                if let Some(r) = self.full_row_to_red[p_row] {
                    order.push(KktNode::Eq(r));
                }
                if let Some(r) = self.full_row_to_red[q_row] {
                    order.push(KktNode::Eq(r));
                }
            }
            for i in 0..l.n_y {
                if let Some(r) = self.full_row_to_red[st0 + t * l.n_y + i] {
                    order.push(KktNode::Eq(r));
                }
            }
            for i in 0..l.n_y {
                push_var(&mut order, l.soc(t, i));
            }
        }
        Some(order)
    }
}

/// Eliminate leaf buses before their parents: reverse breadth-first order
/// from the slack over the branch graph. On radial feeders this keeps the
/// per-period factorization fill near zero.
fn elimination_bus_order(prob: &MpopfProblem) -> Vec<usize> {
    let n_b = prob.layout.n_b;
    let mut adjacency = vec![Vec::new(); n_b];
    for k in 0..prob.adm.n_lines() {
        let (f, t) = (prob.adm.from[k], prob.adm.to[k]);
        adjacency[f].push(t);
        adjacency[t].push(f);
    }
    let mut seen = vec![false; n_b];
    let mut bfs = Vec::with_capacity(n_b);
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(prob.case.slack_index());
    seen[prob.case.slack_index()] = true;
    while let Some(b) = queue.pop_front() {
        bfs.push(b);
        for &nb in &adjacency[b] {
            if !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    // isolated buses (no in-service path) go first; they carry no coupling
    let mut order: Vec<usize> = (0..n_b).filter(|&b| !seen[b]).collect();
    order.extend(bfs.into_iter().rev());
    order
}
