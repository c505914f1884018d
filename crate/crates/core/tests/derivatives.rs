//! Finite-difference verification of every derivative callback on the
//! 5-bus, 3-EV, 4-period instance, at several interior points.

mod common;

use common::*;
use evopf_core::problem::{MpopfProblem, NetworkLimits};

fn assemble() -> MpopfProblem {
    MpopfProblem::assemble(
        &five_bus_case(),
        &three_ev_fleet(4),
        &five_bus_demand(4),
        NetworkLimits::On,
    )
    .unwrap()
}

#[test]
fn objective_gradient_matches_fd() {
    let prob = assemble();
    let (lb, ub) = prob.bounds();
    for seed in 0..10 {
        let x = interior_point(lb, ub, seed);
        let (_, grad) = prob.eval_objective(&x);
        let fd = fd_gradient(|z| prob.eval_objective(z).0, &x);
        for (g, f) in grad.iter().zip(&fd) {
            assert!(rel_err(*g, *f) < 1e-7, "grad {g} vs fd {f}");
        }
    }
}

#[test]
fn equality_jacobian_matches_fd() {
    let prob = assemble();
    let (lb, ub) = prob.bounds();
    let m = prob.counts().equalities();
    for seed in 0..10 {
        let x = interior_point(lb, ub, seed);
        let (_, jac) = prob.eval_equalities(&x);
        let fd = fd_jacobian(|z| prob.eval_equalities(z).0, &x, m);
        let dense = jac.to_dense();
        let err = max_rel_err(&dense, &fd);
        assert!(err < 1e-6, "equality jacobian max rel err {err} at seed {seed}");
    }
}

#[test]
fn inequality_jacobian_matches_fd() {
    let prob = assemble();
    let (lb, ub) = prob.bounds();
    let m = prob.counts().line;
    for seed in 0..10 {
        let x = interior_point(lb, ub, seed);
        let (_, jac) = prob.eval_inequalities(&x);
        let fd = fd_jacobian(|z| prob.eval_inequalities(z).0, &x, m);
        let err = max_rel_err(&jac.to_dense(), &fd);
        assert!(err < 1e-6, "inequality jacobian max rel err {err} at seed {seed}");
    }
}

#[test]
fn lagrangian_hessian_matches_fd_of_gradient() {
    let prob = assemble();
    let (lb, ub) = prob.bounds();
    let n = prob.num_vars();
    let m_eq = prob.counts().equalities();
    let m_in = prob.counts().line;

    for seed in 0..10 {
        let x = interior_point(lb, ub, seed);
        // deterministic multipliers from the same generator
        let lam: Vec<f64> = interior_point(&vec![-1.0; m_eq], &vec![1.0; m_eq], seed + 100);
        let mu: Vec<f64> = interior_point(&vec![0.0; m_in], &vec![1.0; m_in], seed + 200);
        let obj_scale = 1e-3;

        let grad_l = |z: &[f64]| -> Vec<f64> {
            let (_, mut g) = prob.eval_objective(z);
            for gi in g.iter_mut() {
                *gi *= obj_scale;
            }
            let (_, jg) = prob.eval_equalities(z);
            let (_, jh) = prob.eval_inequalities(z);
            let jg_lam = jg.t_matvec(&lam);
            let jh_mu = jh.t_matvec(&mu);
            for i in 0..g.len() {
                g[i] += jg_lam[i] + jh_mu[i];
            }
            g
        };

        let fd = fd_jacobian(grad_l, &x, n);
        let upper = prob.eval_lagrangian_hessian(&x, obj_scale, &lam, &mu);
        // symmetrize the stored upper triangle
        let mut dense = vec![vec![0.0; n]; n];
        for (r, c, v) in upper.iter() {
            dense[r][c] += v;
            if r != c {
                dense[c][r] += v;
            }
        }
        // FD of a gradient need not be perfectly symmetric; compare both ways
        let mut worst: f64 = 0.0;
        for r in 0..n {
            for c in 0..n {
                let sym_fd = 0.5 * (fd[r][c] + fd[c][r]);
                worst = worst.max(rel_err(dense[r][c], sym_fd));
            }
        }
        assert!(worst < 1e-5, "hessian max rel err {worst} at seed {seed}");
    }
}
