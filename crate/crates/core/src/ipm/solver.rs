//! The primal-dual interior-point iteration.
//!
//! Inequalities carry slacks (h + s = 0, s > 0); box constraints enter as
//! logarithmic barriers on the bound gaps directly, so the KKT system
//! stays at size n + m_eq. Each iteration eliminates the slack and bound
//! dual updates analytically, solves the condensed augmented system via
//! the block-ordered LDL^T path, and applies a fraction-to-boundary step.

use super::kkt::{KktSolver, KktSystem};
use super::nlp::NlpProblem;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierRule {
    /// Fiacco-McCormick: shrink the barrier once the scaled KKT error of
    /// the current barrier subproblem is small.
    Monotone,
    /// Centrality-adaptive update from the current complementarity spread.
    Adaptive,
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    pub tol_kkt: f64,
    pub max_iter: usize,
    /// Initial barrier parameter.
    pub mu0: f64,
    pub barrier_rule: BarrierRule,
    /// Fraction-to-boundary factor in (0, 1).
    pub tau: f64,
    /// Regularization floor for the KKT factorization.
    pub reg_floor: f64,
    /// Internal objective scaling; results are reported unscaled.
    pub obj_scale: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tol_kkt: 1e-6,
            max_iter: 150,
            mu0: 0.1,
            barrier_rule: BarrierRule::Adaptive,
            tau: 0.995,
            reg_floor: 1e-8,
            obj_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    MaxIter,
    Infeasible,
    Numerical,
}

/// One line of the iteration log.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    pub iter: usize,
    pub barrier: f64,
    pub primal_inf: f64,
    pub dual_inf: f64,
    pub complementarity: f64,
    pub step_primal: f64,
    pub step_dual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<f64>,
    pub lam_eq: Vec<f64>,
    pub mu_ineq: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    /// Objective value at `x`, unscaled.
    pub objective: f64,
    pub status: IpmStatus,
    pub log: Vec<IterRecord>,
}

impl IpmResult {
    pub fn iterations(&self) -> usize {
        self.log.last().map_or(0, |r| r.iter)
    }
}

#[derive(Debug, Error)]
pub enum IpmError {
    #[error("variable {0} has a collapsed bound box; eliminate fixed variables before solving")]
    CollapsedBound(usize),
    #[error("problem reports {what} of inconsistent dimension")]
    Dimension { what: &'static str },
}

struct Workspace {
    lb: Vec<f64>,
    ub: Vec<f64>,
    has_lb: Vec<bool>,
    has_ub: Vec<bool>,
}

impl Workspace {
    fn gap_lower(&self, x: &[f64], i: usize) -> f64 {
        x[i] - self.lb[i]
    }
    fn gap_upper(&self, x: &[f64], i: usize) -> f64 {
        self.ub[i] - x[i]
    }
}

pub fn solve(problem: &dyn NlpProblem, opts: &IpmOptions) -> Result<IpmResult, IpmError> {
    let n = problem.num_vars();
    let m_eq = problem.num_eq();
    let m_in = problem.num_ineq();
    let (lb, ub) = problem.bounds();
    if lb.len() != n || ub.len() != n {
        return Err(IpmError::Dimension { what: "bounds" });
    }

    // empty box: infeasible by inspection
    if lb.iter().zip(&ub).any(|(l, u)| l > u) {
        return Ok(IpmResult {
            x: problem.initial_point(),
            lam_eq: vec![0.0; m_eq],
            mu_ineq: vec![0.0; m_in],
            z_lower: vec![0.0; n],
            z_upper: vec![0.0; n],
            objective: f64::NAN,
            status: IpmStatus::Infeasible,
            log: Vec::new(),
        });
    }
    if let Some(i) = (0..n).find(|&i| lb[i] == ub[i]) {
        return Err(IpmError::CollapsedBound(i));
    }

    let ws = Workspace {
        has_lb: lb.iter().map(|l| l.is_finite()).collect(),
        has_ub: ub.iter().map(|u| u.is_finite()).collect(),
        lb,
        ub,
    };

    // interior start
    let mut x = problem.initial_point();
    if x.len() != n {
        return Err(IpmError::Dimension { what: "initial point" });
    }
    for i in 0..n {
        let (l, u) = (ws.lb[i], ws.ub[i]);
        match (ws.has_lb[i], ws.has_ub[i]) {
            (true, true) => {
                let push = 1e-2 * (u - l).min(1.0 + l.abs().max(u.abs()));
                x[i] = x[i].clamp(l + push, u - push);
            }
            (true, false) => x[i] = x[i].max(l + 1e-2 * (1.0 + l.abs())),
            (false, true) => x[i] = x[i].min(u - 1e-2 * (1.0 + u.abs())),
            (false, false) => {}
        }
    }

    let mut gamma = opts.mu0;
    let (h0, _) = problem.inequalities(&x);
    if h0.len() != m_in {
        return Err(IpmError::Dimension { what: "inequalities" });
    }
    let mut s: Vec<f64> = h0.iter().map(|&h| (-h).max(1e-4)).collect();
    let mut mu: Vec<f64> = s.iter().map(|&si| gamma / si).collect();
    let mut lam = vec![0.0; m_eq];
    let mut zl: Vec<f64> = (0..n)
        .map(|i| if ws.has_lb[i] { gamma / ws.gap_lower(&x, i) } else { 0.0 })
        .collect();
    let mut zu: Vec<f64> = (0..n)
        .map(|i| if ws.has_ub[i] { gamma / ws.gap_upper(&x, i) } else { 0.0 })
        .collect();

    let mut kkt = match KktSolver::new(n, m_eq, problem.kkt_order(), opts.reg_floor) {
        Ok(k) => k,
        Err(_) => {
            return Err(IpmError::Dimension { what: "kkt ordering" });
        }
    };

    let mut log: Vec<IterRecord> = Vec::with_capacity(opts.max_iter + 1);
    let mut status = IpmStatus::MaxIter;
    let mut stall_count = 0usize;

    for iter in 0..=opts.max_iter {
        let (f_raw, mut grad) = {
            let f = problem.objective(&x);
            let g = problem.gradient(&x);
            (f, g)
        };
        for gi in grad.iter_mut() {
            *gi *= opts.obj_scale;
        }
        let (g_eq, jac_eq) = problem.equalities(&x);
        let (h_in, jac_in) = problem.inequalities(&x);

        // dual residual: grad + Jg' lam + Jh' mu - zl + zu
        let mut r_dual = grad.clone();
        let jg_lam = jac_eq.t_matvec(&lam);
        let jh_mu = jac_in.t_matvec(&mu);
        for i in 0..n {
            r_dual[i] += jg_lam[i] + jh_mu[i] - zl[i] + zu[i];
        }

        let x_norm = inf_norm(&x);
        let dual_scale = 1.0
            + inf_norm(&lam)
                .max(inf_norm(&mu))
                .max(inf_norm(&zl))
                .max(inf_norm(&zu));
        let dual_inf = inf_norm(&r_dual) / dual_scale;
        let viol_in = h_in.iter().fold(0.0f64, |m, &h| m.max(h));
        let primal_inf = inf_norm(&g_eq).max(viol_in) / (1.0 + x_norm);

        let mut comp_total = 0.0;
        let mut comp_min = f64::INFINITY;
        let mut n_comp = 0usize;
        for i in 0..m_in {
            let c = s[i] * mu[i];
            comp_total += c;
            comp_min = comp_min.min(c);
            n_comp += 1;
        }
        for i in 0..n {
            if ws.has_lb[i] {
                let c = ws.gap_lower(&x, i) * zl[i];
                comp_total += c;
                comp_min = comp_min.min(c);
                n_comp += 1;
            }
            if ws.has_ub[i] {
                let c = ws.gap_upper(&x, i) * zu[i];
                comp_total += c;
                comp_min = comp_min.min(c);
                n_comp += 1;
            }
        }
        let comp_avg = if n_comp > 0 { comp_total / n_comp as f64 } else { 0.0 };
        let comp_scaled = comp_avg / (1.0 + x_norm);

        if log.is_empty() {
            log.push(IterRecord {
                iter: 0,
                barrier: gamma,
                primal_inf,
                dual_inf,
                complementarity: comp_scaled,
                step_primal: 0.0,
                step_dual: 0.0,
                objective: f_raw,
            });
        }

        if primal_inf < opts.tol_kkt && dual_inf < opts.tol_kkt && comp_scaled < opts.tol_kkt {
            status = IpmStatus::Optimal;
            break;
        }
        if iter == opts.max_iter {
            break;
        }

        // barrier update
        gamma = match opts.barrier_rule {
            BarrierRule::Adaptive => {
                if n_comp == 0 {
                    (gamma * 0.2).max(1e-13)
                } else {
                    let xi = (comp_min / comp_avg).clamp(1e-8, 1.0);
                    let sigma = 0.1 * (0.05 * (1.0 - xi) / xi).min(2.0).powi(3);
                    (sigma.max(1e-4) * comp_avg).max(1e-13)
                }
            }
            BarrierRule::Monotone => {
                let err = primal_inf.max(dual_inf).max(comp_scaled);
                if err <= 10.0 * gamma {
                    (0.2 * gamma).min(gamma.powf(1.5)).max(opts.tol_kkt / 100.0)
                } else {
                    gamma
                }
            }
        };

        // condensed system pieces
        let hess = problem.lagrangian_hessian(&x, opts.obj_scale, &lam, &mu);
        let d_ineq: Vec<f64> = (0..m_in).map(|i| mu[i] / s[i]).collect();
        let mut d_bounds = vec![0.0; n];
        for i in 0..n {
            if ws.has_lb[i] {
                d_bounds[i] += zl[i] / ws.gap_lower(&x, i);
            }
            if ws.has_ub[i] {
                d_bounds[i] += zu[i] / ws.gap_upper(&x, i);
            }
        }

        // rhs of the condensed system
        let r_h: Vec<f64> = (0..m_in).map(|i| h_in[i] + s[i]).collect();
        let q_mu: Vec<f64> = (0..m_in)
            .map(|i| gamma / s[i] - mu[i] + mu[i] * r_h[i] / s[i])
            .collect();
        let jh_qmu = jac_in.t_matvec(&q_mu);
        let mut rhs = vec![0.0; n + m_eq];
        for i in 0..n {
            let q_zl = if ws.has_lb[i] { gamma / ws.gap_lower(&x, i) - zl[i] } else { 0.0 };
            let q_zu = if ws.has_ub[i] { gamma / ws.gap_upper(&x, i) - zu[i] } else { 0.0 };
            rhs[i] = -r_dual[i] - jh_qmu[i] + q_zl - q_zu;
        }
        for r in 0..m_eq {
            rhs[n + r] = -g_eq[r];
        }

        let sol = match kkt.solve(
            &KktSystem {
                h_upper: &hess,
                jac_eq: &jac_eq,
                jac_ineq: &jac_in,
                d_ineq: &d_ineq,
                d_bounds: &d_bounds,
            },
            &rhs,
        ) {
            Ok(s) => s,
            Err(_) => {
                status = IpmStatus::Numerical;
                break;
            }
        };
        if sol.step.iter().any(|v| !v.is_finite()) {
            status = IpmStatus::Numerical;
            break;
        }
        let dx = &sol.step[..n];
        let dlam = &sol.step[n..];

        // recover eliminated updates
        let jh_dx = jac_in.matvec(dx);
        let ds: Vec<f64> = (0..m_in).map(|i| -r_h[i] - jh_dx[i]).collect();
        let dmu: Vec<f64> = (0..m_in)
            .map(|i| (gamma - s[i] * mu[i] - mu[i] * ds[i]) / s[i])
            .collect();
        let dzl: Vec<f64> = (0..n)
            .map(|i| {
                if ws.has_lb[i] {
                    let gap = ws.gap_lower(&x, i);
                    gamma / gap - zl[i] - zl[i] * dx[i] / gap
                } else {
                    0.0
                }
            })
            .collect();
        let dzu: Vec<f64> = (0..n)
            .map(|i| {
                if ws.has_ub[i] {
                    let gap = ws.gap_upper(&x, i);
                    gamma / gap - zu[i] + zu[i] * dx[i] / gap
                } else {
                    0.0
                }
            })
            .collect();

        // fraction-to-boundary step lengths
        let tau = opts.tau;
        let mut alpha_p = 1.0f64;
        for i in 0..m_in {
            if ds[i] < 0.0 {
                alpha_p = alpha_p.min(-tau * s[i] / ds[i]);
            }
        }
        for i in 0..n {
            if ws.has_lb[i] && dx[i] < 0.0 {
                alpha_p = alpha_p.min(-tau * ws.gap_lower(&x, i) / dx[i]);
            }
            if ws.has_ub[i] && dx[i] > 0.0 {
                alpha_p = alpha_p.min(tau * ws.gap_upper(&x, i) / dx[i]);
            }
        }
        let mut alpha_d = 1.0f64;
        for i in 0..m_in {
            if dmu[i] < 0.0 {
                alpha_d = alpha_d.min(-tau * mu[i] / dmu[i]);
            }
        }
        for i in 0..n {
            if ws.has_lb[i] && dzl[i] < 0.0 {
                alpha_d = alpha_d.min(-tau * zl[i] / dzl[i]);
            }
            if ws.has_ub[i] && dzu[i] < 0.0 {
                alpha_d = alpha_d.min(-tau * zu[i] / dzu[i]);
            }
        }

        for i in 0..n {
            x[i] += alpha_p * dx[i];
        }
        for i in 0..m_in {
            s[i] += alpha_p * ds[i];
            mu[i] += alpha_d * dmu[i];
        }
        for r in 0..m_eq {
            lam[r] += alpha_d * dlam[r];
        }
        for i in 0..n {
            zl[i] += alpha_d * dzl[i];
            zu[i] += alpha_d * dzu[i];
        }
        debug_assert!(s.iter().all(|&v| v > 0.0));
        debug_assert!(mu.iter().all(|&v| v > 0.0));

        if alpha_p < 1e-10 && alpha_d < 1e-10 {
            stall_count += 1;
            if stall_count >= 3 {
                status = if primal_inf > opts.tol_kkt.sqrt() {
                    IpmStatus::Infeasible
                } else {
                    IpmStatus::Numerical
                };
                break;
            }
        } else {
            stall_count = 0;
        }

        log.push(IterRecord {
            iter: iter + 1,
            barrier: gamma,
            primal_inf,
            dual_inf,
            complementarity: comp_scaled,
            step_primal: alpha_p,
            step_dual: alpha_d,
            objective: f_raw,
        });
    }

    // classify a max-iteration exit that is clearly primal-stuck
    if status == IpmStatus::MaxIter {
        if let Some(last) = log.last() {
            let tail: Vec<&IterRecord> = log.iter().rev().take(10).collect();
            let best_recent = tail.iter().map(|r| r.primal_inf).fold(f64::INFINITY, f64::min);
            if last.primal_inf > 1e2 * opts.tol_kkt && best_recent > 0.9 * last.primal_inf {
                status = IpmStatus::Infeasible;
            }
        }
    }

    let objective = problem.objective(&x);
    Ok(IpmResult {
        x,
        lam_eq: lam,
        mu_ineq: mu,
        z_lower: zl,
        z_upper: zu,
        objective,
        status,
        log,
    })
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}
