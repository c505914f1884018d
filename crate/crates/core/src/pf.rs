//! Newton-Raphson AC power flow in polar coordinates.
//!
//! Used directly to simulate uncoordinated charging (one solve per period)
//! and as a cross-check on optimal power flow solutions: fixing the
//! controls from an optimum and re-running the power flow must reproduce
//! the optimiser's voltages.

use crate::grid::{bus_injections, line_flows, Admittances, BusKind, NetworkCase};
use crate::linalg::lu_solve_in_place;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PfError {
    #[error("load vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("generator dispatch has length {got}, expected {expected}")]
    DispatchDimension { expected: usize, got: usize },
    #[error("singular power-flow Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct PfOptions {
    /// Infinity-norm mismatch tolerance, p.u.
    pub tol: f64,
    pub max_iter: usize,
    /// Fixed active injection per generator (MW). Entries for the slack
    /// generator are ignored; the slack bus balances the system.
    pub gen_p_mw: Option<Vec<f64>>,
    /// Fixed reactive injection per generator at PQ buses (MVAr).
    pub gen_q_mvar: Option<Vec<f64>>,
    /// Voltage setpoints per bus, used at the slack and PV buses only.
    /// Defaults to 1.0 p.u.
    pub v_setpoint: Option<Vec<f64>>,
    /// Warm start (v_mag, v_ang); flat start when absent.
    pub warm_start: Option<(Vec<f64>, Vec<f64>)>,
    /// Enforce generator Q limits at PV buses by PV->PQ switching.
    pub enforce_q_limits: bool,
}

impl Default for PfOptions {
    fn default() -> Self {
        PfOptions {
            tol: 1e-8,
            max_iter: 30,
            gen_p_mw: None,
            gen_q_mvar: None,
            v_setpoint: None,
            warm_start: None,
            enforce_q_limits: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PfSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    /// Complex bus injections at the solution, p.u.
    pub s_bus: Vec<Complex64>,
    /// Complex line flows (from terminals then to terminals), p.u.
    pub s_line: Vec<Complex64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch_pu: f64,
}

impl PfSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.v_mag
            .iter()
            .zip(&self.v_ang)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }

    /// Total complex losses: sum of from-side plus to-side flows.
    pub fn total_loss_pu(&self) -> Complex64 {
        let n_l = self.s_line.len() / 2;
        (0..n_l).map(|i| self.s_line[i] + self.s_line[n_l + i]).sum()
    }
}

/// Reusable solver bound to one case and its admittances; sweeping a time
/// series re-uses the structure and warm starts between periods.
pub struct PowerFlowSolver<'a> {
    case: &'a NetworkCase,
    adm: &'a Admittances,
}

impl<'a> PowerFlowSolver<'a> {
    pub fn new(case: &'a NetworkCase, adm: &'a Admittances) -> Self {
        PowerFlowSolver { case, adm }
    }

    pub fn solve(
        &self,
        p_load_mw: &[f64],
        q_load_mvar: &[f64],
        opts: &PfOptions,
    ) -> Result<PfSolution, PfError> {
        let n_b = self.case.n_buses();
        let n_g = self.case.n_generators();
        if p_load_mw.len() != n_b || q_load_mvar.len() != n_b {
            return Err(PfError::Dimension {
                expected: n_b,
                got: if p_load_mw.len() != n_b {
                    p_load_mw.len()
                } else {
                    q_load_mvar.len()
                },
            });
        }
        for v in [&opts.gen_p_mw, &opts.gen_q_mvar] {
            if let Some(v) = v {
                if v.len() != n_g {
                    return Err(PfError::DispatchDimension {
                        expected: n_g,
                        got: v.len(),
                    });
                }
            }
        }

        let base = self.case.base_mva();
        let slack = self.case.slack_index();

        // net specified injections per bus, p.u.
        let mut p_spec = vec![0.0; n_b];
        let mut q_spec = vec![0.0; n_b];
        for b in 0..n_b {
            p_spec[b] -= p_load_mw[b] / base;
            q_spec[b] -= q_load_mvar[b] / base;
        }
        for g in 0..n_g {
            let b = self.case.gen_bus(g);
            if b == slack {
                continue;
            }
            if let Some(gp) = &opts.gen_p_mw {
                p_spec[b] += gp[g] / base;
            }
            if let Some(gq) = &opts.gen_q_mvar {
                q_spec[b] += gq[g] / base;
            }
        }

        // bus kinds, possibly mutated by Q-limit switching
        let mut kinds: Vec<BusKind> = self.case.buses().iter().map(|b| b.kind).collect();

        let setpoint = |b: usize| -> f64 {
            opts.v_setpoint
                .as_ref()
                .map(|v| v[b])
                .unwrap_or(1.0)
        };

        let mut v_mag: Vec<f64>;
        let mut v_ang: Vec<f64>;
        match &opts.warm_start {
            Some((m, a)) if m.len() == n_b && a.len() == n_b => {
                v_mag = m.clone();
                v_ang = a.clone();
            }
            _ => {
                v_mag = (0..n_b)
                    .map(|b| match kinds[b] {
                        BusKind::Pq => 1.0,
                        _ => setpoint(b),
                    })
                    .collect();
                v_ang = vec![0.0; n_b];
            }
        }
        // pinned magnitudes/angle always honored exactly
        v_ang[slack] = 0.0;
        v_mag[slack] = setpoint(slack);
        for b in 0..n_b {
            if kinds[b] == BusKind::Pv {
                v_mag[b] = setpoint(b);
            }
        }

        let mut iterations = 0;
        let mut rounds = 0;
        loop {
            let (converged, iters, max_mis) =
                self.newton_loop(&mut v_mag, &mut v_ang, &p_spec, &q_spec, &kinds, opts)?;
            iterations += iters;

            if converged && opts.enforce_q_limits && rounds < 5 {
                // PV -> PQ switching at generator reactive limits
                let v = to_complex(&v_mag, &v_ang);
                let s = bus_injections(&v, self.adm).expect("dim checked");
                let mut switched = false;
                for g in 0..n_g {
                    let b = self.case.gen_bus(g);
                    if b == slack || kinds[b] != BusKind::Pv {
                        continue;
                    }
                    let gen = &self.case.generators()[g];
                    let q_gen_pu = s[b].im + q_load_mvar[b] / base;
                    let (q_min, q_max) = (gen.q_min_mvar / base, gen.q_max_mvar / base);
                    if q_gen_pu > q_max + 1e-9 || q_gen_pu < q_min - 1e-9 {
                        let clamped = q_gen_pu.clamp(q_min, q_max);
                        q_spec[b] = clamped - q_load_mvar[b] / base;
                        kinds[b] = BusKind::Pq;
                        switched = true;
                    }
                }
                if switched {
                    rounds += 1;
                    continue;
                }
            }

            let v = to_complex(&v_mag, &v_ang);
            let s_bus = bus_injections(&v, self.adm).expect("dim checked");
            let s_line = line_flows(&v, self.adm).expect("dim checked");
            return Ok(PfSolution {
                v_mag,
                v_ang,
                s_bus,
                s_line,
                converged,
                iterations,
                max_mismatch_pu: max_mis,
            });
        }
    }

    /// Core Newton iteration; returns (converged, iterations, final mismatch).
    fn newton_loop(
        &self,
        v_mag: &mut [f64],
        v_ang: &mut [f64],
        p_spec: &[f64],
        q_spec: &[f64],
        kinds: &[BusKind],
        opts: &PfOptions,
    ) -> Result<(bool, usize, f64), PfError> {
        let n_b = self.case.n_buses();
        let ang_vars: Vec<usize> = (0..n_b).filter(|&b| kinds[b] != BusKind::Slack).collect();
        let mag_vars: Vec<usize> = (0..n_b).filter(|&b| kinds[b] == BusKind::Pq).collect();
        let mut ang_pos = vec![usize::MAX; n_b];
        let mut mag_pos = vec![usize::MAX; n_b];
        for (k, &b) in ang_vars.iter().enumerate() {
            ang_pos[b] = k;
        }
        for (k, &b) in mag_vars.iter().enumerate() {
            mag_pos[b] = ang_vars.len() + k;
        }
        let dim = ang_vars.len() + mag_vars.len();

        let mismatch = |v_mag: &[f64], v_ang: &[f64]| -> (Vec<f64>, f64) {
            let v = to_complex(v_mag, v_ang);
            let s = bus_injections(&v, self.adm).expect("dim checked");
            let mut f = vec![0.0; dim];
            for (k, &b) in ang_vars.iter().enumerate() {
                f[k] = s[b].re - p_spec[b];
            }
            for (k, &b) in mag_vars.iter().enumerate() {
                f[ang_vars.len() + k] = s[b].im - q_spec[b];
            }
            let worst = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            (f, worst)
        };

        let (mut f, mut worst) = mismatch(v_mag, v_ang);
        let mut iter = 0;
        while worst >= opts.tol && iter < opts.max_iter {
            iter += 1;

            // dense Jacobian over the unknowns
            let v = to_complex(v_mag, v_ang);
            let i_bus = self.adm.y_bus.matvec(&v);
            let mut jac = vec![0.0; dim * dim];
            let mut stamp = |row: usize, col: usize, val: f64| {
                if row != usize::MAX && col != usize::MAX {
                    jac[row * dim + col] += val;
                }
            };
            for b in 0..n_b {
                let e_b = v[b] / v_mag[b];
                // diagonal parts of dS/dVa and dS/dVm
                let dsa_diag = Complex64::i() * v[b] * i_bus[b].conj();
                let dsm_diag = i_bus[b].conj() * e_b;
                let (pr, qr) = (ang_pos[b], mag_pos[b]);
                stamp(pr, ang_pos[b], dsa_diag.re);
                stamp(qr, ang_pos[b], dsa_diag.im);
                stamp(pr, mag_pos[b], dsm_diag.re);
                stamp(qr, mag_pos[b], dsm_diag.im);
                let (cols, vals) = self.adm.y_bus.row(b);
                for (&j, &y) in cols.iter().zip(vals) {
                    let e_j = v[j] / v_mag[j];
                    let dsa = -Complex64::i() * v[b] * (y * v[j]).conj();
                    let dsm = v[b] * (y * e_j).conj();
                    stamp(pr, ang_pos[j], dsa.re);
                    stamp(qr, ang_pos[j], dsa.im);
                    stamp(pr, mag_pos[j], dsm.re);
                    stamp(qr, mag_pos[j], dsm.im);
                }
            }

            let mut rhs: Vec<f64> = f.iter().map(|x| -x).collect();
            if !lu_solve_in_place(&mut jac, &mut rhs, dim) {
                return Err(PfError::SingularJacobian { iteration: iter });
            }
            for (k, &b) in ang_vars.iter().enumerate() {
                v_ang[b] += rhs[k];
            }
            for (k, &b) in mag_vars.iter().enumerate() {
                v_mag[b] += rhs[ang_vars.len() + k];
            }

            (f, worst) = mismatch(v_mag, v_ang);
        }
        Ok((worst < opts.tol, iter, worst))
    }
}

fn to_complex(v_mag: &[f64], v_ang: &[f64]) -> Vec<Complex64> {
    v_mag
        .iter()
        .zip(v_ang)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect()
}

/// One-shot convenience wrapper building admittances internally.
pub fn solve_power_flow(
    case: &NetworkCase,
    p_load_mw: &[f64],
    q_load_mvar: &[f64],
    opts: &PfOptions,
) -> Result<PfSolution, PfError> {
    let adm = crate::grid::build_admittances(case).expect("validated case");
    PowerFlowSolver::new(case, &adm).solve(p_load_mw, q_load_mvar, opts)
}

/// Loading of each line terminal as a percentage of its rating.
/// `None` marks unrated branches.
pub fn load_ratio(sol: &PfSolution, adm: &Admittances) -> Vec<Option<f64>> {
    let n_l = adm.n_lines();
    (0..2 * n_l)
        .map(|k| {
            adm.s_max_pu[k % n_l].map(|smax| 100.0 * sol.s_line[k].norm() / smax)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageExtremes {
    pub min_pu: f64,
    pub max_pu: f64,
    /// Internal index of the bus attaining the minimum.
    pub min_bus: usize,
}

pub fn voltage_extremes(sol: &PfSolution) -> VoltageExtremes {
    let mut min_pu = f64::INFINITY;
    let mut max_pu = f64::NEG_INFINITY;
    let mut min_bus = 0;
    for (b, &m) in sol.v_mag.iter().enumerate() {
        if m < min_pu {
            min_pu = m;
            min_bus = b;
        }
        max_pu = max_pu.max(m);
    }
    VoltageExtremes {
        min_pu,
        max_pu,
        min_bus,
    }
}
