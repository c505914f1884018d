//! Shared fixtures and independent numerical oracles for integration tests.

#![allow(dead_code)]

use evopf_core::fleet::{FleetSpec, StorageDevice};
use evopf_core::grid::{Branch, Bus, Generator, NetworkCase};
use evopf_core::mat::Mat;
use evopf_core::problem::DemandSeries;

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central finite-difference Jacobian of a vector function, dense m x n.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let mut jac = vec![vec![0.0; x.len()]; m];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        for r in 0..m {
            jac[r][i] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    jac
}

/// Relative error with an absolute floor of 1.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative entry error between an analytic sparse matrix (given
/// densely) and a finite-difference matrix.
pub fn max_rel_err(analytic: &[Vec<f64>], fd: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rf) in analytic.iter().zip(fd) {
        for (&a, &b) in ra.iter().zip(rf) {
            worst = worst.max(rel_err(a, b));
        }
    }
    worst
}

/// The standing small instance: 5-bus radial feeder, one slack generator,
/// 3 EVs with staggered windows, T = 4 quarter-hour periods.
pub fn five_bus_case() -> NetworkCase {
    let mut branches = vec![
        Branch::line(1, 2, 0.02, 0.06),
        Branch::line(2, 3, 0.03, 0.08),
        Branch::line(3, 4, 0.02, 0.05),
        Branch::line(2, 5, 0.04, 0.09),
    ];
    for br in &mut branches {
        br.s_max_mva = 4.0;
        br.b_pu = 0.01;
    }
    NetworkCase::new(
        "five-bus",
        1.0,
        vec![
            Bus::slack(1),
            Bus::pq(2),
            Bus::pq(3),
            Bus::pq(4),
            Bus::pq(5),
        ],
        branches,
        vec![Generator {
            bus: 1,
            p_min_mw: 0.0,
            p_max_mw: 20.0,
            q_min_mvar: -20.0,
            q_max_mvar: 20.0,
            cost_coeff: 1.0,
        }],
    )
    .unwrap()
}

pub fn three_ev_fleet(t: usize) -> FleetSpec {
    let mut fleet = FleetSpec::idle(3, 1, t);
    fleet.devices.push(StorageDevice::charger(3, 0.030, 0.0023, 0.95));
    fleet.devices.push(StorageDevice::charger(4, 0.060, 0.0110, 0.90));
    fleet.devices.push(StorageDevice::charger(5, 0.030, 0.0037, 1.00));
    // staggered windows: dev0 all periods, dev1 from t=1, dev2 t=1..t-2
    let windows: [(usize, usize); 3] = [(0, t - 1), (1, t - 1), (1, t.saturating_sub(2))];
    for (i, &(a, d)) in windows.iter().enumerate() {
        for k in a..=d {
            fleet.avbp.set(i, k, 1.0);
            fleet.conch.set(i, k, 1.0);
        }
        // departure lift sized so the short windows stay feasible
        fleet.soci.set(i, a, 0.85 + 0.01 * i as f64);
        fleet.socmi.set(i, d, 0.9);
    }
    fleet
}

/// Same shape as [`three_ev_fleet`] but demanding an unreachable
/// departure SOC on the smallest charger.
pub fn infeasible_fleet(t: usize) -> FleetSpec {
    let mut fleet = three_ev_fleet(t);
    fleet.soci.set(0, 0, 0.3);
    fleet.socmi.set(0, t - 1, 0.9);
    fleet
}

pub fn five_bus_demand(t: usize) -> DemandSeries {
    let mut pd = Mat::zeros(5, t);
    let mut qd = Mat::zeros(5, t);
    for k in 0..t {
        let scale = 1.0 + 0.2 * (k as f64 / t as f64);
        for b in 1..5 {
            pd.set(b, k, 0.4 * scale * (1.0 + 0.1 * b as f64));
            qd.set(b, k, 0.12 * scale);
        }
    }
    let price: Vec<f64> = (0..t).map(|k| 250.0 + 40.0 * (k as f64)).collect();
    DemandSeries {
        pd_mw: pd,
        qd_mw: qd,
        price_nok_mwh: price,
        dt_h: 0.25,
    }
}

/// Deterministic interior sample of the box [lb, ub].
pub fn interior_point(lb: &[f64], ub: &[f64], seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut next = move || {
        // xorshift64*
        state ^= state >> 12;
        state ^= state << 25;
        state ^= state >> 27;
        (state.wrapping_mul(0x2545f4914f6cdd1d) >> 11) as f64 / (1u64 << 53) as f64
    };
    lb.iter()
        .zip(ub)
        .map(|(&lo, &hi)| {
            let lo_f = lo.max(-10.0);
            let hi_f = hi.min(10.0);
            let u = 0.2 + 0.6 * next();
            lo_f + u * (hi_f - lo_f)
        })
        .collect()
}
