//! Synthetic radial feeders standing in for confidential grid data:
//! seeded tree topologies, a noon-to-noon double-peak base-load history,
//! and rating calibration against the simulated base case.

use super::FeederHistory;
use crate::grid::{build_admittances, Branch, Bus, Generator, NetworkCase};
use crate::mat::Mat;
use crate::pf::{PfOptions, PowerFlowSolver};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub n_buses: usize,
    pub households_per_bus: usize,
    /// Aggregated base-load peak per household, kW. Sized so rated-power
    /// EV charging is a first-order perturbation of the feeder, as on
    /// real low-voltage feeders.
    pub peak_kw_per_household: f64,
    pub base_mva: f64,
    /// Per-segment series impedance, p.u. on `base_mva`.
    pub segment_r_pu: f64,
    pub segment_x_pu: f64,
    /// Probability that a new bus extends the previous one instead of
    /// branching off a random earlier bus.
    pub trunk_bias: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_buses: 30,
            households_per_bus: 4,
            peak_kw_per_household: 1.5,
            base_mva: 0.5,
            segment_r_pu: 0.04,
            segment_x_pu: 0.08,
            trunk_bias: 0.65,
        }
    }
}

impl SynthParams {
    pub fn peak_mw(&self) -> f64 {
        (self.n_buses - 1) as f64
            * self.households_per_bus as f64
            * self.peak_kw_per_household
            / 1000.0
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFeeder {
    pub case: NetworkCase,
    /// One entry per household: its connection bus.
    pub household_buses: Vec<u32>,
    /// Synthetic feeder history for the base-load disaggregation.
    pub history: FeederHistory,
    /// Index of the head branch out of the slack; the binding
    /// "transformer" of the feeder.
    pub trunk_branch: usize,
}

impl SyntheticFeeder {
    pub fn n_households(&self) -> usize {
        self.household_buses.len()
    }
}

/// Noon-to-noon base-load shape: evening peak around hour 6 (18:00) and a
/// smaller morning peak around hour 20 (08:00), normalized to 1 at peak.
pub fn daily_shape(hour: f64) -> f64 {
    let bump = |center: f64, width: f64, height: f64| {
        height * (-((hour - center) * (hour - center)) / (2.0 * width * width)).exp()
    };
    let raw = 0.52 + bump(6.0, 2.4, 0.48) + bump(20.0, 2.0, 0.34);
    raw / 1.0
}

/// Build a seeded radial feeder with its base-load history. Branch
/// ratings are left open (0 = unrated); see [`calibrate_ratings`].
pub fn build_feeder(params: &SynthParams, seed: u64) -> SyntheticFeeder {
    assert!(params.n_buses >= 2, "a feeder needs at least two buses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // the substation regulates its own bus: slack voltage held at 1.0
    let mut slack = Bus::slack(1);
    slack.v_min = 1.0;
    slack.v_max = 1.0;
    let mut buses = vec![slack];
    for id in 2..=params.n_buses as u32 {
        buses.push(Bus::pq(id));
    }
    let mut branches = Vec::with_capacity(params.n_buses - 1);
    for id in 2..=params.n_buses as u32 {
        let parent = if id == 2 || rng.gen::<f64>() < params.trunk_bias {
            id - 1
        } else {
            rng.gen_range(1..id)
        };
        branches.push(Branch::line(
            parent,
            id,
            params.segment_r_pu,
            params.segment_x_pu,
        ));
    }
    let gen_cap = 10.0 * params.peak_mw().max(0.1);
    let generators = vec![Generator {
        bus: 1,
        p_min_mw: 0.0,
        p_max_mw: gen_cap,
        q_min_mvar: -gen_cap,
        q_max_mvar: gen_cap,
        cost_coeff: 1.0,
    }];
    let case = NetworkCase::new(
        format!("synth-{}-{}", params.n_buses, seed),
        params.base_mva,
        buses,
        branches,
        generators,
    )
    .expect("synthetic feeder construction");

    // households: fixed count per PQ bus
    let mut household_buses = Vec::new();
    for bus in case.buses().iter().skip(1) {
        for _ in 0..params.households_per_bus {
            household_buses.push(bus.id);
        }
    }

    // history: hourly PCC series over 24 h shaped by the daily profile,
    // one "transformer" per PQ bus with seeded weight, pf about 0.95
    let peak_mw = params.peak_mw();
    let p_pcc_mw: Vec<f64> = (0..24).map(|h| peak_mw * daily_shape(h as f64)).collect();
    let p_gen_mw = vec![0.0; 24];
    let n_tr = case.n_buses() - 1;
    let mut snapshot_p = Vec::with_capacity(n_tr);
    let mut snapshot_q = Vec::with_capacity(n_tr);
    let mut consumer_energy = Vec::with_capacity(n_tr);
    let mut consumer_bus = Vec::with_capacity(n_tr);
    for bus in case.buses().iter().skip(1) {
        let weight = 0.8 + 0.4 * rng.gen::<f64>();
        snapshot_p.push(weight);
        snapshot_q.push(weight * (0.28 + 0.06 * rng.gen::<f64>()));
        let energies: Vec<f64> = (0..params.households_per_bus)
            .map(|_| 15_000.0 + 10_000.0 * rng.gen::<f64>())
            .collect();
        consumer_bus.push(vec![bus.id; energies.len()]);
        consumer_energy.push(energies);
    }

    let history = FeederHistory {
        p_pcc_mw,
        p_gen_mw,
        snapshot_p_mw: snapshot_p,
        snapshot_q_mvar: snapshot_q,
        consumer_energy_kwh: consumer_energy,
        consumer_bus,
    };

    SyntheticFeeder {
        case,
        household_buses,
        history,
        trunk_branch: 0,
    }
}

/// Re-rate every branch from a base-load sweep: the trunk branch is set
/// so its peak base-load flow sits at `trunk_ratio_percent` of the new
/// rating; every other branch gets head-room at `lateral_ratio_percent`.
pub fn calibrate_ratings(
    case: &NetworkCase,
    pd_mw: &Mat,
    qd_mw: &Mat,
    trunk_branch: usize,
    trunk_ratio_percent: f64,
    lateral_ratio_percent: f64,
) -> NetworkCase {
    let adm = build_admittances(case).expect("validated case");
    let solver = PowerFlowSolver::new(case, &adm);
    let n_l = adm.n_lines();
    let mut peak_mva = vec![0.0f64; case.n_branches()];
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    for t in 0..pd_mw.ncols() {
        let p = pd_mw.col(t);
        let q = qd_mw.col(t);
        let opts = PfOptions {
            warm_start: warm.clone(),
            ..PfOptions::default()
        };
        let sol = solver.solve(&p, &q, &opts).expect("base-load power flow");
        assert!(sol.converged, "base-load sweep must converge at period {t}");
        warm = Some((sol.v_mag.clone(), sol.v_ang.clone()));
        for k in 0..n_l {
            let mva = sol.s_line[k].norm().max(sol.s_line[n_l + k].norm()) * case.base_mva();
            let b = adm.branch_idx[k];
            peak_mva[b] = peak_mva[b].max(mva);
        }
    }

    let mut branches = case.branches().to_vec();
    for (b, br) in branches.iter_mut().enumerate() {
        let target = if b == trunk_branch {
            trunk_ratio_percent
        } else {
            lateral_ratio_percent
        };
        br.s_max_mva = peak_mva[b] / (target / 100.0);
    }
    NetworkCase::new(
        case.name().to_string(),
        case.base_mva(),
        case.buses().to_vec(),
        branches,
        case.generators().to_vec(),
    )
    .expect("re-rated case")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::disaggregate_baseload;

    #[test]
    fn feeder_is_radial_and_deterministic() {
        let params = SynthParams::default();
        let a = build_feeder(&params, 11);
        let b = build_feeder(&params, 11);
        assert_eq!(a.case.n_branches(), a.case.n_buses() - 1);
        assert_eq!(a.household_buses, b.household_buses);
        assert_eq!(a.history.snapshot_p_mw, b.history.snapshot_p_mw);
        assert_eq!(
            a.n_households(),
            (a.case.n_buses() - 1) * params.households_per_bus
        );
    }

    #[test]
    fn daily_shape_has_two_peaks() {
        // evening peak at hour 6 (18:00) dominates, morning peak around 20
        let evening = daily_shape(6.0);
        let morning = daily_shape(20.0);
        let night = daily_shape(13.0);
        assert!(evening > morning);
        assert!(morning > night);
        assert!((0.9..=1.01).contains(&evening));
    }

    #[test]
    fn calibrated_trunk_hits_target_ratio() {
        let params = SynthParams::default();
        let feeder = build_feeder(&params, 3);
        let (pd, qd) =
            disaggregate_baseload(&feeder.history, &feeder.case, 96, 0.25).unwrap();
        let case = calibrate_ratings(&feeder.case, &pd, &qd, feeder.trunk_branch, 89.0, 50.0);

        // re-run the sweep; the trunk's peak ratio must come out at 89%
        let adm = build_admittances(&case).unwrap();
        let solver = PowerFlowSolver::new(&case, &adm);
        let n_l = adm.n_lines();
        let mut worst_trunk: f64 = 0.0;
        let mut worst_lateral: f64 = 0.0;
        for t in 0..96 {
            let sol = solver
                .solve(&pd.col(t), &qd.col(t), &PfOptions::default())
                .unwrap();
            assert!(sol.converged);
            let ratios = crate::pf::load_ratio(&sol, &adm);
            for k in 0..2 * n_l {
                let b = adm.branch_idx[k % n_l];
                let r = ratios[k].unwrap();
                if b == feeder.trunk_branch {
                    worst_trunk = worst_trunk.max(r);
                } else {
                    worst_lateral = worst_lateral.max(r);
                }
            }
        }
        assert!((worst_trunk - 89.0).abs() < 0.5, "trunk peak {worst_trunk}%");
        assert!(worst_lateral < 50.5, "lateral peak {worst_lateral}%");
    }
}
