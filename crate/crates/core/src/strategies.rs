//! The three charge-scheduling strategies and their comparison.
//!
//! * uncoordinated: every EV charges at rated power from arrival until
//!   its demand is met; each period is a plain power-flow simulation and
//!   operational violations are recorded, not prevented;
//! * coordinated without network limits: cost-minimising multiperiod OPF
//!   with the line-flow rows dropped and voltage bands widened;
//! * coordinated with network limits: the full multiperiod OPF.

use crate::fleet::{extract_plug_events, FleetSpec};
use crate::grid::{build_admittances, line_flows, NetworkCase};
use crate::ipm::{IpmOptions, IpmStatus, IterRecord};
use crate::mat::Mat;
use crate::pf::{load_ratio, PfError, PfOptions, PowerFlowSolver};
use crate::problem::{AssembleError, DemandSeries, MpopfProblem, NetworkLimits};
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

/// Over-rating slack tolerated before a load ratio counts as a violation
/// (numerical noise at active constraints).
pub const OVERLOAD_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StrategyKind {
    Uncoordinated,
    CoordinatedNoLimits,
    CoordinatedWithLimits,
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Uncoordinated => "dumb",
            StrategyKind::CoordinatedNoLimits => "mpopf-no-limits",
            StrategyKind::CoordinatedWithLimits => "mpopf-with-limits",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    /// Solved everywhere, no operational violations.
    Clean,
    /// Solved, but operational limits are violated somewhere.
    ViolationsPresent,
    /// The optimisation reported the schedule infeasible.
    Infeasible,
    /// Solver failure (divergence, iteration limit, numerical trouble).
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodRecord {
    pub gen_mw: f64,
    pub load_mw: f64,
    pub ev_charge_mw: f64,
    pub ev_discharge_mw: f64,
    pub loss_mw: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub max_load_ratio: Option<f64>,
    pub price_nok_mwh: f64,
    pub solved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Element {
    /// Branch index in the case tables plus the terminal side.
    BranchOverload { branch: usize, from_side: bool },
    UnderVoltage { bus: usize },
    OverVoltage { bus: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationRecord {
    pub period: usize,
    pub element: Element,
    /// Load ratio in percent for overloads, voltage in p.u. otherwise.
    pub magnitude: f64,
}

#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub strategy: StrategyKind,
    pub status: RunStatus,
    pub periods: Vec<PeriodRecord>,
    pub violations: Vec<ViolationRecord>,
    pub energy_mwh: f64,
    pub loss_mwh: f64,
    pub cost_nok: f64,
    /// Battery-side SOC per device and period.
    pub soc: Mat,
    /// Grid-side charge draw per device and period, MW.
    pub ev_charge_mw: Mat,
    /// EV energy demanded but not delivered by departure (uncoordinated
    /// runs with too-short windows).
    pub unserved_ev_energy_mwh: f64,
    pub dt_h: f64,
    /// Fingerprint of (case, fleet, demand); comparisons require a match.
    pub scenario_id: u64,
    pub solver_log: Option<Vec<IterRecord>>,
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    PowerFlow(#[from] PfError),
    #[error(transparent)]
    Ipm(#[from] crate::ipm::IpmError),
    #[error("reports compare different scenarios ({0:#x} vs {1:#x})")]
    MismatchedScenarios(u64, u64),
    #[error("comparison needs exactly one report per strategy, {0:?} missing")]
    MissingStrategy(StrategyKind),
}

/// FNV-1a fingerprint of the scenario inputs.
pub fn scenario_fingerprint(case: &NetworkCase, fleet: &FleetSpec, demand: &DemandSeries) -> u64 {
    struct Fnv(u64);
    impl Fnv {
        fn write(&mut self, bytes: &[u8]) {
            for &b in bytes {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        fn f64s(&mut self, vs: &[f64]) {
            for v in vs {
                self.write(&v.to_bits().to_le_bytes());
            }
        }
    }
    let mut h = Fnv(0xcbf2_9ce4_8422_2325);
    h.f64s(&[case.base_mva()]);
    for b in case.buses() {
        h.write(&b.id.to_le_bytes());
        h.f64s(&[b.gs_pu, b.bs_pu, b.v_min, b.v_max]);
    }
    for br in case.branches() {
        h.write(&br.from_bus.to_le_bytes());
        h.write(&br.to_bus.to_le_bytes());
        h.f64s(&[br.r_pu, br.x_pu, br.b_pu, br.tap, br.shift_rad, br.s_max_mva]);
        h.write(&[br.in_service as u8]);
    }
    for g in case.generators() {
        h.write(&g.bus.to_le_bytes());
        h.f64s(&[g.p_min_mw, g.p_max_mw, g.q_min_mvar, g.q_max_mvar]);
    }
    for d in &fleet.devices {
        h.write(&d.bus.to_le_bytes());
        h.f64s(&[d.e_max_mwh, d.p_ch_max_mw, d.eff_ch, d.soc_max, d.soc_min]);
    }
    for m in [&fleet.avbp, &fleet.conch, &fleet.condi, &fleet.avbq, &fleet.avg, &fleet.soci, &fleet.socmi] {
        h.f64s(m.data());
    }
    h.f64s(demand.pd_mw.data());
    h.f64s(demand.qd_mw.data());
    h.f64s(&demand.price_nok_mwh);
    h.f64s(&[demand.dt_h]);
    h.0
}

/// Scan one period's state for operational violations.
fn scan_violations(
    case: &NetworkCase,
    v_mag: &[f64],
    ratios: &[Option<f64>],
    adm: &crate::grid::Admittances,
    period: usize,
    out: &mut Vec<ViolationRecord>,
) -> (f64, f64, Option<f64>) {
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    for (b, (&v, bus)) in v_mag.iter().zip(case.buses()).enumerate() {
        v_min = v_min.min(v);
        v_max = v_max.max(v);
        if v < bus.v_min - 1e-9 {
            out.push(ViolationRecord {
                period,
                element: Element::UnderVoltage { bus: b },
                magnitude: v,
            });
        }
        if v > bus.v_max + 1e-9 {
            out.push(ViolationRecord {
                period,
                element: Element::OverVoltage { bus: b },
                magnitude: v,
            });
        }
    }
    let n_l = adm.n_lines();
    let mut max_ratio: Option<f64> = None;
    for (k, ratio) in ratios.iter().enumerate() {
        if let Some(r) = ratio {
            max_ratio = Some(max_ratio.map_or(*r, |m: f64| m.max(*r)));
            if *r > 100.0 * (1.0 + OVERLOAD_TOLERANCE) {
                out.push(ViolationRecord {
                    period,
                    element: Element::BranchOverload {
                        branch: adm.branch_idx[k % n_l],
                        from_side: k < n_l,
                    },
                    magnitude: *r,
                });
            }
        }
    }
    (v_min, v_max, max_ratio)
}

/// Rated-power charging from arrival until the daily demand is met; the
/// final interval is trimmed so the battery lands exactly on full.
/// Returns (grid-side charge schedule MW, SOC trajectory, unserved MWh).
pub fn dumb_charge_schedule(fleet: &FleetSpec, dt_h: f64) -> (Mat, Mat, f64) {
    let t_count = fleet.horizon();
    let n_y = fleet.n_devices();
    let mut charge = Mat::zeros(n_y, t_count);
    let mut soc_traj = Mat::zeros(n_y, t_count);
    let mut unserved = 0.0;

    for ev in extract_plug_events(fleet) {
        let dev = &fleet.devices[ev.device];
        let p_rate = dev.p_ch_max_mw;
        let mut need_mwh = (dev.soc_max - ev.soc_init).max(0.0) * dev.e_max_mwh;
        for t in ev.arrive_t..=ev.depart_t {
            if need_mwh <= 1e-12 || p_rate <= 0.0 {
                break;
            }
            let full_gain = dev.eff_ch * p_rate * dt_h;
            let p = if full_gain <= need_mwh {
                p_rate
            } else {
                // trim the last interval to land exactly on the target
                need_mwh / (dev.eff_ch * dt_h)
            };
            charge.set(ev.device, t, p);
            need_mwh -= dev.eff_ch * p * dt_h;
        }
        unserved += need_mwh.max(0.0);
    }

    // SOC trajectories: frozen at zero before first arrival, then the
    // running balance, frozen across absences
    for i in 0..n_y {
        let dev = &fleet.devices[i];
        let mut soc = 0.0;
        for t in 0..t_count {
            if fleet.is_arrival(i, t) {
                soc = fleet.soci.get(i, t);
            }
            if fleet.present(i, t) {
                soc += dev.eff_ch * charge.get(i, t) * dt_h / dev.e_max_mwh;
            }
            soc_traj.set(i, t, soc.min(dev.soc_max));
        }
    }
    (charge, soc_traj, unserved)
}

#[derive(Debug, Clone, Default)]
pub struct UncoordinatedOptions {
    pub pf: PfOptions,
}

pub fn run_uncoordinated(
    case: &NetworkCase,
    fleet: &FleetSpec,
    demand: &DemandSeries,
    opts: &UncoordinatedOptions,
) -> Result<StrategyReport, StrategyError> {
    let t_count = demand.horizon();
    let adm = build_admittances(case).expect("validated case");
    let solver = PowerFlowSolver::new(case, &adm);
    let (charge, soc, unserved) = dumb_charge_schedule(fleet, demand.dt_h);

    let mut periods = Vec::with_capacity(t_count);
    let mut violations = Vec::new();
    let mut warm: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut energy = 0.0;
    let mut loss_total = 0.0;
    let mut cost = 0.0;
    let mut any_unsolved = false;

    for t in 0..t_count {
        let mut p_load = demand.pd_mw.col(t);
        let q_load = demand.qd_mw.col(t);
        let mut ev_mw = 0.0;
        for i in 0..fleet.n_devices() {
            let p = charge.get(i, t);
            if p > 0.0 {
                let b = case.bus_index(fleet.devices[i].bus).expect("validated fleet");
                p_load[b] += p;
                ev_mw += p;
            }
        }
        let base_load: f64 = demand.pd_mw.col(t).iter().sum();
        let pf_opts = PfOptions {
            warm_start: warm.take(),
            ..opts.pf.clone()
        };
        let sol = solver.solve(&p_load, &q_load, &pf_opts)?;
        if !sol.converged {
            any_unsolved = true;
            periods.push(PeriodRecord {
                gen_mw: f64::NAN,
                load_mw: base_load,
                ev_charge_mw: ev_mw,
                ev_discharge_mw: 0.0,
                loss_mw: f64::NAN,
                v_min_pu: f64::NAN,
                v_max_pu: f64::NAN,
                max_load_ratio: None,
                price_nok_mwh: demand.price_nok_mwh[t],
                solved: false,
            });
            continue;
        }
        warm = Some((sol.v_mag.clone(), sol.v_ang.clone()));

        let gen_mw: f64 = sol.s_bus[case.slack_index()].re * case.base_mva()
            + opts
                .pf
                .gen_p_mw
                .as_ref()
                .map(|g| {
                    (0..case.n_generators())
                        .filter(|&gi| case.gen_bus(gi) != case.slack_index())
                        .map(|gi| g[gi])
                        .sum()
                })
                .unwrap_or(0.0);
        let ratios = load_ratio(&sol, &adm);
        let (v_min, v_max, max_ratio) =
            scan_violations(case, &sol.v_mag, &ratios, &adm, t, &mut violations);
        let loss_mw = gen_mw - base_load - ev_mw;
        energy += gen_mw * demand.dt_h;
        loss_total += loss_mw * demand.dt_h;
        cost += demand.price_nok_mwh[t] * gen_mw * demand.dt_h;
        periods.push(PeriodRecord {
            gen_mw,
            load_mw: base_load,
            ev_charge_mw: ev_mw,
            ev_discharge_mw: 0.0,
            loss_mw,
            v_min_pu: v_min,
            v_max_pu: v_max,
            max_load_ratio: max_ratio,
            price_nok_mwh: demand.price_nok_mwh[t],
            solved: true,
        });
    }

    let status = if any_unsolved {
        RunStatus::Failed
    } else if violations.is_empty() {
        RunStatus::Clean
    } else {
        RunStatus::ViolationsPresent
    };
    Ok(StrategyReport {
        strategy: StrategyKind::Uncoordinated,
        status,
        periods,
        violations,
        energy_mwh: energy,
        loss_mwh: loss_total,
        cost_nok: cost,
        soc,
        ev_charge_mw: charge,
        unserved_ev_energy_mwh: unserved,
        dt_h: demand.dt_h,
        scenario_id: scenario_fingerprint(case, fleet, demand),
        solver_log: None,
    })
}

pub fn run_coordinated(
    case: &NetworkCase,
    fleet: &FleetSpec,
    demand: &DemandSeries,
    limits: NetworkLimits,
    ipm_opts: &IpmOptions,
) -> Result<StrategyReport, StrategyError> {
    let prob = MpopfProblem::assemble(case, fleet, demand, limits)?;
    let sol = prob.solve(ipm_opts)?;
    let strategy = match limits {
        NetworkLimits::On => StrategyKind::CoordinatedWithLimits,
        NetworkLimits::Off => StrategyKind::CoordinatedNoLimits,
    };

    let t_count = demand.horizon();
    let l = prob.layout;
    let base = case.base_mva();
    let adm = prob.admittances();
    let n_y = fleet.n_devices();

    let mut periods = Vec::with_capacity(t_count);
    let mut violations = Vec::new();
    let mut soc = Mat::zeros(n_y, t_count);
    let mut charge = Mat::zeros(n_y, t_count);
    let mut energy = 0.0;
    let mut loss_total = 0.0;
    let mut cost = 0.0;

    for t in 0..t_count {
        let v: Vec<Complex64> = (0..l.n_b)
            .map(|b| Complex64::from_polar(sol.x[l.vm(t, b)], sol.x[l.theta(t, b)]))
            .collect();
        let v_mag: Vec<f64> = (0..l.n_b).map(|b| sol.x[l.vm(t, b)]).collect();
        let flows = line_flows(&v, adm).expect("dims");
        let n_l = adm.n_lines();
        let ratios: Vec<Option<f64>> = (0..2 * n_l)
            .map(|k| adm.s_max_pu[k % n_l].map(|smax| 100.0 * flows[k].norm() / smax))
            .collect();
        let (v_min, v_max, max_ratio) =
            scan_violations(case, &v_mag, &ratios, adm, t, &mut violations);

        let gen_mw: f64 = (0..l.n_g).map(|g| sol.x[l.pg(t, g)]).sum::<f64>() * base;
        let ev_mw: f64 = (0..n_y).map(|i| sol.x[l.pch(t, i)]).sum::<f64>() * base;
        let dch_mw: f64 = (0..n_y).map(|i| sol.x[l.pdch(t, i)]).sum::<f64>() * base;
        let load_mw: f64 = demand.pd_mw.col(t).iter().sum();
        let loss_mw = gen_mw - load_mw - ev_mw + dch_mw;
        for i in 0..n_y {
            soc.set(i, t, sol.x[l.soc(t, i)]);
            charge.set(i, t, sol.x[l.pch(t, i)] * base);
        }
        energy += gen_mw * demand.dt_h;
        loss_total += loss_mw * demand.dt_h;
        cost += demand.price_nok_mwh[t] * gen_mw * demand.dt_h;
        periods.push(PeriodRecord {
            gen_mw,
            load_mw,
            ev_charge_mw: ev_mw,
            ev_discharge_mw: dch_mw,
            loss_mw,
            v_min_pu: v_min,
            v_max_pu: v_max,
            max_load_ratio: max_ratio,
            price_nok_mwh: demand.price_nok_mwh[t],
            solved: true,
        });
    }

    let status = match sol.status {
        IpmStatus::Optimal => {
            if violations.is_empty() {
                RunStatus::Clean
            } else {
                RunStatus::ViolationsPresent
            }
        }
        IpmStatus::Infeasible => RunStatus::Infeasible,
        IpmStatus::MaxIter | IpmStatus::Numerical => RunStatus::Failed,
    };
    Ok(StrategyReport {
        strategy,
        status,
        periods,
        violations,
        energy_mwh: energy,
        loss_mwh: loss_total,
        cost_nok: cost,
        soc,
        ev_charge_mw: charge,
        unserved_ev_energy_mwh: 0.0,
        dt_h: demand.dt_h,
        scenario_id: scenario_fingerprint(case, fleet, demand),
        solver_log: Some(sol.log),
    })
}

/// Run all three strategies concurrently and join in fixed order.
pub fn run_all_strategies(
    case: &NetworkCase,
    fleet: &FleetSpec,
    demand: &DemandSeries,
    ipm_opts: &IpmOptions,
) -> Result<[StrategyReport; 3], StrategyError> {
    std::thread::scope(|scope| {
        let dumb = scope.spawn(|| {
            run_uncoordinated(case, fleet, demand, &UncoordinatedOptions::default())
        });
        let no_limits = scope.spawn(|| {
            run_coordinated(case, fleet, demand, NetworkLimits::Off, ipm_opts)
        });
        let with_limits = scope.spawn(|| {
            run_coordinated(case, fleet, demand, NetworkLimits::On, ipm_opts)
        });
        let d = dumb.join().expect("strategy thread")?;
        let n = no_limits.join().expect("strategy thread")?;
        let w = with_limits.join().expect("strategy thread")?;
        Ok([d, n, w])
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub strategy: StrategyKind,
    pub status: RunStatus,
    pub energy_mwh: f64,
    pub loss_mwh: f64,
    pub cost_nok: f64,
    pub daily_saving_nok: f64,
    pub daily_saving_percent: f64,
    /// Daily saving extrapolated to a year (365x the study day).
    pub yearly_saving_extrapolated_nok: f64,
    pub hosting_capacity_evs: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub scenario_id: u64,
}

/// Build the three-row comparison; savings are measured against the
/// uncoordinated row.
pub fn compare(reports: &[StrategyReport]) -> Result<ComparisonTable, StrategyError> {
    let find = |kind: StrategyKind| {
        reports
            .iter()
            .find(|r| r.strategy == kind)
            .ok_or(StrategyError::MissingStrategy(kind))
    };
    let dumb = find(StrategyKind::Uncoordinated)?;
    let order = [
        StrategyKind::Uncoordinated,
        StrategyKind::CoordinatedNoLimits,
        StrategyKind::CoordinatedWithLimits,
    ];
    let mut rows = Vec::with_capacity(3);
    for kind in order {
        let r = find(kind)?;
        if r.scenario_id != dumb.scenario_id {
            return Err(StrategyError::MismatchedScenarios(
                dumb.scenario_id,
                r.scenario_id,
            ));
        }
        let saving = dumb.cost_nok - r.cost_nok;
        let percent = if dumb.cost_nok != 0.0 {
            100.0 * saving / dumb.cost_nok
        } else {
            0.0
        };
        rows.push(ComparisonRow {
            strategy: kind,
            status: r.status,
            energy_mwh: r.energy_mwh,
            loss_mwh: r.loss_mwh,
            cost_nok: r.cost_nok,
            daily_saving_nok: saving,
            daily_saving_percent: percent,
            yearly_saving_extrapolated_nok: 365.0 * saving,
            hosting_capacity_evs: None,
        });
    }
    Ok(ComparisonTable {
        rows,
        scenario_id: dumb.scenario_id,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HostingRow {
    pub n_evs: usize,
    pub max_load_ratio: Option<f64>,
    pub min_voltage_pu: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HostingReport {
    pub strategy: StrategyKind,
    pub ev_step: usize,
    pub fleet_size: usize,
    pub rows: Vec<HostingRow>,
    /// Largest penetration with every smaller tested size violation-free.
    pub capacity_evs: usize,
}

/// Sweep EV penetration in steps of `ev_step` over prefixes of the full
/// fleet (monotone growth: each tested fleet contains the previous one).
pub fn hosting_capacity(
    case: &NetworkCase,
    full_fleet: &FleetSpec,
    demand: &DemandSeries,
    strategy: StrategyKind,
    ev_step: usize,
    ipm_opts: &IpmOptions,
) -> Result<HostingReport, StrategyError> {
    let n = full_fleet.n_devices();
    let mut sizes: Vec<usize> = (1..)
        .map(|k| k * ev_step)
        .take_while(|&s| s < n)
        .collect();
    sizes.push(n);

    let mut rows = Vec::with_capacity(sizes.len());
    let mut capacity = 0usize;
    let mut unbroken = true;
    for &k in &sizes {
        let sub = full_fleet.head(k);
        let report = match strategy {
            StrategyKind::Uncoordinated => {
                run_uncoordinated(case, &sub, demand, &UncoordinatedOptions::default())?
            }
            StrategyKind::CoordinatedNoLimits => {
                run_coordinated(case, &sub, demand, NetworkLimits::Off, ipm_opts)?
            }
            StrategyKind::CoordinatedWithLimits => {
                run_coordinated(case, &sub, demand, NetworkLimits::On, ipm_opts)?
            }
        };
        let violated = report.status != RunStatus::Clean;
        let max_ratio = report
            .periods
            .iter()
            .filter_map(|p| p.max_load_ratio)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |v| v.max(r))));
        let min_v = report
            .periods
            .iter()
            .filter(|p| p.solved)
            .map(|p| p.v_min_pu)
            .fold(f64::INFINITY, f64::min);
        rows.push(HostingRow {
            n_evs: k,
            max_load_ratio: max_ratio,
            min_voltage_pu: min_v,
            violated,
        });
        if unbroken && !violated {
            capacity = k;
        } else {
            unbroken = false;
        }
    }
    Ok(HostingReport {
        strategy,
        ev_step,
        fleet_size: n,
        rows,
        capacity_evs: capacity,
    })
}
