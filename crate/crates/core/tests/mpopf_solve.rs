//! End-to-end solves of small multiperiod OPF instances.

mod common;

use common::*;
use evopf_core::fleet::{FleetSpec, StorageDevice};
use evopf_core::grid::{build_admittances, Branch, Bus, Generator, NetworkCase};
use evopf_core::ipm::{IpmOptions, IpmStatus};
use evopf_core::mat::Mat;
use evopf_core::pf::{PfOptions, PowerFlowSolver};
use evopf_core::problem::{DemandSeries, MpopfProblem, NetworkLimits};

fn two_bus_case() -> NetworkCase {
    NetworkCase::new(
        "two-bus",
        1.0,
        vec![Bus::slack(1), Bus::pq(2)],
        vec![Branch::line(1, 2, 0.02, 0.1)],
        vec![Generator {
            bus: 1,
            p_min_mw: 0.0,
            p_max_mw: 10.0,
            q_min_mvar: -10.0,
            q_max_mvar: 10.0,
            cost_coeff: 1.0,
        }],
    )
    .unwrap()
}

#[test]
fn single_period_opf_matches_power_flow() {
    // one generator, fixed load, slack voltage pinned by its bounds at 1.0:
    // the equalities fully determine the state, so the optimum must equal
    // the power-flow solution
    let mut case = two_bus_case();
    {
        // pin slack voltage magnitude via the bus voltage band
        let buses = vec![
            {
                let mut b = Bus::slack(1);
                b.v_min = 1.0;
                b.v_max = 1.0;
                b
            },
            Bus::pq(2),
        ];
        case = NetworkCase::new(
            "two-bus-pinned",
            1.0,
            buses,
            case.branches().to_vec(),
            case.generators().to_vec(),
        )
        .unwrap();
    }
    let fleet = FleetSpec::idle(0, 1, 1);
    let mut pd = Mat::zeros(2, 1);
    pd.set(1, 0, 0.5);
    let mut qd = Mat::zeros(2, 1);
    qd.set(1, 0, 0.1);
    let demand = DemandSeries {
        pd_mw: pd,
        qd_mw: qd,
        price_nok_mwh: vec![300.0],
        dt_h: 0.25,
    };
    // v bounds pinned on the slack collapse to a fixed variable, which the
    // reducer eliminates; bounds elsewhere stay free
    let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::On).unwrap();
    let sol = prob.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol.status, IpmStatus::Optimal, "log: {:?}", sol.log.last());

    let adm = build_admittances(&case).unwrap();
    let pf = PowerFlowSolver::new(&case, &adm)
        .solve(&[0.0, 0.5], &[0.0, 0.1], &PfOptions::default())
        .unwrap();
    assert!(pf.converged);
    let l = prob.layout;
    assert!(
        (sol.x[l.vm(0, 1)] - pf.v_mag[1]).abs() < 1e-6,
        "V2: opf {} vs pf {}",
        sol.x[l.vm(0, 1)],
        pf.v_mag[1]
    );
    assert!((sol.x[l.theta(0, 1)] - pf.v_ang[1]).abs() < 1e-6);
    // generator covers load plus loss
    assert!(sol.x[l.pg(0, 0)] > 0.5);
}

fn valley_instance(prices: [f64; 2], line_limit_mva: f64) -> (NetworkCase, FleetSpec, DemandSeries)
{
    let mut br = Branch::line(1, 2, 0.01, 0.05);
    br.s_max_mva = line_limit_mva;
    let case = NetworkCase::new(
        "valley",
        1.0,
        vec![Bus::slack(1), Bus::pq(2)],
        vec![br],
        vec![Generator {
            bus: 1,
            p_min_mw: 0.0,
            p_max_mw: 10.0,
            q_min_mvar: -10.0,
            q_max_mvar: 10.0,
            cost_coeff: 1.0,
        }],
    )
    .unwrap();
    // one EV, plugged both periods, needs 5 kWh (0.02 MW for one quarter
    // hour); charger large enough to do it all in one period
    let mut fleet = FleetSpec::idle(1, 1, 2);
    let mut dev = StorageDevice::charger(2, 0.010, 2.2, 1.0);
    dev.soc_opt = 0.8;
    fleet.devices.push(dev);
    for t in 0..2 {
        fleet.avbp.set(0, t, 1.0);
        fleet.conch.set(0, t, 1.0);
    }
    fleet.soci.set(0, 0, 0.5);
    fleet.socmi.set(0, 1, 1.0);
    let demand = DemandSeries {
        pd_mw: Mat::zeros(2, 2),
        qd_mw: Mat::zeros(2, 2),
        price_nok_mwh: prices.to_vec(),
        dt_h: 0.25,
    };
    (case, fleet, demand)
}

#[test]
fn two_period_ev_charges_in_the_cheap_period() {
    let (case, fleet, demand) = valley_instance([2000.0, 200.0], 0.0);
    let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::Off).unwrap();
    let sol = prob.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol.status, IpmStatus::Optimal, "log: {:?}", sol.log.last());
    let l = prob.layout;
    let p0 = sol.x[l.pch(0, 0)];
    let p1 = sol.x[l.pch(1, 0)];
    // all charging shifted into the cheap second period
    assert!(p0 < 1e-4, "period 0 charge {p0}");
    assert!((p1 - 0.02).abs() < 1e-4, "period 1 charge {p1}");
    // departure SOC reached
    assert!((sol.x[l.soc(1, 0)] - 1.0).abs() < 1e-6);
}

#[test]
fn optimum_cross_checks_against_power_flow() {
    let (case, fleet, demand) = valley_instance([2000.0, 200.0], 0.0);
    let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::Off).unwrap();
    let sol = prob.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol.status, IpmStatus::Optimal);
    let l = prob.layout;

    let adm = build_admittances(&case).unwrap();
    let solver = PowerFlowSolver::new(&case, &adm);
    for t in 0..2 {
        // fix the EV charge from the optimum as extra load, re-run the
        // power flow with the slack held at the optimal voltage
        let p_load = vec![0.0, sol.x[l.pch(t, 0)]];
        let q_load = vec![0.0, 0.0];
        let opts = PfOptions {
            v_setpoint: Some(vec![sol.x[l.vm(t, 0)], 1.0]),
            ..PfOptions::default()
        };
        let pf = solver.solve(&p_load, &q_load, &opts).unwrap();
        assert!(pf.converged);
        assert!(
            (pf.v_mag[1] - sol.x[l.vm(t, 1)]).abs() < 1e-6,
            "period {t}: pf {} vs opf {}",
            pf.v_mag[1],
            sol.x[l.vm(t, 1)]
        );
        assert!((pf.v_ang[1] - sol.x[l.theta(t, 1)]).abs() < 1e-6);
    }
}

#[test]
fn relaxing_network_limits_never_costs_more() {
    // load the line near its rating so the limit binds
    let (case, fleet, mut demand) = valley_instance([2000.0, 200.0], 1.2);
    demand.pd_mw.set(1, 0, 0.9);
    demand.pd_mw.set(1, 1, 0.9);
    let with = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::On).unwrap();
    let without = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::Off).unwrap();
    let sol_with = with.solve(&IpmOptions::default()).unwrap();
    let sol_without = without.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol_with.status, IpmStatus::Optimal);
    assert_eq!(sol_without.status, IpmStatus::Optimal);
    assert!(
        sol_without.objective_nok <= sol_with.objective_nok + 1e-6,
        "relaxation bound: {} vs {}",
        sol_without.objective_nok,
        sol_with.objective_nok
    );
}

#[test]
fn five_bus_multiperiod_solves_to_optimality() {
    let case = five_bus_case();
    let fleet = three_ev_fleet(4);
    let demand = five_bus_demand(4);
    let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::On).unwrap();
    let sol = prob.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol.status, IpmStatus::Optimal, "log tail: {:?}", sol.log.last());

    // storage dynamics hold at the optimum
    let (resid, _) = prob.eval_equalities(&sol.x);
    let c = prob.counts();
    let st0 = c.balance + c.linear;
    for r in st0..st0 + c.storage {
        assert!(resid[r].abs() < 1e-8, "storage row {r}: {}", resid[r]);
    }
    // balance holds
    for r in 0..c.balance {
        assert!(resid[r].abs() < 1e-6, "balance row {r}: {}", resid[r]);
    }

    // every EV reaches its departure SOC (0.9 in this fixture)
    let l = prob.layout;
    let windows = [(0usize, 3usize), (1, 3), (1, 2)];
    for (i, &(_, d)) in windows.iter().enumerate() {
        assert!(
            sol.x[l.soc(d, i)] >= 0.9 - 1e-6,
            "device {i} departure soc {}",
            sol.x[l.soc(d, i)]
        );
    }
    // the frozen post-departure SOC of device 2 carries the final value
    assert!((sol.x[l.soc(3, 2)] - sol.x[l.soc(2, 2)]).abs() < 1e-12);

    // re-solving yields the identical iteration log (determinism)
    let sol2 = prob.solve(&IpmOptions::default()).unwrap();
    assert_eq!(sol.log.len(), sol2.log.len());
    for (a, b) in sol.log.iter().zip(&sol2.log) {
        assert_eq!(a.primal_inf, b.primal_inf);
        assert_eq!(a.objective, b.objective);
    }
}

#[test]
fn unreachable_departure_soc_is_reported_not_relaxed() {
    // 18 kWh of demand against a 2.3 kW charger and a one-hour horizon
    let case = five_bus_case();
    let fleet = infeasible_fleet(4);
    let demand = five_bus_demand(4);
    let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::On).unwrap();
    let sol = prob.solve(&IpmOptions::default()).unwrap();
    assert_ne!(sol.status, IpmStatus::Optimal);
    // the equality violation is genuine, not a tolerance artifact
    let (resid, _) = prob.eval_equalities(&sol.x);
    let worst = resid.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    assert!(worst > 1e-3, "worst residual {worst}");
}
