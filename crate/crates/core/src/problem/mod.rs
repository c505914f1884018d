//! Assembly of the multiperiod OPF as a sparse NLP.
//!
//! Variables are stacked period-major; within one period the order is
//! `[theta (n_b), v (n_b), p_g (n_g), q_g (n_g), soc (n_y), p_ch (n_y),
//! p_dch (n_y), q_s (n_y)]`, all in per-unit on the case MVA base (SOC is
//! a fraction of device capacity). Equality constraints follow the same
//! partition everywhere: nonlinear power balance first, then the linear
//! rows (slack angle and variable pins), then the storage coupling rows.
//! Line-flow limits are the only general inequalities; box constraints are
//! kept as bounds and collapsed bounds are eliminated before the solve.

mod eval;
mod reduce;

pub use reduce::ReducedProblem;

use crate::fleet::{pin_variables, validate_fleet, FleetSpec, PinTarget};
use crate::grid::{build_admittances, Admittances, NetworkCase};
use crate::mat::Mat;
use serde::Serialize;
use thiserror::Error;

/// PD/QD load matrices (MW / MVAr, n_b x T) plus the per-period price
/// vector the objective prices generation with.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSeries {
    pub pd_mw: Mat,
    pub qd_mw: Mat,
    pub price_nok_mwh: Vec<f64>,
    pub dt_h: f64,
}

impl DemandSeries {
    pub fn horizon(&self) -> usize {
        self.pd_mw.ncols()
    }
}

/// Offsets into the stacked variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VariableLayout {
    pub n_b: usize,
    pub n_g: usize,
    pub n_y: usize,
    pub t_count: usize,
}

impl VariableLayout {
    pub fn per_period(&self) -> usize {
        2 * self.n_b + 2 * self.n_g + 4 * self.n_y
    }

    pub fn total(&self) -> usize {
        self.t_count * self.per_period()
    }

    #[inline]
    pub fn theta(&self, t: usize, b: usize) -> usize {
        t * self.per_period() + b
    }

    #[inline]
    pub fn vm(&self, t: usize, b: usize) -> usize {
        t * self.per_period() + self.n_b + b
    }

    #[inline]
    pub fn pg(&self, t: usize, g: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + g
    }

    #[inline]
    pub fn qg(&self, t: usize, g: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + self.n_g + g
    }

    #[inline]
    pub fn soc(&self, t: usize, i: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + 2 * self.n_g + i
    }

    #[inline]
    pub fn pch(&self, t: usize, i: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + 2 * self.n_g + self.n_y + i
    }

    #[inline]
    pub fn pdch(&self, t: usize, i: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + 2 * self.n_g + 2 * self.n_y + i
    }

    #[inline]
    pub fn qs(&self, t: usize, i: usize) -> usize {
        t * self.per_period() + 2 * self.n_b + 2 * self.n_g + 3 * self.n_y + i
    }
}

/// Equality/inequality partition sizes of the assembled problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConstraintCounts {
    /// Nonlinear balance rows: T * 2 n_b.
    pub balance: usize,
    /// Linear rows: slack angle per period plus variable pins.
    pub linear: usize,
    /// Storage coupling rows: T * n_y.
    pub storage: usize,
    /// Line-flow inequality rows (0 when limits are off).
    pub line: usize,
}

impl ConstraintCounts {
    pub fn equalities(&self) -> usize {
        self.balance + self.linear + self.storage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkLimits {
    /// Line-flow rows enforced, case voltage bands kept.
    On,
    /// Line-flow rows dropped and voltage bands widened; the balance
    /// equations stay, so losses are still priced.
    Off,
}

/// Voltage band used when network limits are off.
const RELAXED_V_BOUNDS: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("fleet fails validation with {0} violation(s); first: {1:?}")]
    InvalidFleet(usize, crate::fleet::FleetViolation),
    #[error("demand matrix is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    DemandShape { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
    #[error("price vector has length {got}, expected {expected}")]
    PriceLength { expected: usize, got: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("horizon must be at least one period")]
    EmptyHorizon,
    #[error("pin {target:?} value {value} lies outside its box [{lo}, {hi}]")]
    InfeasiblePin { target: PinTarget, value: f64, lo: f64, hi: f64 },
    #[error("variable {var} has empty box [{lo}, {hi}]")]
    EmptyBox { var: usize, lo: f64, hi: f64 },
}

/// One linear equality row `x[var] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LinearRow {
    pub var: usize,
    pub value: f64,
    pub period: usize,
}

/// Result of an interior-point solve mapped back to the full layout.
#[derive(Debug, Clone)]
pub struct MpopfSolution {
    /// Full stacked variable vector (fixed and frozen slots resolved).
    pub x: Vec<f64>,
    pub objective_nok: f64,
    pub status: crate::ipm::IpmStatus,
    pub log: Vec<crate::ipm::IterRecord>,
}

/// The assembled multiperiod OPF.
#[derive(Debug, Clone)]
pub struct MpopfProblem {
    pub(crate) case: NetworkCase,
    pub(crate) adm: Admittances,
    pub(crate) fleet: FleetSpec,
    /// Loads in p.u., n_b x T.
    pub(crate) pd_pu: Mat,
    pub(crate) qd_pu: Mat,
    pub(crate) prices: Vec<f64>,
    pub(crate) dt_h: f64,
    pub layout: VariableLayout,
    pub(crate) lb: Vec<f64>,
    pub(crate) ub: Vec<f64>,
    pub(crate) linear_rows: Vec<LinearRow>,
    /// Rated line terminals carrying flow rows: (line index, is_from_side).
    pub(crate) rated: Vec<(usize, bool)>,
    pub(crate) limits: NetworkLimits,
    /// Internal bus index per device / generator.
    pub(crate) dev_bus: Vec<usize>,
    pub(crate) gen_bus: Vec<usize>,
    /// SOC-units coefficient per device for charge / discharge rates.
    pub(crate) ch_coeff: Vec<f64>,
    pub(crate) dch_coeff: Vec<f64>,
}

impl MpopfProblem {
    pub fn assemble(
        case: &NetworkCase,
        fleet: &FleetSpec,
        demand: &DemandSeries,
        limits: NetworkLimits,
    ) -> Result<Self, AssembleError> {
        let t_count = demand.horizon();
        if t_count == 0 {
            return Err(AssembleError::EmptyHorizon);
        }
        if demand.dt_h <= 0.0 {
            return Err(AssembleError::NonPositiveDt(demand.dt_h));
        }
        let n_b = case.n_buses();
        let n_g = case.n_generators();
        let n_y = fleet.n_devices();
        for m in [&demand.pd_mw, &demand.qd_mw] {
            if m.nrows() != n_b || m.ncols() != t_count {
                return Err(AssembleError::DemandShape {
                    rows: n_b,
                    cols: t_count,
                    got_rows: m.nrows(),
                    got_cols: m.ncols(),
                });
            }
        }
        if demand.price_nok_mwh.len() != t_count {
            return Err(AssembleError::PriceLength {
                expected: t_count,
                got: demand.price_nok_mwh.len(),
            });
        }
        let violations = validate_fleet(fleet, t_count, case);
        if let Some(first) = violations.first() {
            return Err(AssembleError::InvalidFleet(violations.len(), first.clone()));
        }

        let adm = build_admittances(case).expect("validated case");
        let base = case.base_mva();
        let layout = VariableLayout { n_b, n_g, n_y, t_count };

        let mut pd_pu = Mat::zeros(n_b, t_count);
        let mut qd_pu = Mat::zeros(n_b, t_count);
        for b in 0..n_b {
            for t in 0..t_count {
                pd_pu.set(b, t, demand.pd_mw.get(b, t) / base);
                qd_pu.set(b, t, demand.qd_mw.get(b, t) / base);
            }
        }

        // raw box bounds, before pins
        let mut lb = vec![f64::NEG_INFINITY; layout.total()];
        let mut ub = vec![f64::INFINITY; layout.total()];
        let slack = case.slack_index();
        let (v_lo_relaxed, v_hi_relaxed) = RELAXED_V_BOUNDS;
        for t in 0..t_count {
            for (b, bus) in case.buses().iter().enumerate() {
                lb[layout.theta(t, b)] = bus.theta_min;
                ub[layout.theta(t, b)] = bus.theta_max;
                match limits {
                    // voltage bands pinned by the case data (regulated
                    // buses) stay pinned in either mode
                    NetworkLimits::Off if bus.v_min < bus.v_max => {
                        lb[layout.vm(t, b)] = v_lo_relaxed.min(bus.v_min);
                        ub[layout.vm(t, b)] = v_hi_relaxed.max(bus.v_max);
                    }
                    _ => {
                        lb[layout.vm(t, b)] = bus.v_min;
                        ub[layout.vm(t, b)] = bus.v_max;
                    }
                }
            }
            // slack angle pinned (also emitted as a linear row below)
            lb[layout.theta(t, slack)] = 0.0;
            ub[layout.theta(t, slack)] = 0.0;
            for (g, gen) in case.generators().iter().enumerate() {
                lb[layout.pg(t, g)] = gen.p_min_mw / base;
                ub[layout.pg(t, g)] = gen.p_max_mw / base;
                lb[layout.qg(t, g)] = gen.q_min_mvar / base;
                ub[layout.qg(t, g)] = gen.q_max_mvar / base;
            }
            for (i, dev) in fleet.devices.iter().enumerate() {
                let present = fleet.present(i, t);
                let soc_lo = if present {
                    fleet.socmi.get(i, t).max(dev.soc_min)
                } else {
                    0.0
                };
                lb[layout.soc(t, i)] = soc_lo;
                ub[layout.soc(t, i)] = dev.soc_max;
                lb[layout.pch(t, i)] = dev.p_ch_min_mw / base;
                ub[layout.pch(t, i)] = dev.p_ch_max_mw / base;
                lb[layout.pdch(t, i)] = dev.p_dch_min_mw / base;
                ub[layout.pdch(t, i)] = dev.p_dch_max_mw / base;
                lb[layout.qs(t, i)] = dev.q_s_min_mvar / base;
                ub[layout.qs(t, i)] = dev.q_s_max_mvar / base;
            }
        }

        // pins: collapse bounds and emit linear rows
        let pins = pin_variables(fleet, t_count);
        let mut linear_rows = Vec::with_capacity(t_count + pins.len());
        for t in 0..t_count {
            linear_rows.push(LinearRow {
                var: layout.theta(t, slack),
                value: 0.0,
                period: t,
            });
        }
        let mut sorted_pins = pins;
        sorted_pins.sort_by_key(|p| pin_sort_key(&p.target));
        for pin in &sorted_pins {
            let (var, t) = match pin.target {
                PinTarget::ChargeRate { device, t } => (layout.pch(t, device), t),
                PinTarget::DischargeRate { device, t } => (layout.pdch(t, device), t),
                PinTarget::ReactiveRate { device, t } => (layout.qs(t, device), t),
                PinTarget::GenActive { gen, t } => (layout.pg(t, gen), t),
                PinTarget::GenReactive { gen, t } => (layout.qg(t, gen), t),
            };
            let value_pu = pin.value / base;
            if value_pu < lb[var] - 1e-12 || value_pu > ub[var] + 1e-12 {
                return Err(AssembleError::InfeasiblePin {
                    target: pin.target,
                    value: pin.value,
                    lo: lb[var] * base,
                    hi: ub[var] * base,
                });
            }
            lb[var] = value_pu;
            ub[var] = value_pu;
            linear_rows.push(LinearRow {
                var,
                value: value_pu,
                period: t,
            });
        }
        linear_rows.sort_by_key(|r| (r.period, r.var));

        for v in 0..layout.total() {
            if lb[v] > ub[v] {
                return Err(AssembleError::EmptyBox {
                    var: v,
                    lo: lb[v],
                    hi: ub[v],
                });
            }
        }

        let rated: Vec<(usize, bool)> = match limits {
            NetworkLimits::On => {
                let mut r = Vec::new();
                for (i, s) in adm.s_max_pu.iter().enumerate() {
                    if s.is_some() {
                        r.push((i, true));
                    }
                }
                for (i, s) in adm.s_max_pu.iter().enumerate() {
                    if s.is_some() {
                        r.push((i, false));
                    }
                }
                r
            }
            NetworkLimits::Off => Vec::new(),
        };

        let dev_bus: Vec<usize> = fleet
            .devices
            .iter()
            .map(|d| case.bus_index(d.bus).expect("validated fleet"))
            .collect();
        let gen_bus: Vec<usize> = (0..n_g).map(|g| case.gen_bus(g)).collect();
        let ch_coeff: Vec<f64> = fleet
            .devices
            .iter()
            .map(|d| d.eff_ch * demand.dt_h * base / d.e_max_mwh)
            .collect();
        let dch_coeff: Vec<f64> = fleet
            .devices
            .iter()
            .map(|d| demand.dt_h * base / (d.eff_dch * d.e_max_mwh))
            .collect();

        Ok(MpopfProblem {
            case: case.clone(),
            adm,
            fleet: fleet.clone(),
            pd_pu,
            qd_pu,
            prices: demand.price_nok_mwh.clone(),
            dt_h: demand.dt_h,
            layout,
            lb,
            ub,
            linear_rows,
            rated,
            limits,
            dev_bus,
            gen_bus,
            ch_coeff,
            dch_coeff,
        })
    }

    pub fn counts(&self) -> ConstraintCounts {
        let t = self.layout.t_count;
        ConstraintCounts {
            balance: t * 2 * self.layout.n_b,
            linear: self.linear_rows.len(),
            storage: t * self.layout.n_y,
            line: t * self.rated.len(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.layout.total()
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lb, &self.ub)
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn fleet(&self) -> &FleetSpec {
        &self.fleet
    }

    pub fn admittances(&self) -> &Admittances {
        &self.adm
    }

    pub fn dt_h(&self) -> f64 {
        self.dt_h
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn network_limits(&self) -> NetworkLimits {
        self.limits
    }

    /// Start point: flat voltages, midpoint generator outputs, warm-start
    /// SOC where the record provides one, charge rates just above their
    /// lower bounds. The interior-point solver pushes the result strictly
    /// inside the box.
    pub fn initial_x(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.total()];
        for t in 0..l.t_count {
            for b in 0..l.n_b {
                x[l.theta(t, b)] = 0.0;
                x[l.vm(t, b)] = 1.0f64.clamp(self.lb[l.vm(t, b)], self.ub[l.vm(t, b)]);
            }
            for g in 0..l.n_g {
                for idx in [l.pg(t, g), l.qg(t, g)] {
                    x[idx] = 0.5 * (self.lb[idx] + self.ub[idx]);
                }
            }
            for (i, dev) in self.fleet.devices.iter().enumerate() {
                let soc_idx = l.soc(t, i);
                x[soc_idx] = dev.soc_opt.clamp(self.lb[soc_idx], self.ub[soc_idx]);
                for idx in [l.pch(t, i), l.pdch(t, i), l.qs(t, i)] {
                    let width = self.ub[idx] - self.lb[idx];
                    x[idx] = self.lb[idx] + 1e-3 * width;
                }
            }
        }
        x
    }

    /// Reduce, scale and solve via the interior-point method. The
    /// objective is scaled by the reciprocal of the largest per-period
    /// price weight internally; reported values are unscaled NOK.
    pub fn solve(&self, opts: &crate::ipm::IpmOptions) -> Result<MpopfSolution, crate::ipm::IpmError> {
        let red = ReducedProblem::new(self);
        let mut o = opts.clone();
        if o.obj_scale == 1.0 {
            let w_max = self
                .prices
                .iter()
                .fold(0.0f64, |m, p| m.max(p.abs()))
                * self.dt_h
                * self.case.base_mva();
            o.obj_scale = 1.0 / w_max.max(1.0);
        }
        let res = crate::ipm::solve(&red, &o)?;
        Ok(MpopfSolution {
            x: red.full_point(&res.x),
            objective_nok: res.objective,
            status: res.status,
            log: res.log,
        })
    }

    /// Serializable snapshot of sizes, bounds and sparsity for
    /// cross-implementation diffing.
    pub fn debug_dump(&self) -> serde_json::Value {
        let x0 = self.initial_x();
        let (_, jeq) = self.eval_equalities(&x0);
        let (_, jineq) = self.eval_inequalities(&x0);
        serde_json::json!({
            "layout": self.layout,
            "counts": self.counts(),
            "dt_h": self.dt_h,
            "base_mva": self.case.base_mva(),
            "prices": self.prices,
            "bounds": { "lower": self.lb, "upper": self.ub },
            "eq_jacobian": { "indptr": jeq.indptr(), "indices": jeq.indices() },
            "ineq_jacobian": { "indptr": jineq.indptr(), "indices": jineq.indices() },
        })
    }
}

fn pin_sort_key(t: &PinTarget) -> (usize, usize, usize) {
    match *t {
        PinTarget::ChargeRate { device, t } => (t, 0, device),
        PinTarget::DischargeRate { device, t } => (t, 1, device),
        PinTarget::ReactiveRate { device, t } => (t, 2, device),
        PinTarget::GenActive { gen, t } => (t, 3, gen),
        PinTarget::GenReactive { gen, t } => (t, 4, gen),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::StorageDevice;
    use crate::grid::{Branch, Bus, Generator};

    fn gen(bus: u32, p_max: f64) -> Generator {
        Generator {
            bus,
            p_min_mw: 0.0,
            p_max_mw: p_max,
            q_min_mvar: -p_max,
            q_max_mvar: p_max,
            cost_coeff: 1.0,
        }
    }

    fn two_bus_case() -> NetworkCase {
        NetworkCase::new(
            "t",
            1.0,
            vec![Bus::slack(1), Bus::pq(2)],
            vec![Branch::line(1, 2, 0.01, 0.1)],
            vec![gen(1, 10.0)],
        )
        .unwrap()
    }

    fn demand(n_b: usize, t: usize, price: f64) -> DemandSeries {
        DemandSeries {
            pd_mw: Mat::zeros(n_b, t),
            qd_mw: Mat::zeros(n_b, t),
            price_nok_mwh: vec![price; t],
            dt_h: 0.25,
        }
    }

    fn one_ev_fleet(t: usize) -> FleetSpec {
        let mut f = FleetSpec::idle(1, 1, t);
        f.devices.push(StorageDevice::charger(2, 0.03, 0.0037, 1.0));
        for k in 0..t {
            f.avbp.set(0, k, 1.0);
            f.conch.set(0, k, 1.0);
        }
        f.soci.set(0, 0, 0.4);
        f
    }

    #[test]
    fn layout_size_formula() {
        // 2 buses, 1 generator, 1 EV, T = 2: per period 2*2 + 2*1 + 4*1 = 10
        let l = VariableLayout { n_b: 2, n_g: 1, n_y: 1, t_count: 2 };
        assert_eq!(l.per_period(), 10);
        assert_eq!(l.total(), 20);
    }

    #[test]
    fn paper_scale_bookkeeping() {
        // sizing only, no assembly: 974 buses, 2 generators, 1113 EVs, T=96
        let l = VariableLayout { n_b: 974, n_g: 2, n_y: 1113, t_count: 96 };
        assert_eq!(l.per_period(), 2 * 974 + 2 * 2 + 4 * 1113);
        assert_eq!(l.total(), 96 * l.per_period());
        // partition sizes
        assert_eq!(96 * 2 * 974, 187_008); // balance rows
        assert_eq!(96 * 1113, 106_848); // storage rows
    }

    #[test]
    fn no_storage_means_no_coupling_rows() {
        let case = two_bus_case();
        let fleet = FleetSpec::idle(0, 1, 3);
        let prob =
            MpopfProblem::assemble(&case, &fleet, &demand(2, 3, 100.0), NetworkLimits::Off)
                .unwrap();
        assert_eq!(prob.counts().storage, 0);
    }

    #[test]
    fn layout_offsets_disjoint_and_contiguous() {
        let l = VariableLayout { n_b: 3, n_g: 2, n_y: 2, t_count: 2 };
        let mut seen = vec![false; l.total()];
        for t in 0..2 {
            for b in 0..3 {
                seen[l.theta(t, b)] = true;
                seen[l.vm(t, b)] = true;
            }
            for g in 0..2 {
                seen[l.pg(t, g)] = true;
                seen[l.qg(t, g)] = true;
            }
            for i in 0..2 {
                seen[l.soc(t, i)] = true;
                seen[l.pch(t, i)] = true;
                seen[l.pdch(t, i)] = true;
                seen[l.qs(t, i)] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn assemble_counts_and_bounds() {
        let case = two_bus_case();
        let fleet = one_ev_fleet(2);
        let prob =
            MpopfProblem::assemble(&case, &fleet, &demand(2, 2, 100.0), NetworkLimits::On)
                .unwrap();
        assert_eq!(prob.num_vars(), 20);
        let c = prob.counts();
        assert_eq!(c.balance, 2 * 2 * 2);
        assert_eq!(c.storage, 2);
        // pins: p_dch and q_s collapse for both periods (one-way charger)
        // linear rows: 2 slack + 4 pins
        assert_eq!(c.linear, 2 + 4);
        // slack theta bounds collapsed
        let l = prob.layout;
        assert_eq!(prob.lb[l.theta(0, 0)], 0.0);
        assert_eq!(prob.ub[l.theta(0, 0)], 0.0);
    }

    #[test]
    fn infeasible_pin_rejected() {
        let case = two_bus_case();
        let mut fleet = one_ev_fleet(2);
        // unavailable at t=0 yet minimum charge rate positive: pin 0 outside box
        fleet.avbp.set(0, 0, 0.0);
        fleet.conch.set(0, 0, 0.0);
        fleet.soci.set(0, 0, 0.0);
        fleet.soci.set(0, 1, 0.4);
        fleet.devices[0].p_ch_min_mw = 0.001;
        let err = MpopfProblem::assemble(&case, &fleet, &demand(2, 2, 100.0), NetworkLimits::On)
            .unwrap_err();
        assert!(matches!(err, AssembleError::InfeasiblePin { .. }));
    }

    #[test]
    fn limits_off_widens_voltage_and_drops_line_rows() {
        let case = two_bus_case();
        let fleet = one_ev_fleet(2);
        let prob =
            MpopfProblem::assemble(&case, &fleet, &demand(2, 2, 100.0), NetworkLimits::Off)
                .unwrap();
        assert_eq!(prob.counts().line, 0);
        let l = prob.layout;
        assert_eq!(prob.lb[l.vm(0, 1)], 0.5);
        assert_eq!(prob.ub[l.vm(0, 1)], 1.5);
    }
}
