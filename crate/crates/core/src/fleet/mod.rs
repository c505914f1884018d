//! Storage fleet model: per-device battery parameters plus the
//! time-indexed matrices that govern availability, charge/discharge
//! permission, initial SOC at arrival and minimum SOC at departure.
//!
//! Periods are 0-based throughout the crate; file formats keep the same
//! convention (column t is period t).

pub mod io;

use crate::grid::NetworkCase;
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

/// One storage device (an EV battery behind its charger).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageDevice {
    /// External bus id of the connection point.
    pub bus: u32,
    pub e_max_mwh: f64,
    pub p_ch_max_mw: f64,
    pub p_ch_min_mw: f64,
    pub p_dch_max_mw: f64,
    pub p_dch_min_mw: f64,
    pub q_s_max_mvar: f64,
    pub q_s_min_mvar: f64,
    pub soc_max: f64,
    pub soc_min: f64,
    /// Charge / discharge efficiencies in (0, 1].
    pub eff_ch: f64,
    pub eff_dch: f64,
    /// Optimiser warm-start values.
    pub soc_opt: f64,
    pub pch_opt_mw: f64,
    pub pdch_opt_mw: f64,
    pub qinj_opt_mvar: f64,
    /// Device MVA base (informational; internal math uses the case base).
    pub mbase: f64,
}

impl StorageDevice {
    /// A one-way charger: no grid discharge, no reactive provision.
    pub fn charger(bus: u32, e_max_mwh: f64, p_ch_max_mw: f64, eff_ch: f64) -> Self {
        StorageDevice {
            bus,
            e_max_mwh,
            p_ch_max_mw,
            p_ch_min_mw: 0.0,
            p_dch_max_mw: 0.0,
            p_dch_min_mw: 0.0,
            q_s_max_mvar: 0.0,
            q_s_min_mvar: 0.0,
            soc_max: 1.0,
            soc_min: 0.0,
            eff_ch,
            eff_dch: 1.0,
            soc_opt: 0.5,
            pch_opt_mw: 0.0,
            pdch_opt_mw: 0.0,
            qinj_opt_mvar: 0.0,
            mbase: 1.0,
        }
    }
}

/// Fleet description: devices plus the condition matrices.
///
/// Matrix shapes: `avbp`, `conch`, `condi`, `avbq`, `soci`, `socmi` are
/// n_y x T; `avg` is n_g x T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub devices: Vec<StorageDevice>,
    pub avbp: Mat,
    pub conch: Mat,
    pub condi: Mat,
    pub avbq: Mat,
    pub avg: Mat,
    pub soci: Mat,
    pub socmi: Mat,
}

impl FleetSpec {
    /// Empty fleet over a horizon (generators always available).
    pub fn idle(n_y: usize, n_g: usize, t: usize) -> Self {
        let mut avg = Mat::zeros(n_g, t);
        for g in 0..n_g {
            for k in 0..t {
                avg.set(g, k, 1.0);
            }
        }
        FleetSpec {
            devices: Vec::new(),
            avbp: Mat::zeros(n_y, t),
            conch: Mat::zeros(n_y, t),
            condi: Mat::zeros(n_y, t),
            avbq: Mat::zeros(n_y, t),
            avg,
            soci: Mat::zeros(n_y, t),
            socmi: Mat::zeros(n_y, t),
        }
    }

    pub fn n_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn horizon(&self) -> usize {
        self.avbp.ncols()
    }

    /// Is device `i` plugged in at period `t`?
    pub fn present(&self, i: usize, t: usize) -> bool {
        self.avbp.get(i, t) == 1.0
    }

    /// Is period `t` an arrival slot for device `i`?
    pub fn is_arrival(&self, i: usize, t: usize) -> bool {
        self.present(i, t) && (t == 0 || !self.present(i, t - 1))
    }

    /// Truncate to the first `n` devices (generator availability kept).
    pub fn head(&self, n: usize) -> FleetSpec {
        let n = n.min(self.n_devices());
        let t = self.horizon();
        let take = |m: &Mat| {
            Mat::from_rows((0..n).map(|i| m.row(i).to_vec()).collect()).expect("rectangular")
        };
        FleetSpec {
            devices: self.devices[..n].to_vec(),
            avbp: if n == 0 { Mat::zeros(0, t) } else { take(&self.avbp) },
            conch: if n == 0 { Mat::zeros(0, t) } else { take(&self.conch) },
            condi: if n == 0 { Mat::zeros(0, t) } else { take(&self.condi) },
            avbq: if n == 0 { Mat::zeros(0, t) } else { take(&self.avbq) },
            avg: self.avg.clone(),
            soci: if n == 0 { Mat::zeros(0, t) } else { take(&self.soci) },
            socmi: if n == 0 { Mat::zeros(0, t) } else { take(&self.socmi) },
        }
    }
}

/// A contiguous plug-in window of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlugEvent {
    pub device: usize,
    /// First period plugged in (0-based, inclusive).
    pub arrive_t: usize,
    /// Last period plugged in (0-based, inclusive).
    pub depart_t: usize,
    pub soc_init: f64,
    pub soc_required_at_departure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FleetRule {
    /// A condition matrix entry is not 0/1.
    NonBinary,
    /// CONCH = 1 while AVBP = 0.
    ChargeWhileUnavailable,
    /// CONDI = 1 while AVBP = 0.
    DischargeWhileUnavailable,
    /// AVBQ = 1 while AVBP = 0.
    ReactiveWhileUnavailable,
    /// SOCi nonzero outside an arrival slot.
    SocInitOutsideArrival,
    /// SOCi or SOCMi outside [0, 1].
    SocRange,
    /// Efficiency outside (0, 1].
    EfficiencyRange,
    /// e_max <= 0.
    CapacityNonPositive,
    /// A min bound exceeds its max.
    BoundOrder,
    /// Device bus not present in the case.
    UnknownBus,
    /// Matrix shape does not match (n_y, T) or (n_g, T).
    DimensionMismatch,
}

/// One validation finding: which device, which period, which rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetViolation {
    /// Device index, or generator index for AVG findings.
    pub device: usize,
    pub period: Option<usize>,
    pub rule: FleetRule,
}

/// Check every fleet invariant; returns the full list of findings
/// (empty when the fleet is valid). Never panics.
pub fn validate_fleet(fleet: &FleetSpec, t: usize, case: &NetworkCase) -> Vec<FleetViolation> {
    let mut out = Vec::new();
    let n_y = fleet.n_devices();
    let n_g = case.n_generators();

    let mut shape_ok = true;
    for m in [&fleet.avbp, &fleet.conch, &fleet.condi, &fleet.avbq, &fleet.soci, &fleet.socmi] {
        if m.nrows() != n_y || m.ncols() != t {
            shape_ok = false;
        }
    }
    if fleet.avg.nrows() != n_g || fleet.avg.ncols() != t {
        shape_ok = false;
    }
    if !shape_ok {
        out.push(FleetViolation {
            device: 0,
            period: None,
            rule: FleetRule::DimensionMismatch,
        });
        return out;
    }

    for (i, d) in fleet.devices.iter().enumerate() {
        if case.bus_index(d.bus).is_none() {
            out.push(FleetViolation { device: i, period: None, rule: FleetRule::UnknownBus });
        }
        if d.e_max_mwh <= 0.0 {
            out.push(FleetViolation { device: i, period: None, rule: FleetRule::CapacityNonPositive });
        }
        for eff in [d.eff_ch, d.eff_dch] {
            if !(eff > 0.0 && eff <= 1.0) {
                out.push(FleetViolation { device: i, period: None, rule: FleetRule::EfficiencyRange });
            }
        }
        if d.p_ch_min_mw > d.p_ch_max_mw
            || d.p_dch_min_mw > d.p_dch_max_mw
            || d.q_s_min_mvar > d.q_s_max_mvar
            || d.soc_min > d.soc_max
        {
            out.push(FleetViolation { device: i, period: None, rule: FleetRule::BoundOrder });
        }
    }

    for i in 0..n_y {
        for k in 0..t {
            for m in [&fleet.avbp, &fleet.conch, &fleet.condi, &fleet.avbq] {
                let v = m.get(i, k);
                if v != 0.0 && v != 1.0 {
                    out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::NonBinary });
                }
            }
            for m in [&fleet.soci, &fleet.socmi] {
                let v = m.get(i, k);
                if !(0.0..=1.0).contains(&v) {
                    out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::SocRange });
                }
            }
            if fleet.avbp.get(i, k) == 0.0 {
                if fleet.conch.get(i, k) == 1.0 {
                    out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::ChargeWhileUnavailable });
                }
                if fleet.condi.get(i, k) == 1.0 {
                    out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::DischargeWhileUnavailable });
                }
                if fleet.avbq.get(i, k) == 1.0 {
                    out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::ReactiveWhileUnavailable });
                }
            }
            if fleet.soci.get(i, k) > 0.0 && !fleet.is_arrival(i, k) {
                out.push(FleetViolation { device: i, period: Some(k), rule: FleetRule::SocInitOutsideArrival });
            }
        }
    }

    for g in 0..n_g {
        for k in 0..t {
            let v = fleet.avg.get(g, k);
            if v != 0.0 && v != 1.0 {
                out.push(FleetViolation { device: g, period: Some(k), rule: FleetRule::NonBinary });
            }
        }
    }
    out
}

/// Decompose the availability matrix into plug events: one event per
/// maximal contiguous run of AVBP = 1. Initial SOC comes from SOCi at the
/// run start; the required departure SOC from SOCMi at the run end (the
/// end-of-horizon slot counts as a departure).
pub fn extract_plug_events(fleet: &FleetSpec) -> Vec<PlugEvent> {
    let t_len = fleet.horizon();
    let mut events = Vec::new();
    for i in 0..fleet.n_devices() {
        let mut t = 0;
        while t < t_len {
            if fleet.present(i, t) {
                let arrive = t;
                while t + 1 < t_len && fleet.present(i, t + 1) {
                    t += 1;
                }
                events.push(PlugEvent {
                    device: i,
                    arrive_t: arrive,
                    depart_t: t,
                    soc_init: fleet.soci.get(i, arrive),
                    soc_required_at_departure: fleet.socmi.get(i, t),
                });
            }
            t += 1;
        }
    }
    events
}

/// Rebuild an AVBP matrix from plug events (inverse of
/// [`extract_plug_events`] on the availability component).
pub fn rebuild_avbp(events: &[PlugEvent], n_y: usize, t: usize) -> Mat {
    let mut m = Mat::zeros(n_y, t);
    for e in events {
        for k in e.arrive_t..=e.depart_t {
            m.set(e.device, k, 1.0);
        }
    }
    m
}

/// What a pin fixes: one scalar variable at one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PinTarget {
    ChargeRate { device: usize, t: usize },
    DischargeRate { device: usize, t: usize },
    ReactiveRate { device: usize, t: usize },
    GenActive { gen: usize, t: usize },
    GenReactive { gen: usize, t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarPin {
    pub target: PinTarget,
    pub value: f64,
}

/// Emit the variable-fixing equalities implied by the condition matrices
/// (rates forced to zero while a device may not act, generator outputs
/// forced to zero while unavailable) plus collapsed min == max rate bounds.
///
/// The availability condition is conjunctive: a rate is live only when the
/// device is present AND the matching permission matrix allows it.
pub fn pin_variables(fleet: &FleetSpec, t_len: usize) -> Vec<VarPin> {
    let mut pins = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut push = |pins: &mut Vec<VarPin>, target: PinTarget, value: f64| {
        if seen.insert(target) {
            pins.push(VarPin { target, value });
        }
    };

    for i in 0..fleet.n_devices() {
        let d = &fleet.devices[i];
        for t in 0..t_len {
            let present = fleet.present(i, t);
            if !present || fleet.conch.get(i, t) == 0.0 {
                push(&mut pins, PinTarget::ChargeRate { device: i, t }, 0.0);
            }
            if !present || fleet.condi.get(i, t) == 0.0 {
                push(&mut pins, PinTarget::DischargeRate { device: i, t }, 0.0);
            }
            if !present || fleet.avbq.get(i, t) == 0.0 {
                push(&mut pins, PinTarget::ReactiveRate { device: i, t }, 0.0);
            }
            // collapsed box bounds become pins as well
            if d.p_ch_min_mw == d.p_ch_max_mw {
                push(&mut pins, PinTarget::ChargeRate { device: i, t }, d.p_ch_min_mw);
            }
            if d.p_dch_min_mw == d.p_dch_max_mw {
                push(&mut pins, PinTarget::DischargeRate { device: i, t }, d.p_dch_min_mw);
            }
            if d.q_s_min_mvar == d.q_s_max_mvar {
                push(&mut pins, PinTarget::ReactiveRate { device: i, t }, d.q_s_min_mvar);
            }
        }
    }
    for g in 0..fleet.avg.nrows() {
        for t in 0..t_len {
            if fleet.avg.get(g, t) == 0.0 {
                push(&mut pins, PinTarget::GenActive { gen: g, t }, 0.0);
                push(&mut pins, PinTarget::GenReactive { gen: g, t }, 0.0);
            }
        }
    }
    pins
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, Generator, NetworkCase};

    fn small_case() -> NetworkCase {
        NetworkCase::new(
            "t",
            1.0,
            vec![Bus::slack(1), Bus::pq(2)],
            vec![Branch::line(1, 2, 0.01, 0.1)],
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

    fn fleet_one_device(t: usize) -> FleetSpec {
        let mut f = FleetSpec::idle(1, 1, t);
        f.devices.push(StorageDevice::charger(2, 0.03, 0.0037, 1.0));
        f
    }

    #[test]
    fn idle_fleet_is_valid() {
        let case = small_case();
        let fleet = FleetSpec::idle(0, 1, 4);
        assert!(validate_fleet(&fleet, 4, &case).is_empty());
    }

    #[test]
    fn charge_while_unavailable_flagged() {
        let case = small_case();
        let mut fleet = fleet_one_device(10);
        fleet.conch.set(0, 7, 1.0); // AVBP stays 0
        let v = validate_fleet(&fleet, 10, &case);
        assert!(v.contains(&FleetViolation {
            device: 0,
            period: Some(7),
            rule: FleetRule::ChargeWhileUnavailable
        }));
    }

    #[test]
    fn converse_direction_allowed() {
        // present but charging forbidden is a legal state
        let case = small_case();
        let mut fleet = fleet_one_device(4);
        fleet.avbp.set(0, 1, 1.0);
        fleet.soci.set(0, 1, 0.5);
        let v = validate_fleet(&fleet, 4, &case);
        assert!(v.is_empty(), "unexpected violations: {v:?}");
    }

    #[test]
    fn soci_outside_arrival_flagged() {
        let case = small_case();
        let mut fleet = fleet_one_device(5);
        for t in 1..4 {
            fleet.avbp.set(0, t, 1.0);
            fleet.conch.set(0, t, 1.0);
        }
        fleet.soci.set(0, 1, 0.4); // arrival: fine
        fleet.soci.set(0, 2, 0.4); // mid-stay: violation
        let v = validate_fleet(&fleet, 5, &case);
        assert_eq!(
            v,
            vec![FleetViolation {
                device: 0,
                period: Some(2),
                rule: FleetRule::SocInitOutsideArrival
            }]
        );
    }

    #[test]
    fn plug_event_from_window() {
        let mut fleet = fleet_one_device(5);
        for t in 1..4 {
            fleet.avbp.set(0, t, 1.0);
        }
        fleet.soci.set(0, 1, 0.4);
        fleet.socmi.set(0, 3, 1.0);
        let ev = extract_plug_events(&fleet);
        assert_eq!(
            ev,
            vec![PlugEvent {
                device: 0,
                arrive_t: 1,
                depart_t: 3,
                soc_init: 0.4,
                soc_required_at_departure: 1.0
            }]
        );
    }

    #[test]
    fn all_ones_row_spans_horizon() {
        let mut fleet = fleet_one_device(6);
        for t in 0..6 {
            fleet.avbp.set(0, t, 1.0);
        }
        fleet.soci.set(0, 0, 0.7);
        let ev = extract_plug_events(&fleet);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].arrive_t, ev[0].depart_t), (0, 5));
        assert_eq!(ev[0].soc_init, 0.7);
    }

    #[test]
    fn two_runs_round_trip() {
        let mut fleet = fleet_one_device(8);
        for t in [1usize, 2, 5, 6, 7] {
            fleet.avbp.set(0, t, 1.0);
        }
        fleet.soci.set(0, 1, 0.3);
        fleet.soci.set(0, 5, 0.6);
        let ev = extract_plug_events(&fleet);
        assert_eq!(ev.len(), 2);
        let rebuilt = rebuild_avbp(&ev, 1, 8);
        assert_eq!(rebuilt, fleet.avbp);
    }

    #[test]
    fn pins_for_unavailable_device() {
        let mut fleet = fleet_one_device(3);
        // free the collapsed dch/qs bounds so only availability pins fire
        fleet.devices[0].p_dch_max_mw = 1.0;
        fleet.devices[0].q_s_max_mvar = 1.0;
        fleet.devices[0].q_s_min_mvar = -1.0;
        fleet.avbp.set(0, 1, 1.0);
        fleet.conch.set(0, 1, 1.0);
        fleet.condi.set(0, 1, 1.0);
        fleet.avbq.set(0, 1, 1.0);
        let pins = pin_variables(&fleet, 3);
        let expect = |t: usize| {
            [
                PinTarget::ChargeRate { device: 0, t },
                PinTarget::DischargeRate { device: 0, t },
                PinTarget::ReactiveRate { device: 0, t },
            ]
        };
        for tgt in expect(0).into_iter().chain(expect(2)) {
            assert!(pins.iter().any(|p| p.target == tgt && p.value == 0.0));
        }
        for tgt in expect(1) {
            assert!(!pins.iter().any(|p| p.target == tgt));
        }
    }

    #[test]
    fn generator_availability_pins() {
        let mut fleet = fleet_one_device(3);
        fleet.avg.set(0, 2, 0.0);
        let pins = pin_variables(&fleet, 3);
        assert!(pins.iter().any(|p| p.target == PinTarget::GenActive { gen: 0, t: 2 }));
        assert!(pins.iter().any(|p| p.target == PinTarget::GenReactive { gen: 0, t: 2 }));
        assert!(!pins.iter().any(|p| p.target == PinTarget::GenActive { gen: 0, t: 1 }));
    }

    #[test]
    fn collapsed_bounds_pin_everything() {
        // one-way charger: dch and qs bounds are 0 = 0, so every period
        // carries dch/qs pins even while present
        let mut fleet = fleet_one_device(3);
        fleet.avbp.set(0, 1, 1.0);
        fleet.conch.set(0, 1, 1.0);
        let pins = pin_variables(&fleet, 3);
        for t in 0..3 {
            assert!(pins
                .iter()
                .any(|p| p.target == PinTarget::DischargeRate { device: 0, t }));
            assert!(pins
                .iter()
                .any(|p| p.target == PinTarget::ReactiveRate { device: 0, t }));
        }
        // charge rate free exactly where present & allowed
        assert!(!pins
            .iter()
            .any(|p| p.target == PinTarget::ChargeRate { device: 0, t: 1 }));
    }

    #[test]
    fn pin_count_combinatorial_identity() {
        // #charge pins == #zeros of (AVBP AND CONCH) when rate bounds are free
        let mut fleet = fleet_one_device(6);
        fleet.devices[0].p_dch_max_mw = 1.0;
        fleet.devices[0].q_s_max_mvar = 1.0;
        fleet.devices[0].q_s_min_mvar = -1.0;
        for (t, (a, c)) in [(0, (1.0, 1.0)), (1, (1.0, 0.0)), (2, (0.0, 0.0)), (3, (1.0, 1.0)), (4, (0.0, 0.0)), (5, (1.0, 1.0))] {
            fleet.avbp.set(0, t, a);
            fleet.conch.set(0, t, c);
            fleet.condi.set(0, t, c);
            fleet.avbq.set(0, t, a);
        }
        let pins = pin_variables(&fleet, 6);
        let charge_pins = pins
            .iter()
            .filter(|p| matches!(p.target, PinTarget::ChargeRate { .. }))
            .count();
        let zeros = (0..6)
            .filter(|&t| !(fleet.avbp.get(0, t) == 1.0 && fleet.conch.get(0, t) == 1.0))
            .count();
        assert_eq!(charge_pins, zeros);
    }
}
