//! Static network data model: buses, branches, generators.
//!
//! External bus ids are arbitrary; they are remapped to dense 0-based
//! internal indices at construction time and all downstream algebra works
//! on internal indices. Quantities are stored in per-unit on the case MVA
//! base except where a field name says otherwise (MW/MVAr/MVA at the
//! data boundary).

mod admittance;
pub mod io;

pub use admittance::{build_admittances, build_connectivity, bus_injections, line_flows, Admittances};

use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    /// Shunt conductance, p.u. at V = 1.
    pub gs_pu: f64,
    /// Shunt susceptance, p.u. at V = 1.
    pub bs_pu: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Bus {
    /// Plain PQ bus with unit voltage band ±10% and free angle.
    pub fn pq(id: u32) -> Self {
        Bus {
            id,
            kind: BusKind::Pq,
            gs_pu: 0.0,
            bs_pu: 0.0,
            v_min: 0.9,
            v_max: 1.1,
            theta_min: -std::f64::consts::PI,
            theta_max: std::f64::consts::PI,
        }
    }

    pub fn slack(id: u32) -> Self {
        Bus {
            kind: BusKind::Slack,
            ..Bus::pq(id)
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Branch {
    pub from_bus: u32,
    pub to_bus: u32,
    pub r_pu: f64,
    pub x_pu: f64,
    /// Total line charging susceptance, p.u.
    pub b_pu: f64,
    /// Off-nominal tap ratio on the from side; 0 or 1 means nominal.
    pub tap: f64,
    /// Phase shift on the from side, radians.
    pub shift_rad: f64,
    /// Apparent power rating in MVA; 0 means unrated (no flow limit).
    pub s_max_mva: f64,
    pub in_service: bool,
}

impl Branch {
    pub fn line(from_bus: u32, to_bus: u32, r_pu: f64, x_pu: f64) -> Self {
        Branch {
            from_bus,
            to_bus,
            r_pu,
            x_pu,
            b_pu: 0.0,
            tap: 1.0,
            shift_rad: 0.0,
            s_max_mva: 0.0,
            in_service: true,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Generator {
    pub bus: u32,
    pub p_min_mw: f64,
    pub p_max_mw: f64,
    pub q_min_mvar: f64,
    pub q_max_mvar: f64,
    /// Linear cost placeholder; actual per-period prices live in the
    /// demand series.
    pub cost_coeff: f64,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("base MVA must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("case has no buses")]
    Empty,
    #[error("duplicate bus id {0}")]
    DuplicateBusId(u32),
    #[error("branch {branch} references unknown bus {bus}")]
    DanglingBranch { branch: usize, bus: u32 },
    #[error("generator {gen} references unknown bus {bus}")]
    DanglingGenerator { gen: usize, bus: u32 },
    #[error("case must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("in-service branch {0} has zero reactance")]
    SingularBranch(usize),
    #[error("branch {0} has negative resistance")]
    NegativeResistance(usize),
    #[error("branch {0} has negative rating")]
    NegativeRating(usize),
    #[error("bus {0} has v_min > v_max")]
    VoltageBounds(u32),
    #[error("bus {0} has theta_min > theta_max")]
    AngleBounds(u32),
    #[error("generator {0} has inverted active or reactive bounds")]
    GenBounds(usize),
}

/// Validated, internally indexed network description.
#[derive(Debug, Clone)]
pub struct NetworkCase {
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    bus_index: HashMap<u32, usize>,
    slack: usize,
}

impl NetworkCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self, CaseError> {
        if base_mva <= 0.0 {
            return Err(CaseError::NonPositiveBase(base_mva));
        }
        if buses.is_empty() {
            return Err(CaseError::Empty);
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return Err(CaseError::DuplicateBusId(b.id));
            }
            if b.v_min > b.v_max {
                return Err(CaseError::VoltageBounds(b.id));
            }
            if b.theta_min > b.theta_max {
                return Err(CaseError::AngleBounds(b.id));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Slack)
            .map(|(i, _)| i)
            .collect();
        if slacks.len() != 1 {
            return Err(CaseError::SlackCount(slacks.len()));
        }
        for (i, br) in branches.iter().enumerate() {
            for bus in [br.from_bus, br.to_bus] {
                if !bus_index.contains_key(&bus) {
                    return Err(CaseError::DanglingBranch { branch: i, bus });
                }
            }
            if br.in_service && br.x_pu == 0.0 {
                return Err(CaseError::SingularBranch(i));
            }
            if br.r_pu < 0.0 {
                return Err(CaseError::NegativeResistance(i));
            }
            if br.s_max_mva < 0.0 {
                return Err(CaseError::NegativeRating(i));
            }
        }
        for (i, g) in generators.iter().enumerate() {
            if !bus_index.contains_key(&g.bus) {
                return Err(CaseError::DanglingGenerator { gen: i, bus: g.bus });
            }
            if g.p_min_mw > g.p_max_mw || g.q_min_mvar > g.q_max_mvar {
                return Err(CaseError::GenBounds(i));
            }
        }
        Ok(NetworkCase {
            name: name.into(),
            base_mva,
            slack: slacks[0],
            buses,
            branches,
            generators,
            bus_index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    /// Internal index of an external bus id.
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    /// External id of an internal bus index.
    pub fn bus_id(&self, idx: usize) -> u32 {
        self.buses[idx].id
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    /// Internal bus index of generator `g`.
    pub fn gen_bus(&self, g: usize) -> usize {
        self.bus_index[&self.generators[g].bus]
    }

    /// Index of the generator sitting on the slack bus, if any.
    pub fn slack_generator(&self) -> Option<usize> {
        (0..self.generators.len()).find(|&g| self.gen_bus(g) == self.slack)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> NetworkCase {
        NetworkCase::new(
            "two-bus",
            10.0,
            vec![Bus::slack(1), Bus::pq(2)],
            vec![Branch::line(1, 2, 0.01, 0.1)],
            vec![Generator {
                bus: 1,
                p_min_mw: 0.0,
                p_max_mw: 100.0,
                q_min_mvar: -100.0,
                q_max_mvar: 100.0,
                cost_coeff: 1.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn valid_case_indexes_buses() {
        let c = two_bus();
        assert_eq!(c.bus_index(1), Some(0));
        assert_eq!(c.bus_index(2), Some(1));
        assert_eq!(c.slack_index(), 0);
        assert_eq!(c.slack_generator(), Some(0));
    }

    #[test]
    fn dangling_branch_rejected() {
        let err = NetworkCase::new(
            "bad",
            10.0,
            vec![Bus::slack(1)],
            vec![Branch::line(1, 7, 0.0, 0.1)],
            vec![],
        )
        .unwrap_err();
        match err {
            CaseError::DanglingBranch { branch: 0, bus: 7 } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn slack_count_enforced() {
        let err = NetworkCase::new("bad", 10.0, vec![Bus::pq(1)], vec![], vec![]).unwrap_err();
        assert!(matches!(err, CaseError::SlackCount(0)));
    }

    #[test]
    fn zero_reactance_rejected() {
        let err = NetworkCase::new(
            "bad",
            10.0,
            vec![Bus::slack(1), Bus::pq(2)],
            vec![Branch::line(1, 2, 0.01, 0.0)],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::SingularBranch(0)));
    }
}
