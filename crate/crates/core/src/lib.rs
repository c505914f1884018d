//! Multiperiod AC optimal power flow toolkit for EV charge scheduling in
//! distribution grids.
//!
//! The crate is organised around the pipeline a study runs end to end:
//!
//! * [`grid`] — network data model and complex power-flow algebra
//! * [`pf`] — Newton-Raphson AC power flow (simulation of uncoordinated charging)
//! * [`fleet`] — storage fleet model: availability matrices, plug events, pins
//! * [`problem`] — assembly of the multiperiod OPF as a sparse NLP
//! * [`ipm`] — primal-dual interior-point solver with a block-ordered KKT path
//! * [`scenarios`] — synthetic feeders, fleet sampling, base-load disaggregation, prices
//! * [`strategies`] — the three charge-scheduling strategies and their comparison

pub mod fleet;
pub mod grid;
pub mod ipm;
mod linalg;
pub mod mat;
pub mod pf;
pub mod problem;
pub mod scenarios;
pub mod sparse;
pub mod strategies;
