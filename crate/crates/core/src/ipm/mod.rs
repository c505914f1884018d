//! Primal-dual interior-point solver for the assembled NLP.

pub mod kkt;
pub mod ldl;
pub mod nlp;
mod solver;

pub use solver::{solve, BarrierRule, IpmError, IpmOptions, IpmResult, IpmStatus, IterRecord};
