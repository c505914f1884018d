//! Problem interface consumed by the interior-point solver.

use crate::sparse::CsMat;

/// One entry of a KKT elimination-order hint: either a primal variable or
/// an equality row, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktNode {
    Var(usize),
    Eq(usize),
}

/// A smooth NLP in the form
///
///   min f(x)   s.t.  g(x) = 0,  h(x) <= 0,  lb <= x <= ub
///
/// Bounds must satisfy lb < ub strictly on every coordinate (fixed
/// variables belong in a presolve, not here). Infinite bounds are allowed.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;

    /// Lower and upper bound vectors, length `num_vars`.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Start point; the solver pushes it strictly inside the bounds.
    fn initial_point(&self) -> Vec<f64>;

    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Equality residuals and their Jacobian (num_eq x num_vars).
    fn equalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>);

    /// Inequality residuals and their Jacobian (num_ineq x num_vars).
    fn inequalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>);

    /// Upper triangle (row <= col) of the Hessian of
    /// `obj_scale * f + lam' g + mu' h`.
    fn lagrangian_hessian(&self, x: &[f64], obj_scale: f64, lam: &[f64], mu: &[f64]) -> CsMat<f64>;

    /// Optional elimination-order hint for the KKT factorization. When
    /// given, it must list every variable and equality row exactly once;
    /// grouping one time period's variables and rows contiguously keeps
    /// fill-in confined to the inter-period coupling.
    fn kkt_order(&self) -> Option<Vec<KktNode>> {
        None
    }
}
