//! Connectivity and admittance construction, bus injections and line flows.
//!
//! Branch model is the standard pi equivalent with an ideal off-nominal
//! tap (ratio tau, phase shift) on the from side:
//!
//!   y_ff = (ys + j b/2) / tau^2        y_ft = -ys / (tau e^{-j shift})
//!   y_tf = -ys / (tau e^{+j shift})    y_tt =  ys + j b/2
//!
//! with ys = 1/(r + jx). The bus matrix satisfies
//! Y_bus = C_fr' Y_fr + C_to' Y_to + Y_shunt, which is re-verified from the
//! stored pieces at construction time.

use super::NetworkCase;
use crate::sparse::{CsMat, Triplets};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("branch {branch} references unknown bus {bus}")]
    DanglingBranch { branch: usize, bus: u32 },
    #[error("voltage vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("admittance construction identity violated (|residual| = {0:.3e})")]
    ConstructionIdentity(f64),
}

/// Admittance view of a network. Rows of the line matrices correspond to
/// in-service branches only; `branch_idx` maps each row back to the
/// originating branch in the case.
#[derive(Debug, Clone)]
pub struct Admittances {
    pub y_bus: CsMat<Complex64>,
    pub y_fr: CsMat<Complex64>,
    pub y_to: CsMat<Complex64>,
    pub c_fr: CsMat<f64>,
    pub c_to: CsMat<f64>,
    /// In-service row -> branch index in the case tables.
    pub branch_idx: Vec<usize>,
    /// Internal from/to bus index per in-service branch.
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    /// Per-branch two-port admittances (same order as `branch_idx`).
    pub y_ff: Vec<Complex64>,
    pub y_ft: Vec<Complex64>,
    pub y_tf: Vec<Complex64>,
    pub y_tt: Vec<Complex64>,
    /// Per-bus shunt admittance.
    pub y_shunt: Vec<Complex64>,
    /// Per in-service branch rating in p.u. (None when unrated).
    pub s_max_pu: Vec<Option<f64>>,
}

impl Admittances {
    pub fn n_buses(&self) -> usize {
        self.y_bus.nrows()
    }

    /// Number of in-service branches (rows of the line matrices).
    pub fn n_lines(&self) -> usize {
        self.branch_idx.len()
    }
}

/// Build the one-hot from/to connectivity matrices over in-service branches.
pub fn build_connectivity(case: &NetworkCase) -> Result<(CsMat<f64>, CsMat<f64>), GridError> {
    let (from, to, _) = active_endpoints(case)?;
    let n_l = from.len();
    let n_b = case.n_buses();
    let mut tf = Triplets::with_capacity(n_l, n_b, n_l);
    let mut tt = Triplets::with_capacity(n_l, n_b, n_l);
    for i in 0..n_l {
        tf.push(i, from[i], 1.0);
        tt.push(i, to[i], 1.0);
    }
    Ok((tf.to_csr(), tt.to_csr()))
}

fn active_endpoints(case: &NetworkCase) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), GridError> {
    let mut from = Vec::new();
    let mut to = Vec::new();
    let mut idx = Vec::new();
    for (b, br) in case.branches().iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let f = case
            .bus_index(br.from_bus)
            .ok_or(GridError::DanglingBranch { branch: b, bus: br.from_bus })?;
        let t = case
            .bus_index(br.to_bus)
            .ok_or(GridError::DanglingBranch { branch: b, bus: br.to_bus })?;
        from.push(f);
        to.push(t);
        idx.push(b);
    }
    Ok((from, to, idx))
}

pub fn build_admittances(case: &NetworkCase) -> Result<Admittances, GridError> {
    let (from, to, branch_idx) = active_endpoints(case)?;
    let n_l = from.len();
    let n_b = case.n_buses();

    let mut y_ff = Vec::with_capacity(n_l);
    let mut y_ft = Vec::with_capacity(n_l);
    let mut y_tf = Vec::with_capacity(n_l);
    let mut y_tt = Vec::with_capacity(n_l);
    let mut s_max_pu = Vec::with_capacity(n_l);

    for &k in &branch_idx {
        let br = &case.branches()[k];
        let ys = Complex64::new(br.r_pu, br.x_pu).inv();
        let half_charge = Complex64::new(0.0, br.b_pu / 2.0);
        let tau = if br.tap == 0.0 { 1.0 } else { br.tap };
        let shift = Complex64::from_polar(1.0, br.shift_rad);
        let tap = tau * shift;
        y_ff.push((ys + half_charge) / (tau * tau));
        y_ft.push(-ys / tap.conj());
        y_tf.push(-ys / tap);
        y_tt.push(ys + half_charge);
        s_max_pu.push(if br.s_max_mva > 0.0 {
            Some(br.s_max_mva / case.base_mva())
        } else {
            None
        });
    }

    let mut tf = Triplets::with_capacity(n_l, n_b, n_l);
    let mut tt = Triplets::with_capacity(n_l, n_b, n_l);
    let mut tyf = Triplets::with_capacity(n_l, n_b, 2 * n_l);
    let mut tyt = Triplets::with_capacity(n_l, n_b, 2 * n_l);
    let mut tyb = Triplets::with_capacity(n_b, n_b, 4 * n_l + n_b);

    for i in 0..n_l {
        let (f, t) = (from[i], to[i]);
        tf.push(i, f, 1.0);
        tt.push(i, t, 1.0);
        tyf.push(i, f, y_ff[i]);
        tyf.push(i, t, y_ft[i]);
        tyt.push(i, f, y_tf[i]);
        tyt.push(i, t, y_tt[i]);
        tyb.push(f, f, y_ff[i]);
        tyb.push(f, t, y_ft[i]);
        tyb.push(t, f, y_tf[i]);
        tyb.push(t, t, y_tt[i]);
    }
    let y_shunt: Vec<Complex64> = case
        .buses()
        .iter()
        .map(|b| Complex64::new(b.gs_pu, b.bs_pu))
        .collect();
    for (b, &ysh) in y_shunt.iter().enumerate() {
        if ysh != Complex64::default() {
            tyb.push(b, b, ysh);
        }
    }

    let adm = Admittances {
        y_bus: tyb.to_csr(),
        y_fr: tyf.to_csr(),
        y_to: tyt.to_csr(),
        c_fr: tf.to_csr(),
        c_to: tt.to_csr(),
        branch_idx,
        from,
        to,
        y_ff,
        y_ft,
        y_tf,
        y_tt,
        y_shunt,
        s_max_pu,
    };

    let residual = construction_residual(&adm);
    if residual > 1e-12 {
        return Err(GridError::ConstructionIdentity(residual));
    }
    Ok(adm)
}

/// Max-norm of Y_bus - (C_fr' Y_fr + C_to' Y_to + Y_shunt), recomputed from
/// the stored matrices rather than the per-branch scalars.
fn construction_residual(adm: &Admittances) -> f64 {
    let n_b = adm.n_buses();
    let mut acc = Triplets::with_capacity(n_b, n_b, adm.y_bus.nnz());
    for (part_c, part_y) in [(&adm.c_fr, &adm.y_fr), (&adm.c_to, &adm.y_to)] {
        for i in 0..part_c.nrows() {
            let (cbus, cval) = part_c.row(i);
            debug_assert_eq!(cbus.len(), 1);
            debug_assert_eq!(cval[0], 1.0);
            let target = cbus[0];
            let (cols, vals) = part_y.row(i);
            for (&j, &y) in cols.iter().zip(vals) {
                acc.push(target, j, y);
            }
        }
    }
    for (b, &ysh) in adm.y_shunt.iter().enumerate() {
        acc.push(b, b, ysh);
    }
    let product = acc.to_csr();
    let mut worst: f64 = 0.0;
    for r in 0..n_b {
        let (c1, v1) = adm.y_bus.row(r);
        for (&c, &v) in c1.iter().zip(v1) {
            worst = worst.max((v - product.get(r, c)).norm());
        }
        let (c2, v2) = product.row(r);
        for (&c, &v) in c2.iter().zip(v2) {
            worst = worst.max((v - adm.y_bus.get(r, c)).norm());
        }
    }
    worst
}

/// Complex bus power injections S = diag(V) (Y_bus V)*.
pub fn bus_injections(v: &[Complex64], adm: &Admittances) -> Result<Vec<Complex64>, GridError> {
    if v.len() != adm.n_buses() {
        return Err(GridError::Dimension {
            expected: adm.n_buses(),
            got: v.len(),
        });
    }
    let i_bus = adm.y_bus.matvec(v);
    Ok(v.iter().zip(&i_bus).map(|(&vi, ii)| vi * ii.conj()).collect())
}

/// Complex line flows, from sides then to sides (length 2 n_l).
pub fn line_flows(v: &[Complex64], adm: &Admittances) -> Result<Vec<Complex64>, GridError> {
    if v.len() != adm.n_buses() {
        return Err(GridError::Dimension {
            expected: adm.n_buses(),
            got: v.len(),
        });
    }
    let n_l = adm.n_lines();
    let mut s = vec![Complex64::default(); 2 * n_l];
    for i in 0..n_l {
        let (f, t) = (adm.from[i], adm.to[i]);
        let i_fr = adm.y_ff[i] * v[f] + adm.y_ft[i] * v[t];
        let i_to = adm.y_tf[i] * v[f] + adm.y_tt[i] * v[t];
        s[i] = v[f] * i_fr.conj();
        s[n_l + i] = v[t] * i_to.conj();
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, Bus, NetworkCase};

    fn case_with(branches: Vec<Branch>, n: u32) -> NetworkCase {
        let mut buses = vec![Bus::slack(1)];
        buses.extend((2..=n).map(Bus::pq));
        NetworkCase::new("t", 10.0, buses, branches, vec![]).unwrap()
    }

    #[test]
    fn connectivity_one_branch() {
        let case = case_with(vec![Branch::line(1, 2, 0.0, 0.1)], 2);
        let (c_fr, c_to) = build_connectivity(&case).unwrap();
        assert_eq!(c_fr.to_dense(), vec![vec![1.0, 0.0]]);
        assert_eq!(c_to.to_dense(), vec![vec![0.0, 1.0]]);
    }

    #[test]
    fn connectivity_ring_degrees() {
        let case = case_with(
            vec![
                Branch::line(1, 2, 0.0, 0.1),
                Branch::line(2, 3, 0.0, 0.1),
                Branch::line(3, 1, 0.0, 0.1),
            ],
            3,
        );
        let (c_fr, c_to) = build_connectivity(&case).unwrap();
        for i in 0..3 {
            let row_f = &c_fr.to_dense()[i];
            let row_t = &c_to.to_dense()[i];
            assert_eq!(row_f.iter().sum::<f64>(), 1.0);
            assert_eq!(row_t.iter().sum::<f64>(), 1.0);
        }
        // column sums of c_fr + c_to are node degrees (2 in a ring)
        for b in 0..3 {
            let deg: f64 = (0..3)
                .map(|i| c_fr.to_dense()[i][b] + c_to.to_dense()[i][b])
                .sum();
            assert_eq!(deg, 2.0);
        }
    }

    #[test]
    fn lossless_line_ybus() {
        let case = case_with(vec![Branch::line(1, 2, 0.0, 0.1)], 2);
        let adm = build_admittances(&case).unwrap();
        let y = adm.y_bus.to_dense();
        let tol = 1e-12;
        assert!((y[0][0] - Complex64::new(0.0, -10.0)).norm() < tol);
        assert!((y[0][1] - Complex64::new(0.0, 10.0)).norm() < tol);
        assert!((y[1][0] - Complex64::new(0.0, 10.0)).norm() < tol);
        assert!((y[1][1] - Complex64::new(0.0, -10.0)).norm() < tol);
    }

    #[test]
    fn pi_model_matches_scalar_oracle() {
        // independent recomputation of the pi model for r=0.01, x=0.1, b=0.02
        let mut br = Branch::line(1, 2, 0.01, 0.1);
        br.b_pu = 0.02;
        let case = case_with(vec![br], 2);
        let adm = build_admittances(&case).unwrap();

        let denom = 0.01f64 * 0.01 + 0.1 * 0.1;
        let ys = Complex64::new(0.01 / denom, -0.1 / denom);
        let ysh = Complex64::new(0.0, 0.01);
        let y = adm.y_bus.to_dense();
        assert!((y[0][0] - (ys + ysh)).norm() < 1e-14);
        assert!((y[1][1] - (ys + ysh)).norm() < 1e-14);
        assert!((y[0][1] - (-ys)).norm() < 1e-14);
        assert!((y[1][0] - (-ys)).norm() < 1e-14);
    }

    #[test]
    fn nominal_taps_give_symmetric_ybus() {
        let case = case_with(
            vec![
                Branch::line(1, 2, 0.01, 0.1),
                Branch::line(2, 3, 0.02, 0.2),
            ],
            3,
        );
        let adm = build_admittances(&case).unwrap();
        let y = adm.y_bus.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert!((y[i][j] - y[j][i]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn out_of_service_branch_excluded() {
        let mut dead = Branch::line(2, 3, 0.01, 0.1);
        dead.in_service = false;
        let case = case_with(vec![Branch::line(1, 2, 0.01, 0.1), dead], 3);
        let adm = build_admittances(&case).unwrap();
        assert_eq!(adm.n_lines(), 1);
        assert_eq!(adm.branch_idx, vec![0]);
        let y = adm.y_bus.to_dense();
        assert_eq!(y[2][2], Complex64::default());
        assert_eq!(y[1][2], Complex64::default());
    }

    #[test]
    fn flat_voltage_no_shunt_zero_injection() {
        let case = case_with(
            vec![Branch::line(1, 2, 0.01, 0.1), Branch::line(2, 3, 0.01, 0.1)],
            3,
        );
        let adm = build_admittances(&case).unwrap();
        let v = vec![Complex64::new(1.0, 0.0); 3];
        let s = bus_injections(&v, &adm).unwrap();
        for si in s {
            assert!(si.norm() < 1e-14);
        }
    }

    #[test]
    fn two_bus_injection_closed_form() {
        // lossless x = 0.1, v = [1<0, 1<-0.1]: P1 = 10 sin(0.1), P1 + P2 = 0
        let case = case_with(vec![Branch::line(1, 2, 0.0, 0.1)], 2);
        let adm = build_admittances(&case).unwrap();
        let v = vec![
            Complex64::from_polar(1.0, 0.0),
            Complex64::from_polar(1.0, -0.1),
        ];
        let s = bus_injections(&v, &adm).unwrap();
        assert!((s[0].re - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((s[0].re + s[1].re).abs() < 1e-12);
    }

    #[test]
    fn injections_match_dense_summation_oracle() {
        let mut br = Branch::line(1, 2, 0.01, 0.1);
        br.b_pu = 0.04;
        let mut br2 = Branch::line(2, 3, 0.03, 0.15);
        br2.tap = 1.05;
        br2.shift_rad = 0.02;
        let case = case_with(vec![br, br2], 3);
        let adm = build_admittances(&case).unwrap();
        let v = vec![
            Complex64::from_polar(1.02, 0.01),
            Complex64::from_polar(0.97, -0.05),
            Complex64::from_polar(1.01, 0.03),
        ];
        let s = bus_injections(&v, &adm).unwrap();
        let dense = adm.y_bus.to_dense();
        for i in 0..3 {
            let mut acc = Complex64::default();
            for k in 0..3 {
                acc += dense[i][k] * v[k];
            }
            let expect = v[i] * acc.conj();
            assert!((s[i] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn line_flow_loss_matches_scalar_oracle() {
        let case = case_with(vec![Branch::line(1, 2, 0.05, 0.2)], 2);
        let adm = build_admittances(&case).unwrap();
        let v = vec![
            Complex64::from_polar(1.0, 0.0),
            Complex64::from_polar(0.95, -0.08),
        ];
        let s = line_flows(&v, &adm).unwrap();
        // loss = |I|^2 r with I = (V1 - V2) / (r + jx)
        let i = (v[0] - v[1]) / Complex64::new(0.05, 0.2);
        let loss = i.norm_sqr() * 0.05;
        assert!(((s[0] + s[1]).re - loss).abs() < 1e-12);

        // lossless variant with equal terminal magnitudes: |S_fr| = |S_to|
        let case0 = case_with(vec![Branch::line(1, 2, 0.0, 0.2)], 2);
        let adm0 = build_admittances(&case0).unwrap();
        let v0 = vec![
            Complex64::from_polar(1.0, 0.0),
            Complex64::from_polar(1.0, -0.08),
        ];
        let s0 = line_flows(&v0, &adm0).unwrap();
        assert!((s0[0].norm() - s0[1].norm()).abs() < 1e-12);
        assert!((s0[0] + s0[1]).re.abs() < 1e-12);
    }

    #[test]
    fn flat_no_load_line_flows_zero() {
        let case = case_with(vec![Branch::line(1, 2, 0.01, 0.1)], 2);
        let adm = build_admittances(&case).unwrap();
        let v = vec![Complex64::new(1.0, 0.0); 2];
        let s = line_flows(&v, &adm).unwrap();
        assert!(s.iter().all(|si| si.norm() < 1e-14));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let case = case_with(vec![Branch::line(1, 2, 0.01, 0.1)], 2);
        let adm = build_admittances(&case).unwrap();
        let v = vec![Complex64::new(1.0, 0.0); 3];
        assert!(matches!(
            bus_injections(&v, &adm),
            Err(GridError::Dimension { expected: 2, got: 3 })
        ));
    }
}
