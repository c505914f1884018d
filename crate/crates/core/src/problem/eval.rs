//! Objective, constraint and derivative callbacks of the assembled NLP.
//!
//! All first and second derivatives are exact closed forms over the polar
//! voltage variables; the finite-difference suites in `tests/` pin them
//! down numerically.

use super::MpopfProblem;
use crate::sparse::{CsMat, Triplets};
use num_complex::Complex64;

impl MpopfProblem {
    /// Objective in NOK: sum over periods of price * generated energy.
    pub fn eval_objective(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let l = &self.layout;
        debug_assert_eq!(x.len(), l.total());
        let base = self.case.base_mva();
        let mut f = 0.0;
        let mut grad = vec![0.0; l.total()];
        for t in 0..l.t_count {
            let w = self.prices[t] * self.dt_h * base;
            for g in 0..l.n_g {
                f += w * x[l.pg(t, g)];
                grad[l.pg(t, g)] = w;
            }
        }
        (f, grad)
    }

    /// Equality residuals and Jacobian. Row order: balance rows (per
    /// period: active then reactive, one per bus), then linear rows, then
    /// storage rows period-major.
    pub fn eval_equalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>) {
        let l = &self.layout;
        debug_assert_eq!(x.len(), l.total());
        let counts = self.counts();
        let n_eq = counts.equalities();
        let n_b = l.n_b;
        let mut resid = vec![0.0; n_eq];
        let nnz_guess = l.t_count * (6 * self.adm.y_bus.nnz() + 2 * n_b + 2 * l.n_g + 3 * l.n_y)
            + self.linear_rows.len()
            + 4 * counts.storage;
        let mut jac = Triplets::with_capacity(n_eq, l.total(), nnz_guess);

        // nonlinear balance rows
        for t in 0..l.t_count {
            let row0 = t * 2 * n_b;
            let v = self.voltages(x, t);
            let i_bus = self.adm.y_bus.matvec(&v);
            for b in 0..n_b {
                let s = v[b] * i_bus[b].conj();
                resid[row0 + b] = -self.pd_pu.get(b, t) - s.re;
                resid[row0 + n_b + b] = -self.qd_pu.get(b, t) - s.im;
            }
            for g in 0..l.n_g {
                let b = self.gen_bus[g];
                resid[row0 + b] += x[l.pg(t, g)];
                resid[row0 + n_b + b] += x[l.qg(t, g)];
                jac.push(row0 + b, l.pg(t, g), 1.0);
                jac.push(row0 + n_b + b, l.qg(t, g), 1.0);
            }
            for i in 0..l.n_y {
                let b = self.dev_bus[i];
                resid[row0 + b] += -x[l.pch(t, i)] + x[l.pdch(t, i)];
                resid[row0 + n_b + b] += x[l.qs(t, i)];
                jac.push(row0 + b, l.pch(t, i), -1.0);
                jac.push(row0 + b, l.pdch(t, i), 1.0);
                jac.push(row0 + n_b + b, l.qs(t, i), 1.0);
            }
            // d(-S)/d(theta, v): diagonal parts then per-admittance entries
            for b in 0..n_b {
                let e_b = v[b] / x[l.vm(t, b)];
                let dsa = Complex64::i() * v[b] * i_bus[b].conj();
                let dsm = i_bus[b].conj() * e_b;
                jac.push(row0 + b, l.theta(t, b), -dsa.re);
                jac.push(row0 + n_b + b, l.theta(t, b), -dsa.im);
                jac.push(row0 + b, l.vm(t, b), -dsm.re);
                jac.push(row0 + n_b + b, l.vm(t, b), -dsm.im);
                let (cols, vals) = self.adm.y_bus.row(b);
                for (&j, &y) in cols.iter().zip(vals) {
                    let e_j = v[j] / x[l.vm(t, j)];
                    let dsa = -Complex64::i() * v[b] * (y * v[j]).conj();
                    let dsm = v[b] * (y * e_j).conj();
                    jac.push(row0 + b, l.theta(t, j), -dsa.re);
                    jac.push(row0 + n_b + b, l.theta(t, j), -dsa.im);
                    jac.push(row0 + b, l.vm(t, j), -dsm.re);
                    jac.push(row0 + n_b + b, l.vm(t, j), -dsm.im);
                }
            }
        }

        // linear rows
        let lin0 = counts.balance;
        for (k, row) in self.linear_rows.iter().enumerate() {
            resid[lin0 + k] = x[row.var] - row.value;
            jac.push(lin0 + k, row.var, 1.0);
        }

        // storage coupling rows
        let st0 = counts.balance + counts.linear;
        for t in 0..l.t_count {
            for i in 0..l.n_y {
                let row = st0 + t * l.n_y + i;
                let mut r = x[l.soc(t, i)]
                    - self.ch_coeff[i] * x[l.pch(t, i)]
                    + self.dch_coeff[i] * x[l.pdch(t, i)];
                jac.push(row, l.soc(t, i), 1.0);
                jac.push(row, l.pch(t, i), -self.ch_coeff[i]);
                jac.push(row, l.pdch(t, i), self.dch_coeff[i]);
                if self.fleet.is_arrival(i, t) || t == 0 {
                    r -= self.fleet.soci.get(i, t);
                } else {
                    r -= x[l.soc(t - 1, i)];
                    jac.push(row, l.soc(t - 1, i), -1.0);
                }
                resid[row] = r;
            }
        }

        (resid, jac.to_csr())
    }

    /// Line-flow inequality residuals |S|^2 - S_max^2 and Jacobian.
    /// Rows are period-major over the rated terminal list.
    pub fn eval_inequalities(&self, x: &[f64]) -> (Vec<f64>, CsMat<f64>) {
        let l = &self.layout;
        debug_assert_eq!(x.len(), l.total());
        let per_t = self.rated.len();
        let n_rows = l.t_count * per_t;
        let mut resid = vec![0.0; n_rows];
        let mut jac = Triplets::with_capacity(n_rows, l.total(), 4 * n_rows);

        for t in 0..l.t_count {
            for (k, &(line, from_side)) in self.rated.iter().enumerate() {
                let row = t * per_t + k;
                let term = self.terminal_flow(x, t, line, from_side);
                let smax = self.adm.s_max_pu[line].expect("rated");
                resid[row] = term.s.norm_sqr() - smax * smax;
                // d|S|^2/dx = 2 Re(conj(S) dS/dx)
                let w = term.s.conj();
                jac.push(row, l.theta(t, term.own), 2.0 * (w * term.ds_d_theta_own).re);
                jac.push(row, l.theta(t, term.other), 2.0 * (w * term.ds_d_theta_other).re);
                jac.push(row, l.vm(t, term.own), 2.0 * (w * term.ds_d_v_own).re);
                jac.push(row, l.vm(t, term.other), 2.0 * (w * term.ds_d_v_other).re);
            }
        }
        (resid, jac.to_csr())
    }

    /// Upper triangle of the Hessian of
    /// `obj_scale * f + lam' g + mu' h`. The objective and every linear
    /// row are affine, so only balance and line-flow rows contribute.
    pub fn eval_lagrangian_hessian(
        &self,
        x: &[f64],
        obj_scale: f64,
        lam: &[f64],
        mu: &[f64],
    ) -> CsMat<f64> {
        let _ = obj_scale; // linear objective: no curvature
        let l = &self.layout;
        debug_assert_eq!(x.len(), l.total());
        debug_assert_eq!(lam.len(), self.counts().equalities());
        debug_assert_eq!(mu.len(), self.counts().line);
        let n_b = l.n_b;
        let mut h = Triplets::with_capacity(
            l.total(),
            l.total(),
            l.t_count * (4 * self.adm.y_bus.nnz() + 2 * n_b) + 10 * mu.len(),
        );

        for t in 0..l.t_count {
            let row0 = t * 2 * n_b;
            let v = self.voltages(x, t);
            let i_bus = self.adm.y_bus.matvec(&v);
            // complex balance weights c_b = lamP_b - j lamQ_b; the balance
            // residual carries -S, handled by negating at emission
            let c: Vec<Complex64> = (0..n_b)
                .map(|b| Complex64::new(lam[row0 + b], -lam[row0 + n_b + b]))
                .collect();
            // w = Y^H (c .* V)
            let mut w = vec![Complex64::default(); n_b];
            for m in 0..n_b {
                let (cols, vals) = self.adm.y_bus.row(m);
                let cv = c[m] * v[m];
                for (&n, &y) in cols.iter().zip(vals) {
                    w[n] += y.conj() * cv;
                }
            }

            // second derivatives of Phi = sum_b c_b S_b (complex), of which
            // the Lagrangian takes -Re
            let mut acc_tt = Triplets::with_capacity(n_b, n_b, 2 * self.adm.y_bus.nnz() + n_b);
            let mut acc_tv = Triplets::with_capacity(n_b, n_b, 2 * self.adm.y_bus.nnz() + n_b);
            let mut acc_vv = Triplets::with_capacity(n_b, n_b, 2 * self.adm.y_bus.nnz());
            for m in 0..n_b {
                let e_m = v[m] / x[l.vm(t, m)];
                acc_tt.push(m, m, -c[m] * v[m] * i_bus[m].conj() - v[m].conj() * w[m]);
                acc_tv.push(
                    m,
                    m,
                    Complex64::i() * (c[m] * e_m * i_bus[m].conj() - e_m.conj() * w[m]),
                );
            }
            for (m, n, y) in self.adm.y_bus.iter() {
                let e_m = v[m] / x[l.vm(t, m)];
                let e_n = v[n] / x[l.vm(t, n)];
                let tt = c[m] * v[m] * (y * v[n]).conj();
                acc_tt.push(m, n, tt);
                acc_tt.push(n, m, tt);
                acc_tv.push(m, n, Complex64::i() * c[m] * v[m] * (y * e_n).conj());
                acc_tv.push(n, m, -Complex64::i() * v[n].conj() * y.conj() * c[m] * e_m);
                let vv = c[m] * e_m * (y * e_n).conj();
                acc_vv.push(m, n, vv);
                acc_vv.push(n, m, vv);
            }
            // emit -Re(acc) into the global upper triangle
            for (m, n, val) in acc_tt.to_csr().iter() {
                if m <= n {
                    h.push(l.theta(t, m), l.theta(t, n), -val.re);
                }
            }
            for (m, n, val) in acc_tv.to_csr().iter() {
                // theta block precedes v block, so (theta_m, v_n) is upper
                h.push(l.theta(t, m), l.vm(t, n), -val.re);
            }
            for (m, n, val) in acc_vv.to_csr().iter() {
                if m <= n {
                    h.push(l.vm(t, m), l.vm(t, n), -val.re);
                }
            }

            // line-flow curvature, weighted by mu
            let per_t = self.rated.len();
            for (k, &(line, from_side)) in self.rated.iter().enumerate() {
                let weight = mu[t * per_t + k];
                if weight == 0.0 {
                    continue;
                }
                self.push_flow_hessian(&mut h, x, t, line, from_side, weight);
            }
        }
        h.to_csr()
    }

    fn voltages(&self, x: &[f64], t: usize) -> Vec<Complex64> {
        let l = &self.layout;
        (0..l.n_b)
            .map(|b| Complex64::from_polar(x[l.vm(t, b)], x[l.theta(t, b)]))
            .collect()
    }

    fn terminal_flow(&self, x: &[f64], t: usize, line: usize, from_side: bool) -> TerminalFlow {
        let l = &self.layout;
        let (own, other, y_own, y_other) = if from_side {
            (
                self.adm.from[line],
                self.adm.to[line],
                self.adm.y_ff[line],
                self.adm.y_ft[line],
            )
        } else {
            (
                self.adm.to[line],
                self.adm.from[line],
                self.adm.y_tt[line],
                self.adm.y_tf[line],
            )
        };
        let v_own = Complex64::from_polar(x[l.vm(t, own)], x[l.theta(t, own)]);
        let v_other = Complex64::from_polar(x[l.vm(t, other)], x[l.theta(t, other)]);
        // S = conj(y_own) |V_o|^2 + conj(y_other) V_o conj(V_p)
        let a = y_own.conj() * v_own.norm_sqr();
        let b = y_other.conj() * v_own * v_other.conj();
        TerminalFlow {
            own,
            other,
            s: a + b,
            a,
            b,
            v_own_mag: x[l.vm(t, own)],
            v_other_mag: x[l.vm(t, other)],
            ds_d_theta_own: Complex64::i() * b,
            ds_d_theta_other: -Complex64::i() * b,
            ds_d_v_own: (a + a + b) / x[l.vm(t, own)],
            ds_d_v_other: b / x[l.vm(t, other)],
        }
    }

    /// Hessian of weight * |S|^2 for one line terminal, pushed into the
    /// global upper triangle.
    fn push_flow_hessian(
        &self,
        h: &mut Triplets<f64>,
        x: &[f64],
        t: usize,
        line: usize,
        from_side: bool,
        weight: f64,
    ) {
        let l = &self.layout;
        let term = self.terminal_flow(x, t, line, from_side);
        let (vo, vp) = (term.v_own_mag, term.v_other_mag);
        let (a, b, s) = (term.a, term.b, term.s);

        // first derivatives in the order [theta_o, theta_p, v_o, v_p]
        let d = [
            term.ds_d_theta_own,
            term.ds_d_theta_other,
            term.ds_d_v_own,
            term.ds_d_v_other,
        ];
        // second derivatives of S (upper triangle of the 4x4)
        let j = Complex64::i();
        let dd = [
            [-b, b, j * b / vo, j * b / vp],
            [
                Complex64::default(),
                -b,
                -j * b / vo,
                -j * b / vp,
            ],
            [
                Complex64::default(),
                Complex64::default(),
                (a + a) / (vo * vo),
                b / (vo * vp),
            ],
            [Complex64::default(); 4],
        ];
        let idx = [
            l.theta(t, term.own),
            l.theta(t, term.other),
            l.vm(t, term.own),
            l.vm(t, term.other),
        ];
        for p in 0..4 {
            for q in p..4 {
                // d2|S|^2/dxp dxq = 2 Re(conj(dS/dxq) dS/dxp + conj(S) d2S)
                let val = 2.0 * (d[q].conj() * d[p] + s.conj() * dd[p][q]).re;
                if val != 0.0 {
                    let (r, c) = if idx[p] <= idx[q] {
                        (idx[p], idx[q])
                    } else {
                        (idx[q], idx[p])
                    };
                    h.push(r, c, weight * val);
                }
            }
        }
    }
}

struct TerminalFlow {
    own: usize,
    other: usize,
    s: Complex64,
    a: Complex64,
    b: Complex64,
    v_own_mag: f64,
    v_other_mag: f64,
    ds_d_theta_own: Complex64,
    ds_d_theta_other: Complex64,
    ds_d_v_own: Complex64,
    ds_d_v_other: Complex64,
}

#[cfg(test)]
mod tests {
    use super::super::{DemandSeries, MpopfProblem, NetworkLimits};
    use crate::fleet::{FleetSpec, StorageDevice};
    use crate::grid::{Branch, Bus, Generator, NetworkCase};
    use crate::mat::Mat;

    fn setup(t: usize, price: &[f64], limits: NetworkLimits) -> MpopfProblem {
        let mut br = Branch::line(1, 2, 0.01, 0.1);
        br.s_max_mva = 5.0;
        let case = NetworkCase::new(
            "t",
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
        let mut fleet = FleetSpec::idle(1, 1, t);
        fleet.devices.push(StorageDevice::charger(2, 0.03, 0.0037, 0.9));
        for k in 0..t {
            fleet.avbp.set(0, k, 1.0);
            fleet.conch.set(0, k, 1.0);
        }
        fleet.soci.set(0, 0, 0.4);
        let demand = DemandSeries {
            pd_mw: Mat::zeros(2, t),
            qd_mw: Mat::zeros(2, t),
            price_nok_mwh: price.to_vec(),
            dt_h: 0.25,
        };
        MpopfProblem::assemble(&case, &fleet, &demand, limits).unwrap()
    }

    #[test]
    fn objective_zero_when_no_generation() {
        let prob = setup(2, &[100.0, 200.0], NetworkLimits::On);
        let x = vec![0.0; prob.num_vars()];
        let (f, grad) = prob.eval_objective(&x);
        assert_eq!(f, 0.0);
        // gradient vanishes off the p_g slots
        let l = prob.layout;
        for (i, g) in grad.iter().enumerate() {
            let is_pg = (0..2).any(|t| i == l.pg(t, 0));
            if is_pg {
                assert!(*g > 0.0);
            } else {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn objective_price_energy_arithmetic() {
        // price [100, 200] NOK/MWh, 1 MW both periods, dt 0.25 h -> 75 NOK
        let prob = setup(2, &[100.0, 200.0], NetworkLimits::On);
        let l = prob.layout;
        let mut x = vec![0.0; prob.num_vars()];
        x[l.pg(0, 0)] = 1.0; // base 1 MVA: p.u. == MW
        x[l.pg(1, 0)] = 1.0;
        let (f, _) = prob.eval_objective(&x);
        assert!((f - 75.0).abs() < 1e-12);
    }

    #[test]
    fn storage_row_hand_case() {
        // soc 0.4 -> 0.42775 with eff 0.9, 3.7 kW, 0.25 h, 30 kWh
        let prob = setup(2, &[100.0, 100.0], NetworkLimits::On);
        let l = prob.layout;
        let mut x = prob.initial_x();
        x[l.soc(0, 0)] = 0.4;
        x[l.pch(0, 0)] = 0.0; // arrival row: soc(0) = soci = 0.4
        x[l.soc(1, 0)] = 0.42775;
        x[l.pch(1, 0)] = 0.0037;
        x[l.pdch(1, 0)] = 0.0;
        x[l.pdch(0, 0)] = 0.0;
        let (resid, _) = prob.eval_equalities(&x);
        let c = prob.counts();
        let st0 = c.balance + c.linear;
        assert!(resid[st0].abs() < 1e-12, "arrival row: {}", resid[st0]);
        assert!(
            resid[st0 + 1].abs() < 1e-12,
            "coupling row: {}",
            resid[st0 + 1]
        );
    }

    #[test]
    fn idle_fleet_balance_at_flat_point() {
        // no loads, no charging: flat voltages satisfy the balance rows
        let case = NetworkCase::new(
            "t",
            1.0,
            vec![Bus::slack(1), Bus::pq(2)],
            vec![Branch::line(1, 2, 0.01, 0.1)],
            vec![],
        )
        .unwrap();
        let fleet = FleetSpec::idle(0, 0, 2);
        let demand = DemandSeries {
            pd_mw: Mat::zeros(2, 2),
            qd_mw: Mat::zeros(2, 2),
            price_nok_mwh: vec![100.0, 100.0],
            dt_h: 0.25,
        };
        let prob = MpopfProblem::assemble(&case, &fleet, &demand, NetworkLimits::On).unwrap();
        let l = prob.layout;
        let mut x = vec![0.0; prob.num_vars()];
        for t in 0..2 {
            for b in 0..2 {
                x[l.vm(t, b)] = 1.0;
            }
        }
        let (resid, _) = prob.eval_equalities(&x);
        for (k, r) in resid.iter().enumerate() {
            assert!(r.abs() < 1e-10, "row {k}: {r}");
        }
    }

    #[test]
    fn line_rows_boundary_and_interior() {
        let prob = setup(1, &[100.0], NetworkLimits::On);
        let l = prob.layout;
        let mut x = prob.initial_x();
        for b in 0..2 {
            x[l.theta(0, b)] = 0.0;
            x[l.vm(0, b)] = 1.0;
        }
        let (resid, _) = prob.eval_inequalities(&x);
        // flat no-load point: residual = -smax^2 everywhere
        for r in &resid {
            assert!((r + 25.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_period_coupling_only_in_storage_rows() {
        let prob = setup(3, &[100.0, 100.0, 100.0], NetworkLimits::On);
        let x = prob.initial_x();
        let (_, jac) = prob.eval_equalities(&x);
        let c = prob.counts();
        let st0 = c.balance + c.linear;
        let l = prob.layout;
        let period_of_var = |v: usize| v / l.per_period();
        for (row, col, _) in jac.iter() {
            if row < st0 {
                // balance + linear rows touch a single period
                let t_row = if row < c.balance {
                    row / (2 * l.n_b)
                } else {
                    prob.linear_rows[row - c.balance].period
                };
                assert_eq!(period_of_var(col), t_row, "row {row} col {col}");
            } else {
                // storage rows may touch t and t-1 only
                let t_row = (row - st0) / l.n_y.max(1);
                let t_col = period_of_var(col);
                assert!(
                    t_col == t_row || t_col + 1 == t_row,
                    "storage row {row} touches period {t_col}, expected {t_row} or predecessor"
                );
            }
        }
    }
}
