//! Dense linear solve used by the power-flow Jacobian step.

/// Solve A x = b in place via LU with partial pivoting. `a` is n×n
/// row-major and is destroyed; `b` is overwritten with the solution.
/// Returns false when a pivot underflows (singular matrix).
pub(crate) fn lu_solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].abs();
        for r in (k + 1)..n {
            let cand = a[r * n + k].abs();
            if cand > best {
                best = cand;
                piv = r;
            }
        }
        if best < 1e-14 {
            return false;
        }
        if piv != k {
            for c in 0..n {
                a.swap(k * n + c, piv * n + c);
            }
            b.swap(k, piv);
        }
        let pivot = a[k * n + k];
        for r in (k + 1)..n {
            let factor = a[r * n + k] / pivot;
            if factor == 0.0 {
                continue;
            }
            a[r * n + k] = 0.0;
            for c in (k + 1)..n {
                a[r * n + c] -= factor * a[k * n + c];
            }
            b[r] -= factor * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut acc = b[k];
        for c in (k + 1)..n {
            acc -= a[k * n + c] * b[c];
        }
        b[k] = acc / a[k * n + k];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [[2,1],[1,3]] x = [3,5] -> x = [0.8, 1.4]
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![3.0, 5.0];
        assert!(lu_solve_in_place(&mut a, &mut b, 2));
        assert!((b[0] - 0.8).abs() < 1e-12);
        assert!((b[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn flags_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(!lu_solve_in_place(&mut a, &mut b, 2));
    }
}
