//! Small dense kernels: Gauss-Jordan inversion and a pivoted Cholesky used
//! as a positive-semidefiniteness test.

/// Inverts the square matrix `a` (rows) in place of a copy, with partial
/// pivoting. Returns `None` if a pivot falls below `tol` times the largest
/// entry.
pub(crate) fn invert(a: &[Vec<f64>], tol: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut w: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            r
        })
        .collect();
    for col in 0..n {
        let (piv, pv) = (col..n)
            .map(|r| (r, w[r][col].abs()))
            .fold(
                (col, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pv <= tol * scale {
            return None;
        }
        w.swap(col, piv);
        inv.swap(col, piv);
        let d = 1.0 / w[col][col];
        for v in w[col].iter_mut() {
            *v *= d;
        }
        for v in inv[col].iter_mut() {
            *v *= d;
        }
        let (wp, ip) = (w[col].clone(), inv[col].clone());
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = w[r][col];
            if f != 0.0 {
                for (x, y) in w[r].iter_mut().zip(&wp) {
                    *x -= f * y;
                }
                for (x, y) in inv[r].iter_mut().zip(&ip) {
                    *x -= f * y;
                }
            }
        }
    }
    Some(inv)
}

/// Positive-semidefiniteness test on the dense symmetric `n×n` matrix `q`
/// (row-major) by Cholesky with diagonal pivoting. Rows and columns that are
/// identically zero are skipped. Returns the most negative pivot or
/// residual entry found, or `None` when the matrix is PSD within `tol`.
pub(crate) fn psd_violation(q: &[f64], n: usize, tol: f64) -> Option<f64> {
    let support: Vec<usize> = (0..n)
        .filter(|&i| q[i * n..(i + 1) * n].iter().any(|&v| v != 0.0))
        .collect();
    let m = support.len();
    if m == 0 {
        return None;
    }
    // Schur complement, lower triangle stored densely.
    let mut s: Vec<f64> = Vec::with_capacity(m * m);
    for &i in &support {
        for &j in &support {
            s.push(q[i * n + j]);
        }
    }
    let mut perm: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let (jp, dmax) = (k..m)
            .map(|j| (j, s[perm[j] * m + perm[j]]))
            .fold((k, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        if dmax <= tol {
            // Remaining block must be numerically zero.
            let mut worst = 0.0f64;
            for a in k..m {
                let d = s[perm[a] * m + perm[a]];
                if d < -tol {
                    worst = worst.min(d);
                }
                for b in (a + 1)..m {
                    let v = s[perm[a] * m + perm[b]];
                    let bound = tol.max((d.max(0.0) * s[perm[b] * m + perm[b]].max(0.0)).sqrt());
                    if v.abs() > bound + tol {
                        worst = worst.min(-v.abs());
                    }
                }
            }
            return if worst < 0.0 { Some(worst) } else { None };
        }
        perm.swap(k, jp);
        let p = perm[k];
        let l = dmax.sqrt();
        let col: Vec<f64> = (k + 1..m).map(|a| s[perm[a] * m + p] / l).collect();
        for (ai, a) in (k + 1..m).enumerate() {
            let ra = perm[a];
            let ca = col[ai];
            if ca == 0.0 {
                continue;
            }
            for (bi, b) in (k + 1..m).enumerate() {
                s[ra * m + perm[b]] -= ca * col[bi];
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_kkt_block() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 0.0]];
        let inv = invert(&a, 1e-14).unwrap();
        assert!((inv[0][0] - 0.0).abs() < 1e-15);
        assert!((inv[0][1] - 1.0).abs() < 1e-15);
        assert!((inv[1][1] + 2.0).abs() < 1e-15);
        assert!(invert(&[vec![1.0, 2.0], vec![2.0, 4.0]], 1e-12).is_none());
    }

    #[test]
    fn psd_detection() {
        // Centering matrix: PSD with rank n-1.
        let n = 4;
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                q[i * n + j] = if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
            }
        }
        assert_eq!(psd_violation(&q, n, 1e-10), None);
        let indef = [1.0, 2.0, 2.0, 1.0];
        assert!(psd_violation(&indef, 2, 1e-10).is_some());
        let off_only = [0.0, 1.0, 1.0, 0.0];
        assert!(psd_violation(&off_only, 2, 1e-10).is_some());
        assert_eq!(psd_violation(&[0.0; 9], 3, 1e-10), None);
    }
}
