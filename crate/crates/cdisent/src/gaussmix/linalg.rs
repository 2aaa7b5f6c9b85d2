//! Tiny dense solvers for covariance blocks (D <= 8 in practice).

/// Pivot magnitude below which a block counts as singular.
const PIVOT_TOL: f64 = 1e-10;

/// Solve `A X = B` for row-major `A` (n x n) and `B` (n x k) by Gaussian
/// elimination with partial pivoting. Returns `None` when a pivot falls
/// below the singularity tolerance.
pub fn solve(a: &[f64], b: &[f64], n: usize, k: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r * n + col].abs() > m[piv * n + col].abs() {
                piv = r;
            }
        }
        if m[piv * n + col].abs() < PIVOT_TOL {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            for j in 0..k {
                x.swap(col * k + j, piv * k + j);
            }
        }
        let d = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            for j in 0..k {
                x[r * k + j] -= f * x[col * k + j];
            }
        }
    }
    for col in (0..n).rev() {
        let d = m[col * n + col];
        for j in 0..k {
            let mut acc = x[col * k + j];
            for c in col + 1..n {
                acc -= m[col * n + c] * x[c * k + j];
            }
            x[col * k + j] = acc / d;
        }
    }
    Some(x)
}

/// Lower-triangular Cholesky factor of a row-major symmetric matrix, or
/// `None` if it is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a[i * n + j];
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if acc <= 0.0 {
                    return None;
                }
                l[i * n + i] = acc.sqrt();
            } else {
                l[i * n + j] = acc / l[j * n + j];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [[2, 1], [1, 3]] x = [5, 10] -> x = [1, 3]
        let x = solve(&[2.0, 1.0, 1.0, 3.0], &[5.0, 10.0], 2, 1).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_returns_none() {
        assert!(solve(&[1.0, 2.0, 2.0, 4.0], &[1.0, 2.0], 2, 1).is_none());
    }

    #[test]
    fn cholesky_of_identity() {
        let l = cholesky(&[1.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(l, vec![1.0, 0.0, 0.0, 1.0]);
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
