//! Small dense linear solves for the fitting routines. The systems here
//! are normal equations with at most a few dozen unknowns, so plain
//! Gaussian elimination with partial pivoting is enough.

use crate::num::Real;

/// Solves `a x = b`. `Err(c)` reports the first column `c` without a
/// usable pivot; for normal equations that names a redundant regressor.
pub(crate) fn solve<R: Real>(mut a: Vec<Vec<R>>, mut b: Vec<R>) -> Result<Vec<R>, usize> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|r| r.len() == n));
    let mut scale = R::zero();
    for row in &a {
        for &v in row {
            scale = scale.max(v.abs());
        }
    }
    let tol = scale.max(R::one()) * R::of(1e-12);

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot = a[col][col].abs();
        for r in col + 1..n {
            let v = a[r][col].abs();
            if v > pivot {
                pivot = v;
                pivot_row = r;
            }
        }
        if pivot <= tol {
            return Err(col);
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == R::zero() {
                continue;
            }
            for c in col..n {
                let v = a[col][c];
                a[r][c] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }

    let mut x = vec![R::zero(); n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for c in col + 1..n {
            s -= a[col][c] * x[c];
        }
        x[col] = s / a[col][col];
    }
    Ok(x)
}
