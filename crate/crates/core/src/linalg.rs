//! Small dense solves without per-call allocation.
//!
//! The inner loops of the micro and resolved integrators solve one d-by-d
//! (or (c+d)-by-(c+d)) system per Newton iteration, hundreds of millions of
//! times per run. `nalgebra`'s factorization API clones its input, so these
//! helpers do Gaussian elimination with partial pivoting directly on caller
//! owned buffers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a * x = b` in place: `a` is destroyed, `b` is overwritten with `x`.
pub fn solve_in_place(a: &mut DMatrix<f64>, b: &mut DVector<f64>) -> Result<()> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[(col, col)].abs();
        for row in col + 1..n {
            let v = a[(row, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val < f64::MIN_POSITIVE.sqrt() {
            return Err(Error::Singular("dense solve"));
        }
        if pivot_row != col {
            a.swap_rows(pivot_row, col);
            b.swap_rows(pivot_row, col);
        }
        let inv_pivot = 1.0 / a[(col, col)];
        for row in col + 1..n {
            let factor = a[(row, col)] * inv_pivot;
            if factor != 0.0 {
                for k in col + 1..n {
                    a[(row, k)] -= factor * a[(col, k)];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut x = b[col];
        for k in col + 1..n {
            x -= a[(col, k)] * b[k];
        }
        b[col] = x / a[(col, col)];
    }
    Ok(())
}

/// Solves `a * X = B` with a matrix right-hand side, in place.
pub fn solve_matrix_in_place(a: &mut DMatrix<f64>, b: &mut DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.nrows(), n);
    let rhs = b.ncols();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[(col, col)].abs();
        for row in col + 1..n {
            let v = a[(row, col)].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val < f64::MIN_POSITIVE.sqrt() {
            return Err(Error::Singular("dense multi-rhs solve"));
        }
        if pivot_row != col {
            a.swap_rows(pivot_row, col);
            b.swap_rows(pivot_row, col);
        }
        let inv_pivot = 1.0 / a[(col, col)];
        for row in col + 1..n {
            let factor = a[(row, col)] * inv_pivot;
            if factor != 0.0 {
                for k in col + 1..n {
                    a[(row, k)] -= factor * a[(col, k)];
                }
                for k in 0..rhs {
                    b[(row, k)] -= factor * b[(col, k)];
                }
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..rhs {
            let mut x = b[(col, k)];
            for j in col + 1..n {
                x -= a[(col, j)] * b[(j, k)];
            }
            b[(col, k)] = x / a[(col, col)];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_a_known_system() {
        let mut a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let x_true = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let mut b = &a * &x_true;
        solve_in_place(&mut a, &mut b).unwrap();
        assert_relative_eq!(b, x_true, epsilon = 1e-12);
    }

    #[test]
    fn needs_pivoting() {
        let mut a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let mut b = DVector::from_vec(vec![2.0, 5.0]);
        solve_in_place(&mut a, &mut b).unwrap();
        assert_relative_eq!(b[0], 5.0);
        assert_relative_eq!(b[1], 2.0);
    }

    #[test]
    fn rejects_singular_input() {
        let mut a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let mut b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(solve_in_place(&mut a, &mut b).is_err());
    }

    #[test]
    fn matrix_rhs_matches_columnwise_solves() {
        let a0 = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 2.0]);
        let b0 = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]);
        let mut a = a0.clone();
        let mut b = b0.clone();
        solve_matrix_in_place(&mut a, &mut b).unwrap();
        for k in 0..3 {
            let mut ak = a0.clone();
            let mut col = DVector::from_column_slice(b0.column(k).as_slice());
            solve_in_place(&mut ak, &mut col).unwrap();
            assert_relative_eq!(DVector::from_column_slice(b.column(k).as_slice()), col, epsilon = 1e-13);
        }
    }
}
