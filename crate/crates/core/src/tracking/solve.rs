//! Weighted least-squares recovery of per-AP phases from edge offsets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Per-AP phases with zero sum, and the basis used to compute them.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSolution {
    pub phi_hat: DVector<f64>,
    /// `L x (L-1)` eigenvectors of `B^T P^-1 B` orthogonal to the all-one vector.
    pub basis: DMatrix<f64>,
}

/// Condition number above which `P` is regularized before inversion.
pub const MAX_CONDITION: f64 = 1e12;

/// Flips `v` so its first entry of non-negligible magnitude is positive.
fn fix_sign(mut v: DVector<f64>) -> DVector<f64> {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            v.neg_mut();
        }
    }
    v
}

fn inverse_of_covariance(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = p.nrows();
    let mut p = (p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(p.clone());
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if hi.is_nan() || hi <= 0.0 {
        return Err(Error::Unsolvable("covariance is not positive".into()));
    }
    if lo <= 0.0 || hi / lo > MAX_CONDITION {
        log::warn!("ill-conditioned offset covariance (eigenvalues {lo:e}..{hi:e}); adding jitter");
        let jitter = 1e-12 * p.trace() / m as f64;
        for i in 0..m {
            p[(i, i)] += jitter;
        }
    }
    if let Some(ch) = p.clone().cholesky() {
        return Ok(ch.inverse());
    }
    p.try_inverse()
        .ok_or_else(|| Error::Unsolvable("covariance is singular".into()))
}

/// `phi = Z (Z^T B^T P^-1 B Z)^-1 Z^T B^T P^-1 alpha`.
///
/// `Z` holds the eigenvectors of `B^T P^-1 B` except the all-one direction,
/// in ascending eigenvalue order. The result sums to zero.
pub fn solve_phases(
    alpha_hat: &DVector<f64>,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<PhaseSolution> {
    let l = b.ncols();
    if l < 2 {
        return Err(Error::Unsolvable("need at least two APs".into()));
    }
    let laplacian = b.transpose() * b;
    let lap_eig = SymmetricEigen::new(laplacian);
    let mut lap_vals: Vec<f64> = lap_eig.eigenvalues.iter().copied().collect();
    lap_vals.sort_by(f64::total_cmp);
    if lap_vals[1] <= 1e-9 {
        return Err(Error::Unsolvable("graph is not connected".into()));
    }
    let p_inv = inverse_of_covariance(p)?;
    let bt_pinv = b.transpose() * &p_inv;
    let w = &bt_pinv * b;
    let w = (&w + w.transpose()) * 0.5;
    let eig = SymmetricEigen::new(w.clone());
    let ones = DVector::from_element(l, 1.0 / (l as f64).sqrt());
    let null = (0..l)
        .max_by(|&a, &c| {
            eig.eigenvectors
                .column(a)
                .dot(&ones)
                .abs()
                .total_cmp(&eig.eigenvectors.column(c).dot(&ones).abs())
        })
        .unwrap();
    let mut order: Vec<usize> = (0..l).filter(|&i| i != null).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[a]
            .total_cmp(&eig.eigenvalues[c])
            .then(a.cmp(&c))
    });
    let cols: Vec<DVector<f64>> = order
        .iter()
        .map(|&i| {
            let v = eig.eigenvectors.column(i).into_owned();
            let v = &v - &ones * ones.dot(&v);
            let n = v.norm();
            fix_sign(v / n)
        })
        .collect();
    let z = DMatrix::from_columns(&cols);
    let reduced = z.transpose() * &w * &z;
    let reduced_inv = reduced
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| reduced.try_inverse())
        .ok_or_else(|| Error::Unsolvable("reduced normal matrix is singular".into()))?;
    let mut phi = &z * (reduced_inv * (z.transpose() * (bt_pinv * alpha_hat)));
    let mean = phi.mean();
    phi.add_scalar_mut(-mean);
    Ok(PhaseSolution {
        phi_hat: phi,
        basis: z,
    })
}

/// `Z (Z^T B^T P^-1 B Z)^-1 Z^T`, the error covariance of the solution.
pub fn solution_covariance(
    sol: &PhaseSolution,
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p_inv = inverse_of_covariance(p)?;
    let z = &sol.basis;
    let reduced = z.transpose() * b.transpose() * p_inv * b * z;
    let inv = reduced
        .try_inverse()
        .ok_or_else(|| Error::Unsolvable("reduced normal matrix is singular".into()))?;
    Ok(z * inv * z.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_ap_closed_form() {
        let b = DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]);
        for p in [0.1, 1.0, 7.5] {
            let s = solve_phases(
                &DVector::from_element(1, 0.8),
                &DMatrix::from_element(1, 1, p),
                &b,
            )
            .unwrap();
            assert!((s.phi_hat[0] + 0.4).abs() < 1e-15);
            assert!((s.phi_hat[1] - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_offsets_give_zero() {
        let b = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0, 1.0]);
        let s = solve_phases(&DVector::zeros(3), &DMatrix::identity(3, 3), &b).unwrap();
        assert!(s.phi_hat.amax() < 1e-15);
        assert_eq!(s.basis.shape(), (3, 2));
        assert!((s.basis.transpose() * DVector::from_element(3, 1.0)).amax() < 1e-12);
    }

    #[test]
    fn disconnected_is_unsolvable() {
        // Edges (0,1) and (2,3) only.
        let b = DMatrix::from_row_slice(2, 4, &[-1.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 1.0]);
        let r = solve_phases(&DVector::zeros(2), &DMatrix::identity(2, 2), &b);
        assert!(matches!(r, Err(Error::Unsolvable(_))));
    }

    #[test]
    fn consistent_offsets_are_recovered() {
        let phi = DVector::from_vec(vec![0.3, -0.1, 0.5, -0.7]);
        let b = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, -1.0, 0.0, 0.0, 1.0,
            ],
        );
        let alpha = &b * &phi;
        let p = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5, 3.0]));
        let s = solve_phases(&alpha, &p, &b).unwrap();
        assert!((s.phi_hat - phi).amax() < 1e-12);
    }
}
