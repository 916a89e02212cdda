//! Kalman filters with correlated process and observation noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::timing::wrap;

use super::covariance::NoiseCovariances;

/// Scalar two-AP filter state. `p` is the error variance before the next
/// update (the prior of the following step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarKalman {
    pub alpha_hat: f64,
    pub p: f64,
    pub n: usize,
}

/// One step of the two-AP recursion:
///
/// `kappa = (P + s_xi) / (P + 3 s_xi + m)`,
/// `alpha += kappa wrap(alpha_bar - alpha)`,
/// `P <- P - kappa (P + s_xi) + s_zeta`.
pub fn kalman_update_two_ap(
    state: ScalarKalman,
    alpha_bar: f64,
    sigma_zeta_sq: f64,
    sigma_xi_sq: f64,
    meas_var: f64,
) -> ScalarKalman {
    let kappa = (state.p + sigma_xi_sq) / (state.p + 3.0 * sigma_xi_sq + meas_var);
    ScalarKalman {
        alpha_hat: state.alpha_hat + kappa * wrap(alpha_bar - state.alpha_hat),
        p: state.p - kappa * (state.p + sigma_xi_sq) + sigma_zeta_sq,
        n: state.n + 1,
    }
}

/// Fixed point of the scalar variance recursion for `(s_zeta, s_xi, m)`.
pub fn scalar_steady_state(sigma_zeta_sq: f64, sigma_xi_sq: f64, meas_var: f64) -> f64 {
    let (z, a, m) = (sigma_zeta_sq, sigma_xi_sq, meas_var);
    let b = 2.0 * a - z;
    let c = a * a - 3.0 * a * z - z * m;
    (-b + (b * b - 4.0 * c).sqrt()) / 2.0
}

/// Edge-offset estimate and posterior covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub alpha_hat: DVector<f64>,
    pub p_post: DMatrix<f64>,
    pub n: usize,
}

/// Diagnostics of one matrix update.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateInfo {
    /// Wrapped innovations of the measured edges.
    pub innovation: DVector<f64>,
}

/// One generalized Kalman step.
///
/// `P- = P+ + S_zeta`,
/// `K = (P- A^T + S_zx)(A P- A^T + A S_zx + S_zx^T A^T + S_xi + S_mu)^-1`,
/// `alpha += K wrap(alpha_bar - A alpha)`, `P+ = P- - K (A P- + S_zx^T)`.
/// With no measured edge only the prediction is applied.
pub fn kalman_update(
    state: &KalmanState,
    alpha_bar: &DVector<f64>,
    a: &DMatrix<f64>,
    cov: &NoiseCovariances,
) -> Result<(KalmanState, UpdateInfo)> {
    let p_prior = &state.p_post + &cov.sigma_zeta;
    if a.nrows() == 0 {
        return Ok((
            KalmanState {
                alpha_hat: state.alpha_hat.clone(),
                p_post: p_prior,
                n: state.n + 1,
            },
            UpdateInfo {
                innovation: DVector::zeros(0),
            },
        ));
    }
    let szx = &cov.sigma_zeta_xi;
    let a_szx = a * szx;
    let s =
        a * &p_prior * a.transpose() + &a_szx + a_szx.transpose() + &cov.sigma_xi + &cov.sigma_mu;
    let s_inv = invert(&s)?;
    let gain = (&p_prior * a.transpose() + szx) * s_inv;
    let innovation = (alpha_bar - a * &state.alpha_hat).map(wrap);
    let alpha_hat = &state.alpha_hat + &gain * &innovation;
    let p = &p_prior - &gain * (a * &p_prior + szx.transpose());
    let p_post = (&p + p.transpose()) * 0.5;
    Ok((
        KalmanState {
            alpha_hat,
            p_post,
            n: state.n + 1,
        },
        UpdateInfo { innovation },
    ))
}

fn invert(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::FilterSingular);
    }
    let scale = s.amax();
    let lu = s.clone().lu();
    let u = lu.u();
    if scale == 0.0 || (0..u.nrows()).any(|i| u[(i, i)].abs() <= 1e-14 * scale) {
        return Err(Error::FilterSingular);
    }
    lu.try_inverse().ok_or(Error::FilterSingular)
}

/// Per-update filter history for debugging.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterTrace {
    pub rows: Vec<TraceRow>,
}

/// One edge at one update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub update: usize,
    /// Global sample index of the update.
    pub sample: u64,
    pub edge: usize,
    pub alpha_hat: f64,
    pub p_diag: f64,
    /// Wrapped innovation; NaN when the edge was not measured.
    pub innovation: f64,
}

impl FilterTrace {
    /// Appends one row per edge for the given state.
    pub fn record(
        &mut self,
        sample: u64,
        state: &KalmanState,
        measured: &[usize],
        info: &UpdateInfo,
    ) {
        for e in 0..state.alpha_hat.len() {
            let innovation = measured
                .iter()
                .position(|&m| m == e)
                .map_or(f64::NAN, |r| info.innovation[r]);
            self.rows.push(TraceRow {
                update: state.n,
                sample,
                edge: e,
                alpha_hat: state.alpha_hat[e],
                p_diag: state.p_post[(e, e)],
                innovation,
            });
        }
    }

    /// CSV with header `update,sample,edge,alpha_hat,p_diag,innovation`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "update",
            "sample",
            "edge",
            "alpha_hat",
            "p_diag",
            "innovation",
        ])?;
        for r in &self.rows {
            w.write_record(&[
                r.update.to_string(),
                r.sample.to_string(),
                r.edge.to_string(),
                r.alpha_hat.to_string(),
                r.p_diag.to_string(),
                if r.innovation.is_nan() {
                    String::new()
                } else {
                    r.innovation.to_string()
                },
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov1(z: f64, x: f64, c: f64, m: f64) -> NoiseCovariances {
        NoiseCovariances {
            sigma_zeta: DMatrix::from_element(1, 1, z),
            sigma_xi: DMatrix::from_element(1, 1, x),
            sigma_zeta_xi: DMatrix::from_element(1, 1, c),
            sigma_mu: DMatrix::from_element(1, 1, m),
        }
    }

    #[test]
    fn perfect_measurement() {
        let s = ScalarKalman {
            alpha_hat: 0.1,
            p: 0.5,
            n: 0,
        };
        let s = kalman_update_two_ap(s, 0.7, 0.0, 0.0, 0.0);
        assert!((s.alpha_hat - 0.7).abs() < 1e-15);
        let st = KalmanState {
            alpha_hat: DVector::from_vec(vec![0.0, 1.0]),
            p_post: DMatrix::identity(2, 2),
            n: 0,
        };
        let zero = NoiseCovariances {
            sigma_zeta: DMatrix::zeros(2, 2),
            sigma_xi: DMatrix::zeros(2, 2),
            sigma_zeta_xi: DMatrix::zeros(2, 2),
            sigma_mu: DMatrix::zeros(2, 2),
        };
        let bar = DVector::from_vec(vec![0.3, -0.2]);
        let (out, _) = kalman_update(&st, &bar, &DMatrix::identity(2, 2), &zero).unwrap();
        assert!((out.alpha_hat - bar).amax() < 1e-15);
    }

    #[test]
    fn infinite_measurement_noise() {
        let s = ScalarKalman {
            alpha_hat: 0.1,
            p: 0.5,
            n: 0,
        };
        let s2 = kalman_update_two_ap(s, 2.0, 0.25, 0.0, 1e300);
        assert!((s2.alpha_hat - 0.1).abs() < 1e-12);
        assert!((s2.p - 0.75).abs() < 1e-12);
    }

    #[test]
    fn riccati_fixed_point() {
        let (z, a, m) = (4e-4, 1e-4, 2e-4);
        let mut s = ScalarKalman {
            alpha_hat: 0.0,
            p: 1.0,
            n: 0,
        };
        for _ in 0..1000 {
            s = kalman_update_two_ap(s, 0.0, z, a, m);
        }
        assert!((s.p - scalar_steady_state(z, a, m)).abs() < 1e-10);
    }

    #[test]
    fn empty_selection_only_predicts() {
        let st = KalmanState {
            alpha_hat: DVector::from_element(1, 0.4),
            p_post: DMatrix::from_element(1, 1, 1.0),
            n: 3,
        };
        let (out, _) = kalman_update(
            &st,
            &DVector::zeros(0),
            &DMatrix::zeros(0, 1),
            &NoiseCovariances {
                sigma_zeta: DMatrix::from_element(1, 1, 0.5),
                sigma_xi: DMatrix::zeros(0, 0),
                sigma_zeta_xi: DMatrix::zeros(1, 0),
                sigma_mu: DMatrix::zeros(0, 0),
            },
        )
        .unwrap();
        assert_eq!(out.alpha_hat[0], 0.4);
        assert_eq!(out.p_post[(0, 0)], 1.5);
        assert_eq!(out.n, 4);
    }

    #[test]
    fn singular_innovation() {
        let st = KalmanState {
            alpha_hat: DVector::zeros(1),
            p_post: DMatrix::zeros(1, 1),
            n: 0,
        };
        let r = kalman_update(
            &st,
            &DVector::zeros(1),
            &DMatrix::identity(1, 1),
            &cov1(0.0, 0.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::FilterSingular)));
    }

    #[test]
    fn trace_csv() {
        let st = KalmanState {
            alpha_hat: DVector::from_vec(vec![0.5, 0.25]),
            p_post: DMatrix::identity(2, 2),
            n: 1,
        };
        let mut t = FilterTrace::default();
        t.record(
            97,
            &st,
            &[1],
            &UpdateInfo {
                innovation: DVector::from_element(1, 0.125),
            },
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "update,sample,edge,alpha_hat,p_diag,innovation\n1,97,0,0.5,1,\n1,97,1,0.25,1,0.125\n"
        );
    }
}
