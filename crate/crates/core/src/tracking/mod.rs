//! Tracking of inter-AP phase offsets: noise covariances, the generalized
//! Kalman filter, phase unwrapping and the least-squares phase solve.

pub mod covariance;
pub mod kalman;
pub mod solve;

use std::f64::consts::PI;

pub use covariance::{
    exact_sigma_xi, exact_sigma_zeta_xi, shared_sign, sigma_mu, sigma_xi, sigma_zeta,
    sigma_zeta_xi, NoiseCovariances,
};
pub use kalman::{
    kalman_update, kalman_update_two_ap, scalar_steady_state, FilterTrace, KalmanState,
    ScalarKalman, TraceRow, UpdateInfo,
};
pub use solve::{solution_covariance, solve_phases, PhaseSolution};

/// Shifts `new` by a multiple of 2 pi so it lies within pi of `prev`.
///
/// The result is in `[prev - pi, prev + pi)`: at a distance of exactly pi the
/// smaller multiple wins.
pub fn unwrap_step(prev: f64, new: f64) -> f64 {
    let k = (((prev - new) - PI) / (2.0 * PI)).ceil();
    new + 2.0 * PI * k
}
