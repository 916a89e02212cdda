//! Process, observation-drift and cross covariances of the edge-offset filter.
//!
//! All timestamps are global 1-based sample indices. `i` is the update
//! instant (the `i2` sample of the current measurement slot) and `i_ref` is
//! `[i]_{floor(K/2)}`, the reference pilot of that slot.

use nalgebra::DMatrix;

use crate::schedule::EdgeTimes;
use crate::timing::SlotTiming;

/// Correlation sign of two edges.
///
/// Returns `+1` when they share an AP that is the first endpoint of both or
/// the second endpoint of both, `-1` when the shared AP has different roles,
/// and `0` when they share nothing. Identical edges give `+1`.
pub fn shared_sign(a: (usize, usize), b: (usize, usize)) -> f64 {
    if a == b {
        return 1.0;
    }
    if a.0 == b.0 || a.1 == b.1 {
        1.0
    } else if a.0 == b.1 || a.1 == b.0 {
        -1.0
    } else {
        0.0
    }
}

/// Process covariance over all edges for a gap of `d` slots.
///
/// Diagonal `2[4 d tau_c - 2(i2 - floor(K/2))] sigma^2`; edges sharing an AP
/// get half of that with the sign from [`shared_sign`].
pub fn sigma_zeta(
    edges: &[(usize, usize)],
    d: usize,
    timing: &SlotTiming,
    sigma_nu_sq: f64,
) -> DMatrix<f64> {
    let base = 4.0 * d as f64 * timing.tau_c as f64
        - 2.0 * (timing.i2() as f64 - timing.mid_pilot() as f64);
    let m = edges.len();
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            2.0 * base * sigma_nu_sq
        } else {
            shared_sign(edges[a], edges[b]) * base * sigma_nu_sq
        }
    })
}

/// Observation-drift covariance over the measured edges.
pub fn sigma_xi(
    edges: &[(usize, usize)],
    times: &[EdgeTimes],
    i: u64,
    i_ref: u64,
    sigma_nu_sq: f64,
) -> DMatrix<f64> {
    let n = edges.len();
    let (i, i_ref) = (i as f64, i_ref as f64);
    DMatrix::from_fn(n, n, |a, b| {
        let (ta, tb) = (times[a], times[b]);
        if a == b {
            let (lo, hi) = (ta.i_minus() as f64, ta.i_plus() as f64);
            return 2.0 * ((i - hi) + (i_ref - lo).abs()) * sigma_nu_sq;
        }
        let s = shared_sign(edges[a], edges[b]);
        if s == 0.0 {
            return 0.0;
        }
        // Label so that `first` has the later i+.
        let (first, second) = if ta.i_plus() >= tb.i_plus() {
            (ta, tb)
        } else {
            (tb, ta)
        };
        let late_minus = first.i_minus().max(second.i_minus()) as f64;
        s * ((i - first.i_plus() as f64) + (i_ref - late_minus).max(0.0)) * sigma_nu_sq
    })
}

/// Diagonal term of the process/observation cross covariance for an edge
/// measured at `(i_minus, i_plus)`.
pub fn sigma_zeta_xi_diag(i_minus: u64, i_plus: u64, i: u64, i_ref: u64, sigma_nu_sq: f64) -> f64 {
    let (lo, hi, i, r) = (i_minus as f64, i_plus as f64, i as f64, i_ref as f64);
    -2.0 * ((i - hi.max(r)) + 2.0 * (hi.min(r) - lo).max(0.0) - (lo - r).max(0.0)
        + 4.0 * (r - hi).max(0.0))
        * sigma_nu_sq
}

/// Cross covariance `E[zeta xi^T]`: rows over all edges, columns over measured edges.
pub fn sigma_zeta_xi(
    all_edges: &[(usize, usize)],
    measured: &[usize],
    times: &[EdgeTimes],
    i: u64,
    i_ref: u64,
    sigma_nu_sq: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(all_edges.len(), measured.len(), |row, col| {
        let t = times[col];
        let v = sigma_zeta_xi_diag(t.i_minus(), t.i_plus(), i, i_ref, sigma_nu_sq);
        if row == measured[col] {
            v
        } else {
            shared_sign(all_edges[row], all_edges[measured[col]]) * v / 2.0
        }
    })
}

/// Diagonal measurement-error covariance from per-edge variance sums.
pub fn sigma_mu(variances: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(variances))
}

/// Covariance of two Wiener increments `nu(b) - nu(a)` and `nu(d) - nu(c)`
/// per unit variance: the signed length of the overlap.
fn increment_cov(a: f64, b: f64, c: f64, d: f64) -> f64 {
    let (lo1, hi1, s1) = if b >= a { (a, b, 1.0) } else { (b, a, -1.0) };
    let (lo2, hi2, s2) = if d >= c { (c, d, 1.0) } else { (d, c, -1.0) };
    s1 * s2 * (hi1.min(hi2) - lo1.max(lo2)).max(0.0)
}

type Increments = [(f64, f64, f64); 2];

/// One AP's share of an edge's observation drift, as signed increments.
fn xi_terms(t: EdgeTimes, i: f64, r: f64) -> Increments {
    [(-1.0, t.i_plus() as f64, i), (-1.0, t.i_minus() as f64, r)]
}

/// One AP's process drift since the previous update.
fn zeta_terms(i: f64, r: f64, span: f64) -> Increments {
    [(1.0, i - span, i), (1.0, r - span, r)]
}

fn terms_cov(x: &Increments, y: &Increments) -> f64 {
    let mut v = 0.0;
    for &(sx, a, b) in x {
        for &(sy, c, d) in y {
            v += sx * sy * increment_cov(a, b, c, d);
        }
    }
    v
}

/// Observation-drift covariance from exact interval overlaps. Agrees with
/// [`sigma_xi`] when both directions are fresh and stays consistent with the
/// process noise when one is stale.
pub fn exact_sigma_xi(
    edges: &[(usize, usize)],
    times: &[EdgeTimes],
    i: u64,
    i_ref: u64,
    sigma_nu_sq: f64,
) -> DMatrix<f64> {
    let (i, r) = (i as f64, i_ref as f64);
    let terms: Vec<_> = times.iter().map(|&t| xi_terms(t, i, r)).collect();
    DMatrix::from_fn(edges.len(), edges.len(), |a, b| {
        let s = if a == b {
            2.0
        } else {
            shared_sign(edges[a], edges[b])
        };
        s * terms_cov(&terms[a], &terms[b]) * sigma_nu_sq
    })
}

/// Process/observation cross covariance from exact interval overlaps.
/// `d` counts slots since the previous update.
#[allow(clippy::too_many_arguments)]
pub fn exact_sigma_zeta_xi(
    all_edges: &[(usize, usize)],
    measured: &[usize],
    times: &[EdgeTimes],
    i: u64,
    i_ref: u64,
    d: usize,
    timing: &SlotTiming,
    sigma_nu_sq: f64,
) -> DMatrix<f64> {
    let (i, r) = (i as f64, i_ref as f64);
    let z = zeta_terms(i, r, (d as u64 * timing.tau_c) as f64);
    let per_ap: Vec<f64> = times
        .iter()
        .map(|&t| terms_cov(&z, &xi_terms(t, i, r)))
        .collect();
    DMatrix::from_fn(all_edges.len(), measured.len(), |row, col| {
        let s = if row == measured[col] {
            2.0
        } else {
            shared_sign(all_edges[row], all_edges[measured[col]])
        };
        s * per_ap[col] * sigma_nu_sq
    })
}

/// The four noise matrices of one filter update.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariances {
    /// `M x M`.
    pub sigma_zeta: DMatrix<f64>,
    /// `M_n x M_n`.
    pub sigma_xi: DMatrix<f64>,
    /// `M x M_n`.
    pub sigma_zeta_xi: DMatrix<f64>,
    /// `M_n x M_n`, diagonal.
    pub sigma_mu: DMatrix<f64>,
}

impl NoiseCovariances {
    /// Assembles all four matrices for one measurement slot.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        all_edges: &[(usize, usize)],
        measured: &[usize],
        times: &[EdgeTimes],
        mu_variances: &[f64],
        d: usize,
        i: u64,
        i_ref: u64,
        timing: &SlotTiming,
        sigma_nu_sq: f64,
    ) -> Self {
        let measured_edges: Vec<(usize, usize)> = measured.iter().map(|&e| all_edges[e]).collect();
        Self {
            sigma_zeta: sigma_zeta(all_edges, d, timing, sigma_nu_sq),
            sigma_xi: sigma_xi(&measured_edges, times, i, i_ref, sigma_nu_sq),
            sigma_zeta_xi: sigma_zeta_xi(all_edges, measured, times, i, i_ref, sigma_nu_sq),
            sigma_mu: sigma_mu(mu_variances),
        }
    }

    /// As [`NoiseCovariances::assemble`] with the exact-overlap drift terms.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble_exact(
        all_edges: &[(usize, usize)],
        measured: &[usize],
        times: &[EdgeTimes],
        mu_variances: &[f64],
        d: usize,
        i: u64,
        i_ref: u64,
        timing: &SlotTiming,
        sigma_nu_sq: f64,
    ) -> Self {
        let measured_edges: Vec<(usize, usize)> = measured.iter().map(|&e| all_edges[e]).collect();
        Self {
            sigma_zeta: sigma_zeta(all_edges, d, timing, sigma_nu_sq),
            sigma_xi: exact_sigma_xi(&measured_edges, times, i, i_ref, sigma_nu_sq),
            sigma_zeta_xi: exact_sigma_zeta_xi(
                all_edges,
                measured,
                times,
                i,
                i_ref,
                d,
                timing,
                sigma_nu_sq,
            ),
            sigma_mu: sigma_mu(mu_variances),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;

    fn timing() -> SlotTiming {
        SlotTiming::from_config(&SystemConfig::default())
    }

    #[test]
    fn two_ap_zeta_and_xi() {
        let s2 = 1.0;
        let z = sigma_zeta(&[(0, 1)], 1, &timing(), s2);
        assert_eq!(z[(0, 0)], 432.0);
        let t = EdgeTimes {
            t_fwd: 97,
            t_bwd: 52,
        };
        let x = sigma_xi(&[(0, 1)], &[t], 97, 5, s2);
        assert_eq!(x[(0, 0)], 94.0);
        // Cross term equals the xi variance in the two-AP layout.
        assert_eq!(sigma_zeta_xi_diag(52, 97, 97, 5, s2), 94.0);
    }

    #[test]
    fn sign_rules() {
        assert_eq!(shared_sign((0, 1), (2, 3)), 0.0);
        assert_eq!(shared_sign((0, 1), (0, 2)), 1.0);
        assert_eq!(shared_sign((0, 2), (1, 2)), 1.0);
        assert_eq!(shared_sign((0, 1), (1, 2)), -1.0);
        let z = sigma_zeta(&[(0, 1), (0, 2), (2, 3)], 1, &timing(), 1.0);
        assert_eq!(z[(0, 1)], 400.0 - 184.0);
        assert_eq!(z[(0, 2)], 0.0);
        assert_eq!(z[(1, 2)], -(400.0 - 184.0));
    }

    #[test]
    fn zero_offsets_and_zero_noise() {
        let t = EdgeTimes {
            t_fwd: 97,
            t_bwd: 5,
        };
        assert_eq!(sigma_xi(&[(0, 1)], &[t], 97, 5, 1.0)[(0, 0)], 0.0);
        let m = sigma_zeta_xi(&[(0, 1), (1, 2)], &[0], &[t], 97, 5, 0.0);
        assert!(m.iter().all(|&v| v == 0.0));
        // i+ = i and i- = [i]: -2[(0) + 2*0 - 0 + 0] = 0.
        assert_eq!(sigma_zeta_xi_diag(5, 97, 97, 5, 1.0), 0.0);
    }

    #[test]
    fn disjoint_pairs_vanish() {
        let times = [
            EdgeTimes {
                t_fwd: 97,
                t_bwd: 52,
            },
            EdgeTimes {
                t_fwd: 52,
                t_bwd: 97,
            },
        ];
        let x = sigma_xi(&[(0, 1), (2, 3)], &times, 97, 5, 1.0);
        assert_eq!(x[(0, 1)], 0.0);
        let c = sigma_zeta_xi(&[(0, 1), (2, 3)], &[0, 1], &times, 97, 5, 1.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(c[(1, 0)], 0.0);
    }

    #[test]
    fn off_diagonal_labeling_is_symmetric() {
        let times = [
            EdgeTimes {
                t_fwd: 97,
                t_bwd: 52,
            },
            EdgeTimes {
                t_fwd: 52,
                t_bwd: 40,
            },
        ];
        let x = sigma_xi(&[(0, 1), (1, 2)], &times, 97, 5, 1.0);
        assert_eq!(x[(0, 1)], x[(1, 0)]);
        // a = first edge (later i+): -( (97-97) + max(0, 5 - 52) ) = 0.
        assert_eq!(x[(0, 1)], 0.0);
    }

    #[test]
    fn exact_matches_printed_for_two_aps() {
        let t = EdgeTimes {
            t_fwd: 97,
            t_bwd: 52,
        };
        let x = exact_sigma_xi(&[(0, 1)], &[t], 97, 5, 1.0);
        assert_eq!(x[(0, 0)], 94.0);
        let c = exact_sigma_zeta_xi(&[(0, 1)], &[0], &[t], 97, 5, 1, &timing(), 1.0);
        assert_eq!(c[(0, 0)], 94.0);
    }

    #[test]
    fn stale_direction_keeps_joint_covariance_psd() {
        // Fresh direction at i1, the reverse one a slot earlier.
        let t = EdgeTimes {
            t_fwd: 352,
            t_bwd: 252,
        };
        let (i, r) = (397, 305);
        let z = sigma_zeta(&[(0, 1)], 1, &timing(), 1.0)[(0, 0)];
        let x = sigma_xi(&[(0, 1)], &[t], i, r, 1.0)[(0, 0)];
        let printed = sigma_zeta_xi(&[(0, 1)], &[0], &[t], i, r, 1.0)[(0, 0)];
        let exact = exact_sigma_zeta_xi(&[(0, 1)], &[0], &[t], i, r, 1, &timing(), 1.0)[(0, 0)];
        assert!(z * x - printed * printed < 0.0);
        assert!(z * x - exact * exact >= 0.0);
        assert_eq!(exact, -212.0);
    }

    proptest::proptest! {
        #[test]
        fn exact_joint_covariance_is_psd(
            d in 1usize..4,
            fresh in 0u64..2,
            back in 0u64..400,
        ) {
            // Five-edge star plus chord, three measured edges with assorted stale times.
            let edges = [(0, 1), (0, 2), (1, 2), (2, 3), (1, 3)];
            let measured = [0usize, 2, 3];
            let (i, r) = (1097u64, 1005u64);
            let pos = if fresh == 0 { 1052 } else { 1097 };
            let times = [
                EdgeTimes { t_fwd: pos, t_bwd: 1052 - back },
                EdgeTimes { t_fwd: 1052, t_bwd: 1097 },
                EdgeTimes { t_fwd: 1052 - back / 2, t_bwd: 1052 },
            ];
            let cov = NoiseCovariances::assemble_exact(&edges, &measured, &times, &[0.0; 3], d, i, r, &timing(), 1.0);
            let m = edges.len();
            let n = measured.len();
            let mut joint = DMatrix::zeros(m + n, m + n);
            joint.view_mut((0, 0), (m, m)).copy_from(&cov.sigma_zeta);
            joint.view_mut((m, m), (n, n)).copy_from(&cov.sigma_xi);
            joint.view_mut((0, m), (m, n)).copy_from(&cov.sigma_zeta_xi);
            joint.view_mut((m, 0), (n, m)).copy_from(&cov.sigma_zeta_xi.transpose());
            let eig = nalgebra::SymmetricEigen::new(joint);
            proptest::prop_assert!(eig.eigenvalues.min() > -1e-9 * eig.eigenvalues.amax());
        }
    }
}
