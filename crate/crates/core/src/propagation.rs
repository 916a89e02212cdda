//! Node placement, large-scale fading, small-scale channels and uplink
//! channel estimation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Shadow-fading standard deviation in dB.
pub const SHADOW_SD_DB: f64 = 4.0;
/// Decorrelation distance of the UE shadow-fading correlation, meters.
pub const SHADOW_DECORR_M: f64 = 9.0;
/// Distances are clamped to this many meters before entering the pathloss law.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// Positions on the wrapped-around square `[0, side)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub ap_positions: Vec<[f64; 2]>,
    pub ue_positions: Vec<[f64; 2]>,
    pub side: f64,
}

/// Euclidean distance on a torus of side `side`.
pub fn torus_distance(p: [f64; 2], q: [f64; 2], side: f64) -> f64 {
    let axis = |a: f64, b: f64| {
        let d = (a - b).abs();
        d.min(side - d)
    };
    axis(p[0], q[0]).hypot(axis(p[1], q[1]))
}

/// Uniform placement with rejection of APs closer than `min_ap_separation`.
///
/// Every rejected AP draw counts toward `placement_retries`.
pub fn place_nodes<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<Placement> {
    let side = config.area_side;
    let draw = |rng: &mut R| [rng.random::<f64>() * side, rng.random::<f64>() * side];
    let mut aps: Vec<[f64; 2]> = Vec::with_capacity(config.num_aps);
    let mut rejected = 0usize;
    while aps.len() < config.num_aps {
        let p = draw(rng);
        if aps
            .iter()
            .all(|&q| torus_distance(p, q, side) >= config.min_ap_separation)
        {
            aps.push(p);
        } else {
            rejected += 1;
            if rejected > config.placement_retries {
                return Err(Error::PlacementInfeasible {
                    aps: config.num_aps,
                    attempts: rejected,
                });
            }
        }
    }
    let ues = (0..config.num_ues).map(|_| draw(rng)).collect();
    Ok(Placement {
        ap_positions: aps,
        ue_positions: ues,
        side,
    })
}

/// Urban-microcell pathloss in dB at ground distance `d` meters with shadowing `s` dB.
pub fn pathloss_db(d: f64, shadow_db: f64) -> f64 {
    -30.5 - 36.7 * d.max(MIN_DISTANCE_M).log10() + shadow_db
}

/// Large-scale gains of all UE-AP and AP-AP links.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScale {
    /// `K x L` linear gains.
    pub beta_ue: DMatrix<f64>,
    /// `L x L` symmetric linear inter-AP gains; the diagonal is zero.
    pub beta_ap: DMatrix<f64>,
    /// `K x L` shadow fading realizations in dB.
    pub shadow_db: DMatrix<f64>,
}

/// Covariance of the shadowing toward one AP, `16 * 2^(-d_UE / 9)`.
pub fn shadow_covariance(placement: &Placement) -> DMatrix<f64> {
    let k = placement.ue_positions.len();
    DMatrix::from_fn(k, k, |a, b| {
        let d = torus_distance(
            placement.ue_positions[a],
            placement.ue_positions[b],
            placement.side,
        );
        SHADOW_SD_DB * SHADOW_SD_DB * 2f64.powf(-d / SHADOW_DECORR_M)
    })
}

/// Draws correlated UE shadowing (independent across APs) and independent
/// inter-AP shadowing, then applies the pathloss law.
pub fn large_scale_fading<R: Rng + ?Sized>(
    placement: &Placement,
    rng: &mut R,
) -> Result<LargeScale> {
    let k = placement.ue_positions.len();
    let l = placement.ap_positions.len();
    let mut cov = shadow_covariance(placement);
    for i in 0..k {
        cov[(i, i)] += 1e-12;
    }
    let chol = cov.cholesky().ok_or(Error::Covariance)?;
    let lower = chol.l();
    let mut shadow = DMatrix::zeros(k, l);
    for ap in 0..l {
        let z = DVector::from_fn(k, |_, _| StandardNormal.sample(rng));
        shadow.set_column(ap, &(&lower * z));
    }
    let beta_ue = DMatrix::from_fn(k, l, |u, ap| {
        let d = torus_distance(
            placement.ue_positions[u],
            placement.ap_positions[ap],
            placement.side,
        );
        10f64.powf(pathloss_db(d, shadow[(u, ap)]) / 10.0)
    });
    let mut beta_ap = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in (i + 1)..l {
            let d = torus_distance(
                placement.ap_positions[i],
                placement.ap_positions[j],
                placement.side,
            );
            let s: f64 = StandardNormal.sample(rng);
            let b = 10f64.powf(pathloss_db(d, SHADOW_SD_DB * s) / 10.0);
            beta_ap[(i, j)] = b;
            beta_ap[(j, i)] = b;
        }
    }
    Ok(LargeScale {
        beta_ue,
        beta_ap,
        shadow_db: shadow,
    })
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Inter-AP channel matrices; `g(rx, tx)` maps AP `tx`'s antennas to AP `rx`'s.
#[derive(Debug, Clone)]
pub struct InterApChannels {
    l: usize,
    g: Vec<Option<DMatrix<Complex64>>>,
}

impl InterApChannels {
    /// Channel from `tx` to `rx`. Reciprocal: `g(a, b) == g(b, a)^T` exactly.
    pub fn g(&self, rx: usize, tx: usize) -> &DMatrix<Complex64> {
        self.g[rx * self.l + tx]
            .as_ref()
            .expect("no channel from an AP to itself")
    }

    pub fn num_aps(&self) -> usize {
        self.l
    }

    /// Multiplies every channel by the same unit phasor.
    pub fn rotated(&self, phasor: Complex64) -> Self {
        Self {
            l: self.l,
            g: self
                .g
                .iter()
                .map(|m| m.as_ref().map(|m| m.map(|v| v * phasor)))
                .collect(),
        }
    }
}

/// Frozen iid `CN(0, beta_ap)` inter-AP channels; the reverse direction is
/// stored as the exact transpose.
pub fn draw_inter_ap_channels<R: Rng + ?Sized>(
    beta_ap: &DMatrix<f64>,
    antennas: usize,
    rng: &mut R,
) -> InterApChannels {
    let l = beta_ap.nrows();
    let mut g = vec![None; l * l];
    for i in 0..l {
        for j in (i + 1)..l {
            let b = beta_ap[(i, j)];
            let m = DMatrix::from_fn(antennas, antennas, |_, _| complex_gaussian(b, rng));
            g[j * l + i] = Some(m.transpose());
            g[i * l + j] = Some(m);
        }
    }
    InterApChannels { l, g }
}

/// Small-scale UE channels of one coherence block plus the frozen inter-AP channels.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// `h[k][l]`, an `N`-vector with iid `CN(0, beta_kl)` entries.
    pub h: Vec<Vec<DVector<Complex64>>>,
    pub g: InterApChannels,
}

/// Draws `h` for every UE-AP pair and `G` for every AP pair.
pub fn draw_channels<R: Rng + ?Sized>(
    large: &LargeScale,
    config: &SystemConfig,
    rng: &mut R,
) -> ChannelRealization {
    let h = draw_ue_channels(&large.beta_ue, config.antennas, rng);
    let g = draw_inter_ap_channels(&large.beta_ap, config.antennas, rng);
    ChannelRealization { h, g }
}

/// Fresh UE-AP channels for one coherence block.
pub fn draw_ue_channels<R: Rng + ?Sized>(
    beta_ue: &DMatrix<f64>,
    antennas: usize,
    rng: &mut R,
) -> Vec<Vec<DVector<Complex64>>> {
    (0..beta_ue.nrows())
        .map(|k| {
            (0..beta_ue.ncols())
                .map(|l| DVector::from_fn(antennas, |_, _| complex_gaussian(beta_ue[(k, l)], rng)))
                .collect()
        })
        .collect()
}

/// LMMSE scaling `c` and estimate variance `gamma` for one link.
pub fn lmmse_coefficients(beta: f64, rho_ue: f64, num_ues: usize) -> (f64, f64) {
    let p = rho_ue * num_ues as f64;
    let c = p.sqrt() * beta / (p * beta + 1.0);
    (c, p.sqrt() * beta * c)
}

/// Uplink channel estimate of every UE-AP pair.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    /// `q_hat[k][l]`; empty when only statistics were requested.
    pub q_hat: Vec<Vec<DVector<Complex64>>>,
    pub gamma: DMatrix<f64>,
    pub c_coeff: DMatrix<f64>,
    /// `pilot_phase[k][l]`, the oscillator phase absorbed by each estimate.
    pub pilot_phase: DMatrix<f64>,
}

/// Estimate statistics `(gamma, c)` without drawing any channel.
pub fn estimate_statistics(
    beta_ue: &DMatrix<f64>,
    rho_ue: f64,
    num_ues: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let c = beta_ue.map(|b| lmmse_coefficients(b, rho_ue, num_ues).0);
    let g = beta_ue.map(|b| lmmse_coefficients(b, rho_ue, num_ues).1);
    (g, c)
}

/// Estimate of one link, `c (sqrt(rho K) e^{j nu} h + z)` with unit-variance `z`.
pub fn lmmse_link<R: Rng + ?Sized>(
    h: &DVector<Complex64>,
    beta: f64,
    rho_ue: f64,
    num_ues: usize,
    nu_at_pilot: f64,
    rng: &mut R,
) -> DVector<Complex64> {
    let (c, _) = lmmse_coefficients(beta, rho_ue, num_ues);
    let a = Complex64::from_polar((rho_ue * num_ues as f64).sqrt(), nu_at_pilot);
    h.map(|hv| (a * hv + complex_gaussian(1.0, rng)) * c)
}

/// LMMSE estimates of all links; `nu_at_pilot[(k, l)]` is AP `l`'s phase at UE `k`'s pilot.
pub fn lmmse_estimate<R: Rng + ?Sized>(
    h: &[Vec<DVector<Complex64>>],
    beta_ue: &DMatrix<f64>,
    config: &SystemConfig,
    nu_at_pilot: &DMatrix<f64>,
    rng: &mut R,
) -> ChannelEstimate {
    let k = beta_ue.nrows();
    let q_hat = (0..k)
        .map(|u| {
            (0..beta_ue.ncols())
                .map(|l| {
                    lmmse_link(
                        &h[u][l],
                        beta_ue[(u, l)],
                        config.rho_ue,
                        config.num_ues,
                        nu_at_pilot[(u, l)],
                        rng,
                    )
                })
                .collect()
        })
        .collect();
    let (gamma, c_coeff) = estimate_statistics(beta_ue, config.rho_ue, config.num_ues);
    ChannelEstimate {
        q_hat,
        gamma,
        c_coeff,
        pilot_phase: nu_at_pilot.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    #[test]
    fn torus_examples() {
        assert_eq!(torus_distance([0.0, 0.0], [0.0, 0.0], 500.0), 0.0);
        assert_eq!(torus_distance([0.0, 0.0], [499.0, 0.0], 500.0), 1.0);
        let d = torus_distance([0.0, 0.0], [250.0, 250.0], 500.0);
        assert!((d - 250.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pathloss_examples() {
        assert!((10f64.powf(pathloss_db(1.0, 0.0) / 10.0) / 10f64.powf(-3.05) - 1.0).abs() < 1e-12);
        assert!(
            (10f64.powf(pathloss_db(100.0, 0.0) / 10.0) / 10f64.powf(-10.39) - 1.0).abs() < 1e-12
        );
        assert!(pathloss_db(10.0, 0.0) > pathloss_db(20.0, 0.0));
    }

    #[test]
    fn single_ap_and_no_separation() {
        let c = SystemConfig {
            num_aps: 1,
            ..SystemConfig::default()
        };
        let p = place_nodes(&c, &mut rng(1)).unwrap();
        assert_eq!(p.ap_positions.len(), 1);
        let c = SystemConfig {
            num_aps: 30,
            min_ap_separation: 0.0,
            placement_retries: 0,
            ..SystemConfig::default()
        };
        assert!(place_nodes(&c, &mut rng(2)).is_ok());
    }

    #[test]
    fn sixteen_aps_place_reliably() {
        let c = SystemConfig {
            num_aps: 16,
            placement_retries: 1000,
            ..SystemConfig::default()
        };
        let ok = (0..1000)
            .filter(|&s| place_nodes(&c, &mut rng(s)).is_ok())
            .count();
        assert!(ok >= 990, "{ok}");
        let p = place_nodes(&c, &mut rng(3)).unwrap();
        for i in 0..16 {
            for j in (i + 1)..16 {
                assert!(torus_distance(p.ap_positions[i], p.ap_positions[j], 500.0) >= 50.0);
            }
        }
    }

    #[test]
    fn infeasible_placement_errors() {
        let c = SystemConfig {
            num_aps: 200,
            min_ap_separation: 100.0,
            placement_retries: 100,
            ..SystemConfig::default()
        };
        assert!(matches!(
            place_nodes(&c, &mut rng(0)),
            Err(Error::PlacementInfeasible { .. })
        ));
    }

    #[test]
    fn colocated_ues_share_shadowing() {
        let p = Placement {
            ap_positions: vec![[10.0, 10.0], [300.0, 200.0]],
            ue_positions: vec![[100.0, 100.0], [100.0, 100.0]],
            side: 500.0,
        };
        let cov = shadow_covariance(&p);
        assert_eq!(cov[(0, 1)], 16.0);
        let ls = large_scale_fading(&p, &mut rng(4)).unwrap();
        for l in 0..2 {
            assert!((ls.shadow_db[(0, l)] - ls.shadow_db[(1, l)]).abs() < 1e-4);
        }
        assert_eq!(ls.beta_ap[(0, 1)], ls.beta_ap[(1, 0)]);
        assert!(ls.beta_ue.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn reciprocity_is_exact() {
        let beta = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0]);
        let g = draw_inter_ap_channels(&beta, 4, &mut rng(5));
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_eq!(g.g(a, b), &g.g(b, a).transpose());
                }
            }
        }
    }

    #[test]
    fn channel_energy_and_zero_beta() {
        let beta = DMatrix::from_element(1, 1, 0.7);
        let n = 8;
        let mut r = rng(6);
        let draws = 10_000;
        let e: f64 = (0..draws)
            .map(|_| draw_ue_channels(&beta, n, &mut r)[0][0].norm_squared())
            .sum::<f64>()
            / draws as f64;
        assert!((e / (n as f64 * 0.7) - 1.0).abs() < 0.02, "{e}");
        let zero = draw_ue_channels(&DMatrix::zeros(1, 1), n, &mut r);
        assert!(zero[0][0].iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn lmmse_limits() {
        let (c, g) = lmmse_coefficients(0.0, 1e11, 10);
        assert_eq!((c, g), (0.0, 0.0));
        // rho K beta = 1e4.
        let (_, g) = lmmse_coefficients(1e-8, 1e11, 10);
        assert!(g / 1e-8 > 0.999);
        let (_, g) = lmmse_coefficients(1.0, 0.5, 2);
        assert!(g > 0.0 && g < 1.0);
    }

    #[test]
    fn estimate_variance_matches_gamma() {
        let beta = 1.0;
        let (rho, k) = (0.2, 2);
        let (_, gamma) = lmmse_coefficients(beta, rho, k);
        let mut r = rng(8);
        let n = 4;
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let h = DVector::from_fn(n, |_, _| complex_gaussian(beta, &mut r));
            acc += lmmse_link(&h, beta, rho, k, 0.4, &mut r).norm_squared();
        }
        let per_entry = acc / (draws * n) as f64;
        assert!(
            (per_entry / gamma - 1.0).abs() < 0.02,
            "{per_entry} vs {gamma}"
        );
    }
}
