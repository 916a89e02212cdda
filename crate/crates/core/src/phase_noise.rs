//! Wiener oscillator phase noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SystemConfig;
use crate::error::{invalid, Result};

/// Per-sample increment variance of the Wiener phase process, rad².
///
/// Returns the override when one is set. Otherwise evaluates
/// `sigma^2 = 4 pi^2 f_c^2 c_nu / f_s` with `c_nu = 2 S Delta_f^2 / f_c`
/// and `S = 10^(S_PN / 10)`.
pub fn compute_sigma_nu_sq(config: &SystemConfig) -> Result<f64> {
    if let Some(v) = config.sigma_nu_sq_override {
        return Ok(v);
    }
    if config.bandwidth_hz.is_nan() || config.bandwidth_hz <= 0.0 {
        return Err(invalid("bandwidth_hz must be positive"));
    }
    if config.carrier_hz.is_nan() || config.carrier_hz <= 0.0 {
        return Err(invalid("carrier_hz must be positive"));
    }
    let s_lin = 10f64.powf(config.s_pn_dbc_hz / 10.0);
    let c_nu = 2.0 * s_lin * config.delta_f * config.delta_f / config.carrier_hz;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(two_pi * two_pi * config.carrier_hz * config.carrier_hz * c_nu / config.bandwidth_hz)
}

/// Phase of every AP oscillator on the global sample grid.
///
/// Sample 0 holds the initial phase. Old samples can be dropped with
/// [`PhaseTrajectory::discard_before`] to bound memory on long runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrajectory {
    nu: Vec<Vec<f64>>,
    /// Global index of `nu[l][0]`.
    offset: u64,
    sigma_nu_sq: f64,
}

impl PhaseTrajectory {
    /// A trajectory holding only the initial phases.
    pub fn new(initial: &[f64], sigma_nu_sq: f64) -> Self {
        Self {
            nu: initial.iter().map(|&p| vec![p]).collect(),
            offset: 0,
            sigma_nu_sq,
        }
    }

    /// Builds a trajectory from explicit per-AP sequences.
    pub fn from_paths(nu: Vec<Vec<f64>>, sigma_nu_sq: f64) -> Self {
        assert!(!nu.is_empty(), "at least one AP");
        let len = nu[0].len();
        assert!(
            nu.iter().all(|p| p.len() == len && len > 0),
            "paths must be non-empty and equally long"
        );
        Self {
            nu,
            offset: 0,
            sigma_nu_sq,
        }
    }

    pub fn num_aps(&self) -> usize {
        self.nu.len()
    }

    /// Largest global sample index covered.
    pub fn last_index(&self) -> u64 {
        self.offset + (self.nu[0].len() - 1) as u64
    }

    /// Smallest global sample index still held.
    pub fn first_index(&self) -> u64 {
        self.offset
    }

    /// Drops every sample before global index `i` (clamped to the last one).
    pub fn discard_before(&mut self, i: u64) {
        let i = i.min(self.last_index());
        if i <= self.offset {
            return;
        }
        let n = (i - self.offset) as usize;
        for path in &mut self.nu {
            path.drain(..n);
        }
        self.offset = i;
    }

    pub fn sigma_nu_sq(&self) -> f64 {
        self.sigma_nu_sq
    }

    /// Phase of AP `ap` at global sample `i`.
    #[inline]
    pub fn at(&self, ap: usize, i: u64) -> f64 {
        self.nu[ap][(i - self.offset) as usize]
    }

    /// Held samples of AP `ap`, starting at [`Self::first_index`].
    pub fn path(&self, ap: usize) -> &[f64] {
        &self.nu[ap]
    }

    /// Appends `steps` samples to every AP, drawing AP 0's increments first.
    pub fn advance<R: Rng + ?Sized>(&mut self, steps: usize, rng: &mut R) {
        for path in &mut self.nu {
            extend_wiener(path, steps, self.sigma_nu_sq, rng);
        }
    }

    /// Appends `steps` samples to AP `ap` only, from its own stream.
    pub fn advance_ap<R: Rng + ?Sized>(&mut self, ap: usize, steps: usize, rng: &mut R) {
        extend_wiener(&mut self.nu[ap], steps, self.sigma_nu_sq, rng);
    }

    /// Adds a constant to every phase of every AP.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            nu: self
                .nu
                .iter()
                .map(|p| p.iter().map(|v| v + c).collect())
                .collect(),
            offset: self.offset,
            sigma_nu_sq: self.sigma_nu_sq,
        }
    }
}

/// Functional form of [`PhaseTrajectory::advance`].
pub fn advance_phase<R: Rng + ?Sized>(
    mut traj: PhaseTrajectory,
    steps: usize,
    rng: &mut R,
) -> PhaseTrajectory {
    traj.advance(steps, rng);
    traj
}

fn extend_wiener<R: Rng + ?Sized>(path: &mut Vec<f64>, steps: usize, var: f64, rng: &mut R) {
    path.reserve(steps);
    let mut last = *path.last().expect("trajectory has an initial sample");
    if var == 0.0 {
        path.extend(std::iter::repeat(last).take(steps));
        return;
    }
    let sd = var.sqrt();
    for _ in 0..steps {
        let z: f64 = StandardNormal.sample(rng);
        last += sd * z;
        path.push(last);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn printed_formula_at_table_one() {
        // S = 1e-8, c_nu = 2 * 1e-8 * 1e10 / 2e9 = 1e-7,
        // sigma^2 = 4 pi^2 * 4e18 * 1e-7 / 2e7 = 4 pi^2 * 2e4.
        let v = compute_sigma_nu_sq(&SystemConfig::default()).unwrap();
        let hand = 789_568.352_087_149;
        assert!((v - hand).abs() / hand < 1e-12, "{v}");
    }

    #[test]
    fn override_and_zero() {
        let c = SystemConfig {
            sigma_nu_sq_override: Some(3.95e-4),
            ..SystemConfig::default()
        };
        assert_eq!(compute_sigma_nu_sq(&c).unwrap(), 3.95e-4);
        let c = SystemConfig {
            s_pn_dbc_hz: f64::NEG_INFINITY,
            ..SystemConfig::default()
        };
        assert_eq!(compute_sigma_nu_sq(&c).unwrap(), 0.0);
    }

    #[test]
    fn bad_frequencies() {
        let c = SystemConfig {
            bandwidth_hz: 0.0,
            ..SystemConfig::default()
        };
        assert!(compute_sigma_nu_sq(&c).is_err());
        let c = SystemConfig {
            carrier_hz: -1.0,
            ..SystemConfig::default()
        };
        assert!(compute_sigma_nu_sq(&c).is_err());
    }

    #[test]
    fn zero_variance_and_zero_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = PhaseTrajectory::new(&[0.3, -1.0], 0.0);
        let t = advance_phase(t, 50, &mut rng);
        assert!(t.path(0).iter().all(|&v| v == 0.3));
        assert!(t.path(1).iter().all(|&v| v == -1.0));
        let before = t.clone();
        let t = advance_phase(t, 0, &mut rng);
        assert_eq!(t, before);
    }

    #[test]
    fn increment_variance_large_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = advance_phase(PhaseTrajectory::new(&[0.0], 1.0), 1_000_000, &mut rng);
        let p = t.path(0);
        let n = (p.len() - 1) as f64;
        let mean = (p[p.len() - 1] - p[0]) / n;
        let var = p
            .windows(2)
            .map(|w| (w[1] - w[0] - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        assert!((var - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn increments_pass_chi_square_band() {
        let s2 = 3.95e-4;
        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = advance_phase(PhaseTrajectory::new(&[0.0, 0.0], s2), n / 2, &mut rng);
        let incs: Vec<f64> = (0..2)
            .flat_map(|l| {
                t.path(l)
                    .windows(2)
                    .map(|w| w[1] - w[0])
                    .collect::<Vec<_>>()
            })
            .collect();
        let m = incs.len() as f64;
        let var = incs.iter().map(|d| d * d).sum::<f64>() / m;
        // Sampling sd of the variance estimate is s2 * sqrt(2 / m).
        let band = 3.0 * s2 * (2.0 / m).sqrt();
        assert!((var - s2).abs() < band, "{var}");
        // Increments of different APs are uncorrelated.
        let half = incs.len() / 2;
        let cross = (0..half).map(|i| incs[i] * incs[half + i]).sum::<f64>() / half as f64;
        assert!(cross.abs() < 4.0 * s2 / (half as f64).sqrt());
    }
}
