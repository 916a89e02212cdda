//! Beamformed over-the-air calibration signals and phase measurements.
//!
//! A transmitter `tx` sends `x = sum_t sqrt(rho_t) u_t` where `u_t` is the
//! leading right singular vector of the channel `G_{t,tx}` toward target `t`.
//! Receiver `rx` observes `y = exp(j alpha) G x + z` with
//! `alpha = -nu_tx + nu_rx` and reports the angle of `u^H G^H y`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::propagation::{complex_gaussian, InterApChannels};

/// Leading singular triple of a channel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularPair {
    /// `G u_right / sigma`; inherits the phase of `u_right`.
    pub left: DVector<Complex64>,
    /// Unit-norm, first nonzero component real and positive.
    pub right: DVector<Complex64>,
    pub sigma: f64,
}

/// Rotates `v` so that its first nonzero entry is real and positive.
pub fn fix_phase(v: &DVector<Complex64>) -> DVector<Complex64> {
    let scale = v.norm();
    match v.iter().find(|c| c.norm() > 1e-12 * scale) {
        Some(first) => {
            let rot = first.conj() / first.norm();
            v.map(|c| c * rot)
        }
        None => v.clone(),
    }
}

/// Leading singular vectors from the Hermitian eigenproblem of `G^H G`.
///
/// Equal leading singular values resolve to the lowest-indexed eigenvector.
pub fn leading_singular_vectors(g: &DMatrix<Complex64>) -> Result<SingularPair> {
    if g.iter().all(|c| c.norm_sqr() == 0.0) {
        return Err(Error::DegenerateChannel("zero channel matrix".into()));
    }
    let gram = g.adjoint() * g;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.max();
    let tol = 1e-12 * top.abs();
    let idx = (0..eig.eigenvalues.len())
        .find(|&i| eig.eigenvalues[i] >= top - tol)
        .unwrap();
    let mut right = eig.eigenvectors.column(idx).into_owned();
    let n = right.norm();
    right /= Complex64::new(n, 0.0);
    let right = fix_phase(&right);
    let gu = g * &right;
    let sigma = gu.norm();
    let left = gu / Complex64::new(sigma, 0.0);
    Ok(SingularPair { left, right, sigma })
}

/// Splits `rho_ap` across targets in proportion to the inverse link norms.
pub fn fractional_power_allocation(norms: &[f64], rho_ap: f64) -> Result<Vec<f64>> {
    if norms.iter().any(|&n| n.is_nan() || n <= 0.0) {
        return Err(Error::DegenerateChannel(
            "zero inter-AP link norm in power allocation".into(),
        ));
    }
    let inv_sum: f64 = norms.iter().map(|n| 1.0 / n).sum();
    Ok(norms.iter().map(|n| rho_ap / n / inv_sum).collect())
}

/// A calibration transmission from one AP to a set of neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct CalSignal {
    pub transmitter: usize,
    pub targets: Vec<usize>,
    /// Unit-norm beam per target.
    pub beams: Vec<DVector<Complex64>>,
    /// Power per target; sums to the AP power.
    pub powers: Vec<f64>,
    waveform: DVector<Complex64>,
}

impl CalSignal {
    /// Assembles the signal from precomputed beams and powers.
    pub fn from_parts(
        transmitter: usize,
        targets: Vec<usize>,
        beams: Vec<DVector<Complex64>>,
        powers: Vec<f64>,
    ) -> Self {
        assert_eq!(targets.len(), beams.len());
        assert_eq!(targets.len(), powers.len());
        let n = beams[0].len();
        let mut waveform = DVector::zeros(n);
        for (u, &p) in beams.iter().zip(&powers) {
            waveform.axpy(Complex64::new(p.sqrt(), 0.0), u, Complex64::new(1.0, 0.0));
        }
        Self {
            transmitter,
            targets,
            beams,
            powers,
            waveform,
        }
    }

    /// Beams toward every target with powers from [`fractional_power_allocation`]
    /// on the Frobenius norms of the links.
    pub fn new(
        tx: usize,
        targets: &[usize],
        channels: &InterApChannels,
        rho_ap: f64,
    ) -> Result<Self> {
        let mut beams = Vec::with_capacity(targets.len());
        let mut norms = Vec::with_capacity(targets.len());
        for &t in targets {
            let g = channels.g(t, tx);
            beams.push(leading_singular_vectors(g)?.right);
            norms.push(g.norm());
        }
        let powers = fractional_power_allocation(&norms, rho_ap)?;
        Ok(Self::from_parts(tx, targets.to_vec(), beams, powers))
    }

    /// The transmitted vector `sum_t sqrt(rho_t) u_t`.
    pub fn waveform(&self) -> &DVector<Complex64> {
        &self.waveform
    }

    pub fn beam_for(&self, rx: usize) -> Option<&DVector<Complex64>> {
        self.targets
            .iter()
            .position(|&t| t == rx)
            .map(|i| &self.beams[i])
    }
}

/// One directional measurement: matched-filter output and its angle-error variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalMeasurement {
    pub phasor: Complex64,
    pub variance: f64,
}

impl DirectionalMeasurement {
    /// A measurement reporting exactly `angle`.
    pub fn from_angle(angle: f64, variance: f64) -> Self {
        Self {
            phasor: Complex64::from_polar(1.0, angle),
            variance,
        }
    }

    pub fn angle(&self) -> f64 {
        self.phasor.arg()
    }
}

/// Precomputed receive chain of one directed calibration link.
///
/// The channel is static over a trial, so the noiseless matched-filter
/// output `u^H G_known^H G x` is fixed and only the noise projection varies.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationLink {
    pub tx: usize,
    pub rx: usize,
    /// `G_known u`.
    filter: DVector<Complex64>,
    /// `u^H G_known^H G_true x`.
    gain: Complex64,
    pub variance: f64,
}

/// `||G u||^2 / (2 |u^H G^H G x|^2)`.
pub fn measurement_variance(
    g: &DMatrix<Complex64>,
    u: &DVector<Complex64>,
    x: &DVector<Complex64>,
) -> f64 {
    let gu = g * u;
    let s = gu.dotc(&(g * x));
    gu.norm_squared() / (2.0 * s.norm_sqr())
}

impl CalibrationLink {
    /// Receive chain of `rx` for `signal`, with the true and the assumed channel.
    pub fn new(
        signal: &CalSignal,
        rx: usize,
        g_true: &DMatrix<Complex64>,
        g_known: &DMatrix<Complex64>,
    ) -> Result<Self> {
        let u = signal.beam_for(rx).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "AP {rx} is not a target of AP {}",
                signal.transmitter
            ))
        })?;
        let filter = g_known * u;
        let gain = filter.dotc(&(g_true * signal.waveform()));
        let variance = measurement_variance(g_known, u, signal.waveform());
        Ok(Self {
            tx: signal.transmitter,
            rx,
            filter,
            gain,
            variance,
        })
    }

    /// Replaces the reported variance (e.g. computed with another signal).
    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    /// Matched-filter output for phases `nu_tx`, `nu_rx` at the reception instant.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        nu_tx: f64,
        nu_rx: f64,
        noisy: bool,
        rng: &mut R,
    ) -> Result<DirectionalMeasurement> {
        let mut r = Complex64::from_polar(1.0, -nu_tx + nu_rx) * self.gain;
        if noisy {
            for f in self.filter.iter() {
                r += f.conj() * complex_gaussian(1.0, rng);
            }
        }
        if r.norm_sqr() == 0.0 {
            return Err(Error::MeasurementDegenerate {
                tx: self.tx,
                rx: self.rx,
            });
        }
        Ok(DirectionalMeasurement {
            phasor: r,
            variance: self.variance,
        })
    }
}

/// Simulates one directional measurement with unit-variance receiver noise
/// (or none when `noisy` is false), assuming `G` is known exactly.
pub fn simulate_directional_measurement<R: Rng + ?Sized>(
    signal: &CalSignal,
    rx: usize,
    g_rx_tx: &DMatrix<Complex64>,
    nu_tx: f64,
    nu_rx: f64,
    noisy: bool,
    rng: &mut R,
) -> Result<DirectionalMeasurement> {
    CalibrationLink::new(signal, rx, g_rx_tx, g_rx_tx)?.measure(nu_tx, nu_rx, noisy, rng)
}

/// Both directions of one edge measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementRecord {
    pub edge: (usize, usize),
    /// `l1 -> l2`.
    pub fwd: DirectionalMeasurement,
    /// `l2 -> l1`.
    pub bwd: DirectionalMeasurement,
    pub t_fwd: u64,
    pub t_bwd: u64,
}

impl MeasurementRecord {
    pub fn alpha_fwd(&self) -> f64 {
        self.fwd.angle()
    }

    pub fn alpha_bwd(&self) -> f64 {
        self.bwd.angle()
    }
}

/// `alpha_fwd - alpha_bwd` modulo 2 pi, computed as the angle of
/// `r_fwd * conj(r_bwd)`.
pub fn bidirectional_difference(rec: &MeasurementRecord) -> f64 {
    (rec.fwd.phasor * rec.bwd.phasor.conj()).arg()
}
