//! Residual phase factors, their frame statistics, and the downlink rate
//! and spectral-efficiency formulas for conjugate and zero-forcing beams.
//!
//! Frame sequence indices `n` are 0-based here: index `n` is within-frame
//! sample `n + 1`. UE indices are 0-based; UE `k` sends its uplink pilot at
//! within-slot sample `k + 1`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::CompensationPolicy;
use crate::error::{invalid, Error, Result};
use crate::phase_noise::PhaseTrajectory;
use crate::schedule::Schedule;
use crate::timing::{latest_pilot_index, SlotTiming};

/// Fewest frames accepted for residual-phase statistics.
pub const MIN_FRAMES: usize = 10;

/// Downlink beamforming scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Beamformer {
    Conjugate,
    ZeroForcing,
}

impl Beamformer {
    pub fn label(&self) -> &'static str {
        match self {
            Beamformer::Conjugate => "conj",
            Beamformer::ZeroForcing => "zf",
        }
    }
}

/// `eta_{k,l} = sqrt(beta_{k,l}) / sum_k' sqrt(beta_{k',l})`; columns sum to one.
pub fn downlink_power_allocation(beta: &DMatrix<f64>) -> DMatrix<f64> {
    let mut eta = beta.map(f64::sqrt);
    for mut col in eta.column_iter_mut() {
        let s = col.sum();
        if s > 0.0 {
            col /= s;
        }
    }
    eta
}

/// Per-AP and per-UE compensation terms currently applied.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensationState {
    /// `theta_l`, reset whenever a new phase solution arrives.
    pub theta: Vec<f64>,
    /// `psi_k`, refreshed at every downlink pilot.
    pub psi: Vec<f64>,
    pub policy: CompensationPolicy,
}

impl CompensationState {
    pub fn new(num_aps: usize, num_ues: usize, policy: CompensationPolicy) -> Self {
        Self {
            theta: vec![0.0; num_aps],
            psi: vec![0.0; num_ues],
            policy,
        }
    }
}

/// Exponent of the residual phase factor:
/// `-nu_{l,i} - nu_{l,[i]_k} + theta_l + psi_k`.
#[inline]
pub fn residual_phase_angle(nu_i: f64, nu_pilot: f64, theta: f64, psi: f64) -> f64 {
    ((-nu_i - nu_pilot) + theta) + psi
}

/// `Delta_{k,l,i}` for UE `k` (0-based) and AP `l` at global sample `i`.
pub fn residual_phase(
    traj: &PhaseTrajectory,
    comp: &CompensationState,
    i: u64,
    k: usize,
    l: usize,
    timing: &SlotTiming,
) -> Complex64 {
    let p = latest_pilot_index(i, k + 1, timing.tau_c);
    let a = residual_phase_angle(traj.at(l, i), traj.at(l, p), comp.theta[l], comp.psi[k]);
    Complex64::from_polar(1.0, a)
}

/// Noiseless downlink pilot seen by a UE: `sum_l g_l exp(j chi_l)`.
pub fn downlink_pilot_signal(gains: &[f64], angles: &[f64]) -> Complex64 {
    gains
        .iter()
        .zip(angles)
        .map(|(&g, &a)| Complex64::from_polar(g, a))
        .sum()
}

/// UE compensation from a received downlink pilot: the negated received phase.
pub fn ue_phase_compensation(received: Complex64) -> f64 {
    -received.arg()
}

/// Which APs transmit downlink data at each sample of the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityMask {
    num_aps: usize,
    frame_len: usize,
    active: Vec<bool>,
}

impl ActivityMask {
    /// Every AP active at every index.
    pub fn all_active(num_aps: usize, frame_len: usize) -> Self {
        Self {
            num_aps,
            frame_len,
            active: vec![true; num_aps * frame_len],
        }
    }

    /// Conventional TDD: every AP is active on the whole downlink window.
    pub fn conventional(num_aps: usize, timing: &SlotTiming, frame_slots: usize) -> Self {
        let frame_len = frame_slots * timing.tau_c as usize;
        let mut active = vec![false; num_aps * frame_len];
        for l in 0..num_aps {
            for s in 0..frame_slots {
                for pos in timing.downlink() {
                    active[l * frame_len + timing.global(s as u64, pos) as usize - 1] = true;
                }
            }
        }
        Self {
            num_aps,
            frame_len,
            active,
        }
    }

    /// Broken TDD: in its slot a master loses the last `1 + tau_g` downlink
    /// samples and a responder loses sample `i2`.
    pub fn from_schedule(schedule: &Schedule) -> Self {
        let t = schedule.timing;
        let mut mask = Self::conventional(schedule.graph.num_nodes(), &t, schedule.frame_slots);
        for slot in &schedule.slots {
            let s = slot.slot as u64;
            for &m in &slot.masters {
                for pos in (t.i2() - t.tau_g)..=t.i2() {
                    mask.set(m, t.global(s, pos) as usize - 1, false);
                }
            }
            for &(r, _) in &slot.responders {
                mask.set(r, t.global(s, t.i2()) as usize - 1, false);
            }
        }
        mask
    }

    fn set(&mut self, l: usize, n: usize, v: bool) {
        self.active[l * self.frame_len + n] = v;
    }

    #[inline]
    pub fn get(&self, l: usize, n: usize) -> bool {
        self.active[l * self.frame_len + n]
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    /// Active samples of AP `l` per frame.
    pub fn count(&self, l: usize) -> usize {
        (0..self.frame_len).filter(|&n| self.get(l, n)).count()
    }
}

/// Everything the rate formulas need besides the residual-phase statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RateInputs {
    pub activity: ActivityMask,
    /// `K x L` downlink power coefficients.
    pub eta: DMatrix<f64>,
    /// `K x L` estimate variances.
    pub gamma: DMatrix<f64>,
    /// `K x L` large-scale gains.
    pub beta: DMatrix<f64>,
    pub rho_ap: f64,
    pub antennas: usize,
}

impl RateInputs {
    pub fn num_ues(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_aps(&self) -> usize {
        self.beta.ncols()
    }

    /// `a_{l,n} sqrt(eta_{k,l} gamma_{k,l})`.
    #[inline]
    pub fn weight(&self, k: usize, l: usize, n: usize) -> f64 {
        if self.activity.get(l, n) {
            (self.eta[(k, l)] * self.gamma[(k, l)]).sqrt()
        } else {
            0.0
        }
    }
}

/// Frame averages of `Delta` and of the weighted sum `S = sum_l w Delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPhaseStats {
    num_aps: usize,
    frame_len: usize,
    pub frames: usize,
    recorded: Vec<bool>,
    /// `E[Delta]` at `[(k * L + l) * frame_len + n]`.
    mean_delta: Vec<Complex64>,
    /// `E[|S|^2]` at `[k * frame_len + n]`.
    mean_sq_sum: Vec<f64>,
}

impl ResidualPhaseStats {
    /// Statistics of perfectly compensated phases: `Delta = 1` at every sample.
    pub fn ideal(inputs: &RateInputs, frames: usize) -> Self {
        let (k, l, len) = (
            inputs.num_ues(),
            inputs.num_aps(),
            inputs.activity.frame_len(),
        );
        let mut acc = DeltaAccumulator::new(inputs);
        let ones = vec![Complex64::new(1.0, 0.0); l];
        for _ in 0..frames {
            for n in 0..len {
                for u in 0..k {
                    acc.record(n, u, &ones);
                }
            }
            acc.end_frame();
        }
        acc.finish_unchecked()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn is_recorded(&self, n: usize) -> bool {
        self.recorded[n]
    }

    /// `E[Delta_{k,l,n}]`, or `None` where no sample was recorded.
    pub fn mean_delta(&self, k: usize, l: usize, n: usize) -> Option<Complex64> {
        self.recorded[n].then(|| self.mean_delta[(k * self.num_aps + l) * self.frame_len + n])
    }

    fn mean_delta_or_zero(&self, k: usize, l: usize, n: usize) -> Complex64 {
        self.mean_delta[(k * self.num_aps + l) * self.frame_len + n]
    }
}

/// Streaming accumulation of residual-phase statistics over frames.
#[derive(Debug, Clone)]
pub struct DeltaAccumulator<'a> {
    inputs: &'a RateInputs,
    frames: usize,
    recorded: Vec<bool>,
    amp: Vec<f64>,
    sum_delta: Vec<Complex64>,
    sum_sq: Vec<f64>,
}

impl<'a> DeltaAccumulator<'a> {
    pub fn new(inputs: &'a RateInputs) -> Self {
        let (k, l, len) = (
            inputs.num_ues(),
            inputs.num_aps(),
            inputs.activity.frame_len(),
        );
        Self {
            inputs,
            frames: 0,
            recorded: vec![false; len],
            amp: (0..k * l)
                .map(|i| (inputs.eta[(i / l, i % l)] * inputs.gamma[(i / l, i % l)]).sqrt())
                .collect(),
            sum_delta: vec![Complex64::new(0.0, 0.0); k * l * len],
            sum_sq: vec![0.0; k * len],
        }
    }

    /// Adds the per-AP factors `deltas[l]` of UE `k` at frame index `n`.
    #[inline]
    pub fn record(&mut self, n: usize, k: usize, deltas: &[Complex64]) {
        let (l_count, len) = (self.inputs.num_aps(), self.inputs.activity.frame_len());
        self.recorded[n] = true;
        let mut s = Complex64::new(0.0, 0.0);
        for (l, &d) in deltas.iter().enumerate() {
            self.sum_delta[(k * l_count + l) * len + n] += d;
            if self.inputs.activity.get(l, n) {
                s += d * self.amp[k * l_count + l];
            }
        }
        self.sum_sq[k * len + n] += s.norm_sqr();
    }

    pub fn end_frame(&mut self) {
        self.frames += 1;
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Averages; fails with fewer than [`MIN_FRAMES`] frames.
    pub fn finish(self) -> Result<ResidualPhaseStats> {
        if self.frames < MIN_FRAMES {
            return Err(Error::StatisticsUnstable {
                min: MIN_FRAMES,
                got: self.frames,
            });
        }
        Ok(self.finish_unchecked())
    }

    fn finish_unchecked(self) -> ResidualPhaseStats {
        let f = self.frames.max(1) as f64;
        ResidualPhaseStats {
            num_aps: self.inputs.num_aps(),
            frame_len: self.inputs.activity.frame_len(),
            frames: self.frames,
            recorded: self.recorded,
            mean_delta: self.sum_delta.into_iter().map(|s| s / f).collect(),
            mean_sq_sum: self.sum_sq.into_iter().map(|s| s / f).collect(),
        }
    }
}

/// `sum_l a sqrt(eta gamma) E[Delta]` for UE `k` at index `n`.
fn coherent_sum(inputs: &RateInputs, stats: &ResidualPhaseStats, n: usize, k: usize) -> Complex64 {
    (0..inputs.num_aps())
        .map(|l| stats.mean_delta_or_zero(k, l, n) * inputs.weight(k, l, n))
        .sum()
}

/// Conjugate-beamforming rate of UE `k` at frame index `n`, bits/s/Hz.
pub fn rate_conjugate(inputs: &RateInputs, stats: &ResidualPhaseStats, n: usize, k: usize) -> f64 {
    let (nn, rho) = (inputs.antennas as f64, inputs.rho_ap);
    let ds = coherent_sum(inputs, stats, n, k);
    let mut bu = 0.0;
    let mut ui = 0.0;
    for l in 0..inputs.num_aps() {
        if !inputs.activity.get(l, n) {
            continue;
        }
        let m = stats.mean_delta_or_zero(k, l, n).norm_sqr();
        bu += inputs.eta[(k, l)] * inputs.gamma[(k, l)] * (1.0 - m);
        ui += inputs.beta[(k, l)] * inputs.eta.column(l).sum();
    }
    let sinr = nn * rho * ds.norm_sqr() / (nn * rho * bu + rho * ui + 1.0);
    (1.0 + sinr).log2()
}

/// Zero-forcing rate of UE `k` at frame index `n`, bits/s/Hz. Needs `N > K`.
pub fn rate_zf(inputs: &RateInputs, stats: &ResidualPhaseStats, n: usize, k: usize) -> Result<f64> {
    let (nn, kk) = (inputs.antennas, inputs.num_ues());
    if nn <= kk {
        return Err(invalid(format!(
            "zero-forcing needs more antennas ({nn}) than UEs ({kk})"
        )));
    }
    let (g, rho) = ((nn - kk) as f64, inputs.rho_ap);
    let mean = coherent_sum(inputs, stats, n, k);
    let var = (stats.mean_sq_sum[k * stats.frame_len + n] - mean.norm_sqr()).max(0.0);
    let mut ui = 0.0;
    for l in 0..inputs.num_aps() {
        if inputs.activity.get(l, n) {
            ui += (inputs.beta[(k, l)] - inputs.gamma[(k, l)]) * inputs.eta.column(l).sum();
        }
    }
    let sinr = g * rho * mean.norm_sqr() / (g * rho * var + rho * ui + 1.0);
    Ok((1.0 + sinr).log2())
}

/// `SE_k = (1 / (F tau_c)) sum_n R_{k,n}`.
pub fn spectral_efficiency(rates: &[f64]) -> f64 {
    if rates.is_empty() {
        return 0.0;
    }
    rates.iter().sum::<f64>() / rates.len() as f64
}

/// Rates over the frame and the resulting SE of every UE.
#[derive(Debug, Clone, PartialEq)]
pub struct SeResult {
    pub beamformer: Beamformer,
    /// `rates[k][n]`.
    pub rates: Vec<Vec<f64>>,
    pub se: Vec<f64>,
}

/// Evaluates the rate of every UE at every frame index.
pub fn evaluate_se(
    inputs: &RateInputs,
    stats: &ResidualPhaseStats,
    beamformer: Beamformer,
) -> Result<SeResult> {
    let len = inputs.activity.frame_len();
    let mut rates = Vec::with_capacity(inputs.num_ues());
    for k in 0..inputs.num_ues() {
        let r: Vec<f64> = match beamformer {
            Beamformer::Conjugate => (0..len)
                .map(|n| rate_conjugate(inputs, stats, n, k))
                .collect(),
            Beamformer::ZeroForcing => (0..len)
                .map(|n| rate_zf(inputs, stats, n, k))
                .collect::<Result<_>>()?,
        };
        rates.push(r);
    }
    let se = rates.iter().map(|r| spectral_efficiency(r)).collect();
    Ok(SeResult {
        beamformer,
        rates,
        se,
    })
}

impl SeResult {
    /// CSV of per-index rates: `ue,n,rate`, with `n` 1-based within the frame.
    pub fn write_rates_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["beamformer", "ue", "n", "rate"])?;
        for (k, r) in self.rates.iter().enumerate() {
            for (n, v) in r.iter().enumerate() {
                w.write_record(&[
                    self.beamformer.label().to_string(),
                    k.to_string(),
                    (n + 1).to_string(),
                    v.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV of per-UE SE: `beamformer,ue,se`.
    pub fn write_se_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["beamformer", "ue", "se"])?;
        for (k, v) in self.se.iter().enumerate() {
            w.write_record(&[
                self.beamformer.label().to_string(),
                k.to_string(),
                v.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::topology::{distance2_coloring, ApGraph};

    fn timing() -> SlotTiming {
        SlotTiming::from_config(&SystemConfig::default())
    }

    fn two_ap_schedule() -> Schedule {
        let g = ApGraph::from_edges(2, &[(0, 1)]).unwrap();
        crate::schedule::build_schedule(
            &g,
            &distance2_coloring(&g),
            timing(),
            0,
            crate::config::SlotPlacement::First,
        )
        .unwrap()
    }

    #[test]
    fn allocation_examples() {
        let e = downlink_power_allocation(&DMatrix::from_element(1, 1, 3.0));
        assert_eq!(e[(0, 0)], 1.0);
        let e = downlink_power_allocation(&DMatrix::from_column_slice(2, 1, &[2.0, 2.0]));
        assert_eq!(e.as_slice(), &[0.5, 0.5]);
        let e = downlink_power_allocation(&DMatrix::from_column_slice(2, 1, &[1.0, 4.0]));
        assert!((e[(0, 0)] - 1.0 / 3.0).abs() < 1e-15 && (e[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn residual_phase_examples() {
        let t = timing();
        let traj =
            PhaseTrajectory::from_paths(vec![(0..=200).map(|i| 0.01 * i as f64).collect()], 0.0);
        let mut comp = CompensationState::new(1, 10, CompensationPolicy::Genie);
        let i = 160;
        let p = latest_pilot_index(i, 5, 100);
        comp.theta[0] = traj.at(0, i) + traj.at(0, p);
        let d = residual_phase(&traj, &comp, i, 4, 0, &t);
        assert_eq!(d, Complex64::new(1.0, 0.0));

        let flat = PhaseTrajectory::from_paths(vec![vec![0.3; 201]], 0.0);
        let comp = CompensationState::new(1, 10, CompensationPolicy::Pilot);
        let d = residual_phase(&flat, &comp, 150, 2, 0, &t);
        assert!((d - Complex64::from_polar(1.0, -0.6)).norm() < 1e-15);
    }

    #[test]
    fn two_ap_activity_counts() {
        let s = two_ap_schedule();
        let m = ActivityMask::from_schedule(&s);
        assert_eq!(m.count(0), 41);
        assert_eq!(m.count(1), 38);
        let c = ActivityMask::conventional(2, &timing(), 1);
        assert_eq!(c.count(0), 42);
        assert!(m.get(1, 55) && !m.get(1, 93) && !m.get(0, 96) && m.get(0, 95));
    }

    fn inputs(l: usize, k: usize, n_ant: usize, activity: ActivityMask) -> RateInputs {
        let beta = DMatrix::from_fn(k, l, |a, b| 1e-9 * (1.0 + a as f64 + 2.0 * b as f64));
        let (gamma, _) = crate::propagation::estimate_statistics(&beta, 1e11, k);
        RateInputs {
            activity,
            eta: downlink_power_allocation(&beta),
            gamma,
            beta,
            rho_ap: 5e11,
            antennas: n_ant,
        }
    }

    #[test]
    fn rates_vanish_without_activity() {
        let inp = inputs(2, 2, 4, ActivityMask::conventional(2, &timing(), 1));
        let stats = ResidualPhaseStats::ideal(&inp, 10);
        // Sample 1 is an uplink pilot.
        assert_eq!(rate_conjugate(&inp, &stats, 0, 0), 0.0);
        assert_eq!(rate_zf(&inp, &stats, 0, 0).unwrap(), 0.0);
        assert!(rate_conjugate(&inp, &stats, 60, 0) > 0.0);
    }

    #[test]
    fn single_ap_reduction() {
        let inp = inputs(1, 3, 8, ActivityMask::conventional(1, &timing(), 1));
        let stats = ResidualPhaseStats::ideal(&inp, 10);
        let (n, k) = (70, 1);
        let (nn, rho) = (8.0, inp.rho_ap);
        let (eta, gamma, beta) = (inp.eta[(k, 0)], inp.gamma[(k, 0)], inp.beta[(k, 0)]);
        let expect =
            (1.0 + nn * rho * eta * gamma / (rho * beta * inp.eta.column(0).sum() + 1.0)).log2();
        assert!((rate_conjugate(&inp, &stats, n, k) - expect).abs() < 1e-12);
        let expect_zf = (1.0 + 5.0 * rho * eta * gamma / (rho * (beta - gamma) + 1.0)).log2();
        assert!((rate_zf(&inp, &stats, n, k).unwrap() - expect_zf).abs() < 1e-12);
    }

    #[test]
    fn zf_needs_more_antennas() {
        let inp = inputs(1, 3, 3, ActivityMask::conventional(1, &timing(), 1));
        let stats = ResidualPhaseStats::ideal(&inp, 10);
        assert!(rate_zf(&inp, &stats, 60, 0).unwrap_err().is_config());
    }

    #[test]
    fn too_few_frames() {
        let inp = inputs(1, 1, 2, ActivityMask::conventional(1, &timing(), 1));
        let mut acc = DeltaAccumulator::new(&inp);
        for _ in 0..9 {
            acc.end_frame();
        }
        assert!(matches!(
            acc.finish(),
            Err(Error::StatisticsUnstable { .. })
        ));
    }

    #[test]
    fn rates_increase_with_coherence() {
        let inp = inputs(2, 2, 16, ActivityMask::conventional(2, &timing(), 1));
        let mut prev = (-1.0, -1.0);
        for step in 0..=10 {
            let mag = step as f64 / 10.0;
            let mut acc = DeltaAccumulator::new(&inp);
            // Two equiprobable phases +-x with cos x = mag give |E Delta| = mag.
            let x = mag.acos();
            for f in 0..20 {
                let d = Complex64::from_polar(1.0, if f % 2 == 0 { x } else { -x });
                for n in 0..100 {
                    for k in 0..2 {
                        acc.record(n, k, &[d, d]);
                    }
                }
                acc.end_frame();
            }
            let s = acc.finish().unwrap();
            let rc = rate_conjugate(&inp, &s, 60, 0);
            let rz = rate_zf(&inp, &s, 60, 0).unwrap();
            assert!(rc >= prev.0 && rz >= prev.1);
            prev = (rc, rz);
        }
    }

    #[test]
    fn se_is_frame_mean() {
        assert_eq!(spectral_efficiency(&[0.0; 5]), 0.0);
        assert_eq!(spectral_efficiency(&[2.0; 4]), 2.0);
    }

    #[test]
    fn pilot_compensation_single_ap() {
        let y = downlink_pilot_signal(&[3.0], &[0.9]);
        assert!((ue_phase_compensation(y) + 0.9).abs() < 1e-15);
    }
}
