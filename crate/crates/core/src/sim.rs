//! One Monte-Carlo trial end to end: placement, channels, schedule, phase
//! drift, calibration measurements, filtering, phase solve, compensation and
//! residual-phase statistics.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    bidirectional_difference, measurement_variance, CalSignal, CalibrationLink,
    DirectionalMeasurement, MeasurementRecord,
};
use crate::config::{CompensationPolicy, CovarianceModel, MuVarianceMode, SystemConfig};
use crate::error::{invalid, Result};
use crate::phase_noise::{compute_sigma_nu_sq, PhaseTrajectory};
use crate::propagation::{
    complex_gaussian, draw_inter_ap_channels, estimate_statistics, large_scale_fading, place_nodes,
    InterApChannels, LargeScale, Placement,
};
use crate::schedule::{build_schedule, EdgeTimes, Schedule};
use crate::seed::{stream, Purpose};
use crate::spectral::{
    downlink_power_allocation, residual_phase, residual_phase_angle, ue_phase_compensation,
    ActivityMask, CompensationState, DeltaAccumulator, RateInputs, ResidualPhaseStats,
};
use crate::timing::SlotTiming;
use crate::topology::{build_graph, distance2_coloring};
use crate::tracking::{
    exact_sigma_xi, kalman_update, sigma_xi, solve_phases, unwrap_step, FilterTrace, KalmanState,
    NoiseCovariances,
};

/// How edge offsets are estimated from the raw measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Kalman,
    /// The latest unwrapped bidirectional measurement of every edge.
    Direct,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Kalman => "kalman",
            Estimator::Direct => "direct",
        }
    }
}

/// What a trial simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// All APs with over-the-air calibration.
    Calibrated(Estimator),
    /// AP 0 alone in conventional TDD; no inter-AP calibration.
    SingleAp,
    /// All APs in conventional TDD with no phase noise at all.
    NoPhaseNoise,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Calibrated(e) => e.label(),
            Variant::SingleAp => "single_ap",
            Variant::NoPhaseNoise => "no_phase_noise",
        }
    }
}

/// The random deployment of one trial, shared by every variant.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub config: SystemConfig,
    pub trial: u64,
    pub placement: Placement,
    pub large_scale: LargeScale,
    pub channels: InterApChannels,
    /// `None` with a single AP.
    pub schedule: Option<Schedule>,
    pub sigma_nu_sq: f64,
    /// `K x L`.
    pub gamma: DMatrix<f64>,
    /// `K x L`.
    pub eta: DMatrix<f64>,
}

/// Frobenius norms of every inter-AP channel, zero on the diagonal.
pub fn link_strengths(channels: &InterApChannels) -> DMatrix<f64> {
    let l = channels.num_aps();
    DMatrix::from_fn(
        l,
        l,
        |a, b| if a == b { 0.0 } else { channels.g(a, b).norm() },
    )
}

impl TrialSetup {
    /// Draws placement, fading and channels of `trial`, then builds the graph
    /// and the schedule.
    pub fn generate(config: &SystemConfig, trial: u64) -> Result<Self> {
        config.validate()?;
        let seed = config.master_seed;
        let placement = place_nodes(config, &mut stream(seed, trial, Purpose::Placement, 0))?;
        let large_scale =
            large_scale_fading(&placement, &mut stream(seed, trial, Purpose::Shadowing, 0))?;
        let channels = draw_inter_ap_channels(
            &large_scale.beta_ap,
            config.antennas,
            &mut stream(seed, trial, Purpose::InterApChannel, 0),
        );
        Self::from_parts(config, trial, placement, large_scale, channels)
    }

    /// Builds the graph, coloring and schedule for given channels.
    pub fn from_parts(
        config: &SystemConfig,
        trial: u64,
        placement: Placement,
        large_scale: LargeScale,
        channels: InterApChannels,
    ) -> Result<Self> {
        let schedule = if config.num_aps >= 2 {
            let graph = build_graph(&link_strengths(&channels), config.effective_m_min())?;
            let coloring = distance2_coloring(&graph);
            Some(build_schedule(
                &graph,
                &coloring,
                SlotTiming::from_config(config),
                config.unbroken_slots,
                config.slot_placement,
            )?)
        } else {
            None
        };
        let (gamma, _) = estimate_statistics(&large_scale.beta_ue, config.rho_ue, config.num_ues);
        let eta = downlink_power_allocation(&large_scale.beta_ue);
        Ok(Self {
            config: config.clone(),
            trial,
            placement,
            large_scale,
            channels,
            schedule,
            sigma_nu_sq: compute_sigma_nu_sq(config)?,
            gamma,
            eta,
        })
    }

    fn timing(&self) -> SlotTiming {
        SlotTiming::from_config(&self.config)
    }

    /// Rate inputs for all APs under the broken-TDD schedule.
    pub fn calibrated_inputs(&self) -> Result<RateInputs> {
        let schedule = self
            .schedule
            .as_ref()
            .ok_or_else(|| invalid("calibration needs at least two APs"))?;
        Ok(self.inputs_with(ActivityMask::from_schedule(schedule), None))
    }

    fn inputs_with(&self, activity: ActivityMask, only_ap: Option<usize>) -> RateInputs {
        let pick = |m: &DMatrix<f64>| match only_ap {
            Some(l) => m.columns(l, 1).into_owned(),
            None => m.clone(),
        };
        let beta = pick(&self.large_scale.beta_ue);
        RateInputs {
            activity,
            eta: downlink_power_allocation(&beta),
            gamma: pick(&self.gamma),
            beta,
            rho_ap: self.config.rho_ap,
            antennas: self.config.antennas,
        }
    }
}

/// Everything a trial produces.
#[derive(Debug, Clone)]
pub struct TrialOutput {
    pub inputs: RateInputs,
    pub stats: ResidualPhaseStats,
    /// Per-update filter history when requested (Kalman only).
    pub trace: Option<FilterTrace>,
}

/// Runs `variant` on `setup`.
pub fn simulate(setup: &TrialSetup, variant: Variant, want_trace: bool) -> Result<TrialOutput> {
    let config = &setup.config;
    let timing = setup.timing();
    match variant {
        Variant::NoPhaseNoise => {
            let inputs =
                setup.inputs_with(ActivityMask::conventional(config.num_aps, &timing, 1), None);
            let stats = ResidualPhaseStats::ideal(&inputs, config.frames_per_trial);
            Ok(TrialOutput {
                inputs,
                stats,
                trace: None,
            })
        }
        Variant::SingleAp => {
            let inputs = setup.inputs_with(ActivityMask::conventional(1, &timing, 1), Some(0));
            let stats = run_single_ap(setup, &inputs)?;
            Ok(TrialOutput {
                inputs,
                stats,
                trace: None,
            })
        }
        Variant::Calibrated(estimator) => {
            let inputs = setup.calibrated_inputs()?;
            let mut trace =
                (want_trace && estimator == Estimator::Kalman).then(FilterTrace::default);
            let stats = run_calibrated(setup, &inputs, estimator, trace.as_mut())?;
            Ok(TrialOutput {
                inputs,
                stats,
                trace,
            })
        }
    }
}

fn initial_trajectory(setup: &TrialSetup, num_aps: usize) -> PhaseTrajectory {
    let c = &setup.config;
    let mut rng = stream(c.master_seed, setup.trial, Purpose::InitialPhase, 0);
    let initial: Vec<f64> = (0..num_aps)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    PhaseTrajectory::new(&initial, setup.sigma_nu_sq)
}

/// Per-AP oscillator streams, so the drift of AP `l` does not depend on `L`.
fn phase_streams(setup: &TrialSetup, num_aps: usize) -> Vec<rand_chacha::ChaCha8Rng> {
    (0..num_aps)
        .map(|l| {
            stream(
                setup.config.master_seed,
                setup.trial,
                Purpose::PhaseNoise,
                l as u64,
            )
        })
        .collect()
}

/// Sets `psi` of every UE from the downlink pilot at global sample `i`.
#[allow(clippy::too_many_arguments)]
fn refresh_psi<R: Rng + ?Sized>(
    traj: &PhaseTrajectory,
    comp: &mut CompensationState,
    inputs: &RateInputs,
    timing: &SlotTiming,
    i: u64,
    n: usize,
    noisy: bool,
    rng: &mut R,
) {
    let l_count = inputs.num_aps();
    let scale = inputs.antennas as f64 * inputs.rho_ap;
    for k in 0..inputs.num_ues() {
        let p = crate::timing::latest_pilot_index(i, k + 1, timing.tau_c);
        let mut r = Complex64::new(0.0, 0.0);
        for l in 0..l_count {
            if !inputs.activity.get(l, n) {
                continue;
            }
            let g = (scale * inputs.eta[(k, l)] * inputs.gamma[(k, l)]).sqrt();
            let a = residual_phase_angle(traj.at(l, i), traj.at(l, p), comp.theta[l], 0.0);
            r += Complex64::from_polar(g, a);
        }
        if noisy {
            r += complex_gaussian(1.0, rng);
        }
        comp.psi[k] = ue_phase_compensation(r);
    }
}

/// Records `Delta` over the downlink window of one slot.
fn record_slot(
    acc: &mut DeltaAccumulator<'_>,
    traj: &PhaseTrajectory,
    comp: &CompensationState,
    timing: &SlotTiming,
    global_slot: u64,
    slot_in_frame: usize,
    buf: &mut [Complex64],
) {
    let (k_count, l_count) = (comp.psi.len(), comp.theta.len());
    for pos in timing.downlink() {
        let i = timing.global(global_slot, pos);
        let n = slot_in_frame * timing.tau_c as usize + pos as usize - 1;
        for k in 0..k_count {
            for (l, d) in buf.iter_mut().enumerate().take(l_count) {
                *d = residual_phase(traj, comp, i, k, l, timing);
            }
            acc.record(n, k, &buf[..l_count]);
        }
    }
}

fn run_single_ap(setup: &TrialSetup, inputs: &RateInputs) -> Result<ResidualPhaseStats> {
    let c = &setup.config;
    let timing = setup.timing();
    let mut traj = initial_trajectory(setup, 1);
    let mut pn = phase_streams(setup, 1);
    let mut pilot_rng = stream(c.master_seed, setup.trial, Purpose::DownlinkPilot, 0);
    let noisy = c.compensation == CompensationPolicy::Pilot;
    let mut comp = CompensationState::new(1, c.num_ues, c.compensation);
    let mut acc = DeltaAccumulator::new(inputs);
    let mut buf = vec![Complex64::new(0.0, 0.0); 1];
    let tau_c = timing.tau_c;
    let pilot = timing.downlink_pilot();
    for frame in 0..(c.warmup_frames + c.frames_per_trial) as u64 {
        traj.discard_before(frame * tau_c);
        traj.advance_ap(0, tau_c as usize, &mut pn[0]);
        let i = timing.global(frame, pilot);
        refresh_psi(
            &traj,
            &mut comp,
            inputs,
            &timing,
            i,
            pilot as usize - 1,
            noisy,
            &mut pilot_rng,
        );
        if frame >= c.warmup_frames as u64 {
            record_slot(&mut acc, &traj, &comp, &timing, frame, 0, &mut buf);
            acc.end_frame();
        }
    }
    acc.finish()
}

/// The two calibration receive chains of one edge.
struct EdgeLinks {
    fwd: CalibrationLink,
    bwd: CalibrationLink,
}

/// Receive chains for every edge, following the schedule's transmissions.
fn build_links(setup: &TrialSetup, schedule: &Schedule) -> Result<Vec<EdgeLinks>> {
    let c = &setup.config;
    let graph = &schedule.graph;
    let t = schedule.timing;
    let ch = &setup.channels;
    let masters: Vec<Option<CalSignal>> = (0..graph.num_nodes())
        .map(|l| {
            if schedule.slots.iter().any(|s| s.masters.contains(&l)) {
                CalSignal::new(l, graph.neighbors(l), ch, c.rho_ap).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let signal_for = |tx: usize, rx: usize, pos: u64| -> Result<CalSignal> {
        if pos == t.i1() {
            Ok(masters[tx].clone().expect("i1 transmitter is a master"))
        } else {
            CalSignal::new(tx, &[rx], ch, c.rho_ap)
        }
    };
    let mut links = Vec::with_capacity(graph.num_edges());
    for (e, &(l1, l2)) in graph.edges().iter().enumerate() {
        let sf = signal_for(l1, l2, schedule.fwd[e].pos)?;
        let sb = signal_for(l2, l1, schedule.bwd[e].pos)?;
        let mut fwd = CalibrationLink::new(&sf, l2, ch.g(l2, l1), ch.g(l2, l1))?;
        let mut bwd = CalibrationLink::new(&sb, l1, ch.g(l1, l2), ch.g(l1, l2))?;
        if c.mu_variance == MuVarianceMode::LowerEndpoint {
            let x = sf.waveform();
            let vf = measurement_variance(ch.g(l2, l1), sf.beam_for(l2).unwrap(), x);
            let vb = measurement_variance(ch.g(l1, l2), sb.beam_for(l1).unwrap(), x);
            fwd = fwd.with_variance(vf);
            bwd = bwd.with_variance(vb);
        }
        links.push(EdgeLinks { fwd, bwd });
    }
    Ok(links)
}

/// Cycle-consistent initial offsets: potentials along a BFS tree from AP 0,
/// then every edge unwrapped against the potential difference.
fn tree_consistent(schedule: &Schedule, raw: &[f64]) -> DVector<f64> {
    let graph = &schedule.graph;
    let l = graph.num_nodes();
    let mut pot = vec![f64::NAN; l];
    pot[0] = 0.0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &w in graph.neighbors(v) {
            if pot[w].is_nan() {
                let e = graph.edge_index(v, w).unwrap();
                let (l1, _) = graph.edges()[e];
                // alpha_e ~ phi_l2 - phi_l1.
                pot[w] = if l1 == v {
                    pot[v] + raw[e]
                } else {
                    pot[v] - raw[e]
                };
                queue.push_back(w);
            }
        }
    }
    DVector::from_iterator(
        graph.num_edges(),
        graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(a, b))| unwrap_step(pot[b] - pot[a], raw[e])),
    )
}

/// Drift part of the variance of one raw edge measurement relative to the
/// phase at its own update instant.
fn xi_diag(model: CovarianceModel, t: EdgeTimes, i: u64, i_ref: u64, s2: f64) -> f64 {
    match model {
        CovarianceModel::Printed => sigma_xi(&[(0, 1)], &[t], i, i_ref, s2)[(0, 0)],
        CovarianceModel::Exact => exact_sigma_xi(&[(0, 1)], &[t], i, i_ref, s2)[(0, 0)],
    }
}

fn run_calibrated(
    setup: &TrialSetup,
    inputs: &RateInputs,
    estimator: Estimator,
    mut trace: Option<&mut FilterTrace>,
) -> Result<ResidualPhaseStats> {
    let c = &setup.config;
    if c.warmup_frames == 0 {
        return Err(invalid(
            "warmup_frames must be at least 1 to initialise the offset estimates",
        ));
    }
    let schedule = setup
        .schedule
        .as_ref()
        .expect("calibrated inputs imply a schedule");
    let links = build_links(setup, schedule)?;
    let timing = schedule.timing;
    let tau_c = timing.tau_c;
    let frame_slots = schedule.frame_slots as u64;
    let l_count = c.num_aps;
    let m = schedule.graph.num_edges();
    let all_edges = schedule.graph.edges().to_vec();
    let b = schedule.graph.incidence();
    let s2 = setup.sigma_nu_sq;
    let genie = c.compensation == CompensationPolicy::Genie;

    let mut traj = initial_trajectory(setup, l_count);
    let mut pn = phase_streams(setup, l_count);
    let mut meas_rng = stream(c.master_seed, setup.trial, Purpose::Measurement, 0);
    let mut pilot_rng = stream(c.master_seed, setup.trial, Purpose::DownlinkPilot, 0);
    let mut comp = CompensationState::new(l_count, c.num_ues, c.compensation);
    let mut acc = DeltaAccumulator::new(inputs);
    let mut buf = vec![Complex64::new(0.0, 0.0); l_count];

    let mut last_fwd: Vec<Option<(DirectionalMeasurement, u64)>> = vec![None; m];
    let mut last_bwd: Vec<Option<(DirectionalMeasurement, u64)>> = vec![None; m];
    // Latest unwrapped raw offset and its error variance per edge.
    let mut raw: Vec<f64> = vec![f64::NAN; m];
    let mut raw_var: Vec<f64> = vec![f64::NAN; m];
    let mut kalman: Option<KalmanState> = None;
    let mut direct_ready = false;

    let pilot = timing.downlink_pilot();
    let total_frames = (c.warmup_frames + c.frames_per_trial) as u64;
    for frame in 0..total_frames {
        traj.discard_before(frame * frame_slots * tau_c);
        for (l, rng) in pn.iter_mut().enumerate() {
            traj.advance_ap(l, (frame_slots * tau_c) as usize, rng);
        }
        let recording = frame >= c.warmup_frames as u64;
        for s in 0..schedule.frame_slots {
            let gs = frame * frame_slots + s as u64;
            let i_pilot = timing.global(gs, pilot);
            let n_pilot = s * tau_c as usize + pilot as usize - 1;
            refresh_psi(
                &traj,
                &mut comp,
                inputs,
                &timing,
                i_pilot,
                n_pilot,
                !genie,
                &mut pilot_rng,
            );
            if recording {
                record_slot(&mut acc, &traj, &comp, &timing, gs, s, &mut buf);
            }
            let Some(j) = schedule.measurement_at(s) else {
                continue;
            };
            let slot = &schedule.slots[j];
            let i_now = timing.global(gs, timing.i2());
            let i_ref = timing.global(gs, timing.mid_pilot() as u64);
            if genie {
                for l in 0..l_count {
                    comp.theta[l] = traj.at(l, i_now) + traj.at(l, i_ref);
                }
                continue;
            }
            // Fresh directional measurements of this slot.
            for &e in &slot.edges {
                let lk = &links[e];
                for (tx, store, link) in [
                    (schedule.fwd[e], &mut last_fwd, &lk.fwd),
                    (schedule.bwd[e], &mut last_bwd, &lk.bwd),
                ] {
                    if tx.slot != s {
                        continue;
                    }
                    let t = timing.global(gs, tx.pos);
                    let meas = link.measure(
                        traj.at(link.tx, t),
                        traj.at(link.rx, t),
                        true,
                        &mut meas_rng,
                    )?;
                    store[e] = Some((meas, t));
                }
            }
            let mut measured = Vec::with_capacity(slot.edges.len());
            let mut times = Vec::with_capacity(slot.edges.len());
            let mut bars = Vec::with_capacity(slot.edges.len());
            let mut mu_vars = Vec::with_capacity(slot.edges.len());
            for &e in &slot.edges {
                let (Some((f, tf)), Some((bw, tb))) = (last_fwd[e], last_bwd[e]) else {
                    continue;
                };
                let rec = MeasurementRecord {
                    edge: all_edges[e],
                    fwd: f,
                    bwd: bw,
                    t_fwd: tf,
                    t_bwd: tb,
                };
                let value = bidirectional_difference(&rec);
                let unwrapped = match &kalman {
                    Some(st) if estimator == Estimator::Kalman => {
                        unwrap_step(st.alpha_hat[e], value)
                    }
                    _ if raw[e].is_nan() => value,
                    _ => unwrap_step(raw[e], value),
                };
                let times_e = crate::schedule::EdgeTimes {
                    t_fwd: tf,
                    t_bwd: tb,
                };
                let mu = f.variance + bw.variance;
                raw[e] = unwrapped;
                raw_var[e] = mu + xi_diag(c.covariance_model, times_e, i_now, i_ref, s2);
                measured.push(e);
                times.push(times_e);
                bars.push(unwrapped);
                mu_vars.push(mu);
            }
            let ready = match estimator {
                Estimator::Kalman => kalman.is_some(),
                Estimator::Direct => direct_ready,
            };
            if !ready {
                continue;
            }
            let (alpha, p) = match estimator {
                Estimator::Kalman => {
                    let state = kalman.as_ref().unwrap();
                    let assemble = match c.covariance_model {
                        CovarianceModel::Printed => NoiseCovariances::assemble,
                        CovarianceModel::Exact => NoiseCovariances::assemble_exact,
                    };
                    let cov = assemble(
                        &all_edges, &measured, &times, &mu_vars, slot.gap, i_now, i_ref, &timing,
                        s2,
                    );
                    let a = crate::schedule::selection_matrix(&measured, m);
                    let (next, info) = kalman_update(state, &DVector::from_vec(bars), &a, &cov)
                        .map_err(|e| e.context(format!("filter update at sample {i_now}")))?;
                    if let Some(t) = trace.as_deref_mut() {
                        t.record(i_now, &next, &measured, &info);
                    }
                    let out = (next.alpha_hat.clone(), next.p_post.clone());
                    kalman = Some(next);
                    out
                }
                Estimator::Direct => (
                    DVector::from_column_slice(&raw),
                    DMatrix::from_diagonal(&DVector::from_column_slice(&raw_var)),
                ),
            };
            let sol = solve_phases(&alpha, &p, &b)?;
            comp.theta.copy_from_slice(sol.phi_hat.as_slice());
        }
        if recording {
            acc.end_frame();
        }
        if frame + 1 == c.warmup_frames as u64 && !genie {
            // The schedule measures both directions of every edge within a frame.
            debug_assert!(raw.iter().all(|v| v.is_finite()));
            let alpha0 = tree_consistent(schedule, &raw);
            raw.copy_from_slice(alpha0.as_slice());
            let p0 = DMatrix::from_diagonal(&DVector::from_column_slice(&raw_var));
            let sol = solve_phases(&alpha0, &p0, &b)?;
            comp.theta.copy_from_slice(sol.phi_hat.as_slice());
            match estimator {
                Estimator::Kalman => {
                    kalman = Some(KalmanState {
                        alpha_hat: alpha0,
                        p_post: p0,
                        n: 0,
                    })
                }
                Estimator::Direct => direct_ready = true,
            }
        }
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{evaluate_se, Beamformer};

    fn small(l: usize) -> SystemConfig {
        SystemConfig {
            num_aps: l,
            antennas: 8,
            num_ues: 2,
            tau_p: 2,
            tau_u: 46,
            tau_d: 46,
            frames_per_trial: 12,
            ..SystemConfig::default()
        }
    }

    #[test]
    fn genie_without_drift_is_ideal() {
        let mut c = small(2);
        c.sigma_nu_sq_override = Some(0.0);
        c.compensation = CompensationPolicy::Genie;
        let setup = TrialSetup::generate(&c, 0).unwrap();
        let out = simulate(&setup, Variant::Calibrated(Estimator::Kalman), false).unwrap();
        let ideal = ResidualPhaseStats::ideal(&out.inputs, c.frames_per_trial);
        for bf in [Beamformer::Conjugate, Beamformer::ZeroForcing] {
            let a = evaluate_se(&out.inputs, &out.stats, bf).unwrap();
            let b = evaluate_se(&out.inputs, &ideal, bf).unwrap();
            assert_eq!(a.se, b.se);
        }
    }

    #[test]
    fn filter_tracks_slow_drift() {
        let mut c = small(3);
        c.sigma_nu_sq_override = Some(1e-6);
        let setup = TrialSetup::generate(&c, 1).unwrap();
        let out = simulate(&setup, Variant::Calibrated(Estimator::Kalman), true).unwrap();
        let trace = out.trace.unwrap();
        assert!(!trace.rows.is_empty());
        let n = out.stats.frame_len();
        for k in 0..2 {
            for nn in 0..n {
                if out.stats.is_recorded(nn) {
                    for l in 0..3 {
                        let d = out.stats.mean_delta(k, l, nn).unwrap();
                        assert!(d.norm() > 0.9, "|E[Delta]| = {}", d.norm());
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let c = small(3);
        let a = simulate(
            &TrialSetup::generate(&c, 4).unwrap(),
            Variant::Calibrated(Estimator::Direct),
            false,
        )
        .unwrap();
        let b = simulate(
            &TrialSetup::generate(&c, 4).unwrap(),
            Variant::Calibrated(Estimator::Direct),
            false,
        )
        .unwrap();
        assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn single_ap_uses_one_column() {
        let c = small(3);
        let setup = TrialSetup::generate(&c, 2).unwrap();
        let out = simulate(&setup, Variant::SingleAp, false).unwrap();
        assert_eq!(out.inputs.num_aps(), 1);
        assert_eq!(out.stats.frames, c.frames_per_trial);
    }

    #[test]
    fn tree_initialisation_is_cycle_consistent() {
        let c = SystemConfig {
            m_min: Some(3),
            ..small(3)
        };
        let setup = TrialSetup::generate(&c, 0).unwrap();
        let sched = setup.schedule.as_ref().unwrap();
        assert_eq!(sched.graph.num_edges(), 3);
        // phi = (0, 2.5, -2.8); edge (1,2) arrives wrapped.
        let raw = vec![2.5, -2.8, crate::timing::wrap(-5.3)];
        let a = tree_consistent(sched, &raw);
        // (0,1) + (1,2) - (0,2) closes the triangle.
        let cyc = a[0] + a[2] - a[1];
        assert!(cyc.abs() < 1e-12, "{cyc}");
    }
}
