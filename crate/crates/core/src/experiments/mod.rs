//! Scenario presets, orchestration over grid points and trials, aggregation
//! and CSV output.

pub mod file;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{SlotPlacement, SystemConfig};
use crate::error::{invalid, Error, Result};
use crate::sim::{simulate, Estimator, TrialSetup, Variant};
use crate::spectral::{evaluate_se, Beamformer, SeResult};
use crate::tracking::FilterTrace;

pub use file::{load_config, parse_config, ConfigFile, ScenarioSection, SystemSection};

/// Trials at full scale.
pub const FULL_SCALE_TRIALS: usize = 200;
/// Frames per trial at full scale.
pub const FULL_SCALE_FRAMES: usize = 1000;

/// Named experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    /// Per-UE SE distribution with two APs.
    CdfTwoAp,
    /// Mean SE as unbroken slots are inserted.
    SeVsFrameLength,
    /// Mean SE across oscillator quality.
    SeVsPnLevel,
    /// Mean SE as the number of APs grows.
    SeVsNumAps,
    /// A single point taken from the configuration.
    Custom,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::CdfTwoAp,
        ScenarioName::SeVsFrameLength,
        ScenarioName::SeVsPnLevel,
        ScenarioName::SeVsNumAps,
        ScenarioName::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::CdfTwoAp => "cdf_two_ap",
            ScenarioName::SeVsFrameLength => "se_vs_frame_length",
            ScenarioName::SeVsPnLevel => "se_vs_pn_level",
            ScenarioName::SeVsNumAps => "se_vs_num_aps",
            ScenarioName::Custom => "custom",
        }
    }
}

impl std::str::FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioName::ALL.iter().map(|n| n.as_str()).collect();
                invalid(format!(
                    "unknown scenario {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// A system simulated at every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    NoPhaseNoise,
    SingleAp,
    DirectEstimate,
    Kalman,
}

impl Baseline {
    pub fn variant(&self) -> Variant {
        match self {
            Baseline::NoPhaseNoise => Variant::NoPhaseNoise,
            Baseline::SingleAp => Variant::SingleAp,
            Baseline::DirectEstimate => Variant::Calibrated(Estimator::Direct),
            Baseline::Kalman => Variant::Calibrated(Estimator::Kalman),
        }
    }
}

/// How per-UE SE values are summarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// 100 evenly spaced quantiles.
    Cdf,
    /// Mean with its standard error.
    Mean,
}

/// Where the phase increment variance of a grid point comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PnModel {
    /// `anchor_sigma_nu_sq * 10^((S_PN - anchor_dbc_hz) / 10)`.
    #[default]
    Anchored,
    /// [`crate::phase_noise::compute_sigma_nu_sq`] without override.
    Printed,
}

/// One point of a parameter sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub num_aps: usize,
    pub s_pn_dbc_hz: f64,
    pub unbroken_slots: usize,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub grid: Vec<GridPoint>,
    pub baselines: Vec<Baseline>,
    pub mode: AggregateMode,
    pub slot_placement: SlotPlacement,
    pub pn_model: PnModel,
    pub anchor_sigma_nu_sq: f64,
    pub anchor_dbc_hz: f64,
}

fn cartesian(aps: &[usize], pn: &[f64], unbroken: &[usize]) -> Vec<GridPoint> {
    let mut grid = Vec::new();
    for &num_aps in aps {
        for &s_pn_dbc_hz in pn {
            for &unbroken_slots in unbroken {
                grid.push(GridPoint {
                    num_aps,
                    s_pn_dbc_hz,
                    unbroken_slots,
                });
            }
        }
    }
    grid
}

impl Scenario {
    /// Preset `name`, adjusted by the `[scenario]` table.
    pub fn resolve(
        name: ScenarioName,
        system: &SystemConfig,
        section: &ScenarioSection,
    ) -> Result<Self> {
        use Baseline::*;
        let (aps, pn, unbroken, baselines, mode, placement): (
            Vec<usize>,
            Vec<f64>,
            Vec<usize>,
            _,
            _,
            _,
        ) = match name {
            ScenarioName::CdfTwoAp => (
                vec![2],
                vec![-80.0],
                vec![0],
                vec![NoPhaseNoise, SingleAp, DirectEstimate, Kalman],
                AggregateMode::Cdf,
                system.slot_placement,
            ),
            ScenarioName::SeVsFrameLength => (
                vec![2, 4],
                vec![-80.0],
                vec![0, 1, 2, 4, 8, 16],
                vec![Kalman],
                AggregateMode::Mean,
                SlotPlacement::Even,
            ),
            ScenarioName::SeVsPnLevel => (
                vec![2, 4, 16],
                vec![-120.0, -110.0, -100.0, -90.0, -80.0],
                vec![0],
                vec![Kalman, DirectEstimate],
                AggregateMode::Mean,
                system.slot_placement,
            ),
            ScenarioName::SeVsNumAps => (
                (2..=16).collect(),
                vec![-80.0],
                vec![0],
                vec![Kalman],
                AggregateMode::Mean,
                system.slot_placement,
            ),
            ScenarioName::Custom => (
                vec![system.num_aps],
                vec![system.s_pn_dbc_hz],
                vec![system.unbroken_slots],
                vec![Kalman],
                AggregateMode::Mean,
                system.slot_placement,
            ),
        };
        let aps = section.num_aps.clone().unwrap_or(aps);
        let pn = section.s_pn_dbc_hz.clone().unwrap_or(pn);
        let unbroken = section.unbroken_slots.clone().unwrap_or(unbroken);
        let s = Self {
            name,
            grid: cartesian(&aps, &pn, &unbroken),
            baselines: section.baselines.clone().unwrap_or(baselines),
            mode: section.mode.unwrap_or(mode),
            slot_placement: placement,
            pn_model: section.pn_model,
            anchor_sigma_nu_sq: section.anchor_sigma_nu_sq,
            anchor_dbc_hz: section.anchor_dbc_hz,
        };
        s.validate(system)?;
        Ok(s)
    }

    fn validate(&self, system: &SystemConfig) -> Result<()> {
        if self.grid.is_empty() {
            return Err(invalid("scenario grid is empty"));
        }
        if self.baselines.is_empty() {
            return Err(invalid("scenario.baselines is empty"));
        }
        if !(self.anchor_sigma_nu_sq >= 0.0 && self.anchor_sigma_nu_sq.is_finite()) {
            return Err(invalid(
                "scenario.anchor_sigma_nu_sq must be finite and non-negative",
            ));
        }
        for p in &self.grid {
            let c = self.config_at(system, p);
            c.validate()
                .map_err(|e| e.context(format!("grid point {}", describe(p))))?;
            let calibrated = self
                .baselines
                .iter()
                .any(|b| matches!(b, Baseline::Kalman | Baseline::DirectEstimate));
            if calibrated && p.num_aps < 2 {
                return Err(invalid(format!(
                    "grid point {}: calibration baselines need at least two APs",
                    describe(p)
                )));
            }
        }
        Ok(())
    }

    /// System parameters of grid point `p`.
    pub fn config_at(&self, system: &SystemConfig, p: &GridPoint) -> SystemConfig {
        let mut c = system.clone();
        c.num_aps = p.num_aps;
        c.s_pn_dbc_hz = p.s_pn_dbc_hz;
        c.unbroken_slots = p.unbroken_slots;
        c.slot_placement = self.slot_placement;
        if c.sigma_nu_sq_override.is_none() && self.pn_model == PnModel::Anchored {
            c.sigma_nu_sq_override = Some(
                self.anchor_sigma_nu_sq * 10f64.powf((p.s_pn_dbc_hz - self.anchor_dbc_hz) / 10.0),
            );
        }
        c
    }

    /// Replaces the calibrated baselines by `estimator` alone.
    pub fn restrict_estimator(&mut self, estimator: Estimator) {
        let keep = match estimator {
            Estimator::Kalman => Baseline::Kalman,
            Estimator::Direct => Baseline::DirectEstimate,
        };
        let mut out = Vec::new();
        for b in &self.baselines {
            let b = match b {
                Baseline::Kalman | Baseline::DirectEstimate => keep,
                other => *other,
            };
            if !out.contains(&b) {
                out.push(b);
            }
        }
        self.baselines = out;
    }
}

fn describe(p: &GridPoint) -> String {
    format!(
        "(num_aps = {}, s_pn_dbc_hz = {}, unbroken_slots = {})",
        p.num_aps, p.s_pn_dbc_hz, p.unbroken_slots
    )
}

/// Desk or full scale.
pub fn apply_scale(config: &mut SystemConfig, full_scale: bool) {
    if full_scale {
        config.trials = FULL_SCALE_TRIALS;
        config.frames_per_trial = FULL_SCALE_FRAMES;
    }
}

/// One per-UE SE value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scenario: &'static str,
    pub num_aps: usize,
    pub s_pn_dbc_hz: f64,
    pub unbroken_slots: usize,
    /// Frame length `F` in slots.
    pub frame_slots: usize,
    pub trial: u64,
    pub ue: usize,
    pub beamformer: &'static str,
    /// Calibrated estimator label, or the baseline name.
    pub estimator: &'static str,
    pub se: f64,
}

/// All per-UE values of a scenario run, in grid, trial, variant, beamformer, UE order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Trial-0 details of the first grid point.
#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub schedule_dump: Option<String>,
    pub trace: Option<FilterTrace>,
    /// `(estimator label, result)`.
    pub se: Vec<(&'static str, SeResult)>,
}

/// What to run besides the scenario itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub beamformers: Vec<Beamformer>,
    pub diagnostics: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            beamformers: vec![Beamformer::Conjugate, Beamformer::ZeroForcing],
            diagnostics: false,
        }
    }
}

struct TrialResult {
    rows: Vec<ResultRow>,
    diagnostics: Option<Diagnostics>,
}

fn run_trial(
    scenario: &Scenario,
    config: &SystemConfig,
    point: &GridPoint,
    trial: u64,
    opts: &RunOptions,
    keep_diagnostics: bool,
) -> Result<TrialResult> {
    let setup = TrialSetup::generate(config, trial)?;
    let frame_slots = setup.schedule.as_ref().map_or(1, |s| s.frame_slots);
    let mut rows = Vec::new();
    let mut diag = keep_diagnostics.then(|| Diagnostics {
        schedule_dump: setup.schedule.as_ref().map(|s| s.dump()),
        ..Diagnostics::default()
    });
    for b in &scenario.baselines {
        let variant = b.variant();
        let out = simulate(&setup, variant, keep_diagnostics)?;
        for &bf in &opts.beamformers {
            let se = evaluate_se(&out.inputs, &out.stats, bf)?;
            for (ue, &v) in se.se.iter().enumerate() {
                rows.push(ResultRow {
                    scenario: scenario.name.as_str(),
                    num_aps: point.num_aps,
                    s_pn_dbc_hz: point.s_pn_dbc_hz,
                    unbroken_slots: point.unbroken_slots,
                    frame_slots,
                    trial,
                    ue,
                    beamformer: bf.label(),
                    estimator: variant.label(),
                    se: v,
                });
            }
            if let Some(d) = diag.as_mut() {
                d.se.push((variant.label(), se));
            }
        }
        if let (Some(d), Some(t)) = (diag.as_mut(), out.trace) {
            d.trace = Some(t);
        }
    }
    Ok(TrialResult {
        rows,
        diagnostics: diag,
    })
}

/// Runs every grid point and trial in parallel. Output order and values do not
/// depend on scheduling.
pub fn run_scenario(
    system: &SystemConfig,
    scenario: &Scenario,
    opts: &RunOptions,
) -> Result<(ResultTable, Option<Diagnostics>)> {
    scenario.validate(system)?;
    if opts.beamformers.contains(&Beamformer::ZeroForcing) && system.antennas <= system.num_ues {
        return Err(invalid(format!(
            "zero-forcing needs more antennas ({}) than UEs ({})",
            system.antennas, system.num_ues
        )));
    }
    let jobs: Vec<(usize, u64)> = (0..scenario.grid.len())
        .flat_map(|g| (0..system.trials as u64).map(move |t| (g, t)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(g, t)| {
            let p = &scenario.grid[g];
            let c = scenario.config_at(system, p);
            let keep = opts.diagnostics && g == 0 && t == 0;
            run_trial(scenario, &c, p, t, opts, keep)
                .map_err(|e| e.context(format!("grid point {}, trial {t}", describe(p))))
        })
        .collect::<Result<_>>()?;
    let mut table = ResultTable::default();
    let mut diagnostics = None;
    for r in results {
        table.rows.extend(r.rows);
        if r.diagnostics.is_some() {
            diagnostics = r.diagnostics;
        }
    }
    Ok((table, diagnostics))
}

/// Summary of one `(grid point, beamformer, estimator)` group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: &'static str,
    pub num_aps: usize,
    pub s_pn_dbc_hz: f64,
    pub unbroken_slots: usize,
    pub frame_slots: usize,
    pub beamformer: &'static str,
    pub estimator: &'static str,
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
    /// Cumulative probability in CDF mode, empty in mean mode.
    pub probability: Option<f64>,
    /// Quantile at `probability` in CDF mode, empty in mean mode.
    pub quantile: Option<f64>,
}

/// Sample mean and standard error of the mean (zero for a single value).
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Empirical quantiles at probabilities `1/100, 2/100, ..., 1`: the smallest
/// sample whose empirical CDF reaches the probability.
pub fn cdf_quantiles(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (1..=100)
        .map(|q| {
            let p = q as f64 / 100.0;
            let idx = ((p * n as f64).ceil() as usize).clamp(1, n) - 1;
            (p, v[idx])
        })
        .collect()
}

/// Groups rows by grid point, beamformer and estimator, in first-seen order.
pub fn aggregate(table: &ResultTable, mode: AggregateMode) -> Vec<SummaryRow> {
    type Key = (usize, u64, usize, &'static str, &'static str);
    let mut order: Vec<Key> = Vec::new();
    let mut groups: std::collections::HashMap<Key, (&ResultRow, Vec<f64>)> = Default::default();
    for r in &table.rows {
        let key = (
            r.num_aps,
            r.s_pn_dbc_hz.to_bits(),
            r.unbroken_slots,
            r.beamformer,
            r.estimator,
        );
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                (r, Vec::new())
            })
            .1
            .push(r.se);
    }
    let mut out = Vec::new();
    for key in order {
        let (first, values) = &groups[&key];
        let (mean, std_err) = mean_and_std_err(values);
        let base = SummaryRow {
            scenario: first.scenario,
            num_aps: first.num_aps,
            s_pn_dbc_hz: first.s_pn_dbc_hz,
            unbroken_slots: first.unbroken_slots,
            frame_slots: first.frame_slots,
            beamformer: first.beamformer,
            estimator: first.estimator,
            count: values.len(),
            mean,
            std_err,
            probability: None,
            quantile: None,
        };
        match mode {
            AggregateMode::Mean => out.push(base),
            AggregateMode::Cdf => {
                for (p, q) in cdf_quantiles(values) {
                    out.push(SummaryRow {
                        probability: Some(p),
                        quantile: Some(q),
                        ..base.clone()
                    });
                }
            }
        }
    }
    out
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl ResultTable {
    /// CSV with header
    /// `scenario,num_aps,s_pn_dbc_hz,unbroken_slots,frame_slots,trial,ue,beamformer,estimator,se`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }
}

/// CSV of summary rows.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    write_rows(out, rows)
}

/// Writes `<scenario>.csv` and `summary.csv` into `dir`, plus the trial-0
/// diagnostics when present. Returns the written paths.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    table: &ResultTable,
    diagnostics: Option<&Diagnostics>,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let p = dir.join(name);
        let f = std::fs::File::create(&p)?;
        written.push(p);
        Ok(std::io::BufWriter::new(f))
    };
    table.write_csv(create(&format!("{}.csv", scenario.name.as_str()))?)?;
    write_summary_csv(create("summary.csv")?, &aggregate(table, scenario.mode))?;
    if let Some(d) = diagnostics {
        if let Some(s) = &d.schedule_dump {
            create("schedule.toml")?.write_all(s.as_bytes())?;
        }
        if let Some(t) = &d.trace {
            t.write_csv(create("filter_trace.csv")?)?;
        }
        if !d.se.is_empty() {
            let mut rates = csv::Writer::from_writer(create("rates.csv")?);
            rates.write_record(["estimator", "beamformer", "ue", "n", "rate"])?;
            let mut ue_se = csv::Writer::from_writer(create("ue_se.csv")?);
            ue_se.write_record(["estimator", "beamformer", "ue", "se"])?;
            for (label, r) in &d.se {
                for (k, row) in r.rates.iter().enumerate() {
                    for (n, v) in row.iter().enumerate() {
                        rates.write_record([
                            label,
                            r.beamformer.label(),
                            &k.to_string(),
                            &(n + 1).to_string(),
                            &v.to_string(),
                        ])?;
                    }
                    ue_se.write_record([
                        label,
                        r.beamformer.label(),
                        &k.to_string(),
                        &r.se[k].to_string(),
                    ])?;
                }
            }
            rates.flush()?;
            ue_se.flush()?;
        }
    }
    Ok(written)
}
