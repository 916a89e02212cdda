//! TOML configuration files.
//!
//! Two optional tables, `[system]` and `[scenario]`. Every omitted key keeps
//! its default, so an empty file is a valid configuration. Powers are given in
//! mW (or dBm) together with the noise floor and are normalized here.

use std::path::Path;

use serde::Deserialize;

use crate::config::{
    normalized_power, CompensationPolicy, CovarianceModel, MuVarianceMode, SlotPlacement,
    SystemConfig,
};
use crate::error::{invalid, Result};

use super::{AggregateMode, Baseline, PnModel, ScenarioName};

/// `[system]` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub num_aps: usize,
    pub antennas: usize,
    pub num_ues: usize,
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_u: usize,
    pub tau_d: usize,
    pub tau_g: usize,
    pub unbroken_slots: usize,
    pub slot_placement: SlotPlacement,
    pub ap_power_mw: Option<f64>,
    pub ap_power_dbm: Option<f64>,
    pub ue_power_mw: Option<f64>,
    pub ue_power_dbm: Option<f64>,
    pub noise_dbm: f64,
    pub s_pn_dbc_hz: f64,
    pub delta_f: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Pins the per-sample phase increment variance (rad²).
    pub sigma_nu_sq: Option<f64>,
    pub m_min: Option<usize>,
    pub area_side: f64,
    pub min_ap_separation: f64,
    pub placement_retries: usize,
    pub trials: usize,
    pub frames_per_trial: usize,
    pub warmup_frames: usize,
    pub master_seed: u64,
    pub compensation: CompensationPolicy,
    pub mu_variance: MuVarianceMode,
    pub covariance_model: CovarianceModel,
}

impl Default for SystemSection {
    fn default() -> Self {
        let c = SystemConfig::default();
        Self {
            num_aps: c.num_aps,
            antennas: c.antennas,
            num_ues: c.num_ues,
            tau_c: c.tau_c,
            tau_p: c.tau_p,
            tau_u: c.tau_u,
            tau_d: c.tau_d,
            tau_g: c.tau_g,
            unbroken_slots: c.unbroken_slots,
            slot_placement: c.slot_placement,
            ap_power_mw: None,
            ap_power_dbm: None,
            ue_power_mw: None,
            ue_power_dbm: None,
            noise_dbm: NOISE_DBM,
            s_pn_dbc_hz: c.s_pn_dbc_hz,
            delta_f: c.delta_f,
            carrier_hz: c.carrier_hz,
            bandwidth_hz: c.bandwidth_hz,
            sigma_nu_sq: None,
            m_min: None,
            area_side: c.area_side,
            min_ap_separation: c.min_ap_separation,
            placement_retries: c.placement_retries,
            trials: c.trials,
            frames_per_trial: c.frames_per_trial,
            warmup_frames: c.warmup_frames,
            master_seed: c.master_seed,
            compensation: c.compensation,
            mu_variance: c.mu_variance,
            covariance_model: c.covariance_model,
        }
    }
}

/// Default receiver noise floor, dBm.
pub const NOISE_DBM: f64 = -94.0;
/// Default AP transmit power, mW.
pub const AP_POWER_MW: f64 = 200.0;
/// Default UE transmit power, mW.
pub const UE_POWER_MW: f64 = 100.0;

/// `[scenario]` table. Grid lists replace the preset's grid.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub name: Option<ScenarioName>,
    pub num_aps: Option<Vec<usize>>,
    pub s_pn_dbc_hz: Option<Vec<f64>>,
    pub unbroken_slots: Option<Vec<usize>>,
    pub baselines: Option<Vec<Baseline>>,
    pub mode: Option<AggregateMode>,
    pub pn_model: PnModel,
    /// Increment variance at `anchor_dbc_hz`; scaled linearly in the PN level.
    pub anchor_sigma_nu_sq: f64,
    pub anchor_dbc_hz: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            name: None,
            num_aps: None,
            s_pn_dbc_hz: None,
            unbroken_slots: None,
            baselines: None,
            mode: None,
            pn_model: PnModel::Anchored,
            anchor_sigma_nu_sq: 3.95e-4,
            anchor_dbc_hz: -80.0,
        }
    }
}

/// Both tables of a configuration file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigFile {
    pub system: SystemSection,
    pub scenario: ScenarioSection,
}

fn power(
    name: &str,
    mw: Option<f64>,
    dbm: Option<f64>,
    default_mw: f64,
    noise_dbm: f64,
) -> Result<f64> {
    let mw = match (mw, dbm) {
        (Some(_), Some(_)) => {
            return Err(invalid(format!(
                "system.{name}_power_mw and system.{name}_power_dbm are both set"
            )))
        }
        (Some(mw), None) => mw,
        (None, Some(d)) => return Ok(10f64.powf((d - noise_dbm) / 10.0)),
        (None, None) => default_mw,
    };
    if mw.is_nan() || mw <= 0.0 {
        return Err(invalid(format!(
            "system.{name}_power_mw must be positive, got {mw}"
        )));
    }
    Ok(normalized_power(mw, noise_dbm))
}

impl SystemSection {
    /// Normalized, validated system parameters.
    pub fn to_config(&self) -> Result<SystemConfig> {
        let c = SystemConfig {
            num_aps: self.num_aps,
            antennas: self.antennas,
            num_ues: self.num_ues,
            tau_c: self.tau_c,
            tau_p: self.tau_p,
            tau_u: self.tau_u,
            tau_d: self.tau_d,
            tau_g: self.tau_g,
            unbroken_slots: self.unbroken_slots,
            slot_placement: self.slot_placement,
            rho_ap: power(
                "ap",
                self.ap_power_mw,
                self.ap_power_dbm,
                AP_POWER_MW,
                self.noise_dbm,
            )?,
            rho_ue: power(
                "ue",
                self.ue_power_mw,
                self.ue_power_dbm,
                UE_POWER_MW,
                self.noise_dbm,
            )?,
            s_pn_dbc_hz: self.s_pn_dbc_hz,
            delta_f: self.delta_f,
            carrier_hz: self.carrier_hz,
            bandwidth_hz: self.bandwidth_hz,
            sigma_nu_sq_override: self.sigma_nu_sq,
            m_min: self.m_min,
            area_side: self.area_side,
            min_ap_separation: self.min_ap_separation,
            placement_retries: self.placement_retries,
            trials: self.trials,
            frames_per_trial: self.frames_per_trial,
            warmup_frames: self.warmup_frames,
            master_seed: self.master_seed,
            compensation: self.compensation,
            mu_variance: self.mu_variance,
            covariance_model: self.covariance_model,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Parses configuration text. Errors name the offending key.
pub fn parse_config(text: &str) -> Result<(SystemConfig, ScenarioSection)> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| invalid(e.to_string().trim_end().to_string()))?;
    let system = file.system.to_config()?;
    if let Some(v) = file.system.sigma_nu_sq {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!(
                "system.sigma_nu_sq must be a finite non-negative number, got {v}"
            )));
        }
    }
    Ok((system, file.scenario))
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<(SystemConfig, ScenarioSection)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let (c, s) = parse_config("").unwrap();
        assert_eq!(c, SystemConfig::default());
        assert_eq!(
            (c.tau_c, c.num_ues, c.tau_g, c.tau_p, c.tau_d),
            (100, 10, 3, 10, 42)
        );
        assert_eq!(s, ScenarioSection::default());
    }

    #[test]
    fn dbm_input() {
        let (c, _) = parse_config("[system]\nap_power_dbm = 23.01\n").unwrap();
        let expected = 10f64.powf((23.01 + 94.0) / 10.0);
        assert!((c.rho_ap / expected - 1.0).abs() < 1e-12);
        // 200 mW is 23.0103 dBm.
        let d = SystemConfig::default();
        assert!((d.rho_ap / expected - 1.0).abs() < 1e-4);
    }

    #[test]
    fn slot_identity_violation() {
        let e = parse_config("[system]\ntau_d = 40\n").unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("tau_c"), "{e}");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config("[system]\nnum_apps = 3\n").unwrap_err();
        assert!(e.is_config());
        assert!(e.to_string().contains("num_apps"), "{e}");
    }

    #[test]
    fn scenario_fields() {
        let (_, s) = parse_config(
            "[scenario]\nname = \"se_vs_pn_level\"\ns_pn_dbc_hz = [-120, -80]\nbaselines = [\"kalman\", \"direct_estimate\"]\n",
        )
        .unwrap();
        assert_eq!(s.name, Some(ScenarioName::SeVsPnLevel));
        assert_eq!(s.s_pn_dbc_hz, Some(vec![-120.0, -80.0]));
        assert_eq!(
            s.baselines,
            Some(vec![Baseline::Kalman, Baseline::DirectEstimate])
        );
    }
}
