//! System parameters in normalized units.
//!
//! Powers are stored as linear ratios to the receiver noise power, so a unit
//! variance noise sample is the reference everywhere downstream. File parsing
//! (with mW/dBm inputs) lives in [`crate::experiments::file`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// How a UE learns its common downlink phase constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CompensationPolicy {
    /// Oracle compensation: AP terms use the true phase sums at each reset
    /// and UEs know the residual common constant exactly.
    Genie,
    /// UEs estimate the constant from one downlink pilot per slot.
    #[default]
    Pilot,
}

/// Which transmitted signal enters the measurement-error variance of a
/// directional calibration measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MuVarianceMode {
    /// The signal actually sent in that direction (composite beam for a
    /// master, single beam for a responder).
    #[default]
    PerDirection,
    /// The signal sent by the lower-indexed endpoint, used for both directions.
    LowerEndpoint,
}

/// How the drift covariances of stale measurements are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceModel {
    /// Closed forms that assume both directions of an edge are fresh.
    Printed,
    /// Interval overlaps of the Wiener increments, valid for any timing.
    #[default]
    Exact,
}

/// Where measurement slots sit inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SlotPlacement {
    /// Measurement slots occupy the first `n_m` slots of the frame.
    #[default]
    First,
    /// Measurement slot `j` sits at slot `floor(j * F / n_m)`.
    Even,
}

/// All scalar parameters of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    /// Number of APs, `L`.
    pub num_aps: usize,
    /// Antennas per AP, `N`.
    pub antennas: usize,
    /// Number of single-antenna UEs, `K`.
    pub num_ues: usize,
    pub tau_c: usize,
    pub tau_p: usize,
    pub tau_u: usize,
    pub tau_d: usize,
    pub tau_g: usize,
    /// Slots per frame without any calibration, `F - n_m`.
    pub unbroken_slots: usize,
    pub slot_placement: SlotPlacement,
    /// AP transmit power over noise power (linear).
    pub rho_ap: f64,
    /// UE transmit power over noise power (linear).
    pub rho_ue: f64,
    /// Phase-noise spectrum level in dBc/Hz.
    pub s_pn_dbc_hz: f64,
    /// Offset frequency of the spectrum level, Hz.
    pub delta_f: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Per-sample Wiener increment variance in rad², bypassing the spectrum formula.
    pub sigma_nu_sq_override: Option<f64>,
    /// Minimum number of graph edges; `None` means `L - 1`.
    pub m_min: Option<usize>,
    /// Side of the wrapped-around square, meters.
    pub area_side: f64,
    pub min_ap_separation: f64,
    pub placement_retries: usize,
    pub trials: usize,
    pub frames_per_trial: usize,
    /// Frames simulated before any statistic is collected.
    pub warmup_frames: usize,
    pub master_seed: u64,
    pub compensation: CompensationPolicy,
    pub mu_variance: MuVarianceMode,
    pub covariance_model: CovarianceModel,
}

/// Converts a power in mW to a linear ratio over a noise floor given in dBm.
pub fn normalized_power(power_mw: f64, noise_dbm: f64) -> f64 {
    power_mw / 10f64.powf(noise_dbm / 10.0)
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_aps: 2,
            antennas: 64,
            num_ues: 10,
            tau_c: 100,
            tau_p: 10,
            tau_u: 42,
            tau_d: 42,
            tau_g: 3,
            unbroken_slots: 0,
            slot_placement: SlotPlacement::First,
            rho_ap: normalized_power(200.0, -94.0),
            rho_ue: normalized_power(100.0, -94.0),
            s_pn_dbc_hz: -80.0,
            delta_f: 1e5,
            carrier_hz: 2e9,
            bandwidth_hz: 2e7,
            sigma_nu_sq_override: None,
            m_min: None,
            area_side: 500.0,
            min_ap_separation: 50.0,
            placement_retries: 10_000,
            trials: 50,
            frames_per_trial: 200,
            warmup_frames: 1,
            master_seed: 0,
            compensation: CompensationPolicy::Pilot,
            mu_variance: MuVarianceMode::PerDirection,
            covariance_model: CovarianceModel::Exact,
        }
    }
}

impl SystemConfig {
    /// Minimum edge count actually used by the graph builder.
    pub fn effective_m_min(&self) -> usize {
        self.m_min
            .unwrap_or(self.num_aps.saturating_sub(1))
            .max(self.num_aps.saturating_sub(1))
    }

    /// Checks the slot identity and basic ranges.
    pub fn validate(&self) -> Result<()> {
        if self.num_aps == 0 {
            return Err(invalid("num_aps must be at least 1"));
        }
        if self.antennas == 0 {
            return Err(invalid("antennas must be at least 1"));
        }
        if self.num_ues == 0 {
            return Err(invalid("num_ues must be at least 1"));
        }
        if self.tau_p != self.num_ues {
            return Err(invalid(format!(
                "tau_p ({}) must equal num_ues ({})",
                self.tau_p, self.num_ues
            )));
        }
        let used = self.tau_p + self.tau_u + self.tau_d + 2 * self.tau_g;
        if used != self.tau_c {
            return Err(invalid(format!(
                "tau_p + tau_u + tau_d + 2*tau_g = {used} but tau_c = {}",
                self.tau_c
            )));
        }
        if self.tau_d == 0 || self.tau_u == 0 {
            return Err(invalid("tau_u and tau_d must be positive"));
        }
        if self.tau_d < self.tau_g + 2 {
            return Err(invalid(format!(
                "tau_d ({}) must exceed tau_g + 1 so a master keeps a pilot sample",
                self.tau_d
            )));
        }
        for (name, v) in [
            ("rho_ap", self.rho_ap),
            ("rho_ue", self.rho_ue),
            ("area_side", self.area_side),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_ap_separation.is_nan() || self.min_ap_separation < 0.0 {
            return Err(invalid("min_ap_separation must be non-negative"));
        }
        if let Some(s) = self.sigma_nu_sq_override {
            if !(s.is_finite() && s >= 0.0) {
                return Err(invalid(format!(
                    "sigma_nu_sq_override must be finite and non-negative, got {s}"
                )));
            }
        }
        let max_edges = self.num_aps * (self.num_aps - 1) / 2;
        if let Some(m) = self.m_min {
            if m > max_edges {
                return Err(invalid(format!(
                    "m_min = {m} exceeds the {max_edges} possible edges among {} APs",
                    self.num_aps
                )));
            }
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SystemConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tau_p + c.tau_u + c.tau_d + 2 * c.tau_g, c.tau_c);
    }

    #[test]
    fn dbm_normalization() {
        // 200 mW is 23.0103 dBm; 10^((23.0103 + 94) / 10).
        let expected = 10f64.powf((10.0 * 200f64.log10() + 94.0) / 10.0);
        let got = normalized_power(200.0, -94.0);
        assert!((got / expected - 1.0).abs() < 1e-12);
        let rounded = 10f64.powf((23.01 + 94.0) / 10.0);
        assert!((got / rounded - 1.0).abs() < 1e-4);
    }

    #[test]
    fn slot_identity_violation_rejected() {
        let c = SystemConfig {
            tau_d: 41,
            ..SystemConfig::default()
        };
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn pilot_length_must_match_ues() {
        let c = SystemConfig {
            num_ues: 9,
            ..SystemConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn m_min_bounds() {
        let c = SystemConfig {
            num_aps: 4,
            m_min: Some(7),
            ..SystemConfig::default()
        };
        assert!(c.validate().is_err());
        let c = SystemConfig {
            num_aps: 4,
            m_min: Some(1),
            ..SystemConfig::default()
        };
        assert_eq!(c.effective_m_min(), 3);
    }
}
