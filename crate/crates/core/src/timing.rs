//! Slot timing and angle arithmetic.
//!
//! Sample indices are 1-based everywhere in this crate: global sample `i`
//! belongs to slot `(i - 1) / tau_c` (0-based slot counter) and has
//! within-slot position `(i - 1) % tau_c + 1`. Sample 0 is the initial state
//! of every phase trajectory and is never transmitted on.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use crate::config::SystemConfig;

/// Within-slot positions of the pilot, calibration and downlink samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotTiming {
    pub tau_c: u64,
    pub tau_p: u64,
    pub tau_u: u64,
    pub tau_d: u64,
    pub tau_g: u64,
}

impl SlotTiming {
    pub fn from_config(c: &SystemConfig) -> Self {
        Self {
            tau_c: c.tau_c as u64,
            tau_p: c.tau_p as u64,
            tau_u: c.tau_u as u64,
            tau_d: c.tau_d as u64,
            tau_g: c.tau_g as u64,
        }
    }

    /// Within-slot index where masters transmit their calibration signal.
    pub fn i1(&self) -> u64 {
        self.tau_p + self.tau_u
    }

    /// Within-slot index where responders answer.
    pub fn i2(&self) -> u64 {
        self.tau_p + self.tau_u + self.tau_g + self.tau_d
    }

    /// Within-slot index of UE `k`'s uplink pilot (`k` is 1-based).
    pub fn pilot_index(&self, k: usize) -> u64 {
        debug_assert!(k >= 1 && k as u64 <= self.tau_p);
        k as u64
    }

    /// The reference pilot `floor(K/2)` used to approximate all pilot times.
    ///
    /// Clamped to 1 when there is a single UE.
    pub fn mid_pilot(&self) -> usize {
        ((self.tau_p / 2) as usize).max(1)
    }

    /// Within-slot index of the downlink demodulation pilot.
    pub fn downlink_pilot(&self) -> u64 {
        self.tau_p + self.tau_u + self.tau_g + 1
    }

    /// Within-slot downlink samples, pilot included.
    pub fn downlink(&self) -> RangeInclusive<u64> {
        self.downlink_pilot()..=self.i2()
    }

    /// Global index of within-slot position `pos` in 0-based slot `slot`.
    pub fn global(&self, slot: u64, pos: u64) -> u64 {
        slot * self.tau_c + pos
    }
}

/// Global index of the most recent pilot of UE `k` (1-based) before sample `i`.
///
/// Evaluates `i - 1 - ((i - 1 - k) mod tau_c)` with a non-negative modulus.
/// Results before sample 1 are clamped to `k`, the first pilot occurrence.
pub fn latest_pilot_index(i: u64, k: usize, tau_c: u64) -> u64 {
    let i = i as i64;
    let k = k as i64;
    let tc = tau_c as i64;
    let v = i - 1 - (i - 1 - k).rem_euclid(tc);
    if v < 1 {
        k as u64
    } else {
        v as u64
    }
}

/// Maps an angle into `[-pi, pi)`.
pub fn wrap(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid may round up to exactly 2*pi for tiny negative inputs.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}
