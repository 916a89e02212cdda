//! Counter-based derivation of independent random streams.
//!
//! Every stream is keyed by `(master_seed, trial, purpose, index)` and mixed
//! with the SplitMix64 finalizer, so any trial or AP can be regenerated
//! without replaying the others. Swept parameters (AP count excepted, since
//! it changes the placement itself) never enter the key, which couples
//! randomness across grid points.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Placement = 1,
    Shadowing = 2,
    InterApChannel = 3,
    /// One stream per AP oscillator.
    PhaseNoise = 4,
    /// Calibration receiver noise.
    Measurement = 5,
    /// Downlink demodulation-pilot noise.
    DownlinkPilot = 6,
    InitialPhase = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit seed of one stream.
pub fn derive_seed(master: u64, trial: u64, purpose: Purpose, index: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ trial);
    h = splitmix64(h ^ purpose as u64);
    splitmix64(h ^ index)
}

/// ChaCha8 generator for one stream.
pub fn stream(master: u64, trial: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, trial, purpose, index))
}
