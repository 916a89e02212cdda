//! Over-the-air phase calibration for distributed MIMO in a TDD flow.

pub mod calibration;
pub mod config;
pub mod error;
pub mod experiments;
pub mod phase_noise;
pub mod propagation;
pub mod schedule;
pub mod seed;
pub mod sim;
pub mod spectral;
pub mod timing;
pub mod topology;
pub mod tracking;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/phase-noise.md")]
    pub mod phase_noise {}
    #[doc = include_str!("../../../book/src/topology.md")]
    pub mod topology {}
    #[doc = include_str!("../../../book/src/tracking.md")]
    pub mod tracking {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    pub mod spectral {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
