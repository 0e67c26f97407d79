//! Adaptive radar target localization on synthetic scenes.
//!
//! The pipeline, end to end:
//!
//! 1. [`scenario`] builds a clutter-patch scene and synthesizes per-range-bin
//!    radar returns `Y = β·X + Z` for randomly placed point targets.
//! 2. [`steering`] provides spatial, Doppler, and space-time steering vectors
//!    for the condensed receiver array.
//! 3. [`namf`] estimates sample covariances and sweeps the NAMF test statistic
//!    over an azimuth (× velocity) grid, producing heatmap tensors.
//! 4. [`estimators`] holds the classical baselines (peak-cell midpoint, local
//!    search) and the localization error metric.
//! 5. [`nn`] is a small from-scratch CNN stack (conv / batch-norm / pool /
//!    dense with reverse-mode gradients and Adam) for heatmap regression.
//! 6. [`analysis`] quantifies scenario mismatch via chordal distance between
//!    clutter subspaces.
//! 7. [`experiments`] orchestrates the dataset files, sweeps, and CSV output
//!    behind the CLI.

pub mod analysis;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod namf;
pub mod nn;
pub mod scenario;
pub mod steering;

pub use error::{Error, Result};
pub use estimators::Estimate;
pub use namf::{HeatmapGrid, HeatmapSample};
pub use nn::CnnModel;
pub use scenario::{ClutterScene, RadarReturnSet, RadarSiteConfig, ScenarioId, TargetSpec};
pub use steering::SpaceTimeSteeringVector;

/// Propagation speed used for range-bin and Doppler arithmetic.
///
/// The 5 MHz bandwidth maps to an exactly 30 m range bin only with the
/// rounded constant, and the processing-region tables are built on that.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// SplitMix64 step; used to derive independent per-sample seeds from a
/// global seed so generation order is irrelevant.
pub fn derive_seed(global_seed: u64, index: u64) -> u64 {
    let mut z = global_seed
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
