//! Scan statistics for detecting an elevated mean on an unknown interval.
//!
//! The crate implements five calibrations of the univariate scan statistic —
//! the traditional scan, the Dümbgen–Spokoiny penalty, the
//! Sharpnack–Arias-Castro penalty, the blocked scan and the Bonferroni scan —
//! together with the machinery needed to compare them:
//!
//! * [`interval_sets`]: full and sparse ("approximating") interval
//!   collections and their dyadic block partition,
//! * [`local_stats`]: the local statistic `T_I` for Gaussian, exponential
//!   family, self-normalized, rank and sign settings, each with an analytic
//!   upper tail bound where one exists,
//! * [`null_models`]: reproducible null samplers with counter-based RNG
//!   streams, signal injection and random signal placement,
//! * [`calibrations`]: critical-value simulation, blocked-scan level search,
//!   Bonferroni thresholds and the rejection engine,
//! * [`power`]: the realized-exponent power protocol (per-replicate bisection
//!   for the smallest detectable mean shift).
//!
//! Simulation replicates are embarrassingly parallel. With the default
//! `parallel` feature they run on a rayon pool; replicate `r` always consumes
//! RNG stream `r`, so results are bit-identical regardless of the worker
//! count (or with the feature disabled).

pub mod calibrations;
mod error;
pub mod interval_sets;
pub mod local_stats;
pub mod null_models;
pub mod numerics;
pub mod power;

pub use error::Error;

/// Crate-local result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Map `f` over replicate indices `0..m`, using the rayon pool when the
/// `parallel` feature is enabled. Output order is by replicate index either
/// way, so callers see identical results under any schedule.
pub(crate) fn map_replicates<T, F>(m: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..m).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..m).map(f).collect()
    }
}

/// Sequential counterpart of [`map_replicates`], kept unconditionally so the
/// benchmark suite can compare both execution modes in one build.
pub(crate) fn map_replicates_seq<T, F>(m: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..m).map(f).collect()
}
