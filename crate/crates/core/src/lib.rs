//! Mutually exciting point-process model of crowdfunding platform dynamics:
//! event replay, exact likelihood with analytic derivatives, Newton fitting,
//! simulation, and time-rescaling diagnostics.

// `!(x > y)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod event;
pub mod gof;
pub mod ingest;
pub mod intensity;
pub mod likelihood;
pub mod params;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::{
    fit_newton, fit_variant, information_criteria, standard_errors_and_ci, FitOptions, FitResult, Init, ModelVariant,
};
pub use event::{
    apply_event, Event, EventCounts, EventKind, EventLog, ItemId, PlatformState, Regime, Transition, UserId, REGIMES,
};
pub use gof::{autocorrelation_diagnostic, goodness_of_fit, rescale_times, uniformity_tests, GofReport};
pub use ingest::{
    jitter_and_merge, load_tables, read_events_csv, summarize, write_events_csv, DatasetSummary, IngestReport,
    RawTables, TimeFormat,
};
pub use intensity::{contagion_effect, pair_compensator, pair_intensity, DecayKernel, PairSegment};
pub use likelihood::{closed_form_rates, derivatives, gradient, hessian, log_likelihood, Derivatives, KernelFamily};
pub use params::{ParamIndex, Params, N_PARAMS, PARAM_NAMES};
pub use simulate::{envelope, replicate, run, sample_contribution_waiting, step, Engine, SimConfig, SimOutput};
pub use stats::SufficientStats;

/// Replays `log` once and collects everything the likelihood needs.
pub fn build_sufficient_stats(log: &EventLog) -> Result<SufficientStats> {
    SufficientStats::build(log)
}
