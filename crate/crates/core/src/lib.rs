//! Nonparametric estimation of a constant-returns matching function from
//! (users, vacancies, hires) panels.
//!
//! The pipeline fits a kernel conditional CDF of hires given the two stocks,
//! traces the efficiency distribution around a base observation, inverts it
//! observation by observation, and reads local elasticities off rolling
//! projections of hires on effective users and vacancies.

pub mod efficiency;
pub mod elasticity;
pub mod isotonic;
pub mod kernel;
pub mod panel;
pub mod pipeline;
pub mod synth;

pub use efficiency::{
    recover_efficiency, recover_matching_surface, select_base_point, trace_distribution, BasePoint, BasePolicy,
    EfficiencyDistribution, EfficiencyEntry, EfficiencyError, EfficiencySeries, GridSpec, MatchingSurface,
    SupportFlag, TraceGrid,
};
pub use elasticity::{
    elasticity_series, fit_local_projection, fit_projection, ElasticityError, ElasticityEstimate, ProjectionFit,
    ProjectionOptions, ProjectionRow,
};
pub use kernel::{ConditionalCdfEstimator, CoordinateTransform, KernelConfig, KernelError};
pub use panel::{
    compute_diagnostics, ingest_panel, normalize_to_baseline, write_diagnostics, write_panel, ColumnMapping,
    MarketDiagnostics, NormalizedSeries, Panel, PanelError, PanelObservation, Period,
};
pub use pipeline::{
    estimate, estimate_region, write_efficiency_csv, write_elasticity_csv, EstimationOptions, RegionEstimate,
};
pub use synth::{
    generate, oracle_report, DgpConfig, EfficiencyProcess, SynthError, SyntheticPanel, Thresholds, UserProcess,
    ValidationMetrics, VacancyRule,
};

/// Any pipeline failure, prefixed with the stage that raised it.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("panel: {0}")]
    Panel(#[from] PanelError),
    #[error("kernel-cdf: {0}")]
    Kernel(#[from] KernelError),
    #[error("efficiency: {0}")]
    Efficiency(#[from] EfficiencyError),
    #[error("elasticity: {0}")]
    Elasticity(#[from] ElasticityError),
    #[error("synth-dgp: {0}")]
    Synth(#[from] SynthError),
    #[error("region {region}: {source}")]
    Region { region: String, source: Box<Error> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
