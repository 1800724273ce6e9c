//! End-to-end estimation per region and long-format writers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::{
    recover_efficiency, select_base_point, trace_distribution, BasePolicy, EfficiencySeries, GridSpec, TraceGrid,
};
use crate::elasticity::{elasticity_series, ElasticityEstimate, ProjectionOptions};
use crate::kernel::{ConditionalCdfEstimator, CoordinateTransform, KernelConfig};
use crate::panel::{fmt_opt, normalize_to_baseline, Panel, PanelError, Period};
use crate::Error;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub kernel: KernelConfig,
    pub grid: GridSpec,
    pub base_policy: BasePolicy,
    pub projection: ProjectionOptions,
}

#[derive(Debug, Clone)]
pub struct RegionEstimate {
    pub region: Option<String>,
    pub panel: Panel,
    pub efficiency: EfficiencySeries,
    pub elasticities: Vec<ElasticityEstimate>,
    /// Share of trace cells without kernel support.
    pub out_of_support_fraction: f64,
}

/// Kernel sample of a panel: observations the coordinate transform accepts.
pub fn kernel_sample(panel: &Panel, transform: CoordinateTransform) -> Vec<(f64, f64, f64)> {
    panel
        .observations()
        .iter()
        .filter(|o| transform != CoordinateTransform::LogRange || (o.users > 0.0 && o.vacancies > 0.0))
        .map(|o| (o.users, o.vacancies, o.hires))
        .collect()
}

/// Full pipeline on a single-region panel.
pub fn estimate_region(panel: &Panel, options: &EstimationOptions) -> Result<RegionEstimate, Error> {
    let estimator = ConditionalCdfEstimator::fit(&kernel_sample(panel, options.kernel.transform), options.kernel)?;
    let base = select_base_point(panel, options.base_policy)?;
    let grid = TraceGrid::new(&options.grid)?;
    let dist = trace_distribution(&estimator, &base, &grid)?;
    let efficiency = recover_efficiency(&estimator, &dist, panel);
    let elasticities = elasticity_series(panel, &efficiency, options.projection)?;
    Ok(RegionEstimate {
        region: panel.observations()[0].region.clone(),
        panel: panel.clone(),
        efficiency,
        elasticities,
        out_of_support_fraction: dist.out_of_support_fraction(),
    })
}

/// Estimates every region independently; results follow region sort order.
pub fn estimate(panel: &Panel, options: &EstimationOptions) -> Result<Vec<RegionEstimate>, Error> {
    panel
        .split_regions()
        .par_iter()
        .map(|p| {
            estimate_region(p, options).map_err(|e| match &p.observations()[0].region {
                Some(r) => Error::Region { region: r.clone(), source: Box::new(e) },
                None => e,
            })
        })
        .collect()
}

/// `period,region,efficiency,efficiency_index,support_flag`, with the index
/// normalized per region at `baseline` (first period of the region when absent).
pub fn write_efficiency_csv<W: Write>(
    estimates: &[RegionEstimate],
    baseline: Option<Period>,
    sink: W,
) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["period", "region", "efficiency", "efficiency_index", "support_flag"])?;
    for est in estimates {
        let entries = &est.efficiency.entries;
        let Some(first) = entries.first() else { continue };
        let index = normalize_to_baseline(&est.efficiency.values(), baseline.unwrap_or(first.period))?;
        for e in entries {
            let idx = e.efficiency.and_then(|_| index.get(e.period));
            w.write_record([
                e.period.to_string(),
                e.region.clone().unwrap_or_default(),
                fmt_opt(e.efficiency),
                fmt_opt(idx),
                e.support.as_str().to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// `period,region,elasticity_au,elasticity_v,beta_au,beta_v,window_start,window_end`.
pub fn write_elasticity_csv<W: Write>(estimates: &[RegionEstimate], sink: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "period",
        "region",
        "elasticity_au",
        "elasticity_v",
        "beta_au",
        "beta_v",
        "window_start",
        "window_end",
    ])?;
    for est in estimates {
        for e in &est.elasticities {
            let fit = e.fit.as_ref();
            w.write_record([
                e.period.to_string(),
                e.region.clone().unwrap_or_default(),
                fmt_opt(e.elasticity_au),
                fmt_opt(e.elasticity_v),
                fmt_opt(fit.map(|f| f.beta_au)),
                fmt_opt(fit.map(|f| f.beta_v)),
                fit.map(|f| f.window_start.to_string()).unwrap_or_default(),
                fit.map(|f| f.window_end.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
