//! Matching elasticities from local linear projections of hires on
//! efficiency-augmented users (A*U) and vacancies (V).
//!
//! For a window of periods, `H ~ beta_au * (A U) + beta_v * V` is fit by least
//! squares (no intercept by default). A period's elasticities are the betas of
//! its centered window times its own levels: `beta_au * A_t U_t / H_t` and
//! `beta_v * V_t / H_t`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efficiency::{EfficiencySeries, SupportFlag};
use crate::panel::{Panel, Period};

/// Relative singular-value floor below which a design counts as collinear.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum ElasticityError {
    #[error("window {start}..{end}: {found} usable observations, need at least {needed}")]
    InsufficientWindow { start: Period, end: Period, found: usize, needed: usize },
    #[error("window {start}..{end}: regressors are collinear")]
    Collinear { start: Period, end: Period },
    #[error("period {0} not present in panel")]
    CenterAbsent(Period),
    #[error("efficiency series does not match the panel at row {0}")]
    Misaligned(usize),
    #[error("panel is empty")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionOptions {
    /// Window length in periods; 0 fits one projection on the whole sample.
    pub window: usize,
    pub intercept: bool,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self { window: 12, intercept: false }
    }
}

/// One regression observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionRow {
    pub period: Period,
    pub effective_users: f64,
    pub vacancies: f64,
    pub hires: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFit {
    pub window_start: Period,
    pub window_end: Period,
    pub beta_au: f64,
    pub beta_v: f64,
    pub intercept: Option<f64>,
    pub rss: f64,
    pub n_obs: usize,
}

/// Least squares of hires on (A*U, V), optionally with a constant.
pub fn fit_projection(rows: &[ProjectionRow], intercept: bool) -> Result<ProjectionFit, ElasticityError> {
    let (start, end) = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => (a.period, b.period),
        _ => return Err(ElasticityError::Empty),
    };
    let k = if intercept { 3 } else { 2 };
    let needed = 3.max(k);
    if rows.len() < needed {
        return Err(ElasticityError::InsufficientWindow { start, end, found: rows.len(), needed });
    }
    let n = rows.len();
    let mut x = DMatrix::<f64>::zeros(n, k);
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.hires));
    for (i, r) in rows.iter().enumerate() {
        x[(i, 0)] = r.effective_users;
        x[(i, 1)] = r.vacancies;
        if intercept {
            x[(i, 2)] = 1.0;
        }
    }
    // Column equilibration so the rank test is scale free.
    let norms: Vec<f64> = (0..k).map(|c| x.column(c).norm()).collect();
    if norms.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(ElasticityError::Collinear { start, end });
    }
    let mut scaled = x.clone();
    for (c, s) in norms.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !smin.is_finite() || smin <= RANK_TOLERANCE * smax {
        return Err(ElasticityError::Collinear { start, end });
    }
    let coef = svd.solve(&y, 0.0).map_err(|_| ElasticityError::Collinear { start, end })?;
    let beta: Vec<f64> = (0..k).map(|c| coef[c] / norms[c]).collect();
    let resid = &y - &x * DVector::from_column_slice(&beta);
    Ok(ProjectionFit {
        window_start: start,
        window_end: end,
        beta_au: beta[0],
        beta_v: beta[1],
        intercept: intercept.then(|| beta[2]),
        rss: resid.norm_squared(),
        n_obs: n,
    })
}

/// Rows usable in a regression: in-range efficiency, matched to the panel by position.
fn projection_rows(panel: &Panel, efficiency: &EfficiencySeries) -> Result<Vec<Option<ProjectionRow>>, ElasticityError> {
    let obs = panel.observations();
    if obs.len() != efficiency.entries.len() {
        return Err(ElasticityError::Misaligned(obs.len().min(efficiency.entries.len())));
    }
    obs.iter()
        .zip(&efficiency.entries)
        .enumerate()
        .map(|(i, (o, e))| {
            if o.period != e.period || o.region != e.region {
                return Err(ElasticityError::Misaligned(i));
            }
            Ok(match (e.efficiency, e.support) {
                (Some(a), SupportFlag::InRange) => Some(ProjectionRow {
                    period: o.period,
                    effective_users: a * o.users,
                    vacancies: o.vacancies,
                    hires: o.hires,
                }),
                _ => None,
            })
        })
        .collect()
}

/// Index range `[start, end)` of the window centered on position `t`, and
/// whether it was truncated by either end of the sample.
fn window_bounds(t: usize, n: usize, window: usize) -> (usize, usize, bool) {
    if window == 0 {
        return (0, n, false);
    }
    let lo = t as isize - (window / 2) as isize;
    let hi = lo + window as isize;
    let truncated = lo < 0 || hi > n as isize;
    (lo.max(0) as usize, hi.min(n as isize) as usize, truncated)
}

fn fit_window(
    rows: &[Option<ProjectionRow>],
    panel: &Panel,
    (start, end): (usize, usize),
    intercept: bool,
) -> Result<ProjectionFit, ElasticityError> {
    let usable: Vec<ProjectionRow> = rows[start..end].iter().flatten().copied().collect();
    let obs = panel.observations();
    let (ps, pe) = (obs[start].period, obs[end - 1].period);
    let mut fit = fit_projection(&usable, intercept).map_err(|e| match e {
        ElasticityError::InsufficientWindow { found, needed, .. } => {
            ElasticityError::InsufficientWindow { start: ps, end: pe, found, needed }
        }
        ElasticityError::Collinear { .. } | ElasticityError::Empty => {
            if usable.is_empty() {
                ElasticityError::InsufficientWindow { start: ps, end: pe, found: 0, needed: 3 }
            } else {
                ElasticityError::Collinear { start: ps, end: pe }
            }
        }
        other => other,
    })?;
    fit.window_start = ps;
    fit.window_end = pe;
    Ok(fit)
}

/// Projection on the window of `window_length` periods centered on `center`.
pub fn fit_local_projection(
    panel: &Panel,
    efficiency: &EfficiencySeries,
    window_length: usize,
    center: Period,
    intercept: bool,
) -> Result<ProjectionFit, ElasticityError> {
    let rows = projection_rows(panel, efficiency)?;
    let t = panel
        .observations()
        .iter()
        .position(|o| o.period == center)
        .ok_or(ElasticityError::CenterAbsent(center))?;
    let (s, e, _) = window_bounds(t, rows.len(), window_length);
    fit_window(&rows, panel, (s, e), intercept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityEstimate {
    pub period: Period,
    pub region: Option<String>,
    /// d ln m / d ln(AU); `None` when H_t = 0, A_t is unavailable or the window fit failed.
    pub elasticity_au: Option<f64>,
    /// d ln m / d ln V.
    pub elasticity_v: Option<f64>,
    pub fit: Option<ProjectionFit>,
    /// Window not truncated by the ends of the sample.
    pub interior: bool,
}

/// Rolling centered-window elasticities, one per panel observation.
///
/// A failed window leaves its period undefined; the call fails only if no
/// window can be fit.
pub fn elasticity_series(
    panel: &Panel,
    efficiency: &EfficiencySeries,
    options: ProjectionOptions,
) -> Result<Vec<ElasticityEstimate>, ElasticityError> {
    let rows = projection_rows(panel, efficiency)?;
    let obs = panel.observations();
    let n = obs.len();
    if n == 0 {
        return Err(ElasticityError::Empty);
    }
    let mut cache: HashMap<(usize, usize), Result<ProjectionFit, ElasticityError>> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for (t, o) in obs.iter().enumerate() {
        let (s, e, truncated) = window_bounds(t, n, options.window);
        let fit = cache.entry((s, e)).or_insert_with(|| fit_window(&rows, panel, (s, e), options.intercept));
        let fit = fit.as_ref().ok().cloned();
        let (eau, ev) = match (&fit, &rows[t]) {
            (Some(f), Some(r)) if r.hires > 0.0 => {
                (Some(f.beta_au * r.effective_users / r.hires), Some(f.beta_v * r.vacancies / r.hires))
            }
            _ => (None, None),
        };
        out.push(ElasticityEstimate {
            period: o.period,
            region: o.region.clone(),
            elasticity_au: eau,
            elasticity_v: ev,
            fit,
            interior: !truncated,
        });
    }
    if out.iter().all(|e| e.fit.is_none()) {
        let first = cache.into_iter().min_by_key(|(k, _)| *k).map(|(_, v)| v);
        if let Some(Err(e)) = first {
            return Err(e);
        }
    }
    Ok(out)
}
