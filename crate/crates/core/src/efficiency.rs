//! Latent matching efficiency recovery.
//!
//! With constant returns to scale and V independent of A given U, the
//! conditional law of efficiency is read off the hires CDF along rays
//! through a base observation `(H0, U0, V0)`:
//!
//! ```text
//! F(psi * A0 | lambda * U0) = G(psi * lambda * H0 | lambda * U0, psi * lambda * V0)
//! ```
//!
//! Each observation's efficiency is then the `F(. | U_t)` quantile of its own
//! conditional hires rank `G(H_t | U_t, V_t)`, and the matching surface is
//! `m(a, u, v) = G^{-1}(F(a | u) | u, v)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isotonic::pava;
use crate::kernel::{ConditionalCdfEstimator, KernelError};
use crate::panel::{Panel, Period};

#[derive(Debug, Error)]
pub enum EfficiencyError {
    #[error("panel is empty")]
    EmptyPanel,
    #[error("no observation has positive users, vacancies and hires")]
    NoPositiveObservation,
    #[error("base period {0} not present in panel")]
    PeriodAbsent(Period),
    #[error("base observation at {0} must have positive users, vacancies and hires")]
    BaseNotPositive(Period),
    #[error("invalid trace grid: {0}")]
    InvalidGrid(String),
    #[error(
        "trace failed: {empty} of {relevant} lambda columns covering the sample have no supported cell; \
         narrow the psi/lambda range or widen the bandwidth"
    )]
    TraceFailure { empty: usize, relevant: usize },
    #[error("base observation is outside the estimator support")]
    BaseOutOfSupport,
    #[error("efficiency series does not line up with the panel at row {0}")]
    Misaligned(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// How the anchor observation is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasePolicy {
    /// Observation nearest the component-wise median of (ln U, ln V).
    #[default]
    Median,
    Period(Period),
}

impl std::str::FromStr for BasePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "median" {
            return Ok(Self::Median);
        }
        s.parse::<Period>()
            .map(Self::Period)
            .map_err(|_| format!("base point must be `median` or YYYY-MM, got `{s}`"))
    }
}

impl std::fmt::Display for BasePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Median => f.write_str("median"),
            Self::Period(p) => write!(f, "{p}"),
        }
    }
}

/// Anchor observation; efficiency is normalized to 1 here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub period: Period,
    pub region: Option<String>,
    pub hires: f64,
    pub users: f64,
    pub vacancies: f64,
}

pub fn select_base_point(panel: &Panel, policy: BasePolicy) -> Result<BasePoint, EfficiencyError> {
    let positive = |o: &&crate::panel::PanelObservation| o.users > 0.0 && o.vacancies > 0.0 && o.hires > 0.0;
    let to_base = |o: &crate::panel::PanelObservation| BasePoint {
        period: o.period,
        region: o.region.clone(),
        hires: o.hires,
        users: o.users,
        vacancies: o.vacancies,
    };
    if panel.is_empty() {
        return Err(EfficiencyError::EmptyPanel);
    }
    match policy {
        BasePolicy::Period(period) => {
            let obs = panel
                .observations()
                .iter()
                .find(|o| o.period == period)
                .ok_or(EfficiencyError::PeriodAbsent(period))?;
            if !positive(&obs) {
                return Err(EfficiencyError::BaseNotPositive(period));
            }
            Ok(to_base(obs))
        }
        BasePolicy::Median => {
            let candidates: Vec<_> = panel.observations().iter().filter(positive).collect();
            if candidates.is_empty() {
                return Err(EfficiencyError::NoPositiveObservation);
            }
            let lu: Vec<f64> = candidates.iter().map(|o| o.users.ln()).collect();
            let lv: Vec<f64> = candidates.iter().map(|o| o.vacancies.ln()).collect();
            let span = |xs: &[f64]| {
                let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max > min { max - min } else { 1.0 }
            };
            let (su, sv) = (span(&lu), span(&lv));
            let mu = median(&lu);
            let mv = median(&lv);
            let best = (0..candidates.len())
                .min_by(|&a, &b| {
                    let da = ((lu[a] - mu) / su).powi(2) + ((lv[a] - mv) / sv).powi(2);
                    let db = ((lu[b] - mu) / su).powi(2) + ((lv[b] - mv) / sv).powi(2);
                    da.total_cmp(&db)
                })
                .expect("non-empty");
            Ok(to_base(candidates[best]))
        }
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Resolution and span of the (psi, lambda) scaling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub psi_count: usize,
    pub lambda_count: usize,
    pub psi_range: (f64, f64),
    pub lambda_range: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { psi_count: 200, lambda_count: 60, psi_range: (0.05, 20.0), lambda_range: (0.05, 20.0) }
    }
}

/// Geometric psi and lambda axes, each containing exactly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGrid {
    psi: Vec<f64>,
    lambda: Vec<f64>,
    psi_unit: usize,
    lambda_unit: usize,
}

/// `n` geometrically spaced values spanning about `[lo, hi]`, shifted by at
/// most half a step so that one entry is exactly 1.
fn geometric_axis(lo: f64, hi: f64, n: usize) -> Result<(Vec<f64>, usize), EfficiencyError> {
    if !(lo > 0.0 && hi.is_finite() && lo < 1.0 && hi > 1.0) {
        return Err(EfficiencyError::InvalidGrid(format!("range {lo}:{hi} must satisfy 0 < lo < 1 < hi")));
    }
    if n < 2 {
        return Err(EfficiencyError::InvalidGrid(format!("need at least 2 points per axis, got {n}")));
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    let unit = ((-lo.ln() / step).round() as usize).min(n - 1);
    let values = (0..n).map(|i| ((i as f64 - unit as f64) * step).exp()).collect();
    Ok((values, unit))
}

impl TraceGrid {
    pub fn new(spec: &GridSpec) -> Result<Self, EfficiencyError> {
        let (psi, psi_unit) = geometric_axis(spec.psi_range.0, spec.psi_range.1, spec.psi_count)?;
        let (lambda, lambda_unit) = geometric_axis(spec.lambda_range.0, spec.lambda_range.1, spec.lambda_count)?;
        Ok(Self { psi, lambda, psi_unit, lambda_unit })
    }

    pub fn psi_values(&self) -> &[f64] {
        &self.psi
    }

    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda
    }

    /// Index of psi = 1.
    pub fn psi_unit(&self) -> usize {
        self.psi_unit
    }

    /// Index of lambda = 1.
    pub fn lambda_unit(&self) -> usize {
        self.lambda_unit
    }
}

/// Where an estimate sits relative to the traced support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportFlag {
    InRange,
    /// Below the lowest value the column attains; pinned to its lower end.
    ClampedLow,
    /// Above the highest value the column attains; pinned to its upper end.
    ClampedHigh,
    OutOfSupport,
}

impl SupportFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InRange => "in",
            Self::ClampedLow => "clamped-low",
            Self::ClampedHigh => "clamped-high",
            Self::OutOfSupport => "out",
        }
    }
}

/// Contiguous run of supported, monotone cells of one lambda column.
#[derive(Debug, Clone, PartialEq)]
struct Column {
    start: usize,
    values: Vec<f64>,
}

impl Column {
    fn end(&self) -> usize {
        self.start + self.values.len() - 1
    }
}

/// Estimated F(psi * A0 | lambda * U0) over the trace grid.
#[derive(Debug, Clone)]
pub struct EfficiencyDistribution {
    grid: TraceGrid,
    base: BasePoint,
    /// Column-major (`j * n_psi + i`); `None` where the kernel has no support.
    raw: Vec<Option<f64>>,
    columns: Vec<Option<Column>>,
    monotonized: bool,
    anchor: f64,
}

impl EfficiencyDistribution {
    pub fn grid(&self) -> &TraceGrid {
        &self.grid
    }

    pub fn base(&self) -> &BasePoint {
        &self.base
    }

    pub fn monotonized(&self) -> bool {
        self.monotonized
    }

    /// psi value at which the lambda = 1 column returns the base observation's own rank.
    /// Efficiency `a` corresponds to `psi = a * anchor`.
    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    fn n_psi(&self) -> usize {
        self.grid.psi.len()
    }

    /// Raw estimate at (psi index, lambda index).
    pub fn raw(&self, i: usize, j: usize) -> Option<f64> {
        self.raw[j * self.n_psi() + i]
    }

    /// Monotonized estimate at (psi index, lambda index).
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let col = self.columns[j].as_ref()?;
        (i >= col.start && i <= col.end()).then(|| col.values[i - col.start])
    }

    pub fn out_of_support_fraction(&self) -> f64 {
        self.raw.iter().filter(|c| c.is_none()).count() as f64 / self.raw.len() as f64
    }

    /// Columns usable at an arbitrary lambda, best first: the linear mix of the
    /// two bracketing grid columns (geometric position, shared support), then
    /// the nearer and the farther of the two on their own.
    fn columns_at(&self, lambda: f64) -> Vec<Column> {
        let lam = &self.grid.lambda;
        let (first, last) = (lam[0], lam[lam.len() - 1]);
        let tol = 1e-12;
        if !(lambda >= first * (1.0 - tol) && lambda <= last * (1.0 + tol)) {
            return Vec::new();
        }
        let j = match lam.binary_search_by(|x| x.total_cmp(&lambda)) {
            Ok(j) => return self.columns[j].clone().or_else(|| self.nearest_column(j)).into_iter().collect(),
            Err(0) => return self.columns[0].clone().into_iter().collect(),
            Err(k) if k >= lam.len() => return self.columns[lam.len() - 1].clone().into_iter().collect(),
            Err(k) => k - 1,
        };
        let frac = (lambda / lam[j]).ln() / (lam[j + 1] / lam[j]).ln();
        let (near, far) = if frac < 0.5 { (j, j + 1) } else { (j + 1, j) };
        let mut out = Vec::with_capacity(3);
        if let (Some(a), Some(b)) = (&self.columns[j], &self.columns[j + 1]) {
            let start = a.start.max(b.start);
            let end = a.end().min(b.end());
            if start <= end {
                let values = (start..=end)
                    .map(|i| (1.0 - frac) * a.values[i - a.start] + frac * b.values[i - b.start])
                    .collect();
                out.push(Column { start, values });
            }
        }
        out.extend(self.columns[near].clone());
        out.extend(self.columns[far].clone());
        out
    }

    fn attains(col: &Column, p: f64) -> bool {
        col.values[0] <= p && p <= *col.values.last().expect("non-empty column")
    }

    fn nearest_column(&self, j: usize) -> Option<Column> {
        let n = self.columns.len();
        (1..n).find_map(|d| {
            let left = j.checked_sub(d).and_then(|k| self.columns[k].clone());
            left.or_else(|| self.columns.get(j + d).cloned().flatten())
        })
    }

    fn psi_at(&self, i: usize) -> f64 {
        self.grid.psi[i]
    }

    fn interp_psi(&self, i: usize, t: f64) -> f64 {
        let (a, b) = (self.psi_at(i).ln(), self.psi_at(i + 1).ln());
        (a + t * (b - a)).exp()
    }

    /// `inf{psi : F(psi) >= p}` on the piecewise-linear column.
    fn lower_inverse(&self, col: &Column, p: f64) -> f64 {
        let k = col.values.iter().position(|&c| c >= p).unwrap_or(col.values.len() - 1);
        if k == 0 {
            return self.psi_at(col.start);
        }
        let (c0, c1) = (col.values[k - 1], col.values[k]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 1.0 };
        self.interp_psi(col.start + k - 1, t.clamp(0.0, 1.0))
    }

    /// `sup{psi : F(psi) <= p}` on the piecewise-linear column.
    fn upper_inverse(&self, col: &Column, p: f64) -> f64 {
        let n = col.values.len();
        let k = col.values.iter().rposition(|&c| c <= p).unwrap_or(0);
        if k == n - 1 {
            return self.psi_at(col.end());
        }
        let (c0, c1) = (col.values[k], col.values[k + 1]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.interp_psi(col.start + k, t.clamp(0.0, 1.0))
    }

    /// psi solving `F(psi) = p`. Flat stretches resolve to their geometric
    /// midpoint, except at the ends of the column's range where the inner end is used.
    fn invert(&self, col: &Column, p: f64) -> (f64, SupportFlag) {
        let first = col.values[0];
        let last = *col.values.last().expect("non-empty column");
        if p < first {
            return (self.psi_at(col.start), SupportFlag::ClampedLow);
        }
        if p > last {
            return (self.psi_at(col.end()), SupportFlag::ClampedHigh);
        }
        let lower = self.lower_inverse(col, p);
        let upper = self.upper_inverse(col, p);
        if first == last {
            return ((lower * upper).sqrt(), SupportFlag::InRange);
        }
        if p <= first {
            (upper, SupportFlag::InRange)
        } else if p >= last {
            (lower, SupportFlag::InRange)
        } else {
            ((lower * upper).sqrt(), SupportFlag::InRange)
        }
    }

    /// Linear-in-ln(psi) lookup of a column; pinned to the end values outside its span.
    fn forward(&self, col: &Column, psi: f64) -> (f64, SupportFlag) {
        let lo = self.psi_at(col.start);
        let hi = self.psi_at(col.end());
        if psi < lo {
            return (col.values[0], SupportFlag::ClampedLow);
        }
        if psi >= hi {
            let flag = if psi > hi { SupportFlag::ClampedHigh } else { SupportFlag::InRange };
            return (*col.values.last().expect("non-empty"), flag);
        }
        let grid = &self.grid.psi[col.start..=col.end()];
        let k = grid.partition_point(|&x| x <= psi) - 1;
        let t = (psi / grid[k]).ln() / (grid[k + 1] / grid[k]).ln();
        (col.values[k] + t * (col.values[k + 1] - col.values[k]), SupportFlag::InRange)
    }

    /// Estimated F(a | u) for efficiency `a` relative to the base (A0 = 1).
    pub fn efficiency_cdf(&self, a: f64, u: f64) -> Option<(f64, SupportFlag)> {
        let psi = a * self.anchor;
        let cols = self.columns_at(u / self.base.users);
        let col = cols
            .iter()
            .find(|c| self.psi_at(c.start) <= psi && psi <= self.psi_at(c.end()))
            .or(cols.first())?;
        Some(self.forward(col, psi))
    }

    /// Efficiency `a` with F(a | u) = p.
    pub fn efficiency_quantile(&self, p: f64, u: f64) -> Option<(f64, SupportFlag)> {
        let cols = self.columns_at(u / self.base.users);
        let col = cols.iter().find(|c| Self::attains(c, p)).or(cols.first())?;
        let (psi, flag) = self.invert(col, p);
        Some((psi / self.anchor, flag))
    }
}

/// Traces F(. | .) over the grid, then makes every lambda column non-decreasing in psi.
pub fn trace_distribution(
    estimator: &ConditionalCdfEstimator,
    base: &BasePoint,
    grid: &TraceGrid,
) -> Result<EfficiencyDistribution, EfficiencyError> {
    let n_psi = grid.psi.len();
    let raw: Vec<Option<f64>> = grid
        .lambda
        .par_iter()
        .flat_map_iter(|&lambda| {
            grid.psi.iter().map(move |&psi| {
                let s = psi * lambda;
                estimator.conditional_mid_rank(s * base.hires, lambda * base.users, s * base.vacancies).ok()
            })
        })
        .collect();

    let (umin, umax) = estimator
        .sample()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (u, _, _)| (lo.min(u), hi.max(u)));
    let step = grid.lambda.get(1).map_or(1.0, |l1| l1 / grid.lambda[0]);
    let relevant: Vec<usize> = (0..grid.lambda.len())
        .filter(|&j| {
            let l = grid.lambda[j];
            l * step >= umin / base.users && l / step <= umax / base.users
        })
        .collect();
    let empty = relevant
        .iter()
        .filter(|&&j| raw[j * n_psi..(j + 1) * n_psi].iter().all(Option::is_none))
        .count();
    if relevant.is_empty() || 2 * empty > relevant.len() {
        return Err(EfficiencyError::TraceFailure { empty, relevant: relevant.len() });
    }

    let columns: Vec<Option<Column>> = raw.chunks(n_psi).map(monotone_column).collect();
    let mut dist =
        EfficiencyDistribution { grid: grid.clone(), base: base.clone(), raw, columns, monotonized: true, anchor: 1.0 };

    let own_rank = dist.raw(grid.psi_unit, grid.lambda_unit).ok_or(EfficiencyError::BaseOutOfSupport)?;
    let unit_col = dist.columns[grid.lambda_unit].clone().ok_or(EfficiencyError::BaseOutOfSupport)?;
    dist.anchor = dist.invert(&unit_col, own_rank).0;
    Ok(dist)
}

/// PAVA over the supported cells, then linear fill of interior holes.
fn monotone_column(raw: &[Option<f64>]) -> Option<Column> {
    let idx: Vec<usize> = raw.iter().enumerate().filter_map(|(i, c)| c.map(|_| i)).collect();
    let (&start, &end) = (idx.first()?, idx.last()?);
    let fitted = pava(&idx.iter().map(|&i| raw[i].expect("supported")).collect::<Vec<_>>());
    let mut values = vec![0.0; end - start + 1];
    for w in 0..idx.len() {
        values[idx[w] - start] = fitted[w];
        if w + 1 < idx.len() {
            let (a, b) = (idx[w], idx[w + 1]);
            for i in a + 1..b {
                let t = (i - a) as f64 / (b - a) as f64;
                values[i - start] = fitted[w] + t * (fitted[w + 1] - fitted[w]);
            }
        }
    }
    Some(Column { start, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    pub period: Period,
    pub region: Option<String>,
    /// A_t relative to A0 = 1; `None` when out of support.
    pub efficiency: Option<f64>,
    /// The observation's conditional hires rank G(H_t | U_t, V_t).
    pub rank: Option<f64>,
    pub support: SupportFlag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencySeries {
    pub base: BasePoint,
    pub entries: Vec<EfficiencyEntry>,
}

impl EfficiencySeries {
    /// (period, efficiency) pairs with a value.
    pub fn values(&self) -> Vec<(Period, f64)> {
        self.entries.iter().filter_map(|e| e.efficiency.map(|a| (e.period, a))).collect()
    }
}

/// Inverts F(. | U_t) at each observation's own hires rank.
pub fn recover_efficiency(
    estimator: &ConditionalCdfEstimator,
    distribution: &EfficiencyDistribution,
    panel: &Panel,
) -> EfficiencySeries {
    let entries = panel
        .observations()
        .par_iter()
        .map(|o| {
            let out = |rank| EfficiencyEntry {
                period: o.period,
                region: o.region.clone(),
                efficiency: None,
                rank,
                support: SupportFlag::OutOfSupport,
            };
            let Ok(rank) = estimator.conditional_mid_rank(o.hires, o.users, o.vacancies) else {
                return out(None);
            };
            match distribution.efficiency_quantile(rank, o.users) {
                Some((a, support)) if a.is_finite() && a > 0.0 => EfficiencyEntry {
                    period: o.period,
                    region: o.region.clone(),
                    efficiency: Some(a),
                    rank: Some(rank),
                    support,
                },
                _ => out(Some(rank)),
            }
        })
        .collect();
    EfficiencySeries { base: distribution.base.clone(), entries }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceValue {
    pub hires: f64,
    pub support: SupportFlag,
}

/// Nonparametric matching function `(a, u, v) -> hires`.
#[derive(Debug, Clone, Copy)]
pub struct MatchingSurface<'a> {
    estimator: &'a ConditionalCdfEstimator,
    distribution: &'a EfficiencyDistribution,
}

pub fn recover_matching_surface<'a>(
    estimator: &'a ConditionalCdfEstimator,
    distribution: &'a EfficiencyDistribution,
) -> MatchingSurface<'a> {
    MatchingSurface { estimator, distribution }
}

impl<'a> MatchingSurface<'a> {
    pub fn estimator(&self) -> &'a ConditionalCdfEstimator {
        self.estimator
    }

    pub fn distribution(&self) -> &'a EfficiencyDistribution {
        self.distribution
    }

    /// Predicted hires at efficiency `a` (A0 = 1), users `u`, vacancies `v`.
    /// Outside the support the nearest supported evaluation is returned, flagged.
    pub fn evaluate(&self, a: f64, u: f64, v: f64) -> SurfaceValue {
        let dist = self.distribution;
        let lam = dist.grid.lambda_values();
        let (p, mut support) = match dist.efficiency_cdf(a, u) {
            Some(hit) => hit,
            None => {
                let clamped = (u / dist.base.users).clamp(lam[0], lam[lam.len() - 1]) * dist.base.users;
                let (p, _) = dist.efficiency_cdf(a, clamped).unwrap_or((0.5, SupportFlag::OutOfSupport));
                (p, SupportFlag::OutOfSupport)
            }
        };
        let hires = match self.estimator.conditional_mid_quantile(p, u, v) {
            Ok(h) => h,
            Err(_) => {
                support = SupportFlag::OutOfSupport;
                let (nu, nv) = self.estimator.nearest_sample(u, v).unwrap_or((dist.base.users, dist.base.vacancies));
                self.estimator.conditional_mid_quantile(p, nu, nv).unwrap_or(f64::NAN)
            }
        };
        SurfaceValue { hires: hires.max(0.0), support }
    }
}
