//! Kernel-weighted empirical CDF and quantile of hires conditional on
//! (users, vacancies).
//!
//! Each sample point is weighted by a bivariate normal kernel of its
//! distance to the query in a rescaled (users, vacancies) plane; the
//! weights are normalized to sum to one. The CDF uses the strict indicator
//! `H_t < h`, so ties sit to the left of the step. The mid-rank variant
//! counts an atom at `h` half, which keeps a sample point's own weight from
//! biasing its rank downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `(h, weight below h, weight at h)` for one distinct hires value.
type Atom = (f64, f64, f64);

/// Coordinate space in which the bandwidth is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinateTransform {
    /// `ln x`, then min/max scaled onto [0, 1].
    #[default]
    LogRange,
    /// Raw values min/max scaled onto [0, 1].
    Range,
    Identity,
}

impl std::str::FromStr for CoordinateTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log-range" | "log" => Ok(Self::LogRange),
            "range" => Ok(Self::Range),
            "identity" => Ok(Self::Identity),
            other => Err(format!("unknown transform `{other}` (log-range|range|identity)")),
        }
    }
}

impl std::fmt::Display for CoordinateTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::LogRange => "log-range",
            Self::Range => "range",
            Self::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub bandwidth: f64,
    pub transform: CoordinateTransform,
    /// Kernel values below this are treated as zero; also the minimum total
    /// weight for a query to count as supported.
    pub min_effective_weight: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { bandwidth: 0.01, transform: CoordinateTransform::LogRange, min_effective_weight: 1e-12 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("need at least 2 sample points, got {0}")]
    InsufficientData(usize),
    #[error("sample row {row}: {message}")]
    Domain { row: usize, message: String },
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("min_effective_weight must be non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("query ({u}, {v}) is outside the data support (total kernel weight {total_weight:e})")]
    OutOfSupport { u: f64, v: f64, total_weight: f64 },
    #[error("query coordinates ({u}, {v}) are not valid under the {transform} transform")]
    InvalidQuery { u: f64, v: f64, transform: CoordinateTransform },
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

/// Per-axis affine map applied after the optional log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisScale {
    pub offset: f64,
    pub scale: f64,
}

impl AxisScale {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let min = values.clone().fold(f64::INFINITY, f64::min);
        let max = values.fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        Self { offset: min, scale: if span > 0.0 { span } else { 1.0 } }
    }

    fn apply(&self, x: f64) -> f64 {
        (x - self.offset) / self.scale
    }
}

/// Fitted rescaling of the (users, vacancies) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformState {
    pub kind: CoordinateTransform,
    pub users: AxisScale,
    pub vacancies: AxisScale,
}

impl TransformState {
    /// Maps (u, v) into kernel space; `None` for non-positive inputs under the log transform.
    pub fn apply(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let (a, b) = match self.kind {
            CoordinateTransform::LogRange => {
                if !(u > 0.0 && v > 0.0) {
                    return None;
                }
                (u.ln(), v.ln())
            }
            _ => (u, v),
        };
        let out = (self.users.apply(a), self.vacancies.apply(b));
        (out.0.is_finite() && out.1.is_finite()).then_some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SamplePoint {
    x: f64,
    y: f64,
    users: f64,
    vacancies: f64,
    hires: f64,
    input_index: usize,
}

/// Kernel estimate of G(h | u, v), the conditional CDF of hires.
#[derive(Debug, Clone)]
pub struct ConditionalCdfEstimator {
    config: KernelConfig,
    transform: TransformState,
    /// Sorted by hires, so every weighted sum accumulates in the same order
    /// and `conditional_cdf` agrees bit for bit with the quantile knots.
    sample: Vec<SamplePoint>,
    /// Squared scaled distance beyond which the kernel falls under the threshold.
    cutoff: f64,
}

impl ConditionalCdfEstimator {
    /// Fits the coordinate transform on `(users, vacancies, hires)` triples.
    pub fn fit(sample: &[(f64, f64, f64)], config: KernelConfig) -> Result<Self, KernelError> {
        if !(config.bandwidth > 0.0 && config.bandwidth.is_finite()) {
            return Err(KernelError::InvalidBandwidth(config.bandwidth));
        }
        if config.min_effective_weight.is_nan() || config.min_effective_weight < 0.0 {
            return Err(KernelError::InvalidThreshold(config.min_effective_weight));
        }
        if sample.len() < 2 {
            return Err(KernelError::InsufficientData(sample.len()));
        }
        for (i, &(u, v, h)) in sample.iter().enumerate() {
            if !(u.is_finite() && v.is_finite() && h.is_finite()) {
                return Err(KernelError::Domain { row: i, message: "non-finite value".into() });
            }
            if config.transform == CoordinateTransform::LogRange && !(u > 0.0 && v > 0.0) {
                return Err(KernelError::Domain {
                    row: i,
                    message: format!("users={u}, vacancies={v}: log transform needs positive values"),
                });
            }
        }
        let coords = |f: fn(&(f64, f64, f64)) -> f64| {
            sample.iter().map(move |p| match config.transform {
                CoordinateTransform::LogRange => f(p).ln(),
                _ => f(p),
            })
        };
        let transform = match config.transform {
            CoordinateTransform::Identity => TransformState {
                kind: config.transform,
                users: AxisScale { offset: 0.0, scale: 1.0 },
                vacancies: AxisScale { offset: 0.0, scale: 1.0 },
            },
            _ => TransformState {
                kind: config.transform,
                users: AxisScale::fit(coords(|p| p.0)),
                vacancies: AxisScale::fit(coords(|p| p.1)),
            },
        };
        let mut sample: Vec<SamplePoint> = sample
            .iter()
            .enumerate()
            .map(|(input_index, &(u, v, h))| {
                let (x, y) = transform.apply(u, v).expect("validated above");
                SamplePoint { x, y, users: u, vacancies: v, hires: h, input_index }
            })
            .collect();
        sample.sort_by(|a, b| a.hires.total_cmp(&b.hires));
        let cutoff = if config.min_effective_weight > 0.0 {
            -2.0 * config.min_effective_weight.ln()
        } else {
            f64::INFINITY
        };
        Ok(Self { config, transform, sample, cutoff })
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn transform(&self) -> &TransformState {
        &self.transform
    }

    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    /// Sampled (users, vacancies, hires) in input order.
    pub fn sample(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let mut by_input: Vec<&SamplePoint> = self.sample.iter().collect();
        by_input.sort_by_key(|p| p.input_index);
        by_input.into_iter().map(|p| (p.users, p.vacancies, p.hires))
    }

    fn query_point(&self, u: f64, v: f64) -> Result<(f64, f64), KernelError> {
        self.transform
            .apply(u, v)
            .ok_or(KernelError::InvalidQuery { u, v, transform: self.transform.kind })
    }

    #[inline]
    fn weight_at(&self, q: (f64, f64), p: &SamplePoint) -> f64 {
        let h = self.config.bandwidth;
        let dx = (p.x - q.0) / h;
        let dy = (p.y - q.1) / h;
        let d2 = dx * dx + dy * dy;
        if d2 > self.cutoff {
            return 0.0;
        }
        let w = (-0.5 * d2).exp();
        if w < self.config.min_effective_weight {
            0.0
        } else {
            w
        }
    }

    /// Unnormalized kernel value between a query and a sample location
    /// (1 at zero distance, truncated to 0 below `min_effective_weight`).
    pub fn kernel_weight(&self, query: (f64, f64), sample_point: (f64, f64)) -> f64 {
        match (self.transform.apply(query.0, query.1), self.transform.apply(sample_point.0, sample_point.1)) {
            (Some(q), Some((x, y))) => {
                self.weight_at(q, &SamplePoint { x, y, users: 0.0, vacancies: 0.0, hires: 0.0, input_index: 0 })
            }
            _ => 0.0,
        }
    }

    /// Unnormalized weights of every sample point at the query, in input order.
    pub fn raw_weights(&self, u: f64, v: f64) -> Result<Vec<f64>, KernelError> {
        let q = self.query_point(u, v)?;
        let mut w = vec![0.0; self.sample.len()];
        for p in &self.sample {
            w[p.input_index] = self.weight_at(q, p);
        }
        Ok(w)
    }

    /// Weights normalized to sum to one; errors when the query is unsupported.
    pub fn normalized_weights(&self, u: f64, v: f64) -> Result<Vec<f64>, KernelError> {
        let mut w = self.raw_weights(u, v)?;
        let total: f64 = w.iter().sum();
        self.check_support(u, v, total)?;
        w.iter_mut().for_each(|x| *x /= total);
        Ok(w)
    }

    fn check_support(&self, u: f64, v: f64, total: f64) -> Result<(), KernelError> {
        if total > self.config.min_effective_weight && total > 0.0 {
            Ok(())
        } else {
            Err(KernelError::OutOfSupport { u, v, total_weight: total })
        }
    }

    /// Total unnormalized weight at a query, or 0 for invalid coordinates.
    pub fn total_weight(&self, u: f64, v: f64) -> f64 {
        self.raw_weights(u, v).map(|w| w.iter().sum()).unwrap_or(0.0)
    }

    /// Estimated P(H < h | U = u, V = v).
    pub fn conditional_cdf(&self, h: f64, u: f64, v: f64) -> Result<f64, KernelError> {
        let q = self.query_point(u, v)?;
        let mut total = 0.0;
        let mut below = 0.0;
        for p in &self.sample {
            let w = self.weight_at(q, p);
            total += w;
            if p.hires < h {
                below += w;
            }
        }
        self.check_support(u, v, total)?;
        Ok((below / total).clamp(0.0, 1.0))
    }

    /// Mid-distribution rank: the average of P(H < h) and P(H <= h), so an
    /// atom at `h` counts half.
    pub fn conditional_mid_rank(&self, h: f64, u: f64, v: f64) -> Result<f64, KernelError> {
        let q = self.query_point(u, v)?;
        let (mut total, mut below, mut at) = (0.0, 0.0, 0.0);
        for p in &self.sample {
            let w = self.weight_at(q, p);
            total += w;
            if p.hires < h {
                below += w;
            } else if p.hires == h {
                at += w;
            }
        }
        self.check_support(u, v, total)?;
        Ok(((below + 0.5 * at) / total).clamp(0.0, 1.0))
    }

    /// Distinct supported hires at a query as `(h, weight below h, weight at h)`,
    /// with the total weight. Sums run in sample order, as in the rank functions.
    fn atoms(&self, u: f64, v: f64) -> Result<(Vec<Atom>, f64), KernelError> {
        let q = self.query_point(u, v)?;
        let mut atoms: Vec<Atom> = Vec::new();
        let mut cum = 0.0;
        for p in &self.sample {
            let w = self.weight_at(q, p);
            if w <= 0.0 {
                continue;
            }
            match atoms.last_mut() {
                Some(last) if last.0 == p.hires => last.2 += w,
                _ => atoms.push((p.hires, cum, w)),
            }
            cum += w;
        }
        self.check_support(u, v, cum)?;
        Ok((atoms, cum))
    }

    /// Generalized inverse `inf{h : G(h | u, v) >= p}`, linear between weighted steps.
    pub fn conditional_quantile(&self, p: f64, u: f64, v: f64) -> Result<f64, KernelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(KernelError::InvalidProbability(p));
        }
        let (atoms, total) = self.atoms(u, v)?;
        // Strict CDF at each atom, then 1 at the maximum.
        let mut knots: Vec<(f64, f64)> = atoms.iter().map(|&(h, below, _)| (h, (below / total).min(1.0))).collect();
        knots.push((atoms.last().expect("supported").0, 1.0));
        Ok(invert_knots(&knots, p))
    }

    /// Inverse of [`Self::conditional_mid_rank`]: linear between the mid-ranks of
    /// consecutive atoms, pinned to the extreme atoms beyond them.
    pub fn conditional_mid_quantile(&self, p: f64, u: f64, v: f64) -> Result<f64, KernelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(KernelError::InvalidProbability(p));
        }
        let (atoms, total) = self.atoms(u, v)?;
        let knots: Vec<(f64, f64)> =
            atoms.iter().map(|&(h, below, at)| (h, ((below + 0.5 * at) / total).clamp(0.0, 1.0))).collect();
        Ok(invert_knots(&knots, p))
    }

    /// Sample location nearest to a query in kernel space.
    pub fn nearest_sample(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let q = self.transform.apply(u, v)?;
        self.sample
            .iter()
            .min_by(|a, b| {
                let da = (a.x - q.0).powi(2) + (a.y - q.1).powi(2);
                let db = (b.x - q.0).powi(2) + (b.y - q.1).powi(2);
                da.total_cmp(&db)
            })
            .map(|p| (p.users, p.vacancies))
    }
}

/// First-crossing inverse of a non-decreasing piecewise-linear `(h, c)` curve.
fn invert_knots(knots: &[(f64, f64)], p: f64) -> f64 {
    let Some(first) = knots.iter().position(|&(_, c)| c >= p) else {
        return knots[knots.len() - 1].0;
    };
    if first == 0 {
        return knots[0].0;
    }
    let (h0, c0) = knots[first - 1];
    let (h1, c1) = knots[first];
    if c1 == p || c1 <= c0 {
        return h1;
    }
    h0 + (p - c0) / (c1 - c0) * (h1 - h0)
}
