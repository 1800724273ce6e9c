//! Ground-truth panels from a constant-returns Cobb-Douglas matching function,
//! and metrics comparing recovered series against that truth.
//!
//! ```text
//! ln A_t  : constant, random walk or AR(1)
//! ln U_t  = ln(users.level) + users.efficiency_loading * ln A_t + x_t,   x_t = rho x_{t-1} + sigma eta_t
//! ln V_t  = ln(vacancies.level) + vacancies.slope * (ln U_t - ln(users.level)) + eps_t
//! m_t     = mu (A_t U_t)^alpha V_t^(1 - alpha)
//! H_t     = m_t * exp(noise_sd * zeta_t)
//! ```
//!
//! `eps_t` comes from its own RNG stream and never sees the efficiency
//! shocks, so V is independent of A given U.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efficiency::{EfficiencySeries, SupportFlag};
use crate::elasticity::ElasticityEstimate;
use crate::panel::{Panel, PanelError, PanelObservation, Period};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("simulation produced a non-finite value at {0}")]
    NonFinite(Period),
    #[error("recovered series does not line up with the synthetic panel: {0}")]
    Alignment(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EfficiencyProcess {
    Constant,
    LogRandomWalk { sigma: f64 },
    LogAr1 { rho: f64, sigma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProcess {
    /// Users when ln A = 0 and the AR(1) deviation is 0.
    pub level: f64,
    /// Elasticity of users with respect to efficiency.
    pub efficiency_loading: f64,
    pub rho: f64,
    pub sigma: f64,
}

/// `ln V = ln(level) + slope * (ln U - ln(users.level)) + eps`, `eps ~ N(0, noise_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VacancyRule {
    pub level: f64,
    pub slope: f64,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub periods: usize,
    pub start: Period,
    pub region: Option<String>,
    pub alpha: f64,
    pub mu: f64,
    pub efficiency: EfficiencyProcess,
    pub users: UserProcess,
    pub vacancies: VacancyRule,
    /// Lognormal measurement noise on hires.
    pub noise_sd: f64,
    /// Cap hires at min(U, V), for flow-style markets.
    pub cap_hires: bool,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            periods: 2000,
            start: Period::new(2019, 12).expect("valid"),
            region: None,
            alpha: 0.5,
            mu: 0.8,
            efficiency: EfficiencyProcess::LogRandomWalk { sigma: 0.05 },
            users: UserProcess { level: 1000.0, efficiency_loading: 1.0, rho: 0.9, sigma: 0.02 },
            vacancies: VacancyRule { level: 800.0, slope: 2.0, noise_sd: 0.15 },
            noise_sd: 0.0,
            cap_hires: false,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.periods == 0 {
            return err("periods must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return err(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return err(format!("mu must be positive, got {}", self.mu));
        }
        let sd_ok = |s: f64| s >= 0.0 && s.is_finite();
        let rho_ok = |r: f64| (-1.0..=1.0).contains(&r);
        match self.efficiency {
            EfficiencyProcess::Constant => {}
            EfficiencyProcess::LogRandomWalk { sigma } if sd_ok(sigma) => {}
            EfficiencyProcess::LogAr1 { rho, sigma } if sd_ok(sigma) && rho_ok(rho) => {}
            other => return err(format!("invalid efficiency process {other:?}")),
        }
        let u = &self.users;
        if !(u.level > 0.0 && u.level.is_finite() && u.efficiency_loading.is_finite() && rho_ok(u.rho) && sd_ok(u.sigma)) {
            return err(format!("invalid user process {u:?}"));
        }
        let v = &self.vacancies;
        if !(v.level > 0.0 && v.level.is_finite() && v.slope.is_finite() && sd_ok(v.noise_sd)) {
            return err(format!("invalid vacancy rule {v:?}"));
        }
        if !sd_ok(self.noise_sd) {
            return err(format!("noise_sd must be non-negative, got {}", self.noise_sd));
        }
        Ok(())
    }

    /// Closed-form matching function of the generator.
    pub fn matches(&self, efficiency: f64, users: f64, vacancies: f64) -> f64 {
        self.mu * (efficiency * users).powf(self.alpha) * vacancies.powf(1.0 - self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub period: Period,
    pub efficiency: f64,
    pub matches: f64,
    /// Vacancy-rule shock eps_t, kept for independence audits.
    pub vacancy_shock: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: Panel,
    pub truth: Vec<TruthRecord>,
    pub config: DgpConfig,
}

const EFFICIENCY_STREAM: u64 = 1;
const USER_STREAM: u64 = 2;
const VACANCY_STREAM: u64 = 3;
const HIRES_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate(config: &DgpConfig) -> Result<SyntheticPanel, SynthError> {
    config.validate()?;
    let mut eff_rng = stream(config.seed, EFFICIENCY_STREAM);
    let mut user_rng = stream(config.seed, USER_STREAM);
    let mut vac_rng = stream(config.seed, VACANCY_STREAM);
    let mut hires_rng = stream(config.seed, HIRES_STREAM);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let ln_u_level = config.users.level.ln();
    let mut log_a = 0.0;
    let mut x = 0.0;
    let mut observations = Vec::with_capacity(config.periods);
    let mut truth = Vec::with_capacity(config.periods);
    for t in 0..config.periods {
        let period = config.start.offset(t as i64);
        let shock = normal(&mut eff_rng);
        log_a = match config.efficiency {
            EfficiencyProcess::Constant => 0.0,
            _ if t == 0 => 0.0,
            EfficiencyProcess::LogRandomWalk { sigma } => log_a + sigma * shock,
            EfficiencyProcess::LogAr1 { rho, sigma } => rho * log_a + sigma * shock,
        };
        x = config.users.rho * x + config.users.sigma * normal(&mut user_rng);
        let log_u = ln_u_level + config.users.efficiency_loading * log_a + x;
        let eps = config.vacancies.noise_sd * normal(&mut vac_rng);
        let log_v = config.vacancies.level.ln() + config.vacancies.slope * (log_u - ln_u_level) + eps;
        let (a, u, v) = (log_a.exp(), log_u.exp(), log_v.exp());
        let m = config.matches(a, u, v);
        let mut h = m * (config.noise_sd * normal(&mut hires_rng)).exp();
        if config.cap_hires {
            h = h.min(u).min(v);
        }
        if ![a, u, v, m, h].iter().all(|z| z.is_finite()) {
            return Err(SynthError::NonFinite(period));
        }
        let mut obs = PanelObservation::new(period, u, v, h);
        obs.region = config.region.clone();
        observations.push(obs);
        truth.push(TruthRecord { period, efficiency: a, matches: m, vacancy_shock: eps });
    }
    let panel = Panel::new("synthetic", observations)?;
    Ok(SyntheticPanel { panel, truth, config: config.clone() })
}

impl SyntheticPanel {
    pub fn write_truth<W: Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["period", "true_efficiency", "true_matches"])?;
        for r in &self.truth {
            w.write_record([r.period.to_string(), r.efficiency.to_string(), r.matches.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Acceptance thresholds for a validation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_correlation: f64,
    pub max_mae_log: f64,
    pub max_elasticity_deviation: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { min_correlation: 0.95, max_mae_log: 0.05, max_elasticity_deviation: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub alpha: f64,
    pub target_elasticity_au: f64,
    pub target_elasticity_v: f64,
    pub base_period: Period,
    /// Observations with an in-range recovered efficiency.
    pub compared: usize,
    pub excluded: usize,
    pub efficiency_mae_log: f64,
    pub efficiency_correlation: Option<f64>,
    /// Coefficient of variation of recovered efficiency.
    pub efficiency_cv: f64,
    pub interior_elasticities: usize,
    pub elasticity_au_deviation: Option<f64>,
    pub elasticity_v_deviation: Option<f64>,
}

impl ValidationMetrics {
    pub fn passes(&self, t: &Thresholds) -> bool {
        self.efficiency_correlation.is_some_and(|c| c > t.min_correlation)
            && self.efficiency_mae_log < t.max_mae_log
            && self.elasticity_au_deviation.is_some_and(|d| d < t.max_elasticity_deviation)
            && self.elasticity_v_deviation.is_some_and(|d| d < t.max_elasticity_deviation)
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Compares recovered efficiency and elasticities to the generator's truth.
/// Both efficiency paths are normalized at the recovered series' base period.
pub fn oracle_report(
    synthetic: &SyntheticPanel,
    efficiency: &EfficiencySeries,
    elasticities: &[ElasticityEstimate],
) -> Result<ValidationMetrics, SynthError> {
    let truth = &synthetic.truth;
    if efficiency.entries.len() != truth.len() {
        return Err(SynthError::Alignment(format!(
            "{} recovered entries for {} periods",
            efficiency.entries.len(),
            truth.len()
        )));
    }
    if let Some((e, t)) = efficiency.entries.iter().zip(truth).find(|(e, t)| e.period != t.period) {
        return Err(SynthError::Alignment(format!("recovered {} against truth {}", e.period, t.period)));
    }
    let base_period = efficiency.base.period;
    let b = truth
        .iter()
        .position(|t| t.period == base_period)
        .ok_or_else(|| SynthError::Alignment(format!("base period {base_period} not in truth")))?;
    let rec_base = efficiency.entries[b]
        .efficiency
        .ok_or_else(|| SynthError::Alignment(format!("no recovered value at base period {base_period}")))?;
    let true_base = truth[b].efficiency;

    let (mut rec, mut tru) = (Vec::new(), Vec::new());
    for (e, t) in efficiency.entries.iter().zip(truth) {
        if let (Some(a), SupportFlag::InRange) = (e.efficiency, e.support) {
            rec.push((a / rec_base).ln());
            tru.push((t.efficiency / true_base).ln());
        }
    }
    let compared = rec.len();
    let mae = if compared > 0 {
        rec.iter().zip(&tru).map(|(r, t)| (r - t).abs()).sum::<f64>() / compared as f64
    } else {
        f64::NAN
    };
    let levels: Vec<f64> = rec.iter().map(|l| l.exp()).collect();
    let mean = levels.iter().sum::<f64>() / levels.len().max(1) as f64;
    let sd = (levels.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / levels.len().max(1) as f64).sqrt();

    let alpha = synthetic.config.alpha;
    let interior: Vec<&ElasticityEstimate> = elasticities.iter().filter(|e| e.interior).collect();
    let dev = |f: &dyn Fn(&ElasticityEstimate) -> Option<f64>, target: f64| {
        let d: Vec<f64> = interior.iter().filter_map(|e| f(e)).map(|x| (x - target).abs()).collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    };
    Ok(ValidationMetrics {
        alpha,
        target_elasticity_au: alpha,
        target_elasticity_v: 1.0 - alpha,
        base_period,
        compared,
        excluded: truth.len() - compared,
        efficiency_mae_log: mae,
        efficiency_correlation: pearson(&rec, &tru),
        efficiency_cv: sd / mean,
        interior_elasticities: interior.len(),
        elasticity_au_deviation: dev(&|e| e.elasticity_au, alpha),
        elasticity_v_deviation: dev(&|e| e.elasticity_v, 1.0 - alpha),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efficiency::{BasePoint, EfficiencyEntry};

    fn flat_config() -> DgpConfig {
        DgpConfig {
            periods: 24,
            efficiency: EfficiencyProcess::Constant,
            users: UserProcess { level: 100.0, efficiency_loading: 1.0, rho: 0.9, sigma: 0.0 },
            vacancies: VacancyRule { level: 100.0, slope: 1.0, noise_sd: 0.0 },
            ..DgpConfig::default()
        }
    }

    #[test]
    fn closed_form_constant_market() {
        let s = generate(&flat_config()).unwrap();
        for o in s.panel.observations() {
            assert!((o.hires - 80.0).abs() < 1e-10);
            assert!((o.users - 100.0).abs() < 1e-10);
        }
        assert_eq!(s.truth.len(), s.panel.len());
    }

    #[test]
    fn doubling_users_and_vacancies_doubles_hires() {
        let base = generate(&flat_config()).unwrap();
        let mut cfg = flat_config();
        cfg.users.level = 200.0;
        cfg.vacancies.level = 200.0;
        let doubled = generate(&cfg).unwrap();
        for (a, b) in base.panel.observations().iter().zip(doubled.panel.observations()) {
            assert!((b.hires / a.hires - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let cfg = DgpConfig { periods: 200, noise_sd: 0.05, ..DgpConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&DgpConfig { seed: 2, ..cfg.clone() }).unwrap();
        assert_ne!(a.panel, c.panel);
        assert_eq!(a.config.efficiency, c.config.efficiency);
    }

    #[test]
    fn rejects_bad_alpha() {
        for alpha in [0.0, 1.0, 1.5, f64::NAN] {
            let cfg = DgpConfig { alpha, ..DgpConfig::default() };
            assert!(matches!(generate(&cfg), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let cfg = DgpConfig {
            periods: 50,
            efficiency: EfficiencyProcess::LogRandomWalk { sigma: 200.0 },
            ..DgpConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(SynthError::NonFinite(_))));
    }

    #[test]
    fn cap_option_limits_hires() {
        let cfg = DgpConfig { periods: 100, mu: 5.0, cap_hires: true, ..DgpConfig::default() };
        let s = generate(&cfg).unwrap();
        assert!(s.panel.observations().iter().all(|o| o.hires <= o.users.min(o.vacancies)));
    }

    #[test]
    fn matching_function_has_constant_returns() {
        let cfg = DgpConfig { alpha: 0.37, ..DgpConfig::default() };
        for c in [0.5, 3.0, 17.0] {
            let lhs = cfg.matches(1.3, c * 40.0, c * 55.0) / c;
            let rhs = cfg.matches(1.3, 40.0, 55.0);
            assert!((lhs / rhs - 1.0).abs() < 1e-13);
        }
    }

    fn series_from(s: &SyntheticPanel, f: impl Fn(f64) -> f64) -> EfficiencySeries {
        let o = &s.panel.observations()[0];
        EfficiencySeries {
            base: BasePoint { period: o.period, region: None, hires: o.hires, users: o.users, vacancies: o.vacancies },
            entries: s
                .truth
                .iter()
                .map(|t| EfficiencyEntry {
                    period: t.period,
                    region: None,
                    efficiency: Some(f(t.efficiency)),
                    rank: None,
                    support: SupportFlag::InRange,
                })
                .collect(),
        }
    }

    #[test]
    fn perfect_and_scaled_recovery() {
        let s = generate(&DgpConfig { periods: 100, ..DgpConfig::default() }).unwrap();
        let m = oracle_report(&s, &series_from(&s, |a| a), &[]).unwrap();
        assert!(m.efficiency_mae_log < 1e-12);
        assert!((m.efficiency_correlation.unwrap() - 1.0).abs() < 1e-12);
        let m = oracle_report(&s, &series_from(&s, |a| 3.7 * a), &[]).unwrap();
        assert!(m.efficiency_mae_log < 1e-12);
        assert_eq!(m.elasticity_au_deviation, None);
    }

    #[test]
    fn misaligned_periods_rejected() {
        let s = generate(&DgpConfig { periods: 30, ..DgpConfig::default() }).unwrap();
        let mut rec = series_from(&s, |a| a);
        rec.entries.pop();
        assert!(matches!(oracle_report(&s, &rec, &[]), Err(SynthError::Alignment(_))));
        let mut rec = series_from(&s, |a| a);
        rec.entries[4].period = rec.entries[4].period.offset(100);
        assert!(matches!(oracle_report(&s, &rec, &[]), Err(SynthError::Alignment(_))));
    }
}
