//! Command-line flags and the fully resolved run configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use matchfn_core::{
    BasePolicy, ColumnMapping, CoordinateTransform, DgpConfig, EfficiencyProcess, EstimationOptions, Period,
};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "matchfn", version, about = "Nonparametric matching-function estimation from users/vacancies/hires panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Tightness and finding-rate table plus trend charts
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Matching efficiency and elasticities per region
    Estimate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
    /// Synthetic panel with known efficiency
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dgp: DgpArgs,
    },
    /// Simulate, estimate and score the recovery against the truth
    Validate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        dgp: DgpArgs,
        #[command(flatten)]
        estimator: EstimatorArgs,
    },
}

#[derive(Args)]
pub struct CommonArgs {
    /// Resolved configuration to start from (a `run_config.json` echo); other flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long)]
    pub outdir: Option<PathBuf>,
    /// Random seed for the synthetic generator [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct InputArgs {
    /// Panel CSV
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Keep only this region
    #[arg(long)]
    pub region: Option<String>,
    /// Period column name [default: period]
    #[arg(long)]
    pub period_col: Option<String>,
    /// Region column name, or `none` to ignore regions [default: region]
    #[arg(long)]
    pub region_col: Option<String>,
    /// Users column name [default: users]
    #[arg(long)]
    pub users_col: Option<String>,
    /// Vacancies column name [default: vacancies]
    #[arg(long)]
    pub vacancies_col: Option<String>,
    /// Hires column name [default: hires]
    #[arg(long)]
    pub hires_col: Option<String>,
}

#[derive(Args)]
pub struct EstimatorArgs {
    /// Kernel bandwidth in transformed coordinates [default: 0.01]
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Coordinate transform: log-range, range or identity [default: log-range]
    #[arg(long)]
    pub transform: Option<CoordinateTransform>,
    /// Efficiency grid points [default: 200]
    #[arg(long)]
    pub grid_psi: Option<usize>,
    /// User-ratio grid points [default: 60]
    #[arg(long)]
    pub grid_lambda: Option<usize>,
    /// Efficiency grid range as lo:hi [default: 0.05:20]
    #[arg(long, value_parser = parse_range)]
    pub psi_range: Option<(f64, f64)>,
    /// User-ratio grid range as lo:hi [default: 0.05:20]
    #[arg(long, value_parser = parse_range)]
    pub lambda_range: Option<(f64, f64)>,
    /// Base observation: median or YYYY-MM [default: median]
    #[arg(long)]
    pub base_point: Option<BasePolicy>,
    /// Rolling window length in periods, 0 for one global fit [default: 12]
    #[arg(long)]
    pub window: Option<usize>,
    /// Period at which the efficiency index equals 1 [default: first period of each region]
    #[arg(long)]
    pub baseline: Option<Period>,
}

#[derive(Args)]
pub struct DgpArgs {
    /// Number of periods [default: 2000]
    #[arg(long)]
    pub periods: Option<usize>,
    /// First period [default: 2019-12]
    #[arg(long)]
    pub start: Option<Period>,
    /// Cobb-Douglas share of effective users [default: 0.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scale of the matching function [default: 0.8]
    #[arg(long)]
    pub mu: Option<f64>,
    /// Step sd of the log-efficiency random walk; 0 keeps efficiency constant [default: 0.05]
    #[arg(long)]
    pub sigma_a: Option<f64>,
    /// Lognormal noise sd on hires [default: 0]
    #[arg(long)]
    pub noise_sd: Option<f64>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("bad lower bound `{lo}`: {e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("bad upper bound `{hi}`: {e}"))?;
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Diagnose,
    Estimate,
    Simulate,
    Validate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Diagnose => "diagnose",
            Mode::Estimate => "estimate",
            Mode::Simulate => "simulate",
            Mode::Validate => "validate",
        }
    }
}

/// Everything a run depends on. Written as `run_config.json` next to the outputs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    #[serde(skip)]
    pub outdir: PathBuf,
    pub region: Option<String>,
    pub columns: ColumnMapping,
    pub estimation: EstimationOptions,
    pub baseline: Option<Period>,
    pub dgp: DgpConfig,
}

impl CommonArgs {
    fn base(&self, mode: Mode) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                let cfg: RunConfig =
                    serde_json::from_str(&text).map_err(|e| format!("{}: invalid config: {e}", path.display()))?;
                if cfg.mode != mode {
                    return Err(format!("{}: config is for `{}`, not `{}`", path.display(), cfg.mode.name(), mode.name()));
                }
                cfg
            }
            None => RunConfig { mode, ..RunConfig::default() },
        };
        cfg.outdir = self.outdir.clone().unwrap_or_else(|| PathBuf::from("out"));
        if let Some(seed) = self.seed {
            cfg.dgp.seed = seed;
        }
        Ok(cfg)
    }
}

impl InputArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.input {
            cfg.input = Some(p.clone());
        }
        if let Some(r) = &self.region {
            cfg.region = Some(r.clone());
        }
        let c = &mut cfg.columns;
        for (flag, slot) in [
            (&self.period_col, &mut c.period),
            (&self.users_col, &mut c.users),
            (&self.vacancies_col, &mut c.vacancies),
            (&self.hires_col, &mut c.hires),
        ] {
            if let Some(name) = flag {
                *slot = name.clone();
            }
        }
        if let Some(name) = &self.region_col {
            c.region = (name != "none").then(|| name.clone());
        }
    }
}

impl EstimatorArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let e = &mut cfg.estimation;
        if let Some(b) = self.bandwidth {
            e.kernel.bandwidth = b;
        }
        if let Some(t) = self.transform {
            e.kernel.transform = t;
        }
        if let Some(n) = self.grid_psi {
            e.grid.psi_count = n;
        }
        if let Some(n) = self.grid_lambda {
            e.grid.lambda_count = n;
        }
        if let Some(r) = self.psi_range {
            e.grid.psi_range = r;
        }
        if let Some(r) = self.lambda_range {
            e.grid.lambda_range = r;
        }
        if let Some(b) = self.base_point {
            e.base_policy = b;
        }
        if let Some(w) = self.window {
            e.projection.window = w;
        }
        if let Some(b) = self.baseline {
            cfg.baseline = Some(b);
        }
    }
}

impl DgpArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let d = &mut cfg.dgp;
        if let Some(n) = self.periods {
            d.periods = n;
        }
        if let Some(s) = self.start {
            d.start = s;
        }
        if let Some(a) = self.alpha {
            d.alpha = a;
        }
        if let Some(m) = self.mu {
            d.mu = m;
        }
        if let Some(s) = self.sigma_a {
            d.efficiency =
                if s == 0.0 { EfficiencyProcess::Constant } else { EfficiencyProcess::LogRandomWalk { sigma: s } };
        }
        if let Some(s) = self.noise_sd {
            d.noise_sd = s;
        }
    }
}

impl Command {
    pub fn resolve(&self) -> Result<RunConfig, String> {
        match self {
            Command::Diagnose { common, input } => {
                let mut cfg = common.base(Mode::Diagnose)?;
                input.apply(&mut cfg);
                Ok(cfg)
            }
            Command::Estimate { common, input, estimator } => {
                let mut cfg = common.base(Mode::Estimate)?;
                input.apply(&mut cfg);
                estimator.apply(&mut cfg);
                Ok(cfg)
            }
            Command::Simulate { common, dgp } => {
                let mut cfg = common.base(Mode::Simulate)?;
                dgp.apply(&mut cfg);
                Ok(cfg)
            }
            Command::Validate { common, dgp, estimator } => {
                let mut cfg = common.base(Mode::Validate)?;
                dgp.apply(&mut cfg);
                estimator.apply(&mut cfg);
                Ok(cfg)
            }
        }
    }
}
