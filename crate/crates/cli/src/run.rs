//! Subcommand bodies. Every output is built in memory, then written with a
//! temp-file rename so an interrupted run never leaves a partial file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use matchfn_core::{
    compute_diagnostics, estimate, estimate_region, generate, ingest_panel, normalize_to_baseline, oracle_report,
    write_diagnostics, write_efficiency_csv, write_elasticity_csv, write_panel, Error, Panel, PanelError, Period,
    RegionEstimate, SynthError, Thresholds, ValidationMetrics,
};
use serde::Serialize;

use crate::chart::{Chart, Facet, Series};
use crate::config::RunConfig;

/// Regions with fewer observations than this get a warning.
const MIN_OBSERVATIONS: usize = 24;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Io(String),
    Estimation(String),
    /// Validation ran but missed a threshold.
    Rejected,
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Rejected => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Estimation(_) => 4,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn estimation_err(e: impl Into<Error>) -> Failure {
    let e = e.into();
    match &e {
        Error::Panel(PanelError::UnknownRegion(_) | PanelError::BaselineMissing(_)) | Error::Synth(SynthError::Config(_)) => {
            Failure::Config(e.to_string())
        }
        _ => Failure::Estimation(e.to_string()),
    }
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| io_err(&path, e))?;
        tmp.persist(&path).map_err(|e| io_err(&path, e.error))?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(format!("{name}: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn report(&self) {
        for p in &self.written {
            println!("wrote {}", p.display());
        }
    }
}

fn load_panel(cfg: &RunConfig) -> Result<Panel, Failure> {
    let path = cfg.input.as_ref().ok_or_else(|| Failure::Config("--input is required".into()))?;
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let panel = ingest_panel(std::io::BufReader::new(file), &cfg.columns, &label)
        .map_err(|e| Failure::Estimation(format!("panel: {}: {e}", path.display())))?;
    for gap in panel.gaps() {
        eprintln!("warning: {} has no row for {}", gap.region.as_deref().unwrap_or("panel"), gap.period);
    }
    match &cfg.region {
        Some(r) => panel.region(Some(r)).map_err(estimation_err),
        None => Ok(panel),
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), Failure>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn facet_for(panel: &Panel, series: Vec<Series>, reference: Option<f64>) -> Facet {
    Facet {
        label: panel.observations()[0].region.clone(),
        periods: panel.observations().iter().map(|o| o.period).collect(),
        series,
        reference,
    }
}

pub fn diagnose(cfg: &RunConfig) -> Result<(), Failure> {
    let panel = load_panel(cfg)?;
    let rows = compute_diagnostics(&panel);
    let mut out = Outputs::new(&cfg.outdir)?;
    let table = csv_bytes(|b| write_diagnostics(&rows, b).map_err(|e| Failure::Io(e.to_string())))?;

    let mut by_region: BTreeMap<Option<String>, Vec<_>> = BTreeMap::new();
    for r in &rows {
        by_region.entry(r.region.clone()).or_default().push(r);
    }
    let regions = panel.split_regions();
    let chart = |title: &str, y_label: &str, pick: &dyn Fn(&Panel) -> Vec<Series>| Chart {
        title: title.into(),
        y_label: y_label.into(),
        facets: regions.iter().map(|p| facet_for(p, pick(p), None)).collect(),
    };
    let diag = |p: &Panel| by_region[&p.observations()[0].region].clone();
    let tightness = chart("Labor market tightness", "V/U", &|p| {
        vec![Series { name: "tightness".into(), values: diag(p).iter().map(|d| d.tightness).collect() }]
    });
    let hires = chart("Hires", "hires", &|p| {
        vec![Series { name: "hires".into(), values: p.observations().iter().map(|o| Some(o.hires)).collect() }]
    });
    let rates = chart("Finding rates", "rate", &|p| {
        vec![
            Series { name: "H/U".into(), values: diag(p).iter().map(|d| d.job_finding_rate).collect() },
            Series { name: "H/V".into(), values: diag(p).iter().map(|d| d.worker_finding_rate).collect() },
        ]
    });

    out.write("diagnostics.csv", &table)?;
    out.write("tightness.svg", tightness.render().as_bytes())?;
    out.write("hires.svg", hires.render().as_bytes())?;
    out.write("finding_rates.svg", rates.render().as_bytes())?;
    out.json("run_config.json", cfg)?;
    out.report();
    Ok(())
}

fn index_series(est: &RegionEstimate, baseline: Option<Period>) -> Result<Vec<Option<f64>>, Failure> {
    let entries = &est.efficiency.entries;
    let base = baseline.unwrap_or(entries[0].period);
    let index = normalize_to_baseline(&est.efficiency.values(), base).map_err(|e| {
        let region = est.region.as_deref().unwrap_or("panel");
        estimation_err(Error::Region { region: region.into(), source: Box::new(e.into()) })
    })?;
    Ok(entries.iter().map(|e| e.efficiency.and_then(|_| index.get(e.period))).collect())
}

pub fn run_estimate(cfg: &RunConfig) -> Result<(), Failure> {
    let panel = load_panel(cfg)?;
    for p in panel.split_regions() {
        if p.len() < MIN_OBSERVATIONS {
            eprintln!(
                "warning: {} has {} observations (fewer than {MIN_OBSERVATIONS}); estimates will be noisy",
                p.observations()[0].region.as_deref().unwrap_or("panel"),
                p.len()
            );
        }
    }
    let estimates = estimate(&panel, &cfg.estimation).map_err(|e| match e {
        Error::Region { source, .. } if matches!(*source, Error::Panel(PanelError::BaselineMissing(_))) => {
            Failure::Config(source.to_string())
        }
        e => Failure::Estimation(e.to_string()),
    })?;

    let mut out = Outputs::new(&cfg.outdir)?;
    let efficiency = csv_bytes(|b| {
        write_efficiency_csv(&estimates, cfg.baseline, b).map_err(|e| estimation_err(Error::Panel(e)))
    })?;
    let elasticity = csv_bytes(|b| write_elasticity_csv(&estimates, b).map_err(|e| Failure::Io(e.to_string())))?;

    let mut eff_facets = Vec::new();
    let mut ela_facets = Vec::new();
    for est in &estimates {
        let index = index_series(est, cfg.baseline)?;
        eff_facets.push(facet_for(&est.panel, vec![Series { name: "efficiency".into(), values: index }], Some(1.0)));
        ela_facets.push(facet_for(
            &est.panel,
            vec![
                Series { name: "AU".into(), values: est.elasticities.iter().map(|e| e.elasticity_au).collect() },
                Series { name: "V".into(), values: est.elasticities.iter().map(|e| e.elasticity_v).collect() },
            ],
            None,
        ));
        summarize(est);
    }
    let baseline_note = match cfg.baseline {
        Some(b) => format!("index, {b} = 1"),
        None => "index, first period = 1".into(),
    };
    let eff_chart = Chart { title: "Matching efficiency".into(), y_label: baseline_note, facets: eff_facets };
    let ela_chart = Chart { title: "Matching elasticity".into(), y_label: "elasticity".into(), facets: ela_facets };

    out.write("efficiency.csv", &efficiency)?;
    out.write("elasticity.csv", &elasticity)?;
    out.write("efficiency.svg", eff_chart.render().as_bytes())?;
    out.write("elasticity.svg", ela_chart.render().as_bytes())?;
    out.json("run_config.json", cfg)?;
    out.report();
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn summarize(est: &RegionEstimate) {
    let in_range = est.efficiency.entries.iter().filter(|e| e.support.as_str() == "in").count();
    let fmt = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{v:.3}"));
    println!(
        "{}: {} periods, {} in support, base {}, mean elasticity AU {} V {}",
        est.region.as_deref().unwrap_or("panel"),
        est.efficiency.entries.len(),
        in_range,
        est.efficiency.base.period,
        fmt(mean(est.elasticities.iter().filter_map(|e| e.elasticity_au))),
        fmt(mean(est.elasticities.iter().filter_map(|e| e.elasticity_v))),
    );
}

pub fn simulate(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.dgp.validate().map_err(estimation_err)?;
    let synth = generate(&cfg.dgp).map_err(estimation_err)?;
    let mut out = Outputs::new(&cfg.outdir)?;
    let panel = csv_bytes(|b| write_panel(&synth.panel, b).map_err(|e| Failure::Io(e.to_string())))?;
    let truth = csv_bytes(|b| synth.write_truth(b).map_err(|e| Failure::Io(e.to_string())))?;
    out.write("panel.csv", &panel)?;
    out.write("truth.csv", &truth)?;
    out.json("run_config.json", cfg)?;
    out.report();
    Ok(())
}

#[derive(Serialize)]
struct ValidationReport<'a> {
    metrics: &'a ValidationMetrics,
    thresholds: Thresholds,
    correlation_ok: bool,
    mae_ok: bool,
    elasticity_ok: bool,
    passed: bool,
}

pub fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.dgp.validate().map_err(estimation_err)?;
    let synth = generate(&cfg.dgp).map_err(estimation_err)?;
    let est = estimate_region(&synth.panel, &cfg.estimation).map_err(|e| Failure::Estimation(e.to_string()))?;
    let metrics = oracle_report(&synth, &est.efficiency, &est.elasticities).map_err(estimation_err)?;
    let t = Thresholds::default();
    let below = |d: Option<f64>| d.is_some_and(|d| d < t.max_elasticity_deviation);
    let report = ValidationReport {
        metrics: &metrics,
        thresholds: t,
        correlation_ok: metrics.efficiency_correlation.is_some_and(|c| c > t.min_correlation),
        mae_ok: metrics.efficiency_mae_log < t.max_mae_log,
        elasticity_ok: below(metrics.elasticity_au_deviation) && below(metrics.elasticity_v_deviation),
        passed: metrics.passes(&t),
    };

    let fmt = |x: Option<f64>| x.map_or("n/a".into(), |v| format!("{v:.4}"));
    let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
    println!("{:<34} {:>10} {:>10}  ", "metric", "value", "threshold");
    println!(
        "{:<34} {:>10} {:>10}  {}",
        "log-efficiency correlation",
        fmt(metrics.efficiency_correlation),
        format!(">{}", t.min_correlation),
        verdict(report.correlation_ok)
    );
    println!(
        "{:<34} {:>10.4} {:>10}  {}",
        "log-efficiency MAE",
        metrics.efficiency_mae_log,
        format!("<{}", t.max_mae_log),
        verdict(report.mae_ok)
    );
    for (name, dev) in [
        (format!("|elasticity AU - {:.2}|", metrics.target_elasticity_au), metrics.elasticity_au_deviation),
        (format!("|elasticity V - {:.2}|", metrics.target_elasticity_v), metrics.elasticity_v_deviation),
    ] {
        println!(
            "{:<34} {:>10} {:>10}  {}",
            name,
            fmt(dev),
            format!("<{}", t.max_elasticity_deviation),
            verdict(below(dev))
        );
    }
    println!("compared {} periods, {} excluded; verdict: {}", metrics.compared, metrics.excluded, if report.passed { "PASS" } else { "FAIL" });

    let mut out = Outputs::new(&cfg.outdir)?;
    out.json("validation.json", &report)?;
    out.json("run_config.json", cfg)?;
    out.report();
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Rejected)
    }
}
