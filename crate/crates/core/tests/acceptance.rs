//! Acceptance checks, one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::Instant;

use matchfn_core::panel::MarketDiagnostics;
use matchfn_core::{
    compute_diagnostics, estimate_region, fit_projection, generate, oracle_report, select_base_point,
    trace_distribution, write_efficiency_csv, write_elasticity_csv, write_panel, BasePolicy, ConditionalCdfEstimator,
    DgpConfig, EfficiencyProcess, EstimationOptions, GridSpec, KernelConfig, Panel, PanelObservation, Period,
    ProjectionRow, RegionEstimate, SupportFlag, TraceGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORRELATION_MIN: f64 = 0.95;
const MAE_LOG_MAX: f64 = 0.05;
const RUNTIME_MAX_SECS: f64 = 60.0;
const ELASTICITY_DEV_MAX: f64 = 0.1;
const CONSTANT_CV_MAX: f64 = 0.02;
const BASE_TOL: f64 = 1e-6;
const SCALE_TOL: f64 = 1e-6;
const WEIGHT_SUM_TOL: f64 = 1e-12;
const ROUND_TRIP_TOL: f64 = 1e-9;
const PROJECTION_TOL: f64 = 1e-10;
const DIAGNOSTIC_REL_TOL: f64 = 1e-12;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, name: &str, ok: bool, detail: String) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
}

fn run(panel: &Panel) -> RegionEstimate {
    estimate_region(panel, &EstimationOptions::default()).expect("estimation")
}

fn base_value(est: &RegionEstimate) -> Option<f64> {
    let b = est.efficiency.base.period;
    est.efficiency.entries.iter().find(|e| e.period == b).and_then(|e| e.efficiency)
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn monte_carlo(r: &mut Report, base_errors: &mut Vec<f64>) {
    let start = Instant::now();
    let synth = generate(&DgpConfig::default()).expect("dgp");
    let est = run(&synth.panel);
    let secs = start.elapsed().as_secs_f64();
    let m = oracle_report(&synth, &est.efficiency, &est.elasticities).expect("report");
    base_errors.push((base_value(&est).unwrap_or(f64::NAN) - 1.0).abs());
    let corr = m.efficiency_correlation.unwrap_or(f64::NAN);
    r.line(
        "1 efficiency recovery (T=2000, alpha=0.5, mu=0.8, sigma_A=0.05, seed=1)",
        corr > CORRELATION_MIN && m.efficiency_mae_log < MAE_LOG_MAX && secs < RUNTIME_MAX_SECS,
        format!(
            "corr={corr:.4} (>{CORRELATION_MIN}), mae_log={:.4} (<{MAE_LOG_MAX}), runtime={secs:.1}s (<{RUNTIME_MAX_SECS}s), compared {}/{}",
            m.efficiency_mae_log,
            m.compared,
            m.compared + m.excluded
        ),
    );
    elasticity_line(r, 0.5, &m);
}

fn elasticity_line(r: &mut Report, alpha: f64, m: &matchfn_core::ValidationMetrics) {
    let ok = |d: Option<f64>| d.is_some_and(|d| d < ELASTICITY_DEV_MAX);
    r.line(
        &format!("2 elasticity recovery (alpha={alpha})"),
        ok(m.elasticity_au_deviation) && ok(m.elasticity_v_deviation),
        format!(
            "mean|e_au-{:.2}|={}, mean|e_v-{:.2}|={} (<{ELASTICITY_DEV_MAX}) over {} interior periods",
            m.target_elasticity_au,
            fmt(m.elasticity_au_deviation),
            m.target_elasticity_v,
            fmt(m.elasticity_v_deviation),
            m.interior_elasticities
        ),
    );
}

fn elasticity_other_alphas(r: &mut Report, base_errors: &mut Vec<f64>) {
    for alpha in [0.3, 0.7] {
        let synth = generate(&DgpConfig { alpha, ..DgpConfig::default() }).expect("dgp");
        let est = run(&synth.panel);
        base_errors.push((base_value(&est).unwrap_or(f64::NAN) - 1.0).abs());
        let m = oracle_report(&synth, &est.efficiency, &est.elasticities).expect("report");
        elasticity_line(r, alpha, &m);
    }
}

fn constant_efficiency(r: &mut Report, base_errors: &mut Vec<f64>) {
    let cfg = DgpConfig { periods: 500, efficiency: EfficiencyProcess::Constant, ..DgpConfig::default() };
    let synth = generate(&cfg).expect("dgp");
    let est = run(&synth.panel);
    base_errors.push((base_value(&est).unwrap_or(f64::NAN) - 1.0).abs());
    let m = oracle_report(&synth, &est.efficiency, &est.elasticities).expect("report");
    r.line(
        "3 constant-efficiency degeneracy (T=500)",
        m.efficiency_cv < CONSTANT_CV_MAX,
        format!("cv={:.4} (<{CONSTANT_CV_MAX}) over {} in-range periods", m.efficiency_cv, m.compared),
    );
}

fn normalization(r: &mut Report, base_errors: &mut Vec<f64>) {
    let synth = generate(&DgpConfig { periods: 300, seed: 7, ..DgpConfig::default() }).expect("dgp");
    let est = run(&synth.panel);
    base_errors.push((base_value(&est).unwrap_or(f64::NAN) - 1.0).abs());
    let baseline = synth.panel.observations()[40].period;
    let mut buf = Vec::new();
    write_efficiency_csv(std::slice::from_ref(&est), Some(baseline), &mut buf).expect("csv");
    let text = String::from_utf8(buf).expect("utf8");
    let index_at_baseline = text
        .lines()
        .find(|l| l.starts_with(&baseline.to_string()))
        .and_then(|l| l.split(',').nth(3).map(str::to_owned));
    let worst = base_errors.iter().cloned().fold(0.0, f64::max);
    r.line(
        "4 normalization",
        worst <= BASE_TOL && index_at_baseline.as_deref() == Some("1"),
        format!(
            "max|A_base-1|={worst:.2e} over {} fixtures (<={BASE_TOL:e}), index at baseline {baseline} = {}",
            base_errors.len(),
            index_at_baseline.unwrap_or_default()
        ),
    );
}

fn scale_equivariance(r: &mut Report) {
    let synth = generate(&DgpConfig { periods: 400, seed: 3, ..DgpConfig::default() }).expect("dgp");
    let scaled = Panel::new(
        "scaled",
        synth
            .panel
            .observations()
            .iter()
            .map(|o| PanelObservation::new(o.period, 10.0 * o.users, 10.0 * o.vacancies, 10.0 * o.hires))
            .collect(),
    )
    .expect("panel");
    let a = run(&synth.panel);
    let b = run(&scaled);
    let mut worst: f64 = 0.0;
    let mut mismatched = 0;
    for (x, y) in a.efficiency.entries.iter().zip(&b.efficiency.entries) {
        match (x.efficiency, y.efficiency) {
            (Some(p), Some(q)) => worst = worst.max((p - q).abs()),
            (None, None) => {}
            _ => mismatched += 1,
        }
    }
    r.line(
        "5 scale equivariance (c=10)",
        worst <= SCALE_TOL && mismatched == 0,
        format!("max|dA|={worst:.2e} (<={SCALE_TOL:e}), support mismatches={mismatched}"),
    );
}

fn cdf_properties(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut h_violations, mut col_violations, mut pava_excess) = (0usize, 0usize, 0usize);
    let (mut worst_sum, mut worst_trip): (f64, f64) = (0.0, 0.0);
    let mut trips = 0usize;
    for k in 0..50 {
        let cfg = DgpConfig {
            periods: rng.random_range(150..400),
            alpha: rng.random_range(0.2..0.8),
            noise_sd: rng.random_range(0.0..0.05),
            seed: 1000 + k,
            ..DgpConfig::default()
        };
        let synth = generate(&cfg).expect("dgp");
        let sample: Vec<_> = synth.panel.observations().iter().map(|o| (o.users, o.vacancies, o.hires)).collect();
        let est = ConditionalCdfEstimator::fit(&sample, KernelConfig::default()).expect("fit");
        let hmax = sample.iter().map(|s| s.2).fold(0.0, f64::max) * 1.2;
        for &(u, v, h) in sample.iter().step_by(sample.len() / 5) {
            let w = est.normalized_weights(u, v).expect("supported");
            worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
            let mut prev = 0.0;
            for i in 0..1000 {
                let c = est.conditional_cdf(hmax * i as f64 / 999.0, u, v).expect("supported");
                if c < prev {
                    h_violations += 1;
                }
                prev = c;
            }
            let p = est.conditional_cdf(h, u, v).expect("supported");
            if p > 0.0 && p < 1.0 {
                let back = est.conditional_quantile(p, u, v).expect("quantile");
                worst_trip = worst_trip.max((back - h).abs() / h.max(1.0));
                trips += 1;
            }
        }
        let base = select_base_point(&synth.panel, BasePolicy::Median).expect("base");
        let grid = TraceGrid::new(&GridSpec { psi_count: 80, lambda_count: 20, ..GridSpec::default() }).expect("grid");
        let dist = trace_distribution(&est, &base, &grid).expect("trace");
        for j in 0..grid.lambda_values().len() {
            let cells: Vec<(f64, f64)> = (0..grid.psi_values().len())
                .filter_map(|i| Some((dist.raw(i, j)?, dist.value(i, j)?)))
                .collect();
            let vals: Vec<f64> = (0..grid.psi_values().len()).filter_map(|i| dist.value(i, j)).collect();
            col_violations += vals.windows(2).filter(|w| w[1] < w[0]).count();
            // Largest downward step anywhere in the raw column bounds every PAVA adjustment.
            let mut max_drop: f64 = 0.0;
            let mut running_max = f64::NEG_INFINITY;
            for &(raw, _) in &cells {
                running_max = running_max.max(raw);
                max_drop = max_drop.max(running_max - raw);
            }
            pava_excess += cells.iter().filter(|(raw, fit)| (raw - fit).abs() > max_drop + 1e-12).count();
        }
    }
    r.line(
        "6 conditional CDF properties (50 fixtures)",
        h_violations == 0
            && col_violations == 0
            && pava_excess == 0
            && worst_sum <= WEIGHT_SUM_TOL
            && worst_trip <= ROUND_TRIP_TOL
            && trips > 0,
        format!(
            "h-grid violations={h_violations}, monotonized column violations={col_violations}, \
             PAVA moves beyond raw oscillation={pava_excess}, max|sum w-1|={worst_sum:.1e} (<={WEIGHT_SUM_TOL:e}), \
             max round-trip rel error={worst_trip:.1e} (<={ROUND_TRIP_TOL:e}) over {trips} points"
        ),
    );
}

fn exact_projection(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start: Period = "2020-01".parse().expect("period");
    let rows: Vec<ProjectionRow> = (0..12)
        .map(|t| {
            let au = rng.random_range(50.0..150.0);
            let v = rng.random_range(20.0..200.0);
            ProjectionRow { period: start.offset(t), effective_users: au, vacancies: v, hires: 0.3 * au + 0.5 * v }
        })
        .collect();
    let fit = fit_projection(&rows, false).expect("fit");
    let err = (fit.beta_au - 0.3).abs().max((fit.beta_v - 0.5).abs());
    r.line(
        "7 exact linear projection",
        err <= PROJECTION_TOL,
        format!("beta_au={:.12}, beta_v={:.12}, max error={err:.1e} (<={PROJECTION_TOL:e})", fit.beta_au, fit.beta_v),
    );
}

fn diagnostics(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start: Period = "2000-01".parse().expect("period");
    let obs: Vec<PanelObservation> = (0..500)
        .map(|t| {
            let pick = |rng: &mut ChaCha8Rng| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(1e-3..1e6) };
            PanelObservation::new(start.offset(t), pick(&mut rng), pick(&mut rng), pick(&mut rng))
        })
        .collect();
    let panel = Panel::new("random", obs).expect("panel");
    let rows = compute_diagnostics(&panel);
    let mut worst: f64 = 0.0;
    let mut flag_errors = 0;
    let mut zeros = 0;
    for (o, d) in panel.observations().iter().zip(&rows) {
        let check = |num: f64, den: f64, got: Option<f64>, worst: &mut f64, flags: &mut usize| match got {
            _ if den == 0.0 => {
                if got.is_some() {
                    *flags += 1;
                }
            }
            Some(g) => *worst = worst.max(((g - num / den) / (num / den)).abs().min((g - num / den).abs())),
            None => *flags += 1,
        };
        zeros += usize::from(o.users == 0.0) + usize::from(o.vacancies == 0.0);
        let MarketDiagnostics { tightness, job_finding_rate, worker_finding_rate, .. } = d;
        check(o.vacancies, o.users, *tightness, &mut worst, &mut flag_errors);
        check(o.hires, o.users, *job_finding_rate, &mut worst, &mut flag_errors);
        check(o.hires, o.vacancies, *worker_finding_rate, &mut worst, &mut flag_errors);
    }
    r.line(
        "8 diagnostics arithmetic",
        worst <= DIAGNOSTIC_REL_TOL && flag_errors == 0 && zeros > 0,
        format!("max rel error={worst:.1e} (<={DIAGNOSTIC_REL_TOL:e}), zero denominators={zeros}, mis-flagged={flag_errors}"),
    );
}

fn outputs(seed: u64) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let synth = generate(&DgpConfig { periods: 300, seed, ..DgpConfig::default() }).expect("dgp");
    let est = run(&synth.panel);
    let (mut p, mut e, mut l) = (Vec::new(), Vec::new(), Vec::new());
    write_panel(&synth.panel, &mut p).expect("panel csv");
    write_efficiency_csv(std::slice::from_ref(&est), None, &mut e).expect("efficiency csv");
    write_elasticity_csv(std::slice::from_ref(&est), &mut l).expect("elasticity csv");
    (p, e, l)
}

fn determinism(r: &mut Report) {
    let a = outputs(42);
    let b = outputs(42);
    let flagged = |csv: &[u8]| String::from_utf8_lossy(csv).matches(SupportFlag::InRange.as_str()).count();
    r.line(
        "9 determinism",
        a == b,
        format!(
            "panel {} B, efficiency {} B ({} in-range rows), elasticity {} B; identical={}",
            a.0.len(),
            a.1.len(),
            flagged(&a.1),
            a.2.len(),
            a == b
        ),
    );
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let mut base_errors = Vec::new();
    monte_carlo(&mut r, &mut base_errors);
    elasticity_other_alphas(&mut r, &mut base_errors);
    constant_efficiency(&mut r, &mut base_errors);
    normalization(&mut r, &mut base_errors);
    scale_equivariance(&mut r);
    cdf_properties(&mut r);
    exact_projection(&mut r);
    diagnostics(&mut r);
    determinism(&mut r);
    println!("acceptance: {} failure(s)", r.failures);
    if r.failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
