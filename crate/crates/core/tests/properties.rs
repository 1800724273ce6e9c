use matchfn_core::synth::pearson;
use matchfn_core::{
    compute_diagnostics, generate, ingest_panel, normalize_to_baseline, write_panel, ColumnMapping,
    ConditionalCdfEstimator, DgpConfig, KernelConfig, Panel, PanelObservation, Period,
};
use proptest::prelude::*;

fn start() -> Period {
    "2015-01".parse().unwrap()
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 9 => 1e-3f64..1e6]
}

fn panel_strategy() -> impl Strategy<Value = Panel> {
    prop::collection::vec((positive(), positive(), positive(), 0usize..3), 1..40).prop_map(|rows| {
        let obs = rows
            .into_iter()
            .enumerate()
            .map(|(t, (u, v, h, r))| {
                PanelObservation::new(start().offset(t as i64), u, v, h).with_region(["Osaka", "Tokyo", "Fukuoka"][r])
            })
            .collect();
        Panel::new("prop", obs).unwrap()
    })
}

fn sample_strategy() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((1.0f64..1e4, 1.0f64..1e4, 0.0f64..1e4), 5..80)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagnostics_are_plain_ratios(panel in panel_strategy()) {
        for (o, d) in panel.observations().iter().zip(compute_diagnostics(&panel)) {
            let ratio = |n: f64, den: f64| (den != 0.0).then(|| n / den);
            prop_assert_eq!(d.tightness, ratio(o.vacancies, o.users));
            prop_assert_eq!(d.job_finding_rate, ratio(o.hires, o.users));
            prop_assert_eq!(d.worker_finding_rate, ratio(o.hires, o.vacancies));
        }
    }

    #[test]
    fn panel_csv_round_trips(panel in panel_strategy()) {
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).unwrap();
        let back = ingest_panel(buf.as_slice(), &ColumnMapping::default(), "prop").unwrap();
        prop_assert_eq!(back.observations(), panel.observations());
    }

    #[test]
    fn normalization_is_idempotent(values in prop::collection::vec(1e-3f64..1e3, 1..50), pick in 0usize..50) {
        let series: Vec<(Period, f64)> = values.iter().enumerate().map(|(t, &v)| (start().offset(t as i64), v)).collect();
        let baseline = series[pick % series.len()].0;
        let once = normalize_to_baseline(&series, baseline).unwrap();
        prop_assert_eq!(once.get(baseline), Some(1.0));
        let twice = normalize_to_baseline(&once.values, baseline).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn cdf_is_a_distribution_in_h(sample in sample_strategy(), bw in 0.05f64..0.5, k in 0usize..80) {
        let est = ConditionalCdfEstimator::fit(&sample, KernelConfig { bandwidth: bw, ..Default::default() }).unwrap();
        let (u, v, _) = sample[k % sample.len()];
        let w = est.normalized_weights(u, v).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        let mut hs: Vec<f64> = sample.iter().map(|s| s.2).collect();
        hs.extend([-1.0, 2e4]);
        hs.sort_by(f64::total_cmp);
        let cdf: Vec<f64> = hs.iter().map(|&h| est.conditional_cdf(h, u, v).unwrap()).collect();
        prop_assert!(cdf.windows(2).all(|c| c[0] <= c[1]));
        prop_assert_eq!(cdf[0], 0.0);
        prop_assert_eq!(*cdf.last().unwrap(), 1.0);
        for &h in &hs {
            let mid = est.conditional_mid_rank(h, u, v).unwrap();
            prop_assert!(mid >= est.conditional_cdf(h, u, v).unwrap());
        }
    }

    #[test]
    fn far_points_do_not_move_the_cdf(sample in sample_strategy(), h in 0.0f64..1e4, bump in 1.0f64..1e4) {
        // Pin the range so the outlier sits beyond the kernel cutoff of the first point.
        let mut s = sample.clone();
        s.push((1e6, 1e6, 0.0));
        let q = s[0];
        let base = ConditionalCdfEstimator::fit(&s, KernelConfig::default()).unwrap();
        let mut moved = s.clone();
        moved.last_mut().unwrap().2 = bump;
        let other = ConditionalCdfEstimator::fit(&moved, KernelConfig::default()).unwrap();
        prop_assume!(base.kernel_weight((q.0, q.1), (1e6, 1e6)) == 0.0);
        prop_assert_eq!(base.conditional_cdf(h, q.0, q.1).unwrap(), other.conditional_cdf(h, q.0, q.1).unwrap());
    }

    #[test]
    fn log_range_kernel_ignores_units(sample in sample_strategy(), c in 0.01f64..100.0, k in 0usize..80) {
        let scaled: Vec<_> = sample.iter().map(|&(u, v, h)| (c * u, c * v, c * h)).collect();
        let a = ConditionalCdfEstimator::fit(&sample, KernelConfig::default()).unwrap();
        let b = ConditionalCdfEstimator::fit(&scaled, KernelConfig::default()).unwrap();
        let (u, v, h) = sample[k % sample.len()];
        let pa = a.conditional_cdf(h, u, v).unwrap();
        let pb = b.conditional_cdf(c * h, c * u, c * v).unwrap();
        prop_assert!((pa - pb).abs() < 1e-9);
    }

    #[test]
    fn generator_has_constant_returns(alpha in 0.05f64..0.95, a in 0.1f64..10.0, u in 1.0f64..1e4, v in 1.0f64..1e4, c in 0.01f64..100.0) {
        let cfg = DgpConfig { alpha, ..DgpConfig::default() };
        let lhs = cfg.matches(a, c * u, c * v);
        let rhs = c * cfg.matches(a, u, v);
        prop_assert!((lhs / rhs - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), periods in 1usize..300) {
        let cfg = DgpConfig { periods, seed, noise_sd: 0.02, ..DgpConfig::default() };
        prop_assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}

/// Vacancy shocks are drawn independently of efficiency, so V carries no
/// information on A beyond U.
#[test]
fn vacancy_shocks_are_independent_of_efficiency() {
    for seed in 1..=5 {
        let s = generate(&DgpConfig { seed, ..DgpConfig::default() }).unwrap();
        let eps: Vec<f64> = s.truth.iter().map(|t| t.vacancy_shock).collect();
        let log_a: Vec<f64> = s.truth.iter().map(|t| t.efficiency.ln()).collect();
        let d_log_a: Vec<f64> = log_a.windows(2).map(|w| w[1] - w[0]).collect();
        // 2000 draws: |r| above 0.1 would be a 4.5-sigma event.
        assert!(pearson(&eps[1..], &d_log_a).unwrap().abs() < 0.1, "seed {seed}");
        // Given U, ln V is a deterministic function plus eps.
        let cfg = &s.config;
        for (o, t) in s.panel.observations().iter().zip(&s.truth) {
            let implied = o.vacancies.ln()
                - cfg.vacancies.level.ln()
                - cfg.vacancies.slope * (o.users.ln() - cfg.users.level.ln());
            assert!((implied - t.vacancy_shock).abs() < 1e-9);
        }
    }
}
