use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::*;
use crate::marketdata::testutil::{bar, flat_factors, weekdays};
use crate::marketdata::MarketStore;

fn key(issuer: &str, i: usize) -> EventKey {
    format!("{issuer}|ins{i}|2024-01-02").parse().unwrap()
}

fn row(issuer: &str, i: usize, dev: f64, car: f64) -> StrataRow {
    StrataRow {
        event_key: key(issuer, i),
        price_deviation: dev,
        car,
        label: u8::from(car > 0.10),
    }
}

#[test]
fn default_labels_and_boundaries() {
    let spec = BucketSpec::default();
    let labels: Vec<String> = (0..5).map(|k| spec.label(k)).collect();
    assert_eq!(labels, ["≤ 0%", "0%–3%", "3%–5%", "5%–10%", "> 10%"]);
    assert_eq!(spec.bucket_of(-0.05), 0);
    assert_eq!(spec.bucket_of(0.0), 0);
    assert_eq!(spec.bucket_of(0.03), 1);
    assert_eq!(spec.bucket_of(0.10), 3);
    assert_eq!(spec.bucket_of(0.12), 4);
}

#[test]
fn bad_edges_rejected() {
    assert!(BucketSpec::new(vec![0.1, 0.05]).is_err());
    assert!(BucketSpec::new(vec![]).is_err());
    assert!(BucketSpec::new(vec![0.0, f64::NAN]).is_err());
}

#[test]
fn bucket_statistics_by_hand() {
    let rows = vec![
        row("A", 0, -0.05, 0.02),
        row("A", 1, -0.01, 0.04),
        row("B", 2, 0.0, 0.12),
        row("C", 3, 0.2, 0.30),
    ];
    let b = bucketize(&rows, &BucketSpec::default()).unwrap();
    assert_eq!(b[0].n, 3);
    assert_eq!(b[0].n_tickers, 2);
    let mean = (0.02 + 0.04 + 0.12) / 3.0;
    assert!((b[0].mean_car.unwrap() - mean).abs() < 1e-15);
    let sd =
        (((0.02 - mean) * (0.02 - mean) + (0.04 - mean) * (0.04 - mean) + (0.12 - mean) * (0.12 - mean)) / 2.0).sqrt();
    assert!((b[0].ci95_half_width.unwrap() - 1.96 * sd / 3f64.sqrt()).abs() < 1e-15);
    assert!((b[0].prob_outperform.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(b[0].median_car, Some(0.04));
    assert_eq!(b[1].n, 0);
    assert_eq!(b[1].mean_car, None);
    assert_eq!(b[4].n, 1);
    assert_eq!(b[4].ci95_half_width, None);
}

#[test]
fn non_finite_rows_rejected() {
    assert!(bucketize(&[row("A", 0, f64::NAN, 0.0)], &BucketSpec::default()).is_err());
}

#[test]
fn table4_header_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table4.csv");
    let b = bucketize(&[row("A", 0, 0.01, 0.05)], &BucketSpec::default()).unwrap();
    write_table4(&path, &b).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "Price Deviation,N,Tickers,Mean CAR,95% CI,Pr(CAR>10%)"
    );
    assert_eq!(lines.next().unwrap(), "≤ 0%,0,0,,,");
    assert_eq!(lines.next().unwrap(), "0%–3%,1,1,0.05,,0");
}

#[test]
fn welch_examples() {
    let t = welch_t(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    // means 2 and 5, both variances 1: t = -3 / sqrt(2/3), dof = (2/3)^2 / (2 * (1/3)^2 / 2)
    assert!((t.t_stat - (-3.0 / (2.0f64 / 3.0).sqrt())).abs() < 1e-12);
    assert!((t.t_stat + 3.674).abs() < 1e-3);
    assert!((t.dof - 4.0).abs() < 1e-12);
    let same = welch_t(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
    assert_eq!((same.t_stat, same.p_value), (0.0, 1.0));
    assert!(matches!(welch_t(&[1.0], &[1.0, 2.0]), Err(Error::Test(_))));
    assert!(matches!(welch_t(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Test(_))));
}

#[test]
fn t_cdf_matches_reference_library() {
    for &(t, dof) in &[
        (0.0, 1.0),
        (1.0, 1.0),
        (-2.5, 3.0),
        (2.228, 10.0),
        (-5.13, 40.0),
        (0.7, 4.5),
        (3.3, 120.0),
        (-1.2, 7.25),
        (12.0, 2.0),
        (1.96, 1e6),
    ] {
        let want = StudentsT::new(0.0, 1.0, dof).unwrap().cdf(t);
        let got = student_t_cdf(t, dof);
        assert!((got - want).abs() < 1e-10, "t={t} dof={dof}: {got} vs {want}");
    }
    // closed form for one degree of freedom: 1/2 + atan(t)/pi
    for t in [-3.0f64, -0.4, 0.9, 7.0] {
        let want = 0.5 + t.atan() / std::f64::consts::PI;
        assert!((student_t_cdf(t, 1.0) - want).abs() < 1e-12);
    }
}

#[test]
fn ln_gamma_matches_factorials() {
    let mut fact = 1.0f64;
    for n in 1..20 {
        assert!((ln_gamma(f64::from(n)) - fact.ln()).abs() < 1e-12, "n={n}");
        fact *= f64::from(n);
    }
    assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-13);
}

#[test]
fn winsorize_examples() {
    let v: Vec<f64> = (1..=100).map(f64::from).collect();
    let w = winsorize(&v, 0.01, 0.99).unwrap();
    assert_eq!(w[0], 1.99);
    assert_eq!(w[99], 99.01);
    assert_eq!(&w[1..99], &v[1..99]);
    assert_eq!(winsorize(&v, 0.0, 1.0).unwrap(), v);
    assert_eq!(winsorize(&[3.0; 7], 0.01, 0.99).unwrap(), vec![3.0; 7]);
    assert!(winsorize(&[], 0.01, 0.99).is_err());
    assert!(winsorize(&v, 0.5, 0.5).is_err());
}

proptest! {
    #[test]
    fn buckets_partition_the_rows(devs in prop::collection::vec((-0.3f64..0.3, -0.5f64..0.5), 0..80)) {
        let rows: Vec<StrataRow> = devs.iter().enumerate().map(|(i, &(d, c))| row("X", i, d, c)).collect();
        let b = bucketize(&rows, &BucketSpec::default()).unwrap();
        prop_assert_eq!(b.iter().map(|s| s.n).sum::<usize>(), rows.len());
        for s in &b {
            prop_assert!(s.n_tickers <= s.n);
            if let Some(p) = s.prob_outperform {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn bucketize_ignores_order(devs in prop::collection::vec((-0.3f64..0.3, -0.5f64..0.5), 1..60), rot in 0usize..60) {
        let rows: Vec<StrataRow> = devs.iter().enumerate().map(|(i, &(d, c))| row(&format!("I{}", i % 5), i, d, c)).collect();
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        shuffled.reverse();
        prop_assert_eq!(bucketize(&rows, &BucketSpec::default()).unwrap(), bucketize(&shuffled, &BucketSpec::default()).unwrap());
    }

    #[test]
    fn welch_is_antisymmetric(a in prop::collection::vec(-1.0f64..1.0, 2..30), b in prop::collection::vec(-1.0f64..1.0, 2..30)) {
        let ab = welch_t(&a, &b).unwrap();
        let ba = welch_t(&b, &a).unwrap();
        prop_assert_eq!(ab.t_stat, -ba.t_stat);
        prop_assert_eq!(ab.dof, ba.dof);
        prop_assert_eq!(ab.p_value, ba.p_value);
    }

    #[test]
    fn winsorizing_pulls_the_mean_towards_the_median(
        body in prop::collection::vec(-1.0f64..1.0, 200..400),
        outlier in 50.0f64..1e6,
        up in any::<bool>(),
    ) {
        let mut v = body;
        v.push(if up { outlier } else { -outlier });
        let med = median(&v);
        let raw = v.iter().sum::<f64>() / v.len() as f64;
        let w = winsorize(&v, 0.01, 0.99).unwrap();
        let wm = w.iter().sum::<f64>() / w.len() as f64;
        prop_assert!((wm - med).abs() <= (raw - med).abs());
    }

    #[test]
    fn winsorize_matches_rational_quantiles(n in 2usize..300, lo in 0u32..50, hi in 51u32..=100) {
        let v: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        // quantile of 1..=n at k/100 is 1 + (n-1)k/100, exact in rationals
        let q = |k: u32| ((n as u64 - 1) * u64::from(k) + 100) as f64 / 100.0;
        let w = winsorize(&v, f64::from(lo) / 100.0, f64::from(hi) / 100.0).unwrap();
        let (qlo, qhi) = (q(lo), q(hi));
        for (x, got) in v.iter().zip(&w) {
            let want = x.clamp(qlo, qhi);
            prop_assert_eq!(*got, want);
        }
    }
}

/// Flat prices through the anchor; afterwards `daily` per day for days 1..=10
/// and `-daily / 2` per day for days 31..=40.
fn planted_market(plants: &[(&str, f64)]) -> (MarketStore, NaiveDate) {
    let dates = weekdays("2020-01-01".parse().unwrap(), 380);
    let anchor_idx = 300;
    let mut bars = Vec::new();
    for &(ticker, daily) in plants {
        let mut close = 100.0;
        for (i, &d) in dates.iter().enumerate() {
            let step = i as i64 - anchor_idx as i64;
            if (1..=10).contains(&step) {
                close *= 1.0 + daily;
            } else if (31..=40).contains(&step) {
                close *= 1.0 - daily / 2.0;
            }
            bars.push(bar(ticker, d, close));
        }
    }
    (MarketStore::new(bars, flat_factors(&dates)).unwrap(), dates[anchor_idx])
}

fn planted_events(anchor: NaiveDate, plants: &[(&str, f64)]) -> Vec<Event> {
    plants
        .iter()
        .map(|&(ticker, _)| Event {
            key: EventKey {
                issuer_id: ticker.into(),
                insider_id: "ins".into(),
                disclosure_date: anchor,
            },
            ticker: ticker.into(),
            insider_title_raw: "Director".into(),
            transaction_date: anchor,
            shares: 100.0,
            transaction_value: 10_000.0,
            price_per_share: 100.0,
            accession_ids: vec![],
        })
        .collect()
}

const PLANTS: [(&str, f64); 6] = [
    ("L1", 0.0),
    ("L2", 0.001),
    ("L3", -0.001),
    ("H1", 0.010),
    ("H2", 0.012),
    ("H3", 0.014),
];

fn planted_deviations(events: &[Event]) -> BTreeMap<EventKey, f64> {
    events
        .iter()
        .map(|e| (e.key.clone(), if e.ticker.starts_with('H') { 0.2 } else { -0.02 }))
        .collect()
}

#[test]
fn single_horizon_sweep_equals_plain_bucketize() {
    let (market, anchor) = planted_market(&PLANTS);
    let events = planted_events(anchor, &PLANTS);
    let devs = planted_deviations(&events);
    let cfg = LabelConfig::default();
    let spec = BucketSpec::default();
    let sweep = robustness_sweep(&market, &events, &devs, &cfg, &[30], None, &spec).unwrap();
    let (labeled, _) = label_events(&market, &events, &cfg, false).unwrap();
    let (rows, _) = strata_rows(&labeled, &devs);
    assert_eq!(sweep.tables.len(), 1);
    assert_eq!(sweep.tables[0].buckets, bucketize(&rows, &spec).unwrap());
    assert!(sweep.regime.is_none());
}

#[test]
fn constant_low_regime_puts_everything_low() {
    let (market, anchor) = planted_market(&PLANTS);
    let events = planted_events(anchor, &PLANTS);
    let devs = planted_deviations(&events);
    let series = RegimeSeries::new([("2019-06-01".parse().unwrap(), 15.0)]);
    let sweep = robustness_sweep(
        &market,
        &events,
        &devs,
        &LabelConfig::default(),
        &[30],
        Some(&series),
        &BucketSpec::default(),
    )
    .unwrap();
    let split = sweep.regime.unwrap();
    assert_eq!(split.low.iter().map(|b| b.n).sum::<usize>(), PLANTS.len());
    assert_eq!(split.high.iter().map(|b| b.n).sum::<usize>(), 0);
    assert!(split.unassigned.is_empty());
}

#[test]
fn decaying_effect_shrinks_the_spread_with_horizon() {
    let (market, anchor) = planted_market(&PLANTS);
    let events = planted_events(anchor, &PLANTS);
    let devs = planted_deviations(&events);
    let sweep = robustness_sweep(
        &market,
        &events,
        &devs,
        &LabelConfig::default(),
        &[20, 30, 60],
        None,
        &BucketSpec::default(),
    )
    .unwrap();
    let spread: Vec<f64> = sweep
        .tables
        .iter()
        .map(|t| t.buckets[4].mean_car.unwrap() - t.buckets[0].mean_car.unwrap())
        .collect();
    assert!(spread[0] >= spread[1] - 1e-12 && spread[1] > spread[2], "{spread:?}");
    assert!(spread[2] > 0.0);
    for t in &sweep.tables {
        assert!(t.skipped.is_empty());
        assert_eq!(t.n_events, PLANTS.len());
    }
}

#[test]
fn missing_deviation_is_reported() {
    let (market, anchor) = planted_market(&PLANTS);
    let events = planted_events(anchor, &PLANTS);
    let mut devs = planted_deviations(&events);
    devs.remove(&events[0].key);
    let sweep = robustness_sweep(
        &market,
        &events,
        &devs,
        &LabelConfig::default(),
        &[30],
        None,
        &BucketSpec::default(),
    )
    .unwrap();
    assert_eq!(sweep.tables[0].skipped.len(), 1);
    assert_eq!(sweep.tables[0].skipped[0].reason, "no_price_deviation");
}

#[test]
fn regime_series_reads_csv() {
    let s = RegimeSeries::read("vix", "date,value\n2024-01-02,14.5\n2024-01-05,22\n".as_bytes()).unwrap();
    assert_eq!(s.value_at("2024-01-04".parse().unwrap()), Some(14.5));
    assert_eq!(s.value_at("2024-01-05".parse().unwrap()), Some(22.0));
    assert_eq!(s.value_at("2024-01-01".parse().unwrap()), None);
    assert!(RegimeSeries::read("vix", "date,value\nxx,1\n".as_bytes()).is_err());
}
