use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::marketdata::testutil::{bar, weekdays};
use crate::marketdata::{FactorReturns, MarketStore, SpyStore};

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

/// Store whose ticker `T` has the given daily returns; the first date has no return.
fn store_from(factors: Vec<FactorReturns>, returns: &[f64]) -> MarketStore {
    let mut price = 20.0;
    let mut bars = vec![bar("T", factors[0].date, price)];
    for (f, r) in factors.iter().skip(1).zip(returns) {
        price *= 1.0 + r;
        bars.push(bar("T", f.date, price));
    }
    MarketStore::new(bars, factors).unwrap()
}

fn random_factors(n: usize, seed: u64) -> Vec<FactorReturns> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    weekdays(d("2020-01-01"), n)
        .into_iter()
        .map(|date| FactorReturns {
            date,
            mkt_rf: rng.random_range(-0.02..0.02),
            smb: rng.random_range(-0.01..0.01),
            hml: rng.random_range(-0.01..0.01),
            rf: 0.0001,
        })
        .collect()
}

const PLANTED: [f64; 4] = [0.0002, 1.2, 0.5, -0.3];

fn planted_returns(factors: &[FactorReturns], noise: &[f64]) -> Vec<f64> {
    factors
        .iter()
        .skip(1)
        .zip(noise.iter().chain(std::iter::repeat(&0.0)))
        .map(|(f, e)| f.rf + PLANTED[0] + PLANTED[1] * f.mkt_rf + PLANTED[2] * f.smb + PLANTED[3] * f.hml + e)
        .collect()
}

/// Closed-form normal equations, independent of the QR path.
fn normal_equations(sample: &EstimationSample) -> Vec<f64> {
    let n = sample.y.len();
    let x = DMatrix::from_fn(n, 4, |i, j| sample.x[i][j]);
    let y = DVector::from_column_slice(&sample.y);
    let xtx = x.transpose() * &x;
    let beta = xtx.try_inverse().unwrap() * x.transpose() * y;
    beta.iter().copied().collect()
}

#[test]
fn all_zero_factors_fit_intercept_only() {
    let mut factors = random_factors(300, 1);
    for f in &mut factors {
        f.mkt_rf = 0.0;
        f.smb = 0.0;
        f.hml = 0.0;
        f.rf = 0.0;
    }
    let store = store_from(factors, &vec![0.001; 299]);
    let end = store.calendar().last().unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    assert!((l.alpha - 0.001).abs() < 1e-12);
    assert_eq!([l.beta_mkt, l.beta_smb, l.beta_hml], [0.0; 3]);
}

#[test]
fn constant_excess_return_gives_alpha_and_zero_betas() {
    let factors = random_factors(300, 2);
    let returns: Vec<f64> = factors.iter().skip(1).map(|f| f.rf + 0.001).collect();
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    assert!((l.alpha - 0.001).abs() < 1e-12);
    for b in [l.beta_mkt, l.beta_smb, l.beta_hml] {
        assert!(b.abs() < 1e-10, "{b}");
    }
    assert_eq!(l.n_obs, 252);
}

#[test]
fn noise_free_design_is_recovered() {
    let factors = random_factors(300, 3);
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    let oracle = normal_equations(&estimation_sample(&store, "T", end, 252));
    for ((got, want), planted) in l.coefficients().iter().zip(&oracle).zip(PLANTED) {
        assert!((got - want).abs() < 1e-10);
        assert!((got - planted).abs() < 1e-10);
    }
}

#[test]
fn duplicated_factor_is_singular() {
    let mut factors = random_factors(300, 4);
    for f in &mut factors {
        f.hml = f.smb;
    }
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    assert!(matches!(
        fit_ff3(&store, "T", end, 252, 126),
        Err(Error::SingularDesign)
    ));
}

#[test]
fn too_few_observations() {
    let factors = random_factors(100, 5);
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    match fit_ff3(&store, "T", end, 252, 126) {
        Err(Error::InsufficientHistory { have, need, .. }) => assert_eq!((have, need), (99, 126)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn residuals_are_orthogonal_to_regressors() {
    let factors = random_factors(300, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let noise: Vec<f64> = (0..299).map(|_| rng.random_range(-0.03..0.03)).collect();
    let returns = planted_returns(&factors, &noise);
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    let sample = estimation_sample(&store, "T", end, 252);
    let coef = l.coefficients();
    let resid: Vec<f64> = sample
        .x
        .iter()
        .zip(&sample.y)
        .map(|(x, y)| y - x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    for j in 0..4 {
        let dot: f64 = resid.iter().zip(&sample.x).map(|(r, x)| r * x[j]).sum();
        assert!(dot.abs() < 1e-8, "column {j}: {dot}");
    }
}

#[test]
fn standard_errors_match_the_textbook_formula() {
    let factors = random_factors(300, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let noise: Vec<f64> = (0..299).map(|_| rng.random_range(-0.02..0.02)).collect();
    let returns = planted_returns(&factors, &noise);
    let store = store_from(factors, &returns);
    let end = store.calendar().last().unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    let sample = estimation_sample(&store, "T", end, 252);
    let n = sample.y.len();
    let x = DMatrix::from_fn(n, 4, |i, j| sample.x[i][j]);
    let y = DVector::from_column_slice(&sample.y);
    let inv = (x.transpose() * &x).try_inverse().unwrap();
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * beta;
    let s2 = resid.norm_squared() / (n - 4) as f64;
    for j in 0..4 {
        let want = (s2 * inv[(j, j)]).sqrt();
        assert!((l.std_errors[j] - want).abs() < 1e-12 * want.max(1.0));
    }
}

#[test]
fn zero_loadings_give_raw_excess_returns() {
    let mut factors = random_factors(40, 8);
    for f in &mut factors {
        f.rf = 0.0;
    }
    let returns: Vec<f64> = (0..39).map(|i| 0.001 * i as f64 - 0.01).collect();
    let store = store_from(factors, &returns);
    let loadings = FactorLoadings {
        alpha: 0.0,
        beta_mkt: 0.0,
        beta_smb: 0.0,
        beta_hml: 0.0,
        n_obs: 0,
        estimation_end: d("2020-01-01"),
        std_errors: [0.0; 4],
        residual_sd: 0.0,
    };
    let start = store.calendar().get(5).unwrap();
    let ar = abnormal_returns(&store, "T", &loadings, start, 30).unwrap();
    for (i, a) in ar.iter().enumerate() {
        assert!((a - returns[4 + i]).abs() < 1e-12);
    }
}

#[test]
fn perfect_fit_gives_zero_abnormal_returns() {
    let factors = random_factors(300, 9);
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let cal = store.calendar();
    let end = cal.get(260).unwrap();
    let l = fit_ff3(&store, "T", end, 252, 126).unwrap();
    let ar = abnormal_returns(&store, "T", &l, cal.get(261).unwrap(), 30).unwrap();
    assert!(ar.iter().all(|a| a.abs() < 1e-12));
}

#[test]
fn missing_mid_window_bar_is_named() {
    let factors = random_factors(60, 10);
    let returns = planted_returns(&factors, &[]);
    let full = store_from(factors.clone(), &returns);
    let missing = full.calendar().get(20).unwrap();
    let bars: Vec<_> = full.series("T").iter().filter(|b| b.date != missing).cloned().collect();
    let store = MarketStore::new(bars, factors).unwrap();
    let l = FactorLoadings {
        alpha: 0.0,
        beta_mkt: 1.0,
        beta_smb: 0.0,
        beta_hml: 0.0,
        n_obs: 0,
        estimation_end: missing,
        std_errors: [0.0; 4],
        residual_sd: 0.0,
    };
    match abnormal_returns(&store, "T", &l, store.calendar().get(10).unwrap(), 30) {
        // the gap breaks both the return on the missing day and the one after
        Err(Error::DataGap { dates, .. }) => assert_eq!(dates, vec![missing, store.calendar().get(21).unwrap()]),
        other => panic!("unexpected {other:?}"),
    }
}

fn path_with(ar: Vec<f64>) -> AbnormalPath {
    AbnormalPath {
        dates: vec![d("2024-01-02"); ar.len()],
        returns: ar.clone(),
        expected: vec![0.0; ar.len()],
        ar,
    }
}

#[test]
fn car_is_the_arithmetic_sum() {
    let car = cumulative(&path_with(vec![0.001; 30]), CarConvention::Sum);
    assert!((car - 0.030).abs() < 1e-15);
    assert_eq!(label_from_car(car, 0.10), 0);
}

#[test]
fn label_is_strict_at_the_threshold() {
    assert_eq!(label_from_car(0.100, 0.10), 0);
    assert_eq!(label_from_car(0.101, 0.10), 1);
    assert_eq!(label_from_car(-0.5, 0.10), 0);
}

#[test]
fn compound_convention() {
    let path = AbnormalPath {
        dates: vec![d("2024-01-02"); 2],
        returns: vec![0.10, 0.10],
        expected: vec![0.0, 0.05],
        ar: vec![0.10, 0.05],
    };
    let want = 1.1 * 1.1 - 1.05;
    assert!((cumulative(&path, CarConvention::Compound) - want).abs() < 1e-15);
}

fn purchase(issuer: &str, insider: &str, disclosed: &str, shares: f64, price: f64) -> InsiderTransaction {
    InsiderTransaction {
        accession_id: format!("{issuer}-{insider}-{disclosed}-{shares}"),
        issuer_id: issuer.into(),
        cusip: "000000000".into(),
        ticker: "T".into(),
        insider_id: insider.into(),
        insider_title_raw: "CEO".into(),
        transaction_date: d(disclosed) - chrono::Duration::days(2),
        disclosure_date: d(disclosed),
        transaction_code: 'P',
        shares,
        price_per_share: price,
        transaction_value: shares * price,
    }
}

#[test]
fn same_day_purchases_aggregate() {
    let txs = vec![
        purchase("I", "A", "2024-03-04", 100.0, 10.0),
        purchase("I", "B", "2024-03-04", 10.0, 10.0),
        purchase("I", "A", "2024-03-04", 300.0, 12.0),
        purchase("I", "A", "2024-03-05", 1.0, 1.0),
    ];
    let events = aggregate_events(&txs);
    assert_eq!(events.len(), 3);
    let e = &events[0];
    assert_eq!((e.key.insider_id.as_str(), e.disclosure_date()), ("A", d("2024-03-04")));
    assert_eq!(e.transaction_value, 4600.0);
    assert_eq!(e.shares, 400.0);
    assert!((e.price_per_share - 11.5).abs() < 1e-12);
    assert_eq!(e.accession_ids.len(), 2);
}

#[test]
fn event_key_round_trips_through_its_string_form() {
    let key = EventKey {
        issuer_id: "0001|x".into(),
        insider_id: "42".into(),
        disclosure_date: d("2024-03-04"),
    };
    assert_eq!(key.to_string().parse::<EventKey>().unwrap(), key);
}

fn event_on(date: NaiveDate) -> Event {
    aggregate_events(&[purchase("I", "A", &date.to_string(), 100.0, 10.0)]).remove(0)
}

#[test]
fn label_event_windows_straddle_disclosure() {
    let factors = random_factors(400, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let noise: Vec<f64> = (0..399).map(|_| rng.random_range(-0.02..0.02)).collect();
    let returns = planted_returns(&factors, &noise);
    let store = store_from(factors, &returns);
    let cal = store.calendar().clone();
    // a Saturday disclosure anchors on the preceding Friday
    let friday = cal
        .dates()
        .iter()
        .copied()
        .skip(300)
        .find(|d| d.format("%a").to_string() == "Fri")
        .unwrap();
    let saturday = friday.succ_opt().unwrap();
    let event = event_on(saturday);

    let spy = SpyStore::with_ceiling(&store, saturday);
    let outcome = label_event_split(&spy, &store, &event, &LabelConfig::default()).unwrap();
    assert_eq!(spy.violations(), 0);
    assert_eq!(spy.max_date_read(), Some(friday));
    assert_eq!(outcome.loadings.estimation_end, friday);
    assert_eq!(outcome.window_start, cal.shift(friday, 1).unwrap());
    assert_eq!(outcome.window_end, cal.shift(friday, 30).unwrap());
    assert_eq!(outcome.ar_series.len(), 30);
    let sum: f64 = outcome.ar_series.iter().sum();
    assert!((outcome.car - sum).abs() < 1e-12);
    assert_eq!(outcome.label, label_from_car(outcome.car, 0.10));
}

#[test]
fn errors_carry_the_event_key() {
    let factors = random_factors(100, 12);
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let event = event_on(store.calendar().get(50).unwrap());
    let err = label_event(&store, &event, &LabelConfig::default()).unwrap_err();
    assert!(err.to_string().contains(&event.key.to_string()), "{err}");
    assert!(err.is_data_gap());
}

#[test]
fn lenient_labeling_skips_and_strict_aborts() {
    let factors = random_factors(400, 13);
    let returns = planted_returns(&factors, &[]);
    let store = store_from(factors, &returns);
    let cal = store.calendar();
    let good = event_on(cal.get(300).unwrap());
    let early = event_on(cal.get(50).unwrap());
    let late = event_on(cal.get(390).unwrap());
    let events = vec![late.clone(), good.clone(), early.clone()];
    let (labeled, skipped) = label_events(&store, &events, &LabelConfig::default(), false).unwrap();
    assert_eq!(labeled.len(), 1);
    assert_eq!(labeled[0].event, good);
    let reasons: Vec<_> = skipped.iter().map(|s| s.reason.as_str()).collect();
    assert_eq!(reasons, ["insufficient_history", "out_of_calendar"]);
    assert!(label_events(&store, &events, &LabelConfig::default(), true).is_err());
}

#[test]
fn config_validation() {
    assert!(LabelConfig::default().validate().is_ok());
    let bad = LabelConfig {
        min_obs: 300,
        ..LabelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let bad = LabelConfig {
        horizon: 0,
        ..LabelConfig::default()
    };
    assert!(bad.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rescaling_factors_preserves_fitted_values(seed in 0u64..1000, c in prop_oneof![0.1f64..0.9, 1.5f64..10.0]) {
        let factors = random_factors(280, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let noise: Vec<f64> = (0..279).map(|_| rng.random_range(-0.02..0.02)).collect();
        let returns = planted_returns(&factors, &noise);
        let scaled: Vec<FactorReturns> = factors
            .iter()
            .map(|f| FactorReturns { mkt_rf: f.mkt_rf * c, smb: f.smb * c, hml: f.hml * c, ..*f })
            .collect();
        let a = store_from(factors, &returns);
        let b = store_from(scaled, &returns);
        let end = a.calendar().last().unwrap();
        let la = fit_ff3(&a, "T", end, 252, 126).unwrap();
        let lb = fit_ff3(&b, "T", end, 252, 126).unwrap();
        let sa = estimation_sample(&a, "T", end, 252);
        let sb = estimation_sample(&b, "T", end, 252);
        for (xa, xb) in sa.x.iter().zip(&sb.x) {
            let fa = la.expected_excess(xa[1], xa[2], xa[3]);
            let fb = lb.expected_excess(xb[1], xb[2], xb[3]);
            prop_assert!((fa - fb).abs() < 1e-10);
        }
        prop_assert!((lb.beta_mkt * c - la.beta_mkt).abs() < 1e-8);
    }

    #[test]
    fn aggregation_conserves_value(values in proptest::collection::vec((0usize..3, 1.0f64..1000.0), 1..30)) {
        let txs: Vec<_> = values
            .iter()
            .map(|&(k, shares)| purchase("I", ["A", "B", "C"][k], "2024-03-04", shares, 3.0))
            .collect();
        let events = aggregate_events(&txs);
        let total: f64 = events.iter().map(|e| e.transaction_value).sum();
        let want: f64 = txs.iter().map(|t| t.transaction_value).sum();
        prop_assert!((total - want).abs() < 1e-9 * want);
    }
}
