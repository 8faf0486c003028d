use chrono::NaiveDate;
use proptest::prelude::*;

use super::*;
use crate::eventstudy::{aggregate_events, EventOutcome, FactorLoadings, LabeledEvent};
use crate::filings::InsiderTransaction;
use crate::marketdata::testutil::{bar, flat_factors, store_with_closes, weekdays};
use crate::marketdata::{MarketStore, SpyStore};

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn tx(insider: &str, traded: &str, disclosed: &str, value: f64) -> InsiderTransaction {
    InsiderTransaction {
        accession_id: format!("{insider}-{traded}"),
        issuer_id: "ISS".into(),
        cusip: "000000000".into(),
        ticker: "T".into(),
        insider_id: insider.into(),
        insider_title_raw: "Director".into(),
        transaction_date: d(traded),
        disclosure_date: d(disclosed),
        transaction_code: 'P',
        shares: value / 10.0,
        price_per_share: 10.0,
        transaction_value: value,
    }
}

fn event(insider: &str, traded: &str, disclosed: &str, value: f64) -> Event {
    aggregate_events(&[tx(insider, traded, disclosed, value)]).remove(0)
}

fn labeled(e: Event, label: u8) -> LabeledEvent {
    LabeledEvent {
        outcome: EventOutcome {
            event_key: e.key.clone(),
            loadings: FactorLoadings {
                alpha: 0.0,
                beta_mkt: 0.0,
                beta_smb: 0.0,
                beta_hml: 0.0,
                n_obs: 0,
                estimation_end: e.disclosure_date(),
                std_errors: [0.0; 4],
                residual_sd: 0.0,
            },
            ar_series: vec![],
            car: 0.0,
            label,
            horizon: 30,
            window_start: e.disclosure_date(),
            window_end: e.disclosure_date(),
        },
        event: e,
    }
}

#[test]
fn title_scores() {
    assert_eq!(title_score("Chief Executive Officer"), 5);
    assert_eq!(title_score("Director"), 2);
    assert_eq!(title_score("VP of Sales"), 1);
    assert_eq!(title_score("CFO; Director"), 4);
    assert_eq!(title_score("President & CEO; Director"), 5);
    assert_eq!(title_score("chief operating officer"), 3);
    assert_eq!(title_score("Coordinator"), 1);
    assert_eq!(title_score(""), 1);
}

#[test]
fn price_deviation_uses_the_unadjusted_close() {
    let mut store_bars: Vec<_> = weekdays(d("2024-03-01"), 5)
        .into_iter()
        .map(|dt| bar("T", dt, 11.0))
        .collect();
    for b in &mut store_bars {
        b.adj_close = 5.5;
    }
    let dates: Vec<_> = store_bars.iter().map(|b| b.date).collect();
    let store = MarketStore::new(store_bars, flat_factors(&dates)).unwrap();
    let e = event("A", "2024-03-01", "2024-03-04", 1000.0);
    assert!((price_deviation(&e, &store).unwrap() - 0.10).abs() < 1e-12);
}

#[test]
fn price_deviation_examples() {
    let store = store_with_closes("T", d("2024-03-01"), &[10.0, 9.0, 10.0]);
    let up = event("A", "2024-02-28", "2024-03-01", 1000.0);
    assert_eq!(price_deviation(&up, &store).unwrap(), 0.0);
    let down = event("A", "2024-02-28", "2024-03-04", 1000.0);
    assert!((price_deviation(&down, &store).unwrap() + 0.10).abs() < 1e-12);
    // a weekend disclosure reads the Friday close
    let weekend = event("A", "2024-02-28", "2024-03-02", 1000.0);
    assert_eq!(price_deviation(&weekend, &store).unwrap(), 0.0);
}

#[test]
fn missing_disclosure_bar_is_a_gap() {
    let store = store_with_closes("T", d("2024-03-01"), &[10.0, 9.0, 10.0]);
    let mut e = event("A", "2024-02-28", "2024-03-04", 1000.0);
    e.ticker = "NONE".into();
    assert!(matches!(price_deviation(&e, &store), Err(Error::DataGap { .. })));
}

#[test]
fn range_position_examples() {
    let mut closes: Vec<f64> = (0..100).map(|i| 80.0 + (i % 21) as f64).collect();
    closes.push(100.0);
    let store = store_with_closes("T", d("2023-01-02"), &closes);
    let last = store.calendar().last().unwrap();
    let (hi, lo) = range_position(&store, "T", last).unwrap();
    assert_eq!(hi, 0.0);
    assert!((lo - 0.25).abs() < 1e-12);

    *closes.last_mut().unwrap() = 80.0;
    let store = store_with_closes("T", d("2023-01-02"), &closes);
    let (hi, lo) = range_position(&store, "T", last).unwrap();
    assert!((hi + 0.20).abs() < 1e-12);
    assert_eq!(lo, 0.0);

    let flat = store_with_closes("T", d("2023-01-02"), &[7.0; 80]);
    let (hi, lo) = range_position(&flat, "T", flat.calendar().last().unwrap()).unwrap();
    assert_eq!((hi, lo), (0.0, 0.0));
}

#[test]
fn range_position_needs_sixty_bars() {
    let store = store_with_closes("T", d("2023-01-02"), &[7.0; 59]);
    let last = store.calendar().last().unwrap();
    assert!(matches!(
        range_position(&store, "T", last),
        Err(Error::InsufficientHistory { have: 59, need: 60, .. })
    ));
}

#[test]
fn range_window_is_252_trading_days() {
    // an old high outside the window is ignored
    let mut closes = vec![500.0];
    closes.extend(std::iter::repeat_n(10.0, 252));
    let store = store_with_closes("T", d("2022-01-03"), &closes);
    let (hi, _) = range_position(&store, "T", store.calendar().last().unwrap()).unwrap();
    assert_eq!(hi, 0.0);
}

#[test]
fn month_to_date_on_the_first_trading_day() {
    // 2024-02-29 is a Thursday; 2024-03-01 the first trading day of March
    let closes: Vec<f64> = (0..60).map(|i| 10.0 + 0.1 * i as f64).collect();
    let store = store_with_closes("T", d("2024-01-01"), &closes);
    let march1 = d("2024-03-01");
    let (mtd, _) = trailing_stats(&store, "T", march1).unwrap();
    let want = store.simple_return("T", march1).unwrap();
    assert!((mtd - want).abs() < 1e-15);
}

#[test]
fn constant_prices_have_zero_volatility() {
    let store = store_with_closes("T", d("2024-01-01"), &[10.0; 45]);
    let (mtd, vol) = trailing_stats(&store, "T", store.calendar().last().unwrap()).unwrap();
    assert_eq!((mtd, vol), (0.0, 0.0));
}

#[test]
fn volatility_annualizes_the_log_return_sd() {
    // alternating log returns of +/-0.02 have sample sd 0.02 * sqrt(30/29)
    let mut closes = vec![10.0];
    for i in 0..40 {
        let r: f64 = if i % 2 == 0 { 0.02 } else { -0.02 };
        closes.push(closes.last().unwrap() * r.exp());
    }
    let store = store_with_closes("T", d("2024-01-01"), &closes);
    let (_, vol) = trailing_stats(&store, "T", store.calendar().last().unwrap()).unwrap();
    let oracle = 0.02 * (30.0f64 / 29.0).sqrt() * 252f64.sqrt();
    assert!((vol - oracle).abs() < 1e-12, "{vol} vs {oracle}");
}

#[test]
fn volatility_of_a_fixed_series_matches_a_hand_computation() {
    // log returns chosen so the sample sd is exactly 0.02
    let base = [0.0, 0.02, -0.02, 0.04, -0.04];
    let mean = 0.0;
    let ss: f64 = base.iter().map(|x: &f64| (x - mean).powi(2)).sum::<f64>() * 6.0;
    let scale = 0.02 / (ss / 29.0).sqrt();
    let rets: Vec<f64> = base.iter().cycle().take(30).map(|r| r * scale).collect();
    let mut closes = vec![50.0; 11];
    for r in &rets {
        closes.push(closes.last().unwrap() * r.exp());
    }
    let store = store_with_closes("T", d("2024-01-01"), &closes);
    let (_, vol) = trailing_stats(&store, "T", store.calendar().last().unwrap()).unwrap();
    assert!((vol - 0.02 * 252f64.sqrt()).abs() < 1e-12);
    assert!((vol - 0.3175).abs() < 1e-4);
}

#[test]
fn volatility_needs_twenty_returns() {
    let store = store_with_closes("T", d("2024-01-01"), &[10.0; 20]);
    let last = store.calendar().last().unwrap();
    assert!(matches!(
        trailing_stats(&store, "T", last),
        Err(Error::InsufficientHistory { need: 20, have: 19, .. })
    ));
}

#[test]
fn insider_history_examples() {
    let only = event("A", "2024-03-01", "2024-03-04", 5000.0);
    let h = PurchaseHistory::new(std::slice::from_ref(&only));
    assert_eq!(h.insider_history(&only), (1, 1.0));

    let events = vec![
        event("A", "2023-06-01", "2023-06-02", 10_000.0),
        event("A", "2023-09-01", "2023-09-02", 30_000.0),
        event("A", "2024-03-01", "2024-03-04", 40_000.0),
    ];
    let h = PurchaseHistory::new(&events);
    assert_eq!(h.insider_history(&events[2]), (0, 2.0));

    let events = vec![
        event("A", "2023-01-26", "2023-01-27", 10_000.0),
        event("A", "2024-03-01", "2024-03-04", 40_000.0),
    ];
    let h = PurchaseHistory::new(&events);
    assert_eq!(h.insider_history(&events[1]), (1, 4.0));
}

#[test]
fn history_ignores_other_insiders_and_undisclosed_trades() {
    let events = vec![
        event("B", "2024-01-02", "2024-01-03", 1.0),
        // traded earlier but disclosed after the current event
        event("A", "2024-02-01", "2024-03-20", 1.0),
        event("A", "2024-03-01", "2024-03-04", 40_000.0),
    ];
    let h = PurchaseHistory::new(&events);
    assert_eq!(h.insider_history(&events[2]), (1, 1.0));
}

#[test]
fn sector_map_csv() {
    let m = SectorMap::read("s", "issuer_id,is_biotech\nA,1\nB,false\nC,yes\n".as_bytes()).unwrap();
    assert_eq!(
        (
            m.is_biotech("A"),
            m.is_biotech("B"),
            m.is_biotech("C"),
            m.is_biotech("Z")
        ),
        (1, 0, 1, 0)
    );
    assert!(SectorMap::read("s", "issuer,flag\n".as_bytes()).is_err());
    assert!(SectorMap::read("s", "issuer_id,is_biotech\nA,maybe\n".as_bytes()).is_err());
}

/// 300 weekdays of a gently trending series with a few disclosures near the end.
fn fixture() -> (MarketStore, Vec<LabeledEvent>) {
    let closes: Vec<f64> = (0..300)
        .map(|i| 10.0 + (i as f64 * 0.1).sin() + i as f64 * 0.01)
        .collect();
    let store = store_with_closes("T", d("2023-01-02"), &closes);
    let cal = store.calendar();
    let events = [250, 270, 290]
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let disclosed = cal.get(i).unwrap();
            let traded = cal.get(i - 2).unwrap();
            labeled(
                event(
                    ["A", "B", "C"][k],
                    &traded.to_string(),
                    &disclosed.to_string(),
                    20_000.0,
                ),
                (k % 2) as u8,
            )
        })
        .collect();
    (store, events)
}

#[test]
fn matrix_shape_and_order() {
    let (store, mut events) = fixture();
    events.reverse();
    let sectors = SectorMap::new([("ISS".to_string(), true)]);
    let history = PurchaseHistory::new(&events.iter().map(|e| e.event.clone()).collect::<Vec<_>>());
    let (m, skipped) = build_matrix(&events, &store, &history, &sectors, false).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (3, 12));
    assert!(skipped.is_empty());
    assert_eq!(m.labels(), [0, 1, 0]);
    let dates: Vec<_> = m.meta().iter().map(|r| r.disclosure_date).collect();
    assert!(dates.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(m.column(m.column_index("is_biotech").unwrap()), vec![1.0; 3]);
    assert_eq!(m.column(m.column_index("title_score").unwrap()), vec![2.0; 3]);
}

#[test]
fn matrix_skips_events_without_a_disclosure_bar() {
    let (store, mut events) = fixture();
    events[1].event.ticker = "GONE".into();
    let history = PurchaseHistory::default();
    let (m, skipped) = build_matrix(&events, &store, &history, &SectorMap::default(), false).unwrap();
    assert_eq!(m.n_rows(), 2);
    assert_eq!(skipped.len(), 1);
    assert_eq!(skipped[0].event_key, events[1].event.key);
    assert!(build_matrix(&events, &store, &history, &SectorMap::default(), true).is_err());
}

#[test]
fn empty_event_list() {
    let (store, _) = fixture();
    let (m, skipped) = build_matrix(&[], &store, &PurchaseHistory::default(), &SectorMap::default(), false).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (0, 12));
    assert!(skipped.is_empty());
}

#[test]
fn features_never_read_past_disclosure() {
    let (store, events) = fixture();
    for le in &events {
        let spy = SpyStore::with_ceiling(&store, le.event.disclosure_date());
        compute_features(&le.event, &spy, &PurchaseHistory::default(), &SectorMap::default()).unwrap();
        assert_eq!(spy.violations(), 0);
        assert!(spy.reads() > 0);
    }
}

#[test]
fn is_biotech_ignores_prices() {
    let (store, events) = fixture();
    let flat = store_with_closes("T", d("2023-01-02"), &[10.0; 300]);
    let sectors = SectorMap::new([("ISS".to_string(), true)]);
    for le in &events {
        let a = compute_features(&le.event, &store, &PurchaseHistory::default(), &sectors).unwrap();
        let b = compute_features(&le.event, &flat, &PurchaseHistory::default(), &sectors).unwrap();
        assert_eq!(a.is_biotech, b.is_biotech);
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let (store, events) = fixture();
    let (m, _) = build_matrix(
        &events,
        &store,
        &PurchaseHistory::default(),
        &SectorMap::default(),
        false,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    m.write_csv(&path).unwrap();
    assert_eq!(FeatureMatrix::read_csv(&path).unwrap(), m);
    let header = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        format!("{},event_key,label,disclosure_date", FEATURE_NAMES.join(","))
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sign_constraints_hold(steps in proptest::collection::vec(-0.05f64..0.05, 120..200)) {
        let mut closes = vec![20.0];
        for s in &steps {
            closes.push(closes.last().unwrap() * (1.0 + s));
        }
        let store = store_with_closes("T", d("2023-01-02"), &closes);
        let last = store.calendar().last().unwrap();
        let (hi, lo) = range_position(&store, "T", last).unwrap();
        prop_assert!(hi <= 0.0 && lo >= 0.0);
        let (_, vol) = trailing_stats(&store, "T", last).unwrap();
        prop_assert!(vol >= 0.0);
    }

    #[test]
    fn matrix_is_deterministic_and_order_free(seed in 0usize..6) {
        let (store, mut events) = fixture();
        let (a, _) = build_matrix(&events, &store, &PurchaseHistory::default(), &SectorMap::default(), false).unwrap();
        let n = events.len();
        events.rotate_left(seed % n);
        let (b, _) = build_matrix(&events, &store, &PurchaseHistory::default(), &SectorMap::default(), false).unwrap();
        prop_assert_eq!(a, b);
    }
}
