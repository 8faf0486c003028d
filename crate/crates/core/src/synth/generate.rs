use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{SynthConfig, SynthData, TruthRecord, MAX_LAG};
use crate::error::{Error, Result};
use crate::eventstudy::EventKey;
use crate::features::SectorMap;
use crate::filings::{CusipEntry, CusipMap, InsiderTransaction};
use crate::linalg::least_squares;
use crate::marketdata::{DailyBar, FactorReturns};
use crate::strata::BucketSpec;

const STREAM_FACTORS: u64 = u64::MAX;
const STREAM_LABELS: u64 = u64::MAX - 1;
const STREAM_SALES: u64 = u64::MAX - 2;

/// Calendar days of history before the first disclosure and of runway after
/// the last one.
const LEAD_DAYS: i64 = 420;
const TAIL_DAYS: i64 = 130;

const CAP_LOW: f64 = 40e6;
const CAP_HIGH: f64 = 400e6;
const MIN_PURCHASE: f64 = 5_500.0;
/// Gap between a CAR draw and the label threshold.
const LABEL_MARGIN: f64 = 0.005;
const POSITIVE_EXCESS_MEAN: f64 = 0.08;
/// Share of the running bucket error removed at each event.
const STEER: f64 = 0.2;
/// Pseudo-count for the running per-bucket label probability.
const PRIOR_WEIGHT: f64 = 20.0;

const TITLES: [&str; 10] = [
    "Chief Executive Officer",
    "President and CEO",
    "Chief Financial Officer",
    "CFO",
    "Director",
    "Chief Operating Officer",
    "EVP, General Counsel",
    "Chairman of the Board",
    "VP Sales",
    "10% Owner",
];

/// Weekdays in `[from, to]` without New Year's Day, Independence Day and Christmas.
pub(crate) fn trading_days(from: NaiveDate, to: NaiveDate) -> Vec<NaiveDate> {
    from.iter_days()
        .take_while(|d| *d <= to)
        .filter(|d| {
            !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
                && !matches!((d.month(), d.day()), (1, 1) | (7, 4) | (12, 25))
        })
        .collect()
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn exp_draw(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    Exp::new(1.0 / mean).expect("positive rate").sample(rng)
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn ticker_for(i: usize) -> String {
    [17_576, 676, 26, 1]
        .iter()
        .map(|&d| char::from(b'A' + ((i / d) % 26) as u8))
        .collect()
}

struct Insider {
    cik: String,
    title: &'static str,
}

struct Issuer {
    rng: ChaCha8Rng,
    ticker: String,
    cik: String,
    permanent_id: String,
    cusip: String,
    sigma: f64,
    betas: [f64; 3],
    cap_target: f64,
    addv_target: f64,
    insiders: Vec<Insider>,
    biotech: bool,
    close: Vec<f64>,
    volume: Vec<u64>,
    shares: Vec<f64>,
}

impl Issuer {
    fn new(i: usize, seed: u64, biotech_share: f64) -> Self {
        let mut rng = stream(seed, i as u64);
        let p0 = log_uniform(&mut rng, 3.0, 40.0);
        let sigma = rng.random_range(0.015..0.03);
        let betas = [
            rng.random_range(0.5..1.5),
            rng.random_range(0.0..1.0),
            rng.random_range(-0.5..0.5),
        ];
        let cap_target = log_uniform(&mut rng, 60e6, 250e6);
        let addv_target = log_uniform(&mut rng, 5e5, 4e6);
        let n_insiders = rng.random_range(1..=4);
        let insiders = (0..n_insiders)
            .map(|j| Insider {
                cik: format!("{:010}", 2_000_000 + i * 10 + j),
                title: TITLES[rng.random_range(0..TITLES.len())],
            })
            .collect();
        let biotech = rng.random::<f64>() < biotech_share;
        let issuer_no = 100_000 + i;
        let check = issuer_no
            .to_string()
            .bytes()
            .map(|b| usize::from(b - b'0'))
            .sum::<usize>()
            % 10;
        Self {
            rng,
            ticker: ticker_for(i),
            cik: format!("{:010}", 1_000_000 + i),
            permanent_id: format!("P{i:06}"),
            cusip: format!("{issuer_no:06}10{check}"),
            sigma,
            betas,
            cap_target,
            addv_target,
            insiders,
            biotech,
            close: vec![p0],
            volume: Vec::new(),
            shares: Vec::new(),
        }
        .with_first_extras()
    }

    fn with_first_extras(mut self) -> Self {
        self.push_extras();
        self
    }

    fn last(&self) -> usize {
        self.close.len() - 1
    }

    /// Volume and share count for the newest close.
    fn push_extras(&mut self) {
        let c = *self.close.last().expect("non-empty path");
        let noise = (0.4 * normal(&mut self.rng) - 0.08).exp();
        self.volume
            .push(((self.addv_target / c) * noise).round().max(1.0) as u64);
        let prev = self.shares.last().copied().unwrap_or(self.cap_target / c);
        let cap = prev * c;
        let shares = if (CAP_LOW..=CAP_HIGH).contains(&cap) {
            prev
        } else {
            (self.cap_target / c).round()
        };
        self.shares.push(shares);
    }

    fn push_close(&mut self, c: f64) -> Result<()> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Internal(format!(
                "{}: generated a non-positive price",
                self.ticker
            )));
        }
        self.close.push(c);
        self.push_extras();
        Ok(())
    }

    /// Geometric random walk with factor exposure, up to index `to`.
    fn advance(&mut self, to: usize, factors: &[FactorReturns]) -> Result<()> {
        while self.last() < to {
            let t = self.last() + 1;
            let f = &factors[t];
            let prev = self.close[t - 1];
            let r = f.rf
                + self.betas[0] * f.mkt_rf
                + self.betas[1] * f.smb
                + self.betas[2] * f.hml
                + self.sigma * normal(&mut self.rng);
            self.push_close(prev * r.exp())?;
        }
        Ok(())
    }

    /// Bridges from the trade-date close to `target` over `lag` days.
    fn bridge(&mut self, lag: usize, target: f64) -> Result<()> {
        let start = self.close[self.last()].ln();
        let steps: Vec<f64> = (0..lag).map(|_| self.sigma * normal(&mut self.rng)).collect();
        let walk: Vec<f64> = steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        let total = walk[lag - 1];
        for j in 1..lag {
            let frac = j as f64 / lag as f64;
            let x = start + frac * (target.ln() - start) + walk[j - 1] - frac * total;
            self.push_close(x.exp())?;
        }
        self.push_close(target)
    }

    fn deviation(&mut self, bucket: usize) -> f64 {
        match bucket {
            0 => -exp_draw(&mut self.rng, 0.04).min(0.4),
            1 => self.rng.random_range(0.001..0.029),
            2 => self.rng.random_range(0.031..0.049),
            3 => self.rng.random_range(0.051..0.099),
            _ => 0.101 + exp_draw(&mut self.rng, 0.08).min(0.9),
        }
    }
}

/// Normal scores of each value's midrank among the values seen so far.
#[derive(Default)]
struct OnlineScore {
    sorted: Vec<f64>,
}

impl OnlineScore {
    fn push(&mut self, x: f64, normal: &Normal) -> f64 {
        let at = self.sorted.partition_point(|&v| v < x);
        self.sorted.insert(at, x);
        let below = at;
        let equal = self.sorted[at..].partition_point(|&v| v <= x);
        let midrank = below as f64 + (equal as f64 - 1.0) / 2.0;
        let u = (midrank + 0.5) / self.sorted.len() as f64;
        normal.inverse_cdf(u)
    }
}

/// Nodes and weights of a discretised standard normal.
fn normal_grid(step: f64, half_width: f64) -> Vec<(f64, f64)> {
    let k = (half_width / step).round() as i32;
    let raw: Vec<(f64, f64)> = (-k..=k)
        .map(|i| {
            let x = f64::from(i) * step;
            (x, (-0.5 * x * x).exp())
        })
        .collect();
    let total: f64 = raw.iter().map(|g| g.1).sum();
    raw.into_iter().map(|(x, w)| (x, w / total)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logit intercept `b` for which the mean of `E[sigmoid(b + l + s Z)]` over
/// the sampled linear predictors `l` equals `base`. With no sample, `l` is
/// taken as `N(0, prior_var)`.
fn calibrate_intercept(base: f64, predictors: &[f64], prior_var: f64, noise_sd: f64) -> f64 {
    let noise = normal_grid(0.4, 4.0);
    let mean_prob: Box<dyn Fn(f64) -> f64> = if predictors.is_empty() {
        let sd = (prior_var + noise_sd * noise_sd).sqrt();
        let grid = normal_grid(0.025, 8.0);
        Box::new(move |b| grid.iter().map(|&(x, w)| w * sigmoid(b + sd * x)).sum())
    } else {
        let n = predictors.len() as f64;
        Box::new(move |b| {
            predictors
                .iter()
                .map(|l| {
                    noise
                        .iter()
                        .map(|&(x, w)| w * sigmoid(b + l + noise_sd * x))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n
        })
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mean_prob(mid) < base {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Event counts after which the intercept is re-solved.
fn recalibrate_at(n: usize) -> bool {
    n.is_power_of_two() && n >= 16 || n.is_multiple_of(250)
}

struct PlannedEvent {
    issuer: usize,
    tx: usize,
    anchor: usize,
}

fn place_events(cfg: &SynthConfig, issuers: &mut [Issuer], lo: usize, hi: usize) -> Vec<PlannedEvent> {
    let spacing = cfg.event_spacing();
    let last_tx = hi - MAX_LAG;
    let span = last_tx - lo;
    let base = cfg.n_events / cfg.n_issuers;
    let extra = cfg.n_events % cfg.n_issuers;
    let mut out = Vec::with_capacity(cfg.n_events);
    for (i, issuer) in issuers.iter_mut().enumerate() {
        let k = base + usize::from(i < extra);
        if k == 0 {
            continue;
        }
        let free = span - (k - 1) * spacing;
        let mut offsets: Vec<usize> = (0..k).map(|_| issuer.rng.random_range(0..=free)).collect();
        offsets.sort_unstable();
        for (j, off) in offsets.into_iter().enumerate() {
            let tx = lo + off + j * spacing;
            let lag = issuer.rng.random_range(1..=MAX_LAG);
            out.push(PlannedEvent {
                issuer: i,
                tx,
                anchor: tx + lag,
            });
        }
    }
    out.sort_by_key(|e| (e.anchor, e.issuer));
    out
}

fn make_factors(seed: u64, dates: &[NaiveDate]) -> (Vec<FactorReturns>, Vec<(NaiveDate, f64)>) {
    let mut rng = stream(seed, STREAM_FACTORS);
    let mut vol_state = 0.0;
    let mut factors = Vec::with_capacity(dates.len());
    let mut regime = Vec::with_capacity(dates.len());
    for &date in dates {
        factors.push(FactorReturns {
            date,
            mkt_rf: 0.0003 + 0.011 * normal(&mut rng),
            smb: 0.006 * normal(&mut rng),
            hml: 0.006 * normal(&mut rng),
            rf: 0.00008,
        });
        vol_state = 0.97 * vol_state + 1.2 * normal(&mut rng);
        regime.push((date, (18.0 + vol_state).max(9.0)));
    }
    (factors, regime)
}

/// Loadings the pipeline will estimate: OLS of excess returns on
/// `[1, mkt_rf, smb, hml]` over the `window` trading days ending at `end`.
fn fit_loadings(close: &[f64], factors: &[FactorReturns], end: usize, window: usize) -> Result<[f64; 4]> {
    let from = end + 1 - window;
    let mut x = Vec::with_capacity(4 * window);
    let mut y = Vec::with_capacity(window);
    for t in from..=end {
        let f = &factors[t];
        y.push(close[t] / close[t - 1] - 1.0 - f.rf);
        x.extend([1.0, f.mkt_rf, f.smb, f.hml]);
    }
    let ls = least_squares(&x, 4, &y)?;
    Ok([ls.coef[0], ls.coef[1], ls.coef[2], ls.coef[3]])
}

struct BucketSteer {
    targets: Vec<f64>,
    sum_car: Vec<f64>,
    sum_prob: Vec<f64>,
    count: Vec<usize>,
    prior: f64,
}

impl BucketSteer {
    fn draw(&mut self, rng: &mut ChaCha8Rng, bucket: usize, label: u8, prob: f64, threshold: f64) -> f64 {
        let t = self.targets[bucket];
        let n = self.count[bucket] as f64;
        let p_bar = (self.sum_prob[bucket] + prob + self.prior * PRIOR_WEIGHT) / (n + 1.0 + PRIOR_WEIGHT);
        let hi_floor = threshold + LABEL_MARGIN;
        let lo_ceiling = threshold - LABEL_MARGIN;
        let positive_mean = hi_floor + POSITIVE_EXCESS_MEAN;
        let negative_mean = (t - p_bar * positive_mean) / (1.0 - p_bar);
        let raw = if label == 1 {
            hi_floor + exp_draw(rng, POSITIVE_EXCESS_MEAN).min(1.0)
        } else {
            lo_ceiling - exp_draw(rng, (lo_ceiling - negative_mean).max(0.01)).min(0.8)
        };
        let err = self.sum_car[bucket] + raw - t * (n + 1.0);
        let steered = raw - STEER * err;
        let car = if label == 1 {
            steered.clamp(hi_floor, 1.5)
        } else {
            steered.clamp(-0.8, lo_ceiling)
        };
        self.sum_car[bucket] += car;
        self.sum_prob[bucket] += prob;
        self.count[bucket] += 1;
        car
    }
}

/// Builds the full dataset in memory.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let dates = trading_days(
        cfg.start - Duration::days(LEAD_DAYS),
        cfg.end + Duration::days(TAIL_DAYS),
    );
    let lo = dates.partition_point(|d| *d < cfg.start);
    let hi = dates.partition_point(|d| *d <= cfg.end) - 1;
    if lo < cfg.estimation_window + 1 {
        return Err(Error::Config(format!(
            "estimation_window {} exceeds the generated lead-in history",
            cfg.estimation_window
        )));
    }
    if hi + cfg.horizon >= dates.len() {
        return Err(Error::Config(format!(
            "horizon {} exceeds the generated runway",
            cfg.horizon
        )));
    }
    let (factors, regime) = make_factors(cfg.seed, &dates);
    let mut issuers: Vec<Issuer> = (0..cfg.n_issuers)
        .map(|i| Issuer::new(i, cfg.seed, cfg.biotech_share))
        .collect();
    let planned = place_events(cfg, &mut issuers, lo, hi);

    let spec = BucketSpec::default();
    let weights_total: f64 = cfg.bucket_weights.iter().sum();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut label_rng = stream(cfg.seed, STREAM_LABELS);
    let mut score_high = OnlineScore::default();
    let mut score_dev = OnlineScore::default();
    let mut predictors: Vec<f64> = Vec::with_capacity(planned.len());
    let p = &cfg.planted;
    let mut steer = BucketSteer {
        targets: cfg.bucket_effect.clone(),
        sum_car: vec![0.0; spec.n_buckets()],
        sum_prob: vec![0.0; spec.n_buckets()],
        count: vec![0; spec.n_buckets()],
        prior: p.base_rate,
    };
    let mut transactions = Vec::with_capacity(planned.len());
    let mut truth = Vec::with_capacity(planned.len());
    let mut intercept = 0.0;

    for (seq, ev) in planned.iter().enumerate() {
        let issuer = &mut issuers[ev.issuer];
        issuer.advance(ev.tx, &factors)?;
        let price = round4(issuer.close[ev.tx]).max(0.0001);

        let mut pick = issuer.rng.random::<f64>() * weights_total;
        let mut bucket = cfg.bucket_weights.len() - 1;
        for (k, w) in cfg.bucket_weights.iter().enumerate() {
            if pick < *w {
                bucket = k;
                break;
            }
            pick -= w;
        }
        let target_dev = issuer.deviation(bucket);
        issuer.bridge(ev.anchor - ev.tx, price * (1.0 + target_dev))?;

        let anchor_close = issuer.close[ev.anchor];
        let price_deviation = anchor_close / price - 1.0;
        let bucket = spec.bucket_of(price_deviation);
        let window = &issuer.close[ev.anchor + 1 - 252.min(ev.anchor + 1)..=ev.anchor];
        let high = window.iter().copied().fold(f64::MIN, f64::max);
        let pct_from_52w_high = anchor_close / high - 1.0;

        let z_high = score_high.push(pct_from_52w_high, &std_normal);
        let z_dev = score_dev.push(price_deviation, &std_normal);
        let predictor = p.w_52w_high * z_high + p.w_price_dev * z_dev;
        if seq == 0 || recalibrate_at(seq) {
            let prior_var = p.w_52w_high.powi(2) + p.w_price_dev.powi(2);
            intercept = calibrate_intercept(p.base_rate, &predictors, prior_var, p.noise_sd);
        }
        predictors.push(predictor);
        let noise = p.noise_sd * normal(&mut label_rng);
        let prob = sigmoid(intercept + predictor + noise);
        let label = u8::from(label_rng.random::<f64>() < prob);
        let car = steer.draw(&mut label_rng, bucket, label, prob, cfg.car_threshold);

        let coef = fit_loadings(&issuer.close, &factors, ev.anchor, cfg.estimation_window)?;
        let shocks: Vec<f64> = (0..cfg.horizon)
            .map(|_| issuer.sigma * normal(&mut issuer.rng))
            .collect();
        let shock_mean = shocks.iter().sum::<f64>() / cfg.horizon as f64;
        for (h, s) in shocks.iter().enumerate() {
            let f = &factors[ev.anchor + 1 + h];
            let expected = coef[0] + coef[1] * f.mkt_rf + coef[2] * f.smb + coef[3] * f.hml;
            let ar = car / cfg.horizon as f64 + (s - shock_mean);
            let prev = *issuer.close.last().expect("non-empty path");
            issuer.push_close(prev * (1.0 + f.rf + expected + ar))?;
        }

        let insider = &issuer.insiders[issuer.rng.random_range(0..issuer.insiders.len())];
        let value_draw = (27_000f64.ln() + normal(&mut issuer.rng))
            .exp()
            .clamp(MIN_PURCHASE, 5e6);
        let shares = (value_draw / price).round().max((MIN_PURCHASE / price).ceil());
        let (tx_date, disclosure_date) = (dates[ev.tx], dates[ev.anchor]);
        transactions.push(InsiderTransaction {
            accession_id: format!("{}-{:02}-{:06}", issuer.cik, disclosure_date.year() % 100, seq),
            issuer_id: issuer.cik.clone(),
            cusip: issuer.cusip.clone(),
            ticker: issuer.ticker.clone(),
            insider_id: insider.cik.clone(),
            insider_title_raw: insider.title.to_string(),
            transaction_date: tx_date,
            disclosure_date,
            transaction_code: 'P',
            shares,
            price_per_share: price,
            transaction_value: shares * price,
        });
        truth.push(TruthRecord {
            event_key: EventKey {
                issuer_id: issuer.permanent_id.clone(),
                insider_id: insider.cik.clone(),
                disclosure_date,
            },
            ticker: issuer.ticker.clone(),
            transaction_date: tx_date,
            price_per_share: price,
            price_deviation,
            bucket,
            pct_from_52w_high,
            z_52w_high: z_high,
            z_price_dev: z_dev,
            intended_prob: prob,
            label,
            intended_car: car,
        });
    }
    for issuer in &mut issuers {
        issuer.advance(dates.len() - 1, &factors)?;
    }

    let n_sales = (cfg.sale_fraction * cfg.n_events as f64).round() as usize;
    let mut sale_rng = stream(cfg.seed, STREAM_SALES);
    for k in 0..n_sales {
        let issuer = &issuers[sale_rng.random_range(0..issuers.len())];
        let tx = sale_rng.random_range(lo..=hi - MAX_LAG);
        let anchor = tx + sale_rng.random_range(1..=MAX_LAG);
        let insider = &issuer.insiders[sale_rng.random_range(0..issuer.insiders.len())];
        let price = round4(issuer.close[tx]).max(0.0001);
        let shares = f64::from(sale_rng.random_range(500u32..20_000));
        transactions.push(InsiderTransaction {
            accession_id: format!("{}-{:02}-S{:06}", issuer.cik, dates[anchor].year() % 100, k),
            issuer_id: issuer.cik.clone(),
            cusip: issuer.cusip.clone(),
            ticker: issuer.ticker.clone(),
            insider_id: insider.cik.clone(),
            insider_title_raw: insider.title.to_string(),
            transaction_date: dates[tx],
            disclosure_date: dates[anchor],
            transaction_code: 'S',
            shares,
            price_per_share: price,
            transaction_value: shares * price,
        });
    }
    transactions.sort_by(|a, b| a.accession_id.cmp(&b.accession_id));
    truth.sort_by(|a, b| a.event_key.cmp(&b.event_key));

    let mut cusip_map = CusipMap::new();
    let mut bars = Vec::with_capacity(issuers.len() * dates.len());
    for issuer in &issuers {
        cusip_map.insert(
            &issuer.cusip,
            CusipEntry {
                permanent_id: issuer.permanent_id.clone(),
                ticker: issuer.ticker.clone(),
                effective_from: dates[0],
                effective_to: NaiveDate::MAX,
            },
        )?;
        for (t, &date) in dates.iter().enumerate() {
            bars.push(DailyBar {
                ticker: issuer.ticker.clone(),
                date,
                close: issuer.close[t],
                adj_close: issuer.close[t],
                volume: issuer.volume[t],
                shares_outstanding: issuer.shares[t],
            });
        }
    }
    let sectors = SectorMap::new(issuers.iter().map(|i| (i.permanent_id.clone(), i.biotech)));

    Ok(SynthData {
        config: cfg.clone(),
        transactions,
        bars,
        factors,
        cusip_map,
        sectors,
        regime,
        truth,
        intercept,
    })
}
