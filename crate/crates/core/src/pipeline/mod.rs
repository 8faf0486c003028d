//! Stage functions over files, the end-to-end runner and the markdown report.
//!
//! Each stage reads its declared inputs, writes its artifacts and returns a
//! [`Manifest`] naming both with their hashes. `run_all` executes
//! ingest, parse, label, features, train, tune-threshold, evaluate and
//! stratify in that order under one output directory.

mod config;
mod manifest;
mod report;

use std::path::{Path, PathBuf};

use chrono::Datelike;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    apply_env_overrides, PathsConfig, PipelineConfig, RunConfig, StratifyConfig, TrainConfig, ENV_PREFIX,
};
pub use manifest::{digest_path, FileDigest, Manifest, ManifestBuilder};
pub use report::{render_report, write_report};

use crate::error::{Error, Result};
use crate::evaluate::{
    evaluate_scores, importance_report, write_plots, write_table2, EvaluationReport, ImportanceKind, ImportanceRow,
};
use crate::eventstudy::{aggregate_events, label_events, Event, LabelConfig, LabeledEvent, SkippedEvent};
use crate::features::{build_matrix, FeatureMatrix, PurchaseHistory, SectorMap};
use crate::filings::{
    apply_filters, fetch_filing_index, map_cusip, parse_form4_file, read_jsonl, write_jsonl, CusipMap, FilingSource,
    FilterConfig, InsiderTransaction,
};
use crate::learn::{
    optimize_threshold, temporal_split, train_gbm, train_logistic, tscv_tune, ModelArtifact, SplitSpec,
};
use crate::marketdata::{load_bars, load_factors, MarketStore};
use crate::strata::{deviations_from_matrix, robustness_sweep, write_table4, BucketSpec, RegimeSeries, SweepReport};
use crate::synth::SynthConfig;

/// Stage names in execution order.
pub const STAGES: [&str; 8] = [
    "ingest",
    "parse",
    "label",
    "features",
    "train",
    "tune-threshold",
    "evaluate",
    "stratify",
];

/// Artifact names inside the output directory.
pub mod artifacts {
    pub const MARKET: &str = "market";
    pub const TRANSACTIONS: &str = "transactions.jsonl";
    pub const EVENTS: &str = "events.jsonl";
    pub const FEATURES: &str = "features.csv";
    pub const MODEL: &str = "model.json";
    pub const EVALUATION: &str = "evaluation.json";
    pub const TABLE2: &str = "table2.csv";
    pub const TABLE3: &str = "table3.csv";
    pub const PLOTS: &str = "plots";
    pub const TABLE4: &str = "table4.csv";
    pub const MANIFESTS: &str = "manifests";
    pub const REPORT: &str = "report.md";
}

/// Roots used to shorten paths in manifests.
#[derive(Debug, Clone)]
pub struct Roots {
    pub input: PathBuf,
    pub out: PathBuf,
}

impl Roots {
    fn builder(&self, stage: &str) -> ManifestBuilder {
        ManifestBuilder::new(stage, &self.input, &self.out)
    }
}

/// `dir/stem.suffix` next to `path`, e.g. `transactions.rejected.jsonl`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Process exit status for an error: 1 for configuration and validation
/// problems, 2 for missing market data or identifiers (strict mode), 3 for
/// internal faults.
pub fn exit_code(err: &Error) -> i32 {
    let root = err.root();
    if err.is_data_gap() || matches!(root, Error::UnmappedIdentifier { .. } | Error::SingularDesign) {
        2
    } else if matches!(root, Error::Internal(_)) {
        3
    } else {
        1
    }
}

/// A record set aside instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub source: String,
    pub reason: String,
    pub detail: String,
}

pub fn ingest(
    bars: &Path,
    factors: &Path,
    percent: bool,
    cache: &Path,
    roots: &Roots,
) -> Result<(MarketStore, Manifest)> {
    let (bar_rows, n_bars) = load_bars(bars)?;
    let factor_rows = load_factors(factors, percent)?;
    let n_factors = factor_rows.len();
    let store = MarketStore::new(bar_rows, factor_rows)?;
    store.write_cache(cache)?;
    let mut m = roots.builder("ingest");
    m.input(bars)?.input(factors)?.output(cache)?;
    m.rows("bars", n_bars)
        .rows("factors", n_factors)
        .rows("tickers", store.tickers().count());
    m.params(&serde_json::json!({ "percent": percent }))?;
    Ok((store, m.finish()))
}

pub struct ParseOutcome {
    pub kept: Vec<InsiderTransaction>,
    pub manifest: Manifest,
}

/// Parses every document, maps CUSIPs and applies the filters. Writes kept
/// records to `out`, rejections to `<stem>.rejected.jsonl` and unparseable
/// documents or unmapped records to `<stem>.skipped.jsonl`.
#[allow(clippy::too_many_arguments)]
pub fn parse(
    filings: &Path,
    cusip_map: &Path,
    market: &MarketStore,
    market_path: &Path,
    filter: &FilterConfig,
    strict: bool,
    out: &Path,
    roots: &Roots,
) -> Result<ParseOutcome> {
    let map = CusipMap::load(cusip_map)?;
    let docs = fetch_filing_index(&FilingSource::Local(filings.to_path_buf()))?;
    let parsed: Vec<Result<_>> = docs.par_iter().map(|p| parse_form4_file(p)).collect();
    let mut skipped = Vec::new();
    let mut txs = Vec::new();
    for (path, result) in docs.iter().zip(parsed) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match result {
            Ok(doc) => {
                for w in &doc.warnings {
                    tracing::warn!(document = %name, "{w}");
                }
                txs.extend(doc.transactions);
            }
            Err(e) if !strict => skipped.push(SkippedRecord {
                source: name,
                reason: e.reason_code().into(),
                detail: e.to_string(),
            }),
            Err(e) => return Err(e.for_event(name)),
        }
    }
    let n_parsed = txs.len();
    let mut mapped = Vec::with_capacity(txs.len());
    for tx in &txs {
        match map_cusip(tx, &map) {
            Ok(m) => mapped.push(m),
            Err(e) if !strict => skipped.push(SkippedRecord {
                source: tx.accession_id.clone(),
                reason: e.reason_code().into(),
                detail: e.to_string(),
            }),
            Err(e) => return Err(e.for_event(&tx.accession_id)),
        }
    }
    let cfg = FilterConfig {
        strict: filter.strict || strict,
        ..filter.clone()
    };
    let outcome = apply_filters(&mapped, &cfg, market)?;
    let rejected_path = sibling(out, "rejected.jsonl");
    let skipped_path = sibling(out, "skipped.jsonl");
    write_jsonl(out, &outcome.kept)?;
    write_jsonl(&rejected_path, &outcome.rejected)?;
    write_jsonl(&skipped_path, &skipped)?;

    let mut m = roots.builder("parse");
    m.input(filings)?.input(cusip_map)?.input(market_path)?;
    m.output(out)?.output(&rejected_path)?.output(&skipped_path)?;
    m.rows("documents", docs.len())
        .rows("transactions", n_parsed)
        .rows("kept", outcome.kept.len())
        .rows("rejected", outcome.rejected.len())
        .rows("skipped", skipped.len());
    m.params(&cfg)?;
    Ok(ParseOutcome {
        kept: outcome.kept,
        manifest: m.finish(),
    })
}

fn write_skipped(path: &Path, skipped: &[SkippedEvent]) -> Result<()> {
    write_jsonl(path, skipped)
}

pub struct LabelOutcome {
    pub labeled: Vec<LabeledEvent>,
    pub manifest: Manifest,
}

/// Aggregates kept transactions into events and labels them. Skips go to
/// `<stem>.skipped.jsonl`.
pub fn label(
    transactions: &Path,
    market: &MarketStore,
    market_path: &Path,
    cfg: &LabelConfig,
    strict: bool,
    out: &Path,
    roots: &Roots,
) -> Result<LabelOutcome> {
    let txs: Vec<InsiderTransaction> = read_jsonl(transactions)?;
    let events = aggregate_events(&txs);
    let (labeled, skipped) = label_events(market, &events, cfg, strict)?;
    let skipped_path = sibling(out, "skipped.jsonl");
    write_jsonl(out, &labeled)?;
    write_skipped(&skipped_path, &skipped)?;
    let positives = labeled.iter().filter(|l| l.outcome.label == 1).count();
    let mut m = roots.builder("label");
    m.input(transactions)?
        .input(market_path)?
        .output(out)?
        .output(&skipped_path)?;
    m.rows("events", events.len())
        .rows("labeled", labeled.len())
        .rows("positives", positives)
        .rows("skipped", skipped.len());
    m.params(cfg)?;
    Ok(LabelOutcome {
        labeled,
        manifest: m.finish(),
    })
}

/// Builds the feature matrix. Prior purchases come from `history`
/// (transactions JSONL) when given, else from the labeled events.
#[allow(clippy::too_many_arguments)]
pub fn features(
    events: &Path,
    history: Option<&Path>,
    market: &MarketStore,
    market_path: &Path,
    sectors: &Path,
    strict: bool,
    out: &Path,
    roots: &Roots,
) -> Result<(FeatureMatrix, Manifest)> {
    let labeled: Vec<LabeledEvent> = read_jsonl(events)?;
    let prior: Vec<Event> = match history {
        Some(p) => aggregate_events(&read_jsonl::<InsiderTransaction>(p)?),
        None => labeled.iter().map(|l| l.event.clone()).collect(),
    };
    let history_index = PurchaseHistory::new(&prior);
    let sector_map = SectorMap::load(sectors)?;
    let (matrix, skipped) = build_matrix(&labeled, market, &history_index, &sector_map, strict)?;
    let skipped_path = sibling(out, "skipped.jsonl");
    matrix.write_csv(out)?;
    write_skipped(&skipped_path, &skipped)?;
    let mut m = roots.builder("features");
    m.input(events)?;
    if let Some(p) = history {
        m.input(p)?;
    }
    m.input(market_path)?
        .input(sectors)?
        .output(out)?
        .output(&skipped_path)?;
    m.rows("rows", matrix.n_rows()).rows("skipped", skipped.len());
    m.params(&serde_json::json!({ "strict": strict }))?;
    Ok((matrix, m.finish()))
}

pub fn train(
    features: &Path,
    split: &SplitSpec,
    train_cfg: &TrainConfig,
    out: &Path,
    roots: &Roots,
) -> Result<(ModelArtifact, Manifest)> {
    let matrix = FeatureMatrix::read_csv(features)?;
    let parts = temporal_split(&matrix, split)?;
    let tuning = tscv_tune(&parts.train, &train_cfg.grid, train_cfg.folds)?;
    let gbm = train_gbm(&parts.train, &tuning.best)?;
    let mut artifact = ModelArtifact::new(matrix.columns().to_vec(), *split, tuning.best.clone(), gbm);
    artifact.logistic = Some(train_logistic(&parts.train, train_cfg.logistic_l2)?);
    artifact.tuning = Some(tuning);
    artifact.save(out)?;
    let mut m = roots.builder("train");
    m.input(features)?.output(out)?;
    m.rows("train", parts.train.n_rows())
        .rows("valid", parts.valid.n_rows())
        .rows("test", parts.test.n_rows());
    m.seed(artifact.config.seed);
    m.params(&serde_json::json!({ "split": split, "train": train_cfg }))?;
    Ok((artifact, m.finish()))
}

/// Picks F1-optimal thresholds on the validation partition and stores them
/// in the model file.
pub fn tune_threshold(model: &Path, features: &Path, roots: &Roots) -> Result<(ModelArtifact, Manifest)> {
    let mut m = roots.builder("tune-threshold");
    m.input(model)?.input(features)?;
    let mut artifact = ModelArtifact::load(model)?;
    let matrix = FeatureMatrix::read_csv(features)?;
    let parts = temporal_split(&matrix, &artifact.split)?;
    let valid = &parts.valid;
    artifact.threshold = optimize_threshold(&artifact.predict(valid)?, valid.labels())?;
    artifact.logistic_threshold = match artifact.predict_logistic(valid)? {
        Some(scores) => Some(optimize_threshold(&scores, valid.labels())?),
        None => None,
    };
    artifact.save(model)?;
    m.output(model)?;
    m.rows("valid", valid.n_rows());
    m.params(&serde_json::json!({
        "threshold": artifact.threshold,
        "logistic_threshold": artifact.logistic_threshold,
    }))?;
    Ok((artifact, m.finish()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBundle {
    pub reports: Vec<EvaluationReport>,
    pub importance_kind: ImportanceKind,
    pub importance: Vec<ImportanceRow>,
}

/// Rows disclosed after the validation period and no later than `test_end`.
pub fn test_rows(matrix: &FeatureMatrix, split: &SplitSpec) -> FeatureMatrix {
    let idx: Vec<usize> = matrix
        .meta()
        .iter()
        .enumerate()
        .filter(|(_, m)| m.disclosure_date > split.valid_end && m.disclosure_date <= split.test_end)
        .map(|(i, _)| i)
        .collect();
    matrix.select(&idx)
}

fn write_table3(path: &Path, rows: &[ImportanceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "feature", "importance"])?;
    for r in rows {
        w.write_record([r.rank.to_string(), r.feature.clone(), r.importance.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Scores the test partition. Writes `out` (JSON), `table2.csv` and
/// `table3.csv` beside it, and plots into `plots` when given.
pub fn evaluate(
    model: &Path,
    features: &Path,
    out: &Path,
    plots: Option<&Path>,
    kind: ImportanceKind,
    roots: &Roots,
) -> Result<(EvaluationBundle, Manifest)> {
    let artifact = ModelArtifact::load(model)?;
    let matrix = FeatureMatrix::read_csv(features)?;
    let test = test_rows(&matrix, &artifact.split);
    if test.is_empty() {
        return Err(Error::Validation(format!(
            "no feature rows disclosed in the test period ({}, {}]",
            artifact.split.valid_end, artifact.split.test_end
        )));
    }
    let mut reports = vec![evaluate_scores(
        "gbm",
        &artifact.predict(&test)?,
        test.labels(),
        artifact.threshold,
    )?];
    if let Some(scores) = artifact.predict_logistic(&test)? {
        let tau = artifact.logistic_threshold.unwrap_or(artifact.threshold);
        reports.push(evaluate_scores("logistic", &scores, test.labels(), tau)?);
    }
    let importance = importance_report(&artifact, kind);
    let bundle = EvaluationBundle {
        reports,
        importance_kind: kind,
        importance,
    };
    let dir = out.parent().unwrap_or(Path::new("."));
    let table2 = dir.join(artifacts::TABLE2);
    let table3 = dir.join(artifacts::TABLE3);
    std::fs::write(out, serde_json::to_string_pretty(&bundle)? + "\n").map_err(|e| Error::io(out, e))?;
    write_table2(&table2, &bundle.reports)?;
    write_table3(&table3, &bundle.importance)?;

    let mut m = roots.builder("evaluate");
    m.input(model)?
        .input(features)?
        .output(out)?
        .output(&table2)?
        .output(&table3)?;
    if let Some(p) = plots {
        write_plots(p, &bundle.reports, &bundle.reports[0], &bundle.importance)?;
        m.output(p)?;
    }
    m.rows("test", test.n_rows());
    m.params(&serde_json::json!({ "importance": kind }))?;
    Ok((bundle, m.finish()))
}

/// Table 4 at the labelling horizon in `out`, one `table4_h<H>.csv` per swept
/// horizon beside it, and the full sweep as `<stem>.json`.
#[allow(clippy::too_many_arguments)]
pub fn stratify(
    events: &Path,
    features: &Path,
    market: &MarketStore,
    market_path: &Path,
    label_cfg: &LabelConfig,
    horizons: &[usize],
    regime: Option<&Path>,
    spec: &BucketSpec,
    out: &Path,
    roots: &Roots,
) -> Result<(SweepReport, Manifest)> {
    let labeled: Vec<LabeledEvent> = read_jsonl(events)?;
    let matrix = FeatureMatrix::read_csv(features)?;
    let deviations = deviations_from_matrix(&matrix)?;
    let series = regime.map(RegimeSeries::load).transpose()?;
    let mut wanted = horizons.to_vec();
    if !wanted.contains(&label_cfg.horizon) {
        wanted.push(label_cfg.horizon);
    }
    wanted.sort_unstable();
    wanted.dedup();
    let evs: Vec<Event> = labeled.into_iter().map(|l| l.event).collect();
    let sweep = robustness_sweep(market, &evs, &deviations, label_cfg, &wanted, series.as_ref(), spec)?;

    let mut m = roots.builder("stratify");
    m.input(events)?.input(features)?.input(market_path)?;
    if let Some(p) = regime {
        m.input(p)?;
    }
    let dir = out.parent().unwrap_or(Path::new("."));
    for table in &sweep.tables {
        if table.horizon == label_cfg.horizon {
            write_table4(out, &table.buckets)?;
            m.output(out)?;
            m.rows("events", table.n_events);
        }
        let p = dir.join(format!("table4_h{}.csv", table.horizon));
        write_table4(&p, &table.buckets)?;
        m.output(&p)?;
    }
    let json_path = out.with_extension("json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&sweep)? + "\n").map_err(|e| Error::io(&json_path, e))?;
    m.output(&json_path)?;
    m.params(&serde_json::json!({
        "horizons": wanted,
        "edges": spec.edges(),
        "label": label_cfg,
    }))?;
    Ok((sweep, m.finish()))
}

/// Config for a directory written by [`crate::synth::write_dataset`]: synth
/// file names, matching label settings, and a split whose final two years
/// are validation and test.
pub fn synth_pipeline_config(synth: &SynthConfig) -> PipelineConfig {
    use crate::synth::layout;
    let years_back = |n: i32| {
        let e = synth.end;
        e.with_year(e.year() - n)
            .unwrap_or_else(|| e - chrono::Duration::days(365 * i64::from(n)))
    };
    PipelineConfig {
        paths: PathsConfig {
            filings: layout::FILINGS.into(),
            cusip_map: layout::CUSIP_MAP.into(),
            bars: layout::BARS.into(),
            factors: layout::FACTORS.into(),
            factors_percent: false,
            sectors: layout::SECTORS.into(),
            regime: Some(layout::REGIME.into()),
            out: "out".into(),
        },
        label: LabelConfig {
            horizon: synth.horizon,
            car_threshold: synth.car_threshold,
            estimation_window: synth.estimation_window,
            ..LabelConfig::default()
        },
        split: SplitSpec {
            train_end: years_back(2),
            valid_end: years_back(1),
            test_end: synth.end,
        },
        ..PipelineConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifests: Vec<Manifest>,
    pub evaluation: EvaluationBundle,
    pub sweep: SweepReport,
}

fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(artifacts::MANIFESTS).join(format!("{stage}.json"))
}

/// Runs every stage. A failing stage aborts with its name; artifacts written
/// so far stay in place.
pub fn run_all(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate_values()?;
    cfg.validate_paths()?;
    let out = cfg.out_dir();
    let roots = Roots {
        input: cfg.base_dir.clone(),
        out: out.clone(),
    };
    let strict = cfg.run.strict;
    let at = |name: &str| out.join(name);
    let mut manifests = Vec::new();
    let mut record = |m: Manifest| -> Result<()> {
        m.write(&manifest_path(&out, &m.stage))?;
        manifests.push(m);
        Ok(())
    };
    let stage = |name: &'static str| move |e: Error| e.in_stage(name);

    let market_dir = at(artifacts::MARKET);
    tracing::info!("stage ingest");
    let (market, m) = ingest(
        &cfg.resolve(&cfg.paths.bars),
        &cfg.resolve(&cfg.paths.factors),
        cfg.paths.factors_percent,
        &market_dir,
        &roots,
    )
    .map_err(stage("ingest"))?;
    record(m)?;

    tracing::info!("stage parse");
    let transactions = at(artifacts::TRANSACTIONS);
    let parsed = parse(
        &cfg.resolve(&cfg.paths.filings),
        &cfg.resolve(&cfg.paths.cusip_map),
        &market,
        &market_dir,
        &cfg.filter,
        strict,
        &transactions,
        &roots,
    )
    .map_err(stage("parse"))?;
    record(parsed.manifest)?;

    tracing::info!("stage label");
    let events = at(artifacts::EVENTS);
    let labeled =
        label(&transactions, &market, &market_dir, &cfg.label, strict, &events, &roots).map_err(stage("label"))?;
    record(labeled.manifest)?;

    tracing::info!("stage features");
    let features_path = at(artifacts::FEATURES);
    let (_, m) = features(
        &events,
        Some(&transactions),
        &market,
        &market_dir,
        &cfg.resolve(&cfg.paths.sectors),
        strict,
        &features_path,
        &roots,
    )
    .map_err(stage("features"))?;
    record(m)?;

    tracing::info!("stage train");
    let model = at(artifacts::MODEL);
    let (_, m) = train(&features_path, &cfg.split, &cfg.train, &model, &roots).map_err(stage("train"))?;
    record(m)?;

    tracing::info!("stage tune-threshold");
    let (_, m) = tune_threshold(&model, &features_path, &roots).map_err(stage("tune-threshold"))?;
    record(m)?;

    tracing::info!("stage evaluate");
    let (evaluation, m) = evaluate(
        &model,
        &features_path,
        &at(artifacts::EVALUATION),
        Some(&at(artifacts::PLOTS)),
        ImportanceKind::TotalGain,
        &roots,
    )
    .map_err(stage("evaluate"))?;
    record(m)?;

    tracing::info!("stage stratify");
    let spec = cfg.bucket_spec()?;
    let regime = cfg.regime_path();
    let (sweep, m) = stratify(
        &events,
        &features_path,
        &market,
        &market_dir,
        &cfg.label,
        &cfg.stratify.horizons,
        regime.as_deref(),
        &spec,
        &at(artifacts::TABLE4),
        &roots,
    )
    .map_err(stage("stratify"))?;
    record(m)?;

    write_report(&out)?;
    Ok(RunSummary {
        out_dir: out,
        manifests,
        evaluation,
        sweep,
    })
}
