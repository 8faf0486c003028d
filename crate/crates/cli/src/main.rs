use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use insider_core::evaluate::ImportanceKind;
use insider_core::eventstudy::{CarConvention, LabelConfig};
use insider_core::features::FeatureMatrix;
use insider_core::learn::SplitSpec;
use insider_core::marketdata::MarketStore;
use insider_core::pipeline::{self, sibling, Manifest, PipelineConfig, Roots};
use insider_core::strata::BucketSpec;
use insider_core::synth::{self, SynthConfig};
use insider_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "insider",
    version,
    about = "Insider purchase filings to labelled events, models and stratified CAR tables"
)]
struct Cli {
    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log filter, e.g. `info` or `insider_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Importance {
    Total,
    Average,
}

#[derive(Subcommand)]
enum Command {
    /// Parse Form 4 documents, map CUSIPs and apply the universe filters.
    Parse {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        map: PathBuf,
        /// Market cache written by `ingest`.
        #[arg(long)]
        market: PathBuf,
        /// Pipeline config whose `[filter]` section is used.
        #[arg(long)]
        filters: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        strict: bool,
    },
    /// Load bars and factors and write the market cache.
    Ingest {
        #[arg(long)]
        bars: PathBuf,
        #[arg(long)]
        factors: PathBuf,
        /// Factor file is in percent.
        #[arg(long)]
        percent: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate kept transactions into events and label them.
    Label {
        /// Kept transactions JSONL from `parse`.
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        market: PathBuf,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 0.10)]
        car_threshold: f64,
        #[arg(long, default_value_t = 252)]
        estimation_window: usize,
        #[arg(long, default_value_t = 126)]
        min_obs: usize,
        /// Compound returns instead of summing abnormal returns.
        #[arg(long)]
        compound: bool,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the feature matrix for labelled events.
    Features {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        sectors: PathBuf,
        /// Kept transactions JSONL used for insider purchase history.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune and fit the boosted-tree model and the logistic baseline.
    Train {
        #[arg(long)]
        features: PathBuf,
        /// `train_end,valid_end[,test_end]`.
        #[arg(long)]
        split: String,
        /// Pipeline config whose `[train]` section is used.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the F1-optimal threshold on the validation partition.
    TuneThreshold {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Score the test partition and write metrics, tables and plots.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "total")]
        importance: Importance,
    },
    /// Bucket CARs by price deviation across horizons.
    Stratify {
        /// Labelled events JSONL from `label`.
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        market: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "20,30,60")]
        horizons: Vec<usize>,
        #[arg(long)]
        regime: Option<PathBuf>,
        /// Horizon of the main table.
        #[arg(long, default_value_t = 30)]
        horizon: usize,
        #[arg(long, default_value_t = 0.10)]
        car_threshold: f64,
        #[arg(long, default_value_t = 252)]
        estimation_window: usize,
        #[arg(long, default_value_t = 126)]
        min_obs: usize,
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset and a matching `pipeline.toml`.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from one config file.
    RunAll {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render `report.md` for an output directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
        /// Write here instead of `<dir>/report.md`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn roots_for(out: &Path) -> Roots {
    let input = std::env::current_dir().unwrap_or_default();
    let out_root = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.clone());
    Roots { input, out: out_root }
}

fn write_manifest(out: &Path, m: &Manifest) -> Result<()> {
    let path = sibling(out, "manifest.json");
    m.write(&path)
}

fn load_market(path: &Path) -> Result<MarketStore> {
    MarketStore::load_cache(path)
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{s}` is not an ISO-8601 date")))
}

fn split_spec(arg: &str, features: &Path) -> Result<SplitSpec> {
    let dates: Vec<NaiveDate> = arg.split(',').map(parse_date).collect::<Result<_>>()?;
    let spec = match dates.as_slice() {
        [train_end, valid_end, test_end] => SplitSpec {
            train_end: *train_end,
            valid_end: *valid_end,
            test_end: *test_end,
        },
        [train_end, valid_end] => {
            let last = FeatureMatrix::read_csv(features)?
                .meta()
                .iter()
                .map(|m| m.disclosure_date)
                .max()
                .ok_or_else(|| Error::Validation("feature file has no rows".into()))?;
            SplitSpec {
                train_end: *train_end,
                valid_end: *valid_end,
                test_end: last,
            }
        }
        _ => return Err(Error::Config(format!("--split needs 2 or 3 dates, got `{arg}`"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn optional_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn label_config(
    horizon: usize,
    car_threshold: f64,
    estimation_window: usize,
    min_obs: usize,
    compound: bool,
) -> Result<LabelConfig> {
    let cfg = LabelConfig {
        horizon,
        car_threshold,
        estimation_window,
        min_obs,
        convention: if compound {
            CarConvention::Compound
        } else {
            CarConvention::Sum
        },
    };
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse {
            input,
            map,
            market,
            filters,
            out,
            strict,
        } => {
            let cfg = optional_config(filters.as_deref())?;
            let store = load_market(&market)?;
            let outcome = pipeline::parse(
                &input,
                &map,
                &store,
                &market,
                &cfg.filter,
                strict,
                &out,
                &roots_for(&out),
            )?;
            write_manifest(&out, &outcome.manifest)?;
            println!("kept {} transactions", outcome.kept.len());
        }
        Command::Ingest {
            bars,
            factors,
            percent,
            out,
        } => {
            let (store, m) = pipeline::ingest(&bars, &factors, percent, &out, &roots_for(&out))?;
            write_manifest(&out, &m)?;
            println!(
                "cached {} bars for {} tickers",
                store.bar_count(),
                store.tickers().count()
            );
        }
        Command::Label {
            events,
            market,
            horizon,
            car_threshold,
            estimation_window,
            min_obs,
            compound,
            strict,
            out,
        } => {
            let cfg = label_config(horizon, car_threshold, estimation_window, min_obs, compound)?;
            let store = load_market(&market)?;
            let outcome = pipeline::label(&events, &store, &market, &cfg, strict, &out, &roots_for(&out))?;
            write_manifest(&out, &outcome.manifest)?;
            println!("labelled {} events", outcome.labeled.len());
        }
        Command::Features {
            events,
            market,
            sectors,
            history,
            strict,
            out,
        } => {
            let store = load_market(&market)?;
            let (matrix, m) = pipeline::features(
                &events,
                history.as_deref(),
                &store,
                &market,
                &sectors,
                strict,
                &out,
                &roots_for(&out),
            )?;
            write_manifest(&out, &m)?;
            println!("wrote {} feature rows", matrix.n_rows());
        }
        Command::Train {
            features,
            split,
            grid,
            out,
        } => {
            let cfg = optional_config(grid.as_deref())?;
            let spec = split_spec(&split, &features)?;
            let (artifact, m) = pipeline::train(&features, &spec, &cfg.train, &out, &roots_for(&out))?;
            write_manifest(&out, &m)?;
            println!("trained {} trees", artifact.gbm.trees.len());
        }
        Command::TuneThreshold { model, features } => {
            let roots = roots_for(&model);
            let (artifact, m) = pipeline::tune_threshold(&model, &features, &roots)?;
            write_manifest(&sibling(&model, "threshold"), &m)?;
            println!("threshold {}", artifact.threshold);
        }
        Command::Evaluate {
            model,
            features,
            out,
            plots,
            importance,
        } => {
            let kind = match importance {
                Importance::Total => ImportanceKind::TotalGain,
                Importance::Average => ImportanceKind::AverageGain,
            };
            let (bundle, m) = pipeline::evaluate(&model, &features, &out, plots.as_deref(), kind, &roots_for(&out))?;
            write_manifest(&out, &m)?;
            for r in &bundle.reports {
                println!(
                    "{}: auc {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                    r.model, r.auc, r.precision, r.recall, r.f1
                );
            }
        }
        Command::Stratify {
            events,
            features,
            market,
            horizons,
            regime,
            horizon,
            car_threshold,
            estimation_window,
            min_obs,
            edges,
            out,
        } => {
            let cfg = label_config(horizon, car_threshold, estimation_window, min_obs, false)?;
            let spec = match edges {
                Some(e) => BucketSpec::new(e).map_err(|e| Error::Config(e.to_string()))?,
                None => BucketSpec::default(),
            };
            let store = load_market(&market)?;
            let (sweep, m) = pipeline::stratify(
                &events,
                &features,
                &store,
                &market,
                &cfg,
                &horizons,
                regime.as_deref(),
                &spec,
                &out,
                &roots_for(&out),
            )?;
            write_manifest(&out, &m)?;
            for t in &sweep.tables {
                println!("horizon {}: {} events", t.horizon, t.n_events);
            }
        }
        Command::Synth { config, out } => {
            let cfg = match config {
                Some(p) => SynthConfig::load(&p)?,
                None => SynthConfig::default(),
            };
            let data = synth::generate(&cfg)?;
            synth::write_dataset(&data, &out)?;
            let pipeline_cfg = pipeline::synth_pipeline_config(&cfg);
            let path = out.join("pipeline.toml");
            std::fs::write(&path, pipeline_cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
            println!("wrote {} events to {}", data.truth.len(), out.display());
        }
        Command::RunAll { config } => {
            let cfg = PipelineConfig::load(&config)?;
            let summary = pipeline::run_all(&cfg)?;
            for r in &summary.evaluation.reports {
                println!(
                    "{}: auc {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                    r.model, r.auc, r.precision, r.recall, r.f1
                );
            }
            println!(
                "report: {}",
                summary.out_dir.join(pipeline::artifacts::REPORT).display()
            );
        }
        Command::Report { dir, out } => {
            let text = pipeline::render_report(&dir)?;
            let path = out.unwrap_or_else(|| dir.join(pipeline::artifacts::REPORT));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage problems are configuration errors
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let filter = EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(3);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // context variants already embed their source in the message
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
