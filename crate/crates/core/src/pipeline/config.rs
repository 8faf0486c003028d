use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventstudy::LabelConfig;
use crate::filings::FilterConfig;
use crate::learn::{GbmConfig, SplitSpec};
use crate::strata::BucketSpec;

/// Environment variables `INSIDER__<SECTION>__<KEY>` override config keys.
pub const ENV_PREFIX: &str = "INSIDER__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub filings: PathBuf,
    pub cusip_map: PathBuf,
    pub bars: PathBuf,
    pub factors: PathBuf,
    /// Factor file holds percentages rather than fractions.
    pub factors_percent: bool,
    pub sectors: PathBuf,
    pub regime: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            filings: "filings".into(),
            cusip_map: "cusip_map.csv".into(),
            bars: "bars.csv".into(),
            factors: "factors.csv".into(),
            factors_percent: false,
            sectors: "sectors.csv".into(),
            regime: None,
            out: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub grid: Vec<GbmConfig>,
    pub folds: usize,
    pub logistic_l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cfg = |n_trees, max_depth| GbmConfig {
            n_trees,
            max_depth,
            learning_rate: 0.05,
            ..GbmConfig::default()
        };
        Self {
            grid: vec![cfg(100, 3), cfg(200, 3), cfg(100, 4), cfg(200, 4)],
            folds: 3,
            logistic_l2: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StratifyConfig {
    pub horizons: Vec<usize>,
    /// Upper bucket edges; the last bucket is open.
    pub edges: Vec<f64>,
}

impl Default for StratifyConfig {
    fn default() -> Self {
        Self {
            horizons: vec![20, 30, 60],
            edges: BucketSpec::default().edges().to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Abort on the first data gap instead of skipping the record.
    pub strict: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub run: RunConfig,
    pub filter: FilterConfig,
    pub label: LabelConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub stratify: StratifyConfig,
    /// Directory relative paths resolve against. Not read from the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `INSIDER__A__B=value` pairs to the table at path `a.b`. Values are
/// read as TOML literals, falling back to plain strings.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<Vec<String>> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    let mut applied = Vec::new();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
        if path.iter().any(String::is_empty) {
            return Err(Error::Config(format!("malformed override variable `{key}`")));
        }
        let (leaf, sections) = path.split_last().expect("non-empty path");
        let mut node = &mut *table;
        for s in sections {
            let entry = node
                .entry(s.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override `{key}`: `{s}` is not a section")))?;
        }
        node.insert(leaf.clone(), parse_env_value(&raw));
        applied.push(path.join("."));
    }
    Ok(applied)
}

impl PipelineConfig {
    /// Parses config text, applies overrides from `vars`, and validates values
    /// (not paths).
    pub fn from_toml_str(
        text: &str,
        base_dir: &Path,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let applied = apply_env_overrides(&mut table, vars)?;
        for key in &applied {
            tracing::info!(key = %key, "config override from environment");
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate_values()?;
        Ok(cfg)
    }

    /// Reads a config file; overrides come from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.paths.out)
    }

    pub fn regime_path(&self) -> Option<PathBuf> {
        self.paths.regime.as_deref().map(|p| self.resolve(p))
    }

    pub fn bucket_spec(&self) -> Result<BucketSpec> {
        BucketSpec::new(self.stratify.edges.clone()).map_err(|e| Error::Config(e.to_string()))
    }

    /// Horizons for the sweep, always including the labelling horizon.
    pub fn sweep_horizons(&self) -> Vec<usize> {
        let mut h = self.stratify.horizons.clone();
        if !h.contains(&self.label.horizon) {
            h.push(self.label.horizon);
        }
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn validate_values(&self) -> Result<()> {
        self.filter.validate()?;
        self.label.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.split.validate()?;
        if self.train.grid.is_empty() {
            return Err(Error::Config("train.grid is empty".into()));
        }
        for g in &self.train.grid {
            g.validate()?;
        }
        if self.train.folds < 2 {
            return Err(Error::Config(format!(
                "train.folds must be at least 2, got {}",
                self.train.folds
            )));
        }
        if !(self.train.logistic_l2 >= 0.0) {
            return Err(Error::Config("train.logistic_l2 must be non-negative".into()));
        }
        if self.stratify.horizons.contains(&0) {
            return Err(Error::Config("stratify.horizons must be positive".into()));
        }
        self.bucket_spec()?;
        Ok(())
    }

    /// Every input must exist and the output directory must be creatable.
    pub fn validate_paths(&self) -> Result<()> {
        let mut inputs = vec![
            ("filings", &self.paths.filings, true),
            ("cusip_map", &self.paths.cusip_map, false),
            ("bars", &self.paths.bars, false),
            ("factors", &self.paths.factors, false),
            ("sectors", &self.paths.sectors, false),
        ];
        if let Some(r) = &self.paths.regime {
            inputs.push(("regime", r, false));
        }
        for (name, p, dir) in inputs {
            let full = self.resolve(p);
            let ok = if dir { full.is_dir() } else { full.is_file() };
            if !ok {
                return Err(Error::Config(format!("input `{name}` not found at {}", full.display())));
            }
        }
        let out = self.out_dir();
        std::fs::create_dir_all(&out)
            .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", out.display())))?;
        Ok(())
    }
}
