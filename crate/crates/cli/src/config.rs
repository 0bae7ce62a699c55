//! Run configuration (TOML).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use spdcast::dataset::{IntradayConfig, SimulateConfig};
use spdcast::eval::LossMetric;
use spdcast::frechet::FrechetMetric;
use spdcast::optim::{LossKind, TrainConfig};
use spdcast::respdnet::NetworkSpec;
use spdcast::rolling::{ModelKind, ModelSpec, RollingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub portfolio: PortfolioSection,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Realized covariance series (`.csv` = CSVLong, otherwise MatBin).
    pub path: Option<PathBuf>,
    /// Daily returns CSV (`date,<ticker>...`) for the portfolio backtest.
    pub returns: Option<PathBuf>,
    /// Long-form intraday prices for `ingest`.
    pub intraday: Option<PathBuf>,
    #[serde(default)]
    pub intraday_grid_minutes: Option<u32>,
    pub simulate: Option<SimulateSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub len: usize,
    #[serde(default = "default_persistence")]
    pub persistence: f64,
    #[serde(default = "default_df")]
    pub df: f64,
    #[serde(default = "default_innovation")]
    pub innovation_scale: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

fn default_persistence() -> f64 {
    SimulateConfig::default().persistence
}

fn default_df() -> f64 {
    SimulateConfig::default().df
}

fn default_innovation() -> f64 {
    SimulateConfig::default().innovation_scale
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Respdnet,
    Geohar,
    Rw,
    Favar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Mse,
    LogEuclidean,
}

impl From<LossName> for LossKind {
    fn from(l: LossName) -> Self {
        match l {
            LossName::Mse => LossKind::Mse,
            LossName::LogEuclidean => LossKind::LogEuclidean,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMetric {
    LogEuclidean,
    Procrustes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub kind: ModelFamily,
    pub lags: Option<usize>,
    pub loss: Option<LossName>,
    pub metric: Option<MeanMetric>,
    pub layer_dims: Option<Vec<usize>>,
    pub n_factors: Option<usize>,
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        if self.name.is_empty() || self.name.contains(['/', '\\', ',']) {
            bail!("model name {:?} must be non-empty without '/', '\\' or ','", self.name);
        }
        let loss = self.loss.unwrap_or(LossName::LogEuclidean).into();
        let kind = match self.kind {
            ModelFamily::Rw => ModelKind::RandomWalk,
            ModelFamily::Favar => ModelKind::Favar {
                n_factors: self.n_factors,
            },
            ModelFamily::Respdnet => ModelKind::ReSpdNet {
                lags: self.lags.unwrap_or(3),
                loss,
                layer_dims: self.layer_dims.clone(),
            },
            ModelFamily::Geohar => ModelKind::GeoHar {
                metric: match self.metric.unwrap_or(MeanMetric::LogEuclidean) {
                    MeanMetric::LogEuclidean => FrechetMetric::LogEuclidean,
                    MeanMetric::Procrustes => FrechetMetric::Procrustes,
                },
                loss,
                layer_dims: self.layer_dims.clone(),
            },
        };
        Ok(ModelSpec::new(self.name.clone(), kind))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub window: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub refit_epochs: usize,
    pub refit_every: usize,
    pub eps_rectify: f64,
    pub eig_gap_floor: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RollingConfig::default();
        Self {
            window: r.window,
            learning_rate: t.learning_rate,
            lr_decay: t.lr_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            refit_epochs: r.refit_epochs,
            refit_every: r.refit_every,
            eps_rectify: NetworkSpec::DEFAULT_EPS,
            eig_gap_floor: t.eig_gap_floor,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    pub metrics: Vec<String>,
    pub alpha: f64,
    pub replicates: usize,
    /// Defaults to `⌈T^{1/3}⌉`.
    pub block_len: Option<usize>,
    pub regime_quantile: f64,
    /// Optional `date,value` CSV of market variance; defaults to the trace of RC.
    pub market_variance: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            metrics: LossMetric::ALL.iter().map(|m| m.name().to_string()).collect(),
            alpha: 0.1,
            replicates: 10_000,
            block_len: None,
            regime_quantile: 0.9,
            market_variance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioSection {
    pub enabled: bool,
}

impl Default for PortfolioSection {
    fn default() -> Self {
        Self { enabled: true }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Config = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Relative data paths resolve against the config file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        resolve(&mut cfg.data.path);
        resolve(&mut cfg.data.returns);
        resolve(&mut cfg.data.intraday);
        resolve(&mut cfg.evaluate.market_variance);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [self.data.path.is_some(), self.data.simulate.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources > 1 {
            bail!("data.path and data.simulate are mutually exclusive");
        }
        if let Some(s) = &self.data.simulate {
            self.simulate_config_from(s).validate()?;
        }
        let mut names: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("duplicate model name {:?}", w[0]);
        }
        for m in &self.models {
            m.to_spec()?;
        }
        self.rolling_config().validate()?;
        for m in &self.evaluate.metrics {
            m.parse::<LossMetric>()?;
        }
        if !(self.evaluate.alpha > 0.0 && self.evaluate.alpha < 1.0) {
            bail!("evaluate.alpha must lie in (0, 1)");
        }
        if self.evaluate.replicates < 100 {
            bail!("evaluate.replicates must be at least 100");
        }
        if !(0.0..=1.0).contains(&self.evaluate.regime_quantile) {
            bail!("evaluate.regime_quantile must lie in [0, 1]");
        }
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        Ok(())
    }

    fn simulate_config_from(&self, s: &SimulateSection) -> SimulateConfig {
        SimulateConfig {
            n: s.n,
            len: s.len,
            persistence: s.persistence,
            df: s.df,
            innovation_scale: s.innovation_scale,
            seed: s.seed.unwrap_or(self.seed),
            ..SimulateConfig::default()
        }
    }

    pub fn simulate_config(&self) -> Option<SimulateConfig> {
        self.data.simulate.as_ref().map(|s| self.simulate_config_from(s))
    }

    pub fn intraday_config(&self) -> IntradayConfig {
        let mut c = IntradayConfig::default();
        if let Some(g) = self.data.intraday_grid_minutes {
            c.grid_minutes = g;
        }
        c
    }

    pub fn rolling_config(&self) -> RollingConfig {
        let t = &self.train;
        RollingConfig {
            window: t.window,
            train: TrainConfig {
                learning_rate: t.learning_rate,
                lr_decay: t.lr_decay,
                epochs: t.epochs,
                batch_size: t.batch_size,
                seed: self.seed,
                eig_gap_floor: t.eig_gap_floor,
                ..TrainConfig::default()
            },
            refit_epochs: t.refit_epochs,
            refit_every: t.refit_every,
            eps_rectify: t.eps_rectify,
            init_seed: self.seed,
        }
    }

    pub fn metrics(&self) -> Result<Vec<LossMetric>> {
        Ok(self
            .evaluate
            .metrics
            .iter()
            .map(|m| m.parse::<LossMetric>())
            .collect::<spdcast::Result<_>>()?)
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
