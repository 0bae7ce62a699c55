//! One-step-ahead rolling-window forecasts for every model family.
//!
//! Task `i` fits on `series[i .. i + window]` and forecasts index `i + window`.
//! Networks are warm-started across windows: the first window trains for
//! `train.epochs`, later refits run `refit_epochs` from the previous weights.
//! A window that fails falls back to the random-walk forecast and is recorded.

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::baselines::{default_factor_count, favar_fit, favar_forecast, forecast_rw};
use crate::dataset::{rolling_windows, CovSeries, GeoHarConfig, InputMode, RollingTask};
use crate::error::{Error, Result};
use crate::frechet::FrechetMetric;
use crate::optim::{train, LossKind, TrainConfig, TrainReport};
use crate::respdnet::{predict, Network, NetworkSpec};
use crate::spd::SpdMatrix;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    RandomWalk,
    Favar {
        /// `None` selects `min(50, p, window − 2)`.
        n_factors: Option<usize>,
    },
    ReSpdNet {
        lags: usize,
        loss: LossKind,
        /// `None` selects `[min(input, 100), n, n]`.
        layer_dims: Option<Vec<usize>>,
    },
    GeoHar {
        metric: FrechetMetric,
        loss: LossKind,
        layer_dims: Option<Vec<usize>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, kind: ModelKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RollingConfig {
    pub window: usize,
    pub train: TrainConfig,
    /// Epochs for refits after the first window.
    pub refit_epochs: usize,
    /// Refit every this many windows (1 = every window).
    pub refit_every: usize,
    pub eps_rectify: f64,
    /// Seed for weight initialization; refits derive their shuffle seeds from `train.seed`.
    pub init_seed: u64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            window: 500,
            train: TrainConfig::default(),
            refit_epochs: 1,
            refit_every: 1,
            eps_rectify: NetworkSpec::DEFAULT_EPS,
            init_seed: 0,
        }
    }
}

impl RollingConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.refit_every == 0 {
            return Err(Error::InvalidParameter("refit_every must be positive".into()));
        }
        if !(self.eps_rectify > 0.0) {
            return Err(Error::InvalidParameter("eps_rectify must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowFailure {
    pub date: NaiveDate,
    pub message: String,
}

/// Forecasts of one model aligned to the test dates of a series.
#[derive(Clone, Debug)]
pub struct ForecastRun {
    pub model: String,
    pub dates: Vec<NaiveDate>,
    pub forecasts: Vec<SpdMatrix>,
    pub failures: Vec<WindowFailure>,
    /// Training reports of the network fits, in window order (empty for baselines).
    pub training: Vec<TrainReport>,
    /// Weights after the last window (networks only).
    pub network: Option<Network>,
}

impl ForecastRun {
    pub fn as_series(&self) -> Result<CovSeries> {
        CovSeries::new(self.dates.clone(), self.forecasts.clone())
    }

    pub fn from_series(model: impl Into<String>, series: &CovSeries) -> Self {
        Self {
            model: model.into(),
            dates: series.dates().to_vec(),
            forecasts: series.matrices().to_vec(),
            failures: Vec::new(),
            training: Vec::new(),
            network: None,
        }
    }
}

fn collect(
    name: &str,
    series: &CovSeries,
    tasks: &[RollingTask],
    results: Vec<Result<SpdMatrix>>,
    training: Vec<TrainReport>,
) -> Result<ForecastRun> {
    let mut forecasts = Vec::with_capacity(tasks.len());
    let mut failures = Vec::new();
    for (task, r) in tasks.iter().zip(results) {
        let date = series.dates()[task.test];
        match r {
            Ok(f) => forecasts.push(f),
            Err(e) => {
                log::warn!("{name}: window ending {date} failed: {e}; using the random walk");
                failures.push(WindowFailure {
                    date,
                    message: e.to_string(),
                });
                forecasts.push(forecast_rw(series, task.test - 1)?);
            }
        }
    }
    Ok(ForecastRun {
        model: name.to_string(),
        dates: tasks.iter().map(|t| series.dates()[t.test]).collect(),
        forecasts,
        failures,
        training,
        network: None,
    })
}

/// Rolling one-step forecasts of `model` over every window of `series`.
pub fn rolling_forecast(series: &CovSeries, model: &ModelSpec, cfg: &RollingConfig) -> Result<ForecastRun> {
    cfg.validate()?;
    let tasks = rolling_windows(series.len(), cfg.window)?;
    match &model.kind {
        ModelKind::RandomWalk => {
            let results = tasks.iter().map(|t| forecast_rw(series, t.test - 1)).collect();
            collect(&model.name, series, &tasks, results, Vec::new())
        }
        ModelKind::Favar { n_factors } => {
            let f = n_factors.unwrap_or_else(|| default_factor_count(series.dim(), cfg.window));
            let results = tasks
                .par_iter()
                .map(|t| {
                    let m = favar_fit(series, f, t.train.clone())?;
                    favar_forecast(&m, series, t.test - 1)
                })
                .collect();
            collect(&model.name, series, &tasks, results, Vec::new())
        }
        ModelKind::ReSpdNet { lags, loss, layer_dims } => {
            let mode = InputMode::Lags(*lags);
            network_forecast(series, &model.name, mode, *loss, layer_dims.as_deref(), &tasks, cfg)
        }
        ModelKind::GeoHar {
            metric,
            loss,
            layer_dims,
        } => {
            let mode = InputMode::GeoHar(GeoHarConfig::with_metric(*metric));
            network_forecast(series, &model.name, mode, *loss, layer_dims.as_deref(), &tasks, cfg)
        }
    }
}

fn network_forecast(
    series: &CovSeries,
    name: &str,
    mode: InputMode,
    loss: LossKind,
    layer_dims: Option<&[usize]>,
    tasks: &[RollingTask],
    cfg: &RollingConfig,
) -> Result<ForecastRun> {
    mode.validate()?;
    let h = mode.history();
    if cfg.window <= h {
        return Err(Error::InsufficientData {
            required: h + 1,
            actual: cfg.window,
        });
    }
    let n = series.dim();
    let input_dim = mode.input_dim(n);
    let spec = match layer_dims {
        Some(dims) => NetworkSpec {
            input_dim,
            layer_dims: dims.to_vec(),
            eps_rectify: cfg.eps_rectify,
        },
        None => NetworkSpec {
            eps_rectify: cfg.eps_rectify,
            ..NetworkSpec::default_for(input_dim, n)
        },
    };
    if spec.output_dim() != n {
        return Err(Error::InvalidParameter(format!(
            "network output dimension {} differs from series dimension {n}",
            spec.output_dim()
        )));
    }
    let mut net = Network::init(spec, cfg.init_seed)?;

    // Inputs only read strictly earlier observations, so one pass serves every window.
    // `pairs[s - h]` has target index `s`.
    let pairs: Vec<(SpdMatrix, SpdMatrix)> = (h..series.len())
        .into_par_iter()
        .map(|s| Ok((mode.input_at(series, s)?, series.matrices()[s].clone())))
        .collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(tasks.len());
    let mut training = Vec::new();
    let mut trained_once = false;
    for (i, task) in tasks.iter().enumerate() {
        // Targets s with every input index inside the window: s ∈ [start + h, test).
        let data = &pairs[task.train.start..task.test - h];
        if !trained_once || i % cfg.refit_every == 0 {
            let tc = TrainConfig {
                epochs: if trained_once { cfg.refit_epochs } else { cfg.train.epochs },
                loss,
                seed: cfg.train.seed.wrapping_add(i as u64),
                ..cfg.train.clone()
            };
            if tc.epochs > 0 {
                let snapshot = net.clone();
                match train(&mut net, data, &tc) {
                    Ok(report) => {
                        training.push(report);
                        trained_once = true;
                    }
                    Err(e) => {
                        net = snapshot;
                        results.push(Err(e));
                        continue;
                    }
                }
            }
        }
        results.push(predict(&net, &pairs[task.test - h].0));
    }
    let mut run = collect(name, series, tasks, results, training)?;
    run.network = Some(net);
    Ok(run)
}
