//! Pipeline commands behind the `spdcast` binary.
//!
//! Every command writes into `output_dir`:
//!
//! | command          | outputs                                                                 |
//! |------------------|-------------------------------------------------------------------------|
//! | `simulate`       | `series.bin`, `returns.csv`                                             |
//! | `ingest`         | `series.bin`, `returns.csv`                                             |
//! | `train-forecast` | `forecasts/<model>.bin`, `traces/<model>.csv`, `weights/<model>.bin`, `failures.csv` |
//! | `evaluate`       | `losses_<metric>.csv`, `mcs_<metric>[_<regime>].csv`, `loss_table.csv`, `regimes.csv` |
//! | `portfolio`      | `portfolio_report.csv`, `weights/<model>_<type>.csv`                    |
//! | `report`         | `report.md`                                                             |
//!
//! plus `manifest_<command>.toml` with the config hash, seed, and timestamp.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use spdcast::dataset::{
    load_intraday_csv, load_returns_csv, load_series, save_returns_csv, save_series, save_weights,
    simulate_daily_returns, simulate_series, CovSeries, ReturnsTable, SeriesFormat,
};
use spdcast::eval::{
    default_block_len, loss_panel, mcs, regime_split, trace_variance, BootstrapConfig, LossPanel, McsResult,
    RegimeSplit,
};
use spdcast::portfolio::{gmv_path, naive_weights, portfolio_report, WeightPath};
use spdcast::rolling::{rolling_forecast, ForecastRun};

pub use config::Config;

pub const SERIES_FILE: &str = "series.bin";
pub const RETURNS_FILE: &str = "returns.csv";
pub const FORECAST_DIR: &str = "forecasts";

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    timestamp: String,
    config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    persistence: Option<f64>,
    config: &'a Config,
}

/// Hex SHA-256 of the canonical effective configuration.
pub fn config_hash(cfg: &Config) -> Result<String> {
    let digest = Sha256::digest(cfg.canonical()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn write_manifest(cfg: &Config, command: &str) -> Result<PathBuf> {
    let m = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        timestamp: chrono::Utc::now().to_rfc3339(),
        config_hash: config_hash(cfg)?,
        persistence: cfg.simulate_config().map(|s| s.persistence),
        config: cfg,
    };
    let path = cfg.output_dir.join(format!("manifest_{command}.toml"));
    fs::write(&path, toml::to_string(&m)?)?;
    Ok(path)
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Realized series from `data.path`, `data.simulate`, or a previously ingested `series.bin`.
pub fn load_realized(cfg: &Config) -> Result<CovSeries> {
    if let Some(p) = &cfg.data.path {
        return load_series(p, SeriesFormat::from_path(p)).with_context(|| format!("loading {}", p.display()));
    }
    if let Some(sim) = cfg.simulate_config() {
        return Ok(simulate_series(&sim)?);
    }
    let p = cfg.output_dir.join(SERIES_FILE);
    if p.exists() {
        return Ok(load_series(&p, SeriesFormat::MatBin)?);
    }
    bail!("no data source: set data.path or data.simulate, or run ingest first")
}

/// Daily returns from `data.returns`, the simulator, or a previously written `returns.csv`.
pub fn load_daily_returns(cfg: &Config, series: &CovSeries) -> Result<ReturnsTable> {
    if let Some(p) = &cfg.data.returns {
        return load_returns_csv(p).with_context(|| format!("loading {}", p.display()));
    }
    if let Some(sim) = cfg.simulate_config() {
        return Ok(simulate_daily_returns(series, sim.seed.wrapping_add(1))?);
    }
    let p = cfg.output_dir.join(RETURNS_FILE);
    if p.exists() {
        return Ok(load_returns_csv(&p)?);
    }
    bail!("no daily returns: set data.returns or data.simulate, or run ingest first")
}

/// Writes the simulated series and its daily returns.
pub fn cmd_simulate(cfg: &Config) -> Result<PathBuf> {
    let sim = cfg.simulate_config().context("simulate requires a [data.simulate] section")?;
    ensure_dir(&cfg.output_dir)?;
    let series = simulate_series(&sim)?;
    let path = cfg.output_dir.join(SERIES_FILE);
    save_series(&path, &series, SeriesFormat::MatBin)?;
    save_returns_csv(&cfg.output_dir.join(RETURNS_FILE), &simulate_daily_returns(&series, sim.seed.wrapping_add(1))?)?;
    write_manifest(cfg, "simulate")?;
    log::info!("simulated {} matrices of size {}", series.len(), series.dim());
    Ok(path)
}

/// Builds realized covariances and open-to-close returns from intraday prices.
pub fn cmd_ingest(cfg: &Config) -> Result<PathBuf> {
    let src = cfg.data.intraday.as_ref().context("ingest requires data.intraday")?;
    ensure_dir(&cfg.output_dir)?;
    let data = load_intraday_csv(src, &cfg.intraday_config()).with_context(|| format!("loading {}", src.display()))?;
    if !data.skipped.is_empty() {
        log::warn!("skipped {} incomplete dates", data.skipped.len());
    }
    let series = data.panel.realized_series()?;
    let path = cfg.output_dir.join(SERIES_FILE);
    save_series(&path, &series, SeriesFormat::MatBin)?;
    save_returns_csv(&cfg.output_dir.join(RETURNS_FILE), &data.daily_returns)?;
    write_manifest(cfg, "ingest")?;
    Ok(path)
}

/// Rolling forecasts for every configured model.
pub fn cmd_train_forecast(cfg: &Config) -> Result<Vec<PathBuf>> {
    if cfg.models.is_empty() {
        bail!("no [[models]] configured");
    }
    let series = load_realized(cfg)?;
    let rolling = cfg.rolling_config();
    let fdir = cfg.output_dir.join(FORECAST_DIR);
    let tdir = cfg.output_dir.join("traces");
    let wdir = cfg.output_dir.join("weights");
    for d in [&fdir, &tdir, &wdir] {
        ensure_dir(d)?;
    }
    let mut failures = String::from("model,date,message\n");
    let mut files = Vec::new();
    for m in &cfg.models {
        let spec = m.to_spec()?;
        log::info!("forecasting {}", spec.name);
        let run = rolling_forecast(&series, &spec, &rolling).with_context(|| format!("model {}", spec.name))?;
        for f in &run.failures {
            failures.push_str(&format!("{},{},{:?}\n", run.model, f.date, f.message));
        }
        let path = fdir.join(format!("{}.bin", run.model));
        save_series(&path, &run.as_series()?, SeriesFormat::MatBin)?;
        files.push(path);
        if !run.training.is_empty() {
            let mut trace = String::from("window,epoch,mean_loss,grad_norm,min_eig_gap\n");
            for (w, report) in run.training.iter().enumerate() {
                for line in report.to_csv().lines().skip(1) {
                    trace.push_str(&format!("{w},{line}\n"));
                }
            }
            write(&tdir.join(format!("{}.csv", run.model)), &trace)?;
        }
        if let Some(net) = &run.network {
            save_weights(&wdir.join(format!("{}.bin", run.model)), net)?;
        }
    }
    write(&cfg.output_dir.join("failures.csv"), &failures)?;
    write_manifest(cfg, "train-forecast")?;
    Ok(files)
}

/// All forecast files in the output directory, sorted by model name.
pub fn load_forecasts(cfg: &Config) -> Result<Vec<ForecastRun>> {
    let dir = cfg.output_dir.join(FORECAST_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}; run train-forecast first", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no forecasts in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let s = load_series(p, SeriesFormat::MatBin).with_context(|| format!("loading {}", p.display()))?;
            Ok(ForecastRun::from_series(name, &s))
        })
        .collect()
}

fn load_market_variance(cfg: &Config, realized: &CovSeries, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    let Some(p) = &cfg.evaluate.market_variance else {
        return Ok(trace_variance(realized, dates)?);
    };
    let table = load_returns_csv(p).with_context(|| format!("loading {}", p.display()))?;
    if table.tickers.len() != 1 {
        bail!("market variance file must have exactly one value column");
    }
    Ok(table.select(dates)?.column(0).iter().copied().collect())
}

fn run_mcs(panel: &LossPanel, cfg: &Config) -> Result<Option<McsResult>> {
    let t = panel.dates.len();
    let block = cfg.evaluate.block_len.unwrap_or_else(|| default_block_len(t));
    if panel.models.len() < 2 || t <= block || t < 2 {
        return Ok(None);
    }
    let boot = BootstrapConfig {
        replicates: cfg.evaluate.replicates,
        block_len: block,
        seed: cfg.seed,
    };
    Ok(Some(mcs(panel, cfg.evaluate.alpha, &boot)?))
}

/// Loss panels, MCS results for all dates and for each volatility regime.
pub fn cmd_evaluate(cfg: &Config) -> Result<PathBuf> {
    let realized = load_realized(cfg)?;
    let runs = load_forecasts(cfg)?;
    let dates = runs[0].dates.clone();
    let mv = load_market_variance(cfg, &realized, &dates)?;
    let regimes: RegimeSplit = regime_split(&mv, &dates, cfg.evaluate.regime_quantile)?;
    write(&cfg.output_dir.join("regimes.csv"), &regimes.to_csv())?;

    let mut table = String::from("metric,regime,model,mean_loss,mcs_p_value,in_ssm\n");
    for metric in cfg.metrics()? {
        let panel = loss_panel(&runs, &realized, metric)?;
        write(&cfg.output_dir.join(format!("losses_{}.csv", metric.name())), &panel.to_csv())?;
        let subsets = [
            ("all", panel.clone()),
            ("calm", panel.select_dates(&regimes.calm)),
            ("turbulent", panel.select_dates(&regimes.turbulent)),
        ];
        for (regime, sub) in subsets {
            if sub.dates.is_empty() {
                continue;
            }
            let result = run_mcs(&sub, cfg)?;
            if let Some(r) = &result {
                let suffix = if regime == "all" { String::new() } else { format!("_{regime}") };
                write(&cfg.output_dir.join(format!("mcs_{}{suffix}.csv", metric.name())), &r.to_csv())?;
            }
            for (k, mean) in sub.mean_losses().iter().enumerate() {
                let model = &sub.models[k];
                let (p, ssm) = match &result {
                    Some(r) => (r.p_values[k].to_string(), r.contains(model).to_string()),
                    None => (String::new(), String::new()),
                };
                table.push_str(&format!("{},{regime},{model},{mean},{p},{ssm}\n", metric.name()));
            }
        }
    }
    let path = cfg.output_dir.join("loss_table.csv");
    write(&path, &table)?;
    write_manifest(cfg, "evaluate")?;
    Ok(path)
}

/// GMV (unconstrained and long-only) backtests of every forecast plus the naive portfolio.
pub fn cmd_portfolio(cfg: &Config) -> Result<PathBuf> {
    let path = cfg.output_dir.join("portfolio_report.csv");
    if !cfg.portfolio.enabled {
        log::info!("portfolio backtest disabled");
        return Ok(path);
    }
    let realized = load_realized(cfg)?;
    let returns = load_daily_returns(cfg, &realized)?;
    let runs = load_forecasts(cfg)?;
    let wdir = cfg.output_dir.join("weights");
    ensure_dir(&wdir)?;
    let dates = runs[0].dates.clone();
    let r = returns.select(&dates)?;
    let mut report = String::from("model,portfolio_type,sigma_p,tau_p\n");
    for run in &runs {
        if run.dates != dates {
            bail!("forecast {} is not aligned with {}", run.model, runs[0].model);
        }
        for (kind, long_only) in [("gmv", false), ("gmv_long_only", true)] {
            let w = gmv_path(&run.dates, &run.forecasts, long_only)?;
            write(&wdir.join(format!("{}_{kind}.csv", run.model)), &w.to_csv())?;
            let rep = portfolio_report(&w, &r)?;
            report.push_str(&format!("{},{kind},{},{}\n", run.model, rep.annualized_std, rep.avg_turnover));
        }
    }
    let naive = WeightPath::constant(dates, &naive_weights(r.ncols()))?;
    let rep = portfolio_report(&naive, &r)?;
    report.push_str(&format!("naive,naive,{},{}\n", rep.annualized_std, rep.avg_turnover));
    write(&path, &report)?;
    write_manifest(cfg, "portfolio")?;
    Ok(path)
}

fn csv_to_markdown(text: &str) -> String {
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return String::new();
    };
    let cols = header.split(',').count();
    let mut out = format!("| {} |\n|{}\n", header.replace(',', " | "), "---|".repeat(cols));
    for l in lines {
        out.push_str(&format!("| {} |\n", l.replace(',', " | ")));
    }
    out
}

/// Collects the evaluation and portfolio tables into `report.md`.
pub fn cmd_report(cfg: &Config) -> Result<PathBuf> {
    let mut md = String::from("# Forecast evaluation\n\n");
    md.push_str(&format!("Config hash: `{}`, seed {}.\n\n", config_hash(cfg)?, cfg.seed));
    let sections = [
        ("loss_table.csv", "Mean losses and MCS membership"),
        ("portfolio_report.csv", "Portfolio performance"),
        ("failures.csv", "Window failures"),
    ];
    let mut found = false;
    for (file, title) in sections {
        let p = cfg.output_dir.join(file);
        if let Ok(text) = fs::read_to_string(&p) {
            found = true;
            md.push_str(&format!("## {title}\n\n{}\n", csv_to_markdown(&text)));
        }
    }
    if !found {
        bail!("nothing to report in {}; run evaluate or portfolio first", cfg.output_dir.display());
    }
    let path = cfg.output_dir.join("report.md");
    write(&path, &md)?;
    write_manifest(cfg, "report")?;
    Ok(path)
}

/// Sizes the global rayon pool; later calls are ignored.
pub fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("worker pool already initialised");
        }
    }
}
