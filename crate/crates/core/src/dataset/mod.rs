//! Realized covariance series and the supervised inputs built from them.

mod io;
mod simulate;

pub use io::{
    load_intraday_csv, load_returns_csv, load_series, load_weights, read_matbin_raw, save_returns_csv,
    save_series, save_weights, write_matbin_raw, IntradayConfig, IntradayData, ReturnsTable,
    SeriesFormat,
};
pub use simulate::{simulate_daily_returns, simulate_series, SimulateConfig};

use std::ops::Range;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::frechet::{frechet_mean, FrechetConfig, FrechetMetric};
use crate::spd::SpdMatrix;

/// Intraday return vectors grouped by trading date.
#[derive(Clone, Debug)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    pub days: Vec<(NaiveDate, Vec<DVector<f64>>)>,
}

impl ReturnPanel {
    pub fn new(tickers: Vec<String>, days: Vec<(NaiveDate, Vec<DVector<f64>>)>) -> Result<Self> {
        let n = tickers.len();
        for (date, returns) in &days {
            if returns.is_empty() {
                return Err(Error::InvalidParameter(format!("no intraday returns on {date}")));
            }
            if let Some(r) = returns.iter().find(|r| r.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: r.len(),
                });
            }
        }
        Ok(Self { tickers, days })
    }

    /// One realized covariance matrix per date.
    pub fn realized_series(&self) -> Result<CovSeries> {
        let dates = self.days.iter().map(|(d, _)| *d).collect();
        let matrices = self
            .days
            .iter()
            .map(|(_, r)| realized_cov(r))
            .collect::<Result<Vec<_>>>()?;
        CovSeries::new(dates, matrices)
    }
}

/// Time-ordered sequence of covariance matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct CovSeries {
    dates: Vec<NaiveDate>,
    matrices: Vec<SpdMatrix>,
}

impl CovSeries {
    pub fn new(dates: Vec<NaiveDate>, matrices: Vec<SpdMatrix>) -> Result<Self> {
        if dates.len() != matrices.len() {
            return Err(Error::Misaligned(format!(
                "{} dates for {} matrices",
                dates.len(),
                matrices.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Misaligned(format!(
                "dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some(first) = matrices.first() {
            let n = first.dim();
            if let Some(m) = matrices.iter().find(|m| m.dim() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: m.dim(),
                });
            }
        }
        Ok(Self { dates, matrices })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Matrix dimension (0 for an empty series).
    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, SpdMatrix::dim)
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn matrices(&self) -> &[SpdMatrix] {
        &self.matrices
    }

    pub fn get(&self, t: usize) -> Option<(NaiveDate, &SpdMatrix)> {
        Some((*self.dates.get(t)?, self.matrices.get(t)?))
    }

    pub fn slice(&self, range: Range<usize>) -> CovSeries {
        Self {
            dates: self.dates[range.clone()].to_vec(),
            matrices: self.matrices[range].to_vec(),
        }
    }

    /// Position of `date`, if present.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }
}

/// Sum of outer products of the intraday return vectors of one day.
pub fn realized_cov(returns: &[DVector<f64>]) -> Result<SpdMatrix> {
    let first = returns.first().ok_or(Error::EmptySample)?;
    let n = first.len();
    let mut acc = DMatrix::zeros(n, n);
    for r in returns {
        if r.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: r.len(),
            });
        }
        acc.ger(1.0, r, r, 1.0);
    }
    SpdMatrix::new(acc)
}

/// Log-returns `ln(P_τ / P_{τ−1})` along a price path of vectors.
pub fn log_returns(prices: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData {
            required: 1,
            actual: prices.len(),
        });
    }
    let n = prices[0].len();
    for p in prices {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.len(),
            });
        }
        if let Some(bad) = p.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::InvalidParameter(format!("nonpositive price {bad}")));
        }
    }
    Ok(prices
        .windows(2)
        .map(|w| w[1].zip_map(&w[0], |a, b| (a / b).ln()))
        .collect())
}

/// Block-diagonal matrix with the given blocks in order (top-left first).
pub fn block_diag(blocks: &[&SpdMatrix]) -> SpdMatrix {
    let total: usize = blocks.iter().map(|b| b.dim()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut offset = 0;
    for b in blocks {
        let d = b.dim();
        out.view_mut((offset, offset), (d, d)).copy_from(b.matrix());
        offset += d;
    }
    SpdMatrix::from_sym_unchecked(out)
}

/// Windows for the HAR-style Fréchet-mean blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoHarConfig {
    pub weekly: usize,
    pub monthly: usize,
    pub frechet: FrechetConfig,
}

impl Default for GeoHarConfig {
    fn default() -> Self {
        Self {
            weekly: 5,
            monthly: 22,
            frechet: FrechetConfig::default(),
        }
    }
}

impl GeoHarConfig {
    pub fn with_metric(metric: FrechetMetric) -> Self {
        Self {
            frechet: FrechetConfig::with_metric(metric),
            ..Self::default()
        }
    }
}

/// How network inputs are assembled from past observations.
#[derive(Clone, Debug, PartialEq)]
pub enum InputMode {
    /// `blockdiag(Y_{t−1}, …, Y_{t−k})`.
    Lags(usize),
    /// `blockdiag(RC_{t−1}, weekly mean, monthly mean)`.
    GeoHar(GeoHarConfig),
}

impl InputMode {
    /// Number of past observations needed before the first target.
    pub fn history(&self) -> usize {
        match self {
            InputMode::Lags(k) => *k,
            InputMode::GeoHar(cfg) => cfg.monthly.max(cfg.weekly).max(1),
        }
    }

    /// Input dimension for `n×n` observations.
    pub fn input_dim(&self, n: usize) -> usize {
        match self {
            InputMode::Lags(k) => k * n,
            InputMode::GeoHar(_) => 3 * n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InputMode::Lags(0) => Err(Error::InvalidParameter("lag count must be positive".into())),
            InputMode::GeoHar(cfg) if cfg.weekly == 0 || cfg.monthly == 0 => {
                Err(Error::InvalidParameter("GeoHAR windows must be positive".into()))
            }
            InputMode::GeoHar(cfg) => cfg.frechet.validate(),
            InputMode::Lags(_) => Ok(()),
        }
    }

    /// Network input for target index `t`, reading only indices `< t`.
    pub fn input_at(&self, series: &CovSeries, t: usize) -> Result<SpdMatrix> {
        let need = self.history();
        if t < need || t > series.len() {
            return Err(Error::InsufficientData {
                required: need,
                actual: t,
            });
        }
        let past = &series.matrices()[..t];
        match self {
            InputMode::Lags(k) => {
                let blocks: Vec<&SpdMatrix> = (1..=*k).map(|i| &past[t - i]).collect();
                Ok(block_diag(&blocks))
            }
            InputMode::GeoHar(cfg) => {
                let weekly = frechet_mean(&past[t - cfg.weekly..], &cfg.frechet)?;
                let monthly = frechet_mean(&past[t - cfg.monthly..], &cfg.frechet)?;
                Ok(block_diag(&[&past[t - 1], &weekly, &monthly]))
            }
        }
    }
}

/// One supervised example: input built from strictly earlier observations.
#[derive(Clone, Debug)]
pub struct SupervisedPair {
    pub input: SpdMatrix,
    pub target: SpdMatrix,
    pub date: NaiveDate,
    /// Index of the target in the source series.
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct SupervisedSet {
    pub pairs: Vec<SupervisedPair>,
    pub mode: InputMode,
}

impl SupervisedSet {
    /// Pairs for every target index with enough history.
    pub fn build(series: &CovSeries, mode: InputMode) -> Result<Self> {
        mode.validate()?;
        let need = mode.history();
        if series.len() <= need {
            return Err(Error::InsufficientData {
                required: need,
                actual: series.len(),
            });
        }
        let pairs = (need..series.len())
            .map(|t| {
                Ok(SupervisedPair {
                    input: mode.input_at(series, t)?,
                    target: series.matrices()[t].clone(),
                    date: series.dates()[t],
                    index: t,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, mode })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `D_t = blockdiag(RC_{t−1}, …, RC_{t−k})` for every `t > k`.
pub fn build_lagged_inputs(series: &CovSeries, k: usize) -> Result<SupervisedSet> {
    SupervisedSet::build(series, InputMode::Lags(k))
}

/// `D_t = blockdiag(RC_{t−1}, RC̄ʷ, RC̄ᵐ)` with Fréchet means over the last 5 and 22 days.
pub fn build_geohar_inputs(series: &CovSeries, metric: FrechetMetric, cfg: &FrechetConfig) -> Result<SupervisedSet> {
    let cfg = GeoHarConfig {
        frechet: FrechetConfig {
            metric,
            ..cfg.clone()
        },
        ..GeoHarConfig::default()
    };
    SupervisedSet::build(series, InputMode::GeoHar(cfg))
}

/// A one-step-ahead task: fit on `train`, forecast index `test`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RollingTask {
    pub train: Range<usize>,
    pub test: usize,
}

/// `len − window` rolling tasks; task `i` trains on `[i, i + window)` and tests at `i + window`.
pub fn rolling_windows(len: usize, window: usize) -> Result<Vec<RollingTask>> {
    if window == 0 || window >= len {
        return Err(Error::InsufficientData {
            required: window,
            actual: len,
        });
    }
    Ok((window..len)
        .map(|test| RollingTask {
            train: test - window..test,
            test,
        })
        .collect())
}
