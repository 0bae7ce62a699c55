//! Synthetic realized covariance series.
//!
//! The latent log-covariance follows a matrix AR(1) around `logm(Σ̄)`; each
//! observation is a Wishart draw centred on `expm` of the latent state.
//! `Σ̄` has daily volatilities evenly spaced in `[0.8, 2.0]` (percent) and
//! equicorrelation 0.4.

use chrono::{Datelike, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::{CovSeries, ReturnsTable};
use crate::error::{Error, Result};
use crate::spd::{expm, logm, symmetrize, SpdMatrix};

const BURN_IN: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateConfig {
    pub n: usize,
    pub len: usize,
    /// AR(1) coefficient of the latent log-covariance, in `[0, 1)`.
    pub persistence: f64,
    /// Wishart degrees of freedom, `> n − 1`.
    pub df: f64,
    /// Standard deviation of the symmetric log-domain innovations.
    pub innovation_scale: f64,
    pub seed: u64,
    pub start: NaiveDate,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n: 5,
            len: 800,
            persistence: 0.95,
            df: 20.0,
            innovation_scale: 0.2,
            seed: 0,
            start: NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(),
        }
    }
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.persistence) {
            return Err(Error::InvalidParameter(format!(
                "persistence {} outside [0, 1)",
                self.persistence
            )));
        }
        if !(self.df > self.n as f64 - 1.0) || !self.df.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "degrees of freedom {} must exceed n − 1 = {}",
                self.df,
                self.n - 1
            )));
        }
        if !(self.innovation_scale >= 0.0) || !self.innovation_scale.is_finite() {
            return Err(Error::InvalidParameter("innovation scale must be nonnegative".into()));
        }
        Ok(())
    }
}

fn base_matrix(n: usize) -> DMatrix<f64> {
    let vols: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { 0.8 + 1.2 * i as f64 / (n - 1) as f64 })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let rho = if i == j { 1.0 } else { 0.4 };
        rho * vols[i] * vols[j]
    })
}

/// Weekdays starting at `start` (rolled forward off a weekend).
pub(crate) fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

fn wishart(sigma: &DMatrix<f64>, df: f64, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let l = sigma
        .clone()
        .cholesky()
        .ok_or(Error::Decomposition("cholesky of the Wishart scale"))?
        .l();
    // Bartlett: A lower triangular, A_ii² ~ χ²(df − i), A_ij ~ N(0, 1) below the diagonal.
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(df - i as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    Ok(symmetrize(&(&la * la.transpose())) / df)
}

/// Seeded synthetic series; every element passes `SpdMatrix` validation.
pub fn simulate_series(cfg: &SimulateConfig) -> Result<CovSeries> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base_log = logm(&SpdMatrix::new(base_matrix(n))?)?;
    let mut state = base_log.clone();
    let phi = cfg.persistence;
    let mut mats = Vec::with_capacity(cfg.len);
    for step in 0..BURN_IN + cfg.len {
        let g = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
        let shock = (&g + g.transpose()) * (0.5 * cfg.innovation_scale);
        state = &base_log * (1.0 - phi) + &state * phi + shock;
        if step < BURN_IN {
            continue;
        }
        let sigma = expm(&state)?;
        let rc = wishart(sigma.matrix(), cfg.df, &mut rng)?;
        mats.push(SpdMatrix::new_strict(rc)?);
    }
    CovSeries::new(business_days(cfg.start, cfg.len), mats)
}

/// Daily returns `r_t = L_t z_t / 100` with `L_t L_tᵀ = RC_t` (RC in percent²).
pub fn simulate_daily_returns(series: &CovSeries, seed: u64) -> Result<ReturnsTable> {
    let n = series.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = DMatrix::zeros(series.len(), n);
    for (t, m) in series.matrices().iter().enumerate() {
        let l = m
            .matrix()
            .clone()
            .cholesky()
            .ok_or(Error::Decomposition("cholesky of a realized covariance"))?
            .l();
        let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        values.row_mut(t).copy_from(&(l * z / 100.0).transpose());
    }
    let tickers = (1..=n).map(|i| format!("X{i:02}")).collect();
    ReturnsTable::new(series.dates().to_vec(), tickers, values)
}
