//! Loss panels, the Model Confidence Set with the range statistic, regime splits.
//!
//! Bootstrap replicate `b` draws its circular-block indices from a ChaCha8
//! generator seeded with `seed` on stream `b`, so the indices do not depend on
//! thread count, model count, or column order.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::CovSeries;
use crate::error::{Error, Result};
use crate::rolling::ForecastRun;
use crate::spd::{dist_euclidean, dist_frobenius, dist_log_euclidean, dist_procrustes, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMetric {
    /// Squared Frobenius distance.
    Frobenius,
    /// ℓ₂ distance of the upper-triangular halves.
    Euclidean,
    Procrustes,
    LogEuclidean,
}

impl LossMetric {
    pub const ALL: [LossMetric; 4] = [
        LossMetric::Frobenius,
        LossMetric::Euclidean,
        LossMetric::Procrustes,
        LossMetric::LogEuclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossMetric::Frobenius => "frobenius",
            LossMetric::Euclidean => "euclidean",
            LossMetric::Procrustes => "procrustes",
            LossMetric::LogEuclidean => "log_euclidean",
        }
    }

    pub fn distance(self, forecast: &SpdMatrix, realized: &SpdMatrix) -> Result<f64> {
        match self {
            LossMetric::Frobenius => dist_frobenius(forecast, realized),
            LossMetric::Euclidean => dist_euclidean(forecast, realized),
            LossMetric::Procrustes => dist_procrustes(forecast, realized),
            LossMetric::LogEuclidean => dist_log_euclidean(forecast, realized),
        }
    }
}

impl std::str::FromStr for LossMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMetric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("le") && *m == LossMetric::LogEuclidean))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown metric {s:?}")))
    }
}

/// `T × M` per-date losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPanel {
    pub models: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub losses: DMatrix<f64>,
}

impl LossPanel {
    pub fn new(models: Vec<String>, dates: Vec<NaiveDate>, losses: DMatrix<f64>) -> Result<Self> {
        if losses.nrows() != dates.len() || losses.ncols() != models.len() {
            return Err(Error::Misaligned(format!(
                "{}×{} losses for {} dates and {} models",
                losses.nrows(),
                losses.ncols(),
                dates.len(),
                models.len()
            )));
        }
        if let Some(v) = losses.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("loss {v}")));
        }
        Ok(Self { models, dates, losses })
    }

    pub fn mean_losses(&self) -> Vec<f64> {
        (0..self.models.len()).map(|j| self.losses.column(j).mean()).collect()
    }

    /// Panel restricted to the given dates, in panel order.
    pub fn select_dates(&self, keep: &[NaiveDate]) -> LossPanel {
        let rows: Vec<usize> = (0..self.dates.len())
            .filter(|&r| keep.binary_search(&self.dates[r]).is_ok())
            .collect();
        LossPanel {
            models: self.models.clone(),
            dates: rows.iter().map(|&r| self.dates[r]).collect(),
            losses: self.losses.select_rows(&rows),
        }
    }

    /// `date,<model>...`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("date");
        for m in &self.models {
            s.push(',');
            s.push_str(m);
        }
        s.push('\n');
        for (r, d) in self.dates.iter().enumerate() {
            s.push_str(&d.format("%Y-%m-%d").to_string());
            for c in 0..self.models.len() {
                s.push_str(&format!(",{:e}", self.losses[(r, c)]));
            }
            s.push('\n');
        }
        s
    }
}

/// Per-date losses of every run against `realized`; all runs must share their dates.
pub fn loss_panel(runs: &[ForecastRun], realized: &CovSeries, metric: LossMetric) -> Result<LossPanel> {
    let first = runs.first().ok_or(Error::EmptySample)?;
    for r in runs {
        if r.dates != first.dates || r.forecasts.len() != r.dates.len() {
            return Err(Error::Misaligned(format!(
                "forecasts of {} and {} cover different dates",
                first.model, r.model
            )));
        }
    }
    let rows = first
        .dates
        .iter()
        .map(|d| {
            realized
                .index_of(*d)
                .ok_or_else(|| Error::Misaligned(format!("no realized matrix for {d}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = rows.len();
    let m = runs.len();
    let cells: Vec<Result<f64>> = (0..t * m)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / m, k % m);
            metric.distance(&runs[j].forecasts[i], &realized.matrices()[rows[i]])
        })
        .collect();
    let mut losses = DMatrix::zeros(t, m);
    for (k, c) in cells.into_iter().enumerate() {
        losses[(k / m, k % m)] = c?;
    }
    LossPanel::new(runs.iter().map(|r| r.model.clone()).collect(), first.dates.clone(), losses)
}

/// Circular block bootstrap indices of length `len`.
pub fn circular_block_indices<R: Rng>(len: usize, block_len: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let start = rng.random_range(0..len);
        for k in 0..block_len.min(len - out.len()) {
            out.push((start + k) % len);
        }
    }
    out
}

/// Generator for bootstrap replicate `b`.
pub fn replicate_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `⌈T^{1/3}⌉`.
pub fn default_block_len(len: usize) -> usize {
    let c = (len as f64).cbrt().ceil() as usize;
    // Guard against cbrt rounding just above an integer.
    if c > 1 && (c - 1).pow(3) >= len {
        c - 1
    } else {
        c.max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub block_len: usize,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::InvalidParameter(format!(
                "{} bootstrap replicates is too few (minimum 100)",
                self.replicates
            )));
        }
        if self.block_len == 0 || self.block_len >= len {
            return Err(Error::InvalidParameter(format!(
                "block length {} must be in [1, {len})",
                self.block_len
            )));
        }
        Ok(())
    }
}

/// `B × M` matrix of resampled column means.
pub fn bootstrap_means(losses: &DMatrix<f64>, cfg: &BootstrapConfig) -> DMatrix<f64> {
    let (t, m) = losses.shape();
    let rows: Vec<Vec<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let idx = circular_block_indices(t, cfg.block_len, &mut replicate_rng(cfg.seed, b));
            (0..m)
                .map(|j| idx.iter().map(|&i| losses[(i, j)]).sum::<f64>() / t as f64)
                .collect()
        })
        .collect();
    DMatrix::from_fn(cfg.replicates, m, |b, j| rows[b][j])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TStat {
    pub value: f64,
    /// The bootstrap variance of the mean difference was zero; `value` is 0.
    pub degenerate: bool,
}

fn pair_stat(means: &[f64], boot: &DMatrix<f64>, i: usize, j: usize) -> (f64, f64) {
    let d = means[i] - means[j];
    let b = boot.nrows();
    let var = (0..b)
        .map(|r| (boot[(r, i)] - boot[(r, j)] - d).powi(2))
        .sum::<f64>()
        / b as f64;
    (d, var)
}

fn is_degenerate(d: f64, var: f64, scale: f64) -> bool {
    var <= (f64::EPSILON * scale).powi(2) && d.abs() <= f64::EPSILON * scale * 16.0
}

fn loss_scale(means: &[f64]) -> f64 {
    means.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE)
}

/// `t_ij = d̄_ij / √var̂(d̄_ij)` with the variance from the block bootstrap.
pub fn t_stat_pair(panel: &LossPanel, i: usize, j: usize, cfg: &BootstrapConfig) -> Result<TStat> {
    let m = panel.models.len();
    if i >= m || j >= m {
        return Err(Error::InvalidParameter(format!("model index out of range ({i}, {j}) for {m}")));
    }
    if panel.dates.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: panel.dates.len(),
        });
    }
    cfg.validate(panel.dates.len())?;
    let boot = bootstrap_means(&panel.losses, cfg);
    let means = panel.mean_losses();
    Ok(t_from(&means, &boot, i, j))
}

fn t_from(means: &[f64], boot: &DMatrix<f64>, i: usize, j: usize) -> TStat {
    let (d, var) = pair_stat(means, boot, i, j);
    if var <= 0.0 || is_degenerate(d, var, loss_scale(means)) {
        TStat {
            value: 0.0,
            degenerate: true,
        }
    } else {
        TStat {
            value: d / var.sqrt(),
            degenerate: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McsResult {
    pub models: Vec<String>,
    /// MCS p-value per model, aligned to `models`.
    pub p_values: Vec<f64>,
    /// Surviving model names, in panel order.
    pub surviving: Vec<String>,
    /// Model names in elimination order (the last one is never eliminated).
    pub elimination_order: Vec<String>,
    pub alpha: f64,
    pub replicates: usize,
    pub block_len: usize,
}

impl McsResult {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        self.models.iter().position(|m| m == model).map(|i| self.p_values[i])
    }

    pub fn contains(&self, model: &str) -> bool {
        self.surviving.iter().any(|m| m == model)
    }

    /// `model,p_value,in_ssm,elimination_rank`; rank is empty for the last model standing.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,p_value,in_ssm,elimination_rank\n");
        for (m, p) in self.models.iter().zip(&self.p_values) {
            let rank = self
                .elimination_order
                .iter()
                .position(|e| e == m)
                .filter(|&r| r + 1 < self.models.len())
                .map(|r| (r + 1).to_string())
                .unwrap_or_default();
            s.push_str(&format!("{m},{p},{},{rank}\n", self.contains(m)));
        }
        s
    }
}

/// Model Confidence Set with the range statistic `T_R = max |t_ij|`.
///
/// Elimination runs until one model remains; each eliminated model gets the
/// running maximum of the elimination p-values, the last one gets 1, and the
/// SSM holds the models with p-value ≥ `alpha`. The eliminated model is the one
/// with the largest `max_j t_ij`; ties go to the lexicographically smallest name.
pub fn mcs(panel: &LossPanel, alpha: f64, cfg: &BootstrapConfig) -> Result<McsResult> {
    let m = panel.models.len();
    if m < 2 {
        return Err(Error::InvalidParameter("the MCS needs at least two models".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    cfg.validate(panel.dates.len())?;
    let boot = bootstrap_means(&panel.losses, cfg);
    let means = panel.mean_losses();
    let scale = loss_scale(&means);
    let b_count = boot.nrows();

    // Pairwise mean differences and bootstrap standard deviations, fixed across steps.
    let mut d = DMatrix::zeros(m, m);
    let mut sd = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let (dij, var) = pair_stat(&means, &boot, i, j);
            let s = if var <= 0.0 || is_degenerate(dij, var, scale) { 0.0 } else { var.sqrt() };
            d[(i, j)] = dij;
            d[(j, i)] = -dij;
            sd[(i, j)] = s;
            sd[(j, i)] = s;
        }
    }
    let t = DMatrix::from_fn(m, m, |i, j| if sd[(i, j)] > 0.0 { d[(i, j)] / sd[(i, j)] } else { 0.0 });

    let mut alive: Vec<usize> = (0..m).collect();
    let mut p_values = vec![1.0; m];
    let mut order = Vec::with_capacity(m);
    let mut running = 0.0f64;
    while alive.len() > 1 {
        let mut t_r = 0.0f64;
        for (a, &i) in alive.iter().enumerate() {
            for &j in &alive[a + 1..] {
                t_r = t_r.max(t[(i, j)].abs());
            }
        }
        let exceed = (0..b_count)
            .filter(|&r| {
                let mut stat = 0.0f64;
                for (a, &i) in alive.iter().enumerate() {
                    for &j in &alive[a + 1..] {
                        if sd[(i, j)] > 0.0 {
                            let centred = boot[(r, i)] - boot[(r, j)] - d[(i, j)];
                            stat = stat.max(centred.abs() / sd[(i, j)]);
                        }
                    }
                }
                stat >= t_r
            })
            .count();
        let p = exceed as f64 / b_count as f64;
        running = running.max(p);

        let worst = *alive
            .iter()
            .max_by(|&&a, &&b| {
                let ta = alive.iter().map(|&j| t[(a, j)]).fold(f64::NEG_INFINITY, f64::max);
                let tb = alive.iter().map(|&j| t[(b, j)]).fold(f64::NEG_INFINITY, f64::max);
                ta.total_cmp(&tb).then_with(|| panel.models[b].cmp(&panel.models[a]))
            })
            .expect("non-empty");
        p_values[worst] = running;
        order.push(panel.models[worst].clone());
        alive.retain(|&k| k != worst);
    }
    order.push(panel.models[alive[0]].clone());
    p_values[alive[0]] = 1.0;

    let surviving = (0..m)
        .filter(|&k| p_values[k] >= alpha)
        .map(|k| panel.models[k].clone())
        .collect();
    Ok(McsResult {
        models: panel.models.clone(),
        p_values,
        surviving,
        elimination_order: order,
        alpha,
        replicates: cfg.replicates,
        block_len: cfg.block_len,
    })
}

/// Type-7 (linear interpolation) empirical quantile.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegimeSplit {
    pub threshold: f64,
    pub calm: Vec<NaiveDate>,
    pub turbulent: Vec<NaiveDate>,
}

impl RegimeSplit {
    /// `date,label` rows.
    pub fn to_csv(&self) -> String {
        let mut all: Vec<(NaiveDate, &str)> = self
            .calm
            .iter()
            .map(|d| (*d, "calm"))
            .chain(self.turbulent.iter().map(|d| (*d, "turbulent")))
            .collect();
        all.sort();
        let mut s = String::from("date,label\n");
        for (d, l) in all {
            s.push_str(&format!("{},{l}\n", d.format("%Y-%m-%d")));
        }
        s
    }
}

/// Turbulent dates have market variance strictly above its `q`-quantile.
pub fn regime_split(market_variance: &[f64], dates: &[NaiveDate], q: f64) -> Result<RegimeSplit> {
    if market_variance.len() != dates.len() {
        return Err(Error::Misaligned(format!(
            "{} variances for {} dates",
            market_variance.len(),
            dates.len()
        )));
    }
    let threshold = quantile(market_variance, q)?;
    let (mut calm, mut turbulent) = (Vec::new(), Vec::new());
    for (v, d) in market_variance.iter().zip(dates) {
        if *v > threshold {
            turbulent.push(*d);
        } else {
            calm.push(*d);
        }
    }
    Ok(RegimeSplit {
        threshold,
        calm,
        turbulent,
    })
}

/// Trace of each realized matrix on the given dates.
pub fn trace_variance(realized: &CovSeries, dates: &[NaiveDate]) -> Result<Vec<f64>> {
    dates
        .iter()
        .map(|d| {
            realized
                .index_of(*d)
                .map(|i| realized.matrices()[i].trace())
                .ok_or_else(|| Error::Misaligned(format!("no realized matrix for {d}")))
        })
        .collect()
}
