//! Random-walk and Cholesky factor-VAR(1) forecasters.

use nalgebra::{DMatrix, DVector};

use crate::dataset::CovSeries;
use crate::error::{Error, Result};
use crate::spd::{eig_sym, ensure_strict, SpdMatrix};

/// Relative eigenvalue floor applied before a Cholesky factorization.
const CHOL_FLOOR: f64 = 1e-12;
/// Principal components whose variance is below this fraction of the largest are dropped.
const PCA_RANK_TOL: f64 = 1e-12;

/// `RC_t`, unchanged. The random walk has no parameters and no fit step.
pub fn forecast_rw(series: &CovSeries, t: usize) -> Result<SpdMatrix> {
    series
        .matrices()
        .get(t)
        .cloned()
        .ok_or(Error::InsufficientData {
            required: t + 1,
            actual: series.len(),
        })
}

/// Length of the Cholesky vector of an `n×n` matrix.
pub fn chol_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Lower Cholesky factor entries (positive diagonal), row-major.
pub fn chol_vectorize(s: &SpdMatrix) -> Result<DVector<f64>> {
    let s = ensure_strict(s, CHOL_FLOOR)?;
    let n = s.dim();
    let l = s
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::Decomposition("cholesky"))?
        .l();
    let mut v = DVector::zeros(chol_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            v[k] = l[(i, j)];
            k += 1;
        }
    }
    Ok(v)
}

/// `L Lᵀ` with `L` filled row-major from `v`; PSD for any input.
pub fn chol_reconstruct(v: &DVector<f64>) -> Result<SpdMatrix> {
    let p = v.len();
    let n = ((((8 * p + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if chol_len(n) != p {
        return Err(Error::InvalidParameter(format!("{p} is not a triangular number")));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("Cholesky vector entry {bad}")));
    }
    let mut l = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            l[(i, j)] = v[k];
            k += 1;
        }
    }
    let s = &l * l.transpose();
    Ok(SpdMatrix::from_sym_unchecked(crate::spd::symmetrize(&s)))
}

/// PCA factors on Cholesky vectors with a VAR(1) on the scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FavarModel {
    pub n_factors: usize,
    /// `p × f`, orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// Mean of the training scores (zero up to rounding).
    pub factor_mean: DVector<f64>,
    pub var_coef: DMatrix<f64>,
    pub var_intercept: DVector<f64>,
    /// Mean Cholesky vector of the training sample.
    pub center: DVector<f64>,
}

/// `min(50, p, train_len − 2)`, at least one.
pub fn default_factor_count(n: usize, train_len: usize) -> usize {
    50.min(chol_len(n)).min(train_len.saturating_sub(2)).max(1)
}

/// Fits on `series[train]`.
pub fn favar_fit(series: &CovSeries, n_factors: usize, train: std::ops::Range<usize>) -> Result<FavarModel> {
    let len = train.len();
    if train.end > series.len() {
        return Err(Error::InsufficientData {
            required: train.end,
            actual: series.len(),
        });
    }
    if n_factors == 0 {
        return Err(Error::InvalidParameter("factor count must be positive".into()));
    }
    if len <= n_factors + 1 {
        return Err(Error::InsufficientData {
            required: n_factors + 2,
            actual: len,
        });
    }
    let vs = series.matrices()[train]
        .iter()
        .map(chol_vectorize)
        .collect::<Result<Vec<_>>>()?;
    let p = vs[0].len();
    if n_factors > p {
        return Err(Error::InvalidParameter(format!("{n_factors} factors exceed {p} Cholesky entries")));
    }
    let center = vs.iter().fold(DVector::zeros(p), |acc, v| acc + v) / len as f64;
    let x = DMatrix::from_fn(len, p, |t, j| vs[t][j] - center[j]);
    let cov = crate::spd::symmetrize(&(x.transpose() * &x / (len - 1) as f64));
    let eig = eig_sym(&cov)?;
    let top = eig.values[0].max(0.0);
    let mut f = (0..n_factors)
        .take_while(|&k| eig.values[k] > PCA_RANK_TOL * top && eig.values[k] > 0.0)
        .count();
    if f < n_factors {
        log::warn!("sample covariance has rank {f}; using {} factors instead of {n_factors}", f.max(1));
        f = f.max(1);
    }
    let loadings = eig.vectors.columns(0, f).clone_owned();
    let scores = &x * &loadings;
    let factor_mean = DVector::from_fn(f, |k, _| scores.column(k).mean());

    // OLS of s_{t+1} on [1, s_t].
    let m = len - 1;
    let mut reg = DMatrix::zeros(m, f + 1);
    reg.column_mut(0).fill(1.0);
    reg.view_mut((0, 1), (m, f)).copy_from(&scores.rows(0, m));
    let y = scores.rows(1, m).clone_owned();
    let svd = reg.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * (m.max(f + 1) as f64);
    let b = if smax > 0.0 {
        svd.solve(&y, tol).map_err(Error::Decomposition)?
    } else {
        DMatrix::zeros(f + 1, f)
    };
    let var_intercept = b.row(0).transpose();
    let var_coef = b.rows(1, f).transpose();
    Ok(FavarModel {
        n_factors: f,
        loadings,
        factor_mean,
        var_coef,
        var_intercept,
        center,
    })
}

/// One-step forecast from `RC_t`.
pub fn favar_forecast(model: &FavarModel, series: &CovSeries, t: usize) -> Result<SpdMatrix> {
    let rc = forecast_rw(series, t)?;
    favar_forecast_from(model, &rc)
}

pub fn favar_forecast_from(model: &FavarModel, rc: &SpdMatrix) -> Result<SpdMatrix> {
    let v = chol_vectorize(rc)?;
    if v.len() != model.center.len() {
        return Err(Error::DimensionMismatch {
            expected: model.center.len(),
            found: v.len(),
        });
    }
    let s = model.loadings.transpose() * (v - &model.center);
    let next = &model.var_intercept + &model.var_coef * s;
    chol_reconstruct(&(&model.center + &model.loadings * next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{simulate_series, SimulateConfig};
    use crate::spd::dist_frobenius;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dates(t: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        (0..t as i64).map(|i| d0 + chrono::Duration::days(i)).collect()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
    }

    #[test]
    fn random_walk_returns_last_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mats: Vec<_> = (0..5).map(|_| random_spd(3, &mut rng)).collect();
        let s = CovSeries::new(dates(5), mats.clone()).unwrap();
        for t in 0..5 {
            let f = forecast_rw(&s, t).unwrap();
            assert!(f.matrix().iter().zip(mats[t].matrix().iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert!(forecast_rw(&s, 5).is_err());
        let c = CovSeries::new(dates(4), vec![mats[0].clone(); 4]).unwrap();
        assert_eq!(dist_frobenius(&forecast_rw(&c, 2).unwrap(), &c.matrices()[3]).unwrap(), 0.0);
    }

    #[test]
    fn random_walk_loss_is_larger_without_persistence() {
        // Innovation scale chosen so both latent processes share one stationary variance.
        let mean_rw_loss = |persistence: f64| {
            let s = simulate_series(&SimulateConfig {
                len: 400,
                persistence,
                innovation_scale: 0.2 * ((1.0 - persistence * persistence) / (1.0 - 0.95 * 0.95)).sqrt(),
                df: 200.0,
                seed: 7,
                ..SimulateConfig::default()
            })
            .unwrap();
            (1..s.len())
                .map(|t| dist_frobenius(&forecast_rw(&s, t - 1).unwrap(), &s.matrices()[t]).unwrap())
                .sum::<f64>()
                / (s.len() - 1) as f64
        };
        assert!(mean_rw_loss(0.0) > mean_rw_loss(0.95));
    }

    #[test]
    fn cholesky_vector_examples() {
        let v = chol_vectorize(&SpdMatrix::identity(2)).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);
        assert_eq!(chol_reconstruct(&v).unwrap().matrix(), &DMatrix::identity(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = random_spd(5, &mut rng);
            let back = chol_reconstruct(&chol_vectorize(&s).unwrap()).unwrap();
            assert!((back.matrix() - s.matrix()).norm() < 1e-10);
            let noise = DVector::from_fn(15, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = chol_reconstruct(&noise).unwrap();
            assert!(SpdMatrix::new(r.matrix().clone()).is_ok());
        }
        assert!(chol_reconstruct(&DVector::zeros(4)).is_err());
    }

    #[test]
    fn constant_series_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(3, &mut rng);
        let s = CovSeries::new(dates(30), vec![a.clone(); 30]).unwrap();
        let m = favar_fit(&s, 4, 0..30).unwrap();
        let f = favar_forecast(&m, &s, 29).unwrap();
        assert!((f.matrix() - a.matrix()).norm() < 1e-8);
    }

    #[test]
    fn first_loading_tracks_rank_one_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = random_spd(3, &mut rng);
        let v0 = chol_vectorize(&base).unwrap();
        let dir = DVector::from_vec(vec![0.3, 0.1, 0.4, -0.2, 0.2, 0.5]).normalize();
        let mats: Vec<_> = (0..60)
            .map(|_| chol_reconstruct(&(&v0 + &dir * rng.random_range(-0.05..0.05))).unwrap())
            .collect();
        let s = CovSeries::new(dates(60), mats).unwrap();
        let m = favar_fit(&s, 3, 0..60).unwrap();
        assert!(m.loadings.column(0).dot(&dir).abs() > 0.99);
        let gram = m.loadings.transpose() * &m.loadings;
        assert!((gram - DMatrix::identity(m.n_factors, m.n_factors)).norm() < 1e-10);
    }

    #[test]
    fn var_coefficients_are_consistent() {
        // Two AR(0.8) factors along orthogonal Cholesky directions of a 2×2 matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v0 = DVector::from_vec(vec![2.0, 0.0, 2.0]);
        let d1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let d2 = DVector::from_vec(vec![0.0, 1.0, 0.0]);
        let (mut a, mut b) = (0.0, 0.0);
        let mats: Vec<_> = (0..2000)
            .map(|_| {
                a = 0.8 * a + 0.05 * rng.sample::<f64, _>(StandardNormal);
                b = 0.8 * b + 0.03 * rng.sample::<f64, _>(StandardNormal);
                chol_reconstruct(&(&v0 + &d1 * a + &d2 * b)).unwrap()
            })
            .collect();
        let s = CovSeries::new(dates(2000), mats).unwrap();
        let m = favar_fit(&s, 2, 0..2000).unwrap();
        for k in 0..2 {
            assert!((m.var_coef[(k, k)] - 0.8).abs() < 0.1, "{}", m.var_coef);
        }
    }

    #[test]
    fn degenerate_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_spd(2, &mut rng);
        let center = DVector::from_vec(vec![1.5, 0.2, 0.7]);
        let zero = FavarModel {
            n_factors: 2,
            loadings: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            factor_mean: DVector::zeros(2),
            var_coef: DMatrix::zeros(2, 2),
            var_intercept: DVector::zeros(2),
            center: center.clone(),
        };
        let f = favar_forecast_from(&zero, &a).unwrap();
        assert!((f.matrix() - chol_reconstruct(&center).unwrap().matrix()).norm() < 1e-14);

        let ident = FavarModel {
            n_factors: 3,
            loadings: DMatrix::identity(3, 3),
            factor_mean: DVector::zeros(3),
            var_coef: DMatrix::identity(3, 3),
            var_intercept: DVector::zeros(3),
            center,
        };
        let f = favar_forecast_from(&ident, &a).unwrap();
        assert!((f.matrix() - a.matrix()).norm() < 1e-12);
    }

    #[test]
    fn forecasts_are_psd_for_fitted_models() {
        for seed in 0..100 {
            let s = simulate_series(&SimulateConfig {
                n: 3,
                len: 40,
                df: 5.0,
                seed,
                ..SimulateConfig::default()
            })
            .unwrap();
            let m = favar_fit(&s, default_factor_count(3, 39), 0..39).unwrap();
            let f = favar_forecast(&m, &s, 39).unwrap();
            assert!(SpdMatrix::new(f.matrix().clone()).is_ok());
        }
    }

    #[test]
    fn fit_errors() {
        let s = CovSeries::new(dates(5), vec![SpdMatrix::identity(2); 5]).unwrap();
        assert!(favar_fit(&s, 4, 0..5).is_err());
        assert!(favar_fit(&s, 0, 0..5).is_err());
        assert!(favar_fit(&s, 1, 0..9).is_err());
        assert_eq!(default_factor_count(5, 500), 15);
        assert_eq!(default_factor_count(50, 500), 50);
        assert_eq!(default_factor_count(5, 10), 8);
    }
}
