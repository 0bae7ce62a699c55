//! Global minimum-variance portfolios and their out-of-sample metrics.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spd::{ensure_strict, SpdMatrix};

/// Relative eigenvalue floor applied to forecasts before inversion.
pub const SPD_FLOOR: f64 = 1e-8;
/// Trading days per year.
pub const ANNUALIZATION: f64 = 252.0;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightPath {
    pub dates: Vec<NaiveDate>,
    /// `T × n`, each row sums to one.
    pub weights: DMatrix<f64>,
}

impl WeightPath {
    pub fn new(dates: Vec<NaiveDate>, weights: DMatrix<f64>) -> Result<Self> {
        if dates.len() != weights.nrows() {
            return Err(Error::Misaligned(format!(
                "{} dates for {} weight rows",
                dates.len(),
                weights.nrows()
            )));
        }
        for r in 0..weights.nrows() {
            let s = weights.row(r).sum();
            if (s - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("weights on row {r} sum to {s}")));
            }
        }
        Ok(Self { dates, weights })
    }

    /// Same weights on every date.
    pub fn constant(dates: Vec<NaiveDate>, w: &DVector<f64>) -> Result<Self> {
        let t = dates.len();
        Self::new(dates, DMatrix::from_fn(t, w.len(), |_, j| w[j]))
    }

    /// `date,w_1,...,w_n`
    pub fn to_csv(&self) -> String {
        let n = self.weights.ncols();
        let mut s = String::from("date");
        for i in 1..=n {
            s.push_str(&format!(",w_{i}"));
        }
        s.push('\n');
        for (r, d) in self.dates.iter().enumerate() {
            s.push_str(&d.format("%Y-%m-%d").to_string());
            for c in 0..n {
                s.push_str(&format!(",{:e}", self.weights[(r, c)]));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PortfolioReport {
    pub annualized_std: f64,
    pub avg_turnover: f64,
}

fn budget_weights(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = s.nrows();
    let chol = s.clone().cholesky().ok_or(Error::Decomposition("cholesky in GMV solve"))?;
    let x = chol.solve(&DVector::from_element(n, 1.0));
    let total = x.sum();
    if !(total.is_finite() && total != 0.0) {
        return Err(Error::Decomposition("singular covariance in GMV solve"));
    }
    let w = x / total;
    let sum = w.sum();
    Ok(w / sum)
}

/// `S⁻¹ι / ιᵀS⁻¹ι`, after flooring the spectrum at `1e-8·λ_max`.
pub fn gmv_weights(s: &SpdMatrix) -> Result<DVector<f64>> {
    let s = ensure_strict(s, SPD_FLOOR)?;
    budget_weights(s.matrix())
}

/// `ι/n`.
pub fn naive_weights(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / n as f64)
}

/// Long-only GMV by a primal active-set method.
///
/// Starting from `ι/n`, each iteration solves the budget-constrained problem on
/// the free assets and steps toward it until a weight hits zero (that asset
/// joins the active set). At a stationary point the asset with the most negative
/// multiplier `2(Sw)_i − ν` is released; the method stops when none is below `−tol`.
pub fn gmv_long_only(s: &SpdMatrix, tol: f64, max_iters: usize) -> Result<DVector<f64>> {
    let s = ensure_strict(s, SPD_FLOOR)?;
    let a = s.matrix();
    let n = a.nrows();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut w = naive_weights(n);
    let mut active = vec![false; n];
    let scale = a.diagonal().max();
    for _ in 0..max_iters {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let sub = a.select_rows(&free).select_columns(&free);
        let target_free = budget_weights(&sub)?;
        let mut target = DVector::zeros(n);
        for (k, &i) in free.iter().enumerate() {
            target[i] = target_free[k];
        }
        let p = &target - &w;
        if p.amax() <= 1e-12 {
            w = target;
            let g = (a * &w) * 2.0;
            let nu = free.iter().map(|&i| g[i]).sum::<f64>() / free.len() as f64;
            let release = (0..n)
                .filter(|&i| active[i])
                .map(|i| (i, g[i] - nu))
                .filter(|&(_, mu)| mu < -tol * scale)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match release {
                Some((i, _)) => active[i] = false,
                None => {
                    let clipped = w.map(|v| v.max(0.0));
                    let sum = clipped.sum();
                    return Ok(clipped / sum);
                }
            }
            continue;
        }
        // Largest feasible step along p.
        let mut step = 1.0;
        let mut blocking = None;
        for &i in &free {
            if p[i] < 0.0 {
                let ratio = -w[i] / p[i];
                if ratio < step {
                    step = ratio;
                    blocking = Some(i);
                }
            }
        }
        w += &p * step;
        if let Some(i) = blocking {
            w[i] = 0.0;
            active[i] = true;
        }
    }
    Err(Error::LongOnlyNonConvergence {
        iterations: max_iters,
        last: w.iter().copied().collect(),
    })
}

/// Default tolerance and iteration cap `10·n`.
pub fn gmv_long_only_default(s: &SpdMatrix) -> Result<DVector<f64>> {
    gmv_long_only(s, 1e-12, 10 * s.dim().max(1))
}

/// GMV weights for every forecast, in parallel.
pub fn gmv_path(dates: &[NaiveDate], forecasts: &[SpdMatrix], long_only: bool) -> Result<WeightPath> {
    if dates.len() != forecasts.len() {
        return Err(Error::Misaligned(format!(
            "{} dates for {} forecasts",
            dates.len(),
            forecasts.len()
        )));
    }
    let n = forecasts.first().map_or(0, SpdMatrix::dim);
    let rows = forecasts
        .par_iter()
        .map(|f| if long_only { gmv_long_only_default(f) } else { gmv_weights(f) })
        .collect::<Result<Vec<_>>>()?;
    let weights = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
    WeightPath::new(dates.to_vec(), weights)
}

fn check_aligned(w: &WeightPath, returns: &DMatrix<f64>) -> Result<()> {
    if w.weights.shape() != returns.shape() {
        return Err(Error::Misaligned(format!(
            "weights {:?} vs returns {:?}",
            w.weights.shape(),
            returns.shape()
        )));
    }
    Ok(())
}

/// `r_{t,p} = w_tᵀ r_t`.
pub fn portfolio_returns(w: &WeightPath, returns: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_aligned(w, returns)?;
    Ok((0..returns.nrows())
        .map(|t| w.weights.row(t).dot(&returns.row(t)))
        .collect())
}

/// `√(252 · mean((r − r̄)²))`.
pub fn annualized_std(r: &[f64]) -> Result<f64> {
    if r.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: r.len(),
        });
    }
    // Shifted by the first observation so that constant input gives exactly zero.
    let t = r.len() as f64;
    let shifted: Vec<f64> = r.iter().map(|v| v - r[0]).collect();
    let mean = shifted.iter().sum::<f64>() / t;
    let var = shifted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
    Ok((ANNUALIZATION * var).sqrt())
}

/// Mean of `Σ_i |w_{i,t+1} − w_{i,t}(1 + r_{i,t}) / (1 + w_tᵀr_t)|` over transitions.
pub fn avg_turnover(w: &WeightPath, returns: &DMatrix<f64>) -> Result<f64> {
    check_aligned(w, returns)?;
    let t = returns.nrows();
    if t < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            actual: t,
        });
    }
    let mut total = 0.0;
    for s in 0..t - 1 {
        let wt = w.weights.row(s);
        let rt = returns.row(s);
        let gross = 1.0 + wt.dot(&rt);
        if gross == 0.0 || !gross.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "portfolio return of -100% on row {s}; turnover undefined"
            )));
        }
        total += (0..wt.len())
            .map(|i| (w.weights[(s + 1, i)] - wt[i] * (1.0 + rt[i]) / gross).abs())
            .sum::<f64>();
    }
    Ok(total / (t - 1) as f64)
}

pub fn portfolio_report(w: &WeightPath, returns: &DMatrix<f64>) -> Result<PortfolioReport> {
    let r = portfolio_returns(w, returns)?;
    Ok(PortfolioReport {
        annualized_std: annualized_std(&r)?,
        avg_turnover: avg_turnover(w, returns)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dates(t: usize) -> Vec<NaiveDate> {
        let d0 = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        (0..t as i64).map(|i| d0 + chrono::Duration::days(i)).collect()
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.05).unwrap()
    }

    fn variance(s: &SpdMatrix, w: &DVector<f64>) -> f64 {
        w.dot(&(s.matrix() * w))
    }

    #[test]
    fn gmv_examples() {
        assert_eq!(gmv_weights(&SpdMatrix::identity(4)).unwrap(), naive_weights(4));
        let w = gmv_weights(&SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap()).unwrap();
        assert_eq!(w.as_slice(), &[0.8, 0.2]);
    }

    #[test]
    fn gmv_beats_random_feasible_portfolios() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_spd(4, &mut rng);
        let w = gmv_weights(&s).unwrap();
        assert!((w.sum() - 1.0).abs() <= 1e-12);
        let best = variance(&s, &w);
        for _ in 0..10_000 {
            let v: DVector<f64> = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let v = &v / v.sum();
            if v.iter().all(|x| x.is_finite()) {
                assert!(best <= variance(&s, &v) + 1e-12);
            }
        }
    }

    #[test]
    fn gmv_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let s = random_spd(5, &mut rng);
            let w = gmv_weights(&s).unwrap();
            for c in [1e-4, 3.0, 1e4] {
                let wc = gmv_weights(&s.scale(c).unwrap()).unwrap();
                assert!((wc - &w).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn long_only_examples() {
        assert!((gmv_long_only_default(&SpdMatrix::identity(3)).unwrap() - naive_weights(3)).amax() < 1e-15);
        let s = SpdMatrix::from_diagonal(&[1.0, 2.0, 5.0]).unwrap();
        let a = gmv_weights(&s).unwrap();
        let b = gmv_long_only_default(&s).unwrap();
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn long_only_matches_simplex_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..10 {
            let s = random_spd(3, &mut rng);
            let w = gmv_long_only_default(&s).unwrap();
            let mut best = (f64::INFINITY, DVector::zeros(3));
            for i in 0..=1000 {
                for j in 0..=(1000 - i) {
                    let v = DVector::from_vec(vec![i as f64 / 1000.0, j as f64 / 1000.0, (1000 - i - j) as f64 / 1000.0]);
                    let obj = variance(&s, &v);
                    if obj < best.0 {
                        best = (obj, v);
                    }
                }
            }
            assert!((w.clone() - &best.1).amax() <= 2e-3, "case {case}: {w} vs {}", best.1);
            assert!(w.iter().all(|&x| x >= -1e-12));
        }
    }

    #[test]
    fn long_only_is_no_worse_than_clipped_gmv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(2..8);
            let s = random_spd(n, &mut rng);
            let w = gmv_long_only_default(&s).unwrap();
            assert!((w.sum() - 1.0).abs() < 1e-12);
            let clipped = gmv_weights(&s).unwrap().map(|v| v.max(0.0));
            let clipped = &clipped / clipped.sum();
            assert!(variance(&s, &w) <= variance(&s, &clipped) + 1e-12);
        }
    }

    #[test]
    fn long_only_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_spd(6, &mut rng);
        let unconstrained = gmv_weights(&s).unwrap();
        if unconstrained.iter().any(|&v| v < 0.0) {
            match gmv_long_only(&s, 1e-12, 1) {
                Err(Error::LongOnlyNonConvergence { iterations, last }) => {
                    assert_eq!(iterations, 1);
                    assert_eq!(last.len(), 6);
                }
                other => panic!("expected non-convergence, got {other:?}"),
            }
        }
    }

    #[test]
    fn portfolio_return_examples() {
        let w = WeightPath::constant(dates(2), &naive_weights(2)).unwrap();
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(portfolio_returns(&w, &zero).unwrap(), vec![0.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 2, &[0.02, -0.02, 0.02, -0.02]);
        assert_eq!(portfolio_returns(&w, &r).unwrap(), vec![0.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = DMatrix::from_fn(5, 3, |_, _| rng.random_range(0.0..1.0));
        let wm = DMatrix::from_fn(5, 3, |i, j| raw[(i, j)] / raw.row(i).sum());
        let path = WeightPath::new(dates(5), wm.clone()).unwrap();
        let rets = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-0.05..0.05));
        let got = portfolio_returns(&path, &rets).unwrap();
        for t in 0..5 {
            let mut s = 0.0;
            for i in 0..3 {
                s += wm[(t, i)] * rets[(t, i)];
            }
            assert!((got[t] - s).abs() < 1e-15);
        }
        assert!(portfolio_returns(&path, &DMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn annualized_std_examples() {
        assert_eq!(annualized_std(&[0.01; 10]).unwrap(), 0.0);
        let x = 0.013;
        assert!((annualized_std(&[x, -x]).unwrap() - 252f64.sqrt() * x).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r: Vec<f64> = (0..50).map(|_| rng.random_range(-0.03..0.03)).collect();
        let m = r.iter().sum::<f64>() / 50.0;
        let oracle = (252.0 * r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 50.0).sqrt();
        assert!((annualized_std(&r).unwrap() - oracle).abs() < 1e-14);
        assert!(annualized_std(&[1.0]).is_err());
    }

    #[test]
    fn turnover_examples() {
        let zero = DMatrix::zeros(2, 2);
        let w = WeightPath::new(dates(2), DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.6, 0.4])).unwrap();
        // 0.6 and 0.4 are not representable; the formula is exact on the stored inputs.
        let to = avg_turnover(&w, &zero).unwrap();
        assert_eq!(to, (0.6f64 - 0.5).abs() + (0.4f64 - 0.5).abs());
        assert!((to - 0.2).abs() <= 2.0 * f64::EPSILON * 0.2);
        let naive = WeightPath::constant(dates(7), &naive_weights(4)).unwrap();
        assert_eq!(avg_turnover(&naive, &DMatrix::zeros(7, 4)).unwrap(), 0.0);
        assert_eq!(naive_weights(4).as_slice(), &[0.25; 4]);
        assert_eq!(naive_weights(4).sum(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let raw = DMatrix::from_fn(6, 3, |_, _| rng.random_range(0.0..1.0));
        let wm = DMatrix::from_fn(6, 3, |i, j| raw[(i, j)] / raw.row(i).sum());
        let path = WeightPath::new(dates(6), wm.clone()).unwrap();
        let rets = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-0.05..0.05));
        let mut total = 0.0;
        for t in 0..5 {
            let mut port = 0.0;
            for i in 0..3 {
                port += wm[(t, i)] * rets[(t, i)];
            }
            for i in 0..3 {
                total += (wm[(t + 1, i)] - wm[(t, i)] * (1.0 + rets[(t, i)]) / (1.0 + port)).abs();
            }
        }
        assert!((avg_turnover(&path, &rets).unwrap() - total / 5.0).abs() < 1e-15);

        let crash = DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, 0.0, 0.0]);
        assert!(avg_turnover(&w, &crash).is_err());
    }

    #[test]
    fn weight_path_validation() {
        assert!(WeightPath::new(dates(1), DMatrix::from_row_slice(1, 2, &[0.5, 0.6])).is_err());
        assert!(WeightPath::new(dates(2), DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).is_err());
        let p = WeightPath::constant(dates(1), &naive_weights(2)).unwrap();
        assert_eq!(p.to_csv(), "date,w_1,w_2\n2019-01-01,5e-1,5e-1\n");
    }
}
