//! Sample Fréchet means of SPD matrices.
//!
//! The log-Euclidean mean has the closed form `expm(mean(logm(S_t)))`. The
//! Procrustes (size-and-shape) mean is found with the Generalized Procrustes
//! Algorithm on symmetric square roots `L_t`: rotate every `L_t` onto the
//! current average `Δ`, re-average, repeat. The mean is `ΔΔᵀ`.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spd::{self, ensure_strict, expm, logm, procrustes_rotation, SpdMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrechetMetric {
    LogEuclidean,
    Procrustes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrechetConfig {
    pub metric: FrechetMetric,
    /// GPA iteration cap.
    pub max_iters: usize,
    /// GPA relative-change tolerance.
    pub tol: f64,
    /// Eigenvalue floor for rank-deficient inputs, relative to `λ_max`.
    pub spd_floor: f64,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        Self {
            metric: FrechetMetric::LogEuclidean,
            max_iters: 200,
            tol: 1e-10,
            spd_floor: 1e-8,
        }
    }
}

impl FrechetConfig {
    pub fn with_metric(metric: FrechetMetric) -> Self {
        Self {
            metric,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) || !(self.spd_floor > 0.0) {
            return Err(Error::InvalidParameter("tol and spd_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of the Generalized Procrustes Algorithm.
#[derive(Clone, Debug)]
pub struct ProcrustesMean {
    pub mean: SpdMatrix,
    /// `Δ` with `mean = ΔΔᵀ`.
    pub root: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective `Σ‖L_t R_t − Δ‖²` after each iteration, starting with the initial value.
    pub objective: Vec<f64>,
}

/// Lexicographic total order on matrix entries.
fn canonical_cmp(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn check_sample(sample: &[SpdMatrix]) -> Result<usize> {
    let first = sample.first().ok_or(Error::EmptySample)?;
    let n = first.dim();
    for s in sample {
        if s.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: s.dim(),
            });
        }
    }
    Ok(n)
}

/// Dispatches on `cfg.metric`.
pub fn frechet_mean(sample: &[SpdMatrix], cfg: &FrechetConfig) -> Result<SpdMatrix> {
    cfg.validate()?;
    match cfg.metric {
        FrechetMetric::LogEuclidean => frechet_mean_log_euclidean_floored(sample, cfg.spd_floor),
        FrechetMetric::Procrustes => Ok(frechet_mean_procrustes(sample, cfg)?.mean),
    }
}

/// `expm((1/T) Σ logm(S_t))` with the default relative floor of `1e-8`.
pub fn frechet_mean_log_euclidean(sample: &[SpdMatrix]) -> Result<SpdMatrix> {
    frechet_mean_log_euclidean_floored(sample, FrechetConfig::default().spd_floor)
}

/// Log-Euclidean mean; inputs with `λ_min < rel_floor·λ_max` are projected first.
pub fn frechet_mean_log_euclidean_floored(sample: &[SpdMatrix], rel_floor: f64) -> Result<SpdMatrix> {
    let n = check_sample(sample)?;
    if sample.len() == 1 {
        return ensure_strict(&sample[0], rel_floor);
    }
    let mut logs = sample
        .iter()
        .map(|s| logm(&ensure_strict(s, rel_floor)?))
        .collect::<Result<Vec<_>>>()?;
    // Canonical summation order makes the mean bitwise independent of input order.
    logs.sort_by(canonical_cmp);
    let mut acc = DMatrix::zeros(n, n);
    for l in &logs {
        acc += l;
    }
    acc /= logs.len() as f64;
    expm(&acc)
}

/// `Σ_t min_R ‖L_t R − Δ‖²`.
pub fn gpa_objective(roots: &[DMatrix<f64>], delta: &DMatrix<f64>) -> Result<f64> {
    roots.iter().try_fold(0.0, |acc, l| {
        let r = procrustes_rotation(delta, l)?;
        Ok(acc + (l * r - delta).norm_squared())
    })
}

/// Procrustes Fréchet mean via the Generalized Procrustes Algorithm.
///
/// Initialized at the first square root in canonical (lexicographic) order. Stops when both
/// the objective (relative to `Σ‖L_t‖²`) and `ΔΔᵀ` (relative to its norm) change
/// by less than `cfg.tol`, when a step would increase the objective, or after
/// `cfg.max_iters` iterations with `converged = false`.
pub fn frechet_mean_procrustes(sample: &[SpdMatrix], cfg: &FrechetConfig) -> Result<ProcrustesMean> {
    cfg.validate()?;
    let n = check_sample(sample)?;
    let mut roots = sample.iter().map(SpdMatrix::sqrt).collect::<Result<Vec<_>>>()?;
    // Canonical order fixes both the starting point and the summation order,
    // so the result does not depend on the order of the sample.
    roots.sort_by(canonical_cmp);
    // Objective changes are relative to the total sum of squares, so a
    // near-zero objective (identical samples) still converges.
    let scale = roots.iter().map(|l| l.norm_squared()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut delta = roots[0].clone();
    let mut objective = vec![gpa_objective(&roots, &delta)?];
    let mut mean_prev = &delta * delta.transpose();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let mut next = DMatrix::zeros(n, n);
        for l in &roots {
            let r = procrustes_rotation(&delta, l)?;
            next += l * r;
        }
        next /= roots.len() as f64;
        let obj = roots.iter().try_fold(0.0, |acc, l| -> Result<f64> {
            let r = procrustes_rotation(&next, l)?;
            Ok(acc + (l * r - &next).norm_squared())
        })?;
        let prev = *objective.last().expect("seeded with initial objective");
        if obj > prev {
            // A GPA step cannot increase the objective; an increase is round-off at the optimum.
            converged = (obj - prev) / scale < cfg.tol;
            break;
        }
        objective.push(obj);
        delta = next;
        let mean = &delta * delta.transpose();
        let obj_change = (prev - obj).abs() / scale;
        let mean_change = (&mean - &mean_prev).norm() / mean.norm().max(f64::MIN_POSITIVE);
        mean_prev = mean;
        if obj_change < cfg.tol && mean_change < cfg.tol {
            converged = true;
            break;
        }
    }

    let mean_matrix = spd::symmetrize(&mean_prev);
    let mean = SpdMatrix::new(mean_matrix)?;
    let mean = ensure_strict(&mean, cfg.spd_floor)?;
    if !converged {
        log::warn!("GPA did not converge within {} iterations", cfg.max_iters);
    }
    Ok(ProcrustesMean {
        mean,
        root: delta,
        converged,
        iterations,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spd::dist_log_euclidean;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SpdMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.2).unwrap()
    }

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q()
    }

    #[test]
    fn log_euclidean_identical_and_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_spd(3, &mut rng);
        let m = frechet_mean_log_euclidean(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!((m.matrix() - a.matrix()).norm() / a.matrix().norm() < 1e-10);
        let single = frechet_mean_log_euclidean(std::slice::from_ref(&a)).unwrap();
        assert!((single.matrix() - a.matrix()).norm() / a.matrix().norm() < 1e-10);

        let e2 = std::f64::consts::E.powi(2);
        let m = frechet_mean_log_euclidean(&[
            SpdMatrix::identity(2),
            SpdMatrix::identity(2).scale(e2).unwrap(),
        ])
        .unwrap();
        let e = std::f64::consts::E;
        assert!((m.matrix() - DMatrix::identity(2, 2) * e).norm() < 1e-12);
    }

    #[test]
    fn log_euclidean_matches_iterative_minimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sample: Vec<_> = (0..5).map(|_| random_spd(3, &mut rng)).collect();
        let closed = frechet_mean_log_euclidean(&sample).unwrap();
        // Gradient descent on F(X) = Σ‖logm(S_t) − X‖² over symmetric X (the log domain).
        let logs: Vec<_> = sample.iter().map(|s| logm(s).unwrap()).collect();
        let mut x = DMatrix::zeros(3, 3);
        for _ in 0..500 {
            let mut grad = DMatrix::zeros(3, 3);
            for l in &logs {
                grad += (&x - l) * 2.0;
            }
            x -= grad * 0.05;
        }
        let iterative = expm(&x).unwrap();
        assert!(dist_log_euclidean(&closed, &iterative).unwrap() < 1e-6);
    }

    #[test]
    fn log_euclidean_is_bitwise_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut sample: Vec<_> = (0..7).map(|_| random_spd(4, &mut rng)).collect();
        let base = frechet_mean_log_euclidean(&sample).unwrap();
        for _ in 0..5 {
            sample.shuffle(&mut rng);
            assert_eq!(frechet_mean_log_euclidean(&sample).unwrap().matrix(), base.matrix());
        }
    }

    #[test]
    fn log_euclidean_commutes_with_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let sample: Vec<_> = (0..4).map(|_| random_spd(3, &mut rng)).collect();
        let q = random_orthogonal(3, &mut rng);
        let rotated: Vec<_> = sample
            .iter()
            .map(|s| SpdMatrix::new(&q * s.matrix() * q.transpose()).unwrap())
            .collect();
        let m = frechet_mean_log_euclidean(&sample).unwrap();
        let mr = frechet_mean_log_euclidean(&rotated).unwrap();
        let expected = &q * m.matrix() * q.transpose();
        assert!((mr.matrix() - expected).norm() < 1e-8);
    }

    #[test]
    fn log_euclidean_floors_rank_deficient_inputs() {
        let a = SpdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let b = SpdMatrix::identity(2);
        let m = frechet_mean_log_euclidean(&[a, b]).unwrap();
        assert!(m.min_eig().unwrap() > 0.0);
    }

    #[test]
    fn empty_and_mismatched_samples_fail() {
        assert!(matches!(frechet_mean_log_euclidean(&[]), Err(Error::EmptySample)));
        let cfg = FrechetConfig::with_metric(FrechetMetric::Procrustes);
        assert!(matches!(frechet_mean_procrustes(&[], &cfg), Err(Error::EmptySample)));
        let mixed = [SpdMatrix::identity(2), SpdMatrix::identity(3)];
        assert!(matches!(
            frechet_mean_log_euclidean(&mixed),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn procrustes_identical_and_isotropic_pair() {
        let cfg = FrechetConfig::with_metric(FrechetMetric::Procrustes);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a = random_spd(3, &mut rng);
        let res = frechet_mean_procrustes(&[a.clone(), a.clone()], &cfg).unwrap();
        assert!(res.converged);
        assert!((res.mean.matrix() - a.matrix()).norm() < 1e-8);

        let res = frechet_mean_procrustes(
            &[SpdMatrix::identity(2), SpdMatrix::identity(2).scale(9.0).unwrap()],
            &cfg,
        )
        .unwrap();
        assert!((res.mean.matrix() - DMatrix::identity(2, 2) * 4.0).norm() < 1e-10);
    }

    #[test]
    fn gpa_objective_is_monotone_and_locally_optimal() {
        let cfg = FrechetConfig::with_metric(FrechetMetric::Procrustes);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sample: Vec<_> = (0..5).map(|_| random_spd(2, &mut rng)).collect();
        let res = frechet_mean_procrustes(&sample, &cfg).unwrap();
        assert!(res.converged);
        for w in res.objective.windows(2) {
            assert!(w[1] <= w[0], "objective increased: {w:?}");
        }
        let roots: Vec<_> = sample.iter().map(|s| s.sqrt().unwrap()).collect();
        let best = gpa_objective(&roots, &res.root).unwrap();
        for _ in 0..1000 {
            let pert = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-1e-3..1e-3));
            assert!(best <= gpa_objective(&roots, &(&res.root + pert)).unwrap() + 1e-12);
        }
    }

    #[test]
    fn procrustes_mean_is_permutation_invariant() {
        let cfg = FrechetConfig::with_metric(FrechetMetric::Procrustes);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut sample: Vec<_> = (0..6).map(|_| random_spd(3, &mut rng)).collect();
        let base = frechet_mean_procrustes(&sample, &cfg).unwrap().mean;
        for _ in 0..3 {
            sample.shuffle(&mut rng);
            let m = frechet_mean_procrustes(&sample, &cfg).unwrap().mean;
            assert_eq!(m.matrix(), base.matrix());
        }
    }

    #[test]
    fn procrustes_handles_rank_deficient_inputs() {
        let cfg = FrechetConfig::with_metric(FrechetMetric::Procrustes);
        let a = SpdMatrix::from_diagonal(&[1.0, 0.0]).unwrap();
        let b = SpdMatrix::from_diagonal(&[0.0, 1.0]).unwrap();
        let res = frechet_mean_procrustes(&[a, b], &cfg).unwrap();
        assert!(res.mean.min_eig().unwrap() > 0.0);
    }
}
