//! Riemannian SGD on the Stiefel manifold for ReSPDNet weights.
//!
//! Weights have orthonormal rows (`WWᵀ = I`). A training step computes the
//! Euclidean gradient by backpropagation, projects it onto the tangent space
//! at `W`, moves along `−η` times the projection and retracts back onto the
//! manifold with a sign-fixed QR factorization.
//!
//! ReEig backpropagation uses the Loewner (divided-difference) form
//!
//! ```text
//! dL/dX = U (F ∘ Uᵀ G U) Uᵀ,   F_ij = (s_i − s_j) · K_ij,   F_ii = 1[λ_i > ε]
//! ```
//!
//! with `s = max(ε, λ)` and `K_ij = 1/(λ_i − λ_j)`, clamped to
//! `sign/eig_gap_floor` when the gap is smaller than `eig_gap_floor`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::respdnet::{forward, ForwardTrace, Network};
use crate::spd::{self, ensure_strict, logm, EigPair, SpdMatrix};

/// A point on the Stiefel manifold `{W : WWᵀ = I}` with a gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct StiefelParam {
    pub value: DMatrix<f64>,
    pub grad_euclidean: DMatrix<f64>,
}

impl StiefelParam {
    pub fn new(value: DMatrix<f64>) -> Self {
        let grad_euclidean = DMatrix::zeros(value.nrows(), value.ncols());
        Self {
            value,
            grad_euclidean,
        }
    }

    /// `‖WWᵀ − I‖_F`.
    pub fn defect(&self) -> f64 {
        let r = self.value.nrows();
        (&self.value * self.value.transpose() - DMatrix::identity(r, r)).norm()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    LogEuclidean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub eig_gap_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            lr_decay: 0.95,
            epochs: 50,
            batch_size: 32,
            loss: LossKind::LogEuclidean,
            seed: 0,
            eig_gap_floor: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be finite and >= 0".into()));
        }
        if !(self.lr_decay > 0.0) {
            return Err(Error::InvalidParameter("lr_decay must be > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter("epochs and batch_size must be positive".into()));
        }
        if !(self.eig_gap_floor > 0.0) {
            return Err(Error::InvalidParameter("eig_gap_floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Relative floor applied to rank-deficient matrices inside the log-Euclidean loss.
pub const LOSS_SPD_FLOOR: f64 = 1e-8;

/// `(1/n²) ‖P − T‖_F²`.
pub fn loss_mse(pred: &SpdMatrix, target: &SpdMatrix) -> Result<f64> {
    pred.check_same_dim(target)?;
    let n = pred.dim() as f64;
    Ok((pred.matrix() - target.matrix()).norm_squared() / (n * n))
}

/// Squared log-Euclidean distance together with whether any input was floored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEuclideanLoss {
    pub value: f64,
    pub floored: bool,
}

/// `‖logm(P) − logm(T)‖_F²`, projecting rank-deficient inputs first.
pub fn loss_log_euclidean(pred: &SpdMatrix, target: &SpdMatrix) -> Result<LogEuclideanLoss> {
    pred.check_same_dim(target)?;
    let (p, fp) = floor_if_needed(pred)?;
    let (t, ft) = floor_if_needed(target)?;
    Ok(LogEuclideanLoss {
        value: (logm(&p)? - logm(&t)?).norm_squared(),
        floored: fp || ft,
    })
}

fn floor_if_needed(a: &SpdMatrix) -> Result<(SpdMatrix, bool)> {
    let floor = spd::relative_floor(a, LOSS_SPD_FLOOR)?;
    if a.min_eig()? >= floor {
        Ok((a.clone(), false))
    } else {
        Ok((ensure_strict(a, LOSS_SPD_FLOOR)?, true))
    }
}

/// Loss value and its gradient with respect to the prediction.
pub fn loss_and_grad(kind: LossKind, pred: &SpdMatrix, target: &SpdMatrix) -> Result<(f64, DMatrix<f64>)> {
    pred.check_same_dim(target)?;
    match kind {
        LossKind::Mse => {
            let n = pred.dim() as f64;
            let diff = pred.matrix() - target.matrix();
            Ok((diff.norm_squared() / (n * n), diff * (2.0 / (n * n))))
        }
        LossKind::LogEuclidean => {
            let (p, _) = floor_if_needed(pred)?;
            let (t, floored) = floor_if_needed(target)?;
            if floored {
                log::warn!("log-Euclidean loss: target was rank-deficient and has been floored");
            }
            let diff = logm(&p)? - logm(&t)?;
            let grad = logm_adjoint(p.eig()?, &(&diff * 2.0));
            Ok((diff.norm_squared(), grad))
        }
    }
}

/// Adjoint of the Fréchet derivative of `logm` at `U diag(λ) Uᵀ`, applied to `g`.
fn logm_adjoint(eig: &EigPair, g: &DMatrix<f64>) -> DMatrix<f64> {
    let u = &eig.vectors;
    let l = &eig.values;
    let n = l.len();
    let mut inner = u.transpose() * spd::symmetrize(g) * u;
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (l[i], l[j]);
            let f = if i == j || (a - b).abs() <= 1e-12 * a.max(b) {
                2.0 / (a + b)
            } else {
                ((a - b) / b).ln_1p() / (a - b)
            };
            inner[(i, j)] *= f;
        }
    }
    spd::symmetrize(&(u * inner * u.transpose()))
}

/// Riemannian gradient: `G − sym(G Wᵀ) W` for row-orthonormal `W`.
pub fn stiefel_project(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let gw = g * w.transpose();
    g - spd::symmetrize(&gw) * w
}

/// Orthonormal basis of the column space of a tall matrix via QR with `diag(R) > 0`.
///
/// Falls back to the polar factor when `m` is numerically rank deficient.
pub fn orthonormal_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() < m.ncols() {
        return Err(Error::InvalidParameter(format!(
            "cannot orthonormalize {} columns in dimension {}",
            m.ncols(),
            m.nrows()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("retraction input".into()));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    let diag_max = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let diag_min = (0..r.ncols()).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(diag_min > 1e-12 * diag_max.max(f64::MIN_POSITIVE)) {
        let svd = m
            .clone()
            .try_svd(true, true, f64::EPSILON, 10_000)
            .ok_or(Error::Decomposition("SVD fallback in retraction did not converge"))?;
        let u = svd.u.ok_or(Error::Decomposition("SVD missing U"))?;
        let v_t = svd.v_t.ok_or(Error::Decomposition("SVD missing Vᵀ"))?;
        return Ok(u * v_t);
    }
    for i in 0..r.ncols() {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    Ok(q)
}

/// QR retraction `R_W(V) = qf((W + V)ᵀ)ᵀ`.
pub fn stiefel_retract(w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.shape() != v.shape() {
        return Err(Error::DimensionMismatch {
            expected: w.nrows() * w.ncols(),
            found: v.nrows() * v.ncols(),
        });
    }
    if v.iter().all(|&x| x == 0.0) {
        return Ok(w.clone());
    }
    Ok(orthonormal_columns(&(w + v).transpose())?.transpose())
}

/// Counters gathered during ReEig backpropagation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackwardDiagnostics {
    /// Number of Loewner entries clamped because of a tiny eigen-gap.
    pub clamped: usize,
    /// Smallest eigenvalue gap seen in any ReEig layer.
    pub min_eig_gap: f64,
}

impl Default for BackwardDiagnostics {
    fn default() -> Self {
        Self {
            clamped: 0,
            min_eig_gap: f64::INFINITY,
        }
    }
}

impl BackwardDiagnostics {
    fn merge(&mut self, other: &Self) {
        self.clamped += other.clamped;
        self.min_eig_gap = self.min_eig_gap.min(other.min_eig_gap);
    }
}

/// ReEig backward: maps `dL/dY` to `dL/dX` for `Y = U max(εI, Σ) Uᵀ`.
pub fn reeig_backward(
    eig: &EigPair,
    eps: f64,
    grad_out: &DMatrix<f64>,
    gap_floor: f64,
    diag: &mut BackwardDiagnostics,
) -> DMatrix<f64> {
    let u = &eig.vectors;
    let l = &eig.values;
    let n = l.len();
    let mut inner = u.transpose() * spd::symmetrize(grad_out) * u;
    for i in 0..n {
        for j in 0..n {
            let f = if i == j {
                if l[i] > eps {
                    1.0
                } else {
                    0.0
                }
            } else {
                let gap = l[i] - l[j];
                diag.min_eig_gap = diag.min_eig_gap.min(gap.abs());
                let (ai, aj) = (l[i] > eps, l[j] > eps);
                if ai && aj {
                    1.0
                } else if !ai && !aj {
                    0.0
                } else {
                    let ds = l[i].max(eps) - l[j].max(eps);
                    if gap.abs() < gap_floor {
                        diag.clamped += 1;
                        ds * gap.signum() / gap_floor
                    } else {
                        ds / gap
                    }
                }
            };
            inner[(i, j)] *= f;
        }
    }
    spd::symmetrize(&(u * inner * u.transpose()))
}

/// Euclidean gradients of every weight given `dL/dY` at the network output.
pub fn backward(
    net: &Network,
    trace: &ForwardTrace,
    grad_output: &DMatrix<f64>,
    gap_floor: f64,
) -> Result<(Vec<DMatrix<f64>>, BackwardDiagnostics)> {
    if trace.layers.len() != net.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: net.weights.len(),
            found: trace.layers.len(),
        });
    }
    let mut diag = BackwardDiagnostics::default();
    let mut grads = vec![DMatrix::zeros(0, 0); net.weights.len()];
    let mut g = spd::symmetrize(grad_output);
    for k in (0..net.weights.len()).rev() {
        let w = &net.weights[k].value;
        let layer = &trace.layers[k];
        if g.shape() != (w.nrows(), w.nrows()) {
            return Err(Error::DimensionMismatch {
                expected: w.nrows(),
                found: g.nrows(),
            });
        }
        grads[k] = (&g * w * &layer.input) * 2.0;
        if k == 0 {
            break;
        }
        let mut gx = w.transpose() * &g * w;
        if let Some(d) = layer.expanded_from {
            gx = gx.view((0, 0), (d, d)).clone_owned();
        }
        let prev = trace.layers[k - 1]
            .reeig
            .as_ref()
            .ok_or(Error::InvalidParameter("missing ReEig record in trace".into()))?;
        g = reeig_backward(prev, net.spec.eps_rectify, &gx, gap_floor, &mut diag);
    }
    Ok((grads, diag))
}

/// Loss of the network on one sample.
pub fn sample_loss(net: &Network, input: &SpdMatrix, target: &SpdMatrix, kind: LossKind) -> Result<f64> {
    let out = forward(net, input)?.output;
    Ok(loss_and_grad(kind, &out, target)?.0)
}

/// Per-epoch training statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean Frobenius norm of the Riemannian gradient over batches.
    pub grad_norm: f64,
    pub min_eig_gap: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub clamped_entries: usize,
    pub steps: usize,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.mean_loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }

    /// `epoch,mean_loss,grad_norm,min_eig_gap` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,grad_norm,min_eig_gap\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{}\n", e.epoch, e.mean_loss, e.grad_norm, e.min_eig_gap));
        }
        s
    }
}

type SampleResult = (f64, Vec<DMatrix<f64>>, BackwardDiagnostics);

fn sample_gradient(net: &Network, input: &SpdMatrix, target: &SpdMatrix, cfg: &TrainConfig) -> Result<SampleResult> {
    let trace = forward(net, input)?;
    let (loss, grad_out) = loss_and_grad(cfg.loss, &trace.output, target)?;
    let (grads, diag) = backward(net, &trace, &grad_out, cfg.eig_gap_floor)?;
    Ok((loss, grads, diag))
}

/// Riemannian SGD over `data` as `(input, target)` pairs. Updates `net` in place.
///
/// Sample order is shuffled every epoch from a generator seeded with `cfg.seed`;
/// per-sample work may run in parallel but gradients are reduced in batch order,
/// so results are bitwise reproducible.
pub fn train(net: &mut Network, data: &[(SpdMatrix, SpdMatrix)], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData {
            required: 0,
            actual: 0,
        });
    }
    let out_dim = net.spec.output_dim();
    for (x, y) in data {
        if x.dim() != net.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: net.spec.input_dim,
                found: x.dim(),
            });
        }
        if y.dim() != out_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim,
                found: y.dim(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let mut lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut grad_norm_sum = 0.0;
        let mut epoch_diag = BackwardDiagnostics::default();
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let results: Vec<Result<SampleResult>> = batch
                .par_iter()
                .map(|&i| sample_gradient(net, &data[i].0, &data[i].1, cfg))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut acc: Vec<DMatrix<f64>> = net
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.value.nrows(), w.value.ncols()))
                .collect();
            for r in results {
                let (loss, grads, diag) = r?;
                if !loss.is_finite() {
                    return Err(Error::NanLoss {
                        epoch,
                        batch: b,
                        learning_rate: lr,
                    });
                }
                loss_sum += loss;
                epoch_diag.merge(&diag);
                for (a, g) in acc.iter_mut().zip(grads) {
                    *a += g * scale;
                }
            }
            let mut sq_norm = 0.0;
            for (param, g) in net.weights.iter_mut().zip(acc) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NanLoss {
                        epoch,
                        batch: b,
                        learning_rate: lr,
                    });
                }
                let rgrad = stiefel_project(&param.value, &g);
                sq_norm += rgrad.norm_squared();
                param.grad_euclidean = g;
                param.value = stiefel_retract(&param.value, &(rgrad * -lr))?;
            }
            grad_norm_sum += sq_norm.sqrt();
            report.steps += 1;
        }
        report.clamped_entries += epoch_diag.clamped;
        report.epochs.push(EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            grad_norm: grad_norm_sum / batches.len() as f64,
            min_eig_gap: epoch_diag.min_eig_gap,
            learning_rate: lr,
        });
        lr *= cfg.lr_decay;
    }
    Ok(report)
}
