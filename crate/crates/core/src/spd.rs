//! Symmetric positive (semi-)definite matrices and the spectral toolkit built on them.
//!
//! [`SpdMatrix`] is the manifold point used everywhere else in the crate. It is
//! immutable after construction and lazily caches its eigendecomposition, so the
//! matrix functions (`logm`, square roots, eigenvalue clipping) share a single
//! decomposition per value.
//!
//! Distances:
//!
//! | name            | value                                   |
//! |-----------------|-----------------------------------------|
//! | Frobenius       | `‖A − B‖_F²` (squared)                  |
//! | Euclidean       | `‖vech(A) − vech(B)‖₂`                  |
//! | log-Euclidean   | `‖logm(A) − logm(B)‖_F`                 |
//! | Procrustes      | `min_{R ∈ O(n)} ‖L_A − L_B R‖_F`        |
//!
//! where `L` is the symmetric PSD square root.

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-10;
const EIG_MAX_ITERS: usize = 10_000;

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted in descending order.
#[derive(Clone, Debug, PartialEq)]
pub struct EigPair {
    pub values: DVector<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

impl EigPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn min(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max(&self) -> f64 {
        self.values[0]
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mapped = self.values.map(f);
        reconstruct(&self.vectors, &mapped)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        reconstruct(&self.vectors, &self.values)
    }
}

fn reconstruct(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = vectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= values[j];
    }
    symmetrize(&(scaled * vectors.transpose()))
}

/// Dense symmetric positive (semi-)definite matrix.
pub struct SpdMatrix {
    data: DMatrix<f64>,
    eig: OnceLock<EigPair>,
}

impl Clone for SpdMatrix {
    fn clone(&self) -> Self {
        Self {
            data: self.data.clone(),
            eig: self.eig.clone(),
        }
    }
}

impl fmt::Debug for SpdMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpdMatrix")
            .field("dim", &self.dim())
            .field("data", &self.data)
            .finish()
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl SpdMatrix {
    /// Symmetrizes `m` and validates positive semi-definiteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let out = Self::from_symmetric(m)?;
        let eig = out.eig()?;
        let scale = eig.max().abs().max(f64::MIN_POSITIVE);
        if eig.min() < -PSD_TOL * scale {
            return Err(Error::NotPositiveSemidefinite {
                min_eig: eig.min(),
                max_eig: eig.max(),
            });
        }
        Ok(out)
    }

    /// Like [`SpdMatrix::new`] but additionally requires `λ_min > 0`.
    pub fn new_strict(m: DMatrix<f64>) -> Result<Self> {
        let out = Self::new(m)?;
        let min = out.min_eig()?;
        if min <= 0.0 {
            return Err(Error::NotStrictlyPositive { min_eig: min });
        }
        Ok(out)
    }

    /// Symmetrizes and checks the symmetry tolerance, without the spectral check.
    pub(crate) fn from_symmetric(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        let scale = m.amax().max(1.0);
        let asym = asymmetry(&m);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Ok(Self::from_sym_unchecked(symmetrize(&m)))
    }

    pub(crate) fn from_sym_unchecked(data: DMatrix<f64>) -> Self {
        Self {
            data,
            eig: OnceLock::new(),
        }
    }

    pub(crate) fn with_eig(data: DMatrix<f64>, eig: EigPair) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(eig);
        Self { data, eig: cell }
    }

    pub fn identity(n: usize) -> Self {
        let eig = EigPair {
            values: DVector::from_element(n, 1.0),
            vectors: DMatrix::identity(n, n),
        };
        Self::with_eig(DMatrix::identity(n, n), eig)
    }

    /// Diagonal matrix; entries must be nonnegative.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Cached eigendecomposition, computed on first use.
    pub fn eig(&self) -> Result<&EigPair> {
        if let Some(e) = self.eig.get() {
            return Ok(e);
        }
        let e = eig_sym(&self.data)?;
        // A racing thread may have filled the cell first; both results are identical.
        let _ = self.eig.set(e);
        Ok(self.eig.get().expect("cell filled above"))
    }

    pub fn min_eig(&self) -> Result<f64> {
        Ok(self.eig()?.min())
    }

    pub fn max_eig(&self) -> Result<f64> {
        Ok(self.eig()?.max())
    }

    pub fn is_strictly_pd(&self) -> bool {
        self.min_eig().map(|m| m > 0.0).unwrap_or(false)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {c} must be > 0")));
        }
        Ok(Self::from_sym_unchecked(&self.data * c))
    }

    pub fn trace(&self) -> f64 {
        self.data.trace()
    }

    /// Symmetric PSD square root `V diag(√λ₊) Vᵀ`.
    pub fn sqrt(&self) -> Result<DMatrix<f64>> {
        Ok(self.eig()?.map(|l| l.max(0.0).sqrt()))
    }

    pub(crate) fn check_same_dim(&self, other: &SpdMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute difference `|M_ij − M_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Half-vectorization: upper triangle including the diagonal, row by row.
pub fn vech(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Ties keep the backend order (stable sort), so the result is deterministic.
pub fn eig_sym(a: &DMatrix<f64>) -> Result<EigPair> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let n = a.nrows();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(symmetrize(a), f64::EPSILON, EIG_MAX_ITERS)
        .ok_or(Error::Decomposition("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(EigPair { values, vectors })
}

/// Matrix logarithm of a strictly positive definite matrix.
pub fn logm(a: &SpdMatrix) -> Result<DMatrix<f64>> {
    let eig = a.eig()?;
    if eig.min() <= 0.0 {
        return Err(Error::NotStrictlyPositive { min_eig: eig.min() });
    }
    Ok(eig.map(f64::ln))
}

/// Matrix exponential of a symmetric matrix.
pub fn expm(s: &DMatrix<f64>) -> Result<SpdMatrix> {
    let sym = SpdMatrix::from_symmetric(s.clone())?;
    let eig = sym.eig()?;
    let values = eig.values.map(f64::exp);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential overflow".into()));
    }
    let data = reconstruct(&eig.vectors, &values);
    Ok(SpdMatrix::with_eig(
        data,
        EigPair {
            values,
            vectors: eig.vectors.clone(),
        },
    ))
}

/// Squared Frobenius distance `‖A − B‖_F²`.
pub fn dist_frobenius(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_same_dim(b)?;
    Ok((a.matrix() - b.matrix()).norm_squared())
}

/// `ℓ₂` norm of the half-vectorized difference.
pub fn dist_euclidean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_same_dim(b)?;
    let diff = a.matrix() - b.matrix();
    Ok(vech(&diff).iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// `‖logm(A) − logm(B)‖_F`.
pub fn dist_log_euclidean(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_same_dim(b)?;
    Ok((logm(a)? - logm(b)?).norm())
}

/// Size-and-shape distance: `min_{R ∈ O(n)} ‖L_A − L_B R‖_F` with symmetric square roots.
pub fn dist_procrustes(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    a.check_same_dim(b)?;
    let la = a.sqrt()?;
    let lb = b.sqrt()?;
    let r = procrustes_rotation(&la, &lb)?;
    Ok((la - lb * r).norm())
}

/// Orthogonal `R` minimizing `‖L1 − L2 R‖_F`.
///
/// With `L2ᵀ L1 = P Σ Qᵀ` the optimum is `R = P Qᵀ`. Each singular pair is
/// sign-normalized so that the largest-magnitude entry of the left vector is
/// positive.
pub fn procrustes_rotation(l1: &DMatrix<f64>, l2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if l1.shape() != l2.shape() {
        return Err(Error::DimensionMismatch {
            expected: l1.nrows(),
            found: l2.nrows(),
        });
    }
    if !l1.is_square() {
        return Err(Error::NotSquare {
            rows: l1.nrows(),
            cols: l1.ncols(),
        });
    }
    let m = l2.transpose() * l1;
    let svd = m
        .try_svd(true, true, f64::EPSILON, EIG_MAX_ITERS)
        .ok_or(Error::Decomposition("SVD did not converge"))?;
    let mut u = svd.u.ok_or(Error::Decomposition("SVD missing U"))?;
    let mut v_t = svd.v_t.ok_or(Error::Decomposition("SVD missing Vᵀ"))?;
    fix_singular_signs(&mut u, &mut v_t);
    Ok(u * v_t)
}

fn fix_singular_signs(u: &mut DMatrix<f64>, v_t: &mut DMatrix<f64>) {
    for k in 0..u.ncols() {
        let col = u.column(k);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            u.column_mut(k).neg_mut();
            v_t.row_mut(k).neg_mut();
        }
    }
}

/// Nearest SPD matrix by eigenvalue clipping at `floor`.
///
/// Inputs whose smallest eigenvalue already reaches `floor` are returned unchanged.
pub fn project_to_spd(a: &DMatrix<f64>, floor: f64) -> Result<SpdMatrix> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter(format!("spd floor {floor} must be > 0")));
    }
    let sym = SpdMatrix::from_symmetric(a.clone())?;
    let eig = sym.eig()?;
    if eig.min() >= floor {
        return Ok(sym);
    }
    let values = eig.values.map(|l| l.max(floor));
    let data = reconstruct(&eig.vectors, &values);
    Ok(SpdMatrix::with_eig(
        data,
        EigPair {
            values,
            vectors: eig.vectors.clone(),
        },
    ))
}

/// Floor relative to the largest eigenvalue, `rel · λ_max`, with an absolute fallback.
pub fn relative_floor(a: &SpdMatrix, rel: f64) -> Result<f64> {
    let max = a.max_eig()?;
    Ok(if max > 0.0 { rel * max } else { rel })
}

/// Projects onto `λ ≥ rel·λ_max` only when needed; strictly SPD inputs above the floor pass through.
pub fn ensure_strict(a: &SpdMatrix, rel: f64) -> Result<SpdMatrix> {
    let floor = relative_floor(a, rel)?;
    if a.min_eig()? >= floor {
        Ok(a.clone())
    } else {
        project_to_spd(a.matrix(), floor)
    }
}
