//! ReSPDNet: a regression network on the SPD manifold.
//!
//! A network is a sequence of BiMap layers `X ↦ W X Wᵀ` with semi-orthogonal
//! `W` (rows orthonormal), separated by ReEig layers `X ↦ U max(εI, Σ) Uᵀ`.
//! The last layer is always a BiMap. When a BiMap asks for more rows than its
//! input has, the input is first expanded to `blockdiag(X, I)`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::optim::StiefelParam;
use crate::spd::{self, EigPair, SpdMatrix};

/// Layer layout of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Dimension of the (block-diagonal) input matrix.
    pub input_dim: usize,
    /// Output dimension of each BiMap layer; the last entry is the forecast dimension.
    pub layer_dims: Vec<usize>,
    /// ReEig rectification threshold.
    pub eps_rectify: f64,
}

impl NetworkSpec {
    pub const DEFAULT_EPS: f64 = 1e-4;

    /// `BiMap(input→min(input,100)) → ReEig → BiMap(→n) → ReEig → BiMap(n→n)`.
    pub fn default_for(input_dim: usize, n: usize) -> Self {
        Self {
            input_dim,
            layer_dims: vec![input_dim.min(100), n, n],
            eps_rectify: Self::DEFAULT_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidParameter("input_dim must be positive".into()));
        }
        if self.layer_dims.is_empty() {
            return Err(Error::InvalidParameter("layer_dims must be nonempty".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidParameter("layer dims must be positive".into()));
        }
        if !(self.eps_rectify > 0.0) {
            return Err(Error::InvalidParameter("eps_rectify must be > 0".into()));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated nonempty")
    }

    /// `(rows, cols)` of every weight matrix, accounting for expansion.
    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_dim;
        self.layer_dims
            .iter()
            .map(|&d| {
                let cols = prev.max(d);
                prev = d;
                (d, cols)
            })
            .collect()
    }
}

/// A network specification with its trainable weights.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: Vec<StiefelParam>,
}

impl Network {
    /// Seeded initialization: standard normal matrices orthonormalized by QR.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = spec
            .weight_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let g = DMatrix::from_fn(cols, rows, |_, _| StandardNormal.sample(&mut rng));
                let q = crate::optim::orthonormal_columns(&g)?;
                Ok(StiefelParam::new(q.transpose()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { spec, weights })
    }

    /// Builds a network from explicit weights, checking shapes against the spec.
    pub fn from_weights(spec: NetworkSpec, weights: Vec<DMatrix<f64>>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.weight_shapes();
        if shapes.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.len(),
                found: weights.len(),
            });
        }
        for (&(r, c), w) in shapes.iter().zip(&weights) {
            if w.shape() != (r, c) {
                return Err(Error::InvalidParameter(format!(
                    "weight shape {:?} does not match layer shape ({r}, {c})",
                    w.shape()
                )));
            }
        }
        Ok(Self {
            spec,
            weights: weights.into_iter().map(StiefelParam::new).collect(),
        })
    }

    /// Largest `‖WWᵀ − I‖_F` over all layers.
    pub fn stiefel_defect(&self) -> f64 {
        self.weights
            .iter()
            .map(StiefelParam::defect)
            .fold(0.0, f64::max)
    }
}

/// Recorded state of one BiMap layer (and the ReEig that follows it, if any).
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// BiMap input after any expansion.
    pub input: DMatrix<f64>,
    /// Input dimension before expansion, when expansion happened.
    pub expanded_from: Option<usize>,
    /// `W X Wᵀ`.
    pub bimap_out: DMatrix<f64>,
    /// Eigendecomposition of `bimap_out` used by the following ReEig.
    pub reeig: Option<EigPair>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub output: SpdMatrix,
}

impl ForwardTrace {
    /// Every activation (BiMap outputs and ReEig outputs) in order.
    pub fn activations(&self, eps: f64) -> Vec<DMatrix<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(layer.bimap_out.clone());
            if let Some(eig) = &layer.reeig {
                out.push(eig.map(|l| l.max(eps)));
            }
        }
        out
    }
}

fn congruence(x: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    spd::symmetrize(&(w * x * w.transpose()))
}

/// `W X Wᵀ`.
pub fn bimap_forward(x: &SpdMatrix, w: &StiefelParam) -> Result<SpdMatrix> {
    if w.value.ncols() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: w.value.ncols(),
            found: x.dim(),
        });
    }
    Ok(SpdMatrix::from_sym_unchecked(congruence(x.matrix(), &w.value)))
}

fn expand_matrix(x: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    let d = x.nrows();
    let mut z = DMatrix::identity(dim, dim);
    z.view_mut((0, 0), (d, d)).copy_from(x);
    z
}

/// `Z = A + 𝕀 X 𝕀ᵀ`: `X` in the top-left block, ones on the remaining diagonal.
pub fn expand_input(x: &SpdMatrix, dim: usize) -> Result<SpdMatrix> {
    if dim < x.dim() {
        return Err(Error::InvalidParameter(format!(
            "cannot expand a {}x{} matrix to {dim}x{dim}",
            x.dim(),
            x.dim()
        )));
    }
    if dim == x.dim() {
        return Ok(x.clone());
    }
    Ok(SpdMatrix::from_sym_unchecked(expand_matrix(x.matrix(), dim)))
}

/// `U max(εI, Σ) Uᵀ`.
pub fn reeig_forward(x: &SpdMatrix, eps: f64) -> Result<SpdMatrix> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be > 0".into()));
    }
    let eig = x.eig()?;
    if eig.min() >= eps {
        return Ok(x.clone());
    }
    let values = eig.values.map(|l| l.max(eps));
    let rectified = EigPair {
        values,
        vectors: eig.vectors.clone(),
    };
    Ok(SpdMatrix::with_eig(rectified.reconstruct(), rectified))
}

/// Forward pass recording everything backpropagation needs.
pub fn forward(net: &Network, input: &SpdMatrix) -> Result<ForwardTrace> {
    if input.dim() != net.spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: net.spec.input_dim,
            found: input.dim(),
        });
    }
    let eps = net.spec.eps_rectify;
    let last = net.weights.len() - 1;
    let mut x = input.matrix().clone();
    let mut layers = Vec::with_capacity(net.weights.len());
    for (k, w) in net.weights.iter().enumerate() {
        let w = &w.value;
        let mut expanded_from = None;
        if w.ncols() > x.nrows() {
            expanded_from = Some(x.nrows());
            x = expand_matrix(&x, w.ncols());
        }
        if w.ncols() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: w.ncols(),
                found: x.nrows(),
            });
        }
        let y = congruence(&x, w);
        let (next, reeig) = if k < last {
            let eig = spd::eig_sym(&y)?;
            (eig.map(|l| l.max(eps)), Some(eig))
        } else {
            (DMatrix::zeros(0, 0), None)
        };
        layers.push(LayerTrace {
            input: std::mem::replace(&mut x, next),
            expanded_from,
            bimap_out: y,
            reeig,
        });
    }
    let out = layers.last().expect("at least one layer").bimap_out.clone();
    Ok(ForwardTrace {
        layers,
        output: SpdMatrix::from_sym_unchecked(out),
    })
}

/// Forward pass returning only the forecast.
pub fn predict(net: &Network, input: &SpdMatrix) -> Result<SpdMatrix> {
    Ok(forward(net, input)?.output)
}
