//! Reference and stochastic curvature estimators, plus comparison metrics.

mod fd;
mod ggn;
mod hutchinson;
pub mod reference;

pub use fd::{fd_diag_of, fd_hessian_diag, fd_preact_hessian, FD_EPS, FD_PARAM_BUDGET, PREACT_WIDTH_BUDGET};
pub use ggn::{exact_ggn_diag, ggn_mc_diag, GGN_OUTPUT_BUDGET};
pub use hutchinson::{hutchinson_diag, hutchinson_of};

use crate::error::{bail, Result};
use crate::net::{BackpropState, Network};
use crate::tensor::Tensor;

/// Per-layer Hessian-diagonal estimate shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagEstimate {
    pub layers: Vec<Tensor>,
    pub method: String,
    /// Number of Monte-Carlo samples, 0 for deterministic estimates.
    pub mc_samples: usize,
    /// Per-coordinate standard error of the mean for Monte-Carlo estimates.
    pub stderr: Option<Vec<Tensor>>,
}

impl DiagEstimate {
    pub fn deterministic(method: impl Into<String>, layers: Vec<Tensor>) -> Self {
        Self {
            layers,
            method: method.into(),
            mc_samples: 0,
            stderr: None,
        }
    }

    /// Checks that every layer matches the network's weight shapes.
    pub fn check_shapes(&self, net: &Network) -> Result<()> {
        if self.layers.len() != net.num_layers()
            || self.layers.iter().zip(net.weights()).any(|(a, w)| a.shape() != w.shape())
        {
            bail!(Dimension, "estimate `{}` does not match the network weight shapes", self.method);
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub(crate) fn from_flat(method: impl Into<String>, shapes: &[Vec<usize>], flat: &[f64]) -> Self {
        Self::deterministic(method, split_flat(shapes, flat))
    }
}

pub(crate) fn split_flat(shapes: &[Vec<usize>], flat: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_parts(s.clone(), flat[off..off + n].to_vec());
            off += n;
            t
        })
        .collect()
}

/// Monte-Carlo mean and standard error over `samples` draws of a flat
/// per-parameter vector. Sample `s` writes its draw into the buffer.
pub(crate) fn mc_estimate<F>(
    method: String,
    shapes: &[Vec<usize>],
    samples: usize,
    exec: crate::par::Execution,
    draw: F,
) -> DiagEstimate
where
    F: Fn(u64, &mut Vec<f64>) + Sync + Send,
{
    let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    let sums = crate::par::sum_vectors(exec, samples, 2 * n, |s, out| {
        draw(s as u64, out);
        let sq: Vec<f64> = out.iter().map(|v| v * v).collect();
        out.extend(sq);
    });
    let count = samples as f64;
    let mean: Vec<f64> = sums[..n].iter().map(|v| v / count).collect();
    let stderr: Vec<f64> = sums[n..]
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            if samples < 2 {
                return 0.0;
            }
            let var = ((sq - count * m * m) / (count - 1.0)).max(0.0);
            (var / count).sqrt()
        })
        .collect();
    DiagEstimate {
        layers: split_flat(shapes, &mean),
        method,
        mc_samples: samples,
        stderr: Some(split_flat(shapes, &stderr)),
    }
}

/// Hessian-diagonal buffers of a curvature pass as an estimate.
pub fn from_state(method: impl Into<String>, state: &BackpropState) -> Result<DiagEstimate> {
    match &state.hess_w {
        Some(h) => Ok(DiagEstimate::deterministic(method, h.clone())),
        None => bail!(State, "backprop state carries no curvature"),
    }
}

/// Squared gradients, the one-sample empirical Fisher diagonal.
pub fn grad_squared(state: &BackpropState) -> DiagEstimate {
    DiagEstimate::deterministic("g2", state.grad_w.iter().map(Tensor::square).collect())
}

/// Per-layer and total L¹ distances.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Error {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

pub fn l1_error(a: &DiagEstimate, b: &DiagEstimate) -> Result<L1Error> {
    if a.layers.len() != b.layers.len() {
        bail!(Dimension, "estimates have {} and {} layers", a.layers.len(), b.layers.len());
    }
    let per_layer = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| Ok(x.zip_map(y, |u, v| (u - v).abs())?.sum()))
        .collect::<Result<Vec<f64>>>()?;
    let total = per_layer.iter().sum();
    Ok(L1Error { per_layer, total })
}

/// Diagonal dominance `‖diag(m)‖_F / ‖m‖_F` of a square matrix.
pub fn rho(m: &Tensor) -> Result<f64> {
    let (r, c) = m.matrix_dims()?;
    if r != c {
        bail!(Dimension, "rho needs a square matrix, got {r}x{c}");
    }
    let total = m.frobenius();
    if total == 0.0 {
        bail!(Domain, "rho of an all-zero matrix is undefined");
    }
    let diag = (0..r).map(|i| m.at(i, i).powi(2)).sum::<f64>().sqrt();
    Ok(diag / total)
}
