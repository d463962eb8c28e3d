use super::DiagEstimate;
use crate::error::{bail, Result};
use crate::loss::HeadSpec;
use crate::net::{LayerKind, Network};
use crate::par::{map_indexed, Execution};
use crate::tensor::Tensor;

/// Base step for second differences, `ε_mach^{1/4}`.
pub const FD_EPS: f64 = 1.220_703_125e-4;
pub const FD_PARAM_BUDGET: usize = 100_000;
pub const PREACT_WIDTH_BUDGET: usize = 512;

/// Second central differences `(f(θ+ε_i e_i) − 2f(θ) + f(θ−ε_i e_i)) / ε_i²`
/// with `ε_i = eps · (1 + |θ_i|)`, for an arbitrary scalar function.
pub fn fd_diag_of<F>(f: F, theta: &[f64], eps: f64, exec: Execution) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    if !(eps > 0.0) {
        bail!(Domain, "finite-difference step must be positive, got {eps}");
    }
    if theta.len() > FD_PARAM_BUDGET {
        bail!(Resource, "{} parameters exceed the budget of {FD_PARAM_BUDGET}", theta.len());
    }
    let f0 = f(theta);
    Ok(map_indexed(exec, theta.len(), |i| {
        let e = eps * (1.0 + theta[i].abs());
        let mut t = theta.to_vec();
        t[i] = theta[i] + e;
        let fp = f(&t);
        t[i] = theta[i] - e;
        let fm = f(&t);
        (fp - 2.0 * f0 + fm) / (e * e)
    }))
}

/// Exact Hessian diagonal by second central differences of the loss in every
/// parameter.
///
/// Perturbing `W_l[k, j]` only moves `a_l[k]` by `ε · h_{l-1, j}` (or `ε` for
/// the bias column), so each evaluation re-runs the network from layer `l`.
pub fn fd_hessian_diag(
    net: &Network,
    input: &Tensor,
    head: &HeadSpec,
    eps: f64,
    exec: Execution,
) -> Result<DiagEstimate> {
    if !(eps > 0.0) {
        bail!(Domain, "finite-difference step must be positive, got {eps}");
    }
    let n = net.num_params();
    if n > FD_PARAM_BUDGET {
        bail!(Resource, "{n} parameters exceed the budget of {FD_PARAM_BUDGET}");
    }
    let cache = net.forward(input)?;
    let l0 = head.loss(cache.last_pre().data())?;
    let mut index = Vec::with_capacity(n);
    for (l, w) in net.weights().iter().enumerate() {
        for i in 0..w.len() {
            index.push((l, i));
        }
    }
    let values = map_indexed(exec, n, |p| -> Result<f64> {
        let (l, i) = index[p];
        let spec = net.layer(l);
        let theta = net.weights()[l].data()[i];
        let e = eps * (1.0 + theta.abs());
        let eval = |delta: f64| -> Result<f64> {
            match spec.kind {
                LayerKind::Dense { inputs, .. } => {
                    let cols = spec.cols();
                    let (k, j) = (i / cols, i % cols);
                    let x = if j < inputs { cache.post[l].data()[j] } else { 1.0 };
                    let mut a = cache.pre[l].data().to_vec();
                    a[k] += delta * x;
                    head.loss(&net.forward_from(l, &a)?)
                }
                LayerKind::Conv2d { .. } => {
                    let mut shifted = net.clone();
                    shifted.weights_mut()[l].data_mut()[i] = theta + delta;
                    let a = shifted.geometry(l).forward(shifted.weights()[l].data(), cache.post[l].data());
                    head.loss(&shifted.forward_from(l, &a)?)
                }
            }
        };
        Ok((eval(e)? - 2.0 * l0 + eval(-e)?) / (e * e))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    Ok(DiagEstimate::from_flat("fd-exact", &net.weight_shapes(), &values))
}

/// Full Hessian of the loss with respect to the pre-activations of `layer`,
/// by central differences of the analytic gradient `∂L/∂a_layer`. Column `j`
/// holds the response to perturbing `a_layer[j]`.
pub fn fd_preact_hessian(net: &Network, input: &Tensor, head: &HeadSpec, layer: usize) -> Result<Tensor> {
    if layer >= net.num_layers() {
        bail!(Index, "layer {layer} of a {}-layer network", net.num_layers());
    }
    let width: usize = net.output_shape(layer).iter().product();
    if width > PREACT_WIDTH_BUDGET {
        bail!(Resource, "layer width {width} exceeds the budget of {PREACT_WIDTH_BUDGET}");
    }
    let cache = net.forward(input)?;
    let base = &cache.pre[layer];
    let grad_at = |j: usize, delta: f64| -> Result<Vec<f64>> {
        let mut a = base.clone();
        a.data_mut()[j] += delta;
        let c = net.forward_cache_from(&cache, layer, a)?;
        let out = head.evaluate(c.last_pre())?;
        let st = net.backward_grad_to(&c, &out.grad_al, layer)?;
        Ok(st.grad_a[layer].data().to_vec())
    };
    let mut h = vec![0.0; width * width];
    for j in 0..width {
        let d = f64::EPSILON.cbrt() * (1.0 + base.data()[j].abs());
        let gp = grad_at(j, d)?;
        let gm = grad_at(j, -d)?;
        for i in 0..width {
            h[i * width + j] = (gp[i] - gm[i]) / (2.0 * d);
        }
    }
    Ok(Tensor::from_parts(vec![width, width], h))
}
