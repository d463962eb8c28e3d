//! Diagonal Hessian backpropagation.
//!
//! All three variants share one backward traversal. Going from layer `l + 1`
//! down to layer `l`:
//!
//! ```text
//! ĥ_a[l]  = σ'(a_l)² · Σ_k ĥ_a[l+1]_k W²[k, ·]  +  σ''(a_l) · Σ_k g_a[l+1]_k W[k, ·]
//! ĥ_W[l]  = ĥ_a[l] ⊗ h²_{l-1}
//! ```
//!
//! HesScale seeds `ĥ_a[L]` with the exact head diagonal, HesScaleGN does the
//! same but drops the σ'' term, and BL89 keeps the σ'' term but seeds with
//! the diagonal-only value from [`HeadSpec::diagonal_only_seed`].
//!
//! Convolutions go through the same kernels: the backward products become
//! correlations of `ĥ_a` with `W²` and of `g_a` with `W`, and the weight
//! diagonal sums `ĥ_a · h²` over every output position sharing a filter tap.

use std::fmt;
use std::str::FromStr;

use crate::error::{bail, Error, Result};
use crate::loss::{HeadSpec, LossHeadOutput};
use crate::net::{BackpropState, ForwardCache, LayerKind, Network};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurvatureMethod {
    HesScale,
    HesScaleGn,
    Bl89,
}

impl fmt::Display for CurvatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurvatureMethod::HesScale => "hesscale",
            CurvatureMethod::HesScaleGn => "hesscale-gn",
            CurvatureMethod::Bl89 => "bl89",
        })
    }
}

impl FromStr for CurvatureMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "hesscale" => CurvatureMethod::HesScale,
            "hesscale-gn" | "hesscale_gn" => CurvatureMethod::HesScaleGn,
            "bl89" => CurvatureMethod::Bl89,
            other => bail!(Config, "unknown curvature method `{other}`"),
        })
    }
}

/// Multiply-add counter filled by the `*_counted` entry points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCounter {
    pub multiply_adds: u64,
}

fn check_head(net: &Network, cache: &ForwardCache, grad: &Tensor, seed: &Tensor) -> Result<()> {
    net.check_cache(cache)?;
    let n = cache.last_pre().len();
    if grad.len() != n || seed.len() != n {
        bail!(
            State,
            "head output has {} / {} entries, last layer has {n}",
            grad.len(),
            seed.len()
        );
    }
    Ok(())
}

/// Shared traversal. `second_order` switches the σ'' term.
fn propagate(
    net: &Network,
    cache: &ForwardCache,
    grad_al: &Tensor,
    seed: &Tensor,
    second_order: bool,
    flops: &mut FlopCounter,
) -> Result<BackpropState> {
    check_head(net, cache, grad_al, seed)?;
    let last = net.num_layers() - 1;
    let mut grad_a: Vec<Tensor> = cache.pre.iter().map(|a| Tensor::zeros(a.shape())).collect();
    let mut hess_a = grad_a.clone();
    let mut grad_w: Vec<Tensor> = net.weights().iter().map(|w| Tensor::zeros(w.shape())).collect();
    let mut hess_w = grad_w.clone();
    grad_a[last].data_mut().copy_from_slice(grad_al.data());
    hess_a[last].data_mut().copy_from_slice(seed.data());
    let mut back_g = Vec::new();
    let mut back_h = Vec::new();
    for l in (0..=last).rev() {
        let g = net.geometry(l);
        let x = cache.post[l].data();
        flops.multiply_adds += g.weight_outer(grad_a[l].data(), x, false, grad_w[l].data_mut());
        flops.multiply_adds += g.weight_outer(hess_a[l].data(), x, true, hess_w[l].data_mut());
        if l == 0 {
            break;
        }
        back_g.resize(x.len(), 0.0);
        back_h.resize(x.len(), 0.0);
        flops.multiply_adds += g.backward_input(
            net.weights()[l].data(),
            grad_a[l].data(),
            Some(hess_a[l].data()),
            &mut back_g,
            &mut back_h,
        );
        let act = net.layer(l - 1).activation;
        let (ga, ha) = (&mut grad_a[l - 1], &mut hess_a[l - 1]);
        for (i, &a) in cache.pre[l - 1].data().iter().enumerate() {
            let (s1, s2) = act.derivs(a);
            ga.data_mut()[i] = s1 * back_g[i];
            let mut h = s1 * s1 * back_h[i];
            if second_order && s2 != 0.0 {
                h += s2 * back_g[i];
            }
            ha.data_mut()[i] = h;
        }
        flops.multiply_adds += 3 * x.len() as u64;
    }
    Ok(BackpropState {
        grad_w,
        grad_a,
        hess_w: Some(hess_w),
        hess_a: Some(hess_a),
    })
}

/// HesScale: exact last-layer seed, full diagonal recurrence below it.
pub fn hesscale_backward(net: &Network, cache: &ForwardCache, head: &LossHeadOutput) -> Result<BackpropState> {
    propagate(net, cache, &head.grad_al, &head.exact_diag_al, true, &mut FlopCounter::default())
}

/// HesScale without the σ'' term (diagonal Gauss-Newton propagation).
pub fn hesscale_gn_backward(net: &Network, cache: &ForwardCache, head: &LossHeadOutput) -> Result<BackpropState> {
    propagate(net, cache, &head.grad_al, &head.exact_diag_al, false, &mut FlopCounter::default())
}

/// BL89: the HesScale recurrence seeded with the diagonal-only last-layer value.
pub fn bl89_backward(net: &Network, cache: &ForwardCache, head: &HeadSpec) -> Result<BackpropState> {
    let out = head.evaluate(cache.last_pre())?;
    let seed = head.diagonal_only_seed(cache.last_pre())?;
    propagate(net, cache, &out.grad_al, &seed, true, &mut FlopCounter::default())
}

/// HesScale for networks containing valid, stride-1 conv layers.
pub fn hesscale_conv_backward(net: &Network, cache: &ForwardCache, head: &LossHeadOutput) -> Result<BackpropState> {
    if !net.layers().any(|s| matches!(s.kind, LayerKind::Conv2d { .. })) {
        bail!(Config, "network has no conv layers");
    }
    hesscale_backward(net, cache, head)
}

/// Evaluates the head on the cached last pre-activations and runs `method`.
pub fn curvature_backward(
    net: &Network,
    cache: &ForwardCache,
    head: &HeadSpec,
    method: CurvatureMethod,
) -> Result<(LossHeadOutput, BackpropState)> {
    curvature_backward_counted(net, cache, head, method, &mut FlopCounter::default())
}

pub fn curvature_backward_counted(
    net: &Network,
    cache: &ForwardCache,
    head: &HeadSpec,
    method: CurvatureMethod,
    flops: &mut FlopCounter,
) -> Result<(LossHeadOutput, BackpropState)> {
    net.check_cache(cache)?;
    let out = head.evaluate(cache.last_pre())?;
    let state = match method {
        CurvatureMethod::HesScale => propagate(net, cache, &out.grad_al, &out.exact_diag_al, true, flops)?,
        CurvatureMethod::HesScaleGn => propagate(net, cache, &out.grad_al, &out.exact_diag_al, false, flops)?,
        CurvatureMethod::Bl89 => {
            let seed = head.diagonal_only_seed(cache.last_pre())?;
            propagate(net, cache, &out.grad_al, &seed, true, flops)?
        }
    };
    Ok((out, state))
}
