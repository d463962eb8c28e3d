//! Quadratic-cost reference computations used to validate the linear-cost
//! recurrences: explicit `Wᵀ diag(ĥ) W` products, exact block
//! pre-activation Hessians and the im2col dense equivalent of conv layers.

use crate::error::{bail, Result};
use crate::loss::HeadSpec;
use crate::net::{ForwardCache, LayerKind, LayerSpec, Network};
use crate::tensor::Tensor;

/// Weight matrix without the bias column, `[rows, fan_in]`.
fn plain_weights(net: &Network, l: usize) -> Result<Tensor> {
    let spec = net.layer(l);
    let LayerKind::Dense { inputs, outputs } = spec.kind else {
        bail!(Config, "reference computations need dense layers; use dense_equivalent first");
    };
    let w = &net.weights()[l];
    let cols = spec.cols();
    let data = (0..outputs)
        .flat_map(|k| w.data()[k * cols..k * cols + inputs].iter().copied())
        .collect();
    Tensor::new(vec![outputs, inputs], data)
}

/// The diagonal recurrence evaluated by forming `Wᵀ diag(ĥ_a) W` explicitly
/// and reading off its diagonal. Returns `(hess_a, hess_w)`.
pub fn dense_hesscale(
    net: &Network,
    cache: &ForwardCache,
    grad_al: &Tensor,
    seed: &Tensor,
    second_order: bool,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let n = net.num_layers();
    let mut hess_a = vec![Tensor::zeros(&[1]); n];
    let mut grad_a = vec![Tensor::zeros(&[1]); n];
    hess_a[n - 1] = Tensor::vector(seed.data().to_vec());
    grad_a[n - 1] = Tensor::vector(grad_al.data().to_vec());
    for l in (1..n).rev() {
        let w = plain_weights(net, l)?;
        let (rows, cols) = w.matrix_dims()?;
        let mut dw = w.clone();
        for k in 0..rows {
            for i in 0..cols {
                dw.data_mut()[k * cols + i] *= hess_a[l].data()[k];
            }
        }
        let full = w.transpose()?.matmul(&dw)?;
        let back_g = w.transpose()?.matmul(&Tensor::new(vec![rows, 1], grad_a[l].data().to_vec())?)?;
        let act = net.layer(l - 1).activation;
        let mut h = vec![0.0; cols];
        let mut g = vec![0.0; cols];
        for i in 0..cols {
            let (s1, s2) = act.derivs(cache.pre[l - 1].data()[i]);
            g[i] = s1 * back_g.data()[i];
            h[i] = s1 * s1 * full.at(i, i) + if second_order { s2 * back_g.data()[i] } else { 0.0 };
        }
        hess_a[l - 1] = Tensor::vector(h);
        grad_a[l - 1] = Tensor::vector(g);
    }
    let hess_w = (0..n)
        .map(|l| {
            let spec = net.layer(l);
            let cols = spec.cols();
            let x = cache.post[l].data();
            let mut out = vec![0.0; spec.rows() * cols];
            for k in 0..spec.rows() {
                for j in 0..cols {
                    let xj = if j < spec.fan_in() { x[j] } else { 1.0 };
                    out[k * cols + j] = hess_a[l].data()[k] * xj * xj;
                }
            }
            Tensor::from_parts(vec![spec.rows(), cols], out)
        })
        .collect();
    Ok((hess_a, hess_w))
}

/// Exact Hessians `∇²_{a_l} L` for every layer by the block recurrence
/// `H_l = diag(σ') Wᵀ H_{l+1} W diag(σ') + diag(σ'' ⊙ Wᵀ g_{l+1})`.
pub fn exact_preact_hessians(net: &Network, cache: &ForwardCache, head: &HeadSpec) -> Result<Vec<Tensor>> {
    let n = net.num_layers();
    let out = head.evaluate(cache.last_pre())?;
    let grads = net.backward_grad(cache, &out.grad_al)?.grad_a;
    let mut hs = vec![Tensor::zeros(&[1, 1]); n];
    hs[n - 1] = head.full_hessian(cache.last_pre().data())?;
    for l in (1..n).rev() {
        let w = plain_weights(net, l)?;
        let (rows, cols) = w.matrix_dims()?;
        let mut inner = w.transpose()?.matmul(&hs[l].matmul(&w)?)?;
        let back_g = w.transpose()?.matmul(&Tensor::new(vec![rows, 1], grads[l].data().to_vec())?)?;
        let act = net.layer(l - 1).activation;
        let d: Vec<(f64, f64)> = cache.pre[l - 1].data().iter().map(|&a| act.derivs(a)).collect();
        for i in 0..cols {
            for j in 0..cols {
                inner.data_mut()[i * cols + j] *= d[i].0 * d[j].0;
            }
            inner.data_mut()[i * cols + i] += d[i].1 * back_g.data()[i];
        }
        hs[l - 1] = inner;
    }
    Ok(hs)
}

/// The same network with every conv layer replaced by its im2col-equivalent
/// dense layer (one output row per filter position, shared taps duplicated).
pub fn dense_equivalent(net: &Network) -> Result<Network> {
    let mut specs = Vec::with_capacity(net.num_layers());
    let mut weights = Vec::with_capacity(net.num_layers());
    let mut in_len: usize = net.input_shape().iter().product();
    for l in 0..net.num_layers() {
        let spec = *net.layer(l);
        let out_len: usize = net.output_shape(l).iter().product();
        match spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                let mut s = LayerSpec::dense(inputs, outputs, spec.activation);
                s.has_bias = spec.has_bias;
                specs.push(s);
                weights.push(net.weights()[l].clone());
            }
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                k1,
                k2,
            } => {
                let (h, wd) = conv_input_extent(net, l);
                let (p_out, q_out) = (h - k1 + 1, wd - k2 + 1);
                let cols = spec.cols();
                let dcols = in_len + usize::from(spec.has_bias);
                let w = net.weights()[l].data();
                let mut dense = vec![0.0; out_len * dcols];
                for o in 0..out_channels {
                    for p in 0..p_out {
                        for q in 0..q_out {
                            let row = (o * p_out + p) * q_out + q;
                            for c in 0..in_channels {
                                for m in 0..k1 {
                                    for n in 0..k2 {
                                        let col = (c * h + p + m) * wd + q + n;
                                        dense[row * dcols + col] = w[o * cols + (c * k1 + m) * k2 + n];
                                    }
                                }
                            }
                            if spec.has_bias {
                                dense[row * dcols + in_len] = w[o * cols + in_channels * k1 * k2];
                            }
                        }
                    }
                }
                let mut s = LayerSpec::dense(in_len, out_len, spec.activation);
                s.has_bias = spec.has_bias;
                specs.push(s);
                weights.push(Tensor::new(vec![out_len, dcols], dense)?);
            }
        }
        in_len = out_len;
    }
    Network::new(vec![net.input_shape().iter().product()], specs, weights)
}

fn conv_input_extent(net: &Network, l: usize) -> (usize, usize) {
    let shape = if l == 0 { net.input_shape() } else { net.output_shape(l - 1) };
    (shape[1], shape[2])
}

/// Folds weight-shaped quantities of [`dense_equivalent`] back onto the conv
/// weights by summing every duplicated tap.
pub fn fold_shared(net: &Network, dense: &[Tensor]) -> Result<Vec<Tensor>> {
    if dense.len() != net.num_layers() {
        bail!(Dimension, "{} tensors for {} layers", dense.len(), net.num_layers());
    }
    (0..net.num_layers())
        .map(|l| {
            let spec = net.layer(l);
            match spec.kind {
                LayerKind::Dense { .. } => Ok(dense[l].clone()),
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    k1,
                    k2,
                } => {
                    let (h, wd) = conv_input_extent(net, l);
                    let (p_out, q_out) = (h - k1 + 1, wd - k2 + 1);
                    let in_len = in_channels * h * wd;
                    let dcols = in_len + usize::from(spec.has_bias);
                    let cols = spec.cols();
                    if dense[l].len() != out_channels * p_out * q_out * dcols {
                        bail!(Dimension, "layer {l} tensor does not match the dense equivalent");
                    }
                    let d = dense[l].data();
                    let mut out = vec![0.0; spec.rows() * cols];
                    for o in 0..out_channels {
                        for p in 0..p_out {
                            for q in 0..q_out {
                                let row = (o * p_out + p) * q_out + q;
                                for c in 0..in_channels {
                                    for m in 0..k1 {
                                        for n in 0..k2 {
                                            let col = (c * h + p + m) * wd + q + n;
                                            out[o * cols + (c * k1 + m) * k2 + n] += d[row * dcols + col];
                                        }
                                    }
                                }
                                if spec.has_bias {
                                    out[o * cols + cols - 1] += d[row * dcols + in_len];
                                }
                            }
                        }
                    }
                    Ok(Tensor::from_parts(vec![spec.rows(), cols], out))
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv_net() -> Network {
        Network::kaiming(
            vec![2, 5, 4],
            vec![
                LayerSpec::conv2d(2, 3, 3, 2, Activation::Tanh),
                LayerSpec::conv2d(3, 2, 2, 2, Activation::Elu),
                LayerSpec::dense(2 * 2 * 2, 3, Activation::Identity),
            ],
            11,
        )
        .unwrap()
    }

    #[test]
    fn im2col_forward_and_gradients_agree() {
        let net = conv_net();
        let dense = dense_equivalent(&net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::vector((0..40).map(|_| rng.random_range(-1.0..1.0)).collect());
        let cc = net.forward(&x).unwrap();
        let dc = dense.forward(&x).unwrap();
        for (a, b) in cc.pre.iter().zip(&dc.pre) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()));
            }
        }
        let head = HeadSpec::SoftmaxCe { target: 1 };
        let g = head.evaluate(cc.last_pre()).unwrap().grad_al;
        let gc = net.backward_grad(&cc, &g).unwrap();
        let gd = dense.backward_grad(&dc, &g).unwrap();
        let folded = fold_shared(&net, &gd.grad_w).unwrap();
        for (a, b) in gc.grad_w.iter().zip(&folded) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn conv_needs_dense_equivalent_for_reference() {
        let net = conv_net();
        let cache = net.forward(&Tensor::zeros(&[40])).unwrap();
        let head = HeadSpec::SoftmaxCe { target: 0 };
        assert!(matches!(
            exact_preact_hessians(&net, &cache, &head),
            Err(crate::Error::Config(_))
        ));
    }
}
