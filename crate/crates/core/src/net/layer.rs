//! Per-layer kernels shared by the first- and second-order backward passes.
//!
//! Weight layout: one row per output unit (dense) or filter (conv). A row
//! holds the receptive-field weights followed by the folded bias column when
//! the layer has a bias. Conv rows are ordered `(in_channel, k1, k2)`.

use std::fmt;

use super::Activation;

/// Geometry of a layer's weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Valid (no padding), stride-1 2-D convolution over `[C, H, W]` inputs.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        k1: usize,
        k2: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::Dense { inputs, outputs },
            activation,
            has_bias: true,
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        k1: usize,
        k2: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d {
                in_channels,
                out_channels,
                k1,
                k2,
            },
            activation,
            has_bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    /// Number of non-bias weights feeding one output row.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense { inputs, .. } => inputs,
            LayerKind::Conv2d {
                in_channels, k1, k2, ..
            } => in_channels * k1 * k2,
        }
    }

    pub fn rows(&self) -> usize {
        match self.kind {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { out_channels, .. } => out_channels,
        }
    }

    pub fn cols(&self) -> usize {
        self.fan_in() + usize::from(self.has_bias)
    }

    pub fn weight_shape(&self) -> [usize; 2] {
        [self.rows(), self.cols()]
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => write!(f, "dense({inputs}->{outputs}")?,
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                k1,
                k2,
            } => write!(f, "conv({in_channels}->{out_channels}, {k1}x{k2}")?,
        }
        write!(f, ", {}{})", self.activation, if self.has_bias { "" } else { ", no bias" })
    }
}

/// Resolved geometry of a layer inside a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl Geometry {
    /// `(C, H, W, P, Q)` for a conv layer: input channels/extents and output extents.
    fn conv_dims(&self) -> (usize, usize, usize, usize, usize, usize, usize) {
        match self.spec.kind {
            LayerKind::Conv2d {
                in_channels,
                k1,
                k2,
                ..
            } => {
                let (h, w) = (self.in_shape[1], self.in_shape[2]);
                (in_channels, h, w, k1, k2, h - k1 + 1, w - k2 + 1)
            }
            LayerKind::Dense { .. } => unreachable!("conv_dims on a dense layer"),
        }
    }

    /// Pre-activations `a = W [x; 1]`.
    pub fn forward(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let cols = self.spec.cols();
        let bias = self.spec.has_bias;
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => (0..outputs)
                .map(|k| {
                    let row = &w[k * cols..(k + 1) * cols];
                    let dot: f64 = row[..inputs].iter().zip(x).map(|(a, b)| a * b).sum();
                    if bias {
                        dot + row[inputs]
                    } else {
                        dot
                    }
                })
                .collect(),
            LayerKind::Conv2d { out_channels, .. } => {
                let (c_in, h, wd, k1, k2, p_out, q_out) = self.conv_dims();
                let fan = c_in * k1 * k2;
                let mut out = vec![0.0; out_channels * p_out * q_out];
                for o in 0..out_channels {
                    let row = &w[o * cols..(o + 1) * cols];
                    let b = if bias { row[fan] } else { 0.0 };
                    for p in 0..p_out {
                        for q in 0..q_out {
                            let mut acc = 0.0;
                            for c in 0..c_in {
                                for m in 0..k1 {
                                    let xrow = &x[(c * h + p + m) * wd + q..][..k2];
                                    let wrow = &row[(c * k1 + m) * k2..][..k2];
                                    acc += wrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                            out[(o * p_out + p) * q_out + q] = acc + b;
                        }
                    }
                }
                out
            }
        }
    }

    /// Transposed products over the layer's inputs:
    /// `back_g[i] = sum_k g[k] W[k,i]` and, when `hs` is given,
    /// `back_h[i] = sum_k hs[k] W[k,i]^2`. Returns the multiply-add count.
    pub fn backward_input(
        &self,
        w: &[f64],
        g: &[f64],
        hs: Option<&[f64]>,
        back_g: &mut [f64],
        back_h: &mut [f64],
    ) -> u64 {
        let cols = self.spec.cols();
        back_g.fill(0.0);
        back_h.fill(0.0);
        let mut flops = 0u64;
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                for k in 0..outputs {
                    let row = &w[k * cols..k * cols + inputs];
                    let gk = g[k];
                    match hs {
                        Some(hs) => {
                            let hk = hs[k];
                            for ((bg, bh), &wv) in back_g.iter_mut().zip(back_h.iter_mut()).zip(row) {
                                *bg += gk * wv;
                                *bh += hk * wv * wv;
                            }
                            flops += 2 * inputs as u64;
                        }
                        None => {
                            for (bg, &wv) in back_g.iter_mut().zip(row) {
                                *bg += gk * wv;
                            }
                            flops += inputs as u64;
                        }
                    }
                }
            }
            LayerKind::Conv2d { out_channels, .. } => {
                let (c_in, h, wd, k1, k2, p_out, q_out) = self.conv_dims();
                for o in 0..out_channels {
                    let row = &w[o * cols..(o + 1) * cols];
                    for p in 0..p_out {
                        for q in 0..q_out {
                            let idx = (o * p_out + p) * q_out + q;
                            let gk = g[idx];
                            let hk = hs.map(|hs| hs[idx]);
                            for c in 0..c_in {
                                for m in 0..k1 {
                                    let base = (c * h + p + m) * wd + q;
                                    let wrow = &row[(c * k1 + m) * k2..][..k2];
                                    for (n, &wv) in wrow.iter().enumerate() {
                                        back_g[base + n] += gk * wv;
                                        if let Some(hk) = hk {
                                            back_h[base + n] += hk * wv * wv;
                                        }
                                    }
                                }
                            }
                            flops += (c_in * k1 * k2) as u64 * if hk.is_some() { 2 } else { 1 };
                        }
                    }
                }
            }
        }
        flops
    }

    /// Weight-shaped product `out[k, j] = g[k] * x[j]^power` (power 1 or 2), with
    /// the bias column receiving `g[k]`; conv layers sum the product over all
    /// output positions sharing a weight. Returns the multiply-add count.
    pub fn weight_outer(&self, g: &[f64], x: &[f64], squared: bool, out: &mut [f64]) -> u64 {
        let cols = self.spec.cols();
        let bias = self.spec.has_bias;
        let xs: Vec<f64>;
        let x = if squared {
            xs = x.iter().map(|v| v * v).collect();
            &xs[..]
        } else {
            x
        };
        out.fill(0.0);
        match self.spec.kind {
            LayerKind::Dense { inputs, outputs } => {
                for k in 0..outputs {
                    let row = &mut out[k * cols..(k + 1) * cols];
                    let gk = g[k];
                    for (o, &xv) in row[..inputs].iter_mut().zip(x) {
                        *o = gk * xv;
                    }
                    if bias {
                        row[inputs] = gk;
                    }
                }
                (outputs * cols) as u64
            }
            LayerKind::Conv2d { out_channels, .. } => {
                let (c_in, h, wd, k1, k2, p_out, q_out) = self.conv_dims();
                let fan = c_in * k1 * k2;
                for o in 0..out_channels {
                    let row = &mut out[o * cols..(o + 1) * cols];
                    for p in 0..p_out {
                        for q in 0..q_out {
                            let gk = g[(o * p_out + p) * q_out + q];
                            for c in 0..c_in {
                                for m in 0..k1 {
                                    let xrow = &x[(c * h + p + m) * wd + q..][..k2];
                                    let orow = &mut row[(c * k1 + m) * k2..][..k2];
                                    for (ov, &xv) in orow.iter_mut().zip(xrow) {
                                        *ov += gk * xv;
                                    }
                                }
                            }
                            if bias {
                                row[fan] += gk;
                            }
                        }
                    }
                }
                (out_channels * p_out * q_out * cols) as u64
            }
        }
    }
}
