//! Feed-forward network engine: layer specs, weight storage, the forward
//! pass and first-order backpropagation.

mod activation;
pub mod format;
pub(crate) mod layer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use activation::{activation_derivs, softmax, Activation};
pub use layer::{LayerKind, LayerSpec};
pub(crate) use layer::Geometry;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

/// An ordered stack of layers together with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    geometry: Vec<Geometry>,
    weights: Vec<Tensor>,
}

/// Pre-activations `a_l` and activations `h_l` of one forward pass.
///
/// `post[0]` is the input and `post[l + 1] = σ(pre[l])` for layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub pre: Vec<Tensor>,
    pub post: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.post.last().expect("cache holds at least the input")
    }

    /// Pre-activations of the final layer, the quantity loss heads consume.
    pub fn last_pre(&self) -> &Tensor {
        self.pre.last().expect("cache holds at least one layer")
    }
}

/// Per-layer first- and second-order buffers of a backward pass.
///
/// `hess_w`/`hess_a` are `None` after a plain gradient pass and filled by
/// the curvature passes.
#[derive(Debug, Clone, PartialEq)]
pub struct BackpropState {
    pub grad_w: Vec<Tensor>,
    pub grad_a: Vec<Tensor>,
    pub hess_w: Option<Vec<Tensor>>,
    pub hess_a: Option<Vec<Tensor>>,
}

impl BackpropState {
    /// Adds `other` into `self`, used to accumulate per-sample buffers.
    pub fn accumulate(&mut self, other: &BackpropState) -> Result<()> {
        fn add(a: &mut [Tensor], b: &[Tensor]) -> Result<()> {
            for (x, y) in a.iter_mut().zip(b) {
                x.add_scaled(y, 1.0)?;
            }
            Ok(())
        }
        add(&mut self.grad_w, &other.grad_w)?;
        add(&mut self.grad_a, &other.grad_a)?;
        match (&mut self.hess_w, &other.hess_w) {
            (Some(a), Some(b)) => add(a, b)?,
            (None, None) => {}
            _ => bail!(State, "cannot accumulate states with and without curvature"),
        }
        match (&mut self.hess_a, &other.hess_a) {
            (Some(a), Some(b)) => add(a, b)?,
            (None, None) => {}
            _ => bail!(State, "cannot accumulate states with and without curvature"),
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        let all = self
            .grad_w
            .iter_mut()
            .chain(self.grad_a.iter_mut())
            .chain(self.hess_w.iter_mut().flatten())
            .chain(self.hess_a.iter_mut().flatten());
        for t in all {
            t.scale(c);
        }
    }
}

fn output_shape(spec: &LayerSpec, in_shape: &[usize]) -> Result<Vec<usize>> {
    let numel: usize = in_shape.iter().product();
    match spec.kind {
        LayerKind::Dense { inputs, outputs } => {
            if inputs == 0 || outputs == 0 {
                bail!(Config, "dense layer extents must be positive");
            }
            if numel != inputs {
                bail!(Dimension, "dense layer expects {inputs} inputs, previous output has {numel}");
            }
            Ok(vec![outputs])
        }
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            k1,
            k2,
        } => {
            if k1 == 0 || k2 == 0 || in_channels == 0 || out_channels == 0 {
                bail!(Config, "conv kernel and channel extents must be at least 1");
            }
            let [c, h, w] = in_shape[..] else {
                bail!(Dimension, "conv layer needs a [C, H, W] input, got {in_shape:?}");
            };
            if c != in_channels {
                bail!(Dimension, "conv layer expects {in_channels} channels, got {c}");
            }
            if h < k1 || w < k2 {
                bail!(Dimension, "kernel {k1}x{k2} larger than input {h}x{w}");
            }
            Ok(vec![out_channels, h - k1 + 1, w - k2 + 1])
        }
    }
}

impl Network {
    /// Builds a network from explicit weights. Each weight tensor must have
    /// shape `[rows, cols]` as reported by [`LayerSpec::weight_shape`].
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, weights: Vec<Tensor>) -> Result<Self> {
        if layers.is_empty() {
            bail!(Config, "a network needs at least one layer");
        }
        if weights.len() != layers.len() {
            bail!(Dimension, "{} layers but {} weight tensors", layers.len(), weights.len());
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            bail!(Dimension, "input extents must be positive, got {input_shape:?}");
        }
        let mut geometry = Vec::with_capacity(layers.len());
        let mut shape = input_shape.clone();
        for (l, (spec, w)) in layers.iter().zip(&weights).enumerate() {
            if spec.activation == Activation::Softmax && l + 1 != layers.len() {
                bail!(Config, "softmax is only allowed on the final layer (layer {l})");
            }
            let out = output_shape(spec, &shape)?;
            if w.shape() != spec.weight_shape() {
                bail!(
                    Dimension,
                    "layer {l} weight has shape {:?}, expected {:?}",
                    w.shape(),
                    spec.weight_shape()
                );
            }
            if !w.is_finite() {
                bail!(Domain, "layer {l} has non-finite weights");
            }
            geometry.push(Geometry {
                spec: *spec,
                in_shape: shape,
                out_shape: out.clone(),
            });
            shape = out;
        }
        Ok(Self {
            input_shape,
            geometry,
            weights,
        })
    }

    /// Kaiming fan-in initialization: every weight and bias drawn from
    /// `N(0, 2 / fan_in)` with a seeded generator.
    pub fn kaiming(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = layers
            .iter()
            .map(|spec| {
                let std = (2.0 / spec.fan_in().max(1) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let [r, c] = spec.weight_shape();
                Tensor::from_parts(vec![r, c], (0..r * c).map(|_| normal.sample(&mut rng)).collect())
            })
            .collect();
        Self::new(input_shape, layers, weights)
    }

    /// A multilayer perceptron `inputs -> hidden... -> outputs` with the same
    /// activation on every hidden layer and `last` on the output layer.
    pub fn mlp(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        act: Activation,
        last: Activation,
        seed: u64,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = inputs;
        for &h in hidden {
            layers.push(LayerSpec::dense(prev, h, act));
            prev = h;
        }
        layers.push(LayerSpec::dense(prev, outputs, last));
        Self::kaiming(vec![inputs], layers, seed)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_layers(&self) -> usize {
        self.geometry.len()
    }

    pub fn layer(&self, l: usize) -> &LayerSpec {
        &self.geometry[l].spec
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.geometry.iter().map(|g| &g.spec)
    }

    pub(crate) fn geometry(&self, l: usize) -> &Geometry {
        &self.geometry[l]
    }

    /// Shape of the pre-activation produced by layer `l`.
    pub fn output_shape(&self, l: usize) -> &[usize] {
        &self.geometry[l].out_shape
    }

    pub fn output_len(&self) -> usize {
        self.geometry.last().unwrap().out_shape.iter().product()
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    /// Mutable weight access. Shapes must be preserved.
    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.weights.iter().map(|w| w.shape().to_vec()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    /// Weights flattened layer by layer.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            bail!(Dimension, "expected {} parameters, got {}", self.num_params(), flat.len());
        }
        let mut off = 0;
        for w in &mut self.weights {
            let n = w.len();
            w.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        let numel: usize = self.input_shape.iter().product();
        if input.len() != numel {
            bail!(
                Dimension,
                "input has {} entries, network expects shape {:?}",
                input.len(),
                self.input_shape
            );
        }
        let input = input.clone().reshape(&self.input_shape)?;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post = Vec::with_capacity(self.num_layers() + 1);
        post.push(input);
        for l in 0..self.num_layers() {
            let (a, h) = self.layer_step(l, post[l].data());
            pre.push(a);
            post.push(h);
        }
        Ok(ForwardCache { pre, post })
    }

    fn layer_step(&self, l: usize, x: &[f64]) -> (Tensor, Tensor) {
        let g = &self.geometry[l];
        let a = g.forward(self.weights[l].data(), x);
        let h = g.spec.activation.apply(&a);
        (
            Tensor::from_parts(g.out_shape.clone(), a),
            Tensor::from_parts(g.out_shape.clone(), h),
        )
    }

    /// Re-runs the network from a replaced pre-activation at layer `l`,
    /// returning the final-layer pre-activations.
    pub fn forward_from(&self, l: usize, a_l: &[f64]) -> Result<Vec<f64>> {
        if a_l.len() != self.geometry[l].out_shape.iter().product::<usize>() {
            bail!(Dimension, "replacement pre-activation for layer {l} has wrong length");
        }
        let mut a = a_l.to_vec();
        for k in (l + 1)..self.num_layers() {
            let h = self.geometry[k - 1].spec.activation.apply(&a);
            a = self.geometry[k].forward(self.weights[k].data(), &h);
        }
        Ok(a)
    }

    /// Like [`Network::forward_from`] but keeps the tail cache: the returned
    /// cache has the original entries below layer `l` and recomputed ones from
    /// layer `l` upwards.
    pub fn forward_cache_from(&self, base: &ForwardCache, l: usize, a_l: Tensor) -> Result<ForwardCache> {
        if a_l.shape() != self.geometry[l].out_shape.as_slice() {
            bail!(Dimension, "replacement pre-activation for layer {l} has wrong shape");
        }
        let mut cache = ForwardCache {
            pre: base.pre[..l].to_vec(),
            post: base.post[..=l].to_vec(),
        };
        let h = Tensor::from_parts(a_l.shape().to_vec(), self.geometry[l].spec.activation.apply(a_l.data()));
        cache.pre.push(a_l);
        cache.post.push(h);
        for k in (l + 1)..self.num_layers() {
            let (a, h) = self.layer_step(k, cache.post[k].data());
            cache.pre.push(a);
            cache.post.push(h);
        }
        Ok(cache)
    }

    pub(crate) fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.pre.len() != self.num_layers() || cache.post.len() != self.num_layers() + 1 {
            bail!(
                State,
                "cache has {} layers, network has {}",
                cache.pre.len(),
                self.num_layers()
            );
        }
        for (l, g) in self.geometry.iter().enumerate() {
            if cache.pre[l].shape() != g.out_shape.as_slice() {
                bail!(State, "cache layer {l} does not match the network");
            }
        }
        Ok(())
    }

    /// First-order backpropagation from `∂L/∂a_L`.
    ///
    /// Fills `grad_w` and `grad_a` for every layer; the hessian buffers stay
    /// empty. The gradient is taken with respect to the final
    /// pre-activations, so the last layer's activation is not differentiated.
    pub fn backward_grad(&self, cache: &ForwardCache, grad_al: &Tensor) -> Result<BackpropState> {
        self.backward_grad_to(cache, grad_al, 0)
    }

    /// Gradient backpropagation stopping once layer `stop` has been filled.
    /// Layers below `stop` get zero buffers.
    pub fn backward_grad_to(&self, cache: &ForwardCache, grad_al: &Tensor, stop: usize) -> Result<BackpropState> {
        self.check_cache(cache)?;
        let last = self.num_layers() - 1;
        if grad_al.len() != cache.pre[last].len() {
            bail!(
                Dimension,
                "gradient has {} entries, last layer has {}",
                grad_al.len(),
                cache.pre[last].len()
            );
        }
        let mut grad_a: Vec<Tensor> = cache.pre.iter().map(|a| Tensor::zeros(a.shape())).collect();
        let mut grad_w: Vec<Tensor> = self.weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
        grad_a[last].data_mut().copy_from_slice(grad_al.data());
        let mut back = Vec::new();
        let mut unused = Vec::new();
        for l in (stop..=last).rev() {
            let g = &self.geometry[l];
            g.weight_outer(grad_a[l].data(), cache.post[l].data(), false, grad_w[l].data_mut());
            if l > stop {
                let n_in = cache.post[l].len();
                back.resize(n_in, 0.0);
                unused.resize(n_in, 0.0);
                g.backward_input(self.weights[l].data(), grad_a[l].data(), None, &mut back, &mut unused);
                let act = self.geometry[l - 1].spec.activation;
                for ((out, &b), &a) in grad_a[l - 1]
                    .data_mut()
                    .iter_mut()
                    .zip(&back)
                    .zip(cache.pre[l - 1].data())
                {
                    *out = act.derivs(a).0 * b;
                }
            }
        }
        Ok(BackpropState {
            grad_w,
            grad_a,
            hess_w: None,
            hess_a: None,
        })
    }
}
