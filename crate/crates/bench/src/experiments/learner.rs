//! Mini-batch gradients, curvature and optimizer updates shared by the
//! training-style experiments.

use hesscale::oracles::{from_state, hutchinson_of};
use hesscale::optim::{Hyper, MomentState};
use hesscale::{curvature_backward, CurvatureMethod, Execution, HeadSpec, Network, OptimizerKind, Tensor, UpdateBundle};

use crate::error::Result;

/// What an optimizer consumes besides the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurvatureSource {
    None,
    Diag(CurvatureMethod),
    /// One-probe Hutchinson estimate of the batch-loss Hessian.
    Hutchinson,
}

impl CurvatureSource {
    /// Scaled first-order kinds take the HesScale diagonal for the
    /// trust-region quadratic form.
    pub fn for_kind(kind: OptimizerKind, scaled: bool) -> Self {
        match kind {
            OptimizerKind::AdaHessian => CurvatureSource::Hutchinson,
            k => match k.curvature_method() {
                Some(m) => CurvatureSource::Diag(m),
                None if scaled => CurvatureSource::Diag(CurvatureMethod::HesScale),
                None => CurvatureSource::None,
            },
        }
    }
}

/// Batch-mean loss, gradient and (optionally) curvature diagonal.
#[derive(Debug, Clone)]
pub struct BatchSignals {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub curv: Option<Vec<Tensor>>,
}

fn mean_into(acc: &mut Option<Vec<Tensor>>, add: &[Tensor], c: f64) -> Result<()> {
    match acc {
        Some(a) => {
            for (x, y) in a.iter_mut().zip(add) {
                x.add_scaled(y, c)?;
            }
        }
        None => {
            *acc = Some(
                add.iter()
                    .map(|t| {
                        let mut t = t.clone();
                        t.scale(c);
                        t
                    })
                    .collect(),
            )
        }
    }
    Ok(())
}

/// Batch-mean gradient of the loss only.
pub fn batch_gradient(net: &Network, batch: &[(Tensor, HeadSpec)]) -> Result<(f64, Vec<Tensor>)> {
    let c = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = None;
    for (x, head) in batch {
        let cache = net.forward(x)?;
        let out = head.evaluate(cache.last_pre())?;
        let st = net.backward_grad(&cache, &out.grad_al)?;
        loss += c * out.loss;
        mean_into(&mut grads, &st.grad_w, c)?;
    }
    Ok((loss, grads.unwrap_or_default()))
}

pub fn batch_signals(net: &Network, batch: &[(Tensor, HeadSpec)], source: CurvatureSource, seed: u64) -> Result<BatchSignals> {
    let c = 1.0 / batch.len() as f64;
    match source {
        CurvatureSource::None => {
            let (loss, grads) = batch_gradient(net, batch)?;
            Ok(BatchSignals { loss, grads, curv: None })
        }
        CurvatureSource::Diag(method) => {
            let mut loss = 0.0;
            let mut grads = None;
            let mut curv = None;
            for (x, head) in batch {
                let cache = net.forward(x)?;
                let (out, st) = curvature_backward(net, &cache, head, method)?;
                loss += c * out.loss;
                mean_into(&mut grads, &st.grad_w, c)?;
                mean_into(&mut curv, &from_state(method.to_string(), &st)?.layers, c)?;
            }
            Ok(BatchSignals {
                loss,
                grads: grads.unwrap_or_default(),
                curv,
            })
        }
        CurvatureSource::Hutchinson => {
            let (loss, grads) = batch_gradient(net, batch)?;
            let theta = net.flat_params();
            let shapes = net.weight_shapes();
            let grad_at = |t: &[f64]| -> Vec<f64> {
                let mut n = net.clone();
                n.set_flat_params(t).expect("length checked");
                match batch_gradient(&n, batch) {
                    Ok((_, g)) => g.iter().flat_map(|t| t.data().iter().copied()).collect(),
                    Err(_) => vec![f64::NAN; t.len()],
                }
            };
            let est = hutchinson_of(grad_at, &theta, &shapes, 1, seed, Execution::Sequential)?;
            Ok(BatchSignals {
                loss,
                grads,
                curv: Some(est.layers),
            })
        }
    }
}

/// A network with its optimizer state and curvature source.
#[derive(Debug, Clone)]
pub struct Learner {
    pub net: Network,
    pub state: MomentState,
    pub source: CurvatureSource,
}

impl Learner {
    pub fn new(net: Network, kind: OptimizerKind, hyper: Hyper, delta: Option<f64>) -> Result<Self> {
        let state = MomentState::for_network(kind, hyper, &net, delta)?;
        Ok(Learner {
            net,
            state,
            source: CurvatureSource::for_kind(kind, delta.is_some()),
        })
    }

    /// Computes batch signals and applies one optimizer step.
    pub fn update(&mut self, batch: &[(Tensor, HeadSpec)], seed: u64) -> Result<(f64, UpdateBundle)> {
        let s = batch_signals(&self.net, batch, self.source, seed)?;
        let bundle = self.state.step(self.net.weights_mut(), &s.grads, s.curv.as_deref())?;
        Ok((s.loss, bundle))
    }

    pub fn params_finite(&self) -> bool {
        self.net.weights().iter().all(Tensor::is_finite)
    }
}
