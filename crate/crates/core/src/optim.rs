//! First- and second-order optimizers and trust-region step-size scaling.
//!
//! The adaptive kinds share one update:
//!
//! ```text
//! M ← β₁M + (1−β₁)F        V ← β₂V + (1−β₂)S²
//! M̂ = M/(1−β₁ᵗ)            V̂ = V/(1−β₂ᵗ)
//! U = α M̂ ⊘ (√V̂ + ε)       W ← W − ηU
//! ```
//!
//! with `S = F` for Adam and `S` the curvature diagonal otherwise. Without
//! scaling `η = 1`. With a trust-region radius `Δ`,
//! `h = Σ √V̂ ∘ U²` over all layers and `η = min(1, √(2Δ/h))`.

use std::fmt;
use std::str::FromStr;

use crate::curvature::CurvatureMethod;
use crate::error::{bail, Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    /// Adam-style update driven by the Hutchinson diagonal.
    AdaHessian,
    AdaHesScale,
    AdaHesScaleGn,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::Adam,
        OptimizerKind::AdaHessian,
        OptimizerKind::AdaHesScale,
        OptimizerKind::AdaHesScaleGn,
    ];

    pub fn needs_curvature(self) -> bool {
        matches!(
            self,
            OptimizerKind::AdaHessian | OptimizerKind::AdaHesScale | OptimizerKind::AdaHesScaleGn
        )
    }

    /// The curvature backward pass feeding this optimizer, if it is one of
    /// the HesScale family.
    pub fn curvature_method(self) -> Option<CurvatureMethod> {
        match self {
            OptimizerKind::AdaHesScale => Some(CurvatureMethod::HesScale),
            OptimizerKind::AdaHesScaleGn => Some(CurvatureMethod::HesScaleGn),
            _ => None,
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdaHessian => "adahessian",
            OptimizerKind::AdaHesScale => "adahesscale",
            OptimizerKind::AdaHesScaleGn => "adahesscale_gn",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sgd" => OptimizerKind::Sgd,
            "adam" => OptimizerKind::Adam,
            "adahessian" => OptimizerKind::AdaHessian,
            "adahesscale" => OptimizerKind::AdaHesScale,
            "adahesscale_gn" | "adahesscale-gn" => OptimizerKind::AdaHesScaleGn,
            other => bail!(Config, "unknown optimizer `{other}`"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Hyper {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

pub const DEFAULT_DELTA: f64 = 1e-8;

/// Proposed per-layer updates with the accumulated quadratic form and the
/// applied scaling factor.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBundle {
    pub updates: Vec<Tensor>,
    pub h: f64,
    pub eta: f64,
}

impl UpdateBundle {
    /// `η ∈ (0, 1]` and `η²h ≤ 2Δ + 1e-12` whenever `η < 1`.
    pub fn within_trust_region(&self, delta: f64) -> bool {
        self.eta > 0.0 && self.eta <= 1.0 && (self.eta == 1.0 || self.eta * self.eta * self.h <= 2.0 * delta + 1e-12)
    }
}

/// Optimizer moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    kind: OptimizerKind,
    hyper: Hyper,
    delta: Option<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Squared-curvature moment used only for the trust-region quadratic form
    /// of first-order kinds.
    curv_v: Vec<Tensor>,
    t: u64,
}

impl MomentState {
    /// `delta = Some(Δ)` enables trust-region scaling.
    pub fn new(kind: OptimizerKind, hyper: Hyper, shapes: &[Vec<usize>], delta: Option<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&hyper.beta1) || !(0.0..1.0).contains(&hyper.beta2) {
            bail!(Config, "decay rates must lie in [0, 1), got {} and {}", hyper.beta1, hyper.beta2);
        }
        if !(hyper.lr >= 0.0) || !hyper.lr.is_finite() {
            bail!(Config, "step size must be finite and nonnegative, got {}", hyper.lr);
        }
        if !(hyper.eps > 0.0) {
            bail!(Config, "epsilon must be positive, got {}", hyper.eps);
        }
        if let Some(d) = delta {
            if !(d > 0.0) {
                bail!(Config, "trust-region radius must be positive, got {d}");
            }
        }
        let zeros: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self {
            kind,
            hyper,
            delta,
            m: zeros.clone(),
            v: zeros.clone(),
            curv_v: if delta.is_some() && !kind.needs_curvature() { zeros } else { Vec::new() },
            t: 0,
        })
    }

    pub fn for_network(kind: OptimizerKind, hyper: Hyper, net: &Network, delta: Option<f64>) -> Result<Self> {
        Self::new(kind, hyper, &net.weight_shapes(), delta)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.v
    }

    /// True when this optimizer consumes a curvature diagonal each step.
    pub fn uses_curvature(&self) -> bool {
        self.kind.needs_curvature() || self.delta.is_some()
    }

    fn check(&self, what: &str, ts: &[Tensor]) -> Result<()> {
        if ts.len() != self.m.len() || ts.iter().zip(&self.m).any(|(a, b)| !a.same_shape(b)) {
            bail!(Dimension, "{what} do not match the optimizer state shapes");
        }
        Ok(())
    }

    /// Advances the moments by one step and returns the unscaled updates `U`
    /// together with the `V̂` used for the trust-region quadratic form.
    pub fn propose(&mut self, grads: &[Tensor], curv: Option<&[Tensor]>) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        self.check("gradients", grads)?;
        if self.uses_curvature() {
            match curv {
                Some(c) => self.check("curvature diagonals", c)?,
                None => bail!(Usage, "{} needs a curvature diagonal every step", self.describe()),
            }
        }
        self.t += 1;
        let Hyper { lr, beta1, beta2, eps } = self.hyper;
        if self.kind == OptimizerKind::Sgd && self.delta.is_none() {
            let updates = grads.iter().map(|g| g.map(|v| lr * v)).collect();
            return Ok((updates, Vec::new()));
        }
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut updates = Vec::with_capacity(grads.len());
        let mut v_hats = Vec::with_capacity(grads.len());
        for l in 0..grads.len() {
            let g = grads[l].data();
            let s: &[f64] = match self.kind {
                OptimizerKind::Sgd | OptimizerKind::Adam => g,
                _ => curv.expect("checked above")[l].data(),
            };
            let (m, v) = (self.m[l].data_mut(), self.v[l].data_mut());
            let mut u = vec![0.0; g.len()];
            let mut vh = vec![0.0; g.len()];
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * s[i] * s[i];
                let v_hat = v[i] / c2;
                u[i] = if self.kind == OptimizerKind::Sgd {
                    lr * g[i]
                } else {
                    lr * (m[i] / c1) / (v_hat.sqrt() + eps)
                };
                vh[i] = v_hat;
            }
            if !self.curv_v.is_empty() {
                let c = curv.expect("checked above")[l].data();
                let cv = self.curv_v[l].data_mut();
                for i in 0..g.len() {
                    cv[i] = beta2 * cv[i] + (1.0 - beta2) * c[i] * c[i];
                    vh[i] = cv[i] / c2;
                }
            }
            updates.push(Tensor::from_parts(grads[l].shape().to_vec(), u));
            v_hats.push(Tensor::from_parts(grads[l].shape().to_vec(), vh));
        }
        Ok((updates, v_hats))
    }

    fn describe(&self) -> String {
        match self.delta {
            Some(_) => format!("scaled {}", self.kind),
            None => self.kind.to_string(),
        }
    }

    /// One full step on raw parameter tensors: propose, optionally scale, apply.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], curv: Option<&[Tensor]>) -> Result<UpdateBundle> {
        self.check("parameters", params)?;
        let (updates, v_hat) = self.propose(grads, curv)?;
        let bundle = match self.delta {
            Some(delta) => trust_region_scale(updates, &v_hat, delta)?,
            None => UpdateBundle { updates, h: 0.0, eta: 1.0 },
        };
        apply(params, &bundle)?;
        Ok(bundle)
    }
}

/// `η = min(1, √(2Δ/h))` with `h = Σ_l Σ √V̂_l ∘ U_l²`; `h = 0` gives `η = 1`.
/// The returned updates are already multiplied by `η`.
pub fn trust_region_scale(mut updates: Vec<Tensor>, v_hat: &[Tensor], delta: f64) -> Result<UpdateBundle> {
    if !(delta > 0.0) {
        bail!(Config, "trust-region radius must be positive, got {delta}");
    }
    if updates.len() != v_hat.len() || updates.iter().zip(v_hat).any(|(u, v)| !u.same_shape(v)) {
        bail!(Dimension, "updates and second moments differ in shape");
    }
    let h: f64 = updates
        .iter()
        .zip(v_hat)
        .map(|(u, v)| u.data().iter().zip(v.data()).map(|(u, v)| v.sqrt() * u * u).sum::<f64>())
        .sum();
    if !h.is_finite() {
        bail!(Domain, "trust-region quadratic form is not finite ({h})");
    }
    let eta = if h <= 2.0 * delta { 1.0 } else { (2.0 * delta / h).sqrt() };
    if eta < 1.0 {
        for u in &mut updates {
            u.scale(eta);
        }
    }
    Ok(UpdateBundle { updates, h, eta })
}

/// `W ← W − U` for already-scaled updates.
pub fn apply(params: &mut [Tensor], bundle: &UpdateBundle) -> Result<()> {
    if params.len() != bundle.updates.len() {
        bail!(Dimension, "{} parameter tensors, {} updates", params.len(), bundle.updates.len());
    }
    for (p, u) in params.iter_mut().zip(&bundle.updates) {
        p.add_scaled(u, -1.0)?;
    }
    Ok(())
}

/// One optimizer step on a network's weights.
pub fn optimizer_step(
    net: &mut Network,
    state: &mut MomentState,
    grads: &[Tensor],
    curv: Option<&[Tensor]>,
) -> Result<UpdateBundle> {
    state.step(net.weights_mut(), grads, curv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v])]
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        for kind in OptimizerKind::ALL {
            let mut st = MomentState::new(kind, Hyper::with_lr(0.1), &[vec![2, 2]], None).unwrap();
            let mut p = vec![Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap()];
            let before = p.clone();
            let z = vec![Tensor::zeros(&[2, 2])];
            st.step(&mut p, &z, Some(&z)).unwrap();
            assert_eq!(p, before, "{kind}");
            assert_eq!(st.step_count(), 1);
        }
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        let mut st = MomentState::new(OptimizerKind::Adam, Hyper { eps: 1e-300, ..Hyper::with_lr(0.01) }, &[vec![1]], None)
            .unwrap();
        let mut p = scalar(1.0);
        st.step(&mut p, &scalar(-3.7), None).unwrap();
        assert!((p[0].data()[0] - 1.01).abs() < 1e-12);
    }

    #[test]
    fn first_adahesscale_step_matches_hand_value() {
        let mut st = MomentState::new(OptimizerKind::AdaHesScale, Hyper::with_lr(0.01), &[vec![1]], None).unwrap();
        let mut p = scalar(0.0);
        st.step(&mut p, &scalar(0.2), Some(&scalar(0.5))).unwrap();
        let want = -0.01 * 0.2 / (0.5 + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn sgd_is_plain_gradient_descent() {
        let mut st = MomentState::new(OptimizerKind::Sgd, Hyper::with_lr(0.5), &[vec![2]], None).unwrap();
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        st.step(&mut p, &[Tensor::vector(vec![0.5, -1.0])], None).unwrap();
        assert_eq!(p[0].data(), &[0.75, 2.5]);
    }

    #[test]
    fn missing_curvature_is_a_usage_error() {
        for kind in [OptimizerKind::AdaHessian, OptimizerKind::AdaHesScale, OptimizerKind::AdaHesScaleGn] {
            let mut st = MomentState::new(kind, Hyper::default(), &[vec![1]], None).unwrap();
            let mut p = scalar(0.0);
            assert!(matches!(st.step(&mut p, &scalar(1.0), None), Err(Error::Usage(_))));
        }
        let mut scaled = MomentState::new(OptimizerKind::Adam, Hyper::default(), &[vec![1]], Some(1e-8)).unwrap();
        assert!(matches!(scaled.step(&mut scalar(0.0), &scalar(1.0), None), Err(Error::Usage(_))));
    }

    #[test]
    fn bias_correction_matches_unrolled_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Hyper::default();
        let mut st = MomentState::new(OptimizerKind::AdaHesScale, h, &[vec![1]], None).unwrap();
        let mut p = scalar(0.0);
        let mut gs = Vec::new();
        for t in 1..=20 {
            let g = rng.random_range(-1.0..1.0);
            gs.push(g);
            st.step(&mut p, &scalar(g), Some(&scalar(1.0))).unwrap();
            let num: f64 = gs.iter().enumerate().map(|(i, g)| (1.0 - h.beta1) * h.beta1.powi((t - 1 - i) as i32) * g).sum();
            let m_hat = st.first_moment()[0].data()[0] / (1.0 - h.beta1.powi(t as i32));
            let unrolled = num / (1.0 - h.beta1.powi(t as i32));
            assert!((m_hat - unrolled).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn quadratic_converges() {
        let n = 8;
        let mut p = vec![Tensor::vector(vec![1.0 / (n as f64).sqrt(); n])];
        let mut st = MomentState::new(OptimizerKind::AdaHesScale, Hyper::with_lr(0.1), &[vec![n]], None).unwrap();
        let ones = vec![Tensor::full(&[n], 1.0)];
        let mut steps = 0;
        while p[0].data().iter().map(|v| v * v).sum::<f64>() >= 1e-6 {
            let g = p.clone();
            st.step(&mut p, &g, Some(&ones)).unwrap();
            steps += 1;
            assert!(steps <= 10_000);
        }
    }

    #[test]
    fn trust_region_examples() {
        let u = vec![Tensor::vector(vec![1e-4])];
        let small = trust_region_scale(u.clone(), &[Tensor::vector(vec![1.0])], 1e-8).unwrap();
        assert_eq!((small.eta, &small.updates), (1.0, &u));
        // h = 8Δ
        let b = trust_region_scale(vec![Tensor::vector(vec![2.0])], &[Tensor::vector(vec![4.0])], 1.0).unwrap();
        assert_eq!(b.h, 8.0);
        assert_eq!(b.eta, 0.5);
        let zero = trust_region_scale(vec![Tensor::zeros(&[3])], &[Tensor::zeros(&[3])], 1e-8).unwrap();
        assert_eq!(zero.eta, 1.0);
        let inf = trust_region_scale(u.clone(), &[Tensor::vector(vec![1.0])], f64::INFINITY).unwrap();
        assert_eq!(inf.updates, u);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = Hyper { beta1: 1.0, ..Hyper::default() };
        assert!(matches!(MomentState::new(OptimizerKind::Adam, bad, &[vec![1]], None), Err(Error::Config(_))));
        assert!(MomentState::new(OptimizerKind::Adam, Hyper::default(), &[vec![1]], Some(0.0)).is_err());
        assert!("adagrad".parse::<OptimizerKind>().is_err());
    }

    proptest! {
        #[test]
        fn scaled_update_respects_radius(
            u in proptest::collection::vec(-10.0f64..10.0, 1..20),
            v in proptest::collection::vec(0.0f64..100.0, 20),
        ) {
            let n = u.len();
            let b = trust_region_scale(vec![Tensor::vector(u)], &[Tensor::vector(v[..n].to_vec())], 1e-8).unwrap();
            let recomputed: f64 = b.updates[0].data().iter().zip(&v).map(|(u, v)| v.sqrt() * u * u).sum();
            prop_assert!(b.within_trust_region(1e-8));
            prop_assert!(b.eta == 1.0 || recomputed <= 2e-8 + 1e-12);
        }

        #[test]
        fn adaptive_updates_are_bounded(
            gs in proptest::collection::vec(-5.0f64..5.0, 1..30),
            cs in proptest::collection::vec(-5.0f64..5.0, 30),
        ) {
            let h = Hyper::with_lr(0.01);
            let mut st = MomentState::new(OptimizerKind::AdaHesScale, h, &[vec![1]], None).unwrap();
            let mut p = scalar(0.0);
            for (t, g) in gs.iter().enumerate() {
                let before = p[0].data()[0];
                st.step(&mut p, &scalar(*g), Some(&scalar(cs[t]))).unwrap();
                let m_hat = st.first_moment()[0].data()[0] / (1.0 - h.beta1.powi(t as i32 + 1));
                let step = (p[0].data()[0] - before).abs();
                prop_assert!(step <= h.lr * m_hat.abs() / h.eps * (1.0 + 1e-12));
                prop_assert!(step <= h.lr * 5.0 / h.eps);
                prop_assert!(st.second_moment()[0].data()[0] >= 0.0);
            }
        }
    }
}
