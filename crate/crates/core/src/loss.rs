//! Loss heads.
//!
//! Every head works directly on the final-layer pre-activations and returns
//! the loss, its gradient and the exact diagonal of its Hessian with respect
//! to those pre-activations. All three are computed with vector operations
//! only, so their cost is linear in the output dimension.
//!
//! Gaussian heads read the pre-activation vector as `[μ; σ²]` (or `[μ; r]` with
//! `σ² = softplus(r)` for the softplus-parameterized variant), so the final
//! layer has twice as many outputs as the action or target dimension.
//!
//! Softplus composition, with `s = softplus(r)`, `s' = sigmoid(r)` and
//! `s'' = s'(1 - s')`:
//!
//! ```text
//! ∂L/∂r   = ∂L/∂s · s'
//! ∂²L/∂r² = ∂²L/∂s² · s'² + ∂L/∂s · s''
//! ```

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::net::softmax;
use crate::tensor::Tensor;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Loss value, gradient and exact Hessian diagonal with respect to the
/// last-layer pre-activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHeadOutput {
    pub loss: f64,
    pub grad_al: Tensor,
    pub exact_diag_al: Tensor,
}

/// Cross-entropy of `softmax(logits)` against a target class.
pub fn softmax_ce_head(logits: &Tensor, target_class: usize) -> Result<LossHeadOutput> {
    let z = logits.data();
    if z.len() < 2 {
        bail!(Dimension, "softmax head needs at least 2 logits, got {}", z.len());
    }
    if target_class >= z.len() {
        bail!(Index, "target class {target_class} for {} logits", z.len());
    }
    let q = softmax(z);
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut grad = q.clone();
    grad[target_class] -= 1.0;
    // 1 − q_i as the sum of the other probabilities stays accurate when q_i ≈ 1
    let n = q.len();
    let mut rest = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        rest[i] = acc;
        acc += q[i];
    }
    acc = 0.0;
    for i in (0..n).rev() {
        rest[i] += acc;
        acc += q[i];
    }
    let diag = q.iter().zip(&rest).map(|(p, r)| p * r).collect();
    Ok(LossHeadOutput {
        loss: lse - z[target_class],
        grad_al: Tensor::from_parts(logits.shape().to_vec(), grad),
        exact_diag_al: Tensor::from_parts(logits.shape().to_vec(), diag),
    })
}

fn check_gaussian(mu: &Tensor, sigma2: &Tensor, x: &Tensor) -> Result<()> {
    if mu.len() != sigma2.len() || mu.len() != x.len() {
        bail!(
            Dimension,
            "gaussian head lengths differ: mu {}, sigma2 {}, x {}",
            mu.len(),
            sigma2.len(),
            x.len()
        );
    }
    if let Some(s) = sigma2.data().iter().find(|&&s| s <= 0.0) {
        bail!(Domain, "variance must be positive, got {s}");
    }
    Ok(())
}

/// `scale · (−log N(x; μ, diag σ²))`. Gradient and diagonal are laid out as
/// `[∂/∂μ; ∂/∂σ²]`. With `scale = A` this is the policy-gradient loss.
pub fn gaussian_nll_head(mu: &Tensor, sigma2: &Tensor, x: &Tensor, scale: f64) -> Result<LossHeadOutput> {
    check_gaussian(mu, sigma2, x)?;
    let d = mu.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; 2 * d];
    let mut diag = vec![0.0; 2 * d];
    for i in 0..d {
        let (m, s, xv) = (mu.data()[i], sigma2.data()[i], x.data()[i]);
        let r = xv - m;
        loss += 0.5 * (r * r / s + s.ln() + LN_2PI);
        grad[i] = -scale * r / s;
        grad[d + i] = scale * 0.5 * (1.0 - r * r / s) / s;
        diag[i] = scale / s;
        diag[d + i] = -scale * (0.5 - r * r / s) / (s * s);
    }
    Ok(LossHeadOutput {
        loss: scale * loss,
        grad_al: Tensor::new(vec![2 * d], grad)?,
        exact_diag_al: Tensor::new(vec![2 * d], diag)?,
    })
}

pub fn softplus(r: f64) -> f64 {
    if r > 30.0 {
        r
    } else {
        r.exp().ln_1p()
    }
}

pub fn sigmoid(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

/// [`gaussian_nll_head`] with the variance parameterized as `σ² = softplus(raw)`;
/// derivatives are taken with respect to `[μ; raw]`.
pub fn gaussian_nll_softplus_head(mu: &Tensor, raw: &Tensor, x: &Tensor, scale: f64) -> Result<LossHeadOutput> {
    let sigma2 = raw.map(softplus);
    let mut out = gaussian_nll_head(mu, &sigma2, x, scale)?;
    let d = mu.len();
    let (g, h) = (out.grad_al.data_mut(), out.exact_diag_al.data_mut());
    for i in 0..d {
        let s1 = sigmoid(raw.data()[i]);
        let s2 = s1 * (1.0 - s1);
        h[d + i] = h[d + i] * s1 * s1 + g[d + i] * s2;
        g[d + i] *= s1;
    }
    Ok(out)
}

/// Squared-error regression `½‖pred − target‖²`; its Hessian is the identity.
pub fn value_loss_head(pred: &Tensor, target: &Tensor) -> Result<LossHeadOutput> {
    if pred.len() != target.len() {
        bail!(Dimension, "prediction has {} entries, target {}", pred.len(), target.len());
    }
    let grad: Vec<f64> = pred.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
    let loss = 0.5 * grad.iter().map(|r| r * r).sum::<f64>();
    Ok(LossHeadOutput {
        loss,
        grad_al: Tensor::from_parts(pred.shape().to_vec(), grad),
        exact_diag_al: Tensor::full(pred.shape(), 1.0),
    })
}

/// Gaussian action density `p(a; μ, σ²)` and its per-coordinate pieces.
fn gaussian_density(mu: &[f64], sigma2: &[f64], action: &[f64]) -> f64 {
    let log_p: f64 = mu
        .iter()
        .zip(sigma2)
        .zip(action)
        .map(|((m, s), a)| -0.5 * ((a - m) * (a - m) / s + s.ln() + LN_2PI))
        .sum();
    log_p.exp()
}

/// Unclipped PPO surrogate `−(p(a; μ, σ²) / p_old) · A`, differentiated with
/// respect to `[μ; σ²]`.
pub fn ppo_prob_head(
    mu: &Tensor,
    sigma2: &Tensor,
    action: &Tensor,
    advantage: f64,
    old_prob: f64,
) -> Result<LossHeadOutput> {
    check_gaussian(mu, sigma2, action)?;
    if old_prob <= 0.0 || !old_prob.is_finite() {
        bail!(Domain, "old action probability must be positive, got {old_prob}");
    }
    let (m, s, a) = (mu.data(), sigma2.data(), action.data());
    let d = m.len();
    let p = gaussian_density(m, s, a);
    let c = -advantage / old_prob;
    let mut grad = vec![0.0; 2 * d];
    let mut diag = vec![0.0; 2 * d];
    for i in 0..d {
        let r = a[i] - m[i];
        let gp_mu = p * r / s[i];
        let gp_s = p * (r * r / s[i] - 1.0) / (2.0 * s[i]);
        let h_mu = (r * gp_mu - p) / s[i];
        let h_s = (s[i] * gp_s - p) * (r * r / s[i] - 1.0) / (2.0 * s[i] * s[i]) - 0.5 * p * r * r / s[i].powi(3);
        grad[i] = c * gp_mu;
        grad[d + i] = c * gp_s;
        diag[i] = c * h_mu;
        diag[d + i] = c * h_s;
    }
    Ok(LossHeadOutput {
        loss: c * p,
        grad_al: Tensor::new(vec![2 * d], grad)?,
        exact_diag_al: Tensor::new(vec![2 * d], diag)?,
    })
}

/// A loss head together with its targets, applied to a pre-activation vector.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadSpec {
    SoftmaxCe { target: usize },
    /// Pre-activations `[μ; σ²]`.
    GaussianNll { x: Vec<f64>, scale: f64 },
    /// Pre-activations `[μ; raw]` with `σ² = softplus(raw)`.
    GaussianNllSoftplus { x: Vec<f64>, scale: f64 },
    Value { target: Vec<f64> },
    /// Pre-activations `[μ; σ²]`.
    PpoProb {
        action: Vec<f64>,
        advantage: f64,
        old_prob: f64,
    },
}

fn split_halves(a: &[f64], name: &str) -> Result<(Tensor, Tensor)> {
    if a.len() % 2 != 0 || a.is_empty() {
        bail!(Dimension, "{name} head needs an even number of outputs, got {}", a.len());
    }
    let d = a.len() / 2;
    Ok((Tensor::vector(a[..d].to_vec()), Tensor::vector(a[d..].to_vec())))
}

impl HeadSpec {
    pub fn evaluate(&self, a_l: &Tensor) -> Result<LossHeadOutput> {
        if !a_l.is_finite() {
            bail!(Domain, "head input has non-finite entries");
        }
        let out = match self {
            HeadSpec::SoftmaxCe { target } => softmax_ce_head(&Tensor::vector(a_l.data().to_vec()), *target),
            HeadSpec::GaussianNll { x, scale } => {
                let (mu, s2) = split_halves(a_l.data(), "gaussian")?;
                gaussian_nll_head(&mu, &s2, &Tensor::vector(x.clone()), *scale)
            }
            HeadSpec::GaussianNllSoftplus { x, scale } => {
                let (mu, raw) = split_halves(a_l.data(), "gaussian")?;
                gaussian_nll_softplus_head(&mu, &raw, &Tensor::vector(x.clone()), *scale)
            }
            HeadSpec::Value { target } => value_loss_head(&Tensor::vector(a_l.data().to_vec()), &Tensor::vector(target.clone())),
            HeadSpec::PpoProb {
                action,
                advantage,
                old_prob,
            } => {
                let (mu, s2) = split_halves(a_l.data(), "ppo")?;
                ppo_prob_head(&mu, &s2, &Tensor::vector(action.clone()), *advantage, *old_prob)
            }
        }?;
        Ok(LossHeadOutput {
            loss: out.loss,
            grad_al: Tensor::from_parts(a_l.shape().to_vec(), out.grad_al.into_data()),
            exact_diag_al: Tensor::from_parts(a_l.shape().to_vec(), out.exact_diag_al.into_data()),
        })
    }

    pub fn loss(&self, a_l: &[f64]) -> Result<f64> {
        Ok(self.evaluate(&Tensor::vector(a_l.to_vec()))?.loss)
    }

    /// Full Hessian of the loss with respect to the pre-activations (`n × n`).
    pub fn full_hessian(&self, a_l: &[f64]) -> Result<Tensor> {
        let n = a_l.len();
        let mut h = vec![0.0; n * n];
        match self {
            HeadSpec::SoftmaxCe { .. } => {
                let q = softmax(a_l);
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = if i == j { q[i] } else { 0.0 } - q[i] * q[j];
                    }
                }
            }
            HeadSpec::Value { .. } => {
                for i in 0..n {
                    h[i * n + i] = 1.0;
                }
            }
            HeadSpec::GaussianNll { x, scale } | HeadSpec::GaussianNllSoftplus { x, scale } => {
                let softplus_param = matches!(self, HeadSpec::GaussianNllSoftplus { .. });
                let out = self.evaluate(&Tensor::vector(a_l.to_vec()))?;
                let d = n / 2;
                for i in 0..d {
                    let (m, r) = (a_l[i], a_l[d + i]);
                    let s = if softplus_param { softplus(r) } else { r };
                    let ds = if softplus_param { sigmoid(r) } else { 1.0 };
                    let res = x[i] - m;
                    h[i * n + i] = scale / s;
                    let cross = scale * res / (s * s) * ds;
                    h[i * n + d + i] = cross;
                    h[(d + i) * n + i] = cross;
                    h[(d + i) * n + d + i] = out.exact_diag_al.data()[d + i];
                }
            }
            HeadSpec::PpoProb {
                action,
                advantage,
                old_prob,
            } => {
                // ∇²p = p (g gᵀ + ∇² log p), block-diagonal ∇² log p.
                let d = n / 2;
                let (m, s) = (&a_l[..d], &a_l[d..]);
                if s.iter().any(|&v| v <= 0.0) {
                    bail!(Domain, "variance must be positive");
                }
                let p = gaussian_density(m, s, action);
                let c = -advantage / old_prob;
                let mut g = vec![0.0; n];
                for i in 0..d {
                    let r = action[i] - m[i];
                    g[i] = r / s[i];
                    g[d + i] = (r * r / s[i] - 1.0) / (2.0 * s[i]);
                }
                for i in 0..n {
                    for j in 0..n {
                        h[i * n + j] = c * p * g[i] * g[j];
                    }
                }
                for i in 0..d {
                    let r = action[i] - m[i];
                    h[i * n + i] += c * p * (-1.0 / s[i]);
                    let cross = c * p * (-r / (s[i] * s[i]));
                    h[i * n + d + i] += cross;
                    h[(d + i) * n + i] += cross;
                    h[(d + i) * n + d + i] += c * p * (0.5 / (s[i] * s[i]) - r * r / s[i].powi(3));
                }
            }
        }
        Ok(Tensor::from_parts(vec![n, n], h))
    }

    /// Last-layer seed of the diagonal-only recurrence that treats the final
    /// nonlinearity as elementwise. For softmax cross-entropy this uses
    /// `σ'_i = q_i(1 − q_i)`, `σ''_i = q_i(1 − q_i)(1 − 2q_i)` with the loss
    /// derivatives in probability space; every other head already acts on
    /// its pre-activations without a nonlinearity, so the seed is exact.
    pub fn diagonal_only_seed(&self, a_l: &Tensor) -> Result<Tensor> {
        match self {
            HeadSpec::SoftmaxCe { target } => {
                let q = softmax(a_l.data());
                if *target >= q.len() {
                    bail!(Index, "target class {target} for {} logits", q.len());
                }
                let seed = q
                    .iter()
                    .enumerate()
                    .map(|(i, &qi)| {
                        let (dl_dq, d2l_dq2) = if i == *target { (-1.0 / qi, 1.0 / (qi * qi)) } else { (0.0, 0.0) };
                        let s1 = qi * (1.0 - qi);
                        let s2 = s1 * (1.0 - 2.0 * qi);
                        s1 * s1 * d2l_dq2 + s2 * dl_dq
                    })
                    .collect();
                Ok(Tensor::from_parts(a_l.shape().to_vec(), seed))
            }
            _ => Ok(self.evaluate(a_l)?.exact_diag_al),
        }
    }

    /// True for heads that are negative log-likelihoods of a sampleable
    /// predictive distribution.
    pub fn is_probabilistic(&self) -> bool {
        matches!(
            self,
            HeadSpec::SoftmaxCe { .. } | HeadSpec::GaussianNll { .. } | HeadSpec::GaussianNllSoftplus { .. }
        )
    }

    /// Gradient of the (unscaled) negative log-likelihood at a target drawn
    /// from the model's own predictive distribution, plus the weight that
    /// multiplies its square in a Fisher/GGN Monte-Carlo estimate.
    pub fn sampled_gradient<R: Rng + ?Sized>(&self, a_l: &Tensor, rng: &mut R) -> Result<(Tensor, f64)> {
        match self {
            HeadSpec::SoftmaxCe { .. } => {
                let q = softmax(a_l.data());
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut y = q.len() - 1;
                for (i, qi) in q.iter().enumerate() {
                    acc += qi;
                    if u < acc {
                        y = i;
                        break;
                    }
                }
                let grad = HeadSpec::SoftmaxCe { target: y }.evaluate(a_l)?.grad_al;
                Ok((grad, 1.0))
            }
            HeadSpec::GaussianNll { scale, .. } | HeadSpec::GaussianNllSoftplus { scale, .. } => {
                let d = a_l.len() / 2;
                let softplus_param = matches!(self, HeadSpec::GaussianNllSoftplus { .. });
                let a = a_l.data();
                let x = (0..d)
                    .map(|i| {
                        let s = if softplus_param { softplus(a[d + i]) } else { a[d + i] };
                        if s <= 0.0 {
                            bail!(Domain, "variance must be positive, got {s}");
                        }
                        Ok(Normal::new(a[i], s.sqrt()).unwrap().sample(rng))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let head = if softplus_param {
                    HeadSpec::GaussianNllSoftplus { x, scale: 1.0 }
                } else {
                    HeadSpec::GaussianNll { x, scale: 1.0 }
                };
                Ok((head.evaluate(a_l)?.grad_al, *scale))
            }
            _ => bail!(Usage, "Monte-Carlo GGN needs a probabilistic head"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_check(head: &HeadSpec, a: &[f64], grad_tol: f64, diag_tol: f64) {
        let out = head.evaluate(&Tensor::vector(a.to_vec())).unwrap();
        for i in 0..a.len() {
            let h1 = 1e-6 * (1.0 + a[i].abs());
            let h2 = 1e-4 * (1.0 + a[i].abs());
            let at = |d: f64| {
                let mut b = a.to_vec();
                b[i] += d;
                head.loss(&b).unwrap()
            };
            let fd1 = (at(h1) - at(-h1)) / (2.0 * h1);
            let fd2 = (at(h2) - 2.0 * at(0.0) + at(-h2)) / (h2 * h2);
            let g = out.grad_al.data()[i];
            let d = out.exact_diag_al.data()[i];
            assert!((g - fd1).abs() <= grad_tol * (fd1.abs() + 1e-3), "grad {i}: {g} vs {fd1}");
            assert!((d - fd2).abs() <= diag_tol * (fd2.abs() + 1e-2), "diag {i}: {d} vs {fd2}");
        }
    }

    #[test]
    fn softmax_symmetric_case() {
        let out = softmax_ce_head(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(out.grad_al.data(), &[-0.5, 0.5]);
        assert_eq!(out.exact_diag_al.data(), &[0.25, 0.25]);
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_vertex_diag_vanishes() {
        let out = softmax_ce_head(&Tensor::vector(vec![800.0, 0.0, -800.0]), 1).unwrap();
        assert!(out.exact_diag_al.data().iter().all(|&d| d.abs() < 1e-300));
    }

    #[test]
    fn softmax_bad_target() {
        assert!(matches!(
            softmax_ce_head(&Tensor::vector(vec![0.0, 1.0]), 2),
            Err(crate::Error::Index(_))
        ));
        assert!(softmax_ce_head(&Tensor::vector(vec![1.0]), 0).is_err());
    }

    #[test]
    fn gaussian_closed_forms() {
        let ones = Tensor::vector(vec![1.0; 3]);
        let mu = Tensor::vector(vec![0.2, -0.1, 0.4]);
        let out = gaussian_nll_head(&mu, &ones, &mu, 1.0).unwrap();
        assert_eq!(&out.exact_diag_al.data()[..3], &[1.0; 3]);
        // at x = μ the loss Hessian in σ² is −(0.5 − 0)/σ⁴ = −0.5
        assert_eq!(&out.exact_diag_al.data()[3..], &[-0.5; 3]);
        assert!(matches!(
            gaussian_nll_head(&mu, &Tensor::vector(vec![1.0, 0.0, 1.0]), &mu, 1.0),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn non_finite_head_input_is_a_domain_error() {
        let a = Tensor::from_parts(vec![2], vec![f64::INFINITY, 0.0]);
        assert!(matches!(HeadSpec::SoftmaxCe { target: 0 }.evaluate(&a), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn underflowing_variance_is_a_domain_error() {
        let mu = Tensor::vector(vec![0.0]);
        let x = Tensor::vector(vec![1.0]);
        let out = gaussian_nll_softplus_head(&mu, &Tensor::vector(vec![-740.0]), &x, 1.0);
        assert!(matches!(out, Err(crate::Error::Domain(_))));
    }

    #[test]
    fn value_head_cases() {
        let out = value_loss_head(&Tensor::vector(vec![3.0, -4.0]), &Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(out.loss, 12.5);
        assert_eq!(out.grad_al.data(), &[3.0, -4.0]);
        assert_eq!(out.exact_diag_al.data(), &[1.0, 1.0]);
        let same = value_loss_head(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![1.0])).unwrap();
        assert_eq!((same.loss, same.grad_al.data()[0]), (0.0, 0.0));
        assert!(value_loss_head(&Tensor::vector(vec![1.0]), &Tensor::vector(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn ppo_special_cases() {
        let mu = Tensor::vector(vec![0.1, 0.3]);
        let s2 = Tensor::vector(vec![0.5, 1.5]);
        let out = ppo_prob_head(&mu, &s2, &mu, 1.7, 0.2).unwrap();
        assert_eq!(&out.grad_al.data()[..2], &[0.0, 0.0]);
        let zero = ppo_prob_head(&mu, &s2, &Tensor::vector(vec![0.9, -0.2]), 0.0, 0.2).unwrap();
        assert!(zero.loss == 0.0 && zero.grad_al.max_abs() == 0.0 && zero.exact_diag_al.max_abs() == 0.0);
        assert!(matches!(ppo_prob_head(&mu, &s2, &mu, 1.0, 0.0), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn bl89_softmax_seed_symmetric() {
        let head = HeadSpec::SoftmaxCe { target: 0 };
        let seed = head.diagonal_only_seed(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        // closed form: q_t(1 − q_t) at the target, 0 elsewhere
        assert_eq!(seed.data(), &[0.25, 0.0]);
    }

    #[test]
    fn full_hessians_match_diagonals_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let heads = [
            (HeadSpec::SoftmaxCe { target: 2 }, vec![0.3, -0.5, 1.1, 0.2]),
            (HeadSpec::GaussianNll { x: vec![0.4, -0.7], scale: 1.3 }, vec![0.1, 0.2, 0.8, 1.4]),
            (HeadSpec::GaussianNllSoftplus { x: vec![0.4, -0.7], scale: -0.6 }, vec![0.1, 0.2, -0.3, 0.9]),
            (HeadSpec::Value { target: vec![1.0, 2.0] }, vec![0.5, -0.5]),
            (HeadSpec::PpoProb { action: vec![0.2, -0.4], advantage: 2.0, old_prob: 0.3 }, vec![0.0, 0.1, 0.7, 1.2]),
        ];
        for (head, a) in heads {
            let n = a.len();
            let full = head.full_hessian(&a).unwrap();
            let out = head.evaluate(&Tensor::vector(a.clone())).unwrap();
            for i in 0..n {
                assert!((full.at(i, i) - out.exact_diag_al.data()[i]).abs() < 1e-12, "{head:?} {i}");
                for j in 0..n {
                    // mixed second differences of the analytic gradient
                    let h = 1e-5;
                    let grad_at = |d: f64| {
                        let mut b = a.clone();
                        b[j] += d;
                        head.evaluate(&Tensor::vector(b)).unwrap().grad_al.data()[i]
                    };
                    let fd = (grad_at(h) - grad_at(-h)) / (2.0 * h);
                    assert!((full.at(i, j) - fd).abs() < 1e-6 * (1.0 + fd.abs()), "{head:?} ({i},{j})");
                }
            }
            let _ = rng.random::<f64>();
        }
    }

    #[test]
    fn sampled_gradient_rejects_deterministic_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = HeadSpec::Value { target: vec![0.0] };
        assert!(matches!(
            head.sampled_gradient(&Tensor::vector(vec![1.0]), &mut rng),
            Err(crate::Error::Usage(_))
        ));
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    // ≥100 seeded random inputs per head.
    #[test]
    fn all_heads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let logits = random_vec(&mut rng, 10, -3.0, 3.0);
            let target = rng.random_range(0..10);
            fd_check(&HeadSpec::SoftmaxCe { target }, &logits, 1e-5, 1e-4);

            let mut a = random_vec(&mut rng, 3, -1.0, 1.0);
            a.extend(random_vec(&mut rng, 3, 0.5, 2.0));
            let x = random_vec(&mut rng, 3, -1.5, 1.5);
            fd_check(&HeadSpec::GaussianNll { x: x.clone(), scale: 2.5 }, &a, 1e-5, 1e-4);
            fd_check(&HeadSpec::GaussianNllSoftplus { x: x.clone(), scale: -1.2 }, &a, 1e-5, 1e-4);
            fd_check(&HeadSpec::Value { target: x.clone() }, &a[..3], 1e-5, 1e-4);
            let adv = rng.random_range(-2.0..2.0);
            fd_check(&HeadSpec::PpoProb { action: x, advantage: adv, old_prob: 0.05 }, &a, 1e-5, 1e-4);
        }
    }

    proptest! {
        #[test]
        fn softmax_probabilities_are_normalized(z in proptest::collection::vec(-20.0f64..20.0, 2..12)) {
            let q = softmax(&z);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let out = softmax_ce_head(&Tensor::vector(z), 0).unwrap();
            for &d in out.exact_diag_al.data() {
                prop_assert!(d > 0.0 && d <= 0.25);
            }
        }
    }
}
