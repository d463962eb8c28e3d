use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mc_estimate, DiagEstimate};
use crate::error::{bail, Result};
use crate::loss::HeadSpec;
use crate::net::Network;
use crate::par::Execution;
use crate::tensor::Tensor;

/// Hutchinson diagonal estimate `mean_s z ∘ (H z)` for a gradient function,
/// with Rademacher `z` and `H z ≈ (g(θ + δz) − g(θ − δz)) / 2δ`,
/// `δ = 1e-4 · (1 + ‖θ‖_∞)`.
pub fn hutchinson_of<G>(
    grad: G,
    theta: &[f64],
    shapes: &[Vec<usize>],
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<DiagEstimate>
where
    G: Fn(&[f64]) -> Vec<f64> + Sync + Send,
{
    if samples == 0 {
        bail!(Usage, "at least one Hutchinson sample is required");
    }
    let n: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if n != theta.len() {
        bail!(Dimension, "{} parameters for shapes totalling {n}", theta.len());
    }
    let delta = 1e-4 * (1.0 + theta.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    Ok(mc_estimate(format!("adahessian-mc{samples}"), shapes, samples, exec, |s, out| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        let z: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let shifted = |sign: f64| -> Vec<f64> {
            let t: Vec<f64> = theta.iter().zip(&z).map(|(t, zi)| t + sign * delta * zi).collect();
            grad(&t)
        };
        let (gp, gm) = (shifted(1.0), shifted(-1.0));
        out.extend(z.iter().zip(gp.iter().zip(&gm)).map(|(zi, (a, b))| zi * (a - b) / (2.0 * delta)));
    }))
}

/// [`hutchinson_of`] applied to the analytic network gradient.
pub fn hutchinson_diag(
    net: &Network,
    input: &Tensor,
    head: &HeadSpec,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<DiagEstimate> {
    let grad_at = |theta: &[f64]| -> Result<Vec<f64>> {
        let mut n = net.clone();
        n.set_flat_params(theta)?;
        let cache = n.forward(input)?;
        let out = head.evaluate(cache.last_pre())?;
        let st = n.backward_grad(&cache, &out.grad_al)?;
        Ok(st.grad_w.iter().flat_map(|t| t.data().iter().copied()).collect())
    };
    let theta = net.flat_params();
    grad_at(&theta)?;
    hutchinson_of(
        |t| grad_at(t).expect("validated at the base point"),
        &theta,
        &net.weight_shapes(),
        samples,
        seed,
        exec,
    )
}
