use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{mc_estimate, DiagEstimate};
use crate::error::{bail, Result};
use crate::loss::HeadSpec;
use crate::net::{ForwardCache, Network};
use crate::par::{map_indexed, Execution};
use crate::tensor::Tensor;

pub const GGN_OUTPUT_BUDGET: usize = 128;

fn flatten(ts: &[Tensor]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Exact generalized Gauss-Newton diagonal `diag(Jᵀ H_L J)`, with `J` the
/// Jacobian of the last pre-activations with respect to the weights and `H_L`
/// the full head Hessian.
pub fn exact_ggn_diag(net: &Network, cache: &ForwardCache, head: &HeadSpec, exec: Execution) -> Result<DiagEstimate> {
    let m = cache.last_pre().len();
    if m > GGN_OUTPUT_BUDGET {
        bail!(Resource, "output dimension {m} exceeds the budget of {GGN_OUTPUT_BUDGET}");
    }
    let h = head.full_hessian(cache.last_pre().data())?;
    let rows = (0..m)
        .map(|k| {
            let mut e = Tensor::zeros(cache.last_pre().shape());
            e.data_mut()[k] = 1.0;
            Ok(flatten(&net.backward_grad(cache, &e)?.grad_w))
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let diag = map_indexed(exec, net.num_params(), |i| {
        let j: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let mut acc = 0.0;
        for (k, jk) in j.iter().enumerate() {
            if *jk == 0.0 {
                continue;
            }
            let row = &h.data()[k * m..(k + 1) * m];
            acc += jk * row.iter().zip(&j).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    });
    Ok(DiagEstimate::from_flat("exact-ggn", &net.weight_shapes(), &diag))
}

/// Monte-Carlo GGN diagonal: squared gradients at targets sampled from the
/// model's predictive distribution. Sample `s` uses stream `s` of a ChaCha8
/// generator seeded with `seed`.
pub fn ggn_mc_diag(
    net: &Network,
    cache: &ForwardCache,
    head: &HeadSpec,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<DiagEstimate> {
    if !head.is_probabilistic() {
        bail!(Usage, "Monte-Carlo GGN needs a softmax or Gaussian head, got {head:?}");
    }
    if samples == 0 {
        bail!(Usage, "at least one Monte-Carlo sample is required");
    }
    head.evaluate(cache.last_pre())?;
    net.check_cache(cache)?;
    Ok(mc_estimate(format!("ggnmc-{samples}"), &net.weight_shapes(), samples, exec, |s, out| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        let (g, weight) = head.sampled_gradient(cache.last_pre(), &mut rng).expect("head validated");
        let st = net.backward_grad(cache, &g).expect("cache validated");
        out.extend(st.grad_w.iter().flat_map(|t| t.data().iter().map(|v| weight * v * v)));
    }))
}
