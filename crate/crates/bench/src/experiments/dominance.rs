//! Diagonal dominance of the pre-activation Hessians before and after
//! training, with a random-matrix baseline.

use hesscale::oracles::{fd_preact_hessian, rho};
use hesscale::optim::Hyper;
use hesscale::par::map_indexed;
use hesscale::{Activation, Execution, HeadSpec, Network, OptimizerKind, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::learner::Learner;
use super::{input, read_act, read_arch, read_dataset, sub_seed, Outcome};
use crate::config::Config;
use crate::data::BlobParams;
use crate::error::{fail, Result};
use crate::records::{mean_stderr, TrialRecord};

pub const EXPERIMENT: &str = "dominance";

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceSummary {
    /// Mean ρ per hidden layer at initialization.
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_stderr: f64,
    pub runs: usize,
}

/// Mean ρ of `draws` standard Gaussian `n × n` matrices, with its standard
/// error.
pub fn random_baseline(n: usize, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..draws)
        .map(|_| {
            let data = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            Ok(rho(&Tensor::new(vec![n, n], data)?)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_stderr(&values))
}

fn hidden_rhos(net: &Network, x: &Tensor, head: &HeadSpec, hidden: usize) -> Result<Vec<f64>> {
    (0..hidden)
        .map(|l| Ok(rho(&fd_preact_hessian(net, x, head, l)?)?))
        .collect()
}

pub fn run_diag_dominance(config: &Config) -> Result<Outcome<DominanceSummary>> {
    let mut r = config.reader();
    let seed = r.value("seed", 0u64)?;
    let runs = r.value("runs", 30usize)?;
    let hidden = read_arch(&mut r, &[128, 128, 128, 128])?;
    let act = read_act(&mut r, Activation::Tanh)?;
    let lr = r.value("step_size", 1e-3f64)?;
    let train_steps = r.value("train_steps", 300usize)?;
    let batch = r.value("batch", 32usize)?;
    let draws = r.value("baseline_draws", 300usize)?;
    let source = read_dataset(
        &mut r,
        BlobParams {
            classes: 10,
            dim: 64,
            n: 0,
            seed: 0,
            separation: 4.0,
            noise: 1.0,
        },
    )?;
    let resolved = r.finish()?;
    if runs == 0 || batch == 0 || hidden.is_empty() {
        fail!(Config, "runs, batch and the hidden layer count must be positive");
    }
    let (dim, classes) = source.extent()?;
    let width = *hidden.iter().max().unwrap();

    let per_run = map_indexed(Execution::Parallel, runs, |i| -> Result<(Vec<f64>, Vec<f64>)> {
        let run_seed = sub_seed(seed, i as u64);
        let data = source.load(run_seed, batch * train_steps.max(1) + 2)?;
        let net = Network::mlp(dim, &hidden, classes, act, Activation::Identity, run_seed)?;
        let (x0, y0) = input(&data, 0);
        let before = hidden_rhos(&net, &x0, &HeadSpec::SoftmaxCe { target: y0 }, hidden.len())?;
        let mut learner = Learner::new(net, OptimizerKind::Adam, Hyper::with_lr(lr), None)?;
        for s in 0..train_steps {
            let b: Vec<(Tensor, HeadSpec)> = (0..batch)
                .map(|k| {
                    let (x, y) = input(&data, 2 + s * batch + k);
                    (x, HeadSpec::SoftmaxCe { target: y })
                })
                .collect();
            learner.update(&b, s as u64)?;
        }
        let (x1, y1) = input(&data, 1);
        let after = hidden_rhos(&learner.net, &x1, &HeadSpec::SoftmaxCe { target: y1 }, hidden.len())?;
        Ok((before, after))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let n = hidden.len();
    let mut before = vec![0.0; n];
    let mut after = vec![0.0; n];
    for (i, (b, a)) in per_run.iter().enumerate() {
        for l in 0..n {
            records.push(TrialRecord::new(EXPERIMENT, "fd", i as u64, 0, &format!("rho_layer{l}"), b[l]));
            records.push(TrialRecord::new(EXPERIMENT, "fd", i as u64, train_steps as u64, &format!("rho_layer{l}"), a[l]));
            before[l] += b[l] / runs as f64;
            after[l] += a[l] / runs as f64;
        }
    }
    let (baseline_mean, baseline_stderr) = random_baseline(width, draws, sub_seed(seed, u64::MAX))?;
    records.push(TrialRecord::new(EXPERIMENT, "random", seed, 0, "rho_mean", baseline_mean));
    records.push(TrialRecord::new(EXPERIMENT, "random", seed, 0, "rho_stderr", baseline_stderr));
    Ok(Outcome {
        resolved,
        records,
        summary: DominanceSummary {
            before,
            after,
            baseline_mean,
            baseline_stderr,
            runs,
        },
    })
}
