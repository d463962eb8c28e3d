//! Supervised training over an optimizer by step-size grid, with best step
//! size chosen on a validation split.

use std::collections::BTreeMap;

use hesscale::optim::Hyper;
use hesscale::par::map_indexed;
use hesscale::{Activation, Execution, HeadSpec, Network, OptimizerKind, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::learner::Learner;
use super::{input, read_act, read_arch, read_dataset, sub_seed, Outcome};
use crate::config::Config;
use crate::data::{BlobParams, Dataset};
use crate::error::{fail, Result};
use crate::records::TrialRecord;

pub const EXPERIMENT: &str = "train";
pub const STEP_SIZE_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0];

/// Loss and accuracy of a network over a dataset.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let (x, y) = input(ds, i);
        let a = net.forward(&x)?;
        let logits = a.last_pre().data();
        loss += HeadSpec::SoftmaxCe { target: y }.loss(logits)?;
        let arg = logits
            .iter()
            .enumerate()
            .fold(0, |b, (k, v)| if *v > logits[b] { k } else { b });
        correct += usize::from(arg == y);
    }
    let n = ds.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Per-epoch curves of one (optimizer, step size, seed) run. Index 0 is
/// before training.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub test_acc: Vec<f64>,
    /// Epoch at which the loss or weights became non-finite.
    pub diverged_at: Option<usize>,
}

impl RunTrace {
    pub fn final_train(&self) -> f64 {
        *self.train_loss.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub best_step_size: f64,
    /// Mean training loss over seeds before training.
    pub initial_loss: f64,
    /// Mean final training loss over seeds at the best step size.
    pub final_loss: f64,
    pub final_losses: Vec<f64>,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub optimizers: BTreeMap<OptimizerKind, OptimizerResult>,
}

#[derive(Debug, Clone, Copy)]
struct Run {
    kind: OptimizerKind,
    lr: f64,
    seed: u64,
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn train_one(run: Run, hidden: &[usize], act: Activation, epochs: usize, batch: usize, data: &Splits) -> Result<RunTrace> {
    let net = Network::mlp(data.train.dim, hidden, data.train.classes, act, Activation::Identity, run.seed)?;
    let mut learner = Learner::new(net, run.kind, Hyper::with_lr(run.lr), None)?;
    let mut trace = RunTrace {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        test_loss: Vec::new(),
        test_acc: Vec::new(),
        diverged_at: None,
    };
    let record = |net: &Network, trace: &mut RunTrace| -> Result<()> {
        trace.train_loss.push(evaluate(net, &data.train)?.0);
        trace.val_loss.push(evaluate(net, &data.val)?.0);
        let (tl, ta) = evaluate(net, &data.test)?;
        trace.test_loss.push(tl);
        trace.test_acc.push(ta);
        Ok(())
    };
    record(&learner.net, &mut trace)?;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0u64;
    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(run.seed, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let b: Vec<(Tensor, HeadSpec)> = chunk
                .iter()
                .map(|&i| {
                    let (x, y) = input(&data.train, i);
                    (x, HeadSpec::SoftmaxCe { target: y })
                })
                .collect();
            step += 1;
            match learner.update(&b, sub_seed(run.seed ^ 0xADA, step)) {
                Ok((loss, _)) if loss.is_finite() && learner.params_finite() => {}
                Ok(_) | Err(crate::BenchError::Core(hesscale::Error::Domain(_))) => {
                    trace.diverged_at = Some(epoch);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if trace.diverged_at.is_some() {
            for v in [&mut trace.train_loss, &mut trace.val_loss, &mut trace.test_loss, &mut trace.test_acc] {
                v.resize(epochs + 1, f64::NAN);
            }
            break;
        }
        record(&learner.net, &mut trace)?;
    }
    Ok(trace)
}

pub fn run_train(config: &Config) -> Result<Outcome<TrainSummary>> {
    let mut r = config.reader();
    let seed = r.value("seed", 0u64)?;
    let seeds = r.value("seeds", 5usize)?;
    let epochs = r.value("epochs", 20usize)?;
    let batch = r.value("batch", 32usize)?;
    let hidden = read_arch(&mut r, &[32, 32])?;
    let act = read_act(&mut r, Activation::Tanh)?;
    let kinds: Vec<OptimizerKind> = r.list("methods", &OptimizerKind::ALL)?;
    let grid: Vec<f64> = r.list("step_size", &STEP_SIZE_GRID)?;
    let n_train = r.value("n_train", 1000usize)?;
    let n_val = r.value("n_val", 500usize)?;
    let n_test = r.value("n_test", 500usize)?;
    let source = read_dataset(
        &mut r,
        BlobParams {
            classes: 10,
            dim: 20,
            n: 0,
            seed: 0,
            separation: 2.0,
            noise: 1.0,
        },
    )?;
    let resolved = r.finish()?;
    if seeds == 0 || batch == 0 || kinds.is_empty() || grid.is_empty() || n_train == 0 {
        fail!(Config, "seeds, batch, methods, step sizes and n_train must be non-empty");
    }
    let splits: Vec<Splits> = (0..seeds)
        .map(|s| {
            let all = source.load(seed + s as u64, n_train + n_val + n_test)?;
            Ok(Splits {
                train: all.slice(0, n_train),
                val: all.slice(n_train, n_train + n_val),
                test: all.slice(n_train + n_val, n_train + n_val + n_test),
            })
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for &kind in &kinds {
        for &lr in &grid {
            for s in 0..seeds {
                runs.push((Run { kind, lr, seed: seed + s as u64 }, s));
            }
        }
    }
    let traces = map_indexed(Execution::Parallel, runs.len(), |i| {
        let (run, s) = runs[i];
        train_one(run, &hidden, act, epochs, batch, &splits[s])
    })
    .into_iter()
    .collect::<Result<Vec<RunTrace>>>()?;

    let mut records = Vec::new();
    for ((run, _), t) in runs.iter().zip(&traces) {
        let tag = format!("{}@{}", run.kind, run.lr);
        for e in 0..t.train_loss.len() {
            if !t.train_loss[e].is_finite() {
                continue;
            }
            for (metric, v) in [
                ("train_loss", t.train_loss[e]),
                ("val_loss", t.val_loss[e]),
                ("test_loss", t.test_loss[e]),
                ("test_acc", t.test_acc[e]),
            ] {
                records.push(TrialRecord::new(EXPERIMENT, &tag, run.seed, e as u64, metric, v));
            }
        }
        if let Some(e) = t.diverged_at {
            records.push(TrialRecord::new(EXPERIMENT, &tag, run.seed, e as u64, "diverged", 1.0));
        }
    }

    let mut optimizers = BTreeMap::new();
    for &kind in &kinds {
        let mut best: Option<(f64, f64)> = None;
        for &lr in &grid {
            let vals: Vec<f64> = runs
                .iter()
                .zip(&traces)
                .filter(|((r, _), _)| r.kind == kind && r.lr == lr)
                .map(|(_, t)| *t.val_loss.last().unwrap())
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((lr, mean));
            }
        }
        let picked: Vec<&RunTrace> = runs
            .iter()
            .zip(&traces)
            .filter(|((r, _), _)| r.kind == kind && Some(r.lr) == best.map(|b| b.0))
            .map(|(_, t)| t)
            .collect();
        let diverged_runs = runs
            .iter()
            .zip(&traces)
            .filter(|((r, _), t)| r.kind == kind && t.diverged_at.is_some())
            .count();
        let n = seeds as f64;
        let result = match best {
            Some((lr, _)) => OptimizerResult {
                best_step_size: lr,
                initial_loss: picked.iter().map(|t| t.train_loss[0]).sum::<f64>() / n,
                final_loss: picked.iter().map(|t| t.final_train()).sum::<f64>() / n,
                final_losses: picked.iter().map(|t| t.final_train()).collect(),
                diverged_runs,
            },
            None => OptimizerResult {
                best_step_size: f64::NAN,
                initial_loss: f64::NAN,
                final_loss: f64::NAN,
                final_losses: Vec::new(),
                diverged_runs,
            },
        };
        let tag = kind.to_string();
        records.push(TrialRecord::new(EXPERIMENT, &tag, seed, epochs as u64, "best_step_size", result.best_step_size));
        records.push(TrialRecord::new(EXPERIMENT, &tag, seed, epochs as u64, "best_final_train_loss", result.final_loss));
        optimizers.insert(kind, result);
    }
    Ok(Outcome {
        resolved,
        records,
        summary: TrainSummary { optimizers },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(extra: &str) -> Config {
        Config::parse(&format!(
            "seeds=1\nepochs=2\nbatch=8\narch=mlp:4\nn_train=24\nn_val=8\nn_test=8\ndim=3\nclasses=3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn zero_step_size_sgd_keeps_loss_constant() {
        let out = run_train(&tiny("methods=sgd\nstep_size=0")).unwrap();
        let losses: Vec<f64> = out.records.iter().filter(|r| r.metric == "train_loss").map(|r| r.value).collect();
        assert_eq!(losses.len(), 3);
        assert!(losses.iter().all(|&l| l == losses[0]));
    }

    #[test]
    fn divergence_is_recorded_not_fatal() {
        let out = run_train(&tiny("methods=sgd\nstep_size=1e308")).unwrap();
        assert!(out.records.iter().any(|r| r.metric == "diverged"));
        assert!(out.summary.optimizers[&OptimizerKind::Sgd].best_step_size.is_nan());
    }
}
