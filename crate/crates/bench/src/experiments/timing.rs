//! Per-update wall time of every optimizer over depth and output-width
//! sweeps.

use std::collections::BTreeMap;
use std::time::Instant;

use hesscale::optim::Hyper;
use hesscale::{Activation, HeadSpec, Network, OptimizerKind, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::learner::Learner;
use super::Outcome;
use crate::config::Config;
use crate::error::{fail, Result};
use crate::records::TrialRecord;

pub const DEPTH_EXPERIMENT: &str = "timing-depth";
pub const WIDTH_EXPERIMENT: &str = "timing-width";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Hidden-layer count (depth sweep) or output count (width sweep).
    pub x: usize,
    pub params: usize,
    pub micros: BTreeMap<OptimizerKind, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingSummary {
    pub depth: Vec<SweepPoint>,
    pub width: Vec<SweepPoint>,
}

impl TimingSummary {
    /// `t(2L) / t(L)` for consecutive depth points, as `(L, ratio)`.
    pub fn depth_ratios(&self, kind: OptimizerKind) -> Vec<(usize, f64)> {
        self.depth
            .windows(2)
            .map(|w| (w[0].x, w[1].micros[&kind] / w[0].micros[&kind]))
            .collect()
    }

    /// Mean over depth-sweep points of `t(kind) / t(base)`.
    pub fn mean_ratio(&self, kind: OptimizerKind, base: OptimizerKind) -> f64 {
        let r: Vec<f64> = self.depth.iter().map(|p| p.micros[&kind] / p.micros[&base]).collect();
        r.iter().sum::<f64>() / r.len() as f64
    }

    pub fn sgd_fastest_everywhere(&self) -> bool {
        self.depth.iter().chain(&self.width).all(|p| {
            let sgd = p.micros[&OptimizerKind::Sgd];
            p.micros.values().all(|&t| sgd <= t)
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Protocol {
    warmup: usize,
    updates: usize,
    seed: u64,
}

fn time_point(net: &Network, kinds: &[OptimizerKind], p: Protocol) -> Result<BTreeMap<OptimizerKind, f64>> {
    let inputs = net.input_shape()[0];
    let outputs = net.output_len();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let samples: Vec<(Tensor, HeadSpec)> = (0..p.warmup + p.updates)
        .map(|_| {
            let x = Tensor::vector((0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect());
            (x, HeadSpec::SoftmaxCe { target: rng.random_range(0..outputs) })
        })
        .collect();
    let mut out = BTreeMap::new();
    for &kind in kinds {
        let mut learner = Learner::new(net.clone(), kind, Hyper::with_lr(1e-4), None)?;
        for (i, s) in samples[..p.warmup].iter().enumerate() {
            learner.update(std::slice::from_ref(s), i as u64)?;
        }
        let start = Instant::now();
        for (i, s) in samples[p.warmup..].iter().enumerate() {
            learner.update(std::slice::from_ref(s), i as u64)?;
        }
        out.insert(kind, start.elapsed().as_secs_f64() * 1e6 / p.updates as f64);
    }
    Ok(out)
}

pub fn run_timing(config: &Config) -> Result<Outcome<TimingSummary>> {
    let mut r = config.reader();
    let seed = r.value("seed", 0u64)?;
    let kinds: Vec<OptimizerKind> = r.list("methods", &OptimizerKind::ALL)?;
    let depths: Vec<usize> = r.list("depths", &[1, 2, 4, 8, 16, 32])?;
    let outputs: Vec<usize> = r.list("outputs", &[16, 32, 64, 128, 256, 512])?;
    let width = r.value("width", 512usize)?;
    let inputs = r.value("inputs", 64usize)?;
    let depth_outputs = r.value("depth_outputs", 100usize)?;
    let warmup = r.value("warmup", 5usize)?;
    let updates = r.value("updates", 30usize)?;
    let resolved = r.finish()?;
    if updates == 0 || kinds.is_empty() {
        fail!(Config, "timing needs at least one method and one timed update");
    }
    let protocol = Protocol { warmup, updates, seed };
    let mut records = Vec::new();
    let mut sweep = |experiment: &str, x: usize, net: Network| -> Result<SweepPoint> {
        let micros = time_point(&net, &kinds, protocol)?;
        for (k, t) in &micros {
            records.push(
                TrialRecord::new(experiment, &k.to_string(), seed, x as u64, "update_micros", *t)
                    .with_micros(t.round() as u64),
            );
        }
        Ok(SweepPoint {
            x,
            params: net.num_params(),
            micros,
        })
    };
    let mut depth = Vec::new();
    for &d in &depths {
        let net = Network::mlp(inputs, &vec![width; d], depth_outputs, Activation::Tanh, Activation::Identity, seed)?;
        depth.push(sweep(DEPTH_EXPERIMENT, d, net)?);
    }
    let mut width_points = Vec::new();
    for &o in &outputs {
        let net = Network::mlp(inputs, &[width], o, Activation::Tanh, Activation::Identity, seed)?;
        width_points.push(sweep(WIDTH_EXPERIMENT, o, net)?);
    }
    Ok(Outcome {
        resolved,
        records,
        summary: TimingSummary {
            depth,
            width: width_points,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_sweep_produces_one_row_per_point_and_method() {
        let cfg = Config::parse("depths=1,2\noutputs=4\nwidth=16\ninputs=8\ndepth_outputs=4\nwarmup=1\nupdates=2").unwrap();
        let out = run_timing(&cfg).unwrap();
        assert_eq!(out.records.len(), 3 * 5);
        assert_eq!(out.summary.depth_ratios(OptimizerKind::Adam).len(), 1);
        assert!(out.summary.depth[1].params > out.summary.depth[0].params);
    }
}
