//! Approximation quality of Hessian-diagonal estimators against the
//! finite-difference diagonal, measured along an SGD trajectory.

use std::collections::BTreeMap;

use hesscale::oracles::{
    exact_ggn_diag, fd_hessian_diag, from_state, ggn_mc_diag, grad_squared, hutchinson_diag, l1_error, FD_EPS,
};
use hesscale::par::map_indexed;
use hesscale::{curvature_backward, Activation, CurvatureMethod, DiagEstimate, Execution, HeadSpec, Network};

use super::{input, read_act, read_arch, read_dataset, sub_seed, Outcome};
use crate::config::Config;
use crate::data::BlobParams;
use crate::error::{fail, Result};
use crate::records::TrialRecord;

pub const EXPERIMENT: &str = "approx";
pub const DEFAULT_METHODS: [&str; 8] = [
    "hesscale",
    "hesscale-gn",
    "bl89",
    "g2",
    "adahessian-mc1",
    "adahessian-mc50",
    "ggnmc-1",
    "ggnmc-50",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Curvature(CurvatureMethod),
    GradSquared,
    Hutchinson(usize),
    GgnMc(usize),
}

impl Method {
    pub fn parse(tag: &str) -> Result<Self> {
        if let Some(n) = tag.strip_prefix("adahessian-mc") {
            return Ok(Method::Hutchinson(parse_count(tag, n)?));
        }
        if let Some(n) = tag.strip_prefix("ggnmc-") {
            return Ok(Method::GgnMc(parse_count(tag, n)?));
        }
        if tag == "g2" {
            return Ok(Method::GradSquared);
        }
        match tag.parse::<CurvatureMethod>() {
            Ok(m) => Ok(Method::Curvature(m)),
            Err(_) => fail!(Config, "unknown method tag {tag:?}"),
        }
    }

    /// Gauss-Newton-family methods are additionally compared with the exact
    /// GGN diagonal.
    pub fn is_gn_family(&self) -> bool {
        matches!(self, Method::Curvature(CurvatureMethod::HesScaleGn) | Method::GgnMc(_))
    }
}

fn parse_count(tag: &str, n: &str) -> Result<usize> {
    match n.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => fail!(Config, "bad sample count in method tag {tag:?}"),
    }
}

/// Per-method errors averaged over seeds, where each seed contributes its
/// mean over samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub l1: f64,
    pub l1_layers: Vec<f64>,
    pub l1_ggn: Option<f64>,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSummary {
    pub methods: BTreeMap<String, MethodSummary>,
    pub seeds: usize,
    pub samples: usize,
    pub wall_seconds: f64,
}

struct SeedResult {
    l1: BTreeMap<String, (f64, Vec<f64>, Option<f64>)>,
}

pub fn run_approx_quality(config: &Config) -> Result<Outcome<ApproxSummary>> {
    let mut r = config.reader();
    let seed = r.value("seed", 0u64)?;
    let seeds = r.value("seeds", 10usize)?;
    let samples = r.value("samples", 200usize)?;
    let hidden = read_arch(&mut r, &[32, 32, 32])?;
    let act = read_act(&mut r, Activation::Tanh)?;
    let lr = r.value("step_size", 0.01f64)?;
    let tags: Vec<String> = r.list("methods", &DEFAULT_METHODS.map(String::from))?;
    let blobs = BlobParams {
        classes: 10,
        dim: 64,
        n: 0,
        seed: 0,
        separation: 4.0,
        noise: 1.0,
    };
    let source = read_dataset(&mut r, blobs)?;
    let resolved = r.finish()?;
    let (dim, classes) = source.extent()?;
    if seeds == 0 || samples == 0 {
        fail!(Config, "seeds and samples must be positive");
    }
    let methods: Vec<(String, Method)> = tags
        .iter()
        .map(|t| Ok((t.clone(), Method::parse(t)?)))
        .collect::<Result<_>>()?;
    let need_ggn = methods.iter().any(|(_, m)| m.is_gn_family());

    let started = std::time::Instant::now();
    let per_seed = map_indexed(Execution::Parallel, seeds, |s| -> Result<SeedResult> {
        let run_seed = seed + s as u64;
        let data = source.load(run_seed, samples)?;
        let mut net = Network::mlp(dim, &hidden, classes, act, Activation::Identity, run_seed)?;
        let mut sums: BTreeMap<String, (f64, Vec<f64>, f64)> = BTreeMap::new();
        for i in 0..samples {
            let (x, y) = input(&data, i);
            let head = HeadSpec::SoftmaxCe { target: y };
            let cache = net.forward(&x)?;
            let exact = fd_hessian_diag(&net, &x, &head, FD_EPS, Execution::Sequential)?;
            let ggn = if need_ggn {
                Some(exact_ggn_diag(&net, &cache, &head, Execution::Sequential)?)
            } else {
                None
            };
            let (_, hs_state) = curvature_backward(&net, &cache, &head, CurvatureMethod::HesScale)?;
            let sample_seed = sub_seed(run_seed, i as u64);
            for (tag, m) in &methods {
                let est: DiagEstimate = match m {
                    Method::Curvature(CurvatureMethod::HesScale) => from_state(tag.clone(), &hs_state)?,
                    Method::Curvature(c) => from_state(tag.clone(), &curvature_backward(&net, &cache, &head, *c)?.1)?,
                    Method::GradSquared => grad_squared(&hs_state),
                    Method::Hutchinson(n) => hutchinson_diag(&net, &x, &head, *n, sample_seed, Execution::Sequential)?,
                    Method::GgnMc(n) => ggn_mc_diag(&net, &cache, &head, *n, sample_seed, Execution::Sequential)?,
                };
                let e = l1_error(&est, &exact)?;
                let entry = sums
                    .entry(tag.clone())
                    .or_insert_with(|| (0.0, vec![0.0; e.per_layer.len()], 0.0));
                entry.0 += e.total;
                for (a, b) in entry.1.iter_mut().zip(&e.per_layer) {
                    *a += b;
                }
                if let (true, Some(g)) = (m.is_gn_family(), &ggn) {
                    entry.2 += l1_error(&est, g)?.total;
                }
            }
            if !methods.iter().any(|(t, _)| t == "hesscale") {
                let e = l1_error(&from_state("hesscale", &hs_state)?, &exact)?;
                sums.entry("hesscale".into())
                    .or_insert_with(|| (0.0, vec![0.0; e.per_layer.len()], 0.0))
                    .0 += e.total;
            }
            let grads = &hs_state.grad_w;
            for (w, g) in net.weights_mut().iter_mut().zip(grads) {
                w.add_scaled(g, -lr)?;
            }
        }
        let n = samples as f64;
        Ok(SeedResult {
            l1: sums
                .into_iter()
                .map(|(k, (t, layers, g))| {
                    let gn = methods.iter().any(|(tag, m)| *tag == k && m.is_gn_family());
                    (k, (t / n, layers.iter().map(|v| v / n).collect(), gn.then_some(g / n)))
                })
                .collect(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<SeedResult>>>()?;
    let wall_seconds = started.elapsed().as_secs_f64();

    let mut records = Vec::new();
    let mut acc: BTreeMap<String, MethodSummary> = BTreeMap::new();
    let hs_mean = per_seed.iter().map(|s| s.l1["hesscale"].0).sum::<f64>() / seeds as f64;
    for (s, res) in per_seed.iter().enumerate() {
        let run_seed = seed + s as u64;
        let hs = res.l1["hesscale"].0;
        for (tag, _) in &methods {
            let (total, layers, ggn) = &res.l1[tag];
            records.push(TrialRecord::new(EXPERIMENT, tag, run_seed, 0, "l1", *total));
            for (l, v) in layers.iter().enumerate() {
                records.push(TrialRecord::new(EXPERIMENT, tag, run_seed, 0, &format!("l1_layer{l}"), *v));
            }
            if let Some(g) = ggn {
                records.push(TrialRecord::new(EXPERIMENT, tag, run_seed, 0, "l1_ggn", *g));
            }
            records.push(TrialRecord::new(EXPERIMENT, tag, run_seed, 0, "l1_normalized", total / hs));
            let e = acc.entry(tag.clone()).or_insert_with(|| MethodSummary {
                l1: 0.0,
                l1_layers: vec![0.0; layers.len()],
                l1_ggn: ggn.map(|_| 0.0),
                normalized: 0.0,
            });
            let c = 1.0 / seeds as f64;
            e.l1 += c * total;
            for (a, b) in e.l1_layers.iter_mut().zip(layers) {
                *a += c * b;
            }
            if let (Some(a), Some(b)) = (e.l1_ggn.as_mut(), ggn) {
                *a += c * b;
            }
        }
    }
    for m in acc.values_mut() {
        m.normalized = m.l1 / hs_mean;
    }
    Ok(Outcome {
        resolved,
        records,
        summary: ApproxSummary {
            methods: acc,
            seeds,
            samples,
            wall_seconds,
        },
    })
}
