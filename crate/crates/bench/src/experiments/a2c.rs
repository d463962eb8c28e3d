//! Advantage actor-critic on the toy reacher with a Gaussian policy
//! (`[μ; softplus⁻¹ σ²]` outputs) and a value critic.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use hesscale::loss::softplus;
use hesscale::optim::{Hyper, DEFAULT_DELTA};
use hesscale::par::map_indexed;
use hesscale::{Activation, Execution, HeadSpec, Network, OptimizerKind, Tensor, UpdateBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::learner::Learner;
use super::reacher::{random_policy_returns, reacher_step, ReacherState};
use super::{read_act, read_arch, sub_seed, Outcome};
use crate::config::Config;
use crate::error::{fail, BenchError, Result};
use crate::records::{mean_stderr, TrialRecord};

pub const EXPERIMENT: &str = "rl-a2c";
pub const STEP_SIZE_GRID: [f64; 4] = [1e-4, 1e-3, 1e-2, 1e-1];

/// An optimizer with or without trust-region step-size scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Variant {
    pub kind: OptimizerKind,
    pub scaled: bool,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scaled {
            write!(f, "scaled-{}", self.kind)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

impl FromStr for Variant {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let (scaled, rest) = match s.strip_prefix("scaled-") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let kind: OptimizerKind = rest.parse()?;
        if !matches!(kind, OptimizerKind::Adam | OptimizerKind::AdaHesScale) {
            fail!(Config, "rl-a2c supports adam and adahesscale, got {kind}");
        }
        Ok(Variant { kind, scaled })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A2cParams {
    pub steps: usize,
    pub rollout: usize,
    pub gamma: f64,
    pub action_scale: f64,
    pub delta: f64,
}

/// Result of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub returns: Vec<f64>,
    pub diverged_at: Option<usize>,
    /// Scaled updates checked against the trust-region bound, and failures.
    pub tr_checks: u64,
    pub tr_violations: u64,
    pub min_eta: f64,
}

impl RunResult {
    /// Returns of the last 10% of episodes (at least one).
    pub fn tail(&self) -> &[f64] {
        let k = self.returns.len().div_ceil(10).max(1).min(self.returns.len());
        &self.returns[self.returns.len() - k..]
    }
}

fn policy_sample(actor: &Network, obs: &Tensor, noise: [f64; 2]) -> Result<([f64; 2], Tensor)> {
    let out = actor.forward(obs)?;
    let a = out.last_pre().data();
    let action = [0, 1].map(|i| a[i] + softplus(a[2 + i]).sqrt() * noise[i]);
    Ok((action, out.last_pre().clone()))
}

fn value(critic: &Network, obs: &Tensor) -> Result<f64> {
    Ok(critic.forward(obs)?.last_pre().data()[0])
}

fn check_bundle(b: &UpdateBundle, delta: f64, res: &mut RunResult) {
    res.tr_checks += 1;
    res.min_eta = res.min_eta.min(b.eta);
    if !b.within_trust_region(delta) {
        res.tr_violations += 1;
    }
}

struct Transition {
    obs: Tensor,
    action: [f64; 2],
    reward: f64,
    next_obs: Tensor,
}

pub fn train_a2c(variant: Variant, lr: f64, seed: u64, hidden: &[usize], act: Activation, p: A2cParams) -> Result<RunResult> {
    let actor = Network::mlp(4, hidden, 4, act, Activation::Identity, sub_seed(seed, 1))?;
    let critic = Network::mlp(4, hidden, 1, act, Activation::Identity, sub_seed(seed, 2))?;
    let delta = variant.scaled.then_some(p.delta);
    let mut actor = Learner::new(actor, variant.kind, Hyper::with_lr(lr), delta)?;
    let mut critic = Learner::new(critic, variant.kind, Hyper::with_lr(lr), delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 3));
    let mut res = RunResult {
        returns: Vec::new(),
        diverged_at: None,
        tr_checks: 0,
        tr_violations: 0,
        min_eta: 1.0,
    };
    let mut state = ReacherState::random(&mut rng);
    let mut episode_return = 0.0;
    let mut buffer: Vec<Transition> = Vec::with_capacity(p.rollout);
    let obs_of = |s: &ReacherState| Tensor::vector(s.observation().to_vec());
    for t in 0..p.steps {
        let obs = obs_of(&state);
        let noise = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        let (action, _) = policy_sample(&actor.net, &obs, noise)?;
        let (next, reward) = reacher_step(&state, action.map(|a| a * p.action_scale));
        episode_return += reward;
        buffer.push(Transition {
            obs,
            action,
            reward,
            next_obs: obs_of(&next),
        });
        state = next;
        if state.done() {
            res.returns.push(episode_return);
            episode_return = 0.0;
            state = ReacherState::random(&mut rng);
        }
        if buffer.len() < p.rollout {
            continue;
        }
        let mut actor_batch = Vec::with_capacity(buffer.len());
        let mut critic_batch = Vec::with_capacity(buffer.len());
        for tr in buffer.drain(..) {
            let v = value(&critic.net, &tr.obs)?;
            let target = tr.reward + p.gamma * value(&critic.net, &tr.next_obs)?;
            let advantage = target - v;
            actor_batch.push((tr.obs.clone(), HeadSpec::GaussianNllSoftplus { x: tr.action.to_vec(), scale: advantage }));
            critic_batch.push((tr.obs, HeadSpec::Value { target: vec![target] }));
        }
        let step = sub_seed(seed, 10 + t as u64);
        let outcome = actor
            .update(&actor_batch, step)
            .and_then(|(la, ba)| critic.update(&critic_batch, step).map(|(lc, bc)| (la + lc, ba, bc)));
        match outcome {
            Ok((loss, ba, bc)) if loss.is_finite() && actor.params_finite() && critic.params_finite() => {
                if variant.scaled {
                    check_bundle(&ba, p.delta, &mut res);
                    check_bundle(&bc, p.delta, &mut res);
                }
            }
            Ok(_) | Err(BenchError::Core(hesscale::Error::Domain(_))) => {
                res.diverged_at = Some(t);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub variant: Variant,
    pub step_size: f64,
    /// Mean over seeds of the last-10% episode return; NaN when any seed
    /// diverged.
    pub final_return: f64,
    /// Pooled last-10% returns over seeds.
    pub tail_mean: f64,
    pub tail_stderr: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A2cSummary {
    pub points: Vec<GridPoint>,
    pub baseline_mean: f64,
    pub baseline_stderr: f64,
    pub tr_checks: u64,
    pub tr_violations: u64,
}

impl A2cSummary {
    pub fn point(&self, variant: Variant, step_size: f64) -> Option<&GridPoint> {
        self.points.iter().find(|p| p.variant == variant && p.step_size == step_size)
    }

    /// `max − min` of the final return over the grid; infinite if any grid
    /// point diverged.
    pub fn spread(&self, variant: Variant) -> f64 {
        let v: Vec<f64> = self.points.iter().filter(|p| p.variant == variant).map(|p| p.final_return).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return f64::INFINITY;
        }
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

pub fn run_a2c(config: &Config) -> Result<Outcome<A2cSummary>> {
    let mut r = config.reader();
    let seed = r.value("seed", 0u64)?;
    let seeds = r.value("seeds", 2usize)?;
    let variants: Vec<Variant> = r.list(
        "methods",
        &["adam", "adahesscale", "scaled-adam", "scaled-adahesscale"].map(|s| s.parse::<Variant>().unwrap()),
    )?;
    let grid: Vec<f64> = r.list("step_size", &STEP_SIZE_GRID)?;
    let hidden = read_arch(&mut r, &[64, 64])?;
    let act = read_act(&mut r, Activation::Tanh)?;
    let params = A2cParams {
        steps: r.value("steps", 50_000usize)?,
        rollout: r.value("rollout", 5usize)?,
        gamma: r.value("gamma", 0.99f64)?,
        action_scale: r.value("action_scale", 0.05f64)?,
        delta: r.value("delta", DEFAULT_DELTA)?,
    };
    let baseline_episodes = r.value("baseline_episodes", 100usize)?;
    let resolved = r.finish()?;
    if seeds == 0 || params.rollout == 0 || variants.is_empty() || grid.is_empty() {
        fail!(Config, "seeds, rollout, methods and step sizes must be non-empty");
    }
    if !(params.delta > 0.0) {
        fail!(Config, "trust-region radius must be positive");
    }

    let mut runs = Vec::new();
    for &v in &variants {
        for &lr in &grid {
            for s in 0..seeds {
                runs.push((v, lr, seed + s as u64));
            }
        }
    }
    let results = map_indexed(Execution::Parallel, runs.len(), |i| {
        let (v, lr, s) = runs[i];
        train_a2c(v, lr, s, &hidden, act, params)
    })
    .into_iter()
    .collect::<Result<Vec<RunResult>>>()?;

    let mut records = Vec::new();
    for ((v, lr, s), res) in runs.iter().zip(&results) {
        let tag = format!("{v}@{lr}");
        for (e, ret) in res.returns.iter().enumerate() {
            records.push(TrialRecord::new(EXPERIMENT, &tag, *s, e as u64, "return", *ret));
        }
        let end = res.returns.len() as u64;
        if let Some(t) = res.diverged_at {
            records.push(TrialRecord::new(EXPERIMENT, &tag, *s, t as u64, "diverged", 1.0));
        }
        if v.scaled {
            records.push(TrialRecord::new(EXPERIMENT, &tag, *s, end, "tr_checks", res.tr_checks as f64));
            records.push(TrialRecord::new(EXPERIMENT, &tag, *s, end, "tr_violations", res.tr_violations as f64));
            records.push(TrialRecord::new(EXPERIMENT, &tag, *s, end, "min_eta", res.min_eta));
        }
    }

    let mut points = Vec::new();
    let mut grouped: BTreeMap<(Variant, usize), Vec<&RunResult>> = BTreeMap::new();
    for ((v, lr, _), res) in runs.iter().zip(&results) {
        let gi = grid.iter().position(|g| g == lr).unwrap();
        grouped.entry((*v, gi)).or_default().push(res);
    }
    for ((variant, gi), rs) in grouped {
        let diverged = rs.iter().filter(|r| r.diverged_at.is_some()).count();
        let finals: Vec<f64> = rs
            .iter()
            .map(|r| {
                if r.diverged_at.is_some() || r.returns.is_empty() {
                    f64::NAN
                } else {
                    mean_stderr(r.tail()).0
                }
            })
            .collect();
        let pooled: Vec<f64> = rs.iter().flat_map(|r| r.tail().iter().copied()).collect();
        let (tail_mean, tail_stderr) = mean_stderr(&pooled);
        let point = GridPoint {
            variant,
            step_size: grid[gi],
            final_return: finals.iter().sum::<f64>() / finals.len() as f64,
            tail_mean,
            tail_stderr,
            diverged,
        };
        let tag = format!("{variant}@{}", grid[gi]);
        records.push(TrialRecord::new(EXPERIMENT, &tag, seed, params.steps as u64, "final_return", point.final_return));
        points.push(point);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, u64::MAX));
    let baseline = random_policy_returns(baseline_episodes, &mut rng);
    let (baseline_mean, baseline_stderr) = mean_stderr(&baseline);
    records.push(TrialRecord::new(EXPERIMENT, "random", seed, 0, "return_mean", baseline_mean));
    records.push(TrialRecord::new(EXPERIMENT, "random", seed, 0, "return_stderr", baseline_stderr));
    Ok(Outcome {
        resolved,
        records,
        summary: A2cSummary {
            points,
            baseline_mean,
            baseline_stderr,
            tr_checks: results.iter().map(|r| r.tr_checks).sum(),
            tr_violations: results.iter().map(|r| r.tr_violations).sum(),
        },
    })
}
