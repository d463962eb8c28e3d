use hesscale_bench::data::{synth_blobs_with, BlobParams};
use hesscale_bench::experiments::reacher::{random_policy_returns, EPISODE_STEPS, MAX_ACTION};
use hesscale_bench::experiments::{run_a2c, run_approx_quality, run_train};
use hesscale_bench::records::{mean_stderr, parse_csv, to_csv};
use hesscale_bench::{Config, TrialRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn well_separated_blobs_are_linearly_separable() {
    let ds = synth_blobs_with(BlobParams {
        classes: 2,
        dim: 10,
        n: 1000,
        seed: 3,
        separation: 10.0,
        noise: 1.0,
    })
    .unwrap();
    let mut w = vec![0.0; ds.dim + 1];
    for _ in 0..200 {
        let mut grad = vec![0.0; ds.dim + 1];
        for i in 0..ds.len() {
            let (x, y) = ds.sample(i);
            let z: f64 = w[ds.dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - y as f64;
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += r * xi;
            }
            grad[ds.dim] += r;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= 0.1 * g / ds.len() as f64;
        }
    }
    let correct = (0..ds.len())
        .filter(|&i| {
            let (x, y) = ds.sample(i);
            let z: f64 = w[ds.dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            (z > 0.0) == (y == 1)
        })
        .count();
    assert!(correct as f64 >= 0.99 * ds.len() as f64, "{correct} of {}", ds.len());
}

/// Re-simulates the random policy on the reacher with separately written
/// dynamics and compares mean returns.
#[test]
fn random_policy_return_matches_independent_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (m1, s1) = mean_stderr(&random_policy_returns(400, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let other: Vec<f64> = (0..400)
        .map(|_| {
            let mut p: [f64; 2] = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let g: [f64; 2] = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let mut ret = 0.0;
            for _ in 0..EPISODE_STEPS {
                for pi in &mut p {
                    *pi = (*pi + rng.random_range(-MAX_ACTION..=MAX_ACTION)).clamp(-1.0, 1.0);
                }
                ret -= ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt();
            }
            ret
        })
        .collect();
    let (m2, s2) = mean_stderr(&other);
    let se = (s1 * s1 + s2 * s2).sqrt();
    assert!((m1 - m2).abs() < 3.0 * se, "{m1} ± {s1} vs {m2} ± {s2}");
}

#[test]
fn experiments_are_deterministic() {
    let train = Config::parse("seeds=2\nepochs=2\nbatch=8\narch=mlp:5\nn_train=24\nn_val=8\nn_test=8\ndim=3\nclasses=3\nstep_size=0.01").unwrap();
    let a = run_train(&train).unwrap();
    let b = run_train(&train).unwrap();
    assert_eq!(to_csv(&a.resolved.hash(), &a.records).unwrap(), to_csv(&b.resolved.hash(), &b.records).unwrap());

    let a2c = Config::parse("seeds=2\nsteps=300\narch=mlp:8\nstep_size=0.001\nbaseline_episodes=4").unwrap();
    assert_eq!(run_a2c(&a2c).unwrap().records, run_a2c(&a2c).unwrap().records);

    let approx = Config::parse("seeds=2\nsamples=3\narch=mlp:6,6\ndim=5\nclasses=4\nmethods=hesscale,ggnmc-1").unwrap();
    assert_eq!(run_approx_quality(&approx).unwrap().records, run_approx_quality(&approx).unwrap().records);
}

#[test]
fn short_scaled_a2c_respects_the_trust_region() {
    let cfg = Config::parse("seeds=1\nsteps=500\narch=mlp:8\nstep_size=0.1\nmethods=scaled-adam,scaled-adahesscale\nbaseline_episodes=2").unwrap();
    let s = run_a2c(&cfg).unwrap().summary;
    assert_eq!(s.tr_violations, 0);
    assert_eq!(s.tr_checks, 2 * 2 * 500 / 5);
    assert!(s.points.iter().all(|p| p.diverged == 0 && p.final_return.is_finite()));
}

fn field() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_@.-]{0,12}"
}

proptest! {
    #[test]
    fn csv_round_trips(rows in prop::collection::btree_map(
        (field(), field(), 0u64..100, 0u64..1000, field()),
        (-1e12f64..1e12, 0u64..1_000_000),
        1..30,
    )) {
        let records: Vec<TrialRecord> = rows
            .iter()
            .map(|((e, m, s, t, k), (v, us))| TrialRecord::new(e, m, *s, *t, k, *v).with_micros(*us))
            .collect();
        let text = to_csv("0123456789abcdef", &records).unwrap();
        let (hash, back) = parse_csv(&text).unwrap();
        prop_assert_eq!(hash, "0123456789abcdef");
        prop_assert_eq!(back, records);
    }

    #[test]
    fn config_hash_ignores_line_order(pairs in prop::collection::btree_map("[a-z]{1,6}", 0u32..1000, 1..8)) {
        let lines: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut reversed = lines.clone();
        reversed.reverse();
        let resolve = |text: String| {
            let cfg = Config::parse(&text).unwrap();
            let mut r = cfg.reader();
            for k in pairs.keys() {
                r.value::<u32>(k, 0).unwrap();
            }
            r.finish().unwrap().hash()
        };
        prop_assert_eq!(resolve(lines.join("\n")), resolve(reversed.join("\n")));
    }
}
