use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hesscale_bench::experiments::{run_a2c, run_approx_quality, run_diag_dominance, run_timing, run_train};
use hesscale_bench::records::{parse_csv, render_report, summarize, to_csv};
use hesscale_bench::{Config, Resolved, TrialRecord};

#[derive(Parser)]
#[command(name = "hesscale", version, about = "Hessian-diagonal approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// L1 error of curvature estimators against the finite-difference diagonal.
    ApproxQuality(Common),
    /// Diagonal dominance of pre-activation Hessians before and after training.
    DiagDominance(Common),
    /// Per-update wall time over depth and width sweeps.
    Timing(Common),
    /// Supervised training over an optimizer and step-size grid.
    Train(Common),
    /// A2C on the toy reacher.
    RlA2c(Common),
    /// Summarize a CSV produced by one of the experiments.
    Report { csv: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method tags.
    #[arg(long)]
    methods: Option<String>,
    /// Hidden layers, e.g. mlp:32,32,32.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    act: Option<String>,
    /// blobs or mnist.
    #[arg(long)]
    dataset: Option<String>,
    /// One step size or a comma-separated grid.
    #[arg(long)]
    step_size: Option<String>,
    /// Trust-region radius.
    #[arg(long)]
    delta: Option<f64>,
}

impl Common {
    fn config(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => Config::default(),
        };
        let overrides = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("methods", self.methods.clone()),
            ("arch", self.arch.clone()),
            ("act", self.act.clone()),
            ("dataset", self.dataset.clone()),
            ("step_size", self.step_size.clone()),
            ("delta", self.delta.map(|v| v.to_string())),
        ];
        for (k, v) in overrides {
            if let Some(v) = v {
                cfg.set(k, v);
            }
        }
        Ok(cfg)
    }

    fn emit(&self, resolved: &Resolved, records: &[TrialRecord]) -> anyhow::Result<()> {
        let text = to_csv(&resolved.hash(), records)?;
        match &self.out {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
            None => print!("{text}"),
        }
        Ok(())
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::ApproxQuality(c) => {
            let out = run_approx_quality(&c.config()?)?;
            for (m, s) in &out.summary.methods {
                eprintln!("{m:<18} l1 {:.6e}  normalized {:.3}", s.l1, s.normalized);
            }
            c.emit(&out.resolved, &out.records)
        }
        Command::DiagDominance(c) => {
            let out = run_diag_dominance(&c.config()?)?;
            let s = &out.summary;
            eprintln!("rho before {:?}", s.before);
            eprintln!("rho after  {:?}", s.after);
            eprintln!("random baseline {:.4} ± {:.4}", s.baseline_mean, s.baseline_stderr);
            c.emit(&out.resolved, &out.records)
        }
        Command::Timing(c) => {
            let out = run_timing(&c.config()?)?;
            for p in out.summary.depth.iter().chain(&out.summary.width) {
                eprintln!("x={:<4} params={:<9} {:?}", p.x, p.params, p.micros);
            }
            c.emit(&out.resolved, &out.records)
        }
        Command::Train(c) => {
            let out = run_train(&c.config()?)?;
            for (k, r) in &out.summary.optimizers {
                eprintln!(
                    "{k:<16} best lr {:e}  loss {:.4} -> {:.4}  diverged runs {}",
                    r.best_step_size, r.initial_loss, r.final_loss, r.diverged_runs
                );
            }
            c.emit(&out.resolved, &out.records)
        }
        Command::RlA2c(c) => {
            let out = run_a2c(&c.config()?)?;
            let s = &out.summary;
            for p in &s.points {
                eprintln!("{:<20} lr {:e}  final {:.2}  diverged {}", p.variant.to_string(), p.step_size, p.final_return, p.diverged);
            }
            eprintln!("random baseline {:.2} ± {:.2}", s.baseline_mean, s.baseline_stderr);
            eprintln!("trust-region checks {} violations {}", s.tr_checks, s.tr_violations);
            c.emit(&out.resolved, &out.records)
        }
        Command::Report { csv } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let (hash, records) = parse_csv(&text)?;
            print!("{}", render_report(&hash, &summarize(&records)));
            Ok(())
        }
    }
}
