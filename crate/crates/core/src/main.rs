use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use saga_net::harness::{
    emit_metrics_csv, emit_sweep_csv, emit_train_csv, run_comparison, sweep_k, sweep_mu, train,
    ExperimentConfig, SolverKind,
};

/// Dual-domain workload allocation: offline training, online operation and
/// parameter sweeps over a simulated mapping-node / data-center network.
#[derive(Parser)]
#[command(name = "saga-net", version, about)]
struct Cli {
    /// TOML experiment config; defaults to the built-in 4x4 setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed override (defaults to the scenario seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output CSV path.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn a multiplier offline from a sampled batch.
    Train,
    /// Run operational solvers on a shared sample stream and emit metrics.
    Run {
        /// Comma-separated solvers: sdg, sdg-plus, online-saga.
        #[arg(long, value_delimiter = ',', default_values_t = SolverKind::ALL)]
        solvers: Vec<SolverKind>,

        /// Horizon override in slots.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Sweep the adaptation stepsize mu with cold-started solvers.
    SweepMu {
        /// Comma-separated mu values.
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
        mu: Vec<f64>,
    },
    /// Sweep the per-slot learning effort K of online SAGA.
    SweepK {
        /// Comma-separated K values.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 4])]
        k: Vec<usize>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::small(),
    };
    let seed = cli.seed.unwrap_or(cfg.scenario.seed);

    match cli.cmd {
        Cmd::Train => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("train.csv"));
            let res = train(&cfg, seed)?;
            emit_train_csv(&out, &res)?;
            println!(
                "trained {} iterations (eta {:.4e}, L {:.4e}); |lam| = {:.6e}; wrote {}",
                res.trace.len(),
                res.eta,
                res.lipschitz,
                res.lam.lam.dot(&res.lam.lam).sqrt(),
                out.display()
            );
        }
        Cmd::Run { solvers, horizon } => {
            if let Some(h) = horizon {
                cfg.run.horizon = h;
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("metrics.csv"));
            let res = run_comparison(&cfg, seed, &solvers)?;
            emit_metrics_csv(&out, &res)?;
            for (kind, trace) in &res.traces {
                println!(
                    "{}: avg cost {:.6e}, avg queue {:.6e} over {} slots",
                    kind,
                    trace.time_average_cost(),
                    trace.time_average_queue(),
                    trace.len()
                );
            }
            println!("wrote {}", out.display());
        }
        Cmd::SweepMu { mu } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("sweep_mu.csv"));
            let rows = sweep_mu(&cfg, seed, &mu)?;
            emit_sweep_csv(&out, "mu", &rows)?;
            println!("swept {} mu values; wrote {}", mu.len(), out.display());
        }
        Cmd::SweepK { k } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("sweep_k.csv"));
            let rows = sweep_k(&cfg, seed, &k)?;
            emit_sweep_csv(&out, "k", &rows)?;
            println!("swept {} K values; wrote {}", k.len(), out.display());
        }
    }
    Ok(())
}
