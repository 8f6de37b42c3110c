//! Experiment harness: TOML configuration, seed wiring, paired solver runs,
//! parameter sweeps and CSV emission.
//!
//! Every source of randomness is derived from one base seed through fixed
//! per-purpose sub-seeds (topology, offline batch, offline sample draws,
//! the shared operational stream, online sample draws). All solvers in a
//! comparison consume the *same* operational stream; the harness asserts
//! this by comparing stream checksums after the runs, so cost/queue numbers
//! are paired sample-by-sample.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array1;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{Multiplier, RegularizedDual};
use crate::network::{build_incidence, smoothness_constants, Topology};
use crate::scenario::{default_config_small, draw_topology, SampleStream, ScenarioConfig};
use crate::solvers::{
    default_bias, default_bias_log10, offline_saga, online_saga, sdg_plus_run, sdg_run,
    OnlineConfig, SolverTrace, WarmStart,
};
use crate::{Error, Result};

/// Sub-seed purposes; fixed numbering is part of the reproducibility
/// contract (a config+seed pair always maps to the same streams).
const SEED_TOPOLOGY: u64 = 0;
const SEED_OFFLINE_BATCH: u64 = 1;
const SEED_OFFLINE_DRAWS: u64 = 2;
const SEED_OPERATIONAL: u64 = 3;
const SEED_ONLINE_DRAWS: u64 = 4;

/// SplitMix-style mixing of a base seed with a purpose tag.
fn sub_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Operational solver selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Sdg,
    SdgPlus,
    OnlineSaga,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sdg => "sdg",
            SolverKind::SdgPlus => "sdg-plus",
            SolverKind::OnlineSaga => "online-saga",
        }
    }

    pub const ALL: [SolverKind; 3] = [SolverKind::Sdg, SolverKind::SdgPlus, SolverKind::OnlineSaga];
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdg" => Ok(SolverKind::Sdg),
            "sdg-plus" | "sdgplus" | "sdg+" => Ok(SolverKind::SdgPlus),
            "online-saga" | "saga" => Ok(SolverKind::OnlineSaga),
            other => Err(Error::InvalidConfig(format!(
                "unknown solver '{other}' (expected sdg, sdg-plus or online-saga)"
            ))),
        }
    }
}

/// Run-phase parameters with experiment-scale defaults; optional fields fall
/// back to values derived from the scenario (`eta = 1/(3L)`, `epsilon = mu`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Operational horizon in slots.
    pub horizon: usize,
    /// Adaptation stepsize.
    pub mu: f64,
    /// SAGA iterations per slot.
    pub k: usize,
    /// Offline batch size (0 = cold start).
    pub n_off: usize,
    /// Offline SAGA iterations; defaults to `20 * n_off`.
    pub offline_iters: Option<usize>,
    /// Sliding-window capacity for the online memory (None = unbounded).
    pub window: Option<usize>,
    /// Learning stepsize override.
    pub eta: Option<f64>,
    /// Regularization override.
    pub epsilon: Option<f64>,
    /// Use base-10 instead of natural log in the bias level.
    pub bias_log10: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: 5000,
            mu: 0.1,
            k: 2,
            n_off: 1000,
            offline_iters: None,
            window: None,
            eta: None,
            epsilon: None,
            bias_log10: false,
        }
    }
}

/// Full experiment description, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub run: RunConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::small()
    }
}

impl ExperimentConfig {
    pub fn small() -> Self {
        ExperimentConfig { scenario: default_config_small(), run: RunConfig::default() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if !(self.run.mu > 0.0 && self.run.mu < 1.0) {
            return Err(Error::InvalidConfig("run.mu must lie in (0, 1)".into()));
        }
        if self.run.window == Some(0) {
            return Err(Error::InvalidConfig("run.window must be at least 1".into()));
        }
        if let Some(eta) = self.run.eta {
            if eta <= 0.0 {
                return Err(Error::InvalidConfig("run.eta must be positive".into()));
            }
        }
        if let Some(eps) = self.run.epsilon {
            if eps < 0.0 {
                return Err(Error::InvalidConfig("run.epsilon must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

/// One CSV metrics row: running averages, the instantaneous queue vector and
/// the effective-vs-learned multiplier gap.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub t: usize,
    pub solver: &'static str,
    /// Running time-average of the instantaneous cost.
    pub avg_cost: f64,
    /// Running time-average of the node-mean queue length.
    pub avg_queue: f64,
    /// Instantaneous queue vector `[MN block; DC block]`.
    pub queues: Array1<f64>,
    /// `||gamma_t - lam_t||_2`; zero for solvers whose effective and learned
    /// multipliers coincide.
    pub gamma_gap: f64,
}

/// Output of a paired comparison run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<MetricsRow>,
    pub traces: Vec<(SolverKind, SolverTrace)>,
    pub topology: Topology,
    /// Learned multiplier from the offline phase, when one was run.
    pub offline_lam: Option<Multiplier>,
    pub eta: f64,
    pub lipschitz: f64,
}

/// Offline training output.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub lam: Multiplier,
    pub trace: SolverTrace,
    pub topology: Topology,
    pub eta: f64,
    pub lipschitz: f64,
}

struct Instance {
    topo: Topology,
    incidence: ndarray::Array2<f64>,
    eta: f64,
    reg: RegularizedDual,
    lipschitz: f64,
}

fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    cfg.validate()?;
    let mut topo_rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SEED_TOPOLOGY));
    let topo = draw_topology(&cfg.scenario, &mut topo_rng)?;
    let incidence = build_incidence(&topo);
    let (_sigma, l) = smoothness_constants(&topo, &cfg.scenario)?;
    let eta = cfg.run.eta.unwrap_or(1.0 / (3.0 * l));
    let reg = RegularizedDual { epsilon: cfg.run.epsilon.unwrap_or(cfg.run.mu) };
    Ok(Instance { topo, incidence, eta, reg, lipschitz: l })
}

fn offline_phase(
    cfg: &ExperimentConfig,
    seed: u64,
    inst: &Instance,
) -> Result<Option<(Multiplier, WarmStart, SolverTrace)>> {
    if cfg.run.n_off == 0 {
        return Ok(None);
    }
    let mut batch_stream =
        SampleStream::with_seed(cfg.scenario.clone(), sub_seed(seed, SEED_OFFLINE_BATCH));
    let batch = batch_stream.generate_batch(cfg.run.n_off)?;
    let iters = cfg.run.offline_iters.unwrap_or(20 * cfg.run.n_off);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SEED_OFFLINE_DRAWS));
    let lam0 = Multiplier::zeros(inst.topo.node_dim());
    let (lam, table, trace) = offline_saga(
        &batch,
        &lam0,
        inst.eta,
        iters,
        &mut rng,
        &inst.topo,
        &inst.incidence,
        inst.reg,
    )?;
    let warm = WarmStart::from_offline(lam.clone(), table, batch, iters);
    Ok(Some((lam, warm, trace)))
}

fn online_config(cfg: &ExperimentConfig, inst: &Instance) -> OnlineConfig {
    let dim = inst.topo.node_dim();
    let bias = if cfg.run.bias_log10 {
        default_bias_log10(cfg.run.mu)
    } else {
        default_bias(cfg.run.mu)
    };
    OnlineConfig {
        mu: cfg.run.mu,
        k: cfg.run.k,
        n_off: cfg.run.n_off,
        b: Array1::from_elem(dim, bias),
        window: cfg.run.window,
        horizon: cfg.run.horizon,
        eta: inst.eta,
    }
}

fn metrics_from_trace(kind: SolverKind, trace: &SolverTrace) -> Vec<MetricsRow> {
    let mut rows = Vec::with_capacity(trace.len());
    let mut cost_sum = 0.0;
    let mut queue_sum = 0.0;
    for (idx, r) in trace.records.iter().enumerate() {
        let q = r.queue.as_ref().expect("operational trace records queues");
        let gamma = r.gamma.as_ref().expect("operational trace records gamma");
        cost_sum += r.cost.expect("operational trace records cost");
        queue_sum += q.sum() / q.len() as f64;
        let n = (idx + 1) as f64;
        let gap = (gamma - &r.lam).mapv(|v| v * v).sum().sqrt();
        rows.push(MetricsRow {
            t: r.step,
            solver: kind.name(),
            avg_cost: cost_sum / n,
            avg_queue: queue_sum / n,
            queues: q.clone(),
            gamma_gap: gap,
        });
    }
    rows
}

/// Run the selected solvers on identical operational sample streams and
/// return paired metrics.
pub fn run_comparison(
    cfg: &ExperimentConfig,
    seed: u64,
    solvers: &[SolverKind],
) -> Result<RunOutcome> {
    if solvers.is_empty() {
        return Err(Error::InvalidConfig("no solvers selected".into()));
    }
    let inst = build_instance(cfg, seed)?;
    let needs_offline = solvers
        .iter()
        .any(|s| matches!(s, SolverKind::SdgPlus | SolverKind::OnlineSaga));
    let offline = if needs_offline { offline_phase(cfg, seed, &inst)? } else { None };
    let ocfg = online_config(cfg, &inst);

    let mut traces = Vec::new();
    let mut checksums = Vec::new();
    for &kind in solvers {
        let mut stream =
            SampleStream::with_seed(cfg.scenario.clone(), sub_seed(seed, SEED_OPERATIONAL));
        let trace = match kind {
            SolverKind::Sdg => sdg_run(
                &mut stream,
                &inst.topo,
                &inst.incidence,
                cfg.run.mu,
                cfg.run.horizon,
            ),
            SolverKind::SdgPlus => {
                let lam = offline
                    .as_ref()
                    .map(|(lam, _, _)| lam.clone())
                    .unwrap_or_else(|| Multiplier::zeros(inst.topo.node_dim()));
                sdg_plus_run(
                    &lam,
                    &mut stream,
                    &inst.topo,
                    &inst.incidence,
                    cfg.run.mu,
                    cfg.run.horizon,
                )
            }
            SolverKind::OnlineSaga => {
                let warm = offline
                    .as_ref()
                    .map(|(_, warm, _)| warm.clone())
                    .unwrap_or_else(|| WarmStart::cold(inst.topo.node_dim()));
                let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SEED_ONLINE_DRAWS));
                online_saga(warm, &mut stream, &inst.topo, &inst.incidence, &ocfg, inst.reg, &mut rng)?
            }
        };
        checksums.push(stream.checksum());
        traces.push((kind, trace));
    }
    if checksums.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidConfig(
            "paired solver runs consumed different sample streams".into(),
        ));
    }

    let mut rows = Vec::new();
    for (kind, trace) in &traces {
        rows.extend(metrics_from_trace(*kind, trace));
    }
    Ok(RunOutcome {
        rows,
        traces,
        topology: inst.topo,
        offline_lam: offline.map(|(lam, _, _)| lam),
        eta: inst.eta,
        lipschitz: inst.lipschitz,
    })
}

/// Offline phase only: learn a multiplier from a batch.
pub fn train(cfg: &ExperimentConfig, seed: u64) -> Result<TrainOutcome> {
    let inst = build_instance(cfg, seed)?;
    if cfg.run.n_off == 0 {
        return Err(Error::InvalidConfig("training requires run.n_off >= 1".into()));
    }
    let (lam, _, trace) =
        offline_phase(cfg, seed, &inst)?.expect("n_off >= 1 implies an offline phase");
    Ok(TrainOutcome { lam, trace, topology: inst.topo, eta: inst.eta, lipschitz: inst.lipschitz })
}

/// Final running averages of one solver run, used by the sweeps.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub param: f64,
    pub solver: &'static str,
    pub final_avg_cost: f64,
    pub final_avg_queue: f64,
}

/// Sweep the adaptation stepsize with cold-started solvers (`n_off = 0`,
/// `K = 2`), comparing SDG and online SAGA at each `mu`.
pub fn sweep_mu(cfg: &ExperimentConfig, seed: u64, mus: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &mu in mus {
        let mut c = cfg.clone();
        c.run.mu = mu;
        c.run.n_off = 0;
        c.run.k = 2;
        let outcome = run_comparison(&c, seed, &[SolverKind::Sdg, SolverKind::OnlineSaga])?;
        rows.extend(final_rows(&outcome, mu));
    }
    Ok(rows)
}

/// Sweep the per-slot learning effort `K` for online SAGA.
pub fn sweep_k(cfg: &ExperimentConfig, seed: u64, ks: &[usize]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let mut c = cfg.clone();
        c.run.k = k;
        let outcome = run_comparison(&c, seed, &[SolverKind::OnlineSaga])?;
        rows.extend(final_rows(&outcome, k as f64));
    }
    Ok(rows)
}

fn final_rows(outcome: &RunOutcome, param: f64) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    for (kind, _) in &outcome.traces {
        if let Some(last) = outcome.rows.iter().filter(|r| r.solver == kind.name()).last() {
            rows.push(SweepRow {
                param,
                solver: kind.name(),
                final_avg_cost: last.avg_cost,
                final_avg_queue: last.avg_queue,
            });
        }
    }
    rows
}

/// Format floats with 12 significant digits; part of the byte-stable CSV
/// contract.
fn fmt_f(v: f64) -> String {
    format!("{v:.11e}")
}

/// Write the metrics CSV: `t,solver,avg_cost,avg_queue,q_1..q_n,gamma_gap`
/// with `\n` newlines; byte-identical for identical config and seed.
pub fn emit_metrics_csv(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let node_dim = outcome.topology.node_dim();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "t,solver,avg_cost,avg_queue")?;
    for i in 1..=node_dim {
        write!(w, ",q_{i}")?;
    }
    write!(w, ",gamma_gap\n")?;
    for r in &outcome.rows {
        write!(w, "{},{},{},{}", r.t, r.solver, fmt_f(r.avg_cost), fmt_f(r.avg_queue))?;
        for q in r.queues.iter() {
            write!(w, ",{}", fmt_f(*q))?;
        }
        write!(w, ",{}\n", fmt_f(r.gamma_gap))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a sweep CSV: `<param>,solver,final_avg_cost,final_avg_queue`.
pub fn emit_sweep_csv(path: &Path, param_name: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "{param_name},solver,final_avg_cost,final_avg_queue\n")?;
    for r in rows {
        write!(
            w,
            "{},{},{},{}\n",
            fmt_f(r.param),
            r.solver,
            fmt_f(r.final_avg_cost),
            fmt_f(r.final_avg_queue)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Write the offline iterate trajectory: `iter,lam_1..lam_n`.
pub fn emit_train_csv(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let node_dim = outcome.topology.node_dim();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "iter")?;
    for i in 1..=node_dim {
        write!(w, ",lam_{i}")?;
    }
    write!(w, "\n")?;
    for r in &outcome.trace.records {
        write!(w, "{}", r.step)?;
        for v in r.lam.iter() {
            write!(w, ",{}", fmt_f(*v))?;
        }
        write!(w, "\n")?;
    }
    w.flush()?;
    Ok(())
}
