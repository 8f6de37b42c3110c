//! Dual solvers: batch gradient ascent, stochastic gradient, projected
//! offline SAGA with a gradient table, SDG, SDG+ and the learn-and-adapt
//! online SAGA.
//!
//! All solvers maximize the (regularized) empirical or instantaneous dual
//! by projected ascent. SAGA's update direction at iteration `k` with drawn
//! sample `nu` is
//!
//! ```text
//! g_k = grad D_nu(lam_k) - grad D_nu(lam_{k[nu]}) + (1/N) sum_n grad D_n(lam_{k[n]})
//! lam_{k+1} = [lam_k + eta g_k]^+
//! ```
//!
//! where the table stores the most recent gradient per sample. The online
//! variant interleaves this learning step with the physical queue recursion
//! and allocates with the effective multiplier
//! `gamma_t = [lam_t + mu q_t - b]^+`.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dual::{dual_gradient, dual_value, primal_minimizer, Multiplier, RegularizedDual};
use crate::network::{
    instantaneous_cost, service_residual, StateSample, Topology,
};
use crate::{Error, Result};

/// Per-sample stored dual gradients with an incrementally maintained running
/// sum, last-update iteration indices, and optional sliding-window capacity.
///
/// Sample ids are monotone, so FIFO eviction removes the smallest id.
#[derive(Debug, Clone)]
pub struct GradientTable {
    stored: BTreeMap<usize, Array1<f64>>,
    running_sum: Array1<f64>,
    last_update: HashMap<usize, usize>,
    capacity: Option<usize>,
}

impl GradientTable {
    pub fn new(dim: usize, capacity: Option<usize>) -> Self {
        GradientTable {
            stored: BTreeMap::new(),
            running_sum: Array1::zeros(dim),
            last_update: HashMap::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: Option<usize>) {
        self.capacity = capacity;
    }

    pub fn contains(&self, id: usize) -> bool {
        self.stored.contains_key(&id)
    }

    pub fn get(&self, id: usize) -> Option<&Array1<f64>> {
        self.stored.get(&id)
    }

    pub fn last_update(&self, id: usize) -> Option<usize> {
        self.last_update.get(&id).copied()
    }

    /// Smallest (oldest) stored sample id.
    pub fn oldest_id(&self) -> Option<usize> {
        self.stored.keys().next().copied()
    }

    /// Largest stored sample id.
    pub fn newest_id(&self) -> Option<usize> {
        self.stored.keys().next_back().copied()
    }

    /// Running sum of all stored gradients.
    pub fn sum(&self) -> &Array1<f64> {
        &self.running_sum
    }

    /// Average of all stored gradients.
    pub fn mean(&self) -> Array1<f64> {
        &self.running_sum / self.stored.len().max(1) as f64
    }

    /// Insert the gradient for a new sample; evicts the oldest entry when
    /// the window capacity is exceeded and returns its id.
    pub fn insert(&mut self, id: usize, grad: Array1<f64>, iter: usize) -> Option<usize> {
        self.running_sum += &grad;
        self.stored.insert(id, grad);
        self.last_update.insert(id, iter);
        match self.capacity {
            Some(cap) if self.stored.len() > cap => self.evict_oldest(),
            _ => None,
        }
    }

    /// Replace the stored gradient for `id`, updating the running sum by the
    /// difference.
    pub fn replace(&mut self, id: usize, fresh: Array1<f64>, iter: usize) -> Result<()> {
        let slot = self.stored.get_mut(&id).ok_or(Error::SampleNotInTable(id))?;
        self.running_sum += &fresh;
        self.running_sum -= &*slot;
        *slot = fresh;
        self.last_update.insert(id, iter);
        Ok(())
    }

    /// Drop the oldest entry, subtracting its gradient from the running sum.
    pub fn evict_oldest(&mut self) -> Option<usize> {
        let id = self.oldest_id()?;
        let grad = self.stored.remove(&id)?;
        self.running_sum -= &grad;
        self.last_update.remove(&id);
        Some(id)
    }

    /// Recompute the sum of stored gradients from scratch (test audit path).
    pub fn recompute_sum(&self) -> Array1<f64> {
        let mut sum = Array1::zeros(self.running_sum.len());
        for g in self.stored.values() {
            sum += g;
        }
        sum
    }
}

/// One trace record; offline iterations fill `dual_value`, online slots fill
/// the allocation-side fields.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    /// Learned/virtual multiplier at this step.
    pub lam: Array1<f64>,
    /// Effective multiplier used for allocation (online solvers).
    pub gamma: Option<Array1<f64>>,
    /// Physical queue vector at the beginning of the slot.
    pub queue: Option<Array1<f64>>,
    pub cost: Option<f64>,
    /// Sampled instantaneous dual value (offline iterations).
    pub dual_value: Option<f64>,
    pub residual_norm: Option<f64>,
}

/// Per-iteration (or per-slot) solver trace with strictly increasing steps.
#[derive(Debug, Clone, Default)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    fn push(&mut self, record: TraceRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "trace steps must strictly increase");
        }
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Time average of the recorded instantaneous costs.
    pub fn time_average_cost(&self) -> f64 {
        let costs: Vec<f64> = self.records.iter().filter_map(|r| r.cost).collect();
        costs.iter().sum::<f64>() / costs.len().max(1) as f64
    }

    /// Time average of the node-mean queue length.
    pub fn time_average_queue(&self) -> f64 {
        let means: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.queue.as_ref().map(|q| q.sum() / q.len() as f64))
            .collect();
        means.iter().sum::<f64>() / means.len().max(1) as f64
    }

    /// Per-node time-average queue lengths.
    pub fn per_node_average_queue(&self) -> Option<Array1<f64>> {
        let mut acc: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for r in &self.records {
            if let Some(q) = &r.queue {
                match &mut acc {
                    Some(a) => *a += q,
                    None => acc = Some(q.clone()),
                }
                count += 1;
            }
        }
        acc.map(|a| a / count as f64)
    }
}

/// Parameters of the online learn-and-adapt phase.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    /// Adaptation stepsize `mu` in (0, 1).
    pub mu: f64,
    /// SAGA iterations per slot; 0 freezes the learned multiplier.
    pub k: usize,
    /// Offline batch size (0 = cold start).
    pub n_off: usize,
    /// Bias-control vector; defaults to `sqrt(mu) ln^2(mu) 1`.
    pub b: Array1<f64>,
    /// Sliding-window capacity for the sample/gradient memory.
    pub window: Option<usize>,
    /// Operational horizon in slots.
    pub horizon: usize,
    /// Learning stepsize; `1/(3L)` by default.
    pub eta: f64,
}

impl OnlineConfig {
    pub fn new(mu: f64, k: usize, n_off: usize, horizon: usize, eta: f64, node_dim: usize) -> Self {
        OnlineConfig {
            mu,
            k,
            n_off,
            b: Array1::from_elem(node_dim, default_bias(mu)),
            window: None,
            horizon,
            eta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidConfig("mu must lie in (0, 1)".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidConfig("eta must be positive".into()));
        }
        if self.b.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig("bias vector must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Steady-state bias level `sqrt(mu) ln^2(mu)`; natural logarithm.
pub fn default_bias(mu: f64) -> f64 {
    mu.sqrt() * mu.ln().powi(2)
}

/// Base-10 variant of [`default_bias`] for configs that select it.
pub fn default_bias_log10(mu: f64) -> f64 {
    mu.sqrt() * mu.log10().powi(2)
}

/// One projected batch gradient ascent step over the dataset mean gradient.
pub fn batch_gradient_step(
    lam: &Multiplier,
    dataset: &[StateSample],
    eta: f64,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> Result<Multiplier> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut g = Array1::zeros(lam.lam.len());
    for s in dataset {
        g += &dual_gradient(lam, s, topo, incidence, reg);
    }
    g /= dataset.len() as f64;
    Ok(Multiplier::project(&lam.lam + &(eta * g)))
}

/// One projected stochastic gradient step along a single sample gradient.
pub fn sg_step(
    lam: &Multiplier,
    sample: &StateSample,
    eta_k: f64,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> Multiplier {
    let g = dual_gradient(lam, sample, topo, incidence, reg);
    Multiplier::project(&lam.lam + &(eta_k * g))
}

/// Diminishing stepsize schedule `eta_k = 1/sqrt(k)`, `k >= 1`.
pub fn diminishing_step(k: usize) -> f64 {
    1.0 / (k as f64).sqrt()
}

/// One projected SAGA step for drawn sample `nu`.
///
/// Evaluates exactly one fresh gradient, replaces the table entry for `nu`,
/// and updates the running sum by the difference.
#[allow(clippy::too_many_arguments)]
pub fn saga_step(
    table: &mut GradientTable,
    lam: &Multiplier,
    sample: &StateSample,
    nu: usize,
    iter: usize,
    eta: f64,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> Result<Multiplier> {
    let stored = table.get(nu).ok_or(Error::SampleNotInTable(nu))?;
    let fresh = dual_gradient(lam, sample, topo, incidence, reg);
    let n = table.len() as f64;
    let g = &fresh - stored + table.sum() / n;
    let next = Multiplier::project(&lam.lam + &(eta * g));
    table.replace(nu, fresh, iter)?;
    Ok(next)
}

/// Offline SAGA over a fixed batch.
///
/// The table is populated with all `N` gradients at `lam0` before iterating,
/// so the running sum is exact from the first step; each iteration then draws
/// `nu` uniformly from the batch. Returns the final iterate, the warm table,
/// and the iterate trace.
#[allow(clippy::too_many_arguments)]
pub fn offline_saga(
    dataset: &[StateSample],
    lam0: &Multiplier,
    eta: f64,
    iters: usize,
    rng: &mut ChaCha8Rng,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> Result<(Multiplier, GradientTable, SolverTrace)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.len();
    let mut table = GradientTable::new(lam0.lam.len(), None);
    for (id, s) in dataset.iter().enumerate() {
        table.insert(id, dual_gradient(lam0, s, topo, incidence, reg), 0);
    }
    let mut lam = lam0.clone();
    let mut trace = SolverTrace::default();
    for k in 0..iters {
        let nu = rng.random_range(0..n);
        lam = saga_step(&mut table, &lam, &dataset[nu], nu, k + 1, eta, topo, incidence, reg)?;
        trace.push(TraceRecord {
            step: k + 1,
            lam: lam.lam.clone(),
            gamma: None,
            queue: None,
            cost: None,
            dual_value: Some(dual_value(&lam, &dataset[nu], topo, incidence, reg)),
            residual_norm: None,
        });
    }
    Ok((lam, table, trace))
}

/// Linear-rate constant `Gamma_N = 1 - min(1/(4N), 1/(3 kappa))`.
pub fn theoretical_rate(n: usize, kappa: f64) -> f64 {
    assert!(n >= 1, "batch size must be at least 1");
    assert!(kappa > 0.0, "condition number must be positive");
    1.0 - (1.0 / (4.0 * n as f64)).min(1.0 / (3.0 * kappa))
}

fn sdg_core(
    lam0: Multiplier,
    stream: &mut crate::scenario::SampleStream,
    topo: &Topology,
    incidence: &Array2<f64>,
    mu: f64,
    horizon: usize,
) -> SolverTrace {
    let dim = topo.node_dim();
    let mut lam = lam0;
    let mut q: Array1<f64> = Array1::zeros(dim);
    let mut trace = SolverTrace::default();
    for t in 0..horizon {
        let s = stream.draw_state();
        let x = primal_minimizer(&lam, &s, topo);
        let cost = instantaneous_cost(&x, &s, topo);
        let resid = service_residual(&x, &s, incidence);
        trace.push(TraceRecord {
            step: t + 1,
            lam: lam.lam.clone(),
            gamma: Some(lam.lam.clone()),
            queue: Some(q.clone()),
            cost: Some(cost),
            dual_value: None,
            residual_norm: Some(resid.dot(&resid).sqrt()),
        });
        q = (&q + &resid).mapv(|v| v.max(0.0));
        // Raw instantaneous gradient: the virtual iterate must stay the
        // scaled queue (lam = mu q when started from zero), so no
        // regularization enters the queue-coupled recursion.
        lam = Multiplier::project(&lam.lam + &(mu * &resid));
    }
    trace
}

/// Stochastic dual gradient from a zero (or given) multiplier.
///
/// Per slot: allocate with the virtual multiplier, update the physical queue
/// recursion from `q_0 = 0`, then take a projected step along the
/// instantaneous gradient. The virtual multiplier is the scaled-queue
/// iterate `lam_t = mu q^virt_t`; the trace reports the physical queues.
pub fn sdg_run(
    stream: &mut crate::scenario::SampleStream,
    topo: &Topology,
    incidence: &Array2<f64>,
    mu: f64,
    horizon: usize,
) -> SolverTrace {
    sdg_core(Multiplier::zeros(topo.node_dim()), stream, topo, incidence, mu, horizon)
}

/// SDG hot-started from an offline-learned multiplier (virtual queue
/// `lam_off / mu`); physical queues still start empty.
pub fn sdg_plus_run(
    offline_lam: &Multiplier,
    stream: &mut crate::scenario::SampleStream,
    topo: &Topology,
    incidence: &Array2<f64>,
    mu: f64,
    horizon: usize,
) -> SolverTrace {
    sdg_core(offline_lam.clone(), stream, topo, incidence, mu, horizon)
}

/// Offline output carried into the online phase: the learned multiplier, the
/// warm gradient table, and the samples backing it (table ids are positions
/// in a monotone id space shared with the online stream).
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub lam: Multiplier,
    pub table: GradientTable,
    pub samples: BTreeMap<usize, StateSample>,
    /// Iteration index reached so far (continues into online SAGA steps).
    pub iter: usize,
}

impl WarmStart {
    /// Cold start: zero multiplier, empty memory.
    pub fn cold(node_dim: usize) -> Self {
        WarmStart {
            lam: Multiplier::zeros(node_dim),
            table: GradientTable::new(node_dim, None),
            samples: BTreeMap::new(),
            iter: 0,
        }
    }

    /// Package an offline SAGA output together with its batch.
    pub fn from_offline(
        lam: Multiplier,
        table: GradientTable,
        dataset: Vec<StateSample>,
        iters_run: usize,
    ) -> Self {
        let samples = dataset.into_iter().enumerate().collect();
        WarmStart { lam, table, samples, iter: iters_run }
    }
}

/// Learn-and-adapt online SAGA.
///
/// Per slot: (i) effective multiplier `gamma_t = [lam_t + mu q_t - b]^+`
/// (projected so primal recovery stays valid); (ii) allocation from
/// `gamma_t`; (iii) physical queue update; (iv) append the new sample with
/// its gradient at `lam_t`, evicting the oldest entry beyond the window;
/// (v) `K` SAGA steps over the grown memory.
pub fn online_saga(
    warm: WarmStart,
    stream: &mut crate::scenario::SampleStream,
    topo: &Topology,
    incidence: &Array2<f64>,
    cfg: &OnlineConfig,
    reg: RegularizedDual,
    rng: &mut ChaCha8Rng,
) -> Result<SolverTrace> {
    cfg.validate()?;
    let dim = topo.node_dim();
    let mut lam = warm.lam;
    let mut table = warm.table;
    table.set_capacity(cfg.window);
    let mut samples = warm.samples;
    let mut next_id = samples.keys().next_back().map_or(0, |id| id + 1);
    let mut iter = warm.iter;
    let mut q: Array1<f64> = Array1::zeros(dim);
    let mut trace = SolverTrace::default();

    for t in 0..cfg.horizon {
        let gamma = Multiplier::project(&lam.lam + &(cfg.mu * &q) - &cfg.b);
        let s = stream.draw_state();
        let x = primal_minimizer(&gamma, &s, topo);
        let cost = instantaneous_cost(&x, &s, topo);
        let resid = service_residual(&x, &s, incidence);
        trace.push(TraceRecord {
            step: t + 1,
            lam: lam.lam.clone(),
            gamma: Some(gamma.lam.clone()),
            queue: Some(q.clone()),
            cost: Some(cost),
            dual_value: None,
            residual_norm: Some(resid.dot(&resid).sqrt()),
        });
        let q_next = (&q + &resid).mapv(|v| v.max(0.0));

        // Grow the memory with the new sample's gradient at the current lam.
        let g0 = dual_gradient(&lam, &s, topo, incidence, reg);
        if let Some(evicted) = table.insert(next_id, g0, iter) {
            samples.remove(&evicted);
        }
        samples.insert(next_id, s);
        next_id += 1;

        for _ in 0..cfg.k {
            let lo = table.oldest_id().expect("table is nonempty after insert");
            let nu = rng.random_range(lo..next_id);
            iter += 1;
            lam = saga_step(
                &mut table,
                &lam,
                &samples[&nu],
                nu,
                iter,
                cfg.eta,
                topo,
                incidence,
                reg,
            )?;
        }
        q = q_next;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_incidence;
    use crate::scenario::{default_config_small, draw_topology, SampleStream};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand_chacha::rand_core::SeedableRng;

    fn small_setup(seed: u64) -> (Topology, Array2<f64>, SampleStream) {
        let cfg = default_config_small();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let topo = draw_topology(&cfg, &mut rng).unwrap();
        let inc = build_incidence(&topo);
        let stream = SampleStream::with_seed(cfg, seed.wrapping_mul(31));
        (topo, inc, stream)
    }

    #[test]
    fn batch_step_degenerate_cases() {
        let (topo, inc, mut stream) = small_setup(1);
        let reg = RegularizedDual::none();
        let batch = stream.generate_batch(1).unwrap();

        // N=1 batch step equals an SG step on that sample.
        let lam = Multiplier { lam: Array1::from_elem(topo.node_dim(), 5.0) };
        let b = batch_gradient_step(&lam, &batch, 0.05, &topo, &inc, reg).unwrap();
        let s = sg_step(&lam, &batch[0], 0.05, &topo, &inc, reg);
        assert_eq!(b, s);

        // At lam=0 all gradients are the nonnegative arrival vectors, so a
        // zero-stepsize step is a fixed point.
        let zero = Multiplier::zeros(topo.node_dim());
        let fixed = batch_gradient_step(&zero, &batch, 0.0, &topo, &inc, reg).unwrap();
        assert_eq!(fixed.lam, zero.lam);
        assert!(batch_gradient_step(&lam, &[], 0.05, &topo, &inc, reg).is_err());
    }

    #[test]
    fn projection_keeps_multiplier_nonneg() {
        // Negative gradients at lam=0 must leave the iterate at 0.
        let (topo, inc, _) = small_setup(2);
        let reg = RegularizedDual { epsilon: 10.0 };
        // With huge epsilon the regularized gradient at a positive lam is
        // strongly negative; projection floors at zero.
        let lam = Multiplier { lam: Array1::from_elem(topo.node_dim(), 1e-3) };
        let s = StateSample {
            price: Array1::from_elem(topo.num_dc, 20.0),
            renewable: Array1::from_elem(topo.num_dc, 30.0),
            arrivals: Array1::zeros(topo.num_mn),
        };
        let next = sg_step(&lam, &s, 100.0, &topo, &inc, reg);
        assert!(next.is_nonneg());
    }

    #[test]
    fn diminishing_schedule() {
        assert_relative_eq!(diminishing_step(1), 1.0);
        assert_relative_eq!(diminishing_step(4), 0.5);
    }

    #[test]
    fn saga_step_n1_reduces_to_fresh_gradient() {
        let (topo, inc, mut stream) = small_setup(3);
        let reg = RegularizedDual::none();
        let s = stream.draw_state();
        let lam0 = Multiplier::zeros(topo.node_dim());
        let mut table = GradientTable::new(topo.node_dim(), None);
        table.insert(0, dual_gradient(&lam0, &s, &topo, &inc, reg), 0);
        let lam = Multiplier { lam: Array1::from_elem(topo.node_dim(), 3.0) };
        let eta = 0.05;
        let next = saga_step(&mut table, &lam, &s, 0, 1, eta, &topo, &inc, reg).unwrap();
        let expected = sg_step(&lam, &s, eta, &topo, &inc, reg);
        assert_relative_eq!((&next.lam - &expected.lam).mapv(f64::abs).sum(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn saga_step_two_sample_hand_example() {
        // Stored g1=[1,0], g2=[0,2]; fresh grad for nu=1 is [3,0]:
        // g = [3,0] - [1,0] + [0.5,1] = [2.5,1].
        let mut table = GradientTable::new(2, None);
        table.insert(0, array![1.0, 0.0], 0);
        table.insert(1, array![0.0, 2.0], 0);
        let fresh = array![3.0, 0.0];
        let stored = table.get(0).unwrap();
        let g = &fresh - stored + table.sum() / 2.0;
        assert_eq!(g, array![2.5, 1.0]);
    }

    #[test]
    fn saga_estimator_is_unbiased() {
        let (topo, inc, mut stream) = small_setup(4);
        let reg = RegularizedDual { epsilon: 0.1 };
        let n = 8;
        let dataset = stream.generate_batch(n).unwrap();
        let lam0 = Multiplier { lam: Array1::from_elem(topo.node_dim(), 7.0) };
        let mut table = GradientTable::new(topo.node_dim(), None);
        for (id, s) in dataset.iter().enumerate() {
            table.insert(id, dual_gradient(&lam0, s, &topo, &inc, reg), 0);
        }
        let lam = Multiplier { lam: Array1::from_elem(topo.node_dim(), 42.0) };
        // Enumerated mean of g over nu with the table frozen.
        let mut mean_g = Array1::zeros(topo.node_dim());
        for (nu, s) in dataset.iter().enumerate() {
            let fresh = dual_gradient(&lam, s, &topo, &inc, reg);
            mean_g += &(&fresh - table.get(nu).unwrap() + table.mean());
        }
        mean_g /= n as f64;
        let mut batch_g = Array1::zeros(topo.node_dim());
        for s in &dataset {
            batch_g += &dual_gradient(&lam, s, &topo, &inc, reg);
        }
        batch_g /= n as f64;
        assert!((&mean_g - &batch_g).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn variance_vanishes_with_refreshed_table() {
        // With every table entry refreshed at the current lam, the fresh and
        // stored terms cancel and g(nu) equals the batch gradient for all nu.
        let (topo, inc, mut stream) = small_setup(5);
        let reg = RegularizedDual { epsilon: 0.1 };
        let dataset = stream.generate_batch(6).unwrap();
        let lam = Multiplier { lam: Array1::from_elem(topo.node_dim(), 25.0) };
        let mut table = GradientTable::new(topo.node_dim(), None);
        for (id, s) in dataset.iter().enumerate() {
            table.insert(id, dual_gradient(&lam, s, &topo, &inc, reg), 0);
        }
        let batch_g = table.mean();
        for (nu, s) in dataset.iter().enumerate() {
            let fresh = dual_gradient(&lam, s, &topo, &inc, reg);
            let g = &fresh - table.get(nu).unwrap() + table.mean();
            assert!((&g - &batch_g).iter().all(|v| v.abs() < 1e-12), "nu={nu}");
        }
    }

    #[test]
    fn saga_step_rejects_unknown_sample() {
        let (topo, inc, mut stream) = small_setup(6);
        let s = stream.draw_state();
        let mut table = GradientTable::new(topo.node_dim(), None);
        table.insert(0, Array1::zeros(topo.node_dim()), 0);
        let lam = Multiplier::zeros(topo.node_dim());
        let err = saga_step(&mut table, &lam, &s, 3, 1, 0.1, &topo, &inc, RegularizedDual::none());
        assert!(matches!(err, Err(Error::SampleNotInTable(3))));
    }

    #[test]
    fn table_running_sum_stays_exact() {
        let (topo, inc, mut stream) = small_setup(7);
        let reg = RegularizedDual { epsilon: 0.1 };
        let dataset = stream.generate_batch(10).unwrap();
        let lam0 = Multiplier::zeros(topo.node_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (_, table, _) =
            offline_saga(&dataset, &lam0, 0.02, 500, &mut rng, &topo, &inc, reg).unwrap();
        let audit = table.recompute_sum();
        assert!((table.sum() - &audit).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn windowed_table_evicts_fifo() {
        let mut table = GradientTable::new(2, Some(2));
        assert_eq!(table.insert(0, array![1.0, 0.0], 0), None);
        assert_eq!(table.insert(1, array![0.0, 1.0], 0), None);
        assert_eq!(table.insert(2, array![2.0, 2.0], 0), Some(0));
        assert_eq!(table.len(), 2);
        assert!(!table.contains(0));
        assert_eq!(table.sum(), &array![2.0, 3.0]);
    }

    #[test]
    fn offline_saga_zero_iters_returns_initial() {
        let (topo, inc, mut stream) = small_setup(8);
        let dataset = stream.generate_batch(5).unwrap();
        let lam0 = Multiplier { lam: Array1::from_elem(topo.node_dim(), 2.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (lam, _, trace) = offline_saga(
            &dataset, &lam0, 0.05, 0, &mut rng, &topo, &inc, RegularizedDual::none(),
        )
        .unwrap();
        assert_eq!(lam, lam0);
        assert!(trace.is_empty());
    }

    #[test]
    fn theoretical_rate_examples() {
        assert_relative_eq!(theoretical_rate(100, 30.0), 0.9975);
        // Well-conditioned small batch: the 1/(3 kappa) term is the smaller.
        assert_relative_eq!(theoretical_rate(1, 2.0), 1.0 - 1.0 / 6.0);
        // Ill-conditioned single sample: the 1/(4N) term is the smaller.
        assert_relative_eq!(theoretical_rate(1, 1.0), 0.75);
    }

    #[test]
    fn sdg_empty_horizon() {
        let (topo, inc, mut stream) = small_setup(9);
        let trace = sdg_run(&mut stream, &topo, &inc, 0.1, 0);
        assert!(trace.is_empty());
    }

    #[test]
    fn sdg_first_step_from_zero_is_scaled_arrivals() {
        let (topo, inc, mut stream) = small_setup(10);
        let probe = stream.clone().draw_state();
        let mu = 0.1;
        let trace = sdg_run(&mut stream, &topo, &inc, mu, 2);
        // Slot 1 records lam=0; slot 2 records lam_1 = mu * c (zero allocation
        // at lam=0, and the regularizer term vanishes there too).
        assert!(trace.records[0].lam.iter().all(|v| *v == 0.0));
        let expected = mu * probe.arrival_vector(topo.num_dc);
        assert!((&trace.records[1].lam - &expected).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sdg_plus_degenerates_to_sdg_with_zero_warm_start() {
        let (topo, inc, stream) = small_setup(11);
        let mut s1 = stream.clone();
        let mut s2 = stream;
        let a = sdg_run(&mut s1, &topo, &inc, 0.1, 50);
        let zero = Multiplier::zeros(topo.node_dim());
        let b = sdg_plus_run(&zero, &mut s2, &topo, &inc, 0.1, 50);
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(ra.lam, rb.lam);
            assert_eq!(ra.cost, rb.cost);
        }
    }

    #[test]
    fn sdg_virtual_multiplier_is_scaled_queue() {
        let (topo, inc, mut stream) = small_setup(17);
        let mu = 0.1;
        let trace = sdg_run(&mut stream, &topo, &inc, mu, 200);
        for r in &trace.records {
            let q = r.queue.as_ref().unwrap();
            for (l, qv) in r.lam.iter().zip(q.iter()) {
                assert_relative_eq!(*l, mu * qv, epsilon = 1e-9, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn online_saga_effective_multiplier_identity() {
        // mu q = b and lam = lam* give gamma = lam*.
        let mu = 0.1_f64;
        let b = Array1::from_elem(4, default_bias(mu));
        let q = &b / mu;
        let lam_star = array![3.0, 1.0, 0.5, 2.0];
        let gamma = Multiplier::project(&lam_star + &(mu * &q) - &b);
        assert!((&gamma.lam - &lam_star).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn online_saga_gamma_hand_example() {
        // b = sqrt(0.1) ln^2(0.1), verified by independent arithmetic.
        let b = default_bias(0.1);
        assert_relative_eq!(b, 0.1_f64.sqrt() * (0.1_f64.ln() * 0.1_f64.ln()), epsilon = 1e-15);
        assert_relative_eq!(b, 1.676607, epsilon = 1e-6);
        let lam = array![2.0, 1.0];
        let q = array![10.0, 40.0];
        let gamma = Multiplier::project(&lam + &(0.1 * &q) - &Array1::from_elem(2, b));
        assert_relative_eq!(gamma.lam[0], 3.0 - b, epsilon = 1e-12);
        assert_relative_eq!(gamma.lam[1], 5.0 - b, epsilon = 1e-12);
        assert_relative_eq!(gamma.lam[0], 1.323393, epsilon = 1e-6);
    }

    #[test]
    fn online_saga_k0_b0_eps0_degenerates_to_sdg() {
        let (topo, inc, stream) = small_setup(12);
        let mut s1 = stream.clone();
        let mut s2 = stream;
        let reg = RegularizedDual::none();
        let mu = 0.1;
        let horizon = 100;
        let sdg = sdg_run(&mut s1, &topo, &inc, mu, horizon);
        let mut cfg = OnlineConfig::new(mu, 0, 0, horizon, 0.05, topo.node_dim());
        cfg.b = Array1::zeros(topo.node_dim());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let online = online_saga(
            WarmStart::cold(topo.node_dim()),
            &mut s2,
            &topo,
            &inc,
            &cfg,
            reg,
            &mut rng,
        )
        .unwrap();
        for (a, b) in sdg.records.iter().zip(online.records.iter()) {
            // SDG's virtual multiplier equals online SAGA's gamma = mu q, up
            // to accumulation order (multiplier space vs scaled queue space).
            let gamma = b.gamma.as_ref().unwrap();
            for (x, y) in a.lam.iter().zip(gamma.iter()) {
                assert_relative_eq!(x, y, epsilon = 1e-9, max_relative = 1e-9);
            }
            assert_relative_eq!(a.cost.unwrap(), b.cost.unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn online_saga_is_deterministic() {
        let (topo, inc, stream) = small_setup(13);
        let cfg = OnlineConfig::new(0.1, 2, 0, 80, 0.03, topo.node_dim());
        let reg = RegularizedDual::with_mu(0.1);
        let run = |stream: &mut SampleStream| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            online_saga(WarmStart::cold(topo.node_dim()), stream, &topo, &inc, &cfg, reg, &mut rng)
                .unwrap()
        };
        let a = run(&mut stream.clone());
        let b = run(&mut stream.clone());
        for (ra, rb) in a.records.iter().zip(b.records.iter()) {
            assert_eq!(ra.lam, rb.lam);
            assert_eq!(ra.queue, rb.queue);
            assert_eq!(ra.cost, rb.cost);
        }
    }

    #[test]
    fn online_saga_window_bounds_memory() {
        let (topo, inc, mut stream) = small_setup(14);
        let mut cfg = OnlineConfig::new(0.1, 1, 0, 60, 0.03, topo.node_dim());
        cfg.window = Some(16);
        let reg = RegularizedDual::with_mu(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Runs without error; the table invariant is audited inside saga_step
        // usage and the property suite.
        let trace = online_saga(
            WarmStart::cold(topo.node_dim()),
            &mut stream,
            &topo,
            &inc,
            &cfg,
            reg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(trace.len(), 60);
    }

    #[test]
    fn emitted_multipliers_are_nonneg() {
        let (topo, inc, mut stream) = small_setup(15);
        let cfg = OnlineConfig::new(0.1, 2, 0, 100, 0.03, topo.node_dim());
        let reg = RegularizedDual::with_mu(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trace = online_saga(
            WarmStart::cold(topo.node_dim()),
            &mut stream,
            &topo,
            &inc,
            &cfg,
            reg,
            &mut rng,
        )
        .unwrap();
        for r in &trace.records {
            assert!(r.lam.iter().all(|v| *v >= 0.0));
            assert!(r.gamma.as_ref().unwrap().iter().all(|v| *v >= 0.0));
            assert!(r.queue.as_ref().unwrap().iter().all(|v| *v >= 0.0));
        }
    }
}
