//! Static network description, cost evaluation, incidence algebra, and
//! queue dynamics for the MN-DC workload allocation model.
//!
//! Conventions used throughout the crate:
//! - `I = num_dc` data centers, `J = num_mn` mapping nodes;
//! - link matrices are `J x I` (row = mapping node, column = data center),
//!   with bandwidth 0 encoding an absent link;
//! - the decision vector flattens as `[x~_1^T, ..., x~_J^T, x_1, ..., x_I]`
//!   of length `I*J + I`, i.e. link column `e(j,i) = j*I + i` followed by
//!   the per-DC processed-workload columns;
//! - queue and multiplier vectors are ordered `[MN block; DC block]` of
//!   length `I + J`. This matches the arrival vector `c_t = [v_1..v_J, 0..0]`
//!   and is the wire ordering everywhere (CSV columns included).

use ndarray::{Array1, Array2};

use crate::scenario::ScenarioConfig;
use crate::{linalg, Error, Result};

/// Static description of the MN-DC network.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Number of data centers `I`.
    pub num_dc: usize,
    /// Number of mapping nodes `J`.
    pub num_mn: usize,
    /// Link bandwidths `B_{j,i}` (`J x I`, workload units per slot, 0 = no link).
    pub bandwidth: Array2<f64>,
    /// Per-DC processing capacities `D_i` (positive).
    pub dc_capacity: Array1<f64>,
    /// Distribution cost coefficients `c^d_{j,i}` (cost per squared workload unit).
    pub dist_cost: Array2<f64>,
    /// Per-DC energy efficiency factors `e_i` (time-invariant).
    pub efficiency: Array1<f64>,
}

impl Topology {
    /// Dimension of the flattened decision vector, `I*J + I`.
    pub fn decision_dim(&self) -> usize {
        self.num_dc * self.num_mn + self.num_dc
    }

    /// Dimension of the queue/multiplier vectors, `I + J`.
    pub fn node_dim(&self) -> usize {
        self.num_dc + self.num_mn
    }

    /// Column index of link (MN `j`, DC `i`) in the flattened decision vector.
    pub fn link_col(&self, j: usize, i: usize) -> usize {
        j * self.num_dc + i
    }

    /// Column index of DC `i`'s processed-workload entry.
    pub fn processed_col(&self, i: usize) -> usize {
        self.num_dc * self.num_mn + i
    }

    /// Structural validation: dimensions, sign constraints, and the
    /// requirement that every mapping node has at least one outgoing link.
    pub fn validate(&self) -> Result<()> {
        let (i, j) = (self.num_dc, self.num_mn);
        if i == 0 || j == 0 {
            return Err(Error::InvalidTopology("need at least one DC and one MN".into()));
        }
        if self.bandwidth.dim() != (j, i) || self.dist_cost.dim() != (j, i) {
            return Err(Error::InvalidTopology("bandwidth/dist_cost must be J x I".into()));
        }
        if self.dc_capacity.len() != i || self.efficiency.len() != i {
            return Err(Error::InvalidTopology("dc_capacity/efficiency must have length I".into()));
        }
        if self.bandwidth.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::InvalidTopology("bandwidths must be finite and >= 0".into()));
        }
        if self.dc_capacity.iter().any(|d| !d.is_finite() || *d <= 0.0) {
            return Err(Error::InvalidTopology("capacities must be finite and > 0".into()));
        }
        if self.efficiency.iter().any(|e| !e.is_finite() || *e <= 0.0) {
            return Err(Error::InvalidTopology("efficiencies must be finite and > 0".into()));
        }
        for jj in 0..j {
            for ii in 0..i {
                let b = self.bandwidth[[jj, ii]];
                let c = self.dist_cost[[jj, ii]];
                if b > 0.0 && (!c.is_finite() || c <= 0.0) {
                    return Err(Error::InvalidTopology(format!(
                        "dist_cost[{jj},{ii}] must be finite and > 0 on a live link"
                    )));
                }
            }
            if (0..i).all(|ii| self.bandwidth[[jj, ii]] == 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "mapping node {jj} has no outgoing link"
                )));
            }
        }
        Ok(())
    }

    /// Box upper bound on the flattened decision vector: bandwidths first,
    /// then capacities.
    pub fn decision_upper(&self) -> Array1<f64> {
        let mut x = Array1::zeros(self.decision_dim());
        for j in 0..self.num_mn {
            for i in 0..self.num_dc {
                x[self.link_col(j, i)] = self.bandwidth[[j, i]];
            }
        }
        for i in 0..self.num_dc {
            x[self.processed_col(i)] = self.dc_capacity[i];
        }
        x
    }
}

/// One realization of the random state: prices, renewables and arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    /// Energy transaction prices `alpha_i` ($/kWh), positive.
    pub price: Array1<f64>,
    /// Renewable supply `P^r_i` (kWh), nonnegative.
    pub renewable: Array1<f64>,
    /// Workload arrivals `v_j` (workload units), nonnegative.
    pub arrivals: Array1<f64>,
}

impl StateSample {
    /// Zero-padded arrival vector `c = [v_1..v_J, 0..0]` of length `I + J`.
    pub fn arrival_vector(&self, num_dc: usize) -> Array1<f64> {
        let j = self.arrivals.len();
        let mut c = Array1::zeros(j + num_dc);
        c.slice_mut(ndarray::s![..j]).assign(&self.arrivals);
        c
    }
}

/// Per-slot decision: routed workloads per link and processed workloads per DC.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// Routed workloads `x~_{j,i}` (`J x I`).
    pub routed: Array2<f64>,
    /// Processed workloads `x_i` per DC.
    pub processed: Array1<f64>,
}

impl Allocation {
    /// All-zero allocation for the given topology.
    pub fn zeros(topo: &Topology) -> Self {
        Allocation {
            routed: Array2::zeros((topo.num_mn, topo.num_dc)),
            processed: Array1::zeros(topo.num_dc),
        }
    }

    /// Canonical flattening `[x~_1^T, ..., x~_J^T, x_1, ..., x_I]`.
    pub fn flatten(&self) -> Array1<f64> {
        let (j, i) = self.routed.dim();
        let mut x = Array1::zeros(i * j + i);
        for jj in 0..j {
            for ii in 0..i {
                x[jj * i + ii] = self.routed[[jj, ii]];
            }
        }
        for ii in 0..i {
            x[i * j + ii] = self.processed[ii];
        }
        x
    }

    /// Inverse of [`Allocation::flatten`] for a given topology.
    pub fn from_flat(x: &Array1<f64>, topo: &Topology) -> Self {
        let (i, j) = (topo.num_dc, topo.num_mn);
        let mut routed = Array2::zeros((j, i));
        for jj in 0..j {
            for ii in 0..i {
                routed[[jj, ii]] = x[jj * i + ii];
            }
        }
        let processed = Array1::from_iter((0..i).map(|ii| x[i * j + ii]));
        Allocation { routed, processed }
    }

    /// True when the allocation lies inside the box `[0, bandwidth] x [0, capacity]`.
    pub fn in_box(&self, topo: &Topology) -> bool {
        let routed_ok = self
            .routed
            .indexed_iter()
            .all(|((j, i), v)| *v >= 0.0 && *v <= topo.bandwidth[[j, i]]);
        let processed_ok = self
            .processed
            .iter()
            .zip(topo.dc_capacity.iter())
            .all(|(x, d)| *x >= 0.0 && *x <= *d);
        routed_ok && processed_ok
    }
}

/// Physical queue vector, ordered `[MN block; DC block]`, always nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub q: Array1<f64>,
}

impl QueueState {
    pub fn zeros(node_dim: usize) -> Self {
        QueueState { q: Array1::zeros(node_dim) }
    }
}

/// Node-incidence matrix `A` of shape `(I+J) x (IJ+I)`.
///
/// Mapping-node row `j` carries `-1` on every live link column `e(j,i)`
/// (outgoing routes drain the MN queue). DC row `J+i` carries `+1` on the
/// same columns (incoming routes fill the DC queue) and `-1` on the
/// processed-workload column `IJ+i`. Columns of absent links stay all-zero.
pub fn build_incidence(topo: &Topology) -> Array2<f64> {
    let (i_dim, j_dim) = (topo.num_dc, topo.num_mn);
    let mut a = Array2::zeros((topo.node_dim(), topo.decision_dim()));
    for j in 0..j_dim {
        for i in 0..i_dim {
            if topo.bandwidth[[j, i]] > 0.0 {
                let e = topo.link_col(j, i);
                a[[j, e]] = -1.0;
                a[[j_dim + i, e]] = 1.0;
            }
        }
    }
    for i in 0..i_dim {
        a[[j_dim + i, topo.processed_col(i)]] = -1.0;
    }
    a
}

/// Instantaneous network cost
/// `Psi_t = sum_i alpha_i (e_i x_i^2 - P^r_i) + sum_{j,i} c^d_{j,i} x~_{j,i}^2`.
///
/// May be negative when renewable energy is sold back to the market.
pub fn instantaneous_cost(a: &Allocation, s: &StateSample, topo: &Topology) -> f64 {
    let mut cost = 0.0;
    for i in 0..topo.num_dc {
        let x = a.processed[i];
        cost += s.price[i] * (topo.efficiency[i] * x * x - s.renewable[i]);
    }
    for j in 0..topo.num_mn {
        for i in 0..topo.num_dc {
            let r = a.routed[[j, i]];
            cost += topo.dist_cost[[j, i]] * r * r;
        }
    }
    cost
}

/// Per-node service residual `A x + c`; this is also the instantaneous dual
/// gradient at the multiplier that produced `a`.
pub fn service_residual(a: &Allocation, s: &StateSample, incidence: &Array2<f64>) -> Array1<f64> {
    let num_dc = incidence.nrows() - s.arrivals.len();
    incidence.dot(&a.flatten()) + s.arrival_vector(num_dc)
}

/// Queue recursion `q_{t+1} = [q_t + A x_t + c_t]^+`.
pub fn queue_update(q: &QueueState, residual: &Array1<f64>) -> QueueState {
    QueueState {
        q: (&q.q + residual).mapv(|v| v.max(0.0)),
    }
}

/// Worst-case strong-convexity modulus `sigma` of the cost over the state
/// support, and the dual gradient Lipschitz constant `L = rho(A^T A) / sigma`.
///
/// `sigma = 2 min( min_i alpha_min e_i, min_links c^d )`, taken over the
/// scenario's price support and the live links, so that `eta = 1/(3L)` is a
/// single constant valid for every slot. The spectral radius is computed by
/// power iteration to relative tolerance 1e-10.
pub fn smoothness_constants(topo: &Topology, scen: &ScenarioConfig) -> Result<(f64, f64)> {
    let alpha_min = scen.price_support[0];
    if alpha_min <= 0.0 {
        return Err(Error::InvalidConfig("price support must be strictly positive".into()));
    }
    let mut min_coef = f64::INFINITY;
    for i in 0..topo.num_dc {
        min_coef = min_coef.min(alpha_min * topo.efficiency[i]);
    }
    for j in 0..topo.num_mn {
        for i in 0..topo.num_dc {
            if topo.bandwidth[[j, i]] > 0.0 {
                min_coef = min_coef.min(topo.dist_cost[[j, i]]);
            }
        }
    }
    if !min_coef.is_finite() || min_coef <= 0.0 {
        return Err(Error::InvalidConfig(
            "cost is not strongly convex: a quadratic coefficient is zero".into(),
        ));
    }
    let sigma = 2.0 * min_coef;
    let a = build_incidence(topo);
    let ata = a.t().dot(&a);
    let rho = linalg::spectral_radius_symmetric(&ata, 1e-10)?;
    Ok((sigma, rho / sigma))
}
