//! Lagrangian machinery: closed-form primal recovery, instantaneous dual
//! value and gradient with optional l2 regularization, and a numeric primal
//! oracle used by the tests.
//!
//! The instantaneous Lagrangian is `L_t(x, lam) = Psi_t(x) + lam^T (A x + c)`
//! and the instantaneous dual `D_t(lam) = min_{x in X} L_t(x, lam)`, minus
//! `(eps/2) ||lam||^2` when regularized. With the quadratic costs the box
//! minimizer is a per-coordinate clip:
//!
//! ```text
//! x~_{j,i} = clip( (lam^mn_j - lam^dc_i) / (2 c^d_{j,i}), 0, B_{j,i} )
//! x_i      = clip(  lam^dc_i / (2 alpha_i e_i),           0, D_i     )
//! ```
//!
//! and the dual gradient is `A x*(lam) + c - eps lam`.

use ndarray::{Array1, Array2};

use crate::network::{
    instantaneous_cost, service_residual, Allocation, StateSample, Topology,
};
use crate::{Error, Result};

/// Nonnegative dual vector, ordered `[lam^mn_1..J; lam^dc_1..I]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplier {
    pub lam: Array1<f64>,
}

impl Multiplier {
    pub fn zeros(node_dim: usize) -> Self {
        Multiplier { lam: Array1::zeros(node_dim) }
    }

    /// Projection of an arbitrary vector onto the nonnegative orthant.
    pub fn project(v: Array1<f64>) -> Self {
        Multiplier { lam: v.mapv(|x| x.max(0.0)) }
    }

    /// Mapping-node multiplier `lam^mn_j`.
    pub fn mn(&self, j: usize) -> f64 {
        self.lam[j]
    }

    /// Data-center multiplier `lam^dc_i` for a topology with `num_mn` MNs.
    pub fn dc(&self, num_mn: usize, i: usize) -> f64 {
        self.lam[num_mn + i]
    }

    pub fn is_nonneg(&self) -> bool {
        self.lam.iter().all(|v| *v >= 0.0)
    }
}

/// Strong-concavity regularizer `(eps/2) ||lam||^2`; `eps = 0` disables it.
///
/// The default ties `eps` to the adaptation stepsize `mu`, and the same
/// regularizer is applied in the offline and online phases so both optimize
/// the same function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedDual {
    pub epsilon: f64,
}

impl RegularizedDual {
    pub fn none() -> Self {
        RegularizedDual { epsilon: 0.0 }
    }

    pub fn with_mu(mu: f64) -> Self {
        RegularizedDual { epsilon: mu }
    }
}

fn clip(v: f64, hi: f64) -> f64 {
    v.clamp(0.0, hi)
}

/// Unique minimizer of `L_t(., lam)` over the box, in closed form.
///
/// Ties at exactly 0 or the cap resolve to the boundary value; absent links
/// (bandwidth 0) carry zero flow through the degenerate box `[0, 0]`.
pub fn primal_minimizer(lam: &Multiplier, s: &StateSample, topo: &Topology) -> Allocation {
    let mut a = Allocation::zeros(topo);
    for j in 0..topo.num_mn {
        for i in 0..topo.num_dc {
            let b = topo.bandwidth[[j, i]];
            if b > 0.0 {
                let unclipped = (lam.mn(j) - lam.dc(topo.num_mn, i)) / (2.0 * topo.dist_cost[[j, i]]);
                a.routed[[j, i]] = clip(unclipped, b);
            }
        }
    }
    for i in 0..topo.num_dc {
        let coef = 2.0 * s.price[i] * topo.efficiency[i];
        a.processed[i] = clip(lam.dc(topo.num_mn, i) / coef, topo.dc_capacity[i]);
    }
    a
}

/// Instantaneous Lagrangian `Psi_t(x) + lam^T (A x + c)`.
pub fn lagrangian(
    a: &Allocation,
    lam: &Multiplier,
    s: &StateSample,
    topo: &Topology,
    incidence: &Array2<f64>,
) -> f64 {
    instantaneous_cost(a, s, topo) + lam.lam.dot(&service_residual(a, s, incidence))
}

/// Instantaneous (regularized) dual value `L_t(x*(lam), lam) - (eps/2)||lam||^2`.
pub fn dual_value(
    lam: &Multiplier,
    s: &StateSample,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> f64 {
    let x = primal_minimizer(lam, s, topo);
    lagrangian(&x, lam, s, topo, incidence) - 0.5 * reg.epsilon * lam.lam.dot(&lam.lam)
}

/// Instantaneous dual gradient `A x*(lam) + c - eps lam`.
pub fn dual_gradient(
    lam: &Multiplier,
    s: &StateSample,
    topo: &Topology,
    incidence: &Array2<f64>,
    reg: RegularizedDual,
) -> Array1<f64> {
    let x = primal_minimizer(lam, s, topo);
    let mut g = service_residual(&x, s, incidence);
    if reg.epsilon != 0.0 {
        g -= &(reg.epsilon * &lam.lam);
    }
    g
}

/// Projected-gradient reference minimizer of the instantaneous Lagrangian.
///
/// Independent of the closed-form inversion in [`primal_minimizer`]: it
/// descends `grad Psi(x) + A^T lam` over the box with stepsize `1/L~`, where
/// `L~` is the cost-gradient Lipschitz bound, until `||x_{k+1} - x_k||` falls
/// below `1e-10`. Exists so tests can cross-check the closed form.
pub fn oracle_primal_minimizer(
    lam: &Multiplier,
    s: &StateSample,
    topo: &Topology,
    incidence: &Array2<f64>,
) -> Result<Allocation> {
    const TOL: f64 = 1e-10;
    const MAX_ITERS: usize = 1_000_000;

    // Quadratic coefficients of Psi per flattened coordinate.
    let dim = topo.decision_dim();
    let mut coef = Array1::zeros(dim);
    for j in 0..topo.num_mn {
        for i in 0..topo.num_dc {
            coef[topo.link_col(j, i)] = topo.dist_cost[[j, i]];
        }
    }
    for i in 0..topo.num_dc {
        coef[topo.processed_col(i)] = s.price[i] * topo.efficiency[i];
    }
    let lipschitz = 2.0 * coef.iter().cloned().fold(0.0_f64, f64::max);
    let step = 1.0 / lipschitz;

    let upper = topo.decision_upper();
    let at_lam = incidence.t().dot(&lam.lam);
    let mut x: Array1<f64> = Array1::zeros(dim);
    for _ in 0..MAX_ITERS {
        let grad: Array1<f64> = 2.0 * (&coef * &x) + &at_lam;
        let next: Array1<f64> =
            Array1::from_iter((0..dim).map(|e| (x[e] - step * grad[e]).clamp(0.0, upper[e])));
        let delta = (&next - &x).mapv(|v| v * v).sum().sqrt();
        x = next;
        if delta <= TOL {
            return Ok(Allocation::from_flat(&x, topo));
        }
    }
    Err(Error::NonConvergence(
        "primal oracle exceeded its iteration cap".into(),
    ))
}
