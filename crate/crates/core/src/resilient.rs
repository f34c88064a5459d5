//! F-local resilient aggregation: estimate each neighbor's contribution to
//! the local cost, discard the F largest contributors, and renormalize the
//! combination weights over what remains.
//!
//! The contribution of neighbor `l` to agent `k`'s cost is
//! `c_lk = J_k(psi_l) / gamma_lk^4`: a message that both fits `k`'s recent
//! data poorly and would command a large combination weight scores highest.
//! A deception attacker necessarily keeps its deviation tracker near zero, so
//! its contribution dwarfs every honest neighbor's and it is discarded first.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::GAMMA_FLOOR;
use crate::error::{Error, Result};
use crate::model::{AgentId, Observation, StateVector};

/// F-local resilience parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilienceConfig {
    /// Assumed maximum number of compromised neighbors per normal node.
    /// Uniform across agents; per-agent values override it when present.
    pub f: usize,
    /// Per-agent override of `f`, keyed by agent id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub f_per_agent: BTreeMap<AgentId, usize>,
    /// Length of the cost-estimation data window.
    pub window_n: usize,
}

impl ResilienceConfig {
    pub fn uniform(f: usize, window_n: usize) -> Self {
        assert!(window_n >= 1);
        ResilienceConfig {
            f,
            f_per_agent: BTreeMap::new(),
            window_n,
        }
    }

    pub fn f_for(&self, agent: AgentId) -> usize {
        self.f_per_agent.get(&agent).copied().unwrap_or(self.f)
    }
}

/// Sufficient statistics of a data window, letting the quadratic cost of any
/// candidate state be evaluated without rescanning the observations.
///
/// `J(psi) = mean_j (d_j - u_j . psi)^2
///         = (sum d^2 - 2 psi . sum(d u) + psi^T (sum u^T u) psi) / n`
#[derive(Clone, Debug)]
pub struct WindowStats {
    n: usize,
    dim: usize,
    sum_d_sq: f64,
    sum_du: Vec<f64>,
    /// Row-major M x M Gram matrix of the regressors.
    sum_uu: Vec<f64>,
}

impl WindowStats {
    pub fn from_window<'a>(window: impl IntoIterator<Item = &'a Observation>) -> Result<Self> {
        let mut n = 0usize;
        let mut dim = 0usize;
        let mut sum_d_sq = 0.0;
        let mut sum_du = Vec::new();
        let mut sum_uu = Vec::new();
        for obs in window {
            if n == 0 {
                dim = obs.u.dim();
                sum_du = vec![0.0; dim];
                sum_uu = vec![0.0; dim * dim];
            }
            n += 1;
            sum_d_sq += obs.d * obs.d;
            let u = obs.u.as_slice();
            for (a, &ua) in u.iter().enumerate() {
                sum_du[a] += obs.d * ua;
                for (b, &ub) in u.iter().enumerate() {
                    sum_uu[a * dim + b] += ua * ub;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyWindow);
        }
        Ok(WindowStats {
            n,
            dim,
            sum_d_sq,
            sum_du,
            sum_uu,
        })
    }

    /// Mean squared residual of `psi` against the windowed observations.
    pub fn cost(&self, psi: &StateVector) -> f64 {
        debug_assert_eq!(psi.dim(), self.dim);
        let p = psi.as_slice();
        let mut cross = 0.0;
        let mut quad = 0.0;
        for a in 0..self.dim {
            cross += p[a] * self.sum_du[a];
            for b in 0..self.dim {
                quad += p[a] * self.sum_uu[a * self.dim + b] * p[b];
            }
        }
        // Quadratic forms are non-negative up to rounding; clamp the result.
        ((self.sum_d_sq - 2.0 * cross + quad) / self.n as f64).max(0.0)
    }
}

/// Moving-average estimate of `J_k(psi_l)` over the agent's stored window.
/// Before the window is full the mean runs over what exists; an empty window
/// is an error.
pub fn estimate_cost<'a>(
    psi_l: &StateVector,
    window: impl IntoIterator<Item = &'a Observation>,
) -> Result<f64> {
    Ok(WindowStats::from_window(window)?.cost(psi_l))
}

/// Cost contribution `c_lk = J_k(psi_l) / gamma_lk^4`, with the same tracker
/// floor as the combination weights.
pub fn cost_contribution(j_cost: f64, gamma_sq: f64) -> f64 {
    let g = gamma_sq.max(GAMMA_FLOOR);
    j_cost / (g * g)
}

/// Outcome of the per-round resilient filter.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterOutcome {
    /// `F >= |N_k|`: the agent keeps only its own intermediate estimate.
    DegenerateToNoncooperative,
    /// Discard the listed neighbors from this round's combination.
    Filtered(CostReport),
}

/// Per-round record of the cost screening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Estimated cost of each non-self neighbor's message.
    pub j_cost: BTreeMap<AgentId, f64>,
    /// Cost contributions `c_lk`.
    pub contribution: BTreeMap<AgentId, f64>,
    /// The discarded neighbors, largest contribution first.
    pub removed: Vec<AgentId>,
}

/// Selects the F largest cost contributors for removal. Ties break toward
/// removing the smaller agent id first. `contributions` must cover exactly
/// the non-self neighbors; `neighborhood_size` counts the self-inclusive
/// neighborhood (`|N_k| = contributions.len() + 1`).
pub fn resilient_filter(
    contributions: &BTreeMap<AgentId, f64>,
    j_cost: &BTreeMap<AgentId, f64>,
    f: usize,
    self_id: AgentId,
) -> FilterOutcome {
    debug_assert!(!contributions.contains_key(&self_id));
    let neighborhood_size = contributions.len() + 1;
    if f >= neighborhood_size {
        return FilterOutcome::DegenerateToNoncooperative;
    }
    // Sort by contribution descending, then by id ascending.
    let mut order: Vec<(AgentId, f64)> = contributions.iter().map(|(&l, &c)| (l, c)).collect();
    order.sort_by(|(ida, ca), (idb, cb)| {
        cb.partial_cmp(ca)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ida.cmp(idb))
    });
    let removed = order.into_iter().take(f).map(|(l, _)| l).collect();
    FilterOutcome::Filtered(CostReport {
        j_cost: j_cost.clone(),
        contribution: contributions.clone(),
        removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f64]) -> StateVector {
        StateVector::new(v.to_vec())
    }

    fn obs(d: f64, u: &[f64]) -> Observation {
        Observation {
            d,
            u: sv(u),
            iteration: 0,
        }
    }

    #[test]
    fn cost_perfect_fit_is_zero() {
        let psi = sv(&[0.5, 0.25]);
        let window = [obs(psi.dot(&sv(&[2.0, 4.0])), &[2.0, 4.0])];
        let j = estimate_cost(&psi, &window).unwrap();
        assert!(j.abs() < 1e-15);
    }

    #[test]
    fn cost_hand_example() {
        let window = [obs(1.0, &[1.0, 0.0]), obs(0.0, &[0.0, 1.0])];
        let j = estimate_cost(&sv(&[0.0, 0.0]), &window).unwrap();
        assert!((j - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cost_true_target_zero_noise_window() {
        let target = sv(&[0.3, -0.8]);
        let regs = [[1.2, -0.3], [0.4, 0.9], [-0.7, 0.2]];
        let window: Vec<Observation> = regs
            .iter()
            .map(|u| obs(target.dot(&sv(u)), u))
            .collect();
        let j = estimate_cost(&target, &window).unwrap();
        assert!(j.abs() < 1e-15);
    }

    #[test]
    fn cost_empty_window_errors() {
        assert!(matches!(
            estimate_cost(&sv(&[0.0, 0.0]), &[]),
            Err(Error::EmptyWindow)
        ));
    }

    #[test]
    fn cost_matches_naive_evaluation() {
        let window = [
            obs(0.7, &[1.0, -0.5]),
            obs(-0.2, &[0.3, 0.8]),
            obs(1.4, &[-1.1, 0.6]),
        ];
        let psi = sv(&[0.4, -0.9]);
        let naive: f64 = window
            .iter()
            .map(|o| {
                let r = o.d - o.u.dot(&psi);
                r * r
            })
            .sum::<f64>()
            / window.len() as f64;
        let j = estimate_cost(&psi, &window).unwrap();
        assert!((j - naive).abs() < 1e-12);
    }

    #[test]
    fn contribution_examples() {
        assert_eq!(cost_contribution(0.0, 3.7), 0.0);
        assert!((cost_contribution(0.5, 0.1) - 50.0).abs() < 1e-9);
        // Floor behavior: huge but finite.
        let c = cost_contribution(0.5, 0.0);
        assert!((c - 0.5 / (GAMMA_FLOOR * GAMMA_FLOOR)).abs() < 1.0);
        assert!(c.is_finite());
    }

    #[test]
    fn filter_f_zero_removes_nothing() {
        let contributions = BTreeMap::from([(1, 5.0), (2, 3.0)]);
        let j = BTreeMap::from([(1, 1.0), (2, 1.0)]);
        match resilient_filter(&contributions, &j, 0, 0) {
            FilterOutcome::Filtered(report) => assert!(report.removed.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn filter_removes_largest() {
        let contributions = BTreeMap::from([(1, 50.0), (2, 1.0), (3, 2.0)]);
        let j = BTreeMap::from([(1, 1.0), (2, 1.0), (3, 1.0)]);
        match resilient_filter(&contributions, &j, 1, 0) {
            FilterOutcome::Filtered(report) => assert_eq!(report.removed, vec![1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn filter_degenerates_when_f_covers_neighborhood() {
        // |N_k| = 3 including self, F = 3.
        let contributions = BTreeMap::from([(1, 1.0), (2, 2.0)]);
        let j = BTreeMap::from([(1, 1.0), (2, 1.0)]);
        assert_eq!(
            resilient_filter(&contributions, &j, 3, 0),
            FilterOutcome::DegenerateToNoncooperative
        );
    }

    #[test]
    fn filter_tie_breaks_toward_smaller_id() {
        let contributions = BTreeMap::from([(4, 2.0), (2, 2.0), (9, 2.0)]);
        let j = BTreeMap::from([(4, 1.0), (2, 1.0), (9, 1.0)]);
        match resilient_filter(&contributions, &j, 2, 0) {
            FilterOutcome::Filtered(report) => assert_eq!(report.removed, vec![2, 4]),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        /// |removed| = min(F, |N_k \ {self}|) and self is never removed.
        #[test]
        fn filter_cardinality_invariant(
            contributions in proptest::collection::btree_map(1usize..12, 0.0f64..100.0, 1..10),
            f in 0usize..12,
        ) {
            let j: BTreeMap<_, _> = contributions.keys().map(|&l| (l, 1.0)).collect();
            match resilient_filter(&contributions, &j, f, 0) {
                FilterOutcome::DegenerateToNoncooperative => {
                    proptest::prop_assert!(f >= contributions.len() + 1);
                }
                FilterOutcome::Filtered(report) => {
                    proptest::prop_assert_eq!(
                        report.removed.len(),
                        f.min(contributions.len())
                    );
                    proptest::prop_assert!(!report.removed.contains(&0));
                }
            }
        }
    }
}
