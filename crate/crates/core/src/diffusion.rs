//! One synchronous step of LMS adaptation plus the adaptive relative-variance
//! combination rule and link pruning.
//!
//! The combination weights follow
//! `a_lk prop gamma_lk^-2`, normalized over the retained neighborhood, where
//! `gamma_lk^2` exponentially smooths the squared deviation of a neighbor's
//! intermediate estimate from the agent's own current estimate. Neighbors
//! whose tracker sits at zero are floored at [`GAMMA_FLOOR`] so the weight
//! formula matches its `gamma -> 0` limit without dividing by zero; at a cold
//! start every neighbor is floored, which yields uniform averaging.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentId, NetworkTopology, Observation, StateVector};

/// Floor applied to squared-deviation trackers before inversion.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// Combination weights an agent assigns to its retained neighbors this round.
///
/// Weights are non-negative, keyed by neighbor id, and sum to 1 within 1e-12;
/// ids absent from the map carry weight 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightAssignment {
    pub weights: BTreeMap<AgentId, f64>,
}

impl WeightAssignment {
    pub fn get(&self, l: AgentId) -> f64 {
        self.weights.get(&l).copied().unwrap_or(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.weights.values().sum()
    }
}

/// LMS adaptation: `psi = w_prev + mu * u^T * (d - u . w_prev)`.
pub fn lms_adapt(w_prev: &StateVector, obs: &Observation, mu: f64) -> StateVector {
    debug_assert_eq!(w_prev.dim(), obs.u.dim());
    let innovation = obs.d - obs.u.dot(w_prev);
    w_prev.add_scaled(mu * innovation, &obs.u)
}

/// Exponentially smoothed squared deviation:
/// `gamma^2(i) = (1 - nu) * gamma^2(i-1) + nu * |psi_l - w_prev|^2`.
pub fn update_gamma(
    gamma_sq_prev: f64,
    psi_l: &StateVector,
    w_prev: &StateVector,
    nu: f64,
) -> f64 {
    debug_assert!(gamma_sq_prev >= 0.0);
    debug_assert!(nu > 0.0 && nu <= 1.0);
    (1.0 - nu) * gamma_sq_prev + nu * psi_l.dist_sq(w_prev)
}

/// Relative-variance combination weights over the retained neighbor set:
/// `a_lk = gamma_lk^-2 / sum_m gamma_mk^-2`, with every tracker floored at
/// [`GAMMA_FLOOR`].
///
/// Returns [`Error::AllExcluded`] when `exclude` empties the candidate set.
pub fn combination_weights(
    gamma_sq: &BTreeMap<AgentId, f64>,
    exclude: &BTreeSet<AgentId>,
) -> Result<WeightAssignment> {
    let mut inv = BTreeMap::new();
    let mut total = 0.0;
    for (&l, &g) in gamma_sq {
        if exclude.contains(&l) {
            continue;
        }
        debug_assert!(g >= 0.0);
        let x = 1.0 / g.max(GAMMA_FLOOR);
        inv.insert(l, x);
        total += x;
    }
    if inv.is_empty() {
        return Err(Error::AllExcluded);
    }
    let weights = inv.into_iter().map(|(l, x)| (l, x / total)).collect();
    Ok(WeightAssignment { weights })
}

/// Convex combination of neighbor estimates: `w = sum_l a_lk * psi_l`.
///
/// Every weighted id must be present in `messages` with a matching dimension.
pub fn combine(
    weights: &WeightAssignment,
    messages: &BTreeMap<AgentId, StateVector>,
) -> Result<StateVector> {
    let mut iter = weights.weights.iter();
    let (&first_id, &first_w) = iter
        .next()
        .expect("weight assignments are never empty by construction");
    let first = messages
        .get(&first_id)
        .ok_or(Error::DimensionMismatch {
            expected: weights.weights.len(),
            got: messages.len(),
        })?;
    let dim = first.dim();
    let mut out = first.scale(first_w);
    for (&l, &a) in iter {
        let psi = messages.get(&l).ok_or(Error::DimensionMismatch {
            expected: weights.weights.len(),
            got: messages.len(),
        })?;
        if psi.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: psi.dim(),
            });
        }
        out = out.add_scaled(a, psi);
    }
    Ok(out)
}

/// Deletes every link whose weights fell below `threshold` on *both* sides
/// this round. A side that assigned no weight to the neighbor (filtered out,
/// or running the noncooperative branch) yields no evidence and blocks the
/// deletion. Removals are permanent; the deleted links are returned for the
/// trace.
pub fn prune_links(
    network: &mut NetworkTopology,
    assignments: &[Option<WeightAssignment>],
    threshold: f64,
) -> Vec<(AgentId, AgentId)> {
    debug_assert!(threshold > 0.0);
    let mut removed = Vec::new();
    for (k, l) in network.edges() {
        let (Some(wk), Some(wl)) = (&assignments[k], &assignments[l]) else {
            continue;
        };
        let (Some(&a_lk), Some(&a_kl)) = (wk.weights.get(&l), wl.weights.get(&k)) else {
            continue;
        };
        if a_lk < threshold && a_kl < threshold {
            removed.push((k, l));
        }
    }
    for &(k, l) in &removed {
        network.remove_link(k, l);
    }
    removed
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
    fn lms_adapt_zero_innovation_is_identity() {
        let w = sv(&[0.3, -0.2]);
        let o = obs(sv(&[0.3, -0.2]).dot(&sv(&[1.5, 0.5])), &[1.5, 0.5]);
        let psi = lms_adapt(&w, &o, 0.05);
        assert!(psi.dist(&w) < 1e-15);
    }

    #[test]
    fn lms_adapt_hand_example() {
        let psi = lms_adapt(&sv(&[0.0, 0.0]), &obs(0.5, &[1.0, 0.0]), 0.01);
        assert!((psi[0] - 0.005).abs() < 1e-15);
        assert_eq!(psi[1], 0.0);
    }

    #[test]
    fn lms_adapt_zero_step_size_is_identity() {
        let w = sv(&[1.0, 2.0]);
        let psi = lms_adapt(&w, &obs(-3.0, &[0.7, 0.1]), 0.0);
        assert_eq!(psi, w);
    }

    #[test]
    fn update_gamma_zero_history_zero_deviation() {
        let w = sv(&[0.4, 0.4]);
        assert_eq!(update_gamma(0.0, &w.clone(), &w, 0.01), 0.0);
    }

    #[test]
    fn update_gamma_hand_example() {
        // 0.99 * 1 + 0.01 * 4 = 1.03
        let g = update_gamma(1.0, &sv(&[2.0, 0.0]), &sv(&[0.0, 0.0]), 0.01);
        assert!((g - 1.03).abs() < 1e-12);
    }

    #[test]
    fn update_gamma_full_forgetting() {
        let g = update_gamma(123.0, &sv(&[1.0, 1.0]), &sv(&[0.0, 0.0]), 1.0);
        assert!((g - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weights_symmetric_pair() {
        let gamma = BTreeMap::from([(1, 1.0), (2, 1.0)]);
        let w = combination_weights(&gamma, &BTreeSet::new()).unwrap();
        assert!((w.get(1) - 0.5).abs() < 1e-15);
        assert!((w.get(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_inverse_proportional() {
        // (1/1) / (1/1 + 1/3) = 3/4
        let gamma = BTreeMap::from([(1, 1.0), (2, 3.0)]);
        let w = combination_weights(&gamma, &BTreeSet::new()).unwrap();
        assert!((w.get(1) - 0.75).abs() < 1e-12);
        assert!((w.get(2) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn weights_zero_gamma_takes_all() {
        let gamma = BTreeMap::from([(1, 0.0), (2, 5.0)]);
        let w = combination_weights(&gamma, &BTreeSet::new()).unwrap();
        assert!((w.get(1) - 1.0).abs() < 1e-12);
        assert!(w.get(2) < 1e-12);
    }

    #[test]
    fn weights_floored_entries_share_equally() {
        let gamma = BTreeMap::from([(1, 0.0), (2, 0.0), (3, 1.0)]);
        let w = combination_weights(&gamma, &BTreeSet::new()).unwrap();
        assert!((w.get(1) - w.get(2)).abs() < 1e-15);
        assert!((w.get(1) - 0.5).abs() < 1e-11);
    }

    #[test]
    fn weights_all_excluded_errors() {
        let gamma = BTreeMap::from([(1, 1.0)]);
        let exclude = BTreeSet::from([1]);
        assert!(matches!(
            combination_weights(&gamma, &exclude),
            Err(Error::AllExcluded)
        ));
    }

    #[test]
    fn combine_identity_and_midpoint() {
        let msgs = BTreeMap::from([(4, sv(&[0.0, 0.0])), (7, sv(&[1.0, 1.0]))]);
        let single = WeightAssignment {
            weights: BTreeMap::from([(7, 1.0)]),
        };
        assert_eq!(combine(&single, &msgs).unwrap(), sv(&[1.0, 1.0]));

        let half = WeightAssignment {
            weights: BTreeMap::from([(4, 0.5), (7, 0.5)]),
        };
        let mid = combine(&half, &msgs).unwrap();
        assert!((mid[0] - 0.5).abs() < 1e-15);
        assert!((mid[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn combine_hand_example() {
        let msgs = BTreeMap::from([(0, sv(&[1.0, 0.0])), (1, sv(&[0.0, 1.0]))]);
        let w = WeightAssignment {
            weights: BTreeMap::from([(0, 0.75), (1, 0.25)]),
        };
        let out = combine(&w, &msgs).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-15);
        assert!((out[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn combine_dimension_mismatch() {
        let msgs = BTreeMap::from([(0, sv(&[1.0, 0.0])), (1, sv(&[1.0, 0.0, 0.0]))]);
        let w = WeightAssignment {
            weights: BTreeMap::from([(0, 0.5), (1, 0.5)]),
        };
        assert!(matches!(
            combine(&w, &msgs),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn prune_requires_both_sides_below_threshold() {
        let mk = |a_on_b: f64, b_on_a: f64| {
            vec![
                Some(WeightAssignment {
                    weights: BTreeMap::from([(0, 1.0 - a_on_b), (1, a_on_b)]),
                }),
                Some(WeightAssignment {
                    weights: BTreeMap::from([(0, b_on_a), (1, 1.0 - b_on_a)]),
                }),
            ]
        };

        // One side above threshold: kept.
        let mut t = NetworkTopology::from_edges(2, &[(0, 1)]).unwrap();
        let removed = prune_links(&mut t, &mk(0.5, 0.005), 0.01);
        assert!(removed.is_empty());
        assert!(t.is_adjacent(0, 1));

        // Both sides below: removed.
        let removed = prune_links(&mut t, &mk(0.005, 0.005), 0.01);
        assert_eq!(removed, vec![(0, 1)]);
        assert!(!t.is_adjacent(0, 1));
    }

    #[test]
    fn prune_skips_links_without_weight_evidence() {
        let mut t = NetworkTopology::from_edges(2, &[(0, 1)]).unwrap();
        let assignments = vec![
            Some(WeightAssignment {
                weights: BTreeMap::from([(0, 1.0)]),
            }),
            None,
        ];
        assert!(prune_links(&mut t, &assignments, 0.01).is_empty());
        assert!(t.is_adjacent(0, 1));
    }

    proptest::proptest! {
        /// Weight simplex: sums to 1 within 1e-12, all entries in [0, 1].
        #[test]
        fn weights_form_simplex(
            gammas in proptest::collection::btree_map(0usize..10, 0.0f64..10.0, 1..8)
        ) {
            let w = combination_weights(&gammas, &BTreeSet::new()).unwrap();
            proptest::prop_assert!((w.sum() - 1.0).abs() <= 1e-12);
            for &a in w.weights.values() {
                proptest::prop_assert!((0.0..=1.0).contains(&a));
            }
        }

        /// Scale equivariance: scaling every gamma^2 by c > 0 leaves the
        /// weights unchanged (the rule is a ratio). Exact when no entry
        /// crosses the floor.
        #[test]
        fn weights_scale_equivariant(
            gammas in proptest::collection::btree_map(0usize..10, 1e-6f64..10.0, 1..8),
            c in 1e-3f64..1e3,
        ) {
            let base = combination_weights(&gammas, &BTreeSet::new()).unwrap();
            let scaled_map = gammas.iter().map(|(&l, &g)| (l, g * c)).collect();
            let scaled = combination_weights(&scaled_map, &BTreeSet::new()).unwrap();
            for (&l, &a) in &base.weights {
                proptest::prop_assert!((a - scaled.get(l)).abs() < 1e-12);
            }
        }
    }
}
