//! Synchronous round engine wiring adaptation, message exchange, attack
//! injection, resilient filtering, combination, and link pruning together.
//!
//! Every agent reads the previous round's committed state; updates apply
//! atomically at round end, so results never depend on agent execution
//! order. Normal agents broadcast one intermediate estimate to all neighbors;
//! compromised agents may substitute a crafted message per receiver.

use std::collections::{BTreeMap, BTreeSet};

use rand_chacha::ChaCha8Rng;

use crate::attack::AttackRuntime;
use crate::diffusion::{
    combination_weights, combine, lms_adapt, prune_links, update_gamma, WeightAssignment,
};
use crate::error::Result;
use crate::model::{
    generate_observation, AgentId, AgentState, NetworkTopology, NoiseModel, StateVector,
    TargetModel,
};
use crate::resilient::{cost_contribution, resilient_filter, FilterOutcome, ResilienceConfig, WindowStats};

/// Everything produced by one synchronous round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub iteration: u64,
    /// Weights each agent assigned this round; `None` for agents that ran
    /// the noncooperative branch of the resilient rule.
    pub weights: Vec<Option<WeightAssignment>>,
    /// Neighbors each agent discarded via the resilient filter this round.
    pub removed_neighbors: Vec<Vec<AgentId>>,
    /// Links deleted by pruning at the end of this round.
    pub pruned_links: Vec<(AgentId, AgentId)>,
    /// Squared estimation error |w_k - w_k^0(i)|^2 per agent, post-commit.
    pub errors_sq: Vec<f64>,
    /// Committed estimates per agent, post-commit.
    pub states: Vec<StateVector>,
    /// Largest |sum(weights) - 1| observed across agents this round.
    pub weight_sum_err: f64,
}

/// A running multi-agent estimation experiment.
pub struct Simulation {
    pub topology: NetworkTopology,
    pub agents: Vec<AgentState>,
    pub targets: Vec<TargetModel>,
    pub noise: Vec<NoiseModel>,
    data_streams: Vec<ChaCha8Rng>,
    pub attack: Option<AttackRuntime>,
    pub resilience: Option<ResilienceConfig>,
    /// Bilateral weight threshold below which links are deleted; `None`
    /// disables pruning.
    pub prune_threshold: Option<f64>,
    iteration: u64,
    dim: usize,
    /// Observation window capacity (always maintained; the resilient filter
    /// reads it).
    window_n: usize,
}

impl Simulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        topology: NetworkTopology,
        targets: Vec<TargetModel>,
        noise: Vec<NoiseModel>,
        data_streams: Vec<ChaCha8Rng>,
        mu: f64,
        nu: f64,
        attack: Option<AttackRuntime>,
        resilience: Option<ResilienceConfig>,
        prune_threshold: Option<f64>,
    ) -> Self {
        let n = topology.n_agents();
        assert_eq!(targets.len(), n);
        assert_eq!(noise.len(), n);
        assert_eq!(data_streams.len(), n);
        let dim = targets[0].dim();
        assert!(targets.iter().all(|t| t.dim() == dim));
        let window_n = resilience.as_ref().map_or(100, |r| r.window_n);
        let agents = (0..n).map(|_| AgentState::new(dim, mu, nu)).collect();
        Simulation {
            topology,
            agents,
            targets,
            noise,
            data_streams,
            attack,
            resilience,
            prune_threshold,
            iteration: 0,
            dim,
            window_n,
        }
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn is_compromised(&self, k: AgentId) -> bool {
        self.attack
            .as_ref()
            .is_some_and(|a| a.plan.compromised.contains(&k))
    }

    /// Runs one synchronous round: observe, adapt, exchange, track, filter,
    /// combine, commit, prune.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let i = self.iteration;
        let n = self.topology.n_agents();

        // Observation and adaptation, from the round-(i-1) snapshot.
        let mut observations = Vec::with_capacity(n);
        let mut psis = Vec::with_capacity(n);
        let mu: Vec<f64> = self.agents.iter().map(|a| a.mu).collect();
        for k in 0..n {
            let target = self.targets[k].eval(i);
            let obs =
                generate_observation(&target, &self.noise[k], &mut self.data_streams[k], i);
            psis.push(lms_adapt(&self.agents[k].w, &obs, mu[k]));
            observations.push(obs);
        }

        // Byzantine message substitution for (attacker, victim) pairs.
        let crafted = match self.attack.as_mut() {
            Some(runtime) => {
                runtime.craft_round(&self.topology, &psis, &observations, &mu, i)?
            }
            None => BTreeMap::new(),
        };

        // Per-agent update against the immutable snapshot.
        let mut new_w = Vec::with_capacity(n);
        let mut new_gamma = Vec::with_capacity(n);
        let mut weights_out: Vec<Option<WeightAssignment>> = Vec::with_capacity(n);
        let mut removed_out: Vec<Vec<AgentId>> = Vec::with_capacity(n);
        let mut weight_sum_err = 0.0f64;

        for k in 0..n {
            let agent = &self.agents[k];
            let neighborhood = self.topology.neighborhood(k);

            // Messages received this round: crafted where applicable.
            let mut messages: BTreeMap<AgentId, StateVector> = BTreeMap::new();
            for &l in &neighborhood {
                let psi = crafted
                    .get(&(l, k))
                    .cloned()
                    .unwrap_or_else(|| psis[l].clone());
                messages.insert(l, psi);
            }

            // Deviation trackers update for every current neighbor, including
            // the ones a filter may discard below.
            let mut gamma: BTreeMap<AgentId, f64> = BTreeMap::new();
            for (&l, psi) in &messages {
                let prev = agent.gamma_sq.get(&l).copied().unwrap_or(0.0);
                gamma.insert(l, update_gamma(prev, psi, &agent.w, agent.nu));
            }

            // Resilient screening (normal agents only; Byzantine nodes do not
            // follow the protocol for their own state).
            let f = self
                .resilience
                .as_ref()
                .filter(|_| !self.is_compromised(k))
                .map(|r| r.f_for(k));
            let (w_next, weights, removed) = match f {
                Some(f_k) if f_k >= neighborhood.len() => {
                    // Degenerate branch: keep only the agent's own estimate.
                    (psis[k].clone(), None, Vec::new())
                }
                Some(f_k) => {
                    // The cost window includes this round's observation; the
                    // oldest entry drops out when the buffer is already full.
                    let stored = &self.agents[k].data_window;
                    let skip = usize::from(stored.len() == self.window_n);
                    let window = stored.iter().skip(skip).chain([&observations[k]]);
                    let stats = WindowStats::from_window(window)?;
                    let mut j_cost = BTreeMap::new();
                    let mut contributions = BTreeMap::new();
                    for (&l, psi) in &messages {
                        if l == k {
                            continue;
                        }
                        let j = stats.cost(psi);
                        j_cost.insert(l, j);
                        contributions.insert(l, cost_contribution(j, gamma[&l]));
                    }
                    match resilient_filter(&contributions, &j_cost, f_k, k) {
                        FilterOutcome::DegenerateToNoncooperative => {
                            (psis[k].clone(), None, Vec::new())
                        }
                        FilterOutcome::Filtered(report) => {
                            let exclude: BTreeSet<AgentId> =
                                report.removed.iter().copied().collect();
                            let w = combination_weights(&gamma, &exclude)?;
                            let combined = combine(&w, &messages)?;
                            (combined, Some(w), report.removed)
                        }
                    }
                }
                None => {
                    let w = combination_weights(&gamma, &BTreeSet::new())?;
                    let combined = combine(&w, &messages)?;
                    (combined, Some(w), Vec::new())
                }
            };

            if let Some(w) = &weights {
                weight_sum_err = weight_sum_err.max((w.sum() - 1.0).abs());
            }
            new_w.push(w_next);
            new_gamma.push(gamma);
            weights_out.push(weights);
            removed_out.push(removed);
        }

        // Atomic commit.
        let mut errors_sq = Vec::with_capacity(n);
        for k in 0..n {
            let agent = &mut self.agents[k];
            agent.w = new_w[k].clone();
            agent.psi = psis[k].clone();
            agent.gamma_sq = std::mem::take(&mut new_gamma[k]);
            let obs = observations[k].clone();
            agent.push_observation(obs, self.window_n);
            errors_sq.push(agent.w.dist_sq(&self.targets[k].eval(i)));
        }

        // Permanent link deletion from this round's bilateral weights.
        let pruned_links = match self.prune_threshold {
            Some(threshold) => {
                let removed = prune_links(&mut self.topology, &weights_out, threshold);
                for &(a, b) in &removed {
                    self.agents[a].gamma_sq.remove(&b);
                    self.agents[b].gamma_sq.remove(&a);
                }
                removed
            }
            None => Vec::new(),
        };

        self.iteration += 1;
        Ok(RoundOutput {
            iteration: i,
            weights: weights_out,
            removed_neighbors: removed_out,
            pruned_links,
            errors_sq,
            states: new_w,
            weight_sum_err,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::streams;

    fn single_task_sim(
        n: usize,
        edges: &[(usize, usize)],
        seed: u64,
        resilience: Option<ResilienceConfig>,
        prune: Option<f64>,
    ) -> Simulation {
        let topology = NetworkTopology::from_edges(n, edges).unwrap();
        let targets = vec![
            TargetModel::Stationary {
                base: StateVector::new(vec![0.5, 0.5]),
            };
            n
        ];
        let noise = vec![NoiseModel::new(0.15, 1.0); n];
        let data_streams = (0..n).map(|k| streams::data_stream(seed, k)).collect();
        Simulation::new(
            topology,
            targets,
            noise,
            data_streams,
            0.01,
            0.01,
            None,
            resilience,
            prune,
        )
    }

    #[test]
    fn single_agent_no_neighbors_equals_lms() {
        // Diffusion with no links degenerates to the pure LMS trajectory,
        // bit for bit under the same data stream.
        let seed = 99;
        let mut sim = single_task_sim(1, &[], seed, None, None);
        let mut rng = streams::data_stream(seed, 0);
        let mut w = StateVector::zeros(2);
        let target = StateVector::new(vec![0.5, 0.5]);
        let noise = NoiseModel::new(0.15, 1.0);
        for i in 0..500 {
            let out = sim.step().unwrap();
            let obs = generate_observation(&target, &noise, &mut rng, i);
            w = lms_adapt(&w, &obs, 0.01);
            assert_eq!(out.states[0], w, "diverged at iteration {i}");
        }
    }

    #[test]
    fn noncooperative_reduction_all_links_removed() {
        let seed = 5;
        let mut linked = single_task_sim(3, &[], seed, None, None);
        let mut reference: Vec<Simulation> = (0..3)
            .map(|_| single_task_sim(1, &[], seed, None, None))
            .collect();
        // Rebuild reference streams so agent k's stream matches.
        for (k, sim) in reference.iter_mut().enumerate() {
            sim.data_streams = vec![streams::data_stream(seed, k)];
        }
        for _ in 0..200 {
            let out = linked.step().unwrap();
            for (k, sim) in reference.iter_mut().enumerate() {
                let r = sim.step().unwrap();
                assert_eq!(out.states[k], r.states[0]);
            }
        }
    }

    #[test]
    fn two_agents_zero_noise_converge() {
        let topology = NetworkTopology::from_edges(2, &[(0, 1)]).unwrap();
        let targets = vec![
            TargetModel::Stationary {
                base: StateVector::new(vec![0.5, 0.5]),
            };
            2
        ];
        let noise = vec![NoiseModel::new(1e-12, 1.0); 2];
        let data_streams = (0..2).map(|k| streams::data_stream(3, k)).collect();
        let mut sim = Simulation::new(
            topology,
            targets,
            noise,
            data_streams,
            0.01,
            0.01,
            None,
            None,
            None,
        );
        let target = StateVector::new(vec![0.5, 0.5]);
        let mut err_at_200 = 0.0;
        let mut err_at_2000 = 0.0;
        for i in 0..2000 {
            let out = sim.step().unwrap();
            let worst = out
                .states
                .iter()
                .map(|w| w.dist(&target))
                .fold(0.0, f64::max);
            if i == 199 {
                err_at_200 = worst;
            }
            if i == 1999 {
                err_at_2000 = worst;
            }
        }
        assert!(err_at_2000 < err_at_200, "{err_at_2000} !< {err_at_200}");
        assert!(err_at_2000 < 1e-4);
    }

    #[test]
    fn full_forgetting_downweights_outlier_neighbor() {
        // nu = 1 and one neighbor with a huge deviation: its weight next
        // round is below 1e-3 (weights follow the single-round deviations).
        let gamma = BTreeMap::from([(0usize, 1e-4), (1usize, 1.0)]);
        let w = combination_weights(&gamma, &BTreeSet::new()).unwrap();
        assert!(w.get(1) < 1e-3);
    }

    #[test]
    fn resilient_f_at_neighborhood_size_equals_noncooperative() {
        // F >= |N_k| for every agent: trajectories equal noncooperative LMS
        // bit for bit under shared data streams.
        let seed = 17;
        let edges = [(0, 1), (1, 2), (0, 2), (2, 3)];
        let mut resilient = single_task_sim(
            4,
            &edges,
            seed,
            Some(ResilienceConfig::uniform(5, 100)),
            Some(0.01),
        );
        let mut noncoop: Vec<(StateVector, ChaCha8Rng)> = (0..4)
            .map(|k| (StateVector::zeros(2), streams::data_stream(seed, k)))
            .collect();
        let target = StateVector::new(vec![0.5, 0.5]);
        let noise = NoiseModel::new(0.15, 1.0);
        for i in 0..300 {
            let out = resilient.step().unwrap();
            for (k, (w, rng)) in noncoop.iter_mut().enumerate() {
                let obs = generate_observation(&target, &noise, rng, i);
                *w = lms_adapt(w, &obs, 0.01);
                assert_eq!(&out.states[k], w, "agent {k} diverged at {i}");
            }
        }
    }

    #[test]
    fn iterations_count_and_window_growth() {
        let mut sim = single_task_sim(2, &[(0, 1)], 1, None, None);
        for expected in 0..150u64 {
            assert_eq!(sim.iteration(), expected);
            sim.step().unwrap();
        }
        assert_eq!(sim.agents[0].data_window.len(), 100);
    }
}
