//! Byzantine deception attacks: message crafting toward an attacker-selected
//! state, exact victim-state reconstruction from broadcast messages, an
//! optional step-size guard, and network-wide planning via a greedy
//! dominating set.
//!
//! A compromised node never disturbs a victim directly; it sends
//! `psi_a = w_victim + r * (x_i - w_victim)`, a message barely different from
//! the victim's own estimate. The adaptive weight rule then hands the
//! attacker an overwhelming weight (its deviation tracker stays near zero)
//! and the victim's state follows the crafted geometric path toward `x_i`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentId, NetworkTopology, Observation, StateVector};

// ---------------------------------------------------------------------------
// Goals and plans
// ---------------------------------------------------------------------------

/// Time-varying component of a non-stationary attack goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Trajectory {
    /// `theta(i) = amplitude * [cos(2*pi*omega*i + phase), sin(...)]`.
    Circular {
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
}

impl Trajectory {
    /// Evaluates `theta(i)`. Signed iterations are allowed because the attack
    /// reference looks one step back.
    pub fn theta(&self, i: i64) -> StateVector {
        match self {
            Trajectory::Circular {
                amplitude,
                omega,
                phase,
            } => {
                let angle = 2.0 * std::f64::consts::PI * omega * i as f64 + phase;
                StateVector::new(vec![amplitude * angle.cos(), amplitude * angle.sin()])
            }
        }
    }

    /// One-step difference `delta_theta(i) = theta(i+1) - theta(i)`.
    pub fn delta_theta(&self, i: i64) -> StateVector {
        self.theta(i + 1).sub(&self.theta(i))
    }
}

/// The state a compromised node drives one victim toward: `base` for
/// stationary estimation, `base + theta(i)` for non-stationary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackGoal {
    pub base: StateVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Trajectory>,
}

impl AttackGoal {
    pub fn stationary(base: StateVector) -> Self {
        AttackGoal {
            base,
            trajectory: None,
        }
    }

    /// The attacker's desired victim state at iteration `i`.
    pub fn desired_state(&self, i: u64) -> StateVector {
        match &self.trajectory {
            None => self.base.clone(),
            Some(t) => self.base.add_scaled(1.0, &t.theta(i as i64)),
        }
    }
}

/// How the per-round attack step size is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum StepSizeGuard {
    /// Use the fixed `r` unconditionally; a small fixed value succeeds in
    /// practice because the smoothed weights tolerate occasional large draws.
    FixedR,
    /// Zero out the step whenever the crafted perturbation is not at most
    /// `rho` times the smallest normal-neighbor deviation this round.
    Guarded { rho: f64 },
}

impl Default for StepSizeGuard {
    fn default() -> Self {
        StepSizeGuard::FixedR
    }
}

/// A full attack description: who is compromised, which victim each attacker
/// drives where, the step size, and when the attack begins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub compromised: BTreeSet<AgentId>,
    /// (attacker, victim) -> goal. Every victim is a topological neighbor of
    /// its attacker at planning time.
    pub goals: BTreeMap<(AgentId, AgentId), AttackGoal>,
    /// Compromised nodes that merely repeat another attacker's crafted
    /// message: (echoing node, victim) -> designated attacker.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub echoes: BTreeMap<(AgentId, AgentId), AgentId>,
    /// Attack step size, in (0, 1).
    pub r: f64,
    pub start_iteration: u64,
    #[serde(default)]
    pub guard: StepSizeGuard,
}

impl AttackPlan {
    pub fn validate(&self, topology: &NetworkTopology) -> Result<()> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(Error::config("attack.r", "step size must lie in (0, 1)"));
        }
        if let StepSizeGuard::Guarded { rho } = self.guard {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::config("attack.guard.rho", "rho must lie in (0, 1)"));
            }
        }
        for (&(a, v), _) in &self.goals {
            if !self.compromised.contains(&a) {
                return Err(Error::config(
                    "attack.goals",
                    format!("attacker {a} is not a compromised node"),
                ));
            }
            if self.compromised.contains(&v) {
                return Err(Error::config(
                    "attack.goals",
                    format!("victim {v} is itself compromised"),
                ));
            }
            if !topology.is_adjacent(a, v) {
                return Err(Error::config(
                    "attack.goals",
                    format!("victim {v} is not a neighbor of attacker {a}"),
                ));
            }
        }
        for (&(e, v), &a) in &self.echoes {
            if !self.compromised.contains(&e) || !self.goals.contains_key(&(a, v)) {
                return Err(Error::config(
                    "attack.echoes",
                    format!("echo ({e}, {v}) does not reference a planned goal"),
                ));
            }
        }
        Ok(())
    }

    /// All victims, each with its designated attacker.
    pub fn victims(&self) -> BTreeMap<AgentId, AgentId> {
        self.goals.keys().map(|&(a, v)| (v, a)).collect()
    }
}

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

/// Recovers `w_{k,i-1}` from a victim's broadcast `psi_{k,i}` and that
/// round's observation, inverting the rank-one LMS update exactly:
/// `w = (I - mu u^T u)^{-1} (psi - mu u^T d)` with
/// `(I - mu u^T u)^{-1} = I + mu u^T u / (1 - mu |u|^2)`.
pub fn reconstruct_victim_state(
    psi_k: &StateVector,
    obs_k: &Observation,
    mu_k: f64,
) -> Result<StateVector> {
    let denom = 1.0 - mu_k * obs_k.u.norm_sq();
    if denom.abs() < 1e-12 {
        return Err(Error::SingularUpdate {
            margin: denom.abs(),
        });
    }
    let s = psi_k.add_scaled(-mu_k * obs_k.d, &obs_k.u);
    let coeff = mu_k * obs_k.u.dot(&s) / denom;
    Ok(s.add_scaled(coeff, &obs_k.u))
}

/// The point the crafted message steers the victim toward at iteration `i`:
/// the goal itself for stationary estimation, and
/// `base + theta(i-1) + delta_theta(i-1) / r` for non-stationary estimation.
/// The `delta_theta / r` term cancels the tracking lag so the fixed point of
/// the crafted dynamics lands exactly on the moving goal.
pub fn attack_reference(goal: &AttackGoal, r: f64, i: u64) -> Result<StateVector> {
    match &goal.trajectory {
        None => Ok(goal.base.clone()),
        Some(t) => {
            if r == 0.0 {
                return Err(Error::ZeroStepSize);
            }
            let prev = i as i64 - 1;
            let theta = t.theta(prev);
            let delta = t.delta_theta(prev);
            Ok(goal
                .base
                .add_scaled(1.0, &theta)
                .add_scaled(1.0 / r, &delta))
        }
    }
}

/// Crafted message `psi_a = w_victim + r_eff * (x_i - w_victim)`: a point on
/// the segment from the victim's current estimate toward the reference.
pub fn craft_message(
    w_victim_prev: &StateVector,
    x_i: &StateVector,
    r_eff: f64,
) -> StateVector {
    debug_assert!((0.0..1.0).contains(&r_eff));
    w_victim_prev.add_scaled(r_eff, &x_i.sub(w_victim_prev))
}

/// Keeps `r` only while the crafted perturbation stays at most `rho` times
/// the smallest true neighbor deviation this round; otherwise pauses the
/// attack with `r = 0`. An empty neighbor list imposes no constraint.
pub fn guard_step_size(
    r: f64,
    x_i: &StateVector,
    w_victim_prev: &StateVector,
    neighbor_psis: &[StateVector],
    rho: f64,
) -> f64 {
    debug_assert!(rho > 0.0 && rho < 1.0);
    let perturbation = r * x_i.dist(w_victim_prev);
    let min_dev = neighbor_psis
        .iter()
        .map(|psi| psi.dist(w_victim_prev))
        .fold(f64::INFINITY, f64::min);
    if min_dev.is_finite() && perturbation > rho * min_dev {
        0.0
    } else {
        r
    }
}

// ---------------------------------------------------------------------------
// Network attack planning
// ---------------------------------------------------------------------------

/// Greedy dominating set: repeatedly pick the node covering the most
/// still-uncovered nodes (itself plus neighbors), breaking ties by smallest
/// id. The result always passes `dominating_check`.
pub fn greedy_dominating_set(topology: &NetworkTopology) -> Vec<AgentId> {
    let n = topology.n_agents();
    let mut covered = vec![false; n];
    let mut uncovered = n;
    let mut set = Vec::new();
    while uncovered > 0 {
        let mut best = 0usize;
        let mut best_gain = 0usize;
        for k in 0..n {
            let mut gain = usize::from(!covered[k]);
            for &l in topology.neighbors(k) {
                gain += usize::from(!covered[l]);
            }
            if gain > best_gain {
                best_gain = gain;
                best = k;
            }
        }
        debug_assert!(best_gain > 0);
        set.push(best);
        if !covered[best] {
            covered[best] = true;
            uncovered -= 1;
        }
        for &l in topology.neighbors(best) {
            if !covered[l] {
                covered[l] = true;
                uncovered -= 1;
            }
        }
    }
    set.sort_unstable();
    set
}

/// Plans a whole-network attack: compromise a greedy dominating set and
/// assign a goal for every (attacker, normal neighbor) pair. A victim with
/// several compromised neighbors gets exactly one designated attacker (the
/// smallest id); the rest echo that attacker's crafted message.
pub fn plan_network_attack(
    topology: &NetworkTopology,
    mut goal_factory: impl FnMut(AgentId) -> AttackGoal,
    r: f64,
    start_iteration: u64,
    guard: StepSizeGuard,
) -> AttackPlan {
    let compromised: BTreeSet<AgentId> = greedy_dominating_set(topology).into_iter().collect();
    let mut goals = BTreeMap::new();
    let mut echoes = BTreeMap::new();
    for v in 0..topology.n_agents() {
        if compromised.contains(&v) {
            continue;
        }
        let mut adjacent: Vec<AgentId> = topology
            .neighbors(v)
            .iter()
            .copied()
            .filter(|a| compromised.contains(a))
            .collect();
        adjacent.sort_unstable();
        let Some(&designated) = adjacent.first() else {
            continue;
        };
        goals.insert((designated, v), goal_factory(v));
        for &other in &adjacent[1..] {
            echoes.insert((other, v), designated);
        }
    }
    AttackPlan {
        compromised,
        goals,
        echoes,
        r,
        start_iteration,
        guard,
    }
}

// ---------------------------------------------------------------------------
// Per-round crafting (driven by the simulation engine)
// ---------------------------------------------------------------------------

/// Runtime attack state: the plan plus the attacker's most recent estimate of
/// each victim's state, used as a fallback when a round is unreconstructible.
#[derive(Clone, Debug)]
pub struct AttackRuntime {
    pub plan: AttackPlan,
    last_known_w: BTreeMap<AgentId, StateVector>,
}

impl AttackRuntime {
    pub fn new(plan: AttackPlan) -> Self {
        AttackRuntime {
            plan,
            last_known_w: BTreeMap::new(),
        }
    }

    pub fn active(&self, i: u64) -> bool {
        i >= self.plan.start_iteration
    }

    /// Crafts this round's messages for every (compromised sender, victim)
    /// pair. `true_psi` are the honest broadcasts of every agent this round,
    /// `victim_obs` the victims' streaming data (the threat model grants the
    /// attacker both), and `mu` the per-agent step sizes.
    ///
    /// The victim's pre-round state is reconstructed from its own broadcast;
    /// a singular round falls back to the attacker's last estimate of it.
    pub fn craft_round(
        &mut self,
        topology: &NetworkTopology,
        true_psi: &[StateVector],
        victim_obs: &[Observation],
        mu: &[f64],
        i: u64,
    ) -> Result<BTreeMap<(AgentId, AgentId), StateVector>> {
        let mut messages = BTreeMap::new();
        if !self.active(i) {
            return Ok(messages);
        }
        let goals: Vec<((AgentId, AgentId), AttackGoal)> = self
            .plan
            .goals
            .iter()
            .map(|(&k, g)| (k, g.clone()))
            .collect();
        for ((attacker, victim), goal) in goals {
            let w_prev = match reconstruct_victim_state(
                &true_psi[victim],
                &victim_obs[victim],
                mu[victim],
            ) {
                Ok(w) => w,
                Err(Error::SingularUpdate { .. }) => match self.last_known_w.get(&victim) {
                    Some(w) => w.clone(),
                    // No estimate yet: echo the victim's broadcast, which
                    // keeps the round inert for this victim.
                    None => true_psi[victim].clone(),
                },
                Err(e) => return Err(e),
            };
            self.last_known_w.insert(victim, w_prev.clone());

            let x = attack_reference(&goal, self.plan.r, i)?;
            let r_eff = match self.plan.guard {
                StepSizeGuard::FixedR => self.plan.r,
                StepSizeGuard::Guarded { rho } => {
                    let neighbor_psis: Vec<StateVector> = topology
                        .neighbors(victim)
                        .iter()
                        .filter(|l| !self.plan.compromised.contains(l))
                        .map(|&l| true_psi[l].clone())
                        .collect();
                    guard_step_size(self.plan.r, &x, &w_prev, &neighbor_psis, rho)
                }
            };
            let crafted = craft_message(&w_prev, &x, r_eff);
            messages.insert((attacker, victim), crafted);
        }
        // Echoing nodes repeat the designated attacker's message verbatim.
        for (&(echoer, victim), &designated) in &self.plan.echoes {
            if let Some(msg) = messages.get(&(designated, victim)) {
                let msg = msg.clone();
                messages.insert((echoer, victim), msg);
            }
        }
        Ok(messages)
    }
}
