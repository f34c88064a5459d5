//! Domain types shared by every other module: state vectors, observations,
//! target models, the network topology, and per-agent state.
//!
//! All arithmetic is real-valued. Regressors `u` are row vectors, so `u* u`
//! is an M x M rank-one matrix while `u u*` is the scalar squared norm; every
//! formula in the crate follows that orientation.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agent identifier: a dense index into the simulation's agent arrays.
pub type AgentId = usize;

// ---------------------------------------------------------------------------
// StateVector
// ---------------------------------------------------------------------------

/// An M-dimensional real state vector.
///
/// All state vectors in one simulation share the same dimension M >= 1 and
/// every entry is finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    /// Wraps raw entries. Panics on empty or non-finite input: state vectors
    /// with NaN/Inf entries are a programming error, not a recoverable state.
    pub fn new(entries: Vec<f64>) -> Self {
        assert!(!entries.is_empty(), "state vector must have dimension >= 1");
        assert!(
            entries.iter().all(|x| x.is_finite()),
            "state vector entries must be finite: {entries:?}"
        );
        StateVector(entries)
    }

    /// The zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1);
        StateVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, scale: f64, other: &StateVector) -> StateVector {
        debug_assert_eq!(self.dim(), other.dim());
        StateVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &StateVector) -> StateVector {
        debug_assert_eq!(self.dim(), other.dim());
        StateVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> StateVector {
        StateVector(self.0.iter().map(|a| a * s).collect())
    }

    pub fn dot(&self, other: &StateVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|a| a * a).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Squared euclidean distance to `other`.
    pub fn dist_sq(&self, other: &StateVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &StateVector) -> f64 {
        self.dist_sq(other).sqrt()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector::new(v)
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

// ---------------------------------------------------------------------------
// Observations and noise
// ---------------------------------------------------------------------------

/// One streamed measurement: scalar `d`, row regressor `u`, and the round it
/// was drawn in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub d: f64,
    pub u: StateVector,
    pub iteration: u64,
}

/// Per-agent noise description: regressors are zero-mean Gaussian with
/// per-entry variance `sigma_u_sq`, measurement noise has variance
/// `sigma_v_sq`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_v_sq: f64,
    pub sigma_u_sq: f64,
}

impl NoiseModel {
    pub fn new(sigma_v_sq: f64, sigma_u_sq: f64) -> Self {
        assert!(sigma_v_sq > 0.0 && sigma_u_sq > 0.0);
        NoiseModel {
            sigma_v_sq,
            sigma_u_sq,
        }
    }
}

/// Draws one observation of `target` under the linear model
/// `d = u . target + v`, with `u` i.i.d. Gaussian per entry and `v` Gaussian
/// measurement noise. Deterministic given the RNG stream state.
pub fn generate_observation<R: Rng>(
    target: &StateVector,
    noise: &NoiseModel,
    rng: &mut R,
    iteration: u64,
) -> Observation {
    let su = noise.sigma_u_sq.sqrt();
    let sv = noise.sigma_v_sq.sqrt();
    let u = StateVector::new(
        (0..target.dim())
            .map(|_| su * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );
    let v = sv * rng.sample::<f64, _>(StandardNormal);
    let d = u.dot(target) + v;
    Observation { d, u, iteration }
}

// ---------------------------------------------------------------------------
// Target models
// ---------------------------------------------------------------------------

/// The true state an agent estimates: either a fixed point or a planar
/// circular trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetModel {
    Stationary {
        base: StateVector,
    },
    /// `center + amplitude * [cos(2*pi*omega*i + phase), sin(...)]`.
    /// Planar only (M = 2); `omega` is in cycles per iteration.
    Circular {
        center: StateVector,
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
}

impl TargetModel {
    /// State dimension of this target.
    pub fn dim(&self) -> usize {
        match self {
            TargetModel::Stationary { base } => base.dim(),
            TargetModel::Circular { center, .. } => center.dim(),
        }
    }

    /// Evaluates the true state at iteration `i`. Total function.
    pub fn eval(&self, i: u64) -> StateVector {
        match self {
            TargetModel::Stationary { base } => base.clone(),
            TargetModel::Circular {
                center,
                amplitude,
                omega,
                phase,
            } => {
                let angle = 2.0 * std::f64::consts::PI * omega * i as f64 + phase;
                StateVector::new(vec![
                    center[0] + amplitude * angle.cos(),
                    center[1] + amplitude * angle.sin(),
                ])
            }
        }
    }

    pub(crate) fn validate(&self, path: &str) -> Result<()> {
        match self {
            TargetModel::Stationary { .. } => Ok(()),
            TargetModel::Circular {
                center,
                amplitude,
                omega,
                ..
            } => {
                if center.dim() != 2 {
                    return Err(Error::config(path, "circular targets require M = 2"));
                }
                if *amplitude < 0.0 {
                    return Err(Error::config(path, "amplitude must be >= 0"));
                }
                if !omega.is_finite() {
                    return Err(Error::config(path, "omega must be finite"));
                }
                Ok(())
            }
        }
    }
}

/// Evaluates a target model at iteration `i`.
pub fn eval_target(model: &TargetModel, i: u64) -> StateVector {
    model.eval(i)
}

// ---------------------------------------------------------------------------
// Network topology
// ---------------------------------------------------------------------------

/// Undirected graph over agent ids with self-inclusive neighborhoods.
///
/// No self-loops are stored; `neighborhood(k)` always yields `k` itself plus
/// its current neighbors. Link deletion is monotone: a removed link never
/// reappears within a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    n_agents: usize,
    /// Sorted adjacency lists, symmetric, without self-loops.
    adjacency: Vec<Vec<AgentId>>,
}

impl NetworkTopology {
    /// Builds a topology from undirected edges. Duplicate edges collapse;
    /// self-loops are rejected.
    pub fn from_edges(n_agents: usize, edges: &[(AgentId, AgentId)]) -> Result<Self> {
        assert!(n_agents >= 1);
        let mut adjacency = vec![Vec::new(); n_agents];
        for &(a, b) in edges {
            if a == b {
                return Err(Error::config("topology.edges", format!("self-loop at {a}")));
            }
            if a >= n_agents || b >= n_agents {
                return Err(Error::config(
                    "topology.edges",
                    format!("edge ({a}, {b}) out of range for {n_agents} agents"),
                ));
            }
            if !adjacency[a].contains(&b) {
                adjacency[a].push(b);
                adjacency[b].push(a);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(NetworkTopology {
            n_agents,
            adjacency,
        })
    }

    pub fn complete(n_agents: usize) -> Self {
        let mut edges = Vec::new();
        for a in 0..n_agents {
            for b in (a + 1)..n_agents {
                edges.push((a, b));
            }
        }
        NetworkTopology::from_edges(n_agents, &edges).expect("complete graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn is_adjacent(&self, a: AgentId, b: AgentId) -> bool {
        a != b && self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Neighbors of `k`, excluding `k`.
    pub fn neighbors(&self, k: AgentId) -> &[AgentId] {
        &self.adjacency[k]
    }

    /// Neighborhood of `k` including `k` itself, sorted.
    pub fn neighborhood(&self, k: AgentId) -> Vec<AgentId> {
        let mut out = Vec::with_capacity(self.adjacency[k].len() + 1);
        let mut inserted = false;
        for &l in &self.adjacency[k] {
            if !inserted && l > k {
                out.push(k);
                inserted = true;
            }
            out.push(l);
        }
        if !inserted {
            out.push(k);
        }
        out
    }

    pub fn degree(&self, k: AgentId) -> usize {
        self.adjacency[k].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// All live undirected links, each reported once with a < b.
    pub fn edges(&self) -> Vec<(AgentId, AgentId)> {
        let mut out = Vec::new();
        for (a, list) in self.adjacency.iter().enumerate() {
            for &b in list {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Permanently removes the link (a, b). Returns whether it existed.
    pub fn remove_link(&mut self, a: AgentId, b: AgentId) -> bool {
        if a == b {
            return false;
        }
        let existed = match self.adjacency[a].binary_search(&b) {
            Ok(pos) => {
                self.adjacency[a].remove(pos);
                true
            }
            Err(_) => false,
        };
        if existed {
            if let Ok(pos) = self.adjacency[b].binary_search(&a) {
                self.adjacency[b].remove(pos);
            }
        }
        existed
    }

    /// True if the graph (ignoring isolated-vs-connected semantics of empty
    /// graphs) is connected.
    pub fn is_connected(&self) -> bool {
        if self.n_agents == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_agents];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(k) = stack.pop() {
            for &l in &self.adjacency[k] {
                if !seen[l] {
                    seen[l] = true;
                    count += 1;
                    stack.push(l);
                }
            }
        }
        count == self.n_agents
    }

    /// Hop distances from `src` (usize::MAX when unreachable).
    pub fn hop_distances(&self, src: AgentId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n_agents];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(k) = queue.pop_front() {
            for &l in &self.adjacency[k] {
                if dist[l] == usize::MAX {
                    dist[l] = dist[k] + 1;
                    queue.push_back(l);
                }
            }
        }
        dist
    }
}

/// True iff every agent is in `set` or adjacent to a member of `set`.
pub fn dominating_check(topology: &NetworkTopology, set: &[AgentId]) -> bool {
    let mut covered = vec![false; topology.n_agents()];
    for &s in set {
        covered[s] = true;
        for &l in topology.neighbors(s) {
            covered[l] = true;
        }
    }
    covered.into_iter().all(|c| c)
}

// ---------------------------------------------------------------------------
// Agent state
// ---------------------------------------------------------------------------

/// Mutable per-agent state carried across rounds.
#[derive(Clone, Debug)]
pub struct AgentState {
    /// Current estimate `w_{k,i-1}` at round start.
    pub w: StateVector,
    /// Intermediate estimate from the most recent adaptation step.
    pub psi: StateVector,
    /// Per-neighbor squared-deviation trackers, keyed by neighbor id.
    /// Keys are always a subset of the current neighborhood of the agent.
    pub gamma_sq: BTreeMap<AgentId, f64>,
    /// Ring buffer of the most recent observations (cost-estimation window).
    pub data_window: VecDeque<Observation>,
    /// LMS step size.
    pub mu: f64,
    /// Forgetting factor of the deviation tracker, in (0, 1].
    pub nu: f64,
}

impl AgentState {
    pub fn new(dim: usize, mu: f64, nu: f64) -> Self {
        assert!(mu > 0.0, "step size must be positive");
        assert!(nu > 0.0 && nu <= 1.0, "forgetting factor must be in (0, 1]");
        AgentState {
            w: StateVector::zeros(dim),
            psi: StateVector::zeros(dim),
            gamma_sq: BTreeMap::new(),
            data_window: VecDeque::new(),
            mu,
            nu,
        }
    }

    /// Appends an observation, evicting the oldest when the window is full.
    pub fn push_observation(&mut self, obs: Observation, window_n: usize) {
        debug_assert!(window_n >= 1);
        if self.data_window.len() == window_n {
            self.data_window.pop_front();
        }
        self.data_window.push_back(obs);
    }
}

// ---------------------------------------------------------------------------
// RNG substreams
// ---------------------------------------------------------------------------

/// Derives per-purpose RNG substreams from one master seed so that toggling
/// the attack or the resilient filter never perturbs the data draws.
pub mod streams {
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Stream id of the topology/setup stream (graph, sigmas, planner).
    const TOPOLOGY_STREAM: u64 = 0;

    /// Master seed for run `run_index` of a multi-run experiment.
    pub fn run_seed(base_seed: u64, run_index: u64) -> u64 {
        base_seed.wrapping_add(run_index)
    }

    /// Stream used for topology generation, per-agent variance draws, and
    /// compromised-node selection.
    pub fn topology_stream(seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(TOPOLOGY_STREAM);
        rng
    }

    /// Data stream of agent `k`: observations only, one owner per agent.
    pub fn data_stream(seed: u64, agent: super::AgentId) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + agent as u64);
        rng
    }
}
