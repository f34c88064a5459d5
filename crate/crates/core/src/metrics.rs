//! Empirical and theoretical mean-square-deviation metrics plus
//! attack-success detection over recorded traces.

use serde::{Deserialize, Serialize};

use crate::attack::AttackGoal;
use crate::error::{Error, Result};
use crate::model::AgentId;

/// Default convergence/attack-success radius: 1% of the unit-square scene
/// diagonal order.
pub const DEFAULT_EPSILON: f64 = 0.02;

// ---------------------------------------------------------------------------
// Empirical MSD
// ---------------------------------------------------------------------------

/// Network MSD per iteration plus its steady-state summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdSeries {
    /// Mean over the agent subset of the squared estimation error.
    pub per_iteration: Vec<f64>,
    /// Mean over the final window of iterations.
    pub steady_state: f64,
}

impl MsdSeries {
    pub fn steady_state_db(&self) -> f64 {
        10.0 * self.steady_state.log10()
    }
}

/// Averages recorded squared errors over an agent subset, then over the
/// final `window` iterations for the steady-state figure. `errors_sq` is one
/// row per iteration, one column per agent. An empty subset selects all
/// agents.
pub fn msd_empirical(
    errors_sq: &[Vec<f64>],
    agents_subset: &[AgentId],
    window: usize,
) -> MsdSeries {
    let per_iteration: Vec<f64> = errors_sq
        .iter()
        .map(|row| {
            if agents_subset.is_empty() {
                row.iter().sum::<f64>() / row.len() as f64
            } else {
                agents_subset.iter().map(|&k| row[k]).sum::<f64>() / agents_subset.len() as f64
            }
        })
        .collect();
    let steady_state = steady_state_mean(&per_iteration, window);
    MsdSeries {
        per_iteration,
        steady_state,
    }
}

/// Mean of the last `window` entries (the whole series when shorter).
pub fn steady_state_mean(series: &[f64], window: usize) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let w = window.clamp(1, series.len());
    series[series.len() - w..].iter().sum::<f64>() / w as f64
}

/// Entry-wise mean of several per-iteration series of equal length, used to
/// approximate expectations over independent seeded runs.
pub fn average_series(series: &[Vec<f64>]) -> Vec<f64> {
    assert!(!series.is_empty());
    let len = series[0].len();
    assert!(series.iter().all(|s| s.len() == len));
    let mut out = vec![0.0; len];
    for s in series {
        for (acc, &x) in out.iter_mut().zip(s) {
            *acc += x;
        }
    }
    for acc in &mut out {
        *acc /= series.len() as f64;
    }
    out
}

// ---------------------------------------------------------------------------
// Theoretical MSD
// ---------------------------------------------------------------------------

/// Closed-form steady-state MSD targets (small step-size approximations).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TheoryKind {
    /// `mu M / 2 * mean(sigma_v^2)`
    Noncooperative,
    /// `Noncooperative / N`: the N-fold cooperation gain.
    Diffusion,
}

/// Evaluates the closed-form network MSD for `N = sigmas.len()` agents.
pub fn msd_theory(kind: TheoryKind, mu: f64, m: usize, sigmas: &[f64]) -> Result<f64> {
    let n = sigmas.len();
    if n == 0 {
        return Err(Error::DegenerateNetwork("no agents".into()));
    }
    let mean: f64 = sigmas.iter().sum::<f64>() / n as f64;
    let ncop = mu * m as f64 / 2.0 * mean;
    match kind {
        TheoryKind::Noncooperative => Ok(ncop),
        TheoryKind::Diffusion => {
            if n < 2 {
                return Err(Error::DegenerateNetwork(
                    "diffusion MSD needs N >= 2".into(),
                ));
            }
            Ok(ncop / n as f64)
        }
    }
}

/// Network MSD split when one agent `n` is excluded from everyone's
/// aggregation every round, dividing the network into the remaining
/// sub-network and the singleton.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResilientSplitMsd {
    /// Sub-network of everyone except the excluded agent.
    pub sub1: f64,
    /// The excluded agent on its own.
    pub sub2: f64,
    /// Whole-network average under the split.
    pub network: f64,
    /// Whole-network average of the unsplit diffusion algorithm.
    pub original: f64,
    /// `network - original`; positive for every positive variance vector.
    pub excess: f64,
}

/// Evaluates the resilient-split MSD formulas for excluded index `excluded`.
pub fn msd_theory_resilient_split(
    mu: f64,
    m: usize,
    sigmas: &[f64],
    excluded: usize,
) -> Result<ResilientSplitMsd> {
    let n = sigmas.len();
    if n < 2 {
        return Err(Error::DegenerateNetwork(
            "resilient split needs N >= 2".into(),
        ));
    }
    if excluded >= n {
        return Err(Error::DegenerateNetwork(format!(
            "excluded index {excluded} out of range for N = {n}"
        )));
    }
    let half_mu_m = mu * m as f64 / 2.0;
    let total: f64 = sigmas.iter().sum();
    let sigma_n = sigmas[excluded];
    let rest = total - sigma_n;
    let nf = n as f64;
    let sub1 = half_mu_m * rest / ((nf - 1.0) * (nf - 1.0));
    let sub2 = half_mu_m * sigma_n;
    let network = half_mu_m * (rest / ((nf - 1.0) * nf) + sigma_n / nf);
    let original = half_mu_m * total / (nf * nf);
    Ok(ResilientSplitMsd {
        sub1,
        sub2,
        network,
        original,
        excess: network - original,
    })
}

// ---------------------------------------------------------------------------
// Attack success
// ---------------------------------------------------------------------------

/// Verdict on whether a victim was driven to the attacker's goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackVerdict {
    pub victim: AgentId,
    pub success: bool,
    /// Earliest iteration after which the error stays below `epsilon` for
    /// every recorded iteration.
    pub i_c: Option<u64>,
    pub epsilon: f64,
}

/// Scans a victim's recorded states for the attack-success condition: there
/// is an iteration `i_c` with `|w_{k,i} - w^a_{k,i}| < epsilon` for all
/// recorded `i > i_c`, and the trace extends at least `tail` iterations past
/// `i_c`. Non-stationary goals are compared against `base + theta(i)` per
/// iteration.
pub fn attack_success(
    states: &[crate::model::StateVector],
    victim: AgentId,
    goal: &AttackGoal,
    epsilon: f64,
    tail: usize,
) -> AttackVerdict {
    debug_assert!(epsilon > 0.0);
    let len = states.len();
    let mut last_violation: Option<usize> = None;
    for (i, w) in states.iter().enumerate() {
        let reference = goal.desired_state(i as u64);
        if w.dist(&reference) >= epsilon {
            last_violation = Some(i);
        }
    }
    let i_c = match last_violation {
        None => Some(0u64),
        Some(v) if v + 1 < len => Some(v as u64),
        Some(_) => None,
    };
    // Recorded iterations strictly after i_c must cover the requested tail.
    let success = i_c.is_some_and(|ic| len.saturating_sub(1) - ic as usize >= tail);
    AttackVerdict {
        victim,
        success,
        i_c: if success { i_c } else { None },
        epsilon,
    }
}
