//! Closed-form expected-cost evaluators for two-device recurrent policies,
//! plus an independent absorbing-chain oracle.
//!
//! For a mass sequence `(m_k)` the closed forms are ratios of the sums
//! `S1 = sum m_{k-1}`, `S2 = sum m_{k-1}^2` and `G = sum (m_{k-1} - m_k)^2`:
//!
//! * avg:  `S1 / (1 - G)`
//! * min:  `S2 / (1 - G)`
//! * max:  `(2 S1 - S2) / (1 - G)`
//!
//! The oracle never touches these sums. It treats the two-device system as an
//! absorbing Markov chain over (slots since restart, devices still active),
//! solves the first-step equations for the time to the first success and for
//! the remaining solo time, and combines them per objective. Agreement between
//! the two routes is the main correctness check of this crate.

use serde::Serialize;
use thiserror::Error;

use crate::policy::{MassSequence, Objective, ProbSequence};

/// `1 - sum of squared gaps` at or below this threshold means the expected
/// cost is infinite; among valid mass sequences only `(1, 0)` reaches it.
pub const DEGENERACY_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum EvalError {
    /// The renewal denominator vanished: the policy collides forever.
    #[error(
        "cost denominator 1 - sum((m_(k-1) - m_k)^2) is not positive; expected cost is infinite"
    )]
    DegenerateDenominator,
    /// The absorbing chain has zero per-cycle success probability.
    #[error("policy never absorbs: per-cycle success probability is zero")]
    NonAbsorbing,
}

/// How a reported cost was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMethod {
    ClosedForm,
    Oracle,
    MonteCarlo,
}

/// An expected-cost value with its provenance.
#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub objective: Objective,
    pub value: f64,
    pub method: CostMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_halfwidth: Option<f64>,
}

impl CostReport {
    pub fn closed_form(objective: Objective, value: f64) -> Self {
        Self::new(objective, value, CostMethod::ClosedForm, None)
    }

    pub fn oracle(objective: Objective, value: f64) -> Self {
        Self::new(objective, value, CostMethod::Oracle, None)
    }

    pub fn monte_carlo(objective: Objective, value: f64, ci_halfwidth: f64) -> Self {
        Self::new(objective, value, CostMethod::MonteCarlo, Some(ci_halfwidth))
    }

    fn new(
        objective: Objective,
        value: f64,
        method: CostMethod,
        ci_halfwidth: Option<f64>,
    ) -> Self {
        // Latency counts slots starting at 1, so no cost can dip below 1.
        assert!(
            value >= 1.0 - 1e-9,
            "cost {value} below the latency floor of 1"
        );
        Self {
            objective,
            value,
            method,
            ci_halfwidth,
        }
    }
}

/// The three sums every closed form is built from, over the whole (finite)
/// sequence: the zero tail contributes nothing.
fn mass_sums(masses: &[f64]) -> (f64, f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut gap_sq = 0.0;
    for (i, &m) in masses.iter().enumerate() {
        sum += m;
        sum_sq += m * m;
        if i + 1 < masses.len() {
            let gap = m - masses[i + 1];
            gap_sq += gap * gap;
        }
    }
    // The final mass is zero, so including it in `sum`/`sum_sq` is harmless
    // and keeps the loop single-pass.
    (sum, sum_sq, gap_sq)
}

pub(crate) fn eval_masses_slice(masses: &[f64], objective: Objective) -> Result<f64, EvalError> {
    let (sum, sum_sq, gap_sq) = mass_sums(masses);
    let denominator = 1.0 - gap_sq;
    if denominator <= DEGENERACY_THRESHOLD {
        return Err(EvalError::DegenerateDenominator);
    }
    let numerator = match objective {
        Objective::Avg => sum,
        Objective::Min => sum_sq,
        Objective::Max => 2.0 * sum - sum_sq,
    };
    Ok(numerator / denominator)
}

/// Expected per-device latency `E X_1` (equals the expected average).
pub fn expected_avg(masses: &MassSequence) -> Result<f64, EvalError> {
    eval_masses_slice(masses.masses(), Objective::Avg)
}

/// Expected latency of the first device to succeed, `E min(X_1, X_2)`.
pub fn expected_min(masses: &MassSequence) -> Result<f64, EvalError> {
    eval_masses_slice(masses.masses(), Objective::Min)
}

/// Expected latency of the last device to succeed, `E max(X_1, X_2)`.
pub fn expected_max(masses: &MassSequence) -> Result<f64, EvalError> {
    eval_masses_slice(masses.masses(), Objective::Max)
}

/// Closed form for the requested objective.
pub fn expected_cost(masses: &MassSequence, objective: Objective) -> Result<f64, EvalError> {
    eval_masses_slice(masses.masses(), objective)
}

/// Closed forms for the infinite constant-probability policy, via the
/// geometric sums `S1 = 1/p`, `S2 = 1/(p(2-p))`, `G = p/(2-p)`.
pub fn expected_cost_constant(p: f64, objective: Objective) -> Result<f64, EvalError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EvalError::DegenerateDenominator);
    }
    let renewal = 2.0 * p * (1.0 - p);
    Ok(match objective {
        Objective::Avg => (2.0 - p) / renewal,
        Objective::Min => 1.0 / renewal,
        Objective::Max => (3.0 - 2.0 * p) / renewal,
    })
}

/// First-step quantities of the absorbing pair chain: expected slots to the
/// first success (`first`) and expected further slots until the straggler
/// succeeds (`gap`).
struct PairRenewal {
    first: f64,
    gap: f64,
}

impl PairRenewal {
    fn cost(&self, objective: Objective) -> f64 {
        match objective {
            Objective::Avg => self.first + self.gap / 2.0,
            Objective::Min => self.first,
            Objective::Max => self.first + self.gap,
        }
    }
}

/// Exact expected cost of a finite recurrent policy, by solving the linear
/// first-step equations of the absorbing chain over states
/// (slots since restart, both devices active) with a solo-device tail.
///
/// Independent of the closed-form mass sums; used to cross-check them.
pub fn markov_oracle(policy: &ProbSequence, objective: Objective) -> Result<f64, EvalError> {
    let p = policy.probs();
    let len = p.len();

    // Solo phase: a lone device at clock index k succeeds on its first
    // transmission; solo[k] is its expected remaining slots.
    let mut solo = vec![0.0; len];
    solo[len - 1] = 1.0; // terminal probability is 1
    for k in (0..len.saturating_sub(1)).rev() {
        solo[k] = 1.0 + (1.0 - p[k]) * solo[k + 1];
    }

    // Pair phase, backward affine in the restart value V_0:
    // V_k = base_k + slope_k * V_0. The same slope applies to both the
    // first-success time and the straggler gap because they share transitions.
    let mut first_base = 0.0;
    let mut gap_base = 0.0;
    let mut slope = 0.0;
    for k in (0..len).rev() {
        let collide = p[k] * p[k];
        let both_idle = (1.0 - p[k]) * (1.0 - p[k]);
        let single = 2.0 * p[k] * (1.0 - p[k]);
        // At k = len - 1 the transmit probability is 1: certain collision,
        // so the both-idle continuation (which would read k + 1) vanishes.
        first_base = 1.0 + both_idle * first_base;
        gap_base = both_idle * gap_base
            + if single > 0.0 {
                single * solo[k + 1]
            } else {
                0.0
            };
        slope = collide + both_idle * slope;
    }

    let absorbing = 1.0 - slope;
    if absorbing <= DEGENERACY_THRESHOLD {
        return Err(EvalError::NonAbsorbing);
    }
    let renewal = PairRenewal {
        first: first_base / absorbing,
        gap: gap_base / absorbing,
    };
    Ok(renewal.cost(objective))
}

/// Oracle for the infinite constant-probability policy. The chain is
/// homogeneous, so the first-step equations collapse to one renewal step:
/// `first = 1 / (2p(1-p))` and `gap = 1/p`.
pub fn markov_oracle_constant(p: f64, objective: Objective) -> Result<f64, EvalError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(EvalError::NonAbsorbing);
    }
    let renewal = PairRenewal {
        first: 1.0 / (2.0 * p * (1.0 - p)),
        gap: 1.0 / p,
    };
    Ok(renewal.cost(objective))
}
