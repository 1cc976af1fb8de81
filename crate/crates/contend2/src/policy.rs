//! Domain types for channel feedback, histories, and transmit policies.
//!
//! A device that transmits learns whether it succeeded (`1`) or collided
//! (`2+`); a device that idles learns nothing (`0`). A policy maps the
//! feedback history a device has seen to its next transmit probability.
//! Recurrent policies — the only ones that matter for two devices — are
//! described by a finite probability vector ending in 1, or equivalently by
//! the strictly decreasing idle-mass vector `m_k = prod_{i<=k} (1 - p_i)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

/// Inputs within this distance of an anchor value (0 or 1) are snapped to it
/// when parsing; stored sequences hold the anchors exactly.
pub const ANCHOR_TOLERANCE: f64 = 1e-12;

/// Validation failures for policy and mass sequences.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum PolicyError {
    #[error("probability sequence must not be empty")]
    EmptySequence,
    #[error("probability {value} at index {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("final transmit probability must equal 1, got {0}")]
    FinalProbabilityNotOne(f64),
    #[error("interior probability at index {index} must lie strictly inside (0, 1), got {value}")]
    InteriorProbabilityDegenerate { index: usize, value: f64 },
    #[error("mass sequence needs at least the anchors 1 and 0")]
    TooFewMasses,
    #[error("mass sequence must start at exactly 1, got {0}")]
    FirstMassNotOne(f64),
    #[error("mass sequence must end at exactly 0, got {0}")]
    LastMassNotZero(f64),
    #[error("mass {value} at offset {index} is outside [0, 1]")]
    MassOutOfRange { index: usize, value: f64 },
    #[error("mass sequence must be strictly decreasing at offset {index}")]
    NotStrictlyDecreasing { index: usize },
    #[error("history may not extend past a success")]
    ResponseAfterSuccess,
    #[error("invalid policy JSON: {0}")]
    Json(String),
}

/// Per-slot channel feedback as seen by one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelResponse {
    /// The device idled; it learns nothing (`0`).
    Silent,
    /// The device was the sole transmitter (`1`).
    Success,
    /// The device transmitted together with at least one other (`2+`).
    Collision,
}

impl fmt::Display for ChannelResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelResponse::Silent => write!(f, "0"),
            ChannelResponse::Success => write!(f, "1"),
            ChannelResponse::Collision => write!(f, "2+"),
        }
    }
}

/// A finite word of channel responses, as held by a still-running device.
///
/// At most one `Success` may appear and nothing may follow it. Two counters
/// are maintained incrementally so policies can be evaluated in O(1): whether
/// a success has occurred, and the number of idle slots since the later of
/// the start and the last collision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    responses: Vec<ChannelResponse>,
    idles_since_restart: usize,
    has_success: bool,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// A history consisting of `k` idle slots.
    pub fn of_idles(k: usize) -> Self {
        Self {
            responses: vec![ChannelResponse::Silent; k],
            idles_since_restart: k,
            has_success: false,
        }
    }

    pub fn from_responses(responses: Vec<ChannelResponse>) -> Result<Self, PolicyError> {
        let mut history = Self::new();
        for response in responses {
            history.try_push(response)?;
        }
        Ok(history)
    }

    fn try_push(&mut self, response: ChannelResponse) -> Result<(), PolicyError> {
        if self.has_success {
            return Err(PolicyError::ResponseAfterSuccess);
        }
        match response {
            ChannelResponse::Silent => self.idles_since_restart += 1,
            ChannelResponse::Collision => self.idles_since_restart = 0,
            ChannelResponse::Success => self.has_success = true,
        }
        self.responses.push(response);
        Ok(())
    }

    /// Appends one response. Panics if the history already ends in a success;
    /// a successful device halts and its history stops growing.
    pub fn push(&mut self, response: ChannelResponse) {
        self.try_push(response)
            .expect("cannot extend a history past its success");
    }

    pub fn responses(&self) -> &[ChannelResponse] {
        &self.responses
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn has_success(&self) -> bool {
        self.has_success
    }

    /// Idle slots since the later of the start and the last collision; this is
    /// the clock index `k` a recurrent policy reads.
    pub fn idles_since_restart(&self) -> usize {
        self.idles_since_restart
    }
}

/// The three latency objectives for a group of devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Mean of the per-device latencies.
    Avg,
    /// Latency of the first device to succeed.
    Min,
    /// Latency of the last device to succeed (makespan).
    Max,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Avg, Objective::Min, Objective::Max];

    /// Combines per-device latencies into the scalar cost. All three
    /// objectives are scalar-additive: shifting every latency by `c` shifts
    /// the cost by `c`.
    pub fn evaluate(self, latencies: &[f64]) -> f64 {
        assert!(
            !latencies.is_empty(),
            "objective of an empty latency vector"
        );
        match self {
            Objective::Avg => latencies.iter().sum::<f64>() / latencies.len() as f64,
            Objective::Min => latencies.iter().copied().fold(f64::INFINITY, f64::min),
            Objective::Max => latencies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Avg => write!(f, "avg"),
            Objective::Min => write!(f, "min"),
            Objective::Max => write!(f, "max"),
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "avg" => Ok(Objective::Avg),
            "min" => Ok(Objective::Min),
            "max" => Ok(Objective::Max),
            other => Err(format!(
                "unknown objective {other:?} (expected avg, min or max)"
            )),
        }
    }
}

/// A finite transmit-probability vector `(p_0, .., p_{L-1})` with `p_{L-1} = 1`.
///
/// Interior entries must lie strictly inside (0, 1): an interior 0 is a no-op
/// slot the caller should normalize away, and an interior 1 forces the mass
/// sequence to hit zero early. Entries within [`ANCHOR_TOLERANCE`] of 1 are
/// snapped to exactly 1 on construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbSequence(Vec<f64>);

impl ProbSequence {
    pub fn new(mut probs: Vec<f64>) -> Result<Self, PolicyError> {
        if probs.is_empty() {
            return Err(PolicyError::EmptySequence);
        }
        for p in probs.iter_mut() {
            if (*p - 1.0).abs() <= ANCHOR_TOLERANCE {
                *p = 1.0;
            }
        }
        let last = *probs.last().expect("non-empty");
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(PolicyError::ProbabilityOutOfRange { index, value });
            }
        }
        if last != 1.0 {
            return Err(PolicyError::FinalProbabilityNotOne(last));
        }
        for (index, &value) in probs.iter().enumerate().take(probs.len() - 1) {
            if value == 0.0 || value == 1.0 {
                return Err(PolicyError::InteriorProbabilityDegenerate { index, value });
            }
        }
        Ok(Self(probs))
    }

    /// Parses the policy file format: a JSON array of numbers, e.g. `[0.5, 1.0]`.
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let probs: Vec<f64> =
            serde_json::from_str(text).map_err(|e| PolicyError::Json(e.to_string()))?;
        Self::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The idle-mass vector `(m_{-1}, m_0, .., m_{L-1})` with
    /// `m_k = m_{k-1} (1 - p_k)`, `m_{-1} = 1`. The terminal probability 1
    /// makes the final mass exactly 0.
    pub fn to_masses(&self) -> MassSequence {
        let mut masses = Vec::with_capacity(self.0.len() + 1);
        let mut mass = 1.0;
        masses.push(mass);
        for &p in &self.0 {
            mass *= 1.0 - p;
            masses.push(mass);
        }
        MassSequence::new(masses).expect("a valid probability sequence induces valid masses")
    }
}

/// The idle-mass vector `(m_{-1}, m_0, .., m_{L-1})`: `m_k` is the probability
/// that a device stays silent through slots 0..k of the current cycle.
///
/// Anchored at `m_{-1} = 1` and `m_{L-1} = 0`, strictly decreasing in between.
/// Entries within [`ANCHOR_TOLERANCE`] of an anchor are snapped on
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MassSequence(Vec<f64>);

impl MassSequence {
    pub fn new(mut masses: Vec<f64>) -> Result<Self, PolicyError> {
        if masses.len() < 2 {
            return Err(PolicyError::TooFewMasses);
        }
        for m in masses.iter_mut() {
            if (*m - 1.0).abs() <= ANCHOR_TOLERANCE {
                *m = 1.0;
            } else if m.abs() <= ANCHOR_TOLERANCE {
                *m = 0.0;
            }
        }
        if masses[0] != 1.0 {
            return Err(PolicyError::FirstMassNotOne(masses[0]));
        }
        let last = *masses.last().expect("non-empty");
        if last != 0.0 {
            return Err(PolicyError::LastMassNotZero(last));
        }
        for (index, &value) in masses.iter().enumerate() {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(PolicyError::MassOutOfRange { index, value });
            }
        }
        for index in 1..masses.len() {
            if masses[index] >= masses[index - 1] {
                return Err(PolicyError::NotStrictlyDecreasing { index });
            }
        }
        Ok(Self(masses))
    }

    /// All entries, `m_{-1}` first.
    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    /// Number of probabilities in the induced policy (entries minus one).
    pub fn policy_len(&self) -> usize {
        self.0.len() - 1
    }

    /// Inverts the mass parametrization: `p_k = 1 - m_k / m_{k-1}`.
    pub fn to_probs(&self) -> ProbSequence {
        let probs: Vec<f64> = self
            .0
            .windows(2)
            .map(|pair| 1.0 - pair[1] / pair[0])
            .collect();
        ProbSequence::new(probs).expect("a valid mass sequence induces a valid policy")
    }
}

/// A general transmit policy: a rule from feedback histories to transmit
/// probabilities. Halting after success is enforced by the wrapper, so every
/// `HistoryPolicy` is a proper policy regardless of the rule it wraps.
#[derive(Clone)]
pub struct HistoryPolicy {
    rule: Arc<dyn Fn(&History) -> f64 + Send + Sync>,
}

impl fmt::Debug for HistoryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HistoryPolicy").finish_non_exhaustive()
    }
}

impl HistoryPolicy {
    /// Wraps an arbitrary rule. The returned policy transmits with probability
    /// 0 on any history containing a success, whatever the rule says.
    pub fn from_fn(rule: impl Fn(&History) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            rule: Arc::new(rule),
        }
    }

    /// Transmit with the same probability `p` in every slot until successful.
    pub fn constant(p: f64) -> Self {
        assert!(
            (0.0..=1.0).contains(&p),
            "constant probability must be in [0, 1]"
        );
        Self::from_fn(move |_| p)
    }

    /// The recurrent policy induced by a finite probability vector: the clock
    /// index is the number of idle slots since the later of the start and the
    /// last collision. Indices at or past the end are unreachable because the
    /// final probability is 1 (a collision resets the clock), and querying one
    /// panics rather than inventing behavior.
    pub fn recurrent(seq: ProbSequence) -> Self {
        Self::from_fn(move |history| {
            let k = history.idles_since_restart();
            assert!(
                k < seq.len(),
                "recurrent clock index {k} is unreachable for a policy of length {}",
                seq.len()
            );
            seq.probs()[k]
        })
    }

    /// The restart construction: after every collision the policy behaves as
    /// if freshly started, replaying the base policy's idle-prefix behavior.
    /// Recurrent policies are fixed points of this construction.
    pub fn restart_after_collisions(&self) -> Self {
        let inner = Arc::clone(&self.rule);
        Self::from_fn(move |history| inner(&History::of_idles(history.idles_since_restart())))
    }

    /// Transmit probability for the next slot given `history`.
    pub fn prob(&self, history: &History) -> f64 {
        if history.has_success() {
            return 0.0;
        }
        let p = (self.rule)(history);
        assert!(
            p.is_finite(),
            "policy rule returned a non-finite probability"
        );
        p.clamp(0.0, 1.0)
    }
}
