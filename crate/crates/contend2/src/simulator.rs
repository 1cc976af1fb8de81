//! The random-board model: all randomness drawn up front as a grid of
//! uniforms, with decisions and responses deduced deterministically from it.
//! The board doubles as a shared sample space, so different policies can be
//! compared on literally the same randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::policy::{ChannelResponse, History, HistoryPolicy, Objective};

/// Two-sided 95% normal quantile.
const Z_95: f64 = 1.959963984540054;

/// Default slot horizon. For any policy with a positive per-cycle success
/// probability the chance of an unfinished device at this depth is
/// negligible; exhaustion is an error, never a censored sample.
pub const DEFAULT_HORIZON: u32 = 10_000;

const TRIALS_PER_BATCH: u64 = 16_384;

#[derive(Debug, Error)]
pub enum SimulatorError {
    /// At least one trial left a device without a success by the horizon.
    /// The partial statistics (over finished trials only) ride along in the
    /// error so the failure can be diagnosed, but there is no trusted mean.
    #[error("{} of {} trials left a device unfinished at the horizon", result.unfinished_count, result.trials)]
    HorizonExhausted { result: MonteCarloResult },
    #[error("invalid board: {0}")]
    InvalidBoard(String),
}

/// What a device did in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Transmit,
    Idle,
}

/// Per-device outcome: the 1-indexed slot count of its success, or unfinished
/// within the board horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Latency {
    Slots(u32),
    Unfinished,
}

impl Latency {
    pub fn slots(&self) -> Option<u32> {
        match self {
            Latency::Slots(n) => Some(*n),
            Latency::Unfinished => None,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.slots().is_some()
    }
}

impl Serialize for Latency {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Latency::Slots(n) => serializer.serialize_u32(*n),
            Latency::Unfinished => serializer.serialize_str("unfinished"),
        }
    }
}

/// An n x horizon grid of uniform draws in [0, 1): the common sample space
/// for every policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomBoard {
    n: usize,
    horizon: u32,
    cells: Vec<Vec<f64>>,
}

impl RandomBoard {
    /// Draws a board from the trial's substream: a ChaCha generator keyed by
    /// `seed` with `set_stream(trial)`, consumed in column-major order (all
    /// devices of slot 0, then slot 1, ...). This derivation is the
    /// reproducibility contract: any parallel schedule sees the same boards.
    pub fn generate(n: usize, horizon: u32, seed: u64, trial: u64) -> Self {
        let mut rng = trial_rng(seed, trial);
        let mut cells = vec![vec![0.0; horizon as usize]; n];
        for t in 0..horizon as usize {
            for row in cells.iter_mut() {
                row[t] = rng.random();
            }
        }
        Self { n, horizon, cells }
    }

    /// Wraps explicit cells (rows = devices, columns = slots). Cells may be
    /// anywhere in [0, 1]; note that a crafted cell of exactly 1.0 idles the
    /// device even at transmit probability 1, a state generated boards reach
    /// with probability zero and recurrent policies treat as unreachable.
    pub fn from_cells(cells: Vec<Vec<f64>>) -> Result<Self, SimulatorError> {
        let n = cells.len();
        if n == 0 {
            return Err(SimulatorError::InvalidBoard("no devices".into()));
        }
        let horizon = cells[0].len();
        for (k, row) in cells.iter().enumerate() {
            if row.len() != horizon {
                return Err(SimulatorError::InvalidBoard(format!(
                    "row {k} has {} cells, expected {horizon}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|u| !(0.0..=1.0).contains(*u)) {
                return Err(SimulatorError::InvalidBoard(format!(
                    "cell outside [0, 1] in row {k}: {bad}"
                )));
            }
        }
        Ok(Self {
            n,
            horizon: u32::try_from(horizon).expect("horizon fits u32"),
            cells,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn cell(&self, device: usize, slot: usize) -> f64 {
        self.cells[device][slot]
    }

    /// Plain numeric grid, one CSV line per device.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.cells {
            let line: Vec<String> = row.iter().map(|u| format!("{u}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// The full unrolling of a policy on a board: decision and response matrices
/// plus per-device latencies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deduction {
    pub decisions: Vec<Vec<Decision>>,
    pub responses: Vec<Vec<ChannelResponse>>,
    pub latencies: Vec<Latency>,
}

impl Deduction {
    /// One CSV line per device; each cell is `decision,response` with a `*`
    /// marking the successful transmission, e.g. `"send,2+"`, `"send*,1"`,
    /// `"idle,0"`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (decisions, responses) in self.decisions.iter().zip(&self.responses) {
            let line: Vec<String> = decisions
                .iter()
                .zip(responses)
                .map(|(decision, response)| {
                    let name = match (decision, response) {
                        (Decision::Idle, _) => "idle",
                        (Decision::Transmit, ChannelResponse::Success) => "send*",
                        (Decision::Transmit, _) => "send",
                    };
                    format!("\"{name},{response}\"")
                })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Column-by-column deduction shared by [`deduce`] and the Monte Carlo path,
/// so both have identical semantics.
struct Engine<'a> {
    policy: &'a HistoryPolicy,
    histories: Vec<History>,
    done: Vec<bool>,
    latencies: Vec<Latency>,
    transmits: Vec<bool>,
    finished: usize,
}

impl<'a> Engine<'a> {
    fn new(policy: &'a HistoryPolicy, n: usize) -> Self {
        Self {
            policy,
            histories: vec![History::new(); n],
            done: vec![false; n],
            latencies: vec![Latency::Unfinished; n],
            transmits: vec![false; n],
            finished: 0,
        }
    }

    fn all_done(&self) -> bool {
        self.finished == self.done.len()
    }

    /// One slot: the threshold comparison is strict (`u < f(history)` means
    /// transmit, equality idles), a sole transmitter succeeds, two or more
    /// collide. Finished devices idle and their histories stop growing.
    fn step(
        &mut self,
        t: u32,
        column: &[f64],
        mut record: impl FnMut(usize, Decision, ChannelResponse),
    ) {
        let n = self.done.len();
        let mut transmitters = 0usize;
        for (k, &cell) in column.iter().enumerate() {
            let transmit = !self.done[k] && cell < self.policy.prob(&self.histories[k]);
            self.transmits[k] = transmit;
            transmitters += usize::from(transmit);
        }
        for k in 0..n {
            let (decision, response) = if self.transmits[k] {
                let response = if transmitters == 1 {
                    ChannelResponse::Success
                } else {
                    ChannelResponse::Collision
                };
                (Decision::Transmit, response)
            } else {
                (Decision::Idle, ChannelResponse::Silent)
            };
            if !self.done[k] {
                self.histories[k].push(response);
                if response == ChannelResponse::Success {
                    self.done[k] = true;
                    self.latencies[k] = Latency::Slots(t + 1);
                    self.finished += 1;
                }
            }
            record(k, decision, response);
        }
    }
}

/// Unrolls `policy` on every column of `board`.
pub fn deduce(board: &RandomBoard, policy: &HistoryPolicy) -> Deduction {
    let n = board.n();
    let horizon = board.horizon() as usize;
    let mut engine = Engine::new(policy, n);
    let mut decisions = vec![Vec::with_capacity(horizon); n];
    let mut responses = vec![Vec::with_capacity(horizon); n];
    let mut column = vec![0.0; n];
    for t in 0..horizon {
        for (k, slot) in column.iter_mut().enumerate() {
            *slot = board.cell(k, t);
        }
        engine.step(t as u32, &column, |k, decision, response| {
            decisions[k].push(decision);
            responses[k].push(response);
        });
    }
    Deduction {
        decisions,
        responses,
        latencies: engine.latencies,
    }
}

/// Monte Carlo estimate with a 95% normal confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub trials: u64,
    pub unfinished_count: u64,
}

#[derive(Default, Clone, Copy)]
struct Accumulator {
    sum: f64,
    sum_sq: f64,
    count: u64,
    unfinished: u64,
}

impl Accumulator {
    fn add(&mut self, value: f64) {
        self.sum += value;
        self.sum_sq += value * value;
        self.count += 1;
    }

    fn merge(mut self, other: Accumulator) -> Accumulator {
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
        self.unfinished += other.unfinished;
        self
    }
}

/// Estimates the expected cost of `policy` for `n` devices over seeded
/// independent trials.
///
/// Trials are grouped into fixed batches that may run on any number of
/// threads; partial (sum, sum of squares, count) triples are merged in batch
/// order, so the result is identical for any degree of parallelism. Boards
/// are consumed lazily column by column — exactly the cells
/// [`RandomBoard::generate`] would produce for the same (seed, trial).
pub fn monte_carlo(
    policy: &HistoryPolicy,
    n: usize,
    objective: Objective,
    trials: u64,
    seed: u64,
    horizon: u32,
) -> Result<MonteCarloResult, SimulatorError> {
    assert!(trials >= 1, "at least one trial is required");
    assert!(n >= 1, "at least one device is required");
    assert!(horizon >= 1, "horizon must be positive");

    let batches = trials.div_ceil(TRIALS_PER_BATCH);
    let partials: Vec<Accumulator> = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let start = batch * TRIALS_PER_BATCH;
            let end = ((batch + 1) * TRIALS_PER_BATCH).min(trials);
            let mut acc = Accumulator::default();
            let mut column = vec![0.0; n];
            let mut latencies = vec![0.0f64; n];
            for trial in start..end {
                let mut rng = trial_rng(seed, trial);
                let mut engine = Engine::new(policy, n);
                for t in 0..horizon {
                    if engine.all_done() {
                        break;
                    }
                    for slot in column.iter_mut() {
                        *slot = rng.random();
                    }
                    engine.step(t, &column, |_, _, _| {});
                }
                if engine.all_done() {
                    for (slot, latency) in latencies.iter_mut().zip(&engine.latencies) {
                        *slot = f64::from(latency.slots().expect("all finished"));
                    }
                    acc.add(objective.evaluate(&latencies));
                } else {
                    acc.unfinished += 1;
                }
            }
            acc
        })
        .collect();
    let total = partials
        .into_iter()
        .fold(Accumulator::default(), Accumulator::merge);

    let mean = if total.count > 0 {
        total.sum / total.count as f64
    } else {
        f64::NAN
    };
    let ci_halfwidth = if total.count > 1 {
        let count = total.count as f64;
        let variance = ((total.sum_sq - total.sum * total.sum / count) / (count - 1.0)).max(0.0);
        Z_95 * (variance / count).sqrt()
    } else {
        f64::INFINITY
    };
    let result = MonteCarloResult {
        mean,
        ci_halfwidth,
        trials,
        unfinished_count: total.unfinished,
    };
    if total.unfinished > 0 {
        return Err(SimulatorError::HorizonExhausted { result });
    }
    Ok(result)
}

/// Costs of a policy and of its restart-after-collision counterpart on the
/// same seeded boards, for paired comparison. Recurrent policies are fixed
/// points of the construction, so the two costs coincide exactly for them.
pub fn restart_dominance_check(
    base: &HistoryPolicy,
    objective: Objective,
    trials: u64,
    seed: u64,
    horizon: u32,
) -> Result<(MonteCarloResult, MonteCarloResult), SimulatorError> {
    let restarted = base.restart_after_collisions();
    let base_result = monte_carlo(base, 2, objective, trials, seed, horizon)?;
    let restarted_result = monte_carlo(&restarted, 2, objective, trials, seed, horizon)?;
    Ok((base_result, restarted_result))
}
