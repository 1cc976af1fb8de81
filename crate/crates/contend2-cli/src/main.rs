//! `contend2` — construct, evaluate, rediscover, and simulate two-device
//! contention-resolution protocols from the command line.
//!
//! Exit status: 0 on success, 1 on validation errors (flags, files,
//! policies), 2 on numerical failures (degenerate policies, unconverged
//! optimization, exhausted horizons). Every run echoes its fully resolved
//! parameter set, including defaulted seeds, so output is reproducible
//! byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use contend2::analytic::{
    expected_cost, expected_cost_constant, markov_oracle, markov_oracle_constant, CostReport,
};
use contend2::optimizer::{optimize_masses, sweep_lengths, OptimizeConfig, OptimizerError};
use contend2::policy::{HistoryPolicy, Objective, ProbSequence};
use contend2::protocols::{
    avg_table, optimal_avg_protocol, optimal_max_protocol, optimal_min_protocol,
    solve_cubic_in_bracket, CubicSpec, ProtocolError,
};
use contend2::simulator::{deduce, monte_carlo, RandomBoard, SimulatorError, DEFAULT_HORIZON};
use contend2::DEFAULT_SEED;

/// Significant digits for every float in the output; enough to tell the
/// protocol constants apart at a glance.
const OUTPUT_DIGITS: usize = 12;

#[derive(Parser)]
#[command(
    name = "contend2",
    version,
    about = "Optimal two-device contention resolution: protocols, evaluators, optimizer, simulator"
)]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Avg,
    Min,
    Max,
}

impl From<ObjectiveArg> for Objective {
    fn from(arg: ObjectiveArg) -> Self {
        match arg {
            ObjectiveArg::Avg => Objective::Avg,
            ObjectiveArg::Min => Objective::Min,
            ObjectiveArg::Max => Objective::Max,
        }
    }
}

impl ObjectiveArg {
    fn name(self) -> &'static str {
        match self {
            ObjectiveArg::Avg => "avg",
            ObjectiveArg::Min => "min",
            ObjectiveArg::Max => "max",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy's expected cost, by closed form and by the
    /// independent absorbing-chain oracle.
    Evaluate {
        /// Policy as inline JSON (e.g. '[0.5,1.0]') or a path to a JSON file.
        #[arg(long)]
        policy: Option<String>,
        /// Constant per-slot transmit probability instead of a finite policy.
        #[arg(long)]
        constant: Option<f64>,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
    },
    /// Print the optimal protocol for an objective.
    Protocol {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
    },
    /// Rediscover optimal mass sequences numerically by coordinate descent.
    Optimize {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        /// Policy length, either a single value ("3") or a range ("2..6").
        #[arg(long)]
        length: String,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long, default_value_t = 600)]
        max_iterations: u32,
        #[arg(long, default_value_t = 16)]
        restarts: u32,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Monte Carlo estimation on seeded random boards.
    Simulate {
        /// Policy as inline JSON (e.g. '[0.5,1.0]') or a path to a JSON file.
        #[arg(long)]
        policy: Option<String>,
        /// Constant per-slot transmit probability instead of a finite policy.
        #[arg(long)]
        constant: Option<f64>,
        /// Device count.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_HORIZON)]
        horizon: u32,
        /// Write trial 0's board as CSV (rows = devices, columns = slots).
        #[arg(long)]
        dump_board: Option<PathBuf>,
        /// Write trial 0's deduction trace as CSV ("decision,response" cells).
        #[arg(long)]
        dump_deduction: Option<PathBuf>,
    },
    /// Find the bracketed root of a cubic.
    Solve {
        /// Coefficients "c3,c2,c1,c0", highest degree first.
        #[arg(long)]
        cubic: String,
        /// Bracket "lo,hi" straddling the root.
        #[arg(long)]
        bracket: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Per-N exploration table for the average objective.
    Table {
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 6)]
        n_max: u32,
    },
}

enum CliError {
    Validation(String),
    Numerical(String),
}

struct Output {
    command: &'static str,
    params: Value,
    result: Value,
    /// Set when the run completed but a numerical failure must be signalled
    /// (unconverged rows, exhausted horizons); maps to exit status 2.
    numerical_failure: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            use clap::error::ErrorKind;
            let code = match error.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };
    if let Err(message) = init_thread_pool() {
        eprintln!("error: {message}");
        return ExitCode::from(1);
    }
    let format = cli.format;
    match run(cli.command) {
        Ok(output) => {
            let code = if output.numerical_failure { 2 } else { 0 };
            print!("{}", render(format, &output));
            ExitCode::from(code)
        }
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

/// CONTEND2_THREADS caps the rayon worker count for the whole process.
fn init_thread_pool() -> Result<(), String> {
    let Ok(raw) = std::env::var("CONTEND2_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .map_err(|_| format!("CONTEND2_THREADS must be a positive integer, got {raw:?}"))?;
    if threads == 0 {
        return Err("CONTEND2_THREADS must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|error| format!("failed to configure the thread pool: {error}"))
}

fn run(command: Command) -> Result<Output, CliError> {
    match command {
        Command::Evaluate {
            policy,
            constant,
            objective,
        } => evaluate(policy, constant, objective),
        Command::Protocol { objective } => protocol(objective),
        Command::Optimize {
            objective,
            length,
            tolerance,
            max_iterations,
            restarts,
            seed,
        } => optimize(
            objective,
            &length,
            tolerance,
            max_iterations,
            restarts,
            seed,
        ),
        Command::Simulate {
            policy,
            constant,
            n,
            objective,
            trials,
            seed,
            horizon,
            dump_board,
            dump_deduction,
        } => simulate(
            policy,
            constant,
            n,
            objective,
            trials,
            seed,
            horizon,
            dump_board,
            dump_deduction,
        ),
        Command::Solve {
            cubic,
            bracket,
            tol,
        } => solve(&cubic, &bracket, tol),
        Command::Table { objective, n_max } => table(objective, n_max),
    }
}

enum PolicyInput {
    Finite(ProbSequence),
    Constant(f64),
}

impl PolicyInput {
    fn parse(policy: Option<String>, constant: Option<f64>) -> Result<Self, CliError> {
        match (policy, constant) {
            (Some(_), Some(_)) => Err(CliError::Validation(
                "--policy and --constant are mutually exclusive".into(),
            )),
            (None, None) => Err(CliError::Validation(
                "one of --policy or --constant is required".into(),
            )),
            (Some(text), None) => {
                let json = if text.trim_start().starts_with('[') {
                    text
                } else {
                    std::fs::read_to_string(&text).map_err(|error| {
                        CliError::Validation(format!("--policy file {text:?}: {error}"))
                    })?
                };
                let probs = ProbSequence::from_json(&json)
                    .map_err(|error| CliError::Validation(format!("--policy: {error}")))?;
                Ok(PolicyInput::Finite(probs))
            }
            (None, Some(p)) => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(CliError::Validation(format!(
                        "--constant must lie in [0, 1], got {p}"
                    )));
                }
                Ok(PolicyInput::Constant(p))
            }
        }
    }

    fn echo(&self) -> Value {
        match self {
            PolicyInput::Finite(probs) => json!({ "policy": probs.probs() }),
            PolicyInput::Constant(p) => json!({ "constant": p }),
        }
    }

    fn history_policy(&self) -> HistoryPolicy {
        match self {
            PolicyInput::Finite(probs) => HistoryPolicy::recurrent(probs.clone()),
            PolicyInput::Constant(p) => HistoryPolicy::constant(*p),
        }
    }
}

fn evaluate(
    policy: Option<String>,
    constant: Option<f64>,
    objective: ObjectiveArg,
) -> Result<Output, CliError> {
    let input = PolicyInput::parse(policy, constant)?;
    let objective_value: Objective = objective.into();
    let (closed, oracle) = match &input {
        PolicyInput::Finite(probs) => {
            let masses = probs.to_masses();
            let closed = expected_cost(&masses, objective_value).map_err(numerical)?;
            let oracle = markov_oracle(probs, objective_value).map_err(numerical)?;
            (closed, oracle)
        }
        PolicyInput::Constant(p) => {
            let closed = expected_cost_constant(*p, objective_value).map_err(numerical)?;
            let oracle = markov_oracle_constant(*p, objective_value).map_err(numerical)?;
            (closed, oracle)
        }
    };
    let mut params = as_object(input.echo());
    params.insert("objective".into(), json!(objective.name()));
    Ok(Output {
        command: "evaluate",
        params: Value::Object(params),
        result: json!({
            "closed_form": CostReport::closed_form(objective_value, closed),
            "oracle": CostReport::oracle(objective_value, oracle),
            "difference": (closed - oracle).abs(),
        }),
        numerical_failure: false,
    })
}

fn protocol(objective: ObjectiveArg) -> Result<Output, CliError> {
    let result = match objective {
        ObjectiveArg::Avg => {
            let (probs, cost) = optimal_avg_protocol();
            json!({ "probs": probs.probs(), "cost": cost })
        }
        ObjectiveArg::Min => {
            let (p, cost) = optimal_min_protocol();
            json!({ "constant_prob": p, "cost": cost })
        }
        ObjectiveArg::Max => {
            let (probs, cost) = optimal_max_protocol();
            json!({ "probs": probs.probs(), "cost": cost })
        }
    };
    Ok(Output {
        command: "protocol",
        params: json!({ "objective": objective.name() }),
        result,
        numerical_failure: false,
    })
}

fn optimize(
    objective: ObjectiveArg,
    length: &str,
    tolerance: f64,
    max_iterations: u32,
    restarts: u32,
    seed: u64,
) -> Result<Output, CliError> {
    if tolerance <= 0.0 {
        return Err(CliError::Validation("--tolerance must be positive".into()));
    }
    if restarts == 0 {
        return Err(CliError::Validation("--restarts must be at least 1".into()));
    }
    let lengths = parse_lengths(length)?;
    let cfg = OptimizeConfig {
        objective: objective.into(),
        length: *lengths.start(),
        tolerance,
        max_iterations,
        restarts,
        seed,
    };
    let params = json!({
        "objective": objective.name(),
        "length": length,
        "tolerance": tolerance,
        "max_iterations": max_iterations,
        "restarts": restarts,
        "seed": seed,
    });

    let rows = if lengths.start() == lengths.end() {
        match optimize_masses(&cfg) {
            Ok(report) => vec![report],
            Err(OptimizerError::NotConverged { report }) => vec![*report],
            Err(error) => return Err(numerical(error)),
        }
    } else {
        sweep_lengths(&cfg, lengths.clone())
            .map_err(numerical)?
            .rows
    };
    let all_converged = rows.iter().all(|row| row.converged);
    let best_length = rows
        .iter()
        .fold(
            None::<&contend2::optimizer::OptimizeReport>,
            |best, row| match best {
                Some(current) if row.cost >= current.cost - 1e-9 => Some(current),
                _ => Some(row),
            },
        )
        .map(|row| row.length);
    Ok(Output {
        command: "optimize",
        params,
        result: json!({ "rows": rows, "best_length": best_length }),
        numerical_failure: !all_converged,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    policy: Option<String>,
    constant: Option<f64>,
    n: usize,
    objective: ObjectiveArg,
    trials: u64,
    seed: u64,
    horizon: u32,
    dump_board: Option<PathBuf>,
    dump_deduction: Option<PathBuf>,
) -> Result<Output, CliError> {
    if n == 0 {
        return Err(CliError::Validation("--n must be at least 1".into()));
    }
    if trials == 0 {
        return Err(CliError::Validation("--trials must be at least 1".into()));
    }
    if horizon == 0 {
        return Err(CliError::Validation("--horizon must be at least 1".into()));
    }
    let input = PolicyInput::parse(policy, constant)?;
    let history_policy = input.history_policy();

    let mut params = as_object(input.echo());
    params.insert("n".into(), json!(n));
    params.insert("objective".into(), json!(objective.name()));
    params.insert("trials".into(), json!(trials));
    params.insert("seed".into(), json!(seed));
    params.insert("horizon".into(), json!(horizon));

    for (path, dump_deduction_trace) in [(&dump_board, false), (&dump_deduction, true)] {
        let Some(path) = path else { continue };
        let board = RandomBoard::generate(n, horizon, seed, 0);
        let csv = if dump_deduction_trace {
            deduce(&board, &history_policy).to_csv()
        } else {
            board.to_csv()
        };
        std::fs::write(path, csv).map_err(|error| {
            CliError::Validation(format!("cannot write {}: {error}", path.display()))
        })?;
    }
    if let Some(path) = &dump_board {
        params.insert("dump_board".into(), json!(path.display().to_string()));
    }
    if let Some(path) = &dump_deduction {
        params.insert("dump_deduction".into(), json!(path.display().to_string()));
    }

    let objective_value: Objective = objective.into();
    let (mc, numerical_failure) =
        match monte_carlo(&history_policy, n, objective_value, trials, seed, horizon) {
            Ok(result) => (result, false),
            Err(SimulatorError::HorizonExhausted { result }) => (result, true),
            Err(error) => return Err(numerical(error)),
        };
    let mut result = as_object(json!(mc));
    result.insert("objective".into(), json!(objective.name()));
    result.insert("method".into(), json!("monte_carlo"));
    Ok(Output {
        command: "simulate",
        params: Value::Object(params),
        result: Value::Object(result),
        numerical_failure,
    })
}

fn solve(cubic: &str, bracket: &str, tol: f64) -> Result<Output, CliError> {
    if tol <= 0.0 {
        return Err(CliError::Validation("--tol must be positive".into()));
    }
    let coefficients: [f64; 4] = parse_numbers(cubic)
        .ok_or_else(|| CliError::Validation("--cubic expects four numbers c3,c2,c1,c0".into()))?;
    let [lo, hi]: [f64; 2] = parse_numbers(bracket)
        .ok_or_else(|| CliError::Validation("--bracket expects two numbers lo,hi".into()))?;
    if lo >= hi || lo.is_nan() || hi.is_nan() {
        return Err(CliError::Validation(format!(
            "--bracket must satisfy lo < hi, got {lo},{hi}"
        )));
    }
    let spec = CubicSpec::new(coefficients, (lo, hi));
    let root = match solve_cubic_in_bracket(&spec, tol) {
        Ok(root) => root,
        Err(error @ ProtocolError::NoSignChange { .. }) => {
            return Err(CliError::Validation(format!("--bracket: {error}")))
        }
        Err(error) => return Err(numerical(error)),
    };
    Ok(Output {
        command: "solve",
        params: json!({ "cubic": coefficients, "bracket": [lo, hi], "tol": tol }),
        result: json!({ "root": root, "residual": spec.eval(root) }),
        numerical_failure: false,
    })
}

fn table(objective: ObjectiveArg, n_max: u32) -> Result<Output, CliError> {
    if objective != ObjectiveArg::Avg {
        return Err(CliError::Validation(
            "--objective: the exploration table exists only for avg".into(),
        ));
    }
    if n_max == 0 {
        return Err(CliError::Validation("--n-max must be at least 1".into()));
    }
    let rows = avg_table(n_max);
    Ok(Output {
        command: "table",
        params: json!({ "objective": objective.name(), "n_max": n_max }),
        result: json!({ "rows": rows }),
        numerical_failure: false,
    })
}

fn numerical(error: impl std::fmt::Display) -> CliError {
    CliError::Numerical(error.to_string())
}

fn as_object(value: Value) -> Map<String, Value> {
    match value {
        Value::Object(map) => map,
        _ => unreachable!("echo values are objects"),
    }
}

fn parse_numbers<const N: usize>(text: &str) -> Option<[f64; N]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|part| part.trim().parse::<f64>().ok())
        .collect::<Option<_>>()?;
    parts.try_into().ok()
}

fn parse_lengths(text: &str) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let invalid = || {
        CliError::Validation(format!(
            "--length expects a number (\"3\") or an inclusive range (\"2..6\"), got {text:?}"
        ))
    };
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| invalid())?;
        let hi: u32 = hi.trim().parse().map_err(|_| invalid())?;
        if lo == 0 || hi < lo {
            return Err(invalid());
        }
        Ok(lo..=hi)
    } else {
        let length: u32 = text.trim().parse().map_err(|_| invalid())?;
        if length == 0 {
            return Err(invalid());
        }
        Ok(length..=length)
    }
}

/// Rounds every float in the tree to [`OUTPUT_DIGITS`] significant digits so
/// identical runs print identical bytes and constants stay recognizable.
fn round_floats(value: &mut Value) {
    match value {
        Value::Number(number) => {
            if number.is_f64() {
                if let Some(f) = number.as_f64() {
                    *value = json!(round_sig(f));
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.*e}", OUTPUT_DIGITS - 1)
        .parse()
        .expect("rounded float parses back")
}

fn render(format: Format, output: &Output) -> String {
    let mut params = output.params.clone();
    let mut result = output.result.clone();
    round_floats(&mut params);
    round_floats(&mut result);
    match format {
        Format::Json => {
            let envelope = json!({
                "command": output.command,
                "params": params,
                "result": result,
            });
            format!("{envelope}\n")
        }
        Format::Text => {
            let mut out = format!("# contend2 {}\n# params: {params}\n", output.command);
            let pretty = serde_json::to_string_pretty(&result).expect("result serializes");
            out.push_str(&pretty);
            out.push('\n');
            out
        }
        Format::Csv => render_csv(output.command, &params, &result),
    }
}

fn render_csv(command: &str, params: &Value, result: &Value) -> String {
    let mut out = format!("# command={command}\n");
    if let Value::Object(map) = params {
        for (key, value) in map {
            out.push_str(&format!("# {key}={}\n", csv_cell(value)));
        }
    }
    match result.get("rows").and_then(Value::as_array) {
        Some(rows) if !rows.is_empty() => {
            // Scalar companions of the row table ride along as comments.
            if let Value::Object(map) = result {
                for (key, value) in map.iter().filter(|(key, _)| *key != "rows") {
                    out.push_str(&format!("# {key}={}\n", csv_cell(value)));
                }
            }
            if let Value::Object(first) = &rows[0] {
                let header: Vec<&str> = first.keys().map(String::as_str).collect();
                out.push_str(&header.join(","));
                out.push('\n');
                for row in rows {
                    if let Value::Object(cells) = row {
                        let line: Vec<String> =
                            header.iter().map(|key| csv_cell(&cells[*key])).collect();
                        out.push_str(&line.join(","));
                        out.push('\n');
                    }
                }
            }
        }
        _ => {
            if let Value::Object(map) = result {
                out.push_str("key,value\n");
                for (key, value) in map {
                    out.push_str(&format!("{key},{}\n", csv_cell(value)));
                }
            }
        }
    }
    out
}

fn csv_cell(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(csv_cell).collect::<Vec<_>>().join(";"),
        other => other.to_string(),
    }
}
