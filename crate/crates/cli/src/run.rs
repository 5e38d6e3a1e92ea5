//! The `run` and `validate` commands and the files they write.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use scpnum_core::agents::{audit_locality, write_message_log, AgentSystem, DistributedRun, SimError};
use scpnum_core::engine::{compare_traces, kkt_residual, solve, steady_state_check, TraceComparison};
use scpnum_core::network::FeasibilityReport;
use scpnum_core::oracle::{
    grid_search, local_opt_test, GridSpec, LocalOptReport, LocalOptSpec, OracleError, OracleResult,
};
use scpnum_core::{fmt_full, AllocationResult, Instance, ScpError, SolverConfig};

use crate::scenario::Scenario;

/// Largest per-iteration relative trace deviation accepted between engine and agents.
pub const EQUIVALENCE_TOL: f64 = 1e-12;
/// Aggregate-utility gap within which the engine agrees with the grid oracle.
pub const ORACLE_UTILITY_TOL: f64 = 1e-3;
/// Tolerance for the steady-state check, Kbps.
pub const STEADY_STATE_TOL: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Solver(#[from] ScpError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Engine,
    Agents,
    Both,
}

/// What a command found, independent of the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub success: bool,
    pub summary: String,
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CommandError> {
    let path = dir.join(name);
    let io_err = |source| CommandError::Io {
        path: path.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(&path).map_err(io_err)?);
    body(&mut out).and_then(|()| out.flush()).map_err(io_err)
}

/// `t, x_<id>.., mu_<id>.., stopping_metric, g_<id>.., ghat_<id>..`, one row
/// per iteration including `t = 0`.
pub fn write_trace(inst: &Instance, result: &AllocationResult, out: &mut dyn Write) -> io::Result<()> {
    let net = inst.network();
    let mut header = vec!["t".to_string()];
    header.extend(net.sources().iter().map(|s| format!("x_{}", s.id)));
    header.extend(net.links().iter().map(|l| format!("mu_{}", l.id)));
    header.push("stopping_metric".into());
    header.extend(net.links().iter().map(|l| format!("g_{}", l.id)));
    header.extend(net.links().iter().map(|l| format!("ghat_{}", l.id)));
    writeln!(out, "{}", header.join(","))?;
    for rec in &result.trace {
        let mut row = vec![rec.t.to_string()];
        row.extend(rec.x.iter().map(|&v| fmt_full(v)));
        row.extend(rec.mu.iter().map(|&v| fmt_full(v)));
        row.push(rec.stopping_metric.map(fmt_full).unwrap_or_default());
        row.extend(rec.g.iter().map(|&v| fmt_full(v)));
        row.extend(rec.g_hat.iter().map(|&v| fmt_full(v)));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Rates, prices, feasibility, KKT residuals and the steady-state check for
/// one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub converged: bool,
    pub iterations: usize,
    pub utility: f64,
    pub feasibility: FeasibilityReport,
    /// Largest normalized stationarity residual over sources strictly inside their bounds.
    pub max_interior_stationarity: f64,
    /// Largest `|μ_l (g_l - c_l)| / c_l`.
    pub max_slackness: f64,
    pub steady_state_gap: f64,
    pub capacity_excess: f64,
    pub steady_state_passed: bool,
}

pub fn summarize(inst: &Instance, config: &SolverConfig, result: &AllocationResult) -> Result<RunSummary, ScpError> {
    let st = &result.final_state;
    let kkt = kkt_residual(inst, &st.x_tilde, &st.x_tilde_prev, &st.mu)?;
    let max_interior_stationarity = inst
        .utilities()
        .iter()
        .zip(&st.x)
        .zip(&kkt.stationarity_normalized)
        .filter(|((u, &x), _)| x > u.min_rate() && x < u.max_rate())
        .map(|(_, r)| r.abs())
        .fold(0.0, f64::max);
    let max_slackness = kkt.slackness_normalized.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let steady = steady_state_check(inst, st, STEADY_STATE_TOL);
    Ok(RunSummary {
        converged: result.converged,
        iterations: result.iterations,
        utility: inst.aggregate_utility(&result.rates),
        feasibility: inst
            .network()
            .is_feasible(&result.rates, inst.utilities(), config.feas_tol)
            .expect("one rate per source"),
        max_interior_stationarity,
        max_slackness,
        steady_state_gap: steady.max_linearization_gap,
        capacity_excess: steady.max_capacity_excess,
        steady_state_passed: steady.passed,
    })
}

fn render_result(sc: &Scenario, label: &str, result: &AllocationResult, summary: &RunSummary) -> String {
    let net = sc.instance.network();
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", sc.name);
    let _ = writeln!(s, "mode: {label}");
    let _ = writeln!(s, "converged: {}", summary.converged);
    let _ = writeln!(s, "iterations: {}", summary.iterations);
    let _ = writeln!(s, "final_stopping_metric: {}", fmt_full(result.last_metric()));
    for (src, x) in net.sources().iter().zip(&result.rates) {
        let _ = writeln!(s, "rate_kbps[{}]: {}", src.id, fmt_full(*x));
    }
    for (l, (link, mu)) in net.links().iter().zip(&result.prices).enumerate() {
        let _ = writeln!(
            s,
            "link[{}]: price {} load_kbps {} capacity_kbps {}",
            link.id,
            fmt_full(*mu),
            fmt_full(net.load_at(&result.rates, l)),
            fmt_full(link.capacity)
        );
    }
    let _ = writeln!(s, "aggregate_utility: {}", fmt_full(summary.utility));
    let _ = writeln!(
        s,
        "feasible (tol {} Kbps): {}",
        sc.config.feas_tol, summary.feasibility.feasible
    );
    for v in &summary.feasibility.violations {
        let _ = writeln!(s, "  violation: {v}");
    }
    let _ = writeln!(
        s,
        "kkt_max_interior_stationarity: {:e}",
        summary.max_interior_stationarity
    );
    let _ = writeln!(s, "kkt_max_slackness_over_capacity: {:e}", summary.max_slackness);
    let _ = writeln!(
        s,
        "steady_state (tol {STEADY_STATE_TOL} Kbps): {} (max |ghat - g| {:e}, max g - c {:e})",
        if summary.steady_state_passed { "pass" } else { "fail" },
        summary.steady_state_gap,
        summary.capacity_excess
    );
    s
}

fn run_agents(inst: &Instance, config: &SolverConfig) -> Result<DistributedRun, CommandError> {
    Ok(AgentSystem::new(inst, config)?.run_to_convergence()?)
}

/// Equivalence report between the monolithic and distributed runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Equivalence {
    pub traces: TraceComparison,
    /// Rounds whose message count differs from `2 · nnz(R)`.
    pub bad_rounds: Vec<usize>,
    pub locality: Result<(), String>,
}

impl Equivalence {
    pub fn passed(&self) -> bool {
        self.traces.max_deviation() <= EQUIVALENCE_TOL && self.bad_rounds.is_empty() && self.locality.is_ok()
    }
}

pub fn equivalence(inst: &Instance, engine: &AllocationResult, dist: &DistributedRun) -> Equivalence {
    let per_round = 2 * inst.network().nnz();
    let mut counts = vec![0usize; dist.result.iterations + 1];
    for m in &dist.log {
        if let Some(c) = counts.get_mut(m.round) {
            *c += 1;
        }
    }
    Equivalence {
        traces: compare_traces(&engine.trace, &dist.result.trace),
        bad_rounds: (1..counts.len()).filter(|&r| counts[r] != per_round).collect(),
        locality: audit_locality(inst.network(), &dist.log).map_err(|e| e.to_string()),
    }
}

fn render_equivalence(inst: &Instance, eq: &Equivalence, engine: &AllocationResult, dist: &DistributedRun) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "engine_iterations: {}", engine.iterations);
    let _ = writeln!(s, "agents_rounds: {}", dist.result.iterations);
    let _ = writeln!(s, "same_length: {}", eq.traces.same_length);
    let _ = writeln!(s, "max_rel_deviation_rates: {:e}", eq.traces.max_rel_rates);
    let _ = writeln!(s, "max_rel_deviation_prices: {:e}", eq.traces.max_rel_prices);
    let _ = writeln!(s, "tolerance: {EQUIVALENCE_TOL:e}");
    let _ = writeln!(s, "messages_total: {}", dist.log.len());
    let _ = writeln!(s, "messages_per_round_expected: {}", 2 * inst.network().nnz());
    let _ = writeln!(s, "rounds_with_wrong_message_count: {:?}", eq.bad_rounds);
    match &eq.locality {
        Ok(()) => {
            let _ = writeln!(s, "locality: every message is between adjacent link and source");
        }
        Err(e) => {
            let _ = writeln!(s, "locality: VIOLATED: {e}");
        }
    }
    let _ = writeln!(
        s,
        "verdict: {}",
        if eq.passed() { "equivalent" } else { "NOT equivalent" }
    );
    s
}

/// Runs the scenario in `mode` and writes `trace.csv` and `result.txt`, plus
/// `messages.csv` when agents run and `equivalence.txt` in `both` mode.
/// Succeeds when the run converged to a point feasible at `feas_tol` and,
/// in `both` mode, the two traces agree.
pub fn run(sc: &Scenario, mode: Mode, out_dir: &Path) -> Result<Outcome, CommandError> {
    fs::create_dir_all(out_dir).map_err(|source| CommandError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let inst = &sc.instance;
    let engine = matches!(mode, Mode::Engine | Mode::Both)
        .then(|| solve(inst, &sc.config))
        .transpose()?;
    let dist = matches!(mode, Mode::Agents | Mode::Both)
        .then(|| run_agents(inst, &sc.config))
        .transpose()?;

    let (label, primary) = match (&engine, &dist) {
        (Some(e), _) => ("engine", e),
        (None, Some(d)) => ("agents", &d.result),
        (None, None) => unreachable!("every mode runs something"),
    };
    let summary = summarize(inst, &sc.config, primary)?;
    write_file(out_dir, "trace.csv", |w| write_trace(inst, primary, w))?;
    let mut report = render_result(sc, label, primary, &summary);

    let mut success = summary.converged && summary.feasibility.feasible;
    if let Some(d) = &dist {
        write_file(out_dir, "messages.csv", |w| write_message_log(&d.log, w))?;
    }
    if let (Some(e), Some(d)) = (&engine, &dist) {
        let eq = equivalence(inst, e, d);
        write_file(out_dir, "trace_agents.csv", |w| write_trace(inst, &d.result, w))?;
        write_file(out_dir, "equivalence.txt", |w| {
            w.write_all(render_equivalence(inst, &eq, e, d).as_bytes())
        })?;
        let _ = writeln!(
            report,
            "equivalence: max trace deviation {:e}",
            eq.traces.max_deviation()
        );
        success &= eq.passed();
    }
    write_file(out_dir, "result.txt", |w| w.write_all(report.as_bytes()))?;

    let summary_line = format!(
        "{}: {} after {} iterations, utility {:.6}, feasible {}",
        sc.name,
        if summary.converged {
            "converged"
        } else {
            "NOT converged"
        },
        summary.iterations,
        summary.utility,
        summary.feasibility.feasible
    );
    Ok(Outcome {
        success,
        summary: summary_line,
    })
}

/// How the engine's point relates to the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Agreement {
    /// Aggregate utility within `ORACLE_UTILITY_TOL` of the grid optimum.
    Grid,
    /// Not within tolerance of the grid, but no sampled feasible
    /// perturbation improves on it.
    LocalOptimum,
    Disagree,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub engine: AllocationResult,
    pub engine_utility: f64,
    pub oracle: OracleResult,
    /// `None` when the engine's point is infeasible at the local test's tolerance.
    pub local: Option<LocalOptReport>,
    pub agreement: Agreement,
    pub oracle_time: Duration,
}

impl Validation {
    pub fn utility_gap(&self) -> f64 {
        self.engine_utility - self.oracle.utility
    }
}

/// Runs the engine, the grid oracle and the local perturbation test.
pub fn cross_check(inst: &Instance, config: &SolverConfig, seed: u64) -> Result<Validation, CommandError> {
    let engine = solve(inst, config)?;
    let started = Instant::now();
    let oracle = grid_search(inst, &GridSpec::default())?;
    let oracle_time = started.elapsed();
    let local_spec = LocalOptSpec {
        seed,
        ..LocalOptSpec::default()
    };
    let local = match local_opt_test(inst, &engine.rates, &local_spec) {
        Ok(r) => Some(r),
        Err(OracleError::InfeasibleCandidate(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let engine_utility = inst.aggregate_utility(&engine.rates);
    let agreement = if !engine.converged {
        Agreement::Disagree
    } else if (engine_utility - oracle.utility).abs() <= ORACLE_UTILITY_TOL {
        Agreement::Grid
    } else if local.as_ref().is_some_and(|r| r.passed) {
        Agreement::LocalOptimum
    } else {
        Agreement::Disagree
    };
    Ok(Validation {
        engine,
        engine_utility,
        oracle,
        local,
        agreement,
        oracle_time,
    })
}

fn render_validation(sc: &Scenario, v: &Validation, seed: u64) -> String {
    let net = sc.instance.network();
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", sc.name);
    let _ = writeln!(s, "engine_converged: {}", v.engine.converged);
    let _ = writeln!(s, "engine_iterations: {}", v.engine.iterations);
    let _ = writeln!(s, "engine_utility: {}", fmt_full(v.engine_utility));
    let _ = writeln!(s, "oracle_utility: {}", fmt_full(v.oracle.utility));
    let _ = writeln!(s, "utility_gap (engine - oracle): {:e}", v.utility_gap());
    let _ = writeln!(s, "utility_tolerance: {ORACLE_UTILITY_TOL:e}");
    for (i, src) in net.sources().iter().enumerate() {
        let _ = writeln!(
            s,
            "source[{}]: engine {} oracle {} grid_step {}",
            src.id,
            fmt_full(v.engine.rates[i]),
            fmt_full(v.oracle.rates[i]),
            fmt_full(v.oracle.resolution[i])
        );
    }
    let passes: Vec<String> = v.oracle.pass_utilities.iter().map(|&u| fmt_full(u)).collect();
    let _ = writeln!(s, "oracle_pass_utilities: {}", passes.join(" "));
    let _ = writeln!(s, "oracle_certificate_feasible: {}", v.oracle.certificate.feasible);
    let _ = writeln!(s, "oracle_seconds: {:.3}", v.oracle_time.as_secs_f64());
    match &v.local {
        Some(r) => {
            let _ = writeln!(
                s,
                "local_opt_test (seed {seed}): {} (best gain {:e} over {} feasible samples)",
                if r.passed { "pass" } else { "fail" },
                r.best_gain,
                r.feasible_samples
            );
        }
        None => {
            let _ = writeln!(s, "local_opt_test (seed {seed}): not run, engine point infeasible");
        }
    }
    let verdict = match v.agreement {
        Agreement::Grid => "agrees with grid optimum",
        Agreement::LocalOptimum => "distinct local optimum (passes local test)",
        Agreement::Disagree => "DISAGREES",
    };
    let _ = writeln!(s, "verdict: {verdict}");
    s
}

/// Writes `validation.txt`. Succeeds when the engine agrees with the oracle
/// in either sense.
pub fn validate(sc: &Scenario, out_dir: &Path, seed: u64) -> Result<Outcome, CommandError> {
    let v = cross_check(&sc.instance, &sc.config, seed)?;
    fs::create_dir_all(out_dir).map_err(|source| CommandError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_file(out_dir, "validation.txt", |w| {
        w.write_all(render_validation(sc, &v, seed).as_bytes())
    })?;
    Ok(Outcome {
        success: v.agreement != Agreement::Disagree,
        summary: format!(
            "{}: engine {:.6} vs oracle {:.6} ({:?})",
            sc.name, v.engine_utility, v.oracle.utility, v.agreement
        ),
    })
}
