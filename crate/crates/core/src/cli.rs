//! Command-line front end. The binary is a thin wrapper around [`main_with_args`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, CertificateReport, DecayVerdict, TriggerReport, DEFAULT_DECAY_SLACK};
use crate::error::{PeticError, Result};
use crate::output;
use crate::scenario::Scenario;
use crate::simulator::{self, EnsembleStats, Problem, Schedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "petic", version, about = "Periodic event-triggered impulsive control: certificates and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Args)]
pub struct CommonFlags {
    /// Treat a failed matching check as fatal.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "petic-out")]
    pub out: PathBuf,
    /// Also write gnuplot scripts next to the CSVs.
    #[arg(long, global = true)]
    pub gnuplot: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the stability certificate and check every assumption.
    Verify { scenario: String },
    /// Simulate one path.
    Run {
        scenario: String,
        /// Run seed; defaults to run 0 of the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo ensemble and mean-square decay check.
    Ensemble {
        scenario: String,
        #[arg(long)]
        runs: Option<usize>,
        /// Switch the controller off.
        #[arg(long)]
        uncontrolled: bool,
    },
    /// Compare event-triggered and fixed-period updating.
    Baseline {
        scenario: String,
        #[arg(long)]
        runs: Option<usize>,
    },
}

/// Exit status for an error, per the documented contract.
pub fn exit_code(err: &PeticError) -> i32 {
    match err {
        PeticError::BlowUp { .. } | PeticError::EnsembleFailure { .. } | PeticError::Invariant(_) => EXIT_BLOWUP,
        _ => EXIT_VALIDATION,
    }
}

/// Loads a scenario file, falling back to a bundled scenario of that name.
pub fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path);
    }
    if Scenario::bundled_names().contains(&arg) {
        let s = Scenario::bundled(arg)?;
        s.validate()?;
        return Ok(s);
    }
    Err(PeticError::Usage(format!(
        "scenario `{arg}` is neither a file nor one of the bundled names {:?}",
        Scenario::bundled_names()
    )))
}

#[derive(Debug, Serialize)]
struct RunSummary {
    seed: u64,
    events: usize,
    min_gap: Option<f64>,
    diverged: Option<String>,
    decay_pass: Option<bool>,
    decay_margin: Option<f64>,
    trigger: TriggerReport,
}

#[derive(Debug, Serialize)]
struct EnsembleSummary {
    mode: String,
    runs: usize,
    excluded: usize,
    failed: bool,
    first_error: Option<String>,
    mean_count: Option<f64>,
    gap_min: Option<f64>,
    gap_mean: Option<f64>,
    gap_max: Option<f64>,
    zeno_violations: usize,
    m: f64,
    gamma: f64,
    decay: Option<DecayJson>,
    trigger: TriggerReport,
}

#[derive(Debug, Serialize)]
struct DecayJson {
    pass: bool,
    slack: f64,
    margin: f64,
    worst_ratio: f64,
    worst_t: f64,
    fitted_exponent: Option<f64>,
}

impl From<DecayVerdict<f64>> for DecayJson {
    fn from(v: DecayVerdict<f64>) -> Self {
        DecayJson {
            pass: v.pass,
            slack: DEFAULT_DECAY_SLACK,
            margin: v.margin,
            worst_ratio: v.worst_ratio,
            worst_t: v.worst_t,
            fitted_exponent: v.fitted_exponent,
        }
    }
}

fn print_report(r: &CertificateReport) {
    println!("mode            {}", r.mode);
    println!("dim             {} ({} agents)", r.dim, r.agents);
    println!("lambda          {:.6}", r.lambda);
    if let Some(l1) = r.lambda1 {
        println!("lambda1         {l1:.6}");
    }
    if let Some(l1t) = r.lambda1_tilde {
        println!("lambda1_tilde   {l1t:.6}");
    }
    println!("gamma_bar       {:.6}", r.gamma_bar);
    println!("gamma           {} ({})", r.gamma, if r.gamma_certified { "certified" } else { "NOT certified" });
    println!("M               {:.6}", r.m);
    println!("feasible        {}", r.feasible);
    for c in &r.checks {
        let tag = match (c.pass, c.mandatory) {
            (true, _) => "ok  ",
            (false, true) => "FAIL",
            (false, false) => "warn",
        };
        let res = c.residual.map(|v| format!(" residual {v:.3e}")).unwrap_or_default();
        println!("  [{tag}] {:<22} {:<24}{res}  {}", c.name, c.subject, c.detail);
    }
}

fn cmd_verify(scenario: &Scenario, flags: &CommonFlags) -> Result<i32> {
    let problem = scenario.compile::<f64>()?;
    let report = analysis::certify_problem(&problem, flags.strict)?;
    print_report(&report);
    let path = output::write_file(&flags.out, "report.json", &output::json(&report)?)?;
    println!("wrote {}", path.display());
    Ok(if report.ok { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn certificate_constants(problem: &Problem<f64>) -> Result<(f64, f64)> {
    let report = analysis::certify_problem(problem, false)?;
    Ok((report.gamma, report.m))
}

fn cmd_run(scenario: &Scenario, seed: Option<u64>, flags: &CommonFlags) -> Result<i32> {
    let problem = scenario.compile::<f64>()?;
    let seed = seed.unwrap_or_else(|| simulator::run_seed(problem.sim.master_seed, 0));
    let outcome = simulator::simulate(&problem, seed);
    let traj = &outcome.trajectory;
    output::write_file(&flags.out, "trajectory.csv", &output::trajectory_csv(traj))?;
    output::write_file(&flags.out, "agents.csv", &output::agents_csv(traj, &problem.sys))?;
    output::write_file(&flags.out, "events.csv", &output::events_csv(&traj.events))?;
    if flags.gnuplot {
        output::write_file(&flags.out, "trajectory.gp", &output::gnuplot_trajectory(problem.sys.dim))?;
        output::write_file(&flags.out, "events.gp", &output::gnuplot_events())?;
    }
    let trigger = analysis::trigger_report(std::slice::from_ref(&traj.events), problem.trigger.delta, problem.sim.horizon);
    let (gamma, m) = certificate_constants(&problem)?;
    let decay = if outcome.failure.is_none() {
        analysis::decay_check(&traj.times, &traj.norm_sq, traj.norm_sq[0], gamma, m, DEFAULT_DECAY_SLACK).ok()
    } else {
        None
    };
    let summary = RunSummary {
        seed,
        events: traj.events.len(),
        min_gap: traj.events.min_gap(),
        diverged: outcome.failure.as_ref().map(|e| e.to_string()),
        decay_pass: decay.map(|d| d.pass),
        decay_margin: decay.map(|d| d.margin),
        trigger,
    };
    output::write_file(&flags.out, "run.json", &output::json(&summary)?)?;
    println!(
        "events {} | min gap {} | decay {} | reduction {:.1}% vs {} fixed-period updates",
        summary.events,
        summary.min_gap.map_or("-".into(), |g| format!("{g:.4}")),
        match decay {
            Some(d) if d.pass => format!("pass (margin {:.3})", d.margin),
            Some(d) => format!("FAIL (worst ratio {:.3e} at t = {:.3})", d.worst_ratio, d.worst_t),
            None => "n/a".into(),
        },
        100.0 * summary.trigger.reduction,
        summary.trigger.baseline
    );
    match outcome.failure {
        Some(e) => {
            eprintln!("error: {e}");
            Ok(exit_code(&e))
        }
        None => Ok(EXIT_OK),
    }
}

fn ensemble_summary(problem: &Problem<f64>, stats: &EnsembleStats<f64>, gamma: f64, m: f64) -> EnsembleSummary {
    let decay = analysis::decay_check_stats(stats, gamma, m, DEFAULT_DECAY_SLACK).ok();
    EnsembleSummary {
        mode: problem.mode.name().into(),
        runs: stats.runs,
        excluded: stats.excluded,
        failed: stats.exclusion_exceeded() || stats.included() == 0,
        first_error: stats.first_error.clone(),
        mean_count: stats.mean_count(),
        gap_min: stats.gap_min,
        gap_mean: stats.gap_mean,
        gap_max: stats.gap_max,
        zeno_violations: stats.zeno_violations,
        m,
        gamma,
        decay: decay.map(DecayJson::from),
        trigger: analysis::trigger_report(&stats.logs, problem.trigger.delta, problem.sim.horizon),
    }
}

fn run_stats(problem: &Problem<f64>) -> Result<EnsembleStats<f64>> {
    let period = problem.sim.period_steps(problem.trigger.delta)?;
    Ok(EnsembleStats::from_outcomes(&simulator::run_ensemble_outcomes(problem), period))
}

fn cmd_ensemble(scenario: &Scenario, runs: Option<usize>, uncontrolled: bool, flags: &CommonFlags) -> Result<i32> {
    let mut scenario = scenario.clone();
    if let Some(r) = runs {
        scenario.sim.runs = r;
    }
    // M and γ always come from the controlled design
    let (gamma, m) = certificate_constants(&scenario.compile::<f64>()?)?;
    let problem = if uncontrolled { scenario.uncontrolled() } else { scenario }.compile::<f64>()?;
    let stats = run_stats(&problem)?;
    let summary = ensemble_summary(&problem, &stats, gamma, m);
    if !stats.times.is_empty() {
        output::write_file(&flags.out, "ensemble.csv", &output::ensemble_csv(&stats, gamma, m))?;
        if flags.gnuplot {
            output::write_file(&flags.out, "ensemble.gp", &output::gnuplot_ensemble())?;
        }
    }
    output::write_file(&flags.out, "ensemble.json", &output::json(&summary)?)?;
    println!(
        "runs {} (excluded {}) | mean events {} | min gap {} | zeno violations {} | decay {} | reduction {:.1}% vs {}",
        summary.runs,
        summary.excluded,
        summary.mean_count.map_or("-".into(), |c| format!("{c:.1}")),
        summary.gap_min.map_or("-".into(), |g| format!("{g:.4}")),
        summary.zeno_violations,
        match &summary.decay {
            Some(d) if d.pass => format!("pass (margin {:.3})", d.margin),
            Some(d) => format!("FAIL (worst ratio {:.3e} at t = {:.3})", d.worst_ratio, d.worst_t),
            None => "n/a".into(),
        },
        100.0 * summary.trigger.reduction,
        summary.trigger.baseline
    );
    if summary.failed {
        let err = PeticError::EnsembleFailure {
            excluded: stats.excluded,
            runs: stats.runs,
            first_error: stats.first_error,
        };
        eprintln!("error: {err}");
        if uncontrolled {
            eprintln!("uncontrolled system is divergent");
        }
        return Ok(EXIT_BLOWUP);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct BaselineSummary {
    analytic_baseline: usize,
    event_triggered: EnsembleSummary,
    fixed_period: EnsembleSummary,
}

fn cmd_baseline(scenario: &Scenario, runs: Option<usize>, flags: &CommonFlags) -> Result<i32> {
    let mut scenario = scenario.clone();
    if let Some(r) = runs {
        scenario.sim.runs = r;
    }
    let problem = scenario.compile::<f64>()?;
    let (gamma, m) = certificate_constants(&problem)?;
    let et_stats = run_stats(&problem)?;
    let fixed = problem.clone().with_schedule(Schedule::FixedPeriod);
    let fp_stats = run_stats(&fixed)?;
    let summary = BaselineSummary {
        analytic_baseline: problem.baseline_updates(),
        event_triggered: ensemble_summary(&problem, &et_stats, gamma, m),
        fixed_period: ensemble_summary(&fixed, &fp_stats, gamma, m),
    };
    output::write_file(&flags.out, "baseline.json", &output::json(&summary)?)?;
    let line = |name: &str, s: &EnsembleSummary| {
        println!(
            "{name:<16} mean updates {:>8} | excluded {}/{} | decay {}",
            s.mean_count.map_or("-".into(), |c| format!("{c:.1}")),
            s.excluded,
            s.runs,
            s.decay.as_ref().map_or("n/a", |d| if d.pass { "pass" } else { "FAIL" })
        );
    };
    line("event-triggered", &summary.event_triggered);
    line("fixed-period", &summary.fixed_period);
    println!(
        "reduction {:.1}% against floor(T/Delta) = {}",
        100.0 * summary.event_triggered.trigger.reduction,
        summary.analytic_baseline
    );
    if summary.event_triggered.failed {
        return Ok(EXIT_BLOWUP);
    }
    Ok(EXIT_OK)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Verify { scenario } => cmd_verify(&load_scenario(scenario)?, &cli.common),
        Command::Run { scenario, seed } => cmd_run(&load_scenario(scenario)?, *seed, &cli.common),
        Command::Ensemble { scenario, runs, uncontrolled } => {
            cmd_ensemble(&load_scenario(scenario)?, *runs, *uncontrolled, &cli.common)
        }
        Command::Baseline { scenario, runs } => cmd_baseline(&load_scenario(scenario)?, *runs, &cli.common),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
