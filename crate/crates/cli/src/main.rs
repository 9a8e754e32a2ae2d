//! `dr-stackelberg`: generate scenarios, solve them, cross-check the solution
//! methods and sweep the fairness weight.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 infeasible model,
//! 3 verification budget exceeded.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dr_stackelberg::bilevel::{self, BilevelSolution, MethodKind, SolveMethod, AGREEMENT_TOL};
use dr_stackelberg::model::Scenario;
use dr_stackelberg::report::{self, Series};
use dr_stackelberg::{par, scenario_io, Error};

const THREADS_ENV: &str = "DR_STACKELBERG_THREADS";

#[derive(Parser)]
#[command(
    name = "dr-stackelberg",
    version,
    about = "Aggregator/consumer demand-response game solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write report.json, report.csv, figure.csv and figure.svg.
    Solve(SolveArgs),
    /// Solve with every applicable method and compare the objectives.
    Verify(VerifyArgs),
    /// Solve once per fairness weight and write sweep.csv and sweep.svg.
    Sweep(SweepArgs),
    /// Write a synthetic scenario drawn from a seeded generator.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Qp,
    Mpcc,
    Oracle,
}

#[derive(Args)]
struct SolveArgs {
    scenario: PathBuf,
    #[arg(long, value_enum, default_value = "qp")]
    method: Method,
    /// Oracle grid step in kWh (default: target / 200).
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    scenario: PathBuf,
    /// Oracle grid step in kWh. Without it the step starts at target / 200
    /// and is doubled until the grid fits the budget.
    #[arg(long)]
    grid_step: Option<f64>,
    /// Largest number of oracle grid points.
    #[arg(long, default_value_t = bilevel::DEFAULT_ORACLE_CAP)]
    oracle_cap: u64,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Ascending, comma-separated fairness weights.
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    gammas: Vec<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// JSON spec file with optional `generator` and `game` sections.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    consumers: Option<usize>,
    /// Reduction target in kWh.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Baseline of the last consumer in kWh.
    #[arg(long, conflicts_with = "no_outlier")]
    outlier: Option<f64>,
    #[arg(long)]
    no_outlier: bool,
    /// Output file; the scenario goes to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_infeasible_target() {
            2
        } else if matches!(e, Error::OracleBudget { .. }) {
            3
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(f) = apply_thread_cap() {
        eprintln!("error: {f}");
        return ExitCode::from(f.code);
    }
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Verify(a) => verify(a),
        Command::Sweep(a) => sweep(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn apply_thread_cap() -> Outcome {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            par::set_thread_cap(n);
            Ok(())
        }
        _ => Err(Failure::usage(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))),
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| Error::Io { path, source })?;
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn solve(a: SolveArgs) -> Outcome {
    let s = scenario_io::read_scenario(&a.scenario)?;
    let mut method = match a.method {
        Method::Qp => SolveMethod::hypograph(),
        Method::Mpcc => SolveMethod::mpcc(),
        Method::Oracle => SolveMethod::new(MethodKind::GridOracle),
    };
    method.grid_step = a.grid_step;
    let sol = bilevel::solve(&s, method)?;
    let r = &sol.report;

    create_dir(&a.out)?;
    write_file(&a.out, "report.json", &scenario_io::report_to_json(r)?)?;
    write_file(&a.out, "report.csv", &report::to_csv(&s, r)?)?;
    let fig = report::to_figure_data(
        &s,
        &[Series {
            label: method.kind.name(),
            report: r,
        }],
    )?;
    write_file(&a.out, "figure.csv", &fig.csv)?;
    write_file(&a.out, "figure.svg", &fig.svg)?;

    println!(
        "achieved {:.2} kWh ({:.1}% of {} kWh target), commission {:.4}, call variance {:.4}",
        r.achieved_kwh,
        100.0 * r.achievement_rate,
        report::sig6(s.target),
        r.commission,
        r.call_variance
    );
    println!(
        "method {}, leader objective {:.6}, KKT residual {:.2e}{}",
        method.kind,
        r.leader_objective,
        r.solver.kkt_residual_max,
        if sol.certified { ", certified" } else { "" }
    );
    Ok(())
}

/// Oracle step for `verify`: the requested one, or `R/200` doubled until the
/// grid fits `cap`.
fn oracle_step(s: &Scenario, requested: Option<f64>, cap: u64) -> Result<f64, Failure> {
    if let Some(h) = requested {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Failure::usage(format!(
                "grid step must be positive, got {h}"
            )));
        }
        return Ok(h);
    }
    let mut h = s.target * bilevel::DEFAULT_GRID_FRACTION;
    while bilevel::grid_point_count(s, h) > cap {
        h *= 2.0;
    }
    Ok(h)
}

fn verify(a: VerifyArgs) -> Outcome {
    let s = scenario_io::read_scenario(&a.scenario)?;
    let qp = bilevel::solve(&s, SolveMethod::hypograph().without_certification())?;
    let mut results: Vec<(MethodKind, BilevelSolution)> = Vec::new();
    let mut ok = true;
    println!("{:<18} {:>16}", "method", "objective");
    println!(
        "{:<18} {:>16.9}",
        MethodKind::HypographQp.name(),
        qp.report.leader_objective
    );

    let n = s.len();
    if n <= bilevel::MPCC_MAX_CONSUMERS {
        let mp = bilevel::solve(&s, SolveMethod::mpcc().without_certification())?;
        println!(
            "{:<18} {:>16.9}",
            MethodKind::MpccEnumeration.name(),
            mp.report.leader_objective
        );
        results.push((MethodKind::MpccEnumeration, mp));
    } else {
        println!(
            "note: {} skipped ({n} consumers, limit {})",
            MethodKind::MpccEnumeration.name(),
            bilevel::MPCC_MAX_CONSUMERS
        );
    }

    let h = oracle_step(&s, a.grid_step, a.oracle_cap)?;
    if a.grid_step.is_none() && h > s.target * bilevel::DEFAULT_GRID_FRACTION {
        println!(
            "note: oracle grid coarsened to {} kWh to fit the budget",
            report::sig6(h)
        );
    }
    let m = SolveMethod {
        oracle_cap: a.oracle_cap,
        ..SolveMethod::oracle(h).without_certification()
    };
    let or = bilevel::solve(&s, m)?;
    println!(
        "{:<18} {:>16.9}",
        MethodKind::GridOracle.name(),
        or.report.leader_objective
    );
    results.push((MethodKind::GridOracle, or));

    let base = qp.report.leader_objective;
    let mut max_gap = 0.0f64;
    for (kind, sol) in &results {
        let v = sol.report.leader_objective;
        let gap = (v - base).abs();
        max_gap = max_gap.max(gap);
        let tol = match kind {
            MethodKind::GridOracle => bilevel::oracle_tolerance(&s, h),
            _ => AGREEMENT_TOL,
        };
        // The grid optimum can never beat the exact one.
        let within = gap <= tol && (*kind != MethodKind::GridOracle || v <= base + AGREEMENT_TOL);
        println!(
            "gap {} vs {}: {:.3e} (tolerance {:.3e}) {}",
            kind,
            MethodKind::HypographQp,
            gap,
            tol,
            if within { "ok" } else { "FAIL" }
        );
        ok &= within;
    }
    for (i, (ka, sa)) in results.iter().enumerate() {
        for (kb, sb) in &results[i + 1..] {
            let gap = (sa.report.leader_objective - sb.report.leader_objective).abs();
            max_gap = max_gap.max(gap);
            println!("gap {ka} vs {kb}: {gap:.3e}");
        }
    }
    println!("max pairwise gap {max_gap:.3e}");
    if ok {
        Ok(())
    } else {
        Err(Failure::usage("methods disagree beyond tolerance"))
    }
}

fn sweep(a: SweepArgs) -> Outcome {
    let s = scenario_io::read_scenario(&a.scenario)?;
    let rows = bilevel::gamma_sweep(&s, &a.gammas)?;
    let reports: Vec<(f64, &_)> = rows.iter().map(|(g, sol)| (*g, &sol.report)).collect();
    let labels: Vec<String> = rows
        .iter()
        .map(|(g, _)| format!("gamma={}", report::sig6(*g)))
        .collect();
    let series: Vec<Series<'_>> = labels
        .iter()
        .zip(&rows)
        .map(|(label, (_, sol))| Series {
            label,
            report: &sol.report,
        })
        .collect();

    create_dir(&a.out)?;
    write_file(&a.out, "sweep.csv", &report::sweep_csv(&reports)?)?;
    write_file(
        &a.out,
        "sweep.svg",
        &report::to_figure_data(&s, &series)?.svg,
    )?;

    for (g, r) in &reports {
        println!(
            "gamma {:>10}: achieved {:.2} kWh ({:.1}%), commission {:.4}, call variance {:.4}",
            report::sig6(*g),
            r.achieved_kwh,
            100.0 * r.achievement_rate,
            r.commission,
            r.call_variance
        );
    }
    let monotone = reports.windows(2).all(|w| {
        w[1].1.call_variance <= w[0].1.call_variance + 1e-9 * w[0].1.call_variance.max(1.0)
    });
    println!(
        "call variance {} in gamma",
        if monotone {
            "non-increasing"
        } else {
            "NOT non-increasing"
        }
    );
    Ok(())
}

fn generate(a: GenerateArgs) -> Outcome {
    let mut spec = match &a.spec {
        Some(p) => scenario_io::SpecFile::read(p)?,
        None => scenario_io::SpecFile::default(),
    };
    let g = &mut spec.generator;
    if let Some(seed) = a.seed {
        g.seed = seed;
    }
    if let Some(n) = a.consumers {
        g.n_consumers = n;
    }
    if let Some(o) = a.outlier {
        g.outlier_baseline = Some(o);
    }
    if a.no_outlier {
        g.outlier_baseline = None;
    }
    if let Some(t) = a.target {
        spec.game.target = t;
    }
    if let Some(gamma) = a.gamma {
        spec.game.fairness_weight = gamma;
    }
    spec.generator.check()?;
    let s = spec.generate()?;
    let json = scenario_io::scenario_to_json(&s)?;
    let summary = format!(
        "{} consumers, total baseline {} kWh, feasible targets (0, {}] kWh, target {} kWh",
        s.len(),
        report::sig6(s.total_baseline()),
        report::sig6(s.total_baseline()),
        report::sig6(s.target)
    );
    match &a.out {
        Some(path) => {
            scenario_io::save_scenario(&s, path)?;
            println!("wrote {}", path.display());
            println!("{summary}");
        }
        None => {
            print!("{json}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}
