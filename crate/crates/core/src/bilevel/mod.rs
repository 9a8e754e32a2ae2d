//! The full aggregator/consumer game, solved three ways.
//!
//! * [`MethodKind::HypographQp`]: each consumer's shifted energy is
//!   `min(θ̂_i·B_i, c_i)`, a concave function of its call, so the leader's
//!   problem is a convex QP in `(c, t)` with `t_i` bounded by both pieces.
//!   This is the production path.
//! * [`MethodKind::MpccEnumeration`]: enumerates which constraint of every
//!   consumer's KKT system is active. Each joint assignment fixes the
//!   consumers' responses as affine functions of the calls, leaving a small
//!   QP in `c`. Limited to four consumers.
//! * [`MethodKind::GridOracle`]: exhaustive search over calls on a grid.
//!
//! Whatever the method, the reported shifts are recomputed from the final
//! calls with [`follower::best_response`] and the leader objective is
//! evaluated from those primal quantities.

mod hypograph;
mod mpcc;
mod oracle;

use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::follower;
use crate::model::{CallVector, Scenario, ShiftVector, SolutionReport, SolverDiagnostics};
use crate::par::{self, Exec};
use crate::report;

pub use hypograph::{reduce_to_qp, solve_structured};
pub use oracle::{grid_point_count, DEFAULT_ORACLE_CAP};

/// Largest scenario accepted by branch enumeration.
pub const MPCC_MAX_CONSUMERS: usize = 4;
pub const DEFAULT_MAX_BRANCHES: u64 = 256;
/// Default oracle grid step as a fraction of the target.
pub const DEFAULT_GRID_FRACTION: f64 = 1.0 / 200.0;
/// Objective and call agreement required for `certified`.
pub const AGREEMENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    HypographQp,
    MpccEnumeration,
    GridOracle,
}

impl MethodKind {
    pub fn name(self) -> &'static str {
        match self {
            MethodKind::HypographQp => "hypograph_qp",
            MethodKind::MpccEnumeration => "mpcc_enumeration",
            MethodKind::GridOracle => "grid_oracle",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveMethod {
    pub kind: MethodKind,
    /// Oracle grid step in kWh; `None` means `target / 200`.
    pub grid_step: Option<f64>,
    pub max_branches: u64,
    /// Largest number of grid points the oracle may evaluate.
    pub oracle_cap: u64,
    /// Cross-check against a second method when the scenario is small
    /// enough for it.
    pub certify: bool,
}

impl SolveMethod {
    pub fn new(kind: MethodKind) -> Self {
        SolveMethod {
            kind,
            grid_step: None,
            max_branches: DEFAULT_MAX_BRANCHES,
            oracle_cap: DEFAULT_ORACLE_CAP,
            certify: true,
        }
    }

    pub fn hypograph() -> Self {
        Self::new(MethodKind::HypographQp)
    }

    pub fn mpcc() -> Self {
        Self::new(MethodKind::MpccEnumeration)
    }

    pub fn oracle(grid_step: f64) -> Self {
        SolveMethod {
            grid_step: Some(grid_step),
            ..Self::new(MethodKind::GridOracle)
        }
    }

    pub fn without_certification(self) -> Self {
        SolveMethod {
            certify: false,
            ..self
        }
    }

    /// Grid step the oracle will use on `scenario`.
    pub fn effective_grid_step(&self, scenario: &Scenario) -> f64 {
        self.grid_step
            .unwrap_or(scenario.target * DEFAULT_GRID_FRACTION)
    }

    fn check(&self, scenario: &Scenario) -> Result<()> {
        match self.kind {
            MethodKind::HypographQp => Ok(()),
            MethodKind::MpccEnumeration => mpcc::check_size(scenario, self.max_branches),
            MethodKind::GridOracle => {
                let h = self.effective_grid_step(scenario);
                if h > 0.0 && h.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain {
                        what: "grid step",
                        value: h,
                        expected: "positive and finite".into(),
                    })
                }
            }
        }
    }
}

impl Default for SolveMethod {
    fn default() -> Self {
        Self::hypograph()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilevelSolution {
    pub report: SolutionReport,
    pub method: SolveMethod,
    /// A second method reached the same objective and calls.
    pub certified: bool,
}

/// Raw result of one method before the report is assembled.
pub(crate) struct Raw {
    pub calls: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Clips solver output into `[0, B_i]`.
pub(crate) fn clip_calls(scenario: &Scenario, x: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(&scenario.consumers)
        .map(|(v, c)| v.clamp(0.0, c.baseline))
        .collect()
}

pub fn solve(scenario: &Scenario, method: SolveMethod) -> Result<BilevelSolution> {
    solve_with(scenario, method, Exec::default())
}

/// [`solve`] with an explicit execution mode for the enumeration methods.
pub fn solve_with(scenario: &Scenario, method: SolveMethod, exec: Exec) -> Result<BilevelSolution> {
    scenario.check()?;
    method.check(scenario)?;
    let start = Instant::now();
    let raw = run(scenario, &method, exec)?;
    let mut solution = assemble(scenario, method, raw, start.elapsed())?;
    if method.certify {
        solution.certified = certify(scenario, &solution, exec)?;
    }
    Ok(solution)
}

fn run(scenario: &Scenario, method: &SolveMethod, exec: Exec) -> Result<Raw> {
    match method.kind {
        MethodKind::HypographQp => hypograph::solve(scenario),
        MethodKind::MpccEnumeration => mpcc::solve(scenario, method.max_branches, exec),
        MethodKind::GridOracle => oracle::solve(
            scenario,
            method.effective_grid_step(scenario),
            method.oracle_cap,
            exec,
        ),
    }
}

fn assemble(
    scenario: &Scenario,
    method: SolveMethod,
    raw: Raw,
    wall_time: Duration,
) -> Result<BilevelSolution> {
    let calls = CallVector::checked(scenario, raw.calls)?;
    let mut residual = raw.residual;
    let mut shifts = Vec::with_capacity(scenario.len());
    for (i, &c) in calls.as_slice().iter().enumerate() {
        let br = follower::best_response(scenario, i, c)?;
        residual = residual.max(br.kkt_residual);
        shifts.push(br.shift);
    }
    let diagnostics = SolverDiagnostics {
        method: method.kind.name().into(),
        iterations: raw.iterations,
        kkt_residual_max: residual,
        wall_time,
    };
    let report = report::build_report(scenario, calls, ShiftVector::new(shifts), diagnostics)?;
    Ok(BilevelSolution {
        report,
        method,
        certified: false,
    })
}

/// Re-solves with a second method and compares. Returns false when no
/// second method applies.
fn certify(scenario: &Scenario, sol: &BilevelSolution, exec: Exec) -> Result<bool> {
    let small = scenario.len() <= MPCC_MAX_CONSUMERS
        && mpcc::branch_count(scenario.len()) <= sol.method.max_branches;
    let (other, tol, call_tol) = match sol.method.kind {
        MethodKind::HypographQp if small => (
            mpcc::solve(scenario, sol.method.max_branches, exec)?,
            AGREEMENT_TOL,
            AGREEMENT_TOL,
        ),
        MethodKind::HypographQp => return Ok(false),
        MethodKind::MpccEnumeration => (hypograph::solve(scenario)?, AGREEMENT_TOL, AGREEMENT_TOL),
        MethodKind::GridOracle => {
            let h = sol.method.effective_grid_step(scenario);
            (
                hypograph::solve(scenario)?,
                oracle_tolerance(scenario, h),
                h,
            )
        }
    };
    let other = assemble(scenario, sol.method, other, Duration::ZERO)?;
    let gap = (other.report.leader_objective - sol.report.leader_objective).abs();
    let call_gap = other
        .report
        .calls
        .as_slice()
        .iter()
        .zip(sol.report.calls.as_slice())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(gap <= tol && call_gap <= call_tol)
}

/// Largest objective gap between the exact optimum and the grid optimum at
/// step `h`:
///
/// ```text
/// κ·Δp·h·N + γ·(2·B_max·h·√(N−1) + (N−1)·h²) + 1e-8
/// ```
///
/// The first term bounds the commission lost by rounding the calls to the
/// grid, the second the change in call variance.
pub fn oracle_tolerance(scenario: &Scenario, h: f64) -> f64 {
    let n = scenario.len() as f64;
    let b_max = scenario
        .consumers
        .iter()
        .fold(0.0f64, |m, c| m.max(c.baseline));
    let spread =
        scenario.fairness_weight * (2.0 * b_max * h * (n - 1.0).sqrt() + (n - 1.0) * h * h);
    scenario.commission_per_kwh() * h * n + spread + 1e-8
}

/// Solves the scenario once per fairness weight with the hypograph method.
/// Results follow the input order.
pub fn gamma_sweep(scenario: &Scenario, gammas: &[f64]) -> Result<Vec<(f64, BilevelSolution)>> {
    gamma_sweep_with(scenario, gammas, Exec::default())
}

pub fn gamma_sweep_with(
    scenario: &Scenario,
    gammas: &[f64],
    exec: Exec,
) -> Result<Vec<(f64, BilevelSolution)>> {
    check_gammas(gammas)?;
    scenario.check()?;
    let method = SolveMethod::hypograph().without_certification();
    par::map(exec, gammas, |&g| {
        solve_with(&scenario.with_fairness_weight(g), method, Exec::Sequential).map(|s| (g, s))
    })
    .into_iter()
    .collect()
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::Argument("gamma list is empty".into()));
    }
    for &g in gammas {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Error::Domain {
                what: "fairness weight",
                value: g,
                expected: "finite and non-negative".into(),
            });
        }
    }
    if gammas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument(
            "gamma list must be sorted ascending".into(),
        ));
    }
    Ok(())
}
