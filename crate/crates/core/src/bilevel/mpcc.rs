//! KKT branch enumeration.
//!
//! For consumer `i` with vertex `θ` the four branches of its KKT system
//! reduce, after eliminating `s_i` and the multipliers, to
//!
//! | branch     | sign conditions | call range           | shifted energy |
//! |------------|-----------------|----------------------|----------------|
//! | interior   | 0 ≤ θ ≤ 1       | [θ·B, B]             | θ·B            |
//! | call_cap   | θ ≥ 0           | [0, min(1, θ)·B]     | c_i            |
//! | unit_cap   | θ ≥ 1           | {B}                  | B              |
//! | zero_floor | θ ≤ 0           | [0, B]               | 0              |
//!
//! Branches whose sign conditions fail are skipped. Every surviving joint
//! assignment is a QP in `c` alone.

use crate::error::{Error, Result};
use crate::follower::{self, ActiveConstraint};
use crate::model::Scenario;
use crate::par::{self, Exec};
use crate::qp::{self, LinearConstraint, QpProblem};

use super::{clip_calls, Raw, MPCC_MAX_CONSUMERS};

pub(super) fn branch_count(n: usize) -> u64 {
    4u64.saturating_pow(n as u32)
}

pub(super) fn check_size(scenario: &Scenario, max_branches: u64) -> Result<()> {
    let n = scenario.len();
    if n > MPCC_MAX_CONSUMERS {
        return Err(Error::TooManyConsumers {
            method: "mpcc_enumeration",
            max: MPCC_MAX_CONSUMERS,
            got: n,
        });
    }
    let branches = branch_count(n);
    if branches > max_branches {
        return Err(Error::BranchLimit {
            branches,
            limit: max_branches,
        });
    }
    Ok(())
}

/// A consumer's response under one branch: `c ∈ [lo, hi]`, shifted energy
/// `fixed + (slope ? c : 0)`.
#[derive(Clone, Copy)]
struct Piece {
    lo: f64,
    hi: f64,
    linear: bool,
    fixed: f64,
}

fn piece(theta: f64, baseline: f64, branch: ActiveConstraint) -> Option<Piece> {
    let p = match branch {
        ActiveConstraint::Interior if (0.0..=1.0).contains(&theta) => Piece {
            lo: theta * baseline,
            hi: baseline,
            linear: false,
            fixed: theta * baseline,
        },
        ActiveConstraint::CallCap if theta >= 0.0 => Piece {
            lo: 0.0,
            hi: theta.min(1.0) * baseline,
            linear: true,
            fixed: 0.0,
        },
        ActiveConstraint::UnitCap if theta >= 1.0 => Piece {
            lo: baseline,
            hi: baseline,
            linear: false,
            fixed: baseline,
        },
        ActiveConstraint::ZeroFloor if theta <= 0.0 => Piece {
            lo: 0.0,
            hi: baseline,
            linear: false,
            fixed: 0.0,
        },
        _ => return None,
    };
    Some(p)
}

struct Outcome {
    value: f64,
    x: Vec<f64>,
    iterations: usize,
    residual: f64,
}

pub(super) fn solve(scenario: &Scenario, max_branches: u64, exec: Exec) -> Result<Raw> {
    check_size(scenario, max_branches)?;
    let n = scenario.len();
    let thetas: Vec<f64> = scenario
        .consumers
        .iter()
        .map(|c| follower::vertex(scenario, c))
        .collect();
    let total = branch_count(n) as usize;
    let outcomes = par::map_range(exec, total, |code| {
        let mut pieces = Vec::with_capacity(n);
        let mut rest = code;
        for i in 0..n {
            let b = ActiveConstraint::ALL[rest % 4];
            rest /= 4;
            pieces.push(piece(thetas[i], scenario.consumers[i].baseline, b)?);
        }
        solve_branch(scenario, &pieces).transpose()
    });

    let mut best: Option<Outcome> = None;
    let mut iterations = 0;
    for o in outcomes.into_iter().flatten() {
        let o = o?;
        iterations += o.iterations;
        if best.as_ref().map_or(true, |b| o.value > b.value) {
            best = Some(o);
        }
    }
    let best = best.ok_or(Error::Infeasible)?;
    Ok(Raw {
        calls: clip_calls(scenario, &best.x),
        iterations,
        residual: best.residual,
    })
}

/// Solves one joint branch. `Ok(None)` when its call ranges cannot meet
/// the target.
fn solve_branch(scenario: &Scenario, pieces: &[Piece]) -> Result<Option<Outcome>> {
    let n = pieces.len();
    let r = scenario.target;
    let lo: f64 = pieces.iter().map(|p| p.lo).sum();
    let hi: f64 = pieces.iter().map(|p| p.hi).sum();
    let tol = 1e-9 * r.max(1.0);
    if lo > r + tol || hi < r - tol {
        return Ok(None);
    }

    let mut p = QpProblem::new(n);
    let w = 2.0 * scenario.fairness_weight / n as f64;
    if w != 0.0 {
        for i in 0..n {
            for j in 0..n {
                p.hessian[i * n + j] = if i == j {
                    w - w / n as f64
                } else {
                    -w / n as f64
                };
            }
        }
    }
    let k = scenario.commission_per_kwh();
    let mut constant = 0.0;
    for (i, pc) in pieces.iter().enumerate() {
        p.lower[i] = pc.lo;
        p.upper[i] = pc.hi;
        if pc.linear {
            p.linear[i] = -k;
        }
        constant += k * pc.fixed;
    }
    p.equality = Some(LinearConstraint::new(vec![1.0; n], r));
    let sol = qp::solve_qp_default(&p)?;
    match sol.status {
        qp::QpStatus::Infeasible => Ok(None),
        _ => {
            let sol = sol.into_optimal()?;
            let residual = qp::certificate(&p, &sol).kkt_residual();
            Ok(Some(Outcome {
                value: constant - sol.objective,
                x: sol.x,
                iterations: sol.iterations,
                residual,
            }))
        }
    }
}
