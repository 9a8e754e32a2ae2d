use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::follower;
use crate::model::Scenario;
use crate::qp::{self, ConstraintId, LinearConstraint, QpProblem, QpSolution, QpStatus};

use super::{clip_calls, Raw};

/// Convex program equivalent to the leader's problem, as a minimization
/// over `x = (c_1..c_N, t_1..t_N)`:
///
/// ```text
/// minimize    γ·(1/N)·Σ (c_i − c̄)² − κ·Δp·Σ t_i
/// subject to  Σ c_i = R,  0 ≤ c_i ≤ B_i,  0 ≤ t_i ≤ θ̂_i·B_i,  t_i ≤ c_i
/// ```
///
/// The objective equals minus the leader objective whenever
/// `t_i = min(c_i, θ̂_i·B_i)`, which holds at every optimum when `κ·Δp > 0`.
pub fn reduce_to_qp(scenario: &Scenario) -> Result<QpProblem> {
    scenario.check()?;
    let n = scenario.len();
    let dim = 2 * n;
    let mut p = QpProblem::new(dim);

    // (γ/N)·cᵀ(I − J/N)c, so Q_cc = (2γ/N)(I − J/N).
    let w = 2.0 * scenario.fairness_weight / n as f64;
    if w != 0.0 {
        let off = -w / n as f64;
        let diag = w + off;
        for i in 0..n {
            let row = &mut p.hessian[i * dim..i * dim + n];
            row.fill(off);
            row[i] = diag;
        }
    }
    let k = scenario.commission_per_kwh();
    for i in 0..n {
        p.linear[n + i] = -k;
    }

    let mut sum = vec![0.0; dim];
    sum[..n].fill(1.0);
    p.equality = Some(LinearConstraint::new(sum, scenario.target));

    for (i, c) in scenario.consumers.iter().enumerate() {
        p.lower[i] = 0.0;
        p.upper[i] = c.baseline;
        p.lower[n + i] = 0.0;
        p.upper[n + i] = follower::capacity(scenario, c);
        let mut g = vec![0.0; dim];
        g[n + i] = 1.0;
        g[i] = -1.0;
        p.inequalities.push(LinearConstraint::new(g, 0.0));
    }
    Ok(p)
}

/// Tries [`solve_structured`] first and keeps its answer only if it passes
/// the KKT certificate of the reduced QP; otherwise the dense active-set
/// solver runs on the same problem.
pub(super) fn solve(scenario: &Scenario) -> Result<Raw> {
    let p = reduce_to_qp(scenario)?;
    let sol = match solve_structured(scenario) {
        Ok(s) if qp::certificate(&p, &s).holds() => s,
        _ => qp::solve_qp_default(&p)?.into_optimal()?,
    };
    let cert = qp::certificate(&p, &sol);
    Ok(Raw {
        calls: clip_calls(scenario, &sol.x[..scenario.len()]),
        iterations: sol.iterations,
        residual: cert.kkt_residual(),
    })
}

/// Solves the problem built by [`reduce_to_qp`] by exploiting its
/// structure, returning the point and multipliers in the same form as
/// [`qp::solve_qp`].
///
/// On `Σ c_i = R` the spread term equals `(γ/N)·Σ c_i²` up to a constant,
/// so with a multiplier `μ` on the sum each call maximizes
/// `κΔp·min(c, u_i) − (γ/N)·c² − μ·c` over `[0, B_i]` independently. The
/// resulting `c_i(μ)` is piecewise linear and non-increasing; `μ` is found
/// exactly by searching its breakpoints. With `γ = 0` the optimal calls are
/// not unique and the target is filled greedily in consumer order.
pub fn solve_structured(scenario: &Scenario) -> Result<QpSolution> {
    let p = reduce_to_qp(scenario)?;
    let n = scenario.len();
    let k = scenario.commission_per_kwh();
    let alpha = 2.0 * scenario.fairness_weight / n as f64;
    let r = scenario.target;
    let caps: Vec<f64> = scenario
        .consumers
        .iter()
        .map(|c| follower::capacity(scenario, c))
        .collect();
    let base: Vec<f64> = scenario.consumers.iter().map(|c| c.baseline).collect();
    if caps.contains(&0.0) {
        return Err(Error::Qp("zero shift capacity is not supported".into()));
    }

    let (calls, mu, evals) = if alpha > 0.0 {
        water_fill(k, alpha, r, &caps, &base)
    } else {
        greedy_fill(k, r, &caps, &base)
    };
    let mean = r / n as f64;
    let lam_eq = mu + alpha * mean;

    let mut m = BTreeMap::new();
    m.insert(ConstraintId::Equality, lam_eq);
    let mut x = calls.clone();
    x.extend(calls.iter().zip(&caps).map(|(c, u)| c.min(*u)));
    for i in 0..n {
        let (c, u, b) = (calls[i], caps[i], base[i]);
        let q = alpha * (c - mean) + lam_eq;
        if c < u {
            m.insert(ConstraintId::Inequality(i), k);
            if c == 0.0 {
                m.insert(ConstraintId::Lower(n + i), 0.0);
                m.insert(ConstraintId::Lower(i), q - k);
            }
        } else if c > u {
            m.insert(ConstraintId::Upper(n + i), k);
            if c == b {
                m.insert(ConstraintId::Upper(i), -q);
            }
        } else {
            let nu = q.clamp(0.0, k);
            m.insert(ConstraintId::Inequality(i), nu);
            m.insert(ConstraintId::Upper(n + i), k - nu);
            if c == b {
                m.insert(ConstraintId::Upper(i), nu - q);
            }
        }
    }
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        multipliers: m,
        iterations: evals,
        status: QpStatus::Optimal,
    })
}

#[inline]
fn call_at(mu: f64, k: f64, alpha: f64, u: f64, b: f64) -> f64 {
    let x1 = (k - mu) / alpha;
    let x2 = -mu / alpha;
    x1.clamp(0.0, u).max(x2).min(b)
}

/// Exact `μ` with `Σ c_i(μ) = R` for `γ > 0`. Returns the calls, `μ` and
/// the number of sum evaluations.
fn water_fill(k: f64, alpha: f64, r: f64, caps: &[f64], base: &[f64]) -> (Vec<f64>, f64, usize) {
    let total = |mu: f64| -> f64 {
        caps.iter()
            .zip(base)
            .map(|(&u, &b)| call_at(mu, k, alpha, u, b))
            .sum()
    };
    let mut bps: Vec<f64> = caps
        .iter()
        .zip(base)
        .flat_map(|(&u, &b)| [k, k - alpha * u, -alpha * u, -alpha * b])
        .collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    // The sum is non-increasing in μ: ΣB at the lowest breakpoint, 0 at k.
    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    let mut evals = 0;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        evals += 1;
        if total(bps[mid]) >= r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (bps[lo], bps[hi]);
    let (sa, sb) = (total(a), total(b));
    evals += 2;
    let mu = if sa <= r {
        a
    } else if sb >= r || sa == sb {
        b
    } else {
        a + (sa - r) / (sa - sb) * (b - a)
    };
    let mut calls: Vec<f64> = caps
        .iter()
        .zip(base)
        .map(|(&u, &bb)| call_at(mu, k, alpha, u, bb))
        .collect();

    // Spread the rounding residual of the sum over the calls on a sloped
    // piece.
    let sloped: Vec<usize> = (0..calls.len())
        .filter(|&i| {
            let c = calls[i];
            c > 0.0 && c < base[i] && c != caps[i]
        })
        .collect();
    if !sloped.is_empty() {
        let resid = r - calls.iter().sum::<f64>();
        let d = resid / sloped.len() as f64;
        for i in sloped {
            calls[i] = (calls[i] + d).clamp(0.0, base[i]);
        }
    }
    (calls, mu, evals)
}

/// Calls for `γ = 0`: every consumer is first called up to its capacity
/// (in order, until the target is met) and any remainder is then placed up
/// to the baselines, again in order.
fn greedy_fill(k: f64, r: f64, caps: &[f64], base: &[f64]) -> (Vec<f64>, f64, usize) {
    let cap_total: f64 = caps.iter().sum();
    let mut left = r;
    let mut calls = vec![0.0; caps.len()];
    if cap_total >= r {
        for (c, &u) in calls.iter_mut().zip(caps) {
            *c = u.min(left);
            left -= *c;
        }
        (calls, k, 0)
    } else {
        left -= cap_total;
        for ((c, &u), &b) in calls.iter_mut().zip(caps).zip(base) {
            let extra = (b - u).min(left);
            *c = u + extra;
            left -= extra;
        }
        (calls, 0.0, 0)
    }
}
