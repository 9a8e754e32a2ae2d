//! Exhaustive grid search over call vectors.
//!
//! Calls `c_1..c_{N−1}` range over `{0, h, 2h, …} ∩ [0, B_i]`; the last call
//! takes the remainder `R − Σ` and the point is kept when the remainder lies
//! in `[0, B_N]`. Followers are evaluated in closed form. The search is split
//! over the values of `c_1`; each part keeps its first best point in
//! lexicographic order and the parts are merged in order, so the result does
//! not depend on scheduling.

use crate::error::{Error, Result};
use crate::follower;
use crate::model::Scenario;
use crate::par::{self, Exec};

use super::{clip_calls, Raw};

pub const DEFAULT_ORACLE_CAP: u64 = 50_000_000;

/// Relative slack when comparing the remainder against its bounds.
const EDGE_TOL: f64 = 1e-9;

fn levels(baseline: f64, target: f64, h: f64) -> usize {
    let top = baseline.min(target);
    ((top / h) * (1.0 + 1e-12)).floor() as usize
}

/// Grid resolution `R / h` above which counting is not attempted.
const MAX_LEVELS: f64 = 1e7;

/// Number of grid points the oracle evaluates at step `h`, saturating at
/// `u64::MAX`. Counted by dynamic programming over the partial sum; grids
/// finer than `R / 10⁷` report `u64::MAX`.
pub fn grid_point_count(scenario: &Scenario, h: f64) -> u64 {
    let n = scenario.len();
    if !(h > 0.0) || n == 0 {
        return u64::MAX;
    }
    let r = scenario.target;
    let m = ((r / h) * (1.0 + 1e-12)).floor();
    if m > MAX_LEVELS {
        return u64::MAX;
    }
    let m = m as usize;
    // ways[s] = number of prefixes with Σk = s.
    let mut ways = vec![0u64; m + 1];
    ways[0] = 1;
    for c in &scenario.consumers[..n - 1] {
        let k = levels(c.baseline, r, h);
        let mut prefix = vec![0u64; m + 2];
        for s in 0..=m {
            prefix[s + 1] = match prefix[s].checked_add(ways[s]) {
                Some(v) => v,
                None => return u64::MAX,
            };
        }
        for s in 0..=m {
            let from = s.saturating_sub(k);
            ways[s] = prefix[s + 1] - prefix[from];
        }
    }
    let last = scenario.consumers[n - 1].baseline;
    let tol = EDGE_TOL * r.max(1.0);
    let mut total = 0u64;
    for (s, w) in ways.iter().enumerate() {
        let rem = r - s as f64 * h;
        if rem >= -tol && rem <= last + tol {
            total = total.saturating_add(*w);
        }
    }
    total
}

struct Ctx<'a> {
    h: f64,
    target: f64,
    k: f64,
    gamma: f64,
    caps: &'a [f64],
    levels: &'a [usize],
    last_baseline: f64,
    tol: f64,
    n: f64,
}

#[derive(Clone)]
struct Best {
    value: f64,
    ks: Vec<usize>,
}

impl Ctx<'_> {
    /// Depth-first search over coordinates `i..N−1` given the partial call
    /// sum, shifted-energy sum and sum of squares.
    fn search(
        &self,
        i: usize,
        ks: &mut Vec<usize>,
        sum: f64,
        shifted: f64,
        sq: f64,
        best: &mut Option<Best>,
        points: &mut u64,
    ) {
        if i == self.levels.len() {
            let last = self.target - sum;
            if last < -self.tol || last > self.last_baseline + self.tol {
                return;
            }
            let last = last.clamp(0.0, self.last_baseline);
            *points += 1;
            let e = shifted + last.min(self.caps[i]);
            let mean = self.target / self.n;
            let var = ((sq + last * last) / self.n - mean * mean).max(0.0);
            let value = self.k * e - self.gamma * var;
            if best.as_ref().map_or(true, |b| value > b.value) {
                *best = Some(Best {
                    value,
                    ks: ks.clone(),
                });
            }
            return;
        }
        for k in 0..=self.levels[i] {
            let c = k as f64 * self.h;
            if sum + c > self.target + self.tol {
                break;
            }
            ks.push(k);
            self.search(
                i + 1,
                ks,
                sum + c,
                shifted + c.min(self.caps[i]),
                sq + c * c,
                best,
                points,
            );
            ks.pop();
        }
    }
}

pub(super) fn solve(scenario: &Scenario, h: f64, cap: u64, exec: Exec) -> Result<Raw> {
    let count = grid_point_count(scenario, h);
    if count > cap {
        return Err(Error::OracleBudget { points: count, cap });
    }
    let n = scenario.len();
    let r = scenario.target;
    let caps: Vec<f64> = scenario
        .consumers
        .iter()
        .map(|c| follower::capacity(scenario, c))
        .collect();
    let lv: Vec<usize> = scenario.consumers[..n - 1]
        .iter()
        .map(|c| levels(c.baseline, r, h))
        .collect();
    let ctx = Ctx {
        h,
        target: r,
        k: scenario.commission_per_kwh(),
        gamma: scenario.fairness_weight,
        caps: &caps,
        levels: &lv,
        last_baseline: scenario.consumers[n - 1].baseline,
        tol: EDGE_TOL * r.max(1.0),
        n: n as f64,
    };

    let parts: Vec<(Option<Best>, u64)> = if n == 1 {
        let mut best = None;
        let mut points = 0;
        ctx.search(0, &mut Vec::new(), 0.0, 0.0, 0.0, &mut best, &mut points);
        vec![(best, points)]
    } else {
        par::map_range(exec, lv[0] + 1, |k0| {
            let c = k0 as f64 * h;
            let mut best = None;
            let mut points = 0;
            if c <= r + ctx.tol {
                ctx.search(
                    1,
                    &mut vec![k0],
                    c,
                    c.min(caps[0]),
                    c * c,
                    &mut best,
                    &mut points,
                );
            }
            (best, points)
        })
    };

    let mut best: Option<Best> = None;
    let mut points = 0u64;
    for (b, p) in parts {
        points += p;
        if let Some(b) = b {
            if best.as_ref().map_or(true, |cur| b.value > cur.value) {
                best = Some(b);
            }
        }
    }
    let best = best.ok_or(Error::Infeasible)?;
    let mut calls: Vec<f64> = best.ks.iter().map(|&k| k as f64 * h).collect();
    let sum: f64 = calls.iter().sum();
    calls.push(r - sum);
    Ok(Raw {
        calls: clip_calls(scenario, &calls),
        iterations: points as usize,
        residual: 0.0,
    })
}
