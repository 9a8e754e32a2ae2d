//! Consumer best response to a call.
//!
//! The consumer minimizes `a·s² − ((1+ρ)·B·Δp + b)·s` over
//! `0 ≤ s ≤ 1, s·B ≤ c`. With `a > 0` the problem is strictly convex, so the
//! minimizer is the vertex `θ = ((1+ρ)·B·Δp + b) / (2a)` clamped into
//! `[0, min(1, c/B)]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Consumer, Scenario};

/// Upper bound on the KKT residual of an exact best response.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActiveConstraint {
    Interior,
    CallCap,
    UnitCap,
    ZeroFloor,
}

impl ActiveConstraint {
    pub const ALL: [ActiveConstraint; 4] = [
        ActiveConstraint::Interior,
        ActiveConstraint::CallCap,
        ActiveConstraint::UnitCap,
        ActiveConstraint::ZeroFloor,
    ];
}

/// Multipliers of `s·B ≤ c`, `s ≤ 1` and `−s ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub call: f64,
    pub unit: f64,
    pub zero: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub shift: f64,
    pub shifted_kwh: f64,
    /// Vertex `θ` of the unconstrained objective.
    pub unconstrained_vertex: f64,
    pub active_constraint: ActiveConstraint,
    pub multipliers: Multipliers,
    pub kkt_residual: f64,
}

/// Linear coefficient `(1+ρ)·B·Δp + b` of the consumer's gain from shifting.
#[inline]
pub(crate) fn marginal_gain(scenario: &Scenario, c: &Consumer) -> f64 {
    (1.0 + scenario.reward_factor) * c.baseline * scenario.tariff.premium() + c.dissat_b
}

/// `θ_i`, the unconstrained minimizer.
#[inline]
pub fn vertex(scenario: &Scenario, c: &Consumer) -> f64 {
    marginal_gain(scenario, c) / (2.0 * c.dissat_a)
}

/// `θ̂_i·B_i` with `θ̂_i = clamp(θ_i, 0, 1)`: the most energy consumer `i`
/// will ever shift.
#[inline]
pub fn capacity(scenario: &Scenario, c: &Consumer) -> f64 {
    vertex(scenario, c).clamp(0.0, 1.0) * c.baseline
}

fn consumer_checked(scenario: &Scenario, i: usize) -> Result<&Consumer> {
    let c = scenario.consumers.get(i).ok_or(Error::Index(i))?;
    let ok = c.baseline > 0.0
        && c.dissat_a > 0.0
        && c.dissat_b > 0.0
        && c.baseline.is_finite()
        && c.dissat_a.is_finite()
        && c.dissat_b.is_finite()
        && scenario.reward_factor >= 0.0
        && scenario.tariff.off_peak >= 0.0
        && scenario.tariff.premium() >= 0.0;
    if ok {
        Ok(c)
    } else {
        // Reuse the full validation for the message.
        Err(Error::Invalid(model::validate(scenario)))
    }
}

fn call_checked(c: &Consumer, call: f64) -> Result<f64> {
    let tol = 1e-9 * c.baseline.max(1.0);
    if call >= -tol && call <= c.baseline + tol {
        Ok(call.clamp(0.0, c.baseline))
    } else {
        Err(Error::Domain {
            what: "call",
            value: call,
            expected: format!("[0, {}]", c.baseline),
        })
    }
}

/// Exact minimizer of the consumer problem for the given call, together
/// with KKT multipliers certifying it.
pub fn best_response(scenario: &Scenario, i: usize, call: f64) -> Result<BestResponse> {
    let c = consumer_checked(scenario, i)?;
    let call = call_checked(c, call)?;
    Ok(respond(scenario, c, call))
}

/// Unchecked core of [`best_response`]; `call` must already lie in `[0, B]`.
pub(crate) fn respond(scenario: &Scenario, c: &Consumer, call: f64) -> BestResponse {
    let g = marginal_gain(scenario, c);
    let a2 = 2.0 * c.dissat_a;
    let theta = g / a2;
    let cap = (call / c.baseline).min(1.0);

    let (shift, active, mult) = if theta >= cap {
        if call < c.baseline {
            let s = cap;
            (
                s,
                ActiveConstraint::CallCap,
                Multipliers {
                    call: ((g - a2 * s) / c.baseline).max(0.0),
                    ..Default::default()
                },
            )
        } else {
            (
                1.0,
                ActiveConstraint::UnitCap,
                Multipliers {
                    unit: (g - a2).max(0.0),
                    ..Default::default()
                },
            )
        }
    } else if theta <= 0.0 {
        (
            0.0,
            ActiveConstraint::ZeroFloor,
            Multipliers {
                zero: (-g).max(0.0),
                ..Default::default()
            },
        )
    } else {
        (theta, ActiveConstraint::Interior, Multipliers::default())
    };

    let shifted_kwh = match active {
        ActiveConstraint::CallCap => call,
        _ => shift * c.baseline,
    };
    let kkt_residual = residual(scenario, c, call, shift, mult);
    BestResponse {
        shift,
        shifted_kwh,
        unconstrained_vertex: theta,
        active_constraint: active,
        multipliers: mult,
        kkt_residual,
    }
}

fn residual(scenario: &Scenario, c: &Consumer, call: f64, s: f64, m: Multipliers) -> f64 {
    let g = marginal_gain(scenario, c);
    let b = c.baseline;
    let stationarity = 2.0 * c.dissat_a * s - g + m.call * b + m.unit - m.zero;
    [
        stationarity.abs(),
        (m.call * (s * b - call)).abs(),
        (m.unit * (s - 1.0)).abs(),
        (m.zero * s).abs(),
        (s * b - call).max(0.0),
        (s - 1.0).max(0.0),
        (-s).max(0.0),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Largest violation among stationarity, complementarity and primal
/// feasibility of the consumer's KKT system at `(s, multipliers)`.
pub fn kkt_residual(
    scenario: &Scenario,
    i: usize,
    call: f64,
    s: f64,
    multipliers: Multipliers,
) -> Result<f64> {
    let c = consumer_checked(scenario, i)?;
    for (what, v) in [
        ("call multiplier", multipliers.call),
        ("unit multiplier", multipliers.unit),
        ("zero multiplier", multipliers.zero),
    ] {
        if !(v >= 0.0) {
            return Err(Error::Domain {
                what,
                value: v,
                expected: "non-negative".into(),
            });
        }
    }
    Ok(residual(scenario, c, call, s, multipliers))
}

/// Exhaustive grid scan of the consumer objective. Used as an independent
/// check on [`best_response`].
pub fn oracle_best_response(
    scenario: &Scenario,
    i: usize,
    call: f64,
    step: f64,
) -> Result<BestResponse> {
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Domain {
            what: "oracle step",
            value: step,
            expected: "(0, 0.01]".into(),
        });
    }
    let c = consumer_checked(scenario, i)?;
    let call = call_checked(c, call)?;
    let cap = (call / c.baseline).min(1.0);
    let g = marginal_gain(scenario, c);
    let cost = |s: f64| c.dissat_a * s * s - g * s;

    let mut best_s = 0.0;
    let mut best_v = cost(0.0);
    let mut k = 1u64;
    loop {
        let s = k as f64 * step;
        if s > cap {
            break;
        }
        let v = cost(s);
        if v < best_v {
            best_v = v;
            best_s = s;
        }
        k += 1;
    }
    let theta = g / (2.0 * c.dissat_a);
    if theta > 0.0 && theta <= cap && cost(theta) < best_v {
        best_s = theta;
    }

    let active = if best_s <= 0.0 && cap > 0.0 {
        ActiveConstraint::ZeroFloor
    } else if cap - best_s <= step && theta >= cap {
        if call < c.baseline {
            ActiveConstraint::CallCap
        } else {
            ActiveConstraint::UnitCap
        }
    } else {
        ActiveConstraint::Interior
    };
    let mult = match active {
        ActiveConstraint::CallCap => Multipliers {
            call: ((g - 2.0 * c.dissat_a * best_s) / c.baseline).max(0.0),
            ..Default::default()
        },
        ActiveConstraint::UnitCap => Multipliers {
            unit: (g - 2.0 * c.dissat_a).max(0.0),
            ..Default::default()
        },
        ActiveConstraint::ZeroFloor => Multipliers {
            zero: (-g).max(0.0),
            ..Default::default()
        },
        ActiveConstraint::Interior => Multipliers::default(),
    };
    Ok(BestResponse {
        shift: best_s,
        shifted_kwh: best_s * c.baseline,
        unconstrained_vertex: theta,
        active_constraint: active,
        multipliers: mult,
        kkt_residual: residual(scenario, c, call, best_s, mult),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tariff;

    fn scenario(b: f64, a: f64, bb: f64) -> Scenario {
        Scenario::new(
            Tariff {
                on_peak: 5.0,
                off_peak: 3.0,
            },
            0.5,
            0.1,
            1.0,
            b / 2.0,
            vec![Consumer {
                baseline: b,
                dissat_a: a,
                dissat_b: bb,
            }],
        )
        .unwrap()
    }

    #[test]
    fn zero_call_binds_call_cap() {
        let s = scenario(100.0, 400.0, 20.0);
        let r = best_response(&s, 0, 0.0).unwrap();
        assert_eq!(r.shift, 0.0);
        assert_eq!(r.active_constraint, ActiveConstraint::CallCap);
        assert!(r.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn partial_and_capped_responses() {
        // θ = (1.5·100·2 + 20) / 800 = 0.4
        let s = scenario(100.0, 400.0, 20.0);
        let r = best_response(&s, 0, 30.0).unwrap();
        assert!((r.unconstrained_vertex - 0.4).abs() < 1e-15);
        assert!((r.shift - 0.3).abs() < 1e-15);
        assert_eq!(r.shifted_kwh, 30.0);
        assert_eq!(r.active_constraint, ActiveConstraint::CallCap);
        // λ_call = (320 − 240) / 100
        assert!((r.multipliers.call - 0.8).abs() < 1e-12);
        assert!(r.kkt_residual <= KKT_TOL);

        let r = best_response(&s, 0, 60.0).unwrap();
        assert!((r.shift - 0.4).abs() < 1e-15);
        assert!((r.shifted_kwh - 40.0).abs() < 1e-12);
        assert_eq!(r.active_constraint, ActiveConstraint::Interior);
        assert!(r.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn vertex_beyond_one_saturates() {
        let s = scenario(100.0, 50.0, 20.0);
        let r = best_response(&s, 0, 100.0).unwrap();
        assert_eq!(r.shift, 1.0);
        assert_eq!(r.active_constraint, ActiveConstraint::UnitCap);
        assert!(r.kkt_residual <= KKT_TOL);
        let o = oracle_best_response(&s, 0, 100.0, 1e-3).unwrap();
        assert!((o.shift - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kkt_residual_examples() {
        let s = scenario(100.0, 400.0, 20.0);
        let interior = kkt_residual(&s, 0, 60.0, 0.4, Multipliers::default()).unwrap();
        assert!(interior < 1e-12);
        let lam = (2.0 * 400.0 * 0.3 - 320.0) / -100.0;
        assert!(lam >= 0.0);
        let capped = kkt_residual(
            &s,
            0,
            30.0,
            0.3,
            Multipliers {
                call: lam,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(capped <= KKT_TOL);
        let violated = kkt_residual(
            &s,
            0,
            60.0,
            0.4,
            Multipliers {
                call: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(violated > 1.0);
        assert!(kkt_residual(
            &s,
            0,
            60.0,
            0.4,
            Multipliers {
                zero: -1.0,
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn zero_floor_with_equal_tariffs() {
        // Δp = 0 leaves θ = b/(2a) > 0; the floor is unreachable with b > 0,
        // so drive the vertex negative through the unchecked path.
        let mut s = scenario(100.0, 400.0, 20.0);
        s.tariff.on_peak = 3.0;
        s.consumers[0].dissat_b = -20.0;
        let c = s.consumers[0];
        let r = respond(&s, &c, 50.0);
        assert_eq!(r.shift, 0.0);
        assert_eq!(r.active_constraint, ActiveConstraint::ZeroFloor);
        assert!((r.multipliers.zero - 20.0).abs() < 1e-12);
        assert!(r.kkt_residual <= KKT_TOL);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = scenario(100.0, 400.0, 20.0);
        assert!(best_response(&s, 0, -1.0).is_err());
        assert!(best_response(&s, 0, 100.5).is_err());
        assert!(best_response(&s, 3, 10.0).is_err());
        assert!(oracle_best_response(&s, 0, 10.0, 0.5).is_err());
        assert!(oracle_best_response(&s, 0, 10.0, 0.0).is_err());
        let mut bad = s.clone();
        bad.consumers[0].dissat_a = 0.0;
        assert!(matches!(
            best_response(&bad, 0, 10.0),
            Err(Error::Invalid(_))
        ));
    }

    #[test]
    fn oracle_matches_examples() {
        let s = scenario(100.0, 400.0, 20.0);
        let o = oracle_best_response(&s, 0, 30.0, 1e-5).unwrap();
        assert!((o.shift - 0.3).abs() <= 1e-5);
        let o = oracle_best_response(&s, 0, 60.0, 1e-5).unwrap();
        assert!((o.shift - 0.4).abs() <= 1e-5);
        assert_eq!(oracle_best_response(&s, 0, 0.0, 1e-3).unwrap().shift, 0.0);
    }
}
