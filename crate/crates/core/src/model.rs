//! Domain types for the aggregator/consumer game and pure evaluation of the
//! bill, reward, dissatisfaction and objective expressions.
//!
//! Units: energy in kWh, prices in currency per kWh, dissatisfaction
//! coefficients in currency.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `Σ c_i = R`, scaled by `max(1, R)`.
pub const CALL_SUM_TOL: f64 = 1e-9;
/// Absolute slack allowed in `s_i·B_i ≤ c_i`.
pub const SHIFT_CAP_TOL: f64 = 1e-9;

/// On-peak and off-peak energy prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariff {
    pub on_peak: f64,
    pub off_peak: f64,
}

impl Tariff {
    /// The on-peak premium `p_on − p_off`.
    #[inline]
    pub fn premium(&self) -> f64 {
        self.on_peak - self.off_peak
    }
}

/// One follower: baseline on-peak consumption and quadratic dissatisfaction
/// `a·s² − b·s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Consumer {
    pub baseline: f64,
    pub dissat_a: f64,
    pub dissat_b: f64,
}

/// A complete game instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub tariff: Tariff,
    /// Reward multiplier on shifted energy times the premium.
    pub reward_factor: f64,
    /// Aggregator commission multiplier on shifted energy times the premium.
    pub commission_rate: f64,
    /// Weight on the spread of the calls around their mean.
    pub fairness_weight: f64,
    /// Reduction target in kWh.
    pub target: f64,
    pub consumers: Vec<Consumer>,
}

impl Scenario {
    /// Builds a scenario and rejects it if any invariant is violated.
    pub fn new(
        tariff: Tariff,
        reward_factor: f64,
        commission_rate: f64,
        fairness_weight: f64,
        target: f64,
        consumers: Vec<Consumer>,
    ) -> Result<Self> {
        let s = Scenario {
            tariff,
            reward_factor,
            commission_rate,
            fairness_weight,
            target,
            consumers,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.consumers.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.consumers.is_empty()
    }

    pub fn total_baseline(&self) -> f64 {
        self.consumers.iter().map(|c| c.baseline).sum()
    }

    /// `κ·Δp`, the aggregator's marginal revenue per shifted kWh.
    #[inline]
    pub fn commission_per_kwh(&self) -> f64 {
        self.commission_rate * self.tariff.premium()
    }

    pub fn with_fairness_weight(&self, gamma: f64) -> Scenario {
        Scenario {
            fairness_weight: gamma,
            ..self.clone()
        }
    }

    pub fn with_target(&self, target: f64) -> Scenario {
        Scenario {
            target,
            ..self.clone()
        }
    }

    fn consumer(&self, i: usize) -> Result<&Consumer> {
        self.consumers.get(i).ok_or(Error::Index(i))
    }
}

/// The leader's decision: kWh asked of each consumer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CallVector(Vec<f64>);

impl CallVector {
    pub fn new(calls: Vec<f64>) -> Self {
        CallVector(calls)
    }

    /// Builds a call vector and checks `0 ≤ c_i ≤ B_i` and `Σ c_i = R`.
    pub fn checked(scenario: &Scenario, calls: Vec<f64>) -> Result<Self> {
        let v = CallVector(calls);
        v.check(scenario)?;
        Ok(v)
    }

    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        check_len("calls", self.0.len(), scenario.len())?;
        for (i, (&c, cons)) in self.0.iter().zip(&scenario.consumers).enumerate() {
            if !(c >= 0.0 && c <= cons.baseline) {
                return Err(Error::Domain {
                    what: "call",
                    value: c,
                    expected: format!("[0, {}] for consumer {}", cons.baseline, i + 1),
                });
            }
        }
        let sum = self.total();
        if (sum - scenario.target).abs() > CALL_SUM_TOL * scenario.target.max(1.0) {
            return Err(Error::Domain {
                what: "sum of calls",
                value: sum,
                expected: format!("{}", scenario.target),
            });
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Mean call `c̄`.
    pub fn mean(&self) -> f64 {
        self.total() / self.0.len() as f64
    }

    /// `(1/N)·Σ (c̄ − c_i)²`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.0.iter().map(|c| (m - c) * (m - c)).sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// The followers' decisions: fraction of baseline moved off-peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShiftVector(Vec<f64>);

impl ShiftVector {
    pub fn new(shifts: Vec<f64>) -> Self {
        ShiftVector(shifts)
    }

    /// Checks `s_i ∈ [0,1]` and `s_i·B_i ≤ c_i` against the paired calls.
    pub fn check(&self, scenario: &Scenario, calls: &CallVector) -> Result<()> {
        check_len("shifts", self.0.len(), scenario.len())?;
        check_len("calls", calls.len(), scenario.len())?;
        for (i, ((&s, &c), cons)) in self
            .0
            .iter()
            .zip(calls.as_slice())
            .zip(&scenario.consumers)
            .enumerate()
        {
            check_fraction(s)?;
            if s * cons.baseline > c + SHIFT_CAP_TOL {
                return Err(Error::Domain {
                    what: "shifted energy",
                    value: s * cons.baseline,
                    expected: format!("at most the call {} of consumer {}", c, i + 1),
                });
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `Σ s_i·B_i`.
    pub fn shifted_kwh(&self, scenario: &Scenario) -> f64 {
        self.0
            .iter()
            .zip(&scenario.consumers)
            .map(|(s, c)| s * c.baseline)
            .sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compliance {
    Full,
    Partial,
}

impl fmt::Display for Compliance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Compliance::Full => "full",
            Compliance::Partial => "partial",
        })
    }
}

/// Solver bookkeeping attached to every report. Wall time is informational
/// and is not serialized, so that report files are reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub method: String,
    pub iterations: usize,
    pub kkt_residual_max: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl PartialEq for SolverDiagnostics {
    fn eq(&self, other: &Self) -> bool {
        self.method == other.method
            && self.iterations == other.iterations
            && self.kkt_residual_max == other.kkt_residual_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub calls: CallVector,
    pub shifts: ShiftVector,
    pub leader_objective: f64,
    pub follower_objectives: Vec<f64>,
    pub bills: Vec<f64>,
    pub rewards: Vec<f64>,
    pub shifted_kwh: Vec<f64>,
    pub compliance: Vec<Compliance>,
    pub commission: f64,
    pub achieved_kwh: f64,
    pub achievement_rate: f64,
    pub call_variance: f64,
    pub solver: SolverDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NoConsumers,
    NonFinite,
    NonPositive,
    Negative,
    TariffOrder,
    TargetExceedsBaseline,
}

/// One violated scenario invariant. `consumer` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub consumer: Option<usize>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.consumer {
            Some(i) => write!(f, "consumer {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Lists every violated invariant of `scenario`; empty iff it is solvable.
pub fn validate(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, consumer, field, message: String| {
        out.push(Violation {
            kind,
            consumer,
            field,
            message,
        })
    };

    let scalars: [(&'static str, f64); 5] = [
        ("tariff.off_peak", scenario.tariff.off_peak),
        ("tariff.on_peak", scenario.tariff.on_peak),
        ("reward_factor", scenario.reward_factor),
        ("commission_rate", scenario.commission_rate),
        ("fairness_weight", scenario.fairness_weight),
    ];
    for (field, v) in scalars {
        if !v.is_finite() {
            push(
                ViolationKind::NonFinite,
                None,
                field,
                format!("{field} must be finite"),
            );
        } else if v < 0.0 {
            push(
                ViolationKind::Negative,
                None,
                field,
                format!("{field} must be non-negative, got {v}"),
            );
        }
    }
    if scenario.tariff.on_peak < scenario.tariff.off_peak {
        push(
            ViolationKind::TariffOrder,
            None,
            "tariff",
            format!(
                "on-peak price {} is below off-peak price {}",
                scenario.tariff.on_peak, scenario.tariff.off_peak
            ),
        );
    }
    if scenario.consumers.is_empty() {
        push(
            ViolationKind::NoConsumers,
            None,
            "consumers",
            "at least one consumer is required".into(),
        );
    }
    for (i, c) in scenario.consumers.iter().enumerate() {
        let fields: [(&'static str, f64); 3] = [
            ("baseline", c.baseline),
            ("dissat_a", c.dissat_a),
            ("dissat_b", c.dissat_b),
        ];
        for (field, v) in fields {
            if !v.is_finite() {
                push(
                    ViolationKind::NonFinite,
                    Some(i + 1),
                    field,
                    format!("{field} must be finite"),
                );
            } else if v <= 0.0 {
                push(
                    ViolationKind::NonPositive,
                    Some(i + 1),
                    field,
                    format!("{field} must be positive, got {v}"),
                );
            }
        }
    }
    let r = scenario.target;
    if !r.is_finite() {
        push(
            ViolationKind::NonFinite,
            None,
            "target",
            "target must be finite".into(),
        );
    } else if r <= 0.0 {
        push(
            ViolationKind::NonPositive,
            None,
            "target",
            format!("target must be positive, got {r}"),
        );
    } else if !scenario.consumers.is_empty() {
        let total = scenario.total_baseline();
        if r > total {
            push(
                ViolationKind::TargetExceedsBaseline,
                None,
                "target",
                format!("target exceeds total baseline ({r} > {total})"),
            );
        }
    }
    out
}

pub(crate) fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        Err(Error::LengthMismatch {
            what,
            got,
            expected,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn check_fraction(s: f64) -> Result<()> {
    if (0.0..=1.0).contains(&s) {
        Ok(())
    } else {
        Err(Error::Domain {
            what: "shift fraction",
            value: s,
            expected: "[0, 1]".into(),
        })
    }
}

/// `D(s) = a·s² − b·s`.
pub fn dissatisfaction(consumer: &Consumer, s: f64) -> Result<f64> {
    check_fraction(s)?;
    Ok(consumer.dissat_a * s * s - consumer.dissat_b * s)
}

/// Consumer cost in simplified form:
/// `p_on·B − (1+ρ)·B·s·Δp + a·s² − b·s`.
pub fn follower_objective(scenario: &Scenario, i: usize, s: f64) -> Result<f64> {
    let c = scenario.consumer(i)?;
    check_fraction(s)?;
    let t = &scenario.tariff;
    Ok(
        t.on_peak * c.baseline - (1.0 + scenario.reward_factor) * c.baseline * s * t.premium()
            + c.dissat_a * s * s
            - c.dissat_b * s,
    )
}

/// Consumer cost written term by term: on-peak bill, off-peak bill,
/// dissatisfaction, minus reward.
pub fn follower_objective_expanded(scenario: &Scenario, i: usize, s: f64) -> Result<f64> {
    let c = scenario.consumer(i)?;
    let (bill, reward) = bill_and_reward(scenario, i, s)?;
    Ok(bill + dissatisfaction(c, s)? - reward)
}

/// Electricity bill after shifting and the reward earned for the shift.
pub fn bill_and_reward(scenario: &Scenario, i: usize, s: f64) -> Result<(f64, f64)> {
    let c = scenario.consumer(i)?;
    check_fraction(s)?;
    let t = &scenario.tariff;
    let bill = t.on_peak * c.baseline * (1.0 - s) + t.off_peak * c.baseline * s;
    let reward = scenario.reward_factor * s * c.baseline * t.premium();
    Ok((bill, reward))
}

/// Aggregator payoff: `κ·Δp·Σ s_i·B_i − (γ/N)·Σ (c̄ − c_i)²`.
pub fn leader_objective(
    scenario: &Scenario,
    calls: &CallVector,
    shifts: &ShiftVector,
) -> Result<f64> {
    let n = scenario.len();
    check_len("calls", calls.len(), n)?;
    check_len("shifts", shifts.len(), n)?;
    let commission = scenario.commission_per_kwh() * shifts.shifted_kwh(scenario);
    Ok(commission - scenario.fairness_weight * calls.variance())
}
