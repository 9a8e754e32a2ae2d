//! JSON files for scenarios and reports, and the seeded scenario generator.
//!
//! A scenario document has the shape
//!
//! ```json
//! {
//!   "tariff": { "on_peak": 5.0, "off_peak": 3.0 },
//!   "reward_factor": 0.5,
//!   "commission_rate": 0.1,
//!   "fairness_weight": 0.1,
//!   "target": 800.0,
//!   "consumers": [ { "baseline": 120.0, "dissat_a": 300.0, "dissat_b": 20.0 } ]
//! }
//! ```
//!
//! Unknown fields are rejected. Files are written as pretty-printed JSON
//! with a trailing newline; floats use the shortest decimal that reads back
//! to the same value.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Consumer, Scenario, SolutionReport, Tariff};
use crate::rng::SplitMix64;

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = parse(text)?;
    s.check()?;
    Ok(s)
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_scenario(&read(path.as_ref())?)
}

pub fn scenario_to_json(scenario: &Scenario) -> Result<String> {
    to_json(scenario)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &to_json(scenario)?)
}

pub fn load_report(text: &str) -> Result<SolutionReport> {
    parse(text)
}

pub fn report_to_json(report: &SolutionReport) -> Result<String> {
    to_json(report)
}

pub fn save_report(report: &SolutionReport, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &to_json(report)?)
}

fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })
}

/// serde_json appends " at line L column C"; the position is reported
/// separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Population drawn by [`generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub n_consumers: usize,
    /// Baselines are uniform on this interval, in kWh.
    pub baseline_range: [f64; 2],
    /// Replaces the last consumer's baseline when set.
    pub outlier_baseline: Option<f64>,
    pub a_range: [f64; 2],
    pub b_range: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorSpec {
    /// Ten consumers with baselines in `[80, 150]` kWh and one outlier of
    /// 800 kWh. With the default game, `a` in `[50, 600]` makes the
    /// consumers' unconstrained shift `θ` range from well below one to well
    /// above, so both full and partial compliance occur.
    fn default() -> Self {
        GeneratorSpec {
            n_consumers: 10,
            baseline_range: [80.0, 150.0],
            outlier_baseline: Some(800.0),
            a_range: [50.0, 600.0],
            b_range: [5.0, 50.0],
            seed: 42,
        }
    }
}

/// Game parameters attached to a generated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameParams {
    pub tariff: Tariff,
    pub reward_factor: f64,
    pub commission_rate: f64,
    pub fairness_weight: f64,
    pub target: f64,
}

impl Default for GameParams {
    fn default() -> Self {
        GameParams {
            tariff: Tariff {
                on_peak: 5.0,
                off_peak: 3.0,
            },
            reward_factor: 0.5,
            commission_rate: 0.1,
            fairness_weight: 0.1,
            target: 800.0,
        }
    }
}

/// A generator spec file: both parts are optional and default as above.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecFile {
    pub generator: GeneratorSpec,
    pub game: GameParams,
}

impl SpecFile {
    pub fn load(text: &str) -> Result<Self> {
        parse(text)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(&read(path.as_ref())?)
    }

    pub fn generate(&self) -> Result<Scenario> {
        generate(&self.generator, &self.game)
    }
}

impl GeneratorSpec {
    pub fn check(&self) -> Result<()> {
        if self.n_consumers == 0 {
            return Err(Error::Argument("n_consumers must be at least 1".into()));
        }
        for (name, r) in [
            ("baseline_range", self.baseline_range),
            ("a_range", self.a_range),
            ("b_range", self.b_range),
        ] {
            if !(r[0] > 0.0 && r[1].is_finite()) {
                return Err(Error::Argument(format!(
                    "{name} must be positive and finite, got [{}, {}]",
                    r[0], r[1]
                )));
            }
            if r[0] > r[1] {
                return Err(Error::Argument(format!(
                    "{name} is inverted: [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        if let Some(o) = self.outlier_baseline {
            if !(o > 0.0 && o.is_finite()) {
                return Err(Error::Argument(format!(
                    "outlier_baseline must be positive and finite, got {o}"
                )));
            }
        }
        Ok(())
    }
}

/// Draws a scenario from `spec` with a [`SplitMix64`] stream seeded by
/// `spec.seed`: all baselines first, then all `a`, then all `b`, each
/// `uniform(lo, hi)`. The outlier, if any, then replaces the last baseline.
pub fn generate(spec: &GeneratorSpec, game: &GameParams) -> Result<Scenario> {
    spec.check()?;
    let n = spec.n_consumers;
    let mut rng = SplitMix64::new(spec.seed);
    let mut draw = |r: [f64; 2]| -> Vec<f64> { (0..n).map(|_| rng.uniform(r[0], r[1])).collect() };
    let mut baselines = draw(spec.baseline_range);
    let a = draw(spec.a_range);
    let b = draw(spec.b_range);
    if let Some(o) = spec.outlier_baseline {
        baselines[n - 1] = o;
    }
    let consumers = (0..n)
        .map(|i| Consumer {
            baseline: baselines[i],
            dissat_a: a[i],
            dissat_b: b[i],
        })
        .collect();
    Scenario::new(
        game.tariff,
        game.reward_factor,
        game.commission_rate,
        game.fairness_weight,
        game.target,
        consumers,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower;
    use crate::model::ViolationKind;

    const MINIMAL: &str = r#"{
        "tariff": {"on_peak": 5, "off_peak": 3},
        "reward_factor": 0.5,
        "commission_rate": 0.1,
        "fairness_weight": 0.0,
        "target": 10,
        "consumers": [{"baseline": 100, "dissat_a": 300, "dissat_b": 20}]
    }"#;

    #[test]
    fn minimal_document() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.consumers[0].baseline, 100.0);
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("\"target\": 10,", "");
        match load_scenario(&text) {
            Err(Error::Parse { message, line, .. }) => {
                assert!(message.contains("`target`"), "{message}");
                assert!(line > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_position() {
        let text = "{\n  \"tariff\": ,\n}";
        match load_scenario(text) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 13)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.replace("\"target\": 10,", "\"target\": 10, \"extra\": 1,");
        assert!(matches!(load_scenario(&text), Err(Error::Parse { .. })));
    }

    #[test]
    fn target_above_baseline() {
        let text = MINIMAL.replace("\"target\": 10,", "\"target\": 101,");
        let e = load_scenario(&text).unwrap_err();
        assert!(e.is_infeasible_target());
        assert!(
            e.to_string().contains("target exceeds total baseline"),
            "{e}"
        );
        match e {
            Error::Invalid(v) => assert_eq!(v[0].kind, ViolationKind::TargetExceedsBaseline),
            _ => unreachable!(),
        }
    }

    #[test]
    fn generator_is_deterministic_and_in_range() {
        let spec = GeneratorSpec::default();
        let game = GameParams::default();
        let a = generate(&spec, &game).unwrap();
        let b = generate(&spec, &game).unwrap();
        assert_eq!(scenario_to_json(&a).unwrap(), scenario_to_json(&b).unwrap());
        let n = a.len();
        for c in &a.consumers[..n - 1] {
            assert!((80.0..=150.0).contains(&c.baseline));
        }
        assert_eq!(a.consumers[n - 1].baseline, 800.0);
        assert_eq!(
            a.consumers.iter().filter(|c| c.baseline == 800.0).count(),
            1
        );
        for c in &a.consumers {
            assert!((50.0..=600.0).contains(&c.dissat_a));
            assert!((5.0..=50.0).contains(&c.dissat_b));
        }
    }

    #[test]
    fn default_targets_are_feasible() {
        let spec = GeneratorSpec::default();
        let s = generate(&spec, &GameParams::default()).unwrap();
        assert!(s.total_baseline() >= 9.0 * 80.0 + 800.0);
        let game = GameParams {
            target: 1500.0,
            ..GameParams::default()
        };
        assert!(generate(&spec, &game).is_ok());
    }

    #[test]
    fn default_population_has_both_regimes() {
        let s = generate(&GeneratorSpec::default(), &GameParams::default()).unwrap();
        let theta: Vec<f64> = s
            .consumers
            .iter()
            .map(|c| follower::vertex(&s, c))
            .collect();
        assert!(theta.iter().any(|t| *t < 1.0), "{theta:?}");
        assert!(theta.iter().any(|t| *t >= 1.0), "{theta:?}");
    }

    #[test]
    fn spec_validation() {
        let mut spec = GeneratorSpec::default();
        spec.baseline_range = [150.0, 80.0];
        assert!(matches!(spec.check(), Err(Error::Argument(m)) if m.contains("inverted")));
        spec = GeneratorSpec {
            n_consumers: 0,
            ..GeneratorSpec::default()
        };
        assert!(spec.check().is_err());
        spec = GeneratorSpec {
            a_range: [-1.0, 5.0],
            ..GeneratorSpec::default()
        };
        assert!(spec.check().is_err());
    }

    #[test]
    fn spec_file_defaults() {
        let f = SpecFile::load("{}").unwrap();
        assert_eq!(f, SpecFile::default());
        let f = SpecFile::load(r#"{"generator": {"seed": 7}}"#).unwrap();
        assert_eq!(f.generator.seed, 7);
        assert_eq!(f.generator.n_consumers, 10);
        assert!(SpecFile::load(r#"{"generator": {"sed": 7}}"#).is_err());
    }
}
