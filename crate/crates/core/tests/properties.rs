use proptest::prelude::*;

use dr_stackelberg::bilevel::{self, reduce_to_qp, solve_structured, SolveMethod};
use dr_stackelberg::follower;
use dr_stackelberg::model::{self, CallVector, Consumer, Scenario, ShiftVector, Tariff};
use dr_stackelberg::par::Exec;
use dr_stackelberg::qp;
use dr_stackelberg::scenario_io;

fn consumer() -> impl Strategy<Value = Consumer> {
    (50.0..200.0f64, 50.0..600.0f64, 5.0..50.0f64).prop_map(|(baseline, dissat_a, dissat_b)| {
        Consumer {
            baseline,
            dissat_a,
            dissat_b,
        }
    })
}

fn scenario(max_n: usize) -> impl Strategy<Value = Scenario> {
    (
        prop::collection::vec(consumer(), 1..=max_n),
        0.05..0.95f64,
        prop_oneof![Just(0.0), 1e-3..1.0f64],
        3.5..8.0f64,
    )
        .prop_map(|(consumers, share, gamma, on_peak)| {
            let total: f64 = consumers.iter().map(|c| c.baseline).sum();
            Scenario::new(
                Tariff {
                    on_peak,
                    off_peak: 3.0,
                },
                0.5,
                0.1,
                gamma,
                share * total,
                consumers,
            )
            .unwrap()
        })
}

/// Leader objective reached by `calls` once every consumer best-responds.
fn leader_value(s: &Scenario, calls: Vec<f64>) -> f64 {
    let shifts = calls
        .iter()
        .enumerate()
        .map(|(i, &c)| follower::best_response(s, i, c).unwrap().shift)
        .collect();
    model::leader_objective(s, &CallVector::new(calls), &ShiftVector::new(shifts)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn best_response_is_feasible_and_optimal(c in consumer(), frac in 0.0..1.0f64) {
        let s = Scenario::new(Tariff { on_peak: 5.0, off_peak: 3.0 }, 0.5, 0.1, 0.0, 1.0, vec![c]).unwrap();
        let call = frac * c.baseline;
        let br = follower::best_response(&s, 0, call).unwrap();
        prop_assert!(br.shift >= 0.0 && br.shift <= (call / c.baseline).min(1.0) + 1e-12);
        prop_assert!(br.kkt_residual <= 1e-8);
        let grid = follower::oracle_best_response(&s, 0, call, 1e-4).unwrap();
        let f = |x| model::follower_objective(&s, 0, x).unwrap();
        prop_assert!(f(br.shift) <= f(grid.shift) + 1e-9);
    }

    #[test]
    fn solved_calls_are_feasible(s in scenario(12)) {
        let sol = bilevel::solve(&s, SolveMethod::hypograph()).unwrap();
        let calls = sol.report.calls.as_slice();
        let sum: f64 = calls.iter().sum();
        prop_assert!((sum - s.target).abs() <= 1e-9 * s.target.max(1.0) * 10.0);
        for (c, con) in calls.iter().zip(&s.consumers) {
            prop_assert!(*c >= 0.0 && *c <= con.baseline);
        }
        prop_assert!(sol.report.achieved_kwh <= s.target + 1e-9);
        prop_assert!(sol.report.solver.kkt_residual_max <= 1e-8);
    }

    #[test]
    fn optimum_beats_random_splits(s in scenario(6), seeds in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 6), 20)) {
        let best = bilevel::solve(&s, SolveMethod::hypograph()).unwrap().report.leader_objective;
        for w in seeds {
            // Scale a random direction onto the feasible set by filling in
            // order of the weights until the target is met.
            let mut left = s.target;
            let mut calls = vec![0.0; s.len()];
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
            for &i in &order {
                let take = (w[i] * s.consumers[i].baseline).min(left);
                calls[i] = take;
                left -= take;
            }
            for &i in &order {
                let take = (s.consumers[i].baseline - calls[i]).min(left);
                calls[i] += take;
                left -= take;
            }
            prop_assert!(leader_value(&s, calls) <= best + 1e-7);
        }
    }

    #[test]
    fn structured_solution_is_certified(s in scenario(40)) {
        let p = reduce_to_qp(&s).unwrap();
        let fast = solve_structured(&s).unwrap();
        prop_assert!(qp::certificate(&p, &fast).holds());
    }

    #[test]
    fn scenario_json_round_trip(s in scenario(8)) {
        let text = scenario_io::scenario_to_json(&s).unwrap();
        let back = scenario_io::load_scenario(&text).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn sweep_is_independent_of_execution_mode() {
    let spec = scenario_io::GeneratorSpec::default();
    let game = scenario_io::GameParams {
        target: 1500.0,
        ..Default::default()
    };
    let s = scenario_io::generate(&spec, &game).unwrap();
    let gammas = [0.0, 0.01, 0.1, 1.0, 10.0];
    let a = bilevel::gamma_sweep_with(&s, &gammas, Exec::Sequential).unwrap();
    let b = bilevel::gamma_sweep_with(&s, &gammas, Exec::Parallel).unwrap();
    for ((ga, sa), (gb, sb)) in a.iter().zip(&b) {
        assert_eq!(ga, gb);
        assert_eq!(sa.report, sb.report);
    }
    let variances: Vec<f64> = a.iter().map(|(_, s)| s.report.call_variance).collect();
    assert!(
        variances.windows(2).all(|w| w[1] <= w[0] + 1e-6),
        "{variances:?}"
    );
}

#[test]
fn oracle_and_mpcc_agree_in_parallel_and_sequentially() {
    let consumers = vec![
        Consumer {
            baseline: 100.0,
            dissat_a: 400.0,
            dissat_b: 20.0,
        },
        Consumer {
            baseline: 150.0,
            dissat_a: 100.0,
            dissat_b: 10.0,
        },
        Consumer {
            baseline: 80.0,
            dissat_a: 250.0,
            dissat_b: 30.0,
        },
    ];
    let s = Scenario::new(
        Tariff {
            on_peak: 5.0,
            off_peak: 3.0,
        },
        0.5,
        0.1,
        0.05,
        160.0,
        consumers,
    )
    .unwrap();
    for method in [SolveMethod::mpcc(), SolveMethod::oracle(2.0)] {
        let a = bilevel::solve_with(&s, method, Exec::Sequential).unwrap();
        let b = bilevel::solve_with(&s, method, Exec::Parallel).unwrap();
        assert_eq!(a.report, b.report);
        assert!(a.certified, "{}", method.kind);
    }
}
