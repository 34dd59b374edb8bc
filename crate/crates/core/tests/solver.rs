mod common;

use tfc_pdg::inner::{initialize_cubic, refit_states, solve_inner, InnerSettings};
use tfc_pdg::jacobian::TrajectoryProblem;
use tfc_pdg::model::{ProfileKind, SegmentTimes};
use tfc_pdg::outer::{outer_residual, solve_switching_times, GuidanceSolution, OuterSettings, ProfileMode};
use tfc_pdg::validation::{backward_lambda_m, propagate_oracle, InitialCostate};
use tfc_pdg::GuidanceError;

fn both() -> [(&'static str, &'static GuidanceSolution); 2] {
    [("test1", common::test1()), ("test2", common::test2())]
}

#[test]
fn hamiltonian_is_flat_and_zero() {
    for (name, sol) in both() {
        let m = &sol.metrics;
        assert!(m.max_abs_hamiltonian <= 1e-6, "{name}: max|H| {:e}", m.max_abs_hamiltonian);
        assert!(m.hamiltonian_spread <= 1e-6, "{name}: spread {:e}", m.hamiltonian_spread);
    }
}

#[test]
fn switching_function_changes_sign_at_switch_times() {
    for (name, sol) in both() {
        assert!(sol.sign_pattern_consistent(), "{name}");
        for &s in &sol.metrics.switching_at_switches {
            assert!(s.abs() <= 1e-3, "{name}: sigma at switch {s:e}");
        }
        // Zero crossing located from the slope between the switch node and its neighbour.
        let h = &sol.histories;
        for &ts in &sol.times.free()[..sol.times.n_segments() - 1] {
            let k = h.t.iter().position(|&t| t == ts).expect("switch time is a node");
            let slope = (h.switching[k + 1] - h.switching[k]) / (h.t[k + 1] - h.t[k]);
            let offset = h.switching[k].abs() / slope.abs();
            assert!(offset <= 1e-3, "{name}: crossing {offset:e} s from {ts}");
        }
    }
}

#[test]
fn mass_costate_positive_before_landing() {
    for (name, sol) in both() {
        let lm = &sol.histories.lambda_m;
        assert!(lm[..lm.len() - 1].iter().all(|&v| v > 0.0), "{name}");
        assert!(sol.metrics.lambda_m_residual <= 1e-10, "{name}: {:e}", sol.metrics.lambda_m_residual);
        let chain = &sol.evaluation.lambda_m.lambda_m;
        for s in 1..chain.len() {
            assert_eq!(chain[s - 1].last(), chain[s].first(), "{name}: segment {s}");
        }
    }
}

#[test]
fn mass_used_is_thrust_times_duration() {
    for (name, sol) in both() {
        let p = &sol.evaluation.problem.profile;
        let b = p.times.boundaries();
        let direct: f64 = p.levels.iter().zip(b.windows(2)).map(|(t, w)| t * (w[1] - w[0])).sum::<f64>() * common::config().alpha;
        assert!((sol.metrics.m_used - direct).abs() <= 1e-12 * direct, "{name}");
    }
}

#[test]
fn stacked_residual_layout() {
    for (name, sol) in both() {
        let e = &sol.evaluation;
        let n = e.problem.layout.n_segments;
        let h_rows: usize = e.hamiltonian[..n - 1].iter().map(Vec::len).sum();
        assert_eq!(e.stacked.len(), h_rows + e.problem.layout.n_rows(), "{name}");
        assert_eq!(e.components().len(), n, "{name}");
        assert_eq!(sol.metrics.outer_residual.len(), n, "{name}");
    }
}

#[test]
fn final_time_perturbation_shows_in_residual() {
    let sol = common::test1();
    let settings = common::settings(ProfileKind::MinMax);
    let [t1, tf] = sol.times.free()[..] else { unreachable!() };
    let at = |tf: f64| {
        outer_residual(&SegmentTimes::min_max(t1, tf), ProfileKind::MinMax, &common::bc1(), &common::config(), &settings)
            .unwrap()
    };
    let base = at(tf);
    assert!(base.iter().all(|&c| c <= 1e-6), "{base:?}");
    let off = at(tf + 1.0);
    assert!(off[0] > 1e-4, "{off:?}");
}

#[test]
fn converged_inner_solution_is_a_fixed_point() {
    for (name, sol) in both() {
        let problem = &sol.evaluation.problem;
        let again = solve_inner(problem, &sol.xi, &InnerSettings::default()).unwrap();
        assert!(again.iterations <= 2, "{name}: {} iterations", again.iterations);
        let shift = (&again.xi.values - &sol.xi.values).amax();
        assert!(shift <= 1e-8 * sol.xi.values.amax(), "{name}: moved {shift:e}");
    }
}

#[test]
fn gauss_newton_steps_never_increase_the_residual() {
    for (name, sol) in both() {
        let kind = sol.kind;
        let bc = if kind == ProfileKind::MinMax { common::bc1() } else { common::bc2() };
        let problem = TrajectoryProblem::new(&common::config(), &bc, &sol.evaluation.problem.profile, 24, 60).unwrap();
        let init = refit_states(&problem, &initialize_cubic(&problem).unwrap()).unwrap();
        let settings = InnerSettings { damping_fallback: true, max_iterations: 200, ..InnerSettings::default() };
        let res = solve_inner(&problem, &init, &settings).unwrap();
        assert!(res.l2() <= 1e-8, "{name}: {:e}", res.l2());
        for w in res.l2_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{name}: {:?}", res.l2_history);
        }
    }
}

#[test]
fn solves_are_deterministic() {
    let again =
        solve_switching_times(&common::bc1(), &common::config(), &common::settings(ProfileKind::MinMax)).unwrap();
    let first = common::test1();
    assert_eq!(again.times, first.times);
    assert_eq!(again.xi.values, first.xi.values);
}

#[test]
fn auto_mode_classifies_both_cases() {
    let settings = OuterSettings { profile_mode: ProfileMode::Auto, ..common::settings(ProfileKind::MinMax) };
    let cfg = common::config();
    assert_eq!(solve_switching_times(&common::bc1(), &cfg, &settings).unwrap().kind, ProfileKind::MinMax);
    assert_eq!(solve_switching_times(&common::bc2(), &cfg, &settings).unwrap().kind, ProfileKind::MaxMinMax);
}

#[test]
fn forced_profile_skips_classification() {
    // Forced min-max on the case that needs an early burn returns whatever the
    // min-max solve produces instead of a classification error.
    let settings = common::settings(ProfileKind::MinMax);
    match solve_switching_times(&common::bc2(), &common::config(), &settings) {
        Ok(sol) => assert_eq!(sol.kind, ProfileKind::MinMax),
        Err(e) => assert!(!matches!(e, GuidanceError::Classification { .. }), "{e}"),
    }
}

#[test]
fn bad_initial_times_rejected() {
    let settings = OuterSettings {
        initial_times: Some(SegmentTimes::min_max(20.0, 10.0)),
        ..common::settings(ProfileKind::MinMax)
    };
    assert!(solve_switching_times(&common::bc1(), &common::config(), &settings).is_err());
}

fn oracle(sol: &GuidanceSolution, rel_tol: f64) -> tfc_pdg::validation::PropagationReport {
    let ic = InitialCostate { lambda_r: sol.lambda_r, lambda_v: sol.lambda_v0, lambda_m: sol.lambda_m0 };
    let p = &sol.evaluation.problem;
    propagate_oracle(&p.bc, &ic, &p.profile, &p.config, rel_tol).unwrap()
}

#[test]
fn oracle_agrees_with_collocation() {
    for (name, sol) in both() {
        let fine = oracle(sol, 1e-12);
        let coarse = oracle(sol, 2e-12);
        assert!(fine.mass_error <= 1e-9, "{name}: mass error {:e}", fine.mass_error);
        assert!((fine.position_error - coarse.position_error).abs() <= 1e-4, "{name}");
        assert!((fine.velocity_error - coarse.velocity_error).abs() <= 1e-5, "{name}");
        assert!((fine.lambda_m_final - coarse.lambda_m_final).abs() <= 1e-9, "{name}");
        let bound = 10.0 * sol.metrics.max_abs_hamiltonian.max(1e-12);
        assert!(fine.max_abs_hamiltonian <= bound, "{name}: {:e} vs {:e}", fine.max_abs_hamiltonian, bound);
    }
}

#[test]
fn mass_costate_matches_backward_integration() {
    for (name, sol) in both() {
        let p = &sol.evaluation.problem;
        let ce = sol.evaluation.costate();
        let oracle = backward_lambda_m(&p.profile, &p.mass, |t| ce.lambda_v(t), 1e-12).unwrap();
        assert!((oracle - sol.lambda_m0).abs() <= 1e-9, "{name}: {oracle} vs {}", sol.lambda_m0);
    }
}
