#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::{rngs::StdRng, Rng};
use tfc_pdg::inner::initialize_cubic;
use tfc_pdg::jacobian::{TrajectoryProblem, UnknownVector};
use tfc_pdg::model::{derive_params, BoundaryConditions, LanderConfig, LanderParams, ProfileKind, SegmentTimes, ThrustProfile};
use tfc_pdg::outer::{solve_switching_times, GuidanceSolution, OuterSettings, ProfileMode};

pub fn config() -> LanderConfig {
    derive_params(&LanderParams::mars_reference()).unwrap()
}

pub fn bc1() -> BoundaryConditions {
    BoundaryConditions {
        r0: Vector3::new(-900.0, 10.0, 1500.0),
        v0: Vector3::new(30.0, -10.0, -70.0),
        rf: Vector3::zeros(),
        vf: Vector3::zeros(),
        m0: 1905.0,
    }
}

pub fn bc2() -> BoundaryConditions {
    BoundaryConditions {
        r0: Vector3::new(-200.0, 100.0, 1500.0),
        v0: Vector3::new(85.0, 50.0, -65.0),
        ..bc1()
    }
}

/// Settings used by the shipped scenario configs.
pub fn settings(kind: ProfileKind) -> OuterSettings {
    let profile_mode = match kind {
        ProfileKind::MinMax => ProfileMode::ForceMinMax,
        ProfileKind::MaxMinMax => ProfileMode::ForceMaxMinMax,
    };
    OuterSettings { n_basis: 24, n_intervals: 60, profile_mode, ..OuterSettings::default() }
}

pub fn test1() -> &'static GuidanceSolution {
    static CELL: OnceLock<GuidanceSolution> = OnceLock::new();
    CELL.get_or_init(|| solve_switching_times(&bc1(), &config(), &settings(ProfileKind::MinMax)).unwrap())
}

pub fn test2() -> &'static GuidanceSolution {
    static CELL: OnceLock<GuidanceSolution> = OnceLock::new();
    CELL.get_or_init(|| solve_switching_times(&bc2(), &config(), &settings(ProfileKind::MaxMinMax)).unwrap())
}

/// Adaptive Simpson quadrature of `f` on `[a, b]`, started from 256 panels
/// so that short features cannot hide between the first samples.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 256;
    let w = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + w * i as f64;
            let hi = if i + 1 == PANELS { b } else { lo + w };
            simpson_panel(f, lo, hi, tol / PANELS as f64)
        })
        .sum()
}

fn simpson_panel(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 60)
}

pub fn profile(kind: ProfileKind, free: &[f64]) -> ThrustProfile {
    ThrustProfile::new(kind, SegmentTimes::from_free(kind, free), &config()).unwrap()
}

/// A random point near the cubic initial guess of a random-time problem.
pub fn random_iterate(rng: &mut StdRng, nb: usize, n: usize) -> (TrajectoryProblem, UnknownVector) {
    let (kind, free) = if rng.random_bool(0.5) {
        (ProfileKind::MinMax, vec![rng.random_range(5.0..10.0), rng.random_range(28.0..34.0)])
    } else {
        let t1 = rng.random_range(25.0..35.0);
        (ProfileKind::MaxMinMax, vec![t1, t1 + rng.random_range(3.0..8.0), t1 + rng.random_range(10.0..14.0)])
    };
    let bc = if kind == ProfileKind::MinMax { bc1() } else { bc2() };
    let problem = TrajectoryProblem::new(&config(), &bc, &profile(kind, &free), nb, n).unwrap();
    let mut x = initialize_cubic(&problem).unwrap();
    let costate = problem.layout.costate_offset();
    for (i, v) in x.values.iter_mut().enumerate() {
        let scale = if i >= costate { 0.05 * v.abs() } else { 0.1 };
        *v += scale * rng.random_range(-1.0..1.0);
    }
    (problem, x)
}
