//! Switching-time loop around the inner solver, and thrust-profile selection.
//!
//! The free times are found by a damped Gauss–Newton iteration with a
//! forward-difference Jacobian. Its residual stacks the Hamiltonian at every
//! node of the segments before the last one with the inner loss vector; the
//! norms of these two blocks are the reported outer residual components.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::basis::{chebyshev_eval, collocation_grid, BasisEval, CollocationGrid};
use crate::error::{GuidanceError, Result};
use crate::inner::{initialize_cubic, least_squares, refit_states, solve_inner, warm_start, InnerResult, InnerSettings};
use crate::jacobian::{TrajectoryProblem, UnknownVector, STATE_DEGREE_OFFSET};
use crate::mass_costate::{solve_lambda_m, MassCostateSolution};
use crate::model::{hamiltonian_at, switching_at, BoundaryConditions, LanderConfig, ProfileKind, SegmentTimes, ThrustProfile};
use crate::tfc::CostateExpression;

/// Smallest number of collocation intervals the solver accepts.
pub const MIN_SOLVER_INTERVALS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    #[serde(rename = "min-max")]
    ForceMinMax,
    #[serde(rename = "max-min-max")]
    ForceMaxMinMax,
    Auto,
}

impl std::str::FromStr for ProfileMode {
    type Err = GuidanceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" => Ok(Self::ForceMinMax),
            "max-min-max" => Ok(Self::ForceMaxMinMax),
            "auto" => Ok(Self::Auto),
            other => Err(GuidanceError::Config(format!("unknown profile mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterSettings {
    /// Stop once an accepted time step is this small, s, or the outer
    /// residual norm falls below it.
    pub time_tolerance: f64,
    /// Forward-difference step on the free times, s.
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Largest outer residual norm accepted as converged.
    pub residual_threshold: f64,
    /// Minimum gap kept between consecutive segment boundaries, s.
    pub time_margin: f64,
    pub initial_times: Option<SegmentTimes>,
    pub profile_mode: ProfileMode,
    pub n_basis: usize,
    pub n_intervals: usize,
    pub inner: InnerSettings,
}

impl Default for OuterSettings {
    fn default() -> Self {
        Self {
            time_tolerance: 1e-9,
            fd_step: 1e-6,
            max_iterations: 100,
            residual_threshold: 1e-6,
            time_margin: crate::model::TIME_MARGIN,
            initial_times: None,
            profile_mode: ProfileMode::Auto,
            n_basis: 16,
            n_intervals: 60,
            inner: InnerSettings::default(),
        }
    }
}

impl OuterSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("time_tolerance", self.time_tolerance),
            ("fd_step", self.fd_step),
            ("residual_threshold", self.residual_threshold),
            ("time_margin", self.time_margin),
            ("inner.step_tolerance", self.inner.step_tolerance),
            ("inner.residual_tolerance", self.inner.residual_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GuidanceError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 || self.inner.max_iterations == 0 {
            return Err(GuidanceError::Config("iteration limits must be positive".into()));
        }
        if self.n_intervals < MIN_SOLVER_INTERVALS {
            return Err(GuidanceError::Config(format!(
                "nodes must be at least {MIN_SOLVER_INTERVALS}, got {}",
                self.n_intervals
            )));
        }
        // Degrees up to N stay independent on N + 1 Lobatto nodes.
        if self.n_basis == 0 || self.n_basis + STATE_DEGREE_OFFSET - 1 > self.n_intervals {
            return Err(GuidanceError::Config(format!(
                "n_basis must lie in 1..={} for {} nodes",
                self.n_intervals + 1 - STATE_DEGREE_OFFSET,
                self.n_intervals
            )));
        }
        if let Some(t) = &self.initial_times {
            t.validate()?;
        }
        Ok(())
    }
}

/// Default initial guess: `tf = 1.5 |v0| / |a_g|`, switches at a quarter and
/// half of it.
pub fn default_initial_times(kind: ProfileKind, bc: &BoundaryConditions, config: &LanderConfig) -> SegmentTimes {
    let tf = 1.5 * bc.v0.norm() / config.a_g.norm();
    match kind {
        ProfileKind::MinMax => SegmentTimes::min_max(0.25 * tf, tf),
        ProfileKind::MaxMinMax => SegmentTimes::max_min_max(0.25 * tf, 0.5 * tf, tf),
    }
}

/// Inner solve plus derived histories at one set of segment times.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub problem: TrajectoryProblem,
    pub inner: InnerResult,
    pub lambda_m: MassCostateSolution,
    /// Hamiltonian per segment per node.
    pub hamiltonian: Vec<Vec<f64>>,
    pub switching: Vec<Vec<f64>>,
    /// Residual driven to zero by the outer iteration.
    pub stacked: DVector<f64>,
}

impl Evaluation {
    pub fn times(&self) -> &SegmentTimes {
        &self.problem.profile.times
    }

    /// `[L2(H on segment 1), (L2(H on segment 2),) L2(inner loss)]`.
    pub fn components(&self) -> Vec<f64> {
        let n = self.problem.layout.n_segments;
        let mut out: Vec<f64> = self.hamiltonian[..n - 1]
            .iter()
            .map(|h| h.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        out.push(self.inner.l2());
        out
    }

    pub fn costate(&self) -> CostateExpression {
        self.inner.xi.costate(self.problem.costate_map)
    }
}

/// Everything fixed across one outer solve.
struct Context<'a> {
    config: &'a LanderConfig,
    bc: &'a BoundaryConditions,
    kind: ProfileKind,
    grid: CollocationGrid,
    basis: BasisEval,
    settings: &'a OuterSettings,
}

impl<'a> Context<'a> {
    fn new(config: &'a LanderConfig, bc: &'a BoundaryConditions, kind: ProfileKind, settings: &'a OuterSettings) -> Result<Self> {
        let grid = collocation_grid(settings.n_intervals)?;
        let basis = chebyshev_eval(&grid, settings.n_basis, STATE_DEGREE_OFFSET)?;
        Ok(Self { config, bc, kind, grid, basis, settings })
    }

    fn evaluate(&self, times: &SegmentTimes, warm: Option<&Evaluation>) -> Result<Evaluation> {
        self.try_evaluate(times, warm).map_err(|e| match e {
            GuidanceError::InnerFailure { .. } => e,
            other => GuidanceError::InnerFailure { times: times.boundaries(), source: Box::new(other) },
        })
    }

    fn try_evaluate(&self, times: &SegmentTimes, warm: Option<&Evaluation>) -> Result<Evaluation> {
        let profile = ThrustProfile::new(self.kind, *times, self.config)?;
        let problem = TrajectoryProblem::with_basis(self.config, self.bc, &profile, self.grid.clone(), self.basis.clone())?;
        let init = match warm {
            Some(prev) => warm_start(&problem, &prev.inner.xi, &prev.problem.costate_map),
            None => refit_states(&problem, &initialize_cubic(&problem)?)?,
        };
        let inner = match warm {
            Some(_) => solve_inner(&problem, &init, &self.settings.inner)?,
            None => solve_inner(&problem, &init, &InnerSettings { damping_fallback: true, max_iterations: 200, ..self.settings.inner })?,
        };
        evaluation(problem, inner)
    }
}

/// Derives the mass costate, Hamiltonian and switching histories of an inner
/// solution.
pub fn evaluation(problem: TrajectoryProblem, inner: InnerResult) -> Result<Evaluation> {
    let ce = inner.xi.costate(problem.costate_map);
    let lambda_m = solve_lambda_m(&problem, &ce)?;
    let states = problem.segment_states(&inner.xi)?;
    let lr = ce.lambda_r();
    let alpha = problem.config.alpha;
    let mut hamiltonian = Vec::with_capacity(states.len());
    let mut switching = Vec::with_capacity(states.len());
    for (s, (seg, st)) in problem.segments.iter().zip(&states).enumerate() {
        let thrust = problem.mass.segments[s].2;
        let mut h = Vec::with_capacity(seg.n_nodes());
        let mut sw = Vec::with_capacity(seg.n_nodes());
        for (k, &t) in seg.grid.nodes_t.iter().enumerate() {
            let m = problem.mass.mass_in_segment(s, t);
            let lv = ce.lambda_v(t);
            let lm = lambda_m.lambda_m[s][k];
            h.push(hamiltonian_at(thrust, m, &st.v[k], &lr, &lv, lm, &problem.config));
            sw.push(switching_at(&lv, lm, m, alpha));
        }
        hamiltonian.push(h);
        switching.push(sw);
    }
    let n_h: usize = hamiltonian[..states.len() - 1].iter().map(Vec::len).sum();
    let mut stacked = DVector::zeros(n_h + inner.residual.len());
    for (i, v) in hamiltonian[..states.len() - 1].iter().flatten().enumerate() {
        stacked[i] = *v;
    }
    stacked.rows_mut(n_h, inner.residual.len()).copy_from(&inner.residual);
    Ok(Evaluation { problem, inner, lambda_m, hamiltonian, switching, stacked })
}

/// Outer residual components at `times`, from a cold inner start.
pub fn outer_residual(
    times: &SegmentTimes,
    kind: ProfileKind,
    bc: &BoundaryConditions,
    config: &LanderConfig,
    settings: &OuterSettings,
) -> Result<Vec<f64>> {
    let ctx = Context::new(config, bc, kind, settings)?;
    Ok(ctx.evaluate(times, None)?.components())
}

/// Per-node histories on one global node list; each switch time appears
/// once, carrying the values of the segment that starts there.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histories {
    pub t: Vec<f64>,
    pub r: Vec<[f64; 3]>,
    pub v: Vec<[f64; 3]>,
    pub a: Vec<[f64; 3]>,
    pub thrust: Vec<f64>,
    pub mass: Vec<f64>,
    pub lambda_v: Vec<[f64; 3]>,
    pub lambda_r: Vec<[f64; 3]>,
    pub lambda_m: Vec<f64>,
    pub hamiltonian: Vec<f64>,
    pub switching: Vec<f64>,
}

impl Histories {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetrics {
    /// L2 norm of the inner loss vector.
    pub l2_loss: f64,
    /// L2 norm of the Hamiltonian over all nodes.
    pub l2_hamiltonian: f64,
    pub max_abs_hamiltonian: f64,
    /// `max H - min H` over all nodes.
    pub hamiltonian_spread: f64,
    pub m_used: f64,
    /// Switching function at each switch time.
    pub switching_at_switches: Vec<f64>,
    pub outer_residual: Vec<f64>,
    pub outer_iterations: usize,
    /// Inner iterations of every inner solve, probes included.
    pub inner_iterations: Vec<usize>,
    pub lambda_m_residual: f64,
    pub wall_time_s: f64,
}

impl SolutionMetrics {
    pub fn max_inner_iterations(&self) -> usize {
        self.inner_iterations.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceSolution {
    pub kind: ProfileKind,
    pub times: SegmentTimes,
    pub xi: UnknownVector,
    pub lambda_r: Vector3<f64>,
    pub lambda_v0: Vector3<f64>,
    pub lambda_m0: f64,
    pub histories: Histories,
    pub metrics: SolutionMetrics,
    pub evaluation: Evaluation,
}

impl GuidanceSolution {
    /// Whether the switching function has the sign pattern of the profile on
    /// every segment interior.
    pub fn sign_pattern_consistent(&self) -> bool {
        sign_pattern_consistent(&self.evaluation)
    }
}

fn sign_pattern_consistent(eval: &Evaluation) -> bool {
    let levels = &eval.problem.profile.levels;
    let t_max = levels.iter().copied().fold(f64::MIN, f64::max);
    eval.switching.iter().zip(levels).all(|(sw, &lvl)| {
        let interior = &sw[1..sw.len() - 1];
        if lvl == t_max {
            interior.iter().all(|&s| s < 0.0)
        } else {
            interior.iter().all(|&s| s > 0.0)
        }
    })
}

fn sign_summary(eval: &Evaluation) -> String {
    let parts: Vec<String> = eval
        .switching
        .iter()
        .map(|sw| {
            let interior = &sw[1..sw.len() - 1];
            let pos = interior.iter().filter(|&&s| s > 0.0).count();
            format!("{pos}/{} interior nodes with sigma > 0", interior.len())
        })
        .collect();
    format!("{} at times {:?}: {}", eval.problem.profile.kind, eval.times().boundaries(), parts.join("; "))
}

fn build_solution(eval: Evaluation, outer_iterations: usize, inner_iterations: Vec<usize>, started: Instant) -> Result<GuidanceSolution> {
    let problem = &eval.problem;
    let states = problem.segment_states(&eval.inner.xi)?;
    let ce = eval.costate();
    let lr = ce.lambda_r();
    let n = states.len();
    let mut h = Histories::default();
    for (s, (seg, st)) in problem.segments.iter().zip(&states).enumerate() {
        let thrust = problem.mass.segments[s].2;
        let nodes = if s + 1 == n { seg.n_nodes() } else { seg.n_nodes() - 1 };
        for k in 0..nodes {
            let t = seg.grid.nodes_t[k];
            h.t.push(t);
            h.r.push(st.r[k].into());
            h.v.push(st.v[k].into());
            h.a.push(st.a[k].into());
            h.thrust.push(thrust);
            h.mass.push(problem.mass.mass_in_segment(s, t));
            h.lambda_v.push(ce.lambda_v(t).into());
            h.lambda_r.push(lr.into());
            h.lambda_m.push(eval.lambda_m.lambda_m[s][k]);
            h.hamiltonian.push(eval.hamiltonian[s][k]);
            h.switching.push(eval.switching[s][k]);
        }
    }
    let all_h = eval.hamiltonian.iter().flatten().copied();
    let (lo, hi) = all_h.clone().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let metrics = SolutionMetrics {
        l2_loss: eval.inner.l2(),
        l2_hamiltonian: all_h.clone().map(|v| v * v).sum::<f64>().sqrt(),
        max_abs_hamiltonian: all_h.map(f64::abs).fold(0.0, f64::max),
        hamiltonian_spread: hi - lo,
        m_used: problem.mass.mass_used(),
        switching_at_switches: eval.switching[..n - 1].iter().map(|sw| *sw.last().unwrap()).collect(),
        outer_residual: eval.components(),
        outer_iterations,
        inner_iterations,
        lambda_m_residual: eval.lambda_m.max_residual,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(GuidanceSolution {
        kind: problem.profile.kind,
        times: *eval.times(),
        xi: eval.inner.xi.clone(),
        lambda_r: lr,
        lambda_v0: ce.lambda_v(problem.costate_map.t_start),
        lambda_m0: eval.lambda_m.initial_value(),
        histories: h,
        metrics,
        evaluation: eval,
    })
}

/// Largest fraction of `step` that keeps every boundary gap above `margin`,
/// moving at most 90% of the way to it.
fn ordering_limit(boundaries: &[f64], d_boundaries: &[f64], margin: f64) -> f64 {
    let mut limit: f64 = 1.0;
    for i in 0..boundaries.len() - 1 {
        let gap = boundaries[i + 1] - boundaries[i];
        let d_gap = d_boundaries[i + 1] - d_boundaries[i];
        if d_gap < 0.0 {
            limit = limit.min(0.9 * (gap - margin).max(0.0) / -d_gap);
        }
    }
    limit
}

/// A segment shrinking below this share of the final time means the
/// iteration is heading for a profile with fewer switches.
const COLLAPSE_FRACTION: f64 = 1e-4;

fn collapsed(times: &SegmentTimes, margin: f64) -> bool {
    let threshold = (2.0 * margin).max(COLLAPSE_FRACTION * times.tf);
    times.boundaries().windows(2).any(|w| w[1] - w[0] <= threshold)
}

/// Restarts tried, in order, when the default guess fails: fractions of the
/// default final time placed at the switches.
const FALLBACK_MIN_MAX: [f64; 2] = [0.5, 0.75];
const FALLBACK_MAX_MIN_MAX: [(f64, f64); 3] = [(0.6, 0.8), (0.5, 0.9), (0.75, 0.9)];

/// Default start followed by the fallback restarts.
pub fn candidate_initial_times(kind: ProfileKind, bc: &BoundaryConditions, config: &LanderConfig) -> Vec<SegmentTimes> {
    let first = default_initial_times(kind, bc, config);
    let tf = first.tf;
    let mut out = vec![first];
    match kind {
        ProfileKind::MinMax => out.extend(FALLBACK_MIN_MAX.iter().map(|&a| SegmentTimes::min_max(a * tf, tf))),
        ProfileKind::MaxMinMax => out.extend(
            FALLBACK_MAX_MIN_MAX
                .iter()
                .map(|&(a, b)| SegmentTimes::max_min_max(a * tf, b * tf, tf)),
        ),
    }
    out
}

/// Solves the switching and final times for a fixed profile. Without
/// user-supplied initial times the default start is tried first, then the
/// fallback restarts; the first failure is reported if all of them fail.
pub fn solve_profile(
    kind: ProfileKind,
    bc: &BoundaryConditions,
    config: &LanderConfig,
    settings: &OuterSettings,
) -> Result<GuidanceSolution> {
    settings.validate()?;
    bc.validate()?;
    let started = Instant::now();
    let ctx = Context::new(config, bc, kind, settings)?;
    let user = settings.initial_times.filter(|t| t.n_segments() == kind.n_segments());
    let candidates = match user {
        Some(t) => vec![t],
        None => candidate_initial_times(kind, bc, config),
    };
    let mut first_error = None;
    for initial in candidates {
        match solve_from(&ctx, &initial, started) {
            Ok(sol) => return Ok(sol),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.expect("at least one candidate start"))
}

fn solve_from(ctx: &Context, initial: &SegmentTimes, started: Instant) -> Result<GuidanceSolution> {
    let settings = ctx.settings;
    let kind = ctx.kind;
    initial.validate()?;
    let mut current = ctx.evaluate(initial, None)?;
    let mut inner_iterations = vec![current.inner.iterations];
    let mut best = current.clone();
    for it in 1..=settings.max_iterations {
        let r = current.stacked.clone();
        let r_norm = r.norm();
        if r_norm <= settings.time_tolerance {
            return build_solution(current, it - 1, inner_iterations, started);
        }
        let free = current.times().free();
        let mut jac = DMatrix::zeros(r.len(), free.len());
        for k in 0..free.len() {
            let mut probe_times = free.clone();
            probe_times[k] += settings.fd_step;
            let probe = ctx.evaluate(&SegmentTimes::from_free(kind, &probe_times), Some(&current))?;
            inner_iterations.push(probe.inner.iterations);
            jac.set_column(k, &((&probe.stacked - &r) / settings.fd_step));
        }
        let step = -least_squares(&jac, &r)?;

        let bounds = current.times().boundaries();
        let mut d_bounds = vec![0.0];
        d_bounds.extend(step.iter());
        let tf = *bounds.last().unwrap();
        let mut lambda = ordering_limit(&bounds, &d_bounds, settings.time_margin).min(0.25 * tf / step.amax());
        let mut accepted = None;
        while lambda * step.amax() > 0.1 * settings.time_tolerance {
            let trial_free: Vec<f64> = free.iter().zip(step.iter()).map(|(t, d)| t + lambda * d).collect();
            let trial_times = SegmentTimes::from_free(kind, &trial_free);
            if let Ok(trial) = ctx.evaluate(&trial_times, Some(&current)) {
                inner_iterations.push(trial.inner.iterations);
                if trial.stacked.norm() < r_norm {
                    accepted = Some(trial);
                    break;
                }
            }
            lambda *= 0.5;
        }
        let moved = lambda * step.amax();
        match accepted {
            Some(next) => {
                current = next;
                if current.stacked.norm() < best.stacked.norm() {
                    best = current.clone();
                }
                if collapsed(current.times(), settings.time_margin) {
                    return Err(GuidanceError::TimeOrdering { times: current.times().boundaries() });
                }
                if moved <= settings.time_tolerance {
                    return finish(current, it, inner_iterations, started, settings);
                }
            }
            None => return finish(best, it, inner_iterations, started, settings),
        }
    }
    Err(GuidanceError::OuterNonConvergence {
        iterations: settings.max_iterations,
        best_times: best.times().boundaries(),
        residual: best.components(),
    })
}

/// Accepts a stalled iterate only if its outer residual is small enough.
fn finish(
    eval: Evaluation,
    iterations: usize,
    inner_iterations: Vec<usize>,
    started: Instant,
    settings: &OuterSettings,
) -> Result<GuidanceSolution> {
    let components = eval.components();
    let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm <= settings.residual_threshold {
        build_solution(eval, iterations, inner_iterations, started)
    } else {
        Err(GuidanceError::OuterNonConvergence {
            iterations,
            best_times: eval.times().boundaries(),
            residual: components,
        })
    }
}

/// Solves with the profile requested by `settings.profile_mode`, classifying
/// by switching-function sign pattern in `Auto` mode.
pub fn solve_switching_times(
    bc: &BoundaryConditions,
    config: &LanderConfig,
    settings: &OuterSettings,
) -> Result<GuidanceSolution> {
    match settings.profile_mode {
        ProfileMode::ForceMinMax => solve_profile(ProfileKind::MinMax, bc, config, settings),
        ProfileMode::ForceMaxMinMax => solve_profile(ProfileKind::MaxMinMax, bc, config, settings),
        ProfileMode::Auto => select_profile(bc, config, settings),
    }
}

/// Tries min-max first and falls back to max-min-max; a profile is accepted
/// only with the matching switching-function sign pattern.
pub fn select_profile(bc: &BoundaryConditions, config: &LanderConfig, settings: &OuterSettings) -> Result<GuidanceSolution> {
    let describe = |r: &Result<GuidanceSolution>| match r {
        Ok(sol) => sign_summary(&sol.evaluation),
        Err(e) => e.to_string(),
    };
    let min_max = solve_profile(ProfileKind::MinMax, bc, config, settings);
    if let Ok(sol) = &min_max {
        if sol.sign_pattern_consistent() {
            return min_max;
        }
    }
    let max_min_max = solve_profile(ProfileKind::MaxMinMax, bc, config, settings);
    match max_min_max {
        Ok(sol) if sol.sign_pattern_consistent() => Ok(sol),
        other => Err(GuidanceError::Classification {
            diagnostics: format!("min-max: {}; max-min-max: {}", describe(&min_max), describe(&other)),
        }),
    }
}
