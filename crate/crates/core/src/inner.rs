//! Gauss–Newton solve of the discretized boundary value problem at fixed
//! segment times.

use std::ops::{Range, SubAssign};

use nalgebra::{ColPivQR, DMatrix, DVector, Vector3};

use crate::error::{GuidanceError, Result};
use crate::jacobian::{Layout, TrajectoryProblem, UnknownVector};
use crate::tfc::{eval_segment_states, CostateExpression, EndState};

/// Relative threshold on `|R_ii| / |R_00|` below which a pivot counts as zero.
const RANK_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    pub max_iterations: usize,
    /// Stop when `max|dXi| <= step_tolerance * (1 + max|Xi|)`.
    pub step_tolerance: f64,
    /// Stop when the L2 residual changes by at most this much, m/s^2.
    pub residual_tolerance: f64,
    /// Retry with Levenberg damping instead of failing on divergence.
    pub damping_fallback: bool,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            step_tolerance: 1e-12,
            residual_tolerance: 1e-12,
            damping_fallback: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    StepTolerance,
    ResidualTolerance,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub xi: UnknownVector,
    pub iterations: usize,
    /// L2 norm of the residual, starting with the initial guess.
    pub l2_history: Vec<f64>,
    pub termination: Termination,
    /// Residual vector at `xi`.
    pub residual: DVector<f64>,
}

impl InnerResult {
    pub fn l2(&self) -> f64 {
        self.residual.norm()
    }
}

/// Least-squares solution of `j x ~= b` via column-equilibrated, column-pivoted QR.
pub fn least_squares(j: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = j.shape();
    if b.len() != m || m < n {
        return Err(GuidanceError::Internal(format!(
            "least squares shape mismatch: {m}x{n} system, rhs {}",
            b.len()
        )));
    }
    let scale: Vec<f64> = j.column_iter().map(|c| c.norm()).collect();
    let zero_cols: Vec<usize> = (0..n).filter(|&c| !(scale[c] > 0.0)).collect();
    if !zero_cols.is_empty() {
        return Err(GuidanceError::RankDeficient { columns: zero_cols });
    }
    let mut scaled = j.clone();
    for (c, mut col) in scaled.column_iter_mut().enumerate() {
        col /= scale[c];
    }
    let qr = ColPivQR::new(scaled);
    let r = qr.r();
    let r00 = r[(0, 0)].abs();
    let deficient = (0..n).find(|&i| !(r[(i, i)].abs() > RANK_TOLERANCE * r00));
    if let Some(first) = deficient {
        let mut order = DMatrix::from_fn(1, n, |_, c| c as f64);
        qr.p().permute_columns(&mut order);
        let columns = (first..n).map(|i| order[(0, i)] as usize).collect();
        return Err(GuidanceError::RankDeficient { columns });
    }
    let mut rhs = b.clone();
    qr.q_tr_mul(&mut rhs);
    let mut y = rhs.rows(0, n).into_owned();
    if !r.solve_upper_triangular_mut(&mut y) {
        return Err(GuidanceError::Internal("singular triangular factor".into()));
    }
    qr.p().inv_permute_rows(&mut y);
    for (c, v) in y.iter_mut().enumerate() {
        *v /= scale[c];
    }
    Ok(y)
}

/// Rows and columns of one local block of a block-angular matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalBlock {
    pub rows: Vec<usize>,
    pub cols: Range<usize>,
}

/// Least-squares solve for a block-angular `j`: each block's columns are
/// nonzero only in the block's rows, every column outside all blocks is
/// shared. Local columns are eliminated block by block with orthogonal
/// transformations, leaving a small dense system in the shared columns; the
/// result equals the dense solution.
pub fn block_least_squares(j: &DMatrix<f64>, b: &DVector<f64>, blocks: &[LocalBlock]) -> Result<DVector<f64>> {
    let (m, n) = j.shape();
    if b.len() != m {
        return Err(GuidanceError::Internal("block least squares shape mismatch".into()));
    }
    let mut is_local = vec![false; n];
    let mut row_used = vec![false; m];
    for blk in blocks {
        blk.cols.clone().for_each(|c| is_local[c] = true);
        blk.rows.iter().for_each(|&r| row_used[r] = true);
        if blk.rows.len() < blk.cols.len() {
            return Err(GuidanceError::Internal("local block has fewer rows than columns".into()));
        }
    }
    let shared: Vec<usize> = (0..n).filter(|&c| !is_local[c]).collect();
    let scale: Vec<f64> = j.column_iter().map(|c| c.norm()).collect();
    let zero_cols: Vec<usize> = (0..n).filter(|&c| !(scale[c] > 0.0)).collect();
    if !zero_cols.is_empty() {
        return Err(GuidanceError::RankDeficient { columns: zero_cols });
    }
    let ns = shared.len();

    let free_rows: Vec<usize> = (0..m).filter(|&r| !row_used[r]).collect();
    let reduced_rows = free_rows.len() + blocks.iter().map(|blk| blk.rows.len() - blk.cols.len()).sum::<usize>();
    let mut reduced = DMatrix::zeros(reduced_rows, ns);
    let mut reduced_rhs = DVector::zeros(reduced_rows);
    let mut next = 0;
    for &r in &free_rows {
        for (k, &c) in shared.iter().enumerate() {
            reduced[(next, k)] = j[(r, c)] / scale[c];
        }
        reduced_rhs[next] = b[r];
        next += 1;
    }

    struct Eliminated {
        qr: ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>,
        coupling: DMatrix<f64>,
        rhs: DVector<f64>,
    }
    let mut eliminated = Vec::with_capacity(blocks.len());
    for blk in blocks {
        let (mb, nb) = (blk.rows.len(), blk.cols.len());
        let local = DMatrix::from_fn(mb, nb, |r, k| j[(blk.rows[r], blk.cols.start + k)] / scale[blk.cols.start + k]);
        let mut coupling = DMatrix::from_fn(mb, ns, |r, k| j[(blk.rows[r], shared[k])] / scale[shared[k]]);
        let mut rhs = DVector::from_iterator(mb, blk.rows.iter().map(|&r| b[r]));
        let qr = ColPivQR::new(local);
        check_rank(&qr.r(), |i| blk.cols.start + permuted_index(&qr, nb, i))?;
        qr.q_tr_mul(&mut coupling);
        qr.q_tr_mul(&mut rhs);
        reduced.view_mut((next, 0), (mb - nb, ns)).copy_from(&coupling.rows(nb, mb - nb));
        reduced_rhs.rows_mut(next, mb - nb).copy_from(&rhs.rows(nb, mb - nb));
        next += mb - nb;
        eliminated.push(Eliminated { qr, coupling, rhs });
    }

    let mut x = DVector::zeros(n);
    if ns > 0 {
        if reduced_rows < ns {
            return Err(GuidanceError::Internal("reduced system is underdetermined".into()));
        }
        let qr = ColPivQR::new(reduced);
        check_rank(&qr.r(), |i| shared[permuted_index(&qr, ns, i)])?;
        let mut rhs = reduced_rhs;
        qr.q_tr_mul(&mut rhs);
        let mut y = rhs.rows(0, ns).into_owned();
        if !qr.r().solve_upper_triangular_mut(&mut y) {
            return Err(GuidanceError::Internal("singular triangular factor".into()));
        }
        qr.p().inv_permute_rows(&mut y);
        for (k, &c) in shared.iter().enumerate() {
            x[c] = y[k];
        }
    }
    let x_shared = DVector::from_iterator(ns, shared.iter().map(|&c| x[c]));
    for (blk, e) in blocks.iter().zip(&eliminated) {
        let nb = blk.cols.len();
        let mut y = e.rhs.rows(0, nb) - e.coupling.rows(0, nb) * &x_shared;
        if !e.qr.r().solve_upper_triangular_mut(&mut y) {
            return Err(GuidanceError::Internal("singular triangular factor".into()));
        }
        e.qr.p().inv_permute_rows(&mut y);
        x.rows_mut(blk.cols.start, nb).copy_from(&y);
    }
    for (c, v) in x.iter_mut().enumerate() {
        *v /= scale[c];
    }
    Ok(x)
}

/// Original column index of pivoted position `i`.
fn permuted_index(qr: &ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>, n: usize, i: usize) -> usize {
    let mut order = DMatrix::from_fn(1, n, |_, c| c as f64);
    qr.p().permute_columns(&mut order);
    order[(0, i)] as usize
}

/// One block per segment and axis: its collocation rows and free-function
/// coefficients.
pub fn state_blocks(layout: &Layout) -> Vec<LocalBlock> {
    let mut out = Vec::with_capacity(3 * layout.n_segments);
    for s in 0..layout.n_segments {
        for axis in 0..3 {
            let r0 = layout.row(s, axis, 0);
            let c0 = layout.xi_offset(s, axis);
            out.push(LocalBlock { rows: (r0..r0 + layout.n_nodes).collect(), cols: c0..c0 + layout.n_basis });
        }
    }
    out
}

fn check_rank(r: &DMatrix<f64>, column: impl Fn(usize) -> usize) -> Result<()> {
    let n = r.ncols();
    let r00 = r[(0, 0)].abs();
    match (0..n).find(|&i| !(r[(i, i)].abs() > RANK_TOLERANCE * r00)) {
        Some(first) => Err(GuidanceError::RankDeficient { columns: (first..n).map(column).collect() }),
        None => Ok(()),
    }
}

/// Straight-line initial guess for the states and the two-point costate
/// guess `lambda_v(t0) = v0/|v0|`, `lambda_v(tf) = -r0/|r0|`.
pub fn initialize(problem: &TrajectoryProblem) -> Result<UnknownVector> {
    let bc = &problem.bc;
    if bc.v0.norm() == 0.0 || bc.r0.norm() == 0.0 {
        return Err(GuidanceError::Initialization(
            "zero initial velocity or position; supply an explicit costate guess".into(),
        ));
    }
    let lambda_0 = bc.v0.normalize();
    let lambda_f = -bc.r0.normalize();
    let ce = CostateExpression::new(
        (lambda_0 + lambda_f) * 0.5,
        (lambda_f - lambda_0) * 0.5,
        problem.costate_map,
    );
    initialize_with_costate(problem, &ce)
}

/// Straight-line state guess combined with a caller-supplied costate.
pub fn initialize_with_costate(problem: &TrajectoryProblem, costate: &CostateExpression) -> Result<UnknownVector> {
    let bc = &problem.bc;
    let t0 = problem.costate_map.t_start;
    let tf = problem.costate_map.t_end;
    let slope = (bc.rf - bc.r0) / (tf - t0);
    let line = |t: f64| bc.r0 + slope * (t - t0);

    let mut x = UnknownVector::zeros(problem.layout);
    let bounds = problem.profile.times.boundaries();
    for (j, &t) in bounds[1..bounds.len() - 1].iter().enumerate() {
        x.set_junction(j, &EndState::new(line(t), slope));
    }
    let ends = problem.end_states(&x);
    let nb = problem.layout.n_basis;
    let zero = [DVector::zeros(nb), DVector::zeros(nb), DVector::zeros(nb)];
    for (s, seg) in problem.segments.iter().enumerate() {
        let embedded = eval_segment_states(seg, &zero, &ends[s], &ends[s + 1])?;
        for axis in 0..3 {
            let target = DVector::from_iterator(
                seg.n_nodes(),
                seg.grid.nodes_t.iter().zip(&embedded.r).map(|(&t, r)| line(t)[axis] - r[axis]),
            );
            x.set_xi(s, axis, &least_squares(&seg.p0, &target)?);
        }
    }
    if costate.lambda_v(t0).norm() < crate::model::LAMBDA_FLOOR
        || costate.lambda_v(tf).norm() < crate::model::LAMBDA_FLOOR
    {
        return Err(GuidanceError::Initialization(
            "costate guess vanishes at an endpoint; supply an explicit costate guess".into(),
        ));
    }
    x.set_costate(costate);
    Ok(x)
}

/// Cubic guess: the Hermite cubic through both boundary states, with the
/// costate pointing against the thrust that cubic needs. The cubic's
/// acceleration is linear in time, so `lambda_v = -k (a - a_g)` is exactly
/// representable; `k` zeroes the terminal Hamiltonian.
pub fn initialize_cubic(problem: &TrajectoryProblem) -> Result<UnknownVector> {
    let bc = &problem.bc;
    let map = problem.costate_map;
    let dt = map.duration();
    let (r0, v0, rf, vf) = (bc.r0, bc.v0, bc.rf, bc.vf);
    // r(t) = r0 + v0 t + c2 t^2 + c3 t^3
    let c2 = (3.0 * (rf - r0) - (2.0 * v0 + vf) * dt) / (dt * dt);
    let c3 = (2.0 * (r0 - rf) + (v0 + vf) * dt) / (dt * dt * dt);
    let state = |t: f64| {
        let s = t - map.t_start;
        EndState::new(r0 + v0 * s + c2 * s * s + c3 * s * s * s, v0 + c2 * (2.0 * s) + c3 * (3.0 * s * s))
    };
    let accel = |t: f64| {
        let s = t - map.t_start;
        c2 * 2.0 + c3 * (6.0 * s)
    };
    let a_g = problem.config.a_g;
    let u0 = accel(map.t_start) - a_g;
    let uf = accel(map.t_end) - a_g;
    if u0.norm() < crate::model::LAMBDA_FLOOR || uf.norm() < crate::model::LAMBDA_FLOOR {
        return Err(GuidanceError::Initialization(
            "cubic guess needs no thrust at an endpoint; supply an explicit costate guess".into(),
        ));
    }
    let last = problem.layout.n_segments - 1;
    let beta_f = problem.mass.beta_in_segment(last, map.t_end);
    let thrust_f = problem.profile.final_thrust();
    let denom = uf.dot(&a_g) + beta_f * uf.norm();
    let k = if denom > 0.0 { problem.config.alpha * thrust_f / denom } else { 1.0 / uf.norm() };
    let ce = CostateExpression::new(-(u0 + uf) * (0.5 * k), -(uf - u0) * (0.5 * k), map);

    let mut x = UnknownVector::zeros(problem.layout);
    let bounds = problem.profile.times.boundaries();
    for (j, &t) in bounds[1..bounds.len() - 1].iter().enumerate() {
        x.set_junction(j, &state(t));
    }
    x.set_costate(&ce);
    Ok(x)
}

/// Re-fits the state unknowns with the costate held fixed. The dynamics
/// loss is linear in the states, so one least-squares step is exact.
pub fn refit_states(problem: &TrajectoryProblem, x: &UnknownVector) -> Result<UnknownVector> {
    let sys = problem.system(x)?;
    let co = problem.layout.costate_offset();
    let rows = problem.layout.hamiltonian_row();
    let js = sys.j.view((0, 0), (rows, co)).into_owned();
    let dx = block_least_squares(&js, &sys.l.rows(0, rows).into_owned(), &state_blocks(&problem.layout))?;
    let mut out = x.clone();
    out.values.rows_mut(0, co).sub_assign(&dx);
    Ok(out)
}

fn step_small(dx: &DVector<f64>, x: &DVector<f64>, tol: f64) -> bool {
    dx.amax() <= tol * (1.0 + x.amax())
}

/// Undamped Gauss–Newton iteration `Xi <- Xi - dXi`, `dXi = lstsq(J, L)`.
pub fn solve_inner(problem: &TrajectoryProblem, init: &UnknownVector, settings: &InnerSettings) -> Result<InnerResult> {
    let mut x = init.clone();
    let mut l = problem.residual(&x)?;
    let mut l2 = l.norm();
    let mut history = vec![l2];
    let mut best = (x.clone(), l.clone(), l2);
    let mut growth = 0;
    let blocks = state_blocks(&problem.layout);

    for it in 1..=settings.max_iterations {
        let sys = problem.system(&x)?;
        let dx = block_least_squares(&sys.j, &sys.l, &blocks)?;
        x.values -= &dx;
        l = problem.residual(&x)?;
        let l2_new = l.norm();
        history.push(l2_new);
        if l2_new < best.2 {
            best = (x.clone(), l.clone(), l2_new);
        }
        let termination = if step_small(&dx, &x.values, settings.step_tolerance) {
            Some(Termination::StepTolerance)
        } else if (l2_new - l2).abs() <= settings.residual_tolerance {
            Some(Termination::ResidualTolerance)
        } else {
            None
        };
        if let Some(termination) = termination {
            let (xi, residual, _) = best;
            return Ok(InnerResult { xi, iterations: it, l2_history: history, termination, residual });
        }
        growth = if l2_new > l2 { growth + 1 } else { 0 };
        l2 = l2_new;
        if growth >= 3 || !l2.is_finite() {
            if settings.damping_fallback {
                return solve_damped(problem, best.0, history, it, settings);
            }
            return Err(GuidanceError::Divergence { iterations: it, residual: l2 });
        }
    }
    let (xi, residual, _) = best;
    Ok(InnerResult {
        xi,
        iterations: settings.max_iterations,
        l2_history: history,
        termination: Termination::MaxIterations,
        residual,
    })
}

/// Levenberg iteration restarted from the best undamped iterate.
fn solve_damped(
    problem: &TrajectoryProblem,
    start: UnknownVector,
    mut history: Vec<f64>,
    used: usize,
    settings: &InnerSettings,
) -> Result<InnerResult> {
    let n = problem.layout.dim();
    let mut x = start;
    let mut l = problem.residual(&x)?;
    let mut l2 = l.norm();
    let mut mu: f64 = 1e-3;
    let m = problem.layout.n_rows();
    let mut blocks = state_blocks(&problem.layout);
    for blk in &mut blocks {
        blk.rows.extend(blk.cols.clone().map(|c| m + c));
    }
    for it in 1..=settings.max_iterations {
        let sys = problem.system(&x)?;
        let diag: Vec<f64> = sys.j.column_iter().map(|c| c.norm()).collect();
        let mut aug = DMatrix::zeros(m + n, n);
        aug.view_mut((0, 0), (m, n)).copy_from(&sys.j);
        let mut rhs = DVector::zeros(m + n);
        rhs.rows_mut(0, m).copy_from(&sys.l);
        loop {
            for c in 0..n {
                aug[(m + c, c)] = mu.sqrt() * diag[c].max(1e-12);
            }
            let dx = block_least_squares(&aug, &rhs, &blocks)?;
            let mut trial = x.clone();
            trial.values -= &dx;
            let lt = problem.residual(&trial);
            if let Ok(lt) = lt {
                let l2t = lt.norm();
                if l2t < l2 {
                    let small = step_small(&dx, &trial.values, settings.step_tolerance);
                    let flat = (l2 - l2t).abs() <= settings.residual_tolerance;
                    x = trial;
                    l = lt;
                    l2 = l2t;
                    history.push(l2);
                    mu = (mu / 10.0).max(1e-12);
                    if small || flat {
                        return Ok(InnerResult {
                            xi: x,
                            iterations: used + it,
                            l2_history: history,
                            termination: if small { Termination::StepTolerance } else { Termination::ResidualTolerance },
                            residual: l,
                        });
                    }
                    break;
                }
            }
            mu *= 10.0;
            if mu > 1e12 {
                return Err(GuidanceError::Divergence { iterations: used + it, residual: l2 });
            }
        }
    }
    Ok(InnerResult {
        xi: x,
        iterations: used + settings.max_iterations,
        l2_history: history,
        termination: Termination::MaxIterations,
        residual: l,
    })
}

/// Warm start: carries coefficients, junction states and costate direction
/// from a solution at nearby segment times onto `problem`.
pub fn warm_start(problem: &TrajectoryProblem, previous: &UnknownVector, previous_map: &crate::basis::TimeMap) -> UnknownVector {
    let mut x = previous.clone();
    if previous.layout != problem.layout {
        return x;
    }
    // Keep lambda_v(t0) and lambda_v(tf) when the global map stretches.
    let ce = previous.costate(*previous_map);
    let l0: Vector3<f64> = ce.lambda_v(previous_map.t_start);
    let lf: Vector3<f64> = ce.lambda_v(previous_map.t_end);
    x.set_costate(&CostateExpression::new((l0 + lf) * 0.5, (lf - l0) * 0.5, problem.costate_map));
    x
}
