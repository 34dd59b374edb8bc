//! Independent check of a solution: adaptive Runge–Kutta propagation of the
//! full state/costate system from the solved initial costates, and a
//! side-by-side comparison with reference values.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{GuidanceError, Result};
use crate::model::{hamiltonian_at, BoundaryConditions, LanderConfig, MassProfile, ThrustProfile, LAMBDA_FLOOR};
use crate::outer::SolutionMetrics;

/// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (first-same-as-last: equal to the last row of `A`).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub const MIN_REL_TOL: f64 = 1e-13;
pub const MAX_REL_TOL: f64 = 1e-6;
pub const DEFAULT_REL_TOL: f64 = 1e-12;
/// Absolute tolerance per component is this factor times `rel_tol` times the
/// component's scale.
const ABS_TOL_FACTOR: f64 = 0.1;
const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    /// Per-unit absolute tolerance; multiplied by each component's scale.
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    pub fn new(rel_tol: f64) -> Result<Self> {
        if !(MIN_REL_TOL..=MAX_REL_TOL).contains(&rel_tol) {
            return Err(GuidanceError::Config(format!(
                "relative tolerance {rel_tol:e} outside [{MIN_REL_TOL:e}, {MAX_REL_TOL:e}]"
            )));
        }
        Ok(Self { rel_tol, abs_tol: ABS_TOL_FACTOR * rel_tol, max_steps: MAX_STEPS })
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction) with
/// adaptive Dormand–Prince 5(4) steps. `observe` sees every accepted state.
/// Returns the final state and the number of accepted steps.
pub fn integrate<const N: usize>(
    f: impl Fn(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    t0: f64,
    y0: SVector<f64, N>,
    t1: f64,
    opts: &IntegratorOptions,
    scale: &SVector<f64, N>,
    mut observe: impl FnMut(f64, &SVector<f64, N>) -> Result<()>,
) -> Result<(SVector<f64, N>, usize)> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok((y0, 0));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k0 = f(t, &y)?;
    let mut h = dir * (span.abs() * 1e-3).min(1.0);
    let mut steps = 0;
    let mut attempts = 0;
    observe(t, &y)?;
    while dir * (t1 - t) > 0.0 {
        attempts += 1;
        if attempts > opts.max_steps {
            return Err(GuidanceError::Integrator(format!("step limit reached at t = {t}")));
        }
        let last = dir * (t + h - t1) >= 0.0;
        if last {
            h = t1 - t;
        }
        let mut k = [SVector::<f64, N>::zeros(); 7];
        k[0] = k0;
        for i in 1..7 {
            let mut yi = y;
            for j in 0..i {
                if A[i][j] != 0.0 {
                    yi += k[j] * (h * A[i][j]);
                }
            }
            k[i] = f(t + C[i] * h, &yi)?;
        }
        let mut y5 = y;
        let mut err = SVector::<f64, N>::zeros();
        for i in 0..7 {
            y5 += k[i] * (h * B5[i]);
            err += k[i] * (h * (B5[i] - B4[i]));
        }
        let mut norm = 0.0;
        for i in 0..N {
            let tol = opts.abs_tol * scale[i] + opts.rel_tol * y[i].abs().max(y5[i].abs());
            norm += (err[i] / tol).powi(2);
        }
        let norm = (norm / N as f64).sqrt();
        if !norm.is_finite() {
            return Err(GuidanceError::Integrator(format!("non-finite error estimate at t = {t}")));
        }
        if norm <= 1.0 {
            t = if last { t1 } else { t + h };
            y = y5;
            k0 = k[6];
            steps += 1;
            observe(t, &y)?;
        }
        let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h.abs() < 1e-14 * t.abs().max(1.0) {
            return Err(GuidanceError::Integrator(format!("step size underflow at t = {t}")));
        }
    }
    Ok((y, steps))
}

/// Endpoint errors of the oracle propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    /// `||r(tf) - r_f||`, m.
    pub position_error: f64,
    /// `||v(tf) - v_f||`, m/s.
    pub velocity_error: f64,
    /// `lambda_m(tf)`.
    pub lambda_m_final: f64,
    /// Propagated final mass, kg.
    pub final_mass: f64,
    /// Propagated minus analytic final mass, kg.
    pub mass_error: f64,
    /// Largest `|H|` over accepted steps.
    pub max_abs_hamiltonian: f64,
    pub rel_tol: f64,
    pub steps: usize,
}

/// Initial costates handed to the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCostate {
    pub lambda_r: Vector3<f64>,
    pub lambda_v: Vector3<f64>,
    pub lambda_m: f64,
}

/// Propagates position, velocity, mass, `lambda_v` and `lambda_m` forward
/// with thrust along `-lambda_v`, restarting at every switch time.
pub fn propagate_oracle(
    bc: &BoundaryConditions,
    costate: &InitialCostate,
    profile: &ThrustProfile,
    config: &LanderConfig,
    rel_tol: f64,
) -> Result<PropagationReport> {
    let opts = IntegratorOptions::new(rel_tol)?;
    let analytic = MassProfile::new(profile, bc.m0, config.alpha, 0.0)?;
    let lr = costate.lambda_r;
    let a_g = config.a_g;
    let alpha = config.alpha;
    // [r, v, m, lambda_v, lambda_m]
    let mut y = SVector::<f64, 11>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&bc.r0);
    y.fixed_rows_mut::<3>(3).copy_from(&bc.v0);
    y[6] = bc.m0;
    y.fixed_rows_mut::<3>(7).copy_from(&costate.lambda_v);
    y[10] = costate.lambda_m;
    let mut scale = y.map(|v| v.abs().max(1.0));
    for i in 0..3 {
        scale[i] = scale[i].max(bc.r0.norm());
        scale[3 + i] = scale[3 + i].max(bc.v0.norm());
    }

    let bounds = profile.times.boundaries();
    let mut steps = 0;
    let mut max_h: f64 = 0.0;
    for (s, &thrust) in profile.levels.iter().enumerate() {
        let rhs = |t: f64, y: &SVector<f64, 11>| -> Result<SVector<f64, 11>> {
            let m = y[6];
            if !(m > 0.0) {
                return Err(GuidanceError::InfeasibleProfile { t, mass: m, floor: 0.0 });
            }
            let lv = Vector3::new(y[7], y[8], y[9]);
            let n = lv.norm();
            if !(n >= LAMBDA_FLOOR) {
                return Err(GuidanceError::SingularCostate { norm: n, t });
            }
            let acc = a_g - lv * (thrust / (m * n));
            let mut d = SVector::<f64, 11>::zeros();
            d.fixed_rows_mut::<3>(0).copy_from(&y.fixed_rows::<3>(3));
            d.fixed_rows_mut::<3>(3).copy_from(&acc);
            d[6] = -alpha * thrust;
            d.fixed_rows_mut::<3>(7).copy_from(&(-lr));
            d[10] = -thrust / (m * m) * n;
            Ok(d)
        };
        let observe = |_t: f64, y: &SVector<f64, 11>| {
            let v = Vector3::new(y[3], y[4], y[5]);
            let lv = Vector3::new(y[7], y[8], y[9]);
            max_h = max_h.max(hamiltonian_at(thrust, y[6], &v, &lr, &lv, y[10], config).abs());
            Ok(())
        };
        let (next, n) = integrate(rhs, bounds[s], y, bounds[s + 1], &opts, &scale, observe)?;
        y = next;
        steps += n;
    }
    let r = Vector3::new(y[0], y[1], y[2]);
    let v = Vector3::new(y[3], y[4], y[5]);
    Ok(PropagationReport {
        position_error: (r - bc.rf).norm(),
        velocity_error: (v - bc.vf).norm(),
        lambda_m_final: y[10],
        final_mass: y[6],
        mass_error: y[6] - analytic.final_mass(),
        max_abs_hamiltonian: max_h,
        rel_tol,
        steps,
    })
}

/// `lambda_m(t0)` from backward integration of
/// `d(lambda_m)/dt = -(T / m^2) ||lambda_v(t)||`, `lambda_m(tf) = 0`.
pub fn backward_lambda_m(
    profile: &ThrustProfile,
    mass: &MassProfile,
    lambda_v: impl Fn(f64) -> Vector3<f64>,
    rel_tol: f64,
) -> Result<f64> {
    let opts = IntegratorOptions::new(rel_tol)?;
    let bounds = profile.times.boundaries();
    let mut y = SVector::<f64, 1>::zeros();
    let scale = SVector::<f64, 1>::repeat(1.0);
    for s in (0..profile.n_segments()).rev() {
        let thrust = profile.levels[s];
        let rhs = |t: f64, _: &SVector<f64, 1>| {
            let m = mass.mass_in_segment(s, t);
            Ok(SVector::<f64, 1>::new(-thrust / (m * m) * lambda_v(t).norm()))
        };
        y = integrate(rhs, bounds[s + 1], y, bounds[s], &opts, &scale, |_, _| Ok(()))?.0;
    }
    Ok(y[0])
}

/// Reference values for one scenario; absent fields are not compared.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub name: String,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub tf: Option<f64>,
    pub time_tolerance: Option<f64>,
    pub m_used: Option<f64>,
    pub m_used_tolerance: Option<f64>,
    pub l2_loss_max: Option<f64>,
    pub l2_hamiltonian_max: Option<f64>,
    pub position_error_max: Option<f64>,
    pub velocity_error_max: Option<f64>,
    pub lambda_m_final_max: Option<f64>,
}

impl ReferenceSet {
    /// Min-max reference scenario.
    pub fn test1() -> Self {
        Self {
            name: "test1".into(),
            t1: Some(7.4430),
            t2: None,
            tf: Some(31.2623),
            time_tolerance: Some(1e-3),
            m_used: Some(179.447),
            m_used_tolerance: Some(0.01),
            l2_loss_max: Some(1e-8),
            l2_hamiltonian_max: Some(1e-8),
            position_error_max: Some(1e-4),
            velocity_error_max: Some(1e-5),
            lambda_m_final_max: Some(1e-9),
        }
    }

    /// Max-min-max reference scenario.
    pub fn test2() -> Self {
        Self {
            name: "test2".into(),
            t1: Some(32.418),
            t2: Some(38.838),
            tf: Some(44.823),
            time_tolerance: Some(1e-2),
            m_used: Some(275.205),
            m_used_tolerance: Some(0.01),
            l2_loss_max: Some(1e-8),
            l2_hamiltonian_max: Some(1e-6),
            position_error_max: Some(1e-3),
            velocity_error_max: None,
            lambda_m_final_max: None,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "test1" => Some(Self::test1()),
            "test2" => Some(Self::test2()),
            _ => None,
        }
    }
}

/// One compared quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub field: String,
    pub value: f64,
    pub reference: Option<f64>,
    /// `|value - reference|` bound, or an upper bound on `|value|` when
    /// `reference` is absent.
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl ReportRow {
    fn plain(field: &str, value: f64) -> Self {
        Self { field: field.into(), value, reference: None, tolerance: None, pass: None }
    }

    fn near(field: &str, value: f64, reference: Option<f64>, tolerance: Option<f64>) -> Self {
        let pass = match (reference, tolerance) {
            (Some(r), Some(tol)) => Some((value - r).abs() <= tol),
            _ => None,
        };
        Self { field: field.into(), value, reference, tolerance: reference.and(tolerance), pass }
    }

    fn bounded(field: &str, value: f64, max: Option<f64>) -> Self {
        Self { field: field.into(), value, reference: None, tolerance: max, pass: max.map(|m| value.abs() <= m) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reference: Option<String>,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    /// `None` when nothing was compared.
    pub fn all_pass(&self) -> Option<bool> {
        let marks: Vec<bool> = self.rows.iter().filter_map(|r| r.pass).collect();
        (!marks.is_empty()).then(|| marks.iter().all(|&p| p))
    }
}

/// Lists solution and propagation fields next to `reference`, marking each
/// with pass or fail where a tolerance applies.
pub fn metrics_report(
    times: &[f64],
    metrics: &SolutionMetrics,
    propagation: Option<&PropagationReport>,
    reference: Option<&ReferenceSet>,
) -> MetricsReport {
    let empty = ReferenceSet::default();
    let rf = reference.unwrap_or(&empty);
    let mut rows = vec![
        ReportRow::bounded("l2_loss", metrics.l2_loss, rf.l2_loss_max),
        ReportRow::bounded("l2_hamiltonian", metrics.l2_hamiltonian, rf.l2_hamiltonian_max),
        ReportRow::near("m_used", metrics.m_used, rf.m_used, rf.m_used_tolerance),
    ];
    let n = times.len();
    if n >= 3 {
        rows.push(ReportRow::near("t1", times[1], rf.t1, rf.time_tolerance));
    }
    if n >= 4 {
        rows.push(ReportRow::near("t2", times[2], rf.t2, rf.time_tolerance));
    }
    if n >= 2 {
        rows.push(ReportRow::near("tf", times[n - 1], rf.tf, rf.time_tolerance));
    }
    if let Some(p) = propagation {
        rows.push(ReportRow::bounded("position_error", p.position_error, rf.position_error_max));
        rows.push(ReportRow::bounded("velocity_error", p.velocity_error, rf.velocity_error_max));
        rows.push(ReportRow::bounded("lambda_m_final", p.lambda_m_final, rf.lambda_m_final_max));
    }
    rows.push(ReportRow::plain("outer_iterations", metrics.outer_iterations as f64));
    rows.push(ReportRow::plain("max_inner_iterations", metrics.max_inner_iterations() as f64));
    rows.push(ReportRow::plain("wall_time_s", metrics.wall_time_s));
    MetricsReport { reference: reference.map(|r| r.name.clone()), rows }
}
