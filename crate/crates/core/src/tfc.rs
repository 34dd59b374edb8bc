//! Constrained expressions for the two-point (value + derivative) problem.
//!
//! On a segment `[t_start, t_end]` every function of the form
//!
//! ```text
//! r(t) = g(t) + W1 (r_s - g_s) + W2 (r_e - g_e) + W3 (v_s - g'_s) + W4 (v_e - g'_e)
//! ```
//!
//! matches the boundary data for any free function `g`. With `g = h(z)^T xi`
//! the expression is affine in `xi`, and the projected rows
//! `P = h - W1 h_s - W2 h_e - W3 h'_s - W4 h'_e` carry all of its dependence.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::basis::{BasisEval, CollocationGrid, TimeMap};
use crate::error::{GuidanceError, Result};

/// The four switching weights and their first two time derivatives at one time.
pub fn omega_at(t_star: f64, dt: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let s = t_star / dt;
    let s2 = s * s;
    let s3 = s2 * s;
    let value = [
        1.0 + 2.0 * s3 - 3.0 * s2,
        -2.0 * s3 + 3.0 * s2,
        dt * (s + s3 - 2.0 * s2),
        dt * (s3 - s2),
    ];
    let d1 = [
        (6.0 * s2 - 6.0 * s) / dt,
        (-6.0 * s2 + 6.0 * s) / dt,
        1.0 + 3.0 * s2 - 4.0 * s,
        3.0 * s2 - 2.0 * s,
    ];
    let dt2 = dt * dt;
    let d2 = [
        (12.0 * s - 6.0) / dt2,
        (-12.0 * s + 6.0) / dt2,
        (6.0 * s - 4.0) / dt,
        (6.0 * s - 2.0) / dt,
    ];
    (value, d1, d2)
}

/// Switching weights evaluated on a node list.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSet {
    pub t_start: f64,
    pub dt: f64,
    pub value: Vec<[f64; 4]>,
    pub d1: Vec<[f64; 4]>,
    pub d2: Vec<[f64; 4]>,
}

pub fn omega_set(t_nodes: &[f64], t_start: f64, t_end: f64) -> Result<OmegaSet> {
    if !(t_end > t_start) {
        return Err(GuidanceError::DegenerateSegment { t_start, t_end });
    }
    let dt = t_end - t_start;
    let tol = 1e-12 * dt.max(t_end.abs());
    let mut set = OmegaSet {
        t_start,
        dt,
        value: Vec::with_capacity(t_nodes.len()),
        d1: Vec::with_capacity(t_nodes.len()),
        d2: Vec::with_capacity(t_nodes.len()),
    };
    for &t in t_nodes {
        if t < t_start - tol || t > t_end + tol {
            return Err(GuidanceError::Domain { t, t0: t_start, tf: t_end });
        }
        let (v, d1, d2) = omega_at(t - t_start, dt);
        set.value.push(v);
        set.d1.push(d1);
        set.d2.push(d2);
    }
    Ok(set)
}

/// Position and velocity at one end of a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndState {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl EndState {
    pub fn new(r: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { r, v }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }
}

/// One segment's projected basis rows and switching weights.
#[derive(Debug, Clone)]
pub struct SegmentExpression {
    pub map: TimeMap,
    pub grid: CollocationGrid,
    pub omega: OmegaSet,
    /// Projected values.
    pub p0: DMatrix<f64>,
    /// Projected first time derivatives.
    pub p1: DMatrix<f64>,
    /// Projected second time derivatives.
    pub p2: DMatrix<f64>,
}

impl SegmentExpression {
    /// `basis` must have been evaluated on `grid` (in `z`).
    pub fn new(map: TimeMap, grid: &CollocationGrid, basis: &BasisEval) -> Result<Self> {
        let grid = grid.mapped(&map);
        let omega = omega_set(&grid.nodes_t, map.t_start, map.t_end)?;
        let c = map.c;
        let hs = basis.h_start.transpose();
        let he = basis.h_end.transpose();
        let dhs = basis.dh_start.transpose() * c;
        let dhe = basis.dh_end.transpose() * c;
        let rows = grid.len();
        let mut p0 = basis.h0.clone();
        let mut p1 = &basis.h1 * c;
        let mut p2 = &basis.h2 * (c * c);
        for k in 0..rows {
            for (p, w) in [
                (&mut p0, omega.value[k]),
                (&mut p1, omega.d1[k]),
                (&mut p2, omega.d2[k]),
            ] {
                let mut row = p.row_mut(k);
                row -= &hs * w[0];
                row -= &he * w[1];
                row -= &dhs * w[2];
                row -= &dhe * w[3];
            }
        }
        Ok(Self { map, grid, omega, p0, p1, p2 })
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn n_basis(&self) -> usize {
        self.p0.ncols()
    }

    /// Boundary-data part of the expression for one axis and derivative order.
    fn embed(&self, order: usize, k: usize, axis: usize, start: &EndState, end: &EndState) -> f64 {
        let w = match order {
            0 => self.omega.value[k],
            1 => self.omega.d1[k],
            _ => self.omega.d2[k],
        };
        w[0] * start.r[axis] + w[1] * end.r[axis] + w[2] * start.v[axis] + w[3] * end.v[axis]
    }
}

/// Position, velocity and acceleration histories on one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStates {
    pub r: Vec<Vector3<f64>>,
    pub v: Vec<Vector3<f64>>,
    pub a: Vec<Vector3<f64>>,
}

/// Evaluates the constrained expression on every node of the segment.
pub fn eval_segment_states(
    expr: &SegmentExpression,
    xi: &[DVector<f64>; 3],
    start: &EndState,
    end: &EndState,
) -> Result<SegmentStates> {
    let nb = expr.n_basis();
    if xi.iter().any(|x| x.len() != nb) {
        return Err(GuidanceError::Internal(format!(
            "coefficient length mismatch: expected {nb} per axis"
        )));
    }
    let n = expr.n_nodes();
    let mut out = SegmentStates {
        r: vec![Vector3::zeros(); n],
        v: vec![Vector3::zeros(); n],
        a: vec![Vector3::zeros(); n],
    };
    for (axis, coefficients) in xi.iter().enumerate() {
        let r = &expr.p0 * coefficients;
        let v = &expr.p1 * coefficients;
        let a = &expr.p2 * coefficients;
        for k in 0..n {
            out.r[k][axis] = r[k] + expr.embed(0, k, axis, start, end);
            out.v[k][axis] = v[k] + expr.embed(1, k, axis, start, end);
            out.a[k][axis] = a[k] + expr.embed(2, k, axis, start, end);
        }
    }
    Ok(out)
}

/// Velocity costate `lambda_v = a0 + a1 z` on the global domain map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostateExpression {
    pub a0: Vector3<f64>,
    pub a1: Vector3<f64>,
    pub map: TimeMap,
}

impl CostateExpression {
    pub fn new(a0: Vector3<f64>, a1: Vector3<f64>, map: TimeMap) -> Self {
        Self { a0, a1, map }
    }

    /// Basis row `[1, z(t)]`.
    pub fn h_row(&self, t: f64) -> [f64; 2] {
        [1.0, self.map.to_z(t)]
    }

    pub fn lambda_v(&self, t: f64) -> Vector3<f64> {
        self.a0 + self.a1 * self.map.to_z(t)
    }

    /// Constant position costate, `lambda_r = -d(lambda_v)/dt`.
    pub fn lambda_r(&self) -> Vector3<f64> {
        -self.a1 * self.map.c
    }

    /// Packs into the `[a0_x, a1_x, a0_y, a1_y, a0_z, a1_z]` unknown layout.
    pub fn to_coefficients(&self) -> [f64; 6] {
        [self.a0.x, self.a1.x, self.a0.y, self.a1.y, self.a0.z, self.a1.z]
    }

    pub fn from_coefficients(c: &[f64], map: TimeMap) -> Self {
        Self::new(
            Vector3::new(c[0], c[2], c[4]),
            Vector3::new(c[1], c[3], c[5]),
            map,
        )
    }
}

/// Returns `(lambda_v, lambda_r)` at each node.
pub fn eval_costate(ce: &CostateExpression, t_nodes: &[f64]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let lr = ce.lambda_r();
    t_nodes.iter().map(|&t| (ce.lambda_v(t), lr)).unzip()
}
