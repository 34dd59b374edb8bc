//! Chebyshev basis evaluation, collocation grids and the affine time map.
//!
//! Every segment of the trajectory is discretized on its own
//! Chebyshev–Gauss–Lobatto grid `z_k = -cos(k pi / N)`, `k = 0..=N`, and the
//! free function is expanded in Chebyshev polynomials of `z`. Time
//! derivatives of the expansion pick up powers of `c = dz/dt`.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use crate::error::{GuidanceError, Result};

/// Affine bijection between a time interval and `[-1, +1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMap {
    pub t_start: f64,
    pub t_end: f64,
    pub z_start: f64,
    pub z_end: f64,
    /// `dz/dt`.
    pub c: f64,
}

impl TimeMap {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) || t_end <= t_start {
            return Err(GuidanceError::DegenerateSegment { t_start, t_end });
        }
        Ok(Self {
            t_start,
            t_end,
            z_start: -1.0,
            z_end: 1.0,
            c: 2.0 / (t_end - t_start),
        })
    }

    /// Maps `t` to `z`; both endpoints are reproduced exactly.
    pub fn to_z(&self, t: f64) -> f64 {
        -1.0 + 2.0 * (t - self.t_start) / (self.t_end - self.t_start)
    }

    /// Maps `z` back to `t`; both endpoints are reproduced exactly.
    pub fn to_t(&self, z: f64) -> f64 {
        0.5 * ((1.0 - z) * self.t_start + (1.0 + z) * self.t_end)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Convenience wrapper matching [`TimeMap::new`].
pub fn time_map(t_start: f64, t_end: f64) -> Result<TimeMap> {
    TimeMap::new(t_start, t_end)
}

/// Chebyshev–Gauss–Lobatto nodes on `[-1, 1]` and their images in time.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationGrid {
    /// Number of intervals `N`; the grid holds `N + 1` nodes.
    pub n_points: usize,
    pub nodes_z: Vec<f64>,
    pub nodes_t: Vec<f64>,
}

impl CollocationGrid {
    pub fn len(&self) -> usize {
        self.nodes_z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes_z.is_empty()
    }

    /// Re-targets the grid onto the interval of `map`.
    pub fn mapped(&self, map: &TimeMap) -> Self {
        Self {
            n_points: self.n_points,
            nodes_z: self.nodes_z.clone(),
            nodes_t: self.nodes_z.iter().map(|&z| map.to_t(z)).collect(),
        }
    }
}

/// Smallest accepted `N` for a bare grid. Solver settings impose a larger floor.
pub const MIN_GRID_POINTS: usize = 2;

/// Builds `N + 1` Lobatto nodes `z_k = -cos(k pi / N)`; `nodes_t` equals
/// `nodes_z` until the grid is mapped onto a segment.
pub fn collocation_grid(n_points: usize) -> Result<CollocationGrid> {
    if n_points < MIN_GRID_POINTS {
        return Err(GuidanceError::Config(format!(
            "collocation grid needs at least {MIN_GRID_POINTS} intervals, got {n_points}"
        )));
    }
    let n = n_points as f64;
    // -cos(k pi/N) written as a sine so that node[k] == -node[N-k] bitwise.
    let nodes_z: Vec<f64> = (0..=n_points)
        .map(|k| (PI * (2.0 * k as f64 - n) / (2.0 * n)).sin())
        .collect();
    Ok(CollocationGrid {
        n_points,
        nodes_t: nodes_z.clone(),
        nodes_z,
    })
}

/// Values and first two `z`-derivatives of `T_d(z)` for `d = 0..=max_degree`.
pub fn chebyshev_all(z: f64, max_degree: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = max_degree + 1;
    let mut t = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    t[0] = 1.0;
    if n > 1 {
        t[1] = z;
        d1[1] = 1.0;
    }
    for k in 1..n - 1 {
        t[k + 1] = 2.0 * z * t[k] - t[k - 1];
        d1[k + 1] = 2.0 * t[k] + 2.0 * z * d1[k] - d1[k - 1];
        d2[k + 1] = 4.0 * d1[k] + 2.0 * z * d2[k] - d2[k - 1];
    }
    (t, d1, d2)
}

/// Basis matrices for a retained block of Chebyshev degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    pub n_basis: usize,
    pub degree_offset: usize,
    /// Values, rows = nodes, columns = retained degrees.
    pub h0: DMatrix<f64>,
    /// First `z`-derivatives.
    pub h1: DMatrix<f64>,
    /// Second `z`-derivatives.
    pub h2: DMatrix<f64>,
    /// `h(-1)`.
    pub h_start: DVector<f64>,
    /// `h(+1)`.
    pub h_end: DVector<f64>,
    /// `dh/dz(-1)`.
    pub dh_start: DVector<f64>,
    /// `dh/dz(+1)`.
    pub dh_end: DVector<f64>,
}

/// Evaluates degrees `degree_offset .. degree_offset + n_basis` on `grid`.
pub fn chebyshev_eval(grid: &CollocationGrid, n_basis: usize, degree_offset: usize) -> Result<BasisEval> {
    if n_basis == 0 {
        return Err(GuidanceError::Config("basis needs at least one function".into()));
    }
    let max_degree = degree_offset + n_basis - 1;
    let rows = grid.len();
    let mut h0 = DMatrix::zeros(rows, n_basis);
    let mut h1 = DMatrix::zeros(rows, n_basis);
    let mut h2 = DMatrix::zeros(rows, n_basis);
    for (k, &z) in grid.nodes_z.iter().enumerate() {
        let (t, d1, d2) = chebyshev_all(z, max_degree);
        for j in 0..n_basis {
            h0[(k, j)] = t[degree_offset + j];
            h1[(k, j)] = d1[degree_offset + j];
            h2[(k, j)] = d2[degree_offset + j];
        }
    }
    let boundary = |z: f64| {
        let (t, d1, _) = chebyshev_all(z, max_degree);
        (
            DVector::from_iterator(n_basis, t[degree_offset..].iter().copied()),
            DVector::from_iterator(n_basis, d1[degree_offset..].iter().copied()),
        )
    };
    let (h_start, dh_start) = boundary(-1.0);
    let (h_end, dh_end) = boundary(1.0);
    Ok(BasisEval {
        n_basis,
        degree_offset,
        h0,
        h1,
        h2,
        h_start,
        h_end,
        dh_start,
        dh_end,
    })
}
