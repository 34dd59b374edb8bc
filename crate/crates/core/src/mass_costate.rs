//! Backward solve of the mass costate equation
//! `d(lambda_m)/dt = -(T / m^2) ||lambda_v||`, `lambda_m(tf) = 0`.
//!
//! Each segment uses the expression `lambda_m = (h - h(+1))^T xi + lambda_end`,
//! which pins the segment's final value for any `xi`; segments are solved
//! from the last to the first, each one's start value seeding its
//! predecessor's end value.

use nalgebra::DVector;

use crate::basis::{chebyshev_eval, BasisEval, CollocationGrid};
use crate::error::{GuidanceError, Result};
use crate::inner::least_squares;
use crate::jacobian::TrajectoryProblem;
use crate::tfc::{CostateExpression, SegmentExpression};

/// `(h - h(+1))` annihilates only constants, so the basis starts at degree 1.
pub const MASS_COSTATE_DEGREE_OFFSET: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MassCostateSolution {
    pub xi: Vec<DVector<f64>>,
    /// `lambda_m` at each node, per segment.
    pub lambda_m: Vec<Vec<f64>>,
    /// `lambda_m` at each segment's start time.
    pub start_values: Vec<f64>,
    /// Largest absolute residual of the discretized equation over all nodes.
    pub max_residual: f64,
}

impl MassCostateSolution {
    pub fn initial_value(&self) -> f64 {
        self.start_values[0]
    }
}

/// Solves `d(lambda_m)/dt = forcing` backward over chained segments with
/// `lambda_m(tf) = terminal`. `forcing[s][k]` is sampled on segment `s`'s grid.
pub fn solve_backward(
    segments: &[SegmentExpression],
    basis: &BasisEval,
    forcing: &[Vec<f64>],
    terminal: f64,
) -> Result<MassCostateSolution> {
    let n = segments.len();
    let mut xi = vec![DVector::zeros(basis.n_basis); n];
    let mut lambda_m = vec![Vec::new(); n];
    let mut start_values = vec![0.0; n];
    let mut max_residual: f64 = 0.0;
    let mut end_value = terminal;
    for s in (0..n).rev() {
        let seg = &segments[s];
        let c = seg.map.c;
        if forcing[s].len() != seg.n_nodes() {
            return Err(GuidanceError::Internal("forcing length does not match grid".into()));
        }
        let a = &basis.h1 * c;
        let f = DVector::from_column_slice(&forcing[s]);
        let coeffs = least_squares(&a, &f)?;
        max_residual = max_residual.max((&a * &coeffs - &f).amax());
        let values = &basis.h0 * &coeffs;
        let shift = basis.h_end.dot(&coeffs);
        lambda_m[s] = values.iter().map(|v| v - shift + end_value).collect();
        start_values[s] = basis.h_start.dot(&coeffs) - shift + end_value;
        // Endpoint nodes carry the chained boundary values bit for bit.
        if let Some(v) = lambda_m[s].first_mut() {
            *v = start_values[s];
        }
        if let Some(v) = lambda_m[s].last_mut() {
            *v = end_value;
        }
        xi[s] = coeffs;
        end_value = start_values[s];
    }
    Ok(MassCostateSolution { xi, lambda_m, start_values, max_residual })
}

/// Mass-costate history for a solved trajectory problem.
pub fn solve_lambda_m(problem: &TrajectoryProblem, costate: &CostateExpression) -> Result<MassCostateSolution> {
    let basis = mass_costate_basis(&problem.grid, problem.layout.n_basis)?;
    let forcing: Vec<Vec<f64>> = problem
        .segments
        .iter()
        .enumerate()
        .map(|(s, seg)| {
            let thrust = problem.mass.segments[s].2;
            seg.grid
                .nodes_t
                .iter()
                .map(|&t| {
                    let m = problem.mass.mass_in_segment(s, t);
                    -thrust / (m * m) * costate.lambda_v(t).norm()
                })
                .collect()
        })
        .collect();
    solve_backward(&problem.segments, &basis, &forcing, 0.0)
}

pub fn mass_costate_basis(grid: &CollocationGrid, n_basis: usize) -> Result<BasisEval> {
    chebyshev_eval(grid, n_basis, MASS_COSTATE_DEGREE_OFFSET)
}
