//! Unknown-vector layout, residual evaluation and the analytic Jacobian of the
//! augmented least-squares system.
//!
//! Unknowns are ordered segment by segment: the three per-axis coefficient
//! blocks of segment `s`, then the junction state `(r_s, v_s)` shared with
//! segment `s + 1`, and finally the six costate coefficients
//! `[a0_x, a1_x, a0_y, a1_y, a0_z, a1_z]`. Residual rows are segment-major,
//! axis-major within a segment, node-major within an axis, with the terminal
//! Hamiltonian row last.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::basis::{chebyshev_eval, collocation_grid, BasisEval, CollocationGrid, TimeMap};
use crate::error::{GuidanceError, Result};
use crate::model::{
    dynamics_loss_at, hamiltonian_loss, BoundaryConditions, LanderConfig, MassProfile, ThrustProfile,
    LAMBDA_FLOOR,
};
use crate::tfc::{eval_segment_states, CostateExpression, EndState, SegmentExpression, SegmentStates};

/// Lowest Chebyshev degree kept in the position free function. Degrees 0..=3
/// are reproduced exactly by the cubic embedding and would be unidentifiable.
pub const STATE_DEGREE_OFFSET: usize = 4;

/// Index arithmetic for the unknown vector and residual rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub n_segments: usize,
    pub n_basis: usize,
    /// Collocation nodes per segment (`N + 1`).
    pub n_nodes: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        3 * self.n_basis + 6
    }

    pub fn dim(&self) -> usize {
        self.n_segments * 3 * self.n_basis + (self.n_segments - 1) * 6 + 6
    }

    pub fn n_rows(&self) -> usize {
        3 * self.n_segments * self.n_nodes + 1
    }

    pub fn xi_offset(&self, segment: usize, axis: usize) -> usize {
        segment * self.stride() + axis * self.n_basis
    }

    /// Offset of `r_{j+1}`; `v_{j+1}` follows three entries later.
    pub fn junction_offset(&self, junction: usize) -> usize {
        junction * self.stride() + 3 * self.n_basis
    }

    pub fn costate_offset(&self) -> usize {
        self.n_segments * 3 * self.n_basis + (self.n_segments - 1) * 6
    }

    pub fn row(&self, segment: usize, axis: usize, node: usize) -> usize {
        (segment * 3 + axis) * self.n_nodes + node
    }

    pub fn hamiltonian_row(&self) -> usize {
        self.n_rows() - 1
    }

    /// Column range owned by segment `s`'s coefficients.
    pub fn xi_columns(&self, segment: usize) -> std::ops::Range<usize> {
        let o = self.xi_offset(segment, 0);
        o..o + 3 * self.n_basis
    }
}

/// The stacked unknown vector with typed accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct UnknownVector {
    pub layout: Layout,
    pub values: DVector<f64>,
}

impl UnknownVector {
    pub fn zeros(layout: Layout) -> Self {
        Self { layout, values: DVector::zeros(layout.dim()) }
    }

    pub fn xi(&self, segment: usize) -> [DVector<f64>; 3] {
        let nb = self.layout.n_basis;
        std::array::from_fn(|axis| {
            self.values.rows(self.layout.xi_offset(segment, axis), nb).into_owned()
        })
    }

    pub fn set_xi(&mut self, segment: usize, axis: usize, coefficients: &DVector<f64>) {
        let o = self.layout.xi_offset(segment, axis);
        self.values.rows_mut(o, self.layout.n_basis).copy_from(coefficients);
    }

    pub fn junction(&self, junction: usize) -> EndState {
        let o = self.layout.junction_offset(junction);
        EndState::new(
            Vector3::new(self.values[o], self.values[o + 1], self.values[o + 2]),
            Vector3::new(self.values[o + 3], self.values[o + 4], self.values[o + 5]),
        )
    }

    pub fn set_junction(&mut self, junction: usize, state: &EndState) {
        let o = self.layout.junction_offset(junction);
        for i in 0..3 {
            self.values[o + i] = state.r[i];
            self.values[o + 3 + i] = state.v[i];
        }
    }

    pub fn costate_coefficients(&self) -> [f64; 6] {
        let o = self.layout.costate_offset();
        std::array::from_fn(|i| self.values[o + i])
    }

    pub fn costate(&self, map: TimeMap) -> CostateExpression {
        CostateExpression::from_coefficients(&self.costate_coefficients(), map)
    }

    pub fn set_costate(&mut self, ce: &CostateExpression) {
        let o = self.layout.costate_offset();
        for (i, c) in ce.to_coefficients().iter().enumerate() {
            self.values[o + i] = *c;
        }
    }
}

/// Augmented residual vector and Jacobian.
#[derive(Debug, Clone)]
pub struct ResidualSystem {
    pub layout: Layout,
    pub l: DVector<f64>,
    pub j: DMatrix<f64>,
}

/// Which end of a segment a junction state constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JunctionSide {
    Start,
    End,
}

/// `d(loss)/d(xi)` for one axis: the projected second-derivative rows.
pub fn partial_xi(expr: &SegmentExpression) -> &DMatrix<f64> {
    &expr.p2
}

/// `(d loss / d r, d loss / d v)` node columns for a junction state.
pub fn partial_junction(expr: &SegmentExpression, side: JunctionSide) -> (Vec<f64>, Vec<f64>) {
    let (ir, iv) = match side {
        JunctionSide::Start => (0, 2),
        JunctionSide::End => (1, 3),
    };
    expr.omega.d2.iter().map(|w| (w[ir], w[iv])).unzip()
}

/// Block `d loss_i / d (a0_j, a1_j)` at one node, returned as `[i][j][0..2]`.
pub fn partial_costate(lambda_v: &Vector3<f64>, beta: f64, h_row: [f64; 2]) -> Result<[[[f64; 2]; 3]; 3]> {
    let n2 = lambda_v.norm_squared();
    let norm = n2.sqrt();
    if !(norm >= LAMBDA_FLOOR) {
        return Err(GuidanceError::SingularCostate { norm, t: f64::NAN });
    }
    let inv = 1.0 / norm;
    let inv3 = inv / n2;
    Ok(std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let delta = if i == j { inv } else { 0.0 };
            let f = beta * (delta - lambda_v[i] * lambda_v[j] * inv3);
            [f * h_row[0], f * h_row[1]]
        })
    }))
}

/// Gradient of the terminal Hamiltonian residual with respect to the six
/// costate coefficients.
pub fn partial_hamiltonian(
    lambda_v_f: &Vector3<f64>,
    beta_f: f64,
    h_row_f: [f64; 2],
    a_g: &Vector3<f64>,
    c_global: f64,
    v_f: &Vector3<f64>,
) -> Result<[f64; 6]> {
    let norm = lambda_v_f.norm();
    if !(norm >= LAMBDA_FLOOR) {
        return Err(GuidanceError::SingularCostate { norm, t: f64::NAN });
    }
    let mut row = [0.0; 6];
    for i in 0..3 {
        let f = a_g[i] - beta_f * lambda_v_f[i] / norm;
        row[2 * i] = f * h_row_f[0];
        // lambda_r . v_f with lambda_r = -a1 c
        row[2 * i + 1] = f * h_row_f[1] - c_global * v_f[i];
    }
    Ok(row)
}

/// A discretized landing problem at fixed segment times.
#[derive(Debug, Clone)]
pub struct TrajectoryProblem {
    pub config: LanderConfig,
    pub bc: BoundaryConditions,
    pub profile: ThrustProfile,
    pub mass: MassProfile,
    pub segments: Vec<SegmentExpression>,
    pub costate_map: TimeMap,
    pub layout: Layout,
    pub grid: CollocationGrid,
    pub basis: BasisEval,
    /// `beta` at every node, per segment.
    pub beta: Vec<Vec<f64>>,
}

impl TrajectoryProblem {
    pub fn new(
        config: &LanderConfig,
        bc: &BoundaryConditions,
        profile: &ThrustProfile,
        n_basis: usize,
        n_intervals: usize,
    ) -> Result<Self> {
        let grid = collocation_grid(n_intervals)?;
        let basis = chebyshev_eval(&grid, n_basis, STATE_DEGREE_OFFSET)?;
        Self::with_basis(config, bc, profile, grid, basis)
    }

    /// Reuses a precomputed `z`-basis (it does not depend on segment times).
    pub fn with_basis(
        config: &LanderConfig,
        bc: &BoundaryConditions,
        profile: &ThrustProfile,
        grid: CollocationGrid,
        basis: BasisEval,
    ) -> Result<Self> {
        bc.validate()?;
        let mass = MassProfile::new(profile, bc.m0, config.alpha, 0.0)?;
        let bounds = profile.times.boundaries();
        let segments = bounds
            .windows(2)
            .map(|w| SegmentExpression::new(TimeMap::new(w[0], w[1])?, &grid, &basis))
            .collect::<Result<Vec<_>>>()?;
        let beta = segments
            .iter()
            .enumerate()
            .map(|(s, seg)| seg.grid.nodes_t.iter().map(|&t| mass.beta_in_segment(s, t)).collect())
            .collect();
        let layout = Layout {
            n_segments: segments.len(),
            n_basis: basis.n_basis,
            n_nodes: grid.len(),
        };
        Ok(Self {
            config: *config,
            bc: *bc,
            profile: profile.clone(),
            mass,
            costate_map: TimeMap::new(bounds[0], *bounds.last().unwrap())?,
            segments,
            layout,
            grid,
            basis,
            beta,
        })
    }

    /// Boundary states of every segment: start, junctions, end.
    pub fn end_states(&self, x: &UnknownVector) -> Vec<EndState> {
        let mut out = Vec::with_capacity(self.layout.n_segments + 1);
        out.push(EndState::new(self.bc.r0, self.bc.v0));
        for j in 0..self.layout.n_segments - 1 {
            out.push(x.junction(j));
        }
        out.push(EndState::new(self.bc.rf, self.bc.vf));
        out
    }

    pub fn segment_states(&self, x: &UnknownVector) -> Result<Vec<SegmentStates>> {
        let ends = self.end_states(x);
        self.segments
            .iter()
            .enumerate()
            .map(|(s, seg)| eval_segment_states(seg, &x.xi(s), &ends[s], &ends[s + 1]))
            .collect()
    }

    fn terminal(&self, ce: &CostateExpression) -> (Vector3<f64>, f64) {
        let tf = self.costate_map.t_end;
        let last = self.layout.n_segments - 1;
        (ce.lambda_v(tf), self.mass.beta_in_segment(last, tf))
    }

    /// Residual vector only.
    pub fn residual(&self, x: &UnknownVector) -> Result<DVector<f64>> {
        let lay = self.layout;
        let states = self.segment_states(x)?;
        let ce = x.costate(self.costate_map);
        let mut l = DVector::zeros(lay.n_rows());
        for (s, (seg, st)) in self.segments.iter().zip(&states).enumerate() {
            for (k, &t) in seg.grid.nodes_t.iter().enumerate() {
                let loss = dynamics_loss_at(&st.a[k], &self.config.a_g, &ce.lambda_v(t), self.beta[s][k], t)?;
                for axis in 0..3 {
                    l[lay.row(s, axis, k)] = loss[axis];
                }
            }
        }
        let (lv_f, beta_f) = self.terminal(&ce);
        l[lay.hamiltonian_row()] = hamiltonian_loss(
            &lv_f,
            &ce.lambda_r(),
            &self.bc.vf,
            beta_f,
            self.profile.final_thrust(),
            &self.config,
        )?;
        Ok(l)
    }

    /// Residual and analytic Jacobian.
    pub fn system(&self, x: &UnknownVector) -> Result<ResidualSystem> {
        let lay = self.layout;
        let nb = lay.n_basis;
        let l = self.residual(x)?;
        let ce = x.costate(self.costate_map);
        let mut j = DMatrix::zeros(lay.n_rows(), lay.dim());
        let co = lay.costate_offset();
        let last = lay.n_segments - 1;

        for (s, seg) in self.segments.iter().enumerate() {
            let p2 = partial_xi(seg);
            let start = (s > 0).then(|| partial_junction(seg, JunctionSide::Start));
            let end = (s < last).then(|| partial_junction(seg, JunctionSide::End));
            for axis in 0..3 {
                let r0 = lay.row(s, axis, 0);
                j.view_mut((r0, lay.xi_offset(s, axis)), (lay.n_nodes, nb)).copy_from(p2);
                for k in 0..lay.n_nodes {
                    if let Some((dr, dv)) = &start {
                        let o = lay.junction_offset(s - 1);
                        j[(r0 + k, o + axis)] = dr[k];
                        j[(r0 + k, o + 3 + axis)] = dv[k];
                    }
                    if let Some((dr, dv)) = &end {
                        let o = lay.junction_offset(s);
                        j[(r0 + k, o + axis)] = dr[k];
                        j[(r0 + k, o + 3 + axis)] = dv[k];
                    }
                }
            }
            for (k, &t) in seg.grid.nodes_t.iter().enumerate() {
                let block = partial_costate(&ce.lambda_v(t), self.beta[s][k], ce.h_row(t))
                    .map_err(|_| GuidanceError::SingularCostate { norm: ce.lambda_v(t).norm(), t })?;
                for (i, rows) in block.iter().enumerate() {
                    let row = lay.row(s, i, k);
                    for (jx, pair) in rows.iter().enumerate() {
                        j[(row, co + 2 * jx)] = pair[0];
                        j[(row, co + 2 * jx + 1)] = pair[1];
                    }
                }
            }
        }

        let (lv_f, beta_f) = self.terminal(&ce);
        let grad = partial_hamiltonian(
            &lv_f,
            beta_f,
            ce.h_row(self.costate_map.t_end),
            &self.config.a_g,
            self.costate_map.c,
            &self.bc.vf,
        )?;
        let hr = lay.hamiltonian_row();
        for (i, g) in grad.iter().enumerate() {
            j[(hr, co + i)] = *g;
        }
        Ok(ResidualSystem { layout: lay, l, j })
    }
}
