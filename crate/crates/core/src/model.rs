//! Lander physics: constants, the bang-bang thrust program, the analytic mass
//! profile, and the first-order-condition residuals built on them.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{GuidanceError, Result};

/// Smallest admissible `||lambda_v||` before the thrust direction is undefined.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Minimum separation between consecutive segment boundaries, seconds.
pub const TIME_MARGIN: f64 = 1e-6;

/// Lander constants as they appear in a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanderParams {
    /// Constant gravity acceleration, m/s^2.
    pub gravity: [f64; 3],
    /// Specific impulse, s.
    pub isp: f64,
    /// Standard gravity used with `isp`, m/s^2.
    pub g0: f64,
    /// Maximum thrust of one engine, N.
    pub thrust_single: f64,
    pub engines: u32,
    /// Engine cant angle, degrees.
    pub cant_angle_deg: f64,
}

impl LanderParams {
    /// Mars lander used by both reference scenarios.
    pub fn mars_reference() -> Self {
        Self {
            gravity: [0.0, 0.0, -3.7114],
            isp: 225.0,
            g0: 9.807,
            thrust_single: 3100.0,
            engines: 6,
            cant_angle_deg: 27.0,
        }
    }
}

/// Lander constants with the derived thrust bounds and mass-flow factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanderConfig {
    pub a_g: Vector3<f64>,
    pub isp: f64,
    pub g0: f64,
    pub t_bar: f64,
    pub n_t: u32,
    /// Cant angle, rad.
    pub phi_t: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Inverse effective exhaust velocity, s/m.
    pub alpha: f64,
}

/// Validates raw constants and derives `T_min = 0.3 T N cos(phi)`,
/// `T_max = 0.8 T N cos(phi)` and `alpha = 1 / (Isp g0 cos(phi))`.
pub fn derive_params(raw: &LanderParams) -> Result<LanderConfig> {
    let positive = [
        ("isp", raw.isp),
        ("g0", raw.g0),
        ("thrust_single", raw.thrust_single),
        ("engines", raw.engines as f64),
    ];
    for (name, value) in positive {
        if !(value.is_finite() && value > 0.0) {
            return Err(GuidanceError::Config(format!("{name} must be positive, got {value}")));
        }
    }
    if raw.gravity.iter().any(|g| !g.is_finite()) {
        return Err(GuidanceError::Config("gravity must be finite".into()));
    }
    let phi = raw.cant_angle_deg.to_radians();
    if !(phi.is_finite() && (0.0..std::f64::consts::FRAC_PI_2).contains(&phi)) {
        return Err(GuidanceError::Config(format!(
            "cant angle must lie in [0, 90) degrees, got {}",
            raw.cant_angle_deg
        )));
    }
    let axial = raw.thrust_single * raw.engines as f64 * phi.cos();
    Ok(LanderConfig {
        a_g: Vector3::from(raw.gravity),
        isp: raw.isp,
        g0: raw.g0,
        t_bar: raw.thrust_single,
        n_t: raw.engines,
        phi_t: phi,
        t_min: 0.3 * axial,
        t_max: 0.8 * axial,
        alpha: 1.0 / (raw.isp * raw.g0 * phi.cos()),
    })
}

/// Endpoint states and initial mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConditions {
    pub r0: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub rf: Vector3<f64>,
    pub vf: Vector3<f64>,
    pub m0: f64,
}

impl BoundaryConditions {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.r0, self.v0, self.rf, self.vf]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(GuidanceError::Config("boundary states must be finite".into()));
        }
        if !(self.m0.is_finite() && self.m0 > 0.0) {
            return Err(GuidanceError::Config(format!("m0 must be positive, got {}", self.m0)));
        }
        Ok(())
    }
}

/// Bang-bang thrust structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    MinMax,
    MaxMinMax,
}

impl ProfileKind {
    pub fn n_segments(self) -> usize {
        match self {
            ProfileKind::MinMax => 2,
            ProfileKind::MaxMinMax => 3,
        }
    }

    pub fn levels(self, config: &LanderConfig) -> Vec<f64> {
        match self {
            ProfileKind::MinMax => vec![config.t_min, config.t_max],
            ProfileKind::MaxMinMax => vec![config.t_max, config.t_min, config.t_max],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProfileKind::MinMax => "min-max",
            ProfileKind::MaxMinMax => "max-min-max",
        }
    }
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Segment boundaries `t0 < t1 (< t2) < tf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTimes {
    pub t0: f64,
    pub t1: f64,
    pub t2: Option<f64>,
    pub tf: f64,
}

impl SegmentTimes {
    pub fn min_max(t1: f64, tf: f64) -> Self {
        Self { t0: 0.0, t1, t2: None, tf }
    }

    pub fn max_min_max(t1: f64, t2: f64, tf: f64) -> Self {
        Self { t0: 0.0, t1, t2: Some(t2), tf }
    }

    /// All boundaries in increasing order.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = vec![self.t0, self.t1];
        b.extend(self.t2);
        b.push(self.tf);
        b
    }

    /// The free times `(t1, [t2,] tf)`.
    pub fn free(&self) -> Vec<f64> {
        let mut b = vec![self.t1];
        b.extend(self.t2);
        b.push(self.tf);
        b
    }

    pub fn from_free(kind: ProfileKind, free: &[f64]) -> Self {
        match kind {
            ProfileKind::MinMax => Self::min_max(free[0], free[1]),
            ProfileKind::MaxMinMax => Self::max_min_max(free[0], free[1], free[2]),
        }
    }

    pub fn n_segments(&self) -> usize {
        if self.t2.is_some() {
            3
        } else {
            2
        }
    }

    /// Checks strict ordering with separation [`TIME_MARGIN`].
    pub fn validate(&self) -> Result<()> {
        let b = self.boundaries();
        let ordered = b.iter().all(|t| t.is_finite())
            && b.windows(2).all(|w| w[1] - w[0] >= TIME_MARGIN);
        if ordered {
            Ok(())
        } else {
            Err(GuidanceError::TimeOrdering { times: b })
        }
    }
}

/// Piecewise-constant thrust magnitude `T(t; t1, t2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrustProfile {
    pub kind: ProfileKind,
    pub times: SegmentTimes,
    /// Thrust level per segment, N.
    pub levels: Vec<f64>,
}

impl ThrustProfile {
    pub fn new(kind: ProfileKind, times: SegmentTimes, config: &LanderConfig) -> Result<Self> {
        if times.n_segments() != kind.n_segments() {
            return Err(GuidanceError::Config(format!(
                "{kind} profile needs {} segments, times describe {}",
                kind.n_segments(),
                times.n_segments()
            )));
        }
        times.validate()?;
        Ok(Self { kind, times, levels: kind.levels(config) })
    }

    pub fn n_segments(&self) -> usize {
        self.levels.len()
    }

    /// Segment containing `t`; switch instants belong to the later segment.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        let b = self.times.boundaries();
        if !(t >= b[0] && t <= *b.last().unwrap()) {
            return Err(GuidanceError::Domain { t, t0: b[0], tf: *b.last().unwrap() });
        }
        let inner = &b[1..b.len() - 1];
        Ok(inner.iter().filter(|&&s| t >= s).count())
    }

    pub fn thrust_at(&self, t: f64) -> Result<f64> {
        Ok(self.levels[self.segment_index(t)?])
    }

    pub fn final_thrust(&self) -> f64 {
        *self.levels.last().unwrap()
    }
}

/// Free function form of [`ThrustProfile::thrust_at`].
pub fn thrust_at(profile: &ThrustProfile, t: f64) -> Result<f64> {
    profile.thrust_at(t)
}

/// Analytic mass history of a piecewise-constant thrust program.
#[derive(Debug, Clone, PartialEq)]
pub struct MassProfile {
    /// `(t_start, m_start, thrust)` per segment.
    pub segments: Vec<(f64, f64, f64)>,
    pub tf: f64,
    pub alpha: f64,
    pub m0: f64,
}

impl MassProfile {
    /// Chains `m(t) = m_s - alpha T_s (t - t_s)` across segments and checks
    /// that the final mass stays above `floor`.
    pub fn new(profile: &ThrustProfile, m0: f64, alpha: f64, floor: f64) -> Result<Self> {
        let b = profile.times.boundaries();
        let mut segments = Vec::with_capacity(profile.n_segments());
        let mut m = m0;
        for (s, &thrust) in profile.levels.iter().enumerate() {
            segments.push((b[s], m, thrust));
            m -= alpha * thrust * (b[s + 1] - b[s]);
        }
        let tf = *b.last().unwrap();
        if !(m > floor) {
            return Err(GuidanceError::InfeasibleProfile { t: tf, mass: m, floor });
        }
        Ok(Self { segments, tf, alpha, m0 })
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let t0 = self.segments[0].0;
        if !(t >= t0 && t <= self.tf) {
            return Err(GuidanceError::Domain { t, t0, tf: self.tf });
        }
        Ok(self.segments.iter().rposition(|s| t >= s.0).unwrap_or(0))
    }

    /// Mass on segment `s` at time `t` (no domain check, used on segment grids).
    pub fn mass_in_segment(&self, s: usize, t: f64) -> f64 {
        let (ts, ms, thrust) = self.segments[s];
        ms - self.alpha * thrust * (t - ts)
    }

    /// `T / m` on segment `s`.
    pub fn beta_in_segment(&self, s: usize, t: f64) -> f64 {
        self.segments[s].2 / self.mass_in_segment(s, t)
    }

    pub fn mass_at(&self, t: f64) -> Result<f64> {
        let s = self.locate(t)?;
        Ok(self.mass_in_segment(s, t))
    }

    pub fn beta_at(&self, t: f64) -> Result<f64> {
        let s = self.locate(t)?;
        Ok(self.beta_in_segment(s, t))
    }

    pub fn final_mass(&self) -> f64 {
        self.mass_in_segment(self.segments.len() - 1, self.tf)
    }

    /// Propellant consumed, `alpha * sum(T_s * dt_s)`.
    pub fn mass_used(&self) -> f64 {
        let mut total = 0.0;
        for (s, &(ts, _, thrust)) in self.segments.iter().enumerate() {
            let te = self.segments.get(s + 1).map_or(self.tf, |n| n.0);
            total += thrust * (te - ts);
        }
        self.alpha * total
    }
}

pub fn mass_at(profile: &ThrustProfile, m0: f64, alpha: f64, t: f64) -> Result<f64> {
    MassProfile::new(profile, m0, alpha, 0.0)?.mass_at(t)
}

pub fn beta_at(profile: &ThrustProfile, m0: f64, alpha: f64, t: f64) -> Result<f64> {
    MassProfile::new(profile, m0, alpha, 0.0)?.beta_at(t)
}

fn checked_norm(lambda_v: &Vector3<f64>, t: f64) -> Result<f64> {
    let norm = lambda_v.norm();
    if !(norm >= LAMBDA_FLOOR) {
        return Err(GuidanceError::SingularCostate { norm, t });
    }
    Ok(norm)
}

/// `a - a_g + beta lambda_v / ||lambda_v||` at one node.
pub fn dynamics_loss_at(
    a: &Vector3<f64>,
    a_g: &Vector3<f64>,
    lambda_v: &Vector3<f64>,
    beta: f64,
    t: f64,
) -> Result<Vector3<f64>> {
    let norm = checked_norm(lambda_v, t)?;
    Ok(a - a_g + lambda_v * (beta / norm))
}

/// Per-node dynamics residuals over aligned histories.
pub fn dynamics_loss(
    a: &[Vector3<f64>],
    lambda_v: &[Vector3<f64>],
    beta: &[f64],
    a_g: &Vector3<f64>,
) -> Result<Vec<Vector3<f64>>> {
    a.iter()
        .zip(lambda_v)
        .zip(beta)
        .enumerate()
        .map(|(k, ((a, lv), &b))| dynamics_loss_at(a, a_g, lv, b, k as f64))
        .collect()
}

/// Terminal Hamiltonian residual
/// `alpha T(tf) + lambda_r . v_f + lambda_v . a_g - beta(tf) ||lambda_v||`.
///
/// `lambda_m(tf) = 0` removes the mass-costate term; the `lambda_r . v_f`
/// term vanishes for rest-to-rest landings.
pub fn hamiltonian_loss(
    lambda_v_f: &Vector3<f64>,
    lambda_r: &Vector3<f64>,
    v_f: &Vector3<f64>,
    beta_f: f64,
    thrust_f: f64,
    config: &LanderConfig,
) -> Result<f64> {
    let norm = checked_norm(lambda_v_f, f64::NAN)?;
    Ok(config.alpha * thrust_f + lambda_r.dot(v_f) + lambda_v_f.dot(&config.a_g) - beta_f * norm)
}

/// Hamiltonian with the optimal thrust direction substituted.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian_at(
    thrust: f64,
    mass: f64,
    v: &Vector3<f64>,
    lambda_r: &Vector3<f64>,
    lambda_v: &Vector3<f64>,
    lambda_m: f64,
    config: &LanderConfig,
) -> f64 {
    config.alpha * thrust + lambda_r.dot(v) + lambda_v.dot(&config.a_g)
        - thrust / mass * lambda_v.norm()
        - lambda_m * config.alpha * thrust
}

/// Switching function `alpha - ||lambda_v|| / m - alpha lambda_m`.
pub fn switching_at(lambda_v: &Vector3<f64>, lambda_m: f64, mass: f64, alpha: f64) -> f64 {
    alpha - lambda_v.norm() / mass - alpha * lambda_m
}

pub fn switching_function(lambda_v: &[Vector3<f64>], lambda_m: &[f64], mass: &[f64], alpha: f64) -> Vec<f64> {
    lambda_v
        .iter()
        .zip(lambda_m)
        .zip(mass)
        .map(|((lv, &lm), &m)| switching_at(lv, lm, m, alpha))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mars() -> LanderConfig {
        derive_params(&LanderParams::mars_reference()).unwrap()
    }

    #[test]
    fn reference_constants() {
        let c = mars();
        assert_relative_eq!(c.alpha, 5.0863e-4, max_relative = 1e-4);
        assert_relative_eq!(c.t_min, 4971.81, epsilon = 0.01);
        assert_relative_eq!(c.t_max, 13258.18, epsilon = 0.01);
    }

    #[test]
    fn uncanted_single_engine() {
        let raw = LanderParams {
            gravity: [0.0; 3],
            isp: 300.0,
            g0: 9.81,
            thrust_single: 1000.0,
            engines: 1,
            cant_angle_deg: 0.0,
        };
        let c = derive_params(&raw).unwrap();
        assert_relative_eq!(c.t_min, 300.0, epsilon = 1e-12);
        assert_relative_eq!(c.t_max, 800.0, epsilon = 1e-12);
    }

    #[test]
    fn bad_constants_rejected() {
        let mut raw = LanderParams::mars_reference();
        raw.isp = 0.0;
        assert!(matches!(derive_params(&raw), Err(GuidanceError::Config(_))));
        let mut raw = LanderParams::mars_reference();
        raw.cant_angle_deg = 90.0;
        assert!(derive_params(&raw).is_err());
        let mut raw = LanderParams::mars_reference();
        raw.engines = 0;
        assert!(derive_params(&raw).is_err());
    }

    #[test]
    fn thrust_program() {
        let c = mars();
        let p = ThrustProfile::new(ProfileKind::MinMax, SegmentTimes::min_max(7.443, 31.2623), &c).unwrap();
        assert_eq!(p.thrust_at(3.0).unwrap(), c.t_min);
        assert_eq!(p.thrust_at(7.443).unwrap(), c.t_max);
        assert!(matches!(p.thrust_at(40.0), Err(GuidanceError::Domain { .. })));

        let p = ThrustProfile::new(ProfileKind::MaxMinMax, SegmentTimes::max_min_max(10.0, 20.0, 30.0), &c).unwrap();
        assert_eq!(p.thrust_at(0.0).unwrap(), c.t_max);
        assert_eq!(p.thrust_at(15.0).unwrap(), c.t_min);
        assert_eq!(p.thrust_at(30.0).unwrap(), c.t_max);
    }

    #[test]
    fn profile_time_checks() {
        let c = mars();
        assert!(ThrustProfile::new(ProfileKind::MaxMinMax, SegmentTimes::min_max(5.0, 10.0), &c).is_err());
        let collapsed = SegmentTimes::max_min_max(5.0, 5.0 + 1e-9, 10.0);
        assert!(matches!(
            ThrustProfile::new(ProfileKind::MaxMinMax, collapsed, &c),
            Err(GuidanceError::TimeOrdering { .. })
        ));
    }

    #[test]
    fn mass_profile_reference_values() {
        let c = mars();
        let p = ThrustProfile::new(ProfileKind::MinMax, SegmentTimes::min_max(7.4430, 31.2623), &c).unwrap();
        let m = MassProfile::new(&p, 1905.0, c.alpha, 0.0).unwrap();
        assert_eq!(m.mass_at(0.0).unwrap(), 1905.0);
        assert_relative_eq!(m.mass_at(7.4430).unwrap(), 1886.18, epsilon = 0.01);
        assert_relative_eq!(m.mass_used(), 179.447, epsilon = 2e-3);
        assert_relative_eq!(m.m0 - m.final_mass(), m.mass_used(), max_relative = 1e-12);
    }

    #[test]
    fn mass_floor_enforced() {
        let c = mars();
        let p = ThrustProfile::new(ProfileKind::MinMax, SegmentTimes::min_max(10.0, 400.0), &c).unwrap();
        assert!(matches!(
            MassProfile::new(&p, 1905.0, c.alpha, 0.0),
            Err(GuidanceError::InfeasibleProfile { .. })
        ));
    }

    #[test]
    fn dynamics_loss_cases() {
        let ag = Vector3::new(0.0, 0.0, -3.7114);
        let lv = Vector3::new(0.2, -0.5, 0.9);
        let beta = 4.0;
        let a = ag - lv.normalize() * beta;
        let l = dynamics_loss_at(&a, &ag, &lv, beta, 0.0).unwrap();
        assert!(l.norm() < 1e-15);

        let a = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(dynamics_loss_at(&a, &ag, &lv, 0.0, 0.0).unwrap(), a - ag);

        let l = dynamics_loss_at(&ag, &ag, &Vector3::x(), 2.0, 0.0).unwrap();
        assert_eq!(l, Vector3::new(2.0, 0.0, 0.0));

        assert!(matches!(
            dynamics_loss_at(&ag, &ag, &Vector3::zeros(), 2.0, 0.0),
            Err(GuidanceError::SingularCostate { .. })
        ));
    }

    #[test]
    fn dynamics_loss_translation_invariant() {
        let a = Vector3::new(0.3, -1.2, 2.0);
        let ag = Vector3::new(0.0, 0.0, -3.7114);
        let d = Vector3::new(1.5, -2.25, 0.125);
        let lv = Vector3::new(-0.4, 0.1, 0.7);
        let l1 = dynamics_loss_at(&a, &ag, &lv, 3.0, 0.0).unwrap();
        let l2 = dynamics_loss_at(&(a + d), &(ag + d), &lv, 3.0, 0.0).unwrap();
        assert!((l1 - l2).norm() < 1e-14);
    }

    #[test]
    fn hamiltonian_loss_root() {
        let c = mars();
        let dir = Vector3::new(0.1, 0.2, 0.97).normalize();
        let beta = 7.0;
        let thrust = c.t_max;
        // beta k - k dir.a_g = alpha T  =>  k = alpha T / (beta - dir.a_g)
        let k = c.alpha * thrust / (beta - dir.dot(&c.a_g));
        let lv = dir * k;
        let l = hamiltonian_loss(&lv, &Vector3::zeros(), &Vector3::zeros(), beta, thrust, &c).unwrap();
        assert!(l.abs() < 1e-15);
        assert!(hamiltonian_loss(&Vector3::zeros(), &Vector3::zeros(), &Vector3::zeros(), beta, thrust, &c).is_err());
    }

    #[test]
    fn hamiltonian_and_switching_trivia() {
        let c = mars();
        let z = Vector3::zeros();
        assert_eq!(hamiltonian_at(0.0, 1000.0, &Vector3::new(1.0, 2.0, 3.0), &z, &z, 0.0, &c), 0.0);

        let m = 1500.0;
        let lv = Vector3::new(0.0, 3.0, 4.0) * (c.alpha * m / 5.0);
        assert!(switching_at(&lv, 0.0, m, c.alpha).abs() < 1e-18);
    }
}
