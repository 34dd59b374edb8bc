//! Run configuration read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{GuidanceError, Result};
use crate::inner::InnerSettings;
use crate::model::{derive_params, BoundaryConditions, LanderConfig, LanderParams, SegmentTimes};
use crate::outer::{OuterSettings, ProfileMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub r0: [f64; 3],
    pub v0: [f64; 3],
    #[serde(default)]
    pub rf: [f64; 3],
    #[serde(default)]
    pub vf: [f64; 3],
    pub m0: f64,
}

impl BoundarySection {
    pub fn to_conditions(&self) -> BoundaryConditions {
        BoundaryConditions {
            r0: Vector3::from(self.r0),
            v0: Vector3::from(self.v0),
            rf: Vector3::from(self.rf),
            vf: Vector3::from(self.vf),
            m0: self.m0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub profile: ProfileMode,
    pub n_basis: usize,
    pub nodes: usize,
    pub time_tolerance: f64,
    pub fd_step: f64,
    pub residual_threshold: f64,
    pub max_outer_iterations: usize,
    pub max_inner_iterations: usize,
    pub inner_step_tolerance: f64,
    pub inner_residual_tolerance: f64,
    pub damping_fallback: bool,
    /// `[t1, tf]` or `[t1, t2, tf]`.
    pub initial_times: Option<Vec<f64>>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let outer = OuterSettings::default();
        Self {
            profile: outer.profile_mode,
            n_basis: outer.n_basis,
            nodes: outer.n_intervals,
            time_tolerance: outer.time_tolerance,
            fd_step: outer.fd_step,
            residual_threshold: outer.residual_threshold,
            max_outer_iterations: outer.max_iterations,
            max_inner_iterations: outer.inner.max_iterations,
            inner_step_tolerance: outer.inner.step_tolerance,
            inner_residual_tolerance: outer.inner.residual_tolerance,
            damping_fallback: outer.inner.damping_fallback,
            initial_times: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Name of a stored reference set to compare against.
    pub reference: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lander: LanderParams,
    pub boundary: BoundarySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

pub fn times_from_list(list: &[f64]) -> Result<SegmentTimes> {
    let times = match list {
        [t1, tf] => SegmentTimes::min_max(*t1, *tf),
        [t1, t2, tf] => SegmentTimes::max_min_max(*t1, *t2, *tf),
        _ => {
            return Err(GuidanceError::Config(format!(
                "initial_times needs 2 or 3 entries, got {}",
                list.len()
            )))
        }
    };
    times.validate()?;
    Ok(times)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| GuidanceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GuidanceError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks every section without solving anything.
    pub fn validate(&self) -> Result<()> {
        self.lander_config()?;
        self.boundary.to_conditions().validate()?;
        self.outer_settings()?.validate()?;
        if let Some(name) = &self.output.reference {
            if crate::validation::ReferenceSet::by_name(name).is_none() {
                return Err(GuidanceError::Config(format!("unknown reference set '{name}'")));
            }
        }
        Ok(())
    }

    pub fn lander_config(&self) -> Result<LanderConfig> {
        derive_params(&self.lander)
    }

    pub fn outer_settings(&self) -> Result<OuterSettings> {
        let s = &self.solver;
        let initial_times = s.initial_times.as_deref().map(times_from_list).transpose()?;
        Ok(OuterSettings {
            time_tolerance: s.time_tolerance,
            fd_step: s.fd_step,
            max_iterations: s.max_outer_iterations,
            residual_threshold: s.residual_threshold,
            initial_times,
            profile_mode: s.profile,
            n_basis: s.n_basis,
            n_intervals: s.nodes,
            inner: InnerSettings {
                max_iterations: s.max_inner_iterations,
                step_tolerance: s.inner_step_tolerance,
                residual_tolerance: s.inner_residual_tolerance,
                damping_fallback: s.damping_fallback,
            },
            ..OuterSettings::default()
        })
    }
}
