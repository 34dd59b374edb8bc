//! Solution artifacts: the per-node trajectory table and the metrics
//! document that carries everything needed to re-check a run.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::BoundarySection;
use crate::error::{GuidanceError, Result};
use crate::model::{LanderParams, ProfileKind};
use crate::outer::{GuidanceSolution, Histories, SolutionMetrics};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const VALIDATION_FILE: &str = "validation.json";

pub const TRAJECTORY_COLUMNS: [&str; 21] = [
    "t", "rx", "ry", "rz", "vx", "vy", "vz", "ax", "ay", "az", "thrust", "mass", "lambda_vx", "lambda_vy", "lambda_vz",
    "lambda_rx", "lambda_ry", "lambda_rz", "lambda_m", "hamiltonian", "sigma",
];

/// 17 significant digits: enough to reproduce every `f64` exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trajectory_csv(h: &Histories) -> String {
    let mut out = String::new();
    out.push_str(&TRAJECTORY_COLUMNS.join(","));
    out.push('\n');
    for k in 0..h.len() {
        let row = [
            h.t[k],
            h.r[k][0],
            h.r[k][1],
            h.r[k][2],
            h.v[k][0],
            h.v[k][1],
            h.v[k][2],
            h.a[k][0],
            h.a[k][1],
            h.a[k][2],
            h.thrust[k],
            h.mass[k],
            h.lambda_v[k][0],
            h.lambda_v[k][1],
            h.lambda_v[k][2],
            h.lambda_r[k][0],
            h.lambda_r[k][1],
            h.lambda_r[k][2],
            h.lambda_m[k],
            h.hamiltonian[k],
            h.switching[k],
        ];
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

pub fn parse_trajectory(text: &str) -> Result<Histories> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| GuidanceError::Config("empty trajectory file".into()))?;
    if header.split(',').collect::<Vec<_>>() != TRAJECTORY_COLUMNS {
        return Err(GuidanceError::Config("trajectory header does not match the schema".into()));
    }
    let mut h = Histories::default();
    for (i, line) in lines.enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| GuidanceError::Config(format!("trajectory row {}: {e}", i + 1)))?;
        if v.len() != TRAJECTORY_COLUMNS.len() {
            return Err(GuidanceError::Config(format!(
                "trajectory row {} has {} columns, expected {}",
                i + 1,
                v.len(),
                TRAJECTORY_COLUMNS.len()
            )));
        }
        h.t.push(v[0]);
        h.r.push([v[1], v[2], v[3]]);
        h.v.push([v[4], v[5], v[6]]);
        h.a.push([v[7], v[8], v[9]]);
        h.thrust.push(v[10]);
        h.mass.push(v[11]);
        h.lambda_v.push([v[12], v[13], v[14]]);
        h.lambda_r.push([v[15], v[16], v[17]]);
        h.lambda_m.push(v[18]);
        h.hamiltonian.push(v[19]);
        h.switching.push(v[20]);
    }
    Ok(h)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything a later `validate` or `report` run needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDocument {
    pub name: String,
    pub profile: ProfileKind,
    /// Segment boundaries `[t0, t1, (t2,) tf]`, s.
    pub times: Vec<f64>,
    pub lambda_r: [f64; 3],
    pub lambda_v0: [f64; 3],
    pub lambda_m0: f64,
    pub lander: LanderParams,
    pub boundary: BoundarySection,
    pub n_basis: usize,
    pub nodes: usize,
    pub reference: Option<String>,
    pub metrics: SolutionMetrics,
    pub trajectory_sha256: String,
}

/// Writes both artifacts into `dir`; returns the metrics document.
#[allow(clippy::too_many_arguments)]
pub fn write_artifacts(
    dir: &Path,
    name: &str,
    solution: &GuidanceSolution,
    lander: &LanderParams,
    boundary: &BoundarySection,
    n_basis: usize,
    nodes: usize,
    reference: Option<String>,
) -> std::io::Result<MetricsDocument> {
    std::fs::create_dir_all(dir)?;
    let csv = trajectory_csv(&solution.histories);
    std::fs::write(dir.join(TRAJECTORY_FILE), &csv)?;
    let doc = MetricsDocument {
        name: name.to_string(),
        profile: solution.kind,
        times: solution.times.boundaries(),
        lambda_r: solution.lambda_r.into(),
        lambda_v0: solution.lambda_v0.into(),
        lambda_m0: solution.lambda_m0,
        lander: *lander,
        boundary: boundary.clone(),
        n_basis,
        nodes,
        reference,
        metrics: solution.metrics.clone(),
        trajectory_sha256: sha256_hex(csv.as_bytes()),
    };
    let json = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(METRICS_FILE), json)?;
    Ok(doc)
}

pub fn read_metrics(path: &Path) -> Result<MetricsDocument> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GuidanceError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| GuidanceError::Config(format!("{}: {e}", path.display())))
}

/// Reads a run directory and checks the trajectory against its recorded
/// checksum and schema.
pub fn read_run(dir: &Path) -> Result<(MetricsDocument, Histories)> {
    let doc = read_metrics(&dir.join(METRICS_FILE))?;
    let path = dir.join(TRAJECTORY_FILE);
    let bytes = std::fs::read(&path).map_err(|e| GuidanceError::Config(format!("cannot read {}: {e}", path.display())))?;
    if sha256_hex(&bytes) != doc.trajectory_sha256 {
        return Err(GuidanceError::Config(format!("{} does not match its recorded checksum", path.display())));
    }
    let text = String::from_utf8(bytes).map_err(|e| GuidanceError::Config(e.to_string()))?;
    let histories = parse_trajectory(&text)?;
    Ok((doc, histories))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let vals = [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 5e-324, -0.0, 12345.678901234567];
        let mut h = Histories::default();
        for &x in &vals {
            h.t.push(x);
            h.r.push([x, -x, x * 0.5]);
            h.v.push([x; 3]);
            h.a.push([x; 3]);
            h.thrust.push(x);
            h.mass.push(x);
            h.lambda_v.push([x; 3]);
            h.lambda_r.push([x; 3]);
            h.lambda_m.push(x);
            h.hamiltonian.push(x);
            h.switching.push(x);
        }
        let back = parse_trajectory(&trajectory_csv(&h)).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn schema_violations_rejected() {
        assert!(parse_trajectory("").is_err());
        assert!(parse_trajectory("t,x\n1,2\n").is_err());
        let mut header = TRAJECTORY_COLUMNS.join(",");
        header.push_str("\n1.0,2.0\n");
        assert!(parse_trajectory(&header).is_err());
    }
}
