//! Trajectories, alignment and absolute trajectory error.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::geometry::{relative_between, PoseSE3, RelativePose, RotMat3, Vec3};
use crate::registration::rigid_solve;
use crate::sensing::parse_fields;
use crate::{Error, Result};

/// Timestamped global poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, PoseSE3)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidInput(format!(
                    "trajectory timestamps must increase strictly ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if entries.iter().any(|(t, _)| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite trajectory timestamp".into()));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, PoseSE3)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Apply `t ∘ pose` to every entry.
    pub fn transformed(&self, t: &PoseSE3) -> Trajectory {
        Trajectory {
            entries: self.entries.iter().map(|(s, p)| (*s, t.compose(p))).collect(),
        }
    }

    /// Relative motion between consecutive entries, in the earlier body frame.
    pub fn relatives(&self) -> Vec<RelativePose> {
        self.entries
            .windows(2)
            .map(|w| relative_between(&w[0].1, &w[1].1).0)
            .collect()
    }

    /// Total distance travelled by the translation component.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }

    /// `timestamp tx ty tz qx qy qz qw` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (t, p) in &self.entries {
            let q = p.rotation.to_quaternion();
            writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                t, p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w
            )
            .expect("write to string");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v = parse_fields(line, path, lineno + 1)?;
            if v.len() != 8 {
                return Err(Error::parse(path, lineno + 1, format!("expected 8 fields, got {}", v.len())));
            }
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if (q.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::parse(path, lineno + 1, format!("quaternion norm {} is not 1", q.norm())));
            }
            let rot = RotMat3::from_quaternion(&UnitQuaternion::from_quaternion(q));
            entries.push((v[0], PoseSE3::new(rot, Vec3::new(v[1], v[2], v[3]))));
        }
        Self::new(entries).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Stitch relative poses onto `start`: entry k = entry k−1 ∘ rel k.
pub fn compose_trajectory(start: PoseSE3, rels: &[RelativePose], timestamps: &[f64]) -> Result<Trajectory> {
    if timestamps.len() != rels.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "{} relative poses need {} timestamps, got {}",
            rels.len(),
            rels.len() + 1,
            timestamps.len()
        )));
    }
    let mut entries = Vec::with_capacity(timestamps.len());
    let mut pose = start;
    entries.push((timestamps[0], pose));
    for (rel, &t) in rels.iter().zip(&timestamps[1..]) {
        pose = pose.compose(&rel.to_pose());
        entries.push((t, pose));
    }
    Trajectory::new(entries)
}

/// Rigidly move `est` so its first pose coincides with the first pose of `reference`.
pub fn align_first_frame(est: &Trajectory, reference: &Trajectory) -> Result<Trajectory> {
    let (Some(e0), Some(r0)) = (est.entries.first(), reference.entries.first()) else {
        return Err(Error::InvalidInput("alignment needs nonempty trajectories".into()));
    };
    Ok(est.transformed(&r0.1.compose(&e0.1.inverse())))
}

/// Least-squares rigid alignment of associated positions. Falls back to matching
/// centroids when the positions are degenerate (fewer than 3 or collinear).
pub fn align_full(est: &Trajectory, reference: &Trajectory, tolerance: Option<f64>) -> Result<Trajectory> {
    let tol = tolerance.unwrap_or_else(|| default_tolerance(reference));
    let pairs = associate(est, reference, tol);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let a: Vec<Vec3> = pairs.iter().map(|&(i, _)| est.entries[i].1.translation).collect();
    let b: Vec<Vec3> = pairs.iter().map(|&(_, j)| reference.entries[j].1.translation).collect();
    let t = match rigid_solve(&a, &b) {
        Ok(t) => t,
        Err(Error::Degenerate(_)) => {
            let n = a.len() as f64;
            let ca: Vec3 = a.iter().sum::<Vec3>() / n;
            let cb: Vec3 = b.iter().sum::<Vec3>() / n;
            PoseSE3::from_translation(cb - ca)
        }
        Err(e) => return Err(e),
    };
    Ok(est.transformed(&t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    D2,
    D3,
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dim::D2 => "2D",
            Dim::D3 => "3D",
        })
    }
}

impl FromStr for Dim {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2d" | "2" => Ok(Dim::D2),
            "3d" | "3" => Ok(Dim::D3),
            _ => Err(Error::InvalidInput(format!("unknown dimensionality `{s}` (use 2D or 3D)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteReport {
    /// Root mean square of the per-frame errors.
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub per_frame: Vec<f64>,
    /// Index into the reference trajectory of each per-frame error.
    pub frames: Vec<usize>,
    pub dim: Dim,
    /// `100 · mean / reference path length`; NaN for a motionless reference.
    pub drift_percent: f64,
}

impl AteReport {
    fn from_errors(per_frame: Vec<f64>, frames: Vec<usize>, dim: Dim, path_length: f64) -> Self {
        let n = per_frame.len() as f64;
        let mean = (per_frame.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
        let avg = per_frame.iter().sum::<f64>() / n;
        let std = (per_frame.iter().map(|e| (e - avg).powi(2)).sum::<f64>() / n).sqrt();
        let max = per_frame.iter().copied().fold(0.0, f64::max);
        let drift_percent = if path_length > 0.0 {
            100.0 * mean / path_length
        } else {
            f64::NAN
        };
        Self {
            mean,
            std,
            max,
            per_frame,
            frames,
            dim,
            drift_percent,
        }
    }

    /// `frame,error` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,error\n");
        for (f, e) in self.frames.iter().zip(&self.per_frame) {
            writeln!(out, "{f},{e}").expect("write to string");
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "mean,std,max,dim,drift_percent\n{},{},{},{},{}\n",
            self.mean, self.std, self.max, self.dim, self.drift_percent
        )
    }
}

/// Per-sequence statistics averaged arithmetically across sequences.
pub fn mean_over_sequences(reports: &[AteReport]) -> Option<(f64, f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let avg = |f: fn(&AteReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some((avg(|r| r.mean), avg(|r| r.std), avg(|r| r.max)))
}

fn default_tolerance(reference: &Trajectory) -> f64 {
    let mut gaps: Vec<f64> = reference.entries.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if gaps.is_empty() {
        return 1e-6;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2] / 2.0
}

/// Pair each reference entry with the nearest-in-time estimate within `tol`.
fn associate(est: &Trajectory, reference: &Trajectory, tol: f64) -> Vec<(usize, usize)> {
    let ts = est.timestamps();
    reference
        .entries
        .iter()
        .enumerate()
        .filter_map(|(j, (t, _))| {
            let k = ts.partition_point(|s| s < t);
            [k.checked_sub(1), Some(k)]
                .into_iter()
                .flatten()
                .filter(|&i| i < ts.len())
                .min_by(|&a, &b| (ts[a] - t).abs().total_cmp(&(ts[b] - t).abs()))
                .filter(|&i| (ts[i] - t).abs() <= tol + 1e-12)
                .map(|i| (i, j))
        })
        .collect()
}

/// Absolute trajectory error with the default association tolerance
/// (half the median reference frame interval).
pub fn ate(est: &Trajectory, reference: &Trajectory, dim: Dim) -> Result<AteReport> {
    ate_with_tolerance(est, reference, dim, default_tolerance(reference))
}

pub fn ate_with_tolerance(est: &Trajectory, reference: &Trajectory, dim: Dim, tol: f64) -> Result<AteReport> {
    let pairs = associate(est, reference, tol);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let per_frame = pairs
        .iter()
        .map(|&(i, j)| {
            let d = est.entries[i].1.translation - reference.entries[j].1.translation;
            match dim {
                Dim::D2 => d.x.hypot(d.y),
                Dim::D3 => d.norm(),
            }
        })
        .collect();
    let frames = pairs.iter().map(|&(_, j)| j).collect();
    Ok(AteReport::from_errors(per_frame, frames, dim, reference.path_length()))
}

/// Sorted `(error, rank / N)` pairs.
pub fn cdf_export(report: &AteReport) -> Vec<(f64, f64)> {
    let mut errors = report.per_frame.clone();
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    errors
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect()
}

pub fn cdf_to_csv(cdf: &[(f64, f64)]) -> String {
    let mut out = String::from("error,fraction\n");
    for (e, f) in cdf {
        writeln!(out, "{e},{f}").expect("write to string");
    }
    out
}
