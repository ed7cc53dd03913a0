//! Rigid point-set registration: closed-form solve, ICP, RANSAC and gyro-bootstrapped ICP.
//!
//! Transforms map cloud `a` into cloud `b`: `b ≈ R·a + t`. Registering the
//! current scan (`a`) against the previous one (`b`) therefore yields the
//! relative pose of the current frame expressed in the previous frame.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::Rng;

use crate::geometry::{PoseSE3, RotMat3, Vec3};
use crate::rng;
use crate::sensing::{ImuSample, PointCloud, SensorFrame};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Correspondences {
    /// `(index into a, index into b)`.
    pub pairs: Vec<(usize, usize)>,
    pub residuals: Option<Vec<f64>>,
}

impl Correspondences {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub transform: PoseSE3,
    /// Sum of squared residuals over the final correspondences.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub inlier_count: usize,
    /// Truncated objective `Σ min(d², reject²)` after each accepted step, starting at the initial guess.
    pub history: Vec<f64>,
    /// Set when the requested initialisation was unavailable and identity was used.
    pub init_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcpParams {
    pub max_iters: usize,
    /// Stop once the objective improves by less than this (m²).
    pub tolerance: f64,
    pub reject_dist: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tolerance: 1e-8,
            reject_dist: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub hypotheses: usize,
    pub inlier_threshold: f64,
    /// Putative matches for an `a` point are its `candidates` nearest `b` points within this radius.
    pub search_radius: f64,
    pub candidates: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            hypotheses: 200,
            inlier_threshold: 0.1,
            search_radius: 1.0,
            candidates: 3,
        }
    }
}

fn check_pairs(a: &PointCloud, b: &PointCloud, corr: &Correspondences) -> Result<()> {
    if corr.is_empty() {
        return Err(Error::InvalidInput("empty correspondences".into()));
    }
    if let Some(&(i, j)) = corr.pairs.iter().find(|(i, j)| *i >= a.len() || *j >= b.len()) {
        return Err(Error::InvalidInput(format!(
            "correspondence ({i}, {j}) out of range for clouds of {} and {} points",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `Σ ‖b_j − R·a_i − t‖²` over the correspondence pairs.
pub fn eq1_objective(a: &PointCloud, b: &PointCloud, corr: &Correspondences, t: &PoseSE3) -> Result<f64> {
    check_pairs(a, b, corr)?;
    Ok(corr
        .pairs
        .iter()
        .map(|&(i, j)| (b.points[j] - t.transform_point(&a.points[i])).norm_squared())
        .sum())
}

/// Least-squares rigid transform taking `a[k]` onto `b[k]` (SVD with reflection correction).
pub fn rigid_solve(a: &[Vec3], b: &[Vec3]) -> Result<PoseSE3> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("{} vs {} paired points", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::Degenerate(format!("rigid solve needs 3 pairs, got {}", a.len())));
    }
    let n = a.len() as f64;
    let ca: Vec3 = a.iter().sum::<Vec3>() / n;
    let cb: Vec3 = b.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    let mut spread_a = Matrix3::zeros();
    for (p, q) in a.iter().zip(b) {
        let (da, db) = (p - ca, q - cb);
        h += da * db.transpose();
        spread_a += da * da.transpose();
    }
    let sa = spread_a.symmetric_eigenvalues();
    let mut sa: Vec<f64> = sa.iter().copied().collect();
    sa.sort_by(|x, y| y.total_cmp(x));
    if sa[0] <= 1e-24 || sa[1] <= 1e-12 * sa[0] {
        return Err(Error::Degenerate("points are coincident or collinear".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let smallest = (0..3)
            .min_by(|&x, &y| svd.singular_values[x].total_cmp(&svd.singular_values[y]))
            .expect("three values");
        d[(smallest, smallest)] = -1.0;
    }
    let r = RotMat3::orthonormalize(&(v * d * u.transpose()));
    let t = cb - &r * &ca;
    Ok(PoseSE3::new(r, t))
}

/// Index and distance of the nearest `b` point for every `a` point (lowest index wins ties).
fn nearest_all(a: &[Vec3], b: &[Vec3]) -> Vec<(usize, f64)> {
    a.iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (j, q) in b.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            (best.0, best.1.sqrt())
        })
        .collect()
}

/// Pair each `a` point with its nearest `b` point, keeping pairs closer than `reject_dist`.
pub fn nn_correspondences(a: &PointCloud, b: &PointCloud, reject_dist: f64) -> Correspondences {
    if b.is_empty() {
        return Correspondences::default();
    }
    let (pairs, residuals) = nearest_all(&a.points, &b.points)
        .into_iter()
        .enumerate()
        .filter(|(_, (_, d))| *d < reject_dist)
        .map(|(i, (j, d))| ((i, j), d))
        .unzip();
    Correspondences {
        pairs,
        residuals: Some(residuals),
    }
}

struct IcpState {
    transform: PoseSE3,
    nearest: Vec<(usize, f64)>,
    truncated: f64,
}

impl IcpState {
    fn evaluate(transform: PoseSE3, a: &PointCloud, b: &PointCloud, reject: f64) -> Self {
        let moved: Vec<Vec3> = a.points.iter().map(|p| transform.transform_point(p)).collect();
        let nearest = nearest_all(&moved, &b.points);
        let truncated = nearest.iter().map(|(_, d)| (d * d).min(reject * reject)).sum();
        Self {
            transform,
            nearest,
            truncated,
        }
    }

    fn inliers(&self, reject: f64) -> Vec<(usize, usize)> {
        self.nearest
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| *d < reject)
            .map(|(i, (j, _))| (i, *j))
            .collect()
    }
}

/// Iterative closest point from `init`.
///
/// Each step re-pairs nearest neighbours and re-solves the rigid transform. The
/// truncated objective never increases: a step that would raise it is rejected.
pub fn icp(a: &PointCloud, b: &PointCloud, init: &PoseSE3, params: &IcpParams) -> Result<RegistrationResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("icp needs nonempty clouds".into()));
    }
    let reject = params.reject_dist;
    let mut state = IcpState::evaluate(*init, a, b, reject);
    let mut history = vec![state.truncated];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < params.max_iters {
        let pairs = state.inliers(reject);
        if pairs.len() < 3 {
            break;
        }
        let src: Vec<Vec3> = pairs.iter().map(|&(i, _)| a.points[i]).collect();
        let dst: Vec<Vec3> = pairs.iter().map(|&(_, j)| b.points[j]).collect();
        let Ok(step) = rigid_solve(&src, &dst) else {
            break;
        };
        iterations += 1;
        let next = IcpState::evaluate(step, a, b, reject);
        if next.truncated > state.truncated {
            converged = true;
            break;
        }
        let improvement = state.truncated - next.truncated;
        state = next;
        history.push(state.truncated);
        if improvement < params.tolerance {
            converged = true;
            break;
        }
    }
    let pairs = state.inliers(reject);
    let objective = pairs
        .iter()
        .map(|&(i, j)| (b.points[j] - state.transform.transform_point(&a.points[i])).norm_squared())
        .sum();
    Ok(RegistrationResult {
        transform: state.transform,
        objective,
        iterations,
        converged: converged && pairs.len() >= 3,
        inlier_count: pairs.len(),
        history,
        init_fallback: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: PoseSE3,
    /// Indices of `a` points within the inlier threshold under `transform`.
    pub inliers: Vec<usize>,
    /// Index of the winning hypothesis.
    pub hypothesis: usize,
}

fn count_inliers(t: &PoseSE3, a: &[Vec3], b: &[Vec3], threshold: f64) -> Vec<(usize, usize)> {
    let moved: Vec<Vec3> = a.iter().map(|p| t.transform_point(p)).collect();
    nearest_all(&moved, b)
        .into_iter()
        .enumerate()
        .filter(|(_, (_, d))| *d < threshold)
        .map(|(i, (j, _))| (i, j))
        .collect()
}

/// Best of `hypotheses` minimal 3-pair samples, scored by inlier count (ties: earliest hypothesis),
/// refit on the winning inlier set.
pub fn ransac_init(a: &PointCloud, b: &PointCloud, params: &RansacParams, seed: u64) -> Result<RansacResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::Degenerate(format!(
            "ransac needs 3 points per cloud, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let putative: Vec<(usize, Vec<usize>)> = a
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let mut near: Vec<(usize, f64)> = b
                .points
                .iter()
                .enumerate()
                .map(|(j, q)| (j, (p - q).norm()))
                .filter(|(_, d)| *d <= params.search_radius)
                .collect();
            near.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            near.truncate(params.candidates.max(1));
            (!near.is_empty()).then(|| (i, near.into_iter().map(|(j, _)| j).collect()))
        })
        .collect();
    if putative.len() < 3 {
        return Err(Error::Degenerate("fewer than 3 putative correspondences".into()));
    }

    let mut rng = rng::stream(seed, "ransac");
    let mut best: Option<(usize, usize, PoseSE3)> = None;
    for h in 0..params.hypotheses {
        let picks = rand::seq::index::sample(&mut rng, putative.len(), 3);
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = picks
            .iter()
            .map(|k| {
                let (i, cands) = &putative[k];
                let j = cands[rng.random_range(0..cands.len())];
                (a.points[*i], b.points[j])
            })
            .unzip();
        let Ok(t) = rigid_solve(&src, &dst) else {
            continue;
        };
        let score = count_inliers(&t, &a.points, &b.points, params.inlier_threshold).len();
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, h, t));
        }
    }
    let Some((score, hypothesis, mut transform)) = best.filter(|(s, _, _)| *s >= 3) else {
        return Err(Error::Degenerate("no hypothesis reached 3 inliers".into()));
    };

    let mut inliers = count_inliers(&transform, &a.points, &b.points, params.inlier_threshold);
    let src: Vec<Vec3> = inliers.iter().map(|&(i, _)| a.points[i]).collect();
    let dst: Vec<Vec3> = inliers.iter().map(|&(_, j)| b.points[j]).collect();
    if let Ok(refit) = rigid_solve(&src, &dst) {
        let refit_inliers = count_inliers(&refit, &a.points, &b.points, params.inlier_threshold);
        if refit_inliers.len() >= score {
            transform = refit;
            inliers = refit_inliers;
        }
    }
    Ok(RansacResult {
        transform,
        inliers: inliers.into_iter().map(|(i, _)| i).collect(),
        hypothesis,
    })
}

/// RANSAC initialisation followed by ICP; falls back to identity (flagged) when RANSAC fails.
pub fn ransac_icp(
    a: &PointCloud,
    b: &PointCloud,
    icp_params: &IcpParams,
    ransac_params: &RansacParams,
    seed: u64,
) -> Result<RegistrationResult> {
    match ransac_init(a, b, ransac_params, seed) {
        Ok(r) => icp(a, b, &r.transform, icp_params),
        Err(Error::Degenerate(_)) => {
            let mut res = icp(a, b, &PoseSE3::identity(), icp_params)?;
            res.init_fallback = true;
            Ok(res)
        }
        Err(e) => Err(e),
    }
}

/// Rotation of the current body frame in the previous one, from integrating the gyro
/// over `interval` seconds split evenly across the samples.
pub fn integrate_gyro(window: &[ImuSample], interval: f64) -> RotMat3 {
    let dt = interval / window.len() as f64;
    window
        .iter()
        .fold(RotMat3::identity(), |r, s| r * RotMat3::exp(&(s.gyro * dt)))
}

fn window_interval(a: &PointCloud, b: &PointCloud, window: &[ImuSample]) -> Option<f64> {
    let from_clouds = a.timestamp - b.timestamp;
    if from_clouds > 0.0 {
        return Some(from_clouds);
    }
    if window.len() >= 2 {
        let span = window[window.len() - 1].timestamp - window[0].timestamp;
        return Some(span * window.len() as f64 / (window.len() - 1) as f64);
    }
    None
}

/// ICP seeded with the gyro-integrated rotation (zero translation).
///
/// `a` is the current scan, `b` the previous one and `imu_window` the samples between them.
/// The interval comes from the cloud timestamps, or the sample spacing when those coincide.
/// An empty or unusable window falls back to identity and sets `init_fallback`.
pub fn imu_icp(a: &PointCloud, b: &PointCloud, imu_window: &[ImuSample], params: &IcpParams) -> Result<RegistrationResult> {
    let interval = (!imu_window.is_empty())
        .then(|| window_interval(a, b, imu_window))
        .flatten();
    match interval {
        Some(dt) => {
            let init = PoseSE3::new(integrate_gyro(imu_window, dt), Vec3::zeros());
            icp(a, b, &init, params)
        }
        None => {
            let mut res = icp(a, b, &PoseSE3::identity(), params)?;
            res.init_fallback = true;
            Ok(res)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Icp,
    RansacIcp,
    ImuIcp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Icp => "icp",
            Method::RansacIcp => "ransac-icp",
            Method::ImuIcp => "imu-icp",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icp" => Ok(Method::Icp),
            "ransac-icp" => Ok(Method::RansacIcp),
            "imu-icp" => Ok(Method::ImuIcp),
            _ => Err(Error::InvalidInput(format!(
                "unknown registration method `{s}` (icp, ransac-icp, imu-icp)"
            ))),
        }
    }
}

/// Register `curr` against `prev` with the chosen method.
pub fn register_pair(
    method: Method,
    curr: &PointCloud,
    prev: &PointCloud,
    imu_window: &[ImuSample],
    icp_params: &IcpParams,
    ransac_params: &RansacParams,
    seed: u64,
) -> Result<RegistrationResult> {
    match method {
        Method::Icp => icp(curr, prev, &PoseSE3::identity(), icp_params),
        Method::RansacIcp => ransac_icp(curr, prev, icp_params, ransac_params, seed),
        Method::ImuIcp => imu_icp(curr, prev, imu_window, icp_params),
    }
}

/// Which scan of each frame to register.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanSource {
    Radar,
    Dense,
}

impl fmt::Display for ScanSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScanSource::Radar => "radar",
            ScanSource::Dense => "dense",
        })
    }
}

impl FromStr for ScanSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radar" => Ok(ScanSource::Radar),
            "dense" => Ok(ScanSource::Dense),
            _ => Err(Error::InvalidInput(format!("unknown scan source `{s}` (radar, dense)"))),
        }
    }
}

/// Registration outcome for one consecutive frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    /// Pose of the current frame in the previous one; identity when `fallback` is set.
    pub relative: PoseSE3,
    /// NaN when registration could not run at all.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub inlier_count: usize,
    /// Correspondences starved (fewer than 3 inliers) or a cloud was empty; identity was used.
    pub fallback: bool,
    /// The method's own initialisation was unavailable (RANSAC failure, unusable IMU window).
    pub init_fallback: bool,
}

/// Register every consecutive pair of `frames`.
///
/// Starved pairs do not abort the run: they contribute an identity step with `fallback` set.
/// RANSAC draws for pair `k` use the stream `ransac/{k}` of `seed`.
pub fn register_sequence(
    frames: &[SensorFrame],
    source: ScanSource,
    method: Method,
    icp_params: &IcpParams,
    ransac_params: &RansacParams,
    seed: u64,
) -> Result<Vec<PairOutcome>> {
    let scan = |k: usize| -> Result<&PointCloud> {
        match source {
            ScanSource::Radar => Ok(&frames[k].cloud),
            ScanSource::Dense => frames[k]
                .dense
                .as_ref()
                .ok_or_else(|| Error::InvalidInput(format!("frame {k} has no dense scan"))),
        }
    };
    (1..frames.len())
        .map(|k| {
            let (curr, prev) = (scan(k)?, scan(k - 1)?);
            let pair_seed = crate::rng::stream_seed(seed, &format!("ransac/{k}"));
            match register_pair(method, curr, prev, &frames[k].imu_window, icp_params, ransac_params, pair_seed) {
                Ok(r) if r.inlier_count >= 3 => Ok(PairOutcome {
                    relative: r.transform,
                    objective: r.objective,
                    iterations: r.iterations,
                    converged: r.converged,
                    inlier_count: r.inlier_count,
                    fallback: false,
                    init_fallback: r.init_fallback,
                }),
                Ok(r) => Ok(PairOutcome {
                    relative: PoseSE3::identity(),
                    objective: r.objective,
                    iterations: r.iterations,
                    converged: false,
                    inlier_count: r.inlier_count,
                    fallback: true,
                    init_fallback: r.init_fallback,
                }),
                Err(Error::InvalidInput(_)) | Err(Error::Degenerate(_)) => Ok(PairOutcome {
                    relative: PoseSE3::identity(),
                    objective: f64::NAN,
                    iterations: 0,
                    converged: false,
                    inlier_count: 0,
                    fallback: true,
                    init_fallback: false,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}
