use std::path::Path;

use super::imu::{synth_imu, ImuBias, ImuConfig};
use super::radar::{degrade_to_radar, RadarNoiseModel};
use super::world::{raycast_scan_jittered, ScanPattern, WorldModel};
use super::TrajectorySpec;
use crate::config::KeyValues;
use crate::evaluation::Trajectory;
use crate::rng;
use crate::sensing::{imu_to_text, load_imu, ImuSample, PointCloud, SensorFrame};
use crate::{Error, Result};

const WINDOW_EPS: f64 = 1e-9;

/// Everything besides the world and trajectory that shapes a simulated sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimConfig {
    pub pattern: ScanPattern,
    pub noise: RadarNoiseModel,
    pub imu: ImuConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSequence {
    pub frames: Vec<SensorFrame>,
    pub world: WorldModel,
    pub seed: u64,
    pub frame_rate: f64,
    /// Full IMU stream; frame windows are slices of it.
    pub imu: Vec<ImuSample>,
    pub meta: KeyValues,
}

/// IMU samples with timestamp in `(t_prev, t_curr]`.
pub fn imu_window(samples: &[ImuSample], t_prev: f64, t_curr: f64) -> Vec<ImuSample> {
    samples
        .iter()
        .filter(|s| s.timestamp > t_prev + WINDOW_EPS && s.timestamp <= t_curr + WINDOW_EPS)
        .copied()
        .collect()
}

fn build_meta(spec: &TrajectorySpec, cfg: &SimConfig, seed: u64, n_frames: usize) -> KeyValues {
    let mut m = KeyValues::new();
    m.set("seed", seed);
    m.set("frames", n_frames);
    m.set("trajectory.frame_rate", spec.frame_rate);
    m.set("trajectory.speed", spec.speed);
    m.set("trajectory.angular_speed", spec.angular_speed);
    m.set("trajectory.waypoints", TrajectorySpec::format_waypoints(&spec.waypoints));
    m.set("trajectory.duration", spec.duration());
    m.set("scan.n_az", cfg.pattern.n_az);
    m.set("scan.n_el", cfg.pattern.n_el);
    m.set("scan.h_fov_deg", cfg.pattern.h_fov.to_degrees());
    m.set("scan.v_fov_deg", cfg.pattern.v_fov.to_degrees());
    m.set("scan.max_range", cfg.pattern.max_range);
    m.set("radar.keep_probability", cfg.noise.keep_probability);
    m.set("radar.ghost_probability", cfg.noise.ghost_probability);
    m.set("radar.range_sigma", cfg.noise.range_sigma);
    m.set("radar.angular_sigma_az", cfg.noise.angular_sigma_az);
    m.set("radar.angular_sigma_el", cfg.noise.angular_sigma_el);
    m.set("radar.max_points", cfg.noise.max_points);
    m.set("imu.rate", cfg.imu.rate);
    m.set("imu.gyro_noise", cfg.imu.gyro_noise);
    m.set("imu.accel_noise", cfg.imu.accel_noise);
    m.set("imu.gyro_bias_sigma", cfg.imu.gyro_bias_sigma);
    m.set("imu.accel_bias_sigma", cfg.imu.accel_bias_sigma);
    m
}

/// Simulate a full sequence: ground truth, dense and radar scans, and IMU windows.
///
/// Radar returns beyond the sensor range (or the world diagonal) are dropped.
pub fn generate_sequence(world: &WorldModel, spec: &TrajectorySpec, cfg: &SimConfig, seed: u64) -> Result<SimulatedSequence> {
    world.validate()?;
    spec.validate()?;
    cfg.noise.validate()?;
    cfg.imu.validate()?;
    if cfg.imu.rate <= spec.frame_rate {
        return Err(Error::InvalidInput(format!(
            "IMU rate {} must exceed frame rate {}",
            cfg.imu.rate, spec.frame_rate
        )));
    }
    let bounds = world.bounds().expect("validated world is nonempty");
    let range_cap = cfg.pattern.max_range.min(bounds.diagonal());

    let times = spec.frame_times();
    let end = *times.last().expect("at least one frame");
    let n_imu = (end * cfg.imu.rate - WINDOW_EPS).ceil().max(0.0) as usize + 1;
    let imu_poses: Vec<_> = (0..n_imu.max(2))
        .map(|j| spec.pose_at(j as f64 / cfg.imu.rate))
        .collect();
    let bias = ImuBias::draw(&cfg.imu, &mut rng::stream(seed, "imu.bias"));
    let imu = synth_imu(&imu_poses, 0.0, &cfg.imu, &bias, &mut rng::stream(seed, "imu.noise"))?;

    let mut frames = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let pose = spec.pose_at(t);
        let dense = raycast_scan_jittered(world, &pose, &cfg.pattern, t, rng::stream_seed(seed, &format!("scan/{k}")))
            .map_err(|e| Error::OutOfBounds(format!("trajectory leaves the world at frame {k} (t = {t}): {e}")))?;
        let mut radar = degrade_to_radar(&dense, &cfg.noise, rng::stream_seed(seed, &format!("radar/{k}")))?;
        let keep: Vec<bool> = radar.points.iter().map(|p| p.norm() <= range_cap).collect();
        if keep.iter().any(|k| !k) {
            let mut it = keep.iter();
            radar.points.retain(|_| *it.next().expect("same length"));
            if let Some(w) = radar.intensities.as_mut() {
                let mut it = keep.iter();
                w.retain(|_| *it.next().expect("same length"));
            }
        }
        let window = if k == 0 {
            Vec::new()
        } else {
            imu_window(&imu, times[k - 1], t)
        };
        frames.push(SensorFrame {
            cloud: radar,
            dense: Some(dense),
            imu_window: window,
            ground_truth: Some(pose),
        });
    }

    Ok(SimulatedSequence {
        meta: build_meta(spec, cfg, seed, frames.len()),
        frames,
        world: world.clone(),
        seed,
        frame_rate: spec.frame_rate,
        imu,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl SimulatedSequence {
    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(SensorFrame::timestamp).collect()
    }

    /// Ground-truth trajectory; errors if any frame lacks ground truth.
    pub fn ground_truth(&self) -> Result<Trajectory> {
        let entries = self
            .frames
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.ground_truth
                    .map(|p| (f.timestamp(), p))
                    .ok_or_else(|| Error::InvalidInput(format!("frame {k} has no ground truth")))
            })
            .collect::<Result<Vec<_>>>()?;
        Trajectory::new(entries)
    }

    /// Write `frames/NNNNN.cloud`, `frames/NNNNN.dense`, `imu.txt`, `groundtruth.txt`,
    /// `meta.txt` and `world.txt` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for (k, f) in self.frames.iter().enumerate() {
            f.cloud.save(&frames_dir.join(format!("{k:05}.cloud")))?;
            if let Some(d) = &f.dense {
                d.save(&frames_dir.join(format!("{k:05}.dense")))?;
            }
        }
        write(&dir.join("imu.txt"), &imu_to_text(&self.imu))?;
        if self.frames.iter().all(|f| f.ground_truth.is_some()) {
            self.ground_truth()?.save(&dir.join("groundtruth.txt"))?;
        }
        write(&dir.join("meta.txt"), &self.meta.to_text())?;
        if !self.world.surfaces.is_empty() {
            write(&dir.join("world.txt"), &self.world.to_text())?;
        }
        Ok(())
    }

    /// Read a sequence directory. Dense scans, ground truth and the world file are optional.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.txt");
        let meta = if meta_path.exists() {
            KeyValues::load(&meta_path)?
        } else {
            KeyValues::new()
        };
        let frames_dir = dir.join("frames");
        let listing = std::fs::read_dir(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        let mut cloud_paths: Vec<_> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "cloud"))
            .collect();
        cloud_paths.sort();
        if cloud_paths.is_empty() {
            return Err(Error::InvalidInput(format!("no frames in {}", frames_dir.display())));
        }

        let imu_path = dir.join("imu.txt");
        let imu = if imu_path.exists() { load_imu(&imu_path)? } else { Vec::new() };
        let gt_path = dir.join("groundtruth.txt");
        let gt = if gt_path.exists() {
            Some(Trajectory::load(&gt_path)?)
        } else {
            None
        };
        if let Some(gt) = &gt {
            if gt.len() != cloud_paths.len() {
                return Err(Error::InvalidInput(format!(
                    "{} frames but {} ground-truth entries",
                    cloud_paths.len(),
                    gt.len()
                )));
            }
        }

        let mut frames: Vec<SensorFrame> = Vec::with_capacity(cloud_paths.len());
        for (k, path) in cloud_paths.iter().enumerate() {
            let cloud = PointCloud::load(path)?;
            let dense_path = path.with_extension("dense");
            let dense = if dense_path.exists() {
                Some(PointCloud::load(&dense_path)?)
            } else {
                None
            };
            let imu_window = match frames.last() {
                Some(prev) => imu_window(&imu, prev.timestamp(), cloud.timestamp),
                None => Vec::new(),
            };
            frames.push(SensorFrame {
                ground_truth: gt.as_ref().map(|g| g.entries()[k].1),
                cloud,
                dense,
                imu_window,
            });
        }

        let world_path = dir.join("world.txt");
        let world = if world_path.exists() {
            WorldModel::load(&world_path)?
        } else {
            WorldModel::default()
        };
        let frame_rate = match meta.get("trajectory.frame_rate") {
            Some(_) => meta.get_or("trajectory.frame_rate", 0.0)?,
            None if frames.len() >= 2 => 1.0 / (frames[1].timestamp() - frames[0].timestamp()),
            None => 0.0,
        };
        Ok(Self {
            seed: meta.get_or("seed", 0)?,
            frame_rate,
            frames,
            world,
            imu,
            meta,
        })
    }
}
