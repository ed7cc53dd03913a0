//! Synthetic indoor worlds, scans, IMU streams and ground-truth trajectories.

mod imu;
mod radar;
mod sequence;
mod world;

pub use imu::{synth_imu, ImuBias, ImuConfig, GRAVITY};
pub use radar::{degrade_to_radar, RadarNoiseModel, GHOST_RANGE_FACTOR};
pub use sequence::{generate_sequence, imu_window, SimConfig, SimulatedSequence};
pub use world::{raycast_scan, raycast_scan_jittered, Aabb, ScanPattern, Surface, WorldModel};

use crate::geometry::{EulerAngles, PoseSE3, Vec3};
use crate::{Error, Result};

/// Piecewise path through waypoints: linear in translation, slerp in rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub waypoints: Vec<PoseSE3>,
    pub frame_rate: f64,
    /// Linear speed in m/s.
    pub speed: f64,
    /// Rotation rate cap in rad/s; a segment lasts long enough to respect both.
    pub angular_speed: f64,
}

impl TrajectorySpec {
    pub fn new(waypoints: Vec<PoseSE3>, frame_rate: f64, speed: f64) -> Result<Self> {
        let spec = Self {
            waypoints,
            frame_rate,
            speed,
            angular_speed: 0.5,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "trajectory needs at least 2 waypoints, got {}",
                self.waypoints.len()
            )));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.frame_rate) || !positive(self.speed) || !positive(self.angular_speed) {
            return Err(Error::InvalidInput(
                "frame rate, speed and angular speed must be positive".into(),
            ));
        }
        Ok(())
    }

    fn segment_durations(&self) -> Vec<f64> {
        self.waypoints
            .windows(2)
            .map(|w| {
                let dist = (w[1].translation - w[0].translation).norm();
                let angle = (w[0].rotation.transpose() * w[1].rotation).angle();
                (dist / self.speed).max(angle / self.angular_speed)
            })
            .collect()
    }

    pub fn duration(&self) -> f64 {
        self.segment_durations().iter().sum()
    }

    /// `ceil(duration · rate) + 1` frames, the first at t = 0. The last frame is held at
    /// the final waypoint when the duration is not a whole number of frame intervals.
    pub fn frame_count(&self) -> usize {
        (self.duration() * self.frame_rate - 1e-9).ceil().max(0.0) as usize + 1
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.frame_count()).map(|k| k as f64 / self.frame_rate).collect()
    }

    /// Pose at time `t`, clamped to the path ends.
    pub fn pose_at(&self, t: f64) -> PoseSE3 {
        let durations = self.segment_durations();
        let mut start = 0.0;
        for (i, &d) in durations.iter().enumerate() {
            let (a, b) = (&self.waypoints[i], &self.waypoints[i + 1]);
            if t < start + d {
                let s = ((t - start) / d).clamp(0.0, 1.0);
                return PoseSE3::new(
                    a.rotation.slerp(&b.rotation, s),
                    a.translation + (b.translation - a.translation) * s,
                );
            }
            start += d;
        }
        if t <= 0.0 {
            self.waypoints[0]
        } else {
            *self.waypoints.last().expect("validated")
        }
    }

    /// Waypoints from `x y z [yaw_deg | roll_deg pitch_deg yaw_deg]` entries separated by `;`.
    pub fn parse_waypoints(text: &str) -> Result<Vec<PoseSE3>> {
        text.split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|entry| {
                let v: Vec<f64> = entry
                    .split_whitespace()
                    .map(|f| {
                        f.parse::<f64>()
                            .map_err(|_| Error::InvalidInput(format!("bad waypoint field `{f}` in `{entry}`")))
                    })
                    .collect::<Result<_>>()?;
                let t = match v.len() {
                    3 | 4 | 6 => Vec3::new(v[0], v[1], v[2]),
                    n => {
                        return Err(Error::InvalidInput(format!(
                            "waypoint `{entry}` has {n} fields; expected 3, 4 or 6"
                        )))
                    }
                };
                let r = match v.len() {
                    4 => EulerAngles::new(0.0, 0.0, v[3].to_radians()),
                    6 => EulerAngles::new(v[3].to_radians(), v[4].to_radians(), v[5].to_radians()),
                    _ => EulerAngles::ZERO,
                };
                Ok(PoseSE3::from_euler(t, r))
            })
            .collect()
    }

    pub fn format_waypoints(waypoints: &[PoseSE3]) -> String {
        waypoints
            .iter()
            .map(|w| {
                let e = w.rotation.to_euler().angles;
                format!(
                    "{} {} {} {} {} {}",
                    w.translation.x,
                    w.translation.y,
                    w.translation.z,
                    e.roll.to_degrees(),
                    e.pitch.to_degrees(),
                    e.yaw.to_degrees()
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_frame_count() {
        let spec = TrajectorySpec::new(
            vec![
                PoseSE3::from_translation(Vec3::new(-2.0, 0.0, 1.0)),
                PoseSE3::from_translation(Vec3::new(2.0, 0.0, 1.0)),
            ],
            20.0,
            1.0,
        )
        .unwrap();
        assert_eq!(spec.frame_count(), 81);
        let mid = spec.pose_at(2.0);
        assert!((mid.translation - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(spec.pose_at(100.0), spec.waypoints[1]);
    }

    #[test]
    fn rotation_only_segment_uses_angular_speed() {
        let spec = TrajectorySpec::new(
            vec![
                PoseSE3::identity(),
                PoseSE3::from_euler(Vec3::zeros(), EulerAngles::new(0.0, 0.0, 1.0)),
            ],
            10.0,
            1.0,
        )
        .unwrap();
        assert!((spec.duration() - 2.0).abs() < 1e-12);
        let half = spec.pose_at(1.0).rotation.to_euler().angles.yaw;
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn waypoint_text_round_trip() {
        let w = TrajectorySpec::parse_waypoints("0 0 1; 1 2 1 90; 1 2 1 0 0 45").unwrap();
        assert_eq!(w.len(), 3);
        assert!((w[1].rotation.to_euler().angles.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let again = TrajectorySpec::parse_waypoints(&TrajectorySpec::format_waypoints(&w)).unwrap();
        for (a, b) in w.iter().zip(&again) {
            assert!(a.max_abs_diff(b) < 1e-12);
        }
        assert!(TrajectorySpec::parse_waypoints("1 2").is_err());
        assert!(TrajectorySpec::new(w[..1].to_vec(), 20.0, 1.0).is_err());
    }
}
