use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{PoseSE3, Vec3};
use crate::sensing::ImuSample;
use crate::{Error, Result};

/// World-frame gravitational acceleration (z up).
pub const GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuConfig {
    pub rate: f64,
    pub gyro_noise: f64,
    pub accel_noise: f64,
    /// Standard deviation of the constant per-sequence gyro bias.
    pub gyro_bias_sigma: f64,
    pub accel_bias_sigma: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        Self {
            rate: 100.0,
            gyro_noise: 0.005,
            accel_noise: 0.05,
            gyro_bias_sigma: 0.002,
            accel_bias_sigma: 0.02,
        }
    }
}

impl ImuConfig {
    /// Noise-free, bias-free sensor at `rate`.
    pub fn ideal(rate: f64) -> Self {
        Self {
            rate,
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_bias_sigma: 0.0,
            accel_bias_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rate > 0.0
            && self.rate.is_finite()
            && [self.gyro_noise, self.accel_noise, self.gyro_bias_sigma, self.accel_bias_sigma]
                .iter()
                .all(|s| *s >= 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid IMU configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuBias {
    pub gyro: Vec3,
    pub accel: Vec3,
}

impl ImuBias {
    pub fn draw<R: Rng>(cfg: &ImuConfig, rng: &mut R) -> Self {
        Self {
            gyro: gaussian3(cfg.gyro_bias_sigma, rng),
            accel: gaussian3(cfg.accel_bias_sigma, rng),
        }
    }
}

fn gaussian3<R: Rng>(sigma: f64, rng: &mut R) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("valid sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Synthesize IMU readings from poses sampled at `cfg.rate`, the first at `t0`.
///
/// Gyro is the body-frame rate from `log(R_aᵀ R_b)` over neighbouring samples
/// (central in the interior, one-sided at the ends). Accel is the specific force
/// `Rᵀ(p̈ − g)` from central second differences, so a resting sensor reads `−g`.
pub fn synth_imu<R: Rng>(
    traj: &[PoseSE3],
    t0: f64,
    cfg: &ImuConfig,
    bias: &ImuBias,
    rng: &mut R,
) -> Result<Vec<ImuSample>> {
    cfg.validate()?;
    let n = traj.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("IMU synthesis needs at least 2 poses, got {n}")));
    }
    let h = 1.0 / cfg.rate;
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let (lo, hi) = (j.saturating_sub(1), (j + 1).min(n - 1));
        let span = (hi - lo) as f64 * h;
        let omega = (traj[lo].rotation.transpose() * traj[hi].rotation).log() / span;
        let acc_world = if n >= 3 {
            let c = j.clamp(1, n - 2);
            (traj[c + 1].translation - 2.0 * traj[c].translation + traj[c - 1].translation) / (h * h)
        } else {
            Vec3::zeros()
        };
        let specific = traj[j].rotation.transpose() * (acc_world - GRAVITY);
        out.push(ImuSample {
            timestamp: t0 + j as f64 * h,
            gyro: omega + bias.gyro + gaussian3(cfg.gyro_noise, rng),
            accel: specific + bias.accel + gaussian3(cfg.accel_noise, rng),
        });
    }
    Ok(out)
}
