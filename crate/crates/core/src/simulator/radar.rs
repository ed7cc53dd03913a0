//! Degrades a dense scan into a sparse, noisy radar-like cloud.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::Vec3;
use crate::sensing::PointCloud;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarNoiseModel {
    pub keep_probability: f64,
    /// Chance that a kept return spawns a multipath ghost further along its ray.
    pub ghost_probability: f64,
    pub range_sigma: f64,
    pub angular_sigma_az: f64,
    pub angular_sigma_el: f64,
    pub max_points: usize,
}

/// Ghost range multiplier is drawn uniformly from this interval.
pub const GHOST_RANGE_FACTOR: (f64, f64) = (1.2, 2.0);

impl Default for RadarNoiseModel {
    /// 4 cm range jitter; angular jitter of a uniform error over a 15° × 58° resolution cell.
    fn default() -> Self {
        let uniform_sigma = |deg: f64| deg.to_radians() / 12f64.sqrt();
        Self {
            keep_probability: 0.15,
            ghost_probability: 0.1,
            range_sigma: 0.04,
            angular_sigma_az: uniform_sigma(15.0),
            angular_sigma_el: uniform_sigma(58.0),
            max_points: 120,
        }
    }
}

impl RadarNoiseModel {
    /// Noise-free model that keeps every point.
    pub fn identity(max_points: usize) -> Self {
        Self {
            keep_probability: 1.0,
            ghost_probability: 0.0,
            range_sigma: 0.0,
            angular_sigma_az: 0.0,
            angular_sigma_el: 0.0,
            max_points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let sigma = |s: f64| s >= 0.0 && s.is_finite();
        if prob(self.keep_probability)
            && prob(self.ghost_probability)
            && sigma(self.range_sigma)
            && sigma(self.angular_sigma_az)
            && sigma(self.angular_sigma_el)
            && self.max_points > 0
        {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid radar noise model {self:?}")))
        }
    }

    fn is_noise_free(&self) -> bool {
        self.range_sigma == 0.0 && self.angular_sigma_az == 0.0 && self.angular_sigma_el == 0.0
    }
}

fn jitter(p: &Vec3, noise: &RadarNoiseModel, rng: &mut ChaCha8Rng) -> Vec3 {
    let r = p.norm();
    if r == 0.0 {
        return *p;
    }
    let az = p.y.atan2(p.x);
    let el = (p.z / r).clamp(-1.0, 1.0).asin();
    let mut draw = |sigma: f64| {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
        } else {
            0.0
        }
    };
    let r = (r + draw(noise.range_sigma)).max(1e-3);
    let az = az + draw(noise.angular_sigma_az);
    let el = el + draw(noise.angular_sigma_el);
    Vec3::new(r * el.cos() * az.cos(), r * el.cos() * az.sin(), r * el.sin())
}

/// Thin, jitter and pollute a dense cloud. Output never exceeds `max_points`.
///
/// Steps: Bernoulli keep per point; uniform subsample to `max_points`
/// (order preserved); range/angle jitter; then ghosts appended while room remains.
pub fn degrade_to_radar(dense: &PointCloud, noise: &RadarNoiseModel, rng_seed: u64) -> Result<PointCloud> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut kept: Vec<usize> = (0..dense.len())
        .filter(|_| rng.random::<f64>() < noise.keep_probability)
        .collect();
    if kept.len() > noise.max_points {
        let mut pick = index::sample(&mut rng, kept.len(), noise.max_points).into_vec();
        pick.sort_unstable();
        kept = pick.into_iter().map(|i| kept[i]).collect();
    }

    let mut points: Vec<Vec3> = kept
        .iter()
        .map(|&i| {
            if noise.is_noise_free() {
                dense.points[i]
            } else {
                jitter(&dense.points[i], noise, &mut rng)
            }
        })
        .collect();
    let mut intensities: Option<Vec<f64>> = dense
        .intensities
        .as_ref()
        .map(|w| kept.iter().map(|&i| w[i]).collect());

    if noise.ghost_probability > 0.0 {
        for k in 0..kept.len() {
            if rng.random::<f64>() >= noise.ghost_probability {
                continue;
            }
            let factor = rng.random_range(GHOST_RANGE_FACTOR.0..GHOST_RANGE_FACTOR.1);
            if points.len() >= noise.max_points {
                break;
            }
            points.push(points[k] * factor);
            if let Some(w) = intensities.as_mut() {
                w.push(w[k]);
            }
        }
    }

    Ok(PointCloud {
        points,
        intensities,
        timestamp: dense.timestamp,
    })
}
