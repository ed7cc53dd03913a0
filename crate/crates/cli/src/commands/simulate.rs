use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::simulator::{
    generate_sequence, ImuConfig, RadarNoiseModel, ScanPattern, SimConfig, SimulatedSequence, TrajectorySpec,
    WorldModel,
};

use super::{create_dir, existing_file};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

pub const DEFAULT_WAYPOINTS: &str = "-2 -0.5 1.2 0; 2 -0.5 1.2 0";

/// Everything needed to generate a sequence, resolved from settings.
pub struct SimSetup {
    pub world: WorldModel,
    pub spec: TrajectorySpec,
    pub config: SimConfig,
}

pub fn sim_setup(s: &Settings) -> CliResult<SimSetup> {
    let world = match s.opt::<String>("world")? {
        Some(path) => WorldModel::load(&existing_file(&path)?)?,
        None => {
            let room: String = s.get("room", "8 6 3".to_string())?;
            let dims: Vec<f64> = room
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::usage(format!("room must be three numbers, got `{room}`")))?;
            match dims.as_slice() {
                [x, y, z] if *x > 0.0 && *y > 0.0 && *z > 0.0 => WorldModel::furnished_room(*x, *y, *z),
                _ => return Err(CliError::usage(format!("room must be three positive numbers, got `{room}`"))),
            }
        }
    };
    let waypoints = TrajectorySpec::parse_waypoints(&s.get("waypoints", DEFAULT_WAYPOINTS.to_string())?).map_err(as_usage)?;
    let mut spec = TrajectorySpec::new(waypoints, s.get("frame_rate", 20.0)?, s.get("speed", 1.0)?).map_err(as_usage)?;
    spec.angular_speed = s.get("angular_speed", spec.angular_speed)?;
    spec.validate().map_err(as_usage)?;

    let p = ScanPattern::default();
    let pattern = ScanPattern {
        n_az: s.get("scan.n_az", p.n_az)?,
        n_el: s.get("scan.n_el", p.n_el)?,
        h_fov: s.get("scan.h_fov_deg", p.h_fov.to_degrees())?.to_radians(),
        v_fov: s.get("scan.v_fov_deg", p.v_fov.to_degrees())?.to_radians(),
        max_range: s.get("scan.max_range", p.max_range)?,
    };
    let n = RadarNoiseModel::default();
    let noise = RadarNoiseModel {
        keep_probability: s.get("radar.keep_probability", n.keep_probability)?,
        ghost_probability: s.get("radar.ghost_probability", n.ghost_probability)?,
        range_sigma: s.get("radar.range_sigma", n.range_sigma)?,
        angular_sigma_az: s.get("radar.angular_sigma_az", n.angular_sigma_az)?,
        angular_sigma_el: s.get("radar.angular_sigma_el", n.angular_sigma_el)?,
        max_points: s.get("radar.max_points", n.max_points)?,
    };
    noise.validate().map_err(as_usage)?;
    let i = ImuConfig::default();
    let imu = ImuConfig {
        rate: s.get("imu.rate", i.rate)?,
        gyro_noise: s.get("imu.gyro_noise", i.gyro_noise)?,
        accel_noise: s.get("imu.accel_noise", i.accel_noise)?,
        gyro_bias_sigma: s.get("imu.gyro_bias_sigma", i.gyro_bias_sigma)?,
        accel_bias_sigma: s.get("imu.accel_bias_sigma", i.accel_bias_sigma)?,
    };
    imu.validate().map_err(as_usage)?;
    Ok(SimSetup {
        world,
        spec,
        config: SimConfig { pattern, noise, imu },
    })
}

pub fn simulate(setup: &SimSetup, seed: u64) -> CliResult<SimulatedSequence> {
    generate_sequence(&setup.world, &setup.spec, &setup.config, seed).map_err(|e| match e {
        egomotion::Error::OutOfBounds(_) | egomotion::Error::InvalidInput(_) => as_usage(e),
        other => other.into(),
    })
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = PathBuf::from(s.require::<String>("out")?);
    let seed: u64 = s.get("seed", 0)?;
    let setup = sim_setup(s)?;
    s.finish()?;

    let mut seq = simulate(&setup, seed)?;
    let echo = super::meta(s, &["out"], KeyValues::new());
    for (k, v) in echo.iter() {
        seq.meta.set(k.clone(), v);
    }
    create_dir(&out)?;
    seq.save(&out)?;
    println!("wrote {} frames to {}", seq.frames.len(), out.display());
    Ok(())
}
