use std::fmt::Write as _;
use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::neural::dataset::{encode_frames, panorama_spec, subsample_frames, Normalizer};
use egomotion::neural::{NetworkConfig, Profile};
use egomotion::sensing::PanoramicImage;

use super::{create_dir, load_sequence, write_file, write_meta};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

pub fn run(s: &Settings) -> CliResult<()> {
    let sequence = PathBuf::from(s.require::<String>("sequence")?);
    let out = PathBuf::from(s.require::<String>("out")?);
    let profile: Profile = s.get::<String>("profile", "toy".into())?.parse().map_err(as_usage)?;
    let subsample: usize = s.get("subsample", 1)?;
    if subsample == 0 {
        return Err(CliError::usage("subsample must be at least 1"));
    }
    s.finish()?;

    let seq = load_sequence(&sequence)?;
    let frames = subsample_frames(&seq.frames, subsample)?;
    let mut config = NetworkConfig::profile(profile);
    config.use_depth = frames.iter().all(|f| f.dense.is_some());
    let encoded = encode_frames(&frames, &config)?;
    let norm = Normalizer::fit(std::slice::from_ref(&encoded));
    let spec = panorama_spec(&config);

    create_dir(&out.join("radar"))?;
    for (k, values) in encoded.radar.iter().enumerate() {
        let img = PanoramicImage { spec, values: values.clone() };
        write_file(&out.join("radar").join(format!("{k:05}.pano")), &img.to_text())?;
    }
    if let Some(depth) = &encoded.depth {
        create_dir(&out.join("depth"))?;
        for (k, values) in depth.iter().enumerate() {
            let img = PanoramicImage { spec, values: values.clone() };
            write_file(&out.join("depth").join(format!("{k:05}.pano")), &img.to_text())?;
        }
    }
    let mut imu = String::from("pair,row,ax,ay,az,gx,gy,gz\n");
    for (k, window) in encoded.imu.iter().enumerate() {
        for (j, row) in window.iter().enumerate() {
            let fields: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(imu, "{},{j},{}", k + 1, fields.join(",")).expect("write to string");
        }
    }
    write_file(&out.join("imu.csv"), &imu)?;

    let mut extra = KeyValues::new();
    extra.set("frames", encoded.timestamps.len());
    extra.set("rows", spec.rows);
    extra.set("cols", spec.cols);
    extra.set("imu_window", config.imu_window);
    extra.set("norm.radar_mean", norm.radar_mean);
    if encoded.depth.is_some() {
        extra.set("norm.depth_mean", norm.depth_mean);
    }
    extra.set("norm.imu_mean", norm.imu_mean);
    write_meta(&out, s, &["out"], extra)?;
    println!("encoded {} frames ({}x{}) into {}", encoded.timestamps.len(), spec.rows, spec.cols, out.display());
    Ok(())
}
