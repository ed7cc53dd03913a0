use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::evaluation::{compose_trajectory, Trajectory};
use egomotion::neural::checkpoint::Checkpoint;
use egomotion::neural::dataset::{encode_frames, subsample_frames};
use egomotion::neural::train::infer_sequence;
use egomotion::neural::Profile;
use egomotion::simulator::SimulatedSequence;
use egomotion::PoseSE3;

use super::{create_dir, existing_file, load_sequence, write_meta};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

/// Network trajectory over every `subsample`-th frame, starting at that frame's ground truth
/// (identity without ground truth).
pub fn infer(ck: &Checkpoint, seq: &SimulatedSequence, subsample: usize, chunk: usize) -> CliResult<Trajectory> {
    let frames = subsample_frames(&seq.frames, subsample)?;
    let encoded = encode_frames(&frames, &ck.network.config)?;
    let rels = infer_sequence(&ck.network, &encoded, &ck.normalizer, chunk)?;
    let start = frames[0].ground_truth.unwrap_or_else(PoseSE3::identity);
    Ok(compose_trajectory(start, &rels, &encoded.timestamps)?)
}

pub fn run(s: &Settings) -> CliResult<()> {
    let ck_path = existing_file(&s.require::<String>("checkpoint")?)?;
    let sequence = PathBuf::from(s.require::<String>("sequence")?);
    let out = PathBuf::from(s.require::<String>("out")?);
    let subsample: usize = s.get("subsample", 1)?;
    if subsample == 0 {
        return Err(CliError::usage("subsample must be at least 1"));
    }
    let profile: Option<Profile> = s.opt::<String>("profile")?.map(|p| p.parse()).transpose().map_err(as_usage)?;
    let ck = Checkpoint::load(&ck_path)?;
    if let Some(p) = profile {
        if p != ck.network.config.profile {
            return Err(CliError::usage(format!(
                "profile {p} does not match the checkpoint's profile {}",
                ck.network.config.profile
            )));
        }
    }
    let default_chunk = ck.meta.get_or("train.subsequence_length", 16usize).unwrap_or(16);
    let chunk: usize = s.get("chunk", default_chunk)?;
    if chunk == 0 {
        return Err(CliError::usage("chunk must be at least 1"));
    }
    s.finish()?;

    let seq = load_sequence(&sequence)?;
    let traj = infer(&ck, &seq, subsample, chunk)?;
    create_dir(&out)?;
    traj.save(&out.join("trajectory.txt"))?;
    let mut extra = KeyValues::new();
    extra.set("entries", traj.len());
    extra.set("profile", ck.network.config.profile);
    if let Some(h) = ck.meta.get("input_hash") {
        extra.set("checkpoint.input_hash", h);
    }
    write_meta(&out, s, &["out"], extra)?;
    println!("wrote {} poses to {}", traj.len(), out.join("trajectory.txt").display());
    Ok(())
}
