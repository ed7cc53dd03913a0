use std::fmt::Write as _;
use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::evaluation::Trajectory;
use egomotion::registration::{register_sequence, IcpParams, Method, PairOutcome, RansacParams, ScanSource};
use egomotion::simulator::SimulatedSequence;
use egomotion::PoseSE3;

use super::{create_dir, load_sequence, write_file, write_meta};
use crate::error::{as_usage, CliResult};
use crate::settings::Settings;

pub struct RegisterSetup {
    pub method: Method,
    pub source: ScanSource,
    pub icp: IcpParams,
    pub ransac: RansacParams,
}

/// Registration parameters; `method` is read only when `with_method` is set.
pub fn register_setup(s: &Settings, with_method: bool) -> CliResult<RegisterSetup> {
    let method = if with_method {
        s.get::<String>("method", "icp".into())?.parse().map_err(as_usage)?
    } else {
        Method::Icp
    };
    let source: ScanSource = s.get::<String>("source", "radar".into())?.parse().map_err(as_usage)?;
    let i = IcpParams::default();
    let icp = IcpParams {
        max_iters: s.get("icp.max_iters", i.max_iters)?,
        tolerance: s.get("icp.tolerance", i.tolerance)?,
        reject_dist: s.get("icp.reject_dist", i.reject_dist)?,
    };
    let r = RansacParams::default();
    let ransac = RansacParams {
        hypotheses: s.get("ransac.hypotheses", r.hypotheses)?,
        inlier_threshold: s.get("ransac.inlier_threshold", r.inlier_threshold)?,
        search_radius: s.get("ransac.search_radius", r.search_radius)?,
        candidates: s.get("ransac.candidates", r.candidates)?,
    };
    Ok(RegisterSetup {
        method,
        source,
        icp,
        ransac,
    })
}

/// Chain per-pair registrations from the first ground-truth pose (identity without ground truth).
pub fn register(seq: &SimulatedSequence, setup: &RegisterSetup, method: Method, seed: u64) -> CliResult<(Trajectory, Vec<PairOutcome>)> {
    let outcomes = register_sequence(&seq.frames, setup.source, method, &setup.icp, &setup.ransac, seed)?;
    let mut pose = seq.frames[0].ground_truth.unwrap_or_else(PoseSE3::identity);
    let mut entries = vec![(seq.frames[0].timestamp(), pose)];
    for (frame, o) in seq.frames[1..].iter().zip(&outcomes) {
        pose = pose.compose(&o.relative);
        entries.push((frame.timestamp(), pose));
    }
    Ok((Trajectory::new(entries)?, outcomes))
}

pub fn pairs_csv(seq: &SimulatedSequence, outcomes: &[PairOutcome]) -> String {
    let mut out = String::from("pair,timestamp,objective,iterations,converged,inliers,fallback,init_fallback\n");
    for (k, o) in outcomes.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            k + 1,
            seq.frames[k + 1].timestamp(),
            o.objective,
            o.iterations,
            o.converged,
            o.inlier_count,
            o.fallback,
            o.init_fallback
        )
        .expect("write to string");
    }
    out
}

pub fn run(s: &Settings) -> CliResult<()> {
    let sequence = PathBuf::from(s.require::<String>("sequence")?);
    let out = PathBuf::from(s.require::<String>("out")?);
    let seed: u64 = s.get("seed", 0)?;
    let setup = register_setup(s, true)?;
    s.finish()?;

    let seq = load_sequence(&sequence)?;
    let (traj, outcomes) = register(&seq, &setup, setup.method, seed)?;
    create_dir(&out)?;
    traj.save(&out.join("trajectory.txt"))?;
    write_file(&out.join("pairs.csv"), &pairs_csv(&seq, &outcomes))?;
    let fallbacks = outcomes.iter().filter(|o| o.fallback).count();
    let mut extra = KeyValues::new();
    extra.set("pairs", outcomes.len());
    extra.set("fallback_pairs", fallbacks);
    write_meta(&out, s, &["out"], extra)?;
    for (k, o) in outcomes.iter().enumerate().filter(|(_, o)| o.fallback) {
        eprintln!("pair {}: too few correspondences ({} inliers), identity used", k + 1, o.inlier_count);
    }
    println!(
        "registered {} pairs with {} ({} identity fallbacks), trajectory in {}",
        outcomes.len(),
        setup.method,
        fallbacks,
        out.join("trajectory.txt").display()
    );
    Ok(())
}
