use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::evaluation::{align_first_frame, align_full, ate, cdf_export, cdf_to_csv, AteReport, Dim, Trajectory};

use super::{create_dir, existing_file, write_file, write_meta};
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Align {
    First,
    Full,
    None,
}

impl std::str::FromStr for Align {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "first" => Ok(Align::First),
            "full" => Ok(Align::Full),
            "none" => Ok(Align::None),
            _ => Err(CliError::usage(format!("unknown alignment `{s}` (first, full, none)"))),
        }
    }
}

impl std::fmt::Display for Align {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Align::First => "first",
            Align::Full => "full",
            Align::None => "none",
        })
    }
}

/// 2D and 3D reports after alignment.
pub fn evaluate(est: &Trajectory, reference: &Trajectory, align: Align) -> CliResult<(AteReport, AteReport)> {
    let aligned = match align {
        Align::First => align_first_frame(est, reference)?,
        Align::Full => align_full(est, reference, None)?,
        Align::None => est.clone(),
    };
    Ok((ate(&aligned, reference, Dim::D2)?, ate(&aligned, reference, Dim::D3)?))
}

pub fn summary_csv(reports: &[&AteReport]) -> String {
    let mut out = String::from("mean,std,max,dim,drift_percent\n");
    for r in reports {
        out.push_str(r.summary_csv().lines().nth(1).unwrap_or_default());
        out.push('\n');
    }
    out
}

pub fn run(s: &Settings) -> CliResult<()> {
    let est_path = existing_file(&s.require::<String>("estimate")?)?;
    let ref_path = existing_file(&s.require::<String>("reference")?)?;
    let out = PathBuf::from(s.require::<String>("out")?);
    let align: Align = s.get("align", Align::First)?;
    s.finish()?;

    let est = Trajectory::load(&est_path)?;
    let reference = Trajectory::load(&ref_path)?;
    let (d2, d3) = evaluate(&est, &reference, align)?;

    create_dir(&out)?;
    write_file(&out.join("summary.csv"), &summary_csv(&[&d2, &d3]))?;
    for (r, tag) in [(&d2, "2d"), (&d3, "3d")] {
        write_file(&out.join(format!("errors_{tag}.csv")), &r.to_csv())?;
        write_file(&out.join(format!("cdf_{tag}.csv")), &cdf_to_csv(&cdf_export(r)))?;
    }
    let mut extra = KeyValues::new();
    extra.set("matched_frames", d3.per_frame.len());
    write_meta(&out, s, &["out"], extra)?;
    for r in [&d2, &d3] {
        println!("{} ATE: mean {} std {} max {} m, drift {}%", r.dim, r.mean, r.std, r.max, r.drift_percent);
    }
    Ok(())
}
