use std::fmt::Write as _;
use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::neural::gradcheck::{layer_suite, SuiteEntry};
use egomotion::neural::{NetworkConfig, Profile};

use super::{create_dir, write_file, write_meta};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

fn default_max_per_param(profile: Profile) -> usize {
    match profile {
        Profile::Tiny => 0,
        Profile::Toy => 8,
        Profile::Paper => 2,
    }
}

pub fn report_csv(entries: &[SuiteEntry]) -> String {
    let mut out = String::from("op,passed,max_rel_error,max_abs_error,tolerance,checked,worst\n");
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.name,
            e.passed(),
            e.report.max_rel_error,
            e.report.max_abs_error,
            e.tolerance,
            e.report.checked,
            e.report.worst
        )
        .expect("write to string");
    }
    out
}

/// `corrupt` is a test hook that distorts one op's analytic gradient.
pub fn run(s: &Settings, corrupt: Option<&str>) -> CliResult<()> {
    let profile: Profile = s.get::<String>("profile", "toy".into())?.parse().map_err(as_usage)?;
    let seed: u64 = s.get("seed", 0)?;
    let max_per_param: usize = s.get("max_per_param", default_max_per_param(profile))?;
    let out = s.opt::<String>("out")?.map(PathBuf::from);
    s.finish()?;

    let entries = layer_suite(
        seed,
        Some(NetworkConfig::profile(profile)),
        (max_per_param > 0).then_some(max_per_param),
        corrupt,
    )
    .map_err(as_usage)?;
    for e in &entries {
        println!(
            "{} {:<22} max_rel_error {:.3e} (tolerance {:.0e}, {} entries)",
            if e.passed() { "PASS" } else { "FAIL" },
            e.name,
            e.report.max_rel_error,
            e.tolerance,
            e.report.checked
        );
    }
    let worst = entries.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name).collect();
    println!("max relative error: {worst:.3e}");

    if let Some(out) = out {
        create_dir(&out)?;
        write_file(&out.join("gradcheck.csv"), &report_csv(&entries))?;
        let mut extra = KeyValues::new();
        extra.set("max_rel_error", worst);
        extra.set("failed", failed.len());
        write_meta(&out, s, &["out"], extra)?;
    }
    if failed.is_empty() {
        println!("all {} checks passed", entries.len());
        Ok(())
    } else {
        Err(CliError::numerical(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
