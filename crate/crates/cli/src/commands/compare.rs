use std::fmt::Write as _;
use std::path::PathBuf;

use egomotion::config::KeyValues;
use egomotion::evaluation::{AteReport, Trajectory};
use egomotion::neural::checkpoint::Checkpoint;
use egomotion::registration::Method;

use super::eval::{evaluate, Align};
use super::infer::infer;
use super::register::{register, register_setup};
use super::simulate::{sim_setup, simulate};
use super::{create_dir, existing_file, split_list, write_file, write_meta};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

struct Row {
    seed: String,
    method: String,
    d3: (f64, f64, f64),
    d2: (f64, f64, f64),
    drift: f64,
}

impl Row {
    fn new(seed: u64, method: &str, d2: &AteReport, d3: &AteReport) -> Self {
        Self {
            seed: seed.to_string(),
            method: method.to_string(),
            d3: (d3.mean, d3.std, d3.max),
            d2: (d2.mean, d2.std, d2.max),
            drift: d3.drift_percent,
        }
    }
}

fn table(rows: &[Row]) -> String {
    let mut out = String::from("seed,method,mean_3d,std_3d,max_3d,mean_2d,std_2d,max_2d,drift_percent\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.seed, r.method, r.d3.0, r.d3.1, r.d3.2, r.d2.0, r.d2.1, r.d2.2, r.drift
        )
        .expect("write to string");
    }
    out
}

/// One `mean` row per method, averaging each column over seeds.
fn averages(rows: &[Row], methods: &[String]) -> Vec<Row> {
    methods
        .iter()
        .map(|m| {
            let sel: Vec<&Row> = rows.iter().filter(|r| &r.method == m).collect();
            let n = sel.len() as f64;
            let avg = |f: fn(&Row) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            Row {
                seed: "mean".into(),
                method: m.clone(),
                d3: (avg(|r| r.d3.0), avg(|r| r.d3.1), avg(|r| r.d3.2)),
                d2: (avg(|r| r.d2.0), avg(|r| r.d2.1), avg(|r| r.d2.2)),
                drift: avg(|r| r.drift),
            }
        })
        .collect()
}

pub fn run(s: &Settings) -> CliResult<()> {
    let out = PathBuf::from(s.require::<String>("out")?);
    let seeds: Vec<u64> = split_list(&s.get::<String>("seeds", "0,1,2,3,4".into())?)
        .iter()
        .map(|v| v.parse().map_err(|_| CliError::usage(format!("seed `{v}` is not an unsigned integer"))))
        .collect::<CliResult<_>>()?;
    if seeds.is_empty() {
        return Err(CliError::usage("compare: seed list is empty"));
    }
    let methods: Vec<Method> = split_list(&s.get::<String>("methods", "icp,ransac-icp,imu-icp".into())?)
        .iter()
        .map(|m| m.parse().map_err(as_usage))
        .collect::<CliResult<_>>()?;
    let checkpoint = s.opt::<String>("checkpoint")?.map(|p| existing_file(&p)).transpose()?;
    let ck = checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let subsample: usize = s.get("subsample", 1)?;
    if subsample == 0 {
        return Err(CliError::usage("subsample must be at least 1"));
    }
    let chunk: Option<usize> = s.opt("chunk")?;
    let align: Align = s.get("align", Align::First)?;
    let sim = sim_setup(s)?;
    let reg = register_setup(s, false)?;
    s.finish()?;

    let mut names: Vec<String> = vec!["identity".into()];
    names.extend(methods.iter().map(Method::to_string));
    if ck.is_some() {
        names.push("network".into());
    }

    let mut rows = Vec::new();
    for &seed in &seeds {
        let seq = simulate(&sim, seed)?;
        let truth = seq.ground_truth()?;
        let start = truth.entries()[0].1;
        let identity = Trajectory::new(seq.timestamps().into_iter().map(|t| (t, start)).collect())?;
        let (d2, d3) = evaluate(&identity, &truth, align)?;
        rows.push(Row::new(seed, "identity", &d2, &d3));
        for &m in &methods {
            let (traj, _) = register(&seq, &reg, m, seed)?;
            let (d2, d3) = evaluate(&traj, &truth, align)?;
            rows.push(Row::new(seed, &m.to_string(), &d2, &d3));
        }
        if let Some(ck) = &ck {
            let chunk = chunk.unwrap_or_else(|| ck.meta.get_or("train.subsequence_length", 16usize).unwrap_or(16));
            let traj = infer(ck, &seq, subsample, chunk.max(1))?;
            let (d2, d3) = evaluate(&traj, &truth, align)?;
            rows.push(Row::new(seed, "network", &d2, &d3));
        }
    }
    let means = averages(&rows, &names);
    rows.extend(means);

    create_dir(&out)?;
    let csv = table(&rows);
    write_file(&out.join("comparison.csv"), &csv)?;
    let mut extra = KeyValues::new();
    extra.set("rows", rows.len());
    write_meta(&out, s, &["out"], extra)?;
    print!("{csv}");
    Ok(())
}
