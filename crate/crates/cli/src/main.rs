//! `egomotion` command-line front end.
//!
//! Every command reads settings from `--config <file>` (keys outside a section, then the
//! `[<command>]` section), then `--set key=value`, then its explicit flags. Each output
//! directory gets a `meta.txt` echoing the effective configuration.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult, EXIT_USAGE};
use crate::settings::Settings;

#[derive(Parser)]
#[command(name = "egomotion", version, about = "Radar-inertial egomotion: simulate, register, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a sequence directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// World description file (defaults to a furnished room).
        #[arg(long)]
        world: Option<String>,
        /// `x y z yaw_deg` waypoints separated by `;`.
        #[arg(long, allow_hyphen_values = true)]
        waypoints: Option<String>,
        #[arg(long)]
        frame_rate: Option<f64>,
        #[arg(long)]
        speed: Option<f64>,
    },
    /// Write panoramic images and resampled IMU windows for a sequence.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        subsample: Option<usize>,
    },
    /// Estimate a trajectory by scan registration.
    Register {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// icp, ransac-icp or imu-icp.
        #[arg(long)]
        method: Option<String>,
        /// radar or dense.
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the odometry network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Sequence directory; repeatable.
        #[arg(long = "sequence")]
        sequences: Vec<String>,
        #[arg(long)]
        out: Option<String>,
        /// toy, paper or tiny.
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        subsample: Option<usize>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<String>,
    },
    /// Predict a trajectory with a trained network.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        sequence: Option<String>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        profile: Option<String>,
    },
    /// Absolute trajectory error of an estimate against a reference.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        estimate: Option<String>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        out: Option<String>,
        /// first, full or none.
        #[arg(long)]
        align: Option<String>,
    },
    /// Finite-difference check of every layer and the assembled network.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Entries checked per parameter tensor (0 = all).
        #[arg(long)]
        max_per_param: Option<usize>,
        #[arg(long)]
        out: Option<String>,
        #[arg(long, hide = true)]
        corrupt_op: Option<String>,
    },
    /// Register, infer and evaluate over a list of simulated seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Comma-separated registration methods.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        checkpoint: Option<String>,
    },
}

fn settings(command: &'static str, common: &Common) -> CliResult<Settings> {
    Settings::new(command, common.config.as_deref(), &common.set)
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate { common, out, seed, world, waypoints, frame_rate, speed } => {
            let mut s = settings("simulate", &common)?;
            s.flag("out", out);
            s.flag("seed", seed);
            s.flag("world", world);
            s.flag("waypoints", waypoints);
            s.flag("frame_rate", frame_rate);
            s.flag("speed", speed);
            commands::simulate::run(&s)
        }
        Command::Encode { common, sequence, out, profile, subsample } => {
            let mut s = settings("encode", &common)?;
            s.flag("sequence", sequence);
            s.flag("out", out);
            s.flag("profile", profile);
            s.flag("subsample", subsample);
            commands::encode::run(&s)
        }
        Command::Register { common, sequence, out, method, source, seed } => {
            let mut s = settings("register", &common)?;
            s.flag("sequence", sequence);
            s.flag("out", out);
            s.flag("method", method);
            s.flag("source", source);
            s.flag("seed", seed);
            commands::register::run(&s)
        }
        Command::Train { common, sequences, out, profile, epochs, lr, seed, subsample, resume } => {
            let mut s = settings("train", &common)?;
            s.flag("sequences", (!sequences.is_empty()).then(|| sequences.join(",")));
            s.flag("out", out);
            s.flag("profile", profile);
            s.flag("epochs", epochs);
            s.flag("lr", lr);
            s.flag("seed", seed);
            s.flag("subsample", subsample);
            s.flag("resume", resume);
            commands::train::run(&s)
        }
        Command::Infer { common, checkpoint, sequence, out, subsample, profile } => {
            let mut s = settings("infer", &common)?;
            s.flag("checkpoint", checkpoint);
            s.flag("sequence", sequence);
            s.flag("out", out);
            s.flag("subsample", subsample);
            s.flag("profile", profile);
            commands::infer::run(&s)
        }
        Command::Eval { common, estimate, reference, out, align } => {
            let mut s = settings("eval", &common)?;
            s.flag("estimate", estimate);
            s.flag("reference", reference);
            s.flag("out", out);
            s.flag("align", align);
            commands::eval::run(&s)
        }
        Command::Gradcheck { common, profile, seed, max_per_param, out, corrupt_op } => {
            let mut s = settings("gradcheck", &common)?;
            s.flag("profile", profile);
            s.flag("seed", seed);
            s.flag("max_per_param", max_per_param);
            s.flag("out", out);
            commands::gradcheck::run(&s, corrupt_op.as_deref())
        }
        Command::Compare { common, out, seeds, methods, checkpoint } => {
            let mut s = settings("compare", &common)?;
            s.flag("out", out);
            s.flag("seeds", seeds);
            s.flag("methods", methods);
            s.flag("checkpoint", checkpoint);
            commands::compare::run(&s)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
