use std::path::PathBuf;
use std::str::FromStr;

use egomotion::config::KeyValues;
use egomotion::neural::checkpoint::Checkpoint;
use egomotion::neural::dataset::{encode_frames, subsample_frames, EncodedSequence, Normalizer};
use egomotion::neural::train::{history_to_csv, train, TrainConfig, TrainState};
use egomotion::neural::{Network, NetworkConfig, Profile};
use egomotion::rng;

use super::{content_hash, create_dir, existing_file, load_sequence, split_list, write_file, write_meta};
use crate::error::{as_usage, CliError, CliResult};
use crate::settings::Settings;

/// Encode every sequence directory with `config`, keeping every `subsample`-th frame.
pub fn encode_sequences(dirs: &[PathBuf], config: &NetworkConfig, subsample: usize) -> CliResult<Vec<EncodedSequence>> {
    dirs.iter()
        .map(|d| {
            let seq = load_sequence(d)?;
            let frames = subsample_frames(&seq.frames, subsample)?;
            Ok(encode_frames(&frames, config)?)
        })
        .collect()
}

fn meta_default<T: FromStr>(meta: Option<&KeyValues>, key: &str, fallback: T) -> CliResult<T> {
    match meta {
        Some(m) => m.get_or(key, fallback).map_err(|e| CliError::data(e.to_string())),
        None => Ok(fallback),
    }
}

pub fn run(s: &Settings) -> CliResult<()> {
    let dirs: Vec<PathBuf> = split_list(&s.require::<String>("sequences")?).into_iter().map(PathBuf::from).collect();
    if dirs.is_empty() {
        return Err(CliError::usage("train: at least one sequence is required"));
    }
    let out = PathBuf::from(s.require::<String>("out")?);
    let resume = s.opt::<String>("resume")?.map(|p| existing_file(&p)).transpose()?;
    let resumed = resume.as_deref().map(Checkpoint::load).transpose()?;
    let prev = resumed.as_ref().map(|c| &c.meta);

    let profile: Option<Profile> = s.opt::<String>("profile")?.map(|p| p.parse()).transpose().map_err(as_usage)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        lr: s.get("lr", meta_default(prev, "train.lr", d.lr)?)?,
        lr_decay: s.get("lr_decay", meta_default(prev, "train.lr_decay", d.lr_decay)?)?,
        decay_every: s.get("decay_every", meta_default(prev, "train.decay_every", d.decay_every)?)?,
        epochs: s.get("epochs", d.epochs)?,
        subsequence_length: s.get(
            "subsequence_length",
            meta_default(prev, "train.subsequence_length", d.subsequence_length)?,
        )?,
        rmsprop: d.rmsprop,
        seed: s.get("seed", meta_default(prev, "train.seed", d.seed)?)?,
    };
    tc.validate().map_err(as_usage)?;
    let subsample: usize = s.get("subsample", meta_default(prev, "train.subsample", 1usize)?)?;
    if subsample == 0 {
        return Err(CliError::usage("subsample must be at least 1"));
    }

    let (mut network, normalizer, mut state) = match resumed {
        Some(ck) => {
            if let Some(p) = profile {
                if p != ck.network.config.profile {
                    return Err(CliError::usage(format!(
                        "profile {p} does not match the checkpoint's profile {}",
                        ck.network.config.profile
                    )));
                }
            }
            if s.is_given("net.use_depth") || s.is_given("net.dropout") {
                return Err(CliError::usage("network settings cannot change when resuming"));
            }
            let state = TrainState {
                optimizer: ck.optimizer,
                epoch: ck.epoch,
                history: Vec::new(),
            };
            (ck.network, Some(ck.normalizer), state)
        }
        None => {
            let mut config = NetworkConfig::profile(profile.unwrap_or(Profile::Toy));
            config.use_depth = s.get("net.use_depth", config.use_depth)?;
            config.dropout = s.get("net.dropout", config.dropout)?;
            config.validate().map_err(as_usage)?;
            let network = Network::new(config, rng::stream_seed(tc.seed, "net.init"))?;
            (network, None, TrainState::default())
        }
    };
    s.finish()?;

    let data = encode_sequences(&dirs, &network.config, subsample)?;
    let normalizer = normalizer.unwrap_or_else(|| Normalizer::fit(&data));
    let input_hash = content_hash(&dirs)?;
    let start_epoch = state.epoch;
    let records = train(&mut network, &data, &normalizer, &tc, &mut state)?;

    let mut ck = Checkpoint::new(network, normalizer);
    ck.optimizer = state.optimizer;
    ck.epoch = state.epoch;
    ck.meta.set("train.lr", tc.lr);
    ck.meta.set("train.lr_decay", tc.lr_decay);
    ck.meta.set("train.decay_every", tc.decay_every);
    ck.meta.set("train.subsequence_length", tc.subsequence_length);
    ck.meta.set("train.seed", tc.seed);
    ck.meta.set("train.subsample", subsample);
    ck.meta.set("input_hash", &input_hash);

    create_dir(&out)?;
    ck.save(&out.join("model.ckpt"))?;
    write_file(&out.join("loss.csv"), &history_to_csv(&records))?;
    let mut extra = KeyValues::new();
    extra.set("input_hash", &input_hash);
    extra.set("start_epoch", start_epoch);
    extra.set("end_epoch", state.epoch);
    extra.set("parameters", ck.network.param_count());
    write_meta(&out, s, &["out"], extra)?;
    match records.last() {
        Some(r) => println!(
            "trained epochs {}..{}, final mean loss {}, checkpoint {}",
            start_epoch,
            state.epoch,
            r.mean_loss,
            out.join("model.ckpt").display()
        ),
        None => println!("no epochs run, checkpoint {}", out.join("model.ckpt").display()),
    }
    Ok(())
}
