use std::path::{Path, PathBuf};

use egomotion::config::KeyValues;
use egomotion::simulator::SimulatedSequence;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub mod compare;
pub mod encode;
pub mod eval;
pub mod gradcheck;
pub mod infer;
pub mod register;
pub mod simulate;
pub mod train;

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

/// The command name, the resolved configuration under `config.`, then `extra`.
pub fn meta(settings: &Settings, skip: &[&str], extra: KeyValues) -> KeyValues {
    let mut m = KeyValues::new();
    m.set("command", settings.command());
    m.set("version", env!("CARGO_PKG_VERSION"));
    for (k, v) in settings.effective(skip).iter() {
        m.set(format!("config.{k}"), v);
    }
    for (k, v) in extra.iter() {
        m.set(k.clone(), v);
    }
    m
}

pub fn write_meta(dir: &Path, settings: &Settings, skip: &[&str], extra: KeyValues) -> CliResult<()> {
    write_file(&dir.join("meta.txt"), &meta(settings, skip, extra).to_text())
}

pub fn load_sequence(dir: &Path) -> CliResult<SimulatedSequence> {
    if !dir.is_dir() {
        return Err(CliError::usage(format!("sequence directory {} does not exist", dir.display())));
    }
    Ok(SimulatedSequence::load(dir)?)
}

pub fn existing_file(path: &str) -> CliResult<PathBuf> {
    let p = PathBuf::from(path);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::usage(format!("file {path} does not exist")))
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            out.push((rel, path));
        }
    }
    Ok(())
}

/// SHA-256 over the relative path and bytes of every file under each directory, in sorted order.
pub fn content_hash(dirs: &[PathBuf]) -> CliResult<String> {
    let mut hasher = Sha256::new();
    for dir in dirs {
        let mut files = Vec::new();
        collect_files(dir, dir, &mut files).map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?;
        files.sort();
        for (rel, path) in files {
            let bytes = std::fs::read(&path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
            hasher.update((rel.len() as u64).to_le_bytes());
            hasher.update(rel.as_bytes());
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Parse a comma-separated list, ignoring blanks.
pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}
