use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::{sha256_hex, LoadedConfig};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Serialize)]
struct Versions {
    beatgan: &'static str,
    beatgan_cli: &'static str,
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    arguments: &'a BTreeMap<String, String>,
    config: Option<String>,
    config_sha256: &'a str,
    seed: u64,
    versions: Versions,
    files: Vec<FileEntry>,
}

fn collect(dir: &Path, out_root: &Path, files: &mut Vec<FileEntry>) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Stage(beatgan::Error::Io { path: dir.to_path_buf(), source: e });
    let mut entries: Vec<_> = fs::read_dir(dir).map_err(io)?.collect::<Result<_, _>>().map_err(io)?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out_root, files)?;
        } else if entry.file_name() != MANIFEST_FILE {
            let bytes = fs::read(&path).map_err(io)?;
            let rel = path.strip_prefix(out_root).unwrap_or(&path);
            files.push(FileEntry {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    Ok(())
}

/// Records what produced `stage_dir` in `stage_dir/run-manifest.json`.
pub fn write(
    subcommand: &str,
    arguments: &BTreeMap<String, String>,
    config: &LoadedConfig,
    seed: u64,
    out_root: &Path,
    stage_dir: &Path,
) -> Result<(), CliError> {
    let mut files = Vec::new();
    collect(stage_dir, out_root, &mut files)?;
    let manifest = RunManifest {
        subcommand,
        arguments,
        config: config.path.as_ref().map(|p| p.display().to_string()),
        config_sha256: &config.sha256,
        seed,
        versions: Versions {
            beatgan: beatgan::VERSION,
            beatgan_cli: env!("CARGO_PKG_VERSION"),
        },
        files,
    };
    let path = stage_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::Stage(beatgan::Error::Io { path, source: e }))
}
