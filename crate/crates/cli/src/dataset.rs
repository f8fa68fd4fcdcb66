use std::path::{Path, PathBuf};

use btc_core::io::{read_btcf, read_lab};
use btc_core::train::Song;

use crate::error::{file_error, CliError, Result};

pub const MANIFEST: &str = "manifest.txt";

/// `(stem, path)` of every file in `dir` with extension `ext`, sorted by stem.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(file_error(dir))? {
        let path = entry.map_err(file_error(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path.clone()));
        }
    }
    out.sort();
    Ok(out)
}

/// Every `<id>.btcf` in `dir` with its `<id>.lab`.
pub fn load_songs(dir: &Path) -> Result<Vec<Song>> {
    let songs = list_files(dir, "btcf")?
        .into_iter()
        .map(|(id, path)| {
            let lab = path.with_extension("lab");
            if !lab.exists() {
                return Err(CliError::MissingCounterpart {
                    song: id,
                    missing: lab,
                });
            }
            Ok(Song {
                features: read_btcf(&path)?,
                track: read_lab(&lab)?,
                id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if songs.is_empty() {
        return Err(CliError::NoSongs(dir.to_path_buf()));
    }
    Ok(songs)
}
