use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::motiondata::{read_motion, write_motion, EditPair, LabeledMotion, MotionFileError};

use super::benchmark::{Benchmark, Bundle, ManifestEntry};
use super::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn bundle_name(bundle: Bundle) -> String {
    serde_json::to_value(bundle)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .expect("bundles serialize as strings")
}

/// Motion file of a manifest entry. Edit pairs store source and target side by side.
pub fn entry_path(dir: &Path, entry: &ManifestEntry, role: &str) -> PathBuf {
    dir.join(bundle_name(entry.bundle))
        .join(format!("{:05}.{role}.msqm", entry.index))
}

fn file_error(path: &Path, e: MotionFileError) -> HarnessError {
    HarnessError::File {
        path: path.display().to_string(),
        code: e.code(),
        message: e.to_string(),
    }
}

/// Writes every bundle as motion files plus a line-delimited manifest.
pub fn write_dataset(dir: &Path, bench: &Benchmark) -> Result<(), HarnessError> {
    let io = |e: std::io::Error| HarnessError::Io(e.to_string());
    for bundle in Bundle::ALL {
        fs::create_dir_all(dir.join(bundle_name(bundle))).map_err(io)?;
    }
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE)).map_err(io)?);
    for entry in &bench.manifest {
        let item = &bench.bundle(entry.bundle)[entry.index];
        let write = |role: &str, x| {
            let path = entry_path(dir, entry, role);
            write_motion(&path, x).map_err(|e| file_error(&path, e))
        };
        match &item.edit {
            Some(pair) => {
                write("source", &pair.source)?;
                write("target", &pair.target)?;
            }
            None => write("motion", &item.motion)?,
        }
        writeln!(
            manifest,
            "{}",
            serde_json::to_string(entry).expect("manifest entries serialize")
        )
        .map_err(io)?;
    }
    manifest.flush().map_err(io)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, HarnessError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|_| HarnessError::NotFound(path.display().to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Format(format!("manifest line {}: {e}", i + 1)))
        })
        .collect()
}

/// Loads one bundle of a dataset written by [`write_dataset`].
pub fn read_bundle(dir: &Path, bundle: Bundle) -> Result<Vec<LabeledMotion>, HarnessError> {
    let mut out = Vec::new();
    for entry in read_manifest(dir)?.iter().filter(|e| e.bundle == bundle) {
        let read = |role: &str| {
            let path = entry_path(dir, entry, role);
            if !path.exists() {
                return Err(HarnessError::NotFound(path.display().to_string()));
            }
            read_motion(&path).map_err(|e| file_error(&path, e))
        };
        out.push(match entry.edit {
            Some(label) => {
                let source = read("source")?;
                let target = read("target")?;
                LabeledMotion {
                    motion: source.clone(),
                    class: entry.class,
                    edit: Some(EditPair { source, target, label }),
                }
            }
            None => LabeledMotion {
                motion: read("motion")?,
                class: entry.class,
                edit: None,
            },
        });
    }
    Ok(out)
}
