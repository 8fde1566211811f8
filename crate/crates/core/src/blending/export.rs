use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BlendError, TrainingRecord};

/// Sidecar describing an exported training file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub data_file: String,
    pub records: usize,
    /// Record count per blend entry.
    pub counts: BTreeMap<String, usize>,
    pub config_digest: String,
    pub seed: u64,
}

/// `out/train.jsonl` -> `out/train.manifest.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    let stem = data
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("export");
    data.with_file_name(format!("{stem}.manifest.json"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BlendError + '_ {
    move |source| BlendError::Io {
        path: path.to_owned(),
        source,
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_atomically(
    path: &Path,
    fill: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), BlendError> {
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Write one record per line plus a manifest. Both files are written to a
/// temporary name and renamed, so a failed export leaves nothing behind.
pub fn export_jsonl(
    records: &[TrainingRecord],
    path: &Path,
    config_digest: &str,
    seed: u64,
) -> Result<Manifest, BlendError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    write_atomically(path, |w| {
        for r in records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;

    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.meta.blend_entry.clone()).or_insert(0) += 1;
    }
    let manifest = Manifest {
        data_file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        records: records.len(),
        counts,
        config_digest: config_digest.to_owned(),
        seed,
    };
    let mpath = manifest_path(path);
    let res = write_atomically(&mpath, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n")
    });
    if res.is_err() {
        let _ = fs::remove_file(path);
    }
    res.map(|()| manifest)
}

pub fn read_records(path: &Path) -> Result<Vec<TrainingRecord>, BlendError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| BlendError::Parse {
            path: path.to_owned(),
            msg: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    Ok(out)
}
