//! File output. Every file is written to a temporary sibling and renamed
//! into place so readers never observe a partial artifact.

use std::fs;
use std::io::Write;
use std::path::Path;

use ntklab_core::TrajectoryRecord;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Column order of trajectory files.
pub const TRAJECTORY_HEADER: &str =
    "iter,loss,v_perp,v_par,dist_minnorm_sq,dist_init_sq,max_unit_drift,sign_flips,wall_ms";

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_owned());
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Serializes rows with a header derived from the row type's field names.
pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let bytes = csv_bytes(rows).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    write_atomic(path, &bytes)
}

/// Trajectory CSV. An empty trajectory still gets its header.
pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> CliResult<()> {
    if records.is_empty() {
        return write_atomic(path, format!("{TRAJECTORY_HEADER}\n").as_bytes());
    }
    write_csv(path, records)
}

/// Paths recorded in manifests, relative to the output directory.
pub fn relative(out: &Path, path: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}
