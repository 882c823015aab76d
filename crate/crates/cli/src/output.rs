//! CSV and summary artifacts.

use std::path::{Path, PathBuf};

use excess_bounds::curve::BoundCurve;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const CSV_HEADER: [&str; 6] = ["M", "bound", "direction", "value", "raw_value", "params_json"];

/// Shortest decimal that reads back to the same `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

/// Rows ordered by curve tag, then `M` ascending; LF line endings.
pub fn csv_bytes(curves: &[BoundCurve]) -> CliResult<Vec<u8>> {
    let mut sorted: Vec<&BoundCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| a.tag.cmp(&b.tag));
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    };
    wtr.write_record(CSV_HEADER).map_err(fail)?;
    for curve in sorted {
        let mut points: Vec<_> = curve.points.iter().collect();
        points.sort_by_key(|p| p.m);
        for p in points {
            let params = serde_json::to_string(&p.params).map_err(|e| CliError::Io {
                path: "<csv>".into(),
                message: e.to_string(),
            })?;
            wtr.write_record([
                p.m.to_string(),
                curve.tag.clone(),
                curve.direction.as_str().to_string(),
                format_float(p.value),
                format_float(p.raw_value),
                params,
            ])
            .map_err(fail)?;
        }
    }
    wtr.into_inner().map_err(|e| CliError::Io {
        path: "<csv>".into(),
        message: e.to_string(),
    })
}

pub fn emit_csv(curves: &[BoundCurve], path: &Path) -> CliResult<()> {
    let bytes = csv_bytes(curves)?;
    write_file(path, &bytes)
}

/// `out.csv` → `out.summary.json`.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.json")
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
