//! File formats: panels, coefficient blocks, edge lists and run manifests.
//!
//! Numbers are written with 17 significant digits so a read after write returns
//! the same `f64`. Every file is written to a temporary sibling and renamed into
//! place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CausalGraphEstimate, StackLayout, StackedCausalMatrix};
use crate::panel::TimeSeriesPanel;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_number(path: &Path, line: usize, field: &str) -> Result<f64> {
    let trimmed = field.trim();
    if trimmed.is_empty() {
        return Err(parse_error(path, line, "missing value"));
    }
    let v: f64 = trimmed
        .parse()
        .map_err(|_| parse_error(path, line, format!("`{trimmed}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite value `{trimmed}`"),
        ));
    }
    Ok(v)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

/// Data rows with their 1-based line numbers.
type Rows = Vec<(usize, Vec<String>)>;

fn records(path: &Path) -> Result<(Vec<String>, Rows)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

/// Read a panel: header `timestamp,<series...>`, one row per observation.
pub fn read_panel(path: &Path) -> Result<TimeSeriesPanel> {
    let (header, rows) = records(path)?;
    if header.len() < 2 {
        return Err(parse_error(
            path,
            1,
            "header needs a timestamp column and at least one series",
        ));
    }
    let names: Vec<String> = header[1..].to_vec();
    let n = names.len();
    if rows.is_empty() {
        return Err(parse_error(path, 2, "no observations"));
    }
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut data = DMatrix::zeros(rows.len(), n);
    for (t, (line, fields)) in rows.iter().enumerate() {
        if fields.len() != n + 1 {
            return Err(parse_error(
                path,
                *line,
                format!("expected {} fields, found {}", n + 1, fields.len()),
            ));
        }
        timestamps.push(fields[0].trim().to_string());
        for (i, field) in fields[1..].iter().enumerate() {
            data[(t, i)] = parse_number(path, *line, field)?;
        }
    }
    TimeSeriesPanel::new(names, timestamps, data)
}

pub fn panel_csv(panel: &TimeSeriesPanel) -> String {
    matrix_csv(&panel.timestamps, &panel.names, &panel.data)
}

/// CSV with a leading `timestamp` column.
pub fn matrix_csv(timestamps: &[String], names: &[String], data: &DMatrix<f64>) -> String {
    let mut out = String::from("timestamp");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, ts) in timestamps.iter().enumerate() {
        out.push_str(ts);
        for i in 0..data.ncols() {
            out.push(',');
            out.push_str(&fmt_f64(data[(t, i)]));
        }
        out.push('\n');
    }
    out
}

pub fn write_panel(path: &Path, panel: &TimeSeriesPanel) -> Result<()> {
    write_atomic(path, panel_csv(panel).as_bytes())
}

pub fn block_file_name(prefix: &str, scale: usize, lag: usize) -> String {
    format!("{prefix}_s{scale}_l{lag}.csv")
}

/// One `(scale, lag)` block: columns `scale,lag,parent,<caused series...>`,
/// one row per parent series.
pub fn block_csv(
    stack: &StackedCausalMatrix,
    scale: usize,
    lag: usize,
    names: &[String],
) -> String {
    let block = stack.block(scale, lag);
    let mut out = String::from("scale,lag,parent");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, parent) in names.iter().enumerate() {
        out.push_str(&format!("{scale},{lag},{parent}"));
        for j in 0..names.len() {
            out.push(',');
            out.push_str(&fmt_f64(block[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// Write every block of `stack` into `dir`; returns the written paths.
pub fn write_stack(
    dir: &Path,
    prefix: &str,
    stack: &StackedCausalMatrix,
    names: &[String],
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for scale in 1..=stack.layout.scales {
        for lag in 0..=stack.layout.lags {
            let path = dir.join(block_file_name(prefix, scale, lag));
            write_atomic(&path, block_csv(stack, scale, lag, names).as_bytes())?;
            paths.push(path);
        }
    }
    Ok(paths)
}

fn block_files(dir: &Path, prefix: &str) -> Result<BTreeMap<(usize, usize), PathBuf>> {
    let mut found = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(rest) = name
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix("_s"))
            .and_then(|r| r.strip_suffix(".csv"))
        else {
            continue;
        };
        let Some((s, l)) = rest.split_once("_l") else {
            continue;
        };
        if let (Ok(scale), Ok(lag)) = (s.parse::<usize>(), l.parse::<usize>()) {
            found.insert((scale, lag), entry.path());
        }
    }
    Ok(found)
}

/// Prefixes with block files in `dir`, among `candidates`, in candidate order.
pub fn detect_prefix<'a>(dir: &Path, candidates: &[&'a str]) -> Result<Option<&'a str>> {
    for prefix in candidates {
        if !block_files(dir, prefix)?.is_empty() {
            return Ok(Some(prefix));
        }
    }
    Ok(None)
}

/// Reassemble a stack from the block files `<prefix>_s<d>_l<l>.csv` in `dir`.
pub fn read_stack(dir: &Path, prefix: &str) -> Result<(StackedCausalMatrix, Vec<String>)> {
    let files = block_files(dir, prefix)?;
    if files.is_empty() {
        return Err(Error::io(
            dir.join(block_file_name(prefix, 1, 0)),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no coefficient block files"),
        ));
    }
    let scales = files.keys().map(|k| k.0).max().unwrap_or(0);
    let lags = files.keys().map(|k| k.1).max().unwrap_or(0);
    let mut names: Option<Vec<String>> = None;
    let mut stack: Option<StackedCausalMatrix> = None;
    for scale in 1..=scales {
        for lag in 0..=lags {
            let path = files.get(&(scale, lag)).cloned().ok_or_else(|| {
                Error::io(
                    dir.join(block_file_name(prefix, scale, lag)),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "missing coefficient block"),
                )
            })?;
            let (header, rows) = records(&path)?;
            if header.len() < 4 || header[..3] != ["scale", "lag", "parent"] {
                return Err(parse_error(
                    &path,
                    1,
                    "expected header `scale,lag,parent,...`",
                ));
            }
            let these: Vec<String> = header[3..].to_vec();
            let n = these.len();
            match &names {
                Some(prev) if *prev != these => {
                    return Err(parse_error(&path, 1, "series names differ between blocks"))
                }
                None => names = Some(these.clone()),
                _ => {}
            }
            let stack = stack.get_or_insert_with(|| {
                StackedCausalMatrix::zeros(StackLayout {
                    lags,
                    scales,
                    series: n,
                })
            });
            if rows.len() != n {
                return Err(parse_error(
                    &path,
                    rows.len() + 1,
                    format!("expected {n} parent rows"),
                ));
            }
            let mut block = DMatrix::zeros(n, n);
            for (i, (line, fields)) in rows.iter().enumerate() {
                if fields.len() != n + 3 {
                    return Err(parse_error(
                        &path,
                        *line,
                        format!("expected {} fields", n + 3),
                    ));
                }
                if fields[0].trim() != scale.to_string() || fields[1].trim() != lag.to_string() {
                    return Err(parse_error(
                        &path,
                        *line,
                        "scale/lag keys disagree with file name",
                    ));
                }
                if fields[2].trim() != these[i] {
                    return Err(parse_error(
                        &path,
                        *line,
                        "parent rows must follow header order",
                    ));
                }
                for j in 0..n {
                    block[(i, j)] = parse_number(&path, *line, &fields[3 + j])?;
                }
            }
            if lag == 0 && (0..n).any(|i| block[(i, i)] != 0.0) {
                return Err(parse_error(
                    &path,
                    2,
                    "instantaneous self-loops are not allowed",
                ));
            }
            stack.set_block(scale, lag, &block);
        }
    }
    Ok((
        stack.expect("at least one block"),
        names.unwrap_or_default(),
    ))
}

pub fn edges_csv(graph: &CausalGraphEstimate, names: &[String]) -> String {
    let mut out = String::from("source,target,lag,scale,weight\n");
    for e in &graph.edges {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            names[e.source],
            names[e.target],
            e.lag,
            e.scale,
            fmt_f64(e.weight)
        ));
    }
    out
}

/// Self-describing record of a CLI run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub duration_ms: u128,
    pub summary: serde_json::Value,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::InvalidData(format!("manifest serialization: {e}")))?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Read a `key = value` config file; `#` starts a comment.
pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_error(path, idx + 1, "expected `key = value`"))?;
        out.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
    }
    Ok(out)
}
