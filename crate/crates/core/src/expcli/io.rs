use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EvalSnapshot, SNAPSHOT_COLUMNS};

pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_snapshots(path: &Path, snaps: &[EvalSnapshot]) -> Result<()> {
    let mut s = SNAPSHOT_COLUMNS.join(",");
    s.push('\n');
    for snap in snaps {
        s.push_str(&snap.csv_row().join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Scalar columns of one snapshot row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub step: u64,
    pub sample_acc: f64,
    pub group_acc: f64,
    pub sample_mem: f64,
    pub group_mem: f64,
    pub invalid_frac: f64,
    pub nan_frac: f64,
}

pub fn read_snapshots(path: &Path) -> Result<Vec<SnapshotRecord>> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split(',').collect();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    let need = |name: &str| col.get(name).copied().ok_or_else(|| bad(format!("missing column {name}")));
    let idx = [
        need("step")?,
        need("sample_acc")?,
        need("group_acc")?,
        need("sample_mem")?,
        need("group_mem")?,
        need("invalid_frac")?,
        need("nan_frac")?,
    ];
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let f = |i: usize| -> Result<f64> {
            cells
                .get(idx[i])
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(format!("line {}: bad {}", ln + 2, header[idx[i]])))
        };
        out.push(SnapshotRecord {
            step: cells
                .get(idx[0])
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| bad(format!("line {}: bad step", ln + 2)))?,
            sample_acc: f(1)?,
            group_acc: f(2)?,
            sample_mem: f(3)?,
            group_mem: f(4)?,
            invalid_frac: f(5)?,
            nan_frac: f(6)?,
        });
    }
    Ok(out)
}

/// JSON sidecar of a raw sample batch stored as little-endian `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BatchSidecar {
    pub step: u64,
    pub rule: String,
    pub rows: usize,
    pub cols: usize,
    pub eval_seed: u64,
    pub dtype: String,
    pub layout: String,
    pub data_file: String,
}

pub fn write_batch(dir: &Path, stem: &str, batch: ArrayView2<f64>, step: u64, rule: &str, eval_seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = batch.iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes)?;
    let side = BatchSidecar {
        step,
        rule: rule.to_string(),
        rows: batch.nrows(),
        cols: batch.ncols(),
        eval_seed,
        dtype: "f64-le".into(),
        layout: "row-major, one generated sample per row".into(),
        data_file: format!("{stem}.bin"),
    };
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(&side)?)?;
    Ok(vec![bin, json])
}

pub fn read_batch(sidecar: &Path) -> Result<(BatchSidecar, Array2<f64>)> {
    let side: BatchSidecar = serde_json::from_slice(&fs::read(sidecar)?)?;
    let dir = sidecar.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&side.data_file))?;
    if bytes.len() != side.rows * side.cols * 8 {
        return Err(Error::Parse {
            path: sidecar.to_path_buf(),
            msg: "data size does not match rows x cols".into(),
        });
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let a = Array2::from_shape_vec((side.rows, side.cols), vals).expect("checked size");
    Ok((side, a))
}

/// Long-format per-position cross-entropy rows `step,split,position,ce`.
#[derive(Default)]
pub struct CeTable {
    text: String,
}

impl CeTable {
    pub fn new() -> Self {
        Self {
            text: "step,split,position,ce\n".into(),
        }
    }

    pub fn push(&mut self, step: u64, split: &str, ce: &[f64]) {
        for (k, v) in ce.iter().enumerate() {
            writeln!(self.text, "{step},{split},{k},{v:?}").unwrap();
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Reads `N,tau` pairs from a CSV with a header; extra columns are ignored
/// and rows with an empty `tau` are skipped.
pub fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let find = |names: &[&str]| header.iter().position(|h| names.contains(&h.as_str()));
    let ni = find(&["n", "value"]).ok_or_else(|| bad("need an `n` column".into()))?;
    let ti = find(&["tau", "tau_mem"]).ok_or_else(|| bad("need a `tau` or `tau_mem` column".into()))?;
    let mut pts = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.iter().all(|c| c.is_empty()) {
            continue;
        }
        let t = cells.get(ti).copied().unwrap_or("");
        if t.is_empty() {
            continue;
        }
        let parse = |c: &str| c.parse::<f64>().map_err(|_| bad(format!("line {}: not a number: {c:?}", ln + 2)));
        pts.push((parse(cells.get(ni).copied().unwrap_or(""))?, parse(t)?));
    }
    Ok(pts)
}
