use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{set_dotted, ExperimentConfig};
use super::run::{run_experiment, RunOptions, CLOCKS_FILE};
use crate::clocks::{fit_power_law, ClockReport, PowerLawFit};
use crate::error::{Error, Result};

/// One sweep member: the value of the swept key and how its run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepRow {
    pub value: String,
    pub out_dir: PathBuf,
    pub ok: bool,
    pub error: Option<String>,
    pub config_hash: Option<String>,
    pub clocks: Option<ClockReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SweepSummary {
    pub key: String,
    pub rows: Vec<SweepRow>,
    /// Fit of `tau_mem` against the swept value, when the key is
    /// `dataset.n` and at least two runs found `tau_mem`.
    pub fit: Option<PowerLawFit>,
}

/// Parses `key=v1,v2,...` into the key and TOML values (integers, floats,
/// booleans, or bare strings).
pub fn parse_axis(axis: &str) -> Result<(String, Vec<toml::Value>)> {
    let (k, vs) = axis
        .split_once('=')
        .ok_or_else(|| Error::config("axis", "expected key=v1,v2,..."))?;
    let vals = vs
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            if let Ok(i) = s.parse::<i64>() {
                toml::Value::Integer(i)
            } else if let Ok(f) = s.parse::<f64>() {
                toml::Value::Float(f)
            } else if let Ok(b) = s.parse::<bool>() {
                toml::Value::Boolean(b)
            } else {
                toml::Value::String(s.to_string())
            }
        })
        .collect::<Vec<_>>();
    if vals.is_empty() {
        return Err(Error::config("axis", "no values given"));
    }
    Ok((k.trim().to_string(), vals))
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Member configs of a sweep: one per value, each writing to
/// `<out_dir>/<key>=<value>`.
pub fn sweep_configs(template: &ExperimentConfig, key: &str, values: &[toml::Value]) -> Result<Vec<ExperimentConfig>> {
    let base: toml::Table = toml::Table::try_from(template).map_err(|e| Error::config("config", e.to_string()))?;
    values
        .iter()
        .map(|v| {
            let mut t = base.clone();
            set_dotted(&mut t, key, v.clone())?;
            let mut cfg: ExperimentConfig = toml::Value::Table(t)
                .try_into()
                .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
            cfg.out_dir = template.out_dir.join(format!("{key}={}", show(v)));
            cfg.name = format!("{}/{key}={}", template.name, show(v));
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

/// Runs every member (concurrently, within the current rayon pool),
/// isolating failures, then writes `sweep.json` and `sweep.csv` into the
/// template's output directory.
pub fn sweep(template: &ExperimentConfig, key: &str, values: &[toml::Value], opts: &RunOptions) -> Result<SweepSummary> {
    let cfgs = sweep_configs(template, key, values)?;
    let rows: Vec<SweepRow> = cfgs
        .par_iter()
        .zip(values)
        .map(|(cfg, v)| {
            let res = run_experiment(cfg, opts);
            let clocks = fs::read(cfg.out_dir.join(CLOCKS_FILE))
                .ok()
                .and_then(|b| serde_json::from_slice(&b).ok());
            match res {
                Ok(out) => SweepRow {
                    value: show(v),
                    out_dir: cfg.out_dir.clone(),
                    ok: true,
                    error: None,
                    config_hash: Some(out.manifest.config_hash),
                    clocks,
                },
                Err(e) => SweepRow {
                    value: show(v),
                    out_dir: cfg.out_dir.clone(),
                    ok: false,
                    error: Some(e.to_string()),
                    config_hash: None,
                    clocks: None,
                },
            }
        })
        .collect();
    let fit = if key == "dataset.n" {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| Some((r.value.parse::<f64>().ok()?, r.clocks.as_ref()?.tau_mem? as f64)))
            .collect();
        (pts.len() >= 2).then(|| fit_power_law(&pts).ok()).flatten()
    } else {
        None
    };
    let summary = SweepSummary {
        key: key.to_string(),
        rows,
        fit,
    };
    write_summary(&template.out_dir, &summary)?;
    Ok(summary)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary(dir: &Path, s: &SweepSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("sweep.json"), serde_json::to_vec_pretty(s)?)?;
    let mut csv = String::from("value,ok,tau_rule,tau_mem,memorize_first,rule_censored,mem_censored,error\n");
    for r in &s.rows {
        let c = r.clocks.as_ref();
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.value,
            r.ok,
            opt(c.and_then(|c| c.tau_rule)),
            opt(c.and_then(|c| c.tau_mem)),
            opt(c.map(|c| c.flags.memorize_first)),
            opt(c.map(|c| c.flags.rule_censored)),
            opt(c.map(|c| c.flags.mem_censored)),
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        )
        .unwrap();
    }
    fs::write(dir.join("sweep.csv"), csv)?;
    if s.key == "dataset.n" {
        let mut t = String::from("n,tau\n");
        for r in &s.rows {
            writeln!(t, "{},{}", r.value, opt(r.clocks.as_ref().and_then(|c| c.tau_mem))).unwrap();
        }
        fs::write(dir.join("tau_vs_n.csv"), t)?;
    }
    Ok(())
}
