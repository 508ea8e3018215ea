use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lab_core::clocks::{adaptive_mem_threshold, fit_power_law, innovation_window, ClockReport};
use lab_core::dissect::{
    basin_profile, build_plane, field_slice, write_basin_csv, BasinConfig, Direction, Split, StateRaster,
    TransitionTensor, Window, BAND,
};
use lab_core::expcli::{
    init_threads, open_run, parse_axis, read_batch, read_points, read_snapshots, run_experiment, set_dotted, stage,
    sweep, ExperimentConfig, RunManifest, RunOptions, CLOCKS_FILE, SNAPSHOTS_FILE,
};
use lab_core::metrics::{evaluate_batch, EvalOptions, HammingIndex};
use lab_core::rulekit::{count_valid, generate_dataset, memorization_baselines, DEFAULT_BASELINE_DRAWS};

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;

#[derive(Parser)]
#[command(name = "lab", version, about = "Two-clock rule-learning and memorization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the dataset and memorization baselines of a config.
    Gen(ConfigArgs),
    /// Run the full pipeline (gen, train, eval, clocks, dissect).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace an existing run in the output directory.
        #[arg(long)]
        force: bool,
    },
    /// Re-evaluate saved sample batches of a run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// A specific batch sidecar; defaults to every batch under samples/.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Recompute onset clocks from run snapshots.
    Clocks {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed memorization threshold instead of the adaptive one.
        #[arg(long)]
        mem_threshold: Option<f64>,
        #[arg(long)]
        sustain: Option<usize>,
        /// Smooth with an EMA of this half-life (in checkpoints).
        #[arg(long)]
        ema: Option<f64>,
    },
    /// Fit tau ≈ c·N^alpha to a CSV with `n` and `tau` columns.
    Fit {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mechanistic probes of a finished run.
    Dissect {
        #[command(subcommand)]
        what: DissectCmd,
    },
    /// Run one config per value of a swept key.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `key=v1,v2,...`, e.g. `dataset.n=32,64,128`.
        #[arg(long)]
        axis: String,
        #[arg(long)]
        force: bool,
    },
    /// Summarize a run directory and verify its files.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum DissectCmd {
    /// Transition probabilities of the state raster over step windows.
    Raster {
        #[arg(long)]
        run: PathBuf,
        /// `name:start:end`; repeatable. Defaults to the whole run.
        #[arg(long = "window")]
        windows: Vec<String>,
    },
    /// Per-σ loss on train, held-out and cube splits.
    Spectrum {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 8)]
        repeats: usize,
        #[arg(long)]
        weighted: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score-magnitude and projected-velocity grids on the anchor plane.
    Field {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, num_args = 1.., default_values_t = [0.2, 0.5])]
        sigma: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        anchor: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 1D basin profiles from training anchors.
    Basin {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 30)]
        anchors: usize,
        /// Repeatable; defaults to all directions.
        #[arg(long = "direction")]
        directions: Vec<Direction>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, `key=value`; repeatable.
    #[arg(long = "set")]
    sets: Vec<String>,
    /// Override `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if !self.sets.is_empty() {
            let mut t = toml::Table::try_from(&cfg).context("serializing config")?;
            for s in &self.sets {
                let (key, vals) = parse_axis(s)?;
                let v = if vals.len() == 1 {
                    vals.into_iter().next().unwrap()
                } else {
                    toml::Value::Array(vals)
                };
                set_dotted(&mut t, &key, v)?;
            }
            cfg = toml::Value::Table(t)
                .try_into()
                .map_err(|e: toml::de::Error| lab_core::Error::Config {
                    field: "set".into(),
                    msg: e.message().to_string(),
                })?;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    fs::write(path, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {}", path.display()))
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let rule = cfg.rule_spec()?;
    let ds = generate_dataset(&rule, cfg.dataset.n, cfg.dataset_seed())?;
    fs::create_dir_all(&cfg.out_dir)?;
    ds.write(&cfg.out_dir.join("dataset.csv"))?;
    let base = memorization_baselines(&ds, DEFAULT_BASELINE_DRAWS, cfg.stage_seed(stage::BASELINE))?;
    write_json(&cfg.out_dir.join("baselines.json"), &base)?;
    println!(
        "{}: {} samples of {} valid, written to {}",
        cfg.rule,
        ds.len(),
        count_valid(&rule)?,
        cfg.out_dir.display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, force: bool) -> Result<()> {
    let out = run_experiment(cfg, &RunOptions { force })?;
    if out.skipped {
        println!("{}: complete run with the same config exists, skipped", cfg.out_dir.display());
    }
    let clocks: ClockReport = serde_json::from_slice(&fs::read(cfg.out_dir.join(CLOCKS_FILE))?)?;
    print_json(&clocks)
}

fn eval(run: &Path, samples: Option<&Path>) -> Result<()> {
    let opened = open_run(run)?;
    let cfg = &opened.config;
    let batches = match samples {
        Some(p) => vec![p.to_path_buf()],
        None => {
            let mut v: Vec<PathBuf> = fs::read_dir(run.join("samples"))
                .context("run has no samples/ directory")?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            v.sort();
            v
        }
    };
    let index = HammingIndex::new(&opened.dataset);
    let opts = EvalOptions {
        quant: cfg.eval.quant,
        group_match_positional: cfg.eval.group_match_positional,
    };
    println!("step,sample_acc,group_acc,sample_mem,group_mem,invalid_frac");
    for b in batches {
        let (side, raw) = read_batch(&b)?;
        if side.rule != cfg.rule {
            bail!("{} was generated for rule {}, run uses {}", b.display(), side.rule, cfg.rule);
        }
        let s = evaluate_batch(side.step, raw.view(), &opened.dataset, &index, &opts);
        println!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.step, s.sample_acc, s.group_acc, s.sample_mem, s.group_mem, s.invalid_frac
        );
    }
    Ok(())
}

fn clocks(runs: &[PathBuf], out: Option<&Path>, mem_threshold: Option<f64>, sustain: Option<usize>, ema: Option<f64>) -> Result<()> {
    let mut reports = Vec::new();
    println!("run,n,tau_rule,tau_mem,window,memorize_first");
    for run in runs {
        let cfg = ExperimentConfig::load(&run.join("config.toml"))?;
        let snaps = read_snapshots(&run.join(SNAPSHOTS_FILE))?;
        let acc: Vec<(u64, f64)> = snaps.iter().map(|s| (s.step, s.sample_acc)).collect();
        let mem: Vec<(u64, f64)> = snaps.iter().map(|s| (s.step, s.sample_mem)).collect();
        let mut on = cfg.eval.onset.clone();
        if let Some(k) = sustain {
            on.sustain_count = k;
        }
        if let Some(h) = ema {
            on.use_ema = true;
            on.ema_half_life = h;
        }
        let thr = match mem_threshold.or(on.mem_threshold) {
            Some(t) => t,
            None => adaptive_mem_threshold(cfg.dataset.n as u64, count_valid(&cfg.rule_spec()?)?).0,
        };
        let rc = on.criterion("sampleAcc", on.rule_threshold);
        let mc = on.criterion("sampleMem", thr);
        rc.validate()?;
        mc.validate()?;
        let r = innovation_window(&acc, &mem, &rc, &mc);
        let o = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        println!(
            "{},{},{},{},{},{}",
            run.display(),
            cfg.dataset.n,
            o(r.tau_rule),
            o(r.tau_mem),
            o(r.window_length()),
            r.flags.memorize_first
        );
        reports.push(serde_json::json!({ "run": run, "n": cfg.dataset.n, "clocks": r }));
    }
    if let Some(p) = out {
        write_json(p, &reports)?;
    }
    Ok(())
}

fn fit(points: &Path, out: Option<&Path>) -> Result<()> {
    let pts = read_points(points)?;
    let f = fit_power_law(&pts)?;
    if let Some(p) = out {
        write_json(p, &f)?;
    }
    print_json(&f)
}

fn parse_window(s: &str) -> Result<Window> {
    let parts: Vec<&str> = s.split(':').collect();
    let [name, a, b] = parts[..] else {
        return Err(lab_core::Error::Config {
            field: "window".into(),
            msg: format!("expected name:start:end, got {s:?}"),
        }
        .into());
    };
    let num = |v: &str| {
        v.parse::<u64>().map_err(|_| lab_core::Error::Config {
            field: "window".into(),
            msg: format!("not a step: {v:?}"),
        })
    };
    Ok(Window::new(name, num(a)?, num(b)?))
}

fn dissect(what: DissectCmd) -> Result<()> {
    match what {
        DissectCmd::Raster { run, windows } => {
            let raster = StateRaster::read_csv(&run.join("raster.csv"))?;
            let tensor = TransitionTensor::from_raster(&raster)?;
            let windows = if windows.is_empty() {
                let (a, b) = (raster.steps[0], *raster.steps.last().unwrap());
                vec![Window::new("all", a, b)]
            } else {
                windows.iter().map(|w| parse_window(w)).collect::<Result<_>>()?
            };
            let agg = windows.iter().map(|w| tensor.aggregate(w)).collect::<lab_core::Result<Vec<_>>>()?;
            print_json(&agg)
        }
        DissectCmd::Spectrum { run, repeats, weighted, out } => {
            let opened = open_run(&run)?;
            let m = opened.spectrum(repeats, weighted)?;
            let step = *m.steps.last().unwrap_or(&0);
            if let Some(p) = &out {
                m.write_csv(p)?;
            }
            println!("split,band_mean_loss");
            for split in [Split::Train, Split::HeldOutValid, Split::UniformCube] {
                let band: Vec<f64> = m
                    .series(split, step)
                    .iter()
                    .filter(|p| p.sigma >= BAND.0 && p.sigma <= BAND.1)
                    .map(|p| p.loss)
                    .collect();
                println!("{},{:.6}", split.name(), band.iter().sum::<f64>() / band.len().max(1) as f64);
            }
            Ok(())
        }
        DissectCmd::Field { run, sigma, anchor, out } => {
            let opened = open_run(&run)?;
            let den = opened.denoiser.as_deref().context("field slices need a denoising model")?;
            let ds = &opened.dataset;
            if anchor >= ds.len() {
                bail!("anchor {anchor} out of range for {} training samples", ds.len());
            }
            let plane = build_plane(&ds.samples()[anchor], ds.rule())?;
            let dir = out.unwrap_or_else(|| run.join("field"));
            for (i, &s) in sigma.iter().enumerate() {
                let slice = field_slice(den, &plane, s)?;
                for f in slice.write(&dir, &format!("cli_field_{i:02}"), &plane, None)? {
                    println!("{}", f.display());
                }
            }
            Ok(())
        }
        DissectCmd::Basin { run, sigma, anchors, directions, out } => {
            let opened = open_run(&run)?;
            let den = opened.denoiser.as_deref().context("basin profiles need a denoising model")?;
            let ds = &opened.dataset;
            let dirs = if directions.is_empty() { Direction::ALL.to_vec() } else { directions };
            let bc = BasinConfig {
                sigma,
                bootstrap_seed: opened.config.stage_seed(stage::BASIN),
                ..BasinConfig::default()
            };
            let idx: Vec<usize> = (0..anchors.min(ds.len())).collect();
            let profiles = dirs
                .iter()
                .map(|&d| basin_profile(den, ds, &idx, d, &bc))
                .collect::<lab_core::Result<Vec<_>>>()?;
            let p = out.unwrap_or_else(|| run.join("cli_basin.csv"));
            write_basin_csv(&p, &profiles)?;
            for pr in &profiles {
                let cross = pr.t.iter().zip(&pr.exact_match.mean).find(|(_, m)| **m < 0.5).map(|(t, _)| *t);
                println!(
                    "{}: {} anchors ({} skipped), exact match drops below 0.5 at t = {}",
                    pr.direction.name(),
                    pr.anchors.len(),
                    pr.skipped,
                    cross.map_or("never".to_string(), |t| format!("{t:.3}"))
                );
            }
            println!("{}", p.display());
            Ok(())
        }
    }
}

fn report(run: &Path) -> Result<()> {
    let m = RunManifest::read(run)?;
    println!("{} [{:?}] config {}", m.name, m.status, &m.config_hash[..12]);
    if let (Some(s), Some(e)) = (&m.failed_stage, &m.error) {
        println!("failed in {s}: {e}");
    }
    for s in &m.stages {
        println!("  {:<8} {:>9.2}s", s.stage, s.seconds);
    }
    let bad = m.verify(run)?;
    println!("{} files, {} mismatched", m.files.len(), bad.len());
    for b in &bad {
        println!("  changed or missing: {b}");
    }
    if let Ok(snaps) = read_snapshots(&run.join(SNAPSHOTS_FILE)) {
        if let Some(s) = snaps.last() {
            println!(
                "final step {}: sampleAcc {:.4} sampleMem {:.4} invalid {:.4}",
                s.step, s.sample_acc, s.sample_mem, s.invalid_frac
            );
        }
    }
    if let Ok(b) = fs::read(run.join(CLOCKS_FILE)) {
        let c: ClockReport = serde_json::from_slice(&b)?;
        println!(
            "tau_rule {:?} tau_mem {:?} window {:?} memorize_first {}",
            c.tau_rule, c.tau_mem, c.window_length(), c.flags.memorize_first
        );
    }
    if !bad.is_empty() {
        bail!("{} files do not match the manifest", bad.len());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.cmd {
        Cmd::Gen(c) => gen(&c.load()?),
        Cmd::Train { cfg, force } => train(&cfg.load()?, force),
        Cmd::Eval { run, samples } => eval(&run, samples.as_deref()),
        Cmd::Clocks { runs, out, mem_threshold, sustain, ema } => clocks(&runs, out.as_deref(), mem_threshold, sustain, ema),
        Cmd::Fit { points, out } => fit(&points, out.as_deref()),
        Cmd::Dissect { what } => dissect(what),
        Cmd::Sweep { cfg, axis, force } => {
            let cfg = cfg.load()?;
            let (key, vals) = parse_axis(&axis)?;
            let s = sweep(&cfg, &key, &vals, &RunOptions { force })?;
            for r in &s.rows {
                let c = r.clocks.as_ref();
                println!(
                    "{key}={}: {} tau_rule {:?} tau_mem {:?}",
                    r.value,
                    if r.ok { "ok" } else { "FAILED" },
                    c.and_then(|c| c.tau_rule),
                    c.and_then(|c| c.tau_mem)
                );
                if let Some(e) = &r.error {
                    println!("  {e}");
                }
            }
            if let Some(f) = &s.fit {
                println!("tau_mem ≈ {:.4}·N^{:.4} (r2 {:.4})", f.c, f.alpha, f.r2);
            }
            if s.rows.iter().any(|r| !r.ok) {
                return Err(lab_core::Error::Stage {
                    stage: "sweep".into(),
                    msg: "some members failed".into(),
                }
                .into());
            }
            Ok(())
        }
        Cmd::Report { run } => report(&run),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<lab_core::Error>()) {
        Some(lab_core::Error::Config { .. } | lab_core::Error::InvalidRule(_)) => EXIT_CONFIG,
        Some(lab_core::Error::Stage { .. }) => EXIT_STAGE,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
