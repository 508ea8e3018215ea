use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{stage, ExperimentConfig, ModelKind, SaveWhen};
use super::io::{write_batch, write_snapshots, CeTable, MANIFEST_FILE, SNAPSHOTS_FILE};
use super::manifest::{Recorder, RunManifest};
use crate::clocks::{adaptive_mem_threshold, innovation_window, ClockReport};
use crate::diffcore::{heun_sample_batch, karras_schedule, Denoiser, NoiseSchedule};
use crate::dissect::{
    basin_profile, build_plane, field_slice, uniform_cube_split, write_basin_csv, BasinConfig, SpectrumConfig,
    SpectrumMatrix, Splits, StateRaster, TransitionTensor,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_batch, EvalOptions, EvalSnapshot, HammingIndex};
use crate::models::{EmpiricalDenoiser, EnergyModel, RuleDenoiser};
use crate::rulekit::{
    count_valid, encode, generate_dataset, memorization_baselines, sample_uniform_alphabet, Dataset, RuleSpec, Sample,
    DEFAULT_BASELINE_DRAWS,
};
use crate::training::{
    ar_sample, load_checkpoint, per_position_ce, save_checkpoint, train_dsm, train_ntp, ArModel, CheckpointManifest, CheckpointView,
    MlpDenoiser, RngState, TrainHooks,
};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Re-run even when a complete manifest for the same config exists.
    pub force: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// The run directory already held a complete run of this config.
    pub skipped: bool,
}

pub const CLOCKS_FILE: &str = "clocks.json";

/// Runs gen → train/eval → clocks → dissect and writes the manifest last.
///
/// A complete manifest with the same config hash makes this a no-op unless
/// `opts.force` is set. A stage error still writes a manifest, marked
/// failed, and is returned as [`Error::Stage`].
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir = cfg.out_dir.clone();
    if let Ok(old) = RunManifest::read(&dir) {
        if old.is_complete() && old.config_hash == hash && !opts.force {
            return Ok(RunOutcome {
                manifest: old,
                skipped: true,
            });
        }
        if old.is_complete() && old.config_hash != hash && !opts.force {
            return Err(Error::config(
                "out_dir",
                format!("{} holds a different run; pass --force to replace it", dir.display()),
            ));
        }
        for f in &old.files {
            let _ = fs::remove_file(dir.join(&f.path));
        }
    }
    let _ = fs::remove_file(dir.join(MANIFEST_FILE));
    fs::create_dir_all(&dir)?;

    let mut rec = Recorder::new(&dir);
    let mut state = RunState::default();
    let stages: [(&str, StageFn); 4] = [("gen", stage_gen), ("train", stage_train), ("clocks", stage_clocks), ("dissect", stage_dissect)];
    for (name, f) in stages {
        let t0 = Instant::now();
        let res = f(cfg, &mut rec, &mut state);
        rec.time(name, t0.elapsed().as_secs_f64());
        if let Err(e) = res {
            let msg = e.to_string();
            rec.finish(&cfg.name, &hash, Some((name, msg.clone())))?;
            return Err(Error::Stage {
                stage: name.to_string(),
                msg,
            });
        }
    }
    let manifest = rec.finish(&cfg.name, &hash, None)?;
    Ok(RunOutcome {
        manifest,
        skipped: false,
    })
}

type StageFn = fn(&ExperimentConfig, &mut Recorder, &mut RunState) -> Result<()>;

enum Trained {
    Analytic(Box<dyn Denoiser>),
    Dsm(MlpDenoiser),
    Ar,
}

#[derive(Default)]
struct RunState {
    dataset: Option<Dataset>,
    support: u128,
    held_out: Vec<Sample>,
    cube: Vec<Sample>,
    snapshots: Vec<EvalSnapshot>,
    raster: StateRaster,
    spectrum: Option<SpectrumMatrix>,
    model: Option<Trained>,
}

fn put_json<T: serde::Serialize>(rec: &mut Recorder, name: &str, v: &T) -> Result<()> {
    let p = rec.dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v)?)?;
    rec.add(p);
    Ok(())
}

fn stage_gen(cfg: &ExperimentConfig, rec: &mut Recorder, st: &mut RunState) -> Result<()> {
    let rule = cfg.rule_spec()?;
    let resolved = rec.dir.join("config.toml");
    fs::write(&resolved, cfg.to_toml()?)?;
    rec.add(resolved);

    let seeds = [
        ("dataset", cfg.dataset_seed()),
        ("train", cfg.train_seed()),
        ("eval", cfg.eval_seed()),
        ("heldOut", cfg.stage_seed(stage::HELD_OUT)),
        ("cube", cfg.stage_seed(stage::CUBE)),
        ("spectrum", cfg.stage_seed(stage::SPECTRUM)),
        ("basin", cfg.stage_seed(stage::BASIN)),
        ("baseline", cfg.stage_seed(stage::BASELINE)),
    ];
    for (k, v) in seeds {
        rec.seeds.insert(k.to_string(), v);
    }

    let ds = generate_dataset(&rule, cfg.dataset.n, cfg.dataset_seed())?;
    let p = rec.dir.join("dataset.csv");
    ds.write(&p)?;
    rec.add(p);
    st.support = count_valid(&rule)?;
    let base = memorization_baselines(&ds, DEFAULT_BASELINE_DRAWS, cfg.stage_seed(stage::BASELINE))?;
    put_json(rec, "baselines.json", &base)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(stage::HELD_OUT));
    st.held_out = ds.held_out(cfg.eval.held_out, &mut rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(stage::CUBE));
    st.cube = (0..cfg.eval.cube).map(|_| sample_uniform_alphabet(&rule, &mut rng)).collect();
    st.dataset = Some(ds);
    Ok(())
}

fn encode_all(rule: &RuleSpec, s: &[Sample]) -> Array2<f64> {
    let w = rule.encoded_dim();
    let mut a = Array2::zeros((s.len(), w));
    for (i, x) in s.iter().enumerate() {
        for (j, v) in encode(rule, x).into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Everything the per-checkpoint evaluation needs.
struct Evaluator<'a> {
    cfg: &'a ExperimentConfig,
    ds: &'a Dataset,
    index: HammingIndex,
    opts: EvalOptions,
    z: Array2<f64>,
    sched: NoiseSchedule,
    last_step: u64,
    train_enc: Array2<f64>,
    held_enc: Array2<f64>,
    cube_enc: Array2<f64>,
    held_out: &'a [Sample],
    cube: &'a [Sample],
    ce: CeTable,
    spectrum_cfg: Option<SpectrumConfig>,
    spectrum: Option<SpectrumMatrix>,
    snapshots: Vec<EvalSnapshot>,
    raster: StateRaster,
    files: Vec<PathBuf>,
    dir: PathBuf,
    support: u128,
    /// Both onsets were resolved at the last recorded checkpoint.
    resolved: bool,
}

impl<'a> Evaluator<'a> {
    fn new(cfg: &'a ExperimentConfig, st: &'a RunState, dir: &Path) -> Result<Self> {
        let ds = st.dataset.as_ref().expect("gen ran");
        let rule = ds.rule();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval_seed());
        let z = Array2::from_shape_simple_fn((cfg.eval.seeds, rule.encoded_dim()), || StandardNormal.sample(&mut rng));
        let cube_enc = if rule.is_binary() {
            uniform_cube_split(rule.encoded_dim(), cfg.eval.cube, cfg.stage_seed(stage::CUBE))
        } else {
            encode_all(rule, &st.cube)
        };
        let spectrum_cfg = cfg.dissect.spectrum.as_ref().map(|s| SpectrumConfig {
            repeats: s.repeats,
            weighted: s.weighted,
            noise_seed: cfg.stage_seed(stage::SPECTRUM),
            edm: cfg.edm,
            ..SpectrumConfig::default()
        });
        let spectrum = spectrum_cfg.as_ref().map(|c| SpectrumMatrix::new(c, cfg.stage_seed(stage::CUBE)));
        Ok(Self {
            cfg,
            ds,
            index: HammingIndex::new(ds),
            opts: EvalOptions {
                quant: cfg.eval.quant,
                group_match_positional: cfg.eval.group_match_positional,
            },
            z,
            sched: karras_schedule(&cfg.edm, cfg.sampler.steps, cfg.sampler.rho)?,
            last_step: *cfg.checkpoints().last().unwrap_or(&0),
            train_enc: ds.encoded(),
            held_enc: encode_all(rule, &st.held_out),
            cube_enc,
            held_out: &st.held_out,
            cube: &st.cube,
            ce: CeTable::new(),
            spectrum_cfg,
            spectrum,
            snapshots: Vec::new(),
            raster: StateRaster::new(),
            files: Vec::new(),
            dir: dir.to_path_buf(),
            support: st.support,
            resolved: false,
        })
    }

    fn is_final(&self, step: u64) -> bool {
        step == self.last_step || self.resolved
    }

    fn record(&mut self, step: u64, raw: ArrayView2<f64>) -> Result<()> {
        let snap = evaluate_batch(step, raw, self.ds, &self.index, &self.opts);
        if self.cfg.dissect.raster {
            self.raster.push(step, snap.state_labels.clone())?;
        }
        self.snapshots.push(snap);
        if self.cfg.eval.stop_when_resolved {
            let acc: Vec<(u64, f64)> = self.snapshots.iter().map(|s| (s.step, s.sample_acc)).collect();
            let mem: Vec<(u64, f64)> = self.snapshots.iter().map(|s| (s.step, s.sample_mem)).collect();
            let r = clocks_for(self.cfg, self.ds.len(), self.support, &acc, &mem);
            self.resolved = r.tau_mem.is_some() && (r.tau_rule.is_some() || r.discarded_tau_rule.is_some());
        }
        let save = match self.cfg.eval.save_samples {
            SaveWhen::All => true,
            SaveWhen::Final => self.is_final(step),
            SaveWhen::None => false,
        };
        if save {
            let f = write_batch(&self.dir.join("samples"), &format!("step_{step:08}"), raw, step, &self.cfg.rule, self.cfg.eval_seed())?;
            self.files.extend(f);
        }
        Ok(())
    }

    fn denoiser(&mut self, step: u64, den: &dyn Denoiser) -> Result<()> {
        let raw = heun_sample_batch(den, self.z.view(), &self.sched)?;
        self.record(step, raw.view())?;
        let every = self.cfg.dissect.spectrum.as_ref().is_some_and(|s| s.every_checkpoint);
        if every || self.is_final(step) {
            self.spectrum_at(step, den)?;
        }
        Ok(())
    }

    fn spectrum_at(&mut self, step: u64, den: &dyn Denoiser) -> Result<()> {
        if let (Some(c), Some(m)) = (&self.spectrum_cfg, &mut self.spectrum) {
            let splits = Splits {
                train: self.train_enc.view(),
                held_out: self.held_enc.view(),
                cube: self.cube_enc.view(),
            };
            m.add(den, &splits, c, step)?;
        }
        Ok(())
    }

    fn autoregressive(&mut self, step: u64, model: &ArModel) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.eval_seed());
        let gen: Vec<Sample> = (0..self.cfg.eval.seeds)
            .map(|_| ar_sample(model, &mut rng, self.cfg.model.temperature))
            .collect();
        let raw = encode_all(self.ds.rule(), &gen);
        self.record(step, raw.view())?;
        // An empty split (e.g. no held-out samples when N equals the
        // support) has no rows.
        for (name, split) in [("train", self.ds.samples()), ("heldOutValid", self.held_out), ("uniformCube", self.cube)] {
            if !split.is_empty() {
                self.ce.push(step, name, &per_position_ce(model, split));
            }
        }
        Ok(())
    }
}

impl TrainHooks<MlpDenoiser> for Evaluator<'_> {
    fn checkpoint(&mut self, v: &CheckpointView<'_, MlpDenoiser>) -> Result<()> {
        self.denoiser(v.step, v.model)
    }

    fn stop(&self) -> bool {
        self.resolved
    }
}

impl TrainHooks<ArModel> for Evaluator<'_> {
    fn checkpoint(&mut self, v: &CheckpointView<'_, ArModel>) -> Result<()> {
        self.autoregressive(v.step, v.model)
    }

    fn stop(&self) -> bool {
        self.resolved
    }
}

fn analytic(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Box<dyn Denoiser>> {
    let rule = ds.rule();
    Ok(match cfg.model.kind {
        ModelKind::Empirical => Box::new(EmpiricalDenoiser::new(ds.encoded())?),
        ModelKind::RuleOptimal => Box::new(RuleDenoiser::new(rule)?),
        ModelKind::Energy => Box::new(EnergyModel::new(rule, cfg.model.energy)?),
        _ => unreachable!("trained models are handled separately"),
    })
}

fn stage_train(cfg: &ExperimentConfig, rec: &mut Recorder, st: &mut RunState) -> Result<()> {
    let dir = rec.dir.clone();
    let mut ev = Evaluator::new(cfg, st, &dir)?;
    let ds = st.dataset.as_ref().expect("gen ran");
    let tcfg = cfg.resolved_train();
    let hash = cfg.hash();
    let ck_dir = dir.join("checkpoints");
    let model = match cfg.model.kind {
        ModelKind::MlpDsm => {
            let m = train_dsm(&tcfg, &cfg.edm, ds, &mut ev)?;
            let man = CheckpointManifest {
                model: "dsm".into(),
                step: ev.snapshots.last().map_or(0, |s| s.step),
                sizes: m.net().sizes().to_vec(),
                activation: m.net().activation(),
                fourier_pairs: Some(m.fourier_pairs()),
                edm: Some(*m.edm()),
                config_hash: hash,
                rng: RngState::capture(&ChaCha8Rng::seed_from_u64(tcfg.seed)),
                params_file: String::new(),
                params_sha256: String::new(),
            };
            let (a, b) = save_checkpoint(&ck_dir, "final", m.net().params(), &man)?;
            rec.extend([a, b]);
            Trained::Dsm(m)
        }
        ModelKind::ArNtp => {
            let m = train_ntp(&tcfg, ds, &mut ev)?;
            let man = CheckpointManifest {
                model: "ar".into(),
                step: ev.snapshots.last().map_or(0, |s| s.step),
                sizes: m.net().sizes().to_vec(),
                activation: m.net().activation(),
                fourier_pairs: None,
                edm: None,
                config_hash: hash,
                rng: RngState::capture(&ChaCha8Rng::seed_from_u64(tcfg.seed)),
                params_file: String::new(),
                params_sha256: String::new(),
            };
            let (a, b) = save_checkpoint(&ck_dir, "final", m.net().params(), &man)?;
            rec.extend([a, b]);
            let p = dir.join("ar_ce.csv");
            ev.ce.write(&p)?;
            rec.add(p);
            Trained::Ar
        }
        _ => {
            let den = analytic(cfg, ds)?;
            ev.denoiser(0, den.as_ref())?;
            Trained::Analytic(den)
        }
    };
    let p = dir.join(SNAPSHOTS_FILE);
    write_snapshots(&p, &ev.snapshots)?;
    rec.add(p);
    rec.extend(std::mem::take(&mut ev.files));
    let (snaps, raster, spectrum) = (std::mem::take(&mut ev.snapshots), std::mem::take(&mut ev.raster), ev.spectrum.take());
    drop(ev);
    st.snapshots = snaps;
    st.raster = raster;
    st.spectrum = spectrum;
    st.model = Some(model);
    Ok(())
}

/// Clock report of a snapshot trajectory under the configured criteria.
pub fn clocks_for(cfg: &ExperimentConfig, n: usize, support: u128, acc: &[(u64, f64)], mem: &[(u64, f64)]) -> ClockReport {
    let on = &cfg.eval.onset;
    let thr = on.mem_threshold.unwrap_or_else(|| adaptive_mem_threshold(n as u64, support).0);
    innovation_window(acc, mem, &on.criterion("sampleAcc", on.rule_threshold), &on.criterion("sampleMem", thr))
}

fn stage_clocks(cfg: &ExperimentConfig, rec: &mut Recorder, st: &mut RunState) -> Result<()> {
    let acc: Vec<(u64, f64)> = st.snapshots.iter().map(|s| (s.step, s.sample_acc)).collect();
    let mem: Vec<(u64, f64)> = st.snapshots.iter().map(|s| (s.step, s.sample_mem)).collect();
    let report = clocks_for(cfg, cfg.dataset.n, st.support, &acc, &mem);
    put_json(rec, CLOCKS_FILE, &report)
}

fn stage_dissect(cfg: &ExperimentConfig, rec: &mut Recorder, st: &mut RunState) -> Result<()> {
    let dir = rec.dir.clone();
    let ds = st.dataset.as_ref().expect("gen ran");
    if cfg.dissect.raster && !st.raster.steps.is_empty() {
        let p = dir.join("raster.csv");
        st.raster.write_csv(&p)?;
        rec.add(p);
        let tensor = TransitionTensor::from_raster(&st.raster)?;
        put_json(rec, "transitions.json", &tensor)?;
        if !cfg.dissect.windows.is_empty() {
            let agg = cfg
                .dissect
                .windows
                .iter()
                .map(|w| tensor.aggregate(w))
                .collect::<Result<Vec<_>>>()?;
            put_json(rec, "transition_windows.json", &agg)?;
        }
    }
    if let Some(m) = &st.spectrum {
        let p = dir.join("spectrum.csv");
        m.write_csv(&p)?;
        rec.add(p);
    }
    let den: &dyn Denoiser = match st.model.as_ref().expect("train ran") {
        Trained::Analytic(d) => d.as_ref(),
        Trained::Dsm(m) => m,
        Trained::Ar => return Ok(()),
    };
    if let Some(f) = &cfg.dissect.field {
        let plane = build_plane(&ds.samples()[f.anchor], ds.rule())?;
        for (i, &sigma) in f.sigmas.iter().enumerate() {
            let slice = field_slice(den, &plane, sigma)?;
            let files = slice.write(&dir.join("field"), &format!("field_{i:02}"), &plane, st.snapshots.last().map(|s| s.step))?;
            rec.extend(files);
        }
    }
    if let Some(b) = &cfg.dissect.basin {
        let bc = BasinConfig {
            sigma: b.sigma,
            resamples: b.resamples,
            bootstrap_seed: cfg.stage_seed(stage::BASIN),
            ..BasinConfig::default()
        };
        let anchors: Vec<usize> = (0..b.anchors.min(ds.len())).collect();
        let profiles = b
            .directions
            .iter()
            .map(|&d| basin_profile(den, ds, &anchors, d, &bc))
            .collect::<Result<Vec<_>>>()?;
        let p = dir.join("basin.csv");
        write_basin_csv(&p, &profiles)?;
        rec.add(p);
        let skipped: Vec<(String, usize)> = profiles.iter().map(|p| (p.direction.name().to_string(), p.skipped)).collect();
        put_json(rec, "basin_skipped.json", &skipped)?;
    }
    Ok(())
}

/// A finished run reloaded from disk.
pub struct OpenedRun {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    /// `None` for autoregressive runs.
    pub denoiser: Option<Box<dyn Denoiser>>,
}

/// Reloads the resolved config, dataset and (for denoising models) the
/// final denoiser of a run directory.
pub fn open_run(dir: &Path) -> Result<OpenedRun> {
    let mut config = ExperimentConfig::load(&dir.join("config.toml"))?;
    config.out_dir = dir.to_path_buf();
    let dataset = Dataset::read(&dir.join("dataset.csv"))?;
    let denoiser: Option<Box<dyn Denoiser>> = match config.model.kind {
        ModelKind::ArNtp => None,
        ModelKind::MlpDsm => {
            let (man, params) = load_checkpoint(&dir.join("checkpoints").join("final.json"))?;
            let net = crate::training::Mlp::from_params(&man.sizes, man.activation, params)?;
            let edm = man.edm.unwrap_or(config.edm);
            Some(Box::new(MlpDenoiser::from_net(net, edm, man.fourier_pairs.unwrap_or(0))?))
        }
        _ => Some(analytic(&config, &dataset)?),
    };
    Ok(OpenedRun {
        config,
        dataset,
        denoiser,
    })
}

impl OpenedRun {
    /// Spectrum of the final denoiser on the run's own train, held-out and
    /// cube splits.
    pub fn spectrum(&self, repeats: usize, weighted: bool) -> Result<SpectrumMatrix> {
        let den = self
            .denoiser
            .as_deref()
            .ok_or_else(|| Error::Unsupported("spectrum needs a denoising model".into()))?;
        let cfg = &self.config;
        let rule = self.dataset.rule();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(stage::HELD_OUT));
        let held = encode_all(rule, &self.dataset.held_out(cfg.eval.held_out, &mut rng)?);
        let cube = if rule.is_binary() {
            uniform_cube_split(rule.encoded_dim(), cfg.eval.cube, cfg.stage_seed(stage::CUBE))
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.stage_seed(stage::CUBE));
            let s: Vec<Sample> = (0..cfg.eval.cube).map(|_| sample_uniform_alphabet(rule, &mut rng)).collect();
            encode_all(rule, &s)
        };
        let sc = SpectrumConfig {
            repeats,
            weighted,
            noise_seed: cfg.stage_seed(stage::SPECTRUM),
            edm: cfg.edm,
            ..SpectrumConfig::default()
        };
        let mut m = SpectrumMatrix::new(&sc, cfg.stage_seed(stage::CUBE));
        let train = self.dataset.encoded();
        let splits = Splits {
            train: train.view(),
            held_out: held.view(),
            cube: cube.view(),
        };
        let step = *cfg.checkpoints().last().unwrap_or(&0);
        m.add(den, &splits, &sc, step)?;
        Ok(m)
    }
}
