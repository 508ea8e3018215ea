use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clocks::{Direction as OnsetDirection, OnsetCriterion, DEFAULT_EMA_HALF_LIFE, DEFAULT_SUSTAIN, RULE_THRESHOLD};
use crate::diffcore::{EdmConfig, DEFAULT_RHO, DEFAULT_STEPS};
use crate::dissect::{Direction, Window, BASIN_ANCHORS, BASIN_SIGMA, DEFAULT_REPEATS};
use crate::error::{Error, Result};
use crate::metrics::QuantConfig;
use crate::models::EnergyConfig;
use crate::rulekit::RuleSpec;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ModelKind {
    Empirical,
    RuleOptimal,
    Energy,
    MlpDsm,
    ArNtp,
}

impl ModelKind {
    pub fn is_trained(self) -> bool {
        matches!(self, ModelKind::MlpDsm | ModelKind::ArNtp)
    }

    pub fn is_denoiser(self) -> bool {
        self != ModelKind::ArNtp
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub energy: EnergyConfig,
    /// Sampling temperature of the autoregressive model.
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::MlpDsm,
            energy: EnergyConfig::default(),
            temperature: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub rho: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            rho: DEFAULT_RHO,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaveWhen {
    None,
    Final,
    All,
}

/// Onset settings shared by the rule and memorization clocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnsetConfig {
    pub rule_threshold: f64,
    /// `None` selects `0.1 + N / support`.
    pub mem_threshold: Option<f64>,
    pub sustain_count: usize,
    pub use_ema: bool,
    pub ema_half_life: f64,
}

impl Default for OnsetConfig {
    fn default() -> Self {
        Self {
            rule_threshold: RULE_THRESHOLD,
            mem_threshold: None,
            sustain_count: DEFAULT_SUSTAIN,
            use_ema: false,
            ema_half_life: DEFAULT_EMA_HALF_LIFE,
        }
    }
}

impl OnsetConfig {
    pub fn criterion(&self, metric: &str, threshold: f64) -> OnsetCriterion {
        OnsetCriterion {
            metric: metric.to_string(),
            threshold,
            direction: OnsetDirection::Exceeds,
            sustain_count: self.sustain_count,
            use_ema: self.use_ema,
            ema_half_life: self.ema_half_life,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Number of fixed initial noises (or AR sampling streams).
    pub seeds: usize,
    pub quant: QuantConfig,
    pub group_match_positional: bool,
    pub onset: OnsetConfig,
    pub save_samples: SaveWhen,
    /// Held-out valid samples used by spectra and AR cross-entropy.
    pub held_out: usize,
    /// Uniform-cube samples used by spectra and AR cross-entropy.
    pub cube: usize,
    /// End training at the first checkpoint where both onsets are
    /// resolved. Onsets do not depend on later checkpoints, so the clocks
    /// are unchanged.
    pub stop_when_resolved: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: 2048,
            quant: QuantConfig::default(),
            group_match_positional: false,
            onset: OnsetConfig::default(),
            save_samples: SaveWhen::Final,
            held_out: 256,
            cube: 256,
            stop_when_resolved: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumRequest {
    pub repeats: usize,
    pub weighted: bool,
    /// Run at every checkpoint instead of only the final model.
    pub every_checkpoint: bool,
}

impl Default for SpectrumRequest {
    fn default() -> Self {
        Self {
            repeats: DEFAULT_REPEATS,
            weighted: false,
            every_checkpoint: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldRequest {
    pub sigmas: Vec<f64>,
    /// Dataset index of `x_a`.
    pub anchor: usize,
}

impl Default for FieldRequest {
    fn default() -> Self {
        Self {
            sigmas: vec![0.2, 0.5],
            anchor: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinRequest {
    pub sigma: f64,
    pub anchors: usize,
    pub directions: Vec<Direction>,
    pub resamples: usize,
}

impl Default for BasinRequest {
    fn default() -> Self {
        Self {
            sigma: BASIN_SIGMA,
            anchors: BASIN_ANCHORS,
            directions: Direction::ALL.to_vec(),
            resamples: crate::dissect::BOOTSTRAP_RESAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissectConfig {
    /// Per-seed state raster and transition counts.
    pub raster: bool,
    pub windows: Vec<Window>,
    pub spectrum: Option<SpectrumRequest>,
    pub field: Option<FieldRequest>,
    pub basin: Option<BasinRequest>,
}

impl Default for DissectConfig {
    fn default() -> Self {
        Self {
            raster: true,
            windows: Vec::new(),
            spectrum: None,
            field: None,
            basin: None,
        }
    }
}

/// Explicit per-stage seeds; absent entries derive from `master_seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedOverrides {
    pub dataset: Option<u64>,
    pub train: Option<u64>,
    pub eval: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    pub rule: String,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    /// Optimizer and network settings; `train.seed` is replaced by the
    /// derived training seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub edm: EdmConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub dissect: DissectConfig,
    #[serde(default)]
    pub seeds: SeedOverrides,
}

fn default_name() -> String {
    "run".to_string()
}

/// Stage ids for seed derivation.
pub mod stage {
    pub const DATASET: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const EVAL: u64 = 3;
    pub const HELD_OUT: u64 = 4;
    pub const CUBE: u64 = 5;
    pub const SPECTRUM: u64 = 6;
    pub const BASIN: u64 = 7;
    pub const BASELINE: u64 = 8;
}

/// Seed of stage `stage`: the first word of ChaCha8 stream `stage` keyed by
/// the master seed.
pub fn derive_seed(master: u64, stage: u64) -> u64 {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stage);
    rng.next_u64()
}

impl ExperimentConfig {
    pub fn rule_spec(&self) -> Result<RuleSpec> {
        self.rule
            .parse()
            .map_err(|e: Error| Error::config("rule", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let rule = self.rule_spec()?;
        if self.dataset.n == 0 {
            return Err(Error::config("dataset.n", "must be positive"));
        }
        if self.model.kind.is_trained() {
            self.train.validate().map_err(|e| prefix("train", e))?;
        }
        self.edm.validate().map_err(|e| prefix("edm", e))?;
        if self.sampler.steps == 0 || !(self.sampler.rho > 0.0) {
            return Err(Error::config("sampler", "need steps >= 1 and rho > 0"));
        }
        if self.eval.seeds == 0 {
            return Err(Error::config("eval.seeds", "must be positive"));
        }
        self.eval.quant.validate(&rule).map_err(|e| prefix("eval.quant", e))?;
        let on = &self.eval.onset;
        if on.sustain_count == 0 || !on.rule_threshold.is_finite() {
            return Err(Error::config("eval.onset", "need sustain_count >= 1 and a finite rule threshold"));
        }
        if on.mem_threshold.is_some_and(|t| !t.is_finite()) {
            return Err(Error::config("eval.onset.mem_threshold", "must be finite"));
        }
        if self.model.kind == ModelKind::ArNtp && !rule.is_binary() {
            return Err(Error::config("model.kind", "arNtp needs a binary rule"));
        }
        if self.model.kind == ModelKind::ArNtp && !(self.model.temperature >= 0.0) {
            return Err(Error::config("model.temperature", "must be non-negative"));
        }
        if let Some(w) = self.dissect.windows.iter().find(|w| w.start > w.end) {
            return Err(Error::config("dissect.windows", format!("window {:?} ends before it starts", w.name)));
        }
        if let Some(f) = &self.dissect.field {
            if f.sigmas.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::config("dissect.field.sigmas", "must be positive"));
            }
            if f.anchor >= self.dataset.n {
                return Err(Error::config("dissect.field.anchor", "outside the dataset"));
            }
        }
        if let Some(b) = &self.dissect.basin {
            if !(b.sigma > 0.0) {
                return Err(Error::config("dissect.basin.sigma", "must be positive"));
            }
        }
        if let Some(s) = &self.dissect.spectrum {
            if s.repeats == 0 {
                return Err(Error::config("dissect.spectrum.repeats", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn dataset_seed(&self) -> u64 {
        self.seeds.dataset.unwrap_or_else(|| derive_seed(self.master_seed, stage::DATASET))
    }

    pub fn train_seed(&self) -> u64 {
        self.seeds.train.unwrap_or_else(|| derive_seed(self.master_seed, stage::TRAIN))
    }

    pub fn eval_seed(&self) -> u64 {
        self.seeds.eval.unwrap_or_else(|| derive_seed(self.master_seed, stage::EVAL))
    }

    pub fn stage_seed(&self, stage: u64) -> u64 {
        derive_seed(self.master_seed, stage)
    }

    /// Training settings with the derived seed filled in.
    pub fn resolved_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.train_seed();
        t
    }

    /// Checkpoint steps at which evaluation runs; `[0]` for analytic models.
    pub fn checkpoints(&self) -> Vec<u64> {
        if self.model.kind.is_trained() {
            self.train.resolved_checkpoints()
        } else {
            vec![0]
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring `out_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.name = String::new();
        let v = serde_json::to_value(&c).expect("config serializes");
        crate::training::sha256_hex(canonical(&v).as_bytes())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let v: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        from_table(v, Path::new("<string>"))
    }

    /// Loads a TOML config, resolving `include = "other.toml"` (or a list)
    /// relative to the including file. Included files are merged first and
    /// the including file overrides them key by key.
    pub fn load(path: &Path) -> Result<Self> {
        let table = load_table(path, &mut Vec::new())?;
        from_table(table, path)
    }
}

fn prefix(section: &str, e: Error) -> Error {
    match e {
        Error::Config { field, msg } => Error::config(format!("{section}.{field}"), msg),
        other => Error::config(section, other.to_string()),
    }
}

fn from_table(table: toml::Table, path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Parse {
        path: path.to_path_buf(),
        msg: e.message().to_string(),
    })?;
    Ok(cfg)
}

fn load_table(path: &Path, stack: &mut Vec<PathBuf>) -> Result<toml::Table> {
    let canon = fs::canonicalize(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if stack.contains(&canon) {
        return Err(Error::config("include", format!("include cycle through {}", path.display())));
    }
    stack.push(canon);
    let text = fs::read_to_string(path)?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse {
        path: path.to_path_buf(),
        msg: e.message().to_string(),
    })?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(toml::Value::String(s)) => vec![s],
        Some(toml::Value::Array(a)) => a
            .into_iter()
            .map(|v| match v {
                toml::Value::String(s) => Ok(s),
                _ => Err(Error::config("include", "entries must be strings")),
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(Error::config("include", "must be a string or a list of strings")),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut merged = toml::Table::new();
    for inc in includes {
        let sub = load_table(&base.join(inc), stack)?;
        merge(&mut merged, sub);
    }
    merge(&mut merged, table);
    stack.pop();
    Ok(merged)
}

/// Deep merge of TOML tables; `over` wins on scalar conflicts.
pub fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key (`dataset.n`) in a TOML table, creating tables on the
/// way.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// JSON with object keys sorted, for hashing.
fn canonical(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Object(m) => {
            let sorted: BTreeMap<&String, String> = m.iter().map(|(k, v)| (k, canonical(v))).collect();
            let body: Vec<String> = sorted
                .iter()
                .map(|(k, v)| format!("{}:{v}", serde_json::to_string(k).expect("string")))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

/// Hash of raw bytes as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(crate::training::sha256_hex(&fs::read(path)?))
}
