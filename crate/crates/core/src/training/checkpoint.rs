use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Activation;
use crate::diffcore::EdmConfig;
use crate::error::{Error, Result};

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    /// Word position, as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed_hex: hex(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |m: &str| Error::config("rng", m.to_string());
        if self.seed_hex.len() != 64 {
            return Err(bad("seed must be 32 bytes of hex"));
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&self.seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad("seed is not hex"))?;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("word_pos is not an integer"))?);
        Ok(rng)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// JSON side of a checkpoint; the parameters live in a little-endian `f64`
/// blob next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// `"dsm"` or `"ar"`.
    pub model: String,
    pub step: u64,
    pub sizes: Vec<usize>,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edm: Option<EdmConfig>,
    pub config_hash: String,
    pub rng: RngState,
    #[serde(default)]
    pub params_file: String,
    #[serde(default)]
    pub params_sha256: String,
}

/// Writes `<stem>.bin` and `<stem>.json` into `dir`; returns both paths.
pub fn save_checkpoint(
    dir: &Path,
    stem: &str,
    params: &[f64],
    manifest: &CheckpointManifest,
) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = params.iter().flat_map(|p| p.to_le_bytes()).collect();
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, &bytes)?;
    let mut m = manifest.clone();
    m.params_file = format!("{stem}.bin");
    m.params_sha256 = hex(&Sha256::digest(&bytes));
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_vec_pretty(&m)?)?;
    Ok((bin, json))
}

/// Reads a checkpoint manifest and its parameter blob, verifying the hash.
pub fn load_checkpoint(manifest_path: &Path) -> Result<(CheckpointManifest, Vec<f64>)> {
    let parse = |msg: String| Error::Parse {
        path: manifest_path.to_path_buf(),
        msg,
    };
    let m: CheckpointManifest =
        serde_json::from_slice(&fs::read(manifest_path)?).map_err(|e| parse(e.to_string()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&m.params_file))?;
    if hex(&Sha256::digest(&bytes)) != m.params_sha256 {
        return Err(parse("parameter blob hash mismatch".into()));
    }
    if bytes.len() % 8 != 0 {
        return Err(parse("parameter blob is not a whole number of f64".into()));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((m, params))
}
