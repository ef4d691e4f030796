//! Checkpoint files: a JSON manifest followed by the named parameter
//! arrays as little-endian `f64`, guarded by a SHA-256 of the payload.
//!
//! Layout: `CISPCKPT` magic, `u64` manifest length, manifest JSON, payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::{BranchConfig, ColorConfig, CycleConfig, CycleIsp, Denoiser, DenoiserConfig, Raw2Rgb, Rgb2Raw};
use crate::nn::ParamStore;
use crate::pipeline::io::{f64_bytes, f64_from_bytes, write_atomic};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CISPCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Which network a checkpoint holds, with its architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Rgb2Raw { rgb2raw: BranchConfig },
    Raw2Rgb { raw2rgb: BranchConfig, color_corr: ColorConfig },
    Cycle { cycle: CycleConfig },
    Denoiser { denoiser: DenoiserConfig },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Rgb2Raw { .. } => "rgb2raw",
            ModelSpec::Raw2Rgb { .. } => "raw2rgb",
            ModelSpec::Cycle { .. } => "cycle",
            ModelSpec::Denoiser { .. } => "denoiser",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelSpec,
    pub stage: String,
    pub step: u64,
    pub seed: u64,
    /// Validation (or training) PSNR when the checkpoint was taken.
    #[serde(default)]
    pub psnr: Option<f64>,
    pub arrays: Vec<ArrayEntry>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub arrays: BTreeMap<String, Tensor>,
}

fn payload(arrays: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut bytes = Vec::new();
    for t in arrays.values() {
        bytes.extend(f64_bytes(t.data()));
    }
    bytes
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// First differing leaf between two JSON trees, as a dotted path.
fn first_difference(expected: &Value, found: &Value, path: &str) -> Option<String> {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (expected, found) {
        (Value::Object(a), Value::Object(b)) => {
            let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| match (a.get(k), b.get(k)) {
                (Some(x), Some(y)) => first_difference(x, y, &join(k)),
                _ => Some(join(k)),
            })
        }
        _ if expected == found => None,
        _ => Some(if path.is_empty() { "<root>".into() } else { path.into() }),
    }
}

impl Checkpoint {
    pub fn from_store(model: ModelSpec, params: &ParamStore, stage: &str, step: u64, seed: u64) -> Self {
        let arrays: BTreeMap<String, Tensor> = params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        Self::from_arrays(model, arrays, stage, step, seed)
    }

    pub fn from_arrays(model: ModelSpec, arrays: BTreeMap<String, Tensor>, stage: &str, step: u64, seed: u64) -> Self {
        let entries = arrays
            .iter()
            .map(|(n, t)| {
                let (c, h, w) = t.shape();
                ArrayEntry {
                    name: n.clone(),
                    shape: [c, h, w],
                }
            })
            .collect();
        let sha256 = hex_digest(&payload(&arrays));
        Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                model,
                stage: stage.to_string(),
                step,
                seed,
                psnr: None,
                arrays: entries,
                sha256,
            },
            arrays,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + manifest.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend(payload(&self.arrays));
        Ok(out)
    }

    /// Atomic write: temporary sibling, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| Error::Data(format!("{}: bad manifest: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {}", manifest.format_version)));
        }
        let data = &bytes[16 + mlen..];
        let found = hex_digest(data);
        if found != manifest.sha256 {
            return Err(Error::Checksum {
                path: path.to_path_buf(),
                expected: manifest.sha256.clone(),
                found,
            });
        }
        let values = f64_from_bytes(data, path)?;
        let mut arrays = BTreeMap::new();
        let mut offset = 0;
        for e in &manifest.arrays {
            let n = e.shape.iter().product::<usize>();
            let slice = values.get(offset..offset + n).ok_or_else(|| bad("payload shorter than manifest"))?;
            arrays.insert(e.name.clone(), Tensor::from_vec(e.shape[0], e.shape[1], e.shape[2], slice.to_vec())?);
            offset += n;
        }
        if offset != values.len() {
            return Err(bad("payload longer than manifest"));
        }
        Ok(Checkpoint { manifest, arrays })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails with a config error naming the first field where the stored
    /// model spec differs from `expected`.
    pub fn check_model(&self, expected: &ModelSpec) -> Result<()> {
        let a = serde_json::to_value(expected).map_err(|e| Error::Serde(e.to_string()))?;
        let b = serde_json::to_value(&self.manifest.model).map_err(|e| Error::Serde(e.to_string()))?;
        match first_difference(&a, &b, "") {
            None => Ok(()),
            Some(field) => Err(Error::Config(format!(
                "checkpoint model does not match the requested config at `{field}` (expected {}, found {})",
                lookup(&a, &field),
                lookup(&b, &field)
            ))),
        }
    }

    /// Arrays whose names start with `prefix`, with the prefix removed.
    pub fn arrays_with_prefix(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.arrays
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect()
    }

    pub fn load_into(&self, expected: &ModelSpec, store: &mut ParamStore) -> Result<()> {
        self.check_model(expected)?;
        store.load_named(self.arrays.clone())
    }

    pub fn into_rgb2raw(&self, config: BranchConfig) -> Result<Rgb2Raw> {
        let spec = ModelSpec::Rgb2Raw { rgb2raw: config };
        let mut m = Rgb2Raw::new(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        self.load_into(&spec, &mut m.params)?;
        Ok(m)
    }

    pub fn into_raw2rgb(&self, config: BranchConfig, color: ColorConfig) -> Result<Raw2Rgb> {
        let spec = ModelSpec::Raw2Rgb {
            raw2rgb: config,
            color_corr: color,
        };
        let mut m = Raw2Rgb::new(config, color, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        self.load_into(&spec, &mut m.params)?;
        Ok(m)
    }

    pub fn into_cycle(&self, config: CycleConfig) -> Result<CycleIsp> {
        self.check_model(&ModelSpec::Cycle { cycle: config })?;
        let mut m = CycleIsp::new(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        m.rgb2raw.params.load_named(self.arrays_with_prefix("rgb2raw."))?;
        m.raw2rgb.params.load_named(self.arrays_with_prefix("raw2rgb."))?;
        Ok(m)
    }

    pub fn into_denoiser(&self, config: DenoiserConfig) -> Result<Denoiser> {
        let spec = ModelSpec::Denoiser { denoiser: config };
        let mut m = Denoiser::new(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        self.load_into(&spec, &mut m.params)?;
        Ok(m)
    }

    /// Rebuilds whichever model the manifest describes.
    pub fn model_spec(&self) -> &ModelSpec {
        &self.manifest.model
    }
}

fn lookup(v: &Value, dotted: &str) -> String {
    let mut cur = v;
    for part in dotted.split('.') {
        match cur.get(part) {
            Some(n) => cur = n,
            None => return "nothing".into(),
        }
    }
    cur.to_string()
}

pub fn cycle_checkpoint(model: &CycleIsp, stage: &str, step: u64, seed: u64) -> Checkpoint {
    let mut arrays = BTreeMap::new();
    for (n, t) in model.rgb2raw.params.iter() {
        arrays.insert(format!("rgb2raw.{n}"), t.clone());
    }
    for (n, t) in model.raw2rgb.params.iter() {
        arrays.insert(format!("raw2rgb.{n}"), t.clone());
    }
    Checkpoint::from_arrays(ModelSpec::Cycle { cycle: model.config }, arrays, stage, step, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DenoiseMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn denoiser_ckpt() -> (Checkpoint, DenoiserConfig) {
        let cfg = DenoiserConfig::toy(DenoiseMode::Raw);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Denoiser::new(cfg, &mut rng).unwrap();
        (Checkpoint::from_store(ModelSpec::Denoiser { denoiser: cfg }, &d.params, "denoiser_raw", 7, 2), cfg)
    }

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        let (ck, cfg) = denoiser_ckpt();
        ck.save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck.arrays.values().zip(back.arrays.values()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        back.into_denoiser(cfg).unwrap();
    }

    #[test]
    fn tampered_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        let (ck, _) = denoiser_ckpt();
        ck.save(&p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0x40;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&p), Err(Error::Checksum { .. })));
    }

    #[test]
    fn mismatched_config_names_field() {
        let (ck, mut cfg) = denoiser_ckpt();
        cfg.n_dab += 1;
        match ck.into_denoiser(cfg) {
            Err(Error::Config(msg)) => assert!(msg.contains("denoiser.n_dab"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
