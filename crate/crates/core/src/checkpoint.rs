//! Checkpoint archive: an uncompressed tar holding `manifest.json` and one
//! raw little-endian `f64` buffer per parameter mean and raw scale.
//!
//! Archive entries carry fixed metadata (mtime 0, mode 0644, uid/gid 0) so
//! identical networks serialize to identical bytes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use seizure_tensor::Tensor;

use crate::bayes::{Activation, BayesLayer, LayerKind, PriorSpec, VariationalParam};
use crate::error::{Error, Result};
use crate::network::{Architecture, BayesNet};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    mu: String,
    rho: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerEntry {
    kind: LayerKind,
    activation: Activation,
    prior: PriorSpec,
    weight: ParamEntry,
    bias: ParamEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: Architecture,
    deterministic: bool,
    seed: u64,
    layers: Vec<LayerEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// A trained network plus the seed it was trained with and free-form
/// metadata (training config, feature layout, fusion setting).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: BayesNet,
    pub seed: u64,
    pub metadata: serde_json::Value,
}

fn encode_f64(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_f64(bytes: &[u8], expect: usize, name: &str) -> Result<Vec<f64>> {
    if bytes.len() != expect * 8 {
        return Err(Error::Checkpoint(format!(
            "{name}: expected {} bytes, found {}",
            expect * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn append(builder: &mut tar::Builder<Vec<u8>>, path: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, path, data)?;
    Ok(())
}

impl Checkpoint {
    pub fn new(network: BayesNet, seed: u64) -> Self {
        Self {
            network,
            seed,
            metadata: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut builder = tar::Builder::new(Vec::new());
        builder.mode(tar::HeaderMode::Deterministic);
        let mut layers = Vec::new();
        let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
        for (i, l) in self.network.layers.iter().enumerate() {
            let mut entry = |name: &str, p: &VariationalParam| {
                let mu = format!("params/layer{i}.{name}.mu.f64le");
                let rho = format!("params/layer{i}.{name}.rho.f64le");
                blobs.push((mu.clone(), encode_f64(p.mu.data())));
                blobs.push((rho.clone(), encode_f64(p.rho.data())));
                ParamEntry {
                    shape: p.shape().to_vec(),
                    mu,
                    rho,
                }
            };
            let weight = entry("weight", &l.weight);
            let bias = entry("bias", &l.bias);
            layers.push(LayerEntry {
                kind: l.kind,
                activation: l.activation,
                prior: l.prior,
                weight,
                bias,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            architecture: self.network.architecture.clone(),
            deterministic: self.network.deterministic,
            seed: self.seed,
            layers,
            metadata: self.metadata.clone(),
        };
        append(&mut builder, MANIFEST, &serde_json::to_vec_pretty(&manifest)?)?;
        for (path, data) in &blobs {
            append(&mut builder, path, data)?;
        }
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut archive = tar::Archive::new(bytes);
        let mut files: HashMap<String, Vec<u8>> = HashMap::new();
        for entry in archive.entries()? {
            let mut entry = entry?;
            let path = entry.path()?.to_string_lossy().into_owned();
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf)?;
            files.insert(path, buf);
        }
        let manifest: Manifest = serde_json::from_slice(
            files
                .get(MANIFEST)
                .ok_or_else(|| Error::Checkpoint("archive has no manifest.json".into()))?,
        )?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        let load = |e: &ParamEntry| -> Result<VariationalParam> {
            let n: usize = e.shape.iter().product();
            let get = |p: &str| {
                files
                    .get(p)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter buffer {p}")))
            };
            let mu = decode_f64(get(&e.mu)?, n, &e.mu)?;
            let rho = decode_f64(get(&e.rho)?, n, &e.rho)?;
            VariationalParam::new(Tensor::new(e.shape.clone(), mu)?, Tensor::new(e.shape.clone(), rho)?)
        };
        let layers = manifest
            .layers
            .iter()
            .map(|e| {
                Ok(BayesLayer {
                    kind: e.kind,
                    weight: load(&e.weight)?,
                    bias: load(&e.bias)?,
                    prior: e.prior,
                    activation: e.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let network = BayesNet::from_layers(manifest.architecture, layers, manifest.deterministic)?;
        Ok(Self {
            network,
            seed: manifest.seed,
            metadata: manifest.metadata,
        })
    }

    /// Writes atomically (temp file in the target directory, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Human-readable summary for `inspect-checkpoint`.
    pub fn summary(&self) -> serde_json::Value {
        let net = &self.network;
        let sigma_mean = |p: &VariationalParam| p.sigma().iter().sum::<f64>() / p.numel() as f64;
        serde_json::json!({
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "deterministic": net.deterministic,
            "architecture": net.architecture,
            "parameter_count": net.param_count(),
            "kl_to_prior": net.kl_value(),
            "layers": net.layers.iter().map(|l| serde_json::json!({
                "kind": l.kind,
                "prior": l.prior,
                "weight_sigma_mean": sigma_mean(&l.weight),
                "bias_sigma_mean": sigma_mean(&l.bias),
            })).collect::<Vec<_>>(),
            "metadata": self.metadata,
        })
    }
}

/// Writes `data` to `path` through a sibling temp file and an atomic rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
