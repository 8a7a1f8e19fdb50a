//! On-disk formats: dataset bundles, manifests and the binary checkpoint
//! container.
//!
//! A bundle is a directory holding `meta.json`, `x.f64` and, when noise is
//! known, `n.f64`; the binary files are row-major little-endian `f64`.
//! A container is `magic`, a little-endian `u64` header length, a JSON
//! header, then little-endian `f64` buffers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth, Matrix, Provenance, Standardization};
use crate::error::{CoreError, Result};
use crate::scm::{Dag, Permutation};
use crate::synth::ScmDescription;

pub const BUNDLE_FORMAT: &str = "fpscm-bundle-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format: String,
    pub rows: usize,
    pub cols: usize,
    pub provenance: Provenance,
    pub standardization: Option<Standardization>,
    pub adjacency: Option<Vec<Vec<u8>>>,
    pub order: Option<Vec<usize>>,
    pub scm: Option<ScmDescription>,
    pub has_noise: bool,
}

pub fn f64_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(CoreError::Format(format!("{} bytes is not a whole number of f64 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CoreError::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CoreError::Format(e.to_string()))?;
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CoreError::Format(format!("{}: {e}", path.display())))
}

pub fn write_bundle(dir: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let meta = BundleMeta {
        format: BUNDLE_FORMAT.into(),
        rows: ds.n(),
        cols: ds.d(),
        provenance: ds.provenance.clone(),
        standardization: ds.standardization.clone(),
        adjacency: ds.truth.as_ref().map(|t| t.dag.to_nested()),
        order: ds.truth.as_ref().map(|t| t.order.map().to_vec()),
        scm: ds.truth.as_ref().and_then(|t| t.scm.clone()),
        has_noise: ds.noise.is_some(),
    };
    write_json(&dir.join("meta.json"), &meta)?;
    write_file(&dir.join("x.f64"), &f64_to_bytes(ds.x.data()))?;
    if let Some(n) = &ds.noise {
        write_file(&dir.join("n.f64"), &f64_to_bytes(n.data()))?;
    }
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Dataset> {
    let meta: BundleMeta = read_json(&dir.join("meta.json"))?;
    if meta.format != BUNDLE_FORMAT {
        return Err(CoreError::Format(format!("{}: unknown bundle format '{}'", dir.display(), meta.format)));
    }
    let load = |name: &str| -> Result<Matrix> {
        let path = dir.join(name);
        let values = bytes_to_f64(&read_file(&path)?)?;
        Matrix::new(meta.rows, meta.cols, values).map_err(|_| CoreError::Format(format!("{}: size does not match meta.json", path.display())))
    };
    let x = load("x.f64")?;
    let noise = if meta.has_noise { Some(load("n.f64")?) } else { None };
    let truth = match (&meta.adjacency, &meta.order) {
        (Some(adj), Some(order)) => Some(GroundTruth {
            dag: Dag::from_nested(adj)?,
            order: Permutation::new(order.clone())?,
            scm: meta.scm.clone(),
        }),
        (None, None) => None,
        _ => return Err(CoreError::Format(format!("{}: adjacency and order must be given together", dir.display()))),
    };
    let ds = Dataset {
        x,
        noise,
        truth,
        standardization: meta.standardization,
        provenance: meta.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Bundle directory relative to the manifest.
    pub path: String,
    pub d: usize,
    pub n: usize,
    pub graph: Option<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Option<String>,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn bundle_dir(&self, manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
        manifest_path.parent().unwrap_or(Path::new(".")).join(&entry.path)
    }

    pub fn load_all(&self, manifest_path: &Path) -> Result<Vec<Dataset>> {
        self.entries
            .iter()
            .map(|e| read_bundle(&self.bundle_dir(manifest_path, e)))
            .collect()
    }
}

/// Writes each dataset to `<dir>/<id>/` and a `manifest.json` listing them.
pub fn write_metadataset(dir: &Path, datasets: &[Dataset], preset: Option<&str>, seed: u64) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let id = ds.provenance.id.clone();
        write_bundle(&dir.join(&id), ds)?;
        entries.push(ManifestEntry {
            id: id.clone(),
            path: id,
            d: ds.d(),
            n: ds.n(),
            graph: ds.provenance.graph.clone(),
            seed: ds.provenance.seed,
        });
    }
    let manifest = Manifest {
        preset: preset.map(str::to_owned),
        seed,
        entries,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn encode_container(magic: &[u8], header: &serde_json::Value, buffers: &[&[f64]]) -> Vec<u8> {
    let head = serde_json::to_vec(header).expect("json value serializes");
    let total: usize = buffers.iter().map(|b| b.len()).sum();
    let mut out = Vec::with_capacity(magic.len() + 8 + head.len() + 8 * total);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    for b in buffers {
        out.extend(b.iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

/// Header and the concatenated payload; callers split the payload using
/// shapes recorded in the header.
pub fn decode_container(magic: &[u8], bytes: &[u8]) -> Result<(serde_json::Value, Vec<f64>)> {
    if bytes.len() < magic.len() + 8 || &bytes[..magic.len()] != magic {
        return Err(CoreError::Format(format!(
            "bad magic bytes, expected {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let rest = &bytes[magic.len()..];
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    if rest.len() < 8 + len {
        return Err(CoreError::Format("truncated header".into()));
    }
    let header = serde_json::from_slice(&rest[8..8 + len]).map_err(|e| CoreError::Format(format!("header: {e}")))?;
    Ok((header, bytes_to_f64(&rest[8 + len..])?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let header = serde_json::json!({"a": 1});
        let bytes = encode_container(b"TEST0001", &header, &[&[1.0, f64::MIN_POSITIVE], &[-0.0]]);
        let (h, v) = decode_container(b"TEST0001", &bytes).unwrap();
        assert_eq!(h, header);
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), [1.0, f64::MIN_POSITIVE, -0.0].map(f64::to_bits));
        assert!(matches!(decode_container(b"OTHER001", &bytes), Err(CoreError::Format(_))));
        assert!(decode_container(b"TEST0001", &bytes[..20]).is_err());
    }
}
