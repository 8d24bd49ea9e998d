//! On-disk bank cache: per bank a JSON header plus raw little-endian
//! `entries.f32` and `sources.u32` blobs. A bank is reused only when its
//! stored fingerprint matches the job about to run.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use pa_core::dataset::encode_image_blob;
use pa_core::memory::BankParams;
use pa_core::pipeline::{BankJob, Selection};
use pa_core::{BankKind, Dataset, MemoryBank};
use serde::{Deserialize, Serialize};

use crate::container::write_file;
use crate::error::{Error, Result};

const FORMAT: &str = "pa-bank-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    fingerprint: String,
    kind: String,
    scale: usize,
    layer: u32,
    ratio: f64,
    seed: u64,
    raw_pool_size: usize,
    pool_size: usize,
    dim: usize,
    len: usize,
    source_ids: Vec<String>,
}

/// Hash of every feature value and the manifest.
pub fn dataset_fingerprint(ds: &Dataset) -> u64 {
    let mut h = DefaultHasher::new();
    serde_json::to_string(&ds.manifest)
        .expect("manifest serializes")
        .hash(&mut h);
    for img in &ds.images {
        encode_image_blob(img).hash(&mut h);
    }
    h.finish()
}

/// Identifies the inputs of one bank job.
pub fn job_fingerprint(dataset_fp: u64, job: &BankJob, selection: &Selection) -> String {
    let mut h = DefaultHasher::new();
    dataset_fp.hash(&mut h);
    job.kind.as_str().hash(&mut h);
    job.image_ids.hash(&mut h);
    let BankParams {
        ratio,
        scale,
        layer,
        seed,
        projection,
    } = job.params;
    (
        ratio.to_bits(),
        scale,
        layer,
        seed,
        format!("{projection:?}"),
    )
        .hash(&mut h);
    if job.kind == BankKind::Normal {
        format!("{:?}", selection.plan).hash(&mut h);
    }
    format!("{:016x}", h.finish())
}

pub struct BankCache {
    dir: PathBuf,
}

impl BankCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn stem(&self, job: &BankJob) -> PathBuf {
        self.dir.join(format!(
            "{}_r{}_l{}",
            job.kind.as_str(),
            job.params.scale,
            job.params.layer
        ))
    }

    fn err(path: &Path, detail: impl Into<String>) -> Error {
        Error::Cache {
            path: path.to_path_buf(),
            detail: detail.into(),
        }
    }

    /// The cached bank for `job`, or `None` when absent or stale.
    pub fn load(&self, job: &BankJob, fingerprint: &str) -> Result<Option<MemoryBank>> {
        let stem = self.stem(job);
        let head_path = stem.with_extension("json");
        let Ok(text) = fs::read_to_string(&head_path) else {
            return Ok(None);
        };
        let head: Header =
            serde_json::from_str(&text).map_err(|e| Self::err(&head_path, e.to_string()))?;
        if head.format != FORMAT || head.fingerprint != fingerprint {
            return Ok(None);
        }
        let entries_path = stem.with_extension("f32");
        let sources_path = stem.with_extension("u32");
        let entries = read_words(&entries_path)?
            .into_iter()
            .map(f32::from_le_bytes)
            .collect::<Vec<_>>();
        let sources = read_words(&sources_path)?
            .into_iter()
            .map(u32::from_le_bytes)
            .collect::<Vec<_>>();
        if entries.len() != head.len * head.dim {
            return Err(Self::err(
                &entries_path,
                "entry count disagrees with header",
            ));
        }
        let bank = MemoryBank::from_parts(
            job.kind,
            &job.params,
            head.raw_pool_size,
            head.pool_size,
            head.dim,
            entries,
            sources,
            head.source_ids,
        )
        .map_err(|e| Self::err(&sources_path, e.to_string()))?;
        Ok(Some(bank))
    }

    pub fn store(&self, bank: &MemoryBank, job: &BankJob, fingerprint: &str) -> Result<()> {
        let stem = self.stem(job);
        let head = Header {
            format: FORMAT.into(),
            fingerprint: fingerprint.into(),
            kind: bank.kind.as_str().into(),
            scale: bank.scale,
            layer: bank.layer,
            ratio: bank.ratio,
            seed: bank.seed,
            raw_pool_size: bank.raw_pool_size,
            pool_size: bank.pool_size,
            dim: bank.dim(),
            len: bank.len(),
            source_ids: bank.source_ids().to_vec(),
        };
        let entries: Vec<u8> = bank
            .entries()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let sources: Vec<u8> = bank
            .sources()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        // Header last: a bank is only visible once its blobs are complete.
        write_atomic(&stem.with_extension("f32"), &entries)?;
        write_atomic(&stem.with_extension("u32"), &sources)?;
        let json = serde_json::to_string_pretty(&head).expect("header serializes");
        write_atomic(&stem.with_extension("json"), json.as_bytes())
    }
}

fn read_words(path: &Path) -> Result<Vec<[u8; 4]>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(BankCache::err(path, "blob length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.partial",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
