//! Normal and full memory banks of aggregated patch features.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::aggregation::aggregate_neighborhood;
use crate::cada::{apply_augmentation, AugmentationPlan};
use crate::coreset::{coreset_sample, ProjectionPolicy};
use crate::dataset::Dataset;
use crate::error::{arg_err, Error, Result};
use crate::grid::FeatureGrid;
use crate::linalg;

pub const DEFAULT_FULL_RATIO: f64 = 0.1;
pub const DEFAULT_NORMAL_RATIO: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BankKind {
    /// Augmented features of the most normal images.
    Normal,
    /// Features of every test image, queried with self-exclusion.
    Full,
}

impl BankKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BankKind::Normal => "normal",
            BankKind::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankParams {
    pub ratio: f64,
    pub scale: usize,
    pub layer: u32,
    pub seed: u64,
    pub projection: ProjectionPolicy,
}

/// An immutable flat collection of reference vectors, each tagged with the
/// image it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub kind: BankKind,
    pub scale: usize,
    pub layer: u32,
    pub ratio: f64,
    pub seed: u64,
    /// Pool size after augmentation, before duplicate removal.
    pub raw_pool_size: usize,
    /// Pool size the coreset was drawn from.
    pub pool_size: usize,
    dim: usize,
    entries: Vec<f32>,
    sources: Vec<u32>,
    source_ids: Vec<String>,
    unit: Vec<f32>,
}

impl MemoryBank {
    /// Assembles a bank from stored parts, e.g. when reloading a cache.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        kind: BankKind,
        params: &BankParams,
        raw_pool_size: usize,
        pool_size: usize,
        dim: usize,
        entries: Vec<f32>,
        sources: Vec<u32>,
        source_ids: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 || entries.is_empty() || !entries.len().is_multiple_of(dim) {
            return Err(arg_err!(
                "bank entries must be a non-empty n x {dim} matrix"
            ));
        }
        if sources.len() != entries.len() / dim {
            return Err(arg_err!(
                "{} source tags for {} entries",
                sources.len(),
                entries.len() / dim
            ));
        }
        if sources.iter().any(|&s| s as usize >= source_ids.len()) {
            return Err(arg_err!("source tag out of range"));
        }
        let mut unit = vec![0.0f32; entries.len()];
        for (src, dst) in entries.chunks_exact(dim).zip(unit.chunks_exact_mut(dim)) {
            linalg::normalize_into(src, dst);
        }
        Ok(Self {
            kind,
            scale: params.scale,
            layer: params.layer,
            ratio: params.ratio,
            seed: params.seed,
            raw_pool_size,
            pool_size,
            dim,
            entries,
            sources,
            source_ids,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize) -> &[f32] {
        &self.entries[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// L2-normalized copy of the entries, used for cosine distances.
    pub fn unit_entries(&self) -> &[f32] {
        &self.unit
    }

    pub fn sources(&self) -> &[u32] {
        &self.sources
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn source_of(&self, i: usize) -> &str {
        &self.source_ids[self.sources[i] as usize]
    }

    pub fn source_index(&self, image_id: &str) -> Option<u32> {
        self.source_ids
            .iter()
            .position(|s| s == image_id)
            .map(|i| i as u32)
    }

    /// Returns a bank holding this bank's entries plus `extra` rows all
    /// tagged with `source`.
    pub fn with_extra_entries(&self, extra: &[f32], source: &str) -> Result<MemoryBank> {
        let mut ids = self.source_ids.clone();
        let tag = match ids.iter().position(|s| s == source) {
            Some(i) => i as u32,
            None => {
                ids.push(source.into());
                (ids.len() - 1) as u32
            }
        };
        let mut entries = self.entries.clone();
        entries.extend_from_slice(extra);
        let mut sources = self.sources.clone();
        sources.extend(core::iter::repeat_n(tag, extra.len() / self.dim));
        let params = BankParams {
            ratio: self.ratio,
            scale: self.scale,
            layer: self.layer,
            seed: self.seed,
            projection: ProjectionPolicy::Off,
        };
        MemoryBank::from_parts(
            self.kind,
            &params,
            self.raw_pool_size,
            self.pool_size,
            self.dim,
            entries,
            sources,
            ids,
        )
    }
}

/// Seed for augmenting image `image` with op `op` of a bank seeded `seed`.
fn augmentation_seed(seed: u64, image: usize, op: usize) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ ((image as u64) << 20) ^ (op as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keeps the first occurrence of every bit-identical row in `rows`.
fn dedup_rows(rows: &[f32], dim: usize) -> Vec<usize> {
    let n = rows.len() / dim;
    let key = |i: usize| rows[i * dim..(i + 1) * dim].iter().map(|v| v.to_bits());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(a).cmp(key(b)).then(a.cmp(&b)));
    let mut keep = vec![false; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos == 0 || key(order[pos - 1]).ne(key(i)) {
            keep[i] = true;
        }
    }
    (0..n).filter(|&i| keep[i]).collect()
}

/// Builds one bank for `(kind, scale, layer)`.
///
/// Every image is aggregated at `params.scale`; normal banks also append one
/// augmented copy of the aggregated grid per plan op and drop bit-identical
/// duplicates within each image. The pooled patch vectors are reduced with
/// [`coreset_sample`].
pub fn build_bank(
    dataset: &Dataset,
    kind: BankKind,
    image_ids: &[String],
    plan: Option<&AugmentationPlan>,
    params: &BankParams,
) -> Result<MemoryBank> {
    if image_ids.is_empty() {
        return Err(arg_err!(
            "cannot build a {} bank from zero images",
            kind.as_str()
        ));
    }
    let layer_idx = dataset.layer_index(params.layer)?;
    let dim = dataset.manifest.channels;
    let mut pool: Vec<f32> = Vec::new();
    let mut tags: Vec<u32> = Vec::new();
    let mut source_ids: Vec<String> = Vec::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    let mut raw_pool_size = 0;

    for id in image_ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(arg_err!(
                "image `{id}` listed twice for the {} bank",
                kind.as_str()
            ));
        }
        let img_idx = dataset.image_index(id)?;
        let aggregated =
            aggregate_neighborhood(&dataset.images[img_idx].layers[layer_idx], params.scale)?;
        let mut variants: Vec<FeatureGrid> = Vec::new();
        if kind == BankKind::Normal {
            if let Some(plan) = plan {
                for (k, op) in plan.ops.iter().enumerate() {
                    variants.push(apply_augmentation(
                        &aggregated,
                        *op,
                        augmentation_seed(params.seed, img_idx, k),
                    )?);
                }
            }
        }
        let mut local: Vec<f32> = aggregated.into_vec();
        for v in &variants {
            local.extend_from_slice(v.as_slice());
        }
        raw_pool_size += local.len() / dim;
        let tag = source_ids.len() as u32;
        source_ids.push(id.clone());
        if variants.is_empty() {
            tags.extend(core::iter::repeat_n(tag, local.len() / dim));
            pool.extend_from_slice(&local);
        } else {
            for i in dedup_rows(&local, dim) {
                pool.extend_from_slice(&local[i * dim..(i + 1) * dim]);
                tags.push(tag);
            }
        }
    }

    let pool_size = tags.len();
    let projection = params.projection.resolve(pool_size);
    let picked = coreset_sample(&pool, dim, params.ratio, params.seed, projection)?;
    let mut entries = Vec::with_capacity(picked.len() * dim);
    let mut sources = Vec::with_capacity(picked.len());
    for &i in &picked {
        entries.extend_from_slice(&pool[i * dim..(i + 1) * dim]);
        sources.push(tags[i]);
    }
    MemoryBank::from_parts(
        kind,
        params,
        raw_pool_size,
        pool_size,
        dim,
        entries,
        sources,
        source_ids,
    )
    .map_err(|e| Error::Argument(format!("bank assembly failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cada::{AugmentOp, Strategy};
    use crate::dataset::tests::tiny_dataset;

    fn params(ratio: f64, scale: usize) -> BankParams {
        BankParams {
            ratio,
            scale,
            layer: 5,
            seed: 3,
            projection: ProjectionPolicy::Off,
        }
    }

    #[test]
    fn full_bank_of_one_image_keeps_every_patch() {
        let ds = tiny_dataset(1, 3, 4, 5);
        let ids = vec![String::from("img_000")];
        let bank = build_bank(&ds, BankKind::Full, &ids, None, &params(1.0, 1)).unwrap();
        assert_eq!(bank.len(), 12);
        assert!((0..bank.len()).all(|i| bank.source_of(i) == "img_000"));
    }

    #[test]
    fn horizontal_flip_doubles_raw_pool() {
        let ds = tiny_dataset(1, 3, 4, 5);
        let ids = vec![String::from("img_000")];
        let plan = AugmentationPlan {
            strategy: Strategy::Aggressive,
            ops: vec![AugmentOp::HorizontalFlip],
            theta: 0.05,
        };
        let bank = build_bank(&ds, BankKind::Normal, &ids, Some(&plan), &params(1.0, 1)).unwrap();
        assert_eq!(bank.raw_pool_size, 2 * 12);
        // a flip only permutes patches, so every copy is a duplicate
        assert_eq!(bank.pool_size, 12);
        assert_eq!(bank.len(), 12);
    }

    #[test]
    fn size_law_and_determinism() {
        let ds = tiny_dataset(4, 4, 4, 6);
        let ids: Vec<String> = ds.image_ids().map(String::from).collect();
        let a = build_bank(&ds, BankKind::Full, &ids, None, &params(0.3, 3)).unwrap();
        let b = build_bank(&ds, BankKind::Full, &ids, None, &params(0.3, 3)).unwrap();
        assert_eq!(a.len(), crate::linalg::ceil_count(0.3, 64));
        assert_eq!(a, b);
    }

    #[test]
    fn empty_ids_rejected() {
        let ds = tiny_dataset(1, 2, 2, 3);
        assert!(build_bank(&ds, BankKind::Full, &[], None, &params(1.0, 1)).is_err());
    }

    #[test]
    fn dedup_keeps_first_occurrence() {
        let rows = [1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 0.0, 0.0];
        assert_eq!(dedup_rows(&rows, 2), vec![0, 1, 3]);
    }
}
