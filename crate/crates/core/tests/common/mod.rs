#![allow(dead_code)]

use pa_core::coreset::ProjectionPolicy;
use pa_core::decision::{AnomalyMap, Provenance};
use pa_core::memory::BankParams;
use pa_core::{BankKind, MemoryBank, ScoreGrid};

pub fn params() -> BankParams {
    BankParams {
        ratio: 1.0,
        scale: 1,
        layer: 0,
        seed: 0,
        projection: ProjectionPolicy::Off,
    }
}

/// A bank over `rows` (each `dim` long) with the given source tags.
pub fn bank(kind: BankKind, dim: usize, rows: &[f32], sources: &[u32]) -> MemoryBank {
    let n_ids = sources.iter().max().map_or(1, |&m| m as usize + 1);
    let ids = (0..n_ids).map(|i| format!("src_{i}")).collect();
    let n = rows.len() / dim;
    MemoryBank::from_parts(
        kind,
        &params(),
        n,
        n,
        dim,
        rows.to_vec(),
        sources.to_vec(),
        ids,
    )
    .unwrap()
}

pub fn map(
    id: &str,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    provenance: Provenance,
) -> AnomalyMap {
    AnomalyMap {
        image_id: id.into(),
        grid: ScoreGrid::new(rows, cols, values).unwrap(),
        provenance,
    }
}

/// Cosine distance computed in f64 without any of the engine's kernels.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| f64::from(*x) * f64::from(*y))
        .sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}
