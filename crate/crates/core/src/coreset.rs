//! Greedy farthest-point (k-center) coreset selection.
//!
//! Distances are Euclidean between L2-normalized vectors, optionally after a
//! seeded Gaussian random projection. The first center is the point farthest
//! from the mean; every later center maximizes its distance to the centers
//! already chosen. Ties go to the lowest index.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg_err, Result};
use crate::linalg::{self, ceil_count};

/// Bank size above which the automatic policy turns projection on.
pub const AUTO_PROJECTION_THRESHOLD: usize = 100_000;
pub const AUTO_PROJECTION_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProjectionPolicy {
    /// Off below [`AUTO_PROJECTION_THRESHOLD`] points, otherwise
    /// [`AUTO_PROJECTION_DIM`] dimensions.
    #[default]
    Auto,
    Off,
    Dim(usize),
}

impl ProjectionPolicy {
    pub fn resolve(self, n: usize) -> Option<usize> {
        match self {
            ProjectionPolicy::Auto if n > AUTO_PROJECTION_THRESHOLD => Some(AUTO_PROJECTION_DIM),
            ProjectionPolicy::Auto | ProjectionPolicy::Off => None,
            ProjectionPolicy::Dim(d) => Some(d),
        }
    }
}

/// Number of points kept for `ratio` of `n`.
pub fn coreset_size(ratio: f64, n: usize) -> usize {
    ceil_count(ratio, n).clamp(1, n.max(1))
}

/// The vectors distances are measured on: unit-normalized, then projected
/// to `projection_dim` dims when that is smaller than `dim`.
pub fn working_vectors(
    features: &[f32],
    dim: usize,
    seed: u64,
    projection_dim: Option<usize>,
) -> (Vec<f32>, usize) {
    let mut unit = vec![0.0f32; features.len()];
    for (src, dst) in features.chunks_exact(dim).zip(unit.chunks_exact_mut(dim)) {
        linalg::normalize_into(src, dst);
    }
    match projection_dim {
        Some(p) if p < dim => {
            let std = 1.0 / libm::sqrt(p as f64);
            let normal = Normal::new(0.0f64, std).expect("positive std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // row-major p x dim
            let matrix: Vec<f32> = (0..p * dim)
                .map(|_| normal.sample(&mut rng) as f32)
                .collect();
            let n = features.len() / dim;
            let mut out = vec![0.0f32; n * p];
            for (src, dst) in unit.chunks_exact(dim).zip(out.chunks_exact_mut(p)) {
                for (o, row) in dst.iter_mut().zip(matrix.chunks_exact(dim)) {
                    *o = linalg::dot(src, row);
                }
            }
            (out, p)
        }
        _ => (unit, dim),
    }
}

/// Selects `ceil(ratio * n)` row indices of `features` (row-major, `dim`
/// columns) in greedy order.
pub fn coreset_sample(
    features: &[f32],
    dim: usize,
    ratio: f64,
    seed: u64,
    projection_dim: Option<usize>,
) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(arg_err!("coreset ratio must be in (0, 1], got {ratio}"));
    }
    if dim == 0 || features.is_empty() || !features.len().is_multiple_of(dim) {
        return Err(arg_err!(
            "coreset input must be a non-empty n x {dim} matrix, got {} values",
            features.len()
        ));
    }
    if projection_dim == Some(0) {
        return Err(arg_err!("projection dim must be positive"));
    }
    let n = features.len() / dim;
    let target = coreset_size(ratio, n);
    if target == n {
        return Ok((0..n).collect());
    }
    let (work, wd) = working_vectors(features, dim, seed, projection_dim);
    Ok(greedy_farthest_points(&work, wd, target))
}

/// Farthest-point traversal on prepared vectors.
pub fn greedy_farthest_points(work: &[f32], dim: usize, target: usize) -> Vec<usize> {
    let n = work.len() / dim;
    let mut mean = vec![0.0f64; dim];
    for row in work.chunks_exact(dim) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / n as f64) as f32).collect();
    let mut first = 0;
    let mut best = f32::NEG_INFINITY;
    for (i, row) in work.chunks_exact(dim).enumerate() {
        let d = linalg::squared_distance(row, &mean);
        if d > best {
            best = d;
            first = i;
        }
    }

    let mut selected = Vec::with_capacity(target);
    let mut min_dist = vec![f32::INFINITY; n];
    let mut current = first;
    loop {
        selected.push(current);
        if selected.len() == target {
            break;
        }
        let center = &work[current * dim..(current + 1) * dim];
        let mut next = 0;
        let mut next_d = f32::NEG_INFINITY;
        linalg::scan_squared_distances(work, dim, center, |i, d| {
            let md = &mut min_dist[i];
            if d < *md {
                *md = d;
            }
            if *md > next_d {
                next_d = *md;
                next = i;
            }
        });
        current = next;
    }
    selected
}
