//! Content-adaptive augmentation planning in patch-grid space.
//!
//! Object-position variability across the reference images decides between
//! an appearance-only plan (feature jitter) and a geometric plan (flips,
//! rotations, translations and jitter). All ops act on feature grids: the
//! geometric ones are exact patch permutations, jitter adds seeded noise.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::dataset::Dataset;
use crate::error::{arg_err, Result};
use crate::grid::FeatureGrid;
use crate::linalg;

pub const DEFAULT_THETA: f64 = 0.05;
pub const DEFAULT_JITTER_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionVariance {
    pub sigma_spatial: f64,
    pub sigma_temporal: f64,
    pub sigma: f64,
}

impl PositionVariance {
    pub fn new(sigma_spatial: f64, sigma_temporal: f64) -> Self {
        Self {
            sigma_spatial,
            sigma_temporal,
            sigma: libm::sqrt(sigma_spatial * sigma_spatial + sigma_temporal * sigma_temporal),
        }
    }
}

/// Foreground centroid in normalized `(row, col)` coordinates. Each patch is
/// weighted by its distance from the mean of the border ring, summed over
/// layers; an image with no foreground signal sits at the grid center.
pub fn foreground_centroid(layers: &[FeatureGrid]) -> (f64, f64) {
    let first = &layers[0];
    let (rows, cols) = (first.rows(), first.cols());
    let mut weights = vec![0.0f64; rows * cols];
    for grid in layers {
        let ch = grid.channels();
        let mut border = vec![0.0f64; ch];
        let mut count = 0usize;
        for i in 0..rows {
            for j in 0..cols {
                if i == 0 || j == 0 || i + 1 == rows || j + 1 == cols {
                    for (b, &v) in border.iter_mut().zip(grid.patch(i, j)) {
                        *b += f64::from(v);
                    }
                    count += 1;
                }
            }
        }
        border.iter_mut().for_each(|b| *b /= count as f64);
        for (w, patch) in weights.iter_mut().zip(grid.patches()) {
            let d2: f64 = patch
                .iter()
                .zip(&border)
                .map(|(&v, &b)| (f64::from(v) - b) * (f64::from(v) - b))
                .sum();
            *w += libm::sqrt(d2);
        }
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return (0.5, 0.5);
    }
    let (mut cr, mut cc) = (0.0, 0.0);
    for (p, &w) in weights.iter().enumerate() {
        cr += w * ((p / cols) as f64 + 0.5) / rows as f64;
        cc += w * ((p % cols) as f64 + 0.5) / cols as f64;
    }
    (cr / total, cc / total)
}

/// Population std of 2-D points, combined as `sqrt(var_row + var_col)`.
fn planar_std(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mr = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mc = points.iter().map(|p| p.1).sum::<f64>() / n;
    let var: f64 = points
        .iter()
        .map(|p| (p.0 - mr) * (p.0 - mr) + (p.1 - mc) * (p.1 - mc))
        .sum::<f64>()
        / n;
    libm::sqrt(var)
}

/// Spatial spread of foreground centroids over `normal_ids`. The temporal
/// term is the spread of consecutive centroid displacements and is only
/// nonzero when the manifest declares capture order.
pub fn estimate_position_variance(
    dataset: &Dataset,
    normal_ids: &[alloc::string::String],
) -> Result<PositionVariance> {
    if normal_ids.is_empty() {
        return Err(arg_err!("position variance needs at least one image"));
    }
    let mut indexed = Vec::with_capacity(normal_ids.len());
    for id in normal_ids {
        indexed.push(dataset.image_index(id)?);
    }
    indexed.sort_unstable();
    let centroids: Vec<(f64, f64)> = indexed
        .iter()
        .map(|&i| foreground_centroid(&dataset.images[i].layers))
        .collect();
    let spatial = planar_std(&centroids);
    let temporal = if dataset.manifest.sequence_ordered {
        let steps: Vec<(f64, f64)> = centroids
            .windows(2)
            .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
            .collect();
        planar_std(&steps)
    } else {
        0.0
    };
    Ok(PositionVariance::new(spatial, temporal))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HorizontalFlip,
    VerticalFlip,
    Rotate90,
    Rotate180,
    Rotate270,
    /// Shift content by whole patches; vacated cells replicate the border.
    Translate {
        rows: i32,
        cols: i32,
    },
    /// Additive Gaussian noise whose expected norm is `relative_scale` times
    /// the mean patch norm of the grid being jittered.
    Jitter {
        relative_scale: f64,
    },
}

impl AugmentOp {
    pub fn is_geometric(&self) -> bool {
        !matches!(self, AugmentOp::Jitter { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Conservative,
    Aggressive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan {
    pub strategy: Strategy,
    pub ops: Vec<AugmentOp>,
    pub theta: f64,
}

/// `sigma > theta` picks the appearance-only plan, otherwise the geometric one.
pub fn plan_augmentations(
    variance: &PositionVariance,
    theta: f64,
    jitter_scale: f64,
) -> Result<AugmentationPlan> {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(arg_err!("theta must be positive, got {theta}"));
    }
    if !(jitter_scale >= 0.0 && jitter_scale.is_finite()) {
        return Err(arg_err!(
            "jitter scale must be non-negative, got {jitter_scale}"
        ));
    }
    let jitter = AugmentOp::Jitter {
        relative_scale: jitter_scale,
    };
    let (strategy, ops) = if variance.sigma > theta {
        (Strategy::Conservative, vec![jitter])
    } else {
        (
            Strategy::Aggressive,
            vec![
                AugmentOp::HorizontalFlip,
                AugmentOp::VerticalFlip,
                AugmentOp::Rotate90,
                AugmentOp::Rotate180,
                AugmentOp::Rotate270,
                AugmentOp::Translate { rows: 1, cols: 0 },
                AugmentOp::Translate { rows: 0, cols: 1 },
                AugmentOp::Translate { rows: -1, cols: 0 },
                AugmentOp::Translate { rows: 0, cols: -1 },
                jitter,
            ],
        )
    };
    Ok(AugmentationPlan {
        strategy,
        ops,
        theta,
    })
}

fn remap(
    grid: &FeatureGrid,
    out_rows: usize,
    out_cols: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> FeatureGrid {
    let mut out = FeatureGrid::zeros(out_rows, out_cols, grid.channels());
    for i in 0..out_rows {
        for j in 0..out_cols {
            let (si, sj) = src(i, j);
            out.patch_mut(i, j).copy_from_slice(grid.patch(si, sj));
        }
    }
    out
}

pub fn apply_augmentation(grid: &FeatureGrid, op: AugmentOp, seed: u64) -> Result<FeatureGrid> {
    let (h, w) = (grid.rows(), grid.cols());
    Ok(match op {
        AugmentOp::HorizontalFlip => remap(grid, h, w, |i, j| (i, w - 1 - j)),
        AugmentOp::VerticalFlip => remap(grid, h, w, |i, j| (h - 1 - i, j)),
        // clockwise
        AugmentOp::Rotate90 => remap(grid, w, h, |i, j| (h - 1 - j, i)),
        AugmentOp::Rotate180 => remap(grid, h, w, |i, j| (h - 1 - i, w - 1 - j)),
        AugmentOp::Rotate270 => remap(grid, w, h, |i, j| (j, w - 1 - i)),
        AugmentOp::Translate { rows, cols } => {
            if rows.unsigned_abs() as usize >= h || cols.unsigned_abs() as usize >= w {
                return Err(arg_err!(
                    "translation ({rows}, {cols}) must be smaller than grid {h}x{w}"
                ));
            }
            remap(grid, h, w, |i, j| {
                let si = (i as i64 - rows as i64).clamp(0, h as i64 - 1) as usize;
                let sj = (j as i64 - cols as i64).clamp(0, w as i64 - 1) as usize;
                (si, sj)
            })
        }
        AugmentOp::Jitter { relative_scale } => {
            if !(relative_scale >= 0.0 && relative_scale.is_finite()) {
                return Err(arg_err!(
                    "jitter scale must be non-negative, got {relative_scale}"
                ));
            }
            if relative_scale == 0.0 {
                return Ok(grid.clone());
            }
            let mean_norm =
                grid.patches().map(linalg::norm).sum::<f64>() / grid.patch_count() as f64;
            let std = relative_scale * mean_norm / libm::sqrt(grid.channels() as f64);
            let normal = Normal::new(0.0f64, std).map_err(|e| arg_err!("jitter: {e}"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = grid.clone();
            for v in out.as_mut_slice() {
                *v += normal.sample(&mut rng) as f32;
            }
            out
        }
    })
}
