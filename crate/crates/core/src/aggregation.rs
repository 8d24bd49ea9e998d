//! Multi-scale neighborhood aggregation and text-similarity ranking of images.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{Dataset, ImageFeatures, TextEmbeddingPair};
use crate::error::{arg_err, Error, Result};
use crate::grid::{FeatureGrid, ScoreGrid};
use crate::linalg::{self, ceil_count};

pub const DEFAULT_SCALES: [usize; 3] = [1, 3, 5];
pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_SELECTION_FRACTION: f64 = 0.10;

/// Mean over the `r x r` neighborhood of every patch, with replicate padding
/// at the borders so the output keeps the input's grid dims.
pub fn aggregate_neighborhood(grid: &FeatureGrid, r: usize) -> Result<FeatureGrid> {
    if r == 0 || r.is_multiple_of(2) {
        return Err(arg_err!(
            "aggregation scale must be odd and positive, got {r}"
        ));
    }
    let (rows, cols, ch) = grid.shape();
    if r > rows.min(cols) {
        return Err(arg_err!("aggregation scale {r} exceeds grid {rows}x{cols}"));
    }
    if r == 1 {
        return Ok(grid.clone());
    }
    let half = (r / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    // horizontal window sums
    let mut horiz = vec![0.0f64; rows * cols * ch];
    for i in 0..rows {
        for j in 0..cols {
            let out = &mut horiz[(i * cols + j) * ch..(i * cols + j + 1) * ch];
            for dj in -half..=half {
                let src = grid.patch(i, clamp(j as isize + dj, cols));
                for (o, &v) in out.iter_mut().zip(src) {
                    *o += f64::from(v);
                }
            }
        }
    }
    let inv = 1.0 / (r * r) as f64;
    let mut out = FeatureGrid::zeros(rows, cols, ch);
    let mut acc = vec![0.0f64; ch];
    for i in 0..rows {
        for j in 0..cols {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for di in -half..=half {
                let si = clamp(i as isize + di, rows);
                let src = &horiz[(si * cols + j) * ch..(si * cols + j + 1) * ch];
                for (a, &v) in acc.iter_mut().zip(src) {
                    *a += v;
                }
            }
            for (o, &a) in out.patch_mut(i, j).iter_mut().zip(&acc) {
                *o = (a * inv) as f32;
            }
        }
    }
    Ok(out)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(arg_err!("temperature must be positive, got {temperature}"));
    }
    Ok(())
}

/// Per-patch `cos(F_r(p), f_pos) / temperature`.
pub fn patch_text_similarity(
    aggregated: &FeatureGrid,
    positive: &[f32],
    temperature: f64,
) -> Result<ScoreGrid> {
    check_temperature(temperature)?;
    if aggregated.channels() != positive.len() {
        return Err(arg_err!(
            "feature dim {} does not match text dim {}",
            aggregated.channels(),
            positive.len()
        ));
    }
    if linalg::norm(positive) == 0.0 {
        return Err(Error::Numeric("text embedding has zero norm".into()));
    }
    let mut values = Vec::with_capacity(aggregated.patch_count());
    for (p, patch) in aggregated.patches().enumerate() {
        let cos = linalg::cosine(patch, positive).ok_or_else(|| {
            Error::Numeric(format!(
                "zero-norm feature at row {}, col {}",
                p / aggregated.cols(),
                p % aggregated.cols()
            ))
        })?;
        values.push(cos / temperature);
    }
    ScoreGrid::new(aggregated.rows(), aggregated.cols(), values)
}

/// `cos(cls_token, f_pos) / temperature`.
pub fn global_normality_score(
    cls_token: &[f32],
    positive: &[f32],
    temperature: f64,
) -> Result<f64> {
    check_temperature(temperature)?;
    if cls_token.len() != positive.len() {
        return Err(arg_err!(
            "class token dim {} does not match text dim {}",
            cls_token.len(),
            positive.len()
        ));
    }
    linalg::cosine(cls_token, positive)
        .map(|c| c / temperature)
        .ok_or_else(|| Error::Numeric("zero-norm class token or text embedding".into()))
}

/// How a class token is turned into a normality score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalityScoring {
    /// Similarity to the normal prompt only.
    #[default]
    PositiveOnly,
    /// Two-way softmax over the normal and defective prompts.
    Softmax,
}

/// Returns `(score, ranking_key)` for one image. For `PositiveOnly` the key
/// is the mean raw cosine, which makes the ranking exactly independent of
/// the temperature.
fn image_normality(
    image: &ImageFeatures,
    text: &TextEmbeddingPair,
    temperature: f64,
    scoring: NormalityScoring,
) -> Result<(f64, f64)> {
    let l = image.class_tokens.len() as f64;
    match scoring {
        NormalityScoring::PositiveOnly => {
            let mut cos_sum = 0.0;
            for cls in &image.class_tokens {
                cos_sum += global_normality_score(cls, &text.positive, 1.0)?;
            }
            let mean_cos = cos_sum / l;
            Ok((mean_cos / temperature, mean_cos))
        }
        NormalityScoring::Softmax => {
            let mut sum = 0.0;
            for cls in &image.class_tokens {
                let sp = global_normality_score(cls, &text.positive, temperature)?;
                let sn = global_normality_score(cls, &text.negative, temperature)?;
                sum += 1.0 / (1.0 + libm::exp(sn - sp));
            }
            Ok((sum / l, sum / l))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalityRanking {
    /// `(image_id, S_cls)` by descending normality, ties by image_id.
    pub ranked: Vec<(String, f64)>,
    pub selected_fraction: f64,
    pub selected_count: usize,
}

impl NormalityRanking {
    pub fn selected(&self) -> &[(String, f64)] {
        &self.ranked[..self.selected_count]
    }

    pub fn selected_ids(&self) -> Vec<String> {
        self.selected().iter().map(|(id, _)| id.clone()).collect()
    }
}

/// Ranks every image by class-token normality (mean over layers) and keeps
/// the top `max(1, ceil(fraction * N))`.
pub fn select_normal_images(
    dataset: &Dataset,
    fraction: f64,
    temperature: f64,
    scoring: NormalityScoring,
) -> Result<NormalityRanking> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(arg_err!(
            "selection fraction must be in (0, 1], got {fraction}"
        ));
    }
    check_temperature(temperature)?;
    let mut scored = Vec::with_capacity(dataset.len());
    for (rec, img) in dataset.manifest.image_records.iter().zip(&dataset.images) {
        let (score, key) = image_normality(img, &dataset.text, temperature, scoring)?;
        scored.push((rec.image_id.clone(), score, key));
    }
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    let selected_count = ceil_count(fraction, scored.len()).max(1).min(scored.len());
    Ok(NormalityRanking {
        ranked: scored.into_iter().map(|(id, s, _)| (id, s)).collect(),
        selected_fraction: fraction,
        selected_count,
    })
}
