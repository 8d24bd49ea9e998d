//! Threshold-free classification and segmentation metrics.
//!
//! AUROC uses the Mann-Whitney statistic with midranks, AP and F1-max sweep
//! every distinct score with ties grouped, and PRO integrates mean
//! per-region overlap against the false-positive rate of normal pixels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Mask;
use crate::decision::PixelMap;
use crate::error::{arg_err, Error, Result};

pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
/// Above this many pixels PRO is swept over quantile thresholds.
pub const EXACT_SWEEP_LIMIT: usize = 1_000_000;
pub const BINNED_THRESHOLDS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Image,
    Pixel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub level: Level,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, level: Level) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(arg_err!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            ));
        }
        if scores.is_empty() {
            return Err(arg_err!("no scores to evaluate"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(arg_err!("scores must be finite"));
        }
        Ok(Self {
            scores,
            labels,
            level,
        })
    }

    /// Pixel scores and labels of every image, concatenated in order.
    /// Images without a mask are all-normal.
    pub fn from_pixel_maps(maps: &[PixelMap], masks: &[Option<Mask>]) -> Result<Self> {
        if maps.len() != masks.len() {
            return Err(arg_err!("{} maps but {} masks", maps.len(), masks.len()));
        }
        let total: usize = maps.iter().map(|m| m.values.len()).sum();
        let mut scores = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        for (map, mask) in maps.iter().zip(masks) {
            scores.extend(map.values.iter().map(|&v| f64::from(v)));
            match mask {
                Some(mk) => {
                    check_mask_dims(map, mk)?;
                    labels.extend(mk.data.iter().map(|&v| v != 0));
                }
                None => labels.extend(core::iter::repeat_n(false, map.values.len())),
            }
        }
        Self::new(scores, labels, Level::Pixel)
    }

    fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l).count();
        (pos, self.labels.len() - pos)
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_unstable_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

fn check_mask_dims(map: &PixelMap, mask: &Mask) -> Result<()> {
    if map.height != mask.height || map.width != mask.width {
        return Err(arg_err!(
            "pixel map {}x{} does not match mask {}x{}",
            map.height,
            map.width,
            mask.height,
            mask.width
        ));
    }
    Ok(())
}

/// `(true positives, false positives)` at the end of each group of equal
/// scores in a descending sweep.
fn tie_grouped_sweep(s: &LabeledScores) -> Vec<(usize, usize)> {
    let order = s.descending();
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        if s.labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = pos + 1 == order.len() || s.scores[order[pos + 1]] != s.scores[i];
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

pub fn auroc(s: &LabeledScores) -> Result<f64> {
    let (pos, neg) = s.counts();
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined(format!(
            "AUROC needs both classes, got {pos} positive and {neg} negative"
        )));
    }
    // ascending sweep: each positive earns the negatives strictly below it
    // plus half of those tied with it
    let mut order = s.descending();
    order.reverse();
    let mut neg_below = 0u64;
    let mut wins2 = 0u64; // twice the Mann-Whitney U
    let mut start = 0;
    while start < order.len() {
        let v = s.scores[order[start]];
        let mut end = start;
        let (mut gp, mut gn) = (0u64, 0u64);
        while end < order.len() && s.scores[order[end]] == v {
            if s.labels[order[end]] {
                gp += 1;
            } else {
                gn += 1;
            }
            end += 1;
        }
        wins2 += gp * (2 * neg_below + gn);
        neg_below += gn;
        start = end;
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}

pub fn average_precision(s: &LabeledScores) -> Result<f64> {
    let (pos, _) = s.counts();
    if pos == 0 {
        return Err(Error::MetricUndefined(
            "AP needs at least one positive".into(),
        ));
    }
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for (tp, fp) in tie_grouped_sweep(s) {
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (tp - prev_tp) as f64 / pos as f64 * precision;
        }
        prev_tp = tp;
    }
    Ok(ap)
}

pub fn f1_max(s: &LabeledScores) -> Result<f64> {
    let (pos, _) = s.counts();
    if pos == 0 {
        return Err(Error::MetricUndefined(
            "F1-max needs at least one positive".into(),
        ));
    }
    Ok(tie_grouped_sweep(s)
        .into_iter()
        .map(|(tp, fp)| 2.0 * tp as f64 / (2 * tp + fp + (pos - tp)) as f64)
        .fold(0.0, f64::max))
}

/// 8-connected component labels of a mask: 0 for normal pixels, `1..=n`
/// for the n regions. Returns `(labels, n)`.
pub fn label_components(mask: &Mask) -> (Vec<u32>, usize) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if mask.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let q = ny as usize * w + nx as usize;
                    if mask.data[q] != 0 && labels[q] == 0 {
                        labels[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Ground truth of every image with its connected regions resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGroundTruth {
    /// Per image, per pixel: global region id + 1, or 0 for normal pixels.
    pub regions: Vec<Vec<u32>>,
    pub region_sizes: Vec<usize>,
    pub dims: Vec<(usize, usize)>,
}

impl RegionGroundTruth {
    /// `masks[i] = None` marks an image with no anomalous pixels; its
    /// dimensions come from `dims[i]`.
    pub fn from_masks(masks: &[Option<Mask>], dims: &[(usize, usize)]) -> Result<Self> {
        if masks.len() != dims.len() {
            return Err(arg_err!("{} masks for {} images", masks.len(), dims.len()));
        }
        let mut regions = Vec::with_capacity(masks.len());
        let mut region_sizes = Vec::new();
        for (mask, &(h, w)) in masks.iter().zip(dims) {
            match mask {
                Some(mk) => {
                    if (mk.height, mk.width) != (h, w) {
                        return Err(arg_err!(
                            "mask {}x{} for a {h}x{w} image",
                            mk.height,
                            mk.width
                        ));
                    }
                    let (local, n) = label_components(mk);
                    let offset = region_sizes.len() as u32;
                    region_sizes.extend(core::iter::repeat_n(0, n));
                    let global: Vec<u32> = local
                        .into_iter()
                        .map(|l| if l == 0 { 0 } else { l + offset })
                        .collect();
                    for &g in &global {
                        if g != 0 {
                            region_sizes[g as usize - 1] += 1;
                        }
                    }
                    regions.push(global);
                }
                None => regions.push(vec![0; h * w]),
            }
        }
        Ok(Self {
            regions,
            region_sizes,
            dims: dims.to_vec(),
        })
    }

    pub fn region_count(&self) -> usize {
        self.region_sizes.len()
    }
}

/// Trapezoidal area under `(fpr, overlap)` points (ascending fpr) up to
/// `limit`, interpolating linearly at the limit, divided by `limit`.
/// The curve starts at its first point; nothing is assumed left of it.
pub fn normalized_area(points: &[(f64, f64)], limit: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_at = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_at) / 2.0;
            break;
        }
    }
    area / limit
}

/// Per-region overlap integrated over FPR ∈ [0, `fpr_limit`], normalized.
///
/// Thresholds are every distinct pixel score up to [`EXACT_SWEEP_LIMIT`]
/// pixels and [`BINNED_THRESHOLDS`] score quantiles above it. A pixel is
/// predicted anomalous when its score is at least the threshold.
pub fn pro_score(maps: &[PixelMap], gt: &RegionGroundTruth, fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return Err(arg_err!("FPR limit must be in (0, 1], got {fpr_limit}"));
    }
    if maps.len() != gt.regions.len() {
        return Err(arg_err!(
            "{} maps for {} ground-truth images",
            maps.len(),
            gt.regions.len()
        ));
    }
    if gt.region_count() == 0 {
        return Err(Error::MetricUndefined(
            "PRO needs at least one anomalous region".into(),
        ));
    }
    let mut scores: Vec<f32> = Vec::new();
    let mut region: Vec<u32> = Vec::new();
    for (m, (r, &(h, w))) in maps.iter().zip(gt.regions.iter().zip(&gt.dims)) {
        if (m.height, m.width) != (h, w) {
            return Err(arg_err!(
                "pixel map {}x{} for a {h}x{w} image",
                m.height,
                m.width
            ));
        }
        if m.values.iter().any(|v| !v.is_finite()) {
            return Err(arg_err!("pixel scores must be finite"));
        }
        scores.extend_from_slice(&m.values);
        region.extend_from_slice(r);
    }
    let normal_total = region.iter().filter(|&&r| r == 0).count();
    if normal_total == 0 {
        return Err(Error::MetricUndefined(
            "PRO needs normal pixels for the FPR axis".into(),
        ));
    }
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]));

    let thresholds: Vec<f32> = if scores.len() <= EXACT_SWEEP_LIMIT {
        let mut t: Vec<f32> = order.iter().map(|&i| scores[i as usize]).collect();
        t.dedup();
        t
    } else {
        let n = order.len();
        let mut t: Vec<f32> = (1..=BINNED_THRESHOLDS)
            .map(|j| {
                let rank = (j * n).div_ceil(BINNED_THRESHOLDS) - 1;
                scores[order[rank] as usize]
            })
            .collect();
        t.dedup();
        t
    };

    let n_regions = gt.region_count() as f64;
    let mut overlap_sum = 0.0f64;
    let mut false_pos = 0usize;
    let mut cursor = 0;
    let mut points = Vec::with_capacity(thresholds.len());
    for t in thresholds {
        while cursor < order.len() && scores[order[cursor] as usize] >= t {
            let r = region[order[cursor] as usize];
            if r == 0 {
                false_pos += 1;
            } else {
                let k = r as usize - 1;
                overlap_sum += 1.0 / gt.region_sizes[k] as f64;
            }
            cursor += 1;
        }
        points.push((
            false_pos as f64 / normal_total as f64,
            overlap_sum / n_regions,
        ));
    }
    Ok(normalized_area(&points, fpr_limit).clamp(0.0, 1.0))
}

/// The seven report metrics; `None` where the metric is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSet {
    pub auroc_cls: Option<f64>,
    pub f1_max_cls: Option<f64>,
    pub ap_cls: Option<f64>,
    pub auroc_segm: Option<f64>,
    pub f1_max_segm: Option<f64>,
    pub ap_segm: Option<f64>,
    pub pro_segm: Option<f64>,
}

impl MetricSet {
    pub fn all_defined(&self) -> bool {
        [
            self.auroc_cls,
            self.f1_max_cls,
            self.ap_cls,
            self.auroc_segm,
            self.f1_max_segm,
            self.ap_segm,
            self.pro_segm,
        ]
        .iter()
        .all(Option::is_some)
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MetricUndefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Computes every metric, mapping undefined ones to `None`.
pub fn evaluate(
    image_scores: &[f64],
    image_labels: &[bool],
    pixel_maps: &[PixelMap],
    masks: &[Option<Mask>],
    fpr_limit: f64,
) -> Result<MetricSet> {
    let cls = LabeledScores::new(image_scores.to_vec(), image_labels.to_vec(), Level::Image)?;
    let seg = LabeledScores::from_pixel_maps(pixel_maps, masks)?;
    let dims: Vec<(usize, usize)> = pixel_maps.iter().map(|m| (m.height, m.width)).collect();
    let gt = RegionGroundTruth::from_masks(masks, &dims)?;
    Ok(MetricSet {
        auroc_cls: defined(auroc(&cls))?,
        f1_max_cls: defined(f1_max(&cls))?,
        ap_cls: defined(average_precision(&cls))?,
        auroc_segm: defined(auroc(&seg))?,
        f1_max_segm: defined(f1_max(&seg))?,
        ap_segm: defined(average_precision(&seg))?,
        pro_segm: defined(pro_score(pixel_maps, &gt, fpr_limit))?,
    })
}
