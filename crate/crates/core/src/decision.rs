//! Pseudo-anomaly-aware decision: kNN responses against both banks,
//! content-adaptive subtraction, scale fusion and pixel-map rendering.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, Error, Result};
use crate::grid::{FeatureGrid, ScoreGrid};
use crate::linalg::{self, ceil_count, percentile};
use crate::memory::{BankKind, MemoryBank};

/// How nearest-neighbor distances are pooled into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsiMode {
    /// k smallest distances over all bank entries.
    #[default]
    PerEntry,
    /// Nearest distance per source image, then the k smallest of those.
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Mean of the k smallest distances.
    #[default]
    Mean,
    /// The k-th smallest distance (the largest of the k).
    MaxOfK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TauScope {
    #[default]
    PerImage,
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionOrder {
    /// Subtract per scale, then fuse the subtracted maps.
    #[default]
    SubtractThenFuse,
    /// Fuse the full and normal responses across scales, then subtract once.
    FuseThenSubtract,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringParams {
    pub k_min: usize,
    pub k_max: usize,
    /// Fixed k before clamping; `None` uses `ceil(0.01 * |bank|)`.
    pub k_target: Option<usize>,
    pub alpha: f64,
    pub tau_percentile: f64,
    pub tau_scope: TauScope,
    /// One weight per scale, summing to 1. Empty means uniform.
    pub weights: Vec<f64>,
    pub psi_mode: PsiMode,
    pub reduction: Reduction,
    pub fusion_order: FusionOrder,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self {
            k_min: 1,
            k_max: 3,
            k_target: None,
            alpha: 0.5,
            tau_percentile: 80.0,
            tau_scope: TauScope::PerImage,
            weights: Vec::new(),
            psi_mode: PsiMode::PerEntry,
            reduction: Reduction::Mean,
            fusion_order: FusionOrder::SubtractThenFuse,
        }
    }
}

impl ScoringParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_min == 0 || self.k_min > self.k_max {
            return Err(arg_err!(
                "need 1 ≤ k_min ≤ k_max, got k_min = {}, k_max = {}",
                self.k_min,
                self.k_max
            ));
        }
        if self.k_max > MAX_K {
            return Err(arg_err!(
                "k_max must be at most {MAX_K}, got {}",
                self.k_max
            ));
        }
        if self.k_target == Some(0) {
            return Err(arg_err!("k target must be positive"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(arg_err!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if !(self.tau_percentile > 0.0 && self.tau_percentile < 100.0) {
            return Err(arg_err!(
                "tau percentile must be in (0, 100), got {}",
                self.tau_percentile
            ));
        }
        if !self.weights.is_empty() {
            check_weights(&self.weights)?;
        }
        Ok(())
    }

    /// Scale weights for `scales` scales (uniform when none were configured).
    pub fn scale_weights(&self, scales: usize) -> Result<Vec<f64>> {
        if self.weights.is_empty() {
            return Ok(vec![1.0 / scales as f64; scales]);
        }
        if self.weights.len() != scales {
            return Err(arg_err!(
                "{} scale weights configured for {scales} scales",
                self.weights.len()
            ));
        }
        Ok(self.weights.clone())
    }

    /// `clamp(target, k_min, k_max)`, capped at `available`.
    pub fn effective_k(&self, bank_len: usize, available: usize) -> usize {
        let target = self
            .k_target
            .unwrap_or_else(|| ceil_count(0.01, bank_len).max(1));
        target.clamp(self.k_min, self.k_max).min(available)
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(arg_err!("scale weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if libm::fabs(sum - 1.0) > 1e-9 {
        return Err(arg_err!("scale weights must sum to 1, got {sum}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Full-bank response.
    Full,
    /// Normal-bank (background) response.
    Background,
    /// After adaptive subtraction.
    Final,
    /// After scale fusion.
    Fused,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub image_id: String,
    pub grid: ScoreGrid,
    pub provenance: Provenance,
}

/// Query-independent part of a kNN lookup against one bank.
struct KnnPlan<'a> {
    bank: &'a MemoryBank,
    exclude: Option<u32>,
    k: usize,
    mode: PsiMode,
    reduction: Reduction,
    n_sources: usize,
}

impl<'a> KnnPlan<'a> {
    fn new(bank: &'a MemoryBank, params: &ScoringParams, exclude: Option<u32>) -> Result<Self> {
        params.validate()?;
        let available = match params.psi_mode {
            PsiMode::PerEntry => bank
                .sources()
                .iter()
                .filter(|&&s| Some(s) != exclude)
                .count(),
            PsiMode::PerImage => {
                let mut present = vec![false; bank.source_ids().len()];
                for &s in bank.sources() {
                    present[s as usize] = true;
                }
                if let Some(x) = exclude {
                    present[x as usize] = false;
                }
                present.iter().filter(|&&p| p).count()
            }
        };
        if available == 0 {
            return Err(Error::Scoring(format!(
                "{} bank has no entries left after excluding the query image; \
                 the dataset is too small for self-excluded scoring",
                bank.kind.as_str()
            )));
        }
        Ok(Self {
            bank,
            exclude,
            k: params.effective_k(bank.len(), available),
            mode: params.psi_mode,
            reduction: params.reduction,
            n_sources: bank.source_ids().len(),
        })
    }

    fn reduce(&self, smallest: &[f64]) -> f64 {
        match self.reduction {
            Reduction::Mean => smallest.iter().sum::<f64>() / smallest.len() as f64,
            Reduction::MaxOfK => smallest[smallest.len() - 1],
        }
    }

    /// Scores unit-normalized queries (row-major, `dim` columns).
    ///
    /// Neighbors are tracked as largest dot products and converted to
    /// cosine distances at the end; the conversion is monotone, so the k
    /// smallest distances come from the k largest dots. The bank is walked
    /// in tiles small enough to stay cache-resident across query blocks.
    fn score(&self, queries: &[f32], out: &mut Vec<f64>) {
        let dim = self.bank.dim();
        let unit = self.bank.unit_entries();
        let sources = self.bank.sources();
        let k = self.k;
        let n_q = queries.len() / dim;
        let ns = self.n_sources;
        let tile = (TILE_BYTES / (dim * 4)).max(BLOCK);
        let mut top = vec![f32::NEG_INFINITY; n_q * k];
        let mut per_source = match self.mode {
            PsiMode::PerEntry => Vec::new(),
            PsiMode::PerImage => vec![f32::NEG_INFINITY; n_q * ns],
        };
        let n_e = sources.len();
        let mut e0 = 0;
        while e0 < n_e {
            let e1 = (e0 + tile).min(n_e);
            let mut q0 = 0;
            while q0 < n_q {
                let nb = BLOCK.min(n_q - q0);
                let block: [&[f32]; BLOCK] = core::array::from_fn(|b| {
                    let q = q0 + b.min(nb - 1);
                    &queries[q * dim..(q + 1) * dim]
                });
                let exclude = self.exclude;
                let tile_sources = &sources[e0..e1];
                let tile_rows = &unit[e0 * dim..e1 * dim];
                match self.mode {
                    PsiMode::PerEntry => {
                        let top = &mut top[q0 * k..(q0 + nb) * k];
                        linalg::scan_dots(block, tile_rows, dim, |e, dots| {
                            if Some(tile_sources[e]) == exclude {
                                return;
                            }
                            for (slot, &d) in top.chunks_exact_mut(k).zip(&dots) {
                                if d > slot[k - 1] {
                                    insert_largest(slot, d);
                                }
                            }
                        });
                    }
                    PsiMode::PerImage => {
                        let best = &mut per_source[q0 * ns..(q0 + nb) * ns];
                        linalg::scan_dots(block, tile_rows, dim, |e, dots| {
                            let src = tile_sources[e];
                            if Some(src) == exclude {
                                return;
                            }
                            for (row, &d) in best.chunks_exact_mut(ns).zip(&dots) {
                                let m = &mut row[src as usize];
                                if d > *m {
                                    *m = d;
                                }
                            }
                        });
                    }
                }
                q0 += nb;
            }
            e0 = e1;
        }
        for q in 0..n_q {
            let slot = &mut top[q * k..(q + 1) * k];
            if self.mode == PsiMode::PerImage {
                for &m in &per_source[q * ns..(q + 1) * ns] {
                    if m > slot[k - 1] {
                        insert_largest(slot, m);
                    }
                }
            }
            let distances: [f64; MAX_K] =
                core::array::from_fn(|i| if i < k { cosine_distance(slot[i]) } else { 0.0 });
            out.push(self.reduce(&distances[..k]));
        }
    }
}

const BLOCK: usize = 4;
/// Bank bytes walked per tile.
const TILE_BYTES: usize = 256 * 1024;
/// Upper bound on the neighbor count, enforced by [`ScoringParams::validate`].
const MAX_K: usize = 64;

#[inline]
fn cosine_distance(dot: f32) -> f64 {
    (1.0 - f64::from(dot)).clamp(0.0, 2.0)
}

/// Keeps `slot` as the descending list of the largest values seen.
#[inline]
fn insert_largest(slot: &mut [f32], d: f32) {
    let mut i = slot.len() - 1;
    while i > 0 && slot[i - 1] < d {
        slot[i] = slot[i - 1];
        i -= 1;
    }
    slot[i] = d;
}

fn unit_rows(rows: &[f32], dim: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; rows.len()];
    for (src, dst) in rows.chunks_exact(dim).zip(out.chunks_exact_mut(dim)) {
        linalg::normalize_into(src, dst);
    }
    out
}

fn exclusion_for(bank: &MemoryBank, image_id: Option<&str>) -> Option<u32> {
    image_id.and_then(|id| bank.source_index(id))
}

/// Anomaly score of one query vector against `bank`, ignoring entries
/// tagged with `exclusion`.
pub fn psi_score(
    query: &[f32],
    bank: &MemoryBank,
    params: &ScoringParams,
    exclusion: Option<&str>,
) -> Result<f64> {
    if query.len() != bank.dim() {
        return Err(arg_err!(
            "query dim {} does not match bank dim {}",
            query.len(),
            bank.dim()
        ));
    }
    let plan = KnnPlan::new(bank, params, exclusion_for(bank, exclusion))?;
    let mut out = Vec::with_capacity(1);
    plan.score(&unit_rows(query, bank.dim()), &mut out);
    Ok(out[0])
}

/// Scores every patch of `query` against `bank`. Full-bank lookups always
/// exclude entries from `image_id`; normal-bank lookups only when
/// `exclude_self` is set.
pub fn response_map(
    image_id: &str,
    query: &FeatureGrid,
    bank: &MemoryBank,
    params: &ScoringParams,
    exclude_self: bool,
) -> Result<AnomalyMap> {
    if query.channels() != bank.dim() {
        return Err(arg_err!(
            "query dim {} does not match bank dim {}",
            query.channels(),
            bank.dim()
        ));
    }
    let exclude = if bank.kind == BankKind::Full || exclude_self {
        exclusion_for(bank, Some(image_id))
    } else {
        None
    };
    let plan = KnnPlan::new(bank, params, exclude)?;
    let mut values = Vec::with_capacity(query.patch_count());
    plan.score(&unit_rows(query.as_slice(), bank.dim()), &mut values);
    Ok(AnomalyMap {
        image_id: image_id.into(),
        grid: ScoreGrid::new(query.rows(), query.cols(), values)?,
        provenance: match bank.kind {
            BankKind::Full => Provenance::Full,
            BankKind::Normal => Provenance::Background,
        },
    })
}

/// Threshold for the subtraction gate: percentile `p` of the background
/// response of this image.
pub fn adaptive_tau(background: &AnomalyMap, p: f64) -> f64 {
    percentile(&background.grid.values, p)
}

/// `max(0, S_c - alpha * S_b * [S_b ≤ tau])` with `tau` taken from the
/// image's own background response.
pub fn adaptive_subtract(
    full: &AnomalyMap,
    background: &AnomalyMap,
    params: &ScoringParams,
) -> Result<AnomalyMap> {
    let tau = adaptive_tau(background, params.tau_percentile);
    adaptive_subtract_with_tau(full, background, params.alpha, tau)
}

pub fn adaptive_subtract_with_tau(
    full: &AnomalyMap,
    background: &AnomalyMap,
    alpha: f64,
    tau: f64,
) -> Result<AnomalyMap> {
    if full.image_id != background.image_id {
        return Err(arg_err!(
            "subtracting maps of different images `{}` and `{}`",
            full.image_id,
            background.image_id
        ));
    }
    let (a, b) = (&full.grid, &background.grid);
    if a.rows != b.rows || a.cols != b.cols {
        return Err(arg_err!(
            "map shapes differ: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&sc, &sb)| {
            if sb <= tau {
                (sc - alpha * sb).max(0.0)
            } else {
                sc
            }
        })
        .collect();
    Ok(AnomalyMap {
        image_id: full.image_id.clone(),
        grid: ScoreGrid::new(a.rows, a.cols, values)?,
        provenance: Provenance::Final,
    })
}

/// `S = Σ_r w_r S_r`, patch-wise.
pub fn fuse_scales(maps: &[AnomalyMap], weights: &[f64]) -> Result<AnomalyMap> {
    if maps.is_empty() || maps.len() != weights.len() {
        return Err(arg_err!(
            "fusion needs one map per weighted scale: {} maps, {} weights",
            maps.len(),
            weights.len()
        ));
    }
    check_weights(weights)?;
    let first = &maps[0];
    for m in &maps[1..] {
        if m.grid.rows != first.grid.rows || m.grid.cols != first.grid.cols {
            return Err(arg_err!("scale maps differ in shape"));
        }
        if m.image_id != first.image_id {
            return Err(arg_err!("scale maps belong to different images"));
        }
    }
    let mut values = vec![0.0; first.grid.values.len()];
    for (m, &w) in maps.iter().zip(weights) {
        for (v, &s) in values.iter_mut().zip(&m.grid.values) {
            *v += w * s;
        }
    }
    Ok(AnomalyMap {
        image_id: first.image_id.clone(),
        grid: ScoreGrid::new(first.grid.rows, first.grid.cols, values)?,
        provenance: Provenance::Fused,
    })
}

/// Mean patch score.
pub fn image_level_score(map: &AnomalyMap) -> f64 {
    let v = &map.grid.values;
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pixel-resolution score image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Half-pixel-center bilinear source coordinate, clamped to the grid.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
        .clamp(0.0, (src_len - 1) as f64);
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Normalized 1-D Gaussian kernel truncated at four standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(4.0 * sigma) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| libm::exp(-((x * x) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur_axis(src: &[f64], h: usize, w: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let off = t as isize - radius;
                let (sy, sx) = if horizontal {
                    (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                } else {
                    ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                };
                acc += kv * src[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Bilinear upsampling to `height x width` followed by Gaussian smoothing
/// with `sigma` pixels (replicate borders); `sigma = 0` skips smoothing.
pub fn render_pixel_map(
    map: &AnomalyMap,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<PixelMap> {
    let g = &map.grid;
    if height < g.rows || width < g.cols {
        return Err(arg_err!(
            "target {height}x{width} is smaller than grid {}x{}",
            g.rows,
            g.cols
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(arg_err!(
            "smoothing sigma must be non-negative, got {sigma}"
        ));
    }
    let cols: Vec<(usize, usize, f64)> =
        (0..width).map(|x| source_coord(x, g.cols, width)).collect();
    let mut up = vec![0.0f64; height * width];
    for y in 0..height {
        let (y0, y1, fy) = source_coord(y, g.rows, height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            let top = g.get(y0, x0) * (1.0 - fx) + g.get(y0, x1) * fx;
            let bottom = g.get(y1, x0) * (1.0 - fx) + g.get(y1, x1) * fx;
            up[y * width + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    if sigma > 0.0 {
        let kernel = gaussian_kernel(sigma);
        let tmp = blur_axis(&up, height, width, &kernel, true);
        up = blur_axis(&tmp, height, width, &kernel, false);
    }
    Ok(PixelMap {
        height,
        width,
        values: up.into_iter().map(|v| v as f32).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreset::ProjectionPolicy;
    use crate::memory::BankParams;

    fn bank(kind: BankKind, rows: &[&[f32]], sources: &[u32], ids: &[&str]) -> MemoryBank {
        let dim = rows[0].len();
        let entries = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let params = BankParams {
            ratio: 1.0,
            scale: 1,
            layer: 0,
            seed: 0,
            projection: ProjectionPolicy::Off,
        };
        MemoryBank::from_parts(
            kind,
            &params,
            rows.len(),
            rows.len(),
            dim,
            entries,
            sources.to_vec(),
            ids.iter().map(|s| String::from(*s)).collect(),
        )
        .unwrap()
    }

    fn fixed_k(k: usize) -> ScoringParams {
        ScoringParams {
            k_min: k,
            k_max: k,
            ..ScoringParams::default()
        }
    }

    fn map(id: &str, rows: usize, cols: usize, values: &[f64]) -> AnomalyMap {
        AnomalyMap {
            image_id: id.into(),
            grid: ScoreGrid::new(rows, cols, values.to_vec()).unwrap(),
            provenance: Provenance::Full,
        }
    }

    #[test]
    fn psi_examples() {
        let b = bank(
            BankKind::Normal,
            &[&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0]],
            &[0, 0],
            &["a"],
        );
        assert!(
            psi_score(&[1.0, 2.0, 3.0], &b, &fixed_k(1), None)
                .unwrap()
                .abs()
                < 1e-6
        );
        let orth = bank(BankKind::Normal, &[&[0.0, 1.0]], &[0], &["a"]);
        assert!((psi_score(&[2.0, 0.0], &orth, &fixed_k(1), None).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn exclusion_leaving_nothing_is_a_scoring_error() {
        let b = bank(BankKind::Full, &[&[1.0, 0.0]], &[0], &["a"]);
        assert!(matches!(
            psi_score(&[1.0, 0.0], &b, &fixed_k(1), Some("a")),
            Err(Error::Scoring(_))
        ));
    }

    #[test]
    fn per_image_mode_takes_one_minimum_per_source() {
        // source a has two near entries, b one far entry
        let b = bank(
            BankKind::Normal,
            &[&[1.0, 0.0], &[1.0, 0.01], &[0.0, 1.0]],
            &[0, 0, 1],
            &["a", "b"],
        );
        let q = [1.0f32, 0.0];
        let per_entry = psi_score(&q, &b, &fixed_k(2), None).unwrap();
        let per_image = psi_score(
            &q,
            &b,
            &ScoringParams {
                psi_mode: PsiMode::PerImage,
                ..fixed_k(2)
            },
            None,
        )
        .unwrap();
        assert!(per_entry < 1e-3);
        assert!((per_image - 0.5).abs() < 1e-6);
    }

    #[test]
    fn max_of_k_takes_kth_distance() {
        let b = bank(
            BankKind::Normal,
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[0, 0],
            &["a"],
        );
        let p = ScoringParams {
            reduction: Reduction::MaxOfK,
            ..fixed_k(2)
        };
        assert!((psi_score(&[1.0, 0.0], &b, &p, None).unwrap() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn effective_k_default_and_clamp() {
        let p = ScoringParams::default();
        assert_eq!(p.effective_k(50, 50), 1);
        assert_eq!(p.effective_k(250, 250), 3);
        assert_eq!(p.effective_k(10_000, 2), 2);
    }

    #[test]
    fn full_bank_response_excludes_own_image() {
        let b = bank(
            BankKind::Full,
            &[&[1.0, 0.0], &[0.0, 1.0]],
            &[0, 1],
            &["q", "other"],
        );
        let grid = FeatureGrid::new(1, 1, 2, vec![1.0, 0.0]).unwrap();
        let m = response_map("q", &grid, &b, &fixed_k(1), false).unwrap();
        assert!((m.grid.values[0] - 1.0).abs() < 1e-7);
        assert_eq!(m.provenance, Provenance::Full);
    }

    #[test]
    fn subtraction_examples() {
        let sc = map("x", 1, 3, &[0.5, 0.5, 0.9]);
        let sb = map("x", 1, 3, &[0.2, 0.2, 0.8]);
        let zero = adaptive_subtract_with_tau(&sc, &sb, 0.0, 0.3).unwrap();
        assert_eq!(zero.grid.values, sc.grid.values);
        let out = adaptive_subtract_with_tau(&sc, &sb, 0.5, 0.3).unwrap();
        assert!((out.grid.values[0] - 0.4).abs() < 1e-15);
        // S_b above tau: untouched
        assert_eq!(out.grid.values[2], 0.9);
        let bad = map("x", 3, 1, &[0.1, 0.2, 0.3]);
        assert!(adaptive_subtract_with_tau(&sc, &bad, 0.5, 0.3).is_err());
    }

    #[test]
    fn subtraction_floors_at_zero() {
        let sc = map("x", 1, 1, &[0.1]);
        let sb = map("x", 1, 1, &[0.4]);
        let out = adaptive_subtract_with_tau(&sc, &sb, 1.0, 0.5).unwrap();
        assert_eq!(out.grid.values[0], 0.0);
    }

    #[test]
    fn fusion_examples() {
        let a = map("x", 2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let b = map("x", 2, 2, &[1.0, 1.0, 0.0, 5.0]);
        let avg = fuse_scales(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(avg.grid.values, vec![0.5, 1.0, 1.0, 4.0]);
        let only_first = fuse_scales(&[a.clone(), b.clone(), b.clone()], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(only_first.grid.values, a.grid.values);
        assert!(fuse_scales(std::slice::from_ref(&a), &[0.5, 0.5]).is_err());
        assert!(fuse_scales(&[a, b], &[0.6, 0.6]).is_err());
    }

    #[test]
    fn image_score_is_mean() {
        assert!((image_level_score(&map("x", 2, 2, &[0.1, 0.2, 0.3, 0.4])) - 0.25).abs() < 1e-15);
        assert_eq!(image_level_score(&map("x", 1, 2, &[0.0, 0.0])), 0.0);
    }

    #[test]
    fn bilinear_2x2_to_4x4() {
        let m = map("x", 2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let px = render_pixel_map(&m, 4, 4, 0.0).unwrap();
        // half-pixel centers map output 0..4 to source -0.25, 0.25, 0.75, 1.25
        let w = [0.0, 0.25, 0.75, 1.0];
        for y in 0..4 {
            for x in 0..4 {
                let expect = w[x] * 1.0 + w[y] * 2.0;
                assert!(
                    (f64::from(px.values[y * 4 + x]) - expect).abs() < 1e-6,
                    "({y}, {x})"
                );
            }
        }
    }

    #[test]
    fn constant_map_renders_constant() {
        let m = map("x", 3, 3, &[0.7; 9]);
        let px = render_pixel_map(&m, 12, 12, 4.0).unwrap();
        assert!(px.values.iter().all(|&v| (v - 0.7).abs() < 1e-6));
        assert!(render_pixel_map(&m, 2, 12, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(ScoringParams::default().validate().is_ok());
        let bad = ScoringParams {
            k_min: 4,
            k_max: 3,
            ..ScoringParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScoringParams {
            alpha: 1.5,
            ..ScoringParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = ScoringParams {
            weights: vec![0.5, 0.4],
            ..ScoringParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
