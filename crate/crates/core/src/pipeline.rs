//! Stage functions for the end-to-end engine: select references, plan
//! augmentation, build banks, score images, evaluate.
//!
//! Every stage is a pure function of the dataset and an [`EngineConfig`];
//! callers decide how to schedule the per-bank and per-image work.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::aggregation::{
    aggregate_neighborhood, select_normal_images, NormalityRanking, NormalityScoring,
    DEFAULT_SCALES, DEFAULT_SELECTION_FRACTION, DEFAULT_TEMPERATURE,
};
use crate::cada::{
    estimate_position_variance, plan_augmentations, AugmentationPlan, PositionVariance,
    DEFAULT_JITTER_SCALE, DEFAULT_THETA,
};
use crate::coreset::ProjectionPolicy;
use crate::dataset::Dataset;
use crate::decision::{
    adaptive_subtract_with_tau, adaptive_tau, fuse_scales, image_level_score, render_pixel_map,
    response_map, AnomalyMap, FusionOrder, PixelMap, Provenance, ScoringParams, TauScope,
};
use crate::error::{arg_err, Result};
use crate::grid::ScoreGrid;
use crate::linalg::percentile;
use crate::memory::{
    build_bank, BankKind, BankParams, MemoryBank, DEFAULT_FULL_RATIO, DEFAULT_NORMAL_RATIO,
};
use crate::metrics::{evaluate, MetricSet, DEFAULT_FPR_LIMIT};

#[derive(Debug, Clone, PartialEq)]
pub struct CadaConfig {
    pub enabled: bool,
    pub theta: f64,
    pub jitter_scale: f64,
}

impl Default for CadaConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            theta: DEFAULT_THETA,
            jitter_scale: DEFAULT_JITTER_SCALE,
        }
    }
}

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Apply the adaptive subtraction; off means plain full-bank kNN.
    pub pad_enabled: bool,
    /// Build the normal bank; off means a zero background response.
    pub pam_enabled: bool,
    /// Build the normal bank at every scale; off restricts it to the
    /// smallest scale.
    pub multiscale_pam_enabled: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            pad_enabled: true,
            pam_enabled: true,
            multiscale_pam_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub scales: Vec<usize>,
    pub temperature: f64,
    pub selection_fraction: f64,
    pub normality: NormalityScoring,
    pub cada: CadaConfig,
    pub full_ratio: f64,
    pub normal_ratio: f64,
    pub seed: u64,
    pub projection: ProjectionPolicy,
    pub scoring: ScoringParams,
    pub smoothing_sigma: f64,
    pub fpr_limit: f64,
    pub toggles: Toggles,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
            temperature: DEFAULT_TEMPERATURE,
            selection_fraction: DEFAULT_SELECTION_FRACTION,
            normality: NormalityScoring::PositiveOnly,
            cada: CadaConfig::default(),
            full_ratio: DEFAULT_FULL_RATIO,
            normal_ratio: DEFAULT_NORMAL_RATIO,
            seed: 0,
            projection: ProjectionPolicy::Auto,
            scoring: ScoringParams::default(),
            smoothing_sigma: 4.0,
            fpr_limit: DEFAULT_FPR_LIMIT,
            toggles: Toggles::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(arg_err!("scale set must be non-empty"));
        }
        if let Some(r) = self.scales.iter().find(|&&r| r == 0 || r % 2 == 0) {
            return Err(arg_err!("scales must be odd and positive, got {r}"));
        }
        let mut sorted = self.scales.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.scales.len() {
            return Err(arg_err!("scales must be distinct, got {:?}", self.scales));
        }
        for (name, r) in [("full", self.full_ratio), ("normal", self.normal_ratio)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(arg_err!("{name} bank ratio must be in (0, 1], got {r}"));
            }
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma.is_finite()) {
            return Err(arg_err!("smoothing sigma must be non-negative"));
        }
        if !(self.fpr_limit > 0.0 && self.fpr_limit <= 1.0) {
            return Err(arg_err!("FPR limit must be in (0, 1]"));
        }
        self.scoring.validate()?;
        self.scoring.scale_weights(self.scales.len())?;
        Ok(())
    }

    fn normal_bank_scales(&self) -> Vec<usize> {
        if !self.toggles.pam_enabled {
            return Vec::new();
        }
        if self.toggles.multiscale_pam_enabled {
            self.scales.clone()
        } else {
            vec![*self.scales.iter().min().expect("validated non-empty")]
        }
    }
}

/// Output of the reference-selection stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub ranking: NormalityRanking,
    pub variance: PositionVariance,
    pub plan: Option<AugmentationPlan>,
}

pub fn select_stage(dataset: &Dataset, config: &EngineConfig) -> Result<Selection> {
    let ranking = select_normal_images(
        dataset,
        config.selection_fraction,
        config.temperature,
        config.normality,
    )?;
    let variance = estimate_position_variance(dataset, &ranking.selected_ids())?;
    let plan = if config.cada.enabled {
        Some(plan_augmentations(
            &variance,
            config.cada.theta,
            config.cada.jitter_scale,
        )?)
    } else {
        None
    };
    Ok(Selection {
        ranking,
        variance,
        plan,
    })
}

/// One bank to build.
#[derive(Debug, Clone, PartialEq)]
pub struct BankJob {
    pub kind: BankKind,
    pub image_ids: Vec<String>,
    pub params: BankParams,
}

/// Seed of the bank for `(kind, scale, layer)`.
fn bank_seed(seed: u64, kind: BankKind, scale: usize, layer: u32) -> u64 {
    let k = match kind {
        BankKind::Normal => 1u64,
        BankKind::Full => 2,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k << 56) ^ ((scale as u64) << 40) ^ u64::from(layer)
}

/// Every bank the configuration needs, ordered by (kind, scale, layer).
pub fn bank_jobs(dataset: &Dataset, config: &EngineConfig, selection: &Selection) -> Vec<BankJob> {
    let all: Vec<String> = dataset.image_ids().map(String::from).collect();
    let normal_ids = selection.ranking.selected_ids();
    let mut jobs = Vec::new();
    for (kind, scales, ids, ratio) in [
        (
            BankKind::Normal,
            config.normal_bank_scales(),
            &normal_ids,
            config.normal_ratio,
        ),
        (
            BankKind::Full,
            config.scales.clone(),
            &all,
            config.full_ratio,
        ),
    ] {
        for &scale in &scales {
            for &layer in &dataset.manifest.layers {
                jobs.push(BankJob {
                    kind,
                    image_ids: ids.clone(),
                    params: BankParams {
                        ratio,
                        scale,
                        layer,
                        seed: bank_seed(config.seed, kind, scale, layer),
                        projection: config.projection,
                    },
                });
            }
        }
    }
    jobs
}

pub fn run_bank_job(dataset: &Dataset, job: &BankJob, selection: &Selection) -> Result<MemoryBank> {
    let plan = match job.kind {
        BankKind::Normal => selection.plan.as_ref(),
        BankKind::Full => None,
    };
    build_bank(dataset, job.kind, &job.image_ids, plan, &job.params)
}

/// Banks keyed by `(scale, layer)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BankSet {
    pub full: BTreeMap<(usize, u32), MemoryBank>,
    pub normal: BTreeMap<(usize, u32), MemoryBank>,
}

impl BankSet {
    pub fn insert(&mut self, bank: MemoryBank) {
        let key = (bank.scale, bank.layer);
        match bank.kind {
            BankKind::Full => self.full.insert(key, bank),
            BankKind::Normal => self.normal.insert(key, bank),
        };
    }
}

pub fn build_banks(
    dataset: &Dataset,
    config: &EngineConfig,
    selection: &Selection,
) -> Result<BankSet> {
    let mut set = BankSet::default();
    for job in bank_jobs(dataset, config, selection) {
        set.insert(run_bank_job(dataset, &job, selection)?);
    }
    Ok(set)
}

/// Layer-averaged full and background responses of one image at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleResponse {
    pub scale: usize,
    pub full: Vec<AnomalyMap>,
    /// Parallel to `full`; `None` where no normal bank exists.
    pub background: Vec<Option<AnomalyMap>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResponses {
    pub image_id: String,
    pub scales: Vec<ScaleResponse>,
}

/// Full- and normal-bank responses of one image at every (scale, layer).
pub fn image_responses(
    dataset: &Dataset,
    image_index: usize,
    banks: &BankSet,
    config: &EngineConfig,
) -> Result<ImageResponses> {
    let image_id = dataset.manifest.image_records[image_index].image_id.clone();
    let mut scales = Vec::with_capacity(config.scales.len());
    for &scale in &config.scales {
        let mut full = Vec::new();
        let mut background = Vec::new();
        for (li, &layer) in dataset.manifest.layers.iter().enumerate() {
            let aggregated =
                aggregate_neighborhood(&dataset.images[image_index].layers[li], scale)?;
            let bank = banks
                .full
                .get(&(scale, layer))
                .ok_or_else(|| arg_err!("missing full bank for scale {scale}, layer {layer}"))?;
            full.push(response_map(
                &image_id,
                &aggregated,
                bank,
                &config.scoring,
                true,
            )?);
            background.push(match banks.normal.get(&(scale, layer)) {
                Some(nb) if config.toggles.pad_enabled => Some(response_map(
                    &image_id,
                    &aggregated,
                    nb,
                    &config.scoring,
                    false,
                )?),
                _ => None,
            });
        }
        scales.push(ScaleResponse {
            scale,
            full,
            background,
        });
    }
    Ok(ImageResponses { image_id, scales })
}

/// Dataset-wide subtraction thresholds per `(scale, layer index)`, used when
/// the threshold scope is the whole dataset.
pub fn dataset_taus(
    responses: &[ImageResponses],
    percentile_p: f64,
) -> BTreeMap<(usize, usize), f64> {
    let mut pooled: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in responses {
        for s in &r.scales {
            for (li, bg) in s.background.iter().enumerate() {
                if let Some(bg) = bg {
                    pooled
                        .entry((s.scale, li))
                        .or_default()
                        .extend_from_slice(&bg.grid.values);
                }
            }
        }
    }
    pooled
        .into_iter()
        .map(|(k, v)| (k, percentile(&v, percentile_p)))
        .collect()
}

fn mean_maps(image_id: &str, maps: &[AnomalyMap], provenance: Provenance) -> Result<AnomalyMap> {
    let first = &maps[0].grid;
    let mut values = vec![0.0; first.values.len()];
    for m in maps {
        for (v, &s) in values.iter_mut().zip(&m.grid.values) {
            *v += s;
        }
    }
    let n = maps.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(AnomalyMap {
        image_id: image_id.into(),
        grid: ScoreGrid::new(first.rows, first.cols, values)?,
        provenance,
    })
}

fn zero_like(map: &AnomalyMap) -> AnomalyMap {
    AnomalyMap {
        image_id: map.image_id.clone(),
        grid: ScoreGrid::filled(map.grid.rows, map.grid.cols, 0.0),
        provenance: Provenance::Background,
    }
}

/// Turns responses into the fused patch map of one image.
pub fn finalize_image(
    responses: &ImageResponses,
    config: &EngineConfig,
    taus: Option<&BTreeMap<(usize, usize), f64>>,
) -> Result<AnomalyMap> {
    let p = &config.scoring;
    let weights = p.scale_weights(config.scales.len())?;
    let id = responses.image_id.as_str();
    let tau_for = |scale: usize, li: usize, bg: &AnomalyMap| -> f64 {
        match (p.tau_scope, taus) {
            (TauScope::PerDataset, Some(t)) => t
                .get(&(scale, li))
                .copied()
                .unwrap_or_else(|| adaptive_tau(bg, p.tau_percentile)),
            _ => adaptive_tau(bg, p.tau_percentile),
        }
    };
    match p.fusion_order {
        FusionOrder::SubtractThenFuse => {
            let mut per_scale = Vec::with_capacity(responses.scales.len());
            for s in &responses.scales {
                let mut finals = Vec::with_capacity(s.full.len());
                for (li, (full, bg)) in s.full.iter().zip(&s.background).enumerate() {
                    finals.push(match bg {
                        Some(bg) if config.toggles.pad_enabled => {
                            adaptive_subtract_with_tau(full, bg, p.alpha, tau_for(s.scale, li, bg))?
                        }
                        _ => full.clone(),
                    });
                }
                per_scale.push(mean_maps(id, &finals, Provenance::Final)?);
            }
            fuse_scales(&per_scale, &weights)
        }
        FusionOrder::FuseThenSubtract => {
            let mut full_scales = Vec::new();
            let mut bg_scales = Vec::new();
            let mut any_bg = false;
            for s in &responses.scales {
                let full = mean_maps(id, &s.full, Provenance::Full)?;
                let bgs: Vec<AnomalyMap> = s
                    .background
                    .iter()
                    .zip(&s.full)
                    .map(|(b, f)| b.clone().unwrap_or_else(|| zero_like(f)))
                    .collect();
                any_bg |= s.background.iter().any(Option::is_some);
                bg_scales.push(mean_maps(id, &bgs, Provenance::Background)?);
                full_scales.push(full);
            }
            let full = fuse_scales(&full_scales, &weights)?;
            if !(any_bg && config.toggles.pad_enabled) {
                return Ok(full);
            }
            let bg = fuse_scales(&bg_scales, &weights)?;
            let tau = adaptive_tau(&bg, p.tau_percentile);
            let mut out = adaptive_subtract_with_tau(&full, &bg, p.alpha, tau)?;
            out.provenance = Provenance::Fused;
            Ok(out)
        }
    }
}

/// Scores of every image plus the artifacts needed for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOutcome {
    pub maps: Vec<AnomalyMap>,
    pub image_scores: Vec<f64>,
}

/// Runs [`image_responses`] and [`finalize_image`] over all images,
/// sequentially.
pub fn score_all(
    dataset: &Dataset,
    banks: &BankSet,
    config: &EngineConfig,
) -> Result<ScoreOutcome> {
    let responses = (0..dataset.len())
        .map(|i| image_responses(dataset, i, banks, config))
        .collect::<Result<Vec<_>>>()?;
    finalize_all(&responses, config)
}

pub fn finalize_all(responses: &[ImageResponses], config: &EngineConfig) -> Result<ScoreOutcome> {
    let taus = match config.scoring.tau_scope {
        TauScope::PerDataset => Some(dataset_taus(responses, config.scoring.tau_percentile)),
        TauScope::PerImage => None,
    };
    let maps = responses
        .iter()
        .map(|r| finalize_image(r, config, taus.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let image_scores = maps.iter().map(image_level_score).collect();
    Ok(ScoreOutcome { maps, image_scores })
}

/// Image labels from ground truth: anomalous when the mask has any
/// nonzero pixel.
pub fn image_labels(dataset: &Dataset) -> Vec<bool> {
    dataset
        .masks
        .iter()
        .map(|m| m.as_ref().is_some_and(|m| m.anomalous_pixels() > 0))
        .collect()
}

pub fn render_all(dataset: &Dataset, maps: &[AnomalyMap], sigma: f64) -> Result<Vec<PixelMap>> {
    maps.iter()
        .zip(&dataset.manifest.image_records)
        .map(|(m, rec)| render_pixel_map(m, rec.height as usize, rec.width as usize, sigma))
        .collect()
}

pub fn evaluate_outcome(
    dataset: &Dataset,
    outcome: &ScoreOutcome,
    pixel_maps: &[PixelMap],
    config: &EngineConfig,
) -> Result<MetricSet> {
    evaluate(
        &outcome.image_scores,
        &image_labels(dataset),
        pixel_maps,
        &dataset.masks,
        config.fpr_limit,
    )
}

/// Everything a full run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub selection: Selection,
    pub outcome: ScoreOutcome,
    pub pixel_maps: Vec<PixelMap>,
    pub metrics: MetricSet,
}

/// Sequential end-to-end run.
pub fn run(dataset: &Dataset, config: &EngineConfig) -> Result<RunResult> {
    config.validate()?;
    dataset.validate()?;
    let selection = select_stage(dataset, config)?;
    let banks = build_banks(dataset, config, &selection)?;
    let outcome = score_all(dataset, &banks, config)?;
    let pixel_maps = render_all(dataset, &outcome.maps, config.smoothing_sigma)?;
    let metrics = evaluate_outcome(dataset, &outcome, &pixel_maps, config)?;
    Ok(RunResult {
        selection,
        outcome,
        pixel_maps,
        metrics,
    })
}

impl core::fmt::Display for BankJob {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{} bank r={} layer={}",
            self.kind.as_str(),
            self.params.scale,
            self.params.layer
        )
    }
}
