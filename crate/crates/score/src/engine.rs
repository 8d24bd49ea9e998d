//! Parallel scheduling of the core stages. Work is split per bank and per
//! image; results are collected in job order so the output never depends
//! on completion order.

use log::{debug, info};
use pa_core::decision::{render_pixel_map, PixelMap};
use pa_core::pipeline::{
    bank_jobs, evaluate_outcome, finalize_all, image_responses, run_bank_job, select_stage,
    BankSet, ImageResponses, ScoreOutcome, Selection,
};
use pa_core::{Dataset, EngineConfig, MetricSet};
use rayon::prelude::*;

use crate::cache::{dataset_fingerprint, job_fingerprint, BankCache};
use crate::error::{Error, Result};

pub fn select(ds: &Dataset, cfg: &EngineConfig) -> Result<Selection> {
    let sel = select_stage(ds, cfg).map_err(Error::stage("select"))?;
    info!(
        "selected {} of {} images as references",
        sel.ranking.selected_count,
        ds.len()
    );
    Ok(sel)
}

pub fn build_banks(
    ds: &Dataset,
    cfg: &EngineConfig,
    sel: &Selection,
    cache: Option<&BankCache>,
) -> Result<BankSet> {
    let jobs = bank_jobs(ds, cfg, sel);
    let ds_fp = cache.map(|_| dataset_fingerprint(ds));
    let banks = jobs
        .par_iter()
        .map(|job| {
            let fp = ds_fp.map(|d| job_fingerprint(d, job, sel));
            if let (Some(cache), Some(fp)) = (cache, &fp) {
                if let Some(bank) = cache.load(job, fp)? {
                    debug!("{job}: loaded from cache");
                    return Ok(bank);
                }
            }
            let bank = run_bank_job(ds, job, sel).map_err(Error::stage("build banks"))?;
            debug!(
                "{job}: {} entries from a pool of {}",
                bank.len(),
                bank.pool_size
            );
            if let (Some(cache), Some(fp)) = (cache, &fp) {
                cache.store(&bank, job, fp)?;
            }
            Ok(bank)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = BankSet::default();
    banks.into_iter().for_each(|b| set.insert(b));
    info!("built {} banks", jobs.len());
    Ok(set)
}

pub fn responses(ds: &Dataset, banks: &BankSet, cfg: &EngineConfig) -> Result<Vec<ImageResponses>> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| image_responses(ds, i, banks, cfg).map_err(Error::stage("score")))
        .collect()
}

pub fn score(ds: &Dataset, banks: &BankSet, cfg: &EngineConfig) -> Result<ScoreOutcome> {
    let r = responses(ds, banks, cfg)?;
    finalize_all(&r, cfg).map_err(Error::stage("score"))
}

pub fn render(ds: &Dataset, outcome: &ScoreOutcome, cfg: &EngineConfig) -> Result<Vec<PixelMap>> {
    outcome
        .maps
        .par_iter()
        .zip(&ds.manifest.image_records)
        .map(|(m, rec)| {
            render_pixel_map(
                m,
                rec.height as usize,
                rec.width as usize,
                cfg.smoothing_sigma,
            )
            .map_err(Error::stage("render maps"))
        })
        .collect()
}

pub fn evaluate(
    ds: &Dataset,
    outcome: &ScoreOutcome,
    maps: &[PixelMap],
    cfg: &EngineConfig,
) -> Result<MetricSet> {
    evaluate_outcome(ds, outcome, maps, cfg).map_err(Error::stage("evaluate"))
}
