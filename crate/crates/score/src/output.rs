//! Run artifacts: 16-bit PNG pixel maps with their min-max scale, raw f32
//! maps, the image-score table, the selection summary and the metric report.

use std::fs;
use std::path::{Path, PathBuf};

use pa_core::decision::PixelMap;
use pa_core::pipeline::{image_labels, ScoreOutcome, Selection};
use pa_core::{Dataset, EngineConfig, MetricSet};
use serde::Serialize;

use crate::container::{write_file, write_png};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const MAPS_DIR: &str = "maps";

/// File stem of an image's maps: manifest position plus a filesystem-safe
/// copy of the id.
pub fn map_stem(index: usize, image_id: &str) -> String {
    let safe: String = image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "-_.".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{index:04}_{safe}")
}

/// Min-max quantization to 16 bits; a constant map becomes all zeros.
pub fn quantize_u16(values: &[f32]) -> (f32, f32, Vec<u16>) {
    let min = values.iter().copied().fold(f32::INFINITY, f32::min);
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = f64::from(max) - f64::from(min);
    let q = values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((f64::from(v) - f64::from(min)) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    (min, max, q)
}

/// Writes `maps/<stem>.png` and `maps/<stem>.f32` per image; returns the
/// min-max scale of each PNG.
pub fn write_maps(dir: &Path, ds: &Dataset, maps: &[PixelMap]) -> Result<Vec<(f32, f32)>> {
    let maps_dir = dir.join(MAPS_DIR);
    fs::create_dir_all(&maps_dir).map_err(|e| Error::io(&maps_dir, e))?;
    let mut scales = Vec::with_capacity(maps.len());
    for (i, (rec, map)) in ds.manifest.image_records.iter().zip(maps).enumerate() {
        let stem = maps_dir.join(map_stem(i, &rec.image_id));
        let (min, max, q) = quantize_u16(&map.values);
        let be: Vec<u8> = q.iter().flat_map(|v| v.to_be_bytes()).collect();
        write_png(
            &stem.with_extension("png"),
            map.width,
            map.height,
            png::BitDepth::Sixteen,
            &be,
        )?;
        let raw: Vec<u8> = map.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_file(&stem.with_extension("f32"), &raw)?;
        scales.push((min, max));
    }
    Ok(scales)
}

/// Reads the raw maps written by [`write_maps`].
pub fn read_maps(dir: &Path, ds: &Dataset) -> Result<Vec<PixelMap>> {
    ds.manifest
        .image_records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let path = dir
                .join(MAPS_DIR)
                .join(map_stem(i, &rec.image_id))
                .with_extension("f32");
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let (h, w) = (rec.height as usize, rec.width as usize);
            if bytes.len() != h * w * 4 {
                return Err(Error::Config(format!(
                    "{} holds {} bytes, expected {}",
                    path.display(),
                    bytes.len(),
                    h * w * 4
                )));
            }
            let values = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(PixelMap {
                height: h,
                width: w,
                values,
            })
        })
        .collect()
}

pub fn write_scores(
    dir: &Path,
    ds: &Dataset,
    outcome: &ScoreOutcome,
    scales: &[(f32, f32)],
) -> Result<()> {
    let labels = image_labels(ds);
    let mut out = String::from("image_id,label,score,map_min,map_max\n");
    for (((rec, score), label), (min, max)) in ds
        .manifest
        .image_records
        .iter()
        .zip(&outcome.image_scores)
        .zip(&labels)
        .zip(scales)
    {
        out += &format!(
            "{},{},{score},{min},{max}\n",
            csv_field(&rec.image_id),
            u8::from(*label)
        );
    }
    write_file(&dir.join(SCORES_FILE), out.as_bytes())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Image scores from a score table, in manifest order.
pub fn read_scores(dir: &Path, ds: &Dataset) -> Result<Vec<f64>> {
    let path = dir.join(SCORES_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let bad = |detail: String| Error::Config(format!("{}: {detail}", path.display()));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    if rows.len() != ds.len() {
        return Err(bad(format!("{} rows for {} images", rows.len(), ds.len())));
    }
    rows.iter()
        .zip(&ds.manifest.image_records)
        .map(|(row, rec)| {
            // The id may be quoted and contain commas; the last four fields are numeric.
            let fields: Vec<&str> = row.rsplitn(5, ',').collect();
            if fields.len() != 5 || fields[4] != csv_field(&rec.image_id) {
                return Err(bad(format!("row for `{}` is malformed", rec.image_id)));
            }
            fields[2]
                .parse::<f64>()
                .map_err(|e| bad(format!("score of `{}`: {e}", rec.image_id)))
        })
        .collect()
}

#[derive(Serialize)]
struct SelectionDoc<'a> {
    selected: Vec<&'a str>,
    ranking: Vec<RankEntry<'a>>,
    sigma_spatial: f64,
    sigma_temporal: f64,
    sigma: f64,
    augmentation: Option<PlanDoc>,
}

#[derive(Serialize)]
struct RankEntry<'a> {
    image_id: &'a str,
    normality: f64,
}

#[derive(Serialize)]
struct PlanDoc {
    strategy: String,
    theta: f64,
    ops: Vec<String>,
}

pub fn selection_json(sel: &Selection) -> String {
    let doc = SelectionDoc {
        selected: sel
            .ranking
            .selected()
            .iter()
            .map(|(id, _)| id.as_str())
            .collect(),
        ranking: sel
            .ranking
            .ranked
            .iter()
            .map(|(id, s)| RankEntry {
                image_id: id,
                normality: *s,
            })
            .collect(),
        sigma_spatial: sel.variance.sigma_spatial,
        sigma_temporal: sel.variance.sigma_temporal,
        sigma: sel.variance.sigma,
        augmentation: sel.plan.as_ref().map(|p| PlanDoc {
            strategy: format!("{:?}", p.strategy).to_lowercase(),
            theta: p.theta,
            ops: p.ops.iter().map(|op| format!("{op:?}")).collect(),
        }),
    };
    serde_json::to_string_pretty(&doc).expect("selection serializes") + "\n"
}

/// A metric in percent with one decimal, or "n/a".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percent(pub Option<f64>);

impl Serialize for Percent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64((v * 1000.0).round() / 10.0),
            None => s.serialize_str("n/a"),
        }
    }
}

/// An unrounded metric in [0, 1], or "n/a".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raw(pub Option<f64>);

impl Serialize for Raw {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("n/a"),
        }
    }
}

#[derive(Serialize)]
struct Columns<T> {
    #[serde(rename = "AUROC-cls")]
    auroc_cls: T,
    #[serde(rename = "F1-max-cls")]
    f1_max_cls: T,
    #[serde(rename = "AP-cls")]
    ap_cls: T,
    #[serde(rename = "AUROC-segm")]
    auroc_segm: T,
    #[serde(rename = "F1-max-segm")]
    f1_max_segm: T,
    #[serde(rename = "AP-segm")]
    ap_segm: T,
    #[serde(rename = "PRO-segm")]
    pro_segm: T,
}

impl<T> Columns<T> {
    fn from_metrics(m: &MetricSet, f: impl Fn(Option<f64>) -> T) -> Self {
        Self {
            auroc_cls: f(m.auroc_cls),
            f1_max_cls: f(m.f1_max_cls),
            ap_cls: f(m.ap_cls),
            auroc_segm: f(m.auroc_segm),
            f1_max_segm: f(m.f1_max_segm),
            ap_segm: f(m.ap_segm),
            pro_segm: f(m.pro_segm),
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    category: &'a str,
    images: usize,
    anomalous_images: usize,
    seed: u64,
    scales: &'a [usize],
    pad_enabled: bool,
    pam_enabled: bool,
    multiscale_pam_enabled: bool,
    metrics: Columns<Percent>,
    metrics_raw: Columns<Raw>,
    notes: Vec<&'static str>,
}

pub fn report_json(ds: &Dataset, cfg: &EngineConfig, metrics: &MetricSet) -> String {
    let report = Report {
        category: &ds.manifest.category,
        images: ds.len(),
        anomalous_images: image_labels(ds).iter().filter(|&&l| l).count(),
        seed: cfg.seed,
        scales: &cfg.scales,
        pad_enabled: cfg.toggles.pad_enabled,
        pam_enabled: cfg.toggles.pam_enabled,
        multiscale_pam_enabled: cfg.toggles.multiscale_pam_enabled,
        metrics: Columns::from_metrics(metrics, Percent),
        metrics_raw: Columns::from_metrics(metrics, Raw),
        notes: vec![
            "metrics in percent with one decimal; metrics_raw holds the unrounded fractions",
            "subtracted patch scores are floored at 0 before image-level averaging",
        ],
    };
    serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
}

/// A directory that is filled in a sibling staging location and moved into
/// place by [`Staged::commit`]; dropped uncommitted, it leaves nothing behind.
pub struct Staged {
    target: PathBuf,
    staging: PathBuf,
    committed: bool,
}

impl Staged {
    /// Starts from a copy of `keep` files already present in the target.
    pub fn new(target: &Path, keep: &[&str]) -> Result<Self> {
        let name = target.file_name().ok_or_else(|| {
            Error::Config(format!("output path {} has no file name", target.display()))
        })?;
        let mut staging_name = name.to_os_string();
        staging_name.push(".partial");
        let staging = target.with_file_name(staging_name);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let staged = Self {
            target: target.to_path_buf(),
            staging,
            committed: false,
        };
        for rel in keep {
            copy_tree(&target.join(rel), &staged.staging.join(rel))?;
        }
        Ok(staged)
    }

    pub fn path(&self) -> &Path {
        &self.staging
    }

    pub fn commit(mut self) -> Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    if from.is_dir() {
        fs::create_dir_all(to).map_err(|e| Error::io(to, e))?;
        for entry in fs::read_dir(from).map_err(|e| Error::io(from, e))? {
            let entry = entry.map_err(|e| Error::io(from, e))?;
            copy_tree(&entry.path(), &to.join(entry.file_name()))?;
        }
    } else if from.is_file() {
        fs::copy(from, to).map_err(|e| Error::io(from, e))?;
    }
    Ok(())
}
