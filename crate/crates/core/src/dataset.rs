//! In-memory model of a feature container and its byte-level blob codec.
//!
//! A container is a manifest plus one blob per image. Each image blob holds
//! `|layers| * H_p * W_p * C` little-endian f32 values in `[layer, row, col,
//! channel]` order followed by `|layers| * C` class-token values. The text
//! blob holds `f_pos` then `f_neg`, `C` values each. Features are stored as
//! produced by the extractor; consumers normalize.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FeatureGrid;
use crate::linalg;

pub const DTYPE_F32_LE: &str = "float32-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub blob: String,
    #[serde(default)]
    pub mask: Option<String>,
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbeddingRecord {
    pub blob: String,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub category: String,
    pub image_records: Vec<ImageRecord>,
    pub grid_dims: [usize; 2],
    pub layers: Vec<u32>,
    pub channels: usize,
    pub dtype: String,
    pub backbone_id: String,
    pub resize: u32,
    pub text_embeddings: TextEmbeddingRecord,
    /// Images were captured in manifest order (enables the temporal term of
    /// the position variance).
    #[serde(default)]
    pub sequence_ordered: bool,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FeatureManifest {
    pub fn rows(&self) -> usize {
        self.grid_dims[0]
    }

    pub fn cols(&self) -> usize {
        self.grid_dims[1]
    }

    /// Number of f32 values in one image blob.
    pub fn blob_values(&self) -> usize {
        let l = self.layers.len();
        l * self.rows() * self.cols() * self.channels + l * self.channels
    }

    pub fn blob_bytes(&self) -> usize {
        self.blob_values() * 4
    }

    pub fn text_blob_bytes(&self) -> usize {
        self.channels * 2 * 4
    }

    /// Checks the manifest-level invariants (shape, layers, uniqueness).
    pub fn validate(&self) -> Result<()> {
        if self.image_records.is_empty() {
            return Err(Error::Schema("dataset must contain ≥ 1 image".into()));
        }
        if self.rows() == 0 || self.cols() == 0 {
            return Err(Error::Schema(format!(
                "grid_dims must be positive, got {:?}",
                self.grid_dims
            )));
        }
        if self.channels == 0 {
            return Err(Error::Schema("channels must be ≥ 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Schema("layers must be non-empty".into()));
        }
        if self.layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema(format!(
                "layers must be strictly increasing, got {:?}",
                self.layers
            )));
        }
        if self.dtype != DTYPE_F32_LE {
            return Err(Error::Schema(format!(
                "unsupported dtype `{}`, expected `{DTYPE_F32_LE}`",
                self.dtype
            )));
        }
        let mut seen = BTreeSet::new();
        for rec in &self.image_records {
            if rec.image_id.is_empty() {
                return Err(Error::Schema("empty image_id".into()));
            }
            if !seen.insert(rec.image_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate image_id `{}`",
                    rec.image_id
                )));
            }
            if rec.height == 0 || rec.width == 0 {
                return Err(Error::Schema(format!(
                    "image `{}` has zero pixel dims",
                    rec.image_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingPair {
    pub positive: Vec<f32>,
    pub negative: Vec<f32>,
    pub positive_prompt: String,
    pub negative_prompt: String,
}

impl TextEmbeddingPair {
    pub fn for_category(category: &str, positive: Vec<f32>, negative: Vec<f32>) -> Self {
        Self {
            positive,
            negative,
            positive_prompt: format!("a photo of normal {category}"),
            negative_prompt: format!("a photo of defective {category}"),
        }
    }
}

/// All layers of one image plus its per-layer class tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub layers: Vec<FeatureGrid>,
    pub class_tokens: Vec<Vec<f32>>,
}

/// Binary ground-truth mask at original pixel resolution; nonzero = anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: alloc::vec![0; height * width],
        }
    }

    pub fn is_anomalous(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn anomalous_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: FeatureManifest,
    pub text: TextEmbeddingPair,
    /// Parallel to `manifest.image_records`.
    pub images: Vec<ImageFeatures>,
    /// Parallel to `manifest.image_records`; `None` means no mask on record.
    pub masks: Vec<Option<Mask>>,
}

impl Dataset {
    /// Checks every container invariant: manifest schema, tensor shapes,
    /// finiteness, text-embedding norms and mask dims.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        m.validate()?;
        let n = m.image_records.len();
        if self.images.len() != n || self.masks.len() != n {
            return Err(Error::Schema(format!(
                "{} image records but {} feature sets and {} mask slots",
                n,
                self.images.len(),
                self.masks.len()
            )));
        }
        for (rec, img) in m.image_records.iter().zip(&self.images) {
            if img.layers.len() != m.layers.len() || img.class_tokens.len() != m.layers.len() {
                return Err(Error::Format {
                    blob: rec.blob.clone(),
                    detail: format!(
                        "image `{}` has {} layers / {} class tokens, manifest lists {}",
                        rec.image_id,
                        img.layers.len(),
                        img.class_tokens.len(),
                        m.layers.len()
                    ),
                });
            }
            for ((grid, cls), &layer) in img.layers.iter().zip(&img.class_tokens).zip(&m.layers) {
                if grid.shape() != (m.rows(), m.cols(), m.channels) || cls.len() != m.channels {
                    return Err(Error::Format {
                        blob: rec.blob.clone(),
                        detail: format!(
                            "image `{}` layer {layer} has shape {:?}, expected {:?}",
                            rec.image_id,
                            grid.shape(),
                            (m.rows(), m.cols(), m.channels)
                        ),
                    });
                }
                if let Some((r, c, ch)) = grid.find_non_finite() {
                    return Err(Error::Data {
                        image_id: rec.image_id.clone(),
                        layer,
                        detail: format!("non-finite feature at row {r}, col {c}, channel {ch}"),
                    });
                }
                if cls.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data {
                        image_id: rec.image_id.clone(),
                        layer,
                        detail: "non-finite class token".into(),
                    });
                }
            }
        }
        for (rec, mask) in m.image_records.iter().zip(&self.masks) {
            match (&rec.mask, mask) {
                (Some(_), Some(mk)) => {
                    if mk.height != rec.height as usize || mk.width != rec.width as usize {
                        return Err(Error::Schema(format!(
                            "mask for `{}` is {}x{}, image is {}x{}",
                            rec.image_id, mk.height, mk.width, rec.height, rec.width
                        )));
                    }
                }
                (None, None) => {}
                _ => {
                    return Err(Error::Schema(format!(
                        "mask record and mask data disagree for `{}`",
                        rec.image_id
                    )))
                }
            }
        }
        let t = &self.text;
        for (name, v) in [("f_pos", &t.positive), ("f_neg", &t.negative)] {
            if v.len() != m.channels {
                return Err(Error::Format {
                    blob: m.text_embeddings.blob.clone(),
                    detail: format!("{name} has {} dims, expected {}", v.len(), m.channels),
                });
            }
            let n = linalg::norm(v);
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Numeric(format!(
                    "{name} must have finite nonzero norm"
                )));
            }
        }
        if t.positive_prompt != m.text_embeddings.positive_prompt
            || t.negative_prompt != m.text_embeddings.negative_prompt
        {
            return Err(Error::Schema(
                "text embedding prompts disagree with manifest".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.manifest
            .image_records
            .iter()
            .map(|r| r.image_id.as_str())
    }

    pub fn image_index(&self, image_id: &str) -> Result<usize> {
        self.manifest
            .image_records
            .iter()
            .position(|r| r.image_id == image_id)
            .ok_or_else(|| {
                let valid: Vec<&str> = self.image_ids().collect();
                Error::Lookup(format!(
                    "unknown image_id `{image_id}`; valid ids: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn layer_index(&self, layer: u32) -> Result<usize> {
        self.manifest
            .layers
            .iter()
            .position(|&l| l == layer)
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "layer {layer} not in manifest layers {:?}",
                    self.manifest.layers
                ))
            })
    }

    /// The `(image, layer)` feature grid.
    pub fn read_image_features(&self, image_id: &str, layer: u32) -> Result<&FeatureGrid> {
        let i = self.image_index(image_id)?;
        let l = self.layer_index(layer)?;
        Ok(&self.images[i].layers[l])
    }
}

/// Serializes one image's features into the blob layout.
pub fn encode_image_blob(features: &ImageFeatures) -> Vec<u8> {
    let total: usize = features
        .layers
        .iter()
        .map(|g| g.as_slice().len())
        .sum::<usize>()
        + features.class_tokens.iter().map(Vec::len).sum::<usize>();
    let mut out = Vec::with_capacity(total * 4);
    for g in &features.layers {
        for v in g.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for cls in &features.class_tokens {
        for v in cls {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

/// Parses one image blob, checking its exact byte length against the manifest.
pub fn decode_image_blob(
    bytes: &[u8],
    manifest: &FeatureManifest,
    record: &ImageRecord,
) -> Result<ImageFeatures> {
    let expected = manifest.blob_bytes();
    if bytes.len() != expected {
        let which = if bytes.len() < expected {
            "undersized"
        } else {
            "oversized"
        };
        return Err(Error::Format {
            blob: record.blob.clone(),
            detail: format!(
                "{which} blob for image `{}`: {} bytes, expected {expected}",
                record.image_id,
                bytes.len()
            ),
        });
    }
    let (rows, cols, ch) = (manifest.rows(), manifest.cols(), manifest.channels);
    let grid_bytes = rows * cols * ch * 4;
    let l = manifest.layers.len();
    let mut layers = Vec::with_capacity(l);
    for i in 0..l {
        let data = read_f32s(&bytes[i * grid_bytes..(i + 1) * grid_bytes]);
        layers.push(FeatureGrid::new(rows, cols, ch, data)?);
    }
    let cls_start = l * grid_bytes;
    let class_tokens = (0..l)
        .map(|i| read_f32s(&bytes[cls_start + i * ch * 4..cls_start + (i + 1) * ch * 4]))
        .collect();
    Ok(ImageFeatures {
        layers,
        class_tokens,
    })
}

pub fn encode_text_blob(text: &TextEmbeddingPair) -> Vec<u8> {
    text.positive
        .iter()
        .chain(&text.negative)
        .flat_map(|v| v.to_le_bytes())
        .collect()
}

pub fn decode_text_blob(bytes: &[u8], manifest: &FeatureManifest) -> Result<TextEmbeddingPair> {
    let rec = &manifest.text_embeddings;
    if bytes.len() != manifest.text_blob_bytes() {
        return Err(Error::Format {
            blob: rec.blob.clone(),
            detail: format!(
                "text blob has {} bytes, expected {}",
                bytes.len(),
                manifest.text_blob_bytes()
            ),
        });
    }
    let vals = read_f32s(bytes);
    let (pos, neg) = vals.split_at(manifest.channels);
    Ok(TextEmbeddingPair {
        positive: pos.to_vec(),
        negative: neg.to_vec(),
        positive_prompt: rec.positive_prompt.clone(),
        negative_prompt: rec.negative_prompt.clone(),
    })
}

/// Grid side for a square resize and a patch stride, e.g. 518 / 14 = 37.
pub fn grid_side(resize: u32, patch_stride: u32) -> Result<usize> {
    if patch_stride == 0 || resize == 0 || !resize.is_multiple_of(patch_stride) {
        return Err(Error::Argument(format!(
            "resize {resize} is not a positive multiple of stride {patch_stride}"
        )));
    }
    Ok((resize / patch_stride) as usize)
}

impl core::fmt::Display for ImageRecord {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&self.image_id)
    }
}
