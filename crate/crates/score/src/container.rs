//! Feature containers on disk: `manifest.json`, one raw blob per image, a
//! text-embedding blob and optional 8-bit PNG masks, all at paths relative
//! to the container directory.

use std::fs;
use std::io::BufWriter;
use std::path::{Component, Path, PathBuf};

use pa_core::dataset::{
    decode_image_blob, decode_text_blob, encode_image_blob, encode_text_blob, FeatureManifest,
};
use pa_core::{Dataset, Error as CoreError, Mask};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Resolves a manifest-relative path, refusing anything that escapes the
/// container directory.
fn resolve(root: &Path, rel: &str) -> pa_core::Result<PathBuf> {
    let p = Path::new(rel);
    let ok = !rel.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)));
    if !ok {
        return Err(CoreError::Schema(format!(
            "path `{rel}` must be relative and stay inside the container"
        )));
    }
    Ok(root.join(p))
}

fn read_blob(root: &Path, rel: &str) -> pa_core::Result<Vec<u8>> {
    let path = resolve(root, rel)?;
    fs::read(&path).map_err(|e| CoreError::Format {
        blob: rel.into(),
        detail: format!("cannot read {}: {e}", path.display()),
    })
}

pub fn read_manifest(root: &Path) -> pa_core::Result<FeatureManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CoreError::Schema(format!("cannot read {}: {e}", path.display())))?;
    let manifest: FeatureManifest = serde_json::from_str(&text)
        .map_err(|e| CoreError::Schema(format!("{MANIFEST_FILE}: {e}")))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Loads and fully validates a container.
pub fn load_container(root: &Path) -> pa_core::Result<Dataset> {
    let manifest = read_manifest(root)?;
    let text = decode_text_blob(&read_blob(root, &manifest.text_embeddings.blob)?, &manifest)?;
    let mut images = Vec::with_capacity(manifest.image_records.len());
    let mut masks = Vec::with_capacity(manifest.image_records.len());
    for rec in &manifest.image_records {
        images.push(decode_image_blob(
            &read_blob(root, &rec.blob)?,
            &manifest,
            rec,
        )?);
        masks.push(match &rec.mask {
            Some(rel) => Some(read_mask(&resolve(root, rel)?, rel)?),
            None => None,
        });
    }
    let ds = Dataset {
        manifest,
        text,
        images,
        masks,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a container into `root`, which is created if missing. Invalid
/// datasets are refused before anything is written.
pub fn write_container(ds: &Dataset, root: &Path) -> Result<()> {
    ds.validate().map_err(Error::stage("write container"))?;
    let m = &ds.manifest;
    let mut files = vec![(m.text_embeddings.blob.as_str(), encode_text_blob(&ds.text))];
    for (rec, img) in m.image_records.iter().zip(&ds.images) {
        files.push((rec.blob.as_str(), encode_image_blob(img)));
    }
    let mut paths = Vec::new();
    for (rel, _) in &files {
        paths.push(resolve(root, rel).map_err(Error::stage("write container"))?);
    }
    for (rec, mask) in m.image_records.iter().zip(&ds.masks) {
        if let (Some(rel), Some(_)) = (&rec.mask, mask) {
            resolve(root, rel).map_err(Error::stage("write container"))?;
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (path, (_, bytes)) in paths.iter().zip(&files) {
        write_file(path, bytes)?;
    }
    for (rec, mask) in m.image_records.iter().zip(&ds.masks) {
        if let (Some(rel), Some(mask)) = (&rec.mask, mask) {
            let path = root.join(rel);
            ensure_parent(&path)?;
            write_mask(&path, mask)?;
        }
    }
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    write_file(&root.join(MANIFEST_FILE), json.as_bytes())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit single-channel PNG mask; nonzero means anomalous.
pub fn read_mask(path: &Path, rel: &str) -> pa_core::Result<Mask> {
    let fmt = |detail: String| CoreError::Format {
        blob: rel.into(),
        detail,
    };
    let file =
        fs::File::open(path).map_err(|e| fmt(format!("cannot read {}: {e}", path.display())))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| fmt(format!("bad PNG: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(fmt(format!(
            "mask must be 8-bit grayscale, got {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut data = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| fmt("mask too large".into()))?
    ];
    let frame = reader
        .next_frame(&mut data)
        .map_err(|e| fmt(format!("bad PNG: {e}")))?;
    data.truncate(frame.buffer_size());
    if data.len() != width * height {
        return Err(fmt(format!(
            "mask holds {} bytes for {width}x{height}",
            data.len()
        )));
    }
    Ok(Mask {
        height,
        width,
        data,
    })
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_png(
        path,
        mask.width,
        mask.height,
        png::BitDepth::Eight,
        &mask.data,
    )
}

/// Writes a grayscale PNG; `data` holds big-endian samples for 16-bit depth.
pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut w = enc.write_header().map_err(to_io)?;
    w.write_image_data(data).map_err(to_io)?;
    w.finish().map_err(to_io)
}
