//! On-disk case layout.
//!
//! ```text
//! <dir>/<case_id>/image.png        16-bit grayscale
//! <dir>/<case_id>/breast_mask.png  8-bit, nonzero = breast
//! <dir>/<case_id>/masses.json      [{"id": .., "polygon": [[x, y], ..]}, ..]
//! <dir>/<case_id>/meta.json        {"pixel_spacing_um": .., ..}
//! ```
//!
//! Polygon vertices are continuous pixel coordinates: pixel `(x, y)` covers
//! `[x, x+1) × [y, y+1)`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::annotation::{MammogramCase, MassAnnotation};
use super::raster::{BinaryMask, GrayImage16};

pub const IMAGE_FILE: &str = "image.png";
pub const MASK_FILE: &str = "breast_mask.png";
pub const MASSES_FILE: &str = "masses.json";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MassRecord {
    pub id: String,
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CaseMeta {
    pub case_id: String,
    pub pixel_spacing_um: f64,
    pub width: usize,
    pub height: usize,
}

/// Dataset manifest: the ordered list of case ids.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub cases: Vec<String>,
}

pub fn case_dir(dir: &Path, case_id: &str) -> PathBuf {
    dir.join(case_id)
}

pub fn save_case(case: &MammogramCase, dir: &Path) -> Result<()> {
    let cdir = case_dir(dir, &case.case_id);
    fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
    write_png16(&cdir.join(IMAGE_FILE), &case.image)?;
    write_mask_png(&cdir.join(MASK_FILE), &case.breast_mask)?;
    let masses: Vec<MassRecord> = case
        .masses
        .iter()
        .map(|m| MassRecord {
            id: m.id.clone(),
            polygon: m.polygon.clone(),
        })
        .collect();
    write_json(&cdir.join(MASSES_FILE), &masses)?;
    let meta = CaseMeta {
        case_id: case.case_id.clone(),
        pixel_spacing_um: case.pixel_spacing_um,
        width: case.image.width(),
        height: case.image.height(),
    };
    write_json(&cdir.join(META_FILE), &meta)
}

pub fn load_case(dir: &Path, case_id: &str) -> Result<MammogramCase> {
    let cdir = case_dir(dir, case_id);
    let image_path = cdir.join(IMAGE_FILE);
    let mask_path = cdir.join(MASK_FILE);
    let image = read_png16(&image_path)?;
    let mask = read_mask_png(&mask_path)?;
    if mask.dims() != image.dims() {
        return Err(Error::data(
            &mask_path,
            format!(
                "mask is {}x{} but image is {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            ),
        ));
    }
    let meta_path = cdir.join(META_FILE);
    let meta: serde_json::Value = read_json(&meta_path)?;
    let spacing = meta
        .get("pixel_spacing_um")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::data(&meta_path, "missing numeric `pixel_spacing_um`"))?;
    let masses_path = cdir.join(MASSES_FILE);
    let records: Vec<MassRecord> = read_json(&masses_path)?;
    let masses = records
        .into_iter()
        .map(|r| {
            MassAnnotation::new(r.id, r.polygon, image.width(), image.height())
                .map_err(|e| Error::data(&masses_path, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    MammogramCase::new(case_id, image, mask, spacing, masses)
        .map_err(|e| Error::data(&meta_path, e.to_string()))
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join(MANIFEST_FILE), manifest)
}

/// Reads `manifest.json`, or lists case subdirectories in sorted order when
/// there is no manifest.
pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if path.exists() {
        return read_json(&path);
    }
    let mut cases = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().join(META_FILE).exists() {
            cases.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    cases.sort();
    Ok(Manifest { cases })
}

pub fn write_png16(path: &Path, image: &GrayImage16) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(image.width() as u32, image.height() as u32, image.pixels().to_vec())
            .expect("buffer size matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, e.to_string()))
}

pub fn read_png16(path: &Path) -> Result<GrayImage16> {
    let img = open_image(path)?;
    match img {
        image::DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            GrayImage16::new(w as usize, h as usize, buf.into_raw())
                .map_err(|e| Error::data(path, e.to_string()))
        }
        other => Err(Error::data(
            path,
            format!("expected 16-bit grayscale PNG, found {:?}", other.color()),
        )),
    }
}

pub fn write_png8(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, pixels).expect("buffer size matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, e.to_string()))
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, pixels).expect("buffer size matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, e.to_string()))
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let px = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_png8(path, mask.width(), mask.height(), px)
}

pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let img = open_image(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let bits = img.into_raw().into_iter().map(|v| v != 0).collect();
    BinaryMask::new(w as usize, h as usize, bits).map_err(|e| Error::data(path, e.to_string()))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    image::open(path).map_err(|e| Error::data(path, e.to_string()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::data(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}
