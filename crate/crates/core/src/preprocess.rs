//! Front end of the pipeline: breast extraction and linear rescale,
//! block-mean downsampling, then contrast-limited adaptive histogram
//! equalization (CLAHE) restricted to the breast.
//!
//! The clip limit is a multiplier of the uniform bin height
//! (`in-mask tile pixels / bins`). At the default of 1.00 every tile
//! histogram is flattened almost completely, so the per-tile mappings stay
//! close to the identity and CLAHE acts as a gentle local normalization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, GrayImage16, MammogramCase, MassAnnotation};

const FULL_SCALE: u64 = 65535;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub downsample_factor: usize,
    pub clahe_clip_limit: f64,
    /// `(rows, cols)`.
    pub clahe_tiles: (usize, usize),
    pub clahe_bins: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            downsample_factor: 4,
            clahe_clip_limit: 1.0,
            clahe_tiles: (4, 4),
            clahe_bins: 1024,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_factor < 1 {
            return Err(Error::Config("downsample_factor must be >= 1".into()));
        }
        if !(self.clahe_clip_limit > 0.0) {
            return Err(Error::Config("clahe_clip_limit must be positive".into()));
        }
        if self.clahe_tiles.0 < 1 || self.clahe_tiles.1 < 1 {
            return Err(Error::Config("clahe_tiles must be at least (1, 1)".into()));
        }
        if !(2..=65536).contains(&self.clahe_bins) {
            return Err(Error::Config("clahe_bins must lie in 2..=65536".into()));
        }
        Ok(())
    }
}

/// Zeroes everything outside `mask` and stretches the in-mask range linearly
/// onto `0..=65535`. A constant in-mask region maps to 0.
pub fn rescale_contrast(image: &GrayImage16, mask: &BinaryMask) -> Result<GrayImage16> {
    image.ensure_same_dims(mask.dims())?;
    let (mut lo, mut hi) = (u16::MAX, 0u16);
    let mut any = false;
    for (&v, &m) in image.pixels().iter().zip(mask.bits()) {
        if m {
            lo = lo.min(v);
            hi = hi.max(v);
            any = true;
        }
    }
    if !any {
        return Err(Error::invalid("breast mask is empty"));
    }
    let range = (hi - lo) as u64;
    let pixels = image
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| {
            if !m || range == 0 {
                0
            } else {
                // round half up of (v - lo) * 65535 / range
                (((v - lo) as u64 * FULL_SCALE * 2 + range) / (2 * range)) as u16
            }
        })
        .collect();
    GrayImage16::new(image.width(), image.height(), pixels)
}

/// Block-mean downsampling; partial edge blocks average the pixels they have.
pub fn downsample(image: &GrayImage16, factor: usize) -> Result<GrayImage16> {
    if factor < 1 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    let (w, h) = image.dims();
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    GrayImage16::from_fn(ow, oh, |ox, oy| {
        let (mut sum, mut n) = (0u64, 0u64);
        for y in oy * factor..((oy + 1) * factor).min(h) {
            for x in ox * factor..((ox + 1) * factor).min(w) {
                sum += image.get(x, y) as u64;
                n += 1;
            }
        }
        ((2 * sum + n) / (2 * n)) as u16
    })
}

/// Majority-vote downsampling of a mask (ties count as inside).
pub fn downsample_mask(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor < 1 {
        return Err(Error::invalid("downsample factor must be >= 1"));
    }
    let (w, h) = mask.dims();
    let (ow, oh) = (w.div_ceil(factor), h.div_ceil(factor));
    BinaryMask::from_fn(ow, oh, |ox, oy| {
        let (mut on, mut n) = (0usize, 0usize);
        for y in oy * factor..((oy + 1) * factor).min(h) {
            for x in ox * factor..((ox + 1) * factor).min(w) {
                on += mask.get(x, y) as usize;
                n += 1;
            }
        }
        2 * on >= n
    })
}

/// Tile index of a pixel along one axis: the tile containing its center.
fn tile_of(p: usize, len: usize, tiles: usize) -> usize {
    ((2 * p + 1) * tiles / (2 * len)).min(tiles - 1)
}

/// Interpolation neighbours and weight of the second along one axis.
fn interp_axis(p: usize, len: usize, tiles: usize) -> (usize, usize, f64) {
    let u = (p as f64 + 0.5) * tiles as f64 / len as f64 - 0.5;
    if u <= 0.0 {
        (0, 0, 0.0)
    } else if u >= (tiles - 1) as f64 {
        (tiles - 1, tiles - 1, 0.0)
    } else {
        let t0 = u.floor() as usize;
        (t0, t0 + 1, u - t0 as f64)
    }
}

/// Per-tile clipped-CDF mappings, indexed `[tile][bin]`, scaled to 0..=65535.
pub fn clahe_tile_mappings(image: &GrayImage16, mask: &BinaryMask, cfg: &PreprocessConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    image.ensure_same_dims(mask.dims())?;
    let (w, h) = image.dims();
    let (rows, cols) = cfg.clahe_tiles;
    let bins = cfg.clahe_bins;
    let mut hist = vec![vec![0u64; bins]; rows * cols];
    for y in 0..h {
        let ty = tile_of(y, h, rows);
        for x in 0..w {
            if mask.get(x, y) {
                let t = ty * cols + tile_of(x, w, cols);
                hist[t][image.get(x, y) as usize * bins / 65536] += 1;
            }
        }
    }

    let mut maps: Vec<Option<Vec<f64>>> = hist
        .iter()
        .map(|counts| {
            let n: u64 = counts.iter().sum();
            if n == 0 {
                return None;
            }
            let limit = cfg.clahe_clip_limit * n as f64 / bins as f64;
            let mut clipped: Vec<f64> = counts.iter().map(|&c| (c as f64).min(limit)).collect();
            let excess: f64 = counts.iter().map(|&c| (c as f64 - limit).max(0.0)).sum();
            let share = excess / bins as f64;
            let mut acc = 0.0;
            for c in clipped.iter_mut() {
                acc += *c + share;
                *c = (acc / n as f64 * FULL_SCALE as f64).min(FULL_SCALE as f64);
            }
            Some(clipped)
        })
        .collect();

    // empty tiles borrow the mapping of the nearest populated tile
    let populated: Vec<usize> = (0..rows * cols).filter(|&t| maps[t].is_some()).collect();
    if populated.is_empty() {
        return Ok(vec![vec![0.0; bins]; rows * cols]);
    }
    let center = |t: usize| {
        let (r, c) = (t / cols, t % cols);
        ((c as f64 + 0.5) * w as f64 / cols as f64, (r as f64 + 0.5) * h as f64 / rows as f64)
    };
    for t in 0..rows * cols {
        if maps[t].is_none() {
            let (cx, cy) = center(t);
            let nearest = populated
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let da = (center(a).0 - cx).powi(2) + (center(a).1 - cy).powi(2);
                    let db = (center(b).0 - cx).powi(2) + (center(b).1 - cy).powi(2);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .expect("populated is non-empty");
            maps[t] = maps[nearest].clone();
        }
    }
    Ok(maps.into_iter().map(|m| m.expect("filled above")).collect())
}

/// CLAHE over the in-mask pixels; pixels outside the mask come out as 0.
pub fn clahe(image: &GrayImage16, mask: &BinaryMask, cfg: &PreprocessConfig) -> Result<GrayImage16> {
    let maps = clahe_tile_mappings(image, mask, cfg)?;
    let (w, h) = image.dims();
    let (rows, cols) = cfg.clahe_tiles;
    let bins = cfg.clahe_bins;
    let col_interp: Vec<_> = (0..w).map(|x| interp_axis(x, w, cols)).collect();

    let mut out = vec![0u16; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let (r0, r1, fy) = interp_axis(y, h, rows);
        for (x, o) in row.iter_mut().enumerate() {
            if !mask.get(x, y) {
                continue;
            }
            let b = image.get(x, y) as usize * bins / 65536;
            let (c0, c1, fx) = col_interp[x];
            let top = (1.0 - fx) * maps[r0 * cols + c0][b] + fx * maps[r0 * cols + c1][b];
            let bottom = (1.0 - fx) * maps[r1 * cols + c0][b] + fx * maps[r1 * cols + c1][b];
            let v = (1.0 - fy) * top + fy * bottom;
            *o = v.round().clamp(0.0, FULL_SCALE as f64) as u16;
        }
    });
    GrayImage16::new(w, h, out)
}

/// A case after the front end, at working resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessedCase {
    pub case_id: String,
    pub image: GrayImage16,
    pub breast_mask: BinaryMask,
    pub masses: Vec<MassAnnotation>,
    pub downsample_factor: usize,
}

/// rescale → downsample → CLAHE, with the mask and ground truth brought to
/// the working resolution alongside.
pub fn preprocess_case(case: &MammogramCase, cfg: &PreprocessConfig) -> Result<PreprocessedCase> {
    cfg.validate()?;
    let f = cfg.downsample_factor;
    let rescaled = rescale_contrast(&case.image, &case.breast_mask)?;
    let small = downsample(&rescaled, f)?;
    let mask = downsample_mask(&case.breast_mask, f)?;
    let image = clahe(&small, &mask, cfg)?;
    let (w, h) = image.dims();
    let masses = case
        .masses
        .iter()
        .map(|m| m.downscaled(f, w, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreprocessedCase {
        case_id: case.case_id.clone(),
        image,
        breast_mask: mask,
        masses,
        downsample_factor: f,
    })
}
