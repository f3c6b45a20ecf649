//! Multi-scale morphological sifting.
//!
//! Each scale band `(d_min, d_max)` keeps bright structures whose diameter
//! lies between the two lengths: the supremum over orientations of the
//! grayscale opening by a rotated line of length `d_min`, minus the same
//! supremum at length `d_max`. This is the dual top-hat at the two lengths
//! (the original image cancels in the difference).
//!
//! Structuring elements are clipped to the image domain; no padding value is
//! invented at the border.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::GrayImage16;

/// A centered digital line segment.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSe {
    pub length: usize,
    pub angle: f64,
    pub offsets: Vec<(isize, isize)>,
}

/// `round(num / den)` with ties away from zero, `den > 0`.
fn div_round(num: i64, den: i64) -> i64 {
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}

/// Digital line of `length` pixels through the origin at `angle` (radians,
/// image y axis pointing down).
///
/// The dominant axis steps by one pixel; the minor coordinate follows the
/// Bresenham line between the two endpoints `±(h, m)`, with
/// `h = (length - 1) / 2` and `m = round(h · slope)`.
pub fn make_line_se(length: usize, angle: f64) -> Result<LineSe> {
    if length < 3 || length % 2 == 0 {
        return Err(Error::invalid(format!(
            "line length must be odd and >= 3, got {length}"
        )));
    }
    let half = ((length - 1) / 2) as i64;
    let (s, c) = angle.sin_cos();
    let x_major = c.abs() >= s.abs();
    let slope = if x_major { s / c } else { c / s };
    let m = (half as f64 * slope).round() as i64;
    let offsets = (-half..=half)
        .map(|k| {
            let minor = div_round(k * m, half);
            if x_major {
                (k as isize, minor as isize)
            } else {
                (minor as isize, k as isize)
            }
        })
        .collect();
    Ok(LineSe {
        length,
        angle,
        offsets,
    })
}

#[derive(Clone, Copy)]
enum Extremum {
    Min,
    Max,
}

/// Flat erosion/dilation by a symmetric SE clipped to the image domain.
///
/// Sweeps every offset over the whole image at once, so each pass is a
/// contiguous slice-wise min/max.
fn rank_filter(src: &[u16], w: usize, h: usize, offsets: &[(isize, isize)], op: Extremum) -> Vec<u16> {
    let mut out = src.to_vec();
    let (wi, hi) = (w as isize, h as isize);
    for &(dx, dy) in offsets {
        if dx == 0 && dy == 0 {
            continue;
        }
        let (x_lo, x_hi) = ((-dx).max(0), (wi - dx).min(wi));
        let (y_lo, y_hi) = ((-dy).max(0), (hi - dy).min(hi));
        if x_lo >= x_hi || y_lo >= y_hi {
            continue;
        }
        for y in y_lo..y_hi {
            let o = (y * wi + x_lo) as usize;
            let s = ((y + dy) * wi + x_lo + dx) as usize;
            let n = (x_hi - x_lo) as usize;
            let (orow, srow) = (&mut out[o..o + n], &src[s..s + n]);
            match op {
                Extremum::Min => orow.iter_mut().zip(srow).for_each(|(a, &b)| *a = (*a).min(b)),
                Extremum::Max => orow.iter_mut().zip(srow).for_each(|(a, &b)| *a = (*a).max(b)),
            }
        }
    }
    out
}

pub fn erode(image: &GrayImage16, se: &LineSe) -> GrayImage16 {
    let px = rank_filter(image.pixels(), image.width(), image.height(), &se.offsets, Extremum::Min);
    GrayImage16::new(image.width(), image.height(), px).expect("same dims")
}

pub fn dilate(image: &GrayImage16, se: &LineSe) -> GrayImage16 {
    let px = rank_filter(image.pixels(), image.width(), image.height(), &se.offsets, Extremum::Max);
    GrayImage16::new(image.width(), image.height(), px).expect("same dims")
}

/// Erosion followed by dilation.
pub fn opening(image: &GrayImage16, se: &LineSe) -> GrayImage16 {
    let (w, h) = image.dims();
    let eroded = rank_filter(image.pixels(), w, h, &se.offsets, Extremum::Min);
    let px = rank_filter(&eroded, w, h, &se.offsets, Extremum::Max);
    GrayImage16::new(w, h, px).expect("same dims")
}

/// The `n` angles `kπ/n`, `k = 0..n`.
pub fn orientations(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * std::f64::consts::PI / n as f64).collect()
}

/// Pixelwise maximum over `n` orientations of the opening by a line of
/// `length` pixels.
pub fn sup_opening(image: &GrayImage16, length: usize, n_orientations: usize) -> Result<GrayImage16> {
    if n_orientations < 1 {
        return Err(Error::invalid("n_orientations must be >= 1"));
    }
    let mut shapes: Vec<Vec<(isize, isize)>> = Vec::with_capacity(n_orientations);
    for angle in orientations(n_orientations) {
        let se = make_line_se(length, angle)?;
        // short lines collapse onto few distinct shapes
        if !shapes.contains(&se.offsets) {
            shapes.push(se.offsets);
        }
    }
    let (w, h) = image.dims();
    let openings: Vec<Vec<u16>> = shapes
        .par_iter()
        .map(|offs| {
            let e = rank_filter(image.pixels(), w, h, offs, Extremum::Min);
            rank_filter(&e, w, h, offs, Extremum::Max)
        })
        .collect();
    let mut acc = vec![0u16; w * h];
    for o in &openings {
        acc.iter_mut().zip(o).for_each(|(a, &b)| *a = (*a).max(b));
    }
    GrayImage16::new(w, h, acc)
}

/// Rounds up to the next odd integer.
pub fn odd_at_least(d: usize) -> usize {
    if d % 2 == 1 {
        d
    } else {
        d + 1
    }
}

/// One diameter band, in working-resolution pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleBand {
    /// 1-based, smallest band first.
    pub index: usize,
    pub d_min: usize,
    pub d_max: usize,
}

impl ScaleBand {
    pub fn new(index: usize, d_min: usize, d_max: usize) -> Result<Self> {
        if !(3 <= d_min && d_min < d_max) {
            return Err(Error::invalid(format!(
                "scale band needs 3 <= d_min < d_max, got ({d_min}, {d_max})"
            )));
        }
        Ok(Self { index, d_min, d_max })
    }

    pub fn lengths(&self) -> (usize, usize) {
        (odd_at_least(self.d_min), odd_at_least(self.d_max))
    }

    /// Geometric mean of the two diameters.
    pub fn mid_diameter(&self) -> f64 {
        ((self.d_min * self.d_max) as f64).sqrt()
    }
}

/// Mass diameters of 43–429 px at full resolution, i.e. 11–108 px after ×4
/// downsampling, split geometrically into four contiguous bands.
pub const DEFAULT_BAND_CUTS: [usize; 5] = [11, 19, 35, 62, 108];

pub fn bands_from_cuts(cuts: &[usize]) -> Result<Vec<ScaleBand>> {
    if cuts.len() < 2 {
        return Err(Error::invalid("need at least two band cut points"));
    }
    cuts.windows(2)
        .enumerate()
        .map(|(i, c)| ScaleBand::new(i + 1, c[0], c[1]))
        .collect()
}

pub fn default_bands() -> Vec<ScaleBand> {
    bands_from_cuts(&DEFAULT_BAND_CUTS).expect("default cuts are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiftConfig {
    /// Contiguous band boundaries in working pixels; `n + 1` cuts for `n` bands.
    pub band_cuts: Vec<usize>,
    pub n_orientations: usize,
}

impl Default for SiftConfig {
    fn default() -> Self {
        Self {
            band_cuts: DEFAULT_BAND_CUTS.to_vec(),
            n_orientations: 18,
        }
    }
}

impl SiftConfig {
    pub fn bands(&self) -> Result<Vec<ScaleBand>> {
        bands_from_cuts(&self.band_cuts)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_orientations < 1 {
            return Err(Error::Config("n_orientations must be >= 1".into()));
        }
        self.bands().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

fn difference(a: &GrayImage16, b: &GrayImage16) -> GrayImage16 {
    let px = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| x.saturating_sub(y))
        .collect();
    GrayImage16::new(a.width(), a.height(), px).expect("same dims")
}

/// Sifted image for one band, clamped at zero.
pub fn sift_scale(image: &GrayImage16, band: &ScaleBand, n_orientations: usize) -> Result<GrayImage16> {
    let (short, long) = band.lengths();
    let a = sup_opening(image, short, n_orientations)?;
    let b = sup_opening(image, long, n_orientations)?;
    Ok(difference(&a, &b))
}

/// One sifted image per band, smallest band first.
#[derive(Clone, Debug, PartialEq)]
pub struct SiftedStack {
    pub bands: Vec<ScaleBand>,
    pub images: Vec<GrayImage16>,
}

impl SiftedStack {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

pub fn sift_multiscale(image: &GrayImage16, bands: &[ScaleBand], n_orientations: usize) -> Result<SiftedStack> {
    if bands.is_empty() {
        return Err(Error::invalid("at least one scale band is required"));
    }
    for pair in bands.windows(2) {
        if pair[0].d_max != pair[1].d_min {
            return Err(Error::invalid(format!(
                "bands must be contiguous: ({}, {}) then ({}, {})",
                pair[0].d_min, pair[0].d_max, pair[1].d_min, pair[1].d_max
            )));
        }
    }
    // adjacent bands share a length; compute each opening once
    let mut openings: BTreeMap<usize, GrayImage16> = BTreeMap::new();
    for band in bands {
        let (a, b) = band.lengths();
        for len in [a, b] {
            if !openings.contains_key(&len) {
                openings.insert(len, sup_opening(image, len, n_orientations)?);
            }
        }
    }
    let images = bands
        .iter()
        .map(|band| {
            let (a, b) = band.lengths();
            difference(&openings[&a], &openings[&b])
        })
        .collect();
    Ok(SiftedStack {
        bands: bands.to_vec(),
        images,
    })
}
