//! Raster containers shared by every pipeline stage.
//!
//! All images are row-major. A pixel `(x, y)` covers the unit square
//! `[x, x+1) × [y, y+1)`, so its center sits at `(x + 0.5, y + 0.5)`.

use crate::error::{Error, Result};

/// 16-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage16 {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
}

impl GrayImage16 {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        self.pixels[y * self.width + x] = value;
    }

    #[inline]
    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [u16] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    pub fn min_max(&self) -> (u16, u16) {
        let mut lo = u16::MAX;
        let mut hi = 0;
        for &v in &self.pixels {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub(crate) fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

/// Boolean raster with the same geometry conventions as [`GrayImage16`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask buffer has {} values, expected {}",
                bits.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_all_false(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> Result<usize> {
        self.ensure_same_dims(other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// Pixels set in `self` but not in `other`.
    pub fn difference_count(&self, other: &BinaryMask) -> Result<usize> {
        self.ensure_same_dims(other.dims())?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && !b)
            .count())
    }

    pub fn to_region(&self) -> Region {
        let indices = self
            .bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect();
        Region {
            width: self.width,
            height: self.height,
            indices,
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

/// Dice overlap `2|a∩b| / (|a|+|b|)`; two empty masks score 0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let inter = a.intersection_count(b)?;
    let total = a.count() + b.count();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Sparse pixel set: sorted linear indices into a `width × height` raster.
///
/// Candidates carry one of these instead of a full [`BinaryMask`]; a case
/// produces hundreds of superpixels and most of them are small.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    width: usize,
    height: usize,
    indices: Vec<u32>,
}

impl Region {
    /// Builds a region from arbitrary indices (sorted and deduplicated here).
    pub fn new(width: usize, height: usize, mut indices: Vec<u32>) -> Result<Self> {
        let n = width * height;
        indices.sort_unstable();
        indices.dedup();
        if let Some(&last) = indices.last() {
            if last as usize >= n {
                return Err(Error::invalid(format!(
                    "region index {last} outside {width}x{height} raster"
                )));
            }
        }
        Ok(Self {
            width,
            height,
            indices,
        })
    }

    pub fn from_coords(
        width: usize,
        height: usize,
        coords: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut indices = Vec::new();
        for (x, y) in coords {
            if x >= width || y >= height {
                return Err(Error::invalid(format!(
                    "pixel ({x}, {y}) outside {width}x{height} raster"
                )));
            }
            indices.push((y * width + x) as u32);
        }
        Self::new(width, height, indices)
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.indices
            .iter()
            .map(move |&i| (i as usize % w, i as usize / w))
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        self.indices
            .binary_search(&((y * self.width + x) as u32))
            .is_ok()
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut bits = vec![false; self.width * self.height];
        for &i in &self.indices {
            bits[i as usize] = true;
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    /// Mean pixel center `(x + 0.5, y + 0.5)`.
    pub fn centroid(&self) -> (f64, f64) {
        if self.indices.is_empty() {
            return (0.0, 0.0);
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (x, y) in self.coords() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
        }
        let n = self.indices.len() as f64;
        (sx / n, sy / n)
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut it = self.coords();
        let (fx, fy) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (fx, fy, fx, fy);
        for (x, y) in it {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some((x0, y0, x1, y1))
    }

    pub fn count_in_mask(&self, mask: &BinaryMask) -> Result<usize> {
        mask.ensure_same_dims(self.dims())?;
        Ok(self
            .indices
            .iter()
            .filter(|&&i| mask.bits[i as usize])
            .count())
    }

    pub fn intersection_count(&self, other: &Region) -> Result<usize> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        let (a, b) = (&self.indices, &other.indices);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(n)
    }

    pub fn dice_with_mask(&self, mask: &BinaryMask) -> Result<f64> {
        let inter = self.count_in_mask(mask)?;
        let total = self.area() + mask.count();
        if total == 0 {
            return Ok(0.0);
        }
        Ok(2.0 * inter as f64 / total as f64)
    }

    pub fn dice(&self, other: &Region) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let total = self.area() + other.area();
        if total == 0 {
            return Ok(0.0);
        }
        Ok(2.0 * inter as f64 / total as f64)
    }

    pub fn iou(&self, other: &Region) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let union = self.area() + other.area() - inter;
        if union == 0 {
            return Ok(0.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Mean of `image` over the region's pixels (0 for an empty region).
    pub fn mean_of(&self, image: &GrayImage16) -> Result<f64> {
        image.ensure_same_dims(self.dims())?;
        if self.indices.is_empty() {
            return Ok(0.0);
        }
        let px = image.pixels();
        let sum: u64 = self.indices.iter().map(|&i| px[i as usize] as u64).sum();
        Ok(sum as f64 / self.indices.len() as f64)
    }

    /// Run-length encoding over the linear index: `[start, len, start, len, …]`.
    pub fn to_runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut iter = self.indices.iter().copied();
        let Some(first) = iter.next() else {
            return runs;
        };
        let (mut start, mut len) = (first, 1u32);
        for i in iter {
            if i == start + len {
                len += 1;
            } else {
                runs.push(start);
                runs.push(len);
                start = i;
                len = 1;
            }
        }
        runs.push(start);
        runs.push(len);
        runs
    }

    pub fn from_runs(width: usize, height: usize, runs: &[u32]) -> Result<Self> {
        if runs.len() % 2 != 0 {
            return Err(Error::invalid("run-length list must have even length"));
        }
        let mut indices = Vec::new();
        for pair in runs.chunks_exact(2) {
            indices.extend(pair[0]..pair[0] + pair[1]);
        }
        Self::new(width, height, indices)
    }
}
