use crate::error::{Error, Result};

use super::raster::{BinaryMask, GrayImage16};

/// Fills a polygon with the even-odd rule, sampling at pixel centers.
///
/// Vertices are continuous image coordinates (pixel `(x, y)` spans
/// `[x, x+1) × [y, y+1)`). A pixel is set when its center lies inside;
/// centers exactly on an edge follow the half-open crossing rule.
pub fn rasterize_polygon(polygon: &[[f64; 2]], width: usize, height: usize) -> Result<BinaryMask> {
    let mut mask = BinaryMask::empty(width, height)?;
    if polygon.len() < 3 {
        return Ok(mask);
    }
    let mut crossings: Vec<f64> = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        crossings.clear();
        for i in 0..polygon.len() {
            let [x0, y0] = polygon[i];
            let [x1, y1] = polygon[(i + 1) % polygon.len()];
            if (y0 <= cy) != (y1 <= cy) {
                let t = (cy - y0) / (y1 - y0);
                crossings.push(x0 + t * (x1 - x0));
            }
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        for span in crossings.chunks_exact(2) {
            // centers cx = x + 0.5 with span[0] <= cx < span[1]
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(width as f64);
            if end <= start {
                continue;
            }
            for x in start as usize..end as usize {
                mask.set(x, y, true);
            }
        }
    }
    Ok(mask)
}

/// One annotated mass: its outline and the rasterized interior.
#[derive(Clone, Debug, PartialEq)]
pub struct MassAnnotation {
    pub id: String,
    pub polygon: Vec<[f64; 2]>,
    mask: BinaryMask,
}

impl MassAnnotation {
    pub fn new(id: impl Into<String>, polygon: Vec<[f64; 2]>, width: usize, height: usize) -> Result<Self> {
        let id = id.into();
        if polygon.len() < 3 {
            return Err(Error::invalid(format!(
                "mass `{id}` polygon needs at least 3 vertices, got {}",
                polygon.len()
            )));
        }
        if polygon.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("mass `{id}` has non-finite vertices")));
        }
        let mask = rasterize_polygon(&polygon, width, height)?;
        if mask.is_all_false() {
            return Err(Error::invalid(format!("mass `{id}` rasterizes to an empty mask")));
        }
        Ok(Self { id, polygon, mask })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    /// The same outline at `1/factor` resolution, rasterized on a
    /// `width × height` grid.
    pub fn downscaled(&self, factor: usize, width: usize, height: usize) -> Result<Self> {
        let f = factor as f64;
        let polygon = self.polygon.iter().map(|&[x, y]| [x / f, y / f]).collect();
        Self::new(self.id.clone(), polygon, width, height)
    }
}

/// One mammogram with its breast mask and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MammogramCase {
    pub case_id: String,
    pub image: GrayImage16,
    pub breast_mask: BinaryMask,
    pub pixel_spacing_um: f64,
    pub masses: Vec<MassAnnotation>,
}

impl MammogramCase {
    pub fn new(
        case_id: impl Into<String>,
        image: GrayImage16,
        breast_mask: BinaryMask,
        pixel_spacing_um: f64,
        masses: Vec<MassAnnotation>,
    ) -> Result<Self> {
        image.ensure_same_dims(breast_mask.dims())?;
        for m in &masses {
            image.ensure_same_dims(m.mask().dims())?;
        }
        if !(pixel_spacing_um > 0.0 && pixel_spacing_um.is_finite()) {
            return Err(Error::invalid(format!(
                "pixel spacing must be positive, got {pixel_spacing_um}"
            )));
        }
        Ok(Self {
            case_id: case_id.into(),
            image,
            breast_mask,
            pixel_spacing_um,
            masses,
        })
    }
}

/// Converts a physical diameter to pixels at the given spacing and
/// downsampling, rounded to the nearest pixel.
pub fn mm_to_pixels(diameter_mm: f64, spacing_um: f64, downsample: f64) -> Result<usize> {
    if !(diameter_mm > 0.0 && spacing_um > 0.0 && downsample > 0.0) {
        return Err(Error::invalid(format!(
            "mm_to_pixels needs positive arguments, got ({diameter_mm}, {spacing_um}, {downsample})"
        )));
    }
    Ok((diameter_mm * 1000.0 / (spacing_um * downsample)).round() as usize)
}
