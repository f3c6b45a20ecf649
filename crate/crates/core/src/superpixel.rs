//! Candidate generation: SLIC superpixels on every sifted image, Dice-based
//! ground-truth labelling, and the breast/intensity redundancy filter.
//!
//! SLIC works on a single intensity channel expressed in percent of full
//! scale (`v · 100 / 65535`), so a compactness of 10 weighs one grid step
//! like a 10 % intensity difference. With adaptive compactness the
//! per-scale factor is additionally multiplied by the sifted image's dynamic
//! range over 65535, which keeps the spatial/intensity balance comparable
//! across scales whose sifted responses differ in amplitude.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{BinaryMask, GrayImage16, MassAnnotation, Region};
use crate::morphosift::{ScaleBand, SiftedStack};

/// Cluster id per pixel; every pixel is assigned and each cluster is
/// 4-connected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub k_actual: usize,
}

impl SuperpixelMap {
    pub fn regions(&self) -> Vec<Region> {
        let mut idx: Vec<Vec<u32>> = vec![Vec::new(); self.k_actual];
        for (i, &l) in self.labels.iter().enumerate() {
            idx[l as usize].push(i as u32);
        }
        idx.into_iter()
            .map(|v| Region::new(self.width, self.height, v).expect("indices in range"))
            .collect()
    }
}

/// Separable Gaussian blur with replicated borders. `sigma <= 0` is a copy.
pub fn gaussian_smooth(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * src[y * w + clamp(x as isize + j as isize - radius, w)];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * tmp[clamp(y as isize + j as isize - radius, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
struct Center {
    x: f64,
    y: f64,
    intensity: f64,
}

fn seed_centers(img: &[f64], w: usize, h: usize, k: usize) -> (Vec<Center>, f64) {
    let step = ((w * h) as f64 / k as f64).sqrt();
    let rows = ((h as f64 / step).round() as usize).max(1);
    let cols = ((w as f64 / step).round() as usize).max(1);
    let (sy, sx) = (h as f64 / rows as f64, w as f64 / cols as f64);

    let grad = |x: usize, y: usize| {
        let at = |xx: isize, yy: isize| {
            img[(yy.clamp(0, h as isize - 1) as usize) * w + xx.clamp(0, w as isize - 1) as usize]
        };
        let (xi, yi) = (x as isize, y as isize);
        let gx = at(xi + 1, yi) - at(xi - 1, yi);
        let gy = at(xi, yi + 1) - at(xi, yi - 1);
        gx * gx + gy * gy
    };

    let mut centers = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        // hexagonal offset: alternate rows shift by half a column
        let shift = if rows > 1 {
            if r % 2 == 0 {
                -0.25
            } else {
                0.25
            }
        } else {
            0.0
        };
        for c in 0..cols {
            let fx = ((c as f64 + 0.5 + shift) * sx).floor().clamp(0.0, w as f64 - 1.0) as usize;
            let fy = ((r as f64 + 0.5) * sy).floor().clamp(0.0, h as f64 - 1.0) as usize;
            let (mut bx, mut by) = (fx, fy);
            let mut best = grad(fx, fy);
            for ny in fy.saturating_sub(1)..=(fy + 1).min(h - 1) {
                for nx in fx.saturating_sub(1)..=(fx + 1).min(w - 1) {
                    let g = grad(nx, ny);
                    if g < best {
                        best = g;
                        bx = nx;
                        by = ny;
                    }
                }
            }
            centers.push(Center {
                x: bx as f64,
                y: by as f64,
                intensity: img[by * w + bx],
            });
        }
    }
    (centers, step)
}

/// SLIC superpixels on one grayscale image.
///
/// Seeds sit on a hexagonally offset grid of step `S = sqrt(N / k)` and move
/// to the lowest-gradient pixel of their 3×3 neighbourhood. Each iteration
/// assigns pixels within a `2S × 2S` window of every center by
/// `D² = ΔI² + compactness² · (Δs / S)²`, then moves centers to their
/// cluster means. Finally components smaller than `S² / 4` are absorbed into
/// their largest neighbour.
pub fn slic(image: &GrayImage16, k: usize, compactness: f64, sigma: f64, iterations: usize) -> Result<SuperpixelMap> {
    let (w, h) = image.dims();
    let n = w * h;
    if k < 1 || k > n {
        return Err(Error::invalid(format!("superpixel count {k} must lie in 1..={n}")));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::invalid(format!("compactness must be positive, got {compactness}")));
    }
    let raw: Vec<f64> = image.pixels().iter().map(|&v| v as f64 * 100.0 / 65535.0).collect();
    let img = gaussian_smooth(&raw, w, h, sigma);
    let (mut centers, step) = seed_centers(&img, w, h, k);

    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let spatial = (compactness / step).powi(2);
    let reach = step.ceil() as isize;
    for _ in 0..iterations.max(1) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x.round() as isize, c.y.round() as isize);
            let y0 = (cy - reach).max(0) as usize;
            let y1 = (cy + reach).min(h as isize - 1) as usize;
            let x0 = (cx - reach).max(0) as usize;
            let x1 = (cx + reach).min(w as isize - 1) as usize;
            for y in y0..=y1 {
                let dy = y as f64 - c.y;
                for x in x0..=x1 {
                    let i = y * w + x;
                    let di = img[i] - c.intensity;
                    let dx = x as f64 - c.x;
                    let d = di * di + spatial * (dx * dx + dy * dy);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = ci as u32;
                    }
                }
            }
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l != u32::MAX {
                let s = &mut sums[l as usize];
                s.0 += (i % w) as f64;
                s.1 += (i / w) as f64;
                s.2 += img[i];
                s.3 += 1;
            }
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let m = s.3 as f64;
                *c = Center {
                    x: s.0 / m,
                    y: s.1 / m,
                    intensity: s.2 / m,
                };
            }
        }
    }

    let min_size = step * step / 4.0;
    let (labels, k_actual) = enforce_connectivity(&labels, w, h, min_size);
    Ok(SuperpixelMap {
        width: w,
        height: h,
        labels,
        k_actual,
    })
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Splits labels into 4-connected components, merges components smaller
/// than `min_size` into their largest adjacent component, and renumbers in
/// scan order.
fn enforce_connectivity(labels: &[u32], w: usize, h: usize, min_size: f64) -> (Vec<u32>, usize) {
    let n = w * h;
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let lab = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == lab {
                    comp[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        sizes.push(size);
    }

    let n_comp = sizes.len();
    let mut adjacent: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_comp];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            if x + 1 < w {
                let b = comp[y * w + x + 1];
                if a != b {
                    adjacent[a].insert(b);
                    adjacent[b].insert(a);
                }
            }
            if y + 1 < h {
                let b = comp[(y + 1) * w + x];
                if a != b {
                    adjacent[a].insert(b);
                    adjacent[b].insert(a);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..n_comp).collect();
    let mut order: Vec<usize> = (0..n_comp).filter(|&c| (sizes[c] as f64) < min_size).collect();
    order.sort_by_key(|&c| (sizes[c], c));
    for c in order {
        let root = find(&mut parent, c);
        if sizes[root] as f64 >= min_size {
            continue;
        }
        let neighbours: Vec<usize> = adjacent[root].iter().copied().collect();
        let mut best: Option<usize> = None;
        for nb in neighbours {
            let r = find(&mut parent, nb);
            if r == root {
                continue;
            }
            best = match best {
                Some(b) if (sizes[b], std::cmp::Reverse(b)) >= (sizes[r], std::cmp::Reverse(r)) => Some(b),
                _ => Some(r),
            };
        }
        let Some(target) = best else { continue };
        parent[root] = target;
        sizes[target] += sizes[root];
        let moved = std::mem::take(&mut adjacent[root]);
        adjacent[target].extend(moved);
    }

    let mut renumber: HashMap<usize, u32> = HashMap::new();
    let mut out = vec![0u32; n];
    for i in 0..n {
        let r = find(&mut parent, comp[i]);
        let next = renumber.len() as u32;
        out[i] = *renumber.entry(r).or_insert(next);
    }
    (out, renumber.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateLabel {
    Positive,
    Negative,
    Unlabeled,
}

/// One superpixel region at one sifting scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub case_id: String,
    /// 1-based band index.
    pub scale_index: usize,
    pub region: Region,
    pub centroid: (f64, f64),
    pub mean_sifted_intensity: f64,
    pub label: CandidateLabel,
    /// Set exactly when the candidate is labelled.
    pub best_dice: Option<f64>,
    pub matched_mass_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlicConfig {
    /// Superpixels per scale; `None` sizes one superpixel per mid-band
    /// mass area.
    pub superpixels_per_scale: Option<Vec<usize>>,
    /// Compactness per scale (the `c0` multiplier when adaptive).
    pub compactness_per_scale: Vec<f64>,
    pub adaptive_compactness: bool,
    pub smoothing_sigma: f64,
    pub iterations: usize,
    pub dice_threshold_per_scale: Vec<f64>,
    pub intensity_percentile: f64,
    pub min_breast_fraction: f64,
}

impl Default for SlicConfig {
    fn default() -> Self {
        Self {
            superpixels_per_scale: None,
            compactness_per_scale: vec![10.0; 4],
            adaptive_compactness: true,
            smoothing_sigma: 5.0,
            iterations: 10,
            dice_threshold_per_scale: vec![0.5; 4],
            intensity_percentile: 85.0,
            min_breast_fraction: 0.5,
        }
    }
}

impl SlicConfig {
    pub fn validate(&self, n_scales: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if let Some(k) = &self.superpixels_per_scale {
            if k.len() != n_scales || k.contains(&0) {
                return bad("superpixels_per_scale needs one positive count per scale");
            }
        }
        if self.compactness_per_scale.len() != n_scales
            || self.compactness_per_scale.iter().any(|&c| !(c > 0.0 && c.is_finite()))
        {
            return bad("compactness_per_scale needs one positive value per scale");
        }
        if self.dice_threshold_per_scale.len() != n_scales
            || self.dice_threshold_per_scale.iter().any(|&t| !(t > 0.0 && t <= 1.0))
        {
            return bad("dice_threshold_per_scale needs one value in (0, 1] per scale");
        }
        if !(0.0..100.0).contains(&self.intensity_percentile) {
            return bad("intensity_percentile must lie in [0, 100)");
        }
        if !(0.0..=1.0).contains(&self.min_breast_fraction) {
            return bad("min_breast_fraction must lie in [0, 1]");
        }
        if !(self.smoothing_sigma >= 0.0) {
            return bad("smoothing_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn superpixels_for(&self, scale: usize, band: &ScaleBand, area: usize) -> usize {
        match &self.superpixels_per_scale {
            Some(k) => k[scale],
            None => {
                let r = band.mid_diameter() / 2.0;
                ((area as f64 / (std::f64::consts::PI * r * r)).round() as usize).clamp(1, area)
            }
        }
    }

    pub fn compactness_for(&self, scale: usize, image: &GrayImage16) -> f64 {
        let c0 = self.compactness_per_scale[scale];
        if !self.adaptive_compactness {
            return c0;
        }
        let (lo, hi) = image.min_max();
        (c0 * (hi - lo) as f64 / 65535.0).max(1e-6)
    }
}

/// Runs SLIC on every scale of the stack; each superpixel becomes an
/// unlabelled candidate.
pub fn extract_candidates(case_id: &str, stack: &SiftedStack, cfg: &SlicConfig) -> Result<Vec<Candidate>> {
    cfg.validate(stack.len())?;
    let mut out = Vec::new();
    for (s, (band, image)) in stack.bands.iter().zip(&stack.images).enumerate() {
        let k = cfg.superpixels_for(s, band, image.len());
        let m = cfg.compactness_for(s, image);
        let map = slic(image, k, m, cfg.smoothing_sigma, cfg.iterations)?;
        for region in map.regions() {
            let mean = region.mean_of(image)?;
            out.push(Candidate {
                case_id: case_id.to_string(),
                scale_index: s + 1,
                centroid: region.centroid(),
                mean_sifted_intensity: mean,
                region,
                label: CandidateLabel::Unlabeled,
                best_dice: None,
                matched_mass_id: None,
            });
        }
    }
    Ok(out)
}

/// Annotates each candidate with its best Dice against the masses and a
/// positive/negative label from the per-scale thresholds.
pub fn label_candidates(cands: Vec<Candidate>, masses: &[MassAnnotation], thresholds: &[f64]) -> Result<Vec<Candidate>> {
    cands
        .into_iter()
        .map(|mut c| {
            let threshold = *thresholds.get(c.scale_index - 1).ok_or_else(|| {
                Error::invalid(format!("no Dice threshold for scale {}", c.scale_index))
            })?;
            let mut best = 0.0;
            let mut best_id = None;
            for m in masses {
                let d = c.region.dice_with_mask(m.mask())?;
                if d > best {
                    best = d;
                    best_id = Some(m.id.clone());
                }
            }
            let positive = best >= threshold && best > 0.0;
            c.best_dice = Some(best);
            c.label = if positive {
                CandidateLabel::Positive
            } else {
                CandidateLabel::Negative
            };
            c.matched_mass_id = if positive { best_id } else { None };
            Ok(c)
        })
        .collect()
}

/// Linear-interpolation percentile of `values` (`p` in percent).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Per `(case, scale)` intensity cut-off used by [`redundancy_filter`].
pub fn intensity_cutoffs(cands: &[Candidate], percentile_p: f64) -> HashMap<(String, usize), f64> {
    let mut groups: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    for c in cands {
        groups
            .entry((c.case_id.clone(), c.scale_index))
            .or_default()
            .push(c.mean_sifted_intensity);
    }
    groups
        .into_iter()
        .map(|(key, vals)| (key, percentile(&vals, percentile_p)))
        .collect()
}

/// Whether a candidate survives the given cut-offs.
pub fn passes_filter(
    c: &Candidate,
    breast_mask: &BinaryMask,
    cutoffs: &HashMap<(String, usize), f64>,
    cfg: &SlicConfig,
) -> Result<bool> {
    let inside = c.region.count_in_mask(breast_mask)? as f64 / c.region.area().max(1) as f64;
    if inside < cfg.min_breast_fraction {
        return Ok(false);
    }
    let cut = cutoffs
        .get(&(c.case_id.clone(), c.scale_index))
        .copied()
        .unwrap_or(f64::NEG_INFINITY);
    Ok(c.mean_sifted_intensity >= cut)
}

/// Drops candidates that are mostly outside the breast or darker than the
/// configured percentile of their own case and scale.
pub fn redundancy_filter(cands: Vec<Candidate>, breast_mask: &BinaryMask, cfg: &SlicConfig) -> Result<Vec<Candidate>> {
    let cutoffs = intensity_cutoffs(&cands, cfg.intensity_percentile);
    let mut keep = Vec::with_capacity(cands.len());
    for c in cands {
        if passes_filter(&c, breast_mask, &cutoffs, cfg)? {
            keep.push(c);
        }
    }
    Ok(keep)
}

/// JSON-lines record of a candidate; the pixel set is run-length encoded
/// over the row-major index as `[start, len, …]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub case_id: String,
    pub index: usize,
    pub scale: usize,
    pub centroid: [f64; 2],
    pub area: usize,
    pub label: CandidateLabel,
    pub best_dice: Option<f64>,
    pub matched_mass_id: Option<String>,
    pub mean_intensity: f64,
    pub kept: bool,
    pub width: usize,
    pub height: usize,
    pub runs: Vec<u32>,
}

impl CandidateRecord {
    pub fn from_candidate(c: &Candidate, index: usize, kept: bool) -> Self {
        Self {
            case_id: c.case_id.clone(),
            index,
            scale: c.scale_index,
            centroid: [c.centroid.0, c.centroid.1],
            area: c.region.area(),
            label: c.label,
            best_dice: c.best_dice,
            matched_mass_id: c.matched_mass_id.clone(),
            mean_intensity: c.mean_sifted_intensity,
            kept,
            width: c.region.width(),
            height: c.region.height(),
            runs: c.region.to_runs(),
        }
    }

    pub fn to_candidate(&self) -> Result<Candidate> {
        let region = Region::from_runs(self.width, self.height, &self.runs)?;
        if region.area() != self.area {
            return Err(Error::invalid(format!(
                "candidate {} area {} disagrees with its runs ({})",
                self.index,
                self.area,
                region.area()
            )));
        }
        Ok(Candidate {
            case_id: self.case_id.clone(),
            scale_index: self.scale,
            centroid: (self.centroid[0], self.centroid[1]),
            mean_sifted_intensity: self.mean_intensity,
            region,
            label: self.label,
            best_dice: self.best_dice,
            matched_mass_id: self.matched_mass_id.clone(),
        })
    }
}
