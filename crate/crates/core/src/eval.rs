//! Image-level cross-validation splits, Dice-based detection matching, FROC
//! curves and per-pixel probability heat maps.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::format_sig9;
use crate::imagecore::io::{write_png8, write_rgb_png};
use crate::imagecore::{BinaryMask, GrayImage16, Region};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_case_ids: Vec<String>,
    pub validation_case_ids: Vec<String>,
    pub test_case_ids: Vec<String>,
}

/// Shuffles the cases and deals them into `k` test folds whose sizes differ
/// by at most one. Of each fold's remaining cases, `round(val_fraction · n)`
/// (at least one when two or more remain, never all) go to validation.
pub fn kfold_by_image(case_ids: &[String], k: usize, val_fraction: f64, seed: u64) -> Result<Vec<FoldSplit>> {
    if k == 0 || k > case_ids.len() {
        return Err(Error::invalid(format!("cannot make {k} folds from {} cases", case_ids.len())));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(format!("val_fraction must lie in (0, 1), got {val_fraction}")));
    }
    let mut ids = case_ids.to_vec();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut bounds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        bounds.push(start..start + len);
        start += len;
    }
    let folds = bounds
        .into_iter()
        .enumerate()
        .map(|(f, range)| {
            let mut test: Vec<String> = ids[range.clone()].to_vec();
            let mut rest: Vec<String> = ids[..range.start].iter().chain(&ids[range.end..]).cloned().collect();
            rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + f as u64)));
            let n_val = if rest.len() >= 2 {
                ((val_fraction * rest.len() as f64).round() as usize).clamp(1, rest.len() - 1)
            } else {
                0
            };
            let mut val: Vec<String> = rest[..n_val].to_vec();
            let mut train: Vec<String> = rest[n_val..].to_vec();
            test.sort();
            val.sort();
            train.sort();
            FoldSplit {
                fold_index: f,
                train_case_ids: train,
                validation_case_ids: val,
                test_case_ids: test,
            }
        })
        .collect();
    Ok(folds)
}

/// A scored region, typically a candidate superpixel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredRegion {
    pub region: Region,
    pub probability: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(mass index, prediction index)` pairs, by descending Dice.
    pub matched: Vec<(usize, usize)>,
    /// Predictions left after duplicate suppression.
    pub surviving: Vec<usize>,
}

/// Greedy duplicate suppression: in order of decreasing probability (ties by
/// index) a prediction is kept unless its IoU with an already kept one
/// exceeds `merge_iou`.
pub fn suppress_duplicates(preds: &[ScoredRegion], merge_iou: f64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].probability.total_cmp(&preds[a].probability).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let mut dup = false;
        for &j in &kept {
            if preds[i].region.iou(&preds[j].region)? > merge_iou {
                dup = true;
                break;
            }
        }
        if !dup {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Adjudicates one case's predictions against its masses. After duplicate
/// suppression, (mass, prediction) pairs with Dice ≥ `dice_min` are matched
/// one-to-one in order of decreasing Dice.
pub fn match_predictions(preds: &[ScoredRegion], masses: &[Region], dice_min: f64, merge_iou: f64) -> Result<MatchResult> {
    let surviving = suppress_duplicates(preds, merge_iou)?;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (mi, m) in masses.iter().enumerate() {
        for &pi in &surviving {
            let d = preds[pi].region.dice(m)?;
            if d >= dice_min && d > 0.0 {
                pairs.push((d, mi, pi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut mass_used = vec![false; masses.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut matched = Vec::new();
    for (_, mi, pi) in pairs {
        if !mass_used[mi] && !pred_used[pi] {
            mass_used[mi] = true;
            pred_used[pi] = true;
            matched.push((mi, pi));
        }
    }
    let tp = matched.len();
    Ok(MatchResult {
        tp,
        fp: surviving.len() - tp,
        fn_: masses.len() - tp,
        matched,
        surviving,
    })
}

/// Everything FROC needs about one case.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalCase {
    pub case_id: String,
    pub masses: Vec<Region>,
    pub predictions: Vec<ScoredRegion>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpi: f64,
}

/// One operating point per threshold, sorted by threshold. Predictions with
/// probability ≥ θ count. Without explicit thresholds every distinct
/// observed probability is used.
pub fn froc(cases: &[EvalCase], thresholds: Option<&[f64]>, dice_min: f64, merge_iou: f64) -> Result<Vec<FrocPoint>> {
    let mut ths: Vec<f64> = match thresholds {
        Some(t) => t.to_vec(),
        None => cases.iter().flat_map(|c| c.predictions.iter().map(|p| p.probability)).collect(),
    };
    if ths.iter().any(|t| t.is_nan()) {
        return Err(Error::invalid("NaN threshold"));
    }
    ths.sort_by(|a, b| a.total_cmp(b));
    ths.dedup();
    let n_masses: usize = cases.iter().map(|c| c.masses.len()).sum();
    let prepared = cases
        .par_iter()
        .map(|c| PreparedCase::new(c, dice_min, merge_iou))
        .collect::<Result<Vec<_>>>()?;
    let points = ths
        .par_iter()
        .map(|&th| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for c in &prepared {
                let (t, f) = c.counts(th);
                tp += t;
                fp += f;
            }
            FrocPoint {
                threshold: th,
                tpr: if n_masses > 0 { tp as f64 / n_masses as f64 } else { 0.0 },
                fpi: if cases.is_empty() { 0.0 } else { fp as f64 / cases.len() as f64 },
            }
        })
        .collect();
    Ok(points)
}

/// Suppression survivors and candidate pairs of one case, computed once for
/// all thresholds. Suppression of a prediction depends only on predictions
/// ranked above it, so the survivors at any threshold are the overall
/// survivors at or above it.
struct PreparedCase {
    probs: Vec<f64>,
    surviving: Vec<usize>,
    n_masses: usize,
    pairs: Vec<(f64, usize, usize)>,
}

impl PreparedCase {
    fn new(c: &EvalCase, dice_min: f64, merge_iou: f64) -> Result<Self> {
        let surviving = suppress_duplicates(&c.predictions, merge_iou)?;
        let mut pairs = Vec::new();
        for (mi, m) in c.masses.iter().enumerate() {
            for &pi in &surviving {
                let d = c.predictions[pi].region.dice(m)?;
                if d >= dice_min && d > 0.0 {
                    pairs.push((d, mi, pi));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Ok(Self {
            probs: c.predictions.iter().map(|p| p.probability).collect(),
            surviving,
            n_masses: c.masses.len(),
            pairs,
        })
    }

    fn counts(&self, th: f64) -> (usize, usize) {
        let mut mass_used = vec![false; self.n_masses];
        let mut pred_used = vec![false; self.probs.len()];
        let mut tp = 0;
        for &(_, mi, pi) in &self.pairs {
            if self.probs[pi] >= th && !mass_used[mi] && !pred_used[pi] {
                mass_used[mi] = true;
                pred_used[pi] = true;
                tp += 1;
            }
        }
        let kept = self.surviving.iter().filter(|&&i| self.probs[i] >= th).count();
        (tp, kept - tp)
    }
}

/// Best sensitivity among operating points with at most `max_fpi` false
/// positives per image.
pub fn tpr_at_fpi(points: &[FrocPoint], max_fpi: f64) -> f64 {
    points.iter().filter(|p| p.fpi <= max_fpi).map(|p| p.tpr).fold(0.0, f64::max)
}

pub fn froc_csv(points: &[FrocPoint]) -> String {
    let mut s = String::from("threshold,tpr,fpi\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", format_sig9(p.threshold), format_sig9(p.tpr), format_sig9(p.fpi));
    }
    s
}

pub fn parse_froc_csv(text: &str) -> Result<Vec<FrocPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("threshold,tpr,fpi") {
        return Err(Error::invalid("FROC table must start with threshold,tpr,fpi"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("FROC row {l:?}: {e}")))?;
            match v[..] {
                [threshold, tpr, fpi] => Ok(FrocPoint { threshold, tpr, fpi }),
                _ => Err(Error::invalid(format!("FROC row {l:?} needs 3 columns"))),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatCombine {
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

/// Per pixel, the mean (or max) probability of the candidates covering it;
/// uncovered pixels are 0.
pub fn heatmap(cands: &[ScoredRegion], width: usize, height: usize, combine: HeatCombine) -> Result<HeatMap> {
    let n = width * height;
    let mut acc = vec![0.0; n];
    let mut count = vec![0u32; n];
    for c in cands {
        if c.region.dims() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: c.region.dims(),
            });
        }
        if !(0.0..=1.0).contains(&c.probability) {
            return Err(Error::invalid(format!("probability {} outside [0, 1]", c.probability)));
        }
        for &i in c.region.indices() {
            let i = i as usize;
            match combine {
                HeatCombine::Mean => acc[i] += c.probability,
                HeatCombine::Max => acc[i] = f64::max(acc[i], c.probability),
            }
            count[i] += 1;
        }
    }
    if combine == HeatCombine::Mean {
        for (a, &c) in acc.iter_mut().zip(&count) {
            if c > 0 {
                *a /= c as f64;
            }
        }
    }
    Ok(HeatMap {
        width,
        height,
        values: acc,
    })
}

pub fn write_heatmap_png(path: &Path, map: &HeatMap) -> Result<()> {
    write_png8(path, map.width, map.height, map.to_u8())
}

fn outline(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = mask.dims();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !mask.get(x - 1, y)
                || !mask.get(x + 1, y)
                || !mask.get(x, y - 1)
                || !mask.get(x, y + 1);
            out[y * w + x] = edge;
        }
    }
    out
}

/// Side-by-side RGB panel: the image on the left, the heat map on the
/// right, ground-truth outlines in green on both.
pub fn overlay_rgb(image: &GrayImage16, map: &HeatMap, truth: &[&BinaryMask]) -> Result<(usize, usize, Vec<u8>)> {
    let (w, h) = image.dims();
    if (map.width, map.height) != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: (map.width, map.height),
        });
    }
    let mut edge = vec![false; w * h];
    for m in truth {
        m.ensure_same_dims((w, h))?;
        for (e, o) in edge.iter_mut().zip(outline(m)) {
            *e |= o;
        }
    }
    let heat = map.to_u8();
    let mut px = vec![0u8; 2 * w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let g = (image.pixels()[i] >> 8) as u8;
            let v = heat[i];
            let left = [g, g, g];
            // black → red → yellow
            let right = [v.saturating_mul(2).max(v), v.saturating_sub(128).saturating_mul(2), 0];
            for (panel, rgb) in [(0, left), (1, right)] {
                let o = ((y * 2 * w) + panel * w + x) * 3;
                let rgb = if edge[i] { [0, 255, 0] } else { rgb };
                px[o..o + 3].copy_from_slice(&rgb);
            }
        }
    }
    Ok((2 * w, h, px))
}

pub fn write_overlay_png(path: &Path, image: &GrayImage16, map: &HeatMap, truth: &[&BinaryMask]) -> Result<()> {
    let (w, h, px) = overlay_rgb(image, map, truth)?;
    write_rgb_png(path, w, h, px)
}
