//! Per-candidate feature vectors: 7 shape, 6 histogram, 7 co-occurrence and
//! 2 cross-scale features, plus a CSV table format.
//!
//! Histogram features use the CLAHE image, co-occurrence features use the
//! sifted image of the candidate's own scale, and the cross-scale ratios use
//! the three smallest bands of the stack.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{GrayImage16, Region};
use crate::morphosift::SiftedStack;
use crate::superpixel::{Candidate, CandidateLabel};

pub const FEATURE_NAMES: [&str; 22] = [
    "area",
    "perimeter",
    "circularity",
    "eccentricity",
    "solidity",
    "extent",
    "radius",
    "mean",
    "smoothness",
    "uniformity",
    "entropy",
    "skew",
    "kurtosis",
    "contrast",
    "correlation",
    "angular_second_moment",
    "energy",
    "dissimilarity",
    "homogeneity",
    "glcm_variance",
    "s_ratio_12",
    "s_ratio_23",
];

pub const HISTOGRAM_BINS: usize = 64;

/// Named, versioned feature layout. Extra features append after the 22
/// base names and bump nothing else, so older columns keep their positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub names: Vec<String>,
}

impl FeatureSchema {
    pub fn v1() -> Self {
        Self {
            version: 1,
            names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn with_extensions(extensions: &[&dyn FeatureExtension]) -> Self {
        let mut s = Self::v1();
        for e in extensions {
            s.names.extend(e.names().iter().map(|n| n.to_string()));
        }
        s
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Hook for features computed after the base vector.
pub trait FeatureExtension: Send + Sync {
    fn names(&self) -> Vec<&'static str>;
    fn compute(&self, candidate: &Candidate, clahe: &GrayImage16, stack: &SiftedStack) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub glcm_levels: usize,
    pub glcm_distance: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            glcm_levels: 32,
            glcm_distance: 1,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.glcm_levels < 2 {
            return Err(Error::Config("glcm_levels must be at least 2".into()));
        }
        if self.glcm_distance < 1 {
            return Err(Error::Config("glcm_distance must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, schema: &FeatureSchema, name: &str) -> Option<f64> {
        schema.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

// clockwise with y pointing down, starting east
const DIRS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn dir_index(dx: isize, dy: isize) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("unit step")
}

/// Length of the Moore-neighbour boundary trace of the 8-connected
/// component holding the region's first pixel in scan order; axial steps
/// count 1 and diagonal steps √2. Returns 0 for a singleton.
pub fn boundary_length(region: &Region) -> f64 {
    let (w, h) = region.dims();
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && region.contains(x as usize, y as usize)
    };
    let Some(&first) = region.indices().first() else {
        return 0.0;
    };
    let start = ((first as usize % w) as isize, (first as usize / w) as isize);

    // west of the first scan-order pixel is always outside
    let step_from = |p: (isize, isize), back: usize| -> Option<((isize, isize), usize)> {
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
            if inside(q.0, q.1) {
                let prev = (back + k - 1) % 8;
                let b = (p.0 + DIRS[prev].0, p.1 + DIRS[prev].1);
                return Some((q, dir_index(b.0 - q.0, b.1 - q.1)));
            }
        }
        None
    };

    let Some((first_next, first_back)) = step_from(start, 4) else {
        return 0.0;
    };
    let step_len = |a: (isize, isize), b: (isize, isize)| {
        if a.0 != b.0 && a.1 != b.1 {
            std::f64::consts::SQRT_2
        } else {
            1.0
        }
    };
    let mut length = step_len(start, first_next);
    let (mut p, mut back) = (first_next, first_back);
    let limit = 8 * region.area() + 8;
    for _ in 0..limit {
        let (q, nb) = step_from(p, back).expect("traced pixel has a neighbour");
        if p == start && q == first_next {
            break;
        }
        length += step_len(p, q);
        p = q;
        back = nb;
    }
    length
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Area of the convex hull of all pixel corners.
pub fn convex_hull_area(region: &Region) -> f64 {
    let (w, _) = region.dims();
    let mut rows: std::collections::BTreeMap<i64, (i64, i64)> = std::collections::BTreeMap::new();
    for &i in region.indices() {
        let (x, y) = ((i as usize % w) as i64, (i as usize / w) as i64);
        let e = rows.entry(y).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    let mut pts: Vec<(i64, i64)> = Vec::with_capacity(rows.len() * 4);
    for (&y, &(x0, x1)) in &rows {
        pts.extend([(x0, y), (x0, y + 1), (x1 + 1, y), (x1 + 1, y + 1)]);
    }
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let base = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= base + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let mut twice = 0i64;
    for k in 0..hull.len() {
        let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
        twice += a.0 * b.1 - b.0 * a.1;
    }
    twice.abs() as f64 / 2.0
}

/// `[area, perimeter, circularity, eccentricity, solidity, extent, radius]`.
pub fn shape_features(region: &Region) -> Result<[f64; 7]> {
    let area = region.area();
    if area == 0 {
        return Err(Error::invalid("shape features of an empty region"));
    }
    let a = area as f64;
    let mut perimeter = boundary_length(region);
    if perimeter == 0.0 {
        perimeter = 4.0 * (a / std::f64::consts::PI).sqrt();
    }
    let circularity = 4.0 * std::f64::consts::PI * a / (perimeter * perimeter);

    let (mx, my) = region.centroid();
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in region.coords() {
        let (dx, dy) = (x as f64 + 0.5 - mx, y as f64 + 0.5 - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (sxx, syy, sxy) = (sxx / a, syy / a, sxy / a);
    let half_tr = (sxx + syy) / 2.0;
    let disc = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let (l1, l2) = (half_tr + disc, (half_tr - disc).max(0.0));
    let eccentricity = if l1 > 0.0 { (1.0 - l2 / l1).clamp(0.0, 1.0).sqrt() } else { 0.0 };

    let hull = convex_hull_area(region);
    let solidity = if hull > 0.0 { a / hull } else { 1.0 };
    let (x0, y0, x1, y1) = region.bbox().expect("non-empty");
    let extent = a / ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
    let radius = (a / std::f64::consts::PI).sqrt();
    Ok([a, perimeter, circularity, eccentricity, solidity, extent, radius])
}

/// `[mean, smoothness, uniformity, entropy, skew, kurtosis]` of the region's
/// pixels scaled to `[0, 1]`; kurtosis is excess kurtosis.
pub fn histogram_features(region: &Region, image: &GrayImage16) -> Result<[f64; 6]> {
    if region.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: region.dims(),
            actual: image.dims(),
        });
    }
    if region.area() == 0 {
        return Err(Error::invalid("histogram features of an empty region"));
    }
    let px = image.pixels();
    let n = region.area() as f64;
    let mut hist = [0usize; HISTOGRAM_BINS];
    let mut sum = 0.0;
    for &i in region.indices() {
        let v = px[i as usize];
        hist[(v >> 10) as usize] += 1;
        sum += v as f64 / 65535.0;
    }
    let mean = sum / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &i in region.indices() {
        let d = px[i as usize] as f64 / 65535.0 - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (var, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let smoothness = 1.0 - 1.0 / (1.0 + var);
    let (skew, kurtosis) = if var > 0.0 {
        (m3 / var.powf(1.5), m4 / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let (mut uniformity, mut entropy) = (0.0, 0.0);
    for &c in &hist {
        if c > 0 {
            let q = c as f64 / n;
            uniformity += q * q;
            entropy -= q * q.log2();
        }
    }
    Ok([mean, smoothness, uniformity, entropy, skew, kurtosis])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GlcmAngle {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl GlcmAngle {
    pub const ALL: [GlcmAngle; 4] = [GlcmAngle::Deg0, GlcmAngle::Deg45, GlcmAngle::Deg90, GlcmAngle::Deg135];

    /// Pixel offset at distance `d`, with y pointing down.
    pub fn offset(self, d: usize) -> (isize, isize) {
        let d = d as isize;
        match self {
            GlcmAngle::Deg0 => (d, 0),
            GlcmAngle::Deg45 => (d, -d),
            GlcmAngle::Deg90 => (0, -d),
            GlcmAngle::Deg135 => (-d, -d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlcmMatrix {
    pub levels: usize,
    /// Row-major `levels × levels`.
    pub p: Vec<f64>,
    pub symmetric: bool,
    /// No angle had a pair inside the region; `p` is uniform.
    pub degenerate: bool,
}

impl GlcmMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

/// Grey level of `v` among `levels` bins spanning `lo..=hi`.
pub fn quantize(v: u16, lo: u16, hi: u16, levels: usize) -> usize {
    ((v - lo) as usize * levels) / ((hi - lo) as usize + 1)
}

/// Symmetric co-occurrence matrix over the four standard angles.
pub fn glcm(region: &Region, image: &GrayImage16, levels: usize, distance: usize) -> Result<GlcmMatrix> {
    glcm_with_angles(region, image, levels, distance, &GlcmAngle::ALL)
}

/// Co-occurrence matrix averaged over `angles`. Only pairs with both pixels
/// in the region count; an angle with no such pair is left out of the
/// average.
pub fn glcm_with_angles(
    region: &Region,
    image: &GrayImage16,
    levels: usize,
    distance: usize,
    angles: &[GlcmAngle],
) -> Result<GlcmMatrix> {
    if levels < 2 {
        return Err(Error::invalid("GLCM needs at least 2 levels"));
    }
    if region.dims() != image.dims() {
        return Err(Error::DimensionMismatch {
            expected: region.dims(),
            actual: image.dims(),
        });
    }
    let (w, h) = image.dims();
    let px = image.pixels();
    let (lo, hi) = region
        .indices()
        .iter()
        .map(|&i| px[i as usize])
        .fold((u16::MAX, 0u16), |(lo, hi), v| (lo.min(v), hi.max(v)));

    let mut acc = vec![0.0; levels * levels];
    let mut used = 0usize;
    for &angle in angles {
        let (dx, dy) = angle.offset(distance);
        let mut counts = vec![0u64; levels * levels];
        let mut total = 0u64;
        for (x, y) in region.coords() {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h || !region.contains(nx as usize, ny as usize) {
                continue;
            }
            let a = quantize(px[y * w + x], lo, hi, levels);
            let b = quantize(px[ny as usize * w + nx as usize], lo, hi, levels);
            counts[a * levels + b] += 1;
            counts[b * levels + a] += 1;
            total += 2;
        }
        if total == 0 {
            continue;
        }
        used += 1;
        for (s, &c) in acc.iter_mut().zip(&counts) {
            *s += c as f64 / total as f64;
        }
    }
    if used == 0 {
        let u = 1.0 / (levels * levels) as f64;
        return Ok(GlcmMatrix {
            levels,
            p: vec![u; levels * levels],
            symmetric: true,
            degenerate: true,
        });
    }
    acc.iter_mut().for_each(|v| *v /= used as f64);
    Ok(GlcmMatrix {
        levels,
        p: acc,
        symmetric: true,
        degenerate: false,
    })
}

/// `[contrast, correlation, angular_second_moment, energy, dissimilarity,
/// homogeneity, glcm_variance]`. ASM is reported as `energy²` so the two
/// agree bit for bit.
pub fn glcm_features(g: &GlcmMatrix) -> [f64; 7] {
    let l = g.levels;
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.at(i, j);
            mu_i += i as f64 * p;
            mu_j += j as f64 * p;
        }
    }
    let (mut contrast, mut dissimilarity, mut homogeneity, mut sum_sq) = (0.0, 0.0, 0.0, 0.0);
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let p = g.at(i, j);
            let d = i.abs_diff(j) as f64;
            contrast += d * d * p;
            dissimilarity += d * p;
            homogeneity += p / (1.0 + d);
            sum_sq += p * p;
            let (di, dj) = (i as f64 - mu_i, j as f64 - mu_j);
            var_i += di * di * p;
            var_j += dj * dj * p;
            cov += di * dj * p;
        }
    }
    let correlation = if var_i > 0.0 && var_j > 0.0 {
        cov / (var_i.sqrt() * var_j.sqrt())
    } else {
        0.0
    };
    let energy = sum_sq.sqrt();
    let asm = energy * energy;
    [contrast, correlation, asm, energy, dissimilarity, homogeneity, var_i]
}

/// Relative drop of the region mean between global scales 1→2 and 2→3.
pub fn scale_ratio_features(region: &Region, stack: &SiftedStack) -> Result<[f64; 2]> {
    if stack.len() < 3 {
        return Err(Error::invalid(format!("scale ratios need 3 scales, stack has {}", stack.len())));
    }
    let eps = 1e-6 * 65535.0;
    let s: Vec<f64> = (0..3).map(|k| region.mean_of(&stack.images[k])).collect::<Result<_>>()?;
    let ratio = |a: f64, b: f64| if a < eps { 0.0 } else { (a - b) / a };
    Ok([ratio(s[0], s[1]), ratio(s[1], s[2])])
}

/// The 22 base features of one candidate in canonical order.
pub fn assemble_vector(
    candidate: &Candidate,
    clahe: &GrayImage16,
    stack: &SiftedStack,
    cfg: &FeatureConfig,
) -> Result<FeatureVector> {
    assemble_vector_with(candidate, clahe, stack, cfg, &[])
}

pub fn assemble_vector_with(
    candidate: &Candidate,
    clahe: &GrayImage16,
    stack: &SiftedStack,
    cfg: &FeatureConfig,
    extensions: &[&dyn FeatureExtension],
) -> Result<FeatureVector> {
    let r = &candidate.region;
    let native = stack
        .images
        .get(candidate.scale_index.wrapping_sub(1))
        .ok_or_else(|| Error::invalid(format!("candidate scale {} not in stack", candidate.scale_index)))?;
    let mut values = Vec::with_capacity(22);
    values.extend(shape_features(r)?);
    values.extend(histogram_features(r, clahe)?);
    values.extend(glcm_features(&glcm(r, native, cfg.glcm_levels, cfg.glcm_distance)?));
    values.extend(scale_ratio_features(r, stack)?);
    for e in extensions {
        let extra = e.compute(candidate, clahe, stack)?;
        if extra.len() != e.names().len() {
            return Err(Error::invalid("feature extension returned the wrong number of values"));
        }
        values.extend(extra);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("feature {i} is not finite")));
    }
    Ok(FeatureVector { values })
}

/// One table row: features plus identifying columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub case_id: String,
    pub scale: usize,
    pub label: CandidateLabel,
    pub values: Vec<f64>,
}

/// Shortest-form decimal with 9 significant digits, in the style of C's
/// `%.9g`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        trim(&format!("{x:.*}", (8 - exp) as usize))
    } else {
        format!("{}e{}", trim(mantissa), exp)
    }
}

fn label_str(l: CandidateLabel) -> &'static str {
    match l {
        CandidateLabel::Positive => "positive",
        CandidateLabel::Negative => "negative",
        CandidateLabel::Unlabeled => "unlabeled",
    }
}

pub fn feature_csv(schema: &FeatureSchema, rows: &[FeatureRow]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&schema.names.join(","));
    out.push_str(",case_id,scale,label\n");
    for r in rows {
        if r.values.len() != schema.len() {
            return Err(Error::invalid(format!(
                "row has {} values, schema has {}",
                r.values.len(),
                schema.len()
            )));
        }
        if r.case_id.contains([',', '\n', '"']) {
            return Err(Error::invalid(format!("case id {:?} cannot be written to CSV", r.case_id)));
        }
        for v in &r.values {
            out.push_str(&format_sig9(*v));
            out.push(',');
        }
        let _ = writeln!(out, "{},{},{}", r.case_id, r.scale, label_str(r.label));
    }
    Ok(out)
}

pub fn write_feature_csv(path: &Path, schema: &FeatureSchema, rows: &[FeatureRow]) -> Result<()> {
    let text = feature_csv(schema, rows)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_feature_csv(path: &Path) -> Result<(FeatureSchema, Vec<FeatureRow>)> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_csv(&text).map_err(|m| Error::data(path, m))
}

fn parse_feature_csv(text: &str) -> std::result::Result<(FeatureSchema, Vec<FeatureRow>), String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty feature table")?.split(',').collect();
    let n = header.len();
    if n < 4 || header[n - 3..] != ["case_id", "scale", "label"] {
        return Err("header must end with case_id,scale,label".into());
    }
    let names: Vec<String> = header[..n - 3].iter().map(|s| s.to_string()).collect();
    if names.len() < FEATURE_NAMES.len() || names[..FEATURE_NAMES.len()] != FEATURE_NAMES {
        return Err("header does not start with the base feature names".into());
    }
    let schema = FeatureSchema { version: 1, names };
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != n {
            return Err(format!("line {}: expected {n} columns, found {}", ln + 2, cols.len()));
        }
        let values = cols[..n - 3]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 2)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let scale = cols[n - 2].parse().map_err(|e| format!("line {}: scale: {e}", ln + 2))?;
        let label = match cols[n - 1] {
            "positive" => CandidateLabel::Positive,
            "negative" => CandidateLabel::Negative,
            "unlabeled" => CandidateLabel::Unlabeled,
            other => return Err(format!("line {}: unknown label {other:?}", ln + 2)),
        };
        rows.push(FeatureRow {
            case_id: cols[n - 3].to_string(),
            scale,
            label,
            values,
        });
    }
    Ok((schema, rows))
}
