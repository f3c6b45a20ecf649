//! Synthetic mammogram phantoms with exact ground truth.
//!
//! A phantom is a half-ellipse breast against the left edge, filled with a
//! thickness-shaded background, three octaves of smooth value noise for
//! parenchyma, bright blurred elliptical masses (optionally with radial
//! spicules), and Gaussian noise whose standard deviation grows with the
//! square root of the local intensity.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::annotation::{MammogramCase, MassAnnotation};
use super::raster::{BinaryMask, GrayImage16};

/// Full-scale value of the synthetic detector (14-bit).
const DETECTOR_MAX: f64 = 16383.0;
const OUTLINE_VERTICES: usize = 48;
const PLACEMENT_RESTARTS: usize = 20;
const PLACEMENT_RETRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub n_masses: usize,
    pub mass_diameter_range_px: (f64, f64),
    /// Intensity lift of a mass core as a fraction of full scale.
    pub mass_contrast: f64,
    pub spiculation: bool,
    pub noise_level: f64,
    pub seed: u64,
    pub pixel_spacing_um: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            n_masses: 1,
            mass_diameter_range_px: (60.0, 260.0),
            mass_contrast: 0.25,
            spiculation: false,
            noise_level: 0.5,
            seed: 0,
            pixel_spacing_um: 70.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if self.width < 16 || self.height < 16 {
            return bad(format!("phantom must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if self.n_masses > 4 {
            return bad(format!("n_masses must be 0..=4, got {}", self.n_masses));
        }
        let (lo, hi) = self.mass_diameter_range_px;
        let limit = self.width.min(self.height) as f64 * 0.8;
        if !(lo >= 3.0 && lo <= hi && hi <= limit) {
            return bad(format!(
                "mass diameter range ({lo}, {hi}) must satisfy 3 <= min <= max <= {limit}"
            ));
        }
        if !(0.0..=1.0).contains(&self.mass_contrast) || !(0.0..=1.0).contains(&self.noise_level) {
            return bad("mass_contrast and noise_level must lie in [0, 1]".into());
        }
        if !(self.pixel_spacing_um > 0.0) {
            return bad("pixel_spacing_um must be positive".into());
        }
        Ok(())
    }
}

struct Breast {
    semi_x: f64,
    semi_y: f64,
    center_y: f64,
}

impl Breast {
    fn rho2(&self, x: f64, y: f64) -> f64 {
        let u = x / self.semi_x;
        let v = (y - self.center_y) / self.semi_y;
        u * u + v * v
    }
}

#[derive(Clone, Debug)]
struct Lesion {
    cx: f64,
    cy: f64,
    semi_a: f64,
    semi_b: f64,
    angle: f64,
    rays: Vec<(f64, f64, f64, f64)>,
}

impl Lesion {
    fn point_at(&self, t: f64, scale: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (self.semi_a * t.cos() * scale, self.semi_b * t.sin() * scale);
        (self.cx + u * c - v * s, self.cy + u * s + v * c)
    }

    fn radius(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.semi_a;
        let v = (-dx * s + dy * c) / self.semi_b;
        (u * u + v * v).sqrt()
    }

    fn reach(&self) -> f64 {
        let ray_end = self
            .rays
            .iter()
            .map(|&(_, _, x1, y1)| ((x1 - self.cx).powi(2) + (y1 - self.cy).powi(2)).sqrt())
            .fold(0.0, f64::max);
        (self.semi_a * 1.2).max(ray_end) + 2.0
    }

    fn lift(&self, x: f64, y: f64, contrast: f64) -> f64 {
        let r = self.radius(x, y);
        let core = contrast * (1.0 - 0.2 * r * r).max(0.0) * (1.0 - smoothstep(0.85, 1.15, r));
        let mut spike: f64 = 0.0;
        for &(x0, y0, x1, y1) in &self.rays {
            let (dx, dy) = (x1 - x0, y1 - y0);
            let len2 = dx * dx + dy * dy;
            let s = (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0);
            let d = ((x - x0 - s * dx).powi(2) + (y - y0 - s * dy).powi(2)).sqrt();
            if d < 1.5 {
                spike = spike.max(0.6 * contrast * (1.0 - s) * (1.0 - d / 1.5));
            }
        }
        core.max(spike)
    }

    fn outline(&self) -> Vec<[f64; 2]> {
        (0..OUTLINE_VERTICES)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / OUTLINE_VERTICES as f64;
                let (x, y) = self.point_at(t, 1.0);
                [round3(x), round3(y)]
            })
            .collect()
    }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Lattice value noise with smoothstep interpolation.
struct ValueNoise {
    cell: f64,
    nx: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Self {
        let nx = (width as f64 / cell).ceil() as usize + 2;
        let ny = (height as f64 / cell).ceil() as usize + 2;
        let values = (0..nx * ny).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { cell, nx, values }
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (smoothstep(0.0, 1.0, gx.fract()), smoothstep(0.0, 1.0, gy.fract()));
        let at = |i: usize, j: usize| self.values[j * self.nx + i];
        let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
        let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Renders a phantom case. Deterministic in `spec` (including its seed).
pub fn generate_phantom(spec: &PhantomSpec) -> Result<MammogramCase> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let breast = Breast {
        semi_x: w as f64 * rng.random_range(0.80..0.92),
        semi_y: h as f64 * rng.random_range(0.40..0.46),
        center_y: h as f64 / 2.0,
    };
    let octaves: Vec<(ValueNoise, f64)> = [(8.0, 0.55), (16.0, 0.30), (32.0, 0.15)]
        .into_iter()
        .map(|(div, amp)| (ValueNoise::new(&mut rng, w, h, w.max(h) as f64 / div), amp))
        .collect();

    let lesions = place_lesions(spec, &breast, &mut rng)?;

    let breast_mask = BinaryMask::from_fn(w, h, |x, y| breast.rho2(x as f64 + 0.5, y as f64 + 0.5) <= 1.0)?;

    let reaches: Vec<f64> = lesions.iter().map(Lesion::reach).collect();
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let rho2 = breast.rho2(px, py);
            let mut v = if rho2 <= 1.0 {
                let depth = (1.0 - rho2).sqrt().sqrt();
                let field: f64 = octaves.iter().map(|(n, a)| a * n.sample(px, py)).sum();
                let mut v = 0.10 + 0.30 * depth + 0.10 * field * depth;
                for (l, &reach) in lesions.iter().zip(&reaches) {
                    if (px - l.cx).abs() < reach && (py - l.cy).abs() < reach {
                        v += l.lift(px, py, spec.mass_contrast);
                    }
                }
                v
            } else {
                0.02
            };
            let z: f64 = StandardNormal.sample(&mut rng);
            v += z * spec.noise_level * 0.03 * v.max(0.0).sqrt();
            pixels.push((v.clamp(0.0, 1.0) * DETECTOR_MAX).round() as u16);
        }
    }
    let image = GrayImage16::new(w, h, pixels)?;

    let masses = lesions
        .iter()
        .enumerate()
        .map(|(i, l)| MassAnnotation::new(format!("mass_{i}"), l.outline(), w, h))
        .collect::<Result<Vec<_>>>()?;

    MammogramCase::new(
        format!("phantom_{}", spec.seed),
        image,
        breast_mask,
        spec.pixel_spacing_um,
        masses,
    )
}

fn place_lesions(spec: &PhantomSpec, breast: &Breast, rng: &mut ChaCha8Rng) -> Result<Vec<Lesion>> {
    // an early mass can box out later ones; start over a few times
    let mut last_err = None;
    for _ in 0..PLACEMENT_RESTARTS {
        match try_place_lesions(spec, breast, rng) {
            Ok(placed) => return Ok(placed),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn try_place_lesions(spec: &PhantomSpec, breast: &Breast, rng: &mut ChaCha8Rng) -> Result<Vec<Lesion>> {
    let mut placed: Vec<Lesion> = Vec::with_capacity(spec.n_masses);
    let (lo, hi) = spec.mass_diameter_range_px;
    for k in 0..spec.n_masses {
        let diameter = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let aspect = rng.random_range(0.75..=1.0);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let n_rays = if spec.spiculation { rng.random_range(6..=12) } else { 0 };
        let ray_params: Vec<(f64, f64)> = (0..n_rays)
            .map(|_| (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.1)))
            .collect();

        let mut accepted = None;
        for _ in 0..PLACEMENT_RETRIES {
            let cx = rng.random_range(0.0..breast.semi_x);
            let cy = rng.random_range(breast.center_y - breast.semi_y..breast.center_y + breast.semi_y);
            let mut lesion = Lesion {
                cx,
                cy,
                semi_a: diameter / 2.0,
                semi_b: diameter / 2.0 * aspect,
                angle,
                rays: Vec::new(),
            };
            lesion.rays = ray_params
                .iter()
                .map(|&(phi, len)| {
                    let (x0, y0) = lesion.point_at(phi, 0.8);
                    let (x1, y1) = lesion.point_at(phi, 1.0 + len);
                    (x0, y0, x1, y1)
                })
                .collect();
            if fits(&lesion, breast, spec) && placed.iter().all(|o| apart(&lesion, o)) {
                accepted = Some(lesion);
                break;
            }
        }
        match accepted {
            Some(l) => placed.push(l),
            None => {
                return Err(Error::Phantom(format!(
                    "could not place mass {k} of diameter {diameter:.1}px after {PLACEMENT_RETRIES} attempts"
                )))
            }
        }
    }
    Ok(placed)
}

fn fits(l: &Lesion, breast: &Breast, spec: &PhantomSpec) -> bool {
    let inside = |x: f64, y: f64| {
        x >= 1.0 && y >= 1.0 && x <= spec.width as f64 - 1.0 && y <= spec.height as f64 - 1.0 && breast.rho2(x, y) <= 0.97
    };
    let rim_ok = (0..OUTLINE_VERTICES).all(|k| {
        let t = k as f64 * std::f64::consts::TAU / OUTLINE_VERTICES as f64;
        let (x, y) = l.point_at(t, 1.25);
        inside(x, y)
    });
    rim_ok && l.rays.iter().all(|&(_, _, x1, y1)| inside(x1, y1))
}

fn apart(a: &Lesion, b: &Lesion) -> bool {
    let d = ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt();
    d >= 1.3 * (a.semi_a + b.semi_a)
}

/// Specs of the standard seeded phantom suite: `n` cases of 512×512 with
/// 0–2 masses each. Case ids are `case_000`, `case_001`, ….
pub fn standard_suite_specs(n: usize, seed: u64) -> Vec<(String, PhantomSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spec = PhantomSpec {
                n_masses: rng.random_range(0..=2),
                mass_contrast: rng.random_range(0.18..0.32),
                spiculation: rng.random_bool(0.5),
                noise_level: rng.random_range(0.3..0.7),
                seed: rng.next_u64(),
                ..PhantomSpec::default()
            };
            (format!("case_{i:03}"), spec)
        })
        .collect()
}

/// Renders the standard suite (see [`standard_suite_specs`]).
pub fn standard_suite(n: usize, seed: u64) -> Result<Vec<MammogramCase>> {
    standard_suite_specs(n, seed)
        .into_iter()
        .map(|(id, spec)| {
            let mut case = generate_phantom(&spec)?;
            case.case_id = id;
            Ok(case)
        })
        .collect()
}
