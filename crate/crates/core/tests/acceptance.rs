//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and fails if any criterion fails.
//!
//! cargo test --release --test acceptance

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use masscade::cascade::{compute_n, partition_indices, train_cascade, train_svm_report, CascadeSetup, Gamma, Kernel, SvmParams};

use masscade::eval::{froc, match_predictions, tpr_at_fpi, EvalCase, ScoredRegion};
use masscade::features::{glcm, glcm_features, histogram_features, FeatureConfig, FeatureSchema};
use masscade::imagecore::{standard_suite, GrayImage16, Region};
use masscade::morphosift::{default_bands, sift_multiscale, sup_opening};
use masscade::pipeline::{case_candidates, load_froc, main_with_args, synth, PipelineConfig};
use masscade::preprocess::{preprocess_case, PreprocessConfig};
use masscade::superpixel::{slic, CandidateLabel, SlicConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

// ---------------------------------------------------------------- morphology

/// Line offsets by an integer Bresenham trace from the origin to `(h, m)`,
/// mirrored through the origin.
fn bresenham_line(length: usize, angle: f64) -> Vec<(isize, isize)> {
    let h = ((length - 1) / 2) as i64;
    let (s, c) = angle.sin_cos();
    let x_major = c.abs() >= s.abs();
    let slope = if x_major { s / c } else { c / s };
    let m = (h as f64 * slope).round() as i64;
    let (dx, dy) = (h, m.abs());
    let mut half = vec![(0i64, 0i64)];
    let (mut y, mut err) = (0i64, 0i64);
    for x in 1..=dx {
        // step the minor axis once the accumulated error reaches one half
        err += 2 * dy;
        if err >= dx {
            y += 1;
            err -= 2 * dx;
        }
        half.push((x, y));
    }
    let mut out = Vec::new();
    for &(a, b) in &half {
        let b = if m < 0 { -b } else { b };
        for (u, v) in [(a, b), (-a, -b)] {
            let p = if x_major { (u as isize, v as isize) } else { (v as isize, u as isize) };
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

fn brute_opening(img: &[u16], w: usize, h: usize, se: &[(isize, isize)]) -> Vec<u16> {
    let at = |buf: &[u16], x: isize, y: isize| -> Option<u16> {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            None
        } else {
            Some(buf[y as usize * w + x as usize])
        }
    };
    let mut ero = vec![0u16; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            ero[y as usize * w + x as usize] = se.iter().filter_map(|&(dx, dy)| at(img, x + dx, y + dy)).min().unwrap();
        }
    }
    let mut dil = vec![0u16; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            // reflected SE; the line is symmetric
            dil[y as usize * w + x as usize] = se.iter().filter_map(|&(dx, dy)| at(&ero, x - dx, y - dy)).max().unwrap();
        }
    }
    dil
}

fn morphology_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 18;
    let mut checked = 0;
    for img_i in 0..200 {
        let w = rng.random_range(1..=32);
        let h = rng.random_range(1..=32);
        let levels = [4u16, 50, 65535][img_i % 3];
        let px: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..=levels)).collect();
        let image = GrayImage16::new(w, h, px.clone()).unwrap();
        for len in [3usize, 5, 9] {
            let got = sup_opening(&image, len, n).map_err(|e| e.to_string())?;
            let mut want = vec![0u16; w * h];
            for k in 0..n {
                let se = bresenham_line(len, k as f64 * std::f64::consts::PI / n as f64);
                for (a, b) in want.iter_mut().zip(brute_opening(&px, w, h, &se)) {
                    *a = (*a).max(b);
                }
            }
            if got.pixels() != &want[..] {
                return Err(format!("image {img_i} ({w}x{h}) length {len} differs from brute force"));
            }
            checked += 1;
        }
    }
    let t = start.elapsed();
    check(t < Duration::from_secs(60), format!("took {t:?}"))?;
    Ok(format!("{checked} (image, length) pairs bit-exact in {:.1?}", t))
}

// ---------------------------------------------------------------- sifting

fn band_selectivity() -> Outcome {
    let bands = default_bands();
    let size = 200;
    let mut notes = Vec::new();
    for (d, want) in [(15.0, 1usize), (25.0, 2), (50.0, 3), (90.0, 4)] {
        let c = size as f64 / 2.0;
        let inside = |x: usize, y: usize| ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt() <= d / 2.0;
        let img = GrayImage16::from_fn(size, size, |x, y| if inside(x, y) { 50000 } else { 12000 }).unwrap();
        let stack = sift_multiscale(&img, &bands, 18).map_err(|e| e.to_string())?;
        let energy: Vec<f64> = stack
            .images
            .iter()
            .map(|im| {
                let mut s = 0.0;
                for y in 0..size {
                    for x in 0..size {
                        if inside(x, y) {
                            s += im.get(x, y) as f64;
                        }
                    }
                }
                s
            })
            .collect();
        let total: f64 = energy.iter().sum();
        let share = if total > 0.0 { energy[want - 1] / total } else { 0.0 };
        check(share >= 0.70, format!("disk {d}: band {want} holds {:.1}%", 100.0 * share))?;
        notes.push(format!("d{d}→b{want} {:.0}%", 100.0 * share));
    }
    Ok(notes.join(", "))
}

// ---------------------------------------------------------------- SLIC

fn four_connected(labels: &[u32], w: usize, h: usize) -> bool {
    let mut seen = vec![false; labels.len()];
    let mut label_seen = HashSet::new();
    for s in 0..labels.len() {
        if seen[s] {
            continue;
        }
        if !label_seen.insert(labels[s]) {
            return false;
        }
        let mut q = VecDeque::from([s]);
        seen[s] = true;
        while let Some(i) = q.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut nb = Vec::with_capacity(4);
            if x > 0 { nb.push(i - 1); }
            if x + 1 < w { nb.push(i + 1); }
            if y > 0 { nb.push(i - w); }
            if y + 1 < h { nb.push(i + w); }
            for j in nb {
                if !seen[j] && labels[j] == labels[i] {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
    }
    true
}

fn slic_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..50 {
        let w = rng.random_range(8..=72);
        let h = rng.random_range(8..=72);
        let k = rng.random_range(2..=40).min(w * h / 4);
        let px: Vec<u16> = (0..w * h).map(|_| rng.random()).collect();
        let img = GrayImage16::new(w, h, px).unwrap();
        let a = slic(&img, k, 10.0, 1.0, 10).map_err(|e| e.to_string())?;
        let b = slic(&img, k, 10.0, 1.0, 10).map_err(|e| e.to_string())?;
        check(a == b, format!("image {i}: not deterministic"))?;
        check(a.labels.len() == w * h, format!("image {i}: label count"))?;
        let distinct: HashSet<u32> = a.labels.iter().copied().collect();
        check(
            distinct.len() == a.k_actual && distinct.iter().all(|&l| (l as usize) < a.k_actual),
            format!("image {i}: labels are not 0..k_actual"),
        )?;
        check(four_connected(&a.labels, w, h), format!("image {i}: a label is not 4-connected"))?;
    }
    let mut worst: f64 = 0.0;
    for (w, h) in [(64usize, 64usize), (128, 128), (96, 48), (200, 120), (33, 77)] {
        for k in [9usize, 16, 25, 50, 100] {
            let img = GrayImage16::filled(w, h, 30000).unwrap();
            let m = slic(&img, k, 10.0, 5.0, 10).map_err(|e| e.to_string())?;
            let dev = (m.k_actual as f64 - k as f64).abs() / k as f64;
            check(dev <= 0.30, format!("constant {w}x{h}, k={k}: got {} clusters", m.k_actual))?;
            worst = worst.max(dev);
        }
    }
    Ok(format!("50 random images ok; worst constant-image deviation {:.1}%", 100.0 * worst))
}

// ---------------------------------------------------------------- features

fn oracle_histogram(values: &[u16]) -> [f64; 6] {
    let n = values.len() as f64;
    let xs: Vec<f64> = values.iter().map(|&v| v as f64 / 65535.0).collect();
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let mut bins: HashMap<u16, usize> = HashMap::new();
    for &v in values {
        *bins.entry(v / 1024).or_default() += 1;
    }
    let uniformity = bins.values().map(|&c| (c as f64 / n).powi(2)).sum();
    let entropy = -bins.values().map(|&c| (c as f64 / n) * (c as f64 / n).log2()).sum::<f64>();
    let (skew, kurt) = if var > 0.0 { (m3 / var.powf(1.5), m4 / var.powi(2) - 3.0) } else { (0.0, 0.0) };
    [mean, var / (1.0 + var), uniformity, entropy, skew, kurt]
}

/// Pair counts per angle from a pixel set, averaged over angles that have
/// pairs, then the seven texture statistics.
fn oracle_glcm(region: &Region, image: &GrayImage16, levels: usize) -> [f64; 7] {
    let pts: HashSet<(i64, i64)> = region.coords().map(|(x, y)| (x as i64, y as i64)).collect();
    let vals: Vec<u16> = region.coords().map(|(x, y)| image.get(x, y)).collect();
    let lo = *vals.iter().min().unwrap() as u64;
    let hi = *vals.iter().max().unwrap() as u64;
    let q = |v: u16| ((v as u64 - lo) * levels as u64 / (hi - lo + 1)) as usize;
    let mut p: HashMap<(usize, usize), f64> = HashMap::new();
    let mut used = 0;
    for (dx, dy) in [(1i64, 0i64), (1, -1), (0, -1), (-1, -1)] {
        let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
        let mut total = 0.0;
        for &(x, y) in &pts {
            if pts.contains(&(x + dx, y + dy)) {
                let a = q(image.get(x as usize, y as usize));
                let b = q(image.get((x + dx) as usize, (y + dy) as usize));
                *counts.entry((a, b)).or_default() += 1.0;
                *counts.entry((b, a)).or_default() += 1.0;
                total += 2.0;
            }
        }
        if total > 0.0 {
            used += 1;
            for (key, c) in counts {
                *p.entry(key).or_default() += c / total;
            }
        }
    }
    if used == 0 {
        let u = 1.0 / (levels * levels) as f64;
        for i in 0..levels {
            for j in 0..levels {
                p.insert((i, j), u);
            }
        }
    } else {
        p.values_mut().for_each(|v| *v /= used as f64);
    }
    let mu_i: f64 = p.iter().map(|(&(i, _), v)| i as f64 * v).sum();
    let mu_j: f64 = p.iter().map(|(&(_, j), v)| j as f64 * v).sum();
    let var_i: f64 = p.iter().map(|(&(i, _), v)| (i as f64 - mu_i).powi(2) * v).sum();
    let var_j: f64 = p.iter().map(|(&(_, j), v)| (j as f64 - mu_j).powi(2) * v).sum();
    let cov: f64 = p.iter().map(|(&(i, j), v)| (i as f64 - mu_i) * (j as f64 - mu_j) * v).sum();
    let contrast = p.iter().map(|(&(i, j), v)| (i as f64 - j as f64).powi(2) * v).sum();
    let dissim = p.iter().map(|(&(i, j), v)| (i as f64 - j as f64).abs() * v).sum();
    let homog = p.iter().map(|(&(i, j), v)| v / (1.0 + (i as f64 - j as f64).abs())).sum();
    let asm: f64 = p.values().map(|v| v * v).sum();
    let corr = if var_i > 0.0 && var_j > 0.0 { cov / (var_i * var_j).sqrt() } else { 0.0 };
    [contrast, corr, asm, asm.sqrt(), dissim, homog, var_i]
}

fn feature_oracles() -> Outcome {
    let cases = standard_suite(20, 42).map_err(|e| e.to_string())?;
    let cfg = FeatureConfig::default();
    let bands = default_bands();
    let mut n_cands = 0;
    let mut worst: f64 = 0.0;
    for case in &cases {
        let prep = preprocess_case(case, &PreprocessConfig::default()).map_err(|e| e.to_string())?;
        let stack = sift_multiscale(&prep.image, &bands, 18).map_err(|e| e.to_string())?;
        let recs = case_candidates(&prep, &stack, &SlicConfig::default()).map_err(|e| e.to_string())?;
        for r in &recs {
            let c = r.to_candidate().map_err(|e| e.to_string())?;
            let region = &c.region;
            let vals: Vec<u16> = region.coords().map(|(x, y)| prep.image.get(x, y)).collect();
            let hist = histogram_features(region, &prep.image).map_err(|e| e.to_string())?;
            let native = &stack.images[c.scale_index - 1];
            let tex = glcm_features(&glcm(region, native, cfg.glcm_levels, cfg.glcm_distance).map_err(|e| e.to_string())?);
            let want_h = oracle_histogram(&vals);
            let want_t = oracle_glcm(region, native, cfg.glcm_levels);
            for (g, w) in hist.iter().chain(&tex).zip(want_h.iter().chain(&want_t)) {
                let err = (g - w).abs();
                worst = worst.max(err);
                check(err <= 1e-9, format!("{} candidate {}: {g} vs oracle {w}", case.case_id, r.index))?;
            }
            check(tex[3] * tex[3] == tex[2], format!("{} candidate {}: energy² ≠ ASM", case.case_id, r.index))?;
            n_cands += 1;
        }
    }
    Ok(format!("{n_cands} candidates, worst |Δ| {worst:.1e}"))
}

// ---------------------------------------------------------------- SMO

/// Projection of `v` onto `{0 ≤ a ≤ C, yᵀa = 0}` by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lam: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - lam * yi).clamp(0.0, c)).collect() };
    let g = |lam: f64| -> f64 { at(lam).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let (mut lo, mut hi) = (-1e6f64, 1e6f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 { lo = mid } else { hi = mid }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient on `min ½aᵀQa − Σa`.
fn qp_oracle(q: &[Vec<f64>], y: &[f64], c: f64) -> Vec<f64> {
    let n = y.len();
    // Lipschitz bound: largest row sum of |Q|
    let lip = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(1e-12, f64::max);
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| q[i].iter().zip(a).map(|(qij, aj)| qij * aj).sum::<f64>() - 1.0).collect() };
    let obj = |a: &[f64]| -> f64 {
        let g = grad(a);
        0.5 * a.iter().zip(&g).map(|(ai, gi)| ai * (gi + 1.0)).sum::<f64>() - a.iter().sum::<f64>()
    };
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut best = obj(&a);
    for _ in 0..60_000 {
        let g = grad(&z);
        let step: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - gi / lip).collect();
        let next = project(&step, y, c);
        let f = obj(&next);
        if f > best + 1e-15 {
            // restart momentum when the objective goes up
            z = a.clone();
            t = 1.0;
            continue;
        }
        best = f;
        let moved = next.iter().zip(&a).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        if moved < 1e-14 {
            return next;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = next.iter().zip(&a).map(|(ni, ai)| ni + (t - 1.0) / t_next * (ni - ai)).collect();
        a = next;
        t = t_next;
    }
    a
}

/// Interval of biases consistent with the KKT conditions of `alpha`.
fn bias_interval(alpha: &[f64], y: &[f64], kpart: &[f64], c: f64) -> (f64, f64) {
    let eps = 1e-7 * c.max(1.0);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..y.len() {
        let r = y[i] - kpart[i];
        let free = alpha[i] > eps && alpha[i] < c - eps;
        if free {
            lo = lo.max(r);
            hi = hi.min(r);
        } else {
            // at 0: y·f ≥ 1; at C: y·f ≤ 1
            let at_zero = alpha[i] <= eps;
            if at_zero == (y[i] > 0.0) { lo = lo.max(r) } else { hi = hi.min(r) }
        }
    }
    (lo, hi)
}

fn smo_vs_qp() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_obj, mut worst_dec): (f64, f64) = (0.0, 0.0);
    let mut ambiguous = 0;
    for ds in 0..100 {
        let n = rng.random_range(2..=12);
        let kernel = if ds % 2 == 0 { Kernel::Linear } else { Kernel::Rbf };
        let c = [0.1, 1.0, 10.0][ds % 3];
        let gamma = rng.random_range(0.2..2.0);
        let mut x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let mut y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        if ds % 5 == 0 {
            // shifted classes: mostly separable
            for (r, l) in x.iter_mut().zip(&y) {
                r[0] += 1.5 * l;
            }
        }
        if ds % 7 == 0 {
            y.swap(0, n - 1);
        }
        // solved to a tight KKT gap so the comparison measures the optimum, not the stopping rule
        let params = SvmParams { kernel, c, gamma: Gamma::Value(gamma), tolerance: 1e-6, ..SvmParams::default() };
        let (model, report) = train_svm_report(&x, &y, &params).map_err(|e| e.to_string())?;

        // independent z-score and kernel
        let d = 2;
        let mean: Vec<f64> = (0..d).map(|k| x.iter().map(|r| r[k]).sum::<f64>() / n as f64).collect();
        let sd: Vec<f64> = (0..d)
            .map(|k| {
                let s = (x.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n as f64).sqrt();
                if s > 0.0 { s } else { 1.0 }
            })
            .collect();
        let z = |r: &[f64]| -> Vec<f64> { (0..d).map(|k| (r[k] - mean[k]) / sd[k]).collect() };
        let kern = |a: &[f64], b: &[f64]| -> f64 {
            match kernel {
                Kernel::Linear => a[0] * b[0] + a[1] * b[1],
                Kernel::Rbf => (-gamma * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))).exp(),
            }
        };
        let zx: Vec<Vec<f64>> = x.iter().map(|r| z(r)).collect();
        let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * kern(&zx[i], &zx[j])).collect()).collect();
        let alpha = qp_oracle(&q, &y, c);
        let dual = |a: &[f64]| -> f64 {
            a.iter().sum::<f64>()
                - 0.5 * (0..n).map(|i| (0..n).map(|j| a[i] * a[j] * q[i][j]).sum::<f64>()).sum::<f64>()
        };
        let oracle_obj = dual(&alpha);
        let obj_err = (report.dual_objective - oracle_obj).abs();
        check(obj_err <= 1e-3, format!("dataset {ds}: dual {} vs oracle {oracle_obj}", report.dual_objective))?;
        check((dual(&report.alphas) - report.dual_objective).abs() <= 1e-9, format!("dataset {ds}: reported dual inconsistent"))?;
        worst_obj = worst_obj.max(obj_err);

        let kpart = |a: &[f64], p: &[f64]| -> f64 { (0..n).map(|i| a[i] * y[i] * kern(&zx[i], p)).sum() };
        let train_k: Vec<f64> = zx.iter().map(|p| kpart(&alpha, p)).collect();
        let (blo, bhi) = bias_interval(&alpha, &y, &train_k, c);
        let b_oracle = if blo.is_finite() && bhi.is_finite() { 0.5 * (blo + bhi) } else if blo.is_finite() { blo } else { bhi };
        let unique_bias = bhi - blo <= 1e-3;
        if !unique_bias {
            ambiguous += 1;
        }
        let mut probes: Vec<Vec<f64>> = x.clone();
        for _ in 0..10 {
            probes.push(vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        }
        for p in &probes {
            let got = model.decision(p).map_err(|e| e.to_string())?;
            let k_or = kpart(&alpha, &z(p));
            let err = if unique_bias {
                (got - (k_or + b_oracle)).abs()
            } else {
                // bias not pinned by the optimum: compare the kernel part and
                // require the bias inside the optimal interval
                let k_got = got - model.bias;
                let outside = (blo - model.bias).max(model.bias - bhi).max(0.0);
                (k_got - k_or).abs().max(outside)
            };
            check(err <= 1e-3, format!("dataset {ds}: decision {got} differs from oracle by {err}"))?;
            worst_dec = worst_dec.max(err);
        }
    }
    Ok(format!("worst |Δdual| {worst_obj:.1e}, worst |Δdecision| {worst_dec:.1e}, {ambiguous} datasets with a non-unique bias"))
}

// ---------------------------------------------------------------- cascade

fn cascade_arithmetic() -> Outcome {
    // (|F|, |T|, N) by "F:T ratio over ten", rounded, at least 1
    let table = [
        (5000, 50, 10),
        (50, 50, 1),
        (1000, 10, 10),
        (878, 82, 1),
        (1500, 100, 2),
        (1400, 100, 1),
        (25, 1, 3),
        (0, 7, 1),
        (3000, 20, 15),
        (999, 1, 100),
    ];
    for (f, t, want) in table {
        let got = compute_n(f, t).map_err(|e| e.to_string())?;
        check(got == want, format!("compute_n({f}, {t}) = {got}, expected {want}"))?;
    }
    check(compute_n(10, 0).is_err(), "compute_n with no positives must fail")?;

    for (n, parts, seed) in [(1001usize, 10usize, 1u64), (7, 3, 2), (100, 7, 3), (5, 5, 4), (13, 1, 5)] {
        let p = partition_indices(n, parts, seed);
        let sizes: Vec<usize> = p.iter().map(Vec::len).collect();
        let (mx, mn) = (*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap());
        check(mx - mn <= 1, format!("partition of {n} into {parts}: sizes {sizes:?}"))?;
        let mut all: Vec<usize> = p.into_iter().flatten().collect();
        all.sort();
        check(all == (0..n).collect::<Vec<_>>(), format!("partition of {n} is not a permutation"))?;
    }

    // 30-sample fixture: 8 positives, 22 negatives on a line, with
    // negatives interleaved near the positive cluster
    let schema = FeatureSchema { version: 1, names: vec!["u".into(), "v".into()] };
    let t: Vec<Vec<f64>> = (0..8).map(|i| vec![2.0 + 0.25 * i as f64, 0.1 * (i % 3) as f64]).collect();
    let mut f: Vec<Vec<f64>> = (0..16).map(|i| vec![-3.0 + 0.3 * i as f64, 0.1 * (i % 4) as f64]).collect();
    f.extend((0..6).map(|i| vec![2.1 + 0.3 * i as f64, 0.05 + 0.1 * (i % 2) as f64]));
    let params = SvmParams { c: 10.0, ..SvmParams::default() };
    let (vx, vy) = (t.iter().chain(&f).cloned().collect::<Vec<_>>(), [vec![1.0; 8], vec![-1.0; 22]].concat());
    let setup = CascadeSetup { params: &params, schema: schema.clone(), config_hash: String::new(), validation: (&vx, &vy) };
    let model = train_cascade(&t, &f, &setup).map_err(|e| e.to_string())?;
    let keep = |rows: &[Vec<f64>], pass: &[bool]| -> Vec<Vec<f64>> {
        rows.iter().zip(pass).filter(|(_, &p)| p).map(|(r, _)| r.clone()).collect()
    };
    let t2 = keep(&t, &model.stage1.predict(&t).map_err(|e| e.to_string())?.1);
    let f2 = keep(&f, &model.stage1.predict(&f).map_err(|e| e.to_string())?.1);
    let s = &model.summary;
    check(s.positives[0] == 8 && s.negatives[0] == 22, "stage 1 inputs")?;
    check(s.positives[1] == t2.len() && s.negatives[1] == f2.len(), format!("stage 2 inputs {:?}/{:?} vs TP {} FP {}", s.positives, s.negatives, t2.len(), f2.len()))?;
    match &model.stage2 {
        Some(st2) => {
            let t3 = keep(&t2, &st2.predict(&t2).map_err(|e| e.to_string())?.1);
            let f3 = keep(&f2, &st2.predict(&f2).map_err(|e| e.to_string())?.1);
            check(s.positives[2] == t3.len(), "final-stage positives are stage-2 TP")?;
            let want_f = if f3.is_empty() { f2.len() } else { f3.len() };
            check(s.negatives[2] == want_f, "final-stage negatives are stage-2 FP")?;
            check(f3.len() <= f2.len() && f2.len() <= f.len(), "negatives non-increasing")?;
        }
        None => check(f2.is_empty() && s.negatives[2] == 22, "skipped stage 2 only when F₂ is empty")?,
    }
    for row in t.iter().chain(&f) {
        let p = model.score(&schema, row).map_err(|e| e.to_string())?;
        let s1 = model.stage1.predict(std::slice::from_ref(row)).map_err(|e| e.to_string())?.1[0];
        if !s1 {
            check(p.survived_stage == 0 && p.probability == 0.0, "stage-1 reject must score 0")?;
        }
        if p.survived_stage < 3 {
            check(p.probability == 0.0, "gated sample with non-zero probability")?;
        }
    }
    Ok(format!("10 N values, 5 partitions, fixture TP/FP {:?}/{:?}", s.positives, s.negatives))
}

// ---------------------------------------------------------------- candidates

fn candidate_calibration() -> Outcome {
    let cases = standard_suite(50, 42).map_err(|e| e.to_string())?;
    check(cases.iter().all(|c| c.image.dims() == (512, 512) && c.masses.len() <= 2), "suite shape")?;
    let bands = default_bands();
    let cfg = SlicConfig::default();
    let (mut masses, mut found) = (0usize, 0usize);
    let (mut neg_all, mut neg_kept, mut pos_all, mut pos_lost) = (0usize, 0usize, 0usize, 0usize);
    for case in &cases {
        let prep = preprocess_case(case, &PreprocessConfig::default()).map_err(|e| e.to_string())?;
        let stack = sift_multiscale(&prep.image, &bands, 18).map_err(|e| e.to_string())?;
        let recs = case_candidates(&prep, &stack, &cfg).map_err(|e| e.to_string())?;
        for m in &prep.masses {
            masses += 1;
            let hit = recs.iter().any(|r| {
                r.label == CandidateLabel::Positive
                    && r.matched_mass_id.as_deref() == Some(m.id.as_str())
                    && r.best_dice.unwrap_or(0.0) > 0.45
            });
            found += usize::from(hit);
        }
        for r in &recs {
            match r.label {
                CandidateLabel::Positive => {
                    pos_all += 1;
                    pos_lost += usize::from(!r.kept);
                }
                _ => {
                    neg_all += 1;
                    neg_kept += usize::from(r.kept);
                }
            }
        }
    }
    let rate = found as f64 / masses as f64;
    let reduction = neg_all as f64 / neg_kept.max(1) as f64;
    let msg = format!(
        "{found}/{masses} masses ({:.1}%) with a Dice > 0.45 positive; negatives {neg_all} → {neg_kept} ({reduction:.2}×); {pos_lost}/{pos_all} positives lost",
        100.0 * rate
    );
    check(rate >= 0.95 && reduction >= 5.0 && pos_lost == 0, msg.clone())?;
    Ok(msg)
}

// ---------------------------------------------------------------- end to end

fn phantom_config() -> Result<PipelineConfig, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/phantom.json");
    PipelineConfig::load(&path).map_err(|e| e.to_string())
}

fn end_to_end(root: &Path) -> Outcome {
    let cfg = phantom_config()?;
    let start = Instant::now();
    let data = root.join("data");
    synth(&cfg, &data).map_err(|e| e.to_string())?;
    let code = main_with_args([
        "masscade",
        "run",
        "--config",
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/phantom.json").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        root.join("run_a").to_str().unwrap(),
        "--jobs",
        "1",
    ]);
    check(code == 0, format!("run exited with {code}"))?;
    let elapsed = start.elapsed();
    let points = load_froc(&root.join("run_a")).map_err(|e| e.to_string())?;
    for w in points.windows(2) {
        check(
            w[0].threshold < w[1].threshold && w[0].tpr >= w[1].tpr && w[0].fpi >= w[1].fpi,
            format!("FROC not monotone between θ={} and θ={}", w[0].threshold, w[1].threshold),
        )?;
    }
    let tpr = tpr_at_fpi(&points, 2.0);
    let msg = format!(
        "TPR {tpr:.3} at FPI ≤ 2.0 (TPR {:.3} at FPI ≤ 1.0), {} thresholds, {:.1?}",
        tpr_at_fpi(&points, 1.0),
        points.len(),
        elapsed
    );
    check(tpr >= 0.80 && elapsed < Duration::from_secs(15 * 60), msg.clone())?;
    Ok(msg)
}

fn evaluation_fixtures() -> Outcome {
    let mass = Region::from_coords(40, 40, (0..10).flat_map(|y| (0..10).map(move |x| (x + 5, y + 5)))).unwrap();
    let d19 = {
        // Dice 0.19 exactly: |A∩B| = 19, |A| = 100, |B| = 100 → 38/200
        let inter: Vec<(usize, usize)> = (0..19).map(|i| (5 + i % 10, 5 + i / 10)).collect();
        let outside: Vec<(usize, usize)> = (0..81).map(|i| (20 + i % 10, 20 + i / 10)).collect();
        Region::from_coords(40, 40, inter.into_iter().chain(outside)).unwrap()
    };
    let d20 = {
        let inter: Vec<(usize, usize)> = (0..20).map(|i| (5 + i % 10, 5 + i / 10)).collect();
        let outside: Vec<(usize, usize)> = (0..80).map(|i| (20 + i % 10, 20 + i / 10)).collect();
        Region::from_coords(40, 40, inter.into_iter().chain(outside)).unwrap()
    };
    let dice19 = d19.dice(&mass).unwrap();
    let dice20 = d20.dice(&mass).unwrap();
    check(dice19 == 0.19 && dice20 == 0.2, format!("fixture Dice {dice19} / {dice20}"))?;
    let one = |r: &Region| vec![ScoredRegion { region: r.clone(), probability: 0.9 }];
    let m19 = match_predictions(&one(&d19), std::slice::from_ref(&mass), 0.20, 0.5).map_err(|e| e.to_string())?;
    check((m19.tp, m19.fp, m19.fn_) == (0, 1, 1), format!("Dice 0.19 gave {:?}", (m19.tp, m19.fp, m19.fn_)))?;
    let m20 = match_predictions(&one(&d20), std::slice::from_ref(&mass), 0.20, 0.5).map_err(|e| e.to_string())?;
    check((m20.tp, m20.fp, m20.fn_) == (1, 0, 0), format!("Dice 0.20 gave {:?}", (m20.tp, m20.fp, m20.fn_)))?;

    // FROC fixture: case A mass with a p=0.9 Dice-0.5 prediction and a
    // p=0.6 miss; case B mass with a p=0.4 Dice-0.3 prediction
    let sq = |x0: usize, y0: usize, w: usize, h: usize| {
        Region::from_coords(60, 60, (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x, y)))).unwrap()
    };
    let mass_a = sq(0, 0, 10, 10);
    let pred_a = sq(5, 0, 10, 10); // overlap 50 → Dice 100/200 = 0.5
    let miss_a = sq(40, 40, 5, 5);
    let mass_b = sq(0, 0, 10, 10);
    let pred_b = {
        // overlap 30, |B| = 100 → Dice 0.3
        let inter: Vec<(usize, usize)> = (0..30).map(|i| (i % 10, i / 10)).collect();
        let outside: Vec<(usize, usize)> = (0..70).map(|i| (30 + i % 10, 30 + i / 10)).collect();
        Region::from_coords(60, 60, inter.into_iter().chain(outside)).unwrap()
    };
    check(pred_a.dice(&mass_a).unwrap() == 0.5 && pred_b.dice(&mass_b).unwrap() == 0.3, "FROC fixture geometry")?;
    let cases = vec![
        EvalCase {
            case_id: "A".into(),
            masses: vec![mass_a],
            predictions: vec![
                ScoredRegion { region: pred_a, probability: 0.9 },
                ScoredRegion { region: miss_a, probability: 0.6 },
            ],
        },
        EvalCase {
            case_id: "B".into(),
            masses: vec![mass_b],
            predictions: vec![ScoredRegion { region: pred_b, probability: 0.4 }],
        },
    ];
    let pts = froc(&cases, Some(&[0.5]), 0.20, 0.5).map_err(|e| e.to_string())?;
    check(pts.len() == 1 && pts[0].tpr == 0.5 && pts[0].fpi == 0.5, format!("θ=0.5 gave {:?}", pts))?;
    Ok("Dice 0.19 → (0,1,1), 0.20 → (1,0,0); FROC θ=0.5 → (0.5, 0.5)".into())
}

fn determinism(root: &Path) -> Outcome {
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/phantom.json");
    let data = root.join("data");
    if !data.exists() {
        synth(&phantom_config()?, &data).map_err(|e| e.to_string())?;
    }
    let run = |name: &str, jobs: &str| -> Result<(), String> {
        let out = root.join(name);
        if out.join("froc/froc.csv").exists() {
            return Ok(());
        }
        let code = main_with_args([
            "masscade",
            "run",
            "--config",
            cfg_path.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        check(code == 0, format!("{name} exited with {code}"))
    };
    run("run_a", "1")?;
    run("run_b", "3")?;
    let a = root.join("run_a");
    let b = root.join("run_b");
    let mut files = vec!["froc/froc.csv".to_string()];
    let folds = std::fs::read_dir(a.join("train")).map_err(|e| e.to_string())?;
    for e in folds {
        let e = e.map_err(|e| e.to_string())?;
        if e.path().join("model.json").exists() {
            files.push(format!("train/{}/model.json", e.file_name().to_string_lossy()));
        }
    }
    files.sort();
    for f in &files {
        let x = std::fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(x == y, format!("{f} differs between --jobs 1 and --jobs 3"))?;
    }
    Ok(format!("{} files byte-identical across --jobs 1 / 3", files.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("morphology oracle", Box::new(morphology_oracle)),
        ("sifting band selectivity", Box::new(band_selectivity)),
        ("SLIC invariants", Box::new(slic_invariants)),
        ("feature oracles", Box::new(feature_oracles)),
        ("SMO vs brute-force QP", Box::new(smo_vs_qp)),
        ("cascade arithmetic", Box::new(cascade_arithmetic)),
        ("candidate-stage calibration", Box::new(candidate_calibration)),
        ("end-to-end phantom FROC", Box::new({
            let r = root.clone();
            move || end_to_end(&r)
        })),
        ("evaluation fixtures", Box::new(evaluation_fixtures)),
        ("determinism", Box::new({
            let r = root.clone();
            move || determinism(&r)
        })),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed();
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg} [{t:.1?}]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg} [{t:.1?}]");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
