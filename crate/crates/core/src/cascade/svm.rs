//! Soft-margin SVM trained by SMO with second-order working-set selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf,
}

/// RBF width: a fixed value or `"scale"`, meaning
/// `1 / (n_features · variance)` of the standardized training matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gamma {
    Scale,
    Value(f64),
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Scale => s.serialize_str("scale"),
            Gamma::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(s) if s == "scale" => Ok(Gamma::Scale),
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Gamma::Value)
                .ok_or_else(|| serde::de::Error::custom("gamma is not a finite number")),
            other => Err(serde::de::Error::custom(format!(
                "gamma must be \"scale\" or a number, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    pub kernel: Kernel,
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: Gamma,
    /// Stop when the maximal KKT violation gap falls to this value.
    pub tolerance: f64,
    /// Iteration budget, in units of the training-set size.
    pub max_passes: usize,
    /// Base seed for partition shuffles.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf,
            c: 1.0,
            gamma: Gamma::Scale,
            tolerance: 1e-3,
            max_passes: 200,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if let Gamma::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be positive, got {g}")));
            }
        }
        if self.max_passes == 0 {
            return Err(Error::Config("max_passes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature z-score captured from a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; a constant feature gets std 1.
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, |r| r.len());
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in x {
            for k in 0..d {
                var[k] += (r[k] - mean[k]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    /// Resolved RBF width (unused for the linear kernel).
    pub gamma: f64,
    pub standardizer: Standardizer,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `αᵢ·yᵢ` per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
}

/// Solver details kept alongside a model, mainly for verification.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoReport {
    /// Dual variables for every training example, in input order.
    pub alphas: Vec<f64>,
    /// `Σα − ½ ΣΣ αᵢαⱼyᵢyⱼK(xᵢ, xⱼ)`.
    pub dual_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final maximal KKT violation gap.
    pub gap: f64,
}

pub fn kernel_value(kernel: Kernel, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match kernel {
        Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        Kernel::Rbf => (-gamma * a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()).exp(),
    }
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    /// `Σ αᵢyᵢ K(xᵢ, z(x)) + b` with `z` this model's standardization.
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: (self.n_features(), 1),
                actual: (x.len(), 1),
            });
        }
        let z = self.standardizer.apply(x);
        Ok(self
            .support_vectors
            .iter()
            .zip(&self.coef)
            .map(|(sv, c)| c * kernel_value(self.kernel, self.gamma, sv, &z))
            .sum::<f64>()
            + self.bias)
    }
}

/// Trains on rows `x` with labels `y ∈ {−1, +1}`.
pub fn train_svm(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    train_svm_report(x, y, params).map(|(m, _)| m)
}

pub fn train_svm_report(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<(SvmModel, SmoReport)> {
    params.validate()?;
    let n = x.len();
    if y.len() != n {
        return Err(Error::invalid(format!("{n} rows but {} labels", y.len())));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::Training("training set needs both classes".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("rows have different lengths"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features must be finite"));
    }

    let standardizer = Standardizer::fit(x);
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
    let gamma = match params.gamma {
        Gamma::Value(g) => g,
        Gamma::Scale => {
            let cnt = (n * d) as f64;
            let mean = z.iter().flatten().sum::<f64>() / cnt;
            let var = z.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / cnt;
            if var > 0.0 && d > 0 {
                1.0 / (d as f64 * var)
            } else {
                1.0 / d.max(1) as f64
            }
        }
    };

    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel_value(params.kernel, gamma, &z[i], &z[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let sol = smo(&k, y, params.c, params.tolerance, params.max_passes.saturating_mul(n).max(1));

    let mut support_vectors = Vec::new();
    let mut coef = Vec::new();
    for i in 0..n {
        if sol.alphas[i] > 0.0 {
            support_vectors.push(z[i].clone());
            coef.push(sol.alphas[i] * y[i]);
        }
    }
    let model = SvmModel {
        kernel: params.kernel,
        gamma,
        standardizer,
        support_vectors,
        coef,
        bias: sol.bias,
    };
    let report = SmoReport {
        alphas: sol.alphas,
        dual_objective: sol.dual_objective,
        iterations: sol.iterations,
        converged: sol.converged,
        gap: sol.gap,
    };
    Ok((model, report))
}

struct Solution {
    alphas: Vec<f64>,
    bias: f64,
    dual_objective: f64,
    iterations: usize,
    converged: bool,
    gap: f64,
}

const TAU: f64 = 1e-12;

/// Minimizes `½αᵀQα − Σα` with `Q = yyᵀ∘K`, `0 ≤ α ≤ C`, `yᵀα = 0`.
fn smo(k: &[f64], y: &[f64], c: f64, tol: f64, max_iter: usize) -> Solution {
    let n = y.len();
    let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iterations = 0;
    let mut converged = false;
    let mut gap = f64::INFINITY;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j_sel = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i_sel != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = k[i_sel * n + i_sel] + k[t * n + t] - 2.0 * k[i_sel * n + t];
                if a <= 0.0 {
                    a = TAU;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = t;
                }
            }
        }
        gap = gmax - gmin;
        if i_sel == usize::MAX || j_sel == usize::MAX || gap <= tol {
            converged = true;
            break;
        }
        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
        iterations += 1;
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };

    // f(α) = ½αᵀQα − Σα = ½ Σ αᵢ(Gᵢ − 1)
    let primal_form: f64 = alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>() / 2.0;
    Solution {
        alphas: alpha,
        bias: -rho,
        dual_objective: -primal_form,
        iterations,
        converged,
        gap,
    }
}
