//! Three-stage cascade of SVM ensembles.
//!
//! Stages 1 and 2 each split the negatives into `N ≈ |F| / (10·|T|)`
//! partitions and train one SVM per partition against all positives; a
//! sample passes a stage when the mean member decision is positive. Only
//! samples passing a stage feed the next one. Stage 3 is a single SVM whose
//! decision is mapped to a probability by a Platt sigmoid fitted on held-out
//! data.

mod platt;
mod svm;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use platt::{fit_platt, PlattParams};
pub use svm::{kernel_value, train_svm, train_svm_report, Gamma, Kernel, SmoReport, Standardizer, SvmModel, SvmParams};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::imagecore::io::{read_json, write_json};

pub const MODEL_FORMAT: &str = "masscade-cascade";
pub const MODEL_VERSION: u32 = 1;

/// Ensemble size for `n_negatives` against `n_positives`: the class ratio
/// over ten, rounded half up, at least 1.
pub fn compute_n(n_negatives: usize, n_positives: usize) -> Result<usize> {
    if n_positives == 0 {
        return Err(Error::Training("ensemble size needs at least one positive".into()));
    }
    // floor(F/(10T) + 1/2) in integers
    let n = (2 * n_negatives + 10 * n_positives) / (20 * n_positives);
    Ok(n.max(1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageModel {
    pub members: Vec<SvmModel>,
    pub n: usize,
}

impl StageModel {
    /// Mean member decision for each row, and whether it is strictly
    /// positive.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<bool>)> {
        let mut means = Vec::with_capacity(x.len());
        for row in x {
            let mut s = 0.0;
            for m in &self.members {
                s += m.decision(row)?;
            }
            means.push(s / self.members.len() as f64);
        }
        let pass = means.iter().map(|&m| m > 0.0).collect();
        Ok((means, pass))
    }
}

/// Splits `0..n` after a seeded shuffle into `parts` chunks whose sizes
/// differ by at most one; larger chunks come first.
pub fn partition_indices(n: usize, parts: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / parts, n % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

fn stack_rows(t: &[Vec<f64>], f: &[Vec<f64>], f_idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x: Vec<Vec<f64>> = t.to_vec();
    let mut y = vec![1.0; t.len()];
    for &i in f_idx {
        x.push(f[i].clone());
        y.push(-1.0);
    }
    (x, y)
}

/// One ensemble stage: members train in parallel, each on all of `t` and
/// one partition of `f`.
pub fn train_stage(t: &[Vec<f64>], f: &[Vec<f64>], params: &SvmParams, seed: u64) -> Result<StageModel> {
    if t.is_empty() || f.is_empty() {
        return Err(Error::Training("stage needs positives and negatives".into()));
    }
    let n = compute_n(f.len(), t.len())?;
    let parts = partition_indices(f.len(), n, seed);
    let members = parts
        .par_iter()
        .map(|p| {
            let (x, y) = stack_rows(t, f, p);
            train_svm(&x, &y, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StageModel { members, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub format: String,
    pub version: u32,
    pub feature_schema: FeatureSchema,
    /// SHA-256 of the configuration that produced the model.
    pub config_hash: String,
    pub params: SvmParams,
    pub stage1: StageModel,
    /// `None` when stage 1 already rejected every training negative.
    pub stage2: Option<StageModel>,
    pub final_svm: SvmModel,
    pub platt: PlattParams,
    pub summary: TrainingSummary,
}

/// Training-set sizes seen by each stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub positives: [usize; 3],
    pub negatives: [usize; 3],
    /// Validation examples reaching the final stage, and whether training
    /// decisions were pooled in because a class was missing there.
    pub platt_samples: usize,
    pub platt_pooled_training: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// 0 rejected by stage 1, 1 rejected by stage 2, 3 scored by the final
    /// SVM. A skipped stage counts as passed.
    pub survived_stage: u8,
    pub probability: f64,
    /// Final-stage decision value for scored samples.
    pub decision: Option<f64>,
}

/// Cascade inputs besides the training rows.
#[derive(Clone, Debug)]
pub struct CascadeSetup<'a> {
    pub params: &'a SvmParams,
    pub schema: FeatureSchema,
    pub config_hash: String,
    /// Held-out rows and `±1` labels for the sigmoid fit.
    pub validation: (&'a [Vec<f64>], &'a [f64]),
}

fn split_by(rows: &[Vec<f64>], keep: &[bool]) -> Vec<Vec<f64>> {
    rows.iter().zip(keep).filter(|(_, &k)| k).map(|(r, _)| r.clone()).collect()
}

pub fn train_cascade(t: &[Vec<f64>], f: &[Vec<f64>], setup: &CascadeSetup) -> Result<CascadeModel> {
    let params = setup.params;
    params.validate()?;
    if t.is_empty() {
        return Err(Error::CascadeStarved { stage: 1 });
    }
    if f.is_empty() {
        return Err(Error::Training("no negative examples".into()));
    }
    let width = setup.schema.len();
    if t.iter().chain(f).any(|r| r.len() != width) {
        return Err(Error::invalid(format!("training rows must have {width} features")));
    }
    let mut summary = TrainingSummary::default();
    summary.positives[0] = t.len();
    summary.negatives[0] = f.len();

    let stage1 = train_stage(t, f, params, params.seed)?;
    let t2 = split_by(t, &stage1.predict(t)?.1);
    let f2 = split_by(f, &stage1.predict(f)?.1);
    if t2.is_empty() {
        return Err(Error::CascadeStarved { stage: 2 });
    }
    summary.positives[1] = t2.len();
    summary.negatives[1] = f2.len();

    let (stage2, t3, f3) = if f2.is_empty() {
        // stage 1 rejected every negative: skip stage 2
        (None, t2, f.to_vec())
    } else {
        let stage2 = train_stage(&t2, &f2, params, params.seed.wrapping_add(1))?;
        let t3 = split_by(&t2, &stage2.predict(&t2)?.1);
        let f3 = split_by(&f2, &stage2.predict(&f2)?.1);
        if t3.is_empty() {
            return Err(Error::CascadeStarved { stage: 3 });
        }
        if f3.is_empty() {
            (Some(stage2), t3, f2)
        } else {
            (Some(stage2), t3, f3)
        }
    };
    summary.positives[2] = t3.len();
    summary.negatives[2] = f3.len();

    let (x3, y3) = stack_rows(&t3, &f3, &(0..f3.len()).collect::<Vec<_>>());
    let final_svm = train_svm(&x3, &y3, params)?;

    let mut model = CascadeModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        feature_schema: setup.schema.clone(),
        config_hash: setup.config_hash.clone(),
        params: params.clone(),
        stage1,
        stage2,
        final_svm,
        platt: PlattParams { a: -1.0, b: 0.0 },
        summary,
    };

    let (vx, vy) = setup.validation;
    if vx.len() != vy.len() {
        return Err(Error::invalid("validation rows and labels differ in length"));
    }
    let mut dec = Vec::new();
    let mut lab = Vec::new();
    for (row, &l) in vx.iter().zip(vy) {
        let p = model.score_row(row)?;
        if let Some(d) = p.decision {
            dec.push(d);
            lab.push(l);
        }
    }
    model.summary.platt_samples = dec.len();
    let one_class = !lab.contains(&1.0) || !lab.contains(&-1.0);
    let fitted = if one_class { None } else { Some(fit_platt(&dec, &lab)?) };
    model.platt = match fitted {
        // A ≥ 0 would rank low margins above high ones
        Some(p) if p.a < 0.0 => p,
        _ => {
            for (row, &l) in x3.iter().zip(&y3) {
                dec.push(model.final_svm.decision(row)?);
                lab.push(l);
            }
            model.summary.platt_pooled_training = true;
            fit_platt(&dec, &lab)?
        }
    };
    Ok(model)
}

impl CascadeModel {
    fn score_row(&self, x: &[f64]) -> Result<Prediction> {
        let rejected = |stage: u8| Prediction {
            survived_stage: stage,
            probability: 0.0,
            decision: None,
        };
        let x = [x.to_vec()];
        if !self.stage1.predict(&x)?.1[0] {
            return Ok(rejected(0));
        }
        if let Some(s2) = &self.stage2 {
            if !s2.predict(&x)?.1[0] {
                return Ok(rejected(1));
            }
        }
        let d = self.final_svm.decision(&x[0])?;
        Ok(Prediction {
            survived_stage: 3,
            probability: self.platt.probability(d),
            decision: Some(d),
        })
    }

    /// Gates `x` through stages 1 and 2 and calibrates survivors.
    pub fn score(&self, schema: &FeatureSchema, x: &[f64]) -> Result<Prediction> {
        self.check_schema(schema)?;
        self.score_row(x)
    }

    pub fn score_all(&self, schema: &FeatureSchema, rows: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        self.check_schema(schema)?;
        rows.par_iter().map(|r| self.score_row(r)).collect()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if &self.feature_schema != schema {
            return Err(Error::SchemaMismatch {
                expected: format!("v{} {:?}", self.feature_schema.version, self.feature_schema.names),
                actual: format!("v{} {:?}", schema.version, schema.names),
            });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Loads a model and checks its container format and feature schema.
    pub fn load(path: &Path, schema: &FeatureSchema) -> Result<Self> {
        let model: CascadeModel = read_json(path)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::data(
                path,
                format!("unsupported model container {} v{}", model.format, model.version),
            ));
        }
        model.check_schema(schema)?;
        Ok(model)
    }
}

/// Hex SHA-256 of `bytes`.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
