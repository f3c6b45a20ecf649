//! Staged batch driver and the `masscade` command line.
//!
//! Every stage reads the artifacts of its predecessors from an input root
//! and writes its own under `<out>/<stage>/`:
//!
//! ```text
//! preprocess/<case>/{clahe.png, mask.png, masses.json, meta.json}
//! sift/<case>/scale{1..n}.png
//! candidates/<case>.jsonl          every superpixel, with a `kept` flag
//! features/features.csv            kept candidates, case then index order
//! train/folds.json, train/fold_XX/model.json
//! predict/predictions.jsonl
//! froc/froc.csv, froc/summary.json
//! heatmap/<case>.png, heatmap/<case>_overlay.png
//! ```
//!
//! Each stage directory also holds a `stage.json` marker carrying the
//! artifact version and the ordered case list. `run` executes the stages
//! back to back against the same root, so staged and end-to-end runs
//! produce identical bytes.

use std::collections::{HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cascade::{config_hash, train_cascade, CascadeModel, CascadeSetup, SvmParams};
use crate::error::{Error, Result};
use crate::eval::{
    froc, froc_csv, heatmap, kfold_by_image, tpr_at_fpi, write_heatmap_png, write_overlay_png, EvalCase,
    FoldSplit, FrocPoint, HeatCombine, ScoredRegion,
};
use crate::features::{assemble_vector, read_feature_csv, write_feature_csv, FeatureConfig, FeatureRow, FeatureSchema};
use crate::imagecore::io::{
    load_manifest, read_json, read_mask_png, read_png16, save_manifest, write_json, write_mask_png, write_png16,
    Manifest, MassRecord,
};
use crate::imagecore::{load_case, save_case, standard_suite_specs, generate_phantom, GrayImage16, MassAnnotation, Region};
use crate::morphosift::{sift_multiscale, SiftConfig, SiftedStack};
use crate::preprocess::{preprocess_case, PreprocessConfig, PreprocessedCase};
use crate::superpixel::{
    extract_candidates, intensity_cutoffs, label_candidates, passes_filter, Candidate, CandidateLabel,
    CandidateRecord, SlicConfig,
};

pub const ARTIFACT_FORMAT: &str = "masscade-stage";
pub const ARTIFACT_VERSION: u32 = 1;
pub const STAGE_FILE: &str = "stage.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_cases: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { n_cases: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub val_fraction: f64,
    pub dice_min: f64,
    pub merge_iou: f64,
    pub heat_combine: HeatCombine,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            val_fraction: 0.1,
            dice_min: 0.2,
            merge_iou: 0.5,
            heat_combine: HeatCombine::Mean,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config("eval.k must be at least 2".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("eval.val_fraction must lie in (0, 1)".into()));
        }
        if !(self.dice_min > 0.0 && self.dice_min <= 1.0) {
            return Err(Error::Config("eval.dice_min must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.merge_iou) {
            return Err(Error::Config("eval.merge_iou must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The whole pipeline configuration. Missing keys take their defaults and
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives the phantom suite, the fold shuffle and the cascade partitions.
    pub seed: u64,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub sift: SiftConfig,
    pub superpixel: SlicConfig,
    pub features: FeatureConfig,
    /// `seed` here is an offset added to the global seed.
    pub cascade: SvmParams,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            synth: SynthConfig::default(),
            preprocess: PreprocessConfig::default(),
            sift: SiftConfig::default(),
            superpixel: SlicConfig::default(),
            features: FeatureConfig::default(),
            cascade: SvmParams::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.sift.validate()?;
        self.superpixel.validate(self.sift.band_cuts.len() - 1)?;
        self.features.validate()?;
        self.cascade.validate()?;
        self.eval.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Partition seed of the cascade trained for `fold`. Stage 2 uses the
    /// next value, so folds step by two.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed
            .wrapping_add(self.cascade.seed)
            .wrapping_add(2 * fold as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Preprocess,
    Sift,
    Candidates,
    Features,
    Train,
    Predict,
    Froc,
    Heatmap,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Preprocess,
        Stage::Sift,
        Stage::Candidates,
        Stage::Features,
        Stage::Train,
        Stage::Predict,
        Stage::Froc,
        Stage::Heatmap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::Sift => "sift",
            Stage::Candidates => "candidates",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Froc => "froc",
            Stage::Heatmap => "heatmap",
        }
    }
}

/// Contents of `<stage>/stage.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub format: String,
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    pub cases: Vec<String>,
}

impl StageMarker {
    pub fn new(stage: Stage, cfg: &PipelineConfig, cases: Vec<String>) -> Self {
        Self {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            stage: stage.name().into(),
            config_hash: cfg.hash(),
            cases,
        }
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        write_json(&root.join(&self.stage).join(STAGE_FILE), self)
    }

    /// Reads and checks the marker of `stage` under `root`.
    pub fn read(root: &Path, stage: Stage) -> Result<Self> {
        let path = root.join(stage.name()).join(STAGE_FILE);
        if !path.exists() {
            return Err(Error::data(
                &path,
                format!("missing; run the `{}` stage first", stage.name()),
            ));
        }
        let m: StageMarker = read_json(&path)?;
        if m.format != ARTIFACT_FORMAT || m.version != ARTIFACT_VERSION || m.stage != stage.name() {
            return Err(Error::data(
                &path,
                format!(
                    "expected {ARTIFACT_FORMAT} v{ARTIFACT_VERSION} `{}`, found {} v{} `{}`",
                    stage.name(),
                    m.format,
                    m.version,
                    m.stage
                ),
            ));
        }
        Ok(m)
    }
}

/// Where a stage reads from and writes to.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub cfg: PipelineConfig,
    /// Dataset root; only the preprocess stage reads it.
    pub data: Option<PathBuf>,
    /// Root holding earlier stages' outputs.
    pub input: PathBuf,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(cfg: PipelineConfig, data: Option<PathBuf>, input: PathBuf, out: PathBuf) -> Self {
        Self { cfg, data, input, out }
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn input_dir(&self, stage: Stage) -> PathBuf {
        self.input.join(stage.name())
    }
}

/// Working-resolution facts written next to each preprocessed image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMeta {
    pub case_id: String,
    pub width: usize,
    pub height: usize,
    pub downsample_factor: usize,
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub case_id: String,
    /// Candidate index within the case's candidate file.
    pub index: usize,
    pub scale: usize,
    pub fold: usize,
    pub label: CandidateLabel,
    pub survived_stage: u8,
    pub probability: f64,
    pub decision: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub runs: Vec<u32>,
}

/// Operating points written alongside the FROC curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocSummary {
    pub cases: usize,
    pub masses: usize,
    /// `(max FPI, best TPR)`.
    pub tpr_at_fpi: Vec<(f64, f64)>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut text = String::new();
    for it in items {
        text.push_str(&serde_json::to_string(it).map_err(|e| Error::data(path, e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::data(path, "file not found"));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::data(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Runs `f` on every case in parallel, keeping input order and tagging
/// failures with the stage and case.
fn per_case<T: Send>(stage: Stage, cases: &[String], f: impl Fn(&str) -> Result<T> + Sync) -> Result<Vec<T>> {
    cases
        .par_iter()
        .map(|id| f(id).map_err(|e| e.in_stage(stage.name(), id)))
        .collect()
}

/// Writes `n_cases` standard-suite phantoms and a manifest into `out`.
pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let specs = standard_suite_specs(cfg.synth.n_cases, cfg.seed);
    ensure_dir(out)?;
    specs.par_iter().try_for_each(|(id, spec)| {
        let mut case = generate_phantom(spec).map_err(|e| e.in_stage("synth", id))?;
        case.case_id = id.clone();
        save_case(&case, out).map_err(|e| e.in_stage("synth", id))
    })?;
    let manifest = Manifest {
        cases: specs.into_iter().map(|(id, _)| id).collect(),
    };
    save_manifest(out, &manifest)?;
    Ok(manifest)
}

/// Loads a preprocessed case written by the preprocess stage.
pub fn load_preprocessed(root: &Path, case_id: &str) -> Result<PreprocessedCase> {
    let dir = root.join(Stage::Preprocess.name()).join(case_id);
    let meta: PreprocessMeta = read_json(&dir.join("meta.json"))?;
    let image = read_png16(&dir.join("clahe.png"))?;
    let breast_mask = read_mask_png(&dir.join("mask.png"))?;
    if image.dims() != (meta.width, meta.height) || breast_mask.dims() != image.dims() {
        return Err(Error::data(&dir, "image, mask and meta.json disagree on dimensions"));
    }
    let masses = load_masses(root, case_id, meta.width, meta.height)?;
    Ok(PreprocessedCase {
        case_id: case_id.to_string(),
        image,
        breast_mask,
        masses,
        downsample_factor: meta.downsample_factor,
    })
}

fn load_masses(root: &Path, case_id: &str, width: usize, height: usize) -> Result<Vec<MassAnnotation>> {
    let path = root.join(Stage::Preprocess.name()).join(case_id).join("masses.json");
    let records: Vec<MassRecord> = read_json(&path)?;
    records
        .into_iter()
        .map(|r| MassAnnotation::new(r.id, r.polygon, width, height).map_err(|e| Error::data(&path, e.to_string())))
        .collect()
}

/// Mass regions at working resolution, as used for evaluation.
pub fn load_mass_regions(root: &Path, case_id: &str) -> Result<Vec<Region>> {
    let meta: PreprocessMeta = read_json(&root.join(Stage::Preprocess.name()).join(case_id).join("meta.json"))?;
    Ok(load_masses(root, case_id, meta.width, meta.height)?
        .iter()
        .map(|m| m.mask().to_region())
        .collect())
}

pub fn load_stack(root: &Path, case_id: &str, sift: &SiftConfig) -> Result<SiftedStack> {
    let bands = sift.bands()?;
    let dir = root.join(Stage::Sift.name()).join(case_id);
    let images = (1..=bands.len())
        .map(|s| read_png16(&dir.join(format!("scale{s}.png"))))
        .collect::<Result<Vec<GrayImage16>>>()?;
    Ok(SiftedStack { bands, images })
}

pub fn load_candidates(root: &Path, case_id: &str) -> Result<Vec<CandidateRecord>> {
    let path = root.join(Stage::Candidates.name()).join(format!("{case_id}.jsonl"));
    let recs: Vec<CandidateRecord> = read_jsonl(&path)?;
    for (i, r) in recs.iter().enumerate() {
        if r.index != i || r.case_id != case_id {
            return Err(Error::data(&path, format!("record {i} is out of order or belongs to another case")));
        }
    }
    Ok(recs)
}

fn stage_preprocess(ws: &Workspace) -> Result<Vec<String>> {
    let data = ws
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("the preprocess stage needs --data".into()))?;
    let cases = load_manifest(data)?.cases;
    let dir = ws.dir(Stage::Preprocess);
    per_case(Stage::Preprocess, &cases, |id| {
        let case = load_case(data, id)?;
        let p = preprocess_case(&case, &ws.cfg.preprocess)?;
        let cdir = dir.join(id);
        ensure_dir(&cdir)?;
        write_png16(&cdir.join("clahe.png"), &p.image)?;
        write_mask_png(&cdir.join("mask.png"), &p.breast_mask)?;
        let masses: Vec<MassRecord> = p
            .masses
            .iter()
            .map(|m| MassRecord {
                id: m.id.clone(),
                polygon: m.polygon.clone(),
            })
            .collect();
        write_json(&cdir.join("masses.json"), &masses)?;
        write_json(
            &cdir.join("meta.json"),
            &PreprocessMeta {
                case_id: id.to_string(),
                width: p.image.width(),
                height: p.image.height(),
                downsample_factor: p.downsample_factor,
            },
        )
    })?;
    Ok(cases)
}

fn stage_sift(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Preprocess)?.cases;
    let bands = ws.cfg.sift.bands()?;
    let dir = ws.dir(Stage::Sift);
    per_case(Stage::Sift, &cases, |id| {
        let image = read_png16(&ws.input_dir(Stage::Preprocess).join(id).join("clahe.png"))?;
        let stack = sift_multiscale(&image, &bands, ws.cfg.sift.n_orientations)?;
        let cdir = dir.join(id);
        ensure_dir(&cdir)?;
        for (s, img) in stack.images.iter().enumerate() {
            write_png16(&cdir.join(format!("scale{}.png", s + 1)), img)?;
        }
        Ok(())
    })?;
    Ok(cases)
}

/// Candidates of one case with their labels and filter verdicts.
pub fn case_candidates(prep: &PreprocessedCase, stack: &SiftedStack, cfg: &SlicConfig) -> Result<Vec<CandidateRecord>> {
    let cands = extract_candidates(&prep.case_id, stack, cfg)?;
    let cands = label_candidates(cands, &prep.masses, &cfg.dice_threshold_per_scale)?;
    let cutoffs = intensity_cutoffs(&cands, cfg.intensity_percentile);
    cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let kept = passes_filter(c, &prep.breast_mask, &cutoffs, cfg)?;
            Ok(CandidateRecord::from_candidate(c, i, kept))
        })
        .collect()
}

fn stage_candidates(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Sift)?.cases;
    let dir = ws.dir(Stage::Candidates);
    ensure_dir(&dir)?;
    per_case(Stage::Candidates, &cases, |id| {
        let prep = load_preprocessed(&ws.input, id)?;
        let stack = load_stack(&ws.input, id, &ws.cfg.sift)?;
        let recs = case_candidates(&prep, &stack, &ws.cfg.superpixel)?;
        write_jsonl(&dir.join(format!("{id}.jsonl")), &recs)
    })?;
    Ok(cases)
}

fn kept_candidates(root: &Path, case_id: &str) -> Result<Vec<(usize, Candidate)>> {
    load_candidates(root, case_id)?
        .into_iter()
        .filter(|r| r.kept)
        .map(|r| Ok((r.index, r.to_candidate()?)))
        .collect()
}

fn stage_features(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Candidates)?.cases;
    let per = per_case(Stage::Features, &cases, |id| {
        let clahe = read_png16(&ws.input_dir(Stage::Preprocess).join(id).join("clahe.png"))?;
        let stack = load_stack(&ws.input, id, &ws.cfg.sift)?;
        kept_candidates(&ws.input, id)?
            .into_iter()
            .map(|(_, c)| {
                let v = assemble_vector(&c, &clahe, &stack, &ws.cfg.features)?;
                Ok(FeatureRow {
                    case_id: id.to_string(),
                    scale: c.scale_index,
                    label: c.label,
                    values: v.values,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<FeatureRow> = per.into_iter().flatten().collect();
    write_feature_csv(&ws.dir(Stage::Features).join("features.csv"), &FeatureSchema::v1(), &rows)?;
    Ok(cases)
}

fn label_sign(l: CandidateLabel) -> f64 {
    if l == CandidateLabel::Positive {
        1.0
    } else {
        -1.0
    }
}

fn stage_train(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Features)?.cases;
    let (schema, rows) = read_feature_csv(&ws.input_dir(Stage::Features).join("features.csv"))?;
    let ev = &ws.cfg.eval;
    let folds = kfold_by_image(&cases, ev.k, ev.val_fraction, ws.cfg.seed)?;
    let dir = ws.dir(Stage::Train);
    ensure_dir(&dir)?;
    write_json(&dir.join("folds.json"), &folds)?;
    let hash = ws.cfg.hash();
    for fold in &folds {
        let tag = format!("fold_{:02}", fold.fold_index);
        let train: HashSet<&str> = fold.train_case_ids.iter().map(String::as_str).collect();
        let val: HashSet<&str> = fold.validation_case_ids.iter().map(String::as_str).collect();
        let (mut t, mut f, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in &rows {
            if train.contains(r.case_id.as_str()) {
                match r.label {
                    CandidateLabel::Positive => t.push(r.values.clone()),
                    CandidateLabel::Negative => f.push(r.values.clone()),
                    CandidateLabel::Unlabeled => {}
                }
            } else if val.contains(r.case_id.as_str()) && r.label != CandidateLabel::Unlabeled {
                vx.push(r.values.clone());
                vy.push(label_sign(r.label));
            }
        }
        let mut params = ws.cfg.cascade.clone();
        params.seed = ws.cfg.fold_seed(fold.fold_index);
        let setup = CascadeSetup {
            params: &params,
            schema: schema.clone(),
            config_hash: hash.clone(),
            validation: (&vx, &vy),
        };
        let model = train_cascade(&t, &f, &setup).map_err(|e| e.in_stage(Stage::Train.name(), &tag))?;
        model.save(&dir.join(&tag).join("model.json"))?;
    }
    Ok(cases)
}

fn stage_predict(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Train)?.cases;
    let csv = ws.input_dir(Stage::Features).join("features.csv");
    let (schema, rows) = read_feature_csv(&csv)?;
    let folds: Vec<FoldSplit> = read_json(&ws.input_dir(Stage::Train).join("folds.json"))?;
    let mut fold_of: HashMap<&str, usize> = HashMap::new();
    for f in &folds {
        for id in &f.test_case_ids {
            fold_of.insert(id.as_str(), f.fold_index);
        }
    }
    let models = folds
        .iter()
        .map(|f| {
            let path = ws.input_dir(Stage::Train).join(format!("fold_{:02}", f.fold_index)).join("model.json");
            CascadeModel::load(&path, &schema)
        })
        .collect::<Result<Vec<_>>>()?;

    let kept = per_case(Stage::Predict, &cases, |id| kept_candidates(&ws.input, id))?;
    let n_kept: usize = kept.iter().map(Vec::len).sum();
    if n_kept != rows.len() {
        return Err(Error::data(
            &csv,
            format!("{} feature rows but {n_kept} kept candidates", rows.len()),
        ));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(n_kept);
    for (id, cands) in cases.iter().zip(&kept) {
        let case_rows = &rows[offset..offset + cands.len()];
        offset += cands.len();
        let fold = *fold_of
            .get(id.as_str())
            .ok_or_else(|| Error::data(&csv, format!("case `{id}` is in no test fold")))?;
        for (r, (_, c)) in case_rows.iter().zip(cands) {
            if r.case_id != *id || r.scale != c.scale_index {
                return Err(Error::data(&csv, format!("feature rows do not line up with candidates of `{id}`")));
            }
        }
        let x: Vec<Vec<f64>> = case_rows.iter().map(|r| r.values.clone()).collect();
        let preds = models[fold]
            .score_all(&schema, &x)
            .map_err(|e| e.in_stage(Stage::Predict.name(), id))?;
        for ((idx, c), p) in cands.iter().zip(preds) {
            out.push(PredictionRecord {
                case_id: id.clone(),
                index: *idx,
                scale: c.scale_index,
                fold,
                label: c.label,
                survived_stage: p.survived_stage,
                probability: p.probability,
                decision: p.decision,
                width: c.region.width(),
                height: c.region.height(),
                runs: c.region.to_runs(),
            });
        }
    }
    write_jsonl(&ws.dir(Stage::Predict).join("predictions.jsonl"), &out)?;
    Ok(cases)
}

pub fn load_predictions(root: &Path) -> Result<Vec<PredictionRecord>> {
    read_jsonl(&root.join(Stage::Predict.name()).join("predictions.jsonl"))
}

fn group_predictions(cases: &[String], preds: Vec<PredictionRecord>) -> Result<HashMap<String, Vec<PredictionRecord>>> {
    let mut by_case: HashMap<String, Vec<PredictionRecord>> = cases.iter().map(|c| (c.clone(), Vec::new())).collect();
    for p in preds {
        match by_case.get_mut(&p.case_id) {
            Some(v) => v.push(p),
            None => return Err(Error::invalid(format!("prediction for unknown case `{}`", p.case_id))),
        }
    }
    Ok(by_case)
}

fn scored(p: &PredictionRecord) -> Result<ScoredRegion> {
    Ok(ScoredRegion {
        region: Region::from_runs(p.width, p.height, &p.runs)?,
        probability: p.probability,
    })
}

pub const SUMMARY_FPI: [f64; 5] = [0.1, 0.5, 1.0, 1.44, 2.0];

fn stage_froc(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Predict)?.cases;
    let mut by_case = group_predictions(&cases, load_predictions(&ws.input)?)
        .map_err(|e| e.in_stage(Stage::Froc.name(), "predictions"))?;
    let eval_cases = per_case(Stage::Froc, &cases, |id| {
        Ok(EvalCase {
            case_id: id.to_string(),
            masses: load_mass_regions(&ws.input, id)?,
            predictions: by_case[id].iter().map(scored).collect::<Result<Vec<_>>>()?,
        })
    })?;
    by_case.clear();
    let points = froc(&eval_cases, None, ws.cfg.eval.dice_min, ws.cfg.eval.merge_iou)?;
    write_froc(&ws.dir(Stage::Froc), &points, &eval_cases)?;
    Ok(cases)
}

fn write_froc(dir: &Path, points: &[FrocPoint], cases: &[EvalCase]) -> Result<()> {
    ensure_dir(dir)?;
    let path = dir.join("froc.csv");
    fs::write(&path, froc_csv(points)).map_err(|e| Error::io(&path, e))?;
    let summary = FrocSummary {
        cases: cases.len(),
        masses: cases.iter().map(|c| c.masses.len()).sum(),
        tpr_at_fpi: SUMMARY_FPI.iter().map(|&f| (f, tpr_at_fpi(points, f))).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)
}

fn stage_heatmap(ws: &Workspace) -> Result<Vec<String>> {
    let cases = StageMarker::read(&ws.input, Stage::Predict)?.cases;
    let by_case = group_predictions(&cases, load_predictions(&ws.input)?)
        .map_err(|e| e.in_stage(Stage::Heatmap.name(), "predictions"))?;
    let dir = ws.dir(Stage::Heatmap);
    ensure_dir(&dir)?;
    per_case(Stage::Heatmap, &cases, |id| {
        let prep = load_preprocessed(&ws.input, id)?;
        let prob: HashMap<usize, f64> = by_case[id].iter().map(|p| (p.index, p.probability)).collect();
        // filtered and rejected candidates still cover their pixels, at 0
        let regions = load_candidates(&ws.input, id)?
            .iter()
            .map(|r| {
                Ok(ScoredRegion {
                    region: Region::from_runs(r.width, r.height, &r.runs)?,
                    probability: prob.get(&r.index).copied().unwrap_or(0.0),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (w, h) = prep.image.dims();
        let map = heatmap(&regions, w, h, ws.cfg.eval.heat_combine)?;
        write_heatmap_png(&dir.join(format!("{id}.png")), &map)?;
        let truth: Vec<_> = prep.masses.iter().map(|m| m.mask()).collect();
        write_overlay_png(&dir.join(format!("{id}_overlay.png")), &prep.image, &map, &truth)
    })?;
    Ok(cases)
}

/// Runs one stage and writes its marker.
pub fn run_stage(stage: Stage, ws: &Workspace) -> Result<()> {
    ws.cfg.validate()?;
    let cases = match stage {
        Stage::Preprocess => stage_preprocess(ws),
        Stage::Sift => stage_sift(ws),
        Stage::Candidates => stage_candidates(ws),
        Stage::Features => stage_features(ws),
        Stage::Train => stage_train(ws),
        Stage::Predict => stage_predict(ws),
        Stage::Froc => stage_froc(ws),
        Stage::Heatmap => stage_heatmap(ws),
    }?;
    StageMarker::new(stage, &ws.cfg, cases).write(&ws.out)
}

/// All stages in order; each reads the previous one's output under `out`.
pub fn run_all(cfg: &PipelineConfig, data: &Path, out: &Path) -> Result<()> {
    let ws = Workspace::new(cfg.clone(), Some(data.to_path_buf()), out.to_path_buf(), out.to_path_buf());
    for stage in Stage::ALL {
        run_stage(stage, &ws)?;
    }
    Ok(())
}

/// Reads back the FROC curve written by the froc stage.
pub fn load_froc(root: &Path) -> Result<Vec<FrocPoint>> {
    let path = root.join(Stage::Froc.name()).join("froc.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    crate::eval::parse_froc_csv(&text).map_err(|e| Error::data(&path, e.to_string()))
}

#[derive(Parser, Debug)]
#[command(name = "masscade", version, about = "Mass detection pipeline for mammograms")]
struct Cli {
    /// Print the default configuration as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (case directories plus manifest.json).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Root holding earlier stages' outputs; defaults to --out.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the configured global seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to create.
    #[arg(long)]
    out: PathBuf,
    /// Number of cases; overrides `synth.n_cases`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom dataset.
    Synth(SynthArgs),
    /// Run every stage.
    Run(CommonArgs),
    /// Downsample, mask and CLAHE each case.
    Preprocess(CommonArgs),
    /// Multiscale morphological sifting.
    Sift(CommonArgs),
    /// SLIC candidates, labels and filtering.
    Candidates(CommonArgs),
    /// Feature table for kept candidates.
    Features(CommonArgs),
    /// Per-fold cascade training.
    Train(CommonArgs),
    /// Score each test fold.
    Predict(CommonArgs),
    /// FROC curve and summary.
    Froc(CommonArgs),
    /// Probability heatmaps and overlays.
    Heatmap(CommonArgs),
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let n = match jobs {
        Some(0) => return Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(f)
}

fn execute(cmd: Command) -> Result<()> {
    let (stage, args) = match cmd {
        Command::Synth(a) => {
            let mut cfg = load_config(a.config.as_deref(), a.seed)?;
            if let Some(n) = a.n {
                cfg.synth.n_cases = n;
            }
            let m = with_pool(a.jobs, || synth(&cfg, &a.out))?;
            eprintln!("wrote {} cases to {}", m.cases.len(), a.out.display());
            return Ok(());
        }
        Command::Run(a) => {
            let cfg = load_config(a.config.as_deref(), a.seed)?;
            let data = a.data.clone().ok_or_else(|| Error::Config("run needs --data".into()))?;
            with_pool(a.jobs, || run_all(&cfg, &data, &a.out))?;
            report_froc(&a.out);
            return Ok(());
        }
        Command::Preprocess(a) => (Stage::Preprocess, a),
        Command::Sift(a) => (Stage::Sift, a),
        Command::Candidates(a) => (Stage::Candidates, a),
        Command::Features(a) => (Stage::Features, a),
        Command::Train(a) => (Stage::Train, a),
        Command::Predict(a) => (Stage::Predict, a),
        Command::Froc(a) => (Stage::Froc, a),
        Command::Heatmap(a) => (Stage::Heatmap, a),
    };
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let input = args.input.clone().unwrap_or_else(|| args.out.clone());
    let ws = Workspace::new(cfg, args.data.clone(), input, args.out.clone());
    with_pool(args.jobs, || run_stage(stage, &ws))?;
    if stage == Stage::Froc {
        report_froc(&args.out);
    }
    Ok(())
}

fn report_froc(out: &Path) {
    if let Ok(s) = read_json::<FrocSummary>(&out.join(Stage::Froc.name()).join("summary.json")) {
        for (fpi, tpr) in s.tpr_at_fpi {
            println!("TPR {tpr:.3} at FPI <= {fpi}");
        }
    }
}

/// Exit status for an error: 1 usage/configuration, 2 bad input data,
/// 3 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        e if e.is_data_error() => 2,
        _ => 3,
    }
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.print_default_config {
        let _ = std::io::stdout().write_all(PipelineConfig::default().to_json().as_bytes());
        return 0;
    }
    let Some(cmd) = cli.command else {
        eprintln!("error: no command given; see --help");
        return 1;
    };
    match execute(cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            exit_code(&e)
        }
    }
}
