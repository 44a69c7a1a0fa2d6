//! Prediction providers: an adapter for prediction files written by an
//! external detector, and a seeded synthetic detector that perturbs ground
//! truth according to a learning curve over the labeled set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::al::{AlError, Detection, PoolState, PredictionProvider, RoundEvaluator};
use crate::dataset::{
    box_from_fields, io_err, parse_fields, Dataset, ImageRecord, LabelError, NormBox, Split,
};
use crate::eval::{evaluate, EvalSummary, MatchConfig};
use crate::scale::area_ratio;
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    MalformedPredictionLine { path: PathBuf, source: LabelError },
    #[error("no prediction file for image {0}")]
    MissingImage(String),
    #[error("invalid detector config: {0}")]
    InvalidConfig(String),
}

impl From<crate::dataset::DatasetError> for DetectorError {
    fn from(e: crate::dataset::DatasetError) -> Self {
        match e {
            crate::dataset::DatasetError::Io { path, source } => DetectorError::Io { path, source },
            other => DetectorError::InvalidConfig(other.to_string()),
        }
    }
}

/// Detections keyed by image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet(BTreeMap<String, Vec<Detection>>);

impl PredictionSet {
    pub fn insert(&mut self, image_id: impl Into<String>, dets: Vec<Detection>) {
        self.0.insert(image_id.into(), dets);
    }

    pub fn get(&self, image_id: &str) -> Option<&Vec<Detection>> {
        self.0.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<Detection>)> {
        self.0.iter()
    }

    pub fn covers<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> bool {
        ids.into_iter().all(|id| self.0.contains_key(id))
    }
}

impl FromIterator<(String, Vec<Detection>)> for PredictionSet {
    fn from_iter<T: IntoIterator<Item = (String, Vec<Detection>)>>(iter: T) -> Self {
        PredictionSet(iter.into_iter().collect())
    }
}

/// Parses `class cx cy w h score` lines.
pub fn parse_prediction_file(text: &str, num_classes: usize) -> Result<Vec<Detection>, LabelError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some((class_id, v)) = parse_fields(line, line_no, 6)? else {
            continue;
        };
        let bbox = box_from_fields(class_id, &v[..4], line_no, num_classes)?;
        let score = v[4];
        let det = Detection::new(bbox, score).ok_or(LabelError::OutOfRange {
            line: line_no,
            field: "score",
            value: score,
        })?;
        out.push(det);
    }
    Ok(out)
}

pub fn serialize_prediction_file(dets: &[Detection]) -> String {
    let mut out = String::new();
    for d in dets {
        let _ = writeln!(out, "{} {:.6}", d.bbox, d.score);
    }
    out
}

/// Writes `<dir>/<id>.txt` for every entry, including empty ones.
pub fn write_predictions(dir: &Path, preds: &PredictionSet) -> Result<(), DetectorError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (id, dets) in preds.iter() {
        let path = dir.join(format!("{id}.txt"));
        fs::write(&path, serialize_prediction_file(dets)).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Predictions loaded from a directory plus the ids that had no file.
#[derive(Debug, Clone, Default)]
pub struct LoadedPredictions {
    pub predictions: PredictionSet,
    pub missing: Vec<String>,
}

/// Reads `<dir>/<id>.txt` for each expected id. A missing file counts as an
/// empty detection list unless `strict` is set.
pub fn load_external_predictions(
    dir: &Path,
    expected: &[String],
    num_classes: usize,
    strict: bool,
) -> Result<LoadedPredictions, DetectorError> {
    let mut out = LoadedPredictions::default();
    for id in expected {
        let path = dir.join(format!("{id}.txt"));
        let dets = match fs::read_to_string(&path) {
            Ok(text) => parse_prediction_file(&text, num_classes)
                .map_err(|source| DetectorError::MalformedPredictionLine { path, source })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if strict {
                    return Err(DetectorError::MissingImage(id.clone()));
                }
                out.missing.push(id.clone());
                Vec::new()
            }
            Err(source) => return Err(DetectorError::Io { path, source }),
        };
        out.predictions.insert(id.clone(), dets);
    }
    Ok(out)
}

/// `v(x) = vmax - (vmax - v0) * exp(-x / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveParams {
    pub v0: f64,
    pub vmax: f64,
    pub tau: f64,
}

impl CurveParams {
    pub fn constant(v: f64) -> Self {
        CurveParams { v0: v, vmax: v, tau: 1.0 }
    }

    fn validate(&self, what: &str) -> Result<(), DetectorError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.v0) && unit(self.vmax) && self.v0 <= self.vmax && self.tau >= 0.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "{what}: need 0 <= v0 <= vmax <= 1 and tau >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn learning_curve(x: f64, p: &CurveParams) -> f64 {
    if p.tau == 0.0 {
        return p.vmax;
    }
    p.vmax - (p.vmax - p.v0) * (-x / p.tau).exp()
}

/// What the detector's quality is tied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Every class follows the number of labeled images.
    #[default]
    LabeledImages,
    /// Each class follows its own labeled annotation count.
    ClassAnnotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassModel {
    pub recall: CurveParams,
    pub confidence: CurveParams,
}

/// Lower recall and confidence on boxes below `small_threshold` area ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeConditioning {
    pub small_threshold: f64,
    /// Added to the confidence mean of small boxes.
    pub confidence_shift: f64,
    /// Multiplies the recall of small boxes.
    pub recall_factor: f64,
}

impl Default for SizeConditioning {
    fn default() -> Self {
        SizeConditioning {
            small_threshold: 0.0058,
            confidence_shift: -0.3,
            recall_factor: 0.8,
        }
    }
}

fn default_fp_side() -> f64 {
    0.08
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDetectorConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub coupling: Coupling,
    /// One model per class id.
    pub classes: Vec<ClassModel>,
    #[serde(default)]
    pub confidence_stddev: f64,
    /// Standard deviation of center and size noise, as a fraction of box size.
    #[serde(default)]
    pub localization_jitter: f64,
    /// Poisson mean of false positives per image.
    #[serde(default)]
    pub false_positives_per_image: f64,
    /// Extra false-positive mean per ground-truth box, so crowded scenes draw more.
    #[serde(default)]
    pub false_positives_per_box: f64,
    #[serde(default)]
    pub fp_score_mean: f64,
    #[serde(default)]
    pub fp_score_stddev: f64,
    /// Largest side of a false-positive box.
    #[serde(default = "default_fp_side")]
    pub fp_max_side: f64,
    #[serde(default)]
    pub size_conditioning: Option<SizeConditioning>,
}

impl SyntheticDetectorConfig {
    /// Perfect detector: every box found at its exact position with score 1.
    pub fn noiseless(num_classes: usize) -> Self {
        let one = ClassModel {
            recall: CurveParams::constant(1.0),
            confidence: CurveParams::constant(1.0),
        };
        SyntheticDetectorConfig {
            seed: 0,
            coupling: Coupling::LabeledImages,
            classes: vec![one; num_classes],
            confidence_stddev: 0.0,
            localization_jitter: 0.0,
            false_positives_per_image: 0.0,
            false_positives_per_box: 0.0,
            fp_score_mean: 0.0,
            fp_score_stddev: 0.0,
            fp_max_side: default_fp_side(),
            size_conditioning: None,
        }
    }

    /// Three-class model with a scarce, hard minority class, per-class
    /// annotation coupling and weaker confidence on small boxes.
    pub fn greenhouse(seed: u64) -> Self {
        let class = |r0, r1, c0, c1, tau| ClassModel {
            recall: CurveParams { v0: r0, vmax: r1, tau },
            confidence: CurveParams { v0: c0, vmax: c1, tau },
        };
        SyntheticDetectorConfig {
            seed,
            coupling: Coupling::ClassAnnotations,
            classes: vec![
                class(0.55, 0.92, 0.50, 0.90, 3000.0),
                class(0.35, 0.88, 0.40, 0.85, 1200.0),
                class(0.20, 0.85, 0.30, 0.85, 500.0),
            ],
            confidence_stddev: 0.12,
            localization_jitter: 0.05,
            false_positives_per_image: 0.05,
            false_positives_per_box: 0.05,
            fp_score_mean: 0.2,
            fp_score_stddev: 0.1,
            fp_max_side: default_fp_side(),
            size_conditioning: Some(SizeConditioning {
                small_threshold: 0.0058,
                confidence_shift: -0.15,
                recall_factor: 0.85,
            }),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DetectorError> {
        let cfg: Self = toml::from_str(text).map_err(|e| DetectorError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text).map_err(|e| DetectorError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: String| Err(DetectorError::InvalidConfig(m));
        if self.classes.is_empty() {
            return bad("at least one class model is required".into());
        }
        for (c, m) in self.classes.iter().enumerate() {
            m.recall.validate(&format!("class {c} recall"))?;
            m.confidence.validate(&format!("class {c} confidence"))?;
        }
        for (name, v) in [
            ("confidence_stddev", self.confidence_stddev),
            ("localization_jitter", self.localization_jitter),
            ("false_positives_per_image", self.false_positives_per_image),
            ("false_positives_per_box", self.false_positives_per_box),
            ("fp_score_stddev", self.fp_score_stddev),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.fp_score_mean) {
            return bad(format!("fp_score_mean must lie in [0, 1], got {}", self.fp_score_mean));
        }
        if !(self.fp_max_side > 0.0 && self.fp_max_side <= 1.0) {
            return bad(format!("fp_max_side must lie in (0, 1], got {}", self.fp_max_side));
        }
        if let Some(s) = &self.size_conditioning {
            if !((0.0..1.0).contains(&s.small_threshold)
                && (0.0..=1.0).contains(&s.recall_factor)
                && s.confidence_shift.abs() <= 1.0)
            {
                return bad(format!("invalid size_conditioning {s:?}"));
            }
        }
        Ok(())
    }

    /// Training-set size seen by class `c`.
    fn exposure(&self, snap: &TrainingSnapshot, c: usize) -> f64 {
        match self.coupling {
            Coupling::LabeledImages => snap.labeled_images as f64,
            Coupling::ClassAnnotations => snap.class_annotations.get(c).copied().unwrap_or(0) as f64,
        }
    }

    /// Effective `(recall, confidence mean)` for a box of class `c`.
    pub fn box_params(&self, snap: &TrainingSnapshot, b: &NormBox) -> (f64, f64) {
        let c = b.class_id() as usize;
        let model = &self.classes[c.min(self.classes.len() - 1)];
        let x = self.exposure(snap, c);
        let mut recall = learning_curve(x, &model.recall);
        let mut mean = learning_curve(x, &model.confidence);
        if let Some(s) = &self.size_conditioning {
            if area_ratio(b) < s.small_threshold {
                recall *= s.recall_factor;
                mean = (mean + s.confidence_shift).clamp(0.0, 1.0);
            }
        }
        (recall, mean)
    }
}

/// The state of the labeled set the simulated model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TrainingSnapshot {
    pub labeled_images: usize,
    pub class_annotations: Vec<usize>,
}

impl TrainingSnapshot {
    pub fn of(state: &PoolState) -> Self {
        TrainingSnapshot {
            labeled_images: state.labeled.len(),
            class_annotations: state.class_counts.clone(),
        }
    }

    fn seed_path(&self, base: SeedPath) -> SeedPath {
        self.class_annotations
            .iter()
            .fold(base.index(self.labeled_images as u64), |p, &n| p.index(n as u64))
    }
}

fn sample_score(rng: &mut ChaCha8Rng, mean: f64, stddev: f64) -> f64 {
    if stddev == 0.0 {
        return mean.clamp(0.0, 1.0);
    }
    Normal::new(mean, stddev)
        .expect("stddev validated")
        .sample(rng)
        .clamp(0.0, 1.0)
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &NormBox, jitter: f64) -> Option<NormBox> {
    if jitter == 0.0 {
        return Some(*b);
    }
    let n = Normal::new(0.0, jitter).expect("jitter validated");
    let cx = b.cx() + n.sample(rng) * b.w();
    let cy = b.cy() + n.sample(rng) * b.h();
    let w = (b.w() * (1.0 + n.sample(rng))).max(1e-4);
    let h = (b.h() * (1.0 + n.sample(rng))).max(1e-4);
    NormBox::from_corners(b.class_id(), cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn simulate_image(img: &ImageRecord, cfg: &SyntheticDetectorConfig, snap: &TrainingSnapshot) -> Vec<Detection> {
    let path = snap.seed_path(SeedPath::new(cfg.seed).label("synthetic-detector").label(&img.image_id));
    let mut rng = path.rng();
    let mut out = Vec::new();
    for b in &img.labels {
        let (recall, mean) = cfg.box_params(snap, b);
        // draw both values unconditionally so one box's outcome does not shift the next box's stream
        let hit = rng.random::<f64>() < recall;
        let score = sample_score(&mut rng, mean, cfg.confidence_stddev);
        if !hit {
            continue;
        }
        if let Some(bbox) = jitter_box(&mut rng, b, cfg.localization_jitter) {
            out.push(Detection { bbox, score });
        }
    }
    let fp_rate = cfg.false_positives_per_image + cfg.false_positives_per_box * img.labels.len() as f64;
    if fp_rate > 0.0 {
        let n: f64 = Poisson::new(fp_rate)
            .expect("rate validated")
            .sample(&mut rng);
        for _ in 0..n as usize {
            let class = rng.random_range(0..cfg.classes.len()) as u32;
            let lo = 0.01f64.min(cfg.fp_max_side);
            let w = rng.random_range(lo..=cfg.fp_max_side);
            let h = rng.random_range(lo..=cfg.fp_max_side);
            let cx = rng.random_range(w / 2.0..=1.0 - w / 2.0);
            let cy = rng.random_range(h / 2.0..=1.0 - h / 2.0);
            let score = sample_score(&mut rng, cfg.fp_score_mean, cfg.fp_score_stddev);
            if let Ok(bbox) = NormBox::new(class, cx, cy, w, h) {
                out.push(Detection { bbox, score });
            }
        }
    }
    out
}

/// Simulated predictions for every image. Each image's stream depends only
/// on `(seed, image_id, snapshot)`.
pub fn simulate_predictions(
    images: &[&ImageRecord],
    cfg: &SyntheticDetectorConfig,
    snap: &TrainingSnapshot,
) -> PredictionSet {
    images
        .par_iter()
        .map(|img| (img.image_id.clone(), simulate_image(img, cfg, snap)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Synthetic detector over a fully annotated dataset.
pub struct SyntheticDetector<'a> {
    pub dataset: &'a Dataset,
    pub config: SyntheticDetectorConfig,
}

impl<'a> SyntheticDetector<'a> {
    pub fn new(dataset: &'a Dataset, config: SyntheticDetectorConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(SyntheticDetector { dataset, config })
    }

    fn records(&self, ids: &[String]) -> Result<Vec<&'a ImageRecord>, AlError> {
        ids.iter()
            .map(|id| self.dataset.get(id).ok_or_else(|| AlError::UnknownImage(id.clone())))
            .collect()
    }
}

impl PredictionProvider for SyntheticDetector<'_> {
    fn predict(&mut self, state: &PoolState, ids: &[String]) -> Result<PredictionSet, AlError> {
        let images = self.records(ids)?;
        Ok(simulate_predictions(&images, &self.config, &TrainingSnapshot::of(state)))
    }
}

/// Reads `<root>/round<t>/<id>.txt` for round `t`.
pub struct ExternalDetector {
    pub root: PathBuf,
    pub num_classes: usize,
    pub strict: bool,
    /// Ids that had no prediction file, per round.
    pub missing: Vec<(usize, Vec<String>)>,
}

impl ExternalDetector {
    pub fn new(root: impl Into<PathBuf>, num_classes: usize, strict: bool) -> Self {
        ExternalDetector {
            root: root.into(),
            num_classes,
            strict,
            missing: Vec::new(),
        }
    }

    pub fn round_dir(&self, round: usize) -> PathBuf {
        self.root.join(format!("round{round}"))
    }
}

impl PredictionProvider for ExternalDetector {
    fn predict(&mut self, state: &PoolState, ids: &[String]) -> Result<PredictionSet, AlError> {
        let loaded = load_external_predictions(&self.round_dir(state.round), ids, self.num_classes, self.strict)?;
        if !loaded.missing.is_empty() {
            self.missing.push((state.round, loaded.missing));
        }
        Ok(loaded.predictions)
    }
}

/// Scores the simulated model on the validation split.
pub struct SimulatedEvaluator<'a> {
    pub images: Vec<&'a ImageRecord>,
    pub num_classes: usize,
    pub config: SyntheticDetectorConfig,
    pub matching: MatchConfig,
}

impl<'a> SimulatedEvaluator<'a> {
    pub fn on_split(dataset: &'a Dataset, split: Split, config: SyntheticDetectorConfig) -> Self {
        SimulatedEvaluator {
            images: dataset.split(split).collect(),
            num_classes: dataset.classes().len(),
            config,
            matching: MatchConfig::default(),
        }
    }
}

impl RoundEvaluator for SimulatedEvaluator<'_> {
    fn evaluate(&mut self, state: &PoolState) -> Result<EvalSummary, AlError> {
        let preds = simulate_predictions(&self.images, &self.config, &TrainingSnapshot::of(state));
        Ok(evaluate(&preds, self.images.iter().copied(), self.num_classes, &self.matching))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::al::{aggregate, AggregationMethod, EmptyImageScores};

    fn nb(c: u32, cx: f64, cy: f64, w: f64, h: f64) -> NormBox {
        NormBox::new(c, cx, cy, w, h).unwrap()
    }

    fn img(id: &str, labels: Vec<NormBox>) -> ImageRecord {
        ImageRecord::new(id, 640, 640, Split::Train).with_labels(labels)
    }

    #[test]
    fn curve_values() {
        let p = CurveParams { v0: 0.4, vmax: 0.9, tau: 1000.0 };
        assert_eq!(learning_curve(0.0, &p), 0.4);
        assert!((learning_curve(500.0, &p) - (0.9 - 0.5 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((learning_curve(500.0, &p) - 0.5967).abs() < 1e-4);
        assert!((learning_curve(50_000.0, &p) - 0.9).abs() < 1e-9);
        assert_eq!(learning_curve(3.0, &CurveParams { tau: 0.0, ..p }), 0.9);
    }

    #[test]
    fn prediction_file_round_trip() {
        let dets = vec![
            Detection::new(nb(0, 0.5, 0.5, 0.1, 0.1), 0.75).unwrap(),
            Detection::new(nb(2, 0.2, 0.3, 0.05, 0.07), 0.125).unwrap(),
        ];
        let text = serialize_prediction_file(&dets);
        assert_eq!(parse_prediction_file(&text, 3).unwrap(), dets);
        assert!(parse_prediction_file("", 3).unwrap().is_empty());
    }

    #[test]
    fn score_out_of_range() {
        let err = parse_prediction_file("0 0.5 0.5 0.1 0.1 1.7", 3).unwrap_err();
        assert!(matches!(err, LabelError::OutOfRange { field: "score", .. }));
        assert!(parse_prediction_file("0 0.5 0.5 0.1 0.1", 3).is_err());
    }

    #[test]
    fn external_loading() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "0 0.5 0.5 0.1 0.1 0.9\n").unwrap();
        fs::write(dir.path().join("b.txt"), "").unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let loaded = load_external_predictions(dir.path(), &ids, 3, false).unwrap();
        assert_eq!(loaded.predictions.len(), 3);
        assert_eq!(loaded.predictions.get("a").unwrap().len(), 1);
        assert!(loaded.predictions.get("b").unwrap().is_empty());
        assert_eq!(loaded.missing, vec!["c".to_string()]);
        assert!(matches!(
            load_external_predictions(dir.path(), &ids, 3, true),
            Err(DetectorError::MissingImage(id)) if id == "c"
        ));
        fs::write(dir.path().join("b.txt"), "0 0.5 0.5 0.1 0.1 1.7\n").unwrap();
        assert!(matches!(
            load_external_predictions(dir.path(), &ids, 3, false),
            Err(DetectorError::MalformedPredictionLine { .. })
        ));
    }

    #[test]
    fn noiseless_equals_ground_truth() {
        let images = [
            img("a", vec![nb(0, 0.5, 0.5, 0.2, 0.2), nb(1, 0.1, 0.1, 0.02, 0.03)]),
            img("b", vec![]),
        ];
        let refs: Vec<&ImageRecord> = images.iter().collect();
        let cfg = SyntheticDetectorConfig::noiseless(3);
        let p = simulate_predictions(&refs, &cfg, &TrainingSnapshot::default());
        let a: Vec<NormBox> = p.get("a").unwrap().iter().map(|d| d.bbox).collect();
        assert_eq!(a, images[0].labels);
        assert!(p.get("a").unwrap().iter().all(|d| d.score == 1.0));
        assert!(p.get("b").unwrap().is_empty());
    }

    #[test]
    fn zero_recall_is_empty() {
        let images = [img("a", vec![nb(0, 0.5, 0.5, 0.2, 0.2)])];
        let refs: Vec<&ImageRecord> = images.iter().collect();
        let mut cfg = SyntheticDetectorConfig::noiseless(3);
        for m in &mut cfg.classes {
            m.recall = CurveParams::constant(0.0);
        }
        let p = simulate_predictions(&refs, &cfg, &TrainingSnapshot::default());
        assert!(p.get("a").unwrap().is_empty());
    }

    #[test]
    fn small_boxes_rank_higher_under_max() {
        let mut cfg = SyntheticDetectorConfig::noiseless(3);
        for m in &mut cfg.classes {
            m.confidence = CurveParams::constant(0.9);
        }
        cfg.size_conditioning = Some(SizeConditioning {
            small_threshold: 0.0058,
            confidence_shift: -0.6,
            recall_factor: 1.0,
        });
        let images = [
            img("small", vec![nb(0, 0.5, 0.5, 0.05, 0.05)]),
            img("large", vec![nb(0, 0.5, 0.5, 0.4, 0.4)]),
        ];
        let refs: Vec<&ImageRecord> = images.iter().collect();
        let p = simulate_predictions(&refs, &cfg, &TrainingSnapshot::default());
        let e = EmptyImageScores::default();
        let u_small = aggregate(p.get("small").unwrap(), AggregationMethod::Max, &e);
        let u_large = aggregate(p.get("large").unwrap(), AggregationMethod::Max, &e);
        assert!((u_small - 0.7).abs() < 1e-12 && (u_large - 0.1).abs() < 1e-12);
        assert!(u_small > u_large);
    }

    fn noisy() -> SyntheticDetectorConfig {
        SyntheticDetectorConfig {
            seed: 9,
            confidence_stddev: 0.1,
            localization_jitter: 0.05,
            false_positives_per_image: 0.5,
            fp_score_mean: 0.3,
            fp_score_stddev: 0.1,
            ..SyntheticDetectorConfig::noiseless(3)
        }
    }

    #[test]
    fn deterministic_and_order_independent() {
        let images: Vec<ImageRecord> = (0..40)
            .map(|i| img(&format!("i{i}"), vec![nb(i % 3, 0.5, 0.5, 0.1, 0.2)]))
            .collect();
        let cfg = noisy();
        let snap = TrainingSnapshot { labeled_images: 230, class_annotations: vec![1, 2, 3] };
        let fwd: Vec<&ImageRecord> = images.iter().collect();
        let rev: Vec<&ImageRecord> = images.iter().rev().collect();
        let a = simulate_predictions(&fwd, &cfg, &snap);
        assert_eq!(a, simulate_predictions(&rev, &cfg, &snap));
        let other = TrainingSnapshot { labeled_images: 731, ..snap.clone() };
        assert_ne!(a, simulate_predictions(&fwd, &cfg, &other));
        let sub = simulate_predictions(&fwd[5..6], &cfg, &snap);
        assert_eq!(sub.get("i5"), a.get("i5"));
    }

    #[test]
    fn config_toml_and_validation() {
        let text = r#"
            seed = 4
            coupling = "class_annotations"
            confidence_stddev = 0.1
            [[classes]]
            recall = { v0 = 0.5, vmax = 0.95, tau = 800.0 }
            confidence = { v0 = 0.4, vmax = 0.9, tau = 800.0 }
            [size_conditioning]
            confidence_shift = -0.2
        "#;
        let cfg = SyntheticDetectorConfig::from_toml(text).unwrap();
        assert_eq!(cfg.coupling, Coupling::ClassAnnotations);
        assert_eq!(cfg.size_conditioning.unwrap().recall_factor, 0.8);
        assert!(SyntheticDetectorConfig::from_toml("classes = []").is_err());
        let decreasing = text.replace("vmax = 0.95", "vmax = 0.3");
        assert!(SyntheticDetectorConfig::from_toml(&decreasing).is_err());
        assert!(SyntheticDetectorConfig::from_toml(&format!("{text}\nbogus = 1")).is_err());
    }
}
