//! Pool-based active learning: least-confidence scoring, image-level
//! aggregation, Top-K querying, Move/Copy pool updates and the round loop.

use std::collections::BTreeSet;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, NormBox};
use crate::detector::{DetectorError, PredictionSet};
use crate::eval::EvalSummary;
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum AlError {
    #[error("detector produced no predictions for pooled image {0}")]
    DetectorCoverageGap(String),
    #[error("selected image {0} is not in the unlabeled pool")]
    SelectionNotInPool(String),
    #[error("image {0} is not in the dataset")]
    UnknownImage(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(String),
    #[error("malformed round log: {0}")]
    MalformedLog(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// One predicted box with its confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: NormBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: NormBox, score: f64) -> Option<Self> {
        (0.0..=1.0).contains(&score).then_some(Detection { bbox, score })
    }
}

/// Least confidence: `1 - s`.
pub fn box_uncertainty(d: &Detection) -> f64 {
    1.0 - d.score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMethod {
    Average,
    Max,
    Sum,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 3] = [
        AggregationMethod::Average,
        AggregationMethod::Max,
        AggregationMethod::Sum,
    ];
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregationMethod::Average => "average",
            AggregationMethod::Max => "max",
            AggregationMethod::Sum => "sum",
        })
    }
}

impl FromStr for AggregationMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" | "mean" => Ok(AggregationMethod::Average),
            "max" => Ok(AggregationMethod::Max),
            "sum" => Ok(AggregationMethod::Sum),
            _ => Err(format!("unknown aggregation method {s:?}")),
        }
    }
}

/// Image-level scores used when an image has no detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmptyImageScores {
    pub average: f64,
    pub max: f64,
    pub sum: f64,
}

impl Default for EmptyImageScores {
    fn default() -> Self {
        EmptyImageScores {
            average: 1.0,
            max: 1.0,
            sum: 0.0,
        }
    }
}

impl EmptyImageScores {
    pub fn get(&self, method: AggregationMethod) -> f64 {
        match method {
            AggregationMethod::Average => self.average,
            AggregationMethod::Max => self.max,
            AggregationMethod::Sum => self.sum,
        }
    }
}

pub fn aggregate(dets: &[Detection], method: AggregationMethod, empty: &EmptyImageScores) -> f64 {
    if dets.is_empty() {
        return empty.get(method);
    }
    let u = dets.iter().map(box_uncertainty);
    match method {
        AggregationMethod::Average => u.sum::<f64>() / dets.len() as f64,
        AggregationMethod::Max => u.fold(f64::NEG_INFINITY, f64::max),
        AggregationMethod::Sum => u.sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyReport {
    pub image_id: String,
    pub box_scores: Vec<f64>,
    pub method: AggregationMethod,
    pub score: f64,
    /// The image had no detections and `score` came from [`EmptyImageScores`].
    pub empty: bool,
}

impl UncertaintyReport {
    pub fn detections(&self) -> usize {
        self.box_scores.len()
    }
}

pub fn score_image(
    image_id: &str,
    dets: &[Detection],
    method: AggregationMethod,
    empty: &EmptyImageScores,
) -> UncertaintyReport {
    UncertaintyReport {
        image_id: image_id.to_string(),
        box_scores: dets.iter().map(box_uncertainty).collect(),
        method,
        score: aggregate(dets, method, empty),
        empty: dets.is_empty(),
    }
}

/// Scores every pooled image, in pool order. Every pooled id must have an
/// entry in `preds` (an empty list counts).
pub fn score_pool(
    preds: &PredictionSet,
    pool: &[String],
    method: AggregationMethod,
    empty: &EmptyImageScores,
) -> Result<Vec<UncertaintyReport>, AlError> {
    pool.par_iter()
        .map(|id| {
            preds
                .get(id)
                .map(|d| score_image(id, d, method, empty))
                .ok_or_else(|| AlError::DetectorCoverageGap(id.clone()))
        })
        .collect()
}

pub fn reports_csv(reports: &[UncertaintyReport]) -> String {
    let mut out = String::from("image_id,detections,uncertainty,empty\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{:.6},{}",
            r.image_id,
            r.detections(),
            r.score,
            u8::from(r.empty)
        );
    }
    out
}

fn rank_order(a: &UncertaintyReport, b: &UncertaintyReport) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.image_id.cmp(&b.image_id))
}

/// The `k` highest-scoring images, by descending score then ascending id.
pub fn query_top_k(reports: &[UncertaintyReport], k: usize) -> Vec<String> {
    let mut refs: Vec<&UncertaintyReport> = reports.iter().collect();
    if k < refs.len() {
        refs.select_nth_unstable_by(k, |a, b| rank_order(a, b));
        refs.truncate(k);
    }
    refs.sort_unstable_by(|a, b| rank_order(a, b));
    refs.into_iter().map(|r| r.image_id.clone()).collect()
}

/// Uniform random baseline: `k` ids drawn without replacement from the pool.
pub fn query_random(pool: &[String], k: usize, seed: u64, round: usize) -> Vec<String> {
    let mut ids: Vec<String> = pool.to_vec();
    ids.sort();
    let mut rng = SeedPath::new(seed).label("random-query").index(round as u64).rng();
    ids.shuffle(&mut rng);
    ids.truncate(k);
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolUpdate {
    Move,
    Copy,
}

impl fmt::Display for PoolUpdate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolUpdate::Move => "move",
            PoolUpdate::Copy => "copy",
        })
    }
}

impl FromStr for PoolUpdate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "move" => Ok(PoolUpdate::Move),
            "copy" => Ok(PoolUpdate::Copy),
            _ => Err(format!("unknown pool update {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Uncertainty(AggregationMethod),
    /// Seeded uniform sampling, used as a baseline.
    Random,
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Acquisition::Uncertainty(m) => m.fmt(f),
            Acquisition::Random => f.write_str("random"),
        }
    }
}

impl FromStr for Acquisition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("random") {
            Ok(Acquisition::Random)
        } else {
            s.parse().map(Acquisition::Uncertainty)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub acquisition: Acquisition,
    pub k: usize,
    pub update: PoolUpdate,
    pub empty_scores: EmptyImageScores,
    /// Seed for the random baseline.
    pub seed: u64,
}

impl SelectionPolicy {
    pub fn new(acquisition: Acquisition, k: usize, update: PoolUpdate) -> Self {
        SelectionPolicy {
            acquisition,
            k,
            update,
            empty_scores: EmptyImageScores::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AlError> {
        if self.k == 0 {
            return Err(AlError::InvalidPolicy("K must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy::new(
            Acquisition::Uncertainty(AggregationMethod::Max),
            500,
            PoolUpdate::Move,
        )
    }
}

/// What one round added. `selected` keeps the ranked raw selection; `net_new`
/// is the part that was not labeled before.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: Vec<String>,
    pub net_new: Vec<String>,
    pub new_class_counts: Vec<usize>,
}

/// Labeled and unlabeled id sets at round `round` (the initial state is round 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolState {
    pub round: usize,
    pub labeled: BTreeSet<String>,
    pub unlabeled: BTreeSet<String>,
    /// Cumulative annotation counts per class over the labeled set.
    pub class_counts: Vec<usize>,
    pub history: Vec<RoundRecord>,
}

fn counts_for<'a>(
    ids: impl IntoIterator<Item = &'a String>,
    oracle: &Dataset,
) -> Result<Vec<usize>, AlError> {
    let mut counts = vec![0; oracle.classes().len()];
    for id in ids {
        let rec = oracle.get(id).ok_or_else(|| AlError::UnknownImage(id.clone()))?;
        for (c, n) in rec.class_counts(counts.len()).into_iter().enumerate() {
            counts[c] += n;
        }
    }
    Ok(counts)
}

impl PoolState {
    /// The two sets must be disjoint and every id must exist in `oracle`,
    /// which supplies the revealed annotations.
    pub fn new(
        labeled: impl IntoIterator<Item = String>,
        unlabeled: impl IntoIterator<Item = String>,
        oracle: &Dataset,
    ) -> Result<Self, AlError> {
        let labeled: BTreeSet<String> = labeled.into_iter().collect();
        let unlabeled: BTreeSet<String> = unlabeled.into_iter().collect();
        if let Some(id) = labeled.intersection(&unlabeled).next() {
            return Err(AlError::InvalidPool(format!("{id} is both labeled and unlabeled")));
        }
        if let Some(id) = unlabeled.iter().find(|id| oracle.get(id).is_none()) {
            return Err(AlError::UnknownImage(id.clone()));
        }
        let class_counts = counts_for(&labeled, oracle)?;
        Ok(PoolState {
            round: 1,
            labeled,
            unlabeled,
            class_counts,
            history: Vec::new(),
        })
    }

    pub fn unlabeled_ids(&self) -> Vec<String> {
        self.unlabeled.iter().cloned().collect()
    }

    pub fn labeled_ids(&self) -> Vec<String> {
        self.labeled.iter().cloned().collect()
    }
}

pub fn apply_selection(
    state: &PoolState,
    selected: &[String],
    update: PoolUpdate,
    oracle: &Dataset,
) -> Result<PoolState, AlError> {
    if let Some(id) = selected.iter().find(|id| !state.unlabeled.contains(*id)) {
        return Err(AlError::SelectionNotInPool(id.clone()));
    }
    let mut next = state.clone();
    let mut net_new = Vec::new();
    for id in selected {
        if next.labeled.insert(id.clone()) {
            net_new.push(id.clone());
        }
        if update == PoolUpdate::Move {
            next.unlabeled.remove(id);
        }
    }
    let new_class_counts = counts_for(&net_new, oracle)?;
    for (c, n) in new_class_counts.iter().enumerate() {
        next.class_counts[c] += n;
    }
    next.history.push(RoundRecord {
        round: state.round,
        selected: selected.to_vec(),
        net_new,
        new_class_counts,
    });
    next.round += 1;
    Ok(next)
}

/// Supplies per-box detections for images at a given round.
pub trait PredictionProvider {
    fn predict(&mut self, state: &PoolState, ids: &[String]) -> Result<PredictionSet, AlError>;
}

/// Scores the model that would be trained on the current labeled set.
pub trait RoundEvaluator {
    fn evaluate(&mut self, state: &PoolState) -> Result<EvalSummary, AlError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub map: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub class_ap: Vec<Option<f64>>,
}

impl From<&EvalSummary> for RoundMetrics {
    fn from(s: &EvalSummary) -> Self {
        RoundMetrics {
            map: s.map,
            precision: s.precision,
            recall: s.recall,
            class_ap: s.class_aps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub net_new: usize,
    pub class_counts: Vec<usize>,
    pub metrics: Option<RoundMetrics>,
    #[serde(skip)]
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundLog {
    pub entries: Vec<RoundEntry>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl RoundLog {
    pub fn num_classes(&self) -> usize {
        self.entries.first().map_or(0, |e| e.class_counts.len())
    }

    /// `round,labeled,net_new,count_c0..[,mAP50,P,R,AP_c0..]`. Metric columns
    /// appear when any entry carries metrics.
    pub fn to_csv(&self) -> String {
        let classes = self.num_classes();
        let with_metrics = self.entries.iter().any(|e| e.metrics.is_some());
        let mut out = String::from("round,labeled,net_new");
        for c in 0..classes {
            let _ = write!(out, ",count_c{c}");
        }
        if with_metrics {
            out.push_str(",mAP50,P,R");
            for c in 0..classes {
                let _ = write!(out, ",AP_c{c}");
            }
        }
        out.push('\n');
        for e in &self.entries {
            let _ = write!(out, "{},{},{}", e.round, e.labeled, e.net_new);
            for n in &e.class_counts {
                let _ = write!(out, ",{n}");
            }
            if with_metrics {
                match &e.metrics {
                    Some(m) => {
                        let _ = write!(out, ",{},{:.6},{:.6}", fmt_opt(m.map), m.precision, m.recall);
                        for ap in &m.class_ap {
                            let _ = write!(out, ",{}", fmt_opt(*ap));
                        }
                    }
                    None => out.push_str(&",".repeat(3 + classes)),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`RoundLog::to_csv`] output. `unlabeled` and timing are not
    /// stored in the CSV and come back as zero.
    pub fn parse_csv(text: &str) -> Result<Self, AlError> {
        let bad = |m: String| AlError::MalformedLog(m);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty log".into()))?.split(',').collect();
        if header.len() < 3 || header[..3] != ["round", "labeled", "net_new"] {
            return Err(bad(format!("unexpected header {header:?}")));
        }
        let classes = header.iter().filter(|h| h.starts_with("count_c")).count();
        let with_metrics = header.contains(&"mAP50");
        let expected = 3 + classes + if with_metrics { 3 + classes } else { 0 };
        if header.len() != expected {
            return Err(bad(format!("header has {} columns, expected {expected}", header.len())));
        }
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad integer {s:?}")));
        let float = |s: &str| -> Result<Option<f64>, AlError> {
            let s = s.trim();
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
            }
        };
        let mut entries = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected {
                return Err(bad(format!("row {line:?} has {} columns, expected {expected}", f.len())));
            }
            let class_counts = f[3..3 + classes].iter().map(|s| int(s)).collect::<Result<Vec<_>, _>>()?;
            let metrics = if with_metrics && f[3 + classes..].iter().any(|s| !s.trim().is_empty()) {
                let m = &f[3 + classes..];
                Some(RoundMetrics {
                    map: float(m[0])?,
                    precision: float(m[1])?.unwrap_or(0.0),
                    recall: float(m[2])?.unwrap_or(0.0),
                    class_ap: m[3..].iter().map(|s| float(s)).collect::<Result<Vec<_>, _>>()?,
                })
            } else {
                None
            };
            entries.push(RoundEntry {
                round: int(f[0])?,
                labeled: int(f[1])?,
                unlabeled: 0,
                net_new: int(f[2])?,
                class_counts,
                metrics,
                elapsed: Duration::ZERO,
            });
        }
        Ok(RoundLog { entries })
    }
}

pub fn selection_manifest(ids: &[String]) -> String {
    ids.iter().map(|id| format!("{id}\n")).collect()
}

/// Picks this round's selection from the current pool.
pub fn select_round(
    state: &PoolState,
    detector: &mut dyn PredictionProvider,
    policy: &SelectionPolicy,
) -> Result<Vec<String>, AlError> {
    let pool = state.unlabeled_ids();
    match policy.acquisition {
        Acquisition::Random => Ok(query_random(&pool, policy.k, policy.seed, state.round)),
        Acquisition::Uncertainty(method) => {
            let preds = detector.predict(state, &pool)?;
            let reports = score_pool(&preds, &pool, method, &policy.empty_scores)?;
            Ok(query_top_k(&reports, policy.k))
        }
    }
}

/// Result of [`run_rounds`]: the per-round log and the final pool.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RoundLog,
    pub state: PoolState,
}

/// Runs score -> select -> annotate rounds. The log's first entry is the
/// initial state; each further entry follows one selection. Stops after
/// `max_rounds` selections or when the unlabeled pool is empty.
pub fn run_rounds(
    initial: PoolState,
    detector: &mut dyn PredictionProvider,
    policy: &SelectionPolicy,
    max_rounds: usize,
    oracle: &Dataset,
    mut evaluator: Option<&mut dyn RoundEvaluator>,
) -> Result<RunOutcome, AlError> {
    policy.validate()?;
    let mut state = initial;
    let mut log = RoundLog::default();

    let record = |state: &PoolState,
                      net_new: usize,
                      started: Instant,
                      evaluator: &mut Option<&mut dyn RoundEvaluator>|
     -> Result<RoundEntry, AlError> {
        let metrics = match evaluator {
            Some(ev) => Some(RoundMetrics::from(&ev.evaluate(state)?)),
            None => None,
        };
        Ok(RoundEntry {
            round: state.round,
            labeled: state.labeled.len(),
            unlabeled: state.unlabeled.len(),
            net_new,
            class_counts: state.class_counts.clone(),
            metrics,
            elapsed: started.elapsed(),
        })
    };

    let started = Instant::now();
    log.entries.push(record(&state, state.labeled.len(), started, &mut evaluator)?);
    for _ in 0..max_rounds {
        if state.unlabeled.is_empty() {
            break;
        }
        let started = Instant::now();
        let selected = select_round(&state, detector, policy)?;
        state = apply_selection(&state, &selected, policy.update, oracle)?;
        let net_new = state.history.last().map_or(0, |h| h.net_new.len());
        log.entries.push(record(&state, net_new, started, &mut evaluator)?);
    }
    Ok(RunOutcome { log, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassTable, ImageRecord, Split};

    fn det(s: f64) -> Detection {
        Detection::new(NormBox::new(0, 0.5, 0.5, 0.1, 0.1).unwrap(), s).unwrap()
    }

    fn report(id: &str, score: f64) -> UncertaintyReport {
        UncertaintyReport {
            image_id: id.into(),
            box_scores: vec![],
            method: AggregationMethod::Max,
            score,
            empty: false,
        }
    }

    #[test]
    fn uncertainty_is_one_minus_score() {
        assert_eq!(box_uncertainty(&det(1.0)), 0.0);
        assert_eq!(box_uncertainty(&det(0.0)), 1.0);
        assert!((box_uncertainty(&det(0.37)) - 0.63).abs() < 1e-15);
        assert!(Detection::new(NormBox::new(0, 0.5, 0.5, 0.1, 0.1).unwrap(), 1.2).is_none());
    }

    #[test]
    fn aggregation_example() {
        let d = [det(0.9), det(0.5), det(0.2)];
        let e = EmptyImageScores::default();
        let avg = aggregate(&d, AggregationMethod::Average, &e);
        assert!((avg - (0.1 + 0.5 + 0.8) / 3.0).abs() < 1e-12);
        assert!((aggregate(&d, AggregationMethod::Max, &e) - 0.8).abs() < 1e-12);
        assert!((aggregate(&d, AggregationMethod::Sum, &e) - 1.4).abs() < 1e-12);
    }

    #[test]
    fn empty_image_defaults() {
        let e = EmptyImageScores::default();
        assert_eq!(aggregate(&[], AggregationMethod::Average, &e), 1.0);
        assert_eq!(aggregate(&[], AggregationMethod::Max, &e), 1.0);
        assert_eq!(aggregate(&[], AggregationMethod::Sum, &e), 0.0);
        let r = score_image("x", &[], AggregationMethod::Max, &e);
        assert!(r.empty && r.detections() == 0);
    }

    #[test]
    fn top_k_examples() {
        let reps = vec![report("a", 0.2), report("b", 0.9), report("c", 0.5)];
        assert_eq!(query_top_k(&reps, 2), vec!["b", "c"]);
        assert_eq!(query_top_k(&reps, 10), vec!["b", "c", "a"]);
        let ties = vec![report("b", 0.5), report("a", 0.5)];
        assert_eq!(query_top_k(&ties, 1), vec!["a"]);
    }

    #[test]
    fn random_query_is_seeded() {
        let pool: Vec<String> = (0..50).map(|i| format!("p{i}")).collect();
        let a = query_random(&pool, 10, 3, 1);
        assert_eq!(a, query_random(&pool, 10, 3, 1));
        assert_ne!(a, query_random(&pool, 10, 3, 2));
        let mut rev = pool.clone();
        rev.reverse();
        assert_eq!(a, query_random(&rev, 10, 3, 1));
        assert_eq!(query_random(&pool, 100, 3, 1).len(), 50);
    }

    fn oracle(n: usize) -> Dataset {
        let imgs = (0..n)
            .map(|i| {
                ImageRecord::new(format!("i{i:04}"), 10, 10, Split::Train).with_labels(vec![
                    NormBox::new((i % 3) as u32, 0.5, 0.5, 0.1, 0.1).unwrap(),
                ])
            })
            .collect();
        Dataset::new(ClassTable::default(), imgs).unwrap()
    }

    fn ids(range: std::ops::Range<usize>) -> Vec<String> {
        range.map(|i| format!("i{i:04}")).collect()
    }

    #[test]
    fn move_and_copy_updates() {
        let ds = oracle(10);
        let s0 = PoolState::new(ids(0..2), ids(2..10), &ds).unwrap();
        assert_eq!(s0.class_counts, vec![1, 1, 0]);

        let sel = ids(2..5);
        let mv = apply_selection(&s0, &sel, PoolUpdate::Move, &ds).unwrap();
        assert_eq!((mv.labeled.len(), mv.unlabeled.len()), (5, 5));
        assert_eq!(mv.class_counts, vec![2, 2, 1]);
        assert_eq!(mv.round, 2);

        let cp = apply_selection(&s0, &sel, PoolUpdate::Copy, &ds).unwrap();
        assert_eq!((cp.labeled.len(), cp.unlabeled.len()), (5, 8));
        // reselecting labeled images under copy adds nothing
        let cp2 = apply_selection(&cp, &sel, PoolUpdate::Copy, &ds).unwrap();
        assert_eq!(cp2.labeled, cp.labeled);
        assert!(cp2.history.last().unwrap().net_new.is_empty());
        assert_eq!(cp2.class_counts, cp.class_counts);

        assert!(matches!(
            apply_selection(&mv, &ids(2..3), PoolUpdate::Move, &ds),
            Err(AlError::SelectionNotInPool(_))
        ));
    }

    #[test]
    fn pool_must_be_disjoint() {
        let ds = oracle(4);
        assert!(PoolState::new(ids(0..2), ids(1..4), &ds).is_err());
        assert!(PoolState::new(ids(0..2), vec!["nope".to_string()], &ds).is_err());
    }

    struct Constant;
    impl PredictionProvider for Constant {
        fn predict(&mut self, _: &PoolState, ids: &[String]) -> Result<PredictionSet, AlError> {
            let mut p = PredictionSet::default();
            for id in ids {
                p.insert(id, vec![det(0.5)]);
            }
            Ok(p)
        }
    }

    struct Gappy;
    impl PredictionProvider for Gappy {
        fn predict(&mut self, _: &PoolState, _: &[String]) -> Result<PredictionSet, AlError> {
            Ok(PredictionSet::default())
        }
    }

    #[test]
    fn zero_rounds_logs_initial_state() {
        let ds = oracle(10);
        let s0 = PoolState::new(ids(0..2), ids(2..10), &ds).unwrap();
        let out = run_rounds(s0, &mut Constant, &SelectionPolicy::default(), 0, &ds, None).unwrap();
        assert_eq!(out.log.entries.len(), 1);
        assert_eq!(out.log.entries[0].labeled, 2);
    }

    #[test]
    fn move_rounds_drain_pool() {
        let ds = oracle(10);
        let s0 = PoolState::new(ids(0..2), ids(2..10), &ds).unwrap();
        let policy = SelectionPolicy::new(Acquisition::Uncertainty(AggregationMethod::Max), 3, PoolUpdate::Move);
        let out = run_rounds(s0, &mut Constant, &policy, 10, &ds, None).unwrap();
        let sizes: Vec<usize> = out.log.entries.iter().map(|e| e.labeled).collect();
        assert_eq!(sizes, vec![2, 5, 8, 10]);
        // ties resolve by ascending id
        assert_eq!(out.state.history[0].selected, ids(2..5));
    }

    #[test]
    fn coverage_gap_is_an_error() {
        let ds = oracle(4);
        let s0 = PoolState::new(ids(0..1), ids(1..4), &ds).unwrap();
        assert!(matches!(
            run_rounds(s0, &mut Gappy, &SelectionPolicy::default(), 1, &ds, None),
            Err(AlError::DetectorCoverageGap(_))
        ));
    }

    #[test]
    fn log_csv_round_trip() {
        let log = RoundLog {
            entries: vec![
                RoundEntry {
                    round: 1,
                    labeled: 230,
                    unlabeled: 0,
                    net_new: 230,
                    class_counts: vec![742, 291, 110],
                    metrics: Some(RoundMetrics {
                        map: Some(0.412),
                        precision: 0.5,
                        recall: 0.25,
                        class_ap: vec![Some(0.654), Some(0.268), None],
                    }),
                    elapsed: Duration::ZERO,
                },
                RoundEntry {
                    round: 2,
                    labeled: 730,
                    unlabeled: 0,
                    net_new: 500,
                    class_counts: vec![2000, 800, 300],
                    metrics: None,
                    elapsed: Duration::ZERO,
                },
            ],
        };
        let csv = log.to_csv();
        assert!(csv.starts_with("round,labeled,net_new,count_c0,count_c1,count_c2,mAP50,P,R,AP_c0,AP_c1,AP_c2\n"));
        assert_eq!(RoundLog::parse_csv(&csv).unwrap(), log);
        assert!(RoundLog::parse_csv("a,b\n").is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("max".parse::<Acquisition>().unwrap(), Acquisition::Uncertainty(AggregationMethod::Max));
        assert_eq!("random".parse::<Acquisition>().unwrap(), Acquisition::Random);
        assert_eq!("Copy".parse::<PoolUpdate>().unwrap(), PoolUpdate::Copy);
        assert!("median".parse::<AggregationMethod>().is_err());
    }
}
