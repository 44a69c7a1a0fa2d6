//! Detection evaluation: IoU, one-to-one greedy matching, all-point
//! interpolated AP, mAP at a single IoU threshold, and a max-F1 operating point.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::al::Detection;
use crate::dataset::{ImageRecord, NormBox};
use crate::detector::PredictionSet;

pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from the same corners as the intersection, so iou(a, a) is exactly 1
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    /// Only match predictions to ground truth of the same class.
    pub per_class: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            iou_threshold: 0.5,
            per_class: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredMatch {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    pub tp: bool,
    /// Position of the prediction in its image after the internal sort.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub predictions: Vec<ScoredMatch>,
    pub gt_per_class: Vec<usize>,
    /// Unmatched ground truth per image and class.
    pub fn_per_image: BTreeMap<String, Vec<usize>>,
}

fn box_key(b: &NormBox) -> [f64; 4] {
    [b.cx(), b.cy(), b.w(), b.h()]
}

/// Descending score, then class and coordinates, then input position. This
/// makes the order independent of file line order except between exact
/// duplicates, which are interchangeable.
fn prediction_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.score
            .total_cmp(&a.score)
            .then(a.bbox.class_id().cmp(&b.bbox.class_id()))
            .then_with(|| {
                box_key(&a.bbox)
                    .iter()
                    .zip(box_key(&b.bbox).iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
            .then(i.cmp(&j))
    });
    idx
}

/// Greedy matching. Within each image, predictions are visited by descending
/// score and each takes the unmatched ground-truth box with the highest IoU at
/// or above the threshold (lowest index on IoU ties). Predictions for ids that
/// are not in `gt` are ignored.
pub fn match_detections<'a>(
    preds: &PredictionSet,
    gt: impl IntoIterator<Item = &'a ImageRecord>,
    num_classes: usize,
    cfg: &MatchConfig,
) -> MatchResult {
    let mut predictions = Vec::new();
    let mut gt_per_class = vec![0usize; num_classes];
    let mut fn_per_image = BTreeMap::new();
    let empty: Vec<Detection> = Vec::new();

    for img in gt {
        for b in &img.labels {
            gt_per_class[b.class_id() as usize] += 1;
        }
        let dets = preds.get(&img.image_id).unwrap_or(&empty);
        let mut matched = vec![false; img.labels.len()];
        for (rank, i) in prediction_order(dets).into_iter().enumerate() {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gb) in img.labels.iter().enumerate() {
                if matched[g] || (cfg.per_class && gb.class_id() != d.bbox.class_id()) {
                    continue;
                }
                let v = iou(&d.bbox, gb);
                if v >= cfg.iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                matched[g] = true;
            }
            predictions.push(ScoredMatch {
                image_id: img.image_id.clone(),
                class_id: d.bbox.class_id(),
                score: d.score,
                tp: best.is_some(),
                rank,
            });
        }
        let mut fns = vec![0usize; num_classes];
        for (g, gb) in img.labels.iter().enumerate() {
            if !matched[g] {
                fns[gb.class_id() as usize] += 1;
            }
        }
        fn_per_image.insert(img.image_id.clone(), fns);
    }
    MatchResult {
        predictions,
        gt_per_class,
        fn_per_image,
    }
}

fn global_order(a: &ScoredMatch, b: &ScoredMatch) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then(a.rank.cmp(&b.rank))
}

/// All-point interpolated AP over TP/FP flags already sorted by descending
/// score. `None` when there is neither ground truth nor any prediction.
pub fn average_precision(flags: &[bool], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let curve = pr_curve(flags, total_gt);
    let mut envelope: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, env) in curve.iter().zip(&envelope) {
        ap += (p.recall - prev_recall) * env;
        prev_recall = p.recall;
    }
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

pub fn pr_curve(flags: &[bool], total_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            tp += usize::from(f);
            PrPoint {
                recall: if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 },
                precision: tp as f64 / (i + 1) as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEval {
    pub class_id: u32,
    pub ap: Option<f64>,
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub classes: Vec<ClassEval>,
    /// Mean AP over classes that have ground truth; `None` when no class has any.
    pub map: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    /// Lowest score kept at the max-F1 operating point.
    pub threshold: Option<f64>,
}

impl EvalSummary {
    pub fn class_aps(&self) -> Vec<Option<f64>> {
        self.classes.iter().map(|c| c.ap).collect()
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,AP,TP,FP,FN\n");
        for c in &self.classes {
            let name = class_names
                .get(c.class_id as usize)
                .cloned()
                .unwrap_or_else(|| c.class_id.to_string());
            let ap = c.ap.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{name},{ap},{},{},{}", c.tp, c.fp, c.fn_count);
        }
        out.push_str("mAP50,P,R\n");
        let map = self.map.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(out, "{map},{:.6},{:.6}", self.precision, self.recall);
        out
    }

    pub fn pr_curves_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,recall,precision\n");
        for c in &self.classes {
            let name = class_names
                .get(c.class_id as usize)
                .cloned()
                .unwrap_or_else(|| c.class_id.to_string());
            for p in &c.pr_curve {
                let _ = writeln!(out, "{name},{:.6},{:.6}", p.recall, p.precision);
            }
        }
        out
    }
}

/// Picks the score cut with the highest F1 over the pooled, score-sorted
/// matches. Cuts fall only between distinct scores; F1 ties keep the higher cut.
fn max_f1_point(sorted: &[&ScoredMatch], total_gt: usize) -> (f64, f64, Option<f64>) {
    let mut best = (0.0, 0.0, None, -1.0);
    let mut tp = 0usize;
    for (i, m) in sorted.iter().enumerate() {
        tp += usize::from(m.tp);
        if sorted.get(i + 1).is_some_and(|n| n.score == m.score) {
            continue;
        }
        let p = tp as f64 / (i + 1) as f64;
        let r = if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best.3 {
            best = (p, r, Some(m.score), f1);
        }
    }
    (best.0, best.1, best.2)
}

pub fn summarize_matches(m: &MatchResult) -> EvalSummary {
    let num_classes = m.gt_per_class.len();
    let mut by_class: Vec<Vec<&ScoredMatch>> = vec![Vec::new(); num_classes];
    for p in &m.predictions {
        if let Some(v) = by_class.get_mut(p.class_id as usize) {
            v.push(p);
        }
    }
    let mut classes = Vec::with_capacity(num_classes);
    for (c, mut preds) in by_class.into_iter().enumerate() {
        preds.sort_by(|a, b| global_order(a, b));
        let flags: Vec<bool> = preds.iter().map(|p| p.tp).collect();
        let gt = m.gt_per_class[c];
        let tp = flags.iter().filter(|&&f| f).count();
        classes.push(ClassEval {
            class_id: c as u32,
            ap: average_precision(&flags, gt),
            gt,
            tp,
            fp: flags.len() - tp,
            fn_count: m.fn_per_image.values().map(|v| v[c]).sum(),
            pr_curve: pr_curve(&flags, gt),
        });
    }

    let present: Vec<f64> = classes
        .iter()
        .filter(|c| c.gt > 0)
        .map(|c| c.ap.unwrap_or(0.0))
        .collect();
    let map = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);

    let mut pooled: Vec<&ScoredMatch> = m.predictions.iter().collect();
    pooled.sort_by(|a, b| global_order(a, b).then(a.class_id.cmp(&b.class_id)));
    let total_gt: usize = m.gt_per_class.iter().sum();
    let (precision, recall, threshold) = max_f1_point(&pooled, total_gt);

    EvalSummary {
        classes,
        map,
        precision,
        recall,
        threshold,
    }
}

pub fn evaluate<'a>(
    preds: &PredictionSet,
    gt: impl IntoIterator<Item = &'a ImageRecord>,
    num_classes: usize,
    cfg: &MatchConfig,
) -> EvalSummary {
    summarize_matches(&match_detections(preds, gt, num_classes, cfg))
}
