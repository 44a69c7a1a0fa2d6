//! Area-ratio scale analysis and extreme-small-object filtering.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, NormBox};

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("invalid scale policy: {0}")]
    InvalidPolicy(String),
    #[error("a histogram needs at least two bin edges, got {0}")]
    EmptyBins(usize),
    #[error("bin edges must be strictly increasing and cover (0, 1]: {0}")]
    BadEdges(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleClass {
    ExtremeSmall,
    Small,
    MediumLarge,
}

impl ScaleClass {
    pub const ALL: [ScaleClass; 3] = [ScaleClass::ExtremeSmall, ScaleClass::Small, ScaleClass::MediumLarge];
}

impl fmt::Display for ScaleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleClass::ExtremeSmall => "extreme_small",
            ScaleClass::Small => "small",
            ScaleClass::MediumLarge => "medium_large",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyImagePolicy {
    #[default]
    Keep,
    Drop,
}

/// Thresholds are fractions of the image area. Classification uses strict
/// less-than at each threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalePolicy {
    pub small_threshold: f64,
    pub extreme_small_threshold: f64,
    pub on_empty_image: EmptyImagePolicy,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        ScalePolicy {
            small_threshold: 0.0058,
            extreme_small_threshold: 0.001,
            on_empty_image: EmptyImagePolicy::Keep,
        }
    }
}

impl ScalePolicy {
    /// Accepts `0 <= extreme < small < 1`. A zero extreme threshold disables filtering.
    pub fn validate(&self) -> Result<(), ScaleError> {
        let (e, s) = (self.extreme_small_threshold, self.small_threshold);
        if !(e.is_finite() && s.is_finite() && 0.0 <= e && e < s && s < 1.0) {
            return Err(ScaleError::InvalidPolicy(format!(
                "need 0 <= extreme_small_threshold < small_threshold < 1, got {e} and {s}"
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "extreme_small < {} <= small < {} <= medium_large; empty images: {:?}",
            self.extreme_small_threshold, self.small_threshold, self.on_empty_image
        )
    }
}

pub fn area_ratio(b: &NormBox) -> f64 {
    b.w() * b.h()
}

pub fn classify_ratio(ratio: f64, policy: &ScalePolicy) -> ScaleClass {
    if ratio < policy.extreme_small_threshold {
        ScaleClass::ExtremeSmall
    } else if ratio < policy.small_threshold {
        ScaleClass::Small
    } else {
        ScaleClass::MediumLarge
    }
}

pub fn classify_scale(b: &NormBox, policy: &ScalePolicy) -> ScaleClass {
    classify_ratio(area_ratio(b), policy)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleRecord {
    pub image_id: String,
    pub box_index: usize,
    pub class_id: u32,
    pub area_ratio: f64,
    pub scale_class: ScaleClass,
}

pub fn scale_records(dataset: &Dataset, policy: &ScalePolicy) -> Vec<ScaleRecord> {
    dataset
        .images()
        .iter()
        .flat_map(|img| {
            img.labels.iter().enumerate().map(move |(i, b)| ScaleRecord {
                image_id: img.image_id.clone(),
                box_index: i,
                class_id: b.class_id(),
                area_ratio: area_ratio(b),
                scale_class: classify_scale(b, policy),
            })
        })
        .collect()
}

pub fn records_csv(records: &[ScaleRecord]) -> String {
    let mut out = String::from("image_id,box_index,class_id,area_ratio,scale_class\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.8},{}",
            r.image_id, r.box_index, r.class_id, r.area_ratio, r.scale_class
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemovalReport {
    pub policy: ScalePolicy,
    pub removed_per_class: Vec<usize>,
    pub dropped_images: Vec<String>,
    pub emptied_images: Vec<String>,
}

impl RemovalReport {
    pub fn removed_total(&self) -> usize {
        self.removed_per_class.iter().sum()
    }

    pub fn render_text(&self, class_names: &[String]) -> String {
        let mut out = format!("policy: {}\n", self.policy.describe());
        for (i, n) in self.removed_per_class.iter().enumerate() {
            let name = class_names.get(i).map(String::as_str).unwrap_or("?");
            let _ = writeln!(out, "removed {name}: {n}");
        }
        let _ = writeln!(out, "removed total: {}", self.removed_total());
        let _ = writeln!(out, "images emptied by the filter: {}", self.emptied_images.len());
        let _ = writeln!(out, "images dropped: {}", self.dropped_images.len());
        out
    }
}

/// Removes every extreme-small annotation. Surviving annotations are kept
/// verbatim and in order.
pub fn filter_dataset(
    dataset: &Dataset,
    policy: &ScalePolicy,
) -> Result<(Dataset, RemovalReport), ScaleError> {
    policy.validate()?;
    let mut removed = vec![0usize; dataset.classes().len()];
    let mut dropped = Vec::new();
    let mut emptied = Vec::new();
    let mut images = Vec::with_capacity(dataset.len());

    for img in dataset.images() {
        let mut out = img.clone();
        out.labels.retain(|b| {
            let keep = classify_scale(b, policy) != ScaleClass::ExtremeSmall;
            if !keep {
                removed[b.class_id() as usize] += 1;
            }
            keep
        });
        if out.labels.is_empty() && !img.labels.is_empty() {
            emptied.push(img.image_id.clone());
            if policy.on_empty_image == EmptyImagePolicy::Drop {
                dropped.push(img.image_id.clone());
                continue;
            }
        }
        images.push(out);
    }

    let report = RemovalReport {
        policy: *policy,
        removed_per_class: removed,
        dropped_images: dropped,
        emptied_images: emptied,
    };
    Ok((dataset.with_images(images)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub total: usize,
    pub per_class: Vec<usize>,
}

/// Half-open bins `[lo, hi)`; the last bin also includes its upper edge so a
/// full-frame box (ratio 1) is counted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleHistogram {
    pub bins: Vec<HistogramBin>,
}

impl ScaleHistogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.total).sum()
    }

    pub fn to_csv(&self) -> String {
        let classes = self.bins.first().map_or(0, |b| b.per_class.len());
        let mut out = String::from("bin_lo,bin_hi,count_total");
        for c in 0..classes {
            let _ = write!(out, ",count_c{c}");
        }
        out.push('\n');
        for b in &self.bins {
            let _ = write!(out, "{},{},{}", b.lo, b.hi, b.total);
            for c in &b.per_class {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn scale_histogram(dataset: &Dataset, bin_edges: &[f64]) -> Result<ScaleHistogram, ScaleError> {
    if bin_edges.len() < 2 {
        return Err(ScaleError::EmptyBins(bin_edges.len()));
    }
    if bin_edges.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(ScaleError::BadEdges("edges are not strictly increasing".into()));
    }
    let (first, last) = (bin_edges[0], bin_edges[bin_edges.len() - 1]);
    if !(first <= 0.0 && last >= 1.0) {
        return Err(ScaleError::BadEdges(format!("edges span [{first}, {last}]")));
    }

    let num_classes = dataset.classes().len();
    let mut bins: Vec<HistogramBin> = bin_edges
        .windows(2)
        .map(|w| HistogramBin {
            lo: w[0],
            hi: w[1],
            total: 0,
            per_class: vec![0; num_classes],
        })
        .collect();
    let last_bin = bins.len() - 1;
    for img in dataset.images() {
        for b in &img.labels {
            let r = area_ratio(b);
            // first edge e_k with r < e_k, minus one, is the bin holding r
            let k = bin_edges.partition_point(|&e| e <= r).saturating_sub(1).min(last_bin);
            bins[k].total += 1;
            bins[k].per_class[b.class_id() as usize] += 1;
        }
    }
    Ok(ScaleHistogram { bins })
}

/// Log-spaced edges from 0 through 1 with `per_decade` bins per decade
/// down to `10^-decades`, plus a leading `[0, 10^-decades)` bin.
pub fn log_edges(decades: u32, per_decade: u32) -> Vec<f64> {
    let n = decades * per_decade;
    let mut edges = vec![0.0];
    for i in 0..=n {
        let exp = -(decades as f64) + i as f64 / per_decade as f64;
        edges.push(10f64.powf(exp));
    }
    *edges.last_mut().unwrap() = 1.0;
    edges
}
