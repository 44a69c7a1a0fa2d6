//! Seeded surrogate datasets with the class balance and small-object skew of
//! the greenhouse tomato dataset, for desk-scale runs of the full pipeline.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassTable, Dataset, DatasetError, ImageRecord, NormBox, Split};
use crate::seed::SeedPath;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid surrogate spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Log-normal area-ratio model for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeModel {
    pub median_area_ratio: f64,
    /// Standard deviation of `ln(area_ratio)`.
    pub log_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSpec {
    pub seed: u64,
    pub train_images: usize,
    pub valid_images: usize,
    /// Annotation totals per class, train split.
    pub train_annotations: Vec<usize>,
    /// Annotation totals per class, valid split.
    pub valid_annotations: Vec<usize>,
    pub width: u32,
    pub height: u32,
    pub sizes: Vec<SizeModel>,
    /// Spread of the per-image box-count weights; larger means more clustering.
    pub crowding_sigma: f64,
    /// When set, only this many train images stay labeled and the rest move to the pool.
    pub initial_labeled: Option<usize>,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            seed: 0,
            train_images: 2186,
            valid_images: 548,
            train_annotations: vec![7424, 2607, 1091],
            valid_annotations: vec![1872, 620, 278],
            width: 640,
            height: 640,
            sizes: vec![
                SizeModel { median_area_ratio: 0.0035, log_sigma: 1.0 },
                SizeModel { median_area_ratio: 0.0025, log_sigma: 0.9 },
                SizeModel { median_area_ratio: 0.0012, log_sigma: 0.8 },
            ],
            crowding_sigma: 0.8,
            initial_labeled: None,
        }
    }
}

impl SurrogateSpec {
    /// A smaller dataset with the same proportions, scaled by `f`.
    pub fn scaled(f: f64) -> Self {
        let d = SurrogateSpec::default();
        let s = |n: usize| ((n as f64 * f).round() as usize).max(1);
        SurrogateSpec {
            train_images: s(d.train_images),
            valid_images: s(d.valid_images),
            train_annotations: d.train_annotations.iter().map(|&n| s(n)).collect(),
            valid_annotations: d.valid_annotations.iter().map(|&n| s(n)).collect(),
            ..d
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let classes = self.sizes.len();
        if classes == 0 || self.train_annotations.len() != classes || self.valid_annotations.len() != classes {
            return bad("sizes, train_annotations and valid_annotations need one entry per class".into());
        }
        for (name, images, counts) in [
            ("train", self.train_images, &self.train_annotations),
            ("valid", self.valid_images, &self.valid_annotations),
        ] {
            let total: usize = counts.iter().sum();
            if total < images {
                return bad(format!("{name}: {total} annotations cannot give {images} images one box each"));
            }
        }
        if let Some(n) = self.initial_labeled {
            if n > self.train_images {
                return bad(format!("initial_labeled {n} exceeds train_images {}", self.train_images));
            }
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        for s in &self.sizes {
            if !(s.median_area_ratio > 0.0 && s.median_area_ratio < 1.0 && s.log_sigma >= 0.0) {
                return bad(format!("invalid size model {s:?}"));
            }
        }
        if self.crowding_sigma.is_nan() || self.crowding_sigma < 0.0 {
            return bad("crowding_sigma must be >= 0".into());
        }
        Ok(())
    }
}

fn sample_box(rng: &mut ChaCha8Rng, class_id: u32, m: &SizeModel) -> NormBox {
    let ratio = if m.log_sigma == 0.0 {
        m.median_area_ratio
    } else {
        LogNormal::new(m.median_area_ratio.ln(), m.log_sigma)
            .expect("sigma validated")
            .sample(rng)
    }
    .clamp(5e-5, 0.25);
    let aspect: f64 = rng.random_range(0.7..1.4);
    let w = (ratio * aspect).sqrt().min(1.0);
    let h = (ratio / aspect).sqrt().min(1.0);
    let cx = rng.random_range(w / 2.0..=1.0 - w / 2.0);
    let cy = rng.random_range(h / 2.0..=1.0 - h / 2.0);
    NormBox::new(class_id, cx, cy, w, h).expect("box inside the unit square")
}

fn weighted_index(rng: &mut ChaCha8Rng, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let x = rng.random_range(0.0..total);
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

fn generate_split(
    spec: &SurrogateSpec,
    split: Split,
    prefix: &str,
    images: usize,
    counts: &[usize],
) -> Vec<ImageRecord> {
    let mut rng = SeedPath::new(spec.seed).label("surrogate").label(prefix).rng();
    let mut classes: Vec<u32> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    classes.shuffle(&mut rng);

    let mut labels: Vec<Vec<NormBox>> = vec![Vec::new(); images];
    let crowd = LogNormal::new(0.0, spec.crowding_sigma.max(1e-9)).expect("sigma validated");
    let mut cumulative = Vec::with_capacity(images);
    let mut acc = 0.0;
    for _ in 0..images {
        acc += crowd.sample(&mut rng);
        cumulative.push(acc);
    }
    for (i, &c) in classes.iter().enumerate() {
        let slot = if i < images { i } else { weighted_index(&mut rng, &cumulative) };
        let b = sample_box(&mut rng, c, &spec.sizes[c as usize]);
        labels[slot].push(b);
    }

    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| ImageRecord::new(format!("{prefix}{i:05}"), spec.width, spec.height, split).with_labels(l))
        .collect()
}

/// Builds the surrogate dataset. Every image has at least one box and the
/// per-class annotation totals match the spec exactly.
pub fn surrogate_dataset(spec: &SurrogateSpec) -> Result<Dataset, SynthError> {
    spec.validate()?;
    let mut images = generate_split(spec, Split::Train, "t", spec.train_images, &spec.train_annotations);
    images.extend(generate_split(spec, Split::Valid, "v", spec.valid_images, &spec.valid_annotations));
    if let Some(n) = spec.initial_labeled {
        let mut train: Vec<usize> = (0..spec.train_images).collect();
        train.shuffle(&mut SeedPath::new(spec.seed).label("initial-labeled").rng());
        for &i in &train[n..] {
            images[i].split = Split::Pool;
        }
    }
    let names = ClassTable::default();
    let classes = if names.len() == spec.sizes.len() {
        names
    } else {
        ClassTable::new((0..spec.sizes.len()).map(|c| format!("class{c}")).collect())?
    };
    Ok(Dataset::new(classes, images)?)
}

const PALETTE: [[u8; 3]; 6] = [
    [200, 40, 30],
    [90, 170, 60],
    [245, 215, 60],
    [60, 90, 200],
    [200, 90, 200],
    [40, 200, 200],
];

/// Foliage-colored noise with a filled ellipse per box.
pub fn render_surrogate_image(record: &ImageRecord, seed: u64) -> RgbImage {
    let mut rng = SeedPath::new(seed).label("surrogate-pixels").label(&record.image_id).rng();
    let (w, h) = (record.width, record.height);
    let base: [u8; 3] = [rng.random_range(30..70), rng.random_range(70..120), rng.random_range(30..60)];
    let mut img = RgbImage::from_fn(w, h, |x, y| {
        let t = ((x * 7 + y * 13) % 29) as u8;
        Rgb([base[0] + t, base[1] + t, base[2] + t / 2])
    });
    for b in &record.labels {
        let color = PALETTE[b.class_id() as usize % PALETTE.len()];
        let (cx, cy) = (b.cx() * w as f64, b.cy() * h as f64);
        let (rx, ry) = ((b.w() * w as f64 / 2.0).max(0.5), (b.h() * h as f64 / 2.0).max(0.5));
        let x0 = (cx - rx).floor().max(0.0) as u32;
        let x1 = ((cx + rx).ceil() as u32).min(w);
        let y0 = (cy - ry).floor().max(0.0) as u32;
        let y1 = ((cy + ry).ceil() as u32).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                if dx * dx + dy * dy <= 1.0 {
                    img.put_pixel(x, y, Rgb(color));
                }
            }
        }
    }
    img
}
