//! Mosaic4 / Mosaic9 composition and the epoch on/off schedule.
//!
//! A composite is an axis-aligned `n x n` grid (n = 2 or 3) over the output
//! frame. Interior grid lines are jittered by up to `jitter` of a cell span.
//! Each source is mapped into its cell by an axis-aligned affine placement, so
//! labels transform exactly and can be mapped back for verification.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{io_err, serialize_label_file, DatasetError, ImageRecord, NormBox};
use crate::seed::SeedPath;

/// Corner tolerance below which a label is not considered clipped.
const CLIP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("{variant:?} needs {expected} sources, got {got}")]
    WrongSourceCount {
        variant: MosaicVariant,
        expected: usize,
        got: usize,
    },
    #[error("cannot decode image {image_id}: {reason}")]
    DecodeFailure { image_id: String, reason: String },
    #[error("placement has zero scale and cannot be inverted")]
    SingularPlacement,
    #[error("inverse-mapped label falls outside the source frame")]
    OutOfFrame,
    #[error("epoch {epoch} is outside 0..{total}")]
    EpochOutOfRange { epoch: u32, total: u32 },
    #[error("invalid mosaic configuration: {0}")]
    InvalidSpec(String),
    #[error("cannot plan an epoch over an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot encode {path}: {reason}")]
    Encode { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MosaicVariant {
    Mosaic4,
    Mosaic9,
}

impl MosaicVariant {
    pub fn grid(self) -> usize {
        match self {
            MosaicVariant::Mosaic4 => 2,
            MosaicVariant::Mosaic9 => 3,
        }
    }

    pub fn source_count(self) -> usize {
        self.grid() * self.grid()
    }

    pub fn from_count(n: usize) -> Option<Self> {
        match n {
            4 => Some(MosaicVariant::Mosaic4),
            9 => Some(MosaicVariant::Mosaic9),
            _ => None,
        }
    }
}

/// How a source fills its cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellFit {
    /// Stretch the whole source onto the cell; nothing is cropped.
    #[default]
    Stretch,
    /// Scale preserving aspect ratio until the cell is covered, then crop at a
    /// random offset. Labels near the cropped edges get clipped.
    Cover,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MosaicSpec {
    pub variant: MosaicVariant,
    pub output_width: u32,
    pub output_height: u32,
    pub jitter: f64,
    pub min_visible_fraction: f64,
    pub min_pixel_size: f64,
    pub rng_seed: u64,
    pub fit: CellFit,
}

impl Default for MosaicSpec {
    fn default() -> Self {
        MosaicSpec {
            variant: MosaicVariant::Mosaic9,
            output_width: 640,
            output_height: 640,
            jitter: 0.25,
            min_visible_fraction: 0.10,
            min_pixel_size: 2.0,
            rng_seed: 0,
            fit: CellFit::Stretch,
        }
    }
}

impl MosaicSpec {
    pub fn validate(&self) -> Result<(), MosaicError> {
        let bad = |m: String| Err(MosaicError::InvalidSpec(m));
        if self.output_width < 2 || self.output_height < 2 {
            return bad(format!(
                "output size {}x{} is below 2x2",
                self.output_width, self.output_height
            ));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return bad(format!("jitter {} is outside [0, 0.5)", self.jitter));
        }
        if !(self.min_visible_fraction > 0.0 && self.min_visible_fraction <= 1.0) {
            return bad(format!(
                "min_visible_fraction {} is outside (0, 1]",
                self.min_visible_fraction
            ));
        }
        if !(self.min_pixel_size >= 0.0 && self.min_pixel_size.is_finite()) {
            return bad(format!("min_pixel_size {} is negative", self.min_pixel_size));
        }
        Ok(())
    }

    pub fn with_seed(self, rng_seed: u64) -> Self {
        MosaicSpec { rng_seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub total_epochs: u32,
    pub cutoff: u32,
}

impl ScheduleSpec {
    pub fn new(total_epochs: u32, cutoff: u32) -> Result<Self, MosaicError> {
        if total_epochs == 0 || cutoff > total_epochs {
            return Err(MosaicError::InvalidSpec(format!(
                "schedule needs E >= 1 and C <= E, got E={total_epochs} C={cutoff}"
            )));
        }
        Ok(ScheduleSpec {
            total_epochs,
            cutoff,
        })
    }

    /// Mosaic on for `usage` of the epochs: `C = round((1 - usage) * E)`.
    pub fn from_usage(total_epochs: u32, usage: f64) -> Result<Self, MosaicError> {
        if !(0.0..=1.0).contains(&usage) {
            return Err(MosaicError::InvalidSpec(format!("usage {usage} is outside [0, 1]")));
        }
        Self::new(total_epochs, ((1.0 - usage) * total_epochs as f64).round() as u32)
    }

    /// First epoch with mosaic disabled.
    pub fn switch_epoch(&self) -> u32 {
        self.total_epochs - self.cutoff
    }
}

/// `true` while `epoch < E - C`.
pub fn mosaic_schedule(epoch: u32, spec: &ScheduleSpec) -> Result<bool, MosaicError> {
    if epoch >= spec.total_epochs {
        return Err(MosaicError::EpochOutOfRange {
            epoch,
            total: spec.total_epochs,
        });
    }
    Ok(epoch < spec.switch_epoch())
}

pub fn schedule_csv(spec: &ScheduleSpec) -> String {
    let mut out = String::from("epoch,mosaic\n");
    for e in 0..spec.total_epochs {
        let _ = writeln!(out, "{e},{}", u8::from(e < spec.switch_epoch()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CellRect {
    pub const UNIT: CellRect = CellRect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };
}

/// Maps source-normalized coordinates into composite-normalized ones:
/// `x' = offset_x + scale_x * x`, same for y. `cell` is the visible window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub cell: CellRect,
}

impl Placement {
    pub fn identity() -> Self {
        Placement {
            scale_x: 1.0,
            scale_y: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
            cell: CellRect::UNIT,
        }
    }

    /// Unclipped corners of `b` in the composite frame.
    pub fn forward_corners(&self, b: &NormBox) -> (f64, f64, f64, f64) {
        let (x1, y1, x2, y2) = b.corners();
        (
            self.offset_x + self.scale_x * x1,
            self.offset_y + self.scale_y * y1,
            self.offset_x + self.scale_x * x2,
            self.offset_y + self.scale_y * y2,
        )
    }

    pub fn forward(&self, b: &NormBox) -> Option<NormBox> {
        let (x1, y1, x2, y2) = self.forward_corners(b);
        NormBox::from_corners(b.class_id(), x1, y1, x2, y2)
    }
}

pub fn inverse_map_label(label: &NormBox, placement: &Placement) -> Result<NormBox, MosaicError> {
    let Placement {
        scale_x,
        scale_y,
        offset_x,
        offset_y,
        ..
    } = *placement;
    if scale_x == 0.0 || scale_y == 0.0 || !scale_x.is_finite() || !scale_y.is_finite() {
        return Err(MosaicError::SingularPlacement);
    }
    NormBox::new(
        label.class_id(),
        (label.cx() - offset_x) / scale_x,
        (label.cy() - offset_y) / scale_y,
        label.w() / scale_x,
        label.h() / scale_y,
    )
    .map_err(|_| MosaicError::OutOfFrame)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub image_id: String,
    pub placement: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelOrigin {
    /// Index into the sample's provenance list.
    pub source: usize,
    /// Index into that source's label list.
    pub label_index: usize,
    /// Set when the label lost area to its cell boundary; such labels do not
    /// map back to their source exactly.
    pub clipped: bool,
}

/// Geometry of one composite: placements and transformed labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MosaicLayout {
    pub width: u32,
    pub height: u32,
    pub provenance: Vec<Provenance>,
    pub labels: Vec<NormBox>,
    pub origins: Vec<LabelOrigin>,
}

#[derive(Debug, Clone)]
pub struct MosaicSample {
    pub layout: MosaicLayout,
    pub image: RgbImage,
}

pub struct MosaicSource<'a> {
    pub record: &'a ImageRecord,
    pub pixels: &'a RgbImage,
}

fn grid_lines(n: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut lines = Vec::with_capacity(n + 1);
    lines.push(0.0);
    for k in 1..n {
        let u: f64 = rng.random_range(-1.0..=1.0);
        lines.push((k as f64 + jitter * u) / n as f64);
    }
    lines.push(1.0);
    lines
}

fn place(
    record: &ImageRecord,
    cell: CellRect,
    spec: &MosaicSpec,
    rng: &mut ChaCha8Rng,
) -> Placement {
    let (cw, ch) = (cell.x1 - cell.x0, cell.y1 - cell.y0);
    match spec.fit {
        CellFit::Stretch => Placement {
            scale_x: cw,
            scale_y: ch,
            offset_x: cell.x0,
            offset_y: cell.y0,
            cell,
        },
        CellFit::Cover => {
            let (ow, oh) = (spec.output_width as f64, spec.output_height as f64);
            let (sw, sh) = (record.width as f64, record.height as f64);
            let f = (cw * ow / sw).max(ch * oh / sh);
            let (scale_x, scale_y) = (sw * f / ow, sh * f / oh);
            let (ux, uy): (f64, f64) = (rng.random(), rng.random());
            Placement {
                scale_x,
                scale_y,
                offset_x: cell.x0 - ux * (scale_x - cw).max(0.0),
                offset_y: cell.y0 - uy * (scale_y - ch).max(0.0),
                cell,
            }
        }
    }
}

/// Clips a transformed label to its cell and applies the drop rules.
/// Returns the surviving label and whether it was clipped.
pub fn clip_to_cell(
    class_id: u32,
    corners: (f64, f64, f64, f64),
    cell: &CellRect,
    spec: &MosaicSpec,
) -> Option<(NormBox, bool)> {
    let (x1, y1, x2, y2) = corners;
    let full = (x2 - x1) * (y2 - y1);
    let (cx1, cy1) = (x1.max(cell.x0), y1.max(cell.y0));
    let (cx2, cy2) = (x2.min(cell.x1), y2.min(cell.y1));
    if !(cx2 > cx1 && cy2 > cy1) || full <= 0.0 {
        return None;
    }
    let visible = (cx2 - cx1) * (cy2 - cy1);
    if visible < spec.min_visible_fraction * full {
        return None;
    }
    let (w_px, h_px) = (
        (cx2 - cx1) * spec.output_width as f64,
        (cy2 - cy1) * spec.output_height as f64,
    );
    if w_px < spec.min_pixel_size || h_px < spec.min_pixel_size {
        return None;
    }
    let clipped = (cx1 - x1) > CLIP_TOL
        || (cy1 - y1) > CLIP_TOL
        || (x2 - cx2) > CLIP_TOL
        || (y2 - cy2) > CLIP_TOL;
    let label = if clipped {
        NormBox::from_corners(class_id, cx1, cy1, cx2, cy2)?
    } else {
        NormBox::from_corners(class_id, x1, y1, x2, y2)?
    };
    Some((label, clipped))
}

/// Computes placements and transformed labels without touching pixels.
pub fn layout_mosaic(sources: &[&ImageRecord], spec: &MosaicSpec) -> Result<MosaicLayout, MosaicError> {
    spec.validate()?;
    let expected = spec.variant.source_count();
    if sources.len() != expected {
        return Err(MosaicError::WrongSourceCount {
            variant: spec.variant,
            expected,
            got: sources.len(),
        });
    }
    let n = spec.variant.grid();
    let mut rng = SeedPath::new(spec.rng_seed).label("mosaic-layout").rng();
    let xs = grid_lines(n, spec.jitter, &mut rng);
    let ys = grid_lines(n, spec.jitter, &mut rng);

    let mut provenance = Vec::with_capacity(expected);
    let mut labels = Vec::new();
    let mut origins = Vec::new();
    for (i, record) in sources.iter().enumerate() {
        let (row, col) = (i / n, i % n);
        let cell = CellRect {
            x0: xs[col],
            y0: ys[row],
            x1: xs[col + 1],
            y1: ys[row + 1],
        };
        let placement = place(record, cell, spec, &mut rng);
        for (j, b) in record.labels.iter().enumerate() {
            let corners = placement.forward_corners(b);
            if let Some((label, clipped)) = clip_to_cell(b.class_id(), corners, &cell, spec) {
                labels.push(label);
                origins.push(LabelOrigin {
                    source: i,
                    label_index: j,
                    clipped,
                });
            }
        }
        provenance.push(Provenance {
            image_id: record.image_id.clone(),
            placement,
        });
    }
    Ok(MosaicLayout {
        width: spec.output_width,
        height: spec.output_height,
        provenance,
        labels,
        origins,
    })
}

/// Source taps and weight for one output coordinate along an axis.
#[derive(Clone, Copy)]
struct Tap {
    i0: u32,
    i1: u32,
    f: f64,
}

fn tap(t: f64, size: u32) -> Tap {
    let s = (t * size as f64 - 0.5).clamp(0.0, (size - 1) as f64);
    let i0 = s.floor() as u32;
    Tap {
        i0,
        i1: (i0 + 1).min(size - 1),
        f: s - i0 as f64,
    }
}

/// Renders a layout with bilinear resampling. `pixels[i]` belongs to
/// `layout.provenance[i]`.
pub fn render(layout: &MosaicLayout, pixels: &[&RgbImage]) -> RgbImage {
    let n = (layout.provenance.len() as f64).sqrt().round() as usize;
    let xs: Vec<f64> = (1..n).map(|c| layout.provenance[c].placement.cell.x0).collect();
    let ys: Vec<f64> = (1..n).map(|r| layout.provenance[r * n].placement.cell.y0).collect();
    let (w, h) = (layout.width, layout.height);
    let centre = |p: u32, size: u32| (p as f64 + 0.5) / size as f64;
    // output pixel ranges owned by each grid column and row
    let spans = |lines: &[f64], size: u32| -> Vec<std::ops::Range<u32>> {
        let owner: Vec<usize> = (0..size).map(|p| lines.partition_point(|&l| l <= centre(p, size))).collect();
        (0..n)
            .map(|k| {
                let lo = owner.partition_point(|&o| o < k) as u32;
                let hi = owner.partition_point(|&o| o <= k) as u32;
                lo..hi
            })
            .collect()
    };
    let (cols, rows) = (spans(&xs, w), spans(&ys, h));

    let mut out = RgbImage::new(w, h);
    for (idx, prov) in layout.provenance.iter().enumerate() {
        let (row, col) = (idx / n, idx % n);
        let p = &prov.placement;
        let src = pixels[idx];
        let (sw, sh) = src.dimensions();
        let xt: Vec<(u32, Tap)> = cols[col]
            .clone()
            .map(|px| (px, tap((centre(px, w) - p.offset_x) / p.scale_x, sw)))
            .collect();
        for py in rows[row].clone() {
            let ty = tap((centre(py, h) - p.offset_y) / p.scale_y, sh);
            for &(px, tx) in &xt {
                let q = |x, y| src.get_pixel(x, y).0;
                let (a, b) = (q(tx.i0, ty.i0), q(tx.i1, ty.i0));
                let (c, d) = (q(tx.i0, ty.i1), q(tx.i1, ty.i1));
                let mut v = [0u8; 3];
                for k in 0..3 {
                    let top = a[k] as f64 * (1.0 - tx.f) + b[k] as f64 * tx.f;
                    let bottom = c[k] as f64 * (1.0 - tx.f) + d[k] as f64 * tx.f;
                    v[k] = (top * (1.0 - ty.f) + bottom * ty.f).round().clamp(0.0, 255.0) as u8;
                }
                out.put_pixel(px, py, Rgb(v));
            }
        }
    }
    out
}

pub fn compose_mosaic(sources: &[MosaicSource<'_>], spec: &MosaicSpec) -> Result<MosaicSample, MosaicError> {
    let records: Vec<&ImageRecord> = sources.iter().map(|s| s.record).collect();
    let layout = layout_mosaic(&records, spec)?;
    for s in sources {
        let (w, h) = s.pixels.dimensions();
        if w == 0 || h == 0 {
            return Err(MosaicError::DecodeFailure {
                image_id: s.record.image_id.clone(),
                reason: "empty pixel buffer".into(),
            });
        }
    }
    let pixels: Vec<&RgbImage> = sources.iter().map(|s| s.pixels).collect();
    let image = render(&layout, &pixels);
    Ok(MosaicSample { layout, image })
}

pub fn load_pixels(record: &ImageRecord) -> Result<RgbImage, MosaicError> {
    let path = record.image_path.as_ref().ok_or_else(|| MosaicError::DecodeFailure {
        image_id: record.image_id.clone(),
        reason: "record has no image path".into(),
    })?;
    let img = image::open(path).map_err(|e| MosaicError::DecodeFailure {
        image_id: record.image_id.clone(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

/// Writes `images/<name>.png` and `labels/<name>.txt` under `dir`.
pub fn write_sample(dir: &Path, name: &str, sample: &MosaicSample) -> Result<(), MosaicError> {
    let images = dir.join("images");
    let labels = dir.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;
    let png = images.join(format!("{name}.png"));
    sample.image.save(&png).map_err(|e| MosaicError::Encode {
        path: png.display().to_string(),
        reason: e.to_string(),
    })?;
    let txt = labels.join(format!("{name}.txt"));
    fs::write(&txt, serialize_label_file(&sample.layout.labels)).map_err(io_err(&txt))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlanItem {
    Original { image_id: String },
    Mosaic { sources: Vec<String>, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpochPlan {
    pub epoch: u32,
    pub mosaic: bool,
    pub items: Vec<PlanItem>,
}

impl EpochPlan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,kind,seed,sources\n");
        for (i, item) in self.items.iter().enumerate() {
            match item {
                PlanItem::Original { image_id } => {
                    let _ = writeln!(out, "{i},original,,{image_id}");
                }
                PlanItem::Mosaic { sources, seed } => {
                    let _ = writeln!(out, "{i},mosaic,{seed},{}", sources.join(";"));
                }
            }
        }
        out
    }
}

/// Orders one epoch of training samples.
///
/// With mosaic on, the ids are shuffled and cut into groups of `n*n`, so each
/// composite draws its sources without replacement. A short final group is
/// topped up from a fresh shuffle of the ids it does not already contain; a
/// dataset smaller than one group repeats ids. Each composite carries its own
/// seed derived from `(rng_seed, epoch, index)`.
pub fn build_epoch_plan(
    ids: &[String],
    spec: &MosaicSpec,
    schedule: &ScheduleSpec,
    epoch: u32,
) -> Result<EpochPlan, MosaicError> {
    if ids.is_empty() {
        return Err(MosaicError::EmptyDataset);
    }
    spec.validate()?;
    let mosaic = mosaic_schedule(epoch, schedule)?;
    let base = SeedPath::new(spec.rng_seed);
    let mut rng = base.label("epoch-plan").index(u64::from(epoch)).rng();
    let mut order: Vec<String> = ids.to_vec();
    order.shuffle(&mut rng);

    if !mosaic {
        let items = order
            .into_iter()
            .map(|image_id| PlanItem::Original { image_id })
            .collect();
        return Ok(EpochPlan {
            epoch,
            mosaic,
            items,
        });
    }

    let group = spec.variant.source_count();
    let sample_seeds = base.label("mosaic-sample").index(u64::from(epoch));
    let mut items = Vec::with_capacity(order.len().div_ceil(group));
    for (i, chunk) in order.chunks(group).enumerate() {
        let mut sources = chunk.to_vec();
        if sources.len() < group {
            let mut rest: Vec<&String> = ids.iter().filter(|id| !chunk.contains(id)).collect();
            rest.shuffle(&mut rng);
            let mut fill = rest.into_iter().cloned().collect::<Vec<_>>();
            if fill.is_empty() {
                fill = chunk.to_vec();
            }
            let mut k = 0;
            while sources.len() < group {
                sources.push(fill[k % fill.len()].clone());
                k += 1;
            }
        }
        items.push(PlanItem::Mosaic {
            sources,
            seed: sample_seeds.index(i as u64).value(),
        });
    }
    Ok(EpochPlan {
        epoch,
        mosaic,
        items,
    })
}
