//! Core dataset types and the YOLO directory layout.
//!
//! A dataset root looks like:
//!
//! ```text
//! classes.txt             one class name per line, index = class id
//! train.txt valid.txt pool.txt   split manifests, one image id per line
//! images/<id>.<ext>       image files (only headers are read on load)
//! labels/<id>.txt         "class cx cy w h" per line, normalized
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on normalized coordinate range checks.
pub const COORD_EPS: f64 = 1e-6;

pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "webp"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoxError {
    #[error("{field} = {value} is out of range")]
    OutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: {field} = {value} is out of range")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("line {line}: class id {class_id} is not below the class count {num_classes}")]
    UnknownClass {
        line: usize,
        class_id: u64,
        num_classes: usize,
    },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad label file {path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("cannot read image header {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("no image file found for id {0}")]
    MissingImage(String),
    #[error("duplicate image id {0}")]
    DuplicateId(String),
    #[error("image {id} has invalid dimensions {width}x{height}")]
    InvalidDims { id: String, width: u32, height: u32 },
    #[error("image {id} has a label with class id {class_id}, but only {num_classes} classes are declared")]
    UnknownClass {
        id: String,
        class_id: u32,
        num_classes: usize,
    },
    #[error("invalid class table: {0}")]
    ClassTable(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Class id plus a normalized center-format box.
///
/// Coordinates are validated on construction: `cx, cy` in `[0, 1]` and
/// `w, h` in `(0, 1]`, each with a tolerance of [`COORD_EPS`]. Values inside the
/// tolerance band are clamped onto the range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    class_id: u32,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

fn check_unit(field: &'static str, value: f64, allow_zero: bool) -> Result<f64, BoxError> {
    let err = BoxError::OutOfRange { field, value };
    if !(-COORD_EPS..=1.0 + COORD_EPS).contains(&value) {
        return Err(err);
    }
    if !allow_zero && value <= 0.0 {
        return Err(err);
    }
    Ok(value.clamp(0.0, 1.0))
}

impl NormBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        Ok(NormBox {
            class_id,
            cx: check_unit("cx", cx, true)?,
            cy: check_unit("cy", cy, true)?,
            w: check_unit("w", w, false)?,
            h: check_unit("h", h, false)?,
        })
    }

    /// Builds a box from corner coordinates, clamping the corners to the unit
    /// square. Returns `None` when the clamped box has no area.
    pub fn from_corners(class_id: u32, x1: f64, y1: f64, x2: f64, y2: f64) -> Option<Self> {
        let (x1, x2) = (x1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0));
        let (y1, y2) = (y1.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
        let (w, h) = (x2 - x1, y2 - y1);
        if !(w > 0.0 && h > 0.0) {
            return None;
        }
        Some(NormBox {
            class_id,
            cx: x1 + w / 2.0,
            cy: y1 + h / 2.0,
            w,
            h,
        })
    }

    pub fn class_id(&self) -> u32 {
        self.class_id
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn with_class(self, class_id: u32) -> Self {
        NormBox { class_id, ..self }
    }

    /// `(x1, y1, x2, y2)` in normalized coordinates.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Fraction of the image covered by the box.
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

impl fmt::Display for NormBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6} {:.6} {:.6} {:.6}",
            self.class_id, self.cx, self.cy, self.w, self.h
        )
    }
}

/// Parses the numeric fields shared by label and prediction lines.
/// Returns `Ok(None)` for blank lines.
pub(crate) fn parse_fields(
    line: &str,
    line_no: usize,
    expected: usize,
) -> Result<Option<(u64, Vec<f64>)>, LabelError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.is_empty() {
        return Ok(None);
    }
    if fields.len() != expected {
        return Err(LabelError::MalformedLine {
            line: line_no,
            reason: format!("expected {expected} fields, found {}", fields.len()),
        });
    }
    let class_id: u64 = fields[0].parse().map_err(|_| LabelError::MalformedLine {
        line: line_no,
        reason: format!("class id {:?} is not a non-negative integer", fields[0]),
    })?;
    let values = fields[1..]
        .iter()
        .map(|f| {
            f.parse::<f64>().map_err(|_| LabelError::MalformedLine {
                line: line_no,
                reason: format!("{f:?} is not a number"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some((class_id, values)))
}

pub(crate) fn box_from_fields(
    class_id: u64,
    v: &[f64],
    line: usize,
    num_classes: usize,
) -> Result<NormBox, LabelError> {
    if class_id >= num_classes as u64 {
        return Err(LabelError::UnknownClass {
            line,
            class_id,
            num_classes,
        });
    }
    NormBox::new(class_id as u32, v[0], v[1], v[2], v[3]).map_err(|e| match e {
        BoxError::OutOfRange { field, value } => LabelError::OutOfRange { line, field, value },
    })
}

/// Parses a YOLO label file. Lines are 1-based in errors; blank lines are skipped.
pub fn parse_label_file(text: &str, num_classes: usize) -> Result<Vec<NormBox>, LabelError> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some((class_id, v)) = parse_fields(line, i + 1, 5)? {
            boxes.push(box_from_fields(class_id, &v, i + 1, num_classes)?);
        }
    }
    Ok(boxes)
}

pub fn serialize_label_file(labels: &[NormBox]) -> String {
    let mut out = String::new();
    for b in labels {
        let _ = writeln!(out, "{b}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    names: Vec<String>,
}

impl Default for ClassTable {
    fn default() -> Self {
        ClassTable {
            names: vec![
                "tomato".to_string(),
                "green tomato".to_string(),
                "tomato flower".to_string(),
            ],
        }
    }
}

impl ClassTable {
    pub fn new(names: Vec<String>) -> Result<Self, DatasetError> {
        if names.is_empty() {
            return Err(DatasetError::ClassTable("no classes declared".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(DatasetError::ClassTable("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(DatasetError::ClassTable(format!("duplicate class name {n:?}")));
            }
        }
        Ok(ClassTable { names })
    }

    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, class_id: u32) -> Option<&str> {
        self.names.get(class_id as usize).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Pool,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Pool];

    pub fn manifest_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Pool => "pool.txt",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Pool => "pool",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub labels: Vec<NormBox>,
    pub split: Split,
    /// Location of the pixel data, when the record came from disk.
    pub image_path: Option<PathBuf>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, split: Split) -> Self {
        ImageRecord {
            image_id: image_id.into(),
            width,
            height,
            labels: Vec::new(),
            split,
            image_path: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<NormBox>) -> Self {
        self.labels = labels;
        self
    }

    /// Annotation counts per class, sized to `num_classes`.
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for b in &self.labels {
            if let Some(c) = counts.get_mut(b.class_id() as usize) {
                *c += 1;
            }
        }
        counts
    }
}

/// An immutable, validated collection of image records.
#[derive(Debug, Clone)]
pub struct Dataset {
    classes: ClassTable,
    images: Vec<ImageRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(classes: ClassTable, images: Vec<ImageRecord>) -> Result<Self, DatasetError> {
        let mut index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if index.insert(img.image_id.clone(), i).is_some() {
                return Err(DatasetError::DuplicateId(img.image_id.clone()));
            }
            if img.width == 0 || img.height == 0 {
                return Err(DatasetError::InvalidDims {
                    id: img.image_id.clone(),
                    width: img.width,
                    height: img.height,
                });
            }
            if let Some(b) = img.labels.iter().find(|b| b.class_id() as usize >= classes.len()) {
                return Err(DatasetError::UnknownClass {
                    id: img.image_id.clone(),
                    class_id: b.class_id(),
                    num_classes: classes.len(),
                });
            }
        }
        Ok(Dataset {
            classes,
            images,
            index,
        })
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.index.get(image_id).map(|&i| &self.images[i])
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }

    pub fn split_ids(&self, split: Split) -> Vec<String> {
        self.split(split).map(|r| r.image_id.clone()).collect()
    }

    /// Rebuilds the dataset with a new image list, keeping the class table.
    pub fn with_images(&self, images: Vec<ImageRecord>) -> Result<Self, DatasetError> {
        Dataset::new(self.classes.clone(), images)
    }

    pub fn into_images(self) -> Vec<ImageRecord> {
        self.images
    }

    pub fn summarize(&self) -> DatasetSummary {
        summarize(&self.images, self.classes.len())
    }

    /// Loads a dataset root. A missing `classes.txt` falls back to the default
    /// class table; a missing manifest is an empty split; a missing label file
    /// is a background image.
    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let classes_path = root.join("classes.txt");
        let classes = if classes_path.exists() {
            ClassTable::parse(&fs::read_to_string(&classes_path).map_err(io_err(&classes_path))?)?
        } else {
            ClassTable::default()
        };

        let mut images = Vec::new();
        for split in Split::ALL {
            let manifest = root.join(split.manifest_name());
            if !manifest.exists() {
                continue;
            }
            let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
            for id in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                let image_path = find_image(&root.join("images"), id)
                    .ok_or_else(|| DatasetError::MissingImage(id.to_string()))?;
                let (width, height) =
                    image::image_dimensions(&image_path).map_err(|source| DatasetError::Image {
                        path: image_path.clone(),
                        source,
                    })?;
                let label_path = root.join("labels").join(format!("{id}.txt"));
                let labels = if label_path.exists() {
                    let text = fs::read_to_string(&label_path).map_err(io_err(&label_path))?;
                    parse_label_file(&text, classes.len()).map_err(|source| {
                        DatasetError::Label {
                            path: label_path.clone(),
                            source,
                        }
                    })?
                } else {
                    Vec::new()
                };
                images.push(ImageRecord {
                    image_id: id.to_string(),
                    width,
                    height,
                    labels,
                    split,
                    image_path: Some(image_path),
                });
            }
        }
        Dataset::new(classes, images)
    }

    /// Writes classes, manifests and label files under `root`, and copies image
    /// files whose source path is known. Records without pixel data are skipped
    /// on the image side.
    pub fn save(&self, root: &Path) -> Result<(), DatasetError> {
        let images_dir = root.join("images");
        let labels_dir = root.join("labels");
        fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
        fs::create_dir_all(&labels_dir).map_err(io_err(&labels_dir))?;

        let classes_path = root.join("classes.txt");
        fs::write(&classes_path, self.classes.to_text()).map_err(io_err(&classes_path))?;

        for split in Split::ALL {
            let manifest = root.join(split.manifest_name());
            let body: String = self.split(split).map(|r| format!("{}\n", r.image_id)).collect();
            fs::write(&manifest, body).map_err(io_err(&manifest))?;
        }

        for img in &self.images {
            let label_path = labels_dir.join(format!("{}.txt", img.image_id));
            if let Some(parent) = label_path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&label_path, serialize_label_file(&img.labels)).map_err(io_err(&label_path))?;
            if let Some(src) = &img.image_path {
                let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
                let dst = images_dir.join(format!("{}.{ext}", img.image_id));
                if dst != *src && !same_file(src, &dst) {
                    if let Some(parent) = dst.parent() {
                        fs::create_dir_all(parent).map_err(io_err(parent))?;
                    }
                    fs::copy(src, &dst).map_err(io_err(src))?;
                }
            }
        }
        Ok(())
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn find_image(images_dir: &Path, id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| images_dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SplitSummary {
    pub images: usize,
    /// Annotation count per class id.
    pub annotations: Vec<usize>,
}

impl SplitSummary {
    pub fn total_annotations(&self) -> usize {
        self.annotations.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub splits: BTreeMap<Split, SplitSummary>,
}

impl DatasetSummary {
    pub fn split(&self, split: Split) -> &SplitSummary {
        &self.splits[&split]
    }

    pub fn total_images(&self) -> usize {
        self.splits.values().map(|s| s.images).sum()
    }

    pub fn total_annotations(&self) -> usize {
        self.splits.values().map(SplitSummary::total_annotations).sum()
    }

    /// Aligned text table in the layout of a per-split image/annotation count table.
    pub fn render_text(&self, classes: &ClassTable) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:>8}", "Split", "Image");
        for name in classes.names() {
            let _ = write!(out, "{:>16}", name);
        }
        out.push('\n');
        let _ = write!(out, "{:<8}{:>8}", "Total", self.total_images());
        out.push('\n');
        for (split, s) in &self.splits {
            let _ = write!(out, "{:<8}{:>8}", split.to_string(), s.images);
            for c in &s.annotations {
                let _ = write!(out, "{:>16}", c);
            }
            out.push('\n');
        }
        out.push_str(
            "note: split sizes come from the manifests; the published validation size is \
             reported as both 578 and 548\n",
        );
        out
    }
}

pub fn summarize<'a>(
    images: impl IntoIterator<Item = &'a ImageRecord>,
    num_classes: usize,
) -> DatasetSummary {
    let mut splits: BTreeMap<Split, SplitSummary> = Split::ALL
        .iter()
        .map(|&s| {
            (
                s,
                SplitSummary {
                    images: 0,
                    annotations: vec![0; num_classes],
                },
            )
        })
        .collect();
    for img in images {
        let s = splits.get_mut(&img.split).expect("all splits present");
        s.images += 1;
        for b in &img.labels {
            if let Some(c) = s.annotations.get_mut(b.class_id() as usize) {
                *c += 1;
            }
        }
    }
    DatasetSummary { splits }
}
