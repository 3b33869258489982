//! Ground truths, detections, image/split metadata and their on-disk JSON forms.
//!
//! Boxes are stored corner-based (`x_min, y_min, x_max, y_max`) and read from or
//! written to disk in the COCO `[x, y, width, height]` layout.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ImageId = u64;
pub type ClassId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::MalformedFile("box coordinates must be finite".into()));
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::MalformedFile(format!(
                "box ({x_min}, {y_min}, {x_max}, {y_max}) has negative extent"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from the COCO `[x, y, w, h]` layout.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::MalformedFile(format!(
                "bbox [{x}, {y}, {w}, {h}] has negative width or height"
            )));
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    /// A one-pixel box with its top-left corner at `(x, y)`.
    pub fn pixel(x: f64, y: f64) -> Self {
        Self {
            x_min: x,
            y_min: y,
            x_max: x + 1.0,
            y_max: y + 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Intersection over union. Zero for disjoint boxes and for any zero-area box.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub score: f64,
    pub bbox: BoundingBox,
    pub raw_logits: Option<Vec<f64>>,
    pub cov_diag: Option<[f64; 4]>,
}

impl Detection {
    pub fn new(image_id: ImageId, class_id: ClassId, score: f64, bbox: BoundingBox) -> Self {
        Self {
            image_id,
            class_id,
            score,
            bbox,
            raw_logits: None,
            cov_diag: None,
        }
    }

    /// True when the detection carries a predicted box covariance.
    pub fn is_probabilistic(&self) -> bool {
        self.cov_diag.is_some()
    }
}

/// Corruption severities present in the corrupted-ID split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    S1,
    S3,
    S5,
}

impl Severity {
    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(Severity::S1),
            3 => Some(Severity::S3),
            5 => Some(Severity::S5),
            _ => None,
        }
    }

    pub fn level(self) -> u8 {
        match self {
            Severity::S1 => 1,
            Severity::S3 => 3,
            Severity::S5 => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Id,
    Corrupt(Severity),
    Ood,
    Val,
}

impl SplitTag {
    pub fn name(&self) -> &'static str {
        match self {
            SplitTag::Id => "ID",
            SplitTag::Corrupt(_) => "CORRUPT",
            SplitTag::Ood => "OOD",
            SplitTag::Val => "VAL",
        }
    }

    pub fn severity(&self) -> Option<Severity> {
        match self {
            SplitTag::Corrupt(s) => Some(*s),
            _ => None,
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Corrupt(s) => write!(f, "CORRUPT{}", s.level()),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: ImageId,
    pub split: SplitTag,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

impl ImageRecord {
    pub fn new(id: ImageId, split: SplitTag) -> Self {
        Self {
            id,
            split,
            width: None,
            height: None,
        }
    }
}

/// Dense class ids `1..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassUniverse {
    k: u32,
    names: Option<Vec<String>>,
}

impl ClassUniverse {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::MalformedFile("class universe must hold at least one class".into()));
        }
        Ok(Self { k, names: None })
    }

    pub fn with_names(names: Vec<String>) -> Result<Self> {
        let k = u32::try_from(names.len())
            .map_err(|_| Error::MalformedFile("too many classes".into()))?;
        let mut universe = Self::new(k)?;
        universe.names = Some(names);
        Ok(universe)
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        (1..=self.k).contains(&class_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ClassId> {
        1..=self.k
    }

    pub fn name(&self, class_id: ClassId) -> String {
        self.names
            .as_ref()
            .and_then(|n| n.get(class_id as usize - 1).cloned())
            .unwrap_or_else(|| format!("class_{class_id}"))
    }

    pub fn check(&self, class_id: ClassId) -> Result<()> {
        if self.contains(class_id) {
            Ok(())
        } else {
            Err(Error::UnknownClass(class_id))
        }
    }
}

/// Validated ground truths together with the image index and class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    universe: ClassUniverse,
    images: Vec<ImageRecord>,
    image_index: HashMap<ImageId, usize>,
    annotations: Vec<GroundTruth>,
}

impl GroundTruthSet {
    pub fn new(
        universe: ClassUniverse,
        images: Vec<ImageRecord>,
        annotations: Vec<GroundTruth>,
    ) -> Result<Self> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.id, i).is_some() {
                return Err(Error::DuplicateImageId(img.id));
            }
        }
        for gt in &annotations {
            universe.check(gt.class_id)?;
            if !image_index.contains_key(&gt.image_id) {
                return Err(Error::MalformedFile(format!(
                    "annotation references unknown image {}",
                    gt.image_id
                )));
            }
            if gt.bbox.area() <= 0.0 {
                return Err(Error::MalformedFile(format!(
                    "ground truth in image {} has zero area",
                    gt.image_id
                )));
            }
        }
        Ok(Self {
            universe,
            images,
            image_index,
            annotations,
        })
    }

    pub fn universe(&self) -> &ClassUniverse {
        &self.universe
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageRecord> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn annotations(&self) -> &[GroundTruth] {
        &self.annotations
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn of_class(&self, class_id: ClassId) -> Vec<&GroundTruth> {
        self.annotations.iter().filter(|g| g.class_id == class_id).collect()
    }

    pub fn for_image(&self, image_id: ImageId) -> Vec<&GroundTruth> {
        self.annotations.iter().filter(|g| g.image_id == image_id).collect()
    }

    /// Annotation indices grouped by `(class_id, image_id)`, in input order.
    pub fn grouped(&self) -> BTreeMap<(ClassId, ImageId), Vec<usize>> {
        let mut out: BTreeMap<(ClassId, ImageId), Vec<usize>> = BTreeMap::new();
        for (i, g) in self.annotations.iter().enumerate() {
            out.entry((g.class_id, g.image_id)).or_default().push(i);
        }
        out
    }

    /// Restricts the set to the images accepted by `keep`, dropping their annotations too.
    pub fn filter_images(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Self {
        let images: Vec<ImageRecord> = self.images.iter().filter(|i| keep(i)).cloned().collect();
        let image_index: HashMap<ImageId, usize> =
            images.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let annotations = self
            .annotations
            .iter()
            .filter(|g| image_index.contains_key(&g.image_id))
            .cloned()
            .collect();
        Self {
            universe: self.universe.clone(),
            images,
            image_index,
            annotations,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: GtFile = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("ground-truth JSON: {e}")))?;
        raw.into_set()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&GtFile::from_set(self)).expect("ground truth serialises")
    }
}

/// Detections in input order. Input order is the tie-breaker wherever scores are sorted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(universe: &ClassUniverse, detections: Vec<Detection>) -> Result<Self> {
        for d in &detections {
            validate_detection(universe, d)?;
        }
        Ok(Self { detections })
    }

    /// Wraps detections that are already known to be valid.
    pub(crate) fn from_vec_unchecked(detections: Vec<Detection>) -> Self {
        Self { detections }
    }

    pub fn detections(&self) -> &[Detection] {
        &self.detections
    }

    pub fn into_vec(self) -> Vec<Detection> {
        self.detections
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Detection> {
        self.detections.iter()
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn of_class(&self, class_id: ClassId) -> Vec<&Detection> {
        self.detections.iter().filter(|d| d.class_id == class_id).collect()
    }

    /// Detections grouped per image, each group in input order.
    pub fn by_image(&self) -> BTreeMap<ImageId, Vec<&Detection>> {
        let mut out: BTreeMap<ImageId, Vec<&Detection>> = BTreeMap::new();
        for d in &self.detections {
            out.entry(d.image_id).or_default().push(d);
        }
        out
    }

    pub fn filter(&self, mut keep: impl FnMut(&Detection) -> bool) -> Self {
        Self {
            detections: self.detections.iter().filter(|d| keep(d)).cloned().collect(),
        }
    }

    pub fn from_json_str(text: &str, universe: &ClassUniverse) -> Result<Self> {
        let raw: Vec<DetRaw> = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("detection JSON: {e}")))?;
        let detections = raw
            .into_iter()
            .map(DetRaw::into_detection)
            .collect::<Result<Vec<_>>>()?;
        Self::new(universe, detections)
    }

    pub fn to_json_string(&self) -> String {
        let raw: Vec<DetRaw> = self.detections.iter().map(DetRaw::from_detection).collect();
        serde_json::to_string_pretty(&raw).expect("detections serialise")
    }
}

impl<'a> IntoIterator for &'a DetectionSet {
    type Item = &'a Detection;
    type IntoIter = std::slice::Iter<'a, Detection>;

    fn into_iter(self) -> Self::IntoIter {
        self.detections.iter()
    }
}

fn validate_detection(universe: &ClassUniverse, d: &Detection) -> Result<()> {
    universe.check(d.class_id)?;
    if !(0.0..=1.0).contains(&d.score) {
        return Err(Error::ScoreOutOfRange(d.score));
    }
    if let Some(cov) = &d.cov_diag {
        if cov.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::CovarianceNotPositive);
        }
    }
    if let Some(logits) = &d.raw_logits {
        let k = universe.k() as usize;
        if logits.len() != k && logits.len() != k + 1 {
            return Err(Error::MalformedFile(format!(
                "raw_logits has length {}, expected {} or {}",
                logits.len(),
                k,
                k + 1
            )));
        }
    }
    Ok(())
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GroundTruthSet::from_json_str(&text)
}

pub fn save_ground_truth(set: &GroundTruthSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_json_string()).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>, universe: &ClassUniverse) -> Result<DetectionSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DetectionSet::from_json_str(&text, universe)
}

pub fn save_detections(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_json_string()).map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
struct GtFile {
    categories: Vec<CategoryRaw>,
    #[serde(default)]
    images: Vec<ImageRaw>,
    #[serde(default)]
    annotations: Vec<AnnotationRaw>,
}

#[derive(Serialize, Deserialize)]
struct CategoryRaw {
    id: ClassId,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct ImageRaw {
    id: ImageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    severity: Option<u8>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRaw {
    image_id: ImageId,
    category_id: ClassId,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct DetRaw {
    image_id: ImageId,
    category_id: ClassId,
    bbox: [f64; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cov_diag: Option<[f64; 4]>,
}

impl DetRaw {
    fn into_detection(self) -> Result<Detection> {
        let [x, y, w, h] = self.bbox;
        Ok(Detection {
            image_id: self.image_id,
            class_id: self.category_id,
            score: self.score,
            bbox: BoundingBox::from_xywh(x, y, w, h)?,
            raw_logits: self.raw_logits,
            cov_diag: self.cov_diag,
        })
    }

    fn from_detection(d: &Detection) -> Self {
        Self {
            image_id: d.image_id,
            category_id: d.class_id,
            bbox: d.bbox.to_xywh(),
            score: d.score,
            raw_logits: d.raw_logits.clone(),
            cov_diag: d.cov_diag,
        }
    }
}

fn parse_split(raw: &ImageRaw) -> Result<SplitTag> {
    let name = raw.split.as_deref().unwrap_or("ID").to_ascii_uppercase();
    let tag = match name.as_str() {
        "ID" => SplitTag::Id,
        "OOD" => SplitTag::Ood,
        "VAL" => SplitTag::Val,
        "CORRUPT" => {
            let level = raw.severity.ok_or(Error::MissingSeverity(raw.id))?;
            let severity = Severity::from_level(level).ok_or_else(|| {
                Error::MalformedFile(format!("image {}: severity {level} not in {{1,3,5}}", raw.id))
            })?;
            return Ok(SplitTag::Corrupt(severity));
        }
        other => {
            return Err(Error::MalformedFile(format!(
                "image {}: unknown split `{other}`",
                raw.id
            )))
        }
    };
    if raw.severity.is_some() {
        return Err(Error::MalformedFile(format!(
            "image {}: severity given for non-corrupted split",
            raw.id
        )));
    }
    Ok(tag)
}

impl GtFile {
    fn into_set(self) -> Result<GroundTruthSet> {
        let mut categories = self.categories;
        categories.sort_by_key(|c| c.id);
        for (i, c) in categories.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(Error::MalformedFile(
                    "category ids must be dense integers 1..K".into(),
                ));
            }
        }
        let universe =
            ClassUniverse::with_names(categories.into_iter().map(|c| c.name).collect())?;
        let images = self
            .images
            .iter()
            .map(|raw| {
                Ok(ImageRecord {
                    id: raw.id,
                    split: parse_split(raw)?,
                    width: raw.width,
                    height: raw.height,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let annotations = self
            .annotations
            .into_iter()
            .map(|a| {
                let [x, y, w, h] = a.bbox;
                Ok(GroundTruth {
                    image_id: a.image_id,
                    class_id: a.category_id,
                    bbox: BoundingBox::from_xywh(x, y, w, h)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GroundTruthSet::new(universe, images, annotations)
    }

    fn from_set(set: &GroundTruthSet) -> Self {
        let universe = set.universe();
        Self {
            categories: universe
                .ids()
                .map(|id| CategoryRaw {
                    id,
                    name: universe.name(id),
                })
                .collect(),
            images: set
                .images()
                .iter()
                .map(|r| ImageRaw {
                    id: r.id,
                    width: r.width,
                    height: r.height,
                    split: Some(r.split.name().to_string()),
                    severity: r.split.severity().map(Severity::level),
                })
                .collect(),
            annotations: set
                .annotations()
                .iter()
                .map(|g| AnnotationRaw {
                    image_id: g.image_id,
                    category_id: g.class_id,
                    bbox: g.bbox.to_xywh(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_IMAGES: &str = r#"{
        "categories": [{"id": 1, "name": "car"}, {"id": 2, "name": "person"}],
        "images": [
            {"id": 10, "width": 640, "height": 480, "split": "ID"},
            {"id": 11, "width": 640, "height": 480, "split": "CORRUPT", "severity": 3}
        ],
        "annotations": [
            {"image_id": 10, "category_id": 1, "bbox": [0, 0, 10, 10]},
            {"image_id": 10, "category_id": 2, "bbox": [20, 20, 5, 8]},
            {"image_id": 11, "category_id": 1, "bbox": [1, 2, 3, 4]}
        ]
    }"#;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn loads_counts() {
        let set = GroundTruthSet::from_json_str(TWO_IMAGES).unwrap();
        assert_eq!(set.images().len(), 2);
        assert_eq!(set.len(), 3);
        assert_eq!(set.universe().k(), 2);
        assert_eq!(set.universe().name(2), "person");
        assert_eq!(set.image(11).unwrap().split, SplitTag::Corrupt(Severity::S3));
        assert_eq!(set.grouped().len(), 3);
        assert_eq!(set.of_class(1).len(), 2);
    }

    #[test]
    fn empty_annotation_list_is_valid() {
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [], "annotations": []}"#;
        let set = GroundTruthSet::from_json_str(text).unwrap();
        assert!(set.is_empty());
        assert!(set.images().is_empty());
    }

    #[test]
    fn rejects_inverted_box() {
        assert!(matches!(
            BoundingBox::new(5.0, 0.0, 1.0, 3.0),
            Err(Error::MalformedFile(_))
        ));
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 1}],
            "annotations": [{"image_id": 1, "category_id": 1, "bbox": [5, 5, -2, 3]}]}"#;
        assert!(matches!(GroundTruthSet::from_json_str(text), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn rejects_unknown_class_and_duplicate_image() {
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 1}],
            "annotations": [{"image_id": 1, "category_id": 7, "bbox": [0, 0, 2, 2]}]}"#;
        assert!(matches!(GroundTruthSet::from_json_str(text), Err(Error::UnknownClass(7))));
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 1}, {"id": 1}],
            "annotations": []}"#;
        assert!(matches!(GroundTruthSet::from_json_str(text), Err(Error::DuplicateImageId(1))));
    }

    #[test]
    fn rejects_zero_area_ground_truth() {
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 1}],
            "annotations": [{"image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 2]}]}"#;
        assert!(matches!(GroundTruthSet::from_json_str(text), Err(Error::MalformedFile(_))));
    }

    #[test]
    fn severity_rules() {
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 4, "split": "CORRUPT"}]}"#;
        assert!(matches!(GroundTruthSet::from_json_str(text), Err(Error::MissingSeverity(4))));
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 4, "split": "OOD", "severity": 5}]}"#;
        assert!(GroundTruthSet::from_json_str(text).is_err());
        let text = r#"{"categories": [{"id": 1, "name": "a"}], "images": [{"id": 4, "split": "CORRUPT", "severity": 2}]}"#;
        assert!(GroundTruthSet::from_json_str(text).is_err());
    }

    #[test]
    fn detections_keep_input_order_and_validate() {
        let universe = ClassUniverse::new(2).unwrap();
        let text = r#"[
            {"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 0.9},
            {"image_id": 1, "category_id": 2, "bbox": [1, 1, 4, 4], "score": 0.3}
        ]"#;
        let set = DetectionSet::from_json_str(text, &universe).unwrap();
        let scores: Vec<f64> = set.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.3]);

        let bad = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 1.2}]"#;
        assert!(matches!(
            DetectionSet::from_json_str(bad, &universe),
            Err(Error::ScoreOutOfRange(s)) if s == 1.2
        ));

        let prob = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 0.5,
            "cov_diag": [1, 1, 1, 1]}]"#;
        let set = DetectionSet::from_json_str(prob, &universe).unwrap();
        assert!(set.detections()[0].is_probabilistic());

        let neg = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 0.5,
            "cov_diag": [1, 0, 1, 1]}]"#;
        assert!(matches!(
            DetectionSet::from_json_str(neg, &universe),
            Err(Error::CovarianceNotPositive)
        ));

        let logits = r#"[{"image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "score": 0.5,
            "raw_logits": [0.1]}]"#;
        assert!(DetectionSet::from_json_str(logits, &universe).is_err());
    }

    #[test]
    fn iou_examples() {
        let unit = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&unit, &unit), 1.0);
        assert_eq!(iou(&unit, &bx(2.0, 2.0, 3.0, 3.0)), 0.0);
        let v = iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(1.0, 1.0, 3.0, 3.0));
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
        // touching edges
        assert_eq!(iou(&unit, &bx(1.0, 0.0, 2.0, 1.0)), 0.0);
        // zero-area boxes never overlap
        let flat = bx(0.5, 0.5, 0.5, 0.9);
        assert_eq!(iou(&flat, &unit), 0.0);
        assert_eq!(iou(&flat, &flat), 0.0);
    }

    #[test]
    fn pixel_box_cannot_reach_threshold() {
        let tau = 0.1;
        let gt = bx(0.0, 0.0, 4.0, 3.0); // area 12 > 1 / tau
        for x in 0..4 {
            for y in 0..3 {
                assert!(iou(&BoundingBox::pixel(x as f64, y as f64), &gt) < tau);
            }
        }
    }

    #[test]
    fn xywh_conversion() {
        let b = BoundingBox::from_xywh(3.0, 4.0, 5.0, 6.0).unwrap();
        assert_eq!(b, bx(3.0, 4.0, 8.0, 10.0));
        assert_eq!(b.to_xywh(), [3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn filter_images_drops_annotations() {
        let set = GroundTruthSet::from_json_str(TWO_IMAGES).unwrap();
        let only_id = set.filter_images(|r| r.split == SplitTag::Id);
        assert_eq!(only_id.images().len(), 1);
        assert_eq!(only_id.len(), 2);
        assert!(only_id.image(11).is_none());
    }
}
