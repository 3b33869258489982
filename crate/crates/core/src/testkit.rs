//! Seeded synthetic detector simulation, adversarial fixtures and straight-line
//! reference evaluators for cross-checking the production metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    iou, save_detections, save_ground_truth, BoundingBox, ClassUniverse, Detection, DetectionSet,
    GroundTruth, GroundTruthSet, ImageId, ImageRecord, Severity, SplitTag,
};
use crate::error::{Error, Result};

/// Side of the square grid cell holding one object.
const CELL: f64 = 100.0;
/// Offset of an object inside its cell.
const MARGIN: f64 = 20.0;
/// FP scores of a calibrated detector are drawn from `[0, FP_SCORE_MAX)`.
const FP_SCORE_MAX: f64 = 0.01;

/// How detection scores relate to localisation quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "delta", rename_all = "snake_case")]
pub enum ConfidenceModel {
    /// TP score equals its IoU.
    Calibrated,
    /// Calibrated score plus `delta`, clamped to `[0, 1]`.
    Overconfident(f64),
    /// Calibrated score minus `delta`, clamped to `[0, 1]`.
    Underconfident(f64),
}

impl ConfidenceModel {
    pub fn apply(&self, calibrated: f64) -> f64 {
        match *self {
            ConfidenceModel::Calibrated => calibrated,
            ConfidenceModel::Overconfident(d) => (calibrated + d).clamp(0.0, 1.0),
            ConfidenceModel::Underconfident(d) => (calibrated - d).clamp(0.0, 1.0),
        }
    }

    fn delta(&self) -> f64 {
        match *self {
            ConfidenceModel::Calibrated => 0.0,
            ConfidenceModel::Overconfident(d) | ConfidenceModel::Underconfident(d) => d,
        }
    }
}

/// Parameters of a simulated detector and dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Images in each of VAL, ID and OOD, and in each corruption severity.
    pub num_images: usize,
    pub gts_per_image: usize,
    pub classes: u32,
    /// Probability that a ground truth is detected.
    pub tp_rate: f64,
    /// TP IoUs are drawn uniformly from this range.
    pub iou_range: (f64, f64),
    pub confidence: ConfidenceModel,
    pub fps_per_image: usize,
    /// Subtracted from the scores of detections on OOD and pseudo-OOD images.
    pub ood_shift: f64,
    /// At severity `s` the TP rate is scaled by `1 - drop * s / 5`.
    pub corruption_tp_drop: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_images: 40,
            gts_per_image: 4,
            classes: 3,
            tp_rate: 0.8,
            iou_range: (0.5, 0.95),
            confidence: ConfidenceModel::Calibrated,
            fps_per_image: 2,
            ood_shift: 0.5,
            corruption_tp_drop: 0.5,
        }
    }
}

impl SyntheticSpec {
    /// Perfect boxes, perfect scores and fully separable OOD images.
    pub fn oracle(seed: u64) -> Self {
        Self {
            seed,
            num_images: 10,
            gts_per_image: 3,
            classes: 2,
            tp_rate: 1.0,
            iou_range: (1.0, 1.0),
            confidence: ConfidenceModel::Calibrated,
            fps_per_image: 0,
            ood_shift: 1.0,
            corruption_tp_drop: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let fail = |msg: &str| Err(Error::InfeasibleSpec(msg.into()));
        if self.num_images == 0 || self.gts_per_image == 0 {
            return fail("need at least one image and one ground truth per image");
        }
        if self.classes == 0 {
            return fail("need at least one class");
        }
        if !unit(self.tp_rate) || !unit(self.corruption_tp_drop) || !unit(self.ood_shift) {
            return fail("rates and shifts must lie in [0, 1]");
        }
        let (lo, hi) = self.iou_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return fail("IoU range must satisfy 0 < low <= high <= 1");
        }
        if !unit(self.confidence.delta()) {
            return fail("confidence shift must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A simulated dataset with detector outputs on each split.
#[derive(Debug, Clone)]
pub struct SyntheticBundle {
    /// Every image of every split with its annotations.
    pub gts: GroundTruthSet,
    pub val: DetectionSet,
    /// Detections on object-masked copies of the VAL images (same image ids).
    pub pseudo_ood: DetectionSet,
    pub id: DetectionSet,
    pub corrupt: DetectionSet,
    pub ood: DetectionSet,
}

impl SyntheticBundle {
    pub fn split_gts(&self, keep: impl Fn(&SplitTag) -> bool) -> GroundTruthSet {
        self.gts.filter_images(|r| keep(&r.split))
    }

    pub fn val_gts(&self) -> GroundTruthSet {
        self.split_gts(|s| *s == SplitTag::Val)
    }

    pub fn id_gts(&self) -> GroundTruthSet {
        self.split_gts(|s| *s == SplitTag::Id)
    }

    /// Writes the bundle in the standard file formats.
    pub fn dump(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_ground_truth(&self.gts, dir.join("gt.json"))?;
        for (name, set) in [
            ("dets_val.json", &self.val),
            ("dets_pseudo_ood.json", &self.pseudo_ood),
            ("dets_id.json", &self.id),
            ("dets_corrupt.json", &self.corrupt),
            ("dets_ood.json", &self.ood),
        ] {
            save_detections(set, dir.join(name))?;
        }
        Ok(())
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    rng: ChaCha8Rng,
    cols: usize,
}

impl Generator<'_> {
    fn cell_box(&mut self, cell: usize) -> BoundingBox {
        let (col, row) = (cell % self.cols, cell / self.cols);
        let w = self.rng.gen_range(20.0..40.0);
        let h = self.rng.gen_range(20.0..40.0);
        let x = col as f64 * CELL + MARGIN;
        let y = row as f64 * CELL + MARGIN;
        BoundingBox::new(x, y, x + w, y + h).expect("positive size")
    }

    fn class(&mut self) -> u32 {
        self.rng.gen_range(1..=self.spec.classes)
    }

    fn sample_iou(&mut self) -> f64 {
        let (lo, hi) = self.spec.iou_range;
        if lo == hi {
            lo
        } else {
            self.rng.gen_range(lo..hi)
        }
    }

    /// A box of the same size shifted right so that its IoU with `gt` is `target`.
    fn shifted(gt: &BoundingBox, target: f64) -> BoundingBox {
        let dx = gt.width() * (1.0 - target) / (1.0 + target);
        gt.translate(dx, 0.0)
    }

    fn fp_score(&mut self) -> f64 {
        let raw = self.rng.gen_range(0.0..FP_SCORE_MAX);
        self.spec.confidence.apply(raw)
    }

    /// GTs and detections of one in-distribution image.
    fn object_image(&mut self, image: ImageId, tp_rate: f64, gts: &mut Vec<GroundTruth>, dets: &mut Vec<Detection>) {
        let g = self.spec.gts_per_image;
        for cell in 1..=g {
            let class_id = self.class();
            let bbox = self.cell_box(cell);
            gts.push(GroundTruth { image_id: image, class_id, bbox });
            if self.rng.gen_bool(tp_rate) {
                let target = self.sample_iou();
                let det_box = Self::shifted(&bbox, target);
                let score = self.spec.confidence.apply(iou(&det_box, &bbox));
                dets.push(Detection::new(image, class_id, score, det_box));
            }
        }
        for cell in g + 1..=g + self.spec.fps_per_image {
            let class_id = self.class();
            let bbox = self.cell_box(cell);
            let score = self.fp_score();
            dets.push(Detection::new(image, class_id, score, bbox));
        }
    }

    /// Detections on an image without any known object.
    fn ood_image(&mut self, image: ImageId, dets: &mut Vec<Detection>) {
        for cell in 1..=self.spec.gts_per_image {
            let class_id = self.class();
            let bbox = self.cell_box(cell);
            let base = self.spec.confidence.apply(self.sample_iou());
            let score = (base - self.spec.ood_shift).clamp(0.0, 1.0);
            dets.push(Detection::new(image, class_id, score, bbox));
        }
    }
}

/// Simulates a dataset and detector. Output is a pure function of the spec.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let cells = 1 + spec.gts_per_image + spec.fps_per_image;
    let cols = (cells as f64).sqrt().ceil() as usize;
    let side = (cols * CELL as usize) as u32;
    let mut gen = Generator {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        cols,
    };
    let universe = ClassUniverse::new(spec.classes)?;
    let n = spec.num_images;

    let mut images = Vec::new();
    let mut gts = Vec::new();
    let mut next_id: ImageId = 1;
    let mut take_ids = |split: SplitTag, images: &mut Vec<ImageRecord>| -> Vec<ImageId> {
        (0..n)
            .map(|_| {
                let id = next_id;
                next_id += 1;
                images.push(ImageRecord {
                    id,
                    split,
                    width: Some(side),
                    height: Some(side),
                });
                id
            })
            .collect()
    };
    let val_ids = take_ids(SplitTag::Val, &mut images);
    let id_ids = take_ids(SplitTag::Id, &mut images);
    let corrupt_ids: Vec<(Severity, Vec<ImageId>)> = [Severity::S1, Severity::S3, Severity::S5]
        .into_iter()
        .map(|s| (s, take_ids(SplitTag::Corrupt(s), &mut images)))
        .collect();
    let ood_ids = take_ids(SplitTag::Ood, &mut images);

    let (mut val, mut pseudo_ood, mut id, mut corrupt, mut ood) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &image in &val_ids {
        gen.object_image(image, spec.tp_rate, &mut gts, &mut val);
    }
    for &image in &val_ids {
        gen.ood_image(image, &mut pseudo_ood);
    }
    for &image in &id_ids {
        gen.object_image(image, spec.tp_rate, &mut gts, &mut id);
    }
    for (severity, ids) in &corrupt_ids {
        let rate = spec.tp_rate * (1.0 - spec.corruption_tp_drop * f64::from(severity.level()) / 5.0);
        for &image in ids {
            gen.object_image(image, rate, &mut gts, &mut corrupt);
        }
    }
    for &image in &ood_ids {
        gen.ood_image(image, &mut ood);
    }

    Ok(SyntheticBundle {
        gts: GroundTruthSet::new(universe.clone(), images, gts)?,
        val: DetectionSet::new(&universe, val)?,
        pseudo_ood: DetectionSet::new(&universe, pseudo_ood)?,
        id: DetectionSet::new(&universe, id)?,
        corrupt: DetectionSet::new(&universe, corrupt)?,
        ood: DetectionSet::new(&universe, ood)?,
    })
}

/// Pads every listed image to `k` detections with score-0 one-pixel boxes at the origin
/// and uniformly random classes in `1..=classes`. Dummies are appended after the
/// original detections; images already holding `k` or more are left alone.
pub fn inject_dummies(dets: &DetectionSet, images: &[ImageId], k: usize, classes: u32, seed: u64) -> DetectionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts: BTreeMap<ImageId, usize> = BTreeMap::new();
    for d in dets {
        *counts.entry(d.image_id).or_default() += 1;
    }
    let mut out = dets.detections().to_vec();
    for &image in images {
        let have = counts.get(&image).copied().unwrap_or(0);
        for _ in have..k {
            let class_id = rng.gen_range(1..=classes);
            out.push(Detection::new(image, class_id, 0.0, BoundingBox::pixel(0.0, 0.0)));
        }
    }
    DetectionSet::from_vec_unchecked(out)
}

/// Reference greedy assignment written as a literal repeated selection: take the
/// unprocessed detection with the highest score (first on ties), then the free ground
/// truth of the same image and class with the highest IoU above `tau` (first on ties).
pub fn brute_force_match(dets: &[Detection], gts: &[GroundTruth], tau: f64) -> (Vec<usize>, Vec<Option<(usize, f64)>>) {
    let mut processed = vec![false; dets.len()];
    let mut taken = vec![false; gts.len()];
    let mut labels = vec![None; dets.len()];
    let mut order = Vec::with_capacity(dets.len());
    for _ in 0..dets.len() {
        let mut pick: Option<usize> = None;
        for i in 0..dets.len() {
            if !processed[i] && pick.is_none_or(|p| dets[i].score > dets[p].score) {
                pick = Some(i);
            }
        }
        let i = pick.expect("an unprocessed detection remains");
        processed[i] = true;
        order.push(i);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..gts.len() {
            let same = gts[j].image_id == dets[i].image_id && gts[j].class_id == dets[i].class_id;
            if !same || taken[j] {
                continue;
            }
            let v = iou(&dets[i].bbox, &gts[j].bbox);
            if v > tau && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            taken[j] = true;
            labels[i] = Some((j, v));
        }
    }
    (order, labels)
}

/// Reference AP: the area under the interpolated PR curve, every value recomputed from
/// scratch at every rank.
pub fn brute_force_ap(dets: &[Detection], gts: &[GroundTruth], tau: f64) -> f64 {
    let (order, labels) = brute_force_match(dets, gts, tau);
    let n = order.len();
    let m = gts.len();
    let tp_upto = |i: usize| order[..=i].iter().filter(|&&d| labels[d].is_some()).count();
    let precision: Vec<f64> = (0..n).map(|i| tp_upto(i) as f64 / (i + 1) as f64).collect();
    let recall: Vec<f64> = (0..n)
        .map(|i| if m == 0 { 0.0 } else { tp_upto(i) as f64 / m as f64 })
        .collect();
    let mut ap = 0.0;
    for i in 0..n {
        let mut interpolated = 0.0f64;
        for k in 0..n {
            if recall[k] >= recall[i] {
                interpolated = interpolated.max(precision[k]);
            }
        }
        let previous = if i == 0 { 0.0 } else { recall[i - 1] };
        ap += (recall[i] - previous) * interpolated;
    }
    ap
}

/// Reference LRP Error; `None` when there is nothing to evaluate.
pub fn brute_force_lrp(dets: &[Detection], gts: &[GroundTruth], tau: f64) -> Option<f64> {
    let (order, labels) = brute_force_match(dets, gts, tau);
    let n_tp = labels.iter().filter(|l| l.is_some()).count();
    let n_fp = dets.len() - n_tp;
    let n_fn = gts.len() - n_tp;
    let total = n_tp + n_fp + n_fn;
    if total == 0 {
        return None;
    }
    let mut loc = 0.0;
    for &i in &order {
        if let Some((_, v)) = labels[i] {
            loc += 1.0 - (v - tau) / (1.0 - tau);
        }
    }
    Some((n_fp as f64 + n_fn as f64 + loc) / total as f64)
}

/// Reference LaECE of one class; `None` without detections.
pub fn brute_force_laece(dets: &[Detection], gts: &[GroundTruth], tau: f64, bins: usize) -> Option<f64> {
    if dets.is_empty() {
        return None;
    }
    let (_, labels) = brute_force_match(dets, gts, tau);
    let total = dets.len() as f64;
    let mut error = 0.0;
    for j in 0..bins {
        let low = j as f64 / bins as f64;
        let high = (j + 1) as f64 / bins as f64;
        let last = j + 1 == bins;
        let members: Vec<usize> = (0..dets.len())
            .filter(|&i| {
                let s = dets[i].score;
                s >= low && (s < high || (last && s <= 1.0))
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        let count = members.len() as f64;
        let conf = members.iter().map(|&i| dets[i].score).sum::<f64>() / count;
        let tps: Vec<f64> = members.iter().filter_map(|&i| labels[i].map(|(_, v)| v)).collect();
        let precision = tps.len() as f64 / count;
        let mean_iou = if tps.is_empty() {
            0.0
        } else {
            tps.iter().sum::<f64>() / tps.len() as f64
        };
        error += count / total * (conf - precision * mean_iou).abs();
    }
    Some(error)
}

/// A small single-class instance with heavily overlapping boxes on one or two images.
/// Scores come from a coarse grid so ties are frequent.
pub fn random_tiny_instance(rng: &mut ChaCha8Rng, max_dets: usize, max_gts: usize) -> (Vec<Detection>, Vec<GroundTruth>) {
    let random_box = |rng: &mut ChaCha8Rng| {
        let x = f64::from(rng.gen_range(0..6u32));
        let y = f64::from(rng.gen_range(0..6u32));
        let w = f64::from(rng.gen_range(2..7u32));
        let h = f64::from(rng.gen_range(2..7u32));
        BoundingBox::new(x, y, x + w, y + h).expect("positive size")
    };
    let n_gts = rng.gen_range(0..=max_gts);
    let n_dets = rng.gen_range(0..=max_dets);
    let gts = (0..n_gts)
        .map(|_| GroundTruth {
            image_id: rng.gen_range(1..=2),
            class_id: 1,
            bbox: random_box(rng),
        })
        .collect();
    let dets = (0..n_dets)
        .map(|_| {
            let score = if rng.gen_bool(0.5) {
                f64::from(rng.gen_range(0..=10u32)) / 10.0
            } else {
                rng.gen_range(0.0..1.0)
            };
            Detection::new(rng.gen_range(1..=2), 1, score, random_box(rng))
        })
        .collect();
    (dets, gts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accuracy::{class_ap, class_lrp, ApMode};
    use crate::calibration::laece;

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec { tp_rate: 1.5, ..Default::default() },
            SyntheticSpec { iou_range: (0.0, 0.5), ..Default::default() },
            SyntheticSpec { iou_range: (0.8, 0.5), ..Default::default() },
            SyntheticSpec { classes: 0, ..Default::default() },
            SyntheticSpec { confidence: ConfidenceModel::Overconfident(2.0), ..Default::default() },
        ];
        for spec in bad {
            assert!(matches!(generate(&spec), Err(Error::InfeasibleSpec(_))));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SyntheticSpec { seed: 11, ..Default::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.id.to_json_string(), b.id.to_json_string());
        assert_eq!(a.gts.to_json_string(), b.gts.to_json_string());
        let c = generate(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.id.to_json_string(), c.id.to_json_string());
    }

    #[test]
    fn calibrated_detector_has_tiny_laece() {
        let bundle = generate(&SyntheticSpec::default()).unwrap();
        let value = laece(&bundle.id, &bundle.id_gts(), 0.1, 25).unwrap();
        assert!(value < 0.01, "{value}");
    }

    #[test]
    fn dummy_padding() {
        let bundle = generate(&SyntheticSpec { num_images: 3, ..Default::default() }).unwrap();
        let images: Vec<ImageId> = bundle.id_gts().images().iter().map(|r| r.id).collect();
        let padded = inject_dummies(&bundle.id, &images, 10, 3, 1);
        assert_eq!(padded.len(), 30);
        assert!(padded.detections()[bundle.id.len()..].iter().all(|d| d.score == 0.0));
        let again = inject_dummies(&padded, &images, 10, 3, 1);
        assert_eq!(again.detections(), padded.detections());
    }

    #[test]
    fn oracles_agree_on_hand_instance() {
        let gt = |x: f64| GroundTruth {
            image_id: 1,
            class_id: 1,
            bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap(),
        };
        let det = |x: f64, s: f64| Detection::new(1, 1, s, BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap());
        let gts = [gt(0.0), gt(100.0)];
        let dets = [det(0.0, 0.9), det(50.0, 0.8), det(100.0, 0.7)];
        assert!((brute_force_ap(&dets, &gts, 0.5) - 5.0 / 6.0).abs() < 1e-12);
        let d: Vec<&Detection> = dets.iter().collect();
        let g: Vec<&GroundTruth> = gts.iter().collect();
        assert!((class_ap(&d, &g, 0.5, ApMode::AllPoints).unwrap().unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(brute_force_lrp(&dets, &gts, 0.5), class_lrp(&d, &g, 0.5).unwrap().map(|r| r.lrp));
        assert_eq!(brute_force_ap(&[det(50.0, 0.8)], &gts, 0.5), 0.0);
    }
}
