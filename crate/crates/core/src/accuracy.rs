//! Precision-recall curves, AP (single threshold and COCO-style), LRP Error and
//! LRP-optimal per-class score thresholds.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datamodel::{ClassId, Detection, DetectionSet, GroundTruth, GroundTruthSet};
use crate::error::{Error, Result};
use crate::matching::{check_tau, match_class, MatchAssignment};

/// IoU thresholds `0.50, 0.55, ..., 0.95` used by COCO-style AP.
pub fn coco_taus() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    precision: Vec<f64>,
    recall: Vec<f64>,
    interpolated: Vec<f64>,
}

impl PrCurve {
    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn recall(&self) -> &[f64] {
        &self.recall
    }

    pub fn interpolated(&self) -> &[f64] {
        &self.interpolated
    }

    pub fn len(&self) -> usize {
        self.recall.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recall.is_empty()
    }

    /// `(recall, interpolated precision)` pairs including the two axis end points.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let Some((&first, &last)) = self.interpolated.first().zip(self.recall.last()) else {
            return Vec::new();
        };
        let mut pts = Vec::with_capacity(self.len() + 2);
        pts.push((0.0, first));
        pts.extend(self.recall.iter().copied().zip(self.interpolated.iter().copied()));
        pts.push((last, 0.0));
        pts
    }
}

/// Builds the PR curve from score-sorted TP/FP labels and the number of ground truths.
///
/// The interpolated precision at rank `i` is the largest precision over all ranks whose
/// recall is at least the recall at `i`. With no ground truths recall is reported as 0.
pub fn pr_curve(labels: &[bool], num_gt: usize) -> Result<PrCurve> {
    if labels.is_empty() && num_gt == 0 {
        return Err(Error::EmptyCurve);
    }
    let n = labels.len();
    let mut tp_counts = Vec::with_capacity(n);
    let mut tp = 0usize;
    for &l in labels {
        tp += usize::from(l);
        tp_counts.push(tp);
    }
    let precision: Vec<f64> = tp_counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (i + 1) as f64)
        .collect();
    let recall: Vec<f64> = tp_counts
        .iter()
        .map(|&c| if num_gt == 0 { 0.0 } else { c as f64 / num_gt as f64 })
        .collect();

    let mut suffix_max = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        suffix_max[i] = suffix_max[i].max(suffix_max[i + 1]);
    }
    // ranks sharing a recall value take the maximum from the start of their group
    let mut interpolated = vec![0.0; n];
    let mut group_start = 0;
    for i in 0..n {
        if i > 0 && tp_counts[i] != tp_counts[i - 1] {
            group_start = i;
        }
        interpolated[i] = suffix_max[group_start];
    }

    Ok(PrCurve {
        precision,
        recall,
        interpolated,
    })
}

/// Exact area under the step-interpolated PR curve.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (&r, &p) in curve.recall.iter().zip(&curve.interpolated) {
        area += (r - prev_recall) * p;
        prev_recall = r;
    }
    area
}

/// COCO's 101-point sampled AP, kept for cross-checking against external tools.
pub fn average_precision_101(curve: &PrCurve) -> f64 {
    let total: f64 = (0..=100)
        .map(|t| {
            let r = t as f64 / 100.0;
            curve
                .recall
                .iter()
                .position(|&re| re >= r)
                .map_or(0.0, |i| curve.interpolated[i])
        })
        .sum();
    total / 101.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApMode {
    #[default]
    AllPoints,
    Coco101,
}

/// AP of one class at threshold `tau`; `None` when the class has neither detections nor GTs.
pub fn class_ap(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    tau: f64,
    mode: ApMode,
) -> Result<Option<f64>> {
    if dets.is_empty() && gts.is_empty() {
        return Ok(None);
    }
    let assignment = match_class(dets, gts, tau)?;
    let curve = pr_curve(&assignment.ranked_labels(), gts.len())?;
    Ok(Some(match mode {
        ApMode::AllPoints => average_precision(&curve),
        ApMode::Coco101 => average_precision_101(&curve),
    }))
}

/// Class-averaged AP at a single threshold. Empty classes are skipped.
pub fn mean_ap(dets: &DetectionSet, gts: &GroundTruthSet, tau: f64, mode: ApMode) -> Result<f64> {
    let mut values = Vec::new();
    for c in gts.universe().ids() {
        if let Some(ap) = class_ap(&dets.of_class(c), &gts.of_class(c), tau, mode)? {
            values.push(ap);
        }
    }
    Ok(mean_or_zero(&values))
}

/// COCO-style AP: class-averaged AP, averaged over `tau in {0.50, ..., 0.95}`.
pub fn coco_ap(dets: &DetectionSet, gts: &GroundTruthSet) -> Result<f64> {
    coco_ap_with(dets, gts, ApMode::AllPoints)
}

pub fn coco_ap_with(dets: &DetectionSet, gts: &GroundTruthSet, mode: ApMode) -> Result<f64> {
    let per_tau: Vec<f64> = coco_taus()
        .par_iter()
        .map(|&tau| mean_ap(dets, gts, tau, mode))
        .collect::<Result<_>>()?;
    Ok(per_tau.iter().sum::<f64>() / per_tau.len() as f64)
}

/// Per-class COCO-style AP (mean over the ten thresholds).
pub fn class_coco_ap(dets: &[&Detection], gts: &[&GroundTruth]) -> Result<Option<f64>> {
    let mut values = Vec::with_capacity(10);
    for tau in coco_taus() {
        match class_ap(dets, gts, tau, ApMode::AllPoints)? {
            Some(ap) => values.push(ap),
            None => return Ok(None),
        }
    }
    Ok(Some(mean_or_zero(&values)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpResult {
    pub lrp: f64,
    /// Mean `1 - IoU` over TPs; undefined without TPs.
    pub loc: Option<f64>,
    /// `1 - precision`; undefined without detections.
    pub fp: Option<f64>,
    /// `1 - recall`; undefined without ground truths.
    pub fn_: Option<f64>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

/// LRP Error of an assignment using localisation quality `(IoU - tau) / (1 - tau)`.
pub fn lrp(assignment: &MatchAssignment) -> Result<LrpResult> {
    let ious = assignment.tp_ious();
    lrp_from_counts(
        assignment.n_tp(),
        assignment.n_fp(),
        assignment.n_fn(),
        &ious,
        assignment.tau(),
    )
}

pub(crate) fn lrp_from_counts(
    n_tp: usize,
    n_fp: usize,
    n_fn: usize,
    tp_ious: &[f64],
    tau: f64,
) -> Result<LrpResult> {
    let total = n_tp + n_fp + n_fn;
    if total == 0 {
        return Err(Error::DegenerateInstance);
    }
    let loc_error: f64 = tp_ious.iter().map(|&v| 1.0 - (v - tau) / (1.0 - tau)).sum();
    let lrp = (n_fp as f64 + n_fn as f64 + loc_error) / total as f64;
    let raw_loc: f64 = tp_ious.iter().map(|&v| 1.0 - v).sum();
    Ok(LrpResult {
        lrp,
        loc: (n_tp > 0).then(|| raw_loc / n_tp as f64),
        fp: (n_tp + n_fp > 0).then(|| n_fp as f64 / (n_tp + n_fp) as f64),
        fn_: (n_tp + n_fn > 0).then(|| n_fn as f64 / (n_tp + n_fn) as f64),
        n_tp,
        n_fp,
        n_fn,
    })
}

/// Class LRP with counts pooled over the whole dataset; `None` for degenerate classes.
pub fn class_lrp(dets: &[&Detection], gts: &[&GroundTruth], tau: f64) -> Result<Option<LrpResult>> {
    let assignment = match_class(dets, gts, tau)?;
    match lrp(&assignment) {
        Ok(r) => Ok(Some(r)),
        Err(Error::DegenerateInstance) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Class-averaged LRP Error. Classes without GTs and detections are skipped; if every
/// class is skipped the error is 0.
pub fn mean_lrp(dets: &DetectionSet, gts: &GroundTruthSet, tau: f64) -> Result<f64> {
    let mut values = Vec::new();
    for c in gts.universe().ids() {
        if let Some(r) = class_lrp(&dets.of_class(c), &gts.of_class(c), tau)? {
            values.push(r.lrp);
        }
    }
    Ok(mean_or_zero(&values))
}

/// A score cut-off: detections with `score >= value` survive. `f64::INFINITY` rejects all.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Threshold(pub f64);

impl Threshold {
    pub const REJECT_ALL: Threshold = Threshold(f64::INFINITY);

    pub fn keeps(&self, score: f64) -> bool {
        score >= self.0
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ThresholdVisitor;

        impl<'de> Visitor<'de> for ThresholdVisitor {
            type Value = Threshold;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                match v {
                    "inf" | "+inf" | "Infinity" => Ok(Threshold::REJECT_ALL),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(ThresholdVisitor)
    }
}

/// Per-class detection score thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct DetectionThresholds(pub BTreeMap<ClassId, Threshold>);

impl DetectionThresholds {
    pub fn uniform(classes: impl IntoIterator<Item = ClassId>, value: f64) -> Self {
        Self(classes.into_iter().map(|c| (c, Threshold(value))).collect())
    }

    pub fn get(&self, class_id: ClassId) -> Option<Threshold> {
        self.0.get(&class_id).copied()
    }

    /// Keeps detections at or above their class threshold; classes without an entry keep all.
    pub fn apply(&self, dets: &DetectionSet) -> DetectionSet {
        dets.filter(|d| self.get(d.class_id).is_none_or(|t| t.keeps(d.score)))
    }
}

/// Sweeps the distinct detection scores of one class (plus "keep none") and returns the
/// threshold with minimum pooled class LRP; ties go to the larger threshold.
pub fn lrp_optimal_class_threshold(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    tau: f64,
) -> Result<Threshold> {
    let assignment = match_class(dets, gts, tau)?;
    let num_gt = gts.len();
    if dets.is_empty() || num_gt == 0 {
        return Ok(Threshold::REJECT_ALL);
    }

    // keeping none leaves only FNs
    let mut best = (Threshold::REJECT_ALL, 1.0);
    let order = assignment.order();
    let (mut n_tp, mut loc_error) = (0usize, 0.0f64);
    for (rank, &i) in order.iter().enumerate() {
        if let Some(v) = assignment.labels()[i].iou() {
            n_tp += 1;
            loc_error += 1.0 - (v - tau) / (1.0 - tau);
        }
        let score = dets[i].score;
        let group_ends = order.get(rank + 1).is_none_or(|&next| dets[next].score != score);
        if !group_ends {
            continue;
        }
        let kept = rank + 1;
        let n_fp = kept - n_tp;
        let n_fn = num_gt - n_tp;
        let value = (n_fp as f64 + n_fn as f64 + loc_error) / (n_tp + n_fp + n_fn) as f64;
        if value < best.1 {
            best = (Threshold(score), value);
        }
    }
    Ok(best.0)
}

/// LRP-optimal thresholds for every class of the universe.
pub fn lrp_optimal_thresholds(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tau: f64,
) -> Result<DetectionThresholds> {
    check_tau(tau)?;
    let per_class: Vec<(ClassId, Threshold)> = gts
        .universe()
        .ids()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&c| Ok((c, lrp_optimal_class_threshold(&dets.of_class(c), &gts.of_class(c), tau)?)))
        .collect::<Result<_>>()?;
    Ok(DetectionThresholds(per_class.into_iter().collect()))
}

/// One row of the per-class accuracy report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class_id: ClassId,
    pub name: String,
    pub num_gt: usize,
    pub num_det: usize,
    pub ap: Option<f64>,
    pub coco_ap: Option<f64>,
    pub lrp: Option<f64>,
    pub lrp_loc: Option<f64>,
    pub lrp_fp: Option<f64>,
    pub lrp_fn: Option<f64>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

pub fn class_accuracy(dets: &DetectionSet, gts: &GroundTruthSet, tau: f64) -> Result<Vec<ClassAccuracy>> {
    check_tau(tau)?;
    let universe = gts.universe();
    let classes: Vec<ClassId> = universe.ids().collect();
    classes
        .par_iter()
        .map(|&c| {
            let d = dets.of_class(c);
            let g = gts.of_class(c);
            let assignment = match_class(&d, &g, tau)?;
            let lrp_result = match lrp(&assignment) {
                Ok(r) => Some(r),
                Err(Error::DegenerateInstance) => None,
                Err(e) => return Err(e),
            };
            let ap = if d.is_empty() && g.is_empty() {
                None
            } else {
                Some(average_precision(&pr_curve(&assignment.ranked_labels(), g.len())?))
            };
            Ok(ClassAccuracy {
                class_id: c,
                name: universe.name(c),
                num_gt: g.len(),
                num_det: d.len(),
                ap,
                coco_ap: class_coco_ap(&d, &g)?,
                lrp: lrp_result.map(|r| r.lrp),
                lrp_loc: lrp_result.and_then(|r| r.loc),
                lrp_fp: lrp_result.and_then(|r| r.fp),
                lrp_fn: lrp_result.and_then(|r| r.fn_),
                n_tp: assignment.n_tp(),
                n_fp: assignment.n_fp(),
                n_fn: assignment.n_fn(),
            })
        })
        .collect()
}

pub(crate) fn mean_or_zero(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}
