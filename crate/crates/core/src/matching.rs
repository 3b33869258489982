//! Greedy, score-ordered assignment of detections to ground truths of one class.

use std::collections::HashMap;

use crate::datamodel::{iou, ClassId, Detection, DetectionSet, GroundTruth, GroundTruthSet, ImageId};
use crate::error::{Error, Result};

/// Default TP validation threshold for LRP and LaECE evaluation.
pub const DEFAULT_TAU: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchLabel {
    /// Matched to ground truth `gt` (index into the class GT slice) with the given IoU.
    Tp { gt: usize, iou: f64 },
    Fp,
}

impl MatchLabel {
    pub fn is_tp(&self) -> bool {
        matches!(self, MatchLabel::Tp { .. })
    }

    pub fn iou(&self) -> Option<f64> {
        match self {
            MatchLabel::Tp { iou, .. } => Some(*iou),
            MatchLabel::Fp => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    tau: f64,
    labels: Vec<MatchLabel>,
    order: Vec<usize>,
    gt_matched: Vec<bool>,
    n_tp: usize,
    n_fp: usize,
    n_fn: usize,
}

impl MatchAssignment {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Per-detection labels, aligned with the detection slice given to [`match_class`].
    pub fn labels(&self) -> &[MatchLabel] {
        &self.labels
    }

    /// Detection indices in processing order (descending score, input order on ties).
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn gt_matched(&self) -> &[bool] {
        &self.gt_matched
    }

    pub fn n_tp(&self) -> usize {
        self.n_tp
    }

    pub fn n_fp(&self) -> usize {
        self.n_fp
    }

    pub fn n_fn(&self) -> usize {
        self.n_fn
    }

    pub fn num_gt(&self) -> usize {
        self.gt_matched.len()
    }

    /// The binary TP/FP vector sorted by descending score.
    pub fn ranked_labels(&self) -> Vec<bool> {
        self.order.iter().map(|&i| self.labels[i].is_tp()).collect()
    }

    /// IoUs of all TPs in processing order.
    pub fn tp_ious(&self) -> Vec<f64> {
        self.order.iter().filter_map(|&i| self.labels[i].iou()).collect()
    }
}

pub fn check_tau(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

/// Indices sorted by descending score; the sort is stable so ties keep input order.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Matches detections of a single class to that class's ground truths.
///
/// A detection becomes a TP when an unassigned ground truth in the same image has
/// IoU strictly above `tau`; among several, the highest IoU wins and exact IoU ties
/// go to the lowest ground-truth index.
pub fn match_class(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    tau: f64,
) -> Result<MatchAssignment> {
    check_tau(tau)?;
    debug_assert!(
        dets.iter().all(|d| gts.first().is_none_or(|g| g.class_id == d.class_id)),
        "match_class expects a single class"
    );

    let mut gts_by_image: HashMap<ImageId, Vec<usize>> = HashMap::new();
    for (j, g) in gts.iter().enumerate() {
        gts_by_image.entry(g.image_id).or_default().push(j);
    }

    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let order = descending_order(&scores);
    let mut labels = vec![MatchLabel::Fp; dets.len()];
    let mut gt_matched = vec![false; gts.len()];

    for &i in &order {
        let det = dets[i];
        let Some(candidates) = gts_by_image.get(&det.image_id) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for &j in candidates {
            if gt_matched[j] {
                continue;
            }
            let overlap = iou(&det.bbox, &gts[j].bbox);
            if overlap <= tau {
                continue;
            }
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((j, overlap));
            }
        }
        if let Some((j, overlap)) = best {
            gt_matched[j] = true;
            labels[i] = MatchLabel::Tp { gt: j, iou: overlap };
        }
    }

    let n_tp = labels.iter().filter(|l| l.is_tp()).count();
    Ok(MatchAssignment {
        tau,
        n_fp: dets.len() - n_tp,
        n_fn: gts.len() - n_tp,
        n_tp,
        labels,
        order,
        gt_matched,
    })
}

/// One class's detections, ground truths and their assignment.
#[derive(Debug, Clone)]
pub struct ClassMatch<'a> {
    pub class_id: ClassId,
    pub dets: Vec<&'a Detection>,
    pub gts: Vec<&'a GroundTruth>,
    pub assignment: MatchAssignment,
}

/// Runs [`match_class`] for every class of the universe.
pub fn match_all<'a>(
    dets: &'a DetectionSet,
    gts: &'a GroundTruthSet,
    tau: f64,
) -> Result<Vec<ClassMatch<'a>>> {
    check_tau(tau)?;
    gts.universe()
        .ids()
        .map(|class_id| {
            let class_dets = dets.of_class(class_id);
            let class_gts = gts.of_class(class_id);
            let assignment = match_class(&class_dets, &class_gts, tau)?;
            Ok(ClassMatch {
                class_id,
                dets: class_dets,
                gts: class_gts,
                assignment,
            })
        })
        .collect()
}
