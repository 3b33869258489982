//! Localisation-aware calibration error (LaECE), reliability diagrams, calibration
//! targets and the post-hoc calibrators (histogram binning, linear and isotonic
//! regression).
//!
//! Confidence space is split into `J` equal bins `[j/J, (j+1)/J)`, the last one closed.
//! A bin's performance is `precision * mean TP IoU`, which is zero when the bin holds
//! no TP. LaECE for a class is the count-weighted mean absolute gap between a bin's
//! mean confidence and its performance; the dataset value is the unweighted mean over
//! classes that have at least one detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::accuracy::mean_or_zero;
use crate::datamodel::{ClassId, ClassUniverse, Detection, DetectionSet, GroundTruthSet};
use crate::error::{Error, Result};
use crate::matching::{match_all, ClassMatch, MatchAssignment, MatchLabel};

pub const DEFAULT_BINS: usize = 25;

pub fn bin_index(score: f64, bins: usize) -> usize {
    ((score * bins as f64).floor() as usize).min(bins - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub count: usize,
    pub mean_conf: f64,
    pub precision: f64,
    pub mean_iou: Option<f64>,
}

impl Bin {
    pub fn performance(&self) -> f64 {
        self.precision * self.mean_iou.unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// Per-bin statistics of one class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    pub bins: Vec<Bin>,
    pub total: usize,
}

impl BinStats {
    pub fn laece(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .filter(|b| !b.is_empty())
            .map(|b| b.count as f64 / self.total as f64 * (b.mean_conf - b.performance()).abs())
            .sum()
    }
}

/// Bins scores with their match labels; `scores[i]` pairs with `labels[i]`.
pub fn bin_stats(scores: &[f64], labels: &[MatchLabel], bins: usize) -> BinStats {
    assert!(bins >= 1, "need at least one bin");
    assert_eq!(scores.len(), labels.len());
    #[derive(Default, Clone)]
    struct Acc {
        count: usize,
        conf: f64,
        tp: usize,
        iou: f64,
    }
    let mut acc = vec![Acc::default(); bins];
    for (&s, label) in scores.iter().zip(labels) {
        let a = &mut acc[bin_index(s, bins)];
        a.count += 1;
        a.conf += s;
        if let Some(v) = label.iou() {
            a.tp += 1;
            a.iou += v;
        }
    }
    let bins = acc
        .into_iter()
        .map(|a| {
            if a.count == 0 {
                return Bin {
                    count: 0,
                    mean_conf: 0.0,
                    precision: 0.0,
                    mean_iou: None,
                };
            }
            Bin {
                count: a.count,
                mean_conf: a.conf / a.count as f64,
                precision: a.tp as f64 / a.count as f64,
                mean_iou: (a.tp > 0).then(|| a.iou / a.tp as f64),
            }
        })
        .collect();
    BinStats {
        bins,
        total: scores.len(),
    }
}

fn class_bin_stats(m: &ClassMatch<'_>, bins: usize) -> BinStats {
    let scores: Vec<f64> = m.dets.iter().map(|d| d.score).collect();
    bin_stats(&scores, m.assignment.labels(), bins)
}

/// LaECE of one matched class.
pub fn laece_class(m: &ClassMatch<'_>, bins: usize) -> Result<f64> {
    if m.dets.is_empty() {
        return Err(Error::NoDetections(m.class_id));
    }
    Ok(class_bin_stats(m, bins).laece())
}

/// Per-class LaECE; `None` for classes without detections.
pub fn laece_per_class(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tau: f64,
    bins: usize,
) -> Result<Vec<(ClassId, Option<f64>)>> {
    let matches = match_all(dets, gts, tau)?;
    Ok(matches
        .iter()
        .map(|m| (m.class_id, laece_class(m, bins).ok()))
        .collect())
}

/// Dataset LaECE: class mean over classes with detections, 0 when there are none.
pub fn laece(dets: &DetectionSet, gts: &GroundTruthSet, tau: f64, bins: usize) -> Result<f64> {
    let values: Vec<f64> = laece_per_class(dets, gts, tau, bins)?
        .into_iter()
        .filter_map(|(_, v)| v)
        .collect();
    Ok(mean_or_zero(&values))
}

/// Per-detection target confidence: the IoU for TPs, 0 for FPs.
pub fn calibration_targets(assignment: &MatchAssignment) -> Vec<f64> {
    assignment
        .labels()
        .iter()
        .map(|l| l.iou().unwrap_or(0.0))
        .collect()
}

/// `(confidence, target)` pairs per class, ready for [`fit_calibrator`].
pub fn training_pairs(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tau: f64,
) -> Result<BTreeMap<ClassId, Vec<(f64, f64)>>> {
    Ok(match_all(dets, gts, tau)?
        .iter()
        .map(|m| {
            let targets = calibration_targets(&m.assignment);
            let pairs = m.dets.iter().map(|d| d.score).zip(targets).collect();
            (m.class_id, pairs)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibratorKind {
    #[serde(rename = "HB")]
    HistogramBinning,
    #[serde(rename = "LR")]
    LinearRegression,
    #[serde(rename = "IR")]
    IsotonicRegression,
}

impl std::str::FromStr for CalibratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HB" => Ok(Self::HistogramBinning),
            "LR" => Ok(Self::LinearRegression),
            "IR" => Ok(Self::IsotonicRegression),
            other => Err(Error::Config(format!("unknown calibrator `{other}` (HB, LR or IR)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassCalibrator {
    /// Mean target per bin; `None` bins pass the score through.
    Histogram { bins: Vec<Option<f64>> },
    Linear { slope: f64, intercept: f64 },
    /// Non-decreasing knots, linearly interpolated and clipped at the ends.
    Isotonic { x: Vec<f64>, y: Vec<f64> },
}

impl ClassCalibrator {
    pub fn identity(kind: CalibratorKind, bins: usize) -> Self {
        match kind {
            CalibratorKind::HistogramBinning => ClassCalibrator::Histogram {
                bins: vec![None; bins],
            },
            CalibratorKind::LinearRegression => ClassCalibrator::Linear {
                slope: 1.0,
                intercept: 0.0,
            },
            CalibratorKind::IsotonicRegression => ClassCalibrator::Isotonic {
                x: vec![0.0, 1.0],
                y: vec![0.0, 1.0],
            },
        }
    }

    fn kind(&self) -> CalibratorKind {
        match self {
            ClassCalibrator::Histogram { .. } => CalibratorKind::HistogramBinning,
            ClassCalibrator::Linear { .. } => CalibratorKind::LinearRegression,
            ClassCalibrator::Isotonic { .. } => CalibratorKind::IsotonicRegression,
        }
    }

    /// Calibrated confidence, clamped to `[0, 1]`.
    pub fn apply(&self, score: f64) -> f64 {
        let out = match self {
            ClassCalibrator::Histogram { bins } => {
                bins[bin_index(score, bins.len())].unwrap_or(score)
            }
            ClassCalibrator::Linear { slope, intercept } => slope * score + intercept,
            ClassCalibrator::Isotonic { x, y } => interpolate(x, y, score),
        };
        out.clamp(0.0, 1.0)
    }
}

fn interpolate(x: &[f64], y: &[f64], v: f64) -> f64 {
    let n = x.len();
    if v <= x[0] {
        return y[0];
    }
    if v >= x[n - 1] {
        return y[n - 1];
    }
    // first knot strictly greater than v
    let hi = x.partition_point(|&k| k <= v);
    let lo = hi - 1;
    if x[lo] == v {
        return y[lo];
    }
    let t = (v - x[lo]) / (x[hi] - x[lo]);
    y[lo] + t * (y[hi] - y[lo])
}

fn fit_histogram(pairs: &[(f64, f64)], bins: usize) -> ClassCalibrator {
    let mut sums = vec![(0.0, 0usize); bins];
    for &(p, t) in pairs {
        let s = &mut sums[bin_index(p, bins)];
        s.0 += t;
        s.1 += 1;
    }
    ClassCalibrator::Histogram {
        bins: sums
            .into_iter()
            .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
            .collect(),
    }
}

fn fit_linear(pairs: &[(f64, f64)]) -> ClassCalibrator {
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return ClassCalibrator::Linear {
            slope: 0.0,
            intercept: mean_y,
        };
    }
    let slope = sxy / sxx;
    ClassCalibrator::Linear {
        slope,
        intercept: mean_y - slope * mean_x,
    }
}

/// Pool-adjacent-violators; identical inputs are pooled before the pass.
fn fit_isotonic(pairs: &[(f64, f64)]) -> ClassCalibrator {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    struct Block {
        sum: f64,
        weight: f64,
        xs: Vec<f64>,
    }
    impl Block {
        fn mean(&self) -> f64 {
            self.sum / self.weight
        }
    }

    let mut blocks: Vec<Block> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i].0;
        let mut block = Block {
            sum: 0.0,
            weight: 0.0,
            xs: vec![x],
        };
        while i < sorted.len() && sorted[i].0 == x {
            block.sum += sorted[i].1;
            block.weight += 1.0;
            i += 1;
        }
        blocks.push(block);
        while blocks.len() > 1 {
            let n = blocks.len();
            if blocks[n - 2].mean() <= blocks[n - 1].mean() {
                break;
            }
            let last = blocks.pop().expect("two blocks");
            let prev = blocks.last_mut().expect("two blocks");
            prev.sum += last.sum;
            prev.weight += last.weight;
            prev.xs.extend(last.xs);
        }
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    for b in &blocks {
        let m = b.mean();
        for &v in &b.xs {
            x.push(v);
            y.push(m);
        }
    }
    ClassCalibrator::Isotonic { x, y }
}

fn fit_class(kind: CalibratorKind, pairs: &[(f64, f64)], bins: usize) -> ClassCalibrator {
    if pairs.is_empty() {
        return ClassCalibrator::identity(kind, bins);
    }
    match kind {
        CalibratorKind::HistogramBinning => fit_histogram(pairs, bins),
        CalibratorKind::LinearRegression => fit_linear(pairs),
        CalibratorKind::IsotonicRegression => fit_isotonic(pairs),
    }
}

/// Per-class map from detection confidence to calibrated confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratorModel {
    pub kind: CalibratorKind,
    pub classes: BTreeMap<ClassId, ClassCalibrator>,
}

impl CalibratorModel {
    pub fn identity(universe: &ClassUniverse) -> Self {
        let kind = CalibratorKind::LinearRegression;
        Self {
            kind,
            classes: universe
                .ids()
                .map(|c| (c, ClassCalibrator::identity(kind, DEFAULT_BINS)))
                .collect(),
        }
    }

    pub fn class(&self, class_id: ClassId) -> Result<&ClassCalibrator> {
        self.classes
            .get(&class_id)
            .ok_or(Error::MissingClassModel(class_id))
    }

    pub fn covers(&self, universe: &ClassUniverse) -> bool {
        universe.ids().all(|c| self.classes.contains_key(&c))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibrator serialises")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("calibrator JSON: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for (c, m) in &self.classes {
            if m.kind() != self.kind {
                return Err(Error::MalformedFile(format!(
                    "class {c} parameters do not match calibrator kind {:?}",
                    self.kind
                )));
            }
            match m {
                ClassCalibrator::Histogram { bins } if bins.is_empty() => {
                    return Err(Error::MalformedFile(format!("class {c}: no histogram bins")));
                }
                ClassCalibrator::Isotonic { x, y } if x.is_empty() || x.len() != y.len() => {
                    return Err(Error::MalformedFile(format!("class {c}: bad isotonic knots")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Fits one calibrator per class of `universe`; classes without pairs get the identity.
pub fn fit_calibrator(
    kind: CalibratorKind,
    pairs: &BTreeMap<ClassId, Vec<(f64, f64)>>,
    universe: &ClassUniverse,
    bins: usize,
) -> CalibratorModel {
    let classes = universe
        .ids()
        .map(|c| {
            let class_pairs = pairs.get(&c).map(Vec::as_slice).unwrap_or(&[]);
            (c, fit_class(kind, class_pairs, bins))
        })
        .collect();
    CalibratorModel { kind, classes }
}

/// Replaces every score by its calibrated value; order, boxes and raw fields are kept.
pub fn apply_calibrator(model: &CalibratorModel, dets: &DetectionSet) -> Result<DetectionSet> {
    let out = dets
        .iter()
        .map(|d| {
            let calibrated = model.class(d.class_id)?.apply(d.score);
            Ok(Detection {
                score: calibrated,
                ..d.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionSet::from_vec_unchecked(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBar {
    pub bin_low: f64,
    pub bin_high: f64,
    /// Class-averaged mean confidence; `None` when no class has a detection in the bin.
    pub mean_conf: Option<f64>,
    /// Class-averaged `precision * mean IoU`.
    pub mean_perf: Option<f64>,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityDiagram {
    pub bars: Vec<ReliabilityBar>,
}

impl ReliabilityDiagram {
    /// CSV with columns `bin_low,bin_high,mean_conf,mean_perf,n_classes`; empty bins omitted.
    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        writer
            .write_record(["bin_low", "bin_high", "mean_conf", "mean_perf", "n_classes"])
            .expect("in-memory CSV write");
        for bar in self.bars.iter().filter(|b| b.mean_conf.is_some()) {
            writer.serialize(bar).expect("in-memory CSV write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory CSV flush")).expect("CSV is UTF-8")
    }
}

pub fn reliability_diagram(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tau: f64,
    bins: usize,
) -> Result<ReliabilityDiagram> {
    let per_class: Vec<BinStats> = match_all(dets, gts, tau)?
        .iter()
        .filter(|m| !m.dets.is_empty())
        .map(|m| class_bin_stats(m, bins))
        .collect();
    let bars = (0..bins)
        .map(|j| {
            let occupied: Vec<&Bin> = per_class
                .iter()
                .map(|s| &s.bins[j])
                .filter(|b| !b.is_empty())
                .collect();
            let n = occupied.len();
            let avg = |f: &dyn Fn(&Bin) -> f64| {
                (n > 0).then(|| occupied.iter().map(|b| f(b)).sum::<f64>() / n as f64)
            };
            ReliabilityBar {
                bin_low: j as f64 / bins as f64,
                bin_high: (j + 1) as f64 / bins as f64,
                mean_conf: avg(&|b| b.mean_conf),
                mean_perf: avg(&|b| b.performance()),
                n_classes: n,
            }
        })
        .collect();
    Ok(ReliabilityDiagram { bars })
}
