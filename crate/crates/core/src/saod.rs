//! The self-aware detector (image-level accept/reject, per-class score thresholds,
//! calibrated scores) and its evaluation: IDQ on ID data, IDQ_T on corrupted data and
//! the composite DAQ.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accuracy::{lrp, lrp_optimal_thresholds, mean_or_zero, DetectionThresholds};
use crate::calibration::{
    apply_calibrator, bin_stats, fit_calibrator, training_pairs, CalibratorKind, CalibratorModel,
};
use crate::datamodel::{
    ClassId, ClassUniverse, Detection, DetectionSet, GroundTruthSet, ImageId, Severity, SplitTag,
};
use crate::error::{Error, Result};
use crate::matching::{check_tau, match_all};
use crate::uncertainty::{
    balanced_accuracy, image_uncertainty, select_threshold_ba, threshold_at_tpr, Aggregation,
};

/// Everything a standard detector needs to act self-aware.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAwareConfig {
    /// Images are accepted when their uncertainty is strictly below this value.
    #[serde(with = "extended_f64")]
    pub image_threshold: f64,
    pub detection_thresholds: DetectionThresholds,
    pub calibrator: CalibratorModel,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl SelfAwareConfig {
    pub fn validate(&self, universe: &ClassUniverse) -> Result<()> {
        if self.image_threshold.is_nan() {
            return Err(Error::Config("image threshold is NaN".into()));
        }
        for (c, t) in &self.detection_thresholds.0 {
            if t.0.is_nan() || t.0 == f64::NEG_INFINITY {
                return Err(Error::Config(format!("class {c}: detection threshold must be finite or +inf")));
            }
        }
        if let Some(c) = universe.ids().find(|&c| !self.calibrator.classes.contains_key(&c)) {
            return Err(Error::MissingClassModel(c));
        }
        self.calibrator.validate()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("self-aware config JSON: {e}")))?;
        config.calibrator.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// `f64` that may be infinite, written as `"inf"` / `"-inf"` in JSON.
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(de::Error::custom(format!("expected a number or \"inf\", got `{other}`"))),
            },
        }
    }
}

/// Output of the self-aware detector on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDecision {
    pub accepted: bool,
    pub uncertainty: f64,
    /// Thresholded, calibrated detections; empty when the image is rejected.
    pub detections: Vec<Detection>,
}

/// Runs the self-aware detector on one image. `uncertainty` overrides the value
/// aggregated from the raw detection scores.
pub fn self_aware_inference(
    config: &SelfAwareConfig,
    dets: &[&Detection],
    uncertainty: Option<f64>,
) -> Result<ImageDecision> {
    let u = uncertainty.unwrap_or_else(|| image_uncertainty(dets, config.aggregation).value);
    if !(u < config.image_threshold) {
        return Ok(ImageDecision {
            accepted: false,
            uncertainty: u,
            detections: Vec::new(),
        });
    }
    let mut kept = Vec::new();
    for d in dets {
        if config.detection_thresholds.get(d.class_id).is_none_or(|t| t.keeps(d.score)) {
            let score = config.calibrator.class(d.class_id)?.apply(d.score);
            kept.push(Detection {
                score,
                ..(*d).clone()
            });
        }
    }
    Ok(ImageDecision {
        accepted: true,
        uncertainty: u,
        detections: kept,
    })
}

/// Applies [`self_aware_inference`] to every listed image.
pub fn run_images(
    config: &SelfAwareConfig,
    images: &[ImageId],
    dets: &DetectionSet,
    uncertainties: Option<&BTreeMap<ImageId, f64>>,
) -> Result<BTreeMap<ImageId, ImageDecision>> {
    let by_image = dets.by_image();
    images
        .iter()
        .map(|&id| {
            let image_dets = by_image.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let u = match uncertainties {
                Some(map) => Some(*map.get(&id).ok_or(Error::MissingDecisions(id))?),
                None => None,
            };
            Ok((id, self_aware_inference(config, image_dets, u)?))
        })
        .collect()
}

/// Harmonic mean, zero as soon as any value is zero.
pub fn harmonic_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    values.len() as f64 / values.iter().map(|v| 1.0 / v).sum::<f64>()
}

/// Harmonic mean of `1 - lrp` and `1 - laece`.
pub fn idq_from(lrp: f64, laece: f64) -> f64 {
    harmonic_mean(&[1.0 - lrp, 1.0 - laece])
}

pub fn daq(ba: f64, idq: f64, idq_t: f64) -> f64 {
    harmonic_mean(&[ba, idq, idq_t])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quality {
    pub idq: f64,
    pub laece: f64,
    pub lrp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassQuality {
    pub class_id: ClassId,
    pub name: String,
    pub lrp: Option<f64>,
    pub laece: Option<f64>,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
}

/// IDQ over a pool of images: `gts` holds exactly the pooled images and `dets` their
/// (already thresholded and calibrated) detections.
pub fn pool_quality(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    tau: f64,
    bins: usize,
) -> Result<(Quality, Vec<ClassQuality>)> {
    let matches = match_all(dets, gts, tau)?;
    let mut rows = Vec::with_capacity(matches.len());
    let (mut lrps, mut laeces) = (Vec::new(), Vec::new());
    for m in &matches {
        let a = &m.assignment;
        let class_lrp = if a.n_tp() + a.n_fp() + a.n_fn() == 0 {
            None
        } else {
            Some(lrp(a)?.lrp)
        };
        let class_laece = if m.dets.is_empty() {
            None
        } else {
            let scores: Vec<f64> = m.dets.iter().map(|d| d.score).collect();
            Some(bin_stats(&scores, a.labels(), bins).laece())
        };
        lrps.extend(class_lrp);
        laeces.extend(class_laece);
        rows.push(ClassQuality {
            class_id: m.class_id,
            name: gts.universe().name(m.class_id),
            lrp: class_lrp,
            laece: class_laece,
            n_tp: a.n_tp(),
            n_fp: a.n_fp(),
            n_fn: a.n_fn(),
        });
    }
    let (lrp_value, laece_value) = (mean_or_zero(&lrps), mean_or_zero(&laeces));
    Ok((
        Quality {
            idq: idq_from(lrp_value, laece_value),
            laece: laece_value,
            lrp: lrp_value,
        },
        rows,
    ))
}

fn accepted_detections(decisions: &BTreeMap<ImageId, ImageDecision>) -> DetectionSet {
    DetectionSet::from_vec_unchecked(
        decisions
            .values()
            .filter(|d| d.accepted)
            .flat_map(|d| d.detections.iter().cloned())
            .collect(),
    )
}

fn require_decisions(
    images: impl Iterator<Item = ImageId>,
    decisions: &BTreeMap<ImageId, ImageDecision>,
) -> Result<()> {
    for id in images {
        if !decisions.contains_key(&id) {
            return Err(Error::MissingDecisions(id));
        }
    }
    Ok(())
}

/// IDQ on ID data: `gts` restricted to ID images. Rejected images keep their ground
/// truths (counted as FN) and contribute no detections.
pub fn idq(
    gts: &GroundTruthSet,
    decisions: &BTreeMap<ImageId, ImageDecision>,
    tau: f64,
    bins: usize,
) -> Result<(Quality, Vec<ClassQuality>)> {
    require_decisions(gts.images().iter().map(|r| r.id), decisions)?;
    let pool = gts.filter_images(|r| decisions.contains_key(&r.id));
    pool_quality(&accepted_detections(decisions), &pool, tau, bins)
}

/// IDQ_T on corrupted data: severities 1 and 3 are treated as ID, rejected severity-5
/// images leave the pool entirely, accepted severity-5 images are evaluated normally.
pub fn idq_t(
    gts: &GroundTruthSet,
    decisions: &BTreeMap<ImageId, ImageDecision>,
    tau: f64,
    bins: usize,
) -> Result<(Quality, Vec<ClassQuality>)> {
    for r in gts.images() {
        if r.split.severity().is_none() {
            return Err(Error::MissingSeverity(r.id));
        }
    }
    require_decisions(gts.images().iter().map(|r| r.id), decisions)?;
    let pool = gts.filter_images(|r| {
        decisions.contains_key(&r.id)
            && !(r.split.severity() == Some(Severity::S5) && !decisions[&r.id].accepted)
    });
    let pooled: BTreeSet<ImageId> = pool.images().iter().map(|r| r.id).collect();
    let kept: BTreeMap<ImageId, ImageDecision> = decisions
        .iter()
        .filter(|(id, _)| pooled.contains(id))
        .map(|(id, d)| (*id, d.clone()))
        .collect();
    pool_quality(&accepted_detections(&kept), &pool, tau, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcceptanceRates {
    pub id: f64,
    pub corrupt_s1: Option<f64>,
    pub corrupt_s3: Option<f64>,
    pub corrupt_s5: Option<f64>,
    pub ood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaodReport {
    pub daq: f64,
    pub ba: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub idq: f64,
    pub laece_id: f64,
    pub lrp_id: f64,
    pub idq_t: f64,
    pub laece_t: f64,
    pub lrp_t: f64,
    pub acceptance: AcceptanceRates,
    pub per_class_id: Vec<ClassQuality>,
    pub per_class_t: Vec<ClassQuality>,
}

impl SaodReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Percentages in the column order DAQ, BA, IDQ, LaECE, LRP, IDQ_T, LaECE_T, LRP_T.
    pub fn to_table(&self) -> String {
        let headers = ["DAQ", "BA", "IDQ", "LaECE", "LRP", "IDQ_T", "LaECE_T", "LRP_T"];
        let values = [
            self.daq, self.ba, self.idq, self.laece_id, self.lrp_id, self.idq_t, self.laece_t, self.lrp_t,
        ];
        let mut out = String::new();
        for h in headers {
            let _ = write!(out, "{h:>8}");
        }
        out.push('\n');
        for v in values {
            let _ = write!(out, "{:>8.1}", 100.0 * v);
        }
        out.push('\n');
        out
    }
}

/// Detections and ground truths of a test bundle. `gts` holds every image with its split;
/// each detection set may only reference images of its own split.
#[derive(Debug, Clone, Copy)]
pub struct SaodBundle<'a> {
    pub gts: &'a GroundTruthSet,
    pub id: &'a DetectionSet,
    pub corrupt: &'a DetectionSet,
    pub ood: &'a DetectionSet,
    /// Precomputed image uncertainties replacing the aggregated detection scores.
    pub uncertainties: Option<&'a BTreeMap<ImageId, f64>>,
}

fn check_split(gts: &GroundTruthSet, dets: &DetectionSet, belongs: impl Fn(&SplitTag) -> bool) -> Result<()> {
    for d in dets {
        match gts.image(d.image_id) {
            Some(r) if belongs(&r.split) => {}
            Some(_) => return Err(Error::SplitOverlap(d.image_id)),
            None => {
                return Err(Error::MalformedFile(format!(
                    "detection references unknown image {}",
                    d.image_id
                )))
            }
        }
    }
    Ok(())
}

fn rate(decisions: &BTreeMap<ImageId, ImageDecision>, images: &[ImageId]) -> Option<f64> {
    if images.is_empty() {
        return None;
    }
    let accepted = images.iter().filter(|id| decisions[id].accepted).count();
    Some(accepted as f64 / images.len() as f64)
}

pub fn evaluate_saod(config: &SelfAwareConfig, bundle: SaodBundle<'_>, tau: f64, bins: usize) -> Result<SaodReport> {
    check_tau(tau)?;
    let gts = bundle.gts;
    config.validate(gts.universe())?;
    check_split(gts, bundle.id, |s| *s == SplitTag::Id)?;
    check_split(gts, bundle.corrupt, |s| matches!(s, SplitTag::Corrupt(_)))?;
    check_split(gts, bundle.ood, |s| *s == SplitTag::Ood)?;

    let ids_of = |keep: &dyn Fn(&SplitTag) -> bool| -> Vec<ImageId> {
        gts.images().iter().filter(|r| keep(&r.split)).map(|r| r.id).collect()
    };
    let id_images = ids_of(&|s| *s == SplitTag::Id);
    let corrupt_images = ids_of(&|s| matches!(s, SplitTag::Corrupt(_)));
    let ood_images = ids_of(&|s| *s == SplitTag::Ood);
    for (name, images) in [("ID", &id_images), ("CORRUPT", &corrupt_images), ("OOD", &ood_images)] {
        if images.is_empty() {
            return Err(Error::EmptySplit(name.into()));
        }
    }

    let id_decisions = run_images(config, &id_images, bundle.id, bundle.uncertainties)?;
    let corrupt_decisions = run_images(config, &corrupt_images, bundle.corrupt, bundle.uncertainties)?;
    let ood_decisions = run_images(config, &ood_images, bundle.ood, bundle.uncertainties)?;

    let id_gts = gts.filter_images(|r| r.split == SplitTag::Id);
    let corrupt_gts = gts.filter_images(|r| matches!(r.split, SplitTag::Corrupt(_)));
    let (id_result, t_result) = rayon::join(
        || idq(&id_gts, &id_decisions, tau, bins),
        || idq_t(&corrupt_gts, &corrupt_decisions, tau, bins),
    );
    let ((id_quality, per_class_id), (t_quality, per_class_t)) = (id_result?, t_result?);

    let tpr = rate(&id_decisions, &id_images).unwrap_or(0.0);
    let tnr = 1.0 - rate(&ood_decisions, &ood_images).unwrap_or(1.0);
    let ba = balanced_accuracy(tpr, tnr);
    let severity_images = |s: Severity| -> Vec<ImageId> {
        corrupt_images
            .iter()
            .copied()
            .filter(|id| gts.image(*id).and_then(|r| r.split.severity()) == Some(s))
            .collect()
    };

    Ok(SaodReport {
        daq: daq(ba, id_quality.idq, t_quality.idq),
        ba,
        tpr,
        tnr,
        idq: id_quality.idq,
        laece_id: id_quality.laece,
        lrp_id: id_quality.lrp,
        idq_t: t_quality.idq,
        laece_t: t_quality.laece,
        lrp_t: t_quality.lrp,
        acceptance: AcceptanceRates {
            id: tpr,
            corrupt_s1: rate(&corrupt_decisions, &severity_images(Severity::S1)),
            corrupt_s3: rate(&corrupt_decisions, &severity_images(Severity::S3)),
            corrupt_s5: rate(&corrupt_decisions, &severity_images(Severity::S5)),
            ood: 1.0 - tnr,
        },
        per_class_id,
        per_class_t,
    })
}

/// How the image-level threshold is chosen on validation data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImageThresholdMethod {
    /// Maximise BA between validation images and their pseudo-OOD (masked) copies.
    PseudoOod,
    /// Accept the given fraction of validation images.
    IdTpr(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MakeSelfAwareOptions {
    pub tau: f64,
    pub bins: usize,
    pub calibrator: CalibratorKind,
    pub aggregation: Aggregation,
    pub threshold_method: ImageThresholdMethod,
    /// Fit the calibrator and use LRP-optimal thresholds; when false every detection is
    /// kept and scores pass through an identity calibrator.
    pub tune_detections: bool,
    pub calibrate: bool,
}

impl Default for MakeSelfAwareOptions {
    fn default() -> Self {
        Self {
            tau: crate::matching::DEFAULT_TAU,
            bins: crate::calibration::DEFAULT_BINS,
            calibrator: CalibratorKind::LinearRegression,
            aggregation: Aggregation::default(),
            threshold_method: ImageThresholdMethod::PseudoOod,
            tune_detections: true,
            calibrate: true,
        }
    }
}

/// Statistics of the image-level threshold on the validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub image_threshold: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub ba: f64,
    pub degenerate: bool,
}

fn image_values(images: &[ImageId], dets: &DetectionSet, aggregation: Aggregation) -> Vec<f64> {
    let by_image = dets.by_image();
    images
        .iter()
        .map(|id| {
            let image_dets = by_image.get(id).map(Vec::as_slice).unwrap_or(&[]);
            image_uncertainty(image_dets, aggregation).value
        })
        .collect()
}

/// Turns a standard detector into a self-aware one from validation data.
///
/// `val_gts` holds the validation images, `val_dets` the detector output on them and
/// `pseudo_ood_dets` the output on their object-masked copies, which reuse the ids of
/// the images they were derived from.
pub fn make_self_aware(
    val_gts: &GroundTruthSet,
    val_dets: &DetectionSet,
    pseudo_ood_dets: &DetectionSet,
    options: &MakeSelfAwareOptions,
) -> Result<(SelfAwareConfig, ValidationSummary)> {
    check_tau(options.tau)?;
    let universe = val_gts.universe();
    let images: Vec<ImageId> = val_gts.images().iter().map(|r| r.id).collect();
    if images.is_empty() {
        return Err(Error::EmptySplit("VAL".into()));
    }
    let id_values = image_values(&images, val_dets, options.aggregation);

    let summary = match options.threshold_method {
        ImageThresholdMethod::PseudoOod => {
            let ood_values = image_values(&images, pseudo_ood_dets, options.aggregation);
            let sel = select_threshold_ba(&id_values, &ood_values)?;
            ValidationSummary {
                image_threshold: sel.stats.threshold,
                tpr: sel.stats.tpr,
                tnr: sel.stats.tnr,
                ba: sel.stats.ba,
                degenerate: sel.degenerate,
            }
        }
        ImageThresholdMethod::IdTpr(target) => {
            let t = threshold_at_tpr(&id_values, target)?;
            let accepted = id_values.iter().filter(|&&u| u < t).count();
            let tpr = accepted as f64 / id_values.len() as f64;
            let ood_values = image_values(&images, pseudo_ood_dets, options.aggregation);
            let tnr = ood_values.iter().filter(|&&u| u >= t).count() as f64 / ood_values.len() as f64;
            ValidationSummary {
                image_threshold: t,
                tpr,
                tnr,
                ba: balanced_accuracy(tpr, tnr),
                degenerate: false,
            }
        }
    };

    let detection_thresholds = if options.tune_detections {
        lrp_optimal_thresholds(val_dets, val_gts, options.tau)?
    } else {
        DetectionThresholds::uniform(universe.ids(), 0.0)
    };
    let calibrator = if options.calibrate {
        let kept = detection_thresholds.apply(val_dets);
        let pairs = training_pairs(&kept, val_gts, options.tau)?;
        fit_calibrator(options.calibrator, &pairs, universe, options.bins)
    } else {
        CalibratorModel::identity(universe)
    };

    Ok((
        SelfAwareConfig {
            image_threshold: summary.image_threshold,
            detection_thresholds,
            calibrator,
            aggregation: options.aggregation,
        },
        summary,
    ))
}

/// Applies thresholds and calibration to every detection without image-level rejection.
pub fn apply_detection_stage(config: &SelfAwareConfig, dets: &DetectionSet) -> Result<DetectionSet> {
    apply_calibrator(&config.calibrator, &config.detection_thresholds.apply(dets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accuracy::Threshold;
    use crate::datamodel::{BoundingBox, GroundTruth, ImageRecord};

    fn close(a: f64, b: f64, eps: f64) -> bool {
        (a - b).abs() <= eps
    }

    fn identity_config(universe: &ClassUniverse, image_threshold: f64, v: f64) -> SelfAwareConfig {
        SelfAwareConfig {
            image_threshold,
            detection_thresholds: DetectionThresholds::uniform(universe.ids(), v),
            calibrator: CalibratorModel::identity(universe),
            aggregation: Aggregation::TopM(3),
        }
    }

    fn bx(x: f64) -> BoundingBox {
        BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    #[test]
    fn worked_compositions() {
        assert!(close(idq_from(0.749, 0.173), 0.385, 1e-3));
        assert!(close(daq(0.877, 0.385, 0.262), 0.397, 1e-3));
        assert!(close(daq(0.858, 0.435, 0.308), 0.447, 1e-3));
        assert!(close(idq_from(0.844, 0.181), 0.262, 1e-3));
    }

    #[test]
    fn harmonic_mean_edges() {
        assert_eq!(daq(0.0, 0.9, 0.9), 0.0);
        assert_eq!(idq_from(1.0, 0.1), 0.0);
        assert!(close(daq(0.6, 0.6, 0.6), 0.6, 1e-15));
        assert!(daq(0.5, 0.6, 0.7) < daq(0.5, 0.6, 0.8));
    }

    #[test]
    fn inference_cases() {
        let u = ClassUniverse::new(1).unwrap();
        let config = identity_config(&u, 0.5, 0.5);
        let rejected = self_aware_inference(&config, &[], None).unwrap();
        assert!(!rejected.accepted);
        assert_eq!(rejected.uncertainty, 1e12);

        let a = Detection::new(1, 1, 0.9, bx(0.0));
        let b = Detection::new(1, 1, 0.2, bx(20.0));
        let out = self_aware_inference(&config, &[&a, &b], None).unwrap();
        // top-3 mean of {0.1, 0.8} = 0.45 < 0.5
        assert!(out.accepted);
        assert_eq!(out.detections, vec![a.clone()]);

        let all = identity_config(&u, 0.5, 0.0);
        assert_eq!(self_aware_inference(&all, &[&a, &b], None).unwrap().detections, vec![a.clone(), b.clone()]);

        // equality rejects
        let edge = identity_config(&u, 0.45, 0.0);
        assert!(!self_aware_inference(&edge, &[&a, &b], Some(0.45)).unwrap().accepted);

        let mut missing = identity_config(&u, 1.0, 0.0);
        missing.calibrator.classes.clear();
        assert!(matches!(
            self_aware_inference(&missing, &[&a], None),
            Err(Error::MissingClassModel(1))
        ));
    }

    fn fixture() -> GroundTruthSet {
        let u = ClassUniverse::new(1).unwrap();
        let images = vec![
            ImageRecord::new(1, SplitTag::Id),
            ImageRecord::new(2, SplitTag::Id),
            ImageRecord::new(3, SplitTag::Corrupt(Severity::S1)),
            ImageRecord::new(4, SplitTag::Corrupt(Severity::S5)),
            ImageRecord::new(5, SplitTag::Ood),
        ];
        let mut anns = Vec::new();
        for (img, n) in [(1, 1), (2, 3), (3, 3), (4, 2)] {
            for k in 0..n {
                anns.push(GroundTruth {
                    image_id: img,
                    class_id: 1,
                    bbox: bx(20.0 * k as f64),
                });
            }
        }
        GroundTruthSet::new(u, images, anns).unwrap()
    }

    fn perfect_dets(gts: &GroundTruthSet, images: &[ImageId]) -> DetectionSet {
        DetectionSet::new(
            gts.universe(),
            gts.annotations()
                .iter()
                .filter(|g| images.contains(&g.image_id))
                .map(|g| Detection::new(g.image_id, 1, 1.0, g.bbox))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rejection_penalties() {
        let gts = fixture();
        let u = gts.universe().clone();
        let config = identity_config(&u, 0.5, 0.0);
        let id_gts = gts.filter_images(|r| r.split == SplitTag::Id);
        let dets = perfect_dets(&gts, &[1, 2]);

        let all = run_images(&config, &[1, 2], &dets, None).unwrap();
        let (q, rows) = idq(&id_gts, &all, 0.1, 25).unwrap();
        assert_eq!((q.idq, q.lrp, q.laece), (1.0, 0.0, 0.0));
        assert_eq!(rows[0].n_fn, 0);

        let forced: BTreeMap<ImageId, f64> = [(1, 0.0), (2, 0.9)].into();
        let partial = run_images(&config, &[1, 2], &dets, Some(&forced)).unwrap();
        let (q, rows) = idq(&id_gts, &partial, 0.1, 25).unwrap();
        assert_eq!(rows[0].n_fn, 3);
        assert!(close(q.lrp, 0.75, 1e-12));

        let none: BTreeMap<ImageId, f64> = [(1, 0.9), (2, 0.9)].into();
        let rejected = run_images(&config, &[1, 2], &dets, Some(&none)).unwrap();
        let (q, _) = idq(&id_gts, &rejected, 0.1, 25).unwrap();
        assert_eq!((q.lrp, q.idq), (1.0, 0.0));

        assert!(matches!(
            run_images(&config, &[1, 2], &dets, Some(&[(1, 0.0)].into())),
            Err(Error::MissingDecisions(2))
        ));
    }

    #[test]
    fn severity_five_rejection_is_free() {
        let gts = fixture();
        let u = gts.universe().clone();
        let config = identity_config(&u, 0.5, 0.0);
        let t_gts = gts.filter_images(|r| matches!(r.split, SplitTag::Corrupt(_)));
        let dets = perfect_dets(&gts, &[3, 4]);

        let forced: BTreeMap<ImageId, f64> = [(3, 0.0), (4, 0.9)].into();
        let decisions = run_images(&config, &[3, 4], &dets, Some(&forced)).unwrap();
        let (q, rows) = idq_t(&t_gts, &decisions, 0.1, 25).unwrap();
        assert_eq!(q.idq, 1.0);
        assert_eq!(rows[0].n_fn, 0);

        let forced: BTreeMap<ImageId, f64> = [(3, 0.9), (4, 0.0)].into();
        let decisions = run_images(&config, &[3, 4], &dets, Some(&forced)).unwrap();
        let (_, rows) = idq_t(&t_gts, &decisions, 0.1, 25).unwrap();
        assert_eq!(rows[0].n_fn, 3);

        let id_only = gts.filter_images(|r| r.split == SplitTag::Id);
        assert!(matches!(idq_t(&id_only, &decisions, 0.1, 25), Err(Error::MissingSeverity(_))));
    }

    #[test]
    fn full_evaluation() {
        let gts = fixture();
        let u = gts.universe().clone();
        let id = perfect_dets(&gts, &[1, 2]);
        let corrupt = perfect_dets(&gts, &[3, 4]);
        let ood = DetectionSet::new(&u, vec![Detection::new(5, 1, 0.05, bx(0.0))]).unwrap();
        let bundle = SaodBundle {
            gts: &gts,
            id: &id,
            corrupt: &corrupt,
            ood: &ood,
            uncertainties: None,
        };
        let report = evaluate_saod(&identity_config(&u, 0.5, 0.0), bundle, 0.1, 25).unwrap();
        assert_eq!((report.daq, report.ba, report.idq, report.idq_t), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(report.acceptance.ood, 0.0);
        assert!(report.to_table().starts_with("     DAQ      BA"));

        let accept_all = identity_config(&u, f64::INFINITY, 0.0);
        let report = evaluate_saod(&accept_all, bundle, 0.1, 25).unwrap();
        assert_eq!((report.tnr, report.ba, report.daq), (0.0, 0.0, 0.0));

        let wrong = DetectionSet::new(&u, vec![Detection::new(5, 1, 0.5, bx(0.0))]).unwrap();
        let bad = SaodBundle { id: &wrong, ..bundle };
        assert!(matches!(
            evaluate_saod(&identity_config(&u, 0.5, 0.0), bad, 0.1, 25),
            Err(Error::SplitOverlap(5))
        ));
    }

    #[test]
    fn config_json_round_trip() {
        let u = ClassUniverse::new(2).unwrap();
        let mut config = identity_config(&u, f64::INFINITY, 0.3);
        config.detection_thresholds.0.insert(2, Threshold::REJECT_ALL);
        let text = config.to_json_string();
        assert!(text.contains("\"inf\""));
        assert_eq!(SelfAwareConfig::from_json_str(&text).unwrap(), config);
        config.image_threshold = f64::NEG_INFINITY;
        assert_eq!(SelfAwareConfig::from_json_str(&config.to_json_string()).unwrap(), config);
    }
}
