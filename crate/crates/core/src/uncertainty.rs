//! Detection-level uncertainty estimators, image-level aggregation, the pseudo-OOD
//! masking utility and the ID/OOD decision metrics (AUROC, balanced accuracy,
//! threshold selection).
//!
//! ID images are the positive class: an image is accepted when its uncertainty is
//! strictly below the threshold, so TPR is the accepted fraction of ID images and TNR
//! the rejected fraction of OOD images.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datamodel::{BoundingBox, Detection, ImageId};
use crate::error::{Error, Result};

/// Image uncertainty assigned when an image has no detections.
pub const EMPTY_IMAGE_UNCERTAINTY: f64 = 1e12;

/// `1 - score` of a final detection.
pub fn uncertainty_score(det: &Detection) -> f64 {
    1.0 - det.score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMode {
    /// Softmax over the `K + 1` logits of a softmax head (background included).
    Softmax,
    /// Softmax over the `K` logits of a sigmoid head, giving a categorical distribution.
    SigmoidCategorical,
    /// Mean of the `K` per-class Bernoulli entropies of a sigmoid head.
    SigmoidMeanBernoulli,
    /// Bernoulli entropy of the highest-scoring class of a sigmoid head.
    SigmoidMaxClass,
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLogit)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Shannon entropy in nats of a probability vector; `0 log 0 = 0`.
pub fn categorical_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

fn bernoulli_entropy(p: f64) -> f64 {
    categorical_entropy(&[p, 1.0 - p])
}

fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Classification entropy of a detection's raw logits.
pub fn entropy(logits: &[f64], mode: EntropyMode) -> Result<f64> {
    check_finite(logits)?;
    if logits.is_empty() {
        return Ok(0.0);
    }
    Ok(match mode {
        EntropyMode::Softmax | EntropyMode::SigmoidCategorical => {
            categorical_entropy(&softmax(logits))
        }
        EntropyMode::SigmoidMeanBernoulli => {
            logits.iter().map(|&s| bernoulli_entropy(sigmoid(s))).sum::<f64>() / logits.len() as f64
        }
        EntropyMode::SigmoidMaxClass => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            bernoulli_entropy(sigmoid(max))
        }
    })
}

/// Dempster-Shafer uncertainty `K / (K + sum exp(s_j))` with `K` the number of logits.
pub fn dempster_shafer(logits: &[f64]) -> Result<f64> {
    check_finite(logits)?;
    let k = logits.len() as f64;
    let evidence: f64 = logits.iter().map(|s| s.exp()).sum();
    Ok(k / (k + evidence))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocUncertainty {
    Determinant,
    Trace,
    GaussianEntropy,
}

/// Localisation uncertainty from the diagonal of a predicted box covariance.
pub fn loc_uncertainty(cov_diag: &[f64; 4], kind: LocUncertainty) -> Result<f64> {
    if cov_diag.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::CovarianceNotPositive);
    }
    let det: f64 = cov_diag.iter().product();
    Ok(match kind {
        LocUncertainty::Determinant => det,
        LocUncertainty::Trace => cov_diag.iter().sum(),
        LocUncertainty::GaussianEntropy => {
            let half_log_det: f64 = 0.5 * cov_diag.iter().map(|v| v.ln()).sum::<f64>();
            2.0 + 2.0 * (2.0 * std::f64::consts::PI).ln() + half_log_det
        }
    })
}

/// Validation-set ranges used to normalise classification and localisation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub cls_min: f64,
    pub cls_max: f64,
    pub loc_min: f64,
    pub loc_max: f64,
}

impl NormBounds {
    /// Bounds spanning the given validation values.
    pub fn from_values(cls: &[f64], loc: &[f64]) -> Result<Self> {
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bounds = Self {
            cls_min: min(cls),
            cls_max: max(cls),
            loc_min: min(loc),
            loc_max: max(loc),
        };
        bounds.check()?;
        Ok(bounds)
    }

    fn check(&self) -> Result<()> {
        if self.cls_max > self.cls_min && self.loc_max > self.loc_min {
            Ok(())
        } else {
            Err(Error::DegenerateBounds)
        }
    }
}

/// `4 * norm(u_cls) + norm(u_loc)`, the classification term weighted up by four.
pub fn combine_cls_loc(u_cls: f64, u_loc: f64, bounds: &NormBounds) -> Result<f64> {
    bounds.check()?;
    let cls = (u_cls - bounds.cls_min) / (bounds.cls_max - bounds.cls_min);
    let loc = (u_loc - bounds.loc_min) / (bounds.loc_max - bounds.loc_min);
    Ok(4.0 * cls + loc)
}

/// How detection uncertainties are pooled into one image uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Sum,
    Mean,
    /// Mean of the `m` smallest values.
    TopM(usize),
    Min,
}

impl Default for Aggregation {
    fn default() -> Self {
        Aggregation::TopM(3)
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregation::Sum => f.pad("sum"),
            Aggregation::Mean => f.pad("mean"),
            Aggregation::TopM(m) => f.pad(&format!("top_{m}")),
            Aggregation::Min => f.pad("min"),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "sum" => return Ok(Aggregation::Sum),
            "mean" => return Ok(Aggregation::Mean),
            "min" => return Ok(Aggregation::Min),
            _ => {}
        }
        lower
            .strip_prefix("top_")
            .or_else(|| lower.strip_prefix("top-"))
            .and_then(|m| m.parse::<usize>().ok())
            .filter(|&m| m > 0)
            .map(Aggregation::TopM)
            .ok_or_else(|| Error::Config(format!("unknown aggregation `{s}`")))
    }
}

impl Serialize for Aggregation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Aggregation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageUncertainty {
    pub value: f64,
    /// Set when the image had no detections and received the sentinel value.
    pub sentinel: bool,
}

pub fn aggregate(values: &[f64], strategy: Aggregation) -> ImageUncertainty {
    if values.is_empty() {
        return ImageUncertainty {
            value: EMPTY_IMAGE_UNCERTAINTY,
            sentinel: true,
        };
    }
    let value = match strategy {
        Aggregation::Sum => values.iter().sum(),
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::TopM(m) => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let take = m.min(sorted.len());
            sorted[..take].iter().sum::<f64>() / take as f64
        }
        Aggregation::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
    };
    ImageUncertainty {
        value,
        sentinel: false,
    }
}

/// Image uncertainty from the `1 - score` of each detection.
pub fn image_uncertainty(dets: &[&Detection], strategy: Aggregation) -> ImageUncertainty {
    let values: Vec<f64> = dets.iter().map(|d| uncertainty_score(d)).collect();
    aggregate(&values, strategy)
}

/// Probability that a random ID value is below a random OOD value, ties counting half.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    if id.is_empty() {
        return Err(Error::EmptySplit("ID".into()));
    }
    if ood.is_empty() {
        return Err(Error::EmptySplit("OOD".into()));
    }
    // Mann-Whitney U of the OOD sample with mid-ranks for ties
    let mut pooled: Vec<(f64, bool)> = id
        .iter()
        .map(|&v| (v, false))
        .chain(ood.iter().map(|&v| (v, true)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_ood = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid_rank = (i + j + 2) as f64 / 2.0;
        let n_ood = pooled[i..=j].iter().filter(|p| p.1).count();
        rank_sum_ood += mid_rank * n_ood as f64;
        i = j + 1;
    }
    let (n_id, n_ood) = (id.len() as f64, ood.len() as f64);
    let u = rank_sum_ood - n_ood * (n_ood + 1.0) / 2.0;
    Ok(u / (n_id * n_ood))
}

/// Harmonic mean of TPR and TNR; zero when either is zero.
pub fn balanced_accuracy(tpr: f64, tnr: f64) -> f64 {
    if tpr <= 0.0 || tnr <= 0.0 {
        0.0
    } else {
        2.0 * tpr * tnr / (tpr + tnr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OodDecisionStats {
    pub tpr: f64,
    pub tnr: f64,
    pub ba: f64,
    pub threshold: f64,
}

/// Decision statistics of accepting `u < threshold`.
pub fn decision_stats(id: &[f64], ood: &[f64], threshold: f64) -> OodDecisionStats {
    let accepted_id = id.iter().filter(|&&u| u < threshold).count();
    let rejected_ood = ood.iter().filter(|&&u| u >= threshold).count();
    let tpr = ratio(accepted_id, id.len());
    let tnr = ratio(rejected_ood, ood.len());
    OodDecisionStats {
        tpr,
        tnr,
        ba: balanced_accuracy(tpr, tnr),
        threshold,
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSelection {
    pub stats: OodDecisionStats,
    /// No threshold separates the sets at all (best BA is zero).
    pub degenerate: bool,
}

/// Picks the image-level threshold maximising BA between pseudo-ID and pseudo-OOD
/// uncertainties. Candidates are `-inf`, `+inf` and midpoints between consecutive
/// distinct pooled values; ties go to the larger threshold.
pub fn select_threshold_ba(pseudo_id: &[f64], pseudo_ood: &[f64]) -> Result<ThresholdSelection> {
    if pseudo_id.is_empty() {
        return Err(Error::EmptySplit("pseudo-ID".into()));
    }
    if pseudo_ood.is_empty() {
        return Err(Error::EmptySplit("pseudo-OOD".into()));
    }
    let mut pooled: Vec<(f64, bool)> = pseudo_id
        .iter()
        .map(|&v| (v, true))
        .chain(pseudo_ood.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (n_id, n_ood) = (pseudo_id.len(), pseudo_ood.len());

    // sweep from the largest candidate down; `below_*` count values under the candidate
    let mut below_id = n_id;
    let mut below_ood = n_ood;
    let stats_at = |threshold: f64, below_id: usize, below_ood: usize| {
        let tpr = ratio(below_id, n_id);
        let tnr = ratio(n_ood - below_ood, n_ood);
        OodDecisionStats {
            tpr,
            tnr,
            ba: balanced_accuracy(tpr, tnr),
            threshold,
        }
    };
    let mut best = stats_at(f64::INFINITY, below_id, below_ood);
    let mut end = pooled.len();
    while end > 0 {
        let value = pooled[end - 1].0;
        let mut start = end - 1;
        while start > 0 && pooled[start - 1].0 == value {
            start -= 1;
        }
        for &(_, is_id) in &pooled[start..end] {
            if is_id {
                below_id -= 1;
            } else {
                below_ood -= 1;
            }
        }
        let threshold = if start == 0 {
            f64::NEG_INFINITY
        } else {
            let lower = pooled[start - 1].0;
            lower + (value - lower) / 2.0
        };
        let stats = stats_at(threshold, below_id, below_ood);
        if stats.ba > best.ba {
            best = stats;
        }
        end = start;
    }
    Ok(ThresholdSelection {
        degenerate: best.ba == 0.0,
        stats: best,
    })
}

/// Smallest threshold accepting at least `target_tpr` of the ID values: placed halfway
/// to the next distinct value, or one ulp above the maximum.
pub fn threshold_at_tpr(id: &[f64], target_tpr: f64) -> Result<f64> {
    if id.is_empty() {
        return Err(Error::EmptySplit("ID".into()));
    }
    let mut sorted = id.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let needed = ((target_tpr.clamp(0.0, 1.0) * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if needed == 0 {
        return Ok(sorted[0]);
    }
    let boundary = sorted[needed - 1];
    Ok(match sorted[needed..].iter().find(|&&v| v > boundary) {
        Some(&next) => boundary + (next - boundary) / 2.0,
        None => boundary.next_up(),
    })
}

/// One entry of an uncertainty dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEntry {
    pub image_id: ImageId,
    pub uncertainty: f64,
    pub split: String,
}

pub fn load_uncertainties(path: impl AsRef<Path>) -> Result<Vec<UncertaintyEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("uncertainty dump: {e}")))
}

pub fn save_uncertainties(entries: &[UncertaintyEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(entries).expect("uncertainties serialise");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// Row-major `H x W x C` image.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: RasterData,
}

const RASTER_MAGIC: &[u8; 8] = b"SAODRAS1";
const RASTER_HEADER_LEN: usize = 24;

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: RasterData) -> Result<Self> {
        let len = match &data {
            RasterData::U8(v) => v.len(),
            RasterData::F32(v) => v.len(),
        };
        if len != height * width * channels {
            return Err(Error::MalformedFile(format!(
                "raster holds {len} values, expected {height}x{width}x{channels}"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Little-endian file layout: 8-byte magic, `u32` height, width, channels, a dtype
    /// byte (0 = u8, 1 = f32), three zero bytes, then the samples.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RASTER_HEADER_LEN + self.height * self.width * self.channels * 4);
        out.extend_from_slice(RASTER_MAGIC);
        for v in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        match &self.data {
            RasterData::U8(v) => {
                out.extend_from_slice(&[0, 0, 0, 0]);
                out.extend_from_slice(v);
            }
            RasterData::F32(v) => {
                out.extend_from_slice(&[1, 0, 0, 0]);
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < RASTER_HEADER_LEN || &bytes[..8] != RASTER_MAGIC {
            return Err(Error::MalformedFile("not a raster file".into()));
        }
        let read_u32 = |at: usize| {
            u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize
        };
        let (height, width, channels) = (read_u32(8), read_u32(12), read_u32(16));
        let n = height * width * channels;
        let body = &bytes[RASTER_HEADER_LEN..];
        let data = match bytes[20] {
            0 if body.len() == n => RasterData::U8(body.to_vec()),
            1 if body.len() == n * 4 => RasterData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            _ => return Err(Error::MalformedFile("raster dtype or length mismatch".into())),
        };
        Self::new(height, width, channels, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Zeroes every pixel covered by a box (min corner floored, max corner ceiled, clipped to
/// the raster). Pixels outside the union of boxes are untouched.
pub fn mask_boxes(raster: &mut Raster, boxes: &[BoundingBox]) {
    let (h, w, c) = (raster.height, raster.width, raster.channels);
    let clip = |v: f64, hi: usize| -> usize {
        if v <= 0.0 {
            0
        } else {
            (v as usize).min(hi)
        }
    };
    for b in boxes {
        let x0 = clip(b.x_min.floor(), w);
        let x1 = clip(b.x_max.ceil(), w);
        let y0 = clip(b.y_min.floor(), h);
        let y1 = clip(b.y_max.ceil(), h);
        for y in y0..y1 {
            let row = (y * w + x0) * c..(y * w + x1) * c;
            match &mut raster.data {
                RasterData::U8(v) => v[row].fill(0),
                RasterData::F32(v) => v[row].fill(0.0),
            }
        }
    }
}
