//! Command-line front end. Every command reads a flat `key = value` config file (optional)
//! and flags; flags win over file values, which win over the defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::accuracy::{class_accuracy, coco_ap, lrp_optimal_thresholds, mean_ap, mean_lrp, ApMode};
use crate::calibration::{
    fit_calibrator, laece_per_class, reliability_diagram, training_pairs, CalibratorKind, DEFAULT_BINS,
};
use crate::datamodel::{
    load_detections, load_ground_truth, DetectionSet, GroundTruthSet, ImageId, SplitTag,
};
use crate::error::{Error, Result};
use crate::matching::{check_tau, DEFAULT_TAU};
use crate::saod::{
    evaluate_saod, make_self_aware, ImageThresholdMethod, MakeSelfAwareOptions, SaodBundle,
    SelfAwareConfig,
};
use crate::testkit::{generate, ConfidenceModel, SyntheticSpec};
use crate::uncertainty::{image_uncertainty, load_uncertainties, save_uncertainties, Aggregation, UncertaintyEntry};

#[derive(Debug, Parser)]
#[command(name = "saod", version, about = "Self-aware object detection evaluation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-class AP, COCO-style AP, LRP and LaECE plus reliability-diagram data.
    Evaluate(Flags),
    /// Fit per-class calibrators on validation detections.
    Calibrate(Flags),
    /// LRP-optimal per-class score thresholds.
    Threshold(Flags),
    /// Image-level uncertainties from detection scores.
    Uncertainty(Flags),
    /// Build a self-aware detector configuration from validation data.
    MakeSelfAware(Flags),
    /// Evaluate a self-aware detector: BA, IDQ, IDQ_T and DAQ.
    Saod(Flags),
    /// Write a seeded synthetic dataset and detector outputs.
    Synth(Flags),
}

/// Flags shared by all commands; each command reads the ones it needs.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Detections on ID (or validation) images.
    #[arg(long)]
    pub dets: Option<PathBuf>,
    #[arg(long)]
    pub dets_corrupt: Option<PathBuf>,
    /// Detections on OOD (or pseudo-OOD) images.
    #[arg(long)]
    pub dets_ood: Option<PathBuf>,
    /// Image uncertainty dump overriding the score-based uncertainty.
    #[arg(long)]
    pub uncertainty: Option<PathBuf>,
    /// Self-aware configuration produced by `make-self-aware`.
    #[arg(long)]
    pub self_aware: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub bins: Option<usize>,
    /// sum, mean, min or top_<m>.
    #[arg(long)]
    pub agg: Option<String>,
    /// HB, LR or IR.
    #[arg(long)]
    pub calibrator: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic preset: default, oracle or overconfident.
    #[arg(long)]
    pub preset: Option<String>,
    /// Choose the image threshold to accept this fraction of validation images instead
    /// of maximising BA against pseudo-OOD images.
    #[arg(long)]
    pub target_tpr: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    gt: Option<PathBuf>,
    dets: Option<PathBuf>,
    #[serde(alias = "dets-corrupt")]
    dets_corrupt: Option<PathBuf>,
    #[serde(alias = "dets-ood")]
    dets_ood: Option<PathBuf>,
    uncertainty: Option<PathBuf>,
    #[serde(alias = "self-aware")]
    self_aware: Option<PathBuf>,
    tau: Option<f64>,
    bins: Option<usize>,
    agg: Option<String>,
    calibrator: Option<String>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    preset: Option<String>,
    #[serde(alias = "target-tpr")]
    target_tpr: Option<f64>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gt: Option<PathBuf>,
    pub dets: Option<PathBuf>,
    pub dets_corrupt: Option<PathBuf>,
    pub dets_ood: Option<PathBuf>,
    pub uncertainty: Option<PathBuf>,
    pub self_aware: Option<PathBuf>,
    pub tau: f64,
    pub bins: usize,
    pub agg: Aggregation,
    pub calibrator: CalibratorKind,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub target_tpr: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gt: None,
            dets: None,
            dets_corrupt: None,
            dets_ood: None,
            uncertainty: None,
            self_aware: None,
            tau: DEFAULT_TAU,
            bins: DEFAULT_BINS,
            agg: Aggregation::TopM(3),
            calibrator: CalibratorKind::LinearRegression,
            out: PathBuf::from("out"),
            seed: None,
            preset: None,
            target_tpr: None,
        }
    }
}

impl RunConfig {
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                toml::from_str::<FileConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => FileConfig::default(),
        };
        let d = RunConfig::default();
        let agg = match flags.agg.as_ref().or(file.agg.as_ref()) {
            Some(s) => s.parse()?,
            None => d.agg,
        };
        let calibrator = match flags.calibrator.as_ref().or(file.calibrator.as_ref()) {
            Some(s) => s.parse()?,
            None => d.calibrator,
        };
        let config = RunConfig {
            gt: flags.gt.clone().or(file.gt),
            dets: flags.dets.clone().or(file.dets),
            dets_corrupt: flags.dets_corrupt.clone().or(file.dets_corrupt),
            dets_ood: flags.dets_ood.clone().or(file.dets_ood),
            uncertainty: flags.uncertainty.clone().or(file.uncertainty),
            self_aware: flags.self_aware.clone().or(file.self_aware),
            tau: flags.tau.or(file.tau).unwrap_or(d.tau),
            bins: flags.bins.or(file.bins).unwrap_or(d.bins),
            agg,
            calibrator,
            out: flags.out.clone().or(file.out).unwrap_or(d.out),
            seed: flags.seed.or(file.seed),
            preset: flags.preset.clone().or(file.preset),
            target_tpr: flags.target_tpr.or(file.target_tpr),
        };
        check_tau(config.tau)?;
        if config.bins == 0 {
            return Err(Error::Config("bins must be at least 1".into()));
        }
        if let Some(t) = config.target_tpr {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("target TPR {t} must lie in [0, 1]")));
            }
        }
        Ok(config)
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Error::Config(format!("missing required `{key}`")))
    }
}

/// Process exit status for an error: 3 for configuration problems, 2 for bad input.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::InvalidTau(_) | Error::InfeasibleSpec(_) => 3,
        _ => 2,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: config: {}", first.trim_start_matches("error: "));
            return 3;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e);
            exit_code(&e)
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Evaluate(f) => cmd_evaluate(&RunConfig::resolve(f)?),
        Command::Calibrate(f) => cmd_calibrate(&RunConfig::resolve(f)?),
        Command::Threshold(f) => cmd_threshold(&RunConfig::resolve(f)?),
        Command::Uncertainty(f) => cmd_uncertainty(&RunConfig::resolve(f)?),
        Command::MakeSelfAware(f) => cmd_make_self_aware(&RunConfig::resolve(f)?),
        Command::Saod(f) => cmd_saod(&RunConfig::resolve(f)?),
        Command::Synth(f) => cmd_synth(&RunConfig::resolve(f)?),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    text
}

/// Loads `gt` and `dets`, restricting the ground truth to images of the splits the
/// detections refer to (every image when the detection file is empty).
fn load_inputs(config: &RunConfig) -> Result<(GroundTruthSet, DetectionSet)> {
    let gts = load_ground_truth(config.require(&config.gt, "gt")?)?;
    let dets = load_detections(config.require(&config.dets, "dets")?, gts.universe())?;
    let mut splits = BTreeSet::new();
    for d in &dets {
        let record = gts.image(d.image_id).ok_or_else(|| {
            Error::MalformedFile(format!("detection references unknown image {}", d.image_id))
        })?;
        splits.insert(record.split.name());
    }
    if splits.is_empty() {
        return Ok((gts, dets));
    }
    Ok((gts.filter_images(|r| splits.contains(r.split.name())), dets))
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    ap50: f64,
    coco_ap: f64,
    lrp: f64,
    laece: f64,
}

#[derive(Debug, Serialize)]
struct ClassRow {
    class_id: u32,
    name: String,
    num_gt: usize,
    num_det: usize,
    ap: Option<f64>,
    coco_ap: Option<f64>,
    lrp: Option<f64>,
    lrp_loc: Option<f64>,
    lrp_fp: Option<f64>,
    lrp_fn: Option<f64>,
    laece: Option<f64>,
    n_tp: usize,
    n_fp: usize,
    n_fn: usize,
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    tau: f64,
    bins: usize,
    summary: EvaluationSummary,
    classes: Vec<ClassRow>,
}

/// Evaluates one detection file against the ground truth. Writes `accuracy.json`,
/// `accuracy.csv` and `reliability.csv` into the output directory.
pub fn cmd_evaluate(config: &RunConfig) -> Result<()> {
    let (gts, dets) = load_inputs(config)?;
    let laeces: BTreeMap<u32, Option<f64>> =
        laece_per_class(&dets, &gts, config.tau, config.bins)?.into_iter().collect();
    let classes: Vec<ClassRow> = class_accuracy(&dets, &gts, config.tau)?
        .into_iter()
        .map(|c| ClassRow {
            laece: laeces.get(&c.class_id).copied().flatten(),
            class_id: c.class_id,
            name: c.name,
            num_gt: c.num_gt,
            num_det: c.num_det,
            ap: c.ap,
            coco_ap: c.coco_ap,
            lrp: c.lrp,
            lrp_loc: c.lrp_loc,
            lrp_fp: c.lrp_fp,
            lrp_fn: c.lrp_fn,
            n_tp: c.n_tp,
            n_fp: c.n_fp,
            n_fn: c.n_fn,
        })
        .collect();
    let present: Vec<f64> = laeces.values().flatten().copied().collect();
    let summary = EvaluationSummary {
        ap50: mean_ap(&dets, &gts, 0.5, ApMode::AllPoints)?,
        coco_ap: coco_ap(&dets, &gts)?,
        lrp: mean_lrp(&dets, &gts, config.tau)?,
        laece: if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        },
    };
    println!(
        "AP50 {:.4}  COCO-AP {:.4}  LRP {:.4}  LaECE {:.4}",
        summary.ap50, summary.coco_ap, summary.lrp, summary.laece
    );

    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in &classes {
        writer
            .serialize(row)
            .map_err(|e| Error::MalformedFile(format!("CSV: {e}")))?;
    }
    let table = writer.into_inner().expect("in-memory CSV flush");
    let report = EvaluationReport {
        tau: config.tau,
        bins: config.bins,
        summary,
        classes,
    };
    let diagram = reliability_diagram(&dets, &gts, config.tau, config.bins)?;
    write_file(&config.out.join("accuracy.json"), to_json(&report))?;
    write_file(&config.out.join("accuracy.csv"), table)?;
    write_file(&config.out.join("reliability.csv"), diagram.to_csv())
}

/// Fits per-class calibrators on all given detections; writes `calibrator.json`.
pub fn cmd_calibrate(config: &RunConfig) -> Result<()> {
    let (gts, dets) = load_inputs(config)?;
    let pairs = training_pairs(&dets, &gts, config.tau)?;
    let model = fit_calibrator(config.calibrator, &pairs, gts.universe(), config.bins);
    write_file(&config.out.join("calibrator.json"), model.to_json_string() + "\n")
}

/// Writes LRP-optimal per-class thresholds to `thresholds.json`.
pub fn cmd_threshold(config: &RunConfig) -> Result<()> {
    let (gts, dets) = load_inputs(config)?;
    let thresholds = lrp_optimal_thresholds(&dets, &gts, config.tau)?;
    write_file(&config.out.join("thresholds.json"), to_json(&thresholds))
}

type SplitFilter = fn(&SplitTag) -> bool;

/// Aggregated image uncertainties for every image whose split has a detection file;
/// writes `uncertainty.json`.
pub fn cmd_uncertainty(config: &RunConfig) -> Result<()> {
    let gts = load_ground_truth(config.require(&config.gt, "gt")?)?;
    let sources: [(SplitFilter, &Option<PathBuf>); 3] = [
        (|s| matches!(s, SplitTag::Id | SplitTag::Val), &config.dets),
        (|s| matches!(s, SplitTag::Corrupt(_)), &config.dets_corrupt),
        (|s| *s == SplitTag::Ood, &config.dets_ood),
    ];
    if sources.iter().all(|(_, p)| p.is_none()) {
        return Err(Error::Config("missing required `dets`, `dets_corrupt` or `dets_ood`".into()));
    }
    let mut entries = Vec::new();
    for (belongs, path) in sources {
        let Some(path) = path else { continue };
        let dets = load_detections(path, gts.universe())?;
        let by_image = dets.by_image();
        for record in gts.images().iter().filter(|r| belongs(&r.split)) {
            let image_dets = by_image.get(&record.id).map(Vec::as_slice).unwrap_or(&[]);
            entries.push(UncertaintyEntry {
                image_id: record.id,
                uncertainty: image_uncertainty(image_dets, config.agg).value,
                split: record.split.name().to_string(),
            });
        }
    }
    entries.sort_by_key(|e| e.image_id);
    let path = config.out.join("uncertainty.json");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_uncertainties(&entries, path)
}

/// Builds `self_aware.json` (and `validation.json` with the threshold statistics) from
/// validation detections (`dets`) and pseudo-OOD detections (`dets_ood`). Validation
/// images are those tagged VAL, or every image when none is.
pub fn cmd_make_self_aware(config: &RunConfig) -> Result<()> {
    let gts = load_ground_truth(config.require(&config.gt, "gt")?)?;
    let has_val = gts.images().iter().any(|r| r.split == SplitTag::Val);
    let val_gts = if has_val {
        gts.filter_images(|r| r.split == SplitTag::Val)
    } else {
        gts
    };
    let val_dets = load_detections(config.require(&config.dets, "dets")?, val_gts.universe())?;
    let ood_dets = load_detections(config.require(&config.dets_ood, "dets_ood")?, val_gts.universe())?;
    let options = MakeSelfAwareOptions {
        tau: config.tau,
        bins: config.bins,
        calibrator: config.calibrator,
        aggregation: config.agg,
        threshold_method: config
            .target_tpr
            .map_or(ImageThresholdMethod::PseudoOod, ImageThresholdMethod::IdTpr),
        ..MakeSelfAwareOptions::default()
    };
    let (self_aware, summary) = make_self_aware(&val_gts, &val_dets, &ood_dets, &options)?;
    println!(
        "image threshold {}  BA {:.4}  TPR {:.4}  TNR {:.4}",
        self_aware.image_threshold, summary.ba, summary.tpr, summary.tnr
    );
    write_file(&config.out.join("self_aware.json"), self_aware.to_json_string() + "\n")?;
    write_file(&config.out.join("validation.json"), to_json(&summary))
}

/// Evaluates a self-aware detector on the ID, corrupted and OOD splits; writes
/// `saod_report.json` and `saod_report.txt`.
pub fn cmd_saod(config: &RunConfig) -> Result<()> {
    let gts = load_ground_truth(config.require(&config.gt, "gt")?)?;
    let universe = gts.universe();
    let id = load_detections(config.require(&config.dets, "dets")?, universe)?;
    let corrupt = load_detections(config.require(&config.dets_corrupt, "dets_corrupt")?, universe)?;
    let ood = load_detections(config.require(&config.dets_ood, "dets_ood")?, universe)?;
    let self_aware = SelfAwareConfig::load(config.require(&config.self_aware, "self_aware")?)?;
    let uncertainties: Option<BTreeMap<ImageId, f64>> = match &config.uncertainty {
        Some(path) => Some(
            load_uncertainties(path)?
                .into_iter()
                .map(|e| (e.image_id, e.uncertainty))
                .collect(),
        ),
        None => None,
    };
    let bundle = SaodBundle {
        gts: &gts,
        id: &id,
        corrupt: &corrupt,
        ood: &ood,
        uncertainties: uncertainties.as_ref(),
    };
    let report = evaluate_saod(&self_aware, bundle, config.tau, config.bins)?;
    let table = report.to_table();
    print!("{table}");
    write_file(&config.out.join("saod_report.json"), report.to_json_string() + "\n")?;
    write_file(&config.out.join("saod_report.txt"), table)
}

/// The synthetic spec for a preset name.
pub fn preset_spec(name: &str, seed: u64) -> Result<SyntheticSpec> {
    match name {
        "default" => Ok(SyntheticSpec { seed, ..SyntheticSpec::default() }),
        "oracle" => Ok(SyntheticSpec::oracle(seed)),
        "overconfident" => Ok(SyntheticSpec {
            seed,
            confidence: ConfidenceModel::Overconfident(0.2),
            ..SyntheticSpec::default()
        }),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

/// Writes a synthetic bundle (`gt.json`, `dets_*.json`, `spec.json`); needs `--seed`.
pub fn cmd_synth(config: &RunConfig) -> Result<()> {
    let seed = config
        .seed
        .ok_or_else(|| Error::Config("synth needs an explicit `seed`".into()))?;
    let spec = preset_spec(config.preset.as_deref().unwrap_or("default"), seed)?;
    generate(&spec)?.dump(&config.out)?;
    write_file(&config.out.join("spec.json"), to_json(&spec))
}
