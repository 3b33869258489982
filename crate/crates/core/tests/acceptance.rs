//! Acceptance criteria. Runs without the libtest harness and prints one line per
//! criterion; exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saod::accuracy::{class_ap, class_lrp, coco_ap, mean_ap, mean_lrp, ApMode};
use saod::calibration::{
    apply_calibrator, bin_stats, calibration_targets, fit_calibrator, laece, training_pairs, CalibratorKind,
    DEFAULT_BINS,
};
use saod::datamodel::{BoundingBox, Detection, GroundTruth, ImageId};
use saod::matching::match_class;
use saod::saod::{daq, idq_from};
use saod::testkit::{
    brute_force_ap, brute_force_laece, brute_force_lrp, generate, inject_dummies, random_tiny_instance,
    ConfidenceModel, SyntheticSpec,
};
use saod::uncertainty::{aggregate, auroc, balanced_accuracy, Aggregation};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn refs<T>(v: &[T]) -> Vec<&T> {
    v.iter().collect()
}

fn within(actual: f64, expected: f64, tol: f64, what: &str) -> Result<(), String> {
    check((actual - expected).abs() <= tol, || {
        format!("{what}: got {actual:.6}, expected {expected} +/- {tol}")
    })
}

fn harmonic_recomposition() -> Outcome {
    let start = Instant::now();
    within(idq_from(0.749, 0.173), 0.385, 1e-3, "IDQ")?;
    within(daq(0.877, 0.385, 0.262), 0.397, 1e-3, "DAQ")?;
    within(daq(0.858, 0.435, 0.308), 0.447, 1e-3, "DAQ (second row)")?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "IDQ {:.4}, DAQ {:.4} and {:.4} in {elapsed:?}",
        idq_from(0.749, 0.173),
        daq(0.877, 0.385, 0.262),
        daq(0.858, 0.435, 0.308)
    ))
}

fn ba_formula() -> Outcome {
    let ba = balanced_accuracy(0.947, 0.816);
    within(ba, 0.877, 1e-3, "BA")?;
    Ok(format!("BA {ba:.4}"))
}

fn ap_of(dets: &[Detection], gts: &[GroundTruth], tau: f64) -> f64 {
    class_ap(&refs(dets), &refs(gts), tau, ApMode::AllPoints)
        .expect("valid tau")
        .unwrap_or(0.0)
}

fn dummy_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let taus = [0.1, 0.3, 0.5, 0.75];
    let instances = 10_000;
    let mut grew = 0;
    for n in 0..instances {
        let (dets, gts) = random_tiny_instance(&mut rng, 8, 4);
        let tau = taus[n % taus.len()];
        let base = ap_of(&dets, &gts, tau);

        // score-0 one-pixel dummies far away from every ground truth
        let mut padded = dets.clone();
        for _ in 0..rng.gen_range(1..=20) {
            padded.push(Detection::new(rng.gen_range(1..=2), 1, 0.0, BoundingBox::pixel(500.0, 500.0)));
        }
        let with_dummies = ap_of(&padded, &gts, tau);
        check((with_dummies - base).abs() <= 1e-12, || {
            format!("instance {n}: dummies moved AP from {base} to {with_dummies}")
        })?;

        // lower-scored detections including copies of ground-truth boxes
        let floor = dets.iter().map(|d| d.score).fold(1.0, f64::min);
        let mut extended = dets.clone();
        for g in &gts {
            if rng.gen_bool(0.6) {
                extended.push(Detection::new(g.image_id, 1, floor * rng.gen_range(0.0..1.0), g.bbox));
            }
        }
        for _ in 0..rng.gen_range(0..3) {
            let x = f64::from(rng.gen_range(0..6u32));
            let bbox = BoundingBox::new(x, x, x + 3.0, x + 3.0).expect("valid box");
            extended.push(Detection::new(rng.gen_range(1..=2), 1, floor * rng.gen_range(0.0..1.0), bbox));
        }
        let with_tps = ap_of(&extended, &gts, tau);
        check(with_tps >= base - 1e-12, || {
            format!("instance {n}: lower-scored detections reduced AP from {base} to {with_tps}")
        })?;
        let n_tp = |d: &[Detection]| match_class(&refs(d), &refs(&gts), tau).map(|m| m.n_tp()).unwrap_or(0);
        if n_tp(&extended) > n_tp(&dets) {
            check(with_tps > base, || {
                format!("instance {n}: true positives were added but AP stayed at {base}")
            })?;
            grew += 1;
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("{instances} instances, {grew} with added true positives, in {elapsed:?}"))
}

fn dummy_pathology() -> Outcome {
    let bundle = generate(&SyntheticSpec {
        seed: 404,
        num_images: 30,
        confidence: ConfidenceModel::Overconfident(0.2),
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let gts = bundle.id_gts();
    let images: Vec<ImageId> = gts.images().iter().map(|r| r.id).collect();
    let mut rows = Vec::new();
    for k in [0usize, 100, 300, 500] {
        let dets = if k == 0 {
            bundle.id.clone()
        } else {
            inject_dummies(&bundle.id, &images, k, gts.universe().k(), 7)
        };
        let ap = mean_ap(&dets, &gts, 0.5, ApMode::AllPoints).map_err(|e| e.to_string())?;
        let coco = coco_ap(&dets, &gts).map_err(|e| e.to_string())?;
        let cal = laece(&dets, &gts, 0.1, DEFAULT_BINS).map_err(|e| e.to_string())?;
        let lrp = mean_lrp(&dets, &gts, 0.1).map_err(|e| e.to_string())?;
        rows.push((k, ap, coco, cal, lrp));
    }
    for w in rows.windows(2) {
        let ((k0, ap0, coco0, cal0, lrp0), (k1, ap1, coco1, cal1, lrp1)) = (w[0], w[1]);
        check((ap1 - ap0).abs() <= 1e-12 && (coco1 - coco0).abs() <= 1e-12, || {
            format!("AP changed between padding {k0} and {k1}")
        })?;
        check(cal1 < cal0, || format!("LaECE did not drop from {k0} ({cal0}) to {k1} ({cal1})"))?;
        check(lrp1 > lrp0, || format!("LRP did not rise from {k0} ({lrp0}) to {k1} ({lrp1})"))?;
    }
    let summary: Vec<String> = rows
        .iter()
        .map(|(k, ap, _, cal, lrp)| format!("k={k}: AP50 {ap:.3} LaECE {cal:.4} LRP {lrp:.4}"))
        .collect();
    Ok(summary.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let taus = [0.0, 0.1, 0.25, 0.5, 0.7];
    let instances = 1000;
    let mut worst = 0.0f64;
    for n in 0..instances {
        let (dets, gts) = random_tiny_instance(&mut rng, 8, 4);
        let tau = taus[n % taus.len()];
        if !dets.is_empty() || !gts.is_empty() {
            let diff = (ap_of(&dets, &gts, tau) - brute_force_ap(&dets, &gts, tau)).abs();
            worst = worst.max(diff);
            check(diff <= 1e-12, || format!("instance {n}: AP differs by {diff}"))?;
        }
        let production = class_lrp(&refs(&dets), &refs(&gts), tau).map_err(|e| e.to_string())?.map(|r| r.lrp);
        match (production, brute_force_lrp(&dets, &gts, tau)) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                check((a - b).abs() <= 1e-12, || format!("instance {n}: LRP {a} vs {b}"))?;
            }
            (None, None) => {}
            (a, b) => return Err(format!("instance {n}: LRP definedness differs ({a:?} vs {b:?})")),
        }
        let assignment = match_class(&refs(&dets), &refs(&gts), tau).map_err(|e| e.to_string())?;
        let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        let production = (!dets.is_empty()).then(|| bin_stats(&scores, assignment.labels(), DEFAULT_BINS).laece());
        match (production, brute_force_laece(&dets, &gts, tau, DEFAULT_BINS)) {
            (Some(a), Some(b)) => {
                worst = worst.max((a - b).abs());
                check((a - b).abs() <= 1e-12, || format!("instance {n}: LaECE {a} vs {b}"))?;
            }
            (None, None) => {}
            (a, b) => return Err(format!("instance {n}: LaECE definedness differs ({a:?} vs {b:?})")),
        }
    }
    Ok(format!("{instances} instances, largest difference {worst:e}"))
}

/// Each bin holds detections sharing one target value: TPs of a bin all have the same
/// IoU, FPs all sit in bin 0.
fn single_value_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let levels = [0.3, 0.5, 0.62, 0.8, 0.9, 1.0];
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for cell in 0..rng.gen_range(1..12) {
        let x = 100.0 * f64::from(cell);
        let gt = BoundingBox::new(x, 0.0, x + 40.0, 40.0).expect("valid box");
        gts.push(GroundTruth { image_id: 1, class_id: 1, bbox: gt });
        let target = levels[rng.gen_range(0..levels.len())];
        let dx = 40.0 * (1.0 - target) / (1.0 + target);
        dets.push(Detection::new(1, 1, rng.gen_range(0.0..1.0), gt.translate(dx, 0.0)));
        if rng.gen_bool(0.3) {
            let fp = BoundingBox::new(x + 50.0, 50.0, x + 80.0, 80.0).expect("valid box");
            dets.push(Detection::new(1, 1, rng.gen_range(0.0..1.0), fp));
        }
    }
    (dets, gts)
}

fn calibration_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for n in 0..500 {
        let (dets, gts) = single_value_instance(&mut rng);
        let assignment = match_class(&refs(&dets), &refs(&gts), 0.1).map_err(|e| e.to_string())?;
        let targets = calibration_targets(&assignment);
        let rescored: Vec<Detection> = dets
            .iter()
            .zip(&targets)
            .map(|(d, &t)| Detection { score: t, ..d.clone() })
            .collect();
        let after = match_class(&refs(&rescored), &refs(&gts), 0.1).map_err(|e| e.to_string())?;
        let value = bin_stats(&targets, after.labels(), DEFAULT_BINS).laece();
        worst = worst.max(value);
        check(value < 1e-12, || format!("instance {n}: LaECE {value} after rescoring to targets"))?;
    }

    let mut lines = vec![format!("target rescoring max LaECE {worst:e}")];
    for seed in [31u64, 32, 33] {
        let bundle = generate(&SyntheticSpec {
            seed,
            confidence: ConfidenceModel::Overconfident(0.2),
            ..SyntheticSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let (val_gts, id_gts) = (bundle.val_gts(), bundle.id_gts());
        let pairs = training_pairs(&bundle.val, &val_gts, 0.1).map_err(|e| e.to_string())?;
        let before = laece(&bundle.id, &id_gts, 0.1, DEFAULT_BINS).map_err(|e| e.to_string())?;
        let mut parts = vec![format!("seed {seed}: raw {before:.4}")];
        for kind in [
            CalibratorKind::LinearRegression,
            CalibratorKind::IsotonicRegression,
            CalibratorKind::HistogramBinning,
        ] {
            let model = fit_calibrator(kind, &pairs, val_gts.universe(), DEFAULT_BINS);
            let calibrated = apply_calibrator(&model, &bundle.id).map_err(|e| e.to_string())?;
            let after = laece(&calibrated, &id_gts, 0.1, DEFAULT_BINS).map_err(|e| e.to_string())?;
            check(after < before, || format!("seed {seed}: {kind:?} LaECE {after} not below {before}"))?;
            parts.push(format!("{kind:?} {after:.4}"));
        }
        lines.push(parts.join(" "));
    }
    Ok(lines.join("; "))
}

fn tau_sensitivity() -> Outcome {
    let mut checked = 0;
    for seed in 0..20u64 {
        let bundle = generate(&SyntheticSpec {
            seed,
            iou_range: (0.51, 1.0),
            confidence: if seed % 2 == 0 {
                ConfidenceModel::Overconfident(0.1)
            } else {
                ConfidenceModel::Underconfident(0.1)
            },
            ..SyntheticSpec::default()
        })
        .map_err(|e| e.to_string())?;
        let gts = bundle.id_gts();
        let reference = laece(&bundle.id, &gts, 0.0, DEFAULT_BINS).map_err(|e| e.to_string())?;
        for tau in [0.1, 0.2, 0.3, 0.4, 0.5] {
            let value = laece(&bundle.id, &gts, tau, DEFAULT_BINS).map_err(|e| e.to_string())?;
            check(value.to_bits() == reference.to_bits(), || {
                format!("seed {seed}: LaECE {value} at tau {tau} differs from {reference} at tau 0")
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} tau values bit-identical across 20 datasets"))
}

fn aggregation_and_auroc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 0..10_000 {
        let len = rng.gen_range(1..=40);
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let m = rng.gen_range(1..=len);
        let min = aggregate(&values, Aggregation::Min).value;
        let top = aggregate(&values, Aggregation::TopM(m)).value;
        let mean = aggregate(&values, Aggregation::Mean).value;
        let sum = aggregate(&values, Aggregation::Sum).value;
        check(min <= top + 1e-12 && top <= mean + 1e-12 && mean <= sum + 1e-12, || {
            format!("vector {n}: min {min} top {top} mean {mean} sum {sum}")
        })?;
    }
    for n in 0..1000 {
        let id: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ood: Vec<f64> = (0..rng.gen_range(1..50)).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = auroc(&id, &ood).map_err(|e| e.to_string())?;
        for (name, f) in [
            ("affine", (|x: f64| 5.0 * x - 2.0) as fn(f64) -> f64),
            ("exp", |x: f64| x.exp()),
            ("cube", |x: f64| x * x * x + x),
        ] {
            let t = |v: &[f64]| v.iter().map(|&x| f(x)).collect::<Vec<_>>();
            let moved = auroc(&t(&id), &t(&ood)).map_err(|e| e.to_string())?;
            check((moved - base).abs() <= 1e-12, || format!("sample {n}: {name} moved AUROC {base} -> {moved}"))?;
        }
    }
    Ok("10000 vectors ordered; AUROC unchanged on 1000 samples under 3 transforms".into())
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_saod"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), || {
        format!("`saod {}` failed: {}", args.join(" "), String::from_utf8_lossy(&status.stderr))
    })
}

fn saod_pipeline(dir: &Path, preset: &str, seed: &str, out: &str) -> Result<(), String> {
    let d = |f: &str| dir.join(f).display().to_string();
    let data = d("data");
    let p = |f: &str| format!("{data}/{f}");
    run_cli(&["synth", "--seed", seed, "--preset", preset, "--out", &data])?;
    run_cli(&[
        "make-self-aware", "--gt", &p("gt.json"), "--dets", &p("dets_val.json"),
        "--dets-ood", &p("dets_pseudo_ood.json"), "--out", &d("sa"),
    ])?;
    run_cli(&[
        "saod", "--gt", &p("gt.json"), "--dets", &p("dets_id.json"), "--dets-corrupt", &p("dets_corrupt.json"),
        "--dets-ood", &p("dets_ood.json"), "--self-aware", &d("sa/self_aware.json"), "--out", &d(out),
    ])
}

fn report_daq(path: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    value["daq"].as_f64().ok_or_else(|| "report has no daq".to_string())
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seeded = tmp.path().join("seeded");
    saod_pipeline(&seeded, "default", "1234", "run1")?;
    saod_pipeline(&seeded, "default", "1234", "run2")?;
    for file in ["saod_report.json", "saod_report.txt"] {
        let a = std::fs::read(seeded.join("run1").join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(seeded.join("run2").join(file)).map_err(|e| e.to_string())?;
        check(a == b, || format!("{file} differs between runs"))?;
    }

    let oracle = tmp.path().join("oracle");
    saod_pipeline(&oracle, "oracle", "5", "report")?;
    let oracle_daq = report_daq(&oracle.join("report/saod_report.json"))?;
    check(oracle_daq == 1.0, || format!("oracle DAQ {oracle_daq}"))?;

    // same bundle, detector that accepts every image
    let sa_path = oracle.join("sa/self_aware.json");
    let mut config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&sa_path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    config["image_threshold"] = serde_json::Value::String("inf".into());
    let accept_all = oracle.join("accept_all.json");
    std::fs::write(&accept_all, config.to_string()).map_err(|e| e.to_string())?;
    let data = oracle.join("data");
    let p = |f: &str| data.join(f).display().to_string();
    let out = oracle.join("accept_all_report").display().to_string();
    run_cli(&[
        "saod", "--gt", &p("gt.json"), "--dets", &p("dets_id.json"), "--dets-corrupt", &p("dets_corrupt.json"),
        "--dets-ood", &p("dets_ood.json"), "--self-aware", &accept_all.display().to_string(), "--out", &out,
    ])?;
    let accept_daq = report_daq(&oracle.join("accept_all_report/saod_report.json"))?;
    check(accept_daq == 0.0, || format!("accept-all DAQ {accept_daq}"))?;

    let seeded_daq = report_daq(&seeded.join("run1/saod_report.json"))?;
    Ok(format!("reports byte-identical (DAQ {seeded_daq:.4}); oracle DAQ {oracle_daq}; accept-all DAQ {accept_daq}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("harmonic-mean recomposition", harmonic_recomposition),
        ("balanced accuracy formula", ba_formula),
        ("dummy detections never change AP", dummy_invariance),
        ("dummy-detection calibration pathology", dummy_pathology),
        ("oracle equivalence", oracle_equivalence),
        ("calibration optimality", calibration_optimality),
        ("tau-insensitivity of LaECE", tau_sensitivity),
        ("aggregation ordering and AUROC invariance", aggregation_and_auroc),
        ("end-to-end determinism", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(criterion)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
