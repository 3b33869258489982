// Fitting histogram binning, linear regression and isotonic regression calibrators on
// validation detections and applying them to held-out detections.

use saod::calibration::{apply_calibrator, fit_calibrator, laece, training_pairs, CalibratorKind, DEFAULT_BINS};
use saod::testkit::{generate, ConfidenceModel, SyntheticSpec};

pub fn run_example() -> saod::Result<()> {
    let bundle = generate(&SyntheticSpec {
        seed: 9,
        confidence: ConfidenceModel::Overconfident(0.2),
        ..SyntheticSpec::default()
    })?;
    let (val_gts, id_gts) = (bundle.val_gts(), bundle.id_gts());
    let pairs = training_pairs(&bundle.val, &val_gts, 0.1)?;
    let before = laece(&bundle.id, &id_gts, 0.1, DEFAULT_BINS)?;
    println!("uncalibrated LaECE {before:.4}");

    for kind in [
        CalibratorKind::HistogramBinning,
        CalibratorKind::LinearRegression,
        CalibratorKind::IsotonicRegression,
    ] {
        let model = fit_calibrator(kind, &pairs, val_gts.universe(), DEFAULT_BINS);
        let calibrated = apply_calibrator(&model, &bundle.id)?;
        let after = laece(&calibrated, &id_gts, 0.1, DEFAULT_BINS)?;
        println!("{kind:?}: LaECE {after:.4}");
        assert!(after < before);
    }
    Ok(())
}

fn main() {
    run_example().expect("calibration example");
}
