// Detection-level uncertainty estimators, image-level aggregation and AUROC.

use saod::uncertainty::{
    aggregate, auroc, combine_cls_loc, dempster_shafer, entropy, loc_uncertainty, Aggregation,
    EntropyMode, LocUncertainty, NormBounds,
};

pub fn run_example() -> saod::Result<()> {
    let logits = [2.0, 0.5, -1.0, 0.1];
    println!("softmax entropy      {:.4}", entropy(&logits, EntropyMode::Softmax)?);
    println!("sigmoid mean entropy {:.4}", entropy(&logits[..3], EntropyMode::SigmoidMeanBernoulli)?);
    println!("Dempster-Shafer      {:.4}", dempster_shafer(&logits[..3])?);

    let cov = [4.0, 2.5, 3.0, 1.5];
    let h = loc_uncertainty(&cov, LocUncertainty::GaussianEntropy)?;
    println!("Gaussian entropy {h:.4}, trace {}", loc_uncertainty(&cov, LocUncertainty::Trace)?);
    let bounds = NormBounds::from_values(&[0.0, 1.4], &[4.0, 9.0])?;
    println!("combined {:.4}", combine_cls_loc(0.7, h, &bounds)?);

    let detection_uncertainties = [0.05, 0.4, 0.12, 0.9, 0.3];
    for strategy in [Aggregation::Min, Aggregation::TopM(3), Aggregation::Mean, Aggregation::Sum] {
        println!("{strategy:>6}: {:.4}", aggregate(&detection_uncertainties, strategy).value);
    }
    println!("no detections: {}", aggregate(&[], Aggregation::TopM(3)).value);

    let id = [0.10, 0.22, 0.15, 0.31, 0.40];
    let ood = [0.35, 0.62, 0.80, 0.55];
    let value = auroc(&id, &ood)?;
    println!("AUROC {value:.3}");
    assert!(value > 0.9);
    Ok(())
}

fn main() {
    run_example().expect("uncertainty example");
}
