// LaECE and reliability-diagram data for a calibrated and an overconfident detector.

use saod::calibration::{laece, reliability_diagram, DEFAULT_BINS};
use saod::testkit::{generate, ConfidenceModel, SyntheticSpec};

pub fn run_example() -> saod::Result<()> {
    let calibrated = generate(&SyntheticSpec { seed: 5, ..SyntheticSpec::default() })?;
    let overconfident = generate(&SyntheticSpec {
        seed: 5,
        confidence: ConfidenceModel::Overconfident(0.2),
        ..SyntheticSpec::default()
    })?;

    let gts = calibrated.id_gts();
    let good = laece(&calibrated.id, &gts, 0.1, DEFAULT_BINS)?;
    let bad = laece(&overconfident.id, &overconfident.id_gts(), 0.1, DEFAULT_BINS)?;
    println!("LaECE calibrated {good:.4}, overconfident {bad:.4}");

    let diagram = reliability_diagram(&overconfident.id, &overconfident.id_gts(), 0.1, DEFAULT_BINS)?;
    for bar in diagram.bars.iter().filter(|b| b.n_classes > 0) {
        let (conf, perf) = (bar.mean_conf.unwrap_or(0.0), bar.mean_perf.unwrap_or(0.0));
        println!("[{:.2}, {:.2})  conf {conf:.3}  perf {perf:.3}", bar.bin_low, bar.bin_high);
    }

    assert!(good < 0.01 && bad > good);
    Ok(())
}

fn main() {
    run_example().expect("LaECE example");
}
