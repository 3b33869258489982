// End to end: turn a detector into a self-aware one on validation data, then score it
// with BA, IDQ, IDQ_T and DAQ.

use saod::saod::{evaluate_saod, make_self_aware, MakeSelfAwareOptions, SaodBundle};
use saod::testkit::{generate, SyntheticSpec};

pub fn run_example() -> saod::Result<()> {
    let data = generate(&SyntheticSpec { seed: 42, ..SyntheticSpec::default() })?;

    let options = MakeSelfAwareOptions::default();
    let (config, validation) = make_self_aware(&data.val_gts(), &data.val, &data.pseudo_ood, &options)?;
    println!(
        "image threshold {:.3} (validation BA {:.3}); {} class thresholds",
        config.image_threshold,
        validation.ba,
        config.detection_thresholds.0.len()
    );

    let bundle = SaodBundle {
        gts: &data.gts,
        id: &data.id,
        corrupt: &data.corrupt,
        ood: &data.ood,
        uncertainties: None,
    };
    let report = evaluate_saod(&config, bundle, options.tau, options.bins)?;
    print!("{}", report.to_table());
    println!(
        "accepted: ID {:.2}, C1 {:.2?}, C3 {:.2?}, C5 {:.2?}, OOD {:.2}",
        report.acceptance.id,
        report.acceptance.corrupt_s1,
        report.acceptance.corrupt_s3,
        report.acceptance.corrupt_s5,
        report.acceptance.ood
    );
    assert!(report.daq > 0.0 && report.daq <= 1.0);
    Ok(())
}

fn main() {
    run_example().expect("self-aware pipeline example");
}
