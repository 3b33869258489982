// Padding every image with score-0 one-pixel detections: AP does not move, LaECE drops
// and LRP Error rises.

use saod::accuracy::{mean_ap, mean_lrp, ApMode};
use saod::calibration::{laece, DEFAULT_BINS};
use saod::datamodel::ImageId;
use saod::testkit::{generate, inject_dummies, ConfidenceModel, SyntheticSpec};

pub fn run_example() -> saod::Result<()> {
    let bundle = generate(&SyntheticSpec {
        seed: 21,
        num_images: 20,
        confidence: ConfidenceModel::Overconfident(0.2),
        ..SyntheticSpec::default()
    })?;
    let gts = bundle.id_gts();
    let images: Vec<ImageId> = gts.images().iter().map(|r| r.id).collect();

    println!("padding       AP50   LaECE     LRP");
    let mut previous: Option<(f64, f64, f64)> = None;
    for k in [0usize, 100, 300, 500] {
        let dets = inject_dummies(&bundle.id, &images, k, gts.universe().k(), 1);
        let ap = mean_ap(&dets, &gts, 0.5, ApMode::AllPoints)?;
        let cal = laece(&dets, &gts, 0.1, DEFAULT_BINS)?;
        let lrp = mean_lrp(&dets, &gts, 0.1)?;
        println!("{k:>7}  {:>6.3}  {:>6.3}  {:>6.3}", ap, cal, lrp);
        if let Some((ap0, cal0, lrp0)) = previous {
            assert_eq!(ap, ap0);
            assert!(cal < cal0 && lrp > lrp0);
        }
        previous = Some((ap, cal, lrp));
    }
    Ok(())
}

fn main() {
    run_example().expect("dummy detection example");
}
