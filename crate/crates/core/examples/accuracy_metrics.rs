// AP, COCO-style AP, LRP Error with its components and LRP-optimal thresholds.

use saod::accuracy::{class_accuracy, coco_ap, lrp_optimal_thresholds, mean_ap, mean_lrp, ApMode};
use saod::testkit::{generate, SyntheticSpec};

pub fn run_example() -> saod::Result<()> {
    let bundle = generate(&SyntheticSpec { seed: 3, ..SyntheticSpec::default() })?;
    let gts = bundle.id_gts();
    let dets = &bundle.id;

    let ap50 = mean_ap(dets, &gts, 0.5, ApMode::AllPoints)?;
    let ap50_101 = mean_ap(dets, &gts, 0.5, ApMode::Coco101)?;
    println!("AP50 {ap50:.4} (101-point: {ap50_101:.4})  COCO-AP {:.4}", coco_ap(dets, &gts)?);

    println!("class      AP     LRP   loc    FP    FN");
    for row in class_accuracy(dets, &gts, 0.1)? {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        println!(
            "{:<8} {:>6} {:>6} {:>5} {:>5} {:>5}",
            row.name, f(row.ap), f(row.lrp), f(row.lrp_loc), f(row.lrp_fp), f(row.lrp_fn)
        );
    }

    let thresholds = lrp_optimal_thresholds(&bundle.val, &bundle.val_gts(), 0.1)?;
    let before = mean_lrp(dets, &gts, 0.1)?;
    let after = mean_lrp(&thresholds.apply(dets), &gts, 0.1)?;
    println!("LRP {before:.4} -> {after:.4} after LRP-optimal thresholding");
    assert!(after <= before);
    Ok(())
}

fn main() {
    run_example().expect("accuracy example");
}
