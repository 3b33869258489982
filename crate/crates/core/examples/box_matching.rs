// Greedy matching of detections to ground truths at an IoU threshold.

use saod::datamodel::{iou, BoundingBox, ClassUniverse, Detection, DetectionSet, GroundTruth, GroundTruthSet, ImageRecord, SplitTag};
use saod::matching::{match_all, MatchLabel};

pub fn run_example() -> saod::Result<()> {
    let universe = ClassUniverse::with_names(vec!["car".into(), "person".into()])?;
    let car = BoundingBox::new(0.0, 0.0, 100.0, 50.0)?;
    let person = BoundingBox::new(200.0, 0.0, 230.0, 80.0)?;
    let gts = GroundTruthSet::new(
        universe.clone(),
        vec![ImageRecord::new(1, SplitTag::Id)],
        vec![
            GroundTruth { image_id: 1, class_id: 1, bbox: car },
            GroundTruth { image_id: 1, class_id: 2, bbox: person },
        ],
    )?;

    let dets = DetectionSet::new(
        &universe,
        vec![
            // a loose box scored high claims the car first
            Detection::new(1, 1, 0.9, BoundingBox::new(0.0, 0.0, 70.0, 50.0)?),
            // the tighter box arrives second and becomes a duplicate FP
            Detection::new(1, 1, 0.8, BoundingBox::new(2.0, 0.0, 100.0, 50.0)?),
            // right place, wrong class
            Detection::new(1, 1, 0.7, person),
        ],
    )?;

    println!("IoU of the loose box: {:.3}", iou(&dets.detections()[0].bbox, &car));
    for m in match_all(&dets, &gts, 0.5)? {
        let name = universe.name(m.class_id);
        let a = &m.assignment;
        println!("{name}: TP {} FP {} FN {}", a.n_tp(), a.n_fp(), a.n_fn());
        for (d, label) in m.dets.iter().zip(a.labels()) {
            match label {
                MatchLabel::Tp { gt, iou } => println!("  score {:.2} -> TP on GT {gt} (IoU {iou:.3})", d.score),
                MatchLabel::Fp => println!("  score {:.2} -> FP", d.score),
            }
        }
    }

    let car_match = &match_all(&dets, &gts, 0.5)?[0];
    assert!(car_match.assignment.labels()[0].is_tp());
    assert_eq!(car_match.assignment.n_fp(), 2);
    Ok(())
}

fn main() {
    run_example().expect("box matching example");
}
