// Building a pseudo-OOD image by zeroing ground-truth regions, and choosing the image
// threshold that maximises balanced accuracy.

use saod::datamodel::BoundingBox;
use saod::uncertainty::{decision_stats, mask_boxes, select_threshold_ba, threshold_at_tpr, Raster, RasterData};

pub fn run_example() -> saod::Result<()> {
    let (h, w) = (8, 10);
    let pixels: Vec<u8> = (0..h * w * 3).map(|i| (i % 251) as u8 + 1).collect();
    let image = Raster::new(h, w, 3, RasterData::U8(pixels))?;
    let objects = [BoundingBox::new(1.0, 1.0, 4.0, 3.0)?, BoundingBox::new(6.2, 4.5, 9.5, 7.1)?];

    let mut masked = image.clone();
    mask_boxes(&mut masked, &objects);
    let RasterData::U8(data) = &masked.data else { unreachable!() };
    let zeroed = data.iter().filter(|&&v| v == 0).count() / 3;
    println!("zeroed {zeroed} of {} pixels", h * w);

    let path = std::env::temp_dir().join(format!("saod_pseudo_ood_{}.raster", std::process::id()));
    masked.save(&path)?;
    assert_eq!(Raster::load(&path)?, masked);
    let _ = std::fs::remove_file(&path);

    // image uncertainties of validation images and their masked copies
    let pseudo_id = [0.12, 0.2, 0.25, 0.31, 0.18, 0.6];
    let pseudo_ood = [0.55, 0.7, 0.81, 0.4, 1e12];
    let chosen = select_threshold_ba(&pseudo_id, &pseudo_ood)?;
    println!(
        "BA-optimal threshold {:.3}: TPR {:.3} TNR {:.3} BA {:.3}",
        chosen.stats.threshold, chosen.stats.tpr, chosen.stats.tnr, chosen.stats.ba
    );
    let baseline = decision_stats(&pseudo_id, &pseudo_ood, threshold_at_tpr(&pseudo_id, 0.95)?);
    println!("TPR@0.95 threshold {:.3}: BA {:.3}", baseline.threshold, baseline.ba);
    assert!(chosen.stats.ba >= baseline.ba);
    Ok(())
}

fn main() {
    run_example().expect("pseudo-OOD example");
}
