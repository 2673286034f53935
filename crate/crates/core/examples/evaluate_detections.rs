// Class-agnostic recall and precision of detections against ground truth.

use pseudolabel::eval::{self, Detection, EvalParams, GroundTruth, IouType};
use pseudolabel::pipeline::format_metrics;
use pseudolabel::HierLevel;

fn gt(id: u64, image_id: u64, b: [f64; 4], level: HierLevel) -> GroundTruth {
    GroundTruth {
        id,
        image_id,
        bbox: b.into(),
        mask: None,
        level: Some(level),
    }
}

fn det(image_id: u64, b: [f64; 4], score: f64) -> Detection {
    Detection {
        image_id,
        bbox: b.into(),
        score,
        mask: None,
        level: None,
    }
}

pub fn run_example() -> pseudolabel::Result<()> {
    let gts = vec![
        gt(1, 1, [10.0, 10.0, 200.0, 150.0], HierLevel::Whole),
        gt(2, 1, [20.0, 20.0, 40.0, 40.0], HierLevel::Part),
        gt(3, 1, [25.0, 25.0, 10.0, 10.0], HierLevel::Subpart),
        gt(4, 2, [0.0, 0.0, 60.0, 90.0], HierLevel::Whole),
    ];
    let dets = vec![
        det(1, [12.0, 8.0, 196.0, 150.0], 0.95),
        det(1, [22.0, 18.0, 40.0, 44.0], 0.80),
        det(1, [300.0, 300.0, 20.0, 20.0], 0.60),
        det(2, [0.0, 10.0, 60.0, 80.0], 0.70),
        // image 3 has no ground truth; its detection only costs precision
        det(3, [5.0, 5.0, 30.0, 30.0], 0.50),
    ];
    let params = EvalParams::default();
    let m = eval::evaluate(&[1, 2, 3], &gts, &dets, &params, IouType::Bbox)?;
    print!("{}", format_metrics(&m));

    for (level, lm) in eval::evaluate_per_level(&[1, 2, 3], &gts, &dets, &params, IouType::Bbox)? {
        println!("{:<8} AR@1000 {:?}", level.name(), lm.ar_at(1000));
    }

    let one = eval::match_and_recall(&dets[..1], &gts[..1], &eval::default_iou_thresholds(), 1000, IouType::Bbox)?;
    println!("single box recall by threshold: {one:?}");
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
