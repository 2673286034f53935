// Sort masks into whole objects, parts and subparts by how they cover each other.

use pseudolabel::hierarchy::{covering_mask, level_distribution, DEFAULT_COVER_PERCENT};
use pseudolabel::{build_forest, Bitmap, RleMask};

pub fn run_example() -> pseudolabel::Result<()> {
    let names = ["aircraft", "upper body", "lower body", "left wing", "right wing", "pilot", "cloud"];
    let rects = [
        (10, 10, 90, 90),
        (10, 10, 90, 50),
        (10, 50, 90, 90),
        (10, 20, 30, 40),
        (70, 20, 90, 40),
        (45, 15, 55, 45),
        (92, 0, 100, 30),
    ];
    let masks: Vec<RleMask> = rects
        .iter()
        .map(|&(x0, y0, x1, y1)| RleMask::encode(&Bitmap::rect(100, 100, x0, y0, x1, y1)))
        .collect();

    let forest = build_forest(&masks, DEFAULT_COVER_PERCENT)?;
    for (i, name) in names.iter().enumerate() {
        let parent = forest.parent[i].map_or("-", |p| names[p]);
        println!("{name:<11} {:>5} px  {:<8} parent: {parent}", masks[i].area(), forest.level[i].name());
    }
    let counts = level_distribution(&forest);
    println!("whole {}, part {}, subpart {} -> fractions {:?}", counts.whole, counts.part, counts.subpart, counts.fractions());

    // a mask exactly 90% inside another is not covered: the test is strict
    let a = Bitmap::rect(100, 100, 0, 0, 10, 10);
    let mut b = Bitmap::rect(100, 100, 0, 0, 9, 10);
    b.set(50, 50, true);
    let pair = [RleMask::encode(&a), RleMask::encode(&b)];
    println!("90% overlap covered: {}", covering_mask(0, &pair, DEFAULT_COVER_PERCENT)?.is_some());
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
