// Run-length encoded masks: encoding, set operations and the compressed string form.

use pseudolabel::{Bitmap, RleMask};

pub fn run_example() -> pseudolabel::Result<()> {
    let square = Bitmap::rect(5, 5, 1, 1, 4, 4);
    let rle = RleMask::encode(&square);
    println!("3x3 square in 5x5: counts {:?}, area {}", rle.counts(), rle.area());
    println!("compressed: {:?}", rle.to_compressed());

    let shifted = RleMask::encode(&Bitmap::rect(5, 5, 2, 1, 5, 4));
    println!(
        "intersection {} px, IoU {:.3}, bbox {:?}",
        rle.intersection_area(&shifted)?,
        rle.iou(&shifted)?,
        shifted.bbox()
    );

    let big = Bitmap::from_fn(640, 480, |x, y| (x / 40 + y / 30) % 3 == 0);
    let big_rle = RleMask::encode(&big);
    let s = big_rle.to_compressed();
    let back = RleMask::from_compressed(640, 480, &s)?;
    assert_eq!(back, big_rle);
    assert_eq!(back.decode(), big);
    println!(
        "640x480 pattern: {} px, {} runs, {} compressed bytes vs {} dense",
        big_rle.area(),
        big_rle.counts().len(),
        s.len(),
        640 * 480
    );

    match RleMask::from_counts(5, 5, vec![3, 4]) {
        Err(e) => println!("bad counts: {e}"),
        Ok(_) => unreachable!("counts must cover the image"),
    }
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
