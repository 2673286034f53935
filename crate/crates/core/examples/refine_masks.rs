// Clean up candidate masks: fill holes, CRF refinement against the image,
// quality filters and the cross-threshold ensemble.

use pseudolabel::crf::{CrfContext, CrfParams};
use pseudolabel::postprocess::{ensemble, fill_holes, filter_masks, FilterRules, MaskRecord, DEFAULT_DEDUP_IOU};
use pseudolabel::{Bitmap, RgbImage};

pub fn run_example() -> pseudolabel::Result<()> {
    let (w, h) = (64, 48);
    // a red disc on a gray background
    let inside = |x: usize, y: usize| (x as f64 - 30.0).powi(2) + (y as f64 - 22.0).powi(2) < 15.0f64.powi(2);
    let pixels = (0..w * h)
        .flat_map(|i| if inside(i % w, i / w) { [210, 40, 30] } else { [110, 110, 110] })
        .collect();
    let img = RgbImage::new("disc", w, h, pixels)?;
    let truth = Bitmap::from_fn(w, h, inside);

    // a blocky 8x8-patch guess of the disc with a one-pixel hole
    let mut coarse = Bitmap::from_fn(w, h, |x, y| inside(x / 8 * 8 + 4, y / 8 * 8 + 4));
    coarse.set(30, 22, false);
    let filled = fill_holes(&coarse);
    println!("hole filling: {} -> {} px", coarse.area(), filled.area());

    let ctx = CrfContext::new(&img, &CrfParams::default())?;
    let refined = ctx.refine(&filled)?;
    let crf_iou = filled.iou(&refined).unwrap_or(0.0);
    println!(
        "IoU with the disc: blocky {:.3}, refined {:.3} (before/after CRF IoU {:.3})",
        filled.iou(&truth).unwrap_or(0.0),
        refined.iou(&truth).unwrap_or(0.0),
        crf_iou
    );

    let background = Bitmap::from_fn(w, h, |x, y| !inside(x, y));
    let speck = Bitmap::rect(w, h, 60, 0, 64, 4);
    let candidates: Vec<MaskRecord> = [(&refined, crf_iou), (&background, 1.0), (&speck, 1.0)]
        .into_iter()
        .filter_map(|(m, iou)| MaskRecord::new("disc", m, 0.4, iou))
        .collect();
    let kept = filter_masks(candidates, &FilterRules::default());
    println!("filters keep {} of 3 (background touches 4 corners, speck is 16 px)", kept.len());

    // the same object found again at a lower threshold collapses into one record
    let again = kept.iter().map(|r| MaskRecord { source_threshold: 0.1, ..r.clone() }).collect();
    let merged = ensemble(vec![kept, again], DEFAULT_DEDUP_IOU);
    println!("ensemble: {} mask(s), first from threshold {}", merged.len(), merged[0].source_threshold);
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
