// Full pipeline over a directory of feature files, with CRF against the
// matching images, followed by overlays and a self-evaluation.

use std::fs;

use pseudolabel::eval::EvalParams;
use pseudolabel::pipeline::{self, PipelineConfig};
use pseudolabel::{coco, viz, write_feature_map, FeatureMap, RgbImage};

/// A patch grid with a bright rectangle (and a dark window inside it) on a
/// plain background, plus the RGB image it was "extracted" from.
fn synthetic(id: &str, seed: usize) -> pseudolabel::Result<(FeatureMap, RgbImage)> {
    let (h, w, patch) = (10, 12, 8);
    let inside = |r: usize, c: usize| (2..8).contains(&r) && (2 + seed % 3..9).contains(&c);
    let window = |r: usize, c: usize| (3..5).contains(&r) && (4..6).contains(&c);
    let mut data = Vec::with_capacity(h * w * 4);
    for r in 0..h {
        for c in 0..w {
            let n = ((r * 31 + c * 17 + seed) % 7) as f32 * 0.02;
            let f = if window(r, c) {
                [0.1, 0.1, 1.0, n]
            } else if inside(r, c) {
                [1.0, 0.2, n, 0.1]
            } else {
                [n, 0.2, 0.1, 1.0]
            };
            data.extend_from_slice(&f);
        }
    }
    let fm = FeatureMap::new(id, h, w, 4, patch, data)?;
    let (iw, ih) = (w * patch, h * patch);
    let pixels = (0..iw * ih)
        .flat_map(|i| {
            let (r, c) = (i / iw / patch, i % iw / patch);
            if window(r, c) {
                [40, 60, 200]
            } else if inside(r, c) {
                [220, 180, 40]
            } else {
                [70, 120, 70]
            }
        })
        .collect();
    Ok((fm, RgbImage::new(id, iw, ih, pixels)?))
}

pub fn run_example() -> pseudolabel::Result<()> {
    let dir = tempfile::tempdir()?;
    let (features, images, overlays) = (dir.path().join("features"), dir.path().join("images"), dir.path().join("viz"));
    fs::create_dir_all(&features)?;
    fs::create_dir_all(&images)?;
    for i in 0..4 {
        let id = format!("frame{i:02}");
        let (fm, img) = synthetic(&id, i)?;
        write_feature_map(&features.join(format!("{id}.fmap")), &fm)?;
        viz::save_png(&img, &images.join(format!("{id}.png")))?;
    }

    let cfg = PipelineConfig {
        worker_count: 2,
        ..PipelineConfig::default()
    };
    let out = pipeline::generate(&features, Some(&images), &cfg)?;
    for s in &out.stats.images {
        println!(
            "{}: per threshold {:?}, ensemble {}, whole/part/subpart {}/{}/{}",
            s.image_id, s.labels_per_threshold, s.ensemble, s.levels.whole, s.levels.part, s.levels.subpart
        );
    }
    let labels = dir.path().join("labels.json");
    coco::write_json(&labels, &out.annotations)?;

    let report = viz::render_all(&out.annotations, &images, &overlays, None)?;
    println!("{} overlays in {}", report.written.len(), overlays.display());

    let eval = pipeline::run_eval(&labels, &labels, &EvalParams::default(), false)?;
    println!("labels vs themselves: mask AR@1000 {:?}", eval.result.segm.and_then(|m| m.ar_at(1000)));
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
