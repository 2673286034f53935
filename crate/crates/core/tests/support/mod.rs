//! Shared test helpers: reference implementations and synthetic inputs.
#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use pseudolabel::{write_feature_map, Bitmap, FeatureMap, RleMask};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform features in `[-1, 1)`, optionally shifted by a shared offset so
/// that neighbours are positively correlated.
pub fn random_feature_map(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize, offset: f32) -> FeatureMap {
    let base: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0) * offset).collect();
    let data = (0..h * w)
        .flat_map(|_| base.iter().map(|b| b + rng.gen_range(-1.0f32..1.0)).collect::<Vec<_>>())
        .collect();
    FeatureMap::new("rand", h, w, dim, 8, data).unwrap()
}

/// Standard-normal features via Box-Muller.
pub fn gaussian_feature_map(rng: &mut ChaCha8Rng, h: usize, w: usize, dim: usize) -> FeatureMap {
    let data = (0..h * w * dim)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
        })
        .collect();
    FeatureMap::new("noise", h, w, dim, 8, data).unwrap()
}

/// Strictly decreasing thresholds in `(0.05, 0.95)`.
pub fn random_thresholds(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(1..=4);
    let mut t: Vec<f64> = (0..n).map(|_| (rng.gen_range(5..95) as f64) / 100.0).collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

pub fn random_bitmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Bitmap {
    let p: f64 = rng.gen_range(0.05..0.95);
    Bitmap::from_fn(w, h, |_, _| rng.gen_bool(p))
}

pub fn rect_rle(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> RleMask {
    RleMask::encode(&Bitmap::rect(w, h, x0, y0, x1, y1))
}

/// A grid whose left half and right half carry orthogonal features, plus a
/// small square of a third feature in the right half.
pub fn blocky_feature_map(id: &str, h: usize, w: usize) -> FeatureMap {
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let f = if (1..3).contains(&r) && (w - 3..w - 1).contains(&c) {
                [0.0, 0.0, 1.0]
            } else if c < w / 2 {
                [1.0, 0.1 * (r % 2) as f32, 0.0]
            } else {
                [0.1 * (c % 2) as f32, 1.0, 0.0]
            };
            data.extend_from_slice(&f);
        }
    }
    FeatureMap::new(id, h, w, 3, 8, data).unwrap()
}

/// Writes a small directory of feature maps (blocky and random) for pipeline runs.
pub fn write_feature_dir(dir: &Path, rng: &mut ChaCha8Rng, count: usize) {
    for i in 0..count {
        let fm = if i % 2 == 0 {
            blocky_feature_map(&format!("img{i:03}"), 8 + i % 3, 10)
        } else {
            let f = random_feature_map(rng, 10, 12, 6, 1.5);
            FeatureMap::new(format!("img{i:03}"), 10, 12, 6, 8, f.data().to_vec()).unwrap()
        };
        write_feature_map(&dir.join(format!("img{i:03}.fmap")), &fm).unwrap();
    }
}

/// Reference single-threshold AP: greedy matching by score, then for every
/// recall level the best precision achieved at that recall or beyond.
pub fn reference_ap(scores: &[f64], ious: &[Vec<f64>], num_gt: usize, thr: f64) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; num_gt];
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (rank, &d) in order.iter().enumerate() {
        let best = (0..num_gt)
            .filter(|&g| !taken[g] && ious[d][g] >= thr)
            .max_by(|&a, &b| ious[d][a].partial_cmp(&ious[d][b]).unwrap());
        if let Some(g) = best {
            taken[g] = true;
            tp += 1.0;
        }
        points.push((tp / num_gt as f64, tp / (rank as f64 + 1.0)));
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        total += points
            .iter()
            .filter(|(rc, _)| *rc >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    total / 101.0
}
