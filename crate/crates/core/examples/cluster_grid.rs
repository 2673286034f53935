// Merge a small synthetic patch grid and print the partition at each threshold.

use pseudolabel::hac::{cluster_with_stats, region_to_mask};
use pseudolabel::{ClusterConfig, FeatureMap};

/// Three blobs on a 6x8 grid: sky, ground and a square object on the ground.
fn scene() -> FeatureMap {
    let (h, w) = (6, 8);
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let jitter = ((r * 7 + c * 3) % 5) as f32 * 0.05;
            let f = if (3..5).contains(&r) && (2..4).contains(&c) {
                [0.1, 0.2 + jitter, 1.0]
            } else if r < 3 {
                [1.0, jitter, 0.1]
            } else {
                [jitter, 1.0, 0.3]
            };
            data.extend_from_slice(&f);
        }
    }
    FeatureMap::new("scene", h, w, 3, 8, data).expect("valid grid")
}

pub fn run_example() -> pseudolabel::Result<()> {
    let fm = scene();
    let cfg = ClusterConfig::with_thresholds([0.9, 0.5, 0.1]);
    let (snapshots, stats) = cluster_with_stats(&fm, &cfg)?;
    println!("{}x{} grid, {} merges, {} heap pops ({} stale)", fm.grid_h(), fm.grid_w(), stats.merges, stats.pops, stats.stale_pops);
    for snap in &snapshots {
        println!("threshold {:.2}: {} regions after {} merges", snap.threshold, snap.regions.len(), snap.merge_count);
        let mut label = vec![0; fm.num_patches()];
        for (k, region) in snap.regions.iter().enumerate() {
            for &p in &region.patches {
                label[p] = k;
            }
        }
        for row in label.chunks(fm.grid_w()) {
            println!("  {}", row.iter().map(|l| char::from(b'a' + *l as u8 % 26)).collect::<String>());
        }
    }
    let finest = &snapshots[0];
    let object = finest.regions.iter().min_by_key(|r| r.len()).expect("non-empty partition");
    let mask = region_to_mask(object, fm.grid_w(), fm.grid_h(), fm.patch_size());
    println!("smallest region: {} patches, {} px, bbox {:?}", object.len(), mask.area(), mask.bbox());
    Ok(())
}

fn main() -> pseudolabel::Result<()> {
    run_example()
}
