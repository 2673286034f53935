mod support;

use proptest::prelude::*;
use pseudolabel::hac::{cluster_with_stats, region_to_mask};
use pseudolabel::{cluster, cosine_similarity, ClusterConfig, Connectivity, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn matches_oracle(fm: &FeatureMap, cfg: &ClusterConfig) -> bool {
    let snaps = cluster(fm, cfg).unwrap();
    let expected = support::oracle::cluster(
        fm.grid_h(),
        fm.grid_w(),
        fm.dim(),
        fm.data(),
        &cfg.thresholds,
        cfg.connectivity == Connectivity::Eight,
    );
    snaps.iter().map(|s| s.partition()).collect::<Vec<_>>() == expected
}

#[test]
fn random_unit_grid_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let fm = support::random_feature_map(&mut rng, 4, 4, 5, 0.0);
        assert!(matches_oracle(&fm, &ClusterConfig::with_thresholds([0.6, 0.3])));
    }
}

#[test]
fn eight_connectivity_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let (h, w) = (rng.gen_range(2..8), rng.gen_range(2..8));
        let dim = rng.gen_range(2..6);
        let fm = support::random_feature_map(&mut rng, h, w, dim, 0.8);
        let cfg = ClusterConfig {
            thresholds: support::random_thresholds(&mut rng),
            connectivity: Connectivity::Eight,
        };
        assert!(matches_oracle(&fm, &cfg));
    }
}

#[test]
fn region_features_are_member_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fm = support::random_feature_map(&mut rng, 9, 7, 4, 1.0);
    for snap in cluster(&fm, &ClusterConfig::default()).unwrap() {
        for r in &snap.regions {
            for k in 0..fm.dim() {
                let mean = r.patches.iter().map(|&p| f64::from(fm.patch(p)[k])).sum::<f64>() / r.len() as f64;
                assert!((r.feature[k] - mean).abs() <= 1e-5 * mean.abs().max(1.0));
            }
            assert!(!r.neighbor_ids.contains(&r.id));
        }
    }
}

#[test]
fn snapshot_masks_cover_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fm = support::random_feature_map(&mut rng, 6, 5, 3, 1.0);
    let snaps = cluster(&fm, &ClusterConfig::default()).unwrap();
    for snap in &snaps {
        let mut cover = vec![0u32; fm.image_width() * fm.image_height()];
        for r in &snap.regions {
            let m = region_to_mask(r, fm.grid_w(), fm.grid_h(), fm.patch_size());
            assert_eq!(m.area(), r.len() * 64);
            for (c, &v) in cover.iter_mut().zip(m.data()) {
                *c += u32::from(v);
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }
}

#[test]
fn pop_count_stays_near_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fm = support::gaussian_feature_map(&mut rng, 30, 30, 16);
    let (_, stats) = cluster_with_stats(&fm, &ClusterConfig::default()).unwrap();
    assert!(stats.merges < 900);
    // every merge pushes at most one entry per neighbour of the merged region
    assert!(stats.pops < 900 * 40, "{stats:?}");
}

fn connected(patches: &[usize], w: usize) -> bool {
    let set: std::collections::HashSet<usize> = patches.iter().copied().collect();
    let mut seen = std::collections::HashSet::from([patches[0]]);
    let mut stack = vec![patches[0]];
    while let Some(p) = stack.pop() {
        let (r, c) = (p / w, p % w);
        let mut nb = vec![p + w];
        if r > 0 {
            nb.push(p - w);
        }
        if c > 0 {
            nb.push(p - 1);
        }
        if c + 1 < w {
            nb.push(p + 1);
        }
        for q in nb {
            if set.contains(&q) && seen.insert(q) {
                stack.push(q);
            }
        }
    }
    seen.len() == patches.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn snapshots_partition_and_nest(seed in any::<u64>(), h in 1usize..9, w in 1usize..9, dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fm = support::random_feature_map(&mut rng, h, w, dim, 1.0);
        let snaps = cluster(&fm, &ClusterConfig::default()).unwrap();
        prop_assert_eq!(snaps.len(), 3);
        for s in &snaps {
            let mut all: Vec<usize> = s.regions.iter().flat_map(|r| r.patches.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..h * w).collect::<Vec<_>>());
            prop_assert!(s.merge_count < h * w);
            prop_assert_eq!(s.merge_count + s.regions.len(), h * w);
            for r in &s.regions {
                prop_assert_eq!(r.id, r.patches[0]);
                prop_assert!(connected(&r.patches, w));
            }
        }
        for pair in snaps.windows(2) {
            prop_assert!(pair[0].regions.len() >= pair[1].regions.len());
            // every coarse region is a union of fine regions
            for fine in &pair[0].regions {
                let holder = pair[1].regions.iter().find(|c| c.patches.contains(&fine.patches[0])).unwrap();
                prop_assert!(fine.patches.iter().all(|p| holder.patches.contains(p)));
            }
        }
    }

    #[test]
    fn adjacent_snapshot_regions_are_below_threshold(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fm = support::random_feature_map(&mut rng, 6, 6, 4, 0.5);
        let cfg = ClusterConfig::default();
        let snaps = cluster(&fm, &cfg).unwrap();
        // when a threshold fires, no adjacent pair may still reach it
        for s in &snaps {
            if s.regions.len() == 1 {
                continue;
            }
            for a in &s.regions {
                for b in &s.regions {
                    if a.id < b.id && a.neighbor_ids.contains(&b.id) {
                        prop_assert!(cosine_similarity(&a.feature, &b.feature).unwrap() < s.threshold);
                    }
                }
            }
        }
    }

    #[test]
    fn clustering_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fm = support::random_feature_map(&mut rng, 7, 5, 3, 0.7);
        let cfg = ClusterConfig::default();
        prop_assert_eq!(cluster(&fm, &cfg).unwrap(), cluster(&fm, &cfg).unwrap());
    }
}
