//! Hierarchical adaptive clustering of a patch grid.
//!
//! Every patch starts as its own region. The most similar adjacent pair (cosine
//! similarity of mean features) is merged repeatedly. Thresholds are visited in
//! decreasing order: when the best remaining pair falls below the active
//! threshold, the current partition is recorded and the next threshold becomes
//! active. Merging ends once the last threshold has been recorded.
//!
//! Region ids are the row-major index of the region's first patch; a merged
//! region keeps the smaller id of its two parts. Ties in similarity are broken
//! by the smaller `(min_id, max_id)` pair.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::feature_io::{cosine_similarity, FeatureMap};
use crate::mask::Bitmap;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.4, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(0, 1), (1, 0)],
            Connectivity::Eight => &[(0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    /// Strictly decreasing merge thresholds in `(0, 1)`.
    pub thresholds: Vec<f64>,
    pub connectivity: Connectivity,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            connectivity: Connectivity::Four,
        }
    }
}

impl ClusterConfig {
    pub fn with_thresholds(thresholds: impl Into<Vec<f64>>) -> Self {
        Self {
            thresholds: thresholds.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::InvalidConfig("at least one merge threshold is required".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidConfig(format!("merge threshold {t} outside (0, 1)")));
        }
        if self.thresholds.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig("merge thresholds must be strictly decreasing".into()));
        }
        Ok(())
    }
}

/// A connected group of patches.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    /// Row-major linear patch indices, sorted.
    pub patches: Vec<usize>,
    /// Unweighted mean of the member patch features.
    pub feature: Vec<f64>,
    pub neighbor_ids: BTreeSet<usize>,
}

impl Region {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// The partition in force when a threshold fired.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeSnapshot {
    pub threshold: f64,
    /// Surviving regions ordered by id.
    pub regions: Vec<Region>,
    pub merge_count: usize,
}

impl MergeSnapshot {
    /// The partition as sorted patch lists, ordered by first patch.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        self.regions.iter().map(|r| r.patches.clone()).collect()
    }
}

/// Counters describing one clustering run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClusterStats {
    pub merges: usize,
    pub pops: usize,
    pub stale_pops: usize,
}

#[derive(Debug)]
struct RegionState {
    patches: Vec<usize>,
    sum: Vec<f64>,
    mean: Vec<f64>,
    neighbors: HashSet<usize>,
    version: u32,
    alive: bool,
}

#[derive(Debug, Clone, Copy)]
struct PairEntry {
    sim: f64,
    lo: usize,
    hi: usize,
    lo_version: u32,
    hi_version: u32,
}

impl PartialEq for PairEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for PairEntry {}

impl PartialOrd for PairEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PairEntry {
    // max-heap: higher similarity first, then the lexicographically smaller pair
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| (other.lo, other.hi).cmp(&(self.lo, self.hi)))
            .then_with(|| (other.lo_version, other.hi_version).cmp(&(self.lo_version, self.hi_version)))
    }
}

/// Undirected adjacent patch pairs `(a, b)` with `a < b`, in row-major order of `a`.
pub fn adjacent_pairs(grid_h: usize, grid_w: usize, connectivity: Connectivity) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for r in 0..grid_h {
        for c in 0..grid_w {
            for &(dr, dc) in connectivity.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= grid_h || nc as usize >= grid_w {
                    continue;
                }
                pairs.push((r * grid_w + c, nr as usize * grid_w + nc as usize));
            }
        }
    }
    pairs
}

/// One singleton region per patch, linked to its grid neighbors.
pub fn build_adjacency(fm: &FeatureMap, connectivity: Connectivity) -> Vec<Region> {
    let mut regions: Vec<Region> = (0..fm.num_patches())
        .map(|i| Region {
            id: i,
            patches: vec![i],
            feature: fm.patch(i).iter().map(|&v| f64::from(v)).collect(),
            neighbor_ids: BTreeSet::new(),
        })
        .collect();
    for (a, b) in adjacent_pairs(fm.grid_h(), fm.grid_w(), connectivity) {
        regions[a].neighbor_ids.insert(b);
        regions[b].neighbor_ids.insert(a);
    }
    regions
}

/// Runs the merge loop and returns one snapshot per configured threshold, in config order.
pub fn cluster(fm: &FeatureMap, cfg: &ClusterConfig) -> Result<Vec<MergeSnapshot>> {
    cluster_with_stats(fm, cfg).map(|(s, _)| s)
}

pub fn cluster_with_stats(
    fm: &FeatureMap,
    cfg: &ClusterConfig,
) -> Result<(Vec<MergeSnapshot>, ClusterStats)> {
    cfg.validate()?;
    let mut engine = Engine::new(fm, cfg.connectivity)?;
    let mut snapshots = Vec::with_capacity(cfg.thresholds.len());
    let mut next = 0;

    while next < cfg.thresholds.len() {
        let Some(top) = engine.pop_valid() else {
            // a single region is left; it stands for every remaining threshold
            break;
        };
        while next < cfg.thresholds.len() && top.sim < cfg.thresholds[next] {
            snapshots.push(engine.snapshot(cfg.thresholds[next]));
            next += 1;
        }
        if next == cfg.thresholds.len() {
            break;
        }
        engine.merge(top)?;
    }
    while next < cfg.thresholds.len() {
        snapshots.push(engine.snapshot(cfg.thresholds[next]));
        next += 1;
    }
    Ok((snapshots, engine.stats))
}

struct Engine {
    regions: Vec<RegionState>,
    heap: BinaryHeap<PairEntry>,
    stats: ClusterStats,
}

impl Engine {
    fn new(fm: &FeatureMap, connectivity: Connectivity) -> Result<Self> {
        let n = fm.num_patches();
        let mut regions: Vec<RegionState> = (0..n)
            .map(|i| {
                let f: Vec<f64> = fm.patch(i).iter().map(|&v| f64::from(v)).collect();
                RegionState {
                    patches: vec![i],
                    sum: f.clone(),
                    mean: f,
                    neighbors: HashSet::new(),
                    version: 0,
                    alive: true,
                }
            })
            .collect();
        let pairs = adjacent_pairs(fm.grid_h(), fm.grid_w(), connectivity);
        let mut entries = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            regions[a].neighbors.insert(b);
            regions[b].neighbors.insert(a);
            entries.push(PairEntry {
                sim: cosine_similarity(&regions[a].mean, &regions[b].mean)?,
                lo: a,
                hi: b,
                lo_version: 0,
                hi_version: 0,
            });
        }
        Ok(Self {
            regions,
            heap: BinaryHeap::from(entries),
            stats: ClusterStats::default(),
        })
    }

    fn is_current(&self, e: &PairEntry) -> bool {
        let (lo, hi) = (&self.regions[e.lo], &self.regions[e.hi]);
        lo.alive && hi.alive && lo.version == e.lo_version && hi.version == e.hi_version
    }

    /// Discards stale entries until the best current pair is on top, and pops it.
    fn pop_valid(&mut self) -> Option<PairEntry> {
        while let Some(e) = self.heap.pop() {
            self.stats.pops += 1;
            if self.is_current(&e) {
                return Some(e);
            }
            self.stats.stale_pops += 1;
        }
        None
    }

    fn merge(&mut self, e: PairEntry) -> Result<()> {
        let (keep, gone) = (e.lo, e.hi);
        let absorbed = std::mem::take(&mut self.regions[gone].patches);
        let gone_sum = std::mem::take(&mut self.regions[gone].sum);
        let gone_neighbors = std::mem::take(&mut self.regions[gone].neighbors);
        self.regions[gone].alive = false;

        for &nb in &gone_neighbors {
            if nb != keep {
                let set = &mut self.regions[nb].neighbors;
                set.remove(&gone);
                set.insert(keep);
            }
        }

        let region = &mut self.regions[keep];
        region.neighbors.remove(&gone);
        region.neighbors.extend(gone_neighbors.into_iter().filter(|&nb| nb != keep));
        region.patches.extend(absorbed);
        for (s, g) in region.sum.iter_mut().zip(&gone_sum) {
            *s += g;
        }
        let count = region.patches.len() as f64;
        region.mean = region.sum.iter().map(|s| s / count).collect();
        region.version += 1;
        self.stats.merges += 1;

        let mut neighbors: Vec<usize> = self.regions[keep].neighbors.iter().copied().collect();
        neighbors.sort_unstable();
        for nb in neighbors {
            let sim = cosine_similarity(&self.regions[keep].mean, &self.regions[nb].mean)?;
            let (lo, hi) = if keep < nb { (keep, nb) } else { (nb, keep) };
            self.heap.push(PairEntry {
                sim,
                lo,
                hi,
                lo_version: self.regions[lo].version,
                hi_version: self.regions[hi].version,
            });
        }
        Ok(())
    }

    fn snapshot(&self, threshold: f64) -> MergeSnapshot {
        let regions = self
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.alive)
            .map(|(id, r)| {
                let mut patches = r.patches.clone();
                patches.sort_unstable();
                Region {
                    id,
                    patches,
                    feature: r.mean.clone(),
                    neighbor_ids: r.neighbors.iter().copied().collect(),
                }
            })
            .collect();
        MergeSnapshot {
            threshold,
            regions,
            merge_count: self.stats.merges,
        }
    }
}

/// Paints each member patch as a `patch_size x patch_size` block.
pub fn region_to_mask(region: &Region, grid_w: usize, grid_h: usize, patch_size: usize) -> Bitmap {
    let mut mask = Bitmap::new(grid_w * patch_size, grid_h * patch_size);
    for &p in &region.patches {
        let (row, col) = (p / grid_w, p % grid_w);
        for y in row * patch_size..(row + 1) * patch_size {
            for x in col * patch_size..(col + 1) * patch_size {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, dim: usize, f: impl Fn(usize, usize) -> Vec<f32>) -> FeatureMap {
        let mut data = Vec::new();
        for r in 0..h {
            for c in 0..w {
                data.extend(f(r, c));
            }
        }
        FeatureMap::new("t", h, w, dim, 8, data).unwrap()
    }

    #[test]
    fn adjacency_counts() {
        let one = grid(1, 1, 1, |_, _| vec![1.0]);
        let regions = build_adjacency(&one, Connectivity::Four);
        assert_eq!(regions.len(), 1);
        assert!(regions[0].neighbor_ids.is_empty());

        assert_eq!(adjacent_pairs(2, 2, Connectivity::Four).len(), 4);
        assert_eq!(adjacent_pairs(60, 60, Connectivity::Four).len(), 2 * 60 * 59);
        assert_eq!(adjacent_pairs(2, 2, Connectivity::Eight).len(), 6);

        let fm = grid(3, 4, 1, |_, _| vec![1.0]);
        let degrees: Vec<usize> = build_adjacency(&fm, Connectivity::Four)
            .iter()
            .map(|r| r.neighbor_ids.len())
            .collect();
        assert_eq!(degrees, vec![2, 3, 3, 2, 3, 4, 4, 3, 2, 3, 3, 2]);
    }

    #[test]
    fn homogeneous_grid_merges_fully() {
        let fm = grid(3, 3, 2, |_, _| vec![0.3, 0.7]);
        let snaps = cluster(&fm, &ClusterConfig::with_thresholds([0.5])).unwrap();
        assert_eq!(snaps.len(), 1);
        assert_eq!(snaps[0].regions.len(), 1);
        assert_eq!(snaps[0].regions[0].len(), 9);
        assert_eq!(snaps[0].merge_count, 8);
    }

    #[test]
    fn single_region_fills_all_remaining_thresholds() {
        let fm = grid(2, 2, 1, |_, _| vec![1.0]);
        let snaps = cluster(&fm, &ClusterConfig::default()).unwrap();
        assert_eq!(snaps.len(), 3);
        assert!(snaps.iter().all(|s| s.regions.len() == 1 && s.merge_count == 3));
        let thresholds: Vec<f64> = snaps.iter().map(|s| s.threshold).collect();
        assert_eq!(thresholds, DEFAULT_THRESHOLDS);
    }

    #[test]
    fn two_columns() {
        let fm = grid(2, 2, 2, |_, c| if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        let snaps = cluster(&fm, &ClusterConfig::with_thresholds([0.5])).unwrap();
        assert_eq!(snaps[0].partition(), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(snaps[0].regions[0].feature, vec![1.0, 0.0]);
        assert_eq!(snaps[0].regions[0].neighbor_ids, BTreeSet::from([1]));
    }

    #[test]
    fn tie_break_prefers_smaller_pair() {
        // all similarities equal: (0,1) merges first, then the merged region
        // (id 0) with 2, and so on along the row
        let fm = grid(1, 4, 1, |_, _| vec![2.0]);
        let (_, stats) = cluster_with_stats(&fm, &ClusterConfig::with_thresholds([0.9])).unwrap();
        assert_eq!(stats.merges, 3);
        let fm = grid(1, 3, 2, |_, c| match c {
            0 => vec![1.0, 0.0],
            1 => vec![1.0, 1.0],
            _ => vec![0.0, 1.0],
        });
        let snaps = cluster(&fm, &ClusterConfig::with_thresholds([0.7])).unwrap();
        // sim(0,1) == sim(1,2); (0,1) wins, then cos((1, .5), (0, 1)) ~ 0.447 stops
        assert_eq!(snaps[0].partition(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn snapshots_are_nested() {
        let fm = grid(5, 5, 3, |r, c| {
            let t = (r * 5 + c) as f32;
            vec![t.sin() + 1.2, (t * 0.7).cos(), (t * 1.3).sin()]
        });
        let snaps = cluster(&fm, &ClusterConfig::default()).unwrap();
        for pair in snaps.windows(2) {
            assert!(pair[0].regions.len() >= pair[1].regions.len());
            for fine in &pair[0].regions {
                let owner = pair[1]
                    .regions
                    .iter()
                    .find(|r| r.patches.contains(&fine.patches[0]))
                    .unwrap();
                assert!(fine.patches.iter().all(|p| owner.patches.contains(p)));
            }
        }
    }

    #[test]
    fn zero_features_error() {
        let fm = grid(1, 2, 2, |_, _| vec![0.0, 0.0]);
        assert!(matches!(cluster(&fm, &ClusterConfig::default()), Err(Error::ZeroVector)));
    }

    #[test]
    fn config_validation() {
        assert!(ClusterConfig::with_thresholds(vec![]).validate().is_err());
        assert!(ClusterConfig::with_thresholds([0.2, 0.4]).validate().is_err());
        assert!(ClusterConfig::with_thresholds([0.2, 0.2]).validate().is_err());
        assert!(ClusterConfig::with_thresholds([1.0]).validate().is_err());
        assert!(ClusterConfig::with_thresholds([0.0]).validate().is_err());
        assert!(ClusterConfig::default().validate().is_ok());
    }

    #[test]
    fn masks_from_regions() {
        let region = |patches: Vec<usize>| Region {
            id: patches[0],
            patches,
            feature: vec![1.0],
            neighbor_ids: BTreeSet::new(),
        };
        let m = region_to_mask(&region(vec![0]), 3, 3, 8);
        assert_eq!(m.area(), 64);
        assert_eq!((m.width(), m.height()), (24, 24));

        let m = region_to_mask(&region(vec![0, 1]), 3, 3, 8);
        assert_eq!(m.area(), 128);
        let b = m.bbox().unwrap();
        assert_eq!((b.w, b.h), (16.0, 8.0));

        // L shape: (0,0), (1,0), (1,1)
        let m = region_to_mask(&region(vec![0, 3, 4]), 3, 3, 8);
        assert_eq!(m.area(), 192);
        assert!(m.get(7, 15) && m.get(8, 15) && m.get(7, 8) && !m.get(8, 7));
    }
}
