//! Mask clean-up between clustering and the hierarchy: hole filling, quality
//! filters and merging of the per-threshold mask sets.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::mask::{Bbox, Bitmap};
use crate::rle::RleMask;

pub const DEFAULT_MIN_AREA_PX: u64 = 100;
pub const DEFAULT_MAX_CORNER_COUNT: usize = 2;
pub const DEFAULT_MIN_CRF_IOU: f64 = 0.5;
pub const DEFAULT_DEDUP_IOU: f64 = 0.95;

/// A candidate object mask for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRecord {
    pub image_id: String,
    pub mask: RleMask,
    /// Merge threshold whose snapshot produced this mask.
    pub source_threshold: f64,
    pub area_px: u64,
    pub bbox: Bbox,
    /// IoU between the mask before and after CRF; 1.0 without CRF.
    pub pre_crf_iou: f64,
}

impl MaskRecord {
    /// `None` for an empty mask.
    pub fn new(image_id: impl Into<String>, bitmap: &Bitmap, source_threshold: f64, pre_crf_iou: f64) -> Option<Self> {
        let bbox = bitmap.bbox()?;
        let mask = RleMask::encode(bitmap);
        Some(Self {
            image_id: image_id.into(),
            area_px: mask.area(),
            mask,
            source_threshold,
            bbox,
            pre_crf_iou,
        })
    }

    pub fn corner_count(&self) -> usize {
        let (w, h) = (self.mask.width(), self.mask.height());
        if w == 0 || h == 0 {
            return 0;
        }
        let (r, b) = (w - 1, h - 1);
        [(0, 0), (r, 0), (0, b), (r, b)]
            .into_iter()
            .filter(|&(x, y)| self.mask.contains(x, y))
            .count()
    }
}

impl AsRef<RleMask> for MaskRecord {
    fn as_ref(&self) -> &RleMask {
        &self.mask
    }
}

/// Sets every background pixel that cannot reach the image border (4-connected) to foreground.
pub fn fill_holes(mask: &Bitmap) -> Bitmap {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !mask.get(x, y) && !outside[i] {
            outside[i] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        if h > 1 {
            seed(x, h - 1, &mut outside, &mut queue);
        }
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        if w > 1 {
            seed(w - 1, y, &mut outside, &mut queue);
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut queue);
        }
    }
    Bitmap::from_vec(w, h, outside.into_iter().map(|o| !o).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    /// Masks with fewer pixels are dropped.
    pub min_area_px: u64,
    /// Masks containing more image corners are dropped.
    pub max_corner_count: usize,
    /// Masks whose before/after-CRF IoU is below this are dropped.
    pub min_crf_iou: f64,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            min_area_px: DEFAULT_MIN_AREA_PX,
            max_corner_count: DEFAULT_MAX_CORNER_COUNT,
            min_crf_iou: DEFAULT_MIN_CRF_IOU,
        }
    }
}

impl FilterRules {
    pub fn keeps(&self, r: &MaskRecord) -> bool {
        r.pre_crf_iou >= self.min_crf_iou
            && r.area_px >= self.min_area_px
            && r.corner_count() <= self.max_corner_count
    }
}

pub fn filter_masks(records: Vec<MaskRecord>, rules: &FilterRules) -> Vec<MaskRecord> {
    records.into_iter().filter(|r| rules.keeps(r)).collect()
}

/// Concatenates the per-threshold sets, dropping near duplicates.
///
/// Candidates are visited by decreasing source threshold, then decreasing
/// area, then input order; a candidate is kept unless its IoU with an already
/// kept mask is at least `dedup_iou`.
pub fn ensemble(per_threshold: Vec<Vec<MaskRecord>>, dedup_iou: f64) -> Vec<MaskRecord> {
    let mut all: Vec<MaskRecord> = per_threshold.into_iter().flatten().collect();
    all.sort_by(|a, b| {
        b.source_threshold
            .total_cmp(&a.source_threshold)
            .then(b.area_px.cmp(&a.area_px))
    });
    let mut kept: Vec<MaskRecord> = Vec::with_capacity(all.len());
    for cand in all {
        let duplicate = kept.iter().any(|k| {
            k.mask
                .iou(&cand.mask)
                .map(|iou| iou >= dedup_iou)
                .unwrap_or(false)
        });
        if !duplicate {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(bitmap: &Bitmap, thr: f64, crf_iou: f64) -> MaskRecord {
        MaskRecord::new("img", bitmap, thr, crf_iou).unwrap()
    }

    #[test]
    fn solid_square_unchanged() {
        let m = Bitmap::rect(9, 9, 2, 2, 7, 7);
        assert_eq!(fill_holes(&m), m);
    }

    #[test]
    fn ring_is_filled() {
        let mut ring = Bitmap::rect(9, 9, 2, 2, 7, 7);
        ring.set(4, 4, false);
        assert_eq!(fill_holes(&ring), Bitmap::rect(9, 9, 2, 2, 7, 7));
    }

    #[test]
    fn open_bay_is_kept() {
        // U shape touching the top border; its bay opens to the border
        let mut u = Bitmap::rect(7, 7, 1, 0, 6, 5);
        for y in 0..4 {
            for x in 2..5 {
                u.set(x, y, false);
            }
        }
        assert_eq!(fill_holes(&u), u);
    }

    #[test]
    fn area_boundary() {
        let rules = FilterRules::default();
        // 99 px: 9 x 11; 100 px: 10 x 10
        let small = record(&Bitmap::rect(50, 50, 5, 5, 14, 16), 0.4, 1.0);
        let exact = record(&Bitmap::rect(50, 50, 5, 5, 15, 15), 0.4, 1.0);
        assert_eq!(small.area_px, 99);
        assert!(!rules.keeps(&small));
        assert!(rules.keeps(&exact));
    }

    #[test]
    fn corner_rule() {
        let rules = FilterRules::default();
        let full = record(&Bitmap::rect(20, 20, 0, 0, 20, 20), 0.4, 1.0);
        assert_eq!(full.corner_count(), 4);
        assert!(!rules.keeps(&full));

        let mut three = Bitmap::rect(20, 20, 0, 0, 20, 10);
        for y in 10..20 {
            three.set(0, y, true);
        }
        let three = record(&three, 0.4, 1.0);
        assert_eq!(three.corner_count(), 3);
        assert!(!rules.keeps(&three));

        let two = record(&Bitmap::rect(20, 20, 0, 0, 20, 10), 0.4, 1.0);
        assert_eq!(two.corner_count(), 2);
        assert!(rules.keeps(&two));
    }

    #[test]
    fn crf_iou_boundary() {
        let rules = FilterRules::default();
        let m = Bitmap::rect(50, 50, 5, 5, 20, 20);
        assert!(!rules.keeps(&record(&m, 0.4, 0.49)));
        assert!(rules.keeps(&record(&m, 0.4, 0.50)));
    }

    #[test]
    fn ensemble_examples() {
        let a = Bitmap::rect(40, 40, 0, 0, 10, 10);
        let out = ensemble(vec![vec![record(&a, 0.4, 1.0)], vec![], vec![record(&a, 0.1, 1.0)]], 0.95);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_threshold, 0.4);

        let b = Bitmap::rect(40, 40, 20, 20, 30, 30);
        let out = ensemble(vec![vec![record(&a, 0.4, 1.0), record(&b, 0.4, 1.0)]], 0.95);
        assert_eq!(out.len(), 2);

        // IoU 94/100 survives, 95/100 does not
        let mut c94 = a.clone();
        for x in 0..6 {
            c94.set(x, 9, false);
        }
        let mut c95 = a.clone();
        for x in 0..5 {
            c95.set(x, 9, false);
        }
        assert_eq!(a.iou(&c94), Some(0.94));
        let out = ensemble(vec![vec![record(&a, 0.4, 1.0)], vec![record(&c94, 0.2, 1.0)]], 0.95);
        assert_eq!(out.len(), 2);
        let out = ensemble(vec![vec![record(&c95, 0.2, 1.0)], vec![record(&a, 0.1, 1.0)]], 0.95);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].source_threshold, 0.2);
    }

    #[test]
    fn ensemble_tie_prefers_larger_area() {
        let a = Bitmap::rect(40, 40, 0, 0, 10, 10);
        let mut smaller = a.clone();
        smaller.set(0, 0, false);
        let out = ensemble(vec![vec![record(&smaller, 0.2, 1.0), record(&a, 0.2, 1.0)]], 0.95);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].area_px, 100);
    }

    fn arb_bitmap(w: usize, h: usize) -> impl Strategy<Value = Bitmap> {
        prop::collection::vec(any::<bool>(), w * h).prop_map(move |d| Bitmap::from_vec(w, h, d))
    }

    fn arb_rect_records() -> impl Strategy<Value = Vec<MaskRecord>> {
        prop::collection::vec(
            (0usize..20, 0usize..20, 1usize..20, 1usize..20, prop::sample::select(vec![0.4, 0.2, 0.1]), 0.0f64..1.0),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, t, q)| record(&Bitmap::rect(24, 24, x, y, (x + w).min(24), (y + h).min(24)), t, q))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn fill_holes_idempotent_and_monotone(m in arb_bitmap(12, 10)) {
            let once = fill_holes(&m);
            prop_assert_eq!(fill_holes(&once), once.clone());
            for (a, b) in m.data().iter().zip(once.data()) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn filter_subset_and_idempotent(recs in arb_rect_records()) {
            let rules = FilterRules { min_area_px: 30, ..FilterRules::default() };
            let once = filter_masks(recs.clone(), &rules);
            prop_assert!(once.iter().all(|r| recs.contains(r)));
            prop_assert_eq!(filter_masks(once.clone(), &rules), once);
        }

        #[test]
        fn ensemble_output_is_deduplicated(recs in arb_rect_records()) {
            let n = recs.len();
            let out = ensemble(vec![recs], 0.95);
            prop_assert!(out.len() <= n);
            for i in 0..out.len() {
                for j in i + 1..out.len() {
                    prop_assert!(out[i].mask.iou(&out[j].mask).unwrap() < 0.95);
                }
            }
        }
    }
}
