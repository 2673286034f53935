//! Class-agnostic detection and instance-segmentation evaluation.
//!
//! Matching and accumulation follow the usual COCO protocol with all
//! categories collapsed into one: per image, detections are taken in
//! descending score order (stable on input order) up to a cap, and each is
//! greedily matched to the still-unmatched ground truth with the highest IoU at
//! or above the threshold. Ground truths outside an evaluated size range are
//! ignored rather than removed, so a detection may still absorb them.
//!
//! Recall counts pool over images; images without ground truth add nothing to
//! the denominator. AP is the 101-point interpolated precision over recall.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::HierLevel;
use crate::mask::Bbox;
use crate::rle::RleMask;

pub const SMALL_AREA: f64 = 32.0 * 32.0;
pub const LARGE_AREA: f64 = 96.0 * 96.0;
pub const DEFAULT_MAX_DETS: [usize; 3] = [10, 100, 1000];

/// `0.50, 0.55, ..., 0.95`.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| f64::from(50 + 5 * i) / 100.0).collect()
}

fn recall_points() -> impl Iterator<Item = f64> {
    (0..=100).map(|i| f64::from(i) / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum IouType {
    Bbox,
    Segm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

pub fn size_bucket(area: f64) -> SizeBucket {
    if area < SMALL_AREA {
        SizeBucket::Small
    } else if area < LARGE_AREA {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: u64,
    pub image_id: u64,
    pub bbox: Bbox,
    pub mask: Option<RleMask>,
    pub level: Option<HierLevel>,
}

impl GroundTruth {
    /// Mask area when a mask is present, else box area.
    pub fn area(&self) -> f64 {
        self.mask.as_ref().map_or_else(|| self.bbox.area(), |m| m.area() as f64)
    }

    pub fn size_bucket(&self) -> SizeBucket {
        size_bucket(self.area())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: Bbox,
    pub score: f64,
    pub mask: Option<RleMask>,
    pub level: Option<HierLevel>,
}

impl Detection {
    fn area(&self, kind: IouType) -> f64 {
        match (kind, &self.mask) {
            (IouType::Segm, Some(m)) => m.area() as f64,
            _ => self.bbox.area(),
        }
    }
}

pub fn mask_iou(a: &RleMask, b: &RleMask) -> Result<f64> {
    a.iou(b)
}

fn pair_iou(d: &Detection, g: &GroundTruth, kind: IouType) -> Result<f64> {
    match kind {
        IouType::Bbox => Ok(d.bbox.iou(&g.bbox)),
        IouType::Segm => match (&d.mask, &g.mask) {
            (Some(dm), Some(gm)) => match dm.iou(gm) {
                Err(Error::EmptyMasks) => Ok(0.0),
                other => other,
            },
            _ => Err(Error::InvalidConfig("mask evaluation needs masks on every entry".into())),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    /// Detection caps; AP and the per-size metrics use the largest.
    pub max_dets: Vec<usize>,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: default_iou_thresholds(),
            max_dets: DEFAULT_MAX_DETS.to_vec(),
        }
    }
}

impl EvalParams {
    fn max_det(&self) -> usize {
        self.max_dets.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() || self.iou_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidConfig("IoU thresholds must be non-empty and within [0, 1]".into()));
        }
        if self.max_dets.is_empty() {
            return Err(Error::InvalidConfig("at least one detection cap is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AreaRange {
    lo: f64,
    hi: f64,
}

impl AreaRange {
    const ALL: AreaRange = AreaRange { lo: 0.0, hi: f64::INFINITY };

    fn of(bucket: SizeBucket) -> Self {
        match bucket {
            SizeBucket::Small => AreaRange { lo: 0.0, hi: SMALL_AREA },
            SizeBucket::Medium => AreaRange { lo: SMALL_AREA, hi: LARGE_AREA },
            SizeBucket::Large => AreaRange { lo: LARGE_AREA, hi: f64::INFINITY },
        }
    }

    fn contains(&self, area: f64) -> bool {
        area >= self.lo && area < self.hi
    }
}

/// Matching outcome for one image and one size range.
#[derive(Debug, Clone)]
struct ImageEval {
    /// Scores of the kept detections, in match order.
    scores: Vec<f64>,
    /// `[threshold][det]`
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    /// `[threshold][det]`: the match (if any) is a non-ignored ground truth.
    hits: Vec<Vec<bool>>,
    num_gt: usize,
}

fn sorted_detections<'a>(dets: &[&'a Detection], cap: usize) -> Vec<&'a Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order.into_iter().take(cap).map(|i| dets[i]).collect()
}

fn evaluate_image(
    dets: &[&Detection],
    gts: &[&GroundTruth],
    ious: &[Vec<f64>],
    thresholds: &[f64],
    range: AreaRange,
    kind: IouType,
) -> ImageEval {
    let gt_ignore: Vec<bool> = gts.iter().map(|g| !range.contains(g.area())).collect();
    // non-ignored ground truths first, otherwise in input order
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignore[g]);

    let t_count = thresholds.len();
    let mut matched = vec![vec![false; dets.len()]; t_count];
    let mut ignored = vec![vec![false; dets.len()]; t_count];
    let mut hits = vec![vec![false; dets.len()]; t_count];
    for (t, &thr) in thresholds.iter().enumerate() {
        let mut gt_taken = vec![false; gts.len()];
        for d in 0..dets.len() {
            let mut best_iou = thr.min(1.0 - 1e-10);
            let mut best: Option<usize> = None;
            for &g in &gt_order {
                if gt_taken[g] {
                    continue;
                }
                if let Some(m) = best {
                    if !gt_ignore[m] && gt_ignore[g] {
                        break;
                    }
                }
                if ious[d][g] < best_iou {
                    continue;
                }
                best_iou = ious[d][g];
                best = Some(g);
            }
            match best {
                Some(g) => {
                    gt_taken[g] = true;
                    matched[t][d] = true;
                    ignored[t][d] = gt_ignore[g];
                    hits[t][d] = !gt_ignore[g];
                }
                None => ignored[t][d] = !range.contains(dets[d].area(kind)),
            }
        }
    }
    ImageEval {
        scores: dets.iter().map(|d| d.score).collect(),
        matched,
        ignored,
        hits,
        num_gt: gt_ignore.iter().filter(|&&i| !i).count(),
    }
}

fn iou_matrix(dets: &[&Detection], gts: &[&GroundTruth], kind: IouType) -> Result<Vec<Vec<f64>>> {
    dets.iter()
        .map(|d| gts.iter().map(|g| pair_iou(d, g, kind)).collect())
        .collect()
}

/// Recall per threshold for one image, or `None` when it has no ground truth.
pub fn match_and_recall(
    dets: &[Detection],
    gts: &[GroundTruth],
    iou_thresholds: &[f64],
    max_dets: usize,
    kind: IouType,
) -> Result<Option<Vec<f64>>> {
    if gts.is_empty() {
        return Ok(None);
    }
    let dets: Vec<&Detection> = dets.iter().collect();
    let dets = sorted_detections(&dets, max_dets);
    let gts: Vec<&GroundTruth> = gts.iter().collect();
    let ious = iou_matrix(&dets, &gts, kind)?;
    let ev = evaluate_image(&dets, &gts, &ious, iou_thresholds, AreaRange::ALL, kind);
    Ok(Some(
        ev.hits
            .iter()
            .map(|h| h.iter().filter(|&&x| x).count() as f64 / ev.num_gt as f64)
            .collect(),
    ))
}

/// 101-point interpolated AP at a single threshold for one image.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruth], iou_threshold: f64, kind: IouType) -> Result<Option<f64>> {
    let image_ids: Vec<u64> = gts.iter().map(|g| g.image_id).chain(dets.iter().map(|d| d.image_id)).collect();
    let params = EvalParams {
        iou_thresholds: vec![iou_threshold],
        max_dets: vec![dets.len().max(1)],
    };
    let mut ids = image_ids;
    ids.sort_unstable();
    ids.dedup();
    Ok(evaluate(&ids, gts, dets, &params, kind)?.ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecallAt {
    pub max_dets: usize,
    pub value: Option<f64>,
}

/// Summary metrics for one IoU type. `None` marks an undefined value
/// (no ground truth in range, or the threshold was not evaluated).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub iou_type: IouType,
    pub ar: Vec<RecallAt>,
    pub ar_small: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
    pub ap: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl Metrics {
    pub fn ar_at(&self, max_dets: usize) -> Option<f64> {
        self.ar.iter().find(|r| r.max_dets == max_dets).and_then(|r| r.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub bbox: Metrics,
    /// Present when every ground truth and detection carries a mask.
    pub segm: Option<Metrics>,
}

struct Accumulated {
    /// `[threshold]` recall per detection cap.
    recall: Vec<Vec<Option<f64>>>,
    /// `[threshold]` AP at the largest cap.
    precision: Vec<Option<f64>>,
}

fn accumulate(evals: &[ImageEval], params: &EvalParams) -> Accumulated {
    let num_gt: usize = evals.iter().map(|e| e.num_gt).sum();
    let t_count = params.iou_thresholds.len();
    let max_det = params.max_det();

    let recall = (0..t_count)
        .map(|t| {
            params
                .max_dets
                .iter()
                .map(|&k| {
                    (num_gt > 0).then(|| {
                        let hits: usize = evals
                            .iter()
                            .map(|e| e.hits[t].iter().take(k).filter(|&&h| h).count())
                            .sum();
                        hits as f64 / num_gt as f64
                    })
                })
                .collect()
        })
        .collect();

    let precision = (0..t_count)
        .map(|t| {
            if num_gt == 0 {
                return None;
            }
            // (score, is_tp) over all images, image order then match order
            let mut entries: Vec<(f64, bool)> = Vec::new();
            for e in evals {
                for d in 0..e.scores.len().min(max_det) {
                    if !e.ignored[t][d] {
                        entries.push((e.scores[d], e.matched[t][d]));
                    }
                }
            }
            let mut order: Vec<usize> = (0..entries.len()).collect();
            order.sort_by(|&a, &b| entries[b].0.total_cmp(&entries[a].0).then(a.cmp(&b)));
            let (mut tp, mut fp) = (0usize, 0usize);
            let mut rc = Vec::with_capacity(order.len());
            let mut pr = Vec::with_capacity(order.len());
            for i in order {
                if entries[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                rc.push(tp as f64 / num_gt as f64);
                pr.push(tp as f64 / (tp + fp) as f64);
            }
            for i in (1..pr.len()).rev() {
                if pr[i] > pr[i - 1] {
                    pr[i - 1] = pr[i];
                }
            }
            let total: f64 = recall_points()
                .map(|r| {
                    let idx = rc.partition_point(|&x| x < r);
                    pr.get(idx).copied().unwrap_or(0.0)
                })
                .sum();
            Some(total / 101.0)
        })
        .collect();

    Accumulated { recall, precision }
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn threshold_index(params: &EvalParams, thr: f64) -> Option<usize> {
    params.iou_thresholds.iter().position(|&t| (t - thr).abs() < 1e-12)
}

/// Evaluates `dets` against `gts` over the listed images.
pub fn evaluate(
    image_ids: &[u64],
    gts: &[GroundTruth],
    dets: &[Detection],
    params: &EvalParams,
    kind: IouType,
) -> Result<Metrics> {
    params.validate()?;
    let mut per_image: BTreeMap<u64, (Vec<&GroundTruth>, Vec<&Detection>)> =
        image_ids.iter().map(|&id| (id, (Vec::new(), Vec::new()))).collect();
    for g in gts {
        if let Some(e) = per_image.get_mut(&g.image_id) {
            e.0.push(g);
        }
    }
    for d in dets {
        if let Some(e) = per_image.get_mut(&d.image_id) {
            e.1.push(d);
        }
    }

    let ranges = [
        AreaRange::ALL,
        AreaRange::of(SizeBucket::Small),
        AreaRange::of(SizeBucket::Medium),
        AreaRange::of(SizeBucket::Large),
    ];
    let images: Vec<_> = per_image.into_values().collect();
    let per_range: Vec<[ImageEval; 4]> = images
        .par_iter()
        .map(|(g, d)| {
            let d = sorted_detections(d, params.max_det());
            let ious = iou_matrix(&d, g, kind)?;
            Ok(ranges.map(|r| evaluate_image(&d, g, &ious, &params.iou_thresholds, r, kind)))
        })
        .collect::<Result<_>>()?;

    let acc: Vec<Accumulated> = (0..ranges.len())
        .map(|r| {
            let evals: Vec<ImageEval> = per_range.iter().map(|e| e[r].clone()).collect();
            accumulate(&evals, params)
        })
        .collect();

    let last = params.max_dets.len() - 1;
    let largest = params
        .max_dets
        .iter()
        .enumerate()
        .max_by_key(|(_, &k)| k)
        .map_or(last, |(i, _)| i);
    let ar_for = |a: &Accumulated, k: usize| mean(a.recall.iter().map(|r| r[k]));
    let ap_at = |thr: f64| threshold_index(params, thr).and_then(|t| acc[0].precision[t]);

    Ok(Metrics {
        iou_type: kind,
        ar: params
            .max_dets
            .iter()
            .enumerate()
            .map(|(k, &max_dets)| RecallAt {
                max_dets,
                value: ar_for(&acc[0], k),
            })
            .collect(),
        ar_small: ar_for(&acc[1], largest),
        ar_medium: ar_for(&acc[2], largest),
        ar_large: ar_for(&acc[3], largest),
        ap: mean(acc[0].precision.iter().copied()),
        ap_50: ap_at(0.5),
        ap_75: ap_at(0.75),
        ap_small: mean(acc[1].precision.iter().copied()),
        ap_medium: mean(acc[2].precision.iter().copied()),
        ap_large: mean(acc[3].precision.iter().copied()),
    })
}

/// Box metrics, plus mask metrics when all entries carry masks.
pub fn evaluate_all(image_ids: &[u64], gts: &[GroundTruth], dets: &[Detection], params: &EvalParams) -> Result<EvalResult> {
    let bbox = evaluate(image_ids, gts, dets, params, IouType::Bbox)?;
    let has_masks = gts.iter().all(|g| g.mask.is_some()) && dets.iter().all(|d| d.mask.is_some());
    let segm = if has_masks {
        Some(evaluate(image_ids, gts, dets, params, IouType::Segm)?)
    } else {
        None
    };
    Ok(EvalResult { bbox, segm })
}

/// Recall breakdown against the ground truth of each hierarchy level in turn.
pub fn evaluate_per_level(
    image_ids: &[u64],
    gts: &[GroundTruth],
    dets: &[Detection],
    params: &EvalParams,
    kind: IouType,
) -> Result<Vec<(HierLevel, Metrics)>> {
    HierLevel::ALL
        .iter()
        .filter_map(|&level| {
            let subset: Vec<GroundTruth> = gts.iter().filter(|g| g.level == Some(level)).cloned().collect();
            (!subset.is_empty()).then(|| evaluate(image_ids, &subset, dets, params, kind).map(|m| (level, m)))
        })
        .collect()
}
