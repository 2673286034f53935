//! End-to-end pseudo-label generation and the file-level commands built on it.
//!
//! Per image: cluster the feature grid, turn every snapshot region into a
//! pixel mask, fill holes, refine with the CRF when the image is available,
//! filter, ensemble across thresholds, then assign hierarchy levels. Images run
//! on a worker pool; results are collected in file-name order so the output
//! does not depend on the number of workers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::{Annotation, AnnotationFile, Category, ImageInfo, Segmentation};
use crate::crf::{CrfContext, CrfParams};
use crate::error::{Error, Result};
use crate::eval::{self, EvalParams, EvalResult, IouType, Metrics, SizeBucket};
use crate::feature_io::{load_feature_map_with, locate_image, FeatureMap, RgbImage};
use crate::hac::{self, ClusterConfig, Connectivity};
use crate::hierarchy::{self, HierLevel, LevelCounts};
use crate::mask::Bitmap;
use crate::postprocess::{self, FilterRules, MaskRecord};
use crate::schedule::ScheduleConfig;

pub const FEATURE_EXTENSIONS: [&str; 2] = ["fmap", "npy"];

/// Flat key/value configuration; every key is optional and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub thresholds: Vec<f64>,
    /// 4 or 8.
    pub connectivity: u8,
    pub cover_percent: f64,
    pub crf_enabled: bool,
    pub crf_iterations: usize,
    pub crf_spatial_sigma: f64,
    pub crf_spatial_weight: f64,
    pub crf_bilateral_sigma_xy: f64,
    pub crf_bilateral_sigma_rgb: f64,
    pub crf_bilateral_weight: f64,
    pub crf_unary_confidence: f64,
    pub min_area_px: u64,
    pub max_corner_count: usize,
    pub min_crf_iou: f64,
    pub dedup_iou: f64,
    /// 0 uses one worker per core.
    pub worker_count: usize,
    /// Patch size assumed for `.npy` inputs, which do not store it.
    pub npy_patch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let crf = CrfParams::default();
        let rules = FilterRules::default();
        Self {
            thresholds: hac::DEFAULT_THRESHOLDS.to_vec(),
            connectivity: 4,
            cover_percent: hierarchy::DEFAULT_COVER_PERCENT,
            crf_enabled: true,
            crf_iterations: crf.iterations,
            crf_spatial_sigma: crf.spatial_sigma,
            crf_spatial_weight: crf.spatial_weight,
            crf_bilateral_sigma_xy: crf.bilateral_sigma_xy,
            crf_bilateral_sigma_rgb: crf.bilateral_sigma_rgb,
            crf_bilateral_weight: crf.bilateral_weight,
            crf_unary_confidence: crf.unary_confidence,
            min_area_px: rules.min_area_px,
            max_corner_count: rules.max_corner_count,
            min_crf_iou: rules.min_crf_iou,
            dedup_iou: postprocess::DEFAULT_DEDUP_IOU,
            worker_count: 0,
            npy_patch_size: 8,
        }
    }
}

fn toml_error(path: &Path, text: &str, e: &toml::de::Error) -> Error {
    let offset = e.span().map_or(0, |s| s.start).min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Error::Parse {
        file: path.to_path_buf(),
        line,
        column,
        message: e.message().to_string(),
    }
}

/// Parses a TOML config; `path` is only used in error messages.
pub fn parse_toml<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| toml_error(path, text, &e))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = parse_toml(path, &text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.cluster_config()?.validate()?;
        self.crf_params().validate()?;
        if !(self.cover_percent > 0.0 && self.cover_percent < 100.0) {
            return Err(Error::InvalidConfig(format!(
                "cover_percent must lie in (0, 100), got {}",
                self.cover_percent
            )));
        }
        if !(self.dedup_iou > 0.0 && self.dedup_iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("dedup_iou must lie in (0, 1], got {}", self.dedup_iou)));
        }
        if !(0.0..=1.0).contains(&self.min_crf_iou) {
            return Err(Error::InvalidConfig(format!("min_crf_iou must lie in [0, 1], got {}", self.min_crf_iou)));
        }
        if self.max_corner_count > 4 {
            return Err(Error::InvalidConfig("max_corner_count must be at most 4".into()));
        }
        if self.npy_patch_size == 0 {
            return Err(Error::InvalidConfig("npy_patch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn cluster_config(&self) -> Result<ClusterConfig> {
        let connectivity = match self.connectivity {
            4 => Connectivity::Four,
            8 => Connectivity::Eight,
            c => return Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {c}"))),
        };
        Ok(ClusterConfig {
            thresholds: self.thresholds.clone(),
            connectivity,
        })
    }

    pub fn crf_params(&self) -> CrfParams {
        CrfParams {
            iterations: self.crf_iterations,
            spatial_sigma: self.crf_spatial_sigma,
            spatial_weight: self.crf_spatial_weight,
            bilateral_sigma_xy: self.crf_bilateral_sigma_xy,
            bilateral_sigma_rgb: self.crf_bilateral_sigma_rgb,
            bilateral_weight: self.crf_bilateral_weight,
            unary_confidence: self.crf_unary_confidence,
        }
    }

    pub fn filter_rules(&self) -> FilterRules {
        FilterRules {
            min_area_px: self.min_area_px,
            max_corner_count: self.max_corner_count,
            min_crf_iou: self.min_crf_iou,
        }
    }
}

pub fn load_schedule_config(path: &Path) -> Result<ScheduleConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: ScheduleConfig = parse_toml(path, &text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Pseudo-labels for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLabels {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    /// Masks surviving the filters, per threshold in config order.
    pub labels_per_threshold: Vec<usize>,
    pub masks: Vec<MaskRecord>,
    pub parent: Vec<Option<usize>>,
    pub levels: Vec<HierLevel>,
}

impl ImageLabels {
    pub fn level_counts(&self) -> LevelCounts {
        let mut c = LevelCounts::default();
        for &l in &self.levels {
            c.add(l);
        }
        c
    }
}

/// Runs the full per-image pipeline. CRF runs only when `image` is given and
/// CRF is enabled.
pub fn process_image(fm: &FeatureMap, image: Option<&RgbImage>, cfg: &PipelineConfig) -> Result<ImageLabels> {
    let cluster_cfg = cfg.cluster_config()?;
    let snapshots = hac::cluster(fm, &cluster_cfg)?;
    let crf = match image {
        Some(img) if cfg.crf_enabled => {
            img.check_matches(fm)?;
            Some(CrfContext::new(img, &cfg.crf_params())?)
        }
        _ => None,
    };
    let rules = cfg.filter_rules();

    // a region that survives unchanged into a later snapshot gives the same mask
    let mut refined_cache: HashMap<Vec<usize>, (Bitmap, f64)> = HashMap::new();
    let mut per_threshold = Vec::with_capacity(snapshots.len());
    for snap in &snapshots {
        let mut records = Vec::with_capacity(snap.regions.len());
        for region in &snap.regions {
            if !refined_cache.contains_key(&region.patches) {
                let raw = hac::region_to_mask(region, fm.grid_w(), fm.grid_h(), fm.patch_size());
                let filled = postprocess::fill_holes(&raw);
                let entry = match &crf {
                    Some(ctx) => {
                        let refined = ctx.refine(&filled)?;
                        let iou = filled.iou(&refined).unwrap_or(0.0);
                        (refined, iou)
                    }
                    None => (filled, 1.0),
                };
                refined_cache.insert(region.patches.clone(), entry);
            }
            let (mask, crf_iou) = &refined_cache[&region.patches];
            if let Some(r) = MaskRecord::new(fm.image_id(), mask, snap.threshold, *crf_iou) {
                records.push(r);
            }
        }
        per_threshold.push(postprocess::filter_masks(records, &rules));
    }
    let labels_per_threshold = per_threshold.iter().map(Vec::len).collect();
    let masks = postprocess::ensemble(per_threshold, cfg.dedup_iou);
    let forest = hierarchy::build_forest(&masks, cfg.cover_percent)?;
    Ok(ImageLabels {
        image_id: fm.image_id().to_string(),
        width: fm.image_width(),
        height: fm.image_height(),
        labels_per_threshold,
        masks,
        parent: forest.parent,
        levels: forest.level,
    })
}

/// Feature files in `dir`, sorted by file name.
pub fn feature_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| FEATURE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn run_one(path: &Path, image_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<ImageLabels> {
    let fm = load_feature_map_with(path, cfg.npy_patch_size)?;
    let image = match image_dir {
        Some(dir) if cfg.crf_enabled => {
            let found = locate_image(dir, fm.image_id())
                .ok_or_else(|| Error::MissingImage(format!("{} in {}", fm.image_id(), dir.display())))?;
            Some(RgbImage::load(&found)?)
        }
        _ => None,
    };
    process_image(&fm, image.as_ref(), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageStats {
    pub file: String,
    pub image_id: String,
    pub labels_per_threshold: Vec<usize>,
    pub ensemble: usize,
    pub levels: LevelCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedImage {
    pub file: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerateStats {
    pub thresholds: Vec<f64>,
    pub images: Vec<ImageStats>,
    pub failed: Vec<FailedImage>,
    /// Mean over processed images, per threshold.
    pub mean_labels_per_threshold: Vec<f64>,
    pub mean_ensemble: f64,
    pub levels: LevelCounts,
    pub level_fractions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub annotations: AnnotationFile,
    pub stats: GenerateStats,
}

impl GenerateOutput {
    /// 0 when every image succeeded, 1 when none did, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (self.stats.images.len(), self.stats.failed.len()) {
            (_, 0) => 0,
            (0, _) => 1,
            _ => 2,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Labels every feature file in `feature_dir`. Image ids are positions in the
/// sorted file list (from 1) and annotation ids run in that order, so the
/// output is independent of `cfg.worker_count`.
pub fn generate(feature_dir: &Path, image_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let files = feature_files(feature_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no feature files in {}", feature_dir.display())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<Result<ImageLabels>> =
        pool.install(|| files.par_iter().map(|p| run_one(p, image_dir, cfg)).collect());

    let mut out = AnnotationFile {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: Category::levels(),
    };
    let mut images = Vec::new();
    let mut failed = Vec::new();
    let mut levels = LevelCounts::default();
    for (idx, (path, res)) in files.iter().zip(results).enumerate() {
        let file = path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
        let labels = match res {
            Ok(l) => l,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                failed.push(FailedImage {
                    file,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let image_id = idx as u64 + 1;
        out.images.push(ImageInfo {
            id: image_id,
            width: labels.width,
            height: labels.height,
            file_name: Some(labels.image_id.clone()),
        });
        for (rec, level) in labels.masks.iter().zip(&labels.levels) {
            out.annotations.push(Annotation {
                id: out.annotations.len() as u64 + 1,
                image_id,
                category_id: level.category_id(),
                bbox: rec.bbox,
                area: rec.area_px as f64,
                segmentation: Some(Segmentation::compressed(&rec.mask)),
                iscrowd: 0,
                score: None,
            });
        }
        let counts = labels.level_counts();
        levels += counts;
        images.push(ImageStats {
            file,
            image_id: labels.image_id,
            labels_per_threshold: labels.labels_per_threshold,
            ensemble: labels.masks.len(),
            levels: counts,
        });
    }
    let stats = GenerateStats {
        thresholds: cfg.thresholds.clone(),
        mean_labels_per_threshold: (0..cfg.thresholds.len())
            .map(|t| mean(images.iter().map(|i| i.labels_per_threshold[t] as f64)))
            .collect(),
        mean_ensemble: mean(images.iter().map(|i| i.ensemble as f64)),
        level_fractions: levels.fractions(),
        levels,
        images,
        failed,
    };
    Ok(GenerateOutput {
        annotations: out,
        stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelMetrics {
    pub level: HierLevel,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub result: EvalResult,
    /// Recall against each level's ground truth alone; empty unless requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_level: Vec<LevelMetrics>,
}

pub fn run_eval(gt_path: &Path, results_path: &Path, params: &EvalParams, per_level: bool) -> Result<EvalReport> {
    let gt = crate::coco::read_annotation_file(gt_path)?;
    let results = crate::coco::read_results(results_path)?;
    let gts = gt.ground_truths()?;
    let dets = results.iter().map(|r| r.to_detection()).collect::<Result<Vec<_>>>()?;
    let ids = gt.image_ids();
    let result = eval::evaluate_all(&ids, &gts, &dets, params)?;
    let per_level = if per_level {
        let kind = if result.segm.is_some() { IouType::Segm } else { IouType::Bbox };
        eval::evaluate_per_level(&ids, &gts, &dets, params, kind)?
            .into_iter()
            .map(|(level, metrics)| LevelMetrics { level, metrics })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EvalReport { result, per_level })
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "   -  ".to_string(), |v| format!("{:6.3}", v))
}

/// Human-readable metric table.
pub fn format_metrics(m: &Metrics) -> String {
    let mut s = String::new();
    let kind = match m.iou_type {
        IouType::Bbox => "box",
        IouType::Segm => "mask",
    };
    for r in &m.ar {
        s += &format!("{kind:>4} AR@{:<5} {}\n", r.max_dets, fmt_metric(r.value));
    }
    let rows = [
        ("AR_S", m.ar_small),
        ("AR_M", m.ar_medium),
        ("AR_L", m.ar_large),
        ("AP", m.ap),
        ("AP50", m.ap_50),
        ("AP75", m.ap_75),
        ("AP_S", m.ap_small),
        ("AP_M", m.ap_medium),
        ("AP_L", m.ap_large),
    ];
    for (name, v) in rows {
        s += &format!("{kind:>4} {name:<8} {}\n", fmt_metric(v));
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SizeCounts {
    pub small: usize,
    pub medium: usize,
    pub large: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationStats {
    pub images: usize,
    pub annotations: usize,
    pub mean_per_image: f64,
    pub max_per_image: usize,
    pub levels: LevelCounts,
    pub level_fractions: [f64; 3],
    pub sizes: SizeCounts,
}

/// Summary counts over an annotation file.
pub fn annotation_stats(file: &AnnotationFile) -> AnnotationStats {
    let mut per_image: std::collections::BTreeMap<u64, usize> = file.images.iter().map(|i| (i.id, 0)).collect();
    let mut levels = LevelCounts::default();
    let mut sizes = SizeCounts::default();
    for a in &file.annotations {
        *per_image.entry(a.image_id).or_default() += 1;
        if let Some(l) = HierLevel::from_category_id(a.category_id) {
            levels.add(l);
        }
        match eval::size_bucket(a.area) {
            SizeBucket::Small => sizes.small += 1,
            SizeBucket::Medium => sizes.medium += 1,
            SizeBucket::Large => sizes.large += 1,
        }
    }
    AnnotationStats {
        images: per_image.len(),
        annotations: file.annotations.len(),
        mean_per_image: mean(per_image.values().map(|&n| n as f64)),
        max_per_image: per_image.values().copied().max().unwrap_or(0),
        level_fractions: levels.fractions(),
        levels,
        sizes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_columns() -> FeatureMap {
        let (h, w) = (4, 4);
        let mut data = Vec::new();
        for _ in 0..h {
            for c in 0..w {
                data.extend_from_slice(if c < 2 { &[1.0f32, 0.0] } else { &[0.0, 1.0] });
            }
        }
        FeatureMap::new("cols", h, w, 2, 8, data).unwrap()
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let p = Path::new("cfg.toml");
        let cfg: PipelineConfig = parse_toml(p, "").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg: PipelineConfig = parse_toml(p, "thresholds = [0.5, 0.3]\nworker_count = 3\n").unwrap();
        assert_eq!(cfg.thresholds, vec![0.5, 0.3]);
        assert_eq!(cfg.worker_count, 3);
        match parse_toml::<PipelineConfig>(p, "min_area_px = 10\nbogus = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = PipelineConfig {
            connectivity: 6,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            thresholds: vec![0.1, 0.2],
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn two_regions_give_two_wholes() {
        let out = process_image(&two_columns(), None, &PipelineConfig::default()).unwrap();
        assert_eq!(out.labels_per_threshold, vec![2, 2, 2]);
        assert_eq!(out.masks.len(), 2);
        assert_eq!(out.levels, vec![HierLevel::Whole; 2]);
        assert!(out.masks.iter().all(|m| m.area_px == 512));
    }

    #[test]
    fn homogeneous_map_is_filtered() {
        let fm = FeatureMap::new("flat", 3, 3, 2, 8, vec![1.0; 18]).unwrap();
        let out = process_image(&fm, None, &PipelineConfig::default()).unwrap();
        assert!(out.masks.is_empty());
        assert_eq!(out.labels_per_threshold, vec![0, 0, 0]);
    }

    #[test]
    fn stats_over_annotations() {
        let file = AnnotationFile {
            images: vec![
                ImageInfo {
                    id: 1,
                    width: 10,
                    height: 10,
                    file_name: None,
                },
                ImageInfo {
                    id: 2,
                    width: 10,
                    height: 10,
                    file_name: None,
                },
            ],
            annotations: (0..3)
                .map(|i| Annotation {
                    id: i + 1,
                    image_id: 1,
                    category_id: 1 + i.min(1),
                    bbox: [0.0, 0.0, 5.0, 5.0].into(),
                    area: 25.0,
                    segmentation: None,
                    iscrowd: 0,
                    score: None,
                })
                .collect(),
            categories: Category::levels(),
        };
        let s = annotation_stats(&file);
        assert_eq!(s.images, 2);
        assert_eq!(s.mean_per_image, 1.5);
        assert_eq!(s.max_per_image, 3);
        assert_eq!(s.levels.whole, 1);
        assert_eq!(s.levels.part, 2);
        assert_eq!(s.sizes.small, 3);
    }
}
