//! PNG overlays of annotation masks tinted by hierarchy level.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::coco::{Annotation, AnnotationFile, ImageInfo};
use crate::error::{Error, Result};
use crate::feature_io::{locate_image, RgbImage};
use crate::hierarchy::HierLevel;

/// Blend weight of the tint color.
pub const TINT_ALPHA: f64 = 0.5;

/// Base hue in degrees per level; annotations jitter around it by id.
fn base_hue(level: Option<HierLevel>) -> f64 {
    match level {
        Some(HierLevel::Whole) => 0.0,
        Some(HierLevel::Part) => 120.0,
        Some(HierLevel::Subpart) => 220.0,
        None => 45.0,
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

/// Tint color for an annotation: a hue within ±25° of its level's hue,
/// chosen from the annotation id.
pub fn annotation_color(id: u64, level: Option<HierLevel>) -> [u8; 3] {
    let r = mix64(id);
    let jitter = (r % 51) as f64 - 25.0;
    let value = 0.75 + ((r >> 8) % 26) as f64 / 100.0;
    hsv_to_rgb(base_hue(level) + jitter, 0.9, value)
}

/// Blends every selected annotation's mask into `img`, in the given order.
pub fn render_overlay(img: &RgbImage, annotations: &[&Annotation], level_filter: Option<HierLevel>) -> Result<RgbImage> {
    let mut out = img.clone();
    for ann in annotations {
        let level = HierLevel::from_category_id(ann.category_id);
        if level_filter.is_some_and(|f| level != Some(f)) {
            continue;
        }
        let Some(seg) = &ann.segmentation else { continue };
        let mask = seg.to_rle()?;
        if mask.width() != img.width || mask.height() != img.height {
            return Err(Error::DimensionMismatch {
                what: "overlay mask width",
                expected: img.width,
                actual: mask.width(),
            });
        }
        let color = annotation_color(ann.id, level);
        let bitmap = mask.decode();
        for y in 0..img.height {
            for x in 0..img.width {
                if bitmap.get(x, y) {
                    let i = (y * img.width + x) * 3;
                    for (px, &tint) in out.pixels[i..i + 3].iter_mut().zip(&color) {
                        let v = (1.0 - TINT_ALPHA) * f64::from(*px) + TINT_ALPHA * f64::from(tint);
                        *px = v.round() as u8;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    image::save_buffer(
        path,
        &img.pixels,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(())
}

fn image_name(info: &ImageInfo) -> String {
    info.file_name.clone().unwrap_or_else(|| info.id.to_string())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VizReport {
    pub written: Vec<PathBuf>,
    /// Image names that could not be found or rendered.
    pub failed: Vec<String>,
}

/// Writes one `<name>.png` overlay per listed image into `out_dir`.
pub fn render_all(file: &AnnotationFile, image_dir: &Path, out_dir: &Path, level_filter: Option<HierLevel>) -> Result<VizReport> {
    fs::create_dir_all(out_dir)?;
    let mut by_image: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
    for a in &file.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut report = VizReport::default();
    for info in &file.images {
        let name = image_name(info);
        let result = (|| -> Result<PathBuf> {
            let path = locate_image(image_dir, &name).ok_or_else(|| Error::MissingImage(name.clone()))?;
            let img = RgbImage::load(&path)?;
            let anns = by_image.get(&info.id).map_or(&[][..], Vec::as_slice);
            let overlay = render_overlay(&img, anns, level_filter)?;
            let stem = Path::new(&name).file_stem().map_or_else(|| name.clone(), |s| s.to_string_lossy().into_owned());
            let out = out_dir.join(format!("{stem}.png"));
            save_png(&overlay, &out)?;
            Ok(out)
        })();
        match result {
            Ok(p) => report.written.push(p),
            Err(e) => {
                log::warn!("overlay for {name}: {e}");
                report.failed.push(name);
            }
        }
    }
    Ok(report)
}
