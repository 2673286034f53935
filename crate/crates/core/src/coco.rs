//! Detection-JSON annotation and result files.
//!
//! Masks are stored as RLE with `size = [height, width]`; `counts` may be the
//! integer-list form or the compressed string. Polygon segmentations are not
//! accepted.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::hierarchy::HierLevel;
use crate::mask::Bbox;
use crate::rle::RleMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Compressed(String),
    Raw(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: RleCounts,
}

impl Segmentation {
    pub fn compressed(mask: &RleMask) -> Self {
        Self {
            size: [mask.height(), mask.width()],
            counts: RleCounts::Compressed(mask.to_compressed()),
        }
    }

    pub fn to_rle(&self) -> Result<RleMask> {
        let [h, w] = self.size;
        match &self.counts {
            RleCounts::Compressed(s) => RleMask::from_compressed(w, h, s),
            RleCounts::Raw(c) => RleMask::from_counts(w, h, c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    #[serde(default = "default_category")]
    pub category_id: u64,
    pub bbox: Bbox,
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default)]
    pub iscrowd: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

fn default_category() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

impl Category {
    /// One category per hierarchy level.
    pub fn levels() -> Vec<Category> {
        HierLevel::ALL
            .iter()
            .map(|l| Category {
                id: l.category_id(),
                name: l.name().to_string(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    #[serde(default)]
    pub categories: Vec<Category>,
}

impl AnnotationFile {
    pub fn image_ids(&self) -> Vec<u64> {
        self.images.iter().map(|i| i.id).collect()
    }

    pub fn ground_truths(&self) -> Result<Vec<GroundTruth>> {
        self.annotations
            .iter()
            .map(|a| {
                Ok(GroundTruth {
                    id: a.id,
                    image_id: a.image_id,
                    bbox: a.bbox,
                    mask: a.segmentation.as_ref().map(Segmentation::to_rle).transpose()?,
                    level: HierLevel::from_category_id(a.category_id),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub image_id: u64,
    pub bbox: Bbox,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_id: Option<u64>,
}

impl ResultEntry {
    pub fn to_detection(&self) -> Result<Detection> {
        Ok(Detection {
            image_id: self.image_id,
            bbox: self.bbox,
            score: self.score,
            mask: self.segmentation.as_ref().map(Segmentation::to_rle).transpose()?,
            level: self.category_id.and_then(HierLevel::from_category_id),
        })
    }
}

impl From<&Annotation> for ResultEntry {
    fn from(a: &Annotation) -> Self {
        Self {
            image_id: a.image_id,
            bbox: a.bbox,
            score: a.score.unwrap_or(1.0),
            segmentation: a.segmentation.clone(),
            category_id: Some(a.category_id),
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn read_annotation_file(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path)?;
    parse_json(path, &text)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ResultsOrAnnotations {
    Results(Vec<ResultEntry>),
    Annotations(AnnotationFile),
}

/// Reads a results array, or an annotation file whose annotations are taken
/// as detections (score defaults to 1.0).
pub fn read_results(path: &Path) -> Result<Vec<ResultEntry>> {
    let text = fs::read_to_string(path)?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return parse_json(path, &text);
    }
    match parse_json::<ResultsOrAnnotations>(path, &text) {
        Ok(ResultsOrAnnotations::Annotations(f)) => Ok(f.annotations.iter().map(ResultEntry::from).collect()),
        Ok(ResultsOrAnnotations::Results(r)) => Ok(r),
        // untagged errors carry no position; re-parse for a located message
        Err(_) => parse_json::<AnnotationFile>(path, &text).map(|f| f.annotations.iter().map(ResultEntry::from).collect()),
    }
}

pub fn to_writer<W: Write, T: Serialize>(out: W, value: &T) -> Result<()> {
    serde_json::to_writer(out, value).map_err(std::io::Error::from)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = Vec::new();
    to_writer(&mut buf, value)?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Bitmap;

    #[test]
    fn segmentation_forms() {
        let m = RleMask::encode(&Bitmap::rect(5, 5, 1, 1, 4, 4));
        let seg = Segmentation::compressed(&m);
        assert_eq!(seg.to_rle().unwrap(), m);
        let raw = Segmentation {
            size: [5, 5],
            counts: RleCounts::Raw(m.counts().to_vec()),
        };
        assert_eq!(raw.to_rle().unwrap(), m);
        let json = serde_json::to_string(&raw).unwrap();
        assert_eq!(json, r#"{"size":[5,5],"counts":[6,3,2,3,2,3,6]}"#);
        let back: Segmentation = serde_json::from_str(r#"{"size":[5,5],"counts":"6320004"}"#).unwrap();
        assert_eq!(back.to_rle().unwrap(), m);
    }

    #[test]
    fn parse_error_has_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, "{\"images\": [\n  {\"id\": 1, \"width\": }]}").unwrap();
        match read_annotation_file(&p) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 2);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn results_accept_both_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let arr = dir.path().join("r.json");
        fs::write(&arr, r#"[{"image_id": 3, "bbox": [0, 0, 2, 2], "score": 0.5}]"#).unwrap();
        let r = read_results(&arr).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].score, 0.5);

        let ann = dir.path().join("a.json");
        fs::write(
            &ann,
            r#"{"images":[{"id":3,"width":4,"height":4}],"annotations":[{"id":1,"image_id":3,"category_id":2,"bbox":[0,0,2,2],"area":4}]}"#,
        )
        .unwrap();
        let r = read_results(&ann).unwrap();
        assert_eq!(r[0].score, 1.0);
        assert_eq!(r[0].to_detection().unwrap().level, Some(HierLevel::Part));
    }
}
