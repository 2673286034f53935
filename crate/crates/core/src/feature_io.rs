//! Patch feature maps and RGB images as consumed by the clustering pipeline.
//!
//! Two on-disk feature layouts are understood:
//!
//! * `FMAP` (native): `"FMAP"`, `u16` version (=1), `u32` grid_h, `u32` grid_w,
//!   `u32` dim, `u16` patch_size, `u16` id length + UTF-8 image id, then
//!   `grid_h * grid_w * dim` little-endian `f32` in row-major `[h][w][d]` order.
//!   All integers are little-endian.
//! * `.npy` version 1/2/3 arrays of `<f4`, C order, shape `[H, W, D]`. The image
//!   id is taken from the file stem and the patch size must be supplied.
//!
//! Features are kept exactly as stored (no L2 normalization); similarity
//! normalizes internally.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 4] = b"FMAP";
pub const FMAP_VERSION: u16 = 1;
const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// An `H x W` grid of `D`-dimensional patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    image_id: String,
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    patch_size: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        patch_size: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 || patch_size == 0 {
            return Err(Error::MalformedHeader(format!(
                "grid {grid_h}x{grid_w}, dim {dim}, patch size {patch_size}: all must be >= 1"
            )));
        }
        let expected = grid_h
            .checked_mul(grid_w)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::MalformedHeader("feature map size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "feature values",
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self {
            image_id: image_id.into(),
            grid_h,
            grid_w,
            dim,
            patch_size,
            data,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Pixel width of the image the grid was computed from.
    pub fn image_width(&self) -> usize {
        self.grid_w * self.patch_size
    }

    pub fn image_height(&self) -> usize {
        self.grid_h * self.patch_size
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature of the patch at `(row, col)`.
    pub fn feature(&self, row: usize, col: usize) -> &[f32] {
        self.patch(row * self.grid_w + col)
    }

    /// Feature of the patch with row-major linear index `idx`.
    pub fn patch(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Decodes an in-memory FMAP file.
    pub fn from_fmap_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != FMAP_MAGIC {
            return Err(Error::MalformedHeader("missing FMAP magic".into()));
        }
        let version = r.u16()?;
        if version != FMAP_VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported FMAP version {version}"
            )));
        }
        let grid_h = r.u32()? as usize;
        let grid_w = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let patch_size = r.u16()? as usize;
        let id_len = r.u16()? as usize;
        let image_id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::MalformedHeader("image id is not UTF-8".into()))?
            .to_owned();

        let payload = &bytes[r.pos..];
        let expected = grid_h
            .checked_mul(grid_w)
            .and_then(|n| n.checked_mul(dim))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::MalformedHeader("feature map size overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "FMAP payload bytes",
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(image_id, grid_h, grid_w, dim, patch_size, data)
    }

    /// Encodes as an FMAP file.
    pub fn to_fmap_bytes(&self) -> Result<Vec<u8>> {
        let narrow_u32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::MalformedHeader(format!("{what} {v} exceeds u32")))
        };
        let narrow_u16 = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| Error::MalformedHeader(format!("{what} {v} exceeds u16")))
        };
        let mut out = Vec::with_capacity(24 + self.image_id.len() + self.data.len() * 4);
        out.extend_from_slice(FMAP_MAGIC);
        out.extend_from_slice(&FMAP_VERSION.to_le_bytes());
        out.extend_from_slice(&narrow_u32(self.grid_h, "grid_h")?.to_le_bytes());
        out.extend_from_slice(&narrow_u32(self.grid_w, "grid_w")?.to_le_bytes());
        out.extend_from_slice(&narrow_u32(self.dim, "dim")?.to_le_bytes());
        out.extend_from_slice(&narrow_u16(self.patch_size, "patch_size")?.to_le_bytes());
        out.extend_from_slice(&narrow_u16(self.image_id.len(), "image id length")?.to_le_bytes());
        out.extend_from_slice(self.image_id.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Decodes a `.npy` array of shape `[H, W, D]`, `<f4`, C order.
    pub fn from_npy_bytes(bytes: &[u8], image_id: &str, patch_size: usize) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(6)? != NPY_MAGIC {
            return Err(Error::MalformedHeader("missing NUMPY magic".into()));
        }
        let major = r.take(1)?[0];
        let _minor = r.take(1)?[0];
        let header_len = match major {
            1 => r.u16()? as usize,
            2 | 3 => r.u32()? as usize,
            v => return Err(Error::MalformedHeader(format!("unsupported npy version {v}"))),
        };
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| Error::MalformedHeader("npy header is not text".into()))?;
        let descr = npy_field(header, "descr")?;
        if !matches!(descr.trim_matches(|c| c == '\'' || c == '"'), "<f4" | "|f4") {
            return Err(Error::MalformedHeader(format!("unsupported dtype {descr}")));
        }
        if npy_field(header, "fortran_order")? != "False" {
            return Err(Error::MalformedHeader("fortran-ordered arrays are not supported".into()));
        }
        let shape = npy_field(header, "shape")?;
        let dims: Vec<usize> = shape
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::MalformedHeader(format!("bad shape entry {s:?}")))
            })
            .collect::<Result<_>>()?;
        let [grid_h, grid_w, dim] = dims[..] else {
            return Err(Error::MalformedHeader(format!("expected 3-d shape, got {shape}")));
        };
        let payload = &bytes[r.pos..];
        let expected = grid_h * grid_w * dim * 4;
        if payload.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "npy payload bytes",
                expected,
                actual: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(image_id, grid_h, grid_w, dim, patch_size, data)
    }

    /// Encodes as a version 1.0 `.npy` file (the image id and patch size are not stored).
    pub fn to_npy_bytes(&self) -> Vec<u8> {
        let dict = format!(
            "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
            self.grid_h, self.grid_w, self.dim
        );
        // magic(6) + version(2) + len(2) + dict + '\n', padded to a multiple of 64
        let unpadded = 10 + dict.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        let header = format!("{dict}{}\n", " ".repeat(pad));
        let mut out = Vec::with_capacity(10 + header.len() + self.data.len() * 4);
        out.extend_from_slice(NPY_MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

fn npy_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let missing = || Error::MalformedHeader(format!("npy header lacks '{key}'"));
    let start = header
        .find(&format!("'{key}'"))
        .or_else(|| header.find(&format!("\"{key}\"")))
        .ok_or_else(missing)?;
    let rest = &header[start + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':').ok_or_else(missing)?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(missing)?;
    Ok(rest[..end].trim())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::MalformedHeader("truncated header".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads a feature map, dispatching on the file's magic bytes. `.npy` files
/// take their image id from the file stem and use `npy_patch_size`.
pub fn load_feature_map_with(path: &Path, npy_patch_size: usize) -> Result<FeatureMap> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(NPY_MAGIC) {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        FeatureMap::from_npy_bytes(&bytes, &id, npy_patch_size)
    } else {
        FeatureMap::from_fmap_bytes(&bytes)
    }
}

/// Loads an FMAP (or 8-pixel-patch `.npy`) feature file.
pub fn load_feature_map(path: &Path) -> Result<FeatureMap> {
    load_feature_map_with(path, 8)
}

pub fn write_feature_map(path: &Path, fm: &FeatureMap) -> Result<()> {
    fs::write(path, fm.to_fmap_bytes()?)?;
    Ok(())
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`, accumulated in `f64` and clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Finds the image for `name` in `dir`: the exact file, or `name` with one of
/// [`IMAGE_EXTENSIONS`].
pub fn locate_image(dir: &Path, name: &str) -> Option<std::path::PathBuf> {
    let exact = dir.join(name);
    if exact.is_file() {
        return Some(exact);
    }
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
}

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` bytes, row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(image_id: impl Into<String>, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                what: "rgb bytes",
                expected: width * height * 3,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            image_id: image_id.into(),
            width,
            height,
            pixels,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let (w, h) = img.dimensions();
        Self::new(id, w as usize, h as usize, img.into_raw())
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Checks that this image has the pixel size implied by `fm`.
    pub fn check_matches(&self, fm: &FeatureMap) -> Result<()> {
        if self.width != fm.image_width() {
            return Err(Error::DimensionMismatch {
                what: "image width",
                expected: fm.image_width(),
                actual: self.width,
            });
        }
        if self.height != fm.image_height() {
            return Err(Error::DimensionMismatch {
                what: "image height",
                expected: fm.image_height(),
                actual: self.height,
            });
        }
        Ok(())
    }
}
