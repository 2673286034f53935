//! Run-length encoded binary masks.
//!
//! Runs alternate background/foreground starting with background, scanning
//! pixels in column-major order (pixel `(x, y)` is element `y + height * x`).
//! The compact string form is the 6-bit varint encoding used by the common
//! detection toolkits: values past the second are delta-coded against the
//! count two positions back, and each 5-bit group is offset by 48 into ASCII.

use crate::error::{Error, Result};
use crate::mask::{Bbox, Bitmap};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    width: usize,
    height: usize,
    counts: Vec<u32>,
    area: u64,
}

impl RleMask {
    /// Validates that the runs cover exactly `width * height` pixels.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if total != (width * height) as u64 {
            return Err(Error::InvalidRle(format!(
                "runs sum to {total}, expected {}",
                width * height
            )));
        }
        let area = counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum();
        Ok(Self {
            width,
            height,
            counts,
            area,
        })
    }

    pub fn encode(mask: &Bitmap) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        let mut area = 0u64;
        for x in 0..w {
            for y in 0..h {
                let v = mask.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
                area += u64::from(v);
            }
        }
        counts.push(run);
        Self {
            width: w,
            height: h,
            counts,
            area,
        }
    }

    pub fn decode(&self) -> Bitmap {
        let mut out = Bitmap::new(self.width, self.height);
        let mut pos = 0usize;
        let mut value = false;
        for &c in &self.counts {
            if value {
                for p in pos..pos + c as usize {
                    out.set(p / self.height, p % self.height, true);
                }
            }
            pos += c as usize;
            value = !value;
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.area
    }

    /// Whether pixel `(x, y)` is foreground.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let target = x * self.height + y;
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            pos += c as usize;
            if target < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    /// Foreground pixels shared with `other`, computed by walking both run lists.
    pub fn intersection_area(&self, other: &RleMask) -> Result<u64> {
        self.check_same_size(other)?;
        let mut a = Runs::new(&self.counts);
        let mut b = Runs::new(&other.counts);
        let mut inter = 0u64;
        while let (Some((va, la)), Some((vb, lb))) = (a.peek(), b.peek()) {
            let step = la.min(lb);
            if va && vb {
                inter += step;
            }
            a.advance(step);
            b.advance(step);
        }
        Ok(inter)
    }

    /// Mask IoU; errors when sizes differ or both masks are empty.
    pub fn iou(&self, other: &RleMask) -> Result<f64> {
        let inter = self.intersection_area(other)?;
        let union = self.area + other.area - inter;
        if union == 0 {
            return Err(Error::EmptyMasks);
        }
        Ok(inter as f64 / union as f64)
    }

    pub fn bbox(&self) -> Option<Bbox> {
        if self.area == 0 {
            return None;
        }
        let h = self.height;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if i % 2 == 1 && c > 0 {
                let (start, end) = (pos, pos + c - 1);
                let (xs, xe) = (start / h, end / h);
                x0 = x0.min(xs);
                x1 = x1.max(xe);
                if xs == xe {
                    y0 = y0.min(start % h);
                    y1 = y1.max(end % h);
                } else {
                    // a run spanning columns reaches both the bottom and top rows
                    y0 = 0;
                    y1 = h - 1;
                }
            }
            pos += c;
        }
        Some(Bbox {
            x: x0 as f64,
            y: y0 as f64,
            w: (x1 - x0 + 1) as f64,
            h: (y1 - y0 + 1) as f64,
        })
    }

    fn check_same_size(&self, other: &RleMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                what: "mask size",
                expected: self.width * self.height,
                actual: other.width * other.height,
            });
        }
        Ok(())
    }

    /// Compact ASCII form of the counts.
    pub fn to_compressed(&self) -> String {
        let mut s = String::new();
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = i64::from(c);
            if i > 2 {
                x -= i64::from(self.counts[i - 2]);
            }
            loop {
                let mut c = (x & 0x1f) as u8;
                x >>= 5;
                let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    c |= 0x20;
                }
                s.push(char::from(c + 48));
                if !more {
                    break;
                }
            }
        }
        s
    }

    pub fn from_compressed(width: usize, height: usize, s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0usize;
        while p < bytes.len() {
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                let b = bytes[p];
                if !(48..48 + 64).contains(&b) {
                    return Err(Error::InvalidRle(format!("byte {b:#x} at offset {p}")));
                }
                let c = i64::from(b - 48);
                if k >= 12 {
                    return Err(Error::InvalidRle(format!("varint too long at offset {p}")));
                }
                x |= (c & 0x1f) << (5 * k);
                let more = c & 0x20 != 0;
                p += 1;
                k += 1;
                if !more {
                    if c & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
                if p >= bytes.len() {
                    return Err(Error::InvalidRle("truncated varint".into()));
                }
            }
            if counts.len() > 2 {
                x += i64::from(counts[counts.len() - 2]);
            }
            let c = u32::try_from(x)
                .map_err(|_| Error::InvalidRle(format!("run length {x} out of range")))?;
            counts.push(c);
        }
        Self::from_counts(width, height, counts)
    }
}

impl AsRef<RleMask> for RleMask {
    fn as_ref(&self) -> &RleMask {
        self
    }
}

struct Runs<'a> {
    counts: &'a [u32],
    idx: usize,
    left: u64,
}

impl<'a> Runs<'a> {
    fn new(counts: &'a [u32]) -> Self {
        let mut r = Self {
            counts,
            idx: 0,
            left: counts.first().map_or(0, |&c| u64::from(c)),
        };
        r.skip_empty();
        r
    }

    fn skip_empty(&mut self) {
        while self.left == 0 && self.idx < self.counts.len() {
            self.idx += 1;
            self.left = self.counts.get(self.idx).map_or(0, |&c| u64::from(c));
        }
    }

    fn peek(&self) -> Option<(bool, u64)> {
        (self.idx < self.counts.len()).then_some((self.idx % 2 == 1, self.left))
    }

    fn advance(&mut self, n: u64) {
        self.left -= n;
        self.skip_empty();
    }
}
