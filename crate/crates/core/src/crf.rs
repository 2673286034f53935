//! Fully connected CRF refinement of a binary mask.
//!
//! Two-label mean-field inference with a Potts model and two Gaussian pairwise
//! kernels: a spatial kernel over pixel positions and a bilateral kernel over
//! position and color. The spatial kernel is evaluated exactly (separable and
//! truncated at three standard deviations); the bilateral kernel is
//! approximated with a permutohedral lattice. Both kernels are symmetrically
//! normalized, `D^-1/2 K D^-1/2` with `D = diag(K 1)`.
//!
//! The lattice for an image depends only on the image, so [`CrfContext`] is
//! built once and reused for every mask of that image.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::RgbImage;
use crate::mask::Bitmap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfParams {
    pub iterations: usize,
    pub spatial_sigma: f64,
    pub spatial_weight: f64,
    pub bilateral_sigma_xy: f64,
    pub bilateral_sigma_rgb: f64,
    pub bilateral_weight: f64,
    /// Probability assigned to the mask's own label at each pixel.
    pub unary_confidence: f64,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            spatial_sigma: 3.0,
            spatial_weight: 3.0,
            bilateral_sigma_xy: 50.0,
            bilateral_sigma_rgb: 5.0,
            bilateral_weight: 10.0,
            unary_confidence: 0.9,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("spatial_sigma", self.spatial_sigma),
            ("bilateral_sigma_xy", self.bilateral_sigma_xy),
            ("bilateral_sigma_rgb", self.bilateral_sigma_rgb),
        ];
        for (name, s) in sigmas {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, w) in [("spatial_weight", self.spatial_weight), ("bilateral_weight", self.bilateral_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {w}")));
            }
        }
        if !(self.unary_confidence > 0.5 && self.unary_confidence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "unary_confidence must lie in (0.5, 1), got {}",
                self.unary_confidence
            )));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.iterations == 0 || (self.spatial_weight == 0.0 && self.bilateral_weight == 0.0)
    }
}

/// Per-image kernels, reusable across masks.
pub struct CrfContext {
    width: usize,
    height: usize,
    params: CrfParams,
    spatial: Option<SpatialKernel>,
    bilateral: Option<NormalizedLattice>,
}

impl CrfContext {
    pub fn new(img: &RgbImage, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        let (width, height) = (img.width, img.height);
        let active = !params.is_identity();
        let spatial = (active && params.spatial_weight > 0.0)
            .then(|| SpatialKernel::new(width, height, params.spatial_sigma as f32));
        let bilateral = (active && params.bilateral_weight > 0.0).then(|| {
            let (sxy, srgb) = (params.bilateral_sigma_xy as f32, params.bilateral_sigma_rgb as f32);
            let mut features = Vec::with_capacity(width * height * 5);
            for y in 0..height {
                for x in 0..width {
                    let [r, g, b] = img.rgb(x, y);
                    features.extend_from_slice(&[
                        x as f32 / sxy,
                        y as f32 / sxy,
                        f32::from(r) / srgb,
                        f32::from(g) / srgb,
                        f32::from(b) / srgb,
                    ]);
                }
            }
            NormalizedLattice::new(Lattice::new(&features, 5))
        });
        Ok(Self {
            width,
            height,
            params: params.clone(),
            spatial,
            bilateral,
        })
    }

    pub fn refine(&self, mask: &Bitmap) -> Result<Bitmap> {
        if mask.width() != self.width || mask.height() != self.height {
            return Err(Error::DimensionMismatch {
                what: "crf mask size",
                expected: self.width * self.height,
                actual: mask.width() * mask.height(),
            });
        }
        if self.params.is_identity() {
            return Ok(mask.clone());
        }
        let n = self.width * self.height;
        let conf = self.params.unary_confidence as f32;
        // channel 0 background, channel 1 foreground
        let mut neg_unary = vec![0f32; n * 2];
        for (i, &fg) in mask.data().iter().enumerate() {
            let p_fg = if fg { conf } else { 1.0 - conf };
            neg_unary[2 * i] = (1.0 - p_fg).ln();
            neg_unary[2 * i + 1] = p_fg.ln();
        }
        let mut q = neg_unary.clone();
        softmax_pairs(&mut q);

        let ws = self.params.spatial_weight as f32;
        let wb = self.params.bilateral_weight as f32;
        let mut logits = vec![0f32; n * 2];
        for _ in 0..self.params.iterations {
            logits.copy_from_slice(&neg_unary);
            if let Some(k) = &self.spatial {
                let msg = k.filter(&q, 2);
                for (l, m) in logits.iter_mut().zip(&msg) {
                    *l += ws * m;
                }
            }
            if let Some(k) = &self.bilateral {
                let msg = k.filter(&q, 2);
                for (l, m) in logits.iter_mut().zip(&msg) {
                    *l += wb * m;
                }
            }
            softmax_pairs(&mut logits);
            std::mem::swap(&mut q, &mut logits);
        }
        let data = q.chunks_exact(2).map(|p| p[1] > p[0]).collect();
        Ok(Bitmap::from_vec(self.width, self.height, data))
    }
}

/// Refines one mask against `img`; see [`CrfContext`] to amortize kernel setup.
pub fn crf_refine(mask: &Bitmap, img: &RgbImage, params: &CrfParams) -> Result<Bitmap> {
    if mask.width() != img.width || mask.height() != img.height {
        return Err(Error::DimensionMismatch {
            what: "crf image size",
            expected: mask.width() * mask.height(),
            actual: img.width * img.height,
        });
    }
    CrfContext::new(img, params)?.refine(mask)
}

fn softmax_pairs(v: &mut [f32]) {
    for p in v.chunks_exact_mut(2) {
        let m = p[0].max(p[1]);
        let (a, b) = ((p[0] - m).exp(), (p[1] - m).exp());
        let s = a + b;
        p[0] = a / s;
        p[1] = b / s;
    }
}

/// Truncated Gaussian over pixel positions, applied as two 1-d passes.
struct SpatialKernel {
    width: usize,
    height: usize,
    taps: Vec<f32>,
    norm: Vec<f32>,
}

impl SpatialKernel {
    fn new(width: usize, height: usize, sigma: f32) -> Self {
        let radius = (3.0 * sigma).ceil() as usize;
        let taps = (0..=radius)
            .map(|d| (-((d * d) as f32) / (2.0 * sigma * sigma)).exp())
            .collect();
        let mut k = Self {
            width,
            height,
            taps,
            norm: Vec::new(),
        };
        let ones = vec![1f32; width * height];
        k.norm = k.apply(&ones, 1).into_iter().map(|s| 1.0 / (s + 1e-20).sqrt()).collect();
        k
    }

    fn apply(&self, input: &[f32], channels: usize) -> Vec<f32> {
        let (w, h) = (self.width, self.height);
        let r = self.taps.len() - 1;
        let mut tmp = vec![0f32; input.len()];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(w - 1);
                for xx in lo..=hi {
                    let t = self.taps[x.abs_diff(xx)];
                    let (dst, src) = ((y * w + x) * channels, (y * w + xx) * channels);
                    for c in 0..channels {
                        tmp[dst + c] += t * input[src + c];
                    }
                }
            }
        }
        let mut out = vec![0f32; input.len()];
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            for yy in lo..=hi {
                let t = self.taps[y.abs_diff(yy)];
                for x in 0..w {
                    let (dst, src) = ((y * w + x) * channels, (yy * w + x) * channels);
                    for c in 0..channels {
                        out[dst + c] += t * tmp[src + c];
                    }
                }
            }
        }
        out
    }

    fn filter(&self, input: &[f32], channels: usize) -> Vec<f32> {
        symmetric_filter(input, channels, &self.norm, |v| self.apply(v, channels))
    }
}

fn symmetric_filter(input: &[f32], channels: usize, norm: &[f32], apply: impl Fn(&[f32]) -> Vec<f32>) -> Vec<f32> {
    let scaled: Vec<f32> = input
        .iter()
        .enumerate()
        .map(|(i, v)| v * norm[i / channels])
        .collect();
    let mut out = apply(&scaled);
    for (i, v) in out.iter_mut().enumerate() {
        *v *= norm[i / channels];
    }
    out
}

struct NormalizedLattice {
    lattice: Lattice,
    norm: Vec<f32>,
}

impl NormalizedLattice {
    fn new(lattice: Lattice) -> Self {
        let ones = vec![1f32; lattice.n];
        let norm = lattice
            .compute(&ones, 1)
            .into_iter()
            .map(|s| 1.0 / (s + 1e-20).sqrt())
            .collect();
        Self { lattice, norm }
    }

    fn filter(&self, input: &[f32], channels: usize) -> Vec<f32> {
        symmetric_filter(input, channels, &self.norm, |v| self.lattice.compute(v, channels))
    }
}

const NONE: u32 = u32::MAX;

/// Permutohedral lattice for approximate Gaussian filtering in `d` dimensions
/// (features are pre-scaled so the kernel has unit standard deviation).
pub(crate) struct Lattice {
    d: usize,
    n: usize,
    /// Number of lattice points.
    m: usize,
    /// `n * (d + 1)` enclosing-simplex vertex indices per input point.
    offsets: Vec<u32>,
    /// Barycentric weights matching `offsets`.
    weights: Vec<f32>,
    /// For each blur direction and lattice point, the two neighbor indices.
    blur: Vec<[u32; 2]>,
}

impl Lattice {
    pub(crate) fn new(features: &[f32], d: usize) -> Self {
        assert!(d >= 1 && features.len().is_multiple_of(d));
        let n = features.len() / d;
        let d1 = d + 1;
        let inv_std = (2.0f32 / 3.0).sqrt() * d1 as f32;
        let scale: Vec<f32> = (0..d)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f32).sqrt())
            .collect();
        // canonical simplex: row `k` holds the remainder-k vertex
        let mut canonical = vec![0i32; d1 * d1];
        for k in 0..d1 {
            for j in 0..d1 - k {
                canonical[k * d1 + j] = k as i32;
            }
            for j in d1 - k..d1 {
                canonical[k * d1 + j] = k as i32 - d1 as i32;
            }
        }
        let down = 1.0 / d1 as f32;

        let mut index: HashMap<Box<[i32]>, u32> = HashMap::new();
        let mut keys: Vec<i32> = Vec::new();
        let mut offsets = vec![0u32; n * d1];
        let mut weights = vec![0f32; n * d1];

        let mut elevated = vec![0f32; d1];
        let mut rem0 = vec![0i32; d1];
        let mut rank = vec![0i32; d1];
        let mut bary = vec![0f32; d1 + 1];
        let mut key = vec![0i32; d];

        for k in 0..n {
            let f = &features[k * d..(k + 1) * d];
            let mut sm = 0f32;
            for j in (1..=d).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f32 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            let mut sum = 0i32;
            for i in 0..d1 {
                let v = down * elevated[i];
                let up = v.ceil() * d1 as f32;
                let lo = v.floor() * d1 as f32;
                rem0[i] = if up - elevated[i] < elevated[i] - lo { up as i32 } else { lo as i32 };
                sum += rem0[i];
            }
            sum /= d1 as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                for j in i + 1..d1 {
                    if elevated[i] - (rem0[i] as f32) < elevated[j] - (rem0[j] as f32) {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            let d1i = d1 as i32;
            if sum > 0 {
                for i in 0..d1 {
                    if rank[i] >= d1i - sum {
                        rem0[i] -= d1i;
                        rank[i] += sum - d1i;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..d1 {
                    if rank[i] < -sum {
                        rem0[i] += d1i;
                        rank[i] += d1i + sum;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..d1 {
                let v = (elevated[i] - rem0[i] as f32) * down;
                let r = rank[i] as usize;
                bary[d - r] += v;
                bary[d - r + 1] -= v;
            }
            bary[0] += 1.0 + bary[d1];

            for remainder in 0..d1 {
                for i in 0..d {
                    key[i] = rem0[i] + canonical[remainder * d1 + rank[i] as usize];
                }
                let next = index.len() as u32;
                let idx = *index.entry(key.clone().into_boxed_slice()).or_insert_with(|| {
                    keys.extend_from_slice(&key);
                    next
                });
                offsets[k * d1 + remainder] = idx;
                weights[k * d1 + remainder] = bary[remainder];
            }
        }

        let m = index.len();
        let mut blur = vec![[NONE; 2]; d1 * m];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for j in 0..d1 {
            for i in 0..m {
                let key = &keys[i * d..(i + 1) * d];
                for k in 0..d {
                    n1[k] = key[k] - 1;
                    n2[k] = key[k] + 1;
                }
                if j < d {
                    n1[j] = key[j] + d as i32;
                    n2[j] = key[j] - d as i32;
                }
                let find = |k: &[i32]| index.get(k).copied().unwrap_or(NONE);
                blur[j * m + i] = [find(&n1), find(&n2)];
            }
        }

        Self {
            d,
            n,
            m,
            offsets,
            weights,
            blur,
        }
    }

    /// Splat, blur along each lattice direction, slice.
    pub(crate) fn compute(&self, input: &[f32], channels: usize) -> Vec<f32> {
        let d1 = self.d + 1;
        let c = channels;
        // slot 0 is the always-zero value for missing neighbors
        let mut values = vec![0f32; (self.m + 1) * c];
        for i in 0..self.n {
            for j in 0..d1 {
                let o = (self.offsets[i * d1 + j] as usize + 1) * c;
                let w = self.weights[i * d1 + j];
                for ch in 0..c {
                    values[o + ch] += w * input[i * c + ch];
                }
            }
        }
        let mut next = vec![0f32; values.len()];
        for j in 0..d1 {
            for i in 0..self.m {
                let [a, b] = self.blur[j * self.m + i];
                let slot = |x: u32| if x == NONE { 0 } else { (x as usize + 1) * c };
                let (a, b, o) = (slot(a), slot(b), (i + 1) * c);
                for ch in 0..c {
                    next[o + ch] = values[o + ch] + 0.5 * (values[a + ch] + values[b + ch]);
                }
            }
            std::mem::swap(&mut values, &mut next);
        }
        let alpha = 1.0 / (1.0 + 2f32.powi(-(self.d as i32)));
        let mut out = vec![0f32; self.n * c];
        for i in 0..self.n {
            for j in 0..d1 {
                let o = (self.offsets[i * d1 + j] as usize + 1) * c;
                let w = self.weights[i * d1 + j] * alpha;
                for ch in 0..c {
                    out[i * c + ch] += w * values[o + ch];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_tone(w: usize, h: usize, split_x: usize) -> RgbImage {
        let mut px = Vec::with_capacity(w * h * 3);
        for _y in 0..h {
            for x in 0..w {
                px.extend_from_slice(if x < split_x { &[200, 40, 40] } else { &[30, 30, 160] });
            }
        }
        RgbImage::new("t", w, h, px).unwrap()
    }

    #[test]
    fn barycentric_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feats: Vec<f32> = (0..200 * 3).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let lat = Lattice::new(&feats, 3);
        for w in lat.weights.chunks_exact(4) {
            assert!((w.iter().sum::<f32>() - 1.0).abs() < 1e-4);
            assert!(w.iter().all(|&v| v >= -1e-5));
        }
    }

    #[test]
    fn lattice_tracks_brute_force_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 300;
        let d = 2;
        let feats: Vec<f32> = (0..n * d).map(|_| rng.gen_range(0.0..6.0)).collect();
        let vals: Vec<f32> = (0..n).map(|i| if feats[i * d] < 3.0 { 1.0 } else { 0.0 }).collect();
        let lat = Lattice::new(&feats, d);
        let approx = lat.compute(&vals, 1);
        let ones = lat.compute(&vec![1.0; n], 1);
        let mut max_err = 0f32;
        for i in 0..n {
            let (mut num, mut den) = (0f32, 0f32);
            for j in 0..n {
                let dist2: f32 = (0..d).map(|k| (feats[i * d + k] - feats[j * d + k]).powi(2)).sum();
                let k = (-dist2 / 2.0).exp();
                num += k * vals[j];
                den += k;
            }
            max_err = max_err.max((approx[i] / ones[i] - num / den).abs());
        }
        // normalized averages agree up to the lattice's blur approximation
        assert!(max_err < 0.2, "max error {max_err}");
    }

    #[test]
    fn separated_colors_do_not_mix() {
        let img = two_tone(16, 16, 8);
        let ctx = CrfContext::new(&img, &CrfParams::default()).unwrap();
        let lat = ctx.bilateral.as_ref().unwrap();
        let ind: Vec<f32> = (0..256).map(|i| if i % 16 < 8 { 1.0 } else { 0.0 }).collect();
        let out = lat.filter(&ind, 1);
        for (i, v) in out.iter().enumerate() {
            if i % 16 >= 8 {
                assert!(v.abs() < 1e-3, "leak {v} at {i}");
            }
        }
    }

    #[test]
    fn identity_limits() {
        let img = two_tone(24, 16, 10);
        let mask = Bitmap::rect(24, 16, 0, 0, 8, 16);
        let p0 = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        assert_eq!(crf_refine(&mask, &img, &p0).unwrap(), mask);
        let pw = CrfParams {
            spatial_weight: 0.0,
            bilateral_weight: 0.0,
            ..CrfParams::default()
        };
        assert_eq!(crf_refine(&mask, &img, &pw).unwrap(), mask);
    }

    #[test]
    fn boundary_snaps_to_color_edge() {
        // object occupies x < 21; the block-aligned mask stops at x = 24
        let (w, h) = (48, 32);
        let img = two_tone(w, h, 21);
        let truth = Bitmap::rect(w, h, 0, 0, 21, h);
        let mask = Bitmap::rect(w, h, 0, 0, 24, h);
        let out = crf_refine(&mask, &img, &CrfParams::default()).unwrap();
        let before = mask.iou(&truth).unwrap();
        let after = out.iou(&truth).unwrap();
        assert!(after > before, "iou {before} -> {after}");
    }

    #[test]
    fn size_mismatch() {
        let img = two_tone(8, 8, 4);
        assert!(matches!(
            crf_refine(&Bitmap::new(8, 9), &img, &CrfParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn param_validation() {
        assert!(CrfParams::default().validate().is_ok());
        let bad = CrfParams {
            unary_confidence: 0.5,
            ..CrfParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = CrfParams {
            spatial_sigma: 0.0,
            ..CrfParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
