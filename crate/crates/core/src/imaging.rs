//! Grayscale rasters, patch grids and the two low-level patch descriptors.
//!
//! Patches are square windows into a [`GrayImage`]. Each patch is described
//! twice: by a 32-bin HOG (2x2 cells x 8 unsigned orientations) and by a
//! 64-bin CS-LBP histogram (2x2 cells x 16 codes). Both descriptors depend
//! only on the pixels inside the patch, so a patch's description does not
//! change with where it sits in the image.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const HOG_DIM: usize = 32;
pub const CSLBP_DIM: usize = 64;
pub const HOG_ORIENTATIONS: usize = 8;
pub const CSLBP_CODES: usize = 16;

/// Smallest patch side accepted by the descriptors.
pub const MIN_PATCH_SIDE: usize = 8;

/// Row-major grayscale raster with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<S> {
    width: usize,
    height: usize,
    data: Vec<S>,
}

impl<S: Scalar> GrayImage<S> {
    pub fn new(width: usize, height: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Config(format!(
                "raster of {width}x{height} needs {} intensities, got {}",
                width * height,
                data.len()
            )));
        }
        let max = S::lit(255.0);
        if let Some(bad) = data.iter().find(|v| !(**v >= S::zero() && **v <= max)) {
            return Err(Error::Config(format!("intensity {bad} outside [0, 255]")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds an image by evaluating `f(x, y)` and clamping into `[0, 255]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let max = S::lit(255.0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).max(S::zero()).min(max));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> S {
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[S] {
        &self.data
    }

    /// 2x2 box-filter downsampling; odd trailing rows/columns are dropped.
    pub fn downsample2(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let quarter = S::lit(0.25);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1);
                data.push(s * quarter);
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    fn check_patch(&self, patch: &Patch) -> Result<()> {
        if patch.side < MIN_PATCH_SIDE {
            return Err(Error::InvalidPatch(format!(
                "side {} is below the minimum of {MIN_PATCH_SIDE}",
                patch.side
            )));
        }
        if patch.x + patch.side > self.width || patch.y + patch.side > self.height {
            return Err(Error::InvalidPatch(format!(
                "patch at ({}, {}) with side {} exceeds the {}x{} image",
                patch.x, patch.y, patch.side, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// ITU-R BT.601 luma of one 8-bit RGB pixel.
pub fn luma<S: Scalar>(r: u8, g: u8, b: u8) -> S {
    let v = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    S::lit(v.clamp(0.0, 255.0))
}

pub fn to_grayscale<S: Scalar>(rgb: &image::RgbImage) -> GrayImage<S> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
    GrayImage {
        width: w,
        height: h,
        data,
    }
}

/// Decodes a PNG or JPEG file into grayscale.
pub fn load_gray<S: Scalar>(path: &Path) -> Result<GrayImage<S>> {
    let decoded = image::open(path).map_err(|e| Error::Input {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(to_grayscale(&decoded.to_rgb8()))
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Square window into an image level, tagged with the pyramid block it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub block: usize,
}

/// Regular patch grid over `region` for every side in `sides`.
///
/// Stride is `round(side * stride_fraction)` (at least one pixel). Patches are
/// ordered smallest side first, then row-major. A region smaller than a side
/// simply contributes no patches of that side.
pub fn extract_patches(region: Rect, block: usize, sides: &[usize], stride_fraction: f64) -> Result<Vec<Patch>> {
    if sides.is_empty() {
        return Err(Error::Config("patch sides must not be empty".into()));
    }
    if !(stride_fraction > 0.0 && stride_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "stride fraction {stride_fraction} must lie in (0, 1]"
        )));
    }
    let mut sorted = sides.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    let mut out = Vec::new();
    for side in sorted {
        if side == 0 || side > region.width || side > region.height {
            continue;
        }
        let stride = ((side as f64 * stride_fraction).round() as usize).max(1);
        for y in (0..=region.height - side).step_by(stride) {
            for x in (0..=region.width - side).step_by(stride) {
                out.push(Patch {
                    x: region.x + x,
                    y: region.y + y,
                    side,
                    block,
                });
            }
        }
    }
    Ok(out)
}

#[inline]
fn cell_of(offset: usize, side: usize) -> usize {
    usize::from(offset >= side / 2)
}

/// 2x2 cells x 8 unsigned orientation bins, globally L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HogDescriptor<S>(pub [S; HOG_DIM]);

impl<S: Scalar> HogDescriptor<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    /// True for the all-zero descriptor of a constant patch.
    pub fn is_flat(&self) -> bool {
        self.0.iter().all(|v| v.is_zero())
    }
}

/// Orientation bin of an unsigned gradient direction in `[0, pi)`; bin `b`
/// covers `[b, b + 1) * pi / 8`.
///
/// Decided by sign and slope comparisons rather than `atan2`, so the bin of
/// `(a gx, a gy)` equals the bin of `(gx, gy)` for any `a > 0`, including
/// gradients lying exactly on a bin boundary.
pub fn orientation_bin<S: Scalar>(gx: S, gy: S) -> usize {
    let zero = S::zero();
    let (gx, gy) = if gy < zero || (gy == zero && gx < zero) {
        (-gx, -gy)
    } else {
        (gx, gy)
    };
    let t = S::lit(std::f64::consts::SQRT_2 - 1.0);
    if gx > zero {
        if gy < t * gx {
            0
        } else if gy < gx {
            1
        } else if gx > t * gy {
            2
        } else {
            3
        }
    } else {
        let u = -gx;
        if u < t * gy {
            4
        } else if u < gy {
            5
        } else if gy > t * u {
            6
        } else {
            7
        }
    }
}

/// Histogram of oriented gradients of one patch.
///
/// Gradients are central differences with borders replicated at the patch
/// edge. Each pixel votes its gradient magnitude into one of 8 bins over
/// `[0, 180)` degrees within its cell. A constant patch yields all zeros.
pub fn hog<S: Scalar>(img: &GrayImage<S>, patch: &Patch) -> Result<HogDescriptor<S>> {
    img.check_patch(patch)?;
    let side = patch.side;
    let at = |px: usize, py: usize| img.get(patch.x + px, patch.y + py);

    let mut hist = [S::zero(); HOG_DIM];
    for py in 0..side {
        let (up, down) = (py.saturating_sub(1), (py + 1).min(side - 1));
        for px in 0..side {
            let (left, right) = (px.saturating_sub(1), (px + 1).min(side - 1));
            let gx = at(right, py) - at(left, py);
            let gy = at(px, down) - at(px, up);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag.is_zero() {
                continue;
            }
            let cell = cell_of(py, side) * 2 + cell_of(px, side);
            hist[cell * HOG_ORIENTATIONS + orientation_bin(gx, gy)] += mag;
        }
    }

    let norm = hist.iter().map(|v| *v * *v).sum::<S>().sqrt();
    if norm > S::zero() {
        hist.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(HogDescriptor(hist))
}

/// CS-LBP sampling radius and comparison threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CslbpParams<S> {
    pub radius: f64,
    pub threshold: S,
}

impl<S: Scalar> Default for CslbpParams<S> {
    fn default() -> Self {
        Self {
            radius: 2.0,
            threshold: S::one(),
        }
    }
}

/// 2x2 cells x 16 codes, L1-normalized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CslbpDescriptor<S>(pub [S; CSLBP_DIM]);

impl<S: Scalar> CslbpDescriptor<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

/// Packs four center-symmetric differences into a code in `0..16`.
pub fn cslbp_code<S: Scalar>(diffs: [S; 4], threshold: S) -> u8 {
    diffs
        .iter()
        .enumerate()
        .fold(0u8, |code, (i, d)| code | (u8::from(*d > threshold) << i))
}

/// Bilinear corner offsets and weights for a sample at `(dx, dy)` from the center.
fn bilinear_taps(dx: f64, dy: f64) -> Vec<(isize, isize, f64)> {
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (dx, dy) = (snap(dx), snap(dy));
    let (fx, fy) = (dx.floor(), dy.floor());
    let (tx, ty) = (dx - fx, dy - fy);
    let (ix, iy) = (fx as isize, fy as isize);
    [
        (ix, iy, (1.0 - tx) * (1.0 - ty)),
        (ix + 1, iy, tx * (1.0 - ty)),
        (ix, iy + 1, (1.0 - tx) * ty),
        (ix + 1, iy + 1, tx * ty),
    ]
    .into_iter()
    .filter(|t| t.2 > 0.0)
    .collect()
}

/// Center-symmetric LBP histogram of one patch.
///
/// Eight neighbors lie on a circle of `params.radius` around each interior
/// pixel. Opposite neighbors share bilinear weights, so each difference
/// `n_i - n_{i+4}` is accumulated tap by tap from pixel differences and never
/// from the two interpolated values themselves.
pub fn cslbp<S: Scalar>(img: &GrayImage<S>, patch: &Patch, params: &CslbpParams<S>) -> Result<CslbpDescriptor<S>> {
    img.check_patch(patch)?;
    if params.radius.is_nan() || params.radius <= 0.0 {
        return Err(Error::Config(format!(
            "CS-LBP radius {} must be positive",
            params.radius
        )));
    }
    let side = patch.side;
    let margin = params.radius.ceil() as usize;
    if side <= 2 * margin {
        return Err(Error::InvalidPatch(format!(
            "side {side} leaves no pixel at distance {} from the patch edge",
            params.radius
        )));
    }

    let taps: Vec<Vec<(isize, isize, S)>> = (0..4)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / 8.0;
            bilinear_taps(params.radius * angle.cos(), -params.radius * angle.sin())
                .into_iter()
                .map(|(ox, oy, w)| (ox, oy, S::lit(w)))
                .collect()
        })
        .collect();

    let mut hist = [S::zero(); CSLBP_DIM];
    let mut total = 0usize;
    for py in margin..side - margin {
        for px in margin..side - margin {
            let cx = (patch.x + px) as isize;
            let cy = (patch.y + py) as isize;
            let mut diffs = [S::zero(); 4];
            for (d, tap) in diffs.iter_mut().zip(&taps) {
                *d = tap
                    .iter()
                    .map(|&(ox, oy, w)| {
                        let a = img.get((cx + ox) as usize, (cy + oy) as usize);
                        let b = img.get((cx - ox) as usize, (cy - oy) as usize);
                        w * (a - b)
                    })
                    .sum();
            }
            let code = cslbp_code(diffs, params.threshold) as usize;
            let cell = cell_of(py, side) * 2 + cell_of(px, side);
            hist[cell * CSLBP_CODES + code] += S::one();
            total += 1;
        }
    }

    let total = S::from_count(total);
    hist.iter_mut().for_each(|v| *v /= total);
    Ok(CslbpDescriptor(hist))
}
