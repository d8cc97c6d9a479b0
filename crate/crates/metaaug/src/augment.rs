//! The K = 14 magnitude-parameterized image processing functions, their
//! pairwise composition, and the 28-dimensional transformation embedding.
//!
//! The catalog order is fixed and is part of the on-disk log format (the
//! `(j, k)` indices appear in CSV logs and checkpoints); it must never change:
//!
//! 1 AutoContrast, 2 Equalize, 3 Rotate, 4 Posterize, 5 Solarize, 6 Color,
//! 7 Contrast, 8 Brightness, 9 Sharpness, 10 ShearX, 11 ShearY,
//! 12 TranslateX, 13 TranslateY, 14 Identity.
//!
//! Magnitudes live in [0, 10] and map linearly onto per-function parameter
//! ranges (rotation up to 30 degrees, shear up to 0.3, translation up to 45%
//! of the side, enhancement factors 1 +/- 0.9, posterize down to 4 bits,
//! solarize threshold down to 0). Ops with a direction pick their sign
//! uniformly at random from the RNG handle passed in, so whole runs replay
//! exactly from the seed.

use rand::Rng;

use crate::error::{Error, Result};

/// Number of catalog functions.
pub const NUM_FUNCTIONS: usize = 14;

/// Length of the transformation embedding (2 slots per function).
pub const EMBEDDING_DIM: usize = 2 * NUM_FUNCTIONS;

/// Embedding value for functions that take no magnitude.
const MAGNITUDE_FREE_SENTINEL: f64 = 11.0;

/// One-based catalog indices for the functions tests and the harness refer to
/// by name.
pub const AUTOCONTRAST: usize = 1;
pub const EQUALIZE: usize = 2;
pub const ROTATE: usize = 3;
pub const POSTERIZE: usize = 4;
pub const SOLARIZE: usize = 5;
pub const COLOR: usize = 6;
pub const CONTRAST: usize = 7;
pub const BRIGHTNESS: usize = 8;
pub const SHARPNESS: usize = 9;
pub const SHEAR_X: usize = 10;
pub const SHEAR_Y: usize = 11;
pub const TRANSLATE_X: usize = 12;
pub const TRANSLATE_Y: usize = 13;
pub const IDENTITY: usize = 14;

#[derive(Debug, Clone, Copy)]
pub struct FunctionDescriptor {
    pub name: &'static str,
    pub uses_magnitude: bool,
    /// Whether the op draws a direction sign at apply time.
    pub signed: bool,
}

pub const CATALOG: [FunctionDescriptor; NUM_FUNCTIONS] = [
    FunctionDescriptor { name: "AutoContrast", uses_magnitude: false, signed: false },
    FunctionDescriptor { name: "Equalize", uses_magnitude: false, signed: false },
    FunctionDescriptor { name: "Rotate", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "Posterize", uses_magnitude: true, signed: false },
    FunctionDescriptor { name: "Solarize", uses_magnitude: true, signed: false },
    FunctionDescriptor { name: "Color", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "Contrast", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "Brightness", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "Sharpness", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "ShearX", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "ShearY", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "TranslateX", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "TranslateY", uses_magnitude: true, signed: true },
    FunctionDescriptor { name: "Identity", uses_magnitude: false, signed: false },
];

pub fn function_names() -> Vec<&'static str> {
    CATALOG.iter().map(|d| d.name).collect()
}

/// FNV-1a hash of the catalog (names in order), pinned into checkpoints so a
/// policy trained against one catalog cannot be replayed against another.
pub fn catalog_hash() -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for d in &CATALOG {
        for b in d.name.bytes().chain(std::iter::once(b'\n')) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{:016x}", h)
}

/// An image with pixels in [0, 1], row-major `(y, x, channel)`, and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl ImageSample {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
        label: usize,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::domain("image dimensions must be positive"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::dimension(format!(
                "pixel buffer {} != {}x{}x{}",
                pixels.len(),
                height,
                width,
                channels
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::domain("pixels must lie in [0, 1]"));
        }
        Ok(ImageSample {
            height,
            width,
            channels,
            pixels,
            label,
        })
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64, label: usize) -> Self {
        ImageSample {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
            label,
        }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.width + x) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.pixels[self.idx(y, x, ch)]
    }

    fn clamp_pixels(mut self) -> Self {
        for p in &mut self.pixels {
            *p = p.clamp(0.0, 1.0);
        }
        self
    }
}

/// The transformation `T_{j,k}^{m1,m2}`: functions `j` then `k` (one-based
/// catalog indices) with magnitudes in [0, 10].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub j: usize,
    pub k: usize,
    pub m1: f64,
    pub m2: f64,
}

impl TransformSpec {
    pub fn new(j: usize, k: usize, m1: f64, m2: f64) -> Result<Self> {
        let spec = TransformSpec { j, k, m1, m2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_index(self.j)?;
        check_index(self.k)?;
        check_magnitude(self.m1)?;
        check_magnitude(self.m2)?;
        Ok(())
    }
}

fn check_index(i: usize) -> Result<()> {
    if (1..=NUM_FUNCTIONS).contains(&i) {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "function index {} outside [1, {}]",
            i, NUM_FUNCTIONS
        )))
    }
}

fn check_magnitude(m: f64) -> Result<()> {
    if m.is_finite() && (0.0..=10.0).contains(&m) {
        Ok(())
    } else {
        Err(Error::domain(format!("magnitude {} outside [0, 10]", m)))
    }
}

/// Apply one catalog function at the given magnitude. Signed ops consume one
/// boolean from `rng` for the direction draw (even at zero magnitude, so
/// replay alignment does not depend on magnitudes).
pub fn apply_function<R: Rng>(
    img: &ImageSample,
    func_index: usize,
    magnitude: f64,
    rng: &mut R,
) -> Result<ImageSample> {
    check_index(func_index)?;
    check_magnitude(magnitude)?;
    let desc = &CATALOG[func_index - 1];
    let sign = if desc.signed {
        if rng.gen::<bool>() {
            1.0
        } else {
            -1.0
        }
    } else {
        1.0
    };
    let frac = magnitude / 10.0;
    let out = match func_index {
        AUTOCONTRAST => autocontrast(img),
        EQUALIZE => equalize(img),
        ROTATE => rotate(img, sign * frac * 30.0),
        POSTERIZE => posterize(img, posterize_bits(magnitude)),
        SOLARIZE => solarize(img, 1.0 - frac),
        COLOR => color(img, 1.0 + sign * frac * 0.9),
        CONTRAST => contrast(img, 1.0 + sign * frac * 0.9),
        BRIGHTNESS => brightness(img, 1.0 + sign * frac * 0.9),
        SHARPNESS => sharpness(img, 1.0 + sign * frac * 0.9),
        SHEAR_X => shear_x(img, sign * frac * 0.3),
        SHEAR_Y => shear_y(img, sign * frac * 0.3),
        TRANSLATE_X => translate_x(img, sign * frac * 0.45 * img.width as f64),
        TRANSLATE_Y => translate_y(img, sign * frac * 0.45 * img.height as f64),
        IDENTITY => img.clone(),
        _ => unreachable!(),
    };
    Ok(out.clamp_pixels())
}

/// Bits kept by Posterize for a magnitude: 8 at m = 0 down to 4 at m = 10.
fn posterize_bits(magnitude: f64) -> u32 {
    let reduced = (magnitude * 4.0 / 10.0).round() as u32;
    (8 - reduced.min(4)).max(4)
}

/// Apply `spec.j` with `m1`, then `spec.k` with `m2`.
pub fn apply_transform<R: Rng>(
    img: &ImageSample,
    spec: &TransformSpec,
    rng: &mut R,
) -> Result<ImageSample> {
    spec.validate()?;
    let mid = apply_function(img, spec.j, spec.m1, rng)?;
    apply_function(&mid, spec.k, spec.m2, rng)
}

/// Sparse 28-dim embedding: slot `2j-1` (one-based) holds `m1 + 1`, slot `2k`
/// holds `m2 + 1`, all else zero. Magnitude-free functions put the sentinel 11
/// in their slot.
pub fn embed(spec: &TransformSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut e = vec![0.0; EMBEDDING_DIM];
    e[2 * (spec.j - 1)] = if CATALOG[spec.j - 1].uses_magnitude {
        spec.m1 + 1.0
    } else {
        MAGNITUDE_FREE_SENTINEL
    };
    e[2 * spec.k - 1] = if CATALOG[spec.k - 1].uses_magnitude {
        spec.m2 + 1.0
    } else {
        MAGNITUDE_FREE_SENTINEL
    };
    Ok(e)
}

// ---------------------------------------------------------------------------
// Pixel-value ops
// ---------------------------------------------------------------------------

fn autocontrast(img: &ImageSample) -> ImageSample {
    let mut out = img.clone();
    for ch in 0..img.channels {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in (ch..img.pixels.len()).step_by(img.channels) {
            lo = lo.min(img.pixels[i]);
            hi = hi.max(img.pixels[i]);
        }
        if hi - lo <= f64::EPSILON {
            continue;
        }
        let scale = 1.0 / (hi - lo);
        for i in (ch..img.pixels.len()).step_by(img.channels) {
            out.pixels[i] = (img.pixels[i] - lo) * scale;
        }
    }
    out
}

/// Histogram equalization per channel over 256 bins, integer LUT arithmetic.
fn equalize(img: &ImageSample) -> ImageSample {
    let mut out = img.clone();
    for ch in 0..img.channels {
        let mut hist = [0u64; 256];
        for i in (ch..img.pixels.len()).step_by(img.channels) {
            hist[to_byte(img.pixels[i]) as usize] += 1;
        }
        let total: u64 = hist.iter().sum();
        let step = (total - hist[255]) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (b, h) in hist.iter().enumerate() {
            lut[b] = (n / step).min(255) as u8;
            n += h;
        }
        for i in (ch..img.pixels.len()).step_by(img.channels) {
            out.pixels[i] = lut[to_byte(img.pixels[i]) as usize] as f64 / 255.0;
        }
    }
    out
}

#[inline]
fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn posterize(img: &ImageSample, bits: u32) -> ImageSample {
    let mask: u8 = (0xffu16 << (8 - bits)) as u8;
    let mut out = img.clone();
    for p in &mut out.pixels {
        *p = (to_byte(*p) & mask) as f64 / 255.0;
    }
    out
}

fn solarize(img: &ImageSample, threshold: f64) -> ImageSample {
    let mut out = img.clone();
    for p in &mut out.pixels {
        if *p > threshold {
            *p = 1.0 - *p;
        }
    }
    out
}

/// Luma of the pixel at flat position `base` (start of its channel group).
#[inline]
fn luma(img: &ImageSample, base: usize) -> f64 {
    if img.channels == 3 {
        0.299 * img.pixels[base] + 0.587 * img.pixels[base + 1] + 0.114 * img.pixels[base + 2]
    } else {
        let mut s = 0.0;
        for ch in 0..img.channels {
            s += img.pixels[base + ch];
        }
        s / img.channels as f64
    }
}

/// Blend toward the per-pixel grayscale: factor 0 fully desaturates.
fn color(img: &ImageSample, factor: f64) -> ImageSample {
    let mut out = img.clone();
    let npx = img.height * img.width;
    for p in 0..npx {
        let base = p * img.channels;
        let g = luma(img, base);
        for ch in 0..img.channels {
            out.pixels[base + ch] = g + factor * (img.pixels[base + ch] - g);
        }
    }
    out
}

/// Blend toward the image-wide mean luma: factor 0 flattens to gray.
fn contrast(img: &ImageSample, factor: f64) -> ImageSample {
    let npx = img.height * img.width;
    let mean: f64 = (0..npx).map(|p| luma(img, p * img.channels)).sum::<f64>() / npx as f64;
    let mut out = img.clone();
    for p in &mut out.pixels {
        *p = mean + factor * (*p - mean);
    }
    out
}

/// Blend toward black: factor 0 is a black image.
fn brightness(img: &ImageSample, factor: f64) -> ImageSample {
    let mut out = img.clone();
    for p in &mut out.pixels {
        *p *= factor;
    }
    out
}

/// Blend toward a 3x3 smoothed copy (kernel 1/13 * [[1,1,1],[1,5,1],[1,1,1]],
/// edge-replicated): factor 0 fully smooths, factor > 1 sharpens.
fn sharpness(img: &ImageSample, factor: f64) -> ImageSample {
    let (h, w, c) = (img.height as isize, img.width as isize, img.channels);
    let mut smooth = img.clone();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let k = if dy == 0 && dx == 0 { 5.0 } else { 1.0 };
                        acc += k * img.get(sy, sx, ch);
                    }
                }
                smooth.pixels[img.idx(y as usize, x as usize, ch)] = acc / 13.0;
            }
        }
    }
    let mut out = img.clone();
    for i in 0..out.pixels.len() {
        out.pixels[i] = smooth.pixels[i] + factor * (img.pixels[i] - smooth.pixels[i]);
    }
    out
}

// ---------------------------------------------------------------------------
// Geometric kernels (deterministic; the sign was drawn by the caller)
// ---------------------------------------------------------------------------

/// Bilinear sample with zero (black) padding outside the frame.
fn bilinear(img: &ImageSample, fy: f64, fx: f64, ch: usize) -> f64 {
    let y0 = fy.floor();
    let x0 = fx.floor();
    let dy = fy - y0;
    let dx = fx - x0;
    let mut acc = 0.0;
    for (yy, wy) in [(y0 as isize, 1.0 - dy), (y0 as isize + 1, dy)] {
        if wy == 0.0 || yy < 0 || yy >= img.height as isize {
            continue;
        }
        for (xx, wx) in [(x0 as isize, 1.0 - dx), (x0 as isize + 1, dx)] {
            if wx == 0.0 || xx < 0 || xx >= img.width as isize {
                continue;
            }
            acc += wy * wx * img.get(yy as usize, xx as usize, ch);
        }
    }
    acc
}

/// Apply an inverse coordinate map `out(y, x) = in(map(y, x))` with bilinear
/// sampling.
fn warp(img: &ImageSample, map: impl Fn(f64, f64) -> (f64, f64)) -> ImageSample {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let (sy, sx) = map(y as f64, x as f64);
            for ch in 0..img.channels {
                out.pixels[img.idx(y, x, ch)] = bilinear(img, sy, sx, ch);
            }
        }
    }
    out
}

/// Rotate image content by `degrees` about the image center.
pub(crate) fn rotate(img: &ImageSample, degrees: f64) -> ImageSample {
    let a = degrees.to_radians();
    let (cos, sin) = (a.cos(), a.sin());
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    warp(img, |y, x| {
        let (ry, rx) = (y - cy, x - cx);
        (cy + sin * rx + cos * ry, cx + cos * rx - sin * ry)
    })
}

pub(crate) fn shear_x(img: &ImageSample, s: f64) -> ImageSample {
    let cy = (img.height as f64 - 1.0) / 2.0;
    warp(img, |y, x| (y, x + s * (y - cy)))
}

pub(crate) fn shear_y(img: &ImageSample, s: f64) -> ImageSample {
    let cx = (img.width as f64 - 1.0) / 2.0;
    warp(img, |y, x| (y + s * (x - cx), x))
}

/// Shift image content right by `dx` pixels (fractions interpolate).
pub(crate) fn translate_x(img: &ImageSample, dx: f64) -> ImageSample {
    warp(img, |y, x| (y, x - dx))
}

/// Shift image content down by `dy` pixels.
pub(crate) fn translate_y(img: &ImageSample, dy: f64) -> ImageSample {
    warp(img, |y, x| (y - dy, x))
}
