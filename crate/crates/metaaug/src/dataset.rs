//! Dataset ingestion: the binary container format, the synthetic glyph
//! generator, stratified splitting, and a PGM/PPM directory converter.
//!
//! Container layout (little-endian): magic `MAUG`, u32 version, u32 count,
//! u16 height, u16 width, u8 channels, u16 classes, then `count` records of
//! `u8 pixels[H*W*C]` followed by a `u16` label. Pixels are stored as bytes
//! and scaled to [0, 1] on load.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::augment::ImageSample;
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::rng::{stream, StreamId};

const MAGIC: &[u8; 4] = b"MAUG";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<ImageSample>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dataset {
    /// Build from samples; all samples go to the train split until
    /// [`split`] is applied.
    pub fn from_samples(
        name: impl Into<String>,
        samples: Vec<ImageSample>,
        num_classes: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("dataset needs at least one sample"));
        }
        let (h, w, c) = (samples[0].height, samples[0].width, samples[0].channels);
        for (i, s) in samples.iter().enumerate() {
            if (s.height, s.width, s.channels) != (h, w, c) {
                return Err(Error::dimension(format!("sample {} has mismatched dims", i)));
            }
            if s.label >= num_classes {
                return Err(Error::domain(format!(
                    "sample {} label {} >= classes {}",
                    i, s.label, num_classes
                )));
            }
        }
        let train = (0..samples.len()).collect();
        Ok(Dataset {
            name: name.into(),
            samples,
            train,
            val: Vec::new(),
            test: Vec::new(),
            num_classes,
            height: h,
            width: w,
            channels: c,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    atomic_write(path, &encode_dataset(ds))
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + ds.len() * (ds.input_dim() + 2));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.height as u16).to_le_bytes());
    out.extend_from_slice(&(ds.width as u16).to_le_bytes());
    out.push(ds.channels as u8);
    out.extend_from_slice(&(ds.num_classes as u16).to_le_bytes());
    for s in &ds.samples {
        for &p in &s.pixels {
            out.push((p * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        out.extend_from_slice(&(s.label as u16).to_le_bytes());
    }
    out
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    decode_dataset(&bytes, name)
}

pub fn decode_dataset(bytes: &[u8], name: String) -> Result<Dataset> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err(Error::parse(0, format!("bad magic {:?}, expected MAUG", magic)));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {}", version)));
    }
    let count = cur.u32()? as usize;
    let height = cur.u16()? as usize;
    let width = cur.u16()? as usize;
    let channels = cur.u8()? as usize;
    let classes = cur.u16()? as usize;
    if height == 0 || width == 0 || channels == 0 || classes == 0 {
        return Err(Error::parse(10, "zero dimension or class count"));
    }
    let px_len = height * width * channels;
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let rec_off = cur.pos as u64;
        let raw = cur.take(px_len).map_err(|_| {
            Error::parse(rec_off, format!("record {} truncated (count field says {})", i, count))
        })?;
        let pixels: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
        let label_off = cur.pos as u64;
        let label = cur
            .u16()
            .map_err(|_| Error::parse(label_off, format!("record {} label truncated", i)))?
            as usize;
        if label >= classes {
            return Err(Error::parse(
                label_off,
                format!("record {} label {} >= classes {}", i, label, classes),
            ));
        }
        samples.push(ImageSample {
            height,
            width,
            channels,
            pixels,
            label,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(
            cur.pos as u64,
            format!("{} trailing bytes after last record", bytes.len() - cur.pos),
        ));
    }
    Dataset::from_samples(name, samples, classes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("need {} bytes, {} remain", n, self.bytes.len() - self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

// ---------------------------------------------------------------------------
// Synthetic glyph dataset
// ---------------------------------------------------------------------------

/// Classes rendered by [`synth_digits`].
pub const SYNTH_CLASSES: usize = 6;
/// The chirality-sensitive pair: class 1's canonical glyph is class 0's
/// rotated by exactly 180 degrees, so heavy rotations are label-destroying
/// for these two classes only.
pub const SYNTH_CHIRALITY: (usize, usize) = (0, 1);
pub const SYNTH_SIDE: usize = 16;

/// Exact 180-degree rotation: a pure pixel permutation, no interpolation.
pub fn rotate180(img: &ImageSample) -> ImageSample {
    let mut out = img.clone();
    let npx = img.height * img.width;
    for p in 0..npx {
        let q = npx - 1 - p;
        for ch in 0..img.channels {
            out.pixels[p * img.channels + ch] = img.pixels[q * img.channels + ch];
        }
    }
    out
}

/// Canonical (un-jittered) glyph for a class, 16x16 grayscale.
///
/// 0: a "6"-like hook (bowl low-left, stem rising to the upper right)
/// 1: the same hook rotated 180 degrees (a "9")
/// 2: ring, 3: filled disk, 4: cross, 5: horizontal stripes
pub fn canonical_glyph(class: usize) -> Result<ImageSample> {
    if class >= SYNTH_CLASSES {
        return Err(Error::domain(format!("class {} >= {}", class, SYNTH_CLASSES)));
    }
    let side = SYNTH_SIDE;
    let mut canvas = vec![0.0f64; side * side];
    match class {
        0 => {
            paint_ring(&mut canvas, side, 7.0, 10.0, 3.1, 1.0);
            paint_segment(&mut canvas, side, 11.5, 3.0, 9.2, 7.6, 0.9);
        }
        1 => {
            let six = canonical_glyph(0)?;
            return Ok(ImageSample {
                label: 1,
                ..rotate180(&six)
            });
        }
        2 => paint_ring(&mut canvas, side, 7.5, 7.5, 4.4, 1.0),
        3 => paint_disk(&mut canvas, side, 7.5, 7.5, 3.9),
        4 => {
            paint_segment(&mut canvas, side, 7.5, 2.5, 7.5, 12.5, 1.0);
            paint_segment(&mut canvas, side, 2.5, 7.5, 12.5, 7.5, 1.0);
        }
        5 => {
            paint_segment(&mut canvas, side, 3.0, 3.5, 12.0, 3.5, 0.8);
            paint_segment(&mut canvas, side, 3.0, 7.5, 12.0, 7.5, 0.8);
            paint_segment(&mut canvas, side, 3.0, 11.5, 12.0, 11.5, 0.8);
        }
        _ => unreachable!(),
    }
    ImageSample::new(side, side, 1, canvas, class)
}

/// Anti-aliased intensity for a signed distance `d` past the stroke edge.
#[inline]
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn paint(canvas: &mut [f64], side: usize, f: impl Fn(f64, f64) -> f64) {
    for y in 0..side {
        for x in 0..side {
            let v = f(x as f64, y as f64);
            let slot = &mut canvas[y * side + x];
            if v > *slot {
                *slot = v;
            }
        }
    }
}

fn paint_segment(canvas: &mut [f64], side: usize, x0: f64, y0: f64, x1: f64, y1: f64, hw: f64) {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    paint(canvas, side, |x, y| {
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0)
        };
        let (px, py) = (x0 + t * dx, y0 + t * dy);
        let d = ((x - px).powi(2) + (y - py).powi(2)).sqrt() - hw;
        coverage(d)
    });
}

fn paint_ring(canvas: &mut [f64], side: usize, cx: f64, cy: f64, radius: f64, hw: f64) {
    paint(canvas, side, |x, y| {
        let d = (((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - radius).abs() - hw;
        coverage(d)
    });
}

fn paint_disk(canvas: &mut [f64], side: usize, cx: f64, cy: f64, radius: f64) {
    paint(canvas, side, |x, y| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - radius;
        coverage(d)
    });
}

/// Integer-pixel shift with zero fill (exact, no interpolation).
fn shift_glyph(img: &ImageSample, dx: i64, dy: i64) -> ImageSample {
    let mut out = ImageSample {
        pixels: vec![0.0; img.pixels.len()],
        ..img.clone()
    };
    for y in 0..img.height as i64 {
        for x in 0..img.width as i64 {
            let (sy, sx) = (y - dy, x - dx);
            if sy < 0 || sx < 0 || sy >= img.height as i64 || sx >= img.width as i64 {
                continue;
            }
            for ch in 0..img.channels {
                out.pixels[img.idx(y as usize, x as usize, ch)] =
                    img.get(sy as usize, sx as usize, ch);
            }
        }
    }
    out
}

/// `n` balanced 16x16 grayscale glyph samples over [`SYNTH_CLASSES`] classes.
///
/// Every sample is a canonical glyph under a small integer translation, a
/// brightness factor, and light additive noise, so classes are robust to
/// translation and brightness changes while classes 0/1 stay mirror images of
/// each other under 180-degree rotation.
pub fn synth_digits(n: usize, seed: u64) -> Result<Dataset> {
    if n < SYNTH_CLASSES {
        return Err(Error::domain(format!(
            "need at least {} samples for balanced labels, got {}",
            SYNTH_CLASSES, n
        )));
    }
    let glyphs: Vec<ImageSample> = (0..SYNTH_CLASSES)
        .map(canonical_glyph)
        .collect::<Result<_>>()?;
    let mut rng = stream(seed, StreamId::Data);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % SYNTH_CLASSES;
        let dx = rng.gen_range(-2i64..=2);
        let dy = rng.gen_range(-2i64..=2);
        let brightness = rng.gen_range(0.55..=1.0);
        let mut img = shift_glyph(&glyphs[class], dx, dy);
        for p in &mut img.pixels {
            let noise = rng.gen_range(0.0..0.04);
            *p = (*p * brightness + noise).clamp(0.0, 1.0);
        }
        img.label = class;
        samples.push(img);
    }
    Dataset::from_samples(format!("synth-{}-{}", n, seed), samples, SYNTH_CLASSES)
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

/// Assign samples to train/val/test splits, stratified by class.
///
/// Within a class, `floor(fraction * class_size)` samples go to train and val,
/// test takes the remainder scaled the same way; any leftover from fractions
/// that sum below 1 stays unassigned. A fraction > 0 that rounds to zero
/// samples for some class is a config error.
pub fn split(dataset: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ft + fv + fs > 1.0 + 1e-12 {
        return Err(Error::config("split fractions must lie in [0,1] and sum to at most 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = stream(seed, StreamId::Data);
    let mut out = dataset.clone();
    out.train.clear();
    out.val.clear();
    out.test.clear();
    for (class, mut idxs) in by_class.into_iter().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        idxs.shuffle(&mut rng);
        let len = idxs.len();
        let n_train = (ft * len as f64).floor() as usize;
        let n_val = (fv * len as f64).floor() as usize;
        let n_test = (fs * len as f64).floor() as usize;
        for (frac, count, name) in [(ft, n_train, "train"), (fv, n_val, "val"), (fs, n_test, "test")] {
            if frac > 0.0 && count == 0 {
                return Err(Error::config(format!(
                    "class {} has no samples for the {} split (fraction {})",
                    class, name, frac
                )));
            }
        }
        out.train.extend(&idxs[..n_train]);
        out.val.extend(&idxs[n_train..n_train + n_val]);
        out.test.extend(&idxs[n_train + n_val..n_train + n_val + n_test]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

// ---------------------------------------------------------------------------
// PGM/PPM directory converter
// ---------------------------------------------------------------------------

/// Ingest a directory of `P5` (grayscale) / `P6` (RGB) files into a dataset.
///
/// Layout: one subdirectory per class; subdirectories sorted by name define
/// the label order; files within a class are sorted by name. All images must
/// share dimensions and use maxval <= 255.
pub fn convert_pnm_dir(dir: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::config(format!(
            "{} has no class subdirectories",
            dir.display()
        )));
    }
    let mut samples = Vec::new();
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let mut files: Vec<_> = fs::read_dir(class_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("ppm")
                )
            })
            .collect();
        files.sort();
        for file in files {
            let bytes = fs::read(&file)?;
            let mut img = parse_pnm(&bytes)
                .map_err(|e| Error::Checkpoint(format!("{}: {}", file.display(), e)))?;
            img.label = label;
            samples.push(img);
        }
    }
    let classes = class_dirs.len();
    Dataset::from_samples(
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "pnm".into()),
        samples,
        classes,
    )
}

/// Parse one binary PGM (P5) or PPM (P6) image.
pub fn parse_pnm(bytes: &[u8]) -> Result<ImageSample> {
    let mut pos = 0usize;
    let magic = pnm_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::parse(0, format!("unsupported PNM magic `{}`", other))),
    };
    let width: usize = pnm_number(bytes, &mut pos)?;
    let height: usize = pnm_number(bytes, &mut pos)?;
    let maxval: usize = pnm_number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(pos as u64, format!("maxval {} outside [1, 255]", maxval)));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            pos as u64,
            format!("raster truncated: need {} bytes, have {}", need, bytes.len() - pos),
        ));
    }
    let pixels: Vec<f64> = bytes[pos..pos + need]
        .iter()
        .map(|&b| (b as f64 / maxval as f64).min(1.0))
        .collect();
    ImageSample::new(height, width, channels, pixels, 0)
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    // Skip whitespace and `#` comment lines.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start as u64, "unexpected end of PNM header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn pnm_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pnm_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::parse(*pos as u64, format!("bad PNM number `{}`", tok)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip_is_byte_identical() {
        let ds = synth_digits(24, 3).unwrap();
        let bytes = encode_dataset(&ds);
        let loaded = decode_dataset(&bytes, "x".into()).unwrap();
        assert_eq!(encode_dataset(&loaded), bytes);
        assert_eq!(loaded.len(), 24);
        assert_eq!(loaded.num_classes, SYNTH_CLASSES);
    }

    #[test]
    fn single_sample_container() {
        let img = ImageSample::constant(2, 3, 1, 0.5, 0);
        let ds = Dataset::from_samples("one", vec![img], 1).unwrap();
        let loaded = decode_dataset(&encode_dataset(&ds), "one".into()).unwrap();
        assert_eq!(loaded.len(), 1);
    }

    #[test]
    fn corrupt_containers_error_instead_of_panicking() {
        let ds = synth_digits(12, 5).unwrap();
        let bytes = encode_dataset(&ds);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            decode_dataset(&bad_magic, "x".into()),
            Err(Error::Parse { offset: 0, .. })
        ));

        // Count field claims more records than the file holds.
        let mut bad_count = bytes.clone();
        bad_count[8..12].copy_from_slice(&(ds.len() as u32 + 3).to_le_bytes());
        assert!(matches!(decode_dataset(&bad_count, "x".into()), Err(Error::Parse { .. })));

        let truncated = &bytes[..bytes.len() - 5];
        assert!(matches!(decode_dataset(truncated, "x".into()), Err(Error::Parse { .. })));

        // Label beyond the class count.
        let mut bad_label = bytes.clone();
        let last_label = bad_label.len() - 2;
        bad_label[last_label..].copy_from_slice(&1000u16.to_le_bytes());
        assert!(matches!(decode_dataset(&bad_label, "x".into()), Err(Error::Parse { .. })));
    }

    #[test]
    fn chirality_pair_is_an_exact_half_turn() {
        let six = canonical_glyph(SYNTH_CHIRALITY.0).unwrap();
        let nine = canonical_glyph(SYNTH_CHIRALITY.1).unwrap();
        let rotated = rotate180(&six);
        for (a, b) in rotated.pixels.iter().zip(nine.pixels.iter()) {
            assert!((a - b).abs() <= 1e-6);
        }
        // And the pair is genuinely chiral: the glyph is not its own half-turn.
        let self_diff: f64 = rotated
            .pixels
            .iter()
            .zip(six.pixels.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(self_diff > 1.0);
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let a = synth_digits(26, 9).unwrap();
        let b = synth_digits(26, 9).unwrap();
        assert_eq!(encode_dataset(&a), encode_dataset(&b));
        let c = synth_digits(26, 10).unwrap();
        assert_ne!(encode_dataset(&a), encode_dataset(&c));

        let mut counts = vec![0usize; SYNTH_CLASSES];
        for s in &a.samples {
            counts[s.label] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);

        let exact = synth_digits(SYNTH_CLASSES, 1).unwrap();
        let mut counts = vec![0usize; SYNTH_CLASSES];
        for s in &exact.samples {
            counts[s.label] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));

        assert!(synth_digits(3, 1).is_err());
    }

    #[test]
    fn split_all_train() {
        let ds = synth_digits(30, 2).unwrap();
        let s = split(&ds, (1.0, 0.0, 0.0), 7).unwrap();
        assert_eq!(s.train.len(), 30);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_fifty_fifty_is_class_balanced() {
        // Balanced 2-class dataset.
        let samples: Vec<ImageSample> = (0..40)
            .map(|i| ImageSample::constant(4, 4, 1, (i % 5) as f64 / 5.0, i % 2))
            .collect();
        let ds = Dataset::from_samples("two", samples, 2).unwrap();
        let s = split(&ds, (0.5, 0.5, 0.0), 11).unwrap();
        for part in [&s.train, &s.val] {
            let ones = part.iter().filter(|&&i| s.samples[i].label == 1).count();
            assert_eq!(part.len(), 20);
            assert_eq!(ones, 10);
        }
        // Disjoint.
        let mut all: Vec<usize> = s.train.iter().chain(s.val.iter()).cloned().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 40);
    }

    #[test]
    fn split_is_deterministic_and_rejects_starved_classes() {
        let ds = synth_digits(60, 4).unwrap();
        let a = split(&ds, (0.8, 0.1, 0.1), 5).unwrap();
        let b = split(&ds, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);

        // 6 samples per class, 0.05 rounds to zero per class.
        assert!(split(&ds, (0.9, 0.05, 0.05), 5).is_err());
    }

    #[test]
    fn pnm_parse_and_convert() {
        let mut pgm = b"P5\n# comment\n3 2\n255\n".to_vec();
        pgm.extend_from_slice(&[0, 128, 255, 10, 20, 30]);
        let img = parse_pnm(&pgm).unwrap();
        assert_eq!((img.height, img.width, img.channels), (2, 3, 1));
        assert!((img.get(0, 2, 0) - 1.0).abs() < 1e-12);

        let bad = b"P4\n3 2\n255\n".to_vec();
        assert!(parse_pnm(&bad).is_err());
        let truncated = b"P5\n3 2\n255\n\x00\x01".to_vec();
        assert!(parse_pnm(&truncated).is_err());
    }
}
