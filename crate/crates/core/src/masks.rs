//! Post-stimulus noise masks.
//!
//! Two generators are provided. `PatchShuffle` permutes 8x8 tiles of the
//! stimulus. `PhaseScramble` keeps each channel's Fourier magnitudes and
//! replaces the phases with those of white noise. Both produce four masks
//! the size of the stimulus.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{HypeError, Result};
use crate::pool::ImageRecord;

pub const MASKS_PER_STIMULUS: usize = 4;
pub const TILE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskGenerator {
    PatchShuffle,
    PhaseScramble,
}

/// Planar RGB image with `f64` samples on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    /// Three planes of `width * height` samples, row-major.
    pub planes: [Vec<f64>; 3],
}

impl MaskImage {
    fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut planes = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
        for (x, y, px) in img.enumerate_pixels() {
            let i = y as usize * w + x as usize;
            for (plane, v) in planes.iter_mut().zip(px.0) {
                plane[i] = f64::from(v);
            }
        }
        Self { width: w, height: h, planes }
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            image::Rgb(std::array::from_fn(|c| self.planes[c][i].round().clamp(0.0, 255.0) as u8))
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb().write_to(&mut buf, ImageFormat::Png).map_err(|e| HypeError::Io(e.to_string()))?;
        Ok(buf.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub stimulus_image_id: String,
    pub generator: MaskGenerator,
    pub seed: u64,
    pub masks: Vec<MaskImage>,
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes).map(|i| i.to_rgb8()).map_err(|e| HypeError::Decode(e.to_string()))
}

/// Resolves a `file://` URI or bare path to bytes.
pub fn read_uri(uri: &str) -> Result<Vec<u8>> {
    let path = uri.strip_prefix("file://").unwrap_or(uri);
    if uri.contains("://") && !uri.starts_with("file://") {
        return Err(HypeError::Input(format!("only file URIs can be read locally: {uri}")));
    }
    Ok(std::fs::read(Path::new(path))?)
}

pub fn generate_masks(stimulus: &ImageRecord, generator: MaskGenerator, seed: u64) -> Result<MaskSet> {
    let bytes = read_uri(&stimulus.uri)?;
    generate_masks_from_bytes(&stimulus.image_id, &bytes, generator, seed)
}

pub fn generate_masks_from_bytes(image_id: &str, bytes: &[u8], generator: MaskGenerator, seed: u64) -> Result<MaskSet> {
    let source = MaskImage::from_rgb(&decode(bytes)?);
    let masks = (0..MASKS_PER_STIMULUS)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            match generator {
                MaskGenerator::PatchShuffle => patch_shuffle(&source, &mut rng),
                MaskGenerator::PhaseScramble => phase_scramble(&source, &mut rng),
            }
        })
        .collect();
    Ok(MaskSet { stimulus_image_id: image_id.to_string(), generator, seed, masks })
}

/// Permutes the full 8x8 tiles; the ragged right and bottom strips (if any)
/// are scrambled pixel by pixel.
pub fn patch_shuffle(src: &MaskImage, rng: &mut ChaCha8Rng) -> MaskImage {
    let (w, h) = (src.width, src.height);
    let (tx, ty) = (w / TILE, h / TILE);
    let mut order: Vec<usize> = (0..tx * ty).collect();
    order.shuffle(rng);
    let mut out = src.clone();
    for (dst_tile, &src_tile) in order.iter().enumerate() {
        let (dx, dy) = ((dst_tile % tx) * TILE, (dst_tile / tx) * TILE);
        let (sx, sy) = ((src_tile % tx) * TILE, (src_tile / tx) * TILE);
        for row in 0..TILE {
            for col in 0..TILE {
                let d = (dy + row) * w + dx + col;
                let s = (sy + row) * w + sx + col;
                for c in 0..3 {
                    out.planes[c][d] = src.planes[c][s];
                }
            }
        }
    }
    let ragged: Vec<usize> = (0..w * h).filter(|&i| (i % w) >= tx * TILE || (i / w) >= ty * TILE).collect();
    let mut shuffled = ragged.clone();
    shuffled.shuffle(rng);
    for (&d, &s) in ragged.iter().zip(&shuffled) {
        for c in 0..3 {
            out.planes[c][d] = src.planes[c][s];
        }
    }
    out
}

fn fft2(data: &mut [Complex64], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in data.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col_fft.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// 2-D DFT of a real plane.
pub fn spectrum(plane: &[f64], w: usize, h: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut data, w, h, false);
    data
}

/// Adds the phase of a white-noise image to every channel's spectrum.
///
/// The noise spectrum is Hermitian, so the sum of phases stays odd-symmetric
/// and the inverse transform is real; magnitudes are untouched.
pub fn phase_scramble(src: &MaskImage, rng: &mut ChaCha8Rng) -> MaskImage {
    let (w, h) = (src.width, src.height);
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() - 0.5).collect();
    let noise_spec = spectrum(&noise, w, h);
    let rotation: Vec<Complex64> = noise_spec
        .iter()
        .map(|z| {
            let n = z.norm();
            if n > 0.0 {
                z / n
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
        .collect();
    let scale = 1.0 / (w * h) as f64;
    let planes = std::array::from_fn(|c| {
        let mut freq = spectrum(&src.planes[c], w, h);
        for (z, r) in freq.iter_mut().zip(&rotation) {
            *z *= r;
        }
        fft2(&mut freq, w, h, true);
        freq.iter().map(|z| z.re * scale).collect()
    });
    MaskImage { width: w, height: h, planes }
}
