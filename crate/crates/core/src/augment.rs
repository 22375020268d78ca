//! Annotation-aware geometric and photometric augmentation.
//!
//! Two transform sets are supported: rotation + noise + contrast, and the
//! same plus translation. Copies per source image follow either a uniform
//! count or a deciduous-priority count (more copies for images containing
//! deciduous teeth, which are underrepresented).
//!
//! Transform order is fixed as contrast -> noise -> rotation -> translation,
//! photometric first so noise statistics are not warped by resampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::ImageEntry;
use crate::dental::{AnnotatedImage, ToothAnnotation};
use crate::error::{Error, Result};
use crate::imgproc::{clip_polygon_to_rect, round_half_up, warp_image, AffineMap, Border};
use crate::raster::GrayImage;
use crate::seeding::derive_rng;

/// How many copies each source image receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentStrategy {
    /// The same copy count for every image.
    Uniform,
    /// More copies for images containing a deciduous tooth.
    DeciduousPriority,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotation_range_deg: f64,
    pub translation_range_frac: f64,
    pub enable_translation: bool,
    pub noise_sigma: f64,
    pub contrast_range: (f64, f64),
    pub strategy: AugmentStrategy,
    pub copies_uniform: u32,
    pub copies_deciduous: u32,
    pub copies_other: u32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_range_deg: 10.0,
            translation_range_frac: 0.05,
            enable_translation: false,
            noise_sigma: 5.0,
            contrast_range: (0.8, 1.25),
            strategy: AugmentStrategy::Uniform,
            copies_uniform: 5,
            copies_deciduous: 5,
            copies_other: 2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rotation_range_deg < 0.0 || self.rotation_range_deg > 45.0 {
            return Err(Error::InvalidAugmentParam(format!(
                "rotation range {} outside [0, 45]",
                self.rotation_range_deg
            )));
        }
        if !(0.0..=0.5).contains(&self.translation_range_frac) {
            return Err(Error::InvalidAugmentParam(format!(
                "translation range {} outside [0, 0.5]",
                self.translation_range_frac
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidAugmentParam("negative noise sigma".into()));
        }
        let (lo, hi) = self.contrast_range;
        if lo <= 0.0 || hi < lo {
            return Err(Error::InvalidAugmentParam(format!(
                "contrast range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }

    fn copies_for(&self, image: &AnnotatedImage) -> u32 {
        match self.strategy {
            AugmentStrategy::Uniform => self.copies_uniform,
            AugmentStrategy::DeciduousPriority => {
                if image.has_deciduous() {
                    self.copies_deciduous
                } else {
                    self.copies_other
                }
            }
        }
    }
}

/// Remap annotations through `map`, clipping to the canvas. Annotations whose
/// polygon leaves the canvas entirely are dropped and reported.
fn map_annotations(
    anns: &[ToothAnnotation],
    map: &AffineMap,
    width: u32,
    height: u32,
    warnings: &mut Vec<String>,
    context: &str,
) -> Result<Vec<ToothAnnotation>> {
    let (w, h) = (f64::from(width), f64::from(height));
    let mut out = Vec::with_capacity(anns.len());
    for ann in anns {
        let poly = map.map_polygon(&ann.mask);
        match clip_polygon_to_rect(&poly, w, h) {
            Some(clipped) => out.push(ToothAnnotation::from_polygon(ann.tooth, clipped)?),
            None => warnings.push(format!(
                "tooth {} dropped: left canvas during {context}",
                ann.tooth
            )),
        }
    }
    Ok(out)
}

/// Rotate image and annotations by `theta_deg` about the image center.
/// Polygon vertices are mapped exactly; the raster is resampled bilinearly
/// with zero padding on the unchanged canvas.
pub fn rotate_with_annotations(
    img: &GrayImage,
    anns: &[ToothAnnotation],
    theta_deg: f64,
) -> Result<(GrayImage, Vec<ToothAnnotation>, Vec<String>)> {
    if theta_deg.abs() > 45.0 {
        return Err(Error::InvalidAugmentParam(format!(
            "rotation {theta_deg} exceeds the 45 degree sanity bound"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let map = AffineMap::rotation_about_deg(theta_deg, f64::from(w) / 2.0, f64::from(h) / 2.0);
    let rotated = warp_image(img, &map, w, h, Border::Constant(0))?;
    let mut warnings = Vec::new();
    let mapped = map_annotations(anns, &map, w, h, &mut warnings, "rotation")?;
    Ok((rotated, mapped, warnings))
}

/// Shift by (dx_frac * W, dy_frac * H) rounded to whole pixels, filling the
/// vacated area with zero.
pub fn translate_with_annotations(
    img: &GrayImage,
    anns: &[ToothAnnotation],
    dx_frac: f64,
    dy_frac: f64,
) -> Result<(GrayImage, Vec<ToothAnnotation>, Vec<String>)> {
    if dx_frac.abs() > 0.5 || dy_frac.abs() > 0.5 {
        return Err(Error::InvalidAugmentParam(format!(
            "translation ({dx_frac}, {dy_frac}) exceeds half the image"
        )));
    }
    let (w, h) = (img.width(), img.height());
    let dx = round_half_up(dx_frac * f64::from(w)) as i64;
    let dy = round_half_up(dy_frac * f64::from(h)) as i64;
    let mut shifted = GrayImage::filled(w, h, 0);
    for y in 0..i64::from(h) {
        let sy = y - dy;
        if sy < 0 || sy >= i64::from(h) {
            continue;
        }
        for x in 0..i64::from(w) {
            let sx = x - dx;
            if sx < 0 || sx >= i64::from(w) {
                continue;
            }
            shifted.set(x as u32, y as u32, img.get(sx as u32, sy as u32));
        }
    }
    let map = AffineMap::translation(dx as f64, dy as f64);
    let mut warnings = Vec::new();
    let mapped = map_annotations(anns, &map, w, h, &mut warnings, "translation")?;
    Ok((shifted, mapped, warnings))
}

/// Per-pixel independent Gaussian perturbation clamped to [0, 255].
pub fn add_gaussian_noise(img: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    let mut rng = derive_rng(seed, 0, 0);
    add_gaussian_noise_with_rng(img, sigma, &mut rng)
}

pub fn add_gaussian_noise_with_rng(
    img: &GrayImage,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GrayImage> {
    if sigma < 0.0 {
        return Err(Error::InvalidAugmentParam("negative noise sigma".into()));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidAugmentParam(format!("noise sigma: {e}")))?;
    let data = img
        .data()
        .iter()
        .map(|&v| round_half_up(f64::from(v) + normal.sample(rng)).clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

/// Contrast about mid-gray: v' = clamp(round(128 + gain * (v - 128))).
pub fn adjust_contrast(img: &GrayImage, gain: f64) -> Result<GrayImage> {
    if gain <= 0.0 {
        return Err(Error::InvalidAugmentParam(format!(
            "contrast gain {gain} must be positive"
        )));
    }
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = round_half_up(128.0 + gain * (v as f64 - 128.0)).clamp(0.0, 255.0) as u8;
    }
    let data = img.data().iter().map(|&v| lut[v as usize]).collect();
    GrayImage::from_raw(img.width(), img.height(), data)
}

/// Parameters drawn for one augmented copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawnParams {
    pub contrast_gain: f64,
    pub rotation_deg: f64,
    pub translation_frac: Option<(f64, f64)>,
}

fn draw_params(cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> DrawnParams {
    let (lo, hi) = cfg.contrast_range;
    let contrast_gain = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let rotation_deg = if cfg.rotation_range_deg == 0.0 {
        0.0
    } else {
        rng.gen_range(-cfg.rotation_range_deg..cfg.rotation_range_deg)
    };
    let translation_frac = if cfg.enable_translation {
        let t = cfg.translation_range_frac;
        if t == 0.0 {
            Some((0.0, 0.0))
        } else {
            Some((rng.gen_range(-t..t), rng.gen_range(-t..t)))
        }
    } else {
        None
    };
    DrawnParams {
        contrast_gain,
        rotation_deg,
        translation_frac,
    }
}

/// One augmented copy of an image under already-drawn parameters.
pub fn augment_image(
    image: &AnnotatedImage,
    params: &DrawnParams,
    new_id: u64,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(AnnotatedImage, Vec<String>)> {
    let mut pixels = adjust_contrast(&image.pixels, params.contrast_gain)?;
    pixels = add_gaussian_noise_with_rng(&pixels, cfg.noise_sigma, rng)?;
    let (rotated, anns, mut warnings) =
        rotate_with_annotations(&pixels, &image.annotations, params.rotation_deg)?;
    let (pixels, anns) = match params.translation_frac {
        Some((dx, dy)) => {
            let (shifted, anns, more) = translate_with_annotations(&rotated, &anns, dx, dy)?;
            warnings.extend(more);
            (shifted, anns)
        }
        None => (rotated, anns),
    };
    Ok((
        AnnotatedImage::new(new_id, pixels, image.patient_age, anns)?,
        warnings,
    ))
}

/// Result of augmenting a dataset: the input entries followed by the copies.
#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub entries: Vec<ImageEntry>,
    pub new_images: usize,
    pub params: Vec<(u64, DrawnParams)>,
    pub warnings: Vec<String>,
}

fn file_stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(stem, _)| stem)
}

/// Augment every image per the configured strategy. Copies get fresh ids
/// above the existing maximum and file names suffixed `_aug<k>`. Per-copy RNG
/// streams derive from (seed, source id, copy), so the outcome is identical
/// whether copies run serially or in parallel.
pub fn augment_dataset(entries: &[ImageEntry], cfg: &AugmentConfig) -> Result<AugmentOutcome> {
    cfg.validate()?;
    let max_id = entries.iter().map(|e| e.image.id).max().unwrap_or(0);

    struct Job<'a> {
        entry: &'a ImageEntry,
        copy: u32,
        new_id: u64,
    }
    let mut jobs = Vec::new();
    let mut next_id = max_id + 1;
    for entry in entries {
        for copy in 0..cfg.copies_for(&entry.image) {
            jobs.push(Job {
                entry,
                copy,
                new_id: next_id,
            });
            next_id += 1;
        }
    }

    let results: Vec<Result<(ImageEntry, DrawnParams, Vec<String>)>> = jobs
        .par_iter()
        .map(|job| {
            let mut rng = derive_rng(cfg.seed, job.entry.image.id, u64::from(job.copy));
            let params = draw_params(cfg, &mut rng);
            let (image, warnings) =
                augment_image(&job.entry.image, &params, job.new_id, cfg, &mut rng)?;
            let file_name = format!("{}_aug{}.png", file_stem(&job.entry.file_name), job.copy);
            Ok((ImageEntry { image, file_name }, params, warnings))
        })
        .collect();

    let mut out = entries.to_vec();
    let mut params = Vec::new();
    let mut warnings = Vec::new();
    let mut new_images = 0usize;
    for r in results {
        let (entry, p, w) = r?;
        params.push((entry.image.id, p));
        warnings.extend(w);
        out.push(entry);
        new_images += 1;
    }
    Ok(AugmentOutcome {
        entries: out,
        new_images,
        params,
        warnings,
    })
}
