//! Synthesis of annotated panoramics: teeth cut from a training set are
//! pasted into externally produced tooth-free panoramics at their original
//! coordinates, and ground truth is emitted alongside.
//!
//! Selection prefers age matches (patient age of the spec vs. source age of
//! the empty or bank entry) and falls back to a uniform pick; teeth are
//! composited in ascending FDI order so overlap overwrites are deterministic.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coco::ImageEntry;
use crate::dental::{AnnotatedImage, BBox, PolygonMask, ToothAnnotation, ToothClass};
use crate::error::{Error, Result};
use crate::imgproc::{clip_polygon_to_rect, composite_tooth, rasterize_polygon};
use crate::matching::iou;
use crate::raster::{self, BitMask, GrayImage};
use crate::seeding::derive_rng;

/// One tooth cut out of a source panoramic: the patch under its bbox, the
/// patch-local rasterized contour, and where it came from.
#[derive(Debug, Clone)]
pub struct ToothBankEntry {
    pub tooth: ToothClass,
    pub pixels: GrayImage,
    pub mask: BitMask,
    /// Contour in patch-local coordinates.
    pub polygon: PolygonMask,
    /// Integer-aligned bbox in the source panoramic (placement target).
    pub source_bbox: BBox,
    pub source_age: Option<u32>,
    pub source_image_id: u64,
}

/// A tooth-free panoramic produced upstream (inpainting is out of scope
/// here; empties arrive as plain image files).
#[derive(Debug, Clone)]
pub struct EmptyPanoramic {
    pub id: u64,
    pub pixels: GrayImage,
    pub age: Option<u32>,
}

/// Which teeth a generated panoramic should contain, and for what age.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub age: u32,
    pub teeth: BTreeSet<ToothClass>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Age matches are |age difference| <= this many years (0 = exact).
    pub age_tolerance_years: u32,
    /// Skip a tooth whose bbox IoU with an already placed tooth exceeds this
    /// threshold. Off by default; overlaps are normally allowed and reported.
    pub overlap_rejection_iou: Option<f64>,
}

/// Extract one bank entry per annotation. Annotations whose contour covers no
/// pixel are skipped and reported.
pub fn build_tooth_bank(images: &[AnnotatedImage]) -> Result<(Vec<ToothBankEntry>, Vec<String>)> {
    let mut bank = Vec::new();
    let mut warnings = Vec::new();
    for image in images {
        let (iw, ih) = (image.pixels.width(), image.pixels.height());
        for ann in &image.annotations {
            let x0 = (ann.bbox.x.floor().max(0.0) as u32).min(iw);
            let y0 = (ann.bbox.y.floor().max(0.0) as u32).min(ih);
            let x1 = (ann.bbox.right().ceil().min(f64::from(iw)) as u32).min(iw);
            let y1 = (ann.bbox.bottom().ceil().min(f64::from(ih)) as u32).min(ih);
            if x1 <= x0 || y1 <= y0 {
                warnings.push(format!(
                    "image {}: tooth {} bbox outside the image, skipped",
                    image.id, ann.tooth
                ));
                continue;
            }
            let (w, h) = (x1 - x0, y1 - y0);
            let local = ann.mask.translate(-f64::from(x0), -f64::from(y0));
            let mask = match rasterize_polygon(&local, w, h) {
                Ok(mask) => mask,
                Err(Error::DegenerateMask) => {
                    warnings.push(format!(
                        "image {}: tooth {} has a degenerate contour, skipped",
                        image.id, ann.tooth
                    ));
                    continue;
                }
                Err(e) => return Err(e),
            };
            bank.push(ToothBankEntry {
                tooth: ann.tooth,
                pixels: image.pixels.crop(x0, y0, w, h)?,
                mask,
                polygon: local,
                source_bbox: BBox::new(f64::from(x0), f64::from(y0), f64::from(w), f64::from(h))?,
                source_age: image.patient_age,
                source_image_id: image.id,
            });
        }
    }
    Ok((bank, warnings))
}

/// How one generated image came to be.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub image_id: u64,
    pub empty_id: u64,
    pub spec_age: u32,
    /// (tooth, bank index, bank source image) per placed tooth.
    pub placed: Vec<(ToothClass, usize, u64)>,
    pub skipped: Vec<String>,
}

fn age_matches(candidate: Option<u32>, wanted: u32, tolerance: u32) -> bool {
    candidate.is_some_and(|age| age.abs_diff(wanted) <= tolerance)
}

fn pick<'a, T>(pool: &'a [T], rng: &mut ChaCha8Rng) -> &'a T {
    &pool[rng.gen_range(0..pool.len())]
}

/// Generate one panoramic for a patient spec.
///
/// The empty is drawn uniformly among age matches (all empties when none
/// match); each requested tooth is drawn uniformly among age-matching bank
/// entries of that class, then among all entries of that class, and is
/// skipped with a warning when the class is absent from the bank.
pub fn synthesize_panoramic(
    spec: &PatientSpec,
    empties: &[EmptyPanoramic],
    bank: &[ToothBankEntry],
    image_id: u64,
    rng: &mut ChaCha8Rng,
    opts: &SynthOptions,
) -> Result<(AnnotatedImage, ProvenanceRecord)> {
    if empties.is_empty() {
        return Err(Error::NoEmptyPanoramics);
    }
    let mut age_pool: Vec<&EmptyPanoramic> = empties
        .iter()
        .filter(|e| age_matches(e.age, spec.age, opts.age_tolerance_years))
        .collect();
    if age_pool.is_empty() {
        age_pool = empties.iter().collect();
    }
    let empty = *pick(&age_pool, rng);
    let mut pixels = empty.pixels.clone();
    let (cw, ch) = (f64::from(pixels.width()), f64::from(pixels.height()));

    let mut annotations = Vec::new();
    let mut placed = Vec::new();
    let mut skipped = Vec::new();
    for &tooth in &spec.teeth {
        let class_pool: Vec<usize> = bank
            .iter()
            .enumerate()
            .filter(|(_, e)| e.tooth == tooth)
            .map(|(i, _)| i)
            .collect();
        if class_pool.is_empty() {
            skipped.push(format!("tooth {tooth}: no bank entry for this class"));
            continue;
        }
        let aged_pool: Vec<usize> = class_pool
            .iter()
            .copied()
            .filter(|&i| age_matches(bank[i].source_age, spec.age, opts.age_tolerance_years))
            .collect();
        let idx = *pick(
            if aged_pool.is_empty() {
                &class_pool
            } else {
                &aged_pool
            },
            rng,
        );
        let entry = &bank[idx];

        if let Some(threshold) = opts.overlap_rejection_iou {
            let collides = annotations
                .iter()
                .any(|a: &ToothAnnotation| iou(&a.bbox, &entry.source_bbox) > threshold);
            if collides {
                skipped.push(format!(
                    "tooth {tooth}: placement overlaps an already placed tooth"
                ));
                continue;
            }
        }

        composite_tooth(&mut pixels, &entry.pixels, &entry.mask, &entry.source_bbox)?;
        let poly = entry
            .polygon
            .translate(entry.source_bbox.x, entry.source_bbox.y);
        let b = poly.bounds();
        let inside = b.x >= 0.0 && b.y >= 0.0 && b.right() <= cw && b.bottom() <= ch;
        let ann = if inside {
            ToothAnnotation::new(tooth, entry.source_bbox, poly)?
        } else {
            match clip_polygon_to_rect(&poly, cw, ch) {
                Some(clipped) => ToothAnnotation::from_polygon(tooth, clipped)?,
                None => {
                    skipped.push(format!("tooth {tooth}: placement falls outside the canvas"));
                    continue;
                }
            }
        };
        annotations.push(ann);
        placed.push((tooth, idx, entry.source_image_id));
    }

    let image = AnnotatedImage::new(image_id, pixels, Some(spec.age), annotations)?;
    Ok((
        image,
        ProvenanceRecord {
            image_id,
            empty_id: empty.id,
            spec_age: spec.age,
            placed,
            skipped,
        },
    ))
}

/// A generated batch plus its provenance and overlap accounting.
#[derive(Debug, Clone)]
pub struct SynthBatch {
    pub entries: Vec<ImageEntry>,
    pub provenance: Vec<ProvenanceRecord>,
    /// Annotation pairs with bbox IoU > 0, over all generated images.
    pub overlap_pairs: usize,
    /// (spec index, error) for specs that failed outright.
    pub errors: Vec<(usize, String)>,
}

/// Count annotation pairs whose bboxes intersect.
pub fn count_overlapping_pairs(image: &AnnotatedImage) -> usize {
    let anns = &image.annotations;
    let mut pairs = 0;
    for i in 0..anns.len() {
        for j in i + 1..anns.len() {
            if iou(&anns[i].bbox, &anns[j].bbox) > 0.0 {
                pairs += 1;
            }
        }
    }
    pairs
}

/// Generate one panoramic per spec. Image ids are sequential from 1 and file
/// names `synth_<index>.png`. Per-spec RNG streams derive from the master
/// seed, so batch output is identical under any parallelism.
pub fn synthesize_batch(
    specs: &[PatientSpec],
    empties: &[EmptyPanoramic],
    bank: &[ToothBankEntry],
    seed: u64,
    opts: &SynthOptions,
) -> Result<SynthBatch> {
    if empties.is_empty() {
        return Err(Error::NoEmptyPanoramics);
    }
    let results: Vec<Result<(AnnotatedImage, ProvenanceRecord)>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut rng = derive_rng(seed, i as u64, 0);
            synthesize_panoramic(spec, empties, bank, i as u64 + 1, &mut rng, opts)
        })
        .collect();

    let mut entries = Vec::new();
    let mut provenance = Vec::new();
    let mut errors = Vec::new();
    let mut overlap_pairs = 0;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok((image, record)) => {
                overlap_pairs += count_overlapping_pairs(&image);
                entries.push(ImageEntry {
                    image,
                    file_name: format!("synth_{:04}.png", i + 1),
                });
                provenance.push(record);
            }
            Err(e) => errors.push((i, e.to_string())),
        }
    }
    Ok(SynthBatch {
        entries,
        provenance,
        overlap_pairs,
        errors,
    })
}

// Bank directory layout: bank.json plus one patch and mask PNG per entry.

#[derive(Debug, Serialize, Deserialize)]
struct BankEntryRecord {
    tooth: ToothClass,
    source_bbox: [f64; 4],
    source_age: Option<u32>,
    source_image_id: u64,
    polygon: Vec<f64>,
    patch_file: String,
    mask_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankFile {
    entries: Vec<BankEntryRecord>,
}

/// Persist a tooth bank as `bank.json` plus patch/mask PNGs in `dir`.
pub fn save_tooth_bank(bank: &[ToothBankEntry], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut records = Vec::with_capacity(bank.len());
    for (i, entry) in bank.iter().enumerate() {
        let patch_file = format!("patch_{i:05}.png");
        let mask_file = format!("mask_{i:05}.png");
        raster::save_png(&entry.pixels, &dir.join(&patch_file))?;
        let mask_img = GrayImage::from_raw(
            entry.mask.width(),
            entry.mask.height(),
            (0..entry.mask.height())
                .flat_map(|y| (0..entry.mask.width()).map(move |x| (x, y)))
                .map(|(x, y)| if entry.mask.get(x, y) { 255 } else { 0 })
                .collect(),
        )?;
        raster::save_png(&mask_img, &dir.join(&mask_file))?;
        records.push(BankEntryRecord {
            tooth: entry.tooth,
            source_bbox: [
                entry.source_bbox.x,
                entry.source_bbox.y,
                entry.source_bbox.w,
                entry.source_bbox.h,
            ],
            source_age: entry.source_age,
            source_image_id: entry.source_image_id,
            polygon: entry.polygon.to_flat(),
            patch_file,
            mask_file,
        });
    }
    let text = serde_json::to_string_pretty(&BankFile { entries: records })
        .expect("bank serializes")
        + "\n";
    fs::write(dir.join("bank.json"), text).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// Load a tooth bank saved by [`save_tooth_bank`].
pub fn load_tooth_bank(dir: &Path) -> Result<Vec<ToothBankEntry>> {
    let json_path = dir.join("bank.json");
    let text = fs::read_to_string(&json_path).map_err(|source| Error::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let file: BankFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: json_path.display().to_string(),
        source,
    })?;
    file.entries
        .into_iter()
        .map(|r| {
            let pixels = raster::load_png(&dir.join(&r.patch_file))?;
            let mask_img = raster::load_png(&dir.join(&r.mask_file))?;
            let mask = BitMask::from_raw(
                mask_img.width(),
                mask_img.height(),
                mask_img.data().iter().map(|&v| u8::from(v != 0)).collect(),
            )?;
            let [x, y, w, h] = r.source_bbox;
            Ok(ToothBankEntry {
                tooth: r.tooth,
                pixels,
                mask,
                polygon: PolygonMask::from_flat(&r.polygon)?,
                source_bbox: BBox::new(x, y, w, h)?,
                source_age: r.source_age,
                source_image_id: r.source_image_id,
            })
        })
        .collect()
}
