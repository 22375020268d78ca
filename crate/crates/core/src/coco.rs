//! COCO-format dataset and results files: parsing, validation, serialization.
//!
//! Ground truth lives in the standard `images` / `annotations` / `categories`
//! layout with polygon segmentations; detector outputs use the COCO results
//! array. Two artifact-specific conventions apply throughout:
//!
//! * `category_id` is the FDI tooth code itself, so the category table is
//!   always the same 52 entries;
//! * patient age rides along as an optional integer `age` attribute on each
//!   image record.
//!
//! Serialization is byte-stable: object keys are emitted in struct order
//! (images, annotations, categories; see the field order of each struct) and
//! arrays preserve in-memory order.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dental::{BBox, PolygonMask, Prediction, ToothAnnotation, ToothClass};
use crate::error::{Error, Result};
use crate::raster;
use crate::AnnotatedImage;

/// One image record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Patient age in integer years; not part of stock COCO.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
}

/// One ground-truth annotation. Segmentation is a list of flat
/// `[x1, y1, x2, y2, ...]` polygons, as in stock COCO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default)]
    pub segmentation: Vec<Vec<f64>>,
    #[serde(default)]
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supercategory: Option<String>,
}

/// A COCO-style dataset container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// One entry of a COCO results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: u64,
    pub category_id: u32,
    pub bbox: [f64; 4],
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<Vec<f64>>>,
}

/// The fixed 52-entry category table keyed by FDI code.
pub fn fdi_categories() -> Vec<CocoCategory> {
    ToothClass::all()
        .map(|t| CocoCategory {
            id: u32::from(t.code()),
            name: t.code().to_string(),
            supercategory: Some(
                if t.is_deciduous() {
                    "deciduous"
                } else {
                    "permanent"
                }
                .to_string(),
            ),
        })
        .collect()
}

impl CocoDataset {
    /// Empty dataset carrying the full category table.
    pub fn empty() -> Self {
        Self {
            images: Vec::new(),
            annotations: Vec::new(),
            categories: fdi_categories(),
        }
    }

    /// Check every declared invariant, reporting the first offender.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for img in &self.images {
            if !image_ids.insert(img.id) {
                return Err(Error::Validation(format!("duplicate image id {}", img.id)));
            }
        }
        let category_ids: HashSet<u32> = self.categories.iter().map(|c| c.id).collect();
        for cat in &self.categories {
            if ToothClass::new(u8::try_from(cat.id).unwrap_or(0)).is_err() {
                return Err(Error::Validation(format!(
                    "category {} is not a valid FDI code",
                    cat.id
                )));
            }
        }

        let mut ann_ids = HashSet::new();
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(Error::Validation(format!(
                    "duplicate annotation id {}",
                    ann.id
                )));
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(Error::Validation(format!(
                    "annotation {} references missing image {}",
                    ann.id, ann.image_id
                )));
            }
            if !category_ids.contains(&ann.category_id)
                || ToothClass::new(u8::try_from(ann.category_id).unwrap_or(0)).is_err()
            {
                return Err(Error::Validation(format!(
                    "annotation {} has invalid category {}",
                    ann.id, ann.category_id
                )));
            }
            if ann.segmentation.is_empty() {
                return Err(Error::Validation(format!(
                    "annotation {} has no segmentation polygon",
                    ann.id
                )));
            }
            for poly in &ann.segmentation {
                if poly.len() < 6 || poly.len() % 2 != 0 {
                    return Err(Error::Validation(format!(
                        "annotation {} has a degenerate polygon of {} coordinates",
                        ann.id,
                        poly.len()
                    )));
                }
            }
            let [x, y, w, h] = ann.bbox;
            if BBox::new(x, y, w, h).is_err() {
                return Err(Error::Validation(format!(
                    "annotation {} has an invalid bbox {:?}",
                    ann.id, ann.bbox
                )));
            }
            // bbox must agree with the bounds of the first polygon within 1 px.
            let poly = PolygonMask::from_flat(&ann.segmentation[0])
                .map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))?;
            let tooth = ToothClass::new(ann.category_id as u8).expect("validated above");
            let bbox = BBox::new(x, y, w, h).expect("validated above");
            ToothAnnotation::new(tooth, bbox, poly)
                .map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))?;
        }
        Ok(())
    }

    /// Tooth classes present on a given image.
    pub fn labels_of(&self, image_id: u64) -> Vec<ToothClass> {
        let mut labels: Vec<ToothClass> = self
            .annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .filter_map(|a| ToothClass::new(a.category_id as u8).ok())
            .collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Restrict to a subset of image ids, keeping order and renumbering nothing.
    pub fn subset(&self, keep: &HashSet<u64>) -> CocoDataset {
        CocoDataset {
            images: self
                .images
                .iter()
                .filter(|i| keep.contains(&i.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| keep.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

/// Parse and validate a COCO dataset file.
pub fn parse_dataset(path: &Path) -> Result<CocoDataset> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let dataset: CocoDataset = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    dataset.validate()?;
    Ok(dataset)
}

/// Render a dataset to its canonical JSON text.
pub fn dataset_to_json(d: &CocoDataset) -> String {
    serde_json::to_string_pretty(d).expect("dataset serializes") + "\n"
}

/// Write a dataset to disk in canonical form. Output is byte-stable for
/// identical input.
pub fn serialize_dataset(d: &CocoDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_json(d)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parse and validate a COCO results array into predictions.
pub fn parse_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let records: Vec<PredictionRecord> =
        serde_json::from_str(&text).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            source,
        })?;
    predictions_from_records(&records)
}

/// Validate raw records into prediction values.
pub fn predictions_from_records(records: &[PredictionRecord]) -> Result<Vec<Prediction>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let tooth =
                ToothClass::new(u8::try_from(r.category_id).unwrap_or(0)).map_err(|_| {
                    Error::Validation(format!(
                        "prediction {} has unknown category {}",
                        i, r.category_id
                    ))
                })?;
            if !(0.0..=1.0).contains(&r.score) {
                return Err(Error::Validation(format!(
                    "prediction {} has score {} outside [0,1]",
                    i, r.score
                )));
            }
            let [x, y, w, h] = r.bbox;
            let bbox = BBox::new(x, y, w, h)
                .map_err(|e| Error::Validation(format!("prediction {i}: {e}")))?;
            let mask = match &r.segmentation {
                Some(polys) if !polys.is_empty() => Some(
                    PolygonMask::from_flat(&polys[0])
                        .map_err(|e| Error::Validation(format!("prediction {i}: {e}")))?,
                ),
                _ => None,
            };
            Prediction::new(r.image_id, tooth, bbox, r.score, mask)
        })
        .collect()
}

/// Convert predictions back to serializable records.
pub fn predictions_to_records(preds: &[Prediction]) -> Vec<PredictionRecord> {
    preds
        .iter()
        .map(|p| PredictionRecord {
            image_id: p.image_id,
            category_id: u32::from(p.tooth.code()),
            bbox: [p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h],
            score: p.score,
            segmentation: p.mask.as_ref().map(|m| vec![m.to_flat()]),
        })
        .collect()
}

/// Write predictions as a COCO results array.
pub fn serialize_predictions(preds: &[Prediction], path: &Path) -> Result<()> {
    let records = predictions_to_records(preds);
    let text = serde_json::to_string_pretty(&records).expect("records serialize") + "\n";
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// An in-memory image paired with the file name it is stored under.
#[derive(Debug, Clone)]
pub struct ImageEntry {
    pub image: AnnotatedImage,
    pub file_name: String,
}

/// Load every image of a dataset from `images_dir` into memory, converting
/// annotations to domain values. Multi-polygon segmentations use the first
/// polygon; each such reduction is reported in the returned warning list.
pub fn load_dataset_images(
    d: &CocoDataset,
    images_dir: &Path,
) -> Result<(Vec<ImageEntry>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut entries = Vec::with_capacity(d.images.len());
    for img in &d.images {
        let pixels = raster::load_png(&images_dir.join(&img.file_name))?;
        let mut annotations = Vec::new();
        for ann in d.annotations.iter().filter(|a| a.image_id == img.id) {
            if ann.segmentation.len() > 1 {
                warnings.push(format!(
                    "annotation {}: multi-polygon segmentation, using first polygon only",
                    ann.id
                ));
            }
            annotations.push(annotation_to_domain(ann)?);
        }
        entries.push(ImageEntry {
            image: AnnotatedImage::new(img.id, pixels, img.age, annotations)?,
            file_name: img.file_name.clone(),
        });
    }
    Ok((entries, warnings))
}

/// Convert one COCO annotation to its domain value (first polygon only).
pub fn annotation_to_domain(ann: &CocoAnnotation) -> Result<ToothAnnotation> {
    let tooth = ToothClass::new(u8::try_from(ann.category_id).unwrap_or(0)).map_err(|_| {
        Error::Validation(format!(
            "annotation {} has invalid category {}",
            ann.id, ann.category_id
        ))
    })?;
    let [x, y, w, h] = ann.bbox;
    let bbox = BBox::new(x, y, w, h)
        .map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))?;
    let poly = ann
        .segmentation
        .first()
        .ok_or_else(|| Error::Validation(format!("annotation {} has no polygon", ann.id)))
        .and_then(|p| {
            PolygonMask::from_flat(p)
                .map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))
        })?;
    ToothAnnotation::new(tooth, bbox, poly)
        .map_err(|e| Error::Validation(format!("annotation {}: {e}", ann.id)))
}

/// Build a dataset from in-memory entries. Annotation ids are assigned
/// sequentially from 1 in entry order; areas come from the polygon.
pub fn dataset_from_entries(entries: &[ImageEntry]) -> CocoDataset {
    let mut images = Vec::with_capacity(entries.len());
    let mut annotations = Vec::new();
    let mut next_ann_id = 1u64;
    for entry in entries {
        let img = &entry.image;
        images.push(CocoImage {
            id: img.id,
            file_name: entry.file_name.clone(),
            width: img.pixels.width(),
            height: img.pixels.height(),
            age: img.patient_age,
        });
        for ann in &img.annotations {
            annotations.push(CocoAnnotation {
                id: next_ann_id,
                image_id: img.id,
                category_id: u32::from(ann.tooth.code()),
                bbox: [ann.bbox.x, ann.bbox.y, ann.bbox.w, ann.bbox.h],
                segmentation: vec![ann.mask.to_flat()],
                area: ann.mask.area(),
            });
            next_ann_id += 1;
        }
    }
    CocoDataset {
        images,
        annotations,
        categories: fdi_categories(),
    }
}

/// Write dataset JSON plus one PNG per entry into `out_dir`.
pub fn write_dataset_with_images(
    entries: &[ImageEntry],
    out_dir: &Path,
    json_name: &str,
) -> Result<CocoDataset> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let dataset = dataset_from_entries(entries);
    for entry in entries {
        raster::save_png(&entry.image.pixels, &out_dir.join(&entry.file_name))?;
    }
    serialize_dataset(&dataset, &out_dir.join(json_name))?;
    Ok(dataset)
}
