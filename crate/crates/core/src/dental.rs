//! Core domain vocabulary: FDI tooth classes, geometry, annotations, predictions.
//!
//! Tooth classes follow the two-digit ISO 3950 / FDI notation: the first digit
//! is the quadrant (1-4 permanent, 5-8 deciduous), the second the position
//! within the quadrant (1-8 permanent, 1-5 deciduous). Exactly 52 codes are
//! valid: 32 permanent and 20 deciduous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// A validated two-digit FDI tooth code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ToothClass(u8);

impl ToothClass {
    /// Validate and wrap a raw FDI code.
    pub fn new(code: u8) -> Result<Self> {
        let quadrant = code / 10;
        let position = code % 10;
        let valid = match quadrant {
            1..=4 => (1..=8).contains(&position),
            5..=8 => (1..=5).contains(&position),
            _ => false,
        };
        if valid {
            Ok(Self(code))
        } else {
            Err(Error::InvalidToothCode(i64::from(code)))
        }
    }

    pub fn code(self) -> u8 {
        self.0
    }

    pub fn quadrant(self) -> u8 {
        self.0 / 10
    }

    pub fn position(self) -> u8 {
        self.0 % 10
    }

    /// Deciduous (primary) teeth occupy quadrants 5-8.
    pub fn is_deciduous(self) -> bool {
        self.quadrant() >= 5
    }

    /// All 52 valid codes in ascending order.
    pub fn all() -> impl Iterator<Item = ToothClass> {
        (11u8..=85).filter_map(|c| ToothClass::new(c).ok())
    }

    /// Index of this class in the ascending enumeration of all 52 codes.
    pub fn index(self) -> usize {
        let q = usize::from(self.quadrant()) - 1;
        let p = usize::from(self.position()) - 1;
        if q < 4 {
            q * 8 + p
        } else {
            32 + (q - 4) * 5 + p
        }
    }

    /// Inverse of [`ToothClass::index`].
    pub fn from_index(index: usize) -> Option<ToothClass> {
        if index < 32 {
            ToothClass::new((index / 8 * 10 + index % 8 + 11) as u8).ok()
        } else if index < 52 {
            let i = index - 32;
            ToothClass::new((50 + i / 5 * 10 + i % 5 + 1) as u8).ok()
        } else {
            None
        }
    }
}

impl TryFrom<u8> for ToothClass {
    type Error = Error;
    fn try_from(code: u8) -> Result<Self> {
        ToothClass::new(code)
    }
}

impl From<ToothClass> for u8 {
    fn from(t: ToothClass) -> u8 {
        t.0
    }
}

impl std::fmt::Display for ToothClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Flip the quadrant within its arch pair (1<->2, 3<->4, 5<->6, 7<->8),
/// preserving position and dentition. An involution on the 52 codes.
pub fn mirror_class(t: ToothClass) -> ToothClass {
    let q = t.quadrant();
    let mirrored_q = if q % 2 == 1 { q + 1 } else { q - 1 };
    ToothClass::new(mirrored_q * 10 + t.position()).expect("mirrored code stays valid")
}

/// The same tooth position in the other dentition, where one exists.
///
/// Deciduous codes map to their permanent successor (code - 40); permanent
/// codes at positions 1-5 map to the deciduous predecessor (code + 40);
/// permanent molars at positions 6-8 have no counterpart.
pub fn dentition_counterpart(t: ToothClass) -> Option<ToothClass> {
    if t.is_deciduous() {
        Some(ToothClass::new(t.code() - 40).expect("positions 1-5 exist in both dentitions"))
    } else if t.position() <= 5 {
        Some(ToothClass::new(t.code() + 40).expect("positions 1-5 exist in both dentitions"))
    } else {
        None
    }
}

/// Axis-aligned box in pixel coordinates, top-left origin, y down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::InvalidBBox(format!(
                "non-finite coordinates ({x},{y},{w},{h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBBox(format!("non-positive extent ({w}x{h})")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Smallest box containing both.
    pub fn union_bounds(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    /// Intersection area, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Total order used for deterministic tie-breaking: (x, y, w, h) lexicographic.
    pub fn lex_cmp(&self, other: &BBox) -> std::cmp::Ordering {
        [self.x, self.y, self.w, self.h]
            .into_iter()
            .zip([other.x, other.y, other.w, other.h])
            .map(|(a, b)| a.total_cmp(&b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// Polygon contour as an ordered vertex list in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonMask {
    pub vertices: Vec<(f64, f64)>,
}

impl PolygonMask {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned bounds of the vertices.
    pub fn bounds(&self) -> BBox {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for &(x, y) in &self.vertices {
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        BBox {
            x: min_x,
            y: min_y,
            w: max_x - min_x,
            h: max_y - min_y,
        }
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (x1, y1) = self.vertices[i];
            let (x2, y2) = self.vertices[(i + 1) % n];
            acc += x1 * y2 - x2 * y1;
        }
        acc.abs() / 2.0
    }

    /// Flat `[x1, y1, x2, y2, ...]` coordinate list (COCO layout).
    pub fn to_flat(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|&(x, y)| [x, y]).collect()
    }

    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(2) {
            return Err(Error::InvalidPolygon(format!(
                "odd coordinate count {}",
                coords.len()
            )));
        }
        PolygonMask::new(coords.chunks_exact(2).map(|c| (c[0], c[1])).collect())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> PolygonMask {
        PolygonMask {
            vertices: self
                .vertices
                .iter()
                .map(|&(x, y)| (x + dx, y + dy))
                .collect(),
        }
    }
}

/// One labelled tooth: class, box, and contour.
///
/// The box must equal the axis-aligned bounds of the contour within 1 px per
/// edge; both are stored because COCO files carry both.
#[derive(Debug, Clone, PartialEq)]
pub struct ToothAnnotation {
    pub tooth: ToothClass,
    pub bbox: BBox,
    pub mask: PolygonMask,
}

impl ToothAnnotation {
    pub fn new(tooth: ToothClass, bbox: BBox, mask: PolygonMask) -> Result<Self> {
        let ann = Self { tooth, bbox, mask };
        ann.check_consistency()?;
        Ok(ann)
    }

    /// Build with the bbox derived from the polygon bounds.
    pub fn from_polygon(tooth: ToothClass, mask: PolygonMask) -> Result<Self> {
        let b = mask.bounds();
        let bbox = BBox::new(b.x, b.y, b.w, b.h)?;
        Ok(Self { tooth, bbox, mask })
    }

    /// Verify the stored bbox matches the polygon bounds within 1 px per edge.
    pub fn check_consistency(&self) -> Result<()> {
        let b = self.mask.bounds();
        let edges = [
            (self.bbox.x, b.x),
            (self.bbox.y, b.y),
            (self.bbox.right(), b.right()),
            (self.bbox.bottom(), b.bottom()),
        ];
        for (stored, derived) in edges {
            if (stored - derived).abs() > 1.0 {
                return Err(Error::Validation(format!(
                    "bbox edge {stored} deviates from polygon bounds {derived} by more than 1 px (tooth {})",
                    self.tooth
                )));
            }
        }
        Ok(())
    }
}

/// A grayscale radiograph with its annotations and optional patient age.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: u64,
    pub pixels: GrayImage,
    pub patient_age: Option<u32>,
    pub annotations: Vec<ToothAnnotation>,
}

impl AnnotatedImage {
    /// Build and enforce that each tooth code appears at most once.
    pub fn new(
        id: u64,
        pixels: GrayImage,
        patient_age: Option<u32>,
        annotations: Vec<ToothAnnotation>,
    ) -> Result<Self> {
        let mut seen = [false; 52];
        for ann in &annotations {
            let idx = ann.tooth.index();
            if seen[idx] {
                return Err(Error::Validation(format!(
                    "image {id} annotates tooth {} more than once",
                    ann.tooth
                )));
            }
            seen[idx] = true;
        }
        Ok(Self {
            id,
            pixels,
            patient_age,
            annotations,
        })
    }

    pub fn has_deciduous(&self) -> bool {
        self.annotations.iter().any(|a| a.tooth.is_deciduous())
    }
}

/// Detector output for one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: u64,
    pub tooth: ToothClass,
    pub bbox: BBox,
    pub score: f64,
    pub mask: Option<PolygonMask>,
}

impl Prediction {
    pub fn new(
        image_id: u64,
        tooth: ToothClass,
        bbox: BBox,
        score: f64,
        mask: Option<PolygonMask>,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Validation(format!(
                "prediction score {score} outside [0,1]"
            )));
        }
        Ok(Self {
            image_id,
            tooth,
            bbox,
            score,
            mask,
        })
    }
}
