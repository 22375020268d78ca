//! Rule-based correction of detector output: quadrant-consistent class
//! correction from the bbox center, then duplicate-class suppression.
//!
//! The oral cavity splits into four sections at a vertical midline and the
//! occlusal line. A prediction whose class disagrees with the section of its
//! box center gets its quadrant digit rewritten (dentition preserved); then,
//! per image and class, only the highest-confidence prediction survives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dental::{BBox, Prediction, ToothClass};
use crate::error::{Error, Result};

/// Vertical and occlusal split lines, globally and per image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionGeometry {
    pub x_mid: f64,
    pub y_mid: f64,
    /// Centers within this distance of either midline are left uncorrected.
    pub dead_zone: f64,
    /// Per-image midline overrides.
    #[serde(default)]
    pub overrides: BTreeMap<u64, (f64, f64)>,
}

impl Default for SectionGeometry {
    fn default() -> Self {
        Self {
            x_mid: 512.0,
            y_mid: 512.0,
            dead_zone: 0.0,
            overrides: BTreeMap::new(),
        }
    }
}

impl SectionGeometry {
    pub fn validate(&self) -> Result<()> {
        for (x, y) in std::iter::once(&(self.x_mid, self.y_mid)).chain(self.overrides.values()) {
            if !(x.is_finite() && y.is_finite() && *x > 0.0 && *y > 0.0) {
                return Err(Error::InvalidSectionGeometry(format!(
                    "midlines ({x}, {y}) must be positive"
                )));
            }
        }
        if self.dead_zone < 0.0 {
            return Err(Error::InvalidSectionGeometry(
                "dead zone must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn midlines_for(&self, image_id: u64) -> (f64, f64) {
        self.overrides
            .get(&image_id)
            .copied()
            .unwrap_or((self.x_mid, self.y_mid))
    }
}

/// One of the four oral-cavity sections, in viewer orientation:
/// 1 upper-left, 2 upper-right, 3 lower-right, 4 lower-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionId(u8);

impl SectionId {
    pub fn value(self) -> u8 {
        self.0
    }

    /// FDI quadrant shown in this section for the given dentition.
    pub fn quadrant(self, deciduous: bool) -> u8 {
        if deciduous {
            self.0 + 4
        } else {
            self.0
        }
    }
}

/// Section of a box center. Centers exactly on a midline count as the
/// left/upper side.
pub fn section_of(bbox: &BBox, geo: &SectionGeometry, image_id: u64) -> SectionId {
    let (x_mid, y_mid) = geo.midlines_for(image_id);
    let (cx, cy) = bbox.center();
    let left = cx <= x_mid;
    let upper = cy <= y_mid;
    SectionId(match (upper, left) {
        (true, true) => 1,
        (true, false) => 2,
        (false, false) => 3,
        (false, true) => 4,
    })
}

/// Rewrite the quadrant digit to match the section of the box center,
/// preserving the position digit and dentition. Geometry, score, and mask are
/// untouched. Centers within the dead zone of a midline are left alone.
pub fn quadrant_correct(p: &Prediction, geo: &SectionGeometry) -> Prediction {
    let (x_mid, y_mid) = geo.midlines_for(p.image_id);
    let (cx, cy) = p.bbox.center();
    if geo.dead_zone > 0.0
        && ((cx - x_mid).abs() <= geo.dead_zone || (cy - y_mid).abs() <= geo.dead_zone)
    {
        return p.clone();
    }
    let section = section_of(&p.bbox, geo, p.image_id);
    let quadrant = section.quadrant(p.tooth.is_deciduous());
    let corrected = ToothClass::new(quadrant * 10 + p.tooth.position())
        .expect("section quadrant plus existing position is a valid code");
    Prediction {
        tooth: corrected,
        ..p.clone()
    }
}

/// For each (image, class) group, keep only the best prediction: highest
/// score, then larger box area, then lexicographically smaller box. The
/// relative order of survivors is preserved.
pub fn suppress_duplicates(preds: &[Prediction]) -> (Vec<Prediction>, Vec<usize>) {
    let mut best: BTreeMap<(u64, u8), usize> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        let key = (p.image_id, p.tooth.code());
        match best.get(&key) {
            None => {
                best.insert(key, i);
            }
            Some(&j) => {
                let q = &preds[j];
                let wins = p.score > q.score
                    || (p.score == q.score
                        && (p.bbox.area() > q.bbox.area()
                            || (p.bbox.area() == q.bbox.area()
                                && p.bbox.lex_cmp(&q.bbox).is_lt())));
                if wins {
                    best.insert(key, i);
                }
            }
        }
    }
    let keep: std::collections::HashSet<usize> = best.values().copied().collect();
    let mut survivors = Vec::with_capacity(keep.len());
    let mut removed = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if keep.contains(&i) {
            survivors.push(p.clone());
        } else {
            removed.push(i);
        }
    }
    (survivors, removed)
}

/// One applied change, for the sidecar log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Change {
    Reclassified {
        image_id: u64,
        old_class: u8,
        new_class: u8,
        score: f64,
    },
    Removed {
        image_id: u64,
        class: u8,
        score: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutcome {
    pub predictions: Vec<Prediction>,
    pub changes: Vec<Change>,
}

/// Quadrant correction on every prediction, then duplicate suppression.
/// Correction can create same-class collisions; suppression resolves them.
/// Idempotent under fixed geometry.
pub fn postprocess(preds: &[Prediction], geo: &SectionGeometry) -> Result<PostprocessOutcome> {
    geo.validate()?;
    let mut changes = Vec::new();
    let corrected: Vec<Prediction> = preds
        .iter()
        .map(|p| {
            let c = quadrant_correct(p, geo);
            if c.tooth != p.tooth {
                changes.push(Change::Reclassified {
                    image_id: p.image_id,
                    old_class: p.tooth.code(),
                    new_class: c.tooth.code(),
                    score: p.score,
                });
            }
            c
        })
        .collect();
    let (survivors, removed) = suppress_duplicates(&corrected);
    for i in removed {
        changes.push(Change::Removed {
            image_id: corrected[i].image_id,
            class: corrected[i].tooth.code(),
            score: corrected[i].score,
        });
    }
    Ok(PostprocessOutcome {
        predictions: survivors,
        changes,
    })
}
