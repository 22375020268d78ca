//! Set-matching mathematics: box metrics, exact Hungarian assignment, and
//! the bipartite matching loss used by detection transformers.
//!
//! Everything here is pure and deterministic, usable both by the evaluator
//! and as an offline oracle against training code.

use crate::dental::{BBox, PolygonMask, ToothAnnotation, ToothClass};
use crate::error::{Error, Result};
use crate::imgproc::rasterize_polygon;
use crate::raster::BitMask;

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: IoU minus the fraction of the smallest enclosing box
/// not covered by the union. Range [-1, 1].
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.union_bounds(b).area();
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    if hull <= 0.0 {
        return iou;
    }
    iou - (hull - union) / hull
}

/// L1 distance between boxes in (cx, cy, w, h), normalized by image size.
pub fn l1_box(a: &BBox, b: &BBox, image_size: f64) -> f64 {
    let (acx, acy) = a.center();
    let (bcx, bcy) = b.center();
    ((acx - bcx).abs() + (acy - bcy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()) / image_size
}

/// Dice coefficient 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
pub fn dice(a: &BitMask, b: &BitMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::MaskDimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let mut inter = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            if a.get(x, y) && b.get(x, y) {
                inter += 1;
            }
        }
    }
    let total = a.count() + b.count();
    if total == 0 {
        Ok(1.0)
    } else {
        Ok(2.0 * inter as f64 / total as f64)
    }
}

/// A validated square cost matrix: rows are prediction slots, columns are
/// ground-truth objects padded with no-object entries.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::NonSquareCostMatrix {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &c) in row.iter().enumerate() {
                if !c.is_finite() {
                    return Err(Error::NonFiniteCost(i, j));
                }
            }
        }
        Ok(Self {
            n,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.n + col]
    }
}

/// A minimum-cost perfect assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    pub total_cost: f64,
}

/// Exact minimum-cost assignment via shortest augmenting paths with
/// potentials, O(n^3).
pub fn hungarian_assign(costs: &CostMatrix) -> Assignment {
    let n = costs.size();
    if n == 0 {
        return Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        };
    }
    // 1-indexed; col_to_row[0] is the virtual column used to seed each phase.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_to_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_to_row[0] = row;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let slack = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == 0 {
                break;
            }
        }
        // Augment along the alternating path back to the virtual column.
        loop {
            let j1 = way[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_to_row[j] - 1] = j - 1;
    }
    let total_cost = row_to_col
        .iter()
        .enumerate()
        .map(|(r, &c)| costs.get(r, c))
        .sum();
    Assignment {
        row_to_col,
        total_cost,
    }
}

/// Index of the no-object class in a slot probability vector.
pub const NO_OBJECT_INDEX: usize = 52;

/// Length of a slot probability vector: 52 tooth classes plus no-object.
pub const NUM_CLASS_SLOTS: usize = 53;

/// One decoder output slot: a box, a probability vector over the 52 tooth
/// classes plus no-object, and an optional mask contour.
#[derive(Debug, Clone)]
pub struct SlotPrediction {
    pub bbox: BBox,
    pub class_probs: Vec<f64>,
    pub mask: Option<PolygonMask>,
}

impl SlotPrediction {
    /// Slot with all probability mass on one tooth class.
    pub fn certain(tooth: ToothClass, bbox: BBox, mask: Option<PolygonMask>) -> Self {
        let mut class_probs = vec![0.0; NUM_CLASS_SLOTS];
        class_probs[tooth.index()] = 1.0;
        Self {
            bbox,
            class_probs,
            mask,
        }
    }

    /// Slot with all probability mass on no-object.
    pub fn certain_no_object(bbox: BBox) -> Self {
        let mut class_probs = vec![0.0; NUM_CLASS_SLOTS];
        class_probs[NO_OBJECT_INDEX] = 1.0;
        Self {
            bbox,
            class_probs,
            mask: None,
        }
    }

    /// Slot with `score` on one class and the rest on no-object; the shape a
    /// plain (class, score) detection file provides.
    pub fn from_scored(
        tooth: ToothClass,
        bbox: BBox,
        score: f64,
        mask: Option<PolygonMask>,
    ) -> Self {
        let mut class_probs = vec![0.0; NUM_CLASS_SLOTS];
        class_probs[tooth.index()] = score;
        class_probs[NO_OBJECT_INDEX] = 1.0 - score;
        Self {
            bbox,
            class_probs,
            mask,
        }
    }

    /// Slot from raw class logits via a numerically stable softmax.
    pub fn from_logits(
        bbox: BBox,
        logits: &[f64; NUM_CLASS_SLOTS],
        mask: Option<PolygonMask>,
    ) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self {
            bbox,
            class_probs: exps.into_iter().map(|e| e / sum).collect(),
            mask,
        }
    }

    fn validate(&self, slot: usize) -> Result<()> {
        if self.class_probs.len() != NUM_CLASS_SLOTS {
            return Err(Error::UnnormalizedProbabilities {
                slot,
                sum: f64::NAN,
            });
        }
        let sum: f64 = self.class_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || self.class_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::UnnormalizedProbabilities { slot, sum });
        }
        Ok(())
    }
}

/// Weights for the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_class: f64,
    pub w_l1: f64,
    pub w_giou: f64,
    pub w_dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_class: 1.0,
            w_l1: 5.0,
            w_giou: 2.0,
            w_dice: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.w_class, self.w_l1, self.w_giou, self.w_dice];
        if all.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::Validation(
                "loss weights must be non-negative".into(),
            ));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Validation("loss weights cannot all be zero".into()));
        }
        Ok(())
    }
}

fn pairwise_match_cost(
    slot: &SlotPrediction,
    gt: &ToothAnnotation,
    w: &LossWeights,
    image_size: f64,
) -> f64 {
    // Matching uses the raw probability for the class term, not its log.
    -w.w_class * slot.class_probs[gt.tooth.index()]
        + w.w_l1 * l1_box(&slot.bbox, &gt.bbox, image_size)
        + w.w_giou * (1.0 - giou(&slot.bbox, &gt.bbox))
}

/// Optimal slot-to-ground-truth matching. Ground truth is padded with
/// no-object columns (cost 0) to the number of slots; the result maps each
/// slot to its ground-truth index, None for slots matched to no-object.
pub fn detr_match(
    slots: &[SlotPrediction],
    gts: &[ToothAnnotation],
    w: &LossWeights,
    image_size: f64,
) -> Result<Vec<Option<usize>>> {
    w.validate()?;
    if slots.len() < gts.len() {
        return Err(Error::TooFewSlots {
            preds: slots.len(),
            gts: gts.len(),
        });
    }
    for (i, slot) in slots.iter().enumerate() {
        slot.validate(i)?;
    }
    let n = slots.len();
    let mut rows = Vec::with_capacity(n);
    for slot in slots {
        let mut row = vec![0.0f64; n];
        for (j, gt) in gts.iter().enumerate() {
            row[j] = pairwise_match_cost(slot, gt, w, image_size);
        }
        rows.push(row);
    }
    let assignment = hungarian_assign(&CostMatrix::from_rows(rows)?);
    Ok(assignment
        .row_to_col
        .iter()
        .map(|&c| if c < gts.len() { Some(c) } else { None })
        .collect())
}

/// Loss total plus its per-term breakdown. The total is +inf when a matched
/// class (or a required no-object) has probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub class_term: f64,
    pub l1_term: f64,
    pub giou_term: f64,
    pub dice_term: f64,
    pub total: f64,
    /// slot index -> matched ground-truth index.
    pub matches: Vec<(usize, usize)>,
}

/// The full matching loss at the optimal assignment.
///
/// Matched slots contribute w_class * (-ln p(gt class)) + w_l1 * l1 +
/// w_giou * (1 - giou) + w_dice * (1 - dice); unmatched slots contribute
/// w_class * (-ln p(no-object)). Masks are rasterized on `canvas` for the
/// dice term; a matched slot without a mask counts as dice 0.
pub fn hungarian_loss(
    slots: &[SlotPrediction],
    gts: &[ToothAnnotation],
    w: &LossWeights,
    image_size: f64,
    canvas: (u32, u32),
) -> Result<LossBreakdown> {
    let assignment = detr_match(slots, gts, w, image_size)?;
    let mut class_term = 0.0;
    let mut l1_term = 0.0;
    let mut giou_term = 0.0;
    let mut dice_term = 0.0;
    let mut matches = Vec::new();

    let raster = |poly: &PolygonMask| -> BitMask {
        rasterize_polygon(poly, canvas.0, canvas.1)
            .unwrap_or_else(|_| BitMask::zeroed(canvas.0, canvas.1))
    };

    for (slot_idx, (slot, gt_idx)) in slots.iter().zip(&assignment).enumerate() {
        match gt_idx {
            Some(j) => {
                let gt = &gts[*j];
                class_term += w.w_class * -slot.class_probs[gt.tooth.index()].ln();
                l1_term += w.w_l1 * l1_box(&slot.bbox, &gt.bbox, image_size);
                giou_term += w.w_giou * (1.0 - giou(&slot.bbox, &gt.bbox));
                if w.w_dice > 0.0 {
                    let d = match &slot.mask {
                        Some(m) => dice(&raster(m), &raster(&gt.mask))?,
                        None => 0.0,
                    };
                    dice_term += w.w_dice * (1.0 - d);
                }
                matches.push((slot_idx, *j));
            }
            None => {
                class_term += w.w_class * -slot.class_probs[NO_OBJECT_INDEX].ln();
            }
        }
    }
    Ok(LossBreakdown {
        class_term,
        l1_term,
        giou_term,
        dice_term,
        total: class_term + l1_term + giou_term + dice_term,
        matches,
    })
}
