//! Scoring of prediction files against ground truth: per-class AP and mAP at
//! a fixed IoU threshold, detection and classification accuracy, and a
//! confusion matrix with the error taxonomy (detection / deciduous /
//! symmetric / other).
//!
//! AP uses per-class greedy matching and exact-area PR integration. The
//! accuracies and the confusion matrix use class-agnostic Hungarian matching
//! (cost -IoU, pairs below the threshold forbidden) so that a
//! misclassification shows up as a class swap instead of an FP+FN pair.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::coco::CocoDataset;
use crate::dental::{
    dentition_counterpart, mirror_class, BBox, PolygonMask, Prediction, ToothClass,
};
use crate::error::{Error, Result};
use crate::imgproc::rasterize_polygon;
use crate::matching::{hungarian_assign, iou, CostMatrix};
use crate::raster::BitMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    Bbox,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub iou_mode: IouMode,
    /// Predictions scoring below this are ignored entirely.
    pub score_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            iou_mode: IouMode::Bbox,
            score_floor: 0.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::InvalidEvalConfig(format!(
                "IoU threshold {} outside (0,1)",
                self.iou_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::InvalidEvalConfig(format!(
                "score floor {} outside [0,1]",
                self.score_floor
            )));
        }
        Ok(())
    }
}

/// Confusion-matrix row/col index for background (spurious prediction) and
/// missed (undetected ground truth).
pub const BACKGROUND_INDEX: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub detection: u64,
    pub deciduous: u64,
    pub symmetric: u64,
    pub other: u64,
}

impl ErrorCounts {
    pub fn total(&self) -> u64 {
        self.detection + self.deciduous + self.symmetric + self.other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    /// AP per FDI code, only for classes with at least one ground truth.
    pub per_class_ap: BTreeMap<u8, f64>,
    pub mean_ap: f64,
    pub detection_accuracy: f64,
    pub classification_accuracy: f64,
    /// Ground-truth instances per FDI code.
    pub per_class_gt: BTreeMap<u8, u64>,
    /// 53x53 counts; row = GT class index, column = predicted class index,
    /// with index 52 the background row / missed column.
    pub confusion: Vec<Vec<u64>>,
    pub error_counts: ErrorCounts,
}

/// One scored prediction after greedy matching.
#[derive(Debug, Clone, PartialEq)]
pub struct PredMatch {
    pub image_id: u64,
    pub tooth: ToothClass,
    pub score: f64,
    pub bbox: BBox,
    pub is_tp: bool,
    pub matched_ann_id: Option<u64>,
}

/// Greedy matching outcome over the whole prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutcome {
    pub pred_labels: Vec<PredMatch>,
    pub unmatched_gt_ids: Vec<u64>,
}

#[derive(Clone)]
struct GtObject {
    id: u64,
    image_id: u64,
    tooth: ToothClass,
    bbox: BBox,
    poly: PolygonMask,
}

fn gt_objects(gt: &CocoDataset) -> Result<Vec<GtObject>> {
    gt.annotations
        .iter()
        .map(|a| {
            let [x, y, w, h] = a.bbox;
            Ok(GtObject {
                id: a.id,
                image_id: a.image_id,
                tooth: ToothClass::new(a.category_id as u8)
                    .map_err(|_| Error::Validation(format!("annotation {}", a.id)))?,
                bbox: BBox::new(x, y, w, h)
                    .map_err(|e| Error::Validation(format!("annotation {}: {e}", a.id)))?,
                poly: PolygonMask::from_flat(a.segmentation.first().ok_or_else(|| {
                    Error::Validation(format!("annotation {} has no polygon", a.id))
                })?)?,
            })
        })
        .collect()
}

fn image_dims(gt: &CocoDataset) -> HashMap<u64, (u32, u32)> {
    gt.images
        .iter()
        .map(|i| (i.id, (i.width, i.height)))
        .collect()
}

/// Rasterized-mask cache keyed by object identity within one image.
struct MaskCache {
    dims: (u32, u32),
    masks: HashMap<usize, Option<BitMask>>,
}

impl MaskCache {
    fn new(dims: (u32, u32)) -> Self {
        Self {
            dims,
            masks: HashMap::new(),
        }
    }

    fn get(&mut self, key: usize, poly: &PolygonMask) -> Option<BitMask> {
        self.masks
            .entry(key)
            .or_insert_with(|| rasterize_polygon(poly, self.dims.0, self.dims.1).ok())
            .clone()
    }
}

fn mask_iou(a: &BitMask, b: &BitMask) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (pa, pb) = (a.get(x, y), b.get(x, y));
            if pa && pb {
                inter += 1;
            }
            if pa || pb {
                union += 1;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pair overlap under the configured mode; None when the prediction cannot
/// participate (mask mode without a mask).
fn pair_iou(
    pred: &Prediction,
    pred_key: usize,
    gt: &GtObject,
    gt_key: usize,
    cfg: &EvalConfig,
    pred_cache: &mut MaskCache,
    gt_cache: &mut MaskCache,
) -> Option<f64> {
    match cfg.iou_mode {
        IouMode::Bbox => Some(iou(&pred.bbox, &gt.bbox)),
        IouMode::Mask => {
            let pm = pred_cache.get(pred_key, pred.mask.as_ref()?)?;
            let gm = gt_cache.get(gt_key, &gt.poly)?;
            Some(mask_iou(&pm, &gm))
        }
    }
}

/// Deterministic prediction order: image, descending score, bbox, class.
fn sort_preds(preds: &mut [(usize, Prediction)]) {
    preds.sort_by(|(_, a), (_, b)| {
        a.image_id
            .cmp(&b.image_id)
            .then(b.score.total_cmp(&a.score))
            .then(a.bbox.lex_cmp(&b.bbox))
            .then(a.tooth.cmp(&b.tooth))
    });
}

/// Per-class greedy matching: each prediction, in descending-score order,
/// takes the unmatched same-class ground truth with the highest IoU if that
/// IoU meets the threshold; everything else is an FP, and leftover ground
/// truths are FNs (returned as unmatched ids).
pub fn match_greedy(
    preds: &[Prediction],
    gt: &CocoDataset,
    cfg: &EvalConfig,
) -> Result<GreedyOutcome> {
    cfg.validate()?;
    let objects = gt_objects(gt)?;
    let dims = image_dims(gt);
    for p in preds {
        if !dims.contains_key(&p.image_id) {
            return Err(Error::UnknownImageId(p.image_id));
        }
    }

    let mut sorted: Vec<(usize, Prediction)> = preds
        .iter()
        .filter(|p| p.score >= cfg.score_floor)
        .cloned()
        .enumerate()
        .collect();
    sort_preds(&mut sorted);

    let mut matched_gt: HashSet<u64> = HashSet::new();
    let mut pred_labels = Vec::with_capacity(sorted.len());

    // Group by image for mask caching.
    let mut by_image: BTreeMap<u64, Vec<&(usize, Prediction)>> = BTreeMap::new();
    for item in &sorted {
        by_image.entry(item.1.image_id).or_default().push(item);
    }
    for (image_id, image_preds) in by_image {
        let canvas = dims[&image_id];
        let mut pred_cache = MaskCache::new(canvas);
        let mut gt_cache = MaskCache::new(canvas);
        let image_gts: Vec<(usize, &GtObject)> = objects
            .iter()
            .enumerate()
            .filter(|(_, g)| g.image_id == image_id)
            .collect();
        for (pred_key, pred) in image_preds {
            let mut best: Option<(f64, u64)> = None;
            for (gt_key, g) in &image_gts {
                if g.tooth != pred.tooth || matched_gt.contains(&g.id) {
                    continue;
                }
                let Some(overlap) = pair_iou(
                    pred,
                    *pred_key,
                    g,
                    *gt_key,
                    cfg,
                    &mut pred_cache,
                    &mut gt_cache,
                ) else {
                    continue;
                };
                if overlap < cfg.iou_threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    // IoU ties break to the lower ground-truth id.
                    Some((bi, bid)) => overlap > bi || (overlap == bi && g.id < bid),
                };
                if better {
                    best = Some((overlap, g.id));
                }
            }
            let matched_ann_id = best.map(|(_, id)| id);
            if let Some(id) = matched_ann_id {
                matched_gt.insert(id);
            }
            pred_labels.push(PredMatch {
                image_id,
                tooth: pred.tooth,
                score: pred.score,
                bbox: pred.bbox,
                is_tp: matched_ann_id.is_some(),
                matched_ann_id,
            });
        }
    }

    let unmatched_gt_ids = objects
        .iter()
        .filter(|g| !matched_gt.contains(&g.id))
        .map(|g| g.id)
        .collect();
    Ok(GreedyOutcome {
        pred_labels,
        unmatched_gt_ids,
    })
}

/// All-point (exact area) average precision for one class from greedy labels.
///
/// Returns None when the class has no ground truth (AP undefined).
pub fn average_precision(
    preds: &[Prediction],
    gt: &CocoDataset,
    class: ToothClass,
    cfg: &EvalConfig,
) -> Result<Option<f64>> {
    let outcome = match_greedy(preds, gt, cfg)?;
    let gt_count = gt
        .annotations
        .iter()
        .filter(|a| a.category_id == u32::from(class.code()))
        .count();
    Ok(ap_from_labels(&outcome.pred_labels, class, gt_count))
}

fn ap_from_labels(labels: &[PredMatch], class: ToothClass, gt_count: usize) -> Option<f64> {
    if gt_count == 0 {
        return None;
    }
    let mut class_labels: Vec<&PredMatch> = labels.iter().filter(|l| l.tooth == class).collect();
    class_labels.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.bbox.lex_cmp(&b.bbox))
            .then(a.image_id.cmp(&b.image_id))
    });
    if class_labels.is_empty() {
        return Some(0.0);
    }
    let n = class_labels.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut tp = 0usize;
    for (rank, label) in class_labels.iter().enumerate() {
        if label.is_tp {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(tp as f64 / gt_count as f64);
    }
    // Precision envelope from the right, then exact-area integration.
    for i in (0..n - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    Some(ap)
}

/// Class-agnostic maximum-IoU matching per image, pairs below the threshold
/// forbidden. Exact via the Hungarian solver on a doubly padded matrix.
fn class_agnostic_matches(
    preds: &[(usize, Prediction)],
    gts: &[(usize, &GtObject)],
    cfg: &EvalConfig,
    pred_cache: &mut MaskCache,
    gt_cache: &mut MaskCache,
) -> Vec<(usize, usize)> {
    let p = preds.len();
    let g = gts.len();
    if p == 0 || g == 0 {
        return Vec::new();
    }
    let n = p + g;
    let mut rows = vec![vec![0.0f64; n]; n];
    let mut overlaps = vec![vec![0.0f64; g]; p];
    for (pi, (pred_key, pred)) in preds.iter().enumerate() {
        for (gi, (gt_key, gt)) in gts.iter().enumerate() {
            let overlap =
                pair_iou(pred, *pred_key, gt, *gt_key, cfg, pred_cache, gt_cache).unwrap_or(0.0);
            overlaps[pi][gi] = overlap;
            if overlap >= cfg.iou_threshold {
                rows[pi][gi] = -overlap;
            }
        }
    }
    let assignment = hungarian_assign(&CostMatrix::from_rows(rows).expect("finite square"));
    let mut pairs = Vec::new();
    for (pi, &col) in assignment.row_to_col.iter().enumerate().take(p) {
        if col < g && overlaps[pi][col] >= cfg.iou_threshold {
            pairs.push((pi, col));
        }
    }
    pairs
}

/// Score a prediction set against ground truth.
pub fn evaluate(preds: &[Prediction], gt: &CocoDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if gt.annotations.is_empty() {
        return Err(Error::EmptyGroundTruth);
    }
    let dims = image_dims(gt);
    for p in preds {
        if !dims.contains_key(&p.image_id) {
            return Err(Error::UnknownImageId(p.image_id));
        }
    }
    let objects = gt_objects(gt)?;

    // Per-class AP from greedy matching.
    let greedy = match_greedy(preds, gt, cfg)?;
    let mut per_class_gt: BTreeMap<u8, u64> = BTreeMap::new();
    for g in &objects {
        *per_class_gt.entry(g.tooth.code()).or_insert(0) += 1;
    }
    let mut per_class_ap = BTreeMap::new();
    for (&code, &count) in &per_class_gt {
        let class = ToothClass::new(code).expect("valid by construction");
        if let Some(ap) = ap_from_labels(&greedy.pred_labels, class, count as usize) {
            per_class_ap.insert(code, ap);
        }
    }
    let mean_ap = if per_class_ap.is_empty() {
        0.0
    } else {
        per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
    };

    // Class-agnostic Hungarian matching per image for the accuracies and the
    // confusion matrix.
    let mut sorted: Vec<(usize, Prediction)> = preds
        .iter()
        .filter(|p| p.score >= cfg.score_floor)
        .cloned()
        .enumerate()
        .collect();
    sort_preds(&mut sorted);

    let mut confusion = vec![vec![0u64; 53]; 53];
    let mut matched_gt_total = 0u64;
    let mut matched_correct_class = 0u64;
    let mut matched_pairs_total = 0u64;

    let image_ids: Vec<u64> = gt.images.iter().map(|i| i.id).collect();
    for image_id in image_ids {
        let canvas = dims[&image_id];
        let mut pred_cache = MaskCache::new(canvas);
        let mut gt_cache = MaskCache::new(canvas);
        let image_preds: Vec<(usize, Prediction)> = sorted
            .iter()
            .filter(|(_, p)| p.image_id == image_id)
            .cloned()
            .collect();
        let image_gts: Vec<(usize, &GtObject)> = objects
            .iter()
            .enumerate()
            .filter(|(_, g)| g.image_id == image_id)
            .collect();
        let pairs = class_agnostic_matches(
            &image_preds,
            &image_gts,
            cfg,
            &mut pred_cache,
            &mut gt_cache,
        );
        let mut pred_used = vec![false; image_preds.len()];
        let mut gt_used = vec![false; image_gts.len()];
        for (pi, gi) in pairs {
            pred_used[pi] = true;
            gt_used[gi] = true;
            let pred_class = image_preds[pi].1.tooth;
            let gt_class = image_gts[gi].1.tooth;
            confusion[gt_class.index()][pred_class.index()] += 1;
            matched_gt_total += 1;
            matched_pairs_total += 1;
            if pred_class == gt_class {
                matched_correct_class += 1;
            }
        }
        for (pi, used) in pred_used.iter().enumerate() {
            if !used {
                confusion[BACKGROUND_INDEX][image_preds[pi].1.tooth.index()] += 1;
            }
        }
        for (gi, used) in gt_used.iter().enumerate() {
            if !used {
                confusion[image_gts[gi].1.tooth.index()][BACKGROUND_INDEX] += 1;
            }
        }
    }

    let total_gt = objects.len() as u64;
    let detection_accuracy = matched_gt_total as f64 / total_gt as f64;
    let classification_accuracy = if matched_pairs_total == 0 {
        0.0
    } else {
        matched_correct_class as f64 / matched_pairs_total as f64
    };

    let error_counts = tally_errors(&confusion);

    Ok(EvalReport {
        config: *cfg,
        per_class_ap,
        mean_ap,
        detection_accuracy,
        classification_accuracy,
        per_class_gt,
        confusion,
        error_counts,
    })
}

/// Classify every off-diagonal confusion cell.
fn tally_errors(confusion: &[Vec<u64>]) -> ErrorCounts {
    let mut counts = ErrorCounts::default();
    for (row, cells) in confusion.iter().enumerate() {
        for (col, &count) in cells.iter().enumerate() {
            if count == 0 || row == col {
                continue;
            }
            if row == BACKGROUND_INDEX || col == BACKGROUND_INDEX {
                counts.detection += count;
                continue;
            }
            let gt_class = ToothClass::from_index(row).expect("row < 52");
            let pred_class = ToothClass::from_index(col).expect("col < 52");
            if dentition_counterpart(gt_class) == Some(pred_class) {
                counts.deciduous += count;
            } else if mirror_class(gt_class) == pred_class {
                counts.symmetric += count;
            } else {
                counts.other += count;
            }
        }
    }
    counts
}

/// One per-class delta row: (code, AP in a, AP in b, delta).
pub type ClassApDelta = (u8, Option<f64>, Option<f64>, Option<f64>);

/// Per-metric differences between two reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub mean_ap: f64,
    pub detection_accuracy: f64,
    pub classification_accuracy: f64,
    pub per_class: Vec<ClassApDelta>,
}

/// Metric deltas b - a, rows ordered by FDI code.
pub fn compare_reports(a: &EvalReport, b: &EvalReport) -> ReportDelta {
    let codes: std::collections::BTreeSet<u8> = a
        .per_class_ap
        .keys()
        .chain(b.per_class_ap.keys())
        .copied()
        .collect();
    ReportDelta {
        mean_ap: b.mean_ap - a.mean_ap,
        detection_accuracy: b.detection_accuracy - a.detection_accuracy,
        classification_accuracy: b.classification_accuracy - a.classification_accuracy,
        per_class: codes
            .into_iter()
            .map(|code| {
                let ap_a = a.per_class_ap.get(&code).copied();
                let ap_b = b.per_class_ap.get(&code).copied();
                let delta = match (ap_a, ap_b) {
                    (Some(x), Some(y)) => Some(y - x),
                    _ => None,
                };
                (code, ap_a, ap_b, delta)
            })
            .collect(),
    }
}

/// Plain-text rendering of a report.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mAP (IoU {:.2}): {:.4}\n",
        report.config.iou_threshold, report.mean_ap
    ));
    out.push_str(&format!(
        "detection accuracy: {:.4}\n",
        report.detection_accuracy
    ));
    out.push_str(&format!(
        "classification accuracy: {:.4}\n",
        report.classification_accuracy
    ));
    out.push_str(&format!(
        "errors: detection {} / deciduous {} / symmetric {} / other {}\n",
        report.error_counts.detection,
        report.error_counts.deciduous,
        report.error_counts.symmetric,
        report.error_counts.other
    ));
    out.push_str("class      gt      AP\n");
    for (code, ap) in &report.per_class_ap {
        out.push_str(&format!(
            "{code:<8} {:>4}  {ap:.4}\n",
            report.per_class_gt.get(code).copied().unwrap_or(0)
        ));
    }
    out
}

/// Delta table between two reports.
pub fn render_delta(delta: &ReportDelta) -> String {
    let mut out = String::new();
    out.push_str(&format!("mAP delta: {:+.4}\n", delta.mean_ap));
    out.push_str(&format!(
        "detection accuracy delta: {:+.4}\n",
        delta.detection_accuracy
    ));
    out.push_str(&format!(
        "classification accuracy delta: {:+.4}\n",
        delta.classification_accuracy
    ));
    out.push_str("class    AP(a)    AP(b)    delta\n");
    for (code, a, b, d) in &delta.per_class {
        let fmt = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{code:<8} {:>8} {:>8} {:>8}\n",
            fmt(a),
            fmt(b),
            fmt(d)
        ));
    }
    out
}

/// CSV rendering of the confusion matrix, labelled by FDI code plus the
/// background/missed line.
pub fn confusion_csv(report: &EvalReport) -> String {
    let label = |i: usize| -> String {
        if i == BACKGROUND_INDEX {
            "background".to_string()
        } else {
            ToothClass::from_index(i).expect("index < 52").to_string()
        }
    };
    let mut out = String::from("gt\\pred");
    for col in 0..=BACKGROUND_INDEX {
        out.push(',');
        out.push_str(&if col == BACKGROUND_INDEX {
            "missed".to_string()
        } else {
            label(col)
        });
    }
    out.push('\n');
    for (row, cells) in report.confusion.iter().enumerate() {
        out.push_str(&label(row));
        for &count in cells {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}
