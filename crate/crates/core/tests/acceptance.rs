//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panodent_core::augment::{augment_dataset, AugmentConfig, AugmentStrategy};
use panodent_core::coco::{
    dataset_from_entries, dataset_to_json, fdi_categories, CocoAnnotation, CocoDataset, CocoImage,
    ImageEntry,
};
use panodent_core::dental::{
    mirror_class, AnnotatedImage, BBox, PolygonMask, Prediction, ToothAnnotation, ToothClass,
};
use panodent_core::eval::{evaluate, EvalConfig};
use panodent_core::imgproc::rasterize_polygon;
use panodent_core::matching::{
    dice, giou, hungarian_assign, hungarian_loss, iou, CostMatrix, LossWeights, SlotPrediction,
    NO_OBJECT_INDEX, NUM_CLASS_SLOTS,
};
use panodent_core::postproc::{postprocess, SectionGeometry};
use panodent_core::raster::{BitMask, GrayImage};
use panodent_core::split::{
    split_dataset, stratification_deviation, stratified_split, SplitAssignment, SplitSpec,
};
use panodent_core::synth::{
    build_tooth_bank, synthesize_batch, EmptyPanoramic, PatientSpec, SynthOptions,
};

fn check(name: &str, f: impl FnOnce() + std::panic::UnwindSafe) {
    let result = std::panic::catch_unwind(f);
    match &result {
        Ok(()) => println!("[PASS] {name}"),
        Err(_) => println!("[FAIL] {name}"),
    }
    if let Err(e) = result {
        std::panic::resume_unwind(e);
    }
}

fn rect_poly(x: f64, y: f64, w: f64, h: f64) -> PolygonMask {
    PolygonMask::new(vec![(x, y), (x + w, y), (x + w, y + h), (x, y + h)]).unwrap()
}

fn rect_ann(code: u8, x: f64, y: f64, w: f64, h: f64) -> ToothAnnotation {
    ToothAnnotation::from_polygon(ToothClass::new(code).unwrap(), rect_poly(x, y, w, h)).unwrap()
}

fn bbox(x: f64, y: f64, w: f64, h: f64) -> BBox {
    BBox::new(x, y, w, h).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Hungarian exactness
// ---------------------------------------------------------------------------

fn brute_force_min(costs: &CostMatrix) -> f64 {
    fn recurse(costs: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == costs.size() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for col in 0..costs.size() {
            if !used[col] {
                used[col] = true;
                recurse(costs, row + 1, used, acc + costs.get(row, col), best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    recurse(costs, 0, &mut vec![false; costs.size()], 0.0, &mut best);
    best
}

#[test]
fn criterion_01_hungarian_exactness() {
    check(
        "criterion 1: hungarian_assign equals brute force on 1000 matrices per N in 2..=7",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(101);
            for n in 2..=7usize {
                for trial in 0..1000 {
                    let rows: Vec<Vec<f64>> = (0..n)
                        .map(|_| (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
                        .collect();
                    let costs = CostMatrix::from_rows(rows).unwrap();
                    let got = hungarian_assign(&costs).total_cost;
                    let want = brute_force_min(&costs);
                    assert_eq!(got, want, "n={n} trial={trial}");
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 2. GIoU / IoU / Dice oracles
// ---------------------------------------------------------------------------

/// Pixel-count areas for integer-coordinate boxes: exact by construction.
fn pixel_box_areas(a: &BBox, b: &BBox) -> (f64, f64, f64) {
    let in_box = |bx: &BBox, x: i64, y: i64| -> bool {
        let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
        xf > bx.x && xf < bx.right() && yf > bx.y && yf < bx.bottom()
    };
    let hull = a.union_bounds(b);
    let (x0, y0) = (hull.x as i64, hull.y as i64);
    let (x1, y1) = (hull.right() as i64, hull.bottom() as i64);
    let mut inter = 0u64;
    let mut union = 0u64;
    let mut hull_px = 0u64;
    for y in y0..y1 {
        for x in x0..x1 {
            hull_px += 1;
            let (ia, ib) = (in_box(a, x, y), in_box(b, x, y));
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    (inter as f64, union as f64, hull_px as f64)
}

#[test]
fn criterion_02_box_metric_oracles() {
    check(
        "criterion 2: IoU/GIoU/Dice match pixel-count oracles; worked example exact",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(202);
            for _ in 0..200 {
                let rand_box = |rng: &mut ChaCha8Rng| {
                    bbox(
                        rng.gen_range(0..30) as f64,
                        rng.gen_range(0..30) as f64,
                        rng.gen_range(1..25) as f64,
                        rng.gen_range(1..25) as f64,
                    )
                };
                let (a, b) = (rand_box(&mut rng), rand_box(&mut rng));
                let (inter, union, hull) = pixel_box_areas(&a, &b);
                let iou_oracle = if union == 0.0 { 0.0 } else { inter / union };
                let giou_oracle = iou_oracle - (hull - union) / hull;
                assert!((iou(&a, &b) - iou_oracle).abs() < 1e-6);
                assert!((giou(&a, &b) - giou_oracle).abs() < 1e-6);
            }
            // Dice on random rectangle masks vs rectangle-intersection arithmetic.
            for _ in 0..200 {
                let rand_rect = |rng: &mut ChaCha8Rng| {
                    let (x, y) = (rng.gen_range(0..40u32), rng.gen_range(0..40u32));
                    let (w, h) = (rng.gen_range(1..24u32), rng.gen_range(1..24u32));
                    (x, y, w.min(64 - x), h.min(64 - y))
                };
                let (ra, rb) = (rand_rect(&mut rng), rand_rect(&mut rng));
                let fill = |(x, y, w, h): (u32, u32, u32, u32)| {
                    let mut m = BitMask::zeroed(64, 64);
                    for yy in y..y + h {
                        for xx in x..x + w {
                            m.set(xx, yy, true);
                        }
                    }
                    m
                };
                let (ma, mb) = (fill(ra), fill(rb));
                let iw = (ra.0 + ra.2)
                    .min(rb.0 + rb.2)
                    .saturating_sub(ra.0.max(rb.0));
                let ih = (ra.1 + ra.3)
                    .min(rb.1 + rb.3)
                    .saturating_sub(ra.1.max(rb.1));
                let inter = f64::from(iw) * f64::from(ih);
                let total = f64::from(ra.2 * ra.3 + rb.2 * rb.3);
                let dice_oracle = if total == 0.0 {
                    1.0
                } else {
                    2.0 * inter / total
                };
                assert!((dice(&ma, &mb).unwrap() - dice_oracle).abs() < 1e-6);
            }
            // Worked example: a=(0,0,10,10), b=(5,5,10,10).
            let a = bbox(0.0, 0.0, 10.0, 10.0);
            let b = bbox(5.0, 5.0, 10.0, 10.0);
            assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-9);
            // GIoU = 1/7 - 50/225 = -5/63.
            assert!((giou(&a, &b) - (-5.0 / 63.0)).abs() < 1e-9);
        },
    );
}

// ---------------------------------------------------------------------------
// 3. AP fixture
// ---------------------------------------------------------------------------

fn gt_dataset(images: &[(u64, Vec<(u8, BBox)>)]) -> CocoDataset {
    let mut imgs = Vec::new();
    let mut anns = Vec::new();
    let mut ann_id = 1u64;
    for (id, objects) in images {
        imgs.push(CocoImage {
            id: *id,
            file_name: format!("{id}.png"),
            width: 1024,
            height: 1024,
            age: None,
        });
        for (code, b) in objects {
            anns.push(CocoAnnotation {
                id: ann_id,
                image_id: *id,
                category_id: u32::from(*code),
                bbox: [b.x, b.y, b.w, b.h],
                segmentation: vec![rect_poly(b.x, b.y, b.w, b.h).to_flat()],
                area: b.area(),
            });
            ann_id += 1;
        }
    }
    CocoDataset {
        images: imgs,
        annotations: anns,
        categories: fdi_categories(),
    }
}

fn pred(image_id: u64, code: u8, b: BBox, score: f64) -> Prediction {
    Prediction::new(image_id, ToothClass::new(code).unwrap(), b, score, None).unwrap()
}

fn perfect_preds(gt: &CocoDataset) -> Vec<Prediction> {
    gt.annotations
        .iter()
        .map(|a| {
            let [x, y, w, h] = a.bbox;
            pred(a.image_id, a.category_id as u8, bbox(x, y, w, h), 1.0)
        })
        .collect()
}

#[test]
fn criterion_03_ap_fixture() {
    check(
        "criterion 3: AP fixture 5/6; perfect mAP 1.0; all-wrong-class mAP 0.0",
        || {
            let gt = gt_dataset(&[(
                1,
                vec![
                    (11, bbox(0.0, 0.0, 10.0, 10.0)),
                    (11, bbox(40.0, 0.0, 10.0, 10.0)),
                ],
            )]);
            let preds = vec![
                pred(1, 11, bbox(0.0, 0.0, 10.0, 10.0), 0.9),
                pred(1, 11, bbox(100.0, 100.0, 10.0, 10.0), 0.8),
                pred(1, 11, bbox(40.0, 0.0, 10.0, 10.0), 0.7),
            ];
            let report = evaluate(&preds, &gt, &EvalConfig::default()).unwrap();
            assert!((report.per_class_ap[&11] - 5.0 / 6.0).abs() < 1e-9);

            let gt2 = gt_dataset(&[(
                1,
                vec![
                    (11, bbox(0.0, 0.0, 10.0, 10.0)),
                    (24, bbox(40.0, 0.0, 10.0, 10.0)),
                ],
            )]);
            let report = evaluate(&perfect_preds(&gt2), &gt2, &EvalConfig::default()).unwrap();
            assert_eq!(report.mean_ap, 1.0);

            let wrong: Vec<Prediction> = gt2
                .annotations
                .iter()
                .map(|a| {
                    let [x, y, w, h] = a.bbox;
                    let m = mirror_class(ToothClass::new(a.category_id as u8).unwrap());
                    pred(a.image_id, m.code(), bbox(x, y, w, h), 1.0)
                })
                .collect();
            let report = evaluate(&wrong, &gt2, &EvalConfig::default()).unwrap();
            assert_eq!(report.mean_ap, 0.0);
        },
    );
}

// ---------------------------------------------------------------------------
// 4. Paper-anchored split
// ---------------------------------------------------------------------------

fn synthetic_label_dataset(n: usize, seed: u64) -> CocoDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<ToothClass> = ToothClass::all().collect();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut ann_id = 1u64;
    for i in 0..n {
        let id = i as u64 + 1;
        images.push(CocoImage {
            id,
            file_name: format!("img_{id:04}.png"),
            width: 64,
            height: 64,
            age: None,
        });
        let n_labels = rng.gen_range(2..=10usize);
        let mut picked = BTreeSet::new();
        while picked.len() < n_labels {
            picked.insert(classes[rng.gen_range(0..classes.len())]);
        }
        for tooth in picked {
            annotations.push(CocoAnnotation {
                id: ann_id,
                image_id: id,
                category_id: u32::from(tooth.code()),
                bbox: [0.0, 0.0, 4.0, 4.0],
                segmentation: vec![vec![0.0, 0.0, 4.0, 0.0, 4.0, 4.0, 0.0, 4.0]],
                area: 16.0,
            });
            ann_id += 1;
        }
    }
    CocoDataset {
        images,
        annotations,
        categories: fdi_categories(),
    }
}

fn seed_matched_random_split(d: &CocoDataset, spec: &SplitSpec, seed: u64) -> SplitAssignment {
    use rand::seq::SliceRandom;
    let n = d.images.len();
    let sizes = spec.target_sizes(n).unwrap();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut by_image = std::collections::BTreeMap::new();
    let mut cursor = 0usize;
    for (j, &size) in sizes.iter().enumerate() {
        for &idx in &order[cursor..cursor + size] {
            by_image.insert(d.images[idx].id, spec.ratios[j].name.clone());
        }
        cursor += size;
    }
    SplitAssignment {
        splits: spec.ratios.iter().map(|r| r.name.clone()).collect(),
        by_image,
    }
}

#[test]
fn criterion_04_paper_anchored_split() {
    check(
        "criterion 4: 156 images split exactly 72/48/36; beats random on >= 95/100 datasets",
        || {
            let spec = SplitSpec::new(
                vec![
                    ("train", 72.0 / 156.0),
                    ("val", 48.0 / 156.0),
                    ("test", 36.0 / 156.0),
                ],
                7,
            );
            let d = synthetic_label_dataset(156, 1);
            let assignment = stratified_split(&d, &spec).unwrap();
            assert_eq!(assignment.size_of("train"), 72);
            assert_eq!(assignment.size_of("val"), 48);
            assert_eq!(assignment.size_of("test"), 36);
            let splits = split_dataset(&d, &assignment);
            assert_eq!(splits[0].1.images.len(), 72);
            assert_eq!(splits[1].1.images.len(), 48);
            assert_eq!(splits[2].1.images.len(), 36);

            let mut wins = 0;
            for seed in 0..100u64 {
                let d = synthetic_label_dataset(100, 1000 + seed);
                let spec = SplitSpec::new(vec![("train", 0.5), ("val", 0.3), ("test", 0.2)], seed);
                let ours =
                    stratification_deviation(&d, &stratified_split(&d, &spec).unwrap(), &spec);
                let random = stratification_deviation(
                    &d,
                    &seed_matched_random_split(&d, &spec, seed),
                    &spec,
                );
                if ours <= random {
                    wins += 1;
                }
            }
            assert!(wins >= 95, "stratified beat random on only {wins}/100");
        },
    );
}

// ---------------------------------------------------------------------------
// 5. Paper-anchored augmentation counts
// ---------------------------------------------------------------------------

fn gradient_image(w: u32, h: u32) -> GrayImage {
    let data = (0..w as usize * h as usize)
        .map(|i| ((i % w as usize + i / w as usize) % 256) as u8)
        .collect();
    GrayImage::from_raw(w, h, data).unwrap()
}

#[test]
fn criterion_05_augmentation_counts() {
    check(
        "criterion 5: 72 sources x5 copies = 360 new images; bbox = polygon bounds within 1 px",
        || {
            let entries: Vec<ImageEntry> = (1..=72u64)
                .map(|id| {
                    let image = AnnotatedImage::new(
                        id,
                        gradient_image(64, 64),
                        Some(10),
                        vec![
                            rect_ann(11, 8.0, 8.0, 14.0, 12.0),
                            rect_ann(75, 34.0, 30.0, 12.0, 14.0),
                        ],
                    )
                    .unwrap();
                    ImageEntry {
                        image,
                        file_name: format!("img_{id:03}.png"),
                    }
                })
                .collect();
            let cfg = AugmentConfig {
                strategy: AugmentStrategy::Uniform,
                copies_uniform: 5,
                enable_translation: true,
                seed: 5,
                ..AugmentConfig::default()
            };
            let out = augment_dataset(&entries, &cfg).unwrap();
            assert_eq!(out.new_images, 360);
            assert_eq!(out.entries.len(), 72 + 360);
            for entry in &out.entries {
                for ann in &entry.image.annotations {
                    ann.check_consistency().unwrap();
                }
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 6. Rotation round-trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_rotation_round_trip() {
    check(
        "criterion 6: +7/-7 degree round trip recovers vertices (1e-6) and area (0.5%)",
        || {
            use panodent_core::augment::rotate_with_annotations;
            let img = gradient_image(256, 256);
            let anns = vec![
                rect_ann(11, 90.0, 80.0, 40.0, 30.0),
                rect_ann(31, 130.0, 140.0, 36.0, 44.0),
            ];
            let (img1, anns1, _) = rotate_with_annotations(&img, &anns, 7.0).unwrap();
            let (_, anns2, _) = rotate_with_annotations(&img1, &anns1, -7.0).unwrap();
            assert_eq!(anns2.len(), anns.len());
            for (orig, round) in anns.iter().zip(&anns2) {
                for (v0, v1) in orig.mask.vertices.iter().zip(&round.mask.vertices) {
                    assert!((v0.0 - v1.0).abs() < 1e-6);
                    assert!((v0.1 - v1.1).abs() < 1e-6);
                }
            }
            // Non-border polygons keep their area through a single rotation.
            for (orig, rotated) in anns.iter().zip(&anns1) {
                let rel = (rotated.mask.area() - orig.mask.area()).abs() / orig.mask.area();
                assert!(rel < 0.005, "area drift {rel}");
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 7. Paper-anchored post-processing
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_postprocessing() {
    check(
        "criterion 7: section-1 24->14; one prediction per class; idempotent on 100 random sets",
        || {
            let geo = SectionGeometry::default();
            let p = pred(1, 24, bbox(95.0, 95.0, 10.0, 10.0), 0.9);
            let out = postprocess(&[p], &geo).unwrap();
            assert_eq!(out.predictions[0].tooth.code(), 14);

            let mut rng = ChaCha8Rng::seed_from_u64(707);
            let classes: Vec<ToothClass> = ToothClass::all().collect();
            for _ in 0..100 {
                let preds: Vec<Prediction> = (0..rng.gen_range(1..20))
                    .map(|_| {
                        let code = classes[rng.gen_range(0..classes.len())].code();
                        let b = bbox(
                            rng.gen_range(0.0..1000.0),
                            rng.gen_range(0.0..1000.0),
                            rng.gen_range(5.0..60.0),
                            rng.gen_range(5.0..60.0),
                        );
                        pred(rng.gen_range(1..4), code, b, rng.gen())
                    })
                    .collect();
                let once = postprocess(&preds, &geo).unwrap();
                // At most one prediction per (image, class).
                let mut seen = std::collections::HashSet::new();
                for p in &once.predictions {
                    assert!(seen.insert((p.image_id, p.tooth.code())));
                }
                // Idempotence.
                let twice = postprocess(&once.predictions, &geo).unwrap();
                assert_eq!(once.predictions, twice.predictions);
                assert!(twice.changes.is_empty());
            }
        },
    );
}

// ---------------------------------------------------------------------------
// 8. End-to-end self-evaluation
// ---------------------------------------------------------------------------

/// Bank source on a 1024 canvas: quadrant 1 teeth in viewer section 1 and
/// quadrant 3 teeth in viewer section 3, so every bbox center lies in its
/// true section and no mirror pairs coexist in an image.
fn section_consistent_sources() -> Vec<AnnotatedImage> {
    let mut anns = Vec::new();
    for pos in 1..=8u8 {
        let x = 40.0 + f64::from(pos - 1) * 55.0;
        anns.push(rect_ann(10 + pos, x, 260.0, 40.0, 55.0));
    }
    for pos in 1..=8u8 {
        let x = 540.0 + f64::from(pos - 1) * 55.0;
        anns.push(rect_ann(30 + pos, x, 700.0, 40.0, 55.0));
    }
    vec![AnnotatedImage::new(1, GrayImage::filled(1024, 1024, 110), Some(9), anns).unwrap()]
}

#[test]
fn criterion_08_end_to_end_self_evaluation() {
    check(
        "criterion 8: 50 synthesized images; 20% mirrored labels -> 0.8, postprocess -> 1.0",
        || {
            let (bank, warnings) = build_tooth_bank(&section_consistent_sources()).unwrap();
            assert!(warnings.is_empty());
            let empties = vec![EmptyPanoramic {
                id: 1,
                pixels: GrayImage::filled(1024, 1024, 40),
                age: Some(9),
            }];
            let specs: Vec<PatientSpec> = (0..50)
                .map(|i| {
                    let quadrant = if i % 2 == 0 { 1u8 } else { 3u8 };
                    PatientSpec {
                        age: 9,
                        teeth: (1..=8u8)
                            .map(|p| ToothClass::new(quadrant * 10 + p).unwrap())
                            .collect(),
                    }
                })
                .collect();
            let batch =
                synthesize_batch(&specs, &empties, &bank, 808, &SynthOptions::default()).unwrap();
            assert_eq!(batch.entries.len(), 50);
            assert!(batch.errors.is_empty());
            let gt = dataset_from_entries(&batch.entries);
            assert_eq!(gt.annotations.len(), 400);

            // Predictions = ground truth with exactly 20% of labels mirrored.
            let preds: Vec<Prediction> = gt
                .annotations
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let tooth = ToothClass::new(a.category_id as u8).unwrap();
                    let label = if i % 5 == 0 {
                        mirror_class(tooth)
                    } else {
                        tooth
                    };
                    let [x, y, w, h] = a.bbox;
                    pred(a.image_id, label.code(), bbox(x, y, w, h), 1.0)
                })
                .collect();

            let before = evaluate(&preds, &gt, &EvalConfig::default()).unwrap();
            assert_eq!(before.detection_accuracy, 1.0);
            assert!(
                (before.classification_accuracy - 0.8).abs() < 1e-12,
                "classification accuracy {}",
                before.classification_accuracy
            );

            let corrected = postprocess(&preds, &SectionGeometry::default()).unwrap();
            let after = evaluate(&corrected.predictions, &gt, &EvalConfig::default()).unwrap();
            assert_eq!(after.classification_accuracy, 1.0);
            assert_eq!(after.error_counts.symmetric, 0);
        },
    );
}

// ---------------------------------------------------------------------------
// 9. Synthesis determinism and fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_synthesis_batch() {
    check(
        "criterion 9: 298-spec batch, class multisets = requested minus skips, rerun identical",
        || {
            let mut sources = Vec::new();
            let mut anns1 = Vec::new();
            for pos in 1..=8u8 {
                anns1.push(rect_ann(
                    10 + pos,
                    30.0 + f64::from(pos) * 55.0,
                    250.0,
                    40.0,
                    50.0,
                ));
                anns1.push(rect_ann(
                    20 + pos,
                    30.0 + f64::from(pos) * 55.0,
                    400.0,
                    40.0,
                    50.0,
                ));
            }
            sources.push(
                AnnotatedImage::new(1, GrayImage::filled(1024, 1024, 120), Some(8), anns1).unwrap(),
            );
            let mut anns2 = Vec::new();
            for pos in 1..=8u8 {
                anns2.push(rect_ann(
                    30 + pos,
                    30.0 + f64::from(pos) * 55.0,
                    600.0,
                    40.0,
                    50.0,
                ));
                anns2.push(rect_ann(
                    40 + pos,
                    30.0 + f64::from(pos) * 55.0,
                    750.0,
                    40.0,
                    50.0,
                ));
            }
            sources.push(
                AnnotatedImage::new(2, GrayImage::filled(1024, 1024, 150), Some(30), anns2)
                    .unwrap(),
            );
            let (bank, _) = build_tooth_bank(&sources).unwrap();

            let empties = vec![
                EmptyPanoramic {
                    id: 1,
                    pixels: GrayImage::filled(1024, 1024, 35),
                    age: Some(8),
                },
                EmptyPanoramic {
                    id: 2,
                    pixels: GrayImage::filled(1024, 1024, 42),
                    age: Some(30),
                },
                EmptyPanoramic {
                    id: 3,
                    pixels: GrayImage::filled(1024, 1024, 50),
                    age: None,
                },
            ];

            // 298 specs; every tenth also requests class 55, absent from the
            // bank, to exercise skip logging.
            let specs: Vec<PatientSpec> = (0..298usize)
                .map(|i| {
                    let quadrant = (i % 4) as u8 + 1;
                    let count = (i % 8) as u8 + 1;
                    let mut teeth: BTreeSet<ToothClass> = (1..=count)
                        .map(|p| ToothClass::new(quadrant * 10 + p).unwrap())
                        .collect();
                    if i % 10 == 0 {
                        teeth.insert(ToothClass::new(55).unwrap());
                    }
                    PatientSpec {
                        age: [8u32, 30, 12][i % 3],
                        teeth,
                    }
                })
                .collect();

            let opts = SynthOptions::default();
            let run1 = synthesize_batch(&specs, &empties, &bank, 909, &opts).unwrap();
            assert_eq!(run1.entries.len(), 298);
            assert!(run1.errors.is_empty());

            // Class fidelity: output classes = requested minus logged skips.
            for (spec, (entry, record)) in
                specs.iter().zip(run1.entries.iter().zip(&run1.provenance))
            {
                let got: BTreeSet<ToothClass> =
                    entry.image.annotations.iter().map(|a| a.tooth).collect();
                let skipped_55 = record.skipped.iter().any(|s| s.contains("55"));
                let mut expected = spec.teeth.clone();
                if skipped_55 {
                    expected.remove(&ToothClass::new(55).unwrap());
                }
                assert_eq!(got, expected);
                assert_eq!(record.skipped.len(), usize::from(skipped_55));
            }

            // Rerun with the same seed: byte-identical pixels and dataset.
            let run2 = synthesize_batch(&specs, &empties, &bank, 909, &opts).unwrap();
            for (a, b) in run1.entries.iter().zip(&run2.entries) {
                assert_eq!(a.image.pixels.data(), b.image.pixels.data());
                assert_eq!(a.image.annotations, b.image.annotations);
                assert_eq!(a.file_name, b.file_name);
            }
            assert_eq!(
                dataset_to_json(&dataset_from_entries(&run1.entries)),
                dataset_to_json(&dataset_from_entries(&run2.entries))
            );
            assert_eq!(run1.provenance, run2.provenance);
        },
    );
}

// ---------------------------------------------------------------------------
// 10. Hungarian-loss oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_hungarian_loss_oracle() {
    check(
        "criterion 10: perfect loss 0; NLL fixture 1.0 (1e-12); hand instance matches (1e-9)",
        || {
            let g1 = rect_ann(11, 10.0, 10.0, 20.0, 20.0);
            let g2 = rect_ann(21, 60.0, 10.0, 20.0, 20.0);
            let w = LossWeights::default();

            // Perfect prediction: loss exactly 0.
            let slots = vec![
                SlotPrediction::certain(g1.tooth, g1.bbox, Some(g1.mask.clone())),
                SlotPrediction::certain(g2.tooth, g2.bbox, Some(g2.mask.clone())),
                SlotPrediction::certain_no_object(bbox(1.0, 1.0, 2.0, 2.0)),
            ];
            let loss =
                hungarian_loss(&slots, &[g1.clone(), g2.clone()], &w, 100.0, (100, 100)).unwrap();
            assert_eq!(loss.total, 0.0);

            // Single pair with p = e^-1 on the right class: class term 1.
            let p_class = (-1.0f64).exp();
            let mut probs = vec![0.0; NUM_CLASS_SLOTS];
            probs[g1.tooth.index()] = p_class;
            probs[NO_OBJECT_INDEX] = 1.0 - p_class;
            let slot = SlotPrediction {
                bbox: g1.bbox,
                class_probs: probs,
                mask: Some(g1.mask.clone()),
            };
            let loss =
                hungarian_loss(&[slot], std::slice::from_ref(&g1), &w, 100.0, (100, 100)).unwrap();
            assert!((loss.class_term - 1.0).abs() < 1e-12);
            assert_eq!(loss.l1_term + loss.giou_term + loss.dice_term, 0.0);

            // Hand-built 2-slot / 1-gt instance, recomputed term by term.
            let gt = rect_ann(36, 20.0, 30.0, 40.0, 20.0);
            let pred_box = bbox(24.0, 28.0, 38.0, 22.0);
            let pred_poly = rect_poly(24.0, 28.0, 38.0, 22.0);
            let mut probs_a = vec![0.0; NUM_CLASS_SLOTS];
            probs_a[gt.tooth.index()] = 0.7;
            probs_a[NO_OBJECT_INDEX] = 0.3;
            let slot_a = SlotPrediction {
                bbox: pred_box,
                class_probs: probs_a,
                mask: Some(pred_poly.clone()),
            };
            let mut probs_b = vec![0.0; NUM_CLASS_SLOTS];
            probs_b[NO_OBJECT_INDEX] = 0.8;
            probs_b[ToothClass::new(48).unwrap().index()] = 0.2;
            let slot_b = SlotPrediction {
                bbox: bbox(90.0, 90.0, 5.0, 5.0),
                class_probs: probs_b,
                mask: None,
            };
            let loss = hungarian_loss(
                &[slot_a, slot_b],
                std::slice::from_ref(&gt),
                &w,
                128.0,
                (128, 128),
            )
            .unwrap();

            // Independent computation of every term.
            let l1 = {
                let (acx, acy) = pred_box.center();
                let (bcx, bcy) = gt.bbox.center();
                ((acx - bcx).abs()
                    + (acy - bcy).abs()
                    + (pred_box.w - gt.bbox.w).abs()
                    + (pred_box.h - gt.bbox.h).abs())
                    / 128.0
            };
            let giou_term = {
                let inter = pred_box.intersection_area(&gt.bbox);
                let union = pred_box.area() + gt.bbox.area() - inter;
                let hull = pred_box.union_bounds(&gt.bbox).area();
                inter / union - (hull - union) / hull
            };
            let dice_term = {
                let pm = rasterize_polygon(&pred_poly, 128, 128).unwrap();
                let gm = rasterize_polygon(&gt.mask, 128, 128).unwrap();
                let mut inter = 0usize;
                for y in 0..128 {
                    for x in 0..128 {
                        if pm.get(x, y) && gm.get(x, y) {
                            inter += 1;
                        }
                    }
                }
                2.0 * inter as f64 / (pm.count() + gm.count()) as f64
            };
            let expected = -(0.7f64).ln()
                + -(0.8f64).ln()
                + 5.0 * l1
                + 2.0 * (1.0 - giou_term)
                + 1.0 * (1.0 - dice_term);
            assert!((loss.total - expected).abs() < 1e-9);
        },
    );
}

// ---------------------------------------------------------------------------
// 11. COCO round-trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_coco_round_trip() {
    check(
        "criterion 11: parse/serialize identity on 100 datasets; violations rejected by name",
        || {
            let dir = tempfile::tempdir().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(1111);
            let classes: Vec<ToothClass> = ToothClass::all().collect();
            for trial in 0..100 {
                let n_images = rng.gen_range(1..5usize);
                let mut images = Vec::new();
                let mut annotations = Vec::new();
                let mut ann_id = 1u64;
                for i in 0..n_images {
                    let id = i as u64 + 1;
                    images.push(CocoImage {
                        id,
                        file_name: format!("{id}.png"),
                        width: rng.gen_range(32..512),
                        height: rng.gen_range(32..512),
                        age: if rng.gen_bool(0.5) {
                            Some(rng.gen_range(1..90))
                        } else {
                            None
                        },
                    });
                    let mut picked = BTreeSet::new();
                    for _ in 0..rng.gen_range(0..6usize) {
                        picked.insert(classes[rng.gen_range(0..classes.len())]);
                    }
                    for tooth in picked {
                        let (x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
                        let (w, h) = (rng.gen_range(4.0..40.0), rng.gen_range(4.0..40.0));
                        annotations.push(CocoAnnotation {
                            id: ann_id,
                            image_id: id,
                            category_id: u32::from(tooth.code()),
                            bbox: [x, y, w, h],
                            segmentation: vec![rect_poly(x, y, w, h).to_flat()],
                            area: w * h,
                        });
                        ann_id += 1;
                    }
                }
                let d = CocoDataset {
                    images,
                    annotations,
                    categories: fdi_categories(),
                };
                let path = dir.path().join(format!("d{trial}.json"));
                panodent_core::coco::serialize_dataset(&d, &path).unwrap();
                let parsed = panodent_core::coco::parse_dataset(&path).unwrap();
                assert_eq!(parsed, d);
            }

            // Each violation is rejected with the offending id in the message.
            let base = gt_dataset(&[(1, vec![(11, bbox(0.0, 0.0, 10.0, 10.0))])]);
            let mut dangling = base.clone();
            dangling.annotations[0].image_id = 77;
            let err = dangling.validate().unwrap_err().to_string();
            assert!(err.contains("annotation 1") && err.contains("77"), "{err}");

            let mut bad_cat = base.clone();
            bad_cat.annotations[0].category_id = 29;
            let err = bad_cat.validate().unwrap_err().to_string();
            assert!(err.contains("annotation 1"), "{err}");

            let mut degenerate = base.clone();
            degenerate.annotations[0].segmentation = vec![vec![0.0, 0.0, 1.0, 1.0]];
            let err = degenerate.validate().unwrap_err().to_string();
            assert!(err.contains("annotation 1"), "{err}");

            let mut dup_img = base.clone();
            dup_img.images.push(dup_img.images[0].clone());
            let err = dup_img.validate().unwrap_err().to_string();
            assert!(err.contains("image id 1"), "{err}");

            let mut dup_ann = base.clone();
            dup_ann.annotations.push(dup_ann.annotations[0].clone());
            let err = dup_ann.validate().unwrap_err().to_string();
            assert!(err.contains("annotation id 1"), "{err}");
        },
    );
}
