//! Shared fixture builders for the benchmark suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use panodent_core::coco::{fdi_categories, CocoAnnotation, CocoDataset, CocoImage};
use panodent_core::dental::{PolygonMask, ToothClass};
use panodent_core::matching::CostMatrix;
use panodent_core::raster::GrayImage;

pub fn random_cost_matrix(n: usize, seed: u64) -> CostMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CostMatrix::from_rows(
        (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect(),
    )
    .expect("square and finite")
}

pub fn noisy_image(side: u32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..side as usize * side as usize)
        .map(|_| rng.gen())
        .collect();
    GrayImage::from_raw(side, side, data).expect("sized buffer")
}

/// A jagged closed contour with `n` vertices around (cx, cy).
pub fn star_polygon(cx: f64, cy: f64, n: usize, r_outer: f64, r_inner: f64) -> PolygonMask {
    let vertices = (0..n)
        .map(|i| {
            let angle = i as f64 / n as f64 * std::f64::consts::TAU;
            let r = if i % 2 == 0 { r_outer } else { r_inner };
            (cx + r * angle.cos(), cy + r * angle.sin())
        })
        .collect();
    PolygonMask::new(vertices).expect("n >= 3")
}

/// A label-only dataset shaped like the target corpus: `n` images with
/// random tooth subsets.
pub fn label_dataset(n: usize, seed: u64) -> CocoDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes: Vec<ToothClass> = ToothClass::all().collect();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut ann_id = 1u64;
    for i in 0..n {
        let id = i as u64 + 1;
        images.push(CocoImage {
            id,
            file_name: format!("{id}.png"),
            width: 1024,
            height: 1024,
            age: Some(rng.gen_range(4..80)),
        });
        let count = rng.gen_range(8..28usize);
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < count {
            picked.insert(classes[rng.gen_range(0..classes.len())]);
        }
        for tooth in picked {
            let x = rng.gen_range(0.0..950.0);
            let y = rng.gen_range(0.0..950.0);
            let (w, h) = (rng.gen_range(20.0..60.0), rng.gen_range(20.0..70.0));
            annotations.push(CocoAnnotation {
                id: ann_id,
                image_id: id,
                category_id: u32::from(tooth.code()),
                bbox: [x, y, w, h],
                segmentation: vec![vec![x, y, x + w, y, x + w, y + h, x, y + h]],
                area: w * h,
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
