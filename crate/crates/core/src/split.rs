//! Deterministic multi-label iterative stratified splitting.
//!
//! Images carry a label set (the tooth classes present); the splitter walks
//! labels from rarest to most common, placing each image into the split that
//! most wants that label. Split sizes are pinned up front by largest-remainder
//! rounding, so the requested ratios are met exactly.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coco::CocoDataset;
use crate::dental::ToothClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub name: String,
    pub fraction: f64,
}

/// Requested splits plus the seed driving tie-break shuffling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: Vec<SplitRatio>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: Vec<(&str, f64)>, seed: u64) -> Self {
        Self {
            ratios: ratios
                .into_iter()
                .map(|(name, fraction)| SplitRatio {
                    name: name.to_string(),
                    fraction,
                })
                .collect(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::InvalidSplitSpec("no splits requested".into()));
        }
        let mut names = HashSet::new();
        for r in &self.ratios {
            if r.fraction <= 0.0 || !r.fraction.is_finite() {
                return Err(Error::InvalidSplitSpec(format!(
                    "fraction {} for split '{}' must be positive",
                    r.fraction, r.name
                )));
            }
            if !names.insert(r.name.as_str()) {
                return Err(Error::InvalidSplitSpec(format!(
                    "duplicate split name '{}'",
                    r.name
                )));
            }
        }
        let sum: f64 = self.ratios.iter().map(|r| r.fraction).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplitSpec(format!(
                "fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Split sizes for `n` images: floor(fraction * n) each, remainder seats
    /// going to the largest fractional parts (ties to the lower index).
    pub fn target_sizes(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut sizes: Vec<usize> = Vec::with_capacity(self.ratios.len());
        let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(self.ratios.len());
        for (i, r) in self.ratios.iter().enumerate() {
            let exact = r.fraction * n as f64;
            let base = exact.floor();
            sizes.push(base as usize);
            remainders.push((i, exact - base));
        }
        let assigned: usize = sizes.iter().sum();
        remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for k in 0..n - assigned {
            sizes[remainders[k].0] += 1;
        }
        for (size, r) in sizes.iter().zip(&self.ratios) {
            if *size == 0 {
                return Err(Error::InvalidSplitSpec(format!(
                    "split '{}' would receive zero images",
                    r.name
                )));
            }
        }
        Ok(sizes)
    }
}

/// The result of a split: every image id mapped to a split name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub splits: Vec<String>,
    pub by_image: BTreeMap<u64, String>,
}

impl SplitAssignment {
    pub fn image_ids_of(&self, split: &str) -> HashSet<u64> {
        self.by_image
            .iter()
            .filter(|(_, s)| s.as_str() == split)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn size_of(&self, split: &str) -> usize {
        self.by_image
            .values()
            .filter(|s| s.as_str() == split)
            .count()
    }
}

/// Iterative stratification over the multi-label image set.
///
/// Repeatedly take the label with the fewest remaining unassigned images and
/// hand its images to the split with the greatest remaining desire for that
/// label; ties fall to the split with the most remaining overall capacity,
/// then to the lowest split index. Images are visited in seeded shuffle
/// order, so the whole procedure is deterministic in (dataset, spec).
pub fn stratified_split(d: &CocoDataset, spec: &SplitSpec) -> Result<SplitAssignment> {
    spec.validate()?;
    if d.images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = d.images.len();
    let n_splits = spec.ratios.len();
    let mut capacity = spec.target_sizes(n)?;

    // Image label sets in seeded shuffle order.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let labels: Vec<Vec<ToothClass>> = d.images.iter().map(|img| d.labels_of(img.id)).collect();

    // Per-label remaining desire per split (fraction * label count).
    let mut desire: BTreeMap<ToothClass, Vec<f64>> = BTreeMap::new();
    let mut remaining: BTreeMap<ToothClass, usize> = BTreeMap::new();
    for label_set in &labels {
        for &label in label_set {
            *remaining.entry(label).or_insert(0) += 1;
        }
    }
    for (&label, &count) in &remaining {
        desire.insert(
            label,
            spec.ratios
                .iter()
                .map(|r| r.fraction * count as f64)
                .collect(),
        );
    }

    let mut assigned: Vec<Option<usize>> = vec![None; n];

    // Rarest label still carrying unassigned images; ties to the lowest code.
    while let Some((&label, _)) = remaining
        .iter()
        .filter(|(_, &c)| c > 0)
        .min_by(|(la, ca), (lb, cb)| ca.cmp(cb).then(la.cmp(lb)))
    {
        for &img_idx in &order {
            if assigned[img_idx].is_some() || !labels[img_idx].contains(&label) {
                continue;
            }
            let label_desire = &desire[&label];
            let mut best: Option<usize> = None;
            for j in 0..n_splits {
                if capacity[j] == 0 {
                    continue;
                }
                best = match best {
                    None => Some(j),
                    Some(b) => {
                        let better = label_desire[j] > label_desire[b]
                            || (label_desire[j] == label_desire[b] && capacity[j] > capacity[b]);
                        Some(if better { j } else { b })
                    }
                };
            }
            let j = best.expect("capacities sum to the number of images");
            assigned[img_idx] = Some(j);
            capacity[j] -= 1;
            for &l in &labels[img_idx] {
                desire.get_mut(&l).expect("label seen")[j] -= 1.0;
                *remaining.get_mut(&l).expect("label seen") -= 1;
            }
        }
    }

    // Label-free images go wherever the most capacity remains.
    for &img_idx in &order {
        if assigned[img_idx].is_some() {
            continue;
        }
        let mut best = None;
        for j in 0..n_splits {
            if capacity[j] == 0 {
                continue;
            }
            best = match best {
                None => Some(j),
                Some(b) => Some(if capacity[j] > capacity[b] { j } else { b }),
            };
        }
        let j = best.expect("capacities sum to the number of images");
        assigned[img_idx] = Some(j);
        capacity[j] -= 1;
    }

    let by_image = d
        .images
        .iter()
        .zip(&assigned)
        .map(|(img, a)| {
            (
                img.id,
                spec.ratios[a.expect("all images assigned")].name.clone(),
            )
        })
        .collect();
    Ok(SplitAssignment {
        splits: spec.ratios.iter().map(|r| r.name.clone()).collect(),
        by_image,
    })
}

/// Mean absolute deviation between observed per-label split proportions and
/// the target fractions; the balance score used to judge split quality.
pub fn stratification_deviation(
    d: &CocoDataset,
    assignment: &SplitAssignment,
    spec: &SplitSpec,
) -> f64 {
    let mut per_label: BTreeMap<ToothClass, Vec<usize>> = BTreeMap::new();
    let split_index: BTreeMap<&str, usize> = spec
        .ratios
        .iter()
        .enumerate()
        .map(|(i, r)| (r.name.as_str(), i))
        .collect();
    for img in &d.images {
        let split = split_index[assignment.by_image[&img.id].as_str()];
        for label in d.labels_of(img.id) {
            per_label
                .entry(label)
                .or_insert_with(|| vec![0; spec.ratios.len()])[split] += 1;
        }
    }
    let mut total = 0.0;
    let mut cells = 0usize;
    for counts in per_label.values() {
        let label_total: usize = counts.iter().sum();
        for (count, r) in counts.iter().zip(&spec.ratios) {
            total += (*count as f64 / label_total as f64 - r.fraction).abs();
            cells += 1;
        }
    }
    if cells == 0 {
        0.0
    } else {
        total / cells as f64
    }
}

/// Materialize one dataset per split, in spec order.
pub fn split_dataset(d: &CocoDataset, assignment: &SplitAssignment) -> Vec<(String, CocoDataset)> {
    assignment
        .splits
        .iter()
        .map(|name| {
            let keep = assignment.image_ids_of(name);
            (name.clone(), d.subset(&keep))
        })
        .collect()
}
