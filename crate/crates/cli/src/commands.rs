//! Subcommand implementations. Each one resolves its options from
//! (defaults <- config file <- flags), validates all inputs up front, does
//! the work through the core library, and writes a run manifest next to its
//! outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use panodent_core::augment::{augment_dataset, AugmentConfig, AugmentStrategy};
use panodent_core::coco::{
    self, load_dataset_images, parse_dataset, parse_predictions, serialize_dataset,
    serialize_predictions, ImageEntry,
};
use panodent_core::dental::{AnnotatedImage, BBox, Prediction};
use panodent_core::eval::{
    compare_reports, confusion_csv, evaluate as eval_run, render_delta, render_report, EvalConfig,
    EvalReport, IouMode,
};
use panodent_core::imgproc::{crop_pad_resize, equalize_histogram, PreprocessOptions};
use panodent_core::matching::{hungarian_loss, LossWeights, SlotPrediction};
use panodent_core::postproc::{postprocess as postproc_run, SectionGeometry};
use panodent_core::raster;
use panodent_core::split::{split_dataset, stratified_split, SplitRatio, SplitSpec};
use panodent_core::synth::{
    build_tooth_bank, load_tooth_bank, save_tooth_bank, synthesize_batch, EmptyPanoramic,
    PatientSpec, SynthOptions,
};

use crate::config::{validate_input_paths, PipelineConfig};
use crate::manifest::ManifestBuilder;
use crate::Globals;

fn require_seed(globals: Globals) -> Result<u64> {
    globals.seed.ok_or_else(|| {
        anyhow::anyhow!("this command is randomized; pass --seed (or set it in the config file)")
    })
}

fn print_warnings(warnings: &[String], globals: Globals) {
    if globals.quiet {
        return;
    }
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn say(globals: Globals, msg: String) {
    if !globals.quiet {
        println!("{msg}");
    }
}

fn detail(globals: Globals, label: &str, value: &impl Serialize) {
    if globals.verbose && !globals.quiet {
        eprintln!(
            "{label}: {}",
            serde_json::to_string(value).unwrap_or_default()
        );
    }
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Ground-truth COCO file.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory holding the PNGs referenced by the dataset.
    #[arg(long)]
    images: PathBuf,
    /// Output directory (dataset.json + PNGs).
    #[arg(long)]
    out: PathBuf,
    /// Output side length in pixels.
    #[arg(long)]
    size: Option<u32>,
    /// Crop margin around the annotation union, per side.
    #[arg(long)]
    margin: Option<f64>,
    /// Padding intensity.
    #[arg(long)]
    pad: Option<u8>,
    /// Skip histogram equalization.
    #[arg(long)]
    no_equalize: bool,
    /// JSON map of image id to [x, y, w, h] crop override.
    #[arg(long)]
    roi_file: Option<PathBuf>,
}

pub fn preprocess(args: PreprocessArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    let mut inputs = vec![("dataset", &args.dataset), ("images", &args.images)];
    if let Some(roi) = &args.roi_file {
        inputs.push(("roi-file", roi));
    }
    validate_input_paths(&inputs)?;

    let opts = PreprocessOptions {
        target_size: args
            .size
            .or(cfg.preprocess.target_size)
            .unwrap_or(PreprocessOptions::default().target_size),
        margin_frac: args
            .margin
            .or(cfg.preprocess.margin_frac)
            .unwrap_or(PreprocessOptions::default().margin_frac),
        pad_value: args
            .pad
            .or(cfg.preprocess.pad_value)
            .unwrap_or(PreprocessOptions::default().pad_value),
    };
    let equalize = if args.no_equalize {
        false
    } else {
        cfg.preprocess.equalize.unwrap_or(true)
    };
    let mut roi_overrides = cfg.preprocess.roi.clone();
    if let Some(path) = &args.roi_file {
        let text = fs::read_to_string(path)?;
        let parsed: BTreeMap<u64, [f64; 4]> = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse roi file {}", path.display()))?;
        roi_overrides.extend(parsed);
    }

    let mut manifest = ManifestBuilder::new("preprocess", globals.seed, globals.threads);
    manifest
        .input("dataset", args.dataset.display())
        .input("images", args.images.display())
        .input("size", opts.target_size)
        .input("margin", opts.margin_frac)
        .input("equalize", equalize);

    detail(globals, "preprocess options", &opts);
    let dataset = parse_dataset(&args.dataset)?;
    let (entries, warnings) = load_dataset_images(&dataset, &args.images)?;
    print_warnings(&warnings, globals);

    let processed: Vec<panodent_core::Result<(ImageEntry, Vec<String>)>> = entries
        .par_iter()
        .map(|entry| {
            let img = &entry.image;
            let pixels = if equalize {
                equalize_histogram(&img.pixels)?
            } else {
                img.pixels.clone()
            };
            let roi = roi_overrides
                .get(&img.id)
                .map(|&[x, y, w, h]| BBox::new(x, y, w, h))
                .transpose()?;
            let out = crop_pad_resize(&pixels, &img.annotations, roi, &opts)?;
            let image = AnnotatedImage::new(img.id, out.image, img.patient_age, out.annotations)?;
            Ok((
                ImageEntry {
                    image,
                    file_name: entry.file_name.clone(),
                },
                out.dropped,
            ))
        })
        .collect();

    let mut out_entries = Vec::with_capacity(processed.len());
    for result in processed {
        let (entry, dropped) = result?;
        print_warnings(&dropped, globals);
        out_entries.push(entry);
    }
    coco::write_dataset_with_images(&out_entries, &args.out, "dataset.json")?;
    manifest.output(args.out.join("dataset.json").display());
    manifest.write(&args.out)?;
    say(
        globals,
        format!(
            "preprocessed {} images to {}x{} in {}",
            out_entries.len(),
            opts.target_size,
            opts.target_size,
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// split
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory (<name>.json per split + split_manifest.json).
    #[arg(long)]
    out: PathBuf,
    /// Repeated name=fraction pairs, e.g. --ratio train=0.6 --ratio test=0.4.
    #[arg(long = "ratio", value_parser = parse_ratio)]
    ratios: Vec<SplitRatio>,
}

fn parse_ratio(s: &str) -> Result<SplitRatio, String> {
    let (name, frac) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=fraction, got '{s}'"))?;
    Ok(SplitRatio {
        name: name.to_string(),
        fraction: frac.parse().map_err(|e| format!("bad fraction: {e}"))?,
    })
}

pub fn split(args: SplitArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("dataset", &args.dataset)])?;
    let seed = require_seed(globals)?;
    let ratios = if args.ratios.is_empty() {
        cfg.split
            .ratios
            .clone()
            .ok_or_else(|| anyhow::anyhow!("no split ratios given (flag --ratio or config)"))?
    } else {
        args.ratios
    };
    let spec = SplitSpec { ratios, seed };

    let mut manifest = ManifestBuilder::new("split", Some(seed), globals.threads);
    manifest.input("dataset", args.dataset.display());

    detail(globals, "split spec", &spec);
    let dataset = parse_dataset(&args.dataset)?;
    let assignment = stratified_split(&dataset, &spec)?;
    fs::create_dir_all(&args.out)?;
    for (name, subset) in split_dataset(&dataset, &assignment) {
        let path = args.out.join(format!("{name}.json"));
        serialize_dataset(&subset, &path)?;
        manifest.output(path.display());
        say(globals, format!("{name}: {} images", subset.images.len()));
    }
    let manifest_path = args.out.join("split_manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&assignment.by_image)? + "\n",
    )?;
    manifest.output(manifest_path.display());
    manifest.write(&args.out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rotation_range: Option<f64>,
    #[arg(long)]
    translation_range: Option<f64>,
    /// Add translation to the transform set (config 2).
    #[arg(long)]
    enable_translation: bool,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    contrast_lo: Option<f64>,
    #[arg(long)]
    contrast_hi: Option<f64>,
    /// uniform | deciduous_priority
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<AugmentStrategy>,
    #[arg(long)]
    copies_uniform: Option<u32>,
    #[arg(long)]
    copies_deciduous: Option<u32>,
    #[arg(long)]
    copies_other: Option<u32>,
}

fn parse_strategy(s: &str) -> Result<AugmentStrategy, String> {
    match s {
        "uniform" => Ok(AugmentStrategy::Uniform),
        "deciduous_priority" => Ok(AugmentStrategy::DeciduousPriority),
        other => Err(format!(
            "unknown strategy '{other}' (expected uniform or deciduous_priority)"
        )),
    }
}

pub fn augment(args: AugmentArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("dataset", &args.dataset), ("images", &args.images)])?;
    let seed = require_seed(globals)?;
    let defaults = AugmentConfig::default();
    let section = &cfg.augment;
    let aug = AugmentConfig {
        rotation_range_deg: args
            .rotation_range
            .or(section.rotation_range_deg)
            .unwrap_or(defaults.rotation_range_deg),
        translation_range_frac: args
            .translation_range
            .or(section.translation_range_frac)
            .unwrap_or(defaults.translation_range_frac),
        enable_translation: args.enable_translation || section.enable_translation.unwrap_or(false),
        noise_sigma: args
            .noise_sigma
            .or(section.noise_sigma)
            .unwrap_or(defaults.noise_sigma),
        contrast_range: (
            args.contrast_lo
                .or(section.contrast_lo)
                .unwrap_or(defaults.contrast_range.0),
            args.contrast_hi
                .or(section.contrast_hi)
                .unwrap_or(defaults.contrast_range.1),
        ),
        strategy: args
            .strategy
            .or(section.strategy)
            .unwrap_or(defaults.strategy),
        copies_uniform: args
            .copies_uniform
            .or(section.copies_uniform)
            .unwrap_or(defaults.copies_uniform),
        copies_deciduous: args
            .copies_deciduous
            .or(section.copies_deciduous)
            .unwrap_or(defaults.copies_deciduous),
        copies_other: args
            .copies_other
            .or(section.copies_other)
            .unwrap_or(defaults.copies_other),
        seed,
    };

    let mut manifest = ManifestBuilder::new("augment", Some(seed), globals.threads);
    manifest
        .input("dataset", args.dataset.display())
        .input("images", args.images.display())
        .input("config", serde_json::to_string(&aug)?);

    detail(globals, "augment config", &aug);
    let dataset = parse_dataset(&args.dataset)?;
    let (entries, warnings) = load_dataset_images(&dataset, &args.images)?;
    print_warnings(&warnings, globals);
    let outcome = augment_dataset(&entries, &aug)?;
    print_warnings(&outcome.warnings, globals);
    coco::write_dataset_with_images(&outcome.entries, &args.out, "dataset.json")?;
    manifest.output(args.out.join("dataset.json").display());
    manifest.write(&args.out)?;
    say(
        globals,
        format!(
            "augmented {} source images into {} new ones ({} total)",
            entries.len(),
            outcome.new_images,
            outcome.entries.len()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bank
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BankArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    images: PathBuf,
    /// Output bank directory (bank.json + patch/mask PNGs).
    #[arg(long)]
    out: PathBuf,
}

pub fn bank(args: BankArgs, _cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("dataset", &args.dataset), ("images", &args.images)])?;
    let mut manifest = ManifestBuilder::new("bank", globals.seed, globals.threads);
    manifest
        .input("dataset", args.dataset.display())
        .input("images", args.images.display());

    let dataset = parse_dataset(&args.dataset)?;
    let (entries, warnings) = load_dataset_images(&dataset, &args.images)?;
    print_warnings(&warnings, globals);
    let images: Vec<AnnotatedImage> = entries.into_iter().map(|e| e.image).collect();
    let (bank, bank_warnings) = build_tooth_bank(&images)?;
    print_warnings(&bank_warnings, globals);
    save_tooth_bank(&bank, &args.out)?;
    manifest.output(args.out.join("bank.json").display());
    manifest.write(&args.out)?;
    say(
        globals,
        format!(
            "extracted {} tooth patches to {}",
            bank.len(),
            args.out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct EmptyManifestEntry {
    file: String,
    id: u64,
    #[serde(default)]
    age: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Directory of empty-panoramic PNGs containing manifest.json.
    #[arg(long)]
    empties: PathBuf,
    /// Empties manifest (defaults to <empties>/manifest.json).
    #[arg(long)]
    empties_manifest: Option<PathBuf>,
    /// Tooth bank directory written by `bank`.
    #[arg(long)]
    bank: PathBuf,
    /// JSON array of {age, teeth: [codes]} patient specs.
    #[arg(long)]
    specs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Age-match tolerance in years.
    #[arg(long)]
    age_tolerance: Option<u32>,
    /// Skip teeth whose placement IoU with an already placed tooth exceeds
    /// this threshold.
    #[arg(long)]
    overlap_rejection_iou: Option<f64>,
}

pub fn synthesize(args: SynthesizeArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    let manifest_path = args
        .empties_manifest
        .clone()
        .unwrap_or_else(|| args.empties.join("manifest.json"));
    validate_input_paths(&[
        ("empties", &args.empties),
        ("empties-manifest", &manifest_path),
        ("bank", &args.bank),
        ("specs", &args.specs),
    ])?;
    let seed = require_seed(globals)?;
    let opts = SynthOptions {
        age_tolerance_years: args
            .age_tolerance
            .or(cfg.synthesize.age_tolerance_years)
            .unwrap_or(0),
        overlap_rejection_iou: args
            .overlap_rejection_iou
            .or(cfg.synthesize.overlap_rejection_iou),
    };

    let mut manifest = ManifestBuilder::new("synthesize", Some(seed), globals.threads);
    manifest
        .input("empties", args.empties.display())
        .input("bank", args.bank.display())
        .input("specs", args.specs.display())
        .input("age_tolerance", opts.age_tolerance_years);

    let entries: Vec<EmptyManifestEntry> =
        serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .with_context(|| format!("cannot parse {}", manifest_path.display()))?;
    let empties: Vec<EmptyPanoramic> = entries
        .iter()
        .map(|e| {
            Ok(EmptyPanoramic {
                id: e.id,
                pixels: raster::load_png(&args.empties.join(&e.file))?,
                age: e.age,
            })
        })
        .collect::<panodent_core::Result<_>>()?;
    let bank = load_tooth_bank(&args.bank)?;
    let specs: Vec<PatientSpec> = serde_json::from_str(&fs::read_to_string(&args.specs)?)
        .with_context(|| format!("cannot parse {}", args.specs.display()))?;

    detail(globals, "synthesis options", &opts);
    let batch = synthesize_batch(&specs, &empties, &bank, seed, &opts)?;
    for (i, err) in &batch.errors {
        eprintln!("error: spec {i}: {err}");
    }
    for record in &batch.provenance {
        print_warnings(&record.skipped, globals);
    }
    coco::write_dataset_with_images(&batch.entries, &args.out, "dataset.json")?;

    #[derive(Serialize)]
    struct ProvenanceFile<'a> {
        overlap_pairs: usize,
        records: &'a [panodent_core::synth::ProvenanceRecord],
        errors: &'a [(usize, String)],
    }
    let provenance_path = args.out.join("provenance.json");
    fs::write(
        &provenance_path,
        serde_json::to_string_pretty(&ProvenanceFile {
            overlap_pairs: batch.overlap_pairs,
            records: &batch.provenance,
            errors: &batch.errors,
        })? + "\n",
    )?;
    manifest.output(args.out.join("dataset.json").display());
    manifest.output(provenance_path.display());
    manifest.write(&args.out)?;
    say(
        globals,
        format!(
            "synthesized {} images ({} overlapping annotation pairs, {} failures)",
            batch.entries.len(),
            batch.overlap_pairs,
            batch.errors.len()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Ground-truth COCO file.
    #[arg(long)]
    gt: PathBuf,
    /// COCO results array.
    #[arg(long)]
    pred: PathBuf,
    /// IoU threshold.
    #[arg(long)]
    iou: Option<f64>,
    /// bbox | mask
    #[arg(long, value_parser = parse_mode)]
    mode: Option<IouMode>,
    #[arg(long)]
    score_floor: Option<f64>,
    /// Report JSON output path.
    #[arg(long)]
    report: PathBuf,
    /// Confusion-matrix CSV path (default: <report stem>_confusion.csv).
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<IouMode, String> {
    match s {
        "bbox" => Ok(IouMode::Bbox),
        "mask" => Ok(IouMode::Mask),
        other => Err(format!("unknown mode '{other}' (expected bbox or mask)")),
    }
}

pub fn evaluate(args: EvaluateArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("gt", &args.gt), ("pred", &args.pred)])?;
    let eval_cfg = EvalConfig {
        iou_threshold: args
            .iou
            .or(cfg.evaluate.iou_threshold)
            .unwrap_or(EvalConfig::default().iou_threshold),
        iou_mode: args
            .mode
            .or(cfg.evaluate.iou_mode)
            .unwrap_or(EvalConfig::default().iou_mode),
        score_floor: args
            .score_floor
            .or(cfg.evaluate.score_floor)
            .unwrap_or(EvalConfig::default().score_floor),
    };
    let out_dir = args
        .report
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut manifest = ManifestBuilder::new("evaluate", globals.seed, globals.threads);
    manifest
        .input("gt", args.gt.display())
        .input("pred", args.pred.display())
        .input("iou", eval_cfg.iou_threshold);

    detail(globals, "evaluation config", &eval_cfg);
    let gt = parse_dataset(&args.gt)?;
    let preds = parse_predictions(&args.pred)?;
    let report = eval_run(&preds, &gt, &eval_cfg)?;

    fs::create_dir_all(&out_dir)?;
    fs::write(&args.report, serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.output(args.report.display());
    let csv_path = args.confusion_csv.clone().unwrap_or_else(|| {
        let stem = args
            .report
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "report".into());
        out_dir.join(format!("{stem}_confusion.csv"))
    });
    fs::write(&csv_path, confusion_csv(&report))?;
    manifest.output(csv_path.display());
    manifest.write(&out_dir)?;
    say(globals, render_report(&report));
    Ok(())
}

// ---------------------------------------------------------------------------
// postprocess
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Prediction file to correct.
    #[arg(long)]
    pred: PathBuf,
    /// Corrected prediction file.
    #[arg(long)]
    out: PathBuf,
    /// Vertical midline.
    #[arg(long)]
    xmid: Option<f64>,
    /// Occlusal line.
    #[arg(long)]
    ymid: Option<f64>,
    #[arg(long)]
    dead_zone: Option<f64>,
    /// JSON map of image id to [x_mid, y_mid] overrides.
    #[arg(long)]
    geometry: Option<PathBuf>,
}

pub fn postprocess(args: PostprocessArgs, cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    let mut inputs = vec![("pred", &args.pred)];
    if let Some(g) = &args.geometry {
        inputs.push(("geometry", g));
    }
    validate_input_paths(&inputs)?;
    let defaults = SectionGeometry::default();
    let mut geo = SectionGeometry {
        x_mid: args
            .xmid
            .or(cfg.postprocess.x_mid)
            .unwrap_or(defaults.x_mid),
        y_mid: args
            .ymid
            .or(cfg.postprocess.y_mid)
            .unwrap_or(defaults.y_mid),
        dead_zone: args.dead_zone.or(cfg.postprocess.dead_zone).unwrap_or(0.0),
        overrides: cfg.postprocess.geometry_overrides.clone(),
    };
    if let Some(path) = &args.geometry {
        let parsed: BTreeMap<u64, (f64, f64)> = serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("cannot parse {}", path.display()))?;
        geo.overrides.extend(parsed);
    }

    let out_dir = args
        .out
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let mut manifest = ManifestBuilder::new("postprocess", globals.seed, globals.threads);
    manifest
        .input("pred", args.pred.display())
        .input("xmid", geo.x_mid)
        .input("ymid", geo.y_mid);

    detail(globals, "section geometry", &geo);
    let preds = parse_predictions(&args.pred)?;
    let outcome = postproc_run(&preds, &geo)?;
    fs::create_dir_all(&out_dir)?;
    serialize_predictions(&outcome.predictions, &args.out)?;
    let changes_path = {
        let stem = args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".into());
        out_dir.join(format!("{stem}_changes.json"))
    };
    fs::write(
        &changes_path,
        serde_json::to_string_pretty(&outcome.changes)? + "\n",
    )?;
    manifest.output(args.out.display());
    manifest.output(changes_path.display());
    manifest.write(&out_dir)?;
    say(
        globals,
        format!(
            "postprocessed {} predictions: {} survive, {} changes logged",
            preds.len(),
            outcome.predictions.len(),
            outcome.changes.len()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline report JSON.
    #[arg(long)]
    a: PathBuf,
    /// Comparison report JSON.
    #[arg(long)]
    b: PathBuf,
    /// Optional delta JSON output.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn compare(args: CompareArgs, _cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("a", &args.a), ("b", &args.b)])?;
    let load = |path: &PathBuf| -> Result<EvalReport> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .with_context(|| format!("cannot parse report {}", path.display()))
    };
    let delta = compare_reports(&load(&args.a)?, &load(&args.b)?);
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&delta)? + "\n")?;
    }
    say(globals, render_delta(&delta));
    Ok(())
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Normalization size for the L1 box term.
    #[arg(long, default_value_t = 1024.0)]
    image_size: f64,
    #[arg(long, default_value_t = 1.0)]
    w_class: f64,
    #[arg(long, default_value_t = 5.0)]
    w_l1: f64,
    #[arg(long, default_value_t = 2.0)]
    w_giou: f64,
    #[arg(long, default_value_t = 1.0)]
    w_dice: f64,
}

/// Matching-loss breakdown for debugging training code. Detection files
/// carry (class, score) only, so slot probabilities are reconstructed as
/// p(class) = score with the rest on no-object; slots are padded with
/// certain no-object entries when an image has fewer predictions than
/// ground truths.
pub fn loss(args: LossArgs, _cfg: &PipelineConfig, globals: Globals) -> Result<()> {
    validate_input_paths(&[("gt", &args.gt), ("pred", &args.pred)])?;
    let weights = LossWeights {
        w_class: args.w_class,
        w_l1: args.w_l1,
        w_giou: args.w_giou,
        w_dice: args.w_dice,
    };
    let gt = parse_dataset(&args.gt)?;
    let preds = parse_predictions(&args.pred)?;

    let mut by_image: BTreeMap<u64, Vec<&Prediction>> = BTreeMap::new();
    for p in &preds {
        by_image.entry(p.image_id).or_default().push(p);
    }
    let mut totals = (0.0, 0.0, 0.0, 0.0, 0.0);
    for img in &gt.images {
        let gts: Vec<_> = gt
            .annotations
            .iter()
            .filter(|a| a.image_id == img.id)
            .map(coco::annotation_to_domain)
            .collect::<panodent_core::Result<_>>()?;
        let image_preds = by_image.get(&img.id).map(Vec::as_slice).unwrap_or(&[]);
        if gts.is_empty() && image_preds.is_empty() {
            continue;
        }
        let mut slots: Vec<SlotPrediction> = image_preds
            .iter()
            .map(|p| SlotPrediction::from_scored(p.tooth, p.bbox, p.score, p.mask.clone()))
            .collect();
        while slots.len() < gts.len() {
            slots.push(SlotPrediction::certain_no_object(
                BBox::new(0.0, 0.0, 1.0, 1.0).expect("static box"),
            ));
        }
        let breakdown = hungarian_loss(
            &slots,
            &gts,
            &weights,
            args.image_size,
            (img.width, img.height),
        )?;
        say(
            globals,
            format!(
                "image {}: total {:.6} (class {:.6}, l1 {:.6}, giou {:.6}, dice {:.6})",
                img.id,
                breakdown.total,
                breakdown.class_term,
                breakdown.l1_term,
                breakdown.giou_term,
                breakdown.dice_term
            ),
        );
        totals.0 += breakdown.total;
        totals.1 += breakdown.class_term;
        totals.2 += breakdown.l1_term;
        totals.3 += breakdown.giou_term;
        totals.4 += breakdown.dice_term;
    }
    println!(
        "total {:.6} (class {:.6}, l1 {:.6}, giou {:.6}, dice {:.6})",
        totals.0, totals.1, totals.2, totals.3, totals.4
    );
    Ok(())
}
