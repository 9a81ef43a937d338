use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssrecon::dataio::dataset::{
    derive_seed, ensure_writable, generate_phantoms, load_mask, load_phantoms, save_mask, save_phantoms, write_json,
    AcquisitionSpec,
};
use ssrecon::dataio::rten::{self, DType};
use ssrecon::kspace;
use ssrecon::model::reconstruct_image;
use ssrecon::trainer::{self, mean_of, SampleMetrics, TrainConfig};
use ssrecon::{Checkpoint, Dataset, Variant};

use crate::settings::resolve;
use crate::{CliError, EvaluateArgs, MakeMasksArgs, PhantomGenArgs, PrepareArgs, ReconstructArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhantomGen {
    #[serde(default = "default_n")]
    n: usize,
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_variant")]
    variant: String,
    out: PathBuf,
    #[serde(default)]
    force: bool,
}

fn default_n() -> usize {
    64
}
fn default_count() -> usize {
    20
}
fn default_variant() -> String {
    "shepp".into()
}

pub fn phantom_gen(args: PhantomGenArgs) -> Result<(), CliError> {
    let s: PhantomGen = resolve(&args, args.config.as_deref())?;
    let variant: Variant = s.variant.parse().map_err(|e: ssrecon::Error| usage(e.to_string()))?;
    if s.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let images = generate_phantoms(s.n, variant, s.count, s.seed)?;
    let manifest = save_phantoms(&s.out, s.n, variant, s.seed, &images, s.force)?;
    println!("wrote {} phantoms ({}x{}) to {}", images.len(), s.n, s.n, manifest.display());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MakeMasks {
    size: usize,
    width: Option<usize>,
    #[serde(default = "default_accel")]
    accel: f64,
    #[serde(default = "default_acs")]
    acs: usize,
    #[serde(default = "default_sel_acs")]
    sel_acs: usize,
    #[serde(default)]
    seed: u64,
    subset_seed: Option<u64>,
    #[serde(default = "default_mask_dir")]
    out: PathBuf,
    #[serde(default)]
    force: bool,
}

fn default_accel() -> f64 {
    4.0
}
fn default_acs() -> usize {
    24
}
fn default_sel_acs() -> usize {
    16
}
fn default_mask_dir() -> PathBuf {
    PathBuf::from("masks")
}

#[derive(Serialize)]
struct MaskSummary {
    height: usize,
    width: usize,
    accel: f64,
    parent_count: usize,
    target_count: f64,
    subset1_count: usize,
    subset2_count: usize,
    subset1_fraction: f64,
    subset2_fraction: f64,
    coverage: f64,
    overlap: f64,
}

pub fn make_masks(args: MakeMasksArgs) -> Result<(), CliError> {
    let s: MakeMasks = resolve(&args, args.config.as_deref())?;
    let (h, w) = (s.size, s.width.unwrap_or(s.size));
    let parent = kspace::make_undersampling_mask(h, w, s.accel, s.acs, s.seed)?;
    let subset_seed = s.subset_seed.unwrap_or_else(|| derive_seed(s.seed, 0));
    let pair = kspace::make_selection_subsets(&parent, s.sel_acs, subset_seed)?;
    create_dir(&s.out)?;
    save_mask(&s.out.join("parent.rten"), &pair.parent, s.force)?;
    save_mask(&s.out.join("subset1.rten"), &pair.sub1, s.force)?;
    save_mask(&s.out.join("subset2.rten"), &pair.sub2, s.force)?;
    let n = pair.parent.count() as f64;
    let summary = MaskSummary {
        height: h,
        width: w,
        accel: s.accel,
        parent_count: pair.parent.count(),
        target_count: (h * w) as f64 / s.accel,
        subset1_count: pair.sub1.count(),
        subset2_count: pair.sub2.count(),
        subset1_fraction: pair.sub1.count() as f64 / n,
        subset2_fraction: pair.sub2.count() as f64 / n,
        coverage: pair.coverage(),
        overlap: pair.overlap(),
    };
    write_json(&s.out.join("summary.json"), &summary, s.force)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Prepare {
    phantoms: PathBuf,
    out: PathBuf,
    mask: Option<PathBuf>,
    #[serde(default = "default_accel")]
    accel: f64,
    #[serde(default = "default_acs")]
    acs: usize,
    #[serde(default = "default_sel_acs")]
    sel_acs: usize,
    #[serde(default)]
    mask_seed: u64,
    #[serde(default = "default_subset_seed")]
    subset_seed: u64,
    #[serde(default)]
    skip: usize,
    take: Option<usize>,
    #[serde(default)]
    force: bool,
}

fn default_subset_seed() -> u64 {
    1
}

pub fn prepare_dataset(args: PrepareArgs) -> Result<(), CliError> {
    let s: Prepare = resolve(&args, args.config.as_deref())?;
    let all = load_phantoms(&s.phantoms)?;
    let images: Vec<_> = all
        .into_iter()
        .skip(s.skip)
        .take(s.take.unwrap_or(usize::MAX))
        .collect();
    if images.is_empty() {
        return Err(usage("no phantoms selected (check --skip/--take)"));
    }
    let ds = match &s.mask {
        Some(path) => Dataset::prepare_with_mask(&images, &load_mask(path)?, s.sel_acs, s.subset_seed)?,
        None => Dataset::prepare(
            &images,
            &AcquisitionSpec {
                accel: s.accel,
                acs_lines: s.acs,
                sel_acs: s.sel_acs,
                mask_seed: s.mask_seed,
                subset_seed: s.subset_seed,
            },
        )?,
    };
    let manifest = ds.save(&s.out, s.force)?;
    println!("wrote {} samples to {}", ds.len(), manifest.display());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg: TrainConfig = resolve(&args, args.config.as_deref())?;
    if cfg.paths.train.is_none() {
        return Err(usage("a training dataset is required (--train or paths.train)"));
    }
    if cfg.paths.out.is_none() {
        return Err(usage("an output directory is required (--out or paths.out)"));
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let out = trainer::fit(&cfg, args.force)?;
    let dir = cfg.paths.out.as_ref().expect("checked above");
    match out.log.last() {
        Some(last) => println!(
            "trained {} epochs; best epoch {} (val loss {:.6e}); final val loss {:.6e}; outputs in {}",
            out.log.len(),
            out.best_epoch,
            out.log[out.best_epoch.saturating_sub(1)].val_loss,
            last.val_loss,
            dir.display()
        ),
        None => println!("max_epochs = 0: wrote the initial checkpoint to {}", dir.display()),
    }
    Ok(())
}

fn parse_branches(spec: Option<&str>, allow_both: bool) -> Result<Vec<usize>, CliError> {
    match spec.unwrap_or("1") {
        "1" => Ok(vec![1]),
        "2" => Ok(vec![2]),
        "both" if allow_both => Ok(vec![1, 2]),
        other => Err(usage(format!(
            "invalid branch {other:?} (expected 1{})",
            if allow_both { ", 2 or both" } else { " or 2" }
        ))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Reconstruct {
    checkpoint: PathBuf,
    dataset: PathBuf,
    out: PathBuf,
    branch: Option<String>,
    #[serde(default)]
    complex: bool,
    #[serde(default)]
    force: bool,
}

#[derive(Serialize)]
struct ReconEntry {
    id: String,
    path: String,
}

#[derive(Serialize)]
struct ReconManifest {
    checkpoint: PathBuf,
    dataset: PathBuf,
    branch: usize,
    complex: bool,
    images: Vec<ReconEntry>,
}

pub fn reconstruct(args: ReconstructArgs) -> Result<(), CliError> {
    let s: Reconstruct = resolve(&args, args.config.as_deref())?;
    let branch = parse_branches(s.branch.as_deref(), false)?[0];
    let ck = Checkpoint::load(&s.checkpoint)?;
    let params = ck.branch(branch - 1)?;
    let ds = Dataset::load(&s.dataset)?;
    create_dir(&s.out)?;
    let mut images = Vec::with_capacity(ds.len());
    for sample in &ds.samples {
        let x = reconstruct_image(&sample.kspace, sample.mask(), params)?;
        let x = if s.complex { x } else { x.magnitude()? };
        let rel = format!("{}.rten", sample.id);
        let path = s.out.join(&rel);
        ensure_writable(&path, s.force)?;
        rten::write_tensor(&path, &x, DType::F64)?;
        images.push(ReconEntry {
            id: sample.id.clone(),
            path: rel,
        });
    }
    let manifest = ReconManifest {
        checkpoint: s.checkpoint,
        dataset: s.dataset,
        branch,
        complex: s.complex,
        images,
    };
    write_json(&s.out.join("reconstructions.json"), &manifest, s.force)?;
    println!("wrote {} reconstructions to {}", manifest.images.len(), s.out.display());
    Ok(())
}

/// Metrics of one branch over a dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchReport {
    pub branch: usize,
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
    pub samples: Vec<SampleMetrics>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub mean_psnr: f64,
    pub mean_ssim: Option<f64>,
}

/// Written by `evaluate`, read by `report`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub accel: f64,
    pub branches: Vec<BranchReport>,
    pub zero_filled: Summary,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Evaluate {
    checkpoint: PathBuf,
    dataset: PathBuf,
    out: Option<PathBuf>,
    branch: Option<String>,
    label: Option<String>,
    #[serde(default)]
    force: bool,
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let s: Evaluate = resolve(&args, args.config.as_deref())?;
    let branches = parse_branches(s.branch.as_deref(), true)?;
    let ck = Checkpoint::load(&s.checkpoint)?;
    let ds = Dataset::load(&s.dataset)?;
    if !ds.has_ground_truth() {
        return Err(CliError::Runtime(format!(
            "{}: evaluation needs ground-truth images for every sample",
            s.dataset.display()
        )));
    }
    let mut rows = Vec::new();
    for b in branches {
        let samples = trainer::evaluate_dataset(&ds, ck.branch(b - 1)?)?;
        rows.push(BranchReport {
            branch: b,
            mean_psnr: mean_of(samples.iter().map(|m| m.psnr)).unwrap_or(f64::NAN),
            mean_ssim: mean_of(samples.iter().filter_map(|m| m.ssim)),
            samples,
        });
    }
    let first = &rows[0].samples;
    let zero_filled = Summary {
        mean_psnr: mean_of(first.iter().map(|m| m.zero_filled_psnr)).unwrap_or(f64::NAN),
        mean_ssim: mean_of(first.iter().filter_map(|m| m.zero_filled_ssim)),
    };
    let label = s.label.unwrap_or_else(|| {
        s.checkpoint
            .file_stem()
            .map(|x| x.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    });
    let report = EvalReport {
        label,
        checkpoint: absolute(&s.checkpoint),
        dataset: absolute(&s.dataset),
        accel: ds.accel,
        branches: rows,
        zero_filled,
    };
    for r in &report.branches {
        eprintln!(
            "branch {}: PSNR {:.3} dB, SSIM {} (zero-filled {:.3} dB)",
            r.branch,
            r.mean_psnr,
            r.mean_ssim.map_or("n/a".into(), |v| format!("{v:.4}")),
            report.zero_filled.mean_psnr
        );
    }
    match &s.out {
        Some(path) => write_json(path, &report, s.force)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
    }
    Ok(())
}
