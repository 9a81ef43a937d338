//! Parallel-branch training: subset-fed forwards, combined loss, Adam with
//! warm-up and plateau reduction, validation and checkpointing.

pub mod optim;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{adam_step, AdamState, LrSchedule};

use crate::autodiff::Graph;
use crate::dataio::dataset::{derive_seed, ensure_writable, write_json, Dataset, Sample};
use crate::dataio::metrics;
use crate::error::{Error, Result};
use crate::kspace::{self, apply_pattern, Mask, SubsetPair};
use crate::model::checkpoint::Checkpoint;
use crate::model::{self, ModelParams};
use crate::objective::{self, LossMode, LossTarget, LossValues, LossWeights, SsduLossMask};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub mask: u64,
    pub subsets: u64,
    pub init1: u64,
    pub init2: u64,
    pub shuffle: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            mask: 1,
            subsets: 2,
            init1: 3,
            init2: 4,
            shuffle: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Full experiment description. Every field has a default so partial JSON
/// files are accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image_size: usize,
    pub accel: f64,
    pub acs_full: usize,
    pub acs_sel: usize,
    #[serde(rename = "K")]
    pub phases: usize,
    pub channels: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub max_epochs: usize,
    pub loss_mode: LossMode,
    pub share_params: bool,
    pub weights: LossWeights,
    pub ssdu_loss_mask: SsduLossMask,
    pub resample_subsets_per_epoch: bool,
    pub seeds: Seeds,
    pub paths: Paths,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            accel: 4.0,
            acs_full: 24,
            acs_sel: 16,
            phases: model::DEFAULT_PHASES,
            channels: model::DEFAULT_CHANNELS,
            batch_size: 4,
            base_lr: 1e-4,
            warmup_epochs: 10,
            plateau_factor: 0.5,
            plateau_patience: 5,
            plateau_min_delta: 1e-5,
            max_epochs: 50,
            loss_mode: LossMode::Parallel,
            share_params: false,
            weights: LossWeights::default(),
            ssdu_loss_mask: SsduLossMask::Full,
            resample_subsets_per_epoch: false,
            seeds: Seeds::default(),
            paths: Paths::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        self.weights.validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(
            self.base_lr,
            self.warmup_epochs,
            self.plateau_factor,
            self.plateau_patience,
            self.plateau_min_delta,
        )
    }

    /// Number of independently trained parameter sets.
    pub fn branch_count(&self) -> usize {
        if self.loss_mode.is_parallel() && !self.share_params {
            2
        } else {
            1
        }
    }

    pub fn init_params(&self) -> Result<Vec<ModelParams>> {
        let seeds = [self.seeds.init1, self.seeds.init2];
        (0..self.branch_count())
            .map(|b| ModelParams::init(self.phases, self.channels, seeds[b]))
            .collect()
    }
}

/// Trainable state: one parameter set per branch (one when shared) and
/// matching optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: Vec<ModelParams>,
    pub adam: Vec<AdamState>,
    pub step: u64,
}

impl TrainState {
    pub fn new(params: Vec<ModelParams>) -> Self {
        let adam = params
            .iter()
            .map(|p| AdamState::new(p.named_tensors().into_iter().map(|(_, t)| t)))
            .collect();
        Self { params, adam, step: 0 }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            branches: self.params.clone(),
            step: self.step,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Batch means.
    pub losses: LossValues,
    pub applied: bool,
}

/// Evaluates the mode's loss for one sample; with `grads`, also returns
/// per-branch parameter gradients.
fn sample_loss(
    sample: &Sample,
    subsets: &SubsetPair,
    params: &[ModelParams],
    cfg: &TrainConfig,
    grads: bool,
) -> Result<(LossValues, Option<Vec<Vec<Tensor>>>)> {
    let mut g = Graph::new();
    let nodes: Vec<_> = params.iter().map(|p| p.bind(&mut g)).collect();
    let n1 = &nodes[0];
    let n2 = nodes.get(1).unwrap_or(n1);
    let parent = &subsets.parent;
    let y = &sample.kspace;

    let ssdu_mask;
    let (rec1, rec2, loss_mask) = match cfg.loss_mode {
        LossMode::Parallel | LossMode::ParallelNoDiff => {
            let y1 = apply_pattern(y, subsets.sub1.pattern())?;
            let y2 = apply_pattern(y, subsets.sub2.pattern())?;
            let r1 = model::reconstruct(&mut g, &y1, &subsets.sub1, n1)?;
            let r2 = model::reconstruct(&mut g, &y2, &subsets.sub2, n2)?;
            (r1, Some(r2), None)
        }
        LossMode::Ssdu => {
            let y1 = apply_pattern(y, subsets.sub1.pattern())?;
            let r1 = model::reconstruct(&mut g, &y1, &subsets.sub1, n1)?;
            ssdu_mask = match cfg.ssdu_loss_mask {
                SsduLossMask::Full => parent.clone(),
                SsduLossMask::Disjoint => {
                    let rest = parent
                        .pattern()
                        .zip_map(subsets.sub1.pattern(), "ssdu_loss_mask", |p, s| p * (1.0 - s))?;
                    Mask::from_pattern(rest, parent.info().clone())?
                }
            };
            (r1, None, Some(&ssdu_mask))
        }
        LossMode::Supervised => (model::reconstruct(&mut g, y, parent, n1)?, None, None),
    };
    let target = LossTarget {
        y_full: y,
        mask: parent,
        ssdu_loss_mask: loss_mask,
        ground_truth: sample.image.as_ref(),
    };
    let terms = objective::total_loss(&mut g, cfg.loss_mode, &cfg.weights, &target, &rec1, rec2.as_ref())?;
    let values = terms.values(&g);
    if !grads {
        return Ok((values, None));
    }
    g.backward(terms.total)?;
    let per_branch = nodes.iter().map(|n| n.grads(&g)).collect::<Result<Vec<_>>>()?;
    Ok((values, Some(per_branch)))
}

/// Subsets used for `sample` (index `i`) during `epoch`.
fn subsets_for(sample: &Sample, i: usize, epoch: usize, sel_acs: usize, cfg: &TrainConfig) -> Result<SubsetPair> {
    if !cfg.resample_subsets_per_epoch {
        return Ok(sample.subsets.clone());
    }
    let seed = derive_seed(derive_seed(cfg.seeds.subsets, epoch as u64), i as u64);
    kspace::make_selection_subsets(sample.mask(), sel_acs, seed)
}

/// One optimizer step on a batch of `(sample, subsets)` pairs: per-sample
/// graphs, gradients averaged in batch order, one Adam update per parameter
/// set. Non-finite gradients skip the update.
pub fn train_step(batch: &[(&Sample, SubsetPair)], state: &mut TrainState, cfg: &TrainConfig, lr: f64) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(Error::contract("train_step", "empty batch"));
    }
    let mut sum: Option<Vec<Vec<Tensor>>> = None;
    let mut losses = Vec::with_capacity(batch.len());
    for (sample, subsets) in batch {
        let (values, grads) = sample_loss(sample, subsets, &state.params, cfg, true)?;
        let grads = grads.expect("gradients requested");
        losses.push(values);
        match sum.as_mut() {
            None => sum = Some(grads),
            Some(acc) => {
                for (ab, gb) in acc.iter_mut().zip(&grads) {
                    for (a, g) in ab.iter_mut().zip(gb) {
                        a.axpy(1.0, g)?;
                    }
                }
            }
        }
    }
    let mean = LossValues::mean(&losses);
    let inv = 1.0 / batch.len() as f64;
    let grads: Vec<Vec<Tensor>> = sum
        .unwrap()
        .into_iter()
        .map(|b| b.into_iter().map(|t| t.scale(inv)).collect())
        .collect();

    let mut applied = true;
    if !mean.total.is_finite() {
        applied = false;
    } else {
        for ((params, adam), g) in state.params.iter_mut().zip(state.adam.iter_mut()).zip(&grads) {
            let mut slots = params.tensors_mut();
            applied &= adam_step(&mut slots, g, adam, lr)?;
        }
    }
    if applied {
        state.step += 1;
    }
    Ok(StepReport {
        losses: mean,
        applied,
    })
}

/// Mean validation loss (subset-fed, same objective as training).
pub fn validation_loss(ds: &Dataset, params: &[ModelParams], cfg: &TrainConfig) -> Result<f64> {
    let vals = ds
        .samples
        .iter()
        .map(|s| sample_loss(s, &s.subsets, params, cfg, false).map(|(v, _)| v))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossValues::mean(&vals).total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub zero_filled_psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_filled_ssim: Option<f64>,
}

/// Reconstructs every sample from its full undersampled data and scores the
/// magnitude against ground truth. Samples without ground truth are skipped.
pub fn evaluate_dataset(ds: &Dataset, params: &ModelParams) -> Result<Vec<SampleMetrics>> {
    let mut out = Vec::new();
    for s in &ds.samples {
        let Some(gt) = &s.image else { continue };
        let recon = model::reconstruct_image(&s.kspace, s.mask(), params)?.magnitude()?;
        let zf = kspace::apply_at(&s.kspace, s.mask())?.magnitude()?;
        let big_enough = gt.shape().iter().all(|&d| d >= metrics::SSIM_WINDOW);
        out.push(SampleMetrics {
            id: s.id.clone(),
            psnr: metrics::psnr(gt, &recon, 1.0)?,
            ssim: if big_enough { Some(metrics::ssim(gt, &recon, 1.0)?) } else { None },
            zero_filled_psnr: metrics::psnr(gt, &zf, 1.0)?,
            zero_filled_ssim: if big_enough { Some(metrics::ssim(gt, &zf, 1.0)?) } else { None },
        });
    }
    Ok(out)
}

pub fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// One line of the JSON-lines metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: LossValues,
    pub val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_ssim: Option<f64>,
    #[serde(default)]
    pub skipped_steps: usize,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub state: TrainState,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Trains in memory. `on_epoch` sees each record as soon as it is produced.
pub fn fit_datasets(
    cfg: &TrainConfig,
    train: &Dataset,
    val: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochRecord, &TrainState, bool) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if cfg.loss_mode == LossMode::Supervised && !train.has_ground_truth() {
        return Err(Error::Dataset("supervised mode needs ground-truth images in the training set".into()));
    }
    let mut state = TrainState::new(cfg.init_params()?);
    let mut schedule = cfg.schedule()?;
    let mut best = state.checkpoint();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seeds.shuffle, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut step_losses = Vec::new();
        let mut skipped = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let s = &train.samples[i];
                    Ok((s, subsets_for(s, i, epoch, train.sel_acs, cfg)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = train_step(&batch, &mut state, cfg, lr)?;
            if !report.losses.total.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    epoch,
                });
            }
            if !report.applied {
                skipped += 1;
            }
            // weight by batch size so the epoch value is a per-sample mean
            for _ in 0..chunk.len() {
                step_losses.push(report.losses);
            }
        }
        let train_loss = LossValues::mean(&step_losses);

        let monitor = val.unwrap_or(train);
        let val_loss = validation_loss(monitor, &state.params, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite {
                what: "validation loss",
                epoch,
            });
        }
        let (val_psnr, val_ssim) = match val {
            Some(v) if v.has_ground_truth() => {
                let m = evaluate_dataset(v, &state.params[0])?;
                (
                    mean_of(m.iter().map(|s| s.psnr)),
                    mean_of(m.iter().filter_map(|s| s.ssim)),
                )
            }
            _ => (None, None),
        };
        schedule.observe(epoch, val_loss);

        let improved = val_loss < best_loss;
        if improved {
            best_loss = val_loss;
            best_epoch = epoch;
            best = state.checkpoint();
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_psnr,
            val_ssim,
            skipped_steps: skipped,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.3e} train {:.6e} val {val_loss:.6e}{}",
            train_loss.total,
            val_psnr.map(|p| format!(" psnr {p:.3}")).unwrap_or_default()
        );
        on_epoch(&record, &state, improved)?;
        log.push(record);
    }
    Ok(FitOutcome {
        state,
        best,
        best_epoch,
        log,
    })
}

pub const METRICS_LOG: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.rten";
pub const FINAL_CHECKPOINT: &str = "final.rten";
pub const CONFIG_COPY: &str = "config.json";

/// Loads the configured datasets, trains, and writes `metrics.jsonl`,
/// `best.rten`, `final.rten` (with manifests) and `config.json` under the
/// output directory.
pub fn fit(cfg: &TrainConfig, force: bool) -> Result<FitOutcome> {
    cfg.validate()?;
    let train_path = cfg
        .paths
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("paths.train is required".into()))?;
    let out = cfg
        .paths
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("paths.out is required".into()))?;
    let train = Dataset::load(train_path)?;
    let val = cfg.paths.val.as_ref().map(|p| Dataset::load(p)).transpose()?;
    if let Some((h, w)) = train.dims() {
        if h != cfg.image_size || w != cfg.image_size {
            log::warn!("image_size {} differs from training data {h}x{w}; using the data", cfg.image_size);
        }
    }
    fit_to_dir(cfg, &train, val.as_ref(), out, force)
}

pub fn fit_to_dir(cfg: &TrainConfig, train: &Dataset, val: Option<&Dataset>, out: &Path, force: bool) -> Result<FitOutcome> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(METRICS_LOG);
    let best_path = out.join(BEST_CHECKPOINT);
    let final_path = out.join(FINAL_CHECKPOINT);
    for p in [&log_path, &best_path, &final_path] {
        ensure_writable(p, force)?;
    }
    write_json(&out.join(CONFIG_COPY), cfg, force)?;
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut writer = BufWriter::new(file);

    let outcome = fit_datasets(cfg, train, val, |rec, _state, _improved| {
        let line = serde_json::to_string(rec).map_err(|e| Error::json(&log_path, e))?;
        writeln!(writer, "{line}").map_err(|e| Error::io(&log_path, e))?;
        writer.flush().map_err(|e| Error::io(&log_path, e))
    })?;
    outcome.best.save(&best_path, true)?;
    outcome.state.checkpoint().save(&final_path, true)?;
    Ok(outcome)
}
