//! Training loops: plain cross-entropy, BackMix with its CAM bank, the usual
//! augmentation baselines, and the outlier-based objectives (OE, CatImg, FtAvg).
//!
//! Every stochastic choice draws from a stream derived from `(seed, tag, epoch)`,
//! so variants that differ only in an inactive component (BackMix with `s = 0`,
//! OE with `alpha = 0`) follow the plain trajectory bit for bit, and a run can
//! resume from any epoch boundary.

mod state;

pub use state::{decode_state, encode_state, latest_checkpoint, load_state, save_state};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Beta, Distribution};

use crate::cambank::{extract_cam, init_bank, CamBank};
use crate::error::{OsrError, Result};
use crate::image::Image;
use crate::mixer::{self, pair_batch, sample_cut_region, sample_cutmix_region, MixConfig, Pairing};
use crate::model::{catimg, softmax, ConvNet, ConvNetSpec};
use crate::rng::{derive_rng, derive_seed, tag, Rng};
use crate::synthdata::LabeledImage;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Augmentation {
    None,
    BackMix,
    Cutout,
    Mixup,
    Cutmix,
    Oe,
    CatImg,
    FtAvg,
}

impl Augmentation {
    pub const ALL: [Augmentation; 8] = [
        Augmentation::None,
        Augmentation::BackMix,
        Augmentation::Cutout,
        Augmentation::Mixup,
        Augmentation::Cutmix,
        Augmentation::Oe,
        Augmentation::CatImg,
        Augmentation::FtAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::BackMix => "backmix",
            Augmentation::Cutout => "cutout",
            Augmentation::Mixup => "mixup",
            Augmentation::Cutmix => "cutmix",
            Augmentation::Oe => "oe",
            Augmentation::CatImg => "catimg",
            Augmentation::FtAvg => "ftavg",
        }
    }

    pub fn needs_outliers(self) -> bool {
        matches!(self, Augmentation::Oe | Augmentation::CatImg | Augmentation::FtAvg)
    }
}

impl std::str::FromStr for Augmentation {
    type Err = OsrError;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Augmentation::ALL
            .into_iter()
            .find(|a| a.name() == lower || (lower == "plain" && *a == Augmentation::None))
            .ok_or_else(|| OsrError::Config(format!("unknown augmentation {s:?}")))
    }
}

impl std::fmt::Display for Augmentation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which images feed the per-step CAM estimate used to refresh the bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CamSource {
    Original,
    Mixed,
}

impl std::str::FromStr for CamSource {
    type Err = OsrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(CamSource::Original),
            "mixed" => Ok(CamSource::Mixed),
            _ => Err(OsrError::Config(format!("unknown cam source {s:?}"))),
        }
    }
}

impl std::fmt::Display for CamSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CamSource::Original => "original",
            CamSource::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augmentation: Augmentation,
    pub mix: MixConfig,
    pub oe_alpha: f64,
    /// Beta-distribution parameter for Mixup/Cutmix ratios.
    pub mix_alpha: f64,
    pub bank_beta: f64,
    pub cam_source: CamSource,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            augmentation: Augmentation::None,
            mix: MixConfig::default(),
            oe_alpha: 0.5,
            mix_alpha: 1.0,
            bank_beta: 0.1,
            cam_source: CamSource::Original,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(OsrError::Parameter(msg));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(self.oe_alpha >= 0.0 && self.oe_alpha.is_finite()) {
            return bad(format!("oe alpha must be non-negative, got {}", self.oe_alpha));
        }
        if !(self.mix_alpha > 0.0 && self.mix_alpha.is_finite()) {
            return bad(format!("mix alpha must be positive, got {}", self.mix_alpha));
        }
        if !(self.bank_beta > 0.0 && self.bank_beta <= 1.0) {
            return bad(format!("bank beta must lie in (0, 1], got {}", self.bank_beta));
        }
        self.mix.validate()
    }
}

/// Cross-entropy of `probs` against a one-hot label.
pub fn ce_loss(probs: &[f64], label: usize) -> Result<f64> {
    check_simplex(probs)?;
    let p = probs.get(label).ok_or_else(|| OsrError::Index(format!("label {label} outside {} classes", probs.len())))?;
    Ok(-p.ln())
}

/// Cross-entropy of `probs` against the uniform distribution, `H(u; x)`.
pub fn uniform_loss(probs: &[f64]) -> Result<f64> {
    check_simplex(probs)?;
    let k = probs.len() as f64;
    Ok(-probs.iter().map(|p| p.ln()).sum::<f64>() / k)
}

/// Mean known cross-entropy plus `alpha` times the mean uniform-target loss on outliers.
pub fn oe_loss(known_probs: &[Vec<f64>], labels: &[usize], outlier_probs: &[Vec<f64>], alpha: f64) -> Result<f64> {
    if known_probs.is_empty() || outlier_probs.is_empty() {
        return Err(OsrError::Argument("oe loss needs non-empty known and outlier batches".into()));
    }
    if known_probs.len() != labels.len() {
        return Err(OsrError::Shape(format!("{} predictions for {} labels", known_probs.len(), labels.len())));
    }
    let mut known = 0.0;
    for (p, &y) in known_probs.iter().zip(labels) {
        known += ce_loss(p, y)?;
    }
    let mut outlier = 0.0;
    for p in outlier_probs {
        outlier += uniform_loss(p)?;
    }
    Ok(known / known_probs.len() as f64 + alpha * outlier / outlier_probs.len() as f64)
}

fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(OsrError::Validation("empty probability vector".into()));
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(0.0..=1.0 + SIMPLEX_TOL).contains(p)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(OsrError::Validation(format!("probabilities off the simplex (sum {sum})")));
    }
    Ok(())
}

/// `lr * 0.5 * (1 + cos(pi * t / total))`.
pub fn cosine_lr(base: f64, t: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (t.min(total)) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// SGD with Nesterov momentum and coupled weight decay:
/// `g += wd * theta; v = mu * v + g; theta -= lr * (g + mu * v)`.
pub fn sgd_nesterov_step(params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * (g + momentum * *v);
    }
}

/// Log-softmax cross-entropy against a target distribution; accumulates
/// `scale * (p - target)` into `d_logits`.
fn soft_ce(logits: &[f64], target: &[f64], scale: f64, d_logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    let p = softmax(logits);
    let mut loss = 0.0;
    for k in 0..logits.len() {
        if target[k] != 0.0 {
            loss -= target[k] * (logits[k] - lse);
        }
        d_logits[k] += scale * (p[k] - target[k]);
    }
    loss
}

fn one_hot(k: usize, y: usize) -> Vec<f64> {
    let mut t = vec![0.0; k];
    t[y] = 1.0;
    t
}

/// Model, optimizer and bank state between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: ConvNet,
    pub bank: Option<CamBank>,
    pub velocity: Vec<f64>,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    /// Mean training loss of each completed epoch.
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, spec: &ConvNetSpec, num_samples: usize) -> Result<Self> {
        let model = ConvNet::new(spec.clone(), config.seed)?;
        let bank = if config.augmentation == Augmentation::BackMix {
            let (h, w) = spec.cam_dims();
            Some(init_bank(num_samples, h, w, config.bank_beta, derive_seed(config.seed, &[tag::BANK]))?)
        } else {
            None
        };
        let velocity = vec![0.0; model.params().len()];
        Ok(TrainState { model, bank, velocity, epoch: 0, step: 0, seed: config.seed, loss_history: Vec::new() })
    }
}

/// Per-epoch random streams, one per kind of decision.
pub struct EpochStreams {
    pub region: Rng,
    pub pair: Rng,
    pub mix: Rng,
    pub outlier: Rng,
}

impl EpochStreams {
    pub fn new(seed: u64, epoch: usize) -> Self {
        let e = epoch as u64;
        EpochStreams {
            region: derive_rng(seed, &[tag::REGION, e]),
            pair: derive_rng(seed, &[tag::PAIR, e]),
            mix: derive_rng(seed, &[tag::MIX, e]),
            outlier: derive_rng(seed, &[tag::OUTLIER, e]),
        }
    }
}

/// Shuffled batches covering every index once; a trailing singleton joins the previous batch
/// so pairing is always possible.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derive_rng(seed, &[tag::SHUFFLE, epoch as u64]));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    batches
}

/// Training data for a run: known samples plus an optional outlier pool.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub known: &'a [LabeledImage],
    pub outliers: Option<&'a [Image]>,
}

struct StepContext<'a> {
    config: &'a TrainConfig,
    data: TrainData<'a>,
    lr: f64,
}

/// One BackMix step: pair, mask, cut, mix; refresh the bank from the
/// current network; then a cross-entropy SGD update on the mixed batch.
pub fn train_step_backmix(
    state: &mut TrainState,
    config: &TrainConfig,
    data: &[LabeledImage],
    batch: &[usize],
    streams: &mut EpochStreams,
    lr: f64,
) -> Result<f64> {
    let ctx = StepContext { config, data: TrainData { known: data, outliers: None }, lr };
    step_backmix(state, &ctx, batch, streams)
}

fn step_backmix(state: &mut TrainState, ctx: &StepContext, batch: &[usize], streams: &mut EpochStreams) -> Result<f64> {
    let cfg = ctx.config;
    let data = ctx.data.known;
    let k = state.model.num_classes();
    let bank = state.bank.as_mut().ok_or_else(|| OsrError::Consistency("backmix step without a cam bank".into()))?;
    for &i in batch {
        bank.map(i)?;
        if i >= data.len() {
            return Err(OsrError::Consistency(format!("sample index {i} outside training set of {}", data.len())));
        }
    }
    let labels: Vec<usize> = batch.iter().map(|&i| data[i].label).collect();
    let pairs = pair_batch(batch.len(), cfg.mix.pairing, &labels, cfg.mix.allow_self_pair, &mut streams.pair)?;
    let mut mixed = Vec::with_capacity(batch.len());
    for &(ti, bi) in &pairs {
        let target = &data[batch[ti]].pixels;
        let background = &data[batch[bi]].pixels;
        let region = sample_cut_region(target.height(), target.width(), cfg.mix.cut_area_ratio, &mut streams.region)?;
        if region.area() == 0 {
            mixed.push(target.clone());
            continue;
        }
        let fg = bank.foreground_mask(batch[bi], target.height(), target.width(), cfg.mix.mask_ratio)?;
        mixed.push(mixer::mix_pixels(target, background, &fg, &region.mask())?);
    }
    let mixed_refs: Vec<&Image> = mixed.iter().collect();
    let cam_acts = match cfg.cam_source {
        CamSource::Original => {
            let originals: Vec<&Image> = batch.iter().map(|&i| &data[i].pixels).collect();
            state.model.forward_batch(&originals)?
        }
        CamSource::Mixed => state.model.forward_batch(&mixed_refs)?,
    };
    let (h, w) = cam_acts.feat_dims();
    for (pos, &i) in batch.iter().enumerate() {
        let cam = extract_cam(&cam_acts.cam_of(pos, k), h, w, k, labels[pos])?;
        bank.ema_update(i, &cam)?;
    }
    drop(cam_acts);
    let targets: Vec<Vec<f64>> = labels.iter().map(|&y| one_hot(k, y)).collect();
    sgd_on_batch(state, ctx, &mixed_refs, &targets)
}

/// Forward, soft-target cross-entropy, backward and one optimizer step.
fn sgd_on_batch(state: &mut TrainState, ctx: &StepContext, images: &[&Image], targets: &[Vec<f64>]) -> Result<f64> {
    let k = state.model.num_classes();
    let acts = state.model.forward_batch(images)?;
    let n = images.len();
    let mut d_logits = vec![0.0; n * k];
    let mut loss = 0.0;
    for i in 0..n {
        loss += soft_ce(acts.logits_of(i, k), &targets[i], 1.0 / n as f64, &mut d_logits[i * k..(i + 1) * k]);
    }
    loss /= n as f64;
    let mut grads = vec![0.0; state.model.params().len()];
    state.model.backward(&acts, &d_logits, &mut grads, false);
    apply_update(state, ctx, &grads, loss)
}

fn apply_update(state: &mut TrainState, ctx: &StepContext, grads: &[f64], loss: f64) -> Result<f64> {
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(OsrError::Diverged {
            epoch: state.epoch,
            step: state.step as usize,
            detail: format!("non-finite loss {loss}"),
        });
    }
    let cfg = ctx.config;
    sgd_nesterov_step(state.model.params_mut(), grads, &mut state.velocity, ctx.lr, cfg.momentum, cfg.weight_decay);
    state.step += 1;
    Ok(loss)
}

fn draw_outliers<'a>(pool: &'a [Image], n: usize, rng: &mut Rng) -> Vec<&'a Image> {
    (0..n).map(|_| &pool[rng.random_range(0..pool.len())]).collect()
}

fn outlier_pool<'a>(ctx: &StepContext<'a>) -> Result<&'a [Image]> {
    match ctx.data.outliers {
        Some(pool) if !pool.is_empty() => Ok(pool),
        _ => Err(OsrError::Argument(format!("{} training needs a non-empty outlier pool", ctx.config.augmentation))),
    }
}

fn step(state: &mut TrainState, ctx: &StepContext, batch: &[usize], streams: &mut EpochStreams) -> Result<f64> {
    let cfg = ctx.config;
    let data = ctx.data.known;
    let k = state.model.num_classes();
    let originals: Vec<&Image> = batch.iter().map(|&i| &data[i].pixels).collect();
    let labels: Vec<usize> = batch.iter().map(|&i| data[i].label).collect();
    let hard: Vec<Vec<f64>> = labels.iter().map(|&y| one_hot(k, y)).collect();
    match cfg.augmentation {
        Augmentation::None => sgd_on_batch(state, ctx, &originals, &hard),
        Augmentation::BackMix => step_backmix(state, ctx, batch, streams),
        Augmentation::Cutout => {
            let mut out = Vec::with_capacity(batch.len());
            for img in &originals {
                let region = sample_cut_region(img.height(), img.width(), cfg.mix.cut_area_ratio, &mut streams.region)?;
                out.push(mixer::cutout(img, &region)?);
            }
            let refs: Vec<&Image> = out.iter().collect();
            sgd_on_batch(state, ctx, &refs, &hard)
        }
        Augmentation::Mixup | Augmentation::Cutmix => {
            let pairs = pair_batch(batch.len(), Pairing::Random, &labels, false, &mut streams.pair)?;
            let beta = Beta::new(cfg.mix_alpha, cfg.mix_alpha).map_err(|e| OsrError::Parameter(e.to_string()))?;
            let lambda: f64 = beta.sample(&mut streams.mix);
            let mut out = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &(a, b) in &pairs {
                let (img, soft) = if cfg.augmentation == Augmentation::Mixup {
                    mixer::mixup(originals[a], labels[a], originals[b], labels[b], lambda)?
                } else {
                    let (h, w) = (originals[a].height(), originals[a].width());
                    let region = sample_cutmix_region(h, w, lambda, &mut streams.region);
                    mixer::cutmix(originals[a], labels[a], originals[b], labels[b], &region)?
                };
                out.push(img);
                targets.push(soft.to_target(k));
            }
            let refs: Vec<&Image> = out.iter().collect();
            sgd_on_batch(state, ctx, &refs, &targets)
        }
        Augmentation::Oe => {
            if cfg.oe_alpha == 0.0 {
                return sgd_on_batch(state, ctx, &originals, &hard);
            }
            let outliers = draw_outliers(outlier_pool(ctx)?, batch.len(), &mut streams.outlier);
            let n = originals.len();
            let acts = state.model.forward_batch(&originals)?;
            let mut d_logits = vec![0.0; n * k];
            let mut loss = 0.0;
            for i in 0..n {
                loss += soft_ce(acts.logits_of(i, k), &hard[i], 1.0 / n as f64, &mut d_logits[i * k..(i + 1) * k]);
            }
            loss /= n as f64;
            let mut grads = vec![0.0; state.model.params().len()];
            state.model.backward(&acts, &d_logits, &mut grads, false);
            drop(acts);
            let m = outliers.len();
            let uniform = vec![1.0 / k as f64; k];
            let out_acts = state.model.forward_batch(&outliers)?;
            let mut d_out = vec![0.0; m * k];
            let mut out_loss = 0.0;
            for i in 0..m {
                out_loss += soft_ce(out_acts.logits_of(i, k), &uniform, cfg.oe_alpha / m as f64, &mut d_out[i * k..(i + 1) * k]);
            }
            loss += cfg.oe_alpha * out_loss / m as f64;
            state.model.backward(&out_acts, &d_out, &mut grads, false);
            apply_update(state, ctx, &grads, loss)
        }
        Augmentation::CatImg => {
            let outliers = draw_outliers(outlier_pool(ctx)?, batch.len(), &mut streams.outlier);
            let stacked = originals.iter().zip(&outliers).map(|(x, o)| catimg(x, o)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Image> = stacked.iter().collect();
            sgd_on_batch(state, ctx, &refs, &hard)
        }
        Augmentation::FtAvg => {
            let outliers = draw_outliers(outlier_pool(ctx)?, batch.len(), &mut streams.outlier);
            let n = originals.len();
            let mut both = originals.clone();
            both.extend(outliers.iter().copied());
            let acts = state.model.forward_batch(&both)?;
            let c = state.model.spec().feature_dim();
            let mixed: Vec<f64> = (0..n * c).map(|j| 0.5 * acts.global[j] + 0.5 * acts.global[n * c + j]).collect();
            let logits = state.model.head_logits(&mixed);
            let mut d_logits = vec![0.0; n * k];
            let mut loss = 0.0;
            for i in 0..n {
                loss += soft_ce(&logits[i * k..(i + 1) * k], &hard[i], 1.0 / n as f64, &mut d_logits[i * k..(i + 1) * k]);
            }
            loss /= n as f64;
            let mut grads = vec![0.0; state.model.params().len()];
            let d_mixed = state.model.head_backward(&mixed, &d_logits, &mut grads);
            let mut d_global = d_mixed.clone();
            d_global.extend_from_slice(&d_mixed);
            state.model.encoder_backward_from_global(&acts, &d_global, 0.5, &mut grads, false);
            apply_update(state, ctx, &grads, loss)
        }
    }
}

/// Drives epochs over a fixed dataset, optionally persisting a checkpoint after each.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: TrainData<'a>,
    state: TrainState,
    checkpoint_dir: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, spec: &ConvNetSpec, data: TrainData<'a>) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        if data.known.is_empty() {
            return Err(OsrError::Argument("training set is empty".into()));
        }
        for img in data.known {
            if img.label >= spec.num_classes {
                return Err(OsrError::Data(format!("label {} outside {} classes", img.label, spec.num_classes)));
            }
        }
        if config.augmentation.needs_outliers() && !(config.augmentation == Augmentation::Oe && config.oe_alpha == 0.0) {
            if data.outliers.is_none_or(|o| o.is_empty()) {
                return Err(OsrError::Argument(format!("{} training needs a non-empty outlier pool", config.augmentation)));
            }
        }
        let state = TrainState::new(config, spec, data.known.len())?;
        Ok(Trainer { config: config.clone(), data, state, checkpoint_dir: None })
    }

    /// Persist state under `dir/epoch-NNNN/` after every epoch.
    pub fn with_checkpoints(mut self, dir: &Path) -> Self {
        self.checkpoint_dir = Some(dir.to_path_buf());
        self
    }

    /// Continue from the newest checkpoint in `dir`, if any.
    pub fn resume(config: &TrainConfig, spec: &ConvNetSpec, data: TrainData<'a>, dir: &Path) -> Result<Self> {
        let mut trainer = Trainer::new(config, spec, data)?.with_checkpoints(dir);
        if let Some(path) = latest_checkpoint(dir)? {
            let state = load_state(&path)?;
            if state.model.spec() != spec || state.seed != config.seed {
                return Err(OsrError::Consistency(format!("checkpoint {} was written by a different run", path.display())));
            }
            if state.bank.as_ref().map(CamBank::len) != trainer.state.bank.as_ref().map(CamBank::len) {
                return Err(OsrError::Consistency("checkpoint bank does not match the training set".into()));
            }
            trainer.state = state;
        }
        Ok(trainer)
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    fn steps_per_epoch(&self) -> u64 {
        epoch_batches(self.data.known.len(), self.config.batch_size, 0, 0).len() as u64
    }

    /// Run one epoch; returns its mean loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.state.epoch;
        let total = self.steps_per_epoch() * self.config.epochs as u64;
        let batches = epoch_batches(self.data.known.len(), self.config.batch_size, self.config.seed, epoch);
        let mut streams = EpochStreams::new(self.config.seed, epoch);
        let mut sum = 0.0;
        for batch in &batches {
            let lr = cosine_lr(self.config.lr, self.state.step, total);
            let ctx = StepContext { config: &self.config, data: self.data, lr };
            sum += step(&mut self.state, &ctx, batch, &mut streams)?;
        }
        let mean = sum / batches.len() as f64;
        self.state.loss_history.push(mean);
        self.state.epoch += 1;
        if let Some(dir) = &self.checkpoint_dir {
            save_state(&dir.join(format!("epoch-{:04}", self.state.epoch)).join("state.osrt"), &self.state)?;
        }
        Ok(mean)
    }

    pub fn run(mut self) -> Result<TrainState> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        Ok(self.state)
    }
}

/// Train from scratch without checkpoints.
pub fn train(config: &TrainConfig, spec: &ConvNetSpec, data: TrainData) -> Result<TrainState> {
    Trainer::new(config, spec, data)?.run()
}

/// Fraction of `images` whose argmax prediction equals the label.
pub fn accuracy(model: &ConvNet, images: &[LabeledImage]) -> Result<f64> {
    if images.is_empty() {
        return Err(OsrError::Argument("accuracy of an empty set".into()));
    }
    let k = model.num_classes();
    let mut correct = 0;
    for chunk in images.chunks(256) {
        let refs: Vec<&Image> = chunk.iter().map(|i| &i.pixels).collect();
        let acts = model.forward_batch(&refs)?;
        for (i, img) in chunk.iter().enumerate() {
            let logits = acts.logits_of(i, k);
            let pred = (0..k).fold(0, |best, c| if logits[c] > logits[best] { c } else { best });
            correct += usize::from(pred == img.label);
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
