//! Training loops for every method.
//!
//! Vanilla, undersampling, oversampling and upweighting train the extractor
//! and the multiclass head jointly on one (resampled or weighted) stream.
//! Bias Mimicking trains in two stages per epoch:
//!
//! 1. One shuffled pass over the training set. Each sample goes through the
//!    extractor once and contributes a binary cross-entropy term to the head of
//!    every label view that includes it. Extractor and binary heads are updated.
//! 2. The multiclass head is reset to its seeded initialization and trained on
//!    detached features drawn by the head sampler (oversampling by default).
//!    The extractor is not touched.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate_model;
use crate::model::{bce_with_logit, head_loss_and_grad, joint_loss_and_grad, Architecture, Dense, Model, ModelConfig};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::samplers::{
    build_label_views, build_partial_views, oversample, resample_view, undersample, upweight, LabelView, Method,
    ResamplePlan,
};

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    #[default]
    Vanilla,
    Us,
    Os,
    Uw,
    Bm,
}

impl TrainMethod {
    pub const ALL: [TrainMethod; 5] = [Self::Vanilla, Self::Us, Self::Os, Self::Uw, Self::Bm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Us => "us",
            Self::Os => "os",
            Self::Uw => "uw",
            Self::Bm => "bm",
        }
    }
}

impl std::str::FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected vanilla, us, os, uw or bm)")))
    }
}

/// Sampling used to train the multiclass head in Bias Mimicking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSampler {
    Vanilla,
    Us,
    Uw,
    Os,
}

impl std::str::FromStr for HeadSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "us" => Ok(Self::Us),
            "uw" => Ok(Self::Uw),
            "os" => Ok(Self::Os),
            _ => Err(Error::Config(format!("unknown head sampler `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub latent_dim: usize,
}

impl ModelSpec {
    pub fn config_for(&self, d: &GroupedDataset) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            input_dim: d.feature_dim(),
            latent_dim: self.latent_dim,
            num_classes: d.num_classes(),
        }
    }
}

fn default_gamma() -> f64 {
    0.1
}

fn default_head_sampler() -> HeadSampler {
    HeadSampler::Os
}

fn default_head_passes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub method: TrainMethod,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `gamma`.
    #[serde(default)]
    pub lr_decay_epochs: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_head_sampler")]
    pub head_sampler: HeadSampler,
    /// Redraw Bias Mimicking negatives every epoch instead of fixing them once.
    #[serde(default)]
    pub refresh_views: bool,
    /// Passes over the head-sampler stream per epoch when training the
    /// multiclass head.
    #[serde(default = "default_head_passes")]
    pub head_passes: usize,
    pub model: ModelSpec,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.head_passes == 0 {
            return Err(Error::Config("head_passes must be positive".into()));
        }
        if self.model.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }

    /// `learning_rate * gamma^(number of decay epochs <= epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.gamma.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean loss of the jointly trained multiclass objective (joint methods).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    /// Mean loss per binary head in stage 1 (`None` for heads without a view).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub binary_losses: Vec<Option<f64>>,
    /// Mean loss of the detached multiclass head in stage 2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_loss: Option<f64>,
    /// Forward passes through the extractor made by the gradient-carrying stage.
    pub extractor_forward_passes: u64,
    /// Binary-head loss terms accumulated in stage 1.
    #[serde(default)]
    pub binary_contributions: u64,
    /// Samples (with repetition) in the epoch's training stream.
    pub stream_len: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub method: Option<TrainMethod>,
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// Parameters of the multiclass head at the start of each stage 2.
    #[serde(skip)]
    pub head_resets: Vec<Dense>,
    pub wall_time_secs: f64,
}

fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() && loss <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

fn require_nonempty(d: &GroupedDataset) -> Result<()> {
    if d.is_empty() {
        Err(Error::Data("training set is empty".into()))
    } else {
        Ok(())
    }
}

/// Extractor and multiclass head trained jointly on the original distribution.
pub fn train_vanilla(d: &GroupedDataset, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    require_nonempty(d)?;
    let stream: Vec<usize> = (0..d.len()).collect();
    train_joint(d, &stream, None, cfg, Some(TrainMethod::Vanilla))
}

/// The vanilla loop over a resampled stream (US, OS) or with per-sample loss
/// weights (UW).
pub fn train_resampled(d: &GroupedDataset, plan: &ResamplePlan, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    require_nonempty(d)?;
    let stream = plan
        .ids
        .iter()
        .map(|&id| d.position(id).ok_or_else(|| Error::Data(format!("plan names unknown sample id {id}"))))
        .collect::<Result<Vec<_>>>()?;
    let weights = match &plan.weights {
        Some(w) => Some(
            d.samples()
                .iter()
                .map(|s| w.get(s.id).ok_or_else(|| Error::Data(format!("no weight for sample {}", s.id))))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let method = match plan.method {
        Method::Undersample => TrainMethod::Us,
        Method::Oversample => TrainMethod::Os,
        Method::Upweight => TrainMethod::Uw,
        Method::Mimic => return Err(Error::Config("mimicking plans train with train_bias_mimicking".into())),
    };
    train_joint(d, &stream, weights.as_deref(), cfg, Some(method))
}

fn train_joint(
    d: &GroupedDataset,
    stream: &[usize],
    weights: Option<&[f64]>,
    cfg: &TrainConfig,
    method: Option<TrainMethod>,
) -> Result<(Model, RunLog)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = Model::new(cfg.model.config_for(d), cfg.seed)?;
    let mut ext_vel = model.extractor.zero_grad();
    let mut head_vel = model.multiclass.zeros_like();
    let mut log = RunLog {
        method,
        seed: cfg.seed,
        ..RunLog::default()
    };
    let samples = d.samples();
    let mut order = stream.to_vec();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.copy_from_slice(stream);
        order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE + epoch as u64));
        let (mut loss_sum, mut passes) = (0.0, 0u64);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = batch.iter().map(|&p| samples[p].features.as_slice()).collect();
            let labels: Vec<usize> = batch.iter().map(|&p| samples[p].target).collect();
            let w: Option<Vec<f64>> = weights.map(|w| batch.iter().map(|&p| w[p]).collect());
            let (loss, head_grad, ext_grad) = joint_loss_and_grad(&model, &inputs, &labels, w.as_deref())?;
            check_loss(loss, epoch)?;
            passes += batch.len() as u64;
            loss_sum += loss * batch.len() as f64;
            model.multiclass.sgd_step(&head_grad, lr, cfg.momentum, &mut head_vel);
            model.extractor.sgd_step(&ext_grad, lr, cfg.momentum, &mut ext_vel);
        }
        if !model.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        log.epochs.push(EpochLog {
            epoch,
            learning_rate: lr,
            loss: Some(loss_sum / order.len().max(1) as f64),
            extractor_forward_passes: passes,
            stream_len: order.len(),
            ..EpochLog::default()
        });
    }
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, log))
}

/// Training stream and optional weights for the multiclass head.
fn head_stream(d: &GroupedDataset, sampler: HeadSampler, seed: u64) -> Result<(Vec<usize>, Option<Vec<f64>>)> {
    let to_positions = |plan: ResamplePlan| plan.ids.iter().map(|&id| d.position(id).unwrap()).collect();
    Ok(match sampler {
        HeadSampler::Vanilla => ((0..d.len()).collect(), None),
        HeadSampler::Us => (to_positions(undersample(d, seed)?), None),
        HeadSampler::Os => (to_positions(oversample(d, seed)?), None),
        HeadSampler::Uw => {
            let w = upweight(d)?.weights.expect("upweight plan has weights");
            ((0..d.len()).collect(), Some(d.samples().iter().map(|s| w.get(s.id).unwrap()).collect()))
        }
    })
}

/// Per-position `(head, is_positive)` roles across the views.
fn view_roles(d: &GroupedDataset, views: &[LabelView]) -> Result<Vec<Vec<(usize, bool)>>> {
    let mut roles = vec![Vec::new(); d.len()];
    for v in views {
        for (pos, label) in v.labels_by_position(d)?.into_iter().enumerate() {
            if let Some(label) = label {
                roles[pos].push((v.positive_class, label));
            }
        }
    }
    Ok(roles)
}

/// Two-stage Bias Mimicking training on `views` (all of them, or a subset for
/// ablations).
pub fn train_bias_mimicking(d: &GroupedDataset, views: &[LabelView], cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    cfg.validate()?;
    require_nonempty(d)?;
    let c = d.num_classes();
    let mut seen = vec![false; c];
    for v in views {
        if v.positive_class >= c || std::mem::replace(&mut seen[v.positive_class], true) {
            return Err(Error::Data(format!("invalid or repeated view for class {}", v.positive_class)));
        }
    }
    let start = Instant::now();
    let config = cfg.model.config_for(d);
    let mut model = Model::new(config, cfg.seed)?;
    let mut ext_vel = model.extractor.zero_grad();
    let mut bin_vel = model.binary.zeros_like();
    let (head_order_base, head_weights) = head_stream(d, cfg.head_sampler, cfg.seed)?;
    let mut log = RunLog {
        method: Some(TrainMethod::Bm),
        seed: cfg.seed,
        ..RunLog::default()
    };
    let samples = d.samples();
    let mut views = views.to_vec();
    let mut roles = view_roles(d, &views)?;
    let mut order: Vec<usize> = (0..d.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        if cfg.refresh_views && epoch > 0 {
            let seed = derive_seed(cfg.seed, stream::VIEW_REFRESH + epoch as u64);
            views = views.iter().map(|v| resample_view(d, v, seed)).collect::<Result<_>>()?;
            roles = view_roles(d, &views)?;
        }

        // Stage 1: one pass, each sample feeds every head whose view holds it.
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, stream::SHUFFLE + epoch as u64));
        let mut head_loss = vec![0.0; c];
        let mut head_terms = vec![0u64; c];
        let (mut forwards, mut contributions) = (0u64, 0u64);
        for batch in order.chunks(cfg.batch_size) {
            let mut ext_grad = model.extractor.zero_grad();
            let mut bin_grad = model.binary.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &p in batch {
                if roles[p].is_empty() {
                    continue;
                }
                let cache = model.extractor.forward_cached(&samples[p].features)?;
                forwards += 1;
                let mut dlogit = vec![0.0; c];
                for &(head, positive) in &roles[p] {
                    let (l, ds) = bce_with_logit(model.binary.forward_row(head, &cache.latent), positive);
                    head_loss[head] += l;
                    head_terms[head] += 1;
                    dlogit[head] = ds;
                    contributions += 1;
                }
                let mut dlatent = vec![0.0; config.latent_dim];
                model.binary.backward(&mut bin_grad, &cache.latent, &dlogit, scale, Some(&mut dlatent));
                model.extractor.backward(&cache, &dlatent, 1.0, &mut ext_grad);
            }
            model.extractor.sgd_step(&ext_grad, lr, cfg.momentum, &mut ext_vel);
            model.binary.sgd_step(&bin_grad, lr, cfg.momentum, &mut bin_vel);
        }
        let binary_losses: Vec<Option<f64>> = head_loss
            .iter()
            .zip(&head_terms)
            .map(|(&l, &n)| (n > 0).then(|| l / n as f64))
            .collect();
        for l in binary_losses.iter().flatten() {
            check_loss(*l, epoch)?;
        }

        // Stage 2: fresh head on detached features.
        let features = samples
            .iter()
            .map(|s| model.extractor.forward(&s.features))
            .collect::<Result<Vec<_>>>()?;
        let mut head = Model::fresh_multiclass_head(&config, cfg.seed);
        log.head_resets.push(head.clone());
        let mut head_vel = head.zeros_like();
        let mut head_order = head_order_base.clone();
        let (mut loss_sum, mut loss_n) = (0.0, 0usize);
        for pass in 0..cfg.head_passes {
            head_order.copy_from_slice(&head_order_base);
            let tag = stream::HEAD_SHUFFLE + (epoch * cfg.head_passes + pass) as u64;
            head_order.shuffle(&mut stream_rng(cfg.seed, tag));
            for batch in head_order.chunks(cfg.batch_size) {
                let z: Vec<&[f64]> = batch.iter().map(|&p| features[p].as_slice()).collect();
                let labels: Vec<usize> = batch.iter().map(|&p| samples[p].target).collect();
                let w: Option<Vec<f64>> = head_weights.as_ref().map(|w| batch.iter().map(|&p| w[p]).collect());
                let (loss, grad) = head_loss_and_grad(&head, &z, &labels, w.as_deref());
                check_loss(loss, epoch)?;
                loss_sum += loss * batch.len() as f64;
                loss_n += batch.len();
                head.sgd_step(&grad, lr, cfg.momentum, &mut head_vel);
            }
        }
        model.multiclass = head;
        if !model.is_finite() {
            return Err(Error::Divergence { epoch, loss: f64::NAN });
        }
        log.epochs.push(EpochLog {
            epoch,
            learning_rate: lr,
            loss: None,
            binary_losses,
            head_loss: Some(loss_sum / loss_n.max(1) as f64),
            extractor_forward_passes: forwards,
            binary_contributions: contributions,
            stream_len: d.len(),
        });
    }
    log.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((model, log))
}

/// Builds whatever `cfg.method` needs from `d` and trains.
pub fn train(d: &GroupedDataset, cfg: &TrainConfig) -> Result<(Model, RunLog)> {
    match cfg.method {
        TrainMethod::Vanilla => train_vanilla(d, cfg),
        TrainMethod::Us => train_resampled(d, &undersample(d, cfg.seed)?, cfg),
        TrainMethod::Os => train_resampled(d, &oversample(d, cfg.seed)?, cfg),
        TrainMethod::Uw => train_resampled(d, &upweight(d)?, cfg),
        TrainMethod::Bm => train_bias_mimicking(d, &build_label_views(d, cfg.seed)?, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub percent: f64,
    pub unbiased_accuracy: f64,
    pub bias_conflict: f64,
}

/// Bias Mimicking with partially mimicked views, one row per percentage.
pub fn run_sensitivity_sweep(
    train: &GroupedDataset,
    test: &GroupedDataset,
    cfg: &TrainConfig,
    percents: &[f64],
) -> Result<Vec<SweepRow>> {
    let table = train.subgroup_table();
    percents
        .iter()
        .map(|&x| {
            let views = build_partial_views(train, x, cfg.seed)?;
            let (model, _) = train_bias_mimicking(train, &views, cfg)?;
            let report = evaluate_model(&model, test, &table)?;
            Ok(SweepRow {
                percent: x,
                unbiased_accuracy: report.unbiased_accuracy,
                bias_conflict: report.bias_conflict,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Views used, e.g. `d1`, `d2` or `d1,d2` (1-based class names).
    pub variant: String,
    pub ua1: f64,
    pub ua2: f64,
    pub ua: f64,
}

/// Binary task only: Bias Mimicking trained on the first view, the second
/// view, and both.
pub fn run_dy_ablation(train: &GroupedDataset, test: &GroupedDataset, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    if train.num_classes() != 2 {
        return Err(Error::Config(format!(
            "view ablation needs a binary task, got {} classes",
            train.num_classes()
        )));
    }
    let table = train.subgroup_table();
    let views = build_label_views(train, cfg.seed)?;
    let variants: [(&str, Vec<LabelView>); 3] = [
        ("d1", vec![views[0].clone()]),
        ("d2", vec![views[1].clone()]),
        ("d1,d2", views.clone()),
    ];
    variants
        .into_iter()
        .map(|(name, subset)| {
            let (model, _) = train_bias_mimicking(train, &subset, cfg)?;
            let r = evaluate_model(&model, test, &table)?;
            Ok(AblationRow {
                variant: name.into(),
                ua1: r.class_accuracy[0],
                ua2: r.class_accuracy[1],
                ua: r.unbiased_accuracy,
            })
        })
        .collect()
}
