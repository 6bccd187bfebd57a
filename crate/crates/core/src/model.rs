//! A small classifier with one binary head per class and a detached
//! multiclass inference head.
//!
//! The feature extractor is either a single affine map or
//! affine -> ReLU -> affine. Binary heads (one logit per class) train the
//! extractor through their label views. The multiclass head reads extractor
//! features but its gradient never reaches the extractor: the functions that
//! train it return head gradients only. Gradients are written out by hand.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// Affine layer `y = W x + b`, with `W` stored row-major (`rows x cols`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    /// Uniform in `+-1/sqrt(cols)` for weights and biases.
    pub fn uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weights = (0..rows * cols).map(|_| draw()).collect();
        let bias = (0..rows).map(|_| draw()).collect();
        Self {
            rows,
            cols,
            weights,
            bias,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut d = Self::zeros(n, n);
        for i in 0..n {
            d.weights[i * n + i] = 1.0;
        }
        d
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.cols..(r + 1) * self.cols]
    }

    /// Output `r` only.
    pub fn forward_row(&self, r: usize, x: &[f64]) -> f64 {
        self.bias[r] + dot(self.row(r), x)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| self.forward_row(r, x)).collect()
    }

    /// Accumulates `dy` into this gradient buffer for input `x` (scaled by
    /// `scale`) and adds `W^T dy * scale` into `dx` when given.
    pub fn backward(&self, grad: &mut Dense, x: &[f64], dy: &[f64], scale: f64, dx: Option<&mut [f64]>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let g = g * scale;
            grad.bias[r] += g;
            let w = &mut grad.weights[r * self.cols..(r + 1) * self.cols];
            for (wi, &xi) in w.iter_mut().zip(x) {
                *wi += g * xi;
            }
        }
        if let Some(dx) = dx {
            for (r, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, &w) in dx.iter_mut().zip(self.row(r)) {
                    *d += g * scale * w;
                }
            }
        }
    }

    /// `self -= lr * grad`, with optional heavy-ball momentum kept in `velocity`.
    pub fn sgd_step(&mut self, grad: &Dense, lr: f64, momentum: f64, velocity: &mut Dense) {
        let apply = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                if momentum == 0.0 {
                    *p -= lr * g;
                } else {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
        };
        apply(&mut self.weights, &grad.weights, &mut velocity.weights);
        apply(&mut self.bias, &grad.bias, &mut velocity.bias);
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    pub fn scale(&mut self, s: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Architecture {
    Linear,
    OneHiddenLayer { hidden_units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

/// Shared feature extractor: one affine layer, or two with a ReLU between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub layers: Vec<Dense>,
}

/// Intermediate values of one extractor forward pass.
#[derive(Debug, Clone)]
pub struct ExtractorCache {
    input: Vec<f64>,
    hidden: Option<Vec<f64>>,
    pub latent: Vec<f64>,
}

impl FeatureExtractor {
    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().unwrap().rows
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim() {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            })
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.latent)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ExtractorCache> {
        self.check(x)?;
        Ok(match self.layers.as_slice() {
            [only] => ExtractorCache {
                input: x.to_vec(),
                hidden: None,
                latent: only.forward(x),
            },
            [first, second] => {
                let hidden: Vec<f64> = first.forward(x).into_iter().map(|v| v.max(0.0)).collect();
                let latent = second.forward(&hidden);
                ExtractorCache {
                    input: x.to_vec(),
                    hidden: Some(hidden),
                    latent,
                }
            }
            _ => unreachable!("extractor has one or two layers"),
        })
    }

    /// Accumulates parameter gradients for `dlatent` (times `scale`) into `grad`.
    pub fn backward(&self, cache: &ExtractorCache, dlatent: &[f64], scale: f64, grad: &mut ExtractorGrad) {
        match (&self.layers[..], &cache.hidden) {
            ([only], None) => only.backward(&mut grad.layers[0], &cache.input, dlatent, scale, None),
            ([first, second], Some(hidden)) => {
                let mut dhidden = vec![0.0; hidden.len()];
                second.backward(&mut grad.layers[1], hidden, dlatent, scale, Some(&mut dhidden));
                // ReLU: pass gradient where the unit was active
                for (d, &h) in dhidden.iter_mut().zip(hidden) {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                }
                first.backward(&mut grad.layers[0], &cache.input, &dhidden, 1.0, None);
            }
            _ => unreachable!("cache matches extractor"),
        }
    }

    pub fn zero_grad(&self) -> ExtractorGrad {
        ExtractorGrad {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn sgd_step(&mut self, grad: &ExtractorGrad, lr: f64, momentum: f64, velocity: &mut ExtractorGrad) {
        for ((layer, g), v) in self.layers.iter_mut().zip(&grad.layers).zip(&mut velocity.layers) {
            layer.sgd_step(g, lr, momentum, v);
        }
    }
}

/// Gradient buffers with the extractor's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGrad {
    pub layers: Vec<Dense>,
}

impl ExtractorGrad {
    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(Dense::params)
    }

    pub fn is_zero(&self) -> bool {
        self.params().all(|&v| v == 0.0)
    }
}

/// Extractor, `C` binary heads (row `y` of `binary` scores "is class y") and
/// the multiclass inference head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor,
    pub binary: Dense,
    pub multiclass: Dense,
}

pub const CHECKPOINT_FORMAT: &str = "mimic-model/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    #[serde(flatten)]
    model: Model,
}

impl Model {
    /// Seeded initialization. The multiclass head draws from its own stream so
    /// it can be re-initialized independently (see [`Model::fresh_multiclass_head`]).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 || config.num_classes == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = stream_rng(seed, stream::INIT);
        let layers = match config.architecture {
            Architecture::Linear => vec![Dense::uniform(config.latent_dim, config.input_dim, &mut rng)],
            Architecture::OneHiddenLayer { hidden_units } => {
                if hidden_units == 0 {
                    return Err(Error::Config("hidden_units must be positive".into()));
                }
                vec![
                    Dense::uniform(hidden_units, config.input_dim, &mut rng),
                    Dense::uniform(config.latent_dim, hidden_units, &mut rng),
                ]
            }
        };
        let binary = Dense::uniform(config.num_classes, config.latent_dim, &mut rng);
        Ok(Self {
            config,
            extractor: FeatureExtractor { layers },
            binary,
            multiclass: Self::fresh_multiclass_head(&config, seed),
        })
    }

    /// The multiclass head exactly as [`Model::new`] initializes it.
    pub fn fresh_multiclass_head(config: &ModelConfig, seed: u64) -> Dense {
        Dense::uniform(config.num_classes, config.latent_dim, &mut stream_rng(seed, stream::HEAD_INIT))
    }

    pub fn forward_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.extractor.forward(x)
    }

    pub fn multiclass_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.multiclass.forward(&self.forward_features(x)?))
    }

    /// Argmax of the multiclass head; ties go to the lowest class. Binary heads
    /// are not evaluated.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.multiclass_logits(x)?))
    }

    pub fn is_finite(&self) -> bool {
        self.extractor.layers.iter().all(Dense::is_finite) && self.binary.is_finite() && self.multiclass.is_finite()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            model: self.clone(),
        };
        let json = serde_json::to_string_pretty(&ckpt)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("unsupported checkpoint format `{}`", ckpt.format)));
        }
        let m = ckpt.model;
        let shapes_ok = m.extractor.layers.iter().all(|l| l.weights.len() == l.rows * l.cols && l.bias.len() == l.rows)
            && m.extractor.input_dim() == m.config.input_dim
            && m.extractor.latent_dim() == m.config.latent_dim
            && [&m.binary, &m.multiclass].iter().all(|h| {
                h.rows == m.config.num_classes
                    && h.cols == m.config.latent_dim
                    && h.weights.len() == h.rows * h.cols
                    && h.bias.len() == h.rows
            });
        if !shapes_ok {
            return Err(Error::Data(format!("{}: parameter shapes disagree with header", path.display())));
        }
        Ok(m)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `ln(1 + e^s)` without overflow.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of logit `s` against `positive`, and `dL/ds`.
pub fn bce_with_logit(s: f64, positive: bool) -> (f64, f64) {
    let t = if positive { 1.0 } else { 0.0 };
    (softplus(s) - t * s, sigmoid(s) - t)
}

/// Softmax cross-entropy of `logits` against `label`, and `dL/dlogits`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// Gradients of one binary-head objective.
#[derive(Debug, Clone)]
pub struct BinaryGrad {
    pub loss: f64,
    /// Same shape as [`Model::binary`]; only the trained head's row is non-zero.
    pub heads: Dense,
    pub extractor: ExtractorGrad,
}

/// Mean binary cross-entropy of head `class` over `batch` of
/// `(features, is_positive)` pairs.
pub fn binary_loss_and_grad(m: &Model, class: usize, batch: &[(&[f64], bool)]) -> Result<BinaryGrad> {
    if class >= m.config.num_classes {
        return Err(Error::Config(format!("no binary head for class {class}")));
    }
    let mut heads = m.binary.zeros_like();
    let mut extractor = m.extractor.zero_grad();
    let mut loss = 0.0;
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut dy = vec![0.0; m.config.num_classes];
    for &(x, positive) in batch {
        let cache = m.extractor.forward_cached(x)?;
        let (l, ds) = bce_with_logit(m.binary.forward_row(class, &cache.latent), positive);
        loss += l;
        dy[class] = ds;
        let mut dlatent = vec![0.0; m.config.latent_dim];
        m.binary.backward(&mut heads, &cache.latent, &dy, scale, Some(&mut dlatent));
        m.extractor.backward(&cache, &dlatent, 1.0, &mut extractor);
    }
    Ok(BinaryGrad {
        loss: loss * scale,
        heads,
        extractor,
    })
}

fn check_batch(m: &Model, labels: &[usize], weights: Option<&[f64]>, len: usize) -> Result<()> {
    if labels.len() != len {
        return Err(Error::Dimension {
            expected: len,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= m.config.num_classes) {
        return Err(Error::Data(format!("label {bad} out of range")));
    }
    if let Some(w) = weights {
        if w.len() != len {
            return Err(Error::Dimension {
                expected: len,
                actual: w.len(),
            });
        }
        if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Data("sample weights must be positive".into()));
        }
    }
    Ok(())
}

/// Softmax cross-entropy of the multiclass head on already-extracted
/// features, optionally weighted per sample: `sum_i w_i l_i / n`.
pub fn head_loss_and_grad(
    head: &Dense,
    features: &[&[f64]],
    labels: &[usize],
    weights: Option<&[f64]>,
) -> (f64, Dense) {
    let mut grad = head.zeros_like();
    let mut loss = 0.0;
    let scale = 1.0 / features.len().max(1) as f64;
    for (i, (&z, &y)) in features.iter().zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let (l, dlogits) = softmax_cross_entropy(&head.forward(z), y);
        loss += w * l;
        head.backward(&mut grad, z, &dlogits, w * scale, None);
    }
    (loss * scale, grad)
}

/// Multiclass loss with the stop-gradient: features are computed from the
/// extractor but only the head's gradient is returned.
pub fn multiclass_loss_and_grad(
    m: &Model,
    inputs: &[&[f64]],
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Dense)> {
    check_batch(m, labels, weights, inputs.len())?;
    let features = inputs
        .iter()
        .map(|x| m.forward_features(x))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
    Ok(head_loss_and_grad(&m.multiclass, &refs, labels, weights))
}

/// Multiclass loss backpropagated through the extractor as well (vanilla and
/// resampled training, where no stop-gradient applies).
pub fn joint_loss_and_grad(
    m: &Model,
    inputs: &[&[f64]],
    labels: &[usize],
    weights: Option<&[f64]>,
) -> Result<(f64, Dense, ExtractorGrad)> {
    check_batch(m, labels, weights, inputs.len())?;
    let mut head = m.multiclass.zeros_like();
    let mut extractor = m.extractor.zero_grad();
    let mut loss = 0.0;
    let scale = 1.0 / inputs.len().max(1) as f64;
    for (i, (&x, &y)) in inputs.iter().zip(labels).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let cache = m.extractor.forward_cached(x)?;
        let (l, dlogits) = softmax_cross_entropy(&m.multiclass.forward(&cache.latent), y);
        loss += w * l;
        let mut dlatent = vec![0.0; m.config.latent_dim];
        m.multiclass.backward(&mut head, &cache.latent, &dlogits, w * scale, Some(&mut dlatent));
        m.extractor.backward(&cache, &dlatent, 1.0, &mut extractor);
    }
    Ok((loss * scale, head, extractor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(architecture: Architecture, input: usize, latent: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            architecture,
            input_dim: input,
            latent_dim: latent,
            num_classes: classes,
        }
    }

    #[test]
    fn zero_and_identity_extractors() {
        let mut m = Model::new(config(Architecture::Linear, 3, 3, 2), 0).unwrap();
        m.extractor.layers[0] = Dense::zeros(3, 3);
        assert_eq!(m.forward_features(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 3]);
        m.extractor.layers[0] = Dense::identity(3);
        assert_eq!(m.forward_features(&[1.0, -2.0, 3.0]).unwrap(), vec![1.0, -2.0, 3.0]);
        assert!(matches!(m.forward_features(&[1.0]), Err(Error::Dimension { expected: 3, actual: 1 })));
    }

    #[test]
    fn seeded_init_is_stable() {
        let cfg = config(Architecture::OneHiddenLayer { hidden_units: 5 }, 4, 3, 2);
        let a = Model::new(cfg, 42).unwrap();
        let b = Model::new(cfg, 42).unwrap();
        let x = [0.3, -0.1, 2.0, 0.5];
        assert_eq!(a.forward_features(&x).unwrap(), b.forward_features(&x).unwrap());
        assert_ne!(a, Model::new(cfg, 43).unwrap());
        let bound = 1.0 / 2.0;
        assert!(a.extractor.layers[0].params().all(|v| v.abs() <= bound));
    }

    #[test]
    fn zero_logit_positive_loss_is_ln2() {
        let (l, d) = bce_with_logit(0.0, true);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d + 0.5).abs() < 1e-15);
        let (l, _) = softmax_cross_entropy(&[0.7, 0.7], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // extreme logits stay finite
        assert!(bce_with_logit(800.0, false).0.is_finite());
        assert!(softmax_cross_entropy(&[900.0, -900.0], 1).0.is_finite());
    }

    #[test]
    fn mirrored_pair_cancels_extractor_gradient() {
        let mut m = Model::new(config(Architecture::Linear, 2, 2, 2), 1).unwrap();
        m.extractor.layers[0] = Dense::identity(2);
        m.binary = Dense {
            rows: 2,
            cols: 2,
            weights: vec![1.0, -1.0, 0.0, 0.0],
            bias: vec![0.0, 0.0],
        };
        // The same point labeled both ways with its logit at zero: the two
        // sigmoid residuals are -1/2 and +1/2.
        let x = [0.75, 0.75];
        let g = binary_loss_and_grad(&m, 0, &[(&x, true), (&x, false)]).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(g.extractor.is_zero(), "{:?}", g.extractor);
    }

    #[test]
    fn argmax_and_tie_break() {
        assert_eq!(argmax(&[2.0, -1.0]), 0);
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn prediction_ignores_binary_heads() {
        let cfg = config(Architecture::OneHiddenLayer { hidden_units: 4 }, 3, 2, 3);
        let m = Model::new(cfg, 5).unwrap();
        let mut zeroed = m.clone();
        zeroed.binary = Dense::zeros(3, 2);
        for x in [[0.1, 0.2, 0.3], [-1.0, 2.0, 0.0], [3.0, -3.0, 1.0]] {
            assert_eq!(m.predict(&x).unwrap(), zeroed.predict(&x).unwrap());
        }
    }

    #[test]
    fn multiclass_batch_validation() {
        let m = Model::new(config(Architecture::Linear, 2, 2, 2), 0).unwrap();
        let x = [0.0, 1.0];
        assert!(multiclass_loss_and_grad(&m, &[&x], &[2], None).is_err());
        assert!(multiclass_loss_and_grad(&m, &[&x], &[0], Some(&[-1.0])).is_err());
        assert!(multiclass_loss_and_grad(&m, &[&x], &[0, 1], None).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::new(config(Architecture::OneHiddenLayer { hidden_units: 3 }, 4, 2, 3), 9).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        assert_eq!(Model::load(f.path()).unwrap(), m);
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.contains(CHECKPOINT_FORMAT));
        std::fs::write(f.path(), text.replace("\"rows\": 3", "\"rows\": 4")).unwrap();
        assert!(Model::load(f.path()).is_err());
    }
}
