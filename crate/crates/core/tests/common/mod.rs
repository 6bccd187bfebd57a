//! Finite-difference gradient oracle shared by the gradient tests and the
//! acceptance harness.
#![allow(dead_code)]

use mimic::model::{Architecture, Dense, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy)]
pub enum Part {
    Extractor(usize),
    Binary,
    Multiclass,
}

pub fn dense_mut(m: &mut Model, part: Part) -> &mut Dense {
    match part {
        Part::Extractor(k) => &mut m.extractor.layers[k],
        Part::Binary => &mut m.binary,
        Part::Multiclass => &mut m.multiclass,
    }
}

pub fn numeric(m: &Model, part: Part, loss: &dyn Fn(&Model) -> f64) -> Vec<f64> {
    let n = dense_mut(&mut m.clone(), part).params().count();
    (0..n)
        .map(|i| {
            let mut plus = m.clone();
            *dense_mut(&mut plus, part).params_mut().nth(i).unwrap() += STEP;
            let mut minus = m.clone();
            *dense_mut(&mut minus, part).params_mut().nth(i).unwrap() -= STEP;
            (loss(&plus) - loss(&minus)) / (2.0 * STEP)
        })
        .collect()
}

/// Largest relative error, with a floor of 1e-6 on the denominator so that
/// two near-zero values compare by absolute difference.
pub fn max_rel_error(analytic: &Dense, numeric: &[f64]) -> f64 {
    analytic
        .params()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

pub fn assert_close(analytic: &Dense, numeric: &[f64], what: &str) {
    let rel = max_rel_error(analytic, numeric);
    assert!(rel <= TOLERANCE, "{what}: relative error {rel}");
}

pub struct Case {
    pub model: Model,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub binary: Vec<bool>,
    pub class: usize,
}

pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let architecture = if rng.random_bool(0.5) {
        Architecture::Linear
    } else {
        Architecture::OneHiddenLayer {
            hidden_units: rng.random_range(2..6),
        }
    };
    let config = ModelConfig {
        architecture,
        input_dim: rng.random_range(2..6),
        latent_dim: rng.random_range(1..5),
        num_classes: rng.random_range(2..5),
    };
    let mut model = Model::new(config, seed).unwrap();
    // heads start random too, so no gradient is trivially zero
    model.multiclass = Dense::uniform(config.num_classes, config.latent_dim, &mut rng);
    let n = rng.random_range(1..7);
    let inputs = (0..n)
        .map(|_| (0..config.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    Case {
        model,
        inputs,
        labels: (0..n).map(|_| rng.random_range(0..config.num_classes)).collect(),
        weights: (0..n).map(|_| rng.random_range(0.5..4.0)).collect(),
        binary: (0..n).map(|_| rng.random_bool(0.5)).collect(),
        class: rng.random_range(0..config.num_classes),
    }
}

pub fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

pub fn extractor_parts(m: &Model) -> Vec<Part> {
    (0..m.extractor.layers.len()).map(Part::Extractor).collect()
}

