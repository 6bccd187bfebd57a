//! Analytic gradients against central finite differences.

mod common;

use common::{assert_close, extractor_parts, numeric, random_case, refs, Part};
use mimic::dataset::{generate_synthetic, PerClass, SyntheticSpec};
use mimic::model::{binary_loss_and_grad, joint_loss_and_grad, multiclass_loss_and_grad, Architecture, Model};
use mimic::samplers::build_label_views;
use mimic::train::{train_bias_mimicking, HeadSampler, ModelSpec, TrainConfig, TrainMethod};

#[test]
fn binary_head_gradients() {
    for seed in 0..50 {
        let c = random_case(seed);
        let batch: Vec<(&[f64], bool)> = c.inputs.iter().map(Vec::as_slice).zip(c.binary.iter().copied()).collect();
        let loss = |m: &Model| binary_loss_and_grad(m, c.class, &batch).unwrap().loss;
        let g = binary_loss_and_grad(&c.model, c.class, &batch).unwrap();
        assert_close(&g.heads, &numeric(&c.model, Part::Binary, &loss), "binary head");
        for part in extractor_parts(&c.model) {
            let Part::Extractor(k) = part else { unreachable!() };
            assert_close(&g.extractor.layers[k], &numeric(&c.model, part, &loss), "extractor");
        }
    }
}

#[test]
fn multiclass_gradients_weighted_and_unweighted() {
    for seed in 100..150 {
        let c = random_case(seed);
        let x = refs(&c.inputs);
        for weights in [None, Some(c.weights.as_slice())] {
            let loss = |m: &Model| joint_loss_and_grad(m, &x, &c.labels, weights).unwrap().0;
            let (_, head, ext) = joint_loss_and_grad(&c.model, &x, &c.labels, weights).unwrap();
            assert_close(&head, &numeric(&c.model, Part::Multiclass, &loss), "multiclass head");
            for part in extractor_parts(&c.model) {
                let Part::Extractor(k) = part else { unreachable!() };
                assert_close(&ext.layers[k], &numeric(&c.model, part, &loss), "extractor");
            }
            let (detached_loss, detached_head) = multiclass_loss_and_grad(&c.model, &x, &c.labels, weights).unwrap();
            assert_eq!(detached_head, head);
            assert_eq!(detached_loss, loss(&c.model));
        }
    }
}

#[test]
fn head_training_never_moves_the_extractor() {
    let c = random_case(7);
    let x = refs(&c.inputs);
    let mut m = c.model.clone();
    let mut velocity = m.multiclass.zeros_like();
    for _ in 0..20 {
        let (_, g) = multiclass_loss_and_grad(&m, &x, &c.labels, None).unwrap();
        m.multiclass.sgd_step(&g, 0.5, 0.9, &mut velocity);
    }
    assert_ne!(m.multiclass, c.model.multiclass);
    let bits = |m: &Model| m.extractor.layers.iter().flat_map(|l| l.params().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&m), bits(&c.model));

    // The head sampler and the number of head passes only affect stage 2, so the
    // extractor must come out bit-identical whatever they are.
    let d = generate_synthetic(&SyntheticSpec {
        num_classes: 3,
        num_groups: 2,
        samples_per_class: 60,
        bias_strength: PerClass::All(0.85),
        dominant_group: None,
        class_center_separation: 2.0,
        group_shift_magnitude: 2.0,
        feature_dim: 5,
        noise_sigma: 1.0,
        seed: 3,
    })
    .unwrap();
    let base = TrainConfig {
        method: TrainMethod::Bm,
        epochs: 3,
        batch_size: 16,
        learning_rate: 0.1,
        lr_decay_epochs: vec![2],
        gamma: 0.5,
        momentum: 0.0,
        seed: 11,
        head_sampler: HeadSampler::Os,
        refresh_views: false,
        head_passes: 1,
        model: ModelSpec {
            architecture: Architecture::OneHiddenLayer { hidden_units: 4 },
            latent_dim: 3,
        },
    };
    let views = build_label_views(&d, base.seed).unwrap();
    let (reference, _) = train_bias_mimicking(&d, &views, &base).unwrap();
    for (sampler, passes) in [(HeadSampler::Vanilla, 1), (HeadSampler::Us, 2), (HeadSampler::Uw, 1), (HeadSampler::Os, 4)] {
        let cfg = TrainConfig {
            head_sampler: sampler,
            head_passes: passes,
            ..base.clone()
        };
        let (m, _) = train_bias_mimicking(&d, &views, &cfg).unwrap();
        assert_eq!(bits(&m), bits(&reference), "{sampler:?}");
        assert_eq!(m.binary, reference.binary);
    }
}
