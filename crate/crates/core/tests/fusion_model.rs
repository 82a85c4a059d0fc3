mod common;

use common::{fusion_grad_check, rng, synthetic_examples, uniform};
use deepfusion::model::{forward, fuse, head_logits, Dense, Head};
use deepfusion::{Error, FusionModel, FusionParams, Graph, Modality, ModelConfig, Tensor};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn values(g: &Graph, v: deepfusion::Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

#[test]
fn fuse_puts_image_block_first() {
    let mut g = Graph::new();
    let xi = g.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let xt = g.param(Tensor::vector(vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap());
    let x = fuse(&mut g, xi, xt).unwrap();
    assert_eq!(values(&g, x), (1..=10).map(f64::from).collect::<Vec<_>>());

    let w = g.constant(Tensor::new(vec![1, 10], (1..=10).map(f64::from).collect()).unwrap());
    let row = g.reshape(x, &[10, 1]).unwrap();
    let loss = g.matmul(w, row).unwrap();
    let loss = g.reshape(loss, &[1]).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(xi).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(g.grad(xt).unwrap().data(), &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
}

#[test]
fn fuse_rejects_non_vectors() {
    let mut g = Graph::new();
    let xi = g.constant(Tensor::zeros(&[2, 2]));
    let xt = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(fuse(&mut g, xi, xt), Err(Error::Shape { .. })));
    // There is no empty representation to fuse: zero-length tensors do not exist.
    assert!(Tensor::new(vec![0], vec![]).is_err());
}

fn random_head(seed: u64, widths: [usize; 4]) -> Head<Tensor> {
    let mut r = rng(seed);
    Head {
        layers: widths
            .windows(2)
            .map(|w| Dense {
                weight: uniform(&mut r, &[w[1], w[0]], -1.0, 1.0),
                bias: uniform(&mut r, &[w[1]], -0.5, 0.5),
            })
            .collect(),
    }
}

fn run_head(head: &Head<Tensor>, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let bound = Head {
        layers: head
            .layers
            .iter()
            .map(|d| Dense {
                weight: g.constant(d.weight.clone()),
                bias: g.constant(d.bias.clone()),
            })
            .collect(),
    };
    let x = g.constant(Tensor::vector(x.to_vec()).unwrap());
    let logits = head_logits(&mut g, x, &bound).unwrap();
    let probs = forward(&mut g, x, &bound).unwrap();
    (values(&g, logits), values(&g, probs))
}

#[test]
fn zero_head_is_uniform() {
    let mut head = random_head(1, [5, 4, 3, 2]);
    for d in &mut head.layers {
        d.weight = Tensor::zeros(d.weight.shape());
        d.bias = Tensor::zeros(d.bias.shape());
    }
    assert_eq!(run_head(&head, &[1.0, -2.0, 3.0, 0.5, 9.0]).1, [0.5, 0.5]);
}

#[test]
fn head_width_mismatch() {
    let head = random_head(1, [5, 4, 3, 2]);
    let mut g = Graph::new();
    let bound = Head {
        layers: head
            .layers
            .iter()
            .map(|d| Dense { weight: g.constant(d.weight.clone()), bias: g.constant(d.bias.clone()) })
            .collect(),
    };
    let x = g.constant(Tensor::zeros(&[6]));
    assert!(head_logits(&mut g, x, &bound).is_err());
}

proptest! {
    #[test]
    fn head_output_is_a_distribution(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 5)) {
        let head = random_head(seed, [5, 4, 3, 2]);
        let (logits, p) = run_head(&head, &x);
        prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-6);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert_eq!(p[1] > p[0], logits[1] > logits[0]);
    }

    #[test]
    fn shifting_last_bias_changes_nothing(seed in any::<u64>(), shift in -5.0f64..5.0) {
        let head = random_head(seed, [5, 4, 3, 2]);
        let x = [0.3, -0.2, 0.9, 1.1, -0.4];
        let (_, p) = run_head(&head, &x);
        let mut shifted = head.clone();
        let b = &mut shifted.layers[2].bias;
        *b = Tensor::vector(b.data().iter().map(|v| v + shift).collect()).unwrap();
        let (_, q) = run_head(&shifted, &x);
        prop_assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
    }

    #[test]
    fn scaling_last_layer_keeps_argmax(seed in any::<u64>()) {
        let head = random_head(seed, [5, 4, 3, 2]);
        let x = [0.7, -1.2, 0.1, 0.4, 2.0];
        let (a, _) = run_head(&head, &x);
        let mut scaled = head.clone();
        let last = &mut scaled.layers[2];
        last.weight.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        last.bias.data_mut().iter_mut().for_each(|v| *v *= 2.0);
        let (b, _) = run_head(&scaled, &x);
        prop_assert_eq!(a[1] > a[0], b[1] > b[0]);
    }
}

#[test]
fn zero_model_has_loss_ln2_and_predicts_negative() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(4, 1, &cfg, 12);
    let model = FusionModel::zeros(cfg).unwrap();
    for ex in &examples {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let loss = model.sample_loss(&mut g, &bound, ex, &table).unwrap();
        assert!((g.value(loss).data()[0] - LN2).abs() < 1e-15);
        let p = model.predict(ex, &table).unwrap();
        assert_eq!((p.label, p.p_neg, p.p_pos), (0, 0.5, 0.5));
    }
}

fn sample_losses(model: &FusionModel, examples: &[deepfusion::Example], table: &deepfusion::EmbeddingTable) -> Vec<f64> {
    examples
        .iter()
        .map(|ex| {
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let l = model.sample_loss(&mut g, &bound, ex, table).unwrap();
            g.value(l).data()[0]
        })
        .collect()
}

fn batch_loss(model: &FusionModel, batch: &[deepfusion::Example], table: &deepfusion::EmbeddingTable) -> deepfusion::Result<f64> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let l = model.batch_loss(&mut g, &bound, batch, table)?;
    Ok(g.value(l).data()[0])
}

#[test]
fn batch_loss_is_mean_of_sample_losses() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(3, 2, &cfg, 20);
    let model = FusionModel::new(cfg, 4).unwrap();
    let each = sample_losses(&model, &examples, &table);
    assert!(each.iter().all(|l| l.is_finite() && *l > 0.0));

    let mean = (each[0] + each[1] + each[2]) / 3.0;
    assert!((batch_loss(&model, &examples, &table).unwrap() - mean).abs() < 1e-14);
    assert_eq!(batch_loss(&model, &examples[..1], &table).unwrap(), each[0]);
    let doubled = [examples[1].clone(), examples[1].clone()];
    assert!((batch_loss(&model, &doubled, &table).unwrap() - each[1]).abs() < 1e-15);
    assert!(batch_loss(&model, &[], &table).is_err());

    let (parallel, _) = model.batch_gradients(&examples, &table).unwrap();
    assert!((parallel - mean).abs() < 1e-14);
}

#[test]
fn batch_gradients_match_single_graph_backward() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(3, 3, &cfg, 15);
    let model = FusionModel::new(cfg, 5).unwrap();
    let (_, grads) = model.batch_gradients(&examples, &table).unwrap();

    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let loss = model.batch_loss(&mut g, &bound, &examples, &table).unwrap();
    g.backward(loss).unwrap();
    let mut expected = Vec::new();
    bound.for_each(&mut |_, v| expected.extend_from_slice(g.grad(*v).unwrap().data()));
    let mut actual = Vec::new();
    grads.for_each(&mut |_, t| actual.extend_from_slice(t.data()));
    common::assert_close(&actual, &expected, 1e-12);
}

#[test]
fn gradient_reaches_both_branches() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(4, 6, &cfg, 30);
    let model = FusionModel::new(cfg, 9).unwrap();
    for ex in &examples {
        let (_, grads) = model.batch_gradients(std::slice::from_ref(ex), &table).unwrap();
        assert!(grads.norm_with_prefix("image.") > 0.0, "{}", ex.id);
        assert!(grads.norm_with_prefix("text.") > 0.0, "{}", ex.id);
    }
}

#[test]
fn end_to_end_gradient_check() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(2, 8, &cfg, 7);
    let model = FusionModel::new(cfg, 2).unwrap();
    for ex in &examples {
        let report = fusion_grad_check(&model, ex, &table, 1e-3, 1e-4);
        assert!(report.passed(), "{}: {report:?}", ex.id);
    }
}

#[test]
fn single_modality_models() {
    let base = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(2, 3, &base, 10);
    for modality in [Modality::ImageOnly, Modality::TextOnly] {
        let model = FusionModel::new(base.clone().with_modality(modality), 1).unwrap();
        assert_eq!(model.params.image.is_some(), modality == Modality::ImageOnly);
        assert_eq!(model.params.text.is_some(), modality == Modality::TextOnly);
        let fc1 = model.params.head.layers[0].weight.shape()[1];
        assert_eq!(fc1, if modality == Modality::ImageOnly { 32 } else { 18 });
        model.predict(&examples[0], &table).unwrap();
    }
}

#[test]
fn prediction_is_repeatable() {
    let cfg = ModelConfig::tiny();
    let (examples, table) = synthetic_examples(3, 4, &cfg, 40);
    let model = FusionModel::new(cfg, 3).unwrap();
    let a = model.predict_all(&examples, &table).unwrap();
    let b = model.predict_all(&examples, &table).unwrap();
    assert_eq!(a, b);
    for p in a {
        assert!((p.p_neg + p.p_pos - 1.0).abs() < 1e-12);
    }
}

#[test]
fn parameter_names_are_canonical() {
    let params = FusionParams::zeros(&ModelConfig::tiny()).unwrap();
    let names = params.names();
    assert_eq!(names.first().unwrap(), "image.conv1.kernel");
    assert!(names.contains(&"text.w4.bias".to_string()));
    assert_eq!(names.last().unwrap(), "head.fc3.bias");
    assert_eq!(names.len(), 10 + 6 + 6);
}
