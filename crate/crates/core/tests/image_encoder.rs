mod common;

use common::{distinct, probe, rng, uniform};
use deepfusion::image::{
    encode_image, preprocess_image, resize_bilinear, ConvLayerSpec, ConvStackConfig, ImageBranch, PoolSpec,
};
use deepfusion::{grad_check, Error, Graph, RgbImage, Tensor};
use proptest::prelude::*;

const NEUTRAL: [f64; 3] = [0.5; 3];

fn run(branch: &ImageBranch<Tensor>, cfg: &ConvStackConfig, image: &Tensor) -> deepfusion::Result<Tensor> {
    let mut g = Graph::new();
    let bound = branch.map("image", &mut |_, t| g.constant(t.clone()));
    let x = g.constant(image.clone());
    let out = encode_image(&mut g, x, &bound, cfg)?;
    Ok(g.value(out).clone())
}

/// 8×8 input through 1×1 and 2×2 kernels.
fn micro() -> ConvStackConfig {
    let conv = |out_channels, kernel, pool: Option<usize>, lrn| ConvLayerSpec {
        out_channels,
        kernel,
        stride: 1,
        pad: 0,
        lrn,
        pool: pool.map(|w| PoolSpec { window: w, stride: w }),
    };
    ConvStackConfig {
        preset: "micro".into(),
        input_side: 8,
        layers: vec![
            conv(2, 1, None, true),
            conv(2, 2, Some(2), false),
            conv(3, 1, None, false),
            conv(2, 2, None, false),
            conv(2, 1, Some(2), false),
        ],
        ..ConvStackConfig::tiny()
    }
}

#[test]
fn micro_output_shape_is_propagated() {
    let cfg = micro();
    cfg.validate().unwrap();
    // 8 → conv1 8 → conv2 7 → pool 3 → conv3 3 → conv4 2 → conv5 2 → pool 1
    assert_eq!(
        cfg.layer_shapes().unwrap(),
        vec![[2, 8, 8], [2, 3, 3], [3, 3, 3], [2, 2, 2], [2, 1, 1]]
    );
    let branch = ImageBranch::init(&cfg, &mut rng(1));
    let img = uniform(&mut rng(2), &[3, 8, 8], -0.5, 0.5);
    assert_eq!(run(&branch, &cfg, &img).unwrap().shape(), &[2]);
}

#[test]
fn tiny_output_shape() {
    let cfg = ConvStackConfig::tiny();
    let branch = ImageBranch::init(&cfg, &mut rng(1));
    let img = uniform(&mut rng(2), &[3, 16, 16], -0.5, 0.5);
    assert_eq!(run(&branch, &cfg, &img).unwrap().shape(), &[cfg.output_len().unwrap()]);
}

#[test]
fn zero_network_is_zero() {
    let cfg = ConvStackConfig::tiny();
    let branch = ImageBranch::zeros(&cfg);
    let img = uniform(&mut rng(3), &[3, 16, 16], -0.5, 0.5);
    let x = run(&branch, &cfg, &img).unwrap();
    assert!(x.data().iter().all(|&v| v == 0.0));
}

#[test]
fn first_kernel_gradient_matches_finite_differences() {
    let cfg = micro();
    let mut r = rng(4);
    let branch = ImageBranch::init(&cfg, &mut r);
    let img = distinct(&mut r, &[3, 8, 8]);
    let mut inputs = vec![img];
    branch.map("image", &mut |_, t| inputs.push(t.clone()));
    let report = grad_check(
        |g, v| {
            let bound = ImageBranch {
                layers: v[1..]
                    .chunks(2)
                    .map(|p| deepfusion::image::ConvLayer { kernel: p[0], bias: p[1] })
                    .collect(),
            };
            let x = encode_image(g, v[0], &bound, &cfg)?;
            probe(g, x, 6)
        },
        &inputs,
        1e-3,
        1e-4,
    )
    .unwrap();
    assert!(report.inputs[1].max_rel_error <= 1e-4, "{:?}", report.inputs[1]);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn full_preset_forward() {
    let cfg = ConvStackConfig::full();
    let branch = ImageBranch::init(&cfg, &mut rng(5));
    let img = uniform(&mut rng(6), &[3, 224, 224], -0.5, 0.5);
    let x = run(&branch, &cfg, &img).unwrap();
    assert_eq!(x.shape(), &[9216]);
    assert!(x.data().iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn mismatched_kernel_names_layer() {
    let cfg = ConvStackConfig::tiny();
    let mut branch = ImageBranch::init(&cfg, &mut rng(7));
    branch.layers[2].kernel = Tensor::zeros(&[8, 3, 3, 3]);
    let img = Tensor::zeros(&[3, 16, 16]);
    match run(&branch, &cfg, &img) {
        Err(Error::Shape { detail, .. }) => assert!(detail.starts_with("layer 3:"), "{detail}"),
        other => panic!("expected a shape error, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn representation_is_nonnegative_and_fixed_length(seed in any::<u64>()) {
        let cfg = ConvStackConfig::tiny();
        let branch = ImageBranch::init(&cfg, &mut rng(seed));
        let img = uniform(&mut rng(seed ^ 0x5eed), &[3, 16, 16], -1.0, 1.0);
        let x = run(&branch, &cfg, &img).unwrap();
        prop_assert_eq!(x.len(), 32);
        prop_assert!(x.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn checkerboard_upscale_matches_hand_computation() {
    // Pixel-centre sampling of 2 → 4 puts samples at source offsets
    // -0.25, 0.25, 0.75, 1.25, clamped to [0, 1].
    let t = [0.0, 0.25, 0.75, 1.0];
    let out = resize_bilinear(&[0.0, 1.0, 1.0, 0.0], 2, 2, 4, 4);
    for (y, ty) in t.iter().enumerate() {
        for (x, tx) in t.iter().enumerate() {
            let expected = tx + ty - 2.0 * tx * ty;
            assert!((out[y * 4 + x] - expected).abs() < 1e-12, "({x},{y})");
        }
    }
}

#[test]
fn constant_image_stays_constant() {
    let raw = RgbImage::new(5, 3, [200u8, 100, 0].repeat(15)).unwrap();
    let t = preprocess_image(&raw, 8, NEUTRAL).unwrap();
    assert_eq!(t.side(), 8);
    let data = t.tensor().data();
    for (c, value) in [200.0 / 255.0 - 0.5, 100.0 / 255.0 - 0.5, -0.5].iter().enumerate() {
        assert!(data[c * 64..(c + 1) * 64].iter().all(|v| (v - value).abs() < 1e-12));
    }
}

#[test]
fn empty_image_is_rejected() {
    let raw = RgbImage { width: 0, height: 0, pixels: vec![] };
    assert!(preprocess_image(&raw, 4, NEUTRAL).is_err());
}
