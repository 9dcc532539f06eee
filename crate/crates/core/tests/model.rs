use sparselab::model::{
    build_model, checkpoint, keep_fraction_for_capacity, param_count, ArchSpec, Mode, Model, ParamKind,
};
use sparselab::sparsity::{apply_masks, generate_static_masks, MaskSet};
use sparselab::{Error, Tensor};

fn families() -> Vec<ArchSpec> {
    vec![
        ArchSpec::mlp(&[1, 6, 6], 12, 2, 3),
        ArchSpec::vgg_like(&[2, 8, 8], 4, 11, 3),
        ArchSpec::resnet_like(&[2, 8, 8], 4, 18, 3),
    ]
}

fn input(spec: &ArchSpec, n: usize, salt: usize) -> Tensor {
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    Tensor::from_fn(&shape, |i| ((i * 31 + salt * 7) % 53) as f32 / 53.0)
}

/// Gives every bias, beta and running statistic a nonzero value so that
/// comparisons exercise all of them.
fn jitter(model: &mut Model) {
    let kinds: Vec<ParamKind> = model.param_specs().iter().map(|p| p.kind).collect();
    for (t, kind) in model.params_mut().iter_mut().zip(kinds) {
        if kind != ParamKind::Weight {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.05 * ((i % 5) as f32 - 2.0);
            }
        }
    }
    for s in model.running_stats_mut() {
        for (i, (m, v)) in s.mean.iter_mut().zip(s.var.iter_mut()).enumerate() {
            *m = 0.01 * i as f32;
            *v = 1.0 + 0.02 * i as f32;
        }
    }
}

#[test]
fn fixed_seed_mlp_logits_are_stable() {
    let spec = ArchSpec::mlp(&[6], 5, 1, 3);
    let model = build_model(&spec, 42).unwrap();
    let x = input(&spec, 2, 0);
    let logits = model.forward(None, &x, Mode::Eval).unwrap();
    assert_eq!(logits.shape(), &[2, 3]);
    let golden: [f32; 6] = GOLDEN;
    for (a, b) in logits.data().iter().zip(golden) {
        assert!((a - b).abs() < 1e-6, "{:?} vs {golden:?}", logits.data());
    }
    // x·W1 + b1 -> relu -> ·W2 + b2 in f64
    let p: Vec<Vec<f64>> = model.params().iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    for (row, out) in x.data().chunks(6).zip(logits.data().chunks(3)) {
        let h: Vec<f64> = (0..5)
            .map(|j| (p[1][j] + (0..6).map(|i| row[i] as f64 * p[0][i * 5 + j]).sum::<f64>()).max(0.0))
            .collect();
        for k in 0..3 {
            let want = p[3][k] + (0..5).map(|j| h[j] * p[2][j * 3 + k]).sum::<f64>();
            assert!((out[k] as f64 - want).abs() < 1e-5, "{out:?} vs {want}");
        }
    }
    assert_eq!(build_model(&spec, 42).unwrap(), model);
    assert_ne!(build_model(&spec, 43).unwrap(), model);
}

const GOLDEN: [f32; 6] = [-0.24644276, 1.369735, -0.6835126, 0.067415684, 0.553133, -0.33355412];

#[test]
fn kaiming_bounds_hold() {
    for spec in families() {
        let model = build_model(&spec, 1).unwrap();
        for (p, t) in model.param_specs().iter().zip(model.params()) {
            match p.kind {
                ParamKind::Weight => {
                    let bound = (6.0 / p.fan_in as f64).sqrt() as f32;
                    assert!(t.data().iter().all(|v| v.abs() <= bound), "{}", p.name);
                }
                ParamKind::BnGamma => assert!(t.data().iter().all(|&v| v == 1.0)),
                _ => assert!(t.data().iter().all(|&v| v == 0.0)),
            }
        }
    }
}

#[test]
fn all_zero_mask_leaves_only_the_output_bias() {
    let spec = ArchSpec::mlp(&[1, 6, 6], 8, 1, 4);
    let mut model = build_model(&spec, 5).unwrap();
    jitter(&mut model);
    let mut zeros = MaskSet::dense(&model);
    for m in zeros.masks_mut() {
        *m = Tensor::zeros(m.shape());
    }
    let logits = model.forward(Some(&zeros), &input(&spec, 3, 1), Mode::Eval).unwrap();
    let b2 = &model.params()[3];
    for row in logits.data().chunks(4) {
        assert_eq!(row, b2.data());
    }
}

#[test]
fn all_ones_mask_is_bitwise_identity() {
    for spec in families() {
        let mut model = build_model(&spec, 2).unwrap();
        jitter(&mut model);
        let x = input(&spec, 3, 2);
        let dense = MaskSet::dense(&model);
        for mode in [Mode::Eval, Mode::Train] {
            let a = model.forward(None, &x, mode).unwrap();
            let b = model.forward(Some(&dense), &x, mode).unwrap();
            assert_eq!(a, b, "{:?}", spec.family);
        }
    }
}

#[test]
fn masked_forward_equals_zeroed_weights() {
    for spec in families() {
        let mut model = build_model(&spec, 3).unwrap();
        jitter(&mut model);
        let masks = generate_static_masks(&model, 0.3, 9).unwrap();
        let zeroed = apply_masks(&model, &masks).unwrap();
        let x = input(&spec, 4, 3);
        for mode in [Mode::Eval, Mode::Train] {
            let a = model.forward(Some(&masks), &x, mode).unwrap();
            let b = zeroed.forward(None, &x, mode).unwrap();
            assert_eq!(a, b, "{:?}", spec.family);
        }
    }
}

#[test]
fn mlp_width_scales_maskable_weights_linearly() {
    let base = ArchSpec::mnist_mlp(128);
    let m = |w: usize| param_count(&base.with_width(w)).unwrap().maskable_weights;
    assert_eq!(m(128), 101_632);
    for k in [2, 3, 8, 32] {
        assert_eq!(m(128 * k), k * m(128));
    }
}

#[test]
fn capacity_is_matched_exactly() {
    let cases = [
        (ArchSpec::mnist_mlp(128), vec![128, 200, 1000, 4096]),
        (ArchSpec::vgg_like(&[3, 32, 32], 16, 11, 10), vec![16, 24, 64]),
        (ArchSpec::resnet_like(&[3, 32, 32], 16, 18, 10), vec![16, 40]),
    ];
    for (base, widths) in cases {
        let b = param_count(&base).unwrap().maskable_weights as f64;
        for w in widths {
            let scaled = base.with_width(w);
            let keep = keep_fraction_for_capacity(&base, &scaled).unwrap();
            let s = param_count(&scaled).unwrap().maskable_weights as f64;
            assert!((keep * s - b).abs() < 1e-6 * b, "{w}: {keep} * {s} vs {b}");
        }
    }
}

#[test]
fn depth_scaling_matches_capacity_too() {
    let base = ArchSpec::vgg_like(&[3, 32, 32], 16, 11, 10);
    for depth in [13, 16, 19] {
        let keep = keep_fraction_for_capacity(&base, &base.with_depth(depth)).unwrap();
        assert!(keep < 1.0);
    }
}

#[test]
fn narrower_scaled_network_is_a_capacity_error() {
    let base = ArchSpec::mnist_mlp(256);
    let e = keep_fraction_for_capacity(&base, &base.with_width(128)).unwrap_err();
    assert!(matches!(e, Error::Capacity(_)), "{e}");
    assert!(e.is_config());
    let other = ArchSpec::mlp(&[1, 28, 28], 256, 1, 5);
    assert!(keep_fraction_for_capacity(&base, &other).unwrap_err().is_config());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(build_model(&ArchSpec::mlp(&[4], 0, 1, 2), 0).unwrap_err().is_config());
    assert!(build_model(&ArchSpec::mlp(&[4], 3, 1, 1), 0).unwrap_err().is_config());
    assert!(build_model(&ArchSpec::vgg_like(&[16], 4, 11, 3), 0).unwrap_err().is_config());
    assert!(build_model(&ArchSpec::vgg_like(&[1, 8, 8], 4, 12, 3), 0).unwrap_err().is_config());
}

#[test]
fn checkpoints_round_trip_with_masks() {
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in families().into_iter().enumerate() {
        let mut model = build_model(&spec, 10 + i as u64).unwrap();
        jitter(&mut model);
        let masks = generate_static_masks(&model, 0.25, 4).unwrap();
        let path = dir.path().join(format!("m{i}.splb"));
        checkpoint::save(&path, &model, Some(&masks)).unwrap();
        let (back, back_masks) = checkpoint::load(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.seed(), model.seed());
        assert_eq!(back_masks.as_ref(), Some(&masks));
        let x = input(&spec, 2, i);
        assert_eq!(
            back.forward(back_masks.as_ref(), &x, Mode::Eval).unwrap(),
            model.forward(Some(&masks), &x, Mode::Eval).unwrap()
        );
        checkpoint::save(&path, &model, None).unwrap();
        assert_eq!(checkpoint::load(&path).unwrap().1, None);
    }
}

#[test]
fn corrupt_checkpoints_are_format_errors() {
    let spec = ArchSpec::mlp(&[4], 3, 1, 2);
    let model = build_model(&spec, 0).unwrap();
    let bytes = checkpoint::encode(&model, None).unwrap();
    for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
        let e = checkpoint::decode(&bytes[..cut]).unwrap_err();
        assert!(matches!(e, Error::Format { .. }), "cut {cut}: {e}");
    }
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert!(matches!(checkpoint::decode(&bad).unwrap_err(), Error::Format { offset: 0, .. }));
    let missing = checkpoint::load(std::path::Path::new("/nonexistent/model.splb")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
}
