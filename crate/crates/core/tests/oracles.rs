//! Library results against independent reference computations.
#![allow(clippy::needless_range_loop)]

mod common;

use common::*;
use gradex::attribution::{grad_cam, present_baseline, AttributionRequest, Method, SaliencyMap};
use gradex::autonet::{backward_to_layer, forward, forward_from, Arch, LayerSpec, Model, Params};
use gradex::gradual::{build_stage_plan, gradual_extrapolate, gradual_extrapolate_traced};
use gradex::pipeline::{explain_with_tape, MethodSpec};
use gradex::tensor::{normalize_max, upsample_nearest, Matrix, Tensor};
use gradex::trainer::{generate_dataset, train, TrainConfig};

fn assert_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y}");
    }
}

#[test]
fn forward_matches_loop_reference() {
    for arch in [Arch::NetA, Arch::NetB] {
        let model = arch.build(0).unwrap();
        let [c, h, w] = arch.input_dims();
        let image = uniform_image(0, c, h, w);
        let (logits, tape) = forward(&model, &image).unwrap();
        let reference = ref_tape(&model, image.data());
        for (i, r) in reference.iter().enumerate() {
            assert_close(tape.get(i).unwrap().data(), r, 1e-12, &format!("{} tape {i}", arch.name()));
        }
        assert_close(logits.data(), reference.last().unwrap(), 1e-12, "logits");
    }
}

#[test]
fn net_a_tape_spatial_contract() {
    let model = Arch::NetA.build(0).unwrap();
    let sizes: Vec<usize> = (0..10).map(|i| model.tape_dims(i).unwrap()[1]).collect();
    assert_eq!(sizes, [32, 32, 32, 16, 16, 16, 8, 8, 8, 4]);
    assert_eq!(model.tape_dims(10).unwrap(), [512]);
    assert_eq!(model.tape_dims(11).unwrap(), [3]);
}

#[test]
fn forward_and_attribution_are_deterministic() {
    let model = Arch::NetA.build(3).unwrap();
    let image = uniform_image(9, 1, 32, 32);
    let (l1, t1) = forward(&model, &image).unwrap();
    let (l2, t2) = forward(&model, &image).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(t1.activations(), t2.activations());
    for method in Method::ALL {
        for gradual in [false, true] {
            let spec = MethodSpec::new(method, gradual);
            let a = explain_with_tape(&model, &t1, spec, None, None).unwrap();
            let b = explain_with_tape(&model, &t2, spec, None, None).unwrap();
            assert_eq!(a.map, b.map, "{spec}");
        }
    }
}

#[test]
fn maxpool_gradient_only_at_winners() {
    let model = Arch::NetA.build(1).unwrap();
    let image = uniform_image(4, 1, 32, 32);
    let (_, tape) = forward(&model, &image).unwrap();
    for (pool_out, pool_in) in [(3, 2), (6, 5), (9, 8)] {
        let winners = tape.argmax(pool_out).unwrap();
        let g = backward_to_layer(&model, &tape, 0, pool_in).unwrap();
        for (i, v) in g.data().iter().enumerate() {
            if *v != 0.0 {
                assert!(winners.contains(&i), "gradient at non-winner {i} of tape {pool_in}");
            }
        }
    }
}

/// Stage composition written out for net-A's two pools using the loop
/// reference tape.
#[test]
fn gradual_matches_straight_line_reference() {
    let model = Arch::NetA.build(0).unwrap();
    let image = uniform_image(0, 1, 32, 32);
    let (_, tape) = forward(&model, &image).unwrap();
    let base = grad_cam(&AttributionRequest::new(&model, &tape, 1, 8)).unwrap();
    let plan = build_stage_plan(&model, 8).unwrap();
    let got = gradual_extrapolate(&base, &tape, &plan).unwrap();

    let r = ref_tape(&model, image.data());
    let m2 = ref_contribution(&r[5], 16, 16, 16);
    let m1 = ref_contribution(&r[2], 8, 32, 32);
    let b = base.map.data();
    let bmax = b.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0; 1024];
    for y in 0..32 {
        for x in 0..32 {
            let coarse = if bmax > 0.0 { b[(y / 4) * 8 + x / 4] / bmax } else { 0.0 };
            out[y * 32 + x] = coarse * m2[(y / 2) * 16 + x / 2] * m1[y * 32 + x];
        }
    }
    let omax = out.iter().cloned().fold(0.0, f64::max);
    if omax > 0.0 {
        for v in &mut out {
            *v /= omax;
        }
    }
    assert!(omax > 0.0);
    assert_close(got.data(), &out, 1e-12, "gradual");
}

/// One stage over a hand-built guidance: channels tiled from
/// [[1,3],[2,4]] and [[3,1],[4,0]], base [[1,0],[0,0]].
#[test]
fn one_stage_hand_fixture() {
    let specs = vec![
        LayerSpec::Conv { in_ch: 2, out_ch: 2 },
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Linear { in_features: 8, out_features: 2 },
    ];
    let mut w = vec![0.0; 2 * 2 * 9];
    w[4] = 1.0; // out 0 <- in 0 centre
    w[(2 + 1) * 9 + 4] = 1.0; // out 1 <- in 1 centre
    let params = vec![
        Some(Params { weight: Tensor::from_vec(&[2, 2, 3, 3], w).unwrap(), bias: Tensor::zeros(&[2]).unwrap() }),
        None,
        None,
        None,
        Some(Params { weight: Tensor::filled(&[2, 8], 0.1).unwrap(), bias: Tensor::zeros(&[2]).unwrap() }),
    ];
    let model = Model::new("fixture", [2, 4, 4], specs, params, labels(2)).unwrap();
    let tile = |p: [[f64; 2]; 2]| (0..16).map(move |i| p[(i / 4) % 2][(i % 4) % 2]);
    let data: Vec<f64> = tile([[1.0, 3.0], [2.0, 4.0]]).chain(tile([[3.0, 1.0], [4.0, 0.0]])).collect();
    let (_, tape) = forward(&model, &Tensor::from_vec(&[2, 4, 4], data).unwrap()).unwrap();
    let plan = build_stage_plan(&model, 3).unwrap();
    assert_eq!(plan.len(), 1);
    let base = SaliencyMap {
        map: Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap(),
        target_layer: 3,
        method: Method::GradCam,
    };
    let got = gradual_extrapolate(&base, &tape, &plan).unwrap();
    let t = 2.0 / 3.0;
    let want = Matrix::from_rows(&[
        [t, t, 0.0, 0.0],
        [1.0, t, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
    .unwrap();
    assert_close(got.data(), want.data(), 1e-15, "fixture");
}

#[test]
fn gradual_never_exceeds_upsampled_base() {
    for seed in 0..10 {
        let model = Arch::NetA.build(seed).unwrap();
        let (_, tape) = forward(&model, &uniform_image(100 + seed, 1, 32, 32)).unwrap();
        let plan = build_stage_plan(&model, 8).unwrap();
        let base = grad_cam(&AttributionRequest::new(&model, &tape, (seed % 3) as usize, 8)).unwrap();
        let trace = gradual_extrapolate_traced(&base, &tape, &plan).unwrap();
        let bound = upsample_nearest(&normalize_max(&base.map).unwrap(), 4).unwrap();
        let last = trace.stages.last().unwrap();
        for (v, b) in last.data().iter().zip(bound.data()) {
            assert!(v <= b);
        }
        assert!(trace.output.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn grad_cam_scales_with_head_weights() {
    let model = Arch::NetA.build(2).unwrap();
    let (_, tape) = forward(&model, &uniform_image(5, 1, 32, 32)).unwrap();
    let mut scaled = model.clone();
    let head = model.params()[10].clone().unwrap();
    let weight = Tensor::from_vec(head.weight.dims(), head.weight.data().iter().map(|w| w * 4.0).collect()).unwrap();
    scaled.replace_params(10, Params { weight, bias: head.bias }).unwrap();
    let (_, tape2) = forward(&scaled, &uniform_image(5, 1, 32, 32)).unwrap();
    for class in 0..3 {
        let a = grad_cam(&AttributionRequest::new(&model, &tape, class, 8)).unwrap().map;
        let b = grad_cam(&AttributionRequest::new(&scaled, &tape2, class, 8)).unwrap().map;
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x * 4.0, *y);
        }
        assert_eq!(normalize_max(&a).unwrap(), normalize_max(&b).unwrap());
    }
}

#[test]
fn bilinear_ramp_peaks_at_corner() {
    let ramp = Matrix::from_vec(4, 4, (0..16).map(|i| ((i / 4) + (i % 4)) as f64).collect()).unwrap();
    let s = SaliencyMap { map: ramp, target_layer: 0, method: Method::GradCam };
    let up = present_baseline(&s, 32, 32).unwrap();
    assert_eq!(up.get(31, 31), 1.0);
    assert_eq!(up.get(0, 0), 0.0);
    assert_eq!(up.max(), 1.0);
    let (h, w) = (up.h(), up.w());
    let argmax = up.data().iter().position(|&v| v == 1.0).unwrap();
    assert_eq!(argmax, h * w - 1);
}

/// Grad-CAM on the trained net-A against weights built from central
/// finite differences of the class logit. Many 2×2 windows of the target
/// activation are tied at 0, where the derivative with respect to the
/// activation does not exist; differences are taken on the pool output
/// instead and routed to each window's first maximum in row-major order.
#[test]
fn grad_cam_matches_finite_difference_on_trained_model() {
    let config = TrainConfig::default();
    let data = generate_dataset(config.seed, config.train_count + config.test_count, 32, 32).unwrap();
    let trained = train(Arch::NetA.build(0).unwrap(), &data, &config).unwrap().model;
    let sample = &data[config.train_count];
    let (_, tape) = forward(&trained, &sample.image).unwrap();
    let got = grad_cam(&AttributionRequest::new(&trained, &tape, sample.label, 8)).unwrap().map;

    let act = tape.get(8).unwrap();
    let pooled = tape.get(9).unwrap();
    let (c, h, w) = act.chw().unwrap();
    let (ph, pw) = (h / 2, w / 2);
    let eps = 1e-5;
    let mut grad = vec![0.0; c * h * w];
    for ch in 0..c {
        for py in 0..ph {
            for px in 0..pw {
                let idx = (ch * ph + py) * pw + px;
                let mut plus = pooled.clone();
                plus.data_mut()[idx] += eps;
                let mut minus = pooled.clone();
                minus.data_mut()[idx] -= eps;
                let lp = forward_from(&trained, 9, &plus).unwrap().data()[sample.label];
                let lm = forward_from(&trained, 9, &minus).unwrap().data()[sample.label];
                let g = (lp - lm) / (2.0 * eps);
                let mut best = (0, f64::NEG_INFINITY);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let a = (ch * h + 2 * py + dy) * w + 2 * px + dx;
                        if act.data()[a] > best.1 {
                            best = (a, act.data()[a]);
                        }
                    }
                }
                grad[best.0] += g;
            }
        }
    }
    let mut map = vec![0.0; h * w];
    for ch in 0..c {
        let alpha = grad[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        for p in 0..h * w {
            map[p] += alpha * act.data()[ch * h * w + p];
        }
    }
    let map: Vec<f64> = map.into_iter().map(|v| v.max(0.0)).collect();
    assert!(map.iter().any(|&v| v > 0.0));
    assert_close(got.data(), &map, 1e-4, "grad-cam");
}
