//! Shared fixtures and straight-line reference implementations for the
//! integration tests. Nothing here calls the library's numeric kernels.
#![allow(dead_code, clippy::needless_range_loop)]

use gradex::autonet::{LayerSpec, Model, Params};
use gradex::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every tape entry of `model` on `image`, computed with nested loops.
pub fn ref_tape(model: &Model, image: &[f64]) -> Vec<Vec<f64>> {
    let mut tape = vec![image.to_vec()];
    for (i, spec) in model.specs().iter().enumerate() {
        let input = tape.last().unwrap();
        let dims = model.tape_dims(i).unwrap().to_vec();
        let out = match *spec {
            LayerSpec::Conv { in_ch, out_ch } => {
                let p = model.params()[i].as_ref().unwrap();
                let (w, b) = (p.weight.data(), p.bias.data());
                let (h, wd) = (dims[1] as isize, dims[2] as isize);
                let mut out = Vec::new();
                for o in 0..out_ch {
                    for y in 0..h {
                        for x in 0..wd {
                            let mut acc = b[o];
                            for c in 0..in_ch {
                                for ky in 0..3isize {
                                    for kx in 0..3isize {
                                        let (yy, xx) = (y + ky - 1, x + kx - 1);
                                        if yy < 0 || xx < 0 || yy >= h || xx >= wd {
                                            continue;
                                        }
                                        let wi = ((o * in_ch + c) * 3 + ky as usize) * 3 + kx as usize;
                                        let ii = (c * h as usize + yy as usize) * wd as usize + xx as usize;
                                        acc += w[wi] * input[ii];
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            LayerSpec::MaxPool => {
                let (c, h, w) = (dims[0], dims[1], dims[2]);
                let mut out = Vec::new();
                for ch in 0..c {
                    for y in (0..h).step_by(2) {
                        for x in (0..w).step_by(2) {
                            let at = |yy: usize, xx: usize| input[(ch * h + yy) * w + xx];
                            out.push(at(y, x).max(at(y, x + 1)).max(at(y + 1, x)).max(at(y + 1, x + 1)));
                        }
                    }
                }
                out
            }
            LayerSpec::Flatten => input.clone(),
            LayerSpec::Linear { in_features, out_features } => {
                let p = model.params()[i].as_ref().unwrap();
                (0..out_features)
                    .map(|k| {
                        let mut acc = p.bias.data()[k];
                        for j in 0..in_features {
                            acc += p.weight.data()[k * in_features + j] * input[j];
                        }
                        acc
                    })
                    .collect()
            }
        };
        tape.push(out);
    }
    tape
}

/// Channel mean divided by its maximum, one pixel at a time.
pub fn ref_contribution(act: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut m = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut s = 0.0;
            for ch in 0..c {
                s += act[ch * h * w + i * w + j];
            }
            m[i * w + j] = s / c as f64;
        }
    }
    let mut max = 0.0;
    for &v in &m {
        if v > max {
            max = v;
        }
    }
    if max > 0.0 {
        for v in &mut m {
            *v /= max;
        }
    }
    m
}

pub fn uniform_image(seed: u64, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

pub fn labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("c{i}")).collect()
}

/// Small conv net with random weights and biases:
/// 1×8×8 → conv 3 → relu → pool → conv 4 → relu → pool → flatten → linear 3.
pub fn small_model(seed: u64) -> Model {
    let specs = vec![
        LayerSpec::Conv { in_ch: 1, out_ch: 3 },
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Conv { in_ch: 3, out_ch: 4 },
        LayerSpec::Relu,
        LayerSpec::MaxPool,
        LayerSpec::Flatten,
        LayerSpec::Linear { in_features: 16, out_features: 3 },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = specs
        .iter()
        .map(|s| {
            s.param_dims().map(|(wd, bd)| {
                let n: usize = wd.iter().product();
                let scale = (2.0 / wd[1..].iter().product::<usize>() as f64).sqrt();
                Params {
                    weight: Tensor::from_vec(&wd, (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale * 1.7).collect()).unwrap(),
                    bias: Tensor::from_vec(&bd, (0..bd[0]).map(|_| rng.gen_range(-0.1..0.3)).collect()).unwrap(),
                }
            })
        })
        .collect();
    Model::new("small", [1, 8, 8], specs, params, labels(3)).unwrap()
}

/// True when no ReLU input lies within `margin` of 0 and every pool window
/// has a unique winner by at least `margin`, so central differences with a
/// smaller step never cross a kink.
pub fn kink_free(model: &Model, tape: &[Vec<f64>], margin: f64) -> bool {
    for (i, spec) in model.specs().iter().enumerate() {
        let input = &tape[i];
        match spec {
            LayerSpec::Relu => {
                if input.iter().any(|v| v.abs() < margin) {
                    return false;
                }
            }
            LayerSpec::MaxPool => {
                let d = model.tape_dims(i).unwrap();
                let (c, h, w) = (d[0], d[1], d[2]);
                for ch in 0..c {
                    for y in (0..h).step_by(2) {
                        for x in (0..w).step_by(2) {
                            let mut v = [
                                input[(ch * h + y) * w + x],
                                input[(ch * h + y) * w + x + 1],
                                input[(ch * h + y + 1) * w + x],
                                input[(ch * h + y + 1) * w + x + 1],
                            ];
                            v.sort_by(|a, b| b.total_cmp(a));
                            if v[0] - v[1] < margin {
                                return false;
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    true
}

/// `|a - b| / max(|a|, |b|, 1e-3)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}
