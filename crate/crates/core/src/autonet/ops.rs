//! Raw slice kernels shared by the forward pass, backprop and excitation
//! backprop. Layouts: activations `[c, h, w]`, conv weights
//! `[out, in, 3, 3]`, linear weights `[out, in]`.

use super::CONV_KERNEL;

/// Valid output range `[lo, hi)` along one axis for tap offset `d`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

#[inline]
fn taps() -> impl Iterator<Item = (usize, usize, isize, isize)> {
    (0..CONV_KERNEL).flat_map(|ky| {
        (0..CONV_KERNEL).map(move |kx| (ky, kx, ky as isize - 1, kx as isize - 1))
    })
}

/// `out[co, y, x] = bias[co] + Σ w[co, ci, ky, kx] · in[ci, y+ky-1, x+kx-1]`.
/// `bias` may be omitted.
pub fn conv_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; out_ch * hw];
    for co in 0..out_ch {
        let out_c = &mut out[co * hw..(co + 1) * hw];
        if let Some(b) = bias {
            out_c.fill(b[co]);
        }
        for ci in 0..in_ch {
            let in_c = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * in_ch + ci) * CONV_KERNEL * CONV_KERNEL;
            for (ky, kx, dy, dx) in taps() {
                let wv = weight[wbase + ky * CONV_KERNEL + kx];
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let orow = &mut out_c[y * w + x0..y * w + x1];
                    let irow = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (o, i) in orow.iter_mut().zip(irow) {
                        *o += wv * i;
                    }
                }
            }
        }
    }
    out
}

/// Transposed convolution: gradient of `conv_forward` with respect to its
/// input, given the output gradient.
pub fn conv_backward_input(
    grad_out: &[f64],
    weight: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let hw = h * w;
    let mut grad_in = vec![0.0; in_ch * hw];
    for co in 0..out_ch {
        let g_c = &grad_out[co * hw..(co + 1) * hw];
        for ci in 0..in_ch {
            let gi_c = &mut grad_in[ci * hw..(ci + 1) * hw];
            let wbase = (co * in_ch + ci) * CONV_KERNEL * CONV_KERNEL;
            for (ky, kx, dy, dx) in taps() {
                let wv = weight[wbase + ky * CONV_KERNEL + kx];
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let grow = &g_c[y * w + x0..y * w + x1];
                    let irow = &mut gi_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    for (i, g) in irow.iter_mut().zip(grow) {
                        *i += wv * g;
                    }
                }
            }
        }
    }
    grad_in
}

/// Weight and bias gradients of `conv_forward`.
pub fn conv_backward_params(
    input: &[f64],
    grad_out: &[f64],
    in_ch: usize,
    out_ch: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let mut gw = vec![0.0; out_ch * in_ch * CONV_KERNEL * CONV_KERNEL];
    let mut gb = vec![0.0; out_ch];
    for co in 0..out_ch {
        let g_c = &grad_out[co * hw..(co + 1) * hw];
        gb[co] = g_c.iter().sum();
        for ci in 0..in_ch {
            let in_c = &input[ci * hw..(ci + 1) * hw];
            let wbase = (co * in_ch + ci) * CONV_KERNEL * CONV_KERNEL;
            for (ky, kx, dy, dx) in taps() {
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (x0 as isize + dx) as usize;
                    let grow = &g_c[y * w + x0..y * w + x1];
                    let irow = &in_c[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                    acc += grow.iter().zip(irow).map(|(g, i)| g * i).sum::<f64>();
                }
                gw[wbase + ky * CONV_KERNEL + kx] = acc;
            }
        }
    }
    (gw, gb)
}

/// 2×2/stride-2 max pool. Returns the pooled values and, per output cell, the
/// flat input index of the winner (first maximum in row-major window order).
pub fn maxpool_forward(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

/// Scatters each output value back to its recorded winner.
pub fn maxpool_route(values: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut routed = vec![0.0; input_len];
    for (&v, &idx) in values.iter().zip(argmax) {
        routed[idx] += v;
    }
    routed
}

pub fn linear_forward(
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    in_f: usize,
    out_f: usize,
) -> Vec<f64> {
    (0..out_f)
        .map(|o| {
            let row = &weight[o * in_f..(o + 1) * in_f];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            dot + bias.map_or(0.0, |b| b[o])
        })
        .collect()
}

pub fn linear_backward_input(grad_out: &[f64], weight: &[f64], in_f: usize, out_f: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; in_f];
    for o in 0..out_f {
        let g = grad_out[o];
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * in_f..(o + 1) * in_f];
        for (gi, w) in grad_in.iter_mut().zip(row) {
            *gi += g * w;
        }
    }
    grad_in
}

pub fn linear_backward_params(input: &[f64], grad_out: &[f64], in_f: usize, out_f: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; out_f * in_f];
    for o in 0..out_f {
        let g = grad_out[o];
        for (gw, x) in gw[o * in_f..(o + 1) * in_f].iter_mut().zip(input) {
            *gw = g * x;
        }
    }
    (gw, grad_out.to_vec())
}
