//! Base saliency methods: Grad-CAM, excitation backprop and its contrastive
//! variant. Each yields a non-negative map at the spatial resolution of the
//! requested tape entry.

use std::fmt;
use std::str::FromStr;

use crate::autonet::{backward_to_layer, ops, ActivationTape, LayerSpec, Model};
use crate::error::{Error, Result};
use crate::tensor::{normalize_max, upsample_bilinear, Matrix, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GradCam,
    Ebp,
    ContrastiveEbp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::GradCam, Method::Ebp, Method::ContrastiveEbp];

    pub fn name(self) -> &'static str {
        match self {
            Method::GradCam => "gradcam",
            Method::Ebp => "ebp",
            Method::ContrastiveEbp => "cebp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" | "grad-cam" => Ok(Method::GradCam),
            "ebp" => Ok(Method::Ebp),
            "cebp" => Ok(Method::ContrastiveEbp),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub map: Matrix,
    pub target_layer: usize,
    pub method: Method,
}

#[derive(Debug, Clone, Copy)]
pub struct AttributionRequest<'a> {
    pub model: &'a Model,
    pub tape: &'a ActivationTape,
    pub class_idx: usize,
    pub target_layer: usize,
}

impl<'a> AttributionRequest<'a> {
    pub fn new(model: &'a Model, tape: &'a ActivationTape, class_idx: usize, target_layer: usize) -> Self {
        AttributionRequest {
            model,
            tape,
            class_idx,
            target_layer,
        }
    }

    fn check(&self) -> Result<(usize, usize, usize)> {
        if self.tape.len() != self.model.tape_len() {
            return Err(Error::invalid("tape does not belong to this model"));
        }
        if self.class_idx >= self.model.num_classes() {
            return Err(Error::invalid(format!(
                "class {} out of range ({} classes)",
                self.class_idx,
                self.model.num_classes()
            )));
        }
        match self.tape.get(self.target_layer) {
            Some(t) if t.rank() == 3 => t.chw(),
            Some(t) => Err(Error::invalid(format!(
                "target layer {} is not spatial (dims {:?})",
                self.target_layer,
                t.dims()
            ))),
            None => Err(Error::invalid(format!(
                "target layer {} out of range",
                self.target_layer
            ))),
        }
    }
}

pub fn attribute(method: Method, req: &AttributionRequest) -> Result<SaliencyMap> {
    match method {
        Method::GradCam => grad_cam(req),
        Method::Ebp => excitation_backprop(req),
        Method::ContrastiveEbp => contrastive_ebp(req),
    }
}

/// `ReLU(Σ_c α_c · A_c)` with `α_c` the spatial mean of the class-logit
/// gradient on channel `c`.
pub fn grad_cam(req: &AttributionRequest) -> Result<SaliencyMap> {
    let (c, h, w) = req.check()?;
    let acts = req.tape.get(req.target_layer).unwrap();
    let grads = backward_to_layer(req.model, req.tape, req.class_idx, req.target_layer)?;
    let hw = (h * w) as f64;
    let mut map = vec![0.0; h * w];
    for ch in 0..c {
        let alpha = grads.channel(ch).iter().sum::<f64>() / hw;
        for (m, a) in map.iter_mut().zip(acts.channel(ch)) {
            *m += alpha * a;
        }
    }
    for v in &mut map {
        *v = v.max(0.0);
    }
    Ok(SaliencyMap {
        map: Matrix::from_vec(h, w, map)?,
        target_layer: req.target_layer,
        method: Method::GradCam,
    })
}

/// Excitation-backprop mass at the target layer.
#[derive(Debug, Clone)]
pub struct EbTrace {
    /// `[C, h, w]` probability mass.
    pub mass: Tensor,
    /// Mass dropped by parents whose children carry no positive evidence.
    pub absorbed: f64,
}

fn positive_part(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&v| v.max(0.0)).collect()
}

fn require_non_negative(acts: &Tensor, tape_index: usize) -> Result<()> {
    match acts.data().iter().find(|&&v| v < 0.0) {
        Some(v) => Err(Error::invalid(format!(
            "excitation backprop needs non-negative activations; tape entry {tape_index} has {v}"
        ))),
        None => Ok(()),
    }
}

/// Splits each parent's mass over its children in proportion to
/// `a_child · max(w, 0)`. Returns child mass and the mass of parents whose
/// denominator was zero.
fn split_mass(parent_mass: &[f64], denominators: &[f64], child_acts: &[f64], back: impl Fn(&[f64]) -> Vec<f64>) -> (Vec<f64>, f64) {
    let mut absorbed = 0.0;
    let ratios: Vec<f64> = parent_mass
        .iter()
        .zip(denominators)
        .map(|(&m, &z)| {
            if z > 0.0 {
                m / z
            } else {
                absorbed += m;
                0.0
            }
        })
        .collect();
    let spread = back(&ratios);
    let child = spread.iter().zip(child_acts).map(|(s, a)| s * a).collect();
    (child, absorbed)
}

/// Runs excitation backprop from a unit mass on the class node down to the
/// target layer. `head_sign` multiplies the final linear layer's weights
/// (`-1.0` gives the contrastive "against" pass).
pub fn excitation_backprop_trace(req: &AttributionRequest, head_sign: f64) -> Result<EbTrace> {
    req.check()?;
    let model = req.model;
    let k = model.num_classes();
    let mut mass = vec![0.0; k];
    mass[req.class_idx] = 1.0;
    let mut absorbed = 0.0;
    let last = model.num_layers() - 1;
    for layer in (req.target_layer..model.num_layers()).rev() {
        let child = req.tape.get(layer).unwrap();
        let spec = model.specs()[layer];
        let sign = if layer == last { head_sign } else { 1.0 };
        mass = match spec {
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                require_non_negative(child, layer)?;
                let p = model.params()[layer].as_ref().unwrap();
                let wpos = positive_part(&p.weight.data().iter().map(|w| sign * w).collect::<Vec<_>>());
                let z = ops::linear_forward(child.data(), &wpos, None, in_features, out_features);
                let (m, lost) = split_mass(&mass, &z, child.data(), |r| {
                    ops::linear_backward_input(r, &wpos, in_features, out_features)
                });
                absorbed += lost;
                m
            }
            LayerSpec::Conv { in_ch, out_ch } => {
                require_non_negative(child, layer)?;
                let (_, h, w) = child.chw()?;
                let p = model.params()[layer].as_ref().unwrap();
                let wpos = positive_part(&p.weight.data().iter().map(|w| sign * w).collect::<Vec<_>>());
                let z = ops::conv_forward(child.data(), &wpos, None, in_ch, out_ch, h, w);
                let (m, lost) = split_mass(&mass, &z, child.data(), |r| {
                    ops::conv_backward_input(r, &wpos, in_ch, out_ch, h, w)
                });
                absorbed += lost;
                m
            }
            LayerSpec::Relu | LayerSpec::Flatten => mass,
            LayerSpec::MaxPool => {
                let arg = req
                    .tape
                    .argmax(layer + 1)
                    .ok_or_else(|| Error::invalid("tape lacks pooling indices"))?;
                ops::maxpool_route(&mass, arg, child.len())
            }
        };
    }
    let dims = req.tape.get(req.target_layer).unwrap().dims();
    Ok(EbTrace {
        mass: Tensor::from_vec(dims, mass)?,
        absorbed,
    })
}

fn channel_sum(t: &Tensor) -> Result<Matrix> {
    let (c, h, w) = t.chw()?;
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for (o, v) in out.iter_mut().zip(t.channel(ch)) {
            *o += v;
        }
    }
    Matrix::from_vec(h, w, out)
}

pub fn excitation_backprop(req: &AttributionRequest) -> Result<SaliencyMap> {
    let trace = excitation_backprop_trace(req, 1.0)?;
    Ok(SaliencyMap {
        map: channel_sum(&trace.mass)?,
        target_layer: req.target_layer,
        method: Method::Ebp,
    })
}

/// EB for the class minus EB with the classifier weights negated, clamped at
/// zero.
pub fn contrastive_ebp(req: &AttributionRequest) -> Result<SaliencyMap> {
    let pro = channel_sum(&excitation_backprop_trace(req, 1.0)?.mass)?;
    let con = channel_sum(&excitation_backprop_trace(req, -1.0)?.mass)?;
    let diff = pro
        .data()
        .iter()
        .zip(con.data())
        .map(|(p, c)| (p - c).max(0.0))
        .collect();
    Ok(SaliencyMap {
        map: Matrix::from_vec(pro.h(), pro.w(), diff)?,
        target_layer: req.target_layer,
        method: Method::ContrastiveEbp,
    })
}

/// The conventional presentation: bilinear resize to `h × w`, then max
/// normalization.
pub fn present_baseline(s: &SaliencyMap, h: usize, w: usize) -> Result<Matrix> {
    normalize_max(&upsample_bilinear(&s.map, h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{forward, Arch, Params};

    fn linear_model(weights: Vec<f64>, rows: usize, inputs: usize) -> Model {
        Model::new(
            "lin",
            [1, 1, inputs],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Linear { in_features: inputs, out_features: rows },
            ],
            vec![
                None,
                Some(Params {
                    weight: Tensor::from_vec(&[rows, inputs], weights).unwrap(),
                    bias: Tensor::zeros(&[rows]).unwrap(),
                }),
            ],
            (0..rows).map(|i| format!("c{i}")).collect(),
        )
        .unwrap()
    }

    fn eb_at_input(model: &Model, x: Vec<f64>, class: usize, sign: f64) -> EbTrace {
        let n = x.len();
        let img = Tensor::from_vec(&[1, 1, n], x).unwrap();
        let (_, tape) = forward(model, &img).unwrap();
        excitation_backprop_trace(&AttributionRequest::new(model, &tape, class, 0), sign).unwrap()
    }

    #[test]
    fn eb_splits_by_weighted_activation() {
        let m = linear_model(vec![1.0, 1.0], 1, 2);
        assert_eq!(eb_at_input(&m, vec![1.0, 1.0], 0, 1.0).mass.data(), [0.5, 0.5]);
        let m = linear_model(vec![2.0, 1.0], 1, 2);
        let mass = eb_at_input(&m, vec![1.0, 1.0], 0, 1.0).mass;
        assert!((mass.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((mass.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn eb_absorbs_dead_parents() {
        let m = linear_model(vec![-1.0, -2.0], 1, 2);
        let t = eb_at_input(&m, vec![1.0, 1.0], 0, 1.0);
        assert_eq!(t.mass.data(), [0.0, 0.0]);
        assert_eq!(t.absorbed, 1.0);
    }

    #[test]
    fn eb_rejects_negative_children() {
        let m = linear_model(vec![1.0, 1.0], 1, 2);
        let img = Tensor::from_vec(&[1, 1, 2], vec![1.0, -1.0]).unwrap();
        let (_, tape) = forward(&m, &img).unwrap();
        let req = AttributionRequest::new(&m, &tape, 0, 0);
        assert!(matches!(excitation_backprop(&req), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn flatten_target_rejected() {
        let m = Arch::NetA.build(0).unwrap();
        let (_, tape) = forward(&m, &Tensor::filled(&[1, 32, 32], 0.5).unwrap()).unwrap();
        for method in Method::ALL {
            let req = AttributionRequest::new(&m, &tape, 0, 10);
            assert!(matches!(attribute(method, &req), Err(Error::InvalidArgument(_))));
            let req = AttributionRequest::new(&m, &tape, 5, 8);
            assert!(matches!(attribute(method, &req), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn grad_cam_zero_gradient_gives_zero_map() {
        let mut m = Arch::NetA.build(0).unwrap();
        let last = m.num_layers() - 1;
        m.replace_params(
            last,
            Params {
                weight: Tensor::zeros(&[3, 512]).unwrap(),
                bias: Tensor::zeros(&[3]).unwrap(),
            },
        )
        .unwrap();
        let (_, tape) = forward(&m, &Tensor::filled(&[1, 32, 32], 0.5).unwrap()).unwrap();
        let s = grad_cam(&AttributionRequest::new(&m, &tape, 1, 8)).unwrap();
        assert!(s.map.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.map.dims(), (8, 8));
    }

    #[test]
    fn grad_cam_single_channel_uniform_gradient() {
        // conv(identity) -> relu -> flatten -> linear with uniform weights g
        let g = 0.75;
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let m = Model::new(
            "one",
            [1, 2, 2],
            vec![
                LayerSpec::Conv { in_ch: 1, out_ch: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Linear { in_features: 4, out_features: 1 },
            ],
            vec![
                Some(Params {
                    weight: Tensor::from_vec(&[1, 1, 3, 3], k).unwrap(),
                    bias: Tensor::zeros(&[1]).unwrap(),
                }),
                None,
                None,
                Some(Params {
                    weight: Tensor::filled(&[1, 4], g).unwrap(),
                    bias: Tensor::zeros(&[1]).unwrap(),
                }),
            ],
            vec!["only".into()],
        )
        .unwrap();
        let img = Tensor::from_vec(&[1, 2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let (_, tape) = forward(&m, &img).unwrap();
        let s = grad_cam(&AttributionRequest::new(&m, &tape, 0, 2)).unwrap();
        for (v, a) in s.map.data().iter().zip(img.data()) {
            assert!((v - g * a).abs() < 1e-15);
        }
    }

    /// 2 → 2 → 2 toy (flatten, linear, relu, linear).
    fn two_layer(hidden: Vec<f64>, head: Vec<f64>) -> Model {
        Model::new(
            "toy",
            [1, 1, 2],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Linear { in_features: 2, out_features: 2 },
                LayerSpec::Relu,
                LayerSpec::Linear { in_features: 2, out_features: 2 },
            ],
            vec![
                None,
                Some(Params {
                    weight: Tensor::from_vec(&[2, 2], hidden).unwrap(),
                    bias: Tensor::zeros(&[2]).unwrap(),
                }),
                None,
                Some(Params {
                    weight: Tensor::from_vec(&[2, 2], head).unwrap(),
                    bias: Tensor::zeros(&[2]).unwrap(),
                }),
            ],
            vec!["yes".into(), "no".into()],
        )
        .unwrap()
    }

    fn cebp_input(m: &Model, x: Vec<f64>, class: usize) -> Vec<f64> {
        let img = Tensor::from_vec(&[1, 1, 2], x).unwrap();
        let (_, tape) = forward(m, &img).unwrap();
        contrastive_ebp(&AttributionRequest::new(m, &tape, class, 0))
            .unwrap()
            .map
            .data()
            .to_vec()
    }

    #[test]
    fn contrastive_self_cancels_when_both_sides_share_children() {
        // both hidden units see the inputs identically, so "for" and "against"
        // land on the same input distribution
        let m = two_layer(vec![1.0, 1.0, 1.0, 1.0], vec![1.0, -1.0, 0.5, 0.5]);
        assert_eq!(cebp_input(&m, vec![1.0, 1.0], 0), [0.0, 0.0]);
    }

    #[test]
    fn contrastive_equals_plain_when_head_is_one_sided() {
        let m = two_layer(vec![2.0, 1.0, 0.5, 3.0], vec![1.0, 2.0, -1.0, -1.0]);
        let img = Tensor::from_vec(&[1, 1, 2], vec![0.4, 0.8]).unwrap();
        let (_, tape) = forward(&m, &img).unwrap();
        let req = AttributionRequest::new(&m, &tape, 0, 0);
        let plain = excitation_backprop(&req).unwrap();
        let contrast = contrastive_ebp(&req).unwrap();
        assert_eq!(plain.map, contrast.map);
    }

    #[test]
    fn contrastive_matches_hand_evaluation() {
        // hidden W = [[2, 1], [1, 3]], head row for class 0 = [1, -1], x = [1, 1]
        // hidden acts: h0 = 3, h1 = 4
        // pro pass: mass on h0 = 1; split over x by [2, 1] -> [2/3, 1/3]
        // con pass: mass on h1 = 1; split over x by [1, 3] -> [1/4, 3/4]
        // clamp([2/3 - 1/4, 1/3 - 3/4]) = [5/12, 0]
        let m = two_layer(vec![2.0, 1.0, 1.0, 3.0], vec![1.0, -1.0, 0.0, 0.0]);
        let got = cebp_input(&m, vec![1.0, 1.0], 0);
        assert!((got[0] - 5.0 / 12.0).abs() < 1e-15, "{got:?}");
        assert_eq!(got[1], 0.0);
    }

    #[test]
    fn baseline_presentation() {
        let s = SaliencyMap {
            map: Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap(),
            target_layer: 0,
            method: Method::GradCam,
        };
        assert_eq!(present_baseline(&s, 2, 2).unwrap(), normalize_max(&s.map).unwrap());

        let s = SaliencyMap { map: Matrix::filled(3, 3, 0.2).unwrap(), ..s };
        let p = present_baseline(&s, 9, 9).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));

        let ramp: Vec<f64> = (0..16).map(|i| (i / 4 + i % 4) as f64).collect();
        let s = SaliencyMap { map: Matrix::from_vec(4, 4, ramp).unwrap(), ..s };
        let p = present_baseline(&s, 32, 32).unwrap();
        assert_eq!(p.get(31, 31), 1.0);
        assert_eq!(p.get(0, 0), 0.0);
        assert!(p.data().iter().all(|&v| v < 1.0 || v == p.get(31, 31)));
        assert_eq!(p.data().iter().filter(|&&v| v == 1.0).count(), 1);
    }
}
