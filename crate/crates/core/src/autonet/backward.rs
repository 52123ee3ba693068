use super::{ops, ActivationTape, LayerSpec, Model, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-layer gradient accumulators shaped like `Model::params()`.
pub type ParamGrads = Vec<Option<Params>>;

pub(crate) fn zero_grads(model: &Model) -> ParamGrads {
    model
        .params()
        .iter()
        .map(|p| {
            p.as_ref().map(|p| Params {
                weight: Tensor::zeros(p.weight.dims()).unwrap(),
                bias: Tensor::zeros(p.bias.dims()).unwrap(),
            })
        })
        .collect()
}

fn accumulate(dst: &mut Tensor, src: &[f64]) {
    for (d, s) in dst.data_mut().iter_mut().zip(src) {
        *d += s;
    }
}

/// Reverse-mode pass from the logits down to tape entry `stop_at`, seeded with
/// `grad_logits`. Parameter gradients of every traversed layer are added into
/// `param_grads` when given.
pub fn backprop(
    model: &Model,
    tape: &ActivationTape,
    grad_logits: &Tensor,
    stop_at: usize,
    mut param_grads: Option<&mut ParamGrads>,
) -> Result<Tensor> {
    if tape.len() != model.tape_len() {
        return Err(Error::invalid(format!(
            "tape has {} entries, model needs {}",
            tape.len(),
            model.tape_len()
        )));
    }
    if stop_at >= tape.len() {
        return Err(Error::invalid(format!(
            "layer index {stop_at} out of range (tape has {} entries)",
            tape.len()
        )));
    }
    if grad_logits.dims() != tape.logits().dims() {
        return Err(Error::shape("seed gradient must match the logits"));
    }
    let mut grad = grad_logits.clone();
    for layer in (stop_at..model.num_layers()).rev() {
        let input = tape.get(layer).unwrap();
        let g = grad.data();
        let data = match model.specs()[layer] {
            LayerSpec::Conv { in_ch, out_ch } => {
                let (_, h, w) = input.chw()?;
                let p = model.params()[layer].as_ref().unwrap();
                if let Some(pg) = param_grads.as_deref_mut() {
                    let (gw, gb) = ops::conv_backward_params(input.data(), g, in_ch, out_ch, h, w);
                    let slot = pg[layer].as_mut().unwrap();
                    accumulate(&mut slot.weight, &gw);
                    accumulate(&mut slot.bias, &gb);
                }
                ops::conv_backward_input(g, p.weight.data(), in_ch, out_ch, h, w)
            }
            LayerSpec::Relu => input
                .data()
                .iter()
                .zip(g)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            LayerSpec::MaxPool => {
                let arg = tape
                    .argmax(layer + 1)
                    .ok_or_else(|| Error::invalid("tape lacks pooling indices"))?;
                ops::maxpool_route(g, arg, input.len())
            }
            LayerSpec::Flatten => g.to_vec(),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                let p = model.params()[layer].as_ref().unwrap();
                if let Some(pg) = param_grads.as_deref_mut() {
                    let (gw, gb) = ops::linear_backward_params(input.data(), g, in_features, out_features);
                    let slot = pg[layer].as_mut().unwrap();
                    accumulate(&mut slot.weight, &gw);
                    accumulate(&mut slot.bias, &gb);
                }
                ops::linear_backward_input(g, p.weight.data(), in_features, out_features)
            }
        };
        grad = Tensor::from_vec(input.dims(), data)?;
    }
    Ok(grad)
}

/// ∂ logit[`class_idx`] / ∂ tape[`layer_idx`].
pub fn backward_to_layer(
    model: &Model,
    tape: &ActivationTape,
    class_idx: usize,
    layer_idx: usize,
) -> Result<Tensor> {
    let k = model.num_classes();
    if class_idx >= k {
        return Err(Error::invalid(format!("class {class_idx} out of range ({k} classes)")));
    }
    let mut seed = Tensor::zeros(&[k])?;
    seed.data_mut()[class_idx] = 1.0;
    backprop(model, tape, &seed, layer_idx, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{forward, Arch};

    fn image(seed: usize) -> Tensor {
        Tensor::from_vec(
            &[1, 32, 32],
            (0..1024).map(|i| (((i + seed) * 7919) % 1000) as f64 / 1000.0).collect(),
        )
        .unwrap()
    }

    #[test]
    fn logits_gradient_is_one_hot() {
        let m = Arch::NetA.build(1).unwrap();
        let (_, tape) = forward(&m, &image(0)).unwrap();
        let g = backward_to_layer(&m, &tape, 2, m.num_layers()).unwrap();
        assert_eq!(g.data(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_linear_gradient_is_weight_row() {
        let m = Model::new(
            "lin",
            [1, 1, 3],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Linear { in_features: 3, out_features: 2 },
            ],
            vec![
                None,
                Some(Params {
                    weight: Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.25, -4.0]).unwrap(),
                    bias: Tensor::from_vec(&[2], vec![0.1, 0.2]).unwrap(),
                }),
            ],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let img = Tensor::from_vec(&[1, 1, 3], vec![0.3, 0.6, 0.9]).unwrap();
        let (_, tape) = forward(&m, &img).unwrap();
        let g = backward_to_layer(&m, &tape, 1, 0).unwrap();
        assert_eq!(g.data(), [0.5, 0.25, -4.0]);
    }

    #[test]
    fn maxpool_gradient_only_hits_winners() {
        let m = Arch::NetA.build(2).unwrap();
        let (_, tape) = forward(&m, &image(3)).unwrap();
        for pool_out in [3, 6, 9] {
            let g = backward_to_layer(&m, &tape, 0, pool_out - 1).unwrap();
            let winners: std::collections::HashSet<usize> =
                tape.argmax(pool_out).unwrap().iter().copied().collect();
            for (i, &v) in g.data().iter().enumerate() {
                if v != 0.0 {
                    assert!(winners.contains(&i), "nonzero grad at non-winner {i}");
                }
            }
        }
    }

    #[test]
    fn index_errors() {
        let m = Arch::NetA.build(1).unwrap();
        let (_, tape) = forward(&m, &image(0)).unwrap();
        assert!(matches!(backward_to_layer(&m, &tape, 3, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(backward_to_layer(&m, &tape, 0, 12), Err(Error::InvalidArgument(_))));
    }
}
