use super::{ops, LayerSpec, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Every intermediate output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTape {
    activations: Vec<Tensor>,
    /// Per tape entry; `Some` for max-pool outputs only. Values are flat
    /// indices into the pool's input tensor.
    argmax: Vec<Option<Vec<usize>>>,
}

impl ActivationTape {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Tensor> {
        self.activations.get(index)
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("tape holds at least the input")
    }

    pub fn argmax(&self, index: usize) -> Option<&[usize]> {
        self.argmax.get(index).and_then(|a| a.as_deref())
    }
}

fn apply_layer(model: &Model, layer: usize, input: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
    let spec = model.specs()[layer];
    let out_dims = model.tape_dims(layer + 1).unwrap();
    let x = input.data();
    let (data, argmax) = match spec {
        LayerSpec::Conv { in_ch, out_ch } => {
            let (_, h, w) = input.chw()?;
            let p = model.params()[layer].as_ref().unwrap();
            let out = ops::conv_forward(x, p.weight.data(), Some(p.bias.data()), in_ch, out_ch, h, w);
            (out, None)
        }
        LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), None),
        LayerSpec::MaxPool => {
            let (c, h, w) = input.chw()?;
            let (out, arg) = ops::maxpool_forward(x, c, h, w);
            (out, Some(arg))
        }
        LayerSpec::Flatten => (x.to_vec(), None),
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let p = model.params()[layer].as_ref().unwrap();
            let out = ops::linear_forward(x, p.weight.data(), Some(p.bias.data()), in_features, out_features);
            (out, None)
        }
    };
    Ok((Tensor::from_vec(out_dims, data)?, argmax))
}

/// Runs the model on one `[C, H, W]` image, returning the logits and the full
/// activation tape. Deterministic: identical inputs give bitwise-identical
/// outputs.
pub fn forward(model: &Model, image: &Tensor) -> Result<(Tensor, ActivationTape)> {
    if image.dims() != model.input_dims() {
        return Err(Error::shape(format!(
            "model {} takes {:?}, got image {:?}",
            model.arch(),
            model.input_dims(),
            image.dims()
        )));
    }
    let mut activations = Vec::with_capacity(model.tape_len());
    let mut argmax = Vec::with_capacity(model.tape_len());
    activations.push(image.clone());
    argmax.push(None);
    for layer in 0..model.num_layers() {
        let (next, arg) = apply_layer(model, layer, activations.last().unwrap())?;
        activations.push(next);
        argmax.push(arg);
    }
    let logits = activations.last().unwrap().clone();
    Ok((logits, ActivationTape { activations, argmax }))
}

/// Logits obtained by injecting `activation` at tape entry `tape_index` and
/// running the remaining layers.
pub fn forward_from(model: &Model, tape_index: usize, activation: &Tensor) -> Result<Tensor> {
    let dims = model
        .tape_dims(tape_index)
        .ok_or_else(|| Error::invalid(format!("tape index {tape_index} out of range")))?;
    if activation.dims() != dims {
        return Err(Error::shape(format!(
            "tape entry {tape_index} has dims {dims:?}, got {:?}",
            activation.dims()
        )));
    }
    let mut current = activation.clone();
    for layer in tape_index..model.num_layers() {
        current = apply_layer(model, layer, &current)?.0;
    }
    Ok(current)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.max();
    let exps: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::from_vec(logits.dims(), exps.into_iter().map(|e| e / total).collect())
        .expect("softmax of finite logits is finite")
}
