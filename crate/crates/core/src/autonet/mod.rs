//! A small feed-forward CNN engine.
//!
//! Layers are restricted to 3×3 same-padding convolutions, ReLU, 2×2 max
//! pooling, flatten and fully-connected layers. A forward pass records every
//! intermediate output on an [`ActivationTape`]; tape index 0 is the input
//! image and tape index `i + 1` is the output of layer `i`.

mod backward;
pub(crate) use backward::zero_grads;
mod forward;
mod io;
pub(crate) mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use backward::{backprop, backward_to_layer, ParamGrads};
pub use forward::{forward, forward_from, softmax, ActivationTape};
pub use io::{load_model, parse_model, save_model, serialize_model, FORMAT_VERSION};

pub const CONV_KERNEL: usize = 3;
pub const POOL_STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3×3 kernel, stride 1, padding 1.
    Conv { in_ch: usize, out_ch: usize },
    Relu,
    /// 2×2 window, stride 2.
    MaxPool,
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn is_parametric(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Linear { .. })
    }

    /// `(weight dims, bias dims)` for parametric layers.
    pub fn param_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv { in_ch, out_ch } => Some((
                vec![out_ch, in_ch, CONV_KERNEL, CONV_KERNEL],
                vec![out_ch],
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    fn output_dims(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |what: String| Error::validation(format!("layer {index} ({}): {what}", self.name()));
        match *self {
            LayerSpec::Conv { in_ch, out_ch } => match input {
                [c, h, w] if *c == in_ch => Ok(vec![out_ch, *h, *w]),
                _ => Err(bad(format!("expects [{in_ch}, h, w], got {input:?}"))),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool => match input {
                [c, h, w] if h % POOL_STRIDE == 0 && w % POOL_STRIDE == 0 => {
                    Ok(vec![*c, h / POOL_STRIDE, w / POOL_STRIDE])
                }
                _ => Err(bad(format!("needs even spatial dims, got {input:?}"))),
            },
            LayerSpec::Flatten => match input {
                [c, h, w] => Ok(vec![c * h * w]),
                _ => Err(bad(format!("expects rank 3, got {input:?}"))),
            },
            LayerSpec::Linear {
                in_features,
                out_features,
            } => match input {
                [n] if *n == in_features => Ok(vec![out_features]),
                _ => Err(bad(format!("expects [{in_features}], got {input:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Validated layer stack with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    arch: String,
    input_dims: [usize; 3],
    specs: Vec<LayerSpec>,
    params: Vec<Option<Params>>,
    labels: Vec<String>,
    /// Dims of every tape entry, input first.
    tape_dims: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(
        arch: impl Into<String>,
        input_dims: [usize; 3],
        specs: Vec<LayerSpec>,
        params: Vec<Option<Params>>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let arch = arch.into();
        if arch.is_empty() || arch.chars().any(char::is_whitespace) {
            return Err(Error::validation(format!("bad architecture name {arch:?}")));
        }
        if input_dims.contains(&0) {
            return Err(Error::validation(format!("bad input dims {input_dims:?}")));
        }
        if specs.len() != params.len() {
            return Err(Error::validation("one params slot per layer required"));
        }
        let mut tape_dims = vec![input_dims.to_vec()];
        for (i, spec) in specs.iter().enumerate() {
            let next = spec.output_dims(i, tape_dims.last().unwrap())?;
            tape_dims.push(next);
        }
        let classes = match specs.last() {
            Some(LayerSpec::Linear { out_features, .. }) => *out_features,
            _ => return Err(Error::validation("model must end with a linear layer")),
        };
        if labels.len() != classes {
            return Err(Error::validation(format!(
                "{} labels for {classes} classes",
                labels.len()
            )));
        }
        if let Some(l) = labels
            .iter()
            .find(|l| l.is_empty() || l.chars().any(char::is_whitespace))
        {
            return Err(Error::validation(format!("bad class label {l:?}")));
        }
        for (i, (spec, p)) in specs.iter().zip(&params).enumerate() {
            match (spec.param_dims(), p) {
                (None, None) => {}
                (Some((wd, bd)), Some(p)) => {
                    if p.weight.dims() != wd.as_slice() || p.bias.dims() != bd.as_slice() {
                        return Err(Error::validation(format!(
                            "layer {i}: params {:?}/{:?}, expected {wd:?}/{bd:?}",
                            p.weight.dims(),
                            p.bias.dims()
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::validation(format!("layer {i}: missing params")))
                }
                (None, Some(_)) => {
                    return Err(Error::validation(format!(
                        "layer {i}: {} takes no params",
                        spec.name()
                    )))
                }
            }
        }
        Ok(Model {
            arch,
            input_dims,
            specs,
            params,
            labels,
            tape_dims,
        })
    }

    /// He-normal weights and zero biases from a seeded generator.
    pub fn init(
        arch: impl Into<String>,
        input_dims: [usize; 3],
        specs: Vec<LayerSpec>,
        labels: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            params.push(match spec.param_dims() {
                None => None,
                Some((wd, bd)) => {
                    let fan_in: usize = wd[1..].iter().product();
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .map_err(|e| Error::invalid(e.to_string()))?;
                    let n: usize = wd.iter().product();
                    let w = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    Some(Params {
                        weight: Tensor::from_vec(&wd, w)?,
                        bias: Tensor::zeros(&bd)?,
                    })
                }
            });
        }
        Model::new(arch, input_dims, specs, params, labels)
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Option<Params>] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Option<Params>] {
        &mut self.params
    }

    /// Swaps in new weights for one parametric layer; dims must not change.
    pub fn replace_params(&mut self, layer: usize, params: Params) -> Result<()> {
        let spec = self
            .specs
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))?;
        let (wd, bd) = spec
            .param_dims()
            .ok_or_else(|| Error::invalid(format!("layer {layer} ({}) has no params", spec.name())))?;
        if params.weight.dims() != wd.as_slice() || params.bias.dims() != bd.as_slice() {
            return Err(Error::shape(format!(
                "layer {layer}: params {:?}/{:?}, expected {wd:?}/{bd:?}",
                params.weight.dims(),
                params.bias.dims()
            )));
        }
        self.params[layer] = Some(params);
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_layers(&self) -> usize {
        self.specs.len()
    }

    /// Dims of tape entry `index` (0 = input, `num_layers()` = logits).
    pub fn tape_dims(&self, index: usize) -> Option<&[usize]> {
        self.tape_dims.get(index).map(Vec::as_slice)
    }

    pub fn tape_len(&self) -> usize {
        self.tape_dims.len()
    }

    /// Layer that produced tape entry `index`, `None` for the input.
    pub fn producer(&self, index: usize) -> Option<LayerSpec> {
        index.checked_sub(1).and_then(|i| self.specs.get(i).copied())
    }

    pub fn is_spatial(&self, index: usize) -> bool {
        self.tape_dims(index).is_some_and(|d| d.len() == 3)
    }

    /// Last post-ReLU activation ahead of the final max pool, the usual
    /// Grad-CAM tap. Falls back to the last spatial post-ReLU entry.
    pub fn default_target(&self) -> Option<usize> {
        let relu_outputs: Vec<usize> = (1..self.tape_len())
            .filter(|&t| self.producer(t) == Some(LayerSpec::Relu) && self.is_spatial(t))
            .collect();
        let last_pool = (1..self.tape_len())
            .rev()
            .find(|&t| self.producer(t) == Some(LayerSpec::MaxPool));
        match last_pool {
            Some(p) => relu_outputs
                .iter()
                .rev()
                .find(|&&t| t < p)
                .or(relu_outputs.last())
                .copied(),
            None => relu_outputs.last().copied(),
        }
    }
}

/// The two built-in desk-scale architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// 1×32×32 input, three conv/pool blocks (8, 16, 32 channels).
    NetA,
    /// 1×64×64 input, four conv/pool blocks (8, 16, 32, 32 channels).
    NetB,
}

pub const SHAPE_LABELS: [&str; 3] = ["square", "disk", "triangle"];

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::NetA => "net-a",
            Arch::NetB => "net-b",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "net-a" => Ok(Arch::NetA),
            "net-b" => Ok(Arch::NetB),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }

    pub fn input_dims(self) -> [usize; 3] {
        match self {
            Arch::NetA => [1, 32, 32],
            Arch::NetB => [1, 64, 64],
        }
    }

    pub fn for_input(h: usize, w: usize) -> Result<Self> {
        [Arch::NetA, Arch::NetB]
            .into_iter()
            .find(|a| a.input_dims()[1..] == [h, w])
            .ok_or_else(|| Error::invalid(format!("no architecture takes {h}x{w} input")))
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        let channels: &[usize] = match self {
            Arch::NetA => &[8, 16, 32],
            Arch::NetB => &[8, 16, 32, 32],
        };
        let mut specs = Vec::new();
        let mut in_ch = 1;
        let mut side = self.input_dims()[1];
        for &out_ch in channels {
            specs.push(LayerSpec::Conv { in_ch, out_ch });
            specs.push(LayerSpec::Relu);
            specs.push(LayerSpec::MaxPool);
            in_ch = out_ch;
            side /= 2;
        }
        specs.push(LayerSpec::Flatten);
        specs.push(LayerSpec::Linear {
            in_features: in_ch * side * side,
            out_features: SHAPE_LABELS.len(),
        });
        specs
    }

    pub fn build(self, seed: u64) -> Result<Model> {
        Model::init(
            self.name(),
            self.input_dims(),
            self.layers(),
            SHAPE_LABELS.iter().map(|s| s.to_string()).collect(),
            seed,
        )
    }
}
