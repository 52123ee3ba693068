//! End-to-end explanation: forward pass, base attribution, then either the
//! bilinear baseline presentation or gradual extrapolation.

use std::fmt;
use std::str::FromStr;

use crate::attribution::{attribute, present_baseline, AttributionRequest, Method, SaliencyMap};
use crate::autonet::{forward, softmax, ActivationTape, Model};
use crate::error::{Error, Result};
use crate::gradual::{build_stage_plan, gradual_extrapolate_traced, StagePlan};
use crate::tensor::{Matrix, Tensor};

/// A base method plus how its map is brought to input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MethodSpec {
    pub method: Method,
    pub gradual: bool,
}

impl MethodSpec {
    pub fn new(method: Method, gradual: bool) -> Self {
        MethodSpec { method, gradual }
    }

    pub fn name(&self) -> String {
        format!("{}-{}", self.method, if self.gradual { "gradual" } else { "bilinear" })
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    /// `gradcam`, `gradcam-bilinear`, `gradcam-gradual`, likewise for `ebp`
    /// and `cebp`.
    fn from_str(s: &str) -> Result<Self> {
        let (base, gradual) = match s.rsplit_once('-') {
            Some((b, "gradual")) => (b, true),
            Some((b, "bilinear")) => (b, false),
            _ => (s, false),
        };
        Ok(MethodSpec::new(base.parse()?, gradual))
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub predicted: usize,
    pub confidence: f64,
    /// Class the maps explain.
    pub class: usize,
    pub base: SaliencyMap,
    /// Input-resolution map in `[0, 1]`.
    pub map: Matrix,
    /// Per-stage intermediates; empty for the bilinear presentation.
    pub stages: Vec<Matrix>,
    pub plan: Option<StagePlan>,
}

/// Attribution and presentation only, reusing an existing tape.
pub fn explain_with_tape(
    model: &Model,
    tape: &ActivationTape,
    spec: MethodSpec,
    class: Option<usize>,
    target: Option<usize>,
) -> Result<Explanation> {
    let probs = softmax(tape.logits());
    let predicted = probs.argmax();
    let class = class.unwrap_or(predicted);
    let target = match target {
        Some(t) => t,
        None => model
            .default_target()
            .ok_or_else(|| Error::invalid(format!("model {} has no spatial ReLU tap", model.arch())))?,
    };
    let base = attribute(spec.method, &AttributionRequest::new(model, tape, class, target))?;
    let [_, h, w] = model.input_dims();
    let (map, stages, plan) = if spec.gradual {
        let plan = build_stage_plan(model, target)?;
        let trace = gradual_extrapolate_traced(&base, tape, &plan)?;
        (trace.output, trace.stages, Some(plan))
    } else {
        (present_baseline(&base, h, w)?, Vec::new(), None)
    };
    Ok(Explanation {
        predicted,
        confidence: probs.data()[predicted],
        class,
        base,
        map,
        stages,
        plan,
    })
}

pub fn explain(
    model: &Model,
    image: &Tensor,
    spec: MethodSpec,
    class: Option<usize>,
    target: Option<usize>,
) -> Result<Explanation> {
    let (_, tape) = forward(model, image)?;
    explain_with_tape(model, &tape, spec, class, target)
}
