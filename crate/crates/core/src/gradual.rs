//! Gradual extrapolation of a coarse saliency map back to input resolution.
//!
//! Starting from a map at some deep layer, every max-pool between that layer
//! and the input is crossed in turn: the map is block-upsampled by the pool
//! stride and multiplied elementwise by a contribution matrix, the
//! channel-mean of the post-ReLU activation just before that pool divided by
//! its maximum. The result is max-normalized once more at the end.

use crate::attribution::SaliencyMap;
use crate::autonet::{ActivationTape, LayerSpec, Model, POOL_STRIDE};
use crate::error::{Error, Result};
use crate::tensor::{hadamard, normalize_max, upsample_nearest, Matrix, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ContributionMatrix {
    /// Values in `[0, 1]`; the maximum is exactly 1 unless all entries are 0.
    pub m: Matrix,
    /// Tape entry the activation came from, when known.
    pub source_layer: Option<usize>,
    /// Number of channels averaged over.
    pub channels: usize,
}

/// `m[i][j] = (Σ_c x[c][i][j]) / C`, then divided by its maximum.
///
/// The activation must be non-negative (a post-ReLU tap).
pub fn contribution_matrix(activation: &Tensor) -> Result<ContributionMatrix> {
    let (c, h, w) = activation.chw()?;
    if let Some(v) = activation.data().iter().find(|&&v| v < 0.0) {
        return Err(Error::invalid(format!(
            "contribution matrix needs non-negative activations, found {v}"
        )));
    }
    let mut sum = vec![0.0; h * w];
    for ch in 0..c {
        for (s, x) in sum.iter_mut().zip(activation.channel(ch)) {
            *s += x;
        }
    }
    let mean = sum.into_iter().map(|s| s / c as f64).collect();
    Ok(ContributionMatrix {
        m: normalize_max(&Matrix::from_vec(h, w, mean)?)?,
        source_layer: None,
        channels: c,
    })
}

/// Contribution matrix of tape entry `index`.
pub fn contribution_at(tape: &ActivationTape, index: usize) -> Result<ContributionMatrix> {
    let act = tape
        .get(index)
        .ok_or_else(|| Error::invalid(format!("tape index {index} out of range")))?;
    let mut cm = contribution_matrix(act)?;
    cm.source_layer = Some(index);
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    /// Tape index of the pool's output.
    pub pool_index: usize,
    /// Tape index whose contribution matrix gates this stage.
    pub guidance_index: usize,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagePlan {
    /// Ordered from the target layer towards the input.
    pub stages: Vec<Stage>,
    pub start_dims: (usize, usize),
    pub output_dims: (usize, usize),
}

impl StagePlan {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn total_factor(&self) -> usize {
        self.stages.iter().map(|s| s.factor).product()
    }
}

fn spatial(model: &Model, index: usize) -> Option<(usize, usize)> {
    match model.tape_dims(index)? {
        [_, h, w] => Some((*h, *w)),
        _ => None,
    }
}

/// One stage per max pool at or before `target_layer`, each guided by the
/// last post-ReLU activation at the pool's input resolution.
pub fn build_stage_plan(model: &Model, target_layer: usize) -> Result<StagePlan> {
    let start_dims = spatial(model, target_layer).ok_or_else(|| {
        Error::invalid(format!("target layer {target_layer} is not a spatial tape entry"))
    })?;
    let mut stages = Vec::new();
    let mut dims = start_dims;
    for pool_index in (1..=target_layer).rev() {
        if model.producer(pool_index) != Some(LayerSpec::MaxPool) {
            continue;
        }
        let pre = spatial(model, pool_index - 1).unwrap();
        let post = spatial(model, pool_index).unwrap();
        if pre.0 != post.0 * POOL_STRIDE || pre.1 != post.1 * POOL_STRIDE {
            return Err(Error::validation(format!(
                "pool at tape {pool_index}: {pre:?} does not halve to {post:?}"
            )));
        }
        let guidance_index = (1..pool_index)
            .rev()
            .find(|&j| model.producer(j) == Some(LayerSpec::Relu) && spatial(model, j) == Some(pre))
            .ok_or_else(|| {
                Error::validation(format!(
                    "pool at tape {pool_index} has no post-ReLU activation at {pre:?}"
                ))
            })?;
        stages.push(Stage {
            pool_index,
            guidance_index,
            factor: POOL_STRIDE,
        });
        dims = (dims.0 * POOL_STRIDE, dims.1 * POOL_STRIDE);
    }
    let [_, ih, iw] = model.input_dims();
    if dims != (ih, iw) {
        return Err(Error::validation(format!(
            "plan from tape {target_layer} ends at {dims:?}, input is {ih}x{iw}"
        )));
    }
    Ok(StagePlan {
        stages,
        start_dims,
        output_dims: dims,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradualTrace {
    /// Final input-resolution map in `[0, 1]`.
    pub output: Matrix,
    /// Map after each stage's gating, before the final normalization.
    pub stages: Vec<Matrix>,
}

pub fn gradual_extrapolate(base: &SaliencyMap, tape: &ActivationTape, plan: &StagePlan) -> Result<Matrix> {
    gradual_extrapolate_traced(base, tape, plan).map(|t| t.output)
}

pub fn gradual_extrapolate_traced(
    base: &SaliencyMap,
    tape: &ActivationTape,
    plan: &StagePlan,
) -> Result<GradualTrace> {
    if base.map.dims() != plan.start_dims {
        return Err(Error::shape(format!(
            "base map is {:?}, plan starts at {:?}",
            base.map.dims(),
            plan.start_dims
        )));
    }
    let mut current = normalize_max(&base.map)?;
    let mut stages = Vec::with_capacity(plan.len());
    for (n, stage) in plan.stages.iter().enumerate() {
        let guide = contribution_at(tape, stage.guidance_index)?;
        let up = upsample_nearest(&current, stage.factor)?;
        if up.dims() != guide.m.dims() {
            return Err(Error::shape(format!(
                "stage {} (pool at tape {}): map {:?} vs guidance {:?} from tape {}",
                n + 1,
                stage.pool_index,
                up.dims(),
                guide.m.dims(),
                stage.guidance_index
            )));
        }
        current = hadamard(&up, &guide.m)?;
        stages.push(current.clone());
    }
    Ok(GradualTrace {
        output: normalize_max(&current)?,
        stages,
    })
}
