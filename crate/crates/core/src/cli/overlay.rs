use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct OverlaySpec<'a> {
    /// `[1,H,W]` grayscale or `[3,H,W]` planar RGB, values in `[0, 1]`.
    pub image: &'a Tensor,
    /// Input-resolution saliency in `[0, 1]`.
    pub saliency: &'a Matrix,
    pub blend: f64,
}

/// Black → red → yellow → white ramp.
pub fn heat(s: f64) -> [f64; 3] {
    let s = s.clamp(0.0, 1.0);
    [
        (3.0 * s).clamp(0.0, 1.0),
        (3.0 * s - 1.0).clamp(0.0, 1.0),
        (3.0 * s - 2.0).clamp(0.0, 1.0),
    ]
}

/// `(1 - blend)·gray(image) + blend·heat(saliency)` per channel, as a planar
/// `[3,H,W]` tensor.
pub fn render_overlay(spec: &OverlaySpec) -> Result<Tensor> {
    let (c, h, w) = spec.image.chw()?;
    if spec.saliency.dims() != (h, w) {
        return Err(Error::shape(format!(
            "saliency {:?} vs image {h}x{w}",
            spec.saliency.dims()
        )));
    }
    if c != 1 && c != 3 {
        return Err(Error::shape(format!("overlay needs 1 or 3 channels, got {c}")));
    }
    if !(0.0..=1.0).contains(&spec.blend) {
        return Err(Error::invalid(format!("blend {} outside [0, 1]", spec.blend)));
    }
    let b = spec.blend;
    let n = h * w;
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let gray = if c == 1 {
            spec.image.data()[i]
        } else {
            (0..3).map(|ch| spec.image.data()[ch * n + i]).sum::<f64>() / 3.0
        };
        let hot = heat(spec.saliency.data()[i]);
        for ch in 0..3 {
            out[ch * n + i] = ((1.0 - b) * gray + b * hot[ch]).clamp(0.0, 1.0);
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}
