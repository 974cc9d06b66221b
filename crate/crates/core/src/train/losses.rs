use rand::Rng;

use super::perceptual::PerceptualMetric;
use crate::error::{Error, Result};
use crate::motion::{LandmarkSet, MOUTH_INDICES};
use crate::real::Real;
use crate::render::{projected_bbox, Camera, PixelRect};

/// Sum of squared RGB errors over the sampled pixels.
pub fn coarse_loss(pred: &[[f32; 3]], gt: &[[f32; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("coarse loss pixels", gt.len(), pred.len()));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| (0..3).map(|k| (p[k] as f64 - g[k] as f64).powi(2)).sum::<f64>())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FineLoss<T> {
    pub total: T,
    /// Sum of squared errors over the patch.
    pub mse: T,
    pub perceptual: T,
}

/// Patch squared error plus `lambda` times the perceptual distance. Patches
/// are interleaved RGB, `size x size`. The gradient with respect to `pred`
/// is written to `grad` when given.
pub fn fine_loss<T: Real>(
    pred: &[T],
    gt: &[T],
    size: usize,
    metric: &PerceptualMetric,
    lambda: f64,
    grad: Option<&mut [T]>,
) -> Result<FineLoss<T>> {
    if pred.len() != size * size * 3 || gt.len() != pred.len() {
        return Err(Error::shape("fine loss patch", size * size * 3, pred.len().max(gt.len())));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let mse = pred.iter().zip(gt).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
    let (perceptual, pgrad) = metric.distance_and_grad(pred, gt, size, size, grad.is_some())?;
    if let Some(g) = grad {
        let l = T::lit(lambda);
        let pgrad = pgrad.expect("requested");
        for (i, g) in g.iter_mut().enumerate() {
            *g = T::lit(2.0) * (pred[i] - gt[i]) + l * pgrad[i];
        }
    }
    Ok(FineLoss {
        total: mse + T::lit(lambda) * perceptual,
        mse,
        perceptual,
    })
}

fn too_small(r: &PixelRect, size: usize) -> Error {
    Error::Config(format!(
        "mouth region {}x{} is smaller than patch size {size}",
        r.width(),
        r.height()
    ))
}

/// Bounding box of the projected mouth landmarks, dilated by `dilation`
/// pixels and clipped to the image.
pub fn mouth_region(lm: &LandmarkSet, cam: &Camera, dilation: usize) -> Result<PixelRect> {
    projected_bbox(cam, MOUTH_INDICES.map(|i| lm.point(i)), dilation)
        .map_err(|e| Error::Domain(format!("mouth region: {e}")))
}

/// Uniformly placed `size x size` square inside `region`.
pub fn sample_patch<R: Rng + ?Sized>(region: &PixelRect, size: usize, rng: &mut R) -> Result<PixelRect> {
    if size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if region.width() < size || region.height() < size {
        return Err(too_small(region, size));
    }
    let x0 = region.x0 + rng.gen_range(0..=region.width() - size);
    let y0 = region.y0 + rng.gen_range(0..=region.height() - size);
    Ok(PixelRect {
        x0,
        y0,
        x1: x0 + size,
        y1: y0 + size,
    })
}
