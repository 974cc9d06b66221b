use super::landmarks::{LandmarkSet, LANDMARK_COUNT};
use crate::error::{Error, Result};
use crate::real::Real;

/// Mean per-landmark L1 distance: `sum_f sum_m |p_hat - p|_1 / (M F)`.
pub fn positional_loss(pred: &[LandmarkSet], target: &[LandmarkSet]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape("positional loss frames", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Domain("positional loss of an empty sequence".into()));
    }
    let mut total = 0f64;
    for (p, t) in pred.iter().zip(target) {
        if p.frame() != t.frame() {
            return Err(Error::Domain(format!(
                "positional loss frame mismatch: predicted {} vs target {}",
                p.frame(),
                t.frame()
            )));
        }
        for (a, b) in p.points().iter().zip(t.points()) {
            total += (0..3).map(|k| (a[k] as f64 - b[k] as f64).abs()).sum::<f64>();
        }
    }
    Ok(total / (LANDMARK_COUNT * pred.len()) as f64)
}

/// The same loss on flattened `frames x 204` buffers, writing its
/// (sub)gradient into `grad` when given. The subgradient at zero is zero.
pub fn positional_loss_flat<T: Real>(pred: &[T], target: &[T], frames: usize, grad: Option<&mut [T]>) -> Result<T> {
    let n = frames * LANDMARK_COUNT * 3;
    if pred.len() != n || target.len() != n {
        return Err(Error::shape("flattened positional loss", n, pred.len().max(target.len())));
    }
    let norm = T::lit((LANDMARK_COUNT * frames) as f64);
    let loss = pred.iter().zip(target).map(|(&a, &b)| (a - b).abs()).sum::<T>() / norm;
    if let Some(g) = grad {
        for ((g, &a), &b) in g.iter_mut().zip(pred).zip(target) {
            let d = a - b;
            *g = if d > T::zero() {
                T::one() / norm
            } else if d < T::zero() {
                -T::one() / norm
            } else {
                T::zero()
            };
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(frame: usize, v: f32) -> LandmarkSet {
        LandmarkSet::new(frame, vec![[v; 3]; LANDMARK_COUNT]).unwrap()
    }

    #[test]
    fn identical_sequences_give_zero() {
        let a = vec![set(0, 0.2), set(1, 0.4)];
        assert_eq!(positional_loss(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_offset_landmark() {
        let t = set(0, 0.5);
        let mut p = t.clone();
        p.points_mut()[10] = [0.8, 0.1, 0.5];
        let l = positional_loss(&[p], &[t]).unwrap();
        assert!((l - 0.7 / 68.0).abs() < 1e-7);
    }

    #[test]
    fn mismatches_are_rejected() {
        assert!(matches!(positional_loss(&[set(0, 0.0)], &[]), Err(Error::Shape { .. })));
        assert!(positional_loss(&[set(0, 0.0)], &[set(1, 0.0)]).is_err());
    }

    #[test]
    fn flat_form_agrees() {
        let a = vec![set(0, 0.2), set(1, 0.4)];
        let b = vec![set(0, 0.3), set(1, 0.1)];
        let fa: Vec<f64> = a.iter().flat_map(|s| s.flatten()).map(f64::from).collect();
        let fb: Vec<f64> = b.iter().flat_map(|s| s.flatten()).map(f64::from).collect();
        let flat = positional_loss_flat(&fa, &fb, 2, None).unwrap();
        assert!((flat - positional_loss(&a, &b).unwrap()).abs() < 1e-6);
    }
}
