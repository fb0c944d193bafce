use super::Tensor;
use crate::error::{Error, Result};

/// Mean squared error over mask-true cells only.
///
/// `prediction` is `[n, 1, h, w]`, `target` holds `n·h·w` values and `mask`
/// one `h × w` plane shared by every sample. Returns the loss and its
/// gradient, `2(p − t)/m` on masked cells and 0 elsewhere, where `m` counts
/// masked cells over the whole batch.
pub fn masked_mse(prediction: &Tensor, target: &[f64], mask: &[bool]) -> Result<(f64, Tensor)> {
    let [n, c, h, w] = prediction.shape();
    if c != 1 || mask.len() != h * w || target.len() != prediction.len() {
        return Err(Error::shape(format!(
            "prediction {:?}, target {} values, mask {} cells",
            prediction.shape(),
            target.len(),
            mask.len()
        )));
    }
    let per_sample = mask.iter().filter(|&&m| m).count();
    if per_sample == 0 || n == 0 {
        return Err(Error::EmptyMask);
    }
    let m = (per_sample * n) as f64;
    let mut grad = Tensor::zeros(prediction.shape());
    let mut sum = 0.0;
    for (i, (&p, &t)) in prediction.data().iter().zip(target).enumerate() {
        if mask[i % (h * w)] {
            let d = p - t;
            sum += d * d;
            grad.data_mut()[i] = 2.0 * d / m;
        }
    }
    Ok((sum / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let p = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (l, g) = masked_mse(&p, p.data(), &[true, true]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ignores_masked_out_cells() {
        let p = Tensor::from_vec([1, 1, 1, 2], vec![1.0, 9.0]).unwrap();
        let (l, g) = masked_mse(&p, &[0.0, 0.0], &[true, false]).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[2.0, 0.0]);
        let (l2, _) = masked_mse(&p, &[0.0, -40.0], &[true, false]).unwrap();
        assert_eq!(l2, l);
    }

    #[test]
    fn empty_mask() {
        let p = Tensor::zeros([1, 1, 1, 2]);
        assert!(matches!(masked_mse(&p, &[0.0, 0.0], &[false, false]), Err(Error::EmptyMask)));
    }
}
