use rand::Rng;

use super::conv::gemm;
use super::{he_uniform, Layer, Param, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = W·x + b` over the flattened sample.
/// Output shape `[n, out, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weight = he_uniform(rng, [outputs, inputs, 1, 1], inputs);
        Self::from_weights(weight, Tensor::zeros([1, outputs, 1, 1])).expect("consistent shapes")
    }

    pub fn from_weights(weight: Tensor, bias: Tensor) -> Result<Self> {
        let o = weight.shape()[0];
        if bias.len() != o {
            return Err(Error::shape(format!("bias has {} entries for {o} outputs", bias.len())));
        }
        Ok(Self {
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias.reshape([1, o, 1, 1])?),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.sample_len()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl Layer for Dense {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (n, f, o) = (input.batch(), input.sample_len(), self.outputs());
        if f != self.inputs() {
            return Err(Error::shape(format!(
                "dense expects {} features, got {f}",
                self.inputs()
            )));
        }
        let mut out = Tensor::zeros([n, o, 1, 1]);
        for s in 0..n {
            out.sample_mut(s).copy_from_slice(self.bias.value.data());
        }
        // Y[n×o] = X[n×f] · Wᵀ
        gemm(n, f, o, input.data(), false, self.weight.value.data(), true, 1.0, out.data_mut());
        self.cache = Some(input.clone());
        out.debug_check("dense");
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("dense backward before forward"))?;
        let (n, f, o) = (input.batch(), input.sample_len(), self.outputs());
        if grad_output.shape() != [n, o, 1, 1] {
            return Err(Error::shape(format!(
                "dense grad shape {:?}, expected {:?}",
                grad_output.shape(),
                [n, o, 1, 1]
            )));
        }
        let dy = grad_output.data();
        // dW[o×f] += dYᵀ · X ; db += Σ_n dY ; dX[n×f] = dY · W
        gemm(o, n, f, dy, true, input.data(), false, 1.0, self.weight.grad.data_mut());
        for s in 0..n {
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(grad_output.sample(s)) {
                *b += g;
            }
        }
        let mut grad_input = Tensor::zeros(input.shape());
        gemm(n, o, f, dy, false, self.weight.value.data(), false, 0.0, grad_input.data_mut());
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `max(0, x)`; the gradient at exactly 0 is 0.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Option<([usize; 4], Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let active: Vec<bool> = input.data().iter().map(|&x| x > 0.0).collect();
        let data = input.data().iter().map(|&x| x.max(0.0)).collect();
        self.active = Some((input.shape(), active));
        Tensor::from_vec(input.shape(), data)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (shape, active) = self
            .active
            .as_ref()
            .ok_or_else(|| Error::shape("relu backward before forward"))?;
        if grad_output.shape() != *shape {
            return Err(Error::shape(format!(
                "relu grad shape {:?}, expected {shape:?}",
                grad_output.shape()
            )));
        }
        let data = grad_output
            .data()
            .iter()
            .zip(active)
            .map(|(&g, &a)| if a { g } else { 0.0 })
            .collect();
        Tensor::from_vec(*shape, data)
    }
}

/// Stacks `a` then `b` along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [na, ca, ha, wa] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "cannot concatenate {:?} and {:?} along channels",
            a.shape(),
            b.shape()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for s in 0..na {
        data.extend_from_slice(a.sample(s));
        data.extend_from_slice(b.sample(s));
    }
    Tensor::from_vec([na, ca + cb, ha, wa], data)
}

/// Inverse of [`concat_channels`]: the first `channels` go left.
pub fn split_channels(t: &Tensor, channels: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = t.shape();
    if channels > c {
        return Err(Error::shape(format!("cannot split {channels} of {c} channels")));
    }
    let cut = channels * h * w;
    let (mut a, mut b) = (Vec::with_capacity(n * cut), Vec::with_capacity(t.len() - n * cut));
    for s in 0..n {
        let (x, y) = t.sample(s).split_at(cut);
        a.extend_from_slice(x);
        b.extend_from_slice(y);
    }
    Ok((
        Tensor::from_vec([n, channels, h, w], a)?,
        Tensor::from_vec([n, c - channels, h, w], b)?,
    ))
}

/// Keeps the top-left `h × w` window of every plane.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, th, tw] = t.shape();
    if h > th || w > tw {
        return Err(Error::shape(format!("cannot crop {th}×{tw} to {h}×{w}")));
    }
    let mut data = Vec::with_capacity(n * c * h * w);
    for plane in t.data().chunks(th * tw) {
        for r in 0..h {
            data.extend_from_slice(&plane[r * tw..r * tw + w]);
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Adjoint of [`crop`]: zero-pads back to `h × w`.
pub fn uncrop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let [n, c, th, tw] = t.shape();
    if th > h || tw > w {
        return Err(Error::shape(format!("cannot pad {th}×{tw} to {h}×{w}")));
    }
    let mut out = Tensor::zeros([n, c, h, w]);
    for (dst, src) in out.data_mut().chunks_mut(h * w).zip(t.data().chunks(th * tw)) {
        for r in 0..th {
            dst[r * w..r * w + tw].copy_from_slice(&src[r * tw..(r + 1) * tw]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_dense() {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let mut d = Dense::from_weights(
            Tensor::from_vec([3, 3, 1, 1], eye).unwrap(),
            Tensor::zeros([1, 3, 1, 1]),
        )
        .unwrap();
        let x = Tensor::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(d.forward(&x).unwrap(), x);
    }

    #[test]
    fn concat_and_split() {
        let a = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([1, 3, 1, 1], vec![3.0, 4.0, 5.0]).unwrap();
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.shape(), [1, 5, 1, 1]);
        assert_eq!(ab.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (x, y) = split_channels(&ab, 2).unwrap();
        assert_eq!((x, y), (a, b));
        assert!(concat_channels(&ab, &Tensor::zeros([1, 1, 2, 1])).is_err());
    }

    #[test]
    fn relu_masks_negatives() {
        let mut r = Relu::new();
        let y = r.forward(&Tensor::from_vec([1, 3, 1, 1], vec![-1.0, 0.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = r.backward(&Tensor::from_vec([1, 3, 1, 1], vec![5.0; 3]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn crop_and_uncrop() {
        let t = Tensor::from_vec([1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        let c = crop(&t, 2, 2).unwrap();
        assert_eq!(c.data(), &[0.0, 1.0, 3.0, 4.0]);
        let u = uncrop(&c, 3, 3).unwrap();
        assert_eq!(u.data(), &[0.0, 1.0, 0.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
