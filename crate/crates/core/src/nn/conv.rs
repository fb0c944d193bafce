//! 2-d convolution (cross-correlation) and its transpose, via im2col + GEMM.

use rand::Rng;

use super::{he_uniform, Layer, Param, Tensor};
use crate::error::{Error, Result};

/// `c = op(a) · op(b) + beta · c`, row-major; `op(a)` is `m × k`, `op(b)` is
/// `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry of a convolution over a `c × h × w` image.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let out = |n: usize, dim: &str| {
            if n + 2 * pad < k {
                Err(Error::shape(format!(
                    "{dim} {n} with padding {pad} is smaller than kernel {k}"
                )))
            } else {
                Ok((n + 2 * pad - k) / stride + 1)
            }
        };
        Ok(Self {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: out(h, "height")?,
            wo: out(w, "width")?,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Input offset read by kernel tap `(ki, kj)` at output `(oy, ox)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.pad)?;
        let x = (ox * self.stride + kj).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col(&self, image: &[f64], cols: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            let plane = &image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = &mut cols[((ci * self.k + ki) * self.k + kj) * p..][..p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            row[oy * self.wo + ox] = match self.source(oy, ox, ki, kj) {
                                Some((y, x)) => plane[y * self.w + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds columns back into an image.
    fn col2im(&self, cols: &[f64], image: &mut [f64]) {
        let p = self.positions();
        for ci in 0..self.c {
            let plane = &mut image[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = &cols[((ci * self.k + ki) * self.k + kj) * p..][..p];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, x)) = self.source(oy, ox, ki, kj) {
                                plane[y * self.w + x] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution with `[out, in, k, k]` kernels and per-output-channel bias.
/// Output size per spatial dim: `⌊(n + 2·pad − k) / stride⌋ + 1`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    stride: usize,
    pad: usize,
    cache: Option<(Geometry, usize, Vec<f64>)>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel, kernel];
        let weight = he_uniform(rng, shape, in_channels * kernel * kernel);
        Self::from_weights(weight, Tensor::zeros([1, out_channels, 1, 1]), stride, pad)
            .expect("consistent shapes")
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [o, _, kh, kw] = weight.shape();
        if kh != kw || stride == 0 {
            return Err(Error::shape("kernels must be square and stride positive"));
        }
        if bias.len() != o {
            return Err(Error::shape(format!("bias has {} entries for {o} kernels", bias.len())));
        }
        Ok(Self {
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias.reshape([1, o, 1, 1])?),
            stride,
            pad,
            cache: None,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = input.shape();
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv2d expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let g = Geometry::new(c, h, w, self.kernel(), self.stride, self.pad)?;
        let o = self.out_channels();
        let (rows, p) = (g.rows(), g.positions());
        let mut cols = vec![0.0; n * rows * p];
        let mut out = Tensor::zeros([n, o, g.ho, g.wo]);
        for s in 0..n {
            let cs = &mut cols[s * rows * p..(s + 1) * rows * p];
            g.im2col(input.sample(s), cs);
            let os = out.sample_mut(s);
            for (oc, plane) in os.chunks_mut(p).enumerate() {
                plane.fill(self.bias.value.data()[oc]);
            }
            gemm(o, rows, p, self.weight.value.data(), false, cs, false, 1.0, os);
        }
        self.cache = Some((g, n, cols));
        out.debug_check("conv2d");
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (g, n, cols) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("conv2d backward before forward"))?;
        let o = self.out_channels();
        if grad_output.shape() != [*n, o, g.ho, g.wo] {
            return Err(Error::shape(format!(
                "conv2d grad shape {:?}, expected {:?}",
                grad_output.shape(),
                [*n, o, g.ho, g.wo]
            )));
        }
        let (rows, p) = (g.rows(), g.positions());
        let mut grad_input = Tensor::zeros([*n, g.c, g.h, g.w]);
        let mut dcols = vec![0.0; rows * p];
        for s in 0..*n {
            let dy = grad_output.sample(s);
            let cs = &cols[s * rows * p..(s + 1) * rows * p];
            gemm(o, p, rows, dy, false, cs, true, 1.0, self.weight.grad.data_mut());
            for (oc, plane) in dy.chunks(p).enumerate() {
                self.bias.grad.data_mut()[oc] += plane.iter().sum::<f64>();
            }
            gemm(rows, o, p, self.weight.value.data(), true, dy, false, 0.0, &mut dcols);
            g.col2im(&dcols, grad_input.sample_mut(s));
        }
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with `[in, out, k, k]` kernels: the adjoint of
/// [`Conv2d`]'s input map, plus bias. Output size per spatial dim:
/// `(n − 1)·stride − 2·pad + k`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    stride: usize,
    pad: usize,
    cache: Option<(Geometry, Tensor)>,
}

impl ConvTranspose2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let shape = [in_channels, out_channels, kernel, kernel];
        // Each output pixel receives about in·k²/stride² contributions.
        let fan_in = (in_channels * kernel * kernel / (stride * stride)).max(1);
        let weight = he_uniform(rng, shape, fan_in);
        Self::from_weights(weight, Tensor::zeros([1, out_channels, 1, 1]), stride, pad)
            .expect("consistent shapes")
    }

    pub fn from_weights(weight: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let [_, o, kh, kw] = weight.shape();
        if kh != kw || stride == 0 {
            return Err(Error::shape("kernels must be square and stride positive"));
        }
        if bias.len() != o {
            return Err(Error::shape(format!("bias has {} entries for {o} outputs", bias.len())));
        }
        Ok(Self {
            weight: Param::new("weight", weight),
            bias: Param::new("bias", bias.reshape([1, o, 1, 1])?),
            stride,
            pad,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// Spatial output size for an input of `n` pixels.
    pub fn output_size(&self, n: usize) -> Result<usize> {
        let k = self.weight.value.shape()[2];
        ((n.max(1) - 1) * self.stride + k)
            .checked_sub(2 * self.pad)
            .filter(|&s| s > 0 && n > 0)
            .ok_or_else(|| Error::shape(format!("transposed conv output for input {n} is empty")))
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [n, c, hi, wi] = input.shape();
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv_transpose2d expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let (ho, wo) = (self.output_size(hi)?, self.output_size(wi)?);
        let o = self.out_channels();
        let k = self.weight.value.shape()[2];
        // The geometry of the forward convolution whose adjoint this is.
        let g = Geometry::new(o, ho, wo, k, self.stride, self.pad)?;
        debug_assert_eq!((g.ho, g.wo), (hi, wi));
        let (rows, p) = (g.rows(), g.positions());
        let mut out = Tensor::zeros([n, o, ho, wo]);
        let mut cols = vec![0.0; rows * p];
        for s in 0..n {
            gemm(rows, c, p, self.weight.value.data(), true, input.sample(s), false, 0.0, &mut cols);
            let os = out.sample_mut(s);
            g.col2im(&cols, os);
            for (oc, plane) in os.chunks_mut(ho * wo).enumerate() {
                let b = self.bias.value.data()[oc];
                plane.iter_mut().for_each(|x| *x += b);
            }
        }
        self.cache = Some((g, input.clone()));
        out.debug_check("conv_transpose2d");
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (g, input) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("conv_transpose2d backward before forward"))?;
        let [n, c, hi, wi] = input.shape();
        let o = self.out_channels();
        if grad_output.shape() != [n, o, g.h, g.w] {
            return Err(Error::shape(format!(
                "conv_transpose2d grad shape {:?}, expected {:?}",
                grad_output.shape(),
                [n, o, g.h, g.w]
            )));
        }
        let (rows, p) = (g.rows(), g.positions());
        let mut dcols = vec![0.0; rows * p];
        let mut grad_input = Tensor::zeros([n, c, hi, wi]);
        for s in 0..n {
            let dy = grad_output.sample(s);
            g.im2col(dy, &mut dcols);
            gemm(c, rows, p, self.weight.value.data(), false, &dcols, false, 0.0, grad_input.sample_mut(s));
            gemm(c, p, rows, input.sample(s), false, &dcols, true, 1.0, self.weight.grad.data_mut());
            for (oc, plane) in dy.chunks(g.h * g.w).enumerate() {
                self.bias.grad.data_mut()[oc] += plane.iter().sum::<f64>();
            }
        }
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
