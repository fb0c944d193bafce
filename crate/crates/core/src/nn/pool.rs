use super::{Layer, Tensor};
use crate::error::{Error, Result};

const PADDED: usize = usize::MAX;

/// 2×2 max pooling with stride 2. Odd heights/widths are zero-padded on the
/// bottom/right first, so the output is `⌈h/2⌉ × ⌈w/2⌉`. Ties go to the
/// first position in row-major order within the window.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output_size(n: usize) -> usize {
        n.div_ceil(2)
    }
}

impl Layer for MaxPool2 {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape @ [n, c, h, w] = input.shape();
        let (ho, wo) = (Self::output_size(h), Self::output_size(w));
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![PADDED; n * c * ho * wo];
        let x = input.data();
        for plane in 0..n * c {
            let src = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = PADDED;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (y, xx) = (2 * oy + dy, 2 * ox + dx);
                        let (v, idx) = if y < h && xx < w {
                            let i = src + y * w + xx;
                            (x[i], i)
                        } else {
                            (0.0, PADDED)
                        };
                        if v > best {
                            best = v;
                            at = idx;
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    out.data_mut()[o] = best;
                    argmax[o] = at;
                }
            }
        }
        self.cache = Some((shape, argmax));
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::shape("maxpool backward before forward"))?;
        if grad_output.len() != argmax.len() {
            return Err(Error::shape(format!(
                "maxpool grad has {} elements, expected {}",
                grad_output.len(),
                argmax.len()
            )));
        }
        let mut grad = Tensor::zeros(*shape);
        for (&i, &g) in argmax.iter().zip(grad_output.data()) {
            if i != PADDED {
                grad.data_mut()[i] += g;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_the_maximum() {
        let mut p = MaxPool2::new();
        let y = p.forward(&Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = p.backward(&Tensor::from_vec([1, 1, 1, 1], vec![1.5]).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn ties_route_to_top_left() {
        let mut p = MaxPool2::new();
        p.forward(&Tensor::from_vec([1, 1, 4, 4], vec![2.0; 16]).unwrap()).unwrap();
        let g = p.backward(&Tensor::from_vec([1, 1, 2, 2], vec![1.0; 4]).unwrap()).unwrap();
        let expected: Vec<f64> = (0..16)
            .map(|i| if (i / 4) % 2 == 0 && (i % 4) % 2 == 0 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(g.data(), expected.as_slice());
    }

    #[test]
    fn odd_sizes_are_padded() {
        let mut p = MaxPool2::new();
        let x = Tensor::from_vec([1, 1, 3, 3], vec![-1.0, -2.0, 5.0, -3.0, -4.0, -6.0, 7.0, -8.0, -9.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 2]);
        // the zero padding wins against the all-negative corner window
        assert_eq!(y.data(), &[-1.0, 5.0, 7.0, 0.0]);
        let g = p.backward(&Tensor::from_vec([1, 1, 2, 2], vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(g.data().iter().sum::<f64>(), 3.0);
    }
}
