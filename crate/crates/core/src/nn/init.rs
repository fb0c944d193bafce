use rand::Rng;

use super::Tensor;

/// He-uniform initialization: `U(−√(6/fan_in), √(6/fan_in))`.
pub fn he_uniform(rng: &mut impl Rng, shape: [usize; 4], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
