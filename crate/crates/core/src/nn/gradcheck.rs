//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Tensor};
use crate::error::Result;

/// Something with perturbable scalar coordinates, a scalar loss and an
/// analytic gradient over those coordinates.
pub trait GradCheckable {
    fn num_coords(&self) -> usize;
    fn coord(&self, i: usize) -> f64;
    fn set_coord(&mut self, i: usize, value: f64);
    fn loss(&mut self) -> Result<f64>;
    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates checked; all of them when there are fewer.
    pub samples: usize,
    /// Pass iff the maximal relative error is below this.
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator, so coordinates whose
    /// true gradient is ~0 are judged on absolute error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples: 200,
            tolerance: 1e-6,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

/// Compares the analytic gradient with central differences
/// `(L(x + h) − L(x − h)) / 2h` on a seeded subsample of coordinates.
/// Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn grad_check(target: &mut dyn GradCheckable, config: &GradCheckConfig) -> Result<GradCheckReport> {
    let (_, analytic) = target.loss_and_grad()?;
    let n = target.num_coords();
    let coords: Vec<usize> = if n <= config.samples {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut picked = sample(&mut rng, n, config.samples).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut report = GradCheckReport {
        checked: coords.len(),
        max_rel_error: 0.0,
        worst_coord: 0,
        analytic: 0.0,
        numeric: 0.0,
        passed: true,
    };
    for &i in &coords {
        let x = target.coord(i);
        target.set_coord(i, x + config.step);
        let up = target.loss()?;
        target.set_coord(i, x - config.step);
        let down = target.loss()?;
        target.set_coord(i, x);
        let numeric = (up - down) / (2.0 * config.step);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_coord = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < config.tolerance;
    Ok(report)
}

/// Checks one layer under the loss `⟨layer(x), r⟩` for a fixed random `r`.
/// Coordinates are the input entries followed by every parameter entry.
pub struct LayerProbe<L: Layer> {
    pub layer: L,
    pub input: Tensor,
    projection: Option<Tensor>,
    seed: u64,
}

impl<L: Layer> LayerProbe<L> {
    pub fn new(layer: L, input: Tensor, seed: u64) -> Self {
        Self {
            layer,
            input,
            projection: None,
            seed,
        }
    }

    fn projection_for(&mut self, out: &Tensor) -> &Tensor {
        let seed = self.seed;
        self.projection.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(out.shape(), data).expect("sized from output")
        })
    }

    fn locate(&self, mut i: usize) -> (Option<usize>, usize) {
        if i < self.input.len() {
            return (None, i);
        }
        i -= self.input.len();
        for (k, p) in self.layer.params().iter().enumerate() {
            if i < p.value.len() {
                return (Some(k), i);
            }
            i -= p.value.len();
        }
        panic!("coordinate out of range");
    }
}

impl<L: Layer> GradCheckable for LayerProbe<L> {
    fn num_coords(&self) -> usize {
        self.input.len() + self.layer.params().iter().map(|p| p.value.len()).sum::<usize>()
    }

    fn coord(&self, i: usize) -> f64 {
        match self.locate(i) {
            (None, j) => self.input.data()[j],
            (Some(k), j) => self.layer.params()[k].value.data()[j],
        }
    }

    fn set_coord(&mut self, i: usize, value: f64) {
        match self.locate(i) {
            (None, j) => self.input.data_mut()[j] = value,
            (Some(k), j) => self.layer.params_mut()[k].value.data_mut()[j] = value,
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let out = self.layer.forward(&self.input)?;
        Ok(out.dot(self.projection_for(&out)))
    }

    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        for p in self.layer.params_mut() {
            p.zero_grad();
        }
        let out = self.layer.forward(&self.input)?;
        let r = self.projection_for(&out).clone();
        let loss = out.dot(&r);
        let mut grad = self.layer.backward(&r)?.into_vec();
        for p in self.layer.params() {
            grad.extend_from_slice(p.grad.data());
        }
        Ok((loss, grad))
    }
}
