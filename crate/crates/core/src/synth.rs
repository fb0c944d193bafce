//! Synthetic wind farms with known dynamics.
//!
//! Wind speed is an ambient level plus Gaussian blobs that translate by a
//! fixed drift every step on a torus, observed with i.i.d. Gaussian noise.
//! Power follows an idealized turbine curve of the observed speed, scaled by
//! a per-turbine gain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::ingest::{TelemetrySeries, TurbineRegistry, Variable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    /// Peak speed added at the centre, m/s.
    pub amplitude: f64,
    /// `(row, col)` at step 0, in cells.
    pub center: (f64, f64),
    /// Standard deviation of the Gaussian, in cells.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub height: usize,
    pub width: usize,
    pub blobs: Vec<Blob>,
    /// `(dx, dy)`: columns and rows travelled per step.
    pub drift: (f64, f64),
    /// Background speed, m/s.
    pub ambient: f64,
    /// Observation noise standard deviation, m/s.
    pub noise_sd: f64,
    pub steps: usize,
    pub seed: u64,
    #[serde(default = "default_period")]
    pub sampling_period: i64,
    #[serde(default)]
    pub start_time: i64,
}

fn default_period() -> i64 {
    600
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.steps == 0 {
            return Err(Error::config("field height, width and steps must be positive"));
        }
        if self.sampling_period <= 0 {
            return Err(Error::config("sampling_period must be positive"));
        }
        if !(self.noise_sd >= 0.0) || !self.ambient.is_finite() {
            return Err(Error::config("noise_sd must be ≥ 0 and ambient finite"));
        }
        for (i, b) in self.blobs.iter().enumerate() {
            if !(b.amplitude >= 0.0) || !(b.width > 0.0) {
                return Err(Error::config(format!(
                    "blob {i}: amplitude must be ≥ 0 and width > 0"
                )));
            }
        }
        Ok(())
    }

    /// Noise-free speed at `(row, col)` after `step` steps.
    pub fn clean_speed(&self, step: usize, row: usize, col: usize) -> f64 {
        let (dx, dy) = self.drift;
        let (h, w) = (self.height as f64, self.width as f64);
        let t = step as f64;
        let mut v = self.ambient;
        for b in &self.blobs {
            let dr = torus_offset(row as f64 - b.center.0 - dy * t, h);
            let dc = torus_offset(col as f64 - b.center.1 - dx * t, w);
            v += b.amplitude * (-(dr * dr + dc * dc) / (2.0 * b.width * b.width)).exp();
        }
        v
    }
}

/// Shortest signed-magnitude distance on a ring of circumference `len`.
fn torus_offset(d: f64, len: f64) -> f64 {
    let d = d.rem_euclid(len);
    d.min(len - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerCurve {
    pub cut_in: f64,
    pub rated_speed: f64,
    /// MW.
    pub rated_power: f64,
    /// Multiplicative turbine-specific factor.
    #[serde(default = "one")]
    pub gain: f64,
}

fn one() -> f64 {
    1.0
}

impl PowerCurve {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.cut_in && self.cut_in < self.rated_speed) {
            return Err(Error::config("power curve needs 0 ≤ cut_in < rated_speed"));
        }
        if !(self.rated_power > 0.0) || !(self.gain > 0.0) {
            return Err(Error::config("rated_power and gain must be positive"));
        }
        Ok(())
    }

    /// Zero below cut-in, cubic ramp to rated power, flat above.
    pub fn power(&self, speed: f64) -> f64 {
        let p = if speed < self.cut_in {
            0.0
        } else if speed < self.rated_speed {
            let ci3 = self.cut_in.powi(3);
            self.rated_power * (speed.powi(3) - ci3) / (self.rated_speed.powi(3) - ci3)
        } else {
            self.rated_power
        };
        p * self.gain
    }
}

/// `n` copies of `base` with gains drawn from `1 + jitter_sd · N(0, 1)`
/// (floored at 0.05).
pub fn jittered_curves(base: PowerCurve, n: usize, jitter_sd: f64, seed: u64) -> Vec<PowerCurve> {
    if jitter_sd == 0.0 {
        return vec![base; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let normal = Normal::new(0.0, jitter_sd).expect("finite sd");
    (0..n)
        .map(|_| PowerCurve {
            gain: base.gain * (1.0 + normal.sample(&mut rng)).max(0.05),
            ..base
        })
        .collect()
}

/// Samples speed and power for every turbine of `grid` at its cell.
///
/// Each step draws its noise from its own ChaCha stream `(seed, step)`, so
/// the output is bit-reproducible and independent of evaluation order.
pub fn generate(
    config: &FieldConfig,
    curves: &[PowerCurve],
    grid: &GridMap,
) -> Result<(TelemetrySeries, TelemetrySeries)> {
    config.validate()?;
    if grid.height() > config.height || grid.width() > config.width {
        return Err(Error::config(format!(
            "grid {}×{} does not fit the {}×{} field",
            grid.height(),
            grid.width(),
            config.height,
            config.width
        )));
    }
    let n = grid.num_turbines();
    if curves.len() != n {
        return Err(Error::Length {
            left: curves.len(),
            right: n,
        });
    }
    for c in curves {
        c.validate()?;
    }
    let cells: Vec<(usize, usize)> = (0..n)
        .map(|id| grid.locate(id as i64))
        .collect::<Result<_>>()?;

    let mut speed = vec![Vec::with_capacity(config.steps); n];
    let mut power = vec![Vec::with_capacity(config.steps); n];
    let noise = Normal::new(0.0, config.noise_sd).expect("validated sd");
    for step in 0..config.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(step as u64);
        for (id, &(r, c)) in cells.iter().enumerate() {
            let mut v = config.clean_speed(step, r, c);
            if config.noise_sd > 0.0 {
                v = (v + noise.sample(&mut rng)).max(0.0);
            }
            speed[id].push(v);
            power[id].push(curves[id].power(v));
        }
    }
    let mk = |var, rows| TelemetrySeries::from_dense(var, config.start_time, config.sampling_period, rows);
    Ok((mk(Variable::Speed, speed)?, mk(Variable::Power, power)?))
}

/// Regular lattice of turbine coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub lat0: f64,
    pub dlat: f64,
    pub lon0: f64,
    pub dlon: f64,
}

impl Default for Lattice {
    fn default() -> Self {
        Self {
            lat0: 41.40,
            dlat: 0.03,
            lon0: -105.34,
            dlon: 0.02,
        }
    }
}

/// A full synthetic dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub field: FieldConfig,
    pub curve: PowerCurve,
    /// Standard deviation of the per-turbine power gain.
    #[serde(default)]
    pub gain_jitter: f64,
    #[serde(default)]
    pub lattice: Lattice,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub registry: TurbineRegistry,
    pub grid: GridMap,
    pub speed: TelemetrySeries,
    pub power: TelemetrySeries,
}

/// One turbine per field cell, on `config.lattice`.
pub fn synthesize(config: &SynthConfig) -> Result<Scenario> {
    let f = &config.field;
    let l = config.lattice;
    let rows = (0..f.height).flat_map(|r| {
        (0..f.width).map(move |c| {
            let id = (r * f.width + c) as i64;
            (id, l.lat0 + r as f64 * l.dlat, l.lon0 + c as f64 * l.dlon)
        })
    });
    let registry = TurbineRegistry::from_rows(rows)?;
    let grid = GridMap::embed(&registry)?;
    if (grid.height(), grid.width()) != (f.height, f.width) {
        return Err(Error::config("lattice spacing collapses rows or columns"));
    }
    let curves = jittered_curves(config.curve, registry.len(), config.gain_jitter, f.seed);
    let (speed, power) = generate(f, &curves, &grid)?;
    Ok(Scenario {
        registry,
        grid,
        speed,
        power,
    })
}

/// Configuration of the fixed acceptance scenario: a fully occupied 16×16
/// farm, two blobs drifting one column per step, noise at 5% of ambient,
/// 600 ten-minute steps, seed 42.
pub fn reference_config() -> SynthConfig {
    let ambient = 8.0;
    SynthConfig {
        field: FieldConfig {
            height: 16,
            width: 16,
            blobs: vec![
                Blob {
                    amplitude: 6.0,
                    center: (4.0, 3.0),
                    width: 2.5,
                },
                Blob {
                    amplitude: 5.0,
                    center: (11.5, 10.0),
                    width: 3.0,
                },
            ],
            drift: (1.0, 0.0),
            ambient,
            noise_sd: 0.05 * ambient,
            steps: 600,
            seed: 42,
            sampling_period: 600,
            start_time: 0,
        },
        curve: PowerCurve {
            cut_in: 3.0,
            rated_speed: 12.0,
            rated_power: 30.0,
            gain: 1.0,
        },
        gain_jitter: 0.0,
        lattice: Lattice::default(),
    }
}

pub fn reference_scenario() -> Scenario {
    synthesize(&reference_config()).expect("reference configuration is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise_sd: f64) -> SynthConfig {
        let mut cfg = reference_config();
        cfg.field.height = 6;
        cfg.field.width = 7;
        cfg.field.steps = 20;
        cfg.field.noise_sd = noise_sd;
        cfg.field.blobs[1].center = (4.0, 5.5);
        cfg
    }

    #[test]
    fn drift_shifts_one_column() {
        let sc = synthesize(&small(0.0)).unwrap();
        let w = 7;
        for step in 0..19 {
            for r in 0..6 {
                for c in 0..w {
                    let here = sc.speed.value(r * w + c, step);
                    let next = sc.speed.value(r * w + (c + 1) % w, step + 1);
                    assert_eq!(here, next, "step {step} cell ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn below_cut_in_is_zero_power() {
        let mut cfg = small(0.0);
        cfg.field.ambient = 1.0;
        cfg.field.blobs.clear();
        let sc = synthesize(&cfg).unwrap();
        assert!((0..sc.power.num_turbines()).all(|t| sc.power.turbine(t).iter().all(|v| *v == Some(0.0))));
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let a = synthesize(&small(0.4)).unwrap();
        let b = synthesize(&small(0.4)).unwrap();
        assert_eq!(a.speed, b.speed);
        assert_eq!(a.power, b.power);
        let mut other = small(0.4);
        other.field.seed = 43;
        assert_ne!(synthesize(&other).unwrap().speed, a.speed);
    }

    #[test]
    fn power_curve_shape() {
        let c = reference_config().curve;
        assert_eq!(c.power(2.9), 0.0);
        assert_eq!(c.power(3.0), 0.0);
        assert!((c.power(12.0 - 1e-12) - 30.0).abs() < 1e-9);
        assert_eq!(c.power(25.0), 30.0);
        assert!(c.power(8.0) > c.power(7.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(0.0);
        cfg.field.blobs[0].width = 0.0;
        assert!(synthesize(&cfg).is_err());
        let mut cfg = small(0.0);
        cfg.curve.cut_in = 13.0;
        assert!(synthesize(&cfg).is_err());
    }

    #[test]
    fn reference_shape() {
        let sc = reference_scenario();
        assert_eq!(sc.grid.occupancy(), 1.0);
        assert_eq!((sc.grid.height(), sc.grid.width()), (16, 16));
        assert_eq!(sc.power.len(), 600);
        assert_eq!(sc.registry.len(), 256);
    }
}
