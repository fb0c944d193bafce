//! Per-turbine comparison regressors over lagged-power feature vectors.
//!
//! A single-feature (SF) vector is the last `T` powers of the target turbine,
//! oldest first. A local-feature (LF) vector concatenates the SF vectors of
//! the target and its nearest neighbours, nearest first. One model is fitted
//! per turbine; samples and splits follow the same [`SplitPlan`] as the
//! scene datasets, so sample `k` here targets the same timestamp as sample
//! `k` there.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{TelemetrySeries, TurbineRegistry};
use crate::scene::{MinMax, Split, SplitFractions, SplitPlan};

const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Sf,
    Lf,
}

impl std::fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureKind::Sf => "SF",
            FeatureKind::Lf => "LF",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    /// Lagged steps per turbine.
    pub window: usize,
    /// LF neighbour count; ignored for SF.
    pub neighbors: usize,
    /// LF neighbours farther than this are dropped.
    pub max_distance_km: Option<f64>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            kind: FeatureKind::Sf,
            window: 8,
            neighbors: 8,
            max_distance_km: None,
        }
    }
}

/// Supervised rows of one turbine: `x` is row-major `count × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbineFeatures {
    pub turbine: usize,
    /// Contributing turbines, target first.
    pub sources: Vec<usize>,
    pub dim: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl TurbineFeatures {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.x[k * self.dim..(k + 1) * self.dim]
    }

    pub fn rows(&self, range: std::ops::Range<usize>) -> (&[f64], &[f64]) {
        (&self.x[range.start * self.dim..range.end * self.dim], &self.y[range])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub spec: FeatureSpec,
    pub plan: SplitPlan,
    pub turbines: Vec<TurbineFeatures>,
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Up to `k` other turbines per turbine, nearest first, ties by lower id.
pub fn nearest_turbines(registry: &TurbineRegistry, k: usize, max_km: Option<f64>) -> Vec<Vec<usize>> {
    let ts = registry.turbines();
    ts.iter()
        .map(|a| {
            let mut d: Vec<(f64, usize)> = ts
                .iter()
                .filter(|b| b.id != a.id)
                .map(|b| (haversine_km(a.latitude, a.longitude, b.latitude, b.longitude), b.id))
                .filter(|&(km, _)| max_km.is_none_or(|m| km <= m))
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(k).map(|(_, id)| id).collect()
        })
        .collect()
}

/// Builds SF or LF rows for every turbine of a gap-free series.
pub fn build_features(
    series: &TelemetrySeries,
    registry: &TurbineRegistry,
    spec: &FeatureSpec,
    horizon: usize,
    fractions: SplitFractions,
) -> Result<FeatureSet> {
    if series.num_turbines() != registry.len() {
        return Err(Error::MisalignedSeries(format!(
            "series has {} turbines, registry {}",
            series.num_turbines(),
            registry.len()
        )));
    }
    if series.gap_count() > 0 {
        return Err(Error::GapPresent(series.gap_count()));
    }
    let plan = SplitPlan::new(series.len(), spec.window, horizon, fractions)?;
    let neighbors = match spec.kind {
        FeatureKind::Sf => vec![Vec::new(); registry.len()],
        FeatureKind::Lf => nearest_turbines(registry, spec.neighbors, spec.max_distance_km),
    };
    let t = spec.window;
    let turbines = neighbors
        .into_par_iter()
        .enumerate()
        .map(|(id, nb)| {
            let mut sources = vec![id];
            sources.extend(nb);
            let dim = sources.len() * t;
            let mut x = Vec::with_capacity(plan.count() * dim);
            let mut y = Vec::with_capacity(plan.count());
            for k in 0..plan.count() {
                let base = plan.base_step(k);
                for &s in &sources {
                    x.extend((base + 1 - t..=base).map(|step| series.value(s, step)));
                }
                y.push(series.value(id, plan.target_step(k)));
            }
            TurbineFeatures {
                turbine: id,
                sources,
                dim,
                x,
                y,
            }
        })
        .collect();
    Ok(FeatureSet {
        spec: *spec,
        plan,
        turbines,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    #[default]
    Mean,
    /// Inverse-distance weights; exact matches take all the weight.
    DistanceWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub metric: Metric,
    pub aggregator: Aggregator,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 5,
            metric: Metric::Euclidean,
            aggregator: Aggregator::Mean,
        }
    }
}

impl Metric {
    /// Euclidean distances are returned squared; only their order and the
    /// weighting step depend on them.
    pub fn raw(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }

    pub fn distance(self, raw: f64) -> f64 {
        match self {
            Metric::Euclidean => raw.sqrt(),
            Metric::Manhattan => raw,
        }
    }
}

/// Heap entry ordered by `(distance, training index)`.
#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

#[derive(Debug, Clone)]
pub struct Knn {
    config: KnnConfig,
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Knn {
    pub fn fit(x: &[f64], y: &[f64], dim: usize, config: KnnConfig) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        if dim == 0 || x.len() != y.len() * dim {
            return Err(Error::shape(format!("{} values for {} rows of {dim}", x.len(), y.len())));
        }
        if config.k == 0 || config.k > y.len() {
            return Err(Error::config(format!("k = {} with {} training rows", config.k, y.len())));
        }
        Ok(Self {
            config,
            dim,
            x: x.to_vec(),
            y: y.to_vec(),
        })
    }

    /// Indices and raw distances of the `k` nearest rows, nearest first.
    pub fn neighbors(&self, query: &[f64]) -> Vec<(usize, f64)> {
        let k = self.config.k;
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for (i, row) in self.x.chunks_exact(self.dim).enumerate() {
            let c = Candidate(self.config.metric.raw(row, query), i);
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("k ≥ 1") {
                heap.pop();
                heap.push(c);
            }
        }
        heap.into_sorted_vec().into_iter().map(|c| (c.1, c.0)).collect()
    }

    pub fn predict(&self, query: &[f64]) -> f64 {
        let nb = self.neighbors(query);
        match self.config.aggregator {
            Aggregator::Mean => nb.iter().map(|&(i, _)| self.y[i]).sum::<f64>() / nb.len() as f64,
            Aggregator::DistanceWeighted => {
                let exact: Vec<f64> = nb.iter().filter(|n| n.1 == 0.0).map(|&(i, _)| self.y[i]).collect();
                if !exact.is_empty() {
                    return exact.iter().sum::<f64>() / exact.len() as f64;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(i, raw) in &nb {
                    let w = 1.0 / self.config.metric.distance(raw);
                    num += w * self.y[i];
                    den += w;
                }
                num / den
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Kernel {
    Linear,
    /// `exp(−γ‖a − b‖²)`; without a γ, `1 / (dim · var(x))` of the training
    /// data is used.
    Rbf {
        #[serde(default)]
        gamma: Option<f64>,
    },
}

impl Kernel {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.expect("resolved at fit") * d).exp()
            }
        }
    }

    fn resolve(self, x: &[f64], dim: usize) -> Self {
        match self {
            Kernel::Rbf { gamma: None } => {
                let n = x.len() as f64;
                let mean = x.iter().sum::<f64>() / n;
                let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let gamma = if var > 0.0 { 1.0 / (dim as f64 * var) } else { 1.0 / dim as f64 };
                Kernel::Rbf { gamma: Some(gamma) }
            }
            k => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Stop once the maximal KKT violation falls below this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.01,
            kernel: Kernel::Rbf { gamma: None },
            tolerance: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Optimality evidence recomputed from the final dual coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrCertificate {
    pub iterations: usize,
    pub converged: bool,
    /// `max_{I_up} −y∇f − min_{I_low} −y∇f`; ≤ 0 at an exact optimum.
    pub kkt_violation: f64,
    /// Largest distance of any coefficient outside `[0, C]`.
    pub box_violation: f64,
    /// `|Σ (α_i − α_i*)|`.
    pub equality_violation: f64,
    pub primal: f64,
    pub dual: f64,
}

impl SvrCertificate {
    pub fn gap(&self) -> f64 {
        self.primal - self.dual
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap() / self.primal.abs().max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone)]
pub struct SvrModel {
    pub kernel: Kernel,
    pub dim: usize,
    /// Rows with a nonzero coefficient.
    pub support: Vec<f64>,
    /// `α_i − α_i*` per support row.
    pub coef: Vec<f64>,
    pub bias: f64,
    /// Dual variables `(α, α*)` over all training rows.
    pub alpha: Vec<f64>,
    pub certificate: SvrCertificate,
}

impl SvrModel {
    pub fn num_support(&self) -> usize {
        self.coef.len()
    }

    pub fn predict(&self, query: &[f64]) -> f64 {
        self.support
            .chunks_exact(self.dim)
            .zip(&self.coef)
            .map(|(s, c)| c * self.kernel.eval(s, query))
            .sum::<f64>()
            + self.bias
    }

    /// Primal weights; only meaningful for the linear kernel.
    pub fn linear_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for (s, c) in self.support.chunks_exact(self.dim).zip(&self.coef) {
            for (wi, si) in w.iter_mut().zip(s) {
                *wi += c * si;
            }
        }
        w
    }
}

const TAU: f64 = 1e-12;

/// ε-SVR by SMO over the 2l-variable dual
/// `min ½ aᵀQa + pᵀa` s.t. `yᵀa = 0`, `0 ≤ a ≤ C`, with second-order
/// working-set selection.
pub fn svr_fit(x: &[f64], z: &[f64], dim: usize, config: &SvrConfig) -> Result<SvrModel> {
    let l = z.len();
    if l == 0 {
        return Err(Error::EmptyTrainSet);
    }
    if dim == 0 || x.len() != l * dim {
        return Err(Error::shape(format!("{} values for {l} rows of {dim}", x.len())));
    }
    if !(config.c > 0.0 && config.epsilon >= 0.0 && config.tolerance > 0.0) {
        return Err(Error::config("SVR needs C > 0, ε ≥ 0 and a positive tolerance"));
    }
    let kernel = config.kernel.resolve(x, dim);
    let rows: Vec<&[f64]> = x.chunks_exact(dim).collect();
    let mut gram = vec![0.0; l * l];
    for i in 0..l {
        for j in 0..=i {
            let v = kernel.eval(rows[i], rows[j]);
            gram[i * l + j] = v;
            gram[j * l + i] = v;
        }
    }
    let k = |i: usize, j: usize| gram[(i % l) * l + (j % l)];
    let n = 2 * l;
    let y: Vec<f64> = (0..n).map(|t| if t < l { 1.0 } else { -1.0 }).collect();
    let p: Vec<f64> = (0..n)
        .map(|t| if t < l { config.epsilon - z[t] } else { config.epsilon + z[t - l] })
        .collect();
    let c = config.c;
    let mut a = vec![0.0; n];
    let mut g = p.clone();
    let up = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] < c } else { a[t] > 0.0 };
    let low = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] > 0.0 } else { a[t] < c };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if up(t, &a) && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i = t;
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !low(t, &a) {
                continue;
            }
            let v = -y[t] * g[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -(b * b) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let qij = y[i] * y[j] * k(i, j);
        let (old_i, old_j) = (a[i], a[j]);
        if y[i] != y[j] {
            let quad = (k(i, i) + k(j, j) + 2.0 * qij).max(TAU);
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * qij).max(TAU);
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_i, a[j] - old_j);
        for t in 0..n {
            g[t] += y[t] * (y[i] * k(i, t) * di + y[j] * k(j, t) * dj);
        }
    }
    if !converged {
        log::warn!("SVR stopped after {iterations} iterations without reaching the KKT tolerance");
    }

    let rho = calculate_rho(&a, &g, &y, c);
    let coef_all: Vec<f64> = (0..l).map(|t| a[t] - a[t + l]).collect();
    let mut support = Vec::new();
    let mut coef = Vec::new();
    for (t, &cf) in coef_all.iter().enumerate() {
        if cf != 0.0 {
            support.extend_from_slice(rows[t]);
            coef.push(cf);
        }
    }
    let certificate = certify(&gram, z, &a, &coef_all, -rho, config, iterations, converged);
    if !converged {
        log::warn!("final KKT violation {:.3e}", certificate.kkt_violation);
    }
    Ok(SvrModel {
        kernel,
        dim,
        support,
        coef,
        bias: -rho,
        alpha: a,
        certificate,
    })
}

/// Offset from free variables, or the midpoint of the feasible interval
/// when every variable sits at a bound.
fn calculate_rho(a: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..a.len() {
        let yg = y[t] * g[t];
        if a[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if a[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

#[allow(clippy::too_many_arguments)]
fn certify(
    gram: &[f64],
    z: &[f64],
    a: &[f64],
    coef: &[f64],
    bias: f64,
    config: &SvrConfig,
    iterations: usize,
    converged: bool,
) -> SvrCertificate {
    let l = z.len();
    let c = config.c;
    let eps = config.epsilon;
    // Kβ with β = α − α*, from scratch.
    let kb: Vec<f64> = (0..l)
        .map(|i| (0..l).map(|j| gram[i * l + j] * coef[j]).sum())
        .collect();
    let w2: f64 = coef.iter().zip(&kb).map(|(b, v)| b * v).sum();
    let mut gmax = f64::NEG_INFINITY;
    let mut gmin = f64::INFINITY;
    for t in 0..2 * l {
        let (y, grad) = if t < l {
            (1.0, kb[t] + eps - z[t])
        } else {
            (-1.0, -kb[t - l] + eps + z[t - l])
        };
        let up = if y > 0.0 { a[t] < c } else { a[t] > 0.0 };
        let low = if y > 0.0 { a[t] > 0.0 } else { a[t] < c };
        if up {
            gmax = gmax.max(-y * grad);
        }
        if low {
            gmin = gmin.min(-y * grad);
        }
    }
    let box_violation = a.iter().map(|&v| (-v).max(v - c).max(0.0)).fold(0.0, f64::max);
    let equality_violation = coef.iter().sum::<f64>().abs();
    let slack: f64 = (0..l).map(|i| ((z[i] - kb[i] - bias).abs() - eps).max(0.0)).sum();
    let primal = 0.5 * w2 + c * slack;
    let linear: f64 = (0..l).map(|i| z[i] * coef[i] - eps * (a[i] + a[i + l])).sum();
    let dual = -0.5 * w2 + linear;
    SvrCertificate {
        iterations,
        converged,
        kkt_violation: if gmax.is_finite() && gmin.is_finite() { gmax - gmin } else { 0.0 },
        box_violation,
        equality_violation,
        primal,
        dual,
    }
}

/// Last-value forecast: the prediction for `t + horizon` is the value at `t`.
/// Returns one prediction per target `values[horizon..]`.
pub fn persistence_predict(values: &[f64], horizon: usize) -> Vec<f64> {
    values[..values.len().saturating_sub(horizon)].to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum BaselineMethod {
    Knn(KnnConfig),
    Svr(SvrConfig),
    Persistence,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Knn(_) => "kNN",
            BaselineMethod::Svr(_) => "SVR",
            BaselineMethod::Persistence => "persistence",
        }
    }
}

/// Per-turbine forecasts and targets on one split, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    /// `predictions[turbine][sample]`.
    pub predictions: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Sample indices (into the split plan) of the columns.
    pub samples: std::ops::Range<usize>,
    /// Non-converged SVR fits.
    pub unconverged: usize,
}

/// Fits one model per turbine on the train split and forecasts `split`.
/// Features and labels are min-max scaled with the range of every train
/// row of every turbine before fitting, and forecasts mapped back.
pub fn run_baseline(features: &FeatureSet, method: &BaselineMethod, split: Split) -> Result<BaselineOutput> {
    let train = features.plan.range(Split::Train);
    let eval = features.plan.range(split);
    let scale = MinMax::fit(features.turbines.iter().flat_map(|t| {
        let (x, y) = t.rows(train.clone());
        x.iter().chain(y).copied()
    }))
    .ok_or(Error::EmptyTrainSet)?;
    let scale = if scale.max > scale.min {
        scale
    } else {
        MinMax {
            min: scale.min,
            max: scale.min + 1.0,
        }
    };

    let fitted: Vec<(Vec<f64>, bool)> = features
        .turbines
        .par_iter()
        .map(|t| -> Result<(Vec<f64>, bool)> {
            let window = features.spec.window;
            if let BaselineMethod::Persistence = method {
                // The newest own lag is the last entry of the target's block.
                return Ok((eval.clone().map(|k| t.row(k)[window - 1]).collect(), true));
            }
            let (x, y) = t.rows(train.clone());
            let xs: Vec<f64> = x.iter().map(|&v| scale.scale(v)).collect();
            let ys: Vec<f64> = y.iter().map(|&v| scale.scale(v)).collect();
            let query = |k: usize| -> Vec<f64> { t.row(k).iter().map(|&v| scale.scale(v)).collect() };
            match method {
                BaselineMethod::Knn(cfg) => {
                    let m = Knn::fit(&xs, &ys, t.dim, *cfg)?;
                    Ok((eval.clone().map(|k| scale.unscale(m.predict(&query(k)))).collect(), true))
                }
                BaselineMethod::Svr(cfg) => {
                    let m = svr_fit(&xs, &ys, t.dim, cfg)?;
                    let ok = m.certificate.converged;
                    Ok((eval.clone().map(|k| scale.unscale(m.predict(&query(k)))).collect(), ok))
                }
                BaselineMethod::Persistence => unreachable!(),
            }
        })
        .collect::<Result<_>>()?;
    let unconverged = fitted.iter().filter(|f| !f.1).count();
    Ok(BaselineOutput {
        predictions: fitted.into_iter().map(|f| f.0).collect(),
        targets: features.turbines.iter().map(|t| t.y[eval.clone()].to_vec()).collect(),
        samples: eval,
        unconverged,
    })
}
