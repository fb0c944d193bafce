//! Scenes and stacked spatio-temporal tensors.
//!
//! A [`Scene`] is one variable at one timestamp laid out on the grid. An
//! [`StfTensor`] stacks the scenes of a sliding window, time-major and
//! oldest first, with one channel per (time step, variable). Pairing each
//! window with the target scene `horizon` steps after its last step gives a
//! supervised [`SampleSet`].

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GridMap, EMPTY};
use crate::ingest::{TelemetrySeries, Variable};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    /// Row-major values; cells without a turbine hold 0.
    pub values: Vec<f64>,
    /// Row-major, `true` on turbine cells.
    pub mask: Vec<bool>,
    pub timestamp: i64,
    pub variable: Variable,
}

impl Scene {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Rasterizes one snapshot (`snapshot[id]` is turbine `id`'s reading) onto
/// the grid.
pub fn build_scene(
    grid: &GridMap,
    snapshot: &[Option<f64>],
    timestamp: i64,
    variable: Variable,
) -> Result<Scene> {
    let mut values = vec![0.0; grid.num_cells()];
    for (slot, &cell) in values.iter_mut().zip(grid.cells()) {
        if cell == EMPTY {
            continue;
        }
        let id = cell as usize;
        *slot = snapshot
            .get(id)
            .copied()
            .flatten()
            .ok_or(Error::IncompleteSnapshot(id))?;
    }
    Ok(Scene {
        height: grid.height(),
        width: grid.width(),
        values,
        mask: grid.mask(),
        timestamp,
        variable,
    })
}

/// One model input: `channels × height × width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StfTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// `(variable, lag)` per channel; lag counts steps back from `base_time`.
    pub channel_spec: Vec<(Variable, usize)>,
    /// Timestamp of the newest scene in the window.
    pub base_time: i64,
}

impl StfTensor {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Channel layout for a window of `window` steps over `variables`.
pub fn channel_spec(window: usize, variables: &[Variable]) -> Vec<(Variable, usize)> {
    (0..window)
        .flat_map(|step| variables.iter().map(move |&v| (v, window - 1 - step)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|s| s.code() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
        }
    }
}

/// Chronological train/val/test partition of the sample indices of a
/// windowed series. Sample `k` ends at step `window − 1 + k` and targets
/// step `window − 1 + k + horizon`. CNN and baseline datasets built from the
/// same plan share samples and targets one-to-one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub series_len: usize,
    pub window: usize,
    pub horizon: usize,
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitPlan {
    pub fn new(
        series_len: usize,
        window: usize,
        horizon: usize,
        fractions: SplitFractions,
    ) -> Result<Self> {
        if window == 0 || horizon == 0 {
            return Err(Error::config("window and horizon must be at least 1"));
        }
        let SplitFractions { train, val } = fractions;
        if !(train > 0.0 && val >= 0.0 && train + val <= 1.0) {
            return Err(Error::config(format!(
                "split fractions train={train}, val={val} are not a partition"
            )));
        }
        let required = window + horizon;
        if series_len < required {
            return Err(Error::InsufficientHistory {
                required,
                available: series_len,
            });
        }
        let n = series_len - window - horizon + 1;
        let n_train = ((n as f64 * train).round() as usize).clamp(1, n);
        let n_val = ((n as f64 * val).round() as usize).min(n - n_train);
        Ok(Self::from_counts(series_len, window, horizon, n_train, n_val))
    }

    pub(crate) fn from_counts(
        series_len: usize,
        window: usize,
        horizon: usize,
        n_train: usize,
        n_val: usize,
    ) -> Self {
        let n = series_len + 1 - window - horizon;
        Self {
            series_len,
            window,
            horizon,
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..n,
        }
    }

    pub fn count(&self) -> usize {
        self.test.end
    }

    /// Step index of the newest input of sample `k`.
    pub fn base_step(&self, k: usize) -> usize {
        self.window - 1 + k
    }

    pub fn target_step(&self, k: usize) -> usize {
        self.base_step(k) + self.horizon
    }

    pub fn split_of(&self, k: usize) -> Split {
        if self.train.contains(&k) {
            Split::Train
        } else if self.val.contains(&k) {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.train.clone(),
            Split::Val => self.val.clone(),
            Split::Test => self.test.clone(),
        }
    }

    /// Hex digest identifying this partition.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [
            self.series_len,
            self.window,
            self.horizon,
            self.train.end,
            self.val.end,
            self.test.end,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    /// Scenes per input window.
    pub window: usize,
    /// Steps between the newest input scene and the target.
    pub horizon: usize,
    /// Input variables, in channel order within each time step.
    pub variables: Vec<Variable>,
    pub target: Variable,
    #[serde(default)]
    pub split: SplitFractions,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            window: 8,
            horizon: 3,
            variables: vec![Variable::Power],
            target: Variable::Power,
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: StfTensor,
    pub target: Scene,
    pub split: Split,
}

/// Per-variable min-max ranges fitted on the training split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NormStats {
    pub ranges: BTreeMap<Variable, MinMax>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    /// Affine map of `[min, max]` onto `[0, 1]`; values outside the fitted
    /// range map outside `[0, 1]` (no clamping).
    pub fn scale(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn unscale(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }

    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        values.into_iter().fold(None, |acc, x| match acc {
            None => Some(MinMax { min: x, max: x }),
            Some(m) => Some(MinMax {
                min: m.min.min(x),
                max: m.max.max(x),
            }),
        })
    }
}

impl NormStats {
    pub fn get(&self, v: Variable) -> Result<MinMax> {
        self.ranges
            .get(&v)
            .copied()
            .ok_or_else(|| Error::CheckpointMismatch(format!("no normalization range for {v}")))
    }
}

/// Aligned supervised samples over one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
    pub plan: SplitPlan,
    pub sampling_period: i64,
    pub variables: Vec<Variable>,
    pub target_variable: Variable,
    pub height: usize,
    pub width: usize,
    /// Grid cell table (canonical turbine id or −1), row-major.
    pub cells: Vec<i64>,
    /// Source-registry id of each canonical turbine. [`build_samples`] only
    /// sees the grid and leaves this empty for the caller to fill.
    pub original_ids: Vec<i64>,
    /// Set once the values have been normalized.
    pub norm: Option<NormStats>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn horizon_steps(&self) -> usize {
        self.plan.horizon
    }

    pub fn window(&self) -> usize {
        self.plan.window
    }

    pub fn channels(&self) -> usize {
        self.plan.window * self.variables.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(|&c| c != EMPTY).collect()
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        &self.samples[self.plan.range(split)]
    }

    /// Copy of the set with every value mapped back to physical units.
    pub fn denormalized(&self) -> SampleSet {
        let Some(norm) = &self.norm else {
            return self.clone();
        };
        let mut out = self.clone();
        out.norm = None;
        map_values(&mut out, norm, MinMax::unscale);
        out
    }
}

/// Builds one sample per window position; the series are expected to be
/// gap-free and to share a timestamp lattice.
pub fn build_samples(
    grid: &GridMap,
    series: &[TelemetrySeries],
    config: &SampleConfig,
) -> Result<SampleSet> {
    let find = |v: Variable| {
        series
            .iter()
            .find(|s| s.variable == v)
            .ok_or_else(|| Error::config(format!("no {v} series supplied")))
    };
    if config.variables.is_empty() {
        return Err(Error::config("at least one input variable is required"));
    }
    let inputs: Vec<&TelemetrySeries> = config
        .variables
        .iter()
        .map(|&v| find(v))
        .collect::<Result<_>>()?;
    let target = find(config.target)?;

    let reference = inputs[0];
    for s in inputs.iter().chain(std::iter::once(&target)) {
        if !s.same_lattice(reference) {
            return Err(Error::MisalignedSeries(format!(
                "{} and {} differ in start, period, length or turbine count",
                reference.variable, s.variable
            )));
        }
        if s.num_turbines() != grid.num_turbines() {
            return Err(Error::Length {
                left: s.num_turbines(),
                right: grid.num_turbines(),
            });
        }
        let gaps = s.gap_count();
        if gaps > 0 {
            return Err(Error::GapPresent(gaps));
        }
    }

    let plan = SplitPlan::new(reference.len(), config.window, config.horizon, config.split)?;

    // Scenes are shared by overlapping windows, so rasterize each step once.
    let rasterize = |s: &TelemetrySeries| -> Result<Vec<Scene>> {
        (0..s.len())
            .map(|step| build_scene(grid, &s.snapshot(step), s.timestamp(step), s.variable))
            .collect()
    };
    let input_scenes: Vec<Vec<Scene>> = inputs.iter().map(|s| rasterize(s)).collect::<Result<_>>()?;
    let target_scenes = match config.variables.iter().position(|&v| v == config.target) {
        Some(i) => input_scenes[i].clone(),
        None => rasterize(target)?,
    };

    let spec = channel_spec(config.window, &config.variables);
    let (h, w) = (grid.height(), grid.width());
    let samples: Vec<Sample> = (0..plan.count())
        .into_par_iter()
        .map(|k| {
            let base = plan.base_step(k);
            let mut data = Vec::with_capacity(spec.len() * h * w);
            for step in base + 1 - config.window..=base {
                for scenes in &input_scenes {
                    data.extend_from_slice(&scenes[step].values);
                }
            }
            Sample {
                input: StfTensor {
                    channels: spec.len(),
                    height: h,
                    width: w,
                    data,
                    channel_spec: spec.clone(),
                    base_time: reference.timestamp(base),
                },
                target: target_scenes[plan.target_step(k)].clone(),
                split: plan.split_of(k),
            }
        })
        .collect();

    Ok(SampleSet {
        samples,
        plan,
        sampling_period: reference.sampling_period,
        variables: config.variables.clone(),
        target_variable: config.target,
        height: h,
        width: w,
        cells: grid.cells().to_vec(),
        original_ids: Vec::new(),
        norm: None,
    })
}

/// Fits min-max ranges on the training split and maps every sample onto
/// them. Cells without a turbine stay 0.
pub fn normalize(set: &SampleSet) -> Result<(SampleSet, NormStats)> {
    if set.norm.is_some() {
        return Err(Error::config("sample set is already normalized"));
    }
    let train = set.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let mask = set.mask();
    let n = set.height * set.width;
    let mut vars = set.variables.clone();
    if !vars.contains(&set.target_variable) {
        vars.push(set.target_variable);
    }

    let mut stats = NormStats::default();
    for v in vars {
        let from_inputs = train.iter().flat_map(|s| {
            s.input
                .channel_spec
                .iter()
                .enumerate()
                .filter(move |(_, (cv, _))| *cv == v)
                .flat_map(move |(c, _)| s.input.data[c * n..(c + 1) * n].iter().copied())
                .zip(mask.iter().cycle())
                .filter(|(_, &m)| m)
                .map(|(x, _)| x)
        });
        let from_targets = train
            .iter()
            .filter(|s| s.target.variable == v)
            .flat_map(|s| s.target.values.iter().zip(&mask).filter(|(_, &m)| m).map(|(&x, _)| x));
        let range = MinMax::fit(from_inputs.chain(from_targets)).ok_or(Error::EmptyTrainSet)?;
        if !(range.max > range.min) {
            return Err(Error::DegenerateVariable(v));
        }
        stats.ranges.insert(v, range);
    }

    let mut out = set.clone();
    map_values(&mut out, &stats, MinMax::scale);
    out.norm = Some(stats.clone());
    Ok((out, stats))
}

fn map_values(set: &mut SampleSet, stats: &NormStats, f: fn(&MinMax, f64) -> f64) {
    let mask: Vec<bool> = set.mask();
    let n = set.height * set.width;
    for s in &mut set.samples {
        for (c, (v, _)) in s.input.channel_spec.iter().enumerate() {
            let r = stats.ranges[v];
            for (x, &m) in s.input.data[c * n..(c + 1) * n].iter_mut().zip(&mask) {
                if m {
                    *x = f(&r, *x);
                }
            }
        }
        let r = stats.ranges[&s.target.variable];
        for (x, &m) in s.target.values.iter_mut().zip(&mask) {
            if m {
                *x = f(&r, *x);
            }
        }
    }
}

const STF_MAGIC: &[u8; 4] = b"STF1";

/// Writes a raw (not normalized) sample set in the `STF1` container.
pub fn write_stf(path: impl AsRef<Path>, set: &SampleSet) -> Result<()> {
    let path = path.as_ref();
    if set.norm.is_some() {
        return Err(Error::Format(
            "STF1 stores physical values; write the set before normalizing".into(),
        ));
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(STF_MAGIC);
    let put_u32 = |buf: &mut Vec<u8>, v: usize| buf.extend_from_slice(&(v as u32).to_le_bytes());
    put_u32(&mut buf, set.channels());
    put_u32(&mut buf, set.height);
    put_u32(&mut buf, set.width);
    put_u32(&mut buf, set.len());
    put_u32(&mut buf, set.plan.horizon);
    put_u32(&mut buf, set.plan.window);
    put_u32(&mut buf, set.variables.len());
    for v in &set.variables {
        buf.extend_from_slice(&v.code().to_le_bytes());
    }
    buf.extend_from_slice(&set.target_variable.code().to_le_bytes());
    buf.extend_from_slice(&set.sampling_period.to_le_bytes());
    for &c in &set.cells {
        buf.extend_from_slice(&(c as i32).to_le_bytes());
    }
    put_u32(&mut buf, set.original_ids.len());
    for &id in &set.original_ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for s in &set.samples {
        buf.extend_from_slice(&s.input.base_time.to_le_bytes());
        buf.push(s.split.code());
        for &x in s.input.data.iter().chain(&s.target.values) {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads an `STF1` container written by [`write_stf`].
pub fn read_stf(path: impl AsRef<Path>) -> Result<SampleSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };

    if r.take(4)? != STF_MAGIC {
        return Err(Error::Format("missing STF1 magic".into()));
    }
    let channels = r.u32()? as usize;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let count = r.u32()? as usize;
    let horizon = r.u32()? as usize;
    let window = r.u32()? as usize;
    let nvars = r.u32()? as usize;
    let var = |code: u32| {
        Variable::from_code(code).ok_or_else(|| Error::Format(format!("unknown variable code {code}")))
    };
    let variables: Vec<Variable> = (0..nvars).map(|_| var(r.u32()?)).collect::<Result<_>>()?;
    let target_variable = var(r.u32()?)?;
    if channels != window * nvars || window == 0 || horizon == 0 {
        return Err(Error::Format(format!(
            "{channels} channels inconsistent with window {window} × {nvars} variables"
        )));
    }
    let sampling_period = r.i64()?;
    let cells: Vec<i64> = (0..height * width)
        .map(|_| r.i32().map(i64::from))
        .collect::<Result<_>>()?;
    let n_ids = r.u32()? as usize;
    let original_ids: Vec<i64> = (0..n_ids).map(|_| r.i64()).collect::<Result<_>>()?;

    let mask: Vec<bool> = cells.iter().map(|&c| c != EMPTY).collect();
    let spec = channel_spec(window, &variables);
    let n = height * width;
    let mut samples = Vec::with_capacity(count);
    let mut split_counts = [0usize; 3];
    for _ in 0..count {
        let base_time = r.i64()?;
        let split = Split::from_code(r.u8()?).ok_or_else(|| Error::Format("bad split tag".into()))?;
        split_counts[split.code() as usize] += 1;
        let data: Vec<f64> = (0..channels * n).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        let values: Vec<f64> = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<_>>()?;
        samples.push(Sample {
            input: StfTensor {
                channels,
                height,
                width,
                data,
                channel_spec: spec.clone(),
                base_time,
            },
            target: Scene {
                height,
                width,
                values,
                mask: mask.clone(),
                timestamp: base_time + horizon as i64 * sampling_period,
                variable: target_variable,
            },
            split,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let plan = SplitPlan::from_counts(
        count + window + horizon - 1,
        window,
        horizon,
        split_counts[0],
        split_counts[1],
    );
    if samples.iter().enumerate().any(|(k, s)| plan.split_of(k) != s.split) {
        return Err(Error::Format("splits are not contiguous train/val/test".into()));
    }
    Ok(SampleSet {
        samples,
        plan,
        sampling_period,
        variables,
        target_variable,
        height,
        width,
        cells,
        original_ids,
        norm: None,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format("truncated container".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    fn i64(&mut self) -> Result<i64> {
        self.array().map(i64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TurbineRegistry;

    fn grid3() -> GridMap {
        let reg = TurbineRegistry::from_rows([(0, 10.0, 20.0), (1, 10.5, 20.0), (2, 10.0, 20.7)])
            .unwrap();
        GridMap::embed(&reg).unwrap()
    }

    #[test]
    fn scene_from_snapshot() {
        let g = grid3();
        let s = build_scene(&g, &[Some(5.0), Some(3.0), Some(0.0)], 0, Variable::Power).unwrap();
        assert_eq!(s.values, vec![5.0, 0.0, 3.0, 0.0]);
        assert_eq!(s.mask, vec![true, true, true, false]);

        let zero = build_scene(&g, &[Some(0.0); 3], 0, Variable::Power).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
        assert_eq!(zero.mask, s.mask);

        let missing = build_scene(&g, &[Some(5.0), None, Some(0.0)], 0, Variable::Power);
        assert!(matches!(missing, Err(Error::IncompleteSnapshot(1))));
    }

    fn ramp_series(len: usize, variable: Variable, scale: f64) -> TelemetrySeries {
        let rows = (0..3)
            .map(|t| (0..len).map(|i| scale * (i as f64 + 10.0 * t as f64)).collect())
            .collect();
        TelemetrySeries::from_dense(variable, 1000, 600, rows).unwrap()
    }

    #[test]
    fn sample_counts() {
        let g = grid3();
        let cfg = SampleConfig::default();
        let short = [ramp_series(10, Variable::Power, 1.0)];
        assert!(matches!(
            build_samples(&g, &short, &cfg),
            Err(Error::InsufficientHistory { required: 11, available: 10 })
        ));
        let exact = [ramp_series(11, Variable::Power, 1.0)];
        let set = build_samples(&g, &exact, &cfg).unwrap();
        assert_eq!(set.len(), 1);
        let s = &set.samples[0];
        // Eight scenes, oldest at lag 7, cover 70 minutes; target is 30 minutes on.
        assert_eq!(s.input.channel_spec.first(), Some(&(Variable::Power, 7)));
        assert_eq!(s.input.base_time - 7 * 600, 1000);
        assert_eq!(s.target.timestamp - s.input.base_time, 30 * 60);
    }

    #[test]
    fn channels_time_major() {
        let g = grid3();
        let series = [ramp_series(12, Variable::Power, 1.0), ramp_series(12, Variable::Speed, 0.5)];
        let cfg = SampleConfig {
            window: 2,
            horizon: 1,
            variables: vec![Variable::Power, Variable::Speed],
            ..Default::default()
        };
        let set = build_samples(&g, &series, &cfg).unwrap();
        let s = &set.samples[0];
        assert_eq!(
            s.input.channel_spec,
            vec![
                (Variable::Power, 1),
                (Variable::Speed, 1),
                (Variable::Power, 0),
                (Variable::Speed, 0)
            ]
        );
        // turbine 1 sits at (1, 0): power at step 1 is 11, speed is 5.5
        assert_eq!(s.input.channel(2)[2], 11.0);
        assert_eq!(s.input.channel(3)[2], 5.5);
        assert_eq!(s.target.values[2], 12.0);
    }

    #[test]
    fn normalization_is_affine_and_unclamped() {
        let r = MinMax { min: 0.0, max: 16.0 };
        assert_eq!(r.scale(8.0), 0.5);
        assert_eq!(r.scale(20.0), 1.25);
        for x in [-3.0, 0.1, 7.77, 1e3] {
            assert!((r.unscale(r.scale(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_uses_train_split_only() {
        let g = grid3();
        let series = [ramp_series(40, Variable::Power, 1.0)];
        let set = build_samples(&g, &series, &SampleConfig::default()).unwrap();
        let (norm, stats) = normalize(&set).unwrap();
        let r = stats.ranges[&Variable::Power];
        let last_train = set.plan.train.end - 1;
        assert_eq!(r.min, 0.0);
        assert_eq!(r.max, 20.0 + set.plan.target_step(last_train) as f64);
        // test targets extend past the fitted range
        let tail = norm.split(Split::Test).last().unwrap();
        assert!(tail.target.values.iter().cloned().fold(f64::MIN, f64::max) > 1.0);
        assert_eq!(tail.target.values[3], 0.0);
        let back = norm.denormalized();
        for (a, b) in back.samples.iter().zip(&set.samples) {
            for (x, y) in a.input.data.iter().zip(&b.input.data) {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_variable_is_degenerate() {
        let g = grid3();
        let series = [TelemetrySeries::from_dense(Variable::Power, 0, 600, vec![vec![2.0; 20]; 3]).unwrap()];
        let set = build_samples(&g, &series, &SampleConfig::default()).unwrap();
        assert!(matches!(normalize(&set), Err(Error::DegenerateVariable(Variable::Power))));
    }

    #[test]
    fn split_plan_is_chronological() {
        let p = SplitPlan::new(600, 8, 3, SplitFractions::default()).unwrap();
        assert_eq!(p.count(), 590);
        assert_eq!((p.train.len(), p.val.len(), p.test.len()), (413, 59, 118));
        assert_eq!(p.split_of(412), Split::Train);
        assert_eq!(p.split_of(413), Split::Val);
        assert_eq!(p.split_of(472), Split::Test);
        assert_ne!(p.fingerprint(), SplitPlan::new(601, 8, 3, SplitFractions::default()).unwrap().fingerprint());
    }

    #[test]
    fn stf_round_trip() {
        let g = grid3();
        let series = [ramp_series(16, Variable::Power, 0.25), ramp_series(16, Variable::Speed, 0.5)];
        let cfg = SampleConfig {
            window: 3,
            horizon: 2,
            variables: vec![Variable::Speed, Variable::Power],
            ..Default::default()
        };
        let mut set = build_samples(&g, &series, &cfg).unwrap();
        set.original_ids = vec![4, 8, 15];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.stf");
        write_stf(&path, &set).unwrap();
        let back = read_stf(&path).unwrap();
        // every value above is exactly representable in f32
        assert_eq!(back, set);

        let (norm, _) = normalize(&set).unwrap();
        assert!(write_stf(&path, &norm).is_err());
    }
}
