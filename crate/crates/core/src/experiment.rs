//! Declarative end-to-end experiment: every method on one shared split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, BaselineMethod, FeatureKind, FeatureSpec, KnnConfig, SvrConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Improvement, MethodResult, ReportOptions};
use crate::grid::{GridMap, EMPTY};
use crate::ingest::{self, GapPolicy, TelemetrySeries, TurbineRegistry, Variable};
use crate::models::{self, Checkpoint, E2EConfig, FcCnnConfig, ModelSpec, TrainConfig};
use crate::scene::{self, SampleConfig, SampleSet, Scene, Split};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// The fixed reference scenario.
    Reference {
        #[serde(default)]
        gain_jitter: Option<f64>,
    },
    Synthetic { config: SynthConfig },
    Files {
        registry: PathBuf,
        /// CSV per variable.
        series: BTreeMap<Variable, PathBuf>,
        #[serde(default)]
        gap_policy: GapPolicy,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub e2e: Option<E2EConfig>,
    pub fc_cnn: Option<FcCnnConfig>,
    /// Average of E2E and FC-CNN when both run.
    pub ensemble: bool,
    pub train: TrainConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        Self {
            e2e: Some(E2EConfig::default()),
            fc_cnn: Some(FcCnnConfig::default()),
            ensemble: true,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselinesConfig {
    pub features: Vec<FeatureKind>,
    pub lf_neighbors: usize,
    pub max_distance_km: Option<f64>,
    pub knn: Option<KnnConfig>,
    pub svr: Option<SvrConfig>,
    pub persistence: bool,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            features: vec![FeatureKind::Sf, FeatureKind::Lf],
            lf_neighbors: 8,
            max_distance_km: None,
            knn: Some(KnnConfig::default()),
            svr: Some(SvrConfig::default()),
            persistence: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSource,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub models: ModelsConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
    #[serde(default)]
    pub report: ReportOptions,
}

impl RunConfig {
    /// Parses a JSON config; relative paths are taken relative to the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(format!("{}: {}", e.path(), e.inner())))
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DataSource::Files { registry, series, .. } = &mut self.data {
            fix(registry);
            series.values_mut().for_each(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Files { registry, series, .. } = &self.data {
            let missing = std::iter::once(("data.registry".to_string(), registry))
                .chain(series.iter().map(|(v, p)| (format!("data.series.{v}"), p)))
                .find(|(_, p)| !p.exists());
            if let Some((field, p)) = missing {
                return Err(Error::config(format!("{field}: {} does not exist", p.display())));
            }
            for v in self.samples.variables.iter().chain([&self.samples.target]) {
                if !series.contains_key(v) {
                    return Err(Error::config(format!("data.series: no file for variable {v}")));
                }
            }
        }
        if let DataSource::Synthetic { config } = &self.data {
            config.field.validate().map_err(|e| Error::config(format!("data.config.field: {e}")))?;
            config.curve.validate().map_err(|e| Error::config(format!("data.config.curve: {e}")))?;
        }
        if self.samples.window == 0 || self.samples.horizon == 0 {
            return Err(Error::config("samples: window and horizon must be at least 1"));
        }
        if self.models.train.batch_size == 0 {
            return Err(Error::config("models.train.batch_size: must be positive"));
        }
        if self.baselines.knn.is_some_and(|k| k.k == 0) {
            return Err(Error::config("baselines.knn.k: must be positive"));
        }
        Ok(())
    }
}

/// Registry, grid and gap-free series of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub registry: TurbineRegistry,
    pub grid: GridMap,
    pub series: Vec<TelemetrySeries>,
}

impl Dataset {
    pub fn series(&self, v: Variable) -> Result<&TelemetrySeries> {
        self.series
            .iter()
            .find(|s| s.variable == v)
            .ok_or_else(|| Error::config(format!("no {v} series loaded")))
    }
}

pub fn load_data(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Reference { gain_jitter } => {
            let mut cfg = synth::reference_config();
            if let Some(j) = gain_jitter {
                cfg.gain_jitter = *j;
            }
            from_scenario(synth::synthesize(&cfg)?)
        }
        DataSource::Synthetic { config } => from_scenario(synth::synthesize(config)?),
        DataSource::Files {
            registry,
            series,
            gap_policy,
        } => {
            let reg = ingest::load_registry(registry)?;
            let grid = GridMap::embed(&reg)?;
            let mut loaded = Vec::new();
            for (&v, path) in series {
                let raw = ingest::load_series(path, &reg, v)?;
                let (filled, report) = ingest::fill_gaps(&raw, *gap_policy)?;
                if report.filled > 0 {
                    log::info!("{v}: filled {} readings on {} turbines", report.filled, report.turbines_touched);
                }
                loaded.push(filled);
            }
            Ok(Dataset {
                registry: reg,
                grid,
                series: loaded,
            })
        }
    }
}

fn from_scenario(s: synth::Scenario) -> Result<Dataset> {
    Ok(Dataset {
        registry: s.registry,
        grid: s.grid,
        series: vec![s.power, s.speed],
    })
}

/// `out[turbine][sample]` read from each scene's turbine cell.
pub fn turbine_series(scenes: &[Scene], cells: &[i64], turbines: usize) -> Vec<Vec<f64>> {
    let mut pos = vec![0; turbines];
    for (i, &c) in cells.iter().enumerate() {
        if c != EMPTY {
            pos[c as usize] = i;
        }
    }
    pos.iter().map(|&p| scenes.iter().map(|s| s.values[p]).collect()).collect()
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub results: Vec<MethodResult>,
    pub improvements: Vec<Improvement>,
    pub output_dir: PathBuf,
    pub plan_fingerprint: String,
}

impl RunSummary {
    pub fn result(&self, method: &str) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == method)
    }
}

struct Writer {
    dir: PathBuf,
}

impl Writer {
    fn write(&self, rel: &str, body: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

/// Prediction CSV shared by models and baselines:
/// `timestamp,turbine_id,prediction,target`, ordered by time then turbine.
pub fn predictions_csv(
    timestamps: &[i64],
    turbine_ids: &[i64],
    predictions: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> String {
    let mut out = String::from("timestamp,turbine_id,prediction,target\n");
    for (k, ts) in timestamps.iter().enumerate() {
        for (i, id) in turbine_ids.iter().enumerate() {
            writeln!(out, "{ts},{id},{},{}", predictions[i][k], targets[i][k]).expect("string write");
        }
    }
    out
}

/// Per-turbine prediction and target series from a prediction CSV, with
/// turbines in ascending id order.
pub fn read_predictions(path: impl AsRef<Path>) -> Result<(Vec<i64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header != ["timestamp", "turbine_id", "prediction", "target"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut by_turbine: BTreeMap<i64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| record.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        let id: i64 = field(1)?.parse().map_err(|e| bad(format!("turbine_id: {e}")))?;
        let p: f64 = field(2)?.parse().map_err(|e| bad(format!("prediction: {e}")))?;
        let t: f64 = field(3)?.parse().map_err(|e| bad(format!("target: {e}")))?;
        let entry = by_turbine.entry(id).or_default();
        entry.0.push(p);
        entry.1.push(t);
    }
    if by_turbine.is_empty() {
        return Err(Error::EmptySeries);
    }
    let ids = by_turbine.keys().copied().collect();
    let (preds, targets) = by_turbine.into_values().unzip();
    Ok((ids, preds, targets))
}

/// Runs every configured method and writes the report tree to
/// `config.output_dir`. Output is staged in a sibling `.partial` directory
/// that only replaces the destination once everything succeeded.
pub fn run_all(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dest = config.output_dir.clone();
    let mut staging = dest.clone().into_os_string();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    match run_into(config, &staging) {
        Ok(mut summary) => {
            if dest.exists() {
                std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            }
            std::fs::rename(&staging, &dest).map_err(|e| Error::io(&dest, e))?;
            summary.output_dir = dest;
            Ok(summary)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn run_into(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let out = Writer { dir: dir.to_path_buf() };
    let data = load_data(&config.data)?;
    let mut raw = scene::build_samples(&data.grid, &data.series, &config.samples)?;
    raw.original_ids = data.registry.original_ids();
    let (normalized, norm) = scene::normalize(&raw)?;
    let plan = raw.plan.clone();
    let fingerprint = plan.fingerprint();
    let ids = data.registry.original_ids();
    let n = data.registry.len();
    let test = raw.split(Split::Test);
    if test.is_empty() {
        return Err(Error::config("samples.split leaves no test samples"));
    }
    let timestamps: Vec<i64> = test.iter().map(|s| s.target.timestamp).collect();
    let targets = turbine_series(&test.iter().map(|s| s.target.clone()).collect::<Vec<_>>(), &raw.cells, n);
    let stf = if config.samples.variables.len() > 1 { "MSTF" } else { "STF" };

    out.write("grid.json", &(serde_json::to_string_pretty(&data.grid)? + "\n"))?;
    let mut run = serde_json::Map::new();
    run.insert("config".into(), serde_json::to_value(config)?);
    run.insert("plan".into(), serde_json::to_value(&plan)?);
    run.insert("plan_fingerprint".into(), fingerprint.clone().into());
    run.insert("norm".into(), serde_json::to_value(&norm)?);
    run.insert("turbines".into(), n.into());
    run.insert("grid".into(), serde_json::json!([data.grid.height(), data.grid.width()]));
    out.write("run.json", &(serde_json::to_string_pretty(&run)? + "\n"))?;

    let mut results = Vec::new();
    let mut stability = String::from("method,mean_prediction_variance\n");
    let mut record = |name: String, preds: Vec<Vec<f64>>, secs: f64, results: &mut Vec<MethodResult>| -> Result<()> {
        let file = format!("predictions/{}.csv", name.replace('+', "_"));
        out.write(&file, &predictions_csv(&timestamps, &ids, &preds, &targets))?;
        let var = preds.iter().map(|p| eval::series_variance(p)).sum::<f64>() / n as f64;
        writeln!(stability, "{name},{var}").expect("string write");
        results.push(MethodResult::from_series(name, &ids, &preds, &targets, secs)?);
        Ok(())
    };

    let target_series = data.series(config.samples.target)?;
    let truth_var = targets.iter().map(|t| eval::series_variance(t)).sum::<f64>() / n as f64;
    for &kind in &config.baselines.features {
        let spec = FeatureSpec {
            kind,
            window: config.samples.window,
            neighbors: config.baselines.lf_neighbors,
            max_distance_km: config.baselines.max_distance_km,
        };
        let methods: Vec<BaselineMethod> = [
            config.baselines.knn.map(BaselineMethod::Knn),
            config.baselines.svr.map(BaselineMethod::Svr),
        ]
        .into_iter()
        .flatten()
        .collect();
        if methods.is_empty() {
            continue;
        }
        let features = baselines::build_features(
            target_series,
            &data.registry,
            &spec,
            config.samples.horizon,
            config.samples.split,
        )?;
        if features.plan != plan {
            return Err(Error::MisalignedSeries("baseline split differs from the scene split".into()));
        }
        for m in methods {
            let start = Instant::now();
            let o = baselines::run_baseline(&features, &m, Split::Test)?;
            if o.targets != targets {
                return Err(Error::MisalignedSeries("baseline targets differ from scene targets".into()));
            }
            if o.unconverged > 0 {
                log::warn!("{kind}+{}: {} turbines did not converge", m.name(), o.unconverged);
            }
            record(format!("{kind}+{}", m.name()), o.predictions, start.elapsed().as_secs_f64(), &mut results)?;
        }
    }
    if config.baselines.persistence {
        let spec = FeatureSpec {
            kind: FeatureKind::Sf,
            window: config.samples.window,
            ..Default::default()
        };
        let features = baselines::build_features(
            target_series,
            &data.registry,
            &spec,
            config.samples.horizon,
            config.samples.split,
        )?;
        let o = baselines::run_baseline(&features, &BaselineMethod::Persistence, Split::Test)?;
        record("persistence".into(), o.predictions, 0.0, &mut results)?;
    }

    let inputs: Vec<_> = test.iter().map(|s| s.input.clone()).collect();
    let mut train_cfg = config.models.train.clone();
    train_cfg.seed = config.seed;
    let mut members: Vec<Checkpoint> = Vec::new();
    let specs = [
        config.models.e2e.map(ModelSpec::E2e),
        config.models.fc_cnn.map(ModelSpec::FcCnn),
    ];
    for spec in specs.into_iter().flatten() {
        let label = match spec {
            ModelSpec::E2e(_) => "E2E",
            ModelSpec::FcCnn(_) => "FC-CNN",
        };
        let start = Instant::now();
        let outcome = models::train(spec, &normalized, &train_cfg)?;
        let secs = start.elapsed().as_secs_f64();
        let ckpt_path = dir.join(format!("models/{}.ckpt", spec.name()));
        std::fs::create_dir_all(dir.join("models")).map_err(|e| Error::io(dir, e))?;
        outcome.checkpoint.save(&ckpt_path)?;
        let mut curve = String::from("epoch,train,val\n");
        for e in &outcome.curve {
            writeln!(curve, "{},{},{}", e.epoch, e.train, e.val).expect("string write");
        }
        out.write(&format!("models/{}_loss.csv", spec.name()), &curve)?;
        let scenes = models::predict(&outcome.checkpoint, &inputs)?;
        record(format!("{stf}+{label}"), turbine_series(&scenes, &raw.cells, n), secs, &mut results)?;
        members.push(outcome.checkpoint);
    }
    if config.models.ensemble && members.len() == 2 {
        let scenes = models::ensemble_predict(&members, &inputs)?;
        record(format!("{stf}-ensemble"), turbine_series(&scenes, &raw.cells, n), 0.0, &mut results)?;
    }
    writeln!(stability, "truth,{truth_var}").expect("string write");
    out.write("stability.csv", &stability)?;

    let candidate = results.iter().find(|r| r.method.ends_with("+FC-CNN")).cloned();
    let improvements = match &candidate {
        Some(c) => results
            .iter()
            .filter(|r| r.method != c.method)
            .map(|r| eval::improvement(r, c))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    eval::report(&results, &improvements, dir, &config.report)?;
    Ok(RunSummary {
        results,
        improvements,
        output_dir: dir.to_path_buf(),
        plan_fingerprint: fingerprint,
    })
}

/// Physical-unit sample set plus its normalized twin, ready for training.
pub fn prepare_samples(data: &Dataset, config: &SampleConfig) -> Result<(SampleSet, SampleSet)> {
    let mut raw = scene::build_samples(&data.grid, &data.series, config)?;
    raw.original_ids = data.registry.original_ids();
    let (normalized, _) = scene::normalize(&raw)?;
    Ok((raw, normalized))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_name_the_field() {
        let err = RunConfig::from_json(r#"{"seed": 1, "output_dir": "x", "data": {"kind": "reference"}, "samples": {"window": "eight"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("samples.window"), "{err}");
        let missing = RunConfig::from_json(r#"{"output_dir": "x", "data": {"kind": "reference"}}"#).unwrap_err();
        assert!(missing.to_string().contains("seed"), "{missing}");
    }

    #[test]
    fn readme_example_parses() {
        let readme = include_str!("../../../README.md");
        let start = readme.find("```json\n").unwrap() + 8;
        let end = start + readme[start..].find("```").unwrap();
        let cfg = RunConfig::from_json(&readme[start..end]).unwrap();
        assert_eq!(cfg.samples.variables, vec![Variable::Power, Variable::Speed]);
        assert_eq!(cfg.models.train, TrainConfig::default());
        assert_eq!(cfg.baselines, BaselinesConfig::default());
    }

    #[test]
    fn missing_files_fail_validation() {
        let cfg = RunConfig::from_json(
            r#"{"seed": 1, "output_dir": "x", "data": {"kind": "files", "registry": "/nonexistent/r.csv", "series": {}}}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("data.registry"), "{err}");
    }
}
