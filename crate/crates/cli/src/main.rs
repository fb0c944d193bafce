use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use windgrid::baselines::{
    self, Aggregator, BaselineMethod, FeatureKind, FeatureSpec, Kernel, KnnConfig, Metric, SvrConfig,
};
use windgrid::eval::{self, MethodResult, ReportOptions};
use windgrid::experiment::{self, predictions_csv, turbine_series, RunConfig};
use windgrid::grid::GridMap;
use windgrid::ingest::{self, GapPolicy, TelemetrySeries, TurbineRegistry, Variable};
use windgrid::models::{self, Checkpoint, E2EConfig, FcCnnConfig, ModelSpec, TrainConfig};
use windgrid::nn::OptimizerConfig;
use windgrid::scene::{self, SampleConfig, Split, SplitFractions};
use windgrid::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "windgrid", version, about = "Grid-embedded spatio-temporal wind power forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic farm: registry.csv, power.csv, speed.csv, grid.json.
    Synth(SynthArgs),
    /// Embed a turbine registry into a grid.
    Embed(EmbedArgs),
    /// Build a scene sample set (.stf) from telemetry.
    Scenes(ScenesArgs),
    /// Train an E2E or FC-CNN model on a sample set.
    Train(TrainArgs),
    /// Forecast with one checkpoint, or the mean of several.
    Predict(PredictArgs),
    /// Fit and evaluate a per-turbine baseline.
    Baseline(BaselineArgs),
    /// Aggregate prediction files into the comparison report.
    Eval(EvalArgs),
    /// Run the full experiment described by a config file.
    RunAll(RunAllArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthetic farm description (JSON); defaults to the reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the per-turbine power gain jitter.
    #[arg(long)]
    gain_jitter: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    registry: PathBuf,
    #[arg(long)]
    power: Option<PathBuf>,
    #[arg(long)]
    speed: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    gap_policy: GapArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    ForwardFill,
    Linear,
    Fail,
}

impl From<GapArg> for GapPolicy {
    fn from(g: GapArg) -> Self {
        match g {
            GapArg::ForwardFill => GapPolicy::ForwardFill,
            GapArg::Linear => GapPolicy::Linear,
            GapArg::Fail => GapPolicy::Fail,
        }
    }
}

#[derive(Args)]
struct WindowArgs {
    #[arg(long, default_value_t = 8)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
}

impl WindowArgs {
    fn split(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            val: self.val_fraction,
        }
    }
}

#[derive(Args)]
struct ScenesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
    /// Input variables in channel order, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "power")]
    variables: Vec<Variable>,
    #[arg(long, default_value = "power")]
    target: Variable,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    E2e,
    FcCnn,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Architecture JSON (E2E or FC-CNN fields); defaults otherwise.
    #[arg(long)]
    model_config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss curve CSV.
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args)]
struct PredictArgs {
    /// Repeat to average several checkpoints.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Knn,
    Svr,
    Persistence,
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureArg {
    Sf,
    Lf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "sf")]
    feature: FeatureArg,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long, default_value_t = 8)]
    neighbors: usize,
    #[arg(long)]
    max_distance_km: Option<f64>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    weighted: bool,
    #[arg(long)]
    manhattan: bool,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Linear kernel instead of RBF.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `method=path` prediction files, in report order.
    #[arg(long = "predictions", required = true)]
    predictions: Vec<String>,
    /// Method whose improvement over every other is reported.
    #[arg(long)]
    candidate: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    bin_width: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunAllArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("WINDGRID_THREADS") {
        let n: usize = v.parse().with_context(|| format!("WINDGRID_THREADS={v}"))?;
        if n == 0 {
            bail!("WINDGRID_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(a),
        Command::Embed(a) => {
            let registry = ingest::load_registry(&a.registry)?;
            GridMap::embed(&registry)?.write_json(&a.out)?;
            Ok(())
        }
        Command::Scenes(a) => scenes_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::RunAll(a) => {
            let config = RunConfig::load(&a.config)?;
            let summary = experiment::run_all(&config)?;
            for r in &summary.results {
                let agg = r.aggregate()?;
                println!("{:<16} ave {:>10.4}  min {:>10.4}  max {:>10.4}", r.method, agg.ave, agg.min, agg.max);
            }
            println!("report written to {}", summary.output_dir.display());
            Ok(())
        }
    }
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| p.display().to_string())?;
            serde_json::from_str(&text).with_context(|| p.display().to_string())?
        }
        None => synth::reference_config(),
    };
    if let Some(j) = a.gain_jitter {
        config.gain_jitter = j;
    }
    if let Some(s) = a.seed {
        config.field.seed = s;
    }
    let sc = synth::synthesize(&config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    sc.registry.write_csv(a.out_dir.join("registry.csv"))?;
    ingest::write_series(a.out_dir.join("power.csv"), &sc.power, &sc.registry)?;
    ingest::write_series(a.out_dir.join("speed.csv"), &sc.speed, &sc.registry)?;
    sc.grid.write_json(a.out_dir.join("grid.json"))?;
    Ok(())
}

fn load(d: &DataArgs, needed: &[Variable]) -> Result<(TurbineRegistry, Vec<TelemetrySeries>)> {
    let registry = ingest::load_registry(&d.registry)?;
    let mut series = Vec::new();
    for &v in needed {
        let path = match v {
            Variable::Power => &d.power,
            Variable::Speed => &d.speed,
            Variable::Temperature => &d.temperature,
        }
        .as_ref()
        .with_context(|| format!("--{v} is required"))?;
        let raw = ingest::load_series(path, &registry, v)?;
        series.push(ingest::fill_gaps(&raw, d.gap_policy.into())?.0);
    }
    Ok((registry, series))
}

fn scenes_cmd(a: ScenesArgs) -> Result<()> {
    let mut needed = a.variables.clone();
    if !needed.contains(&a.target) {
        needed.push(a.target);
    }
    let (registry, series) = load(&a.data, &needed)?;
    let grid = GridMap::embed(&registry)?;
    let config = SampleConfig {
        window: a.window.window,
        horizon: a.window.horizon,
        variables: a.variables,
        target: a.target,
        split: a.window.split(),
    };
    let mut set = scene::build_samples(&grid, &series, &config)?;
    set.original_ids = registry.original_ids();
    scene::write_stf(&a.out, &set)?;
    println!("{} samples ({} channels, {}×{})", set.len(), set.channels(), set.height, set.width);
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let raw = scene::read_stf(&a.samples)?;
    let (normalized, _) = scene::normalize(&raw)?;
    let spec = match (a.model, &a.model_config) {
        (ModelArg::E2e, Some(p)) => ModelSpec::E2e(read_json(p)?),
        (ModelArg::E2e, None) => ModelSpec::E2e(E2EConfig::default()),
        (ModelArg::FcCnn, Some(p)) => ModelSpec::FcCnn(read_json(p)?),
        (ModelArg::FcCnn, None) => ModelSpec::FcCnn(FcCnnConfig::default()),
    };
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer: OptimizerConfig::adam(a.lr),
        seed: a.seed,
        patience: Some(a.patience),
        max_steps: a.max_steps,
        ..Default::default()
    };
    let outcome = models::train(spec, &normalized, &config)?;
    outcome.checkpoint.save(&a.out)?;
    if let Some(p) = &a.loss_out {
        let mut body = String::from("epoch,train,val\n");
        for e in &outcome.curve {
            body.push_str(&format!("{},{},{}\n", e.epoch, e.train, e.val));
        }
        std::fs::write(p, body).with_context(|| p.display().to_string())?;
    }
    let meta = &outcome.checkpoint.meta;
    println!(
        "{} epochs, {} steps, best epoch {:?}, val loss {:?}",
        meta.epochs, meta.steps, meta.best_epoch, meta.final_val_loss
    );
    Ok(())
}

fn select(plan_range: &scene::SplitPlan, split: SplitArg) -> std::ops::Range<usize> {
    match split {
        SplitArg::Train => plan_range.range(Split::Train),
        SplitArg::Val => plan_range.range(Split::Val),
        SplitArg::Test => plan_range.range(Split::Test),
        SplitArg::All => 0..plan_range.count(),
    }
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let set = scene::read_stf(&a.samples)?;
    let checkpoints = a
        .checkpoint
        .iter()
        .map(Checkpoint::load)
        .collect::<windgrid::Result<Vec<_>>>()?;
    let chosen = &set.samples[select(&set.plan, a.split)];
    let inputs: Vec<_> = chosen.iter().map(|s| s.input.clone()).collect();
    let scenes = if checkpoints.len() == 1 {
        models::predict(&checkpoints[0], &inputs)?
    } else {
        models::ensemble_predict(&checkpoints, &inputs)?
    };
    let n = set.cells.iter().filter(|&&c| c != windgrid::grid::EMPTY).count();
    // Sets written without registry ids fall back to canonical ids.
    let ids = if set.original_ids.is_empty() {
        (0..n as i64).collect()
    } else if set.original_ids.len() == n {
        set.original_ids.clone()
    } else {
        bail!("{}: {} turbine ids for {n} occupied cells", a.samples.display(), set.original_ids.len());
    };
    let preds = turbine_series(&scenes, &set.cells, n);
    let targets = turbine_series(&chosen.iter().map(|s| s.target.clone()).collect::<Vec<_>>(), &set.cells, n);
    let ts: Vec<i64> = scenes.iter().map(|s| s.timestamp).collect();
    std::fs::write(&a.out, predictions_csv(&ts, &ids, &preds, &targets))
        .with_context(|| a.out.display().to_string())?;
    Ok(())
}

fn baseline_cmd(a: BaselineArgs) -> Result<()> {
    let (registry, series) = load(&a.data, &[Variable::Power])?;
    let spec = FeatureSpec {
        kind: match a.feature {
            FeatureArg::Sf => FeatureKind::Sf,
            FeatureArg::Lf => FeatureKind::Lf,
        },
        window: a.window.window,
        neighbors: a.neighbors,
        max_distance_km: a.max_distance_km,
    };
    let features = baselines::build_features(&series[0], &registry, &spec, a.window.horizon, a.window.split())?;
    let method = match a.method {
        MethodArg::Knn => BaselineMethod::Knn(KnnConfig {
            k: a.k,
            metric: if a.manhattan { Metric::Manhattan } else { Metric::Euclidean },
            aggregator: if a.weighted { Aggregator::DistanceWeighted } else { Aggregator::Mean },
        }),
        MethodArg::Svr => BaselineMethod::Svr(SvrConfig {
            c: a.c,
            epsilon: a.epsilon,
            kernel: if a.linear { Kernel::Linear } else { Kernel::Rbf { gamma: a.gamma } },
            ..Default::default()
        }),
        MethodArg::Persistence => BaselineMethod::Persistence,
    };
    let (split, range) = match a.split {
        SplitArg::Train => (Split::Train, features.plan.range(Split::Train)),
        SplitArg::Val => (Split::Val, features.plan.range(Split::Val)),
        SplitArg::Test | SplitArg::All => (Split::Test, features.plan.range(Split::Test)),
    };
    let start = Instant::now();
    let out = baselines::run_baseline(&features, &method, split)?;
    log::info!("{} fitted in {:.2}s", method.name(), start.elapsed().as_secs_f64());
    let ts: Vec<i64> = range.map(|k| series[0].timestamp(features.plan.target_step(k))).collect();
    std::fs::write(&a.out, predictions_csv(&ts, &registry.original_ids(), &out.predictions, &out.targets))
        .with_context(|| a.out.display().to_string())?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut results = Vec::new();
    for spec in &a.predictions {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--predictions expects method=path, got `{spec}`"))?;
        let (ids, preds, targets) = experiment::read_predictions(path)?;
        results.push(MethodResult::from_series(name, &ids, &preds, &targets, 0.0)?);
    }
    let improvements = match &a.candidate {
        Some(c) => {
            let cand = results
                .iter()
                .find(|r| &r.method == c)
                .with_context(|| format!("candidate `{c}` is not among the predictions"))?;
            results
                .iter()
                .filter(|r| r.method != cand.method)
                .map(|r| eval::improvement(r, cand))
                .collect::<windgrid::Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    eval::report(&results, &improvements, &a.out, &ReportOptions { bin_width: a.bin_width })?;
    print!("{}", eval::render_table(&results, 2)?);
    Ok(())
}
