//! The two scene-to-scene networks, their training loop, checkpoints and
//! batch inference.
//!
//! Both networks share a densely connected encoder: each stage computes
//! `relu(conv3×3(x))`, concatenates it behind its own input and max-pools
//! the result, so every stage sees all earlier feature maps. E2E decodes
//! with stride-2 transposed convolutions back to the input size; FC-CNN
//! flattens the encoder output into two dense layers whose output vector
//! has one entry per grid cell.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::EMPTY;
use crate::ingest::Variable;
use crate::nn::{
    concat_channels, crop, masked_mse, split_channels, uncrop, Conv2d, ConvTranspose2d, Dense,
    GradCheckable, Layer, MaxPool2, Optimizer, OptimizerConfig, Param, Relu, Tensor,
};
use crate::scene::{NormStats, SampleSet, Scene, Split, StfTensor};

const MAGIC: &[u8; 7] = b"WGCKPT1";
const INFERENCE_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct E2EConfig {
    /// Encoder stages; the decoder mirrors them.
    pub depth: usize,
    /// Feature maps added by the first stage; doubles per stage.
    pub base_channels: usize,
}

impl Default for E2EConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcCnnConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub hidden: usize,
}

impl Default for FcCnnConfig {
    fn default() -> Self {
        Self {
            stages: 4,
            base_channels: 16,
            hidden: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelSpec {
    E2e(E2EConfig),
    FcCnn(FcCnnConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::E2e(_) => "e2e",
            ModelSpec::FcCnn(_) => "fc_cnn",
        }
    }
}

/// `pool(concat(x, relu(conv3×3(x))))`.
#[derive(Debug, Clone)]
struct DenseStage {
    conv: Conv2d,
    relu: Relu,
    pool: MaxPool2,
    in_channels: usize,
}

impl DenseStage {
    fn new(in_channels: usize, growth: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(in_channels, growth, 3, 1, 1, rng),
            relu: Relu::new(),
            pool: MaxPool2::new(),
            in_channels,
        }
    }
}

impl Layer for DenseStage {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let y = self.relu.forward(&self.conv.forward(input)?)?;
        self.pool.forward(&concat_channels(input, &y)?)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let dz = self.pool.backward(grad_output)?;
        let (mut dx, dy) = split_channels(&dz, self.in_channels)?;
        let dc = self.relu.backward(&dy)?;
        dx.add_assign(&self.conv.backward(&dc)?)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.params_mut()
    }
}

/// Stride-2 transposed convolution cropped to the matching encoder size.
#[derive(Debug, Clone)]
struct UpStage {
    tconv: ConvTranspose2d,
    relu: Option<Relu>,
    raw: (usize, usize),
    target: (usize, usize),
}

impl Layer for UpStage {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let up = self.tconv.forward(input)?;
        let [_, _, h, w] = up.shape();
        self.raw = (h, w);
        let y = crop(&up, self.target.0, self.target.1)?;
        match &mut self.relu {
            Some(r) => r.forward(&y),
            None => Ok(y),
        }
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let g = match &mut self.relu {
            Some(r) => r.backward(grad_output)?,
            None => grad_output.clone(),
        };
        self.tconv.backward(&uncrop(&g, self.raw.0, self.raw.1)?)
    }

    fn params(&self) -> Vec<&Param> {
        self.tconv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.tconv.params_mut()
    }
}

#[derive(Debug, Clone)]
enum Head {
    Decoder(Vec<UpStage>),
    Dense {
        flat: [usize; 4],
        hidden: Dense,
        relu: Relu,
        out: Dense,
    },
}

/// A built E2E or FC-CNN network for a fixed `(C, H, W)` input.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    input_shape: [usize; 3],
    encoder: Vec<DenseStage>,
    head: Head,
}

impl Network {
    /// Builds the network with He-uniform weights and zero biases drawn from
    /// `seed`.
    pub fn build(spec: ModelSpec, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let [c, h, w] = input_shape;
        let (stages, base) = match spec {
            ModelSpec::E2e(e) => (e.depth, e.base_channels),
            ModelSpec::FcCnn(f) => (f.stages, f.base_channels),
        };
        if stages == 0 || base == 0 || c == 0 {
            return Err(Error::shape("stages, channels and base width must be positive"));
        }
        if let ModelSpec::FcCnn(f) = spec {
            if f.hidden == 0 {
                return Err(Error::shape("hidden width must be positive"));
            }
        }
        let min = 1usize.checked_shl(stages as u32).filter(|&m| m > 0).unwrap_or(usize::MAX);
        if h < min || w < min {
            return Err(Error::shape(format!(
                "{h}×{w} grid is too small for {stages} pooling stages (needs ≥ {min} per side)"
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![(h, w)];
        let mut channels = c;
        let mut encoder = Vec::with_capacity(stages);
        for i in 0..stages {
            let growth = base << i;
            encoder.push(DenseStage::new(channels, growth, &mut rng));
            channels += growth;
            let (sh, sw) = sizes[i];
            sizes.push((MaxPool2::output_size(sh), MaxPool2::output_size(sw)));
        }

        let head = match spec {
            ModelSpec::E2e(_) => {
                let mut stages_up = Vec::with_capacity(stages);
                let mut cin = channels;
                for j in 0..stages {
                    let last = j + 1 == stages;
                    let cout = if last { 1 } else { base << (stages - 2 - j) };
                    stages_up.push(UpStage {
                        tconv: ConvTranspose2d::new(cin, cout, 2, 2, 0, &mut rng),
                        relu: (!last).then(Relu::new),
                        raw: (0, 0),
                        target: sizes[stages - 1 - j],
                    });
                    cin = cout;
                }
                Head::Decoder(stages_up)
            }
            ModelSpec::FcCnn(f) => {
                let (sh, sw) = sizes[stages];
                let features = channels * sh * sw;
                Head::Dense {
                    flat: [0, channels, sh, sw],
                    hidden: Dense::new(features, f.hidden, &mut rng),
                    relu: Relu::new(),
                    out: Dense::new(f.hidden, h * w, &mut rng),
                }
            }
        };
        Ok(Self {
            spec,
            input_shape,
            encoder,
            head,
        })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Parameter tensors in a fixed order.
    pub fn export(&self) -> Vec<Tensor> {
        self.params().into_iter().map(|p| p.value.clone()).collect()
    }

    pub fn load(&mut self, values: &[Tensor]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} parameter tensors for a network with {}",
                values.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name,
                    v.shape(),
                    p.value.shape()
                )));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

impl Layer for Network {
    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = input.shape();
        if [c, h, w] != self.input_shape {
            return Err(Error::shape(format!(
                "network expects {:?} inputs, got {:?}",
                self.input_shape,
                [c, h, w]
            )));
        }
        let mut x = input.clone();
        for stage in &mut self.encoder {
            x = stage.forward(&x)?;
        }
        match &mut self.head {
            Head::Decoder(up) => {
                for stage in up {
                    x = stage.forward(&x)?;
                }
                Ok(x)
            }
            Head::Dense {
                flat,
                hidden,
                relu,
                out,
            } => {
                flat[0] = n;
                let z = relu.forward(&hidden.forward(&x)?)?;
                out.forward(&z)?.reshape([n, 1, h, w])
            }
        }
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = match &mut self.head {
            Head::Decoder(up) => {
                let mut g = grad_output.clone();
                for stage in up.iter_mut().rev() {
                    g = stage.backward(&g)?;
                }
                g
            }
            Head::Dense {
                flat,
                hidden,
                relu,
                out,
            } => {
                let n = grad_output.batch();
                let g = out.backward(&grad_output.clone().reshape([n, out.outputs(), 1, 1])?)?;
                hidden.backward(&relu.backward(&g)?)?.reshape(*flat)?
            }
        };
        for stage in self.encoder.iter_mut().rev() {
            g = stage.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.encoder.iter().flat_map(|s| s.params()).collect();
        match &self.head {
            Head::Decoder(up) => out.extend(up.iter().flat_map(|s| s.params())),
            Head::Dense { hidden, out: o, .. } => {
                out.extend(hidden.params());
                out.extend(o.params());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.encoder.iter_mut().flat_map(|s| s.params_mut()).collect();
        match &mut self.head {
            Head::Decoder(up) => out.extend(up.iter_mut().flat_map(|s| s.params_mut())),
            Head::Dense { hidden, out: o, .. } => {
                out.extend(hidden.params_mut());
                out.extend(o.params_mut());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMeta {
    /// Epochs actually run.
    pub epochs: usize,
    pub steps: usize,
    pub seed: u64,
    /// Epoch whose parameters the checkpoint holds; `None` for the
    /// initialization.
    pub best_epoch: Option<usize>,
    pub final_val_loss: Option<f64>,
    /// Fingerprint of the split plan the model was trained on.
    pub plan: String,
}

/// Everything needed to rebuild a trained network and map its outputs back
/// to physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub input_shape: [usize; 3],
    pub variables: Vec<Variable>,
    pub window: usize,
    pub horizon: usize,
    pub target: Variable,
    pub sampling_period: i64,
    pub cells: Vec<i64>,
    pub original_ids: Vec<i64>,
    pub norm: NormStats,
    pub meta: TrainMeta,
    pub params: Vec<Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    input_shape: [usize; 3],
    variables: Vec<Variable>,
    window: usize,
    horizon: usize,
    target: Variable,
    sampling_period: i64,
    cells: Vec<i64>,
    original_ids: Vec<i64>,
    norm: NormStats,
    meta: TrainMeta,
    param_shapes: Vec<[usize; 4]>,
}

impl Checkpoint {
    pub fn network(&self) -> Result<Network> {
        let mut net = Network::build(self.spec, self.input_shape, self.meta.seed)?;
        net.load(&self.params)?;
        Ok(net)
    }

    pub fn mask(&self) -> Vec<bool> {
        self.cells.iter().map(|&c| c != EMPTY).collect()
    }

    /// Magic, little-endian u64 header length, JSON header, then every
    /// parameter as little-endian f64 in header order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = Header {
            spec: self.spec,
            input_shape: self.input_shape,
            variables: self.variables.clone(),
            window: self.window,
            horizon: self.horizon,
            target: self.target,
            sampling_period: self.sampling_period,
            cells: self.cells.clone(),
            original_ids: self.original_ids.clone(),
            norm: self.norm.clone(),
            meta: self.meta.clone(),
            param_shapes: self.params.iter().map(Tensor::shape).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::with_capacity(json.len() + 15 + 8 * self.params.iter().map(Tensor::len).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for p in &self.params {
            for v in p.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 15 || &bytes[..7] != MAGIC {
            return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
        }
        let len = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(15..15usize.saturating_add(len))
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let mut rest = &bytes[15 + len..];
        let mut params = Vec::with_capacity(header.param_shapes.len());
        for shape in &header.param_shapes {
            let n: usize = shape.iter().product();
            if rest.len() < 8 * n {
                return Err(Error::Format("truncated checkpoint parameters".into()));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            let data = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::from_vec(*shape, data)?);
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", rest.len())));
        }
        Ok(Self {
            spec: header.spec,
            input_shape: header.input_shape,
            variables: header.variables,
            window: header.window,
            horizon: header.horizon,
            target: header.target,
            sampling_period: header.sampling_period,
            cells: header.cells,
            original_ids: header.original_ids,
            norm: header.norm,
            meta: header.meta,
            params,
        })
    }
}

/// Which parameters the returned checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keep {
    #[default]
    BestVal,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Stop once this many optimizer steps have run.
    pub max_steps: Option<usize>,
    pub keep: Keep,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            patience: Some(20),
            max_steps: None,
            keep: Keep::BestVal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean masked MSE over the epoch's training batches.
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochLoss>,
}

/// Stacks sample inputs into `[n, C, H, W]` and targets into `n·H·W` values.
fn batch<'a>(samples: impl IntoIterator<Item = (&'a StfTensor, &'a Scene)>) -> Result<(Tensor, Vec<f64>)> {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut shape = None;
    let mut n = 0;
    for (x, t) in samples {
        let s = [x.channels, x.height, x.width];
        if *shape.get_or_insert(s) != s {
            return Err(Error::shape("samples of one batch differ in shape"));
        }
        inputs.extend_from_slice(&x.data);
        targets.extend_from_slice(&t.values);
        n += 1;
    }
    let [c, h, w] = shape.ok_or_else(|| Error::shape("empty batch"))?;
    Ok((Tensor::from_vec([n, c, h, w], inputs)?, targets))
}

fn split_loss(net: &mut Network, set: &SampleSet, split: Split, mask: &[bool]) -> Result<f64> {
    let samples = set.split(split);
    let mut total = 0.0;
    for chunk in samples.chunks(INFERENCE_BATCH) {
        let (x, t) = batch(chunk.iter().map(|s| (&s.input, &s.target)))?;
        let (loss, _) = masked_mse(&net.forward(&x)?, &t, mask)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains a fresh network on the train split of a normalized sample set,
/// tracking validation loss after every epoch.
pub fn train(spec: ModelSpec, set: &SampleSet, config: &TrainConfig) -> Result<TrainOutcome> {
    let norm = set
        .norm
        .clone()
        .ok_or_else(|| Error::config("training expects a normalized sample set"))?;
    if set.split(Split::Train).is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if set.split(Split::Val).is_empty() {
        return Err(Error::config("training needs a non-empty validation split"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let input_shape = [set.channels(), set.height, set.width];
    let mask = set.mask();
    let mut net = Network::build(spec, input_shape, config.seed)?;
    let mut opt = Optimizer::new(config.optimizer);
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);

    let train_samples = set.split(Split::Train);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut curve = Vec::new();
    let mut best = (f64::INFINITY, None, net.export());
    let mut steps = 0;
    let mut stale = 0;

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut seen = 0;
        for idx in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let (x, t) = batch(idx.iter().map(|&i| (&train_samples[i].input, &train_samples[i].target)))?;
            net.zero_grad();
            let pred = net.forward(&x)?;
            let (loss, grad) = masked_mse(&pred, &t, &mask)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    last_finite_epoch: curve.last().map(|e: &EpochLoss| e.epoch),
                });
            }
            net.backward(&grad)?;
            opt.step(&mut net.params_mut())?;
            steps += 1;
            sum += loss * idx.len() as f64;
            seen += idx.len();
        }
        if seen == 0 {
            break;
        }
        let val = split_loss(&mut net, set, Split::Val, &mask)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                last_finite_epoch: curve.last().map(|e: &EpochLoss| e.epoch),
            });
        }
        curve.push(EpochLoss {
            epoch,
            train: sum / seen as f64,
            val,
        });
        log::debug!("{} epoch {epoch}: train {:.6} val {val:.6}", spec.name(), sum / seen as f64);
        if val < best.0 {
            best = (val, Some(epoch), net.export());
            stale = 0;
        } else {
            stale += 1;
        }
        if config.patience.is_some_and(|p| stale >= p) || config.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }

    let (best_epoch, params) = match config.keep {
        Keep::BestVal => (best.1, best.2),
        Keep::Last => (curve.last().map(|e| e.epoch), net.export()),
    };
    let final_val_loss = match config.keep {
        Keep::BestVal => best.1.map(|_| best.0),
        Keep::Last => curve.last().map(|e| e.val),
    };
    let checkpoint = Checkpoint {
        spec,
        input_shape,
        variables: set.variables.clone(),
        window: set.window(),
        horizon: set.horizon_steps(),
        target: set.target_variable,
        sampling_period: set.sampling_period,
        cells: set.cells.clone(),
        original_ids: set.original_ids.clone(),
        norm,
        meta: TrainMeta {
            epochs: curve.len(),
            steps,
            seed: config.seed,
            best_epoch,
            final_val_loss,
            plan: set.plan.fingerprint(),
        },
        params,
    };
    Ok(TrainOutcome { checkpoint, curve })
}

fn check_inputs(ckpt: &Checkpoint, inputs: &[StfTensor]) -> Result<()> {
    let [c, h, w] = ckpt.input_shape;
    let expected = crate::scene::channel_spec(ckpt.window, &ckpt.variables);
    for (i, x) in inputs.iter().enumerate() {
        if [x.channels, x.height, x.width] != [c, h, w] {
            return Err(Error::CheckpointMismatch(format!(
                "input {i} is {}×{}×{}, checkpoint expects {c}×{h}×{w}",
                x.channels, x.height, x.width
            )));
        }
        if x.channel_spec != expected {
            return Err(Error::CheckpointMismatch(format!(
                "input {i} channel layout differs from the checkpoint's"
            )));
        }
    }
    Ok(())
}

/// Normalized network output for raw inputs, `n·H·W` values.
fn forward_normalized(ckpt: &Checkpoint, inputs: &[StfTensor]) -> Result<Vec<f64>> {
    check_inputs(ckpt, inputs)?;
    let scales: Vec<_> = ckpt
        .variables
        .iter()
        .map(|&v| ckpt.norm.get(v))
        .collect::<Result<_>>()?;
    let net = ckpt.network()?;
    let [c, h, w] = ckpt.input_shape;
    let plane = h * w;
    let chunks: Vec<Result<Vec<f64>>> = inputs
        .par_chunks(INFERENCE_BATCH)
        .map(|chunk| {
            let mut net = net.clone();
            let mut data = Vec::with_capacity(chunk.len() * c * plane);
            for x in chunk {
                for (ch, values) in x.data.chunks(plane).enumerate() {
                    let m = scales[ch % scales.len()];
                    data.extend(values.iter().map(|&v| m.scale(v)));
                }
            }
            Ok(net.forward(&Tensor::from_vec([chunk.len(), c, h, w], data)?)?.into_vec())
        })
        .collect();
    let mut out = Vec::with_capacity(inputs.len() * plane);
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

fn to_scenes(ckpt: &Checkpoint, inputs: &[StfTensor], values: Vec<f64>) -> Result<Vec<Scene>> {
    let [_, h, w] = ckpt.input_shape;
    let target = ckpt.norm.get(ckpt.target)?;
    let mask = ckpt.mask();
    let step = ckpt.horizon as i64 * ckpt.sampling_period;
    Ok(values
        .chunks(h * w)
        .zip(inputs)
        .map(|(plane, x)| Scene {
            height: h,
            width: w,
            values: plane
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { target.unscale(v) } else { 0.0 })
                .collect(),
            mask: mask.clone(),
            timestamp: x.base_time + step,
            variable: ckpt.target,
        })
        .collect())
}

/// Forecast scenes, in physical units, for raw (unnormalized) inputs. Cells
/// without a turbine are 0 and mask-false.
pub fn predict(ckpt: &Checkpoint, inputs: &[StfTensor]) -> Result<Vec<Scene>> {
    let values = forward_normalized(ckpt, inputs)?;
    to_scenes(ckpt, inputs, values)
}

/// Cell-wise mean of the members' physical-unit forecasts.
pub fn ensemble_predict(members: &[Checkpoint], inputs: &[StfTensor]) -> Result<Vec<Scene>> {
    let first = members
        .first()
        .ok_or_else(|| Error::CheckpointMismatch("an ensemble needs at least one member".into()))?;
    for m in &members[1..] {
        if m.input_shape != first.input_shape
            || m.cells != first.cells
            || m.target != first.target
            || m.horizon != first.horizon
            || m.norm.get(m.target)? != first.norm.get(first.target)?
        {
            return Err(Error::CheckpointMismatch(
                "ensemble members disagree on grid, target or normalization".into(),
            ));
        }
    }
    let mut sum: Option<Vec<Scene>> = None;
    for m in members {
        let scenes = predict(m, inputs)?;
        match &mut sum {
            None => sum = Some(scenes),
            Some(acc) => {
                for (a, s) in acc.iter_mut().zip(&scenes) {
                    for (x, y) in a.values.iter_mut().zip(&s.values) {
                        *x += y;
                    }
                }
            }
        }
    }
    let k = members.len() as f64;
    let mut scenes = sum.expect("at least one member");
    for s in &mut scenes {
        s.values.iter_mut().for_each(|v| *v /= k);
    }
    Ok(scenes)
}

/// Whole-network gradient check target: masked MSE of a fixed batch, over
/// every parameter entry.
pub struct NetworkProbe {
    pub net: Network,
    input: Tensor,
    target: Vec<f64>,
    mask: Vec<bool>,
    offsets: Vec<usize>,
}

impl NetworkProbe {
    pub fn new(net: Network, input: Tensor, target: Vec<f64>, mask: Vec<bool>) -> Self {
        let mut offsets = vec![0];
        for p in net.params() {
            offsets.push(offsets.last().unwrap() + p.value.len());
        }
        Self {
            net,
            input,
            target,
            mask,
            offsets,
        }
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let k = self.offsets.partition_point(|&o| o <= i) - 1;
        (k, i - self.offsets[k])
    }
}

impl GradCheckable for NetworkProbe {
    fn num_coords(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn coord(&self, i: usize) -> f64 {
        let (k, j) = self.locate(i);
        self.net.params()[k].value.data()[j]
    }

    fn set_coord(&mut self, i: usize, value: f64) {
        let (k, j) = self.locate(i);
        self.net.params_mut()[k].value.data_mut()[j] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let pred = self.net.forward(&self.input)?;
        Ok(masked_mse(&pred, &self.target, &self.mask)?.0)
    }

    fn loss_and_grad(&mut self) -> Result<(f64, Vec<f64>)> {
        self.net.zero_grad();
        let pred = self.net.forward(&self.input)?;
        let (loss, grad) = masked_mse(&pred, &self.target, &self.mask)?;
        self.net.backward(&grad)?;
        let g = self.net.params().iter().flat_map(|p| p.grad.data().to_vec()).collect();
        Ok((loss, g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::Rng;

    fn random(seed: u64, shape: [usize; 4]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
    }

    fn e2e(depth: usize, base: usize) -> ModelSpec {
        ModelSpec::E2e(E2EConfig {
            depth,
            base_channels: base,
        })
    }

    #[test]
    fn output_shapes() {
        for spec in [ModelSpec::E2e(E2EConfig::default()), ModelSpec::FcCnn(FcCnnConfig::default())] {
            let mut net = Network::build(spec, [8, 16, 16], 1).unwrap();
            let y = net.forward(&random(0, [1, 8, 16, 16])).unwrap();
            assert_eq!(y.shape(), [1, 1, 16, 16], "{spec:?}");
        }
        for (h, w) in [(6, 6), (7, 5), (9, 13)] {
            let mut net = Network::build(e2e(2, 3), [2, h, w], 1).unwrap();
            assert_eq!(net.forward(&random(0, [3, 2, h, w])).unwrap().shape(), [3, 1, h, w]);
        }
    }

    #[test]
    fn e2e_parameter_count() {
        // conv 8→4 (3×3): 8·4·9 + 4; transposed conv 12→1 (2×2): 12·1·4 + 1.
        let net = Network::build(e2e(1, 4), [8, 6, 6], 0).unwrap();
        assert_eq!(net.num_params(), 8 * 4 * 9 + 4 + 12 * 4 + 1);
        assert_eq!(net.num_params(), 341);
    }

    #[test]
    fn fc_cnn_parameter_count() {
        let spec = ModelSpec::FcCnn(FcCnnConfig {
            stages: 1,
            base_channels: 2,
            hidden: 5,
        });
        let net = Network::build(spec, [3, 4, 4], 0).unwrap();
        // conv 3→2; dense (5 channels · 2·2) → 5; dense 5 → 16
        assert_eq!(net.num_params(), 3 * 2 * 9 + 2 + 20 * 5 + 5 + 5 * 16 + 16);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        for spec in [e2e(2, 4), ModelSpec::FcCnn(FcCnnConfig { stages: 2, base_channels: 4, hidden: 8 })] {
            let mut net = Network::build(spec, [4, 8, 8], 3).unwrap();
            let y = net.forward(&Tensor::zeros([2, 4, 8, 8])).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn degenerate_bottleneck_builds() {
        let spec = ModelSpec::FcCnn(FcCnnConfig {
            stages: 2,
            base_channels: 2,
            hidden: 1,
        });
        let mut net = Network::build(spec, [2, 6, 6], 0).unwrap();
        assert_eq!(net.forward(&random(1, [1, 2, 6, 6])).unwrap().shape(), [1, 1, 6, 6]);
    }

    #[test]
    fn too_small_grid_is_rejected() {
        assert!(matches!(Network::build(e2e(3, 4), [1, 7, 16], 0), Err(Error::Shape(_))));
        assert!(Network::build(e2e(3, 4), [1, 8, 8], 0).is_ok());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Network::build(e2e(2, 4), [3, 8, 8], 9).unwrap().export();
        let b = Network::build(e2e(2, 4), [3, 8, 8], 9).unwrap().export();
        let c = Network::build(e2e(2, 4), [3, 8, 8], 10).unwrap().export();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn probe(spec: ModelSpec) -> NetworkProbe {
        let net = Network::build(spec, [3, 6, 6], 4).unwrap();
        let input = random(5, [2, 3, 6, 6]);
        let target = random(6, [2, 1, 6, 6]).into_vec();
        let mask = (0..36).map(|i| i % 5 != 2).collect();
        NetworkProbe::new(net, input, target, mask)
    }

    #[test]
    fn whole_model_gradients() {
        let cfg = GradCheckConfig {
            tolerance: 1e-4,
            ..Default::default()
        };
        for spec in [e2e(1, 4), ModelSpec::FcCnn(FcCnnConfig { stages: 1, base_channels: 4, hidden: 16 })] {
            let mut p = probe(spec);
            let r = grad_check(&mut p, &cfg).unwrap();
            assert!(r.passed, "{spec:?}: {r:?}");
            assert_eq!(r.checked, p.num_coords().min(200));
        }
    }

    fn fixture() -> (SampleSet, SampleSet) {
        use crate::scene::{build_samples, normalize, SampleConfig};
        let mut cfg = crate::synth::reference_config();
        cfg.field.height = 8;
        cfg.field.width = 8;
        cfg.field.steps = 60;
        let sc = crate::synth::synthesize(&cfg).unwrap();
        let sample_cfg = SampleConfig {
            window: 4,
            horizon: 1,
            ..Default::default()
        };
        let raw = build_samples(&sc.grid, &[sc.power.clone()], &sample_cfg).unwrap();
        let (norm, _) = normalize(&raw).unwrap();
        (raw, norm)
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (_, set) = fixture();
        let out = train(e2e(1, 4), &set, &small_cfg(0)).unwrap();
        assert!(out.curve.is_empty());
        let init = Network::build(e2e(1, 4), [4, 8, 8], 3).unwrap().export();
        assert_eq!(out.checkpoint.params, init);
        assert_eq!(out.checkpoint.meta.best_epoch, None);
    }

    #[test]
    fn training_is_reproducible_and_learns() {
        let (_, set) = fixture();
        let spec = ModelSpec::FcCnn(FcCnnConfig {
            stages: 2,
            base_channels: 4,
            hidden: 32,
        });
        let a = train(spec, &set, &small_cfg(15)).unwrap();
        let b = train(spec, &set, &small_cfg(15)).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.curve.last().unwrap().train < a.curve[0].train);
    }

    #[test]
    fn unnormalized_set_is_rejected() {
        let (raw, _) = fixture();
        assert!(matches!(train(e2e(1, 4), &raw, &small_cfg(1)), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let (raw, set) = fixture();
        let out = train(e2e(2, 4), &set, &small_cfg(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, out.checkpoint);
        let inputs: Vec<_> = raw.samples.iter().map(|s| s.input.clone()).collect();
        let p = predict(&out.checkpoint, &inputs).unwrap();
        let q = predict(&back, &inputs).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.len(), inputs.len());
        for (scene, s) in p.iter().zip(&raw.samples) {
            assert_eq!(scene.timestamp, s.target.timestamp);
        }
    }

    #[test]
    fn predict_rejects_wrong_shape() {
        let (raw, set) = fixture();
        let out = train(e2e(1, 4), &set, &small_cfg(0)).unwrap();
        let mut x = raw.samples[0].input.clone();
        x.width = 4;
        x.height = 16;
        assert!(matches!(predict(&out.checkpoint, &[x]), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn ensemble_is_the_mean() {
        let (raw, set) = fixture();
        let a = train(e2e(1, 4), &set, &small_cfg(2)).unwrap().checkpoint;
        let b = train(
            ModelSpec::FcCnn(FcCnnConfig {
                stages: 1,
                base_channels: 2,
                hidden: 8,
            }),
            &set,
            &small_cfg(2),
        )
        .unwrap()
        .checkpoint;
        let inputs: Vec<_> = raw.samples[..5].iter().map(|s| s.input.clone()).collect();
        let same = ensemble_predict(&[a.clone(), a.clone()], &inputs).unwrap();
        assert_eq!(same, predict(&a, &inputs).unwrap());
        let (p, q) = (predict(&a, &inputs).unwrap(), predict(&b, &inputs).unwrap());
        let e = ensemble_predict(&[a, b], &inputs).unwrap();
        for ((e, p), q) in e.iter().zip(&p).zip(&q) {
            for ((x, y), z) in e.values.iter().zip(&p.values).zip(&q.values) {
                assert_eq!(*x, (y + z) / 2.0);
            }
        }
    }
}
