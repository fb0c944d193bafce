use windgrid::models::{self, E2EConfig, FcCnnConfig, Keep, ModelSpec, TrainConfig};
use windgrid::scene::{self, SampleConfig, SplitFractions};
use windgrid::synth;

const SLACK: f64 = 1.05;
const STEPS: usize = 2000;

/// The 32-sample noise-free fixture of the overfit check.
fn fixture() -> scene::SampleSet {
    let mut cfg = synth::reference_config();
    cfg.field.steps = 50;
    cfg.field.noise_sd = 0.0;
    let sc = synth::synthesize(&cfg).unwrap();
    let sample_cfg = SampleConfig {
        split: SplitFractions { train: 0.8, val: 0.1 },
        ..Default::default()
    };
    let raw = scene::build_samples(&sc.grid, &[sc.power], &sample_cfg).unwrap();
    scene::normalize(&raw).unwrap().0
}

/// After the first 10% of steps no epoch's train loss exceeds the previous
/// one by more than the slack factor.
fn check_non_increasing(spec: ModelSpec) {
    let cfg = TrainConfig {
        epochs: usize::MAX,
        seed: 42,
        patience: None,
        max_steps: Some(STEPS),
        keep: Keep::Last,
        ..Default::default()
    };
    let out = models::train(spec, &fixture(), &cfg).unwrap();
    let per_epoch = out.checkpoint.meta.steps / out.curve.len();
    let curve = &out.curve[(STEPS / 10).div_ceil(per_epoch)..];
    for w in curve.windows(2) {
        assert!(
            w[1].train <= SLACK * w[0].train,
            "{}: epoch {} loss {} after {}",
            spec.name(),
            w[1].epoch,
            w[1].train,
            w[0].train
        );
    }
}

#[test]
fn e2e_train_loss_non_increasing() {
    check_non_increasing(ModelSpec::E2e(E2EConfig::default()));
}

#[test]
#[ignore = "constant-rate Adam spikes transiently once the FC-CNN loss is below 1e-4"]
fn fc_cnn_train_loss_non_increasing() {
    check_non_increasing(ModelSpec::FcCnn(FcCnnConfig::default()));
}
