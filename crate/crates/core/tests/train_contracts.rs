//! Training-loop contracts: determinism, null updates, abort behavior, and
//! checkpoint interplay. Uses the tiny configuration to stay fast.

use dustlab_core::error::DustError;
use dustlab_core::net::checkpoint;
use dustlab_core::net::{DedustNet, ModelConfig};
use dustlab_core::objectives::PerceptualExtractor;
use dustlab_core::rng::derive_seed;
use dustlab_core::synth::{Provenance, SynthOptions};
use dustlab_core::tensor::Tensor;
use dustlab_core::train::{
    apply_snapshot, evaluate, train, Batch, BatchSource, SyntheticSource, TrainConfig,
};

fn tiny_model(seed: u64) -> DedustNet<f32> {
    let mut cfg = ModelConfig::tiny();
    cfg.seed = seed;
    DedustNet::new(cfg).unwrap()
}

fn tiny_train_cfg(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        patch: 16,
        batch_size: 2,
        eval_every: steps.max(1),
        eval_images: 2,
        ..Default::default()
    }
}

fn fixtures(seed: u64) -> (SyntheticSource<f32>, Vec<(Tensor<f32>, Tensor<f32>)>, PerceptualExtractor<f32>) {
    let opts = SynthOptions::default();
    let source = SyntheticSource::new(4, 24, seed, opts.clone()).unwrap();
    let eval = SyntheticSource::eval_pairs(2, 16, derive_seed(seed, "eval", 0), &opts).unwrap();
    (source, eval, PerceptualExtractor::new(derive_seed(seed, "perc", 0)))
}

fn param_data(model: &DedustNet<f32>) -> Vec<Vec<f32>> {
    model.params().iter().map(|p| p.tensor().data().to_vec()).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let model = tiny_model(1);
    let before = param_data(&model);
    let (source, eval, ex) = fixtures(1);
    let cfg = TrainConfig { lr: 0.0, ..tiny_train_cfg(5) };
    train(&model, &source, &eval, &cfg, &ex, None).unwrap();
    let after = param_data(&model);
    assert_eq!(before, after);
}

#[test]
fn rerun_with_same_seed_is_bit_identical() {
    let run = || {
        let model = tiny_model(7);
        let (source, eval, ex) = fixtures(7);
        let out = train(&model, &source, &eval, &tiny_train_cfg(6), &ex, None).unwrap();
        (out.log.steps.last().unwrap().loss, param_data(&model))
    };
    let (loss_a, params_a) = run();
    let (loss_b, params_b) = run();
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    assert_eq!(params_a, params_b);
}

#[test]
fn training_loss_trends_down_over_first_50_steps() {
    let model = tiny_model(3);
    let (source, eval, ex) = fixtures(3);
    let cfg = TrainConfig { eval_every: 50, ..tiny_train_cfg(50) };
    let out = train(&model, &source, &eval, &cfg, &ex, None).unwrap();
    // least-squares slope of loss against step index
    let n = out.log.steps.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y: f64 = out.log.steps.iter().map(|r| r.loss).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, r) in out.log.steps.iter().enumerate() {
        let dx = i as f64 - mean_x;
        num += dx * (r.loss - mean_y);
        den += dx * dx;
    }
    let slope = num / den;
    assert!(slope < 0.0, "loss slope {slope} not negative");
}

#[test]
fn frozen_extractor_hash_is_stable_across_training() {
    let model = tiny_model(4);
    let (source, eval, ex) = fixtures(4);
    let before = ex.weight_hash();
    train(&model, &source, &eval, &tiny_train_cfg(4), &ex, None).unwrap();
    assert_eq!(ex.weight_hash(), before);
}

/// Source that yields a batch engineered to blow up the forward pass.
struct PoisonSource {
    inner: SyntheticSource<f32>,
    poison_at: u64,
}

impl BatchSource<f32> for PoisonSource {
    fn batch(&self, step: u64, batch_size: usize, patch: usize) -> Result<Batch<f32>, DustError> {
        let mut batch = self.inner.batch(step, batch_size, patch)?;
        if step == self.poison_at {
            // enormous values: finite here, but the loss pass overflows f32
            let shape = batch.degraded.shape().to_vec();
            let data = vec![3.0e38f32; batch.degraded.numel()];
            batch.degraded = Tensor::from_vec(&shape, data).unwrap();
            batch.provenance = vec![Provenance {
                seed: 999,
                epoch: step as u32,
                idx: 0,
                ambient: [1.0; 3],
                beta: 9.0,
                transform: "r0".into(),
            }];
        }
        Ok(batch)
    }

    fn len_hint(&self) -> Option<usize> {
        None
    }
}

#[test]
fn numeric_blowup_aborts_with_provenance_and_intact_parameters() {
    let model = tiny_model(5);
    let (inner, eval, ex) = fixtures(5);
    let source = PoisonSource { inner, poison_at: 2 };
    let cfg = tiny_train_cfg(6);

    // reference: params after the two clean steps
    let reference = tiny_model(5);
    let (clean_source, _, _) = fixtures(5);
    train(&reference, &clean_source, &eval, &tiny_train_cfg(2), &ex, None).unwrap();

    let err = match train(&model, &source, &eval, &cfg, &ex, None) {
        Err(e) => e,
        Ok(_) => panic!("poisoned batch did not abort"),
    };
    let msg = format!("{err}");
    assert!(matches!(err, DustError::NonFinite { .. }), "{msg}");
    assert!(msg.contains("seed=999"), "abort must dump batch provenance: {msg}");
    assert_eq!(param_data(&model), param_data(&reference), "parameters must equal the pre-step snapshot");
}

#[test]
fn best_checkpoint_reload_reproduces_logged_psnr() {
    let model = tiny_model(6);
    let (source, eval, ex) = fixtures(6);
    let cfg = TrainConfig { eval_every: 3, ..tiny_train_cfg(9) };
    let out = train(&model, &source, &eval, &cfg, &ex, None).unwrap();

    let dir = std::env::temp_dir().join("dustlab_train_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("best.ckpt");
    apply_snapshot(&model, &out.best_snapshot).unwrap();
    checkpoint::save(&model, None, &path).unwrap();

    let reloaded = checkpoint::load::<f32>(&path).unwrap().model;
    let (psnr, _) = evaluate(&reloaded, &eval).unwrap();
    assert!(
        (psnr - out.best_psnr).abs() < 1e-5,
        "reloaded psnr {psnr} vs logged {}",
        out.best_psnr
    );
}

#[test]
fn optimizer_state_round_trips_through_checkpoint() {
    let model = tiny_model(8);
    let (source, eval, ex) = fixtures(8);
    let out = train(&model, &source, &eval, &tiny_train_cfg(3), &ex, None).unwrap();
    let dir = std::env::temp_dir().join("dustlab_train_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("with_optim.ckpt");
    checkpoint::save(&model, Some(&out.optimizer.to_snapshot()), &path).unwrap();
    let loaded = checkpoint::load::<f32>(&path).unwrap();
    let snap = loaded.optim.expect("optimizer stored");
    assert_eq!(snap.step, 3);
    for (a, b) in snap.first.iter().zip(&out.optimizer.first) {
        assert_eq!(a, b);
    }
    for (a, b) in snap.second.iter().zip(&out.optimizer.second) {
        assert_eq!(a, b);
    }
}

#[test]
fn run_log_lines_have_documented_format() {
    let model = tiny_model(9);
    let (source, eval, ex) = fixtures(9);
    let cfg = TrainConfig { eval_every: 2, ..tiny_train_cfg(2) };
    let mut lines: Vec<String> = Vec::new();
    let mut sink = |l: &str| lines.push(l.to_string());
    let out = train(&model, &source, &eval, &cfg, &ex, Some(&mut sink)).unwrap();
    assert!(lines[0].starts_with("step=0 loss="));
    assert!(lines.iter().any(|l| l.starts_with("eval step=") && l.contains(" psnr=") && l.contains(" ssim=")));
    let text = out.log.to_text();
    assert!(text.contains("step=1 loss="));
    let tsv = out.log.to_tsv();
    assert!(tsv.starts_with("kind\tstep\t"));
}

#[test]
fn epochs_override_steps_for_finite_sources() {
    let cfg = TrainConfig { epochs: Some(2), batch_size: 4, ..Default::default() };
    assert_eq!(cfg.effective_steps(Some(10)), 2 * 3); // ceil(10/4) = 3 per epoch
    assert_eq!(cfg.effective_steps(None), cfg.steps);
}

#[test]
fn pair_directory_source_serves_matched_pairs() {
    use dustlab_core::synth::write_image;
    use dustlab_core::train::PairDirSource;
    let dir = std::env::temp_dir().join("dustlab_pairdir_test");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(dir.join("clean")).unwrap();
    std::fs::create_dir_all(dir.join("dusty")).unwrap();
    for i in 0..2u64 {
        let clean = dustlab_core::synth::make_clean_image::<f32>(i, 24, 24).unwrap();
        let opts = SynthOptions { augment: false, ..Default::default() };
        let pair = dustlab_core::synth::synth_pair(&clean, i, 0, 0, &opts).unwrap();
        write_image(&pair.clean, &dir.join(format!("clean/img{i}.png"))).unwrap();
        write_image(&pair.degraded, &dir.join(format!("dusty/img{i}.png"))).unwrap();
    }
    let source = PairDirSource::<f32>::load(&dir, 3, SynthOptions::default()).unwrap();
    let batch = source.batch(0, 2, 16).unwrap();
    assert_eq!(batch.clean.shape(), &[2, 3, 16, 16]);
    assert_eq!(batch.degraded.shape(), &[2, 3, 16, 16]);
    // served pairs stay aligned: dusty pixels differ from clean (beta > 0)
    assert_ne!(batch.clean.data(), batch.degraded.data());
    // deterministic across calls
    let again = source.batch(0, 2, 16).unwrap();
    assert_eq!(batch.clean.data(), again.clean.data());
    assert_eq!(batch.degraded.data(), again.degraded.data());
}

#[test]
fn ablation_loss_toggle_keeps_architecture() {
    use dustlab_core::train::Toggle;
    let base = ModelConfig::tiny();
    let mut with_loss_off = base.clone();
    Toggle::MsSsimTerm.apply_off(&mut with_loss_off);
    let a = DedustNet::<f32>::new(base).unwrap();
    let b = DedustNet::<f32>::new(with_loss_off.clone()).unwrap();
    assert_eq!(
        a.params().total_scalars(),
        b.params().total_scalars(),
        "loss toggles must not change the parameter count"
    );
    assert_eq!(with_loss_off.loss_weights.1, 0.0);

    let mut no_cifm = ModelConfig::tiny();
    Toggle::Cifm.apply_off(&mut no_cifm);
    let c = DedustNet::<f32>::new(no_cifm).unwrap();
    assert!(c.params().total_scalars() < a.params().total_scalars());
}
