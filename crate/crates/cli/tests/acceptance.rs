//! Acceptance suite: every release gate runs here, one pass/fail line per
//! criterion. Heavy end-to-end gates (training-based) sit at the end.
//!
//! Run with `cargo test -p dustlab-cli --test acceptance -- --nocapture`
//! to see the criterion lines.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use dustlab_core::attention::{window_partition, window_reverse, WindowGrid};
use dustlab_core::net::checkpoint;
use dustlab_core::net::{DedustNet, ModelConfig};
use dustlab_core::objectives::losses::ms_ssim;
use dustlab_core::objectives::metrics::{entropy, psnr};
use dustlab_core::objectives::PerceptualExtractor;
use dustlab_core::rng::{derive_seed, rng_from_seed, Rng};
use dustlab_core::synth::{apply_asm, invert_asm, make_clean_image, make_depth, write_image, DustField, SynthOptions};
use dustlab_core::tensor::{with_no_grad, Tensor};
use dustlab_core::train::{evaluate, train, SyntheticSource, TrainConfig};
use dustlab_core::verify::{reference, run_suite};
use dustlab_core::wavelet::{dwt2, idwt2, WaveletBasis};

fn criterion(num: usize, name: &str, passed: bool, detail: &str) {
    println!("ACCEPTANCE {num:02} {name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {num} ({name}) failed: {detail}");
}

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("dustlab_acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn dustlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dustlab"))
        .args(args)
        .env("DUSTLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

// ---------------------------------------------------------------------------
// 1 + 2: wavelet reconstruction and energy conservation
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_02_wavelet_reconstruction_and_parseval() {
    let started = Instant::now();
    let mut worst_pr = 0.0f64;
    let mut worst_energy = 0.0f64;
    for basis in [WaveletBasis::db1(), WaveletBasis::db2()] {
        let mut rng = rng_from_seed(2024);
        for i in 0..50u64 {
            let c = rng.gen_range(1..4usize);
            let h = 2 * rng.gen_range(1..17usize);
            let w = 2 * rng.gen_range(1..17usize);
            let x = rand_tensor(&[1, c, h, w], derive_seed(7, basis.name(), i), -1.0, 1.0);
            let bands = dwt2(&x, &basis).unwrap();
            let back = idwt2(&bands, &basis).unwrap();
            let pr = x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst_pr = worst_pr.max(pr);
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            let eb: f64 = [&bands.ll, &bands.lh, &bands.hl, &bands.hh]
                .iter()
                .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            worst_energy = worst_energy.max(((eb - ex) / ex).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    criterion(
        1,
        "wavelet-perfect-reconstruction",
        worst_pr < 1e-9 && secs < 5.0,
        &format!("max err {worst_pr:.3e} over 50 tensors/basis in {secs:.2}s (< 5s)"),
    );
    criterion(2, "wavelet-energy-conservation", worst_energy < 1e-9, &format!("max relative err {worst_energy:.3e}"));
}

// ---------------------------------------------------------------------------
// 3: gradient verification of every op and composite
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_verification() {
    let started = Instant::now();
    let mut all = true;
    let mut detail = String::new();
    for suite in ["tensor-ops", "wavelet", "attention", "blocks", "objectives", "model"] {
        let report = run_suite(suite).unwrap();
        if !report.passed() {
            all = false;
            detail = format!("suite {suite}: {:?}", report.first_failure());
            break;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if detail.is_empty() {
        detail = format!("all op and composite gradchecks pass, 3 seeds each, {secs:.1}s (< 120s)");
    }
    criterion(3, "gradient-verification", all && secs < 120.0, &detail);
}

// ---------------------------------------------------------------------------
// 4: attention oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_attention_oracle_equivalence() {
    let report = run_suite("attention").unwrap();
    let relevant: Vec<_> = report
        .cases
        .iter()
        .filter(|c| c.name.contains("oracle"))
        .collect();
    let ok = !relevant.is_empty() && relevant.iter().all(|c| c.passed) && report.passed();
    let detail = relevant.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect::<Vec<_>>().join("; ");
    criterion(4, "attention-oracle-equivalence", ok, &detail);
}

// ---------------------------------------------------------------------------
// 5: identity contracts
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_identity_contracts() {
    // zero-head untrained model: bitwise identity
    let model = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
    let data: Vec<f32> = (0..3 * 16 * 16).map(|i| ((i * 37) % 251) as f32 / 255.0).collect();
    let x = Tensor::from_vec(&[1, 3, 16, 16], data).unwrap();
    let y = with_no_grad(|| model.forward(&x)).unwrap();
    let identity_ok = y.data() == x.data();

    // window partition/reverse exact round trips (padding and shift engaged)
    let mut window_ok = true;
    for (h, w, win, shift) in [(9usize, 7usize, 4usize, 2usize), (8, 8, 4, 0), (5, 17, 4, 2)] {
        let t = rand_tensor(&[2, 3, h, w], (h * w) as u64, -1.0, 1.0);
        let grid = WindowGrid::new(h, w, win, shift).unwrap();
        let back = window_reverse(&window_partition(&t, &grid).unwrap(), &grid, 2).unwrap();
        window_ok &= back.data() == t.data();
    }

    // pack/unpack exact round trip
    let t = rand_tensor(&[1, 3, 8, 8], 99, -1.0, 1.0);
    let bands = dwt2(&t, &WaveletBasis::db1()).unwrap();
    let packed = dustlab_core::wavelet::pack_bands(&bands).unwrap();
    let unpacked = dustlab_core::wavelet::unpack_bands(&packed).unwrap();
    let pack_ok = unpacked.ll.data() == bands.ll.data()
        && unpacked.lh.data() == bands.lh.data()
        && unpacked.hl.data() == bands.hl.data()
        && unpacked.hh.data() == bands.hh.data();

    criterion(
        5,
        "identity-contracts",
        identity_ok && window_ok && pack_ok,
        &format!("zero-head bitwise {identity_ok}, window round trips {window_ok}, pack/unpack {pack_ok}"),
    );
}

// ---------------------------------------------------------------------------
// 6: metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_metric_oracles() {
    // PSNR exactly 20 dB at MSE = max^2 / 100
    let mut pred = vec![0.0f64; 100];
    pred[61] = 1.0;
    let p = Tensor::from_vec(&[1, 1, 10, 10], pred).unwrap();
    let t = Tensor::from_vec(&[1, 1, 10, 10], vec![0.0f64; 100]).unwrap();
    let psnr_ok = psnr(&p, &t, 1.0).unwrap() == 20.0;

    // entropy exactly 8 bits on a uniform 256-level image
    let hw = 256;
    let mut data = vec![0.0f64; 3 * hw];
    for i in 0..hw {
        let v = i as f64 / 255.0;
        data[i] = v;
        data[hw + i] = v;
        data[2 * hw + i] = v;
    }
    let uniform = Tensor::from_vec(&[1, 3, 16, 16], data).unwrap();
    let entropy_ok = entropy(&uniform).unwrap() == 8.0;

    // MS-SSIM vs the independent reference on 10 random pairs
    let mut worst = 0.0f64;
    for i in 0..10u64 {
        let a = rand_tensor(&[1, 3, 48, 48], derive_seed(31, "acc_a", i), 0.0, 1.0);
        let b = rand_tensor(&[1, 3, 48, 48], derive_seed(31, "acc_b", i), 0.0, 1.0);
        let got = ms_ssim(&a, &b, 5).unwrap().item();
        let want = reference::ms_ssim_reference(a.data(), b.data(), 1, 3, 48, 48, 5);
        worst = worst.max((got - want).abs());
    }
    criterion(
        6,
        "metric-oracles",
        psnr_ok && entropy_ok && worst < 1e-5,
        &format!("psnr==20.0 {psnr_ok}, entropy==8.0 {entropy_ok}, msssim ref err {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 7: scattering-model limits and inversion
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_scattering_model_limits() {
    let clean = make_clean_image::<f64>(11, 16, 16).unwrap();

    let identity_field = DustField {
        ambient: [0.9; 3],
        beta: 0.0,
        depth: Tensor::full(&[1, 1, 16, 16], 1.0),
        ambient_mod: None,
    };
    let same = apply_asm(&clean, &identity_field).unwrap();
    let beta0_ok = same.data() == clean.data();

    let opaque_field = DustField {
        ambient: [0.9; 3],
        beta: 1.0,
        depth: Tensor::full(&[1, 1, 16, 16], 1e9),
        ambient_mod: None,
    };
    let ambient = apply_asm(&clean, &opaque_field).unwrap();
    let opaque_ok = ambient.data().iter().all(|&v| (v - 0.9).abs() < 1e-12);

    let depth = make_depth::<f64>(16, 16, 5, 0.6).unwrap();
    let field = DustField { ambient: [0.82, 0.78, 0.72], beta: 1.7, depth, ambient_mod: None };
    let degraded = apply_asm(&clean, &field).unwrap();
    let recovered = invert_asm(&degraded, &field).unwrap();
    let t = field.transmission();
    let hw = 16 * 16;
    let mut worst = 0.0f64;
    for c in 0..3 {
        for i in 0..hw {
            if t[i] > 0.05 {
                worst = worst.max((recovered.data()[c * hw + i] - clean.data()[c * hw + i]).abs());
            }
        }
    }
    criterion(
        7,
        "scattering-model-limits",
        beta0_ok && opaque_ok && worst < 1e-6,
        &format!("beta=0 exact {beta0_ok}, t->0 ambient {opaque_ok}, inversion err {worst:.2e}"),
    );
}

// ---------------------------------------------------------------------------
// 10: parameter accounting against the published budget
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_parameter_accounting() {
    let out = dustlab(&["info", "--config", "table2", "--resolution", "256x256"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let params: f64 = text
        .lines()
        .find(|l| l.starts_with("params:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|v| v.parse().ok())
        .unwrap();
    let target = 1.866e6;
    let deviation = (params - target) / target;
    let mentions_targets = text.contains("1.866M") && text.contains("4.08G") && text.contains("deviation");
    criterion(
        10,
        "parameter-accounting",
        deviation.abs() <= 0.20 && mentions_targets,
        &format!("{params} params, deviation {:+.2}% (|.| <= 20%), targets printed {mentions_targets}", deviation * 100.0),
    );
}

// ---------------------------------------------------------------------------
// 11: byte-identical CLI artifacts under a fixed seed
// ---------------------------------------------------------------------------

fn read_all_files(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap().flatten() {
            let p = entry.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn criterion_11_cli_determinism() {
    let dir = tmp("crit11");
    let clean = dir.join("clean_src");
    std::fs::create_dir_all(&clean).unwrap();
    for i in 0..2u64 {
        let img = make_clean_image::<f32>(i, 24, 24).unwrap();
        write_image(&img, &clean.join(format!("s{i}.png"))).unwrap();
    }
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "preset = tiny\nsteps = 3\npatch = 16\nbatch_size = 2\neval_every = 3\neval_images = 2\n").unwrap();

    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let root = dir.join(run);
        let synth_out = root.join("pairs");
        let status = dustlab(&[
            "synth",
            "--clean-dir",
            clean.to_str().unwrap(),
            "--out",
            synth_out.to_str().unwrap(),
            "--count",
            "4",
            "--seed",
            "9",
        ]);
        assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
        let train_out = root.join("run");
        let status = dustlab(&[
            "train",
            "--data",
            synth_out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            train_out.to_str().unwrap(),
            "--seed",
            "9",
        ]);
        assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
        let status = dustlab(&[
            "infer",
            "--ckpt",
            train_out.join("best.ckpt").to_str().unwrap(),
            "--in",
            synth_out.join("dusty/00000.png").to_str().unwrap(),
            "--out",
            root.join("restored.png").to_str().unwrap(),
        ]);
        assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
        snapshots.push(read_all_files(&root));
    }
    let equal = snapshots[0] == snapshots[1];
    criterion(
        11,
        "cli-determinism",
        equal,
        &format!("synth+train+infer artifacts byte-identical across reruns ({} files)", snapshots[0].len()),
    );
}

// ---------------------------------------------------------------------------
// 12: checkpoint round trip and eval reproduction
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_checkpoint_round_trip() {
    let dir = tmp("crit12");
    let seed = 4u64;
    let mut mcfg = ModelConfig::tiny();
    mcfg.seed = seed;
    let model = DedustNet::<f32>::new(mcfg).unwrap();
    let tcfg = TrainConfig {
        steps: 6,
        patch: 16,
        batch_size: 2,
        eval_every: 2,
        eval_images: 2,
        seed,
        ..Default::default()
    };
    let opts = SynthOptions::default();
    let source = SyntheticSource::<f32>::new(4, 24, seed, opts.clone()).unwrap();
    let eval = SyntheticSource::<f32>::eval_pairs(2, 16, derive_seed(seed, "eval", 0), &opts).unwrap();
    let ex = PerceptualExtractor::<f32>::new(derive_seed(seed, "perc", 0));
    let outcome = train(&model, &source, &eval, &tcfg, &ex, None).unwrap();

    dustlab_core::train::apply_snapshot(&model, &outcome.best_snapshot).unwrap();
    let path = dir.join("best.ckpt");
    checkpoint::save(&model, None, &path).unwrap();
    let loaded = checkpoint::load::<f32>(&path).unwrap().model;

    let mut bit_exact = true;
    for (a, b) in model.params().iter().zip(loaded.params().iter()) {
        bit_exact &= a.tensor().data() == b.tensor().data();
    }
    let (psnr_reloaded, _) = evaluate(&loaded, &eval).unwrap();
    let diff = (psnr_reloaded - outcome.best_psnr).abs();
    criterion(
        12,
        "checkpoint-round-trip",
        bit_exact && diff < 1e-5,
        &format!("parameters bit-exact {bit_exact}, reloaded eval within {diff:.2e} dB of logged"),
    );
}

// ---------------------------------------------------------------------------
// 8: end-to-end learning signal (heavy)
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_end_to_end_learning_signal() {
    let started = Instant::now();
    let seed = 0u64;
    let mut mcfg = ModelConfig::desk_default();
    mcfg.seed = seed;
    let model = DedustNet::<f32>::new(mcfg).unwrap();
    let tcfg = TrainConfig { seed, eval_images: 32, ..Default::default() };
    assert_eq!((tcfg.steps, tcfg.batch_size, tcfg.patch), (500, 4, 64));
    let opts = SynthOptions::default();
    let source = SyntheticSource::<f32>::new(24, 96, seed, opts.clone()).unwrap();
    let eval = SyntheticSource::<f32>::eval_pairs(32, 64, derive_seed(seed, "heldout", 0), &opts).unwrap();
    let ex = PerceptualExtractor::<f32>::new(derive_seed(seed, "perceptual", 0));

    let mut dusty_psnr = 0.0;
    for (clean, dusty) in &eval {
        dusty_psnr += psnr(dusty, clean, 1.0).unwrap();
    }
    dusty_psnr /= eval.len() as f64;

    let outcome = train(&model, &source, &eval, &tcfg, &ex, None).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let margin = outcome.best_psnr - dusty_psnr;
    criterion(
        8,
        "end-to-end-learning-signal",
        margin >= 2.0 && secs < 900.0,
        &format!(
            "restored {:.2} dB vs dusty {:.2} dB: margin {margin:+.2} dB (>= 2) in {secs:.0}s (< 900s)",
            outcome.best_psnr, dusty_psnr
        ),
    );
}

// ---------------------------------------------------------------------------
// 9: loss-ablation direction (heavy: 6 training runs)
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_loss_ablation_direction() {
    let run = |seed: u64, l1_only: bool| -> f64 {
        let mut mcfg = ModelConfig::desk_default();
        mcfg.seed = seed;
        if l1_only {
            mcfg.loss_weights = (1.0, 0.0, 0.0);
        }
        let model = DedustNet::<f32>::new(mcfg).unwrap();
        let tcfg = TrainConfig { seed, eval_images: 32, ..Default::default() };
        let opts = SynthOptions::default();
        let source = SyntheticSource::<f32>::new(24, 96, seed, opts.clone()).unwrap();
        let eval = SyntheticSource::<f32>::eval_pairs(32, 64, derive_seed(seed, "heldout", 0), &opts).unwrap();
        let ex = PerceptualExtractor::<f32>::new(derive_seed(seed, "perceptual", 0));
        train(&model, &source, &eval, &tcfg, &ex, None).unwrap().best_psnr
    };
    let mut wins = 0;
    let mut detail = String::new();
    for seed in 0..3u64 {
        let full = run(seed, false);
        let l1 = run(seed, true);
        if full >= l1 {
            wins += 1;
        }
        detail.push_str(&format!("seed {seed}: full {full:.2} vs l1 {l1:.2}; "));
    }
    criterion(9, "loss-ablation-direction", wins >= 2, &format!("{detail}full wins {wins}/3 (need >= 2)"));
}
