//! End-to-end tests of the `dustlab` binary: exit codes, file outputs, and
//! determinism of artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dustlab_core::net::checkpoint;
use dustlab_core::net::{DedustNet, ModelConfig};
use dustlab_core::synth::write_image;
use dustlab_core::tensor::Tensor;

fn dustlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dustlab"))
        .args(args)
        .env("DUSTLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("dustlab_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ramp_image(h: usize, w: usize) -> Tensor<f32> {
    let data: Vec<f32> = (0..3 * h * w).map(|i| ((i * 31) % 237) as f32 / 255.0).collect();
    Tensor::from_vec(&[1, 3, h, w], data).unwrap()
}

fn write_clean_dir(dir: &Path, count: usize, hw: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let img = dustlab_core::synth::make_clean_image::<f32>(i as u64, hw, hw).unwrap();
        write_image(&img, &dir.join(format!("src{i}.png"))).unwrap();
    }
}

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
fn unknown_flag_exits_1_without_touching_filesystem() {
    let dir = tmp("usage");
    let out_dir = dir.join("never");
    let out = dustlab(&["synth", "--nope", "x", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("--nope"), "usage error should name the flag: {msg}");
    assert!(!out_dir.exists());
}

#[test]
fn help_exits_0() {
    let out = dustlab(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn missing_input_dir_exits_2() {
    let dir = tmp("missing");
    let out = dustlab(&[
        "synth",
        "--clean-dir",
        dir.join("does_not_exist").to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
        "--count",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_count_zero_writes_header_and_exits_0() {
    let dir = tmp("synth0");
    let clean = dir.join("clean_src");
    write_clean_dir(&clean, 1, 16);
    let out_dir = dir.join("out");
    let out = dustlab(&[
        "synth",
        "--clean-dir",
        clean.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--count",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("provenance.txt")).unwrap();
    assert!(text.starts_with("# dustlab provenance v1"));
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tmp("synthdet");
    let clean = dir.join("clean_src");
    write_clean_dir(&clean, 2, 24);
    for run in ["a", "b"] {
        let out = dustlab(&[
            "synth",
            "--clean-dir",
            clean.to_str().unwrap(),
            "--out",
            dir.join(run).to_str().unwrap(),
            "--count",
            "3",
            "--seed",
            "5",
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(read_all_files(&dir.join("a")), read_all_files(&dir.join("b")));
}

#[test]
fn synth_with_zero_beta_copies_clean() {
    let dir = tmp("synthb0");
    let clean = dir.join("clean_src");
    write_clean_dir(&clean, 1, 16);
    let out_dir = dir.join("out");
    let out = dustlab(&[
        "synth",
        "--clean-dir",
        clean.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--count",
        "2",
        "--beta-min",
        "0",
        "--beta-max",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for i in 0..2 {
        let c = std::fs::read(out_dir.join(format!("clean/{i:05}.png"))).unwrap();
        let d = std::fs::read(out_dir.join(format!("dusty/{i:05}.png"))).unwrap();
        assert_eq!(c, d, "beta 0 must leave the image untouched");
    }
}

fn write_tiny_ckpt(dir: &Path) -> PathBuf {
    let model = DedustNet::<f32>::new(ModelConfig::tiny()).unwrap();
    let path = dir.join("tiny.ckpt");
    checkpoint::save(&model, None, &path).unwrap();
    path
}

#[test]
fn infer_with_untrained_checkpoint_is_identity_up_to_quantization() {
    let dir = tmp("inferid");
    let ckpt = write_tiny_ckpt(&dir);
    let input = dir.join("in.png");
    let img = ramp_image(16, 16);
    write_image(&img, &input).unwrap();
    let output = dir.join("out.png");
    let out = dustlab(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    // zero-head model is the identity; PNG quantization is the only change
    let back = dustlab_core::synth::read_image::<f32>(&output).unwrap();
    let orig = dustlab_core::synth::read_image::<f32>(&input).unwrap();
    assert_eq!(back.data(), orig.data());
}

#[test]
fn infer_pads_and_crops_back_to_exact_extents() {
    let dir = tmp("inferpad");
    let ckpt = write_tiny_ckpt(&dir); // tiny: 2 stages -> extent multiple 4
    let input = dir.join("in.png");
    write_image(&ramp_image(70, 50), &input).unwrap();
    let output = dir.join("out.png");
    let out = dustlab(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--in",
        input.to_str().unwrap(),
        "--out",
        output.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let back = dustlab_core::synth::read_image::<f32>(&output).unwrap();
    assert_eq!(back.shape(), &[1, 3, 70, 50]);
}

#[test]
fn eval_of_identical_pairs_reports_inf_psnr_and_unit_ssim() {
    let dir = tmp("evalid");
    let ckpt = write_tiny_ckpt(&dir);
    let pairs = dir.join("pairs");
    std::fs::create_dir_all(pairs.join("clean")).unwrap();
    std::fs::create_dir_all(pairs.join("dusty")).unwrap();
    let img = ramp_image(16, 16);
    write_image(&img, &pairs.join("clean/a.png")).unwrap();
    write_image(&img, &pairs.join("dusty/a.png")).unwrap();
    let out = dustlab(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--pairs", pairs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("psnr_db=inf"), "{text}");
    assert!(text.contains("ssim=1.000000"), "{text}");
    assert!(text.contains("file\tpsnr_db\tssim\tentropy_bits"), "table header: {text}");
}

#[test]
fn gradcheck_subcommand_passes_on_clean_build() {
    let out = dustlab(&["gradcheck", "--module", "wavelet"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("suite wavelet [PASS]"));
}

#[test]
fn gradcheck_unknown_module_exits_1() {
    let out = dustlab(&["gradcheck", "--module", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn info_reports_params_and_convention() {
    let out = dustlab(&["info", "--config", "tiny", "--resolution", "64x64"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("params:"));
    assert!(text.contains("convention:"));
}

#[test]
fn info_orders_presets_by_size() {
    let grab = |cfg: &str| -> u64 {
        let out = dustlab(&["info", "--config", cfg, "--resolution", "64x64"]);
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        text.lines()
            .find(|l| l.starts_with("params:"))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap()
    };
    assert!(grab("tiny") < grab("table2"));
}

#[test]
fn train_writes_checkpoints_and_logs() {
    let dir = tmp("trainsmall");
    let clean = dir.join("data/clean");
    write_clean_dir(&clean, 2, 24);
    let out_dir = dir.join("run");
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "preset = tiny\nsteps = 3\npatch = 16\nbatch_size = 2\neval_every = 3\neval_images = 2\n").unwrap();
    let out = dustlab(&[
        "train",
        "--data",
        dir.join("data").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("best.ckpt").exists());
    assert!(out_dir.join("last.ckpt").exists());
    let log = std::fs::read_to_string(out_dir.join("runlog.txt")).unwrap();
    assert!(log.contains("step=0 loss="));
    assert!(log.contains("eval step="));
    assert!(out_dir.join("runlog.tsv").exists());
}

#[test]
fn config_with_unknown_key_exits_1() {
    let dir = tmp("badcfg");
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "stagse = 3\n").unwrap();
    let out = dustlab(&["info", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stagse"));
}

#[test]
fn ablate_prints_comparison_table() {
    let dir = tmp("ablate");
    let cfg = dir.join("cfg.txt");
    std::fs::write(&cfg, "preset = tiny\nsteps = 2\npatch = 16\nbatch_size = 2\neval_every = 2\neval_images = 2\n").unwrap();
    let table = dir.join("table.txt");
    let out = dustlab(&[
        "ablate",
        "--config",
        cfg.to_str().unwrap(),
        "--toggles",
        "ms_ssim_term,cifm",
        "--images",
        "2",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.contains("variant"), "{text}");
    assert!(text.contains("full"));
    assert!(text.contains("w/o ms_ssim_term"));
    assert!(text.contains("w/o cifm"));
    // loss toggle keeps the parameter count, module toggle shrinks it
    let params: Vec<u64> = text
        .lines()
        .skip(1)
        .filter_map(|l| l.split_whitespace().find_map(|v| v.parse::<u64>().ok()))
        .collect();
    assert_eq!(params.len(), 3, "{text}");
    assert_eq!(params[0], params[1], "loss toggle must not change params");
    assert!(params[2] < params[0], "module toggle must shrink params");
}

#[test]
fn ablate_rejects_unknown_toggle() {
    let out = dustlab(&["ablate", "--config", "tiny", "--toggles", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
}
