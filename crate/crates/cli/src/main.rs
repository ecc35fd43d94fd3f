//! dustlab: synthesis, training, inference, evaluation, verification, and
//! model accounting for the wavelet/attention dedusting network.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 numeric failure,
//! 4 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dustlab_core::error::DustError;
use dustlab_core::net::checkpoint::{self, OptimSnapshot};
use dustlab_core::net::{count_flops, count_params, DedustNet, RunConfig, FLOP_CONVENTION};
use dustlab_core::objectives::{entropy, metric_line, metric_table, psnr, ssim, MetricRow, PerceptualExtractor};
use dustlab_core::real::Real;
use dustlab_core::rng::{derive_seed, rng_from_seed, Rng, SeededRng};
use dustlab_core::synth::{read_image, synth_pair, write_image, SynthOptions};
use dustlab_core::tensor::{crop_br, pad_br, with_no_grad, PadMode};
use dustlab_core::train::{
    ablate, apply_snapshot, format_ablation_table, train, PairDirSource, SyntheticSource, Toggle,
};
use dustlab_core::verify;

const TABLE2_PARAM_TARGET: f64 = 1.866e6;
const TABLE2_FLOP_TARGET: f64 = 4.08e9;

#[derive(Parser)]
#[command(name = "dustlab", version, about = "wavelet/attention image dedusting toolkit")]
struct Cli {
    /// Worker threads for internal parallelism (1 = fully sequential;
    /// results are bitwise identical for any value). Falls back to
    /// DUSTLAB_THREADS, then all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Degrade clean images through the scattering model into paired samples.
    Synth(SynthArgs),
    /// Train on a paired directory (dusty synthesized when absent).
    Train(TrainArgs),
    /// Restore one image with a trained checkpoint.
    Infer(InferArgs),
    /// Metric table (PSNR/SSIM/entropy) of a checkpoint over paired images.
    Eval(EvalArgs),
    /// Run the numeric verification suites.
    Gradcheck(GradcheckArgs),
    /// Parameter and FLOP accounting for a configuration.
    Info(InfoArgs),
    /// Train ablation variants and tabulate the comparison.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Directory of clean .png/.ppm images.
    #[arg(long, value_name = "DIR")]
    clean_dir: PathBuf,
    /// Output directory (clean/, dusty/, provenance.txt).
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, value_name = "N")]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = dustlab_core::synth::DEFAULT_BETA_RANGE.0)]
    beta_min: f64,
    #[arg(long, default_value_t = dustlab_core::synth::DEFAULT_BETA_RANGE.1)]
    beta_max: f64,
    /// Ambient light as r,g,b in [0,1].
    #[arg(long, value_name = "R,G,B")]
    ambient: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Paired data directory (clean/ plus optional dusty/).
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Preset name (tiny|default|table2|paper) or config file path.
    #[arg(long, default_value = "default")]
    config: String,
    /// Output directory for checkpoints and run logs.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config step count.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    #[arg(long, value_name = "IMAGE")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    /// Directory with clean/ and dusty/ (filename-matched).
    #[arg(long, value_name = "DIR")]
    pairs: PathBuf,
    /// Also write the tab-separated table here.
    #[arg(long, value_name = "FILE")]
    table_out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Single suite (wavelet|tensor-ops|attention|blocks|objectives|model);
    /// all suites when omitted.
    #[arg(long)]
    module: Option<String>,
}

#[derive(Args)]
struct InfoArgs {
    #[arg(long, default_value = "default")]
    config: String,
    /// Input resolution as HxW.
    #[arg(long, default_value = "256x256")]
    resolution: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value = "default")]
    config: String,
    /// Comma-separated toggles:
    /// sfas|cifm|dcm|rel_bias|ms_ssim_term|perceptual_term.
    #[arg(long, default_value = "ms_ssim_term,perceptual_term")]
    toggles: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Number of procedural base images.
    #[arg(long, default_value_t = 24)]
    images: usize,
    /// Write the comparison table here as well.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn exit_code_for(e: &DustError) -> u8 {
    match e {
        DustError::Io { .. } | DustError::Checkpoint { .. } => 2,
        DustError::NonFinite { .. } => 3,
        DustError::Verify { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let threads = cli
        .threads
        .or_else(|| std::env::var("DUSTLAB_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    dustlab_core::threads::set_threads(threads);

    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Infer(a) => cmd_infer(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Info(a) => cmd_info(a),
        Cmd::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn load_config(spec: &str) -> Result<RunConfig, DustError> {
    if let Some(cfg) = RunConfig::preset(spec) {
        return Ok(cfg);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| DustError::io(path.display().to_string(), format!("{e} (not a preset name either)")))?;
    dustlab_core::net::parse_config_text(&text)
}

fn parse_ambient(s: &str) -> Result<[f64; 3], DustError> {
    let parts: Vec<f64> = s.split(',').filter_map(|p| p.trim().parse().ok()).collect();
    if parts.len() != 3 || parts.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(DustError::config(format!("--ambient expects r,g,b in [0,1], got '{s}'")));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DustError> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| DustError::io(dir.display().to_string(), e.to_string()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    names.sort();
    Ok(names)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(a: SynthArgs) -> Result<(), DustError> {
    if a.beta_min < 0.0 || a.beta_max < a.beta_min {
        return Err(DustError::config(format!(
            "invalid beta range [{}, {}]",
            a.beta_min, a.beta_max
        )));
    }
    let ambient = match &a.ambient {
        Some(s) => parse_ambient(s)?,
        None => dustlab_core::synth::DEFAULT_AMBIENT,
    };
    let sources = list_images(&a.clean_dir)?;
    if sources.is_empty() && a.count > 0 {
        return Err(DustError::io(a.clean_dir.display().to_string(), "no .png/.ppm images"));
    }
    let clean_out = a.out.join("clean");
    let dusty_out = a.out.join("dusty");
    std::fs::create_dir_all(&clean_out).map_err(|e| DustError::io(clean_out.display().to_string(), e.to_string()))?;
    std::fs::create_dir_all(&dusty_out).map_err(|e| DustError::io(dusty_out.display().to_string(), e.to_string()))?;

    let opts = SynthOptions {
        beta_min: a.beta_min,
        beta_max: a.beta_max,
        ambient,
        augment: false,
        ..Default::default()
    };
    let mut provenance = Vec::with_capacity(a.count);
    let mut rng: SeededRng = rng_from_seed(derive_seed(a.seed, "synth_pick", 0));
    for i in 0..a.count {
        let src = &sources[rng.gen_range(0..sources.len())];
        let clean = read_image::<f32>(src)?;
        let pair = synth_pair(&clean, a.seed, 0, i as u32, &opts)?;
        write_image(&pair.clean, &clean_out.join(format!("{i:05}.png")))?;
        write_image(&pair.degraded, &dusty_out.join(format!("{i:05}.png")))?;
        provenance.push(pair.provenance);
    }
    dustlab_core::synth::write_provenance(&provenance, &a.out.join("provenance.txt"))?;
    println!("wrote {} pairs to {}", a.count, a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(a: TrainArgs) -> Result<(), DustError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
        cfg.train.epochs = None;
    }
    match cfg.model.precision {
        32 => run_train::<f32>(cfg, &a.data, &a.out),
        64 => run_train::<f64>(cfg, &a.data, &a.out),
        p => Err(DustError::config(format!("precision {p}"))),
    }
}

fn run_train<P: Real>(cfg: RunConfig, data: &Path, out: &Path) -> Result<(), DustError> {
    std::fs::create_dir_all(out).map_err(|e| DustError::io(out.display().to_string(), e.to_string()))?;
    let model = DedustNet::<P>::new(cfg.model.clone())?;
    let source = PairDirSource::<P>::load(data, cfg.train.seed, SynthOptions::default())?;
    let eval_pairs = SyntheticSource::<P>::eval_pairs(
        cfg.train.eval_images,
        cfg.train.patch,
        derive_seed(cfg.train.seed, "heldout", 0),
        &SynthOptions::default(),
    )?;
    let extractor = PerceptualExtractor::<P>::new(derive_seed(cfg.model.seed, "perceptual", 0));
    let mut print_line = |line: &str| println!("{line}");
    let outcome = train(&model, &source, &eval_pairs, &cfg.train, &extractor, Some(&mut print_line))?;

    // last checkpoint carries the optimizer state; best is parameters only
    checkpoint::save(
        &model,
        Some(&OptimSnapshot {
            step: outcome.optimizer.step,
            first: outcome.optimizer.first.clone(),
            second: outcome.optimizer.second.clone(),
        }),
        &out.join("last.ckpt"),
    )?;
    apply_snapshot(&model, &outcome.best_snapshot)?;
    checkpoint::save(&model, None, &out.join("best.ckpt"))?;
    std::fs::write(out.join("runlog.txt"), outcome.log.to_text())
        .map_err(|e| DustError::io(out.display().to_string(), e.to_string()))?;
    std::fs::write(out.join("runlog.tsv"), outcome.log.to_tsv())
        .map_err(|e| DustError::io(out.display().to_string(), e.to_string()))?;
    println!(
        "done: best psnr {:.3} dB at step {} ({:.1}s); checkpoints in {}",
        outcome.best_psnr,
        outcome.best_step,
        outcome.log.wall_seconds,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

fn cmd_infer(a: InferArgs) -> Result<(), DustError> {
    let cfg = checkpoint::peek_config(&a.ckpt)?;
    match cfg.precision {
        32 => run_infer::<f32>(&a),
        64 => run_infer::<f64>(&a),
        p => Err(DustError::config(format!("precision {p}"))),
    }
}

fn run_infer<P: Real>(a: &InferArgs) -> Result<(), DustError> {
    let loaded = checkpoint::load::<P>(&a.ckpt)?;
    let model = loaded.model;
    let img = read_image::<P>(&a.input)?;
    let (h, w) = (img.shape()[2], img.shape()[3]);
    let m = model.extent_multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded = if ph != h || pw != w {
        pad_br(&img, ph - h, pw - w, PadMode::Symmetric)?
    } else {
        img.clone()
    };
    let restored = with_no_grad(|| model.forward(&padded))?;
    let restored = if ph != h || pw != w { crop_br(&restored, h, w)? } else { restored };
    write_image(&restored, &a.out)?;
    println!("restored {} -> {} ({h}x{w})", a.input.display(), a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn cmd_eval(a: EvalArgs) -> Result<(), DustError> {
    let cfg = checkpoint::peek_config(&a.ckpt)?;
    match cfg.precision {
        32 => run_eval::<f32>(&a),
        64 => run_eval::<f64>(&a),
        p => Err(DustError::config(format!("precision {p}"))),
    }
}

fn run_eval<P: Real>(a: &EvalArgs) -> Result<(), DustError> {
    let loaded = checkpoint::load::<P>(&a.ckpt)?;
    let model = loaded.model;
    let clean_dir = a.pairs.join("clean");
    let dusty_dir = a.pairs.join("dusty");
    let cleans = list_images(&clean_dir)?;
    if cleans.is_empty() {
        return Err(DustError::io(clean_dir.display().to_string(), "no .png/.ppm images"));
    }
    println!("# ssim: single-scale, 11x11 gaussian sigma 1.5, k1=0.01 k2=0.03, RGB channels averaged");
    println!("# psnr: 10*log10(1/mse), max_val 1.0; entropy: 256-bin 8-bit luma histogram, bits");
    let mut rows = Vec::new();
    for clean_path in &cleans {
        let name = clean_path.file_name().unwrap().to_string_lossy().into_owned();
        let dusty_path = dusty_dir.join(&name);
        if !dusty_path.exists() {
            return Err(DustError::io(dusty_path.display().to_string(), "missing dusty partner"));
        }
        let clean = read_image::<P>(clean_path)?;
        let dusty = read_image::<P>(&dusty_path)?;
        let (h, w) = (dusty.shape()[2], dusty.shape()[3]);
        let m = model.extent_multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let padded = if ph != h || pw != w {
            pad_br(&dusty, ph - h, pw - w, PadMode::Symmetric)?
        } else {
            dusty.clone()
        };
        let restored = with_no_grad(|| model.forward(&padded))?;
        let restored = if ph != h || pw != w { crop_br(&restored, h, w)? } else { restored };
        let row = MetricRow {
            file: name,
            psnr_db: psnr(&restored, &clean, 1.0)?,
            ssim: ssim(&restored, &clean)?,
            entropy_bits: entropy(&restored)?,
        };
        println!("{}", metric_line(&row));
        rows.push(row);
    }
    let finite: Vec<f64> = rows.iter().map(|r| r.psnr_db).filter(|v| v.is_finite()).collect();
    if !finite.is_empty() {
        let mean_psnr = finite.iter().sum::<f64>() / finite.len() as f64;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / rows.len() as f64;
        println!("mean psnr_db={mean_psnr:.6} ssim={mean_ssim:.6} (finite rows only)");
    }
    let table = metric_table(&rows);
    print!("{table}");
    if let Some(path) = &a.table_out {
        std::fs::write(path, table).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck / info / ablate
// ---------------------------------------------------------------------------

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), DustError> {
    let reports = match &a.module {
        Some(name) => vec![verify::run_suite(name)?],
        None => verify::run_all()?,
    };
    let mut failed = None;
    for r in &reports {
        print!("{}", r.format());
        if !r.passed() && failed.is_none() {
            failed = Some((r.suite.clone(), r.first_failure().unwrap().name.clone()));
        }
    }
    match failed {
        None => {
            println!("all suites passed");
            Ok(())
        }
        Some((suite, case)) => Err(DustError::Verify { suite, detail: format!("case '{case}' failed") }),
    }
}

fn parse_resolution(s: &str) -> Result<(usize, usize), DustError> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| DustError::config(format!("--resolution expects HxW, got '{s}'")))?;
    let h: usize = h.parse().map_err(|_| DustError::config(format!("bad height '{h}'")))?;
    let w: usize = w.parse().map_err(|_| DustError::config(format!("bad width '{w}'")))?;
    Ok((h, w))
}

fn cmd_info(a: InfoArgs) -> Result<(), DustError> {
    let cfg = load_config(&a.config)?;
    let (h, w) = parse_resolution(&a.resolution)?;
    let params = match cfg.model.precision {
        64 => count_params(&DedustNet::<f64>::new(cfg.model.clone())?),
        _ => count_params(&DedustNet::<f32>::new(cfg.model.clone())?),
    };
    let flops = count_flops(&cfg.model, h, w);
    println!("config: {}", a.config);
    println!("resolution: {h}x{w}");
    println!("params: {params} ({:.4}M)", params as f64 / 1e6);
    println!("flops: {} ({:.4}G)", flops.total, flops.total as f64 / 1e9);
    println!("convention: {FLOP_CONVENTION}");
    for (name, f) in &flops.items {
        println!("  {name}: {f}");
    }
    if a.config == "table2" {
        let p_dev = (params as f64 - TABLE2_PARAM_TARGET) / TABLE2_PARAM_TARGET * 100.0;
        let f_dev = (flops.total as f64 - TABLE2_FLOP_TARGET) / TABLE2_FLOP_TARGET * 100.0;
        println!("published target params: 1.866M; deviation {p_dev:+.2}%");
        println!("published target flops: 4.08G; deviation {f_dev:+.2}%");
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), DustError> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
        cfg.train.epochs = None;
    }
    let toggles: Vec<Toggle> = a
        .toggles
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| Toggle::parse(s.trim()))
        .collect::<Result<_, _>>()?;
    let mut print_line = |line: &str| println!("{line}");
    let rows = match cfg.model.precision {
        64 => ablate::<f64>(&cfg.model, &cfg.train, &toggles, a.images, &mut print_line)?,
        _ => ablate::<f32>(&cfg.model, &cfg.train, &toggles, a.images, &mut print_line)?,
    };
    let table = format_ablation_table(&rows);
    print!("{table}");
    if let Some(path) = &a.out {
        std::fs::write(path, table).map_err(|e| DustError::io(path.display().to_string(), e.to_string()))?;
    }
    Ok(())
}
