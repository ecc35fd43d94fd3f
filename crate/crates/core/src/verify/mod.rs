//! Self-verification suites: wavelet reconstruction, operator gradients,
//! attention oracle equivalence, block gradients, and objective checks.
//!
//! The `gradcheck` CLI subcommand runs these and fails (exit 4) on the first
//! suite with a failing case; the acceptance tests reuse the same suites.

pub mod reference;

use crate::attention::{
    add_window_mask, mhca, mhsa, sfas_branch, window_partition, window_reverse, AttentionHeads,
    MhcaParams, MhsaParams, SfasParams, WindowGrid,
};
use crate::error::{DustError, Result};
use crate::net::blocks::{Cifm, Dcm, DwtFormerBlock, IdwtFormerBlock, MixerSpec};
use crate::net::config::ModelConfig;
use crate::net::model::DedustNet;
use crate::objectives::losses::{l1_loss, ms_ssim, total_loss, LossWeights};
use crate::objectives::perceptual::PerceptualExtractor;
use crate::param::ParamSet;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tensor::{
    self, gradcheck, mean_all, softmax, with_no_grad, GradcheckOptions, Tensor,
};
use crate::wavelet::{dwt2, dwt2_packed, idwt2, idwt2_packed, pack_bands, unpack_bands, Subbands, WaveletBasis};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&CaseResult> {
        self.cases.iter().find(|c| !c.passed)
    }

    pub fn format(&self) -> String {
        let mut s = format!("suite {} [{}]\n", self.suite, if self.passed() { "PASS" } else { "FAIL" });
        for c in &self.cases {
            s.push_str(&format!("  {} {} ({})\n", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail));
        }
        s
    }
}

pub const SUITES: [&str; 6] = ["wavelet", "tensor-ops", "attention", "blocks", "objectives", "model"];

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    match name {
        "wavelet" => Ok(wavelet_suite()),
        "tensor-ops" => Ok(tensor_ops_suite()),
        "attention" => Ok(attention_suite()),
        "blocks" => Ok(blocks_suite()),
        "objectives" => Ok(objectives_suite()),
        "model" => Ok(model_suite()),
        other => Err(DustError::config(format!("unknown suite '{other}' ({})", SUITES.join("|")))),
    }
}

pub fn run_all() -> Result<Vec<SuiteReport>> {
    SUITES.iter().map(|s| run_suite(s)).collect()
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

fn rand_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = rng_from_seed(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn case(name: &str, passed: bool, detail: impl Into<String>) -> CaseResult {
    CaseResult { name: name.to_string(), passed, detail: detail.into() }
}

fn err_case(name: &str, e: &DustError) -> CaseResult {
    case(name, false, format!("error: {e}"))
}

/// Run gradcheck over three seeds and fold into one case.
fn gc_case<F, M>(name: &str, make_inputs: M, f: F, opts: GradcheckOptions) -> CaseResult
where
    M: Fn(u64) -> Vec<Tensor<f64>>,
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let inputs = make_inputs(seed);
        match gradcheck(&f, &inputs, GradcheckOptions { seed, ..opts }) {
            Ok(rep) => {
                worst = worst.max(rep.max_err());
                if !rep.passed {
                    return case(name, false, format!("seed {seed}: max err {:.3e} > {:.1e}", rep.max_err(), opts.tolerance));
                }
            }
            Err(e) => return err_case(name, &e),
        }
    }
    case(name, true, format!("max err {worst:.3e} < {:.1e}, 3 seeds", opts.tolerance))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// wavelet suite
// ---------------------------------------------------------------------------

fn wavelet_suite() -> SuiteReport {
    let mut cases = Vec::new();
    for basis in [WaveletBasis::db1(), WaveletBasis::db2()] {
        // filter invariants
        let lo2: f64 = basis.lowpass().iter().map(|v| v * v).sum();
        let hi2: f64 = basis.highpass().iter().map(|v| v * v).sum();
        let dot: f64 = basis.lowpass().iter().zip(basis.highpass()).map(|(a, b)| a * b).sum();
        cases.push(case(
            &format!("{}-filter-orthonormal", basis.name()),
            (lo2 - 1.0).abs() < 1e-12 && (hi2 - 1.0).abs() < 1e-12 && dot.abs() < 1e-12,
            format!("|lo|^2-1={:.1e}, |hi|^2-1={:.1e}, <lo,hi>={:.1e}", lo2 - 1.0, hi2 - 1.0, dot),
        ));

        // perfect reconstruction + Parseval over a random corpus
        let mut rng = rng_from_seed(11);
        let mut worst_pr = 0.0f64;
        let mut worst_energy = 0.0f64;
        for i in 0..50u64 {
            let c = rng.gen_range(1..4usize);
            let h = 2 * rng.gen_range(2..17usize);
            let w = 2 * rng.gen_range(2..17usize);
            let x = rand_tensor(&[1, c, h, w], derive_seed(97, basis.name(), i), -1.0, 1.0);
            let bands = dwt2(&x, &basis).unwrap();
            let back = idwt2(&bands, &basis).unwrap();
            worst_pr = worst_pr.max(max_abs_diff(x.data(), back.data()));
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            let eb: f64 = [&bands.ll, &bands.lh, &bands.hl, &bands.hh]
                .iter()
                .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            worst_energy = worst_energy.max(((eb - ex) / ex).abs());
        }
        cases.push(case(
            &format!("{}-perfect-reconstruction", basis.name()),
            worst_pr < 1e-9,
            format!("max |idwt(dwt(x))-x| = {worst_pr:.3e} over 50 tensors"),
        ));
        cases.push(case(
            &format!("{}-parseval", basis.name()),
            worst_energy < 1e-9,
            format!("max relative energy error = {worst_energy:.3e}"),
        ));

        // odd-extent pad round trip
        let x = rand_tensor(&[1, 2, 9, 7], derive_seed(98, basis.name(), 0), -1.0, 1.0);
        let bands = dwt2(&x, &basis).unwrap();
        let back = idwt2(&bands, &basis).unwrap();
        let d = max_abs_diff(x.data(), back.data());
        cases.push(case(
            &format!("{}-odd-extent-roundtrip", basis.name()),
            back.shape() == x.shape() && d < 1e-9,
            format!("max err {d:.3e}"),
        ));

        // matrix-form oracle on an 8x8 plane
        let n = 8usize;
        let m = reference::wavelet_analysis_matrix(n, &basis);
        let x = rand_tensor(&[1, 1, n, n], derive_seed(99, basis.name(), 0), -1.0, 1.0);
        let packed = dwt2_packed(&x, &basis).unwrap();
        let by_matrix = reference::matmul_reference(&m, x.data(), n * n, n * n, 1);
        let d = max_abs_diff(packed.data(), &by_matrix);
        cases.push(case(
            &format!("{}-matrix-oracle-analysis", basis.name()),
            d < 1e-10,
            format!("max err {d:.3e}"),
        ));

        // synthesis is the transpose: idwt(packed) == M^T . packed
        let y = rand_tensor(&[1, 1, n / 2, n / 2], derive_seed(100, basis.name(), 0), -1.0, 1.0);
        let zero = Tensor::zeros(&[1usize, 1, n / 2, n / 2]);
        let bands = Subbands::new(zero.clone(), y.clone(), zero.clone(), zero.clone()).unwrap();
        let recon = idwt2(&bands, &basis).unwrap();
        let mut packed_vec = vec![0.0; n * n];
        packed_vec[(n / 2) * (n / 2)..2 * (n / 2) * (n / 2)].copy_from_slice(y.data());
        let mut by_t = vec![0.0; n * n];
        for row in 0..n * n {
            for col in 0..n * n {
                by_t[col] += m[row * n * n + col] * packed_vec[row];
            }
        }
        let d = max_abs_diff(recon.data(), &by_t);
        cases.push(case(
            &format!("{}-matrix-oracle-synthesis", basis.name()),
            d < 1e-10,
            format!("lh impulse atoms, max err {d:.3e}"),
        ));
    }

    // constant input: Haar ll = 2c, details exactly zero
    let c = 0.37f64;
    let x = Tensor::full(&[1usize, 1, 4, 4], c);
    let bands = dwt2(&x, &WaveletBasis::db1()).unwrap();
    let ll_ok = bands.ll.data().iter().all(|v| (v - 2.0 * c).abs() < 1e-12);
    let detail_max = [&bands.lh, &bands.hl, &bands.hh]
        .iter()
        .flat_map(|t| t.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    cases.push(case(
        "haar-constant-input",
        ll_ok && detail_max < 1e-12,
        format!("ll==2c, max detail {detail_max:.3e}"),
    ));

    // pack order: zeroing hh zeroes exactly channels [3C, 4C)
    let ch = 3usize;
    let x = rand_tensor(&[1, ch, 8, 8], 5, -1.0, 1.0);
    let bands = dwt2(&x, &WaveletBasis::db1()).unwrap();
    let zeroed = Subbands::new(bands.ll.clone(), bands.lh.clone(), bands.hl.clone(), Tensor::zeros(bands.band_shape()))
        .unwrap();
    let packed = pack_bands(&zeroed).unwrap();
    let quad = 4 * 4;
    let mut order_ok = true;
    for cc in 0..4 * ch {
        let band = &packed.data()[cc * quad..(cc + 1) * quad];
        let is_zero = band.iter().all(|&v| v == 0.0);
        if cc >= 3 * ch {
            order_ok &= is_zero;
        } else {
            order_ok &= !is_zero;
        }
    }
    let unpacked = unpack_bands(&packed).unwrap();
    order_ok &= unpacked.ll.data() == bands.ll.data() && unpacked.hh.data().iter().all(|&v| v == 0.0);
    cases.push(case("pack-band-order", order_ok, "hh occupies channels [3C,4C)"));

    // analysis gradient
    cases.push(gc_case(
        "dwt2-gradcheck",
        |seed| vec![rand_tensor(&[1, 2, 6, 6], derive_seed(12, "dwtgc", seed), -1.0, 1.0)],
        |xs| mean_all(&tensor::mul(&dwt2_packed(&xs[0], &WaveletBasis::db2())?, &dwt2_packed(&xs[0], &WaveletBasis::db2())?)?),
        GradcheckOptions::with_tolerance(1e-6),
    ));
    cases.push(gc_case(
        "idwt2-gradcheck",
        |seed| vec![rand_tensor(&[1, 8, 3, 3], derive_seed(13, "idwtgc", seed), -1.0, 1.0)],
        |xs| {
            let up = idwt2_packed(&xs[0], &WaveletBasis::db2())?;
            mean_all(&tensor::mul(&up, &up)?)
        },
        GradcheckOptions::with_tolerance(1e-6),
    ));

    SuiteReport { suite: "wavelet".into(), cases }
}

// ---------------------------------------------------------------------------
// tensor op suite
// ---------------------------------------------------------------------------

fn tensor_ops_suite() -> SuiteReport {
    let mut cases = Vec::new();
    let tol5 = GradcheckOptions::with_tolerance(1e-5);

    // conv2d vs six-loop reference
    {
        let x = rand_tensor(&[1, 2, 6, 6], 21, -1.0, 1.0);
        let w = rand_tensor(&[3, 2, 3, 3], 22, -0.5, 0.5);
        let b = rand_tensor(&[3], 23, -0.5, 0.5);
        let y = tensor::conv2d(&x, &w, Some(&b), 1, 1, 1).unwrap();
        let r = reference::conv2d_reference(x.data(), 1, 2, 6, 6, w.data(), 3, 3, Some(b.data()), 1, 1, 1);
        let d = max_abs_diff(y.data(), &r);
        cases.push(case("conv2d-vs-reference", d < 1e-6, format!("max err {d:.3e}")));

        let y2 = tensor::conv2d(&x, &w, Some(&b), 2, 0, 2).unwrap();
        let r2 = reference::conv2d_reference(x.data(), 1, 2, 6, 6, w.data(), 3, 3, Some(b.data()), 2, 0, 2);
        let d2 = max_abs_diff(y2.data(), &r2);
        cases.push(case("conv2d-strided-dilated-vs-reference", d2 < 1e-6, format!("max err {d2:.3e}")));
    }

    // linear vs matmul reference
    {
        let x = rand_tensor(&[4, 8], 24, -1.0, 1.0);
        let w = rand_tensor(&[5, 8], 25, -1.0, 1.0);
        let y = tensor::linear(&x, &w, None).unwrap();
        let wt = tensor::transpose(&w, 0, 1).unwrap();
        let r = reference::matmul_reference(x.data(), wt.data(), 4, 8, 5);
        let d = max_abs_diff(y.data(), &r);
        cases.push(case("linear-vs-matmul-reference", d < 1e-6, format!("max err {d:.3e}")));
    }

    // softmax pinned values
    {
        let u = softmax(&Tensor::from_vec(&[4], vec![1.0f64; 4]).unwrap(), 0).unwrap();
        let uniform_ok = u.data().iter().all(|&v| (v - 0.25).abs() < 1e-12);
        let l = softmax(&Tensor::from_vec(&[2], vec![0.0f64, 3.0f64.ln()]).unwrap(), 0).unwrap();
        let analytic_ok = (l.data()[0] - 0.25).abs() < 1e-12 && (l.data()[1] - 0.75).abs() < 1e-12;
        let big = softmax(&Tensor::from_vec(&[2], vec![1000.0f64, 1000.0]).unwrap(), 0).unwrap();
        let stable_ok = (big.data()[0] - 0.5).abs() < 1e-12 && big.data()[1].is_finite();
        cases.push(case(
            "softmax-pinned-values",
            uniform_ok && analytic_ok && stable_ok,
            "uniform, [0,ln3], overflow-stability",
        ));
    }

    // gradchecks for every differentiable op
    let r = |shape: &'static [usize], tag: u64, lo: f64, hi: f64| {
        move |seed: u64| vec![rand_tensor(shape, derive_seed(tag, "ops", seed), lo, hi)]
    };
    cases.push(gc_case(
        "conv2d-gradcheck",
        |seed| {
            vec![
                rand_tensor(&[1, 2, 5, 5], derive_seed(31, "cx", seed), -1.0, 1.0),
                rand_tensor(&[2, 2, 3, 3], derive_seed(32, "cw", seed), -0.5, 0.5),
                rand_tensor(&[2], derive_seed(33, "cb", seed), -0.5, 0.5),
            ]
        },
        |xs| mean_all(&tensor::mul(&tensor::conv2d(&xs[0], &xs[1], Some(&xs[2]), 1, 1, 1)?, &tensor::conv2d(&xs[0], &xs[1], Some(&xs[2]), 1, 1, 1)?)?),
        GradcheckOptions::with_tolerance(1e-6),
    ));
    cases.push(gc_case(
        "linear-gradcheck",
        |seed| {
            vec![
                rand_tensor(&[3, 4], derive_seed(34, "lx", seed), -1.0, 1.0),
                rand_tensor(&[5, 4], derive_seed(35, "lw", seed), -1.0, 1.0),
                rand_tensor(&[5], derive_seed(36, "lb", seed), -1.0, 1.0),
            ]
        },
        |xs| {
            let y = tensor::linear(&xs[0], &xs[1], Some(&xs[2]))?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "bmm-gradcheck",
        |seed| {
            vec![
                rand_tensor(&[2, 3, 4], derive_seed(37, "ba", seed), -1.0, 1.0),
                rand_tensor(&[2, 4, 5], derive_seed(38, "bb", seed), -1.0, 1.0),
            ]
        },
        |xs| {
            let y = tensor::bmm(&xs[0], &xs[1])?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "softmax-gradcheck",
        r(&[2, 5], 39, -2.0, 2.0),
        |xs| {
            let y = softmax(&xs[0], 1)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "layer_norm-gradcheck",
        |seed| {
            vec![
                rand_tensor(&[2, 6, 3, 3], derive_seed(40, "nx", seed), -1.0, 1.0),
                rand_tensor(&[6], derive_seed(41, "ng", seed), 0.5, 1.5),
                rand_tensor(&[6], derive_seed(42, "nb", seed), -0.5, 0.5),
            ]
        },
        |xs| {
            let y = tensor::layer_norm(&xs[0], 1, &xs[1], &xs[2], 1e-5)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));

    // elementwise and shape ops, each composed to a scalar
    type Builder = fn(&[Tensor<f64>]) -> Result<Tensor<f64>>;
    let unary_cases: Vec<(&str, (f64, f64), Builder)> = vec![
        ("add-gradcheck", (-1.0, 1.0), |xs| mean_all(&tensor::mul(&tensor::add(&xs[0], &xs[0])?, &xs[0])?)),
        ("sub-mul-gradcheck", (-1.0, 1.0), |xs| {
            let y = tensor::sub(&tensor::mul(&xs[0], &xs[0])?, &xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("div-gradcheck", (0.5, 2.0), |xs| {
            let y = tensor::div(&tensor::add_scalar(&xs[0], 3.0)?, &xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("abs-gradcheck", (0.1, 1.0), |xs| mean_all(&tensor::abs(&xs[0])?)),
        ("relu-gradcheck", (0.1, 1.0), |xs| mean_all(&tensor::relu(&xs[0])?)),
        ("sigmoid-gradcheck", (-2.0, 2.0), |xs| {
            let y = tensor::sigmoid(&xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("gelu-gradcheck", (-2.0, 2.0), |xs| {
            let y = tensor::gelu(&xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("clamp01-gradcheck", (0.05, 0.95), |xs| mean_all(&tensor::clamp01(&xs[0])?)),
        ("powf-gradcheck", (0.5, 2.0), |xs| mean_all(&tensor::powf_scalar(&xs[0], 0.7)?)),
        ("mean-gradcheck", (-1.0, 1.0), |xs| mean_all(&tensor::mul(&xs[0], &xs[0])?)),
        ("reshape-gradcheck", (-1.0, 1.0), |xs| {
            let y = tensor::reshape(&xs[0], &[4, 4])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("permute-gradcheck", (-1.0, 1.0), |xs| {
            let y = tensor::permute(&tensor::reshape(&xs[0], &[2, 2, 4])?, &[2, 0, 1])?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
        ("slice-concat-gradcheck", (-1.0, 1.0), |xs| {
            let x = tensor::reshape(&xs[0], &[4, 4])?;
            let parts = tensor::split(&x, 1, &[1, 3])?;
            let y = tensor::concat(&[parts[1].clone(), parts[0].clone()], 1)?;
            mean_all(&tensor::mul(&y, &y)?)
        }),
    ];
    for (name, (lo, hi), f) in unary_cases {
        cases.push(gc_case(name, r(&[16], 50 + name.len() as u64, lo, hi), f, tol5));
    }

    cases.push(gc_case(
        "pad-crop-gradcheck",
        r(&[1, 2, 3, 4], 60, -1.0, 1.0),
        |xs| {
            let padded = tensor::pad_br(&xs[0], 1, 2, tensor::PadMode::Symmetric)?;
            let zp = tensor::pad_br(&padded, 1, 0, tensor::PadMode::Zero)?;
            let y = tensor::crop_br(&zp, 3, 4)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "upsample-gradcheck",
        r(&[1, 2, 3, 3], 61, -1.0, 1.0),
        |xs| {
            let y = tensor::upsample_nearest(&xs[0], 2)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "depthwise-filter-gradcheck",
        r(&[1, 2, 5, 5], 62, -1.0, 1.0),
        |xs| {
            let kern = vec![0.25f64, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 0.25];
            let y = tensor::depthwise_filter2d(&xs[0], &kern, 3, 1)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        tol5,
    ));
    cases.push(gc_case(
        "window-partition-gradcheck",
        r(&[1, 2, 5, 7], 63, -1.0, 1.0),
        |xs| {
            let grid = WindowGrid::new(5, 7, 4, 2)?;
            let wdw = window_partition(&xs[0], &grid)?;
            let back = window_reverse(&wdw, &grid, 1)?;
            let a = mean_all(&tensor::mul(&wdw, &wdw)?)?;
            let b = mean_all(&tensor::mul(&back, &back)?)?;
            tensor::add(&a, &b)
        },
        tol5,
    ));

    SuiteReport { suite: "tensor-ops".into(), cases }
}

// ---------------------------------------------------------------------------
// attention suite
// ---------------------------------------------------------------------------

fn random_mhsa_params(c: usize, heads: usize, window: usize, seed: u64, with_bias: bool) -> MhsaParams<f64> {
    MhsaParams {
        qkv_w: rand_tensor(&[3 * c, c], derive_seed(seed, "qkvw", 0), -0.4, 0.4),
        qkv_b: rand_tensor(&[3 * c], derive_seed(seed, "qkvb", 0), -0.1, 0.1),
        proj_w: rand_tensor(&[c, c], derive_seed(seed, "projw", 0), -0.4, 0.4),
        proj_b: rand_tensor(&[c], derive_seed(seed, "projb", 0), -0.1, 0.1),
        rel_bias: with_bias.then(|| {
            rand_tensor(&[heads, (2 * window - 1) * (2 * window - 1)], derive_seed(seed, "bias", 0), -0.3, 0.3)
        }),
    }
}

fn attention_suite() -> SuiteReport {
    let mut cases = Vec::new();

    // partition/reverse identity over assorted shapes incl. padding and shift
    {
        let mut ok = true;
        let mut detail = String::new();
        for (h, w, win, shift) in [(8, 8, 4, 0), (8, 8, 4, 2), (9, 7, 4, 2), (5, 17, 4, 0), (6, 6, 8, 0)] {
            let x = rand_tensor(&[2, 3, h, w], derive_seed(70, "prt", (h * 31 + w) as u64), -1.0, 1.0);
            let grid = WindowGrid::new(h, w, win, shift).unwrap();
            let parts = window_partition(&x, &grid).unwrap();
            let back = window_reverse(&parts, &grid, 2).unwrap();
            if back.data() != x.data() {
                ok = false;
                detail = format!("mismatch at {h}x{w} win {win} shift {shift}");
                break;
            }
        }
        cases.push(case("partition-reverse-identity", ok, if detail.is_empty() { "exact on all shapes".into() } else { detail }));
    }

    // shifted index trace on an 8x8 ramp
    {
        let data: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let x = Tensor::from_vec(&[1, 1, 8, 8], data).unwrap();
        let grid = WindowGrid::new(8, 8, 4, 2).unwrap();
        let parts = window_partition(&x, &grid).unwrap();
        // window 0, token (ty,tx) should hold ramp value of source (ty+2, tx+2)
        let mut ok = true;
        for ty in 0..4 {
            for tx in 0..4 {
                let got = parts.data()[ty * 4 + tx];
                let want = ((ty + 2) * 8 + tx + 2) as f64;
                ok &= got == want;
            }
        }
        cases.push(case("shift-index-trace", ok, "top-left window holds rows/cols 2..5"));
    }

    // seam masking: post-softmax weight across the wrap seam is exactly zero
    {
        let grid = WindowGrid::new(8, 8, 4, 2).unwrap();
        let l = grid.tokens_per_window();
        let mask = grid.mask_values::<f64>().unwrap();
        let scores = Tensor::from_vec(&[grid.n_windows(), 1, l, l], vec![0.0f64; grid.n_windows() * l * l]).unwrap();
        let masked = add_window_mask(&scores, mask.clone(), grid.n_windows()).unwrap();
        let weights = softmax(&masked, 3).unwrap();
        let mut max_cross: f64 = 0.0;
        let mut found_masked = false;
        for v in 0..grid.n_windows() {
            for i in 0..l {
                for j in 0..l {
                    if mask[(v * l + i) * l + j] != 0.0 {
                        found_masked = true;
                        max_cross = max_cross.max(weights.data()[v * l * l + i * l + j]);
                    }
                }
            }
        }
        cases.push(case(
            "shift-seam-masked",
            found_masked && max_cross < 1e-30,
            format!("max cross-seam weight {max_cross:.1e}"),
        ));
    }

    // row sums of attention weights equal 1
    {
        let grid = WindowGrid::new(8, 8, 4, 2).unwrap();
        let l = grid.tokens_per_window();
        let scores = rand_tensor(&[grid.n_windows(), 2, l, l], 71, -1.0, 1.0);
        let masked = add_window_mask(&scores, grid.mask_values::<f64>().unwrap(), grid.n_windows()).unwrap();
        let weights = softmax(&masked, 3).unwrap();
        let mut worst: f64 = 0.0;
        for row in weights.data().chunks(l) {
            let s: f64 = row.iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
        cases.push(case("attention-rows-sum-to-one", worst < 1e-6, format!("max |sum-1| = {worst:.3e}")));
    }

    // single-token window with identity projections returns the value vector
    {
        let c = 3usize;
        let x = rand_tensor(&[1, c, 2, 2], 72, -1.0, 1.0);
        let grid = WindowGrid::new(2, 2, 1, 0).unwrap();
        let heads = AttentionHeads::new(c, 1).unwrap();
        let mut qkv = vec![0.0f64; 3 * c * c];
        for i in 0..c {
            qkv[i * c + i] = 1.0; // q = x
            qkv[(c + i) * c + i] = 1.0; // k = x
            qkv[(2 * c + i) * c + i] = 1.0; // v = x
        }
        let mut proj = vec![0.0f64; c * c];
        for i in 0..c {
            proj[i * c + i] = 1.0;
        }
        let p = MhsaParams {
            qkv_w: Tensor::from_vec(&[3 * c, c], qkv).unwrap(),
            qkv_b: Tensor::zeros(&[3 * c]),
            proj_w: Tensor::from_vec(&[c, c], proj).unwrap(),
            proj_b: Tensor::zeros(&[c]),
            rel_bias: None,
        };
        let y = mhsa(&x, &grid, &heads, &p).unwrap();
        let d = max_abs_diff(y.data(), x.data());
        cases.push(case("single-token-identity", d < 1e-12, format!("max err {d:.3e}")));
    }

    // zero query/key projections: output is the per-window mean of values
    {
        let c = 2usize;
        let win = 2usize;
        let x = rand_tensor(&[1, c, 2, 2], 73, -1.0, 1.0);
        let grid = WindowGrid::new(2, 2, win, 0).unwrap();
        let heads = AttentionHeads::new(c, 1).unwrap();
        let mut qkv = vec![0.0f64; 3 * c * c];
        for i in 0..c {
            qkv[(2 * c + i) * c + i] = 1.0; // only v = x
        }
        let mut proj = vec![0.0f64; c * c];
        for i in 0..c {
            proj[i * c + i] = 1.0;
        }
        let p = MhsaParams {
            qkv_w: Tensor::from_vec(&[3 * c, c], qkv).unwrap(),
            qkv_b: Tensor::zeros(&[3 * c]),
            proj_w: Tensor::from_vec(&[c, c], proj).unwrap(),
            proj_b: Tensor::zeros(&[c]),
            rel_bias: None,
        };
        let y = mhsa(&x, &grid, &heads, &p).unwrap();
        let hw = 4usize;
        let mut ok = true;
        for ci in 0..c {
            let mean: f64 = x.data()[ci * hw..(ci + 1) * hw].iter().sum::<f64>() / hw as f64;
            for i in 0..hw {
                ok &= (y.data()[ci * hw + i] - mean).abs() < 1e-12;
            }
        }
        cases.push(case("uniform-softmax-means-values", ok, "qk = 0 gives value mean"));
    }

    // mhsa vs the loop oracle
    {
        let mut worst: f64 = 0.0;
        for (n, c, h, w, win, heads, bias) in
            [(1, 4, 4, 4, 4, 2, false), (2, 8, 8, 8, 4, 4, true), (1, 4, 2, 2, 2, 1, false)]
        {
            let x = rand_tensor(&[n, c, h, w], derive_seed(74, "ox", (c + h) as u64), -1.0, 1.0);
            let p = random_mhsa_params(c, heads, win, derive_seed(74, "op", c as u64), bias);
            let grid = WindowGrid::new(h, w, win, 0).unwrap();
            let ah = AttentionHeads::new(c, heads).unwrap();
            let y = mhsa(&x, &grid, &ah, &p).unwrap();
            let oracle = reference::mhsa_oracle(
                x.data(),
                n,
                c,
                h,
                w,
                win,
                heads,
                &reference::AttnOracleParams {
                    qkv_w: p.qkv_w.data(),
                    qkv_b: p.qkv_b.data(),
                    proj_w: p.proj_w.data(),
                    proj_b: p.proj_b.data(),
                    rel_bias: p.rel_bias.as_ref().map(|t| t.data()),
                },
            );
            worst = worst.max(max_abs_diff(y.data(), &oracle));
        }
        cases.push(case("mhsa-vs-loop-oracle", worst < 1e-6, format!("max err {worst:.3e}")));
    }

    // mhca vs oracle + sigmoid and its pinned zero case
    {
        let (n, c, h, w, win, heads) = (2, 4, 4, 4, 4, 2);
        let xq = rand_tensor(&[n, c, h, w], 75, -1.0, 1.0);
        let xkv = rand_tensor(&[n, c, h, w], 76, -1.0, 1.0);
        let q_w = rand_tensor(&[c, c], 77, -0.4, 0.4);
        let q_b = rand_tensor(&[c], 78, -0.1, 0.1);
        let kv_w = rand_tensor(&[2 * c, c], 79, -0.4, 0.4);
        let kv_b = rand_tensor(&[2 * c], 80, -0.1, 0.1);
        let proj_w = rand_tensor(&[c, c], 81, -0.4, 0.4);
        let proj_b = rand_tensor(&[c], 82, -0.1, 0.1);
        let grid = WindowGrid::new(h, w, win, 0).unwrap();
        let ah = AttentionHeads::new(c, heads).unwrap();
        let p = MhcaParams {
            q_w: q_w.clone(),
            q_b: q_b.clone(),
            kv_w: kv_w.clone(),
            kv_b: kv_b.clone(),
            proj_w: proj_w.clone(),
            proj_b: proj_b.clone(),
        };
        let gate = mhca(&xq, &xkv, &grid, &ah, &p).unwrap();
        let oracle = reference::mhca_oracle(
            xq.data(),
            xkv.data(),
            n,
            c,
            h,
            w,
            win,
            heads,
            q_w.data(),
            q_b.data(),
            kv_w.data(),
            kv_b.data(),
            proj_w.data(),
            proj_b.data(),
        );
        let d = max_abs_diff(gate.data(), &oracle);
        let range_ok = gate.data().iter().all(|&v| v > 0.0 && v < 1.0);
        cases.push(case("mhca-vs-loop-oracle", d < 1e-6 && range_ok, format!("max err {d:.3e}, gate in (0,1)")));

        let zeros = MhcaParams {
            q_w: Tensor::zeros(&[c, c]),
            q_b: Tensor::zeros(&[c]),
            kv_w: Tensor::zeros(&[2 * c, c]),
            kv_b: Tensor::zeros(&[2 * c]),
            proj_w: Tensor::zeros(&[c, c]),
            proj_b: Tensor::zeros(&[c]),
        };
        let gate0 = mhca(&xq, &xkv, &grid, &ah, &zeros).unwrap();
        let half_ok = gate0.data().iter().all(|&v| v == 0.5);
        cases.push(case("mhca-zero-projections-half-gate", half_ok, "sigmoid(0) = 0.5 everywhere"));
    }

    // permutation equivariance of token order (no bias, no mask)
    {
        let c = 4usize;
        let x = rand_tensor(&[1, c, 2, 2], 83, -1.0, 1.0);
        let p = random_mhsa_params(c, 2, 2, 84, false);
        let grid = WindowGrid::new(2, 2, 2, 0).unwrap();
        let ah = AttentionHeads::new(c, 2).unwrap();
        let y = mhsa(&x, &grid, &ah, &p).unwrap();
        // swap the two left tokens (0,0) <-> (1,0): a spatial permutation within the window
        let hw = 4usize;
        let mut xp = x.data().to_vec();
        let mut yp = y.data().to_vec();
        for ci in 0..c {
            xp.swap(ci * hw, ci * hw + 2);
            yp.swap(ci * hw, ci * hw + 2);
        }
        let y2 = mhsa(&Tensor::from_vec(&[1, c, 2, 2], xp).unwrap(), &grid, &ah, &p).unwrap();
        let d = max_abs_diff(y2.data(), &yp);
        cases.push(case("token-permutation-equivariance", d < 1e-10, format!("max err {d:.3e}")));
    }

    // SFAS zero branch reduces to the left half of the fuse projection
    {
        let c = 3usize;
        let x = rand_tensor(&[1, c, 5, 5], 85, -1.0, 1.0);
        let zero_sfas = SfasParams {
            conv1_w: Tensor::zeros(&[c, c, 3, 3]),
            conv1_b: Tensor::zeros(&[c]),
            conv2_w: Tensor::zeros(&[c, c, 3, 3]),
            conv2_b: Tensor::zeros(&[c]),
        };
        let branch = sfas_branch(&x, &zero_sfas).unwrap();
        let branch_zero = branch.data().iter().all(|&v| v == 0.0);
        let fuse_w = rand_tensor(&[c, 2 * c, 1, 1], 86, -0.5, 0.5);
        let fuse_b = rand_tensor(&[c], 87, -0.1, 0.1);
        let fused = crate::attention::fuse_branches(&x, &branch, &fuse_w, &fuse_b).unwrap();
        // left half of the fuse kernel applied to x alone
        let mut left = vec![0.0f64; c * c];
        for co in 0..c {
            for ci in 0..c {
                left[co * c + ci] = fuse_w.data()[co * 2 * c + ci];
            }
        }
        let lw = Tensor::from_vec(&[c, c, 1, 1], left).unwrap();
        let direct = tensor::conv2d(&x, &lw, Some(&fuse_b), 1, 0, 1).unwrap();
        let d = max_abs_diff(fused.data(), direct.data());
        cases.push(case(
            "sfas-zero-branch-reduces-to-attention-path",
            branch_zero && d < 1e-12,
            format!("max err {d:.3e}"),
        ));
    }

    // gradient checks through the attention compositions
    cases.push(gc_case(
        "mhsa-gradcheck",
        |seed| {
            let c = 4;
            vec![
                rand_tensor(&[1, c, 6, 6], derive_seed(88, "gx", seed), -1.0, 1.0),
                rand_tensor(&[3 * c, c], derive_seed(88, "gqkv", seed), -0.4, 0.4),
                rand_tensor(&[c, c], derive_seed(88, "gproj", seed), -0.4, 0.4),
                rand_tensor(&[2, 49], derive_seed(88, "gbias", seed), -0.3, 0.3),
            ]
        },
        |xs| {
            let grid = WindowGrid::new(6, 6, 4, 2)?;
            let heads = AttentionHeads::new(4, 2)?;
            let p = MhsaParams {
                qkv_w: xs[1].clone(),
                qkv_b: Tensor::zeros(&[12]),
                proj_w: xs[2].clone(),
                proj_b: Tensor::zeros(&[4]),
                rel_bias: Some(xs[3].clone()),
            };
            let y = mhsa(&xs[0], &grid, &heads, &p)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::with_tolerance(1e-4),
    ));
    cases.push(gc_case(
        "mhca-gradcheck",
        |seed| {
            let c = 4;
            vec![
                rand_tensor(&[1, c, 4, 4], derive_seed(89, "ga", seed), -1.0, 1.0),
                rand_tensor(&[1, c, 4, 4], derive_seed(89, "gb", seed), -1.0, 1.0),
                rand_tensor(&[c, c], derive_seed(89, "gq", seed), -0.4, 0.4),
                rand_tensor(&[2 * c, c], derive_seed(89, "gkv", seed), -0.4, 0.4),
            ]
        },
        |xs| {
            let grid = WindowGrid::new(4, 4, 4, 0)?;
            let heads = AttentionHeads::new(4, 2)?;
            let p = MhcaParams {
                q_w: xs[2].clone(),
                q_b: Tensor::zeros(&[4]),
                kv_w: xs[3].clone(),
                kv_b: Tensor::zeros(&[8]),
                proj_w: rand_tensor(&[4, 4], 999, -0.4, 0.4),
                proj_b: Tensor::zeros(&[4]),
            };
            let y = mhca(&xs[0], &xs[1], &grid, &heads, &p)?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::with_tolerance(1e-4),
    ));

    SuiteReport { suite: "attention".into(), cases }
}

// ---------------------------------------------------------------------------
// block suite
// ---------------------------------------------------------------------------

fn zero_params(ps: &ParamSet<f64>, keep_norm: bool) {
    for p in ps.iter() {
        let name = p.name();
        if keep_norm && (name.contains(".ln1.") || name.contains(".ln2.")) {
            continue;
        }
        p.set_data(vec![0.0; p.numel()]).unwrap();
    }
}

fn mixer_spec(c: usize, heads: usize) -> MixerSpec {
    MixerSpec { channels: c, num_heads: heads, window: 4, shift: 0, mlp_hidden: 2 * c, sfas: true, rel_bias: true }
}

fn blocks_suite() -> SuiteReport {
    let mut cases = Vec::new();
    let basis = WaveletBasis::db1();

    // zero-weight mixer: DWTFormer output equals its post-DWT projection
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(1);
        let block = DwtFormerBlock::build(&mut ps, &mut rng, "b", 2, &mixer_spec(4, 2), true, &basis).unwrap();
        // zero everything except pre-projection and layer norms
        for p in ps.iter() {
            let name = p.name();
            if name.starts_with("b.pre.") || name.contains(".ln1.") || name.contains(".ln2.") {
                continue;
            }
            p.set_data(vec![0.0; p.numel()]).unwrap();
        }
        let x = rand_tensor(&[1, 2, 8, 8], 2, 0.0, 1.0);
        let y = block.forward(&x).unwrap();
        let packed = crate::net::blocks::wavelet_down(&x, &basis).unwrap();
        let pre = ps.find("b.pre.weight").unwrap();
        let pre_b = ps.find("b.pre.bias").unwrap();
        let expect = tensor::conv2d(&packed, &pre.tensor(), Some(&pre_b.tensor()), 1, 0, 1).unwrap();
        let d = max_abs_diff(y.data(), expect.data());
        cases.push(case("dwtformer-zero-mixer-residual", d < 1e-12, format!("max err {d:.3e}")));
        cases.push(case(
            "dwtformer-halves-extents",
            y.shape() == [1, 4, 4, 4],
            format!("{:?}", y.shape()),
        ));
    }

    // DWTFormer gradcheck at 1x8x8x8 (input and all parameters)
    cases.push(gc_case(
        "dwtformer-gradcheck",
        |seed| vec![rand_tensor(&[1, 8, 8, 8], derive_seed(90, "bx", seed), -1.0, 1.0)],
        |xs| {
            let mut ps = ParamSet::<f64>::new();
            let mut rng = rng_from_seed(7);
            let block = DwtFormerBlock::build(&mut ps, &mut rng, "b", 8, &mixer_spec(8, 2), true, &WaveletBasis::db1())?;
            let y = block.forward(&xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::subsampled(1e-4, 256, 0),
    ));

    // IDWTFormer doubles extents and passes gradcheck
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(3);
        let block = IdwtFormerBlock::build(&mut ps, &mut rng, "d", 2, &mixer_spec(4, 2), true, &basis).unwrap();
        let x = rand_tensor(&[1, 4, 4, 4], 4, -1.0, 1.0);
        let y = block.forward(&x, (8, 8)).unwrap();
        cases.push(case("idwtformer-doubles-extents", y.shape() == [1, 2, 8, 8], format!("{:?}", y.shape())));
    }
    cases.push(gc_case(
        "idwtformer-gradcheck",
        |seed| vec![rand_tensor(&[1, 8, 4, 4], derive_seed(91, "dx", seed), -1.0, 1.0)],
        |xs| {
            let mut ps = ParamSet::<f64>::new();
            let mut rng = rng_from_seed(8);
            let block = IdwtFormerBlock::build(&mut ps, &mut rng, "d", 4, &mixer_spec(8, 2), true, &WaveletBasis::db1())?;
            let y = block.forward(&xs[0], (8, 8))?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::subsampled(1e-4, 256, 0),
    ));

    // encoder stage then matched decoder stage restores the input shape
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(5);
        let enc = DwtFormerBlock::build(&mut ps, &mut rng, "e", 3, &mixer_spec(8, 2), true, &basis).unwrap();
        let dec = IdwtFormerBlock::build(&mut ps, &mut rng, "dd", 3, &mixer_spec(8, 2), true, &basis).unwrap();
        let x = rand_tensor(&[1, 3, 10, 14], 6, -1.0, 1.0);
        let mid = enc.forward(&x).unwrap();
        let back = dec.forward(&mid, (10, 14)).unwrap();
        cases.push(case(
            "encoder-decoder-shape-roundtrip",
            back.shape() == x.shape(),
            format!("{:?} -> {:?} -> {:?}", x.shape(), mid.shape(), back.shape()),
        ));
    }

    // CIFM: zero projections give a 0.5 gate, so output = fuse(0.5*enc ++ dec)
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(9);
        let cifm = Cifm::build(&mut ps, &mut rng, "c", 4, 2, 4).unwrap();
        for p in ps.iter() {
            if p.name().starts_with("c.q.") || p.name().starts_with("c.kv.") || p.name().starts_with("c.proj.") {
                p.set_data(vec![0.0; p.numel()]).unwrap();
            }
        }
        let enc = rand_tensor(&[1, 4, 4, 4], 10, 0.0, 1.0);
        let dec = rand_tensor(&[1, 4, 4, 4], 11, 0.0, 1.0);
        let y = cifm.forward(&enc, &dec).unwrap();
        let half_enc = tensor::mul_scalar(&enc, 0.5).unwrap();
        let cat = tensor::concat(&[half_enc, dec.clone()], 1).unwrap();
        let fw = ps.find("c.fuse.weight").unwrap().tensor();
        let fb = ps.find("c.fuse.bias").unwrap().tensor();
        let expect = tensor::conv2d(&cat, &fw, Some(&fb), 1, 0, 1).unwrap();
        let d = max_abs_diff(y.data(), expect.data());
        cases.push(case("cifm-zero-projection-half-gate", d < 1e-12, format!("max err {d:.3e}")));
    }
    cases.push(gc_case(
        "cifm-gradcheck",
        |seed| {
            vec![
                rand_tensor(&[1, 4, 4, 4], derive_seed(92, "ce", seed), -1.0, 1.0),
                rand_tensor(&[1, 4, 4, 4], derive_seed(92, "cd", seed), -1.0, 1.0),
            ]
        },
        |xs| {
            let mut ps = ParamSet::<f64>::new();
            let mut rng = rng_from_seed(12);
            let cifm = Cifm::build(&mut ps, &mut rng, "c", 4, 2, 4)?;
            let y = cifm.forward(&xs[0], &xs[1])?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::subsampled(1e-4, 256, 0),
    ));

    // DCM: zero weights leave the input untouched (pure residual)
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(13);
        let dcm = Dcm::build(&mut ps, &mut rng, "m", 4, &[1, 2], &basis).unwrap();
        zero_params(&ps, false);
        let x = rand_tensor(&[1, 4, 8, 8], 14, -1.0, 1.0);
        let y = dcm.forward(&x).unwrap();
        let d = max_abs_diff(y.data(), x.data());
        cases.push(case("dcm-zero-weights-residual", d < 1e-12, format!("max err {d:.3e}")));
    }
    {
        let mut ps = ParamSet::<f64>::new();
        let mut rng = rng_from_seed(15);
        let dcm = Dcm::build(&mut ps, &mut rng, "m", 4, &[1, 2, 4], &basis).unwrap();
        let x = rand_tensor(&[1, 4, 12, 10], 16, -1.0, 1.0);
        let y = dcm.forward(&x).unwrap();
        cases.push(case("dcm-preserves-shape", y.shape() == x.shape(), format!("{:?}", y.shape())));
        cases.push(case(
            "dcm-receptive-field-arithmetic",
            Dcm::<f64>::effective_kernel_extent(4) == 9,
            "k + (k-1)(d-1) = 9 at dilation 4",
        ));
    }
    cases.push(gc_case(
        "dcm-gradcheck",
        |seed| vec![rand_tensor(&[1, 4, 8, 8], derive_seed(93, "mx", seed), -1.0, 1.0)],
        |xs| {
            let mut ps = ParamSet::<f64>::new();
            let mut rng = rng_from_seed(17);
            let dcm = Dcm::build(&mut ps, &mut rng, "m", 4, &[1, 2], &WaveletBasis::db1())?;
            let y = dcm.forward(&xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::subsampled(1e-4, 256, 0),
    ));

    SuiteReport { suite: "blocks".into(), cases }
}

// ---------------------------------------------------------------------------
// objectives suite
// ---------------------------------------------------------------------------

fn objectives_suite() -> SuiteReport {
    let mut cases = Vec::new();

    // l1 pinned + loop oracle
    {
        let a = Tensor::full(&[1usize, 3, 4, 4], 0.5f64);
        let b = Tensor::full(&[1usize, 3, 4, 4], 0.25f64);
        let v = l1_loss(&a, &b).unwrap().item();
        let same = l1_loss(&a, &a).unwrap().item();
        let x = rand_tensor(&[1, 3, 6, 6], 30, 0.0, 1.0);
        let y = rand_tensor(&[1, 3, 6, 6], 31, 0.0, 1.0);
        let got = l1_loss(&x, &y).unwrap().item();
        let want = reference::l1_reference(x.data(), y.data());
        cases.push(case(
            "l1-pinned-and-oracle",
            (v - 0.25).abs() < 1e-12 && same == 0.0 && (got - want).abs() < 1e-7,
            format!("0.25 case err {:.1e}, oracle err {:.1e}", (v - 0.25).abs(), (got - want).abs()),
        ));
    }

    // ms-ssim self similarity, symmetry, reference match, noise monotonicity
    {
        let x = rand_tensor(&[1, 3, 48, 48], 32, 0.0, 1.0);
        let self_v = ms_ssim(&x, &x, 5).unwrap().item();
        cases.push(case("msssim-self-is-one", (self_v - 1.0).abs() < 1e-6, format!("{self_v}")));

        let mut worst: f64 = 0.0;
        for i in 0..10u64 {
            let a = rand_tensor(&[1, 3, 48, 48], derive_seed(33, "ma", i), 0.0, 1.0);
            let b = rand_tensor(&[1, 3, 48, 48], derive_seed(33, "mb", i), 0.0, 1.0);
            let got = ms_ssim(&a, &b, 5).unwrap().item();
            let want = reference::ms_ssim_reference(a.data(), b.data(), 1, 3, 48, 48, 5);
            worst = worst.max((got - want).abs());
        }
        cases.push(case("msssim-vs-reference", worst < 1e-5, format!("max err {worst:.3e} over 10 pairs")));

        let a = rand_tensor(&[1, 3, 48, 48], 34, 0.2, 0.8);
        let b = rand_tensor(&[1, 3, 48, 48], 35, 0.2, 0.8);
        let ab = ms_ssim(&a, &b, 5).unwrap().item();
        let ba = ms_ssim(&b, &a, 5).unwrap().item();
        cases.push(case("msssim-symmetric", (ab - ba).abs() < 1e-7, format!("|ab-ba| = {:.1e}", (ab - ba).abs())));

        let base = rand_tensor(&[1, 3, 48, 48], 36, 0.2, 0.8);
        let mut prev = 1.0f64;
        let mut monotone = true;
        for (i, amp) in [0.01f64, 0.05, 0.1].iter().enumerate() {
            let noise = rand_tensor(&[1, 3, 48, 48], 37, -1.0, 1.0);
            let noisy: Vec<f64> = base
                .data()
                .iter()
                .zip(noise.data())
                .map(|(v, n)| (v + amp * n).clamp(0.0, 1.0))
                .collect();
            let noisy = Tensor::from_vec(&[1, 3, 48, 48], noisy).unwrap();
            let v = ms_ssim(&base, &noisy, 5).unwrap().item();
            if i > 0 {
                monotone &= v < prev;
            }
            prev = v;
        }
        cases.push(case("msssim-noise-monotonic", monotone, "value decreases with noise std"));
    }

    // perceptual determinism and frozen contract
    {
        let ex1 = PerceptualExtractor::<f64>::new(11);
        let ex2 = PerceptualExtractor::<f64>::new(11);
        let a = rand_tensor(&[1, 3, 16, 16], 38, 0.0, 1.0);
        let b = rand_tensor(&[1, 3, 16, 16], 39, 0.0, 1.0);
        let l1v = ex1.loss(&a, &b).unwrap().item();
        let l2v = ex2.loss(&a, &b).unwrap().item();
        let zero = ex1.loss(&a, &a).unwrap().item();
        cases.push(case(
            "perceptual-deterministic-and-zero-at-identity",
            l1v == l2v && zero == 0.0,
            format!("rerun diff {:.1e}", (l1v - l2v).abs()),
        ));
    }

    // total loss: (1,0,0) equals l1 exactly; gradcheck at 1x3x44x44
    {
        let a = rand_tensor(&[1, 3, 44, 44], 40, 0.0, 1.0);
        let b = rand_tensor(&[1, 3, 44, 44], 41, 0.0, 1.0);
        let ex = PerceptualExtractor::<f64>::new(0);
        let w = LossWeights { l1: 1.0, ms_ssim: 0.0, perceptual: 0.0 };
        let t = total_loss(&a, &b, &w, &ex).unwrap().item();
        let l = l1_loss(&a, &b).unwrap().item();
        cases.push(case("total-loss-l1-only-identical", t == l, format!("{t} vs {l}")));
    }
    // gradients are taken w.r.t. the prediction; the perceptual term cuts
    // the target path by contract, so the target stays fixed here
    cases.push(gc_case(
        "total-loss-gradcheck",
        |seed| vec![rand_tensor(&[1, 3, 44, 44], derive_seed(42, "ta", seed), 0.1, 0.9)],
        |xs| {
            let target = rand_tensor(&[1, 3, 44, 44], derive_seed(42, "tb", 0), 0.1, 0.9);
            let ex = PerceptualExtractor::<f64>::new(4);
            total_loss(&xs[0], &target, &LossWeights::default(), &ex)
        },
        GradcheckOptions::subsampled(1e-3, 160, 0),
    ));

    // metric pins
    {
        use crate::objectives::metrics::{entropy, psnr, ssim};
        let mut pred = vec![0.0f64; 100];
        pred[3] = 1.0;
        let p = Tensor::from_vec(&[1, 1, 10, 10], pred).unwrap();
        let t = Tensor::from_vec(&[1, 1, 10, 10], vec![0.0f64; 100]).unwrap();
        let psnr_ok = psnr(&p, &t, 1.0).unwrap() == 20.0;

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

        let x = rand_tensor(&[1, 3, 16, 16], 43, 0.0, 1.0);
        let ssim_ok = (ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9;
        cases.push(case(
            "metric-pins",
            psnr_ok && entropy_ok && ssim_ok,
            "psnr 20.0 exact, entropy 8.0 exact, ssim(x,x)=1",
        ));
    }

    SuiteReport { suite: "objectives".into(), cases }
}

// ---------------------------------------------------------------------------
// model suite
// ---------------------------------------------------------------------------

fn model_suite() -> SuiteReport {
    let mut cases = Vec::new();

    // untrained zero-head identity (bitwise)
    {
        let model = DedustNet::<f64>::new(ModelConfig::tiny()).unwrap();
        let x = rand_tensor(&[1, 3, 16, 16], 50, 0.0, 1.0);
        let y = with_no_grad(|| model.forward(&x)).unwrap();
        cases.push(case("zero-head-identity-bitwise", y.data() == x.data(), "output == input"));
    }

    // full two-stage model gradcheck on 1x3x16x16
    cases.push(gc_case(
        "full-model-gradcheck",
        |seed| vec![rand_tensor(&[1, 3, 16, 16], derive_seed(51, "fm", seed), 0.2, 0.8)],
        |xs| {
            let mut cfg = ModelConfig::tiny();
            cfg.seed = 123;
            let model = DedustNet::<f64>::new(cfg)?;
            // randomize the zero-initialized head so gradients reach every stage
            let head_w = model.params().find("head.weight").unwrap();
            let data: Vec<f64> = rand_tensor(&head_w.shape(), 52, -0.05, 0.05).data().to_vec();
            head_w.set_data(data)?;
            let y = model.forward(&xs[0])?;
            mean_all(&tensor::mul(&y, &y)?)
        },
        GradcheckOptions::subsampled(1e-3, 192, 0),
    ));

    SuiteReport { suite: "model".into(), cases }
}
