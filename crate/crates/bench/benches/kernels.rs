use criterion::{criterion_group, criterion_main, Criterion};
use dustlab_bench::fixture;
use dustlab_core::attention::{mhsa, AttentionHeads, MhsaParams, WindowGrid};
use dustlab_core::net::{DedustNet, ModelConfig};
use dustlab_core::tensor::{conv2d, with_no_grad};
use dustlab_core::wavelet::{dwt2_packed, WaveletBasis};

fn bench_conv(c: &mut Criterion) {
    let x = fixture(&[1, 32, 64, 64]);
    let w = fixture(&[32, 32, 3, 3]);
    let b = fixture(&[32]);
    c.bench_function("conv2d_3x3_32ch_64px", |bench| {
        bench.iter(|| with_no_grad(|| conv2d(&x, &w, Some(&b), 1, 1, 1).unwrap()))
    });
}

fn bench_dwt(c: &mut Criterion) {
    let x = fixture(&[1, 32, 64, 64]);
    let basis = WaveletBasis::db2();
    c.bench_function("dwt2_db2_32ch_64px", |bench| {
        bench.iter(|| with_no_grad(|| dwt2_packed(&x, &basis).unwrap()))
    });
}

fn bench_attention(c: &mut Criterion) {
    let ch = 32;
    let x = fixture(&[1, ch, 32, 32]);
    let grid = WindowGrid::new(32, 32, 4, 2).unwrap();
    let heads = AttentionHeads::new(ch, 2).unwrap();
    let p = MhsaParams {
        qkv_w: fixture(&[3 * ch, ch]),
        qkv_b: fixture(&[3 * ch]),
        proj_w: fixture(&[ch, ch]),
        proj_b: fixture(&[ch]),
        rel_bias: Some(fixture(&[2, 49])),
    };
    c.bench_function("window_mhsa_32ch_32px", |bench| {
        bench.iter(|| with_no_grad(|| mhsa(&x, &grid, &heads, &p).unwrap()))
    });
}

fn bench_forward(c: &mut Criterion) {
    let model = DedustNet::<f32>::new(ModelConfig::desk_default()).unwrap();
    let x = fixture(&[1, 3, 64, 64]);
    c.bench_function("forward_default_64px", |bench| {
        bench.iter(|| with_no_grad(|| model.forward(&x).unwrap()))
    });
}

criterion_group!(benches, bench_conv, bench_dwt, bench_attention, bench_forward);
criterion_main!(benches);
