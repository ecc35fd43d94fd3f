//! Scattering-model synthesis contracts: degradation limits, inversion,
//! augmentation, patching, and provenance regeneration.

use dustlab_core::synth::{
    apply_asm, apply_transform, augment_pair, crop_patch, invert_asm, make_clean_image, make_depth,
    random_patch_offsets, synth_pair, DustField, PairedSample, Provenance, SynthOptions, Transform,
};
use dustlab_core::tensor::Tensor;
use proptest::prelude::*;

fn flat_field(h: usize, w: usize, beta: f64, depth_value: f64) -> DustField<f64> {
    DustField {
        ambient: [0.9, 0.9, 0.9],
        beta,
        depth: Tensor::full(&[1, 1, h, w], depth_value),
        ambient_mod: None,
    }
}

fn sample_clean(seed: u64, h: usize, w: usize) -> Tensor<f64> {
    make_clean_image(seed, h, w).unwrap()
}

#[test]
fn beta_zero_is_identity() {
    let clean = sample_clean(1, 8, 8);
    let field = flat_field(8, 8, 0.0, 1.0);
    let degraded = apply_asm(&clean, &field).unwrap();
    assert_eq!(degraded.data(), clean.data());
}

#[test]
fn vanishing_transmission_gives_ambient() {
    let clean = sample_clean(2, 8, 8);
    let field = flat_field(8, 8, 1.0, 1e6); // t = exp(-1e6) ~ 0
    let degraded = apply_asm(&clean, &field).unwrap();
    for v in degraded.data() {
        assert!((v - 0.9).abs() < 1e-12);
    }
}

#[test]
fn hand_case_half_transmission() {
    // J = 0.8, A = 0.9, beta*d = ln 2 => t = 0.5 => I = 0.85
    let clean = Tensor::full(&[1, 3, 4, 4], 0.8f64);
    let field = DustField {
        ambient: [0.9; 3],
        beta: 2.0f64.ln(),
        depth: Tensor::full(&[1, 1, 4, 4], 1.0),
        ambient_mod: None,
    };
    let degraded = apply_asm(&clean, &field).unwrap();
    for v in degraded.data() {
        assert!((v - 0.85).abs() < 1e-12);
    }
}

#[test]
fn negative_beta_rejected() {
    let clean = sample_clean(3, 4, 4);
    let field = flat_field(4, 4, -0.5, 1.0);
    assert!(apply_asm(&clean, &field).is_err());
}

#[test]
fn asm_inversion_recovers_clean_where_transmission_lives() {
    let clean = sample_clean(4, 16, 16);
    let depth = make_depth::<f64>(16, 16, 9, 0.7).unwrap();
    let field = DustField { ambient: [0.82, 0.78, 0.72], beta: 1.5, depth, ambient_mod: None };
    let degraded = apply_asm(&clean, &field).unwrap();
    let recovered = invert_asm(&degraded, &field).unwrap();
    let t = field.transmission();
    let hw = 16 * 16;
    for c in 0..3 {
        for i in 0..hw {
            if t[i] > 0.05 {
                let err = (recovered.data()[c * hw + i] - clean.data()[c * hw + i]).abs();
                assert!(err < 1e-6, "channel {c} pixel {i}: err {err}");
            }
        }
    }
}

#[test]
fn depth_deterministic_and_in_range() {
    let a = make_depth::<f64>(24, 18, 42, 0.6).unwrap();
    let b = make_depth::<f64>(24, 18, 42, 0.6).unwrap();
    assert_eq!(a.data(), b.data());
    for seed in 0..10u64 {
        let d = make_depth::<f64>(16, 16, seed, 0.5).unwrap();
        for &v in d.data() {
            assert!((0.5..=3.0).contains(&v), "depth {v} out of range");
        }
    }
}

#[test]
fn max_smoothness_uses_minimal_grid() {
    // smoothness 1 -> 2x2 grid -> bilinear sheet: second differences along
    // each row are constant (planar within interpolation cells)
    let d = make_depth::<f64>(9, 9, 5, 1.0).unwrap();
    let row = &d.data()[0..9];
    let d2: Vec<f64> = row.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    for v in &d2 {
        assert!(v.abs() < 1e-9, "row curvature {v}");
    }
}

#[test]
fn rotations_and_flips_are_involutions() {
    let x = sample_clean(5, 6, 6);
    let r180 = Transform { quarter_turns: 2, flip: false };
    let once = apply_transform(&x, r180).unwrap();
    let twice = apply_transform(&once, r180).unwrap();
    assert_eq!(twice.data(), x.data());

    let flip = Transform { quarter_turns: 0, flip: true };
    let back = apply_transform(&apply_transform(&x, flip).unwrap(), flip).unwrap();
    assert_eq!(back.data(), x.data());
}

#[test]
fn rot90_matches_index_trace() {
    // clockwise rotation: destination (y, x) = source (h-1-x, y)
    let h = 4;
    let x = Tensor::<f64>::from_vec(&[1, 1, h, h], (0..16).map(|i| i as f64).collect()).unwrap();
    let y = apply_transform(&x, Transform { quarter_turns: 1, flip: false }).unwrap();
    for yy in 0..h {
        for xx in 0..h {
            let want = ((h - 1 - xx) * h + yy) as f64;
            assert_eq!(y.data()[yy * h + xx], want);
        }
    }
}

#[test]
fn rotation_of_non_square_is_geometry_error() {
    let x = Tensor::<f64>::zeros(&[1, 1, 4, 6]);
    assert!(apply_transform(&x, Transform { quarter_turns: 1, flip: false }).is_err());
}

#[test]
fn augment_applies_same_transform_to_both_sides() {
    let clean = sample_clean(6, 8, 8);
    let opts = SynthOptions { augment: false, ..Default::default() };
    let pair = synth_pair(&clean, 3, 0, 0, &opts).unwrap();
    let augmented = augment_pair(pair.clone(), 77).unwrap();
    let t = Transform::from_code(&augmented.provenance.transform).unwrap();
    assert_eq!(apply_transform(&pair.clean, t).unwrap().data(), augmented.clean.data());
    assert_eq!(apply_transform(&pair.degraded, t).unwrap().data(), augmented.degraded.data());
}

#[test]
fn degenerate_patch_is_full_image() {
    let offs = random_patch_offsets(16, 16, 16, 5, 1, 0).unwrap();
    assert!(offs.iter().all(|&o| o == (0, 0)));
}

#[test]
fn patch_offsets_deterministic_per_seed_epoch() {
    let a = random_patch_offsets(256, 256, 64, 8, 9, 3).unwrap();
    let b = random_patch_offsets(256, 256, 64, 8, 9, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn patches_vary_across_epochs() {
    // over 20 epochs on a 256 -> 64 crop, identical offset multisets for all
    // epochs are forbidden (collisions between some epochs are fine)
    let base = random_patch_offsets(256, 256, 64, 4, 11, 0).unwrap();
    let mut any_different = false;
    for epoch in 1..20u32 {
        if random_patch_offsets(256, 256, 64, 4, 11, epoch).unwrap() != base {
            any_different = true;
        }
    }
    assert!(any_different, "all 20 epochs produced identical offsets");
}

#[test]
fn oversized_patch_is_geometry_error() {
    assert!(random_patch_offsets(32, 32, 64, 1, 0, 0).is_err());
}

#[test]
fn provenance_line_round_trip() {
    let p = Provenance {
        seed: 17,
        epoch: 3,
        idx: 9,
        ambient: [0.82, 0.78, 0.72],
        beta: 1.25,
        transform: "r270f".into(),
    };
    let parsed = Provenance::parse_line(&p.to_line()).unwrap();
    assert_eq!(parsed, p);
}

#[test]
fn samples_regenerate_bit_exactly_from_provenance() {
    let opts = SynthOptions::default();
    for idx in 0..10u32 {
        let clean = sample_clean(100 + idx as u64, 12, 12);
        let sample = synth_pair(&clean, 55, 2, idx, &opts).unwrap();
        // regeneration: same clean source + the provenance triple
        let p = &sample.provenance;
        let again = synth_pair(&clean, p.seed, p.epoch, p.idx, &opts).unwrap();
        assert_eq!(sample.clean.data(), again.clean.data());
        assert_eq!(sample.degraded.data(), again.degraded.data());
        assert_eq!(sample.provenance, again.provenance);
    }
}

#[test]
fn crop_patch_extracts_expected_region() {
    let img = Tensor::<f64>::from_vec(&[1, 1, 4, 4], (0..16).map(|i| i as f64).collect()).unwrap();
    let p = crop_patch(&img, 1, 2, 2).unwrap();
    assert_eq!(p.data(), &[6.0, 7.0, 10.0, 11.0]);
}

fn aligned_pair(sample: &PairedSample<f64>) -> bool {
    sample.clean.shape() == sample.degraded.shape()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn asm_output_stays_in_unit_range(seed in 0u64..500, beta in 0.0f64..3.0) {
        let clean = sample_clean(seed, 8, 8);
        let depth = make_depth::<f64>(8, 8, seed ^ 0xabc, 0.5).unwrap();
        let field = DustField { ambient: [0.82, 0.78, 0.72], beta, depth, ambient_mod: None };
        let out = apply_asm(&clean, &field).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn asm_monotone_in_ambient(seed in 0u64..200) {
        let clean = sample_clean(seed, 6, 6);
        let depth = make_depth::<f64>(6, 6, seed ^ 0x5, 0.5).unwrap();
        let lo = DustField { ambient: [0.3, 0.3, 0.3], beta: 1.0, depth: depth.clone(), ambient_mod: None };
        let hi = DustField { ambient: [0.8, 0.8, 0.8], beta: 1.0, depth, ambient_mod: None };
        let a = apply_asm(&clean, &lo).unwrap();
        let b = apply_asm(&clean, &hi).unwrap();
        // t < 1 everywhere (beta=1, depth >= 0.5), so raising A never lowers a pixel
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= x));
    }

    #[test]
    fn synth_pairs_stay_aligned(seed in 0u64..200) {
        let clean = sample_clean(seed, 8, 8);
        let pair = synth_pair(&clean, seed, 0, 0, &SynthOptions::default()).unwrap();
        prop_assert!(aligned_pair(&pair));
    }
}
