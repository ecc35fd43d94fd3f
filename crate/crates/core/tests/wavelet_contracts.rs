//! Wavelet transform contracts: hand cases, perfect reconstruction, and
//! energy conservation.

use dustlab_core::tensor::Tensor;
use dustlab_core::wavelet::{dwt2, idwt2, pack_bands, unpack_bands, Subbands, WaveletBasis};
use proptest::prelude::*;

#[test]
fn haar_two_by_two_hand_case() {
    // [[a,b],[c,d]] -> single-coefficient bands of signed half-sums
    let (a, b, c, d) = (0.9f64, 0.1, 0.4, 0.6);
    let x = Tensor::from_vec(&[1, 1, 2, 2], vec![a, b, c, d]).unwrap();
    let bands = dwt2(&x, &WaveletBasis::db1()).unwrap();
    let ll = bands.ll.data()[0];
    let lh = bands.lh.data()[0];
    let hl = bands.hl.data()[0];
    let hh = bands.hh.data()[0];
    assert!((ll - (a + b + c + d) / 2.0).abs() < 1e-12);
    assert!((lh - ((a + b) - (c + d)) / 2.0).abs() < 1e-12, "lh: lowpass W, highpass H");
    assert!((hl - ((a - b) + (c - d)) / 2.0).abs() < 1e-12, "hl: highpass W, lowpass H");
    assert!((hh - ((a - b) - (c - d)) / 2.0).abs() < 1e-12);
}

#[test]
fn haar_constant_image() {
    let c = 0.613f64;
    let x = Tensor::full(&[1, 2, 6, 6], c);
    let bands = dwt2(&x, &WaveletBasis::db1()).unwrap();
    for v in bands.ll.data() {
        assert!((v - 2.0 * c).abs() < 1e-12);
    }
    for band in [&bands.lh, &bands.hl, &bands.hh] {
        for v in band.data() {
            assert!(v.abs() < 1e-12);
        }
    }
}

#[test]
fn constant_ll_with_zero_details_reconstructs_constant() {
    let c = 0.37f64;
    let ll = Tensor::full(&[1, 1, 3, 3], 2.0 * c);
    let z = Tensor::zeros(&[1usize, 1, 3, 3]);
    let bands = Subbands::new(ll, z.clone(), z.clone(), z).unwrap();
    let img = idwt2(&bands, &WaveletBasis::db1()).unwrap();
    assert_eq!(img.shape(), &[1, 1, 6, 6]);
    for v in img.data() {
        assert!((v - c).abs() < 1e-12);
    }
}

#[test]
fn pack_unpack_geometry_and_identity() {
    let count = 2 * 4 * 4;
    let mk = |off: usize| {
        Tensor::<f64>::from_vec(&[1, 2, 4, 4], (0..count).map(|i| (i + off) as f64).collect()).unwrap()
    };
    let bands = Subbands::new(mk(0), mk(100), mk(200), mk(300)).unwrap();
    let packed = pack_bands(&bands).unwrap();
    assert_eq!(packed.shape(), &[1, 8, 4, 4]);
    let back = unpack_bands(&packed).unwrap();
    assert_eq!(back.ll.data(), bands.ll.data());
    assert_eq!(back.lh.data(), bands.lh.data());
    assert_eq!(back.hl.data(), bands.hl.data());
    assert_eq!(back.hh.data(), bands.hh.data());
}

#[test]
fn unpack_rejects_non_divisible_channels() {
    let x = Tensor::<f64>::zeros(&[1, 6, 4, 4]);
    assert!(unpack_bands(&x).is_err());
}

#[test]
fn band_shape_mismatch_rejected() {
    let a = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
    let b = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
    assert!(Subbands::new(a.clone(), b, a.clone(), a).is_err());
}

fn reconstruction_error(shape: &[usize], seed: u64, basis: &WaveletBasis) -> f64 {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|i| (((i as u64 * 2654435761 + seed) % 1999) as f64 / 999.5) - 1.0).collect();
    let x = Tensor::from_vec(shape, data).unwrap();
    let back = idwt2(&dwt2(&x, basis).unwrap(), basis).unwrap();
    x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perfect_reconstruction_both_bases(
        c in 1usize..4,
        h in 2usize..17,
        w in 2usize..17,
        seed in 0u64..1000,
    ) {
        // even and odd extents both round-trip exactly (odd via pad+crop)
        for basis in [WaveletBasis::db1(), WaveletBasis::db2()] {
            let err = reconstruction_error(&[1, c, h, w], seed, &basis);
            prop_assert!(err < 1e-9, "{} on {}x{}: {err}", basis.name(), h, w);
        }
    }

    #[test]
    fn parseval_on_even_extents(
        c in 1usize..3,
        h2 in 1usize..9,
        w2 in 1usize..9,
        seed in 0u64..1000,
    ) {
        let (h, w) = (2 * h2, 2 * w2);
        let n = c * h * w;
        let data: Vec<f64> = (0..n).map(|i| (((i as u64 * 48271 + seed) % 1499) as f64 / 749.5) - 1.0).collect();
        let x = Tensor::from_vec(&[1, c, h, w], data).unwrap();
        for basis in [WaveletBasis::db1(), WaveletBasis::db2()] {
            let bands = dwt2(&x, &basis).unwrap();
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            let eb: f64 = [&bands.ll, &bands.lh, &bands.hl, &bands.hh]
                .iter()
                .map(|t| t.data().iter().map(|v| v * v).sum::<f64>())
                .sum();
            prop_assert!(((eb - ex) / ex).abs() < 1e-9);
        }
    }
}
