mod common;

use proptest::prelude::*;
use rand::Rng;
use tnc_core::classifier::{predict, Mode, ScoreVector};
use tnc_core::dataset::{preprocess, PadPolicy, RawImage};
use tnc_core::linalg::{self, polar_unitary, svd_truncate};
use tnc_core::mps::{self, Mps};
use tnc_core::stacking::{self, tensor_power, LabelState};
use tnc_core::tensor::contract;
use tnc_core::{ttn, DenseTensor};

fn vec_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn unit_strategy(len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec_strategy(len)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(common::normalise)
}

fn matrix_strategy(max: usize) -> impl Strategy<Value = DenseTensor> {
    (1..=max, 1..=max)
        .prop_flat_map(|(r, c)| vec_strategy(r * c).prop_map(move |d| DenseTensor::matrix(r, c, d).unwrap()))
}

fn orthogonal(seed: &[f64], n: usize) -> DenseTensor {
    let a = DenseTensor::matrix(n, n, seed.to_vec()).unwrap();
    polar_unitary(&a).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn discarded_weight_shrinks_with_rank(a in matrix_strategy(6)) {
        let full = a.rows().min(a.cols());
        let mut last = f64::INFINITY;
        for r in 1..=full {
            let w = svd_truncate(&a, r).unwrap().discarded_weight;
            prop_assert!(w <= last + 1e-12);
            last = w;
        }
        let exact = svd_truncate(&a, full).unwrap();
        prop_assert!(exact.discarded_weight < 1e-20);
        prop_assert!(exact.reconstruct().frobenius_distance(&a) < 1e-10);
    }

    #[test]
    fn polar_recovers_the_orthogonal_factor(seed in vec_strategy(25), p in vec_strategy(25)) {
        let q = orthogonal(&seed, 5);
        // symmetric positive definite: BᵀB + I
        let b = DenseTensor::matrix(5, 5, p).unwrap();
        let mut spd = linalg::matmul_tn(&b, &b);
        spd.add_assign(&DenseTensor::identity(5)).unwrap();
        let back = polar_unitary(&linalg::matmul(&q, &spd)).unwrap();
        prop_assert!(back.max_abs_diff(&q) < 1e-9);
    }

    #[test]
    fn contraction_is_bilinear(a in vec_strategy(6), b in vec_strategy(6), c in vec_strategy(12), alpha in -2.0f64..2.0) {
        let ta = DenseTensor::matrix(2, 3, a).unwrap();
        let tb = DenseTensor::matrix(2, 3, b).unwrap();
        let tc = DenseTensor::matrix(3, 4, c).unwrap();
        let mut lhs_in = ta.clone().scaled(alpha);
        lhs_in.add_assign(&tb).unwrap();
        let lhs = contract(&lhs_in, &tc, &[(1, 0)]).unwrap();
        let mut rhs = contract(&ta, &tc, &[(1, 0)]).unwrap().scaled(alpha);
        rhs.add_assign(&contract(&tb, &tc, &[(1, 0)]).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn mps_encoding_round_trips_and_is_canonical(v in unit_strategy(64)) {
        let m = mps::encode_amplitudes(&v, 8).unwrap();
        prop_assert!(m.isometry_error() < 1e-10);
        prop_assert!(common::max_diff(&m.decode().unwrap(), &v) < 1e-10);
        let absorbed = m.clone().absorb_centre();
        prop_assert!(common::max_diff(&absorbed.decode().unwrap(), &v) < 1e-12);
    }

    #[test]
    fn mps_compression_keeps_isometries_and_bookkeeping(v in unit_strategy(64), d in 1usize..8) {
        let m = mps::encode_amplitudes(&v, 8).unwrap();
        let (c, w) = mps::compress(&m, d).unwrap();
        prop_assert!(c.isometry_error() < 1e-10);
        prop_assert!(c.max_bond() <= d);
        let approx = c.decode().unwrap();
        let err: f64 = approx.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((err - w).abs() < 1e-8);
    }

    #[test]
    fn mps_addition_is_linear(a in unit_strategy(32), b in unit_strategy(32), c in unit_strategy(32)) {
        let terms: Vec<Mps> = [&a, &b, &c].iter().map(|v| mps::encode_amplitudes(v, 4).unwrap()).collect();
        let sum = mps::add_mps(&terms).unwrap();
        let dense: Vec<f64> = (0..32).map(|i| a[i] + b[i] + c[i]).collect();
        prop_assert!(common::max_diff(&sum.decode().unwrap(), &dense) < 1e-10);
        // overlap with the sum equals the sum of overlaps
        let probe = &terms[0];
        let total: f64 = terms.iter().map(|t| t.overlap(probe).unwrap()).sum();
        prop_assert!((sum.overlap(probe).unwrap() - total).abs() < 1e-10);
    }

    #[test]
    fn ttn_encoding_round_trips_and_compresses(v in unit_strategy(64), d in 1usize..8) {
        let t = ttn::encode_amplitudes(&v, 8).unwrap();
        prop_assert!(t.isometry_error() < 1e-10);
        prop_assert!(common::max_diff(&t.decode().unwrap(), &v) < 1e-10);
        let (c, w) = ttn::compress(&t, d).unwrap();
        prop_assert!(c.isometry_error() < 1e-10);
        let approx = c.decode().unwrap();
        let err: f64 = approx.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!((err - w).abs() < 1e-8);
    }

    #[test]
    fn argmax_ignores_positive_scaling(scores in prop::collection::vec(0.0f64..1.0, 16), k in 0.01f64..100.0) {
        let a = ScoreVector { scores: scores.clone(), mode: Mode::Postselect };
        let b = ScoreVector { scores: scores.iter().map(|s| s * k).collect(), mode: Mode::Postselect };
        prop_assert_eq!(predict(&a, 10), predict(&b, 10));
    }

    #[test]
    fn stacked_probabilities_form_a_distribution(seed in any::<u64>(), phi in unit_strategy(16)) {
        let mut rng = common::rng(seed);
        let entries: Vec<f64> = (0..256 * 256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v = stacking::StackingUnitary { copies: 2, matrix: orthogonal(&entries, 256) };
        let p = v.class_probabilities(&phi);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn copies_increase_distinguishability(a in unit_strategy(16), b in unit_strategy(16)) {
        let overlap = common::dot(&a, &b).abs();
        prop_assume!(overlap > 1e-3 && overlap < 1.0 - 1e-6);
        let mut last = f64::INFINITY;
        for m in 1..=3 {
            let f = common::dot(&tensor_power(&a, m), &tensor_power(&b, m)).powi(2);
            prop_assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn identity_stack_agrees_with_postselection(phi in unit_strategy(16)) {
        let s = LabelState::new(phi.clone(), 0).unwrap();
        let v = stacking::StackingUnitary::identity(1);
        let scores = ScoreVector { scores: phi.iter().map(|a| a * a).collect(), mode: Mode::Postselect };
        prop_assert_eq!(stacking::classify_stacked(&v, &s, 10), predict(&scores, 10));
    }

    #[test]
    fn preprocessing_keeps_pixel_ratios(pixels in prop::collection::vec(0u8..=255, 28 * 28)) {
        prop_assume!(pixels.iter().any(|&p| p > 0));
        let image = RawImage { rows: 28, cols: 28, pixels: pixels.clone(), label: 3 };
        let v = preprocess(&image, 32, PadPolicy::Centred).unwrap();
        let norm: f64 = v.amplitudes.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        let scale = pixels.iter().map(|&p| (p as f64).powi(2)).sum::<f64>().sqrt();
        for r in 0..32 {
            for c in 0..32 {
                let a = v.amplitudes[r * 32 + c];
                let inside = (2..30).contains(&r) && (2..30).contains(&c);
                let want = if inside { pixels[(r - 2) * 28 + c - 2] as f64 / scale } else { 0.0 };
                prop_assert!((a - want).abs() < 1e-12);
            }
        }
    }
}
