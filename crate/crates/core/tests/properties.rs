mod common;

use common::{distance_oracle, flood_fill_oracle};
use fusionedit::dam::{adaptive_alpha, fuse_values, DamConfig};
use fusionedit::fusion::{fuse_latents, tv_refine, FusedLatent, TvConfig};
use fusionedit::io::{read_tensor, write_tensor};
use fusionedit::mask::{
    distance_to_boundary, patch_means, region_grow, soften, BinaryMask, SoftMask,
};
use fusionedit::metrics::{mse, ssim};
use fusionedit::{LatentTensor, ScalarMap, Shape};
use proptest::prelude::*;

fn tensor(max_c: usize, max_hw: usize) -> impl Strategy<Value = LatentTensor> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-100.0f32..100.0, c * h * w)
            .prop_map(move |data| LatentTensor::new(Shape::new(c, h, w), data).unwrap())
    })
}

fn pair(min_hw: usize, max_hw: usize) -> impl Strategy<Value = (LatentTensor, LatentTensor)> {
    (1..=2usize, min_hw..=max_hw, min_hw..=max_hw).prop_flat_map(|(c, h, w)| {
        let n = c * h * w;
        (
            prop::collection::vec(0.0f32..1.0, n),
            prop::collection::vec(0.0f32..1.0, n),
        )
            .prop_map(move |(a, b)| {
                let s = Shape::new(c, h, w);
                (
                    LatentTensor::new(s, a).unwrap(),
                    LatentTensor::new(s, b).unwrap(),
                )
            })
    })
}

fn mask(max_hw: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max_hw, 1..=max_hw).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w)
            .prop_map(move |b| BinaryMask::new(h, w, b).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn npy_round_trip_is_exact(t in tensor(4, 12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn alpha_stays_in_unit_interval(
        t in 0.0f64..=1.0,
        delta in 0.0f64..=1.0,
        beta in 0.0f64..10.0,
        gamma in -10.0f64..10.0,
        eta in -5.0f64..5.0,
    ) {
        let cfg = DamConfig { beta, gamma, eta, ..DamConfig::default() };
        let a = adaptive_alpha(&cfg, t, delta);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert_eq!(adaptive_alpha(&cfg, 1.0, delta), 0.0);
    }

    #[test]
    fn mse_and_ssim_are_symmetric((a, b) in pair(8, 14)) {
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        let (ab, ba) = (ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!(ab <= 1.0 + 1e-12);
    }

    #[test]
    fn fusion_is_linear_in_each_input(
        (a, b) in pair(1, 8),
        k in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let s = a.shape();
        let weights: Vec<f64> = (0..s.plane())
            .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 999.0)
            .collect();
        let m = SoftMask::new(s.height, s.width, weights).unwrap();
        let base = fuse_latents(&a, &b, &m).unwrap();
        let scaled = a.map(|v| k * v).unwrap();
        let fused = fuse_latents(&scaled, &b, &m).unwrap();
        // f(k a, b) - f(0, b) = k (f(a, b) - f(0, b))
        let zero = LatentTensor::zeros(s).unwrap();
        let f0 = fuse_latents(&zero, &b, &m).unwrap();
        for i in 0..s.len() {
            let lhs = fused.tensor().data()[i] as f64 - f0.tensor().data()[i] as f64;
            let rhs = k * (base.tensor().data()[i] as f64 - f0.tensor().data()[i] as f64);
            prop_assert!((lhs - rhs).abs() <= 1e-4 * (1.0 + rhs.abs()), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn refinement_freezes_complement((a, _b) in pair(2, 12), band_seed in any::<u64>()) {
        let s = a.shape();
        let band: Vec<bool> = (0..s.plane()).map(|i| (band_seed >> (i % 61)) & 1 == 1).collect();
        let fused = FusedLatent::with_band(a.clone(), band.clone()).unwrap();
        let out = tv_refine(&fused, &TvConfig::default()).unwrap();
        for i in 0..s.len() {
            if !band[i % s.plane()] {
                prop_assert_eq!(out.tensor.data()[i].to_bits(), a.data()[i].to_bits());
            }
        }
        for losses in &out.losses {
            prop_assert!(losses.windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn distance_matches_brute_force(m in mask(14)) {
        let got = distance_to_boundary(&m);
        for (g, e) in got.data().iter().zip(distance_oracle(&m)) {
            prop_assert!(g == &e || (g - e).abs() <= 1e-9, "{} vs {}", g, e);
        }
    }

    #[test]
    fn soft_weights_bounded_and_binary_far_away(m in mask(20), d_max in 0.5f64..5.0, k in 0.5f64..10.0) {
        let d = distance_to_boundary(&m);
        let s = soften(&m, &d, d_max, k).unwrap();
        for i in 0..m.bits().len() {
            let w = s.weights()[i];
            prop_assert!((0.0..=1.0).contains(&w));
            if d.data()[i] > d_max {
                prop_assert_eq!(w, if m.bits()[i] { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn region_grow_matches_flood_fill(
        (h, w, data) in (1..=24usize, 1..=24usize).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(prop_oneof![Just(0.0f64), 0.0f64..1.0], h * w))
        }),
        patch in 1..=4usize,
        ratio in 0.01f64..=1.0,
    ) {
        let grid = patch_means(&ScalarMap::new(h, w, data).unwrap(), patch).unwrap();
        let grown = region_grow(&grid, ratio).unwrap();
        prop_assert_eq!(grown.patches, flood_fill_oracle(&grid, ratio));
    }

    #[test]
    fn value_fusion_endpoints((a, b) in pair(2, 6)) {
        prop_assert_eq!(fuse_values(&a, &b, 0.0, 1e-6).unwrap(), a.clone());
        let full = fuse_values(&a, &b, 1.0, 1e-6).unwrap();
        prop_assert_eq!(full, fusionedit::dam::adain(&a, &b, 1e-6).unwrap());
    }
}
