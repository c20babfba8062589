//! Direct-formula oracles for the convolution kernels and image metrics.

mod common;

use common::*;
use proptest::prelude::*;
use sparsepat::metrics::{psnr, ssim};
use sparsepat::tensor::ops;
use sparsepat::Image2D;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_nested_loops(
        n in 1usize..=2, c in 1usize..=3, h in 3usize..=9, w in 3usize..=9,
        o in 1usize..=4, k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..=2, seed in any::<u64>(),
    ) {
        prop_assert!(conv_oracle_gap(seed, [n, c, h, w], o, k, stride) <= 1e-12);
    }

    #[test]
    fn up_conv_matches_nested_loops(
        n in 1usize..=2, c in 1usize..=3, h in 1usize..=5, w in 1usize..=5, o in 1usize..=3, seed in any::<u64>(),
    ) {
        let x = randn(seed, &[n, c, h, w], 1.0);
        let wt = randn(seed ^ 1, &[c, o, 2, 2], 1.0);
        let b = randn(seed ^ 2, &[o], 1.0).into_data();
        let got = ops::up_conv2(&x, &wt, &b).unwrap();
        prop_assert!(max_abs_diff(&got, &up_conv_oracle(&x, &wt, &b)) <= 1e-12);
    }

    #[test]
    fn up_conv_adjoint_identity(
        c in 1usize..=3, h in 1usize..=6, w in 1usize..=6, o in 1usize..=3, seed in any::<u64>(),
    ) {
        prop_assert!(up_conv_adjoint_gap(seed, c, h, w, o) <= 1e-10);
    }

    #[test]
    fn psnr_matches_formula(size in 4usize..24, seed in any::<u64>()) {
        let a = noise_image(size, seed);
        let b = noise_image(size, seed ^ 9);
        prop_assert!((psnr(&a, &b, None).unwrap() - psnr_oracle(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn ssim_matches_windowed_formula(size in 11usize..20, seed in any::<u64>()) {
        let a = noise_image(size, seed);
        let b = noise_image(size, seed ^ 5);
        prop_assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() <= 1e-9);
    }

    #[test]
    fn ssim_is_symmetric_under_shared_range(size in 11usize..20, seed in any::<u64>()) {
        let a = noise_image(size, seed);
        let b = noise_image(size, seed ^ 3);
        let ab = sparsepat::metrics::ssim_with_range(&a, &b, 4.0).unwrap();
        let ba = sparsepat::metrics::ssim_with_range(&b, &a, 4.0).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12);
    }
}

#[test]
fn identical_images_have_infinite_psnr_and_unit_ssim() {
    let img = Image2D::from_fn(16, |y, x| (y * 16 + x) as f64 / 256.0);
    assert_eq!(psnr(&img, &img, None).unwrap(), f64::INFINITY);
    assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
}
