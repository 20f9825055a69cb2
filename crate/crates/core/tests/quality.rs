mod common;

use bilevel_core::quality::{format_psnr, Direction};
use bilevel_core::{add_gaussian_noise, cost_value, paired_t_test, psnr, ssim, CostKind, ImageGrid, Shape};
use common::{check_metrics, rng};
use proptest::prelude::*;
use rand::Rng;

fn image(s: Shape, seed: u64) -> ImageGrid {
    let mut r = rng(seed);
    ImageGrid::from_fn(s, |_, _| r.random_range(0.0..1.0))
}

#[test]
fn metric_suite() {
    let c = check_metrics();
    println!("{}", c.detail);
    assert!(c.pass, "{}", c.detail);
}

#[test]
fn constant_shift_t_test_is_degenerate_and_significant() {
    let b: Vec<f64> = (0..10).map(|k| 0.1 * k as f64).collect();
    let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
    let t = paired_t_test(&a, &b).unwrap();
    assert!(t.degenerate && t.t.is_infinite() && t.significant);
    let t = paired_t_test(&b, &b).unwrap();
    assert_eq!(t.t, 0.0);
    assert!(!t.significant);
    assert!(paired_t_test(&[1.0], &[2.0]).is_err());
}

#[test]
fn identical_images_print_the_infinity_token() {
    let a = image(Shape::new(4, 4).unwrap(), 1);
    assert_eq!(format_psnr(psnr(&a, &a).unwrap()), "inf");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psnr_matches_direct_mse_and_l22_cost(w in 2usize..16, h in 2usize..16, seed in any::<u64>()) {
        let s = Shape::new(w, h).unwrap();
        let (a, b) = (image(s, seed), image(s, seed ^ 1));
        let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / s.len() as f64;
        let p = psnr(&a, &b).unwrap();
        prop_assert!((p - (-10.0 * mse.log10())).abs() <= 1e-10);
        let cost = cost_value(&a, &b, CostKind::L22).unwrap();
        prop_assert!((cost - 0.5 * mse * s.len() as f64).abs() <= 1e-12 * cost.max(1.0));
    }

    #[test]
    fn psnr_decreases_along_nested_corruptions(seed in any::<u64>(), t1 in 0.01f64..1.0, dt in 0.01f64..1.0) {
        let s = Shape::new(9, 7).unwrap();
        let (r, n) = (image(s, seed), image(s, seed ^ 7));
        let at = |t: f64| psnr(&ImageGrid::from_fn(s, |i, j| r.get(i, j) + t * (n.get(i, j) - 0.5)), &r).unwrap();
        prop_assert!(at(t1 + dt) < at(t1));
    }

    #[test]
    fn ssim_is_symmetric_and_at_most_one(seed in any::<u64>(), eps in 0.0f64..0.3) {
        let s = Shape::new(16, 13).unwrap();
        let a = image(s, seed);
        let b = ImageGrid::from_fn(s, |i, j| a.get(i, j) + eps * (image(s, seed ^ 3).get(i, j) - 0.5));
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12);
        if eps > 1e-3 {
            prop_assert!(ab < 1.0 - 1e-12);
        }
    }

    #[test]
    fn t_test_is_antisymmetric(pairs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert_eq!(ab.significant, ba.significant);
        let flipped = match ab.direction {
            Direction::AGreater => Direction::BGreater,
            Direction::BGreater => Direction::AGreater,
            Direction::Equal => Direction::Equal,
        };
        prop_assert_eq!(ba.direction, flipped);
    }

    #[test]
    fn noise_is_seeded_and_centred(seed in any::<u64>()) {
        let s = Shape::new(128, 128).unwrap();
        let img = ImageGrid::constant(s, 0.5);
        let a = add_gaussian_noise(&img, 20.0, seed).unwrap();
        prop_assert_eq!(&a, &add_gaussian_noise(&img, 20.0, seed).unwrap());
        let n = s.len() as f64;
        let sd = 20f64.sqrt() / 255.0;
        let mean = a.as_slice().iter().map(|v| v - 0.5).sum::<f64>() / n;
        let var = a.as_slice().iter().map(|v| (v - 0.5 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        prop_assert!(mean.abs() < 5.0 * sd / n.sqrt());
        prop_assert!((var / (sd * sd) - 1.0).abs() < 5.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn huber_cost_ignores_constant_offsets(seed in any::<u64>(), c in -1.0f64..1.0) {
        let s = Shape::new(8, 6).unwrap();
        let a = image(s, seed);
        let v = cost_value(&a.map(|x| x + c), &a, CostKind::huber_tv()).unwrap();
        prop_assert!(v.abs() <= 1e-12);
    }
}
