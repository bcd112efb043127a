use dcdm::tensor::{decode_grid, encode_grid, gaussian_grid, GridShape, RngStream};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided Kolmogorov–Smirnov statistic against the standard normal.
fn ks_statistic(mut xs: Vec<f64>) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

// Asymptotic critical value for α = 0.01.
fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

#[test]
fn scalar_grids_across_seeds_are_standard_normal() {
    let shape = GridShape::new(1, 1, 1, 1).unwrap();
    let xs: Vec<f64> = (0..100_000u64)
        .map(|s| f64::from(gaussian_grid(shape, s).unwrap().data()[0]))
        .collect();
    assert!(xs.iter().all(|v| v.is_finite()));
    let d = ks_statistic(xs);
    assert!(d < ks_critical(100_000), "D = {d}");
}

#[test]
fn ks_statistic_rejects_shifted_samples() {
    let mut rng = RngStream::new(1, "ks-sanity", 0);
    let xs: Vec<f64> = (0..10_000).map(|_| rng.gaussian_f64() + 0.1).collect();
    assert!(ks_statistic(xs) > ks_critical(10_000));
}

#[test]
fn init_streams_are_uncorrelated() {
    let mut a = RngStream::new(42, "init", 0);
    let mut b = RngStream::new(42, "init", 1);
    let n = 100_000;
    let pairs: Vec<(f64, f64)> = (0..n).map(|_| (a.gaussian_f64(), b.gaussian_f64())).collect();
    let nf = n as f64;
    let (ma, mb) = (
        pairs.iter().map(|p| p.0).sum::<f64>() / nf,
        pairs.iter().map(|p| p.1).sum::<f64>() / nf,
    );
    let cov: f64 = pairs.iter().map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>();
    let va: f64 = pairs.iter().map(|(x, _)| (x - ma).powi(2)).sum::<f64>();
    let vb: f64 = pairs.iter().map(|(_, y)| (y - mb).powi(2)).sum::<f64>();
    let rho = cov / (va * vb).sqrt();
    assert!(rho.abs() < 0.01, "ρ = {rho}");
}

#[test]
fn frame_order_does_not_matter() {
    let shape = GridShape::new(5, 3, 4, 2).unwrap();
    let g = gaussian_grid(shape, 8).unwrap();
    for t in 0..5 {
        let mut rng = RngStream::new(8, "init", t as u64);
        let mut frame = vec![0.0f32; shape.frame_len()];
        rng.fill_gaussian(&mut frame);
        assert_eq!(g.frame(t), &frame[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gaussian_grid_is_a_pure_function(t in 1usize..4, h in 1usize..6, w in 1usize..6, c in 1usize..4, seed: u64) {
        let shape = GridShape::new(t, h, w, c).unwrap();
        let a = gaussian_grid(shape, seed).unwrap();
        let b = gaussian_grid(shape, seed).unwrap();
        prop_assert!(a.bit_eq(&b));
        prop_assert!(a.data().iter().all(|v| v.is_finite()));
        prop_assert!(decode_grid(&encode_grid(&a)).unwrap().bit_eq(&a));
    }
}
