mod common;

use common::*;
use proptest::prelude::*;
use radarfall_core::diffengine::{adam_step, clip_global_norm, AdamConfig, AdamState, Tensor};
use radarfall_core::probkit::*;

#[test]
fn closed_form_kld_matches_quadrature() {
    let worst = kld_worst_error(1000, 31);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn quadrature_is_accurate_where_the_answer_is_known() {
    assert!(kld_quadrature(0.0, 0.0).abs() < 1e-12);
    // KL(N(μ,1)‖N(0,1)) = μ²/2.
    assert!((kld_quadrature(2.0, 0.0) - 2.0).abs() < 1e-10);
}

#[test]
fn reparameterized_draws_have_the_right_moments() {
    let q = DiagonalGaussian::new(vec![3.0], vec![4f64.ln()]).unwrap();
    let mut rng = RandomSource::new(12);
    let n = 100_000;
    let z: Vec<f64> = (0..n).map(|_| reparameterize(&q, &mut rng)[0]).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((mean - 3.0).abs() <= 0.02, "{mean}");
    assert!((sd - 2.0).abs() <= 0.02, "{sd}");
}

#[test]
fn reparameterize_with_is_affine_in_eps() {
    let q = DiagonalGaussian::new(vec![1.0, -2.0], vec![0.0, 2f64.ln() * 2.0]).unwrap();
    let z = reparameterize_with(&q, &[0.5, -1.0]).unwrap();
    assert_eq!(z[0], 1.5);
    assert!((z[1] - (-4.0)).abs() < 1e-15);
    assert!(reparameterize_with(&q, &[0.0]).is_err());
}

#[test]
fn standard_normal_draws_are_standard() {
    let mut rng = RandomSource::new(3);
    let n = 200_000;
    let z: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
    let mean = z.iter().sum::<f64>() / n as f64;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let tail = z.iter().filter(|v| v.abs() > 1.96).count() as f64 / n as f64;
    assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.01);
    assert!((tail - 0.05).abs() < 0.003, "{tail}");
}

#[test]
fn child_streams_are_reproducible_and_distinct() {
    let root = RandomSource::new(5);
    let a: Vec<f64> = (0..4).map({ let mut r = root.child(1); move |_| r.uniform() }).collect();
    let b: Vec<f64> = (0..4).map({ let mut r = root.child(1); move |_| r.uniform() }).collect();
    let c: Vec<f64> = (0..4).map({ let mut r = root.child(2); move |_| r.uniform() }).collect();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn adam_converges_on_a_quadratic() {
    // f(x) = Σ c_i (x_i - t_i)², gradient 2 c_i (x_i - t_i).
    let target = [1.5, -2.0, 0.25];
    let curv = [1.0, 10.0, 0.1];
    let mut x = Tensor::row(vec![0.0; 3]);
    let mut state = AdamState::new([&x], AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
    let f = |x: &Tensor| (0..3).map(|i| curv[i] * (x.values()[i] - target[i]).powi(2)).sum::<f64>();
    let start = f(&x);
    for _ in 0..100 {
        let g = Tensor::row((0..3).map(|i| 2.0 * curv[i] * (x.values()[i] - target[i])).collect());
        adam_step(&mut [&mut x], &[g], &mut state).unwrap();
    }
    assert_eq!(state.step, 100);
    assert!(f(&x) < 1e-2 * start, "{} -> {}", start, f(&x));
}

#[test]
fn first_adam_step_moves_each_coordinate_by_the_learning_rate() {
    // Bias correction makes the first update ±lr regardless of gradient scale.
    let mut x = Tensor::row(vec![0.0, 0.0]);
    let mut state = AdamState::new([&x], AdamConfig { learning_rate: 0.01, ..AdamConfig::default() });
    adam_step(&mut [&mut x], &[Tensor::row(vec![1e3, -1e-3])], &mut state).unwrap();
    assert!((x.values()[0] + 0.01).abs() < 1e-6);
    assert!((x.values()[1] - 0.01).abs() < 1e-4);
}

proptest! {
    #[test]
    fn kld_is_nonnegative_and_zero_only_at_the_prior(
        mean in proptest::collection::vec(-5.0f64..5.0, 1..16),
        seed in any::<u64>(),
    ) {
        let mut rng = RandomSource::new(seed);
        let lv: Vec<f64> = mean.iter().map(|_| rng.uniform_range(-8.0, 8.0)).collect();
        let d = mean.len();
        let k = kld_to_standard_normal(&DiagonalGaussian::new(mean, lv).unwrap()).unwrap();
        prop_assert!(k >= 0.0);
        prop_assert_eq!(kld_to_standard_normal(&DiagonalGaussian::standard(d)).unwrap(), 0.0);
    }

    #[test]
    fn clipping_caps_the_global_norm(values in proptest::collection::vec(-100.0f64..100.0, 1..20), cap in 0.1f64..10.0) {
        let n = values.len();
        let mut g = vec![Tensor::row(values)];
        let before = clip_global_norm(&mut g, cap);
        let after = g[0].values().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(after <= cap * (1.0 + 1e-12) || before <= cap);
        prop_assert_eq!(g[0].cols(), n);
    }
}
