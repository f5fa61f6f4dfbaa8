use diffrx_core::diffusion::*;
use diffrx_core::estimators::nmse;
use diffrx_core::ResourceGrid;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn default_schedule() -> NoiseSchedule {
    ScheduleSpec::default().build().unwrap()
}

/// Unit complex power: each plane has variance 1/2.
fn unit_grid(k: usize, m: usize, seed: u64) -> ResourceGrid {
    standard_normal_grid(k, m, &mut rng(seed)).scale(std::f64::consts::FRAC_1_SQRT_2)
}

fn plane_variance(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[test]
fn default_schedule_matches_direct_product() {
    let s = default_schedule();
    let mut ab = 1.0;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        ab *= 1.0 - beta;
        assert!((s.alpha_bar(t) - ab).abs() <= 1e-12 * ab.max(1e-30));
    }
    assert!((s.alpha_bar(1000) - 4.0e-5).abs() < 0.5e-5, "{}", s.alpha_bar(1000));
    assert_eq!(s.alpha_bar(0), 1.0);
    assert!(s.alpha_bar(1000) < 0.01);
    for t in 1..1000 {
        assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
        assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
    }
    assert_eq!(s.posterior_variance(1), 0.0);
}

#[test]
fn q_sample_limits() {
    let s = default_schedule();
    let x0 = unit_grid(8, 2, 1);
    let eps = standard_normal_grid(8, 2, &mut rng(2));
    assert_eq!(q_sample(&x0, 0, &eps, &s).unwrap(), x0);
    let xt = q_sample(&x0, 1000, &eps, &s).unwrap();
    assert!(nmse(&xt, &eps).unwrap() < 1e-3);
    assert!(q_sample(&x0, 1001, &eps, &s).is_err());
    assert!(q_sample(&x0, 1, &standard_normal_grid(4, 2, &mut rng(0)), &s).is_err());
}

#[test]
fn q_sample_marginal_variance() {
    let s = default_schedule();
    let mut r = rng(3);
    for t in [1usize, 500, 1000] {
        let mut re = Vec::with_capacity(10_000);
        for _ in 0..100 {
            let x0 = standard_normal_grid(100, 1, &mut r).scale(std::f64::consts::FRAC_1_SQRT_2);
            let eps = standard_normal_grid(100, 1, &mut r);
            re.extend_from_slice(q_sample(&x0, t, &eps, &s).unwrap().re());
        }
        let ab = s.alpha_bar(t);
        let want = ab * 0.5 + (1.0 - ab);
        let got = plane_variance(&re);
        assert!((got / want - 1.0).abs() < 0.03, "t={t}: {got} vs {want}");
    }
}

#[test]
fn reverse_inverts_forward_at_t1() {
    let s = default_schedule();
    let x0 = unit_grid(16, 1, 4);
    let eps = standard_normal_grid(16, 1, &mut rng(5));
    let x1 = q_sample(&x0, 1, &eps, &s).unwrap();
    let back = reverse_step(&x1, &eps, 1, &s, None).unwrap();
    assert!(back.sub(&x0).unwrap().energy() < 1e-24);
    let z = standard_normal_grid(16, 1, &mut rng(6));
    assert!(reverse_step(&x1, &eps, 1, &s, Some(&z)).is_err());
    assert!(reverse_step(&x1, &eps, 0, &s, None).is_err());
}

#[test]
fn zero_noise_prediction_with_tiny_beta_is_a_no_op() {
    let s = NoiseSchedule::linear(10, 1e-12, 1e-12).unwrap();
    let x = unit_grid(8, 1, 7);
    let zero = ResourceGrid::zeros(8, 1);
    let y = reverse_step(&x, &zero, 5, &s, None).unwrap();
    assert!(y.sub(&x).unwrap().energy() < 1e-20);
}

#[test]
fn oracle_chain_recovers_x0() {
    let s = default_schedule();
    let x0 = unit_grid(32, 2, 8);
    let mut x = standard_normal_grid(32, 2, &mut rng(9));
    for t in (1..=1000).rev() {
        let ab = s.alpha_bar(t);
        let eps_hat = x
            .zip_map(&x0, "oracle", |xt, h| (xt - h * ab.sqrt()) / (1.0 - ab).sqrt())
            .unwrap();
        x = reverse_step(&x, &eps_hat, t, &s, None).unwrap();
    }
    let e = nmse(&x, &x0).unwrap();
    assert!(e < 1e-3, "{e}");
}

#[test]
fn renoise_examples() {
    let tiny = NoiseSchedule::linear(4, 1e-12, 1e-12).unwrap();
    let x = unit_grid(8, 1, 10);
    let e = standard_normal_grid(8, 1, &mut rng(11));
    let y = forward_renoise(&x, &tiny, 2, &e).unwrap();
    assert!(y.sub(&x).unwrap().energy() < 1e-10);
    assert!(forward_renoise(&x, &tiny, 1, &e).is_err());

    // one step of variance growth
    let s = default_schedule();
    let t = 700;
    let mut r = rng(12);
    let mut re = Vec::new();
    for _ in 0..100 {
        let prev = standard_normal_grid(100, 1, &mut r).scale(0.6);
        let e = standard_normal_grid(100, 1, &mut r);
        re.extend_from_slice(forward_renoise(&prev, &s, t, &e).unwrap().re());
    }
    let want = (1.0 - s.beta(t)) * 0.36 + s.beta(t);
    assert!((plane_variance(&re) / want - 1.0).abs() < 0.03);
}

#[test]
fn renoise_then_matching_reverse_returns_start() {
    let s = default_schedule();
    for t in [2usize, 40, 600, 1000] {
        let prev = unit_grid(16, 1, t as u64);
        let e = standard_normal_grid(16, 1, &mut rng(13));
        let xt = forward_renoise(&prev, &s, t, &e).unwrap();
        // the noise prediction that the reverse mean inverts exactly
        let k = (1.0 - s.alpha_bar(t)).sqrt() / s.beta(t).sqrt();
        let eps_hat = e.scale(k);
        let back = reverse_step(&xt, &eps_hat, t, &s, None).unwrap();
        assert!(back.sub(&prev).unwrap().energy().sqrt() < 1e-6, "t={t}");
    }
}

#[test]
fn renoise_chain_matches_q_sample_marginal() {
    let s = default_schedule();
    let t = 60;
    let x0 = ResourceGrid::from_fn(50, 1, |_, _| Complex64::new(1.0, -0.5));
    let mut r = rng(14);
    let (mut chain_re, mut direct_re) = (Vec::new(), Vec::new());
    for _ in 0..200 {
        let e = standard_normal_grid(50, 1, &mut r);
        let mut x = q_sample(&x0, 1, &e, &s).unwrap();
        for step in 2..=t {
            let e = standard_normal_grid(50, 1, &mut r);
            x = forward_renoise(&x, &s, step, &e).unwrap();
        }
        chain_re.extend_from_slice(x.re());
        let e = standard_normal_grid(50, 1, &mut r);
        direct_re.extend_from_slice(q_sample(&x0, t, &e, &s).unwrap().re());
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let want_mean = s.alpha_bar(t).sqrt();
    assert!((mean(&chain_re) - want_mean).abs() < 0.03 * want_mean);
    assert!((mean(&direct_re) - want_mean).abs() < 0.03 * want_mean);
    let ratio = plane_variance(&chain_re) / plane_variance(&direct_re);
    assert!((ratio - 1.0).abs() < 0.03 * 2.0, "{ratio}");
    let want_var = 1.0 - s.alpha_bar(t);
    assert!((plane_variance(&chain_re) / want_var - 1.0).abs() < 0.03);
}

#[test]
fn respacing_keeps_endpoints_and_alpha_bars() {
    let s = default_schedule();
    for steps in [1usize, 2, 50, 370, 1000] {
        let taus = strided_timesteps(1000, steps).unwrap();
        assert_eq!(*taus.last().unwrap(), 1000);
        if steps >= 2 {
            assert_eq!(taus[0], 1);
        }
        assert!(taus.windows(2).all(|w| w[0] < w[1]));
        let r = s.respace(steps).unwrap();
        assert_eq!(r.len(), steps);
        for (i, &tau) in taus.iter().enumerate() {
            assert!((r.alpha_bar(i + 1) - s.alpha_bar(tau)).abs() < 1e-12);
            assert_eq!(r.model_timestep(i + 1), tau);
        }
    }
    assert!(strided_timesteps(1000, 0).is_err());
    assert!(strided_timesteps(1000, 1001).is_err());
}

#[test]
fn invalid_schedules() {
    assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
    assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
    assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
    assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
}

proptest! {
    #[test]
    fn reverse_step_is_deterministic(seed in any::<u64>(), t in 2usize..=1000) {
        let s = default_schedule();
        let x = unit_grid(8, 2, seed);
        let e = standard_normal_grid(8, 2, &mut rng(seed ^ 3));
        let z = standard_normal_grid(8, 2, &mut rng(seed ^ 5));
        let a = reverse_step(&x, &e, t, &s, Some(&z)).unwrap();
        let b = reverse_step(&x, &e, t, &s, Some(&z)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn posterior_variance_formula(t in 2usize..=1000) {
        let s = default_schedule();
        let want = s.beta(t) * (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t));
        prop_assert!((s.posterior_variance(t) - want).abs() <= 1e-15);
        prop_assert!(s.posterior_variance(t) <= s.beta(t));
    }
}
