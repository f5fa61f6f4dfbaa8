use diffrx_core::denoiser::*;
use diffrx_core::numcore::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> DenoiserConfig {
    DenoiserConfig {
        base_channels: 8,
        depth: 2,
        kernel: 3,
        time_embed_dim: 16,
        norm_groups: 4,
    }
}

/// Params with every tensor (including the zero-initialised ones) perturbed.
fn random_params(cfg: &DenoiserConfig, seed: u64) -> DenoiserParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_params(cfg, &mut rng).unwrap();
    for t in p.tensors.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    p
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn loss_value(p: &DenoiserParams, cond: &Tensor, eps: &Tensor, ts: &[usize]) -> f64 {
    let mut g = Graph::inference();
    let b = BoundParams::bind(&mut g, p);
    let l = loss_graph(&mut g, &b, &p.config, cond, eps, ts).unwrap();
    g.value(l).item().unwrap()
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = small_config();
    let params = random_params(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cond = random_tensor(&[2, 5, 16, 1], &mut rng);
    let eps = random_tensor(&[2, 2, 16, 1], &mut rng);
    let ts = [3usize, 700];

    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &params);
    let loss = loss_graph(&mut g, &bound, &cfg, &cond, &eps, &ts).unwrap();
    g.backward(loss).unwrap();
    let grads: Vec<(String, Tensor)> = bound
        .iter()
        .map(|(n, v)| (n.clone(), g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(*v).shape()))))
        .collect();

    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < 50 {
        let (name, grad) = &grads[rng.gen_range(0..grads.len())];
        let i = rng.gen_range(0..grad.len());
        let mut plus = params.clone();
        let mut minus = params.clone();
        let bump = |p: &mut DenoiserParams, d: f64| {
            let mut t = p.tensors.remove(name).unwrap();
            t.data_mut()[i] += d;
            p.tensors.insert(name.clone(), t);
        };
        bump(&mut plus, h);
        bump(&mut minus, -h);
        let fd = (loss_value(&plus, &cond, &eps, &ts) - loss_value(&minus, &cond, &eps, &ts)) / (2.0 * h);
        let an = grad.data()[i];
        if fd.abs().max(an.abs()) < 1e-7 {
            continue;
        }
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        worst = worst.max(rel);
        assert!(rel < 1e-3, "{name}[{i}]: fd {fd} analytic {an}");
        checked += 1;
    }
    assert!(worst < 1e-3);
}

#[test]
fn embedding_distinguishes_every_timestep() {
    let dim = 64;
    let embs: Vec<Vec<f64>> = (1..=1000).map(|t| time_embedding(t as f64, dim).unwrap()).collect();
    for e in &embs {
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= (dim as f64).sqrt() + 1e-12);
    }
    // neighbours are the closest pairs; the lowest frequency keeps them apart
    for w in embs.windows(2) {
        let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!(d > 1e-8);
    }
    for i in (0..1000).step_by(37) {
        for j in (i + 1)..1000 {
            assert!(embs[i] != embs[j], "t={} and t={}", i + 1, j + 1);
        }
    }
    assert!(time_embedding(5.0, 0).is_err());
    assert!(time_embedding(5.0, 15).is_err());
}

#[test]
fn forward_is_deterministic_and_timestep_aware() {
    let cfg = small_config();
    let p = random_params(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cond = random_tensor(&[1, 5, 32, 1], &mut rng);
    let a = forward(&p, &cond, &[10]).unwrap();
    let b = forward(&p, &cond, &[10]).unwrap();
    assert_eq!(a, b);
    let c = forward(&p, &cond, &[900]).unwrap();
    assert!(a.max_abs_diff(&c) > 1e-6);
}

#[test]
fn batch_items_are_independent() {
    let cfg = small_config();
    let p = random_params(&cfg, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0 = random_tensor(&[5, 16, 4], &mut rng);
    let x1 = random_tensor(&[5, 16, 4], &mut rng);
    let both = forward(&p, &stack(&[x0.clone(), x1.clone()]).unwrap(), &[20, 400]).unwrap();
    let one = forward(&p, &stack(&[x1]).unwrap(), &[400]).unwrap();
    let n = one.len();
    let diff = both.data()[n..]
        .iter()
        .zip(one.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "{diff}");
}

#[test]
fn default_model_is_desk_scale() {
    let p = init_params(&DenoiserConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(p.num_parameters() < 500_000);
    assert!(p.all_finite());
}

#[test]
fn untrained_output_is_small() {
    let p = init_params(&small_config(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cond = random_tensor(&[2, 5, 16, 1], &mut rng);
    let y = forward(&p, &cond, &[1, 1000]).unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn params_round_trip_through_tensor_map() {
    let cfg = small_config();
    let p = random_params(&cfg, 9);
    let back = DenoiserParams::from_tensors(cfg.clone(), &p.tensors).unwrap();
    assert_eq!(back, p);
    let mut broken = p.tensors.clone();
    broken.remove("out.bias");
    assert!(DenoiserParams::from_tensors(cfg.clone(), &broken).is_err());
    let other = DenoiserConfig {
        base_channels: 16,
        ..cfg
    };
    assert!(DenoiserParams::from_tensors(other, &p.tensors).is_err());
}

#[test]
fn unstack_inverts_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let items: Vec<Tensor> = (0..3).map(|_| random_tensor(&[2, 4, 3], &mut rng)).collect();
    let grids = unstack_grids(&stack(&items).unwrap()).unwrap();
    for (g, t) in grids.iter().zip(&items) {
        assert_eq!(g.re(), &t.data()[..12]);
        assert_eq!(g.im(), &t.data()[12..]);
    }
    assert!(stack(&[]).is_err());
    assert!(unstack_grids(&Tensor::zeros(&[1, 3, 4, 1])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_shape_matches_input(k in 1usize..40, m in 1usize..6, b in 1usize..3, seed in any::<u64>()) {
        let p = random_params(&small_config(), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = random_tensor(&[b, 5, k, m], &mut rng);
        let ts: Vec<usize> = (0..b).map(|i| 1 + i * 300).collect();
        let y = forward_padded(&p, &cond, &ts).unwrap();
        prop_assert_eq!(y.shape(), &[b, 2, k, m][..]);
        prop_assert!(y.all_finite());
    }
}
