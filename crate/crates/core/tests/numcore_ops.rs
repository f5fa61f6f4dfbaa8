use diffrx_core::numcore::{Graph, Tensor, Var};
use diffrx_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct six-loop cross-correlation with zero padding.
fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (bs, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, k, _) = w.dims4().unwrap();
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(&[bs, cout, h, wd]);
    for n in 0..bs {
        for o in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b.data()[o];
                    for c in 0..cin {
                        for di in 0..k {
                            for dj in 0..k {
                                let si = i as isize + di as isize - p;
                                let sj = j as isize + dj as isize - p;
                                if si < 0 || sj < 0 || si >= h as isize || sj >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((o * cin + c) * k + di) * k + dj]
                                    * x.data()[((n * cin + c) * h + si as usize) * wd + sj as usize];
                            }
                        }
                    }
                    out.data_mut()[((n * cout + o) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    out
}

fn conv_once(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let mut g = Graph::inference();
    let (x, w, b) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv2d(x, w, b).unwrap();
    g.value(y).clone()
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let a = g.param(t(&[2], &[1.0, 2.0]));
    let b = g.param(t(&[2], &[3.0, 4.0]));
    let s = g.add(a, b).unwrap();
    assert_eq!(g.value(s).data(), &[4.0, 6.0]);
    let z = g.scale(a, 0.0);
    assert_eq!(g.value(z).data(), &[0.0, 0.0]);
    let c = g.constant(t(&[3], &[1.0, 2.0, 3.0]));
    match g.add(a, c) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2]);
            assert_eq!(rhs, vec![3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn mul_backward_matches_hand_derivative() {
    let mut g = Graph::new();
    let a = g.param(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[2], &[3.0, 5.0]));
    let p = g.mul(a, b).unwrap();
    let loss = g.mean(p);
    g.backward(loss).unwrap();
    let ga = g.grad(a).unwrap();
    assert!((ga.data()[0] - 1.5).abs() < 1e-12);
    assert!((ga.data()[1] - 2.5).abs() < 1e-12);
    assert!(g.grad(b).is_none());
}

#[test]
fn conv_ones_counts_padding() {
    let x = Tensor::full(&[1, 1, 3, 3], 1.0);
    let w = Tensor::full(&[1, 1, 3, 3], 1.0);
    let y = conv_once(&x, &w, &Tensor::zeros(&[1]));
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(y.data()[4], 9.0);
    for corner in [0, 2, 6, 8] {
        assert_eq!(y.data()[corner], 4.0);
    }
    assert_eq!(y.data()[1], 6.0);
}

#[test]
fn conv_identity_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 1, 4, 5]);
    let mut w = Tensor::zeros(&[1, 1, 3, 3]);
    w.data_mut()[4] = 1.0;
    let y = conv_once(&x, &w, &Tensor::zeros(&[1]));
    assert_eq!(y, x);
}

#[test]
fn conv_matches_naive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases: &[([usize; 4], usize, usize)] = &[
        ([1, 2, 5, 5], 3, 3),
        ([2, 3, 8, 1], 4, 3),
        ([1, 2, 1, 7], 2, 3),
        ([2, 2, 6, 4], 3, 5),
        ([1, 1, 2, 2], 1, 5),
    ];
    for &(xs, cout, k) in cases {
        let x = random(&mut rng, &xs);
        let w = random(&mut rng, &[cout, xs[1], k, k]);
        let b = random(&mut rng, &[cout]);
        let y = conv_once(&x, &w, &b);
        let r = naive_conv(&x, &w, &b);
        assert!(y.max_abs_diff(&r) < 1e-6, "case {xs:?}");
    }
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::inference();
    let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let b = g.constant(Tensor::zeros(&[1]));
    assert!(matches!(g.conv2d(x, w, b), Err(Error::Shape { .. })));
}

#[test]
fn activations_and_norm_examples() {
    let mut g = Graph::inference();
    let x = g.constant(t(&[2], &[-1.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.silu(z);
    assert_eq!(g.value(s).item().unwrap(), 0.0);

    let c = g.constant(Tensor::full(&[2, 4, 3, 1], 7.0));
    let gamma = g.constant(Tensor::full(&[4], 1.0));
    let beta = g.constant(Tensor::zeros(&[4]));
    let n = g.groupnorm(c, gamma, beta, 2).unwrap();
    assert!(g.value(n).data().iter().all(|v| *v == 0.0));
    assert!(matches!(g.groupnorm(c, gamma, beta, 3), Err(Error::Config(_))));
}

#[test]
fn backward_contract() {
    let x = t(&[3], &[0.5, -1.0, 2.0]);
    let mut g = Graph::new();
    let w = g.param(t(&[3], &[0.1, 0.2, 0.3]));
    let xv = g.constant(x.clone());
    let p = g.mul(w, xv).unwrap();
    let loss = g.sum(p);
    assert!(matches!(g.backward(p), Err(Error::Usage(_))));
    g.backward(loss).unwrap();
    assert_eq!(g.grad(w).unwrap(), &x);
    assert!(matches!(g.backward(loss), Err(Error::Usage(_))));

    let mut inf = Graph::inference();
    let s = inf.constant(Tensor::scalar(1.0));
    assert!(matches!(inf.backward(s), Err(Error::Usage(_))));
}

// Finite-difference gradient checks.

type Build = dyn Fn(&mut Graph, &[Var]) -> Var;

/// Norm-wise relative error between the tape gradient and central
/// differences, worst over all inputs.
fn grad_check(inputs: &[Tensor], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let loss = build(&mut g, &vars);
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad(*v).unwrap().clone()).collect();

    let eval = |xs: &[Tensor]| {
        let mut g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let l = build(&mut g, &vars);
        g.value(l).item().unwrap()
    };
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let mut num = vec![0.0; x.len()];
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + h;
            let up = eval(&xs);
            xs[i].data_mut()[j] = x.data()[j] - h;
            let dn = eval(&xs);
            num[j] = (up - dn) / (2.0 * h);
        }
        let a = analytic[i].data();
        let diff: f64 = a.iter().zip(&num).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(num.iter().map(|v| v * v).sum::<f64>().sqrt());
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Projects an output onto a fixed random direction so every element
/// contributes a distinct weight to the scalar loss.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(&mut rng, &shape));
    let p = g.mul(y, r).unwrap();
    g.sum(p)
}

const TRIALS: u64 = 20;
const TOL: f64 = 1e-4;

fn check_trials(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, build: &Build) {
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let inputs = make(&mut rng);
        let err = grad_check(&inputs, build);
        assert!(err < TOL, "{name}: trial {trial} relative error {err:e}");
    }
}

#[test]
fn gradcheck_binary_ops() {
    check_trials(
        "add/sub/mul broadcast",
        |r| {
            vec![
                random(r, &[2, 3, 2, 2]),
                random(r, &[3]),
                random(r, &[2, 3]),
                random(r, &[2, 3, 2, 2]),
            ]
        },
        &|g, v| {
            let a = g.add(v[0], v[1]).unwrap();
            let b = g.mul(a, v[2]).unwrap();
            let c = g.sub(b, v[3]).unwrap();
            let d = g.mul(c, v[0]).unwrap();
            let e = g.scale(d, 0.7);
            project(g, e, 5)
        },
    );
}

#[test]
fn gradcheck_conv() {
    check_trials(
        "conv2d",
        |r| vec![random(r, &[2, 2, 4, 3]), random(r, &[3, 2, 3, 3]), random(r, &[3])],
        &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            project(g, y, 6)
        },
    );
    check_trials(
        "conv2d single column",
        |r| vec![random(r, &[2, 3, 6, 1]), random(r, &[2, 3, 3, 3]), random(r, &[2])],
        &|g, v| {
            let y = g.conv2d(v[0], v[1], v[2]).unwrap();
            project(g, y, 7)
        },
    );
}

#[test]
fn gradcheck_activations() {
    check_trials(
        "silu",
        |r| vec![random(r, &[2, 3, 2, 2]).map(|x| 3.0 * x)],
        &|g, v| {
            let y = g.silu(v[0]);
            project(g, y, 8)
        },
    );
    check_trials(
        "relu",
        // keep inputs away from the kink
        |r| vec![random(r, &[2, 3, 2, 2]).map(|x| if x.abs() < 0.05 { x + 0.1 } else { x })],
        &|g, v| {
            let y = g.relu(v[0]);
            project(g, y, 9)
        },
    );
}

#[test]
fn gradcheck_groupnorm() {
    check_trials(
        "groupnorm",
        |r| vec![random(r, &[2, 4, 3, 2]), random(r, &[4]), random(r, &[4])],
        &|g, v| {
            let y = g.groupnorm(v[0], v[1], v[2], 2).unwrap();
            project(g, y, 10)
        },
    );
}

#[test]
fn gradcheck_linear() {
    check_trials(
        "linear",
        |r| vec![random(r, &[3, 4]), random(r, &[5, 4]), random(r, &[5])],
        &|g, v| {
            let y = g.linear(v[0], v[1], v[2]).unwrap();
            project(g, y, 11)
        },
    );
}

#[test]
fn gradcheck_resampling_and_concat() {
    check_trials(
        "pool/upsample/concat/crop",
        |r| vec![random(r, &[2, 2, 4, 2]), random(r, &[2, 3, 4, 2])],
        &|g, v| {
            let p = g.avg_pool(v[0], 2, 2).unwrap();
            let u = g.upsample(p, 2, 2).unwrap();
            let c = g.concat(&[u, v[1]]).unwrap();
            let k = g.crop(c, 3, 1).unwrap();
            project(g, k, 12)
        },
    );
}

#[test]
fn gradcheck_losses() {
    check_trials(
        "mse/mean",
        |r| vec![random(r, &[2, 2, 3, 1]), random(r, &[2, 2, 3, 1])],
        &|g, v| {
            let m = g.mse(v[0], v[1]).unwrap();
            let s = g.mean(v[0]);
            let s2 = g.mul(s, s).unwrap();
            g.add(m, s2).unwrap()
        },
    );
}

#[test]
fn gradcheck_composed_block() {
    check_trials(
        "conv-groupnorm-silu stack",
        |r| {
            vec![
                random(r, &[2, 2, 4, 1]),
                random(r, &[4, 2, 3, 3]),
                random(r, &[4]),
                random(r, &[4]).map(|x| 1.0 + 0.3 * x),
                random(r, &[4]),
                random(r, &[2, 4]),
            ]
        },
        &|g, v| {
            let c = g.conv2d(v[0], v[1], v[2]).unwrap();
            let n = g.groupnorm(c, v[3], v[4], 2).unwrap();
            let a = g.silu(n);
            let t = g.add(a, v[5]).unwrap();
            let p = g.avg_pool(t, 2, 1).unwrap();
            project(g, p, 13)
        },
    );
}

#[test]
fn inference_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[3, 4, 8, 2]);
    let w = random(&mut rng, &[5, 4, 3, 3]);
    let b = random(&mut rng, &[5]);
    let a = conv_once(&x, &w, &b);
    let c = conv_once(&x, &w, &b);
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        c.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
