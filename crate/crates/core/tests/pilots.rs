use diffrx_core::chansim::{draw_channel, ChannelModelConfig};
use diffrx_core::pilots::*;
use diffrx_core::ResourceGrid;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pilots_at(mask: &PilotMask) -> Vec<usize> {
    (0..mask.values().len()).filter(|&i| mask.is_pilot(i)).collect()
}

fn channel(k: usize, m: usize, seed: u64) -> ResourceGrid {
    let cfg = ChannelModelConfig {
        num_subcarriers: k,
        num_symbols: m,
        max_doppler: 200.0,
        ..Default::default()
    };
    draw_channel(&cfg, &mut rng(seed)).unwrap()
}

#[test]
fn comb_examples() {
    assert_eq!(pilots_at(&comb_mask_with_offset(8, 1, 4, 0).unwrap()), vec![0, 4]);
    let all = comb_mask(8, 2, 1, true, &mut rng(0)).unwrap();
    assert!(all.values().iter().all(|&v| v == 1.0));
    let m = comb_mask(128, 1, 32, true, &mut rng(1)).unwrap();
    let p = pilots_at(&m);
    assert_eq!(p.len(), 4);
    assert!(p.windows(2).all(|w| w[1] - w[0] == 32));
    assert!(comb_mask(8, 1, 9, false, &mut rng(0)).is_err());
    assert!(comb_mask(8, 1, 0, false, &mut rng(0)).is_err());
}

#[test]
fn block_and_lattice_examples() {
    let b = block_mask(8, 4, &[0]).unwrap();
    assert_eq!(b.density(), 0.25);
    let l = lattice_mask(8, 4, 4, 2).unwrap();
    assert_eq!(l.pilot_count(), 4);
    let full = lattice_mask(8, 4, 1, 1).unwrap();
    assert!(full.values().iter().all(|&v| v == 1.0));
    assert!(lattice_mask(8, 4, 9, 1).is_err());
    assert!(lattice_mask(8, 4, 1, 5).is_err());
    assert!(block_mask(8, 1, &[0]).is_err());
    assert!(block_mask(8, 4, &[4]).is_err());
}

#[test]
fn ls_is_exact_without_noise() {
    let h = channel(16, 3, 2);
    let x = pilot_grid(16, 3);
    let y = h.hadamard(&x).unwrap();
    let mask = comb_mask_with_offset(16, 3, 4, 1).unwrap();
    let obs = ls_estimate(&y, &x, &mask, 0.0).unwrap();
    for i in 0..h.len() {
        if mask.is_pilot(i) {
            assert!((obs.ls.at(i) - h.at(i)).norm() < 1e-14);
        } else {
            assert_eq!(obs.ls.at(i), Complex64::new(0.0, 0.0));
        }
    }
    let ones = ResourceGrid::from_fn(16, 3, |_, _| Complex64::new(1.0, 0.0));
    let full = comb_mask(16, 3, 1, false, &mut rng(0)).unwrap();
    assert_eq!(ls_estimate(&h, &ones, &full, 0.0).unwrap().ls, h);
}

#[test]
fn zero_pilot_symbol_is_rejected() {
    let h = channel(8, 1, 3);
    let mask = comb_mask_with_offset(8, 1, 2, 0).unwrap();
    let x = ResourceGrid::zeros(8, 1);
    assert!(ls_estimate(&h, &x, &mask, 0.1).is_err());
}

#[test]
fn ls_error_matches_noise_variance() {
    let h = channel(64, 1, 4);
    let mask = comb_mask_with_offset(64, 1, 4, 0).unwrap();
    let mut r = rng(5);
    let mut err = 0.0;
    let mut n = 0usize;
    for _ in 0..700 {
        let obs = observe(&h, &mask, 10.0, &mut r).unwrap();
        assert!((obs.noise_var - 0.1).abs() < 1e-15);
        for i in pilots_at(&mask) {
            err += (obs.ls.at(i) - h.at(i)).norm_sqr();
            n += 1;
        }
    }
    let mse = err / n as f64;
    assert!((mse / 0.1 - 1.0).abs() < 0.05, "{mse}");
}

#[test]
fn soft_mask_examples() {
    let mask = comb_mask_with_offset(16, 1, 4, 2).unwrap();
    let s = soft_mask_from_confidence(&mask, 0.0, 1.0).unwrap();
    assert_eq!(s.values(), mask.values());
    assert!(s.is_soft());
    let s = soft_mask_from_confidence(&mask, 1.0, 1.0).unwrap();
    for (w, b) in s.values().iter().zip(mask.values()) {
        assert_eq!(*w, if *b > 0.0 { 0.5 } else { 0.0 });
    }
    let s = soft_mask_from_confidence(&mask, 1e12, 1.0).unwrap();
    assert!(s.values().iter().all(|&v| v < 1e-11));
    assert!(soft_mask_from_confidence(&mask, -1.0, 1.0).is_err());
}

#[test]
fn random_offsets_are_uniform() {
    let s = 8;
    let n = 1000;
    let mut counts = vec![0usize; s];
    let mut r = rng(6);
    for _ in 0..n {
        let m = comb_mask(64, 1, s, true, &mut r).unwrap();
        counts[pilots_at(&m)[0]] += 1;
    }
    let p = 1.0 / s as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "{c}");
    }
}

proptest! {
    #[test]
    fn comb_has_one_pilot_per_interval(k in 2usize..96, m in 1usize..4, s_raw in 1usize..96, seed in any::<u64>()) {
        let s = 1 + s_raw % k;
        let mask = comb_mask(k, m, s, true, &mut rng(seed)).unwrap();
        for col in 0..m {
            let rows = mask.pilots_in_column(col);
            for start in (0..k - k % s).step_by(s) {
                prop_assert_eq!(rows.iter().filter(|&&r| r >= start && r < start + s).count(), 1);
            }
        }
        prop_assert!(mask.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let nz = mask.values().iter().filter(|&&v| v > 0.0).count();
        prop_assert_eq!(nz, mask.pilot_count());
        prop_assert!((mask.density() - nz as f64 / (k * m) as f64).abs() < 1e-15);
    }

    #[test]
    fn lattice_density_bookkeeping(k in 1usize..32, m in 1usize..16, fs in 1usize..32, ts in 1usize..16) {
        prop_assume!(fs <= k && ts <= m);
        let mask = lattice_mask(k, m, fs, ts).unwrap();
        let want = k.div_ceil(fs) * m.div_ceil(ts);
        prop_assert_eq!(mask.pilot_count(), want);
        prop_assert!((mask.density() - want as f64 / (k * m) as f64).abs() < 1e-15);
    }

    #[test]
    fn masking_ls_is_idempotent(seed in any::<u64>(), s in 1usize..16, snr in -5.0f64..30.0) {
        let h = channel(16, 2, seed);
        let mut r = rng(seed ^ 1);
        let mask = comb_mask(16, 2, s, true, &mut r).unwrap();
        let obs = observe(&h, &mask, snr, &mut r).unwrap();
        prop_assert_eq!(mask.apply(&obs.ls).unwrap(), obs.ls.clone());
        for i in 0..h.len() {
            if !mask.is_pilot(i) {
                prop_assert_eq!(obs.ls.at(i), Complex64::new(0.0, 0.0));
            }
        }
    }
}
