mod common;

use std::f64::consts::PI;

use geokernel::generator::{apply_generator, truncated_generator, GeneratorConfig, TestField};
use geokernel::geodesic::exp_map;
use geokernel::levy::{empirical_generator, path_rng, sample_jump_length, simulate_path, simulate_paths, SimConfig};
use geokernel::manifold::{ChartPoint, TangentVec};
use geokernel::GeoError;

use common::*;

/// Truncated Pareto CDF with density proportional to `s^{-1-2a}` on `[eps, cap]`.
fn pareto_cdf(s: f64, a: f64, eps: f64, cap: f64) -> f64 {
    let p = 2.0 * a;
    (eps.powf(-p) - s.powf(-p)) / (eps.powf(-p) - cap.powf(-p))
}

#[test]
fn jump_lengths_follow_truncated_pareto() {
    let (a, eps, cap) = (0.5, 0.1, 10.0);
    let mut rng = path_rng(11, 0);
    let mut xs: Vec<f64> = (0..100_000).map(|_| sample_jump_length(&mut rng, a, eps, cap)).collect();
    assert!(xs.iter().all(|&s| s >= eps && s <= cap));
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = pareto_cdf(s, a, eps, cap);
            (f - i as f64 / k).abs().max((f - (i + 1) as f64 / k).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks < 0.01, "KS = {ks}");
    // a = 1/2: E s = ln(cap / eps) / z, E s^2 = (cap - eps) / z, z = 1/eps - 1/cap
    let z = 1.0 / eps - 1.0 / cap;
    let mean = (cap / eps).ln() / z;
    let var = (cap - eps) / z - mean * mean;
    let sample = xs.iter().sum::<f64>() / k;
    assert!((sample - mean).abs() < 3.0 * (var / k).sqrt(), "{sample} vs {mean}");
}

#[test]
fn jump_counts_match_the_rate() {
    let m = flat_torus();
    let cfg = SimConfig {
        n_paths: 1000,
        t_end: 2.0,
        seed: 3,
        ..SimConfig::default()
    };
    let rate = cfg.jump_rate(2).unwrap();
    // a = 1/2, n = 2: C vol = 1, rate = 1/eps - 1/cap
    assert!((rate - (10.0 - 1.0 / 60.0)).abs() < 1e-12);
    let paths = simulate_paths(&m, &ChartPoint::new(0, &[1.0, 1.0]), &cfg).unwrap();
    let k = paths.len() as f64;
    let mean = paths.iter().map(|p| p.events.len() as f64).sum::<f64>() / k;
    let want = rate * cfg.t_end;
    assert!((mean - want).abs() < 3.0 * (want / k).sqrt(), "{mean} vs {want}");
    for p in &paths {
        assert!(p.events.windows(2).all(|w| w[0].t < w[1].t));
        assert!(p.events.iter().all(|e| e.t > 0.0 && e.t <= cfg.t_end));
    }
}

#[test]
fn flat_torus_jumps_are_isotropic() {
    let m = flat_torus();
    let cfg = SimConfig {
        n_paths: 10_000,
        seed: 5,
        ..SimConfig::default()
    };
    let paths = simulate_paths(&m, &ChartPoint::new(0, &[0.0, 0.0]), &cfg).unwrap();
    let k = paths.len() as f64;
    for i in 0..2 {
        let d: Vec<f64> = paths
            .iter()
            .map(|p| p.events.iter().map(|e| e.length * e.direction.comps[i]).sum())
            .collect();
        let mean = d.iter().sum::<f64>() / k;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
        assert!(mean.abs() < 3.0 * (var / k).sqrt(), "component {i}: {mean}");
    }
}

#[test]
fn sphere_paths_stay_valid() {
    let m = sphere();
    let cfg = SimConfig {
        n_paths: 200,
        seed: 9,
        ..SimConfig::default()
    };
    let paths = simulate_paths(&m, &ChartPoint::new(0, &[PI / 4.0, 0.0]), &cfg).unwrap();
    for p in &paths {
        for e in &p.events {
            assert!(m.metric_at(&e.pre).is_ok() && m.metric_at(&e.post).is_ok());
            assert!((m.norm(&e.direction).unwrap() - 1.0).abs() < 1e-9);
            let r = m.embed(&e.post).unwrap().unwrap().norm();
            assert!((r - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn paths_replay_through_exp() {
    for m in [sphere(), ellipsoid(), flat_torus()] {
        let cfg = SimConfig {
            n_paths: 20,
            seed: 1,
            ..SimConfig::default()
        };
        let x0 = point_from_unit(&m, &[0.3, 0.4]);
        for p in simulate_paths(&m, &x0, &cfg).unwrap() {
            let mut x = p.start.clone();
            for e in &p.events {
                assert!(m.point_gap(&x, &e.pre).unwrap() < 1e-12);
                let w = TangentVec::new(e.pre.clone(), (&e.direction.comps * e.length).as_slice());
                let y = exp_map(&m, &w, cfg.step).unwrap();
                assert!(m.point_gap(&y, &e.post).unwrap() < 1e-8);
                x = e.post.clone();
            }
        }
    }
}

#[test]
fn fixed_seed_is_bit_identical() {
    let m = ellipsoid();
    let cfg = SimConfig {
        n_paths: 64,
        seed: 42,
        ..SimConfig::default()
    };
    let x0 = ChartPoint::new(0, &[1.0, 0.5]);
    let a = simulate_paths(&m, &x0, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| simulate_paths(&m, &x0, &cfg).unwrap());
    assert_eq!(a, b);
    let single = simulate_path(&m, &x0, &cfg, &mut path_rng(42, 0)).unwrap();
    assert_eq!(single.events, a[0].events);
    let other = simulate_paths(&m, &x0, &SimConfig { seed: 43, ..cfg.clone() }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn empirical_generator_of_constant_is_zero() {
    let m = sphere();
    let cfg = SimConfig::default();
    let x = ChartPoint::new(0, &[1.0, 1.0]);
    let rate = cfg.jump_rate(2).unwrap();
    let e = empirical_generator(&m, &TestField::Constant { value: 3.0 }, &x, &cfg, 0.05 / rate, 500).unwrap();
    assert_eq!(e.estimate, 0.0);
    assert_eq!(e.std_error, 0.0);
}

#[test]
fn empirical_generator_rejects_bad_inputs() {
    let m = flat_torus();
    let cfg = SimConfig::default();
    let x = ChartPoint::new(0, &[0.0, 0.0]);
    let u = TestField::torus_mode(&[1.0, 0.0]);
    assert!(matches!(empirical_generator(&m, &u, &x, &cfg, 0.001, 0), Err(GeoError::BadParams(_))));
    assert!(matches!(empirical_generator(&m, &u, &x, &cfg, 1.0, 10), Err(GeoError::BadParams(_))));
    let bad = SimConfig { eps: 70.0, ..cfg.clone() };
    assert!(matches!(empirical_generator(&m, &u, &x, &bad, 0.001, 10), Err(GeoError::BadParams(_))));
    let bad = SimConfig { alpha: 1.2, ..cfg };
    assert!(matches!(empirical_generator(&m, &u, &x, &bad, 0.001, 10), Err(GeoError::BadAlpha(_))));
}

/// Shrinking the small-jump cutoff moves both the truncated quadrature and
/// the Monte Carlo estimate toward the untruncated generator.
#[test]
fn truncation_error_shrinks_with_eps() {
    let m = flat_torus();
    let u = TestField::torus_mode(&[1.0, 0.0]);
    let x = ChartPoint::new(0, &[0.0, 0.0]);
    let gcfg = GeneratorConfig::default();
    let full = apply_generator(&m, &u, &x, &gcfg).unwrap();
    let mut quad_err = Vec::new();
    let mut mc = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let cfg = SimConfig {
            eps,
            seed: 17,
            ..SimConfig::default()
        };
        let q = truncated_generator(&m, &u, &x, &gcfg, eps, cfg.s_cap).unwrap();
        let bias = cfg.truncation_bias_coefficient(2).unwrap();
        assert!((q - full).abs() < 1.5 * bias, "eps {eps}: {q} vs {full}, bias {bias}");
        quad_err.push((q - full).abs());
        let rate = cfg.jump_rate(2).unwrap();
        let e = empirical_generator(&m, &u, &x, &cfg, 0.05 / rate, 100_000).unwrap();
        assert!((e.estimate - q).abs() < 3.0 * e.std_error, "eps {eps}: {} +- {} vs {q}", e.estimate, e.std_error);
        mc.push(e);
    }
    assert!(quad_err.windows(2).all(|w| w[1] < w[0]), "{quad_err:?}");
    for i in 1..mc.len() {
        let (now, before) = ((mc[i].estimate - full).abs(), (mc[i - 1].estimate - full).abs());
        let band = 3.0 * mc[i].std_error.hypot(mc[i - 1].std_error);
        assert!(now < before + band, "eps step {i}: {now} vs {before} (band {band})");
    }
}
