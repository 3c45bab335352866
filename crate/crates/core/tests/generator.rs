mod common;

use std::f64::consts::PI;

use geokernel::conjugacy::{conjugate_scan, Atlas, ScanConfig};
use geokernel::generator::{
    apply_generator, bump_chi, c0, cutoff_a, decompose, levy_constant, local_part, partition_builder, remainder_op,
    DecayFit, Generator, GeneratorConfig, Piece, TestField, Weight,
};
use geokernel::geodesic::FlowState;
use geokernel::manifold::{ChartPoint, ManifoldModel};
use geokernel::GeoError;
use nalgebra::{Rotation3, Vector3};
use std::sync::OnceLock;

use common::*;

// C_{n,a} = 4^a Gamma(n/2 + a) / (pi^{n/2} |Gamma(-a)|), 30-digit evaluation
const C_2_050: f64 = 0.159154943091895335768883763373;
const C_2_025: f64 = 0.0832419838754250654889402178181;
const C_3_050: f64 = 0.10132118364233777144387946321;

// 2 pi C int chi(s^2) (J0(s) - 1) s^{-2} ds on the 2 pi torus (r_inj = pi, a = 1/2)
const TORUS_LOCAL_K1: f64 = -0.445221926775201459232075286226;
// C int a(s) ds and C int a(s) P_4(cos s) ds with r_inj = pi, a = 1/2
const FLOW_MEAN_ONE: f64 = 0.0831067736006085781982879008873;
const FLOW_MEAN_P4: f64 = 0.00859369271852452532227021756112;
const C0_HALF: f64 = 0.522175258814444157473203795249;

/// Unit sphere, a = 1/2: (l, local, mu_l, lambda_l) from 1D quadrature in
/// 30-digit arithmetic.
const SPHERE: [(usize, f64, f64, f64); 6] = [
    (1, -0.8682574149, -0.1803636531, -1.570796327),
    (2, -1.98722227, 0.1532030387, -2.35619449),
    (4, -3.949685174, 0.05399576382, -4.417864669),
    (8, -7.971056394, 0.03716255998, -8.456069093),
    (12, -11.97603294, 0.02814881033, -12.47005939),
    (40, -39.97677873, 0.008211489857, -40.4907425),
];

const POLE: [f64; 3] = [1.0, 0.0, 0.0];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn sphere_atlas(m: &ManifoldModel) -> &'static Atlas {
    static ATLAS: OnceLock<Atlas> = OnceLock::new();
    ATLAS.get_or_init(|| {
        let cfg = ScanConfig {
            base_grid: 4,
            dir_grid: 4,
            classify_samples: 2,
            ..ScanConfig::default()
        };
        conjugate_scan(m, &cfg).unwrap()
    })
}

#[test]
fn levy_constant_values() {
    assert!((levy_constant(2, 0.5).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
    assert!((levy_constant(2, 0.5).unwrap() - C_2_050).abs() < 1e-14);
    assert!((levy_constant(2, 0.25).unwrap() - C_2_025).abs() < 1e-14);
    assert!((levy_constant(3, 0.5).unwrap() - C_3_050).abs() < 1e-14);
    for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
        assert!(matches!(levy_constant(2, a), Err(GeoError::BadAlpha(_))));
    }
}

#[test]
fn chi_examples() {
    let r = 1.7;
    assert_eq!(bump_chi(0.0, r), 1.0);
    assert_eq!(bump_chi(r * r, r), 0.0);
    let mid = bump_chi(3.0 * r * r / 8.0, r);
    assert!(mid > 0.0 && mid < 1.0);
    let vals: Vec<f64> = (0..10).map(|i| bump_chi(r * r / 4.0 * (1.0 + (i as f64 + 0.5) / 10.0), r)).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    assert!(vals.iter().all(|&v| v > 0.0 && v < 1.0));
    // even in t and flat at both ends
    assert_eq!(bump_chi(-0.3, r), bump_chi(0.3, r));
    assert_eq!(bump_chi(r * r / 4.0, r), 1.0);
    assert_eq!(bump_chi(r * r / 2.0, r), 0.0);
}

#[test]
fn cutoff_examples() {
    let r = 2.0;
    assert_eq!(cutoff_a(-1.0, 0.5, r), 0.0);
    assert_eq!(cutoff_a(0.0, 0.5, r), 0.0);
    assert_eq!(cutoff_a(r / 2.0, 0.5, r), 0.0);
    let s = 10.0 * r;
    assert_eq!(cutoff_a(s, 0.3, r), s.powf(-1.6));
    assert!(cutoff_a(0.65 * r, 0.3, r) > 0.0);
}

#[test]
fn bad_config_is_rejected() {
    let m = flat_torus();
    let cfg = GeneratorConfig::with_alpha(1.0);
    assert!(matches!(Generator::new(&m, &cfg), Err(GeoError::BadAlpha(_))));
    let cfg = GeneratorConfig {
        budget: 1000,
        ..GeneratorConfig::default()
    };
    let g = Generator::new(&m, &cfg).unwrap();
    assert!(matches!(g.fan(&ChartPoint::new(0, &[0.0, 0.0])), Err(GeoError::QuadratureBudgetExceeded { .. })));
}

#[test]
fn constants_are_annihilated() {
    let cfg = GeneratorConfig::default();
    for (name, m) in catalog() {
        let x = point_from_unit(&m, &[0.3, 0.55, 0.8]);
        let d = decompose(&m, &TestField::Constant { value: 2.5 }, &x, &cfg).unwrap();
        assert!(d.total.abs() < 1e-10 * d.c0, "{name}: {}", d.total);
        assert!(d.local.abs() < 1e-10 * d.c0, "{name}: {}", d.local);
        assert!(d.far.abs() < 1e-10 * d.c0, "{name}: {}", d.far);
        assert!(rel(d.remainder, 2.5 * d.c0) < 1e-12, "{name}");
    }
}

#[test]
fn torus_local_part_matches_bessel_oracle() {
    let m = flat_torus();
    let x = ChartPoint::new(0, &[0.0, 0.0]);
    let v = local_part(&m, &TestField::torus_mode(&[1.0, 0.0]), &x, &GeneratorConfig::default()).unwrap();
    assert!(rel(v, TORUS_LOCAL_K1) < 1e-2, "{v}");
}

#[test]
fn torus_symbol() {
    let m = flat_torus();
    let x = ChartPoint::new(0, &[0.7, 2.1]);
    for alpha in [0.25, 0.5, 0.75] {
        let cfg = GeneratorConfig::with_alpha(alpha);
        let g = Generator::new(&m, &cfg).unwrap();
        let fan = g.fan(&x).unwrap();
        for k in [[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]] {
            let u = TestField::torus_mode(&k).bind(&m).unwrap();
            let k2: f64 = k.iter().map(|c| c * c).sum();
            let want = -k2.powf(alpha) * u.eval_at(&m, &x).unwrap();
            let got = g.apply(&fan, &u);
            assert!(rel(got, want) < 2e-2, "alpha {alpha} k {k:?}: {got} vs {want}");
        }
    }
}

#[test]
fn sphere_zonal_pieces_match_legendre_oracles() {
    let m = sphere();
    let cfg = GeneratorConfig::default();
    let g = Generator::new(&m, &cfg).unwrap();
    let x = TestField::zonal(1, &POLE).reference_point(&m).unwrap();
    let fan = g.fan(&x).unwrap();
    for &(l, local, mu, lambda) in &SPHERE {
        let u = TestField::zonal(l, &POLE).bind(&m).unwrap();
        let d = g.decompose(&fan, &u);
        assert!(rel(d.local, local) < 1e-2, "l = {l}: local {}", d.local);
        if l <= 12 {
            assert!(rel(d.remainder, mu) < 1e-2, "l = {l}: mu {}", d.remainder);
            assert!(rel(d.far, mu - C0_HALF) < 1e-2, "l = {l}: far {}", d.far);
        }
        if l <= 8 {
            assert!(rel(d.total, lambda) < 2e-2, "l = {l}: total {}", d.total);
        }
    }
}

#[test]
fn sphere_local_part_p1() {
    let m = sphere();
    let u = TestField::zonal(1, &POLE);
    let x = u.reference_point(&m).unwrap();
    let v = local_part(&m, &u, &x, &GeneratorConfig::default()).unwrap();
    assert!(rel(v, SPHERE[0].1) < 1e-2, "{v}");
}

#[test]
fn unit_remainder_is_c0() {
    for m in [flat_torus(), sphere()] {
        let cfg = GeneratorConfig::default();
        assert!(rel(c0(&m, &cfg).unwrap(), C0_HALF) < 5e-3);
        let x = point_from_unit(&m, &[0.2, 0.9]);
        let r = remainder_op(&m, &TestField::Constant { value: 1.0 }, &x, &cfg, &Weight::one()).unwrap();
        assert!(rel(r, C0_HALF) < 5e-3, "{r}");
    }
}

#[test]
fn c0_is_independent_of_the_point() {
    let cfg = GeneratorConfig::default();
    for (name, m) in [("ellipsoid", ellipsoid()), ("torus_of_revolution", torus_rev())] {
        let g = Generator::new(&m, &cfg).unwrap();
        let one = TestField::Constant { value: 1.0 }.bind(&m).unwrap();
        let vals: Vec<f64> = (0..10)
            .map(|i| {
                let t = [(i as f64 * 0.618_034 + 0.05) % 1.0, (i as f64 * 0.381_966 + 0.3) % 1.0];
                let fan = g.fan(&point_from_unit(&m, &t)).unwrap();
                g.remainder(&fan, &one, &Weight::one()).unwrap()
            })
            .collect();
        for v in &vals {
            assert!(rel(*v, vals[0]) < 5e-3, "{name}: {vals:?}");
            assert!(rel(*v, g.c0()) < 5e-3, "{name}: {v} vs {}", g.c0());
        }
    }
}

#[test]
fn flow_average_examples() {
    let m = sphere();
    let g = Generator::new(&m, &GeneratorConfig::default()).unwrap();
    let x = TestField::zonal(4, &POLE).reference_point(&m).unwrap();
    let v = FlowState::at(&m, &x, &[1.0, 0.3]).unwrap();
    let one = g.average_along_flow(|_| 1.0, Some(1.0), &v, &Weight::one()).unwrap();
    assert!((one.value - FLOW_MEAN_ONE).abs() < 1e-4, "{}", one.value);
    assert!(one.tail_bound > 0.0);
    let zero = g.average_along_flow(|_| 1.0, Some(1.0), &v, &Weight::zero()).unwrap();
    assert_eq!(zero.value, 0.0);
    let p4 = TestField::zonal(4, &POLE).bind(&m).unwrap();
    let val = g
        .average_along_flow(|st| p4.eval_at(&m, &st.x).unwrap(), Some(1.0), &v, &Weight::one())
        .unwrap();
    assert!(rel(val.value, FLOW_MEAN_P4) < 1e-2, "{}", val.value);
    assert!(matches!(
        g.average_along_flow(|_| 1.0, None, &v, &Weight::one()),
        Err(GeoError::TailNotControlled(_))
    ));
}

fn random_field(m: &ManifoldModel, i: usize) -> TestField {
    let f = i as f64;
    if m.torus_lengths().is_some() {
        return TestField::TorusMode {
            k: vec![(i % 3) as f64 + 1.0, (i % 2) as f64],
            sine: i % 2 == 1,
        };
    }
    match i % 3 {
        1 if m.round_radius().is_some() => TestField::Harmonic {
            l: 1 + i % 4,
            m: (i % 3) as i64 - 1,
        },
        0 | 1 => TestField::PlaneWave {
            w: vec![1.3 * f.cos(), 0.8 * f.sin(), 1.1],
            phase: 0.3 * f,
        },
        _ => TestField::Bump {
            center: point_from_unit(m, &[0.4, 0.6]).coords.as_slice().to_vec(),
            radius: 1.2,
            height: 1.0,
        },
    }
}

/// `sup |u| C vol(S^{n-1}) (r_inj / 2)^{-2a} / (2a)`: size of the far-field
/// mass scale of the generator applied to `u`.
fn split_scale(g: &Generator, m: &ManifoldModel, u: &TestField) -> f64 {
    let a = g.config().alpha;
    let vol = if m.dim() == 2 { 2.0 * PI } else { 4.0 * PI };
    u.sup_bound() * g.levy_constant() * vol * (0.5 * g.r_inj()).powf(-2.0 * a) / (2.0 * a)
}

#[test]
fn split_is_consistent() {
    let cfg = GeneratorConfig::default();
    for (name, m) in [("flat_torus", flat_torus()), ("round_sphere", sphere()), ("ellipsoid", ellipsoid())] {
        let g = Generator::new(&m, &cfg).unwrap();
        for p in 0..5 {
            let x = point_from_unit(&m, &[(p as f64 * 0.27 + 0.1) % 1.0, (p as f64 * 0.61 + 0.2) % 1.0]);
            let fan = g.fan(&x).unwrap();
            for j in 0..4 {
                let u = random_field(&m, 4 * p + j);
                let b = u.bind(&m).unwrap();
                let d = g.decompose(&fan, &b);
                let scale = d.total.abs() + split_scale(&g, &m, &u);
                assert!(d.residual < 5e-3 * scale, "{name} {u:?}: {}", d.residual);
                assert_eq!(d.residual, (d.total - d.local - d.far).abs());
            }
        }
    }
}

#[test]
fn generator_commutes_with_isometries() {
    let m = sphere();
    let cfg = GeneratorConfig::default();
    let axis = Vector3::new(0.3, -0.5, 0.81).normalize();
    let x = ChartPoint::new(0, &[1.1, 0.4]);
    let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(0.2, 1.0, -0.4)), 1.3);
    let px = m.embed(&x).unwrap().unwrap();
    let rx = m.point_from_ambient((rot * Vector3::new(px[0], px[1], px[2])).as_slice()).unwrap();
    let ra = rot * axis;
    let a = apply_generator(&m, &TestField::zonal(3, axis.as_slice()), &x, &cfg).unwrap();
    let b = apply_generator(&m, &TestField::zonal(3, ra.as_slice()), &rx, &cfg).unwrap();
    assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");

    let t = flat_torus();
    let shift = [1.3, -0.4];
    let y = ChartPoint::new(0, &[0.5, 0.5]);
    let ys = t.recenter(&ChartPoint::new(0, &[0.5 + shift[0], 0.5 + shift[1]])).unwrap();
    let a = apply_generator(&t, &TestField::torus_mode(&[2.0, 1.0]), &ys, &cfg).unwrap();
    let g = Generator::new(&t, &cfg).unwrap();
    // cos(k.(x + shift)) = cos(phase) cos(k.x) - sin(phase) sin(k.x), evaluated at y
    let phase = 2.0 * shift[0] + shift[1];
    let shifted_cos = TestField::torus_mode(&[2.0, 1.0]).bind(&t).unwrap();
    let shifted_sin = TestField::TorusMode { k: vec![2.0, 1.0], sine: true }.bind(&t).unwrap();
    let fy = g.fan(&y).unwrap();
    let b = phase.cos() * g.apply(&fy, &shifted_cos) - phase.sin() * g.apply(&fy, &shifted_sin);
    assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{a} vs {b}");
}

#[test]
fn bumps_have_negative_generator_at_their_peak() {
    let cfg = GeneratorConfig::default();
    for (name, m) in catalog() {
        if m.dim() == 3 {
            continue;
        }
        let g = Generator::new(&m, &cfg).unwrap();
        for i in 0..10 {
            let t = [(i as f64 * 0.618_034 + 0.1) % 1.0, (i as f64 * 0.754_878 + 0.2) % 1.0];
            let x = point_from_unit(&m, &t);
            let x0 = m.to_chart(&x, 0).unwrap();
            let u = TestField::Bump {
                center: x0.coords.as_slice().to_vec(),
                radius: 0.4 + 0.1 * (i % 4) as f64,
                height: 1.0,
            };
            let v = g.apply(&g.fan(&x).unwrap(), &u.bind(&m).unwrap());
            assert!(v < 0.0, "{name} bump {i}: {v}");
        }
    }
}

#[test]
fn test_fields_are_chart_covariant() {
    let m = sphere();
    let fields = [
        TestField::zonal(5, &[0.0, 0.6, 0.8]),
        TestField::Harmonic { l: 3, m: -2 },
        TestField::PlaneWave { w: vec![1.0, -2.0, 0.5], phase: 0.2 },
        TestField::Bump { center: vec![1.2, 0.4], radius: 1.5, height: 2.0 },
    ];
    for f in &fields {
        let b = f.bind(&m).unwrap();
        for k in 0..10 {
            let x = ChartPoint::new(0, &[0.7 + 0.17 * k as f64, -3.0 + 0.6 * k as f64]);
            let y = m.to_chart(&x, 1).unwrap();
            assert!((b.eval_at(&m, &x).unwrap() - b.eval_at(&m, &y).unwrap()).abs() < 1e-10, "{f:?}");
        }
    }
}

#[test]
fn three_sphere_zonal_eigenvalue() {
    // S^3: P_1-type zonal function <p, e> is an eigenfunction; its eigenvalue
    // sits between the two-sphere value and zero and matches the local/far split
    let m = sphere3();
    let cfg = GeneratorConfig::default();
    let u = TestField::zonal(1, &[1.0, 0.0, 0.0, 0.0]);
    let x = u.reference_point(&m).unwrap();
    let d = decompose(&m, &u, &x, &cfg).unwrap();
    assert!(d.total < 0.0);
    assert!(d.residual < 1e-8 * d.c0, "{}", d.residual);
    let y = m.recenter(&ChartPoint::new(0, &[0.9, 1.2, 0.3])).unwrap();
    let b = u.bind(&m).unwrap();
    let g = Generator::new(&m, &cfg).unwrap();
    let ratio = g.apply(&g.fan(&y).unwrap(), &b) / b.eval_at(&m, &y).unwrap();
    assert!(rel(ratio, d.total) < 1e-3, "{ratio} vs {}", d.total);
}

#[test]
fn constant_spectrum_is_zero() {
    let m = sphere();
    let g = Generator::new(&m, &GeneratorConfig::default()).unwrap();
    let t = g
        .spectral_probe(&[TestField::zonal(0, &POLE)], &Piece::Full, DecayFit::Magnitude, (0.0, 1e9))
        .unwrap();
    assert!(t.rows[0].value.abs() < 1e-10, "{}", t.rows[0].value);
    assert!(t.exponent.is_none());
}

#[test]
fn degenerate_reference_point() {
    let m = flat_torus();
    let u = TestField::torus_mode(&[0.0, 0.0]);
    assert!(matches!(u.reference_point(&m), Err(GeoError::ReferencePointDegenerate(_))));
}

#[test]
fn partition_sums_to_one() {
    let m = sphere();
    let atlas = sphere_atlas(&m);
    assert_eq!(atlas.component_count(), 2);
    let ws = partition_builder(&m, atlas, 1.0).unwrap();
    assert_eq!(ws.len(), 4, "{:?}", ws.iter().map(|w| w.label()).collect::<Vec<_>>());
    assert_eq!(ws[0].label(), "background");
    let s: Vec<f64> = (0..100).map(|i| 12.0 * (i as f64 + 0.5) / 100.0).collect();
    let mut worst: f64 = 0.0;
    let mut near_pi: f64 = 0.0;
    for k in 0..100 {
        let t = [(k as f64 * 0.618_034) % 1.0, (k as f64 * 0.414_214 + 0.2) % 1.0];
        let a = k as f64 * 2.399_963;
        let v = FlowState::at(&m, &point_from_unit(&m, &t), &[a.cos(), a.sin()]).unwrap();
        let profiles: Vec<Vec<f64>> = ws.iter().map(|w| w.profile(&m, &v, &s).unwrap()).collect();
        for i in 0..s.len() {
            let sum: f64 = profiles.iter().map(|p| p[i]).sum();
            worst = worst.max((sum - 1.0).abs());
            assert!(profiles.iter().all(|p| (0.0..=1.0).contains(&p[i])));
        }
        near_pi = near_pi.max(ws[1].value(&m, &v, PI).unwrap());
    }
    assert!(worst < 1e-12, "{worst}");
    assert!((near_pi - 1.0).abs() < 1e-12);
}

#[test]
fn flat_torus_partition_is_trivial() {
    let m = flat_torus();
    let atlas = conjugate_scan(
        &m,
        &ScanConfig {
            base_grid: 4,
            dir_grid: 4,
            s_scan: 4.0,
            ..ScanConfig::default()
        },
    )
    .unwrap();
    assert!(atlas.records.is_empty());
    let ws = partition_builder(&m, &atlas, 1.0).unwrap();
    assert_eq!(ws.len(), 1);
    let v = FlowState::at(&m, &ChartPoint::new(0, &[1.0, 2.0]), &[1.0, 0.4]).unwrap();
    assert_eq!(ws[0].profile(&m, &v, &[0.0, 3.0, 50.0]).unwrap(), vec![1.0; 3]);
}

#[test]
fn partition_pieces_add_up() {
    let m = sphere();
    let atlas = sphere_atlas(&m);
    let ws = partition_builder(&m, atlas, 1.0).unwrap();
    let g = Generator::new(&m, &GeneratorConfig::default()).unwrap();
    for i in 0..10 {
        let t = [(i as f64 * 0.618_034 + 0.1) % 1.0, (i as f64 * 0.381_966 + 0.4) % 1.0];
        let x = point_from_unit(&m, &t);
        let u = random_field(&m, i + 1);
        let b = u.bind(&m).unwrap();
        let fan = g.fan(&x).unwrap();
        let whole = g.remainder(&fan, &b, &Weight::one()).unwrap();
        let parts: f64 = ws.iter().map(|w| g.remainder(&fan, &b, w).unwrap()).sum();
        assert!((parts - whole).abs() < 5e-3 * whole.abs().max(1e-3), "{u:?}: {parts} vs {whole}");
    }
}

#[test]
fn background_piece_smooths() {
    let m = sphere();
    let atlas = sphere_atlas(&m);
    let ws = partition_builder(&m, atlas, 1.0).unwrap();
    let g = Generator::new(&m, &GeneratorConfig::default()).unwrap();
    let family: Vec<TestField> = (10..=14).map(|l| TestField::zonal(l, &POLE)).collect();
    let t = g.spectral_probe(&family, &Piece::Remainder(ws[0].clone()), DecayFit::Magnitude, (0.0, 1e9)).unwrap();
    let mu1 = SPHERE[0].2.abs();
    let at12 = t.rows.iter().find(|r| r.index == 12.0).unwrap().value;
    assert!(at12.abs() < 1e-2 * mu1, "{at12}");
}

#[test]
fn singular_or_crowded_atlases_are_rejected() {
    let m = sphere();
    let atlas = sphere_atlas(&m);
    assert!(matches!(partition_builder(&m, atlas, 4.0), Err(GeoError::ComponentsTooClose(_))));
    let mut bad = atlas.clone();
    bad.records[0].regular = false;
    assert!(matches!(partition_builder(&m, &bad, 1.0), Err(GeoError::SingularPairPresent(_))));
}
