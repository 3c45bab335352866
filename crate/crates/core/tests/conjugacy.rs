use std::f64::consts::PI;

use geokernel::conjugacy::{
    classify_pair, conjugate_scan, find_conjugate_pairs, jacobi_propagate, Atlas, ScanConfig,
};
use geokernel::geodesic::FlowState;
use geokernel::manifold::{catalog_build, ChartPoint, ManifoldConfig};

#[test]
fn s2_pair_is_regular_with_warner_slope() {
    let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap();
    let v = FlowState::at(&m, &ChartPoint::new(0, &[0.9, -1.0]), &[0.2, 1.0]).unwrap();
    let recs = find_conjugate_pairs(&m, &v, (0.0, 4.0), 1e-3, 1e-6).unwrap();
    assert_eq!(recs.len(), 1);
    let c = classify_pair(&m, &recs[0], 1e-2, 4, &ScanConfig::default()).unwrap();
    assert!(c.regular);
    assert_eq!(c.order, 1);
    assert!((c.transversality + 1.0 / PI).abs() < 1e-4, "{}", c.transversality);
}

#[test]
fn s3_pair_has_order_two() {
    let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 3)).unwrap();
    let v = FlowState::at(&m, &ChartPoint::new(0, &[1.0, 1.3, 0.4]), &[0.3, -0.5, 1.0]).unwrap();
    let recs = find_conjugate_pairs(&m, &v, (0.0, 4.0), 1e-3, 1e-6).unwrap();
    assert_eq!(recs.len(), 1);
    assert!((recs[0].s_star - PI).abs() < 1e-6);
    assert_eq!(recs[0].order, 2);
    let c = classify_pair(&m, &recs[0], 1e-2, 4, &ScanConfig::default()).unwrap();
    assert!(c.regular);
    assert!((c.transversality + 2.0 / PI).abs() < 1e-3, "{}", c.transversality);
}

#[test]
fn flat_torus_has_no_pairs() {
    let m = catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap();
    let v = FlowState::at(&m, &ChartPoint::new(0, &[0.5, 0.1]), &[1.0, 0.7]).unwrap();
    assert!(find_conjugate_pairs(&m, &v, (0.0, 20.0), 1e-3, 1e-6).unwrap().is_empty());
    let f = jacobi_propagate(&m, &v, 5.0, 1e-3).unwrap();
    for js in f.samples() {
        assert!((js.d_normal()[(0, 0)] - js.s).abs() < 1e-9);
    }
}

#[test]
fn jacobi_frame_invariants_on_ellipsoid() {
    let m = catalog_build(&ManifoldConfig::triaxial_ellipsoid(1.0, 1.1, 1.2)).unwrap();
    let v = FlowState::at(&m, &ChartPoint::new(0, &[1.1, 0.3]), &[0.4, 1.0]).unwrap();
    let f = jacobi_propagate(&m, &v, 8.0, 1e-3).unwrap();
    for js in f.samples() {
        assert!(js.wronskian_defect() < 1e-7);
        if js.s > 0.0 && js.s < 1e-1 {
            assert!((js.d_normal()[(0, 0)] / js.s - 1.0).abs() < 1e-2);
        }
    }
    let s1 = js_first_zero(&f);
    // dense re-integration at half step
    let recs = find_conjugate_pairs(&m, &v, (0.0, 8.0), 5e-4, 1e-6).unwrap();
    assert!((recs[0].s_star - s1).abs() < 1e-5);
    for js in f.samples().filter(|j| j.s > 0.0 && j.s < recs[0].s_star - 1e-3) {
        assert!(js.d_normal().determinant() > 0.0);
    }
}

fn js_first_zero(f: &geokernel::conjugacy::JacobiFrame) -> f64 {
    let mut prev: Option<(f64, f64)> = None;
    for js in f.samples() {
        let d = js.d_normal().determinant();
        if let Some((s0, d0)) = prev {
            if s0 > 0.0 && d0 * d < 0.0 {
                return s0 - d0 * (js.s - s0) / (d - d0);
            }
        }
        prev = Some((js.s, d));
    }
    panic!("no sign change");
}

#[test]
fn ellipsoid_pairs_are_regular_order_one() {
    let m = catalog_build(&ManifoldConfig::triaxial_ellipsoid(1.0, 1.1, 1.2)).unwrap();
    for (x, v) in [([0.7, 0.2], [1.0, 0.3]), ([2.0, -2.5], [-0.2, 1.0]), ([1.4, 1.4], [1.0, -1.0])] {
        let v = FlowState::at(&m, &ChartPoint::new(0, &x), &v).unwrap();
        let recs = find_conjugate_pairs(&m, &v, (0.0, 7.0), 1e-3, 1e-6).unwrap();
        assert!(!recs.is_empty());
        for r in recs {
            let c = classify_pair(&m, &r, 1e-2, 3, &ScanConfig::default()).unwrap();
            assert!(c.regular);
            assert_eq!(c.order, 1);
        }
    }
}

#[test]
fn sphere_scan_has_two_components() {
    let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap();
    let cfg = ScanConfig {
        base_grid: 4,
        dir_grid: 4,
        classify_samples: 2,
        ..ScanConfig::default()
    };
    let atlas = conjugate_scan(&m, &cfg).unwrap();
    assert_eq!(atlas.component_count(), 2);
    assert_eq!(atlas.records.len(), 2 * 16 * 4);
    for r in &atlas.records {
        let expect = if r.component_id == 1 { PI } else { 2.0 * PI };
        assert!((r.s_star - expect).abs() < 1e-6);
        assert!(r.regular);
    }
    let mut buf = Vec::new();
    atlas.write_csv(&m, &mut buf, "test").unwrap();
    let back = Atlas::read_csv(&m, &buf[..], &cfg).unwrap();
    assert_eq!(back.records.len(), atlas.records.len());
    for (a, b) in atlas.records.iter().zip(&back.records) {
        assert_eq!(a.cell, b.cell);
        assert_eq!(a.component_id, b.component_id);
    }
}

#[test]
fn flat_torus_scan_is_empty() {
    let m = catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap();
    let cfg = ScanConfig {
        base_grid: 4,
        dir_grid: 4,
        ..ScanConfig::default()
    };
    assert!(conjugate_scan(&m, &cfg).unwrap().records.is_empty());
}
