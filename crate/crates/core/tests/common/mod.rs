#![allow(dead_code)]

use std::f64::consts::PI;

use geokernel::manifold::{catalog_build, ChartPoint, ManifoldConfig, ManifoldModel};

pub fn flat_torus() -> ManifoldModel {
    catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap()
}

pub fn sphere() -> ManifoldModel {
    catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap()
}

pub fn sphere3() -> ManifoldModel {
    catalog_build(&ManifoldConfig::round_sphere(1.0, 3)).unwrap()
}

pub fn ellipsoid() -> ManifoldModel {
    catalog_build(&ManifoldConfig::triaxial_ellipsoid(1.0, 1.1, 1.2)).unwrap()
}

pub fn torus_rev() -> ManifoldModel {
    catalog_build(&ManifoldConfig::torus_of_revolution(2.0, 1.0)).unwrap()
}

/// One model of each catalog entry.
pub fn catalog() -> Vec<(&'static str, ManifoldModel)> {
    vec![
        ("flat_torus", flat_torus()),
        ("round_sphere", sphere()),
        ("round_sphere_3", sphere3()),
        ("ellipsoid", ellipsoid()),
        ("torus_of_revolution", torus_rev()),
    ]
}

/// Chart-0 point from unit-interval parameters, away from coordinate
/// singularities.
pub fn point_from_unit(m: &ManifoldModel, t: &[f64]) -> ChartPoint {
    let n = m.dim();
    let coords: Vec<f64> = (0..n)
        .map(|i| {
            let t = t[i % t.len()];
            match m.coord_period(i) {
                Some(p) if m.torus_lengths().is_some() => t * p,
                Some(_) => -PI + 2.0 * PI * t,
                None => 0.2 + (PI - 0.4) * t,
            }
        })
        .collect();
    m.recenter(&ChartPoint::new(0, &coords)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
