//! One-dimensional reference values for the catalog eigenfunctions.

use std::f64::consts::PI;

use super::field::legendre_p;
use super::quadrature::{composite, geometric_bounds, uniform_bounds};
use super::{bump_chi, levy_constant};
use crate::error::Result;

/// Radial cutoff of the long-range integrals.
const S_FAR: f64 = 2000.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OraclePiece {
    Full,
    Local,
    Remainder,
}

/// Symbol of the generator on the flat torus with side lengths `lengths`:
/// `-|2 pi k / L|^{2a}`.
pub fn torus_symbol(k: &[f64], lengths: &[f64], alpha: f64) -> f64 {
    let q: f64 = k.iter().zip(lengths).map(|(k, l)| (2.0 * PI * k / l).powi(2)).sum();
    -q.powf(alpha)
}

/// Mean of `P_l(cos s)` over a period.
fn legendre_cos_mean(l: usize) -> f64 {
    if l % 2 == 1 {
        return 0.0;
    }
    // (binom(l, l/2) / 2^l)^2
    let mut c = 1.0;
    for j in 1..=l / 2 {
        c *= (l / 2 + j) as f64 / (4.0 * j as f64);
    }
    c * c
}

/// Eigenvalue of a piece on the zonal function `P_l` of the round sphere
/// of radius `radius` (n = 2), with cutoff radius `r_inj`.
pub fn zonal_eigenvalue(l: usize, alpha: f64, radius: f64, r_inj: f64, piece: OraclePiece) -> Result<f64> {
    let k = 2.0 * PI * levy_constant(2, alpha)?;
    // unit-sphere integrals, cutoff rescaled accordingly
    let r = r_inj / radius;
    let half = 0.5 * r;
    let r_c = r / 2f64.sqrt();
    let ker = |s: f64| s.powf(-1.0 - 2.0 * alpha);
    let p = |s: f64| legendre_p(l, s.cos());

    let local = || {
        let mut b = geometric_bounds(1e-6, half, 1.2);
        b.insert(0, 0.0);
        let mut sum: f64 = composite(&b, 12).iter().map(|&(s, w)| w * (p(s) - 1.0) * ker(s)).sum();
        sum += composite(&uniform_bounds(half, r_c, 16), 12)
            .iter()
            .map(|&(s, w)| w * bump_chi(s * s, r) * (p(s) - 1.0) * ker(s))
            .sum::<f64>();
        sum
    };
    // int a(s) f(s) ds for 2pi-periodic f with mean `mean`
    let far = |f: &dyn Fn(f64) -> f64, mean: f64| {
        let mut sum: f64 = composite(&uniform_bounds(half, r_c, 16), 12)
            .iter()
            .map(|&(s, w)| w * (1.0 - bump_chi(s * s, r)) * f(s) * ker(s))
            .sum();
        let count = ((S_FAR - r_c) / 0.25).ceil() as usize;
        sum += composite(&uniform_bounds(r_c, S_FAR, count), 16)
            .iter()
            .map(|&(s, w)| w * (f(s) - mean) * ker(s))
            .sum::<f64>();
        sum + mean * r_c.powf(-2.0 * alpha) / (2.0 * alpha)
    };
    let val = match piece {
        OraclePiece::Local => local(),
        OraclePiece::Remainder => far(&p, legendre_cos_mean(l)),
        OraclePiece::Full => local() + far(&|s| p(s) - 1.0, legendre_cos_mean(l) - 1.0),
    };
    Ok(k * val * radius.powf(-2.0 * alpha))
}
