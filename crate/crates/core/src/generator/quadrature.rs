//! Radial and angular quadrature rules.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let mut pairs = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs
}

/// Composite Gauss rule with the given panel boundaries.
pub fn composite(bounds: &[f64], per_panel: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(per_panel);
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1) * per_panel);
    for w in bounds.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        for &(x, wt) in &gl {
            out.push((mid + half * x, half * wt));
        }
    }
    out
}

/// Panel boundaries graded geometrically toward zero: `top, top/q, ...`
/// down to (at most) `bottom`, returned ascending.
pub fn geometric_bounds(bottom: f64, top: f64, ratio: f64) -> Vec<f64> {
    let mut b = vec![top];
    let mut r = top;
    while r / ratio > bottom {
        r /= ratio;
        b.push(r);
    }
    b.reverse();
    b
}

/// `count + 1` equispaced boundaries on `[a, b]`.
pub fn uniform_bounds(a: f64, b: f64, count: usize) -> Vec<f64> {
    let count = count.max(1);
    (0..=count).map(|i| a + (b - a) * i as f64 / count as f64).collect()
}

/// Unit directions (frame coordinates) and weights for the round unit
/// sphere `S^{n-1}`. `n = 2`: `count` equispaced angles; `n = 3`:
/// Gauss-Legendre in the polar cosine (`count` nodes) times `2 count`
/// equispaced azimuths.
pub fn sphere_rule(n: usize, count: usize) -> Vec<(Vec<f64>, f64)> {
    match n {
        2 => (0..count)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / count as f64;
                (vec![t.cos(), t.sin()], 2.0 * PI / count as f64)
            })
            .collect(),
        3 => {
            let naz = 2 * count;
            let mut out = Vec::with_capacity(count * naz);
            for (c, w) in gauss_legendre(count) {
                let s = (1.0 - c * c).sqrt();
                for j in 0..naz {
                    let p = 2.0 * PI * j as f64 / naz as f64;
                    out.push((vec![c, s * p.cos(), s * p.sin()], w * 2.0 * PI / naz as f64));
                }
            }
            out
        }
        _ => Vec::new(),
    }
}

/// Surface area of the unit sphere `S^{n-1}`.
pub fn sphere_area(n: usize) -> f64 {
    use statrs::function::gamma::gamma;
    2.0 * PI.powf(n as f64 / 2.0) / gamma(n as f64 / 2.0)
}
