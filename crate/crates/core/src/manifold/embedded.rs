//! Embedding-induced charts for the curved catalog surfaces.
//!
//! Two families are covered: scaled hyperspheres (round spheres and
//! ellipsoids, two hyperspherical charts whose singular great-subspheres are
//! disjoint) and the torus of revolution (one doubly periodic chart).

use std::f64::consts::PI;

use super::small::{dot_amb, Amb, MAX_AMB, MAX_DIM};

/// Position, first and second derivatives, and unit normal of a
/// hypersurface parametrization at one chart point.
#[derive(Clone, Copy, Debug)]
pub struct EmbJet {
    pub amb: usize,
    pub p: Amb,
    pub d1: [Amb; MAX_DIM],
    pub d2: [[Amb; MAX_DIM]; MAX_DIM],
    pub normal: Amb,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Factor {
    Sin,
    Cos,
    One,
}

fn factor_value(f: Factor, sc: (f64, f64), order: usize) -> f64 {
    let (s, c) = sc;
    match (f, order) {
        (Factor::One, 0) => 1.0,
        (Factor::One, _) => 0.0,
        (Factor::Sin, 0) => s,
        (Factor::Sin, 1) => c,
        (Factor::Sin, _) => -s,
        (Factor::Cos, 0) => c,
        (Factor::Cos, 1) => -s,
        (Factor::Cos, _) => -c,
    }
}

/// Factor kind of hyperspherical component `k` in coordinate `i`.
fn factor(n: usize, k: usize, i: usize) -> Factor {
    if k == n {
        Factor::Sin
    } else if i < k {
        Factor::Sin
    } else if i == k {
        Factor::Cos
    } else {
        Factor::One
    }
}

/// Scaled hypersphere `{ p : sum p_i^2 / axes_i^2 = 1 } ⊂ R^{n+1}`.
#[derive(Clone, Debug)]
pub struct ScaledSphere {
    pub n: usize,
    pub axes: Vec<f64>,
}

impl ScaledSphere {
    /// Ambient slot of unit-sphere component `k` in chart `chart`.
    fn slot(&self, chart: usize, k: usize) -> usize {
        let m = self.n + 1;
        if chart == 0 {
            k
        } else {
            // E[i] = S[(i + n - 1) mod m]  <=>  S[k] = E[(k + 2) mod m]
            (k + 2) % m
        }
    }

    pub fn jet(&self, chart: usize, u: &[f64]) -> EmbJet {
        let n = self.n;
        let m = n + 1;
        let mut sc = [(0.0, 0.0); MAX_DIM];
        for i in 0..n {
            sc[i] = u[i].sin_cos();
        }
        let mut jet = EmbJet {
            amb: m,
            p: [0.0; MAX_AMB],
            d1: [[0.0; MAX_AMB]; MAX_DIM],
            d2: [[[0.0; MAX_AMB]; MAX_DIM]; MAX_DIM],
            normal: [0.0; MAX_AMB],
        };
        for k in 0..m {
            let slot = self.slot(chart, k);
            let scale = self.axes[slot];
            let mut val = 1.0;
            for i in 0..n {
                val *= factor_value(factor(n, k, i), sc[i], 0);
            }
            jet.p[slot] = scale * val;
            for a in 0..n {
                let mut d = 1.0;
                for i in 0..n {
                    d *= factor_value(factor(n, k, i), sc[i], usize::from(i == a));
                }
                jet.d1[a][slot] = scale * d;
                for b in a..n {
                    let mut dd = 1.0;
                    for i in 0..n {
                        let ord = usize::from(i == a) + usize::from(i == b);
                        dd *= factor_value(factor(n, k, i), sc[i], ord);
                    }
                    jet.d2[a][b][slot] = scale * dd;
                    jet.d2[b][a][slot] = scale * dd;
                }
            }
        }
        let mut norm2 = 0.0;
        for i in 0..m {
            jet.normal[i] = jet.p[i] / (self.axes[i] * self.axes[i]);
            norm2 += jet.normal[i] * jet.normal[i];
        }
        let norm = norm2.sqrt();
        for i in 0..m {
            jet.normal[i] /= norm;
        }
        jet
    }

    /// Unit-sphere components of an ambient point, in the ordering of `chart`.
    fn sphere_components(&self, chart: usize, p: &[f64]) -> Amb {
        let m = self.n + 1;
        let mut q = [0.0; MAX_AMB];
        let mut r2 = 0.0;
        for i in 0..m {
            q[i] = p[i] / self.axes[i];
            r2 += q[i] * q[i];
        }
        let r = r2.sqrt();
        let mut s = [0.0; MAX_AMB];
        for k in 0..m {
            s[k] = q[self.slot(chart, k)] / r;
        }
        s
    }

    pub fn coords_from_ambient(&self, chart: usize, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let s = self.sphere_components(chart, p);
        let mut u = vec![0.0; n];
        for k in 0..n - 1 {
            let tail: f64 = (k + 1..=n).map(|j| s[j] * s[j]).sum::<f64>().sqrt();
            u[k] = tail.atan2(s[k]);
        }
        u[n - 1] = s[n].atan2(s[n - 1]);
        u
    }

    /// Distance proxy to the singular set of the chart: the product of the
    /// polar sines, i.e. the norm of the last two unit-sphere components.
    pub fn quality(&self, u: &[f64]) -> f64 {
        let mut rho = 1.0;
        for &ui in u.iter().take(self.n - 1) {
            rho *= ui.sin();
        }
        rho
    }

    pub fn quality_ambient(&self, chart: usize, p: &[f64]) -> f64 {
        let n = self.n;
        let s = self.sphere_components(chart, p);
        (s[n - 1] * s[n - 1] + s[n] * s[n]).sqrt()
    }

    pub fn in_domain(&self, u: &[f64]) -> bool {
        u.iter().all(|x| x.is_finite())
            && u.iter().take(self.n - 1).all(|&x| x > 0.0 && x < PI)
            && self.quality(u) > 1e-9
    }

    /// Maximal Gaussian-type curvature bound `max_i a_i^2 / prod_{j != i} a_j^2`
    /// (exact for ellipsoids in R^3; for round spheres `1/r^2`).
    pub fn max_curvature(&self) -> f64 {
        if self.axes.iter().all(|&a| (a - self.axes[0]).abs() < 1e-15) {
            return 1.0 / (self.axes[0] * self.axes[0]);
        }
        let m = self.n + 1;
        let mut best: f64 = 0.0;
        for i in 0..m {
            let others: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| self.axes[j]).collect();
            // extreme principal curvatures at the vertex of axis i are a_i / a_j^2
            for (x, &aj) in others.iter().enumerate() {
                for &ak in others.iter().skip(x + 1) {
                    let k = self.axes[i] * self.axes[i] / (aj * aj * ak * ak);
                    best = best.max(k);
                }
            }
        }
        best
    }
}

/// Torus of revolution `((R + r cos t) cos p, (R + r cos t) sin p, r sin t)`.
#[derive(Clone, Debug)]
pub struct TorusRev {
    pub major: f64,
    pub minor: f64,
}

impl TorusRev {
    pub fn jet(&self, u: &[f64]) -> EmbJet {
        let (st, ct) = u[0].sin_cos();
        let (sp, cp) = u[1].sin_cos();
        let (big, r) = (self.major, self.minor);
        let rho = big + r * ct;
        let mut jet = EmbJet {
            amb: 3,
            p: [0.0; MAX_AMB],
            d1: [[0.0; MAX_AMB]; MAX_DIM],
            d2: [[[0.0; MAX_AMB]; MAX_DIM]; MAX_DIM],
            normal: [0.0; MAX_AMB],
        };
        jet.p[..3].copy_from_slice(&[rho * cp, rho * sp, r * st]);
        jet.d1[0][..3].copy_from_slice(&[-r * st * cp, -r * st * sp, r * ct]);
        jet.d1[1][..3].copy_from_slice(&[-rho * sp, rho * cp, 0.0]);
        jet.d2[0][0][..3].copy_from_slice(&[-r * ct * cp, -r * ct * sp, -r * st]);
        jet.d2[0][1][..3].copy_from_slice(&[r * st * sp, -r * st * cp, 0.0]);
        jet.d2[1][0] = jet.d2[0][1];
        jet.d2[1][1][..3].copy_from_slice(&[-rho * cp, -rho * sp, 0.0]);
        jet.normal[..3].copy_from_slice(&[ct * cp, ct * sp, st]);
        jet
    }

    pub fn coords_from_ambient(&self, p: &[f64]) -> Vec<f64> {
        let phi = p[1].atan2(p[0]);
        let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let theta = p[2].atan2(rho - self.major);
        vec![theta, phi]
    }
}

/// Metric `g_ij = <d_i E, d_j E>`.
pub fn first_fundamental_form(jet: &EmbJet, n: usize) -> super::small::Matn {
    let mut g = super::small::ZERO_MAT;
    for i in 0..n {
        for j in i..n {
            let v = dot_amb(&jet.d1[i], &jet.d1[j], jet.amb);
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    g
}
