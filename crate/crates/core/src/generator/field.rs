//! Smooth test functions on the catalog manifolds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::manifold::{ChartPoint, ManifoldModel};

/// Catalog of test functions. Functions on embedded manifolds are written
/// in ambient coordinates, on the flat torus in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestField {
    Constant {
        value: f64,
    },
    /// `cos` (or `sin`) of `sum_i 2 pi k_i x_i / L_i` on the flat torus.
    TorusMode {
        k: Vec<f64>,
        #[serde(default)]
        sine: bool,
    },
    /// `P_l(<p / r, axis>)` on the round sphere.
    Zonal { l: usize, axis: Vec<f64> },
    /// Real Schmidt-normalized spherical harmonic, `cos(m phi)` for
    /// `m >= 0` and `sin(|m| phi)` otherwise (polar axis: first ambient
    /// coordinate).
    Harmonic { l: usize, m: i64 },
    /// `cos(<w, p> + phase)` in ambient coordinates.
    PlaneWave { w: Vec<f64>, phase: f64 },
    /// `height * exp(1 - 1 / (1 - t^2))`, `t = dist / radius`, with the chord
    /// distance (embedded) or wrapped coordinate distance (flat torus) to
    /// `center` (chart-0 coordinates).
    Bump {
        center: Vec<f64>,
        radius: f64,
        height: f64,
    },
}

/// A field bound to a manifold, evaluated on stored positions (ambient
/// points, or chart coordinates on the flat torus).
#[derive(Clone, Debug)]
pub struct BoundField {
    field: TestField,
    lengths: Vec<f64>,
    radius: f64,
    axis: Vec<f64>,
    center: Vec<f64>,
}

impl TestField {
    pub fn torus_mode(k: &[f64]) -> Self {
        TestField::TorusMode {
            k: k.to_vec(),
            sine: false,
        }
    }

    pub fn zonal(l: usize, axis: &[f64]) -> Self {
        TestField::Zonal { l, axis: axis.to_vec() }
    }

    /// Frequency index used by spectral probes: `l` or `|k|`.
    pub fn index(&self) -> f64 {
        match self {
            TestField::Constant { .. } => 0.0,
            TestField::TorusMode { k, .. } => k.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TestField::Zonal { l, .. } | TestField::Harmonic { l, .. } => *l as f64,
            TestField::PlaneWave { w, .. } => w.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TestField::Bump { .. } => f64::NAN,
        }
    }

    /// Upper bound for `sup |u|`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            TestField::Constant { value } => value.abs(),
            TestField::Bump { height, .. } => height.abs(),
            _ => 1.0,
        }
    }

    pub fn bind(&self, m: &ManifoldModel) -> Result<BoundField> {
        let bad = |msg: &str| Err(GeoError::BadParams(format!("{msg} for {:?}", m.name())));
        let mut b = BoundField {
            field: self.clone(),
            lengths: Vec::new(),
            radius: 1.0,
            axis: Vec::new(),
            center: Vec::new(),
        };
        match self {
            TestField::Constant { .. } => {}
            TestField::TorusMode { k, .. } => {
                let Some(l) = m.torus_lengths() else {
                    return bad("torus modes need the flat torus");
                };
                if k.len() != l.len() {
                    return bad("wave vector dimension mismatch");
                }
                b.lengths = l.to_vec();
            }
            TestField::Zonal { axis, .. } => {
                let Some(r) = m.round_radius() else {
                    return bad("zonal functions need the round sphere");
                };
                if axis.len() != m.dim() + 1 {
                    return bad("axis dimension mismatch");
                }
                let nrm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
                b.axis = axis.iter().map(|x| x / nrm).collect();
                b.radius = r;
            }
            TestField::Harmonic { l, m: order } => {
                let Some(r) = m.round_radius() else {
                    return bad("spherical harmonics need the round sphere");
                };
                if m.dim() != 2 || order.unsigned_abs() as usize > *l {
                    return bad("spherical harmonics need n = 2 and |m| <= l");
                }
                b.radius = r;
            }
            TestField::PlaneWave { w, .. } => {
                if m.ambient_dim() != Some(w.len()) {
                    return bad("plane waves need an embedding of matching dimension");
                }
            }
            TestField::Bump { center, radius, .. } => {
                if !(*radius > 0.0) {
                    return bad("bump radius must be positive");
                }
                let c = ChartPoint::new(0, center);
                b.center = match m.embed(&c)? {
                    Some(p) => p.as_slice().to_vec(),
                    None => center.clone(),
                };
                if let Some(l) = m.torus_lengths() {
                    b.lengths = l.to_vec();
                }
            }
        }
        Ok(b)
    }

    /// A point where `|u| >= 0.5 sup |u|`, for pointwise eigenvalue ratios.
    pub fn reference_point(&self, m: &ManifoldModel) -> Result<ChartPoint> {
        let bound = self.bind(m)?;
        match self {
            TestField::Constant { .. } => Ok(m.recenter(&ChartPoint::new(0, &m.grid_coords(&vec![0; m.dim()], 2)))?),
            TestField::Zonal { .. } => {
                let p: Vec<f64> = bound.axis.iter().map(|a| a * bound.radius).collect();
                m.point_from_ambient(&p)
            }
            TestField::TorusMode { k, sine } => {
                // phase 0 (cos) or pi/2 (sin) along the first nonzero wave number
                let i = k.iter().position(|&x| x != 0.0).ok_or_else(|| {
                    GeoError::ReferencePointDegenerate("zero wave vector".into())
                })?;
                let mut x = vec![0.0; k.len()];
                if *sine {
                    x[i] = bound.lengths[i] / (4.0 * k[i]);
                }
                m.recenter(&ChartPoint::new(0, &x))
            }
            _ => {
                // dense chart-0 search
                let per = 64;
                let mut best = (0.0, None);
                let mut sup: f64 = 0.0;
                for (_, x) in m.grid_points(per)? {
                    let x = m.recenter(&x)?;
                    let v = bound.eval_at(m, &x)?.abs();
                    sup = sup.max(v);
                    if v > best.0 {
                        best = (v, Some(x));
                    }
                }
                match best.1 {
                    Some(x) if best.0 >= 0.5 * sup && best.0 > 0.0 => Ok(x),
                    _ => Err(GeoError::ReferencePointDegenerate(format!("{self:?}"))),
                }
            }
        }
    }
}

/// Legendre polynomial `P_l(x)`.
pub fn legendre_p(l: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if l == 0 {
        return 1.0;
    }
    for k in 1..l {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Schmidt semi-normalized associated Legendre function `S_l^m(x)`,
/// `|S_l^m| <= 1` on `[-1, 1]`.
pub fn schmidt_p(l: usize, m: usize, x: f64) -> f64 {
    if m == 0 {
        return legendre_p(l, x);
    }
    let s = (1.0 - x * x).max(0.0).sqrt();
    // normalized diagonal: S_m^m = sqrt((2m-1)!! / (2m)!! * 2) s^m
    let mut pmm = 2f64.sqrt();
    for k in 1..=m {
        pmm *= ((2 * k - 1) as f64 / (2 * k) as f64).sqrt() * s;
    }
    if l == m {
        return pmm;
    }
    // upward recurrence in l with the Schmidt normalization
    let mut p_prev = 0.0;
    let mut p = pmm;
    for k in m + 1..=l {
        let a = (2 * k - 1) as f64 / (((k * k - m * m) as f64).sqrt());
        let b = (((k - 1) * (k - 1) - m * m) as f64).sqrt() / (((k * k - m * m) as f64).sqrt());
        let next = a * x * p - b * p_prev;
        p_prev = p;
        p = next;
    }
    p
}

fn bump_profile(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t * t)).exp()
    }
}

impl BoundField {
    pub fn field(&self) -> &TestField {
        &self.field
    }

    /// Value at a stored position.
    #[inline]
    pub fn eval_pos(&self, p: &[f64]) -> f64 {
        match &self.field {
            TestField::Constant { value } => *value,
            TestField::TorusMode { k, sine } => {
                let phase: f64 = k
                    .iter()
                    .zip(&self.lengths)
                    .zip(p)
                    .map(|((k, l), x)| 2.0 * PI * k * x / l)
                    .sum();
                if *sine {
                    phase.sin()
                } else {
                    phase.cos()
                }
            }
            TestField::Zonal { l, .. } => {
                let c: f64 = self.axis.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() / self.radius;
                legendre_p(*l, c.clamp(-1.0, 1.0))
            }
            TestField::Harmonic { l, m } => {
                let c = (p[0] / self.radius).clamp(-1.0, 1.0);
                let phi = p[2].atan2(p[1]);
                let mm = m.unsigned_abs() as usize;
                let ang = if *m >= 0 {
                    (mm as f64 * phi).cos()
                } else {
                    (mm as f64 * phi).sin()
                };
                schmidt_p(*l, mm, c) * ang
            }
            TestField::PlaneWave { w, phase } => (w.iter().zip(p).map(|(a, x)| a * x).sum::<f64>() + phase).cos(),
            TestField::Bump { radius, height, .. } => {
                let d2: f64 = if self.lengths.is_empty() {
                    self.center.iter().zip(p).map(|(c, x)| (x - c) * (x - c)).sum()
                } else {
                    self.center
                        .iter()
                        .zip(p)
                        .zip(&self.lengths)
                        .map(|((c, x), l)| {
                            let d = x - c;
                            let d = d - l * (d / l).round();
                            d * d
                        })
                        .sum()
                };
                height * bump_profile(d2.sqrt() / radius)
            }
        }
    }

    /// Value at a chart point.
    pub fn eval_at(&self, m: &ManifoldModel, x: &ChartPoint) -> Result<f64> {
        Ok(self.eval_pos(&position(m, x.chart, x.coords.as_slice())?))
    }
}

/// Stored position of a chart point: ambient point, or wrapped chart
/// coordinates on the flat torus.
pub(crate) fn position(m: &ManifoldModel, chart: usize, u: &[f64]) -> Result<Vec<f64>> {
    match m.ambient_raw(chart, u) {
        Some(p) => Ok(p),
        None => {
            let mut v = u.to_vec();
            m.wrap_raw(&mut v);
            Ok(v)
        }
    }
}
