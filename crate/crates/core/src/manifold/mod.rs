//! Chart-based descriptions of the catalog manifolds.
//!
//! Every model is immutable after [`catalog_build`] and all evaluators are
//! pure, so a model can be shared freely across worker threads.
//!
//! Chart layout:
//! * flat torus: one periodic chart, coordinates in `[0, L_i)`;
//! * round sphere / triaxial ellipsoid: two hyperspherical charts whose
//!   coordinate singularities are disjoint, last angle periodic;
//! * torus of revolution: one doubly periodic chart `(theta, phi)`.

pub(crate) mod embedded;
pub(crate) mod small;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use embedded::{first_fundamental_form, EmbJet, ScaledSphere, TorusRev};
pub(crate) use small::{Matn, Vecn, MAX_DIM};
use small::{invert, mat_vec, quad_form, ZERO_MAT};

/// A point of `M` in chart coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ChartPoint {
    pub chart: usize,
    pub coords: DVector<f64>,
}

impl ChartPoint {
    pub fn new(chart: usize, coords: &[f64]) -> Self {
        Self {
            chart,
            coords: DVector::from_column_slice(coords),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector given by its chart components at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVec {
    pub base: ChartPoint,
    pub comps: DVector<f64>,
}

impl TangentVec {
    pub fn new(base: ChartPoint, comps: &[f64]) -> Self {
        Self {
            base,
            comps: DVector::from_column_slice(comps),
        }
    }
}

/// A covector given by its chart components at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovectorVec {
    pub base: ChartPoint,
    pub comps: DVector<f64>,
}

impl CovectorVec {
    /// Pairing `eta(v)`; both must be expressed in the same chart.
    pub fn pair(&self, v: &TangentVec) -> f64 {
        debug_assert_eq!(self.base.chart, v.base.chart);
        self.comps.dot(&v.comps)
    }
}

/// Christoffel symbols `Gamma^k_{ij}` of the Levi-Civita connection.
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// `Gamma^k_{ij}`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.n + i) * self.n + j]
    }

    /// `Gamma^k_{ij} a^i b^j`.
    pub fn contract(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += self.get(k, i, j) * a[i] * b[j];
                }
            }
            s
        })
    }
}

/// Catalog entry as it appears in the JSON configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldName {
    FlatTorus,
    RoundSphere,
    TriaxialEllipsoid,
    TorusOfRevolution,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifoldParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub major: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minor: Option<f64>,
}

/// `{"name": ..., "params": {...}, "r_inj_override": ...}`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub name: ManifoldName,
    #[serde(default)]
    pub params: ManifoldParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_inj_override: Option<f64>,
}

impl ManifoldConfig {
    pub fn flat_torus(lengths: &[f64]) -> Self {
        Self {
            name: ManifoldName::FlatTorus,
            params: ManifoldParams {
                lengths: Some(lengths.to_vec()),
                ..Default::default()
            },
            r_inj_override: None,
        }
    }

    pub fn round_sphere(radius: f64, dim: usize) -> Self {
        Self {
            name: ManifoldName::RoundSphere,
            params: ManifoldParams {
                radius: Some(radius),
                dim: Some(dim),
                ..Default::default()
            },
            r_inj_override: None,
        }
    }

    pub fn triaxial_ellipsoid(a: f64, b: f64, c: f64) -> Self {
        Self {
            name: ManifoldName::TriaxialEllipsoid,
            params: ManifoldParams {
                a: Some(a),
                b: Some(b),
                c: Some(c),
                ..Default::default()
            },
            r_inj_override: None,
        }
    }

    pub fn torus_of_revolution(major: f64, minor: f64) -> Self {
        Self {
            name: ManifoldName::TorusOfRevolution,
            params: ManifoldParams {
                major: Some(major),
                minor: Some(minor),
                ..Default::default()
            },
            r_inj_override: None,
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    FlatTorus { lengths: Vec<f64> },
    Spherical { surf: ScaledSphere, round: bool },
    TorusRev { surf: TorusRev },
}

/// Local differential data at one chart point, on the stack.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Jet {
    pub n: usize,
    pub g: Matn,
    /// `gamma[k][i][j] = Gamma^k_{ij}`
    pub gamma: [Matn; MAX_DIM],
    /// Shape operator `S^i_j` and second fundamental form `II_ij`; `None` when flat.
    pub shape: Option<(Matn, Matn)>,
}

impl Jet {
    fn flat(n: usize) -> Self {
        let mut g = ZERO_MAT;
        for (i, row) in g.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        Self {
            n,
            g,
            gamma: [ZERO_MAT; MAX_DIM],
            shape: None,
        }
    }

    fn from_embedding(e: &EmbJet, n: usize) -> Result<Self> {
        let g = first_fundamental_form(e, n);
        let ginv = invert(&g, n).ok_or_else(|| GeoError::ChartSwitchFailed(e.p.to_vec()))?;
        let mut low = [ZERO_MAT; MAX_DIM];
        for k in 0..n {
            for i in 0..n {
                for j in i..n {
                    let v = small::dot_amb(&e.d2[i][j], &e.d1[k], e.amb);
                    low[k][i][j] = v;
                    low[k][j][i] = v;
                }
            }
        }
        let mut gamma = [ZERO_MAT; MAX_DIM];
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        s += ginv[m][k] * low[k][i][j];
                    }
                    gamma[m][i][j] = s;
                }
            }
        }
        let mut second = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                second[i][j] = small::dot_amb(&e.d2[i][j], &e.normal, e.amb);
            }
        }
        let mut shape = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += ginv[i][k] * second[k][j];
                }
                shape[i][j] = s;
            }
        }
        Ok(Self {
            n,
            g,
            gamma,
            shape: Some((shape, second)),
        })
    }

    /// `Gamma^k_{ij} a^i b^j`
    #[inline]
    pub fn gamma_contract(&self, a: &[f64], b: &[f64]) -> Vecn {
        let n = self.n;
        let mut out = [0.0; MAX_DIM];
        if self.shape.is_none() {
            return out;
        }
        for (k, o) in out.iter_mut().enumerate().take(n) {
            *o = quad_form(&self.gamma[k], a, b, n);
        }
        out
    }

    #[inline]
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        quad_form(&self.g, a, b, self.n)
    }

    /// Jacobi-operator action `R(w, v) v`, via the Gauss equation
    /// `R(X,Y)Z = II(Y,Z) S X - II(X,Z) S Y`.
    #[inline]
    pub fn curvature(&self, v: &[f64], w: &[f64]) -> Vecn {
        let n = self.n;
        let mut out = [0.0; MAX_DIM];
        if let Some((shape, second)) = &self.shape {
            let ivv = quad_form(second, v, v, n);
            let iwv = quad_form(second, w, v, n);
            let sw = mat_vec(shape, w, n);
            let sv = mat_vec(shape, v, n);
            for i in 0..n {
                out[i] = ivv * sw[i] - iwv * sv[i];
            }
        }
        out
    }

    /// `d_j g_{il}` recovered from the Christoffel symbols.
    pub fn metric_derivative(&self, i: usize, l: usize, j: usize) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for m in 0..n {
            s += self.g[i][m] * self.gamma[m][j][l] + self.g[l][m] * self.gamma[m][j][i];
        }
        s
    }
}

/// A catalog manifold with its chart atlas and metric evaluators.
#[derive(Clone, Debug)]
pub struct ManifoldModel {
    config: ManifoldConfig,
    kind: Kind,
    dim: usize,
    r_inj: f64,
    switch_fraction: f64,
}

/// Build a model from its catalog description.
pub fn catalog_build(config: &ManifoldConfig) -> Result<ManifoldModel> {
    let p = &config.params;
    let positive = |name: &str, v: Option<f64>| -> Result<f64> {
        match v {
            Some(x) if x.is_finite() && x > 0.0 => Ok(x),
            Some(x) => Err(GeoError::BadParams(format!("{name} must be positive, got {x}"))),
            None => Err(GeoError::BadParams(format!("missing parameter {name}"))),
        }
    };
    let (kind, dim, r_inj) = match config.name {
        ManifoldName::FlatTorus => {
            let lengths = p
                .lengths
                .clone()
                .ok_or_else(|| GeoError::BadParams("missing parameter lengths".into()))?;
            if lengths.len() < 2 || lengths.len() > MAX_DIM {
                return Err(GeoError::BadParams(format!(
                    "flat torus dimension must be in [2, {MAX_DIM}], got {}",
                    lengths.len()
                )));
            }
            for &l in &lengths {
                positive("lengths", Some(l))?;
            }
            let shortest = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
            let dim = lengths.len();
            (Kind::FlatTorus { lengths }, dim, shortest / 2.0)
        }
        ManifoldName::RoundSphere => {
            let r = positive("radius", p.radius)?;
            let n = p.dim.unwrap_or(2);
            if !(2..=MAX_DIM).contains(&n) {
                return Err(GeoError::BadParams(format!(
                    "sphere dimension must be in [2, {MAX_DIM}], got {n}"
                )));
            }
            let surf = ScaledSphere {
                n,
                axes: vec![r; n + 1],
            };
            (Kind::Spherical { surf, round: true }, n, PI * r)
        }
        ManifoldName::TriaxialEllipsoid => {
            let a = positive("a", p.a)?;
            let b = positive("b", p.b)?;
            let c = positive("c", p.c)?;
            let surf = ScaledSphere {
                n: 2,
                axes: vec![a, b, c],
            };
            // conjugate radius >= pi / sqrt(K_max); closed geodesics are at
            // least as long as the smallest principal ellipse
            let kmax = surf.max_curvature();
            let lower = (PI / kmax.sqrt()).min(PI * a.min(b).min(c));
            (Kind::Spherical { surf, round: false }, 2, 0.95 * lower)
        }
        ManifoldName::TorusOfRevolution => {
            let big = positive("major", p.major)?;
            let r = positive("minor", p.minor)?;
            if r >= big {
                return Err(GeoError::BadParams(format!(
                    "torus of revolution needs minor < major, got {r} >= {big}"
                )));
            }
            // shortest closed geodesics: meridians (2 pi r) and the inner
            // equator (2 pi (R - r)); conjugate radius pi sqrt(r (R + r))
            let lower = (PI * r.min(big - r)).min(PI * (r * (big + r)).sqrt());
            (
                Kind::TorusRev {
                    surf: TorusRev { major: big, minor: r },
                },
                2,
                0.95 * lower,
            )
        }
    };
    let r_inj = match config.r_inj_override {
        Some(x) if x.is_finite() && x > 0.0 => x,
        Some(x) => return Err(GeoError::BadParams(format!("r_inj_override must be positive, got {x}"))),
        None => r_inj,
    };
    Ok(ManifoldModel {
        config: config.clone(),
        kind,
        dim,
        r_inj,
        switch_fraction: 0.8,
    })
}

impl ManifoldModel {
    pub fn config(&self) -> &ManifoldConfig {
        &self.config
    }

    pub fn name(&self) -> ManifoldName {
        self.config.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r_inj(&self) -> f64 {
        self.r_inj
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, Kind::FlatTorus { .. })
    }

    /// `Some(radius)` for the round sphere.
    pub fn round_radius(&self) -> Option<f64> {
        match &self.kind {
            Kind::Spherical { surf, round: true } => Some(surf.axes[0]),
            _ => None,
        }
    }

    /// Side lengths of the flat torus.
    pub fn torus_lengths(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::FlatTorus { lengths } => Some(lengths),
            _ => None,
        }
    }

    /// Model with a different chart-switching threshold (fraction of the
    /// chart-domain radius after which the integrator changes chart).
    pub fn with_switch_fraction(mut self, fraction: f64) -> Self {
        self.switch_fraction = fraction.clamp(0.1, 0.99);
        self
    }

    pub fn num_charts(&self) -> usize {
        match self.kind {
            Kind::Spherical { .. } => 2,
            _ => 1,
        }
    }

    pub fn has_embedding(&self) -> bool {
        !self.is_flat()
    }

    pub fn ambient_dim(&self) -> Option<usize> {
        match &self.kind {
            Kind::FlatTorus { .. } => None,
            Kind::Spherical { surf, .. } => Some(surf.n + 1),
            Kind::TorusRev { .. } => Some(3),
        }
    }

    /// Period of chart coordinate `i` (`None` when not periodic).
    pub fn coord_period(&self, i: usize) -> Option<f64> {
        match &self.kind {
            Kind::FlatTorus { lengths } => Some(lengths[i]),
            Kind::Spherical { surf, .. } => (i == surf.n - 1).then_some(2.0 * PI),
            Kind::TorusRev { .. } => Some(2.0 * PI),
        }
    }

    // ---- raw chart-level evaluators on slices --------------------------------

    pub(crate) fn in_domain_raw(&self, chart: usize, u: &[f64]) -> bool {
        if chart >= self.num_charts() || u.len() != self.dim {
            return false;
        }
        match &self.kind {
            Kind::FlatTorus { .. } | Kind::TorusRev { .. } => u.iter().all(|x| x.is_finite()),
            Kind::Spherical { surf, .. } => surf.in_domain(u),
        }
    }

    /// Normalized distance from the chart edge: 1 at the chart "center",
    /// 0 on the coordinate singularity.
    pub(crate) fn chart_depth(&self, u: &[f64]) -> f64 {
        match &self.kind {
            Kind::Spherical { surf, .. } => surf.quality(u).abs().min(1.0).asin() / (PI / 2.0),
            _ => 1.0,
        }
    }

    fn check(&self, p: &ChartPoint) -> Result<()> {
        if self.in_domain_raw(p.chart, p.coords.as_slice()) {
            Ok(())
        } else {
            Err(GeoError::OutOfChart {
                chart: p.chart,
                coords: p.coords.as_slice().to_vec(),
            })
        }
    }

    pub(crate) fn emb_jet_raw(&self, chart: usize, u: &[f64]) -> Option<EmbJet> {
        match &self.kind {
            Kind::FlatTorus { .. } => None,
            Kind::Spherical { surf, .. } => Some(surf.jet(chart, u)),
            Kind::TorusRev { surf } => Some(surf.jet(u)),
        }
    }

    pub(crate) fn jet_raw(&self, chart: usize, u: &[f64]) -> Result<Jet> {
        match self.emb_jet_raw(chart, u) {
            None => Ok(Jet::flat(self.dim)),
            Some(e) => Jet::from_embedding(&e, self.dim),
        }
    }

    /// Wrap periodic coordinates into their canonical range.
    pub(crate) fn wrap_raw(&self, u: &mut [f64]) {
        match &self.kind {
            Kind::FlatTorus { lengths } => {
                for (x, &l) in u.iter_mut().zip(lengths) {
                    *x = x.rem_euclid(l);
                }
            }
            Kind::Spherical { surf, .. } => {
                let i = surf.n - 1;
                u[i] = wrap_angle(u[i]);
            }
            Kind::TorusRev { .. } => {
                for x in u.iter_mut() {
                    *x = wrap_angle(*x);
                }
            }
        }
    }

    pub(crate) fn ambient_raw(&self, chart: usize, u: &[f64]) -> Option<Vec<f64>> {
        self.emb_jet_raw(chart, u).map(|e| e.p[..e.amb].to_vec())
    }

    fn coords_from_ambient_raw(&self, chart: usize, p: &[f64]) -> Option<Vec<f64>> {
        match &self.kind {
            Kind::FlatTorus { .. } => None,
            Kind::Spherical { surf, .. } => Some(surf.coords_from_ambient(chart, p)),
            Kind::TorusRev { surf } => Some(surf.coords_from_ambient(p)),
        }
    }

    /// Chart that is deepest for the point (the point is returned unchanged
    /// when its chart is already deep enough).
    pub(crate) fn preferred_chart_raw(&self, chart: usize, u: &[f64]) -> usize {
        match &self.kind {
            Kind::Spherical { surf, .. } => {
                let depth = self.chart_depth(u);
                if depth >= 1.0 - self.switch_fraction {
                    return chart;
                }
                let p = surf.jet(chart, u).p;
                let other = 1 - chart;
                if surf.quality_ambient(other, &p[..surf.n + 1]) > surf.quality(u) {
                    other
                } else {
                    chart
                }
            }
            _ => chart,
        }
    }

    /// Linear map sending chart-`from` vector components at `u` to chart-`to`
    /// components at `u_to` (same point). Row-major n x n.
    pub(crate) fn transition_jacobian_raw(
        &self,
        from: usize,
        u: &[f64],
        to: usize,
        u_to: &[f64],
    ) -> Result<Matn> {
        let n = self.dim;
        let mut out = ZERO_MAT;
        if from == to {
            for (i, row) in out.iter_mut().enumerate().take(n) {
                row[i] = 1.0;
            }
            return Ok(out);
        }
        let ef = self.emb_jet_raw(from, u).expect("multi-chart manifolds are embedded");
        let et = self.emb_jet_raw(to, u_to).expect("multi-chart manifolds are embedded");
        let gt = first_fundamental_form(&et, n);
        let gtinv = invert(&gt, n).ok_or_else(|| GeoError::ChartSwitchFailed(u_to.to_vec()))?;
        // column j: ambient image of d/du_from^j, pulled back by (J^T J)^{-1} J^T
        for j in 0..n {
            let mut proj = [0.0; MAX_DIM];
            for (k, pk) in proj.iter_mut().enumerate().take(n) {
                *pk = small::dot_amb(&et.d1[k], &ef.d1[j], et.amb);
            }
            let comps = mat_vec(&gtinv, &proj, n);
            for i in 0..n {
                out[i][j] = comps[i];
            }
        }
        Ok(out)
    }

    /// Same point expressed in chart `to`.
    pub(crate) fn point_to_chart_raw(&self, from: usize, u: &[f64], to: usize) -> Result<Vec<f64>> {
        if from == to {
            return Ok(u.to_vec());
        }
        let p = self
            .ambient_raw(from, u)
            .ok_or_else(|| GeoError::ChartSwitchFailed(u.to_vec()))?;
        let v = self
            .coords_from_ambient_raw(to, &p)
            .ok_or_else(|| GeoError::ChartSwitchFailed(u.to_vec()))?;
        if !self.in_domain_raw(to, &v) {
            return Err(GeoError::ChartSwitchFailed(p));
        }
        Ok(v)
    }

    // ---- public API ------------------------------------------------------------

    /// Metric matrix `g_ij(x)`.
    pub fn metric_at(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let jet = self.jet_raw(x.chart, x.coords.as_slice())?;
        Ok(DMatrix::from_fn(self.dim, self.dim, |i, j| jet.g[i][j]))
    }

    /// Christoffel symbols at `x`.
    pub fn christoffel_at(&self, x: &ChartPoint) -> Result<Christoffel> {
        self.check(x)?;
        let n = self.dim;
        let jet = self.jet_raw(x.chart, x.coords.as_slice())?;
        let mut data = vec![0.0; n * n * n];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    data[(k * n + i) * n + j] = jet.gamma[k][i][j];
                }
            }
        }
        Ok(Christoffel { n, data })
    }

    /// `R(w, v) v`, the Jacobi operator of `v` applied to `w`.
    pub fn curvature_apply(&self, v: &TangentVec, w: &TangentVec) -> Result<TangentVec> {
        self.check(&v.base)?;
        let jet = self.jet_raw(v.base.chart, v.base.coords.as_slice())?;
        let out = jet.curvature(v.comps.as_slice(), w.comps.as_slice());
        Ok(TangentVec::new(v.base.clone(), &out[..self.dim]))
    }

    /// `R(w, v) v` from fourth-order central differences of the Christoffel
    /// symbols (`h` relative to unit chart scale). Intrinsic route, independent
    /// of the Gauss-equation evaluator.
    pub fn curvature_apply_fd(&self, v: &TangentVec, w: &TangentVec, h: f64) -> Result<TangentVec> {
        let n = self.dim;
        let x = &v.base;
        self.check(x)?;
        let g0 = self.christoffel_at(x)?;
        // dgamma[m][l][i][j] = d_m Gamma^l_{ij}
        let mut dgamma = vec![0.0; n * n * n * n];
        for m in 0..n {
            let shifted = |t: f64| -> Result<Christoffel> {
                let mut c = x.coords.clone();
                c[m] += t;
                self.christoffel_at(&ChartPoint {
                    chart: x.chart,
                    coords: c,
                })
            };
            let (p1, m1, p2, m2) = (shifted(h)?, shifted(-h)?, shifted(2.0 * h)?, shifted(-2.0 * h)?);
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let d = (8.0 * (p1.get(l, i, j) - m1.get(l, i, j))
                            - (p2.get(l, i, j) - m2.get(l, i, j)))
                            / (12.0 * h);
                        dgamma[((m * n + l) * n + i) * n + j] = d;
                    }
                }
            }
        }
        let dg = |m: usize, l: usize, i: usize, j: usize| dgamma[((m * n + l) * n + i) * n + j];
        // (R(d_i, d_j) d_k)^l = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
        let mut out = vec![0.0; n];
        for (l, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut r = dg(i, l, j, k) - dg(j, l, i, k);
                        for m in 0..n {
                            r += g0.get(l, i, m) * g0.get(m, j, k) - g0.get(l, j, m) * g0.get(m, i, k);
                        }
                        s += r * w.comps[i] * v.comps[j] * v.comps[k];
                    }
                }
            }
            *o = s;
        }
        Ok(TangentVec::new(x.clone(), &out))
    }

    /// `g(a, b)` for vectors at the same base.
    pub fn inner(&self, a: &TangentVec, b: &TangentVec) -> Result<f64> {
        self.check(&a.base)?;
        let jet = self.jet_raw(a.base.chart, a.base.coords.as_slice())?;
        Ok(jet.inner(a.comps.as_slice(), b.comps.as_slice()))
    }

    pub fn norm(&self, v: &TangentVec) -> Result<f64> {
        Ok(self.inner(v, v)?.sqrt())
    }

    pub fn unit_normalize(&self, v: &TangentVec) -> Result<TangentVec> {
        let nrm = self.norm(v)?;
        if !(nrm > 0.0) {
            return Err(GeoError::BadParams("cannot normalize the zero vector".into()));
        }
        Ok(TangentVec {
            base: v.base.clone(),
            comps: &v.comps / nrm,
        })
    }

    /// Musical isomorphism `v -> g(v, .)`.
    pub fn flat(&self, v: &TangentVec) -> Result<CovectorVec> {
        let g = self.metric_at(&v.base)?;
        Ok(CovectorVec {
            base: v.base.clone(),
            comps: g * &v.comps,
        })
    }

    /// Metric-induced norm of a covector.
    pub fn covector_norm(&self, eta: &CovectorVec) -> Result<f64> {
        let g = self.metric_at(&eta.base)?;
        let ginv = g
            .try_inverse()
            .ok_or_else(|| GeoError::BadParams("singular metric".into()))?;
        Ok((eta.comps.transpose() * ginv * &eta.comps)[(0, 0)].max(0.0).sqrt())
    }

    /// Orthonormal frame at `x` (columns), by Gram-Schmidt on the chart basis.
    pub fn orthonormal_frame(&self, x: &ChartPoint) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let g = self.metric_at(x)?;
        let basis: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
        Ok(gram_schmidt(&g, &basis))
    }

    /// Orthonormal frame whose first column is the unit vector `v`.
    pub fn frame_with_first(&self, v: &TangentVec) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let g = self.metric_at(&v.base)?;
        let mut basis = vec![v.comps.clone()];
        // pick the n-1 chart axes least aligned with v
        let mut axes: Vec<usize> = (0..n).collect();
        let vn = self.unit_normalize(v)?;
        let gv = &g * &vn.comps;
        axes.sort_by(|&a, &b| {
            let ca = gv[a].abs() / g[(a, a)].sqrt();
            let cb = gv[b].abs() / g[(b, b)].sqrt();
            ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
        });
        for &i in axes.iter().take(n - 1) {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            basis.push(e);
        }
        Ok(gram_schmidt(&g, &basis))
    }

    /// Embedding of `x` in the ambient Euclidean space, if the manifold has one.
    pub fn embed(&self, x: &ChartPoint) -> Result<Option<DVector<f64>>> {
        self.check(x)?;
        Ok(self
            .ambient_raw(x.chart, x.coords.as_slice())
            .map(|p| DVector::from_vec(p)))
    }

    /// Ambient image of a tangent vector.
    pub fn embed_vector(&self, v: &TangentVec) -> Result<Option<DVector<f64>>> {
        self.check(&v.base)?;
        Ok(self.emb_jet_raw(v.base.chart, v.base.coords.as_slice()).map(|e| {
            DVector::from_fn(e.amb, |a, _| (0..self.dim).map(|j| e.d1[j][a] * v.comps[j]).sum())
        }))
    }

    /// Point of `M` with ambient coordinates `p` (projected onto `M` by the
    /// chart inverse), in its preferred chart.
    pub fn point_from_ambient(&self, p: &[f64]) -> Result<ChartPoint> {
        let chart = match &self.kind {
            Kind::Spherical { surf, .. } if surf.quality_ambient(1, p) > surf.quality_ambient(0, p) => 1,
            _ => 0,
        };
        let u = self
            .coords_from_ambient_raw(chart, p)
            .ok_or_else(|| GeoError::BadParams("manifold has no embedding".into()))?;
        self.recenter(&ChartPoint::new(chart, &u))
    }

    /// Tangent vector at `x` whose ambient image is (the tangential part of) `a`.
    pub fn vector_from_ambient(&self, x: &ChartPoint, a: &[f64]) -> Result<TangentVec> {
        self.check(x)?;
        let n = self.dim;
        let e = self
            .emb_jet_raw(x.chart, x.coords.as_slice())
            .ok_or_else(|| GeoError::BadParams("manifold has no embedding".into()))?;
        let g = first_fundamental_form(&e, n);
        let ginv = invert(&g, n).ok_or_else(|| GeoError::ChartSwitchFailed(e.p.to_vec()))?;
        let mut proj = [0.0; MAX_DIM];
        for (k, pk) in proj.iter_mut().enumerate().take(n) {
            *pk = (0..e.amb).map(|i| e.d1[k][i] * a[i]).sum();
        }
        let c = mat_vec(&ginv, &proj, n);
        Ok(TangentVec::new(x.clone(), &c[..n]))
    }

    /// The same point in chart `to`.
    pub fn to_chart(&self, x: &ChartPoint, to: usize) -> Result<ChartPoint> {
        self.check(x)?;
        let mut v = self.point_to_chart_raw(x.chart, x.coords.as_slice(), to)?;
        self.wrap_raw(&mut v);
        Ok(ChartPoint::new(to, &v))
    }

    /// Wrap periodic coordinates and move to a deeper chart when the point is
    /// within the outer 20% (by default) of its chart domain.
    pub fn recenter(&self, x: &ChartPoint) -> Result<ChartPoint> {
        let mut u = x.coords.as_slice().to_vec();
        self.wrap_raw(&mut u);
        if !self.in_domain_raw(x.chart, &u) {
            // a point on a coordinate singularity has no coordinates to recenter from
            return Err(GeoError::OutOfChart {
                chart: x.chart,
                coords: u,
            });
        }
        let to = self.preferred_chart_raw(x.chart, &u);
        if to == x.chart {
            return Ok(ChartPoint::new(x.chart, &u));
        }
        let mut v = self.point_to_chart_raw(x.chart, &u, to)?;
        self.wrap_raw(&mut v);
        Ok(ChartPoint::new(to, &v))
    }

    /// A tangent vector re-expressed in chart `to`.
    pub fn vector_to_chart(&self, v: &TangentVec, to: usize) -> Result<TangentVec> {
        let base = self.to_chart(&v.base, to)?;
        let jac = self.transition_jacobian_raw(
            v.base.chart,
            v.base.coords.as_slice(),
            to,
            base.coords.as_slice(),
        )?;
        let c = mat_vec(&jac, v.comps.as_slice(), self.dim);
        Ok(TangentVec::new(base, &c[..self.dim]))
    }

    /// A covector re-expressed in chart `to` (`eta_to = J_{from<-to}^T eta_from`).
    pub fn covector_to_chart(&self, eta: &CovectorVec, to: usize) -> Result<CovectorVec> {
        let n = self.dim;
        let base = self.to_chart(&eta.base, to)?;
        let back = self.transition_jacobian_raw(
            to,
            base.coords.as_slice(),
            eta.base.chart,
            eta.base.coords.as_slice(),
        )?;
        let comps = DVector::from_fn(n, |j, _| (0..n).map(|i| back[i][j] * eta.comps[i]).sum());
        Ok(CovectorVec { base, comps })
    }

    /// Coordinate difference `b - a` in a common chart, using the shortest
    /// representative for periodic coordinates.
    pub fn coord_difference(&self, a: &ChartPoint, b: &ChartPoint) -> Result<DVector<f64>> {
        let b = if b.chart == a.chart {
            b.clone()
        } else {
            self.to_chart(b, a.chart)?
        };
        Ok(DVector::from_fn(self.dim, |i, _| {
            let d = b.coords[i] - a.coords[i];
            match self.coord_period(i) {
                Some(p) => d - p * (d / p).round(),
                None => d,
            }
        }))
    }

    /// Distance between two points used for "same point" tests: ambient
    /// Euclidean distance where an embedding exists, wrapped chart distance
    /// on the flat torus.
    pub fn point_gap(&self, a: &ChartPoint, b: &ChartPoint) -> Result<f64> {
        match (self.embed(a)?, self.embed(b)?) {
            (Some(pa), Some(pb)) => Ok((pa - pb).norm()),
            _ => Ok(self.coord_difference(a, b)?.norm()),
        }
    }

    /// Maximal sectional curvature bound used for resolution heuristics.
    pub fn curvature_bound(&self) -> f64 {
        match &self.kind {
            Kind::FlatTorus { .. } => 0.0,
            Kind::Spherical { surf, .. } => surf.max_curvature(),
            Kind::TorusRev { surf } => 1.0 / (surf.minor * (surf.major + surf.minor)),
        }
    }

    /// Uniformly spread chart points used by scans and randomized tests:
    /// `per_dim` points per coordinate in chart 0, recentered.
    pub fn grid_points(&self, per_dim: usize) -> Result<Vec<(Vec<usize>, ChartPoint)>> {
        let n = self.dim;
        let mut out = Vec::new();
        let total = per_dim.pow(n as u32);
        for flat in 0..total {
            let mut idx = vec![0usize; n];
            let mut rem = flat;
            for slot in idx.iter_mut() {
                *slot = rem % per_dim;
                rem /= per_dim;
            }
            let u = self.grid_coords(&idx, per_dim);
            out.push((idx, ChartPoint::new(0, &u)));
        }
        Ok(out)
    }

    /// Chart-0 coordinates of base-grid cell `idx`.
    pub fn grid_coords(&self, idx: &[usize], per_dim: usize) -> Vec<f64> {
        let f = |i: usize| (i as f64 + 0.5) / per_dim as f64;
        match &self.kind {
            Kind::FlatTorus { lengths } => idx.iter().zip(lengths).map(|(&i, &l)| f(i) * l).collect(),
            Kind::Spherical { surf, .. } => idx
                .iter()
                .enumerate()
                .map(|(k, &i)| if k + 1 < surf.n { f(i) * PI } else { -PI + f(i) * 2.0 * PI })
                .collect(),
            Kind::TorusRev { .. } => idx.iter().map(|&i| -PI + f(i) * 2.0 * PI).collect(),
        }
    }

    /// Nearest base-grid cell of a point (inverse of [`Self::grid_coords`]).
    pub fn grid_cell(&self, x: &ChartPoint, per_dim: usize) -> Result<Vec<usize>> {
        let x0 = self.to_chart(x, 0)?;
        let nearest = |t: f64| -> usize {
            let k = (t * per_dim as f64 - 0.5).round();
            (k.max(0.0) as usize).min(per_dim - 1)
        };
        let wrap = |t: f64| -> usize {
            let k = (t * per_dim as f64 - 0.5).round() as i64;
            k.rem_euclid(per_dim as i64) as usize
        };
        let u = x0.coords.as_slice();
        Ok(match &self.kind {
            Kind::FlatTorus { lengths } => u.iter().zip(lengths).map(|(&c, &l)| wrap(c / l)).collect(),
            Kind::Spherical { surf, .. } => u
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    if k + 1 < surf.n {
                        nearest(c / PI)
                    } else {
                        wrap((c + PI) / (2.0 * PI))
                    }
                })
                .collect(),
            Kind::TorusRev { .. } => u.iter().map(|&c| wrap((c + PI) / (2.0 * PI))).collect(),
        })
    }

    /// Whether base-grid coordinate `i` wraps around.
    pub fn grid_periodic(&self, i: usize) -> bool {
        match &self.kind {
            Kind::Spherical { surf, .. } => i == surf.n - 1,
            _ => true,
        }
    }
}

pub(crate) fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Gram-Schmidt with respect to `g`; returns the orthonormalized columns.
pub(crate) fn gram_schmidt(g: &DMatrix<f64>, basis: &[DVector<f64>]) -> DMatrix<f64> {
    let n = g.nrows();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for b in basis {
        let mut w = b.clone();
        for _ in 0..2 {
            for c in &cols {
                let proj = (c.transpose() * g * &w)[(0, 0)];
                w -= c * proj;
            }
        }
        let nrm = (w.transpose() * g * &w)[(0, 0)].sqrt();
        cols.push(w / nrm);
        if cols.len() == n {
            break;
        }
    }
    DMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere() -> ManifoldModel {
        catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap()
    }

    #[test]
    fn flat_torus_metric_is_identity() {
        let m = catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap();
        let g = m.metric_at(&ChartPoint::new(0, &[1.3, 5.0])).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
        let gam = m.christoffel_at(&ChartPoint::new(0, &[0.1, 0.2])).unwrap();
        assert!(gam.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sphere_metric_at_pi_over_six() {
        let g = sphere().metric_at(&ChartPoint::new(0, &[PI / 6.0, 0.4])).unwrap();
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((g[(1, 1)] - 0.25).abs() < 1e-14);
        assert!(g[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn sphere_christoffels() {
        let m = sphere();
        let c = m.christoffel_at(&ChartPoint::new(0, &[PI / 4.0, 0.3])).unwrap();
        assert!((c.get(1, 0, 1) - 1.0).abs() < 1e-14);
        assert!((c.get(1, 1, 0) - 1.0).abs() < 1e-14);
        let c = m.christoffel_at(&ChartPoint::new(0, &[PI / 2.0, 0.3])).unwrap();
        assert!(c.get(0, 1, 1).abs() < 1e-15);
    }

    #[test]
    fn sphere_sectional_curvature_one() {
        let m = sphere();
        let x = ChartPoint::new(0, &[1.0, 0.5]);
        let v = TangentVec::new(x.clone(), &[1.0, 0.0]);
        let w = TangentVec::new(x.clone(), &[0.0, 1.0 / 1f64.sin()]);
        let r = m.curvature_apply(&v, &w).unwrap();
        assert!((&r.comps - &w.comps).norm() < 1e-13);
    }

    #[test]
    fn out_of_chart_is_reported() {
        let m = sphere();
        let err = m.metric_at(&ChartPoint::new(0, &[-0.1, 0.0])).unwrap_err();
        assert!(matches!(err, GeoError::OutOfChart { .. }));
        assert!(m.metric_at(&ChartPoint::new(3, &[1.0, 0.0])).is_err());
    }

    #[test]
    fn bad_params_rejected() {
        assert!(matches!(
            catalog_build(&ManifoldConfig::round_sphere(-1.0, 2)),
            Err(GeoError::BadParams(_))
        ));
        assert!(catalog_build(&ManifoldConfig::torus_of_revolution(1.0, 2.0)).is_err());
        assert!(catalog_build(&ManifoldConfig::flat_torus(&[1.0])).is_err());
    }

    #[test]
    fn injectivity_radii() {
        assert!((sphere().r_inj() - PI).abs() < 1e-15);
        let t = catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap();
        assert!((t.r_inj() - PI).abs() < 1e-15);
        let mut cfg = ManifoldConfig::torus_of_revolution(2.0, 1.0);
        assert!(catalog_build(&cfg).unwrap().r_inj() > 0.0);
        cfg.r_inj_override = Some(1.5);
        assert_eq!(catalog_build(&cfg).unwrap().r_inj(), 1.5);
    }

    #[test]
    fn chart_round_trip() {
        let m = catalog_build(&ManifoldConfig::triaxial_ellipsoid(1.0, 1.1, 1.2)).unwrap();
        let x = ChartPoint::new(0, &[1.1, 0.7]);
        let y = m.to_chart(&x, 1).unwrap();
        let z = m.to_chart(&y, 0).unwrap();
        assert!(m.coord_difference(&x, &z).unwrap().norm() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        for x in [-7.0, -PI, 0.0, PI, 3.5, 12.0] {
            let y = wrap_angle(x);
            assert!(y > -PI && y <= PI);
            assert!(((x - y) / (2.0 * PI)).fract().abs() < 1e-12 || ((x - y) / (2.0 * PI)).fract().abs() > 1.0 - 1e-12);
        }
    }
}
