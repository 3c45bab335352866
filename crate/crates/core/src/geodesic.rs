//! Geodesic flow on the unit sphere bundle, exponential map, parallel
//! transport and local distance.
//!
//! The integrator is classical RK4 with a fixed step, carrying optionally a
//! set of parallel vectors and the Jacobi propagators of a parallel frame.
//! Chart changes happen between steps, when the point drifts into the outer
//! part of its chart domain.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeoError, Result};
use crate::manifold::small::{mat_vec, Matn, Vecn, MAX_DIM, ZERO_MAT};
use crate::manifold::{ChartPoint, ManifoldModel, TangentVec};

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Step used for a flow of length `s` when none is configured.
pub fn default_step(s: f64) -> f64 {
    let s = s.abs();
    if s == 0.0 {
        DEFAULT_STEP
    } else {
        DEFAULT_STEP.min(s / 100.0)
    }
}

/// A unit tangent vector `v` at `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub x: ChartPoint,
    pub v: TangentVec,
}

impl FlowState {
    /// Normalizes `v` to unit length.
    pub fn new(m: &ManifoldModel, v: &TangentVec) -> Result<Self> {
        let v = m.unit_normalize(v)?;
        Ok(Self {
            x: v.base.clone(),
            v,
        })
    }

    /// Unit vector with chart components `comps` at `x` (normalized).
    pub fn at(m: &ManifoldModel, x: &ChartPoint, comps: &[f64]) -> Result<Self> {
        Self::new(m, &TangentVec::new(x.clone(), comps))
    }

    pub(crate) fn to_raw(&self, m: &ManifoldModel) -> Raw {
        let n = m.dim();
        let mut r = Raw::new(self.x.chart, n);
        r.x[..n].copy_from_slice(self.x.coords.as_slice());
        r.v[..n].copy_from_slice(self.v.comps.as_slice());
        r
    }

    pub(crate) fn from_raw(r: &Raw, n: usize) -> Self {
        let x = ChartPoint::new(r.chart, &r.x[..n]);
        let v = TangentVec::new(x.clone(), &r.v[..n]);
        Self { x, v }
    }

    /// The same unit vector in chart `to`.
    pub fn to_chart(&self, m: &ManifoldModel, to: usize) -> Result<Self> {
        let v = m.vector_to_chart(&self.v, to)?;
        Ok(Self { x: v.base.clone(), v })
    }

    /// The same unit vector in the chart preferred for its base point.
    pub fn recentered(&self, m: &ManifoldModel) -> Result<Self> {
        let to = m.preferred_chart_raw(self.x.chart, self.x.coords.as_slice());
        if to == self.x.chart {
            let mut u = self.x.coords.as_slice().to_vec();
            m.wrap_raw(&mut u);
            let x = ChartPoint::new(self.x.chart, &u);
            return Ok(Self {
                v: TangentVec {
                    base: x.clone(),
                    comps: self.v.comps.clone(),
                },
                x,
            });
        }
        self.to_chart(m, to)
    }

    /// `-v`.
    pub fn reversed(&self) -> Self {
        Self {
            x: self.x.clone(),
            v: TangentVec {
                base: self.x.clone(),
                comps: -&self.v.comps,
            },
        }
    }
}

/// Jacobi propagators in a parallel frame: `C` solves `J(0) = I, J'(0) = 0`,
/// `D` solves `J(0) = 0, J'(0) = I`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct JacMats {
    pub c: Matn,
    pub cp: Matn,
    pub d: Matn,
    pub dp: Matn,
}

impl JacMats {
    pub fn identity(n: usize) -> Self {
        let mut c = ZERO_MAT;
        for (i, row) in c.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        Self {
            c,
            cp: ZERO_MAT,
            d: ZERO_MAT,
            dp: c,
        }
    }
}

/// Integrator state: base point, velocity, transported vectors and
/// (optionally) Jacobi propagators. Everything on the stack.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Raw {
    pub chart: usize,
    pub n: usize,
    pub x: Vecn,
    pub v: Vecn,
    /// transported vectors (chart components), `nf` of them
    pub e: [Vecn; MAX_DIM],
    pub nf: usize,
    pub jac: Option<JacMats>,
}

#[derive(Clone, Copy)]
struct Deriv {
    x: Vecn,
    v: Vecn,
    e: [Vecn; MAX_DIM],
    jac: Option<JacMats>,
}

impl Raw {
    pub fn new(chart: usize, n: usize) -> Self {
        Self {
            chart,
            n,
            x: [0.0; MAX_DIM],
            v: [0.0; MAX_DIM],
            e: [[0.0; MAX_DIM]; MAX_DIM],
            nf: 0,
            jac: None,
        }
    }

    fn axpy(&self, d: &Deriv, h: f64) -> Raw {
        let n = self.n;
        let mut out = *self;
        for i in 0..n {
            out.x[i] += h * d.x[i];
            out.v[i] += h * d.v[i];
        }
        for a in 0..self.nf {
            for i in 0..n {
                out.e[a][i] += h * d.e[a][i];
            }
        }
        if let (Some(j), Some(dj)) = (out.jac.as_mut(), d.jac.as_ref()) {
            for i in 0..n {
                for k in 0..n {
                    j.c[i][k] += h * dj.c[i][k];
                    j.cp[i][k] += h * dj.cp[i][k];
                    j.d[i][k] += h * dj.d[i][k];
                    j.dp[i][k] += h * dj.dp[i][k];
                }
            }
        }
        out
    }
}

fn deriv(m: &ManifoldModel, s: &Raw) -> Result<Deriv> {
    let n = s.n;
    let jet = m.jet_raw(s.chart, &s.x[..n])?;
    let mut d = Deriv {
        x: s.v,
        v: [0.0; MAX_DIM],
        e: [[0.0; MAX_DIM]; MAX_DIM],
        jac: None,
    };
    if jet.shape.is_none() {
        if let Some(j) = &s.jac {
            d.jac = Some(JacMats {
                c: j.cp,
                cp: ZERO_MAT,
                d: j.dp,
                dp: ZERO_MAT,
            });
        }
        return Ok(d);
    }
    let acc = jet.gamma_contract(&s.v[..n], &s.v[..n]);
    for i in 0..n {
        d.v[i] = -acc[i];
    }
    for a in 0..s.nf {
        let t = jet.gamma_contract(&s.v[..n], &s.e[a][..n]);
        for i in 0..n {
            d.e[a][i] = -t[i];
        }
    }
    if let Some(j) = &s.jac {
        // frame curvature matrix R_ab = <E_a, R(E_b, v) v>
        let mut r = ZERO_MAT;
        for b in 0..n {
            let rb = jet.curvature(&s.v[..n], &s.e[b][..n]);
            for a in 0..n {
                r[a][b] = jet.inner(&s.e[a][..n], &rb[..n]);
            }
        }
        let mut dj = JacMats {
            c: j.cp,
            cp: ZERO_MAT,
            d: j.dp,
            dp: ZERO_MAT,
        };
        for a in 0..n {
            for b in 0..n {
                let mut sc = 0.0;
                let mut sd = 0.0;
                for k in 0..n {
                    sc += r[a][k] * j.c[k][b];
                    sd += r[a][k] * j.d[k][b];
                }
                dj.cp[a][b] = -sc;
                dj.dp[a][b] = -sd;
            }
        }
        d.jac = Some(dj);
    }
    Ok(d)
}

fn rk4_step(m: &ManifoldModel, s: &Raw, h: f64) -> Result<Raw> {
    let k1 = deriv(m, s)?;
    let k2 = deriv(m, &s.axpy(&k1, 0.5 * h))?;
    let k3 = deriv(m, &s.axpy(&k2, 0.5 * h))?;
    let k4 = deriv(m, &s.axpy(&k3, h))?;
    let mut out = s.axpy(&k1, h / 6.0);
    out = out.axpy(&k2, h / 3.0);
    out = out.axpy(&k3, h / 3.0);
    Ok(out.axpy(&k4, h / 6.0))
}

/// Wrap, renormalize and (when close to the chart edge) change chart.
fn settle(m: &ManifoldModel, s: &mut Raw) -> Result<()> {
    let n = s.n;
    if !s.x[..n].iter().all(|c| c.is_finite()) {
        return Err(GeoError::ChartSwitchFailed(s.x[..n].to_vec()));
    }
    m.wrap_raw(&mut s.x[..n]);
    let to = m.preferred_chart_raw(s.chart, &s.x[..n]);
    if to != s.chart {
        let y = m.point_to_chart_raw(s.chart, &s.x[..n], to)?;
        let jac = m.transition_jacobian_raw(s.chart, &s.x[..n], to, &y)?;
        s.v = mat_vec(&jac, &s.v[..n], n);
        for a in 0..s.nf {
            s.e[a] = mat_vec(&jac, &s.e[a][..n], n);
        }
        s.x = [0.0; MAX_DIM];
        s.x[..n].copy_from_slice(&y);
        s.chart = to;
        m.wrap_raw(&mut s.x[..n]);
    }
    if !m.in_domain_raw(s.chart, &s.x[..n]) {
        return Err(GeoError::ChartSwitchFailed(s.x[..n].to_vec()));
    }
    if !m.is_flat() {
        let jet = m.jet_raw(s.chart, &s.x[..n])?;
        let nrm = jet.inner(&s.v[..n], &s.v[..n]).sqrt();
        for c in s.v.iter_mut().take(n) {
            *c /= nrm;
        }
    }
    Ok(())
}

/// Flow the raw state by `ds` (either sign) with steps of at most `step`.
pub(crate) fn advance(m: &ManifoldModel, s: &Raw, ds: f64, step: f64) -> Result<Raw> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(GeoError::BadParams(format!("integration step must be positive, got {step}")));
    }
    let mut cur = *s;
    if ds == 0.0 {
        return Ok(cur);
    }
    if m.is_flat() && cur.jac.is_none() {
        // straight lines, exactly
        for i in 0..cur.n {
            cur.x[i] += ds * cur.v[i];
        }
        m.wrap_raw(&mut cur.x[..cur.n]);
        return Ok(cur);
    }
    let steps = (ds.abs() / step).ceil().max(1.0) as usize;
    let h = ds / steps as f64;
    for _ in 0..steps {
        cur = rk4_step(m, &cur, h)?;
        settle(m, &mut cur)?;
    }
    Ok(cur)
}

/// States at each of the monotone (all `>= 0` ascending or all `<= 0`
/// descending) flow times `nodes`.
pub(crate) fn advance_sampled(m: &ManifoldModel, s: &Raw, nodes: &[f64], step: f64) -> Result<Vec<Raw>> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut cur = *s;
    let mut t = 0.0;
    for &node in nodes {
        cur = advance(m, &cur, node - t, step)?;
        t = node;
        out.push(cur);
    }
    Ok(out)
}

/// `Phi(v0, s)`.
pub fn flow(m: &ManifoldModel, v0: &FlowState, s: f64, step: f64) -> Result<FlowState> {
    let r = advance(m, &v0.to_raw(m), s, step)?;
    Ok(FlowState::from_raw(&r, m.dim()))
}

/// `Phi(v0, s)` for each `s` in `nodes` (monotone, starting from 0 side).
pub fn flow_sampled(m: &ManifoldModel, v0: &FlowState, nodes: &[f64], step: f64) -> Result<Vec<FlowState>> {
    let rs = advance_sampled(m, &v0.to_raw(m), nodes, step)?;
    Ok(rs.iter().map(|r| FlowState::from_raw(r, m.dim())).collect())
}

/// Sampled geodesic with parallel orthonormal frames of `v`-perp.
#[derive(Clone, Debug)]
pub struct GeodesicSegment {
    pub initial: FlowState,
    pub s_max: f64,
    pub step: f64,
    pub samples: Vec<(f64, FlowState)>,
    /// columns: `n - 1` parallel unit vectors orthogonal to the velocity
    pub frames: Vec<DMatrix<f64>>,
}

/// Integrate a segment on `[0, s_max]` with `n_samples + 1` equispaced samples.
pub fn geodesic_segment(
    m: &ManifoldModel,
    v0: &FlowState,
    s_max: f64,
    step: f64,
    n_samples: usize,
) -> Result<GeodesicSegment> {
    let n = m.dim();
    let frame0 = m.frame_with_first(&v0.v)?;
    let mut raw = v0.to_raw(m);
    raw.nf = n - 1;
    for a in 1..n {
        for i in 0..n {
            raw.e[a - 1][i] = frame0[(i, a)];
        }
    }
    let n_samples = n_samples.max(1);
    let mut samples = Vec::with_capacity(n_samples + 1);
    let mut frames = Vec::with_capacity(n_samples + 1);
    let push = |r: &Raw, s: f64, samples: &mut Vec<(f64, FlowState)>, frames: &mut Vec<DMatrix<f64>>| {
        samples.push((s, FlowState::from_raw(r, n)));
        frames.push(DMatrix::from_fn(n, n - 1, |i, a| r.e[a][i]));
    };
    push(&raw, 0.0, &mut samples, &mut frames);
    let mut t = 0.0;
    for k in 1..=n_samples {
        let s = s_max * k as f64 / n_samples as f64;
        raw = advance(m, &raw, s - t, step)?;
        t = s;
        push(&raw, s, &mut samples, &mut frames);
    }
    Ok(GeodesicSegment {
        initial: v0.clone(),
        s_max,
        step,
        samples,
        frames,
    })
}

/// Transport `w` (based at the start of `seg`) along the segment to time `s`.
pub fn parallel_transport(m: &ManifoldModel, seg: &GeodesicSegment, w: &TangentVec, s: f64) -> Result<TangentVec> {
    let n = m.dim();
    let start = &seg.initial;
    let w = if w.base.chart == start.x.chart {
        w.clone()
    } else {
        m.vector_to_chart(w, start.x.chart)?
    };
    let mut raw = start.to_raw(m);
    raw.nf = 1;
    raw.e[0][..n].copy_from_slice(w.comps.as_slice());
    let r = advance(m, &raw, s, seg.step)?;
    let x = ChartPoint::new(r.chart, &r.x[..n]);
    Ok(TangentVec::new(x, &r.e[0][..n]))
}

/// `exp_x(w)`.
pub fn exp_map(m: &ManifoldModel, w: &TangentVec, step: f64) -> Result<ChartPoint> {
    let len = m.norm(w)?;
    if len == 0.0 {
        return Ok(w.base.clone());
    }
    let unit = FlowState {
        x: w.base.clone(),
        v: TangentVec {
            base: w.base.clone(),
            comps: &w.comps / len,
        },
    };
    Ok(flow(m, &unit, len, step)?.x)
}

/// Riemannian distance for points closer than `r_inj`, with the initial
/// velocity `w` of the minimizing geodesic (`exp_x(w) = y`).
pub fn distance_local(m: &ManifoldModel, x: &ChartPoint, y: &ChartPoint, step: f64) -> Result<(f64, TangentVec)> {
    let n = m.dim();
    let x = m.recenter(x)?;
    let y = m.recenter(y)?;
    let mut w: DVector<f64> = match m.embed(&x)? {
        None => m.coord_difference(&x, &y)?,
        Some(px) => {
            let py = m.embed(&y)?.expect("embedded manifold");
            let chord = &py - &px;
            let t = m.vector_from_ambient(&x, chord.as_slice())?;
            let tn = m.norm(&t)?;
            if tn > 0.0 {
                &t.comps * (chord.norm() / tn)
            } else {
                t.comps
            }
        }
    };
    let residual = |w: &DVector<f64>| -> Result<DVector<f64>> {
        let z = exp_map(m, &TangentVec { base: x.clone(), comps: w.clone() }, step)?;
        m.coord_difference(&y, &z)
    };
    let mut f = residual(&w)?;
    let h = 1e-6;
    for _ in 0..40 {
        if f.norm() < 1e-13 {
            break;
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let col = (residual(&wp)? - residual(&wm)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let Some(delta) = jac.lu().solve(&f) else {
            return Err(GeoError::NoConvergence("singular exponential-map Jacobian".into()));
        };
        // damped update
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..20 {
            let cand = &w - &delta * lambda;
            if let Ok(fc) = residual(&cand) {
                if fc.norm() < f.norm() {
                    w = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let wv = TangentVec { base: x.clone(), comps: w };
    let d = m.norm(&wv)?;
    let gap = m.point_gap(&exp_map(m, &wv, step)?, &y)?;
    if gap > 1e-9 {
        return Err(GeoError::NoConvergence(format!("shooting residual {gap:e}")));
    }
    if d >= m.r_inj() {
        return Err(GeoError::NoConvergence(format!(
            "distance {d} not below the injectivity radius {}",
            m.r_inj()
        )));
    }
    Ok((d, wv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{catalog_build, ManifoldConfig};
    use std::f64::consts::PI;

    #[test]
    fn flat_straight_line() {
        let m = catalog_build(&ManifoldConfig::flat_torus(&[2.0 * PI, 2.0 * PI])).unwrap();
        let v0 = FlowState::at(&m, &ChartPoint::new(0, &[0.0, 0.0]), &[1.0, 0.0]).unwrap();
        let v1 = flow(&m, &v0, 1.0, 1e-3).unwrap();
        assert!((v1.x.coords[0] - 1.0).abs() < 1e-15);
        assert_eq!(v1.v.comps, v0.v.comps);
    }

    #[test]
    fn sphere_great_circle_period() {
        let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap();
        let v0 = FlowState::at(&m, &ChartPoint::new(0, &[PI / 2.0, 0.3]), &[0.0, 1.0]).unwrap();
        let v1 = flow(&m, &v0, 2.0 * PI, 1e-3).unwrap().to_chart(&m, 0).unwrap();
        assert!(m.coord_difference(&v0.x, &v1.x).unwrap().norm() < 1e-7);
        assert!((&v1.v.comps - &v0.v.comps).norm() < 1e-7);
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let m = catalog_build(&ManifoldConfig::torus_of_revolution(2.0, 1.0)).unwrap();
        let x = ChartPoint::new(0, &[0.4, 1.0]);
        let y = exp_map(&m, &TangentVec::new(x.clone(), &[0.0, 0.0]), 1e-3).unwrap();
        assert_eq!(x, y);
    }
}
