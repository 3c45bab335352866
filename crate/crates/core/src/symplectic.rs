//! The symplectic form `omega_g` on `TM`, its preservation by the geodesic
//! flow, and covector pairs attached to conjugate pairs.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::conjugacy::{jacobi_propagate_sampled, Atlas, ConjugateRecord, JacobiSample, ScanConfig};
use crate::error::{GeoError, Result};
use crate::geodesic::FlowState;
use crate::manifold::{ChartPoint, CovectorVec, ManifoldModel, TangentVec};

/// A tangent vector to `TM` at `(x, v)` in natural coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentOfTM {
    pub x: ChartPoint,
    pub v: DVector<f64>,
    pub dx: DVector<f64>,
    pub dv: DVector<f64>,
}

impl TangentOfTM {
    pub fn new(x: &ChartPoint, v: &[f64], dx: &[f64], dv: &[f64]) -> Self {
        Self {
            x: x.clone(),
            v: DVector::from_column_slice(v),
            dx: DVector::from_column_slice(dx),
            dv: DVector::from_column_slice(dv),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dx: &self.dx * c,
            dv: &self.dv * c,
            ..self.clone()
        }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self {
            dx: &self.dx + &other.dx,
            dv: &self.dv + &other.dv,
            ..self.clone()
        }
    }
}

/// Local formula
/// `omega_g = v^l d_j g_{il} dx^j ^ dx^i + g_{ij} dv^j ^ dx^i`.
pub fn omega_g_eval(m: &ManifoldModel, a: &TangentOfTM, b: &TangentOfTM) -> Result<f64> {
    let n = m.dim();
    if !m.in_domain_raw(a.x.chart, a.x.coords.as_slice()) {
        return Err(GeoError::OutOfChart {
            chart: a.x.chart,
            coords: a.x.coords.as_slice().to_vec(),
        });
    }
    let jet = m.jet_raw(a.x.chart, a.x.coords.as_slice())?;
    let mut w = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut dg = 0.0;
            if !m.is_flat() {
                for l in 0..n {
                    dg += a.v[l] * jet.metric_derivative(i, l, j);
                }
            }
            w += dg * (a.dx[j] * b.dx[i] - b.dx[j] * a.dx[i]);
            w += jet.g[i][j] * (a.dv[j] * b.dx[i] - b.dv[j] * a.dx[i]);
        }
    }
    Ok(w)
}

/// Connection map `K(dx, dv) = dv + Gamma(v, dx)`.
pub fn connection_map(m: &ManifoldModel, a: &TangentOfTM) -> Result<DVector<f64>> {
    let gam = m.christoffel_at(&a.x)?;
    Ok(&a.dv + gam.contract(&a.v, &a.dx))
}

/// `X` in natural coordinates of chart `to`: `dx` and `K X` transform as
/// tangent vectors, `dv` is rebuilt from them.
pub fn tm_vector_to_chart(m: &ManifoldModel, a: &TangentOfTM, to: usize) -> Result<TangentOfTM> {
    let k = connection_map(m, a)?;
    let tv = |c: &DVector<f64>| TangentVec {
        base: a.x.clone(),
        comps: c.clone(),
    };
    let v = m.vector_to_chart(&tv(&a.v), to)?;
    let dx = m.vector_to_chart(&tv(&a.dx), to)?;
    let k = m.vector_to_chart(&tv(&k), to)?;
    from_jacobi(m, &v.base, &v.comps, dx.comps, k.comps)
}

/// Inverse of the connection map at `(x, v)`.
fn from_jacobi(m: &ManifoldModel, x: &ChartPoint, v: &DVector<f64>, j: DVector<f64>, jp: DVector<f64>) -> Result<TangentOfTM> {
    let gam = m.christoffel_at(x)?;
    let dv = &jp - gam.contract(v, &j);
    Ok(TangentOfTM {
        x: x.clone(),
        v: v.clone(),
        dx: j,
        dv,
    })
}

/// Frame coordinates `(J(0), J'(0))` of `X` at the start of a Jacobi frame.
fn jacobi_data(m: &ManifoldModel, start: &JacobiSample, a: &TangentOfTM) -> Result<(DVector<f64>, DVector<f64>)> {
    let g = m.metric_at(&start.state.x)?;
    let et_g = start.frame.transpose() * g;
    let k = connection_map(m, a)?;
    Ok((&et_g * &a.dx, &et_g * k))
}

/// `dPhi_s X` given the Jacobi data at `0` and `s`.
pub fn push_forward(m: &ManifoldModel, start: &JacobiSample, end: &JacobiSample, a: &TangentOfTM) -> Result<TangentOfTM> {
    let (j0, jp0) = jacobi_data(m, start, a)?;
    let j = &end.c * &j0 + &end.d * &jp0;
    let jp = &end.cp * &j0 + &end.dp * &jp0;
    from_jacobi(
        m,
        &end.state.x,
        &end.state.v.comps,
        &end.frame * j,
        &end.frame * jp,
    )
}

/// `|omega_g(dPhi X, dPhi Y) - omega_g(X, Y)|` after flowing for time `s`.
pub fn flow_symplectic_residual(
    m: &ManifoldModel,
    v: &FlowState,
    s: f64,
    a: &TangentOfTM,
    b: &TangentOfTM,
    step: f64,
) -> Result<f64> {
    if s == 0.0 {
        return Ok(0.0);
    }
    let before = omega_g_eval(m, a, b)?;
    let sign = s.signum();
    let v0 = if sign < 0.0 { v.reversed() } else { v.clone() };
    let f = jacobi_propagate_sampled(m, &v0, s.abs(), step, s.abs())?;
    let start = f.sample(0);
    let end = f.sample(f.len() - 1);
    // backward flow: Phi_{-s}(v) = -Phi_s(-v), i.e. conjugate by the flip
    let flip = |t: &TangentOfTM| TangentOfTM {
        x: t.x.clone(),
        v: -&t.v,
        dx: t.dx.clone(),
        dv: -&t.dv,
    };
    let (pa, pb) = if sign < 0.0 {
        (
            flip(&push_forward(m, &start, &end, &flip(a))?),
            flip(&push_forward(m, &start, &end, &flip(b))?),
        )
    } else {
        (push_forward(m, &start, &end, a)?, push_forward(m, &start, &end, b)?)
    };
    let after = omega_g_eval(m, &pa, &pb)?;
    Ok((after - before).abs())
}

/// A sample `(eta, eta_tilde)` of the canonical relation of a conjugate pair.
#[derive(Clone, Debug)]
pub struct CovectorPair {
    pub eta: CovectorVec,
    pub eta_tilde: CovectorVec,
    pub source: ConjugateRecord,
    /// vertical component `a` of the kernel vector used
    pub kernel_vector: TangentVec,
    /// `Phi(v, s_star)`
    pub endpoint: FlowState,
}

fn jacobi_at(m: &ManifoldModel, rec: &ConjugateRecord, step: f64) -> Result<(JacobiSample, JacobiSample)> {
    if rec.s_star == 0.0 {
        let f = jacobi_propagate_sampled(m, &rec.v, 1e-3, step.min(1e-3), 1e-3)?;
        let s0 = f.sample(0);
        return Ok((s0.clone(), s0));
    }
    let f = jacobi_propagate_sampled(m, &rec.v, rec.s_star, step, rec.s_star)?;
    Ok((f.sample(0), f.sample(f.len() - 1)))
}

/// The map `F_k` at `rec` applied to the vertical kernel vector with
/// component `a` at `v`: `eta = a^flat`, `eta_tilde = (D'(s*) a)^flat`.
pub fn canonical_pair(m: &ManifoldModel, rec: &ConjugateRecord, a: &TangentVec, step: f64) -> Result<CovectorPair> {
    if !(rec.s_star > 0.0) || rec.order == 0 {
        return Err(GeoError::NotConjugate(format!("record with s_star = {} and order {}", rec.s_star, rec.order)));
    }
    let (start, end) = jacobi_at(m, rec, step)?;
    let a = if a.base.chart == start.state.x.chart {
        a.clone()
    } else {
        m.vector_to_chart(a, start.state.x.chart)?
    };
    let g0 = m.metric_at(&start.state.x)?;
    let hat = start.frame.transpose() * &g0 * &a.comps;
    let n = m.dim();
    let hat_n = hat.rows(1, n - 1).into_owned();
    let anorm = hat.norm();
    if anorm == 0.0 {
        return Err(GeoError::NotConjugate("zero kernel vector".into()));
    }
    let tol = rec.tol_zero.max(1e-9);
    if hat[0].abs() > 1e-8 * anorm || (end.d_normal() * &hat_n).norm() > 10.0 * tol * anorm {
        return Err(GeoError::NotConjugate(format!(
            "vector is not in the kernel at s = {}",
            rec.s_star
        )));
    }
    let wt = end.dp_normal() * &hat_n;
    if wt.norm() < tol * anorm {
        return Err(GeoError::DegenerateKernel(format!("|D'(s*) a| = {:e}", wt.norm())));
    }
    let comps_end = end.frame.columns(1, n - 1) * wt;
    let g1 = m.metric_at(&end.state.x)?;
    Ok(CovectorPair {
        eta: CovectorVec {
            base: start.state.x.clone(),
            comps: &g0 * &a.comps,
        },
        eta_tilde: CovectorVec {
            base: end.state.x.clone(),
            comps: g1 * comps_end,
        },
        source: rec.clone(),
        kernel_vector: a,
        endpoint: end.state,
    })
}

/// Residuals of the conjugate-pair characterization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaReport {
    /// `max_W |eta(dpi W) - eta_tilde(dpi dPhi W)|` over a basis of `T_v SM`
    pub r1: f64,
    /// `|eta(v)|`
    pub r2: f64,
    /// `|eta_tilde(v_tilde)|`
    pub r3: f64,
    pub scale: f64,
    pub pass: bool,
}

pub fn verify_geometric_lemma(m: &ManifoldModel, rec: &ConjugateRecord, pair: &CovectorPair, step: f64) -> Result<LemmaReport> {
    let n = m.dim();
    let (start, end) = jacobi_at(m, rec, step)?;
    let eta = if pair.eta.base.chart == start.state.x.chart {
        pair.eta.clone()
    } else {
        m.covector_to_chart(&pair.eta, start.state.x.chart)?
    };
    let eta_t = if pair.eta_tilde.base.chart == end.state.x.chart {
        pair.eta_tilde.clone()
    } else {
        m.covector_to_chart(&pair.eta_tilde, end.state.x.chart)?
    };
    // eta, eta_tilde in frame coordinates
    let e0 = eta.comps.transpose() * &start.frame;
    let e1 = eta_t.comps.transpose() * &end.frame;
    let mut r1: f64 = 0.0;
    for b in 0..n {
        // horizontal: J(0) = E_b, J'(0) = 0
        r1 = r1.max((e0[b] - (&e1 * end.c.column(b))[(0, 0)]).abs());
    }
    for b in 1..n {
        // vertical, tangent to SM: J(0) = 0, J'(0) = E_b
        r1 = r1.max((&e1 * end.d.column(b))[(0, 0)].abs());
    }
    let r2 = eta.comps.dot(&start.state.v.comps).abs();
    let r3 = eta_t.comps.dot(&end.state.v.comps).abs();
    let scale = m.covector_norm(&eta)?.max(m.covector_norm(&eta_t)?);
    let tol = 1e-6 * scale;
    Ok(LemmaReport {
        r1,
        r2,
        r3,
        scale,
        pass: r1 < tol && r2 < tol && r3 < tol,
    })
}

/// Canonical pairs for every kernel basis vector of every record in the
/// atlas, with their residual reports.
pub fn atlas_pairs(m: &ManifoldModel, atlas: &Atlas, cfg: &ScanConfig) -> Result<Vec<(usize, CovectorPair, LemmaReport)>> {
    let out: Vec<Result<Vec<(usize, CovectorPair, LemmaReport)>>> = atlas
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            rec.kernel_basis
                .iter()
                .map(|a| {
                    let pair = canonical_pair(m, rec, a, cfg.step)?;
                    let rep = verify_geometric_lemma(m, rec, &pair, cfg.step)?;
                    Ok((i, pair, rep))
                })
                .collect()
        })
        .collect();
    let mut all = Vec::new();
    for r in out {
        all.extend(r?);
    }
    Ok(all)
}

/// CSV of covector pairs with residual columns. Pairs are stored untwisted,
/// `(eta, eta_tilde)`.
pub fn write_pairs_csv<W: Write>(m: &ManifoldModel, rows: &[(usize, CovectorPair, LemmaReport)], out: &mut W, run_id: &str) -> Result<()> {
    let n = m.dim();
    writeln!(out, "# run_id={run_id}")?;
    let mut header = vec!["record".to_string(), "component_id".into(), "s_star".into(), "chart_id".into()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=n).map(|i| format!("eta{i}")));
    header.push("chart_id_tilde".into());
    header.extend((1..=n).map(|i| format!("x_tilde{i}")));
    header.extend((1..=n).map(|i| format!("eta_tilde{i}")));
    header.extend(["r1", "r2", "r3", "scale", "pass"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    let f = |x: f64| format!("{x:.16e}");
    for (i, p, r) in rows {
        let mut row = vec![i.to_string(), p.source.component_id.to_string(), f(p.source.s_star), p.eta.base.chart.to_string()];
        row.extend(p.eta.base.coords.iter().map(|&c| f(c)));
        row.extend(p.eta.comps.iter().map(|&c| f(c)));
        row.push(p.eta_tilde.base.chart.to_string());
        row.extend(p.eta_tilde.base.coords.iter().map(|&c| f(c)));
        row.extend(p.eta_tilde.comps.iter().map(|&c| f(c)));
        row.extend([f(r.r1), f(r.r2), f(r.r3), f(r.scale), r.pass.to_string()]);
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
