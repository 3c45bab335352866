//! The stable-jump generator `A u(x) = C_{n,a} pv int (u(exp_x v) - u(x)) |v|^{-n-2a} dv`,
//! its split into a local part, a constant and a flow average, weighted
//! flow averages and spectral probes.
//!
//! All operators are evaluated in tangent polar coordinates on a cached
//! [`Fan`] of geodesics around the base point.

pub mod fan;
pub mod field;
pub mod oracle;
pub mod quadrature;
pub mod weight;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{GeoError, Result};
use crate::geodesic::{flow_sampled, FlowState};
use crate::manifold::{ChartPoint, ManifoldModel};

pub use fan::Fan;
use fan::NodePlan;
pub use field::{legendre_p, schmidt_p, BoundField, TestField};
pub use weight::{partition_builder, Weight, WeightKind};

/// Quadrature and truncation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub alpha: f64,
    /// cutoff radius of `chi`; the manifold's injectivity radius if unset
    pub r_inj: Option<f64>,
    /// radial truncation; the tail beyond is added analytically
    pub s_max: f64,
    pub tol_tail: f64,
    /// angular nodes: directions on the circle (n = 2) or polar nodes
    /// (n = 3, with twice as many azimuths); per-manifold default if unset
    pub n_ang: Option<usize>,
    pub radial_ratio: f64,
    pub radial_order: usize,
    /// innermost graded node relative to the top of the graded range
    pub r_min_rel: f64,
    pub transition_panels: usize,
    pub far_panel: f64,
    pub step: f64,
    /// cap on stored geodesic positions per base point
    pub budget: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            r_inj: None,
            s_max: 60.0,
            tol_tail: 1e-4,
            n_ang: None,
            radial_ratio: 1.15,
            radial_order: 4,
            r_min_rel: 1e-4,
            transition_panels: 8,
            far_panel: 0.1,
            step: 1e-2,
            budget: 4_000_000,
        }
    }
}

impl GeneratorConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub(crate) fn angular_nodes(&self, m: &ManifoldModel) -> usize {
        self.n_ang.unwrap_or(match (m.is_flat(), m.dim()) {
            (true, 2) => 512,
            (_, 2) => 64,
            _ => 16,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GeoError::BadAlpha(self.alpha));
        }
        let ok = self.s_max.is_finite()
            && self.radial_ratio > 1.0
            && self.radial_order >= 1
            && self.r_min_rel > 0.0
            && self.r_min_rel < 1.0
            && self.transition_panels >= 1
            && self.far_panel > 0.0
            && self.step > 0.0
            && self.tol_tail > 0.0
            && self.r_inj.map_or(true, |r| r > 0.0)
            && self.n_ang.map_or(true, |k| k >= 2);
        if !ok {
            return Err(GeoError::BadParams(format!("invalid generator configuration {self:?}")));
        }
        Ok(())
    }
}

/// `C_{n,a} = 4^a Gamma(n/2 + a) / (pi^{n/2} |Gamma(-a)|)`.
pub fn levy_constant(n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(GeoError::BadAlpha(alpha));
    }
    if n < 1 {
        return Err(GeoError::BadParams("dimension must be positive".into()));
    }
    let nh = n as f64 / 2.0;
    // |Gamma(-a)| = Gamma(1 - a) / a on (0, 1)
    let g_neg = gamma(1.0 - alpha) / alpha;
    Ok(4f64.powf(alpha) * gamma(nh + alpha) / (std::f64::consts::PI.powf(nh) * g_neg))
}

/// Smooth step: 0 for `t <= 0`, 1 for `t >= 1`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let f = |x: f64| (-1.0 / x).exp();
    let (a, b) = (f(t), f(1.0 - t));
    a / (a + b)
}

/// Cutoff `chi(t)`: 1 for `|t| <= r_inj^2 / 4`, 0 for `|t| >= r_inj^2 / 2`.
pub fn bump_chi(t: f64, r_inj: f64) -> f64 {
    let q = 0.25 * r_inj * r_inj;
    1.0 - smooth_step((t.abs() - q) / q)
}

/// `a(s) = (1 - chi(s^2)) s^{-1-2a}` for `s > 0`, else 0.
pub fn cutoff_a(s: f64, alpha: f64, r_inj: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    (1.0 - bump_chi(s * s, r_inj)) * s.powf(-1.0 - 2.0 * alpha)
}

/// All pieces of the split at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// direct evaluation
    pub total: f64,
    /// local part
    pub local: f64,
    /// flow average minus `c0 u(x)`
    pub far: f64,
    /// flow average with unit weight
    pub remainder: f64,
    pub c0: f64,
    /// `|total - local - far|`
    pub residual: f64,
    /// `sup |u| S_max^{-2a} / (2a)`: size of the analytically added tail
    pub tail_bound: f64,
}

/// A flow average along one orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowAverage {
    pub value: f64,
    pub tail_bound: f64,
}

/// The generator on one manifold with fixed quadrature.
#[derive(Clone, Debug)]
pub struct Generator<'a> {
    m: &'a ManifoldModel,
    cfg: GeneratorConfig,
    r_inj: f64,
    c: f64,
    plan: NodePlan,
}

fn sum_ordered(parts: Vec<f64>) -> f64 {
    parts.into_iter().sum()
}

impl<'a> Generator<'a> {
    pub fn new(m: &'a ManifoldModel, cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let r_inj = cfg.r_inj.unwrap_or(m.r_inj());
        Ok(Self {
            m,
            cfg: cfg.clone(),
            r_inj,
            c: levy_constant(m.dim(), cfg.alpha)?,
            plan: NodePlan::full(cfg, r_inj)?,
        })
    }

    /// The operator truncated to jumps of length in `[eps, s_cap]`; only
    /// [`Generator::apply`] is meaningful for it.
    pub fn truncated(m: &'a ManifoldModel, cfg: &GeneratorConfig, eps: f64, s_cap: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            m,
            cfg: cfg.clone(),
            r_inj: cfg.r_inj.unwrap_or(m.r_inj()),
            c: levy_constant(m.dim(), cfg.alpha)?,
            plan: NodePlan::truncated(cfg, eps, s_cap)?,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn r_inj(&self) -> f64 {
        self.r_inj
    }

    pub fn levy_constant(&self) -> f64 {
        self.c
    }

    /// Number of radial nodes per direction.
    pub fn radial_nodes(&self) -> usize {
        self.plan.s.len()
    }

    /// `c0 = C vol(S^{n-1}) int_0^inf a(s) ds`, with the radial rule of the
    /// flow average so that the far part annihilates constants.
    pub fn c0(&self) -> f64 {
        self.c * quadrature::sphere_area(self.m.dim()) * self.plan.far_mass
    }

    pub fn fan(&self, x: &ChartPoint) -> Result<Fan> {
        Fan::build(self.m, x, &self.plan, &self.cfg)
    }

    fn vol(fan: &Fan) -> f64 {
        fan.dirs.iter().map(|d| d.1).sum()
    }

    fn per_dir<F>(&self, fan: &Fan, u: &BoundField, f: F) -> f64
    where
        F: Fn(usize, f64, &[f64], &[f64]) -> f64 + Sync,
    {
        let (u0, vals) = fan.values(u);
        let ns = self.plan.s.len();
        let parts: Vec<f64> = vals
            .par_chunks(fan.per_dir)
            .enumerate()
            .map(|(k, chunk)| fan.dirs[k].1 * f(k, u0, &chunk[..ns], &chunk[ns..]))
            .collect();
        self.c * sum_ordered(parts)
    }

    fn tail_mean(&self, fwd: &[f64]) -> f64 {
        self.plan.birk.iter().zip(fwd).map(|(w, f)| w * f).sum()
    }

    /// Direct evaluation of `A u(x)`.
    pub fn apply(&self, fan: &Fan, u: &BoundField) -> f64 {
        let p = &self.plan;
        self.per_dir(fan, u, |_, u0, fwd, back| {
            let sym: f64 = (0..p.n_back).map(|j| p.sym[j] * (0.5 * (fwd[j] + back[j]) - u0)).sum();
            let one: f64 = p.one.iter().zip(fwd).map(|(w, f)| w * f).sum();
            sym + one - p.one_mass * u0 + p.tail * self.tail_mean(fwd)
        })
    }

    /// Local part: the kernel cut off by `chi(|v|^2)`.
    pub fn local_part(&self, fan: &Fan, u: &BoundField) -> f64 {
        let p = &self.plan;
        self.per_dir(fan, u, |_, u0, fwd, back| {
            (0..p.n_back).map(|j| p.local[j] * (0.5 * (fwd[j] + back[j]) - u0)).sum()
        })
    }

    /// Flow average `pi_* R_{a, psi} pi^* u (x)`.
    pub fn remainder(&self, fan: &Fan, u: &BoundField, psi: &Weight) -> Result<f64> {
        let p = &self.plan;
        if psi.kind == WeightKind::One {
            return Ok(self.per_dir(fan, u, |_, _, fwd, _| {
                p.far.iter().zip(fwd).map(|(w, f)| w * f).sum::<f64>() + p.tail * self.tail_mean(fwd)
            }));
        }
        let mut times = p.s.clone();
        times.push(self.cfg.s_max);
        let profiles: Vec<Vec<f64>> = fan
            .dirs
            .par_iter()
            .map(|(v, _)| psi.profile(self.m, v, &times))
            .collect::<Result<_>>()?;
        Ok(self.per_dir(fan, u, |k, _, fwd, _| {
            let w = &profiles[k];
            let body: f64 = p.far.iter().zip(fwd).zip(w).map(|((a, f), ps)| a * ps * f).sum();
            body + w[p.s.len()] * p.tail * self.tail_mean(fwd)
        }))
    }

    /// Flow average minus `c0 u(x)`.
    pub fn far_part(&self, fan: &Fan, u: &BoundField) -> f64 {
        let r = self.remainder(fan, u, &Weight::one()).expect("unit weight");
        let u0 = u.eval_pos(&fan.x_pos);
        r - self.c * Self::vol(fan) * self.plan.far_mass * u0
    }

    pub fn decompose(&self, fan: &Fan, u: &BoundField) -> Decomposition {
        let total = self.apply(fan, u);
        let local = self.local_part(fan, u);
        let remainder = self.remainder(fan, u, &Weight::one()).expect("unit weight");
        let c0 = self.c * Self::vol(fan) * self.plan.far_mass;
        let far = remainder - c0 * u.eval_pos(&fan.x_pos);
        Decomposition {
            total,
            local,
            far,
            remainder,
            c0,
            residual: (total - local - far).abs(),
            tail_bound: self.tail_bound(u.field().sup_bound()),
        }
    }

    pub fn tail_bound(&self, sup: f64) -> f64 {
        sup * self.plan.tail
    }

    /// `C int_0^{S_max} psi(v, s) a(s) f(Phi(v, s)) ds` plus the tail
    /// `psi(v, S_max) f_bar S_max^{-2a} / (2a)`, with `f_bar` a smooth mean of
    /// `f` over the second half of the orbit segment.
    pub fn average_along_flow<F>(&self, f: F, sup_f: Option<f64>, v: &FlowState, psi: &Weight) -> Result<FlowAverage>
    where
        F: Fn(&FlowState) -> f64,
    {
        let sup = sup_f.ok_or_else(|| GeoError::TailNotControlled("sup |f| unknown".into()))?;
        let p = &self.plan;
        let states = flow_sampled(self.m, v, &p.s, self.cfg.step)?;
        let vals: Vec<f64> = states.iter().map(&f).collect();
        let mut times = p.s.clone();
        times.push(self.cfg.s_max);
        let w = psi.profile(self.m, v, &times)?;
        let body: f64 = p.far.iter().zip(&vals).zip(&w).map(|((a, f), ps)| a * ps * f).sum();
        let mean: f64 = p.birk.iter().zip(&vals).map(|(b, f)| b * f).sum();
        Ok(FlowAverage {
            value: self.c * (body + w[p.s.len()] * p.tail * mean),
            tail_bound: self.c * sup * p.tail,
        })
    }
}

/// One operator selected for a spectral probe.
#[derive(Clone, Debug)]
pub enum Piece {
    Full,
    Local,
    Far,
    Remainder(Weight),
}

/// Which sequence the decay exponent is fitted to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayFit {
    /// `|lambda_i|`
    Magnitude,
    /// `|lambda_l - (lambda_{l-1} + lambda_{l+1}) / 2| / 2`, the part
    /// alternating in sign between consecutive indices
    Alternating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralRow {
    pub index: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralTable {
    pub rows: Vec<SpectralRow>,
    /// least-squares slope of `log |.|` against `log index` in the window
    pub exponent: Option<f64>,
}

impl<'a> Generator<'a> {
    fn eval_piece(&self, fan: &Fan, u: &BoundField, piece: &Piece) -> Result<f64> {
        Ok(match piece {
            Piece::Full => self.apply(fan, u),
            Piece::Local => self.local_part(fan, u),
            Piece::Far => self.far_part(fan, u),
            Piece::Remainder(w) => self.remainder(fan, u, w)?,
        })
    }

    /// Eigenvalue estimates `(P u)(x_ref) / u(x_ref)` for a family of exact
    /// eigenfunctions, and a log-log decay fit over `window`.
    pub fn spectral_probe(
        &self,
        family: &[TestField],
        piece: &Piece,
        fit: DecayFit,
        window: (f64, f64),
    ) -> Result<SpectralTable> {
        let mut fans: Vec<Fan> = Vec::new();
        let mut rows = Vec::with_capacity(family.len());
        for u in family {
            let x = u.reference_point(self.m)?;
            let bound = u.bind(self.m)?;
            let k = match fans.iter().position(|f| self.m.point_gap(&f.x, &x).map_or(false, |g| g < 1e-12)) {
                Some(k) => k,
                None => {
                    fans.push(self.fan(&x)?);
                    fans.len() - 1
                }
            };
            let fan = &fans[k];
            let u0 = bound.eval_pos(&fan.x_pos);
            if u0.abs() < 0.5 * u.sup_bound() {
                return Err(GeoError::ReferencePointDegenerate(format!("{u:?}: u(x) = {u0}")));
            }
            rows.push(SpectralRow {
                index: u.index(),
                value: self.eval_piece(fan, &bound, piece)? / u0,
            });
        }
        let exponent = fit_decay(&rows, fit, window);
        Ok(SpectralTable { rows, exponent })
    }
}

/// Sequence used for the decay fit.
pub fn decay_sequence(rows: &[SpectralRow], fit: DecayFit) -> Vec<(f64, f64)> {
    match fit {
        DecayFit::Magnitude => rows.iter().map(|r| (r.index, r.value.abs())).collect(),
        DecayFit::Alternating => rows
            .windows(3)
            .filter(|w| w[0].index + 1.0 == w[1].index && w[1].index + 1.0 == w[2].index)
            .map(|w| (w[1].index, (w[1].value - 0.5 * (w[0].value + w[2].value)).abs() / 2.0))
            .collect(),
    }
}

/// Least-squares slope of `log y` on `log x` over `x` in `window`.
pub fn fit_decay(rows: &[SpectralRow], fit: DecayFit, window: (f64, f64)) -> Option<f64> {
    let pts: Vec<(f64, f64)> = decay_sequence(rows, fit)
        .into_iter()
        .filter(|(i, y)| *i >= window.0 && *i <= window.1 && *y > 0.0 && *i > 0.0)
        .map(|(i, y)| (i.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

fn one_shot<T>(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig, f: impl Fn(&Generator, &Fan, &BoundField) -> Result<T>) -> Result<T> {
    let g = Generator::new(m, cfg)?;
    let bound = u.bind(m)?;
    let fan = g.fan(x)?;
    f(&g, &fan, &bound)
}

/// `A u(x)`.
pub fn apply_generator(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig) -> Result<f64> {
    one_shot(m, u, x, cfg, |g, fan, b| Ok(g.apply(fan, b)))
}

/// Local part of `A u(x)`.
pub fn local_part(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig) -> Result<f64> {
    one_shot(m, u, x, cfg, |g, fan, b| Ok(g.local_part(fan, b)))
}

/// Flow average with weight `psi`.
pub fn remainder_op(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig, psi: &Weight) -> Result<f64> {
    one_shot(m, u, x, cfg, |g, fan, b| g.remainder(fan, b, psi))
}

/// Flow average minus `c0 u(x)`.
pub fn far_part(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig) -> Result<f64> {
    one_shot(m, u, x, cfg, |g, fan, b| Ok(g.far_part(fan, b)))
}

pub fn decompose(m: &ManifoldModel, u: &TestField, x: &ChartPoint, cfg: &GeneratorConfig) -> Result<Decomposition> {
    one_shot(m, u, x, cfg, |g, fan, b| Ok(g.decompose(fan, b)))
}

/// `C int_{eps <= |v| <= s_cap} (u(exp_x v) - u(x)) |v|^{-n-2a} dv`.
pub fn truncated_generator(
    m: &ManifoldModel,
    u: &TestField,
    x: &ChartPoint,
    cfg: &GeneratorConfig,
    eps: f64,
    s_cap: f64,
) -> Result<f64> {
    let g = Generator::truncated(m, cfg, eps, s_cap)?;
    let fan = g.fan(x)?;
    Ok(g.apply(&fan, &u.bind(m)?))
}

/// `C int_0^inf a(s) ds` summed over directions, with the generator's radial rule.
pub fn c0(m: &ManifoldModel, cfg: &GeneratorConfig) -> Result<f64> {
    Ok(Generator::new(m, cfg)?.c0())
}
