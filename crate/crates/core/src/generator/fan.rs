//! Radial node plans and cached geodesic fans.
//!
//! A fan stores, for every direction of the angular rule at a base point,
//! the field positions of the geodesic at all radial nodes (forward) and at
//! the nodes of the symmetrized inner rules (backward). Every operator is a
//! fixed linear functional of these values, so a fan is built once per base
//! point and reused across test fields and weights.

use rayon::prelude::*;

use crate::error::{GeoError, Result};
use crate::geodesic::{advance_sampled, FlowState};
use crate::manifold::{ChartPoint, ManifoldModel};

use super::field::{position, BoundField};
use super::quadrature::{composite, geometric_bounds, sphere_rule, uniform_bounds};
use super::{bump_chi, GeneratorConfig};

/// Radial weights of all rules on one merged node list `s`.
#[derive(Clone, Debug)]
pub(crate) struct NodePlan {
    pub s: Vec<f64>,
    /// `s[..n_back]` are also sampled backwards
    pub n_back: usize,
    /// symmetrized local kernel `chi(r^2) r^{-1-2a}` on `s[..n_back]`
    pub local: Vec<f64>,
    /// `a(s)` on all nodes
    pub far: Vec<f64>,
    /// symmetrized full kernel on `s[..n_back]`
    pub sym: Vec<f64>,
    /// one-sided full kernel on all nodes
    pub one: Vec<f64>,
    /// normalized averaging weights for the tail mean
    pub birk: Vec<f64>,
    /// `int_S^inf s^{-1-2a} ds`
    pub tail: f64,
    pub far_mass: f64,
    pub one_mass: f64,
}

fn kernel(s: f64, alpha: f64) -> f64 {
    s.powf(-1.0 - 2.0 * alpha)
}

/// Merges the nodes of `rules` into `s`, returning each rule's weights on
/// the merged list.
fn merge(s: &mut Vec<f64>, rules: &[&[(f64, f64)]]) -> Vec<Vec<f64>> {
    let mut all: Vec<f64> = rules.iter().flat_map(|r| r.iter().map(|p| p.0)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    *s = all;
    rules
        .iter()
        .map(|r| {
            let mut w = vec![0.0; s.len()];
            for &(x, wx) in r.iter() {
                let i = s.partition_point(|&y| y < x - 1e-14 * x.abs().max(1.0));
                w[i] += wx;
            }
            w
        })
        .collect()
}

impl NodePlan {
    /// Plan of the full operator and its split at radius `r_inj`.
    pub fn full(cfg: &GeneratorConfig, r_inj: f64) -> Result<Self> {
        let a = cfg.alpha;
        let half = 0.5 * r_inj;
        let r_c = r_inj / 2f64.sqrt();
        let s_max = cfg.s_max;
        if !(s_max > r_c + cfg.far_panel) {
            return Err(GeoError::BadParams(format!(
                "s_max = {s_max} must exceed the cutoff radius {r_c} by a panel"
            )));
        }
        let corr = |r_min: f64, r1: f64| r_min.powf(2.0 - 2.0 * a) / ((2.0 - 2.0 * a) * r1 * r1);

        // local: graded panels up to r_inj / 2, then the transition band
        let graded = geometric_bounds(cfg.r_min_rel * half, half, cfg.radial_ratio);
        let r_min = graded[0];
        let mut local = composite(&graded, cfg.radial_order);
        let transition = composite(&uniform_bounds(half, r_c, cfg.transition_panels), 8);
        local.extend(transition.iter().copied());
        let mut local: Vec<(f64, f64)> = local
            .into_iter()
            .map(|(r, w)| (r, w * bump_chi(r * r, r_inj) * kernel(r, a)))
            .collect();
        let r1 = local[0].0;
        local[0].1 += corr(r_min, r1);

        // far: transition band with 1 - chi, then uniform panels
        let n_far = ((s_max - r_c) / cfg.far_panel).ceil() as usize;
        let outer = composite(&uniform_bounds(r_c, s_max, n_far), 8);
        let mut far: Vec<(f64, f64)> = transition
            .iter()
            .map(|&(r, w)| (r, w * (1.0 - bump_chi(r * r, r_inj)) * kernel(r, a)))
            .collect();
        far.extend(outer.iter().map(|&(r, w)| (r, w * kernel(r, a))));

        // direct: symmetrized graded rule below r_split, one-sided beyond
        let r_split = 0.35 * r_inj;
        let graded = geometric_bounds(cfg.r_min_rel * r_split, r_split, cfg.radial_ratio);
        let r_min_g = graded[0];
        let mut sym: Vec<(f64, f64)> = composite(&graded, cfg.radial_order)
            .into_iter()
            .map(|(r, w)| (r, w * kernel(r, a)))
            .collect();
        let r1 = sym[0].0;
        sym[0].1 += corr(r_min_g, r1);
        let mut one: Vec<(f64, f64)> = composite(&uniform_bounds(r_split, r_c, 2 * cfg.transition_panels), 8)
            .into_iter()
            .map(|(r, w)| (r, w * kernel(r, a)))
            .collect();
        one.extend(outer.iter().map(|&(r, w)| (r, w * kernel(r, a))));

        // tail mean over [S/2, S]
        let birk: Vec<(f64, f64)> = outer
            .iter()
            .filter(|p| p.0 > 0.5 * s_max)
            .map(|&(r, w)| {
                let t = (r - 0.5 * s_max) / (0.5 * s_max);
                (r, w * (-1.0 / (t * (1.0 - t))).exp())
            })
            .collect();
        let bsum: f64 = birk.iter().map(|p| p.1).sum();
        let birk: Vec<(f64, f64)> = birk.into_iter().map(|(r, w)| (r, w / bsum)).collect();

        let mut s = Vec::new();
        let w = merge(&mut s, &[&local, &far, &sym, &one, &birk]);
        let n_back = s.partition_point(|&x| x <= r_c * (1.0 + 1e-14));
        let tail = s_max.powf(-2.0 * a) / (2.0 * a);
        let far_mass = w[1].iter().sum::<f64>() + tail;
        let one_mass = w[3].iter().sum::<f64>() + tail;
        let mut it = w.into_iter();
        let local = it.next().unwrap()[..n_back].to_vec();
        let far = it.next().unwrap();
        let sym = it.next().unwrap()[..n_back].to_vec();
        let one = it.next().unwrap();
        let birk = it.next().unwrap();
        Ok(Self {
            s,
            n_back,
            local,
            far,
            sym,
            one,
            birk,
            tail,
            far_mass,
            one_mass,
        })
    }

    /// One-sided plan of the operator truncated to `eps <= |v| <= s_cap`.
    pub fn truncated(cfg: &GeneratorConfig, eps: f64, s_cap: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < s_cap) {
            return Err(GeoError::BadParams(format!("need 0 < eps < s_cap, got {eps}, {s_cap}")));
        }
        let a = cfg.alpha;
        let knee = (4.0 * eps).min(s_cap);
        let mut bounds: Vec<f64> = geometric_bounds(eps, knee, cfg.radial_ratio);
        bounds[0] = eps;
        let mut rule = composite(&bounds, 8);
        if s_cap > knee {
            let count = ((s_cap - knee) / cfg.far_panel).ceil() as usize;
            rule.extend(composite(&uniform_bounds(knee, s_cap, count), 8));
        }
        let one: Vec<(f64, f64)> = rule.into_iter().map(|(r, w)| (r, w * kernel(r, a))).collect();
        let mut s = Vec::new();
        let w = merge(&mut s, &[&one]);
        let one = w.into_iter().next().unwrap();
        let one_mass = one.iter().sum();
        let len = s.len();
        Ok(Self {
            s,
            n_back: 0,
            local: Vec::new(),
            far: vec![0.0; len],
            sym: Vec::new(),
            one,
            birk: vec![0.0; len],
            tail: 0.0,
            far_mass: 0.0,
            one_mass,
        })
    }
}

/// Geodesic positions around one base point.
#[derive(Clone, Debug)]
pub struct Fan {
    pub x: ChartPoint,
    /// unit directions with their angular weights
    pub dirs: Vec<(FlowState, f64)>,
    pub(crate) x_pos: Vec<f64>,
    /// per direction: forward positions at all nodes, then backward
    /// positions at the first `n_back` nodes
    pub(crate) pos: Vec<f64>,
    pub(crate) dim_p: usize,
    pub(crate) per_dir: usize,
}

impl Fan {
    pub(crate) fn build(m: &ManifoldModel, x: &ChartPoint, plan: &NodePlan, cfg: &GeneratorConfig) -> Result<Self> {
        let n = m.dim();
        let count = cfg.angular_nodes(m);
        let rule = sphere_rule(n, count);
        if rule.is_empty() {
            return Err(GeoError::BadParams(format!("generator supports dimensions 2 and 3, got {n}")));
        }
        let per_dir = plan.s.len() + plan.n_back;
        let needed = per_dir * rule.len();
        if needed > cfg.budget {
            return Err(GeoError::QuadratureBudgetExceeded {
                needed,
                budget: cfg.budget,
            });
        }
        let x = m.recenter(x)?;
        let frame = m.orthonormal_frame(&x)?;
        let dirs: Vec<(FlowState, f64)> = rule
            .iter()
            .map(|(c, w)| {
                let comps = &frame * nalgebra::DVector::from_column_slice(c);
                Ok((FlowState::at(m, &x, comps.as_slice())?, *w))
            })
            .collect::<Result<_>>()?;
        let x_pos = position(m, x.chart, x.coords.as_slice())?;
        let dim_p = x_pos.len();
        let back_nodes: Vec<f64> = plan.s[..plan.n_back].iter().map(|s| -s).collect();
        let chunks: Vec<Result<Vec<f64>>> = dirs
            .par_iter()
            .map(|(v, _)| {
                let raw = v.to_raw(m);
                let mut out = Vec::with_capacity(per_dir * dim_p);
                for r in advance_sampled(m, &raw, &plan.s, cfg.step)? {
                    out.extend(position(m, r.chart, &r.x[..n])?);
                }
                for r in advance_sampled(m, &raw, &back_nodes, cfg.step)? {
                    out.extend(position(m, r.chart, &r.x[..n])?);
                }
                Ok(out)
            })
            .collect();
        let mut pos = Vec::with_capacity(needed * dim_p);
        for c in chunks {
            pos.extend(c?);
        }
        Ok(Self {
            x,
            dirs,
            x_pos,
            pos,
            dim_p,
            per_dir,
        })
    }

    /// Field values at the base point and, per direction, forward values at
    /// all nodes followed by backward values.
    pub(crate) fn values(&self, u: &BoundField) -> (f64, Vec<f64>) {
        let vals = self.pos.par_chunks(self.dim_p).map(|p| u.eval_pos(p)).collect();
        (u.eval_pos(&self.x_pos), vals)
    }
}
