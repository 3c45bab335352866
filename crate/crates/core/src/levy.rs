//! Compound-Poisson simulation of the stable jump process: jumps along
//! geodesics with isotropic directions and truncated Pareto lengths.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::generator::quadrature::sphere_area;
use crate::generator::{levy_constant, TestField};
use crate::geodesic::{flow, FlowState};
use crate::manifold::{ChartPoint, ManifoldModel, TangentVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub alpha: f64,
    /// jumps shorter than `eps` are dropped
    pub eps: f64,
    pub s_cap: f64,
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// geodesic integration step for the jumps
    pub step: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            eps: 0.1,
            s_cap: 60.0,
            t_end: 1.0,
            n_paths: 1000,
            seed: 0,
            step: 1e-2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GeoError::BadAlpha(self.alpha));
        }
        if !(self.eps > 0.0 && self.eps < self.s_cap && self.s_cap.is_finite()) {
            return Err(GeoError::BadParams(format!(
                "need 0 < eps < s_cap < inf, got eps = {}, s_cap = {}",
                self.eps, self.s_cap
            )));
        }
        if !(self.t_end > 0.0 && self.step > 0.0) {
            return Err(GeoError::BadParams("t_end and step must be positive".into()));
        }
        Ok(())
    }

    /// `lambda = C vol(S^{n-1}) (eps^{-2a} - s_cap^{-2a}) / (2a)`.
    pub fn jump_rate(&self, n: usize) -> Result<f64> {
        self.validate()?;
        let a2 = 2.0 * self.alpha;
        Ok(levy_constant(n, self.alpha)? * sphere_area(n) * (self.eps.powf(-a2) - self.s_cap.powf(-a2)) / a2)
    }

    /// Coefficient `b` with `|A u - A_eps u| <= b sup |Hess u|` to leading
    /// order: `C vol(S^{n-1}) eps^{2-2a} / (2 (2-2a))`.
    pub fn truncation_bias_coefficient(&self, n: usize) -> Result<f64> {
        let p = 2.0 - 2.0 * self.alpha;
        Ok(levy_constant(n, self.alpha)? * sphere_area(n) * self.eps.powf(p) / (2.0 * p))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpEvent {
    pub t: f64,
    pub pre: ChartPoint,
    pub post: ChartPoint,
    pub length: f64,
    /// unit direction at `pre`
    pub direction: TangentVec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub seed: u64,
    pub stream: u64,
    pub start: ChartPoint,
    pub events: Vec<JumpEvent>,
}

impl PathRecord {
    pub fn end(&self) -> &ChartPoint {
        self.events.last().map_or(&self.start, |e| &e.post)
    }

    /// Rows `t, chart_id, coords...` for the start and every jump.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let row = |out: &mut W, t: f64, x: &ChartPoint| -> Result<()> {
            write!(out, "{},{:.16e},{}", self.stream, t, x.chart)?;
            for c in x.coords.iter() {
                write!(out, ",{c:.16e}")?;
            }
            writeln!(out)?;
            Ok(())
        };
        row(out, 0.0, &self.start)?;
        for e in &self.events {
            row(out, e.t, &e.post)?;
        }
        Ok(())
    }
}

/// Random stream of path `index` under `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF draw from the density proportional to `s^{-1-2a}` on `[eps, s_cap]`.
pub fn sample_jump_length<R: Rng + ?Sized>(rng: &mut R, alpha: f64, eps: f64, s_cap: f64) -> f64 {
    let a2 = 2.0 * alpha;
    let (lo, hi) = (eps.powf(-a2), s_cap.powf(-a2));
    let u: f64 = rng.gen();
    (lo - u * (lo - hi)).powf(-1.0 / a2).clamp(eps, s_cap)
}

/// Uniform unit vector at `x` with respect to the metric.
pub fn sample_direction<R: Rng + ?Sized>(m: &ManifoldModel, x: &ChartPoint, rng: &mut R) -> Result<TangentVec> {
    let n = m.dim();
    let frame = m.orthonormal_frame(x)?;
    let z = loop {
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let nz = z.norm();
        if nz > 1e-12 {
            break z / nz;
        }
    };
    Ok(TangentVec {
        base: x.clone(),
        comps: frame * z,
    })
}

/// One path on `[0, t_end]`: exponential waiting times at rate `lambda`,
/// each jump a geodesic segment of sampled length and direction.
pub fn simulate_path<R: Rng + ?Sized>(m: &ManifoldModel, x0: &ChartPoint, cfg: &SimConfig, rng: &mut R) -> Result<PathRecord> {
    simulate_tagged(m, x0, cfg, rng, cfg.seed, 0)
}

fn simulate_tagged<R: Rng + ?Sized>(
    m: &ManifoldModel,
    x0: &ChartPoint,
    cfg: &SimConfig,
    rng: &mut R,
    seed: u64,
    stream: u64,
) -> Result<PathRecord> {
    let rate = cfg.jump_rate(m.dim())?;
    let start = m.recenter(x0)?;
    let mut x = start.clone();
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let u: f64 = rng.gen();
        t += -(1.0 - u).ln() / rate;
        if t > cfg.t_end {
            break;
        }
        let length = sample_jump_length(rng, cfg.alpha, cfg.eps, cfg.s_cap);
        let direction = sample_direction(m, &x, rng)?;
        let state = FlowState {
            x: x.clone(),
            v: direction.clone(),
        };
        let post = m.recenter(&flow(m, &state, length, cfg.step)?.x)?;
        events.push(JumpEvent {
            t,
            pre: x,
            post: post.clone(),
            length,
            direction,
        });
        x = post;
    }
    Ok(PathRecord {
        seed,
        stream,
        start,
        events,
    })
}

/// Paths `0..n_paths` with substreams `(cfg.seed, index)`.
pub fn simulate_paths(m: &ManifoldModel, x0: &ChartPoint, cfg: &SimConfig) -> Result<Vec<PathRecord>> {
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_tagged(m, x0, cfg, &mut path_rng(cfg.seed, i), cfg.seed, i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub delta: f64,
    pub jump_rate: f64,
}

/// `(mean u(X_delta) - u(x)) / delta` over `n_paths` paths started at `x`.
pub fn empirical_generator(
    m: &ManifoldModel,
    u: &TestField,
    x: &ChartPoint,
    cfg: &SimConfig,
    delta: f64,
    n_paths: usize,
) -> Result<EmpiricalEstimate> {
    let rate = cfg.jump_rate(m.dim())?;
    if n_paths == 0 {
        return Err(GeoError::BadParams("n_paths must be positive".into()));
    }
    if !(delta > 0.0) || rate * delta >= 0.2 {
        return Err(GeoError::BadParams(format!(
            "delta = {delta} must be positive with rate * delta < 0.2 (rate {rate})"
        )));
    }
    let bound = u.bind(m)?;
    let run = SimConfig {
        t_end: delta,
        ..cfg.clone()
    };
    let u0 = bound.eval_at(m, x)?;
    let diffs: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = simulate_tagged(m, x, &run, &mut path_rng(cfg.seed, i), cfg.seed, i)?;
            Ok(bound.eval_at(m, p.end())? - u0)
        })
        .collect::<Result<_>>()?;
    let k = n_paths as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let var = if n_paths > 1 {
        diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    Ok(EmpiricalEstimate {
        estimate: mean / delta,
        std_error: (var / k).sqrt() / delta,
        n_paths,
        delta,
        jump_rate: rate,
    })
}
