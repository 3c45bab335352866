//! Conjugate pairs along geodesics: Jacobi propagators in a parallel frame,
//! detection and order, regular/singular classification, and grid scans
//! that group pairs into components.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};
use crate::geodesic::{advance, FlowState, JacMats, Raw};
use crate::manifold::{ChartPoint, ManifoldModel, TangentVec};

/// Scan and classification parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    pub s_scan: f64,
    /// base points per coordinate
    pub base_grid: usize,
    /// directions per angular coordinate of the unit sphere
    pub dir_grid: usize,
    pub step: f64,
    /// spacing of the stored samples used for root bracketing
    pub sample_spacing: f64,
    /// `tol_zero = tol_zero_rel * (1 + |D|)`
    pub tol_zero_rel: f64,
    pub tol_trans: f64,
    pub neighborhood_radius: f64,
    pub classify_samples: usize,
    /// largest jump in `s_star` between grid neighbours of one component
    pub link_tol: f64,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            s_scan: 7.0,
            base_grid: 8,
            dir_grid: 8,
            step: 1e-3,
            sample_spacing: 0.02,
            tol_zero_rel: 1e-6,
            tol_trans: 1e-4,
            neighborhood_radius: 1e-2,
            classify_samples: 4,
            link_tol: 0.5,
            seed: 0,
        }
    }
}

/// Jacobi data at one flow time, all matrices in the parallel frame
/// `E(s)` whose first column is the velocity.
#[derive(Clone, Debug)]
pub struct JacobiSample {
    pub s: f64,
    pub state: FlowState,
    /// frame columns in chart components at `state.x`
    pub frame: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub cp: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dp: DMatrix<f64>,
}

impl JacobiSample {
    fn from_raw(r: &Raw, s: f64) -> Self {
        let n = r.n;
        let j = r.jac.expect("jacobi state");
        let mat = |a: &[[f64; 4]; 4]| DMatrix::from_fn(n, n, |i, k| a[i][k]);
        Self {
            s,
            state: FlowState::from_raw(r, n),
            frame: DMatrix::from_fn(n, n, |i, a| r.e[a][i]),
            c: mat(&j.c),
            cp: mat(&j.cp),
            d: mat(&j.d),
            dp: mat(&j.dp),
        }
    }

    /// Normal block of `D`, i.e. the directions orthogonal to the velocity.
    pub fn d_normal(&self) -> DMatrix<f64> {
        let n = self.d.nrows();
        self.d.view((1, 1), (n - 1, n - 1)).into_owned()
    }

    pub fn dp_normal(&self) -> DMatrix<f64> {
        let n = self.dp.nrows();
        self.dp.view((1, 1), (n - 1, n - 1)).into_owned()
    }

    /// `|D^T D' - D'^T D|` on the normal block.
    pub fn wronskian_defect(&self) -> f64 {
        let d = self.d_normal();
        let dp = self.dp_normal();
        (d.transpose() * &dp - dp.transpose() * &d).norm()
    }

    /// Fiber derivative of `exp` at `s v`, in the frames at both ends.
    pub fn dfexp(&self) -> DMatrix<f64> {
        if self.s == 0.0 {
            return DMatrix::identity(self.d.nrows(), self.d.nrows());
        }
        &self.d / self.s
    }
}

/// Jacobi propagators along `gamma_v` with stored samples.
#[derive(Clone, Debug)]
pub struct JacobiFrame {
    pub initial: FlowState,
    pub s_max: f64,
    pub step: f64,
    samples: Vec<(f64, Raw)>,
}

impl JacobiFrame {
    pub fn sample_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|(s, _)| *s)
    }

    pub fn samples(&self) -> impl Iterator<Item = JacobiSample> + '_ {
        self.samples.iter().map(|(s, r)| JacobiSample::from_raw(r, *s))
    }

    pub fn sample(&self, i: usize) -> JacobiSample {
        let (s, r) = &self.samples[i];
        JacobiSample::from_raw(r, *s)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Jacobi data at any `s` in `[0, s_max]`, integrated from the nearest
    /// stored sample below.
    pub fn eval_at(&self, m: &ManifoldModel, s: f64) -> Result<JacobiSample> {
        let idx = match self.samples.binary_search_by(|(t, _)| t.partial_cmp(&s).unwrap()) {
            Ok(i) => return Ok(JacobiSample::from_raw(&self.samples[i].1, s)),
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let (t, r) = &self.samples[idx];
        let out = advance(m, r, s - t, self.step)?;
        Ok(JacobiSample::from_raw(&out, s))
    }
}

/// Start state of the Jacobi integration: frame with `E_0 = v`.
fn jacobi_start(m: &ManifoldModel, v: &FlowState) -> Result<Raw> {
    let n = m.dim();
    let frame = m.frame_with_first(&v.v)?;
    let mut raw = v.to_raw(m);
    raw.nf = n;
    for a in 0..n {
        for i in 0..n {
            raw.e[a][i] = frame[(i, a)];
        }
    }
    raw.jac = Some(JacMats::identity(n));
    Ok(raw)
}

/// Propagate the Jacobi matrices along `gamma_v` on `[0, s_max]`, storing
/// samples every `spacing` (rounded to whole steps).
pub fn jacobi_propagate_sampled(
    m: &ManifoldModel,
    v: &FlowState,
    s_max: f64,
    step: f64,
    spacing: f64,
) -> Result<JacobiFrame> {
    if !(s_max > 0.0) {
        return Err(GeoError::BadParams(format!("s_max must be positive, got {s_max}")));
    }
    if !(step > 0.0) {
        return Err(GeoError::BadParams(format!("integration step must be positive, got {step}")));
    }
    let per = (spacing / step).round().max(1.0);
    let ds = per * step;
    let count = (s_max / ds).ceil() as usize;
    let mut raw = jacobi_start(m, v)?;
    let mut samples = Vec::with_capacity(count + 1);
    samples.push((0.0, raw));
    let mut t = 0.0;
    for k in 1..=count {
        let s = (k as f64 * ds).min(s_max);
        raw = advance(m, &raw, s - t, step)?;
        t = s;
        samples.push((s, raw));
    }
    Ok(JacobiFrame {
        initial: v.clone(),
        s_max,
        step,
        samples,
    })
}

/// [`jacobi_propagate_sampled`] with the default sample spacing.
pub fn jacobi_propagate(m: &ManifoldModel, v: &FlowState, s_max: f64, step: f64) -> Result<JacobiFrame> {
    jacobi_propagate_sampled(m, v, s_max, step, ScanConfig::default().sample_spacing)
}

/// Grid location of a record produced by a scan.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GridCell {
    pub base: Vec<usize>,
    pub dir: Vec<usize>,
}

/// A detected conjugate pair `(v, s_star)`.
#[derive(Clone, Debug)]
pub struct ConjugateRecord {
    pub v: FlowState,
    pub s_star: f64,
    pub order: usize,
    /// kernel directions in chart components at the base point
    pub kernel_basis: Vec<TangentVec>,
    /// the same directions as frame coordinates (columns, length n-1)
    pub kernel_frame: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub tol_zero: f64,
    pub regular: bool,
    pub transversality: f64,
    pub component_id: usize,
    pub cell: Option<GridCell>,
}

fn singular_values(d: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = d.clone().svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sv
}

fn sigma_min(js: &JacobiSample) -> f64 {
    singular_values(&js.d_normal())[0]
}

fn tol_zero_for(js: &JacobiSample, rel: f64) -> f64 {
    rel * (1.0 + js.d_normal().norm())
}

fn bisect_det(m: &ManifoldModel, f: &JacobiFrame, mut lo: f64, mut hi: f64) -> Result<f64> {
    let det = |s: f64| -> Result<f64> { Ok(f.eval_at(m, s)?.d_normal().determinant()) };
    let mut flo = det(lo)?;
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fm = det(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn golden_sigma(m: &ManifoldModel, f: &JacobiFrame, mut a: f64, mut b: f64) -> Result<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let sig = |s: f64| -> Result<f64> { Ok(sigma_min(&f.eval_at(m, s)?)) };
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = sig(c)?;
    let mut fd = sig(d)?;
    while b - a > 1e-11 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sig(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sig(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

fn record_at(m: &ManifoldModel, f: &JacobiFrame, s: f64, tol_rel: f64) -> Result<Option<ConjugateRecord>> {
    let js = f.eval_at(m, s)?;
    let dn = js.d_normal();
    let tol = tol_zero_for(&js, tol_rel);
    let svd = dn.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors");
    let mut pairs: Vec<(f64, usize)> = svd.singular_values.iter().cloned().zip(0..).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let order = pairs.iter().filter(|(sv, _)| *sv < tol).count();
    if order == 0 {
        return Ok(None);
    }
    let n = m.dim();
    let frame0 = f.eval_at(m, 0.0)?.frame;
    let mut kernel_frame = DMatrix::zeros(n - 1, order);
    let mut kernel_basis = Vec::with_capacity(order);
    for (col, &(_, idx)) in pairs.iter().take(order).enumerate() {
        let a: DVector<f64> = v_t.row(idx).transpose();
        kernel_frame.set_column(col, &a);
        let comps = frame0.columns(1, n - 1) * &a;
        kernel_basis.push(TangentVec {
            base: f.initial.x.clone(),
            comps,
        });
    }
    Ok(Some(ConjugateRecord {
        v: f.initial.clone(),
        s_star: s,
        order,
        kernel_basis,
        kernel_frame,
        singular_values: pairs.iter().map(|p| p.0).collect(),
        tol_zero: tol,
        regular: false,
        transversality: f64::NAN,
        component_id: 0,
        cell: None,
    }))
}

/// Conjugate pairs of a propagated frame with `s_star` in `(lo, hi]`.
pub fn pairs_in_frame(
    m: &ManifoldModel,
    f: &JacobiFrame,
    lo: f64,
    hi: f64,
    tol_zero_rel: f64,
) -> Result<Vec<ConjugateRecord>> {
    let samples: Vec<JacobiSample> = f.samples().collect();
    let sig: Vec<f64> = samples.iter().map(sigma_min).collect();
    let det: Vec<f64> = samples.iter().map(|js| js.d_normal().determinant()).collect();
    let mut roots: Vec<f64> = Vec::new();
    let last = samples.len();
    for i in 1..last {
        let (s0, s1) = (samples[i - 1].s, samples[i].s);
        if s1 <= lo.max(0.0) || s0 > hi {
            continue;
        }
        if s0 > 0.0 && det[i - 1] * det[i] < 0.0 {
            roots.push(bisect_det(m, f, s0, s1)?);
        } else if det[i] == 0.0 {
            roots.push(s1);
        }
    }
    // even-order zeros leave det without a sign change; look at sigma_min
    for i in 1..last.saturating_sub(1) {
        let s = samples[i].s;
        if s <= lo || s > hi {
            continue;
        }
        if sig[i] <= sig[i - 1] && sig[i] <= sig[i + 1] {
            let (a, b) = (samples[i - 1].s, samples[i + 1].s);
            if roots.iter().any(|&r| r >= a - 1e-9 && r <= b + 1e-9) {
                continue;
            }
            roots.push(golden_sigma(m, f, a, b)?);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut merged: Vec<f64> = Vec::new();
    for r in roots {
        match merged.last_mut() {
            Some(prev) if (r - *prev).abs() < 1e-5 => {
                // re-refine on the combined bracket at half the spacing
                let (a, b) = ((*prev).min(r) - 1e-5, (*prev).max(r) + 1e-5);
                *prev = golden_sigma(m, f, a.max(1e-9), b)?;
            }
            _ => merged.push(r),
        }
    }
    let mut out = Vec::new();
    for s in merged {
        if s <= lo || s > hi {
            continue;
        }
        if let Some(rec) = record_at(m, f, s, tol_zero_rel)? {
            out.push(rec);
        }
    }
    Ok(out)
}

/// All conjugate pairs `(v, s)` with `s` in `(s_range.0, s_range.1]`, order
/// filled in, regularity not yet decided.
pub fn find_conjugate_pairs(
    m: &ManifoldModel,
    v: &FlowState,
    s_range: (f64, f64),
    step: f64,
    tol_zero_rel: f64,
) -> Result<Vec<ConjugateRecord>> {
    let cfg = ScanConfig::default();
    let f = jacobi_propagate_sampled(m, v, s_range.1 + 2.0 * cfg.sample_spacing, step, cfg.sample_spacing)?;
    pairs_in_frame(m, &f, s_range.0, s_range.1, tol_zero_rel)
}

/// Sum of the principal minors of size `p` (the degree-`p` elementary
/// symmetric polynomial of the eigenvalues).
pub fn elementary_symmetric(a: &DMatrix<f64>, p: usize) -> f64 {
    let n = a.nrows();
    if p == 0 {
        return 1.0;
    }
    if p > n {
        return 0.0;
    }
    let mut total = 0.0;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sub = DMatrix::from_fn(p, p, |i, j| a[(idx[i], idx[j])]);
        total += sub.determinant();
    }
    total
}

/// `d/ds` of the degree-`(n - k + 1)` elementary symmetric polynomial of the
/// eigenvalues of `d_F exp` at `s_star`.
pub fn transversality(m: &ManifoldModel, f: &JacobiFrame, s_star: f64, order: usize) -> Result<f64> {
    let n = m.dim();
    let p = n + 1 - order;
    let h = 1e-4;
    let ep = elementary_symmetric(&f.eval_at(m, s_star + h)?.dfexp(), p);
    let em = elementary_symmetric(&f.eval_at(m, s_star - h)?.dfexp(), p);
    Ok((ep - em) / (2.0 * h))
}

fn perturbed(m: &ManifoldModel, v: &FlowState, radius: f64, rng: &mut ChaCha8Rng) -> Result<FlowState> {
    let n = m.dim();
    let frame = m.orthonormal_frame(&v.x)?;
    let xi = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let w = TangentVec {
        base: v.x.clone(),
        comps: &frame * xi * (radius / (n as f64).sqrt()),
    };
    let y = crate::geodesic::exp_map(m, &w, radius.min(1e-3).max(1e-5))?;
    // same chart components, moved base, slightly rotated
    let y = if y.chart == v.x.chart { y } else { m.to_chart(&y, v.x.chart)? };
    let g = m.metric_at(&y)?;
    let mut comps = v.v.comps.clone();
    let dir = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let scale = (comps.transpose() * &g * &comps)[(0, 0)].sqrt();
    comps += dir * (radius * scale / (n as f64).sqrt());
    FlowState::at(m, &y, comps.as_slice())?.recentered(m)
}

/// Decide regularity (locally constant order and nonzero transversality)
/// and fill in the transversality value.
pub fn classify_pair(
    m: &ManifoldModel,
    rec: &ConjugateRecord,
    neighborhood_radius: f64,
    samples: usize,
    cfg: &ScanConfig,
) -> Result<ConjugateRecord> {
    let window = (0.25f64).min(0.5 * rec.s_star);
    let f = jacobi_propagate_sampled(m, &rec.v, rec.s_star + window + 2.0 * cfg.sample_spacing, cfg.step, cfg.sample_spacing)?;
    let trans = transversality(m, &f, rec.s_star, rec.order)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ rec.s_star.to_bits());
    let mut consistent = true;
    for _ in 0..samples {
        let w = perturbed(m, &rec.v, neighborhood_radius, &mut rng)?;
        let found = find_conjugate_pairs(
            m,
            &w,
            (rec.s_star - window, rec.s_star + window),
            cfg.step,
            cfg.tol_zero_rel,
        )?;
        let Some(near) = found
            .iter()
            .min_by(|a, b| (a.s_star - rec.s_star).abs().partial_cmp(&(b.s_star - rec.s_star).abs()).unwrap())
        else {
            return Err(GeoError::InsufficientResolution(format!(
                "no conjugate pair near s = {} after a perturbation of size {neighborhood_radius}",
                rec.s_star
            )));
        };
        if near.order != rec.order {
            consistent = false;
        }
    }
    let mut out = rec.clone();
    out.transversality = trans;
    out.regular = consistent && trans.abs() > cfg.tol_trans;
    Ok(out)
}

/// Scan output: classified records labelled by component.
#[derive(Clone, Debug)]
pub struct Atlas {
    pub base_grid: usize,
    pub dir_grid: usize,
    pub s_scan: f64,
    pub records: Vec<ConjugateRecord>,
}

/// Number of direction cells for a manifold of dimension `n`.
fn dir_cell_count(n: usize, dir_grid: usize) -> usize {
    dir_grid.pow((n - 1) as u32)
}

fn dir_index(n: usize, dir_grid: usize, flat: usize) -> Vec<usize> {
    let mut idx = vec![0; n - 1];
    let mut rem = flat;
    for slot in idx.iter_mut() {
        *slot = rem % dir_grid;
        rem /= dir_grid;
    }
    idx
}

/// Unit vector in frame coordinates for direction cell `idx`.
fn dir_frame_coords(n: usize, dir_grid: usize, idx: &[usize]) -> Vec<f64> {
    use std::f64::consts::PI;
    let az = |j: usize| 2.0 * PI * j as f64 / dir_grid as f64;
    match n {
        2 => {
            let b = az(idx[0]);
            vec![b.cos(), b.sin()]
        }
        _ => {
            let th = PI * (idx[0] as f64 + 0.5) / dir_grid as f64;
            let ph = az(idx[1]);
            vec![th.cos(), th.sin() * ph.cos(), th.sin() * ph.sin()]
        }
    }
}

/// Direction cell nearest to the unit vector with frame coordinates `c`.
fn dir_cell_of(n: usize, dir_grid: usize, c: &[f64]) -> Vec<usize> {
    use std::f64::consts::PI;
    let wrap = |ang: f64| -> usize {
        let k = (ang.rem_euclid(2.0 * PI) / (2.0 * PI) * dir_grid as f64).round() as i64;
        k.rem_euclid(dir_grid as i64) as usize
    };
    match n {
        2 => vec![wrap(c[1].atan2(c[0]))],
        _ => {
            let th = c[0].clamp(-1.0, 1.0).acos();
            let i = ((th / PI * dir_grid as f64 - 0.5).round().max(0.0) as usize).min(dir_grid - 1);
            vec![i, wrap(c[2].atan2(c[1]))]
        }
    }
}

/// Grid cell (base, direction) of an arbitrary unit vector.
pub fn cell_of(m: &ManifoldModel, v: &FlowState, base_grid: usize, dir_grid: usize) -> Result<GridCell> {
    let n = m.dim();
    let v0 = if v.x.chart == 0 {
        v.clone()
    } else {
        match v.to_chart(m, 0) {
            Ok(v0) => v0,
            // on the singular set of chart 0: use the cell of a vector a short way along the orbit
            Err(GeoError::ChartSwitchFailed(_)) => crate::geodesic::flow(m, v, 1e-4, 1e-4)?.to_chart(m, 0)?,
            Err(e) => return Err(e),
        }
    };
    let base = m.grid_cell(&v0.x, base_grid)?;
    let frame = m.orthonormal_frame(&v0.x)?;
    let g = m.metric_at(&v0.x)?;
    let c = frame.transpose() * g * &v0.v.comps;
    Ok(GridCell {
        base,
        dir: dir_cell_of(n, dir_grid, c.as_slice()),
    })
}

/// Unit vector at the centre of grid cell `cell`.
pub fn cell_vector(m: &ManifoldModel, cell: &GridCell, base_grid: usize, dir_grid: usize) -> Result<FlowState> {
    let n = m.dim();
    let x = ChartPoint::new(0, &m.grid_coords(&cell.base, base_grid));
    let frame = m.orthonormal_frame(&x)?;
    let c = DVector::from_vec(dir_frame_coords(n, dir_grid, &cell.dir));
    FlowState::at(m, &x, (frame * c).as_slice())?.recentered(m)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = i;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // lower index becomes the root so labels follow grid order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Neighbouring cells (one index changed by one, periodic where the grid wraps).
pub fn neighbor_cells(m: &ManifoldModel, cell: &GridCell, base_grid: usize, dir_grid: usize) -> Vec<GridCell> {
    let n = m.dim();
    let mut out = Vec::new();
    for i in 0..cell.base.len() {
        for delta in [-1i64, 1] {
            let k = cell.base[i] as i64 + delta;
            let k = if m.grid_periodic(i) {
                k.rem_euclid(base_grid as i64)
            } else if k < 0 || k >= base_grid as i64 {
                continue;
            } else {
                k
            };
            let mut c = cell.clone();
            c.base[i] = k as usize;
            if c != *cell && !out.contains(&c) {
                out.push(c);
            }
        }
    }
    for i in 0..cell.dir.len() {
        // polar direction angle (n = 3, i = 0) does not wrap
        let periodic = !(n == 3 && i == 0);
        for delta in [-1i64, 1] {
            let k = cell.dir[i] as i64 + delta;
            let k = if periodic {
                k.rem_euclid(dir_grid as i64)
            } else if k < 0 || k >= dir_grid as i64 {
                continue;
            } else {
                k
            };
            let mut c = cell.clone();
            c.dir[i] = k as usize;
            if c != *cell && !out.contains(&c) {
                out.push(c);
            }
        }
    }
    out
}

/// Scan a base x direction grid for conjugate pairs up to `s_scan`,
/// classify them and label grid-connected components (1-based ids, in
/// order of their lowest grid index).
pub fn conjugate_scan(m: &ManifoldModel, cfg: &ScanConfig) -> Result<Atlas> {
    let n = m.dim();
    if !(2..=3).contains(&n) {
        return Err(GeoError::BadParams(format!("scans support dimensions 2 and 3, got {n}")));
    }
    if cfg.base_grid < 4 || cfg.dir_grid < 4 {
        return Err(GeoError::BadParams("grid sizes must be at least 4".into()));
    }
    if !(cfg.s_scan > 0.0) {
        return Err(GeoError::BadParams(format!("s_scan must be positive, got {}", cfg.s_scan)));
    }
    let nb = cfg.base_grid.pow(n as u32);
    let nd = dir_cell_count(n, cfg.dir_grid);
    let cells: Vec<GridCell> = (0..nb * nd)
        .map(|flat| {
            let (b, d) = (flat / nd, flat % nd);
            let mut base = vec![0; n];
            let mut rem = b;
            for slot in base.iter_mut() {
                *slot = rem % cfg.base_grid;
                rem /= cfg.base_grid;
            }
            GridCell {
                base,
                dir: dir_index(n, cfg.dir_grid, d),
            }
        })
        .collect();
    let per_cell: Vec<Result<Vec<ConjugateRecord>>> = cells
        .par_iter()
        .map(|cell| {
            let v = cell_vector(m, cell, cfg.base_grid, cfg.dir_grid)?;
            let f = jacobi_propagate_sampled(m, &v, cfg.s_scan + 2.0 * cfg.sample_spacing, cfg.step, cfg.sample_spacing)?;
            let found = pairs_in_frame(m, &f, 0.0, cfg.s_scan, cfg.tol_zero_rel)?;
            found
                .into_iter()
                .map(|r| {
                    let mut c = classify_pair(m, &r, cfg.neighborhood_radius, cfg.classify_samples, cfg)?;
                    c.cell = Some(cell.clone());
                    Ok(c)
                })
                .collect()
        })
        .collect();
    let mut records = Vec::new();
    for r in per_cell {
        records.extend(r?);
    }
    label_components(m, &mut records, cfg.base_grid, cfg.dir_grid, cfg.link_tol);
    Ok(Atlas {
        base_grid: cfg.base_grid,
        dir_grid: cfg.dir_grid,
        s_scan: cfg.s_scan,
        records,
    })
}

/// Union-find over grid adjacency with matching order and `s_star` within
/// `link_tol`. Records must carry their cells and be in grid order.
pub fn label_components(m: &ManifoldModel, records: &mut [ConjugateRecord], base_grid: usize, dir_grid: usize, link_tol: f64) {
    let mut by_cell: BTreeMap<GridCell, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(c) = &r.cell {
            by_cell.entry(c.clone()).or_default().push(i);
        }
    }
    let mut uf = UnionFind((0..records.len()).collect());
    for (cell, idxs) in &by_cell {
        for nb in neighbor_cells(m, cell, base_grid, dir_grid) {
            let Some(others) = by_cell.get(&nb) else { continue };
            for &i in idxs {
                let best = others
                    .iter()
                    .filter(|&&j| records[j].order == records[i].order)
                    .min_by(|&&a, &&b| {
                        let da = (records[a].s_star - records[i].s_star).abs();
                        let db = (records[b].s_star - records[i].s_star).abs();
                        da.partial_cmp(&db).unwrap()
                    });
                if let Some(&j) = best {
                    if (records[j].s_star - records[i].s_star).abs() < link_tol {
                        uf.union(i, j);
                    }
                }
            }
        }
    }
    let mut labels: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..records.len() {
        let root = uf.find(i);
        let next = labels.len() + 1;
        let id = *labels.entry(root).or_insert(next);
        records[i].component_id = id;
    }
}

impl Atlas {
    pub fn component_count(&self) -> usize {
        self.records.iter().map(|r| r.component_id).max().unwrap_or(0)
    }

    pub fn has_singular(&self) -> bool {
        self.records.iter().any(|r| !r.regular)
    }

    /// CSV with one row per record. Comment lines carry the run id and the
    /// grid parameters needed to reload.
    pub fn write_csv<W: Write>(&self, m: &ManifoldModel, out: &mut W, run_id: &str) -> Result<()> {
        let n = m.dim();
        writeln!(out, "# run_id={run_id}")?;
        writeln!(
            out,
            "# base_grid={} dir_grid={} s_scan={:.16e}",
            self.base_grid, self.dir_grid, self.s_scan
        )?;
        let mut header = vec!["chart_id".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("v{i}")));
        header.extend(["s_star", "order", "regular", "transversality", "component_id"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.v.x.chart.to_string()];
            row.extend(r.v.x.coords.iter().map(|c| format!("{c:.16e}")));
            row.extend(r.v.v.comps.iter().map(|c| format!("{c:.16e}")));
            row.push(format!("{:.16e}", r.s_star));
            row.push(r.order.to_string());
            row.push(r.regular.to_string());
            row.push(format!("{:.16e}", r.transversality));
            row.push(r.component_id.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reload an atlas written by [`Atlas::write_csv`]. Kernel data is not
    /// stored; it is recomputed by re-propagating each record.
    pub fn read_csv<R: BufRead>(m: &ManifoldModel, input: R, cfg: &ScanConfig) -> Result<Atlas> {
        let n = m.dim();
        let bad = |msg: String| GeoError::Config(format!("atlas: {msg}"));
        let mut base_grid = None;
        let mut dir_grid = None;
        let mut s_scan = None;
        let mut records = Vec::new();
        let mut header_seen = false;
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        match k {
                            "base_grid" => base_grid = v.parse().ok(),
                            "dir_grid" => dir_grid = v.parse().ok(),
                            "s_scan" => s_scan = v.parse().ok(),
                            _ => {}
                        }
                    }
                }
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 2 * n + 6 {
                return Err(bad(format!("expected {} columns, got {}", 2 * n + 6, fields.len())));
            }
            let num = |s: &str| -> Result<f64> { s.trim().parse::<f64>().map_err(|e| bad(format!("{s}: {e}"))) };
            let chart: usize = fields[0].parse().map_err(|e| bad(format!("chart_id: {e}")))?;
            let x: Vec<f64> = fields[1..=n].iter().map(|s| num(s)).collect::<Result<_>>()?;
            let v: Vec<f64> = fields[n + 1..=2 * n].iter().map(|s| num(s)).collect::<Result<_>>()?;
            let s_star = num(fields[2 * n + 1])?;
            let order: usize = fields[2 * n + 2].parse().map_err(|e| bad(format!("order: {e}")))?;
            let regular: bool = fields[2 * n + 3].parse().map_err(|e| bad(format!("regular: {e}")))?;
            let transversality = num(fields[2 * n + 4])?;
            let component_id: usize = fields[2 * n + 5].parse().map_err(|e| bad(format!("component_id: {e}")))?;
            let state = FlowState::at(m, &ChartPoint::new(chart, &x), &v)?;
            let f = jacobi_propagate_sampled(m, &state, s_star + 2.0 * cfg.sample_spacing, cfg.step, cfg.sample_spacing)?;
            let mut rec = record_at(m, &f, s_star, cfg.tol_zero_rel)?
                .ok_or_else(|| GeoError::NotConjugate(format!("atlas row with s_star = {s_star} is not conjugate")))?;
            rec.order = order;
            rec.regular = regular;
            rec.transversality = transversality;
            rec.component_id = component_id;
            records.push(rec);
        }
        let base_grid = base_grid.ok_or_else(|| bad("missing base_grid".into()))?;
        let dir_grid = dir_grid.ok_or_else(|| bad("missing dir_grid".into()))?;
        let s_scan = s_scan.ok_or_else(|| bad("missing s_scan".into()))?;
        for r in records.iter_mut() {
            r.cell = Some(cell_of(m, &r.v, base_grid, dir_grid)?);
        }
        Ok(Atlas {
            base_grid,
            dir_grid,
            s_scan,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{catalog_build, ManifoldConfig};
    use std::f64::consts::PI;

    #[test]
    fn elementary_symmetric_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(elementary_symmetric(&a, 1), 6.0);
        assert_eq!(elementary_symmetric(&a, 2), 11.0);
        assert_eq!(elementary_symmetric(&a, 3), 6.0);
    }

    #[test]
    fn sphere_d_is_sine() {
        let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap();
        let v = FlowState::at(&m, &ChartPoint::new(0, &[1.0, 0.2]), &[0.3, 1.0]).unwrap();
        let f = jacobi_propagate(&m, &v, 4.0, 1e-3).unwrap();
        for js in f.samples() {
            assert!((js.d_normal()[(0, 0)] - js.s.sin()).abs() < 1e-7, "s = {}", js.s);
        }
    }

    #[test]
    fn sphere_pairs_at_multiples_of_pi() {
        let m = catalog_build(&ManifoldConfig::round_sphere(1.0, 2)).unwrap();
        let v = FlowState::at(&m, &ChartPoint::new(0, &[1.2, 0.5]), &[1.0, 0.4]).unwrap();
        let recs = find_conjugate_pairs(&m, &v, (0.0, 7.0), 1e-3, 1e-6).unwrap();
        assert_eq!(recs.len(), 2);
        assert!((recs[0].s_star - PI).abs() < 1e-6);
        assert!((recs[1].s_star - 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn neighbor_cells_wrap() {
        let m = catalog_build(&ManifoldConfig::flat_torus(&[1.0, 1.0])).unwrap();
        let c = GridCell {
            base: vec![0, 0],
            dir: vec![0],
        };
        let nb = neighbor_cells(&m, &c, 4, 4);
        assert_eq!(nb.len(), 6);
        assert!(nb.contains(&GridCell {
            base: vec![3, 0],
            dir: vec![0]
        }));
    }
}
