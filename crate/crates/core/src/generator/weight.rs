//! Weights on the unit sphere bundle times flow time, and the partition
//! of unity that separates flow averages near conjugate components from
//! the rest.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::conjugacy::{cell_of, neighbor_cells, Atlas, GridCell};
use crate::error::{GeoError, Result};
use crate::geodesic::FlowState;
use crate::manifold::ManifoldModel;

use super::smooth_step;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WeightKind {
    One,
    Zero,
    /// away from every scanned component
    Background,
    /// near the component `id` (order `order`) of the atlas
    Component { order: usize, id: usize },
    /// flow times beyond the scanned range
    Unscanned,
}

#[derive(Debug)]
struct Partition {
    base_grid: usize,
    dir_grid: usize,
    /// `None` when no conjugate pairs exist at any length (flat metrics)
    s_scan: Option<f64>,
    margin: f64,
    by_cell: BTreeMap<GridCell, Vec<(usize, f64)>>,
}

/// A weight `psi(v, s)` with values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Weight {
    pub kind: WeightKind,
    partition: Option<Arc<Partition>>,
}

/// `1` for `d <= margin / 2`, `0` for `d >= margin`, smooth in between.
fn plateau(d: f64, margin: f64) -> f64 {
    1.0 - smooth_step((d - 0.5 * margin) / (0.5 * margin))
}

impl Weight {
    pub fn one() -> Self {
        Self {
            kind: WeightKind::One,
            partition: None,
        }
    }

    pub fn zero() -> Self {
        Self {
            kind: WeightKind::Zero,
            partition: None,
        }
    }

    /// Short label for tables: `one`, `background`, `component_1`, ...
    pub fn label(&self) -> String {
        match &self.kind {
            WeightKind::One => "one".into(),
            WeightKind::Zero => "zero".into(),
            WeightKind::Background => "background".into(),
            WeightKind::Component { id, .. } => format!("component_{id}"),
            WeightKind::Unscanned => "unscanned".into(),
        }
    }

    pub fn value(&self, m: &ManifoldModel, v: &FlowState, s: f64) -> Result<f64> {
        Ok(self.profile(m, v, &[s])?[0])
    }

    /// Values at the flow times `s` along the orbit of `v`.
    pub fn profile(&self, m: &ManifoldModel, v: &FlowState, s: &[f64]) -> Result<Vec<f64>> {
        let p = match (&self.kind, &self.partition) {
            (WeightKind::One, _) => return Ok(vec![1.0; s.len()]),
            (WeightKind::Zero, _) => return Ok(vec![0.0; s.len()]),
            (_, Some(p)) => p,
            (_, None) => return Err(GeoError::BadParams("partition weight without a partition".into())),
        };
        let cell = cell_of(m, v, p.base_grid, p.dir_grid)?;
        let mut near: Vec<(usize, f64)> = Vec::new();
        for c in std::iter::once(cell.clone()).chain(neighbor_cells(m, &cell, p.base_grid, p.dir_grid)) {
            if let Some(r) = p.by_cell.get(&c) {
                near.extend(r.iter().copied());
            }
        }
        let mut ids: Vec<usize> = near.iter().map(|r| r.0).collect();
        ids.sort_unstable();
        ids.dedup();
        let mut raw = vec![0.0; ids.len()];
        Ok(s.iter()
            .map(|&t| {
                for (slot, id) in raw.iter_mut().zip(&ids) {
                    *slot = near
                        .iter()
                        .filter(|r| r.0 == *id)
                        .map(|r| plateau((t - r.1).abs(), p.margin))
                        .fold(0.0, f64::max);
                }
                let unscanned = match p.s_scan {
                    Some(s_scan) => smooth_step((t - s_scan) / p.margin),
                    None => 0.0,
                };
                let background = raw.iter().map(|b| 1.0 - b).product::<f64>() * (1.0 - unscanned);
                let total: f64 = raw.iter().sum::<f64>() + unscanned + background;
                let mine = match &self.kind {
                    WeightKind::Background => background,
                    WeightKind::Unscanned => unscanned,
                    WeightKind::Component { id, .. } => {
                        ids.iter().position(|i| i == id).map(|k| raw[k]).unwrap_or(0.0)
                    }
                    _ => unreachable!(),
                };
                mine / total
            })
            .collect())
    }
}

/// Partition of unity subordinate to the atlas components: one background
/// weight, one weight per component (equal to 1 within `margin / 2` of the
/// component's conjugate times in neighbouring grid cells) and, unless the
/// metric is flat, one weight for flow times beyond the scanned range.
pub fn partition_builder(m: &ManifoldModel, atlas: &Atlas, margin: f64) -> Result<Vec<Weight>> {
    if !(margin > 0.0) {
        return Err(GeoError::BadParams(format!("margin must be positive, got {margin}")));
    }
    if let Some(r) = atlas.records.iter().find(|r| !r.regular) {
        return Err(GeoError::SingularPairPresent(r.s_star));
    }
    let mut by_cell: BTreeMap<GridCell, Vec<(usize, f64)>> = BTreeMap::new();
    let mut comps: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &atlas.records {
        let cell = r
            .cell
            .clone()
            .ok_or_else(|| GeoError::BadParams("atlas record without a grid cell".into()))?;
        by_cell.entry(cell).or_default().push((r.component_id, r.s_star));
        comps.insert(r.component_id, r.order);
    }
    for cell in by_cell.keys() {
        let mut near: Vec<(usize, f64)> = by_cell[cell].clone();
        for nb in neighbor_cells(m, cell, atlas.base_grid, atlas.dir_grid) {
            if let Some(r) = by_cell.get(&nb) {
                near.extend(r.iter().copied());
            }
        }
        for a in &by_cell[cell] {
            for b in &near {
                if a.0 != b.0 && (a.1 - b.1).abs() <= 2.0 * margin {
                    return Err(GeoError::ComponentsTooClose(format!(
                        "components {} and {} at s = {} and {}",
                        a.0, b.0, a.1, b.1
                    )));
                }
            }
        }
    }
    let flat = m.curvature_bound() == 0.0;
    let p = Arc::new(Partition {
        base_grid: atlas.base_grid,
        dir_grid: atlas.dir_grid,
        s_scan: if flat { None } else { Some(atlas.s_scan) },
        margin,
        by_cell,
    });
    let mk = |kind| Weight {
        kind,
        partition: Some(p.clone()),
    };
    let mut out = vec![mk(WeightKind::Background)];
    for (&id, &order) in &comps {
        out.push(mk(WeightKind::Component { order, id }));
    }
    if !flat {
        out.push(mk(WeightKind::Unscanned));
    }
    Ok(out)
}
