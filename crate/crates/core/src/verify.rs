//! DEM-quality checks that close the iterative loop: coastline-height spread
//! along observed waterlines, simulated-vs-observed flood-extent agreement,
//! and the deterministic correction rules that feed the next assimilation
//! round.

use crate::assimilate::{Constraint, ConstraintSet, ConstraintSource};
use crate::error::{DemError, Result};
use crate::features::{densify, rasterize_polyline, VectorFeature};
use crate::grid::{BoolGrid, ElevationGrid};
use crate::hydrosim::FlowState;

/// Binary flood-extent agreement counts. `csi = hits / (hits + misses +
/// false_alarms)`; for binary masks the Jaccard index is the same number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskComparison {
    pub hits: usize,
    pub misses: usize,
    pub false_alarms: usize,
    pub csi: f64,
    pub jaccard: f64,
}

/// Count agreement between a simulated and an observed wet mask.
/// Both masks must have identical dimensions.
pub fn compare_masks(simulated: &BoolGrid, observed: &BoolGrid) -> Result<MaskComparison> {
    if simulated.n_cols != observed.n_cols || simulated.n_rows != observed.n_rows {
        return Err(DemError::Params(format!(
            "mask dimensions differ: {}x{} vs {}x{}",
            simulated.n_cols, simulated.n_rows, observed.n_cols, observed.n_rows
        )));
    }
    let mut hits = 0usize;
    let mut misses = 0usize;
    let mut false_alarms = 0usize;
    for (s, o) in simulated.data.iter().zip(&observed.data) {
        match (s, o) {
            (true, true) => hits += 1,
            (false, true) => misses += 1,
            (true, false) => false_alarms += 1,
            (false, false) => {}
        }
    }
    let denom = hits + misses + false_alarms;
    let csi = if denom > 0 { hits as f64 / denom as f64 } else { 1.0 };
    Ok(MaskComparison { hits, misses, false_alarms, csi, jaccard: csi })
}

/// Height statistics sampled along one coastline.
#[derive(Debug, Clone)]
pub struct SpreadEntry {
    pub feature: usize,
    pub level: Option<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub stddev: f64,
    /// `max - min`, meters; 0 for a coastline lying on an exact grid isoline.
    pub spread: f64,
    /// Grid cells the coastline crosses, for re-assimilation marking.
    pub cells: Vec<(usize, usize)>,
}

/// Sample grid heights along a densified coastline (spacing <= dx/2) and
/// report the spread statistics. Errors if a vertex leaves the grid extent or
/// sampling hits nodata.
pub fn coastline_spread(
    grid: &ElevationGrid,
    coastline: &VectorFeature,
    feature_id: usize,
) -> Result<SpreadEntry> {
    let xy = coastline.xy();
    if xy.is_empty() {
        return Err(DemError::Feature("coastline has no vertices".into()));
    }
    for &(x, y) in &xy {
        if !grid.contains_xy(x, y) {
            return Err(DemError::OutOfExtent { x, y });
        }
    }
    let pts = densify(&xy, grid.dx / 2.0);
    let mut heights = Vec::with_capacity(pts.len());
    for &(x, y) in &pts {
        heights.push(grid.sample_bilinear(x, y)?);
    }
    let n = heights.len() as f64;
    let min = heights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = heights.iter().sum::<f64>() / n;
    let var = heights.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / n;
    let cells = if xy.len() >= 2 {
        rasterize_polyline(grid, &xy)?
    } else {
        grid.nearest_node(xy[0].0, xy[0].1).into_iter().collect()
    };
    Ok(SpreadEntry {
        feature: feature_id,
        level: coastline.level,
        min,
        max,
        mean,
        stddev: var.sqrt(),
        spread: max - min,
        cells,
    })
}

/// Deterministic DEM corrections from one verification round:
///
/// 1. a cell observed wet but simulated dry, adjacent (4-neighborhood) to
///    simulated water, is lowered to the neighboring free surface minus
///    `h_dry` (never raised);
/// 2. coastline cells whose spread exceeds `spread_tol` are pinned at the
///    coastline's water-level mark.
///
/// A scene where simulation already matches observation yields an empty set.
pub fn propose_corrections(
    bed: &ElevationGrid,
    state: &FlowState,
    h_dry: f64,
    wet_threshold: f64,
    observed: &BoolGrid,
    spreads: &[SpreadEntry],
    spread_tol: f64,
) -> Result<ConstraintSet> {
    if observed.n_cols != bed.n_cols || observed.n_rows != bed.n_rows {
        return Err(DemError::Params("observed mask does not match the grid".into()));
    }
    if state.n_cols != bed.n_cols || state.n_rows != bed.n_rows {
        return Err(DemError::Params("flow state does not match the grid".into()));
    }
    let simulated = crate::hydrosim::wet_mask(state, wet_threshold);
    let mut set = ConstraintSet::new();
    for row in 0..bed.n_rows {
        for col in 0..bed.n_cols {
            if !observed.get(col, row) || simulated.get(col, row) || bed.is_nodata(col, row) {
                continue;
            }
            // free surface of the wettest adjacent simulated cell
            let mut surface: Option<f64> = None;
            let mut consider = |c: usize, r: usize| {
                if simulated.get(c, r) && !bed.is_nodata(c, r) {
                    let s = bed.get(c, r) + state.depth(c, r);
                    surface = Some(surface.map_or(s, |cur: f64| cur.max(s)));
                }
            };
            if col > 0 {
                consider(col - 1, row);
            }
            if col + 1 < bed.n_cols {
                consider(col + 1, row);
            }
            if row > 0 {
                consider(col, row - 1);
            }
            if row + 1 < bed.n_rows {
                consider(col, row + 1);
            }
            if let Some(surface) = surface {
                let target = surface - h_dry;
                if target < bed.get(col, row) {
                    set.push(Constraint {
                        col,
                        row,
                        value: target,
                        source: ConstraintSource::Correction,
                        timestamp: None,
                    });
                }
            }
        }
    }
    for entry in spreads {
        if entry.spread > spread_tol {
            if let Some(level) = entry.level {
                for &(col, row) in &entry.cells {
                    set.push(Constraint {
                        col,
                        row,
                        value: level,
                        source: ConstraintSource::Coastline,
                        timestamp: None,
                    });
                }
            }
        }
    }
    Ok(set)
}
