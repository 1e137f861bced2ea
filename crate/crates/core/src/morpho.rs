//! Morphostructural analysis: tilt angle and the two curvature fields, plus
//! the two artifact detectors (height spikes, channel connectivity breaks).
//!
//! With `p = bx^2 + by^2` and `q = 1 + p`, the fields are
//!
//! ```text
//! s   = (360 / 2pi) * atan(sqrt(p))                      [degrees]
//! k_t = (bxx*by^2 - 2*bxy*bx*by + byy*bx^2) / (p*sqrt(q))
//! k_s = (bxx*by^2 + 2*bxy*bx*by + byy*bx^2) / (p*sqrt(q^3))
//! ```
//!
//! On flat cells (`p < 1e-12`) both curvatures are defined as 0.

use crate::error::{DemError, Result};
use crate::features::{rasterize_polyline, VectorFeature};
use crate::grid::ElevationGrid;

pub const FLAT_CELL_P: f64 = 1e-12;

/// Slope (degrees), profile curvature and tangential curvature (1/m).
#[derive(Debug, Clone)]
pub struct MorphoFields {
    pub slope_deg: ElevationGrid,
    pub profile_curv: ElevationGrid,
    pub tangential_curv: ElevationGrid,
}

/// Evaluate the three morphometric fields from the grid's derivative stencils.
/// Nodata propagates from the derivative windows.
pub fn morpho_fields(grid: &ElevationGrid) -> Result<MorphoFields> {
    let d = grid.derivatives()?;
    let template = ElevationGrid {
        values: vec![grid.nodata; grid.n_cols * grid.n_rows],
        ..grid.clone()
    };
    let mut slope = template.clone();
    let mut kt = template.clone();
    let mut ks = template;
    let deg = 360.0 / std::f64::consts::TAU;
    for i in 0..grid.values.len() {
        let bx = d.ddx.values[i];
        let by = d.ddy.values[i];
        let bxx = d.dxx.values[i];
        let byy = d.dyy.values[i];
        let bxy = d.dxy.values[i];
        if [bx, by, bxx, byy, bxy].iter().any(|&v| v == grid.nodata) {
            continue;
        }
        let p = bx * bx + by * by;
        let q = 1.0 + p;
        slope.values[i] = deg * p.sqrt().atan();
        if p < FLAT_CELL_P {
            kt.values[i] = 0.0;
            ks.values[i] = 0.0;
        } else {
            kt.values[i] = (bxx * by * by - 2.0 * bxy * bx * by + byy * bx * bx) / (p * q.sqrt());
            ks.values[i] =
                (bxx * by * by + 2.0 * bxy * bx * by + byy * bx * bx) / (p * (q * q * q).sqrt());
        }
    }
    Ok(MorphoFields {
        slope_deg: slope,
        profile_curv: kt,
        tangential_curv: ks,
    })
}

/// A node standing out from its 8-neighborhood median by more than the
/// detection threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub col: usize,
    pub row: usize,
    /// Signed height difference from the neighborhood median, meters.
    pub magnitude: f64,
}

/// Flag interior nodes whose height differs from the median of their
/// 8-neighborhood by more than `threshold`. The median is robust against a
/// neighboring spike, which matters because raster artifacts over forest and
/// water patches come in clusters. Border nodes lack a full 8-neighborhood
/// (a one-sided median is biased even on a smooth plane) and are not judged.
pub fn detect_spikes(grid: &ElevationGrid, threshold: f64) -> Result<Vec<Spike>> {
    grid.validate()?;
    if !(threshold > 0.0) {
        return Err(DemError::Params(format!("spike threshold must be > 0, got {threshold}")));
    }
    let mut out = Vec::new();
    let mut neigh = Vec::with_capacity(8);
    for row in 1..grid.n_rows.saturating_sub(1) {
        for col in 1..grid.n_cols.saturating_sub(1) {
            if grid.is_nodata(col, row) {
                continue;
            }
            neigh.clear();
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let v = grid.get((col as i64 + dc) as usize, (row as i64 + dr) as usize);
                    if v != grid.nodata {
                        neigh.push(v);
                    }
                }
            }
            if neigh.is_empty() {
                continue;
            }
            neigh.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = neigh.len();
            let median = if m % 2 == 1 {
                neigh[m / 2]
            } else {
                0.5 * (neigh[m / 2 - 1] + neigh[m / 2])
            };
            let diff = grid.get(col, row) - median;
            if diff.abs() > threshold {
                out.push(Spike { col, row, magnitude: diff });
            }
        }
    }
    Ok(out)
}

/// A maximal run of channel cells whose bed blocks flow at the given stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BrokenLink {
    /// Index range of the blocked run along the rasterized path (inclusive).
    pub path_start: usize,
    pub path_end: usize,
    /// Path index of the highest sill cell of the run.
    pub sill_index: usize,
    pub sill_col: usize,
    pub sill_row: usize,
    pub sill_height: f64,
}

/// Findings of the two artifact detectors.
#[derive(Debug, Clone, Default)]
pub struct ArtifactReport {
    pub spikes: Vec<Spike>,
    pub broken_links: Vec<BrokenLink>,
}

/// Walk a channel path and report every maximal run of cells with bed height
/// above `stage`. Nodata cells count as blocking.
pub fn check_connectivity(
    grid: &ElevationGrid,
    channel_path: &VectorFeature,
    stage: f64,
) -> Result<Vec<BrokenLink>> {
    let xy = channel_path.xy();
    if xy.is_empty() {
        return Err(DemError::Feature("empty channel path".into()));
    }
    let cells = rasterize_polyline(grid, &xy)?;
    if cells.is_empty() {
        return Err(DemError::Feature("channel path touches no grid cells".into()));
    }
    let blocking = |col: usize, row: usize| -> bool {
        grid.is_nodata(col, row) || grid.get(col, row) > stage
    };
    let mut out = Vec::new();
    let mut k = 0;
    while k < cells.len() {
        if !blocking(cells[k].0, cells[k].1) {
            k += 1;
            continue;
        }
        let start = k;
        let mut sill = k;
        let mut sill_h = f64::NEG_INFINITY;
        while k < cells.len() && blocking(cells[k].0, cells[k].1) {
            let (c, r) = cells[k];
            if !grid.is_nodata(c, r) && grid.get(c, r) > sill_h {
                sill_h = grid.get(c, r);
                sill = k;
            }
            k += 1;
        }
        let (sc, sr) = cells[sill];
        out.push(BrokenLink {
            path_start: start,
            path_end: k - 1,
            sill_index: sill,
            sill_col: sc,
            sill_row: sr,
            sill_height: if sill_h.is_finite() { sill_h } else { grid.nodata },
        });
    }
    Ok(out)
}
