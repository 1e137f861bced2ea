//! Refinement of a coarse base raster to a smaller step using directional
//! weighted-average interpolation.
//!
//! For each fine node the surrounding source nodes within `search_radius` are
//! binned into `n_directions` equal azimuth sectors; each sector contributes
//! its nearest node, weighted by inverse distance to the `idw_power`. Sectors
//! are consumed in antipodal pairs: a contributor whose opposite sector is
//! empty is dropped, which keeps the gather centrally balanced and removes the
//! systematic pull that one-sided coverage would otherwise cause near the grid
//! edge (for power 1 an opposite pair cancels a plane's gradient exactly). If
//! no antipodal pair exists at all, the unbalanced gather is used as a
//! fallback. A fine node coincident with a source node copies it directly.

use crate::error::{DemError, Result};
use crate::grid::ElevationGrid;

#[derive(Debug, Clone, Copy)]
pub struct ResampleParams {
    /// Step of the refined grid; must not exceed the source step.
    pub target_dx: f64,
    /// Number of azimuth sectors; at least 4 and divisible by 4.
    pub n_directions: usize,
    /// Gather radius in meters; defaults to 3x the source step.
    pub search_radius: Option<f64>,
    /// Inverse-distance exponent.
    pub idw_power: f64,
}

impl ResampleParams {
    pub fn new(target_dx: f64) -> Self {
        ResampleParams {
            target_dx,
            n_directions: 16,
            search_radius: None,
            idw_power: 1.0,
        }
    }

    fn validate(&self, source_dx: f64) -> Result<f64> {
        if !(self.target_dx > 0.0) {
            return Err(DemError::Params(format!("target dx must be > 0, got {}", self.target_dx)));
        }
        if self.target_dx > source_dx * (1.0 + 1e-12) {
            return Err(DemError::Params(format!(
                "target dx {} exceeds source dx {}",
                self.target_dx, source_dx
            )));
        }
        if self.n_directions < 4 || self.n_directions % 4 != 0 {
            return Err(DemError::Params(format!(
                "n_directions must be >= 4 and divisible by 4, got {}",
                self.n_directions
            )));
        }
        let radius = self.search_radius.unwrap_or(3.0 * source_dx);
        if radius < source_dx {
            return Err(DemError::Params(format!(
                "search radius {radius} is below the source step {source_dx}"
            )));
        }
        Ok(radius)
    }
}

#[derive(Debug)]
pub struct RefineOutcome {
    pub grid: ElevationGrid,
    /// Fine nodes with no contributor in range, left as nodata.
    pub unfilled: usize,
}

/// Refine `source` to `params.target_dx` over the same extent.
pub fn refine(source: &ElevationGrid, params: &ResampleParams) -> Result<RefineOutcome> {
    source.validate()?;
    let radius = params.validate(source.dx)?;
    if source.min_max().is_none() {
        return Err(DemError::Grid("source grid has no valid nodes".into()));
    }

    let ext_x = (source.n_cols - 1) as f64 * source.dx;
    let ext_y = (source.n_rows - 1) as f64 * source.dx;
    let out_cols = (ext_x / params.target_dx + 1e-9).floor() as usize + 1;
    let out_rows = (ext_y / params.target_dx + 1e-9).floor() as usize + 1;

    let mut out = ElevationGrid {
        n_cols: out_cols,
        n_rows: out_rows,
        x0: source.x0,
        y0: source.y0,
        dx: params.target_dx,
        nodata: source.nodata,
        values: vec![source.nodata; out_cols * out_rows],
    };

    let n_dirs = params.n_directions;
    let half = n_dirs / 2;
    let sector_width = std::f64::consts::TAU / n_dirs as f64;
    let window = (radius / source.dx).ceil() as isize;
    let mut best_d = vec![f64::INFINITY; n_dirs];
    let mut best_v = vec![0.0f64; n_dirs];

    let mut unfilled = 0usize;
    for row in 0..out_rows {
        for col in 0..out_cols {
            let (x, y) = {
                let x = out.x0 + col as f64 * params.target_dx;
                let y = out.y0 + (out_rows - 1 - row) as f64 * params.target_dx;
                (x, y)
            };
            // fractional source-node coordinates (south-up)
            let u = (x - source.x0) / source.dx;
            let w = (y - source.y0) / source.dx;
            let iu = u.round();
            let iw = w.round();
            if (u - iu).abs() * source.dx < 1e-9 && (w - iw).abs() * source.dx < 1e-9 {
                let sc = iu as usize;
                let sr = source.n_rows - 1 - iw as usize;
                let v = source.get(sc, sr);
                if v != source.nodata {
                    out.set(col, row, v);
                    continue;
                }
                // coincident but void: fall through to the gather
            }

            best_d.iter_mut().for_each(|d| *d = f64::INFINITY);
            let c_lo = ((u.floor() as isize) - window).max(0);
            let c_hi = ((u.ceil() as isize) + window).min(source.n_cols as isize - 1);
            let r_lo = ((w.floor() as isize) - window).max(0);
            let r_hi = ((w.ceil() as isize) + window).min(source.n_rows as isize - 1);
            let mut zero_dist_value = None;
            for sj in r_lo..=r_hi {
                for si in c_lo..=c_hi {
                    let v = source.get(si as usize, source.n_rows - 1 - sj as usize);
                    if v == source.nodata {
                        continue;
                    }
                    let ddx = (si as f64 - u) * source.dx;
                    let ddy = (sj as f64 - w) * source.dx;
                    let d = (ddx * ddx + ddy * ddy).sqrt();
                    if d > radius {
                        continue;
                    }
                    if d < 1e-9 {
                        zero_dist_value = Some(v);
                        continue;
                    }
                    let theta = ddy.atan2(ddx).rem_euclid(std::f64::consts::TAU);
                    let sector = ((theta / sector_width + 0.5).floor() as usize) % n_dirs;
                    // ties on distance: first node in scan order wins
                    if d < best_d[sector] - 1e-12 {
                        best_d[sector] = d;
                        best_v[sector] = v;
                    }
                }
            }
            if let Some(v) = zero_dist_value {
                out.set(col, row, v);
                continue;
            }
            let has_pair: Vec<bool> = (0..n_dirs)
                .map(|k| best_d[k].is_finite() && best_d[(k + half) % n_dirs].is_finite())
                .collect();
            let balanced = has_pair.iter().any(|&p| p);
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..n_dirs {
                if !best_d[k].is_finite() {
                    continue;
                }
                if balanced && !has_pair[k] {
                    continue;
                }
                let wgt = best_d[k].powf(-params.idw_power);
                num += wgt * best_v[k];
                den += wgt;
            }
            if den > 0.0 {
                out.set(col, row, num / den);
            } else {
                unfilled += 1;
            }
        }
    }
    Ok(RefineOutcome { grid: out, unfilled })
}
