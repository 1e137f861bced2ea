//! Sparse-source assimilation: turning soundings, depth curves, coastlines
//! and channel geometry into fixed-height constraints, and relaxing the grid
//! around them with an explicit diffusion iteration.
//!
//! The solver sweeps a Jacobi 5-point update
//! `b <- b + alpha * (laplacian of b)` on unconstrained nodes while
//! constrained nodes stay pinned at their target heights; the converged field
//! satisfies the discrete Laplace equation away from the constraint set.
//! Grid edges are reflective (a missing neighbor mirrors the edge node), and
//! nodata cells do not participate.

use std::collections::HashMap;
use std::fmt;

use crate::error::{DemError, Result};
use crate::features::{project_to_polyline, rasterize_polyline, VectorFeature};
use crate::grid::ElevationGrid;

/// Provenance of a fixed-height constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSource {
    Sounding,
    DepthCurve,
    Coastline,
    Channel,
    GeodeticProfile,
    /// Cell pinned to its current value to delimit the relaxation region.
    Anchor,
    /// Synthetic constraint produced by the verification loop.
    Correction,
}

impl fmt::Display for ConstraintSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintSource::Sounding => "sounding",
            ConstraintSource::DepthCurve => "depth_curve",
            ConstraintSource::Coastline => "coastline",
            ConstraintSource::Channel => "channel",
            ConstraintSource::GeodeticProfile => "geodetic_profile",
            ConstraintSource::Anchor => "anchor",
            ConstraintSource::Correction => "correction",
        };
        f.write_str(s)
    }
}

/// A node pinned to a target height during relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub col: usize,
    pub row: usize,
    pub value: f64,
    pub source: ConstraintSource,
    pub timestamp: Option<String>,
}

/// Ordered collection of constraints. Several constraints may target the same
/// cell; when pinning, the spec's precedence rule applies — the later entry
/// wins — and disagreements beyond `conflict_tolerance` are surfaced through
/// [`check_constraint_consistency`].
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
    pub conflict_tolerance: f64,
}

pub const DEFAULT_CONFLICT_TOLERANCE: f64 = 0.05;

impl Default for ConstraintSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ConstraintSet {
    pub fn new() -> Self {
        ConstraintSet {
            constraints: Vec::new(),
            conflict_tolerance: DEFAULT_CONFLICT_TOLERANCE,
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn push(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Append another set, keeping insertion order (later entries win ties).
    pub fn append(&mut self, mut other: ConstraintSet) {
        self.constraints.append(&mut other.constraints);
    }

    /// Per-cell pinned value under the later-wins precedence rule.
    /// Fails on out-of-range indices or non-finite values.
    pub fn pin_map(&self, grid: &ElevationGrid) -> Result<HashMap<(usize, usize), f64>> {
        let mut map = HashMap::with_capacity(self.constraints.len());
        for c in &self.constraints {
            if c.col >= grid.n_cols || c.row >= grid.n_rows {
                return Err(DemError::Params(format!(
                    "constraint cell ({}, {}) outside {}x{} grid",
                    c.col, c.row, grid.n_cols, grid.n_rows
                )));
            }
            if !c.value.is_finite() {
                return Err(DemError::Params(format!(
                    "constraint at ({}, {}) has non-finite value",
                    c.col, c.row
                )));
            }
            map.insert((c.col, c.row), c.value);
        }
        Ok(map)
    }
}

/// One cell where constraints disagree beyond the tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CellConflict {
    pub col: usize,
    pub row: usize,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ConflictReport {
    pub entries: Vec<CellConflict>,
}

impl ConflictReport {
    pub fn is_consistent(&self) -> bool {
        self.entries.is_empty()
    }
}

/// List all cells carrying multiple constraints whose spread exceeds the
/// set's conflict tolerance. An empty report means the set is consistent.
pub fn check_constraint_consistency(set: &ConstraintSet) -> ConflictReport {
    let mut per_cell: HashMap<(usize, usize), (usize, f64, f64)> = HashMap::new();
    for c in &set.constraints {
        per_cell
            .entry((c.col, c.row))
            .and_modify(|(n, lo, hi)| {
                *n += 1;
                *lo = lo.min(c.value);
                *hi = hi.max(c.value);
            })
            .or_insert((1, c.value, c.value));
    }
    let mut entries: Vec<CellConflict> = per_cell
        .into_iter()
        .filter(|&(_, (n, lo, hi))| n > 1 && hi - lo > set.conflict_tolerance)
        .map(|((col, row), (count, min, max))| CellConflict {
            col,
            row,
            count,
            min,
            max,
            spread: max - min,
        })
        .collect();
    entries.sort_by_key(|e| (e.row, e.col));
    ConflictReport { entries }
}

/// Trapezoidal channel cross-section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSection {
    pub bed_width: f64,
    pub top_width: f64,
    pub depth_below_bank: f64,
}

impl ChannelSection {
    pub fn validate(&self) -> Result<()> {
        if !(self.bed_width > 0.0) || self.top_width < self.bed_width {
            return Err(DemError::Params(format!(
                "channel section needs top_width >= bed_width > 0, got bed {} top {}",
                self.bed_width, self.top_width
            )));
        }
        if !(self.depth_below_bank > 0.0) {
            return Err(DemError::Params(format!(
                "channel depth_below_bank must be > 0, got {}",
                self.depth_below_bank
            )));
        }
        Ok(())
    }
}

/// Point snapping outcome: the constraints plus points that fell outside the
/// grid extent.
#[derive(Debug, Clone)]
pub struct PointIngest {
    pub set: ConstraintSet,
    pub rejected: Vec<(f64, f64, f64)>,
}

/// Snap `(x, y, height)` samples to their nearest nodes. Same-node duplicates
/// within the conflict tolerance are averaged into one constraint; wider
/// disagreements are kept as separate entries so consistency checking can
/// surface them. Points outside the extent are rejected with a report entry.
pub fn constraints_from_points(points: &[(f64, f64, f64)], grid: &ElevationGrid) -> PointIngest {
    let mut set = ConstraintSet::new();
    let mut rejected = Vec::new();
    // bucket values per node, keeping first-occurrence order
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut buckets: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for &(x, y, z) in points {
        match grid.nearest_node(x, y) {
            Some(cell) => {
                let bucket = buckets.entry(cell).or_insert_with(|| {
                    order.push(cell);
                    Vec::new()
                });
                bucket.push(z);
            }
            None => rejected.push((x, y, z)),
        }
    }
    for cell in order {
        let values = &buckets[&cell];
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= set.conflict_tolerance {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            set.push(Constraint {
                col: cell.0,
                row: cell.1,
                value: mean,
                source: ConstraintSource::Sounding,
                timestamp: None,
            });
        } else {
            for &v in values {
                set.push(Constraint {
                    col: cell.0,
                    row: cell.1,
                    value: v,
                    source: ConstraintSource::Sounding,
                    timestamp: None,
                });
            }
        }
    }
    PointIngest { set, rejected }
}

/// Rasterize a water-level isoline: every crossed node receives a constraint
/// at the level mark.
pub fn constraints_from_isoline(line: &VectorFeature, grid: &ElevationGrid) -> Result<ConstraintSet> {
    let level = line
        .level
        .ok_or_else(|| DemError::Feature("isoline is missing its water-level mark".into()))?;
    if !level.is_finite() {
        return Err(DemError::Feature(format!("isoline level {level} is not finite")));
    }
    if line.vertices.len() < 2 {
        return Err(DemError::Feature("isoline needs at least 2 vertices".into()));
    }
    let cells = rasterize_polyline(grid, &line.xy())?;
    let mut set = ConstraintSet::new();
    let mut seen = std::collections::HashSet::new();
    for (col, row) in cells {
        if seen.insert((col, row)) {
            set.push(Constraint {
                col,
                row,
                value: level,
                source: ConstraintSource::Coastline,
                timestamp: line.timestamp.clone(),
            });
        }
    }
    Ok(set)
}

/// Rasterize a depth curve: constraint value is the bed elevation
/// `water_surface - depth`.
pub fn constraints_from_depth_curve(
    curve: &VectorFeature,
    water_surface: f64,
    grid: &ElevationGrid,
) -> Result<ConstraintSet> {
    let depth = curve
        .depth
        .ok_or_else(|| DemError::Feature("depth curve is missing its depth attribute".into()))?;
    if !(depth > 0.0) {
        return Err(DemError::Feature(format!("depth must be positive, got {depth}")));
    }
    let cells = rasterize_polyline(grid, &curve.xy())?;
    let mut set = ConstraintSet::new();
    let mut seen = std::collections::HashSet::new();
    for (col, row) in cells {
        if seen.insert((col, row)) {
            set.push(Constraint {
                col,
                row,
                value: water_surface - depth,
                source: ConstraintSource::DepthCurve,
                timestamp: curve.timestamp.clone(),
            });
        }
    }
    Ok(set)
}

/// Emit trapezoidal cross-section constraints along a channel centerline.
///
/// For each node within `top_width/2` of the centerline, the bank elevation is
/// the pre-burn grid value at the node nearest the channel edge on that node's
/// side; bed cells (within `bed_width/2`) sit `depth_below_bank` below it and
/// the profile rises linearly back to the bank at `top_width/2`.
pub fn burn_channel(
    grid: &ElevationGrid,
    centerline: &VectorFeature,
    section: &ChannelSection,
) -> Result<ConstraintSet> {
    section.validate()?;
    let xy = centerline.xy();
    if xy.len() < 2 {
        return Err(DemError::Feature("channel centerline needs at least 2 vertices".into()));
    }
    for &(x, y) in &xy {
        if !grid.contains_xy(x, y) {
            return Err(DemError::OutOfExtent { x, y });
        }
    }
    let half_top = section.top_width / 2.0;
    let half_bed = section.bed_width / 2.0;
    let (xmin, ymin, xmax, ymax) = {
        let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
        (
            xs.iter().cloned().fold(f64::INFINITY, f64::min) - half_top,
            ys.iter().cloned().fold(f64::INFINITY, f64::min) - half_top,
            xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + half_top,
            ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + half_top,
        )
    };
    let col_lo = (((xmin - grid.x0) / grid.dx).floor().max(0.0)) as usize;
    let col_hi = ((((xmax - grid.x0) / grid.dx).ceil()) as usize).min(grid.n_cols - 1);
    let row_for_y = |y: f64| -> f64 { (y - grid.y0) / grid.dx };
    let j_lo = (row_for_y(ymin).floor().max(0.0)) as usize;
    let j_hi = ((row_for_y(ymax).ceil()) as usize).min(grid.n_rows - 1);

    let mut set = ConstraintSet::new();
    for j in (j_lo..=j_hi).rev() {
        let row = grid.n_rows - 1 - j;
        for col in col_lo..=col_hi {
            let p = grid.node_xy(col, row);
            let Some((dist, closest, seg)) = project_to_polyline(p, &xy) else {
                continue;
            };
            if dist > half_top {
                continue;
            }
            // direction from the centerline towards this node
            let dir = if dist > 1e-9 {
                ((p.0 - closest.0) / dist, (p.1 - closest.1) / dist)
            } else {
                let (a, b) = (xy[seg], xy[seg + 1]);
                let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
                if len > 0.0 {
                    (-(b.1 - a.1) / len, (b.0 - a.0) / len)
                } else {
                    (1.0, 0.0)
                }
            };
            let edge = (closest.0 + dir.0 * half_top, closest.1 + dir.1 * half_top);
            let (xmin_g, ymin_g, xmax_g, ymax_g) = grid.extent();
            let edge = (edge.0.clamp(xmin_g, xmax_g), edge.1.clamp(ymin_g, ymax_g));
            let Some((ec, er)) = grid.nearest_node(edge.0, edge.1) else {
                continue;
            };
            if grid.is_nodata(ec, er) {
                continue;
            }
            let bank = grid.get(ec, er);
            let value = if dist <= half_bed {
                bank - section.depth_below_bank
            } else if half_top > half_bed {
                let t = (dist - half_bed) / (half_top - half_bed);
                bank - section.depth_below_bank * (1.0 - t)
            } else {
                bank - section.depth_below_bank
            };
            set.push(Constraint {
                col,
                row,
                value,
                source: ConstraintSource::Channel,
                timestamp: centerline.timestamp.clone(),
            });
        }
    }
    Ok(set)
}

/// Diffusion-relaxation parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    /// Relaxation coefficient; the explicit 5-point scheme is stable for
    /// alpha <= 1/4.
    pub alpha: f64,
    /// Convergence tolerance on the per-sweep max update, meters.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            alpha: 0.25,
            tol: 1e-4,
            max_iter: 100_000,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.25) {
            return Err(DemError::Params(format!(
                "alpha must be in (0, 0.25], got {}",
                self.alpha
            )));
        }
        if !(self.tol > 0.0) {
            return Err(DemError::Params(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(DemError::Params("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RelaxOutcome {
    pub grid: ElevationGrid,
    pub iterations: usize,
    /// Max absolute update of the last sweep, meters.
    pub final_residual: f64,
    pub converged: bool,
    /// Per-sweep max absolute update.
    pub update_history: Vec<f64>,
}

/// Relax the grid around the constraint set.
///
/// Unconstrained nodes take Jacobi sweeps of `b + alpha * laplacian(b)` with
/// reflective edges; constrained nodes are pinned every sweep. The iteration
/// stops once the max absolute update is below `tol` *and* its projected
/// geometric tail (estimated from the update contraction rate) is also below
/// `tol`, so the returned field is within about `tol` of the fixed point
/// rather than merely moving slowly; with sparse constraint sets the first
/// sub-`tol` update can occur while the field is still far from converged.
pub fn relax(
    grid: &ElevationGrid,
    constraints: &ConstraintSet,
    params: &SolverParams,
) -> Result<RelaxOutcome> {
    grid.validate()?;
    params.validate()?;
    let pins = constraints.pin_map(grid)?;

    let n_cols = grid.n_cols;
    let n_rows = grid.n_rows;
    let n = n_cols * n_rows;
    let mut cur = grid.values.clone();
    let mut pinned = vec![false; n];
    for (&(col, row), &v) in &pins {
        let i = row * n_cols + col;
        cur[i] = v;
        pinned[i] = true;
    }
    // nodata cells do not participate unless a pin gave them a value
    let valid: Vec<bool> = cur
        .iter()
        .zip(&pinned)
        .map(|(&v, &p)| p || v != grid.nodata)
        .collect();

    let mut next = cur.clone();
    let alpha = params.alpha;
    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    let mut prev_delta: Option<f64> = None;
    let mut rho = 0.0f64;
    let mut converged = false;
    let mut history = Vec::new();

    while iterations < params.max_iter {
        delta = 0.0;
        for row in 0..n_rows {
            for col in 0..n_cols {
                let i = row * n_cols + col;
                if pinned[i] || !valid[i] {
                    next[i] = cur[i];
                    continue;
                }
                let c = cur[i];
                let mut acc = 0.0;
                if col > 0 && valid[i - 1] {
                    acc += cur[i - 1] - c;
                }
                if col + 1 < n_cols && valid[i + 1] {
                    acc += cur[i + 1] - c;
                }
                if row > 0 && valid[i - n_cols] {
                    acc += cur[i - n_cols] - c;
                }
                if row + 1 < n_rows && valid[i + n_cols] {
                    acc += cur[i + n_cols] - c;
                }
                let update = alpha * acc;
                next[i] = c + update;
                let m = update.abs();
                if m > delta {
                    delta = m;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        iterations += 1;
        history.push(delta);
        if let Some(p) = prev_delta {
            if p > 0.0 {
                rho = (0.8 * rho).max((delta / p).min(0.999_999));
            }
        }
        prev_delta = Some(delta);
        let tail = if rho < 1.0 { delta * rho / (1.0 - rho) } else { f64::INFINITY };
        if delta < params.tol && tail <= params.tol {
            converged = true;
            break;
        }
    }

    let mut out = grid.clone();
    out.values = cur;
    Ok(RelaxOutcome {
        grid: out,
        iterations,
        final_residual: delta,
        converged,
        update_history: history,
    })
}

/// Augment a constraint set with anchor pins on every valid cell farther than
/// `halo` cells (Chebyshev distance) from any constrained cell, holding those
/// cells at their current grid values. This limits the relaxation to a band
/// around the ingested features — the embedding step of the assimilation
/// workflow. `halo = 0` anchors everything except the constrained cells
/// themselves; use [`relax`] without anchors for whole-grid relaxation.
pub fn with_exterior_anchors(
    grid: &ElevationGrid,
    set: &ConstraintSet,
    halo: usize,
) -> Result<ConstraintSet> {
    let pins = set.pin_map(grid)?;
    let n_cols = grid.n_cols;
    let n_rows = grid.n_rows;
    let mut dist = vec![usize::MAX; n_cols * n_rows];
    let mut queue = std::collections::VecDeque::new();
    for &(col, row) in pins.keys() {
        dist[row * n_cols + col] = 0;
        queue.push_back((col, row));
    }
    while let Some((col, row)) = queue.pop_front() {
        let d = dist[row * n_cols + col];
        if d >= halo {
            continue;
        }
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nc, nr) = (col as i64 + dc, row as i64 + dr);
                if nc < 0 || nr < 0 || nc >= n_cols as i64 || nr >= n_rows as i64 {
                    continue;
                }
                let i = nr as usize * n_cols + nc as usize;
                if dist[i] > d + 1 {
                    dist[i] = d + 1;
                    queue.push_back((nc as usize, nr as usize));
                }
            }
        }
    }
    let mut out = set.clone();
    for row in 0..n_rows {
        for col in 0..n_cols {
            let i = row * n_cols + col;
            if dist[i] == usize::MAX && !grid.is_nodata(col, row) {
                out.push(Constraint {
                    col,
                    row,
                    value: grid.get(col, row),
                    source: ConstraintSource::Anchor,
                    timestamp: None,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> ElevationGrid {
        ElevationGrid::filled(n, n, 0.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn point_at_node_makes_one_constraint() {
        let g = flat(5);
        let out = constraints_from_points(&[(2.0, 2.0, 7.5)], &g);
        assert!(out.rejected.is_empty());
        assert_eq!(out.set.len(), 1);
        let c = &out.set.constraints[0];
        assert_eq!((c.col, c.row, c.value), (2, 2, 7.5));
    }

    #[test]
    fn close_duplicates_average() {
        let g = flat(5);
        let out = constraints_from_points(&[(2.0, 2.0, 10.00), (2.1, 2.0, 10.02)], &g);
        assert_eq!(out.set.len(), 1);
        assert!((out.set.constraints[0].value - 10.01).abs() < 1e-12);
    }

    #[test]
    fn wide_duplicates_become_a_conflict() {
        let g = flat(5);
        let out = constraints_from_points(&[(2.0, 2.0, 10.0), (2.0, 2.0, 11.0)], &g);
        assert_eq!(out.set.len(), 2);
        let report = check_constraint_consistency(&out.set);
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.entries[0].spread, 1.0);
    }

    #[test]
    fn out_of_extent_point_is_rejected() {
        let g = flat(5);
        let out = constraints_from_points(&[(40.0, 2.0, 1.0)], &g);
        assert!(out.set.is_empty());
        assert_eq!(out.rejected, vec![(40.0, 2.0, 1.0)]);
    }

    #[test]
    fn isoline_constraints_carry_the_level() {
        let g = flat(8);
        let line = VectorFeature::isoline(12.5, &[(0.0, 3.0), (4.0, 3.0)]);
        let set = constraints_from_isoline(&line, &g).unwrap();
        assert!(set.len() >= 5);
        assert!(set.constraints.iter().all(|c| c.value == 12.5));
        assert!(set.constraints.iter().all(|c| c.source == ConstraintSource::Coastline));
    }

    #[test]
    fn closed_ring_touches_only_the_perimeter() {
        let g = flat(12);
        let ring = VectorFeature::isoline(
            3.0,
            &[(2.0, 2.0), (8.0, 2.0), (8.0, 8.0), (2.0, 8.0), (2.0, 2.0)],
        );
        let set = constraints_from_isoline(&ring, &g).unwrap();
        // brute-force cell enumeration of the ring
        let mut expected = std::collections::HashSet::new();
        for k in 2..=8usize {
            expected.insert((k, 11 - 2));
            expected.insert((k, 11 - 8));
            expected.insert((2, 11 - k));
            expected.insert((8, 11 - k));
        }
        let got: std::collections::HashSet<(usize, usize)> =
            set.constraints.iter().map(|c| (c.col, c.row)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn two_coastlines_make_disjoint_bands() {
        let g = flat(10);
        let rise = VectorFeature::isoline(12.5, &[(0.0, 2.0), (9.0, 2.0)]);
        let peak = VectorFeature::isoline(13.1, &[(0.0, 6.0), (9.0, 6.0)]);
        let mut set = constraints_from_isoline(&rise, &g).unwrap();
        set.append(constraints_from_isoline(&peak, &g).unwrap());
        let a: Vec<f64> = set.constraints.iter().map(|c| c.value).collect();
        assert!(a.contains(&12.5) && a.contains(&13.1));
        assert!(check_constraint_consistency(&set).is_consistent());
    }

    #[test]
    fn depth_curve_subtracts_from_the_surface() {
        let g = flat(8);
        let curve = VectorFeature::depth_curve(3.0, None, &[(1.0, 1.0), (5.0, 1.0)]);
        let set = constraints_from_depth_curve(&curve, -10.0, &g).unwrap();
        assert!(set.constraints.iter().all(|c| c.value == -13.0));
    }

    #[test]
    fn nested_depth_curves_descend() {
        let g = flat(12);
        let mut set = ConstraintSet::new();
        for (depth, y) in [(2.0, 2.0), (5.0, 4.0), (8.0, 6.0)] {
            let curve = VectorFeature::depth_curve(depth, None, &[(1.0, y), (10.0, y)]);
            set.append(constraints_from_depth_curve(&curve, 0.0, &g).unwrap());
        }
        let mut values: Vec<f64> = set.constraints.iter().map(|c| c.value).collect();
        values.dedup();
        assert_eq!(values, vec![-2.0, -5.0, -8.0]);
    }

    #[test]
    fn zero_depth_is_rejected() {
        let g = flat(8);
        let curve = VectorFeature::depth_curve(0.0, None, &[(1.0, 1.0), (5.0, 1.0)]);
        assert!(constraints_from_depth_curve(&curve, 0.0, &g).is_err());
    }

    #[test]
    fn straight_burn_on_flat_terrain() {
        let g = ElevationGrid::filled(11, 11, 0.0, 0.0, 1.0, 10.0);
        let line = VectorFeature::channel(
            ChannelSection { bed_width: 1.0, top_width: 5.0, depth_below_bank: 2.0 },
            &[(0.0, 5.0), (10.0, 5.0)],
        );
        let section = line.section.unwrap();
        let set = burn_channel(&g, &line, &section).unwrap();
        for c in &set.constraints {
            let (_, y) = g.node_xy(c.col, c.row);
            let d = (y - 5.0).abs();
            if d <= 0.5 {
                assert!((c.value - 8.0).abs() < 1e-12, "bed at {d}: {}", c.value);
            } else if (d - 2.5).abs() < 1e-12 {
                // node exactly at top_width/2 equals the bank elevation
                assert!((c.value - 10.0).abs() < 1e-12);
            } else {
                assert!(c.value > 8.0 && c.value < 10.0);
            }
        }
    }

    #[test]
    fn oblique_burn_matches_the_trapezoid_profile() {
        let g = ElevationGrid::filled(30, 30, 0.0, 0.0, 1.0, 10.0);
        let section = ChannelSection { bed_width: 2.0, top_width: 8.0, depth_below_bank: 1.5 };
        let a = (3.0, 4.0);
        let b = (26.0, 23.0);
        let line = VectorFeature::channel(section, &[a, b]);
        let set = burn_channel(&g, &line, &section).unwrap();
        assert!(!set.is_empty());
        // brute-force distance-to-segment for every constrained node
        for c in &set.constraints {
            let p = g.node_xy(c.col, c.row);
            let (d2, _, _) = crate::features::point_segment(p, a, b);
            let d = d2.sqrt();
            assert!(d <= section.top_width / 2.0 + 1e-9);
            let expected = if d <= 1.0 {
                8.5
            } else {
                8.5 + 1.5 * (d - 1.0) / 3.0
            };
            // one cell of discretization slack on the ramp
            let slack = 1.5 / 3.0 * g.dx + 1e-9;
            assert!(
                (c.value - expected).abs() <= slack,
                "node at d={d}: got {} expected {expected}",
                c.value
            );
        }
    }

    #[test]
    fn all_constrained_cells_relax_in_one_sweep() {
        let g = flat(4);
        let mut set = ConstraintSet::new();
        for row in 0..4 {
            for col in 0..4 {
                set.push(Constraint {
                    col,
                    row,
                    value: (col + 4 * row) as f64,
                    source: ConstraintSource::Sounding,
                    timestamp: None,
                });
            }
        }
        let out = relax(&g, &set, &SolverParams::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        for row in 0..4 {
            for col in 0..4 {
                assert_eq!(out.grid.get(col, row), (col + 4 * row) as f64);
            }
        }
    }

    #[test]
    fn parallel_pinned_columns_converge_to_a_ramp() {
        let n = 12;
        let g = flat(n);
        let mut set = ConstraintSet::new();
        for row in 0..n {
            set.push(Constraint { col: 0, row, value: 0.0, source: ConstraintSource::Sounding, timestamp: None });
            set.push(Constraint { col: n - 1, row, value: 1.0, source: ConstraintSource::Sounding, timestamp: None });
        }
        let params = SolverParams { tol: 1e-8, ..Default::default() };
        let out = relax(&g, &set, &params).unwrap();
        assert!(out.converged);
        for row in 0..n {
            for col in 0..n {
                let expected = col as f64 / (n - 1) as f64;
                assert!(
                    (out.grid.get(col, row) - expected).abs() < 1e-6,
                    "ramp at {col},{row}"
                );
            }
        }
    }

    #[test]
    fn pins_hold_exactly_and_alpha_is_validated() {
        let g = flat(8);
        let mut set = ConstraintSet::new();
        set.push(Constraint { col: 3, row: 4, value: 2.25, source: ConstraintSource::Sounding, timestamp: None });
        let out = relax(&g, &set, &SolverParams::default()).unwrap();
        assert_eq!(out.grid.get(3, 4), 2.25);
        let bad = SolverParams { alpha: 0.3, ..Default::default() };
        assert!(relax(&g, &set, &bad).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let n = 20;
        let g = flat(n);
        let mut set = ConstraintSet::new();
        set.push(Constraint { col: 0, row: 0, value: 5.0, source: ConstraintSource::Sounding, timestamp: None });
        let params = SolverParams { tol: 1e-12, max_iter: 5, ..Default::default() };
        let out = relax(&g, &set, &params).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
        assert!(out.final_residual > 0.0);
    }

    #[test]
    fn update_history_is_eventually_monotone() {
        let n = 16;
        let g = flat(n);
        let mut set = ConstraintSet::new();
        set.push(Constraint { col: 2, row: 3, value: 4.0, source: ConstraintSource::Sounding, timestamp: None });
        set.push(Constraint { col: 12, row: 11, value: -1.0, source: ConstraintSource::Sounding, timestamp: None });
        let params = SolverParams { tol: 1e-9, ..Default::default() };
        let out = relax(&g, &set, &params).unwrap();
        let h = &out.update_history;
        assert!(h.len() > 20);
        for w in h[h.len() / 2..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "update grew late: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ingestion_order_does_not_matter_for_disjoint_features() {
        let g = flat(10);
        let a = VectorFeature::isoline(1.0, &[(0.0, 1.0), (9.0, 1.0)]);
        let b = VectorFeature::isoline(2.0, &[(0.0, 7.0), (9.0, 7.0)]);
        let mut ab = constraints_from_isoline(&a, &g).unwrap();
        ab.append(constraints_from_isoline(&b, &g).unwrap());
        let mut ba = constraints_from_isoline(&b, &g).unwrap();
        ba.append(constraints_from_isoline(&a, &g).unwrap());
        assert_eq!(ab.pin_map(&g).unwrap(), ba.pin_map(&g).unwrap());
    }

    #[test]
    fn later_feature_wins_shared_cells() {
        let g = flat(6);
        let mut set = ConstraintSet::new();
        set.push(Constraint { col: 2, row: 2, value: 1.0, source: ConstraintSource::Coastline, timestamp: None });
        set.push(Constraint { col: 2, row: 2, value: 9.0, source: ConstraintSource::Channel, timestamp: None });
        assert_eq!(set.pin_map(&g).unwrap()[&(2, 2)], 9.0);
        assert_eq!(check_constraint_consistency(&set).entries[0].spread, 8.0);
    }

    #[test]
    fn consistency_report_edge_cases() {
        let set = ConstraintSet::new();
        assert!(check_constraint_consistency(&set).is_consistent());
        let mut dup = ConstraintSet::new();
        for _ in 0..100 {
            dup.push(Constraint { col: 1, row: 1, value: 3.3, source: ConstraintSource::Sounding, timestamp: None });
        }
        assert!(check_constraint_consistency(&dup).is_consistent());
        let mut pair = ConstraintSet::new();
        pair.push(Constraint { col: 1, row: 1, value: 12.0, source: ConstraintSource::Coastline, timestamp: None });
        pair.push(Constraint { col: 1, row: 1, value: 12.5, source: ConstraintSource::Coastline, timestamp: None });
        let report = check_constraint_consistency(&pair);
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.entries[0].spread, 0.5);
    }

    #[test]
    fn anchors_freeze_the_far_field() {
        let g = ElevationGrid::from_fn(20, 20, 0.0, 0.0, 1.0, |x, y| 0.1 * x + 0.05 * y * y);
        let mut set = ConstraintSet::new();
        set.push(Constraint { col: 10, row: 10, value: -5.0, source: ConstraintSource::Sounding, timestamp: None });
        let anchored = with_exterior_anchors(&g, &set, 3).unwrap();
        let params = SolverParams { tol: 1e-8, ..Default::default() };
        let out = relax(&g, &anchored, &params).unwrap();
        // far corner untouched, pinned cell exact, halo blended
        assert_eq!(out.grid.get(0, 0), g.get(0, 0));
        assert_eq!(out.grid.get(10, 10), -5.0);
        assert!(out.grid.get(10, 9) < g.get(10, 9));
    }
}
