//! Vector features (isolines, depth curves, channel centerlines, point sets),
//! their line-oriented file format, and polyline-to-grid rasterization.
//!
//! File format, one feature per line:
//!
//! ```text
//! TYPE=<isoline|depth_curve|channel|points>;LEVEL=<f>|DEPTH=<f>|SECTION=<bw,tw,d>;T=<iso8601>;<x1> <y1>,<x2> <y2>,...
//! ```
//!
//! Attribute fields are optional and type-dependent: isolines carry `LEVEL`
//! (the water-level mark), depth curves carry `DEPTH` and `LEVEL` (the water
//! surface the depth refers to), channels carry `SECTION`. `TYPE=points`
//! vertices are `x y z` triples. Blank lines and lines starting with `#` are
//! skipped.

use std::fs;
use std::path::Path;

use crate::assimilate::ChannelSection;
use crate::error::{DemError, Result};
use crate::grid::ElevationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Isoline,
    DepthCurve,
    Channel,
    Points,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::Isoline => "isoline",
            FeatureKind::DepthCurve => "depth_curve",
            FeatureKind::Channel => "channel",
            FeatureKind::Points => "points",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
}

/// Polyline/point-set feature with its attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFeature {
    pub kind: FeatureKind,
    pub level: Option<f64>,
    pub depth: Option<f64>,
    pub section: Option<ChannelSection>,
    pub timestamp: Option<String>,
    pub vertices: Vec<Vertex>,
}

impl VectorFeature {
    pub fn isoline(level: f64, xy: &[(f64, f64)]) -> Self {
        VectorFeature {
            kind: FeatureKind::Isoline,
            level: Some(level),
            depth: None,
            section: None,
            timestamp: None,
            vertices: xy.iter().map(|&(x, y)| Vertex { x, y, z: None }).collect(),
        }
    }

    pub fn depth_curve(depth: f64, level: Option<f64>, xy: &[(f64, f64)]) -> Self {
        VectorFeature {
            kind: FeatureKind::DepthCurve,
            level,
            depth: Some(depth),
            section: None,
            timestamp: None,
            vertices: xy.iter().map(|&(x, y)| Vertex { x, y, z: None }).collect(),
        }
    }

    pub fn channel(section: ChannelSection, xy: &[(f64, f64)]) -> Self {
        VectorFeature {
            kind: FeatureKind::Channel,
            level: None,
            depth: None,
            section: Some(section),
            timestamp: None,
            vertices: xy.iter().map(|&(x, y)| Vertex { x, y, z: None }).collect(),
        }
    }

    pub fn points(xyz: &[(f64, f64, f64)]) -> Self {
        VectorFeature {
            kind: FeatureKind::Points,
            level: None,
            depth: None,
            section: None,
            timestamp: None,
            vertices: xyz.iter().map(|&(x, y, z)| Vertex { x, y, z: Some(z) }).collect(),
        }
    }

    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.vertices.iter().map(|v| (v.x, v.y)).collect()
    }
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<VectorFeature>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DemError::io(path, e))?;
    parse_features(&text, path)
}

pub fn parse_features(text: &str, path: impl AsRef<Path>) -> Result<Vec<VectorFeature>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(parse_feature_line(line, path, lineno)?);
    }
    Ok(out)
}

fn parse_feature_line(line: &str, path: &Path, lineno: usize) -> Result<VectorFeature> {
    let err = |msg: String| DemError::parse(path, lineno, msg);
    let mut kind: Option<FeatureKind> = None;
    let mut level = None;
    let mut depth = None;
    let mut section = None;
    let mut timestamp = None;
    let mut vertices: Option<Vec<Vertex>> = None;

    for piece in line.split(';') {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        if vertices.is_some() {
            return Err(err("coordinates must be the last field".into()));
        }
        match piece.split_once('=') {
            Some(("TYPE", v)) => {
                kind = Some(match v.trim() {
                    "isoline" => FeatureKind::Isoline,
                    "depth_curve" => FeatureKind::DepthCurve,
                    "channel" => FeatureKind::Channel,
                    "points" => FeatureKind::Points,
                    other => return Err(err(format!("unknown feature TYPE '{other}'"))),
                });
            }
            Some(("LEVEL", v)) => {
                level = Some(v.trim().parse::<f64>().map_err(|_| err(format!("bad LEVEL '{v}'")))?);
            }
            Some(("DEPTH", v)) => {
                depth = Some(v.trim().parse::<f64>().map_err(|_| err(format!("bad DEPTH '{v}'")))?);
            }
            Some(("SECTION", v)) => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(err(format!("SECTION needs bed_width,top_width,depth, got '{v}'")));
                }
                let nums: Vec<f64> = parts
                    .iter()
                    .map(|p| p.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| err(format!("bad SECTION '{v}'")))?;
                section = Some(ChannelSection {
                    bed_width: nums[0],
                    top_width: nums[1],
                    depth_below_bank: nums[2],
                });
            }
            Some(("T", v)) => timestamp = Some(v.trim().to_string()),
            _ => {
                // must be the coordinate list
                vertices = Some(parse_vertices(piece, path, lineno)?);
            }
        }
    }

    let kind = kind.ok_or_else(|| err("missing TYPE= field".into()))?;
    let vertices = vertices.ok_or_else(|| err("missing coordinate list".into()))?;
    if vertices.is_empty() {
        return Err(err("empty coordinate list".into()));
    }
    match kind {
        FeatureKind::Points => {
            if vertices.iter().any(|v| v.z.is_none()) {
                return Err(err("TYPE=points vertices need three values: x y z".into()));
            }
        }
        _ => {
            if vertices.iter().any(|v| v.z.is_some()) {
                return Err(err(format!("TYPE={} vertices take two values: x y", kind.name())));
            }
            if vertices.len() < 2 {
                return Err(err(format!("TYPE={} needs at least 2 vertices", kind.name())));
            }
        }
    }
    if kind == FeatureKind::Channel {
        if let Some(s) = &section {
            s.validate().map_err(|e| err(e.to_string()))?;
        } else {
            return Err(err("TYPE=channel needs SECTION=bw,tw,d".into()));
        }
    }
    Ok(VectorFeature {
        kind,
        level,
        depth,
        section,
        timestamp,
        vertices,
    })
}

fn parse_vertices(piece: &str, path: &Path, lineno: usize) -> Result<Vec<Vertex>> {
    let mut out = Vec::new();
    for tuple in piece.split(',') {
        let tuple = tuple.trim();
        if tuple.is_empty() {
            continue;
        }
        let nums: Vec<f64> = tuple
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| DemError::parse(path, lineno, format!("bad coordinate tuple '{tuple}'")))?;
        match nums.len() {
            2 => out.push(Vertex { x: nums[0], y: nums[1], z: None }),
            3 => out.push(Vertex { x: nums[0], y: nums[1], z: Some(nums[2]) }),
            n => {
                return Err(DemError::parse(
                    path,
                    lineno,
                    format!("coordinate tuple '{tuple}' has {n} values, expected 2 or 3"),
                ))
            }
        }
    }
    Ok(out)
}

/// Serialize features in the line format accepted by [`read_features`].
pub fn write_features(features: &[VectorFeature], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for f in features {
        text.push_str(&feature_line(f));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| DemError::io(path, e))
}

pub fn feature_line(f: &VectorFeature) -> String {
    let mut s = format!("TYPE={}", f.kind.name());
    if let Some(l) = f.level {
        s.push_str(&format!(";LEVEL={l}"));
    }
    if let Some(d) = f.depth {
        s.push_str(&format!(";DEPTH={d}"));
    }
    if let Some(sec) = &f.section {
        s.push_str(&format!(
            ";SECTION={},{},{}",
            sec.bed_width, sec.top_width, sec.depth_below_bank
        ));
    }
    if let Some(t) = &f.timestamp {
        s.push_str(&format!(";T={t}"));
    }
    s.push(';');
    let coords: Vec<String> = f
        .vertices
        .iter()
        .map(|v| match v.z {
            Some(z) => format!("{:.6} {:.6} {:.6}", v.x, v.y, z),
            None => format!("{:.6} {:.6}", v.x, v.y),
        })
        .collect();
    s.push_str(&coords.join(","));
    s
}

/// All grid nodes a polyline crosses, in path order, consecutive duplicates
/// removed. Every node whose square cell (side `dx`, centered on the node)
/// the segment passes through is visited. Errors if a vertex lies outside
/// the grid extent.
pub fn rasterize_polyline(grid: &ElevationGrid, xy: &[(f64, f64)]) -> Result<Vec<(usize, usize)>> {
    for &(x, y) in xy {
        if !grid.contains_xy(x, y) {
            return Err(DemError::OutOfExtent { x, y });
        }
    }
    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut push = |grid: &ElevationGrid, i: isize, j: isize| {
        // (i, j) in south-up node indices
        if i < 0 || j < 0 || i >= grid.n_cols as isize || j >= grid.n_rows as isize {
            return;
        }
        let cell = (i as usize, grid.n_rows - 1 - j as usize);
        if cells.last() != Some(&cell) {
            cells.push(cell);
        }
    };
    for seg in xy.windows(2) {
        let (xa, ya) = seg[0];
        let (xb, yb) = seg[1];
        let ua = (xa - grid.x0) / grid.dx;
        let wa = (ya - grid.y0) / grid.dx;
        let ub = (xb - grid.x0) / grid.dx;
        let wb = (yb - grid.y0) / grid.dx;
        let mut i = (ua + 0.5).floor() as isize;
        let mut j = (wa + 0.5).floor() as isize;
        let i_end = (ub + 0.5).floor() as isize;
        let j_end = (wb + 0.5).floor() as isize;
        let du = ub - ua;
        let dw = wb - wa;
        let step_i: isize = if du > 0.0 { 1 } else { -1 };
        let step_j: isize = if dw > 0.0 { 1 } else { -1 };
        // parametric distance to the next cell boundary in each axis
        let mut t_max_u = if du != 0.0 {
            ((i as f64 + 0.5 * step_i as f64) - ua) / du
        } else {
            f64::INFINITY
        };
        let mut t_max_w = if dw != 0.0 {
            ((j as f64 + 0.5 * step_j as f64) - wa) / dw
        } else {
            f64::INFINITY
        };
        let t_delta_u = if du != 0.0 { (1.0 / du).abs() } else { f64::INFINITY };
        let t_delta_w = if dw != 0.0 { (1.0 / dw).abs() } else { f64::INFINITY };

        push(grid, i, j);
        let cap = (i_end - i).unsigned_abs() + (j_end - j).unsigned_abs() + 4;
        let mut steps = 0usize;
        while (i != i_end || j != j_end) && steps < cap {
            if t_max_u <= t_max_w {
                i += step_i;
                t_max_u += t_delta_u;
            } else {
                j += step_j;
                t_max_w += t_delta_w;
            }
            push(grid, i, j);
            steps += 1;
        }
        if i != i_end || j != j_end {
            push(grid, i_end, j_end);
        }
    }
    Ok(cells)
}

/// Resample a polyline so that consecutive points are at most `spacing`
/// apart; original vertices are kept.
pub fn densify(xy: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if xy.is_empty() {
        return out;
    }
    out.push(xy[0]);
    for seg in xy.windows(2) {
        let (xa, ya) = seg[0];
        let (xb, yb) = seg[1];
        let len = ((xb - xa).powi(2) + (yb - ya).powi(2)).sqrt();
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((xa + t * (xb - xa), ya + t * (yb - ya)));
        }
    }
    out
}

/// Squared distance from `p` to segment `a-b`, the clamp parameter `t`,
/// and the closest point.
pub fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64, (f64, f64)) {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let (ex, ey) = (bx - ax, by - ay);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 {
        (((px - ax) * ex + (py - ay) * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = ax + t * ex;
    let cy = ay + t * ey;
    let d2 = (px - cx).powi(2) + (py - cy).powi(2);
    (d2, t, (cx, cy))
}

/// Closest approach of `p` to a polyline: `(distance, closest point, segment index)`.
/// Ties resolve to the first segment in path order.
pub fn project_to_polyline(p: (f64, f64), xy: &[(f64, f64)]) -> Option<(f64, (f64, f64), usize)> {
    if xy.len() < 2 {
        return xy.first().map(|&a| {
            let d2 = (p.0 - a.0).powi(2) + (p.1 - a.1).powi(2);
            (d2.sqrt(), a, 0)
        });
    }
    let mut best: Option<(f64, (f64, f64), usize)> = None;
    for (k, seg) in xy.windows(2).enumerate() {
        let (d2, _, c) = point_segment(p, seg[0], seg[1]);
        if best.map_or(true, |(bd, _, _)| d2 < bd * bd - 1e-18) {
            best = Some((d2.sqrt(), c, k));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ElevationGrid {
        ElevationGrid::filled(10, 8, 0.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn parses_mixed_feature_file() {
        let text = "\
# two coastlines and a sounding set
TYPE=isoline;LEVEL=12.5;T=2014-05-06;0 0,3 0,3 3
TYPE=depth_curve;DEPTH=3;LEVEL=-10;1 1,2 2

TYPE=channel;SECTION=2,6,1.5;0 4,9 4
TYPE=points;1 1 10.5,2 2 11.25
";
        let fs = parse_features(text, "f.txt").unwrap();
        assert_eq!(fs.len(), 4);
        assert_eq!(fs[0].kind, FeatureKind::Isoline);
        assert_eq!(fs[0].level, Some(12.5));
        assert_eq!(fs[0].timestamp.as_deref(), Some("2014-05-06"));
        assert_eq!(fs[1].depth, Some(3.0));
        assert_eq!(fs[1].level, Some(-10.0));
        assert_eq!(fs[2].section.unwrap().top_width, 6.0);
        assert_eq!(fs[3].vertices[1].z, Some(11.25));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_features("LEVEL=1;0 0,1 1", "f").is_err()); // no TYPE
        assert!(parse_features("TYPE=isoline;LEVEL=1", "f").is_err()); // no coords
        assert!(parse_features("TYPE=isoline;LEVEL=1;0 0", "f").is_err()); // 1 vertex
        assert!(parse_features("TYPE=points;0 0,1 1", "f").is_err()); // missing z
        assert!(parse_features("TYPE=channel;SECTION=5,2,1;0 0,1 1", "f").is_err()); // tw < bw
        let err = parse_features("TYPE=isoline;LEVEL=x;0 0,1 1", "f").unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
    }

    #[test]
    fn feature_line_round_trips() {
        let f = VectorFeature::channel(
            ChannelSection { bed_width: 2.0, top_width: 6.0, depth_below_bank: 1.5 },
            &[(0.0, 4.0), (9.0, 4.0)],
        );
        let line = feature_line(&f);
        let back = parse_features(&line, "rt").unwrap();
        assert_eq!(back[0].kind, FeatureKind::Channel);
        assert_eq!(back[0].section, f.section);
        assert_eq!(back[0].vertices, f.vertices);
    }

    #[test]
    fn horizontal_segment_crosses_expected_cells() {
        let g = grid();
        let cells = rasterize_polyline(&g, &[(0.0, 2.0), (4.0, 2.0)]).unwrap();
        // nodes x = 0..4 on the row with y = 2 (storage row 5)
        assert_eq!(cells, vec![(0, 5), (1, 5), (2, 5), (3, 5), (4, 5)]);
    }

    #[test]
    fn diagonal_segment_is_connected_and_ordered() {
        let g = grid();
        let cells = rasterize_polyline(&g, &[(0.0, 0.0), (5.0, 3.0)]).unwrap();
        assert_eq!(cells.first(), Some(&(0, 7)));
        assert_eq!(cells.last(), Some(&(5, 4)));
        for w in cells.windows(2) {
            let dc = (w[1].0 as isize - w[0].0 as isize).abs();
            let dr = (w[1].1 as isize - w[0].1 as isize).abs();
            assert!(dc + dr == 1, "jump from {:?} to {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn vertex_outside_extent_is_an_error() {
        let g = grid();
        assert!(matches!(
            rasterize_polyline(&g, &[(0.0, 0.0), (50.0, 0.0)]),
            Err(DemError::OutOfExtent { .. })
        ));
    }

    #[test]
    fn densify_respects_spacing() {
        let pts = densify(&[(0.0, 0.0), (3.0, 0.0)], 0.5);
        assert_eq!(pts.len(), 7);
        for w in pts.windows(2) {
            let d = ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt();
            assert!(d <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn projection_picks_nearest_segment() {
        let line = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)];
        let (d, c, k) = project_to_polyline((11.0, 5.0), &line).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert_eq!(k, 1);
        assert!((c.0 - 10.0).abs() < 1e-12 && (c.1 - 5.0).abs() < 1e-12);
    }
}
