//! Raster data model, finite-difference stencils, bilinear sampling and
//! ASCII-grid file I/O.
//!
//! Grids are node-registered: `values` holds point samples `b(x_i, y_j)` on a
//! square lattice with step `dx`. Storage is row-major with **row 0 the
//! northernmost row**, matching the file layout; `(x0, y0)` is the coordinate
//! of the south-west node, so node `(col, row)` sits at
//! `x = x0 + col*dx`, `y = y0 + (n_rows-1-row)*dx`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DemError, Result};

pub const DEFAULT_NODATA: f64 = -9999.0;

/// Uniform node-registered elevation raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationGrid {
    pub n_cols: usize,
    pub n_rows: usize,
    /// x of the westernmost column of nodes.
    pub x0: f64,
    /// y of the southernmost row of nodes.
    pub y0: f64,
    /// Node spacing, identical in x and y.
    pub dx: f64,
    pub nodata: f64,
    /// Row-major node values, row 0 = northernmost.
    pub values: Vec<f64>,
}

impl ElevationGrid {
    pub fn filled(n_cols: usize, n_rows: usize, x0: f64, y0: f64, dx: f64, value: f64) -> Self {
        ElevationGrid {
            n_cols,
            n_rows,
            x0,
            y0,
            dx,
            nodata: DEFAULT_NODATA,
            values: vec![value; n_cols * n_rows],
        }
    }

    /// Build a grid by evaluating `f(x, y)` at every node.
    pub fn from_fn(
        n_cols: usize,
        n_rows: usize,
        x0: f64,
        y0: f64,
        dx: f64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut g = Self::filled(n_cols, n_rows, x0, y0, dx, 0.0);
        for row in 0..n_rows {
            for col in 0..n_cols {
                let (x, y) = g.node_xy(col, row);
                g.values[row * n_cols + col] = f(x, y);
            }
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        if self.dx <= 0.0 || !self.dx.is_finite() {
            return Err(DemError::Grid(format!("cellsize must be > 0, got {}", self.dx)));
        }
        if self.n_cols < 2 || self.n_rows < 2 {
            return Err(DemError::Grid(format!(
                "grid must be at least 2x2, got {}x{}",
                self.n_cols, self.n_rows
            )));
        }
        if self.values.len() != self.n_cols * self.n_rows {
            return Err(DemError::Grid(format!(
                "value count {} does not match {}x{}",
                self.values.len(),
                self.n_cols,
                self.n_rows
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn idx(&self, col: usize, row: usize) -> usize {
        debug_assert!(col < self.n_cols && row < self.n_rows);
        row * self.n_cols + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[self.idx(col, row)]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: f64) {
        let i = self.idx(col, row);
        self.values[i] = v;
    }

    #[inline]
    pub fn is_nodata(&self, col: usize, row: usize) -> bool {
        self.get(col, row) == self.nodata
    }

    #[inline]
    pub fn x_at(&self, col: usize) -> f64 {
        self.x0 + col as f64 * self.dx
    }

    #[inline]
    pub fn y_at(&self, row: usize) -> f64 {
        self.y0 + (self.n_rows - 1 - row) as f64 * self.dx
    }

    #[inline]
    pub fn node_xy(&self, col: usize, row: usize) -> (f64, f64) {
        (self.x_at(col), self.y_at(row))
    }

    /// `(x_min, y_min, x_max, y_max)` of the node lattice.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.x0,
            self.y0,
            self.x0 + (self.n_cols - 1) as f64 * self.dx,
            self.y0 + (self.n_rows - 1) as f64 * self.dx,
        )
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        let (xmin, ymin, xmax, ymax) = self.extent();
        let slack = 1e-9 * self.dx;
        x >= xmin - slack && x <= xmax + slack && y >= ymin - slack && y <= ymax + slack
    }

    /// Nearest node to a point, or None if the point is outside the extent.
    pub fn nearest_node(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.contains_xy(x, y) {
            return None;
        }
        let col = (((x - self.x0) / self.dx).round() as isize).clamp(0, self.n_cols as isize - 1);
        let jr = (((y - self.y0) / self.dx).round() as isize).clamp(0, self.n_rows as isize - 1);
        let row = self.n_rows - 1 - jr as usize;
        Some((col as usize, row))
    }

    /// Min/max over valid (non-nodata) cells.
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut out: Option<(f64, f64)> = None;
        for &v in &self.values {
            if v == self.nodata {
                continue;
            }
            out = Some(match out {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            });
        }
        out
    }

    /// Bilinear interpolation of the four enclosing nodes; exact at nodes.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Result<f64> {
        if !self.contains_xy(x, y) {
            return Err(DemError::OutOfExtent { x, y });
        }
        let u = (x - self.x0) / self.dx;
        let w = (y - self.y0) / self.dx; // south-up fractional row
        let i0 = (u.floor() as isize).clamp(0, self.n_cols as isize - 2) as usize;
        let j0 = (w.floor() as isize).clamp(0, self.n_rows as isize - 2) as usize;
        let fx = u - i0 as f64;
        let fy = w - j0 as f64;
        let ll = self.get(i0, self.n_rows - 1 - j0);
        let lr = self.get(i0 + 1, self.n_rows - 1 - j0);
        let ul = self.get(i0, self.n_rows - 2 - j0);
        let ur = self.get(i0 + 1, self.n_rows - 2 - j0);
        if [ll, lr, ul, ur].iter().any(|&v| v == self.nodata) {
            return Err(DemError::Nodata { x, y });
        }
        Ok(ll * (1.0 - fx) * (1.0 - fy) + lr * fx * (1.0 - fy) + ul * (1.0 - fx) * fy + ur * fx * fy)
    }

    /// First and second partial derivatives on every node.
    ///
    /// Central differences on interior nodes, one-sided second-order stencils
    /// on edges. Any stencil touching a nodata cell yields nodata at that node
    /// rather than failing the whole grid.
    pub fn derivatives(&self) -> Result<DerivativeField> {
        self.validate()?;
        if self.n_cols < 3 || self.n_rows < 3 {
            return Err(DemError::Grid(format!(
                "derivatives need at least a 3x3 grid, got {}x{}",
                self.n_cols, self.n_rows
            )));
        }
        let template = ElevationGrid {
            values: vec![self.nodata; self.n_cols * self.n_rows],
            ..self.clone()
        };
        let mut ddx = template.clone();
        let mut ddy = template.clone();
        let mut dxx = template.clone();
        let mut dyy = template.clone();
        let mut dxy = template.clone();
        let mut grad_sq = template.clone();

        for row in 0..self.n_rows {
            for col in 0..self.n_cols {
                let i = self.idx(col, row);
                if let Some(v) = self.first_x(col, row) {
                    ddx.values[i] = v;
                }
                if let Some(v) = self.first_y(col, row) {
                    ddy.values[i] = v;
                }
                if let Some(v) = self.second_x(col, row) {
                    dxx.values[i] = v;
                }
                if let Some(v) = self.second_y(col, row) {
                    dyy.values[i] = v;
                }
            }
        }
        // Cross derivative: y-derivative of the ddx field, so nodata in the
        // ddx window propagates on its own.
        for row in 0..self.n_rows {
            for col in 0..self.n_cols {
                let i = self.idx(col, row);
                if let Some(v) = ddx.first_y(col, row) {
                    dxy.values[i] = v;
                }
                let gx = ddx.values[i];
                let gy = ddy.values[i];
                if gx != self.nodata && gy != self.nodata {
                    grad_sq.values[i] = gx * gx + gy * gy;
                }
            }
        }
        Ok(DerivativeField {
            ddx,
            ddy,
            dxx,
            dyy,
            dxy,
            grad_sq,
        })
    }

    #[inline]
    fn val(&self, col: usize, row: usize) -> Option<f64> {
        let v = self.get(col, row);
        (v != self.nodata).then_some(v)
    }

    fn first_x(&self, col: usize, row: usize) -> Option<f64> {
        let h = self.dx;
        if col == 0 {
            let (a, b, c) = (self.val(0, row)?, self.val(1, row)?, self.val(2, row)?);
            Some((-3.0 * a + 4.0 * b - c) / (2.0 * h))
        } else if col == self.n_cols - 1 {
            let n = self.n_cols;
            let (a, b, c) = (
                self.val(n - 1, row)?,
                self.val(n - 2, row)?,
                self.val(n - 3, row)?,
            );
            Some((3.0 * a - 4.0 * b + c) / (2.0 * h))
        } else {
            Some((self.val(col + 1, row)? - self.val(col - 1, row)?) / (2.0 * h))
        }
    }

    // Storage row grows southward while y grows northward, so the first
    // y-derivative flips the row direction.
    fn first_y(&self, col: usize, row: usize) -> Option<f64> {
        let h = self.dx;
        if row == 0 {
            let (a, b, c) = (self.val(col, 0)?, self.val(col, 1)?, self.val(col, 2)?);
            Some((3.0 * a - 4.0 * b + c) / (2.0 * h))
        } else if row == self.n_rows - 1 {
            let n = self.n_rows;
            let (a, b, c) = (
                self.val(col, n - 1)?,
                self.val(col, n - 2)?,
                self.val(col, n - 3)?,
            );
            Some((-3.0 * a + 4.0 * b - c) / (2.0 * h))
        } else {
            Some((self.val(col, row - 1)? - self.val(col, row + 1)?) / (2.0 * h))
        }
    }

    fn second_1d(
        &self,
        k: usize,
        n: usize,
        get: impl Fn(usize) -> Option<f64>,
    ) -> Option<f64> {
        let h2 = self.dx * self.dx;
        if k > 0 && k < n - 1 {
            Some((get(k - 1)? - 2.0 * get(k)? + get(k + 1)?) / h2)
        } else {
            // One-sided, indices counted away from the edge; direction does
            // not matter for an even derivative.
            let ord: Vec<usize> = if k == 0 { (0..n).collect() } else { (0..n).rev().collect() };
            if n >= 4 {
                let (a, b, c, d) = (get(ord[0])?, get(ord[1])?, get(ord[2])?, get(ord[3])?);
                Some((2.0 * a - 5.0 * b + 4.0 * c - d) / h2)
            } else {
                let (a, b, c) = (get(ord[0])?, get(ord[1])?, get(ord[2])?);
                Some((a - 2.0 * b + c) / h2)
            }
        }
    }

    fn second_x(&self, col: usize, row: usize) -> Option<f64> {
        self.second_1d(col, self.n_cols, |c| self.val(c, row))
    }

    fn second_y(&self, col: usize, row: usize) -> Option<f64> {
        self.second_1d(row, self.n_rows, |r| self.val(col, r))
    }
}

/// Partial derivatives of an elevation grid, one plane per term, plus the
/// squared gradient magnitude `|grad b|^2`.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub ddx: ElevationGrid,
    pub ddy: ElevationGrid,
    pub dxx: ElevationGrid,
    pub dyy: ElevationGrid,
    pub dxy: ElevationGrid,
    pub grad_sq: ElevationGrid,
}

/// Boolean cell mask aligned with a grid (row 0 = north).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolGrid {
    pub n_cols: usize,
    pub n_rows: usize,
    pub data: Vec<bool>,
}

impl BoolGrid {
    pub fn filled(n_cols: usize, n_rows: usize, value: bool) -> Self {
        BoolGrid {
            n_cols,
            n_rows,
            data: vec![value; n_cols * n_rows],
        }
    }

    /// Threshold a grid into a mask; nodata cells are false.
    pub fn from_grid(grid: &ElevationGrid, threshold: f64) -> Self {
        let data = grid
            .values
            .iter()
            .map(|&v| v != grid.nodata && v >= threshold)
            .collect();
        BoolGrid {
            n_cols: grid.n_cols,
            n_rows: grid.n_rows,
            data,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.data[row * self.n_cols + col] = v;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 0/1 grid sharing `georef`'s placement, for writing as an ASCII grid.
    pub fn to_grid(&self, georef: &ElevationGrid) -> ElevationGrid {
        let mut g = ElevationGrid {
            values: vec![0.0; self.data.len()],
            ..georef.clone()
        };
        g.n_cols = self.n_cols;
        g.n_rows = self.n_rows;
        for (i, &b) in self.data.iter().enumerate() {
            g.values[i] = if b { 1.0 } else { 0.0 };
        }
        g
    }
}

/// Parse the ASCII grid format:
///
/// ```text
/// ncols <int>
/// nrows <int>
/// xllcorner <float>
/// yllcorner <float>
/// cellsize <float>
/// NODATA_value <float>
/// <nrows lines of ncols space-separated floats, north row first>
/// ```
pub fn read_grid(path: impl AsRef<Path>) -> Result<ElevationGrid> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DemError::io(path, e))?;
    read_grid_from(BufReader::new(file), path)
}

pub fn read_grid_from<R: Read>(reader: BufReader<R>, path: impl AsRef<Path>) -> Result<ElevationGrid> {
    let path = path.as_ref();
    let mut lines = reader.lines().enumerate();

    let mut next_line = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(DemError::parse(path, i + 1, e.to_string())),
            None => Err(DemError::parse(path, 0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    fn header_field<T: std::str::FromStr>(
        path: &Path,
        lineno: usize,
        line: &str,
        key: &str,
    ) -> Result<T> {
        let mut it = line.split_whitespace();
        match it.next() {
            Some(k) if k == key => {}
            Some(k) => {
                return Err(DemError::parse(
                    path,
                    lineno,
                    format!("expected header key '{key}', found '{k}'"),
                ))
            }
            None => return Err(DemError::parse(path, lineno, format!("empty line, expected '{key}'"))),
        }
        let raw = it
            .next()
            .ok_or_else(|| DemError::parse(path, lineno, format!("missing value for '{key}'")))?;
        if it.next().is_some() {
            return Err(DemError::parse(path, lineno, format!("trailing tokens after '{key}'")));
        }
        raw.parse::<T>()
            .map_err(|_| DemError::parse(path, lineno, format!("cannot parse '{raw}' as value of '{key}'")))
    }

    let (l, s) = next_line("ncols")?;
    let n_cols: usize = header_field(path, l, &s, "ncols")?;
    let (l, s) = next_line("nrows")?;
    let n_rows: usize = header_field(path, l, &s, "nrows")?;
    let (l, s) = next_line("xllcorner")?;
    let x0: f64 = header_field(path, l, &s, "xllcorner")?;
    let (l, s) = next_line("yllcorner")?;
    let y0: f64 = header_field(path, l, &s, "yllcorner")?;
    let (l, s) = next_line("cellsize")?;
    let dx: f64 = header_field(path, l, &s, "cellsize")?;
    let (l, s) = next_line("NODATA_value")?;
    let nodata: f64 = header_field(path, l, &s, "NODATA_value")?;

    let mut values = Vec::with_capacity(n_cols * n_rows);
    for r in 0..n_rows {
        let (lineno, line) = next_line("a data row")?;
        let mut count = 0usize;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                DemError::parse(path, lineno, format!("non-numeric cell '{tok}' in row {r}"))
            })?;
            values.push(v);
            count += 1;
        }
        if count != n_cols {
            return Err(DemError::parse(
                path,
                lineno,
                format!("row {r} has {count} values, expected {n_cols}"),
            ));
        }
    }
    for (i, rest) in lines {
        match rest {
            Ok(l) if l.trim().is_empty() => continue,
            Ok(_) => return Err(DemError::parse(path, i + 1, "trailing content after data rows")),
            Err(e) => return Err(DemError::parse(path, i + 1, e.to_string())),
        }
    }

    let grid = ElevationGrid {
        n_cols,
        n_rows,
        x0,
        y0,
        dx,
        nodata,
        values,
    };
    grid.validate()?;
    Ok(grid)
}

/// Write the ASCII grid format with fixed 6-decimal cells, so that
/// `read_grid(write_grid(g))` reproduces `g` bit-exactly at that precision.
pub fn write_grid(grid: &ElevationGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    grid.validate()?;
    let file = File::create(path).map_err(|e| DemError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_grid_to(grid, &mut w).map_err(|e| DemError::io(path, e))
}

pub fn write_grid_to<W: Write>(grid: &ElevationGrid, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "ncols {}", grid.n_cols)?;
    writeln!(w, "nrows {}", grid.n_rows)?;
    writeln!(w, "xllcorner {}", grid.x0)?;
    writeln!(w, "yllcorner {}", grid.y0)?;
    writeln!(w, "cellsize {}", grid.dx)?;
    writeln!(w, "NODATA_value {}", grid.nodata)?;
    let mut line = String::new();
    for row in 0..grid.n_rows {
        line.clear();
        for col in 0..grid.n_cols {
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{:.6}", grid.get(col, row)));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(s: &str) -> Result<ElevationGrid> {
        read_grid_from(BufReader::new(Cursor::new(s.to_string())), "test.asc")
    }

    const HDR: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n";

    #[test]
    fn parses_2x2() {
        let g = parse(&format!("{HDR}1 2\n3 4\n")).unwrap();
        assert_eq!(g.values, vec![1.0, 2.0, 3.0, 4.0]);
        // row 0 is the north row: node (0,0) is the NW corner
        assert_eq!(g.node_xy(0, 0), (0.0, 1.0));
        assert_eq!(g.node_xy(0, 1), (0.0, 0.0));
    }

    #[test]
    fn short_row_is_an_error_naming_the_line() {
        let s = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n";
        let err = parse(s).unwrap_err();
        match err {
            DemError::Parse { line, msg, .. } => {
                assert_eq!(line, 8);
                assert!(msg.contains("2 values"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_cell_is_an_error() {
        let err = parse(&format!("{HDR}1 2\n3 x\n")).unwrap_err();
        match err {
            DemError::Parse { line, msg, .. } => {
                assert_eq!(line, 8);
                assert!(msg.contains("non-numeric"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_an_error() {
        let err = parse("ncols 2\nnrows 2\nxllcorner 0\nwrongkey 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n")
            .unwrap_err();
        match err {
            DemError::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn writes_constant_grid_with_fixed_decimals() {
        let g = ElevationGrid::filled(2, 2, 0.0, 0.0, 1.0, 0.0);
        let mut buf = Vec::new();
        write_grid_to(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("0.000000 0.000000\n0.000000 0.000000\n"), "{text}");
    }

    #[test]
    fn nodata_cells_round_trip() {
        let mut g = ElevationGrid::filled(3, 2, 0.0, 0.0, 1.0, 5.0);
        g.set(1, 0, g.nodata);
        let mut buf = Vec::new();
        write_grid_to(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("-9999.000000"));
        let back = parse(&text).unwrap();
        assert!(back.is_nodata(1, 0));
        assert_eq!(back.values, g.values);
    }

    #[test]
    fn derivatives_of_constant_are_zero() {
        let g = ElevationGrid::filled(5, 5, 0.0, 0.0, 1.0, 42.0);
        let d = g.derivatives().unwrap();
        for f in [&d.ddx, &d.ddy, &d.dxx, &d.dyy, &d.dxy, &d.grad_sq] {
            assert!(f.values.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn derivatives_of_x_plane() {
        let g = ElevationGrid::from_fn(6, 5, 0.0, 0.0, 1.0, |x, _| x);
        let d = g.derivatives().unwrap();
        for row in 0..5 {
            for col in 0..6 {
                assert!((d.ddx.get(col, row) - 1.0).abs() < 1e-12);
                assert!(d.ddy.get(col, row).abs() < 1e-12);
                assert!(d.dxx.get(col, row).abs() < 1e-12);
                assert!(d.dyy.get(col, row).abs() < 1e-12);
                assert!(d.dxy.get(col, row).abs() < 1e-12);
                assert!((d.grad_sq.get(col, row) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivatives_of_y_plane_have_positive_ddy() {
        let g = ElevationGrid::from_fn(5, 6, 0.0, 0.0, 1.0, |_, y| y);
        let d = g.derivatives().unwrap();
        for row in 0..6 {
            for col in 0..5 {
                assert!((d.ddy.get(col, row) - 1.0).abs() < 1e-12, "ddy at {col},{row}");
                assert!(d.ddx.get(col, row).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_derivative_of_xy_is_one_on_interior() {
        // closed form: d2(xy)/dxdy = 1
        let g = ElevationGrid::from_fn(7, 7, 0.0, 0.0, 1.0, |x, y| x * y);
        let d = g.derivatives().unwrap();
        for row in 1..6 {
            for col in 1..6 {
                assert!(
                    (d.dxy.get(col, row) - 1.0).abs() < 1e-10,
                    "dxy at {col},{row} = {}",
                    d.dxy.get(col, row)
                );
            }
        }
    }

    #[test]
    fn too_small_for_derivatives() {
        let g = ElevationGrid::filled(2, 2, 0.0, 0.0, 1.0, 0.0);
        assert!(g.derivatives().is_err());
    }

    #[test]
    fn nodata_propagates_in_derivatives() {
        let mut g = ElevationGrid::from_fn(7, 7, 0.0, 0.0, 1.0, |x, _| x);
        g.set(3, 3, g.nodata);
        let d = g.derivatives().unwrap();
        assert!(d.ddx.is_nodata(2, 3) && d.ddx.is_nodata(4, 3));
        assert!(d.ddy.is_nodata(3, 2) && d.ddy.is_nodata(3, 4));
        assert!(d.dxy.is_nodata(2, 2));
        // untouched corner still fine
        assert!((d.ddx.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_order_convergence_on_smooth_field() {
        // halving dx should cut the max stencil error about 4x
        let field = |x: f64, y: f64| (x).sin() * (y).cos();
        let exact_dxx = |x: f64, y: f64| -(x).sin() * (y).cos();
        let max_err = |dx: f64| {
            let n = (1.0 / dx) as usize + 1;
            let g = ElevationGrid::from_fn(n, n, 0.0, 0.0, dx, field);
            let d = g.derivatives().unwrap();
            let mut worst = 0.0f64;
            for row in 0..n {
                for col in 0..n {
                    let (x, y) = g.node_xy(col, row);
                    worst = worst.max((d.dxx.get(col, row) - exact_dxx(x, y)).abs());
                }
            }
            worst
        };
        let e1 = max_err(0.02);
        let e2 = max_err(0.01);
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.0, "convergence ratio {ratio}");
    }

    #[test]
    fn bilinear_exact_at_nodes_and_linear_midpoints() {
        let g = ElevationGrid::from_fn(4, 4, 0.0, 0.0, 2.0, |x, _| x);
        assert_eq!(g.sample_bilinear(2.0, 4.0).unwrap(), g.get(1, 1));
        // midpoint of a cell on b = x is the mean of the corner values
        let mid = g.sample_bilinear(1.0, 1.0).unwrap();
        assert!((mid - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_errors() {
        let mut g = ElevationGrid::filled(3, 3, 0.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            g.sample_bilinear(5.0, 0.5),
            Err(DemError::OutOfExtent { .. })
        ));
        g.set(0, 2, g.nodata); // SW corner
        assert!(matches!(g.sample_bilinear(0.4, 0.4), Err(DemError::Nodata { .. })));
    }

    #[test]
    fn mask_round_trip() {
        let g = ElevationGrid::from_fn(3, 3, 0.0, 0.0, 1.0, |x, _| x);
        let m = BoolGrid::from_grid(&g, 1.0);
        assert_eq!(m.count_true(), 6);
        let back = m.to_grid(&g);
        assert_eq!(BoolGrid::from_grid(&back, 0.5), m);
    }
}
