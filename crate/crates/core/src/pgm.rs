//! ASCII PGM (`P2`) previews of grids, min-max scaled to 0-255.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{DemError, Result};
use crate::grid::ElevationGrid;

/// Write a `P2` portable graymap of the grid. Nodata cells map to 0.
pub fn write_pgm(grid: &ElevationGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    grid.validate()?;
    let file = File::create(path).map_err(|e| DemError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pgm_to(grid, &mut w).map_err(|e| DemError::io(path, e))
}

pub fn write_pgm_to<W: Write>(grid: &ElevationGrid, w: &mut W) -> std::io::Result<()> {
    let (lo, hi) = grid.min_max().unwrap_or((0.0, 0.0));
    let span = hi - lo;
    writeln!(w, "P2")?;
    writeln!(w, "{} {}", grid.n_cols, grid.n_rows)?;
    writeln!(w, "255")?;
    let mut line = String::new();
    for row in 0..grid.n_rows {
        line.clear();
        for col in 0..grid.n_cols {
            let v = grid.get(col, row);
            let level = if v == grid.nodata || span <= 0.0 {
                0
            } else {
                ((v - lo) / span * 255.0).round() as u8
            };
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&level.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scales_min_max() {
        let g = ElevationGrid::from_fn(3, 2, 0.0, 0.0, 1.0, |x, y| x + 3.0 * y);
        let mut buf = Vec::new();
        write_pgm_to(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 2"));
        assert_eq!(lines.next(), Some("255"));
        // north row holds the maximum (y = 1): 3,4,5 over range 0..5
        assert_eq!(lines.next(), Some("153 204 255"));
        assert_eq!(lines.next(), Some("0 51 102"));
    }

    #[test]
    fn constant_grid_is_all_zero() {
        let g = ElevationGrid::filled(2, 2, 0.0, 0.0, 1.0, 7.0);
        let mut buf = Vec::new();
        write_pgm_to(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("0 0\n0 0\n"));
    }
}
