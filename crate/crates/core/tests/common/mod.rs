//! Shared test support: an independent direct solver for the pinned discrete
//! Laplace system (banded LU, nothing in common with the Jacobi iteration it
//! checks) and synthetic-scene builders.

#![allow(dead_code)]

use std::collections::HashMap;

use demforge_core::grid::ElevationGrid;

/// Solve the pinned 5-point Laplace system with reflective edges directly.
///
/// Unconstrained node: `deg * b - sum(neighbors) = 0` (deg counts in-grid
/// neighbors, which is exactly the mirror-edge stencil); pinned node: `b = v`.
/// Banded Gaussian elimination without pivoting — the matrix is diagonally
/// dominant with identity rows at the pins.
pub fn direct_laplace_solve(
    n_cols: usize,
    n_rows: usize,
    pins: &HashMap<(usize, usize), f64>,
) -> Vec<f64> {
    let n = n_cols * n_rows;
    let w = n_cols;
    let width = 2 * w + 1;
    let mut band = vec![0.0f64; n * width];
    let mut rhs = vec![0.0f64; n];
    for row in 0..n_rows {
        for col in 0..n_cols {
            let i = row * n_cols + col;
            if let Some(&v) = pins.get(&(col, row)) {
                band[i * width + w] = 1.0;
                rhs[i] = v;
                continue;
            }
            let mut deg = 0.0;
            if col > 0 {
                band[i * width + (w - 1)] = -1.0;
                deg += 1.0;
            }
            if col + 1 < n_cols {
                band[i * width + (w + 1)] = -1.0;
                deg += 1.0;
            }
            if row > 0 {
                band[i * width] = -1.0;
                deg += 1.0;
            }
            if row + 1 < n_rows {
                band[i * width + 2 * w] = -1.0;
                deg += 1.0;
            }
            band[i * width + w] = deg;
        }
    }
    for i in 0..n {
        let piv = band[i * width + w];
        assert!(piv.abs() > 1e-14, "singular Laplace system at unknown {i}");
        let hi = (i + w).min(n - 1);
        for r in (i + 1)..=hi {
            let k = (i + w) - r; // column i in row r's band
            let a = band[r * width + k];
            if a == 0.0 {
                continue;
            }
            let f = a / piv;
            for j in i..=hi {
                let ki = (j + w) - i;
                let kr = (j + w) - r;
                band[r * width + kr] -= f * band[i * width + ki];
            }
            rhs[r] -= f * rhs[i];
            band[r * width + k] = 0.0;
        }
    }
    let mut x = vec![0.0f64; n];
    for i in (0..n).rev() {
        let mut s = rhs[i];
        let hi = (i + w).min(n - 1);
        for j in (i + 1)..=hi {
            s -= band[i * width + (j + w) - i] * x[j];
        }
        x[i] = s / band[i * width + w];
    }
    x
}

/// Forked-channel verification scene: an inlet reach tees into a north branch
/// draining through the open north boundary and an east branch feeding a
/// pool. `with_sill` raises one east-branch cell into a blocking wall.
pub struct ForkScene {
    pub bed: ElevationGrid,
    pub inflow_cell: (usize, usize),
    pub sill_cell: (usize, usize),
    pub pool_cells: Vec<(usize, usize)>,
}

pub fn fork_scene(with_sill: bool) -> ForkScene {
    let n_cols = 50;
    let n_rows = 30;
    let channel_row = 15usize;
    let fork_col = 10usize;
    let mut bed = ElevationGrid::filled(n_cols, n_rows, 0.0, 0.0, 1.0, 2.0);
    for col in 0..=fork_col {
        bed.set(col, channel_row, 0.60 - 0.005 * col as f64);
    }
    for row in 0..channel_row {
        bed.set(fork_col, row, 0.55 - 0.01 * (channel_row - row) as f64);
    }
    for col in (fork_col + 1)..=35 {
        bed.set(col, channel_row, 0.55 - 0.004 * (col - fork_col) as f64);
    }
    let mut pool_cells = Vec::new();
    for row in 12..=18 {
        for col in 36..=42 {
            bed.set(col, row, 0.2);
            pool_cells.push((col, row));
        }
    }
    let sill_cell = (12usize, channel_row);
    if with_sill {
        bed.set(sill_cell.0, sill_cell.1, 2.4);
    }
    ForkScene {
        bed,
        inflow_cell: (0, channel_row),
        sill_cell,
        pool_cells,
    }
}

pub fn assert_elapsed_under(start: std::time::Instant, limit_s: f64, what: &str) {
    let took = start.elapsed().as_secs_f64();
    assert!(took < limit_s, "{what} took {took:.1}s, limit {limit_s}s");
}
