mod common;
use std::collections::HashMap;

#[test]
fn direct_solver_reproduces_the_ramp() {
    let n = 8;
    let mut pins = HashMap::new();
    for row in 0..n {
        pins.insert((0usize, row), 0.0);
        pins.insert((n - 1, row), 1.0);
    }
    let x = common::direct_laplace_solve(n, n, &pins);
    for row in 0..n {
        for col in 0..n {
            let expected = col as f64 / (n - 1) as f64;
            let got = x[row * n + col];
            assert!(
                (got - expected).abs() < 1e-10,
                "at ({col},{row}): {got} vs {expected}"
            );
        }
    }
}

#[test]
fn direct_solver_matches_jacobi_to_death_on_a_tiny_case() {
    // 5x5, two pins; iterate plain Jacobi 200k times as the reference
    let n = 5usize;
    let mut pins = HashMap::new();
    pins.insert((1usize, 1usize), 3.0);
    pins.insert((3usize, 3usize), -1.0);
    let direct = common::direct_laplace_solve(n, n, &pins);
    let mut cur = vec![0.0f64; n * n];
    for (&(c, r), &v) in &pins {
        cur[r * n + c] = v;
    }
    for _ in 0..200_000 {
        let mut next = cur.clone();
        for r in 0..n {
            for c in 0..n {
                if pins.contains_key(&(c, r)) {
                    continue;
                }
                let i = r * n + c;
                let mut acc = 0.0;
                if c > 0 { acc += cur[i - 1] - cur[i]; }
                if c + 1 < n { acc += cur[i + 1] - cur[i]; }
                if r > 0 { acc += cur[i - n] - cur[i]; }
                if r + 1 < n { acc += cur[i + n] - cur[i]; }
                next[i] = cur[i] + 0.25 * acc;
            }
        }
        cur = next;
    }
    for i in 0..n * n {
        assert!((cur[i] - direct[i]).abs() < 1e-9, "at {i}: jacobi {} direct {}", cur[i], direct[i]);
    }
}
