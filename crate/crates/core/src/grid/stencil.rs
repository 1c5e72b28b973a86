//! Fourth-order periodic central differences.
//!
//! `d1` and `d2` are circulant, so `d1` is antisymmetric and `d2` symmetric as
//! matrices; several discrete adjointness identities downstream rely on this.

use super::Grid;

const D1: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const D2: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];

#[inline]
fn apply(grid: &Grid, src: &[f64], axis: usize, weights: &[f64; 5], scale: f64) -> Vec<f64> {
    let n = grid.nodes_per_axis();
    let mut out = vec![0.0; src.len()];
    match (grid.dim(), axis) {
        (1, _) | (_, 0) => {
            let rows = src.len() / n;
            for r in 0..rows {
                let base = r * n;
                for i in 0..n {
                    let mut s = 0.0;
                    for (k, w) in weights.iter().enumerate() {
                        if *w != 0.0 {
                            let j = (i + n + k - 2) % n;
                            s += w * src[base + j];
                        }
                    }
                    out[base + i] = s * scale;
                }
            }
        }
        _ => {
            for iy in 0..n {
                for (k, w) in weights.iter().enumerate() {
                    if *w == 0.0 {
                        continue;
                    }
                    let jy = (iy + n + k - 2) % n;
                    let (dst, srow) = (iy * n, jy * n);
                    for ix in 0..n {
                        out[dst + ix] += w * src[srow + ix];
                    }
                }
                for v in &mut out[iy * n..(iy + 1) * n] {
                    *v *= scale;
                }
            }
        }
    }
    out
}

/// `∂_axis` of a nodal scalar.
pub fn d1(grid: &Grid, src: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing();
    apply(grid, src, axis, &D1, 1.0 / (12.0 * h))
}

/// `∂²_axis` with the compact five-point stencil.
pub fn d2(grid: &Grid, src: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing();
    apply(grid, src, axis, &D2, 1.0 / (12.0 * h * h))
}

/// `∂_a ∂_b`: the compact stencil on the diagonal, `d1 ∘ d1` across axes.
pub fn d11(grid: &Grid, src: &[f64], a: usize, b: usize) -> Vec<f64> {
    if a == b {
        d2(grid, src, a)
    } else {
        d1(grid, &d1(grid, src, b), a)
    }
}

/// All first derivatives, indexed `[axis][node]`.
pub fn gradient(grid: &Grid, src: &[f64]) -> Vec<Vec<f64>> {
    (0..grid.dim()).map(|a| d1(grid, src, a)).collect()
}

/// All second derivatives, indexed `[a][b][node]` (symmetric in `a, b`).
pub fn second_derivatives(grid: &Grid, src: &[f64]) -> Vec<Vec<Vec<f64>>> {
    let dim = grid.dim();
    let mut out = vec![vec![Vec::new(); dim]; dim];
    for a in 0..dim {
        for b in a..dim {
            let d = d11(grid, src, a, b);
            if a != b {
                out[b][a] = d.clone();
            }
            out[a][b] = d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn first_and_second_derivative_orders() {
        let mut errs = Vec::new();
        for n in [16, 32] {
            let grid = Grid::torus(2, n).unwrap();
            let f: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let [x, y] = grid.coords(i);
                    (x + 2.0 * y).sin()
                })
                .collect();
            let fx: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let [x, y] = grid.coords(i);
                    (x + 2.0 * y).cos()
                })
                .collect();
            let fxy: Vec<f64> = f.iter().map(|v| -2.0 * v).collect();
            let fyy: Vec<f64> = f.iter().map(|v| -4.0 * v).collect();
            errs.push([
                max_err(&d1(&grid, &f, 0), &fx),
                max_err(&d11(&grid, &f, 0, 1), &fxy),
                max_err(&d2(&grid, &f, 1), &fyy),
            ]);
        }
        for k in 0..3 {
            let ratio = errs[0][k] / errs[1][k];
            assert!((12.0..20.0).contains(&ratio), "component {k}: ratio {ratio}");
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let grid = Grid::torus(2, 8).unwrap();
        let f = vec![3.5; grid.len()];
        assert!(d1(&grid, &f, 1).iter().all(|v| v.abs() < 1e-12));
        assert!(d2(&grid, &f, 0).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn one_dimensional_wraps() {
        let grid = Grid::torus(1, 32).unwrap();
        let f: Vec<f64> = (0..32).map(|i| grid.coords(i)[0].sin()).collect();
        let d = d2(&grid, &f, 0);
        let err = d.iter().zip(&f).fold(0.0f64, |m, (a, b)| m.max((a + b).abs()));
        assert!(err < 1e-4);
    }
}
