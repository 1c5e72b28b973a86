//! Closed-form algebra for the per-node `dim × dim` blocks (`dim ≤ 2`).

use super::{Mat2, MAX_DIM};

pub fn det(m: &Mat2, dim: usize) -> f64 {
    match dim {
        1 => m[0][0],
        _ => m[0][0] * m[1][1] - m[0][1] * m[1][0],
    }
}

pub fn inverse(m: &Mat2, dim: usize) -> Mat2 {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    match dim {
        1 => out[0][0] = 1.0 / m[0][0],
        _ => {
            let d = det(m, 2);
            out[0][0] = m[1][1] / d;
            out[1][1] = m[0][0] / d;
            out[0][1] = -m[0][1] / d;
            out[1][0] = -m[1][0] / d;
        }
    }
    out
}

/// Eigenvalues of a symmetric block, ascending.
pub fn sym_eigenvalues(m: &Mat2, dim: usize) -> [f64; MAX_DIM] {
    match dim {
        1 => [m[0][0], m[0][0]],
        _ => {
            let mean = 0.5 * (m[0][0] + m[1][1]);
            let half_diff = 0.5 * (m[0][0] - m[1][1]);
            let r = (half_diff * half_diff + m[0][1] * m[0][1]).sqrt();
            [mean - r, mean + r]
        }
    }
}

pub fn matmul(a: &Mat2, b: &Mat2, dim: usize) -> Mat2 {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = (0..dim).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `a^{ij} b_ij`.
pub fn contract(a: &Mat2, b: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// `|t|²_g = g^{ia} g^{jb} t_ij t_ab` for a covariant 2-tensor `t`.
pub fn norm_sq(inv: &Mat2, t: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            for a in 0..dim {
                for b in 0..dim {
                    s += inv[i][a] * inv[j][b] * t[i][j] * t[a][b];
                }
            }
        }
    }
    s
}
