use super::metric::Connection;
use super::{linalg, stencil, Grid, Mat2, MetricField, ScalarField, SymTensorField, Vec2, VectorField, MAX_DIM};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct ScalarCalculus {
    /// Differential `∂_i f` (lower index).
    pub grad: VectorField,
    pub hessian: SymTensorField,
    pub laplacian: ScalarField,
}

impl ScalarCalculus {
    /// `|∇f|²_g` at each node.
    pub fn grad_norm_sq(&self, inv: &[Mat2]) -> Vec<f64> {
        let dim = self.grad.grid.dim();
        self.grad
            .values
            .iter()
            .zip(inv)
            .map(|(df, gi)| {
                let mut s = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        s += gi[i][j] * df[i] * df[j];
                    }
                }
                s
            })
            .collect()
    }
}

pub fn scalar_calculus(g: &MetricField, f: &ScalarField) -> Result<ScalarCalculus> {
    g.grid().ensure_same(&f.grid)?;
    Ok(scalar_calculus_with(&Connection::new(g)?, &f.values))
}

pub(crate) fn scalar_calculus_with(conn: &Connection, f: &[f64]) -> ScalarCalculus {
    let grid = conn.grid();
    let dim = grid.dim();
    let d1 = stencil::gradient(&grid, f);
    let d2 = stencil::second_derivatives(&grid, f);
    let gamma = &conn.gamma.values;
    let inv = conn.inverse();
    let mut grad = Vec::with_capacity(grid.len());
    let mut hess = Vec::with_capacity(grid.len());
    let mut lap = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let mut df = [0.0; MAX_DIM];
        for (i, v) in df.iter_mut().enumerate().take(dim) {
            *v = d1[i][node];
        }
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                h[i][j] = d2[i][j][node] - (0..dim).map(|k| gamma[node][k][i][j] * df[k]).sum::<f64>();
            }
        }
        lap.push(linalg::contract(&inv[node], &h, dim));
        grad.push(df);
        hess.push(h);
    }
    ScalarCalculus {
        grad: VectorField { grid, values: grad },
        hessian: SymTensorField { grid, values: hess },
        laplacian: ScalarField { grid, values: lap },
    }
}

/// `∫ field dV_g`.
pub fn integrate(g: &MetricField, field: &ScalarField) -> Result<f64> {
    g.grid().ensure_same(&field.grid)?;
    Ok(Connection::new(g)?.integrate(&field.values))
}

/// Discrete Laplace–Beltrami operator `L = a^{ij} D_ij + b^k D_k` with
/// `a = g^{-1}` and `b^k = −g^{ij} Γ^k_ij`.
///
/// Besides `L` itself this provides the weighted adjoint `W⁻¹ Lᵀ W`, which
/// conserves `Σ W u` exactly, and the symmetric part of the two, which is
/// self-adjoint in the `W`-inner product.
#[derive(Clone, Debug)]
pub struct LaplaceBeltrami {
    grid: Grid,
    pub(crate) a: Vec<Mat2>,
    pub(crate) b: Vec<Vec2>,
    pub(crate) weights: Vec<f64>,
}

impl LaplaceBeltrami {
    pub fn new(g: &MetricField) -> Result<Self> {
        Ok(Self::from_connection(&Connection::new(g)?))
    }

    pub(crate) fn from_connection(conn: &Connection) -> Self {
        let b = conn.gamma.contracted(&conn.algebra.inverse).into_iter().map(|v| [-v[0], -v[1]]).collect();
        Self { grid: conn.grid(), a: conn.inverse().to_vec(), b, weights: conn.weights().to_vec() }
    }

    /// Componentwise `(1 − w)·self + w·other`; both operators must share a grid.
    pub(crate) fn lerp(&self, other: &Self, w: f64) -> Self {
        let mix = |x: f64, y: f64| x + w * (y - x);
        Self {
            grid: self.grid,
            a: self
                .a
                .iter()
                .zip(&other.a)
                .map(|(x, y)| [[mix(x[0][0], y[0][0]), mix(x[0][1], y[0][1])], [mix(x[1][0], y[1][0]), mix(x[1][1], y[1][1])]])
                .collect(),
            b: self.b.iter().zip(&other.b).map(|(x, y)| [mix(x[0], y[0]), mix(x[1], y[1])]).collect(),
            weights: self.weights.iter().zip(&other.weights).map(|(x, y)| mix(*x, *y)).collect(),
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut out = vec![0.0; v.len()];
        for i in 0..dim {
            for j in i..dim {
                let d = stencil::d11(&self.grid, v, i, j);
                let mult = if i == j { 1.0 } else { 2.0 };
                for (node, o) in out.iter_mut().enumerate() {
                    *o += mult * self.a[node][i][j] * d[node];
                }
            }
            let d = stencil::d1(&self.grid, v, i);
            for (node, o) in out.iter_mut().enumerate() {
                *o += self.b[node][i] * d[node];
            }
        }
        out
    }

    /// Plain transpose `Lᵀ u = Σ D_ij(a^{ij} u) − Σ D_k(b^k u)`.
    pub fn apply_transpose(&self, u: &[f64]) -> Vec<f64> {
        let dim = self.grid.dim();
        let mut out = vec![0.0; u.len()];
        for i in 0..dim {
            for j in i..dim {
                let mult = if i == j { 1.0 } else { 2.0 };
                let au: Vec<f64> = u.iter().zip(&self.a).map(|(x, a)| a[i][j] * x).collect();
                for (o, d) in out.iter_mut().zip(stencil::d11(&self.grid, &au, i, j)) {
                    *o += mult * d;
                }
            }
            let bu: Vec<f64> = u.iter().zip(&self.b).map(|(x, b)| b[i] * x).collect();
            for (o, d) in out.iter_mut().zip(stencil::d1(&self.grid, &bu, i)) {
                *o -= d;
            }
        }
        out
    }

    /// `W⁻¹ Lᵀ (W v)`.
    pub fn adjoint(&self, v: &[f64]) -> Vec<f64> {
        let wv: Vec<f64> = v.iter().zip(&self.weights).map(|(x, w)| x * w).collect();
        self.apply_transpose(&wv).into_iter().zip(&self.weights).map(|(x, w)| x / w).collect()
    }

    /// `½(L + W⁻¹LᵀW)`.
    pub fn symmetric(&self, v: &[f64]) -> Vec<f64> {
        self.apply(v).into_iter().zip(self.adjoint(v)).map(|(a, b)| 0.5 * (a + b)).collect()
    }
}
