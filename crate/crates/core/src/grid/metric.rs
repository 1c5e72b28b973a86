use super::{linalg, stencil, Grid, Mat2, MetricField, ScalarField, SymTensorField, DEGENERACY_THRESHOLD, MAX_DIM};
use crate::error::{Result, RhError};

pub type Gamma = [[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM];

#[derive(Clone, Debug)]
pub struct MetricAlgebra {
    pub inverse: SymTensorField,
    pub det: ScalarField,
    /// `√det(g) · h^m`, the quadrature weight of each node.
    pub volume_weight: ScalarField,
}

impl MetricAlgebra {
    pub fn volume(&self) -> f64 {
        self.volume_weight.values.iter().sum()
    }
}

pub fn metric_algebra(g: &MetricField) -> Result<MetricAlgebra> {
    let grid = g.grid();
    let dim = grid.dim();
    let cell = grid.cell_volume();
    let mut inverse = Vec::with_capacity(grid.len());
    let mut det = Vec::with_capacity(grid.len());
    let mut weight = Vec::with_capacity(grid.len());
    for (node, m) in g.values().iter().enumerate() {
        let eig = linalg::sym_eigenvalues(m, dim)[0];
        if !(eig >= DEGENERACY_THRESHOLD) {
            return Err(RhError::NotPositiveDefinite { node, eigenvalue: eig });
        }
        let d = linalg::det(m, dim);
        inverse.push(linalg::inverse(m, dim));
        det.push(d);
        weight.push(d.sqrt() * cell);
    }
    Ok(MetricAlgebra {
        inverse: SymTensorField { grid, values: inverse },
        det: ScalarField { grid, values: det },
        volume_weight: ScalarField { grid, values: weight },
    })
}

/// Christoffel symbols of the second kind, `values[node][k][i][j] = Γ^k_ij`.
#[derive(Clone, Debug)]
pub struct ChristoffelField {
    pub grid: Grid,
    pub values: Vec<Gamma>,
}

impl ChristoffelField {
    /// `g^{ij} Γ^k_ij` at each node.
    pub fn contracted(&self, inverse: &SymTensorField) -> Vec<[f64; MAX_DIM]> {
        let dim = self.grid.dim();
        self.values
            .iter()
            .zip(&inverse.values)
            .map(|(gam, inv)| {
                let mut v = [0.0; MAX_DIM];
                for (k, vk) in v.iter_mut().enumerate().take(dim) {
                    *vk = linalg::contract(inv, &gam[k], dim);
                }
                v
            })
            .collect()
    }
}

/// First derivatives of the metric, `[k][i][j][node] = ∂_k g_ij`.
pub(crate) fn metric_gradient(g: &MetricField) -> Vec<Vec<Vec<Vec<f64>>>> {
    let grid = g.grid();
    let dim = grid.dim();
    let mut out = vec![vec![vec![Vec::new(); dim]; dim]; dim];
    for i in 0..dim {
        for j in i..dim {
            let comp = g.as_tensor().component(i, j);
            for (k, dk) in stencil::gradient(&grid, &comp).into_iter().enumerate() {
                out[k][j][i] = dk.clone();
                out[k][i][j] = dk;
            }
        }
    }
    out
}

pub(crate) fn christoffel_from(
    grid: Grid,
    inverse: &[Mat2],
    dg: &[Vec<Vec<Vec<f64>>>],
) -> ChristoffelField {
    let dim = grid.dim();
    let values = (0..grid.len())
        .map(|node| {
            let inv = &inverse[node];
            // First kind: Γ_lij = ½(∂_i g_jl + ∂_j g_il - ∂_l g_ij).
            let mut first = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for (l, fl) in first.iter_mut().enumerate().take(dim) {
                for i in 0..dim {
                    for j in 0..dim {
                        fl[i][j] = 0.5 * (dg[i][j][l][node] + dg[j][i][l][node] - dg[l][i][j][node]);
                    }
                }
            }
            let mut gam = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for (k, gk) in gam.iter_mut().enumerate().take(dim) {
                for i in 0..dim {
                    for j in 0..dim {
                        gk[i][j] = (0..dim).map(|l| inv[k][l] * first[l][i][j]).sum();
                    }
                }
            }
            gam
        })
        .collect();
    ChristoffelField { grid, values }
}

pub fn christoffel(g: &MetricField) -> Result<ChristoffelField> {
    let alg = metric_algebra(g)?;
    Ok(christoffel_from(g.grid(), &alg.inverse.values, &metric_gradient(g)))
}

/// Metric together with the derived quantities most operations need.
#[derive(Clone, Debug)]
pub struct Connection {
    pub metric: MetricField,
    pub algebra: MetricAlgebra,
    pub gamma: ChristoffelField,
}

impl Connection {
    pub fn new(g: &MetricField) -> Result<Self> {
        let algebra = metric_algebra(g)?;
        let gamma = christoffel_from(g.grid(), &algebra.inverse.values, &metric_gradient(g));
        Ok(Self { metric: g.clone(), algebra, gamma })
    }

    pub fn grid(&self) -> Grid {
        self.metric.grid()
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn inverse(&self) -> &[Mat2] {
        &self.algebra.inverse.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.algebra.volume_weight.values
    }

    pub fn volume(&self) -> f64 {
        self.algebra.volume()
    }

    /// `∫ field dV` by the nodal rule (spectrally accurate for smooth periodic data).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(self.weights()).map(|(v, w)| v * w).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::IDENTITY;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_and_scaled_metrics() {
        let grid = Grid::torus(2, 8).unwrap();
        let alg = metric_algebra(&MetricField::flat(grid)).unwrap();
        assert!(alg.det.values.iter().all(|&d| d == 1.0));
        assert!(alg.inverse.values.iter().all(|m| *m == IDENTITY));

        let alg = metric_algebra(&MetricField::constant(grid, 4.0)).unwrap();
        assert!(alg.det.values.iter().all(|&d| d == 16.0));
        assert!(alg.inverse.values.iter().all(|m| m[0][0] == 0.25 && m[1][1] == 0.25 && m[0][1] == 0.0));
        let h2 = grid.spacing().powi(2);
        assert!(alg.volume_weight.values.iter().all(|&w| (w - 4.0 * h2).abs() < 1e-15));
    }

    #[test]
    fn random_spd_inverse_is_exact() {
        let grid = Grid::torus(2, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let vals: Vec<Mat2> = (0..grid.len())
            .map(|_| {
                let a: f64 = rng.gen_range(0.2..3.0);
                let c: f64 = rng.gen_range(0.2..3.0);
                let b: f64 = rng.gen_range(-1.0..1.0) * (a * c).sqrt() * 0.9;
                [[a, b], [b, c]]
            })
            .collect();
        let g = MetricField::new(SymTensorField { grid, values: vals.clone() }).unwrap();
        let alg = metric_algebra(&g).unwrap();
        for (m, inv) in vals.iter().zip(&alg.inverse.values) {
            // Oracle: direct matrix product against the identity.
            for i in 0..2 {
                for j in 0..2 {
                    let p: f64 = (0..2).map(|k| inv[i][k] * m[k][j]).sum();
                    assert!((p - IDENTITY[i][j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn indefinite_metric_names_node() {
        let grid = Grid::torus(2, 8).unwrap();
        let mut vals = vec![IDENTITY; grid.len()];
        vals[13] = [[1.0, 2.0], [2.0, 1.0]];
        let g = MetricField::new(SymTensorField { grid, values: vals }).unwrap();
        match metric_algebra(&g) {
            Err(RhError::NotPositiveDefinite { node, eigenvalue }) => {
                assert_eq!(node, 13);
                assert!((eigenvalue + 1.0).abs() < 1e-12);
            }
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    fn conformal_gamma_error(n: usize) -> f64 {
        // Γ^k_ij = δ^k_i ∂_j u + δ^k_j ∂_i u - δ_ij ∂_k u for g = e^{2u} δ.
        let grid = Grid::torus(2, n).unwrap();
        let u = |x: [f64; 2]| 0.1 * x[0].sin();
        let g = MetricField::conformal(grid, u);
        let gam = christoffel(&g).unwrap();
        let mut err: f64 = 0.0;
        for node in 0..grid.len() {
            let [x, _] = grid.coords(node);
            let du = [0.1 * x.cos(), 0.0];
            for k in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let dk = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                        let exact = dk(k, i) * du[j] + dk(k, j) * du[i] - dk(i, j) * du[k];
                        err = err.max((gam.values[node][k][i][j] - exact).abs());
                    }
                }
            }
        }
        err
    }

    #[test]
    fn christoffel_conformal_oracle_fourth_order() {
        let (e1, e2) = (conformal_gamma_error(16), conformal_gamma_error(32));
        assert!(e2 < 2e-5, "{e2}");
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn christoffel_diagonal_oracle() {
        // g = diag(f², 1), f = 1.5 + 0.3 cos x: Γ^x_xx = f'/f.
        for n in [32, 64] {
            let grid = Grid::torus(2, n).unwrap();
            let f = |x: f64| 1.5 + 0.3 * x.cos();
            let g = MetricField::from_fn(grid, |p| [[f(p[0]).powi(2), 0.0], [0.0, 1.0]]).unwrap();
            let gam = christoffel(&g).unwrap();
            let err = (0..grid.len()).fold(0.0f64, |m, node| {
                let x = grid.coords(node)[0];
                let exact = -0.3 * x.sin() / f(x);
                m.max((gam.values[node][0][0][0] - exact).abs())
            });
            assert!(err < 2e-5 * (32.0 / n as f64).powi(4), "n = {n}: {err}");
        }
    }

    #[test]
    fn christoffel_symmetric_and_zero_for_constant_metric() {
        let grid = Grid::torus(2, 16).unwrap();
        let g = MetricField::from_fn(grid, |_| [[2.0, 0.3], [0.3, 1.1]]).unwrap();
        let gam = christoffel(&g).unwrap();
        assert!(gam.values.iter().flatten().flatten().flatten().all(|v| v.abs() < 1e-13));

        let g = MetricField::from_fn(grid, |p| {
            [[1.0 + 0.2 * p[1].sin(), 0.1 * p[0].cos()], [0.1 * p[0].cos(), 1.0 + 0.1 * (p[0] + p[1]).sin()]]
        })
        .unwrap();
        let gam = christoffel(&g).unwrap();
        for v in &gam.values {
            for k in 0..2 {
                assert_eq!(v[k][0][1], v[k][1][0]);
            }
        }
    }
}
