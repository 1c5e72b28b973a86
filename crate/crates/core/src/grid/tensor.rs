//! Lower-index tensor fields of arbitrary rank and their covariant derivatives.
//!
//! Components are stored per multi-index, first index most significant, each
//! holding one value per node.

use super::metric::Connection;
use super::{stencil, Mat2, SymTensorField, MAX_DIM};

#[derive(Clone, Debug)]
pub(crate) struct Tensor {
    pub rank: usize,
    pub dim: usize,
    pub data: Vec<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(rank: usize, dim: usize, len: usize) -> Self {
        Self { rank, dim, data: vec![vec![0.0; len]; dim.pow(rank as u32)] }
    }

    pub fn from_sym(t: &SymTensorField) -> Self {
        let dim = t.grid.dim();
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(t.component(i, j));
            }
        }
        Self { rank: 2, dim, data }
    }

    /// Rank-2 tensor back to a symmetric field (symmetric part).
    pub fn to_sym(&self, grid: super::Grid) -> SymTensorField {
        assert_eq!(self.rank, 2);
        let dim = self.dim;
        let values = (0..grid.len())
            .map(|node| {
                let mut m: Mat2 = [[0.0; MAX_DIM]; MAX_DIM];
                for i in 0..dim {
                    for j in 0..dim {
                        m[i][j] = 0.5 * (self.data[i * dim + j][node] + self.data[j * dim + i][node]);
                    }
                }
                m
            })
            .collect();
        SymTensorField { grid, values }
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.rank];
        for slot in idx.iter_mut().rev() {
            *slot = flat % self.dim;
            flat /= self.dim;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }
}

/// `∇_a T_{i₁…i_r}`, with the new index `a` first.
pub(crate) fn covariant(conn: &Connection, t: &Tensor) -> Tensor {
    let grid = conn.grid();
    let dim = t.dim;
    let len = grid.len();
    let gamma = &conn.gamma.values;
    let block = t.data.len();
    let mut out = Tensor::zeros(t.rank + 1, dim, len);
    for a in 0..dim {
        for flat in 0..block {
            let mut comp = stencil::d1(&grid, &t.data[flat], a);
            let idx = t.unflatten(flat);
            for s in 0..t.rank {
                let mut moved = idx.clone();
                for c in 0..dim {
                    moved[s] = c;
                    let src = &t.data[t.flatten(&moved)];
                    let i_s = idx[s];
                    for (node, v) in comp.iter_mut().enumerate() {
                        *v -= gamma[node][c][a][i_s] * src[node];
                    }
                }
            }
            out.data[a * block + flat] = comp;
        }
    }
    out
}

/// Contraction of the first two indices with `g^{ab}`.
pub(crate) fn trace_first_pair(conn: &Connection, t: &Tensor) -> Tensor {
    assert!(t.rank >= 2);
    let dim = t.dim;
    let len = conn.grid().len();
    let inv = conn.inverse();
    let rest = dim.pow((t.rank - 2) as u32);
    let mut out = Tensor::zeros(t.rank - 2, dim, len);
    for a in 0..dim {
        for b in 0..dim {
            for r in 0..rest {
                let src = &t.data[(a * dim + b) * rest + r];
                for (node, v) in out.data[r].iter_mut().enumerate() {
                    *v += inv[node][a][b] * src[node];
                }
            }
        }
    }
    out
}

/// Rough Laplacian `g^{ab} ∇_a ∇_b T`.
pub(crate) fn rough_laplacian(conn: &Connection, t: &Tensor) -> Tensor {
    trace_first_pair(conn, &covariant(conn, &covariant(conn, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, MetricField};

    #[test]
    fn index_round_trip() {
        let t = Tensor::zeros(3, 2, 1);
        for flat in 0..8 {
            assert_eq!(t.flatten(&t.unflatten(flat)), flat);
        }
    }

    #[test]
    fn metric_is_parallel() {
        let grid = Grid::torus(2, 32).unwrap();
        let g = MetricField::from_fn(grid, |p| {
            [[1.0 + 0.2 * p[0].sin(), 0.1 * p[1].cos()], [0.1 * p[1].cos(), 1.0 + 0.1 * p[0].cos()]]
        })
        .unwrap();
        let conn = Connection::new(&g).unwrap();
        let dg = covariant(&conn, &Tensor::from_sym(g.as_tensor()));
        let worst = dg.data.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-4, "{worst}");
    }
}
