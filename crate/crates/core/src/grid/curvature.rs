use super::metric::Connection;
use super::tensor::{self, Tensor};
use super::{stencil, Grid, Mat2, MetricField, ScalarField, SymTensorField, MAX_DIM};
use crate::error::Result;

/// `values[node][a][b][c][d] = R_abcd` in the stored convention (see module docs).
pub type Riemann = [[[[f64; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];

#[derive(Clone, Debug)]
pub struct FullCurvatureField {
    pub grid: Grid,
    pub values: Vec<Riemann>,
}

#[derive(Clone, Debug)]
pub struct Curvature {
    pub riemann: FullCurvatureField,
    pub ricci: SymTensorField,
    pub scalar: ScalarField,
}

pub fn curvature(g: &MetricField) -> Result<Curvature> {
    Ok(curvature_of(&Connection::new(g)?))
}

pub(crate) fn curvature_of(conn: &Connection) -> Curvature {
    let grid = conn.grid();
    let dim = grid.dim();
    let gam = &conn.gamma.values;
    let metric = conn.metric.values();
    let inv = conn.inverse();

    // ∂_i Γ^l_jk, indexed [i][l][j][k][node].
    let mut dgam = vec![vec![vec![vec![Vec::new(); dim]; dim]; dim]; dim];
    for l in 0..dim {
        for j in 0..dim {
            for k in j..dim {
                let comp: Vec<f64> = gam.iter().map(|g| g[l][j][k]).collect();
                for (i, d) in stencil::gradient(&grid, &comp).into_iter().enumerate() {
                    dgam[i][l][k][j] = d.clone();
                    dgam[i][l][j][k] = d;
                }
            }
        }
    }

    let mut riemann = Vec::with_capacity(grid.len());
    let mut ricci = Vec::with_capacity(grid.len());
    let mut scalar = Vec::with_capacity(grid.len());
    for node in 0..grid.len() {
        let gm = &gam[node];
        // R^l_ijk = ∂_iΓ^l_jk − ∂_jΓ^l_ik + Γ^p_jk Γ^l_ip − Γ^p_ik Γ^l_jp.
        let mut up = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for (l, ul) in up.iter_mut().enumerate().take(dim) {
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        let mut v = dgam[i][l][j][k][node] - dgam[j][l][i][k][node];
                        for p in 0..dim {
                            v += gm[p][j][k] * gm[l][i][p] - gm[p][i][k] * gm[l][j][p];
                        }
                        ul[i][j][k] = v;
                    }
                }
            }
        }
        // Stored R_abcd = g_cm R^m_abd.
        let mut r: Riemann = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    for d in 0..dim {
                        r[a][b][c][d] = (0..dim).map(|m| metric[node][c][m] * up[m][a][b][d]).sum();
                    }
                }
            }
        }
        let mut ric: Mat2 = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                ric[i][j] = (0..dim).map(|k| up[k][k][i][j]).sum();
            }
        }
        super::symmetrize(&mut ric, dim);
        scalar.push(super::linalg::contract(&inv[node], &ric, dim));
        ricci.push(ric);
        riemann.push(r);
    }
    Curvature {
        riemann: FullCurvatureField { grid, values: riemann },
        ricci: SymTensorField { grid, values: ricci },
        scalar: ScalarField { grid, values: scalar },
    }
}

/// Pointwise `|Rm|_g`.
pub fn riemann_norm(g: &MetricField, rm: &FullCurvatureField) -> Result<ScalarField> {
    let conn = Connection::new(g)?;
    Ok(riemann_norm_with(conn.inverse(), rm, g.dim()))
}

pub(crate) fn riemann_norm_with(inv: &[Mat2], rm: &FullCurvatureField, dim: usize) -> ScalarField {
    let values = rm
        .values
        .iter()
        .zip(inv)
        .map(|(r, gi)| {
            let mut raised = [[[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM]; MAX_DIM];
            for a in 0..dim {
                for b in 0..dim {
                    for c in 0..dim {
                        for d in 0..dim {
                            let mut s = 0.0;
                            for p in 0..dim {
                                for q in 0..dim {
                                    for u in 0..dim {
                                        for v in 0..dim {
                                            s += gi[a][p] * gi[b][q] * gi[c][u] * gi[d][v] * r[p][q][u][v];
                                        }
                                    }
                                }
                            }
                            raised[a][b][c][d] = s;
                        }
                    }
                }
            }
            let mut sum = 0.0;
            for a in 0..dim {
                for b in 0..dim {
                    for c in 0..dim {
                        for d in 0..dim {
                            sum += raised[a][b][c][d] * r[a][b][c][d];
                        }
                    }
                }
            }
            sum.max(0.0).sqrt()
        })
        .collect();
    ScalarField { grid: rm.grid, values }
}

/// `Δ_L t_ij = Δt_ij + 2R_ipjq t^pq − R_i^p t_pj − R_j^p t_pi`.
pub fn lichnerowicz_laplacian(g: &MetricField, t: &SymTensorField) -> Result<SymTensorField> {
    g.grid().ensure_same(&t.grid)?;
    let conn = Connection::new(g)?;
    let curv = curvature_of(&conn);
    Ok(lichnerowicz_with(&conn, &curv, t))
}

pub(crate) fn lichnerowicz_with(conn: &Connection, curv: &Curvature, t: &SymTensorField) -> SymTensorField {
    let grid = conn.grid();
    let rough = tensor::rough_laplacian(conn, &Tensor::from_sym(t)).to_sym(grid);
    let correction = curvature_correction(conn.inverse(), curv, t, grid.dim());
    let values = rough
        .values
        .iter()
        .zip(&correction)
        .map(|(a, b)| {
            let mut m = *a;
            for i in 0..MAX_DIM {
                for j in 0..MAX_DIM {
                    m[i][j] += b[i][j];
                }
            }
            m
        })
        .collect();
    SymTensorField { grid, values }
}

pub(crate) fn curvature_correction(inv: &[Mat2], curv: &Curvature, t: &SymTensorField, dim: usize) -> Vec<Mat2> {
    (0..t.values.len())
        .map(|node| {
            let gi = &inv[node];
            let r = &curv.riemann.values[node];
            let ric = &curv.ricci.values[node];
            let tl = &t.values[node];
            let t_up = super::linalg::matmul(&super::linalg::matmul(gi, tl, dim), gi, dim);
            let ric_mixed = super::linalg::matmul(ric, gi, dim);
            let mut out = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..dim {
                for j in 0..dim {
                    let mut v = 0.0;
                    for p in 0..dim {
                        for q in 0..dim {
                            v += 2.0 * r[i][p][j][q] * t_up[p][q];
                        }
                        v -= ric_mixed[i][p] * tl[p][j] + ric_mixed[j][p] * tl[p][i];
                    }
                    out[i][j] = v;
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conformal_scalar_error(n: usize) -> f64 {
        let grid = Grid::torus(2, n).unwrap();
        let u = |p: [f64; 2]| 0.2 * p[0].cos() * p[1].cos();
        let curv = curvature(&MetricField::conformal(grid, u)).unwrap();
        (0..grid.len()).fold(0.0f64, |m, node| {
            let p = grid.coords(node);
            // R = −2 e^{−2u} Δ₀u with Δ₀u = −2u.
            let exact = -2.0 * (-2.0 * u(p)).exp() * (-2.0 * u(p));
            m.max((curv.scalar.values[node] - exact).abs())
        })
    }

    #[test]
    fn conformal_scalar_curvature_fourth_order() {
        let (e1, e2) = (conformal_scalar_error(16), conformal_scalar_error(32));
        assert!(e2 < 1e-3, "{e2}");
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn flat_metric_has_no_curvature() {
        let grid = Grid::torus(2, 8).unwrap();
        let c = curvature(&MetricField::flat(grid)).unwrap();
        assert!(c.scalar.sup_norm() == 0.0);
        assert!(c.ricci.sup_norm() == 0.0);
    }

    fn wavy(grid: Grid) -> MetricField {
        MetricField::from_fn(grid, |p| {
            let a = 1.0 + 0.3 * p[0].sin() * p[1].cos();
            let c = 1.2 + 0.2 * (p[0] + p[1]).cos();
            let b = 0.15 * (2.0 * p[1]).sin();
            [[a, b], [b, c]]
        })
        .unwrap()
    }

    #[test]
    fn scaling_laws() {
        let grid = Grid::torus(2, 24).unwrap();
        let g = wavy(grid);
        let c1 = curvature(&g).unwrap();
        let c4 = curvature(&g.scaled(4.0)).unwrap();
        for node in 0..grid.len() {
            assert!((c4.scalar.values[node] - c1.scalar.values[node] / 4.0).abs() < 1e-12);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((c4.ricci.values[node][i][j] - c1.ricci.values[node][i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn riemann_symmetries_and_traces() {
        let grid = Grid::torus(2, 32).unwrap();
        let g = wavy(grid);
        let conn = Connection::new(&g).unwrap();
        let c = curvature_of(&conn);
        let tol = 10.0 * grid.spacing().powi(4) * c.scalar.sup_norm();
        for node in 0..grid.len() {
            let r = &c.riemann.values[node];
            let gi = &conn.inverse()[node];
            let gm = &g.values()[node];
            for a in 0..2 {
                for b in 0..2 {
                    for cc in 0..2 {
                        for d in 0..2 {
                            assert!((r[a][b][cc][d] + r[b][a][cc][d]).abs() < 1e-12);
                            // The remaining symmetries hold up to discretization.
                            assert!((r[a][b][cc][d] + r[a][b][d][cc]).abs() < tol);
                            assert!((r[a][b][cc][d] - r[cc][d][a][b]).abs() < tol);
                        }
                    }
                }
            }
            // R_ij = g^{kl} R_kilj and the 2D identity R_ipjq = (R/2)(g_ij g_pq − g_iq g_pj).
            let s = c.scalar.values[node];
            for i in 0..2 {
                for j in 0..2 {
                    let mut tr = 0.0;
                    for k in 0..2 {
                        for l in 0..2 {
                            tr += gi[k][l] * r[k][i][l][j];
                        }
                    }
                    assert!((tr - c.ricci.values[node][i][j]).abs() < tol);
                    for p in 0..2 {
                        for q in 0..2 {
                            let exact = 0.5 * s * (gm[i][j] * gm[p][q] - gm[i][q] * gm[p][j]);
                            assert!((r[i][p][j][q] - exact).abs() < tol);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn riemann_norm_in_two_dimensions_is_scalar() {
        let grid = Grid::torus(2, 32).unwrap();
        let g = wavy(grid);
        let c = curvature(&g).unwrap();
        let norm = riemann_norm(&g, &c.riemann).unwrap();
        for (n, s) in norm.values.iter().zip(&c.scalar.values) {
            assert!((n - s.abs()).abs() < 1e-4);
        }
    }

    #[test]
    fn lichnerowicz_flat_reductions() {
        let grid = Grid::torus(2, 32).unwrap();
        let flat = MetricField::flat(grid);
        let t = SymTensorField::from_fn(grid, |_| [[1.0, 0.5], [0.5, 2.0]]);
        assert!(lichnerowicz_laplacian(&flat, &t).unwrap().sup_norm() < 1e-12);

        let mut errs = Vec::new();
        for n in [16, 32] {
            let grid = Grid::torus(2, n).unwrap();
            let t = SymTensorField::from_fn(grid, |p| [[p[0].sin(), 0.0], [0.0, p[0].sin()]]);
            let expect = t.scaled(-1.0);
            errs.push(lichnerowicz_laplacian(&MetricField::flat(grid), &t).unwrap().sub(&expect).sup_norm());
        }
        let ratio = errs[0] / errs[1];
        assert!(errs[1] < 1e-4 && (12.0..20.0).contains(&ratio), "{errs:?}");
    }

    #[test]
    fn lichnerowicz_correction_matches_dense_contraction() {
        let grid = Grid::torus(2, 16).unwrap();
        let g = wavy(grid);
        let conn = Connection::new(&g).unwrap();
        let curv = curvature_of(&conn);
        let t = SymTensorField::from_fn(grid, |p| [[p[1].cos(), 0.3 * p[0].sin()], [0.3 * p[0].sin(), 1.0]]);
        let fast = curvature_correction(conn.inverse(), &curv, &t, 2);
        for node in 0..grid.len() {
            let gi = conn.inverse()[node];
            let r = curv.riemann.values[node];
            let ric = curv.ricci.values[node];
            let tl = t.values[node];
            for i in 0..2 {
                for j in 0..2 {
                    // Oracle: every index raised explicitly with g^{..}.
                    let mut v = 0.0;
                    for p in 0..2 {
                        for q in 0..2 {
                            for a in 0..2 {
                                for b in 0..2 {
                                    v += 2.0 * r[i][p][j][q] * gi[p][a] * gi[q][b] * tl[a][b];
                                }
                            }
                            v -= ric[i][p] * gi[p][q] * tl[q][j] + ric[j][p] * gi[p][q] * tl[q][i];
                        }
                    }
                    assert!((v - fast[node][i][j]).abs() < 1e-12);
                }
            }
        }
        // Δ_L g = 0 follows from the trace identities.
        let dl = lichnerowicz_with(&conn, &curv, g.as_tensor());
        let tol = 10.0 * grid.spacing().powi(4) * curv.scalar.sup_norm();
        assert!(dl.sup_norm() < tol, "{} vs {tol}", dl.sup_norm());
    }
}
