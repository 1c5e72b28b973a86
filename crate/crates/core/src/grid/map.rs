use super::metric::Connection;
use super::{linalg, stencil, MapField, MetricField, ScalarField, SymTensorField, TargetSpec, MAX_DIM};
use crate::error::{Result, RhError};

/// Derivatives of a map `φ: M → N ⊂ R^d`.
///
/// `grad[i]` and `hessian[i][j]` are themselves `d`-component fields.
#[derive(Clone, Debug)]
pub struct MapCalculus {
    pub grad: Vec<MapField>,
    pub energy_density: ScalarField,
    pub outer: SymTensorField,
    pub hessian: Vec<Vec<MapField>>,
    pub tension: MapField,
}

impl MapCalculus {
    /// `|∇²φ|²_g` at each node.
    pub fn hessian_norm_sq(&self, inv: &[super::Mat2]) -> Vec<f64> {
        let dim = self.grad.len();
        let d = self.tension.components;
        (0..self.tension.grid.len())
            .map(|node| {
                let gi = &inv[node];
                let mut s = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        for a in 0..dim {
                            for b in 0..dim {
                                let w = gi[i][a] * gi[j][b];
                                if w == 0.0 {
                                    continue;
                                }
                                let (x, y) = (self.hessian[i][j].at(node), self.hessian[a][b].at(node));
                                s += w * (0..d).map(|l| x[l] * y[l]).sum::<f64>();
                            }
                        }
                    }
                }
                s
            })
            .collect()
    }
}

fn tangent_project(v: &mut [f64], p: &[f64], radius: f64) {
    let r2 = radius * radius;
    let dot: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
    for (x, y) in v.iter_mut().zip(p) {
        *x -= dot * y / r2;
    }
}

pub fn map_calculus(g: &MetricField, phi: &MapField, target: &TargetSpec) -> Result<MapCalculus> {
    g.grid().ensure_same(&phi.grid)?;
    phi.check_target(target)?;
    Ok(map_calculus_with(&Connection::new(g)?, phi, target))
}

pub(crate) fn map_calculus_with(conn: &Connection, phi: &MapField, target: &TargetSpec) -> MapCalculus {
    let grid = conn.grid();
    let dim = grid.dim();
    let d = phi.components;
    let len = grid.len();
    let comps: Vec<Vec<f64>> = (0..d).map(|l| phi.component(l)).collect();

    let interleave = |per_comp: Vec<Vec<f64>>| {
        let mut values = vec![0.0; len * d];
        for (l, c) in per_comp.into_iter().enumerate() {
            for (node, v) in c.into_iter().enumerate() {
                values[node * d + l] = v;
            }
        }
        MapField { grid, components: d, values }
    };

    let grad: Vec<MapField> =
        (0..dim).map(|i| interleave(comps.iter().map(|c| stencil::d1(&grid, c, i)).collect())).collect();
    let mut hessian: Vec<Vec<MapField>> = vec![Vec::with_capacity(dim); dim];
    for i in 0..dim {
        for j in 0..dim {
            let raw = if j < i {
                hessian[j][i].clone()
            } else {
                interleave(comps.iter().map(|c| stencil::d11(&grid, c, i, j)).collect())
            };
            hessian[i].push(raw);
        }
    }

    let inv = conn.inverse();
    let gamma = &conn.gamma.values;
    let radius = target.radius();
    let mut outer = Vec::with_capacity(len);
    let mut energy = Vec::with_capacity(len);
    let mut tension = vec![0.0; len * d];
    for node in 0..len {
        let mut o = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                o[i][j] = grad[i].at(node).iter().zip(grad[j].at(node)).map(|(a, b)| a * b).sum();
            }
        }
        energy.push(linalg::contract(&inv[node], &o, dim));
        outer.push(o);

        let p = phi.at(node).to_vec();
        let t = &mut tension[node * d..(node + 1) * d];
        for i in 0..dim {
            for j in 0..dim {
                let base = node * d;
                let mut h = hessian[i][j].values[base..base + d].to_vec();
                for (k, gk) in gamma[node].iter().enumerate().take(dim) {
                    let dk = grad[k].at(node);
                    for (hl, dl) in h.iter_mut().zip(dk) {
                        *hl -= gk[i][j] * dl;
                    }
                }
                if let Some(rho) = radius {
                    tangent_project(&mut h, &p, rho);
                }
                for (tl, hl) in t.iter_mut().zip(&h) {
                    *tl += inv[node][i][j] * hl;
                }
                hessian[i][j].values[base..base + d].copy_from_slice(&h);
            }
        }
    }
    MapCalculus {
        grad,
        energy_density: ScalarField { grid, values: energy },
        outer: SymTensorField { grid, values: outer },
        hessian,
        tension: MapField { grid, components: d, values: tension },
    }
}

/// `⟨Rm^N(∇_iφ, ∇_jφ)∇_jφ, ∇_iφ⟩`; for a round sphere `(|∇φ|⁴ − |∇φ⊗∇φ|²)/ρ²`.
pub fn target_curvature_term(g: &MetricField, phi: &MapField, target: &TargetSpec) -> Result<ScalarField> {
    let conn = Connection::new(g)?;
    phi.check_target(target)?;
    let mc = map_calculus_with(&conn, phi, target);
    Ok(target_term_with(conn.inverse(), &mc, target))
}

pub(crate) fn target_term_with(inv: &[super::Mat2], mc: &MapCalculus, target: &TargetSpec) -> ScalarField {
    let grid = mc.energy_density.grid;
    let dim = grid.dim();
    let k = target.sectional_curvature_bound();
    let values = (0..grid.len())
        .map(|node| {
            if k == 0.0 {
                return 0.0;
            }
            let e = mc.energy_density.values[node];
            k * (e * e - linalg::norm_sq(&inv[node], &mc.outer.values[node], dim))
        })
        .collect();
    ScalarField { grid, values }
}

/// `S_ij = R_ij − α ∇_iφ·∇_jφ` and its trace `S = R − α|∇φ|²`.
pub fn s_fields(g: &MetricField, phi: &MapField, alpha: f64) -> Result<(SymTensorField, ScalarField)> {
    if !(alpha >= 0.0) {
        return Err(RhError::InvalidArgument(format!("coupling α = {alpha} must be non-negative")));
    }
    g.grid().ensure_same(&phi.grid)?;
    let conn = Connection::new(g)?;
    let curv = super::curvature::curvature_of(&conn);
    let outer = outer_product(&conn, phi);
    Ok(s_fields_with(conn.inverse(), &curv.ricci, &outer, alpha))
}

pub(crate) fn outer_product(conn: &Connection, phi: &MapField) -> SymTensorField {
    let grid = conn.grid();
    let dim = grid.dim();
    let grads: Vec<Vec<Vec<f64>>> =
        (0..phi.components).map(|l| stencil::gradient(&grid, &phi.component(l))).collect();
    let values = (0..grid.len())
        .map(|node| {
            let mut o = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..dim {
                for j in 0..dim {
                    o[i][j] = grads.iter().map(|gl| gl[i][node] * gl[j][node]).sum();
                }
            }
            o
        })
        .collect();
    SymTensorField { grid, values }
}

pub(crate) fn s_fields_with(
    inv: &[super::Mat2],
    ricci: &SymTensorField,
    outer: &SymTensorField,
    alpha: f64,
) -> (SymTensorField, ScalarField) {
    let dim = ricci.grid.dim();
    let sij = ricci.sub(&outer.scaled(alpha));
    let s = sij.values.iter().zip(inv).map(|(m, gi)| linalg::contract(gi, m, dim)).collect();
    (sij, ScalarField { grid: ricci.grid, values: s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::{scalar_calculus, Grid};

    fn sphere() -> TargetSpec {
        TargetSpec::sphere(2, 1.0).unwrap()
    }

    #[test]
    fn constant_map_has_vanishing_derivatives() {
        let grid = Grid::torus(2, 16).unwrap();
        let phi = MapField::constant(grid, &[0.0, 0.6, 0.8]);
        let g = fixtures::smooth_metric(grid, 3, 0.2);
        let mc = map_calculus(&g, &phi, &sphere()).unwrap();
        assert!(mc.energy_density.sup_norm() < 1e-12);
        assert!(mc.outer.sup_norm() < 1e-12);
        assert!(mc.tension.values.iter().all(|v| v.abs() < 1e-12));
        assert!(mc.hessian.iter().flatten().flat_map(|h| &h.values).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn equator_map_is_harmonic_with_unit_energy() {
        let grid = Grid::torus(2, 64).unwrap();
        let phi = fixtures::equator_map(grid);
        let g = MetricField::flat(grid);
        let mc = map_calculus(&g, &phi, &sphere()).unwrap();
        assert!(mc.energy_density.values.iter().all(|e| (e - 1.0).abs() < 1e-5));
        assert!(mc.tension.values.iter().all(|v| v.abs() < 1e-12));
        let k = target_curvature_term(&g, &phi, &sphere()).unwrap();
        assert!(k.sup_norm() < 1e-12);
    }

    #[test]
    fn tension_is_tangent_and_scales() {
        let grid = Grid::torus(2, 32).unwrap();
        let phi = fixtures::smooth_sphere_map(grid, 11, 1.0, 1.5);
        let g = fixtures::smooth_metric(grid, 5, 0.2);
        let target = TargetSpec::sphere(2, 1.5).unwrap();
        let mc = map_calculus(&g, &phi, &target).unwrap();
        for node in 0..grid.len() {
            let dot: f64 = mc.tension.at(node).iter().zip(phi.at(node)).map(|(a, b)| a * b).sum();
            assert!(dot.abs() <= 1e-10 * 1.5);
        }
        let mc4 = map_calculus(&g.scaled(4.0), &phi, &target).unwrap();
        for (a, b) in mc4.tension.values.iter().zip(&mc.tension.values) {
            assert!((a - b / 4.0).abs() < 1e-12);
        }
        for (a, b) in mc4.energy_density.values.iter().zip(&mc.energy_density.values) {
            assert!((a - b / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_target_tension_is_laplace_beltrami() {
        let grid = Grid::torus(2, 32).unwrap();
        let g = fixtures::smooth_metric(grid, 2, 0.3);
        let f = ScalarField::from_fn(grid, |p| p[0].sin() * p[1].cos());
        let phi = MapField { grid, components: 1, values: f.values.clone() };
        let mc = map_calculus(&g, &phi, &TargetSpec::FlatScalar).unwrap();
        let sc = scalar_calculus(&g, &f).unwrap();
        for (a, b) in mc.tension.values.iter().zip(&sc.laplacian.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(target_curvature_term(&g, &phi, &TargetSpec::FlatScalar).unwrap().sup_norm() == 0.0);
    }

    #[test]
    fn target_term_matches_brute_force_pair_sum() {
        let grid = Grid::torus(2, 16).unwrap();
        let phi = fixtures::smooth_sphere_map(grid, 4, 1.0, 2.0);
        let g = fixtures::smooth_metric(grid, 8, 0.25);
        let target = TargetSpec::sphere(2, 2.0).unwrap();
        let conn = Connection::new(&g).unwrap();
        let mc = map_calculus_with(&conn, &phi, &target);
        let term = target_term_with(conn.inverse(), &mc, &target);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for node in 0..grid.len() {
            let gi = conn.inverse()[node];
            let dphi = |i: usize| mc.grad[i].at(node);
            // Oracle: Σ g^{ia} g^{jb} ⟨R^N(∂_iφ, ∂_jφ)∂_bφ, ∂_aφ⟩ with the sphere curvature tensor.
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            let rn = (dot(dphi(j), dphi(b)) * dot(dphi(i), dphi(a))
                                - dot(dphi(i), dphi(b)) * dot(dphi(j), dphi(a)))
                                / 4.0;
                            s += gi[i][a] * gi[j][b] * rn;
                        }
                    }
                }
            }
            assert!((s - term.values[node]).abs() < 1e-12 * (1.0 + s.abs()));
            assert!(term.values[node] <= 0.25 * mc.energy_density.values[node].powi(2) + 1e-12);
        }
    }

    #[test]
    fn s_fields_examples() {
        let grid = Grid::torus(2, 64).unwrap();
        let flat = MetricField::flat(grid);
        let (sij, s) = s_fields(&flat, &fixtures::equator_map(grid), 2.0).unwrap();
        assert!(s.values.iter().all(|v| (v + 2.0).abs() < 2e-5));
        for m in &sij.values {
            assert!((m[0][0] + 2.0).abs() < 2e-5 && m[0][1].abs() < 1e-12 && m[1][1].abs() < 1e-12);
        }
        let (sij, s) = s_fields(&flat, &MapField::constant(grid, &[1.0, 0.0, 0.0]), 1.0).unwrap();
        assert!(sij.sup_norm() == 0.0 && s.sup_norm() == 0.0);

        let g = fixtures::smooth_metric(grid, 1, 0.2);
        let (_, s) = s_fields(&g, &MapField::constant(grid, &[1.0, 0.0, 0.0]), 3.0).unwrap();
        let r = crate::grid::curvature(&g).unwrap().scalar;
        assert_eq!(s.values, r.values);
        assert!(s_fields(&g, &MapField::constant(grid, &[1.0, 0.0, 0.0]), -1.0).is_err());
    }

    #[test]
    fn off_target_map_is_rejected() {
        let grid = Grid::torus(2, 8).unwrap();
        let mut phi = MapField::constant(grid, &[1.0, 0.0, 0.0]);
        phi.values[3 * 5] = 1.1;
        match map_calculus(&MetricField::flat(grid), &phi, &sphere()) {
            Err(RhError::OffTarget { node, .. }) => assert_eq!(node, 5),
            other => panic!("{other:?}"),
        }
    }
}
