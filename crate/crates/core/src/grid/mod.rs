//! Discrete Riemannian calculus on flat periodic grids.
//!
//! Fields are sampled on a uniform `n^dim` torus grid (`dim ∈ {1, 2}`) and every
//! spatial derivative is a fourth-order central difference. Per-node tensors are
//! stored in fixed `2 × 2` blocks; when `dim == 1` only the `[0][0]` entry is used.
//!
//! Curvature sign convention: `R_ijkl` is stored so that `R_ij = g^{kl} R_kilj`
//! and the round sphere has positive scalar curvature (`R = 2` for the unit
//! two-sphere). Equivalently `R_ipjq g^{pq} = R_ij`, and in two dimensions
//! `R_ipjq = (R/2)(g_ij g_pq - g_iq g_pj)`.

pub mod curvature;
pub mod linalg;
pub mod map;
pub mod metric;
pub mod scalar;
pub mod stencil;
pub(crate) mod tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};

pub use curvature::{curvature, lichnerowicz_laplacian, riemann_norm, Curvature};
pub use map::{map_calculus, s_fields, target_curvature_term, MapCalculus};
pub use metric::{christoffel, metric_algebra, ChristoffelField, MetricAlgebra};
pub use scalar::{integrate, scalar_calculus, LaplaceBeltrami, ScalarCalculus};

pub const MAX_DIM: usize = 2;

/// Metrics with a node eigenvalue below this are treated as singular.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

pub type Vec2 = [f64; MAX_DIM];
pub type Mat2 = [[f64; MAX_DIM]; MAX_DIM];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

/// Uniform periodic grid of `n` nodes per axis and period `L` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
    period: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, period: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(RhError::InvalidGrid(format!("dimension {dim} not in {{1, 2}}")));
        }
        if n < 8 {
            return Err(RhError::InvalidGrid(format!("{n} nodes per axis, need at least 8")));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(RhError::InvalidGrid(format!("period {period} must be positive")));
        }
        Ok(Self { dim, n, period })
    }

    /// The `2π`-periodic torus.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::new(dim, n, std::f64::consts::TAU)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.n as f64
    }

    /// Coordinate volume of one cell, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node index of the (wrapped) integer position.
    pub fn index(&self, pos: [isize; MAX_DIM]) -> usize {
        let n = self.n as isize;
        let ix = pos[0].rem_euclid(n) as usize;
        if self.dim == 1 {
            ix
        } else {
            ix + self.n * pos[1].rem_euclid(n) as usize
        }
    }

    pub fn position(&self, node: usize) -> [isize; MAX_DIM] {
        if self.dim == 1 {
            [node as isize, 0]
        } else {
            [(node % self.n) as isize, (node / self.n) as isize]
        }
    }

    pub fn coords(&self, node: usize) -> Vec2 {
        let p = self.position(node);
        let h = self.spacing();
        [p[0] as f64 * h, p[1] as f64 * h]
    }

    /// Neighbour `offset` steps away along `axis`.
    pub fn shift(&self, node: usize, axis: usize, offset: isize) -> usize {
        let mut p = self.position(node);
        p[axis] += offset;
        self.index(p)
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(RhError::Shape(format!("grid {self:?} vs {other:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub values: Vec<Vec2>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![[0.0; MAX_DIM]; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> Vec2) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }
}

/// Per-node symmetric `dim × dim` tensor with lower indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub grid: Grid,
    pub values: Vec<Mat2>,
}

impl SymTensorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![[[0.0; MAX_DIM]; MAX_DIM]; grid.len()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> Mat2) -> Self {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                let mut m = f(grid.coords(i));
                symmetrize(&mut m, dim);
                m
            })
            .collect();
        Self { grid, values }
    }

    pub fn component(&self, i: usize, j: usize) -> Vec<f64> {
        self.values.iter().map(|m| m[i][j]).collect()
    }

    /// Largest absolute component over all nodes.
    pub fn sup_norm(&self) -> f64 {
        let dim = self.grid.dim();
        self.values.iter().fold(0.0, |acc, m| {
            let mut a: f64 = acc;
            for row in m.iter().take(dim) {
                for v in row.iter().take(dim) {
                    a = a.max(v.abs());
                }
            }
            a
        })
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|m| scale_mat(m, c)).collect(),
        }
    }

    pub fn sub(&self, other: &SymTensorField) -> Self {
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| {
                    let mut out = *a;
                    for i in 0..MAX_DIM {
                        for j in 0..MAX_DIM {
                            out[i][j] -= b[i][j];
                        }
                    }
                    out
                })
                .collect(),
        }
    }
}

pub(crate) fn symmetrize(m: &mut Mat2, dim: usize) {
    if dim == 1 {
        *m = [[m[0][0], 0.0], [0.0, 0.0]];
    } else {
        let off = 0.5 * (m[0][1] + m[1][0]);
        m[0][1] = off;
        m[1][0] = off;
    }
}

pub(crate) fn scale_mat(m: &Mat2, c: f64) -> Mat2 {
    let mut out = *m;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= c;
        }
    }
    out
}

/// Riemannian metric `g_ij`, symmetric at every node.
///
/// Positive-definiteness is checked by [`metric_algebra`], which reports the
/// offending node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField(SymTensorField);

impl MetricField {
    pub fn new(field: SymTensorField) -> Result<Self> {
        let dim = field.grid.dim();
        for (node, m) in field.values.iter().enumerate() {
            if (0..dim).any(|i| (0..dim).any(|j| !m[i][j].is_finite())) {
                return Err(RhError::InvalidArgument(format!("non-finite metric at node {node}")));
            }
        }
        let mut field = field;
        for m in field.values.iter_mut() {
            symmetrize(m, dim);
        }
        Ok(Self(field))
    }

    pub fn flat(grid: Grid) -> Self {
        Self::constant(grid, 1.0)
    }

    /// `c · δ`.
    pub fn constant(grid: Grid, c: f64) -> Self {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in m.iter_mut().enumerate().take(grid.dim()) {
            row[i] = c;
        }
        Self(SymTensorField { grid, values: vec![m; grid.len()] })
    }

    /// `e^{2u} δ`.
    pub fn conformal(grid: Grid, u: impl Fn(Vec2) -> f64) -> Self {
        let dim = grid.dim();
        Self(SymTensorField::from_fn(grid, |x| {
            let e = (2.0 * u(x)).exp();
            let mut m = [[0.0; MAX_DIM]; MAX_DIM];
            for (i, row) in m.iter_mut().enumerate().take(dim) {
                row[i] = e;
            }
            m
        }))
    }

    pub fn from_fn(grid: Grid, f: impl Fn(Vec2) -> Mat2) -> Result<Self> {
        Self::new(SymTensorField::from_fn(grid, f))
    }

    pub fn grid(&self) -> Grid {
        self.0.grid
    }

    pub fn dim(&self) -> usize {
        self.0.grid.dim()
    }

    pub fn values(&self) -> &[Mat2] {
        &self.0.values
    }

    pub fn as_tensor(&self) -> &SymTensorField {
        &self.0
    }

    pub fn into_tensor(self) -> SymTensorField {
        self.0
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.scaled(c))
    }

    /// Smallest eigenvalue over all nodes together with the node where it occurs.
    pub fn min_eigenvalue(&self) -> (usize, f64) {
        let dim = self.dim();
        self.0
            .values
            .iter()
            .enumerate()
            .map(|(i, m)| (i, linalg::sym_eigenvalues(m, dim)[0]))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
    }
}

/// Target manifold of the map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    /// The real line; every target-curvature term vanishes.
    FlatScalar,
    /// Round sphere `S^n ⊂ R^{n+1}` of radius `ρ`.
    Sphere { sphere_dim: usize, radius: f64 },
}

impl TargetSpec {
    pub fn sphere(sphere_dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(RhError::InvalidArgument(format!("sphere radius {radius} must be positive")));
        }
        if sphere_dim == 0 {
            return Err(RhError::InvalidArgument("sphere dimension must be ≥ 1".into()));
        }
        Ok(Self::Sphere { sphere_dim, radius })
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            Self::FlatScalar => 1,
            Self::Sphere { sphere_dim, .. } => sphere_dim + 1,
        }
    }

    /// Upper bound `c₀` on the target's sectional curvature.
    pub fn sectional_curvature_bound(&self) -> f64 {
        match self {
            Self::FlatScalar => 0.0,
            Self::Sphere { radius, .. } => 1.0 / (radius * radius),
        }
    }

    pub fn radius(&self) -> Option<f64> {
        match self {
            Self::FlatScalar => None,
            Self::Sphere { radius, .. } => Some(*radius),
        }
    }
}

/// Map `φ: M → N ⊂ R^d`, stored node-major with `d` components per node.
#[derive(Clone, Debug, PartialEq)]
pub struct MapField {
    pub grid: Grid,
    pub components: usize,
    pub values: Vec<f64>,
}

impl MapField {
    pub fn from_fn(grid: Grid, components: usize, f: impl Fn(Vec2) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * components);
        for node in 0..grid.len() {
            let v = f(grid.coords(node));
            assert_eq!(v.len(), components, "map component count");
            values.extend_from_slice(&v);
        }
        Self { grid, components, values }
    }

    pub fn constant(grid: Grid, value: &[f64]) -> Self {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub fn at(&self, node: usize) -> &[f64] {
        &self.values[node * self.components..(node + 1) * self.components]
    }

    pub fn component(&self, lambda: usize) -> Vec<f64> {
        (0..self.grid.len()).map(|n| self.values[n * self.components + lambda]).collect()
    }

    /// Radially project every node back onto the target.
    pub fn project(&mut self, target: &TargetSpec) {
        if let TargetSpec::Sphere { radius, .. } = target {
            for chunk in self.values.chunks_mut(self.components) {
                let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in chunk.iter_mut() {
                        *v *= radius / norm;
                    }
                }
            }
        }
    }

    /// Worst constraint violation `(node, ||φ| - ρ|)`; zero for the flat target.
    pub fn constraint_violation(&self, target: &TargetSpec) -> (usize, f64) {
        match target {
            TargetSpec::FlatScalar => (0, 0.0),
            TargetSpec::Sphere { radius, .. } => self
                .values
                .chunks(self.components)
                .enumerate()
                .map(|(i, c)| (i, (c.iter().map(|v| v * v).sum::<f64>().sqrt() - radius).abs()))
                .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a }),
        }
    }

    pub(crate) fn check_target(&self, target: &TargetSpec) -> Result<()> {
        if self.components != target.embedding_dim() {
            return Err(RhError::Shape(format!(
                "map has {} components, target embeds in R^{}",
                self.components,
                target.embedding_dim()
            )));
        }
        let (node, deviation) = self.constraint_violation(target);
        if deviation > 1e-8 {
            return Err(RhError::OffTarget { node, deviation });
        }
        Ok(())
    }
}
