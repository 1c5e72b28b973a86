//! `L_b`-length of space-time paths, the backwards reduced distance and the
//! backwards reduced volume.
//!
//! Paths are parametrized by `λ = √τ` on uniform nodes, which turns
//! `∫√τ(S + |dη/dτ|²)dτ` into `∫(2λ²S + ½|dη/dλ|²)dλ` with a smooth integrand.
//! Backwards time `τ` is measured from a base time `t₀`: `t = t₀ − τ`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};
use crate::flow::Trajectory;
use crate::functionals::Snapshot;
use crate::grid::{Grid, Mat2, Vec2, MAX_DIM};
use crate::homogeneous::{hom_geometry, HomTrajectory, ModelKind};
use crate::report::{non_decreasing, Verdict};
use crate::schedule::CouplingSchedule;

/// `S`, the metric and their spatial gradients at one space-time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalGeometry {
    pub s: f64,
    pub ds: Vec2,
    pub g: Mat2,
    /// `dg[k] = ∂_k g`.
    pub dg: [Mat2; MAX_DIM],
}

/// A space-time background in one coordinate chart.
pub trait PathSpace: Sync {
    fn dim(&self) -> usize;

    /// Largest backwards time covered.
    fn tau_max(&self) -> f64;

    fn local(&self, x: Vec2, tau: f64) -> LocalGeometry;

    /// Endpoints equivalent to `q` (lattice translates on periodic domains).
    fn endpoint_images(&self, q: Vec2) -> Vec<Vec2> {
        vec![q]
    }
}

/// Uniform-`λ` path with `η(0) = p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscretePath {
    pub tau1: f64,
    /// `K + 1` positions at `λ_k = k√τ₁/K`.
    pub nodes: Vec<Vec2>,
}

pub const MIN_NODES: usize = 16;

impl DiscretePath {
    /// Straight line in `λ` from `p` to `q`.
    pub fn straight(p: Vec2, q: Vec2, tau1: f64, segments: usize) -> Self {
        let nodes = (0..=segments)
            .map(|k| {
                let w = k as f64 / segments as f64;
                [p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1])]
            })
            .collect();
        Self { tau1, nodes }
    }

    /// Nodes `η(λ_k) = f(τ_k)`.
    pub fn from_tau_fn(tau1: f64, segments: usize, f: impl Fn(f64) -> Vec2) -> Self {
        let l1 = tau1.sqrt();
        Self { tau1, nodes: (0..=segments).map(|k| f((k as f64 * l1 / segments as f64).powi(2))).collect() }
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    fn validate(&self, space: &dyn PathSpace) -> Result<()> {
        if self.segments() < MIN_NODES {
            return Err(RhError::InvalidArgument(format!(
                "paths need at least {MIN_NODES} segments, got {}",
                self.segments()
            )));
        }
        if !(self.tau1 > 0.0) || self.tau1 > space.tau_max() * (1.0 + 1e-12) {
            return Err(RhError::InvalidArgument(format!(
                "τ₁ = {} outside the covered range (0, {}]",
                self.tau1,
                space.tau_max()
            )));
        }
        Ok(())
    }
}

/// Segment term `Δλ(2λ_m²S(η_m) + ½|v|²_g)` and its gradients in both endpoints.
fn segment(space: &dyn PathSpace, a: Vec2, b: Vec2, lam_mid: f64, dl: f64) -> (f64, Vec2, Vec2) {
    let dim = space.dim();
    let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let v = [(b[0] - a[0]) / dl, (b[1] - a[1]) / dl];
    let loc = space.local(mid, lam_mid * lam_mid);
    let w = 2.0 * lam_mid * lam_mid;
    let mut kin = 0.0;
    let mut gv = [0.0; MAX_DIM];
    for i in 0..dim {
        for j in 0..dim {
            kin += 0.5 * loc.g[i][j] * v[i] * v[j];
            gv[i] += loc.g[i][j] * v[j];
        }
    }
    let value = dl * (w * loc.s + kin);
    let (mut ga, mut gb) = ([0.0; MAX_DIM], [0.0; MAX_DIM]);
    for k in 0..dim {
        let mut dk = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                dk += 0.5 * loc.dg[k][i][j] * v[i] * v[j];
            }
        }
        let spatial = 0.5 * dl * (w * loc.ds[k] + dk);
        ga[k] = spatial - gv[k];
        gb[k] = spatial + gv[k];
    }
    (value, ga, gb)
}

fn length_and_gradient(space: &dyn PathSpace, tau1: f64, nodes: &[Vec2]) -> (f64, Vec<Vec2>) {
    let k = nodes.len() - 1;
    let dl = tau1.sqrt() / k as f64;
    let mut total = 0.0;
    let mut grad = vec![[0.0; MAX_DIM]; nodes.len()];
    for s in 0..k {
        let (v, ga, gb) = segment(space, nodes[s], nodes[s + 1], (s as f64 + 0.5) * dl, dl);
        total += v;
        for d in 0..MAX_DIM {
            grad[s][d] += ga[d];
            grad[s + 1][d] += gb[d];
        }
    }
    (total, grad)
}

/// `∫₀^{τ₁}√τ(S(η) + |dη/dτ|²_g)dτ` by the midpoint rule in `λ`.
pub fn lb_length(path: &DiscretePath, space: &dyn PathSpace) -> Result<f64> {
    path.validate(space)?;
    Ok(length_and_gradient(space, path.tau1, &path.nodes).0)
}

pub(crate) type Preconditioner<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

/// Limited-memory BFGS with Armijo backtracking.
pub(crate) struct Lbfgs<'a> {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Initial inverse-Hessian action; `None` uses the usual `sᵀy/yᵀy` scaling.
    pub precondition: Option<Preconditioner<'a>>,
}

pub(crate) struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
}

impl Lbfgs<'_> {
    pub(crate) fn minimize(&self, mut x: Vec<f64>, f: impl Fn(&[f64]) -> (f64, Vec<f64>)) -> LbfgsResult {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let inf = |a: &[f64]| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (mut fx, mut g) = f(&x);
        let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
        let mut it = 0;
        while it < self.max_iter && inf(&g) > self.grad_tol {
            it += 1;
            let mut q = g.clone();
            let mut alphas = Vec::with_capacity(hist.len());
            for (s, y, rho) in hist.iter().rev() {
                let a = rho * dot(s, &q);
                q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
                alphas.push(a);
            }
            if let Some(h0) = self.precondition {
                q = h0(&q);
            } else if let Some((s, y, _)) = hist.last() {
                let gamma = dot(s, y) / dot(y, y);
                q.iter_mut().for_each(|v| *v *= gamma);
            }
            for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &q);
                q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
            }
            let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
            let mut slope = dot(&g, &dir);
            if !(slope < 0.0) {
                hist.clear();
                dir = match self.precondition {
                    Some(h0) => h0(&g).iter().map(|v| -v).collect(),
                    None => g.iter().map(|v| -v).collect(),
                };
                slope = dot(&g, &dir);
            }
            let mut step = 1.0;
            let mut accepted = None;
            while step > 1e-16 {
                let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let (fn_, gn) = f(&xn);
                if fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
                step *= 0.5;
            }
            let Some((xn, fn_, gn)) = accepted else { break };
            let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-300 {
                hist.push((s, y, 1.0 / sy));
                if hist.len() > self.memory {
                    hist.remove(0);
                }
            }
            x = xn;
            fx = fn_;
            g = gn;
        }
        LbfgsResult { grad_norm: inf(&g), x, value: fx }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceOptions {
    /// Number of `λ` segments `K`.
    pub segments: usize,
    /// Initial paths: the straight line plus `seeds − 1` perturbations.
    pub seeds: usize,
    /// Target for the per-node Euler–Lagrange residual.
    pub stationarity_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self { segments: 32, seeds: 5, stationarity_tol: 1e-6, max_iter: 2000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedDistance {
    /// `ℓ_b = L / (2√τ₁)`.
    pub ell: f64,
    pub length: f64,
    pub path: DiscretePath,
    /// Largest `|∂L/∂η_k| / Δλ` over interior nodes.
    pub stationarity: f64,
    /// Set when the optimizer stopped above the stationarity target.
    pub approximate: bool,
    /// Final length from every initial path.
    pub seed_lengths: Vec<f64>,
}

fn optimize_path(space: &dyn PathSpace, start: DiscretePath, opts: &DistanceOptions) -> (DiscretePath, f64, f64) {
    let k = start.segments();
    let dim = space.dim();
    let dl = start.tau1.sqrt() / k as f64;
    let (p, q) = (start.nodes[0], start.nodes[k]);
    let pack = |nodes: &[Vec2]| -> Vec<f64> { nodes[1..k].iter().flat_map(|n| n[..dim].to_vec()).collect() };
    let unpack = |x: &[f64]| -> Vec<Vec2> {
        let mut nodes = vec![p];
        for c in x.chunks(dim) {
            nodes.push(if dim == 2 { [c[0], c[1]] } else { [c[0], 0.0] });
        }
        nodes.push(q);
        nodes
    };
    let tau1 = start.tau1;
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let nodes = unpack(x);
        let (v, g) = length_and_gradient(space, tau1, &nodes);
        (v, g[1..k].iter().flat_map(|n| n[..dim].to_vec()).collect())
    };
    // Kinetic part of the Hessian: tridiagonal in the node index, weighted by
    // the mean metric eigenvalue at each segment midpoint of the initial path.
    let weights: Vec<f64> = (0..k)
        .map(|s| {
            let (a, b) = (start.nodes[s], start.nodes[s + 1]);
            let lam = (s as f64 + 0.5) * dl;
            let g = space.local([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])], lam * lam).g;
            (0..dim).map(|i| g[i][i]).sum::<f64>() / (dim as f64 * dl)
        })
        .collect();
    let precondition = |r: &[f64]| -> Vec<f64> {
        let n = k - 1;
        let mut out = vec![0.0; r.len()];
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for comp in 0..dim {
            for j in 0..n {
                let diag = weights[j] + weights[j + 1];
                let (lower, upper) = (-weights[j], -weights[j + 1]);
                let rhs = r[j * dim + comp];
                if j == 0 {
                    c[j] = upper / diag;
                    d[j] = rhs / diag;
                } else {
                    let m = diag - lower * c[j - 1];
                    c[j] = upper / m;
                    d[j] = (rhs - lower * d[j - 1]) / m;
                }
            }
            for j in (0..n).rev() {
                let next = if j + 1 < n { out[(j + 1) * dim + comp] } else { 0.0 };
                out[j * dim + comp] = d[j] - c[j] * next;
            }
        }
        out
    };
    let solver = Lbfgs {
        memory: 10,
        max_iter: opts.max_iter,
        grad_tol: opts.stationarity_tol * dl,
        precondition: Some(&precondition),
    };
    let r = solver.minimize(pack(&start.nodes), eval);
    (DiscretePath { tau1, nodes: unpack(&r.x) }, r.value, r.grad_norm / dl)
}

/// `ℓ_b(q, τ₁)` from the base point `p`.
pub fn reduced_distance(
    space: &dyn PathSpace,
    p: Vec2,
    q: Vec2,
    tau1: f64,
    opts: &DistanceOptions,
) -> Result<ReducedDistance> {
    DiscretePath::straight(p, q, tau1, opts.segments).validate(space)?;
    let images = space.endpoint_images(q);
    // The translate with the shortest straight line gets every seed; the others one each.
    let straight_len: Vec<f64> = images
        .iter()
        .map(|qi| length_and_gradient(space, tau1, &DiscretePath::straight(p, *qi, tau1, opts.segments).nodes).0)
        .collect();
    let primary = (0..images.len()).min_by(|a, b| straight_len[*a].total_cmp(&straight_len[*b])).expect("an image");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<ReducedDistance> = None;
    let mut seed_lengths = Vec::new();
    for (i, qi) in images.iter().enumerate() {
        let tries = if i == primary { opts.seeds.max(1) } else { 1 };
        for s in 0..tries {
            let mut start = DiscretePath::straight(p, *qi, tau1, opts.segments);
            if s > 0 {
                let span = ((qi[0] - p[0]).powi(2) + (qi[1] - p[1]).powi(2)).sqrt();
                let amp = 0.1 * (span + tau1.sqrt());
                let mode = s as f64;
                let dir: Vec2 = [rng.gen_range(-1.0..1.0), if space.dim() == 2 { rng.gen_range(-1.0..1.0) } else { 0.0 }];
                let k = start.segments();
                for (j, n) in start.nodes.iter_mut().enumerate().take(k).skip(1) {
                    let bump = amp * (PI * mode * j as f64 / k as f64).sin();
                    n[0] += bump * dir[0];
                    n[1] += bump * dir[1];
                }
            }
            let (path, length, stationarity) = optimize_path(space, start, opts);
            if i == primary {
                seed_lengths.push(length);
            }
            if best.as_ref().is_none_or(|b| length < b.length) {
                best = Some(ReducedDistance {
                    ell: length / (2.0 * tau1.sqrt()),
                    length,
                    path,
                    stationarity,
                    approximate: stationarity > opts.stationarity_tol,
                    seed_lengths: Vec::new(),
                });
            }
        }
    }
    let mut best = best.expect("at least one optimization");
    best.seed_lengths = seed_lengths;
    Ok(best)
}

/// Samples of a grid trajectory seen backwards from its last sample time.
pub struct GridPathSpace {
    grid: Grid,
    t0: f64,
    /// Sample times, increasing.
    times: Vec<f64>,
    s: Vec<Vec<f64>>,
    g: Vec<Vec<Mat2>>,
    weights: Vec<Vec<f64>>,
}

impl GridPathSpace {
    /// Use the whole trajectory, with `t₀` its final sample time.
    pub fn new(traj: &Trajectory, schedule: &CouplingSchedule) -> Result<Self> {
        let last = traj.samples.last().ok_or_else(|| RhError::InvalidArgument("empty trajectory".into()))?;
        let mut out = Self {
            grid: last.grid(),
            t0: last.t,
            times: Vec::new(),
            s: Vec::new(),
            g: Vec::new(),
            weights: Vec::new(),
        };
        for st in &traj.samples {
            let snap = Snapshot::new(st)?;
            out.times.push(st.t);
            out.s.push(snap.s(schedule.value(st.t)));
            out.g.push(st.g.values().to_vec());
            out.weights.push(snap.conn.weights().to_vec());
        }
        Ok(out)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Bracketing samples and the weight of the later one.
    fn bracket(&self, tau: f64) -> (usize, usize, f64) {
        let t = (self.t0 - tau).clamp(self.times[0], self.t0);
        let n = self.times.len();
        if n == 1 {
            return (0, 0, 0.0);
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, n - 1);
        let w = (t - self.times[k - 1]) / (self.times[k] - self.times[k - 1]);
        (k - 1, k, w)
    }

    /// Nodal volume weights at backwards time `τ`.
    pub fn weights(&self, tau: f64) -> Vec<f64> {
        let (a, b, w) = self.bracket(tau);
        self.weights[a].iter().zip(&self.weights[b]).map(|(x, y)| (1.0 - w) * x + w * y).collect()
    }
}

impl PathSpace for GridPathSpace {
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    fn tau_max(&self) -> f64 {
        self.t0 - self.times[0]
    }

    fn local(&self, x: Vec2, tau: f64) -> LocalGeometry {
        let dim = self.grid.dim();
        let h = self.grid.spacing();
        let (ta, tb, tw) = self.bracket(tau);
        // Bilinear weights on the periodic cell containing `x`.
        let mut base = [0isize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..dim {
            let u = x[k] / h;
            let f = u.floor();
            base[k] = f as isize;
            frac[k] = u - f;
        }
        let corners: Vec<([isize; MAX_DIM], f64, Vec2)> = if dim == 1 {
            vec![([base[0], 0], 1.0 - frac[0], [-1.0 / h, 0.0]), ([base[0] + 1, 0], frac[0], [1.0 / h, 0.0])]
        } else {
            let mut c = Vec::with_capacity(4);
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let wx = if dx == 1 { frac[0] } else { 1.0 - frac[0] };
                let wy = if dy == 1 { frac[1] } else { 1.0 - frac[1] };
                let sx = if dx == 1 { 1.0 } else { -1.0 } / h;
                let sy = if dy == 1 { 1.0 } else { -1.0 } / h;
                c.push(([base[0] + dx, base[1] + dy], wx * wy, [sx * wy, sy * wx]));
            }
            c
        };
        let mut out = LocalGeometry { s: 0.0, ds: [0.0; 2], g: [[0.0; 2]; 2], dg: [[[0.0; 2]; 2]; 2] };
        for (pos, w, dw) in corners {
            let node = self.grid.index(pos);
            let s = (1.0 - tw) * self.s[ta][node] + tw * self.s[tb][node];
            out.s += w * s;
            for k in 0..dim {
                out.ds[k] += dw[k] * s;
            }
            for i in 0..dim {
                for j in 0..dim {
                    let g = (1.0 - tw) * self.g[ta][node][i][j] + tw * self.g[tb][node][i][j];
                    out.g[i][j] += w * g;
                    for k in 0..dim {
                        out.dg[k][i][j] += dw[k] * g;
                    }
                }
            }
        }
        out
    }

    fn endpoint_images(&self, q: Vec2) -> Vec<Vec2> {
        let l = self.grid.period();
        let offsets: &[f64] = &[-1.0, 0.0, 1.0];
        let mut out = Vec::new();
        for &a in offsets {
            if self.grid.dim() == 1 {
                out.push([q[0] + a * l, 0.0]);
            } else {
                for &b in offsets {
                    out.push([q[0] + a * l, q[1] + b * l]);
                }
            }
        }
        out
    }
}

/// Chart for the homogeneous round-sphere model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereChart {
    /// Stereographic coordinates with the base point at the origin:
    /// `g = c(t)·4|dx|²/(1 + |x|²)²`.
    Stereographic,
    /// Arc length along one great circle through the base point (`m = 1` chart
    /// with `g = c(t)dθ²`); minimizers stay on it by rotational symmetry.
    GreatCircle,
}

/// A homogeneous `Sphere2` trajectory seen backwards from time `t₀`.
pub struct SpherePathSpace {
    traj: HomTrajectory,
    t0: f64,
    chart: SphereChart,
}

impl SpherePathSpace {
    pub fn new(traj: HomTrajectory, t0: f64, chart: SphereChart) -> Result<Self> {
        if traj.model.kind != ModelKind::Sphere2 || traj.model.normalized {
            return Err(RhError::InvalidArgument("sphere path space needs an unnormalized Sphere2 trajectory".into()));
        }
        let (first, last) = (traj.samples[0].t, traj.last().t);
        if !(t0 > first && t0 <= last) {
            return Err(RhError::InvalidArgument(format!("t₀ = {t0} outside the trajectory [{first}, {last}]")));
        }
        Ok(Self { traj, t0, chart })
    }

    /// `(c, S)` at backwards time `τ`.
    pub fn scale_and_s(&self, tau: f64) -> (f64, f64) {
        let st = self.traj.interpolate(self.t0 - tau).expect("τ inside the covered range");
        (st.c, hom_geometry(self.traj.model, &st).s)
    }

    /// Chart position of the point at angle `θ` from the base point.
    pub fn point_at_angle(&self, theta: f64) -> Vec2 {
        match self.chart {
            SphereChart::Stereographic => [(0.5 * theta).tan(), 0.0],
            SphereChart::GreatCircle => [theta, 0.0],
        }
    }
}

impl PathSpace for SpherePathSpace {
    fn dim(&self) -> usize {
        match self.chart {
            SphereChart::Stereographic => 2,
            SphereChart::GreatCircle => 1,
        }
    }

    fn tau_max(&self) -> f64 {
        self.t0 - self.traj.samples[0].t
    }

    fn local(&self, x: Vec2, tau: f64) -> LocalGeometry {
        let (c, s) = self.scale_and_s(tau);
        match self.chart {
            SphereChart::Stereographic => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let conf = 4.0 * c / (1.0 + r2).powi(2);
                let dconf = |k: usize| -16.0 * c * x[k] / (1.0 + r2).powi(3);
                let diag = |v: f64| [[v, 0.0], [0.0, v]];
                LocalGeometry { s, ds: [0.0; 2], g: diag(conf), dg: [diag(dconf(0)), diag(dconf(1))] }
            }
            SphereChart::GreatCircle => {
                LocalGeometry { s, ds: [0.0; 2], g: [[c, 0.0], [0.0, 0.0]], dg: [[[0.0; 2]; 2]; 2] }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedVolumeReport {
    pub taus: Vec<f64>,
    pub volumes: Vec<f64>,
    /// Verdict that `Ṽ_b` is non-increasing in `τ`.
    pub verdict: Verdict,
}

/// `Ṽ_b(τ) = Σ_q (4πτ)^{−m/2} e^{−ℓ_b(q,τ)} W_q` over the grid nodes.
pub fn reduced_volume_grid(space: &GridPathSpace, p: Vec2, tau: f64, opts: &DistanceOptions) -> Result<f64> {
    let grid = space.grid();
    let m = grid.dim() as f64;
    let weights = space.weights(tau);
    let ells: Vec<Result<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|n| reduced_distance(space, p, grid.coords(n), tau, opts).map(|r| r.ell))
        .collect();
    let norm = (4.0 * PI * tau).powf(-0.5 * m);
    let mut total = 0.0;
    for (ell, w) in ells.into_iter().zip(&weights) {
        total += norm * (-ell?).exp() * w;
    }
    Ok(total)
}

/// `Ṽ_b(τ) = (4πτ)^{−1}∫₀^π e^{−ℓ_b(θ,τ)} 2πc sinθ dθ` by composite Simpson on `intervals` panels.
pub fn reduced_volume_sphere(space: &SpherePathSpace, tau: f64, intervals: usize, opts: &DistanceOptions) -> Result<f64> {
    let n = intervals + intervals % 2;
    let (c, _) = space.scale_and_s(tau);
    let values: Vec<Result<f64>> = (0..=n)
        .into_par_iter()
        .map(|k| {
            let theta = PI * k as f64 / n as f64;
            let q = space.point_at_angle(theta);
            reduced_distance(space, [0.0, 0.0], q, tau, opts).map(|r| (-r.ell).exp() * 2.0 * PI * c * theta.sin())
        })
        .collect();
    let h = PI / n as f64;
    let mut total = 0.0;
    for (k, v) in values.into_iter().enumerate() {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        total += w * v?;
    }
    Ok(total * h / 3.0 / (4.0 * PI * tau))
}

/// `Ṽ_b` over increasing `τ` with a non-increasing verdict at tolerance `tol`.
pub fn reduced_volume_series(taus: &[f64], volume: impl Fn(f64) -> Result<f64>, tol: f64) -> Result<ReducedVolumeReport> {
    if taus.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RhError::InvalidArgument("τ samples must be strictly increasing".into()));
    }
    let volumes: Vec<f64> = taus.iter().map(|t| volume(*t)).collect::<Result<_>>()?;
    let negated: Vec<f64> = volumes.iter().map(|v| -v).collect();
    let verdict = non_decreasing("reduced volume non-increasing in tau", taus, &negated, tol, 0.0);
    Ok(ReducedVolumeReport { taus: taus.to_vec(), volumes, verdict })
}

/// Closed-form `ℓ_b` on the homogeneous sphere:
/// `(∫√τ S dτ + θ²/∫dτ/(√τ c)) / (2√τ₁)`, integrated with `nodes` midpoint panels in `λ`.
pub fn sphere_reduced_distance_oracle(space: &SpherePathSpace, theta: f64, tau1: f64, nodes: usize) -> f64 {
    let l1 = tau1.sqrt();
    let dl = l1 / nodes as f64;
    let (mut s_int, mut inv_c) = (0.0, 0.0);
    for k in 0..nodes {
        let lam = (k as f64 + 0.5) * dl;
        let (c, s) = space.scale_and_s(lam * lam);
        s_int += 2.0 * lam * lam * s * dl;
        inv_c += 2.0 * dl / c;
    }
    (s_int + theta * theta / inv_c) / (2.0 * l1)
}
