//! The coupled flow in DeTurck gauge on flat torus backgrounds.
//!
//! With a spatially constant background `g₀` the gauged system reads
//!
//! ```text
//! ∂ₜg_ij = g^{kl}∂_k∂_l g_ij + 2α ∂_iφ·∂_jφ
//!        + ½ g^{kl}g^{pq}( ∂_i g_pk ∂_j g_ql + 2∂_k g_ip ∂_q g_jl − 2∂_k g_ip ∂_l g_jq
//!                          − 2∂_i g_pk ∂_l g_jq − 2∂_j g_pk ∂_l g_iq )
//! ∂ₜφ    = g^{kl}∂_k∂_lφ + (|∇φ|²/ρ²) φ
//! ```
//!
//! which equals `−2Rc + 2α∇φ⊗∇φ + L_V g` and `τφ + dφ(V)` for the DeTurck
//! vector `V^l = g^{ij}(Γ^l_ij − Γ̂^l_ij)`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};
use crate::grid::curvature::{curvature_of, riemann_norm_with};
use crate::grid::map::{map_calculus_with, s_fields_with};
use crate::grid::metric::{metric_gradient, Connection};
use crate::grid::{
    linalg, stencil, Grid, MapField, Mat2, MetricField, SymTensorField, TargetSpec, VectorField, MAX_DIM,
};
use crate::schedule::CouplingSchedule;

/// `V^l = g^{ij}(Γ^l_ij(g) − Γ^l_ij(g₀))`.
pub fn deturck_vector(g: &MetricField, background: &MetricField) -> Result<VectorField> {
    g.grid().ensure_same(&background.grid())?;
    let conn = Connection::new(g)?;
    let bg = Connection::new(background)?;
    let dim = g.dim();
    let inv = conn.inverse();
    let values = (0..g.grid().len())
        .map(|node| {
            let mut v = [0.0; MAX_DIM];
            for (l, vl) in v.iter_mut().enumerate().take(dim) {
                let mut diff = [[0.0; MAX_DIM]; MAX_DIM];
                for i in 0..dim {
                    for j in 0..dim {
                        diff[i][j] = conn.gamma.values[node][l][i][j] - bg.gamma.values[node][l][i][j];
                    }
                }
                *vl = linalg::contract(&inv[node], &diff, dim);
            }
            v
        })
        .collect();
    Ok(VectorField { grid: g.grid(), values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub g: MetricField,
    pub phi: MapField,
    /// Gauge background `g₀`; never modified by the flow.
    pub background: MetricField,
    pub target: TargetSpec,
}

impl FlowState {
    /// State with the flat background `δ`.
    pub fn new(g: MetricField, phi: MapField, target: TargetSpec) -> Result<Self> {
        let background = MetricField::flat(g.grid());
        let s = Self { t: 0.0, g, phi, background, target };
        s.validate()?;
        Ok(s)
    }

    pub fn grid(&self) -> Grid {
        self.g.grid()
    }

    pub fn validate(&self) -> Result<()> {
        self.g.grid().ensure_same(&self.phi.grid)?;
        self.g.grid().ensure_same(&self.background.grid())?;
        crate::grid::metric_algebra(&self.g)?;
        self.phi.check_target(&self.target)?;
        let first = self.background.values()[0];
        if self.background.values().iter().any(|m| *m != first) {
            return Err(RhError::InvalidArgument("gauge background must be spatially constant".into()));
        }
        Ok(())
    }
}

/// Time derivatives `(ġ, φ̇)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRhs {
    pub metric: SymTensorField,
    pub map: MapField,
}

impl FlowRhs {
    pub fn sup_norm(&self) -> f64 {
        self.metric.sup_norm().max(self.map.values.iter().fold(0.0, |a, v| a.max(v.abs())))
    }

    pub fn sub(&self, other: &FlowRhs) -> FlowRhs {
        FlowRhs {
            metric: self.metric.sub(&other.metric),
            map: MapField {
                grid: self.map.grid,
                components: self.map.components,
                values: self.map.values.iter().zip(&other.map.values).map(|(a, b)| a - b).collect(),
            },
        }
    }
}

/// Gauged right-hand side in explicit coordinates.
pub fn flow_rhs(state: &FlowState, alpha: f64) -> Result<FlowRhs> {
    let grid = state.grid();
    let dim = grid.dim();
    let len = grid.len();
    let inv = crate::grid::metric_algebra(&state.g)?.inverse.values;
    let dg = metric_gradient(&state.g);
    let comps: Vec<Vec<f64>> = (0..dim * dim).map(|ij| state.g.as_tensor().component(ij / dim, ij % dim)).collect();

    // Second derivatives of each metric component, contracted with g^{kl}.
    let mut principal = vec![[[0.0; MAX_DIM]; MAX_DIM]; len];
    for i in 0..dim {
        for j in i..dim {
            let d2 = stencil::second_derivatives(&grid, &comps[i * dim + j]);
            for (node, p) in principal.iter_mut().enumerate() {
                let mut s = 0.0;
                for k in 0..dim {
                    for l in 0..dim {
                        s += inv[node][k][l] * d2[k][l][node];
                    }
                }
                p[i][j] = s;
                p[j][i] = s;
            }
        }
    }

    let d = state.phi.components;
    let phi_comps: Vec<Vec<f64>> = (0..d).map(|l| state.phi.component(l)).collect();
    let dphi: Vec<Vec<Vec<f64>>> = phi_comps.iter().map(|c| stencil::gradient(&grid, c)).collect();
    let mut metric = Vec::with_capacity(len);
    let mut phi_dot = vec![0.0; len * d];
    let radius = state.target.radius();

    let mut lap_phi: Vec<Vec<f64>> = vec![vec![0.0; len]; d];
    for (lam, c) in phi_comps.iter().enumerate() {
        let d2 = stencil::second_derivatives(&grid, c);
        for (node, v) in lap_phi[lam].iter_mut().enumerate() {
            for k in 0..dim {
                for l in 0..dim {
                    *v += inv[node][k][l] * d2[k][l][node];
                }
            }
        }
    }

    for node in 0..len {
        let gi = &inv[node];
        let dgn = |k: usize, i: usize, j: usize| dg[k][i][j][node];
        let mut out: Mat2 = [[0.0; MAX_DIM]; MAX_DIM];
        let mut outer: Mat2 = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                outer[i][j] = dphi.iter().map(|dl| dl[i][node] * dl[j][node]).sum();
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let mut quad = 0.0;
                for k in 0..dim {
                    for l in 0..dim {
                        for p in 0..dim {
                            for q in 0..dim {
                                let w = gi[k][l] * gi[p][q];
                                quad += w
                                    * (dgn(i, p, k) * dgn(j, q, l) + 2.0 * dgn(k, i, p) * dgn(q, j, l)
                                        - 2.0 * dgn(k, i, p) * dgn(l, j, q)
                                        - 2.0 * dgn(i, p, k) * dgn(l, j, q)
                                        - 2.0 * dgn(j, p, k) * dgn(l, i, q));
                            }
                        }
                    }
                }
                let v = principal[node][i][j] + 2.0 * alpha * outer[i][j] + 0.5 * quad;
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        metric.push(out);

        let energy = linalg::contract(gi, &outer, dim);
        let p = state.phi.at(node);
        for lam in 0..d {
            let mut v = lap_phi[lam][node];
            if let Some(rho) = radius {
                v += energy / (rho * rho) * p[lam];
            }
            phi_dot[node * d + lam] = v;
        }
    }
    Ok(FlowRhs {
        metric: SymTensorField { grid, values: metric },
        map: MapField { grid, components: d, values: phi_dot },
    })
}

/// Ungauged right-hand side `(−2Rc + 2α∇φ⊗∇φ, τφ)`.
pub fn geometric_rhs(state: &FlowState, alpha: f64) -> Result<FlowRhs> {
    let conn = Connection::new(&state.g)?;
    let curv = curvature_of(&conn);
    let mc = map_calculus_with(&conn, &state.phi, &state.target);
    let (sij, _) = s_fields_with(conn.inverse(), &curv.ricci, &mc.outer, alpha);
    Ok(FlowRhs { metric: sij.scaled(-2.0), map: mc.tension })
}

/// Gauge terms `(∇_iV_j + ∇_jV_i, dφ(V))` for the flow's DeTurck vector.
pub fn gauge_terms(state: &FlowState) -> Result<FlowRhs> {
    use crate::grid::tensor::{covariant, Tensor};
    let conn = Connection::new(&state.g)?;
    let grid = state.grid();
    let dim = grid.dim();
    let v = deturck_vector(&state.g, &state.background)?;
    let lowered: Vec<Vec<f64>> = (0..dim)
        .map(|j| (0..grid.len()).map(|n| (0..dim).map(|m| state.g.values()[n][j][m] * v.values[n][m]).sum()).collect())
        .collect();
    let nabla = covariant(&conn, &Tensor { rank: 1, dim, data: lowered });
    let metric = (0..grid.len())
        .map(|n| {
            let mut m = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..dim {
                for j in 0..dim {
                    m[i][j] = nabla.data[i * dim + j][n] + nabla.data[j * dim + i][n];
                }
            }
            m
        })
        .collect();
    let d = state.phi.components;
    let grads: Vec<Vec<Vec<f64>>> = (0..d).map(|l| stencil::gradient(&grid, &state.phi.component(l))).collect();
    let mut map = vec![0.0; grid.len() * d];
    for n in 0..grid.len() {
        for l in 0..d {
            map[n * d + l] = (0..dim).map(|k| v.values[n][k] * grads[l][k][n]).sum();
        }
    }
    Ok(FlowRhs { metric: SymTensorField { grid, values: metric }, map: MapField { grid, components: d, values: map } })
}

/// `flow_rhs − (geometric_rhs + gauge_terms)`; vanishes up to discretization.
pub fn gauge_identity_residual(state: &FlowState, alpha: f64) -> Result<FlowRhs> {
    let lhs = flow_rhs(state, alpha)?;
    let geo = geometric_rhs(state, alpha)?;
    let gauge = gauge_terms(state)?;
    let sum = FlowRhs {
        metric: SymTensorField {
            grid: geo.metric.grid,
            values: geo
                .metric
                .values
                .iter()
                .zip(&gauge.metric.values)
                .map(|(a, b)| {
                    let mut m = *a;
                    for i in 0..MAX_DIM {
                        for j in 0..MAX_DIM {
                            m[i][j] += b[i][j];
                        }
                    }
                    m
                })
                .collect(),
        },
        map: MapField {
            grid: geo.map.grid,
            components: geo.map.components,
            values: geo.map.values.iter().zip(&gauge.map.values).map(|(a, b)| a + b).collect(),
        },
    };
    Ok(lhs.sub(&sum))
}

/// `0.2 h² · min eig(g)`, the explicit stability limit for the principal part.
pub fn cfl_dt(g: &MetricField, factor: f64) -> f64 {
    let h = g.grid().spacing();
    factor * h * h * g.min_eigenvalue().1
}

fn axpy_state(base: &FlowState, k: &FlowRhs, a: f64, t: f64) -> Result<FlowState> {
    let grid = base.grid();
    let dim = grid.dim();
    let values = base
        .g
        .values()
        .iter()
        .zip(&k.metric.values)
        .map(|(g, r)| {
            let mut m = *g;
            for i in 0..dim {
                for j in 0..dim {
                    m[i][j] += a * r[i][j];
                }
            }
            m
        })
        .collect();
    let g = MetricField::new(SymTensorField { grid, values })?;
    let mut phi = base.phi.clone();
    for (p, r) in phi.values.iter_mut().zip(&k.map.values) {
        *p += a * r;
    }
    phi.project(&base.target);
    Ok(FlowState { t, g, phi, background: base.background.clone(), target: base.target })
}

fn reject(t: f64, dt: f64, reason: String) -> RhError {
    RhError::StepRejected { t, suggested_dt: 0.5 * dt, reason }
}

fn guarded_rhs(s: &FlowState, alpha: f64, dt: f64) -> Result<FlowRhs> {
    match flow_rhs(s, alpha) {
        Ok(r) => Ok(r),
        Err(RhError::NotPositiveDefinite { node, eigenvalue }) => {
            Err(reject(s.t, dt, format!("metric lost positivity at node {node} (eigenvalue {eigenvalue:e})")))
        }
        Err(e) => Err(e),
    }
}

/// One classical RK4 step, reprojecting the map after every stage.
pub fn step(state: &FlowState, dt: f64, schedule: &CouplingSchedule) -> Result<FlowState> {
    let t = state.t;
    let k1 = guarded_rhs(state, schedule.value(t), dt)?;
    let s2 = axpy_state(state, &k1, 0.5 * dt, t + 0.5 * dt)?;
    let k2 = guarded_rhs(&s2, schedule.value(t + 0.5 * dt), dt)?;
    let s3 = axpy_state(state, &k2, 0.5 * dt, t + 0.5 * dt)?;
    let k3 = guarded_rhs(&s3, schedule.value(t + 0.5 * dt), dt)?;
    let s4 = axpy_state(state, &k3, dt, t + dt)?;
    let k4 = guarded_rhs(&s4, schedule.value(t + dt), dt)?;
    let combined = FlowRhs {
        metric: SymTensorField {
            grid: k1.metric.grid,
            values: (0..k1.metric.values.len())
                .map(|n| {
                    let mut m = [[0.0; MAX_DIM]; MAX_DIM];
                    for i in 0..MAX_DIM {
                        for j in 0..MAX_DIM {
                            m[i][j] = (k1.metric.values[n][i][j]
                                + 2.0 * k2.metric.values[n][i][j]
                                + 2.0 * k3.metric.values[n][i][j]
                                + k4.metric.values[n][i][j])
                                / 6.0;
                        }
                    }
                    m
                })
                .collect(),
        },
        map: MapField {
            grid: k1.map.grid,
            components: k1.map.components,
            values: (0..k1.map.values.len())
                .map(|i| (k1.map.values[i] + 2.0 * k2.map.values[i] + 2.0 * k3.map.values[i] + k4.map.values[i]) / 6.0)
                .collect(),
        },
    };
    let next = axpy_state(state, &combined, dt, t + dt)?;
    let (node, eig) = next.g.min_eigenvalue();
    if !(eig >= crate::grid::DEGENERACY_THRESHOLD) {
        return Err(reject(t, dt, format!("metric lost positivity at node {node} (eigenvalue {eig:e})")));
    }
    Ok(next)
}

/// Scalar diagnostics of one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub vol: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub sup_grad_phi_sq: f64,
    pub sup_rm: f64,
    pub sup_hess_phi: f64,
}

pub fn diagnostics(state: &FlowState, alpha: f64) -> Result<Diagnostics> {
    let conn = Connection::new(&state.g)?;
    let curv = curvature_of(&conn);
    let mc = map_calculus_with(&conn, &state.phi, &state.target);
    let (_, s) = s_fields_with(conn.inverse(), &curv.ricci, &mc.outer, alpha);
    let rm = riemann_norm_with(conn.inverse(), &curv.riemann, state.grid().dim());
    let hess = mc.hessian_norm_sq(conn.inverse());
    Ok(Diagnostics {
        t: state.t,
        vol: conn.volume(),
        s_min: s.min(),
        s_max: s.max(),
        sup_grad_phi_sq: mc.energy_density.max(),
        sup_rm: rm.max(),
        sup_hess_phi: hess.iter().fold(0.0f64, |a, v| a.max(*v)).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPolicy {
    /// Spacing of the uniform sample grid.
    pub sample_interval: f64,
    /// Safety factor in `dt = cfl · h² · min eig(g)`.
    pub cfl: f64,
    /// Optional upper bound on the time step.
    pub dt_max: Option<f64>,
    /// `sup|Rm|` or `sup|∇φ|²` above this ends the run as singular.
    pub blowup_threshold: f64,
}

impl Default for RunPolicy {
    fn default() -> Self {
        Self { sample_interval: 0.1, cfl: 0.2, dt_max: None, blowup_threshold: 1e8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SingularityKind {
    /// Metric eigenvalue fell below the degeneracy threshold.
    Degenerate { node: usize, eigenvalue: f64 },
    CurvatureBlowup { sup_rm: f64 },
    EnergyBlowup { sup_grad_phi_sq: f64 },
    /// Repeated step rejection drove `dt` below `1e-10`.
    StepCollapse { dt: f64, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularityReport {
    pub t: f64,
    pub kind: SingularityKind,
    pub last_state: FlowState,
    pub last_diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// States on the uniform sample grid.
    pub samples: Vec<FlowState>,
    /// Diagnostics at every accepted step (including the initial state).
    pub diagnostics: Vec<Diagnostics>,
    pub schedule: CouplingSchedule,
    pub policy: RunPolicy,
    pub singularity: Option<SingularityReport>,
}

impl Trajectory {
    /// Diagnostics recorded at the sample times, one per sample.
    pub fn diagnostics_at_samples(&self) -> Vec<Diagnostics> {
        let mut out = Vec::with_capacity(self.samples.len());
        let mut it = self.diagnostics.iter();
        for s in &self.samples {
            if let Some(d) = it.by_ref().find(|d| d.t == s.t) {
                out.push(*d);
            }
        }
        out
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

pub const MIN_DT: f64 = 1e-10;

/// Position on the uniform sample grid `origin + k · sample_interval`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleClock {
    pub origin: f64,
    pub index: usize,
}

/// Integrate to `t_end`, sampling at `t₀ + k·sample_interval`.
///
/// `on_sample` sees every sample (including the initial one) with its index;
/// the caller uses it for checkpointing.
pub fn run_with(
    initial: &FlowState,
    schedule: &CouplingSchedule,
    t_end: f64,
    policy: &RunPolicy,
    on_sample: impl FnMut(usize, &FlowState) -> Result<()>,
) -> Result<Trajectory> {
    resume_with(initial, SampleClock { origin: initial.t, index: 0 }, schedule, t_end, policy, on_sample)
}

/// Continue a run from sample `clock.index`, whose state is `initial`.
///
/// Restarting from a saved sample reproduces the uninterrupted run bit for bit.
pub fn resume_with(
    initial: &FlowState,
    clock: SampleClock,
    schedule: &CouplingSchedule,
    t_end: f64,
    policy: &RunPolicy,
    mut on_sample: impl FnMut(usize, &FlowState) -> Result<()>,
) -> Result<Trajectory> {
    initial.validate()?;
    schedule.validate()?;
    if !(policy.sample_interval > 0.0 && policy.cfl > 0.0) {
        return Err(RhError::InvalidArgument("sample interval and CFL factor must be positive".into()));
    }
    let t0 = clock.origin;
    let mut traj = Trajectory {
        samples: vec![initial.clone()],
        diagnostics: vec![diagnostics(initial, schedule.value(initial.t))?],
        schedule: schedule.clone(),
        policy: policy.clone(),
        singularity: None,
    };
    on_sample(clock.index, initial)?;
    let mut cur = initial.clone();
    let mut k = clock.index;
    let tol = 1e-12 * t_end.abs().max(1.0);
    while cur.t < t_end - tol {
        let t_next = (t0 + (k + 1) as f64 * policy.sample_interval).min(t_end);
        let span = t_next - cur.t;
        let mut dt = cfl_dt(&cur.g, policy.cfl);
        if let Some(m) = policy.dt_max {
            dt = dt.min(m);
        }
        let mut steps = (span / dt).ceil().max(1.0) as usize;
        let interval_start = cur.clone();
        let diag_len = traj.diagnostics.len();
        'attempt: loop {
            cur = interval_start.clone();
            traj.diagnostics.truncate(diag_len);
            let count = steps;
            let h = span / count as f64;
            for s in 0..count {
                let target_t = if s + 1 == count { t_next } else { interval_start.t + (s + 1) as f64 * h };
                match step(&cur, h, schedule) {
                    Ok(mut next) => {
                        next.t = target_t;
                        let diag = diagnostics(&next, schedule.value(next.t))?;
                        traj.diagnostics.push(diag);
                        let blow = if diag.sup_rm > policy.blowup_threshold {
                            Some(SingularityKind::CurvatureBlowup { sup_rm: diag.sup_rm })
                        } else if diag.sup_grad_phi_sq > policy.blowup_threshold {
                            Some(SingularityKind::EnergyBlowup { sup_grad_phi_sq: diag.sup_grad_phi_sq })
                        } else {
                            None
                        };
                        if let Some(kind) = blow {
                            traj.singularity =
                                Some(SingularityReport { t: next.t, kind, last_state: next, last_diagnostics: diag });
                            return Ok(traj);
                        }
                        cur = next;
                    }
                    Err(RhError::StepRejected { reason, .. }) => {
                        if h * 0.5 < MIN_DT {
                            let (node, eigenvalue) = cur.g.min_eigenvalue();
                            let kind = if eigenvalue < 1e-6 {
                                SingularityKind::Degenerate { node, eigenvalue }
                            } else {
                                SingularityKind::StepCollapse { dt: h, reason }
                            };
                            let last_diagnostics = *traj.diagnostics.last().expect("initial diagnostics");
                            traj.singularity =
                                Some(SingularityReport { t: cur.t, kind, last_state: cur, last_diagnostics });
                            return Ok(traj);
                        }
                        steps *= 2;
                        continue 'attempt;
                    }
                    Err(e) => return Err(e),
                }
            }
            break;
        }
        k += 1;
        traj.samples.push(cur.clone());
        on_sample(k, &cur)?;
    }
    Ok(traj)
}

pub fn run(initial: &FlowState, schedule: &CouplingSchedule, t_end: f64, policy: &RunPolicy) -> Result<Trajectory> {
    run_with(initial, schedule, t_end, policy, |_, _| Ok(()))
}
