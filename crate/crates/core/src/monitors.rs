//! Residuals of the evolution equations, maximum-principle bounds, the
//! Bochner identity, soliton equations and the reduced-volume `D` quantity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};
use crate::flow::{deturck_vector, geometric_rhs, FlowState, Trajectory};
use crate::functionals::Snapshot;
use crate::grid::map::target_term_with;
use crate::grid::scalar::scalar_calculus_with;
use crate::grid::tensor::{covariant, trace_first_pair, Tensor};
use crate::grid::{linalg, stencil, Grid, MapField, MetricField, ScalarField, SymTensorField, TargetSpec, VectorField};
use crate::homogeneous::{hom_geometry, model_rhs, HomTrajectory, HomogeneousState, Model, ModelKind};
use crate::report::{Status, Verdict};
use crate::schedule::CouplingSchedule;

/// One monitored quantity: its time series and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub times: Vec<f64>,
    /// Residual sup-norm or bound margin per time (see `verdict.check`).
    pub values: Vec<f64>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub checks: Vec<Check>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.verdict.passed())
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Worst value of a named check.
    pub fn worst(&self, name: &str) -> Option<f64> {
        self.get(name).map(|c| c.verdict.worst)
    }

    pub fn merge(mut self, other: MonitorReport) -> Self {
        self.checks.extend(other.checks);
        self
    }
}

/// `coarse / fine`, the observed error reduction under refinement.
pub fn refinement_ratio(coarse: f64, fine: f64) -> f64 {
    if fine == 0.0 {
        if coarse == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        coarse / fine
    }
}

fn residual_check(name: &str, times: Vec<f64>, values: Vec<f64>, tol: f64, disc: f64) -> Check {
    let (mut worst, mut at) = (0.0f64, None);
    for (t, v) in times.iter().zip(&values) {
        if !(v.abs() <= worst) {
            worst = v.abs();
            at = Some((*t, *t));
        }
    }
    let verdict = Verdict::classify(name, worst, tol, disc).with_interval(at);
    Check { name: name.into(), times, values, verdict }
}

/// Margins `bound − observed` (or `observed − bound` for lower bounds); violations are negative.
fn margin_check(name: &str, times: Vec<f64>, margins: Vec<f64>, tol: f64, disc: f64) -> Check {
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for (t, m) in times.iter().zip(&margins) {
        if -m > worst || m.is_nan() {
            worst = -m;
            at = Some((*t, *t));
        }
    }
    let worst = if margins.is_empty() { 0.0 } else { worst };
    let verdict = Verdict::classify(name, worst, tol, disc).with_interval(at);
    Check { name: name.into(), times, values: margins, verdict }
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Pointwise terms of the scalar evolution equations at one state.
struct ScalarTerms {
    s: Vec<f64>,
    e: Vec<f64>,
    /// `ΔS + 2|S_ij|² + 2α|τφ|² − α̇|∇φ|²`.
    s_rhs: Vec<f64>,
    /// `Δ|∇φ|² − 2α|∇φ⊗∇φ|² − 2|∇²φ|² + 2⟨Rm^N(∇φ,∇φ)∇φ,∇φ⟩`.
    e_rhs: Vec<f64>,
    v_dot_grad_s: Vec<f64>,
    v_dot_grad_e: Vec<f64>,
}

fn scalar_terms(state: &FlowState, alpha: f64, alpha_dot: f64) -> Result<ScalarTerms> {
    let snap = Snapshot::new(state)?;
    let grid = state.grid();
    let dim = grid.dim();
    let inv = snap.conn.inverse();
    let s = snap.s(alpha);
    let e = snap.mc.energy_density.values.clone();
    let sc_s = scalar_calculus_with(&snap.conn, &s);
    let sc_e = scalar_calculus_with(&snap.conn, &e);
    let sij = snap.curv.ricci.sub(&snap.mc.outer.scaled(alpha));
    let hess = snap.mc.hessian_norm_sq(inv);
    let target = target_term_with(inv, &snap.mc, &state.target);
    let v = deturck_vector(&state.g, &state.background)?;
    let mut t = ScalarTerms {
        s_rhs: Vec::with_capacity(grid.len()),
        e_rhs: Vec::with_capacity(grid.len()),
        v_dot_grad_s: Vec::with_capacity(grid.len()),
        v_dot_grad_e: Vec::with_capacity(grid.len()),
        s,
        e,
    };
    for n in 0..grid.len() {
        let tension_sq: f64 = snap.mc.tension.at(n).iter().map(|x| x * x).sum();
        t.s_rhs.push(
            sc_s.laplacian.values[n] + 2.0 * linalg::norm_sq(&inv[n], &sij.values[n], dim) + 2.0 * alpha * tension_sq
                - alpha_dot * t.e[n],
        );
        t.e_rhs.push(
            sc_e.laplacian.values[n] - 2.0 * alpha * linalg::norm_sq(&inv[n], &snap.mc.outer.values[n], dim)
                - 2.0 * hess[n]
                + 2.0 * target.values[n],
        );
        t.v_dot_grad_s.push((0..dim).map(|k| v.values[n][k] * sc_s.grad.values[n][k]).sum());
        t.v_dot_grad_e.push((0..dim).map(|k| v.values[n][k] * sc_e.grad.values[n][k]).sum());
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionOptions {
    /// Add the DeTurck transport `V·∇q`; disabling it is a negative control.
    pub gauge_correction: bool,
    /// Verdict tolerance; `None` uses ten times the truncation estimate
    /// `h⁴(1 + sup|q|) + Δt² max(1 + sup|q|, |∂³q|/6)`.
    pub tol: Option<f64>,
}

impl Default for EvolutionOptions {
    fn default() -> Self {
        Self { gauge_correction: true, tol: None }
    }
}

pub const SCALAR_S_CHECK: &str = "scalar S evolution";
pub const ENERGY_DENSITY_CHECK: &str = "energy density evolution";

/// Residuals of the `S` and `|∇φ|²` evolution equations along a grid trajectory,
/// using central differences over the uniform sample grid.
pub fn evolution_residuals(traj: &Trajectory, schedule: &CouplingSchedule, opts: &EvolutionOptions) -> Result<MonitorReport> {
    let n = traj.samples.len();
    if n < 3 {
        return Err(RhError::InvalidArgument("evolution residuals need at least three samples".into()));
    }
    let dt = traj.samples[1].t - traj.samples[0].t;
    if traj.samples.windows(2).any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(RhError::InvalidArgument("evolution residuals need uniformly spaced samples".into()));
    }
    let terms: Vec<ScalarTerms> = traj
        .samples
        .iter()
        .map(|s| scalar_terms(s, schedule.value(s.t), schedule.derivative(s.t)))
        .collect::<Result<_>>()?;
    let mut times = Vec::new();
    let (mut res_s, mut res_e) = (Vec::new(), Vec::new());
    let mut scale = 0.0f64;
    for k in 1..n - 1 {
        let (prev, cur, next) = (&terms[k - 1], &terms[k], &terms[k + 1]);
        let mut rs = 0.0f64;
        let mut re = 0.0f64;
        for i in 0..cur.s.len() {
            let ds = (next.s[i] - prev.s[i]) / (2.0 * dt);
            let de = (next.e[i] - prev.e[i]) / (2.0 * dt);
            let (gs, ge) = if opts.gauge_correction { (cur.v_dot_grad_s[i], cur.v_dot_grad_e[i]) } else { (0.0, 0.0) };
            rs = rs.max((ds - cur.s_rhs[i] - gs).abs());
            re = re.max((de - cur.e_rhs[i] - ge).abs());
        }
        scale = scale.max(sup_abs(&cur.s)).max(sup_abs(&cur.e));
        times.push(traj.samples[k].t);
        res_s.push(rs);
        res_e.push(re);
    }
    // Central differences err by Δt²|∂³q|/6; estimate ∂³q from third differences.
    let third = |q: &dyn Fn(&ScalarTerms) -> &[f64]| -> f64 {
        (0..n.saturating_sub(3))
            .map(|k| {
                let (a, b, c, d) = (q(&terms[k]), q(&terms[k + 1]), q(&terms[k + 2]), q(&terms[k + 3]));
                (0..a.len()).map(|i| (d[i] - 3.0 * c[i] + 3.0 * b[i] - a[i]).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
            / dt.powi(3)
    };
    let d3 = third(&|t| &t.s).max(third(&|t| &t.e));
    let h = traj.samples[0].grid().spacing();
    let disc = h.powi(4) * (1.0 + scale) + dt * dt * (1.0 + scale).max(d3 / 6.0);
    let tol = opts.tol.unwrap_or(10.0 * disc);
    Ok(MonitorReport {
        checks: vec![
            residual_check(SCALAR_S_CHECK, times.clone(), res_s, tol, disc),
            residual_check(ENERGY_DENSITY_CHECK, times, res_e, tol, disc),
        ],
    })
}

/// Exact time derivatives of `(R, |∇φ|²)` on the unnormalized homogeneous models.
fn hom_time_derivatives(model: Model, s: &HomogeneousState) -> (f64, f64) {
    let (c_dot, d_dot) = model_rhs(model, s);
    let (c, d) = (s.c, s.d);
    match model.kind {
        ModelKind::Sphere2 => (-2.0 * c_dot / (c * c), -2.0 * c_dot / (c * c)),
        ModelKind::ProductS2L => {
            (-2.0 * c_dot / (c * c) + 2.0 * d_dot / (d * d), -2.0 * c_dot / (c * c) - 2.0 * d_dot / (d * d))
        }
    }
}

fn require_unnormalized(model: Model) -> Result<()> {
    if model.normalized {
        Err(RhError::InvalidArgument("this check applies to the unnormalized homogeneous model".into()))
    } else {
        Ok(())
    }
}

pub const TENSOR_S_CHECK: &str = "tensor S evolution";

/// Residuals of the scalar, energy-density and tensor evolution equations on a
/// homogeneous trajectory, with exact time derivatives from the model equations.
pub fn evolution_residuals_hom(traj: &HomTrajectory, schedule: &CouplingSchedule, tol: f64) -> Result<MonitorReport> {
    require_unnormalized(traj.model)?;
    let model = traj.model;
    let mut times = Vec::new();
    let (mut rs, mut re, mut rt) = (Vec::new(), Vec::new(), Vec::new());
    for st in &traj.samples {
        let g = hom_geometry(model, st);
        let (a, a_dot) = (schedule.value(st.t), schedule.derivative(st.t));
        let (r_dot, e_dot) = hom_time_derivatives(model, st);
        let s_dot = r_dot - a * e_dot - a_dot * g.energy_density;
        rs.push(s_dot - (2.0 * g.s_norm_sq + 2.0 * a * g.tension_norm_sq - a_dot * g.energy_density));
        re.push(e_dot - (-2.0 * a * g.outer_norm_sq - 2.0 * g.hessian_norm_sq + 2.0 * g.target_term));
        // Coordinate components S_ij = σ·(scale)·g₀ per factor, with Δ_L S = 0 and
        // τφ = 0, so each must obey ∂ₜS_ij = −α̇ (dφ ⊗ dφ)_ij = −α̇ g₀.
        let (c_dot, d_dot) = model_rhs(model, st);
        let factors: &[(f64, f64, f64)] = match model.kind {
            ModelKind::Sphere2 => &[(st.c, c_dot, 1.0 - a)],
            ModelKind::ProductS2L => &[(st.c, c_dot, 1.0 - a), (st.d, d_dot, -(1.0 + a))],
        };
        let worst = factors
            .iter()
            .map(|&(scale, scale_dot, num)| {
                let sigma = num / scale;
                let sigma_dot = -a_dot / scale - num * scale_dot / (scale * scale);
                (sigma_dot * scale + sigma * scale_dot + a_dot).abs()
            })
            .fold(0.0, f64::max);
        rt.push(worst);
        times.push(st.t);
    }
    Ok(MonitorReport {
        checks: vec![
            residual_check(SCALAR_S_CHECK, times.clone(), rs, tol, 0.0),
            residual_check(ENERGY_DENSITY_CHECK, times.clone(), re, tol, 0.0),
            residual_check(TENSOR_S_CHECK, times, rt, tol, 0.0),
        ],
    })
}

/// Pure comparison functions for the maximum-principle estimates.
pub mod bounds {
    /// Lower bound `S_min(0)/(1 − 2t S_min(0)/m)` on `S_min(t)`, while it is finite.
    pub fn s_min_comparison(s0: f64, m: usize, t: f64) -> Option<f64> {
        let denom = 1.0 - 2.0 * t * s0 / m as f64;
        (denom > 0.0).then(|| s0 / denom)
    }

    /// `S ≥ −m/(2t)` for `t > 0`.
    pub fn s_universal_lower(m: usize, t: f64) -> Option<f64> {
        (t > 0.0).then(|| -(m as f64) / (2.0 * t))
    }

    /// `|∇φ|² ≤ R₀/α̲ + m/(2α̲t)` under `R ≤ R₀`.
    pub fn energy_from_curvature(r0: f64, alpha_min: f64, m: usize, t: f64) -> Option<f64> {
        (t > 0.0 && alpha_min > 0.0).then(|| r0 / alpha_min + m as f64 / (2.0 * alpha_min * t))
    }

    /// `m/(2α̲t)` for flat-curvature targets.
    pub fn energy_decay(alpha_min: f64, m: usize, t: f64) -> Option<f64> {
        (t > 0.0 && alpha_min > 0.0).then(|| m as f64 / (2.0 * alpha_min * t))
    }

    /// `max₀/(1 − 2c₀ max₀ t)`, finite before the doubling time.
    pub fn energy_doubling(max0: f64, c0: f64, t: f64) -> Option<f64> {
        let denom = 1.0 - 2.0 * c0 * max0 * t;
        (denom > 0.0).then(|| max0 / denom)
    }

    /// `T* = min(T, 1/(4c₀ max₀))`.
    pub fn doubling_time(t_end: f64, c0: f64, max0: f64) -> f64 {
        if c0 * max0 > 0.0 {
            t_end.min(1.0 / (4.0 * c0 * max0))
        } else {
            t_end
        }
    }

    /// Which energy-density estimate applies for target curvature bound `c₀`.
    #[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
    #[serde(rename_all = "kebab-case")]
    pub enum EnergyCase {
        /// `c₀ ≤ α̲/m`: the maximum is non-increasing.
        Preserved,
        /// `c₀ ≤ 0`: additionally `≤ m/(2α̲t)`.
        Decaying,
        /// `c₀ > α̲/m`: at most doubling before `T*`.
        Doubling,
    }

    pub fn energy_case(c0: f64, alpha_min: f64, m: usize) -> EnergyCase {
        if c0 <= 0.0 {
            EnergyCase::Decaying
        } else if c0 - alpha_min / m as f64 <= 0.0 {
            EnergyCase::Preserved
        } else {
            EnergyCase::Doubling
        }
    }
}

pub const S_MIN_COMPARISON: &str = "S_min comparison";
pub const S_UNIVERSAL: &str = "S >= -m/2t";
pub const ENERGY_FROM_CURVATURE: &str = "energy density from curvature bound";
pub const ENERGY_PRESERVED: &str = "energy density max non-increasing";
pub const ENERGY_DECAY: &str = "energy density decay";
pub const ENERGY_DOUBLING: &str = "energy density doubling";
pub const ENERGY_DOUBLING_RATE: &str = "energy density doubling rate";

/// Sampled scalar series the bounds are evaluated on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundSeries {
    pub dim: usize,
    pub times: Vec<f64>,
    pub s_min: Vec<f64>,
    pub r_max: Vec<f64>,
    pub sup_grad_phi_sq: Vec<f64>,
    /// Upper bound on the target's sectional curvature.
    pub c0: f64,
}

impl BoundSeries {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let first = traj.samples.first().ok_or_else(|| RhError::InvalidArgument("empty trajectory".into()))?;
        let mut r_max = Vec::new();
        for s in &traj.samples {
            r_max.push(Snapshot::new(s)?.curv.scalar.max());
        }
        Ok(Self {
            dim: first.grid().dim(),
            times: traj.diagnostics_at_samples().iter().map(|d| d.t).collect(),
            s_min: traj.diagnostics_at_samples().iter().map(|d| d.s_min).collect(),
            r_max,
            sup_grad_phi_sq: traj.diagnostics_at_samples().iter().map(|d| d.sup_grad_phi_sq).collect(),
            c0: first.target.sectional_curvature_bound(),
        })
    }

    pub fn from_hom(traj: &HomTrajectory) -> Result<Self> {
        require_unnormalized(traj.model)?;
        let geo: Vec<_> = traj.samples.iter().map(|s| hom_geometry(traj.model, s)).collect();
        Ok(Self {
            dim: traj.model.dim(),
            times: traj.samples.iter().map(|s| s.t).collect(),
            s_min: geo.iter().map(|g| g.s).collect(),
            r_max: geo.iter().map(|g| g.scalar_curvature).collect(),
            sup_grad_phi_sq: geo.iter().map(|g| g.energy_density).collect(),
            c0: 1.0,
        })
    }
}

/// Evaluate every applicable maximum-principle estimate on a series.
///
/// `disc` is the discretization estimate; the tolerance is `10·disc` plus a
/// relative round-off floor.
pub fn max_principle_bounds_series(series: &BoundSeries, schedule: &CouplingSchedule, disc: f64) -> MonitorReport {
    use bounds::*;
    let m = series.dim;
    let times = &series.times;
    let (t0, t_end) = (times[0], *times.last().expect("non-empty"));
    let alpha_min = schedule.min_on(t0, t_end);
    let tol = |scale: f64| 10.0 * disc + 1e-10 * (1.0 + scale.abs());
    let mut report = MonitorReport::default();

    let collect = |f: &dyn Fn(usize, f64) -> Option<(f64, f64)>| -> (Vec<f64>, Vec<f64>, f64) {
        let (mut ts, mut ms, mut scale) = (Vec::new(), Vec::new(), 0.0f64);
        for (k, t) in times.iter().enumerate() {
            if let Some((margin, size)) = f(k, *t - t0) {
                ts.push(*t);
                ms.push(margin);
                scale = scale.max(size.abs());
            }
        }
        (ts, ms, scale)
    };

    let s0 = series.s_min[0];
    let (ts, ms, sc) = collect(&|k, t| s_min_comparison(s0, m, t).map(|b| (series.s_min[k] - b, b)));
    report.checks.push(margin_check(S_MIN_COMPARISON, ts, ms, tol(sc), disc));
    let (ts, ms, sc) = collect(&|k, t| s_universal_lower(m, t).map(|b| (series.s_min[k] - b, b)));
    report.checks.push(margin_check(S_UNIVERSAL, ts, ms, tol(sc), disc));

    if alpha_min > 0.0 {
        let r0 = series.r_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (ts, ms, sc) = collect(&|k, t| {
            energy_from_curvature(r0, alpha_min, m, t).map(|b| (b - series.sup_grad_phi_sq[k], b))
        });
        report.checks.push(margin_check(ENERGY_FROM_CURVATURE, ts, ms, tol(sc), disc));
    }

    let max0 = series.sup_grad_phi_sq[0];
    match energy_case(series.c0, alpha_min, m) {
        EnergyCase::Preserved | EnergyCase::Decaying => {
            let (ts, ms, sc) = collect(&|k, _| Some((max0 - series.sup_grad_phi_sq[k], max0)));
            report.checks.push(margin_check(ENERGY_PRESERVED, ts, ms, tol(sc), disc));
            if energy_case(series.c0, alpha_min, m) == EnergyCase::Decaying {
                let (ts, ms, sc) =
                    collect(&|k, t| energy_decay(alpha_min, m, t).map(|b| (b - series.sup_grad_phi_sq[k], b)));
                report.checks.push(margin_check(ENERGY_DECAY, ts, ms, tol(sc), disc));
            }
        }
        EnergyCase::Doubling => {
            let t_star = doubling_time(t_end - t0, series.c0, max0);
            let (ts, ms, sc) =
                collect(&|k, t| (t < t_star).then(|| (2.0 * max0 - series.sup_grad_phi_sq[k], 2.0 * max0)));
            report.checks.push(margin_check(ENERGY_DOUBLING, ts, ms, tol(sc), disc));
            let (ts, ms, sc) = collect(&|k, t| {
                energy_doubling(max0, series.c0, t).map(|b| (b - series.sup_grad_phi_sq[k], b))
            });
            report.checks.push(margin_check(ENERGY_DOUBLING_RATE, ts, ms, tol(sc), disc));
        }
    }
    report
}

/// Maximum-principle estimates along a grid trajectory.
pub fn max_principle_bounds(traj: &Trajectory, schedule: &CouplingSchedule) -> Result<MonitorReport> {
    let series = BoundSeries::from_trajectory(traj)?;
    let h = traj.samples[0].grid().spacing();
    let scale = series
        .s_min
        .iter()
        .chain(&series.sup_grad_phi_sq)
        .chain(&series.r_max)
        .fold(1.0f64, |m, x| m.max(x.abs()));
    Ok(max_principle_bounds_series(&series, schedule, h.powi(4) * scale))
}

/// Maximum-principle estimates along a homogeneous trajectory (round-off tolerance only).
pub fn max_principle_bounds_hom(traj: &HomTrajectory, schedule: &CouplingSchedule) -> Result<MonitorReport> {
    Ok(max_principle_bounds_series(&BoundSeries::from_hom(traj)?, schedule, 0.0))
}

/// Terms of the traced Bochner formula at every node.
#[derive(Clone, Debug, PartialEq)]
pub struct BochnerTerms {
    /// `Δ|∇φ|²`.
    pub laplacian: ScalarField,
    /// `2⟨∇φ, ∇τφ⟩`.
    pub tension: ScalarField,
    /// `2|∇²φ|²`.
    pub hessian: ScalarField,
    /// `2⟨Rc, ∇φ⊗∇φ⟩`.
    pub ricci: ScalarField,
    /// `2⟨Rm^N(∇_iφ,∇_jφ)∇_jφ, ∇_iφ⟩`, entering with a minus sign.
    pub target: ScalarField,
    /// `laplacian − (tension + hessian + ricci − target)`.
    pub residual: ScalarField,
}

pub fn bochner_terms(g: &MetricField, phi: &MapField, target: &TargetSpec) -> Result<BochnerTerms> {
    let state = FlowState::new(g.clone(), phi.clone(), *target)?;
    let snap = Snapshot::new(&state)?;
    let grid = g.grid();
    let dim = grid.dim();
    let inv = snap.conn.inverse();
    let e = &snap.mc.energy_density.values;
    let lap = scalar_calculus_with(&snap.conn, e).laplacian;
    let d = phi.components;
    let dtension: Vec<Vec<Vec<f64>>> =
        (0..d).map(|l| stencil::gradient(&grid, &snap.mc.tension.component(l))).collect();
    let hess = snap.mc.hessian_norm_sq(inv);
    let tgt = target_term_with(inv, &snap.mc, target);
    let field = |values: Vec<f64>| ScalarField { grid, values };
    let mut t = vec![0.0; grid.len()];
    let mut r = vec![0.0; grid.len()];
    for n in 0..grid.len() {
        let mut acc = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                acc += inv[n][i][j] * (0..d).map(|l| snap.mc.grad[i].at(n)[l] * dtension[l][j][n]).sum::<f64>();
            }
        }
        t[n] = 2.0 * acc;
        let raised = linalg::matmul(&linalg::matmul(&inv[n], &snap.curv.ricci.values[n], dim), &inv[n], dim);
        r[n] = 2.0 * linalg::contract(&raised, &snap.mc.outer.values[n], dim);
    }
    let hessian: Vec<f64> = hess.iter().map(|x| 2.0 * x).collect();
    let target_v: Vec<f64> = tgt.values.iter().map(|x| 2.0 * x).collect();
    let residual =
        (0..grid.len()).map(|n| lap.values[n] - (t[n] + hessian[n] + r[n] - target_v[n])).collect::<Vec<_>>();
    Ok(BochnerTerms {
        laplacian: lap,
        tension: field(t),
        hessian: field(hessian),
        ricci: field(r),
        target: field(target_v),
        residual: field(residual),
    })
}

pub const BOCHNER_CHECK: &str = "Bochner identity";

/// Sup-norm of the traced Bochner residual; tolerance `10h²`.
pub fn bochner_residual(g: &MetricField, phi: &MapField, target: &TargetSpec) -> Result<MonitorReport> {
    let terms = bochner_terms(g, phi, target)?;
    let h = g.grid().spacing();
    let worst = terms.residual.sup_norm();
    Ok(MonitorReport {
        checks: vec![residual_check(BOCHNER_CHECK, vec![0.0], vec![worst], 10.0 * h * h, h * h)],
    })
}

/// Potential and constant of a candidate gradient soliton.
#[derive(Clone, Debug, PartialEq)]
pub struct SolitonData {
    pub f: ScalarField,
    /// `σ < 0` shrinking, `0` steady, `> 0` expanding.
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolitonResidual {
    /// `sup |Rc − α∇φ⊗∇φ + Hess f + σg|_g`.
    pub metric: f64,
    /// `sup |τφ − ⟨∇φ, ∇f⟩|`.
    pub map: f64,
    /// `sup |S + Δf + σm|`.
    pub trace: f64,
    /// Spatial standard deviation of `S + |∇f|² + 2σf`.
    pub first_integral_std: f64,
}

impl SolitonResidual {
    pub fn max(&self) -> f64 {
        self.metric.max(self.map).max(self.trace)
    }
}

pub fn soliton_residual(state: &FlowState, data: &SolitonData, alpha: f64) -> Result<SolitonResidual> {
    state.grid().ensure_same(&data.f.grid)?;
    let snap = Snapshot::new(state)?;
    let grid = state.grid();
    let dim = grid.dim();
    let m = dim as f64;
    let inv = snap.conn.inverse();
    let sc = scalar_calculus_with(&snap.conn, &data.f.values);
    let grad_sq = sc.grad_norm_sq(inv);
    let s = snap.s(alpha);
    let d = state.phi.components;
    let mut out = SolitonResidual { metric: 0.0, map: 0.0, trace: 0.0, first_integral_std: 0.0 };
    let mut integral = Vec::with_capacity(grid.len());
    for n in 0..grid.len() {
        let mut e1 = [[0.0; 2]; 2];
        for i in 0..dim {
            for j in 0..dim {
                e1[i][j] = snap.curv.ricci.values[n][i][j] - alpha * snap.mc.outer.values[n][i][j]
                    + sc.hessian.values[n][i][j]
                    + data.sigma * state.g.values()[n][i][j];
            }
        }
        out.metric = out.metric.max(linalg::norm_sq(&inv[n], &e1, dim).sqrt());
        let mut e2 = 0.0;
        for l in 0..d {
            let mut adv = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    adv += inv[n][i][j] * snap.mc.grad[i].at(n)[l] * sc.grad.values[n][j];
                }
            }
            e2 += (snap.mc.tension.values[n * d + l] - adv).powi(2);
        }
        out.map = out.map.max(e2.sqrt());
        out.trace = out.trace.max((s[n] + sc.laplacian.values[n] + data.sigma * m).abs());
        integral.push(s[n] + grad_sq[n] + 2.0 * data.sigma * data.f.values[n]);
    }
    let w = snap.conn.weights();
    let vol = snap.conn.volume();
    let mean = snap.conn.integrate(&integral) / vol;
    out.first_integral_std =
        ((0..grid.len()).map(|n| (integral[n] - mean).powi(2) * w[n]).sum::<f64>() / vol).sqrt();
    Ok(out)
}

/// Soliton residual of a homogeneous state with `f = 0`.
pub fn soliton_residual_hom(model: Model, state: &HomogeneousState, sigma: f64) -> SolitonResidual {
    let g = hom_geometry(model, state);
    let factors = if model.kind == ModelKind::Sphere2 { 1 } else { 2 };
    let metric = g.s_eigenvalues.iter().take(factors).map(|s| 2.0 * (s + sigma).powi(2)).sum::<f64>().sqrt();
    SolitonResidual {
        metric,
        map: g.tension_norm_sq.sqrt(),
        trace: (g.s + sigma * g.dim as f64).abs(),
        first_integral_std: 0.0,
    }
}

/// `D` evaluated two ways.
#[derive(Clone, Debug, PartialEq)]
pub struct DQuantity {
    /// `2α|τφ − dφ(X)|² − α̇|∇φ|²`.
    pub value: ScalarField,
    /// `Ṡ − ΔS − 2|S_ij|² + 4(div S)(X) − 2dS(X) + 2Rc(X,X) − 2S(X,X)`.
    pub assembled: ScalarField,
    /// `sup |assembled − value|`.
    pub residual: f64,
}

/// Step for the central difference of `S` along the ungauged flow.
pub const D_TIME_STEP: f64 = 1e-4;

pub fn d_quantity(state: &FlowState, x: &VectorField, alpha: f64, alpha_dot: f64) -> Result<DQuantity> {
    if !(alpha >= 0.0) {
        return Err(RhError::InvalidArgument(format!("coupling α = {alpha} must be non-negative")));
    }
    state.grid().ensure_same(&x.grid)?;
    let grid = state.grid();
    let dim = grid.dim();
    let snap = Snapshot::new(state)?;
    let inv = snap.conn.inverse();
    let s = snap.s(alpha);
    let sij = snap.curv.ricci.sub(&snap.mc.outer.scaled(alpha));
    let sc_s = scalar_calculus_with(&snap.conn, &s);

    // ∂ₜS at fixed α from a symmetric difference along (−2S_ij, τφ), then the α̇ term.
    let rhs = geometric_rhs(state, alpha)?;
    let shifted = |eps: f64| -> Result<Vec<f64>> {
        let values = state
            .g
            .values()
            .iter()
            .zip(&rhs.metric.values)
            .map(|(g, k)| {
                let mut m = *g;
                for i in 0..dim {
                    for j in 0..dim {
                        m[i][j] += eps * k[i][j];
                    }
                }
                m
            })
            .collect();
        let mut phi = state.phi.clone();
        for (p, k) in phi.values.iter_mut().zip(&rhs.map.values) {
            *p += eps * k;
        }
        phi.project(&state.target);
        let st = FlowState {
            t: state.t,
            g: MetricField::new(SymTensorField { grid, values })?,
            phi,
            background: state.background.clone(),
            target: state.target,
        };
        Ok(Snapshot::new(&st)?.s(alpha))
    };
    let (plus, minus) = (shifted(D_TIME_STEP)?, shifted(-D_TIME_STEP)?);

    let nabla_s = covariant(&snap.conn, &Tensor::from_sym(&sij));
    let div_s = trace_first_pair(&snap.conn, &nabla_s);
    let d = state.phi.components;
    let (mut value, mut assembled, mut residual) = (Vec::new(), Vec::new(), 0.0f64);
    for n in 0..grid.len() {
        let xv = x.values[n];
        let s_dot = (plus[n] - minus[n]) / (2.0 * D_TIME_STEP) - alpha_dot * snap.mc.energy_density.values[n];
        let mut a = s_dot - sc_s.laplacian.values[n] - 2.0 * linalg::norm_sq(&inv[n], &sij.values[n], dim);
        for k in 0..dim {
            a += 4.0 * div_s.data[k][n] * xv[k] - 2.0 * sc_s.grad.values[n][k] * xv[k];
            for l in 0..dim {
                a += 2.0 * (snap.curv.ricci.values[n][k][l] - sij.values[n][k][l]) * xv[k] * xv[l];
            }
        }
        let mut closed = 0.0;
        for c in 0..d {
            let dphi_x: f64 = (0..dim).map(|k| snap.mc.grad[k].at(n)[c] * xv[k]).sum();
            closed += (snap.mc.tension.values[n * d + c] - dphi_x).powi(2);
        }
        let closed = 2.0 * alpha * closed - alpha_dot * snap.mc.energy_density.values[n];
        residual = residual.max((a - closed).abs());
        value.push(closed);
        assembled.push(a);
    }
    Ok(DQuantity {
        value: ScalarField { grid, values: value },
        assembled: ScalarField { grid, values: assembled },
        residual,
    })
}

/// Homogeneous `D` for a vector with squared lengths `x_sq[k]` in factor `k`
/// (measured in the evolving metric): `(assembled, closed form)`.
pub fn d_quantity_hom(model: Model, state: &HomogeneousState, x_sq: [f64; 2], alpha_dot: f64) -> Result<(f64, f64)> {
    require_unnormalized(model)?;
    let g = hom_geometry(model, state);
    let a = state.alpha;
    let (r_dot, e_dot) = hom_time_derivatives(model, state);
    let s_dot = r_dot - a * e_dot - alpha_dot * g.energy_density;
    let factors = if model.kind == ModelKind::Sphere2 { 1 } else { 2 };
    let scales = [state.c, state.d];
    let mut assembled = s_dot - 2.0 * g.s_norm_sq;
    let mut dphi_x = 0.0;
    for k in 0..factors {
        assembled += 2.0 * (g.ricci_eigenvalues[k] - g.s_eigenvalues[k]) * x_sq[k];
        dphi_x += x_sq[k] / scales[k];
    }
    let closed = 2.0 * a * (g.tension_norm_sq + dphi_x) - alpha_dot * g.energy_density;
    Ok((assembled, closed))
}

/// Seeded smooth vector field with sup-norm `≤ amp` per component.
pub fn random_vector_field(grid: Grid, seed: u64, amp: f64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<crate::fixtures::SmoothMode> =
        (0..2).map(|_| crate::fixtures::SmoothMode::new(&mut rng, &grid, 2)).collect();
    let scale: f64 = rng.gen_range(0.2..1.0) * amp;
    VectorField::from_fn(grid, |p| [scale * modes[0].eval(p), if grid.dim() == 2 { scale * modes[1].eval(p) } else { 0.0 }])
}

pub const GRADIENT_SERIES: [&str; 3] = ["t sup|grad phi|^2", "t sup|Rm|", "t^2 (sup|Rm|^2 + sup|Hess phi|^2)"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimateReport {
    pub times: Vec<f64>,
    /// Three series in the order of [`GRADIENT_SERIES`].
    pub series: [Vec<f64>; 3],
    /// Least-squares slope of each series over the reported window.
    pub slopes: [f64; 3],
    pub verdict: Verdict,
}

fn slope(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len() as f64;
    if times.len() < 2 {
        return 0.0;
    }
    let (mt, mv) = (times.iter().sum::<f64>() / n, values.iter().sum::<f64>() / n);
    let cov: f64 = times.iter().zip(values).map(|(t, v)| (t - mt) * (v - mv)).sum();
    let var: f64 = times.iter().map(|t| (t - mt).powi(2)).sum();
    if var == 0.0 {
        0.0
    } else {
        cov / var
    }
}

/// Scale-invariant derivative series; the verdict asserts they stay finite and below `bound`.
pub fn gradient_estimate_series(traj: &Trajectory, bound: f64) -> GradientEstimateReport {
    let diag = traj.diagnostics_at_samples();
    let t0 = diag[0].t;
    let times: Vec<f64> = diag.iter().map(|d| d.t).collect();
    let mut series = [Vec::new(), Vec::new(), Vec::new()];
    for d in &diag {
        let t = d.t - t0;
        series[0].push(t * d.sup_grad_phi_sq);
        series[1].push(t * d.sup_rm);
        series[2].push(t * t * (d.sup_rm.powi(2) + d.sup_hess_phi.powi(2)));
    }
    gradient_report(times, series, bound)
}

/// The same series on a homogeneous trajectory, stopping `margin` before any extinction.
pub fn gradient_estimate_series_hom(traj: &HomTrajectory, bound: f64, margin: f64) -> GradientEstimateReport {
    let t0 = traj.samples[0].t;
    let stop = traj.extinction.as_ref().map_or(f64::INFINITY, |e| e.t_sing - margin);
    let mut times = Vec::new();
    let mut series = [Vec::new(), Vec::new(), Vec::new()];
    for s in traj.samples.iter().filter(|s| s.t <= stop) {
        let g = hom_geometry(traj.model, s);
        let t = s.t - t0;
        times.push(s.t);
        series[0].push(t * g.energy_density);
        series[1].push(t * g.riemann_norm);
        series[2].push(t * t * (g.riemann_norm.powi(2) + g.hessian_norm_sq));
    }
    gradient_report(times, series, bound)
}

fn gradient_report(times: Vec<f64>, series: [Vec<f64>; 3], bound: f64) -> GradientEstimateReport {
    let worst = series.iter().flatten().fold(0.0f64, |m, v| if v.is_finite() { m.max(*v) } else { f64::INFINITY });
    let slopes = [slope(&times, &series[0]), slope(&times, &series[1]), slope(&times, &series[2])];
    let verdict = Verdict::classify("derivative series bounded", worst, bound, 0.0);
    GradientEstimateReport { times, series, slopes, verdict }
}

impl Check {
    pub fn status(&self) -> Status {
        self.verdict.status
    }
}
