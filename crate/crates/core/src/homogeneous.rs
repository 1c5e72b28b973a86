//! Exact ODE reductions of the flow on homogeneous product models.
//!
//! `Sphere2` is the round two-sphere of Gauss curvature 1 scaled by `c`, with
//! the identity map into the unscaled sphere. `ProductS2L` is `S² × L` with
//! metric `c g_{S²} ⊕ d g_L`, `L` a closed genus-2 surface of curvature −1, and
//! again the identity map into the initial metric. The map stays harmonic, so
//! only the scale factors evolve.
//!
//! Geometry constants (with respect to `g`, per factor):
//!
//! | quantity          | `S²` factor | `L` factor |
//! |-------------------|-------------|------------|
//! | Ricci eigenvalue  | `1/c`       | `−1/d`     |
//! | `∇φ⊗∇φ` eigenvalue| `1/c`       | `1/d`      |
//! | `S_ij` eigenvalue | `(1−α)/c`   | `−(1+α)/d` |
//!
//! Each factor is two-dimensional, so traces pick up a factor 2.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};
use crate::schedule::CouplingSchedule;

/// Scale factors at or below this mark extinction.
pub const EXTINCTION_THRESHOLD: f64 = 1e-6;
/// Time resolution of the extinction bisection.
pub const EVENT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sphere2,
    #[serde(rename = "product-s2l")]
    ProductS2L,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    /// Volume-preserving variant.
    pub normalized: bool,
}

impl Model {
    pub fn new(kind: ModelKind, normalized: bool) -> Self {
        Self { kind, normalized }
    }

    /// Dimension `m` of the manifold.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::Sphere2 => 2,
            ModelKind::ProductS2L => 4,
        }
    }
}

/// `(t, c, d, α)`; `d` is fixed at 1 for `Sphere2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousState {
    pub t: f64,
    pub c: f64,
    pub d: f64,
    pub alpha: f64,
}

impl HomogeneousState {
    pub fn initial(alpha: f64) -> Self {
        Self { t: 0.0, c: 1.0, d: 1.0, alpha }
    }
}

/// `(ċ, ḋ)`.
pub fn model_rhs(model: Model, s: &HomogeneousState) -> (f64, f64) {
    let a = s.alpha;
    match (model.kind, model.normalized) {
        (ModelKind::Sphere2, false) => (-2.0 + 2.0 * a, 0.0),
        (ModelKind::Sphere2, true) => (0.0, 0.0),
        (ModelKind::ProductS2L, false) => (-2.0 + 2.0 * a, 2.0 + 2.0 * a),
        // ∂ₜg = −2S_ij + (2/m) g ⨍S with m = 4; reduces to the c², d² form when cd = 1.
        (ModelKind::ProductS2L, true) => ((a - 1.0) - (a + 1.0) * s.c / s.d, (a + 1.0) - (a - 1.0) * s.d / s.c),
    }
}

pub fn closed_form(model: Model, alpha: f64, t: f64) -> Result<HomogeneousState> {
    let state = match (model.kind, model.normalized) {
        (ModelKind::Sphere2, false) => HomogeneousState { t, c: 1.0 + (2.0 * alpha - 2.0) * t, d: 1.0, alpha },
        (ModelKind::Sphere2, true) => HomogeneousState { t, c: 1.0, d: 1.0, alpha },
        (ModelKind::ProductS2L, false) => HomogeneousState {
            t,
            c: 1.0 + (2.0 * alpha - 2.0) * t,
            d: 1.0 + (2.0 * alpha + 2.0) * t,
            alpha,
        },
        (ModelKind::ProductS2L, true) if alpha == 1.0 => {
            HomogeneousState { t, c: 1.0 / (1.0 + 2.0 * t), d: 1.0 + 2.0 * t, alpha }
        }
        (ModelKind::ProductS2L, true) => {
            return Err(RhError::NoClosedForm(format!("normalized S²×L with α = {alpha}")));
        }
    };
    if state.c <= 0.0 || state.d <= 0.0 {
        return Err(RhError::InvalidArgument(format!("t = {t} lies beyond the extinction time")));
    }
    Ok(state)
}

/// Closed-form geometry of a homogeneous state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HomGeometry {
    pub dim: usize,
    pub scalar_curvature: f64,
    pub energy_density: f64,
    /// `S = R − α|∇φ|²`.
    pub s: f64,
    /// `|S_ij|²`.
    pub s_norm_sq: f64,
    /// Ricci eigenvalues on the `S²` and `L` factors.
    pub ricci_eigenvalues: [f64; 2],
    /// `S_ij` eigenvalues on the `S²` and `L` factors.
    pub s_eigenvalues: [f64; 2],
    /// `|∇φ⊗∇φ|²`.
    pub outer_norm_sq: f64,
    /// `⟨Rm^N(∇_iφ,∇_jφ)∇_jφ, ∇_iφ⟩`.
    pub target_term: f64,
    /// `|∇²φ|²`; the identity map is totally geodesic here.
    pub hessian_norm_sq: f64,
    /// `|τφ|²`.
    pub tension_norm_sq: f64,
    pub riemann_norm: f64,
    /// Riemannian volume, with `|L| = 4π`.
    pub volume: f64,
    /// Volume relative to the initial configuration `c = d = 1`.
    pub relative_volume: f64,
}

pub fn hom_geometry(model: Model, s: &HomogeneousState) -> HomGeometry {
    let (c, d, a) = (s.c, s.d, s.alpha);
    let four_pi = 4.0 * std::f64::consts::PI;
    match model.kind {
        ModelKind::Sphere2 => {
            let r = 2.0 / c;
            let e = 2.0 / c;
            HomGeometry {
                dim: 2,
                scalar_curvature: r,
                energy_density: e,
                s: r - a * e,
                s_norm_sq: 2.0 * ((1.0 - a) / c).powi(2),
                ricci_eigenvalues: [1.0 / c, 0.0],
                s_eigenvalues: [(1.0 - a) / c, 0.0],
                outer_norm_sq: 2.0 / (c * c),
                target_term: 2.0 / (c * c),
                hessian_norm_sq: 0.0,
                tension_norm_sq: 0.0,
                riemann_norm: 2.0 / c,
                volume: four_pi * c,
                relative_volume: c,
            }
        }
        ModelKind::ProductS2L => {
            let r = 2.0 / c - 2.0 / d;
            let e = 2.0 / c + 2.0 / d;
            HomGeometry {
                dim: 4,
                scalar_curvature: r,
                energy_density: e,
                s: r - a * e,
                s_norm_sq: 2.0 * ((1.0 - a) / c).powi(2) + 2.0 * ((1.0 + a) / d).powi(2),
                ricci_eigenvalues: [1.0 / c, -1.0 / d],
                s_eigenvalues: [(1.0 - a) / c, -(1.0 + a) / d],
                outer_norm_sq: 2.0 / (c * c) + 2.0 / (d * d),
                target_term: 2.0 / (c * c) - 2.0 / (d * d),
                hessian_norm_sq: 0.0,
                tension_norm_sq: 0.0,
                riemann_norm: 2.0 * (1.0 / (c * c) + 1.0 / (d * d)).sqrt(),
                volume: four_pi * four_pi * c * d,
                relative_volume: c * d,
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum HomEvent {
    /// A scale factor reached the extinction threshold at `t`.
    Extinction { t: f64 },
    /// Both rates fell below `1e-10`.
    FixedPoint { t: f64 },
}

/// Terminal data of an extinct trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extinction {
    /// Time at which a scale factor crossed the threshold (bisected).
    pub t_event: f64,
    /// Extinction time extrapolated linearly from the threshold crossing
    /// (exact for the unnormalized models, whose rates are constant).
    pub t_sing: f64,
    pub last: HomogeneousState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomTrajectory {
    pub model: Model,
    pub samples: Vec<HomogeneousState>,
    pub events: Vec<HomEvent>,
    pub extinction: Option<Extinction>,
}

impl HomTrajectory {
    pub fn last(&self) -> &HomogeneousState {
        self.samples.last().expect("trajectory has an initial sample")
    }

    /// Cubic Hermite interpolation between samples using the model rates.
    pub fn interpolate(&self, t: f64) -> Option<HomogeneousState> {
        let s = &self.samples;
        if t < s[0].t || t > self.last().t {
            return None;
        }
        if s.len() == 1 {
            return Some(s[0]);
        }
        let k = s.partition_point(|x| x.t <= t).clamp(1, s.len() - 1);
        let (a, b) = (&s[k - 1], &s[k]);
        let h = b.t - a.t;
        if h == 0.0 {
            return Some(*a);
        }
        let u = (t - a.t) / h;
        let (ra, rb) = (model_rhs(self.model, a), model_rhs(self.model, b));
        let herm = |y0: f64, y1: f64, m0: f64, m1: f64| {
            let (u2, u3) = (u * u, u * u * u);
            (2.0 * u3 - 3.0 * u2 + 1.0) * y0
                + (u3 - 2.0 * u2 + u) * h * m0
                + (-2.0 * u3 + 3.0 * u2) * y1
                + (u3 - u2) * h * m1
        };
        Some(HomogeneousState {
            t,
            c: herm(a.c, b.c, ra.0, rb.0),
            d: herm(a.d, b.d, ra.1, rb.1),
            alpha: a.alpha + u * (b.alpha - a.alpha),
        })
    }
}

fn rk4(model: Model, schedule: &CouplingSchedule, s: &HomogeneousState, dt: f64) -> HomogeneousState {
    let at = |t: f64, c: f64, d: f64| HomogeneousState { t, c, d, alpha: schedule.value(t) };
    let k1 = model_rhs(model, &at(s.t, s.c, s.d));
    let k2 = model_rhs(model, &at(s.t + 0.5 * dt, s.c + 0.5 * dt * k1.0, s.d + 0.5 * dt * k1.1));
    let k3 = model_rhs(model, &at(s.t + 0.5 * dt, s.c + 0.5 * dt * k2.0, s.d + 0.5 * dt * k2.1));
    let k4 = model_rhs(model, &at(s.t + dt, s.c + dt * k3.0, s.d + dt * k3.1));
    let t = s.t + dt;
    at(
        t,
        s.c + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        s.d + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

fn extinct(model: Model, s: &HomogeneousState) -> bool {
    let d_extinct = model.kind == ModelKind::ProductS2L && !(s.d > EXTINCTION_THRESHOLD);
    !(s.c > EXTINCTION_THRESHOLD) || d_extinct
}

/// RK4 from `c = d = 1` at `t = 0`.
pub fn integrate_model(model: Model, schedule: &CouplingSchedule, t_end: f64, dt: f64) -> Result<HomTrajectory> {
    integrate_from(model, schedule, HomogeneousState::initial(schedule.value(0.0)), t_end, dt)
}

pub fn integrate_from(
    model: Model,
    schedule: &CouplingSchedule,
    initial: HomogeneousState,
    t_end: f64,
    dt: f64,
) -> Result<HomTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(RhError::InvalidArgument(format!("dt = {dt} must be positive")));
    }
    schedule.validate()?;
    let mut traj = HomTrajectory { model, samples: vec![initial], events: Vec::new(), extinction: None };
    let mut cur = initial;
    let mut fixed = false;
    while cur.t < t_end && t_end - cur.t > 1e-14 * t_end.abs().max(1.0) {
        let h = dt.min(t_end - cur.t);
        let next = rk4(model, schedule, &cur, h);
        if extinct(model, &next) || !next.c.is_finite() || !next.d.is_finite() {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > EVENT_TOLERANCE {
                let mid = 0.5 * (lo + hi);
                let probe = rk4(model, schedule, &cur, mid);
                if extinct(model, &probe) || !probe.c.is_finite() || !probe.d.is_finite() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let at = rk4(model, schedule, &cur, hi);
            let rates = model_rhs(model, &at);
            let to_zero = |x: f64, r: f64| if r < 0.0 { x / -r } else { f64::INFINITY };
            let mut dt_sing = to_zero(at.c, rates.0);
            if model.kind == ModelKind::ProductS2L {
                dt_sing = dt_sing.min(to_zero(at.d, rates.1));
            }
            let last_valid = if lo > 0.0 { rk4(model, schedule, &cur, lo) } else { cur };
            if lo > 0.0 {
                traj.samples.push(last_valid);
            }
            traj.events.push(HomEvent::Extinction { t: at.t });
            traj.extinction = Some(Extinction {
                t_event: at.t,
                t_sing: at.t + if dt_sing.is_finite() { dt_sing } else { 0.0 },
                last: last_valid,
            });
            return Ok(traj);
        }
        cur = next;
        traj.samples.push(cur);
        let r = model_rhs(model, &cur);
        if !fixed && r.0.abs() < 1e-10 && r.1.abs() < 1e-10 {
            fixed = true;
            traj.events.push(HomEvent::FixedPoint { t: cur.t });
        }
    }
    Ok(traj)
}

/// Rescale an unnormalized trajectory to unit relative volume, reparametrizing
/// time by `t̄ = ∫ λ dt` with `λ = vol_rel^{−2/m}`.
pub fn renormalize(traj: &HomTrajectory) -> HomTrajectory {
    let model = traj.model;
    let m = model.dim() as f64;
    let lambda = |s: &HomogeneousState| hom_geometry(model, s).relative_volume.powf(-2.0 / m);
    // dλ/dt = (2/m) λ ⨍S, with the averages constant on homogeneous states.
    let dlambda = |s: &HomogeneousState| {
        if model.normalized {
            // The volume is already fixed; λ stays at its initial value.
            0.0
        } else {
            2.0 / m * lambda(s) * hom_geometry(model, s).s
        }
    };
    let mut out = Vec::with_capacity(traj.samples.len());
    let mut tbar = traj.samples[0].t;
    for (k, s) in traj.samples.iter().enumerate() {
        if k > 0 {
            let p = &traj.samples[k - 1];
            let h = s.t - p.t;
            let trapezoid = 0.5 * h * (lambda(p) + lambda(s));
            let correction = h * h / 12.0 * (dlambda(p) - dlambda(s));
            // Next to extinction λ' outruns the step; there λ⁻² (a volume power) is
            // nearly linear in t, and integrating that exactly gives the harmonic mean.
            tbar += if correction.abs() <= 0.1 * trapezoid {
                trapezoid + correction
            } else {
                2.0 * h / (1.0 / lambda(p) + 1.0 / lambda(s))
            };
        }
        let l = lambda(s);
        let d = if model.kind == ModelKind::ProductS2L { l * s.d } else { s.d };
        out.push(HomogeneousState { t: tbar, c: l * s.c, d, alpha: s.alpha });
    }
    HomTrajectory {
        model: Model::new(model.kind, true),
        samples: out,
        events: Vec::new(),
        // The rescaled clock may run to infinity at extinction; the output just ends.
        extinction: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BreatherKind {
    Shrinking,
    Steady,
    Expanding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreatherPair {
    pub t1: f64,
    pub t2: f64,
    pub scale: f64,
    pub kind: BreatherKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreatherReport {
    pub pairs: Vec<BreatherPair>,
    pub pairs_tested: usize,
    /// Every tested pair is a breather: the trajectory is homothetic, i.e. a soliton.
    pub homothetic: bool,
}

/// Pairs `(t₁ < t₂)` with `state(t₂) = scale · state(t₁)` to relative accuracy `1e-8`.
///
/// At most `max_samples` evenly strided samples are compared.
pub fn breather_scan(traj: &HomTrajectory, max_samples: usize) -> Result<BreatherReport> {
    if traj.samples.len() < 2 {
        return Err(RhError::InvalidArgument("breather scan needs at least two samples".into()));
    }
    let stride = traj.samples.len().div_ceil(max_samples.max(2));
    let picked: Vec<&HomogeneousState> = traj.samples.iter().step_by(stride.max(1)).collect();
    let mut pairs = Vec::new();
    let mut tested = 0;
    for (i, a) in picked.iter().enumerate() {
        for b in &picked[i + 1..] {
            tested += 1;
            let scale = b.c / a.c;
            let matches = match traj.model.kind {
                ModelKind::Sphere2 => true,
                ModelKind::ProductS2L => ((b.d / a.d) - scale).abs() <= 1e-8 * scale,
            };
            if matches {
                let kind = if (scale - 1.0).abs() <= 1e-8 {
                    BreatherKind::Steady
                } else if scale < 1.0 {
                    BreatherKind::Shrinking
                } else {
                    BreatherKind::Expanding
                };
                pairs.push(BreatherPair { t1: a.t, t2: b.t, scale, kind });
            }
        }
    }
    Ok(BreatherReport { homothetic: pairs.len() == tested, pairs, pairs_tested: tested })
}
