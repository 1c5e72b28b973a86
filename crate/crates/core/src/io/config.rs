//! Run configuration: a JSON document validated against a fixed schema.
//!
//! Every optional key has an explicit default; [`RunConfig::resolved_json`]
//! echoes the configuration with all defaults filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};
use crate::fixtures;
use crate::flow::{FlowState, RunPolicy};
use crate::grid::{Grid, MapField, MetricField, TargetSpec};
use crate::homogeneous::{Model, ModelKind};
use crate::reduced_volume::{DistanceOptions, SphereChart};
use crate::schedule::CouplingSchedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Homogeneous,
    Pde,
    Functionals,
    ReducedVolume,
    Verify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    /// Seed of every randomized fixture.
    #[serde(default)]
    pub seed: u64,
    /// Shorthand for a constant schedule; folded into `schedule` on resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub schedule: Option<CouplingSchedule>,
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Spacing of CSV rows and grid samples.
    #[serde(default)]
    pub sample_interval: Option<f64>,
    #[serde(default)]
    pub homogeneous: Option<HomConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub functionals: FunctionalsConfig,
    #[serde(default)]
    pub monitors: MonitorsConfig,
    #[serde(default)]
    pub reduced_volume: Option<ReducedVolumeConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
    #[serde(default)]
    pub checkpoint: CheckpointConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomConfig {
    pub model: ModelKind,
    #[serde(default)]
    pub normalized: bool,
    #[serde(default = "default_hom_dt")]
    pub dt: f64,
}

fn default_hom_dt() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricInit {
    Flat,
    /// `scale · δ`.
    Constant { scale: f64 },
    /// Seeded smooth perturbation of `δ`.
    Smooth { amp: f64 },
    /// Conformal periodic bump.
    Bump { amp: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MapInit {
    /// North pole of a sphere target, zero for the flat target.
    Constant,
    /// Seeded smooth map.
    Smooth { amp: f64 },
    /// Unit-speed equator map (sphere targets only).
    Equator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_metric")]
    pub metric: MetricInit,
    #[serde(default = "default_map")]
    pub map: MapInit,
    #[serde(default = "default_target")]
    pub target: TargetSpec,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default)]
    pub dt_max: Option<f64>,
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
}

fn default_dim() -> usize {
    2
}
fn default_n() -> usize {
    32
}
fn default_period() -> f64 {
    std::f64::consts::TAU
}
fn default_metric() -> MetricInit {
    MetricInit::Flat
}
fn default_map() -> MapInit {
    MapInit::Constant
}
fn default_target() -> TargetSpec {
    TargetSpec::Sphere { sphere_dim: 2, radius: 1.0 }
}
fn default_cfl() -> f64 {
    0.2
}
fn default_blowup() -> f64 {
    1e8
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            n: default_n(),
            period: default_period(),
            metric: default_metric(),
            map: default_map(),
            target: default_target(),
            cfl: default_cfl(),
            dt_max: None,
            blowup_threshold: default_blowup(),
        }
    }
}

impl GridConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n, self.period)
    }

    pub fn initial_state(&self, seed: u64) -> Result<FlowState> {
        self.initial_state_on(self.grid()?, seed)
    }

    /// Initial data sampled on `grid`, which may differ from the configured one.
    pub fn initial_state_on(&self, grid: Grid, seed: u64) -> Result<FlowState> {
        let g = match self.metric {
            MetricInit::Flat => MetricField::flat(grid),
            MetricInit::Constant { scale } => MetricField::constant(grid, scale),
            MetricInit::Smooth { amp } => fixtures::smooth_metric(grid, seed, amp),
            MetricInit::Bump { amp } => fixtures::bump_metric(grid, amp),
        };
        let phi = match (&self.map, self.target) {
            (MapInit::Constant, TargetSpec::FlatScalar) => MapField::constant(grid, &[0.0]),
            (MapInit::Constant, TargetSpec::Sphere { sphere_dim, radius }) => {
                let mut v = vec![0.0; sphere_dim + 1];
                v[sphere_dim] = radius;
                MapField::constant(grid, &v)
            }
            (MapInit::Smooth { amp }, TargetSpec::FlatScalar) => {
                let f = fixtures::smooth_scalar(grid, seed + 1, *amp);
                MapField { grid, components: 1, values: f.values }
            }
            (MapInit::Smooth { amp }, TargetSpec::Sphere { sphere_dim: 2, radius }) => {
                fixtures::smooth_sphere_map(grid, seed + 1, *amp, radius)
            }
            (MapInit::Equator, TargetSpec::Sphere { sphere_dim: 2, radius: 1.0 }) => fixtures::equator_map(grid),
            (map, target) => {
                return Err(RhError::Config {
                    key: "grid.map".into(),
                    message: format!("{map:?} is not available for target {target:?}"),
                })
            }
        };
        FlowState::new(g, phi, self.target)
    }

    pub fn policy(&self, sample_interval: f64) -> RunPolicy {
        RunPolicy { sample_interval, cfl: self.cfl, dt_max: self.dt_max, blowup_threshold: self.blowup_threshold }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsConfig {
    /// `T` in `τ = T − t`; enables the entropy and `μ` columns.
    #[serde(default)]
    pub tau_origin: Option<f64>,
    #[serde(default)]
    pub compute_mu: bool,
    #[serde(default = "default_mono_tol")]
    pub tol: f64,
    #[serde(default = "default_derivative_tol")]
    pub derivative_tol: f64,
    /// Monotonicity verdicts; they require a non-increasing schedule.
    #[serde(default = "yes")]
    pub check_monotonicity: bool,
}

fn default_mono_tol() -> f64 {
    1e-6
}
fn default_derivative_tol() -> f64 {
    1e-4
}
fn yes() -> bool {
    true
}

impl Default for FunctionalsConfig {
    fn default() -> Self {
        Self {
            tau_origin: None,
            compute_mu: false,
            tol: default_mono_tol(),
            derivative_tol: default_derivative_tol(),
            check_monotonicity: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Evolution-residual tolerance; `null` derives it from the discretization.
    #[serde(default)]
    pub evolution_tol: Option<f64>,
    /// Constant in the `t·sup|∇φ|²`, `t·sup|Rm|` gradient-estimate series.
    #[serde(default = "default_gradient_bound")]
    pub gradient_bound: f64,
}

fn default_gradient_bound() -> f64 {
    1e5
}

impl Default for MonitorsConfig {
    fn default() -> Self {
        Self { enabled: true, evolution_tol: None, gradient_bound: default_gradient_bound() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedVolumeConfig {
    pub taus: Vec<f64>,
    #[serde(default)]
    pub base_point: [f64; 2],
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_stationarity")]
    pub stationarity_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Monotonicity tolerance of the volume series.
    #[serde(default = "default_rv_tol")]
    pub tol: f64,
    #[serde(default = "default_chart")]
    pub chart: SphereChart,
    /// Simpson intervals over the polar angle (sphere model).
    #[serde(default = "default_intervals")]
    pub intervals: usize,
}

fn default_segments() -> usize {
    32
}
fn default_seeds() -> usize {
    5
}
fn default_stationarity() -> f64 {
    1e-6
}
fn default_max_iter() -> usize {
    2000
}
fn default_rv_tol() -> f64 {
    1e-4
}
fn default_chart() -> SphereChart {
    SphereChart::GreatCircle
}
fn default_intervals() -> usize {
    64
}

impl ReducedVolumeConfig {
    pub fn distance_options(&self, seed: u64) -> DistanceOptions {
        DistanceOptions {
            segments: self.segments,
            seeds: self.seeds,
            stationarity_tol: self.stationarity_tol,
            max_iter: self.max_iter,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Gauge,
    Evolution,
    Bochner,
    Variation,
    All,
}

impl std::str::FromStr for Suite {
    type Err = RhError;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| RhError::Config {
            key: "verify.suite".into(),
            message: format!("unknown suite `{s}` (expected gauge, evolution, bochner, variation or all)"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_suite")]
    pub suite: Suite,
    /// Number of grid doublings after the base grid.
    #[serde(default = "default_refine")]
    pub refine: usize,
    #[serde(default = "default_n")]
    pub base_n: usize,
}

fn default_suite() -> Suite {
    Suite::All
}
fn default_refine() -> usize {
    1
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { suite: default_suite(), refine: default_refine(), base_n: default_n() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    /// Write a checkpoint every this many samples.
    #[serde(default)]
    pub every: Option<usize>,
    /// Continue from this checkpoint instead of the initial data.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> RhError {
    RhError::Config { key: key.into(), message: message.into() }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(key, format!("must be a positive finite number, got {v}")))
    }
}

impl RunConfig {
    /// Configuration for `scenario` with every section at its default.
    pub fn defaults(scenario: Scenario) -> Self {
        Self {
            scenario,
            seed: 0,
            alpha: None,
            schedule: None,
            t_end: None,
            sample_interval: None,
            homogeneous: None,
            grid: None,
            functionals: FunctionalsConfig::default(),
            monitors: MonitorsConfig::default(),
            reduced_volume: None,
            verify: None,
            checkpoint: CheckpointConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parse, validate and resolve a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path.is_empty() || path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })?;
        raw.resolve()
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fill defaults and check cross-field constraints.
    pub fn resolve(mut self) -> Result<Self> {
        let schedule = match (self.alpha.take(), self.schedule.take()) {
            (Some(_), Some(_)) => return Err(config_err("alpha", "give either `alpha` or `schedule`, not both")),
            (Some(a), None) => CouplingSchedule::constant(a).map_err(|e| config_err("alpha", e.to_string()))?,
            (None, Some(s)) => {
                s.validate().map_err(|e| config_err("schedule", e.to_string()))?;
                s
            }
            (None, None) if self.scenario == Scenario::Verify => CouplingSchedule::Constant { alpha: 1.0 },
            (None, None) => return Err(config_err("alpha", "a coupling `alpha` or `schedule` is required")),
        };
        self.schedule = Some(schedule.clone());

        let hom = self.homogeneous.is_some();
        let grid = self.grid.is_some();
        match self.scenario {
            Scenario::Homogeneous if !hom => return Err(config_err("homogeneous", "required by this scenario")),
            Scenario::Pde if !grid => return Err(config_err("grid", "required by this scenario")),
            Scenario::Functionals | Scenario::ReducedVolume if hom == grid => {
                return Err(config_err("homogeneous", "exactly one of `homogeneous` and `grid` is required"))
            }
            Scenario::Homogeneous if grid => return Err(config_err("grid", "not used by this scenario")),
            Scenario::Pde if hom => return Err(config_err("homogeneous", "not used by this scenario")),
            _ => {}
        }
        if self.scenario == Scenario::Verify {
            if hom {
                return Err(config_err("homogeneous", "not used by this scenario"));
            }
            self.grid.get_or_insert_with(GridConfig::default);
            self.verify.get_or_insert_with(VerifyConfig::default);
        } else if self.verify.is_some() {
            return Err(config_err("verify", "only used by the verify scenario"));
        }
        if self.scenario == Scenario::ReducedVolume {
            if self.reduced_volume.is_none() {
                return Err(config_err("reduced_volume", "required by this scenario"));
            }
        } else if self.reduced_volume.is_some() {
            return Err(config_err("reduced_volume", "only used by the reduced-volume scenario"));
        }

        if self.scenario != Scenario::Verify {
            let t_end = self.t_end.ok_or_else(|| config_err("t_end", "required"))?;
            positive("t_end", t_end)?;
        }
        let default_interval = if hom { 0.01 } else { 0.1 };
        let interval = *self.sample_interval.get_or_insert(default_interval);
        positive("sample_interval", interval)?;

        if let Some(h) = &self.homogeneous {
            positive("homogeneous.dt", h.dt)?;
            if h.dt > interval {
                return Err(config_err("homogeneous.dt", "must not exceed sample_interval"));
            }
        }
        if let Some(g) = &self.grid {
            g.grid().map_err(|e| config_err("grid", e.to_string()))?;
            positive("grid.cfl", g.cfl)?;
            if let Some(m) = g.dt_max {
                positive("grid.dt_max", m)?;
            }
            positive("grid.blowup_threshold", g.blowup_threshold)?;
            if let TargetSpec::Sphere { sphere_dim, radius } = g.target {
                TargetSpec::sphere(sphere_dim, radius).map_err(|e| config_err("grid.target", e.to_string()))?;
            }
            match g.metric {
                MetricInit::Constant { scale } => positive("grid.metric.scale", scale)?,
                MetricInit::Smooth { amp } if !(0.0..2.0 / 3.0).contains(&amp) => {
                    return Err(config_err("grid.metric.amp", "must lie in [0, 2/3) to keep the metric positive"))
                }
                _ => {}
            }
        }
        if let Some(tau) = self.functionals.tau_origin {
            if !tau.is_finite() {
                return Err(config_err("functionals.tau_origin", "must be finite"));
            }
            if let Some(t_end) = self.t_end {
                if tau <= t_end {
                    return Err(config_err("functionals.tau_origin", "must exceed t_end so that τ = T − t stays positive"));
                }
            }
        }
        positive("functionals.tol", self.functionals.tol)?;
        positive("functionals.derivative_tol", self.functionals.derivative_tol)?;
        if self.functionals.compute_mu && self.functionals.tau_origin.is_none() {
            return Err(config_err("functionals.compute_mu", "needs functionals.tau_origin"));
        }
        if let Some(t) = self.monitors.evolution_tol {
            positive("monitors.evolution_tol", t)?;
        }
        if let Some(rv) = &self.reduced_volume {
            if rv.taus.is_empty() {
                return Err(config_err("reduced_volume.taus", "needs at least one value"));
            }
            for (i, t) in rv.taus.iter().enumerate() {
                positive(&format!("reduced_volume.taus[{i}]"), *t)?;
            }
            if rv.taus.windows(2).any(|w| w[1] <= w[0]) {
                return Err(config_err("reduced_volume.taus", "must be strictly increasing"));
            }
            if let (Some(last), Some(t_end)) = (rv.taus.last(), self.t_end) {
                if *last > t_end {
                    return Err(config_err("reduced_volume.taus", "backward time τ cannot exceed t_end"));
                }
            }
            if rv.segments < crate::reduced_volume::MIN_NODES {
                return Err(config_err(
                    "reduced_volume.segments",
                    format!("must be at least {}", crate::reduced_volume::MIN_NODES),
                ));
            }
            if rv.intervals == 0 || rv.intervals % 2 == 1 {
                return Err(config_err("reduced_volume.intervals", "must be a positive even number"));
            }
            if let Some(h) = &self.homogeneous {
                if h.model != ModelKind::Sphere2 || h.normalized {
                    return Err(config_err("homogeneous.model", "reduced volume needs the unnormalized sphere2 model"));
                }
            }
        }
        if let Some(v) = &self.verify {
            if v.base_n < 8 {
                return Err(config_err("verify.base_n", "must be at least 8"));
            }
        }
        if self.checkpoint.every == Some(0) {
            return Err(config_err("checkpoint.every", "must be positive"));
        }

        let monotone_requested = self.functionals.check_monotonicity && self.scenario != Scenario::Verify;
        if monotone_requested && !schedule.is_non_increasing() {
            return Err(config_err(
                "schedule",
                "monotonicity checks require a non-increasing coupling α(t); \
                 use a non-increasing schedule or set functionals.check_monotonicity = false",
            ));
        }
        Ok(self)
    }

    pub fn schedule(&self) -> &CouplingSchedule {
        self.schedule.as_ref().expect("resolved config has a schedule")
    }

    pub fn t_end(&self) -> f64 {
        self.t_end.expect("resolved config has t_end")
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval.expect("resolved config has a sample interval")
    }

    pub fn model(&self) -> Option<Model> {
        self.homogeneous.as_ref().map(|h| Model::new(h.model, h.normalized))
    }

    /// Pretty JSON with every default explicit.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match RunConfig::from_json(text) {
            Err(RhError::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_homogeneous_config_is_filled() {
        let c = RunConfig::from_json(
            r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "alpha": 0.5, "t_end": 1.5}"#,
        )
        .unwrap();
        assert_eq!(c.schedule(), &CouplingSchedule::Constant { alpha: 0.5 });
        assert_eq!(c.homogeneous.as_ref().unwrap().dt, 1e-3);
        assert_eq!(c.sample_interval(), 0.01);
        let echo = c.resolved_json();
        assert!(echo.contains("\"check_monotonicity\": true"));
        assert!(!echo.contains("\"alpha\": 0.5,\n  \"schedule\""));
        // The echo parses back to the same configuration.
        assert_eq!(RunConfig::from_json(&echo).unwrap(), c);
    }

    #[test]
    fn schema_violations_name_their_key() {
        assert_eq!(key_of(r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "alpha": -1, "t_end": 1}"#), "alpha");
        assert_eq!(
            key_of(r#"{"scenario": "pde", "grid": {"n": 32, "colour": 1}, "alpha": 1, "t_end": 1}"#),
            "grid.colour"
        );
        assert_eq!(key_of(r#"{"scenario": "pde", "grid": {"n": "many"}, "alpha": 1, "t_end": 1}"#), "grid.n");
        assert_eq!(key_of(r#"{"scenario": "pde", "grid": {"n": 4}, "alpha": 1, "t_end": 1}"#), "grid");
        assert_eq!(key_of(r#"{"scenario": "pde", "grid": {}, "alpha": 1}"#), "t_end");
        assert_eq!(key_of(r#"{"scenario": "warp", "alpha": 1}"#), "scenario");
        assert_eq!(
            key_of(r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "schedule": {"kind": "piecewise-linear", "times": [0, 1], "values": [1, -1]}, "t_end": 1}"#),
            "schedule"
        );
    }

    #[test]
    fn increasing_schedule_needs_monotonicity_off() {
        let base = r#"{"scenario": "homogeneous", "homogeneous": {"model": "sphere2"}, "t_end": 1,
            "schedule": {"kind": "piecewise-linear", "times": [0, 1], "values": [0.5, 1.0]}"#;
        match RunConfig::from_json(&format!("{base}}}")) {
            Err(RhError::Config { key, message }) => {
                assert_eq!(key, "schedule");
                assert!(message.contains("non-increasing"));
            }
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::from_json(&format!("{base}, \"functionals\": {{\"check_monotonicity\": false}}}}")).is_ok());
    }

    #[test]
    fn verify_needs_nothing() {
        let c = RunConfig::from_json(r#"{"scenario": "verify"}"#).unwrap();
        assert_eq!(c.verify, Some(VerifyConfig::default()));
        assert_eq!(c.grid, Some(GridConfig::default()));
    }

    #[test]
    fn grid_initial_data() {
        let mut g = GridConfig { n: 16, ..GridConfig::default() };
        let st = g.initial_state(3).unwrap();
        assert_eq!(st.phi.at(5), &[0.0, 0.0, 1.0]);
        g.map = MapInit::Smooth { amp: 0.3 };
        g.metric = MetricInit::Smooth { amp: 0.1 };
        assert_eq!(g.initial_state(3).unwrap(), g.initial_state(3).unwrap());
        g.target = TargetSpec::FlatScalar;
        g.map = MapInit::Equator;
        assert!(matches!(g.initial_state(3), Err(RhError::Config { .. })));
    }
}
