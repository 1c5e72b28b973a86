//! Subcommand orchestration: dispatch a resolved configuration to the
//! numerical modules and write every artifact into one output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::Serialize;

use super::checkpoint::{Checkpoint, CheckpointState, RngState};
use super::config::{RunConfig, Scenario, Suite};
use super::series::{grid_rows, hom_row, write_csv, SeriesRow};
use crate::error::{Result, RhError};
use crate::fixtures;
use crate::flow::{gauge_identity_residual, resume_with, run, Diagnostics, FlowState, RunPolicy, SampleClock, SingularityKind, Trajectory};
use crate::functionals::{
    first_variation_check, monotonicity_series, monotonicity_series_hom, FunctionalKind, FunctionalReport, MuOptions,
    SeriesOptions, Variation,
};
use crate::grid::{Grid, MetricField, TargetSpec};
use crate::homogeneous::{hom_geometry, integrate_from, integrate_model, Extinction, HomTrajectory, HomogeneousState};
use crate::monitors::{
    bochner_residual, bochner_terms, evolution_residuals, evolution_residuals_hom, gradient_estimate_series,
    gradient_estimate_series_hom, max_principle_bounds, max_principle_bounds_hom, refinement_ratio, EvolutionOptions,
    GradientEstimateReport, MonitorReport, BOCHNER_CHECK, ENERGY_DENSITY_CHECK, SCALAR_S_CHECK,
};
use crate::reduced_volume::{
    reduced_volume_grid, reduced_volume_series, reduced_volume_sphere, GridPathSpace, SpherePathSpace,
};
use crate::schedule::CouplingSchedule;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SERIES_CSV: &str = "series.csv";
pub const MONITOR_REPORT: &str = "monitor_report.json";
pub const FUNCTIONAL_REPORT: &str = "functional_report.json";
pub const SINGULARITY_REPORT: &str = "singularity_report.json";
pub const REDUCED_VOLUME_REPORT: &str = "reduced_volume_report.json";
pub const VERIFY_REPORT: &str = "verify_report.json";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SINGULARITY: i32 = 3;
pub const EXIT_MONITOR_FAIL: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Verify,
    Functionals,
    ReducedVolume,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The run ended at a singularity; the report was written.
    Singularity,
    /// Some monitor or functional verdict is FAIL.
    MonitorFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Self::Success => EXIT_OK,
            Self::Singularity => EXIT_SINGULARITY,
            Self::MonitorFailure => EXIT_MONITOR_FAIL,
        }
    }
}

/// Exit code of an error: configuration problems map to 2, everything else to 1.
pub fn error_exit_code(e: &RhError) -> i32 {
    match e {
        RhError::Config { .. } => EXIT_CONFIG,
        _ => EXIT_ERROR,
    }
}

pub fn checkpoint_name(index: usize) -> String {
    format!("checkpoint_{index:06}.rhck")
}

/// Terminal data of a run that stopped at a singularity.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SingularitySummary {
    Grid { t: f64, kind: SingularityKind, last_diagnostics: Diagnostics },
    Homogeneous(Extinction),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorArtifact {
    pub passed: bool,
    #[serde(flatten)]
    pub report: MonitorReport,
    pub gradient_estimate: Option<GradientEstimateReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RefinementCheck {
    pub name: String,
    /// Residual per grid level.
    pub residuals: Vec<f64>,
    /// `residual[k] / residual[k+1]`.
    pub ratios: Vec<f64>,
    /// Required ratio, or the absolute tolerance for single-level checks.
    pub threshold: f64,
    pub passed: bool,
}

impl RefinementCheck {
    fn from_residuals(name: &str, residuals: Vec<f64>, threshold: f64) -> Self {
        let ratios: Vec<f64> = residuals.windows(2).map(|w| refinement_ratio(w[0], w[1])).collect();
        let passed = !ratios.is_empty() && ratios.iter().all(|r| *r >= threshold);
        Self { name: name.into(), residuals, ratios, threshold, passed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub levels: Vec<usize>,
    pub checks: Vec<RefinementCheck>,
    pub passed: bool,
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_series(dir: &Path, rows: &[SeriesRow]) -> Result<()> {
    let f = BufWriter::new(File::create(dir.join(SERIES_CSV))?);
    write_csv(f, rows)
}

fn expected_scenario(cmd: Command) -> Option<Scenario> {
    match cmd {
        Command::Run => None,
        Command::Verify => Some(Scenario::Verify),
        Command::Functionals => Some(Scenario::Functionals),
        Command::ReducedVolume => Some(Scenario::ReducedVolume),
    }
}

/// Execute `cmd` with a resolved configuration, writing artifacts into `out`.
pub fn execute(cmd: Command, config: &RunConfig, out: &Path) -> Result<Outcome> {
    if let Some(want) = expected_scenario(cmd) {
        if config.scenario != want {
            return Err(RhError::Config {
                key: "scenario".into(),
                message: format!("this subcommand runs the {want:?} scenario, the config names {:?}", config.scenario),
            });
        }
    }
    fs::create_dir_all(out)?;
    let mut echo = config.resolved_json();
    echo.push('\n');
    fs::write(out.join(RESOLVED_CONFIG), echo)?;
    match config.scenario {
        Scenario::Homogeneous => homogeneous_run(config, out, true),
        Scenario::Pde => grid_run(config, out, true),
        Scenario::Functionals if config.homogeneous.is_some() => homogeneous_run(config, out, false),
        Scenario::Functionals => grid_run(config, out, false),
        Scenario::ReducedVolume => reduced_volume_run(config, out),
        Scenario::Verify => verify_run(config, out),
    }
}

fn series_options(config: &RunConfig) -> SeriesOptions {
    let f = &config.functionals;
    SeriesOptions {
        tau_origin: f.tau_origin,
        compute_mu: f.compute_mu,
        tol: f.tol,
        derivative_tol: f.derivative_tol,
        mu: MuOptions { seed: config.seed, ..MuOptions::default() },
    }
}

fn drop_monotonicity(report: &mut FunctionalReport) {
    report.verdicts.retain(|v| !v.check.contains("non-decreasing"));
}

fn fixture_rng(config: &RunConfig) -> RngState {
    RngState::capture(config.seed, &ChaCha8Rng::seed_from_u64(config.seed))
}

fn combine(singular: bool, passed: bool) -> Outcome {
    if singular {
        Outcome::Singularity
    } else if !passed {
        Outcome::MonitorFailure
    } else {
        Outcome::Success
    }
}

fn homogeneous_run(config: &RunConfig, out: &Path, monitors: bool) -> Result<Outcome> {
    let model = config.model().expect("homogeneous section");
    let hc = config.homogeneous.as_ref().expect("homogeneous section");
    let schedule = config.schedule();
    let (start, offset) = match &config.checkpoint.resume {
        Some(path) => Checkpoint::load(path)?.state_for_hom(model)?,
        None => (HomogeneousState::initial(schedule.value(0.0)), 0),
    };
    let traj = integrate_from(model, schedule, start, config.t_end(), hc.dt)?;
    let stride = ((config.sample_interval() / hc.dt).round() as usize).max(1);
    let rows_at: Vec<usize> = (0..traj.samples.len())
        .filter(|k| (k + offset) % stride == 0 || *k + 1 == traj.samples.len())
        .collect();

    if let Some(every) = config.checkpoint.every {
        for &k in &rows_at {
            let global = k + offset;
            let row = global / stride;
            if k > 0 && global % stride == 0 && row.is_multiple_of(every) {
                let ck = Checkpoint {
                    state: CheckpointState::Homogeneous { model, state: traj.samples[k] },
                    schedule: schedule.clone(),
                    clock: SampleClock { origin: 0.0, index: global },
                    rng: fixture_rng(config),
                };
                ck.save(&out.join(checkpoint_name(global)))?;
            }
        }
    }

    let mut passed = true;
    let mut w_series = None;
    // Time derivatives by finite differences lose accuracy as the scale factor
    // approaches zero, so functionals stop short of an extinction.
    let mut resolved = traj.clone();
    if let Some(e) = &traj.extinction {
        resolved.samples.retain(|s| s.t <= e.t_sing - 50.0 * hc.dt);
    }
    if !model.normalized && resolved.samples.len() >= 3 {
        let mut report = monotonicity_series_hom(&resolved, schedule, &series_options(config))?;
        if !config.functionals.check_monotonicity {
            drop_monotonicity(&mut report);
        }
        passed &= report.passed();
        w_series = report.entropy_w.clone();
        write_json(out, FUNCTIONAL_REPORT, &report)?;
    }
    let rows: Vec<SeriesRow> =
        rows_at.iter().map(|&k| hom_row(model, &traj.samples[k], w_series.as_ref().and_then(|w| w.get(k).copied()))).collect();
    write_series(out, &rows)?;

    if let Some(e) = &traj.extinction {
        write_json(out, SINGULARITY_REPORT, &SingularitySummary::Homogeneous(*e))?;
    }
    if monitors && config.monitors.enabled && !model.normalized {
        let artifact = hom_monitors(&traj, schedule, config)?;
        passed &= artifact.passed;
        write_json(out, MONITOR_REPORT, &artifact)?;
    }
    Ok(combine(traj.extinction.is_some(), passed))
}

fn hom_monitors(traj: &HomTrajectory, schedule: &CouplingSchedule, config: &RunConfig) -> Result<MonitorArtifact> {
    // The residuals are round-off of closed-form expressions, so the tolerance
    // scales with the squared size of S.
    let scale = traj.samples.iter().map(|s| 1.0 + hom_geometry(traj.model, s).s.abs()).fold(1.0f64, f64::max);
    let tol = config.monitors.evolution_tol.unwrap_or(1e-8 * scale * scale);
    let report = evolution_residuals_hom(traj, schedule, tol)?.merge(max_principle_bounds_hom(traj, schedule)?);
    let margin = 10.0 * config.homogeneous.as_ref().map_or(1e-3, |h| h.dt);
    let gradient = gradient_estimate_series_hom(traj, config.monitors.gradient_bound, margin);
    Ok(MonitorArtifact { passed: report.passed() && gradient.verdict.passed(), report, gradient_estimate: Some(gradient) })
}

impl Checkpoint {
    fn state_for_hom(self, model: crate::homogeneous::Model) -> Result<(HomogeneousState, usize)> {
        match self.state {
            CheckpointState::Homogeneous { model: m, state } if m == model => Ok((state, self.clock.index)),
            _ => Err(RhError::Config {
                key: "checkpoint.resume".into(),
                message: "checkpoint does not hold a state of the configured homogeneous model".into(),
            }),
        }
    }

    fn state_for_grid(self) -> Result<(FlowState, SampleClock)> {
        match self.state {
            CheckpointState::Grid(st) => Ok((st, self.clock)),
            _ => Err(RhError::Config {
                key: "checkpoint.resume".into(),
                message: "checkpoint does not hold a grid state".into(),
            }),
        }
    }
}

/// Grid integration with optional resume and periodic checkpoints.
pub fn integrate_grid(config: &RunConfig, out: Option<&Path>) -> Result<Trajectory> {
    let gc = config.grid.as_ref().expect("grid section");
    let schedule = config.schedule();
    let (initial, clock) = match &config.checkpoint.resume {
        Some(path) => Checkpoint::load(path)?.state_for_grid()?,
        None => {
            let st = gc.initial_state(config.seed)?;
            let clock = SampleClock { origin: st.t, index: 0 };
            (st, clock)
        }
    };
    let policy = gc.policy(config.sample_interval());
    let every = config.checkpoint.every;
    let first = clock.index;
    resume_with(&initial, clock, schedule, config.t_end(), &policy, |k, st| {
        if let (Some(every), Some(dir)) = (every, out) {
            if k > first && k % every == 0 {
                let ck = Checkpoint {
                    state: CheckpointState::Grid(st.clone()),
                    schedule: schedule.clone(),
                    clock: SampleClock { origin: clock.origin, index: k },
                    rng: fixture_rng(config),
                };
                ck.save(&dir.join(checkpoint_name(k)))?;
            }
        }
        Ok(())
    })
}

/// The longest prefix with uniformly spaced samples.
fn uniform_prefix(traj: &Trajectory) -> Trajectory {
    let mut t = traj.clone();
    if t.samples.len() >= 3 {
        let dt = t.samples[1].t - t.samples[0].t;
        let keep = t
            .samples
            .windows(2)
            .position(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0))
            .map_or(t.samples.len(), |i| i + 1);
        t.samples.truncate(keep);
    }
    t
}

fn grid_run(config: &RunConfig, out: &Path, monitors: bool) -> Result<Outcome> {
    let schedule = config.schedule();
    let traj = integrate_grid(config, Some(out))?;
    let diag = traj.diagnostics_at_samples();
    let mut passed = true;
    let functionals = if traj.samples.len() >= 3 {
        let mut report = monotonicity_series(&traj, schedule, &series_options(config))?;
        if !config.functionals.check_monotonicity {
            drop_monotonicity(&mut report);
        }
        passed &= report.passed();
        write_json(out, FUNCTIONAL_REPORT, &report)?;
        Some(report)
    } else {
        None
    };
    write_series(out, &grid_rows(&diag, functionals.as_ref()))?;
    if let Some(s) = &traj.singularity {
        let summary = SingularitySummary::Grid { t: s.t, kind: s.kind.clone(), last_diagnostics: s.last_diagnostics };
        write_json(out, SINGULARITY_REPORT, &summary)?;
    }
    if monitors && config.monitors.enabled {
        let uniform = uniform_prefix(&traj);
        let mut report = max_principle_bounds(&traj, schedule)?;
        if uniform.samples.len() >= 3 {
            let opts = EvolutionOptions { gauge_correction: true, tol: config.monitors.evolution_tol };
            report = evolution_residuals(&uniform, schedule, &opts)?.merge(report);
        }
        let gradient = gradient_estimate_series(&traj, config.monitors.gradient_bound);
        let artifact =
            MonitorArtifact { passed: report.passed() && gradient.verdict.passed(), report, gradient_estimate: Some(gradient) };
        passed &= artifact.passed;
        write_json(out, MONITOR_REPORT, &artifact)?;
    }
    Ok(combine(traj.singularity.is_some(), passed))
}

fn reduced_volume_run(config: &RunConfig, out: &Path) -> Result<Outcome> {
    let rv = config.reduced_volume.as_ref().expect("reduced volume section");
    let opts = rv.distance_options(config.seed);
    let schedule = config.schedule();
    let report = if let Some(hc) = &config.homogeneous {
        let traj = integrate_model(config.model().expect("model"), schedule, config.t_end(), hc.dt)?;
        if traj.extinction.is_some() {
            return Err(RhError::InvalidArgument("the sphere run became extinct before t_end".into()));
        }
        let t0 = traj.last().t;
        let space = SpherePathSpace::new(traj, t0, rv.chart)?;
        reduced_volume_series(&rv.taus, |tau| reduced_volume_sphere(&space, tau, rv.intervals, &opts), rv.tol)?
    } else {
        let traj = integrate_grid(config, None)?;
        if traj.singularity.is_some() {
            return Err(RhError::InvalidArgument("the grid run hit a singularity before t_end".into()));
        }
        let space = GridPathSpace::new(&traj, schedule)?;
        reduced_volume_series(&rv.taus, |tau| reduced_volume_grid(&space, rv.base_point, tau, &opts), rv.tol)?
    };
    write_json(out, REDUCED_VOLUME_REPORT, &report)?;
    Ok(combine(false, report.verdict.passed()))
}

fn sphere() -> TargetSpec {
    TargetSpec::Sphere { sphere_dim: 2, radius: 1.0 }
}

fn smooth_state(grid: Grid, seed: u64, metric_amp: f64, map_amp: f64) -> Result<FlowState> {
    FlowState::new(
        fixtures::smooth_metric(grid, seed, metric_amp),
        fixtures::smooth_sphere_map(grid, seed + 1, map_amp, 1.0),
        sphere(),
    )
}

/// Refinement studies on seeded fixtures over grids `base_n · 2^k`.
pub fn verify(suite: Suite, base_n: usize, refine: usize, seed: u64) -> Result<VerifyReport> {
    let levels: Vec<usize> = (0..=refine).map(|k| base_n << k).collect();
    let grids: Vec<Grid> = levels.iter().map(|&n| Grid::torus(2, n)).collect::<Result<_>>()?;
    let wants = |s: Suite| suite == Suite::All || suite == s;
    let mut checks = Vec::new();

    if wants(Suite::Gauge) {
        for f in 0..3 {
            let residuals = grids
                .iter()
                .map(|&g| Ok(gauge_identity_residual(&smooth_state(g, seed + 10 * f, 0.3, 0.8)?, 0.8)?.sup_norm()))
                .collect::<Result<Vec<f64>>>()?;
            checks.push(RefinementCheck::from_residuals(&format!("gauge identity, fixture {f}"), residuals, 8.0));
        }
    }
    if wants(Suite::Evolution) {
        let sched = CouplingSchedule::Constant { alpha: 1.0 };
        let (mut s, mut e) = (Vec::new(), Vec::new());
        for (k, &g) in grids.iter().enumerate() {
            // The sample spacing shrinks with h² so the time and space errors refine together.
            let policy = RunPolicy { sample_interval: 0.004 / 4f64.powi(k as i32), ..RunPolicy::default() };
            let traj = run(&smooth_state(g, seed + 40, 0.1, 0.3)?, &sched, 0.016, &policy)?;
            let r = evolution_residuals(&traj, &sched, &EvolutionOptions::default())?;
            s.push(r.worst(SCALAR_S_CHECK).unwrap_or(f64::NAN));
            e.push(r.worst(ENERGY_DENSITY_CHECK).unwrap_or(f64::NAN));
        }
        checks.push(RefinementCheck::from_residuals(SCALAR_S_CHECK, s, 8.0));
        checks.push(RefinementCheck::from_residuals(ENERGY_DENSITY_CHECK, e, 8.0));
    }
    if wants(Suite::Bochner) {
        let residuals = grids
            .iter()
            .map(|&g| {
                let metric = MetricField::conformal(g, |p| 0.1 * (p[0].sin() + (p[1] - p[0]).cos()));
                let phi = fixtures::smooth_sphere_map(g, seed + 7, 0.5, 1.0);
                Ok(bochner_residual(&metric, &phi, &sphere())?.worst(BOCHNER_CHECK).unwrap_or(f64::NAN))
            })
            .collect::<Result<Vec<f64>>>()?;
        checks.push(RefinementCheck::from_residuals(BOCHNER_CHECK, residuals, 4.0));
        // Flat metric with the equator map: every Bochner term vanishes.
        let g = grids[0];
        let t = bochner_terms(&MetricField::flat(g), &fixtures::equator_map(g), &sphere())?;
        let worst = [&t.laplacian, &t.tension, &t.hessian, &t.ricci, &t.target, &t.residual]
            .iter()
            .map(|f| f.sup_norm())
            .fold(0.0f64, f64::max);
        let tol = 10.0 * g.spacing().powi(2);
        checks.push(RefinementCheck {
            name: "equator map Bochner terms".into(),
            residuals: vec![worst],
            ratios: Vec::new(),
            threshold: tol,
            passed: worst <= tol,
        });
    }
    if wants(Suite::Variation) {
        let residuals = grids
            .iter()
            .map(|&g| {
                let st = smooth_state(g, seed + 20, 0.1, 0.3)?;
                let f = fixtures::smooth_scalar(g, seed + 22, 0.2);
                let var = Variation::random(&st, seed + 23, 0.1);
                let c = first_variation_check(&st, &f, FunctionalKind::Energy, &var, 1.0)?;
                Ok(c.numeric.iter().map(|(_, d)| (d - c.analytic).abs()).fold(f64::INFINITY, f64::min))
            })
            .collect::<Result<Vec<f64>>>()?;
        checks.push(RefinementCheck::from_residuals("first variation of F", residuals, 8.0));
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport { suite, levels, checks, passed })
}

fn verify_run(config: &RunConfig, out: &Path) -> Result<Outcome> {
    let v = config.verify.as_ref().expect("verify section");
    let report = verify(v.suite, v.base_n, v.refine, config.seed)?;
    write_json(out, VERIFY_REPORT, &report)?;
    Ok(combine(false, report.passed))
}

/// Output directory: the command-line override, else the configured one.
pub fn output_dir(config: &RunConfig, cli: Option<PathBuf>) -> PathBuf {
    cli.unwrap_or_else(|| config.output.dir.clone())
}
