//! Seeded smooth fields used by tests, the `verify` command and examples.
//!
//! Every generator is a deterministic function of its seed: a short sum of
//! low Fourier modes with coefficients drawn from `ChaCha8`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{Grid, MapField, MetricField, ScalarField, Vec2};

const MODES: usize = 4;

/// Random trigonometric polynomial with `sup ≤ 1`.
#[derive(Clone, Debug)]
pub struct SmoothMode {
    terms: Vec<(f64, [f64; 2], f64)>,
}

impl SmoothMode {
    pub fn new(rng: &mut ChaCha8Rng, grid: &Grid, max_wavenumber: i32) -> Self {
        let base = std::f64::consts::TAU / grid.period();
        let mut terms = Vec::with_capacity(MODES);
        for _ in 0..MODES {
            let kx = rng.gen_range(-max_wavenumber..=max_wavenumber) as f64;
            let ky = if grid.dim() == 2 { rng.gen_range(-max_wavenumber..=max_wavenumber) as f64 } else { 0.0 };
            let (kx, ky) = if kx == 0.0 && ky == 0.0 { (1.0, 0.0) } else { (kx, ky) };
            let amp: f64 = rng.gen_range(-1.0..1.0);
            let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            terms.push((amp, [kx * base, ky * base], phase));
        }
        let total: f64 = terms.iter().map(|t| t.0.abs()).sum();
        for t in &mut terms {
            t.0 /= total;
        }
        Self { terms }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        self.terms.iter().map(|(a, k, ph)| a * (k[0] * p[0] + k[1] * p[1] + ph).cos()).sum()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `δ + amp · (smooth symmetric perturbation)`; positive definite for `amp < 2/3`.
pub fn smooth_metric(grid: Grid, seed: u64, amp: f64) -> MetricField {
    let mut r = rng(seed);
    let m: Vec<SmoothMode> = (0..3).map(|_| SmoothMode::new(&mut r, &grid, 2)).collect();
    MetricField::from_fn(grid, |p| {
        let b = 0.5 * amp * m[2].eval(p);
        [[1.0 + amp * m[0].eval(p), b], [b, 1.0 + amp * m[1].eval(p)]]
    })
    .expect("finite fixture")
}

pub fn smooth_scalar(grid: Grid, seed: u64, amp: f64) -> ScalarField {
    let mode = SmoothMode::new(&mut rng(seed), &grid, 2);
    ScalarField::from_fn(grid, |p| amp * mode.eval(p))
}

/// Smooth map into the round two-sphere of radius `radius`, tilted away from the
/// north pole by up to `amp`.
pub fn smooth_sphere_map(grid: Grid, seed: u64, amp: f64, radius: f64) -> MapField {
    let mut r = rng(seed);
    let m: Vec<SmoothMode> = (0..3).map(|_| SmoothMode::new(&mut r, &grid, 2)).collect();
    MapField::from_fn(grid, 3, |p| {
        let v = [amp * m[0].eval(p), amp * m[1].eval(p), 1.0 + 0.5 * amp.min(1.0) * m[2].eval(p)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.iter().map(|x| radius * x / n).collect()
    })
}

/// `φ(x, y) = (cos kx, sin kx, 0)` with `k = 2π/L`, the unit-speed equator map.
pub fn equator_map(grid: Grid) -> MapField {
    let k = std::f64::consts::TAU / grid.period();
    MapField::from_fn(grid, 3, |p| vec![(k * p[0]).cos(), (k * p[0]).sin(), 0.0])
}

/// `e^{2u} δ` with a Gaussian-like periodic bump `u = amp · exp(cos x + cos y − 2)`.
pub fn bump_metric(grid: Grid, amp: f64) -> MetricField {
    let k = std::f64::consts::TAU / grid.period();
    let dim = grid.dim();
    MetricField::conformal(grid, |p| {
        let s = (k * p[0]).cos() + if dim == 2 { (k * p[1]).cos() } else { 1.0 };
        0.5 * amp * (s - 2.0).exp()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TargetSpec;

    #[test]
    fn generators_are_deterministic_and_valid() {
        let grid = Grid::torus(2, 16).unwrap();
        assert_eq!(smooth_metric(grid, 3, 0.3), smooth_metric(grid, 3, 0.3));
        assert_ne!(smooth_metric(grid, 3, 0.3), smooth_metric(grid, 4, 0.3));
        assert!(smooth_metric(grid, 3, 0.6).min_eigenvalue().1 > 0.0);
        let phi = smooth_sphere_map(grid, 1, 1.0, 2.0);
        assert!(phi.check_target(&TargetSpec::sphere(2, 2.0).unwrap()).is_ok());
        assert!(smooth_scalar(grid, 2, 0.5).sup_norm() <= 0.5 + 1e-12);
    }
}
