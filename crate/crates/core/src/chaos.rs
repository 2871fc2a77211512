//! Dynamical-systems calculations: hard-sphere collision uncertainty
//! amplification seeded by a remote gravitational perturbation, and the
//! Lorenz system with epsilon-ball coarse-grained statistics.
//!
//! The collision formulas are evaluated in log10 space; composed magnitudes
//! like 1e-120 * (l/R)^M would otherwise lose all structure to under- and
//! overflow.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChaosError {
    #[error("no amplification: l/R = {0} <= 1")]
    NonAmplifying(f64),
    #[error("state became non-finite at step {0}")]
    NonFinite(usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("invalid parameter {what}: {value}")]
    BadParameter { what: &'static str, value: f64 },
}

// ---------------------------------------------------------------------------
// Collision amplification
// ---------------------------------------------------------------------------

/// Hard-sphere gas and perturbation-source parameters (SI units).
#[derive(Debug, Clone, Serialize)]
pub struct ButterflyParams {
    /// mean free path between collisions, metres
    pub mean_free_path: f64,
    /// sphere radius, metres
    pub sphere_radius: f64,
    /// mean time between collisions, seconds
    pub collision_time: f64,
    /// gravitational constant, m^3 kg^-1 s^-2
    pub gravitational_constant: f64,
    /// mass of the perturbing source, kg
    pub source_mass: f64,
    /// displacement of the source, metres
    pub source_displacement: f64,
    /// distance to the source, metres
    pub source_distance: f64,
}

impl ButterflyParams {
    /// The worked example: a 10 mg wing displaced a centimetre at
    /// intergalactic distance, nanosecond collision times, angstrom spheres.
    pub fn paper_defaults() -> Self {
        Self {
            mean_free_path: 1e-7,
            sphere_radius: 1e-10,
            collision_time: 1e-9,
            gravitational_constant: 6.674e-11,
            source_mass: 1e-5,
            source_displacement: 1e-2,
            source_distance: 1e22,
        }
    }

    fn validate(&self) -> Result<(), ChaosError> {
        for (what, v) in [
            ("mean_free_path", self.mean_free_path),
            ("sphere_radius", self.sphere_radius),
            ("collision_time", self.collision_time),
            ("gravitational_constant", self.gravitational_constant),
            ("source_mass", self.source_mass),
            ("source_distance", self.source_distance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ChaosError::BadParameter { what, value: v });
            }
        }
        if self.source_displacement < 0.0 {
            return Err(ChaosError::BadParameter {
                what: "source_displacement",
                value: self.source_displacement,
            });
        }
        Ok(())
    }

    /// log10 of the per-collision amplification factor l/R.
    pub fn log10_growth(&self) -> f64 {
        self.mean_free_path.log10() - self.sphere_radius.log10()
    }
}

/// The gravitational acceleration uncertainty and the first-collision angle
/// uncertainty it induces, carried as log10 values.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GravPerturbation {
    pub log10_delta_a: f64,
    pub log10_delta_theta1: f64,
}

impl GravPerturbation {
    pub fn delta_a(&self) -> f64 {
        10f64.powf(self.log10_delta_a)
    }

    pub fn delta_theta1(&self) -> f64 {
        10f64.powf(self.log10_delta_theta1)
    }
}

/// delta_a = 2 G m dr / r^3 and delta_theta1 = tau^2 delta_a / R.
pub fn grav_perturbation(p: &ButterflyParams) -> Result<GravPerturbation, ChaosError> {
    p.validate()?;
    if p.source_displacement == 0.0 {
        return Ok(GravPerturbation {
            log10_delta_a: f64::NEG_INFINITY,
            log10_delta_theta1: f64::NEG_INFINITY,
        });
    }
    let log10_delta_a = 2f64.log10()
        + p.gravitational_constant.log10()
        + p.source_mass.log10()
        + p.source_displacement.log10()
        - 3.0 * p.source_distance.log10();
    let log10_delta_theta1 =
        2.0 * p.collision_time.log10() + log10_delta_a - p.sphere_radius.log10();
    Ok(GravPerturbation {
        log10_delta_a,
        log10_delta_theta1,
    })
}

/// Angle uncertainty after M collisions, (l/R)^M * delta_theta1, as log10.
pub fn collision_growth_log10(p: &ButterflyParams, collisions: u32, delta_theta1: f64) -> f64 {
    collisions as f64 * p.log10_growth() + delta_theta1.log10()
}

/// Angle uncertainty after M collisions (saturates to +inf/0 outside f64
/// range; use the log10 form for tables).
pub fn collision_growth(p: &ButterflyParams, collisions: u32, delta_theta1: f64) -> f64 {
    10f64.powf(collision_growth_log10(p, collisions, delta_theta1))
}

/// Smallest M with (l/R)^M * delta_theta1 >= target.
pub fn collisions_until(
    p: &ButterflyParams,
    delta_theta1: f64,
    target: f64,
) -> Result<u32, ChaosError> {
    let g = p.log10_growth();
    if g <= 0.0 {
        return Err(ChaosError::NonAmplifying(10f64.powf(g)));
    }
    let gap = target.log10() - delta_theta1.log10();
    if gap <= 0.0 {
        return Ok(0);
    }
    let mut m = (gap / g).ceil() as u32;
    // guard the ceiling against floating-point edges
    while m > 0 && (m - 1) as f64 * g >= gap {
        m -= 1;
    }
    while (m as f64) * g < gap {
        m += 1;
    }
    Ok(m)
}

// ---------------------------------------------------------------------------
// Lorenz system
// ---------------------------------------------------------------------------

/// Lorenz parameters with the classical chaotic defaults.
#[derive(Debug, Clone, Serialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            dt: 1e-3,
            steps: 100_000,
        }
    }
}

pub type State3 = [f64; 3];

fn lorenz_rhs(sigma: f64, rho: f64, beta: f64, s: State3) -> State3 {
    let [x, y, z] = s;
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

fn rk4_step(sigma: f64, rho: f64, beta: f64, dt: f64, s: State3) -> State3 {
    let add = |a: State3, b: State3, w: f64| [a[0] + w * b[0], a[1] + w * b[1], a[2] + w * b[2]];
    let k1 = lorenz_rhs(sigma, rho, beta, s);
    let k2 = lorenz_rhs(sigma, rho, beta, add(s, k1, dt / 2.0));
    let k3 = lorenz_rhs(sigma, rho, beta, add(s, k2, dt / 2.0));
    let k4 = lorenz_rhs(sigma, rho, beta, add(s, k3, dt));
    let mut out = s;
    for i in 0..3 {
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Fixed-step fourth-order integration; the returned trajectory includes the
/// initial state (`steps + 1` entries).
pub fn lorenz_integrate(initial: State3, params: &LorenzParams) -> Result<Vec<State3>, ChaosError> {
    if !(params.dt > 0.0) {
        return Err(ChaosError::BadParameter {
            what: "dt",
            value: params.dt,
        });
    }
    if params.steps == 0 {
        return Err(ChaosError::BadParameter {
            what: "steps",
            value: 0.0,
        });
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(ChaosError::NonFinite(0));
    }
    let mut out = Vec::with_capacity(params.steps + 1);
    out.push(initial);
    let mut s = initial;
    for step in 1..=params.steps {
        s = rk4_step(params.sigma, params.rho, params.beta, params.dt, s);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(ChaosError::NonFinite(step));
        }
        out.push(s);
    }
    Ok(out)
}

/// Largest Lyapunov exponent by two-trajectory divergence renormalization:
/// track a companion orbit at offset d0, renormalize every `renorm_steps`,
/// and average the stretching logs after a transient.
pub fn lyapunov_exponent(
    initial: State3,
    params: &LorenzParams,
    d0: f64,
    renorm_steps: usize,
    transient_steps: usize,
) -> Result<f64, ChaosError> {
    if !(d0 > 0.0) {
        return Err(ChaosError::BadParameter {
            what: "d0",
            value: d0,
        });
    }
    let (sigma, rho, beta, dt) = (params.sigma, params.rho, params.beta, params.dt);
    let mut a = initial;
    for _ in 0..transient_steps {
        a = rk4_step(sigma, rho, beta, dt, a);
    }
    let mut b = [a[0] + d0, a[1], a[2]];
    let mut log_sum = 0.0;
    let total = params.steps;
    let mut stepped = 0usize;
    while stepped < total {
        let span = renorm_steps.max(1).min(total - stepped);
        for _ in 0..span {
            a = rk4_step(sigma, rho, beta, dt, a);
            b = rk4_step(sigma, rho, beta, dt, b);
        }
        stepped += span;
        let d: f64 = (0..3).map(|i| (b[i] - a[i]).powi(2)).sum::<f64>().sqrt();
        if !d.is_finite() || d == 0.0 {
            return Err(ChaosError::NonFinite(stepped));
        }
        log_sum += (d / d0).ln();
        // pull the companion back to separation d0 along the difference
        for i in 0..3 {
            b[i] = a[i] + (b[i] - a[i]) * (d0 / d);
        }
    }
    Ok(log_sum / (stepped as f64 * dt))
}

// ---------------------------------------------------------------------------
// Coarse-grained statistics
// ---------------------------------------------------------------------------

/// Epsilon-ball coarse graining: cubic bins of side 2*epsilon anchored at an
/// origin.
#[derive(Debug, Clone, Serialize)]
pub struct CoarseGrainSpec {
    pub epsilon: f64,
    pub origin: State3,
}

impl CoarseGrainSpec {
    pub fn new(epsilon: f64) -> Result<Self, ChaosError> {
        if !(epsilon > 0.0) {
            return Err(ChaosError::BadParameter {
                what: "epsilon",
                value: epsilon,
            });
        }
        Ok(Self {
            epsilon,
            origin: [0.0; 3],
        })
    }

    fn bin_of(&self, s: &State3) -> [i64; 3] {
        let w = 2.0 * self.epsilon;
        [
            ((s[0] - self.origin[0]) / w).floor() as i64,
            ((s[1] - self.origin[1]) / w).floor() as i64,
            ((s[2] - self.origin[2]) / w).floor() as i64,
        ]
    }

    fn bin_center(&self, b: &[i64; 3]) -> State3 {
        let w = 2.0 * self.epsilon;
        [
            self.origin[0] + (b[0] as f64 + 0.5) * w,
            self.origin[1] + (b[1] as f64 + 0.5) * w,
            self.origin[2] + (b[2] as f64 + 0.5) * w,
        ]
    }
}

/// Occupancy and within-ball sample means for one epsilon ball.
#[derive(Debug, Clone, Serialize)]
pub struct BallStats {
    pub count: usize,
    pub mean: State3,
}

/// Coarse statistics of a trajectory: per-ball occupancy/means plus global
/// occupancy-weighted bin-center means (the empirical coarse measure).
#[derive(Debug, Clone)]
pub struct CoarseStats {
    spec: CoarseGrainSpec,
    bins: BTreeMap<[i64; 3], BallStats>,
    total: usize,
}

impl CoarseStats {
    pub fn occupied_balls(&self) -> usize {
        self.bins.len()
    }

    pub fn total_points(&self) -> usize {
        self.total
    }

    /// Stats for the ball containing `point`; `None` marks an unoccupied
    /// ball (absence of measure, not zero).
    pub fn ball_containing(&self, point: &State3) -> Option<&BallStats> {
        self.bins.get(&self.spec.bin_of(point))
    }

    /// Occupancy measure of the ball containing `point` (0 for unoccupied).
    pub fn occupancy(&self, point: &State3) -> f64 {
        self.ball_containing(point)
            .map(|b| b.count as f64 / self.total as f64)
            .unwrap_or(0.0)
    }

    /// Global coarse mean: occupancy-weighted ball centers. This is the
    /// statistic that depends on the graining (within-ball means would not).
    pub fn global_center_mean(&self) -> State3 {
        let mut acc = [0.0; 3];
        for (bin, stats) in &self.bins {
            let c = self.spec.bin_center(bin);
            for i in 0..3 {
                acc[i] += stats.count as f64 * c[i];
            }
        }
        for a in acc.iter_mut() {
            *a /= self.total as f64;
        }
        acc
    }

    pub fn iter_balls(&self) -> impl Iterator<Item = (&[i64; 3], &BallStats)> {
        self.bins.iter()
    }

    pub fn spec(&self) -> &CoarseGrainSpec {
        &self.spec
    }
}

/// Partition a trajectory into epsilon balls and aggregate per-ball and
/// global coarse statistics.
pub fn coarse_grain_stats(
    trajectory: &[State3],
    spec: &CoarseGrainSpec,
) -> Result<CoarseStats, ChaosError> {
    if trajectory.is_empty() {
        return Err(ChaosError::EmptyTrajectory);
    }
    let mut sums: BTreeMap<[i64; 3], (usize, [f64; 3])> = BTreeMap::new();
    for s in trajectory {
        let e = sums.entry(spec.bin_of(s)).or_insert((0, [0.0; 3]));
        e.0 += 1;
        for i in 0..3 {
            e.1[i] += s[i];
        }
    }
    let bins = sums
        .into_iter()
        .map(|(k, (count, sum))| {
            let mean = [
                sum[0] / count as f64,
                sum[1] / count as f64,
                sum[2] / count as f64,
            ];
            (k, BallStats { count, mean })
        })
        .collect();
    Ok(CoarseStats {
        spec: spec.clone(),
        bins,
        total: trajectory.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grav_perturbation_matches_worked_example() {
        let g = grav_perturbation(&ButterflyParams::paper_defaults()).unwrap();
        // 2 * 6.674e-11 * 1e-5 * 1e-2 / 1e66 ~ 1.3e-83
        assert!((g.log10_delta_a - (-82.87)).abs() < 0.05);
        // within a factor of 100 of 1e-90
        assert!(g.log10_delta_theta1 > -92.0 && g.log10_delta_theta1 < -88.0);
    }

    #[test]
    fn grav_perturbation_zero_displacement() {
        let mut p = ButterflyParams::paper_defaults();
        p.source_displacement = 0.0;
        let g = grav_perturbation(&p).unwrap();
        assert_eq!(g.delta_theta1(), 0.0);
    }

    #[test]
    fn grav_perturbation_linearity() {
        let base = grav_perturbation(&ButterflyParams::paper_defaults()).unwrap();
        let mut p = ButterflyParams::paper_defaults();
        p.source_displacement *= 2.0;
        let doubled = grav_perturbation(&p).unwrap();
        assert!((doubled.log10_delta_theta1 - base.log10_delta_theta1 - 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn collision_growth_examples() {
        let p = ButterflyParams::paper_defaults(); // l/R = 1e3
        assert!((collision_growth(&p, 0, 1e-9) - 1e-9).abs() < 1e-24);
        assert!((collision_growth(&p, 2, 1e-9) - 1e-3).abs() < 1e-15);
        let after30 = collision_growth_log10(&p, 30, 1e-90);
        assert!(after30.abs() < 1e-9); // (1e3)^30 * 1e-90 = 1
    }

    #[test]
    fn collision_growth_composes_in_log_space() {
        let p = ButterflyParams::paper_defaults();
        for (a, b) in [(3u32, 4u32), (10, 7), (0, 5)] {
            let joint = collision_growth_log10(&p, a + b, 1e-42);
            let staged = collision_growth_log10(&p, a, 1e-42) + b as f64 * p.log10_growth();
            assert!((joint - staged).abs() < 1e-12);
        }
    }

    #[test]
    fn collisions_until_examples() {
        let p = ButterflyParams::paper_defaults();
        assert_eq!(collisions_until(&p, 1e-90, 1.0).unwrap(), 30);
        assert_eq!(collisions_until(&p, 1e-120, 1.0).unwrap(), 40);
        assert_eq!(collisions_until(&p, 1e-9, 1e-9).unwrap(), 0);
        let mut flat = ButterflyParams::paper_defaults();
        flat.mean_free_path = flat.sphere_radius;
        assert!(matches!(
            collisions_until(&flat, 1e-9, 1.0),
            Err(ChaosError::NonAmplifying(_))
        ));
    }

    #[test]
    fn lorenz_origin_is_fixed_point() {
        let params = LorenzParams {
            steps: 1000,
            ..Default::default()
        };
        let traj = lorenz_integrate([0.0; 3], &params).unwrap();
        assert!(traj.iter().all(|s| s.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn lorenz_mirror_symmetry_is_exact() {
        let params = LorenzParams {
            steps: 5000,
            ..Default::default()
        };
        let a = lorenz_integrate([1.0, 1.0, 1.0], &params).unwrap();
        let b = lorenz_integrate([-1.0, -1.0, 1.0], &params).unwrap();
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa[0], -sb[0]);
            assert_eq!(sa[1], -sb[1]);
            assert_eq!(sa[2], sb[2]);
        }
    }

    #[test]
    fn lorenz_stays_in_attractor_box() {
        let params = LorenzParams {
            steps: 200_000,
            ..Default::default()
        };
        let traj = lorenz_integrate([1.0, 1.0, 1.0], &params).unwrap();
        for s in traj.iter().skip(5_000) {
            assert!(s[0].abs() <= 30.0 && s[1].abs() <= 30.0);
            assert!(s[2] >= 0.0 && s[2] <= 60.0);
        }
    }

    #[test]
    fn lorenz_rejects_nonfinite_start() {
        assert!(matches!(
            lorenz_integrate([f64::NAN, 0.0, 0.0], &LorenzParams::default()),
            Err(ChaosError::NonFinite(0))
        ));
    }

    #[test]
    fn lyapunov_exponent_near_literature_value() {
        let params = LorenzParams {
            steps: 400_000,
            ..Default::default()
        };
        let le = lyapunov_exponent([1.0, 1.0, 1.0], &params, 1e-8, 100, 20_000).unwrap();
        assert!((le - 0.9).abs() <= 0.1, "lambda = {le}");
    }

    #[test]
    fn coarse_stats_constant_trajectory() {
        let spec = CoarseGrainSpec::new(0.5).unwrap();
        let traj = vec![[1.2, 3.4, 5.6]; 100];
        let stats = coarse_grain_stats(&traj, &spec).unwrap();
        assert_eq!(stats.occupied_balls(), 1);
        let ball = stats.ball_containing(&[1.2, 3.4, 5.6]).unwrap();
        assert_eq!(ball.count, 100);
        assert!((ball.mean[2] - 5.6).abs() < 1e-12);
        assert_eq!(stats.occupancy(&[1.2, 3.4, 5.6]), 1.0);
    }

    #[test]
    fn unoccupied_ball_is_explicitly_absent() {
        let spec = CoarseGrainSpec::new(0.5).unwrap();
        let stats = coarse_grain_stats(&[[0.1, 0.1, 0.1]], &spec).unwrap();
        assert!(stats.ball_containing(&[100.0, 100.0, 100.0]).is_none());
        assert_eq!(stats.occupancy(&[100.0, 100.0, 100.0]), 0.0);
    }

    #[test]
    fn coarse_stats_invariant_under_reordering() {
        let params = LorenzParams {
            steps: 20_000,
            ..Default::default()
        };
        let traj = lorenz_integrate([1.0, 1.0, 1.0], &params).unwrap();
        let mut reversed = traj.clone();
        reversed.reverse();
        let spec = CoarseGrainSpec::new(1.0).unwrap();
        let a = coarse_grain_stats(&traj, &spec).unwrap();
        let b = coarse_grain_stats(&reversed, &spec).unwrap();
        assert_eq!(a.occupied_balls(), b.occupied_balls());
        let (ga, gb) = (a.global_center_mean(), b.global_center_mean());
        for i in 0..3 {
            assert!((ga[i] - gb[i]).abs() < 1e-9);
        }
        for (bin, sa) in a.iter_balls() {
            let sb = &b.bins[bin];
            assert_eq!(sa.count, sb.count);
            for i in 0..3 {
                assert!((sa.mean[i] - sb.mean[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn empty_trajectory_rejected() {
        let spec = CoarseGrainSpec::new(0.5).unwrap();
        assert!(matches!(
            coarse_grain_stats(&[], &spec),
            Err(ChaosError::EmptyTrajectory)
        ));
    }
}
