//! Alternating construction of the pair `(y, θ)`: mechanics for a frozen
//! `θ`, then fast marching for the speed read off the new deformation,
//! repeated until `θ` stops moving. Also hosts the `ε → 0` sweep.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eikonal::{self, FrontState, InitBand, InitialRegion, ThetaBoundsReport};
use crate::error::{Error, Result};
use crate::fields::{sample_time, FieldKind, Grid2, Sample, ScalarField, VectorField2};
use crate::material::{growth_rate, MaterialParams};
use crate::mechanics::{self, SolverOptions, Trajectory};
use crate::tensor::Vec2;

/// Everything that defines one coupled run.
#[derive(Debug, Clone)]
pub struct GrowthProblem {
    pub grid: Arc<Grid2>,
    pub params: MaterialParams,
    pub region: InitialRegion,
    pub y0: VectorField2,
    pub tau: f64,
    pub t_final: f64,
    pub solver: SolverOptions,
    pub init_band: InitBand,
}

impl GrowthProblem {
    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            params: self.params.with_eps(eps),
            ..self.clone()
        }
    }

    pub fn speed_bounds(&self) -> (f64, f64) {
        (self.params.gamma_min, self.params.gamma_max)
    }

    fn solve_front(&self, speed: &ScalarField) -> Result<FrontState> {
        eikonal::solve_eikonal_banded(speed, &self.region, self.init_band, self.speed_bounds())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingOptions {
    /// Sup-norm tolerance on successive `θ`; `None` means `1e-3 T`.
    pub tol_theta: Option<f64>,
    pub max_iters: usize,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            tol_theta: None,
            max_iters: 30,
        }
    }
}

/// One correction of the alternating scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `‖θ^k - θ^{k-1}‖∞`.
    pub theta_change: f64,
    /// Relative `L²(Q)` change of `y`; absent on the first correction.
    pub y_change: Option<f64>,
    pub steps_converged: bool,
}

#[derive(Debug, Clone)]
pub struct CoupledSolution {
    /// Trajectory of the last correction.
    pub y: Trajectory,
    /// The front the last trajectory was computed with.
    pub theta: ScalarField,
    /// Front recomputed from `y`; within `tol_theta` of `theta` on success.
    pub theta_next: ScalarField,
    /// Front of the initial speed.
    pub theta0: ScalarField,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    pub no_touch: bool,
    pub bounds: ThetaBoundsReport,
}

/// `x ↦ γ(y₀(x), ∇y₀(x))`.
pub fn initial_speed(y0: &VectorField2, params: &MaterialParams) -> ScalarField {
    let grads = y0.grad();
    let values = y0
        .values
        .iter()
        .zip(&grads)
        .map(|(y, f)| growth_rate(y, f, params))
        .collect();
    ScalarField::new(y0.grid().clone(), values).expect("same grid")
}

/// `x ↦ γ(y(θ(x) ∧ T, x), ∇y(θ(x) ∧ T, x))`.
pub fn speed_from_trajectory(traj: &Trajectory, theta: &ScalarField, params: &MaterialParams) -> ScalarField {
    let values = theta
        .values
        .iter()
        .enumerate()
        .map(|(k, &th)| {
            let s = th.max(0.0);
            let Sample::Deformation(y) = sample_time(traj, FieldKind::Deformation, s, k) else {
                unreachable!()
            };
            let Sample::Gradient(f) = sample_time(traj, FieldKind::Gradient, s, k) else {
                unreachable!()
            };
            growth_rate(&y, &f, params)
        })
        .collect();
    ScalarField::new(theta.grid().clone(), values).expect("same grid")
}

/// True iff every node of `{θ < T}` lies at distance `≥ h` from `∂U`.
pub fn check_no_touch(theta: &ScalarField, t_final: f64, grid: &Grid2) -> bool {
    let h = grid.h();
    theta
        .values
        .iter()
        .enumerate()
        .all(|(k, &th)| th >= t_final || grid.distance_to_boundary(&grid.point(k)) >= h * (1.0 - 1e-12))
}

/// Geometric pre-flight: `Ω₀ + B_{C_γ T}` must sit strictly inside `U`.
pub fn preflight_no_touch(region: &InitialRegion, gamma_max: f64, t_final: f64, grid: &Grid2) -> Result<()> {
    if region.disks.is_empty() {
        return Err(Error::Config("initial region has no disks".into()));
    }
    let reach = gamma_max * t_final;
    for d in &region.disks {
        let c = Vec2::new(d.center[0], d.center[1]);
        let room = grid.distance_to_boundary(&c);
        if !(d.radius + reach < room) {
            return Err(Error::Config(format!(
                "disk at ({}, {}) with radius {} grows by C_gamma*T = {reach} and reaches the boundary (room {room})",
                d.center[0], d.center[1], d.radius
            )));
        }
    }
    Ok(())
}

fn relative_l2_change(a: &Trajectory, b: &Trajectory) -> f64 {
    let grid = a.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=a.steps().min(b.steps()) {
        let (ya, yb) = (&a.snapshot(i).values, &b.snapshot(i).values);
        num += grid.integrate(ya.iter().zip(yb).map(|(p, q)| (p - q).norm_squared()));
        den += grid.integrate(ya.iter().map(|p| p.norm_squared()));
    }
    (num / den).sqrt()
}

/// Runs the alternating construction.
pub fn iterate(problem: &GrowthProblem, opts: &CouplingOptions) -> Result<CoupledSolution> {
    problem.params.validate()?;
    let grid = problem.grid.clone();
    preflight_no_touch(&problem.region, problem.params.gamma_max, problem.t_final, &grid)?;
    let tol_theta = opts.tol_theta.unwrap_or(1e-3 * problem.t_final);
    let bounds = problem.speed_bounds();

    let theta0 = problem.solve_front(&initial_speed(&problem.y0, &problem.params))?.theta;
    let mut theta_prev = theta0.clone();
    let mut prev_traj: Option<Trajectory> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut last: Option<(Trajectory, ScalarField, FrontState)> = None;

    for k in 1..=opts.max_iters.max(1) {
        let traj = mechanics::evolve(
            &problem.y0,
            &theta_prev,
            problem.tau,
            problem.t_final,
            &problem.params,
            &problem.solver,
        )?;
        let speed = speed_from_trajectory(&traj, &theta_prev, &problem.params);
        let front = problem.solve_front(&speed)?;
        let theta_change = front.theta.max_abs_diff(&theta_prev);
        let y_change = prev_traj.as_ref().map(|p| relative_l2_change(&traj, p));
        history.push(IterationRecord {
            k,
            theta_change,
            y_change,
            steps_converged: traj.all_converged(),
        });
        let done = theta_change <= tol_theta && y_change.map_or(true, |d| d <= tol_theta / problem.t_final);
        let used = std::mem::replace(&mut theta_prev, front.theta.clone());
        if done {
            converged = true;
            last = Some((traj, used, front));
            break;
        }
        prev_traj = Some(traj.clone());
        last = Some((traj, used, front));
    }

    // `theta` is the front the returned trajectory was evolved with.
    let (traj, theta, front) = last.expect("at least one correction");
    let report = eikonal::verify_theta_bounds(
        &FrontState {
            theta: theta.clone(),
            ..front.clone()
        },
        Some(&problem.region),
        bounds,
    )?;
    let no_touch = check_no_touch(&theta, problem.t_final, &grid);
    Ok(CoupledSolution {
        y: traj,
        theta,
        theta_next: front.theta,
        theta0,
        iterations: history.len(),
        history,
        converged,
        no_touch,
        bounds: report,
    })
}

/// Gaps between consecutive levels of an `ε` sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepGap {
    pub eps_from: f64,
    pub eps_to: f64,
    pub theta_gap: f64,
    pub y_gap: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub eps: Vec<f64>,
    pub solutions: Vec<CoupledSolution>,
    pub gaps: Vec<SweepGap>,
}

impl SweepReport {
    pub fn theta_gaps_decrease(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1].theta_gap < w[0].theta_gap)
    }
}

fn c0_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    (0..=a.steps().min(b.steps()))
        .map(|i| a.snapshot(i).max_abs_diff(b.snapshot(i)))
        .fold(0.0, f64::max)
}

/// Runs [`iterate`] at every `ε` (in parallel) and compares neighbours.
pub fn sharp_limit_sweep(problem: &GrowthProblem, eps_list: &[f64], opts: &CouplingOptions) -> Result<SweepReport> {
    if eps_list.is_empty() || *eps_list.last().unwrap() != 0.0 {
        return Err(Error::Config("eps list must end at 0".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("eps list must be strictly decreasing".into()));
    }
    let results: Vec<Result<CoupledSolution>> = std::thread::scope(|scope| {
        let handles: Vec<_> = eps_list
            .iter()
            .map(|&eps| {
                let p = problem.with_eps(eps);
                scope.spawn(move || iterate(&p, opts))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let solutions = results.into_iter().collect::<Result<Vec<_>>>()?;
    let gaps = solutions
        .windows(2)
        .zip(eps_list.windows(2))
        .map(|(s, e)| SweepGap {
            eps_from: e[0],
            eps_to: e[1],
            theta_gap: s[0].theta.max_abs_diff(&s[1].theta),
            y_gap: c0_distance(&s[0].y, &s[1].y),
        })
        .collect();
    Ok(SweepReport {
        eps: eps_list.to_vec(),
        solutions,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::GrowthLaw;

    fn problem(n: usize, gain: f64) -> GrowthProblem {
        let grid = Arc::new(Grid2::unit_square(n).unwrap());
        GrowthProblem {
            y0: VectorField2::identity(grid.clone()),
            grid,
            params: MaterialParams {
                growth: GrowthLaw { gain },
                ..MaterialParams::default()
            },
            region: InitialRegion::single([0.5, 0.5], 0.1),
            tau: 0.25,
            t_final: 1.0,
            solver: SolverOptions::default(),
            init_band: InitBand::default(),
        }
    }

    #[test]
    fn initial_speed_of_identity_is_midpoint() {
        let p = problem(9, 4.0);
        let s = initial_speed(&p.y0, &p.params);
        let mid = 0.5 * (p.params.gamma_min + p.params.gamma_max);
        assert!(s.values.iter().all(|v| (v - mid).abs() < 1e-15));
    }

    #[test]
    fn speed_uses_clamped_attachment_time() {
        let p = problem(9, 4.0);
        let g = p.grid.clone();
        let mut traj = Trajectory::new(p.y0.clone(), 0.5);
        let stretched = VectorField2::from_fn(g.clone(), |x| Vec2::new(1.2 * x.x, x.y));
        traj.push(stretched.clone());
        traj.push(stretched.clone());
        let late = ScalarField::constant(g.clone(), 7.0);
        let s = speed_from_trajectory(&traj, &late, &p.params);
        assert_eq!(s, initial_speed(&stretched, &p.params));
        let zero = ScalarField::constant(g, 0.0);
        assert_eq!(speed_from_trajectory(&traj, &zero, &p.params), initial_speed(&p.y0, &p.params));
    }

    #[test]
    fn no_touch_checks() {
        let p = problem(17, 4.0);
        assert!(preflight_no_touch(&p.region, 0.3, 1.0, &p.grid).is_ok());
        assert!(preflight_no_touch(&p.region, 0.5, 1.0, &p.grid).is_err());
        let theta = ScalarField::from_fn(p.grid.clone(), |x| (x - Vec2::new(0.5, 0.5)).norm() / 0.3);
        assert!(check_no_touch(&theta, 1.0, &p.grid));
        assert!(!check_no_touch(&theta, 2.0, &p.grid));
    }

    #[test]
    fn strain_independent_rate_is_idempotent() {
        let p = problem(9, 0.0);
        let sol = iterate(&p, &CouplingOptions::default()).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.theta_next, sol.theta0);
        assert_eq!(sol.history[0].theta_change, 0.0);
        assert!(sol.no_touch && sol.bounds.is_clean());
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let p = problem(9, 0.0);
        let o = CouplingOptions::default();
        assert!(sharp_limit_sweep(&p, &[0.2, 0.1], &o).is_err());
        assert!(sharp_limit_sweep(&p, &[0.1, 0.2, 0.0], &o).is_err());
    }
}
