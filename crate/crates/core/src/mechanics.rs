//! Viscoelastic evolution for a frozen time-of-attachment field.
//!
//! Each time step minimizes
//!
//! ```text
//! F_i(y) = ∫ W(θ - t_i, ∇y) + H(∇²y) + τ R(θ - t_i, ∇y_{i-1}, (∇y - ∇y_{i-1})/τ) - f(θ - t_i)·y
//! ```
//!
//! over deformations pinned to the identity on the Dirichlet nodes, with
//! trapezoidal quadrature and the finite-difference operators of
//! [`crate::fields`]. The minimizer is L-BFGS warm-started from `y_{i-1}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Grid2, ScalarField, VectorField2};
use crate::lbfgs::{self, LbfgsOptions, Objective, Preconditioner, Termination};
use crate::precond::GridLaplacian;
use crate::material::{body_force, hyper_energy, stored_energy, viscous_eval, MaterialParams};
use crate::tensor::{Mat2, Tensor3, Vec2};

/// Optimizer settings shared by every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Gradient tolerance per unit area; the absolute tolerance is this
    /// times `|U|`.
    pub tol_grad: f64,
    pub det_floor: f64,
    pub max_iters: usize,
    pub memory: usize,
    /// Use the grid Laplacian as the initial inverse Hessian.
    pub precondition: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            det_floor: 1e-8,
            max_iters: 500,
            memory: 12,
            precondition: true,
        }
    }
}

impl SolverOptions {
    pub fn abs_tol(&self, grid: &Grid2) -> f64 {
        self.tol_grad * grid.area()
    }
}

/// Outcome of one incremental minimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    /// `F_i(y_{i-1})`.
    pub f_before: f64,
    /// `F_i(y_i)`.
    pub f_after: f64,
    /// `F_i(y_{i-1}) - F_i(y_i)`, summed node by node to avoid cancellation.
    pub decrease: f64,
    pub grad_norm: f64,
    pub tol_grad: f64,
    pub iterations: usize,
    pub min_det: f64,
    pub converged: bool,
    /// The optimizer ended above the warm start and the step kept `y_{i-1}`.
    pub reverted: bool,
}

/// One line of the discrete energy ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: usize,
    pub t: f64,
    /// `E_i(y_i)` with `E_i(y) = ∫ W(θ - t_i, ∇y) + H(∇²y) - f(θ - t_i)·y`.
    pub energy: f64,
    /// `E_i(y_{i-1})`.
    pub energy_prev_state: f64,
    /// `τ ∫ R` of this step.
    pub dissipation: f64,
    pub cumulative_dissipation: f64,
    /// `E_n(y_n) + Σ τ R` up to this step.
    pub lhs: f64,
    /// `E_0(y_0) + Σ (E_i(y_{i-1}) - E_{i-1}(y_{i-1}))` up to this step.
    pub rhs: f64,
    pub holds: bool,
}

/// Integrated terms of the incremental functional.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FunctionalTerms {
    pub stored: f64,
    pub hyper: f64,
    /// `τ ∫ R`.
    pub dissipation: f64,
    /// `∫ f·y`.
    pub load: f64,
}

impl FunctionalTerms {
    pub fn total(&self) -> f64 {
        self.stored + self.hyper + self.dissipation - self.load
    }

    /// Energy without the dissipation term.
    pub fn energy(&self) -> f64 {
        self.stored + self.hyper - self.load
    }
}

/// Time-indexed deformation snapshots `y_0, …, y_N` at `t_i = i τ`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub tau: f64,
    snapshots: Vec<VectorField2>,
    grads: Vec<Vec<Mat2>>,
    pub reports: Vec<StepReport>,
    pub ledger: Vec<LedgerEntry>,
}

impl Trajectory {
    pub fn new(y0: VectorField2, tau: f64) -> Self {
        let g = y0.grad();
        Self {
            tau,
            snapshots: vec![y0],
            grads: vec![g],
            reports: Vec::new(),
            ledger: Vec::new(),
        }
    }

    /// Stationary trajectory holding `y` on `n` steps.
    pub fn constant(y: VectorField2, tau: f64, n: usize) -> Self {
        let mut t = Self::new(y.clone(), tau);
        for _ in 0..n {
            t.push(y.clone());
        }
        t
    }

    pub fn push(&mut self, y: VectorField2) {
        self.grads.push(y.grad());
        self.snapshots.push(y);
    }

    pub fn grid(&self) -> &Arc<Grid2> {
        self.snapshots[0].grid()
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.tau
    }

    pub fn final_time(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn snapshot(&self, i: usize) -> &VectorField2 {
        &self.snapshots[i]
    }

    pub fn snapshots(&self) -> &[VectorField2] {
        &self.snapshots
    }

    pub fn last(&self) -> &VectorField2 {
        self.snapshots.last().expect("trajectory holds y_0")
    }

    /// `∇y_i` at node `k`.
    pub fn gradient(&self, i: usize, k: usize) -> Mat2 {
        self.grads[i][k]
    }

    pub fn gradients(&self, i: usize) -> &[Mat2] {
        &self.grads[i]
    }

    /// `(lo, hi, a)` with `t ∧ T = (1 - a) t_lo + a t_hi`; `t` is clamped to
    /// `[0, T]`.
    pub fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let n = self.steps();
        if n == 0 {
            return (0, 0, 0.0);
        }
        let s = (t / self.tau).clamp(0.0, n as f64);
        let lo = (s.floor() as usize).min(n - 1);
        (lo, lo + 1, s - lo as f64)
    }

    /// Backward-constant interpolant: `y_i` on `(t_{i-1}, t_i]`.
    pub fn backward_constant(&self, t: f64) -> &VectorField2 {
        let n = self.steps();
        let s = (t / self.tau).clamp(0.0, n as f64);
        &self.snapshots[(s.ceil() as usize).min(n)]
    }

    /// Forward-constant interpolant: `y_{i-1}` on `[t_{i-1}, t_i)`.
    pub fn forward_constant(&self, t: f64) -> &VectorField2 {
        let n = self.steps();
        let s = (t / self.tau).clamp(0.0, n as f64);
        let i = s.floor() as usize;
        &self.snapshots[if i >= n && n > 0 { n } else { i }]
    }

    /// Piecewise-affine interpolant.
    pub fn affine(&self, t: f64) -> VectorField2 {
        let (lo, hi, a) = self.bracket(t);
        let y0 = &self.snapshots[lo].values;
        let y1 = &self.snapshots[hi].values;
        let values = y0.iter().zip(y1).map(|(p, q)| p * (1.0 - a) + q * a).collect();
        VectorField2::new(self.grid().clone(), values).expect("same grid")
    }

    /// `∇ŷ(t)` at every node.
    pub fn affine_gradients(&self, t: f64) -> Vec<Mat2> {
        let (lo, hi, a) = self.bracket(t);
        self.grads[lo]
            .iter()
            .zip(&self.grads[hi])
            .map(|(p, q)| p * (1.0 - a) + q * a)
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }

    pub fn min_det(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|f| f.determinant())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Per-node stresses of the incremental functional (unweighted):
/// `∂_F W + ∂_Ḟ R`, `DH`, and the body force.
struct NodeStresses {
    first: Vec<Mat2>,
    second: Vec<Tensor3>,
    force: Vec<Vec2>,
}

/// Frozen data of one time step.
struct StepData<'a> {
    grid: &'a Grid2,
    params: &'a MaterialParams,
    sigma: Vec<f64>,
    force: Vec<Vec2>,
    prev_grad: &'a [Mat2],
    tau: f64,
}

impl<'a> StepData<'a> {
    fn new(
        grid: &'a Grid2,
        params: &'a MaterialParams,
        theta: &[f64],
        t: f64,
        tau: f64,
        prev_grad: &'a [Mat2],
    ) -> Self {
        let sigma: Vec<f64> = theta.iter().map(|th| th - t).collect();
        let force = sigma
            .iter()
            .enumerate()
            .map(|(k, &s)| body_force(s, &grid.point(k), params))
            .collect();
        Self {
            grid,
            params,
            sigma,
            force,
            prev_grad,
            tau,
        }
    }

    /// Per-node integrand `W + H + τ R - f·y` at `y`, or `Err` on a
    /// nonpositive Jacobian.
    fn node_terms(&self, y: &[Vec2], f: &[Mat2], g: &[Tensor3], k: usize) -> Result<FunctionalTerms> {
        let p = self.params;
        let w = stored_energy(self.sigma[k], &f[k], p)?.value;
        let h = hyper_energy(&g[k], p).0;
        let rate = (f[k] - self.prev_grad[k]) / self.tau;
        let r = viscous_eval(self.sigma[k], &self.prev_grad[k], &rate, p)?.value;
        Ok(FunctionalTerms {
            stored: w,
            hyper: h,
            dissipation: self.tau * r,
            load: self.force[k].dot(&y[k]),
        })
    }

    fn stresses(&self, f: &[Mat2], g: &[Tensor3]) -> Result<NodeStresses> {
        let p = self.params;
        let n = self.grid.len();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        for k in 0..n {
            let dw = stored_energy(self.sigma[k], &f[k], p)?.deriv;
            let rate = (f[k] - self.prev_grad[k]) / self.tau;
            let dr = viscous_eval(self.sigma[k], &self.prev_grad[k], &rate, p)?.deriv;
            first.push(dw + dr);
            second.push(hyper_energy(&g[k], p).1);
        }
        Ok(NodeStresses {
            first,
            second,
            force: self.force.clone(),
        })
    }

    fn terms(&self, y: &[Vec2]) -> Result<FunctionalTerms> {
        let f = self.grid.grad_vector(y);
        let g = self.grid.hessian(y);
        let wts = self.grid.weights();
        let mut acc = FunctionalTerms::default();
        for k in 0..self.grid.len() {
            let t = self.node_terms(y, &f, &g, k)?;
            acc.stored += wts[k] * t.stored;
            acc.hyper += wts[k] * t.hyper;
            acc.dissipation += wts[k] * t.dissipation;
            acc.load += wts[k] * t.load;
        }
        Ok(acc)
    }

    /// Full nodal gradient of the functional.
    fn gradient(&self, f: &[Mat2], g: &[Tensor3]) -> Result<Vec<Vec2>> {
        let s = self.stresses(f, g)?;
        Ok(assemble(self.grid, &s))
    }
}

/// `Gᵀ(w P) + Hᵀ(w S) - w f`.
fn assemble(grid: &Grid2, s: &NodeStresses) -> Vec<Vec2> {
    let wts = grid.weights();
    let p: Vec<Mat2> = s.first.iter().zip(wts).map(|(m, w)| m * *w).collect();
    let h: Vec<Tensor3> = s.second.iter().zip(wts).map(|(t, w)| *t * *w).collect();
    let mut out: Vec<Vec2> = s.force.iter().zip(wts).map(|(f, w)| -f * *w).collect();
    grid.grad_vector_adjoint_add(&p, &mut out);
    grid.hessian_adjoint_add(&h, &mut out);
    out
}

/// The incremental functional `F_i(y)`; `+∞` when `det ∇y ≤ 0` somewhere.
pub fn incremental_functional(
    y: &VectorField2,
    y_prev: &VectorField2,
    theta: &ScalarField,
    t: f64,
    tau: f64,
    params: &MaterialParams,
) -> f64 {
    functional_terms(y, y_prev, theta, t, tau, params)
        .map(|t| t.total())
        .unwrap_or(f64::INFINITY)
}

/// Term-by-term version of [`incremental_functional`].
pub fn functional_terms(
    y: &VectorField2,
    y_prev: &VectorField2,
    theta: &ScalarField,
    t: f64,
    tau: f64,
    params: &MaterialParams,
) -> Result<FunctionalTerms> {
    let grid = y.grid();
    let prev_grad = y_prev.grad();
    StepData::new(grid, params, &theta.values, t, tau, &prev_grad).terms(&y.values)
}

/// Nodal gradient of [`incremental_functional`] with respect to every
/// node value (Dirichlet rows included).
pub fn functional_gradient(
    y: &VectorField2,
    y_prev: &VectorField2,
    theta: &ScalarField,
    t: f64,
    tau: f64,
    params: &MaterialParams,
) -> Result<Vec<Vec2>> {
    let grid = y.grid();
    let prev_grad = y_prev.grad();
    let data = StepData::new(grid, params, &theta.values, t, tau, &prev_grad);
    data.gradient(&y.grad(), &y.hessian())
}

/// Optimizer view of one step: free (non-Dirichlet) node values, objective
/// measured relative to the warm start.
struct StepObjective<'a> {
    data: StepData<'a>,
    free: Vec<usize>,
    y: Vec<Vec2>,
    baseline: Vec<f64>,
    det_floor: f64,
}

impl StepObjective<'_> {
    fn scatter(&mut self, x: &[f64]) {
        for (m, &k) in self.free.iter().enumerate() {
            self.y[k] = Vec2::new(x[2 * m], x[2 * m + 1]);
        }
    }

    /// `Σ_k w_k (e_k(y) - e_k(y_prev))`.
    fn relative_value(&self, f: &[Mat2], g: &[Tensor3]) -> Result<f64> {
        let wts = self.data.grid.weights();
        let mut v = 0.0;
        for k in 0..self.data.grid.len() {
            let t = self.data.node_terms(&self.y, f, g, k)?;
            v += wts[k] * (t.total() - self.baseline[k]);
        }
        Ok(v)
    }
}

impl Objective for StepObjective<'_> {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.scatter(x);
        let f = self.data.grid.grad_vector(&self.y);
        if f.iter().any(|m| !(m.determinant() > self.det_floor)) {
            return None;
        }
        let g = self.data.grid.hessian(&self.y);
        let value = self.relative_value(&f, &g).ok()?;
        let full = self.data.gradient(&f, &g).ok()?;
        for (m, &k) in self.free.iter().enumerate() {
            grad[2 * m] = full[k].x;
            grad[2 * m + 1] = full[k].y;
        }
        Some(value)
    }
}

fn check_admissible(y: &VectorField2) -> Result<()> {
    let d = y.min_det();
    if d > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain { det: d })
    }
}

/// One incremental minimization warm-started from `y_prev`.
pub fn incremental_step(
    y_prev: &VectorField2,
    theta: &ScalarField,
    step: usize,
    t: f64,
    tau: f64,
    params: &MaterialParams,
    opts: &SolverOptions,
) -> Result<(VectorField2, StepReport)> {
    check_admissible(y_prev)?;
    let grid = y_prev.grid().clone();
    let prev_grad = y_prev.grad();
    let prev_hess = y_prev.hessian();
    let data = StepData::new(&grid, params, &theta.values, t, tau, &prev_grad);
    let mut baseline = Vec::with_capacity(grid.len());
    let mut magnitude = 0.0;
    for k in 0..grid.len() {
        let e = data.node_terms(&y_prev.values, &prev_grad, &prev_hess, k)?;
        magnitude += grid.weights()[k] * (e.stored.abs() + e.hyper + e.load.abs());
        baseline.push(e.total());
    }
    let f_before: f64 = grid.integrate(baseline.iter().copied());
    let free: Vec<usize> = (0..grid.len()).filter(|&k| !grid.is_dirichlet(k)).collect();
    let x0: Vec<f64> = free
        .iter()
        .flat_map(|&k| [y_prev.values[k].x, y_prev.values[k].y])
        .collect();
    let tol = opts.abs_tol(&grid);
    let lopts = LbfgsOptions {
        memory: opts.memory,
        max_iters: opts.max_iters,
        tol_grad: tol,
        f_noise: 1e-14 * magnitude,
        ..LbfgsOptions::default()
    };
    let mut obj = StepObjective {
        data,
        free,
        y: y_prev.values.clone(),
        baseline,
        det_floor: opts.det_floor,
    };
    let precond = if opts.precondition {
        GridLaplacian::new(&grid, &obj.free)
    } else {
        None
    };
    let res = lbfgs::minimize_with(&mut obj, x0, &lopts, precond.as_ref().map(|p| p as &dyn Preconditioner));
    if res.termination == Termination::Inadmissible {
        return Err(Error::Domain {
            det: y_prev.min_det(),
        });
    }
    obj.scatter(&res.x);
    let reverted = !(res.value <= 0.0);
    let y_new = if reverted {
        y_prev.clone()
    } else {
        VectorField2::new(grid.clone(), obj.y)?
    };
    let f_after = functional_terms(&y_new, y_prev, theta, t, tau, params)?.total();
    let report = StepReport {
        step,
        t,
        f_before,
        f_after,
        decrease: if reverted { 0.0 } else { -res.value },
        grad_norm: res.grad_norm,
        tol_grad: tol,
        iterations: res.iterations,
        min_det: y_new.min_det(),
        converged: res.converged() && !reverted,
        reverted,
    };
    Ok((y_new, report))
}

/// `E(t, y) = ∫ W(θ - t, ∇y) + H(∇²y) - f(θ - t)·y`.
pub fn energy_at(y: &VectorField2, theta: &ScalarField, t: f64, params: &MaterialParams) -> Result<FunctionalTerms> {
    // With y_prev = y the dissipation term vanishes.
    functional_terms(y, y, theta, t, 1.0, params)
}

/// Number of steps for horizon `t_final`; rejects a non-integer ratio.
pub fn step_count(tau: f64, t_final: f64) -> Result<usize> {
    if !(tau > 0.0 && t_final > 0.0) {
        return Err(Error::Config(format!("need tau > 0 and T > 0, got {tau}, {t_final}")));
    }
    let n = (t_final / tau).round();
    if (n * tau - t_final).abs() > 1e-9 * t_final || n < 1.0 {
        return Err(Error::Config(format!("T = {t_final} is not a multiple of tau = {tau}")));
    }
    Ok(n as usize)
}

/// Runs every step on `[0, T]` and records the energy ledger.
pub fn evolve(
    y0: &VectorField2,
    theta: &ScalarField,
    tau: f64,
    t_final: f64,
    params: &MaterialParams,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    let n = step_count(tau, t_final)?;
    check_admissible(y0)?;
    let mut traj = Trajectory::new(y0.clone(), tau);
    let e0 = energy_at(y0, theta, 0.0, params)?.energy();
    let mut rhs = e0;
    let mut prev_energy_same_state = e0;
    let mut cumulative = 0.0;
    for i in 1..=n {
        let t = i as f64 * tau;
        let y_prev = traj.last().clone();
        let (y, report) = incremental_step(&y_prev, theta, i, t, tau, params, opts)?;
        let e_prev_state = energy_at(&y_prev, theta, t, params)?.energy();
        let terms = functional_terms(&y, &y_prev, theta, t, tau, params)?;
        cumulative += terms.dissipation;
        rhs += e_prev_state - prev_energy_same_state;
        let lhs = terms.energy() + cumulative;
        let scale = 1.0 + rhs.abs() + cumulative;
        traj.ledger.push(LedgerEntry {
            step: i,
            t,
            energy: terms.energy(),
            energy_prev_state: e_prev_state,
            dissipation: terms.dissipation,
            cumulative_dissipation: cumulative,
            lhs,
            rhs,
            holds: lhs <= rhs + 1e-12 * scale,
        });
        prev_energy_same_state = terms.energy();
        traj.reports.push(report);
        traj.push(y);
    }
    Ok(traj)
}

/// Smooth test field vanishing on the Dirichlet edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TestField {
    pub shape: usize,
    pub component: usize,
}

/// The fixed family of eight test fields: four shapes times two components.
pub fn default_test_set() -> Vec<TestField> {
    (0..4)
        .flat_map(|shape| (0..2).map(move |component| TestField { shape, component }))
        .collect()
}

fn test_values(grid: &Grid2, field: TestField) -> Vec<Vec2> {
    use std::f64::consts::PI;
    let [x0, x1, y0, y1] = grid.extent();
    (0..grid.len())
        .map(|k| {
            if grid.is_dirichlet(k) {
                return Vec2::zeros();
            }
            let p = grid.point(k);
            let u = (p.x - x0) / (x1 - x0);
            let v = (p.y - y0) / (y1 - y0);
            let d = grid.dirichlet_cutoff(&p);
            let phi = match field.shape {
                0 => 1.0,
                1 => (PI * u).sin() * (PI * v).sin(),
                2 => u * v * (1.0 - v),
                _ => (2.0 * PI * v).cos() * (1.0 + u * u),
            };
            let mut z = Vec2::zeros();
            z[field.component] = d * phi;
            z
        })
        .collect()
}

/// Discrete `W^{2,p}` norm of a nodal vector field.
fn w2p_norm(grid: &Grid2, z: &[Vec2], p: f64) -> f64 {
    let gz = grid.grad_vector(z);
    let hz = grid.hessian(z);
    let s: f64 = grid.integrate(
        (0..grid.len()).map(|k| z[k].norm().powf(p) + gz[k].norm().powf(p) + hz[k].norm().powf(p)),
    );
    s.powf(1.0 / p)
}

/// Max over the test family of the normalized space-time residual of the
/// time-discrete Euler–Lagrange equation.
pub fn weak_residual(traj: &Trajectory, theta: &ScalarField, params: &MaterialParams, test_set: &[TestField]) -> Result<f64> {
    let grid = traj.grid().clone();
    let zs: Vec<(Vec<Vec2>, f64)> = test_set
        .iter()
        .map(|&f| {
            let z = test_values(&grid, f);
            let n = w2p_norm(&grid, &z, params.p);
            (z, n)
        })
        .collect();
    let mut sums = vec![0.0; zs.len()];
    for i in 1..=traj.steps() {
        let t = traj.time(i);
        let data = StepData::new(
            &grid,
            params,
            &theta.values,
            t,
            traj.tau,
            traj.gradients(i - 1),
        );
        let y = traj.snapshot(i);
        let s = data.stresses(traj.gradients(i), &y.hessian())?;
        let r = assemble(&grid, &s);
        for (m, (z, _)) in zs.iter().enumerate() {
            let dot: f64 = r.iter().zip(z).map(|(a, b)| a.dot(b)).sum();
            sums[m] += traj.tau * dot;
        }
    }
    Ok(sums
        .iter()
        .zip(&zs)
        .map(|(s, (_, n))| if *n > 0.0 { s.abs() / n } else { 0.0 })
        .fold(0.0, f64::max))
}

/// `max_n (‖∇y_n‖_p^p + ‖∇²y_n‖_p^p) + Σ τ ‖Ċ‖²`, the quantity controlled
/// uniformly in `τ` by the a-priori estimate.
pub fn a_priori_quantity(traj: &Trajectory, p: f64) -> f64 {
    let grid = traj.grid();
    let mut peak = 0.0_f64;
    for i in 0..=traj.steps() {
        let f = traj.gradients(i);
        let h = traj.snapshot(i).hessian();
        let v = grid.integrate((0..grid.len()).map(|k| f[k].norm().powf(p) + h[k].norm().powf(p)));
        peak = peak.max(v);
    }
    let mut rate_sum = 0.0;
    for i in 1..=traj.steps() {
        let (f0, f1) = (traj.gradients(i - 1), traj.gradients(i));
        rate_sum += traj.tau
            * grid.integrate((0..grid.len()).map(|k| {
                let fd = (f1[k] - f0[k]) / traj.tau;
                crate::material::cauchy_green_rate(&f0[k], &fd).norm_squared()
            }));
    }
    peak + rate_sum
}

/// `‖ȳ_a - ȳ_b‖_{L²(Q)}` between the backward-constant interpolants of two
/// trajectories on the same grid and horizon, sampled at the finer step.
pub fn l2_time_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let grid = a.grid();
    let (fine, coarse) = if a.tau <= b.tau { (a, b) } else { (b, a) };
    let mut s = 0.0;
    for i in 1..=fine.steps() {
        let t = fine.time(i) - 0.5 * fine.tau;
        let ya = fine.backward_constant(t);
        let yb = coarse.backward_constant(t);
        s += fine.tau * grid.integrate(ya.values.iter().zip(&yb.values).map(|(p, q)| (p - q).norm_squared()));
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Edge;
    use crate::material::ForceModel;

    fn grid(n: usize) -> Arc<Grid2> {
        Arc::new(Grid2::unit_square(n).unwrap())
    }

    fn sagging() -> MaterialParams {
        MaterialParams {
            force: ForceModel {
                rho_a: 0.5,
                rho_r: 0.5,
                ..ForceModel::default()
            },
            ..MaterialParams::default()
        }
    }

    #[test]
    fn zero_rate_has_no_dissipation() {
        let g = grid(9);
        let y = VectorField2::from_fn(g.clone(), |x| Vec2::new(x.x + 0.01 * x.y * x.y, x.y));
        let th = ScalarField::constant(g, 0.3);
        let t = functional_terms(&y, &y, &th, 0.1, 0.05, &sagging()).unwrap();
        assert_eq!(t.dissipation, 0.0);
    }

    #[test]
    fn dissipation_scales_as_inverse_step() {
        // τ R((y - y')/τ) is quadratic in the rate, so doubling τ halves it.
        let g = grid(9);
        let p = sagging();
        let y0 = VectorField2::identity(g.clone());
        let y1 = VectorField2::from_fn(g.clone(), |x| Vec2::new(x.x + 0.01 * x.x * x.y, x.y - 0.02 * x.x));
        let th = ScalarField::constant(g, 0.3);
        let a = functional_terms(&y1, &y0, &th, 0.1, 0.05, &p).unwrap().dissipation;
        let b = functional_terms(&y1, &y0, &th, 0.1, 0.1, &p).unwrap().dissipation;
        assert!((a - 2.0 * b).abs() <= 1e-14 * a);
    }

    #[test]
    fn identity_functional_value() {
        let g = grid(11);
        let p = MaterialParams::default();
        let y = VectorField2::identity(g.clone());
        let th = ScalarField::constant(g.clone(), 0.5);
        let v = incremental_functional(&y, &y, &th, 0.2, 0.05, &p);
        let expected = (p.mu_a * 2f64.powf(p.p / 2.0) + p.kappa) * g.area();
        assert!((v - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn folded_state_is_infinite() {
        let g = grid(7);
        let p = MaterialParams::default();
        let y0 = VectorField2::identity(g.clone());
        let y = VectorField2::from_fn(g.clone(), |x| Vec2::new(-x.x, x.y));
        let th = ScalarField::constant(g, 0.5);
        assert_eq!(incremental_functional(&y, &y0, &th, 0.1, 0.1, &p), f64::INFINITY);
    }

    #[test]
    fn gradient_matches_differences() {
        let g = Arc::new(Grid2::new(6, 5, [0.0, 1.0], [0.0, 0.8], &[Edge::Left]).unwrap());
        let p = MaterialParams {
            mu_a: 2.0,
            eps: 0.3,
            h_coef: 0.05,
            force: ForceModel {
                rho_a: 0.3,
                rho_r: 0.1,
                ..ForceModel::default()
            },
            ..MaterialParams::default()
        };
        let th = ScalarField::from_fn(g.clone(), |x| 0.5 * x.x + 0.2 * x.y);
        let y0 = VectorField2::from_fn(g.clone(), |x| Vec2::new(x.x + 0.02 * x.y, x.y - 0.01 * x.x * x.x));
        let y = VectorField2::from_fn(g.clone(), |x| Vec2::new(x.x + 0.05 * x.x * x.y, x.y + 0.03 * (3.0 * x.x).sin()));
        let (t, tau) = (0.3, 0.1);
        let grad = functional_gradient(&y, &y0, &th, t, tau, &p).unwrap();
        let step = 1e-6;
        let mut worst = 0.0_f64;
        for k in 0..g.len() {
            for c in 0..2 {
                let mut yp = y.clone();
                yp.values[k][c] += step;
                let mut ym = y.clone();
                ym.values[k][c] -= step;
                let fd = (incremental_functional(&yp, &y0, &th, t, tau, &p)
                    - incremental_functional(&ym, &y0, &th, t, tau, &p))
                    / (2.0 * step);
                worst = worst.max((fd - grad[k][c]).abs());
            }
        }
        let scale = grad.iter().map(|v| v.amax()).fold(0.0, f64::max);
        assert!(worst <= 1e-6 * scale, "worst {worst} scale {scale}");
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let g = grid(13);
        let p = MaterialParams::default();
        let y0 = VectorField2::identity(g.clone());
        let th = ScalarField::constant(g, 0.5);
        let opts = SolverOptions::default();
        let (y, rep) = incremental_step(&y0, &th, 1, 0.1, 0.1, &p, &opts).unwrap();
        assert_eq!(y, y0);
        assert!(rep.converged && rep.grad_norm <= rep.tol_grad);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn perturbed_start_relaxes_to_identity() {
        let g = grid(13);
        let p = MaterialParams::default();
        let id = VectorField2::identity(g.clone());
        let y0 = VectorField2::from_fn(g.clone(), |x| {
            Vec2::new(x.x + 0.01 * x.x * (5.0 * x.y).sin(), x.y + 0.01 * x.x * x.x * (1.0 - x.y))
        });
        let th = ScalarField::constant(g, 0.5);
        let opts = SolverOptions::default();
        // A long step lets the viscous term fade so that the minimizer is
        // the elastic equilibrium, which is the identity.
        let (y, rep) = incremental_step(&y0, &th, 1, 0.1, 1e3, &p, &opts).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.decrease > 0.0);
        assert!(y.max_abs_diff(&id) < 0.01 * y0.max_abs_diff(&id), "{}", y.max_abs_diff(&id));
    }

    #[test]
    fn evolve_under_gravity() {
        let g = grid(11);
        let p = MaterialParams {
            mu_a: 2.0,
            mu_r: 1.0,
            eps: 0.2,
            force: ForceModel {
                rho_a: 0.4,
                rho_r: 0.2,
                ..ForceModel::default()
            },
            ..MaterialParams::default()
        };
        let th = ScalarField::from_fn(g.clone(), |x| 2.0 * ((x - Vec2::new(0.5, 0.5)).norm() - 0.1).max(0.0));
        let y0 = VectorField2::identity(g.clone());
        let traj = evolve(&y0, &th, 0.1, 0.5, &p, &SolverOptions::default()).unwrap();
        assert_eq!(traj.steps(), 5);
        assert_eq!(traj.snapshot(0), &y0);
        assert!((traj.final_time() - 0.5).abs() < 1e-15);
        let mut prev = 0.0;
        for (r, l) in traj.reports.iter().zip(&traj.ledger) {
            assert!(r.decrease >= 0.0 && r.min_det > 1e-8);
            assert!(l.cumulative_dissipation >= prev);
            prev = l.cumulative_dissipation;
            assert!(l.holds, "{l:?}");
        }
        for y in traj.snapshots() {
            for k in 0..g.len() {
                if g.is_dirichlet(k) {
                    assert_eq!(y.values[k], g.point(k));
                }
            }
        }
        // Gravity pulls the free end down.
        let tip = g.index(g.nx - 1, g.ny / 2);
        assert!(traj.last().values[tip].y < g.point(tip).y);
    }

    #[test]
    fn interpolants() {
        let g = grid(5);
        let mut traj = Trajectory::new(VectorField2::identity(g.clone()), 0.25);
        for i in 1..=4 {
            traj.push(VectorField2::from_fn(g.clone(), move |x| x * (1.0 + i as f64)));
        }
        let k = 7;
        let x = g.point(k);
        assert_eq!(traj.affine(0.0).values[k], x);
        assert_eq!(traj.affine(9.0).values[k], x * 5.0);
        assert!((traj.affine(0.375).values[k] - x * 2.5).norm() < 1e-14);
        assert_eq!(traj.backward_constant(0.3).values[k], x * 3.0);
        assert_eq!(traj.forward_constant(0.3).values[k], x * 2.0);
        assert_eq!(traj.backward_constant(0.25).values[k], x * 2.0);
        assert_eq!(traj.forward_constant(0.25).values[k], x * 2.0);
        assert_eq!(traj.bracket(1.0), (3, 4, 1.0));
    }

    #[test]
    fn weak_residual_of_zero_field_and_identity() {
        let g = grid(9);
        let p = MaterialParams::default();
        let th = ScalarField::constant(g.clone(), 0.2);
        let traj = Trajectory::constant(VectorField2::identity(g), 0.1, 3);
        let r = weak_residual(&traj, &th, &p, &default_test_set()).unwrap();
        assert!(r < 1e-14, "{r}");
        assert_eq!(weak_residual(&traj, &th, &p, &[]).unwrap(), 0.0);
    }

    #[test]
    fn step_count_rejects_fractional_horizon() {
        assert_eq!(step_count(0.05, 1.0).unwrap(), 20);
        assert!(step_count(0.3, 1.0).is_err());
    }
}
