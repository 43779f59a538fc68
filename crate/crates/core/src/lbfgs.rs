//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The objective may refuse a trial point (returns `None`), which the line
//! search treats like an infinite value and backs off from. Close to the
//! roundoff floor the sufficient-decrease test is replaced by the
//! approximate Wolfe conditions of Hager and Zhang.

use std::collections::VecDeque;

/// Differentiable objective with an admissible set.
pub trait Objective {
    /// Writes the gradient into `grad` and returns the value, or `None` when
    /// `x` is outside the admissible set.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Option<f64>;
}

/// Symmetric positive definite approximation of the inverse Hessian, used
/// as the initial matrix of the two-loop recursion.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the Euclidean gradient norm drops to this value.
    pub tol_grad: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Absolute roundoff level of the objective; steps whose value change is
    /// below it are judged by the approximate Wolfe conditions.
    pub f_noise: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iters: 500,
            tol_grad: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            f_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The line search could not make progress along a descent direction.
    LineSearchFailed,
    /// The starting point was inadmissible.
    Inadmissible,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Copy)]
struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
}

struct Search<'a, O: Objective> {
    obj: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    xt: Vec<f64>,
    gt: Vec<f64>,
    evals: usize,
    last_alpha: f64,
}

impl<O: Objective> Search<'_, O> {
    fn probe(&mut self, alpha: f64) -> Option<Trial> {
        for ((xt, x), d) in self.xt.iter_mut().zip(self.x).zip(self.d) {
            *xt = x + alpha * d;
        }
        self.evals += 1;
        self.last_alpha = alpha;
        let value = self.obj.eval(&self.xt, &mut self.gt)?;
        if !value.is_finite() {
            return None;
        }
        Some(Trial {
            alpha,
            value,
            slope: dot(&self.gt, self.d),
        })
    }
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: Objective>(obj: &mut O, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult {
    minimize_with(obj, x0, opts, None)
}

/// [`minimize`] with an optional preconditioner `P`: the initial inverse
/// Hessian is `γ P` with `γ = sᵀy / yᵀPy` from the newest pair.
pub fn minimize_with<O: Objective>(
    obj: &mut O,
    x0: Vec<f64>,
    opts: &LbfgsOptions,
    precond: Option<&dyn Preconditioner>,
) -> LbfgsResult {
    let n = x0.len();
    let mut work = vec![0.0; n];
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut evaluations = 1;
    let Some(mut f) = obj.eval(&x, &mut g) else {
        return LbfgsResult {
            x,
            value: f64::INFINITY,
            grad_norm: f64::INFINITY,
            iterations: 0,
            evaluations,
            termination: Termination::Inadmissible,
        };
    };
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    loop {
        let gn = norm(&g);
        if gn <= opts.tol_grad {
            termination = Termination::Converged;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }

        // Two-loop recursion.
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        let scale = match precond {
            None => pairs.back().map(|(s, y, _)| dot(s, y) / dot(y, y)).unwrap_or(1.0 / gn),
            Some(p) => {
                p.apply(&d, &mut work);
                d.copy_from_slice(&work);
                match pairs.back() {
                    Some((s, y, _)) => {
                        p.apply(y, &mut work);
                        dot(s, y) / dot(y, &work)
                    }
                    None => 1.0 / norm(&d),
                }
            }
        };
        d.iter_mut().for_each(|di| *di *= scale);
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha_buf[k] - b) * si);
        }
        let mut slope0 = dot(&g, &d);
        if !(slope0 < 0.0) {
            pairs.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi / gn);
            slope0 = -gn;
        }

        let mut search = Search {
            obj: &mut *obj,
            x: &x,
            d: &d,
            xt: vec![0.0; n],
            gt: vec![0.0; n],
            evals: 0,
            last_alpha: f64::NAN,
        };
        let accepted = wolfe_search(&mut search, f, slope0, opts);
        evaluations += search.evals;
        let Some(trial) = accepted else {
            if pairs.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            // Retry from steepest descent with a fresh memory.
            pairs.clear();
            iterations += 1;
            continue;
        };
        let Search { xt, gt, last_alpha, .. } = search;
        // Re-evaluate at the accepted point unless it was the last probe.
        let (xt, gt) = if last_alpha == trial.alpha {
            (xt, gt)
        } else {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + trial.alpha * b).collect();
            let mut gt = vec![0.0; n];
            evaluations += 1;
            obj.eval(&xt, &mut gt);
            (xt, gt)
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = xt;
        g = gt;
        f = trial.value;
        iterations += 1;
    }

    LbfgsResult {
        grad_norm: norm(&g),
        x,
        value: f,
        iterations,
        evaluations,
        termination,
    }
}

/// Strong-Wolfe bracketing search with bisection-safeguarded cubic zoom.
fn wolfe_search<O: Objective>(s: &mut Search<'_, O>, f0: f64, slope0: f64, opts: &LbfgsOptions) -> Option<Trial> {
    let armijo = |t: &Trial| t.value <= f0 + opts.c1 * t.alpha * slope0;
    // Approximate Wolfe: trusted only when the decrease is at roundoff level.
    let approx = |t: &Trial| {
        t.value <= f0 + opts.f_noise + 1e-12 * f0.abs()
            && t.slope >= opts.c2 * slope0
            && t.slope <= (2.0 * opts.c1 - 1.0) * slope0
    };
    let curvature = |t: &Trial| t.slope.abs() <= -opts.c2 * slope0;

    let mut lo = Trial {
        alpha: 0.0,
        value: f0,
        slope: slope0,
    };
    let mut alpha = 1.0;
    let mut best_approx: Option<Trial> = None;
    for _ in 0..opts.max_line_search {
        let Some(t) = s.probe(alpha) else {
            // Inadmissible: bisect back towards the last good point.
            let hi = Trial {
                alpha,
                value: f64::INFINITY,
                slope: f64::NAN,
            };
            return zoom(s, lo, hi, f0, slope0, opts).or(best_approx);
        };
        if !armijo(&t) || (t.value >= lo.value && lo.alpha > 0.0) {
            if approx(&t) && best_approx.is_none() {
                best_approx = Some(t);
            }
            let hi = t;
            return zoom(s, lo, hi, f0, slope0, opts).or(best_approx);
        }
        if curvature(&t) {
            return Some(t);
        }
        if t.slope >= 0.0 {
            let hi = lo;
            return zoom(s, t, hi, f0, slope0, opts);
        }
        lo = t;
        alpha *= 2.0;
    }
    if lo.alpha > 0.0 {
        Some(lo)
    } else {
        best_approx
    }
}

fn zoom<O: Objective>(
    s: &mut Search<'_, O>,
    mut lo: Trial,
    mut hi: Trial,
    f0: f64,
    slope0: f64,
    opts: &LbfgsOptions,
) -> Option<Trial> {
    for _ in 0..opts.max_line_search {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        let width = b - a;
        if width <= 1e-16 * b.max(1e-300) {
            break;
        }
        let mut alpha = 0.5 * (lo.alpha + hi.alpha);
        if hi.value.is_finite() && hi.slope.is_finite() {
            if let Some(c) = cubic_min(&lo, &hi) {
                if c > a + 0.1 * width && c < b - 0.1 * width {
                    alpha = c;
                }
            }
        }
        let Some(t) = s.probe(alpha) else {
            hi = Trial {
                alpha,
                value: f64::INFINITY,
                slope: f64::NAN,
            };
            continue;
        };
        let armijo = t.value <= f0 + opts.c1 * t.alpha * slope0;
        let approx = t.value <= f0 + opts.f_noise + 1e-12 * f0.abs()
            && t.slope >= opts.c2 * slope0
            && t.slope <= (2.0 * opts.c1 - 1.0) * slope0;
        if approx {
            return Some(t);
        }
        if !armijo || t.value >= lo.value {
            hi = t;
        } else {
            if t.slope.abs() <= -opts.c2 * slope0 {
                return Some(t);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    (lo.alpha > 0.0).then_some(lo)
}

/// Minimizer of the cubic interpolating values and slopes at two points.
fn cubic_min(p: &Trial, q: &Trial) -> Option<f64> {
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.slope * q.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let c = q.alpha - (q.alpha - p.alpha) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    c.is_finite().then_some(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            let mut f = 0.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..x.len() - 1 {
                let a = x[i + 1] - x[i] * x[i];
                let b = 1.0 - x[i];
                f += 100.0 * a * a + b * b;
                g[i] += -400.0 * x[i] * a - 2.0 * b;
                g[i + 1] += 200.0 * a;
            }
            Some(f)
        }
    }

    /// Log barrier keeps `x[0] > -1/2`; trial points beyond it are refused.
    struct Fenced;

    impl Objective for Fenced {
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Option<f64> {
            if x[0] <= -0.5 {
                return None;
            }
            g[0] = 2.0 * x[0] - (x[0] + 0.5).recip();
            g[1] = 8.0 * (x[1] - 1.0);
            Some(x[0] * x[0] - (x[0] + 0.5).ln() + 4.0 * (x[1] - 1.0).powi(2))
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LbfgsOptions {
            max_iters: 2000,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut Rosenbrock, vec![-1.2, 1.0, -1.2, 1.0, 0.5, 0.3], &opts);
        assert!(r.converged(), "{:?}", r.termination);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", r.x);
    }

    #[test]
    fn respects_admissible_set() {
        let r = minimize(&mut Fenced, vec![3.0, -2.0], &LbfgsOptions::default());
        assert!(r.converged());
        // Stationary point of x² - ln(x + 1/2): 2x² + x - 1 = 0.
        assert!((r.x[0] - 0.5).abs() < 1e-8);
        assert!((r.x[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn reports_inadmissible_start() {
        let r = minimize(&mut Fenced, vec![-1.0, 0.0], &LbfgsOptions::default());
        assert_eq!(r.termination, Termination::Inadmissible);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let r = minimize(&mut Fenced, vec![0.5, 1.0], &LbfgsOptions::default());
        assert_eq!(r.iterations, 0);
        assert!(r.converged());
    }
}
