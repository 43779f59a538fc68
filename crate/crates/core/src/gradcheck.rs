//! Finite-difference checks of the constitutive derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::material::{growth_rate, hyper_energy, stored_energy, viscous_eval, MaterialParams};
use crate::tensor::{rotation, Mat2, Tensor3, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckOptions {
    pub samples: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            samples: 100,
            step: 1e-5,
            tol: 1e-6,
        }
    }
}

/// Worst relative errors `|A - D_h| / |A|` (Frobenius) over all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub samples: usize,
    pub step: f64,
    pub tol: f64,
    pub stored: f64,
    pub viscous: f64,
    pub hyper: f64,
    pub growth_lipschitz: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.stored <= self.tol && self.viscous <= self.tol && self.hyper <= self.tol
    }
}

/// One random admissible state.
#[derive(Debug, Clone, Copy)]
pub struct State {
    pub sigma: f64,
    pub f: Mat2,
    pub f_dot: Mat2,
    pub g: Tensor3,
}

/// `F = R(φ)(I + A)` with `|A_ij| ≤ 0.3` and `det F ≥ 0.3`; `sigma` spans the
/// transition layer and both phases.
pub fn random_state(rng: &mut impl Rng, params: &MaterialParams) -> State {
    let w = if params.eps > 0.0 { 1.5 * params.eps } else { 0.5 };
    let f = loop {
        let a = Mat2::from_fn(|_, _| rng.gen_range(-0.3..0.3));
        let f = rotation(rng.gen_range(-3.0..3.0)) * (Mat2::identity() + a);
        if f.determinant() >= 0.3 {
            break f;
        }
    };
    State {
        sigma: rng.gen_range(-w..w),
        f,
        f_dot: Mat2::from_fn(|_, _| rng.gen_range(-1.0..1.0)),
        g: Tensor3::from_fn(|_, _, _| rng.gen_range(-1.0..1.0)),
    }
}

fn rel(err: f64, size: f64) -> f64 {
    if size > 0.0 {
        err / size
    } else {
        err
    }
}

/// Central differences of a scalar function of a matrix.
fn fd_mat(x: &Mat2, h: f64, mut f: impl FnMut(&Mat2) -> Result<f64>) -> Result<Mat2> {
    let mut d = Mat2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            let (mut p, mut m) = (*x, *x);
            p[(i, j)] += h;
            m[(i, j)] -= h;
            d[(i, j)] = (f(&p)? - f(&m)?) / (2.0 * h);
        }
    }
    Ok(d)
}

pub fn check_stored(s: &State, params: &MaterialParams, h: f64) -> Result<f64> {
    let a = stored_energy(s.sigma, &s.f, params)?.deriv;
    let d = fd_mat(&s.f, h, |f| Ok(stored_energy(s.sigma, f, params)?.value))?;
    Ok(rel((a - d).norm(), a.norm()))
}

pub fn check_viscous(s: &State, params: &MaterialParams, h: f64) -> Result<f64> {
    let a = viscous_eval(s.sigma, &s.f, &s.f_dot, params)?.deriv;
    let d = fd_mat(&s.f_dot, h, |fd| Ok(viscous_eval(s.sigma, &s.f, fd, params)?.value))?;
    Ok(rel((a - d).norm(), a.norm()))
}

pub fn check_hyper(s: &State, params: &MaterialParams, h: f64) -> f64 {
    let (_, a) = hyper_energy(&s.g, params);
    let d = Tensor3::from_fn(|i, j, k| {
        let (mut p, mut m) = (s.g, s.g);
        p.0[i][j][k] += h;
        m.0[i][j][k] -= h;
        (hyper_energy(&p, params).0 - hyper_energy(&m, params).0) / (2.0 * h)
    });
    rel((a - d).norm(), a.norm())
}

/// Largest difference quotient of the growth rate over random pairs of
/// nearby states; a lower bound for its Lipschitz constant in `(y, F)`.
pub fn growth_lipschitz(params: &MaterialParams, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let s = random_state(&mut rng, params);
        let y = Vec2::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let dy = Vec2::new(rng.gen_range(-1e-3..1e-3), rng.gen_range(-1e-3..1e-3));
        let df = Mat2::from_fn(|_, _| rng.gen_range(-1e-3..1e-3));
        let dist = (dy.norm_squared() + df.norm_squared()).sqrt();
        let diff = (growth_rate(&(y + dy), &(s.f + df), params) - growth_rate(&y, &s.f, params)).abs();
        worst = worst.max(diff / dist);
    }
    worst
}

/// All three derivative checks on `opts.samples` random states.
pub fn run(params: &MaterialParams, opts: &GradcheckOptions, seed: u64) -> Result<GradcheckReport> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport {
        samples: opts.samples,
        step: opts.step,
        tol: opts.tol,
        stored: 0.0,
        viscous: 0.0,
        hyper: 0.0,
        growth_lipschitz: growth_lipschitz(params, opts.samples, seed ^ 0x9e37_79b9),
    };
    for _ in 0..opts.samples {
        let s = random_state(&mut rng, params);
        report.stored = report.stored.max(check_stored(&s, params, opts.step)?);
        report.viscous = report.viscous.max(check_viscous(&s, params, opts.step)?);
        report.hyper = report.hyper.max(check_hyper(&s, params, opts.step));
    }
    Ok(report)
}
