//! Constitutive laws of the two-phase medium.
//!
//! Every density is evaluated at a phase value `sigma`, the signed time
//! remaining before a point joins the accreting phase (`theta(x) - t`).
//! Negative `sigma` means the point already belongs to the accreting phase.
//!
//! Concrete choices:
//!
//! * phase densities `V^i(F) = mu_i (|F|^p - p 2^{(p-2)/2} (det F - 1))`, so
//!   that each phase is stress free at `F = I`;
//! * determinant barrier `V^J(F) = kappa ((det F)^{-q} + q (det F - 1))`;
//! * viscosity `R^i = (eta_i / 4) |Ċ|²` with `Ċ = Ḟᵀ F + Fᵀ Ḟ`;
//! * second-gradient potential `H(G) = h_coef |G|^p`;
//! * growth rate `c + (C - c) s(tr(FᵀF)/2 - 1)` with a tanh sigmoid `s`;
//! * body force `rho(sigma) g` with its own smoothing width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cofactor, ddot, Mat2, Tensor3, Vec2};

/// Growth-rate law `gamma(y, F) = c + (C - c) s(tr(FᵀF)/2 - 1)` with
/// `s(u) = (1 + tanh(gain u)) / 2`. A zero gain gives a strain-independent
/// rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthLaw {
    #[serde(default = "default_gain")]
    pub gain: f64,
}

fn default_gain() -> f64 {
    4.0
}

impl Default for GrowthLaw {
    fn default() -> Self {
        Self {
            gain: default_gain(),
        }
    }
}

/// Pluggable growth rate. Implementations must be Lipschitz and take values
/// in `[gamma_min, gamma_max]` of the owning [`MaterialParams`].
pub trait GrowthRate {
    fn rate(&self, params: &MaterialParams, y: &Vec2, f: &Mat2) -> f64;
}

impl GrowthRate for GrowthLaw {
    fn rate(&self, params: &MaterialParams, _y: &Vec2, f: &Mat2) -> f64 {
        let strain = 0.5 * f.norm_squared() - 1.0;
        let s = 0.5 * (1.0 + (self.gain * strain).tanh());
        let (lo, hi) = (params.gamma_min, params.gamma_max);
        (lo + (hi - lo) * s).clamp(lo, hi)
    }
}

/// Phase-dependent gravity `f = rho(sigma) g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceModel {
    pub rho_a: f64,
    pub rho_r: f64,
    pub g: [f64; 2],
    /// Smoothing width used in place of `eps` when `eps` is smaller, so that
    /// the force stays Lipschitz in `sigma` in the sharp-interface case.
    pub eps_f: f64,
}

impl Default for ForceModel {
    fn default() -> Self {
        Self {
            rho_a: 0.0,
            rho_r: 0.0,
            g: [0.0, -1.0],
            eps_f: 0.05,
        }
    }
}

/// All constitutive constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    pub mu_a: f64,
    pub mu_r: f64,
    pub kappa: f64,
    pub p: f64,
    pub q: f64,
    pub eta_a: f64,
    pub eta_r: f64,
    pub h_coef: f64,
    pub eps: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    #[serde(default)]
    pub growth: GrowthLaw,
    #[serde(default)]
    pub force: ForceModel,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            mu_a: 1.0,
            mu_r: 1.0,
            kappa: 1.0,
            p: 4.0,
            q: 5.0,
            eta_a: 0.5,
            eta_r: 0.5,
            h_coef: 1e-3,
            eps: 0.2,
            gamma_min: 0.2,
            gamma_max: 0.3,
            growth: GrowthLaw::default(),
            force: ForceModel::default(),
        }
    }
}

/// Derived coercivity constants, reported alongside every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub c_w: f64,
    pub c_h: f64,
    pub c_d: f64,
}

impl MaterialParams {
    /// Checks the structural hypotheses on the constants.
    pub fn validate(&self) -> Result<()> {
        let d = 2.0;
        if !(self.p > d) {
            return Err(Error::Config(format!("p = {} must exceed 2", self.p)));
        }
        let q_min = self.p * d / (self.p - d);
        if !(self.q > q_min) {
            return Err(Error::Config(format!(
                "q = {} must exceed p d / (p - d) = {q_min}",
                self.q
            )));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min <= self.gamma_max) {
            return Err(Error::Config(format!(
                "need 0 < gamma_min <= gamma_max, got [{}, {}]",
                self.gamma_min, self.gamma_max
            )));
        }
        for (name, v) in [
            ("mu_a", self.mu_a),
            ("mu_r", self.mu_r),
            ("kappa", self.kappa),
            ("eta_a", self.eta_a),
            ("eta_r", self.eta_r),
            ("h_coef", self.h_coef),
            ("force.eps_f", self.force.eps_f),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps = {} must be >= 0", self.eps)));
        }
        if !self.growth.gain.is_finite() {
            return Err(Error::Config("growth.gain must be finite".into()));
        }
        Ok(())
    }

    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps,
            ..self.clone()
        }
    }

    /// True when both phases share every constitutive constant.
    pub fn is_single_phase(&self) -> bool {
        self.mu_a == self.mu_r && self.eta_a == self.eta_r && self.force.rho_a == self.force.rho_r
    }

    /// Coefficient of the null-Lagrangian correction, `p 2^{(p-2)/2}`.
    fn det_shift(&self) -> f64 {
        self.p * 2f64.powf(0.5 * (self.p - 2.0))
    }

    pub fn derived_constants(&self) -> DerivedConstants {
        let p = self.p;
        let q = self.q;
        let a = self.det_shift();
        let mu_min = self.mu_a.min(self.mu_r);
        // V^i >= (mu_i/2)|F|^p - mu_i * offset, offset = -min_r (r^p/2 - a r^2/2 + a).
        let r_star = (2.0 * a / p).powf(1.0 / (p - 2.0));
        let offset = -(0.5 * r_star.powf(p) - 0.5 * a * r_star * r_star + a).min(0.0);
        let mu_max = self.mu_a.max(self.mu_r);
        let lower_offset = mu_max * offset;
        let upper = (self.mu_a - self.mu_r).abs() * (1.0 + 1.5 * a);
        let barrier = self.kappa * (1.0 - (q / (q + 1.0)).powf(q + 1.0));
        let mut c_w = (0.5 * mu_min).min(barrier);
        for bound in [lower_offset, upper] {
            if bound > 0.0 {
                c_w = c_w.min(1.0 / bound);
            }
        }
        let h = self.h_coef;
        let c_h = h.min(1.0 / h).min(1.0 / (p * h)).min(h * 2f64.powf(2.0 - p));
        let c_d = 0.5 * self.eta_a.min(self.eta_r);
        DerivedConstants { c_w, c_h, c_d }
    }
}

/// Phase blending `h_eps(sigma)`: quintic smoothstep over `(-eps/2, eps/2)`
/// for `eps > 0`, Heaviside with `h_0(0) = 1` for `eps = 0`.
pub fn blend(sigma: f64, eps: f64) -> f64 {
    if eps <= 0.0 {
        return if sigma >= 0.0 { 1.0 } else { 0.0 };
    }
    let u = (sigma / eps + 0.5).clamp(0.0, 1.0);
    u * u * u * (u * (6.0 * u - 15.0) + 10.0)
}

/// `h_eps'(sigma)`; zero for `eps = 0` away from the jump.
pub fn blend_slope(sigma: f64, eps: f64) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    let u = sigma / eps + 0.5;
    if u <= 0.0 || u >= 1.0 {
        return 0.0;
    }
    30.0 * u * u * (1.0 - u) * (1.0 - u) / eps
}

/// Value and first derivative of a density with respect to its matrix
/// argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatEval {
    pub value: f64,
    pub deriv: Mat2,
}

fn check_det(f: &Mat2) -> Result<f64> {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det)
    } else {
        Err(Error::Domain { det })
    }
}

/// `n2^(p/2)`, with an exact fast path for even integer `p`.
#[inline]
pub(crate) fn pow_half(n2: f64, p: f64) -> f64 {
    let half = 0.5 * p;
    if half == half.trunc() && half.abs() < 16.0 {
        n2.powi(half as i32)
    } else {
        n2.powf(half)
    }
}

/// Phase density `V^i` for modulus `mu`.
fn phase_density(params: &MaterialParams, mu: f64, f: &Mat2, det: f64) -> MatEval {
    let p = params.p;
    let a = params.det_shift();
    let n2 = f.norm_squared();
    let np = pow_half(n2, p);
    let value = mu * (np - a * (det - 1.0));
    let deriv = (f * (p * pow_half(n2, p - 2.0)) - cofactor(f) * a) * mu;
    MatEval { value, deriv }
}

/// Accreting-phase density `V^a`.
pub fn v_accreting(params: &MaterialParams, f: &Mat2) -> Result<MatEval> {
    let det = check_det(f)?;
    Ok(phase_density(params, params.mu_a, f, det))
}

/// Receding-phase density `V^r`.
pub fn v_receding(params: &MaterialParams, f: &Mat2) -> Result<MatEval> {
    let det = check_det(f)?;
    Ok(phase_density(params, params.mu_r, f, det))
}

/// Barrier `V^J`.
pub fn v_barrier(params: &MaterialParams, f: &Mat2) -> Result<MatEval> {
    let det = check_det(f)?;
    let q = params.q;
    let k = params.kappa;
    let inv_q = if q == q.trunc() && q < 32.0 { det.powi(-(q as i32)) } else { det.powf(-q) };
    let value = k * (inv_q + q * (det - 1.0));
    let deriv = cofactor(f) * (k * q * (1.0 - inv_q / det));
    Ok(MatEval { value, deriv })
}

/// `V^r(F) - V^a(F)`, the jump of the stored energy across the front.
pub fn phase_gap(params: &MaterialParams, f: &Mat2) -> Result<f64> {
    let det = check_det(f)?;
    let a = params.det_shift();
    let base = pow_half(f.norm_squared(), params.p) - a * (det - 1.0);
    Ok((params.mu_r - params.mu_a) * base)
}

/// Blended stored energy `W_eps(sigma, F)` and `∂_F W_eps`.
pub fn stored_energy(sigma: f64, f: &Mat2, params: &MaterialParams) -> Result<MatEval> {
    let det = check_det(f)?;
    let h = blend(sigma, params.eps);
    let va = phase_density(params, params.mu_a, f, det);
    let vr = phase_density(params, params.mu_r, f, det);
    let vj = v_barrier(params, f)?;
    Ok(MatEval {
        value: (1.0 - h) * va.value + h * vr.value + vj.value,
        deriv: va.deriv * (1.0 - h) + vr.deriv * h + vj.deriv,
    })
}

/// `∂_sigma W_eps(sigma, F) = h_eps'(sigma) (V^r - V^a)`.
pub fn stored_energy_dsigma(sigma: f64, f: &Mat2, params: &MaterialParams) -> Result<f64> {
    let slope = blend_slope(sigma, params.eps);
    if slope == 0.0 {
        check_det(f)?;
        return Ok(0.0);
    }
    Ok(slope * phase_gap(params, f)?)
}

/// Returns `(W(sigma, QF), W(sigma, F))`.
pub fn frame_check(sigma: f64, f: &Mat2, q: &Mat2, params: &MaterialParams) -> Result<(f64, f64)> {
    let rotated = stored_energy(sigma, &(q * f), params)?.value;
    let plain = stored_energy(sigma, f, params)?.value;
    Ok((rotated, plain))
}

/// Returns `(H(QG), H(G))`.
pub fn frame_check_hyper(g: &Tensor3, q: &Mat2, params: &MaterialParams) -> (f64, f64) {
    (
        hyper_energy(&g.left_mul(q), params).0,
        hyper_energy(g, params).0,
    )
}

/// Viscosity tensor `D(C)` acting on symmetric rates: returns `D(C) : Ċ`.
pub trait ViscosityTensor {
    fn apply(&self, c: &Mat2, c_dot: &Mat2) -> Mat2;
}

/// Isotropic `D = (eta/2) Id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Isotropic {
    pub eta: f64,
}

impl ViscosityTensor for Isotropic {
    fn apply(&self, _c: &Mat2, c_dot: &Mat2) -> Mat2 {
        c_dot * (0.5 * self.eta)
    }
}

/// `Ċ = Ḟᵀ F + Fᵀ Ḟ`.
pub fn cauchy_green_rate(f: &Mat2, f_dot: &Mat2) -> Mat2 {
    f_dot.transpose() * f + f.transpose() * f_dot
}

/// Dissipation `R = (1-h) ½ Ċ:D^a:Ċ + h ½ Ċ:D^r:Ċ` and its rate derivative
/// `∂_Ḟ R = 2 (1-h) F (D^a:Ċ) + 2 h F (D^r:Ċ)` for general viscosity tensors.
pub fn dissipation_with(
    sigma: f64,
    f: &Mat2,
    f_dot: &Mat2,
    eps: f64,
    visc_a: &dyn ViscosityTensor,
    visc_r: &dyn ViscosityTensor,
) -> Result<MatEval> {
    check_det(f)?;
    let h = blend(sigma, eps);
    let c = f.transpose() * f;
    let c_dot = cauchy_green_rate(f, f_dot);
    let da = visc_a.apply(&c, &c_dot);
    let dr = visc_r.apply(&c, &c_dot);
    let value = 0.5 * ((1.0 - h) * ddot(&c_dot, &da) + h * ddot(&c_dot, &dr));
    let deriv = f * (da * (1.0 - h) + dr * h) * 2.0;
    Ok(MatEval { value, deriv })
}

/// Dissipation density `R_eps(sigma, F, Ḟ)` with the isotropic default.
pub fn dissipation(sigma: f64, f: &Mat2, f_dot: &Mat2, params: &MaterialParams) -> Result<f64> {
    Ok(viscous_eval(sigma, f, f_dot, params)?.value)
}

/// Viscous stress `∂_Ḟ R_eps(sigma, F, Ḟ)`.
pub fn viscous_stress(sigma: f64, f: &Mat2, f_dot: &Mat2, params: &MaterialParams) -> Result<Mat2> {
    Ok(viscous_eval(sigma, f, f_dot, params)?.deriv)
}

/// Both dissipation and viscous stress in one pass.
pub fn viscous_eval(sigma: f64, f: &Mat2, f_dot: &Mat2, params: &MaterialParams) -> Result<MatEval> {
    dissipation_with(
        sigma,
        f,
        f_dot,
        params.eps,
        &Isotropic { eta: params.eta_a },
        &Isotropic { eta: params.eta_r },
    )
}

/// `H(G) = h_coef |G|^p` and `DH(G) = p h_coef |G|^{p-2} G`.
pub fn hyper_energy(g: &Tensor3, params: &MaterialParams) -> (f64, Tensor3) {
    let n2 = g.norm_squared();
    if n2 == 0.0 {
        return (0.0, Tensor3::ZERO);
    }
    let p = params.p;
    let value = params.h_coef * pow_half(n2, p);
    let deriv = g.scale(p * params.h_coef * pow_half(n2, p - 2.0));
    (value, deriv)
}

/// Default growth rate in `[gamma_min, gamma_max]`.
pub fn growth_rate(y: &Vec2, f: &Mat2, params: &MaterialParams) -> f64 {
    params.growth.rate(params, y, f)
}

fn force_width(params: &MaterialParams) -> f64 {
    params.eps.max(params.force.eps_f)
}

/// Body force `f(sigma, x)`.
pub fn body_force(sigma: f64, _x: &Vec2, params: &MaterialParams) -> Vec2 {
    let fm = &params.force;
    let rho = fm.rho_a + (fm.rho_r - fm.rho_a) * blend(sigma, force_width(params));
    Vec2::new(fm.g[0], fm.g[1]) * rho
}

/// `∂_sigma f(sigma, x)`.
pub fn body_force_dsigma(sigma: f64, _x: &Vec2, params: &MaterialParams) -> Vec2 {
    let fm = &params.force;
    let slope = (fm.rho_r - fm.rho_a) * blend_slope(sigma, force_width(params));
    Vec2::new(fm.g[0], fm.g[1]) * slope
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_phase() -> MaterialParams {
        MaterialParams {
            mu_a: 2.0,
            mu_r: 1.0,
            eta_a: 0.8,
            eta_r: 0.4,
            force: ForceModel {
                rho_a: 0.04,
                rho_r: 0.02,
                ..ForceModel::default()
            },
            ..MaterialParams::default()
        }
    }

    fn random_f(rng: &mut ChaCha8Rng, min_det: f64) -> Mat2 {
        loop {
            let f = Mat2::new(
                1.0 + rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.4..0.4),
                1.0 + rng.gen_range(-0.4..0.4),
            );
            if f.determinant() > min_det {
                return f;
            }
        }
    }

    #[test]
    fn blend_endpoints() {
        let eps = 0.3;
        assert_eq!(blend(-eps, eps), 0.0);
        assert_eq!(blend(eps, eps), 1.0);
        assert_eq!(blend(-eps / 2.0, eps), 0.0);
        assert_eq!(blend(eps / 2.0, eps), 1.0);
        assert_relative_eq!(blend(0.0, eps), 0.5, epsilon = 1e-15);
        assert_eq!(blend(0.0, 0.0), 1.0);
        assert_eq!(blend(-1e-300, 0.0), 0.0);
    }

    #[test]
    fn blend_monotone_with_bounded_slope() {
        let eps = 0.1;
        let n = 20_000;
        let ds = 2.0 * eps / n as f64;
        let mut prev = blend(-eps, eps);
        for k in 1..=n {
            let s = -eps + k as f64 * ds;
            let cur = blend(s, eps);
            assert!(cur >= prev);
            assert!((cur - prev) / ds <= 2.0 / eps + 1e-9);
            prev = cur;
        }
    }

    #[test]
    fn blend_slope_matches_differences() {
        let eps = 0.2;
        for k in 0..41 {
            let s = -0.12 + 0.006 * k as f64;
            let fd = (blend(s + 1e-6, eps) - blend(s - 1e-6, eps)) / 2e-6;
            assert_relative_eq!(blend_slope(s, eps), fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn identity_energy_is_phase_independent() {
        let p = MaterialParams::default();
        let i = Mat2::identity();
        let expected = p.mu_a * 2f64.powf(p.p / 2.0) + p.kappa;
        for sigma in [-1.0, -0.05, 0.0, 0.03, 1.0] {
            let w = stored_energy(sigma, &i, &p).unwrap();
            assert_relative_eq!(w.value, expected, epsilon = 1e-14);
            assert!(w.deriv.norm() < 1e-14);
        }
    }

    #[test]
    fn accreting_side_is_pure_accreting_density() {
        let p = two_phase();
        let f = Mat2::new(1.1, 0.2, -0.1, 0.9);
        let w = stored_energy(-p.eps, &f, &p).unwrap().value;
        let expected = v_accreting(&p, &f).unwrap().value + v_barrier(&p, &f).unwrap().value;
        assert_eq!(w, expected);
    }

    #[test]
    fn domain_error_outside_gl_plus() {
        let p = MaterialParams::default();
        let f = Mat2::new(1.0, 0.0, 0.0, -1.0);
        assert!(matches!(stored_energy(0.0, &f, &p), Err(Error::Domain { .. })));
        assert!(viscous_stress(0.0, &Mat2::zeros(), &f, &p).is_err());
    }

    #[test]
    fn zero_rate_gives_no_dissipation() {
        let p = two_phase();
        let f = Mat2::new(1.1, 0.2, -0.1, 0.9);
        let e = viscous_eval(0.01, &f, &Mat2::zeros(), &p).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.deriv, Mat2::zeros());
    }

    #[test]
    fn viscous_power_is_twice_dissipation() {
        let p = two_phase();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f = random_f(&mut rng, 0.3);
            let fd = Mat2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let s = rng.gen_range(-0.2..0.2);
            let e = viscous_eval(s, &f, &fd, &p).unwrap();
            assert_relative_eq!(ddot(&e.deriv, &fd), 2.0 * e.value, max_relative = 1e-12);
        }
    }

    #[test]
    fn viscous_stress_is_linear_in_rate() {
        let p = two_phase();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let f = random_f(&mut rng, 0.3);
            let f1 = Mat2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let f2 = Mat2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let s = rng.gen_range(-0.2..0.2);
            let lhs = viscous_stress(s, &f, &(f1 * a + f2 * b), &p).unwrap();
            let rhs = viscous_stress(s, &f, &f1, &p).unwrap() * a
                + viscous_stress(s, &f, &f2, &p).unwrap() * b;
            assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn dissipation_lower_bound() {
        let p = two_phase();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c_d = p.eta_a.min(p.eta_r) / 4.0;
        for _ in 0..200 {
            let f = random_f(&mut rng, 0.2);
            let fd = Mat2::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let s = rng.gen_range(-0.3..0.3);
            let c_dot = cauchy_green_rate(&f, &fd);
            let r = dissipation(s, &f, &fd, &p).unwrap();
            assert!(r >= c_d * c_dot.norm_squared() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn hyper_energy_at_zero() {
        let p = MaterialParams::default();
        let (h, dh) = hyper_energy(&Tensor3::ZERO, &p);
        assert_eq!(h, 0.0);
        assert_eq!(dh, Tensor3::ZERO);
    }

    #[test]
    fn hyper_energy_uniform_monotonicity() {
        let p = MaterialParams {
            h_coef: 0.7,
            ..MaterialParams::default()
        };
        let c_h = p.h_coef * 2f64.powf(2.0 - p.p);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..500 {
            let g = Tensor3::from_fn(|_, _, _| rng.gen_range(-2.0..2.0));
            let gh = Tensor3::from_fn(|_, _, _| rng.gen_range(-2.0..2.0));
            let lhs = (hyper_energy(&g, &p).1 - hyper_energy(&gh, &p).1).contract(&(g - gh));
            assert!(lhs >= c_h * (g - gh).norm().powf(p.p) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn frame_indifference() {
        let p = two_phase();
        let i = Mat2::identity();
        let (a, b) = frame_check(0.0, &i, &i, &p).unwrap();
        assert_eq!(a, b);
        let quarter = Mat2::new(0.0, -1.0, 1.0, 0.0);
        let (a, b) = frame_check(0.0, &i, &quarter, &p).unwrap();
        assert_eq!(a, b);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let f = random_f(&mut rng, 0.2);
            let q = crate::tensor::rotation(rng.gen_range(0.0..std::f64::consts::TAU));
            let s = rng.gen_range(-0.2..0.2);
            let (a, b) = frame_check(s, &f, &q, &p).unwrap();
            worst = worst.max((a - b).abs() / b.abs());
            let g = Tensor3::from_fn(|_, _, _| rng.gen_range(-1.0..1.0));
            let (a, b) = frame_check_hyper(&g, &q, &p);
            worst = worst.max((a - b).abs() / b.abs());
        }
        assert!(worst <= 1e-12, "worst relative gap {worst}");
    }

    #[test]
    fn coercivity_and_growth_bounds() {
        let p = two_phase();
        let c = p.derived_constants();
        assert!(c.c_w > 0.0 && c.c_h > 0.0 && c.c_d > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let scale = rng.gen_range(0.1..4.0);
            let f = random_f(&mut rng, 0.05) * scale;
            let np = f.norm().powf(p.p);
            let va = v_accreting(&p, &f).unwrap().value;
            let vr = v_receding(&p, &f).unwrap().value;
            let vj = v_barrier(&p, &f).unwrap().value;
            assert!(va >= 0.0 && vr >= 0.0 && vj >= 0.0);
            assert!(va >= c.c_w * np - 1.0 / c.c_w);
            assert!(vr >= c.c_w * np - 1.0 / c.c_w);
            assert!(va - vr <= (1.0 + np) / c.c_w);
            assert!(vj >= c.c_w / f.determinant().powf(p.q));
            let s = rng.gen_range(-0.3..0.3);
            let w = stored_energy(s, &f, &p).unwrap().value;
            assert!(w >= c.c_w * np - 1.0 / c.c_w);
        }
    }

    #[test]
    fn growth_rate_bounds_and_midpoint() {
        let p = MaterialParams::default();
        let mid = p.gamma_min + 0.5 * (p.gamma_max - p.gamma_min);
        assert_relative_eq!(growth_rate(&Vec2::zeros(), &Mat2::identity(), &p), mid);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..1000 {
            let f = random_f(&mut rng, 0.05) * rng.gen_range(0.1..5.0);
            let g = growth_rate(&Vec2::new(rng.gen(), rng.gen()), &f, &p);
            assert!(g >= p.gamma_min && g <= p.gamma_max);
        }
    }

    #[test]
    fn body_force_models() {
        let mut p = two_phase();
        let x = Vec2::new(0.3, 0.4);
        let w = p.eps.max(p.force.eps_f);
        let ga = Vec2::new(p.force.g[0], p.force.g[1]) * p.force.rho_a;
        assert_eq!(body_force(-w / 2.0, &x, &p), ga);
        assert_eq!(body_force(-3.0, &x, &p), ga);

        p.force.rho_r = p.force.rho_a;
        assert_eq!(body_force(-3.0, &x, &p), body_force(2.0, &x, &p));
        assert_eq!(body_force_dsigma(0.0, &x, &p), Vec2::zeros());
    }

    #[test]
    fn body_force_lipschitz_in_sharp_case() {
        let p = two_phase().with_eps(0.0);
        let x = Vec2::zeros();
        let w = p.eps.max(p.force.eps_f);
        let g = Vec2::new(p.force.g[0], p.force.g[1]).norm();
        let lip = (p.force.rho_r - p.force.rho_a).abs() * g * 2.0 / w;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..1000 {
            let s1 = rng.gen_range(-0.1..0.1);
            let s2 = rng.gen_range(-0.1..0.1);
            let gap = (body_force(s1, &x, &p) - body_force(s2, &x, &p)).norm();
            assert!(gap <= lip * (s1 - s2).abs() * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn validation_rejects_bad_exponents() {
        let mut p = MaterialParams::default();
        p.q = 4.0;
        assert!(p.validate().is_err());
        p.q = 5.0;
        p.gamma_min = 0.4;
        assert!(p.validate().is_err());
        assert!(MaterialParams::default().validate().is_ok());
    }
}
