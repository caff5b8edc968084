//! Admissible damping coefficients and the pointwise nonlinearity.
//!
//! The equation under study couples a Schrodinger flow to the sublinear
//! absorption term a*g(u), where
//!
//! ```text
//! g(z) = |z|^(m-1) z,   0 < m < 1,   g(0) = 0.
//! ```
//!
//! Dissipation of every Lebesgue norm requires the coefficient a to lie in
//! the cone
//!
//! ```text
//! C(m) = { z : Im z > 0  and  2*sqrt(m)*Im z >= (1-m)*|Re z| },
//! ```
//!
//! with strict inequality demanded when Re a >= 0. Two classical facts about
//! this cone drive everything else in the crate:
//!
//! * the Liskevich-Perelmuter inequality: for any z1, z2 and
//!   w = (g(z1) - g(z2)) * conj(z1 - z2),
//!
//!   ```text
//!   2*sqrt(m) * |Im w| <= (1-m) * Re w,
//!   ```
//!
//!   which combined with cone membership makes u -> -i*a*g(u) monotone;
//!
//! * a rotation witness: for admissible a there is b = exp(-i*theta_b) with
//!   Re b > 0, Im b < 0 and 2*sqrt(m)*Im(a*b) > (1-m)*Re(a*b) >= 0, the
//!   algebraic pivot of the resolvent estimates.
//!
//! `lp_check` evaluates the first fact on concrete samples; `rotate`
//! constructs the second in closed form.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Validated pair (m, a): sublinearity exponent and admissible coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeParams {
    m: f64,
    a: Complex64,
}

impl ConeParams {
    /// Validates 0 < m < 1 and cone membership of a.
    pub fn new(m: f64, a: Complex64) -> Result<Self> {
        if !(m > 0.0 && m < 1.0) || !m.is_finite() {
            return Err(Error::domain(format!(
                "exponent m must lie in (0, 1), got {m}"
            )));
        }
        if !cone_contains(m, a) {
            return Err(Error::domain(format!(
                "coefficient a = {a} is not admissible for m = {m}: require Im a > 0 and \
                 2*sqrt(m)*Im a >= (1-m)*|Re a|, strictly when Re a >= 0"
            )));
        }
        Ok(ConeParams { m, a })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn a(&self) -> Complex64 {
        self.a
    }
}

/// Rotation witness for an admissible coefficient.
///
/// Invariants: |b| = 1, Re b > 0, Im b < 0, theta_b in (0, pi/2), and
/// 2*sqrt(m)*Im(a*b) > (1-m)*Re(a*b) >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub b: Complex64,
    pub theta_b: f64,
}

/// Membership in C(m), including the strict-inequality rule for Re a >= 0.
///
/// Invariant under positive rescaling of a.
pub fn cone_contains(m: f64, a: Complex64) -> bool {
    if !(a.im > 0.0) {
        return false;
    }
    let lhs = 2.0 * m.sqrt() * a.im;
    let rhs = (1.0 - m) * a.re.abs();
    if a.re >= 0.0 {
        lhs > rhs
    } else {
        lhs >= rhs
    }
}

/// Closed-form rotation witness.
///
/// With theta_a = arg a, the witness angle is
///   theta_b = theta_a - pi/2                 when Re a < 0 (then a*b = i|a|),
///   theta_b = (theta_a - phi_m) / 2          when Re a >= 0,
/// where phi_m = atan((1-m) / (2*sqrt(m))) is the cone's half-opening
/// complement. Strict membership puts theta_a in (phi_m, pi] and hence
/// theta_b in (0, pi/2).
pub fn rotate(m: f64, a: Complex64) -> Result<Rotation> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::domain(format!(
            "exponent m must lie in (0, 1), got {m}"
        )));
    }
    if !cone_contains(m, a) {
        return Err(Error::domain(format!(
            "rotation requires an admissible coefficient, got a = {a} for m = {m}"
        )));
    }
    let theta_a = a.im.atan2(a.re);
    let theta_b = if a.re < 0.0 {
        theta_a - std::f64::consts::FRAC_PI_2
    } else {
        let phi_m = ((1.0 - m) / (2.0 * m.sqrt())).atan();
        (theta_a - phi_m) / 2.0
    };
    let b = Complex64::from_polar(1.0, -theta_b);
    Ok(Rotation { b, theta_b })
}

/// The pointwise nonlinearity g(z) = |z|^(m-1) z with g(0) = 0.
pub fn g_apply(m: f64, z: Complex64) -> Complex64 {
    let r = z.norm();
    if r == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        z * r.powf(m - 1.0)
    }
}

/// One evaluation of the Liskevich-Perelmuter inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpCheck {
    /// 2*sqrt(m) * |Im w|
    pub lhs: f64,
    /// (1-m) * Re w
    pub rhs: f64,
    /// lhs <= rhs up to a 1e-12 relative rounding allowance.
    pub ok: bool,
}

/// Evaluates w = (g(z1) - g(z2)) * conj(z1 - z2) and the two sides of the
/// Liskevich-Perelmuter inequality. `ok` tolerates relative rounding noise
/// of 1e-12; the mathematical inequality itself is exact.
pub fn lp_check(m: f64, z1: Complex64, z2: Complex64) -> LpCheck {
    let w = (g_apply(m, z1) - g_apply(m, z2)) * (z1 - z2).conj();
    let lhs = 2.0 * m.sqrt() * w.im.abs();
    let rhs = (1.0 - m) * w.re;
    let slack = 1e-12 * lhs.abs().max(rhs.abs());
    LpCheck {
        lhs,
        rhs,
        ok: lhs <= rhs + slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn cone_membership_cases() {
        assert!(cone_contains(0.5, c(0.0, 1.0)));
        // boundary with Re a < 0 is admissible (non-strict side)
        let m = 0.25f64;
        let slope = (1.0 - m) / (2.0 * m.sqrt()); // = 0.75
        assert!(cone_contains(m, c(-1.0, slope)));
        // boundary with Re a > 0 is excluded (strict side)
        assert!(!cone_contains(m, c(1.0, slope)));
        // slightly above the boundary is admissible
        assert!(cone_contains(m, c(1.0, slope + 1e-9)));
        // no damping or wrong sign
        assert!(!cone_contains(0.5, c(1.0, 0.0)));
        assert!(!cone_contains(0.5, c(0.0, -1.0)));
        assert!(!cone_contains(0.5, c(0.0, 0.0)));
    }

    #[test]
    fn cone_scale_invariance() {
        let samples = [c(0.0, 1.0), c(-1.0, 1.0), c(0.3, 1.0), c(2.0, 0.1)];
        for &a in &samples {
            for &t in &[1e-6, 0.5, 3.0, 1e7] {
                assert_eq!(cone_contains(0.5, a), cone_contains(0.5, a * t), "a={a} t={t}");
            }
        }
    }

    #[test]
    fn cone_params_validation() {
        assert!(ConeParams::new(0.5, c(0.0, 1.0)).is_ok());
        assert!(ConeParams::new(0.0, c(0.0, 1.0)).is_err());
        assert!(ConeParams::new(1.0, c(0.0, 1.0)).is_err());
        assert!(ConeParams::new(0.5, c(1.0, 0.0)).is_err());
    }

    #[test]
    fn rotate_negative_real_part() {
        // a = -1 + i: theta_b = 3*pi/4 - pi/2 = pi/4 and a*b = i*sqrt(2).
        let rot = rotate(0.25, c(-1.0, 1.0)).unwrap();
        assert!((rot.theta_b - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        let ab = c(-1.0, 1.0) * rot.b;
        assert!(ab.re.abs() < 1e-15);
        assert!((ab.im - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rotate_imaginary_coefficient() {
        // m = 0.25, a = i: theta_b = (pi/2 - atan(0.75))/2 = 0.46364760900080611.
        let rot = rotate(0.25, c(0.0, 1.0)).unwrap();
        assert!((rot.theta_b - 0.463_647_609_000_806_1).abs() < 1e-15);
        let ab = c(0.0, 1.0) * rot.b;
        // frozen sides of the rotated inequality
        let lhs = 2.0 * 0.25f64.sqrt() * ab.im;
        let rhs = (1.0 - 0.25) * ab.re;
        assert!((lhs - 0.894_427_190_999_915_9).abs() < 1e-15);
        assert!((rhs - 0.335_410_196_624_968_46).abs() < 1e-15);
        assert!(lhs > rhs && rhs > 0.0);
    }

    #[test]
    fn rotate_invariants_hold() {
        let rot = rotate(0.5, c(0.3, 2.0)).unwrap();
        assert!((rot.b.norm() - 1.0).abs() < 1e-15);
        assert!(rot.b.re > 0.0 && rot.b.im < 0.0);
        assert!(rot.theta_b > 0.0 && rot.theta_b < std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn rotate_rejects_inadmissible() {
        assert!(rotate(0.5, c(1.0, 0.0)).is_err());
        assert!(rotate(1.5, c(0.0, 1.0)).is_err());
    }

    #[test]
    fn g_apply_values() {
        assert_eq!(g_apply(0.5, c(0.0, 0.0)), c(0.0, 0.0));
        // |4| = 4, 4^(m-1) = 0.5 at m = 0.5
        let g = g_apply(0.5, c(4.0, 0.0));
        assert!((g - c(2.0, 0.0)).norm() < 1e-15);
        // modulus is |z|^m, phase preserved
        let z = c(1.0, 2.0);
        let g = g_apply(0.7, z);
        assert!((g.norm() - z.norm().powf(0.7)).abs() < 1e-14);
        assert!((g / z).im.abs() < 1e-15);
    }

    #[test]
    fn lp_check_frozen_example() {
        // m = 0.5, z1 = 2, z2 = i:
        //   w = (sqrt(2) - i)(2 + i) = 2*sqrt(2)+1 + (sqrt(2)-2) i
        //   lhs = sqrt(2)*(2 - sqrt(2)) = 0.82842712474619029
        //   rhs = 0.5*(2*sqrt(2) + 1) = 1.9142135623730951
        let chk = lp_check(0.5, c(2.0, 0.0), c(0.0, 1.0));
        assert!((chk.lhs - 0.828_427_124_746_190_3).abs() < 1e-15);
        assert!((chk.rhs - 1.914_213_562_373_095).abs() < 1e-15);
        assert!(chk.ok);
    }

    #[test]
    fn lp_check_degenerate_pairs() {
        let chk = lp_check(0.5, c(0.7, -0.3), c(0.7, -0.3));
        assert_eq!(chk.lhs, 0.0);
        assert_eq!(chk.rhs, 0.0);
        assert!(chk.ok);
        let chk = lp_check(0.5, c(1.0, 0.0), c(0.0, 0.0));
        assert!(chk.ok);
    }
}
