//! Fundamental solution of the damped oscillator and the one-period integral
//! constants built from it.
//!
//! Every constant is evaluated in closed form through divided differences of
//! the exponential, which are exact for any κ in the oscillatory regime. The
//! first-order truncations in κ are available separately through
//! [`first_order_constants`]; they carry O(κ²) errors with sizeable
//! prefactors and are not used by the map or the block differential.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quad;

pub const TWO_PI: f64 = 2.0 * PI;
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Comparison constant for the O(·) convention: `r = O(e)` means `|r| <= 10 e`.
pub const O_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Form {
    Exact,
    Leading,
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::Domain(format!(
            "kappa = {kappa} lies outside the oscillatory regime [0, 1)"
        )));
    }
    Ok(())
}

/// Roots λ± = −κ ± iω of λ² + 2κλ + 1 = 0.
pub fn lambdas(kappa: f64) -> Result<(Complex64, Complex64)> {
    check_kappa(kappa)?;
    let omega = (1.0 - kappa * kappa).sqrt();
    Ok((Complex64::new(-kappa, omega), Complex64::new(-kappa, -omega)))
}

/// Signed weights ±1/(λ₊−λ₋) attached to e^{λ±τ} in E.
fn weights(kappa: f64) -> Result<[(Complex64, Complex64); 2]> {
    let (lp, lm) = lambdas(kappa)?;
    let d = lp - lm;
    Ok([(lp, 1.0 / d), (lm, -1.0 / d)])
}

/// Retarded fundamental solution of Ë + 2κĖ + E = δ.
pub fn fundamental_solution(tau: f64, kappa: f64, form: Form) -> Result<f64> {
    check_kappa(kappa)?;
    if tau < 0.0 {
        return Ok(0.0);
    }
    Ok(match form {
        Form::Exact => derivatives(tau, kappa)?.0,
        Form::Leading => (-kappa * tau).exp() * tau.sin(),
    })
}

/// (E, Ė, Ë) at τ ≥ 0, all from the λ±-representation.
pub fn derivatives(tau: f64, kappa: f64) -> Result<(f64, f64, f64)> {
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for (l, w) in weights(kappa)? {
        let e = w * (l * tau).exp();
        out[0] += e;
        out[1] += e * l;
        out[2] += e * l * l;
    }
    Ok((out[0].re, out[1].re, out[2].re))
}

pub fn residual_of_ode(tau: f64, kappa: f64) -> Result<f64> {
    let (e, ed, edd) = derivatives(tau, kappa)?;
    Ok(edd + 2.0 * kappa * ed + e)
}

/// Homogeneous propagator of the Maxwell oscillator over time τ:
/// (a, ȧ)(τ) = P(τ)·(a, ȧ)(0).
pub fn homogeneous_propagator(tau: f64, kappa: f64) -> Result<[[f64; 2]; 2]> {
    let (e, ed, edd) = derivatives(tau, kappa)?;
    Ok([[ed + 2.0 * kappa * e, e], [edd + 2.0 * kappa * ed, ed]])
}

/// Divided difference exp[z₀, …, zₙ], read off the top-right entry of the
/// exponential of the bidiagonal matrix with diagonal z and unit
/// superdiagonal. Coincident nodes are handled without special cases.
pub fn exp_divdiff(z: &[Complex64]) -> Complex64 {
    let n = z.len();
    assert!(n >= 1, "need at least one node");
    let mut a = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        a[i * n + i] = z[i];
        if i + 1 < n {
            a[i * n + i + 1] = Complex64::new(1.0, 0.0);
        }
    }
    let norm = z.iter().map(|v| v.norm()).fold(0.0, f64::max) + 1.0;
    let squarings = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let scale = 0.5f64.powi(squarings);
    for v in a.iter_mut() {
        *v *= scale;
    }
    let matmul = |x: &[Complex64], y: &[Complex64]| {
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in i..n {
                let xik = x[i * n + k];
                if xik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in k..n {
                    out[i * n + j] += xik * y[k * n + j];
                }
            }
        }
        out
    };
    let mut result = vec![Complex64::new(0.0, 0.0); n * n];
    let mut term = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        result[i * n + i] = Complex64::new(1.0, 0.0);
        term[i * n + i] = Complex64::new(1.0, 0.0);
    }
    for k in 1..=30 {
        term = matmul(&term, &a);
        let inv = 1.0 / k as f64;
        for v in term.iter_mut() {
            *v *= inv;
        }
        let mut small = true;
        for (r, t) in result.iter_mut().zip(&term) {
            *r += *t;
            if t.norm() > 1e-18 * r.norm().max(1e-300) {
                small = false;
            }
        }
        if small && k > 4 {
            break;
        }
    }
    for _ in 0..squarings {
        result = matmul(&result, &result);
    }
    result[n - 1]
}

fn dd(args: &[Complex64]) -> Complex64 {
    exp_divdiff(args)
}

/// I₁(τ) = ∫₀^τ e^{−it}E(τ−t)dt.
pub fn integral_i1(tau: f64, kappa: f64) -> Result<Complex64> {
    let mut s = Complex64::new(0.0, 0.0);
    for (l, w) in weights(kappa)? {
        s += w * tau * dd(&[-I * tau, l * tau]);
    }
    Ok(s)
}

/// I₂(τ) = ∫₀^τ (t/2)cos t E(τ−t)dt.
pub fn integral_i2(tau: f64, kappa: f64) -> Result<Complex64> {
    let mut s = Complex64::new(0.0, 0.0);
    for (l, w) in weights(kappa)? {
        for a in [I, -I] {
            s += w * tau * tau * dd(&[a * tau, a * tau, l * tau]);
        }
    }
    Ok(s * 0.25)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    One,
    Two,
}

pub fn integral_i(tau: f64, kappa: f64, which: Which) -> Result<Complex64> {
    if !(0.0..=TWO_PI + 1e-12).contains(&tau) {
        return Err(Error::Domain(format!("tau = {tau} outside [0, 2π]")));
    }
    match which {
        Which::One => integral_i1(tau, kappa),
        Which::Two => integral_i2(tau, kappa),
    }
}

/// J₁ = (1/2π)∫₀^{2π} I₁′(τ)e^{−iτ}dτ and J₂ likewise with I₂.
pub fn constants_j(kappa: f64) -> Result<(Complex64, Complex64)> {
    let t = TWO_PI;
    let mut j1 = Complex64::new(0.0, 0.0);
    let mut j2 = Complex64::new(0.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    for (l, w) in weights(kappa)? {
        let wl = w * l;
        j1 += wl * t * t * dd(&[-2.0 * I * t, (l - I) * t, zero]);
        for a in [I, -I] {
            let p = (a - I) * t;
            j2 += wl * t * t * t * dd(&[p, p, (l - I) * t, zero]);
        }
    }
    Ok((j1 / t, j2 / (4.0 * t)))
}

/// (∂ν/∂a⁰, ∂ν/∂ȧ⁰) for the free part of ν = (1/2π)∫ ȧ⁽¹⁾(τ)e^{−iτ}dτ,
/// using ȧ₀ = −a⁰E + ȧ⁰Ė.
pub fn nu_coefficients(kappa: f64) -> Result<(Complex64, Complex64)> {
    let t = TWO_PI;
    let zero = Complex64::new(0.0, 0.0);
    let mut na = zero;
    let mut nb = zero;
    for (l, w) in weights(kappa)? {
        let d = dd(&[(l - I) * t, zero]);
        na -= w * d;
        nb += w * l * d;
    }
    Ok((na, nb))
}

/// (1/2π)∫₀^{2π} conj(I₁′(τ)) e^{−iτ}dτ, the partner of J₁ in the z-part of ν₂.
pub fn constant_j1_conj(kappa: f64) -> Result<Complex64> {
    let t = TWO_PI;
    let zero = Complex64::new(0.0, 0.0);
    let mut s = zero;
    for (l, w) in weights(kappa)? {
        let x = (l - I) * t;
        s += w * (dd(&[x, zero]) + I * t * dd(&[x, zero, zero]));
    }
    Ok(s)
}

/// Period integrals A₁..A₃, B₁..B₃ and their real/imaginary components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelConstants {
    pub kappa: f64,
    pub j1: Complex64,
    pub j2: Complex64,
    pub a1: Complex64,
    pub a2: Complex64,
    pub a3: f64,
    pub b1: Complex64,
    pub b2: Complex64,
    pub b3: f64,
    /// The alternative reading B₃ = −Im B₂, kept for comparison; the
    /// quadrature oracle rejects it.
    pub b3_alt: f64,
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
    pub b22: f64,
    pub nu_a: Complex64,
    pub nu_b: Complex64,
    pub j1_conj: Complex64,
}

pub fn constants_ab(kappa: f64) -> Result<KernelConstants> {
    let t = TWO_PI;
    let ws = weights(kappa)?;
    let mut a1 = Complex64::new(0.0, 0.0);
    let mut a2 = a1;
    let mut a3 = a1;
    let mut b1 = a1;
    let mut b2 = a1;
    let mut b3 = a1;
    for (l, w) in ws {
        let k1 = t * dd(&[-I * t, l * t]);
        let k2 = t * t * dd(&[-I * t, -I * t, l * t]);
        let k3 = 0.5 * t * t * (dd(&[I * t, I * t, l * t]) + dd(&[-I * t, -I * t, l * t]));
        a1 += w * k1;
        a2 += w * k2;
        a3 += w * k3;
        b1 += w * l * k1;
        b2 += w * l * k2;
        b3 += w * l * k3;
    }
    let (j1, j2) = constants_j(kappa)?;
    let (nu_a, nu_b) = nu_coefficients(kappa)?;
    Ok(KernelConstants {
        kappa,
        j1,
        j2,
        a1,
        a2,
        a3: a3.re,
        b1,
        b2,
        b3: b3.re,
        b3_alt: -b2.im,
        a11: a1.re,
        a12: a1.im,
        a21: a2.re,
        a22: a2.im,
        b11: b1.re,
        b12: b1.im,
        b21: b2.re,
        b22: b2.im,
        nu_a,
        nu_b,
        j1_conj: constant_j1_conj(kappa)?,
    })
}

/// The first-order-in-κ expressions for A₁, A₂ and the B's derived from them
/// through B₁ = −iA₁, B₂ = A₁ − iA₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstOrder {
    pub a1: Complex64,
    pub a2: Complex64,
    pub a3: f64,
    pub b1: Complex64,
    pub b2: Complex64,
    pub b3: f64,
    pub j2: f64,
}

pub fn first_order_constants(kappa: f64) -> FirstOrder {
    let sigma1 = 2.0 * kappa;
    let a1 = Complex64::new(kappa * PI / 2.0, PI - kappa * PI * PI);
    let a2 = Complex64::new(PI / 2.0, PI * PI - sigma1 * (PI.powi(3) / 3.0 + PI / 4.0));
    let b1 = -I * a1;
    let b2 = a1 - I * a2;
    FirstOrder { a1, a2, a3: a2.re, b1, b2, b3: b2.re, j2: PI * PI / 12.0 }
}

/// Quadrature oracles straight from the integral definitions, with E and Ė
/// from the λ±-form.
pub mod oracle {
    use super::*;

    fn e(s: f64, kappa: f64) -> f64 {
        derivatives(s, kappa).map(|d| d.0).unwrap_or(f64::NAN)
    }
    fn ed(s: f64, kappa: f64) -> f64 {
        derivatives(s, kappa).map(|d| d.1).unwrap_or(f64::NAN)
    }
    fn cis(x: f64) -> Complex64 {
        Complex64::new(x.cos(), x.sin())
    }

    pub fn a1(kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| cis(-t) * e(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn a2(kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| t * cis(-t) * e(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn a3(kappa: f64, tol: f64) -> Result<f64> {
        check_kappa(kappa)?;
        quad::integrate_real(|t| t * t.cos() * e(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn b1(kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| cis(-t) * ed(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn b2(kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| t * cis(-t) * ed(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn b3(kappa: f64, tol: f64) -> Result<f64> {
        check_kappa(kappa)?;
        quad::integrate_real(|t| t * t.cos() * ed(TWO_PI - t, kappa), 0.0, TWO_PI, tol)
    }
    pub fn i1(tau: f64, kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| cis(-t) * e(tau - t, kappa), 0.0, tau, tol)
    }
    pub fn i2(tau: f64, kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        quad::integrate(|t| Complex64::new(0.5 * t * t.cos() * e(tau - t, kappa), 0.0), 0.0, tau, tol)
    }

    pub fn nu(kappa: f64, tol: f64) -> Result<(Complex64, Complex64)> {
        check_kappa(kappa)?;
        let na = quad::integrate(|t| -e(t, kappa) * cis(-t), 0.0, TWO_PI, tol)? / TWO_PI;
        let nb = quad::integrate(|t| ed(t, kappa) * cis(-t), 0.0, TWO_PI, tol)? / TWO_PI;
        Ok((na, nb))
    }

    pub fn j1_conj(kappa: f64, tol: f64) -> Result<Complex64> {
        check_kappa(kappa)?;
        let di1 = |tau: f64| {
            quad::integrate(|t| cis(-t) * ed(tau - t, kappa), 0.0, tau, tol * 0.1)
                .unwrap_or(Complex64::new(f64::NAN, 0.0))
        };
        let r = quad::integrate(|tau| di1(tau).conj() * cis(-tau), 0.0, TWO_PI, tol)? / TWO_PI;
        if !r.norm().is_finite() {
            return Err(Error::Numeric("inner quadrature failed for J1 conjugate oracle".into()));
        }
        Ok(r)
    }

    /// J₁, J₂ by nested quadrature; the inner integral is the derivative of
    /// I₁ or I₂ taken under the integral sign (E(0) = 0 kills the boundary term).
    pub fn j(kappa: f64, tol: f64) -> Result<(Complex64, Complex64)> {
        check_kappa(kappa)?;
        let inner_tol = tol * 0.1;
        let di1 = |tau: f64| {
            quad::integrate(|t| cis(-t) * ed(tau - t, kappa), 0.0, tau, inner_tol)
                .unwrap_or(Complex64::new(f64::NAN, 0.0))
        };
        let di2 = |tau: f64| {
            quad::integrate(
                |t| Complex64::new(0.5 * t * t.cos() * ed(tau - t, kappa), 0.0),
                0.0,
                tau,
                inner_tol,
            )
            .unwrap_or(Complex64::new(f64::NAN, 0.0))
        };
        let j1 = quad::integrate(|tau| di1(tau) * cis(-tau), 0.0, TWO_PI, tol)? / TWO_PI;
        let j2 = quad::integrate(|tau| di2(tau) * cis(-tau), 0.0, TWO_PI, tol)? / TWO_PI;
        if !(j1.norm().is_finite() && j2.norm().is_finite()) {
            return Err(Error::Numeric("inner quadrature failed for J oracle".into()));
        }
        Ok((j1, j2))
    }
}

/// One line of the closed-form-versus-oracle table.
#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub name: String,
    pub closed_form: Complex64,
    pub oracle: Complex64,
    pub error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Compares every closed-form constant with its quadrature definition at the
/// given κ. The bound is `factor·κ² + 1e-10`.
pub fn verify_constants(kappa: f64, factor: f64) -> Result<Vec<Comparison>> {
    let k = constants_ab(kappa)?;
    let tol = quad::DEFAULT_TOL;
    let bound = factor * kappa * kappa + 1e-10;
    let (oj1, oj2) = oracle::j(kappa, tol)?;
    let (ona, onb) = oracle::nu(kappa, tol)?;
    let rows: Vec<(&str, Complex64, Complex64)> = vec![
        ("A1", k.a1, oracle::a1(kappa, tol)?),
        ("A2", k.a2, oracle::a2(kappa, tol)?),
        ("A3", k.a3.into(), oracle::a3(kappa, tol)?.into()),
        ("B1", k.b1, oracle::b1(kappa, tol)?),
        ("B2", k.b2, oracle::b2(kappa, tol)?),
        ("B3", k.b3.into(), oracle::b3(kappa, tol)?.into()),
        ("J1", k.j1, oj1),
        ("J2", k.j2, oj2),
        ("I1(2pi)", integral_i1(TWO_PI, kappa)?, oracle::i1(TWO_PI, kappa, tol)?),
        ("I2(2pi)", integral_i2(TWO_PI, kappa)?, oracle::i2(TWO_PI, kappa, tol)?),
        ("nu_a", k.nu_a, ona),
        ("nu_b", k.nu_b, onb),
        ("J1c", k.j1_conj, oracle::j1_conj(kappa, tol)?),
    ];
    Ok(rows
        .into_iter()
        .map(|(name, c, o)| {
            let error = (c - o).norm();
            Comparison { name: name.to_string(), closed_form: c, oracle: o, error, bound, pass: error <= bound }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn divdiff_of_two_nodes() {
        let a = Complex64::new(0.3, -1.2);
        let b = Complex64::new(-0.7, 2.0);
        let want = (a.exp() - b.exp()) / (a - b);
        assert!(close(exp_divdiff(&[a, b]), want, 1e-14));
    }

    #[test]
    fn divdiff_confluent_is_derivative_over_factorial() {
        let z = Complex64::new(1.5, -4.0);
        assert!(close(exp_divdiff(&[z, z, z]), z.exp() / 2.0, 1e-13));
        assert!(close(exp_divdiff(&[z]), z.exp(), 1e-13));
    }

    #[test]
    fn divdiff_large_arguments() {
        let a = Complex64::new(-0.01, 6.3);
        let b = Complex64::new(0.0, -6.25);
        let c = Complex64::new(0.2, 12.0);
        let ab = (a.exp() - b.exp()) / (a - b);
        let bc = (b.exp() - c.exp()) / (b - c);
        let want = (ab - bc) / (a - c);
        assert!(close(exp_divdiff(&[a, b, c]), want, 1e-13));
    }

    #[test]
    fn negative_time_is_zero() {
        assert_eq!(fundamental_solution(-0.5, 1e-3, Form::Exact).unwrap(), 0.0);
        assert_eq!(fundamental_solution(-0.5, 1e-3, Form::Leading).unwrap(), 0.0);
    }

    #[test]
    fn quarter_period_peak() {
        let e = fundamental_solution(PI / 2.0, 0.0, Form::Exact).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_and_leading_agree_to_second_order() {
        let k = 1e-3;
        let a = fundamental_solution(TWO_PI, k, Form::Exact).unwrap();
        let b = fundamental_solution(TWO_PI, k, Form::Leading).unwrap();
        assert!((a - b).abs() <= O_FACTOR * k * k);
    }

    #[test]
    fn residuals_vanish() {
        for (t, k) in [(1.0, 1e-7), (3.0, 1e-3), (6.0, 0.0)] {
            assert!(residual_of_ode(t, k).unwrap().abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_overdamped() {
        assert!(fundamental_solution(1.0, 1.0, Form::Exact).is_err());
        assert!(fundamental_solution(1.0, -1e-3, Form::Exact).is_err());
    }

    #[test]
    fn i_integrals_at_zero_and_undamped() {
        assert_eq!(integral_i(0.0, 1e-3, Which::One).unwrap().norm(), 0.0);
        assert_eq!(integral_i(0.0, 1e-3, Which::Two).unwrap().norm(), 0.0);
        assert!(close(integral_i1(TWO_PI, 0.0).unwrap(), Complex64::new(0.0, PI), 1e-13));
        assert!(close(integral_i2(TWO_PI, 0.0).unwrap(), Complex64::new(PI / 4.0, 0.0), 1e-13));
    }

    #[test]
    fn undamped_constants() {
        let k = constants_ab(0.0).unwrap();
        assert!(close(k.a1, Complex64::new(0.0, PI), 1e-13));
        assert!(close(k.a2, Complex64::new(PI / 2.0, PI * PI), 1e-12));
        assert!((k.a3 - PI / 2.0).abs() < 1e-12);
        assert!(close(k.b1, Complex64::new(PI, 0.0), 1e-13));
        assert!(k.j1.norm() < 1e-13);
        assert!(close(k.j2, Complex64::new(PI * PI / 12.0, 0.0), 1e-13));
    }

    #[test]
    fn nu_coefficients_undamped_and_first_order() {
        let (na, nb) = nu_coefficients(0.0).unwrap();
        assert!(close(na, Complex64::new(0.0, 0.5), 1e-14));
        assert!(close(nb, Complex64::new(0.5, 0.0), 1e-14));
        let jc = constant_j1_conj(0.0).unwrap();
        assert!(close(jc, Complex64::new(PI / 2.0, -0.25), 1e-13));
        let kappa = 1e-4;
        let (na, nb) = nu_coefficients(kappa).unwrap();
        let want_a = Complex64::new(-kappa / 4.0, 0.5 * (1.0 - kappa * PI));
        let want_b = Complex64::new(0.5 * (1.0 - kappa * PI), kappa / 4.0);
        assert!(close(na, want_a, 20.0 * kappa * kappa));
        assert!(close(nb, want_b, 20.0 * kappa * kappa));
    }

    #[test]
    fn rejected_nu_signs_are_far_from_oracle() {
        // +κ/4 on ∂ν₁₁/∂a⁰ and −κ/4 on ∂ν₁₂/∂ȧ⁰ miss the quadrature by κ/2.
        let kappa = 1e-3;
        let (na, nb) = oracle::nu(kappa, 1e-13).unwrap();
        let alt_a = Complex64::new(kappa / 4.0, 0.5 * (1.0 - kappa * PI));
        let alt_b = Complex64::new(0.5 * (1.0 - kappa * PI), -kappa / 4.0);
        assert!((na - alt_a).norm() > 0.4 * kappa);
        assert!((nb - alt_b).norm() > 0.4 * kappa);
    }

    #[test]
    fn structural_identities() {
        for kappa in [0.0, 1e-5, 1e-3, 1e-2] {
            let k = constants_ab(kappa).unwrap();
            assert!((k.a3 - k.a2.re).abs() < 1e-12);
            assert!(close(k.b2, k.a1 - I * k.a2, 1e-12));
            assert!((k.b3 - k.b2.re).abs() < 1e-12);
            // B₁ = −iA₁ up to the boundary term E(2π), which is O(κ²).
            let e2pi = fundamental_solution(TWO_PI, kappa, Form::Exact).unwrap();
            assert!(close(k.b1, -I * k.a1 + e2pi, 1e-12));
        }
    }

    // Oracle values: adaptive quadrature of the integral definitions, tol 1e-12.
    #[test]
    fn constants_match_oracle_at_moderate_damping() {
        for kappa in [1e-5, 1e-3] {
            for row in verify_constants(kappa, O_FACTOR).unwrap() {
                assert!(row.pass, "{} at kappa={kappa}: err {:.3e} > {:.3e}", row.name, row.error, row.bound);
            }
        }
    }

    #[test]
    fn j_constants_at_working_damping() {
        let (j1, j2) = constants_j(1e-7).unwrap();
        assert!(j1.norm() <= 1e-6);
        assert!((j2 - PI * PI / 12.0).norm() <= 1e-6);
    }

    #[test]
    fn first_order_forms_carry_second_order_error() {
        let kappa = 1e-3;
        let fo = first_order_constants(kappa);
        let k = constants_ab(kappa).unwrap();
        for (a, b) in [(fo.a1, k.a1), (fo.a2, k.a2), (fo.b1, k.b1), (fo.b2, k.b2)] {
            assert!((a - b).norm() < 60.0 * kappa * kappa, "{a} vs {b}");
        }
    }

    #[test]
    fn rejected_b3_reading_is_far_from_oracle() {
        let k = constants_ab(1e-3).unwrap();
        let o = oracle::b3(1e-3, 1e-12).unwrap();
        assert!((k.b3 - o).abs() < 1e-10);
        assert!((k.b3_alt - o).abs() > 1.0);
    }

    #[test]
    fn propagator_matches_derivative_relations() {
        let p = homogeneous_propagator(TWO_PI, 1e-3).unwrap();
        let det = p[0][0] * p[1][1] - p[0][1] * p[1][0];
        // Liouville: det = e^{−2κτ}.
        assert!((det - (-2e-3 * TWO_PI).exp()).abs() < 1e-13);
    }
}
