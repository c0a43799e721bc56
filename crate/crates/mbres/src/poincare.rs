//! The one-period map, numerically and through the second-order successive
//! approximations, and finite-difference differentials of it.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::System;
use crate::error::{Error, Result};
use crate::kernels::{constants_ab, homogeneous_propagator, KernelConstants, TWO_PI};
use crate::ode::OdeSettings;
use crate::params::{inversion_from_z, Branch, Couplings, FullState, ReducedState};
use crate::sum::tree_sum_by;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Image point (a, ȧ, z₁ … z_N) after one period.
pub type MapOutput = ReducedState;

/// ν = ν₁₁ + iν₁₂ + ν₂.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NuValue {
    pub nu: Complex64,
    pub nu11: f64,
    pub nu12: f64,
    /// Molecular part. Complex: J₂ and the z-term have imaginary parts.
    pub nu2: Complex64,
}

/// Kernel constants for the analytic map at one κ, computed once.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticMap {
    pub kappa: f64,
    pub k: KernelConstants,
    pub prop: [[f64; 2]; 2],
}

impl AnalyticMap {
    pub fn new(kappa: f64) -> Result<Self> {
        Ok(Self { kappa, k: constants_ab(kappa)?, prop: homogeneous_propagator(TWO_PI, kappa)? })
    }

    pub fn nu(&self, a0: f64, b0: f64, c: &Couplings, z0: &[Complex64]) -> Result<NuValue> {
        check_len(c, z0.len())?;
        let free = a0 * self.k.nu_a + b0 * self.k.nu_b;
        let (j1, j1c, j2) = (self.k.j1, self.k.j1_conj, self.k.j2);
        let terms = z0
            .iter()
            .enumerate()
            .map(|(n, z)| {
                let inv = inversion_from_z(*z, Branch::Upper)?;
                // (1/2π)∫ Im{z I₁′}e^{−iτ} = (z J₁ − z̄ J̄₁)/(2i)
                Ok(c.alpha[n] * ((z * j1 - z.conj() * j1c) / (2.0 * I) + inv * c.gamma[n] * j2))
            })
            .collect::<Result<Vec<Complex64>>>()?;
        let nu2 = Complex64::new(
            tree_sum_by(terms.len(), |n| terms[n].re),
            tree_sum_by(terms.len(), |n| terms[n].im),
        );
        Ok(NuValue { nu: free + nu2, nu11: free.re, nu12: free.im, nu2 })
    }

    pub fn apply(&self, a0: f64, b0: f64, z0: &[Complex64], c: &Couplings) -> Result<MapOutput> {
        let nu = self.nu(a0, b0, c, z0)?.nu;
        let k = &self.k;
        let inv: Vec<f64> = z0.iter().map(|z| inversion_from_z(*z, Branch::Upper)).collect::<Result<_>>()?;
        let n = z0.len();
        let sum = |f: &dyn Fn(usize) -> f64| tree_sum_by(n, f);
        let nub = nu.conj();
        let lin_a = sum(&|m| c.alpha[m] * (z0[m] * k.a1).im);
        let lin_b = sum(&|m| c.alpha[m] * (z0[m] * k.b1).im);
        let sync = sum(&|m| c.alpha[m] * c.beta[m] * inv[m]);
        let pump = sum(&|m| c.alpha[m] * c.gamma[m] * inv[m]);
        let p = &self.prop;
        let a = p[0][0] * a0 + p[0][1] * b0 + lin_a + sync * (nub * k.a2).re + 0.5 * pump * k.a3;
        let b = p[1][0] * a0 + p[1][1] * b0 + lin_b + sync * (nub * k.b2).re + 0.5 * pump * k.b3;
        let z = (0..n)
            .map(|m| {
                let w = c.beta[m] * nu + c.gamma[m] / 2.0;
                z0[m] + TWO_PI * I * w.conj() * inv[m]
            })
            .collect();
        Ok(ReducedState { a, b, z })
    }
}

fn check_len(c: &Couplings, n: usize) -> Result<()> {
    if c.len() != n {
        return Err(Error::Domain(format!("{n} molecule states for {} couplings", c.len())));
    }
    Ok(())
}

pub fn compute_nu(a0: f64, b0: f64, c: &Couplings, kappa: f64, z0: &[Complex64]) -> Result<NuValue> {
    AnalyticMap::new(kappa)?.nu(a0, b0, c, z0)
}

/// Second-order analytic map on the upper hemisphere.
pub fn poincare_analytic(a0: f64, b0: f64, z0: &[Complex64], c: &Couplings, kappa: f64) -> Result<MapOutput> {
    ReducedState { a: a0, b: b0, z: z0.to_vec() }.check_chart()?;
    AnalyticMap::new(kappa)?.apply(a0, b0, z0, c)
}

/// Integrates the full system over one period and projects.
pub fn poincare_numeric(s0: &FullState, c: &Couplings, kappa: f64, settings: &OdeSettings) -> Result<MapOutput> {
    let sys = System::new(c, kappa)?;
    let (s1, _) = sys.evolve_full(s0, 0.0, TWO_PI, settings)?;
    let out = s1.project();
    if !(out.a.is_finite() && out.b.is_finite() && out.z.iter().all(|z| z.norm().is_finite())) {
        return Err(Error::Numeric("numeric map produced non-finite values".into()));
    }
    Ok(out)
}

/// Numeric map in flat reduced coordinates (a, b, Re z₁, Im z₁, …), lifting
/// through the upper hemisphere.
#[derive(Debug, Clone)]
pub struct NumericMap<'a> {
    pub couplings: &'a Couplings,
    pub kappa: f64,
    pub settings: OdeSettings,
}

impl NumericMap<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s0 = ReducedState::from_coords(x)?.lift(Branch::Upper)?;
        Ok(poincare_numeric(&s0, self.couplings, self.kappa, &self.settings)?.to_coords())
    }
}

/// Fixed-step settings for differentiating the numeric map.
pub fn fd_settings() -> OdeSettings {
    OdeSettings::fixed(1200)
}

pub const FD_STEP: f64 = 1e-5;

/// Central-difference Jacobian, one column per coordinate, columns in
/// parallel. With `richardson` the h and h/2 estimates are combined to
/// cancel the h² term.
pub fn jacobian_fd<F>(map: F, base: &[f64], h: f64, richardson: bool) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Domain(format!("finite-difference step h = {h} outside [1e-7, 1e-3]")));
    }
    let m = base.len();
    let central = |j: usize, h: f64| -> Result<Vec<f64>> {
        let mut xp = base.to_vec();
        let mut xm = base.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let fp = map(&xp)?;
        let fm = map(&xm)?;
        if fp.len() != m || fm.len() != m {
            return Err(Error::Domain("map changes the dimension".into()));
        }
        Ok(fp.iter().zip(&fm).map(|(p, q)| (p - q) / (2.0 * h)).collect())
    };
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let d1 = central(j, h)?;
            if !richardson {
                return Ok(d1);
            }
            let d2 = central(j, h / 2.0)?;
            Ok(d1.iter().zip(&d2).map(|(a, b)| (4.0 * b - a) / 3.0).collect())
        })
        .collect::<Result<_>>()?;
    if cols.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite finite-difference column".into()));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| cols[j][i]))
}
