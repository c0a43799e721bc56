//! The Maxwell–Bloch system over one pumping period: full amplitudes, the
//! gauge-reduced chart, averaged propagators and the averaging-error harness.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::TWO_PI;
use crate::ode::{integrate, OdeSettings, OdeStats};
use crate::params::{Couplings, FullState, ReducedState, CHART_GUARD};
use crate::quad;
use crate::sum::tree_sum_by;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Molecule count from which the per-molecule update runs in parallel.
pub const PAR_THRESHOLD: usize = 4096;

fn cis(x: f64) -> Complex64 {
    Complex64::new(x.cos(), x.sin())
}

/// Coupled field and molecules: couplings plus damping.
#[derive(Debug, Clone, Copy)]
pub struct System<'a> {
    pub couplings: &'a Couplings,
    pub kappa: f64,
}

/// Derivative of a full state, same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FullDerivative {
    pub a: f64,
    pub b: f64,
    pub c: Vec<[Complex64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDerivative {
    pub a: f64,
    pub b: f64,
    pub z: Vec<Complex64>,
}

impl<'a> System<'a> {
    pub fn new(couplings: &'a Couplings, kappa: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&kappa) {
            return Err(Error::Domain(format!("kappa = {kappa} outside [0, 1)")));
        }
        Ok(Self { couplings, kappa })
    }

    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    /// ωₙ(τ) = (βₙb + γₙcos τ)e^{−iτ}
    pub fn omega(&self, n: usize, b: f64, tau: f64) -> Complex64 {
        (self.couplings.beta[n] * b + self.couplings.gamma[n] * tau.cos()) * cis(-tau)
    }

    /// j(τ) = Σ αₙ Im{zₙ e^{−iτ}}
    pub fn current_from_z<Z: Fn(usize) -> Complex64>(&self, z: Z, tau: f64) -> f64 {
        let e = cis(-tau);
        tree_sum_by(self.len(), |n| self.couplings.alpha[n] * (z(n) * e).im)
    }

    pub fn current(&self, state: &FullState, tau: f64) -> f64 {
        self.current_from_z(|n| state.c[n][0].conj() * state.c[n][1], tau)
    }

    pub fn rhs_full(&self, s: &FullState, tau: f64) -> Result<FullDerivative> {
        self.check_len(s.c.len())?;
        let y = full_to_flat(s);
        let mut dy = vec![0.0; y.len()];
        self.rhs_full_flat(tau, &y, &mut dy)?;
        let c = dy[2..]
            .chunks(4)
            .map(|p| [Complex64::new(p[0], p[1]), Complex64::new(p[2], p[3])])
            .collect();
        Ok(FullDerivative { a: dy[0], b: dy[1], c })
    }

    pub fn rhs_reduced(&self, s: &ReducedState, tau: f64) -> Result<ReducedDerivative> {
        self.check_len(s.z.len())?;
        let y = s.to_coords();
        let mut dy = vec![0.0; y.len()];
        self.rhs_reduced_flat(tau, &y, &mut dy)?;
        let z = dy[2..].chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(ReducedDerivative { a: dy[0], b: dy[1], z })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::Domain(format!("state has {n} molecules, couplings have {}", self.len())));
        }
        Ok(())
    }

    /// Layout (a, b, Re c₁, Im c₁, Re c₂, Im c₂, …).
    pub fn rhs_full_flat(&self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (a, b) = (y[0], y[1]);
        let mol = &y[2..];
        let j = self.current_from_z(
            |n| {
                let p = &mol[4 * n..4 * n + 4];
                Complex64::new(p[0], -p[1]) * Complex64::new(p[2], p[3])
            },
            tau,
        );
        dy[0] = b;
        dy[1] = -2.0 * self.kappa * b - a + j;
        let e = cis(-tau);
        let ct = tau.cos();
        let cp = self.couplings;
        let update = |n: usize, p: &[f64], d: &mut [f64]| {
            let w = (cp.beta[n] * b + cp.gamma[n] * ct) * e;
            let c1 = Complex64::new(p[0], p[1]);
            let c2 = Complex64::new(p[2], p[3]);
            let d1 = -I * w * c2;
            let d2 = -I * w.conj() * c1;
            d[0] = d1.re;
            d[1] = d1.im;
            d[2] = d2.re;
            d[3] = d2.im;
        };
        let out = &mut dy[2..];
        if self.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(4).zip(mol.par_chunks(4)).enumerate().for_each(|(n, (d, p))| update(n, p, d));
        } else {
            out.chunks_mut(4).zip(mol.chunks(4)).enumerate().for_each(|(n, (d, p))| update(n, p, d));
        }
        Ok(())
    }

    /// Layout (a, b, Re z₁, Im z₁, …) on S²₊: żₙ = −iω̄ₙ√(1−4|zₙ|²).
    pub fn rhs_reduced_flat(&self, tau: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (a, b) = (y[0], y[1]);
        let mol = &y[2..];
        for (index, p) in mol.chunks(2).enumerate() {
            let modulus = p[0].hypot(p[1]);
            if !(modulus < 0.5 - CHART_GUARD) {
                return Err(Error::ChartSingularity { index, modulus });
            }
        }
        let j = self.current_from_z(|n| Complex64::new(mol[2 * n], mol[2 * n + 1]), tau);
        dy[0] = b;
        dy[1] = -2.0 * self.kappa * b - a + j;
        let e = cis(-tau);
        let ct = tau.cos();
        let cp = self.couplings;
        let update = |n: usize, p: &[f64], d: &mut [f64]| {
            let z = Complex64::new(p[0], p[1]);
            let w = (cp.beta[n] * b + cp.gamma[n] * ct) * e;
            let dz = -I * w.conj() * (1.0 - 4.0 * z.norm_sqr()).sqrt();
            d[0] = dz.re;
            d[1] = dz.im;
        };
        let out = &mut dy[2..];
        if self.len() >= PAR_THRESHOLD {
            out.par_chunks_mut(2).zip(mol.par_chunks(2)).enumerate().for_each(|(n, (d, p))| update(n, p, d));
        } else {
            out.chunks_mut(2).zip(mol.chunks(2)).enumerate().for_each(|(n, (d, p))| update(n, p, d));
        }
        Ok(())
    }

    pub fn evolve_full(&self, s0: &FullState, t0: f64, t1: f64, settings: &OdeSettings) -> Result<(FullState, OdeStats)> {
        self.check_len(s0.c.len())?;
        let (y, stats) = integrate(|t, y, dy| self.rhs_full_flat(t, y, dy), &full_to_flat(s0), t0, t1, settings)?;
        Ok((flat_to_full(&y), stats))
    }

    pub fn evolve_reduced(
        &self,
        s0: &ReducedState,
        t0: f64,
        t1: f64,
        settings: &OdeSettings,
    ) -> Result<(ReducedState, OdeStats)> {
        self.check_len(s0.z.len())?;
        s0.check_chart()?;
        let (y, stats) = integrate(|t, y, dy| self.rhs_reduced_flat(t, y, dy), &s0.to_coords(), t0, t1, settings)?;
        Ok((ReducedState::from_coords(&y)?, stats))
    }
}

pub fn full_to_flat(s: &FullState) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 + 4 * s.c.len());
    v.push(s.a);
    v.push(s.b);
    for c in &s.c {
        v.extend_from_slice(&[c[0].re, c[0].im, c[1].re, c[1].im]);
    }
    v
}

pub fn flat_to_full(y: &[f64]) -> FullState {
    let c = y[2..]
        .chunks(4)
        .map(|p| [Complex64::new(p[0], p[1]), Complex64::new(p[2], p[3])])
        .collect();
    FullState { a: y[0], b: y[1], c }
}

/// Field energy (a² + ȧ²)/2.
pub fn field_energy(s: &FullState) -> f64 {
    0.5 * (s.a * s.a + s.b * s.b)
}

/// Mean of |cₙ,₂|² − |cₙ,₁|².
pub fn mean_inversion(s: &FullState) -> f64 {
    if s.c.is_empty() {
        return 0.0;
    }
    tree_sum_by(s.c.len(), |n| s.c[n][1].norm_sqr() - s.c[n][0].norm_sqr()) / s.c.len() as f64
}

pub type Mat2c = [[Complex64; 2]; 2];

/// Period-averaged Schrödinger propagators Uₙ(τ) of the successive
/// approximations.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedPropagator {
    pub tau: f64,
    pub order: u8,
    pub omega_tilde: Vec<Complex64>,
    pub s: Vec<Complex64>,
    pub u: Vec<Mat2c>,
}

/// Largest |ω̃ₙ| for which the averaged propagators are trusted.
pub const OMEGA_TILDE_MAX: f64 = 1e-3;

/// ω̃ₙ = γₙ/2 at order 1 and βₙν + γₙ/2 at order 2.
pub fn averaged_propagator(couplings: &Couplings, nu: Complex64, order: u8, tau: f64) -> Result<AveragedPropagator> {
    if order != 1 && order != 2 {
        return Err(Error::Domain(format!("averaging order must be 1 or 2, got {order}")));
    }
    let n = couplings.len();
    let omega_tilde: Vec<Complex64> = (0..n)
        .map(|k| {
            let g = Complex64::new(couplings.gamma[k] / 2.0, 0.0);
            if order == 1 {
                g
            } else {
                couplings.beta[k] * nu + g
            }
        })
        .collect();
    if let Some((k, w)) = omega_tilde.iter().enumerate().find(|(_, w)| !(w.norm() <= OMEGA_TILDE_MAX)) {
        return Err(Error::Domain(format!(
            "averaged frequency |ω̃_{k}| = {:.3e} exceeds {OMEGA_TILDE_MAX:e}",
            w.norm()
        )));
    }
    let s: Vec<Complex64> = omega_tilde
        .iter()
        .map(|w| if w.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { w / w.norm() })
        .collect();
    let u = omega_tilde
        .iter()
        .zip(&s)
        .map(|(w, s)| {
            let th = w.norm() * tau;
            let (sn, cs) = th.sin_cos();
            let cs = Complex64::new(cs, 0.0);
            [[cs, -I * s * sn], [-I * s.conj() * sn, cs]]
        })
        .collect();
    Ok(AveragedPropagator { tau, order, omega_tilde, s, u })
}

impl AveragedPropagator {
    pub fn apply(&self, c: &[[Complex64; 2]]) -> Vec<[Complex64; 2]> {
        c.iter().zip(&self.u).map(|(c, u)| mat_vec(u, c)).collect()
    }

    /// max over n of ‖Uₙ†Uₙ − I‖ (entrywise max) and ||det Uₙ| − 1|.
    pub fn unitarity_defect(&self) -> f64 {
        let mut m: f64 = 0.0;
        for u in &self.u {
            for i in 0..2 {
                for j in 0..2 {
                    let g = u[0][i].conj() * u[0][j] + u[1][i].conj() * u[1][j];
                    let want = if i == j { 1.0 } else { 0.0 };
                    m = m.max((g - want).norm());
                }
            }
            let det = u[0][0] * u[1][1] - u[0][1] * u[1][0];
            m = m.max((det.norm() - 1.0).abs());
        }
        m
    }
}

fn mat_vec(u: &Mat2c, c: &[Complex64; 2]) -> [Complex64; 2] {
    [u[0][0] * c[0] + u[0][1] * c[1], u[1][0] * c[0] + u[1][1] * c[1]]
}

/// exp(−iHt) for a Hermitian 2×2 H.
pub fn hermitian_exp(h: &Mat2c, t: f64) -> Mat2c {
    let h0 = 0.5 * (h[0][0].re + h[1][1].re);
    let hz = 0.5 * (h[0][0].re - h[1][1].re);
    let hx = h[0][1].re;
    let hy = -h[0][1].im;
    let r = (hx * hx + hy * hy + hz * hz).sqrt();
    let ph = cis(-h0 * t);
    let (sn, cs) = (r * t).sin_cos();
    // sin(rt)/r → t as r → 0
    let sr = if r * t < 1e-8 { t } else { sn / r };
    let one = Complex64::new(cs, 0.0);
    let m = [
        [one - I * sr * hz, -I * sr * Complex64::new(hx, -hy)],
        [-I * sr * Complex64::new(hx, hy), one + I * sr * hz],
    ];
    m.map(|row| row.map(|x| ph * x))
}

/// Test generators for the averaging lemma, all of size ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Profile {
    /// ε[[0, cos τ], [cos τ, 0]]
    CosineSigmaX,
    /// ε[[0, e^{−iτ}], [e^{iτ}, 0]]
    Rotating,
    /// ε[[0.3, 1], [1, −0.7]], time independent
    Constant,
}

impl Profile {
    pub fn generator(&self, eps: f64, tau: f64) -> Mat2c {
        let z = Complex64::new(0.0, 0.0);
        let m = match self {
            Profile::CosineSigmaX => {
                let c = Complex64::new(tau.cos(), 0.0);
                [[z, c], [c, z]]
            }
            Profile::Rotating => [[z, cis(-tau)], [cis(tau), z]],
            Profile::Constant => [
                [Complex64::new(0.3, 0.0), Complex64::new(1.0, 0.0)],
                [Complex64::new(1.0, 0.0), Complex64::new(-0.7, 0.0)],
            ],
        };
        m.map(|r| r.map(|x| eps * x))
    }
}

/// Errors below this are roundoff and are left out of the fit.
pub const ERROR_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub profile: Profile,
    pub period: f64,
    /// (ε, |c(T) − ĉ(T)|)
    pub points: Vec<(f64, f64)>,
    pub used: usize,
    /// Least-squares slope of log err against log ε; None with fewer than two
    /// usable points.
    pub slope: Option<f64>,
}

/// Averaging-lemma harness: integrates ċ = −iΩ(τ)c and the averaged
/// ċ = −iΩ̃c from c₀ = (1, 0)/… over [0, T] and fits the error exponent.
pub fn averaging_error_scaling(profile: Profile, period: f64, eps_grid: &[f64]) -> Result<ScalingReport> {
    if !(period > 0.0) {
        return Err(Error::Domain(format!("period {period} must be positive")));
    }
    if eps_grid.len() < 2 || eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Domain("ε grid needs at least two positive values".into()));
    }
    let c0 = [Complex64::new(0.8, 0.0), Complex64::new(0.36, 0.48)];
    let settings = OdeSettings::fixed(4000);
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let f = |t: f64, y: &[f64], dy: &mut [f64]| {
            let h = profile.generator(eps, t);
            let c = [Complex64::new(y[0], y[1]), Complex64::new(y[2], y[3])];
            let d = mat_vec(&h, &c).map(|x| -I * x);
            dy.copy_from_slice(&[d[0].re, d[0].im, d[1].re, d[1].im]);
            Ok(())
        };
        let (y, _) = integrate(f, &[c0[0].re, c0[0].im, c0[1].re, c0[1].im], 0.0, period, &settings)?;
        let mut avg = [[Complex64::new(0.0, 0.0); 2]; 2];
        for (i, row) in avg.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = quad::integrate(|t| profile.generator(eps, t)[i][j], 0.0, period, 1e-15)? / period;
            }
        }
        let ch = mat_vec(&hermitian_exp(&avg, period), &c0);
        let err = ((y[0] - ch[0].re).powi(2)
            + (y[1] - ch[0].im).powi(2)
            + (y[2] - ch[1].re).powi(2)
            + (y[3] - ch[1].im).powi(2))
        .sqrt();
        points.push((eps, err));
    }
    let fit: Vec<(f64, f64)> =
        points.iter().filter(|(_, e)| *e >= ERROR_FLOOR).map(|(x, e)| (x.ln(), e.ln())).collect();
    let slope = if fit.len() >= 2 {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    Ok(ScalingReport { profile, period, points, used: fit.len(), slope })
}

/// Standard ε grid for the harness: 10⁻¹ … 10⁻⁴, four points per decade.
pub fn default_eps_grid() -> Vec<f64> {
    (0..=12).map(|k| 10f64.powf(-1.0 - k as f64 / 4.0)).collect()
}

/// One pumping period from τ = 0.
pub fn one_period(sys: &System, s0: &FullState, settings: &OdeSettings) -> Result<FullState> {
    Ok(sys.evolve_full(s0, 0.0, TWO_PI, settings)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::derivatives;
    use crate::params::{lift, Branch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_couplings(n: usize, scale: f64, seed: u64) -> Couplings {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut g = Vec::new();
        for _ in 0..n {
            let x: f64 = r.random_range(-1.0..1.0);
            a.push(scale * x * r.random_range(0.5..1.5));
            b.push(scale * x * r.random_range(0.5..1.5));
            g.push(scale * r.random_range(-1.0..1.0));
        }
        Couplings::new(a, b, g).unwrap()
    }

    fn random_state(n: usize, seed: u64) -> FullState {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let c = (0..n)
            .map(|_| {
                let v: [f64; 4] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                [Complex64::new(v[0] / s, v[1] / s), Complex64::new(v[2] / s, v[3] / s)]
            })
            .collect();
        FullState { a: r.random_range(-1.0..1.0), b: r.random_range(-1.0..1.0), c }
    }

    #[test]
    fn ground_state_without_pumping_is_stationary() {
        let cp = Couplings::uniform(4, 1e-3, 1e-3, 0.0);
        let sys = System::new(&cp, 1e-3).unwrap();
        let d = sys.rhs_full(&FullState::ground(4), 0.7).unwrap();
        assert_eq!(d.a, 0.0);
        assert_eq!(d.b, 0.0);
        assert!(d.c.iter().all(|c| c[0].norm() == 0.0 && c[1].norm() == 0.0));
        let r = sys.rhs_reduced(&ReducedState::ground(4), 0.7).unwrap();
        assert!(r.z.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn upper_level_molecule_carries_no_current() {
        let cp = Couplings::uniform(1, 1.0, 0.0, 0.0);
        let sys = System::new(&cp, 0.0).unwrap();
        let s = FullState { a: 0.0, b: 0.0, c: vec![[Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]] };
        assert_eq!(sys.current(&s, std::f64::consts::FRAC_PI_2), 0.0);
    }

    #[test]
    fn current_matches_brute_force() {
        let cp = random_couplings(37, 0.1, 1);
        let s = random_state(37, 2);
        let sys = System::new(&cp, 0.01).unwrap();
        let tau: f64 = 1.234;
        let mut brute = 0.0;
        for n in 0..37 {
            let c = s.c[n];
            let e = Complex64::new(tau.cos(), -tau.sin());
            brute += cp.alpha[n] * (c[0].conj() * c[1] * e).im;
        }
        assert!((sys.current(&s, tau) - brute).abs() < 1e-15);
        let d = sys.rhs_full(&s, tau).unwrap();
        assert!((d.b - (-0.02 * s.b - s.a + brute)).abs() < 1e-15);
    }

    #[test]
    fn norms_conserved_over_a_period() {
        let cp = random_couplings(20, 0.05, 3);
        let sys = System::new(&cp, 1e-3).unwrap();
        let s0 = random_state(20, 4);
        let s1 = one_period(&sys, &s0, &OdeSettings::default()).unwrap();
        assert!(s1.max_norm_defect() < 1e-9, "{}", s1.max_norm_defect());
    }

    #[test]
    fn free_damped_oscillator_matches_fundamental_solution() {
        let kappa = 1e-2;
        let cp = Couplings::uniform(0, 0.0, 0.0, 0.0);
        let sys = System::new(&cp, kappa).unwrap();
        let s0 = FullState { a: 0.3, b: -0.7, c: vec![] };
        let s1 = one_period(&sys, &s0, &OdeSettings::default()).unwrap();
        let (e, ed, _) = derivatives(TWO_PI, kappa).unwrap();
        let want = s0.a * ed + (s0.b + 2.0 * kappa * s0.a) * e;
        assert!((s1.a - want).abs() < 1e-8);
    }

    #[test]
    fn reduced_and_full_trajectories_agree() {
        let cp = random_couplings(10, 0.05, 5);
        let sys = System::new(&cp, 1e-3).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let z0: Vec<Complex64> =
            (0..10).map(|_| Complex64::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2))).collect();
        let red0 = ReducedState { a: 0.1, b: -0.2, z: z0 };
        let full0 = red0.lift(Branch::Upper).unwrap();
        let s = OdeSettings::default();
        let (full1, _) = sys.evolve_full(&full0, 0.0, TWO_PI, &s).unwrap();
        let (red1, _) = sys.evolve_reduced(&red0, 0.0, TWO_PI, &s).unwrap();
        let proj = full1.project();
        assert!((proj.a - red1.a).abs() < 1e-9);
        for (x, y) in proj.z.iter().zip(&red1.z) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn reduced_chart_refuses_equator() {
        let cp = Couplings::uniform(1, 0.0, 0.0, 0.0);
        let sys = System::new(&cp, 0.0).unwrap();
        let s = ReducedState { a: 0.0, b: 0.0, z: vec![Complex64::new(0.5, 0.0)] };
        assert!(matches!(sys.rhs_reduced(&s, 0.0), Err(Error::ChartSingularity { index: 0, .. })));
    }

    #[test]
    fn gauge_rotation_commutes_with_flow() {
        let cp = random_couplings(8, 0.05, 7);
        let sys = System::new(&cp, 1e-3).unwrap();
        let s0 = random_state(8, 8);
        let mut rot = s0.clone();
        let phases: Vec<f64> = (0..8).map(|k| 0.37 * k as f64 + 0.1).collect();
        for (c, th) in rot.c.iter_mut().zip(&phases) {
            c[0] *= cis(*th);
            c[1] *= cis(*th);
        }
        let s = OdeSettings::default();
        let a = one_period(&sys, &s0, &s).unwrap();
        let b = one_period(&sys, &rot, &s).unwrap();
        assert!((a.a - b.a).abs() < 1e-9 && (a.b - b.b).abs() < 1e-9);
        for k in 0..8 {
            for l in 0..2 {
                assert!((a.c[k][l] * cis(phases[k]) - b.c[k][l]).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn parallel_and_serial_rhs_agree() {
        let n = PAR_THRESHOLD + 3;
        let cp = random_couplings(n, 0.01, 9);
        let sys = System::new(&cp, 1e-3).unwrap();
        let s = random_state(n, 10);
        let y = full_to_flat(&s);
        let mut d1 = vec![0.0; y.len()];
        sys.rhs_full_flat(0.3, &y, &mut d1).unwrap();
        for k in [0, 17, n - 1] {
            let w = sys.omega(k, s.b, 0.3);
            let d = -I * w * s.c[k][1];
            assert_eq!(d1[2 + 4 * k], d.re);
            assert_eq!(d1[3 + 4 * k], d.im);
        }
    }

    #[test]
    fn trivial_propagator_is_identity() {
        let cp = Couplings::uniform(3, 1.0, 1.0, 0.0);
        for order in [1, 2] {
            let p = averaged_propagator(&cp, Complex64::new(0.0, 0.0), order, 5.0).unwrap();
            for u in &p.u {
                assert_eq!(u[0][0], Complex64::new(1.0, 0.0));
                assert_eq!(u[0][1].norm(), 0.0);
            }
        }
    }

    #[test]
    fn real_positive_nu_gives_unit_phase() {
        let cp = Couplings::uniform(2, 1.0, 1e-4, 2e-4);
        let p = averaged_propagator(&cp, Complex64::new(0.5, 0.0), 2, 1.0).unwrap();
        assert!(p.s.iter().all(|s| (s - 1.0).norm() < 1e-15));
        assert!(p.unitarity_defect() < 1e-12);
    }

    #[test]
    fn oversized_frequency_is_refused() {
        let cp = Couplings::uniform(1, 1.0, 1.0, 0.0);
        assert!(averaged_propagator(&cp, Complex64::new(0.1, 0.0), 2, 1.0).is_err());
        assert!(averaged_propagator(&cp, Complex64::new(0.0, 0.0), 3, 1.0).is_err());
    }

    #[test]
    fn first_order_propagator_against_pumped_flow() {
        for g in [2e-3, 1e-3, 3e-4] {
            let cp = Couplings::uniform(1, 0.0, 0.0, g);
            let sys = System::new(&cp, 0.0).unwrap();
            let c0 = lift(Complex64::new(0.1, -0.2), Branch::Upper).unwrap();
            let s0 = FullState { a: 0.0, b: 0.0, c: vec![c0] };
            let s1 = one_period(&sys, &s0, &OdeSettings::with_tol(1e-12)).unwrap();
            let p = averaged_propagator(&cp, Complex64::new(0.0, 0.0), 1, TWO_PI).unwrap();
            let c = p.apply(&s0.c)[0];
            let err = (c[0] - s1.c[0][0]).norm().max((c[1] - s1.c[0][1]).norm());
            assert!(err <= 10.0 * g * g, "γ = {g}: {err}");
        }
    }

    #[test]
    fn hermitian_exp_is_unitary_and_correct() {
        let h = [
            [Complex64::new(0.3, 0.0), Complex64::new(0.2, -0.5)],
            [Complex64::new(0.2, 0.5), Complex64::new(-1.1, 0.0)],
        ];
        let u = hermitian_exp(&h, 0.9);
        // compare with a many-step product of first-order factors
        let (n, dt) = (200_000, 0.9 / 200_000.0);
        let mut m = [[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]];
        let half = hermitian_exp(&[[h[0][0], Complex64::new(0.0, 0.0)], [Complex64::new(0.0, 0.0), h[1][1]]], dt);
        let off = hermitian_exp(&[[Complex64::new(0.0, 0.0), h[0][1]], [h[1][0], Complex64::new(0.0, 0.0)]], dt);
        let mul = |a: &Mat2c, b: &Mat2c| -> Mat2c {
            std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
        };
        let step = mul(&half, &off);
        for _ in 0..n {
            m = mul(&step, &m);
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[i][j] - u[i][j]).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn constant_generator_averages_exactly() {
        let r = averaging_error_scaling(Profile::Constant, TWO_PI, &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(r.points.iter().all(|p| p.1 < 1e-12), "{:?}", r.points);
    }

    #[test]
    fn rotating_profile_has_second_order_error() {
        let r = averaging_error_scaling(Profile::Rotating, TWO_PI, &default_eps_grid()).unwrap();
        let s = r.slope.unwrap();
        assert!((s - 2.0).abs() < 0.1, "{s}");
    }
}
