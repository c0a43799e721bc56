//! The acceptance suite: one check per criterion, each returning a verdict,
//! the measured quantity against its bound, and the wall time against the
//! budget. Shared by the `acceptance` test target and `verify-all`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::time::Instant;

use crate::config::RunConfig;
use crate::dynamics::{averaging_error_scaling, default_eps_grid, Profile, System};
use crate::ensemble::{sample_ensemble, ActiveRegion, Ensemble, EnsembleSpec, Hypothesis, Scales};
use crate::error::Result;
use crate::kernels::{self, constants_ab, constants_j, fundamental_solution, residual_of_ode, Form, TWO_PI};
use crate::ode::OdeSettings;
use crate::params::{Branch, Couplings, FullState, PhysicalParams, ReducedState};
use crate::poincare::{fd_settings, jacobian_fd, poincare_analytic, poincare_numeric, NumericMap, FD_STEP};
use crate::quad;
use crate::spectrum::{
    assemble_blocks, assemble_full, dense_eigenvalues, eig_residual, eigvec_back_substitute, log_grid,
    threshold_scan, verdict_flips, DVariant, Method,
};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<28} {:.2}s/{:.0}s  {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.budget_seconds,
            self.detail
        )
    }
}

/// Knobs of the suite. The defaults are the sizes the criteria name.
#[derive(Debug, Clone, Serialize)]
pub struct Suite {
    pub seed: u64,
    pub kappa: f64,
    /// Ensemble sizes for criteria 4/5/9, 6, 7 and 8.
    pub n_dynamics: usize,
    pub n_jacobian: usize,
    pub n_spectrum: usize,
    pub n_statistics: usize,
}

impl Default for Suite {
    fn default() -> Self {
        Self { seed: 2024, kappa: 1e-7, n_dynamics: 1000, n_jacobian: 50, n_spectrum: 100, n_statistics: 100_000 }
    }
}

fn timed<F: FnOnce() -> Result<(bool, String)>>(id: u8, name: &'static str, budget: f64, f: F) -> CriterionResult {
    let t = Instant::now();
    let (pass, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    let seconds = t.elapsed().as_secs_f64();
    CriterionResult { id, name, pass: pass && seconds <= budget, detail, seconds, budget_seconds: budget }
}

/// Ruby constants, polycrystalline rod; `rescale` lifts S to its physical size.
pub fn desk_ensemble(n: usize, seed: u64, rescale: bool) -> Result<Ensemble> {
    let mut cfg = RunConfig::paper_constants(n, seed);
    cfg.ensemble.rescale = rescale;
    let r = cfg.resolve()?;
    sample_ensemble(&r.spec, &r.scales)
}

pub fn integral_constants() -> CriterionResult {
    timed(1, "integral constants", 1.0, || {
        let (j1, j2) = constants_j(1e-7)?;
        let dj2 = (j2 - PI * PI / 12.0).norm();
        let mut ok = j1.norm() <= 1e-6 && dj2 <= 1e-6;
        let mut worst: f64 = 0.0;
        let tol = quad::DEFAULT_TOL;
        for kappa in [1e-3, 1e-5] {
            let k = constants_ab(kappa)?;
            let bound = 10.0 * kappa * kappa + 1e-10;
            let pairs: [(Complex64, Complex64); 6] = [
                (k.a1, kernels::oracle::a1(kappa, tol)?),
                (k.a2, kernels::oracle::a2(kappa, tol)?),
                (k.a3.into(), kernels::oracle::a3(kappa, tol)?.into()),
                (k.b1, kernels::oracle::b1(kappa, tol)?),
                (k.b2, kernels::oracle::b2(kappa, tol)?),
                (k.b3.into(), kernels::oracle::b3(kappa, tol)?.into()),
            ];
            for (c, o) in pairs {
                let e = (c - o).norm();
                worst = worst.max(e / bound);
                ok &= e <= bound;
            }
        }
        Ok((ok, format!("|J1| = {:.2e}, |J2 - pi^2/12| = {dj2:.2e}, worst A/B error/bound = {worst:.2e}", j1.norm())))
    })
}

pub fn fundamental_solution_check(seed: u64) -> CriterionResult {
    timed(2, "fundamental solution", 1.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut res: f64 = 0.0;
        for _ in 0..100 {
            let tau = rng.random_range(0.0..TWO_PI);
            let kappa = 10f64.powf(rng.random_range(-7.0..-3.0));
            res = res.max(residual_of_ode(tau, kappa)?.abs());
        }
        let mut gap: f64 = 0.0;
        for kappa in [1e-3, 1e-4, 1e-5, 1e-7] {
            for i in 0..=200 {
                let tau = TWO_PI * i as f64 / 200.0;
                let d = (fundamental_solution(tau, kappa, Form::Exact)? - fundamental_solution(tau, kappa, Form::Leading)?)
                    .abs();
                gap = gap.max(d / (10.0 * kappa * kappa));
            }
        }
        Ok((res <= 1e-12 && gap <= 1.0, format!("max residual {res:.2e}, max gap/(10 kappa^2) {gap:.2e}")))
    })
}

pub fn averaging_lemma() -> CriterionResult {
    timed(3, "averaging lemma", 10.0, || {
        let grid = default_eps_grid();
        let mut ok = true;
        let mut parts = Vec::new();
        for p in [Profile::CosineSigmaX, Profile::Rotating] {
            let r = averaging_error_scaling(p, TWO_PI, &grid)?;
            let good = r.slope.is_some_and(|s| (s - 2.0).abs() <= 0.1);
            ok &= good;
            let max_err = r.points.iter().map(|x| x.1).fold(0.0, f64::max);
            parts.push(match r.slope {
                Some(s) => format!("{p:?}: slope {s:.3} from {} points", r.used),
                None => format!("{p:?}: no slope, every error below the floor (max {max_err:.1e})"),
            });
        }
        Ok((ok, parts.join("; ")))
    })
}

/// Small random excitation of every molecule plus a field.
fn excited_state(n: usize, seed: u64) -> Result<FullState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<Complex64> =
        (0..n).map(|_| Complex64::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05))).collect();
    ReducedState { a: 1e-3, b: -5e-4, z }.lift(Branch::Upper)
}

pub fn conservation_and_gauge(suite: &Suite) -> CriterionResult {
    timed(4, "conservation and gauge", 30.0, || {
        let ens = desk_ensemble(suite.n_dynamics, suite.seed, true)?;
        let sys = System::new(&ens.couplings, suite.kappa)?;
        let s0 = excited_state(suite.n_dynamics, suite.seed)?;
        let settings = OdeSettings::default();
        let mut rng = ChaCha8Rng::seed_from_u64(suite.seed ^ 0x9e37);
        let mut rotated = s0.clone();
        for c in rotated.c.iter_mut() {
            let ph = Complex64::from_polar(1.0, rng.random_range(0.0..TWO_PI));
            c[0] *= ph;
            c[1] *= ph;
        }
        let (r1, r2) = rayon::join(
            || sys.evolve_full(&s0, 0.0, TWO_PI, &settings),
            || sys.evolve_full(&rotated, 0.0, TWO_PI, &settings),
        );
        let (s1, s2) = (r1?.0, r2?.0);
        let drift = s1.max_norm_defect().max(s2.max_norm_defect());
        let gauge = (s1.a - s2.a).abs().max((s1.b - s2.b).abs());
        Ok((drift <= 1e-8 && gauge <= 1e-8, format!("norm drift {drift:.2e}, gauge gap {gauge:.2e}")))
    })
}

pub fn map_equivalence(suite: &Suite) -> CriterionResult {
    timed(5, "map equivalence", 120.0, || {
        let n = suite.n_dynamics;
        let ens = desk_ensemble(n, suite.seed, true)?;
        let c = &ens.couplings;
        let eps = 1e-4;
        let settings = OdeSettings::with_tol(1e-12);
        let w1 = c.max_abs_gamma() / 2.0;
        let bound = 1e3 * (eps * eps + w1 * w1);
        let errs: Vec<f64> = (0..50u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(suite.seed.wrapping_add(1000 + k));
                let mut u = || eps * rng.random_range(-1.0..1.0);
                let (a0, b0) = (u(), u());
                let z0: Vec<Complex64> = (0..n).map(|_| Complex64::new(u(), u())).collect();
                let an = poincare_analytic(a0, b0, &z0, c, suite.kappa)?;
                let s0 = ReducedState { a: a0, b: b0, z: z0 }.lift(Branch::Upper)?;
                let nu = poincare_numeric(&s0, c, suite.kappa, &settings)?;
                let d = an.to_coords().iter().zip(nu.to_coords()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                Ok(d)
            })
            .collect::<Result<_>>()?;
        let worst = errs.iter().copied().fold(0.0, f64::max);
        Ok((
            worst <= bound,
            format!("max discrepancy {worst:.2e} vs C(eps^2 + |w1|^2) = {bound:.2e} with C = 1e3"),
        ))
    })
}

/// Largest |FD − analytic| entry relative to its tolerance.
pub fn jacobian_gap(c: &Couplings, kappa: f64, h: f64) -> Result<(f64, f64, DMatrix<f64>)> {
    let map = NumericMap { couplings: c, kappa, settings: fd_settings() };
    let base = ReducedState::ground(c.len()).to_coords();
    let fd = jacobian_fd(|x| map.eval(x), &base, h, false)?;
    let an = assemble_full(&assemble_blocks(c, kappa, DVariant::GammaCorrected)?, false)?;
    let scale = an.amax();
    let tol = (10.0 * h * h).max(1e-6 * scale);
    Ok(((&fd - &an).amax(), tol, fd - an))
}

pub fn differential_oracle(suite: &Suite) -> CriterionResult {
    timed(6, "differential oracle", 120.0, || {
        let ens = desk_ensemble(suite.n_jacobian, suite.seed, false)?;
        let (gap, tol, _) = jacobian_gap(&ens.couplings, suite.kappa, FD_STEP)?;
        Ok((gap <= tol, format!("max |FD - analytic| {gap:.2e} vs {tol:.2e} (N = {})", suite.n_jacobian)))
    })
}

pub fn spectrum_reduction(suite: &Suite) -> CriterionResult {
    timed(7, "spectrum reduction", 60.0, || {
        let mut worst_root: f64 = 0.0;
        let mut worst_res: f64 = 0.0;
        let mut min_maxwell = f64::INFINITY;
        let mut count = 0;
        for k in 0..5 {
            let ens = desk_ensemble(suite.n_spectrum, suite.seed.wrapping_add(k), true)?;
            let bd = assemble_blocks(&ens.couplings, suite.kappa, DVariant::GammaCorrected)?;
            let a = assemble_full(&bd, false)?;
            let ev = dense_eigenvalues(&a)?;
            let (roots, _) = bd.polynomial_multipliers()?;
            let cut = 100.0 * bd.cluster_radius();
            for e in ev.iter().filter(|e| (*e - 1.0).norm() > cut) {
                let d = roots.iter().map(|r| (r - e).norm()).fold(f64::INFINITY, f64::min);
                worst_root = worst_root.max(d);
                let v = eigvec_back_substitute(*e, &bd)?;
                worst_res = worst_res.max(eig_residual(&a, *e, &v));
                min_maxwell = min_maxwell.min((v[0].norm_sqr() + v[1].norm_sqr()).sqrt());
                count += 1;
            }
        }
        let ok = count > 0 && worst_root <= 1e-6 && worst_res <= 1e-6 && min_maxwell > 1e-8;
        Ok((
            ok,
            format!(
                "{count} eigenvalues checked: root distance {worst_root:.2e}, residual {worst_res:.2e}, Maxwell part >= {min_maxwell:.2e}"
            ),
        ))
    })
}

/// A box spanning whole half-wavelengths of the (4, 4, 4) mode, where the
/// mode's mean square over the region equals its cavity mean.
pub fn aligned_box() -> ActiveRegion {
    ActiveRegion::Box { lo: [3.0, 0.5, 0.5], hi: [9.0, 1.5, 1.5] }
}

pub fn ensemble_statistics(suite: &Suite) -> CriterionResult {
    timed(8, "ensemble statistics", 30.0, || {
        let mut cfg = RunConfig::paper_constants(suite.n_statistics, suite.seed);
        cfg.ensemble.active = Some(aligned_box());
        cfg.ensemble.rescale = false;
        let r = cfg.resolve()?;
        let ens = sample_ensemble(&r.spec, &r.scales)?;
        let m = ens.sphere_moments();
        let within = |x: (f64, f64, f64)| (x.0 - x.2).abs() <= 3.0 * x.1;
        let s = ens.sums();
        let s_ok = (s.s_ratio - 1.0).abs() <= 3.0 * s.s_std_error / s.s_analytic;
        let sig_ok = (s.sigma_ratio - 1.0).abs() <= 3.0 * s.sigma_std_error / s.sigma_analytic;
        // the physical count, reached through the rescaling
        let p = PhysicalParams::ruby();
        let spec = EnsembleSpec { rescale: true, n: 1000, ..r.spec.clone() };
        let big = sample_ensemble(&spec, &Scales::from_physical(&p)?)?;
        let s_phys = big.s_analytic();
        let ok = within(m.pe1_sq)
            && within(m.p1p2_sq)
            && within(m.p1_fourth)
            && s_ok
            && sig_ok
            && (1e-6..=1e-4).contains(&s_phys)
            && ens.spec.hypothesis == Hypothesis::H1;
        let z = |x: (f64, f64, f64)| (x.0 - x.2) / x.1;
        Ok((
            ok,
            format!(
                "moment z-scores {:.2}/{:.2}/{:.2}; S ratio {:.4} (SE {:.4}); Sigma ratio {:.4} (SE {:.4}); S at N=1e20 {:.2e}",
                z(m.pe1_sq),
                z(m.p1p2_sq),
                z(m.p1_fourth),
                s.s_ratio,
                s.s_std_error / s.s_analytic,
                s.sigma_ratio,
                s.sigma_std_error / s.sigma_analytic,
                s_phys
            ),
        ))
    })
}

pub fn ground_state_fixed(suite: &Suite) -> CriterionResult {
    timed(9, "ground-state fixed point", 5.0, || {
        let n = suite.n_dynamics;
        let ens = desk_ensemble(n, suite.seed, true)?;
        let c = ens.couplings.with_pump_scaled(0.0);
        let an = poincare_analytic(0.0, 0.0, &vec![Complex64::new(0.0, 0.0); n], &c, suite.kappa)?;
        let nu = poincare_numeric(&FullState::ground(n), &c, suite.kappa, &OdeSettings::default())?;
        let d = |s: &ReducedState| s.to_coords().iter().map(|x| x.abs()).fold(0.0, f64::max);
        let (da, dn) = (d(&an), d(&nu));
        Ok((da <= 1e-8 && dn <= 1e-8, format!("analytic moves {da:.2e}, numeric moves {dn:.2e}")))
    })
}

pub fn threshold_scan_check(suite: &Suite) -> CriterionResult {
    timed(10, "threshold scan", 300.0, || {
        let ens = desk_ensemble(suite.n_spectrum, suite.seed, true)?;
        let p_ref = PhysicalParams::ruby().pump_amplitude;
        let grid = log_grid(p_ref * 1e-1, p_ref * 1e2, 13)?;
        let rows = threshold_scan(
            &ens.couplings,
            p_ref,
            &grid,
            suite.kappa,
            DVariant::GammaCorrected,
            Method::Both,
            crate::spectrum::RESONANCE_TOL,
        )?;
        let flips = verdict_flips(&rows);
        let recorded = rows.iter().all(|r| r.max_abs_mu.is_finite() && !r.maxwell_component_min.is_nan());
        let lo = rows.iter().map(|r| r.max_abs_mu).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r.max_abs_mu).fold(0.0, f64::max);
        let resonant = rows.iter().filter(|r| r.resonance).count();
        Ok((
            !flips.is_empty() && recorded,
            format!(
                "{} flips over {} points ({resonant} resonant); max|mu| in [{lo:.10}, {hi:.10}]",
                flips.len(),
                rows.len()
            ),
        ))
    })
}

pub type Check = fn(&Suite) -> CriterionResult;

/// The criteria in order, unevaluated, so callers can report as they go.
pub fn run_all_lazy() -> Vec<Check> {
    vec![
        |_| integral_constants(),
        |s| fundamental_solution_check(s.seed),
        |_| averaging_lemma(),
        conservation_and_gauge,
        map_equivalence,
        differential_oracle,
        spectrum_reduction,
        ensemble_statistics,
        ground_state_fixed,
        threshold_scan_check,
    ]
}

pub fn run_all(suite: &Suite) -> Vec<CriterionResult> {
    run_all_lazy().into_iter().map(|c| c(suite)).collect()
}
