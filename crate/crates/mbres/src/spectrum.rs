//! Block differential of the period map at the ground state, its reduction
//! to a 2×2 matrix family 𝓜(μ), the degree-six characteristic polynomial and
//! the resonance verdict.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{constants_ab, homogeneous_propagator, TWO_PI};
use crate::params::Couplings;
use crate::sum::tree_sum_by;

const I: Complex64 = Complex64::new(0.0, 1.0);
const PI2: f64 = std::f64::consts::PI * std::f64::consts::PI;

/// Largest N for the dense (2N+2)² path.
pub const N_DENSE_CAP: usize = 500;
/// Margin for the verdict max|μ| > 1 + tol.
pub const RESONANCE_TOL: f64 = 1e-10;
/// Largest 2π²max γₙ²/|μ−1| at which a root of the expanded polynomial is
/// trusted. Beyond it the expansion manufactures roots near 1 + 2π²γ².
pub const EXPANSION_VALIDITY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DVariant {
    Identity,
    /// Dₙ = diag(1, 1 − 2π²γₙ²): the pumping rotation over one period.
    GammaCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumMethod {
    /// Σ αₙβₙ/(μ − 1 + 2π²γₙ²) molecule by molecule.
    Exact,
    /// S/(μ−1) − 2π²Σαₙβₙγₙ²/(μ−1)².
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Polynomial,
    Dense,
    Both,
}

/// Differential at the ground state in bordered form. The molecular blocks
/// factor as Vₙ = αₙV̂ and Wₙ = βₙŴ.
#[derive(Debug, Clone, Serialize)]
pub struct BlockDifferential {
    pub kappa: f64,
    pub m: Matrix2<f64>,
    pub v_hat: Matrix2<f64>,
    pub w_hat: Matrix2<f64>,
    pub s: f64,
    pub gamma_sq_sum: f64,
    pub d_variant: DVariant,
    pub couplings: Couplings,
}

pub fn assemble_blocks(c: &Couplings, kappa: f64, d_variant: DVariant) -> Result<BlockDifferential> {
    let k = constants_ab(kappa)?;
    let h = homogeneous_propagator(TWO_PI, kappa)?;
    let s = c.sync_sum();
    // Inversion −1 at the ground state; ∂ν̄/∂(a⁰, ȧ⁰) = conj(ν_a, ν_b).
    let inv = -1.0;
    let (na, nb) = (k.nu_a.conj(), k.nu_b.conj());
    let m = Matrix2::new(
        h[0][0] + inv * s * (na * k.a2).re,
        h[0][1] + inv * s * (nb * k.a2).re,
        h[1][0] + inv * s * (na * k.b2).re,
        h[1][1] + inv * s * (nb * k.b2).re,
    );
    let v_hat = Matrix2::new(k.a12, k.a11, k.b12, k.b11);
    let wa = TWO_PI * I * na * inv;
    let wb = TWO_PI * I * nb * inv;
    let w_hat = Matrix2::new(wa.re, wb.re, wa.im, wb.im);
    Ok(BlockDifferential {
        kappa,
        m,
        v_hat,
        w_hat,
        s,
        gamma_sq_sum: c.gamma_sq_sum(),
        d_variant,
        couplings: c.clone(),
    })
}

impl BlockDifferential {
    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    pub fn v(&self, n: usize) -> Matrix2<f64> {
        self.v_hat * self.couplings.alpha[n]
    }

    pub fn w(&self, n: usize) -> Matrix2<f64> {
        self.w_hat * self.couplings.beta[n]
    }

    /// Second diagonal entry of Dₙ.
    pub fn d22(&self, n: usize) -> f64 {
        match self.d_variant {
            DVariant::Identity => 1.0,
            DVariant::GammaCorrected => 1.0 - 2.0 * PI2 * self.couplings.gamma[n].powi(2),
        }
    }

    pub fn d(&self, n: usize) -> Matrix2<f64> {
        Matrix2::new(1.0, 0.0, 0.0, self.d22(n))
    }

    /// The printed closed form of M, for comparison with the exact one.
    pub fn m_printed(&self) -> Result<Matrix2<f64>> {
        let k = constants_ab(self.kappa)?;
        let d = 1.0 - TWO_PI * self.kappa;
        let s = self.s;
        Ok(Matrix2::new(d - k.a22 * s / 2.0, -k.a21 * s / 2.0, -k.b22 * s / 2.0, d - k.b21 * s / 2.0))
    }

    /// max over molecules of 2π²γₙ², the spread of the D-cluster.
    pub fn cluster_radius(&self) -> f64 {
        2.0 * PI2 * self.couplings.max_abs_gamma().powi(2)
    }

    fn check_pole(&self, mu: Complex64) -> Result<()> {
        let scale = 1e-14 * mu.norm().max(1.0);
        let hit = (mu - 1.0).norm() <= scale
            || (self.d_variant == DVariant::GammaCorrected
                && (0..self.len()).any(|n| (mu - self.d22(n)).norm() <= scale));
        if hit {
            return Err(Error::Numeric(format!("μ = {mu} sits on a pole of the reduced matrix")));
        }
        Ok(())
    }

    /// 𝓜(μ) = M − μ + V̂·diag(Σαβ/(μ−1), Σαβ/(μ−D₂₂))·Ŵ
    pub fn reduced_matrix(&self, mu: Complex64, method: SumMethod) -> Result<Matrix2<Complex64>> {
        self.check_pole(mu)?;
        let c = &self.couplings;
        let n = self.len();
        let t1 = self.s / (mu - 1.0);
        let t2 = match (self.d_variant, method) {
            (DVariant::Identity, _) => t1,
            (DVariant::GammaCorrected, SumMethod::Expanded) => {
                t1 - 2.0 * PI2 * self.gamma_sq_sum / ((mu - 1.0) * (mu - 1.0))
            }
            (DVariant::GammaCorrected, SumMethod::Exact) => {
                let terms: Vec<Complex64> = (0..n).map(|k| c.alpha[k] * c.beta[k] / (mu - self.d22(k))).collect();
                Complex64::new(tree_sum_by(n, |k| terms[k].re), tree_sum_by(n, |k| terms[k].im))
            }
        };
        let vh = self.v_hat.map(|x| Complex64::new(x, 0.0));
        let wh = self.w_hat.map(|x| Complex64::new(x, 0.0));
        let mid = Matrix2::new(t1, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), t2);
        let mm = self.m.map(|x| Complex64::new(x, 0.0)) - Matrix2::identity() * mu;
        Ok(mm + vh * mid * wh)
    }

    /// p(μ) = det[(μ−1)²𝓜(μ)] with the expanded molecule sum, descending
    /// coefficients, leading 1.
    pub fn char_polynomial(&self) -> Vec<f64> {
        // entries of (μ−1)²(M−μ) + V̂·diag((μ−1)S, (μ−1)S − 2π²G)·Ŵ, ascending
        let g = match self.d_variant {
            DVariant::Identity => 0.0,
            DVariant::GammaCorrected => self.gamma_sq_sum,
        };
        let s = self.s;
        let sq = [1.0, -2.0, 1.0]; // (μ−1)²
        let d1 = [-s, s]; // (μ−1)S
        let d2 = [-s - 2.0 * PI2 * g, s];
        let mut e = [[vec![0.0; 4], vec![0.0; 4]], [vec![0.0; 4], vec![0.0; 4]]];
        for i in 0..2 {
            for j in 0..2 {
                let lin = if i == j { [self.m[(i, j)], -1.0] } else { [self.m[(i, j)], 0.0] };
                let mut p = poly_mul(&sq, &lin);
                let coupling = [
                    self.v_hat[(i, 0)] * self.w_hat[(0, j)] * d1[0] + self.v_hat[(i, 1)] * self.w_hat[(1, j)] * d2[0],
                    self.v_hat[(i, 0)] * self.w_hat[(0, j)] * d1[1] + self.v_hat[(i, 1)] * self.w_hat[(1, j)] * d2[1],
                ];
                p[0] += coupling[0];
                p[1] += coupling[1];
                e[i][j] = p;
            }
        }
        let det = poly_sub(&poly_mul(&e[0][0], &e[1][1]), &poly_mul(&e[0][1], &e[1][0]));
        let mut desc: Vec<f64> = det.into_iter().take(7).rev().collect();
        let lead = desc[0];
        desc.iter_mut().for_each(|x| *x /= lead);
        desc
    }

    /// The same determinant in x = μ − 1, descending, leading 1. Multipliers
    /// cluster near μ = 1, where the μ-form loses the roots to cancellation.
    pub fn shifted_polynomial(&self) -> Vec<f64> {
        let g = match self.d_variant {
            DVariant::Identity => 0.0,
            DVariant::GammaCorrected => self.gamma_sq_sum,
        };
        let s = self.s;
        let d1 = [0.0, s];
        let d2 = [-2.0 * PI2 * g, s];
        let mut e = [[vec![0.0; 4], vec![0.0; 4]], [vec![0.0; 4], vec![0.0; 4]]];
        for i in 0..2 {
            for j in 0..2 {
                let diag = if i == j { 1.0 } else { 0.0 };
                let mut p = vec![0.0, 0.0, self.m[(i, j)] - diag, -diag];
                for k in 0..2 {
                    p[k] += self.v_hat[(i, 0)] * self.w_hat[(0, j)] * d1[k] + self.v_hat[(i, 1)] * self.w_hat[(1, j)] * d2[k];
                }
                e[i][j] = p;
            }
        }
        let det = poly_sub(&poly_mul(&e[0][0], &e[1][1]), &poly_mul(&e[0][1], &e[1][0]));
        let mut desc: Vec<f64> = det.into_iter().take(7).rev().collect();
        let lead = desc[0];
        desc.iter_mut().for_each(|x| *x /= lead);
        desc
    }

    /// Roots of p as multipliers, found in x = μ − 1 after rescaling x so
    /// the roots are of order one. Roots at μ = 1 are split off first and
    /// counted.
    pub fn polynomial_multipliers(&self) -> Result<(Vec<Complex64>, usize)> {
        let q = self.shifted_polynomial();
        let sigma = (1..q.len()).map(|k| q[k].abs().powf(1.0 / k as f64)).fold(0.0, f64::max);
        if sigma == 0.0 {
            return Ok((vec![Complex64::new(1.0, 0.0); q.len() - 1], q.len() - 1));
        }
        let mut y: Vec<f64> = q.iter().enumerate().map(|(k, c)| c / sigma.powi(k as i32)).collect();
        let mut trivial = 0;
        while y.len() > 1 {
            let norm = y.iter().map(|c| c.abs()).fold(0.0, f64::max);
            if y[y.len() - 1].abs() > 1e-12 * norm {
                break;
            }
            y.pop();
            trivial += 1;
        }
        let mut mus: Vec<Complex64> =
            if y.len() > 1 { roots(&y)?.into_iter().map(|r| 1.0 + sigma * r).collect() } else { vec![] };
        mus.extend(std::iter::repeat_n(Complex64::new(1.0, 0.0), trivial));
        mus.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
        Ok((mus, trivial))
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len().max(b.len())).map(|i| a.get(i).unwrap_or(&0.0) - b.get(i).unwrap_or(&0.0)).collect()
}

/// Horner evaluation of descending coefficients, with the derivative.
pub fn poly_eval(c: &[f64], x: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &a in c {
        dp = dp * x + p;
        p = p * x + a;
    }
    (p, dp)
}

/// Roots of a polynomial of exact degree `c.len() − 1` from its companion
/// matrix, each refined by one Newton step kept only if it lowers |p|.
pub fn roots(c: &[f64]) -> Result<Vec<Complex64>> {
    if c.len() < 2 {
        return Err(Error::Domain("polynomial of degree zero has no roots".into()));
    }
    let norm = c.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if !(c[0].abs() > 1e-14 * norm) || !c.iter().all(|x| x.is_finite()) {
        return Err(Error::Domain(format!("degenerate leading coefficient {}", c[0])));
    }
    let n = c.len() - 1;
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -c[j + 1] / c[0];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    let ev = eigenvalues(comp)?;
    let mut out: Vec<Complex64> = ev
        .iter()
        .map(|&z| {
            let (p, dp) = poly_eval(c, z);
            if dp.norm() == 0.0 {
                return z;
            }
            let z1 = z - p / dp;
            if poly_eval(c, z1).0.norm() < p.norm() {
                z1
            } else {
                z
            }
        })
        .collect();
    out.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    Ok(out)
}

/// Removes factors (μ − 1) while p(1) vanishes relative to ‖p‖; returns the
/// quotient and the number removed.
pub fn deflate_unit_roots(c: &[f64], tol: f64) -> (Vec<f64>, usize) {
    let mut p = c.to_vec();
    let mut k = 0;
    while p.len() > 1 {
        let norm = p.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let at1: f64 = p.iter().sum();
        if at1.abs() > tol * norm {
            break;
        }
        // synthetic division by (μ − 1)
        let mut q = Vec::with_capacity(p.len() - 1);
        let mut acc = 0.0;
        for &a in &p[..p.len() - 1] {
            acc += a;
            q.push(acc);
        }
        p = q;
        k += 1;
    }
    (p, k)
}

/// Dense bordered matrix [[M, V₁ … V_N], [Wₙ, Dₙ]]; `triangle` drops the Vₙ.
pub fn assemble_full(bd: &BlockDifferential, triangle: bool) -> Result<DMatrix<f64>> {
    let n = bd.len();
    if n > N_DENSE_CAP {
        return Err(Error::Capacity { n, cap: N_DENSE_CAP });
    }
    let dim = 2 * n + 2;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    a.fixed_view_mut::<2, 2>(0, 0).copy_from(&bd.m);
    for k in 0..n {
        let o = 2 + 2 * k;
        if !triangle {
            a.fixed_view_mut::<2, 2>(0, o).copy_from(&bd.v(k));
        }
        a.fixed_view_mut::<2, 2>(o, 0).copy_from(&bd.w(k));
        a.fixed_view_mut::<2, 2>(o, o).copy_from(&bd.d(k));
    }
    Ok(a)
}

fn eigenvalues(a: DMatrix<f64>) -> Result<Vec<Complex64>> {
    let n = a.nrows();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::Numeric(format!("eigenvalue iteration failed for a {n}x{n} matrix: {e:?}")))?;
    Ok(ev.iter().map(|z| Complex64::new(z.re, z.im)).collect())
}

pub fn dense_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let mut ev = eigenvalues(a.clone())?;
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
    Ok(ev)
}

/// Relative size σ_min/σ_max of 𝓜(μ) above which μ is not accepted as a
/// multiplier.
pub const NULL_TOL: f64 = 1e-3;

/// Eigenvector (v₀, v₁ … v_N) of the block differential for multiplier μ:
/// v₀ spans the near-null direction of 𝓜(μ), vₙ = (μ − Dₙ)⁻¹Wₙv₀; unit norm.
pub fn eigvec_back_substitute(mu: Complex64, bd: &BlockDifferential) -> Result<DVector<Complex64>> {
    let m = bd.reduced_matrix(mu, SumMethod::Exact)?;
    let svd = m.svd(false, true);
    let (imin, imax) = if svd.singular_values[0] <= svd.singular_values[1] { (0, 1) } else { (1, 0) };
    let (smin, smax) = (svd.singular_values[imin], svd.singular_values[imax]);
    if smax > 0.0 && smin > NULL_TOL * smax {
        return Err(Error::Numeric(format!(
            "μ = {mu} is not a multiplier: reduced matrix has σ_min/σ_max = {:.3e}",
            smin / smax
        )));
    }
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not return singular vectors".into()))?;
    let v0 = [vt[(imin, 0)].conj(), vt[(imin, 1)].conj()];
    let n = bd.len();
    let mut v = DVector::<Complex64>::zeros(2 + 2 * n);
    v[0] = v0[0];
    v[1] = v0[1];
    for k in 0..n {
        let w = bd.w(k);
        let r0 = w[(0, 0)] * v0[0] + w[(0, 1)] * v0[1];
        let r1 = w[(1, 0)] * v0[0] + w[(1, 1)] * v0[1];
        v[2 + 2 * k] = r0 / (mu - 1.0);
        v[3 + 2 * k] = r1 / (mu - bd.d22(k));
    }
    let nrm = v.norm();
    Ok(v / Complex64::new(nrm, 0.0))
}

/// ‖(A − μ)v‖ for a real dense A.
pub fn eig_residual(a: &DMatrix<f64>, mu: Complex64, v: &DVector<Complex64>) -> f64 {
    let ac = a.map(|x| Complex64::new(x, 0.0));
    (ac * v - v * mu).norm()
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub method: Method,
    pub d_variant: DVariant,
    pub multipliers: Vec<Complex64>,
    pub max_abs_mu: f64,
    pub resonance: bool,
    pub resonance_tol: f64,
    /// (μ, |(a, ȧ)-part| of the unit eigenvector) for every multiplier off the poles
    pub maxwell_components: Vec<(Complex64, f64)>,
    pub polynomial_coefficients: Vec<f64>,
    pub polynomial_roots: Vec<Complex64>,
    /// Roots removed at μ = 1 before root finding.
    pub trivial_roots: usize,
    /// Polynomial roots where the expanded molecule sum is not valid; never
    /// used for the verdict.
    pub untrusted_roots: Vec<Complex64>,
    /// Largest distance from a polynomial root to its nearest dense eigenvalue
    /// (`both` only), over roots outside the cluster radius.
    pub cross_method_discrepancy: Option<f64>,
    pub s: f64,
    pub gamma_sq_sum: f64,
}

impl SpectrumReport {
    pub fn maxwell_component_min(&self) -> f64 {
        self.maxwell_components.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }
}

fn polynomial_path(bd: &BlockDifferential) -> Result<(Vec<f64>, Vec<Complex64>, usize)> {
    let (r, k) = bd.polynomial_multipliers()?;
    Ok((bd.char_polynomial(), r, k))
}

fn maxwell_parts(bd: &BlockDifferential, mus: &[Complex64]) -> Vec<(Complex64, f64)> {
    mus.par_iter()
        .filter_map(|&mu| {
            let v = eigvec_back_substitute(mu, bd).ok()?;
            Some((mu, (v[0].norm_sqr() + v[1].norm_sqr()).sqrt()))
        })
        .collect()
}

pub fn resonance_verdict(bd: &BlockDifferential, method: Method, tol: f64) -> Result<SpectrumReport> {
    let (coeffs, proots, trivial) = polynomial_path(bd)?;
    let radius = bd.cluster_radius();
    // past the dense cap only the polynomial path runs
    let method = if method == Method::Both && bd.len() > N_DENSE_CAP { Method::Polynomial } else { method };
    let g = bd.cluster_radius();
    let trusted = |r: &Complex64| (*r - 1.0).norm() == 0.0 || g <= EXPANSION_VALIDITY * (*r - 1.0).norm();
    let untrusted: Vec<Complex64> = proots.iter().copied().filter(|r| !trusted(r)).collect();
    let (multipliers, discrepancy) = match method {
        Method::Polynomial => (proots.iter().copied().filter(|r| trusted(r)).collect::<Vec<_>>(), None),
        Method::Dense | Method::Both => {
            let ev = dense_eigenvalues(&assemble_full(bd, false)?)?;
            let disc = if method == Method::Both {
                let d = proots
                    .iter()
                    .filter(|r| (*r - 1.0).norm() > 100.0 * radius)
                    .map(|r| ev.iter().map(|e| (e - r).norm()).fold(f64::INFINITY, f64::min))
                    .fold(0.0, f64::max);
                Some(d)
            } else {
                None
            };
            (ev, disc)
        }
    };
    let max_abs_mu = multipliers.iter().map(|m| m.norm()).fold(0.0, f64::max);
    let off_pole: Vec<Complex64> =
        multipliers.iter().copied().filter(|m| (m - 1.0).norm() > 100.0 * radius.max(1e-12)).collect();
    Ok(SpectrumReport {
        method,
        d_variant: bd.d_variant,
        maxwell_components: maxwell_parts(bd, &off_pole),
        max_abs_mu,
        resonance: max_abs_mu > 1.0 + tol,
        resonance_tol: tol,
        multipliers,
        polynomial_coefficients: coeffs,
        polynomial_roots: proots,
        trivial_roots: trivial,
        untrusted_roots: untrusted,
        cross_method_discrepancy: discrepancy,
        s: bd.s,
        gamma_sq_sum: bd.gamma_sq_sum,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub pump: f64,
    pub max_abs_mu: f64,
    pub resonance: bool,
    pub maxwell_component_min: f64,
}

/// Verdict over pumping amplitudes; γₙ scale linearly with a_p, so each grid
/// value is applied as the factor pump/pump_ref to the reference couplings.
pub fn threshold_scan(
    c: &Couplings,
    pump_ref: f64,
    grid: &[f64],
    kappa: f64,
    d_variant: DVariant,
    method: Method,
    tol: f64,
) -> Result<Vec<ScanRow>> {
    if !(pump_ref > 0.0) {
        return Err(Error::Domain("reference pumping amplitude must be positive".into()));
    }
    grid.iter()
        .map(|&p| {
            let bd = assemble_blocks(&c.with_pump_scaled(p / pump_ref), kappa, d_variant)?;
            let r = resonance_verdict(&bd, method, tol)?;
            Ok(ScanRow {
                pump: p,
                max_abs_mu: r.max_abs_mu,
                resonance: r.resonance,
                maxwell_component_min: r.maxwell_component_min(),
            })
        })
        .collect()
}

/// Indices i where the verdict differs between rows i and i+1.
pub fn verdict_flips(rows: &[ScanRow]) -> Vec<usize> {
    rows.windows(2).enumerate().filter(|(_, w)| w[0].resonance != w[1].resonance).map(|(i, _)| i).collect()
}

/// Geometric grid of `steps` points from lo to hi.
pub fn log_grid(lo: f64, hi: f64, steps: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || steps < 2 {
        return Err(Error::Domain(format!("bad grid [{lo}, {hi}] with {steps} steps")));
    }
    let r = (hi / lo).ln() / (steps - 1) as f64;
    Ok((0..steps).map(|i| lo * (r * i as f64).exp()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ensemble(n: usize, seed: u64, ab: f64, g: f64) -> Couplings {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Couplings::uniform(0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = r.random_range(-1.0..1.0);
            c.alpha.push(ab * x);
            c.beta.push(ab * x * r.random_range(0.5..1.5));
            c.gamma.push(g * r.random_range(0.2..1.0));
        }
        c
    }

    fn close(a: f64, b: f64, t: f64) -> bool {
        (a - b).abs() <= t
    }

    #[test]
    fn undamped_uncoupled_is_identity() {
        let bd = assemble_blocks(&Couplings::uniform(3, 0.0, 0.0, 0.0), 0.0, DVariant::Identity).unwrap();
        assert!((bd.m - Matrix2::identity()).amax() < 1e-15);
        let r = resonance_verdict(&bd, Method::Dense, RESONANCE_TOL).unwrap();
        assert!(r.multipliers.iter().all(|m| (m - 1.0).norm() < 1e-12));
        assert!(!r.resonance);
    }

    #[test]
    fn m_matches_printed_form() {
        let c = ensemble(40, 1, 1e-3, 0.0);
        let kappa = 1e-7;
        let mut c2 = c.clone();
        let f = (1e-5 / c.sync_sum()).sqrt();
        c2.alpha.iter_mut().for_each(|a| *a *= f);
        c2.beta.iter_mut().for_each(|b| *b *= f);
        let bd = assemble_blocks(&c2, kappa, DVariant::Identity).unwrap();
        assert!(close(bd.s, 1e-5, 1e-18));
        let p = bd.m_printed().unwrap();
        // they differ by O(κS + κ²)
        assert!((bd.m - p).amax() < 1e-10, "{}", (bd.m - p).amax());
        let want = 1.0 - TWO_PI * 1e-7 - PI2 * 1e-5 / 2.0;
        assert!(close(bd.m[(0, 0)], want, 1e-10));
    }

    #[test]
    fn w_and_v_have_rotation_structure() {
        let kappa = 1e-4;
        let bd = assemble_blocks(&Couplings::uniform(1, 1.0, 1.0, 0.0), kappa, DVariant::Identity).unwrap();
        let pi = std::f64::consts::PI;
        let r = Matrix2::new(1.0 - kappa * pi, kappa / 2.0, -kappa / 2.0, 1.0 - kappa * pi);
        assert!((bd.v_hat - r * pi).amax() < 50.0 * kappa * kappa);
        // the inversion −1 flips the whole block relative to πR
        assert!((bd.w_hat + r * pi).amax() < 50.0 * kappa * kappa);
    }

    #[test]
    fn triangle_spectrum_is_union_of_blocks() {
        let c = ensemble(30, 2, 1e-2, 1e-2);
        let bd = assemble_blocks(&c, 1e-3, DVariant::GammaCorrected).unwrap();
        let ev = dense_eigenvalues(&assemble_full(&bd, true).unwrap()).unwrap();
        let m = bd.m.map(|x| Complex64::new(x, 0.0));
        let tr = m.trace();
        let det = m.determinant();
        let disc = (tr * tr - 4.0 * det).sqrt();
        let mut want = vec![(tr + disc) / 2.0, (tr - disc) / 2.0];
        for k in 0..30 {
            want.push(Complex64::new(1.0, 0.0));
            want.push(Complex64::new(bd.d22(k), 0.0));
        }
        for w in &want {
            let d = ev.iter().map(|e| (e - w).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-7, "{w}: {d}");
        }
    }

    #[test]
    fn zero_alpha_full_equals_triangle() {
        let mut c = ensemble(10, 3, 1e-2, 1e-2);
        c.alpha.iter_mut().for_each(|a| *a = 0.0);
        let bd = assemble_blocks(&c, 1e-3, DVariant::GammaCorrected).unwrap();
        assert_eq!(assemble_full(&bd, false).unwrap(), assemble_full(&bd, true).unwrap());
        let m = bd.reduced_matrix(Complex64::new(1.1, 0.2), SumMethod::Exact).unwrap();
        let want = bd.m.map(|x| Complex64::new(x, 0.0)) - Matrix2::identity() * Complex64::new(1.1, 0.2);
        assert!((m - want).camax() < 1e-15);
    }

    #[test]
    fn capacity_is_enforced() {
        let bd = assemble_blocks(&Couplings::uniform(N_DENSE_CAP + 1, 0.0, 0.0, 0.0), 0.0, DVariant::Identity).unwrap();
        assert!(matches!(assemble_full(&bd, false), Err(Error::Capacity { .. })));
    }

    #[test]
    fn single_molecule_four_by_four() {
        let c = Couplings::new(vec![3e-3], vec![2e-3], vec![1e-3]).unwrap();
        let bd = assemble_blocks(&c, 1e-4, DVariant::GammaCorrected).unwrap();
        let a = assemble_full(&bd, false).unwrap();
        assert_eq!(a.shape(), (4, 4));
        let ev = dense_eigenvalues(&a).unwrap();
        let (pr, trivial) = bd.polynomial_multipliers().unwrap();
        assert_eq!(trivial, 1);
        // with a single molecule the expanded sum is close but not exact
        for e in &ev {
            let d = pr.iter().map(|r| (r - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-6, "{e}: {d}");
        }
        let c = Couplings::new(vec![3e-3], vec![2e-3], vec![0.0]).unwrap();
        let bd = assemble_blocks(&c, 1e-4, DVariant::Identity).unwrap();
        let ev = dense_eigenvalues(&assemble_full(&bd, false).unwrap()).unwrap();
        let (pr, trivial) = bd.polynomial_multipliers().unwrap();
        assert_eq!(trivial, 2);
        for e in &ev {
            let d = pr.iter().map(|r| (r - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-9, "{e}: {d}");
        }
    }

    #[test]
    fn expansion_agrees_with_exact_sum() {
        let c = ensemble(50, 4, 1e-2, 1e-3);
        let bd = assemble_blocks(&c, 0.0, DVariant::GammaCorrected).unwrap();
        let gmax = 2.0 * PI2 * c.max_abs_gamma().powi(2);
        for mu in [Complex64::new(1.0 + 1e-2, 0.0), Complex64::new(1.0, 3e-3), Complex64::new(0.99, -0.02)] {
            assert!((mu - 1.0).norm() >= 100.0 * c.max_abs_gamma().powi(2));
            let ex = bd.reduced_matrix(mu, SumMethod::Exact).unwrap();
            let ap = bd.reduced_matrix(mu, SumMethod::Expanded).unwrap();
            let bound = 10.0 * (gmax / (mu - 1.0).norm()).powi(2);
            assert!((ex - ap).camax() <= bound, "{} > {bound}", (ex - ap).camax());
        }
    }

    #[test]
    fn reduced_matrix_rejects_poles() {
        let c = ensemble(3, 5, 1e-2, 1e-2);
        let bd = assemble_blocks(&c, 0.0, DVariant::GammaCorrected).unwrap();
        assert!(bd.reduced_matrix(Complex64::new(1.0, 0.0), SumMethod::Exact).is_err());
        assert!(bd.reduced_matrix(Complex64::new(bd.d22(1), 0.0), SumMethod::Exact).is_err());
    }

    #[test]
    fn polynomial_structure() {
        // no coupling, no damping: (μ−1)⁴·(1−μ)² = (μ−1)⁶
        let bd = assemble_blocks(&Couplings::uniform(2, 0.0, 0.0, 0.0), 0.0, DVariant::GammaCorrected).unwrap();
        let p = bd.char_polynomial();
        let want = [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0];
        for (a, b) in p.iter().zip(want) {
            assert!(close(*a, b, 1e-14));
        }
        // S → 0: μ⁵ coefficient is −(4 + tr M)
        let mut c = ensemble(20, 6, 1e-2, 1e-2);
        c.alpha.iter_mut().for_each(|a| *a = 0.0);
        let bd = assemble_blocks(&c, 1e-3, DVariant::GammaCorrected).unwrap();
        let p = bd.char_polynomial();
        assert!(close(p[1], -(4.0 + bd.m.trace()), 1e-14));
    }

    #[test]
    fn identity_variant_has_two_trivial_roots() {
        let c = ensemble(20, 7, 1e-2, 1e-2);
        let bd = assemble_blocks(&c, 1e-3, DVariant::Identity).unwrap();
        let (q, k) = deflate_unit_roots(&bd.char_polynomial(), 1e-12);
        assert_eq!(k, 2);
        assert_eq!(q.len(), 5);
    }

    #[test]
    fn known_roots() {
        let r = roots(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
        for k in 0..6 {
            let w = Complex64::from_polar(1.0, TWO_PI * k as f64 / 6.0);
            let d = r.iter().map(|x| (x - w).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-12);
        }
        let r = roots(&[1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0]).unwrap();
        assert!(r.iter().all(|x| (x - 1.0).norm() < 1e-2));
        assert!(roots(&[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn nontrivial_roots_match_dense_and_back_substitute() {
        let kappa = 1e-7;
        let c = ensemble(10, 8, 2e-3, 1e-4);
        let bd = assemble_blocks(&c, kappa, DVariant::GammaCorrected).unwrap();
        let a = assemble_full(&bd, false).unwrap();
        let ev = dense_eigenvalues(&a).unwrap();
        let (pr, _) = bd.polynomial_multipliers().unwrap();
        let radius = bd.cluster_radius();
        let mut checked = 0;
        for e in ev.iter().filter(|e| (*e - 1.0).norm() > 100.0 * radius) {
            let d = pr.iter().map(|r| (r - e).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 1e-10, "{e}: {d}");
            let det = bd.reduced_matrix(*e, SumMethod::Exact).unwrap().determinant();
            assert!(det.norm() < 1e-8);
            let v = eigvec_back_substitute(*e, &bd).unwrap();
            assert!(eig_residual(&a, *e, &v) < 1e-6);
            assert!(v[0].norm() + v[1].norm() > 0.0);
            checked += 1;
        }
        // two conjugate pairs
        assert_eq!(checked, 4);
    }

    #[test]
    fn damped_unpumped_is_stable() {
        let c = ensemble(30, 9, 1e-4, 0.0);
        let bd = assemble_blocks(&c, 1e-3, DVariant::GammaCorrected).unwrap();
        let r = resonance_verdict(&bd, Method::Both, RESONANCE_TOL).unwrap();
        assert!(r.max_abs_mu <= 1.0 + RESONANCE_TOL, "{}", r.max_abs_mu);
        assert!(!r.resonance);
    }

    #[test]
    fn not_a_multiplier_is_refused() {
        let c = ensemble(5, 10, 1e-2, 1e-3);
        let bd = assemble_blocks(&c, 1e-3, DVariant::GammaCorrected).unwrap();
        assert!(eigvec_back_substitute(Complex64::new(0.5, 0.0), &bd).is_err());
    }

    #[test]
    fn scan_records_every_point() {
        let c = ensemble(20, 11, 1e-3, 1e-4);
        let grid = log_grid(1.0, 100.0, 5).unwrap();
        let rows = threshold_scan(&c, 1.0, &grid, 1e-7, DVariant::GammaCorrected, Method::Polynomial, RESONANCE_TOL)
            .unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|r| r.max_abs_mu.is_finite()));
    }
}
