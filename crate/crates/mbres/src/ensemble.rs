//! Random molecular ensembles, cavity eigenmodes of the cuboid and the
//! synchronization sums S and Σ with their law-of-large-numbers predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{Couplings, DimensionlessParams, PhysicalParams};
use crate::sum::tree_sum_by;

type V3 = [f64; 3];

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &V3) -> f64 {
    dot(a, a).sqrt()
}

const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cavity {
    pub dims: V3,
    pub mode_index: [u32; 3],
    /// Unit polarization vector a_k, orthogonal to the wave vector.
    pub amplitude: V3,
}

impl Cavity {
    pub fn wave_vector(&self) -> V3 {
        [0, 1, 2].map(|j| self.mode_index[j] as f64 * PI / self.dims[j])
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Domain(format!("cavity dimensions must be positive, got {:?}", self.dims)));
        }
        if self.mode_index.contains(&0) {
            return Err(Error::Domain(format!("mode indices must be >= 1, got {:?}", self.mode_index)));
        }
        let a = norm(&self.amplitude);
        if (a - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Domain(format!("mode amplitude must be a unit vector, |a| = {a}")));
        }
        let k = self.wave_vector();
        let c = dot(&k, &self.amplitude) / norm(&k);
        if c.abs() > ORTHO_TOL {
            return Err(Error::Domain(format!(
                "mode amplitude is not orthogonal to the wave vector (cosine {c:.3e})"
            )));
        }
        Ok(())
    }

    pub fn mode(&self, x: &V3) -> V3 {
        mode_unchecked(x, &self.mode_index, &self.dims, &self.amplitude)
    }
}

fn mode_unchecked(x: &V3, k: &[u32; 3], dims: &V3, amp: &V3) -> V3 {
    let c = (8.0 / (dims[0] * dims[1] * dims[2])).sqrt();
    let ph = [0, 1, 2].map(|j| k[j] as f64 * PI * x[j] / dims[j]);
    let (s, co) = (ph.map(f64::sin), ph.map(f64::cos));
    [
        c * amp[0] * co[0] * s[1] * s[2],
        c * amp[1] * s[0] * co[1] * s[2],
        c * amp[2] * s[0] * s[1] * co[2],
    ]
}

/// Normalized eigenmode of the rectangular cuboid, ∫_V X² = 1.
pub fn cuboid_mode(x: &V3, k: [u32; 3], dims: V3, amp: V3) -> Result<V3> {
    let cav = Cavity { dims, mode_index: k, amplitude: amp };
    cav.validate()?;
    Ok(cav.mode(x))
}

/// Region holding the active molecules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActiveRegion {
    Box { lo: V3, hi: V3 },
    /// Circular rod along x₁ with axis at `center` in the (x₂, x₃) plane.
    Cylinder { radius: f64, x_range: [f64; 2], center: [f64; 2] },
}

impl ActiveRegion {
    /// Rod spanning the cavity length with the given volume.
    pub fn rod(cavity: &Cavity, volume: f64) -> Self {
        let len = cavity.dims[0];
        ActiveRegion::Cylinder {
            radius: (volume / (PI * len)).sqrt(),
            x_range: [0.0, len],
            center: [cavity.dims[1] / 2.0, cavity.dims[2] / 2.0],
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            ActiveRegion::Box { lo, hi } => (0..3).map(|j| hi[j] - lo[j]).product(),
            ActiveRegion::Cylinder { radius, x_range, .. } => PI * radius * radius * (x_range[1] - x_range[0]),
        }
    }

    pub fn validate(&self, cavity: &Cavity) -> Result<()> {
        let d = cavity.dims;
        let ok = match self {
            ActiveRegion::Box { lo, hi } => (0..3).all(|j| 0.0 <= lo[j] && lo[j] < hi[j] && hi[j] <= d[j]),
            ActiveRegion::Cylinder { radius, x_range, center } => {
                *radius > 0.0
                    && 0.0 <= x_range[0]
                    && x_range[0] < x_range[1]
                    && x_range[1] <= d[0]
                    && center[0] - radius >= 0.0
                    && center[0] + radius <= d[1]
                    && center[1] - radius >= 0.0
                    && center[1] + radius <= d[2]
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("active region {self:?} does not fit inside the cavity {d:?}")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> V3 {
        match self {
            ActiveRegion::Box { lo, hi } => [0, 1, 2].map(|j| lo[j] + (hi[j] - lo[j]) * rng.random::<f64>()),
            ActiveRegion::Cylinder { radius, x_range, center } => {
                let x = x_range[0] + (x_range[1] - x_range[0]) * rng.random::<f64>();
                let r = radius * rng.random::<f64>().sqrt();
                let t = 2.0 * PI * rng.random::<f64>();
                [x, center[0] + r * t.cos(), center[1] + r * t.sin()]
            }
        }
    }
}

/// Mean of X² over a box, in closed form. Equals 1/|V| when every side spans
/// a whole number of half-wavelengths.
pub fn box_mean_square(cavity: &Cavity, lo: &V3, hi: &V3) -> f64 {
    let k = cavity.wave_vector();
    // mean of cos²(k x) over [lo, hi]
    let mean_cos2 = |j: usize| {
        let kk = k[j];
        let w = hi[j] - lo[j];
        0.5 + ((2.0 * kk * hi[j]).sin() - (2.0 * kk * lo[j]).sin()) / (4.0 * kk * w)
    };
    let c2 = 8.0 / cavity.volume();
    let mc = [mean_cos2(0), mean_cos2(1), mean_cos2(2)];
    let ms = mc.map(|m| 1.0 - m);
    let a = cavity.amplitude;
    c2 * (a[0] * a[0] * mc[0] * ms[1] * ms[2]
        + a[1] * a[1] * ms[0] * mc[1] * ms[2]
        + a[2] * a[2] * ms[0] * ms[1] * mc[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Polycrystalline: dipole directions uniform on the sphere.
    H1,
    /// Crystalline: one common dipole vector.
    H2,
}

/// Conversion from vector fields to (αₙ, βₙ, γₙ): αₙ = alpha_coef·(P·X̃) etc.,
/// where X̃ = mode_scale·X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub kappa: f64,
    pub alpha_coef: f64,
    pub beta_coef: f64,
    pub gamma_coef: f64,
    pub dipole: f64,
    pub pump: f64,
    pub mode_scale: f64,
    /// Molecule count of the physical system (target of the desk rescaling).
    pub n_reference: f64,
}

impl Scales {
    pub fn from_physical(p: &PhysicalParams) -> Result<Self> {
        p.validate()?;
        let hc = p.planck * p.light_speed;
        Ok(Self {
            kappa: p.sigma1() / 2.0,
            alpha_coef: 2.0 * p.light_speed / p.pump_frequency,
            beta_coef: 1.0 / hc,
            gamma_coef: 1.0 / hc,
            dipole: p.dipole_magnitude,
            pump: p.pump_amplitude,
            mode_scale: 1.0,
            n_reference: p.molecule_count,
        })
    }

    /// Unit dipole and pump vectors and a mode rescaled to unit RMS; the
    /// scales then act directly as the coefficients.
    pub fn from_dimensionless(d: &DimensionlessParams, cavity: &Cavity) -> Result<Self> {
        d.validate()?;
        Ok(Self {
            kappa: d.kappa,
            alpha_coef: d.alpha_scale,
            beta_coef: d.beta_scale,
            gamma_coef: d.gamma_scale,
            dipole: 1.0,
            pump: 1.0,
            mode_scale: cavity.volume().sqrt(),
            n_reference: d.n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub hypothesis: Hypothesis,
    pub n: usize,
    pub seed: u64,
    pub cavity: Cavity,
    pub active: ActiveRegion,
    /// Direction of the common dipole under H2.
    pub crystal_dipole: Option<V3>,
    /// Multiply αₙ by n_reference/n so that S keeps its physical magnitude.
    pub rescale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub dipole: V3,
    pub position: V3,
    pub mode_value: V3,
    pub pump_value: V3,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Ensemble {
    pub spec: EnsembleSpec,
    pub scales: Scales,
    pub rescale_factor: f64,
    pub molecules: Vec<Molecule>,
    pub couplings: Couplings,
}

fn unit_sphere<R: Rng>(rng: &mut R) -> V3 {
    loop {
        let v: V3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let r = norm(&v);
        if r > 1e-12 {
            return v.map(|x| x / r);
        }
    }
}

pub fn sample_ensemble(spec: &EnsembleSpec, scales: &Scales) -> Result<Ensemble> {
    if spec.n == 0 {
        return Err(Error::Domain("ensemble needs at least one molecule".into()));
    }
    spec.cavity.validate()?;
    spec.active.validate(&spec.cavity)?;
    let crystal = match (spec.hypothesis, spec.crystal_dipole) {
        (Hypothesis::H2, Some(p)) => {
            let r = norm(&p);
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Domain("crystal dipole direction must be nonzero".into()));
            }
            Some(p.map(|x| x / r))
        }
        (Hypothesis::H2, None) => return Err(Error::Domain("hypothesis H2 requires a crystal dipole".into())),
        (Hypothesis::H1, _) => None,
    };
    let rescale_factor = if spec.rescale { scales.n_reference / spec.n as f64 } else { 1.0 };

    let molecules: Vec<Molecule> = (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let position = spec.active.sample(&mut rng);
            let dir = match crystal {
                Some(p) => p,
                None => unit_sphere(&mut rng),
            };
            let pump_dir = unit_sphere(&mut rng);
            let dipole = dir.map(|x| x * scales.dipole);
            let pump_value = pump_dir.map(|x| x * scales.pump);
            let mode_value = spec.cavity.mode(&position);
            let px = dot(&dipole, &mode_value) * scales.mode_scale;
            let pa = dot(&dipole, &pump_value);
            Molecule {
                dipole,
                position,
                mode_value,
                pump_value,
                alpha: scales.alpha_coef * px * rescale_factor,
                beta: scales.beta_coef * px,
                gamma: scales.gamma_coef * pa,
            }
        })
        .collect();
    let couplings = Couplings {
        alpha: molecules.iter().map(|m| m.alpha).collect(),
        beta: molecules.iter().map(|m| m.beta).collect(),
        gamma: molecules.iter().map(|m| m.gamma).collect(),
    };
    Ok(Ensemble { spec: spec.clone(), scales: scales.clone(), rescale_factor, molecules, couplings })
}

fn mean_and_se<F: Fn(usize) -> f64>(n: usize, f: F) -> (f64, f64) {
    let nf = n as f64;
    let mean = tree_sum_by(n, &f) / nf;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = tree_sum_by(n, |i| (f(i) - mean).powi(2)) / (nf - 1.0);
    (mean, (var / nf).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct SumReport {
    pub n: usize,
    pub s_empirical: f64,
    pub s_analytic: f64,
    pub s_std_error: f64,
    pub s_ratio: f64,
    pub sigma_empirical: f64,
    pub sigma_analytic: f64,
    pub sigma_std_error: f64,
    pub sigma_ratio: f64,
    /// Σ with the mode second moment taken as |aⁱ|²/(3|V|), the value quoted
    /// in the literature this model follows; a factor 3 below the consistent one.
    pub sigma_analytic_printed: f64,
    /// Σ αₙβₙγₙ², the sum entering the reduced matrix.
    pub gamma_sq_sum: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    fn effective_volume(&self) -> f64 {
        self.spec.cavity.volume() / (self.scales.mode_scale * self.scales.mode_scale)
    }

    /// E(P·X̃)² under the sampling hypothesis with the ergodic mode moments
    /// E[XⁱXʲ] = δ|aⁱ|²/|V|.
    pub fn expected_px_sq(&self) -> f64 {
        let v = self.effective_volume();
        let p2 = self.scales.dipole * self.scales.dipole;
        match self.spec.hypothesis {
            Hypothesis::H1 => p2 / (3.0 * v),
            Hypothesis::H2 => {
                let d = self.spec.crystal_dipole.unwrap_or([1.0, 0.0, 0.0]);
                let d = d.map(|x| x / norm(&d));
                let a = self.spec.cavity.amplitude;
                p2 * (0..3).map(|i| d[i] * d[i] * a[i] * a[i]).sum::<f64>() / v
            }
        }
    }

    /// S_analytic = N·E(αₙβₙ), including the desk rescaling.
    pub fn s_analytic(&self) -> f64 {
        let n = self.len() as f64 * self.rescale_factor;
        n * self.scales.alpha_coef * self.scales.beta_coef * self.expected_px_sq()
    }

    pub fn sigma_analytic(&self) -> f64 {
        let crystal = self.spec.crystal_dipole.map(|d| d.map(|x| x / norm(&d)));
        sigma_analytic(
            self.spec.hypothesis,
            self.scales.dipole,
            self.scales.pump,
            self.effective_volume(),
            &self.spec.cavity.amplitude,
            crystal.as_ref(),
        )
    }

    pub fn sums(&self) -> SumReport {
        let n = self.len();
        let c = &self.couplings;
        let (_, se_ab) = mean_and_se(n, |i| c.alpha[i] * c.beta[i]);
        let ms = self.scales.mode_scale;
        let term = |i: usize| {
            let m = &self.molecules[i];
            let px = dot(&m.dipole, &m.mode_value) * ms;
            let pa = dot(&m.dipole, &m.pump_value);
            px * px * pa * pa
        };
        let (sig, sig_se) = mean_and_se(n, term);
        let s_an = self.s_analytic();
        let sig_an = self.sigma_analytic();
        let printed = sig_an / 3.0;
        SumReport {
            n,
            s_empirical: c.sync_sum(),
            s_analytic: s_an,
            s_std_error: se_ab * n as f64,
            s_ratio: c.sync_sum() / s_an,
            sigma_empirical: sig,
            sigma_analytic: sig_an,
            sigma_std_error: sig_se,
            sigma_ratio: sig / sig_an,
            sigma_analytic_printed: printed,
            gamma_sq_sum: c.gamma_sq_sum(),
        }
    }

    /// Sample means and standard errors of (P·e₁)², (P¹P²)², (P¹)⁴.
    pub fn sphere_moments(&self) -> MomentReport {
        let n = self.len();
        let p = |i: usize| self.molecules[i].dipole;
        let (e1, e1_se) = mean_and_se(n, |i| p(i)[0] * p(i)[0]);
        let (p12, p12_se) = mean_and_se(n, |i| (p(i)[0] * p(i)[1]).powi(2));
        let (p4, p4_se) = mean_and_se(n, |i| p(i)[0].powi(4));
        let m2 = self.scales.dipole.powi(2);
        MomentReport {
            pe1_sq: (e1, e1_se, m2 / 3.0),
            p1p2_sq: (p12, p12_se, m2 * m2 / 15.0),
            p1_fourth: (p4, p4_se, m2 * m2 / 5.0),
        }
    }

    /// Component-wise sample means (with SE) of X(xₙ) and a_p(xₙ).
    pub fn first_moments(&self) -> [(f64, f64); 6] {
        let n = self.len();
        let m = &self.molecules;
        [
            mean_and_se(n, |i| m[i].mode_value[0]),
            mean_and_se(n, |i| m[i].mode_value[1]),
            mean_and_se(n, |i| m[i].mode_value[2]),
            mean_and_se(n, |i| m[i].pump_value[0]),
            mean_and_se(n, |i| m[i].pump_value[1]),
            mean_and_se(n, |i| m[i].pump_value[2]),
        ]
    }

    /// (1/N)Σ X²(xₙ) with its standard error.
    pub fn mode_mean_square(&self) -> (f64, f64) {
        let m = &self.molecules;
        mean_and_se(self.len(), |i| dot(&m[i].mode_value, &m[i].mode_value))
    }
}

/// (sample mean, standard error, exact value)
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub pe1_sq: (f64, f64, f64),
    pub p1p2_sq: (f64, f64, f64),
    pub p1_fourth: (f64, f64, f64),
}

/// Σ = E(P·X)²(P·a_p)² from the independence of dipole, mode value and pump
/// direction, with E[XⁱXʲ] = δ|aⁱ|²/|V| and E[aˡaᵐ] = δa_p²/3.
pub fn sigma_analytic(
    hypothesis: Hypothesis,
    dipole: f64,
    pump: f64,
    volume: f64,
    amp: &V3,
    crystal: Option<&V3>,
) -> f64 {
    let p2 = dipole * dipole;
    match hypothesis {
        Hypothesis::H1 => pump * pump * p2 * p2 / (9.0 * volume),
        Hypothesis::H2 => {
            let d = crystal.copied().unwrap_or([1.0, 0.0, 0.0]);
            let s: f64 = (0..3).map(|i| d[i] * d[i] * amp[i] * amp[i]).sum();
            pump * pump * p2 * p2 * s / (3.0 * volume)
        }
    }
}
