//! Physical and dimensionless constants, per-molecule couplings and the
//! dynamical state types shared by the other modules.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::tree_sum_by;

/// Raw laser constants in Gaussian units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    /// Ω_p, 1/s
    pub pump_frequency: f64,
    /// a_p, esu/cm
    pub pump_amplitude: f64,
    /// |P|, esu·cm
    pub dipole_magnitude: f64,
    /// σ, 1/s
    pub conductivity: f64,
    /// ħ, erg·s
    pub planck: f64,
    /// c, cm/s
    pub light_speed: f64,
    /// (l₁, l₂, l₃), cm
    pub cavity_dims: [f64; 3],
    /// |V_a|, cm³
    pub active_volume: f64,
    pub molecule_count: f64,
    pub mode_index: [u32; 3],
}

impl PhysicalParams {
    /// Ruby laser values: chromium dipole of 4 Debye, 694 nm pumping, a
    /// 12×2×2 cm cavity with a rod of 0.6 cm diameter.
    pub fn ruby() -> Self {
        Self {
            pump_frequency: 3e15,
            pump_amplitude: 1.7e-6,
            dipole_magnitude: 4e-18,
            conductivity: 1e-2,
            planck: 1.055e-27,
            light_speed: 3e10,
            cavity_dims: [12.0, 2.0, 2.0],
            active_volume: 3.4,
            molecule_count: 1e20,
            mode_index: [4, 4, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("pump_frequency", self.pump_frequency),
            ("dipole_magnitude", self.dipole_magnitude),
            ("conductivity", self.conductivity),
            ("planck", self.planck),
            ("light_speed", self.light_speed),
            ("cavity_dims[0]", self.cavity_dims[0]),
            ("cavity_dims[1]", self.cavity_dims[1]),
            ("cavity_dims[2]", self.cavity_dims[2]),
            ("active_volume", self.active_volume),
            ("molecule_count", self.molecule_count),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
            }
        }
        // Zero pumping is allowed: it is the unpumped reference case.
        if !(self.pump_amplitude.is_finite() && self.pump_amplitude >= 0.0) {
            return Err(Error::Domain(format!("pump_amplitude must be nonnegative, got {}", self.pump_amplitude)));
        }
        if self.mode_index.contains(&0) {
            return Err(Error::Domain(format!("mode indices must be >= 1, got {:?}", self.mode_index)));
        }
        if self.active_volume > self.cavity_volume() {
            return Err(Error::Domain("active volume exceeds the cavity volume".into()));
        }
        Ok(())
    }

    pub fn cavity_volume(&self) -> f64 {
        self.cavity_dims.iter().product()
    }

    /// σ₁ = cσ/Ω_p
    pub fn sigma1(&self) -> f64 {
        self.light_speed * self.conductivity / self.pump_frequency
    }

    /// RMS value of a normalized cavity mode, 1/√|V|.
    pub fn mode_rms(&self) -> f64 {
        1.0 / self.cavity_volume().sqrt()
    }
}

/// Dimensionless magnitudes entering the scaled equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionlessParams {
    pub kappa: f64,
    pub alpha_scale: f64,
    pub beta_scale: f64,
    pub gamma_scale: f64,
    /// Molecule count the scales refer to.
    #[serde(default = "default_reference_count")]
    pub n: f64,
}

fn default_reference_count() -> f64 {
    1e20
}

impl DimensionlessParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && (0.0..1.0).contains(&self.kappa)) {
            return Err(Error::Domain(format!("kappa must lie in [0, 1), got {}", self.kappa)));
        }
        for (name, v) in [
            ("alpha_scale", self.alpha_scale),
            ("beta_scale", self.beta_scale),
            ("gamma_scale", self.gamma_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Domain(format!("{name} must be nonnegative and finite, got {v}")));
            }
        }
        if !(self.n.is_finite() && self.n >= 1.0) {
            return Err(Error::Domain(format!("n must be >= 1, got {}", self.n)));
        }
        Ok(())
    }
}

pub fn derive_dimensionless(p: &PhysicalParams) -> Result<DimensionlessParams> {
    p.validate()?;
    let x = p.mode_rms();
    let hc = p.planck * p.light_speed;
    Ok(DimensionlessParams {
        kappa: p.sigma1() / 2.0,
        alpha_scale: 2.0 * p.light_speed * p.dipole_magnitude * x / p.pump_frequency,
        beta_scale: p.dipole_magnitude * x / hc,
        gamma_scale: p.dipole_magnitude * p.pump_amplitude / hc,
        n: p.molecule_count,
    })
}

/// Per-molecule coupling constants (αₙ, βₙ, γₙ), the only ensemble data the
/// dynamics needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Couplings {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if alpha.len() != beta.len() || alpha.len() != gamma.len() {
            return Err(Error::Domain(format!(
                "coupling lengths differ: {} / {} / {}",
                alpha.len(),
                beta.len(),
                gamma.len()
            )));
        }
        if alpha.iter().chain(&beta).chain(&gamma).any(|v| !v.is_finite()) {
            return Err(Error::Domain("couplings must be finite".into()));
        }
        Ok(Self { alpha, beta, gamma })
    }

    pub fn uniform(n: usize, alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha: vec![alpha; n], beta: vec![beta; n], gamma: vec![gamma; n] }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    /// S = Σ αₙβₙ
    pub fn sync_sum(&self) -> f64 {
        tree_sum_by(self.len(), |i| self.alpha[i] * self.beta[i])
    }

    /// Σ αₙβₙγₙ²
    pub fn gamma_sq_sum(&self) -> f64 {
        tree_sum_by(self.len(), |i| self.alpha[i] * self.beta[i] * self.gamma[i] * self.gamma[i])
    }

    pub fn max_abs_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, g| m.max(g.abs()))
    }

    /// Same molecules with the pumping amplitudes multiplied by `factor`.
    pub fn with_pump_scaled(&self, factor: f64) -> Self {
        Self {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.iter().map(|g| g * factor).collect(),
        }
    }
}

pub type Spinor = [Complex64; 2];

/// (a, ȧ, c₁ … c_N)
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub a: f64,
    pub b: f64,
    pub c: Vec<Spinor>,
}

/// (a, ȧ, z₁ … z_N) with zₙ = c̄ₙ,₁cₙ,₂
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub a: f64,
    pub b: f64,
    pub z: Vec<Complex64>,
}

/// Hemisphere of the Bloch sphere: `Upper` is S²₊ where |c₁| > |c₂|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Upper,
    Lower,
}

/// Guard band around the equator |z| = 1/2 where the reduced chart is refused.
pub const CHART_GUARD: f64 = 1e-6;
const Z_TOL: f64 = 1e-12;

pub fn hopf_project(c: &Spinor) -> Complex64 {
    c[0].conj() * c[1]
}

/// (|c₁|², |c₂|²) from z on the requested hemisphere.
pub fn populations_from_z(z: Complex64, branch: Branch) -> Result<(f64, f64)> {
    let r = z.norm();
    if r > 0.5 + Z_TOL || !r.is_finite() {
        return Err(Error::Domain(format!("|z| = {r} exceeds 1/2")));
    }
    let root = (1.0 - 4.0 * r * r).max(0.0).sqrt();
    let hi = 0.5 * (1.0 + root);
    let lo = 0.5 * (1.0 - root);
    Ok(match branch {
        Branch::Upper => (hi, lo),
        Branch::Lower => (lo, hi),
    })
}

/// Inversion |c₂|² − |c₁|² on the requested hemisphere.
pub fn inversion_from_z(z: Complex64, branch: Branch) -> Result<f64> {
    let (p1, p2) = populations_from_z(z, branch)?;
    Ok(p2 - p1)
}

/// Gauge representative with real nonnegative c₁ projecting to z.
pub fn lift(z: Complex64, branch: Branch) -> Result<Spinor> {
    let (p1, _) = populations_from_z(z, branch)?;
    let c1 = p1.sqrt();
    if c1 == 0.0 {
        return Ok([Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    }
    Ok([Complex64::new(c1, 0.0), z / c1])
}

impl FullState {
    /// Zero field, every molecule in the lower level.
    pub fn ground(n: usize) -> Self {
        Self { a: 0.0, b: 0.0, c: vec![[Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]; n] }
    }

    pub fn project(&self) -> ReducedState {
        ReducedState { a: self.a, b: self.b, z: self.c.iter().map(hopf_project).collect() }
    }

    pub fn max_norm_defect(&self) -> f64 {
        self.c.iter().map(|c| (c[0].norm_sqr() + c[1].norm_sqr() - 1.0).abs()).fold(0.0, f64::max)
    }
}

impl ReducedState {
    pub fn ground(n: usize) -> Self {
        Self { a: 0.0, b: 0.0, z: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn lift(&self, branch: Branch) -> Result<FullState> {
        let c = self.z.iter().map(|&z| lift(z, branch)).collect::<Result<Vec<_>>>()?;
        Ok(FullState { a: self.a, b: self.b, c })
    }

    /// Flat real coordinates (a, b, Re z₁, Im z₁, …).
    pub fn to_coords(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + 2 * self.z.len());
        v.push(self.a);
        v.push(self.b);
        for z in &self.z {
            v.push(z.re);
            v.push(z.im);
        }
        v
    }

    pub fn from_coords(v: &[f64]) -> Result<Self> {
        if v.len() < 2 || !v.len().is_multiple_of(2) {
            return Err(Error::Domain(format!("coordinate vector of length {} is malformed", v.len())));
        }
        let z = v[2..].chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
        Ok(Self { a: v[0], b: v[1], z })
    }

    /// Refuses states too close to the equator for the reduced chart.
    pub fn check_chart(&self) -> Result<()> {
        for (index, z) in self.z.iter().enumerate() {
            let modulus = z.norm();
            if !(modulus < 0.5 - CHART_GUARD) {
                return Err(Error::ChartSingularity { index, modulus });
            }
        }
        Ok(())
    }
}
