//! TOML run configuration: constants, ensemble and run options, resolved
//! into the typed inputs of the other modules.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::ensemble::{ActiveRegion, Cavity, EnsembleSpec, Hypothesis, Scales};
use crate::error::{Error, Result};
use crate::kernels::O_FACTOR;
use crate::ode::OdeSettings;
use crate::params::{DimensionlessParams, PhysicalParams};
use crate::spectrum::{DVariant, Method, RESONANCE_TOL};

/// κ used when the constants are physical and no override is given. The
/// ruby constants give σ₁/2 = 5·10⁻⁸; downstream numbers are quoted at 10⁻⁷.
pub const DEFAULT_KAPPA: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub physical: Option<PhysicalParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensionless: Option<DimensionlessParams>,
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    #[serde(default = "default_hypothesis")]
    pub hypothesis: Hypothesis,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Taken from [physical] when absent there, else [4, 4, 4].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_index: Option<[u32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity_dims: Option<[f64; 3]>,
    /// Unit polarization of the mode; a transverse default is derived from k.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<[f64; 3]>,
    /// Defaults to a centred rod of the physical active volume.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<ActiveRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crystal_dipole: Option<[f64; 3]>,
    #[serde(default)]
    pub rescale: bool,
}

fn default_hypothesis() -> Hypothesis {
    Hypothesis::H1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Overrides κ from the constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Use σ₁/2 from the physical constants instead of the default κ.
    #[serde(default)]
    pub derived_kappa: bool,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    /// Constant in the |r| ≤ C·ε reading of O(ε).
    #[serde(default = "default_factor")]
    pub comparison_factor: f64,
    #[serde(default = "default_d_variant")]
    pub d_variant: DVariant,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_resonance_tol")]
    pub resonance_tol: f64,
    /// Reference pumping amplitude for threshold scans in dimensionless runs.
    #[serde(default = "default_pump_ref")]
    pub pump_reference: f64,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_factor() -> f64 {
    O_FACTOR
}
fn default_d_variant() -> DVariant {
    DVariant::GammaCorrected
}
fn default_method() -> Method {
    Method::Both
}
fn default_resonance_tol() -> f64 {
    RESONANCE_TOL
}
fn default_pump_ref() -> f64 {
    1.0
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            kappa: None,
            derived_kappa: false,
            rel_tol: default_tol(),
            abs_tol: default_tol(),
            comparison_factor: default_factor(),
            d_variant: default_d_variant(),
            method: default_method(),
            resonance_tol: default_resonance_tol(),
            pump_reference: default_pump_ref(),
        }
    }
}

/// Everything a subcommand needs, validated.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub kappa: f64,
    pub scales: Scales,
    pub spec: EnsembleSpec,
    pub ode: OdeSettings,
    /// a_p the sampled γₙ correspond to.
    pub pump_reference: f64,
}

fn transverse_unit(k: [f64; 3]) -> [f64; 3] {
    // k × e_j for the axis least aligned with k
    let j = (0..3).min_by(|&a, &b| k[a].abs().total_cmp(&k[b].abs())).unwrap_or(0);
    let mut e = [0.0; 3];
    e[j] = 1.0;
    let c = [k[1] * e[2] - k[2] * e[1], k[2] * e[0] - k[0] * e[2], k[0] * e[1] - k[1] * e[0]];
    let r = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    c.map(|x| x / r)
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }

    /// Ruby constants, polycrystalline rod, desk rescaling on.
    pub fn paper_constants(n: usize, seed: u64) -> Self {
        Self {
            physical: Some(PhysicalParams::ruby()),
            dimensionless: None,
            ensemble: EnsembleSection {
                hypothesis: Hypothesis::H1,
                n,
                seed,
                mode_index: None,
                cavity_dims: None,
                amplitude: None,
                active: None,
                crystal_dipole: None,
                rescale: true,
            },
            run: RunSection::default(),
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let (phys, dimless) = match (&self.physical, &self.dimensionless) {
            (Some(p), None) => (Some(p), None),
            (None, Some(d)) => (None, Some(d)),
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either [physical] or [dimensionless], not both".into()))
            }
            (None, None) => return Err(Error::Config("missing [physical] or [dimensionless] section".into())),
        };
        let e = &self.ensemble;
        if e.n == 0 {
            return Err(Error::Config("ensemble.n must be at least 1".into()));
        }
        let dims = e.cavity_dims.or(phys.map(|p| p.cavity_dims)).unwrap_or([12.0, 2.0, 2.0]);
        let mode_index = e.mode_index.or(phys.map(|p| p.mode_index)).unwrap_or([4, 4, 4]);
        let mut cavity = Cavity { dims, mode_index, amplitude: [0.0; 3] };
        cavity.amplitude = e.amplitude.unwrap_or_else(|| transverse_unit(cavity.wave_vector()));
        cavity.validate().map_err(|err| Error::Config(err.to_string()))?;
        let active = match (&e.active, phys) {
            (Some(a), _) => a.clone(),
            (None, Some(p)) => ActiveRegion::rod(&cavity, p.active_volume),
            (None, None) => return Err(Error::Config("ensemble.active is required with [dimensionless]".into())),
        };
        let scales = match (phys, dimless) {
            (Some(p), _) => Scales::from_physical(p)?,
            (_, Some(d)) => Scales::from_dimensionless(d, &cavity)?,
            _ => unreachable!(),
        };
        let r = &self.run;
        let kappa = match (r.kappa, phys, r.derived_kappa) {
            (Some(k), _, _) => k,
            (None, Some(_), true) => scales.kappa,
            (None, Some(_), false) => DEFAULT_KAPPA,
            (None, None, _) => scales.kappa,
        };
        if !(kappa.is_finite() && (0.0..1.0).contains(&kappa)) {
            return Err(Error::Config(format!("kappa must lie in [0, 1), got {kappa}")));
        }
        let ode = OdeSettings { rel_tol: r.rel_tol, abs_tol: r.abs_tol, ..OdeSettings::default() };
        ode.validate().map_err(|err| Error::Config(err.to_string()))?;
        if !(r.comparison_factor > 0.0 && r.resonance_tol >= 0.0) {
            return Err(Error::Config("comparison_factor must be positive and resonance_tol nonnegative".into()));
        }
        let pump_reference = match phys {
            Some(p) => p.pump_amplitude,
            None => r.pump_reference,
        };
        let spec = EnsembleSpec {
            hypothesis: e.hypothesis,
            n: e.n,
            seed: e.seed,
            cavity,
            active,
            crystal_dipole: e.crystal_dipole,
            rescale: e.rescale,
        };
        spec.active.validate(&spec.cavity).map_err(|err| Error::Config(err.to_string()))?;
        if spec.hypothesis == Hypothesis::H2 && spec.crystal_dipole.is_none() {
            return Err(Error::Config("hypothesis H2 requires ensemble.crystal_dipole".into()));
        }
        Ok(Resolved { config: self.clone(), kappa, scales, spec, ode, pump_reference })
    }
}
