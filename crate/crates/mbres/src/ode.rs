//! Dormand–Prince 5(4) for real systems, adaptive or with a fixed step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// Embedded error control with the mixed tolerance below.
    Adaptive,
    /// A fixed number of steps, no error control. The result is then a
    /// smooth function of the initial data, which finite differences need.
    Fixed { steps: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub method: Method,
}

impl Default for OdeSettings {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-10, max_step: 0.25, method: Method::Adaptive }
    }
}

impl OdeSettings {
    pub fn fixed(steps: usize) -> Self {
        Self { method: Method::Fixed { steps }, ..Self::default() }
    }

    pub fn with_tol(tol: f64) -> Self {
        Self { rel_tol: tol, abs_tol: tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(t > 0.0 && t <= 1e-3) {
                return Err(Error::Domain(format!("{name} = {t} outside (0, 1e-3]")));
            }
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Domain(format!("max_step = {} must be positive", self.max_step)));
        }
        if let Method::Fixed { steps: 0 } = self.method {
            return Err(Error::Domain("fixed-step integration needs at least one step".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const MAX_STEPS: usize = 2_000_000;

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y1: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self { k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n], y1: vec![0.0; n] }
    }
}

fn combo(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..y.len() {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] = y[i] + h * s;
    }
}

/// One step from (t, y) with k[0] = f(t, y) already filled; leaves the new
/// state in `w.y1` and f(t+h, y1) in `w.k[6]`.
fn step<F>(f: &F, t: f64, y: &[f64], h: f64, w: &mut Work) -> Result<()>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let [k1, k2, k3, k4, k5, k6, k7] = &mut w.k;
    let tmp = &mut w.tmp;
    combo(tmp, y, h, &[(A21, k1)]);
    f(t + C2 * h, tmp, k2)?;
    combo(tmp, y, h, &[(A31, k1), (A32, k2)]);
    f(t + C3 * h, tmp, k3)?;
    combo(tmp, y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
    f(t + C4 * h, tmp, k4)?;
    combo(tmp, y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
    f(t + C5 * h, tmp, k5)?;
    combo(tmp, y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]);
    f(t + h, tmp, k6)?;
    combo(&mut w.y1, y, h, &[(B1, k1), (B3, k3), (B4, k4), (B5, k5), (B6, k6)]);
    f(t + h, &w.y1, k7)?;
    Ok(())
}

fn error_norm(y0: &[f64], w: &Work, h: f64, rtol: f64, atol: f64) -> f64 {
    let k = &w.k;
    let mut m: f64 = 0.0;
    for i in 0..y0.len() {
        let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let sc = atol + rtol * y0[i].abs().max(w.y1[i].abs());
        m = m.max((e / sc).abs());
    }
    m
}

/// Integrates y' = f(t, y) from t0 to t1 ≥ t0.
pub fn integrate<F>(f: F, y0: &[f64], t0: f64, t1: f64, settings: &OdeSettings) -> Result<(Vec<f64>, OdeStats)>
where
    F: Fn(f64, &[f64], &mut [f64]) -> Result<()>,
{
    settings.validate()?;
    if !(t1 >= t0) {
        return Err(Error::Domain(format!("integration interval [{t0}, {t1}] is reversed")));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut stats = OdeStats::default();
    if t1 == t0 {
        return Ok((y, stats));
    }
    let mut w = Work::new(n);
    let mut t = t0;
    f(t, &y, &mut w.k[0])?;
    stats.evaluations += 1;

    match settings.method {
        Method::Fixed { steps } => {
            let h = (t1 - t0) / steps as f64;
            for i in 0..steps {
                step(&f, t, &y, h, &mut w)?;
                stats.evaluations += 6;
                stats.accepted += 1;
                std::mem::swap(&mut y, &mut w.y1);
                w.k.swap(0, 6);
                t = t0 + (i + 1) as f64 * h;
            }
        }
        Method::Adaptive => {
            let span = t1 - t0;
            let mut h = (span / 100.0).min(settings.max_step);
            let min_step = 1e-14 * span.max(t0.abs());
            while t < t1 {
                let last = t + h >= t1;
                if last {
                    h = t1 - t;
                }
                step(&f, t, &y, h, &mut w)?;
                stats.evaluations += 6;
                let err = error_norm(&y, &w, h, settings.rel_tol, settings.abs_tol);
                if !err.is_finite() {
                    return Err(Error::Numeric(format!("non-finite state at t = {t}")));
                }
                if err <= 1.0 {
                    t = if last { t1 } else { t + h };
                    std::mem::swap(&mut y, &mut w.y1);
                    w.k.swap(0, 6);
                    stats.accepted += 1;
                } else {
                    stats.rejected += 1;
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * if err <= 1.0 { fac } else { fac.min(1.0) }).min(settings.max_step);
                if h < min_step && t < t1 {
                    return Err(Error::Numeric(format!("step size underflow at t = {t} (stiff or singular system)")));
                }
                if stats.accepted + stats.rejected > MAX_STEPS {
                    return Err(Error::Numeric(format!("step budget exhausted at t = {t}")));
                }
            }
        }
    }
    Ok((y, stats))
}
