//! Design exploration: interference classification, bandwidth extraction and
//! parameter sweeps of the voltage sensitivity.

use serde::{Deserialize, Serialize};

use crate::error::{OemtError, Result};
use crate::model::{hz_to_rad, FrequencyGrid, LcResonator, Spectrum, TransducerModel};
use crate::par;
use crate::response::{voltage_sensitivity, Order};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interference {
    Constructive,
    Destructive,
    SinglePath,
}

/// Sign rule on α₁G₁·α₂G₂: opposite signs add, equal signs cancel between the peaks.
pub fn classify_interference(model: &TransducerModel) -> Result<Interference> {
    model.require_two_modes()?;
    let p1 = model.modes[0].alpha * model.modes[0].g_em;
    let p2 = model.modes[1].alpha * model.modes[1].g_em;
    let s = p1 * p2;
    Ok(if s < 0.0 {
        Interference::Constructive
    } else if s > 0.0 {
        Interference::Destructive
    } else {
        Interference::SinglePath
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub width_hz: f64,
}

/// Widest contiguous interval where the curve is ≤ threshold, with edges
/// located by linear interpolation between grid points. Infinite samples
/// count as above threshold.
pub fn extract_bandwidth(sensitivity: &Spectrum, threshold: f64) -> Option<Band> {
    let f = sensitivity.grid.hz();
    let v = &sensitivity.values;
    let crossing = |k: usize| -> f64 {
        // Between k and k+1, one side above and one at/below threshold.
        let (a, b) = (v[k], v[k + 1]);
        if !a.is_finite() || !b.is_finite() {
            return if a.is_finite() { f[k] } else { f[k + 1] };
        }
        let t = (threshold - a) / (b - a);
        f[k] + t.clamp(0.0, 1.0) * (f[k + 1] - f[k])
    };
    let mut best: Option<Band> = None;
    let mut k = 0;
    while k < v.len() {
        if v[k] > threshold {
            k += 1;
            continue;
        }
        let start = k;
        while k + 1 < v.len() && v[k + 1] <= threshold {
            k += 1;
        }
        let end = k;
        let lo = if start == 0 { f[0] } else { crossing(start - 1) };
        let hi = if end + 1 == v.len() { f[end] } else { crossing(end) };
        let band = Band { f_lo_hz: lo, f_hi_hz: hi, width_hz: hi - lo };
        if best.is_none_or(|b| band.width_hz > b.width_hz) {
            best = Some(band);
        }
        k += 1;
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// |G₁| = |G₂| = value (V/m), keeping the base signs.
    Coupling,
    /// Δν_m = value (Hz), symmetric about the fixed Ω̄, LC retuned to Ω̄.
    Splitting,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: TransducerModel,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub grid: FrequencyGrid,
    pub order: Order,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.require_two_modes()?;
        if self.values.is_empty() {
            return Err(OemtError::InvalidInput("sweep needs at least one value".into()));
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(OemtError::InvalidInput("sweep values must be positive".into()));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OemtError::InvalidInput("sweep values must be strictly increasing".into()));
        }
        Ok(())
    }
}

pub fn apply_coupling(base: &TransducerModel, g: f64) -> TransducerModel {
    let mut m = base.clone();
    for mode in m.modes.iter_mut().take(2) {
        mode.g_em = if mode.g_em < 0.0 { -g } else { g };
    }
    m
}

pub fn apply_splitting(base: &TransducerModel, delta_nu_hz: f64) -> TransducerModel {
    let mut m = base.clone();
    let wbar = base.omega_bar();
    let half = 0.5 * hz_to_rad(delta_nu_hz);
    let (lo, hi) = if base.modes[0].omega_m <= base.modes[1].omega_m { (0, 1) } else { (1, 0) };
    m.modes[lo].omega_m = wbar - half;
    m.modes[hi].omega_m = wbar + half;
    let q = base.lc.quality();
    m.lc = LcResonator::from_lcq(base.lc.inductance, 1.0 / (base.lc.inductance * wbar * wbar), q);
    m
}

#[derive(Clone, Debug)]
pub struct SensitivityMap {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub grid: FrequencyGrid,
    /// rows[i] holds V/√Hz on `grid`; None when the row failed.
    pub rows: Vec<Option<Vec<f64>>>,
    pub midpoint: Vec<Option<f64>>,
    pub row_errors: Vec<Option<OemtError>>,
}

impl SensitivityMap {
    pub fn row_spectrum(&self, i: usize) -> Option<Spectrum> {
        self.rows[i]
            .as_ref()
            .and_then(|r| Spectrum::new(self.grid.clone(), r.clone(), crate::model::SpectrumUnit::VPerSqrtHz).ok())
    }
}

pub fn sweep_sensitivity(spec: &SweepSpec) -> Result<SensitivityMap> {
    spec.validate()?;
    let results = par::map(&spec.values, |v| {
        let model = match spec.param {
            SweepParam::Coupling => apply_coupling(&spec.base, *v),
            SweepParam::Splitting => apply_splitting(&spec.base, *v),
        };
        voltage_sensitivity(&model, &spec.grid, spec.order)
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut midpoint = Vec::with_capacity(results.len());
    let mut row_errors = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(s) => {
                rows.push(Some(s.sensitivity.values));
                midpoint.push(Some(s.optimal_at_midpoint));
                row_errors.push(None);
            }
            Err(e) => {
                rows.push(None);
                midpoint.push(None);
                row_errors.push(Some(e));
            }
        }
    }
    Ok(SensitivityMap { param: spec.param, values: spec.values.clone(), grid: spec.grid.clone(), rows, midpoint, row_errors })
}
