//! Domain types shared by every other module.
//!
//! Frequencies are angular (rad/s) internally; files and the CLI speak Hz.
//! PSDs are one-sided: integrating over ν ∈ [0, ∞) gives the variance.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{OemtError, Result};

pub const K_B: f64 = 1.380649e-23;
pub const EPS0: f64 = 8.8541878128e-12;
pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
pub const DEFAULT_TEMPERATURE: f64 = 300.0;

pub fn hz_to_rad(f: f64) -> f64 {
    TWO_PI * f
}

pub fn rad_to_hz(w: f64) -> f64 {
    w / TWO_PI
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    /// Mode indices (n, m).
    pub label: (u32, u32),
    pub omega_m: f64,
    pub gamma: f64,
    pub mass_eff: f64,
    pub alpha: f64,
    /// Electromechanical coupling, V/m, signed.
    pub g_em: f64,
}

impl MechanicalMode {
    /// One-sided Brownian force PSD, N²/Hz.
    pub fn thermal_force_psd(&self, temperature: f64) -> f64 {
        4.0 * self.mass_eff * self.gamma * K_B * temperature
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcResonator {
    pub inductance: f64,
    /// C = C0 + C_m at equilibrium.
    pub capacitance_total: f64,
    /// R/L, rad/s.
    pub gamma_lc: f64,
}

impl LcResonator {
    pub fn from_lcq(inductance: f64, capacitance: f64, quality: f64) -> Self {
        let omega = 1.0 / (inductance * capacitance).sqrt();
        LcResonator {
            inductance,
            capacitance_total: capacitance,
            gamma_lc: omega / quality,
        }
    }

    pub fn omega_lc(&self) -> f64 {
        1.0 / (self.inductance * self.capacitance_total).sqrt()
    }

    pub fn quality(&self) -> f64 {
        self.omega_lc() / self.gamma_lc
    }
}

/// Input RF voltage noise, V²/Hz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RfNoise {
    White(f64),
    /// (angular frequency, PSD) pairs, strictly increasing in frequency.
    /// Interpolated linearly in log-frequency, clamped at the ends.
    Table(Vec<(f64, f64)>),
}

impl RfNoise {
    pub fn psd(&self, omega: f64) -> f64 {
        match self {
            RfNoise::White(v) => *v,
            RfNoise::Table(t) => interp_log_freq(t, omega),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            RfNoise::White(v) => vec![*v],
            RfNoise::Table(t) => t.iter().map(|p| p.1).collect(),
        }
    }
}

fn interp_log_freq(table: &[(f64, f64)], omega: f64) -> f64 {
    match table.len() {
        0 => 0.0,
        1 => table[0].1,
        n => {
            if omega <= table[0].0 {
                return table[0].1;
            }
            if omega >= table[n - 1].0 {
                return table[n - 1].1;
            }
            let k = table.partition_point(|p| p.0 <= omega);
            let (w0, s0) = table[k - 1];
            let (w1, s1) = table[k];
            let t = (omega.ln() - w0.ln()) / (w1.ln() - w0.ln());
            s0 + t * (s1 - s0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnvironment {
    pub temperature: f64,
    /// Displacement-equivalent shot noise S_in, m²/Hz.
    pub shot_noise: f64,
    pub rf_voltage_noise: RfNoise,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransducerModel {
    pub modes: Vec<MechanicalMode>,
    pub lc: LcResonator,
    /// Direct mechanical coupling λ_ij, N/m. Symmetric, zero diagonal.
    pub lambda_mech: DMatrix<f64>,
    pub noise: NoiseEnvironment,
}

impl TransducerModel {
    pub fn new(modes: Vec<MechanicalMode>, lc: LcResonator, noise: NoiseEnvironment) -> Self {
        let n = modes.len();
        TransducerModel {
            modes,
            lc,
            lambda_mech: DMatrix::zeros(n, n),
            noise,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn require_two_modes(&self) -> Result<()> {
        if self.modes.len() == 2 {
            Ok(())
        } else {
            Err(OemtError::NeedsTwoModes(self.modes.len()))
        }
    }

    /// Scalar λ used by the two-mode closed forms.
    pub fn lambda12(&self) -> f64 {
        if self.lambda_mech.nrows() >= 2 && self.lambda_mech.ncols() >= 2 {
            self.lambda_mech[(0, 1)]
        } else {
            0.0
        }
    }

    pub fn omega_bar(&self) -> f64 {
        0.5 * (self.modes[0].omega_m + self.modes[1].omega_m)
    }

    pub fn delta_omega(&self) -> f64 {
        self.modes[1].omega_m - self.modes[0].omega_m
    }

    pub fn rf_psd(&self, omega: f64) -> f64 {
        self.noise.rf_voltage_noise.psd(omega)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    points: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(OemtError::InvalidInput("empty frequency grid".into()));
        }
        if points.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(OemtError::InvalidInput("grid points must be finite and positive".into()));
        }
        if points.windows(2).any(|p| p[1] <= p[0]) {
            return Err(OemtError::InvalidInput("grid must be strictly increasing".into()));
        }
        Ok(FrequencyGrid { points })
    }

    pub fn linear(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 1 {
            return FrequencyGrid::new(vec![lo]);
        }
        if n < 1 || !(hi > lo) {
            return Err(OemtError::InvalidInput(format!("bad linear grid [{lo}, {hi}] x {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut pts: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        pts[n - 1] = hi;
        FrequencyGrid::new(pts)
    }

    pub fn linear_hz(lo_hz: f64, hi_hz: f64, n: usize) -> Result<Self> {
        FrequencyGrid::linear(hz_to_rad(lo_hz), hz_to_rad(hi_hz), n)
    }

    pub fn single(omega: f64) -> Result<Self> {
        FrequencyGrid::new(vec![omega])
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn hz(&self) -> Vec<f64> {
        self.points.iter().map(|w| rad_to_hz(*w)).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumUnit {
    M2PerHz,
    V2PerHz,
    VPerSqrtHz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseUnit {
    MeterPerNewton,
    NewtonPerMeter,
    Farad,
    MeterPerVolt,
    VoltPerNewton,
    Dimensionless,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub unit: SpectrumUnit,
}

impl Spectrum {
    /// +inf is allowed and marks a divergence.
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, unit: SpectrumUnit) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(OemtError::InvalidInput(format!(
                "spectrum has {} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(OemtError::InvalidInput("spectrum values must be non-negative".into()));
        }
        Ok(Spectrum { grid, values, unit })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexResponse {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
    pub unit: ResponseUnit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let codes: Vec<String> = self
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.code, v.message))
                .collect();
            Err(OemtError::Validation(codes.join("; ")))
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

pub fn validate_model(model: &TransducerModel) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |code: &'static str, message: String| out.push(Violation { code, message });

    if model.modes.is_empty() {
        push("no_modes", "model has no mechanical modes".into());
    }
    for (i, m) in model.modes.iter().enumerate() {
        let tag = format!("mode {} {:?}", i, m.label);
        if m.label.0 < 1 || m.label.1 < 1 {
            push("bad_label", format!("{tag}: indices must be >= 1"));
        }
        if !positive(m.omega_m) {
            push("nonpositive_frequency", format!("{tag}: omega_m = {}", m.omega_m));
        }
        if !positive(m.gamma) {
            push("nonpositive_damping", format!("{tag}: gamma = {}", m.gamma));
        }
        if !positive(m.mass_eff) {
            push("nonpositive_mass", format!("{tag}: mass_eff = {}", m.mass_eff));
        }
        if !(m.alpha.is_finite() && m.alpha.abs() <= 1.0) {
            push("alpha_out_of_range", format!("{tag}: alpha = {}", m.alpha));
        }
        if !m.g_em.is_finite() {
            push("nonfinite_coupling", format!("{tag}: g_em = {}", m.g_em));
        }
    }

    if !positive(model.lc.inductance) {
        push("nonpositive_inductance", format!("L = {}", model.lc.inductance));
    }
    if !positive(model.lc.capacitance_total) {
        push("nonpositive_capacitance", format!("C = {}", model.lc.capacitance_total));
    }
    if !positive(model.lc.gamma_lc) {
        push("nonpositive_lc_damping", format!("gamma_lc = {}", model.lc.gamma_lc));
    }

    let n = model.modes.len();
    let lam = &model.lambda_mech;
    if lam.nrows() != n || lam.ncols() != n {
        push(
            "lambda_shape",
            format!("lambda is {}x{}, expected {n}x{n}", lam.nrows(), lam.ncols()),
        );
    } else {
        for i in 0..n {
            if lam[(i, i)] != 0.0 {
                push("self_coupling", format!("lambda[{i}][{i}] = {}", lam[(i, i)]));
            }
            for j in (i + 1)..n {
                if !lam[(i, j)].is_finite() || lam[(i, j)] != lam[(j, i)] {
                    push("asymmetric_lambda", format!("lambda[{i}][{j}] != lambda[{j}][{i}]"));
                }
            }
        }
    }

    let noise = &model.noise;
    if !(noise.temperature.is_finite() && noise.temperature >= 0.0) {
        push("negative_temperature", format!("T = {}", noise.temperature));
    }
    if !(noise.shot_noise.is_finite() && noise.shot_noise >= 0.0) {
        push("negative_noise", format!("shot noise = {}", noise.shot_noise));
    }
    if noise.rf_voltage_noise.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        push("negative_noise", "rf voltage noise must be >= 0".into());
    }
    if let RfNoise::Table(t) = &noise.rf_voltage_noise {
        if t.is_empty() || t.iter().any(|p| !positive(p.0)) || t.windows(2).any(|p| p[1].0 <= p[0].0) {
            push("bad_rf_table", "rf table frequencies must be positive and increasing".into());
        }
    }

    ValidationReport { violations: out }
}
