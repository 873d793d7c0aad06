//! Closed-form two-mode frequency response.
//!
//! Fourier convention e^{−iΩt}: d/dt → −iΩ. The coupled equations are
//!   ξ₁x₁ − βx₂ = F₁ − G₁χ_LC δV
//!   ξ₂x₂ − βx₁ = F₂ − G₂χ_LC δV
//! with ξᵢ = χᵢ⁻¹ − Gᵢ²χ_LC and β = G₁G₂χ_LC − λ.

use num_complex::Complex64;

use crate::error::{OemtError, Result};
use crate::model::{
    rad_to_hz, ComplexResponse, FrequencyGrid, LcResonator, MechanicalMode, ResponseUnit,
    Spectrum, SpectrumUnit, TransducerModel,
};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Full,
    FirstOrder,
}

pub fn chi_mech(mode: &MechanicalMode, omega: f64) -> Complex64 {
    let den = Complex64::new(
        mode.mass_eff * (mode.omega_m * mode.omega_m - omega * omega),
        -mode.mass_eff * omega * mode.gamma,
    );
    den.inv()
}

pub fn chi_lc(lc: &LcResonator, omega: f64) -> Complex64 {
    let wlc2 = 1.0 / (lc.inductance * lc.capacitance_total);
    let den = Complex64::new(
        lc.inductance * (wlc2 - omega * omega),
        -lc.inductance * omega * lc.gamma_lc,
    );
    den.inv()
}

/// Everything the closed forms need at one frequency.
#[derive(Clone, Copy, Debug)]
pub struct PointTerms {
    pub omega: f64,
    pub chi: [Complex64; 2],
    pub chi_lc: Complex64,
    pub xi: [Complex64; 2],
    pub beta: Complex64,
    pub det: Complex64,
}

impl PointTerms {
    pub fn compute(model: &TransducerModel, omega: f64) -> Result<Self> {
        let m = &model.modes;
        let chi = [chi_mech(&m[0], omega), chi_mech(&m[1], omega)];
        let clc = chi_lc(&model.lc, omega);
        let (g1, g2) = (m[0].g_em, m[1].g_em);
        let xi = [chi[0].inv() - g1 * g1 * clc, chi[1].inv() - g2 * g2 * clc];
        let beta = g1 * g2 * clc - model.lambda12();
        let det = xi[0] * xi[1] - beta * beta;
        let scale = (xi[0] * xi[1]).norm() + (beta * beta).norm();
        if !det.is_finite() || det.norm() <= 1e-15 * scale {
            return Err(OemtError::DegenerateResponse { freq_hz: rad_to_hz(omega) });
        }
        Ok(PointTerms { omega, chi, chi_lc: clc, xi, beta, det })
    }

    /// The two transduction paths whose sum is I(Ω).
    pub fn paths(&self, model: &TransducerModel) -> [Complex64; 2] {
        let m = &model.modes;
        let (g1, g2) = (m[0].g_em, m[1].g_em);
        [
            m[0].alpha * (self.xi[1] * g1 + self.beta * g2) / self.det,
            m[1].alpha * (self.xi[0] * g2 + self.beta * g1) / self.det,
        ]
    }

    pub fn paths_first_order(&self, model: &TransducerModel) -> [Complex64; 2] {
        let m = &model.modes;
        [
            m[0].alpha * m[0].g_em * self.chi[0],
            m[1].alpha * m[1].g_em * self.chi[1],
        ]
    }

    pub fn interference(&self, model: &TransducerModel, order: Order) -> Complex64 {
        let p = match order {
            Order::Full => self.paths(model),
            Order::FirstOrder => self.paths_first_order(model),
        };
        p[0] + p[1]
    }
}

fn point_terms(model: &TransducerModel, grid: &FrequencyGrid) -> Result<Vec<PointTerms>> {
    model.require_two_modes()?;
    par::try_map(grid.points(), |w| PointTerms::compute(model, *w))
}

fn response(grid: &FrequencyGrid, values: Vec<Complex64>, unit: ResponseUnit) -> ComplexResponse {
    ComplexResponse { grid: grid.clone(), values, unit }
}

pub fn mech_susceptibility(mode: &MechanicalMode, grid: &FrequencyGrid) -> ComplexResponse {
    let v = grid.points().iter().map(|w| chi_mech(mode, *w)).collect();
    response(grid, v, ResponseUnit::MeterPerNewton)
}

pub fn lc_susceptibility(lc: &LcResonator, grid: &FrequencyGrid) -> ComplexResponse {
    let v = grid.points().iter().map(|w| chi_lc(lc, *w)).collect();
    response(grid, v, ResponseUnit::Farad)
}

#[derive(Clone, Debug)]
pub struct EffectiveSusceptibility {
    pub xi: [ComplexResponse; 2],
    pub beta: ComplexResponse,
    pub mu: [ComplexResponse; 2],
    pub chi_eff: [ComplexResponse; 2],
}

pub fn effective_susceptibility(
    model: &TransducerModel,
    grid: &FrequencyGrid,
) -> Result<EffectiveSusceptibility> {
    let pts = point_terms(model, grid)?;
    let col = |f: &dyn Fn(&PointTerms) -> Complex64| pts.iter().map(f).collect::<Vec<_>>();
    Ok(EffectiveSusceptibility {
        xi: [
            response(grid, col(&|p| p.xi[0]), ResponseUnit::NewtonPerMeter),
            response(grid, col(&|p| p.xi[1]), ResponseUnit::NewtonPerMeter),
        ],
        beta: response(grid, col(&|p| p.beta), ResponseUnit::NewtonPerMeter),
        mu: [
            response(grid, col(&|p| p.beta / p.xi[0]), ResponseUnit::Dimensionless),
            response(grid, col(&|p| p.beta / p.xi[1]), ResponseUnit::Dimensionless),
        ],
        chi_eff: [
            response(grid, col(&|p| p.xi[1] / p.det), ResponseUnit::MeterPerNewton),
            response(grid, col(&|p| p.xi[0] / p.det), ResponseUnit::MeterPerNewton),
        ],
    })
}

pub fn interference_function(model: &TransducerModel, grid: &FrequencyGrid) -> Result<ComplexResponse> {
    interference_function_order(model, grid, Order::Full)
}

pub fn interference_function_order(
    model: &TransducerModel,
    grid: &FrequencyGrid,
    order: Order,
) -> Result<ComplexResponse> {
    let pts = point_terms(model, grid)?;
    let v = pts.iter().map(|p| p.interference(model, order)).collect();
    Ok(response(grid, v, ResponseUnit::VoltPerNewton))
}

#[derive(Clone, Debug)]
pub struct SpectrumBudget {
    pub total: Spectrum,
    pub thermal: [Spectrum; 2],
    pub rf: Spectrum,
    pub shot: Spectrum,
}

fn budget_point(model: &TransducerModel, p: &PointTerms, order: Order) -> [f64; 4] {
    let m = &model.modes;
    let t = model.noise.temperature;
    let sf = [m[0].thermal_force_psd(t), m[1].thermal_force_psd(t)];
    let (a1, a2) = (m[0].alpha, m[1].alpha);
    let (th1, th2) = match order {
        Order::Full => {
            let d2 = p.det.norm_sqr();
            (
                (a1 * p.xi[1] + a2 * p.beta).norm_sqr() / d2 * sf[0],
                (a2 * p.xi[0] + a1 * p.beta).norm_sqr() / d2 * sf[1],
            )
        }
        Order::FirstOrder => (
            a1 * a1 * p.chi[0].norm_sqr() * sf[0],
            a2 * a2 * p.chi[1].norm_sqr() * sf[1],
        ),
    };
    let rf = p.interference(model, order).norm_sqr() * p.chi_lc.norm_sqr() * model.rf_psd(p.omega);
    [th1, th2, rf, model.noise.shot_noise]
}

pub fn output_spectrum(model: &TransducerModel, grid: &FrequencyGrid, order: Order) -> Result<SpectrumBudget> {
    if order == Order::FirstOrder && model.lambda12() != 0.0 {
        return Err(OemtError::FirstOrderNeedsZeroLambda);
    }
    let pts = point_terms(model, grid)?;
    let rows = par::map(&pts, |p| budget_point(model, p, order));
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let total: Vec<f64> = rows.iter().map(|r| r[0] + r[1] + r[2] + r[3]).collect();
    let mk = |v: Vec<f64>| Spectrum::new(grid.clone(), v, SpectrumUnit::M2PerHz);
    Ok(SpectrumBudget {
        total: mk(total)?,
        thermal: [mk(col(0))?, mk(col(1))?],
        rf: mk(col(2))?,
        shot: mk(col(3))?,
    })
}

#[derive(Clone, Debug)]
pub struct SensitivityResult {
    pub sensitivity: Spectrum,
    pub optimal_at_midpoint: f64,
    /// √S_opt/ΔΩ for the symmetric idealisation, V·s/√Hz.
    pub sb_ratio: f64,
    pub omega_bar: f64,
    pub delta_omega: f64,
}

/// Fraction of |path₁|+|path₂| below which a minimum of |I| counts as a null.
pub const NULL_CANCELLATION: f64 = 0.1;

/// Grid indices where I(Ω) passes through (or next to) zero: interior local
/// minima of |I| with strong path cancellation, plus the smaller sample of any
/// adjacent pair pointing in opposite directions across such a cancellation.
pub fn null_indices(i_vals: &[Complex64], path_sums: &[f64]) -> Vec<usize> {
    let n = i_vals.len();
    let mag: Vec<f64> = i_vals.iter().map(|z| z.norm()).collect();
    let deep = |k: usize| mag[k] <= NULL_CANCELLATION * path_sums[k];
    let mut out: Vec<usize> = (0..n).filter(|k| mag[*k] == 0.0).collect();
    for k in 1..n.saturating_sub(1) {
        if mag[k] <= mag[k - 1] && mag[k] <= mag[k + 1] && deep(k) {
            out.push(k);
        }
    }
    for k in 0..n.saturating_sub(1) {
        if (i_vals[k] * i_vals[k + 1].conj()).re < 0.0 {
            let j = if mag[k] <= mag[k + 1] { k } else { k + 1 };
            if deep(j) {
                out.push(j);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

pub fn voltage_sensitivity(model: &TransducerModel, grid: &FrequencyGrid, order: Order) -> Result<SensitivityResult> {
    let budget = output_spectrum(model, grid, order)?;
    let pts = point_terms(model, grid)?;
    let paths: Vec<[Complex64; 2]> = pts
        .iter()
        .map(|p| match order {
            Order::Full => p.paths(model),
            Order::FirstOrder => p.paths_first_order(model),
        })
        .collect();
    let i_vals: Vec<Complex64> = paths.iter().map(|p| p[0] + p[1]).collect();
    let sums: Vec<f64> = paths.iter().map(|p| p[0].norm() + p[1].norm()).collect();
    let mut sens: Vec<f64> = pts
        .iter()
        .zip(&i_vals)
        .zip(&budget.total.values)
        .map(|((p, i), s)| {
            let den = i.norm() * p.chi_lc.norm();
            if den > 0.0 {
                s.sqrt() / den
            } else {
                f64::INFINITY
            }
        })
        .collect();
    for k in null_indices(&i_vals, &sums) {
        sens[k] = f64::INFINITY;
    }

    let omega_bar = model.omega_bar();
    let delta_omega = model.delta_omega();
    let mid = PointTerms::compute(model, omega_bar)?;
    let i_mid = mid.interference(model, order).norm();
    if i_mid == 0.0 {
        return Err(OemtError::NullInterference { freq_hz: rad_to_hz(omega_bar) });
    }
    let s_in = model.noise.shot_noise;
    let optimal_at_midpoint = s_in.sqrt() / (i_mid * mid.chi_lc.norm());

    let m = &model.modes;
    let m_bar = 0.5 * (m[0].mass_eff + m[1].mass_eff);
    let g_bar = 0.5 * (m[0].g_em.abs() + m[1].g_em.abs());
    let sb_ratio = m_bar * omega_bar * s_in.sqrt() / (2.0 * g_bar * mid.chi_lc.norm());

    Ok(SensitivityResult {
        sensitivity: Spectrum::new(grid.clone(), sens, SpectrumUnit::VPerSqrtHz)?,
        optimal_at_midpoint,
        sb_ratio,
        omega_bar,
        delta_omega,
    })
}

/// Inputs are ordered (F₁, F₂, δV).
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    /// x[i][k]: δxᵢ per unit input k.
    pub x: [[ComplexResponse; 3]; 2],
    /// δY_out per unit input k.
    pub y: [ComplexResponse; 3],
}

pub fn transfer_point(model: &TransducerModel, p: &PointTerms) -> ([[Complex64; 3]; 2], [Complex64; 3]) {
    let m = &model.modes;
    let (g1, g2) = (m[0].g_em, m[1].g_em);
    let d = p.det;
    let x = [
        [
            p.xi[1] / d,
            p.beta / d,
            -p.chi_lc * (p.xi[1] * g1 + p.beta * g2) / d,
        ],
        [
            p.beta / d,
            p.xi[0] / d,
            -p.chi_lc * (p.xi[0] * g2 + p.beta * g1) / d,
        ],
    ];
    let y = [0, 1, 2].map(|k| m[0].alpha * x[0][k] + m[1].alpha * x[1][k]);
    (x, y)
}

pub fn displacement_transfer(model: &TransducerModel, grid: &FrequencyGrid) -> Result<TransferMatrix> {
    let pts = point_terms(model, grid)?;
    let rows: Vec<_> = pts.iter().map(|p| transfer_point(model, p)).collect();
    let xr = |i: usize, k: usize| {
        let unit = if k == 2 { ResponseUnit::MeterPerVolt } else { ResponseUnit::MeterPerNewton };
        response(grid, rows.iter().map(|r| r.0[i][k]).collect(), unit)
    };
    let yr = |k: usize| {
        let unit = if k == 2 { ResponseUnit::MeterPerVolt } else { ResponseUnit::MeterPerNewton };
        response(grid, rows.iter().map(|r| r.1[k]).collect(), unit)
    };
    Ok(TransferMatrix {
        x: [[xr(0, 0), xr(0, 1), xr(0, 2)], [xr(1, 0), xr(1, 1), xr(1, 2)]],
        y: [yr(0), yr(1), yr(2)],
    })
}

/// Output PSD assembled from transfer rows and input PSDs.
pub fn spectrum_from_transfer(model: &TransducerModel, t: &TransferMatrix) -> Vec<f64> {
    let temp = model.noise.temperature;
    let sf = [model.modes[0].thermal_force_psd(temp), model.modes[1].thermal_force_psd(temp)];
    t.y[0]
        .grid
        .points()
        .iter()
        .enumerate()
        .map(|(k, w)| {
            t.y[0].values[k].norm_sqr() * sf[0]
                + t.y[1].values[k].norm_sqr() * sf[1]
                + t.y[2].values[k].norm_sqr() * model.rf_psd(*w)
                + model.noise.shot_noise
        })
        .collect()
}

/// Linear grid refined by midpoint insertion wherever ln S_out jumps by more
/// than `max_log_step` between neighbours.
pub fn adaptive_grid(
    model: &TransducerModel,
    lo: f64,
    hi: f64,
    n: usize,
    max_log_step: f64,
    max_points: usize,
) -> Result<FrequencyGrid> {
    let mut grid = FrequencyGrid::linear(lo, hi, n)?;
    loop {
        let s = output_spectrum(model, &grid, Order::Full)?.total.values;
        let pts = grid.points();
        let mut next = Vec::with_capacity(pts.len() * 2);
        let mut inserted = 0usize;
        for k in 0..pts.len() {
            next.push(pts[k]);
            if k + 1 < pts.len() && (s[k + 1].ln() - s[k].ln()).abs() > max_log_step {
                let mid = 0.5 * (pts[k] + pts[k + 1]);
                if mid > pts[k] && mid < pts[k + 1] {
                    next.push(mid);
                    inserted += 1;
                }
            }
        }
        if inserted == 0 || next.len() > max_points {
            return Ok(grid);
        }
        grid = FrequencyGrid::new(next)?;
    }
}
