//! Measurement-analysis chain: calibration, thermal Lorentzian fits,
//! variance, overlaps from variance, beam localisation and gap extraction.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{OemtError, Result};
use crate::geometry::{transverse_overlap, MembraneGeometry, ModeShape, OverlapMethod};
use crate::model::{hz_to_rad, FrequencyGrid, EPS0, K_B, TWO_PI};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasuredUnit {
    V2PerHz,
    M2PerHz,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub wavelength: f64,
    pub v_pp: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub unit: MeasuredUnit,
    pub calibration: Option<Calibration>,
}

impl MeasuredSpectrum {
    pub fn raw(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, values, MeasuredUnit::V2PerHz, None)
    }

    /// Already displacement-calibrated data (e.g. synthetic spectra).
    pub fn calibrated(grid: FrequencyGrid, values: Vec<f64>, calibration: Calibration) -> Result<Self> {
        Self::checked(grid, values, MeasuredUnit::M2PerHz, Some(calibration))
    }

    /// Displacement spectrum (m²/Hz) with no record of how it was calibrated.
    pub fn displacement(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, values, MeasuredUnit::M2PerHz, None)
    }

    fn checked(grid: FrequencyGrid, values: Vec<f64>, unit: MeasuredUnit, calibration: Option<Calibration>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(OemtError::InvalidInput("spectrum length mismatch".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(OemtError::InvalidInput("spectrum values must be finite and >= 0".into()));
        }
        Ok(MeasuredSpectrum { grid, values, unit, calibration })
    }

    fn window_indices(&self, window: &FitWindow) -> Vec<usize> {
        let (lo, hi) = (hz_to_rad(window.f_lo_hz), hz_to_rad(window.f_hi_hz));
        (0..self.grid.len())
            .filter(|k| {
                let w = self.grid.points()[*k];
                w >= lo && w <= hi
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
}

/// G_xV = λ/(2π V_pp), m/V.
pub fn calibration_factor(wavelength: f64, v_pp: f64) -> Result<f64> {
    if !(v_pp > 0.0) {
        return Err(OemtError::InvalidInput(format!("v_pp must be positive, got {v_pp}")));
    }
    if !(wavelength > 0.0) {
        return Err(OemtError::InvalidInput(format!("wavelength must be positive, got {wavelength}")));
    }
    Ok(wavelength / (TWO_PI * v_pp))
}

pub fn calibrate_spectrum(raw: &MeasuredSpectrum, wavelength: f64, v_pp: f64) -> Result<MeasuredSpectrum> {
    if raw.unit != MeasuredUnit::V2PerHz {
        return Err(OemtError::InvalidInput("spectrum is already calibrated".into()));
    }
    let g = calibration_factor(wavelength, v_pp)?;
    let g2 = g * g;
    MeasuredSpectrum::calibrated(
        raw.grid.clone(),
        raw.values.iter().map(|v| v * g2).collect(),
        Calibration { wavelength, v_pp },
    )
}

/// One-sided Hz-domain thermal DSN of an oscillator with optical mass m:
/// S̄(ν) = γ k_B T / (2π³ m |ν_m² − ν² − iνγ|²), which integrates to k_BT/(mω_m²).
pub fn thermal_dsn(nu: f64, nu_m: f64, gamma_hz: f64, mass: f64, temperature: f64) -> f64 {
    let re = nu_m * nu_m - nu * nu;
    let im = nu * gamma_hz;
    gamma_hz * K_B * temperature / (2.0 * PI * PI * PI * mass * (re * re + im * im))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThermalFit {
    pub omega_m: f64,
    pub gamma: f64,
    pub mass_opt: f64,
    pub floor: f64,
    pub omega_m_err: f64,
    pub gamma_err: f64,
    pub mass_opt_err: f64,
    pub floor_err: f64,
    /// Root-sum-square of log residuals.
    pub residual_norm: f64,
    pub iterations: usize,
    pub window: FitWindow,
}

const MAX_ITER: usize = 200;
const STEP_TOL: f64 = 1e-10;

/// Parameters p = (ν_m, ln γ, ln A, ln F) for S = Aγ/|…|² + F.
fn model_and_jacobian(nu: f64, p: &Vector4<f64>) -> (f64, Vector4<f64>) {
    let (nu_m, g, a, f) = (p[0], p[1].exp(), p[2].exp(), p[3].exp());
    let re = nu_m * nu_m - nu * nu;
    let im = nu * g;
    let d = re * re + im * im;
    let l = a * g / d;
    let s = l + f;
    // ∂ln S/∂θ
    let dnu = -l * (4.0 * nu_m * re) / d / s;
    let dlng = l * (1.0 - 2.0 * im * im / d) / s;
    let dlna = l / s;
    let dlnf = f / s;
    (s, Vector4::new(dnu, dlng, dlna, dlnf))
}

fn cost(nu: &[f64], data_ln: &[f64], p: &Vector4<f64>) -> f64 {
    nu.iter()
        .zip(data_ln)
        .map(|(x, d)| {
            let r = model_and_jacobian(*x, p).0.ln() - d;
            r * r
        })
        .sum()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares fit of the thermal DSN plus a white floor, on log residuals,
/// by Levenberg–Marquardt with analytic Jacobian.
pub fn fit_thermal_mode(cal: &MeasuredSpectrum, window: FitWindow, temperature: f64) -> Result<ThermalFit> {
    if !(temperature > 0.0) {
        return Err(OemtError::InvalidInput("temperature must be positive".into()));
    }
    let idx = cal.window_indices(&window);
    if idx.len() < 8 {
        return Err(OemtError::InvalidInput(format!("fit window holds only {} points", idx.len())));
    }
    let nu: Vec<f64> = idx.iter().map(|k| cal.grid.points()[*k] / TWO_PI).collect();
    let raw: Vec<f64> = idx.iter().map(|k| cal.values[*k]).collect();
    if raw.iter().any(|v| *v <= 0.0) {
        return Err(OemtError::InvalidInput("fit window contains non-positive PSD values".into()));
    }
    // Fit in units of the largest sample so the iteration is scale-free.
    let scale = raw.iter().cloned().fold(0.0, f64::max);
    let data: Vec<f64> = raw.iter().map(|v| v / scale).collect();
    let data_ln: Vec<f64> = data.iter().map(|v| v.ln()).collect();

    // Initial guess from a 5-point running median.
    let n = data.len();
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            let hi = (k + 3).min(n);
            median(&mut data[lo..hi].to_vec())
        })
        .collect();
    let mut sorted = smooth.clone();
    sorted.sort_by(f64::total_cmp);
    let floor0 = sorted[n / 10];
    let (kpk, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty window");
    let ratio = peak / floor0;
    if ratio < 3.0 {
        return Err(OemtError::NoPeak { ratio });
    }
    let half = floor0 + 0.5 * (peak - floor0);
    let mut lo = kpk;
    while lo > 0 && smooth[lo] > half {
        lo -= 1;
    }
    let mut hi = kpk;
    while hi + 1 < n && smooth[hi] > half {
        hi += 1;
    }
    let dnu = (nu[n - 1] - nu[0]) / (n - 1) as f64;
    let gamma0 = (nu[hi] - nu[lo]).max(dnu);
    let nu_m0 = nu[kpk];
    let a0 = (peak - floor0) * nu_m0 * nu_m0 * gamma0;
    let mut p = Vector4::new(nu_m0, gamma0.ln(), a0.ln(), floor0.max(peak * 1e-12).ln());

    let mut c = cost(&nu, &data_ln, &p);
    let mut mu = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (x, d) in nu.iter().zip(&data_ln) {
            let (s, j) = model_and_jacobian(*x, &p);
            let r = s.ln() - d;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut accepted = false;
        while mu < 1e16 {
            let mut lhs = jtj;
            for i in 0..4 {
                lhs[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let step = match lhs.lu().solve(&(-jtr)) {
                Some(s) => s,
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let trial = p + step;
            let ct = cost(&nu, &data_ln, &trial);
            if ct.is_finite() && ct <= c {
                let small = (0..4).all(|i| step[i].abs() <= STEP_TOL * trial[i].abs().max(1.0));
                p = trial;
                c = ct;
                mu = (mu * 0.3).max(1e-12);
                accepted = true;
                converged = small;
                break;
            }
            mu *= 10.0;
        }
        if !accepted {
            // No downhill step at any damping: stationary to machine precision.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(OemtError::NoConvergence { iterations, residual: c.sqrt() });
    }

    let mut jtj = Matrix4::<f64>::zeros();
    for x in &nu {
        let (_, j) = model_and_jacobian(*x, &p);
        jtj += j * j.transpose();
    }
    let dof = (nu.len() as f64 - 4.0).max(1.0);
    let cov = jtj.try_inverse().map(|m| m * (c / dof));
    let sd = |i: usize| cov.map_or(f64::NAN, |m| m[(i, i)].max(0.0).sqrt());
    // Log residuals of multiplicative noise average −s²/2; undo that bias.
    let unbias = scale * (0.5 * c / dof).exp();
    let (nu_m, g, a, f) = (p[0], p[1].exp(), p[2].exp() * unbias, p[3].exp() * unbias);
    let mass_opt = K_B * temperature / (2.0 * PI * PI * PI * a);
    let fit = ThermalFit {
        omega_m: TWO_PI * nu_m,
        gamma: TWO_PI * g,
        mass_opt,
        floor: f,
        omega_m_err: TWO_PI * sd(0),
        gamma_err: TWO_PI * g * sd(1),
        mass_opt_err: mass_opt * sd(2),
        floor_err: f * sd(3),
        residual_norm: c.sqrt(),
        iterations,
        window,
    };
    if !(fit.omega_m / TWO_PI >= window.f_lo_hz && fit.omega_m / TWO_PI <= window.f_hi_hz) || !(g > 0.0) {
        return Err(OemtError::NoPeak { ratio });
    }
    Ok(fit)
}

/// Trapezoidal ∫(PSD − floor) dν over the window, m².
pub fn displacement_variance(cal: &MeasuredSpectrum, window: FitWindow, floor: f64) -> Result<f64> {
    let idx = cal.window_indices(&window);
    if idx.len() < 2 {
        return Err(OemtError::InvalidInput("window holds fewer than two points".into()));
    }
    let mut total = 0.0;
    for w in idx.windows(2) {
        let (k0, k1) = (w[0], w[1]);
        let dnu = (cal.grid.points()[k1] - cal.grid.points()[k0]) / TWO_PI;
        total += 0.5 * dnu * (cal.values[k0] + cal.values[k1] - 2.0 * floor);
    }
    if total < 0.0 {
        return Err(OemtError::FloorOverestimate(total));
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OverlapEstimate {
    pub alpha: f64,
    /// Set when α exceeds 1.05.
    pub exceeds_bound: bool,
}

pub const ALPHA_BOUND: f64 = 1.05;

pub fn overlap_from_variance(variance: f64, m_eff: f64, omega: f64, temperature: f64) -> Result<OverlapEstimate> {
    if !(variance > 0.0 && m_eff > 0.0 && omega > 0.0 && temperature > 0.0) {
        return Err(OemtError::InvalidInput("variance, mass, frequency and temperature must be positive".into()));
    }
    let alpha = (variance * m_eff * omega * omega / (K_B * temperature)).sqrt();
    Ok(OverlapEstimate { alpha, exceeds_bound: alpha > ALPHA_BOUND })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LikelihoodMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major, values[iy * xs.len() + ix].
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BeamEstimate {
    pub position: (f64, f64),
    pub sigma2: f64,
    pub likelihood: LikelihoodMap,
    pub alpha_theory: Vec<f64>,
    /// All positions equivalent to `position` under reflections that leave χ² invariant.
    pub equivalent_optima: Vec<(f64, f64)>,
    pub ambiguous: bool,
    pub grid_spacing: f64,
}

fn chi2(obs: &[(ModeShape, f64)], geom: &MembraneGeometry, x: f64, y: f64) -> f64 {
    let mut g = geom.clone();
    g.beam_center = (x, y);
    obs.iter()
        .map(|(s, a)| {
            let d = a - transverse_overlap(s, &g, OverlapMethod::Analytic).abs();
            d * d
        })
        .sum()
}

/// Reflections (x→L−x, y→L−y, x↔y and compositions) under which χ² is
/// invariant. Magnitudes are blind to the sign flips of even-index modes, so
/// both axis reflections always apply.
fn symmetry_images(obs: &[(ModeShape, f64)], l: f64, p: (f64, f64)) -> Vec<(f64, f64)> {
    let (flip_x, flip_y) = (true, true);
    let swap = obs.iter().all(|(s, a)| {
        obs.iter().any(|(t, b)| t.n == s.m && t.m == s.n && (a - b).abs() <= 1e-12 * a.abs().max(1.0))
    });
    let mut out = vec![p];
    let mut k = 0;
    while k < out.len() {
        let (x, y) = out[k];
        let mut cand = Vec::new();
        if flip_x {
            cand.push((l - x, y));
        }
        if flip_y {
            cand.push((x, l - y));
        }
        if swap {
            cand.push((y, x));
        }
        for c in cand {
            if !out.iter().any(|o| (o.0 - c.0).abs() < 1e-12 * l && (o.1 - c.1).abs() < 1e-12 * l) {
                out.push(c);
            }
        }
        k += 1;
    }
    out
}

/// χ² raster over the membrane followed by a compass-search refinement.
/// Observed overlaps are magnitudes (as obtained from variances) and are
/// compared with |α_th|.
pub fn locate_beam(obs: &[(ModeShape, f64)], geom: &MembraneGeometry, resolution: usize) -> Result<BeamEstimate> {
    if obs.len() < 2 {
        return Err(OemtError::InvalidInput("need at least two modes".into()));
    }
    if obs.iter().any(|(_, a)| !(a.is_finite() && *a >= 0.0)) {
        return Err(OemtError::InvalidInput("overlap estimates must be finite and >= 0".into()));
    }
    if resolution < 3 {
        return Err(OemtError::InvalidInput("raster resolution must be >= 3".into()));
    }
    let l = geom.side_length;
    let h = l / (resolution - 1) as f64;
    let xs: Vec<f64> = (0..resolution).map(|i| i as f64 * h).collect();
    let rows = par::map_range(resolution, |iy| {
        xs.iter().map(|x| chi2(obs, geom, *x, xs[iy])).collect::<Vec<f64>>()
    });
    let grid_chi: Vec<f64> = rows.into_iter().flatten().collect();
    let kmin = (0..grid_chi.len())
        .min_by(|a, b| grid_chi[*a].total_cmp(&grid_chi[*b]))
        .expect("non-empty raster");
    let (mut x, mut y) = (xs[kmin % resolution], xs[kmin / resolution]);
    let mut best = grid_chi[kmin];

    let mut step = h;
    while step > 1e-9 * h {
        let mut moved = false;
        for (dx, dy) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (nx, ny) = ((x + dx).clamp(0.0, l), (y + dy).clamp(0.0, l));
            let c = chi2(obs, geom, nx, ny);
            if c < best {
                best = c;
                x = nx;
                y = ny;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }

    // σ² = χ²(x₀, y₀); a perfect fit would make the map a delta, so floor it.
    let sigma2 = best;
    let s2 = sigma2.max(1e-12 * obs.iter().map(|o| o.1 * o.1).sum::<f64>()).max(f64::MIN_POSITIVE);
    let grid_min = grid_chi[kmin];
    let w: Vec<f64> = grid_chi.iter().map(|c| (-(c - grid_min) / (2.0 * s2)).exp()).collect();
    let z: f64 = w.iter().sum();
    let likelihood = LikelihoodMap { xs: xs.clone(), ys: xs.clone(), values: w.iter().map(|v| v / z).collect() };

    let mut g = geom.clone();
    g.beam_center = (x, y);
    let alpha_theory = obs.iter().map(|(s, _)| transverse_overlap(s, &g, OverlapMethod::Analytic).abs()).collect();
    let equivalent_optima = symmetry_images(obs, l, (x, y));
    Ok(BeamEstimate {
        position: (x, y),
        sigma2,
        likelihood,
        alpha_theory,
        ambiguous: equivalent_optima.len() > 1,
        equivalent_optima,
        grid_spacing: h,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct H0Fit {
    /// Λ, F/m².
    pub lambda_coeff: f64,
    pub lambda_err: f64,
    pub h0: f64,
    pub h0_err: f64,
    pub nu0: f64,
    pub nu0_err: f64,
    /// Largest |ν_fit − ν|/ν over the data.
    pub max_rel_residual: f64,
}

/// h₀ = (ε₀A₀/Λ)^{1/3} with δh₀ = h₀ δΛ/(3Λ).
pub fn h0_from_lambda(lambda: f64, lambda_err: f64, a_eff: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0 && a_eff > 0.0) {
        return Err(OemtError::InvalidInput("lambda and a_eff must be positive".into()));
    }
    let h0 = (EPS0 * a_eff / lambda).cbrt();
    Ok((h0, h0 * lambda_err / (3.0 * lambda)))
}

/// Linear least squares of ν = ν₀ − b V² with Λ = 8π² m ν₀ b.
pub fn fit_h0(curve: &[(f64, f64)], m_eff: f64, a_eff: f64) -> Result<H0Fit> {
    if curve.len() < 4 {
        return Err(OemtError::InvalidInput("need at least four (V, nu) points".into()));
    }
    let v2: Vec<f64> = curve.iter().map(|p| p.0 * p.0).collect();
    let vmax = v2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v2.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(vmax >= 4.0 * vmin && vmax > 0.0) {
        return Err(OemtError::InvalidInput("bias points must span a 4x range in V^2".into()));
    }
    if !(m_eff > 0.0) {
        return Err(OemtError::InvalidInput("m_eff must be positive".into()));
    }
    let n = curve.len() as f64;
    let mx = v2.iter().sum::<f64>() / n;
    let my = curve.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = v2.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = v2.iter().zip(curve).map(|(x, p)| (x - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let nu0 = my - slope * mx;
    if slope >= 0.0 {
        return Err(OemtError::NonSoftening);
    }
    let resid: Vec<f64> = v2.iter().zip(curve).map(|(x, p)| p.1 - (nu0 + slope * x)).collect();
    let s2 = if curve.len() > 2 { resid.iter().map(|r| r * r).sum::<f64>() / (n - 2.0) } else { 0.0 };
    let var_slope = s2 / sxx;
    let var_nu0 = s2 * (1.0 / n + mx * mx / sxx);
    let cov = -s2 * mx / sxx;
    let b = -slope;
    let lambda = 8.0 * PI * PI * m_eff * nu0 * b;
    // δΛ/Λ from (ν₀, b) with their covariance (cov(ν₀, b) = −cov(ν₀, slope)).
    let rel2 = var_nu0 / (nu0 * nu0) + var_slope / (b * b) - 2.0 * cov / (nu0 * b);
    let lambda_err = lambda * rel2.max(0.0).sqrt();
    let (h0, h0_err) = h0_from_lambda(lambda, lambda_err, a_eff)?;
    let max_rel_residual = resid.iter().zip(curve).map(|(r, p)| (r / p.1).abs()).fold(0.0, f64::max);
    Ok(H0Fit {
        lambda_coeff: lambda,
        lambda_err,
        h0,
        h0_err,
        nu0,
        nu0_err: var_nu0.sqrt(),
        max_rel_residual,
    })
}
