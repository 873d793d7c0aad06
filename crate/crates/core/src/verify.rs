//! Independent oracles for the closed forms: a direct complex solve of the
//! full Fourier-domain system, a time-domain drive/demodulate measurement
//! and a pole analysis.
//!
//! All three work on balanced coordinates uᵢ = √mᵢ xᵢ, w = √L q with time
//! scaled by a reference frequency Ω_ref, which keeps every matrix entry
//! O(1) regardless of the SI magnitudes (ng masses, pF capacitors).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{OemtError, Result};
use crate::model::{rad_to_hz, FrequencyGrid, TransducerModel, TWO_PI};
use crate::par;

pub const RESIDUAL_TOL: f64 = 1e-12;

/// Second-order form K̃ r + C̃ ṙ + r̈ = f̃ in scaled units.
#[derive(Clone, Debug)]
struct Scaled {
    n_mech: usize,
    omega_ref: f64,
    k: DMatrix<f64>,
    c: DMatrix<f64>,
    sqrt_m: Vec<f64>,
    sqrt_l: f64,
}

impl Scaled {
    fn new(model: &TransducerModel) -> Self {
        let nm = model.n_modes();
        let n = nm + 1;
        let lc = &model.lc;
        let omega_ref = model
            .modes
            .iter()
            .map(|m| m.omega_m)
            .fold(lc.omega_lc(), f64::max);
        let r2 = omega_ref * omega_ref;
        let sqrt_m: Vec<f64> = model.modes.iter().map(|m| m.mass_eff.sqrt()).collect();
        let sqrt_l = lc.inductance.sqrt();
        let mut k = DMatrix::zeros(n, n);
        let mut c = DMatrix::zeros(n, n);
        for (i, mi) in model.modes.iter().enumerate() {
            k[(i, i)] = mi.omega_m * mi.omega_m / r2;
            c[(i, i)] = mi.gamma / omega_ref;
            for j in 0..nm {
                if i != j {
                    k[(i, j)] = model.lambda_mech[(i, j)] / (sqrt_m[i] * sqrt_m[j]) / r2;
                }
            }
            let g = mi.g_em / (sqrt_m[i] * sqrt_l) / r2;
            k[(i, nm)] = g;
            k[(nm, i)] = g;
        }
        k[(nm, nm)] = 1.0 / (lc.inductance * lc.capacitance_total) / r2;
        c[(nm, nm)] = lc.gamma_lc / omega_ref;
        Scaled { n_mech: nm, omega_ref, k, c, sqrt_m, sqrt_l }
    }

    fn dim(&self) -> usize {
        2 * (self.n_mech + 1)
    }

    /// First-order state matrix for (r, dr/dτ).
    fn state_matrix(&self) -> DMatrix<f64> {
        let n = self.n_mech + 1;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            for j in 0..n {
                a[(n + i, j)] = -self.k[(i, j)];
                a[(n + i, n + j)] = -self.c[(i, j)];
            }
        }
        a
    }

    /// Scaled force per unit SI input: inputs F₁..F_N then δV.
    fn input_gain(&self, k: usize) -> f64 {
        let r2 = self.omega_ref * self.omega_ref;
        if k < self.n_mech {
            1.0 / (self.sqrt_m[k] * r2)
        } else {
            1.0 / (self.sqrt_l * r2)
        }
    }

    /// Converts scaled state row `row` back to SI: x, p, q, φ.
    fn si_factor(&self, row: usize) -> f64 {
        let n = self.n_mech + 1;
        let nm = self.n_mech;
        if row < nm {
            1.0 / self.sqrt_m[row]
        } else if row == nm {
            1.0 / self.sqrt_l
        } else if row < n + nm {
            self.sqrt_m[row - n] * self.omega_ref
        } else {
            self.sqrt_l * self.omega_ref
        }
    }
}

/// Per-frequency transfers from every input (F₁..F_N, δV) to every state.
#[derive(Clone, Debug)]
pub struct LinearSystemSolution {
    pub grid: FrequencyGrid,
    pub n_modes: usize,
    /// One (2N+2)×(N+1) matrix per grid point. Rows: x₁..x_N, p₁..p_N, q, φ.
    pub states: Vec<DMatrix<Complex64>>,
    /// δY_out per unit input, (N+1) per grid point.
    pub y_out: Vec<Vec<Complex64>>,
    pub max_residual: f64,
}

impl LinearSystemSolution {
    pub fn x(&self, point: usize, mode: usize, input: usize) -> Complex64 {
        self.states[point][(mode, input)]
    }

    pub fn p(&self, point: usize, mode: usize, input: usize) -> Complex64 {
        self.states[point][(self.n_modes + mode, input)]
    }

    pub fn q(&self, point: usize, input: usize) -> Complex64 {
        self.states[point][(2 * self.n_modes, input)]
    }

    pub fn phi(&self, point: usize, input: usize) -> Complex64 {
        self.states[point][(2 * self.n_modes + 1, input)]
    }

    /// One-sided output PSD from |transfer|² times input PSDs.
    pub fn output_psd(&self, model: &TransducerModel) -> Vec<f64> {
        let t = model.noise.temperature;
        let nm = self.n_modes;
        self.grid
            .points()
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let y = &self.y_out[k];
                let mut s = model.noise.shot_noise + y[nm].norm_sqr() * model.rf_psd(*w);
                for (j, mode) in model.modes.iter().enumerate() {
                    s += y[j].norm_sqr() * mode.thermal_force_psd(t);
                }
                s
            })
            .collect()
    }
}

fn solve_point(sc: &Scaled, model: &TransducerModel, a: &DMatrix<f64>, omega: f64) -> Result<(DMatrix<Complex64>, Vec<Complex64>, f64)> {
    let dim = sc.dim();
    let n = sc.n_mech + 1;
    let nu = omega / sc.omega_ref;
    let mut m = DMatrix::<Complex64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = Complex64::new(-a[(i, j)], 0.0);
        }
        m[(i, i)] += Complex64::new(0.0, -nu);
    }
    let mut b = DMatrix::<Complex64>::zeros(dim, n);
    for k in 0..n {
        b[(n + k, k)] = Complex64::new(1.0, 0.0);
    }
    let sol = m
        .clone()
        .lu()
        .solve(&b)
        .ok_or(OemtError::SingularSystem { freq_hz: rad_to_hz(omega) })?;
    if sol.iter().any(|z| !z.is_finite()) {
        return Err(OemtError::SingularSystem { freq_hz: rad_to_hz(omega) });
    }
    let resid = &m * &sol - &b;
    let inf = |x: &DMatrix<Complex64>| {
        x.row_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let col_max = |x: &DMatrix<Complex64>| x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let rel = col_max(&resid) / (inf(&m) * col_max(&sol) + col_max(&b));
    if !(rel < RESIDUAL_TOL) {
        return Err(OemtError::Residual { freq_hz: rad_to_hz(omega), residual: rel });
    }

    let mut states = DMatrix::<Complex64>::zeros(dim, n);
    for k in 0..n {
        let g = sc.input_gain(k);
        for (row, i) in (0..sc.n_mech).chain(n..n + sc.n_mech).enumerate() {
            states[(row, k)] = sol[(i, k)] * (g * sc.si_factor(i));
        }
        let nm = sc.n_mech;
        states[(2 * nm, k)] = sol[(nm, k)] * (g * sc.si_factor(nm));
        states[(2 * nm + 1, k)] = sol[(n + nm, k)] * (g * sc.si_factor(n + nm));
    }
    let y: Vec<Complex64> = (0..n)
        .map(|k| {
            model
                .modes
                .iter()
                .enumerate()
                .map(|(i, mo)| states[(i, k)] * mo.alpha)
                .sum()
        })
        .collect();
    Ok((states, y, rel))
}

pub fn solve_full_linear_system(model: &TransducerModel, grid: &FrequencyGrid) -> Result<LinearSystemSolution> {
    if model.modes.is_empty() {
        return Err(OemtError::InvalidInput("model has no modes".into()));
    }
    let sc = Scaled::new(model);
    let a = sc.state_matrix();
    let rows = par::try_map(grid.points(), |w| solve_point(&sc, model, &a, *w))?;
    let max_residual = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let (states, y_out) = rows.into_iter().map(|r| (r.0, r.1)).unzip();
    Ok(LinearSystemSolution {
        grid: grid.clone(),
        n_modes: model.n_modes(),
        states,
        y_out,
        max_residual,
    })
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    /// Poles in the Laplace variable s (e^{st}), rad/s.
    pub roots: Vec<Complex64>,
    pub stable: bool,
    /// Largest real part, rad/s.
    pub margin: f64,
}

pub fn stability_poles(model: &TransducerModel) -> StabilityReport {
    let sc = Scaled::new(model);
    let eig = sc.state_matrix().complex_eigenvalues();
    let mut roots: Vec<Complex64> = eig.iter().map(|z| z * sc.omega_ref).collect();
    sort_roots(&mut roots);
    let margin = roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    StabilityReport { roots, stable: margin < 0.0, margin }
}

fn sort_roots(r: &mut [Complex64]) {
    r.sort_by(|a, b| a.im.total_cmp(&b.im).then(a.re.total_cmp(&b.re)));
}

/// Poles from the characteristic polynomial det(s²I + sC̃ + K̃): the
/// coefficients come from sampling the determinant on the unit circle and
/// an inverse DFT; the roots are companion-matrix eigenvalues.
pub fn characteristic_roots(model: &TransducerModel) -> Vec<Complex64> {
    let sc = Scaled::new(model);
    let n = sc.n_mech + 1;
    let deg = 2 * n;
    let npts = deg + 1;
    let samples: Vec<Complex64> = (0..npts)
        .map(|k| {
            let s = Complex64::from_polar(1.0, TWO_PI * k as f64 / npts as f64);
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = Complex64::new(sc.k[(i, j)], 0.0) + s * sc.c[(i, j)];
                }
                m[(i, i)] += s * s;
            }
            m.lu().determinant()
        })
        .collect();
    let coeffs: Vec<f64> = (0..npts)
        .map(|j| {
            let acc: Complex64 = samples
                .iter()
                .enumerate()
                .map(|(k, p)| p * Complex64::from_polar(1.0, -TWO_PI * (j * k) as f64 / npts as f64))
                .sum();
            acc.re / npts as f64
        })
        .collect();
    let lead = coeffs[deg];
    let mut comp = DMatrix::<f64>::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..deg {
        comp[(i, deg - 1)] = -coeffs[i] / lead;
    }
    let mut roots: Vec<Complex64> = comp.complex_eigenvalues().iter().map(|z| z * sc.omega_ref).collect();
    sort_roots(&mut roots);
    roots
}

/// Largest |a−b|/|a| over a greedy nearest-neighbour pairing.
pub fn root_set_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for za in a {
        let mut best = None;
        for (j, zb) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (za - zb).norm();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        match best {
            Some((j, d)) => {
                used[j] = true;
                worst = worst.max(d / za.norm().max(f64::MIN_POSITIVE));
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

#[derive(Clone, Debug)]
pub struct TimeDomainResult {
    /// δY/δV, m/V.
    pub transfer: Complex64,
    /// Demodulated output phasor, m.
    pub output_phasor: Complex64,
    pub periods_discarded: u64,
}

/// Number of periods treated as transient.
const DECAY_TIMES: f64 = 20.0;
const SAMPLES_PER_PERIOD: usize = 256;

/// Drives the linearised ODEs with δV = A cos Ωt from rest, discards the
/// transient and demodulates δY_out over one period:
/// H = (2/(A T)) ∫ Y(t) e^{iΩt} dt.
///
/// Propagation is exact (matrix exponential of the system augmented with the
/// drive oscillator), so long transients at high Q cost only log₂ squarings.
pub fn time_domain_transfer(model: &TransducerModel, omega: f64, amplitude: f64) -> Result<TimeDomainResult> {
    let report = stability_poles(model);
    if !report.stable {
        return Err(OemtError::Unstable { margin: report.margin });
    }
    if !(omega.is_finite() && omega > 0.0) {
        return Err(OemtError::InvalidInput(format!("drive frequency {omega}")));
    }
    let sc = Scaled::new(model);
    let dim = sc.dim();
    let n = sc.n_mech + 1;
    let nu = omega / sc.omega_ref;
    let a = sc.state_matrix();

    let mut m = DMatrix::<f64>::zeros(dim + 2, dim + 2);
    m.view_mut((0, 0), (dim, dim)).copy_from(&a);
    m[(n + sc.n_mech, dim)] = amplitude * sc.input_gain(sc.n_mech);
    m[(dim, dim + 1)] = -nu;
    m[(dim + 1, dim)] = nu;

    let period = TWO_PI / nu;
    let decay_time = 1.0 / (-report.margin / sc.omega_ref);
    let periods = (DECAY_TIMES * decay_time / period).ceil().max(1.0) as u64;

    let p1 = (&m * period).exp();
    let mut z = DVector::<f64>::zeros(dim + 2);
    z[dim] = 1.0;
    z = matrix_power(&p1, periods) * z;

    let h = period / SAMPLES_PER_PERIOD as f64;
    let step = (&m * h).exp();
    let out = |z: &DVector<f64>| -> f64 {
        model
            .modes
            .iter()
            .enumerate()
            .map(|(i, mo)| mo.alpha * z[i] / sc.sqrt_m[i])
            .sum()
    };
    let mut acc = Complex64::new(0.0, 0.0);
    for _ in 0..SAMPLES_PER_PERIOD {
        let reference = Complex64::new(z[dim], z[dim + 1]);
        acc += reference * out(&z);
        z = &step * z;
    }
    let output_phasor = acc * (2.0 / SAMPLES_PER_PERIOD as f64);
    let transfer = if amplitude == 0.0 {
        Complex64::new(0.0, 0.0)
    } else {
        output_phasor / amplitude
    };
    Ok(TimeDomainResult { transfer, output_phasor, periods_discarded: periods })
}

fn matrix_power(p: &DMatrix<f64>, mut e: u64) -> DMatrix<f64> {
    let mut base = p.clone();
    let mut acc = DMatrix::<f64>::identity(p.nrows(), p.ncols());
    while e > 0 {
        if e & 1 == 1 {
            acc = &acc * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    acc
}

/// Energy (scaled units) left after `decay_times` slowest decay times of free
/// evolution from `initial`, relative to the initial energy.
pub fn free_decay_energy_ratio(model: &TransducerModel, initial: &[f64], decay_times: f64) -> Result<f64> {
    let report = stability_poles(model);
    if !report.stable {
        return Err(OemtError::Unstable { margin: report.margin });
    }
    let sc = Scaled::new(model);
    if initial.len() != sc.dim() {
        return Err(OemtError::InvalidInput(format!(
            "initial state has {} entries, expected {}",
            initial.len(),
            sc.dim()
        )));
    }
    let a = sc.state_matrix();
    let t = decay_times / (-report.margin / sc.omega_ref);
    let z0 = DVector::from_column_slice(initial);
    let z1 = (&a * t).exp() * &z0;
    let energy = |z: &DVector<f64>| {
        let n = sc.n_mech + 1;
        let r = z.rows(0, n).into_owned();
        let v = z.rows(n, n).into_owned();
        0.5 * (v.dot(&v) + r.dot(&(&sc.k * &r)))
    };
    Ok(energy(&z1) / energy(&z0))
}

/// State matrix of the balanced system, scaled time; exposed for integrator
/// cross-checks.
pub fn scaled_state_matrix(model: &TransducerModel) -> (DMatrix<f64>, f64) {
    let sc = Scaled::new(model);
    (sc.state_matrix(), sc.omega_ref)
}

/// Dormand–Prince 5(4) for the linear ODE z' = M z.
pub fn integrate_dopri5(m: &DMatrix<f64>, z0: &DVector<f64>, t_end: f64, rtol: f64) -> DVector<f64> {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let atol = rtol * z0.amax().max(f64::MIN_POSITIVE);
    let mut t = 0.0;
    let mut z = z0.clone();
    let mut h = 1e-3 * t_end.min(1.0);
    while t < t_end {
        h = h.min(t_end - t);
        let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
        for a in &A {
            let mut zs = z.clone();
            for (j, kj) in k.iter().enumerate() {
                if a[j] != 0.0 {
                    zs.axpy(h * a[j], kj, 1.0);
                }
            }
            k.push(m * zs);
        }
        let mut z5 = z.clone();
        let mut err = DVector::<f64>::zeros(z.len());
        for s in 0..7 {
            z5.axpy(h * B5[s], &k[s], 1.0);
            err.axpy(h * (B5[s] - B4[s]), &k[s], 1.0);
        }
        let norm = err
            .iter()
            .zip(z.iter().zip(z5.iter()))
            .map(|(e, (a, b))| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / z.len() as f64;
        let norm = norm.sqrt();
        if norm <= 1.0 {
            t += h;
            z = z5;
        }
        let fac = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
    }
    z
}
