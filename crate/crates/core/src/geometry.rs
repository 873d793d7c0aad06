//! Membrane/electrode geometry: mode shapes, transverse overlaps, effective
//! masses, the series parallel-plate capacitance and the couplings derived
//! from it.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OemtError, Result};
use crate::model::{EPS0, TWO_PI};
use crate::par;
use crate::quad;

/// Fixture densities for the metallised membrane stack, kg/m³.
pub const SIN_DENSITY: f64 = 3100.0;
pub const NB_DENSITY: f64 = 8570.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeShape {
    pub n: u32,
    pub m: u32,
    pub side_length: f64,
}

impl ModeShape {
    pub fn new(n: u32, m: u32, side_length: f64) -> Result<Self> {
        if n < 1 || m < 1 || !(side_length > 0.0) {
            return Err(OemtError::InvalidInput(format!("bad mode shape ({n},{m}) L={side_length}")));
        }
        Ok(ModeShape { n, m, side_length })
    }

    pub fn kn(&self) -> f64 {
        self.n as f64 * PI / self.side_length
    }

    pub fn km(&self) -> f64 {
        self.m as f64 * PI / self.side_length
    }

    /// No domain check; callers guarantee 0 ≤ x, y ≤ L.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        (self.kn() * x).sin() * (self.km() * y).sin()
    }
}

pub fn mode_shape_eval(shape: &ModeShape, x: f64, y: f64) -> Result<f64> {
    let l = shape.side_length;
    if !(0.0..=l).contains(&x) || !(0.0..=l).contains(&y) {
        return Err(OemtError::InvalidInput(format!("point ({x}, {y}) outside membrane of side {l}")));
    }
    // Exact zero on the clamped edge; sin(nπ) is only ~1e-16 in floating point.
    if x == 0.0 || y == 0.0 || x == l || y == l {
        return Ok(0.0);
    }
    Ok(shape.value(x, y))
}

/// Extra surface density inside a disk, kg/m² (negative for a hole).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityDisk {
    pub center: (f64, f64),
    pub radius: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDensity {
    pub uniform: f64,
    #[serde(default)]
    pub disks: Vec<DensityDisk>,
}

impl SurfaceDensity {
    pub fn uniform(sigma: f64) -> Self {
        SurfaceDensity { uniform: sigma, disks: Vec::new() }
    }

    /// SiN film fully coated by Nb except for a central circular hole in the Nb.
    pub fn coated_with_hole(side: f64, t_sin: f64, t_nb: f64, hole_diameter: f64) -> Self {
        let s_nb = t_nb * NB_DENSITY;
        SurfaceDensity {
            uniform: t_sin * SIN_DENSITY + s_nb,
            disks: vec![DensityDisk {
                center: (0.5 * side, 0.5 * side),
                radius: 0.5 * hole_diameter,
                delta: -s_nb,
            }],
        }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let mut s = self.uniform;
        for d in &self.disks {
            let (dx, dy) = (x - d.center.0, y - d.center.1);
            if dx * dx + dy * dy < d.radius * d.radius {
                s += d.delta;
            }
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembraneGeometry {
    pub side_length: f64,
    pub density: SurfaceDensity,
    /// Equilibrium membrane–electrode gap h₀, m.
    pub gap: f64,
    pub beam_waist: f64,
    pub beam_center: (f64, f64),
}

impl MembraneGeometry {
    pub fn validate(&self) -> Result<()> {
        let l = self.side_length;
        let inside = |v: f64| (0.0..=l).contains(&v);
        if !(l > 0.0) || !(self.gap > 0.0) || !(self.beam_waist > 0.0) {
            return Err(OemtError::InvalidInput("side, gap and waist must be positive".into()));
        }
        if !inside(self.beam_center.0) || !inside(self.beam_center.1) {
            return Err(OemtError::InvalidInput("beam centre outside membrane".into()));
        }
        if self.density.uniform < 0.0 || self.density.disks.iter().any(|d| self.density.uniform + d.delta < 0.0) {
            return Err(OemtError::InvalidInput("negative surface density".into()));
        }
        for d in &self.density.disks {
            let (cx, cy) = d.center;
            if cx - d.radius < 0.0 || cx + d.radius > l || cy - d.radius < 0.0 || cy + d.radius > l {
                return Err(OemtError::InvalidInput("density disk extends past the membrane".into()));
            }
        }
        Ok(())
    }
}

/// Raster of electrode polarity over the membrane plane. Row r covers
/// y ∈ [r·p, (r+1)·p), column c covers x ∈ [c·p, (c+1)·p).
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeMask {
    ncols: usize,
    nrows: usize,
    pixel_size: f64,
    cells: Vec<i8>,
}

impl ElectrodeMask {
    pub fn new(ncols: usize, nrows: usize, pixel_size: f64, cells: Vec<i8>) -> Result<Self> {
        if ncols == 0 || nrows == 0 || cells.len() != ncols * nrows {
            return Err(OemtError::InvalidInput(format!(
                "mask {ncols}x{nrows} needs {} cells, got {}",
                ncols * nrows,
                cells.len()
            )));
        }
        if !(pixel_size > 0.0) {
            return Err(OemtError::InvalidInput("pixel size must be positive".into()));
        }
        if cells.iter().any(|c| !(-1..=1).contains(c)) {
            return Err(OemtError::InvalidInput("mask cells must be +1, -1 or 0".into()));
        }
        Ok(ElectrodeMask { ncols, nrows, pixel_size, cells })
    }

    pub fn from_fn<F: Fn(f64, f64) -> i8>(ncols: usize, nrows: usize, pixel_size: f64, f: F) -> Result<Self> {
        let mut cells = Vec::with_capacity(ncols * nrows);
        for r in 0..nrows {
            for c in 0..ncols {
                let (x, y) = ((c as f64 + 0.5) * pixel_size, (r as f64 + 0.5) * pixel_size);
                cells.push(f(x, y));
            }
        }
        ElectrodeMask::new(ncols, nrows, pixel_size, cells)
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn cells(&self) -> &[i8] {
        &self.cells
    }

    pub fn get(&self, col: usize, row: usize) -> i8 {
        self.cells[row * self.ncols + col]
    }

    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        ((col as f64 + 0.5) * self.pixel_size, (row as f64 + 0.5) * self.pixel_size)
    }

    pub fn polarity_swapped(&self) -> Self {
        ElectrodeMask { cells: self.cells.iter().map(|c| -c).collect(), ..self.clone() }
    }

    pub fn count(&self, polarity: i8) -> usize {
        self.cells.iter().filter(|c| **c == polarity).count()
    }

    pub fn require_usable(&self) -> Result<()> {
        if self.count(1) == 0 || self.count(-1) == 0 {
            return Err(OemtError::InvalidInput("mask needs at least one + and one - cell".into()));
        }
        Ok(())
    }

    /// Row-parallel sum of f(x, y, polarity) over non-zero cells; rows are
    /// reduced in order so the result is deterministic.
    fn sum_cells<F>(&self, f: F) -> [f64; 2]
    where
        F: Fn(f64, f64) -> f64 + Sync + Send,
    {
        let rows = par::map_range(self.nrows, |r| {
            let mut acc = [0.0f64; 2];
            for c in 0..self.ncols {
                let p = self.get(c, r);
                if p != 0 {
                    let (x, y) = self.center(c, r);
                    acc[if p > 0 { 0 } else { 1 }] += f(x, y);
                }
            }
            acc
        });
        rows.iter().fold([0.0; 2], |a, r| [a[0] + r[0], a[1] + r[1]])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Bottom,
    Right,
    Top,
    Left,
}

/// Four triangular segments meeting at the membrane centre, separated by
/// diagonal gaps of `gap` width and clipped by a central unmetallised disk.
/// One segment is wired +, another −, the rest are left floating.
pub fn four_segment_mask(
    pixels: usize,
    side: f64,
    gap: f64,
    hole_diameter: f64,
    plus: Segment,
    minus: Segment,
) -> Result<ElectrodeMask> {
    let px = side / pixels as f64;
    let c = 0.5 * side;
    let seg_of = |x: f64, y: f64| -> Option<Segment> {
        let (dx, dy) = (x - c, y - c);
        if dx * dx + dy * dy < 0.25 * hole_diameter * hole_diameter {
            return None;
        }
        let s2 = std::f64::consts::SQRT_2;
        if ((dx - dy) / s2).abs() < 0.5 * gap || ((dx + dy) / s2).abs() < 0.5 * gap {
            return None;
        }
        Some(if dy.abs() > dx.abs() {
            if dy < 0.0 { Segment::Bottom } else { Segment::Top }
        } else if dx > 0.0 {
            Segment::Right
        } else {
            Segment::Left
        })
    };
    ElectrodeMask::from_fn(pixels, pixels, px, |x, y| match seg_of(x, y) {
        Some(s) if s == plus => 1,
        Some(s) if s == minus => -1,
        _ => 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapMethod {
    Analytic,
    Quadrature,
}

/// Normalised TEM₀₀ intensity, 1/m².
fn gaussian_intensity(w: f64, dx: f64, dy: f64) -> f64 {
    2.0 / (PI * w * w) * (-2.0 * (dx * dx + dy * dy) / (w * w)).exp()
}

pub fn transverse_overlap(shape: &ModeShape, geom: &MembraneGeometry, method: OverlapMethod) -> f64 {
    let (x0, y0) = geom.beam_center;
    let w = geom.beam_waist;
    match method {
        OverlapMethod::Analytic => {
            let (kn, km) = (shape.kn(), shape.km());
            (-w * w * (kn * kn + km * km) / 8.0).exp() * (kn * x0).sin() * (km * y0).sin()
        }
        OverlapMethod::Quadrature => {
            let l = geom.side_length;
            let offs = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0];
            let xb = quad::breaks_around(0.0, l, x0, w, &offs);
            let yb = quad::breaks_around(0.0, l, y0, w, &offs);
            quad::integrate_2d(
                |x, y| shape.value(x, y) * gaussian_intensity(w, x - x0, y - y0),
                &xb,
                &yb,
                1e-12,
            )
        }
    }
}

/// m_eff = ∬ σ u². The uniform part is exact (σL²/4); disks are integrated
/// in polar coordinates.
pub fn effective_mass(shape: &ModeShape, geom: &MembraneGeometry) -> f64 {
    let l = geom.side_length;
    let mut m = geom.density.uniform * l * l / 4.0;
    for d in &geom.density.disks {
        let (cx, cy) = d.center;
        let ring = |r: f64| {
            r * quad::integrate(
                |t: f64| {
                    let u = shape.value(cx + r * t.cos(), cy + r * t.sin());
                    u * u
                },
                0.0,
                TWO_PI,
                1e-13,
            )
        };
        m += d.delta * quad::integrate(ring, 0.0, d.radius, 1e-13 * d.radius * d.radius);
    }
    m
}

/// Cartesian cross-check: 2D quadrature of σ₀u² over the square plus each
/// disk integrated chord by chord.
pub fn effective_mass_quadrature(shape: &ModeShape, geom: &MembraneGeometry) -> f64 {
    let l = geom.side_length;
    let u2 = |x: f64, y: f64| {
        let u = shape.value(x, y);
        u * u
    };
    let nodes: Vec<f64> = (0..=2 * shape.n.max(shape.m)).map(|k| k as f64 * l / (2 * shape.n.max(shape.m)) as f64).collect();
    let mut m = geom.density.uniform * quad::integrate_2d(u2, &nodes, &nodes, 1e-12 * l * l);
    for d in &geom.density.disks {
        let (cx, cy, r) = (d.center.0, d.center.1, d.radius);
        let chord = |x: f64| {
            let s = (r * r - (x - cx) * (x - cx)).max(0.0).sqrt();
            quad::integrate(|y| u2(x, y), cy - s, cy + s, 1e-13 * r)
        };
        m += d.delta * quad::integrate_breaks(chord, &[cx - r, cx, cx + r], 1e-13 * r * r);
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Capacitance {
    pub c_plus: f64,
    pub c_minus: f64,
    pub c_m: f64,
}

fn displacement(modal: &[(ModeShape, f64)], x: f64, y: f64) -> f64 {
    modal.iter().map(|(s, b)| b * s.value(x, y)).sum()
}

fn check_contact(mask: &ElectrodeMask, gap: f64, modal: &[(ModeShape, f64)]) -> Result<()> {
    let mut min_gap = f64::INFINITY;
    for r in 0..mask.nrows() {
        for c in 0..mask.ncols() {
            if mask.get(c, r) != 0 {
                let (x, y) = mask.center(c, r);
                min_gap = min_gap.min(gap + displacement(modal, x, y));
            }
        }
    }
    if min_gap <= 0.0 {
        return Err(OemtError::Contact { min_gap });
    }
    Ok(())
}

pub fn membrane_capacitance(
    mask: &ElectrodeMask,
    geom: &MembraneGeometry,
    modal: &[(ModeShape, f64)],
) -> Result<Capacitance> {
    mask.require_usable()?;
    check_contact(mask, geom.gap, modal)?;
    let a = mask.pixel_size() * mask.pixel_size();
    let h0 = geom.gap;
    let s = mask.sum_cells(|x, y| EPS0 * a / (h0 + displacement(modal, x, y)));
    Ok(Capacitance { c_plus: s[0], c_minus: s[1], c_m: 1.0 / (1.0 / s[0] + 1.0 / s[1]) })
}

/// C_m(β) − C_m(0) computed from per-pixel increments, without subtracting
/// two nearly equal capacitances.
fn membrane_capacitance_increment(
    mask: &ElectrodeMask,
    geom: &MembraneGeometry,
    base: &Capacitance,
    modal: &[(ModeShape, f64)],
) -> Result<f64> {
    check_contact(mask, geom.gap, modal)?;
    let a = mask.pixel_size() * mask.pixel_size();
    let h0 = geom.gap;
    let d = mask.sum_cells(|x, y| {
        let dz = displacement(modal, x, y);
        -EPS0 * a * dz / (h0 * (h0 + dz))
    });
    let inv_inc = |c: f64, dc: f64| -dc / (c * (c + dc));
    let s = 1.0 / base.c_plus + 1.0 / base.c_minus;
    let ds = inv_inc(base.c_plus, d[0]) + inv_inc(base.c_minus, d[1]);
    Ok(-ds / (s * (s + ds)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Overlaps {
    pub o_plus0: f64,
    pub o_minus0: f64,
    pub o_plus1: Vec<f64>,
    pub o_minus1: Vec<f64>,
    pub a_eff: Vec<f64>,
}

pub fn overlap_areas(mask: &ElectrodeMask, shapes: &[ModeShape]) -> Result<Overlaps> {
    mask.require_usable()?;
    let a = mask.pixel_size() * mask.pixel_size();
    let o0 = mask.sum_cells(|_, _| a);
    let mut o_plus1 = Vec::with_capacity(shapes.len());
    let mut o_minus1 = Vec::with_capacity(shapes.len());
    let mut a_eff = Vec::with_capacity(shapes.len());
    for s in shapes {
        let o1 = mask.sum_cells(|x, y| a * s.value(x, y));
        o_plus1.push(o1[0]);
        o_minus1.push(o1[1]);
        a_eff.push(effective_area(o0[0], o0[1], o1[0], o1[1]));
    }
    Ok(Overlaps { o_plus0: o0[0], o_minus0: o0[1], o_plus1, o_minus1, a_eff })
}

pub fn effective_area(o_plus0: f64, o_minus0: f64, o_plus1: f64, o_minus1: f64) -> f64 {
    let num = o_plus1 / (o_plus0 * o_plus0) + o_minus1 / (o_minus0 * o_minus0);
    let den = 1.0 / o_plus0 + 1.0 / o_minus0;
    num / (den * den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub v_dc: f64,
    /// Circuit capacitance in parallel with the membrane, F.
    pub c0: f64,
}

/// G = V ε₀ A_eff / (C₀ h₀²).
pub fn coupling_from_area(v_dc: f64, c0: f64, gap: f64, a_eff: f64) -> f64 {
    v_dc * EPS0 * a_eff / (c0 * gap * gap)
}

/// Λ = ε₀ A₀ / h₀³, F/m².
pub fn curvature_coefficient(a_eff: f64, gap: f64) -> f64 {
    EPS0 * a_eff / (gap * gap * gap)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Couplings {
    pub overlaps: Overlaps,
    pub c_m: f64,
    pub g: Vec<f64>,
    /// G from −(V/C₀)∂C_m/∂β by central differences.
    pub g_numeric: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
    pub delta_omega: Vec<f64>,
    pub delta_nu_hz: Vec<f64>,
    /// −V²·2ε₀A_eff/h₀³ / (16π² m ν), only for the fundamental (1,1).
    pub delta_nu_approx_hz: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// Second derivatives of C_m in modal coordinates by central differences.
fn cm_derivatives(
    mask: &ElectrodeMask,
    geom: &MembraneGeometry,
    shapes: &[ModeShape],
    base: &Capacitance,
    h: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = shapes.len();
    let inc = |steps: &[(usize, f64)]| -> Result<f64> {
        let modal: Vec<(ModeShape, f64)> = steps.iter().map(|(i, b)| (shapes[*i], *b)).collect();
        membrane_capacitance_increment(mask, geom, base, &modal)
    };
    let mut first = vec![0.0; n];
    let mut second = DMatrix::zeros(n, n);
    for i in 0..n {
        let p = inc(&[(i, h)])?;
        let m = inc(&[(i, -h)])?;
        first[i] = (p - m) / (2.0 * h);
        second[(i, i)] = (p + m) / (h * h);
        for j in 0..i {
            let pp = inc(&[(i, h), (j, h)])?;
            let pm = inc(&[(i, h), (j, -h)])?;
            let mp = inc(&[(i, -h), (j, h)])?;
            let mm = inc(&[(i, -h), (j, -h)])?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            second[(i, j)] = v;
            second[(j, i)] = v;
        }
    }
    Ok((first, second))
}

/// Couplings, frequency shifts and mechanical cross-couplings from geometry.
/// `masses` and `omegas` (rad/s) are needed to turn the 1/C curvature into
/// frequency shifts.
pub fn couplings_from_geometry(
    mask: &ElectrodeMask,
    geom: &MembraneGeometry,
    shapes: &[ModeShape],
    bias: &BiasConfig,
    masses: &[f64],
    omegas: &[f64],
) -> Result<Couplings> {
    let n = shapes.len();
    if masses.len() != n || omegas.len() != n {
        return Err(OemtError::InvalidInput("need one mass and frequency per shape".into()));
    }
    if !(bias.c0 > 0.0) {
        return Err(OemtError::InvalidInput("c0 must be positive".into()));
    }
    let overlaps = overlap_areas(mask, shapes)?;
    let base = membrane_capacitance(mask, geom, &[])?;
    let mut warnings = Vec::new();
    if bias.c0 / base.c_m < 20.0 {
        warnings.push(format!("C0/C_m = {:.3} < 20: weak-membrane approximation is poor", bias.c0 / base.c_m));
    }
    let (v, c0, h0) = (bias.v_dc, bias.c0, geom.gap);
    let g: Vec<f64> = overlaps.a_eff.iter().map(|a| coupling_from_area(v, c0, h0, *a)).collect();

    let step = h0 * 1e-4;
    let (d1, d2) = cm_derivatives(mask, geom, shapes, &base, step)?;
    let (_, d2_half) = cm_derivatives(mask, geom, shapes, &base, 0.5 * step)?;
    for i in 0..n {
        for j in 0..n {
            let rel = (d2[(i, j)] - d2_half[(i, j)]).abs() / d2[(i, i)].abs().max(f64::MIN_POSITIVE);
            if rel > 1e-4 {
                warnings.push(format!("finite-difference step sensitivity {rel:.2e} for d2C/db{i}db{j}"));
            }
        }
    }
    let g_numeric: Vec<f64> = d1.iter().map(|d| -v / c0 * d).collect();

    let c_tot = c0 + base.c_m;
    let q_bar = v * c_tot;
    // ∂i∂j(1/C) with C = C₀ + C_m.
    let inv_c2 = |i: usize, j: usize| -d2[(i, j)] / (c_tot * c_tot) + 2.0 * d1[i] * d1[j] / (c_tot * c_tot * c_tot);
    let lambda: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.0 } else { 0.5 * q_bar * q_bar * inv_c2(i, j) }).collect())
        .collect();
    let delta_omega: Vec<f64> = (0..n)
        .map(|i| q_bar * q_bar / (4.0 * masses[i] * omegas[i]) * inv_c2(i, i))
        .collect();
    let delta_nu_hz = delta_omega.iter().map(|d| d / TWO_PI).collect();
    let delta_nu_approx_hz = (0..n)
        .map(|i| {
            let nu = omegas[i] / TWO_PI;
            (shapes[i].n == 1 && shapes[i].m == 1)
                .then(|| -v * v * 2.0 * EPS0 * overlaps.a_eff[i] / (h0 * h0 * h0) / (16.0 * PI * PI * masses[i] * nu))
        })
        .collect();

    Ok(Couplings {
        overlaps,
        c_m: base.c_m,
        g,
        g_numeric,
        lambda,
        delta_omega,
        delta_nu_hz,
        delta_nu_approx_hz,
        warnings,
    })
}

/// ν(V) = ν₀(1 − ε₀A₀V²/(8π² m ν₀² h₀³)) with A₀ from the mask overlap.
pub fn frequency_shift_curve(
    geom: &MembraneGeometry,
    mask: &ElectrodeMask,
    shape: &ModeShape,
    v_dc: &[f64],
    nu0: f64,
    m_eff: f64,
) -> Result<Vec<f64>> {
    if !(nu0 > 0.0 && m_eff > 0.0) {
        return Err(OemtError::InvalidInput("nu0 and m_eff must be positive".into()));
    }
    let a0 = overlap_areas(mask, std::slice::from_ref(shape))?.a_eff[0];
    Ok(frequency_shift_from_lambda(curvature_coefficient(a0, geom.gap), v_dc, nu0, m_eff))
}

pub fn frequency_shift_from_lambda(lambda: f64, v_dc: &[f64], nu0: f64, m_eff: f64) -> Vec<f64> {
    let k = lambda / (8.0 * PI * PI * m_eff * nu0 * nu0);
    v_dc.iter().map(|v| nu0 * (1.0 - k * v * v)).collect()
}
