//! Configuration files, CSV curves and ASCII electrode masks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OemtError, Result};
use crate::geometry::{
    couplings_from_geometry, BiasConfig, DensityDisk, ElectrodeMask, MembraneGeometry, ModeShape, SurfaceDensity,
};
use crate::model::{
    hz_to_rad, rad_to_hz, validate_model, FrequencyGrid, LcResonator, MechanicalMode, NoiseEnvironment, RfNoise,
    TransducerModel,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub label: [u32; 2],
    pub freq_hz: f64,
    /// Linewidth Γ/2π.
    pub gamma_hz: f64,
    pub mass_kg: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_v_per_m: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcConfig {
    pub inductance_h: f64,
    pub c0_f: f64,
    pub cm_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Γ_LC/2π.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub temperature_k: f64,
    pub shot_m2_per_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_v2_per_hz: Option<f64>,
    /// [frequency_hz, V²/Hz] pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf_table: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiskConfig {
    pub center_m: [f64; 2],
    pub radius_m: f64,
    pub delta_kg_per_m2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub uniform_kg_per_m2: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disks: Vec<DiskConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub side_m: f64,
    pub gap_m: f64,
    pub waist_m: f64,
    pub beam_xy_m: [f64; 2],
    /// Relative paths resolve against the config file's directory.
    pub mask_path: String,
    pub v_dc: f64,
    pub densities: DensityConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub modes: Vec<ModeConfig>,
    pub lc: LcConfig,
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryConfig>,
}

#[derive(Clone, Debug)]
pub struct GeometryBundle {
    pub geometry: MembraneGeometry,
    pub mask: ElectrodeMask,
    pub bias: BiasConfig,
    pub shapes: Vec<ModeShape>,
}

#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub model: TransducerModel,
    pub geometry: Option<GeometryBundle>,
    pub warnings: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    serde_json::from_str(text)
        .map_err(|e| OemtError::Parse(format!("line {}, column {}: {}", e.line(), e.column(), e)))
}

/// Pretty JSON with shortest round-trip numbers and a trailing newline.
pub fn emit_config(cfg: &ConfigFile) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serialises");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| OemtError::Io(format!("{}: {e}", path.display())))
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let cfg = parse_config(&read_text(path)?)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    build_model(cfg, &base)
}

fn build_density(d: &DensityConfig) -> SurfaceDensity {
    SurfaceDensity {
        uniform: d.uniform_kg_per_m2,
        disks: d
            .disks
            .iter()
            .map(|k| DensityDisk { center: (k.center_m[0], k.center_m[1]), radius: k.radius_m, delta: k.delta_kg_per_m2 })
            .collect(),
    }
}

/// Builds and validates the model; `base` resolves relative mask paths.
pub fn build_model(cfg: ConfigFile, base: &Path) -> Result<LoadedConfig> {
    let mut warnings = Vec::new();
    if cfg.modes.is_empty() {
        return Err(OemtError::Validation("no_modes: config lists no modes".into()));
    }
    let lc = {
        let c = &cfg.lc;
        let cap = c.c0_f + c.cm_f;
        match (c.q, c.gamma_hz) {
            (Some(q), None) => LcResonator::from_lcq(c.inductance_h, cap, q),
            (None, Some(g)) => LcResonator { inductance: c.inductance_h, capacitance_total: cap, gamma_lc: hz_to_rad(g) },
            _ => return Err(OemtError::Parse("lc: exactly one of `q` or `gamma_hz` is required".into())),
        }
    };
    let rf = match (&cfg.noise.rf_v2_per_hz, &cfg.noise.rf_table) {
        (Some(v), None) => RfNoise::White(*v),
        (None, Some(t)) => RfNoise::Table(t.iter().map(|p| (hz_to_rad(p[0]), p[1])).collect()),
        (None, None) => RfNoise::White(0.0),
        _ => return Err(OemtError::Parse("noise: give either `rf_v2_per_hz` or `rf_table`, not both".into())),
    };
    let noise = NoiseEnvironment { temperature: cfg.noise.temperature_k, shot_noise: cfg.noise.shot_m2_per_hz, rf_voltage_noise: rf };

    let bundle = match &cfg.geometry {
        None => None,
        Some(g) => {
            let mask_path = {
                let p = PathBuf::from(&g.mask_path);
                if p.is_absolute() { p } else { base.join(p) }
            };
            let mask = parse_mask(&read_text(&mask_path)?)?;
            let geometry = MembraneGeometry {
                side_length: g.side_m,
                density: build_density(&g.densities),
                gap: g.gap_m,
                beam_waist: g.waist_m,
                beam_center: (g.beam_xy_m[0], g.beam_xy_m[1]),
            };
            geometry.validate()?;
            let shapes = cfg
                .modes
                .iter()
                .map(|m| ModeShape::new(m.label[0], m.label[1], g.side_m))
                .collect::<Result<Vec<_>>>()?;
            Some(GeometryBundle { geometry, mask, bias: BiasConfig { v_dc: g.v_dc, c0: cfg.lc.c0_f }, shapes })
        }
    };

    let need_geometry = cfg.modes.iter().any(|m| m.g_v_per_m.is_none());
    let derived_g = match (&bundle, need_geometry) {
        (Some(b), true) => {
            let masses: Vec<f64> = cfg.modes.iter().map(|m| m.mass_kg).collect();
            let omegas: Vec<f64> = cfg.modes.iter().map(|m| hz_to_rad(m.freq_hz)).collect();
            let c = couplings_from_geometry(&b.mask, &b.geometry, &b.shapes, &b.bias, &masses, &omegas)?;
            warnings.extend(c.warnings.iter().cloned());
            Some(c.g)
        }
        (None, true) => {
            return Err(OemtError::Parse("modes: `g_v_per_m` missing and no geometry given".into()));
        }
        _ => None,
    };
    let mut modes = Vec::with_capacity(cfg.modes.len());
    for (i, m) in cfg.modes.iter().enumerate() {
        let g_em = match (m.g_v_per_m, &derived_g) {
            (Some(g), _) => {
                if bundle.is_some() {
                    warnings.push(format!(
                        "mode ({},{}): explicit g_v_per_m overrides the geometry-derived coupling",
                        m.label[0], m.label[1]
                    ));
                }
                g
            }
            (None, Some(d)) => d[i],
            (None, None) => unreachable!("checked above"),
        };
        modes.push(MechanicalMode {
            label: (m.label[0], m.label[1]),
            omega_m: hz_to_rad(m.freq_hz),
            gamma: hz_to_rad(m.gamma_hz),
            mass_eff: m.mass_kg,
            alpha: m.alpha,
            g_em,
        });
    }
    let n = modes.len();
    let mut model = TransducerModel::new(modes, lc, noise);
    if let Some(l) = &cfg.lambda {
        if l.len() != n || l.iter().any(|r| r.len() != n) {
            return Err(OemtError::Validation(format!("lambda_shape: lambda must be {n}x{n}")));
        }
        model.lambda_mech = DMatrix::from_fn(n, n, |i, j| l[i][j]);
    }
    validate_model(&model).into_result()?;
    Ok(LoadedConfig { file: cfg, model, geometry: bundle, warnings })
}

/// Config describing `model` (frequencies in Hz, LC as C₀ = C, C_m = 0).
pub fn config_from_model(model: &TransducerModel) -> ConfigFile {
    let n = model.n_modes();
    let has_lambda = model.lambda_mech.iter().any(|v| *v != 0.0);
    ConfigFile {
        modes: model
            .modes
            .iter()
            .map(|m| ModeConfig {
                label: [m.label.0, m.label.1],
                freq_hz: rad_to_hz(m.omega_m),
                gamma_hz: rad_to_hz(m.gamma),
                mass_kg: m.mass_eff,
                alpha: m.alpha,
                g_v_per_m: Some(m.g_em),
            })
            .collect(),
        lc: LcConfig {
            inductance_h: model.lc.inductance,
            c0_f: model.lc.capacitance_total,
            cm_f: 0.0,
            q: None,
            gamma_hz: Some(rad_to_hz(model.lc.gamma_lc)),
        },
        noise: NoiseConfig {
            temperature_k: model.noise.temperature,
            shot_m2_per_hz: model.noise.shot_noise,
            rf_v2_per_hz: match &model.noise.rf_voltage_noise {
                RfNoise::White(v) => Some(*v),
                RfNoise::Table(_) => None,
            },
            rf_table: match &model.noise.rf_voltage_noise {
                RfNoise::White(_) => None,
                RfNoise::Table(t) => Some(t.iter().map(|p| [rad_to_hz(p.0), p.1]).collect()),
            },
        },
        lambda: has_lambda.then(|| (0..n).map(|i| (0..n).map(|j| model.lambda_mech[(i, j)]).collect()).collect()),
        geometry: None,
    }
}

/// Shortest round-trip scientific notation; non-finite values as `inf`/`-inf`/`NaN`.
pub fn format_number(v: f64) -> String {
    format!("{v:e}")
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>().map_err(|_| OemtError::Parse(format!("line {line}: cannot parse number `{s}`")))
}

/// CSV with header `frequency_hz,<names...>`, LF endings.
pub fn write_csv(freq_hz: &[f64], names: &[&str], columns: &[&[f64]]) -> Result<String> {
    if names.len() != columns.len() || columns.iter().any(|c| c.len() != freq_hz.len()) {
        return Err(OemtError::InvalidInput("CSV column lengths differ".into()));
    }
    let mut out = String::with_capacity(freq_hz.len() * 32);
    out.push_str("frequency_hz");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (k, f) in freq_hz.iter().enumerate() {
        out.push_str(&format_number(*f));
        for c in columns {
            out.push(',');
            out.push_str(&format_number(c[k]));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_spectrum_csv(freq_hz: &[f64], values: &[f64]) -> Result<String> {
    write_csv(freq_hz, &["value"], &[values])
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvSpectrum {
    pub freq_hz: Vec<f64>,
    pub values: Vec<f64>,
}

impl CsvSpectrum {
    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.freq_hz.iter().map(|f| hz_to_rad(*f)).collect())
    }
}

pub fn parse_spectrum_csv(text: &str) -> Result<CsvSpectrum> {
    if text.contains('\r') {
        return Err(OemtError::Parse("CSV must use LF line endings".into()));
    }
    let mut lines = text.lines();
    match lines.next() {
        Some("frequency_hz,value") => {}
        Some(h) => return Err(OemtError::Parse(format!("line 1: expected header `frequency_hz,value`, got `{h}`"))),
        None => return Err(OemtError::Parse("empty CSV".into())),
    }
    let mut freq_hz = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(f), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(OemtError::Parse(format!("line {ln}: expected two fields")));
        };
        let f = parse_number(f, ln)?;
        let v = parse_number(v, ln)?;
        if let Some(prev) = freq_hz.last() {
            if !(f > *prev) {
                return Err(OemtError::Parse(format!("line {ln}: frequency not strictly increasing")));
            }
        }
        freq_hz.push(f);
        values.push(v);
    }
    Ok(CsvSpectrum { freq_hz, values })
}

pub fn emit_spectrum_csv(s: &CsvSpectrum) -> String {
    write_spectrum_csv(&s.freq_hz, &s.values).expect("equal lengths")
}

/// Bias curve with header `v_dc,frequency_hz`; returns (V, ν) pairs.
pub fn parse_bias_curve(text: &str) -> Result<Vec<(f64, f64)>> {
    if text.contains('\r') {
        return Err(OemtError::Parse("CSV must use LF line endings".into()));
    }
    let mut lines = text.lines();
    match lines.next() {
        Some("v_dc,frequency_hz") => {}
        Some(h) => return Err(OemtError::Parse(format!("line 1: expected header `v_dc,frequency_hz`, got `{h}`"))),
        None => return Err(OemtError::Parse("empty CSV".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        if line.is_empty() {
            continue;
        }
        let Some((v, f)) = line.split_once(',') else {
            return Err(OemtError::Parse(format!("line {ln}: expected two fields")));
        };
        out.push((parse_number(v, ln)?, parse_number(f, ln)?));
    }
    Ok(out)
}

/// Long form `swept_value,frequency_hz,vs_v_per_sqrthz`; failed rows are skipped.
pub fn write_sweep_csv(values: &[f64], freq_hz: &[f64], rows: &[Option<Vec<f64>>]) -> String {
    let mut out = String::from("swept_value,frequency_hz,vs_v_per_sqrthz\n");
    for (v, row) in values.iter().zip(rows) {
        if let Some(r) = row {
            for (f, s) in freq_hz.iter().zip(r) {
                let _ = writeln!(out, "{},{},{}", format_number(*v), format_number(*f), format_number(*s));
            }
        }
    }
    out
}

pub fn parse_mask(text: &str) -> Result<ElectrodeMask> {
    if text.contains('\r') {
        return Err(OemtError::Parse("mask must use LF line endings".into()));
    }
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| OemtError::Parse("empty mask file".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != "mask" {
        return Err(OemtError::Parse("line 1: expected `mask <ncols> <nrows> <pixel_size_meters>`".into()));
    }
    let bad = |what: &str| OemtError::Parse(format!("line 1: bad {what}"));
    let ncols: usize = fields[1].parse().map_err(|_| bad("ncols"))?;
    let nrows: usize = fields[2].parse().map_err(|_| bad("nrows"))?;
    let pixel: f64 = fields[3].parse().map_err(|_| bad("pixel size"))?;
    let mut cells = Vec::with_capacity(ncols * nrows);
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let ln = i + 2;
        if count == nrows {
            if line.is_empty() {
                continue;
            }
            return Err(OemtError::Parse(format!("line {ln}: more than {nrows} rows")));
        }
        if line.chars().count() != ncols {
            return Err(OemtError::Parse(format!("line {ln}: expected {ncols} cells, got {}", line.chars().count())));
        }
        for ch in line.chars() {
            cells.push(match ch {
                '+' => 1,
                '-' => -1,
                '.' => 0,
                c => return Err(OemtError::Parse(format!("line {ln}: invalid cell `{c}`"))),
            });
        }
        count += 1;
    }
    if count != nrows {
        return Err(OemtError::Parse(format!("expected {nrows} rows, got {count}")));
    }
    ElectrodeMask::new(ncols, nrows, pixel, cells)
}

pub fn emit_mask(mask: &ElectrodeMask) -> String {
    let mut out = format!("mask {} {} {}\n", mask.ncols(), mask.nrows(), mask.pixel_size());
    for r in 0..mask.nrows() {
        for c in 0..mask.ncols() {
            out.push(match mask.get(c, r) {
                1 => '+',
                -1 => '-',
                _ => '.',
            });
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| OemtError::Io(format!("{}: {e}", path.display())))
}
