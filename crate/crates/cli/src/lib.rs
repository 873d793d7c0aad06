//! `oemt` command-line front end. [`run`] is the whole program; `main` only
//! binds it to the process streams.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use oemt_core::estimation::{
    calibrate_spectrum, displacement_variance, fit_h0, fit_thermal_mode, locate_beam, overlap_from_variance,
    FitWindow, MeasuredSpectrum,
};
use oemt_core::explore::{classify_interference, extract_bandwidth, sweep_sensitivity, SweepParam, SweepSpec};
use oemt_core::geometry::{couplings_from_geometry, Couplings, MembraneGeometry, ModeShape, SurfaceDensity};
use oemt_core::io::{
    load_config, parse_bias_curve, parse_spectrum_csv, read_text, write_csv, write_file, write_sweep_csv,
    LoadedConfig,
};
use oemt_core::model::{hz_to_rad, rad_to_hz, FrequencyGrid, TransducerModel, DEFAULT_TEMPERATURE, TWO_PI};
use oemt_core::response::{output_spectrum, voltage_sensitivity, Order};
use oemt_core::verify::{
    characteristic_roots, root_set_deviation, solve_full_linear_system, stability_poles, time_domain_transfer,
};
use oemt_core::OemtError;
use serde::Serialize;

/// Closed-form vs oracle tolerance used by `verify`.
pub const ORACLE_TOL: f64 = 1e-9;
/// Relative tolerance on the sensitivity threshold when extracting a band.
pub const DEFAULT_BAND_TOLERANCE: f64 = 0.05;

#[derive(Parser, Debug)]
#[command(name = "oemt", version, about = "Multi-mode opto-electro-mechanical transducer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Displacement spectral noise at the optical readout.
    Spectrum(SpectrumArgs),
    /// Input-referred voltage sensitivity and its bandwidth.
    Sensitivity(SensitivityArgs),
    /// Sensitivity map over coupling strength or mode splitting.
    Sweep(SweepArgs),
    /// Overlap areas, couplings, frequency shifts and λ from the electrode layout.
    Geometry(GeometryArgs),
    /// Lorentzian fit of a thermally driven mode.
    FitThermal(FitThermalArgs),
    /// Beam position from per-mode overlap estimates.
    BeamLocate(BeamLocateArgs),
    /// Electrode gap from a frequency-vs-bias curve.
    H0Fit(H0FitArgs),
    /// Closed forms against the full linear system, poles and time domain.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum OrderArg {
    Full,
    FirstOrder,
}

impl From<OrderArg> for Order {
    fn from(o: OrderArg) -> Order {
        match o {
            OrderArg::Full => Order::Full,
            OrderArg::FirstOrder => Order::FirstOrder,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ParamArg {
    Coupling,
    Splitting,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Lower frequency, Hz [default: ν̄ − 3Δν].
    #[arg(long)]
    fmin_hz: Option<f64>,
    /// Upper frequency, Hz [default: ν̄ + 3Δν].
    #[arg(long)]
    fmax_hz: Option<f64>,
    #[arg(long, default_value_t = 8192)]
    points: usize,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "full")]
    order: OrderArg,
    /// Add thermal_1, thermal_2, rf and shot columns.
    #[arg(long)]
    budget: bool,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "full")]
    order: OrderArg,
    /// Target level, V/√Hz; the band is where the curve stays below threshold·(1+tolerance).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BAND_TOLERANCE)]
    tolerance: f64,
    /// Sensitivity CSV; the JSON report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    param: ParamArg,
    /// Explicit values (V/m or Hz), comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["from", "to", "steps"])]
    values: Option<Vec<f64>>,
    #[arg(long, requires_all = ["to", "steps"])]
    from: Option<f64>,
    #[arg(long, requires_all = ["from", "steps"])]
    to: Option<f64>,
    #[arg(long, requires_all = ["from", "to"])]
    steps: Option<usize>,
    /// Logarithmic spacing for --from/--to/--steps.
    #[arg(long)]
    log: bool,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_enum, default_value = "full")]
    order: OrderArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GeometryArgs {
    /// Config with a `geometry` section.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitThermalArgs {
    /// CSV `frequency_hz,value`, m²/Hz unless --wavelength-m and --v-pp are given (then V²/Hz).
    #[arg(long)]
    spectrum: PathBuf,
    #[arg(long)]
    fmin_hz: f64,
    #[arg(long)]
    fmax_hz: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long, requires = "v_pp")]
    wavelength_m: Option<f64>,
    #[arg(long, requires = "wavelength_m")]
    v_pp: Option<f64>,
    /// Effective mass, kg; adds the overlap α from the integrated variance.
    #[arg(long)]
    m_eff: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BeamLocateArgs {
    /// Mode and overlap magnitude as `n,m=alpha`; repeat for each mode.
    #[arg(long = "mode", value_parser = parse_mode_alpha, required = true)]
    modes: Vec<(u32, u32, f64)>,
    #[arg(long)]
    side_m: f64,
    #[arg(long)]
    waist_m: f64,
    #[arg(long, default_value_t = 201)]
    resolution: usize,
    /// Normalised likelihood raster as CSV `x_m,y_m,likelihood`.
    #[arg(long)]
    likelihood_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct H0FitArgs {
    /// CSV `v_dc,frequency_hz`.
    #[arg(long)]
    curve: PathBuf,
    #[arg(long)]
    m_eff: f64,
    /// Effective electrode area, m².
    #[arg(long)]
    a_eff: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    grid: VerifyGrid,
    /// Skip the time-domain probe at ν̄.
    #[arg(long)]
    no_time_domain: bool,
}

#[derive(Args, Debug)]
struct VerifyGrid {
    #[arg(long)]
    fmin_hz: Option<f64>,
    #[arg(long)]
    fmax_hz: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    points: usize,
}

fn parse_mode_alpha(s: &str) -> Result<(u32, u32, f64), String> {
    let bad = || format!("expected `n,m=alpha`, got `{s}`");
    let (label, alpha) = s.split_once('=').ok_or_else(bad)?;
    let (n, m) = label.split_once(',').ok_or_else(bad)?;
    Ok((
        n.trim().parse().map_err(|_| bad())?,
        m.trim().parse().map_err(|_| bad())?,
        alpha.trim().parse().map_err(|_| bad())?,
    ))
}

#[derive(Debug)]
enum CliError {
    Core(OemtError),
    Usage(String),
    Check(String),
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "E_USAGE",
            CliError::Check(_) => "E_VERIFY",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) | CliError::Check(m) => m.clone(),
        }
    }
}

impl From<OemtError> for CliError {
    fn from(e: OemtError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

struct Io<'a> {
    out: &'a mut (dyn Write + Send),
    err: &'a mut (dyn Write + Send),
}

impl Io<'_> {
    fn emit(&mut self, path: Option<&Path>, text: &str) -> CliResult<()> {
        match path {
            Some(p) => Ok(write_file(p, text)?),
            None => self.stdout(text),
        }
    }

    fn stdout(&mut self, text: &str) -> CliResult<()> {
        self.out.write_all(text.as_bytes()).map_err(|e| OemtError::Io(format!("stdout: {e}")).into())
    }

    fn warn(&mut self, msg: &str) {
        let _ = writeln!(self.err, "warning: {msg}");
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serialises");
    s.push('\n');
    s
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status: 0 success, 1 domain error, 2 usage error.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return 0;
            }
            let text = e.render().to_string();
            let _ = write!(err, "error[E_USAGE]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return 2;
        }
    };
    let mut io = Io { out, err };
    let result = match thread_pool() {
        Ok(Some(pool)) => pool.install(|| dispatch(cli.command, &mut io)),
        Ok(None) => dispatch(cli.command, &mut io),
        Err(e) => Err(e),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(io.err, "error[{}]: {}", e.code(), e.message());
            e.exit_code()
        }
    }
}

/// Dedicated pool when OEMT_THREADS is set.
fn thread_pool() -> CliResult<Option<rayon::ThreadPool>> {
    let Ok(v) = std::env::var("OEMT_THREADS") else {
        return Ok(None);
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("OEMT_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map(Some)
        .map_err(|e| OemtError::InvalidInput(format!("thread pool: {e}")).into())
}

fn dispatch(cmd: Command, io: &mut Io) -> CliResult<()> {
    match cmd {
        Command::Spectrum(a) => spectrum(a, io),
        Command::Sensitivity(a) => sensitivity(a, io),
        Command::Sweep(a) => sweep(a, io),
        Command::Geometry(a) => geometry(a, io),
        Command::FitThermal(a) => fit_thermal(a, io),
        Command::BeamLocate(a) => beam_locate(a, io),
        Command::H0Fit(a) => h0(a, io),
        Command::Verify(a) => verify(a, io),
    }
}

fn load(path: &Path, io: &mut Io) -> CliResult<LoadedConfig> {
    let cfg = load_config(path)?;
    for w in &cfg.warnings {
        io.warn(w);
    }
    Ok(cfg)
}

/// ν̄ ± 3Δν around the mechanical modes; 1% of ν̄ when they coincide.
fn default_band(model: &TransducerModel) -> (f64, f64) {
    let nus: Vec<f64> = model.modes.iter().map(|m| rad_to_hz(m.omega_m)).collect();
    let lo = nus.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = nus.iter().cloned().fold(0.0, f64::max);
    let mid = 0.5 * (lo + hi);
    let span = if hi > lo { hi - lo } else { 0.01 * mid };
    ((mid - 3.0 * span).max(1.0), mid + 3.0 * span)
}

fn make_grid(model: &TransducerModel, fmin: Option<f64>, fmax: Option<f64>, points: usize) -> CliResult<FrequencyGrid> {
    let (dlo, dhi) = default_band(model);
    let (lo, hi) = (fmin.unwrap_or(dlo), fmax.unwrap_or(dhi));
    if points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(CliError::Usage(format!("need 0 < fmin < fmax, got {lo} and {hi}")));
    }
    Ok(FrequencyGrid::linear_hz(lo, hi, points)?)
}

fn spectrum(a: SpectrumArgs, io: &mut Io) -> CliResult<()> {
    let cfg = load(&a.config, io)?;
    let grid = make_grid(&cfg.model, a.grid.fmin_hz, a.grid.fmax_hz, a.grid.points)?;
    let b = output_spectrum(&cfg.model, &grid, a.order.into())?;
    let f = grid.hz();
    let csv = if a.budget {
        write_csv(
            &f,
            &["value", "thermal_1", "thermal_2", "rf", "shot"],
            &[&b.total.values, &b.thermal[0].values, &b.thermal[1].values, &b.rf.values, &b.shot.values],
        )?
    } else {
        write_csv(&f, &["value"], &[&b.total.values])?
    };
    io.emit(a.out.as_deref(), &csv)
}

#[derive(Serialize)]
struct SensitivityReport {
    interference: oemt_core::explore::Interference,
    midpoint_hz: f64,
    splitting_hz: f64,
    optimal_at_midpoint_v_per_sqrthz: f64,
    /// √S_opt/ΔΩ, V·s/√Hz.
    sb_ratio: f64,
    min_v_per_sqrthz: f64,
    min_at_hz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold_v_per_sqrthz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band_limit_v_per_sqrthz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band: Option<BandReport>,
}

#[derive(Serialize)]
struct BandReport {
    f_lo_hz: f64,
    f_hi_hz: f64,
    width_hz: f64,
}

fn sensitivity(a: SensitivityArgs, io: &mut Io) -> CliResult<()> {
    if let Some(t) = a.threshold {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage(format!("--threshold must be positive, got {t}")));
        }
    }
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(CliError::Usage("--tolerance must be non-negative".into()));
    }
    let cfg = load(&a.config, io)?;
    let grid = make_grid(&cfg.model, a.grid.fmin_hz, a.grid.fmax_hz, a.grid.points)?;
    let s = voltage_sensitivity(&cfg.model, &grid, a.order.into())?;
    let f = grid.hz();
    let kmin = (0..f.len())
        .min_by(|x, y| s.sensitivity.values[*x].total_cmp(&s.sensitivity.values[*y]))
        .expect("non-empty grid");
    let limit = a.threshold.map(|t| t * (1.0 + a.tolerance));
    let band = match limit {
        Some(l) => match extract_bandwidth(&s.sensitivity, l) {
            Some(b) => Some(BandReport { f_lo_hz: b.f_lo_hz, f_hi_hz: b.f_hi_hz, width_hz: b.width_hz }),
            None => {
                io.warn(&format!("sensitivity never reaches {l:e} V/sqrt(Hz) on this grid"));
                None
            }
        },
        None => None,
    };
    let report = SensitivityReport {
        interference: classify_interference(&cfg.model)?,
        midpoint_hz: rad_to_hz(s.omega_bar),
        splitting_hz: rad_to_hz(s.delta_omega),
        optimal_at_midpoint_v_per_sqrthz: s.optimal_at_midpoint,
        sb_ratio: s.sb_ratio,
        min_v_per_sqrthz: s.sensitivity.values[kmin],
        min_at_hz: f[kmin],
        threshold_v_per_sqrthz: a.threshold,
        band_limit_v_per_sqrthz: limit,
        band,
    };
    if let Some(p) = &a.out {
        write_file(p, &write_csv(&f, &["value"], &[&s.sensitivity.values])?)?;
    }
    io.stdout(&json(&report))
}

fn sweep_values(a: &SweepArgs) -> CliResult<Vec<f64>> {
    if let Some(v) = &a.values {
        return Ok(v.clone());
    }
    let (Some(from), Some(to), Some(steps)) = (a.from, a.to, a.steps) else {
        return Err(CliError::Usage("give --values or all of --from, --to, --steps".into()));
    };
    if steps < 2 {
        return Err(CliError::Usage("--steps must be at least 2".into()));
    }
    if a.log && !(from > 0.0 && to > 0.0) {
        return Err(CliError::Usage("--log needs positive --from and --to".into()));
    }
    let t = |k: usize| k as f64 / (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| if a.log { from * (to / from).powf(t(k)) } else { from + (to - from) * t(k) })
        .collect())
}

fn sweep(a: SweepArgs, io: &mut Io) -> CliResult<()> {
    let values = sweep_values(&a)?;
    let cfg = load(&a.config, io)?;
    let grid = make_grid(&cfg.model, a.grid.fmin_hz, a.grid.fmax_hz, a.grid.points)?;
    let param = match a.param {
        ParamArg::Coupling => SweepParam::Coupling,
        ParamArg::Splitting => SweepParam::Splitting,
    };
    let map = sweep_sensitivity(&SweepSpec { base: cfg.model, param, values, grid, order: a.order.into() })?;
    let mut failed = 0;
    for (v, e) in map.values.iter().zip(&map.row_errors) {
        if let Some(e) = e {
            failed += 1;
            io.warn(&format!("row {v:e} skipped: [{}] {e}", e.code()));
        }
    }
    if failed == map.values.len() {
        return Err(OemtError::InvalidInput("every sweep row failed".into()).into());
    }
    io.emit(a.out.as_deref(), &write_sweep_csv(&map.values, &map.grid.hz(), &map.rows))
}

#[derive(Serialize)]
struct GeometryReport {
    labels: Vec<[u32; 2]>,
    #[serde(flatten)]
    couplings: Couplings,
}

fn geometry(a: GeometryArgs, io: &mut Io) -> CliResult<()> {
    let cfg = load(&a.config, io)?;
    let Some(b) = &cfg.geometry else {
        return Err(OemtError::InvalidInput(format!("{}: config has no `geometry` section", a.config.display())).into());
    };
    let masses: Vec<f64> = cfg.file.modes.iter().map(|m| m.mass_kg).collect();
    let omegas: Vec<f64> = cfg.file.modes.iter().map(|m| hz_to_rad(m.freq_hz)).collect();
    let couplings = couplings_from_geometry(&b.mask, &b.geometry, &b.shapes, &b.bias, &masses, &omegas)?;
    for w in &couplings.warnings {
        io.warn(w);
    }
    let report = GeometryReport { labels: cfg.file.modes.iter().map(|m| m.label).collect(), couplings };
    io.emit(a.out.as_deref(), &json(&report))
}

#[derive(Serialize)]
struct ThermalReport {
    nu_m_hz: f64,
    nu_m_err_hz: f64,
    gamma_hz: f64,
    gamma_err_hz: f64,
    mass_opt_kg: f64,
    mass_opt_err_kg: f64,
    floor_m2_per_hz: f64,
    floor_err_m2_per_hz: f64,
    residual_norm: f64,
    iterations: usize,
    window: FitWindow,
    variance_m2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_exceeds_bound: Option<bool>,
}

fn fit_thermal(a: FitThermalArgs, io: &mut Io) -> CliResult<()> {
    let csv = parse_spectrum_csv(&read_text(&a.spectrum)?)?;
    let grid = csv.grid()?;
    let spec = match (a.wavelength_m, a.v_pp) {
        (Some(wl), Some(vpp)) => calibrate_spectrum(&MeasuredSpectrum::raw(grid, csv.values)?, wl, vpp)?,
        _ => MeasuredSpectrum::displacement(grid, csv.values)?,
    };
    let window = FitWindow { f_lo_hz: a.fmin_hz, f_hi_hz: a.fmax_hz };
    let fit = fit_thermal_mode(&spec, window, a.temperature)?;
    let variance = displacement_variance(&spec, window, fit.floor)?;
    let overlap = match a.m_eff {
        Some(m) => Some(overlap_from_variance(variance, m, fit.omega_m, a.temperature)?),
        None => None,
    };
    if overlap.is_some_and(|o| o.exceeds_bound) {
        io.warn("overlap exceeds 1.05; check calibration or effective mass");
    }
    let report = ThermalReport {
        nu_m_hz: fit.omega_m / TWO_PI,
        nu_m_err_hz: fit.omega_m_err / TWO_PI,
        gamma_hz: fit.gamma / TWO_PI,
        gamma_err_hz: fit.gamma_err / TWO_PI,
        mass_opt_kg: fit.mass_opt,
        mass_opt_err_kg: fit.mass_opt_err,
        floor_m2_per_hz: fit.floor,
        floor_err_m2_per_hz: fit.floor_err,
        residual_norm: fit.residual_norm,
        iterations: fit.iterations,
        window,
        variance_m2: variance,
        alpha: overlap.map(|o| o.alpha),
        alpha_exceeds_bound: overlap.map(|o| o.exceeds_bound),
    };
    io.emit(a.out.as_deref(), &json(&report))
}

#[derive(Serialize)]
struct BeamReport {
    position_m: (f64, f64),
    sigma2: f64,
    labels: Vec<[u32; 2]>,
    alpha_observed: Vec<f64>,
    alpha_theory: Vec<f64>,
    equivalent_optima_m: Vec<(f64, f64)>,
    ambiguous: bool,
    grid_spacing_m: f64,
}

fn beam_locate(a: BeamLocateArgs, io: &mut Io) -> CliResult<()> {
    let obs = a
        .modes
        .iter()
        .map(|(n, m, alpha)| Ok((ModeShape::new(*n, *m, a.side_m)?, *alpha)))
        .collect::<Result<Vec<_>, OemtError>>()?;
    // Only the side and waist enter the overlaps; density and gap are placeholders.
    let geom = MembraneGeometry {
        side_length: a.side_m,
        density: SurfaceDensity::uniform(1.0),
        gap: 1.0,
        beam_waist: a.waist_m,
        beam_center: (0.5 * a.side_m, 0.5 * a.side_m),
    };
    geom.validate()?;
    let est = locate_beam(&obs, &geom, a.resolution)?;
    if let Some(p) = &a.likelihood_out {
        let lk = &est.likelihood;
        let mut text = String::from("x_m,y_m,likelihood\n");
        for (iy, y) in lk.ys.iter().enumerate() {
            for (ix, x) in lk.xs.iter().enumerate() {
                let v = lk.values[iy * lk.xs.len() + ix];
                text.push_str(&format!("{x:e},{y:e},{v:e}\n"));
            }
        }
        write_file(p, &text)?;
    }
    let report = BeamReport {
        position_m: est.position,
        sigma2: est.sigma2,
        labels: a.modes.iter().map(|(n, m, _)| [*n, *m]).collect(),
        alpha_observed: a.modes.iter().map(|(_, _, x)| *x).collect(),
        alpha_theory: est.alpha_theory,
        equivalent_optima_m: est.equivalent_optima,
        ambiguous: est.ambiguous,
        grid_spacing_m: est.grid_spacing,
    };
    io.emit(a.out.as_deref(), &json(&report))
}

fn h0(a: H0FitArgs, io: &mut Io) -> CliResult<()> {
    let curve = parse_bias_curve(&read_text(&a.curve)?)?;
    let fit = fit_h0(&curve, a.m_eff, a.a_eff)?;
    io.emit(a.out.as_deref(), &json(&fit))
}

fn verify(a: VerifyArgs, io: &mut Io) -> CliResult<()> {
    let cfg = load(&a.config, io)?;
    let model = &cfg.model;
    let grid = make_grid(model, a.grid.fmin_hz, a.grid.fmax_hz, a.grid.points)?;
    let mut report = String::new();
    let mut failures = Vec::new();

    let poles = stability_poles(model);
    report.push_str(&format!(
        "stability: {} (max pole real part {:e} rad/s)\n",
        if poles.stable { "stable" } else { "UNSTABLE" },
        poles.margin
    ));
    let root_dev = root_set_deviation(&poles.roots, &characteristic_roots(model));
    report.push_str(&format!("pole deviation eigenvalues vs characteristic polynomial {root_dev:.3e}\n"));
    if !poles.stable {
        failures.push("model is unstable".to_string());
    }

    let closed = output_spectrum(model, &grid, Order::Full)?.total.values;
    let sol = solve_full_linear_system(model, &grid)?;
    let oracle = sol.output_psd(model);
    let dev = closed
        .iter()
        .zip(&oracle)
        .map(|(c, o)| (c - o).abs() / o.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let cmp = if dev < ORACLE_TOL { "<" } else { ">=" };
    report.push_str(&format!(
        "max closed-form vs oracle deviation {dev:.3e} {cmp} {ORACLE_TOL:e} ({} points)\n",
        grid.len()
    ));
    report.push_str(&format!("max linear-solve residual {:.3e}\n", sol.max_residual));
    if dev >= ORACLE_TOL {
        failures.push(format!("closed-form vs oracle deviation {dev:.3e} exceeds {ORACLE_TOL:e}"));
    }

    if !a.no_time_domain && poles.stable {
        let w = model.omega_bar();
        let td = time_domain_transfer(model, w, 1e-3)?.transfer;
        let fd: Complex64 = solve_full_linear_system(model, &FrequencyGrid::single(w)?)?.y_out[0][model.n_modes()];
        let mag = (td.norm() - fd.norm()).abs() / fd.norm();
        let phase = (td / fd).arg().to_degrees().abs();
        report.push_str(&format!(
            "time vs frequency domain at {:.6e} Hz: magnitude {:.3e}, phase {:.3e} deg\n",
            rad_to_hz(w),
            mag,
            phase
        ));
        if mag > 1e-3 || phase > 0.1 {
            failures.push("time-domain transfer disagrees with the frequency domain".into());
        }
    }
    io.stdout(&report)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failures.join("; ")))
    }
}
