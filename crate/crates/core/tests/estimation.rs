mod common;

use common::*;
use oemt_core::estimation::*;
use oemt_core::geometry::{transverse_overlap, MembraneGeometry, ModeShape, OverlapMethod, SurfaceDensity};
use oemt_core::io::parse_spectrum_csv;
use oemt_core::model::{FrequencyGrid, K_B, TWO_PI};
use oemt_core::OemtError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const L: f64 = 1e-3;
const CAL: Calibration = Calibration { wavelength: 532e-9, v_pp: 2.7 };

fn geom() -> MembraneGeometry {
    MembraneGeometry {
        side_length: L,
        density: SurfaceDensity::uniform(3.8639e-4),
        gap: 31e-6,
        beam_waist: 53.2e-6,
        beam_center: (0.5 * L, 0.5 * L),
    }
}

fn shape(n: u32, m: u32) -> ModeShape {
    ModeShape::new(n, m, L).unwrap()
}

struct Synth {
    nu_m: f64,
    gamma: f64,
    mass: f64,
    temp: f64,
    floor: f64,
}

impl Synth {
    fn spectrum(&self, half_span: f64, step: f64, noise: Option<u64>) -> MeasuredSpectrum {
        let n = (2.0 * half_span / step).round() as usize + 1;
        let f: Vec<f64> = (0..n).map(|k| self.nu_m - half_span + step * k as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(noise.unwrap_or(0));
        let dist: Normal<f64> = Normal::new(1.0, 0.05).unwrap();
        let v = f
            .iter()
            .map(|x| {
                let s = thermal_dsn(*x, self.nu_m, self.gamma, self.mass, self.temp) + self.floor;
                if noise.is_some() { s * dist.sample(&mut rng).max(0.05) } else { s }
            })
            .collect();
        MeasuredSpectrum::calibrated(FrequencyGrid::new(f.iter().map(|x| x * TWO_PI).collect()).unwrap(), v, CAL).unwrap()
    }

    fn window(&self, half: f64) -> FitWindow {
        FitWindow { f_lo_hz: self.nu_m - half, f_hi_hz: self.nu_m + half }
    }
}

const DEVICE_11: Synth = Synth { nu_m: 271_269.0, gamma: 0.9, mass: 70e-12, temp: 300.0, floor: 2e-27 };

#[test]
fn calibration_factor_example() {
    let g = calibration_factor(532e-9, 2.7).unwrap();
    assert!(rel(g, 3.136e-8) < 1e-3, "{g:e}");
    assert!(calibration_factor(532e-9, 0.0).is_err());
    assert!(calibration_factor(532e-9, -1.0).is_err());
}

#[test]
fn calibration_scaling() {
    let grid = FrequencyGrid::linear_hz(1e3, 2e3, 5).unwrap();
    let raw = MeasuredSpectrum::raw(grid.clone(), vec![0.0; 5]).unwrap();
    assert!(calibrate_spectrum(&raw, 532e-9, 2.7).unwrap().values.iter().all(|v| *v == 0.0));

    let raw = MeasuredSpectrum::raw(grid, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let a = calibrate_spectrum(&raw, 532e-9, 2.7).unwrap();
    let b = calibrate_spectrum(&raw, 532e-9, 5.4).unwrap();
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!(rel(*y, 0.25 * x) < 1e-14);
    }
    assert_eq!(a.unit, MeasuredUnit::M2PerHz);
    assert!(calibrate_spectrum(&a, 532e-9, 2.7).is_err());
}

#[test]
fn calibrate_then_integrate_commutes() {
    let s = DEVICE_11.spectrum(50.0, 0.05, Some(3));
    let raw = MeasuredSpectrum::raw(s.grid.clone(), s.values.clone()).unwrap();
    let g2 = calibration_factor(532e-9, 2.7).unwrap().powi(2);
    let w = DEVICE_11.window(40.0);
    let a = displacement_variance(&calibrate_spectrum(&raw, 532e-9, 2.7).unwrap(), w, 0.0).unwrap();
    let b = displacement_variance(&s, w, 0.0).unwrap() * g2;
    assert!(rel(a, b) < 1e-13);
}

#[test]
fn noiseless_fit_is_exact() {
    let s = DEVICE_11.spectrum(50.0, 0.05, None);
    let fit = fit_thermal_mode(&s, DEVICE_11.window(50.0), 300.0).unwrap();
    assert!(rel(fit.omega_m, TWO_PI * DEVICE_11.nu_m) < 1e-10);
    assert!(rel(fit.gamma, TWO_PI * DEVICE_11.gamma) < 1e-10);
    assert!(rel(fit.mass_opt, DEVICE_11.mass) < 1e-10);
    assert!(rel(fit.floor, DEVICE_11.floor) < 1e-8);
}

#[test]
fn noisy_fits_recover_within_one_percent() {
    // 50 linewidths either side of the peak, 5% multiplicative noise, 90 points per linewidth.
    let syn = Synth { nu_m: 271_269.0, gamma: 0.9, mass: 70e-12, temp: 300.0, floor: 2e-27 };
    let half = 50.0 * syn.gamma;
    let ok = (0..100)
        .filter(|seed| {
            let s = syn.spectrum(half, 0.01, Some(*seed));
            let Ok(fit) = fit_thermal_mode(&s, syn.window(half), 300.0) else { return false };
            rel(fit.omega_m, TWO_PI * syn.nu_m) < 0.01 && rel(fit.gamma, TWO_PI * syn.gamma) < 0.01 && rel(fit.mass_opt, syn.mass) < 0.01
        })
        .count();
    assert!(ok >= 95, "{ok}/100 within 1%");
}

#[test]
fn thermal_fixture_regression() {
    let csv = parse_spectrum_csv(&std::fs::read_to_string(fixture("thermal_11.csv")).unwrap()).unwrap();
    let s = MeasuredSpectrum::calibrated(csv.grid().unwrap(), csv.values, CAL).unwrap();
    let fit = fit_thermal_mode(&s, FitWindow { f_lo_hz: 271_244.0, f_hi_hz: 271_294.0 }, 300.0).unwrap();
    assert!((fit.omega_m / TWO_PI - 271_269.0).abs() < 0.05);
    assert!((fit.gamma / TWO_PI - 0.9).abs() < 0.01);
    assert!((fit.mass_opt - 70.0e-12).abs() < 0.2e-12, "{} ± {}", fit.mass_opt, fit.mass_opt_err);
    assert!(fit.mass_opt_err > 0.0 && fit.mass_opt_err < 0.2e-12);
}

#[test]
fn fit_rejects_flat_window() {
    let s = DEVICE_11.spectrum(50.0, 0.05, None);
    let w = FitWindow { f_lo_hz: 271_300.0, f_hi_hz: 271_319.0 };
    assert!(matches!(fit_thermal_mode(&s, w, 300.0), Err(OemtError::NoPeak { .. })));
    assert!(fit_thermal_mode(&s, DEVICE_11.window(50.0), 0.0).is_err());
}

#[test]
fn equipartition_variance() {
    let s = DEVICE_11.spectrum(500.0, 0.05, None);
    let var = displacement_variance(&s, DEVICE_11.window(500.0), DEVICE_11.floor).unwrap();
    let w = TWO_PI * DEVICE_11.nu_m;
    let expect = K_B * 300.0 / (DEVICE_11.mass * w * w);
    assert!(rel(var, expect) < 5e-3, "{var:e} vs {expect:e}");

    let hot = Synth { temp: 600.0, ..DEVICE_11 };
    let var2 = displacement_variance(&hot.spectrum(500.0, 0.05, None), hot.window(500.0), hot.floor).unwrap();
    assert!(rel(var2, 2.0 * var) < 1e-12);
}

#[test]
fn floor_overestimate_is_an_error() {
    let s = DEVICE_11.spectrum(50.0, 0.05, None);
    assert!(matches!(
        displacement_variance(&s, DEVICE_11.window(50.0), 1e-20),
        Err(OemtError::FloorOverestimate(_))
    ));
}

#[test]
fn overlap_examples() {
    let (m, w, t) = (67.3e-12, TWO_PI * 382_690.0, 300.0);
    let v = K_B * t / (m * w * w);
    let a = overlap_from_variance(v, m, w, t).unwrap();
    assert!((a.alpha - 1.0).abs() < 1e-14 && !a.exceeds_bound);
    assert!((overlap_from_variance(0.04 * v, m, w, t).unwrap().alpha - 0.2).abs() < 1e-14);
    assert!(overlap_from_variance(1.2 * v, m, w, t).unwrap().exceeds_bound);
    assert!(overlap_from_variance(0.0, m, w, t).is_err());
}

#[test]
fn overlap_round_trip() {
    let mut g = geom();
    g.beam_center = (0.43 * L, 0.61 * L);
    let (m, w, t) = (67.3e-12, TWO_PI * 382_690.0, 300.0);
    for s in [shape(1, 1), shape(1, 2), shape(2, 1), shape(2, 3)] {
        let alpha = transverse_overlap(&s, &g, OverlapMethod::Analytic).abs();
        let var = alpha * alpha * K_B * t / (m * w * w);
        let back = overlap_from_variance(var, m, w, t).unwrap().alpha;
        assert!((back - alpha).abs() < 1e-12);
    }
}

fn synthetic_obs(pos: (f64, f64), shapes: &[ModeShape]) -> Vec<(ModeShape, f64)> {
    let mut g = geom();
    g.beam_center = pos;
    shapes.iter().map(|s| (*s, transverse_overlap(s, &g, OverlapMethod::Analytic).abs())).collect()
}

#[test]
fn beam_localization_self_consistency() {
    let shapes = [shape(1, 1), shape(1, 2), shape(2, 1)];
    for pos in [(0.3 * L, 0.62 * L), (0.55 * L, 0.2 * L), (0.81 * L, 0.44 * L)] {
        let obs = synthetic_obs(pos, &shapes);
        let est = locate_beam(&obs, &geom(), 101).unwrap();
        let h = est.grid_spacing;
        let hit = est
            .equivalent_optima
            .iter()
            .any(|p| (p.0 - pos.0).abs() <= h && (p.1 - pos.1).abs() <= h);
        assert!(hit, "{pos:?} not among {:?}", est.equivalent_optima);
        assert!(est.sigma2 < 1e-16);
    }
}

#[test]
fn measured_alpha_triple() {
    let obs = vec![(shape(1, 1), 0.980), (shape(1, 2), 0.196), (shape(2, 1), 0.240)];
    let est = locate_beam(&obs, &geom(), 201).unwrap();
    let sigma = est.sigma2.sqrt();
    for ((_, a), th) in obs.iter().zip(&est.alpha_theory) {
        assert!((a - th).abs() <= sigma + 1e-15);
    }
    assert!(sigma < 0.02, "sigma {sigma}");
    assert!(est.ambiguous && est.equivalent_optima.len() == 4);
    let total: f64 = est.likelihood.values.iter().sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn optimum_beats_every_raster_point() {
    let obs = vec![(shape(1, 1), 0.9), (shape(1, 2), 0.3), (shape(2, 3), 0.1)];
    let est = locate_beam(&obs, &geom(), 61).unwrap();
    let mut g = geom();
    for y in &est.likelihood.ys {
        for x in &est.likelihood.xs {
            g.beam_center = (*x, *y);
            let c: f64 = obs
                .iter()
                .map(|(s, a)| (a - transverse_overlap(s, &g, OverlapMethod::Analytic).abs()).powi(2))
                .sum();
            assert!(est.sigma2 <= c + 1e-15);
        }
    }
}

#[test]
fn beam_localization_needs_two_modes() {
    assert!(locate_beam(&[(shape(1, 1), 0.9)], &geom(), 51).is_err());
    assert!(locate_beam(&[(shape(1, 1), 0.9), (shape(1, 2), -0.2)], &geom(), 51).is_err());
}

#[test]
fn h0_from_measured_lambda() {
    let (h0, dh0) = h0_from_lambda(105.2e-6, 0.9e-6, 0.3546e-6).unwrap();
    assert!(rel(h0, 31.0e-6) < 5e-3, "{h0:e}");
    assert!((dh0 - 0.09e-6).abs() < 0.005e-6, "{dh0:e}");
}

fn exact_curve(lambda: f64, nu0: f64, m: f64) -> Vec<(f64, f64)> {
    let k = lambda / (8.0 * std::f64::consts::PI.powi(2) * m * nu0 * nu0);
    (0..=10).map(|i| 20.0 * i as f64).map(|v| (v, nu0 * (1.0 - k * v * v))).collect()
}

#[test]
fn h0_exact_quadratic() {
    let fit = fit_h0(&exact_curve(105.2e-6, 271_269.0, 67.3e-12), 67.3e-12, 0.3546e-6).unwrap();
    assert!(rel(fit.lambda_coeff, 105.2e-6) < 1e-9);
    assert!(rel(fit.nu0, 271_269.0) < 1e-12);
    assert!(fit.max_rel_residual < 1e-10);
}

#[test]
fn h0_fixture() {
    let text = std::fs::read_to_string(fixture("h0_curve.csv")).unwrap();
    let curve: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    let fit = fit_h0(&curve, 67.3e-12, 0.3546e-6).unwrap();
    assert!((fit.lambda_coeff - 105.2e-6).abs() < 3.0 * fit.lambda_err, "{:e} ± {:e}", fit.lambda_coeff, fit.lambda_err);
    assert!(rel(fit.h0, 31.0e-6) < 0.01);
    assert!(fit.h0_err > 0.0 && fit.h0_err < 0.5e-6);
}

#[test]
fn h0_rejects_bad_curves() {
    let stiffening: Vec<(f64, f64)> = exact_curve(105.2e-6, 271_269.0, 67.3e-12).iter().map(|(v, f)| (*v, 2.0 * 271_269.0 - f)).collect();
    assert_eq!(fit_h0(&stiffening, 67.3e-12, 0.3546e-6), Err(OemtError::NonSoftening));
    let short = &exact_curve(105.2e-6, 271_269.0, 67.3e-12)[..3];
    assert!(fit_h0(short, 67.3e-12, 0.3546e-6).is_err());
    let narrow: Vec<(f64, f64)> = (0..5).map(|i| (100.0 + i as f64, 271_000.0 - i as f64)).collect();
    assert!(fit_h0(&narrow, 67.3e-12, 0.3546e-6).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fit_is_scale_equivariant(c in 0.01f64..100.0, seed in 0u64..1000) {
        let s = DEVICE_11.spectrum(45.0, 0.05, Some(seed));
        let mut scaled = s.clone();
        scaled.values.iter_mut().for_each(|v| *v *= c);
        let w = DEVICE_11.window(45.0);
        let a = fit_thermal_mode(&s, w, 300.0).unwrap();
        let b = fit_thermal_mode(&scaled, w, 300.0).unwrap();
        prop_assert!(rel(b.omega_m, a.omega_m) < 1e-8);
        prop_assert!(rel(b.gamma, a.gamma) < 1e-8);
        prop_assert!(rel(1.0 / b.mass_opt, c / a.mass_opt) < 1e-8);
    }

    #[test]
    fn h0_recovers_synthetic_lambda(lambda in 1e-5f64..1e-3, nu0 in 1e5f64..1e6) {
        let fit = fit_h0(&exact_curve(lambda, nu0, 67.3e-12), 67.3e-12, 0.3546e-6).unwrap();
        prop_assert!(rel(fit.lambda_coeff, lambda) < 1e-8);
        prop_assert!(fit.max_rel_residual < 1e-10);
    }

    #[test]
    fn likelihood_is_normalized(x in 0.1f64..0.9, y in 0.1f64..0.9) {
        let obs = synthetic_obs((x * L, y * L), &[shape(1, 1), shape(1, 2), shape(2, 1), shape(2, 2)]);
        let est = locate_beam(&obs, &geom(), 41).unwrap();
        prop_assert!((est.likelihood.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(est.likelihood.values.iter().all(|v| *v >= 0.0));
    }
}
