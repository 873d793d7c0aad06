mod common;

use common::*;
use oemt_core::explore::*;
use oemt_core::model::{hz_to_rad, FrequencyGrid, RfNoise, Spectrum, SpectrumUnit};
use oemt_core::response::{voltage_sensitivity, Order};
use proptest::prelude::*;

fn curve(f_hz: &[f64], v: &[f64]) -> Spectrum {
    let grid = FrequencyGrid::new(f_hz.iter().map(|f| hz_to_rad(*f)).collect()).unwrap();
    Spectrum::new(grid, v.to_vec(), SpectrumUnit::VPerSqrtHz).unwrap()
}

#[test]
fn fitted_coupling_classification() {
    assert_eq!(classify_interference(&constructive()).unwrap(), Interference::Constructive);
    assert_eq!(classify_interference(&destructive()).unwrap(), Interference::Destructive);
    let mut m = constructive();
    m.modes[1].alpha = 0.0;
    assert_eq!(classify_interference(&m).unwrap(), Interference::SinglePath);
    m.modes.truncate(1);
    assert!(classify_interference(&m).is_err());
}

#[test]
fn flat_curve_gives_full_span() {
    let f: Vec<f64> = (0..11).map(|k| 1e3 + 100.0 * k as f64).collect();
    let b = extract_bandwidth(&curve(&f, &[1.0; 11]), 2.0).unwrap();
    assert!(rel(b.f_lo_hz, 1e3) < 1e-14 && rel(b.f_hi_hz, 2e3) < 1e-14 && rel(b.width_hz, 1e3) < 1e-14);
    assert!(extract_bandwidth(&curve(&f, &[3.0; 11]), 2.0).is_none());
}

#[test]
fn v_shaped_crossings() {
    // |f − 5000|/1000 crosses 1.7 at 3300 and 6700 Hz, between grid points.
    let f: Vec<f64> = (0..101).map(|k| 100.0 * k as f64 + 37.0).collect();
    let v: Vec<f64> = f.iter().map(|x| (x - 5000.0).abs() / 1000.0).collect();
    let b = extract_bandwidth(&curve(&f, &v), 1.7).unwrap();
    assert!((b.f_lo_hz - 3300.0).abs() < 1e-9 && (b.f_hi_hz - 6700.0).abs() < 1e-9, "{b:?}");
}

#[test]
fn widest_band_wins_and_infinities_break_bands() {
    let f: Vec<f64> = (1..=10).map(|k| k as f64).collect();
    let v = [0.0, 0.0, 5.0, 0.0, 0.0, 0.0, f64::INFINITY, 0.0, 0.0, 0.0];
    let b = extract_bandwidth(&curve(&f, &v), 1.0).unwrap();
    assert!((b.f_lo_hz - 3.8).abs() < 1e-12 && (b.f_hi_hz - 6.0).abs() < 1e-12, "{b:?}");
}

#[test]
fn shipped_rf_plateau_band() {
    let mut m = constructive();
    m.noise.rf_voltage_noise = RfNoise::White(9e-14);
    let grid = FrequencyGrid::linear_hz(360e3, 410e3, 8192).unwrap();
    let s = voltage_sensitivity(&m, &grid, Order::Full).unwrap();
    let mid = s.sensitivity.values[grid.points().iter().position(|w| *w >= m.omega_bar()).unwrap()];
    assert!(rel(mid, 300e-9) < 0.02, "{mid:e}");
    let band = extract_bandwidth(&s.sensitivity, 315e-9).unwrap();
    assert!(rel(band.width_hz, 15e3) < 0.3, "{band:?}");
}

fn coupling_sweep(values: Vec<f64>) -> SensitivityMap {
    let base = symmetric(100.0, 5e3, 1.8e-29);
    let grid = FrequencyGrid::linear_hz(370e3, 396e3, 2001).unwrap();
    sweep_sensitivity(&SweepSpec { base, param: SweepParam::Coupling, values, grid, order: Order::Full }).unwrap()
}

#[test]
fn midpoint_scales_inversely_with_coupling() {
    let gs = vec![10.0, 20.0, 40.0, 80.0, 160.0];
    let map = coupling_sweep(gs.clone());
    let base = map.midpoint[0].unwrap() * gs[0];
    for (g, m) in gs.iter().zip(&map.midpoint) {
        assert!(rel(m.unwrap() * g, base) < 0.01);
    }
}

#[test]
fn sweep_rows_are_independent() {
    let all = coupling_sweep(vec![50.0, 120.0, 900.0, 4000.0]);
    let odd = coupling_sweep(vec![120.0, 4000.0]);
    assert_eq!(all.rows[1], odd.rows[0]);
    assert_eq!(all.rows[3], odd.rows[1]);
    let lone = coupling_sweep(vec![900.0]);
    assert_eq!(all.rows[2], lone.rows[0]);
    assert!(all.rows.iter().flatten().flatten().all(|v| *v >= 0.0));
    assert_eq!(all.rows.len(), 4);
    assert!(all.rows.iter().all(|r| r.as_ref().unwrap().len() == all.grid.len()));
}

#[test]
fn sweep_rejects_bad_values() {
    let base = symmetric(100.0, 5e3, 1.8e-29);
    let grid = FrequencyGrid::linear_hz(370e3, 396e3, 11).unwrap();
    for values in [vec![], vec![2.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0]] {
        let spec = SweepSpec { base: base.clone(), param: SweepParam::Coupling, values, grid: grid.clone(), order: Order::Full };
        assert!(sweep_sensitivity(&spec).is_err());
    }
}

#[test]
fn splitting_keeps_midpoint_and_lc_tuning() {
    let base = symmetric(5e3, 4e3, 1.8e-29);
    let m = apply_splitting(&base, 10e3);
    assert!(rel(m.omega_bar(), base.omega_bar()) < 1e-14);
    assert!(rel(m.delta_omega(), hz_to_rad(10e3)) < 1e-12);
    assert!(rel(m.lc.omega_lc(), base.omega_bar()) < 1e-12);
    assert!(rel(m.lc.quality(), base.lc.quality()) < 1e-12);
    assert_eq!(m.lc.inductance, base.lc.inductance);
}

#[test]
fn bandwidth_grows_with_splitting() {
    // G = 5 kV/m, S_in = 1.8e-29 m²/Hz, α = 0.194 on both modes.
    let mut base = symmetric(5e3, 2e3, 1.8e-29);
    for x in base.modes.iter_mut() {
        x.alpha = 0.194;
    }
    let grid = FrequencyGrid::linear_hz(355e3, 412e3, 8001).unwrap();
    let values: Vec<f64> = (1..=10).map(|k| 2e3 * k as f64).collect();
    let map = sweep_sensitivity(&SweepSpec { base, param: SweepParam::Splitting, values, grid, order: Order::Full }).unwrap();
    let widths: Vec<f64> = (0..map.values.len())
        .map(|i| extract_bandwidth(&map.row_spectrum(i).unwrap(), 3e-9).map_or(0.0, |b| b.width_hz))
        .collect();
    assert!(widths[0] > 0.0, "{widths:?}");
    for w in widths.windows(2) {
        assert!(w[1] >= w[0], "{widths:?}");
    }
}

fn coupling_map(order: Order, values: Vec<f64>) -> (SensitivityMap, Vec<f64>) {
    let mut base = constructive();
    base.noise.shot_noise = 1.8e-29;
    base.noise.rf_voltage_noise = RfNoise::White(0.0);
    base.lambda_mech.fill(0.0);
    let targets = base.modes.iter().map(|m| m.omega_m / std::f64::consts::TAU).collect();
    let grid = FrequencyGrid::linear_hz(375e3, 395e3, 4001).unwrap();
    (sweep_sensitivity(&SweepSpec { base, param: SweepParam::Coupling, values, grid, order }).unwrap(), targets)
}

fn minimum_near(map: &SensitivityMap, row: usize, target: f64) -> f64 {
    let f = map.grid.hz();
    let r = map.rows[row].as_ref().unwrap();
    let k = (0..f.len())
        .filter(|k| (f[*k] - target).abs() < 2e3)
        .min_by(|a, b| r[*a].total_cmp(&r[*b]))
        .unwrap();
    f[k]
}

#[test]
fn coupling_map_bright_at_mode_frequencies() {
    // Heatmap axes, G from 0.1 to 20 kV/m: the sensitivity minima stay on the
    // bare resonances in every first-order row.
    let values: Vec<f64> = (0..12).map(|k| 100.0 * 200f64.powf(k as f64 / 11.0)).collect();
    let (map, targets) = coupling_map(Order::FirstOrder, values);
    for i in 0..map.values.len() {
        for t in &targets {
            assert!((minimum_near(&map, i, *t) - t).abs() < 50.0, "G {}: {}", map.values[i], minimum_near(&map, i, *t));
        }
    }
    // The full response agrees while LC back-action is weak.
    let (map, targets) = coupling_map(Order::Full, vec![100.0, 300.0, 1e3]);
    for i in 0..map.values.len() {
        for t in &targets {
            assert!((minimum_near(&map, i, *t) - t).abs() < 50.0, "G {}: {} vs {t}", map.values[i], minimum_near(&map, i, *t));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_sign_rules(a1 in 0.01f64..1.0, a2 in 0.01f64..1.0, g1 in -500f64..500.0, g2 in -500f64..500.0) {
        prop_assume!(g1.abs() > 1e-3 && g2.abs() > 1e-3);
        let mut m = constructive();
        m.modes[0].alpha = a1; m.modes[1].alpha = a2; m.modes[0].g_em = g1; m.modes[1].g_em = g2;
        let c0 = classify_interference(&m).unwrap();
        let mut flipped = m.clone();
        flipped.modes[1].g_em = -g2;
        let c1 = classify_interference(&flipped).unwrap();
        prop_assert_ne!(c0, c1);
        // A joint (G₂, α₂) flip leaves the product unchanged; applying it twice is the identity.
        let mut both = m.clone();
        both.modes[1].g_em = -g2;
        both.modes[1].alpha = -a2;
        prop_assert_eq!(classify_interference(&both).unwrap(), c0);
        both.modes[1].g_em = -both.modes[1].g_em;
        both.modes[1].alpha = -both.modes[1].alpha;
        prop_assert_eq!(&both, &m);
    }

    #[test]
    fn band_nesting(vals in prop::collection::vec(0.0f64..10.0, 3..60), t1 in 0.0f64..10.0, dt in 0.0f64..5.0) {
        let f: Vec<f64> = (1..=vals.len()).map(|k| 10.0 * k as f64).collect();
        let c = curve(&f, &vals);
        let w = |t: f64| extract_bandwidth(&c, t).map_or(0.0, |b| b.width_hz);
        prop_assert!(w(t1) <= w(t1 + dt) + 1e-9);
    }
}
