#![allow(dead_code)]

use std::path::PathBuf;

use oemt_core::io::load_config;
use oemt_core::model::{hz_to_rad, LcResonator, MechanicalMode, NoiseEnvironment, RfNoise, TransducerModel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn constructive() -> TransducerModel {
    load_config(&fixture("fig3_constructive.json")).unwrap().model
}

pub fn destructive() -> TransducerModel {
    load_config(&fixture("fig3_destructive.json")).unwrap().model
}

pub fn mode(label: (u32, u32), f_hz: f64, gamma_hz: f64, mass: f64, alpha: f64, g: f64) -> MechanicalMode {
    MechanicalMode { label, omega_m: hz_to_rad(f_hz), gamma: hz_to_rad(gamma_hz), mass_eff: mass, alpha, g_em: g }
}

pub fn noise(t: f64, s_in: f64, s_v: f64) -> NoiseEnvironment {
    NoiseEnvironment { temperature: t, shot_noise: s_in, rf_voltage_noise: RfNoise::White(s_v) }
}

/// Equal m, Γ, |G|, α = 1, opposite G signs, LC at Ω̄ with Q = 81.5.
pub fn symmetric(g: f64, delta_nu_hz: f64, s_in: f64) -> TransducerModel {
    let (nu_bar, m, gamma_hz) = (383_250.0, 67.3e-12, 3.6);
    let modes = vec![
        mode((1, 2), nu_bar - 0.5 * delta_nu_hz, gamma_hz, m, 1.0, g),
        mode((2, 1), nu_bar + 0.5 * delta_nu_hz, gamma_hz, m, 1.0, -g),
    ];
    let l = 427e-6;
    let w = hz_to_rad(nu_bar);
    let lc = LcResonator::from_lcq(l, 1.0 / (l * w * w), 81.5);
    TransducerModel::new(modes, lc, noise(300.0, s_in, 0.0))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn log_uniform<R: rand::Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Random passive two-mode model: log-uniform frequencies, linewidths,
/// masses, couplings up to 5 kV/m, LC near the modes, small λ.
pub fn random_model<R: rand::Rng>(rng: &mut R) -> TransducerModel {
    let nu1 = log_uniform(rng, 1e5, 1e6);
    let nu2 = nu1 * (1.0 + log_uniform(rng, 1e-3, 0.1));
    let sign = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let modes = vec![
        mode((1, 2), nu1, log_uniform(rng, 0.1, 100.0), log_uniform(rng, 1e-12, 1e-9), log_uniform(rng, 0.05, 1.0), sign(rng) * log_uniform(rng, 1.0, 5e3)),
        mode((2, 1), nu2, log_uniform(rng, 0.1, 100.0), log_uniform(rng, 1e-12, 1e-9), log_uniform(rng, 0.05, 1.0), sign(rng) * log_uniform(rng, 1.0, 5e3)),
    ];
    let l = log_uniform(rng, 1e-5, 1e-2);
    let nu_lc = 0.5 * (nu1 + nu2) * log_uniform(rng, 0.8, 1.25);
    let w = hz_to_rad(nu_lc);
    let lc = LcResonator::from_lcq(l, 1.0 / (l * w * w), log_uniform(rng, 10.0, 1e3));
    let mut m = TransducerModel::new(modes, lc, noise(log_uniform(rng, 1.0, 300.0), log_uniform(rng, 1e-32, 1e-28), log_uniform(rng, 1e-18, 1e-12)));
    // |λ| well below the smaller modal stiffness.
    let k_min = m.modes.iter().map(|x| x.mass_eff * x.omega_m * x.omega_m).fold(f64::INFINITY, f64::min);
    let lam = sign(rng) * k_min * log_uniform(rng, 1e-6, 1e-2);
    m.lambda_mech[(0, 1)] = lam;
    m.lambda_mech[(1, 0)] = lam;
    m
}

/// Random models that pass the pole test.
pub fn random_stable_models(seed: u64, count: usize) -> Vec<TransducerModel> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let m = random_model(&mut rng);
        if oemt_core::verify::stability_poles(&m).stable {
            out.push(m);
        }
    }
    out
}

pub fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs()).fold(0.0, f64::max)
}
