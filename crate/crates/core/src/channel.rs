//! Split-step integration of the attenuation-normalized Manakov equation,
//! chromatic dispersion compensation and ASE injection.
//!
//! Conventions: the spectrum is Â(ω) = Σ A(t) e^{+jωt} Δt and linear
//! propagation over z multiplies it by exp(+j(β2/2)ω²z). Only ω² enters, so
//! the operator is the same under either DFT sign. The nonlinear step rotates
//! the field by +(8/9)γ‖A‖² times the loss-weighted step length.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::FiberParams;
use crate::error::{NliError, Result};
use crate::sigproc::{DualPolSymbols, DualPolWaveform};
use crate::spectral::{bin_omegas, Spectral};
use crate::units::{db_to_lin, PLANCK, PS2};

/// Manakov factor on the Kerr term.
pub const MANAKOV: f64 = 8.0 / 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum StepPolicy {
    Fixed { step_km: f64, max_steps: usize },
    /// Step so that the peak nonlinear phase per step stays below `max_phase_rad`.
    NonlinearPhase { max_phase_rad: f64, max_steps: usize },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::NonlinearPhase {
            max_phase_rad: 1e-3,
            max_steps: 20_000,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepPolicy::Fixed { step_km, max_steps } => {
                if !(step_km > 0.0) || max_steps < 1 {
                    return Err(NliError::Config(format!(
                        "fixed step needs step_km > 0 and max_steps ≥ 1, got {step_km} / {max_steps}"
                    )));
                }
            }
            StepPolicy::NonlinearPhase { max_phase_rad, max_steps } => {
                if !(max_phase_rad > 0.0 && max_phase_rad <= 0.1) || max_steps < 1 {
                    return Err(NliError::Config(format!(
                        "phase-bounded step needs 0 < max_phase_rad ≤ 0.1 and max_steps ≥ 1, got {max_phase_rad} / {max_steps}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Loss-weighted length ∫_z^{z+dz} e^{−αs} ds.
fn step_weight(alpha: f64, z: f64, dz: f64) -> f64 {
    (-alpha * z).exp() * crate::config::effective_length(alpha, dz)
}

struct Dispersion {
    sp: Spectral,
    half_beta_omega2: Vec<f64>,
}

impl Dispersion {
    fn new(len: usize, dt: f64, beta2_si: f64) -> Self {
        let half_beta_omega2 = bin_omegas(len, dt).into_iter().map(|w| 0.5 * beta2_si * w * w).collect();
        Dispersion {
            sp: Spectral::new(len),
            half_beta_omega2,
        }
    }

    /// Multiplies the spectrum by exp(+j(β2/2)ω²·dist).
    fn apply(&mut self, buf: &mut [Complex64], dist: f64) {
        if dist == 0.0 {
            return;
        }
        self.sp.forward(buf);
        for (v, k) in buf.iter_mut().zip(&self.half_beta_omega2) {
            *v *= Complex64::from_polar(1.0, k * dist);
        }
        self.sp.inverse(buf);
    }
}

fn peak_power(x: &[Complex64], y: &[Complex64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).fold(0.0, f64::max)
}

/// Symmetric split-step propagation; returns the output and the number of steps taken.
pub fn propagate_ssfm_with_steps(
    w: &DualPolWaveform,
    fp: &FiberParams,
    policy: &StepPolicy,
) -> Result<(DualPolWaveform, usize)> {
    if w.is_empty() {
        return Err(NliError::InputShape("empty waveform".into()));
    }
    fp.validate()?;
    policy.validate()?;
    let len_km = fp.length_km;
    let alpha = fp.alpha_lin();
    let kerr = MANAKOV * fp.gamma;
    let mut disp = Dispersion::new(w.len(), w.dt(), fp.beta2_si());
    let mut x = w.x_pol.clone();
    let mut y = w.y_pol.clone();

    if kerr == 0.0 {
        disp.apply(&mut x, len_km);
        disp.apply(&mut y, len_km);
        return Ok((DualPolWaveform { x_pol: x, y_pol: y, ..w.clone() }, 1));
    }

    let fixed = match *policy {
        StepPolicy::Fixed { step_km, max_steps } => {
            let n = ((len_km / step_km) - 1e-9).ceil().max(1.0) as usize;
            if n > max_steps {
                return Err(NliError::Config(format!(
                    "fixed step {step_km} km needs {n} steps, above the limit of {max_steps}"
                )));
            }
            Some(len_km / n as f64)
        }
        StepPolicy::NonlinearPhase { .. } => None,
    };
    let max_steps = match *policy {
        StepPolicy::Fixed { max_steps, .. } | StepPolicy::NonlinearPhase { max_steps, .. } => max_steps,
    };

    let mut z = 0.0;
    let mut pending = 0.0;
    let mut steps = 0usize;
    while len_km - z > 1e-12 * len_km {
        let remaining = len_km - z;
        let dz = match (fixed, policy) {
            (Some(dz), _) => dz.min(remaining),
            (None, StepPolicy::NonlinearPhase { max_phase_rad, .. }) => {
                let pmax = peak_power(&x, &y);
                if pmax == 0.0 {
                    remaining
                } else {
                    let wmax = max_phase_rad / (kerr * pmax);
                    let dz = if alpha == 0.0 {
                        wmax
                    } else {
                        let r = alpha * wmax * (alpha * z).exp();
                        if r >= 1.0 {
                            remaining
                        } else {
                            -(-r).ln_1p() / alpha
                        }
                    };
                    dz.min(remaining)
                }
            }
            _ => unreachable!(),
        };
        steps += 1;
        if steps > max_steps {
            return Err(NliError::Config(format!(
                "step policy exceeded {max_steps} steps at z = {z:.3} km"
            )));
        }
        disp.apply(&mut x, pending + 0.5 * dz);
        disp.apply(&mut y, pending + 0.5 * dz);
        let weight = kerr * step_weight(alpha, z, dz);
        for (a, b) in x.iter_mut().zip(y.iter_mut()) {
            let rot = Complex64::from_polar(1.0, weight * (a.norm_sqr() + b.norm_sqr()));
            *a *= rot;
            *b *= rot;
        }
        pending = 0.5 * dz;
        z += dz;
    }
    disp.apply(&mut x, pending);
    disp.apply(&mut y, pending);
    Ok((DualPolWaveform { x_pol: x, y_pol: y, ..w.clone() }, steps))
}

pub fn propagate_ssfm(w: &DualPolWaveform, fp: &FiberParams, policy: &StepPolicy) -> Result<DualPolWaveform> {
    propagate_ssfm_with_steps(w, fp, policy).map(|(out, _)| out)
}

/// Exact inverse of the linear propagation operator: exp(−j(β2/2)ω²L).
///
/// `beta2` is in ps²/km.
pub fn cdc(w: &DualPolWaveform, beta2: f64, length_km: f64) -> DualPolWaveform {
    let mut disp = Dispersion::new(w.len(), w.dt(), beta2 * PS2);
    let mut x = w.x_pol.clone();
    let mut y = w.y_pol.clone();
    disp.apply(&mut x, -length_km);
    disp.apply(&mut y, -length_km);
    DualPolWaveform { x_pol: x, y_pol: y, ..w.clone() }
}

/// Adds circularly symmetric Gaussian noise of variance `sigma_n_sq` per complex dimension.
pub fn add_ase<R: Rng + ?Sized>(s: &DualPolSymbols, sigma_n_sq: f64, rng: &mut R) -> Result<DualPolSymbols> {
    if !(sigma_n_sq >= 0.0) {
        return Err(NliError::Input(format!("noise variance must be ≥ 0, got {sigma_n_sq}")));
    }
    let mut out = s.clone();
    if sigma_n_sq == 0.0 {
        return Ok(out);
    }
    let sd = (0.5 * sigma_n_sq).sqrt();
    for v in out.x_pol.iter_mut().chain(out.y_pol.iter_mut()) {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(re, im) * sd;
    }
    Ok(out)
}

/// ASE variance per complex dimension after the matched filter and 1/√Es scaling,
/// for an amplifier of gain `gain_db` and noise figure `nf_db` at the receiver.
///
/// The ASE power per polarization in the symbol bandwidth, (G−1)·hν·NF·Rs,
/// is divided by the signal power per polarization, Es·Rs.
pub fn sigma_from_nf(nf_db: f64, gain_db: f64, center_freq_hz: f64, rs: f64, es: f64) -> f64 {
    let g = db_to_lin(gain_db);
    let nf = db_to_lin(nf_db);
    let p_ase = (g - 1.0) * PLANCK * center_freq_hz * nf * rs;
    p_ase / (es * rs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LinkConfig;
    use crate::sigproc::{modulate, random_symbols, Constellation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_waveform(n_sym: usize, power_dbm: f64, seed: u64) -> (DualPolWaveform, LinkConfig) {
        let cfg = LinkConfig {
            osf: 4,
            roll_off: 0.1,
            power_dbm,
            ..LinkConfig::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = random_symbols(n_sym, &Constellation::qam16_gray(), &mut rng);
        (modulate(&a, &cfg).unwrap(), cfg)
    }

    fn rel_err(a: &DualPolWaveform, b: &DualPolWaveform) -> f64 {
        let num: f64 = a.x_pol.iter().zip(&b.x_pol).chain(a.y_pol.iter().zip(&b.y_pol)).map(|(u, v)| (u - v).norm_sqr()).sum();
        let den: f64 = b.x_pol.iter().chain(&b.y_pol).map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    /// Spectral dispersion computed directly, independent of the solver's buffers.
    fn disperse_reference(w: &DualPolWaveform, beta2_ps2: f64, dist: f64) -> DualPolWaveform {
        let n = w.len();
        let mut sp = Spectral::new(n);
        let om = bin_omegas(n, w.dt());
        let mut go = |p: &[Complex64]| {
            let mut b = p.to_vec();
            sp.forward(&mut b);
            for (v, o) in b.iter_mut().zip(&om) {
                *v *= Complex64::new(0.0, 0.5 * beta2_ps2 * 1e-24 * o * o * dist).exp();
            }
            sp.inverse(&mut b);
            b
        };
        DualPolWaveform { x_pol: go(&w.x_pol), y_pol: go(&w.y_pol), ..w.clone() }
    }

    #[test]
    fn linear_case_is_exact_dispersion() {
        let (w, _) = random_waveform(512, 10.0, 1);
        let fp = FiberParams { gamma: 0.0, ..FiberParams::default() };
        let (out, steps) = propagate_ssfm_with_steps(&w, &fp, &StepPolicy::default()).unwrap();
        assert_eq!(steps, 1);
        let reference = disperse_reference(&w, fp.beta2, fp.length_km);
        assert!(rel_err(&out, &reference) < 1e-10);
    }

    #[test]
    fn dispersion_free_closed_form() {
        let (w, _) = random_waveform(256, 16.0, 2);
        let fp = FiberParams { beta2: 0.0, ..FiberParams::default() };
        let out = propagate_ssfm(&w, &fp, &StepPolicy::default()).unwrap();
        let leff = fp.effective_length();
        let phase = |a: Complex64, b: Complex64| Complex64::from_polar(1.0, MANAKOV * fp.gamma * leff * (a.norm_sqr() + b.norm_sqr()));
        let expect = DualPolWaveform {
            x_pol: w.x_pol.iter().zip(&w.y_pol).map(|(a, b)| a * phase(*a, *b)).collect(),
            y_pol: w.x_pol.iter().zip(&w.y_pol).map(|(a, b)| b * phase(*a, *b)).collect(),
            ..w.clone()
        };
        assert!(rel_err(&out, &expect) < 1e-8, "{}", rel_err(&out, &expect));
    }

    #[test]
    fn zero_input_zero_output() {
        let cfg = LinkConfig::default();
        let w = modulate(&DualPolSymbols::zeros(32), &cfg).unwrap();
        let out = propagate_ssfm(&w, &FiberParams::default(), &StepPolicy::default()).unwrap();
        assert!(out.x_pol.iter().chain(&out.y_pol).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn lossless_energy_conservation() {
        let (w, _) = random_waveform(256, 18.0, 3);
        let fp = FiberParams { alpha_db_per_km: 0.0, length_km: 50.0, ..FiberParams::default() };
        let out = propagate_ssfm(&w, &fp, &StepPolicy::Fixed { step_km: 0.5, max_steps: 1000 }).unwrap();
        assert!((out.energy() / w.energy() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cdc_inverts_linear_propagation() {
        let (w, _) = random_waveform(512, 0.0, 4);
        let fp = FiberParams { gamma: 0.0, ..FiberParams::default() };
        let out = cdc(&propagate_ssfm(&w, &fp, &StepPolicy::default()).unwrap(), fp.beta2, fp.length_km);
        assert!(rel_err(&out, &w) < 1e-10);
    }

    #[test]
    fn cdc_on_complex_exponential() {
        let n = 256;
        let fs = 240e9;
        let k0 = 7.0;
        // e^{-jω0 t} with ω0 on the grid
        let omega0 = 2.0 * std::f64::consts::PI * k0 * fs / n as f64;
        let tone: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(1.0, -omega0 * i as f64 / fs)).collect();
        let w = DualPolWaveform { x_pol: tone.clone(), y_pol: tone.clone(), sample_rate: fs, osf: 4 };
        let out = cdc(&w, -21.7, 100.0);
        let factor = Complex64::from_polar(1.0, -0.5 * -21.7e-24 * omega0 * omega0 * 100.0);
        for (o, t) in out.x_pol.iter().zip(&tone) {
            assert!((o - t * factor).norm() < 1e-10);
        }
    }

    #[test]
    fn cdc_is_linear() {
        let (w1, _) = random_waveform(128, 0.0, 5);
        let (w2, _) = random_waveform(128, 3.0, 6);
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(-2.0, 0.5));
        let comb = DualPolWaveform {
            x_pol: w1.x_pol.iter().zip(&w2.x_pol).map(|(p, q)| a * p + b * q).collect(),
            y_pol: w1.y_pol.iter().zip(&w2.y_pol).map(|(p, q)| a * p + b * q).collect(),
            ..w1.clone()
        };
        let lhs = cdc(&comb, -21.7, 230.0);
        let (c1, c2) = (cdc(&w1, -21.7, 230.0), cdc(&w2, -21.7, 230.0));
        let scale = lhs.x_pol.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..lhs.len() {
            assert!((lhs.x_pol[i] - (a * c1.x_pol[i] + b * c2.x_pol[i])).norm() < 1e-12 * scale.max(1e-300) * 10.0);
        }
    }

    #[test]
    fn ase_statistics() {
        let s = DualPolSymbols::zeros(500_000);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let sigma2 = 0.37;
        let n = add_ase(&s, sigma2, &mut rng).unwrap();
        let all: Vec<Complex64> = n.x_pol.iter().chain(&n.y_pol).copied().collect();
        let m = all.len() as f64;
        let var = all.iter().map(|v| v.norm_sqr()).sum::<f64>() / m;
        let pseudo: Complex64 = all.iter().map(|v| v * v).sum::<Complex64>() / m;
        assert!((var / sigma2 - 1.0).abs() < 0.01);
        assert!(pseudo.norm() < 0.005 * sigma2);
    }

    #[test]
    fn ase_zero_and_deterministic() {
        let (w, cfg) = random_waveform(64, 0.0, 1);
        let s = crate::sigproc::matched_filter_and_sample(&w, &cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(add_ase(&s, 0.0, &mut rng).unwrap(), s);
        let a = add_ase(&s, 0.1, &mut ChaCha20Rng::seed_from_u64(42)).unwrap();
        let b = add_ase(&s, 0.1, &mut ChaCha20Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert!(add_ase(&s, -1.0, &mut rng).is_err());
    }

    #[test]
    fn sigma_from_nf_properties() {
        assert_eq!(sigma_from_nf(f64::NEG_INFINITY, 46.0, 193.41e12, 60e9, 1e-13), 0.0);
        let a = sigma_from_nf(5.0, 46.0, 193.41e12, 60e9, 1e-13);
        let b = sigma_from_nf(5.0, 46.0, 193.41e12, 60e9, 2e-13);
        assert!((a / b - 2.0).abs() < 1e-12);
        let cfg = LinkConfig::default();
        let s = sigma_from_nf(5.0, 46.0, 193.41e12, 60e9, cfg.es());
        assert!((s / SIGMA2_DEFAULT_14DBM - 1.0).abs() < 1e-9, "{s:e}");
    }

    // (G−1)·hν·NF/Es for NF = 5 dB, G = 46 dB, ν = 193.41 THz, P = 14 dBm, Rs = 60 GBd.
    const SIGMA2_DEFAULT_14DBM: f64 = 0.077_073_537_272_442_83;

    #[test]
    fn step_limit_is_enforced() {
        let (w, _) = random_waveform(64, 10.0, 1);
        let fp = FiberParams::default();
        assert!(matches!(
            propagate_ssfm(&w, &fp, &StepPolicy::Fixed { step_km: 1.0, max_steps: 10 }),
            Err(NliError::Config(_))
        ));
        assert!(matches!(
            propagate_ssfm(&w, &fp, &StepPolicy::NonlinearPhase { max_phase_rad: 1e-3, max_steps: 5 }),
            Err(NliError::Config(_))
        ));
        assert!(StepPolicy::NonlinearPhase { max_phase_rad: 0.2, max_steps: 5 }.validate().is_err());
    }

    #[test]
    fn second_order_step_convergence() {
        let (w, _) = random_waveform(256, 18.0, 8);
        let fp = FiberParams { length_km: 40.0, ..FiberParams::default() };
        let run = |h: f64| propagate_ssfm(&w, &fp, &StepPolicy::Fixed { step_km: h, max_steps: 100_000 }).unwrap();
        let steps = [1.0, 0.5, 0.25];
        let reference = run(steps[steps.len() - 1] / 32.0);
        let errs: Vec<f64> = steps.iter().map(|&h| rel_err(&run(h), &reference)).collect();
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((3.0..5.5).contains(&ratio), "halving ratio {ratio} from {errs:?}");
        }
    }
}
