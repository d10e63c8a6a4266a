//! Constellation mapping, RRC pulse shaping and matched filtering on periodic blocks.
//!
//! Every filter acts on the whole block through the DFT, so the very long
//! impulse response of a roll-off 0.01 RRC pulse is never truncated and the
//! block edges see no ISI.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::LinkConfig;
use crate::error::{NliError, Result};
use crate::spectral::{bin_freqs, Spectral};

/// Bits carried by one 2D (single-polarization) symbol.
pub const BITS_PER_2D: usize = 4;
/// Bits carried by one dual-polarization time slot.
pub const BITS_PER_4D: usize = 2 * BITS_PER_2D;

#[derive(Clone, Debug)]
pub struct Constellation {
    /// `points[i]` carries the label `i` (first bit is the most significant).
    points: Vec<Complex64>,
    min_distance: f64,
    name: &'static str,
}

impl Constellation {
    /// Unit-energy 16QAM with a per-quadrature Gray code.
    ///
    /// The first two bits select the in-phase level and the last two the
    /// quadrature level, with 00 → +3, 01 → +1, 11 → −1, 10 → −3 (scaled by 1/√10).
    pub fn qam16_gray() -> Self {
        fn level(b: u8) -> f64 {
            match b {
                0b00 => 3.0,
                0b01 => 1.0,
                0b11 => -1.0,
                _ => -3.0,
            }
        }
        let s = 10f64.sqrt().recip();
        let points = (0u8..16)
            .map(|lab| Complex64::new(level(lab >> 2) * s, level(lab & 0b11) * s))
            .collect();
        Constellation {
            points,
            min_distance: 2.0 * s,
            name: "16QAM-gray",
        }
    }

    pub fn name(&self) -> &str {
        self.name
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bits_per_symbol(&self) -> usize {
        BITS_PER_2D
    }

    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    /// Bit `pos` (0 = first transmitted bit) of the label of point `index`.
    #[inline]
    pub fn bit(&self, index: usize, pos: usize) -> u8 {
        ((index >> (BITS_PER_2D - 1 - pos)) & 1) as u8
    }

    /// Index of the nearest point in Euclidean distance.
    #[inline]
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    fn index_of_bits(&self, bits: &[u8]) -> usize {
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPolSymbols {
    pub x_pol: Vec<Complex64>,
    pub y_pol: Vec<Complex64>,
}

impl DualPolSymbols {
    pub fn new(x_pol: Vec<Complex64>, y_pol: Vec<Complex64>) -> Result<Self> {
        if x_pol.len() != y_pol.len() {
            return Err(NliError::InputShape(format!(
                "polarization lengths differ: {} vs {}",
                x_pol.len(),
                y_pol.len()
            )));
        }
        Ok(DualPolSymbols { x_pol, y_pol })
    }

    pub fn zeros(len: usize) -> Self {
        DualPolSymbols {
            x_pol: vec![Complex64::new(0.0, 0.0); len],
            y_pol: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.x_pol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pol.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize) -> [Complex64; 2] {
        [self.x_pol[n], self.y_pol[n]]
    }

    pub fn pols(&self) -> [&[Complex64]; 2] {
        [&self.x_pol, &self.y_pol]
    }

    /// Σ‖a_n‖² over both polarizations.
    pub fn energy(&self) -> f64 {
        self.x_pol.iter().chain(&self.y_pol).map(|v| v.norm_sqr()).sum()
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(NliError::InputShape(format!(
                "sequence lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let x = self.x_pol.iter().zip(&other.x_pol).map(|(a, b)| f(*a, *b)).collect();
        let y = self.y_pol.iter().zip(&other.y_pol).map(|(a, b)| f(*a, *b)).collect();
        Ok(DualPolSymbols { x_pol: x, y_pol: y })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Concatenates blocks in order.
    pub fn concat<'a>(blocks: impl IntoIterator<Item = &'a DualPolSymbols>) -> DualPolSymbols {
        let mut out = DualPolSymbols::zeros(0);
        for b in blocks {
            out.x_pol.extend_from_slice(&b.x_pol);
            out.y_pol.extend_from_slice(&b.y_pol);
        }
        out
    }
}

/// Oversampled dual-polarization field in √W, periodic over the block.
#[derive(Clone, Debug, PartialEq)]
pub struct DualPolWaveform {
    pub x_pol: Vec<Complex64>,
    pub y_pol: Vec<Complex64>,
    pub sample_rate: f64,
    pub osf: usize,
}

impl DualPolWaveform {
    pub fn len(&self) -> usize {
        self.x_pol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_pol.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Mean of ‖A(t)‖² in W (both polarizations).
    pub fn mean_power(&self) -> f64 {
        let e: f64 = self.x_pol.iter().chain(&self.y_pol).map(|v| v.norm_sqr()).sum();
        e / self.len() as f64
    }

    /// ∫‖A(t)‖² dt over the block, in J.
    pub fn energy(&self) -> f64 {
        self.mean_power() * self.len() as f64 * self.dt()
    }
}

/// Maps bits onto dual-polarization symbols: per time slot the first four
/// bits select the x-polarization point and the next four the y point.
pub fn map_bits(bits: &[u8], c: &Constellation) -> Result<DualPolSymbols> {
    let m = c.bits_per_symbol();
    if bits.len() % (2 * m) != 0 {
        return Err(NliError::InputShape(format!(
            "bit count {} is not a multiple of {}",
            bits.len(),
            2 * m
        )));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(NliError::Input(format!("bit values must be 0 or 1, found {b}")));
    }
    let n = bits.len() / (2 * m);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for slot in bits.chunks_exact(2 * m) {
        x.push(c.points[c.index_of_bits(&slot[..m])]);
        y.push(c.points[c.index_of_bits(&slot[m..])]);
    }
    Ok(DualPolSymbols { x_pol: x, y_pol: y })
}

/// Nearest-point hard decisions, in the bit order used by [`map_bits`].
pub fn demap_hard(s: &DualPolSymbols, c: &Constellation) -> Vec<u8> {
    let m = c.bits_per_symbol();
    let mut out = Vec::with_capacity(s.len() * 2 * m);
    for n in 0..s.len() {
        for z in s.get(n) {
            let idx = c.nearest(z);
            out.extend((0..m).map(|p| c.bit(idx, p)));
        }
    }
    out
}

/// Amplitude response of the unit-energy root-raised-cosine pulse.
///
/// H(0) = 1/√Rs, so that ∫|H(f)|² df = 1.
pub fn rrc_amplitude(f: f64, roll_off: f64, rs: f64) -> f64 {
    let t = 1.0 / rs;
    let af = f.abs();
    let f1 = (1.0 - roll_off) * rs / 2.0;
    let f2 = (1.0 + roll_off) * rs / 2.0;
    let rc = if af <= f1 {
        t
    } else if af <= f2 {
        0.5 * t * (1.0 + (std::f64::consts::PI * t / roll_off * (af - f1)).cos())
    } else {
        0.0
    };
    rc.sqrt()
}

pub fn rrc_spectrum(roll_off: f64, rs: f64, f_grid: &[f64]) -> Vec<f64> {
    f_grid.iter().map(|&f| rrc_amplitude(f, roll_off, rs)).collect()
}

fn rrc_on_grid(cfg: &LinkConfig, len: usize) -> Vec<f64> {
    let f = bin_freqs(len, 1.0 / cfg.sample_rate());
    rrc_spectrum(cfg.roll_off, cfg.symbol_rate_hz, &f)
}

/// Circular RRC pulse shaping scaled by √Es (mean power P/2 per polarization).
pub fn modulate(a: &DualPolSymbols, cfg: &LinkConfig) -> Result<DualPolWaveform> {
    if cfg.osf < 4 {
        return Err(NliError::Config(format!("modulation needs osf ≥ 4, got {}", cfg.osf)));
    }
    if a.is_empty() {
        return Err(NliError::InputShape("empty symbol sequence".into()));
    }
    let osf = cfg.osf;
    let len = a.len() * osf;
    let h = rrc_on_grid(cfg, len);
    let scale = cfg.es().sqrt() * cfg.sample_rate();
    let mut sp = Spectral::new(len);
    let shape = |sym: &[Complex64], sp: &mut Spectral| {
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        for (n, s) in sym.iter().enumerate() {
            buf[n * osf] = *s;
        }
        sp.forward(&mut buf);
        for (v, hk) in buf.iter_mut().zip(&h) {
            *v *= hk * scale;
        }
        sp.inverse(&mut buf);
        buf
    };
    let x = shape(&a.x_pol, &mut sp);
    let y = shape(&a.y_pol, &mut sp);
    Ok(DualPolWaveform {
        x_pol: x,
        y_pol: y,
        sample_rate: cfg.sample_rate(),
        osf,
    })
}

/// Circular matched filter, symbol-rate sampling at the aligned phase and 1/√Es scaling.
pub fn matched_filter_and_sample(w: &DualPolWaveform, cfg: &LinkConfig) -> Result<DualPolSymbols> {
    if w.osf != cfg.osf || (w.sample_rate - cfg.sample_rate()).abs() > 1e-9 * cfg.sample_rate() {
        return Err(NliError::Config(format!(
            "waveform at {} Sa/s (osf {}) does not match link at {} Sa/s (osf {})",
            w.sample_rate,
            w.osf,
            cfg.sample_rate(),
            cfg.osf
        )));
    }
    if w.len() % w.osf != 0 {
        return Err(NliError::InputShape("waveform length is not a multiple of osf".into()));
    }
    let len = w.len();
    let h = rrc_on_grid(cfg, len);
    let inv_sqrt_es = if cfg.es() > 0.0 { cfg.es().sqrt().recip() } else { 0.0 };
    let mut sp = Spectral::new(len);
    let filter = |pol: &[Complex64], sp: &mut Spectral| -> Vec<Complex64> {
        let mut buf = pol.to_vec();
        sp.forward(&mut buf);
        for (v, hk) in buf.iter_mut().zip(&h) {
            *v *= *hk;
        }
        sp.inverse(&mut buf);
        buf.iter().step_by(w.osf).map(|v| v * inv_sqrt_es).collect()
    };
    let x = filter(&w.x_pol, &mut sp);
    let y = filter(&w.y_pol, &mut sp);
    Ok(DualPolSymbols { x_pol: x, y_pol: y })
}

/// Uniform random bits, one per byte.
pub fn random_bits<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

/// Uniformly drawn constellation symbols.
pub fn random_symbols<R: rand::Rng + ?Sized>(n: usize, c: &Constellation, rng: &mut R) -> DualPolSymbols {
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        x.push(c.points[rng.random_range(0..c.len())]);
        y.push(c.points[rng.random_range(0..c.len())]);
    }
    DualPolSymbols { x_pol: x, y_pol: y }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::dbm_to_w;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn link(osf: usize, roll_off: f64) -> LinkConfig {
        LinkConfig {
            osf,
            roll_off,
            ..LinkConfig::default()
        }
    }

    #[test]
    fn constellation_unit_energy_and_bijection() {
        let c = Constellation::qam16_gray();
        let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-12);
        let mut seen = std::collections::HashSet::new();
        for p in c.points() {
            assert!(seen.insert(((p.re * 1e6).round() as i64, (p.im * 1e6).round() as i64)));
        }
    }

    #[test]
    fn gray_adjacency_exhaustive() {
        let c = Constellation::qam16_gray();
        let d = c.min_distance();
        let mut pairs = 0;
        for i in 0..16 {
            for j in 0..16 {
                let dist = (c.points()[i] - c.points()[j]).norm();
                if i != j && (dist - d).abs() < 1e-9 {
                    assert_eq!((i ^ j).count_ones(), 1, "labels {i:04b} {j:04b}");
                    pairs += 1;
                }
            }
        }
        // 4x4 grid: 24 undirected neighbour pairs
        assert_eq!(pairs, 48);
    }

    #[test]
    fn label_0000_is_upper_right_corner() {
        let c = Constellation::qam16_gray();
        let s = map_bits(&[0, 0, 0, 0, 1, 0, 1, 0], &c).unwrap();
        let r = 10f64.sqrt();
        assert!((s.x_pol[0] - Complex64::new(3.0 / r, 3.0 / r)).norm() < 1e-15);
        assert!((s.y_pol[0] - Complex64::new(-3.0 / r, -3.0 / r)).norm() < 1e-15);
    }

    #[test]
    fn map_rejects_bad_length() {
        let c = Constellation::qam16_gray();
        assert!(matches!(map_bits(&[0; 12], &c), Err(NliError::InputShape(_))));
        assert!(map_bits(&[], &c).unwrap().is_empty());
    }

    #[test]
    fn map_demap_all_labels() {
        let c = Constellation::qam16_gray();
        for lx in 0..16u8 {
            for ly in 0..16u8 {
                let bits: Vec<u8> = (0..4).rev().map(|p| (lx >> p) & 1).chain((0..4).rev().map(|p| (ly >> p) & 1)).collect();
                let s = map_bits(&bits, &c).unwrap();
                assert_eq!(demap_hard(&s, &c), bits);
            }
        }
    }

    #[test]
    fn random_bits_mean_energy() {
        let c = Constellation::qam16_gray();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let bits = random_bits(8 * 1_000_000 / 2, &mut rng);
        let s = map_bits(&bits, &c).unwrap();
        let e = s.energy() / (2 * s.len()) as f64;
        assert!((0.995..=1.005).contains(&e), "mean energy {e}");
    }

    #[test]
    fn demap_inside_voronoi_cell() {
        let c = Constellation::qam16_gray();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let bits = random_bits(8 * 500, &mut rng);
        let s = map_bits(&bits, &c).unwrap();
        let r = 0.49 * c.min_distance();
        let mut pert = s.clone();
        for v in pert.x_pol.iter_mut().chain(pert.y_pol.iter_mut()) {
            let th: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
            *v += Complex64::from_polar(r, th);
        }
        assert_eq!(demap_hard(&pert, &c), bits);
    }

    #[test]
    fn hard_ber_decreases_with_snr() {
        let c = Constellation::qam16_gray();
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let bits = random_bits(8 * 50_000, &mut rng);
        let s = map_bits(&bits, &c).unwrap();
        let noise: Vec<Complex64> = (0..2 * s.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            })
            .collect();
        let mut last = f64::INFINITY;
        for snr_db in [6.0, 9.0, 12.0, 15.0, 18.0, 21.0] {
            let sd = 10f64.powf(-snr_db / 20.0);
            let mut y = s.clone();
            for (i, v) in y.x_pol.iter_mut().chain(y.y_pol.iter_mut()).enumerate() {
                *v += noise[i] * sd;
            }
            let hd = demap_hard(&y, &c);
            let errs = hd.iter().zip(&bits).filter(|(a, b)| a != b).count();
            let ber = errs as f64 / bits.len() as f64;
            assert!(ber <= last, "BER not monotone at {snr_db} dB");
            last = ber;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn rrc_reference_values() {
        let rs = 60e9;
        let h0 = rrc_amplitude(0.0, 0.01, rs);
        assert!((h0 - 1.0 / rs.sqrt()).abs() < 1e-18);
        let hn = rrc_amplitude(rs / 2.0, 0.01, rs);
        assert!((hn - h0 / 2f64.sqrt()).abs() < 1e-12 * h0);
        assert_eq!(rrc_amplitude(0.51 * rs * 1.0001, 0.01, rs), 0.0);
        // Nyquist: folded |H|² is flat
        for roll_off in [0.01, 0.3, 1.0] {
            for i in 0..200 {
                let f = -rs + 2.0 * rs * i as f64 / 200.0;
                let s: f64 = (-3..=3).map(|k| rrc_amplitude(f - k as f64 * rs, roll_off, rs).powi(2)).sum();
                assert!((s - h0 * h0).abs() < 1e-12 * h0 * h0);
            }
        }
        // unit energy by numeric quadrature
        let n = 200_000;
        let df = 1.4 * rs / n as f64;
        let e: f64 = (0..n).map(|i| rrc_amplitude(-0.7 * rs + (i as f64 + 0.5) * df, 0.3, rs).powi(2) * df).sum();
        assert!((e - 1.0).abs() < 1e-6, "energy {e}");
    }

    #[test]
    fn modulate_power_at_14_dbm() {
        let c = Constellation::qam16_gray();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = random_symbols(1 << 12, &c, &mut rng);
        let cfg = link(8, 0.01);
        let w = modulate(&a, &cfg).unwrap();
        let p = w.mean_power();
        assert!((p / 0.025_12 - 1.0).abs() < 0.01, "{p}");
        assert!((dbm_to_w(14.0) - 0.025_12).abs() < 1e-5);
    }

    #[test]
    fn zero_in_zero_out() {
        let cfg = link(8, 0.01);
        let w = modulate(&DualPolSymbols::zeros(64), &cfg).unwrap();
        assert!(w.x_pol.iter().chain(&w.y_pol).all(|v| v.norm() == 0.0));
        let s = matched_filter_and_sample(&w, &cfg).unwrap();
        assert!(s.x_pol.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn modulate_requires_osf4() {
        let cfg = link(2, 0.01);
        assert!(matches!(modulate(&DualPolSymbols::zeros(8), &cfg), Err(NliError::Config(_))));
    }

    #[test]
    fn matched_filter_rejects_rate_mismatch() {
        let cfg = link(8, 0.01);
        let w = modulate(&DualPolSymbols::zeros(16), &cfg).unwrap();
        assert!(matches!(matched_filter_and_sample(&w, &link(4, 0.01)), Err(NliError::Config(_))));
    }

    #[test]
    fn matched_filter_noise_variance() {
        // white noise of PSD N0 comes out with variance N0/Es per complex symbol
        let cfg = link(8, 0.1);
        let n_sym = 100_000;
        let len = n_sym * cfg.osf;
        let dt = 1.0 / cfg.sample_rate();
        let n0 = 3e-17;
        let sample_var = n0 / dt;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut draw = || {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im) * (sample_var / 2.0).sqrt()
        };
        let x: Vec<Complex64> = (0..len).map(|_| draw()).collect();
        let y: Vec<Complex64> = (0..len).map(|_| draw()).collect();
        let w = DualPolWaveform {
            x_pol: x,
            y_pol: y,
            sample_rate: cfg.sample_rate(),
            osf: cfg.osf,
        };
        let s = matched_filter_and_sample(&w, &cfg).unwrap();
        let var = s.energy() / (2 * n_sym) as f64;
        let expect = n0 / cfg.es();
        assert!((var / expect - 1.0).abs() < 0.02, "{var} vs {expect}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn back_to_back_identity_and_parseval(
                roll_off in 0.005f64..=1.0,
                log_n in 8u32..=14,
                seed in any::<u64>(),
            ) {
                let c = Constellation::qam16_gray();
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let a = random_symbols(1 << log_n, &c, &mut rng);
                let cfg = link(4, roll_off);
                let w = modulate(&a, &cfg).unwrap();
                let r = matched_filter_and_sample(&w, &cfg).unwrap();
                let err = r.sub(&a).unwrap().energy().sqrt() / a.energy().sqrt();
                prop_assert!(err < 1e-9, "relative error {}", err);
                let rel = (w.energy() - cfg.es() * a.energy()).abs() / (cfg.es() * a.energy());
                prop_assert!(rel < 1e-9, "energy mismatch {}", rel);
            }
        }
    }
}
