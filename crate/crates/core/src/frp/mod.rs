//! First-order regular perturbation model of the nonlinear interference.
//!
//! The NLI on the symbol at index n is
//!
//! ```text
//! Δa_n = j (8/9) γ Es Σ_{k,l,m ∈ [−M, M]} (a_{n+k}† a_{n+l}) a_{n+m} S_klm
//! ```
//!
//! where a_n are unit-energy dual-polarization symbols and S_klm the kernel
//! tensor. The model is linear in S, which the learning code relies on.

mod analytic;
mod io;

pub use analytic::{analytic_kernels, default_block_symbols, AnalyticOptions};
pub use io::{kernel_from_bytes, kernel_read, kernel_to_bytes, kernel_write};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{add_ase, MANAKOV};
use crate::error::{NliError, Result};
use crate::sigproc::DualPolSymbols;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelOrigin {
    Analytic,
    Nbgd,
}

impl KernelOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelOrigin::Analytic => "analytic",
            KernelOrigin::Nbgd => "nbgd",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelMeta {
    pub origin: KernelOrigin,
    pub trained_power_dbm: Option<f64>,
    pub link_fingerprint: [u8; 32],
}

impl KernelMeta {
    pub fn new(origin: KernelOrigin) -> Self {
        KernelMeta {
            origin,
            trained_power_dbm: None,
            link_fingerprint: [0; 32],
        }
    }
}

/// Complex coefficients S_klm on the cube [−M, M]³, stored k-major, then l, then m.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelTensor {
    memory: usize,
    values: Vec<Complex64>,
    pub meta: KernelMeta,
}

impl KernelTensor {
    pub fn zeros(memory: usize, meta: KernelMeta) -> Self {
        let side = 2 * memory + 1;
        KernelTensor {
            memory,
            values: vec![Complex64::new(0.0, 0.0); side * side * side],
            meta,
        }
    }

    pub fn from_values(memory: usize, values: Vec<Complex64>, meta: KernelMeta) -> Result<Self> {
        let side = 2 * memory + 1;
        if values.len() != side * side * side {
            return Err(NliError::InputShape(format!(
                "memory {memory} needs {} kernel entries, got {}",
                side * side * side,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(NliError::Input("kernel entries must be finite".into()));
        }
        Ok(KernelTensor { memory, values, meta })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// 2M + 1
    pub fn side(&self) -> usize {
        2 * self.memory + 1
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Flat offset of S_klm for k, l, m ∈ [−M, M].
    pub fn offset(&self, k: isize, l: isize, m: isize) -> usize {
        let mm = self.memory as isize;
        assert!(
            [k, l, m].iter().all(|i| (-mm..=mm).contains(i)),
            "kernel index ({k},{l},{m}) outside memory {mm}"
        );
        let s = self.side();
        let (k, l, m) = ((k + mm) as usize, (l + mm) as usize, (m + mm) as usize);
        (k * s + l) * s + m
    }

    pub fn get(&self, k: isize, l: isize, m: isize) -> Complex64 {
        self.values[self.offset(k, l, m)]
    }

    pub fn set(&mut self, k: isize, l: isize, m: isize, v: Complex64) {
        let o = self.offset(k, l, m);
        self.values[o] = v;
    }

    /// Largest |S_klm − S_kml| relative to max |S|.
    pub fn symmetry_defect(&self) -> f64 {
        let mm = self.memory as isize;
        let scale = self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for k in -mm..=mm {
            for l in -mm..=mm {
                for m in l + 1..=mm {
                    worst = worst.max((self.get(k, l, m) - self.get(k, m, l)).norm());
                }
            }
        }
        worst / scale
    }

    /// max |S| over the shell max(|k|,|l|,|m|) = r, for r = 0..=M.
    pub fn shell_maxima(&self) -> Vec<f64> {
        let mm = self.memory as isize;
        let mut out = vec![0.0f64; self.memory + 1];
        for k in -mm..=mm {
            for l in -mm..=mm {
                for m in -mm..=mm {
                    let r = k.abs().max(l.abs()).max(m.abs()) as usize;
                    out[r] = out[r].max(self.get(k, l, m).norm());
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Indexing {
    /// Wrap around the block (periodic signal model).
    Circular,
    /// The window must lie inside the sequence.
    Linear,
}

/// j (8/9) γ Es
pub fn nli_prefactor(gamma: f64, es: f64) -> Complex64 {
    Complex64::new(0.0, MANAKOV * gamma * es)
}

/// Σ_klm (w_k† w_l) w_m S_klm for a window of length 2M+1, without the prefactor.
#[inline]
pub(crate) fn triple_sum(wx: &[Complex64], wy: &[Complex64], values: &[Complex64]) -> [Complex64; 2] {
    let w = wx.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut acc = [zero; 2];
    for k in 0..w {
        let (ckx, cky) = (wx[k].conj(), wy[k].conj());
        for l in 0..w {
            let b = ckx * wx[l] + cky * wy[l];
            let row = &values[(k * w + l) * w..(k * w + l + 1) * w];
            let (mut vx, mut vy) = (zero, zero);
            for m in 0..w {
                vx += row[m] * wx[m];
                vy += row[m] * wy[m];
            }
            acc[0] += b * vx;
            acc[1] += b * vy;
        }
    }
    acc
}

/// Copies a_{n−M..=n+M} into the buffers.
pub(crate) fn gather_window(
    a: &DualPolSymbols,
    n: usize,
    memory: usize,
    indexing: Indexing,
    wx: &mut Vec<Complex64>,
    wy: &mut Vec<Complex64>,
) -> Result<()> {
    let len = a.len();
    wx.clear();
    wy.clear();
    match indexing {
        Indexing::Linear => {
            if n < memory || n + memory >= len {
                return Err(NliError::Index { index: n, memory, len });
            }
            wx.extend_from_slice(&a.x_pol[n - memory..=n + memory]);
            wy.extend_from_slice(&a.y_pol[n - memory..=n + memory]);
        }
        Indexing::Circular => {
            if n >= len {
                return Err(NliError::Index { index: n, memory, len });
            }
            let m = memory as isize;
            for off in -m..=m {
                let i = (n as isize + off).rem_euclid(len as isize) as usize;
                wx.push(a.x_pol[i]);
                wy.push(a.y_pol[i]);
            }
        }
    }
    Ok(())
}

/// Δa at index `n0`.
pub fn frp_nli(
    a: &DualPolSymbols,
    kernel: &KernelTensor,
    gamma: f64,
    es: f64,
    n0: usize,
    indexing: Indexing,
) -> Result<[Complex64; 2]> {
    let mut wx = Vec::with_capacity(kernel.side());
    let mut wy = Vec::with_capacity(kernel.side());
    gather_window(a, n0, kernel.memory, indexing, &mut wx, &mut wy)?;
    let c = nli_prefactor(gamma, es);
    let s = triple_sum(&wx, &wy, &kernel.values);
    Ok([c * s[0], c * s[1]])
}

/// Δa for every index of a periodic block.
pub fn frp_nli_sequence(a: &DualPolSymbols, kernel: &KernelTensor, gamma: f64, es: f64) -> Result<DualPolSymbols> {
    if a.is_empty() {
        return Err(NliError::InputShape("empty symbol sequence".into()));
    }
    let out: Vec<[Complex64; 2]> = (0..a.len())
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(kernel.side()), Vec::with_capacity(kernel.side())),
            |(wx, wy), n| frp_nli_buffered(a, kernel, gamma, es, n, wx, wy),
        )
        .collect();
    Ok(DualPolSymbols {
        x_pol: out.iter().map(|v| v[0]).collect(),
        y_pol: out.iter().map(|v| v[1]).collect(),
    })
}

fn frp_nli_buffered(
    a: &DualPolSymbols,
    kernel: &KernelTensor,
    gamma: f64,
    es: f64,
    n: usize,
    wx: &mut Vec<Complex64>,
    wy: &mut Vec<Complex64>,
) -> [Complex64; 2] {
    gather_window(a, n, kernel.memory, Indexing::Circular, wx, wy).expect("index within block");
    let c = nli_prefactor(gamma, es);
    let s = triple_sum(wx, wy, &kernel.values);
    [c * s[0], c * s[1]]
}

/// y = a + Δa(a) + n: a fast model-based stand-in for the fiber channel.
pub fn surrogate_channel<R: Rng + ?Sized>(
    a: &DualPolSymbols,
    kernel: &KernelTensor,
    gamma: f64,
    es: f64,
    sigma_n_sq: f64,
    rng: &mut R,
) -> Result<DualPolSymbols> {
    let nli = frp_nli_sequence(a, kernel, gamma, es)?;
    add_ase(&a.add(&nli)?, sigma_n_sq, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::{random_symbols, Constellation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_kernel(memory: usize, rng: &mut ChaCha20Rng) -> KernelTensor {
        let side = 2 * memory + 1;
        let values = (0..side * side * side)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        KernelTensor::from_values(memory, values, KernelMeta::new(KernelOrigin::Nbgd)).unwrap()
    }

    fn random_complex_symbols(n: usize, rng: &mut ChaCha20Rng) -> DualPolSymbols {
        let mut d = || Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let x = (0..n).map(|_| d()).collect();
        let y = (0..n).map(|_| d()).collect();
        DualPolSymbols::new(x, y).unwrap()
    }

    /// Literal three-nested-loop evaluation with circular indices.
    fn naive(a: &DualPolSymbols, k: &KernelTensor, gamma: f64, es: f64, n0: usize) -> [Complex64; 2] {
        let m = k.memory() as isize;
        let len = a.len() as isize;
        let idx = |o: isize| (n0 as isize + o).rem_euclid(len) as usize;
        let mut out = [Complex64::new(0.0, 0.0); 2];
        for kk in -m..=m {
            for ll in -m..=m {
                for mm in -m..=m {
                    let ak = a.get(idx(kk));
                    let al = a.get(idx(ll));
                    let am = a.get(idx(mm));
                    let inner = ak[0].conj() * al[0] + ak[1].conj() * al[1];
                    let s = k.get(kk, ll, mm);
                    out[0] += inner * am[0] * s;
                    out[1] += inner * am[1] * s;
                }
            }
        }
        let c = Complex64::new(0.0, 8.0 / 9.0 * gamma * es);
        [c * out[0], c * out[1]]
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = random_complex_symbols(20, &mut rng);
        let k = KernelTensor::zeros(3, KernelMeta::new(KernelOrigin::Analytic));
        let d = frp_nli(&a, &k, 1.2, 1e-13, 5, Indexing::Circular).unwrap();
        assert_eq!(d, [Complex64::new(0.0, 0.0); 2]);
    }

    #[test]
    fn single_center_tap() {
        let a = DualPolSymbols::new(vec![Complex64::new(0.3, -0.7)], vec![Complex64::new(-1.1, 0.2)]).unwrap();
        let s = Complex64::new(2.0, 0.5);
        let mut k = KernelTensor::zeros(0, KernelMeta::new(KernelOrigin::Nbgd));
        k.set(0, 0, 0, s);
        let (gamma, es) = (1.2, 3e-13);
        let d = frp_nli(&a, &k, gamma, es, 0, Indexing::Circular).unwrap();
        let norm2 = a.energy();
        let c = Complex64::new(0.0, 8.0 / 9.0 * gamma * es) * norm2 * s;
        assert!((d[0] - c * a.x_pol[0]).norm() < 1e-25);
        assert!((d[1] - c * a.y_pol[0]).norm() < 1e-25);
    }

    #[test]
    fn matches_naive_triple_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for memory in 0..=3 {
            for n in [1usize, 7, 64] {
                let a = random_complex_symbols(n, &mut rng);
                let k = random_kernel(memory, &mut rng);
                for n0 in 0..n {
                    let fast = frp_nli(&a, &k, 1.0, 1.0, n0, Indexing::Circular).unwrap();
                    let slow = naive(&a, &k, 1.0, 1.0, n0);
                    let scale = slow[0].norm().max(slow[1].norm()).max(1.0);
                    assert!((fast[0] - slow[0]).norm() < 1e-12 * scale);
                    assert!((fast[1] - slow[1]).norm() < 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn linear_in_es() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = random_complex_symbols(16, &mut rng);
        let k = random_kernel(2, &mut rng);
        let d1 = frp_nli(&a, &k, 1.2, 1e-13, 4, Indexing::Circular).unwrap();
        let d2 = frp_nli(&a, &k, 1.2, 2e-13, 4, Indexing::Circular).unwrap();
        assert_eq!(d2[0], d1[0] * 2.0);
        assert_eq!(d2[1], d1[1] * 2.0);
    }

    #[test]
    fn linear_indexing_checks_window() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let a = random_complex_symbols(10, &mut rng);
        let k = random_kernel(2, &mut rng);
        assert!(matches!(frp_nli(&a, &k, 1.0, 1.0, 1, Indexing::Linear), Err(NliError::Index { .. })));
        assert!(matches!(frp_nli(&a, &k, 1.0, 1.0, 8, Indexing::Linear), Err(NliError::Index { .. })));
        let lin = frp_nli(&a, &k, 1.0, 1.0, 5, Indexing::Linear).unwrap();
        let circ = frp_nli(&a, &k, 1.0, 1.0, 5, Indexing::Circular).unwrap();
        assert_eq!(lin, circ);
    }

    #[test]
    fn sequence_matches_pointwise_and_constant_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let a = random_complex_symbols(33, &mut rng);
        let k = random_kernel(2, &mut rng);
        let seq = frp_nli_sequence(&a, &k, 1.2, 0.1).unwrap();
        for n in 0..a.len() {
            let p = frp_nli(&a, &k, 1.2, 0.1, n, Indexing::Circular).unwrap();
            assert_eq!(seq.get(n), p);
        }
        let c = DualPolSymbols::new(vec![Complex64::new(0.5, 0.1); 12], vec![Complex64::new(-0.2, 0.9); 12]).unwrap();
        let mut delta = KernelTensor::zeros(2, KernelMeta::new(KernelOrigin::Nbgd));
        delta.set(0, 0, 0, Complex64::new(1.0, 0.0));
        let out = frp_nli_sequence(&c, &delta, 1.0, 1.0).unwrap();
        assert!(out.x_pol.iter().all(|v| *v == out.x_pol[0]));
        assert!(out.y_pol.iter().all(|v| *v == out.y_pol[0]));
    }

    #[test]
    fn shift_equivariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let a = random_complex_symbols(40, &mut rng);
        let k = random_kernel(3, &mut rng);
        let shift = |s: &DualPolSymbols, by: usize| {
            let mut x = s.x_pol.clone();
            let mut y = s.y_pol.clone();
            x.rotate_right(by);
            y.rotate_right(by);
            DualPolSymbols::new(x, y).unwrap()
        };
        let lhs = frp_nli_sequence(&shift(&a, 7), &k, 1.0, 1.0).unwrap();
        let rhs = shift(&frp_nli_sequence(&a, &k, 1.0, 1.0).unwrap(), 7);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn phase_and_polarization_covariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let a = random_symbols(30, &Constellation::qam16_gray(), &mut rng);
        let k = random_kernel(2, &mut rng);
        let base = frp_nli_sequence(&a, &k, 1.0, 1.0).unwrap();
        let rot = Complex64::from_polar(1.0, 0.83);
        let ar = a.zip_map(&a, |v, _| v * rot).unwrap();
        let dr = frp_nli_sequence(&ar, &k, 1.0, 1.0).unwrap();
        for n in 0..a.len() {
            assert!((dr.x_pol[n] - base.x_pol[n] * rot).norm() < 1e-12);
            assert!((dr.y_pol[n] - base.y_pol[n] * rot).norm() < 1e-12);
        }
        let swapped = DualPolSymbols::new(a.y_pol.clone(), a.x_pol.clone()).unwrap();
        let ds = frp_nli_sequence(&swapped, &k, 1.0, 1.0).unwrap();
        assert_eq!(ds.x_pol, base.y_pol);
        assert_eq!(ds.y_pol, base.x_pol);
    }

    #[test]
    fn surrogate_channel_contracts() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let a = random_symbols(50, &Constellation::qam16_gray(), &mut rng);
        let zero = KernelTensor::zeros(2, KernelMeta::new(KernelOrigin::Nbgd));
        assert_eq!(surrogate_channel(&a, &zero, 1.2, 1e-13, 0.0, &mut rng).unwrap(), a);
        let k = random_kernel(2, &mut rng);
        let y = surrogate_channel(&a, &k, 1.2, 1e-3, 0.0, &mut rng).unwrap();
        let nli = frp_nli_sequence(&a, &k, 1.2, 1e-3).unwrap();
        assert_eq!(y, a.add(&nli).unwrap());
    }

    #[test]
    fn from_values_validates() {
        let meta = KernelMeta::new(KernelOrigin::Nbgd);
        assert!(KernelTensor::from_values(1, vec![Complex64::new(0.0, 0.0); 26], meta.clone()).is_err());
        let mut v = vec![Complex64::new(0.0, 0.0); 27];
        v[3] = Complex64::new(f64::NAN, 0.0);
        assert!(KernelTensor::from_values(1, v, meta).is_err());
    }
}
