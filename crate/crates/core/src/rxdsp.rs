//! Receiver-side processing after the linear DSP chain: genie cancellation,
//! effective SNR, Gaussian soft demapping and GMI.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NliError, Result};
use crate::frp::{frp_nli_sequence, KernelTensor};
use crate::sigproc::{Constellation, DualPolSymbols, BITS_PER_2D};
use crate::units::lin_to_db;

pub const SNR_CAP_DB: f64 = 200.0;
pub const LLR_CLAMP: f64 = 50.0;

/// ỹ = y − Δa(a): the NLI is predicted from the transmitted symbols.
///
/// A zero kernel gives the conventional receiver.
pub fn genie_cancel(
    y: &DualPolSymbols,
    a: &DualPolSymbols,
    kernel: &KernelTensor,
    gamma: f64,
    es: f64,
) -> Result<DualPolSymbols> {
    if y.len() != a.len() {
        return Err(NliError::InputShape(format!("received {} symbols, transmitted {}", y.len(), a.len())));
    }
    if kernel.values().iter().all(|v| v.re == 0.0 && v.im == 0.0) {
        return Ok(y.clone());
    }
    y.sub(&frp_nli_sequence(a, kernel, gamma, es)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSnr {
    pub x_db: f64,
    pub y_db: f64,
    pub combined_db: f64,
}

/// Signal and distortion energies after fitting a complex gain per polarization.
fn fitted_powers(y: &[Complex64], a: &[Complex64]) -> (f64, f64) {
    let ea: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let corr: Complex64 = y.iter().zip(a).map(|(y, a)| y * a.conj()).sum();
    let h = corr / ea;
    let noise: f64 = y.iter().zip(a).map(|(y, a)| (y - h * a).norm_sqr()).sum();
    (h.norm_sqr() * ea, noise)
}

fn capped_db(signal: f64, noise: f64) -> f64 {
    if noise <= 0.0 {
        SNR_CAP_DB
    } else {
        lin_to_db(signal / noise).min(SNR_CAP_DB)
    }
}

/// Per-polarization and combined effective SNR in dB, with ĥ = Σ y a* / Σ |a|².
pub fn effective_snr(ytilde: &DualPolSymbols, a: &DualPolSymbols) -> Result<EffectiveSnr> {
    if ytilde.len() != a.len() {
        return Err(NliError::InputShape(format!("{} received vs {} reference symbols", ytilde.len(), a.len())));
    }
    if a.x_pol.iter().all(|v| v.norm_sqr() == 0.0) || a.y_pol.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(NliError::Input("reference symbols have zero energy".into()));
    }
    let (sx, nx) = fitted_powers(&ytilde.x_pol, &a.x_pol);
    let (sy, ny) = fitted_powers(&ytilde.y_pol, &a.y_pol);
    Ok(EffectiveSnr {
        x_db: capped_db(sx, nx),
        y_db: capped_db(sy, ny),
        combined_db: capped_db(sx + sy, nx + ny),
    })
}

/// Genie-estimated Gaussian model of one polarization.
#[derive(Clone, Debug, PartialEq)]
pub struct PolStats {
    /// Conditional mean (re, im) per constellation point.
    pub means: Vec<[f64; 2]>,
    /// Pooled residual covariance, regularized.
    pub cov: [[f64; 2]; 2],
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenieStats {
    pub pols: [PolStats; 2],
}

fn pol_stats(y: &[Complex64], a: &[Complex64], c: &Constellation) -> PolStats {
    let np = c.len();
    let idx: Vec<usize> = a.iter().map(|v| c.nearest(*v)).collect();
    let mut sums = vec![[0.0f64; 2]; np];
    let mut counts = vec![0usize; np];
    for (v, &i) in y.iter().zip(&idx) {
        sums[i][0] += v.re;
        sums[i][1] += v.im;
        counts[i] += 1;
    }
    let means: Vec<[f64; 2]> = (0..np)
        .map(|i| {
            if counts[i] >= 2 {
                [sums[i][0] / counts[i] as f64, sums[i][1] / counts[i] as f64]
            } else {
                let p = c.points()[i];
                [p.re, p.im]
            }
        })
        .collect();
    let mut cov = [[0.0f64; 2]; 2];
    for (v, &i) in y.iter().zip(&idx) {
        let r = [v.re - means[i][0], v.im - means[i][1]];
        cov[0][0] += r[0] * r[0];
        cov[0][1] += r[0] * r[1];
        cov[1][1] += r[1] * r[1];
    }
    let n = y.len().max(1) as f64;
    cov[0][0] /= n;
    cov[0][1] /= n;
    cov[1][1] /= n;
    cov[1][0] = cov[0][1];
    let eps = 1e-12 * (cov[0][0] + cov[1][1]) + 1e-30;
    cov[0][0] += eps;
    cov[1][1] += eps;
    PolStats { means, cov, counts }
}

/// Per-point means and one pooled covariance per polarization, using the transmitted symbols.
///
/// Points seen fewer than twice keep their ideal position as mean.
pub fn estimate_genie_stats(ytilde: &DualPolSymbols, a: &DualPolSymbols, c: &Constellation) -> Result<GenieStats> {
    if ytilde.len() != a.len() {
        return Err(NliError::InputShape(format!("{} received vs {} transmitted symbols", ytilde.len(), a.len())));
    }
    Ok(GenieStats {
        pols: [
            pol_stats(&ytilde.x_pol, &a.x_pol, c),
            pol_stats(&ytilde.y_pol, &a.y_pol, c),
        ],
    })
}

/// LLRs laid out as symbol-major, then polarization (x, y), then bit position.
///
/// Λ = ln P(y | b = 0) − ln P(y | b = 1).
#[derive(Clone, Debug, PartialEq)]
pub struct LlrBlock {
    pub llrs: Vec<f64>,
    pub n_symbols: usize,
}

impl LlrBlock {
    pub fn len(&self) -> usize {
        self.llrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.llrs.is_empty()
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn inverse_2x2(c: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if !(c[0][0] > 0.0 && det > 0.0) || !det.is_finite() {
        return Err(NliError::Numerical(format!("covariance is not positive definite: {c:?}")));
    }
    Ok([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]])
}

/// Exact bivariate-Gaussian bit LLRs (log-sum-exp over the points), clamped to ±50.
pub fn gaussian_llrs(ytilde: &DualPolSymbols, stats: &GenieStats, c: &Constellation) -> Result<LlrBlock> {
    let m = c.bits_per_symbol();
    let inv = [inverse_2x2(&stats.pols[0].cov)?, inverse_2x2(&stats.pols[1].cov)?];
    let mut llrs = Vec::with_capacity(ytilde.len() * 2 * m);
    let mut metric = vec![0.0f64; c.len()];
    let mut zero = Vec::with_capacity(c.len());
    let mut one = Vec::with_capacity(c.len());
    for n in 0..ytilde.len() {
        for (p, v) in ytilde.get(n).into_iter().enumerate() {
            let st = &stats.pols[p];
            let ic = &inv[p];
            for (i, mu) in st.means.iter().enumerate() {
                let d = [v.re - mu[0], v.im - mu[1]];
                let q = d[0] * (ic[0][0] * d[0] + ic[0][1] * d[1]) + d[1] * (ic[1][0] * d[0] + ic[1][1] * d[1]);
                metric[i] = -0.5 * q;
            }
            for bit in 0..m {
                zero.clear();
                one.clear();
                for (i, &mt) in metric.iter().enumerate() {
                    if c.bit(i, bit) == 0 {
                        zero.push(mt);
                    } else {
                        one.push(mt);
                    }
                }
                let l = log_sum_exp(&zero) - log_sum_exp(&one);
                llrs.push(if l.is_nan() { 0.0 } else { l.clamp(-LLR_CLAMP, LLR_CLAMP) });
            }
        }
    }
    Ok(LlrBlock {
        llrs,
        n_symbols: ytilde.len(),
    })
}

/// log2(1 + e^x) without overflow.
fn log2_1p_exp(x: f64) -> f64 {
    (x.max(0.0) + (-x.abs()).exp().ln_1p()) / std::f64::consts::LN_2
}

pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 64 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Generalized mutual information in bit per 2D symbol.
pub fn gmi(llrs: &LlrBlock, tx_bits: &[u8]) -> Result<f64> {
    if llrs.len() != tx_bits.len() || llrs.len() != llrs.n_symbols * 2 * BITS_PER_2D {
        return Err(NliError::InputShape(format!(
            "{} LLRs for {} symbols vs {} transmitted bits",
            llrs.len(),
            llrs.n_symbols,
            tx_bits.len()
        )));
    }
    if llrs.is_empty() {
        return Err(NliError::InputShape("empty LLR block".into()));
    }
    let penalties: Vec<f64> = llrs
        .llrs
        .iter()
        .zip(tx_bits)
        .map(|(&l, &b)| if b == 0 { log2_1p_exp(-l) } else { log2_1p_exp(l) })
        .collect();
    let n2d = (2 * llrs.n_symbols) as f64;
    Ok(BITS_PER_2D as f64 - pairwise_sum(&penalties) / n2d)
}
