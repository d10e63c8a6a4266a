//! Kernels from the perturbation integral.
//!
//! Linearizing the Manakov equation around the dispersed linear field and
//! projecting the first-order term onto the matched filter gives
//!
//! ```text
//! S_klm = ∫₀^L e^{−αz} ∫ g*(z,t) g*(z,t−kT) g(z,t−lT) g(z,t−mT) dt dz
//! ```
//!
//! with g(z,·) the unit-energy RRC pulse dispersed over z (spectrum times
//! exp(+j(β2/2)ω²z)). The t-integral is a Riemann sum on a periodic grid,
//! exact for the band-limited integrand; the z-integral uses composite
//! Simpson on uniform nodes.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{KernelMeta, KernelOrigin, KernelTensor};
use crate::config::LinkConfig;
use crate::error::{NliError, Result};
use crate::sigproc::rrc_spectrum;
use crate::spectral::{bin_freqs, bin_omegas, Spectral};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticOptions {
    /// Simpson nodes along z; must be odd. 465 gives 0.5 km spacing over 230 km.
    pub z_nodes: usize,
    /// Length of the periodic integration block in symbols; `None` picks
    /// [`default_block_symbols`].
    pub block_symbols: Option<usize>,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        AnalyticOptions {
            z_nodes: 465,
            block_symbols: None,
        }
    }
}

const Z_CHUNK: usize = 8;

/// Room for the kernel window, twice the dispersive spread of the pulse over
/// the whole span and a guard for the RRC tails.
pub fn default_block_symbols(cfg: &LinkConfig, memory: usize) -> usize {
    let fp = &cfg.fiber;
    let bandwidth = (1.0 + cfg.roll_off) * cfg.symbol_rate_hz;
    let spread_s = fp.beta2_si().abs() * 2.0 * std::f64::consts::PI * bandwidth * fp.length_km;
    let spread = (spread_s * cfg.symbol_rate_hz).ceil() as usize;
    (2 * memory + 1 + 2 * spread + 64).max(4 * memory + 32)
}

pub fn analytic_kernels(cfg: &LinkConfig, memory: usize, opts: &AnalyticOptions) -> Result<KernelTensor> {
    let fp = &cfg.fiber;
    if !(fp.length_km >= 0.0) || !fp.beta2.is_finite() || !(fp.alpha_db_per_km >= 0.0) {
        return Err(NliError::Config("fiber parameters must be finite, with L ≥ 0 and α ≥ 0".into()));
    }
    if opts.z_nodes < 3 || opts.z_nodes % 2 == 0 {
        return Err(NliError::Config(format!("Simpson rule needs an odd node count ≥ 3, got {}", opts.z_nodes)));
    }
    let block = opts.block_symbols.unwrap_or_else(|| default_block_symbols(cfg, memory));
    if block < 2 * memory + 1 {
        return Err(NliError::Config(format!("kernel block of {block} symbols cannot hold memory {memory}")));
    }
    let mut meta = KernelMeta::new(KernelOrigin::Analytic);
    meta.link_fingerprint = cfg.fingerprint();
    let mut kernel = KernelTensor::zeros(memory, meta);
    if fp.length_km == 0.0 {
        return Ok(kernel);
    }

    let osf = cfg.osf;
    let ns = block * osf;
    let dt = 1.0 / cfg.sample_rate();
    let h = rrc_spectrum(cfg.roll_off, cfg.symbol_rate_hz, &bin_freqs(ns, dt));
    let half_beta_omega2: Vec<f64> = bin_omegas(ns, dt).into_iter().map(|w| 0.5 * fp.beta2_si() * w * w).collect();
    let alpha = fp.alpha_lin();
    let nz = opts.z_nodes;
    let dz = fp.length_km / (nz - 1) as f64;
    let simpson = |q: usize| -> f64 {
        let c = if q == 0 || q == nz - 1 {
            1.0
        } else if q % 2 == 1 {
            4.0
        } else {
            2.0
        };
        c * dz / 3.0
    };

    let side = kernel.side();
    let ctx = PulseCtx {
        h: &h,
        half_beta_omega2: &half_beta_omega2,
        ns,
        dt,
        osf,
        memory,
    };
    let chunks: Vec<Vec<Complex64>> = (0..nz)
        .collect::<Vec<_>>()
        .par_chunks(Z_CHUNK)
        .map(|qs| {
            let mut acc = vec![Complex64::new(0.0, 0.0); side * side * side];
            let mut sp = Spectral::new(ns);
            for &q in qs {
                let z = q as f64 * dz;
                let weight = simpson(q) * (-alpha * z).exp();
                ctx.accumulate(z, weight, &mut sp, &mut acc);
            }
            acc
        })
        .collect();
    let values = kernel.values_mut();
    for chunk in &chunks {
        for (v, c) in values.iter_mut().zip(chunk) {
            *v += c;
        }
    }
    Ok(kernel)
}

struct PulseCtx<'a> {
    h: &'a [f64],
    half_beta_omega2: &'a [f64],
    ns: usize,
    dt: f64,
    osf: usize,
    memory: usize,
}

impl PulseCtx<'_> {
    /// Adds weight · ∫ g*g*gg dt at distance z to every kernel entry.
    fn accumulate(&self, z: f64, weight: f64, sp: &mut Spectral, acc: &mut [Complex64]) {
        let ns = self.ns;
        let mut g: Vec<Complex64> = self
            .h
            .iter()
            .zip(self.half_beta_omega2)
            .map(|(hk, k)| Complex64::from_polar(*hk, k * z))
            .collect();
        sp.inverse(&mut g);
        let inv_dt = 1.0 / self.dt;
        g.iter_mut().for_each(|v| *v *= inv_dt);

        // ext[ns + j] = g[j mod ns] for j ∈ [−ns, 2ns)
        let ext: Vec<Complex64> = (0..3 * ns).map(|j| g[j % ns]).collect();
        let shifted = |s: isize| -> &[Complex64] {
            let start = (ns as isize - s * self.osf as isize) as usize;
            &ext[start..start + ns]
        };
        let mm = self.memory as isize;
        let side = 2 * self.memory + 1;
        let scale = weight * self.dt;
        let mut prod = vec![Complex64::new(0.0, 0.0); ns];
        for (ki, k) in (-mm..=mm).enumerate() {
            let gk = shifted(k);
            for (li, l) in (-mm..=mm).enumerate() {
                let gl = shifted(l);
                for i in 0..ns {
                    prod[i] = g[i].conj() * gk[i].conj() * gl[i];
                }
                let row = &mut acc[(ki * side + li) * side..(ki * side + li + 1) * side];
                for (mi, m) in (-mm..=mm).enumerate() {
                    let gm = shifted(m);
                    let s: Complex64 = prod.iter().zip(gm).map(|(p, q)| p * q).sum();
                    row[mi] += s * scale;
                }
            }
        }
    }
}
