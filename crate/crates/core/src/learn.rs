//! Data-driven kernel identification.
//!
//! The NLI model is linear in the kernel. Writing θ = (8/9)γEs·S and
//! b_klm = j (a_k†a_l) a_m, a sample's prediction is Σ θ_klm b_klm, and for the
//! mean squared residual Q(θ) = (1/N) Σ ‖t − Σ θ b‖² the gradient with respect
//! to (Re θ, Im θ), packed as one complex number per entry, is
//!
//! ```text
//! ∂Q/∂Re θ + j ∂Q/∂Im θ = (2j/N) Σ_n conj(a_k†a_l) (a_m†r_n)
//! ```
//!
//! The training loss is the RMS value L = √Q, whose gradient is ∇Q / (2L).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{cdc, propagate_ssfm, StepPolicy, MANAKOV};
use crate::config::LinkConfig;
use crate::error::{NliError, Result};
use crate::frp::{
    analytic_kernels, gather_window, kernel_read, triple_sum, AnalyticOptions, Indexing, KernelMeta, KernelOrigin,
    KernelTensor,
};
use crate::sigproc::{matched_filter_and_sample, modulate, random_symbols, Constellation, DualPolSymbols};

const CHUNK: usize = 256;
const NMSE_FLOOR_DB: f64 = -150.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub link: LinkConfig,
    pub power_dbm: f64,
    pub seeds: Vec<u64>,
    /// Number of samples contributed by each batch, in storage order.
    pub batch_sizes: Vec<usize>,
}

impl Provenance {
    pub fn link_hash(&self) -> [u8; 32] {
        self.link.fingerprint()
    }
}

/// (window, target) pairs with windows of 2M+1 dual-polarization symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    memory: usize,
    // per sample: x-pol window then y-pol window
    windows: Vec<Complex64>,
    targets: Vec<[Complex64; 2]>,
    pub provenance: Provenance,
}

impl TrainingSet {
    /// Collects every index of each periodic block. `targets[i]` is y − a for block `i`.
    pub fn from_blocks(memory: usize, blocks: &[(DualPolSymbols, DualPolSymbols)], mut provenance: Provenance) -> Result<Self> {
        let side = 2 * memory + 1;
        let mut windows = Vec::new();
        let mut targets = Vec::new();
        let (mut wx, mut wy) = (Vec::with_capacity(side), Vec::with_capacity(side));
        provenance.batch_sizes.clear();
        for (a, t) in blocks {
            if a.len() != t.len() {
                return Err(NliError::InputShape(format!("block of {} symbols with {} targets", a.len(), t.len())));
            }
            if a.len() < side {
                return Err(NliError::Input(format!("block of {} symbols is shorter than the window {side}", a.len())));
            }
            for n in 0..a.len() {
                gather_window(a, n, memory, Indexing::Circular, &mut wx, &mut wy)?;
                windows.extend_from_slice(&wx);
                windows.extend_from_slice(&wy);
                let tn = t.get(n);
                if !(tn[0].re.is_finite() && tn[0].im.is_finite() && tn[1].re.is_finite() && tn[1].im.is_finite()) {
                    return Err(NliError::Numerical(format!("non-finite target at index {n}")));
                }
                targets.push(tn);
            }
            provenance.batch_sizes.push(a.len());
        }
        Ok(TrainingSet {
            memory,
            windows,
            targets,
            provenance,
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn side(&self) -> usize {
        2 * self.memory + 1
    }

    /// (x-pol window, y-pol window, target) of sample `i`.
    pub fn sample(&self, i: usize) -> (&[Complex64], &[Complex64], [Complex64; 2]) {
        let w = self.side();
        let s = &self.windows[2 * w * i..2 * w * (i + 1)];
        (&s[..w], &s[w..], self.targets[i])
    }

    pub fn target_energy(&self) -> f64 {
        self.targets.iter().map(|t| t[0].norm_sqr() + t[1].norm_sqr()).sum()
    }

    fn subset(&self, batches: std::ops::Range<usize>) -> TrainingSet {
        let start: usize = self.provenance.batch_sizes[..batches.start].iter().sum();
        let count: usize = self.provenance.batch_sizes[batches.clone()].iter().sum();
        let w2 = 2 * self.side();
        let seeds = if self.provenance.seeds.len() == self.provenance.batch_sizes.len() {
            self.provenance.seeds[batches.clone()].to_vec()
        } else {
            self.provenance.seeds.clone()
        };
        TrainingSet {
            memory: self.memory,
            windows: self.windows[start * w2..(start + count) * w2].to_vec(),
            targets: self.targets[start..start + count].to_vec(),
            provenance: Provenance {
                seeds,
                batch_sizes: self.provenance.batch_sizes[batches].to_vec(),
                ..self.provenance.clone()
            },
        }
    }

    /// Splits by whole batches: the first ⌈f·B⌉ batches train, the rest validate.
    pub fn split_by_batch(&self, train_fraction: f64) -> Result<(TrainingSet, TrainingSet)> {
        let nb = self.provenance.batch_sizes.len();
        if nb < 2 {
            return Err(NliError::Input(format!("need at least two batches to split, have {nb}")));
        }
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(NliError::Input(format!("train fraction must lie in (0, 1), got {train_fraction}")));
        }
        let n_train = ((train_fraction * nb as f64).round() as usize).clamp(1, nb - 1);
        Ok((self.subset(0..n_train), self.subset(n_train..nb)))
    }
}

/// Noiseless fiber targets y − a on independent periodic blocks.
///
/// Each batch draws its own seed from `rng`; the seeds are kept in the provenance.
pub fn build_training_set<R: Rng + ?Sized>(
    cfg: &LinkConfig,
    step: &StepPolicy,
    n_symbols: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<TrainingSet> {
    cfg.validate()?;
    let side = 2 * cfg.memory + 1;
    if n_symbols < side {
        return Err(NliError::Input(format!("{n_symbols} symbols per batch is fewer than the window {side}")));
    }
    if n_batches == 0 {
        return Err(NliError::Input("need at least one batch".into()));
    }
    let seeds: Vec<u64> = (0..n_batches).map(|_| rng.random()).collect();
    let qam = Constellation::qam16_gray();
    let blocks = seeds
        .par_iter()
        .map(|&seed| {
            let mut brng = ChaCha20Rng::seed_from_u64(seed);
            let a = random_symbols(n_symbols, &qam, &mut brng);
            let rx = fiber_symbols(&a, cfg, step)?;
            let t = rx.sub(&a)?;
            Ok((a, t))
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::from_blocks(
        cfg.memory,
        &blocks,
        Provenance {
            link: cfg.clone(),
            power_dbm: cfg.power_dbm,
            seeds,
            batch_sizes: Vec::new(),
        },
    )
}

/// Noiseless fiber: modulate, propagate, compensate dispersion, matched filter.
pub fn fiber_symbols(a: &DualPolSymbols, cfg: &LinkConfig, step: &StepPolicy) -> Result<DualPolSymbols> {
    let w = modulate(a, cfg)?;
    let p = propagate_ssfm(&w, &cfg.fiber, step)?;
    let c = cdc(&p, cfg.fiber.beta2, cfg.fiber.length_km);
    matched_filter_and_sample(&c, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelInit {
    Zeros,
    Analytic,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NbgdConfig {
    /// Step length in normalized kernel units θ = (8/9)γEs·S.
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` for full-batch descent, otherwise fixed consecutive mini-batches.
    pub batch_size: Option<usize>,
    pub init: KernelInit,
    /// Tikhonov weight for the least-squares oracle, in θ units.
    pub ridge: f64,
    /// Stop when an accepted step changes the loss by less than this fraction.
    pub tol: f64,
    /// Floor on the gradient norm used for normalization.
    pub eps: f64,
}

impl Default for NbgdConfig {
    fn default() -> Self {
        NbgdConfig {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: None,
            init: KernelInit::Analytic,
            ridge: 0.0,
            tol: 1e-10,
            eps: 1e-12,
        }
    }
}

impl NbgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NliError::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(NliError::Config("epochs must be ≥ 1".into()));
        }
        if !(self.eps > 0.0) {
            return Err(NliError::Config("eps must be > 0".into()));
        }
        if self.batch_size == Some(0) {
            return Err(NliError::Config("batch size must be ≥ 1".into()));
        }
        if !(self.ridge >= 0.0) || !(self.tol >= 0.0) {
            return Err(NliError::Config("ridge and tol must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NbgdOutcome {
    pub kernel: KernelTensor,
    pub best_loss: f64,
    pub initial_loss: f64,
    /// Best loss recorded after each epoch.
    pub history: Vec<f64>,
    pub final_learning_rate: f64,
}

fn scale(gamma: f64, es: f64) -> Result<f64> {
    let c = MANAKOV * gamma * es;
    if c == 0.0 || !c.is_finite() {
        return Err(NliError::Input(format!("(8/9)γEs = {c} cannot be inverted")));
    }
    Ok(c)
}

/// Σ‖r‖² and, when requested, Σ conj(B_kl) D_m over samples `range`.
fn residual_pass(ts: &TrainingSet, theta: &[Complex64], range: std::ops::Range<usize>, want_grad: bool) -> (f64, Vec<Complex64>) {
    let w = ts.side();
    let p = theta.len();
    let j = Complex64::new(0.0, 1.0);
    let chunks: Vec<std::ops::Range<usize>> = (range.start..range.end)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(range.end))
        .collect();
    let partial: Vec<(f64, Vec<Complex64>)> = chunks
        .into_par_iter()
        .map(|chunk| {
            let mut q = 0.0;
            let mut g = if want_grad { vec![Complex64::new(0.0, 0.0); p] } else { Vec::new() };
            let mut d = vec![Complex64::new(0.0, 0.0); w];
            for i in chunk {
                let (wx, wy, t) = ts.sample(i);
                let pred = triple_sum(wx, wy, theta);
                let r = [t[0] - j * pred[0], t[1] - j * pred[1]];
                q += r[0].norm_sqr() + r[1].norm_sqr();
                if want_grad {
                    for m in 0..w {
                        d[m] = wx[m].conj() * r[0] + wy[m].conj() * r[1];
                    }
                    for k in 0..w {
                        for l in 0..w {
                            let cb = wx[k] * wx[l].conj() + wy[k] * wy[l].conj();
                            let row = &mut g[(k * w + l) * w..(k * w + l + 1) * w];
                            for (gm, dm) in row.iter_mut().zip(&d) {
                                *gm += cb * dm;
                            }
                        }
                    }
                }
            }
            (q, g)
        })
        .collect();
    let mut q = 0.0;
    let mut g = if want_grad { vec![Complex64::new(0.0, 0.0); p] } else { Vec::new() };
    for (pq, pg) in partial {
        q += pq;
        for (a, b) in g.iter_mut().zip(pg) {
            *a += b;
        }
    }
    (q, g)
}

/// RMS loss and its gradient in θ units over `range`.
fn loss_grad_theta(ts: &TrainingSet, theta: &[Complex64], range: std::ops::Range<usize>) -> (f64, Vec<Complex64>) {
    let n = range.len() as f64;
    let (q, mut g) = residual_pass(ts, theta, range, true);
    let loss = (q / n).sqrt();
    let f = if loss > 0.0 { Complex64::new(0.0, 1.0 / (n * loss)) } else { Complex64::new(0.0, 0.0) };
    g.iter_mut().for_each(|v| *v *= f);
    (loss, g)
}

fn loss_theta(ts: &TrainingSet, theta: &[Complex64]) -> f64 {
    let (q, _) = residual_pass(ts, theta, 0..ts.len(), false);
    (q / ts.len() as f64).sqrt()
}

fn check_kernel(ts: &TrainingSet, k: &KernelTensor) -> Result<()> {
    if ts.is_empty() {
        return Err(NliError::Input("empty training set".into()));
    }
    if k.memory() != ts.memory() {
        return Err(NliError::InputShape(format!("kernel memory {} vs training memory {}", k.memory(), ts.memory())));
    }
    Ok(())
}

/// RMS loss L(S) and ∂L/∂Re S + j ∂L/∂Im S for every kernel entry.
pub fn loss_and_gradient(ts: &TrainingSet, k: &KernelTensor, gamma: f64, es: f64) -> Result<(f64, Vec<Complex64>)> {
    check_kernel(ts, k)?;
    let c = scale(gamma, es)?;
    let theta: Vec<Complex64> = k.values().iter().map(|v| v * c).collect();
    let (loss, mut g) = loss_grad_theta(ts, &theta, 0..ts.len());
    g.iter_mut().for_each(|v| *v *= c);
    Ok((loss, g))
}

pub fn training_loss(ts: &TrainingSet, k: &KernelTensor, gamma: f64, es: f64) -> Result<f64> {
    check_kernel(ts, k)?;
    let c = MANAKOV * gamma * es;
    let theta: Vec<Complex64> = k.values().iter().map(|v| v * c).collect();
    Ok(loss_theta(ts, &theta))
}

fn resolve_init(ts: &TrainingSet, init: &KernelInit) -> Result<KernelTensor> {
    match init {
        KernelInit::Zeros => Ok(KernelTensor::zeros(ts.memory(), KernelMeta::new(KernelOrigin::Nbgd))),
        KernelInit::Analytic => {
            let link = LinkConfig {
                memory: ts.memory(),
                ..ts.provenance.link.clone()
            };
            analytic_kernels(&link, ts.memory(), &AnalyticOptions::default())
        }
        KernelInit::File(path) => kernel_read(path),
    }
}

/// Normalized batch gradient descent, starting from `cfg.init`.
pub fn nbgd_fit(ts: &TrainingSet, cfg: &NbgdConfig, gamma: f64, es: f64) -> Result<NbgdOutcome> {
    if ts.is_empty() {
        return Err(NliError::Input("empty training set".into()));
    }
    let init = resolve_init(ts, &cfg.init)?;
    nbgd_fit_from(ts, cfg, gamma, es, &init)
}

/// Normalized batch gradient descent from an explicit starting kernel.
///
/// Each step moves θ by `learning_rate` along the negative gradient direction.
/// A step that raises the loss is rejected and the rate halved.
pub fn nbgd_fit_from(ts: &TrainingSet, cfg: &NbgdConfig, gamma: f64, es: f64, init: &KernelTensor) -> Result<NbgdOutcome> {
    cfg.validate()?;
    check_kernel(ts, init)?;
    let c = scale(gamma, es)?;
    let mut theta: Vec<Complex64> = init.values().iter().map(|v| v * c).collect();
    let n = ts.len();
    let mut eta = cfg.learning_rate;

    let (mut loss, mut grad) = loss_grad_theta(ts, &theta, 0..n);
    if !loss.is_finite() {
        return Err(NliError::Divergence { epoch: 0, loss });
    }
    let initial_loss = loss;
    let mut best = (loss, theta.clone());
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut stop = false;
        match cfg.batch_size {
            None => {
                let candidate = step(&theta, &grad, eta, cfg.eps);
                let (l_new, g_new) = loss_grad_theta(ts, &candidate, 0..n);
                if !l_new.is_finite() {
                    return Err(NliError::Divergence { epoch, loss: l_new });
                }
                if l_new > loss {
                    eta *= 0.5;
                } else {
                    stop = (loss - l_new) <= cfg.tol * loss;
                    theta = candidate;
                    loss = l_new;
                    grad = g_new;
                }
            }
            Some(bs) => {
                let mut start = 0;
                while start < n {
                    let range = start..(start + bs).min(n);
                    let (_, g) = loss_grad_theta(ts, &theta, range);
                    theta = step(&theta, &g, eta, cfg.eps);
                    start += bs;
                }
                let l_new = loss_theta(ts, &theta);
                if !l_new.is_finite() {
                    return Err(NliError::Divergence { epoch, loss: l_new });
                }
                if l_new > loss {
                    eta *= 0.5;
                    theta = best.1.clone();
                } else {
                    stop = (loss - l_new) <= cfg.tol * loss;
                    loss = l_new;
                }
            }
        }
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        history.push(best.0);
        if stop || eta < f64::EPSILON * cfg.learning_rate {
            break;
        }
    }
    log::debug!("nbgd: loss {initial_loss:.4e} -> {:.4e} in {} epochs", best.0, history.len());

    let values = best.1.iter().map(|v| v / c).collect();
    let kernel = KernelTensor::from_values(ts.memory(), values, nbgd_meta(ts))?;
    Ok(NbgdOutcome {
        kernel,
        best_loss: best.0,
        initial_loss,
        history,
        final_learning_rate: eta,
    })
}

fn step(theta: &[Complex64], g: &[Complex64], eta: f64, eps: f64) -> Vec<Complex64> {
    let norm = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let f = eta / norm.max(eps);
    theta.iter().zip(g).map(|(t, gi)| t - gi * f).collect()
}

fn nbgd_meta(ts: &TrainingSet) -> KernelMeta {
    KernelMeta {
        origin: KernelOrigin::Nbgd,
        trained_power_dbm: Some(ts.provenance.power_dbm),
        link_fingerprint: ts.provenance.link_hash(),
    }
}

/// Exact minimizer of the (ridge-regularized) squared residual.
pub fn ls_oracle(ts: &TrainingSet, gamma: f64, es: f64, ridge: f64) -> Result<KernelTensor> {
    if ts.is_empty() {
        return Err(NliError::Input("empty training set".into()));
    }
    if !(ridge >= 0.0) {
        return Err(NliError::Input(format!("ridge must be ≥ 0, got {ridge}")));
    }
    let c = scale(gamma, es)?;
    let w = ts.side();
    let p = w * w * w;
    if ridge == 0.0 && 2 * ts.len() < p {
        return Err(NliError::Numerical(format!(
            "{} equations for {p} unknowns; use a ridge weight λ > 0",
            2 * ts.len()
        )));
    }
    let chunks: Vec<std::ops::Range<usize>> = (0..ts.len()).step_by(CHUNK).map(|s| s..(s + CHUNK).min(ts.len())).collect();
    let partial: Vec<(DMatrix<Complex64>, DVector<Complex64>)> = chunks
        .into_par_iter()
        .map(|chunk| {
            let rows = 2 * chunk.len();
            let mut cm = DMatrix::<Complex64>::zeros(rows, p);
            let mut t = DVector::<Complex64>::zeros(rows);
            for (r, i) in chunk.enumerate() {
                let (wx, wy, tn) = ts.sample(i);
                t[2 * r] = tn[0];
                t[2 * r + 1] = tn[1];
                for k in 0..w {
                    for l in 0..w {
                        let b = Complex64::new(0.0, 1.0) * (wx[k].conj() * wx[l] + wy[k].conj() * wy[l]);
                        for m in 0..w {
                            let col = (k * w + l) * w + m;
                            cm[(2 * r, col)] = b * wx[m];
                            cm[(2 * r + 1, col)] = b * wy[m];
                        }
                    }
                }
            }
            (cm.ad_mul(&cm), cm.ad_mul(&t))
        })
        .collect();
    let mut gram = DMatrix::<Complex64>::zeros(p, p);
    let mut rhs = DVector::<Complex64>::zeros(p);
    for (g, r) in partial {
        gram += g;
        rhs += r;
    }
    for i in 0..p {
        gram[(i, i)] += Complex64::new(ridge, 0.0);
    }
    let chol = gram.cholesky().ok_or_else(|| {
        NliError::Numerical(if ridge == 0.0 {
            "normal equations are singular; use a ridge weight λ > 0".into()
        } else {
            "regularized normal equations are not positive definite".into()
        })
    })?;
    let theta = chol.solve(&rhs);
    if theta.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(NliError::Numerical("least-squares solution is not finite; use a ridge weight λ > 0".into()));
    }
    KernelTensor::from_values(ts.memory(), theta.iter().map(|v| v / c).collect(), nbgd_meta(ts))
}

/// 10 log10(Σ‖t − Δa‖² / Σ‖t‖²), floored at −150 dB.
pub fn model_nmse(ts: &TrainingSet, k: &KernelTensor, gamma: f64, es: f64) -> Result<f64> {
    check_kernel(ts, k)?;
    let energy = ts.target_energy();
    if energy == 0.0 {
        return Err(NliError::UndefinedMetric("training targets carry no energy".into()));
    }
    let c = MANAKOV * gamma * es;
    let theta: Vec<Complex64> = k.values().iter().map(|v| v * c).collect();
    let (q, _) = residual_pass(ts, &theta, 0..ts.len(), false);
    let db = 10.0 * (q / energy).log10();
    Ok(if db.is_nan() || db < NMSE_FLOOR_DB { NMSE_FLOOR_DB } else { db })
}

const TS_MAGIC: &[u8; 4] = b"NBTS";
const TS_VERSION: u32 = 1;

/// Little-endian: magic `NBTS`, u32 version, u16 memory, u64 sample count,
/// u32 provenance length, provenance JSON, then per sample the x-pol and
/// y-pol windows followed by the two target components, as (re, im) f64 pairs.
pub fn training_set_to_bytes(ts: &TrainingSet) -> Result<Vec<u8>> {
    let memory = u16::try_from(ts.memory).map_err(|_| NliError::Format("memory exceeds u16".into()))?;
    let blob = serde_json::to_vec(&ts.provenance)?;
    let mut out = Vec::with_capacity(22 + blob.len() + 16 * (ts.windows.len() + 2 * ts.len()));
    out.extend_from_slice(TS_MAGIC);
    out.extend_from_slice(&TS_VERSION.to_le_bytes());
    out.extend_from_slice(&memory.to_le_bytes());
    out.extend_from_slice(&(ts.len() as u64).to_le_bytes());
    out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&blob);
    let w2 = 2 * ts.side();
    for (i, t) in ts.targets.iter().enumerate() {
        for v in ts.windows[i * w2..(i + 1) * w2].iter().chain(t) {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn training_set_from_bytes(b: &[u8]) -> Result<TrainingSet> {
    let mut cur = b;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(NliError::Format("truncated training-set file".into()));
        }
        let (h, t) = cur.split_at(n);
        cur = t;
        Ok(h)
    };
    if take(4)? != TS_MAGIC {
        return Err(NliError::Format("not a training-set file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != TS_VERSION {
        return Err(NliError::Format(format!("unsupported training-set version {version}")));
    }
    let memory = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let blob_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let provenance: Provenance = serde_json::from_slice(take(blob_len)?)?;
    let w2 = 2 * (2 * memory + 1);
    let per = 16 * (w2 + 2);
    let payload = take(count.checked_mul(per).ok_or_else(|| NliError::Format("sample count overflow".into()))?)?;
    drop(take);
    if !cur.is_empty() {
        return Err(NliError::Format(format!("{} trailing bytes", cur.len())));
    }
    if provenance.batch_sizes.iter().sum::<usize>() != count {
        return Err(NliError::Format("batch sizes do not add up to the sample count".into()));
    }
    let mut windows = Vec::with_capacity(count * w2);
    let mut targets = Vec::with_capacity(count);
    for s in payload.chunks_exact(per) {
        let vals: Vec<Complex64> = s
            .chunks_exact(16)
            .map(|c| Complex64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap())))
            .collect();
        if vals.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(NliError::Format("non-finite value in training set".into()));
        }
        windows.extend_from_slice(&vals[..w2]);
        targets.push([vals[w2], vals[w2 + 1]]);
    }
    Ok(TrainingSet {
        memory,
        windows,
        targets,
        provenance,
    })
}

pub fn training_set_write(path: impl AsRef<Path>, ts: &TrainingSet) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(&training_set_to_bytes(ts)?)?;
    Ok(())
}

pub fn training_set_read(path: impl AsRef<Path>) -> Result<TrainingSet> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| NliError::MissingArtifact {
            path: path.to_path_buf(),
            hint: format!("training set not readable ({e}); run `nlilab train` first"),
        })?
        .read_to_end(&mut buf)?;
    training_set_from_bytes(&buf)
}
