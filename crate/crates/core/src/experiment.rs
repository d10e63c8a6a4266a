//! Experiment orchestration: power sweeps, per-power kernel training,
//! mismatched-kernel studies and noise calibration.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{add_ase, StepPolicy};
use crate::config::{FiberParams, LinkConfig, NoiseSpec};
use crate::error::{NliError, Result};
use crate::fec::{fer_from_counts, FerEstimate, LdpcCode};
use crate::frp::{analytic_kernels, kernel_read, kernel_write, AnalyticOptions, KernelOrigin, KernelTensor};
use crate::learn::{build_training_set, fiber_symbols, model_nmse, nbgd_fit_from, KernelInit, NbgdConfig};
use crate::rxdsp::{effective_snr, estimate_genie_stats, gaussian_llrs, genie_cancel, gmi};
use crate::sigproc::{map_bits, random_bits, Constellation, DualPolSymbols, BITS_PER_4D};
use crate::units::{db_to_lin, lin_to_db, power_key};

/// 4D symbols per 648-bit codeword.
pub const SYMBOLS_PER_FRAME: usize = 81;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Traditional,
    GenieAnalytic,
    GenieNbgd,
    AseOnly,
    NliOnly,
    NliOnlyGenieNbgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Link {
    /// Nonlinear fiber plus ASE.
    Full,
    /// γ = 0 plus ASE.
    Linear,
    /// Nonlinear fiber, no ASE.
    Noiseless,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum KernelChoice {
    None,
    Analytic,
    Nbgd,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Traditional,
        Scheme::GenieAnalytic,
        Scheme::GenieNbgd,
        Scheme::AseOnly,
        Scheme::NliOnly,
        Scheme::NliOnlyGenieNbgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Traditional => "traditional",
            Scheme::GenieAnalytic => "genie-analytic",
            Scheme::GenieNbgd => "genie-nbgd",
            Scheme::AseOnly => "ase-only",
            Scheme::NliOnly => "nli-only",
            Scheme::NliOnlyGenieNbgd => "nli-only-genie-nbgd",
        }
    }

    fn link(self) -> Link {
        match self {
            Scheme::Traditional | Scheme::GenieAnalytic | Scheme::GenieNbgd => Link::Full,
            Scheme::AseOnly => Link::Linear,
            Scheme::NliOnly | Scheme::NliOnlyGenieNbgd => Link::Noiseless,
        }
    }

    fn kernel(self) -> KernelChoice {
        match self {
            Scheme::GenieAnalytic => KernelChoice::Analytic,
            Scheme::GenieNbgd | Scheme::NliOnlyGenieNbgd => KernelChoice::Nbgd,
            _ => KernelChoice::None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = NliError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| NliError::Config(format!("unknown scheme `{s}`; expected one of {}", scheme_list())))
    }
}

fn scheme_list() -> String {
    Scheme::ALL.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
}

pub fn parse_schemes(list: &str) -> Result<Vec<Scheme>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Scheme::from_str).collect()
}

/// Parses `a:b:step` (inclusive) or a comma-separated list of powers in dBm.
pub fn parse_powers(spec: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| NliError::Config(format!("power list `{spec}`: {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("`{s}` is not a number")));
    let mut powers = Vec::new();
    for item in spec.split(',') {
        let parts: Vec<&str> = item.split(':').collect();
        match parts[..] {
            [a, b, step] => {
                let (a, b, step) = (num(a)?, num(b)?, num(step)?);
                if !(step > 0.0) || b < a {
                    return Err(bad("need start ≤ stop and step > 0"));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                powers.extend((0..=n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9));
            }
            [p] => powers.push(num(p)?),
            _ => return Err(bad("expected a:b:step or a comma-separated list")),
        }
    }
    if powers.is_empty() || powers.iter().any(|p| !p.is_finite()) {
        return Err(bad("empty or non-finite"));
    }
    Ok(powers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSpec {
    pub symbols_per_batch: usize,
    pub batches: usize,
    /// Fraction of batches used for fitting; the rest validate.
    pub train_fraction: f64,
    pub nbgd: NbgdConfig,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        TrainingSpec {
            symbols_per_batch: 8192,
            batches: 5,
            train_fraction: 0.8,
            nbgd: NbgdConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub link: LinkConfig,
    pub powers_dbm: Vec<f64>,
    pub schemes: Vec<Scheme>,
    pub block_symbols: usize,
    pub blocks_per_point: usize,
    pub seed: u64,
    pub step: StepPolicy,
    pub analytic: AnalyticOptions,
    pub training: TrainingSpec,
    pub decoder_iterations: usize,
    /// Target for `calibrate-noise`: where the traditional optimum should sit.
    pub calibration_target_dbm: f64,
    pub kernel_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            link: LinkConfig::default(),
            powers_dbm: (8..=20).map(f64::from).collect(),
            schemes: Scheme::ALL[..5].to_vec(),
            block_symbols: 8192,
            blocks_per_point: 1,
            seed: 1,
            step: StepPolicy::default(),
            analytic: AnalyticOptions::default(),
            training: TrainingSpec::default(),
            decoder_iterations: 40,
            calibration_target_dbm: 14.0,
            kernel_dir: PathBuf::from("kernels"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| NliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| NliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        self.step.validate()?;
        self.training.nbgd.validate()?;
        if self.powers_dbm.is_empty() || self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(NliError::Config("power sweep must be a nonempty list of finite values".into()));
        }
        if self.schemes.is_empty() {
            return Err(NliError::Config("scheme list is empty".into()));
        }
        if self.block_symbols < SYMBOLS_PER_FRAME || self.block_symbols < 2 * self.link.memory + 1 {
            return Err(NliError::Config(format!("block of {} symbols cannot hold one frame", self.block_symbols)));
        }
        if self.blocks_per_point == 0 || self.decoder_iterations == 0 {
            return Err(NliError::Config("blocks_per_point and decoder_iterations must be ≥ 1".into()));
        }
        if self.training.batches == 0 || self.training.symbols_per_batch < 2 * self.link.memory + 1 {
            return Err(NliError::Config("training needs ≥ 1 batch holding at least one kernel window".into()));
        }
        Ok(())
    }

    /// Canonical JSON of the resolved configuration.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn frames_per_block(&self) -> usize {
        self.block_symbols / SYMBOLS_PER_FRAME
    }

    pub fn analytic_kernel_path(&self) -> PathBuf {
        self.kernel_dir.join(format!("analytic_m{}.nbgk", self.link.memory))
    }

    pub fn nbgd_kernel_path(&self, power_dbm: f64) -> PathBuf {
        self.kernel_dir.join(format!("nbgd_m{}_{}.nbgk", self.link.memory, power_tag(power_dbm)))
    }

    pub fn training_log_path(&self, power_dbm: f64) -> PathBuf {
        self.kernel_dir.join(format!("nbgd_m{}_{}.log.json", self.link.memory, power_tag(power_dbm)))
    }
}

fn power_tag(power_dbm: f64) -> String {
    format!("{:.2}dBm", power_key(power_dbm) as f64 / 100.0)
}

/// Independent stream for (master seed, purpose, launch power, block).
pub fn derive_rng(master: u64, domain: &str, power_dbm: f64, block: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(power_key(power_dbm).to_le_bytes());
    h.update(block.to_le_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub power_dbm: f64,
    pub scheme: Scheme,
    pub kernel_origin: Option<KernelOrigin>,
    pub kernel_trained_dbm: Option<f64>,
    pub kernel_file: Option<PathBuf>,
    pub snr_eff_db: f64,
    pub gmi_b2d: f64,
    pub ber_pre: f64,
    pub fer: f64,
    pub fer_ci_lo: f64,
    pub fer_ci_hi: f64,
    pub frames: usize,
    pub seed: u64,
    pub config_hash: String,
    pub wall_s: f64,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "power_dbm",
    "scheme",
    "kernel_origin",
    "kernel_trained_dbm",
    "snr_eff_db",
    "gmi_b2d",
    "ber_pre",
    "fer",
    "fer_ci_lo",
    "fer_ci_hi",
    "frames",
    "seed",
    "config_hash",
    "wall_s",
];

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    write_metrics_to(fs::File::create(path)?, records)
}

pub fn write_metrics_to<W: std::io::Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.power_dbm.to_string(),
            r.scheme.to_string(),
            r.kernel_origin.map(|o| o.as_str().to_string()).unwrap_or_default(),
            opt_f64(r.kernel_trained_dbm),
            r.snr_eff_db.to_string(),
            r.gmi_b2d.to_string(),
            r.ber_pre.to_string(),
            r.fer.to_string(),
            r.fer_ci_lo.to_string(),
            r.fer_ci_hi.to_string(),
            r.frames.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
            r.wall_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV written by [`write_metrics_csv`]; the kernel file is not stored there.
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    read_metrics_from(fs::File::open(path)?)
}

pub fn read_metrics_from<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    for (i, col) in CSV_COLUMNS.iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*col) {
            return Err(NliError::Schema {
                column: col.to_string(),
                message: format!("expected at position {i}, found {:?}", header.get(i)),
            });
        }
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| NliError::Schema {
                column: CSV_COLUMNS[i].to_string(),
                message: format!("row {}: `{}` is not a number", line + 1, field(i)),
            })
        };
        let opt = |i: usize| -> Result<Option<f64>> { if field(i).is_empty() { Ok(None) } else { num(i).map(Some) } };
        let int = |i: usize| -> Result<u64> {
            field(i).parse::<u64>().map_err(|_| NliError::Schema {
                column: CSV_COLUMNS[i].to_string(),
                message: format!("row {}: `{}` is not an integer", line + 1, field(i)),
            })
        };
        let scheme = Scheme::from_str(field(1)).map_err(|_| NliError::Schema {
            column: "scheme".into(),
            message: format!("row {}: unknown scheme `{}`", line + 1, field(1)),
        })?;
        let kernel_origin = match field(2) {
            "" => None,
            "analytic" => Some(KernelOrigin::Analytic),
            "nbgd" => Some(KernelOrigin::Nbgd),
            other => {
                return Err(NliError::Schema {
                    column: "kernel_origin".into(),
                    message: format!("row {}: unknown origin `{other}`", line + 1),
                })
            }
        };
        out.push(MetricsRecord {
            power_dbm: num(0)?,
            scheme,
            kernel_origin,
            kernel_trained_dbm: opt(3)?,
            kernel_file: None,
            snr_eff_db: num(4)?,
            gmi_b2d: num(5)?,
            ber_pre: num(6)?,
            fer: num(7)?,
            fer_ci_lo: num(8)?,
            fer_ci_hi: num(9)?,
            frames: int(10)? as usize,
            seed: int(11)?,
            config_hash: field(12).to_string(),
            wall_s: num(13)?,
        });
    }
    Ok(out)
}

/// Transmitted data and channel outputs for one launch power, all blocks concatenated.
pub struct PointData {
    pub power_dbm: f64,
    pub a: DualPolSymbols,
    pub bits: Vec<u8>,
    /// Information bits of every counted frame.
    pub info: Vec<Vec<u8>>,
    /// Offset of each counted frame in `bits`.
    pub frame_offsets: Vec<usize>,
    nonlinear: Option<DualPolSymbols>,
    linear: Option<DualPolSymbols>,
    noise: DualPolSymbols,
    pub shared_wall_s: f64,
}

impl PointData {
    fn received(&self, link: Link) -> Result<DualPolSymbols> {
        let missing = || NliError::Input("channel output was not simulated for this scheme".into());
        match link {
            Link::Full => self.nonlinear.as_ref().ok_or_else(missing)?.add(&self.noise),
            Link::Linear => self.linear.as_ref().ok_or_else(missing)?.add(&self.noise),
            Link::Noiseless => Ok(self.nonlinear.clone().ok_or_else(missing)?),
        }
    }
}

/// Encodes, maps and propagates every block at one power.
fn simulate_point(cfg: &ExperimentConfig, code: &LdpcCode, power_dbm: f64, need_nl: bool, need_lin: bool) -> Result<PointData> {
    let t0 = Instant::now();
    let link = cfg.link.with_power(power_dbm);
    let qam = Constellation::qam16_gray();
    let sigma2 = link.sigma_n_sq();
    let n_frames = cfg.frames_per_block();
    let bits_per_block = cfg.block_symbols * BITS_PER_4D;
    let linear_link = LinkConfig {
        fiber: FiberParams { gamma: 0.0, ..link.fiber.clone() },
        ..link.clone()
    };

    let mut blocks_a = Vec::new();
    let mut bits = Vec::with_capacity(cfg.blocks_per_point * bits_per_block);
    let mut info = Vec::new();
    let mut frame_offsets = Vec::new();
    let mut nl = Vec::new();
    let mut lin = Vec::new();
    let mut noise = Vec::new();
    for b in 0..cfg.blocks_per_point {
        let mut rng = derive_rng(cfg.seed, "traffic", power_dbm, b as u64);
        let base = bits.len();
        for f in 0..n_frames {
            let u = random_bits(code.k(), &mut rng);
            bits.extend(code.encode(&u)?);
            frame_offsets.push(base + f * code.n());
            info.push(u);
        }
        bits.extend(random_bits(bits_per_block - n_frames * code.n(), &mut rng));
        let a = map_bits(&bits[base..], &qam)?;
        if need_nl {
            nl.push(fiber_symbols(&a, &link, &cfg.step)?);
        }
        if need_lin {
            lin.push(fiber_symbols(&a, &linear_link, &cfg.step)?);
        }
        noise.push(add_ase(&DualPolSymbols::zeros(a.len()), sigma2, &mut rng)?);
        blocks_a.push(a);
    }
    let cat = |v: &[DualPolSymbols]| DualPolSymbols::concat(v.iter());
    Ok(PointData {
        power_dbm,
        a: cat(&blocks_a),
        bits,
        info,
        frame_offsets,
        nonlinear: need_nl.then(|| cat(&nl)),
        linear: need_lin.then(|| cat(&lin)),
        noise: cat(&noise),
        shared_wall_s: t0.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub snr_eff_db: f64,
    pub gmi_b2d: f64,
    pub ber_pre: f64,
    pub fer: Option<FerEstimate>,
}

/// Genie cancellation with `kernel` (or none) followed by every receiver metric.
fn evaluate(
    data: &PointData,
    link: Link,
    kernel: Option<&KernelTensor>,
    cfg: &ExperimentConfig,
    code: Option<&LdpcCode>,
) -> Result<Evaluation> {
    let y = data.received(link)?;
    let lc = cfg.link.with_power(data.power_dbm);
    let ytilde = match kernel {
        Some(k) => genie_cancel(&y, &data.a, k, lc.fiber.gamma, lc.es())?,
        None => y,
    };
    let qam = Constellation::qam16_gray();
    let snr = effective_snr(&ytilde, &data.a)?;
    let stats = estimate_genie_stats(&ytilde, &data.a, &qam)?;
    let llrs = gaussian_llrs(&ytilde, &stats, &qam)?;
    let g = gmi(&llrs, &data.bits)?;
    let bit_errors = llrs.llrs.iter().zip(&data.bits).filter(|(l, b)| ((**l < 0.0) as u8) != **b).count();
    let fer = match code {
        Some(code) => {
            let errors = data
                .frame_offsets
                .par_iter()
                .zip(&data.info)
                .map(|(&off, u)| -> Result<usize> {
                    let out = code.decode(&llrs.llrs[off..off + code.n()], cfg.decoder_iterations)?;
                    Ok((out.info != *u) as usize)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .sum();
            Some(fer_from_counts(errors, data.info.len())?)
        }
        None => None,
    };
    Ok(Evaluation {
        snr_eff_db: snr.combined_db,
        gmi_b2d: g,
        ber_pre: bit_errors as f64 / data.bits.len() as f64,
        fer,
    })
}

fn missing_nbgd(cfg: &ExperimentConfig, power: f64) -> NliError {
    NliError::MissingArtifact {
        path: cfg.nbgd_kernel_path(power),
        hint: format!("train it with `nlilab train --powers {power}` using the same config"),
    }
}

fn load_nbgd(cfg: &ExperimentConfig, power: f64) -> Result<KernelTensor> {
    let path = cfg.nbgd_kernel_path(power);
    if !path.exists() {
        return Err(missing_nbgd(cfg, power));
    }
    let k = kernel_read(&path)?;
    check_kernel_memory(cfg, &k, &path)?;
    Ok(k)
}

fn load_analytic(cfg: &ExperimentConfig) -> Result<KernelTensor> {
    let path = cfg.analytic_kernel_path();
    if !path.exists() {
        return Err(NliError::MissingArtifact {
            path,
            hint: "compute it with `nlilab kernels-analytic` using the same config".into(),
        });
    }
    let k = kernel_read(&path)?;
    check_kernel_memory(cfg, &k, &path)?;
    Ok(k)
}

fn check_kernel_memory(cfg: &ExperimentConfig, k: &KernelTensor, path: &Path) -> Result<()> {
    if k.memory() != cfg.link.memory {
        return Err(NliError::Config(format!(
            "{} has memory {}, config asks for {}",
            path.display(),
            k.memory(),
            cfg.link.memory
        )));
    }
    Ok(())
}

/// Every (power, scheme) point, in canonical order.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    cfg.validate()?;
    let code = LdpcCode::ieee80211_n648_r34();
    let hash = cfg.config_hash();
    let analytic = if cfg.schemes.iter().any(|s| s.kernel() == KernelChoice::Analytic) {
        Some(load_analytic(cfg)?)
    } else {
        None
    };
    let needs_nbgd = cfg.schemes.iter().any(|s| s.kernel() == KernelChoice::Nbgd);
    let mut nbgd = Vec::new();
    for &p in &cfg.powers_dbm {
        nbgd.push(if needs_nbgd { Some(load_nbgd(cfg, p)?) } else { None });
    }
    for (k, &p) in nbgd.iter().zip(&cfg.powers_dbm) {
        if let Some(k) = k {
            let trained = k.meta.trained_power_dbm.unwrap_or(f64::NAN);
            if power_key(trained) != power_key(p) {
                return Err(NliError::Config(format!("kernel for {p} dBm reports training power {trained} dBm")));
            }
        }
    }
    let need_nl = cfg.schemes.iter().any(|s| s.link() != Link::Linear);
    let need_lin = cfg.schemes.iter().any(|s| s.link() == Link::Linear);

    let per_power: Vec<Vec<MetricsRecord>> = cfg
        .powers_dbm
        .par_iter()
        .zip(&nbgd)
        .map(|(&p, nk)| -> Result<Vec<MetricsRecord>> {
            let data = simulate_point(cfg, &code, p, need_nl, need_lin)?;
            log::info!("simulated {p} dBm in {:.1} s", data.shared_wall_s);
            cfg.schemes
                .iter()
                .map(|&scheme| {
                    let t0 = Instant::now();
                    let (kernel, file) = match scheme.kernel() {
                        KernelChoice::None => (None, None),
                        KernelChoice::Analytic => (analytic.as_ref(), Some(cfg.analytic_kernel_path())),
                        KernelChoice::Nbgd => (nk.as_ref(), Some(cfg.nbgd_kernel_path(p))),
                    };
                    let ev = evaluate(&data, scheme.link(), kernel, cfg, Some(&code))?;
                    let fer = ev.fer.expect("decoded");
                    Ok(MetricsRecord {
                        power_dbm: p,
                        scheme,
                        kernel_origin: kernel.map(|k| k.meta.origin),
                        kernel_trained_dbm: kernel.and_then(|k| k.meta.trained_power_dbm),
                        kernel_file: file,
                        snr_eff_db: ev.snr_eff_db,
                        gmi_b2d: ev.gmi_b2d,
                        ber_pre: ev.ber_pre,
                        fer: fer.rate,
                        fer_ci_lo: fer.ci_lo,
                        fer_ci_hi: fer.ci_hi,
                        frames: fer.frames,
                        seed: cfg.seed,
                        config_hash: hash.clone(),
                        wall_s: data.shared_wall_s + t0.elapsed().as_secs_f64(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_power.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    records: &'a [MetricsRecord],
}

/// Runs the sweep and writes `metrics.csv`, `metrics.json` and the resolved config.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<MetricsRecord>> {
    let records = run_sweep(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_metrics_csv(cfg.out_dir.join("metrics.csv"), &records)?;
    let file = MetricsFile {
        config_hash: cfg.config_hash(),
        config: cfg,
        records: &records,
    };
    fs::write(cfg.out_dir.join("metrics.json"), serde_json::to_string_pretty(&file)?)?;
    write_resolved_config(cfg)?;
    Ok(records)
}

pub fn write_resolved_config(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.resolved.json"), cfg.canonical_json())?;
    Ok(())
}

/// Writes the analytic kernel for the configured link and memory.
pub fn cmd_kernels_analytic(cfg: &ExperimentConfig) -> Result<KernelTensor> {
    cfg.validate()?;
    let k = analytic_kernels(&cfg.link, cfg.link.memory, &cfg.analytic)?;
    kernel_write(cfg.analytic_kernel_path(), &k)?;
    Ok(k)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainingLog {
    pub power_dbm: f64,
    pub kernel_file: PathBuf,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub seeds: Vec<u64>,
    pub initial_loss: f64,
    pub best_loss: f64,
    pub final_learning_rate: f64,
    pub loss_history: Vec<f64>,
    pub validation_nmse_db: f64,
    pub analytic_validation_nmse_db: Option<f64>,
    pub config_hash: String,
    pub error: Option<String>,
    pub wall_s: f64,
}

fn init_kernel(cfg: &ExperimentConfig) -> Result<Option<KernelTensor>> {
    match &cfg.training.nbgd.init {
        KernelInit::Zeros => Ok(None),
        KernelInit::Analytic => {
            let path = cfg.analytic_kernel_path();
            if path.exists() {
                let k = kernel_read(&path)?;
                check_kernel_memory(cfg, &k, &path)?;
                Ok(Some(k))
            } else {
                cmd_kernels_analytic(cfg).map(Some)
            }
        }
        KernelInit::File(p) => {
            let k = kernel_read(p)?;
            check_kernel_memory(cfg, &k, p)?;
            Ok(Some(k))
        }
    }
}

/// Trains one NBGD kernel per power and writes kernel files plus JSON logs.
pub fn cmd_train(cfg: &ExperimentConfig, powers: &[f64]) -> Result<Vec<TrainingLog>> {
    cfg.validate()?;
    if powers.is_empty() {
        return Err(NliError::Config("no training powers given".into()));
    }
    let init = init_kernel(cfg)?;
    let analytic = match &init {
        Some(k) if k.meta.origin == KernelOrigin::Analytic => Some(k.clone()),
        _ => None,
    };
    let hash = cfg.config_hash();
    fs::create_dir_all(&cfg.kernel_dir)?;
    powers
        .iter()
        .map(|&p| {
            let t0 = Instant::now();
            let link = cfg.link.with_power(p);
            let mut rng = derive_rng(cfg.seed, "train", p, 0);
            let ts = build_training_set(&link, &cfg.step, cfg.training.symbols_per_batch, cfg.training.batches, &mut rng)?;
            let (train, val) = if cfg.training.batches >= 2 {
                ts.split_by_batch(cfg.training.train_fraction)?
            } else {
                (ts.clone(), ts)
            };
            let start = init
                .clone()
                .unwrap_or_else(|| KernelTensor::zeros(cfg.link.memory, crate::frp::KernelMeta::new(KernelOrigin::Nbgd)));
            let log_path = cfg.training_log_path(p);
            let mut log = TrainingLog {
                power_dbm: p,
                kernel_file: cfg.nbgd_kernel_path(p),
                train_samples: train.len(),
                validation_samples: val.len(),
                seeds: train.provenance.seeds.iter().chain(&val.provenance.seeds).copied().collect(),
                initial_loss: f64::NAN,
                best_loss: f64::NAN,
                final_learning_rate: f64::NAN,
                loss_history: Vec::new(),
                validation_nmse_db: f64::NAN,
                analytic_validation_nmse_db: None,
                config_hash: hash.clone(),
                error: None,
                wall_s: 0.0,
            };
            let outcome = match nbgd_fit_from(&train, &cfg.training.nbgd, link.fiber.gamma, link.es(), &start) {
                Ok(o) => o,
                Err(e) => {
                    log.error = Some(e.to_string());
                    fs::write(&log_path, serde_json::to_string_pretty(&log)?)?;
                    return Err(NliError::Numerical(format!("training at {p} dBm failed: {e}; see {}", log_path.display())));
                }
            };
            log.initial_loss = outcome.initial_loss;
            log.best_loss = outcome.best_loss;
            log.final_learning_rate = outcome.final_learning_rate;
            log.validation_nmse_db = model_nmse(&val, &outcome.kernel, link.fiber.gamma, link.es())?;
            log.analytic_validation_nmse_db = analytic
                .as_ref()
                .map(|k| model_nmse(&val, k, link.fiber.gamma, link.es()))
                .transpose()?;
            log.loss_history = outcome.history;
            kernel_write(cfg.nbgd_kernel_path(p), &outcome.kernel)?;
            log.wall_s = t0.elapsed().as_secs_f64();
            fs::write(&log_path, serde_json::to_string_pretty(&log)?)?;
            log::info!(
                "trained {p} dBm: loss {:.4e} -> {:.4e}, validation NMSE {:.2} dB",
                log.initial_loss,
                log.best_loss,
                log.validation_nmse_db
            );
            Ok(log)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchRecord {
    pub eval_power_dbm: f64,
    /// `None` for the traditional receiver.
    pub kernel_trained_dbm: Option<f64>,
    pub snr_eff_db: f64,
    pub gmi_b2d: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Effective SNR at every evaluation power for every trained kernel, plus the traditional baseline.
pub fn run_mismatch(cfg: &ExperimentConfig, train_powers: &[f64], eval_powers: &[f64]) -> Result<Vec<MismatchRecord>> {
    cfg.validate()?;
    if train_powers.is_empty() || eval_powers.is_empty() {
        return Err(NliError::Config("mismatch study needs training and evaluation powers".into()));
    }
    let kernels = train_powers.iter().map(|&p| load_nbgd(cfg, p)).collect::<Result<Vec<_>>>()?;
    let code = LdpcCode::ieee80211_n648_r34();
    let hash = cfg.config_hash();
    let rows: Vec<Vec<MismatchRecord>> = eval_powers
        .par_iter()
        .map(|&pe| -> Result<Vec<MismatchRecord>> {
            let data = simulate_point(cfg, &code, pe, true, false)?;
            let mut out = Vec::with_capacity(kernels.len() + 1);
            for (k, pt) in std::iter::once((None, None)).chain(kernels.iter().zip(train_powers).map(|(k, &p)| (Some(k), Some(p)))) {
                let ev = evaluate(&data, Link::Full, k, cfg, None)?;
                out.push(MismatchRecord {
                    eval_power_dbm: pe,
                    kernel_trained_dbm: pt,
                    snr_eff_db: ev.snr_eff_db,
                    gmi_b2d: ev.gmi_b2d,
                    seed: cfg.seed,
                    config_hash: hash.clone(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().flatten().collect())
}

pub fn cmd_mismatch(cfg: &ExperimentConfig, train_powers: &[f64], eval_powers: &[f64]) -> Result<Vec<MismatchRecord>> {
    let rows = run_mismatch(cfg, train_powers, eval_powers)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut w = csv::Writer::from_path(cfg.out_dir.join("mismatch.csv"))?;
    w.write_record(["eval_power_dbm", "kernel_trained_dbm", "snr_eff_db", "gmi_b2d", "seed", "config_hash"])?;
    for r in &rows {
        w.write_record([
            r.eval_power_dbm.to_string(),
            opt_f64(r.kernel_trained_dbm),
            r.snr_eff_db.to_string(),
            r.gmi_b2d.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    w.flush()?;
    write_resolved_config(cfg)?;
    Ok(rows)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub target_dbm: f64,
    pub nf_db: f64,
    pub center_freq_hz: f64,
    /// Fitted NLI distortion: 10 log10 d(P) = intercept_db + slope · P_dBm.
    pub nli_intercept_db: f64,
    pub nli_slope: f64,
    /// Noiseless traditional-receiver effective SNR at each sweep power.
    pub nli_snr_db: Vec<(f64, f64)>,
}

/// Chooses the amplifier noise figure that puts the traditional optimum at the target power.
///
/// The NLI-only distortion d(P) is measured on the noiseless fiber and fitted
/// as a power law d ∝ P^β. With ASE σ²(P) ∝ NF/P the total 1/SNR = σ² + d is
/// minimal where σ² = β·d, which fixes NF.
pub fn calibrate_noise(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    if cfg.powers_dbm.len() < 2 {
        return Err(NliError::Config("calibration needs at least two sweep powers".into()));
    }
    let code = LdpcCode::ieee80211_n648_r34();
    let nli_snr_db = cfg
        .powers_dbm
        .par_iter()
        .map(|&p| -> Result<(f64, f64)> {
            let data = simulate_point(cfg, &code, p, true, false)?;
            Ok((p, evaluate(&data, Link::Noiseless, None, cfg, None)?.snr_eff_db))
        })
        .collect::<Result<Vec<_>>>()?;
    // least squares on (P, −SNR) in dB
    let n = nli_snr_db.len() as f64;
    let mx = nli_snr_db.iter().map(|v| v.0).sum::<f64>() / n;
    let my = nli_snr_db.iter().map(|v| -v.1).sum::<f64>() / n;
    let sxy: f64 = nli_snr_db.iter().map(|v| (v.0 - mx) * (-v.1 - my)).sum();
    let sxx: f64 = nli_snr_db.iter().map(|v| (v.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope > 0.0) {
        return Err(NliError::Numerical(format!("NLI does not grow with power (fitted slope {slope})")));
    }
    let target = cfg.calibration_target_dbm;
    let d_target = db_to_lin(intercept + slope * target);
    let center_freq_hz = match cfg.link.noise {
        NoiseSpec::NoiseFigure { center_freq_hz, .. } => center_freq_hz,
        NoiseSpec::Variance { .. } => NoiseSpec::default_center_freq(),
    };
    let unit = LinkConfig {
        noise: NoiseSpec::NoiseFigure {
            nf_db: 0.0,
            center_freq_hz,
        },
        ..cfg.link.with_power(target)
    }
    .sigma_n_sq();
    let nf_db = lin_to_db(slope * d_target / unit);
    Ok(Calibration {
        target_dbm: target,
        nf_db,
        center_freq_hz,
        nli_intercept_db: intercept,
        nli_slope: slope,
        nli_snr_db,
    })
}

/// Writes `calibration.json` and a copy of the config with the calibrated noise figure.
pub fn cmd_calibrate_noise(cfg: &ExperimentConfig) -> Result<(Calibration, ExperimentConfig)> {
    let cal = calibrate_noise(cfg)?;
    let mut out = cfg.clone();
    out.link.noise = NoiseSpec::NoiseFigure {
        nf_db: cal.nf_db,
        center_freq_hz: cal.center_freq_hz,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("calibration.json"), serde_json::to_string_pretty(&cal)?)?;
    fs::write(cfg.out_dir.join("config.calibrated.json"), serde_json::to_string_pretty(&out)?)?;
    Ok((cal, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    pub(crate) fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            link: LinkConfig {
                fiber: FiberParams {
                    length_km: 40.0,
                    ..FiberParams::default()
                },
                symbol_rate_hz: 32e9,
                roll_off: 0.1,
                osf: 4,
                memory: 1,
                noise: NoiseSpec::NoiseFigure {
                    nf_db: 5.0,
                    center_freq_hz: 193.41e12,
                },
                ..LinkConfig::default()
            },
            powers_dbm: vec![4.0, 8.0],
            schemes: Scheme::ALL.to_vec(),
            block_symbols: 324,
            analytic: AnalyticOptions {
                z_nodes: 41,
                block_symbols: None,
            },
            training: TrainingSpec {
                symbols_per_batch: 256,
                batches: 2,
                train_fraction: 0.5,
                nbgd: NbgdConfig {
                    epochs: 20,
                    ..NbgdConfig::default()
                },
            },
            kernel_dir: dir.join("kernels"),
            out_dir: dir.join("out"),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn power_lists() {
        assert_eq!(parse_powers("10:12:1").unwrap(), vec![10.0, 11.0, 12.0]);
        assert_eq!(parse_powers("14:15:0.5").unwrap(), vec![14.0, 14.5, 15.0]);
        assert_eq!(parse_powers("-1:0:0.1").unwrap().len(), 11);
        assert_eq!(parse_powers("3, 5").unwrap(), vec![3.0, 5.0]);
        assert_eq!(parse_powers("1:2:1,2.5").unwrap(), vec![1.0, 2.0, 2.5]);
        for bad in ["", "a:b:c", "1:0:1", "1:2:0", "1:2"] {
            assert!(matches!(parse_powers(bad), Err(NliError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn scheme_names_roundtrip() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::from_str(s.as_str()).unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
        assert!(parse_schemes("traditional,bogus").is_err());
        assert_eq!(parse_schemes("traditional, ase-only").unwrap(), vec![Scheme::Traditional, Scheme::AseOnly]);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 2;
        assert_ne!(a.config_hash(), b.config_hash());
        let back: ExperimentConfig = serde_json::from_str(&a.canonical_json()).unwrap();
        assert_eq!(back, a);
        assert!(serde_json::from_str::<ExperimentConfig>("{\"bogus\": 1}").is_err());
        let partial: ExperimentConfig = serde_json::from_str("{\"seed\": 7}").unwrap();
        assert_eq!(partial.link, LinkConfig::default());
        let mut bad = a.clone();
        bad.schemes.clear();
        assert!(matches!(bad.validate(), Err(NliError::Config(_))));
    }

    #[test]
    fn derived_streams_differ() {
        let draw = |d: &str, p: f64, b: u64| derive_rng(1, d, p, b).random::<u64>();
        assert_eq!(draw("traffic", 14.0, 0), draw("traffic", 14.0, 0));
        assert_ne!(draw("traffic", 14.0, 0), draw("traffic", 14.0, 1));
        assert_ne!(draw("traffic", 14.0, 0), draw("traffic", 14.5, 0));
        assert_ne!(draw("traffic", 14.0, 0), draw("train", 14.0, 0));
    }

    #[test]
    fn missing_kernels_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let err = run_sweep(&cfg).unwrap_err();
        assert!(matches!(err, NliError::MissingArtifact { .. }));
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("kernels-analytic"));
    }

    #[test]
    fn end_to_end_small() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cmd_kernels_analytic(&cfg).unwrap();
        let logs = cmd_train(&cfg, &cfg.powers_dbm).unwrap();
        assert_eq!(logs.len(), 2);
        let k4 = kernel_read(cfg.nbgd_kernel_path(4.0)).unwrap();
        let k8 = kernel_read(cfg.nbgd_kernel_path(8.0)).unwrap();
        assert_eq!(k4.meta.trained_power_dbm, Some(4.0));
        assert_eq!(k8.meta.trained_power_dbm, Some(8.0));
        assert_ne!(k4.meta.link_fingerprint, k8.meta.link_fingerprint);
        assert!(cfg.training_log_path(4.0).exists());

        let bytes4 = fs::read(cfg.nbgd_kernel_path(4.0)).unwrap();
        cmd_train(&cfg, &[4.0]).unwrap();
        assert_eq!(fs::read(cfg.nbgd_kernel_path(4.0)).unwrap(), bytes4);

        let recs = cmd_sweep(&cfg).unwrap();
        assert_eq!(recs.len(), 2 * Scheme::ALL.len());
        let csv1 = fs::read_to_string(cfg.out_dir.join("metrics.csv")).unwrap();
        let back = read_metrics_csv(cfg.out_dir.join("metrics.csv")).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in back.iter().zip(&recs) {
            assert_eq!(a.snr_eff_db, b.snr_eff_db);
            assert_eq!(a.config_hash, cfg.config_hash());
            assert!(a.snr_eff_db.is_finite() && a.gmi_b2d.is_finite());
            assert_eq!(a.frames, 4);
        }
        // rerun: identical apart from wall time
        cmd_sweep(&cfg).unwrap();
        let csv2 = fs::read_to_string(cfg.out_dir.join("metrics.csv")).unwrap();
        let strip = |s: &str| s.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
        assert_eq!(strip(&csv1), strip(&csv2));

        // matched mismatch entry equals the sweep's genie-nbgd value
        let mm = run_mismatch(&cfg, &[4.0, 8.0], &[8.0]).unwrap();
        let sweep_val = recs.iter().find(|r| r.power_dbm == 8.0 && r.scheme == Scheme::GenieNbgd).unwrap();
        let matched = mm.iter().find(|r| r.kernel_trained_dbm == Some(8.0)).unwrap();
        assert_eq!(matched.snr_eff_db, sweep_val.snr_eff_db);
        let trad = mm.iter().find(|r| r.kernel_trained_dbm.is_none()).unwrap();
        let sweep_trad = recs.iter().find(|r| r.power_dbm == 8.0 && r.scheme == Scheme::Traditional).unwrap();
        assert_eq!(trad.snr_eff_db, sweep_trad.snr_eff_db);
    }

    #[test]
    fn zero_kernel_genie_equals_traditional() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            powers_dbm: vec![6.0],
            ..tiny_config(dir.path())
        };
        let code = LdpcCode::ieee80211_n648_r34();
        let data = simulate_point(&cfg, &code, 6.0, true, false).unwrap();
        let zero = KernelTensor::zeros(1, crate::frp::KernelMeta::new(KernelOrigin::Nbgd));
        let a = evaluate(&data, Link::Full, None, &cfg, Some(&code)).unwrap();
        let b = evaluate(&data, Link::Full, Some(&zero), &cfg, Some(&code)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_csv_schema_errors_name_the_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "power_dbm,scheme,oops\n1,traditional,x\n").unwrap();
        match read_metrics_csv(&p) {
            Err(NliError::Schema { column, .. }) => assert_eq!(column, "kernel_origin"),
            other => panic!("{other:?}"),
        }
        let rec = MetricsRecord {
            power_dbm: 1.0,
            scheme: Scheme::Traditional,
            kernel_origin: None,
            kernel_trained_dbm: None,
            kernel_file: None,
            snr_eff_db: 10.0,
            gmi_b2d: 3.0,
            ber_pre: 0.01,
            fer: 0.0,
            fer_ci_lo: 0.0,
            fer_ci_hi: 0.1,
            frames: 10,
            seed: 1,
            config_hash: "abc".into(),
            wall_s: 0.5,
        };
        write_metrics_csv(&p, &[rec.clone()]).unwrap();
        let text = fs::read_to_string(&p).unwrap().replace("10,3,", "ten,3,");
        fs::write(&p, text).unwrap();
        match read_metrics_csv(&p) {
            Err(NliError::Schema { column, .. }) => assert_eq!(column, "snr_eff_db"),
            other => panic!("{other:?}"),
        }
    }
}
