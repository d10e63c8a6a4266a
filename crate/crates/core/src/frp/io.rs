//! Binary kernel files.
//!
//! Little-endian layout: magic `NBGK`, u32 version (1), u16 memory M,
//! u8 origin (0 analytic, 1 nbgd), f64 trained power in dBm (NaN if unset),
//! 32-byte link fingerprint, then (2M+1)³ entries as (re, im) f64 pairs in
//! k, l, m row-major order.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use super::{KernelMeta, KernelOrigin, KernelTensor};
use crate::error::{NliError, Result};

const MAGIC: &[u8; 4] = b"NBGK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 2 + 1 + 8 + 32;

pub fn kernel_to_bytes(k: &KernelTensor) -> Result<Vec<u8>> {
    let memory = u16::try_from(k.memory()).map_err(|_| NliError::Format(format!("memory {} exceeds u16", k.memory())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 16 * k.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&memory.to_le_bytes());
    out.push(match k.meta.origin {
        KernelOrigin::Analytic => 0,
        KernelOrigin::Nbgd => 1,
    });
    out.extend_from_slice(&k.meta.trained_power_dbm.unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&k.meta.link_fingerprint);
    for v in k.values() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

fn f64_at(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn kernel_from_bytes(b: &[u8]) -> Result<KernelTensor> {
    if b.len() < HEADER_LEN {
        return Err(NliError::Format(format!("truncated header: {} bytes", b.len())));
    }
    if &b[0..4] != MAGIC {
        return Err(NliError::Format(format!("bad magic {:?}", &b[0..4])));
    }
    let version = u32::from_le_bytes(b[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(NliError::Format(format!("unsupported version {version}")));
    }
    let memory = u16::from_le_bytes(b[8..10].try_into().unwrap()) as usize;
    let origin = match b[10] {
        0 => KernelOrigin::Analytic,
        1 => KernelOrigin::Nbgd,
        o => return Err(NliError::Format(format!("unknown origin tag {o}"))),
    };
    let power = f64_at(b, 11);
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(&b[19..51]);
    let side = 2 * memory + 1;
    let count = side * side * side;
    let payload = &b[HEADER_LEN..];
    if payload.len() != 16 * count {
        return Err(NliError::Format(format!(
            "memory {memory} implies {} payload bytes, found {}",
            16 * count,
            payload.len()
        )));
    }
    let values: Vec<Complex64> = payload
        .chunks_exact(16)
        .map(|c| Complex64::new(f64_at(c, 0), f64_at(c, 8)))
        .collect();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(NliError::Format("non-finite kernel entry".into()));
    }
    let meta = KernelMeta {
        origin,
        trained_power_dbm: if power.is_nan() { None } else { Some(power) },
        link_fingerprint: fingerprint,
    };
    KernelTensor::from_values(memory, values, meta)
}

pub fn kernel_write(path: impl AsRef<Path>, k: &KernelTensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, kernel_to_bytes(k)?)?;
    Ok(())
}

pub fn kernel_read(path: impl AsRef<Path>) -> Result<KernelTensor> {
    kernel_from_bytes(&fs::read(path)?)
}
