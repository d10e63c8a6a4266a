//! Link parameters shared by every stage of the chain.
//!
//! Defaults reproduce the single-span, single-channel link studied here:
//! γ = 1.2 /W/km, α = 0.2 dB/km, β2 = −21.7 ps²/km, L = 230 km, 60 GBd RRC
//! signalling with roll-off 0.01 and a perturbation memory of 9 symbols.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NliError, Result};
use crate::units::{alpha_lin_per_km, dbm_to_w};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberParams {
    /// Nonlinear coefficient in 1/(W·km).
    pub gamma: f64,
    pub alpha_db_per_km: f64,
    /// Group-velocity dispersion in ps²/km.
    pub beta2: f64,
    pub length_km: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        FiberParams {
            gamma: 1.2,
            alpha_db_per_km: 0.2,
            beta2: -21.7,
            length_km: 230.0,
        }
    }
}

impl FiberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0) {
            return Err(NliError::Config(format!("fiber length must be > 0, got {}", self.length_km)));
        }
        if !(self.gamma >= 0.0) {
            return Err(NliError::Config(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        if !(self.alpha_db_per_km >= 0.0) {
            return Err(NliError::Config(format!(
                "attenuation must be ≥ 0, got {}",
                self.alpha_db_per_km
            )));
        }
        if !self.beta2.is_finite() {
            return Err(NliError::Config("beta2 must be finite".into()));
        }
        Ok(())
    }

    /// Power attenuation coefficient in 1/km.
    pub fn alpha_lin(&self) -> f64 {
        alpha_lin_per_km(self.alpha_db_per_km)
    }

    /// β2 in s²/km.
    pub fn beta2_si(&self) -> f64 {
        self.beta2 * crate::units::PS2
    }

    /// Effective nonlinear length (1 − e^{−αL})/α in km.
    pub fn effective_length(&self) -> f64 {
        effective_length(self.alpha_lin(), self.length_km)
    }

    /// Span gain needed to compensate the fiber loss, in dB.
    pub fn span_loss_db(&self) -> f64 {
        self.alpha_db_per_km * self.length_km
    }
}

/// ∫₀^len e^{−αz} dz.
pub fn effective_length(alpha_lin: f64, len: f64) -> f64 {
    if alpha_lin * len < 1e-12 {
        len
    } else {
        -(-alpha_lin * len).exp_m1() / alpha_lin
    }
}

/// How the ASE variance is specified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// Fixed variance per complex dimension in normalized symbol units.
    Variance { sigma2: f64 },
    /// Amplifier noise figure; the gain always equals the span loss.
    NoiseFigure { nf_db: f64, center_freq_hz: f64 },
}

impl NoiseSpec {
    pub fn default_center_freq() -> f64 {
        193.41e12
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::NoiseFigure {
            nf_db: 5.0,
            center_freq_hz: NoiseSpec::default_center_freq(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkConfig {
    pub fiber: FiberParams,
    pub symbol_rate_hz: f64,
    pub roll_off: f64,
    /// Samples per symbol of the simulated waveform.
    pub osf: usize,
    /// Perturbation memory M; the kernel cube is [−M, M]³.
    pub memory: usize,
    pub power_dbm: f64,
    pub noise: NoiseSpec,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            fiber: FiberParams::default(),
            symbol_rate_hz: 60e9,
            roll_off: 0.01,
            osf: 8,
            memory: 9,
            power_dbm: 14.0,
            noise: NoiseSpec::default(),
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.fiber.validate()?;
        if !(self.symbol_rate_hz > 0.0) {
            return Err(NliError::Config("symbol rate must be > 0".into()));
        }
        if !(self.roll_off > 0.0 && self.roll_off <= 1.0) {
            return Err(NliError::Config(format!("roll-off must be in (0, 1], got {}", self.roll_off)));
        }
        if self.osf < 2 {
            return Err(NliError::Config(format!("osf must be ≥ 2, got {}", self.osf)));
        }
        if !self.power_dbm.is_finite() {
            return Err(NliError::Config("launch power must be finite".into()));
        }
        Ok(())
    }

    pub fn with_power(&self, power_dbm: f64) -> LinkConfig {
        LinkConfig {
            power_dbm,
            ..self.clone()
        }
    }

    pub fn power_w(&self) -> f64 {
        dbm_to_w(self.power_dbm)
    }

    /// Symbol energy per polarization, Es = P / (2 Rs).
    pub fn es(&self) -> f64 {
        self.power_w() / (2.0 * self.symbol_rate_hz)
    }

    pub fn symbol_period(&self) -> f64 {
        1.0 / self.symbol_rate_hz
    }

    pub fn sample_rate(&self) -> f64 {
        self.osf as f64 * self.symbol_rate_hz
    }

    /// ASE variance per complex dimension after matched filtering and 1/√Es scaling.
    pub fn sigma_n_sq(&self) -> f64 {
        match self.noise {
            NoiseSpec::Variance { sigma2 } => sigma2,
            NoiseSpec::NoiseFigure { nf_db, center_freq_hz } => crate::channel::sigma_from_nf(
                nf_db,
                self.fiber.span_loss_db(),
                center_freq_hz,
                self.symbol_rate_hz,
                self.es(),
            ),
        }
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("LinkConfig serializes");
        Sha256::digest(&bytes).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn es_at_14_dbm() {
        let cfg = LinkConfig::default();
        let es = cfg.es();
        assert!((es * 2.0 * 60e9 - 0.025_118_864).abs() < 1e-9);
    }

    #[test]
    fn effective_length_limits() {
        assert_eq!(effective_length(0.0, 80.0), 80.0);
        let fp = FiberParams::default();
        let a = fp.alpha_lin();
        let expect = (1.0 - (-a * 230.0).exp()) / a;
        assert!((fp.effective_length() - expect).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_tracks_power() {
        let a = LinkConfig::default();
        let b = a.with_power(15.0);
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.clone().fingerprint());
    }

    #[test]
    fn rejects_bad_fiber() {
        let mut fp = FiberParams::default();
        fp.length_km = 0.0;
        assert!(fp.validate().is_err());
        fp.length_km = 1.0;
        fp.gamma = -1.0;
        assert!(fp.validate().is_err());
    }
}
