//! Unit conversions and physical constants. Powers are always logged in dBm.

pub const PLANCK: f64 = 6.626_070_15e-34;

/// ps²/km → s²/km
pub const PS2: f64 = 1e-24;

pub fn dbm_to_w(dbm: f64) -> f64 {
    1e-3 * 10f64.powf(dbm / 10.0)
}

pub fn w_to_dbm(w: f64) -> f64 {
    10.0 * (w / 1e-3).log10()
}

pub fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Power attenuation coefficient in 1/km from a loss in dB/km.
pub fn alpha_lin_per_km(alpha_db_per_km: f64) -> f64 {
    alpha_db_per_km / (10.0 * std::f64::consts::E.log10())
}

/// Stable key for a launch power, used for seeding and file names.
pub fn power_key(dbm: f64) -> i64 {
    (dbm * 100.0).round() as i64
}
