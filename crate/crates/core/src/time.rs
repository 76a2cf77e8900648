//! Picosecond time base. Timestamps are signed 64-bit picoseconds.

pub const PS_PER_S: f64 = 1e12;

pub fn s_to_ps(s: f64) -> i64 {
    (s * PS_PER_S).round() as i64
}

pub fn ps_to_s(ps: i64) -> f64 {
    ps as f64 / PS_PER_S
}

/// Gaussian standard deviation for a given FWHM.
pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}
