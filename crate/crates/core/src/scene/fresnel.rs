use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;

/// Signed Fresnel amplitude reflectances `(r_s, r_p)` for light in air hitting a
/// dielectric of index `eta`. `r_p` follows the convention where `r_s·r_p < 0` at
/// normal incidence.
pub fn fresnel_amplitudes(eta: f64, incidence: f64) -> Result<(f64, f64)> {
    if !(eta > 1.0) || !eta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "refractive index must exceed 1, got {eta}"
        )));
    }
    if !(0.0..FRAC_PI_2).contains(&incidence) {
        return Err(Error::InvalidArgument(format!(
            "incidence angle must lie in [0, pi/2), got {incidence}"
        )));
    }
    let (sin_i, cos_i) = incidence.sin_cos();
    let sin_t = sin_i / eta;
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let rs = (cos_i - eta * cos_t) / (cos_i + eta * cos_t);
    let rp = (eta * cos_i - cos_t) / (eta * cos_i + cos_t);
    Ok((rs, rp))
}

/// Mueller matrix of specular reflection off a dielectric. The `(s2, s3)` block is
/// `r_s·r_p·I`, so at normal incidence the matrix equals `R·diag(1, 1, −1, −1)`.
pub fn fresnel_mueller(eta: f64, incidence: f64) -> Result<MuellerMatrix> {
    let (rs, rp) = fresnel_amplitudes(eta, incidence)?;
    let (big_rs, big_rp) = (rs * rs, rp * rp);
    let a = 0.5 * (big_rs + big_rp);
    let b = 0.5 * (big_rs - big_rp);
    let c = rs * rp;
    Ok(MuellerMatrix::from_rows([
        [a, b, 0.0, 0.0],
        [b, a, 0.0, 0.0],
        [0.0, 0.0, c, 0.0],
        [0.0, 0.0, 0.0, c],
    ]))
}

/// Brewster angle `arctan(eta)`.
pub fn brewster_angle(eta: f64) -> f64 {
    eta.atan()
}
