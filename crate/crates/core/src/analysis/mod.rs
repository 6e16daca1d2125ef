//! Analysis pipelines on top of reconstructed transport: arctangent-mapped PCA of
//! Mueller samples, descattering weights, and slice expressions.

mod descatter;
mod lbfgs;
mod pca;
pub mod slice;

pub use descatter::{
    apply_descatter, epipolar_image, fit_descatter, psnr, synthetic_composite, ChannelModel,
    DescatterModel, DescatterOptions, FeatureSet, PolarimetricImage, SyntheticComposite,
};
pub use lbfgs::{minimize, LbfgsOptions, LbfgsReport, StopReason};
pub use pca::{build_observation, pca, ObservationMatrix, PrincipalBasis};

use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;

/// Default mapping scale.
pub const ARCTAN_SCALE: f64 = 8.0;

fn check_scale(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mapping scale must be > 0, got {c}"
        )));
    }
    Ok(())
}

/// Elementwise `arctan(c·m)`.
pub fn arctan_map(m: &MuellerMatrix, c: f64) -> Result<MuellerMatrix> {
    check_scale(c)?;
    Ok(MuellerMatrix(m.0.map(|v| (c * v).atan())))
}

/// Elementwise `tan(y)/c`; every entry must lie strictly inside `(−π/2, π/2)`.
pub fn arctan_unmap(y: &MuellerMatrix, c: f64) -> Result<MuellerMatrix> {
    check_scale(c)?;
    if let Some(v) =
        y.0.iter()
            .find(|v| !(v.abs() < std::f64::consts::FRAC_PI_2))
    {
        return Err(Error::InvalidArgument(format!(
            "entry {v} is outside (-pi/2, pi/2)"
        )));
    }
    Ok(MuellerMatrix(y.0.map(|v| v.tan() / c)))
}
