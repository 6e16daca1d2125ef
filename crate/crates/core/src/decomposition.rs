//! Lu-Chipman polar decomposition `M = M_Δ · M_R · M_D` and the scalar maps derived
//! from it.

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::polarization::{MuellerMatrix, PHYSICAL_TOL};
use crate::tensor::{PixelGrid, TransportTensor};

/// Diattenuation at or above `1 - SINGULAR_MARGIN` makes `M_D` singular.
pub const SINGULAR_MARGIN: f64 = 1e-9;
/// Blocks dimmer than this fraction of the tensor's brightest `m00` are skipped.
pub const DARK_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecompositionFlags {
    /// `M_D` was not invertible and a pseudo-inverse was used.
    pub singular_diattenuator: bool,
    /// `det(m') < 0`, so the depolarizer block carries a negative sign.
    pub negative_det_branch: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecompositionResult {
    pub depolarizer: MuellerMatrix,
    pub retarder: MuellerMatrix,
    /// Carries the overall transmittance `m00`.
    pub diattenuator: MuellerMatrix,
    pub polarizance: f64,
    pub retardance: f64,
    pub diattenuation: f64,
    pub flags: DecompositionFlags,
}

impl DecompositionResult {
    pub fn recompose(&self) -> MuellerMatrix {
        self.depolarizer * self.retarder * self.diattenuator
    }
}

fn check_m00(m: &MuellerMatrix) -> Result<f64> {
    let m00 = m.m00();
    if !(m00 > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Mueller matrix needs a finite m00 > 0, got {m00}"
        )));
    }
    Ok(m00)
}

fn clamp_unit(value: f64, what: &str) -> f64 {
    if value > 1.0 + PHYSICAL_TOL {
        log::debug!("{what} {value} exceeds 1");
    }
    value.max(0.0)
}

/// `|(m10, m20, m30)| / m00`.
pub fn polarizance(m: &MuellerMatrix) -> Result<f64> {
    let m00 = check_m00(m)?;
    let p = Vector3::new(m.get(1, 0), m.get(2, 0), m.get(3, 0)).norm() / m00;
    Ok(clamp_unit(p, "polarizance"))
}

/// `|(m01, m02, m03)| / m00`.
pub fn diattenuation(m: &MuellerMatrix) -> Result<f64> {
    let m00 = check_m00(m)?;
    let d = Vector3::new(m.get(0, 1), m.get(0, 2), m.get(0, 3)).norm() / m00;
    Ok(clamp_unit(d, "diattenuation"))
}

/// `arccos(tr(M_R)/2 − 1)`, in `[0, π]`.
pub fn retardance(decomp: &DecompositionResult) -> f64 {
    retardance_of(&decomp.retarder)
}

fn retardance_of(m_r: &MuellerMatrix) -> f64 {
    let arg = m_r.0.trace() / 2.0 - 1.0;
    if arg.abs() > 1.0 + 1e-9 {
        log::debug!("retardance arccos argument {arg} clamped");
    }
    arg.clamp(-1.0, 1.0).acos()
}

fn embed3(
    top_left: f64,
    column: Vector3<f64>,
    row: Vector3<f64>,
    block: Matrix3<f64>,
) -> Matrix4<f64> {
    let mut out = Matrix4::zeros();
    out[(0, 0)] = top_left;
    out.fixed_view_mut::<3, 1>(1, 0).copy_from(&column);
    out.fixed_view_mut::<1, 3>(0, 1).copy_from(&row.transpose());
    out.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
    out
}

pub fn lu_chipman(m: &MuellerMatrix) -> Result<DecompositionResult> {
    let m00 = check_m00(m)?;
    let mut flags = DecompositionFlags::default();

    let d_vec = Vector3::new(m.get(0, 1), m.get(0, 2), m.get(0, 3)) / m00;
    let d = d_vec.norm();
    let m_d_block = if d > 0.0 {
        let root = (1.0 - d * d).max(0.0).sqrt();
        let unit = d_vec / d;
        Matrix3::identity() * root + unit * unit.transpose() * (1.0 - root)
    } else {
        Matrix3::identity()
    };
    let m_diat = embed3(1.0, d_vec, d_vec, m_d_block) * m00;

    let m_diat_inv = if d >= 1.0 - SINGULAR_MARGIN {
        flags.singular_diattenuator = true;
        m_diat
            .pseudo_inverse(1e-12 * m00)
            .map_err(|e| Error::Degenerate(format!("diattenuator pseudo-inverse failed: {e}")))?
    } else {
        m_diat
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("diattenuator is not invertible".into()))?
    };
    let m_prime = m.0 * m_diat_inv;
    let p_delta: Vector3<f64> = m_prime.fixed_view::<3, 1>(1, 0).into_owned();
    let small: Matrix3<f64> = m_prime.fixed_view::<3, 3>(1, 1).into_owned();

    // Polar decomposition through the SVD small = U Σ Vᵀ: the symmetric factor is
    // U Σ Uᵀ = sqrt(m' m'ᵀ) and the rotation is U Vᵀ, sign-corrected to det +1.
    let svd = small.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut rotation = u * v_t;
    let sign = if rotation.determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    rotation *= sign;
    flags.negative_det_branch = sign < 0.0 || small.determinant() < 0.0;
    let m_delta_block = small * rotation.transpose();

    let depolarizer = MuellerMatrix(embed3(1.0, p_delta, Vector3::zeros(), m_delta_block));
    let retarder = MuellerMatrix(embed3(1.0, Vector3::zeros(), Vector3::zeros(), rotation));
    let diattenuator = MuellerMatrix(m_diat);
    Ok(DecompositionResult {
        depolarizer,
        retarder,
        diattenuator,
        polarizance: polarizance(m)?,
        retardance: retardance_of(&retarder),
        diattenuation: clamp_unit(d, "diattenuation"),
        flags,
    })
}

/// Per-block decompositions of a tensor, indexed like the tensor's `(s, slot, t)` blocks.
#[derive(Clone, Debug)]
pub struct DecomposedTensor {
    pub camera: PixelGrid,
    pub projector_slots: usize,
    pub bins: usize,
    pub floor: f64,
    pub entries: Vec<Option<DecompositionResult>>,
    pub null_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarMap {
    Polarizance,
    Retardance,
    Diattenuation,
}

impl DecomposedTensor {
    pub fn entry(&self, s: usize, slot: usize, t: usize) -> Option<&DecompositionResult> {
        self.entries[(s * self.projector_slots + slot) * self.bins + t].as_ref()
    }

    /// One scalar per camera pixel for a given projector slot and bin.
    pub fn map(&self, which: ScalarMap, slot: usize, t: usize) -> Vec<Option<f64>> {
        (0..self.camera.len())
            .map(|s| {
                self.entry(s, slot, t).map(|r| match which {
                    ScalarMap::Polarizance => r.polarizance,
                    ScalarMap::Retardance => r.retardance,
                    ScalarMap::Diattenuation => r.diattenuation,
                })
            })
            .collect()
    }
}

/// Lu-Chipman on every polarimetric block whose `m00` clears `DARK_FLOOR` times the
/// brightest block; dimmer or undecomposable blocks become `None`.
pub fn decompose_tensor(tensor: &TransportTensor) -> DecomposedTensor {
    let slots = tensor.stored_projector_len();
    let bins = tensor.bins();
    let total = tensor.camera_len() * slots * bins;
    let block_at = |i: usize| {
        let t = i % bins;
        let rest = i / bins;
        tensor.block_at_slot(rest / slots, rest % slots, t)
    };
    let max_m00 = (0..total).map(|i| block_at(i).m00()).fold(0.0, f64::max);
    let floor = DARK_FLOOR * max_m00;
    let entries: Vec<Option<DecompositionResult>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let m = block_at(i);
            if max_m00 > 0.0 && m.m00() >= floor {
                lu_chipman(&m).ok()
            } else {
                None
            }
        })
        .collect();
    let null_count = entries.iter().filter(|e| e.is_none()).count();
    DecomposedTensor {
        camera: tensor.camera(),
        projector_slots: slots,
        bins,
        floor,
        entries,
        null_count,
    }
}
