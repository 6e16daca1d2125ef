use nalgebra::DVector;
use rayon::prelude::*;

use super::capture::{MeasurementLayout, MeasurementSet};
use super::design::{design_matrix_with, DesignMatrix};
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;
use crate::tensor::{TensorMeta, TransportTensor};

/// Least-squares residual of one reconstructed block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockResidual {
    pub camera_pixel: usize,
    pub projector_slot: usize,
    pub bin: usize,
    pub residual_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Reconstruction {
    /// Blocks laid out like the measurement: coaxial for temporal captures, a full
    /// projector raster per pixel, or a single slot for probed captures.
    pub tensor: TransportTensor,
    pub rank: usize,
    pub condition_number: f64,
    /// Set when the design has rank below 16 and the minimum-norm solution was used.
    pub underdetermined: bool,
    pub residuals: Vec<BlockResidual>,
}

impl Reconstruction {
    /// Diagnostics as CSV, one row per reconstructed block.
    pub fn diagnostics_csv(&self) -> String {
        let mut out =
            String::from("camera_pixel,projector_slot,bin,residual_norm,rank,condition_number\n");
        for r in &self.residuals {
            out.push_str(&format!(
                "{},{},{},{:e},{},{:e}\n",
                r.camera_pixel,
                r.projector_slot,
                r.bin,
                r.residual_norm,
                self.rank,
                self.condition_number
            ));
        }
        out
    }
}

/// Per-block least-squares estimate `vec(M) = A⁺ I`. The pseudo-inverse is computed
/// once from the measurement's schedule and optical path.
pub fn reconstruct(meas: &MeasurementSet) -> Result<Reconstruction> {
    let design = design_matrix_with(&meas.schedule, &meas.path)?;
    reconstruct_with(meas, &design)
}

pub fn reconstruct_with(meas: &MeasurementSet, design: &DesignMatrix) -> Result<Reconstruction> {
    if design.rows() != meas.rows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, measurement {}",
            design.rows(),
            meas.rows()
        )));
    }
    if !design.is_full_rank() {
        log::warn!(
            "design matrix has rank {} < 16; returning minimum-norm solutions",
            design.rank
        );
    }
    let meta = TensorMeta {
        time_bin_width: meas.time_bin_width,
        channel_id: meas.channel_id.clone(),
        provenance: format!(
            "reconstructed from {} rows; {}",
            meas.rows(),
            meas.provenance
        ),
    };
    let mut tensor = match meas.layout {
        MeasurementLayout::Temporal => {
            TransportTensor::coaxial_zeros(meas.camera, meas.bins, meta)?
        }
        MeasurementLayout::PerProjectorPixel | MeasurementLayout::Probed => {
            TransportTensor::zeros(meas.camera, meas.projector, meas.bins, meta)?
        }
    };
    let slots = meas.projector.len();
    let bins = meas.bins;
    let blocks: Vec<(MuellerMatrix, BlockResidual)> = (0..meas.camera.len() * slots * bins)
        .into_par_iter()
        .map(|i| {
            let t = i % bins;
            let sp = (i / bins) % slots;
            let s = i / (bins * slots);
            let y = DVector::from_vec(meas.intensities(s, sp, t));
            let x = &design.pseudo_inverse * &y;
            let residual_norm = (&design.a * &x - &y).norm();
            let m = MuellerMatrix::from_row_major(x.as_slice()).expect("16 entries");
            (
                m,
                BlockResidual {
                    camera_pixel: s,
                    projector_slot: sp,
                    bin: t,
                    residual_norm,
                },
            )
        })
        .collect();
    let mut residuals = Vec::with_capacity(blocks.len());
    for (m, r) in blocks {
        let sp = if tensor.is_coaxial() {
            r.camera_pixel
        } else {
            r.projector_slot
        };
        tensor.set_block(r.camera_pixel, sp, r.bin, &m)?;
        residuals.push(r);
    }
    Ok(Reconstruction {
        tensor,
        rank: design.rank,
        condition_number: design.condition_number,
        underdetermined: !design.is_full_rank(),
        residuals,
    })
}
