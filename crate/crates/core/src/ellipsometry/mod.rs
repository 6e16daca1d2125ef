//! Rotating-ellipsometry capture and per-pixel Mueller reconstruction.
//!
//! Each capture `k` sets a source linear polarizer and quarter-wave plate
//! (`θ¹`, `θ²`) and a detector quarter-wave plate and linear polarizer (`θ³`, `θ⁴`).
//! The recorded intensity is linear in the scene's Mueller matrix,
//! `I_k = r_k · M · c_k = A_k · vec(M)`, so reconstruction is a least-squares solve
//! against the design matrix `A`.

mod capture;
mod design;
mod reconstruct;
mod schedule;

pub use capture::{capture, MeasurementLayout, MeasurementSet};
pub use design::{
    design_matrix, design_matrix_with, forward_intensity, forward_intensity_with, outer_row,
    raw_design_matrix, row_derivatives, row_vectors, DesignMatrix, OpticalPath, RowDerivatives,
    RowVectors, RANK_TOL,
};
pub use reconstruct::{reconstruct, reconstruct_with, BlockResidual, Reconstruction};
pub use schedule::{drr_schedule, AngleSchedule, SensorMode, ANALYZER_ANGLES};
