//! Stokes-Mueller algebra and the Mueller matrices of the polarizing optics.
//!
//! Convention: the Mueller rotation matrix is
//! `R(θ) = [[1,0,0,0],[0,cos2θ,−sin2θ,0],[0,sin2θ,cos2θ,0],[0,0,0,1]]`, an element
//! oriented at θ is `R(θ)·M(0)·R(−θ)`, and a retarder with horizontal fast axis acts on
//! `(s2, s3)` as `[[cosδ, sinδ], [−sinδ, cosδ]]`. `s3 > 0` is right-circular as seen by
//! the receiver. All angles are radians.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::ops::{Add, Mul};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for the physicality predicates, relative to `s0²` / `m00`.
pub const PHYSICAL_TOL: f64 = 1e-9;

/// Four-component polarization state `(s0, s1, s2, s3)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StokesVector(pub Vector4<f64>);

impl StokesVector {
    pub fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self(Vector4::new(s0, s1, s2, s3))
    }

    pub fn zero() -> Self {
        Self(Vector4::zeros())
    }

    /// Fully unpolarized light of the given radiance.
    pub fn unpolarized(radiance: f64) -> Self {
        Self::new(radiance, 0.0, 0.0, 0.0)
    }

    #[inline]
    pub fn s0(&self) -> f64 {
        self.0[0]
    }

    #[inline]
    pub fn component(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.0[0], self.0[1], self.0[2], self.0[3]]
    }

    /// Norm of the polarized part `sqrt(s1² + s2² + s3²)`.
    pub fn polarized_radiance(&self) -> f64 {
        (self.0[1] * self.0[1] + self.0[2] * self.0[2] + self.0[3] * self.0[3]).sqrt()
    }

    /// `s0 ≥ 0` and `s0² ≥ s1² + s2² + s3²` up to `tol·s0²`.
    pub fn is_physical_with(&self, tol: f64) -> bool {
        let s0 = self.s0();
        if !self.0.iter().all(|v| v.is_finite()) || s0 < -tol {
            return false;
        }
        let p2 = self.polarized_radiance().powi(2);
        s0 * s0 - p2 >= -tol * (s0 * s0).max(f64::MIN_POSITIVE)
    }

    pub fn is_physical(&self) -> bool {
        self.is_physical_with(PHYSICAL_TOL)
    }

    pub fn degree_of_polarization(&self) -> Result<f64> {
        degree_of_polarization(self)
    }
}

impl Add for StokesVector {
    type Output = StokesVector;
    fn add(self, rhs: StokesVector) -> StokesVector {
        StokesVector(self.0 + rhs.0)
    }
}

impl Mul<f64> for StokesVector {
    type Output = StokesVector;
    fn mul(self, rhs: f64) -> StokesVector {
        StokesVector(self.0 * rhs)
    }
}

/// 4×4 real polarimetric transfer operator. Row index is the outgoing Stokes
/// component, column index the incoming one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuellerMatrix(pub Matrix4<f64>);

impl MuellerMatrix {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn zeros() -> Self {
        Self(Matrix4::zeros())
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Self {
        Self(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    pub fn diagonal(d: [f64; 4]) -> Self {
        Self(Matrix4::from_diagonal(&Vector4::from(d)))
    }

    /// Builds a matrix from its row-major flattening.
    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(Error::DimensionMismatch(format!(
                "Mueller matrix needs 16 entries, got {}",
                v.len()
            )));
        }
        Ok(Self(Matrix4::from_fn(|i, j| v[4 * i + j])))
    }

    /// Row-major flattening `vec(M)` (entry `(i, j)` at index `4i + j`).
    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                out[4 * i + j] = self.0[(i, j)];
            }
        }
        out
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    #[inline]
    pub fn m00(&self) -> f64 {
        self.0[(0, 0)]
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0 * factor)
    }

    pub fn apply(&self, s: &StokesVector) -> StokesVector {
        StokesVector(self.0 * s.0)
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &MuellerMatrix) -> f64 {
        (self.0 - other.0).abs().max()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Passive-element predicate: `m00 ≥ 0` and `m00 ≥ |m_ij|` for all entries.
    pub fn is_passive_valid(&self) -> bool {
        let m00 = self.m00();
        if !self.is_finite() || m00 < 0.0 {
            return false;
        }
        let slack = PHYSICAL_TOL * m00.max(f64::MIN_POSITIVE);
        self.0.iter().all(|v| v.abs() <= m00 + slack)
    }

    /// Mueller rotation matrix `R(θ)`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = (2.0 * theta).sin_cos();
        Self::from_rows([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c, -s, 0.0],
            [0.0, s, c, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }

    /// `dR(θ)/dθ`.
    pub fn rotation_derivative(theta: f64) -> Self {
        let (s, c) = (2.0 * theta).sin_cos();
        Self::from_rows([
            [0.0, 0.0, 0.0, 0.0],
            [0.0, -2.0 * s, -2.0 * c, 0.0],
            [0.0, 2.0 * c, -2.0 * s, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ])
    }

    /// `R(θ)·self·R(−θ)`: this element physically rotated by θ.
    pub fn rotated(&self, theta: f64) -> Self {
        Self(Self::rotation(theta).0 * self.0 * Self::rotation(-theta).0)
    }

    /// `d/dθ [R(θ)·self·R(−θ)]`.
    pub fn rotated_derivative(&self, theta: f64) -> Self {
        let r = Self::rotation(theta).0;
        let rm = Self::rotation(-theta).0;
        let dr = Self::rotation_derivative(theta).0;
        let drm = Self::rotation_derivative(-theta).0;
        Self(dr * self.0 * rm - r * self.0 * drm)
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;
    fn mul(self, rhs: MuellerMatrix) -> MuellerMatrix {
        MuellerMatrix(self.0 * rhs.0)
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;
    fn mul(self, rhs: StokesVector) -> StokesVector {
        self.apply(&rhs)
    }
}

impl Add for MuellerMatrix {
    type Output = MuellerMatrix;
    fn add(self, rhs: MuellerMatrix) -> MuellerMatrix {
        MuellerMatrix(self.0 + rhs.0)
    }
}

impl fmt::Display for MuellerMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..4 {
            writeln!(
                f,
                "[{:+.6} {:+.6} {:+.6} {:+.6}]",
                self.0[(i, 0)],
                self.0[(i, 1)],
                self.0[(i, 2)],
                self.0[(i, 3)]
            )?;
        }
        Ok(())
    }
}

/// Operating mode of the non-polarizing beamsplitter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Transmit,
    Reflect,
}

/// Optical elements appearing in the imaging chains.
#[derive(Clone, Debug, PartialEq)]
pub enum PolarizingElement {
    LinearPolarizer(f64),
    QuarterWavePlate(f64),
    /// Linear retarder: fast-axis angle and retardance.
    Retarder(f64, f64),
    /// Optical rotator turning the polarization plane by the given angle.
    Rotator(f64),
    IdealMirror,
    NonPolarizingBeamsplitter {
        mode: SplitMode,
        split: f64,
    },
    /// Galvo mirror steering toward a flattened pixel index. Modeled as an ideal
    /// mirror regardless of orientation.
    GalvoMirror(usize),
    CustomMueller(MuellerMatrix),
}

fn linear_polarizer_at_zero() -> MuellerMatrix {
    MuellerMatrix::from_rows([
        [0.5, 0.5, 0.0, 0.0],
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ])
}

fn retarder_at_zero(delta: f64) -> MuellerMatrix {
    let (s, c) = delta.sin_cos();
    MuellerMatrix::from_rows([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, c, s],
        [0.0, 0.0, -s, c],
    ])
}

fn mirror() -> MuellerMatrix {
    MuellerMatrix::diagonal([1.0, 1.0, -1.0, -1.0])
}

/// Mueller matrix of a single element.
pub fn mueller_of(element: &PolarizingElement) -> MuellerMatrix {
    match *element {
        PolarizingElement::LinearPolarizer(theta) => linear_polarizer(theta),
        PolarizingElement::QuarterWavePlate(theta) => quarter_wave_plate(theta),
        PolarizingElement::Retarder(theta, delta) => retarder(theta, delta),
        PolarizingElement::Rotator(theta) => MuellerMatrix::rotation(theta),
        PolarizingElement::IdealMirror | PolarizingElement::GalvoMirror(_) => mirror(),
        PolarizingElement::NonPolarizingBeamsplitter { mode, split } => match mode {
            SplitMode::Transmit => MuellerMatrix::identity().scaled(split),
            SplitMode::Reflect => mirror().scaled(split),
        },
        PolarizingElement::CustomMueller(m) => m,
    }
}

pub fn linear_polarizer(theta: f64) -> MuellerMatrix {
    linear_polarizer_at_zero().rotated(theta)
}

pub fn quarter_wave_plate(theta: f64) -> MuellerMatrix {
    retarder(theta, FRAC_PI_2)
}

pub fn retarder(theta: f64, delta: f64) -> MuellerMatrix {
    retarder_at_zero(delta).rotated(theta)
}

/// Derivative of `linear_polarizer(θ)` with respect to θ.
pub fn linear_polarizer_derivative(theta: f64) -> MuellerMatrix {
    linear_polarizer_at_zero().rotated_derivative(theta)
}

/// Derivative of `quarter_wave_plate(θ)` with respect to θ.
pub fn quarter_wave_plate_derivative(theta: f64) -> MuellerMatrix {
    retarder_at_zero(FRAC_PI_2).rotated_derivative(theta)
}

pub fn apply(m: &MuellerMatrix, s: &StokesVector) -> StokesVector {
    m.apply(s)
}

/// Product of a chain listed in optical order reversed: the last element is the
/// first one light passes through.
pub fn compose(chain: &[MuellerMatrix]) -> Result<MuellerMatrix> {
    let (first, rest) = chain.split_first().ok_or(Error::EmptyChain)?;
    Ok(rest.iter().fold(*first, |acc, m| acc * *m))
}

/// `sqrt(s1² + s2² + s3²) / s0`, clamped to `[0, 1]`.
pub fn degree_of_polarization(s: &StokesVector) -> Result<f64> {
    let s0 = s.s0();
    if !(s0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degree of polarization needs s0 > 0, got {s0}"
        )));
    }
    let dop = s.polarized_radiance() / s0;
    if dop > 1.0 + PHYSICAL_TOL {
        log::debug!("degree of polarization {dop} exceeds 1, clamping");
    }
    Ok(dop.clamp(0.0, 1.0))
}
