//! The 7D transport tensor `T(s, s', p, p', t)` and its contractions and slices.
//!
//! Storage is dense and row-major in the index order `(s, s', p, p', t)`; spatial
//! indices are flattened as `y * width + x`. Coaxial tensors store a single
//! projector slot and mean `s' = s`.

mod io;
mod probe;

pub use io::{read_container, write_container, Container, ContainerKind, MAGIC, VERSION};
pub use probe::{epipolar_masks, probe, ProbeLabel, ProbeMask, RectifiedGeometry};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{MuellerMatrix, StokesVector};

/// Width × height raster with flattened index `y * width + x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn single() -> Self {
        Self::new(1, 1)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    #[inline]
    pub fn row_of(&self, s: usize) -> usize {
        s / self.width
    }
}

/// Provenance attached to every tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    /// Seconds per time bin.
    pub time_bin_width: f64,
    #[serde(default)]
    pub channel_id: String,
    #[serde(default)]
    pub provenance: String,
}

impl Default for TensorMeta {
    fn default() -> Self {
        Self {
            time_bin_width: 1.0,
            channel_id: "mono".into(),
            provenance: String::new(),
        }
    }
}

impl TensorMeta {
    pub fn with_bin_width(time_bin_width: f64) -> Self {
        Self {
            time_bin_width,
            ..Self::default()
        }
    }
}

/// Dense `T(s, s', p, p', t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportTensor {
    camera: PixelGrid,
    projector: PixelGrid,
    coaxial: bool,
    bins: usize,
    data: Vec<f64>,
    pub meta: TensorMeta,
}

fn check_grid(name: &str, g: PixelGrid) -> Result<()> {
    if g.width == 0 || g.height == 0 {
        return Err(Error::InvalidArgument(format!(
            "{name} grid must be at least 1x1, got {}x{}",
            g.width, g.height
        )));
    }
    Ok(())
}

impl TransportTensor {
    pub fn zeros(
        camera: PixelGrid,
        projector: PixelGrid,
        bins: usize,
        meta: TensorMeta,
    ) -> Result<Self> {
        check_grid("camera", camera)?;
        check_grid("projector", projector)?;
        if bins == 0 {
            return Err(Error::InvalidArgument(
                "time bin count must be at least 1".into(),
            ));
        }
        let len = camera.len() * projector.len() * 16 * bins;
        Ok(Self {
            camera,
            projector,
            coaxial: false,
            bins,
            data: vec![0.0; len],
            meta,
        })
    }

    /// Diagonal-coupled tensor storing only `T(s, s, :, :, :)`.
    pub fn coaxial_zeros(camera: PixelGrid, bins: usize, meta: TensorMeta) -> Result<Self> {
        let mut t = Self::zeros(camera, PixelGrid::single(), bins, meta)?;
        t.coaxial = true;
        Ok(t)
    }

    pub fn from_vec(
        camera: PixelGrid,
        projector: PixelGrid,
        coaxial: bool,
        bins: usize,
        data: Vec<f64>,
        meta: TensorMeta,
    ) -> Result<Self> {
        let mut t = if coaxial {
            Self::coaxial_zeros(camera, bins, meta)?
        } else {
            Self::zeros(camera, projector, bins, meta)?
        };
        if coaxial && projector.len() != 1 {
            return Err(Error::DimensionMismatch(
                "coaxial tensors store a single projector slot".into(),
            ));
        }
        if data.len() != t.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, dims require {}",
                data.len(),
                t.data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "tensor values must be finite".into(),
            ));
        }
        t.data = data;
        Ok(t)
    }

    #[inline]
    pub fn camera(&self) -> PixelGrid {
        self.camera
    }

    /// Stored projector grid (1×1 for coaxial tensors).
    #[inline]
    pub fn projector(&self) -> PixelGrid {
        self.projector
    }

    #[inline]
    pub fn is_coaxial(&self) -> bool {
        self.coaxial
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    #[inline]
    pub fn camera_len(&self) -> usize {
        self.camera.len()
    }

    /// Number of stored projector slots.
    #[inline]
    pub fn stored_projector_len(&self) -> usize {
        self.projector.len()
    }

    /// Length of the `s'` axis seen by illumination: the camera size for coaxial tensors.
    pub fn logical_projector_len(&self) -> usize {
        if self.coaxial {
            self.camera.len()
        } else {
            self.projector.len()
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, s: usize, sp_slot: usize, p: usize, pp: usize, t: usize) -> usize {
        (((s * self.projector.len() + sp_slot) * 4 + p) * 4 + pp) * self.bins + t
    }

    /// Maps a logical projector index to its storage slot, `None` when the coupling is
    /// structurally zero (off-diagonal entries of a coaxial tensor).
    #[inline]
    fn slot(&self, s: usize, sp: usize) -> Option<usize> {
        if self.coaxial {
            (s == sp).then_some(0)
        } else {
            Some(sp)
        }
    }

    fn check_indices(&self, s: usize, sp: usize, p: usize, pp: usize, t: usize) -> Result<()> {
        if s >= self.camera.len()
            || sp >= self.logical_projector_len()
            || p >= 4
            || pp >= 4
            || t >= self.bins
        {
            return Err(Error::IndexOutOfRange(format!(
                "T({s},{sp},{p},{pp},{t}) outside ({},{},4,4,{})",
                self.camera.len(),
                self.logical_projector_len(),
                self.bins
            )));
        }
        Ok(())
    }

    /// `T(s, s', p, p', t)` with logical projector index.
    pub fn get(&self, s: usize, sp: usize, p: usize, pp: usize, t: usize) -> Result<f64> {
        self.check_indices(s, sp, p, pp, t)?;
        Ok(self
            .slot(s, sp)
            .map_or(0.0, |slot| self.data[self.offset(s, slot, p, pp, t)]))
    }

    /// Direct access by storage slot; panics on out-of-range indices.
    #[inline]
    pub fn at_slot(&self, s: usize, slot: usize, p: usize, pp: usize, t: usize) -> f64 {
        self.data[self.offset(s, slot, p, pp, t)]
    }

    pub fn set(
        &mut self,
        s: usize,
        sp: usize,
        p: usize,
        pp: usize,
        t: usize,
        value: f64,
    ) -> Result<()> {
        self.check_indices(s, sp, p, pp, t)?;
        let slot = self.slot(s, sp).ok_or_else(|| {
            Error::IndexOutOfRange(format!("coaxial tensor has no ({s},{sp}) coupling"))
        })?;
        let o = self.offset(s, slot, p, pp, t);
        self.data[o] = value;
        Ok(())
    }

    /// Polarimetric block at `(s, s', t)`.
    pub fn block(&self, s: usize, sp: usize, t: usize) -> Result<MuellerMatrix> {
        self.check_indices(s, sp, 0, 0, t)?;
        Ok(match self.slot(s, sp) {
            Some(slot) => self.block_at_slot(s, slot, t),
            None => MuellerMatrix::zeros(),
        })
    }

    pub fn block_at_slot(&self, s: usize, slot: usize, t: usize) -> MuellerMatrix {
        let mut m = MuellerMatrix::zeros();
        for p in 0..4 {
            for pp in 0..4 {
                m.0[(p, pp)] = self.data[self.offset(s, slot, p, pp, t)];
            }
        }
        m
    }

    pub fn set_block(&mut self, s: usize, sp: usize, t: usize, m: &MuellerMatrix) -> Result<()> {
        for p in 0..4 {
            for pp in 0..4 {
                self.set(s, sp, p, pp, t, m.get(p, pp))?;
            }
        }
        Ok(())
    }

    /// Adds `m` into the block at `(s, s', t)`.
    pub fn add_block(&mut self, s: usize, sp: usize, t: usize, m: &MuellerMatrix) -> Result<()> {
        self.check_indices(s, sp, 0, 0, t)?;
        let slot = self.slot(s, sp).ok_or_else(|| {
            Error::IndexOutOfRange(format!("coaxial tensor has no ({s},{sp}) coupling"))
        })?;
        for p in 0..4 {
            for pp in 0..4 {
                let o = self.offset(s, slot, p, pp, t);
                self.data[o] += m.get(p, pp);
            }
        }
        Ok(())
    }

    /// Elementwise `a·self + b·other` for identically shaped tensors.
    pub fn linear_combination(
        &self,
        a: f64,
        other: &TransportTensor,
        b: f64,
    ) -> Result<TransportTensor> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> TransportTensor {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn check_same_shape(&self, other: &TransportTensor) -> Result<()> {
        if self.camera != other.camera
            || self.projector != other.projector
            || self.coaxial != other.coaxial
            || self.bins != other.bins
        {
            return Err(Error::DimensionMismatch("tensor shapes differ".into()));
        }
        Ok(())
    }

    /// Steady-state tensor `Σ_t T(:, :, :, :, t)` with a single bin.
    pub fn sum_time(&self) -> TransportTensor {
        let mut out = TransportTensor {
            camera: self.camera,
            projector: self.projector,
            coaxial: self.coaxial,
            bins: 1,
            data: vec![0.0; self.data.len() / self.bins],
            meta: self.meta.clone(),
        };
        for (dst, chunk) in out.data.iter_mut().zip(self.data.chunks_exact(self.bins)) {
            *dst = chunk.iter().sum();
        }
        out
    }

    /// Per camera pixel and bin, `Σ_{s'} T(s, s', :, :, t)`.
    pub fn sum_projector(&self) -> Vec<Vec<MuellerMatrix>> {
        (0..self.camera.len())
            .map(|s| {
                (0..self.bins)
                    .map(|t| {
                        (0..self.projector.len())
                            .map(|slot| self.block_at_slot(s, slot, t))
                            .fold(MuellerMatrix::zeros(), |a, b| a + b)
                    })
                    .collect()
            })
            .collect()
    }

    /// Spatial light transport matrix `Σ_t T(:, :, 0, 0, t)` (camera × logical projector).
    pub fn slice_spatial(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.camera.len(), self.logical_projector_len());
        for s in 0..self.camera.len() {
            for slot in 0..self.projector.len() {
                let sp = if self.coaxial { s } else { slot };
                let base = self.offset(s, slot, 0, 0, 0);
                out[(s, sp)] = self.data[base..base + self.bins].iter().sum();
            }
        }
        out
    }

    /// Temporal transport vector `Σ_{s,s'} T(s, s', 0, 0, :)`.
    pub fn slice_temporal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        for s in 0..self.camera.len() {
            for slot in 0..self.projector.len() {
                let base = self.offset(s, slot, 0, 0, 0);
                for (o, v) in out.iter_mut().zip(&self.data[base..base + self.bins]) {
                    *o += v;
                }
            }
        }
        out
    }

    /// Time profile `T(s, s', 0, 0, :)` of one pixel pair.
    pub fn temporal_profile(&self, s: usize, sp: usize) -> Result<Vec<f64>> {
        self.check_indices(s, sp, 0, 0, 0)?;
        Ok(match self.slot(s, sp) {
            Some(slot) => {
                let base = self.offset(s, slot, 0, 0, 0);
                self.data[base..base + self.bins].to_vec()
            }
            None => vec![0.0; self.bins],
        })
    }

    /// Polarimetric transport `Σ_{s,s',t} T(s, s', :, :, t)`.
    pub fn slice_polarimetric(&self) -> MuellerMatrix {
        let mut m = MuellerMatrix::zeros();
        for s in 0..self.camera.len() {
            for slot in 0..self.projector.len() {
                for p in 0..4 {
                    for pp in 0..4 {
                        let base = self.offset(s, slot, p, pp, 0);
                        m.0[(p, pp)] += self.data[base..base + self.bins].iter().sum::<f64>();
                    }
                }
            }
        }
        m
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Emitted light `P(s', p', t')`. Steady illumination has one bin and no bin width.
#[derive(Clone, Debug, PartialEq)]
pub struct IlluminationTensor {
    projector: PixelGrid,
    bins: usize,
    data: Vec<f64>,
    pub time_bin_width: Option<f64>,
}

impl IlluminationTensor {
    pub fn steady(projector: PixelGrid, stokes: &[StokesVector]) -> Result<Self> {
        check_grid("projector", projector)?;
        if stokes.len() != projector.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} Stokes vectors for {} projector pixels",
                stokes.len(),
                projector.len()
            )));
        }
        let data = stokes.iter().flat_map(|s| s.as_array()).collect();
        Ok(Self {
            projector,
            bins: 1,
            data,
            time_bin_width: None,
        })
    }

    pub fn zeros(projector: PixelGrid, bins: usize, time_bin_width: Option<f64>) -> Result<Self> {
        check_grid("projector", projector)?;
        if bins == 0 {
            return Err(Error::InvalidArgument(
                "time bin count must be at least 1".into(),
            ));
        }
        Ok(Self {
            projector,
            bins,
            data: vec![0.0; projector.len() * 4 * bins],
            time_bin_width,
        })
    }

    pub fn from_vec(
        projector: PixelGrid,
        bins: usize,
        data: Vec<f64>,
        time_bin_width: Option<f64>,
    ) -> Result<Self> {
        let mut p = Self::zeros(projector, bins, time_bin_width)?;
        if data.len() != p.data.len() {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, dims require {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    #[inline]
    pub fn projector(&self) -> PixelGrid {
        self.projector
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, sp: usize, pp: usize, t: usize) -> f64 {
        self.data[(sp * 4 + pp) * self.bins + t]
    }

    pub fn set_stokes(&mut self, sp: usize, t: usize, s: &StokesVector) -> Result<()> {
        if sp >= self.projector.len() || t >= self.bins {
            return Err(Error::IndexOutOfRange(format!("P({sp}, :, {t})")));
        }
        for pp in 0..4 {
            self.data[(sp * 4 + pp) * self.bins + t] = s.component(pp);
        }
        Ok(())
    }

    pub fn stokes(&self, sp: usize, t: usize) -> StokesVector {
        StokesVector::new(
            self.get(sp, 0, t),
            self.get(sp, 1, t),
            self.get(sp, 2, t),
            self.get(sp, 3, t),
        )
    }

    /// Every `(s', :, t')` slice is a physical Stokes vector.
    pub fn is_physical(&self) -> bool {
        (0..self.projector.len()).all(|sp| (0..self.bins).all(|t| self.stokes(sp, t).is_physical()))
    }

    /// `a·self + b·other`.
    pub fn linear_combination(
        &self,
        a: f64,
        other: &IlluminationTensor,
        b: f64,
    ) -> Result<IlluminationTensor> {
        if self.projector != other.projector || self.bins != other.bins {
            return Err(Error::DimensionMismatch(
                "illumination shapes differ".into(),
            ));
        }
        let mut out = self.clone();
        for (o, v) in out.data.iter_mut().zip(&other.data) {
            *o = a * *o + b * v;
        }
        Ok(out)
    }
}

/// Detected light `I(s, p, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectedTensor {
    camera: PixelGrid,
    bins: usize,
    data: Vec<f64>,
}

impl DetectedTensor {
    pub fn zeros(camera: PixelGrid, bins: usize) -> Self {
        Self {
            camera,
            bins,
            data: vec![0.0; camera.len() * 4 * bins],
        }
    }

    pub fn from_vec(camera: PixelGrid, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != camera.len() * 4 * bins {
            return Err(Error::DimensionMismatch(format!(
                "payload has {} values, dims require {}",
                data.len(),
                camera.len() * 4 * bins
            )));
        }
        Ok(Self { camera, bins, data })
    }

    #[inline]
    pub fn camera(&self) -> PixelGrid {
        self.camera
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, s: usize, p: usize, t: usize) -> f64 {
        self.data[(s * 4 + p) * self.bins + t]
    }

    #[inline]
    fn get_mut(&mut self, s: usize, p: usize, t: usize) -> &mut f64 {
        &mut self.data[(s * 4 + p) * self.bins + t]
    }

    pub fn stokes(&self, s: usize, t: usize) -> StokesVector {
        StokesVector::new(
            self.get(s, 0, t),
            self.get(s, 1, t),
            self.get(s, 2, t),
            self.get(s, 3, t),
        )
    }

    pub fn max_abs_diff(&self, other: &DetectedTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `I(s, p, t) = Σ_{s', p'} T(s, s', p, p', t) · P(s', p')`.
pub fn contract(
    tensor: &TransportTensor,
    illumination: &IlluminationTensor,
) -> Result<DetectedTensor> {
    if illumination.projector.len() != tensor.logical_projector_len() {
        return Err(Error::DimensionMismatch(format!(
            "illumination has {} projector pixels, tensor expects {}",
            illumination.projector.len(),
            tensor.logical_projector_len()
        )));
    }
    if illumination.bins != 1 {
        return Err(Error::DimensionMismatch(
            "contraction takes steady illumination; use convolve_time for timed pulses".into(),
        ));
    }
    let mut out = DetectedTensor::zeros(tensor.camera, tensor.bins);
    for s in 0..tensor.camera.len() {
        for slot in 0..tensor.projector.len() {
            let sp = if tensor.coaxial { s } else { slot };
            for p in 0..4 {
                for pp in 0..4 {
                    let w = illumination.get(sp, pp, 0);
                    if w == 0.0 {
                        continue;
                    }
                    let base = tensor.offset(s, slot, p, pp, 0);
                    for t in 0..tensor.bins {
                        *out.get_mut(s, p, t) += tensor.data[base + t] * w;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Zero-padded causal convolution over time:
/// `I(s, p, t) = Σ_{s', p'} Σ_{t'} T(s, s', p, p', t − t') · P(s', p', t')`.
pub fn convolve_time(
    tensor: &TransportTensor,
    illumination: &IlluminationTensor,
) -> Result<DetectedTensor> {
    if illumination.projector.len() != tensor.logical_projector_len() {
        return Err(Error::DimensionMismatch(format!(
            "illumination has {} projector pixels, tensor expects {}",
            illumination.projector.len(),
            tensor.logical_projector_len()
        )));
    }
    let width = illumination.time_bin_width.ok_or_else(|| {
        Error::DimensionMismatch("timed illumination needs a time bin width".into())
    })?;
    let reference = tensor.meta.time_bin_width;
    if (width - reference).abs() > 1e-12 * reference.abs().max(width.abs()) {
        return Err(Error::DimensionMismatch(format!(
            "time bin widths differ: tensor {reference:e} s, illumination {width:e} s"
        )));
    }
    let gamma = tensor.bins;
    let mut out = DetectedTensor::zeros(tensor.camera, gamma);
    for s in 0..tensor.camera.len() {
        for slot in 0..tensor.projector.len() {
            let sp = if tensor.coaxial { s } else { slot };
            for p in 0..4 {
                for pp in 0..4 {
                    let base = tensor.offset(s, slot, p, pp, 0);
                    let kernel = &tensor.data[base..base + gamma];
                    for tp in 0..illumination.bins.min(gamma) {
                        let w = illumination.get(sp, pp, tp);
                        if w == 0.0 {
                            continue;
                        }
                        for t in tp..gamma {
                            *out.get_mut(s, p, t) += kernel[t - tp] * w;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
