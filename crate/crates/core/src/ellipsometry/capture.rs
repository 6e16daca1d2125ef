use std::io::{Read, Write};

use nalgebra::{Matrix4, RowVector4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::design::{row_vectors, OpticalPath, RowVectors};
use super::schedule::AngleSchedule;
use crate::error::{Error, Result};
use crate::tensor::{
    read_container, write_container, Container, ContainerKind, PixelGrid, ProbeLabel, ProbeMask,
    TransportTensor,
};

/// What the intensities of a [`MeasurementSet`] are indexed by besides `(s, k')`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementLayout {
    /// Coaxial capture: one intensity per time bin, `(s, k', t)`.
    Temporal,
    /// Every projector pixel lit on its own, steady state: `(s, s', k')`.
    PerProjectorPixel,
    /// All projector pixels lit through a probe mask, steady state: `(s, k')`.
    Probed,
}

/// Captured intensities, stored in the order `(s, s', k', t)` with `k'` running
/// over design-matrix rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub schedule: AngleSchedule,
    pub path: OpticalPath,
    pub layout: MeasurementLayout,
    pub camera: PixelGrid,
    /// Projector raster for `PerProjectorPixel`, otherwise a single slot.
    pub projector: PixelGrid,
    pub bins: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mask: Option<ProbeLabel>,
    pub time_bin_width: f64,
    pub channel_id: String,
    pub provenance: String,
    pub data: Vec<f64>,
}

impl MeasurementSet {
    pub fn rows(&self) -> usize {
        self.schedule.rows()
    }

    /// Intensity vector over `k'` for one `(s, s', t)`.
    pub fn intensities(&self, s: usize, sp: usize, t: usize) -> Vec<f64> {
        let rows = self.rows();
        let base = (s * self.projector.len() + sp) * rows * self.bins;
        (0..rows)
            .map(|k| self.data[base + k * self.bins + t])
            .collect()
    }

    pub fn get(&self, s: usize, sp: usize, k: usize, t: usize) -> f64 {
        let rows = self.rows();
        self.data[((s * self.projector.len() + sp) * rows + k) * self.bins + t]
    }

    pub fn to_container(&self) -> Result<Container> {
        let meta = MeasurementMeta {
            layout: self.layout,
            path: self.path,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
            mask: self.mask,
            time_bin_width: self.time_bin_width,
            channel_id: self.channel_id.clone(),
            provenance: self.provenance.clone(),
            schedule: self.schedule.to_toml()?,
        };
        Ok(Container {
            kind: ContainerKind::Measurement,
            dims: [
                self.camera.width as u32,
                self.camera.height as u32,
                self.projector.width as u32,
                self.projector.height as u32,
                self.rows() as u32,
                1,
                self.bins as u32,
            ],
            coaxial: self.layout == MeasurementLayout::Temporal,
            payload: self.data.clone(),
            metadata: toml::to_string(&meta)
                .map_err(|e| Error::Format(format!("metadata serialization: {e}")))?,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        if c.kind != ContainerKind::Measurement {
            return Err(Error::Format(format!(
                "expected a Measurement payload, found {:?}",
                c.kind
            )));
        }
        let meta: MeasurementMeta = toml::from_str(&c.metadata)
            .map_err(|e| Error::Format(format!("measurement metadata: {e}")))?;
        let schedule = AngleSchedule::from_toml(&meta.schedule)?;
        let d = c.dims.map(|v| v as usize);
        if d[4] != schedule.rows() || d[5] != 1 {
            return Err(Error::Format(format!(
                "measurement has {}x{} rows but its schedule needs {}",
                d[4],
                d[5],
                schedule.rows()
            )));
        }
        Ok(Self {
            schedule,
            path: meta.path,
            layout: meta.layout,
            camera: PixelGrid::new(d[0], d[1]),
            projector: PixelGrid::new(d[2], d[3]),
            bins: d[6],
            noise_sigma: meta.noise_sigma,
            seed: meta.seed,
            mask: meta.mask,
            time_bin_width: meta.time_bin_width,
            channel_id: meta.channel_id,
            provenance: meta.provenance,
            data: c.payload,
        })
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_container(w, &self.to_container()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::from_container(read_container(r)?)
    }
}

#[derive(Serialize, Deserialize)]
struct MeasurementMeta {
    layout: MeasurementLayout,
    path: OpticalPath,
    noise_sigma: f64,
    seed: u64,
    mask: Option<ProbeLabel>,
    time_bin_width: f64,
    channel_id: String,
    provenance: String,
    /// The schedule file, embedded verbatim.
    schedule: String,
}

/// Simulated rotating-ellipsometry capture of a transport tensor.
///
/// Coaxial tensors need [`OpticalPath::Coaxial`] and yield one intensity per time bin.
/// Projector-camera tensors need [`OpticalPath::Spatial`]; without a mask each
/// projector pixel is captured separately, with a mask the whole projector is lit
/// through it. Both spatial layouts integrate over time. Noise is i.i.d. Gaussian,
/// drawn from a per-camera-pixel stream of the seed.
pub fn capture(
    tensor: &TransportTensor,
    schedule: &AngleSchedule,
    path: &OpticalPath,
    mask: Option<&ProbeMask>,
    noise_sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let layout = match (tensor.is_coaxial(), path, mask) {
        (true, OpticalPath::Coaxial { .. }, None) => MeasurementLayout::Temporal,
        (true, OpticalPath::Coaxial { .. }, Some(_)) => {
            return Err(Error::GeometryMismatch(
                "probe masks need a projector-camera tensor; this tensor is coaxial".into(),
            ))
        }
        (true, OpticalPath::Spatial, _) => {
            return Err(Error::GeometryMismatch(
                "coaxial tensors must be captured through the coaxial optical path".into(),
            ))
        }
        (false, OpticalPath::Coaxial { .. }, _) => {
            return Err(Error::GeometryMismatch(
                "projector-camera tensors must be captured through the spatial optical path".into(),
            ))
        }
        (false, OpticalPath::Spatial, None) => MeasurementLayout::PerProjectorPixel,
        (false, OpticalPath::Spatial, Some(m)) => {
            if m.camera_len() != tensor.camera_len()
                || m.projector_len() != tensor.logical_projector_len()
            {
                return Err(Error::DimensionMismatch(format!(
                    "mask is {}x{}, tensor couples {}x{}",
                    m.camera_len(),
                    m.projector_len(),
                    tensor.camera_len(),
                    tensor.logical_projector_len()
                )));
            }
            MeasurementLayout::Probed
        }
    };

    let rows: Vec<RowVectors> = (0..schedule.len())
        .flat_map(|k| row_vectors(schedule, path, k))
        .collect();
    let (projector, bins) = match layout {
        MeasurementLayout::Temporal => (PixelGrid::single(), tensor.bins()),
        MeasurementLayout::PerProjectorPixel => (tensor.projector(), 1),
        MeasurementLayout::Probed => (PixelGrid::single(), 1),
    };
    let per_pixel = projector.len() * rows.len() * bins;
    let slots = tensor.stored_projector_len();
    let normal =
        Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut data = vec![0.0; tensor.camera_len() * per_pixel];
    data.par_chunks_mut(per_pixel)
        .enumerate()
        .for_each(|(s, out)| {
            let intensity = |m: &Matrix4<f64>, row: &RowVectors| -> f64 { quad(&row.r, m, &row.c) };
            match layout {
                MeasurementLayout::Temporal => {
                    for t in 0..bins {
                        let m = tensor.block_at_slot(s, 0, t).0;
                        for (k, row) in rows.iter().enumerate() {
                            out[k * bins + t] = intensity(&m, row);
                        }
                    }
                }
                MeasurementLayout::PerProjectorPixel => {
                    for sp in 0..slots {
                        let m = summed_over_time(tensor, s, sp);
                        for (k, row) in rows.iter().enumerate() {
                            out[sp * rows.len() + k] = intensity(&m, row);
                        }
                    }
                }
                MeasurementLayout::Probed => {
                    let mask = mask.expect("probed layout has a mask");
                    let mut m = Matrix4::zeros();
                    for sp in 0..slots {
                        let w = mask.coupling(s, sp);
                        if w != 0.0 {
                            m += summed_over_time(tensor, s, sp) * w;
                        }
                    }
                    for (k, row) in rows.iter().enumerate() {
                        out[k] = intensity(&m, row);
                    }
                }
            }
            if noise_sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                for v in out.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
        });

    Ok(MeasurementSet {
        schedule: schedule.clone(),
        path: *path,
        layout,
        camera: tensor.camera(),
        projector,
        bins,
        noise_sigma,
        seed,
        mask: mask.map(|m| m.label),
        time_bin_width: tensor.meta.time_bin_width,
        channel_id: tensor.meta.channel_id.clone(),
        provenance: tensor.meta.provenance.clone(),
        data,
    })
}

fn quad(r: &RowVector4<f64>, m: &Matrix4<f64>, c: &Vector4<f64>) -> f64 {
    (r * m * c)[0]
}

fn summed_over_time(tensor: &TransportTensor, s: usize, slot: usize) -> Matrix4<f64> {
    (0..tensor.bins()).fold(Matrix4::zeros(), |acc, t| {
        acc + tensor.block_at_slot(s, slot, t).0
    })
}
