//! Analytic generator of ground-truth transport tensors.
//!
//! Surfaces are fronto-parallel patches at a given depth. Every surface covering a
//! pixel contributes its Mueller matrix (no occlusion), optional scripted chains add
//! multi-bounce specular paths, and an optional scattering volume adds backscatter.
//! Coaxial scenes bin each contribution at `floor(2·depth / c / Δt)`; rectified
//! projector-camera scenes bin at the geometric camera→surface→projector path time.

mod ensemble;
mod file;
mod fresnel;

pub use ensemble::{
    generate_ensemble, generate_ensemble_with, FamilyWeights, SyntheticMuellerEnsemble,
};
pub use file::{parse_scene, RenderSettings, SceneFile, SceneFileError};
pub use fresnel::{brewster_angle, fresnel_amplitudes, fresnel_mueller};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polarization::{self, MuellerMatrix, PolarizingElement};
use crate::tensor::{PixelGrid, RectifiedGeometry, TensorMeta, TransportTensor};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest simulated raster side.
pub const MAX_RESOLUTION: usize = 64;
/// Largest simulated time-bin count.
pub const MAX_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum MaterialSpec {
    /// `albedo · diag(1, r, r, r·circular_ratio)` with `r` the residual degree of polarization.
    DiffuseDepolarizer {
        albedo: f64,
        residual_dop: f64,
        circular_ratio: f64,
    },
    FresnelDielectric {
        eta: f64,
        incidence: f64,
    },
    IdealMirror,
    RetarderPlate {
        retardance: f64,
        axis: f64,
    },
    Custom(MuellerMatrix),
}

impl MaterialSpec {
    pub fn diffuse(albedo: f64, residual_dop: f64) -> Self {
        MaterialSpec::DiffuseDepolarizer {
            albedo,
            residual_dop,
            circular_ratio: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            MaterialSpec::DiffuseDepolarizer {
                albedo,
                residual_dop,
                circular_ratio,
            } => {
                if !(0.0..=1.0).contains(&albedo) {
                    return bad(format!("albedo must lie in [0, 1], got {albedo}"));
                }
                if !(0.0..=1.0).contains(&residual_dop) {
                    return bad(format!(
                        "residual_dop must lie in [0, 1], got {residual_dop}"
                    ));
                }
                if !(0.0..=1.0).contains(&circular_ratio) {
                    return bad(format!(
                        "circular_ratio must lie in [0, 1], got {circular_ratio}"
                    ));
                }
            }
            MaterialSpec::FresnelDielectric { eta, incidence } => {
                fresnel_amplitudes(eta, incidence)?;
            }
            MaterialSpec::IdealMirror => {}
            MaterialSpec::RetarderPlate { retardance, axis } => {
                if !retardance.is_finite() || !axis.is_finite() {
                    return bad("retarder angles must be finite".into());
                }
            }
            MaterialSpec::Custom(m) => {
                if !m.is_passive_valid() {
                    return bad("custom Mueller matrix is not passive-valid".into());
                }
            }
        }
        Ok(())
    }

    pub fn mueller(&self) -> Result<MuellerMatrix> {
        Ok(match *self {
            MaterialSpec::DiffuseDepolarizer {
                albedo,
                residual_dop,
                circular_ratio,
            } => MuellerMatrix::diagonal([
                1.0,
                residual_dop,
                residual_dop,
                residual_dop * circular_ratio,
            ])
            .scaled(albedo),
            MaterialSpec::FresnelDielectric { eta, incidence } => fresnel_mueller(eta, incidence)?,
            MaterialSpec::IdealMirror => polarization::mueller_of(&PolarizingElement::IdealMirror),
            MaterialSpec::RetarderPlate { retardance, axis } => {
                polarization::retarder(axis, retardance)
            }
            MaterialSpec::Custom(m) => m,
        })
    }
}

/// Axis-aligned rectangle in normalized image coordinates, half-open `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Patch {
    pub fn full() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u < self.x1 && v >= self.y0 && v < self.y1
    }

    /// Position of `(u, v)` relative to the patch, in `[0, 1)²`.
    fn relative(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.x0) / (self.x1 - self.x0),
            (v - self.y0) / (self.y1 - self.y0),
        )
    }

    fn absolute(&self, ru: f64, rv: f64) -> (f64, f64) {
        (
            self.x0 + ru * (self.x1 - self.x0),
            self.y0 + rv * (self.y1 - self.y0),
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub name: String,
    pub patch: Patch,
    /// Meters from the camera.
    pub depth: f64,
    pub material: MaterialSpec,
}

/// Specular path visiting surfaces in the listed order (first entry is hit first).
#[derive(Clone, Debug, PartialEq)]
pub struct SpecularChain {
    pub surfaces: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScatterVolume {
    pub backscatter: MuellerMatrix,
    pub strength: f64,
    pub depth: f64,
}

/// Pinhole parameters of the rectified projector-camera pair. Both devices share the
/// intrinsics; the projector sits `baseline` meters along +x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorCameraParams {
    pub baseline: f64,
    pub focal_px: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeometryMode {
    Coaxial,
    ProjectorCamera(ProjectorCameraParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub surfaces: Vec<Surface>,
    pub chains: Vec<SpecularChain>,
    pub scatter_volume: Option<ScatterVolume>,
    pub geometry: GeometryMode,
}

impl SceneSpec {
    pub fn coaxial(surfaces: Vec<Surface>) -> Self {
        Self {
            surfaces,
            chains: Vec::new(),
            scatter_volume: None,
            geometry: GeometryMode::Coaxial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.surfaces.iter().enumerate() {
            if !(s.depth >= 0.0) || !s.depth.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "surfaces[{i}] (`{}`): depth must be >= 0, got {}",
                    s.name, s.depth
                )));
            }
            let p = s.patch;
            if !(p.x0 < p.x1 && p.y0 < p.y1) {
                return Err(Error::InvalidArgument(format!(
                    "surfaces[{i}] (`{}`): patch must have x0 < x1 and y0 < y1",
                    s.name
                )));
            }
            s.material.validate().map_err(|e| {
                Error::InvalidArgument(format!("surfaces[{i}] (`{}`).material: {e}", s.name))
            })?;
        }
        for (i, c) in self.chains.iter().enumerate() {
            if c.surfaces.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "chains[{i}]: needs at least two surfaces"
                )));
            }
            if let Some(bad) = c.surfaces.iter().find(|&&k| k >= self.surfaces.len()) {
                return Err(Error::InvalidArgument(format!(
                    "chains[{i}]: unknown surface index {bad}"
                )));
            }
        }
        if let Some(v) = &self.scatter_volume {
            if !(0.0..=1.0).contains(&v.strength) {
                return Err(Error::InvalidArgument(format!(
                    "scatter_volume.strength must lie in [0, 1], got {}",
                    v.strength
                )));
            }
            if !(v.depth >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "scatter_volume.depth must be >= 0, got {}",
                    v.depth
                )));
            }
            if !v.backscatter.is_passive_valid() {
                return Err(Error::InvalidArgument(
                    "scatter_volume.backscatter is not passive-valid".into(),
                ));
            }
        }
        if let GeometryMode::ProjectorCamera(p) = self.geometry {
            if !(p.baseline >= 0.0) || !(p.focal_px > 0.0) {
                return Err(Error::InvalidArgument(
                    "projector_camera needs baseline >= 0 and focal_px > 0".into(),
                ));
            }
            if self.surfaces.iter().any(|s| s.depth <= 0.0) {
                return Err(Error::InvalidArgument(
                    "projector_camera surfaces need depth > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Which scene element produced a tensor entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathKind {
    Surface(usize),
    Chain(usize),
    Volume,
}

/// One deposited contribution, kept so tests can check where energy landed.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub kind: PathKind,
    pub camera_pixel: usize,
    /// Logical projector pixel (equal to the camera pixel for coaxial scenes).
    pub projector_pixel: usize,
    pub bin: usize,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct SimulatedScene {
    pub tensor: TransportTensor,
    pub paths: Vec<PathRecord>,
}

fn time_bin(path_length: f64, bin_width: f64) -> usize {
    (path_length / SPEED_OF_LIGHT / bin_width).floor() as usize
}

fn pixel_center(grid: PixelGrid, s: usize) -> (f64, f64) {
    let (x, y) = grid.coords(s);
    (
        (x as f64 + 0.5) / grid.width as f64,
        (y as f64 + 0.5) / grid.height as f64,
    )
}

/// Builds the ground-truth tensor of a scene.
pub fn build_transport(
    scene: &SceneSpec,
    resolution: PixelGrid,
    bins: usize,
    time_bin_width: f64,
) -> Result<TransportTensor> {
    Ok(build_transport_with_paths(scene, resolution, bins, time_bin_width)?.tensor)
}

/// Like [`build_transport`], also returning the per-path deposit log.
pub fn build_transport_with_paths(
    scene: &SceneSpec,
    resolution: PixelGrid,
    bins: usize,
    time_bin_width: f64,
) -> Result<SimulatedScene> {
    scene.validate()?;
    if resolution.width == 0
        || resolution.height == 0
        || resolution.width > MAX_RESOLUTION
        || resolution.height > MAX_RESOLUTION
    {
        return Err(Error::InvalidArgument(format!(
            "resolution {}x{} outside 1..={MAX_RESOLUTION}",
            resolution.width, resolution.height
        )));
    }
    if bins == 0 || bins > MAX_BINS {
        return Err(Error::InvalidArgument(format!(
            "time bins {bins} outside 1..={MAX_BINS}"
        )));
    }
    if !(time_bin_width > 0.0) || !time_bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "time bin width must be > 0, got {time_bin_width}"
        )));
    }
    let meta = TensorMeta {
        time_bin_width,
        channel_id: "mono".into(),
        provenance: format!(
            "scene_sim: {} surfaces, {} chains, volume: {}",
            scene.surfaces.len(),
            scene.chains.len(),
            scene.scatter_volume.is_some()
        ),
    };
    let materials: Vec<MuellerMatrix> = scene
        .surfaces
        .iter()
        .map(|s| s.material.mueller())
        .collect::<Result<_>>()?;
    let mut builder = Deposits {
        tensor: match scene.geometry {
            GeometryMode::Coaxial => TransportTensor::coaxial_zeros(resolution, bins, meta)?,
            GeometryMode::ProjectorCamera(_) => {
                TransportTensor::zeros(resolution, resolution, bins, meta)?
            }
        },
        paths: Vec::new(),
    };
    match scene.geometry {
        GeometryMode::Coaxial => {
            build_coaxial(scene, &materials, resolution, time_bin_width, &mut builder)?
        }
        GeometryMode::ProjectorCamera(params) => build_projector_camera(
            scene,
            &materials,
            resolution,
            params,
            time_bin_width,
            &mut builder,
        )?,
    }
    Ok(SimulatedScene {
        tensor: builder.tensor,
        paths: builder.paths,
    })
}

struct Deposits {
    tensor: TransportTensor,
    paths: Vec<PathRecord>,
}

impl Deposits {
    #[allow(clippy::too_many_arguments)]
    fn deposit(
        &mut self,
        kind: PathKind,
        label: String,
        s: usize,
        sp: usize,
        bin: usize,
        m: &MuellerMatrix,
        weight: f64,
    ) -> Result<()> {
        let bins = self.tensor.bins();
        if bin >= bins {
            return Err(Error::TimeBinOverflow {
                path: label,
                bin,
                bins,
            });
        }
        self.tensor.add_block(s, sp, bin, &m.scaled(weight))?;
        self.paths.push(PathRecord {
            kind,
            camera_pixel: s,
            projector_pixel: sp,
            bin,
            weight,
        });
        Ok(())
    }
}

fn chain_mueller(chain: &SpecularChain, materials: &[MuellerMatrix]) -> MuellerMatrix {
    // Light meets the first listed surface first, so it is the rightmost factor.
    chain
        .surfaces
        .iter()
        .fold(MuellerMatrix::identity(), |acc, &k| materials[k] * acc)
}

fn build_coaxial(
    scene: &SceneSpec,
    materials: &[MuellerMatrix],
    grid: PixelGrid,
    dt: f64,
    out: &mut Deposits,
) -> Result<()> {
    for s in 0..grid.len() {
        let (u, v) = pixel_center(grid, s);
        let (x, y) = grid.coords(s);
        for (k, surface) in scene.surfaces.iter().enumerate() {
            if surface.patch.contains(u, v) {
                let bin = time_bin(2.0 * surface.depth, dt);
                let label = format!("surface `{}` at pixel ({x}, {y})", surface.name);
                out.deposit(PathKind::Surface(k), label, s, s, bin, &materials[k], 1.0)?;
            }
        }
        for (c, chain) in scene.chains.iter().enumerate() {
            let first = &scene.surfaces[chain.surfaces[0]];
            let last = &scene.surfaces[*chain.surfaces.last().unwrap()];
            if !(first.patch.contains(u, v) && last.patch.contains(u, v)) {
                continue;
            }
            let mut length = first.depth + last.depth;
            for w in chain.surfaces.windows(2) {
                length += (scene.surfaces[w[1]].depth - scene.surfaces[w[0]].depth).abs();
            }
            let label = format!("chain {c} at pixel ({x}, {y})");
            out.deposit(
                PathKind::Chain(c),
                label,
                s,
                s,
                time_bin(length, dt),
                &chain_mueller(chain, materials),
                1.0,
            )?;
        }
        if let Some(vol) = &scene.scatter_volume {
            let label = format!("scatter volume at pixel ({x}, {y})");
            out.deposit(
                PathKind::Volume,
                label,
                s,
                s,
                time_bin(2.0 * vol.depth, dt),
                &vol.backscatter,
                vol.strength,
            )?;
        }
    }
    Ok(())
}

/// 3D point seen by the camera at normalized image position `(u, v)` and depth `z`.
fn back_project(
    grid: PixelGrid,
    params: ProjectorCameraParams,
    u: f64,
    v: f64,
    z: f64,
) -> [f64; 3] {
    let px = u * grid.width as f64 - grid.width as f64 / 2.0;
    let py = v * grid.height as f64 - grid.height as f64 / 2.0;
    [px / params.focal_px * z, py / params.focal_px * z, z]
}

/// Projector pixel lighting a 3D point, `None` when it falls outside the projector.
fn project_to_projector(
    grid: PixelGrid,
    params: ProjectorCameraParams,
    p: [f64; 3],
) -> Option<usize> {
    let xp = (p[0] - params.baseline) / p[2] * params.focal_px + grid.width as f64 / 2.0;
    let yp = p[1] / p[2] * params.focal_px + grid.height as f64 / 2.0;
    let (xi, yi) = (xp.floor(), yp.floor());
    if xi < 0.0 || yi < 0.0 || xi >= grid.width as f64 || yi >= grid.height as f64 {
        return None;
    }
    Some(grid.index(xi as usize, yi as usize))
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn build_projector_camera(
    scene: &SceneSpec,
    materials: &[MuellerMatrix],
    grid: PixelGrid,
    params: ProjectorCameraParams,
    dt: f64,
    out: &mut Deposits,
) -> Result<()> {
    let camera = [0.0; 3];
    let projector = [params.baseline, 0.0, 0.0];
    for s in 0..grid.len() {
        let (u, v) = pixel_center(grid, s);
        let (x, y) = grid.coords(s);
        for (k, surface) in scene.surfaces.iter().enumerate() {
            if !surface.patch.contains(u, v) {
                continue;
            }
            let point = back_project(grid, params, u, v, surface.depth);
            let Some(sp) = project_to_projector(grid, params, point) else {
                continue;
            };
            let length = distance(point, camera) + distance(point, projector);
            let label = format!("surface `{}` at pixel ({x}, {y})", surface.name);
            out.deposit(
                PathKind::Surface(k),
                label,
                s,
                sp,
                time_bin(length, dt),
                &materials[k],
                1.0,
            )?;
        }
        for (c, chain) in scene.chains.iter().enumerate() {
            let last = &scene.surfaces[*chain.surfaces.last().unwrap()];
            if !last.patch.contains(u, v) {
                continue;
            }
            // Each bounce point sits at the same relative position within its patch.
            let (ru, rv) = last.patch.relative(u, v);
            let points: Vec<[f64; 3]> = chain
                .surfaces
                .iter()
                .map(|&k| {
                    let surf = &scene.surfaces[k];
                    let (au, av) = surf.patch.absolute(ru, rv);
                    back_project(grid, params, au, av, surf.depth)
                })
                .collect();
            let Some(sp) = project_to_projector(grid, params, points[0]) else {
                continue;
            };
            let mut length =
                distance(points[0], projector) + distance(*points.last().unwrap(), camera);
            for w in points.windows(2) {
                length += distance(w[0], w[1]);
            }
            let label = format!("chain {c} at pixel ({x}, {y})");
            out.deposit(
                PathKind::Chain(c),
                label,
                s,
                sp,
                time_bin(length, dt),
                &chain_mueller(chain, materials),
                1.0,
            )?;
        }
        if let Some(vol) = &scene.scatter_volume {
            // Backscatter along the camera ray stays inside the epipolar plane, so it
            // couples to every projector pixel of the same row.
            let point = back_project(grid, params, u, v, vol.depth.max(f64::MIN_POSITIVE));
            let bin = time_bin(distance(point, camera) + distance(point, projector), dt);
            let weight = vol.strength / grid.width as f64;
            for xp in 0..grid.width {
                let sp = grid.index(xp, y);
                let label = format!("scatter volume at pixel ({x}, {y})");
                out.deposit(
                    PathKind::Volume,
                    label,
                    s,
                    sp,
                    bin,
                    &vol.backscatter,
                    weight,
                )?;
            }
        }
    }
    Ok(())
}

impl GeometryMode {
    pub fn rectified(&self, resolution: PixelGrid) -> Option<RectifiedGeometry> {
        match self {
            GeometryMode::Coaxial => None,
            GeometryMode::ProjectorCamera(_) => Some(RectifiedGeometry {
                camera: resolution,
                projector: resolution,
            }),
        }
    }
}
