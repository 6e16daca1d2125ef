//! Global polarimetric weights that synthesize a scatter-free image.
//!
//! The synthesis is `S(s) = Σ_ij W_ij · (X_ij(s) + b_ij)` where `X_ij` is the
//! time-integrated epipolar slice. Because `W_ij b_ij` only ever appears summed, the
//! fit runs on the affine model `S = Σ w_ij X_ij + β` and maps back with
//! `b_ij = β W_ij / ‖W‖²`, which reproduces `Σ W_ij b_ij = β`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lbfgs::{minimize, LbfgsOptions, StopReason};
use crate::ellipsometry::RANK_TOL;
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;
use crate::tensor::{
    epipolar_masks, probe, PixelGrid, RectifiedGeometry, TensorMeta, TransportTensor,
};

const CHUNK: usize = 256;

/// Per-pixel 4×4 features `Σ_t T(s, s_e, i, j, t)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarimetricImage {
    pub grid: PixelGrid,
    pub channel_id: String,
    pub features: Vec<[f64; 16]>,
}

impl PolarimetricImage {
    pub fn intensity(&self) -> Vec<f64> {
        self.features.iter().map(|f| f[0]).collect()
    }

    /// Pixels at `indices`, as a `len × 1` image.
    pub fn subset(&self, indices: &[usize]) -> Result<PolarimetricImage> {
        let features = indices
            .iter()
            .map(|&s| {
                self.features.get(s).copied().ok_or_else(|| {
                    Error::IndexOutOfRange(format!("pixel {s} of {}", self.features.len()))
                })
            })
            .collect::<Result<_>>()?;
        Ok(PolarimetricImage {
            grid: PixelGrid::new(indices.len().max(1), 1),
            channel_id: self.channel_id.clone(),
            features,
        })
    }
}

/// Time-integrated transport along each camera pixel's epipolar line.
///
/// Coaxial tensors use the `s' = s` diagonal, single-slot tensors are taken as already
/// probed, and full projector-camera tensors are probed with the row-epipolar mask.
pub fn epipolar_image(tensor: &TransportTensor) -> Result<PolarimetricImage> {
    let summed = if tensor.is_coaxial() || tensor.projector().len() == 1 {
        tensor.sum_time()
    } else {
        let (epi, _) = epipolar_masks(&RectifiedGeometry {
            camera: tensor.camera(),
            projector: tensor.projector(),
        })?;
        probe(tensor, &epi)?.sum_time()
    };
    let features = summed
        .sum_projector()
        .into_iter()
        .map(|per_bin| per_bin[0].to_row_major())
        .collect();
    Ok(PolarimetricImage {
        grid: tensor.camera(),
        channel_id: tensor.meta.channel_id.clone(),
        features,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// All sixteen Mueller entries.
    #[default]
    Full,
    /// Only `(0, 0)`, the plain intensity image.
    IntensityOnly,
}

impl FeatureSet {
    fn indices(self) -> Vec<usize> {
        match self {
            FeatureSet::Full => (0..16).collect(),
            FeatureSet::IntensityOnly => vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescatterOptions {
    pub features: FeatureSet,
    pub max_iterations: usize,
    pub memory: usize,
    /// Stop once the gradient norm falls below this fraction of its initial value.
    pub gradient_tolerance: f64,
}

impl Default for DescatterOptions {
    fn default() -> Self {
        Self {
            features: FeatureSet::Full,
            max_iterations: 500,
            memory: 20,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub channel_id: String,
    pub weights: [[f64; 4]; 4],
    pub biases: [[f64; 4]; 4],
    /// `Σ W_ij b_ij`.
    pub offset: f64,
    /// Objective `‖S − S_gt‖² / 2N` at the start and after every iteration.
    pub objective_history: Vec<f64>,
    pub initial_gradient_norm: f64,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Final gradient below `1e-8` of the initial one.
    pub converged: bool,
    pub closed_form_objective: f64,
    /// Largest parameter difference to the closed form, relative to `max(1, |θ|∞)`.
    pub closed_form_gap: f64,
}

impl ChannelModel {
    pub fn objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history starts with the initial objective")
    }

    pub fn synthesize(&self, image: &PolarimetricImage) -> Vec<f64> {
        image
            .features
            .iter()
            .map(|f| {
                let mut acc = 0.0;
                for i in 0..4 {
                    for j in 0..4 {
                        acc += self.weights[i][j] * (f[4 * i + j] + self.biases[i][j]);
                    }
                }
                acc
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescatterModel {
    pub features: FeatureSet,
    pub channels: Vec<ChannelModel>,
}

impl DescatterModel {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("descatter model: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("descatter model: {e}")))?;
        let finite = m.channels.iter().all(|c| {
            c.weights
                .iter()
                .chain(&c.biases)
                .flatten()
                .all(|v| v.is_finite())
                && c.offset.is_finite()
        });
        if !finite {
            return Err(Error::Config(
                "descatter model has non-finite entries".into(),
            ));
        }
        Ok(m)
    }
}

/// Affine least-squares problem with rows evaluated in fixed chunks so the
/// parallel reduction is deterministic.
struct AffineFit {
    design: DMatrix<f64>,
    target: DVector<f64>,
}

impl AffineFit {
    fn cost_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let n = self.design.nrows();
        let p = self.design.ncols();
        let partials: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut cost = 0.0;
                let mut grad = vec![0.0; p];
                for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    let row = self.design.row(r);
                    let residual =
                        row.iter().zip(theta).map(|(x, w)| x * w).sum::<f64>() - self.target[r];
                    cost += residual * residual;
                    for (g, x) in grad.iter_mut().zip(row.iter()) {
                        *g += residual * x;
                    }
                }
                (cost, grad)
            })
            .collect();
        let mut cost = 0.0;
        let mut grad = vec![0.0; p];
        for (c, g) in partials {
            cost += c;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        let scale = 1.0 / n as f64;
        (
            0.5 * cost * scale,
            grad.into_iter().map(|g| g * scale).collect(),
        )
    }

    fn closed_form(&self) -> DVector<f64> {
        let svd = self.design.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let cutoff = RANK_TOL * smax;
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V");
        let mut theta = DVector::zeros(self.design.ncols());
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff {
                let coeff = u.column(k).dot(&self.target) / s;
                theta += v_t.row(k).transpose() * coeff;
            }
        }
        theta
    }
}

fn fit_channel(
    image: &PolarimetricImage,
    gt: &[f64],
    opts: &DescatterOptions,
) -> Result<ChannelModel> {
    let n = image.features.len();
    if gt.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "ground truth has {} pixels, slice {n}",
            gt.len()
        )));
    }
    if n == 0 || image.features.iter().all(|f| f.iter().all(|&v| v == 0.0)) {
        return Err(Error::Degenerate(format!(
            "channel `{}` slice is all zero",
            image.channel_id
        )));
    }
    if image
        .features
        .iter()
        .flatten()
        .chain(gt)
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidArgument(
            "slice or ground truth has non-finite values".into(),
        ));
    }
    let cols = opts.features.indices();
    let p = cols.len() + 1;
    let mut design = DMatrix::from_fn(n, p, |r, c| {
        if c < cols.len() {
            image.features[r][cols[c]]
        } else {
            1.0
        }
    });
    // Both solvers work on RMS-normalized columns; all-zero columns keep unit scale.
    let col_scale: Vec<f64> = design
        .column_iter()
        .map(|c| {
            let rms = c.norm() / (n as f64).sqrt();
            if rms > 0.0 {
                rms
            } else {
                1.0
            }
        })
        .collect();
    for (mut c, s) in design.column_iter_mut().zip(&col_scale) {
        c /= *s;
    }
    let problem = AffineFit {
        design,
        target: DVector::from_column_slice(gt),
    };
    let closed = problem.closed_form();
    let closed_form_objective = problem.cost_and_gradient(closed.as_slice()).0;

    let report = minimize(
        |theta| problem.cost_and_gradient(theta),
        vec![0.0; p],
        &LbfgsOptions {
            memory: opts.memory,
            max_iterations: opts.max_iterations,
            gradient_tolerance: opts.gradient_tolerance,
        },
    );
    log::debug!(
        "channel `{}`: L-BFGS stopped after {} iterations ({:?})",
        image.channel_id,
        report.iterations,
        report.stop
    );
    let theta: Vec<f64> = report
        .x
        .iter()
        .zip(&col_scale)
        .map(|(t, s)| t / s)
        .collect();
    let closed: Vec<f64> = closed.iter().zip(&col_scale).map(|(t, s)| t / s).collect();

    let scale = closed.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let closed_form_gap = theta
        .iter()
        .zip(closed.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;

    let mut weights = [[0.0; 4]; 4];
    for (k, &c) in cols.iter().enumerate() {
        weights[c / 4][c % 4] = theta[k];
    }
    let offset = theta[p - 1];
    let w_norm2: f64 = weights.iter().flatten().map(|w| w * w).sum();
    let mut biases = [[0.0; 4]; 4];
    if w_norm2 > 0.0 {
        for i in 0..4 {
            for j in 0..4 {
                biases[i][j] = offset * weights[i][j] / w_norm2;
            }
        }
    } else if offset != 0.0 {
        return Err(Error::Degenerate(
            "fitted weights vanish; the offset cannot be expressed as biases".into(),
        ));
    }
    Ok(ChannelModel {
        channel_id: image.channel_id.clone(),
        weights,
        biases,
        offset,
        objective_history: report.history,
        initial_gradient_norm: report.initial_gradient_norm,
        final_gradient_norm: report.final_gradient_norm,
        iterations: report.iterations,
        stop: report.stop,
        converged: report.final_gradient_norm <= 1e-8 * report.initial_gradient_norm,
        closed_form_objective,
        closed_form_gap,
    })
}

/// Fits one model per channel; `images[k]` pairs with `ground_truth[k]`.
pub fn fit_descatter(
    images: &[PolarimetricImage],
    ground_truth: &[Vec<f64>],
    opts: &DescatterOptions,
) -> Result<DescatterModel> {
    if images.is_empty() || images.len() != ground_truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} slices but {} ground-truth images",
            images.len(),
            ground_truth.len()
        )));
    }
    let channels = images
        .iter()
        .zip(ground_truth)
        .map(|(img, gt)| fit_channel(img, gt, opts))
        .collect::<Result<_>>()?;
    Ok(DescatterModel {
        features: opts.features,
        channels,
    })
}

pub fn apply_descatter(
    model: &DescatterModel,
    images: &[PolarimetricImage],
) -> Result<Vec<Vec<f64>>> {
    if model.channels.len() != images.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} channels, input {}",
            model.channels.len(),
            images.len()
        )));
    }
    model
        .channels
        .iter()
        .zip(images)
        .map(|(c, img)| {
            if c.channel_id != img.channel_id {
                return Err(Error::DimensionMismatch(format!(
                    "channel `{}` applied to `{}`",
                    c.channel_id, img.channel_id
                )));
            }
            Ok(c.synthesize(img))
        })
        .collect()
}

/// Peak signal-to-noise ratio in dB, with the peak taken from `reference`.
pub fn psnr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() || reference.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} pixels",
            estimate.len(),
            reference.len()
        )));
    }
    let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mse = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Coaxial composite of a depolarizing object behind polarization-preserving
/// backscatter, with the object's intensity image as ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticComposite {
    pub composite: TransportTensor,
    pub object: TransportTensor,
    pub ground_truth: Vec<f64>,
}

/// The object sits in the last bin with albedo in `[0.1, 1]` and residual
/// polarization `diag(1, ε, ε, ε)`, `ε ≤ 0.1`. Backscatter fills the earlier bins with
/// a decaying profile and a near-identity block whose retained polarization varies
/// per pixel. `noise` adds Gaussian noise to every composite entry.
pub fn synthetic_composite(
    grid: PixelGrid,
    bins: usize,
    noise: f64,
    seed: u64,
) -> Result<SyntheticComposite> {
    if bins < 2 {
        return Err(Error::InvalidArgument(
            "the composite needs at least 2 bins".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let meta = TensorMeta {
        provenance: format!("synthetic descattering composite, seed {seed}"),
        ..TensorMeta::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut composite = TransportTensor::coaxial_zeros(grid, bins, meta.clone())?;
    let mut object = TransportTensor::coaxial_zeros(grid, bins, meta)?;
    let mut ground_truth = Vec::with_capacity(grid.len());
    let profile: Vec<f64> = (0..bins - 1).map(|t| (-(t as f64) / 3.0).exp()).collect();
    let total: f64 = profile.iter().sum();
    for s in 0..grid.len() {
        let (x, y) = grid.coords(s);
        let albedo = rng.random_range(0.1..1.0);
        let eps = rng.random_range(0.0..0.1);
        let haze = 0.5
            + 0.3
                * (std::f64::consts::TAU * x as f64 / grid.width as f64).sin()
                * (std::f64::consts::TAU * y as f64 / grid.height as f64).cos()
            + rng.random_range(-0.05..0.05);
        let linear = rng.random_range(0.85..0.95);
        let circular = rng.random_range(0.8..0.9);
        let obj = MuellerMatrix::diagonal([1.0, eps, eps, eps]).scaled(albedo);
        object.set_block(s, s, bins - 1, &obj)?;
        composite.set_block(s, s, bins - 1, &obj)?;
        let scatter = MuellerMatrix::diagonal([1.0, linear, linear, circular]).scaled(haze / total);
        for (t, w) in profile.iter().enumerate() {
            composite.set_block(s, s, t, &scatter.scaled(*w))?;
        }
        ground_truth.push(albedo);
    }
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("finite sigma");
        let mut noisy = composite.clone();
        for s in 0..grid.len() {
            for t in 0..bins {
                let mut m = noisy.block(s, s, t)?;
                for v in m.0.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
                noisy.set_block(s, s, t, &m)?;
            }
        }
        composite = noisy;
    }
    Ok(SyntheticComposite {
        composite,
        object,
        ground_truth,
    })
}
