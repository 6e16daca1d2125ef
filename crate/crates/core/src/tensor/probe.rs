//! Projector-camera probing masks.
//!
//! A mask is a sum of camera/projector pattern pairs exposed together, so the
//! coupling it applies to `(s, s')` is `Σ_k camera_k(s) · projector_k(s')`. A single
//! pair reduces to the separable `camera(s) · projector(s')` form; row-sequential
//! epipolar scanning needs one pair per row.

use serde::{Deserialize, Serialize};

use super::{PixelGrid, TransportTensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeLabel {
    Epipolar,
    NonEpipolar,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeMask {
    pub label: ProbeLabel,
    camera_len: usize,
    projector_len: usize,
    /// `(camera_mask, projector_mask)` pairs.
    patterns: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ProbeMask {
    /// Separable mask from one camera and one projector pattern.
    pub fn separable(
        camera_mask: Vec<f64>,
        projector_mask: Vec<f64>,
        label: ProbeLabel,
    ) -> Result<Self> {
        Self::from_patterns(vec![(camera_mask, projector_mask)], label)
    }

    pub fn all_ones(camera_len: usize, projector_len: usize) -> Self {
        Self {
            label: ProbeLabel::Custom,
            camera_len,
            projector_len,
            patterns: vec![(vec![1.0; camera_len], vec![1.0; projector_len])],
        }
    }

    pub fn from_patterns(patterns: Vec<(Vec<f64>, Vec<f64>)>, label: ProbeLabel) -> Result<Self> {
        let first = patterns.first().ok_or_else(|| {
            Error::InvalidArgument("probe mask needs at least one pattern".into())
        })?;
        let (camera_len, projector_len) = (first.0.len(), first.1.len());
        for (c, p) in &patterns {
            if c.len() != camera_len || p.len() != projector_len {
                return Err(Error::DimensionMismatch(
                    "probe patterns differ in length".into(),
                ));
            }
            if c.iter().chain(p).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(
                    "mask values must lie in [0, 1]".into(),
                ));
            }
        }
        let mask = Self {
            label,
            camera_len,
            projector_len,
            patterns,
        };
        for s in 0..camera_len {
            for sp in 0..projector_len {
                let w = mask.coupling(s, sp);
                if !(-1e-12..=1.0 + 1e-12).contains(&w) {
                    return Err(Error::InvalidArgument(format!(
                        "combined coupling {w} at ({s}, {sp}) leaves [0, 1]"
                    )));
                }
            }
        }
        Ok(mask)
    }

    pub fn camera_len(&self) -> usize {
        self.camera_len
    }

    pub fn projector_len(&self) -> usize {
        self.projector_len
    }

    pub fn patterns(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.patterns
    }

    /// Effective weight applied to the `(s, s')` coupling.
    #[inline]
    pub fn coupling(&self, s: usize, sp: usize) -> f64 {
        self.patterns.iter().map(|(c, p)| c[s] * p[sp]).sum()
    }
}

/// Rectified camera-projector pair: camera row `i` shares its epipolar plane with
/// projector row `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectifiedGeometry {
    pub camera: PixelGrid,
    pub projector: PixelGrid,
}

/// `T'(s, s', ·) = coupling(s, s') · T(s, s', ·)`.
pub fn probe(tensor: &TransportTensor, mask: &ProbeMask) -> Result<TransportTensor> {
    if mask.camera_len != tensor.camera_len()
        || mask.projector_len != tensor.logical_projector_len()
    {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, tensor couples {}x{}",
            mask.camera_len,
            mask.projector_len,
            tensor.camera_len(),
            tensor.logical_projector_len()
        )));
    }
    let mut out = tensor.clone();
    let slots = tensor.stored_projector_len();
    let block = 16 * tensor.bins();
    let coaxial = tensor.is_coaxial();
    for (chunk_index, chunk) in out.data_mut().chunks_exact_mut(block).enumerate() {
        let s = chunk_index / slots;
        let slot = chunk_index % slots;
        let sp = if coaxial { s } else { slot };
        let w = mask.coupling(s, sp);
        chunk.iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

/// Complementary epipolar and non-epipolar masks for a rectified geometry.
pub fn epipolar_masks(geometry: &RectifiedGeometry) -> Result<(ProbeMask, ProbeMask)> {
    let (cam, proj) = (geometry.camera, geometry.projector);
    if cam.height != proj.height {
        return Err(Error::GeometryMismatch(format!(
            "rectified rows need equal heights, camera {} vs projector {}",
            cam.height, proj.height
        )));
    }
    let row_indicator = |grid: PixelGrid, row: usize, value_in: f64| -> Vec<f64> {
        (0..grid.len())
            .map(|s| {
                if grid.row_of(s) == row {
                    value_in
                } else {
                    1.0 - value_in
                }
            })
            .collect()
    };
    let mut epi = Vec::with_capacity(cam.height);
    let mut non = Vec::with_capacity(cam.height);
    for row in 0..cam.height {
        let cam_row = row_indicator(cam, row, 1.0);
        epi.push((cam_row.clone(), row_indicator(proj, row, 1.0)));
        non.push((cam_row, row_indicator(proj, row, 0.0)));
    }
    Ok((
        ProbeMask::from_patterns(epi, ProbeLabel::Epipolar)?,
        ProbeMask::from_patterns(non, ProbeLabel::NonEpipolar)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorMeta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(cam: PixelGrid, proj: PixelGrid, bins: usize, seed: u64) -> TransportTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cam.len() * proj.len() * 16 * bins;
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        TransportTensor::from_vec(cam, proj, false, bins, data, TensorMeta::default()).unwrap()
    }

    #[test]
    fn all_ones_mask_is_identity() {
        let t = random_tensor(PixelGrid::new(2, 2), PixelGrid::new(3, 2), 2, 1);
        let probed = probe(&t, &ProbeMask::all_ones(4, 6)).unwrap();
        assert_eq!(probed, t);
        assert_eq!(probed.slice_spatial(), t.slice_spatial());
        assert_eq!(probed.slice_polarimetric(), t.slice_polarimetric());
    }

    #[test]
    fn epipolar_mask_couples_rows_to_themselves() {
        let g = RectifiedGeometry {
            camera: PixelGrid::new(3, 4),
            projector: PixelGrid::new(5, 4),
        };
        let (epi, non) = epipolar_masks(&g).unwrap();
        for s in 0..12 {
            for sp in 0..20 {
                let same_row = g.camera.row_of(s) == g.projector.row_of(sp);
                assert_eq!(epi.coupling(s, sp), if same_row { 1.0 } else { 0.0 });
                assert_eq!(epi.coupling(s, sp) + non.coupling(s, sp), 1.0);
            }
        }
    }

    #[test]
    fn complementary_probes_partition_tensor() {
        let g = RectifiedGeometry {
            camera: PixelGrid::new(2, 3),
            projector: PixelGrid::new(2, 3),
        };
        let t = random_tensor(g.camera, g.projector, 2, 3);
        let (epi, non) = epipolar_masks(&g).unwrap();
        let sum = probe(&t, &epi)
            .unwrap()
            .linear_combination(1.0, &probe(&t, &non).unwrap(), 1.0)
            .unwrap();
        assert_eq!(sum, t);
    }

    #[test]
    fn mismatched_heights_and_dims_error() {
        let g = RectifiedGeometry {
            camera: PixelGrid::new(2, 3),
            projector: PixelGrid::new(2, 2),
        };
        assert!(epipolar_masks(&g).is_err());
        let t = random_tensor(PixelGrid::new(2, 1), PixelGrid::new(2, 1), 1, 4);
        assert!(probe(&t, &ProbeMask::all_ones(3, 2)).is_err());
    }

    #[test]
    fn mask_values_validated() {
        assert!(ProbeMask::separable(vec![1.5], vec![1.0], ProbeLabel::Custom).is_err());
        let overlapping = vec![(vec![1.0], vec![1.0]), (vec![1.0], vec![1.0])];
        assert!(ProbeMask::from_patterns(overlapping, ProbeLabel::Custom).is_err());
    }
}
