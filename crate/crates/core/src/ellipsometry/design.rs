use nalgebra::{DMatrix, RowVector4, Vector4};
use serde::{Deserialize, Serialize};

use super::schedule::{AngleSchedule, SensorMode, ANALYZER_ANGLES};
use crate::error::{Error, Result};
use crate::polarization::{
    linear_polarizer, linear_polarizer_derivative, quarter_wave_plate,
    quarter_wave_plate_derivative, MuellerMatrix, PolarizingElement, SplitMode,
};

/// Relative singular-value cutoff for rank decisions and pseudo-inverses.
pub const RANK_TOL: f64 = 1e-10;

/// Optical layout around the scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpticalPath {
    /// Source and detector optics face the scene directly.
    Spatial,
    /// Source light passes a beamsplitter in transmission and a galvo mirror; the
    /// return passes the galvo and the beamsplitter in reflection.
    Coaxial { split: f64 },
}

impl OpticalPath {
    pub fn coaxial() -> Self {
        OpticalPath::Coaxial { split: 0.5 }
    }

    /// Matrices applied before and after the scene: `(G·B_t, B_r·G)`.
    fn relay(&self) -> Option<(MuellerMatrix, MuellerMatrix)> {
        match *self {
            OpticalPath::Spatial => None,
            OpticalPath::Coaxial { split } => {
                let galvo = crate::polarization::mueller_of(&PolarizingElement::GalvoMirror(0));
                let bt = crate::polarization::mueller_of(
                    &PolarizingElement::NonPolarizingBeamsplitter {
                        mode: SplitMode::Transmit,
                        split,
                    },
                );
                let br = crate::polarization::mueller_of(
                    &PolarizingElement::NonPolarizingBeamsplitter {
                        mode: SplitMode::Reflect,
                        split,
                    },
                );
                Some((galvo * bt, br * galvo))
            }
        }
    }
}

const SOURCE: Vector4<f64> = Vector4::new(1.0, 0.0, 0.0, 0.0);

/// Detector row and source column for one design-matrix row: `I = r · M · c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowVectors {
    pub r: RowVector4<f64>,
    pub c: Vector4<f64>,
}

/// Derivatives of `r` and `c` with respect to the four angle columns. Columns that
/// the row does not depend on are zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RowDerivatives {
    pub dr: [RowVector4<f64>; 4],
    pub dc: [Vector4<f64>; 4],
}

fn detector_angles(schedule: &AngleSchedule, k: usize) -> Vec<f64> {
    match schedule.sensor_mode {
        SensorMode::Intensity => vec![schedule.angles[k][3]],
        SensorMode::PolarizerArray => ANALYZER_ANGLES.to_vec(),
    }
}

/// Row/column vectors for every row belonging to capture `k`.
pub fn row_vectors(schedule: &AngleSchedule, path: &OpticalPath, k: usize) -> Vec<RowVectors> {
    let [t1, t2, t3, _] = schedule.angles[k];
    let mut c = (quarter_wave_plate(t2) * linear_polarizer(t1)).0 * SOURCE;
    let relay = path.relay();
    if let Some((pre, _)) = relay {
        c = pre.0 * c;
    }
    detector_angles(schedule, k)
        .into_iter()
        .map(|t4| {
            let mut det = (linear_polarizer(t4) * quarter_wave_plate(t3)).0;
            if let Some((_, post)) = relay {
                det *= post.0;
            }
            RowVectors {
                r: det.row(0).into_owned(),
                c,
            }
        })
        .collect()
}

pub fn row_derivatives(
    schedule: &AngleSchedule,
    path: &OpticalPath,
    k: usize,
) -> Vec<RowDerivatives> {
    let [t1, t2, t3, _] = schedule.angles[k];
    let relay = path.relay();
    let pre = relay
        .map(|r| r.0 .0)
        .unwrap_or_else(nalgebra::Matrix4::identity);
    let post = relay
        .map(|r| r.1 .0)
        .unwrap_or_else(nalgebra::Matrix4::identity);
    let zero_c = Vector4::zeros();
    let dc1 = pre * (quarter_wave_plate(t2) * linear_polarizer_derivative(t1)).0 * SOURCE;
    let dc2 = pre * (quarter_wave_plate_derivative(t2) * linear_polarizer(t1)).0 * SOURCE;
    let array = schedule.sensor_mode == SensorMode::PolarizerArray;
    detector_angles(schedule, k)
        .into_iter()
        .map(|t4| {
            let dr3 = ((linear_polarizer(t4) * quarter_wave_plate_derivative(t3)).0 * post)
                .row(0)
                .into_owned();
            let dr4 = if array {
                RowVector4::zeros()
            } else {
                ((linear_polarizer_derivative(t4) * quarter_wave_plate(t3)).0 * post)
                    .row(0)
                    .into_owned()
            };
            RowDerivatives {
                dr: [RowVector4::zeros(), RowVector4::zeros(), dr3, dr4],
                dc: [dc1, dc2, zero_c, zero_c],
            }
        })
        .collect()
}

/// Row-major `vec(r c)` so that `row · vec(M) = r M c`.
pub fn outer_row(r: &RowVector4<f64>, c: &Vector4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            out[4 * i + j] = r[i] * c[j];
        }
    }
    out
}

/// Noiseless intensity of row `q` (analyzer index in polarizer-array mode) of capture `k`.
pub fn forward_intensity(
    m: &MuellerMatrix,
    schedule: &AngleSchedule,
    k: usize,
    q: Option<usize>,
) -> Result<f64> {
    forward_intensity_with(m, schedule, &OpticalPath::Spatial, k, q)
}

pub fn forward_intensity_with(
    m: &MuellerMatrix,
    schedule: &AngleSchedule,
    path: &OpticalPath,
    k: usize,
    q: Option<usize>,
) -> Result<f64> {
    if k >= schedule.len() {
        return Err(Error::IndexOutOfRange(format!(
            "capture {k} of {}",
            schedule.len()
        )));
    }
    let rows = row_vectors(schedule, path, k);
    let row = match (schedule.sensor_mode, q) {
        (SensorMode::Intensity, None | Some(0)) => rows[0],
        (SensorMode::PolarizerArray, Some(q)) if q < 4 => rows[q],
        (mode, q) => {
            return Err(Error::InvalidArgument(format!(
                "analyzer index {q:?} is invalid in {mode:?} mode"
            )))
        }
    };
    Ok((row.r * m.0 * row.c)[0])
}

/// `K' × 16` linear map from row-major `vec(M)` to intensities, with its SVD-based
/// pseudo-inverse.
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    pub a: DMatrix<f64>,
    pub pseudo_inverse: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `σ_max / σ_min` over the 16 columns; infinite below full rank.
    pub condition_number: f64,
}

impl DesignMatrix {
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() != 16 || a.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "design matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let svd = a.clone().svd(true, true);
        let mut singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
        singular_values.sort_by(|x, y| y.total_cmp(x));
        let smax = singular_values[0];
        if !(smax > 0.0) {
            return Err(Error::DegenerateDesign);
        }
        let cutoff = RANK_TOL * smax;
        let rank = singular_values.iter().filter(|&&s| s > cutoff).count();
        let pseudo_inverse = svd
            .pseudo_inverse(cutoff)
            .map_err(|e| Error::Degenerate(format!("pseudo-inverse failed: {e}")))?;
        let condition_number = if rank == 16 {
            smax / singular_values[15]
        } else {
            f64::INFINITY
        };
        Ok(Self {
            a,
            pseudo_inverse,
            singular_values,
            rank,
            condition_number,
        })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == 16
    }

    /// `‖A⁺‖²_F`, the noise amplification of the least-squares estimator.
    pub fn noise_gain(&self) -> f64 {
        self.pseudo_inverse.norm_squared()
    }
}

pub fn design_matrix(schedule: &AngleSchedule) -> Result<DesignMatrix> {
    design_matrix_with(schedule, &OpticalPath::Spatial)
}

pub fn design_matrix_with(schedule: &AngleSchedule, path: &OpticalPath) -> Result<DesignMatrix> {
    DesignMatrix::from_matrix(raw_design_matrix(schedule, path))
}

/// The bare `A(Θ)`, without factorizing it.
pub fn raw_design_matrix(schedule: &AngleSchedule, path: &OpticalPath) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(schedule.rows(), 16);
    let mut row = 0;
    for k in 0..schedule.len() {
        for rv in row_vectors(schedule, path, k) {
            let values = outer_row(&rv.r, &rv.c);
            for (j, v) in values.iter().enumerate() {
                a[(row, j)] = *v;
            }
            row += 1;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsometry::schedule::drr_schedule;
    use crate::polarization::{compose, quarter_wave_plate};
    use crate::scene::generate_ensemble;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn random_schedule(rng: &mut impl Rng, k: usize, mode: SensorMode) -> AngleSchedule {
        let angles = (0..k)
            .map(|_| [0; 4].map(|_| rng.random_range(-3.0..3.0)))
            .collect();
        AngleSchedule::new(angles, mode, [false; 4]).unwrap()
    }

    /// Straight chain multiplication of the full optical train.
    fn chain_oracle(m: &MuellerMatrix, a: [f64; 4], analyzer: f64) -> f64 {
        let chain = [
            linear_polarizer(analyzer),
            quarter_wave_plate(a[2]),
            *m,
            quarter_wave_plate(a[1]),
            linear_polarizer(a[0]),
        ];
        compose(&chain).unwrap().m00()
    }

    #[test]
    fn identity_through_aligned_polarizers() {
        let s = drr_schedule(1, SensorMode::Intensity).unwrap();
        let i = forward_intensity(&MuellerMatrix::identity(), &s, 0, None).unwrap();
        // The first polarizer halves unpolarized light; the aligned second one and the
        // axis-aligned wave plates pass the rest.
        assert!((i - 0.5).abs() < 1e-15);
        let lp = linear_polarizer(0.0);
        assert!((lp * lp).max_abs_diff(&lp) < 1e-15);
        let d = drr_schedule(36, SensorMode::Intensity).unwrap();
        for k in 0..36 {
            assert_eq!(
                forward_intensity(&MuellerMatrix::zeros(), &d, k, None).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn matches_chain_oracle_on_drr_36() {
        let s = drr_schedule(36, SensorMode::Intensity).unwrap();
        let ensemble = generate_ensemble(11, 20).unwrap();
        for m in &ensemble.samples {
            for k in 0..36 {
                let got = forward_intensity(m, &s, k, None).unwrap();
                assert!((got - chain_oracle(m, s.angles[k], 0.0)).abs() < 1e-14);
            }
        }
        let p = drr_schedule(5, SensorMode::PolarizerArray).unwrap();
        let m = ensemble.samples[0];
        for k in 0..5 {
            for q in 0..4 {
                let got = forward_intensity(&m, &p, k, Some(q)).unwrap();
                assert!((got - chain_oracle(&m, p.angles[k], ANALYZER_ANGLES[q])).abs() < 1e-14);
            }
        }
        assert!(forward_intensity(&m, &p, 0, None).is_err());
        assert!(forward_intensity(&m, &p, 5, Some(0)).is_err());
    }

    #[test]
    fn design_rows_reproduce_forward_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for mode in [SensorMode::Intensity, SensorMode::PolarizerArray] {
            for path in [OpticalPath::Spatial, OpticalPath::coaxial()] {
                let s = random_schedule(&mut rng, 7, mode);
                let a = raw_design_matrix(&s, &path);
                let m = MuellerMatrix::from_row_major(
                    &(0..16)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
                .unwrap();
                let vec_m = nalgebra::DVector::from_row_slice(&m.to_row_major());
                let predicted = &a * vec_m;
                let mut row = 0;
                for k in 0..s.len() {
                    for q in 0..mode.rows_per_capture() {
                        let q = (mode == SensorMode::PolarizerArray).then_some(q);
                        let i = forward_intensity_with(&m, &s, &path, k, q).unwrap();
                        assert!((predicted[row] - i).abs() < 1e-12);
                        row += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn ranks() {
        let d36 = design_matrix(&drr_schedule(36, SensorMode::Intensity).unwrap()).unwrap();
        assert_eq!(d36.rank, 16);
        assert!(d36.condition_number.is_finite());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let s = random_schedule(&mut rng, 8, SensorMode::Intensity);
            let d = design_matrix(&s).unwrap();
            assert!(d.rank <= 8);
            assert!(d.condition_number.is_infinite());
            let p = AngleSchedule {
                sensor_mode: SensorMode::PolarizerArray,
                ..s.clone()
            };
            assert!(design_matrix(&p).unwrap().rank >= d.rank);
        }
        let coaxial = design_matrix_with(
            &drr_schedule(36, SensorMode::Intensity).unwrap(),
            &OpticalPath::coaxial(),
        )
        .unwrap();
        assert_eq!(coaxial.rank, 16);
    }

    #[test]
    fn all_zero_design_is_degenerate() {
        assert!(matches!(
            DesignMatrix::from_matrix(DMatrix::zeros(4, 16)),
            Err(Error::DegenerateDesign)
        ));
    }

    #[test]
    fn coaxial_mirror_sign_structure() {
        let mirror = MuellerMatrix::diagonal([1.0, 1.0, -1.0, -1.0]);
        let path = OpticalPath::coaxial();
        let at = |source_qwp: f64, detector_qwp: f64| {
            let s = AngleSchedule::new(
                vec![[0.0, source_qwp, detector_qwp, 0.0]],
                SensorMode::Intensity,
                [true; 4],
            )
            .unwrap();
            forward_intensity_with(&mirror, &s, &path, 0, None).unwrap()
        };
        // Folding in the galvo and beamsplitter, the same-handed configuration goes
        // dark and the opposite-handed one passes split² / 2 of the source.
        assert!(at(FRAC_PI_4, FRAC_PI_4).abs() < 1e-15);
        assert!((at(FRAC_PI_4, -FRAC_PI_4) - 0.125).abs() < 1e-15);
        let linear = at(0.0, 0.0);
        assert!((linear - 0.125).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for mode in [SensorMode::Intensity, SensorMode::PolarizerArray] {
            for path in [OpticalPath::Spatial, OpticalPath::coaxial()] {
                let s = random_schedule(&mut rng, 3, mode);
                for k in 0..3 {
                    let d = row_derivatives(&s, &path, k);
                    for col in 0..4 {
                        let mut plus = s.clone();
                        plus.angles[k][col] += h;
                        let mut minus = s.clone();
                        minus.angles[k][col] -= h;
                        let (rp, rm) =
                            (row_vectors(&plus, &path, k), row_vectors(&minus, &path, k));
                        for q in 0..d.len() {
                            let fd_r = (rp[q].r - rm[q].r) / (2.0 * h);
                            let fd_c = (rp[q].c - rm[q].c) / (2.0 * h);
                            assert!((fd_r - d[q].dr[col]).abs().max() < 1e-8);
                            assert!((fd_c - d[q].dc[col]).abs().max() < 1e-8);
                        }
                    }
                }
            }
        }
    }
}
