use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsometry::{
    outer_row, raw_design_matrix, row_derivatives, row_vectors, AngleSchedule, OpticalPath,
    RANK_TOL,
};
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;

/// Truncated SVD pseudo-inverse plus the rank it kept.
pub(crate) struct Factored {
    pub a: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub rank: usize,
}

pub(crate) fn factor(schedule: &AngleSchedule, path: &OpticalPath) -> Result<Factored> {
    let a = raw_design_matrix(schedule, path);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return Err(Error::DegenerateDesign);
    }
    let cutoff = RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    // Full column rank: A⁺ = R⁻¹Qᵀ. Householder QR has no iteration count that can
    // change with the angles, so the loss stays smooth down to roundoff, which
    // finite-difference checks rely on.
    if rank == 16 {
        let qr = a.clone().qr();
        if let Some(pinv) = qr.r().solve_upper_triangular(&qr.q().transpose()) {
            return Ok(Factored { a, pinv, rank });
        }
    }
    let pinv = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::Degenerate(format!("pseudo-inverse failed: {e}")))?;
    Ok(Factored { a, pinv, rank })
}

fn columns(samples: &[MuellerMatrix]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(16, samples.len());
    for (j, s) in samples.iter().enumerate() {
        m.column_mut(j).copy_from_slice(&s.to_row_major());
    }
    m
}

/// Pairs sample `i` with noise vectors `noise[i·d .. (i+1)·d]`, `d = noise.len() / samples.len()`.
fn stacked(
    samples: &[MuellerMatrix],
    noise: &[DVector<f64>],
    rows: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "loss needs at least one sample".into(),
        ));
    }
    let draws = if noise.is_empty() {
        1
    } else {
        noise.len() / samples.len()
    };
    if !noise.is_empty()
        && (!noise.len().is_multiple_of(samples.len()) || noise.iter().any(|n| n.len() != rows))
    {
        return Err(Error::DimensionMismatch(format!(
            "{} noise vectors do not pair with {} samples of {rows} rows",
            noise.len(),
            samples.len()
        )));
    }
    let m = columns(samples);
    let mut truth = DMatrix::zeros(16, samples.len() * draws);
    let mut eta = DMatrix::zeros(rows, samples.len() * draws);
    for i in 0..samples.len() {
        for d in 0..draws {
            let j = i * draws + d;
            truth.set_column(j, &m.column(i));
            if !noise.is_empty() {
                eta.set_column(j, &noise[j]);
            }
        }
    }
    Ok((truth, eta))
}

/// Mean of `‖A⁺(A·vec(M) + η) − vec(M)‖²` over samples and their noise draws.
pub fn loss(
    schedule: &AngleSchedule,
    path: &OpticalPath,
    samples: &[MuellerMatrix],
    noise: &[DVector<f64>],
) -> Result<f64> {
    let f = factor(schedule, path)?;
    let (truth, eta) = stacked(samples, noise, f.a.nrows())?;
    let y = &f.a * &truth + eta;
    let e = &f.pinv * y - truth;
    Ok(e.norm_squared() / e.ncols() as f64)
}

/// Loss value and its gradient with respect to every schedule angle.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// `∂L/∂θ_{k,c}`, zero for fixed columns.
    pub gradient: Vec<[f64; 4]>,
    pub rank: usize,
    /// The design lost rank relative to its row count, where the pseudo-inverse is not
    /// differentiable; the fixed-rank gradient is returned.
    pub rank_deficient: bool,
}

/// Exact gradient of [`loss`] through `A(Θ)` and its pseudo-inverse at fixed rank.
pub fn grad_loss(
    schedule: &AngleSchedule,
    path: &OpticalPath,
    samples: &[MuellerMatrix],
    noise: &[DVector<f64>],
) -> Result<LossGradient> {
    let f = factor(schedule, path)?;
    let (truth, eta) = stacked(samples, noise, f.a.nrows())?;
    let n = truth.ncols() as f64;
    let y = &f.a * &truth + eta;
    let x = &f.pinv * &y;
    let e = &x - &truth;
    let loss = e.norm_squared() / n;

    // dL = 2 eᵀ (dA⁺ y + A⁺ dA m) with
    // dA⁺ = −A⁺ dA A⁺ + A⁺A⁺ᵀ dAᵀ (I − AA⁺) + (I − A⁺A) dAᵀ A⁺ᵀA⁺.
    // The first term and the data term combine into −A⁺ dA e.
    let pinv_t = f.pinv.transpose();
    let q = &y - &f.a * &x;
    let u = &e - &f.pinv * (&f.a * &e);
    let g1 = -(&pinv_t * &e) * e.transpose();
    let g2 = &q * (&f.pinv * (&pinv_t * &e)).transpose();
    let g3 = (&pinv_t * &x) * u.transpose();
    let g_a = (g1 + g2 + g3) * (2.0 / n);

    let trainable = schedule.trainable_columns();
    let mut gradient = vec![[0.0; 4]; schedule.len()];
    let mut row = 0;
    for (k, grad_k) in gradient.iter_mut().enumerate() {
        let vectors = row_vectors(schedule, path, k);
        let derivs = row_derivatives(schedule, path, k);
        for (rv, d) in vectors.iter().zip(&derivs) {
            let g_row = g_a.row(row);
            for &c in &trainable {
                let dr = outer_row(&d.dr[c], &rv.c);
                let dc = outer_row(&rv.r, &d.dc[c]);
                grad_k[c] += (0..16).map(|j| g_row[j] * (dr[j] + dc[j])).sum::<f64>();
            }
            row += 1;
        }
    }
    let generic_rank = f.a.nrows().min(16);
    Ok(LossGradient {
        loss,
        gradient,
        rank: f.rank,
        rank_deficient: f.rank < generic_rank,
    })
}

/// Noise expectation of [`loss`]: `mean ‖(A⁺A − I)·vec(M)‖² + σ²‖A⁺‖²_F`.
pub fn expected_loss(
    schedule: &AngleSchedule,
    path: &OpticalPath,
    samples: &[MuellerMatrix],
    noise_sigma: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "expected loss needs at least one sample".into(),
        ));
    }
    let f = factor(schedule, path)?;
    let m = columns(samples);
    let bias = (&f.pinv * (&f.a * &m) - &m).norm_squared() / samples.len() as f64;
    Ok(bias + noise_sigma * noise_sigma * f.pinv.norm_squared())
}

/// Gaussian noise vectors for `samples × draws` evaluations.
pub fn noise_draws(
    rows: usize,
    count: usize,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DVector<f64>>> {
    if noise_sigma == 0.0 {
        return Ok(vec![DVector::zeros(rows); count]);
    }
    let normal =
        Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..count)
        .map(|_| DVector::from_fn(rows, |_, _| normal.sample(rng)))
        .collect())
}

/// Reconstruction error statistics over an ensemble and noise draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean squared Frobenius error, the loss.
    pub mse: f64,
    pub mean: f64,
    pub median: f64,
    pub p90: f64,
    pub max: f64,
    pub evaluations: usize,
}

/// Monte Carlo Frobenius reconstruction errors; sample `i` draws its noise from
/// stream `i` of `seed`.
pub fn evaluate(
    schedule: &AngleSchedule,
    path: &OpticalPath,
    samples: &[MuellerMatrix],
    noise_sigma: f64,
    draws: usize,
    seed: u64,
) -> Result<ErrorStats> {
    if samples.is_empty() || draws == 0 {
        return Err(Error::InvalidArgument(
            "evaluation needs samples and at least one draw".into(),
        ));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    let f = factor(schedule, path)?;
    let rows = f.a.nrows();
    let mut errors: Vec<f64> = samples
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let truth = DVector::from_row_slice(&m.to_row_major());
            let clean = &f.a * &truth;
            noise_draws(rows, draws, noise_sigma, &mut rng)
                .expect("sigma validated")
                .into_iter()
                .map(|eta| (&f.pinv * (&clean + eta) - &truth).norm())
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let n = errors.len();
    let mse = errors.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let mean = errors.iter().sum::<f64>() / n as f64;
    errors.sort_by(f64::total_cmp);
    let quantile = |q: f64| errors[((q * (n - 1) as f64).round() as usize).min(n - 1)];
    Ok(ErrorStats {
        mse,
        mean,
        median: quantile(0.5),
        p90: quantile(0.9),
        max: errors[n - 1],
        evaluations: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsometry::{drr_schedule, SensorMode};
    use crate::scene::generate_ensemble;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_schedule(rng: &mut impl Rng, k: usize, mode: SensorMode) -> AngleSchedule {
        let angles = (0..k)
            .map(|_| [0; 4].map(|_| rng.random_range(0.0..PI)))
            .collect();
        AngleSchedule::new(angles, mode, [false; 4]).unwrap()
    }

    fn normalized(seed: u64, n: usize) -> Vec<MuellerMatrix> {
        generate_ensemble(seed, n).unwrap().normalized()
    }

    #[test]
    fn zero_noise_full_rank_loss_and_gradient_vanish() {
        let s = drr_schedule(36, SensorMode::Intensity).unwrap();
        let batch = normalized(1, 16);
        let g = grad_loss(&s, &OpticalPath::Spatial, &batch, &[]).unwrap();
        assert!(g.loss < 1e-25);
        assert!(g.gradient.iter().flatten().all(|v| v.abs() < 1e-12));
        assert_eq!(g.rank, 16);
        assert!(!g.rank_deficient);
    }

    #[test]
    fn monte_carlo_loss_matches_noise_identity() {
        let s = drr_schedule(36, SensorMode::Intensity).unwrap();
        let sigma = 5e-4;
        let batch = normalized(2, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = noise_draws(36, 10 * 1000, sigma, &mut rng).unwrap();
        let mc = loss(&s, &OpticalPath::Spatial, &batch, &noise).unwrap();
        let analytic = expected_loss(&s, &OpticalPath::Spatial, &batch, sigma).unwrap();
        let gain = crate::ellipsometry::design_matrix(&s).unwrap().noise_gain();
        assert!((analytic - sigma * sigma * gain).abs() < 1e-12 * analytic);
        assert!(
            (mc / analytic - 1.0).abs() < 0.05,
            "mc {mc} analytic {analytic}"
        );
        // Independent of the batch at full rank.
        let other = expected_loss(&s, &OpticalPath::Spatial, &normalized(3, 7), sigma).unwrap();
        assert!((other - analytic).abs() < 1e-12 * analytic);
    }

    #[test]
    fn low_rank_structure_helps_at_k8() {
        let s = drr_schedule(8, SensorMode::Intensity).unwrap();
        let ensemble = normalized(4, 500);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let uniform: Vec<MuellerMatrix> = (0..500)
            .map(|_| {
                let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
                MuellerMatrix::from_row_major(&v).unwrap()
            })
            .collect();
        let on_ensemble = expected_loss(&s, &OpticalPath::Spatial, &ensemble, 5e-4).unwrap();
        let on_uniform = expected_loss(&s, &OpticalPath::Spatial, &uniform, 5e-4).unwrap();
        assert!(on_ensemble <= on_uniform, "{on_ensemble} vs {on_uniform}");
        // Below full rank the loss depends on the batch.
        let a = expected_loss(&s, &OpticalPath::Spatial, &ensemble[..10], 0.0).unwrap();
        let b = expected_loss(&s, &OpticalPath::Spatial, &ensemble[10..20], 0.0).unwrap();
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = normalized(9, 6);
        let h = 1e-6;
        for mode in [SensorMode::Intensity, SensorMode::PolarizerArray] {
            for k in [8, 15] {
                let s = random_schedule(&mut rng, k, mode);
                let noise = noise_draws(s.rows(), 12, 5e-2, &mut rng).unwrap();
                let path = OpticalPath::Spatial;
                let g = grad_loss(&s, &path, &batch, &noise).unwrap();
                let mut num = 0.0;
                let mut den = 0.0;
                for kk in 0..k {
                    for c in s.trainable_columns() {
                        let mut plus = s.clone();
                        plus.angles[kk][c] += h;
                        let mut minus = s.clone();
                        minus.angles[kk][c] -= h;
                        let fd = (loss(&plus, &path, &batch, &noise).unwrap()
                            - loss(&minus, &path, &batch, &noise).unwrap())
                            / (2.0 * h);
                        num += (fd - g.gradient[kk][c]).powi(2);
                        den += fd * fd;
                    }
                }
                assert!(
                    (num / den).sqrt() < 1e-5,
                    "{mode:?} K={k}: {}",
                    (num / den).sqrt()
                );
            }
        }
    }

    #[test]
    fn symmetric_schedule_has_symmetric_gradient() {
        let s = AngleSchedule::new(
            vec![[0.1, 0.4, 0.9, 0.3]; 5],
            SensorMode::Intensity,
            [false; 4],
        )
        .unwrap();
        let g = grad_loss(&s, &OpticalPath::Spatial, &normalized(10, 8), &[]).unwrap();
        assert!(g.rank_deficient);
        for k in 1..5 {
            for c in 0..4 {
                assert!(
                    (g.gradient[k][c] - g.gradient[0][c]).abs()
                        < 1e-12 * (1.0 + g.gradient[0][c].abs())
                );
            }
        }
    }

    #[test]
    fn loss_is_pi_periodic_in_each_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = random_schedule(&mut rng, 8, SensorMode::Intensity);
        let batch = normalized(12, 5);
        let noise = noise_draws(8, 5, 1e-2, &mut rng).unwrap();
        let base = loss(&s, &OpticalPath::Spatial, &batch, &noise).unwrap();
        for c in 0..4 {
            let mut shifted = s.clone();
            shifted.angles[3][c] += PI;
            let l = loss(&shifted, &OpticalPath::Spatial, &batch, &noise).unwrap();
            assert!((l - base).abs() <= 1e-9 * base, "column {c}: {l} vs {base}");
        }
    }

    #[test]
    fn evaluate_statistics() {
        let s36 = drr_schedule(36, SensorMode::Intensity).unwrap();
        let s15 = drr_schedule(15, SensorMode::Intensity).unwrap();
        let ensemble = normalized(13, 200);
        let zero = evaluate(&s36, &OpticalPath::Spatial, &ensemble, 0.0, 1, 0).unwrap();
        assert!(zero.max < 1e-12);
        let e36 = evaluate(&s36, &OpticalPath::Spatial, &ensemble, 5e-4, 20, 1).unwrap();
        let e15 = evaluate(&s15, &OpticalPath::Spatial, &ensemble, 5e-4, 20, 1).unwrap();
        assert!(e15.mse >= e36.mse);
        assert!(e36.median <= e36.p90 && e36.p90 <= e36.max);
        assert_eq!(e36.evaluations, 4000);
    }
}
