use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::loss::{expected_loss, grad_loss, noise_draws};
use super::TrainingConfig;
use crate::ellipsometry::{drr_schedule, AngleSchedule};
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;

/// Abort once the held-out loss exceeds this multiple of its starting value.
const DIVERGENCE_FACTOR: f64 = 1e3;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct LearnedSchedule {
    /// Best held-out iterate, angles reduced to `[0, π)`.
    pub schedule: AngleSchedule,
    pub initial: AngleSchedule,
    /// Mini-batch loss per iteration.
    pub training_loss: Vec<f64>,
    /// Held-out expected loss per iteration.
    pub heldout_loss: Vec<f64>,
    pub initial_heldout_loss: f64,
    pub best_heldout_loss: f64,
    /// 0 is the initialization; `i` is the iterate after `i` updates.
    pub best_iteration: usize,
    pub rank_deficient_iterations: usize,
    pub config_hash: String,
}

impl LearnedSchedule {
    /// Running minimum of the held-out curve, i.e. the loss of the iterate that would
    /// be returned if training stopped there.
    pub fn best_curve(&self) -> Vec<f64> {
        let mut best = self.initial_heldout_loss;
        self.heldout_loss
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }

    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("iteration,training_loss,heldout_loss,best_heldout_loss\n");
        for (i, ((t, h), b)) in self
            .training_loss
            .iter()
            .zip(&self.heldout_loss)
            .zip(self.best_curve())
            .enumerate()
        {
            out.push_str(&format!("{},{t:e},{h:e},{b:e}\n", i + 1));
        }
        out
    }

    pub fn report_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Report<'a> {
            config_hash: &'a str,
            captures: usize,
            sensor_mode: crate::ellipsometry::SensorMode,
            iterations: usize,
            initialization: &'static str,
            initial_heldout_loss: f64,
            best_heldout_loss: f64,
            best_iteration: usize,
            improvement_ratio: f64,
            rank_deficient_iterations: usize,
        }
        toml::to_string(&Report {
            config_hash: &self.config_hash,
            captures: self.schedule.len(),
            sensor_mode: self.schedule.sensor_mode,
            iterations: self.training_loss.len(),
            initialization: "drr",
            initial_heldout_loss: self.initial_heldout_loss,
            best_heldout_loss: self.best_heldout_loss,
            best_iteration: self.best_iteration,
            improvement_ratio: self.best_heldout_loss / self.initial_heldout_loss,
            rank_deficient_iterations: self.rank_deficient_iterations,
        })
        .map_err(|e| Error::Format(format!("training report: {e}")))
    }
}

/// Trains on the ensemble named by the config.
pub fn learn(config: &TrainingConfig) -> Result<LearnedSchedule> {
    let samples = config.ensemble.samples()?;
    learn_on(config, &samples)
}

/// Adam from the DRR schedule with cosine step decay, keeping the iterate with the
/// lowest held-out expected loss.
pub fn learn_on(config: &TrainingConfig, samples: &[MuellerMatrix]) -> Result<LearnedSchedule> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let holdout_len = ((samples.len() as f64 * config.holdout_fraction).round() as usize)
        .clamp(1, samples.len().max(2) - 1);
    if samples.len() < 2 {
        return Err(Error::Config("training needs at least two samples".into()));
    }
    let heldout: Vec<MuellerMatrix> = order[..holdout_len].iter().map(|&i| samples[i]).collect();
    let train: Vec<MuellerMatrix> = order[holdout_len..].iter().map(|&i| samples[i]).collect();
    if config.batch_size > train.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training samples",
            config.batch_size,
            train.len()
        )));
    }

    let mut initial = drr_schedule(config.k, config.sensor_mode)?;
    initial.fixed = config.trainable.map(|t| !t);
    let columns = initial.trainable_columns();
    let path = config.path;

    let initial_heldout_loss = expected_loss(&initial, &path, &heldout, config.noise_sigma)?;
    let mut current = initial.clone();
    let mut best = (initial.clone(), initial_heldout_loss, 0);
    let mut m1 = vec![[0.0; 4]; config.k];
    let mut m2 = vec![[0.0; 4]; config.k];
    let mut training_loss = Vec::with_capacity(config.iterations);
    let mut heldout_loss = Vec::with_capacity(config.iterations);
    let mut rank_deficient_iterations = 0;
    let rows = initial.rows();

    for it in 0..config.iterations {
        let batch: Vec<MuellerMatrix> =
            rand::seq::index::sample(&mut rng, train.len(), config.batch_size)
                .into_iter()
                .map(|i| train[i])
                .collect();
        let noise = noise_draws(rows, batch.len(), config.noise_sigma, &mut rng)?;
        let g = grad_loss(&current, &path, &batch, &noise)?;
        if g.rank_deficient {
            rank_deficient_iterations += 1;
        }
        training_loss.push(g.loss);

        let lr =
            0.5 * config.learning_rate * (1.0 + (PI * it as f64 / config.iterations as f64).cos());
        let step = (it + 1) as i32;
        let (c1, c2) = (1.0 - BETA1.powi(step), 1.0 - BETA2.powi(step));
        for k in 0..config.k {
            for &c in &columns {
                let grad = g.gradient[k][c];
                m1[k][c] = BETA1 * m1[k][c] + (1.0 - BETA1) * grad;
                m2[k][c] = BETA2 * m2[k][c] + (1.0 - BETA2) * grad * grad;
                current.angles[k][c] -= lr * (m1[k][c] / c1) / ((m2[k][c] / c2).sqrt() + ADAM_EPS);
            }
        }

        let h = expected_loss(&current, &path, &heldout, config.noise_sigma)?;
        heldout_loss.push(h);
        if diverged(h, initial_heldout_loss) {
            return Err(Error::Diverged {
                iteration: it + 1,
                loss: h,
                initial: initial_heldout_loss,
            });
        }
        if h < best.1 {
            best = (current.clone(), h, it + 1);
        }
    }

    Ok(LearnedSchedule {
        schedule: best.0.wrapped(),
        initial,
        training_loss,
        heldout_loss,
        initial_heldout_loss,
        best_heldout_loss: best.1,
        best_iteration: best.2,
        rank_deficient_iterations,
        config_hash: config.hash()?,
    })
}

/// A zero-loss start (noise-free, full rank) is compared against machine epsilon so
/// rounding noise does not count as divergence.
fn diverged(loss: f64, initial: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial.max(f64::EPSILON)
}

/// One fold of [`cross_validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub learned: LearnedSchedule,
    /// Expected loss of the learned schedule on the fold's test samples.
    pub test_loss: f64,
    /// Expected loss of the DRR initialization on the same samples.
    pub baseline_test_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
}

impl CrossValidation {
    pub fn mean_test_loss(&self) -> f64 {
        self.folds.iter().map(|f| f.test_loss).sum::<f64>() / self.folds.len() as f64
    }

    pub fn mean_baseline_loss(&self) -> f64 {
        self.folds.iter().map(|f| f.baseline_test_loss).sum::<f64>() / self.folds.len() as f64
    }
}

/// Splits the samples into `folds` parts; each fold trains on the others and is
/// scored on its own part. Folds run in parallel and each is deterministic.
pub fn cross_validate(
    config: &TrainingConfig,
    samples: &[MuellerMatrix],
    folds: usize,
) -> Result<CrossValidation> {
    if folds < 2 || folds > samples.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} samples into {folds} folds",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f01d));
    let results: Vec<Result<FoldResult>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if pos % folds == fold {
                    test.push(samples[i]);
                } else {
                    train.push(samples[i]);
                }
            }
            let mut fold_config = config.clone();
            fold_config.seed = config.seed.wrapping_add(fold as u64);
            let learned = learn_on(&fold_config, &train)?;
            let test_loss =
                expected_loss(&learned.schedule, &config.path, &test, config.noise_sigma)?;
            let baseline_test_loss =
                expected_loss(&learned.initial, &config.path, &test, config.noise_sigma)?;
            Ok(FoldResult {
                fold,
                learned,
                test_loss,
                baseline_test_loss,
            })
        })
        .collect();
    Ok(CrossValidation {
        folds: results.into_iter().collect::<Result<_>>()?,
    })
}
