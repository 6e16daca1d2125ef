//! Synthetic stand-in for measured polarimetric BRDF data.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fresnel_mueller;
use crate::error::{Error, Result};
use crate::polarization::{retarder, MuellerMatrix};

/// Relative frequency of the three sample families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyWeights {
    /// Bare Fresnel reflection.
    pub fresnel: f64,
    /// Fresnel reflection blended with a diffuse depolarizer.
    pub depolarizing_mix: f64,
    /// Blended reflection sandwiched between random retarders and rotated frames.
    pub composed: f64,
}

impl Default for FamilyWeights {
    fn default() -> Self {
        Self {
            fresnel: 0.3,
            depolarizing_mix: 0.4,
            composed: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticMuellerEnsemble {
    pub samples: Vec<MuellerMatrix>,
    pub generator_seed: u64,
    pub weights: FamilyWeights,
}

impl SyntheticMuellerEnsemble {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Every sample divided by its `m00`.
    pub fn normalized(&self) -> Vec<MuellerMatrix> {
        self.samples
            .iter()
            .map(|m| m.scaled(1.0 / m.m00()))
            .collect()
    }
}

pub fn generate_ensemble(seed: u64, n: usize) -> Result<SyntheticMuellerEnsemble> {
    generate_ensemble_with(seed, n, FamilyWeights::default())
}

/// Sample `i` draws from its own ChaCha stream, so the result does not depend on
/// thread scheduling.
pub fn generate_ensemble_with(
    seed: u64,
    n: usize,
    weights: FamilyWeights,
) -> Result<SyntheticMuellerEnsemble> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "ensemble size must be at least 1".into(),
        ));
    }
    let total = weights.fresnel + weights.depolarizing_mix + weights.composed;
    if [weights.fresnel, weights.depolarizing_mix, weights.composed]
        .iter()
        .any(|w| !(*w >= 0.0))
        || !(total > 0.0)
    {
        return Err(Error::InvalidArgument(
            "family weights must be nonnegative with a positive sum".into(),
        ));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            loop {
                let m = draw(&mut rng, &weights, total);
                if m.is_passive_valid() && m.m00() > 0.0 {
                    return m;
                }
            }
        })
        .collect();
    Ok(SyntheticMuellerEnsemble {
        samples,
        generator_seed: seed,
        weights,
    })
}

fn random_fresnel(rng: &mut impl Rng) -> MuellerMatrix {
    let eta = rng.random_range(1.3..=2.5);
    let incidence = rng.random_range(5f64.to_radians()..=85f64.to_radians());
    fresnel_mueller(eta, incidence).expect("sampled parameters are in range")
}

fn depolarizing_mix(rng: &mut impl Rng) -> MuellerMatrix {
    let f = random_fresnel(rng);
    let specular = f.scaled(1.0 / f.m00());
    let r = rng.random_range(0.0..=0.6);
    let diffuse = MuellerMatrix::diagonal([1.0, r, r, 0.5 * r]);
    let w = rng.random_range(0.0..=1.0);
    let albedo = rng.random_range(0.05..=1.0);
    (specular.scaled(w) + diffuse.scaled(1.0 - w)).scaled(albedo)
}

fn draw(rng: &mut impl Rng, weights: &FamilyWeights, total: f64) -> MuellerMatrix {
    let u = rng.random_range(0.0..total);
    if u < weights.fresnel {
        let f = random_fresnel(rng);
        let frame = rng.random_range(0.0..std::f64::consts::PI);
        f.rotated(frame)
    } else if u < weights.fresnel + weights.depolarizing_mix {
        depolarizing_mix(rng).rotated(rng.random_range(0.0..std::f64::consts::PI))
    } else {
        let core = depolarizing_mix(rng);
        let mut angle = || rng.random_range(0.0..std::f64::consts::PI);
        let (a1, a2, frame) = (angle(), angle(), angle());
        let (d1, d2) = (
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(0.0..std::f64::consts::PI),
        );
        let rotator = MuellerMatrix::rotation(rng.random_range(0.0..std::f64::consts::PI));
        rotator * retarder(a2, d2) * core.rotated(frame) * retarder(a1, d1)
    }
}
