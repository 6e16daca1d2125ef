use nalgebra::{DMatrix, DVector};

use super::arctan_map;
use crate::error::{Error, Result};
use crate::polarization::MuellerMatrix;

/// Rows of normalized, arctangent-mapped Mueller samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationMatrix {
    /// `N × 16`, row-major Mueller entries.
    pub x: DMatrix<f64>,
    pub c: f64,
    /// Index of each row's sample in the input list.
    pub source_index: Vec<usize>,
    /// Samples dropped because `m00 <= 0`.
    pub skipped: usize,
}

impl ObservationMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }
}

pub fn build_observation(samples: &[MuellerMatrix], c: f64) -> Result<ObservationMatrix> {
    let mut rows = Vec::new();
    let mut source_index = Vec::new();
    for (i, m) in samples.iter().enumerate() {
        let m00 = m.m00();
        if !(m00 > 0.0) || !m.is_finite() {
            continue;
        }
        rows.extend(arctan_map(&m.scaled(1.0 / m00), c)?.to_row_major());
        source_index.push(i);
    }
    let skipped = samples.len() - source_index.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} samples with m00 <= 0");
    }
    if source_index.is_empty() {
        return Err(Error::Degenerate("no sample has m00 > 0".into()));
    }
    Ok(ObservationMatrix {
        x: DMatrix::from_row_slice(source_index.len(), 16, &rows),
        c,
        source_index,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalBasis {
    pub mean: DVector<f64>,
    /// Orthonormal principal directions as columns, `V`.
    pub directions: DMatrix<f64>,
    /// Nonincreasing, length 16.
    pub singular_values: DVector<f64>,
}

impl PrincipalBasis {
    /// `VΣ`.
    pub fn scaled_components(&self) -> DMatrix<f64> {
        &self.directions * DMatrix::from_diagonal(&self.singular_values)
    }

    /// Cumulative `Σ_{i≤k} σᵢ² / Σ σ²`; all ones when every row equals the mean.
    pub fn energy_curve(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        self.singular_values
            .iter()
            .map(|s| {
                acc += s * s;
                if total > 0.0 {
                    (acc / total).min(1.0)
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Smallest component count reaching `fraction` of the energy.
    pub fn components_for_energy(&self, fraction: f64) -> usize {
        self.energy_curve()
            .iter()
            .position(|&e| e >= fraction)
            .map_or(16, |i| i + 1)
    }

    /// Coordinates of rows of `x` in the principal basis.
    pub fn scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.centered(x) * &self.directions
    }

    /// Rows of `x` projected onto the top `r` components.
    pub fn reconstruct(&self, x: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
        let v = self.directions.columns(0, r.min(16));
        let mut out = self.centered(x) * v * v.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    fn centered(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= self.mean.transpose();
        }
        c
    }

    /// Mean row, then one row per column of `VΣ`, then the singular values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for i in 0..4 {
            for j in 0..4 {
                out.push_str(&format!(",m{i}{j}"));
            }
        }
        out.push('\n');
        let mut line = |name: String, values: &mut dyn Iterator<Item = f64>| {
            out.push_str(&name);
            for v in values {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        };
        line("mean".into(), &mut self.mean.iter().copied());
        let scaled = self.scaled_components();
        for k in 0..16 {
            line(format!("pc{k}"), &mut scaled.column(k).iter().copied());
        }
        line(
            "singular_values".into(),
            &mut self.singular_values.iter().copied(),
        );
        out
    }
}

/// Mean-centered SVD of the observation rows.
pub fn pca(obs: &ObservationMatrix) -> Result<PrincipalBasis> {
    let n = obs.rows();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let mean = DVector::from_iterator(16, obs.x.column_iter().map(|c| c.sum() / n as f64));
    // Zero rows keep V square when there are fewer than 16 samples.
    let mut centered = DMatrix::zeros(n.max(16), 16);
    for (i, row) in obs.x.row_iter().enumerate() {
        centered.row_mut(i).copy_from(&(row - mean.transpose()));
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..16).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values = DVector::from_iterator(16, order.iter().map(|&k| svd.singular_values[k]));
    let mut directions = DMatrix::zeros(16, 16);
    for (dst, &k) in order.iter().enumerate() {
        directions
            .column_mut(dst)
            .copy_from(&v_t.row(k).transpose());
    }
    Ok(PrincipalBasis {
        mean,
        directions,
        singular_values,
    })
}
