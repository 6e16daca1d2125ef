//! Image and grid export for slices and scalar maps.
//!
//! Images are written as binary PGM after min/max normalization; the range goes to a
//! TOML sidecar so signed values can be recovered.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::slice::SliceImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_level(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

/// Sidecar describing how gray levels map back to values: `v = min + level/max_level · (max − min)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub label: String,
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub bits: u32,
}

impl Normalization {
    pub fn value_of(&self, level: u32) -> f64 {
        let top = ((1u64 << self.bits) - 1) as f64;
        self.min + level as f64 / top * (self.max - self.min)
    }
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    let mut name = image_path.as_os_str().to_owned();
    name.push(".toml");
    PathBuf::from(name)
}

fn levels(img: &SliceImage, depth: BitDepth) -> Result<(Vec<f64>, Normalization)> {
    if img.values.len() != img.width * img.height || img.values.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} holds {} values",
            img.width,
            img.height,
            img.values.len()
        )));
    }
    if img.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "image `{}` has non-finite values",
            img.label
        )));
    }
    let min = img.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = img.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let top = depth.max_level();
    let lv = img
        .values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - min) / span * top).round()
            } else {
                0.0
            }
        })
        .collect();
    Ok((
        lv,
        Normalization {
            label: img.label.clone(),
            width: img.width,
            height: img.height,
            min,
            max,
            bits: depth.bits(),
        },
    ))
}

/// Writes `path` as binary PGM and `path.toml` with the normalization.
pub fn write_pgm(path: &Path, img: &SliceImage, depth: BitDepth) -> Result<Normalization> {
    let (lv, norm) = levels(img, depth)?;
    let mut bytes =
        format!("P5\n{} {}\n{}\n", img.width, img.height, depth.max_level()).into_bytes();
    for v in lv {
        match depth {
            BitDepth::Eight => bytes.push(v as u8),
            BitDepth::Sixteen => bytes.extend_from_slice(&(v as u16).to_be_bytes()),
        }
    }
    fs::write(path, bytes)?;
    let text = toml::to_string(&norm).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(sidecar_path(path), text)?;
    Ok(norm)
}

/// Raw values as CSV, one image row per line.
pub fn grid_csv(img: &SliceImage) -> String {
    let mut out = String::new();
    for row in img.values.chunks(img.width.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, img: &SliceImage) -> Result<()> {
    fs::write(path, grid_csv(img))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal binary PGM reader: `(width, height, maxval, samples)`.
    fn read_pgm(path: &Path) -> (usize, usize, u32, Vec<u32>) {
        let bytes = fs::read(path).unwrap();
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
        }
        assert_eq!(fields[0], "P5");
        let (w, h, maxval): (usize, usize, u32) = (
            fields[1].parse().unwrap(),
            fields[2].parse().unwrap(),
            fields[3].parse().unwrap(),
        );
        let data = &bytes[pos + 1..];
        let samples = if maxval > 255 {
            data.chunks(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
                .collect()
        } else {
            data.iter().map(|&b| b as u32).collect()
        };
        (w, h, maxval, samples)
    }

    fn signed() -> SliceImage {
        SliceImage {
            label: "p=3,p'=3".into(),
            width: 3,
            height: 2,
            values: vec![-1.0, -0.5, 0.0, 0.25, 0.5, 1.0],
        }
    }

    #[test]
    fn pgm_round_trip_through_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let norm = write_pgm(&path, &signed(), BitDepth::Sixteen).unwrap();
        assert_eq!((norm.min, norm.max), (-1.0, 1.0));
        let (w, h, maxval, samples) = read_pgm(&path);
        assert_eq!((w, h, maxval, samples.len()), (3, 2, 65535, 6));
        let side: Normalization =
            toml::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(side, norm);
        for (&level, v) in samples.iter().zip(&signed().values) {
            assert!((side.value_of(level) - v).abs() <= 2.0 / 65535.0);
        }
        assert_eq!((samples[0], samples[5]), (0, 65535));
    }

    #[test]
    fn eight_bit_and_constant_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.pgm");
        let flat = SliceImage {
            label: String::new(),
            width: 2,
            height: 2,
            values: vec![3.0; 4],
        };
        let norm = write_pgm(&path, &flat, BitDepth::Eight).unwrap();
        assert_eq!(norm.bits, 8);
        let (_, _, maxval, samples) = read_pgm(&path);
        assert_eq!(maxval, 255);
        assert_eq!(samples, vec![0; 4]);
        assert_eq!(norm.value_of(0), 3.0);
    }

    #[test]
    fn rejects_bad_images() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = signed();
        bad.values[0] = f64::NAN;
        assert!(write_pgm(&dir.path().join("a.pgm"), &bad, BitDepth::Eight).is_err());
        bad.values.pop();
        assert!(write_pgm(&dir.path().join("b.pgm"), &bad, BitDepth::Eight).is_err());
    }

    #[test]
    fn csv_rows() {
        let csv = grid_csv(&signed());
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 3);
    }
}
