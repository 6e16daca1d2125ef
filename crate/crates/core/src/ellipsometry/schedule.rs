use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the detector side analyzes light.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorMode {
    /// One intensity per capture behind the detector QWP and LP.
    Intensity,
    /// On-sensor analyzers at 0°, 45°, 90° and 135° replace the detector LP, giving
    /// four intensities per capture.
    PolarizerArray,
}

impl SensorMode {
    pub fn rows_per_capture(self) -> usize {
        match self {
            SensorMode::Intensity => 1,
            SensorMode::PolarizerArray => 4,
        }
    }
}

/// Analyzer orientations of a polarizer-array sensor.
pub const ANALYZER_ANGLES: [f64; 4] = [0.0, PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];

/// Per-capture element angles `(θ¹, θ², θ³, θ⁴)` in radians: source LP, source QWP,
/// detector QWP, detector LP.
#[derive(Clone, Debug, PartialEq)]
pub struct AngleSchedule {
    pub angles: Vec<[f64; 4]>,
    pub sensor_mode: SensorMode,
    /// `true` marks a column whose element stays put (and is not trained).
    pub fixed: [bool; 4],
}

impl AngleSchedule {
    pub fn new(angles: Vec<[f64; 4]>, sensor_mode: SensorMode, fixed: [bool; 4]) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::InvalidArgument(
                "a schedule needs at least one capture".into(),
            ));
        }
        if angles.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument(
                "schedule angles must be finite".into(),
            ));
        }
        Ok(Self {
            angles,
            sensor_mode,
            fixed,
        })
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Design-matrix rows: `K` or `4K`.
    pub fn rows(&self) -> usize {
        self.len() * self.sensor_mode.rows_per_capture()
    }

    /// Same angles reduced to `[0, π)`.
    pub fn wrapped(&self) -> Self {
        let mut out = self.clone();
        for a in out.angles.iter_mut().flatten() {
            *a = a.rem_euclid(PI);
        }
        out
    }

    /// Columns whose angles are free to move, excluding θ⁴ in polarizer-array mode.
    pub fn trainable_columns(&self) -> Vec<usize> {
        (0..4)
            .filter(|&c| {
                !self.fixed[c] && !(c == 3 && self.sensor_mode == SensorMode::PolarizerArray)
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        let file = ScheduleFile {
            sensor_mode: self.sensor_mode,
            fixed: self.fixed,
            angles_deg: self.angles.iter().map(|a| a.map(f64::to_degrees)).collect(),
        };
        toml::to_string(&file).map_err(|e| Error::Format(format!("schedule serialization: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScheduleFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("schedule: {e}")))?;
        Self::new(
            file.angles_deg
                .iter()
                .map(|a| a.map(f64::to_radians))
                .collect(),
            file.sensor_mode,
            file.fixed,
        )
    }
}

/// On-disk schedule, angles in degrees.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    sensor_mode: SensorMode,
    #[serde(default = "drr_fixed")]
    fixed: [bool; 4],
    angles_deg: Vec<[f64; 4]>,
}

fn drr_fixed() -> [bool; 4] {
    [true, false, false, true]
}

/// Dual-rotating-retarder schedule: LPs at 0°, source QWP stepping 5° and detector
/// QWP stepping 25° per capture.
pub fn drr_schedule(k: usize, sensor_mode: SensorMode) -> Result<AngleSchedule> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "a schedule needs at least one capture".into(),
        ));
    }
    let angles = (0..k)
        .map(|i| {
            let i = i as f64;
            [0.0, (5.0 * i).to_radians(), (25.0 * i).to_radians(), 0.0]
        })
        .collect();
    AngleSchedule::new(angles, sensor_mode, drr_fixed())
}
