//! JSON dataset files.
//!
//! DOAs are read either as unit vectors `[x, y, z]` or as
//! `{"azimuth_deg", "elevation_deg"}` with azimuth from +x toward +y in
//! [−180°, 180°] and elevation from the x-y plane in [−90°, 90°]. Writers
//! always emit unit vectors and covariances so that a save/load cycle is
//! bit exact.

use std::fs;
use std::path::Path;

use arraycal_core::measurement::{az_el_to_unit, MeasurementSet, NoiseModel, StepMeasurement, DEFAULT_SPEED_OF_SOUND};
use arraycal_core::rotation::EulerZYX;
use arraycal_core::state::{ArrayParams, Scene, SourceTrajectory, StateVector};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub schema_version: u32,
    pub n_arrays: usize,
    pub n_steps: usize,
    /// m/s.
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    /// Seconds, one per step.
    pub emission_times: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Meters, `s^{k+1} − s^k` for k = 1..K−1.
    pub rel_displacements: Vec<[f64; 3]>,
    pub noise: NoiseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<StateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    /// One per array, reference first.
    pub doas: Vec<DoaRecord>,
    /// Seconds, arrays 2..N.
    pub tdoas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DoaRecord {
    Unit([f64; 3]),
    Angles { azimuth_deg: f64, elevation_deg: f64 },
}

impl DoaRecord {
    fn to_unit(self, array: usize, step: usize) -> Result<Vector3<f64>> {
        match self {
            DoaRecord::Unit(v) => Ok(Vector3::from(v)),
            DoaRecord::Angles {
                azimuth_deg,
                elevation_deg,
            } => {
                if !(-180.0..=180.0).contains(&azimuth_deg) || !(-90.0..=90.0).contains(&elevation_deg) {
                    return Err(Error::SchemaMismatch(format!(
                        "step {step}, array {array}: azimuth must lie in [-180, 180] and elevation in [-90, 90] degrees"
                    )));
                }
                Ok(az_el_to_unit(azimuth_deg.to_radians(), elevation_deg.to_radians()))
            }
        }
    }
}

/// Measurement noise. Files written by this crate use the covariance form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseRecord {
    Covariance {
        /// s².
        tdoa_var: f64,
        /// Covariance of the unit DOA vector (rad²).
        doa_cov: [[f64; 3]; 3],
        /// m².
        rel_cov: [[f64; 3]; 3],
    },
    Stds {
        /// s.
        tdoa_std: f64,
        doa_angle_std_deg: f64,
        /// m.
        rel_std: f64,
    },
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)]))
}

fn from_rows(r: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| r[i][j])
}

impl From<&NoiseModel> for NoiseRecord {
    fn from(n: &NoiseModel) -> Self {
        NoiseRecord::Covariance {
            tdoa_var: n.tdoa_var,
            doa_cov: rows(&n.doa_cov),
            rel_cov: rows(&n.rel_cov),
        }
    }
}

impl NoiseRecord {
    pub fn to_model(&self) -> NoiseModel {
        match self {
            NoiseRecord::Covariance {
                tdoa_var,
                doa_cov,
                rel_cov,
            } => NoiseModel {
                tdoa_var: *tdoa_var,
                doa_cov: from_rows(doa_cov),
                rel_cov: from_rows(rel_cov),
            },
            NoiseRecord::Stds {
                tdoa_std,
                doa_angle_std_deg,
                rel_std,
            } => NoiseModel::from_stds(*tdoa_std, doa_angle_std_deg.to_radians(), *rel_std),
        }
    }
}

/// Orientation as ZYX Euler angles `[θx, θy, θz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrientationRecord {
    Radians { euler_rad: [f64; 3] },
    Degrees { euler_deg: [f64; 3] },
}

impl OrientationRecord {
    pub fn to_euler(&self) -> EulerZYX {
        match self {
            OrientationRecord::Radians { euler_rad: [x, y, z] } => EulerZYX::from_raw(*x, *y, *z),
            OrientationRecord::Degrees { euler_deg: [x, y, z] } => {
                EulerZYX::from_raw(x.to_radians(), y.to_radians(), z.to_radians())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayRecord {
    /// Meters, reference frame.
    pub position: [f64; 3],
    #[serde(flatten)]
    pub orientation: OrientationRecord,
    /// Seconds.
    pub tau: f64,
    /// Seconds per second.
    pub delta: f64,
}

impl From<&ArrayParams> for ArrayRecord {
    fn from(a: &ArrayParams) -> Self {
        ArrayRecord {
            position: a.position.into(),
            orientation: OrientationRecord::Radians {
                euler_rad: [a.euler.theta_x, a.euler.theta_y, a.euler.theta_z],
            },
            tau: a.tau,
            delta: a.delta,
        }
    }
}

impl ArrayRecord {
    pub fn to_params(&self) -> ArrayParams {
        ArrayParams::new(Vector3::from(self.position), self.orientation.to_euler(), self.tau, self.delta)
    }
}

/// Arrays 2..N and source positions; the layout of the state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRecord {
    pub arrays: Vec<ArrayRecord>,
    /// Meters.
    pub sources: Vec<[f64; 3]>,
}

impl StateRecord {
    pub fn from_state(x: &StateVector) -> Self {
        StateRecord {
            arrays: (2..=x.n_arrays()).map(|i| ArrayRecord::from(&x.array(i))).collect(),
            sources: (1..=x.n_steps()).map(|k| x.source(k).into()).collect(),
        }
    }

    pub fn from_scene(s: &Scene) -> Self {
        StateRecord::from_state(&s.to_state())
    }

    /// `emission_times` fixes K and is carried into the trajectory.
    pub fn to_scene(&self, emission_times: &[f64]) -> Result<Scene> {
        let arrays = self.arrays.iter().map(ArrayRecord::to_params).collect();
        let positions = self.sources.iter().map(|p| Vector3::from(*p)).collect();
        Ok(Scene::new(arrays, SourceTrajectory::new(positions, emission_times.to_vec())?)?)
    }

    pub fn check_shape(&self, n_arrays: usize, n_steps: usize, what: &str) -> Result<()> {
        if self.arrays.len() + 1 != n_arrays || self.sources.len() != n_steps {
            return Err(Error::SchemaMismatch(format!(
                "{what} has {} arrays and {} sources; expected {} and {}",
                self.arrays.len() + 1,
                self.sources.len(),
                n_arrays,
                n_steps
            )));
        }
        Ok(())
    }
}

/// A loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub measurements: MeasurementSet,
    pub noise: NoiseModel,
    pub ground_truth: Option<Scene>,
}

impl Dataset {
    pub fn n_arrays(&self) -> usize {
        self.measurements.n_arrays()
    }

    pub fn n_steps(&self) -> usize {
        self.measurements.n_steps()
    }

    pub fn to_file(&self) -> DatasetFile {
        let ms = &self.measurements;
        DatasetFile {
            schema_version: SCHEMA_VERSION,
            n_arrays: ms.n_arrays(),
            n_steps: ms.n_steps(),
            speed_of_sound: ms.speed_of_sound,
            emission_times: ms.emission_times.clone(),
            steps: ms
                .steps
                .iter()
                .map(|s| StepRecord {
                    doas: s.doas.iter().map(|d| DoaRecord::Unit((*d).into())).collect(),
                    tdoas: s.tdoas.clone(),
                })
                .collect(),
            rel_displacements: ms.rel_displacements.iter().map(|d| (*d).into()).collect(),
            noise: NoiseRecord::from(&self.noise),
            ground_truth: self.ground_truth.as_ref().map(StateRecord::from_scene),
        }
    }

    pub fn from_file(f: &DatasetFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: f.schema_version,
                supported: SCHEMA_VERSION,
            });
        }
        let (n, k) = (f.n_arrays, f.n_steps);
        let count = |what: &str, found: usize, expected: usize| -> Result<()> {
            if found == expected {
                Ok(())
            } else {
                Err(Error::SchemaMismatch(format!(
                    "{what}: found {found}, expected {expected} for n_arrays = {n}, n_steps = {k}"
                )))
            }
        };
        if n < 2 || k < 1 {
            return Err(Error::SchemaMismatch(format!(
                "need n_arrays >= 2 and n_steps >= 1, got {n} and {k}"
            )));
        }
        count("emission_times", f.emission_times.len(), k)?;
        count("steps", f.steps.len(), k)?;
        count("rel_displacements", f.rel_displacements.len(), k - 1)?;
        let mut steps = Vec::with_capacity(k);
        for (s, rec) in f.steps.iter().enumerate() {
            count(&format!("steps[{s}].doas"), rec.doas.len(), n)?;
            count(&format!("steps[{s}].tdoas"), rec.tdoas.len(), n - 1)?;
            let doas = rec
                .doas
                .iter()
                .enumerate()
                .map(|(i, d)| d.to_unit(i + 1, s + 1))
                .collect::<Result<Vec<_>>>()?;
            steps.push(StepMeasurement {
                doas,
                tdoas: rec.tdoas.clone(),
            });
        }
        let measurements = MeasurementSet {
            steps,
            rel_displacements: f.rel_displacements.iter().map(|d| Vector3::from(*d)).collect(),
            emission_times: f.emission_times.clone(),
            speed_of_sound: f.speed_of_sound,
        }
        .validated()?;
        let noise = f.noise.to_model();
        noise.validate()?;
        let ground_truth = match &f.ground_truth {
            Some(gt) => {
                gt.check_shape(n, k, "ground_truth")?;
                Some(gt.to_scene(&f.emission_times)?)
            }
            None => None,
        };
        Ok(Dataset {
            measurements,
            noise,
            ground_truth,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("dataset serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::parse("dataset", &e))?;
        Dataset::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DatasetFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), &e))?;
        Dataset::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
