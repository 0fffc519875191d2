//! Unknowns of the calibration problem and their flat layout.
//!
//! The state vector holds, in order, one 8-entry block per non-reference
//! array (`position[3], euler[3], tau, delta`) followed by one 3-entry block
//! per source position. Array 1 is the reference and never appears in it.

use alloc::vec::Vec;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::rotation::EulerZYX;

/// Entries per non-reference array block.
pub const ARRAY_BLOCK: usize = 8;
/// Entries per source position block.
pub const SOURCE_BLOCK: usize = 3;

/// Pose and clock parameters of one microphone array.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArrayParams {
    /// Meters, in the reference frame.
    pub position: Vector3<f64>,
    pub euler: EulerZYX,
    /// Initial time offset to the reference clock, seconds.
    pub tau: f64,
    /// Sampling clock difference, seconds per second.
    pub delta: f64,
}

impl ArrayParams {
    pub fn new(position: Vector3<f64>, euler: EulerZYX, tau: f64, delta: f64) -> Self {
        Self {
            position,
            euler,
            tau,
            delta,
        }
    }

    /// The reference array: origin, identity orientation, no clock error.
    pub const fn reference() -> Self {
        Self {
            position: Vector3::new(0.0, 0.0, 0.0),
            euler: EulerZYX::zero(),
            tau: 0.0,
            delta: 0.0,
        }
    }

    pub fn is_reference(&self) -> bool {
        *self == Self::reference()
    }
}

/// Source positions `s¹..sᴷ` and their emission times `Δ_1..Δ_K`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SourceTrajectory {
    pub positions: Vec<Vector3<f64>>,
    /// Seconds since the start of the recording.
    pub emission_times: Vec<f64>,
}

impl SourceTrajectory {
    pub fn new(positions: Vec<Vector3<f64>>, emission_times: Vec<f64>) -> Result<Self> {
        validate_emission_times(&emission_times, positions.len())?;
        Ok(Self {
            positions,
            emission_times,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// First `k` steps.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            positions: self.positions[..k].to_vec(),
            emission_times: self.emission_times[..k].to_vec(),
        }
    }
}

pub(crate) fn validate_emission_times(times: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidTrajectory("at least one step is required"));
    }
    if times.len() != k {
        return Err(Error::DimensionMismatch {
            what: "emission times",
            expected: k,
            found: times.len(),
        });
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidTrajectory("emission times must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTrajectory(
            "emission times must be strictly increasing",
        ));
    }
    Ok(())
}

/// Every unknown: the non-reference arrays (2..N) and the trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    /// Arrays 2..N; the reference array is implicit.
    pub arrays: Vec<ArrayParams>,
    pub trajectory: SourceTrajectory,
}

impl Scene {
    pub fn new(arrays: Vec<ArrayParams>, trajectory: SourceTrajectory) -> Result<Self> {
        if arrays.is_empty() {
            return Err(Error::InvalidSpec("at least two arrays are required".into()));
        }
        Ok(Self { arrays, trajectory })
    }

    /// Total array count N, including the reference.
    pub fn n_arrays(&self) -> usize {
        self.arrays.len() + 1
    }

    pub fn n_steps(&self) -> usize {
        self.trajectory.len()
    }

    /// Array by 1-based index (1 is the reference).
    pub fn array(&self, i: usize) -> ArrayParams {
        if i == 1 {
            ArrayParams::reference()
        } else {
            self.arrays[i - 2]
        }
    }

    pub fn to_state(&self) -> StateVector {
        StateVector::pack(&self.arrays, &self.trajectory.positions)
    }

    pub fn from_state(v: &StateVector, emission_times: &[f64]) -> Result<Self> {
        let (arrays, positions) = unpack_state(v, v.n_arrays(), v.n_steps())?;
        Ok(Self {
            arrays,
            trajectory: SourceTrajectory::new(positions, emission_times.to_vec())?,
        })
    }

    /// Same scene with every Euler angle normalized.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for a in &mut out.arrays {
            a.euler = a.euler.normalized();
        }
        out
    }
}

/// Flat vector of unknowns with length `8(N−1) + 3K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    values: DVector<f64>,
    n_arrays: usize,
    n_steps: usize,
}

pub const fn state_len(n_arrays: usize, n_steps: usize) -> usize {
    ARRAY_BLOCK * (n_arrays - 1) + SOURCE_BLOCK * n_steps
}

impl StateVector {
    pub fn from_values(values: DVector<f64>, n_arrays: usize, n_steps: usize) -> Result<Self> {
        if n_arrays < 2 || n_steps < 1 {
            return Err(Error::DimensionMismatch {
                what: "state dimensions (N >= 2, K >= 1)",
                expected: 2,
                found: n_arrays.min(n_steps),
            });
        }
        let expected = state_len(n_arrays, n_steps);
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            n_arrays,
            n_steps,
        })
    }

    fn pack(arrays: &[ArrayParams], positions: &[Vector3<f64>]) -> Self {
        let n_arrays = arrays.len() + 1;
        let n_steps = positions.len();
        let mut values = DVector::zeros(state_len(n_arrays, n_steps));
        for (j, a) in arrays.iter().enumerate() {
            let o = ARRAY_BLOCK * j;
            values.fixed_rows_mut::<3>(o).copy_from(&a.position);
            values.fixed_rows_mut::<3>(o + 3).copy_from(&a.euler.to_vector());
            values[o + 6] = a.tau;
            values[o + 7] = a.delta;
        }
        for (k, s) in positions.iter().enumerate() {
            let o = ARRAY_BLOCK * (n_arrays - 1) + SOURCE_BLOCK * k;
            values.fixed_rows_mut::<3>(o).copy_from(s);
        }
        Self {
            values,
            n_arrays,
            n_steps,
        }
    }

    pub fn n_arrays(&self) -> usize {
        self.n_arrays
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Offset of array `i`'s block, `i` in `2..=N`.
    pub fn array_offset(&self, i: usize) -> usize {
        array_offset(i)
    }

    /// Offset of source block `k`, `k` in `1..=K`.
    pub fn source_offset(&self, k: usize) -> usize {
        source_offset(self.n_arrays, k)
    }

    /// Parameters of array `i` in `1..=N`, with raw stored angles.
    pub fn array(&self, i: usize) -> ArrayParams {
        if i == 1 {
            return ArrayParams::reference();
        }
        let o = array_offset(i);
        let v = &self.values;
        ArrayParams {
            position: Vector3::new(v[o], v[o + 1], v[o + 2]),
            euler: EulerZYX::from_raw(v[o + 3], v[o + 4], v[o + 5]),
            tau: v[o + 6],
            delta: v[o + 7],
        }
    }

    /// Source position at step `k` in `1..=K`.
    pub fn source(&self, k: usize) -> Vector3<f64> {
        let o = source_offset(self.n_arrays, k);
        Vector3::new(self.values[o], self.values[o + 1], self.values[o + 2])
    }
}

/// Offset of array `i`'s block (1-based, `i >= 2`).
pub const fn array_offset(i: usize) -> usize {
    ARRAY_BLOCK * (i - 2)
}

/// Offset of source block `k` (1-based) in a state for `n_arrays` arrays.
pub const fn source_offset(n_arrays: usize, k: usize) -> usize {
    ARRAY_BLOCK * (n_arrays - 1) + SOURCE_BLOCK * (k - 1)
}

/// Packs arrays 2..N and the source positions of `traj`.
pub fn pack_state(arrays: &[ArrayParams], traj: &SourceTrajectory) -> Result<StateVector> {
    if arrays.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "non-reference arrays",
            expected: 1,
            found: 0,
        });
    }
    if traj.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "source positions",
            expected: 1,
            found: 0,
        });
    }
    Ok(StateVector::pack(arrays, &traj.positions))
}

/// Inverse of [`pack_state`]; angles are returned exactly as stored.
pub fn unpack_state(
    v: &StateVector,
    n_arrays: usize,
    n_steps: usize,
) -> Result<(Vec<ArrayParams>, Vec<Vector3<f64>>)> {
    if v.n_arrays != n_arrays || v.n_steps != n_steps || v.len() != state_len(n_arrays, n_steps)
    {
        return Err(Error::DimensionMismatch {
            what: "state vector",
            expected: state_len(n_arrays, n_steps),
            found: v.len(),
        });
    }
    let x = &v.values;
    let arrays = (2..=n_arrays)
        .map(|i| {
            let o = array_offset(i);
            ArrayParams {
                position: x.fixed_rows::<3>(o).into_owned(),
                euler: EulerZYX::from_vector(&x.fixed_rows::<3>(o + 3).into_owned()),
                tau: x[o + 6],
                delta: x[o + 7],
            }
        })
        .collect();
    let positions = (1..=n_steps)
        .map(|k| x.fixed_rows::<3>(source_offset(n_arrays, k)).into_owned())
        .collect();
    Ok((arrays, positions))
}
