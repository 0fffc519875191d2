//! Forward measurement models, the Gaussian noise model and the stacked
//! measurement vector.
//!
//! Per step the ideal measurement is `[d_1; T_2; d_2; …; T_N; d_N]` (length
//! `4N−1`), and the full vector interleaves steps with relative
//! displacements: `[y¹; s_Δ¹; y²; …; s_Δᴷ⁻¹; yᴷ]`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rotation::euler_to_rotation;
use crate::state::{validate_emission_times, ArrayParams, Scene};

/// Speed of sound in air, m/s.
pub const DEFAULT_SPEED_OF_SOUND: f64 = 346.0;

/// Sources closer than this to an array make the DOA undefined.
pub const MIN_SOURCE_DISTANCE: f64 = 1e-9;

/// Unit direction from `array` to `source`, in the array frame.
pub fn doa(array: &ArrayParams, source: &Vector3<f64>) -> Result<Vector3<f64>> {
    let diff = source - array.position;
    let dist = diff.norm();
    if !(dist >= MIN_SOURCE_DISTANCE) {
        return Err(Error::DegenerateGeometry {
            array: 0,
            step: 0,
            distance: dist,
        });
    }
    let rt = euler_to_rotation(&array.euler).transpose();
    Ok(rt.matrix() * diff / dist)
}

/// Inter-array TDOA of `array_i` against the reference:
/// `d_i/c − d_1/c + τ + Δ_k·δ`.
pub fn tdoa(
    array_i: &ArrayParams,
    ref_distance: f64,
    source: &Vector3<f64>,
    emission_time: f64,
    speed_of_sound: f64,
) -> f64 {
    let di = (source - array_i.position).norm();
    di / speed_of_sound - ref_distance / speed_of_sound
        + array_i.tau
        + emission_time * array_i.delta
}

/// DOAs of all N arrays and TDOAs of arrays 2..N at one emission.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMeasurement {
    /// `doas[i-1]` is the DOA at array `i`.
    pub doas: Vec<Vector3<f64>>,
    /// `tdoas[i-2]` is `T_i` for array `i >= 2`, seconds.
    pub tdoas: Vec<f64>,
}

impl StepMeasurement {
    pub fn n_arrays(&self) -> usize {
        self.doas.len()
    }

    /// `[d_1; T_2; d_2; …; T_N; d_N]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.doas.len() - 1);
        out.extend_from_slice(self.doas[0].as_slice());
        for (t, d) in self.tdoas.iter().zip(&self.doas[1..]) {
            out.push(*t);
            out.extend_from_slice(d.as_slice());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasurementSet {
    pub steps: Vec<StepMeasurement>,
    /// `rel_displacements[k-1]` measures `s^{k+1} − s^k`.
    pub rel_displacements: Vec<Vector3<f64>>,
    /// Seconds since the start of recording, one per step.
    pub emission_times: Vec<f64>,
    pub speed_of_sound: f64,
}

impl MeasurementSet {
    pub fn n_arrays(&self) -> usize {
        self.steps.first().map_or(0, StepMeasurement::n_arrays)
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Length of the stacked vector, `(4N−1)K + 3(K−1)`.
    pub fn stacked_len(&self) -> usize {
        stacked_len(self.n_arrays(), self.n_steps())
    }

    /// Checks counts and unit norms and renormalizes every DOA.
    pub fn validated(mut self) -> Result<Self> {
        let n = self.n_arrays();
        let k = self.n_steps();
        if n < 2 {
            return Err(Error::DimensionMismatch {
                what: "arrays per step (N >= 2)",
                expected: 2,
                found: n,
            });
        }
        validate_emission_times(&self.emission_times, k)?;
        if self.rel_displacements.len() != k - 1 {
            return Err(Error::DimensionMismatch {
                what: "relative displacements",
                expected: k - 1,
                found: self.rel_displacements.len(),
            });
        }
        if !(self.speed_of_sound > 0.0) {
            return Err(Error::InvalidSpec("speed of sound must be positive".into()));
        }
        for (idx, step) in self.steps.iter_mut().enumerate() {
            if step.doas.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "DOAs per step",
                    expected: n,
                    found: step.doas.len(),
                });
            }
            if step.tdoas.len() != n - 1 {
                return Err(Error::DimensionMismatch {
                    what: "TDOAs per step",
                    expected: n - 1,
                    found: step.tdoas.len(),
                });
            }
            for (i, d) in step.doas.iter_mut().enumerate() {
                let norm = d.norm();
                if !(norm > 1e-12) || !norm.is_finite() {
                    return Err(Error::DegenerateGeometry {
                        array: i + 1,
                        step: idx + 1,
                        distance: 0.0,
                    });
                }
                // already-unit vectors are kept bit for bit
                if (norm - 1.0).abs() > 4.0 * f64::EPSILON {
                    *d /= norm;
                }
            }
        }
        Ok(self)
    }
}

pub const fn stacked_len(n_arrays: usize, n_steps: usize) -> usize {
    (4 * n_arrays - 1) * n_steps + 3 * (n_steps - 1)
}

/// Noise-free measurements `g(x)` of a scene.
pub fn predict_measurements(scene: &Scene, speed_of_sound: f64) -> Result<MeasurementSet> {
    let n = scene.n_arrays();
    let positions = &scene.trajectory.positions;
    let times = &scene.trajectory.emission_times;
    let mut steps = Vec::with_capacity(positions.len());
    for (k, s) in positions.iter().enumerate() {
        let d1 = s.norm();
        let mut doas = Vec::with_capacity(n);
        let mut tdoas = Vec::with_capacity(n - 1);
        for i in 1..=n {
            let a = scene.array(i);
            doas.push(doa(&a, s).map_err(|e| locate(e, i, k + 1))?);
            if i >= 2 {
                tdoas.push(tdoa(&a, d1, s, times[k], speed_of_sound));
            }
        }
        steps.push(StepMeasurement { doas, tdoas });
    }
    let rel_displacements = positions.windows(2).map(|w| w[1] - w[0]).collect();
    Ok(MeasurementSet {
        steps,
        rel_displacements,
        emission_times: times.clone(),
        speed_of_sound,
    })
}

pub(crate) fn locate(e: Error, array: usize, step: usize) -> Error {
    match e {
        Error::DegenerateGeometry { distance, .. } => Error::DegenerateGeometry {
            array,
            step,
            distance,
        },
        other => other,
    }
}

/// Gaussian measurement noise: TDOA variance λ, DOA covariance Λ and
/// relative-displacement covariance Q.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NoiseModel {
    /// Seconds².
    pub tdoa_var: f64,
    /// DOA covariance. Isotropic `σ²·I₃` with σ the angle STD in radians.
    pub doa_cov: Matrix3<f64>,
    /// Meters².
    pub rel_cov: Matrix3<f64>,
}

impl NoiseModel {
    /// Isotropic model from standard deviations (s, rad, m).
    pub fn from_stds(tdoa_std: f64, doa_angle_std: f64, rel_std: f64) -> Self {
        Self {
            tdoa_var: tdoa_std * tdoa_std,
            doa_cov: Matrix3::identity() * (doa_angle_std * doa_angle_std),
            rel_cov: Matrix3::identity() * (rel_std * rel_std),
        }
    }

    /// TDOA 0.067 ms, azimuth/elevation 5°, displacement 0.03 m per axis.
    pub fn nominal() -> Self {
        Self::from_stds(0.067e-3, 5f64.to_radians(), 0.03)
    }

    pub fn zero() -> Self {
        Self::from_stds(0.0, 0.0, 0.0)
    }

    /// DOA angle STD used when injecting azimuth/elevation noise.
    pub fn doa_angle_std(&self) -> f64 {
        (self.doa_cov.trace() / 3.0).max(0.0).sqrt()
    }

    /// λ > 0 and Λ, Q symmetric positive definite.
    pub fn validate(&self) -> Result<()> {
        if !(self.tdoa_var > 0.0) || !self.tdoa_var.is_finite() {
            return Err(Error::InvalidNoise("TDOA variance must be positive"));
        }
        for (m, name) in [
            (&self.doa_cov, "DOA covariance must be symmetric positive definite"),
            (&self.rel_cov, "displacement covariance must be symmetric positive definite"),
        ] {
            let asym = (m - m.transpose()).abs().max();
            if asym > 1e-12 * m.abs().max().max(1.0) || m.cholesky().is_none() {
                return Err(Error::InvalidNoise(name));
            }
        }
        Ok(())
    }

    /// Covariance `P = diag(Λ, diag_{N−1}(λ, Λ))` of one step.
    pub fn step_covariance(&self, n_arrays: usize) -> DMatrix<f64> {
        let dim = 4 * n_arrays - 1;
        let mut p = DMatrix::zeros(dim, dim);
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.doa_cov);
        for j in 0..n_arrays - 1 {
            let o = 3 + 4 * j;
            p[(o, o)] = self.tdoa_var;
            p.fixed_view_mut::<3, 3>(o + 1, o + 1).copy_from(&self.doa_cov);
        }
        p
    }
}

/// Stacks a measurement set as `[y¹; s_Δ¹; y²; …; yᴷ]`.
pub fn stack(ms: &MeasurementSet) -> DVector<f64> {
    let mut out = Vec::with_capacity(ms.stacked_len());
    for (k, step) in ms.steps.iter().enumerate() {
        out.extend(step.flatten());
        if let Some(d) = ms.rel_displacements.get(k) {
            out.extend_from_slice(d.as_slice());
        }
    }
    DVector::from_vec(out)
}

/// Block-diagonal `W = diag(diag_{K−1}(P, Q), P)` in stacking order.
pub fn weight_matrix(noise: &NoiseModel, n_arrays: usize, n_steps: usize) -> Result<DMatrix<f64>> {
    if n_arrays < 2 || n_steps < 1 {
        return Err(Error::DimensionMismatch {
            what: "weight matrix dimensions (N >= 2, K >= 1)",
            expected: 2,
            found: n_arrays.min(n_steps),
        });
    }
    let dim = stacked_len(n_arrays, n_steps);
    let p = noise.step_covariance(n_arrays);
    let m = p.nrows();
    let mut w = DMatrix::zeros(dim, dim);
    let mut o = 0;
    for k in 0..n_steps {
        w.view_mut((o, o), (m, m)).copy_from(&p);
        o += m;
        if k + 1 < n_steps {
            w.fixed_view_mut::<3, 3>(o, o).copy_from(&noise.rel_cov);
            o += 3;
        }
    }
    Ok(w)
}

/// Symmetric square root of a PSD matrix; zero for a zero matrix.
fn psd_sqrt(m: &Matrix3<f64>) -> Matrix3<f64> {
    if m.iter().all(|&v| v == 0.0) {
        return Matrix3::zeros();
    }
    let eig = SymmetricEigen::new(*m);
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Azimuth (from +x toward +y) and elevation (from the x-y plane), radians.
pub fn unit_to_az_el(d: &Vector3<f64>) -> (f64, f64) {
    let az = d.y.atan2(d.x);
    let el = d.z.atan2((d.x * d.x + d.y * d.y).sqrt());
    (az, el)
}

pub fn az_el_to_unit(az: f64, el: f64) -> Vector3<f64> {
    let (sa, ca) = az.sin_cos();
    let (se, ce) = el.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Adds noise drawn from `rng`. DOAs are perturbed in azimuth and elevation
/// with the model's angle STD and renormalized; TDOAs and displacements get
/// additive Gaussian noise.
pub fn add_noise_with<R: Rng + ?Sized>(
    ms: &MeasurementSet,
    noise: &NoiseModel,
    rng: &mut R,
) -> MeasurementSet {
    let mut out = ms.clone();
    let angle_std = noise.doa_angle_std();
    let tdoa_std = noise.tdoa_var.max(0.0).sqrt();
    let rel_sqrt = psd_sqrt(&noise.rel_cov);
    for step in &mut out.steps {
        for (i, d) in step.doas.iter_mut().enumerate() {
            if i >= 1 && tdoa_std > 0.0 {
                step.tdoas[i - 1] += tdoa_std * normal(rng);
            }
            if angle_std > 0.0 {
                let (az, el) = unit_to_az_el(d);
                let noisy = az_el_to_unit(
                    az + angle_std * normal(rng),
                    el + angle_std * normal(rng),
                );
                *d = noisy / noisy.norm();
            }
        }
    }
    if rel_sqrt.iter().any(|&v| v != 0.0) {
        for d in &mut out.rel_displacements {
            let w = Vector3::new(normal(rng), normal(rng), normal(rng));
            *d += rel_sqrt * w;
        }
    }
    out
}

/// Seeded variant of [`add_noise_with`].
pub fn add_noise(ms: &MeasurementSet, noise: &NoiseModel, seed: u64) -> MeasurementSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise_with(ms, noise, &mut rng)
}
