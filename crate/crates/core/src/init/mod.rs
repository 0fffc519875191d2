//! Closed-form and small-problem initialization of the full state from
//! measurements alone.
//!
//! 1. Triangulate the first source position from two reference DOAs and the
//!    first displacement, then chain the displacements.
//! 2. Estimate source distances to every array from tetrahedra formed by the
//!    array and four source positions, fused across tetrahedra.
//! 3. Register each array's local source cloud onto the reference cloud.
//! 4. Fit time offset and clock drift by a robust line fit.

pub mod nls;

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measurement::MeasurementSet;
use crate::observability::{collinear_with, DEFAULT_ANGLE_TOL};
use crate::rotation::{rotation_to_euler, Rotation3};
use crate::state::{pack_state, ArrayParams, SourceTrajectory, StateVector};

pub use nls::{solve_bounded, NlsConfig, NlsReport};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct InitConfig {
    /// Random 4-subsets drawn per step; all subsets are used when fewer exist.
    pub combos_per_step: usize,
    /// Seed of the subset sampler.
    pub seed: u64,
    /// Tetrahedra whose relative residual exceeds this are discarded.
    pub residual_threshold: f64,
    pub iqr_multiplier: f64,
    /// |z| above this marks a TDOA outlier in the drift fit.
    pub z_cut: f64,
    /// Smallest angle between the first two reference DOAs, degrees.
    pub min_triangulation_angle_deg: f64,
    pub nls_max_iterations: usize,
    pub nls_tolerance: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            combos_per_step: 20,
            seed: 0,
            residual_threshold: 0.25,
            iqr_multiplier: 1.5,
            z_cut: 3.0,
            min_triangulation_angle_deg: 1.0,
            nls_max_iterations: 100,
            nls_tolerance: 1e-10,
        }
    }
}

impl InitConfig {
    fn nls(&self) -> NlsConfig {
        NlsConfig {
            max_iterations: self.nls_max_iterations,
            tolerance: self.nls_tolerance,
            ..NlsConfig::default()
        }
    }
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 form stays accurate near 0 and π
    a.cross(b).norm().atan2(a.dot(b))
}

/// `d̂₁¹ = L sin∠(d₁², s_Δ¹) / sin∠(d₁¹, d₁²)` and `ŝ¹ = d₁¹ d̂₁¹`.
pub fn triangulate_first_position(
    doa1: &Vector3<f64>,
    doa2: &Vector3<f64>,
    rel_disp: &Vector3<f64>,
    min_angle_deg: f64,
) -> Result<(f64, Vector3<f64>)> {
    let u1 = doa1.normalize();
    let u2 = doa2.normalize();
    let apex = angle_between(&u1, &u2);
    if apex.sin() < min_angle_deg.to_radians().sin() {
        return Err(Error::DegenerateTriangulation {
            angle_deg: apex.to_degrees(),
        });
    }
    let len = rel_disp.norm();
    let d = if len > 0.0 {
        len * angle_between(&u2, rel_disp).sin() / apex.sin()
    } else {
        0.0
    };
    Ok((d, u1 * d))
}

/// Least-squares `ŝ¹` from every reference DOA: with `D_k = Σ_{j<k} s_Δ^j`
/// each step asks `ŝ¹ + D_k` to lie on the ray `d₁^k`, so
/// `Σ (I − d d ᵀ)(ŝ¹ + D_k) = 0`. Reduces to the two-step triangle when
/// `K = 2` and averages out DOA noise otherwise.
pub fn triangulate_trajectory(
    ref_doas: &[Vector3<f64>],
    rel_displacements: &[Vector3<f64>],
    min_angle_deg: f64,
) -> Result<(f64, Vector3<f64>)> {
    if ref_doas.len() != rel_displacements.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "relative displacements",
            expected: ref_doas.len().saturating_sub(1),
            found: rel_displacements.len(),
        });
    }
    let mut a = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    let mut offset = Vector3::zeros();
    let mut widest: f64 = 0.0;
    for (k, d) in ref_doas.iter().enumerate() {
        let u = d.normalize();
        widest = widest.max(angle_between(&ref_doas[0].normalize(), &u));
        let proj = Matrix3::identity() - u * u.transpose();
        a += proj;
        rhs -= proj * offset;
        if k < rel_displacements.len() {
            offset += rel_displacements[k];
        }
    }
    let eig = a.symmetric_eigen();
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    // two rays at angle θ give a smallest eigenvalue near (1 − cos θ)
    let floor = 1.0 - min_angle_deg.to_radians().cos();
    if !(lo > floor * hi / ref_doas.len() as f64) {
        return Err(Error::DegenerateTriangulation {
            angle_deg: widest.to_degrees(),
        });
    }
    let s1 = eig.recompose().lu().solve(&rhs).ok_or(Error::DegenerateTriangulation {
        angle_deg: widest.to_degrees(),
    })?;
    Ok((s1.norm(), s1))
}

/// `ŝ^{k+1} = ŝ^k + s_Δ^k`.
pub fn chain_positions(first: Vector3<f64>, rel_displacements: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(rel_displacements.len() + 1);
    out.push(first);
    let mut cur = first;
    for d in rel_displacements {
        cur += d;
        out.push(cur);
    }
    out
}

/// Sorted 4-subsets of step indices (0-based), each step covered by up to
/// `per_step` subsets containing it.
pub fn select_combinations(n_steps: usize, per_step: usize, seed: u64) -> Result<Vec<[usize; 4]>> {
    if n_steps < 4 {
        return Err(Error::InsufficientSteps {
            needed: 4,
            found: n_steps,
        });
    }
    let mut set = BTreeSet::new();
    let others = n_steps - 1;
    let available = others * (others - 1) * (others - 2) / 6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..n_steps {
        if available <= per_step {
            for a in 0..n_steps {
                for b in a + 1..n_steps {
                    for c in b + 1..n_steps {
                        if a != k && b != k && c != k {
                            set.insert(sorted4([k, a, b, c]));
                        }
                    }
                }
            }
            continue;
        }
        let mut drawn = BTreeSet::new();
        let mut pool: Vec<usize> = (0..n_steps).filter(|&j| j != k).collect();
        while drawn.len() < per_step {
            for i in 0..3 {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            drawn.insert(sorted4([k, pool[0], pool[1], pool[2]]));
        }
        set.extend(drawn);
    }
    Ok(set.into_iter().collect())
}

fn sorted4(mut c: [usize; 4]) -> [usize; 4] {
    c.sort_unstable();
    c
}

/// Result of one tetrahedron solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Tetrahedron {
    pub distances: [f64; 4],
    /// `sqrt(mean F²) / mean L²`.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves the six law-of-cosines residuals
/// `d_a² + d_b² − 2 d_a d_b cos∠(u_a, u_b) − L_ab²` for four distances.
pub fn solve_tetrahedron(dirs: &[Vector3<f64>; 4], points: &[Vector3<f64>; 4], cfg: &NlsConfig) -> Tetrahedron {
    const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut cos = [0.0; 6];
    let mut l2 = [0.0; 6];
    for (m, &(a, b)) in PAIRS.iter().enumerate() {
        cos[m] = dirs[a].normalize().dot(&dirs[b].normalize());
        l2[m] = (points[a] - points[b]).norm_squared();
    }
    let mean_l2 = l2.iter().sum::<f64>() / 6.0;
    let mean_chord = l2.iter().map(|v| v.sqrt()).sum::<f64>() / 6.0;
    let model = |x: &DVector<f64>| {
        let mut r = DVector::zeros(6);
        let mut j = DMatrix::zeros(6, 4);
        for (m, &(a, b)) in PAIRS.iter().enumerate() {
            let (da, db) = (x[a], x[b]);
            r[m] = da * da + db * db - 2.0 * da * db * cos[m] - l2[m];
            j[(m, a)] = 2.0 * da - 2.0 * db * cos[m];
            j[(m, b)] = 2.0 * db - 2.0 * da * cos[m];
        }
        (r, j)
    };
    let rep = solve_bounded(model, DVector::from_element(4, mean_chord), 0.0, cfg);
    let relative_residual = if mean_l2 > 0.0 {
        rep.residual_norm / 6f64.sqrt() / mean_l2
    } else {
        f64::INFINITY
    };
    Tetrahedron {
        distances: [rep.x[0], rep.x[1], rep.x[2], rep.x[3]],
        relative_residual,
        converged: rep.converged,
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Drops values outside `[Q1 − m·IQR, Q3 + m·IQR]` and averages the rest.
/// Returns the mean and the number of values kept.
pub fn iqr_fuse(values: &[f64], multiplier: f64) -> Option<(f64, usize)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - multiplier * iqr, q3 + multiplier * iqr);
    let kept: Vec<f64> = sorted.into_iter().filter(|v| *v >= lo && *v <= hi).collect();
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    Some((mean, kept.len()))
}

/// Fused distance estimates of one array.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceRow {
    /// `d_hat[k]`, meters.
    pub d_hat: Vec<f64>,
    /// Estimates available per step before IQR filtering.
    pub samples: Vec<usize>,
    /// Estimates kept per step after IQR filtering.
    pub kept: Vec<usize>,
    /// Population spread of the kept estimates per step.
    pub spread: Vec<f64>,
    /// Tetrahedra accepted by the residual threshold.
    pub accepted_combos: usize,
}

/// Distances from one array to every source position. `array` is 1-based
/// and only used for error reporting.
pub fn estimate_distances(
    array: usize,
    doas: &[Vector3<f64>],
    positions: &[Vector3<f64>],
    combos: &[[usize; 4]],
    cfg: &InitConfig,
) -> Result<DistanceRow> {
    let k_steps = positions.len();
    if k_steps < 4 {
        return Err(Error::InsufficientSteps {
            needed: 4,
            found: k_steps,
        });
    }
    if doas.len() != k_steps {
        return Err(Error::DimensionMismatch {
            what: "DOAs per array",
            expected: k_steps,
            found: doas.len(),
        });
    }
    let nls = cfg.nls();
    let mut per_step: Vec<Vec<f64>> = vec![Vec::new(); k_steps];
    let mut accepted = 0;
    for c in combos {
        let dirs = c.map(|k| doas[k]);
        let pts = c.map(|k| positions[k]);
        let t = solve_tetrahedron(&dirs, &pts, &nls);
        if !(t.relative_residual <= cfg.residual_threshold) {
            continue;
        }
        accepted += 1;
        for (slot, &k) in c.iter().enumerate() {
            per_step[k].push(t.distances[slot]);
        }
    }
    let mut row = DistanceRow {
        d_hat: Vec::with_capacity(k_steps),
        samples: Vec::with_capacity(k_steps),
        kept: Vec::with_capacity(k_steps),
        spread: Vec::with_capacity(k_steps),
        accepted_combos: accepted,
    };
    for (k, est) in per_step.iter().enumerate() {
        let (mean, kept) = iqr_fuse(est, cfg.iqr_multiplier).ok_or(Error::SolverFailure {
            array,
            step: k + 1,
        })?;
        let var = est.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / est.len() as f64;
        row.d_hat.push(mean);
        row.samples.push(est.len());
        row.kept.push(kept);
        row.spread.push(var.sqrt());
    }
    Ok(row)
}

/// Rigid alignment `ŝ ≈ R ŝ_i + t` of two corresponding point sets.
/// `array` is 1-based and only used for error reporting.
pub fn register_array_pose(
    array: usize,
    in_ref: &[Vector3<f64>],
    in_array: &[Vector3<f64>],
) -> Result<(Rotation3, Vector3<f64>)> {
    if in_ref.len() != in_array.len() {
        return Err(Error::DimensionMismatch {
            what: "registration point pairs",
            expected: in_ref.len(),
            found: in_array.len(),
        });
    }
    if in_ref.len() < 3 {
        return Err(Error::InsufficientSteps {
            needed: 3,
            found: in_ref.len(),
        });
    }
    let n = in_ref.len() as f64;
    let p = in_ref.iter().sum::<Vector3<f64>>() / n;
    let q = in_array.iter().sum::<Vector3<f64>>() / n;
    let mut omega = Matrix3::zeros();
    for (a, b) in in_ref.iter().zip(in_array) {
        omega += (a - p) * (b - q).transpose();
    }
    let svd = omega.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    if !(sv[order[1]] > 1e-9 * sv[order[0]]) {
        return Err(Error::DegenerateRegistration { array });
    }
    let mut v = v_t.transpose();
    let mut r = u * v.transpose();
    if r.determinant() < 0.0 {
        let mut col = v.column_mut(order[2]);
        col.neg_mut();
        r = u * v.transpose();
    }
    let t = p - r * q;
    Ok((Rotation3::from_matrix_unchecked(r), t))
}

/// Robust line fit of the clock parameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AsyncFit {
    pub tau: f64,
    pub delta: f64,
    /// 0-based steps dropped as outliers.
    pub outliers: Vec<usize>,
}

fn line_fit(x: &[f64], y: &[f64], keep: &[bool]) -> Option<(f64, f64)> {
    let n = keep.iter().filter(|k| **k).count() as f64;
    let xs: f64 = x.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| v).sum::<f64>() / n;
    let ys: f64 = y.iter().zip(keep).filter(|(_, k)| **k).map(|(v, _)| v).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((xi, yi), k) in x.iter().zip(y).zip(keep) {
        if *k {
            sxx += (xi - xs) * (xi - xs);
            sxy += (xi - xs) * (yi - ys);
        }
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((ys - slope * xs, slope))
}

/// Fits `T_i^k − (d̂_i^k − d̂₁^k)/c = τ + Δ_k δ`, drops residuals with
/// `|z| > z_cut` and refits. `array` is 1-based.
pub fn fit_async(
    array: usize,
    tdoas: &[f64],
    d_hat_i: &[f64],
    d_hat_1: &[f64],
    emission_times: &[f64],
    speed_of_sound: f64,
    z_cut: f64,
) -> Result<AsyncFit> {
    let k = tdoas.len();
    if k < 2 {
        return Err(Error::InsufficientSteps { needed: 2, found: k });
    }
    if d_hat_i.len() != k || d_hat_1.len() != k || emission_times.len() != k {
        return Err(Error::DimensionMismatch {
            what: "drift fit inputs",
            expected: k,
            found: d_hat_i.len().min(d_hat_1.len()).min(emission_times.len()),
        });
    }
    let y: Vec<f64> = (0..k)
        .map(|j| tdoas[j] - (d_hat_i[j] - d_hat_1[j]) / speed_of_sound)
        .collect();
    let all = vec![true; k];
    let (tau, delta) = line_fit(emission_times, &y, &all).ok_or(Error::DegenerateTiming)?;
    let resid: Vec<f64> = (0..k).map(|j| y[j] - tau - delta * emission_times[j]).collect();
    let dof = k.saturating_sub(2).max(1) as f64;
    let std = (resid.iter().map(|r| r * r).sum::<f64>() / dof).sqrt();
    let scale = y.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    if !(std > 1e-14 * scale) {
        return Ok(AsyncFit {
            tau,
            delta,
            outliers: Vec::new(),
        });
    }
    let keep: Vec<bool> = resid.iter().map(|r| (r / std).abs() <= z_cut).collect();
    let survivors = keep.iter().filter(|k| **k).count();
    if survivors < 2 {
        return Err(Error::AllOutliers { array, survivors });
    }
    let (tau, delta) = line_fit(emission_times, &y, &keep).ok_or(Error::AllOutliers { array, survivors })?;
    let outliers = keep
        .iter()
        .enumerate()
        .filter(|(_, k)| !**k)
        .map(|(j, _)| j)
        .collect();
    Ok(AsyncFit { tau, delta, outliers })
}

/// Per-array record of what the initializer used and rejected.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArrayInitLog {
    /// 1-based array index.
    pub array: usize,
    pub distances: DistanceRow,
    /// 0-based steps dropped from the drift fit.
    pub tdoa_outliers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitLog {
    pub first_distance: f64,
    pub combos: Vec<[usize; 4]>,
    /// Entry 0 is the reference array.
    pub arrays: Vec<ArrayInitLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    pub state: StateVector,
    pub arrays: Vec<ArrayParams>,
    pub trajectory: SourceTrajectory,
    pub log: InitLog,
}

/// Initial state from measurements only.
pub fn initialize(ms: &MeasurementSet, cfg: &InitConfig) -> Result<Initialization> {
    let n = ms.n_arrays();
    let k_steps = ms.n_steps();
    if k_steps < 4 {
        return Err(Error::InsufficientSteps {
            needed: 4,
            found: k_steps,
        });
    }
    let ref_doas: Vec<Vector3<f64>> = ms.steps.iter().map(|s| s.doas[0]).collect();
    let (d11, s1) = triangulate_trajectory(&ref_doas, &ms.rel_displacements, cfg.min_triangulation_angle_deg)?;
    let positions = chain_positions(s1, &ms.rel_displacements);
    let combos = select_combinations(k_steps, cfg.combos_per_step, cfg.seed)?;

    let doas_of = |i: usize| -> Vec<Vector3<f64>> { ms.steps.iter().map(|s| s.doas[i - 1]).collect() };
    let ref_row = estimate_distances(1, &doas_of(1), &positions, &combos, cfg)?;
    let mut arrays = Vec::with_capacity(n - 1);
    let mut logs = vec![ArrayInitLog {
        array: 1,
        distances: ref_row.clone(),
        tdoa_outliers: Vec::new(),
    }];
    for i in 2..=n {
        let doas = doas_of(i);
        // parallel DOAs put every local point on one line through the array
        if collinear_with(&doas, &Vector3::zeros(), DEFAULT_ANGLE_TOL) {
            return Err(Error::DegenerateRegistration { array: i });
        }
        let row = estimate_distances(i, &doas, &positions, &combos, cfg)?;
        let local: Vec<Vector3<f64>> = doas.iter().zip(&row.d_hat).map(|(u, d)| u.normalize() * *d).collect();
        let (rot, t) = register_array_pose(i, &positions, &local)?;
        let euler = rotation_to_euler(&rot)?;
        let tdoas: Vec<f64> = ms.steps.iter().map(|s| s.tdoas[i - 2]).collect();
        let fit = fit_async(
            i,
            &tdoas,
            &row.d_hat,
            &ref_row.d_hat,
            &ms.emission_times,
            ms.speed_of_sound,
            cfg.z_cut,
        )?;
        arrays.push(ArrayParams::new(t, euler, fit.tau, fit.delta));
        logs.push(ArrayInitLog {
            array: i,
            distances: row,
            tdoa_outliers: fit.outliers,
        });
    }
    let trajectory = SourceTrajectory::new(positions, ms.emission_times.clone())?;
    let state = pack_state(&arrays, &trajectory)?;
    Ok(Initialization {
        state,
        arrays,
        trajectory,
        log: InitLog {
            first_distance: d11,
            combos,
            arrays: logs,
        },
    })
}
