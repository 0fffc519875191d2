//! Analytic Jacobian blocks, the Fisher information matrix, the reduced
//! matrices `F`, `T̄`, `L̄_i`, numerical rank, and geometric predicates for
//! the known unobservable configurations.
//!
//! The Jacobian `J` built here has the row layout
//! `[y′¹; s_Δ¹; y′²; …; y′ᴷ]` where `y′ᵏ = [T_2; d_2; …; T_N; d_N]` omits the
//! reference array's DOA. The reference DOA does not depend on any array
//! parameter and only adds rows in the source columns; the solver carries
//! those rows in its own residual.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix3, SMatrix, Vector3};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::measurement::{locate, NoiseModel, MIN_SOURCE_DISTANCE};
use crate::rotation::{euler_to_rotation, rotation_transpose_partials};
use crate::state::{ArrayParams, Scene, SourceTrajectory, ARRAY_BLOCK, SOURCE_BLOCK};

/// Default relative tolerance for [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Default angular tolerance (rad) of the geometric predicates.
pub const DEFAULT_ANGLE_TOL: f64 = 1e-6;

/// Derivatives of `[T_i; d_i]` at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayStepBlock {
    /// `H_arr = [h 0 1 Δ_k; U V 0 0]` over `(p, θ, τ, δ)`.
    pub h_arr: SMatrix<f64, 4, 8>,
    /// `[−h − sᵀ/(c d_1); −U]`, the derivative with respect to `s^k`.
    pub source: SMatrix<f64, 4, 3>,
}

impl ArrayStepBlock {
    /// `h = ∂(d_i/c)/∂p`.
    pub fn h(&self) -> SMatrix<f64, 1, 3> {
        self.h_arr.fixed_view::<1, 3>(0, 0).into_owned()
    }

    /// `U = ∂d_i/∂p`.
    pub fn u(&self) -> Matrix3<f64> {
        self.h_arr.fixed_view::<3, 3>(1, 0).into_owned()
    }

    /// `V = ∂d_i/∂θ`.
    pub fn v(&self) -> Matrix3<f64> {
        self.h_arr.fixed_view::<3, 3>(1, 3).into_owned()
    }
}

/// Analytic block for array `array` observing `source` emitted at `emission_time`.
pub fn array_step_block(
    array: &ArrayParams,
    source: &Vector3<f64>,
    emission_time: f64,
    speed_of_sound: f64,
) -> Result<ArrayStepBlock> {
    let diff = source - array.position;
    let d = diff.norm();
    let d1 = source.norm();
    let closest = d.min(d1);
    if !(closest >= MIN_SOURCE_DISTANCE) {
        return Err(Error::DegenerateGeometry {
            array: 0,
            step: 0,
            distance: closest,
        });
    }
    let u = diff / d;
    let rt = euler_to_rotation(&array.euler).transpose().into_inner();
    let a = (Matrix3::identity() - u * u.transpose()) / d;
    let h = -u.transpose() / speed_of_sound;
    let big_u = -rt * a;
    let partials = rotation_transpose_partials(&array.euler);

    let mut h_arr = SMatrix::<f64, 4, 8>::zeros();
    h_arr.fixed_view_mut::<1, 3>(0, 0).copy_from(&h);
    h_arr[(0, 6)] = 1.0;
    h_arr[(0, 7)] = emission_time;
    h_arr.fixed_view_mut::<3, 3>(1, 0).copy_from(&big_u);
    for (j, dr) in partials.iter().enumerate() {
        h_arr.fixed_view_mut::<3, 1>(1, 3 + j).copy_from(&(dr * u));
    }

    let mut src = SMatrix::<f64, 4, 3>::zeros();
    let t = source.transpose() / (speed_of_sound * d1);
    src.fixed_view_mut::<1, 3>(0, 0).copy_from(&(-h - t));
    src.fixed_view_mut::<3, 3>(1, 0).copy_from(&(-big_u));
    Ok(ArrayStepBlock { h_arr, source: src })
}

/// `L^k` and `T^k` for every step, stored per array.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlocks {
    n_arrays: usize,
    /// `blocks[k][i-2]` for step `k+1`, array `i`.
    blocks: Vec<Vec<ArrayStepBlock>>,
}

impl JacobianBlocks {
    pub fn n_arrays(&self) -> usize {
        self.n_arrays
    }

    pub fn n_steps(&self) -> usize {
        self.blocks.len()
    }

    /// Block of array `i` (2..=N) at step `k` (1..=K).
    pub fn block(&self, i: usize, k: usize) -> &ArrayStepBlock {
        &self.blocks[k - 1][i - 2]
    }

    /// Dense `L^k`, `4(N−1) × 8(N−1)`, block diagonal.
    pub fn l_block(&self, k: usize) -> DMatrix<f64> {
        let m = self.n_arrays - 1;
        let mut l = DMatrix::zeros(4 * m, ARRAY_BLOCK * m);
        for (j, b) in self.blocks[k - 1].iter().enumerate() {
            l.fixed_view_mut::<4, 8>(4 * j, ARRAY_BLOCK * j).copy_from(&b.h_arr);
        }
        l
    }

    /// Dense `T^k`, `4(N−1) × 3`.
    pub fn t_block(&self, k: usize) -> DMatrix<f64> {
        let m = self.n_arrays - 1;
        let mut t = DMatrix::zeros(4 * m, 3);
        for (j, b) in self.blocks[k - 1].iter().enumerate() {
            t.fixed_view_mut::<4, 3>(4 * j, 0).copy_from(&b.source);
        }
        t
    }

    /// Blocks of the first `k` steps.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            n_arrays: self.n_arrays,
            blocks: self.blocks[..k].to_vec(),
        }
    }
}

pub fn jacobian_blocks(scene: &Scene, speed_of_sound: f64) -> Result<JacobianBlocks> {
    let n = scene.n_arrays();
    let traj = &scene.trajectory;
    let mut blocks = Vec::with_capacity(traj.len());
    for (k, s) in traj.positions.iter().enumerate() {
        let mut row = Vec::with_capacity(n - 1);
        for (j, a) in scene.arrays.iter().enumerate() {
            let b = array_step_block(a, s, traj.emission_times[k], speed_of_sound)
                .map_err(|e| locate(e, j + 2, k + 1))?;
            row.push(b);
        }
        blocks.push(row);
    }
    Ok(JacobianBlocks { n_arrays: n, blocks })
}

/// Row count `4(N−1)K + 3(K−1)` of `J`.
pub const fn jacobian_rows(n_arrays: usize, n_steps: usize) -> usize {
    4 * (n_arrays - 1) * n_steps + 3 * (n_steps - 1)
}

/// Full `J`: per step the `L^k` / `T^k` rows, then odometry rows `(−I₃, I₃)`.
pub fn assemble_full_jacobian(blocks: &JacobianBlocks) -> DMatrix<f64> {
    let n = blocks.n_arrays;
    let k_steps = blocks.n_steps();
    let m = n - 1;
    let src0 = ARRAY_BLOCK * m;
    let cols = src0 + SOURCE_BLOCK * k_steps;
    let mut j = DMatrix::zeros(jacobian_rows(n, k_steps), cols);
    let mut row = 0;
    for k in 0..k_steps {
        let sc = src0 + 3 * k;
        for (a, b) in blocks.blocks[k].iter().enumerate() {
            j.fixed_view_mut::<4, 8>(row + 4 * a, ARRAY_BLOCK * a).copy_from(&b.h_arr);
            j.fixed_view_mut::<4, 3>(row + 4 * a, sc).copy_from(&b.source);
        }
        row += 4 * m;
        if k + 1 < k_steps {
            for r in 0..3 {
                j[(row + r, sc + r)] = -1.0;
                j[(row + r, sc + 3 + r)] = 1.0;
            }
            row += 3;
        }
    }
    j
}

/// Measurement covariance matching the rows of [`assemble_full_jacobian`].
pub fn jacobian_weight_matrix(noise: &NoiseModel, n_arrays: usize, n_steps: usize) -> DMatrix<f64> {
    let dim = jacobian_rows(n_arrays, n_steps);
    let mut w = DMatrix::zeros(dim, dim);
    let mut o = 0;
    for k in 0..n_steps {
        for _ in 1..n_arrays {
            w[(o, o)] = noise.tdoa_var;
            w.fixed_view_mut::<3, 3>(o + 1, o + 1).copy_from(&noise.doa_cov);
            o += 4;
        }
        if k + 1 < n_steps {
            w.fixed_view_mut::<3, 3>(o, o).copy_from(&noise.rel_cov);
            o += 3;
        }
    }
    w
}

/// `Jᵀ W⁻¹ J`.
pub fn fim(j: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != j.nrows() || w.ncols() != j.nrows() {
        return Err(Error::DimensionMismatch {
            what: "weight matrix rows",
            expected: j.nrows(),
            found: w.nrows(),
        });
    }
    let chol = w
        .clone()
        .cholesky()
        .ok_or(Error::InvalidNoise("weight matrix is not positive definite"))?;
    let winv_j = chol.solve(j);
    let f = j.transpose() * winv_j;
    Ok((&f + f.transpose()) * 0.5)
}

/// `F = [L¹ T¹; …; Lᴷ Tᴷ]`.
pub fn reduced_f(blocks: &JacobianBlocks) -> DMatrix<f64> {
    let m = blocks.n_arrays - 1;
    let k_steps = blocks.n_steps();
    let mut f = DMatrix::zeros(4 * m * k_steps, ARRAY_BLOCK * m + 3);
    for k in 0..k_steps {
        let r = 4 * m * k;
        for (a, b) in blocks.blocks[k].iter().enumerate() {
            f.fixed_view_mut::<4, 8>(r + 4 * a, ARRAY_BLOCK * a).copy_from(&b.h_arr);
            f.fixed_view_mut::<4, 3>(r + 4 * a, ARRAY_BLOCK * m).copy_from(&b.source);
        }
    }
    f
}

fn timing_ratio(times: &[f64], k: usize) -> Result<f64> {
    let den = times[1] - times[0];
    if den == 0.0 {
        return Err(Error::DegenerateTiming);
    }
    Ok((times[k] - times[0]) / den)
}

fn require_two_steps(traj: &SourceTrajectory) -> Result<()> {
    if traj.len() < 2 {
        return Err(Error::InsufficientSteps {
            needed: 2,
            found: traj.len(),
        });
    }
    Ok(())
}

/// `T̄ = [0₂ₓ₃; Ψ; 0₃ₖₓ₃]`, `4K × 3`, with row `k` of `Ψ` (k = 3..K)
/// `Θ_{1,k}(t) − Θ_{k,1}(Δ)/Θ_{2,1}(Δ)·Θ_{1,2}(t)`, `t_k = s^kᵀ/(c d_1^k)`.
pub fn reduced_t_bar(traj: &SourceTrajectory, speed_of_sound: f64) -> Result<DMatrix<f64>> {
    require_two_steps(traj)?;
    let k_steps = traj.len();
    let times = &traj.emission_times;
    let mut t = Vec::with_capacity(k_steps);
    for (k, s) in traj.positions.iter().enumerate() {
        let d1 = s.norm();
        if !(d1 >= MIN_SOURCE_DISTANCE) {
            return Err(Error::DegenerateGeometry {
                array: 1,
                step: k + 1,
                distance: d1,
            });
        }
        t.push(s / (speed_of_sound * d1));
    }
    let mut out = DMatrix::zeros(4 * k_steps, 3);
    let t12 = t[0] - t[1];
    for k in 2..k_steps {
        let ratio = timing_ratio(times, k)?;
        let row = (t[0] - t[k]) - t12 * ratio;
        out.fixed_view_mut::<1, 3>(k, 0).copy_from(&row.transpose());
    }
    if k_steps == 2 {
        timing_ratio(times, 1)?;
    }
    Ok(out)
}

/// `L̄_i = diag(I₂, Φ_i)`, `4K × 8`, columns `(τ, δ, p, θ)`.
pub fn reduced_l_bar(
    array: &ArrayParams,
    traj: &SourceTrajectory,
    speed_of_sound: f64,
) -> Result<DMatrix<f64>> {
    require_two_steps(traj)?;
    let k_steps = traj.len();
    let times = &traj.emission_times;
    let blocks = traj
        .positions
        .iter()
        .zip(times)
        .enumerate()
        .map(|(k, (s, &t))| {
            array_step_block(array, s, t, speed_of_sound).map_err(|e| locate(e, 0, k + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(4 * k_steps, 8);
    out[(0, 0)] = 1.0;
    out[(1, 1)] = 1.0;
    let h: Vec<_> = blocks.iter().map(ArrayStepBlock::h).collect();
    let h21 = h[1] - h[0];
    for k in 2..k_steps {
        let ratio = timing_ratio(times, k)?;
        let row = (h[k] - h[0]) - h21 * ratio;
        out.fixed_view_mut::<1, 3>(k, 2).copy_from(&row);
    }
    if k_steps == 2 {
        timing_ratio(times, 1)?;
    }
    for (k, b) in blocks.iter().enumerate() {
        let r = k_steps + 3 * k;
        out.fixed_view_mut::<3, 3>(r, 2).copy_from(&b.u());
        out.fixed_view_mut::<3, 3>(r, 5).copy_from(&b.v());
    }
    Ok(out)
}

/// `M_{j_T} = [L̄_j T̄; −L̄_j 0; …; −L̄_j 0]` with `N−1` row blocks.
pub fn joint_matrix(scene: &Scene, j: usize, speed_of_sound: f64) -> Result<DMatrix<f64>> {
    let n = scene.n_arrays();
    if !(2..=n).contains(&j) {
        return Err(Error::DimensionMismatch {
            what: "array index for the joint matrix",
            expected: n,
            found: j,
        });
    }
    let l = reduced_l_bar(&scene.array(j), &scene.trajectory, speed_of_sound)
        .map_err(|e| locate(e, j, 0))?;
    let t = reduced_t_bar(&scene.trajectory, speed_of_sound)?;
    let r = l.nrows();
    let mut m = DMatrix::zeros(r * (n - 1), 11);
    m.view_mut((0, 0), (r, 8)).copy_from(&l);
    m.view_mut((0, 8), (r, 3)).copy_from(&t);
    for b in 1..n - 1 {
        m.view_mut((b * r, 0), (r, 8)).copy_from(&(-&l));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankReport {
    pub matrix_name: String,
    pub rows: usize,
    pub cols: usize,
    pub numerical_rank: usize,
    pub full_column_rank: bool,
    /// `None` when the rank is zero.
    pub smallest_retained_sv: Option<f64>,
    /// `None` when nothing is discarded (full column rank).
    pub largest_discarded_sv: Option<f64>,
}

impl RankReport {
    /// Smallest retained over largest discarded singular value. Infinite
    /// when nothing is discarded or the discarded values are exact zeros.
    pub fn gap_ratio(&self) -> f64 {
        match (self.smallest_retained_sv, self.largest_discarded_sv) {
            (Some(s), Some(d)) if d > 0.0 => s / d,
            (Some(_), _) => f64::INFINITY,
            (None, _) => 0.0,
        }
    }
}

/// Singular values of `m`, descending, padded with zeros to `cols` entries.
pub fn column_singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = if m.nrows() == 0 || m.ncols() == 0 {
        Vec::new()
    } else {
        m.singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.resize(m.ncols(), 0.0);
    sv
}

/// Rank as the count of singular values above `rel_tol · σ_max`.
pub fn numerical_rank(name: &str, m: &DMatrix<f64>, rel_tol: f64) -> RankReport {
    let sv = column_singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    let rank = if max > 0.0 {
        sv.iter().take_while(|&&s| s > rel_tol * max).count()
    } else {
        0
    };
    RankReport {
        matrix_name: String::from(name),
        rows: m.nrows(),
        cols: m.ncols(),
        numerical_rank: rank,
        full_column_rank: rank == m.ncols(),
        smallest_retained_sv: rank.checked_sub(1).map(|i| sv[i]),
        largest_discarded_sv: sv.get(rank).copied(),
    }
}

/// Family of planes through the reference origin containing the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PlaneFamily {
    /// `x + αy = 0`.
    XAlphaY,
    /// `x + βz = 0`.
    XBetaZ,
    /// `y + γz = 0`.
    YGammaZ,
    /// Through the origin but in none of the three families above.
    Other,
}

/// A violated observability condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Violation {
    /// `K ≥ ⌈2 + 3/(4(N−1))⌉` fails.
    StepCountBound,
    /// Fewer than five steps.
    FewerThanFiveSteps,
    /// Source collinear with the reference array origin.
    CollinearWithReference,
    /// Source coplanar with a plane through the reference origin.
    CoplanarWithReference(PlaneFamily),
    /// Source collinear with the origin of array `i`.
    CollinearWithArray(usize),
    /// Array `i` has `θy = ±π/2`.
    GimbalLock(usize),
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Violation::StepCountBound => write!(f, "too few steps for the rank-count bound"),
            Violation::FewerThanFiveSteps => write!(f, "fewer than five time steps"),
            Violation::CollinearWithReference => {
                write!(f, "source collinear with the reference array origin")
            }
            Violation::CoplanarWithReference(fam) => {
                let name = match fam {
                    PlaneFamily::XAlphaY => "x + a*y = 0",
                    PlaneFamily::XBetaZ => "x + b*z = 0",
                    PlaneFamily::YGammaZ => "y + c*z = 0",
                    PlaneFamily::Other => "a plane",
                };
                write!(f, "source on {name} through the reference array origin")
            }
            Violation::CollinearWithArray(i) => {
                write!(f, "source collinear with the origin of array {i}")
            }
            Violation::GimbalLock(i) => write!(f, "array {i} pitch at +-90 deg (gimbal lock)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Diagnosis {
    pub n_arrays: usize,
    pub n_steps: usize,
    /// `⌈2 + 3/(4(N−1))⌉`.
    pub min_steps_bound: usize,
    pub violations: Vec<Violation>,
}

impl Diagnosis {
    pub fn is_clear(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `⌈2 + 3/(4(N−1))⌉`, which is 3 for every `N ≥ 2`.
pub fn min_steps_bound(n_arrays: usize) -> usize {
    let m = 4 * (n_arrays - 1);
    2 + 3usize.div_ceil(m)
}

fn unit_directions(points: &[Vector3<f64>], origin: &Vector3<f64>) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|s| s - origin)
        .filter(|v| v.norm() > MIN_SOURCE_DISTANCE)
        .map(|v| v.normalize())
        .collect()
}

/// All lines through `origin` and a point are within `tol` rad of each other.
pub fn collinear_with(points: &[Vector3<f64>], origin: &Vector3<f64>, tol: f64) -> bool {
    let dirs = unit_directions(points, origin);
    match dirs.first() {
        None => true,
        Some(u0) => dirs.iter().all(|u| u.cross(u0).norm() < tol.sin()),
    }
}

/// Normal of a plane through `origin` containing every point within `tol`
/// rad, if one exists.
pub fn plane_through(points: &[Vector3<f64>], origin: &Vector3<f64>, tol: f64) -> Option<Vector3<f64>> {
    let dirs = unit_directions(points, origin);
    let mut scatter = Matrix3::zeros();
    for u in &dirs {
        scatter += u * u.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let idx = eig.eigenvalues.imin();
    let n: Vector3<f64> = eig.eigenvectors.column(idx).into_owned();
    let worst = dirs.iter().fold(0.0_f64, |w, u| w.max(u.dot(&n).abs()));
    (worst < tol.sin()).then_some(n)
}

fn classify_plane(n: &Vector3<f64>, tol: f64) -> PlaneFamily {
    if n.z.abs() < tol {
        PlaneFamily::XAlphaY
    } else if n.y.abs() < tol {
        PlaneFamily::XBetaZ
    } else if n.x.abs() < tol {
        PlaneFamily::YGammaZ
    } else {
        PlaneFamily::Other
    }
}

/// Geometric and counting checks for the known rank-deficient
/// configurations. Diagnostic only: meant for noise-free or ground-truth
/// geometry.
pub fn check_theorem_conditions(scene: &Scene, tol: f64) -> Diagnosis {
    let n = scene.n_arrays();
    let k = scene.n_steps();
    let pts = &scene.trajectory.positions;
    let bound = min_steps_bound(n);
    let mut violations = Vec::new();
    if k < bound {
        violations.push(Violation::StepCountBound);
    }
    if k < 5 {
        violations.push(Violation::FewerThanFiveSteps);
    }
    let origin = Vector3::zeros();
    if collinear_with(pts, &origin, tol) {
        violations.push(Violation::CollinearWithReference);
    } else if let Some(normal) = plane_through(pts, &origin, tol) {
        violations.push(Violation::CoplanarWithReference(classify_plane(&normal, tol)));
    }
    for i in 2..=n {
        if collinear_with(pts, &scene.array(i).position, tol) {
            violations.push(Violation::CollinearWithArray(i));
        }
    }
    for i in 2..=n {
        if scene.array(i).euler.theta_y.cos().abs() < tol {
            violations.push(Violation::GimbalLock(i));
        }
    }
    Diagnosis {
        n_arrays: n,
        n_steps: k,
        min_steps_bound: bound,
        violations,
    }
}

/// Rank of `F` built from the first `k` steps, for `k = 1..=K`.
pub fn rank_sweep(scene: &Scene, speed_of_sound: f64, rel_tol: f64) -> Result<Vec<RankReport>> {
    let blocks = jacobian_blocks(scene, speed_of_sound)?;
    Ok((1..=blocks.n_steps())
        .map(|k| numerical_rank("F", &reduced_f(&blocks.prefix(k)), rel_tol))
        .collect())
}
