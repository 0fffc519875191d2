//! Batch Gauss-Newton refinement of all array parameters and source
//! positions.
//!
//! Every step is taken in full; there is no damping or line search. The
//! normal equations are solved by Cholesky after symmetric Jacobi scaling, and
//! a failed or near-singular factorization is reported instead of
//! regularized.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::measurement::{locate, MeasurementSet, NoiseModel, MIN_SOURCE_DISTANCE};
use crate::observability::{array_step_block, numerical_rank, DEFAULT_RANK_TOL};
use crate::state::{StateVector, ARRAY_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Converged once `‖Δx‖₂` drops below this.
    pub step_threshold: f64,
    /// Any step norm above this diverges immediately.
    pub divergence_norm_cap: f64,
    /// Step norms staying above this while oscillating diverge.
    pub oscillation_level: f64,
    pub oscillation_window: usize,
    pub growth_window: usize,
    /// Smallest admissible squared pivot of the Jacobi-scaled Cholesky factor.
    pub min_pivot: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_threshold: 1e-5,
            divergence_norm_cap: 1e8,
            oscillation_level: 1e3,
            oscillation_window: 5,
            growth_window: 5,
            min_pivot: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DivergenceRule {
    /// A step norm exceeded the cap or was not finite.
    NormCap,
    /// Step norms stayed above the oscillation level without settling.
    Oscillation,
    /// Step norms grew over the whole growth window.
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Verdict {
    Converged,
    MaxIterations,
    Diverged(DivergenceRule),
}

impl Verdict {
    pub fn is_converged(&self) -> bool {
        matches!(self, Verdict::Converged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub step_norm: f64,
    /// `‖g(x) − z‖²_{W⁻¹}` before the step.
    pub cost: f64,
    /// Seconds since the solve started, as reported by the clock.
    pub elapsed: f64,
}

/// One dense block `∂e/∂x` of a constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEntry {
    pub row: usize,
    pub col: usize,
    pub block: DMatrix<f64>,
}

/// Block-sparse Jacobian of the stacked residual.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<JacobianEntry>,
}

impl SparseJacobian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.rows, self.cols);
        for e in &self.entries {
            let (r, c) = e.block.shape();
            j.view_mut((e.row, e.col), (r, c)).copy_from(&e.block);
        }
        j
    }
}

fn check_dims(x: &StateVector, ms: &MeasurementSet) -> Result<()> {
    if x.n_arrays() != ms.n_arrays() || x.n_steps() != ms.n_steps() {
        return Err(Error::DimensionMismatch {
            what: "state vs measurement (arrays, steps)",
            expected: ms.n_arrays() * 1000 + ms.n_steps(),
            found: x.n_arrays() * 1000 + x.n_steps(),
        });
    }
    Ok(())
}

/// `e = g(x) − z` in stacking order, and its block-sparse Jacobian.
pub fn residuals_and_jacobian(x: &StateVector, ms: &MeasurementSet) -> Result<(DVector<f64>, SparseJacobian)> {
    check_dims(x, ms)?;
    let n = ms.n_arrays();
    let k_steps = ms.n_steps();
    let c = ms.speed_of_sound;
    let rows = ms.stacked_len();
    let mut e = DVector::zeros(rows);
    let mut entries = Vec::with_capacity(k_steps * (2 * n));
    let mut row = 0;
    for k in 1..=k_steps {
        let s = x.source(k);
        let meas = &ms.steps[k - 1];
        let d1 = s.norm();
        if !(d1 >= MIN_SOURCE_DISTANCE) {
            return Err(Error::DegenerateGeometry {
                array: 1,
                step: k,
                distance: d1,
            });
        }
        let u1 = s / d1;
        e.fixed_rows_mut::<3>(row).copy_from(&(u1 - meas.doas[0]));
        let a1 = (Matrix3::identity() - u1 * u1.transpose()) / d1;
        entries.push(JacobianEntry {
            row,
            col: x.source_offset(k),
            block: DMatrix::from_column_slice(3, 3, a1.as_slice()),
        });
        row += 3;
        let t = ms.emission_times[k - 1];
        for i in 2..=n {
            let a = x.array(i);
            let diff = s - a.position;
            let di = diff.norm();
            let blk = array_step_block(&a, &s, t, c).map_err(|err| locate(err, i, k))?;
            let rt = crate::rotation::euler_to_rotation(&a.euler).transpose().into_inner();
            let tdoa = di / c - d1 / c + a.tau + t * a.delta;
            e[row] = tdoa - meas.tdoas[i - 2];
            e.fixed_rows_mut::<3>(row + 1)
                .copy_from(&(rt * diff / di - meas.doas[i - 1]));
            entries.push(JacobianEntry {
                row,
                col: x.array_offset(i),
                block: DMatrix::from_column_slice(4, 8, blk.h_arr.as_slice()),
            });
            entries.push(JacobianEntry {
                row,
                col: x.source_offset(k),
                block: DMatrix::from_column_slice(4, 3, blk.source.as_slice()),
            });
            row += 4;
        }
        if k < k_steps {
            let next = x.source(k + 1);
            e.fixed_rows_mut::<3>(row)
                .copy_from(&(next - s - ms.rel_displacements[k - 1]));
            entries.push(JacobianEntry {
                row,
                col: x.source_offset(k),
                block: -DMatrix::identity(3, 3),
            });
            entries.push(JacobianEntry {
                row,
                col: x.source_offset(k + 1),
                block: DMatrix::identity(3, 3),
            });
            row += 3;
        }
    }
    Ok((
        e,
        SparseJacobian {
            rows,
            cols: x.len(),
            entries,
        },
    ))
}

/// Inverse covariance blocks in stacking order: `(first row, W⁻¹ block)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    blocks: Vec<(usize, DMatrix<f64>)>,
}

impl BlockWeights {
    pub fn new(noise: &NoiseModel, n_arrays: usize, n_steps: usize) -> Result<Self> {
        noise.validate()?;
        let lam_inv = noise
            .doa_cov
            .try_inverse()
            .ok_or(Error::InvalidNoise("DOA covariance is singular"))?;
        let q_inv = noise
            .rel_cov
            .try_inverse()
            .ok_or(Error::InvalidNoise("displacement covariance is singular"))?;
        let mut arr = Matrix4::zeros();
        arr[(0, 0)] = 1.0 / noise.tdoa_var;
        arr.fixed_view_mut::<3, 3>(1, 1).copy_from(&lam_inv);
        let to_d = |m: &[f64], d: usize| DMatrix::from_column_slice(d, d, m);
        let mut blocks = Vec::with_capacity(n_steps * (n_arrays + 1));
        let mut row = 0;
        for k in 0..n_steps {
            blocks.push((row, to_d(lam_inv.as_slice(), 3)));
            row += 3;
            for _ in 1..n_arrays {
                blocks.push((row, to_d(arr.as_slice(), 4)));
                row += 4;
            }
            if k + 1 < n_steps {
                blocks.push((row, to_d(q_inv.as_slice(), 3)));
                row += 3;
            }
        }
        Ok(Self { blocks })
    }

    fn find(&self, row: usize) -> &DMatrix<f64> {
        let idx = self.blocks.partition_point(|(r, _)| *r <= row) - 1;
        &self.blocks[idx].1
    }

    /// `eᵀ W⁻¹ e`.
    pub fn cost(&self, e: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|(r, w)| {
                let seg = e.rows(*r, w.nrows());
                (seg.transpose() * w * seg)[(0, 0)]
            })
            .sum()
    }
}

/// `H = Σ JᵀW⁻¹J`, `b = Σ JᵀW⁻¹e`, accumulated constraint by constraint.
pub fn assemble_normal_equations(
    e: &DVector<f64>,
    j: &SparseJacobian,
    w: &BlockWeights,
) -> (DMatrix<f64>, DVector<f64>) {
    let mut h = DMatrix::zeros(j.cols, j.cols);
    let mut b = DVector::zeros(j.cols);
    let mut start = 0;
    while start < j.entries.len() {
        let row = j.entries[start].row;
        let mut end = start;
        while end < j.entries.len() && j.entries[end].row == row {
            end += 1;
        }
        let group = &j.entries[start..end];
        let winv = w.find(row);
        let dim = winv.nrows();
        let we = winv * e.rows(row, dim);
        let weighted: Vec<DMatrix<f64>> = group.iter().map(|a| a.block.transpose() * winv).collect();
        for (a, wa) in group.iter().zip(&weighted) {
            let ca = a.block.ncols();
            let mut bseg = b.rows_mut(a.col, ca);
            bseg += a.block.transpose() * &we;
            for bb in group {
                let cb = bb.block.ncols();
                let mut hv = h.view_mut((a.col, bb.col), (ca, cb));
                hv += wa * &bb.block;
            }
        }
        start = end;
    }
    (h, b)
}

/// Solves `H Δx = −b` by Cholesky of the Jacobi-scaled `D H D`.
pub fn solve_normal_equations(h: &DMatrix<f64>, b: &DVector<f64>, min_pivot: f64) -> Result<DVector<f64>> {
    let n = h.nrows();
    let diag = h.diagonal();
    let singular = |hs: &DMatrix<f64>| {
        let r = numerical_rank("H", hs, DEFAULT_RANK_TOL);
        let rank = if r.full_column_rank { n - 1 } else { r.numerical_rank };
        Error::SingularNormalEquations {
            rank,
            dim: n,
            gap_ratio: r.gap_ratio(),
        }
    };
    if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(singular(h));
    }
    let scale = diag.map(|d| 1.0 / d.sqrt());
    let hs = DMatrix::from_fn(n, n, |r, c| h[(r, c)] * scale[r] * scale[c]);
    let chol = match hs.clone().cholesky() {
        Some(c) => c,
        None => return Err(singular(&hs)),
    };
    let l = chol.l_dirty();
    let min_sq = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if !(min_sq >= min_pivot) {
        return Err(singular(&hs));
    }
    let rhs = -b.component_mul(&scale);
    Ok(chol.solve(&rhs).component_mul(&scale))
}

/// Divergence classification of a sequence of step norms.
pub fn classify_divergence(norms: &[f64], cfg: &SolverConfig) -> Option<DivergenceRule> {
    let last = *norms.last()?;
    if !last.is_finite() || last > cfg.divergence_norm_cap {
        return Some(DivergenceRule::NormCap);
    }
    let w = cfg.oscillation_window;
    if w >= 3 && norms.len() >= w {
        let tail = &norms[norms.len() - w..];
        if tail.iter().all(|v| *v > cfg.oscillation_level) {
            let diffs: Vec<f64> = tail.windows(2).map(|p| p[1] - p[0]).collect();
            if diffs.windows(2).any(|d| d[0] * d[1] < 0.0) {
                return Some(DivergenceRule::Oscillation);
            }
        }
    }
    let g = cfg.growth_window;
    if g >= 2 && norms.len() >= g {
        let tail = &norms[norms.len() - g..];
        if tail.windows(2).all(|p| p[1] > p[0]) {
            return Some(DivergenceRule::Growth);
        }
    }
    None
}

/// Verdict of a complete trace: converged if the last step is below the
/// threshold, else the first divergence rule met along the way, else
/// maxed out.
pub fn classify_trace(norms: &[f64], cfg: &SolverConfig) -> Verdict {
    for i in 1..=norms.len() {
        if norms[i - 1] < cfg.step_threshold {
            return Verdict::Converged;
        }
        if let Some(rule) = classify_divergence(&norms[..i], cfg) {
            return Verdict::Diverged(rule);
        }
    }
    Verdict::MaxIterations
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub state: StateVector,
    pub trace: Vec<IterationRecord>,
    pub verdict: Verdict,
    /// Cost at the returned state.
    pub final_cost: f64,
}

/// Gauss-Newton with `clock()` returning seconds since an arbitrary epoch.
pub fn gauss_newton_with_clock(
    x0: &StateVector,
    ms: &MeasurementSet,
    noise: &NoiseModel,
    cfg: &SolverConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<SolveResult> {
    check_dims(x0, ms)?;
    let weights = BlockWeights::new(noise, ms.n_arrays(), ms.n_steps())?;
    let t0 = clock();
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(cfg.max_iterations);
    let mut norms = Vec::with_capacity(cfg.max_iterations);
    let mut verdict = Verdict::MaxIterations;
    for it in 1..=cfg.max_iterations {
        let (e, j) = residuals_and_jacobian(&x, ms)?;
        let cost = weights.cost(&e);
        let (h, b) = assemble_normal_equations(&e, &j, &weights);
        let dx = solve_normal_equations(&h, &b, cfg.min_pivot)?;
        let norm = dx.norm();
        if norm.is_finite() {
            *x.values_mut() += &dx;
        }
        norms.push(norm);
        trace.push(IterationRecord {
            iteration: it,
            step_norm: norm,
            cost,
            elapsed: clock() - t0,
        });
        if norm < cfg.step_threshold {
            verdict = Verdict::Converged;
            break;
        }
        if let Some(rule) = classify_divergence(&norms, cfg) {
            verdict = Verdict::Diverged(rule);
            break;
        }
    }
    let final_cost = match residuals_and_jacobian(&x, ms) {
        Ok((e, _)) => weights.cost(&e),
        Err(_) => f64::NAN,
    };
    Ok(SolveResult {
        state: x,
        trace,
        verdict,
        final_cost,
    })
}

/// [`gauss_newton_with_clock`] with all elapsed times reported as zero.
pub fn gauss_newton(
    x0: &StateVector,
    ms: &MeasurementSet,
    noise: &NoiseModel,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    gauss_newton_with_clock(x0, ms, noise, cfg, &mut || 0.0)
}

/// Dense `W⁻¹` matching the stacked residual, for cross-checks.
pub fn dense_weight_inverse(w: &BlockWeights, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(dim, dim);
    for (r, b) in &w.blocks {
        out.view_mut((*r, *r), b.shape()).copy_from(b);
    }
    out
}

/// Columns of `J` that belong to array `i`, for callers that slice reports.
pub fn array_columns(i: usize) -> core::ops::Range<usize> {
    let o = crate::state::array_offset(i);
    o..o + ARRAY_BLOCK
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::measurement::{add_noise, predict_measurements, weight_matrix, DEFAULT_SPEED_OF_SOUND as C};
    use crate::observability::{assemble_full_jacobian, jacobian_blocks};
    use crate::rotation::EulerZYX;
    use crate::state::{ArrayParams, Scene, SourceTrajectory};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(seed: u64, n: usize, k: usize) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arrays = (2..=n)
            .map(|_| {
                ArrayParams::new(
                    Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5)),
                    EulerZYX::new(rng.random_range(-3.0..3.0), rng.random_range(-1.2..1.2), rng.random_range(-3.0..3.0)),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-1e-4..1e-4),
                )
            })
            .collect();
        let mut t = 0.0;
        let mut times = vec![];
        let positions = (0..k)
            .map(|_| {
                t += rng.random_range(0.5..2.0);
                times.push(t);
                Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(1.0..2.5))
            })
            .collect();
        Scene::new(arrays, SourceTrajectory::new(positions, times).unwrap()).unwrap()
    }

    #[test]
    fn zero_residual_at_truth() {
        let sc = scene(1, 3, 6);
        let ms = predict_measurements(&sc, C).unwrap();
        let (e, j) = residuals_and_jacobian(&sc.to_state(), &ms).unwrap();
        assert!(e.abs().max() < 1e-15);
        assert_eq!(j.rows, ms.stacked_len());
    }

    #[test]
    fn jacobian_matches_observability_rows() {
        let sc = scene(2, 4, 7);
        let ms = predict_measurements(&sc, C).unwrap();
        let (_, j) = residuals_and_jacobian(&sc.to_state(), &ms).unwrap();
        let dense = j.to_dense();
        let obs = assemble_full_jacobian(&jacobian_blocks(&sc, C).unwrap());
        // drop the three reference DOA rows of every step
        let per = 4 * 4 - 1;
        let mut keep = vec![];
        let mut r = 0;
        for k in 0..7 {
            keep.extend(r + 3..r + per);
            r += per;
            if k < 6 {
                keep.extend(r..r + 3);
                r += 3;
            }
        }
        let sub = dense.select_rows(keep.iter());
        assert_eq!(sub.shape(), obs.shape());
        assert!((sub - obs).abs().max() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences_including_reference_rows() {
        let sc = scene(3, 3, 5);
        let ms = add_noise(&predict_measurements(&sc, C).unwrap(), &NoiseModel::nominal(), 1);
        let x = sc.to_state();
        let (_, j) = residuals_and_jacobian(&x, &ms).unwrap();
        let dense = j.to_dense();
        for c in 0..x.len() {
            let h = 1e-6 * x.values()[c].abs().max(1.0);
            let mut xp = x.clone();
            xp.values_mut()[c] += h;
            let mut xm = x.clone();
            xm.values_mut()[c] -= h;
            let fd = (residuals_and_jacobian(&xp, &ms).unwrap().0 - residuals_and_jacobian(&xm, &ms).unwrap().0) / (2.0 * h);
            let err = (fd - dense.column(c)).abs().max();
            assert!(err < 1e-6, "column {c}: {err}");
        }
    }

    #[test]
    fn odometry_blocks() {
        let sc = scene(4, 2, 3);
        let ms = predict_measurements(&sc, C).unwrap();
        let x = sc.to_state();
        let (_, j) = residuals_and_jacobian(&x, &ms).unwrap();
        let odo: Vec<_> = j.entries.iter().filter(|e| e.row == 7).collect();
        assert_eq!(odo.len(), 2);
        assert_eq!(odo[0].block, -DMatrix::<f64>::identity(3, 3));
        assert_eq!(odo[1].block, DMatrix::<f64>::identity(3, 3));
        assert_eq!(odo[1].col - odo[0].col, 3);
    }

    #[test]
    fn block_assembly_matches_dense_product() {
        for (seed, n, k) in [(5, 2, 3), (6, 3, 6), (7, 5, 10)] {
            let sc = scene(seed, n, k);
            let noise = NoiseModel::nominal();
            let ms = add_noise(&predict_measurements(&sc, C).unwrap(), &noise, seed);
            let x = sc.to_state();
            let (e, j) = residuals_and_jacobian(&x, &ms).unwrap();
            let w = BlockWeights::new(&noise, n, k).unwrap();
            let (h, b) = assemble_normal_equations(&e, &j, &w);
            let jd = j.to_dense();
            let winv = weight_matrix(&noise, n, k).unwrap().try_inverse().unwrap();
            let hd = jd.transpose() * &winv * &jd;
            let bd = jd.transpose() * &winv * &e;
            let rel = (&h - &hd).abs().max() / hd.abs().max();
            assert!(rel < 1e-12, "H rel err {rel}");
            assert!((&b - &bd).abs().max() / bd.abs().max().max(1e-300) < 1e-12);
            assert!((&h - h.transpose()).abs().max() == 0.0 || (&h - h.transpose()).abs().max() / h.abs().max() < 1e-15);
            assert_eq!(dense_weight_inverse(&w, ms.stacked_len()).nrows(), winv.nrows());
            assert!((w.cost(&e) - (e.transpose() * &winv * &e)[(0, 0)]).abs() < 1e-9 * w.cost(&e));
        }
    }

    #[test]
    fn truth_start_converges_immediately() {
        let sc = scene(8, 4, 10);
        let ms = predict_measurements(&sc, C).unwrap();
        let r = gauss_newton(&sc.to_state(), &ms, &NoiseModel::nominal(), &SolverConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        assert_eq!(r.trace.len(), 1);
        assert!(r.trace[0].step_norm < 1e-5);
    }

    #[test]
    fn recovers_truth_from_perturbed_start() {
        let sc = scene(9, 4, 12);
        let ms = predict_measurements(&sc, C).unwrap();
        let mut x0 = sc.to_state();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in x0.values_mut().iter_mut() {
            *v += rng.random_range(-0.02..0.02) * v.abs().max(1e-3);
        }
        let r = gauss_newton(&x0, &ms, &NoiseModel::nominal(), &SolverConfig::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Converged);
        let (e, _) = residuals_and_jacobian(&r.state, &ms).unwrap();
        assert!(e.abs().max() < 1e-8);
        for w in r.trace.windows(2) {
            assert!(w[1].cost <= w[0].cost * (1.0 + 1e-9));
        }
    }

    #[test]
    fn gimbal_lock_is_singular() {
        let mut sc = scene(10, 3, 10);
        sc.arrays[0].euler = EulerZYX::from_raw(0.2, core::f64::consts::FRAC_PI_2, 0.4);
        let ms = predict_measurements(&sc, C).unwrap();
        let err = gauss_newton(&sc.to_state(), &ms, &NoiseModel::nominal(), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SingularNormalEquations { .. }), "{err:?}");
    }

    #[test]
    fn divergence_rules() {
        let cfg = SolverConfig::default();
        assert_eq!(classify_trace(&[1e9], &cfg), Verdict::Diverged(DivergenceRule::NormCap));
        assert_eq!(classify_trace(&[f64::NAN], &cfg), Verdict::Diverged(DivergenceRule::NormCap));
        assert_eq!(classify_trace(&[1.0, 0.1, 1e-3, 1e-6], &cfg), Verdict::Converged);
        let osc: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 2e3 } else { 5e3 }).collect();
        assert_eq!(classify_trace(&osc, &cfg), Verdict::Diverged(DivergenceRule::Oscillation));
        assert_eq!(
            classify_trace(&[0.1, 0.2, 0.3, 0.4, 0.5], &cfg),
            Verdict::Diverged(DivergenceRule::Growth)
        );
        assert_eq!(classify_trace(&[1.0, 0.5, 0.6, 0.4, 0.45, 0.3], &cfg), Verdict::MaxIterations);
        assert_eq!(classify_divergence(&[], &cfg), None);
    }

    #[test]
    fn clock_is_used_for_elapsed_time() {
        let sc = scene(11, 3, 8);
        let ms = predict_measurements(&sc, C).unwrap();
        let mut t = 0.0;
        let mut clock = || {
            t += 0.5;
            t
        };
        let r = gauss_newton_with_clock(&sc.to_state(), &ms, &NoiseModel::nominal(), &SolverConfig::default(), &mut clock).unwrap();
        assert_eq!(r.trace[0].elapsed, 0.5);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sc = scene(12, 3, 8);
        let ms = predict_measurements(&scene(12, 3, 7), C).unwrap();
        assert!(matches!(
            residuals_and_jacobian(&sc.to_state(), &ms),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
