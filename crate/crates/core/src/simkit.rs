//! Scenario generation, initialization schemes, Monte Carlo trials and
//! error metrics.
//!
//! Every random draw of a trial comes from a ChaCha8 stream keyed by
//! `(master seed, trial index, purpose)`, so trials can run in any order or
//! in parallel and still reproduce bit for bit. Measurement noise uses its
//! own purpose stream and is therefore shared by all schemes of a trial.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
use core::fmt;
use core::str::FromStr;

use nalgebra::Vector3;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::init::{initialize, InitConfig};
use crate::measurement::{add_noise_with, predict_measurements, MeasurementSet, NoiseModel, DEFAULT_SPEED_OF_SOUND};
use crate::observability::{check_theorem_conditions, PlaneFamily, Violation, DEFAULT_ANGLE_TOL};
use crate::rotation::{euler_to_rotation, EulerZYX};
use crate::solver::{gauss_newton, SolverConfig, Verdict};
use crate::state::{ArrayParams, Scene, SourceTrajectory, StateVector};

/// Scenario family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ScenarioKind {
    /// Random 3D trajectory in general position.
    Observable,
    /// Trajectory on a horizontal plane that misses the reference origin.
    ObservablePlanar,
    /// `s^k = k·s¹`: collinear with the reference origin.
    CollinearReference,
    /// Trajectory on the plane `x − y = 0`.
    CoplanarReference,
    /// Collinear with the origin of array 2.
    CollinearArray,
    /// Arrays 4 and 7 at `θy = π/2`.
    Gimbal,
    /// Fixed desk-scale layout with five arrays and 24 emissions.
    Preset,
    /// Random room-scale layout of any size.
    Random,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::Observable,
        ScenarioKind::ObservablePlanar,
        ScenarioKind::CollinearReference,
        ScenarioKind::CoplanarReference,
        ScenarioKind::CollinearArray,
        ScenarioKind::Gimbal,
        ScenarioKind::Preset,
        ScenarioKind::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Observable => "observable",
            ScenarioKind::ObservablePlanar => "observable-planar",
            ScenarioKind::CollinearReference => "collinear-ref",
            ScenarioKind::CoplanarReference => "coplanar-ref",
            ScenarioKind::CollinearArray => "collinear-array",
            ScenarioKind::Gimbal => "gimbal",
            ScenarioKind::Preset => "preset",
            ScenarioKind::Random => "random",
        }
    }

    /// Default `(N, K)`.
    pub fn default_size(&self) -> (usize, usize) {
        match self {
            ScenarioKind::Preset => (5, 24),
            ScenarioKind::Random => (5, 40),
            _ => (8, 10),
        }
    }

    /// Whether the family is built to be rank deficient.
    pub fn is_unobservable(&self) -> bool {
        matches!(
            self,
            ScenarioKind::CollinearReference
                | ScenarioKind::CoplanarReference
                | ScenarioKind::CollinearArray
                | ScenarioKind::Gimbal
        )
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(alloc::format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Defaults to the kind's size when `None`.
    pub n_arrays: Option<usize>,
    pub n_steps: Option<usize>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            n_arrays: None,
            n_steps: None,
            seed,
        }
    }

    pub fn with_size(mut self, n_arrays: usize, n_steps: usize) -> Self {
        self.n_arrays = Some(n_arrays);
        self.n_steps = Some(n_steps);
        self
    }

    pub fn size(&self) -> (usize, usize) {
        let (n, k) = self.kind.default_size();
        (self.n_arrays.unwrap_or(n), self.n_steps.unwrap_or(k))
    }
}

/// Ground truth, noise model and noise-free measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub scene: Scene,
    pub noise: NoiseModel,
    pub speed_of_sound: f64,
    clean: MeasurementSet,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec, scene: Scene, noise: NoiseModel, speed_of_sound: f64) -> Result<Self> {
        let clean = predict_measurements(&scene, speed_of_sound)?;
        Ok(Self {
            spec,
            scene,
            noise,
            speed_of_sound,
            clean,
        })
    }

    pub fn truth(&self) -> StateVector {
        self.scene.to_state()
    }

    pub fn clean_measurements(&self) -> &MeasurementSet {
        &self.clean
    }

    pub fn noisy_measurements<R: Rng + ?Sized>(&self, rng: &mut R) -> MeasurementSet {
        add_noise_with(&self.clean, &self.noise, rng)
    }

    /// Axis-aligned bounds of all array positions (reference included) and
    /// source positions.
    pub fn bounding_box(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::zeros();
        let mut hi = Vector3::zeros();
        let pts = self
            .scene
            .arrays
            .iter()
            .map(|a| a.position)
            .chain(self.scene.trajectory.positions.iter().copied());
        for p in pts {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        (lo, hi)
    }
}

fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(lo.x..=hi.x),
        rng.random_range(lo.y..=hi.y),
        rng.random_range(lo.z..=hi.z),
    )
}

fn random_euler<R: Rng + ?Sized>(rng: &mut R) -> EulerZYX {
    EulerZYX::new(
        rng.random_range(-PI..PI),
        rng.random_range(-FRAC_PI_2..FRAC_PI_2),
        rng.random_range(-PI..PI),
    )
}

fn random_clock<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    (rng.random_range(-0.1..=0.1), rng.random_range(-1e-4..=1e-4))
}

/// Cumulative emission times with intervals uniform in `[0.5, 2.0]` s.
pub fn emission_times<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut t = 0.0;
    (0..k)
        .map(|_| {
            t += rng.random_range(0.5..=2.0);
            t
        })
        .collect()
}

fn min_clearance(p: &Vector3<f64>, arrays: &[ArrayParams]) -> f64 {
    arrays
        .iter()
        .map(|a| (p - a.position).norm())
        .fold(p.norm(), f64::min)
}

const CLEARANCE: f64 = 0.5;

fn random_arrays<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: Vector3<f64>, hi: Vector3<f64>) -> Vec<ArrayParams> {
    let mut arrays: Vec<ArrayParams> = Vec::with_capacity(n - 1);
    while arrays.len() < n - 1 {
        let p = uniform_vec(rng, &lo, &hi);
        if min_clearance(&p, &arrays) < 1.0 {
            continue;
        }
        let (tau, delta) = random_clock(rng);
        arrays.push(ArrayParams::new(p, random_euler(rng), tau, delta));
    }
    arrays
}

fn sample_point<R: Rng + ?Sized>(
    rng: &mut R,
    arrays: &[ArrayParams],
    mut draw: impl FnMut(&mut R) -> Vector3<f64>,
) -> Result<Vector3<f64>> {
    for _ in 0..10_000 {
        let p = draw(rng);
        if min_clearance(&p, arrays) >= CLEARANCE {
            return Ok(p);
        }
    }
    Err(Error::InvalidSpec("could not place a source away from the arrays".into()))
}

fn line_clear(points: &[Vector3<f64>], arrays: &[ArrayParams], skip: Option<usize>) -> bool {
    points.iter().all(|p| {
        let others: Vec<ArrayParams> = arrays
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(j + 2) != skip)
            .map(|(_, a)| *a)
            .collect();
        let d_ref = if skip == Some(1) { f64::INFINITY } else { p.norm() };
        others.iter().map(|a| (p - a.position).norm()).fold(d_ref, f64::min) >= CLEARANCE
    })
}

/// Builds a scenario and checks that unobservable families satisfy their
/// predicate on the generated geometry.
pub fn make_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let (n, k) = spec.size();
    if n < 2 {
        return Err(Error::InvalidSpec("at least two arrays are required".into()));
    }
    if k < 2 {
        return Err(Error::InvalidSpec("at least two emissions are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let times = emission_times(&mut rng, k);
    let (arrays, positions) = match spec.kind {
        ScenarioKind::Preset => preset_geometry(n, k)?,
        ScenarioKind::Random => {
            let arrays = random_arrays(&mut rng, n, Vector3::new(-4.0, -4.0, 0.0), Vector3::new(4.0, 4.0, 2.5));
            let lo = Vector3::new(-4.0, -4.0, 0.3);
            let hi = Vector3::new(4.0, 4.0, 2.5);
            let pos = (0..k)
                .map(|_| sample_point(&mut rng, &arrays, |r| uniform_vec(r, &lo, &hi)))
                .collect::<Result<Vec<_>>>()?;
            (arrays, pos)
        }
        kind => {
            let mut arrays = random_arrays(&mut rng, n, Vector3::new(-5.0, -5.0, -1.0), Vector3::new(5.0, 5.0, 1.0));
            let lo = Vector3::new(-6.0, -6.0, 1.5);
            let hi = Vector3::new(6.0, 6.0, 4.0);
            let pos = match kind {
                ScenarioKind::Observable | ScenarioKind::Gimbal => (0..k)
                    .map(|_| sample_point(&mut rng, &arrays, |r| uniform_vec(r, &lo, &hi)))
                    .collect::<Result<Vec<_>>>()?,
                ScenarioKind::ObservablePlanar => {
                    let h = rng.random_range(1.5..3.0);
                    (0..k)
                        .map(|_| {
                            sample_point(&mut rng, &arrays, |r| {
                                Vector3::new(r.random_range(-6.0..6.0), r.random_range(-6.0..6.0), h)
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                ScenarioKind::CoplanarReference => (0..k)
                    .map(|_| {
                        sample_point(&mut rng, &arrays, |r| {
                            let x = r.random_range(-6.0..6.0);
                            Vector3::new(x, x, r.random_range(-3.0..3.0))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
                ScenarioKind::CollinearReference => {
                    let mut attempt = 0;
                    loop {
                        let dir = uniform_vec(&mut rng, &Vector3::new(-1.0, -1.0, 0.2), &Vector3::new(1.0, 1.0, 1.0))
                            .normalize();
                        let s1 = dir * rng.random_range(0.6..1.0);
                        let pos: Vec<_> = (1..=k).map(|j| s1 * j as f64).collect();
                        if line_clear(&pos, &arrays, None) {
                            break pos;
                        }
                        attempt += 1;
                        if attempt > 10_000 {
                            return Err(Error::InvalidSpec("could not place a collinear trajectory".into()));
                        }
                    }
                }
                ScenarioKind::CollinearArray => {
                    let p2 = arrays[0].position;
                    let mut attempt = 0;
                    loop {
                        let dir = uniform_vec(&mut rng, &Vector3::new(-1.0, -1.0, 0.2), &Vector3::new(1.0, 1.0, 1.0))
                            .normalize();
                        let r1 = rng.random_range(0.6..1.0);
                        let pos: Vec<_> = (1..=k).map(|j| p2 + dir * (r1 * j as f64)).collect();
                        if line_clear(&pos, &arrays, Some(2)) {
                            break pos;
                        }
                        attempt += 1;
                        if attempt > 10_000 {
                            return Err(Error::InvalidSpec("could not place a collinear trajectory".into()));
                        }
                    }
                }
                _ => unreachable!(),
            };
            if kind == ScenarioKind::Gimbal {
                if n < 7 {
                    return Err(Error::InvalidSpec("gimbal scenario needs at least 7 arrays".into()));
                }
                for i in [4, 7] {
                    let e = arrays[i - 2].euler;
                    arrays[i - 2].euler = EulerZYX::from_raw(e.theta_x, FRAC_PI_2, e.theta_z);
                }
            }
            (arrays, pos)
        }
    };
    let scene = Scene::new(arrays, SourceTrajectory::new(positions, times)?)?;
    let scenario = Scenario::new(*spec, scene, NoiseModel::nominal(), DEFAULT_SPEED_OF_SOUND)?;
    verify_predicate(&scenario)?;
    Ok(scenario)
}

fn verify_predicate(sc: &Scenario) -> Result<()> {
    let diag = check_theorem_conditions(&sc.scene, DEFAULT_ANGLE_TOL);
    let has = |v: &Violation| diag.violations.contains(v);
    let ok = match sc.spec.kind {
        ScenarioKind::CollinearReference => has(&Violation::CollinearWithReference),
        ScenarioKind::CoplanarReference => has(&Violation::CoplanarWithReference(PlaneFamily::XAlphaY)),
        ScenarioKind::CollinearArray => has(&Violation::CollinearWithArray(2)),
        ScenarioKind::Gimbal => has(&Violation::GimbalLock(4)) && has(&Violation::GimbalLock(7)),
        _ => diag
            .violations
            .iter()
            .all(|v| matches!(v, Violation::FewerThanFiveSteps | Violation::StepCountBound)),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidSpec(alloc::format!(
            "generated `{}` geometry does not match its tag: {:?}",
            sc.spec.kind,
            diag.violations
        )))
    }
}

/// Shrinks the layout below to a 0.65 m × 0.52 m desk.
const PRESET_SCALE: f64 = 0.65;

/// Fixed desk-scale geometry: arrays spread over the desk at several
/// heights and a source looping around and over them.
fn preset_geometry(n: usize, k: usize) -> Result<(Vec<ArrayParams>, Vec<Vector3<f64>>)> {
    const LAYOUT: [([f64; 3], [f64; 3], f64, f64); 7] = [
        ([1.00, 0.05, 0.05], [0.10, -0.15, 2.60], 0.052, 4.2e-5),
        ([0.90, 0.80, 0.30], [-0.20, 0.10, -2.40], -0.071, -6.5e-5),
        ([0.05, 0.84, 0.10], [0.05, 0.25, -0.90], 0.083, 2.7e-5),
        ([0.50, 0.36, 0.50], [2.90, 0.05, 1.30], -0.034, 8.1e-5),
        ([0.25, 0.50, 0.35], [0.30, -0.40, 0.70], 0.020, -3.0e-5),
        ([0.75, 0.20, 0.40], [-0.60, 0.20, 1.90], -0.090, 5.5e-5),
        ([0.40, 0.70, 0.20], [1.00, -0.30, -2.00], 0.060, -8.8e-5),
    ];
    if n > LAYOUT.len() + 1 {
        return Err(Error::InvalidSpec(alloc::format!(
            "preset supports at most {} arrays",
            LAYOUT.len() + 1
        )));
    }
    let arrays = LAYOUT[..n - 1]
        .iter()
        .map(|(p, e, tau, delta)| {
            ArrayParams::new(Vector3::from(*p) * PRESET_SCALE, EulerZYX::new(e[0], e[1], e[2]), *tau, *delta)
        })
        .collect();
    let center = Vector3::new(0.5, 0.4, 0.35);
    let positions = (0..k)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / k as f64;
            (center + Vector3::new(0.9 * t.cos() + 0.135 * (2.0 * t).sin(), 0.7 * t.sin(), 0.4 * (1.5 * t).sin())) * PRESET_SCALE
        })
        .collect();
    Ok((arrays, positions))
}

/// How the solver's starting point is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitScheme {
    GroundTruth,
    Ours,
    /// Gaussian perturbation at 1, 3, 6 or 9 times the base noise.
    Level(u8),
    Random,
}

impl InitScheme {
    pub const ALL: [InitScheme; 7] = [
        InitScheme::GroundTruth,
        InitScheme::Ours,
        InitScheme::Level(1),
        InitScheme::Level(2),
        InitScheme::Level(3),
        InitScheme::Level(4),
        InitScheme::Random,
    ];

    /// Multiple of the base perturbation noise.
    pub fn multiplier(&self) -> Option<f64> {
        match self {
            InitScheme::GroundTruth => Some(0.0),
            InitScheme::Level(1) => Some(1.0),
            InitScheme::Level(2) => Some(3.0),
            InitScheme::Level(3) => Some(6.0),
            InitScheme::Level(4) => Some(9.0),
            _ => None,
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::GroundTruth => f.write_str("gt"),
            InitScheme::Ours => f.write_str("ours"),
            InitScheme::Level(l) => write!(f, "lv{l}"),
            InitScheme::Random => f.write_str("random"),
        }
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gt" => Ok(InitScheme::GroundTruth),
            "ours" => Ok(InitScheme::Ours),
            "random" => Ok(InitScheme::Random),
            "lv1" => Ok(InitScheme::Level(1)),
            "lv2" => Ok(InitScheme::Level(2)),
            "lv3" => Ok(InitScheme::Level(3)),
            "lv4" => Ok(InitScheme::Level(4)),
            _ => Err(Error::InvalidSpec(alloc::format!("unknown scheme `{s}`"))),
        }
    }
}

/// Base perturbation STDs: position 0.2 m, orientation 10°, offset 10 ms,
/// drift 1e-5, source 0.2 m.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PerturbationBase {
    pub position: f64,
    pub orientation_deg: f64,
    pub tau: f64,
    pub delta: f64,
    pub source: f64,
}

impl Default for PerturbationBase {
    fn default() -> Self {
        Self {
            position: 0.2,
            orientation_deg: 10.0,
            tau: 1e-2,
            delta: 1e-5,
            source: 0.2,
        }
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Adds Gaussian noise of `multiplier × base` to every component. A zero
/// multiplier returns the input unchanged without consuming randomness.
pub fn perturb_ground_truth<R: Rng + ?Sized>(
    truth: &StateVector,
    multiplier: f64,
    base: &PerturbationBase,
    rng: &mut R,
) -> StateVector {
    let mut x = truth.clone();
    if multiplier == 0.0 {
        return x;
    }
    let n = truth.n_arrays();
    let k = truth.n_steps();
    let orient = base.orientation_deg.to_radians();
    for i in 2..=n {
        let o = truth.array_offset(i);
        let v = x.values_mut();
        for c in 0..3 {
            v[o + c] += multiplier * base.position * normal(rng);
        }
        for c in 3..6 {
            v[o + c] += multiplier * orient * normal(rng);
        }
        v[o + 6] += multiplier * base.tau * normal(rng);
        v[o + 7] += multiplier * base.delta * normal(rng);
    }
    for s in 1..=k {
        let o = truth.source_offset(s);
        let v = x.values_mut();
        for c in 0..3 {
            v[o + c] += multiplier * base.source * normal(rng);
        }
    }
    x
}

/// Uniform draw: positions in a cube twice the scene bounding box, angles
/// over their full ranges, τ in ±0.2 s, δ in ±2e-4.
pub fn random_initial_state<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> StateVector {
    let (lo, hi) = scenario.bounding_box();
    let center = (lo + hi) * 0.5;
    let half = (hi - lo).max().max(1e-3);
    let cube_lo = center - Vector3::repeat(half);
    let cube_hi = center + Vector3::repeat(half);
    let n = scenario.scene.n_arrays();
    let k = scenario.scene.n_steps();
    let arrays: Vec<ArrayParams> = (2..=n)
        .map(|_| {
            let p = uniform_vec(rng, &cube_lo, &cube_hi);
            let e = random_euler(rng);
            ArrayParams::new(p, e, rng.random_range(-0.2..=0.2), rng.random_range(-2e-4..=2e-4))
        })
        .collect();
    let positions: Vec<_> = (0..k).map(|_| uniform_vec(rng, &cube_lo, &cube_hi)).collect();
    let traj = SourceTrajectory {
        positions,
        emission_times: scenario.scene.trajectory.emission_times.clone(),
    };
    crate::state::pack_state(&arrays, &traj).expect("sizes match the scenario")
}

/// Per-parameter errors of one estimate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ErrorMetrics {
    /// `‖p̂_i − p_i‖`, m, for arrays 2..N.
    pub position: Vec<f64>,
    /// `arccos((R̂_i v · R_i v)/‖v‖²)` with `v = (1,1,1)`, rad.
    pub orientation: Vec<f64>,
    /// `τ̂_i − τ_i`, s.
    pub offset: Vec<f64>,
    /// `δ̂_i − δ_i`, s/s.
    pub clock: Vec<f64>,
    /// `‖ŝ^k − s^k‖`, m.
    pub source: Vec<f64>,
}

pub fn error_metrics(estimate: &StateVector, truth: &StateVector) -> Result<ErrorMetrics> {
    if estimate.n_arrays() != truth.n_arrays() || estimate.n_steps() != truth.n_steps() {
        return Err(Error::DimensionMismatch {
            what: "estimate vs truth state",
            expected: truth.len(),
            found: estimate.len(),
        });
    }
    let v = Vector3::new(1.0, 1.0, 1.0);
    let mut m = ErrorMetrics {
        position: vec![],
        orientation: vec![],
        offset: vec![],
        clock: vec![],
        source: vec![],
    };
    for i in 2..=truth.n_arrays() {
        let (a, b) = (estimate.array(i), truth.array(i));
        m.position.push((a.position - b.position).norm());
        let ra = euler_to_rotation(&a.euler).into_inner();
        let rb = euler_to_rotation(&b.euler).into_inner();
        let c = ((ra * v).dot(&(rb * v)) / v.norm_squared()).clamp(-1.0, 1.0);
        m.orientation.push(c.acos());
        m.offset.push(a.tau - b.tau);
        m.clock.push(a.delta - b.delta);
    }
    for k in 1..=truth.n_steps() {
        m.source.push((estimate.source(k) - truth.source(k)).norm());
    }
    Ok(m)
}

/// Running sums for RMSE over all entries of all added metric sets.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RmseAccumulator {
    sums: [f64; 5],
    counts: [usize; 5],
}

impl RmseAccumulator {
    pub fn add(&mut self, m: &ErrorMetrics) {
        for (slot, vals) in [&m.position, &m.orientation, &m.offset, &m.clock, &m.source]
            .into_iter()
            .enumerate()
        {
            for e in vals.iter() {
                self.sums[slot] += e * e;
                self.counts[slot] += 1;
            }
        }
    }

    /// RMSEs of position, orientation, offset, clock, source in SI units
    /// (m, rad, s, s/s, m); NaN where nothing was added.
    pub fn rmse(&self) -> [f64; 5] {
        core::array::from_fn(|i| match self.counts[i] {
            0 => f64::NAN,
            n => (self.sums[i] / n as f64).sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MonteCarloConfig {
    pub trials: usize,
    pub seed: u64,
    pub init: InitConfig,
    pub solver: SolverConfig,
    pub perturbation: PerturbationBase,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 0,
            init: InitConfig::default(),
            solver: SolverConfig::default(),
            perturbation: PerturbationBase::default(),
        }
    }
}

/// Purpose tags of the per-trial random streams.
const STREAM_NOISE: u64 = 0;
const STREAM_PERTURB: u64 = 1;
const STREAM_INIT: u64 = 2;

/// Random stream for `(seed, trial, purpose)`.
pub fn trial_rng(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 * 4 + purpose);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub scheme: InitScheme,
    /// `None` when initialization or the solve returned an error.
    pub verdict: Option<Verdict>,
    pub iterations: usize,
    pub error: Option<Error>,
    /// Present for converged trials.
    pub metrics: Option<ErrorMetrics>,
    pub final_cost: f64,
}

impl TrialRecord {
    pub fn converged(&self) -> bool {
        self.verdict.is_some_and(|v| v.is_converged())
    }
}

/// Runs trial `trial` of a campaign.
pub fn run_trial(scenario: &Scenario, scheme: InitScheme, trial: usize, cfg: &MonteCarloConfig) -> TrialRecord {
    let truth = scenario.truth();
    let ms = scenario.noisy_measurements(&mut trial_rng(cfg.seed, trial, STREAM_NOISE));
    let mut rec = TrialRecord {
        trial,
        scheme,
        verdict: None,
        iterations: 0,
        error: None,
        metrics: None,
        final_cost: f64::NAN,
    };
    let x0 = match scheme {
        InitScheme::Ours => {
            let seed = trial_rng(cfg.seed, trial, STREAM_INIT).next_u64();
            let init_cfg = InitConfig { seed, ..cfg.init };
            match initialize(&ms, &init_cfg) {
                Ok(init) => init.state,
                Err(e) => {
                    rec.error = Some(e);
                    return rec;
                }
            }
        }
        InitScheme::Random => random_initial_state(scenario, &mut trial_rng(cfg.seed, trial, STREAM_PERTURB)),
        other => {
            let mult = other.multiplier().unwrap_or(0.0);
            perturb_ground_truth(&truth, mult, &cfg.perturbation, &mut trial_rng(cfg.seed, trial, STREAM_PERTURB))
        }
    };
    match gauss_newton(&x0, &ms, &scenario.noise, &cfg.solver) {
        Ok(res) => {
            rec.verdict = Some(res.verdict);
            rec.iterations = res.trace.len();
            rec.final_cost = res.final_cost;
            if res.verdict.is_converged() {
                rec.metrics = error_metrics(&res.state, &truth).ok();
            }
        }
        Err(e) => rec.error = Some(e),
    }
    rec
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonteCarloSummary {
    pub scheme: String,
    pub trials: usize,
    pub converged: usize,
    pub convergence_ratio: f64,
    /// Array position RMSE, m.
    pub position_m: f64,
    /// Orientation RMSE, degrees.
    pub orientation_deg: f64,
    /// Time offset RMSE, ms.
    pub offset_ms: f64,
    /// Clock drift RMSE, µs per s.
    pub clock_us: f64,
    /// Source position RMSE, m.
    pub source_m: f64,
}

/// Aggregates records in the order given.
pub fn summarize(scheme: InitScheme, records: &[TrialRecord]) -> MonteCarloSummary {
    let mut acc = RmseAccumulator::default();
    let mut converged = 0;
    for r in records {
        if r.converged() {
            converged += 1;
            if let Some(m) = &r.metrics {
                acc.add(m);
            }
        }
    }
    let [p, o, t, c, s] = acc.rmse();
    let trials = records.len();
    MonteCarloSummary {
        scheme: alloc::format!("{scheme}"),
        trials,
        converged,
        convergence_ratio: if trials > 0 { converged as f64 / trials as f64 } else { 0.0 },
        position_m: p,
        orientation_deg: o.to_degrees(),
        offset_ms: t * 1e3,
        clock_us: c * 1e6,
        source_m: s,
    }
}

/// Sequential campaign; trial `t` uses the streams of index `t`.
pub fn run_monte_carlo(scenario: &Scenario, scheme: InitScheme, cfg: &MonteCarloConfig) -> (MonteCarloSummary, Vec<TrialRecord>) {
    let records: Vec<_> = (0..cfg.trials).map(|t| run_trial(scenario, scheme, t, cfg)).collect();
    (summarize(scheme, &records), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observability::{jacobian_blocks, numerical_rank, rank_sweep, reduced_f, DEFAULT_RANK_TOL};

    #[test]
    fn every_kind_builds_and_matches_its_tag() {
        for kind in ScenarioKind::ALL {
            let sc = make_scenario(&ScenarioSpec::new(kind, 3)).unwrap();
            let (n, k) = kind.default_size();
            assert_eq!(sc.scene.n_arrays(), n);
            assert_eq!(sc.scene.n_steps(), k);
            let f = reduced_f(&jacobian_blocks(&sc.scene, sc.speed_of_sound).unwrap());
            let r = numerical_rank("F", &f, DEFAULT_RANK_TOL);
            assert_eq!(r.full_column_rank, !kind.is_unobservable(), "{kind}");
        }
    }

    #[test]
    fn collinear_sequence_and_plane() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::CollinearReference, 1)).unwrap();
        let p = &sc.scene.trajectory.positions;
        for k in 1..p.len() {
            let lambda = (k + 1) as f64 / k as f64;
            assert!((p[k] - p[k - 1] * lambda).norm() < 1e-12);
        }
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::CoplanarReference, 1)).unwrap();
        assert!(sc.scene.trajectory.positions.iter().all(|s| s.x == s.y));
    }

    #[test]
    fn scenarios_are_reproducible() {
        let spec = ScenarioSpec::new(ScenarioKind::Random, 11).with_size(4, 12);
        assert_eq!(make_scenario(&spec).unwrap(), make_scenario(&spec).unwrap());
        let other = ScenarioSpec { seed: 12, ..spec };
        assert_ne!(make_scenario(&spec).unwrap().scene, make_scenario(&other).unwrap().scene);
    }

    #[test]
    fn gimbal_needs_seven_arrays() {
        let spec = ScenarioSpec::new(ScenarioKind::Gimbal, 0).with_size(5, 10);
        assert!(matches!(make_scenario(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn gimbal_sweep_is_always_deficient() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Gimbal, 2)).unwrap();
        let sweep = rank_sweep(&sc.scene, sc.speed_of_sound, DEFAULT_RANK_TOL).unwrap();
        assert!(sweep.iter().all(|r| !r.full_column_rank));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in InitScheme::ALL {
            let name = alloc::format!("{s}");
            assert_eq!(name.parse::<InitScheme>().unwrap(), s);
        }
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("lv5".parse::<InitScheme>().is_err());
    }

    #[test]
    fn gt_perturbation_is_identity() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Preset, 0)).unwrap();
        let t = sc.truth();
        let mut rng = trial_rng(1, 0, 1);
        assert_eq!(perturb_ground_truth(&t, 0.0, &PerturbationBase::default(), &mut rng), t);
    }

    #[test]
    fn level_two_sample_std() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Preset, 0)).unwrap();
        let t = sc.truth();
        let base = PerturbationBase::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let draws = 10_000;
        let mut sq = [0.0; 3];
        for _ in 0..draws {
            let x = perturb_ground_truth(&t, 3.0, &base, &mut rng);
            let d = x.values() - t.values();
            sq[0] += d[0] * d[0];
            sq[1] += d[3] * d[3];
            sq[2] += d[6] * d[6];
        }
        let std: [f64; 3] = sq.map(|s| (s / draws as f64).sqrt());
        assert!((std[0] / (3.0 * 0.2) - 1.0).abs() < 0.03);
        assert!((std[1] / (3.0 * 10f64.to_radians()) - 1.0).abs() < 0.03);
        assert!((std[2] / (3.0 * 1e-2) - 1.0).abs() < 0.03);
    }

    #[test]
    fn metrics_zero_at_truth_and_constant_offset() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Preset, 0)).unwrap();
        let t = sc.truth();
        let m = error_metrics(&t, &t).unwrap();
        let mut acc = RmseAccumulator::default();
        acc.add(&m);
        // arccos near 1 loses about half the digits
        assert!(acc.rmse().iter().all(|v| *v < 1e-7));
        let mut shifted = t.clone();
        for i in 2..=5 {
            let o = shifted.array_offset(i);
            shifted.values_mut()[o] += 0.1;
        }
        let mut acc = RmseAccumulator::default();
        acc.add(&error_metrics(&shifted, &t).unwrap());
        assert!((acc.rmse()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn orientation_metric_matches_direct_evaluation() {
        // rotate 10° about an axis orthogonal to v
        let axis = Vector3::new(1.0, -1.0, 0.0).normalize();
        let ang = 10f64.to_radians();
        let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), ang);
        let est = crate::rotation::rotation_to_euler(&crate::rotation::Rotation3::from_matrix_unchecked(*rot.matrix())).unwrap();
        let traj = SourceTrajectory::new(vec![Vector3::new(1.0, 2.0, 3.0)], vec![0.0]).unwrap();
        let truth = crate::state::pack_state(&[ArrayParams::new(Vector3::zeros(), EulerZYX::zero(), 0.0, 0.0)], &traj).unwrap();
        let x = crate::state::pack_state(&[ArrayParams::new(Vector3::zeros(), est, 0.0, 0.0)], &traj).unwrap();
        let m = error_metrics(&x, &truth).unwrap();
        let v = Vector3::new(1.0, 1.0, 1.0);
        let direct = ((rot * v).dot(&v) / 3.0).acos();
        assert!((m.orientation[0] - direct).abs() < 1e-12);
        assert!((m.orientation[0] - ang).abs() < 1e-9);
    }

    #[test]
    fn schemes_share_noise_realizations() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Preset, 0)).unwrap();
        let a = sc.noisy_measurements(&mut trial_rng(5, 3, STREAM_NOISE));
        let b = sc.noisy_measurements(&mut trial_rng(5, 3, STREAM_NOISE));
        let c = sc.noisy_measurements(&mut trial_rng(5, 4, STREAM_NOISE));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn small_campaign_is_deterministic() {
        let sc = make_scenario(&ScenarioSpec::new(ScenarioKind::Preset, 0)).unwrap();
        let cfg = MonteCarloConfig { trials: 3, seed: 9, ..Default::default() };
        let (a, ra) = run_monte_carlo(&sc, InitScheme::Ours, &cfg);
        let (b, rb) = run_monte_carlo(&sc, InitScheme::Ours, &cfg);
        assert_eq!(ra, rb);
        assert_eq!(a.position_m.to_bits(), b.position_m.to_bits());
        assert!(a.convergence_ratio >= 0.0 && a.convergence_ratio <= 1.0);
    }
}
