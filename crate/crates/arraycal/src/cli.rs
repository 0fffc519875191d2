//! Command line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use arraycal_core::init::{initialize, InitConfig};
use arraycal_core::observability::rank_sweep;
use arraycal_core::simkit::{make_scenario, trial_rng, InitScheme, ScenarioKind, ScenarioSpec};
use arraycal_core::solver::gauss_newton;
use arraycal_core::state::{Scene, StateVector};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{Config, CONFIG_ENV};
use crate::dataset::{Dataset, StateRecord};
use crate::error::{exit, Error, Result};
use crate::montecarlo::{run_parallel, write_summary_csv, write_trials_jsonl};
use crate::report::{write_trace_csv, CalibrationReport, ErrorRecord, EvaluatedAt, ObservabilityRecord, TraceRow};

#[derive(Debug, Parser)]
#[command(name = "arraycal", version, about = "Calibrate asynchronous microphone arrays from a moving sound source")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed for scenario generation, noise and initialization.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON config file.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// One of observable, observable-planar, collinear-ref, coplanar-ref,
    /// collinear-array, gimbal, preset, random.
    #[arg(long, value_parser = parse_kind)]
    scenario: Option<ScenarioKind>,
    /// Number of arrays N (scenario default when omitted).
    #[arg(long)]
    arrays: Option<usize>,
    /// Number of emissions K (scenario default when omitted).
    #[arg(long)]
    steps: Option<usize>,
}

impl ScenarioArgs {
    fn spec(&self, kind: ScenarioKind, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            n_arrays: self.arrays,
            n_steps: self.steps,
            seed,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset with ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Write exact measurements (the noise block still holds the weighting model).
        #[arg(long)]
        noise_free: bool,
    },
    /// Compute the initial guess only.
    Init {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Initialize (unless --initial-state is given) and refine.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// State file or earlier report to start from.
        #[arg(long)]
        initial_state: Option<PathBuf>,
        /// Iteration trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Rank of J and F plus the necessary-condition checks.
    Observability {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "scenario")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Rank of F over the first k steps, k = 1..K, as CSV.
    Ranksweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "scenario")]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Monte Carlo over initialization schemes; summary CSV.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Comma-separated list of gt, ours, lv1..lv4, random, or `all`.
        #[arg(long, default_value = "all")]
        scheme: String,
        /// Upper bound on worker threads.
        #[arg(long)]
        threads: Option<usize>,
        /// Per-trial JSON lines.
        #[arg(long)]
        trials_log: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    s.parse::<ScenarioKind>().map_err(|e| e.to_string())
}

fn parse_schemes(s: &str) -> Result<Vec<InitScheme>> {
    if s == "all" {
        return Ok(InitScheme::ALL.to_vec());
    }
    s.split(',')
        .map(|p| {
            p.trim().parse::<InitScheme>().map_err(|_| {
                Error::Usage(format!("unknown scheme `{}`; expected gt, ours, lv1..lv4, random or all", p.trim()))
            })
        })
        .collect()
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializes");
    s.push('\n');
    s
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::load(common.config.as_deref())?;
    cfg.init.seed = common.seed;
    Ok(cfg)
}

/// Runs the command line with `args` (including the program name).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = e.remedy() {
                eprintln!("hint: {hint}");
            }
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate {
            common,
            scenario,
            noise_free,
        } => simulate(&common, &scenario, noise_free),
        Command::Init { common, dataset } => init(&common, &dataset),
        Command::Calibrate {
            common,
            dataset,
            initial_state,
            trace,
        } => calibrate(&common, &dataset, initial_state.as_deref(), trace.as_deref()),
        Command::Observability {
            common,
            dataset,
            scenario,
        } => observability(&common, dataset.as_deref(), &scenario),
        Command::Ranksweep {
            common,
            dataset,
            scenario,
        } => ranksweep(&common, dataset.as_deref(), &scenario),
        Command::Montecarlo {
            common,
            scenario,
            trials,
            scheme,
            threads,
            trials_log,
        } => montecarlo(&common, &scenario, trials, &scheme, threads, trials_log.as_deref()),
    }
}

/// Simulated dataset for `spec`; noise comes from stream 0 of trial 0.
pub fn simulate_dataset(spec: &ScenarioSpec, noise_free: bool) -> Result<Dataset> {
    let sc = make_scenario(spec)?;
    let measurements = if noise_free {
        sc.clean_measurements().clone()
    } else {
        sc.noisy_measurements(&mut trial_rng(spec.seed, 0, 0))
    };
    Ok(Dataset {
        measurements,
        noise: sc.noise,
        ground_truth: Some(sc.scene.clone()),
    })
}

fn simulate(common: &Common, args: &ScenarioArgs, noise_free: bool) -> Result<i32> {
    load_config(common)?;
    let kind = args.scenario.unwrap_or(ScenarioKind::Preset);
    let ds = simulate_dataset(&args.spec(kind, common.seed), noise_free)?;
    emit(common.output.as_deref(), &ds.to_json())?;
    Ok(exit::SUCCESS)
}

fn observability_for(ds: &Dataset, estimate: Option<(&StateVector, EvaluatedAt)>, cfg: &Config) -> Option<ObservabilityRecord> {
    let c = ds.measurements.speed_of_sound;
    let (scene, at) = match (&ds.ground_truth, estimate) {
        (Some(gt), _) => (gt.clone(), EvaluatedAt::GroundTruth),
        (None, Some((x, at))) => (Scene::from_state(x, &ds.measurements.emission_times).ok()?, at),
        (None, None) => return None,
    };
    ObservabilityRecord::evaluate(&scene, c, at, cfg).ok()
}

fn print_diagnosis(obs: &Option<ObservabilityRecord>) {
    if let Some(o) = obs {
        for m in &o.messages {
            eprintln!("observability: {m}");
        }
        if !o.is_observable() {
            eprintln!(
                "observability: J has rank {} of {} columns",
                o.jacobian.rank, o.jacobian.cols
            );
        }
    }
}

fn init(common: &Common, path: &Path) -> Result<i32> {
    let cfg = load_config(common)?;
    let ds = Dataset::load(path)?;
    let mut rep = CalibrationReport::new("init", common.seed, cfg, Some(path));
    let code = match initialize(&ds.measurements, &cfg.init) {
        Ok(init) => {
            rep.initial_state = Some(StateRecord::from_state(&init.state));
            if let Some(gt) = &ds.ground_truth {
                rep.initial_errors = Some(ErrorRecord::compare(&init.state, &gt.to_state())?);
            }
            rep.observability = observability_for(&ds, Some((&init.state, EvaluatedAt::InitialState)), &cfg);
            exit::SUCCESS
        }
        Err(e) => {
            let err = Error::from(e);
            eprintln!("error: {err}");
            rep.failure = Some(err.to_string());
            rep.observability = observability_for(&ds, None, &cfg);
            err.exit_code()
        }
    };
    print_diagnosis(&rep.observability);
    emit(common.output.as_deref(), &rep.to_json())?;
    Ok(code)
}

fn load_initial_state(path: &Path, ds: &Dataset) -> Result<StateVector> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record = match serde_json::from_str::<StateRecord>(&text) {
        Ok(r) => r,
        Err(state_err) => match CalibrationReport::from_json(&text) {
            Ok(rep) => rep
                .final_state
                .or(rep.initial_state)
                .ok_or_else(|| Error::SchemaMismatch(format!("{}: report holds no state", path.display())))?,
            Err(_) => return Err(Error::parse(path.display().to_string(), &state_err)),
        },
    };
    record.check_shape(ds.n_arrays(), ds.n_steps(), "initial state")?;
    Ok(record.to_scene(&ds.measurements.emission_times)?.to_state())
}

fn calibrate(common: &Common, path: &Path, initial: Option<&Path>, trace: Option<&Path>) -> Result<i32> {
    let cfg = load_config(common)?;
    let ds = Dataset::load(path)?;
    let truth = ds.ground_truth.as_ref().map(Scene::to_state);
    let mut rep = CalibrationReport::new("calibrate", common.seed, cfg, Some(path));
    let x0 = match initial {
        Some(p) => load_initial_state(p, &ds)?,
        None => match initialize(&ds.measurements, &cfg.init) {
            Ok(init) => init.state,
            Err(e) => {
                let err = Error::from(e);
                eprintln!("error: {err}");
                rep.failure = Some(err.to_string());
                rep.observability = observability_for(&ds, None, &cfg);
                print_diagnosis(&rep.observability);
                emit(common.output.as_deref(), &rep.to_json())?;
                emit_trace(trace, &rep.trace)?;
                return Ok(err.exit_code());
            }
        },
    };
    rep.initial_state = Some(StateRecord::from_state(&x0));
    if let Some(t) = &truth {
        rep.initial_errors = Some(ErrorRecord::compare(&x0, t)?);
    }
    let code = match gauss_newton(&x0, &ds.measurements, &ds.noise, &cfg.solver) {
        Ok(res) => {
            rep.verdict = Some(res.verdict);
            rep.iterations = res.trace.len();
            rep.final_cost = res.final_cost.is_finite().then_some(res.final_cost);
            rep.trace = res.trace.iter().map(TraceRow::from).collect();
            rep.final_state = Some(StateRecord::from_state(&res.state));
            if let Some(t) = &truth {
                rep.final_errors = Some(ErrorRecord::compare(&res.state, t)?);
            }
            rep.observability = observability_for(&ds, Some((&res.state, EvaluatedAt::FinalState)), &cfg);
            eprintln!("verdict: {:?} after {} iterations", res.verdict, rep.iterations);
            if res.verdict.is_converged() {
                exit::SUCCESS
            } else {
                exit::DIVERGED
            }
        }
        Err(e) => {
            let err = Error::from(e);
            eprintln!("error: {err}");
            rep.failure = Some(err.to_string());
            rep.observability = observability_for(&ds, Some((&x0, EvaluatedAt::InitialState)), &cfg);
            err.exit_code()
        }
    };
    print_diagnosis(&rep.observability);
    emit(common.output.as_deref(), &rep.to_json())?;
    emit_trace(trace, &rep.trace)?;
    Ok(code)
}

fn emit_trace(path: Option<&Path>, trace: &[TraceRow]) -> Result<()> {
    match path {
        Some(p) => write_trace_csv(fs::File::create(p).map_err(|e| Error::io(p, e))?, trace),
        None => Ok(()),
    }
}

/// Scene to analyze: the scenario's truth, the dataset's ground truth, or
/// the initialized estimate when the dataset has none.
fn analysis_scene(
    common: &Common,
    cfg: &InitConfig,
    dataset: Option<&Path>,
    args: &ScenarioArgs,
) -> Result<(Scene, f64, EvaluatedAt)> {
    match dataset {
        Some(p) => {
            let ds = Dataset::load(p)?;
            let c = ds.measurements.speed_of_sound;
            match ds.ground_truth {
                Some(gt) => Ok((gt, c, EvaluatedAt::GroundTruth)),
                None => {
                    let init = initialize(&ds.measurements, cfg)?;
                    Ok((
                        Scene::new(init.arrays, init.trajectory)?,
                        c,
                        EvaluatedAt::InitialState,
                    ))
                }
            }
        }
        None => {
            let kind = args.scenario.unwrap_or(ScenarioKind::Observable);
            let sc = make_scenario(&args.spec(kind, common.seed))?;
            Ok((sc.scene, sc.speed_of_sound, EvaluatedAt::GroundTruth))
        }
    }
}

fn observability(common: &Common, dataset: Option<&Path>, args: &ScenarioArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    let (scene, c, at) = analysis_scene(common, &cfg.init, dataset, args)?;
    let rec = ObservabilityRecord::evaluate(&scene, c, at, &cfg)?;
    print_diagnosis(&Some(rec.clone()));
    emit(common.output.as_deref(), &to_json(&rec))?;
    Ok(exit::SUCCESS)
}

#[derive(Debug, Serialize)]
struct SweepRow {
    k: usize,
    rows: usize,
    cols: usize,
    rank: usize,
    full: bool,
    smallest_retained: Option<f64>,
    largest_discarded: Option<f64>,
}

fn ranksweep(common: &Common, dataset: Option<&Path>, args: &ScenarioArgs) -> Result<i32> {
    let cfg = load_config(common)?;
    let (scene, c, _) = analysis_scene(common, &cfg.init, dataset, args)?;
    let sweep = rank_sweep(&scene, c, cfg.rank_tolerance)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, r) in sweep.iter().enumerate() {
        w.serialize(SweepRow {
            k: i + 1,
            rows: r.rows,
            cols: r.cols,
            rank: r.numerical_rank,
            full: r.full_column_rank,
            smallest_retained: r.smallest_retained_sv,
            largest_discarded: r.largest_discarded_sv,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    emit(common.output.as_deref(), &String::from_utf8_lossy(&bytes))?;
    Ok(exit::SUCCESS)
}

fn montecarlo(
    common: &Common,
    args: &ScenarioArgs,
    trials: usize,
    schemes: &str,
    threads: Option<usize>,
    trials_log: Option<&Path>,
) -> Result<i32> {
    let cfg = load_config(common)?;
    let schemes = parse_schemes(schemes)?;
    let kind = args.scenario.unwrap_or(ScenarioKind::Preset);
    let sc = make_scenario(&args.spec(kind, common.seed))?;
    let mc = cfg.monte_carlo(trials, common.seed);
    let mut summaries = Vec::new();
    let mut all = Vec::new();
    for scheme in schemes {
        let (s, recs) = run_parallel(&sc, scheme, &mc, threads)?;
        eprintln!(
            "{}: converged {}/{}, array position RMSE {:.4e} m, source RMSE {:.4e} m",
            s.scheme, s.converged, s.trials, s.position_m, s.source_m
        );
        summaries.push(s);
        all.extend(recs);
    }
    if let Some(p) = trials_log {
        let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
        write_trials_jsonl(std::io::BufWriter::new(f), &all)?;
    }
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &summaries)?;
    emit(common.output.as_deref(), &String::from_utf8_lossy(&buf))?;
    Ok(exit::SUCCESS)
}
