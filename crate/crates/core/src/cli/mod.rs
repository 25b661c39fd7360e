//! Command-line front end: `train`, `simulate`, `decode` and `check`.

mod config;
mod io;

pub use config::{ActivationKind, ConfigError, RunConfig, TargetSpec};
pub use io::{fmt_real, read_trajectory, trajectory_table, Table, WeightsFile};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde_json::json;

use crate::decoder::decode_trajectory;
use crate::error::Error;
use crate::geometry::Pose;
use crate::learning::{initial_weights, map_jobs, train, Execution, TrainOutcome, TrainRecord};
use crate::network::{curvature_diagnostic, stability_check, Activation, Network, NetworkParams};
use crate::projection::block_deviation;
use crate::sampling::rng;

/// Blocks farther than this from the adjoint image fail `check`.
pub const MEMBERSHIP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Success = 0,
    Usage = 1,
    NotConverged = 2,
    Numerical = 3,
}

#[derive(Debug, Parser)]
#[command(name = "lieednn", version, about = "SE(3)-embedded recurrent equilibrium networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub proj_period: Option<usize>,
    #[arg(long, global = true)]
    pub ablate_projection: bool,
    /// Update connection strengths (the default).
    #[arg(long, global = true, conflicts_with = "fixed_alpha")]
    pub learn_alpha: bool,
    /// Keep connection strengths at their initial values.
    #[arg(long, global = true)]
    pub fixed_alpha: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn weights whose equilibrium matches the target.
    Train {
        #[command(flatten)]
        common: Common,
        /// `seed=LIST` or `proj_period=LIST` (comma separated); repeat to
        /// combine. Runs go to `<out>/<key>-<value>_...` in parallel, capped
        /// by `LIEEDNN_THREADS`.
        #[arg(long = "sweep", value_name = "KEY=LIST")]
        sweep: Vec<String>,
    },
    /// Integrate the dynamics from a weights file.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Decode a trajectory table into poses.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trajectory: PathBuf,
        /// Also write the base-to-tip product of the joint poses.
        #[arg(long)]
        chain: bool,
    },
    /// Report norm conditions and block membership of a weights file.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
    },
}

/// Error carrying the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub status: ExitStatus,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Usage, message: message.into() }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self { status: ExitStatus::Numerical, message: message.into() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) => Failure::usage(m),
            other => Failure::numerical(other.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

/// Parses arguments and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Usage as i32 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(status) => status as i32,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.status as i32
        }
    }
}

fn dispatch(command: Command) -> Result<ExitStatus, Failure> {
    match command {
        Command::Train { common, sweep } => {
            let config = load_config(&common)?;
            if sweep.is_empty() {
                cmd_train(&config, &common.out)
            } else {
                cmd_sweep(&config, &sweep, &common.out)
            }
        }
        Command::Simulate { common, weights } => cmd_simulate(&load_config(&common)?, &weights, &common.out),
        Command::Decode { common, trajectory, chain } => {
            cmd_decode(&load_config(&common)?, &trajectory, chain, &common.out)
        }
        Command::Check { weights, .. } => cmd_check(&weights),
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            RunConfig::from_json_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(p) = common.proj_period {
        config.proj_period = p;
    }
    if common.ablate_projection {
        config.ablate_projection = true;
    }
    if common.learn_alpha {
        config.learn_alpha = true;
    }
    if common.fixed_alpha {
        config.learn_alpha = false;
    }
    config.validate()?;
    Ok(config)
}

fn create_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Equivariant { .. } => "equivariant",
    }
}

fn params_from_file(file: &WeightsFile) -> Result<NetworkParams, Failure> {
    let dim = 6 * file.n;
    let bias = match file.bias.len() {
        1 => DVector::from_element(dim, file.bias[0]),
        l if l == dim => DVector::from_vec(file.bias.clone()),
        l => return Err(Failure::usage(format!("weights file: `bias` has {l} values, expected 1 or {dim}"))),
    };
    let activation = match file.activation.as_str() {
        "tanh" => Activation::Tanh,
        "equivariant" => Activation::equivariant(),
        other => return Err(Failure::usage(format!("weights file: unknown `activation` {other:?}"))),
    };
    let params = NetworkParams { gamma: file.gamma, mu: file.mu, bias, activation };
    params.validate()?;
    Ok(params)
}

fn train_once(config: &RunConfig) -> Result<(TrainRecord, NetworkParams, DVector<f64>), Failure> {
    let mut rng = rng(config.seed);
    let w0 = initial_weights(config.n_neurons, &mut rng);
    let cfg = config.train_config(&mut rng)?;
    let params = config.params();
    let record = train(&w0, &params, &cfg)?;
    Ok((record, params, cfg.target))
}

fn write_train_outputs(
    config: &RunConfig,
    record: &TrainRecord,
    params: &NetworkParams,
    target: &DVector<f64>,
    out: &Path,
) -> Result<(), Failure> {
    create_dir(out)?;
    let hash = config.hash();
    let seed = config.seed;

    let mut file = WeightsFile::from_weights(&record.final_weights);
    file.gamma = params.gamma;
    file.mu = params.mu;
    file.bias = params.bias.iter().copied().collect();
    file.activation = activation_name(params.activation).into();
    file.target = Some(target.iter().copied().collect());
    let path = out.join("weights.json");
    file.write(&path).map_err(|e| io_failure(&path, e))?;

    let header = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    let mut loss = Table::new(&hash, seed, &header(&["epoch", "loss", "accuracy", "max_abs_error", "lr"]));
    let mut structure = Table::new(&hash, seed, &header(&["epoch", "deviation_before", "deviation_after"]));
    for e in &record.epochs {
        loss.row(&[
            e.epoch.to_string(),
            fmt_real(e.loss),
            fmt_real(e.accuracy),
            fmt_real(e.max_abs_error),
            fmt_real(e.lr),
        ]);
        if let Some(before) = e.deviation_before {
            let after = e.deviation_after.map_or_else(|| "nan".to_string(), fmt_real);
            structure.row(&[e.epoch.to_string(), fmt_real(before), after]);
        }
    }
    let mut eq = Table::new(&hash, seed, &header(&["index", "equilibrium", "target", "error"]));
    for (k, (x, t)) in record.final_equilibrium.iter().zip(target.iter()).enumerate() {
        eq.row(&[k.to_string(), fmt_real(*x), fmt_real(*t), fmt_real(x - t)]);
    }
    for (name, table) in [("loss.csv", &loss), ("structure.csv", &structure), ("equilibrium.csv", &eq)] {
        let path = out.join(name);
        table.write(&path).map_err(|e| io_failure(&path, e))?;
    }

    let outcome = match &record.outcome {
        TrainOutcome::Converged => "converged".to_string(),
        TrainOutcome::MaxEpochs => "max-epochs".to_string(),
        TrainOutcome::Aborted(why) => format!("aborted: {why}"),
    };
    let summary = json!({
        "config_sha256": hash,
        "seed": seed,
        "outcome": outcome,
        "epochs": record.epochs.len(),
        "final_loss": record.final_loss(),
        "final_accuracy": record.final_accuracy(),
        "final_block_deviation": record.final_block_deviation,
        "final_norm1": record.final_weights.norm1(),
        "final_norm_inf": record.final_weights.norm_inf(),
        "warnings": record.warnings,
    });
    let path = out.join("summary.json");
    io::write_text(&path, &serde_json::to_string_pretty(&summary).expect("summary serializes"))
        .map_err(|e| io_failure(&path, e))
}

fn train_status(record: &TrainRecord) -> ExitStatus {
    match record.outcome {
        TrainOutcome::Converged => ExitStatus::Success,
        TrainOutcome::MaxEpochs => ExitStatus::NotConverged,
        TrainOutcome::Aborted(_) => ExitStatus::Numerical,
    }
}

fn cmd_train(config: &RunConfig, out: &Path) -> Result<ExitStatus, Failure> {
    let (record, params, target) = train_once(config)?;
    write_train_outputs(config, &record, &params, &target, out)?;
    println!(
        "{:?} after {} epochs: loss {:.3e}, accuracy {}, block deviation {:.3e}",
        record.outcome,
        record.epochs.len(),
        record.final_loss(),
        record.final_accuracy(),
        record.final_block_deviation
    );
    Ok(train_status(&record))
}

/// Expands `key=v1,v2` specs into one config per combination, each with the
/// name of its output subdirectory.
pub fn expand_sweep(base: &RunConfig, specs: &[String]) -> Result<Vec<(String, RunConfig)>, Failure> {
    let mut jobs = vec![(String::new(), base.clone())];
    for spec in specs {
        let (key, list) = spec
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--sweep {spec:?}: expected KEY=LIST")))?;
        let values: Vec<u64> = list
            .split(',')
            .map(|v| v.trim().parse::<u64>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::usage(format!("--sweep {key}: {e}")))?;
        let mut next = Vec::new();
        for (name, cfg) in &jobs {
            for &v in &values {
                let mut c = cfg.clone();
                match key {
                    "seed" => c.seed = v,
                    "proj_period" => c.proj_period = v as usize,
                    _ => return Err(Failure::usage(format!("--sweep: unknown key {key:?} (seed, proj_period)"))),
                }
                c.validate()?;
                let sep = if name.is_empty() { "" } else { "_" };
                next.push((format!("{name}{sep}{key}-{v}"), c));
            }
        }
        jobs = next;
    }
    Ok(jobs)
}

/// Thread cap from `LIEEDNN_THREADS`; unset or unparsable means no cap.
pub fn thread_cap() -> Option<usize> {
    std::env::var("LIEEDNN_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(n) = thread_cap() {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            return pool.install(f);
        }
    }
    f()
}

fn cmd_sweep(base: &RunConfig, specs: &[String], out: &Path) -> Result<ExitStatus, Failure> {
    let jobs = expand_sweep(base, specs)?;
    let results = with_thread_cap(|| {
        map_jobs(&jobs, Execution::Parallel, |(name, config)| {
            let dir = out.join(name);
            train_once(config).and_then(|(record, params, target)| {
                write_train_outputs(config, &record, &params, &target, &dir)?;
                Ok(record)
            })
        })
    });
    let mut status = ExitStatus::Success;
    for ((name, _), result) in jobs.iter().zip(results) {
        match result {
            Ok(record) => {
                println!("{name}: {:?}, {} epochs, loss {:.3e}", record.outcome, record.epochs.len(), record.final_loss());
                status = status.max(train_status(&record));
            }
            Err(f) => {
                eprintln!("{name}: error: {}", f.message);
                status = status.max(f.status);
            }
        }
    }
    Ok(status)
}

fn cmd_simulate(config: &RunConfig, weights: &Path, out: &Path) -> Result<ExitStatus, Failure> {
    let file = WeightsFile::read(weights).map_err(Failure::usage)?;
    let w = file.weights().map_err(|e| Failure::usage(format!("{}: {e}", weights.display())))?;
    let params = params_from_file(&file)?;
    let xi0 = match &config.initial_state {
        Some(_) => config.initial_state(),
        None => crate::sampling::uniform_dvector(&mut rng(config.seed), w.dim(), -1.0, 1.0),
    };
    if xi0.len() != w.dim() {
        return Err(Failure::usage(format!("initial_state has {} values, weights need {}", xi0.len(), w.dim())));
    }
    create_dir(out)?;
    let net = Network::new(&w, &params)?;
    let hash = config.hash();
    let traj = match net.integrate(&xi0, &config.integrate_options()) {
        Ok(t) => t,
        Err(Error::IntegrationFailure { t, reason, partial }) => {
            let path = out.join("trajectory.csv");
            trajectory_table(&partial, &hash, config.seed)
                .write(&path)
                .map_err(|e| io_failure(&path, e))?;
            return Err(Failure::numerical(format!("integration failed at t = {t}: {reason}")));
        }
        Err(e) => return Err(e.into()),
    };
    let path = out.join("trajectory.csv");
    trajectory_table(&traj, &hash, config.seed).write(&path).map_err(|e| io_failure(&path, e))?;

    let report = curvature_diagnostic(&traj, &w, &params)?;
    let final_state = traj.final_state().expect("trajectory is non-empty");
    let target_error = file
        .target
        .as_ref()
        .filter(|t| t.len() == final_state.len())
        .map(|t| (final_state - DVector::from_column_slice(t)).amax());
    let summary = json!({
        "config_sha256": hash,
        "seed": config.seed,
        "samples": report.samples,
        "final_residual": net.residual(final_state),
        "final_target_error": target_error,
        "r_xi": report.r_xi,
        "norm_inf_w": report.norm_inf_w,
        "lipschitz": report.lipschitz,
        "max_second_derivative": report.max_second_derivative,
        "second_derivative_bound": report.second_derivative_bound,
        "max_curvature": report.max_curvature,
        "per_component_max_curvature": report.per_component_max_curvature,
        "curvature_bound": report.curvature_bound,
        "curvature_bound_applies": report.curvature_bound_applies,
        "within_bound": report.within_bound,
    });
    let path = out.join("curvature.json");
    io::write_text(&path, &serde_json::to_string_pretty(&summary).expect("report serializes"))
        .map_err(|e| io_failure(&path, e))?;
    println!(
        "{} samples to t = {}; residual {:.3e}; max |xi''| {:.3e} (bound {:.3e})",
        traj.len(),
        traj.times.last().expect("non-empty"),
        net.residual(final_state),
        report.max_second_derivative,
        report.second_derivative_bound
    );
    if let Some(e) = target_error {
        println!("max deviation from stored target: {e:.3e}");
    }
    Ok(ExitStatus::Success)
}

fn pose_cells(g: &Pose) -> impl Iterator<Item = String> + '_ {
    let r = g.rotation().matrix();
    (0..9).map(move |k| fmt_real(r[(k / 3, k % 3)])).chain(g.translation().iter().map(|x| fmt_real(*x)))
}

fn pose_header(prefix: &str) -> impl Iterator<Item = String> + '_ {
    (0..9)
        .map(move |k| format!("{prefix}_r{}{}", k / 3, k % 3))
        .chain((0..3).map(move |k| format!("{prefix}_p{k}")))
}

fn cmd_decode(config: &RunConfig, trajectory: &Path, chain: bool, out: &Path) -> Result<ExitStatus, Failure> {
    let traj = read_trajectory(trajectory).map_err(Failure::usage)?;
    let decoded = decode_trajectory(&traj, chain);
    create_dir(out)?;
    let hash = config.hash();
    let n = decoded.n_neurons();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..n).flat_map(|i| pose_header(&format!("n{i}")).collect::<Vec<_>>()))
        .collect();
    let mut poses = Table::new(&hash, config.seed, &header);
    for (t, row) in decoded.times.iter().zip(&decoded.poses) {
        let cells: Vec<String> = std::iter::once(fmt_real(*t)).chain(row.iter().flat_map(pose_cells)).collect();
        poses.row(&cells);
    }
    let path = out.join("poses.csv");
    poses.write(&path).map_err(|e| io_failure(&path, e))?;
    if let Some(ch) = &decoded.chain {
        let header: Vec<String> = std::iter::once("t".to_string()).chain(pose_header("chain")).collect();
        let mut table = Table::new(&hash, config.seed, &header);
        for (t, g) in decoded.times.iter().zip(ch) {
            let cells: Vec<String> = std::iter::once(fmt_real(*t)).chain(pose_cells(g)).collect();
            table.row(&cells);
        }
        let path = out.join("chain.csv");
        table.write(&path).map_err(|e| io_failure(&path, e))?;
    }
    println!("decoded {} samples of {n} neurons", decoded.times.len());
    Ok(ExitStatus::Success)
}

fn cmd_check(weights: &Path) -> Result<ExitStatus, Failure> {
    let file = WeightsFile::read(weights).map_err(Failure::usage)?;
    let w = file.weights().map_err(|e| Failure::usage(format!("{}: {e}", weights.display())))?;
    let params = params_from_file(&file)?;
    let report = stability_check(&w, &params);
    let bound = params.gamma / params.mu;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    println!("norm1    {:.6e}  column sums < {bound}: {}", report.norm1, mark(report.column_ok));
    println!("norm_inf {:.6e}  row+column sums < {}: {}", report.norm_inf, 2.0 * bound, mark(report.symmetric_ok));
    let n = w.n_neurons();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = block_deviation(w.block(i, j));
            worst = worst.max(d);
            println!("block ({i},{j}) alpha {:+.6e} distance {:.3e}", w.alpha()[(i, j)], d);
        }
    }
    let structured = worst <= MEMBERSHIP_TOL;
    println!("max block distance {worst:.3e} (tolerance {MEMBERSHIP_TOL:e}): {}", mark(structured));
    Ok(if report.column_ok && report.symmetric_ok && structured {
        ExitStatus::Success
    } else {
        ExitStatus::NotConverged
    })
}
