//! Command-line front end: `simulate`, `estimate`, `cct` and `verify`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::powersys::{find_sep, inverse_transform, to_polynomial_system, transform, MachineState, NetworkData, PolySystem, SystemConfig};
use crate::roa::{estimate_roa, lyapunov_cct, sample_level_set, RoaError, RoaEstimate, RoaOptions};
use crate::shaping::{assemble_shape_matrix, pca_raw, sphere_shape, EllipsoidShape, PcaMode, DEFAULT_FLOOR_RATIO};
use crate::sim::{converges_to_sep_with, true_cct, FaultScenario, SimError, CCT_UPPER_BOUND};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed files.
    #[error("input error: {0}")]
    Input(String),
    /// The computation itself did not produce a result.
    #[error("pipeline failure: {0}")]
    Pipeline(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{ctx}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "sosroa", version, about = "Stability region estimates for power-system models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the fault-on trajectory from the pre-fault equilibrium.
    Simulate(SimulateArgs),
    /// Compute a certified stability region of the post-fault system.
    Estimate(EstimateArgs),
    /// Compare the certified clearing time with the simulated one.
    Cct(CctArgs),
    /// Check the certified region by simulating sampled states.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// System file (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fault duration in seconds.
    #[arg(long)]
    pub fault_duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PcaModeArg {
    Sqrt,
    Linear,
}

impl From<PcaModeArg> for PcaMode {
    fn from(m: PcaModeArg) -> Self {
        match m {
            PcaModeArg::Sqrt => PcaMode::Sqrt,
            PcaModeArg::Linear => PcaMode::Linear,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `sphere`, `pca`, or `file:PATH` with a JSON `{"A": [[..]]}`.
    #[arg(long, default_value = "sphere")]
    pub shape: String,
    #[arg(long, value_enum, default_value_t = PcaModeArg::Sqrt)]
    pub pca_mode: PcaModeArg,
    #[arg(long, default_value_t = 2)]
    pub deg_v: u32,
    #[arg(long, default_value_t = 2)]
    pub deg_s: u32,
    /// Relative tolerance of the level and containment bisections.
    #[arg(long, default_value_t = 1e-3)]
    pub tol_bisect: f64,
    #[arg(long, default_value_t = 5)]
    pub max_outer: usize,
    /// Fault-on horizon sampled for `pca`; defaults to the simulated CCT.
    #[arg(long)]
    pub fault_duration: Option<f64>,
    /// One-based state indices of the contour slice.
    #[arg(long, default_value = "1,2")]
    pub slice: String,
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    /// Half-width of the contour grid around the equilibrium.
    #[arg(long, default_value_t = std::f64::consts::PI)]
    pub extent: f64,
}

#[derive(Debug, Clone, Args)]
pub struct CctArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Output of `estimate`.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Bisection tolerance of the simulated CCT in seconds.
    #[arg(long, default_value_t = 1e-3)]
    pub tol_cct: f64,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Sample `{V ≤ level}`; levels above 1 leave the certified region.
    #[arg(long, default_value_t = 1.0)]
    pub level: f64,
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub parameters: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// The on-disk result of `estimate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateFile {
    pub seed: u64,
    pub config: String,
    pub shape: String,
    /// Shape matrix rows.
    pub shape_matrix: Vec<Vec<f64>>,
    /// Post-fault equilibrium in relative machine coordinates.
    pub sep: Vec<f64>,
    pub estimate: RoaEstimate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub rows: usize,
    pub diverged: bool,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub seed: u64,
    pub beta: f64,
    pub shape: String,
    pub condition_number: f64,
    pub estimate_path: PathBuf,
    pub contour_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CctOutcome {
    pub seed: u64,
    pub tol_cct: f64,
    pub cct_lyapunov: f64,
    /// Lower bound only: the trajectory never left the region in the window.
    pub lower_bound_only: bool,
    pub true_cct: Option<f64>,
    pub conservative: Option<bool>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub index: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub level: f64,
    pub samples: usize,
    pub converged: usize,
    /// `None` when no samples were drawn.
    pub fraction: Option<f64>,
    pub counterexamples: Vec<Counterexample>,
    pub diagnostics: Vec<String>,
}

/// Reads a system file; parse errors carry line and column.
pub fn load_config(path: &Path) -> Result<SystemConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

struct PostFault {
    nd: NetworkData,
    sep: MachineState,
    sys: PolySystem,
}

fn post_fault(cfg: &SystemConfig) -> Result<PostFault, CliError> {
    let pre = cfg.phase("prefault").map_err(input("prefault"))?;
    let nd = cfg.phase("postfault").map_err(input("postfault"))?;
    let pre_sep = find_sep(&pre, &DVector::zeros(pre.state_dim())).map_err(|e| CliError::Pipeline(format!("pre-fault equilibrium: {e}")))?;
    let sep = find_sep(&nd, &pre_sep).map_err(|e| CliError::Pipeline(format!("post-fault equilibrium: {e}")))?;
    let sys = to_polynomial_system(&nd, &sep).map_err(|e| CliError::Pipeline(format!("polynomial model: {e}")))?;
    Ok(PostFault { nd, sep, sys })
}

fn scenario(cfg: &SystemConfig) -> Result<FaultScenario, CliError> {
    FaultScenario::from_config(cfg, 0.0).map_err(input("fault scenario"))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn header(command: &str, seed: u64) -> String {
    format!("# sosroa {command} seed={seed}\n")
}

fn write_manifest(common: &CommonArgs, command: &str, parameters: BTreeMap<String, String>, outputs: &[PathBuf]) -> Result<(), CliError> {
    let m = RunManifest {
        command: command.into(),
        config: common.config.display().to_string(),
        seed: common.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        parameters,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write(&common.out.join("manifest.json"), &serde_json::to_string_pretty(&m).expect("manifest serializes"))
}

fn params<const N: usize>(kv: [(&str, String); N]) -> BTreeMap<String, String> {
    kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<SimulateReport, CliError> {
    let c = &args.common;
    if !(args.fault_duration >= 0.0) || !args.fault_duration.is_finite() {
        return Err(CliError::Input(format!("--fault-duration must be non-negative, got {}", args.fault_duration)));
    }
    let cfg = load_config(&c.config)?;
    let sc = scenario(&cfg)?;
    let post_sep = sc.postfault_sep().map_err(|e| CliError::Pipeline(format!("post-fault equilibrium: {e}")))?;
    let traj = sc.fault_trajectory(args.fault_duration).map_err(|e| CliError::Pipeline(format!("simulation: {e}")))?;
    let z = traj.to_csv_z(&post_sep).map_err(|e| CliError::Pipeline(format!("transform: {e}")))?;
    prepare_out(&c.out)?;
    let px = c.out.join("trajectory_x.csv");
    let pz = c.out.join("trajectory_z.csv");
    let h = header("simulate", c.seed);
    write(&px, &(h.clone() + &traj.to_csv()))?;
    write(&pz, &(h + &z))?;
    let outputs = vec![px, pz];
    write_manifest(c, "simulate", params([("fault_duration", args.fault_duration.to_string())]), &outputs)?;
    Ok(SimulateReport { seed: c.seed, rows: traj.times.len(), diverged: traj.diverged, outputs })
}

fn parse_slice(s: &str, dim: usize) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Input(format!("--slice expects two distinct indices in 1..={dim}, got {s:?}"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(bad());
    }
    let i: usize = parts[0].parse().map_err(|_| bad())?;
    let j: usize = parts[1].parse().map_err(|_| bad())?;
    if i == 0 || j == 0 || i > dim || j > dim || i == j {
        return Err(bad());
    }
    Ok((i - 1, j - 1))
}

fn build_shape(args: &EstimateArgs, cfg: &SystemConfig, pf: &PostFault) -> Result<(EllipsoidShape, Vec<String>), CliError> {
    let n = pf.sys.nvars;
    let mut notes = Vec::new();
    let shape = match args.shape.as_str() {
        "sphere" => sphere_shape(n),
        "pca" => {
            let sc = scenario(cfg)?;
            let horizon = match args.fault_duration {
                Some(t) if t > 0.0 && t.is_finite() => t,
                Some(t) => return Err(CliError::Input(format!("--fault-duration must be positive, got {t}"))),
                None => {
                    let t = true_cct(&sc, 1e-3).map_err(|e| CliError::Pipeline(format!("PCA horizon from simulated CCT: {e}")))?;
                    notes.push(format!("PCA horizon set to the simulated CCT {t:.4} s"));
                    t
                }
            };
            let traj = sc.fault_trajectory(horizon).map_err(|e| CliError::Pipeline(format!("simulation: {e}")))?;
            let tz = traj.to_z(&pf.sep).map_err(|e| CliError::Pipeline(format!("transform: {e}")))?;
            let spec = pca_raw(&tz.states).map_err(|e| CliError::Pipeline(format!("PCA: {e}")))?;
            assemble_shape_matrix(&spec, args.pca_mode.into(), DEFAULT_FLOOR_RATIO).map_err(|e| CliError::Pipeline(format!("shape: {e}")))?
        }
        other => match other.strip_prefix("file:") {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
                EllipsoidShape::from_json(&text).map_err(|e| CliError::Input(format!("{path}: {e}")))?
            }
            None => return Err(CliError::Input(format!("unknown --shape {other:?}; use sphere, pca or file:PATH"))),
        },
    };
    if shape.dim() != n {
        return Err(CliError::Input(format!("shape has dimension {}, system has {n}", shape.dim())));
    }
    Ok((shape, notes))
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateReport, CliError> {
    let c = &args.common;
    if args.resolution < 2 {
        return Err(CliError::Input(format!("--resolution must be at least 2, got {}", args.resolution)));
    }
    if !(args.extent > 0.0) || !args.extent.is_finite() {
        return Err(CliError::Input(format!("--extent must be positive, got {}", args.extent)));
    }
    let cfg = load_config(&c.config)?;
    let pf = post_fault(&cfg)?;
    let (a, b) = parse_slice(&args.slice, pf.sep.len())?;
    let opts = RoaOptions {
        deg_v: args.deg_v,
        deg_s: args.deg_s,
        tol_beta: args.tol_bisect,
        tol_c: args.tol_bisect,
        max_outer: args.max_outer,
        ..RoaOptions::default()
    };
    opts.validate().map_err(input("options"))?;
    prepare_out(&c.out)?;
    let (shape, notes) = build_shape(args, &cfg, &pf)?;
    let mut est = match estimate_roa(&pf.sys, &shape, &opts) {
        Ok(e) => e,
        Err(e) => {
            let mut text = header("estimate", c.seed);
            text.push_str(&format!("estimate failed: {e}\n"));
            if matches!(e, RoaError::NoLocalCertificate) {
                text.push_str("hint: raise --deg-v or --deg-s\n");
            }
            write(&c.out.join("diagnostics.txt"), &text)?;
            return Err(CliError::Pipeline(e.to_string()));
        }
    };
    est.diagnostics.extend(notes);
    let file = EstimateFile {
        seed: c.seed,
        config: c.config.display().to_string(),
        shape: args.shape.clone(),
        shape_matrix: shape.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        sep: pf.sep.iter().copied().collect(),
        estimate: est,
    };
    let pe = c.out.join("estimate.json");
    write(&pe, &serde_json::to_string_pretty(&file).expect("estimate serializes"))?;

    let mut csv = header("estimate", c.seed);
    csv.push_str("axis1,axis2,V\n");
    let r = args.resolution;
    let step = 2.0 * args.extent / (r - 1) as f64;
    for i in 0..r {
        for j in 0..r {
            let mut x = pf.sep.clone();
            x[a] += -args.extent + step * i as f64;
            x[b] += -args.extent + step * j as f64;
            let z = transform(&x, &pf.sep).map_err(|e| CliError::Pipeline(format!("transform: {e}")))?;
            csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", x[a], x[b], file.estimate.v.eval(z.as_slice())));
        }
    }
    let pc = c.out.join("contour.csv");
    write(&pc, &csv)?;
    let outputs = vec![pe.clone(), pc.clone()];
    write_manifest(
        c,
        "estimate",
        params([
            ("shape", args.shape.clone()),
            ("pca_mode", format!("{:?}", args.pca_mode).to_lowercase()),
            ("deg_v", args.deg_v.to_string()),
            ("deg_s", args.deg_s.to_string()),
            ("tol_bisect", args.tol_bisect.to_string()),
            ("max_outer", args.max_outer.to_string()),
            ("slice", args.slice.clone()),
            ("resolution", r.to_string()),
            ("extent", args.extent.to_string()),
        ]),
        &outputs,
    )?;
    Ok(EstimateReport {
        seed: c.seed,
        beta: file.estimate.beta,
        shape: args.shape.clone(),
        condition_number: shape.condition_number(),
        estimate_path: pe,
        contour_path: pc,
    })
}

pub fn load_estimate(path: &Path) -> Result<EstimateFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}

fn matching_estimate(path: &Path, pf: &PostFault) -> Result<EstimateFile, CliError> {
    let est = load_estimate(path)?;
    let n = pf.sys.nvars;
    if est.estimate.v.nvars() != n || est.sep.len() != pf.sep.len() {
        return Err(CliError::Input(format!(
            "estimate has {} variables, system has {n}; was it computed for another config?",
            est.estimate.v.nvars()
        )));
    }
    let drift = est.sep.iter().zip(pf.sep.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if drift > 1e-6 {
        return Err(CliError::Input(format!("estimate equilibrium differs from the config's by {drift:.3e}")));
    }
    Ok(est)
}

pub fn cmd_cct(args: &CctArgs) -> Result<CctOutcome, CliError> {
    let c = &args.common;
    if !(args.tol_cct > 0.0) {
        return Err(CliError::Input(format!("--tol-cct must be positive, got {}", args.tol_cct)));
    }
    let cfg = load_config(&c.config)?;
    let pf = post_fault(&cfg)?;
    let est = matching_estimate(&args.estimate, &pf)?;
    let sc = scenario(&cfg)?;
    let traj = sc.fault_trajectory(CCT_UPPER_BOUND).map_err(|e| CliError::Pipeline(format!("simulation: {e}")))?;
    let tz = traj.to_z(&pf.sep).map_err(|e| CliError::Pipeline(format!("transform: {e}")))?;
    let rep = lyapunov_cct(&est.estimate.v, &tz);
    let mut diagnostics: Vec<String> = rep.diagnostic.iter().cloned().collect();
    let truth = match true_cct(&sc, args.tol_cct) {
        Ok(t) => Some(t),
        Err(e @ (SimError::CctAboveBound(_) | SimError::UnstableAtZero)) => {
            diagnostics.push(format!("simulated CCT unavailable: {e}"));
            None
        }
        Err(e) => return Err(CliError::Pipeline(format!("simulated CCT: {e}"))),
    };
    prepare_out(&c.out)?;
    let mut trace = header("cct", c.seed);
    trace.push_str("t,V\n");
    for (t, v) in &rep.v_trace {
        trace.push_str(&format!("{t:.16e},{v:.16e}\n"));
    }
    let pt = c.out.join("v_trace.csv");
    write(&pt, &trace)?;
    let outcome = CctOutcome {
        seed: c.seed,
        tol_cct: args.tol_cct,
        cct_lyapunov: rep.cct_lyapunov,
        lower_bound_only: rep.lower_bound_only,
        true_cct: truth,
        conservative: truth.map(|t| rep.cct_lyapunov <= t + args.tol_cct),
        diagnostics,
    };
    let pr = c.out.join("cct.json");
    write(&pr, &serde_json::to_string_pretty(&outcome).expect("report serializes"))?;
    write_manifest(
        c,
        "cct",
        params([("estimate", args.estimate.display().to_string()), ("tol_cct", args.tol_cct.to_string())]),
        &[pt, pr],
    )?;
    Ok(outcome)
}

/// Per-sample outcome; `None` means convergence.
fn check_sample(z: &DVector<f64>, pf: &PostFault, sc_t: f64, eps: f64, control: crate::sim::Control) -> Result<Option<Vec<f64>>, CliError> {
    let x = inverse_transform(z, &pf.sep).map_err(|e| CliError::Pipeline(format!("inverse transform: {e}")))?;
    let ok = converges_to_sep_with(&x, &pf.nd, &pf.sep, sc_t, eps, control).map_err(|e| CliError::Pipeline(format!("simulation: {e}")))?;
    Ok(if ok { None } else { Some(x.iter().copied().collect()) })
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<VerifyReport, CliError> {
    let c = &args.common;
    if !(args.level > 0.0) || !args.level.is_finite() {
        return Err(CliError::Input(format!("--level must be positive, got {}", args.level)));
    }
    let cfg = load_config(&c.config)?;
    let pf = post_fault(&cfg)?;
    let est = matching_estimate(&args.estimate, &pf)?;
    prepare_out(&c.out)?;
    let mut report = VerifyReport {
        seed: c.seed,
        level: args.level,
        samples: 0,
        converged: 0,
        fraction: None,
        counterexamples: Vec::new(),
        diagnostics: Vec::new(),
    };
    if args.samples > 0 {
        let points = match sample_level_set(&pf.sys, &est.estimate.v, args.level, args.samples, c.seed) {
            Ok(p) => p,
            Err(e @ RoaError::Starvation { .. }) => {
                let msg = format!("{e}; the region is thin relative to its bounding box, sample along a 2-D slice instead");
                report.diagnostics.push(msg.clone());
                write(&c.out.join("verify.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
                return Err(CliError::Pipeline(msg));
            }
            Err(e) => return Err(CliError::Pipeline(e.to_string())),
        };
        let defaults = FaultScenario::new(pf.nd.clone(), pf.nd.clone(), pf.nd.clone(), 0.0);
        let (t_max, eps, control) = (defaults.t_max_post, defaults.eps_c, defaults.control);
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(points.len()).max(1);
        let chunk = points.len().div_ceil(threads);
        let results: Vec<Result<Option<Vec<f64>>, CliError>> = std::thread::scope(|s| {
            let handles: Vec<_> = points
                .chunks(chunk)
                .map(|part| {
                    let pf = &pf;
                    s.spawn(move || part.iter().map(|z| check_sample(z, pf, t_max, eps, control)).collect::<Vec<_>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
        });
        report.samples = points.len();
        for (index, (z, r)) in points.iter().zip(results).enumerate() {
            match r? {
                None => report.converged += 1,
                Some(x) => report.counterexamples.push(Counterexample { index, z: z.iter().copied().collect(), x }),
            }
        }
        report.fraction = Some(report.converged as f64 / report.samples as f64);
    }
    let pr = c.out.join("verify.json");
    write(&pr, &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    write_manifest(
        c,
        "verify",
        params([
            ("estimate", args.estimate.display().to_string()),
            ("samples", args.samples.to_string()),
            ("level", args.level.to_string()),
        ]),
        &[pr],
    )?;
    Ok(report)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let res = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|r| {
            println!("seed={} rows={} diverged={}", r.seed, r.rows, r.diverged);
            for p in &r.outputs {
                println!("wrote {}", p.display());
            }
        }),
        Command::Estimate(a) => cmd_estimate(a).map(|r| {
            println!("seed={} shape={} cond(A)={:.4e} beta={:.6}", r.seed, r.shape, r.condition_number, r.beta);
            println!("wrote {}", r.estimate_path.display());
            println!("wrote {}", r.contour_path.display());
        }),
        Command::Cct(a) => cmd_cct(a).map(|r| {
            let t = r.true_cct.map_or("n/a".to_string(), |t| format!("{t:.4}"));
            println!("seed={} tol_cct={} cct_lyapunov={:.4} true_cct={t}", r.seed, r.tol_cct, r.cct_lyapunov);
            for d in &r.diagnostics {
                println!("note: {d}");
            }
        }),
        Command::Verify(a) => cmd_verify(a).map(|r| {
            let f = r.fraction.map_or("n/a".to_string(), |f| format!("{f:.4}"));
            println!("seed={} level={} samples={} converged={} fraction={f}", r.seed, r.level, r.samples, r.converged);
            for ce in &r.counterexamples {
                println!("counterexample {}: z={:?} x={:?}", ce.index, ce.z, ce.x);
            }
        }),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
