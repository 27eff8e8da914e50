mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vdc_core::chain::{forward_dynamics, ChainModel};
use vdc_core::sim::{lagrangian_oracle, simulate, ScenarioConfig, TwoLinkParams};
use vdc_core::spatial::LinkModel;
use vdc_core::stability::{certify, check_joint_gains, check_link_gains, decay_audit, DecayCriteria, GainCertificate};

use config::ScenarioFile;
use output::RunManifest;

const ORACLE_TOL: f64 = 1e-9;
/// Window over which the exponential rate of the Lyapunov function is fitted.
const FIT_WINDOW_END: f64 = 1.0;
const VPF_TOL: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "vdc",
    version,
    about = "Simulate and certify decomposed manipulator controllers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a closed-loop simulation and audit it.
    Simulate(SimulateArgs),
    /// Check the gain conditions and report the attraction radius.
    CheckGains(CheckArgs),
    /// Compare the decomposed forward dynamics with the closed-form two-link model.
    OracleCompare(OracleArgs),
    /// Print a scenario as JSON, e.g. to start a new config from the builtin.
    PrintConfig(SourceArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Twodof,
}

#[derive(Args)]
struct SourceArgs {
    /// Scenario file (JSON).
    #[arg(
        long,
        value_name = "PATH",
        conflicts_with = "builtin",
        required_unless_present = "builtin"
    )]
    config: Option<PathBuf>,
    /// Use a built-in scenario instead of a file.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_name = "SEC")]
    t_end: Option<f64>,
    #[arg(long, value_name = "SEC")]
    dt: Option<f64>,
    /// Keep every N-th step in trajectory.csv.
    #[arg(long, value_name = "N")]
    stride: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Also write certificate.txt here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, value_name = "N", default_value_t = 1000)]
    samples: usize,
    #[arg(long, value_name = "N", default_value_t = 1)]
    seed: u64,
    /// Scale the last link's mass in the decomposed model only.
    #[arg(long, value_name = "FACTOR")]
    perturb_mass: Option<f64>,
}

enum Failure {
    Usage(String),
    Numerical(String),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numerical(_) => 2,
            Failure::Check(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numerical(m) | Failure::Check(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

struct Loaded {
    file: ScenarioFile,
    label: String,
    bytes: Vec<u8>,
}

fn load(source: &SourceArgs) -> Result<Loaded, Failure> {
    match (&source.config, source.builtin) {
        (Some(path), _) => {
            let bytes = std::fs::read(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Failure::Usage(format!("config not found: {}", path.display())),
                _ => Failure::Usage(format!("cannot read config {}: {e}", path.display())),
            })?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|_| Failure::Usage(format!("config {} is not UTF-8", path.display())))?;
            let file = ScenarioFile::parse(&text).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
            Ok(Loaded {
                file,
                label: path.display().to_string(),
                bytes,
            })
        }
        (None, Some(Builtin::Twodof)) => {
            let file = ScenarioFile::two_dof();
            let bytes = file.to_json().into_bytes();
            Ok(Loaded {
                file,
                label: "builtin:twodof".into(),
                bytes,
            })
        }
        (None, None) => Err(Failure::Usage("one of --config or --builtin is required".into())),
    }
}

fn build(file: &ScenarioFile) -> Result<ScenarioConfig<3>, Failure> {
    file.build().map_err(|e| Failure::Usage(format!("invalid config: {e}")))
}

fn certificate(cfg: &ScenarioConfig<3>) -> Result<GainCertificate, Failure> {
    certify(
        &cfg.chain,
        &cfg.gains.observer,
        &cfg.gains.control,
        &cfg.velocity_bounds,
        &cfg.trajectory,
    )
    .map_err(|e| Failure::Usage(format!("invalid gains: {e}")))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    output::write_file(path, contents).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn cmd_simulate(args: &SimulateArgs, argv: &[String]) -> Outcome {
    let loaded = load(&args.source)?;
    let mut file = loaded.file;
    if let Some(t) = args.t_end {
        file.integration.t_end = t;
    }
    if let Some(dt) = args.dt {
        file.integration.dt = dt;
    }
    if let Some(s) = args.stride {
        file.integration.stride = s;
    }
    let cfg = build(&file)?;
    let cert = certificate(&cfg)?;
    let manifest = RunManifest::new(argv, loaded.label, &loaded.bytes, Some(&args.out), None);
    create_dir(&args.out)?;
    write(
        &args.out.join("certificate.txt"),
        &(manifest.comment_header() + &output::certificate_report(&cert)),
    )?;

    let run = simulate(&cfg).map_err(|e| Failure::Numerical(format!("simulation failed: {e}")))?;
    let n = cfg.chain.dof();
    write(
        &args.out.join("trajectory.csv"),
        &output::trajectory_csv(&manifest, &run.records, n),
    )?;

    let criteria = DecayCriteria::from_bounds(&cert.bounds, (0.0, FIT_WINDOW_END.min(cfg.t_end)));
    let audit =
        decay_audit(&run.audit, cfg.dt, &criteria).map_err(|e| Failure::Numerical(format!("audit failed: {e}")))?;
    let velocity_bound_holds = audit
        .realized_velocity_bound
        .iter()
        .zip(&cfg.velocity_bounds)
        .all(|(r, m)| r <= m);
    let last = run.records.last().expect("at least one record");
    let report = json!({
        "manifest": manifest,
        "run": {
            "steps": cfg.steps(),
            "dt": cfg.dt,
            "t_end": cfg.t_end,
            "final_tracking_error": last.e,
            "max_abs_torque": run.max_abs_torque,
            "velocity_bound_holds": velocity_bound_holds,
        },
        "audit": audit,
        "certificate": cert,
    });
    write(
        &args.out.join("audit.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;

    println!("wrote {}", args.out.display());
    println!(
        "steps {}  final |e| {:.3e}  nu {:.3e} -> {:.3e}  audit violations {}  max VPF residual {:.3e}",
        cfg.steps(),
        last.e.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        audit.nu_initial,
        audit.nu_final,
        audit.violations,
        audit.max_vpf_residual
    );
    let mut problems = cert.violations();
    if audit.violations > 0 {
        problems.push(format!(
            "Lyapunov audit: {} steps violate the decay inequality",
            audit.violations
        ));
    }
    if audit.max_vpf_residual >= VPF_TOL {
        problems.push(format!(
            "power-flow residual {:.3e} exceeds {VPF_TOL:e}",
            audit.max_vpf_residual
        ));
    }
    if !velocity_bound_holds {
        problems.push(format!(
            "realized link velocities {:?} exceed the design bound",
            audit.realized_velocity_bound
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(problems.join("\n")))
    }
}

/// Gain conditions evaluated straight from the file, for gain sets too
/// degenerate to build observers from (e.g. `ell = 0`).
fn raw_gain_violations(file: &ScenarioFile) -> Vec<String> {
    let g = &file.gains;
    let mut out = Vec::new();
    for (i, j) in file.chain.joints.iter().enumerate() {
        let (Some(&k), Some(&ell)) = (g.k.get(i), g.ell.get(i)) else {
            continue;
        };
        match check_joint_gains(k, ell, j.rotor_inertia, j.friction.lipschitz()) {
            Ok(v) => out.extend(v.violations().map(|c| format!("joint {}: {}", i + 1, c.name))),
            Err(e) => out.push(format!("joint {}: {e}", i + 1)),
        }
    }
    for (i, l) in file.chain.links.iter().enumerate() {
        let (Some(&k_b), Some(&l_b), Some(&m_v)) = (
            g.link_control.get(i),
            g.link_observer.get(i),
            g.link_velocity_bound.get(i),
        ) else {
            continue;
        };
        let Ok(link) = LinkModel::planar(l.mass, l.com_offset, l.inertia, l.length) else {
            continue;
        };
        match check_link_gains(k_b, l_b, link.coriolis_bound(), m_v) {
            Ok(v) => out.extend(v.violations().map(|c| format!("link {}: {}", i + 1, c.name))),
            Err(e) => out.push(format!("link {}: {e}", i + 1)),
        }
    }
    out
}

fn cmd_check_gains(args: &CheckArgs, argv: &[String]) -> Outcome {
    let loaded = load(&args.source)?;
    let cfg = match build(&loaded.file) {
        Ok(cfg) => cfg,
        Err(e) => {
            let violated = raw_gain_violations(&loaded.file);
            return Err(if violated.is_empty() {
                e
            } else {
                Failure::Check(format!("violated: {}", violated.join("; ")))
            });
        }
    };
    let cert = certificate(&cfg)?;
    let manifest = RunManifest::new(argv, loaded.label, &loaded.bytes, args.out.as_deref(), None);
    let text = manifest.comment_header() + &output::certificate_report(&cert);
    print!("{text}");
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write(&dir.join("certificate.txt"), &text)?;
    }
    if cert.pass {
        Ok(())
    } else {
        Err(Failure::Check(format!("violated: {}", cert.violations().join("; "))))
    }
}

fn perturbed(chain: &ChainModel<3>, factor: f64) -> Result<ChainModel<3>, Failure> {
    let mut links = chain.links().to_vec();
    let last = links.last_mut().expect("chain has links");
    let scaled = LinkModel::new(last.mass() * factor, *last.com(), *last.inertia_com(), *last.tip())
        .map_err(|e| Failure::Usage(format!("--perturb-mass: {e}")))?
        .with_gravity(*last.gravity());
    *last = scaled;
    ChainModel::new(chain.joints().to_vec(), links).map_err(|e| Failure::Usage(format!("--perturb-mass: {e}")))
}

fn cmd_oracle_compare(args: &OracleArgs, argv: &[String]) -> Outcome {
    let loaded = load(&args.source)?;
    let cfg = build(&loaded.file)?;
    let params = TwoLinkParams::from_chain(&cfg.chain).map_err(|e| Failure::Usage(e.to_string()))?;
    let chain = match args.perturb_mass {
        Some(f) => perturbed(&cfg.chain, f)?,
        None => cfg.chain.clone(),
    };
    let manifest = RunManifest::new(argv, loaded.label, &loaded.bytes, None, Some(args.seed));
    print!("{}", manifest.comment_header());
    if args.samples == 0 {
        eprintln!("warning: no samples drawn, nothing compared");
        println!("samples 0  max deviation 0");
        return Ok(());
    }
    let pi = std::f64::consts::PI;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..args.samples {
        let q = [rng.random_range(-pi..pi), rng.random_range(-pi..pi)];
        let qd = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let tau = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let a = forward_dynamics(&chain, &q, &qd, &tau).map_err(|e| Failure::Numerical(e.to_string()))?;
        let b = lagrangian_oracle(&params, q, qd, tau);
        worst = worst.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
    }
    println!(
        "samples {}  max deviation {worst:.6e}  tolerance {ORACLE_TOL:e}",
        args.samples
    );
    if worst <= ORACLE_TOL {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max deviation {worst:.6e} exceeds {ORACLE_TOL:e}"
        )))
    }
}

fn cmd_print_config(args: &SourceArgs) -> Outcome {
    let loaded = load(args)?;
    build(&loaded.file)?;
    println!("{}", loaded.file.to_json());
    Ok(())
}

fn main() -> ExitCode {
    let mut argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    // record the program by name so manifests do not depend on install paths
    if let Some(first) = argv.first_mut() {
        *first = "vdc".into();
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &argv),
        Command::CheckGains(a) => cmd_check_gains(a, &argv),
        Command::OracleCompare(a) => cmd_oracle_compare(a, &argv),
        Command::PrintConfig(a) => cmd_print_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
