//! Batch front-end: parses experiment configs, dispatches to the library
//! engines, and writes deterministic JSON/CSV artifacts (every JSON embeds
//! the config hash, seed, and crate version; identical config and seed give
//! byte-identical outputs).

use branchlab::bmp::skeleton::{simulate_coupled, skeleton_mean_mass, SkeletonSpec};
use branchlab::bmp::{
    expected_mass_pde, lambda_double_prime_estimate, local_survival_mc, simulate_bmp,
    survival_probability_mc as bmp_survival, total_mass_estimate, BmpConfig, LambdaOptions,
    PdeOptions,
};
use branchlab::config::{BmcFileSpec, BmpFileSpec, FkppFileSpec};
use branchlab::fkpp::{
    maximal_stationary_via_longtime, mckean_duality_check, principal_eigenvalue_1d,
    solve_parabolic, stationary_monotone, DualityOptions, EigenOptions,
};
use branchlab::law::{OffspringLaw, StateIndex};
use branchlab::repro::{criticality, intervals, mutation};
use branchlab::spectral::{
    perron_certificate, reversible_criterion_check, rho_double_prime_growth,
    spectral_radius_truncation, ReversibleOptions,
};
use branchlab::{bmc, gw, Error, RandomSource};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "branchlab", version, about = "branching-process simulation and spectral toolkit")]
struct Cli {
    /// Base seed recorded in every artifact.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Replica count override for the Monte Carlo subcommands.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (falls back to BRANCHLAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact single-type extinction probability and criticality regime.
    Gw(GwArgs),
    /// Discrete-time branching Markov chain runs.
    Bmc(BmcArgs),
    /// Spectral estimates on the chain's expectation kernel.
    Spectral(SpectralArgs),
    /// Continuous-time branching process runs.
    Bmp(BmpArgs),
    /// Reaction-diffusion solves and duality checks.
    Fkpp(FkppArgs),
    /// Built-in benchmark scenarios.
    Repro(ReproArgs),
}

#[derive(Args, Debug)]
struct GwArgs {
    /// Offspring law as JSON: {"probs": [[n, p], ...], "displacement": null}.
    #[arg(long)]
    law: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BmcMode {
    Expected,
    Simulate,
    Survival,
}

#[derive(Args, Debug)]
struct BmcArgs {
    /// Chain spec in TOML (space + per-state law table).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum)]
    mode: BmcMode,
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 100_000)]
    cap: u64,
    /// Reachable-state cap for the exact moment iteration.
    #[arg(long, default_value_t = 100_000)]
    state_cap: usize,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SpectralMode {
    Trunc,
    Growth,
    Certify,
    Reversible,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    /// Kernel source: same TOML schema as the bmc spec.
    #[arg(long)]
    kernel: PathBuf,
    #[arg(long, value_enum)]
    mode: SpectralMode,
    #[arg(long, default_value_t = 0)]
    root: usize,
    /// Truncation sizes (trunc/certify modes).
    #[arg(long, value_delimiter = ',', default_values_t = vec![9, 17, 33, 65])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    n_max: usize,
    #[arg(long, default_value_t = 4096)]
    state_cap: usize,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BmpMode {
    Simulate,
    Mass,
    Lambda,
    Survival,
    Local,
    Totalmass,
    Skeleton,
}

#[derive(Args, Debug)]
struct BmpArgs {
    /// Motion/branch/config spec in TOML.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, value_enum)]
    mode: BmpMode,
    /// Evaluation time for mass/lambda modes.
    #[arg(long, default_value_t = 10.0)]
    t: f64,
    /// Local-survival window "lo,hi".
    #[arg(long, value_delimiter = ',', num_args = 2)]
    window: Option<Vec<f64>>,
    /// Skeleton accuracy parameter.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum FkppMode {
    Parabolic,
    Stationary,
    Longtime,
    Duality,
    Eigen,
}

#[derive(Args, Debug)]
struct FkppArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum)]
    mode: FkppMode,
    #[arg(long, default_value_t = 10.0)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ReproExample {
    Mutation,
    Intervals,
    Criticality,
}

#[derive(Args, Debug)]
struct ReproArgs {
    #[arg(long, value_enum)]
    example: ReproExample,
    /// Scale index: mutation exponents run to 4^n; interval tables run to
    /// index n.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Horizons for the survival probes.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<f64>>,
    /// Criticality mode.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = -0.7)]
    kappa: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("BRANCHLAB_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(if err.is_validation() { 2 } else { 3 });
        }
    }
}

fn config_hash(parts: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(parts.to_string().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json(
    out_dir: &Path,
    name: &str,
    seed: u64,
    config: &serde_json::Value,
    result: serde_json::Value,
) -> Result<PathBuf, Error> {
    std::fs::create_dir_all(out_dir)?;
    let artifact = json!({
        "config_hash": config_hash(config),
        "seed": seed,
        "version": VERSION,
        "result": result,
    });
    let path = out_dir.join(name);
    let mut file = std::fs::File::create(&path)?;
    file.write_all(serde_json::to_string_pretty(&artifact).unwrap().as_bytes())?;
    file.write_all(b"\n")?;
    println!("wrote {}", path.display());
    Ok(path)
}

/// CSV artifacts: header row, UTF-8, '.' decimal separator, LF endings.
fn write_csv(out_dir: &Path, name: &str, header: &str, rows: &[String]) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let path = out_dir.join(name);
    let mut file = std::fs::File::create(&path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(b"\n")?;
    for row in rows {
        file.write_all(row.as_bytes())?;
        file.write_all(b"\n")?;
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    let seed = cli.seed;
    let rng = RandomSource::new(seed);
    match &cli.command {
        Command::Gw(args) => {
            let text = std::fs::read_to_string(&args.law)?;
            let law: OffspringLaw =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let report = gw::classify(&law)?;
            let config = json!({"cmd": "gw", "law": text, "seed": seed});
            write_json(
                &cli.out,
                "gw.json",
                seed,
                &config,
                serde_json::to_value(&report).unwrap(),
            )?;
            if !report.converged {
                return Err(Error::NonConvergence("extinction fixed point".into()));
            }
            Ok(())
        }
        Command::Bmc(args) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let file_spec = BmcFileSpec::parse(&text)?;
            let spec = file_spec.build(args.spec.parent())?;
            let start = StateIndex(args.start);
            let replicas = cli.replicas.unwrap_or(1000);
            let config = json!({
                "cmd": "bmc", "spec": text, "mode": format!("{:?}", args.mode),
                "start": args.start, "horizon": args.horizon, "cap": args.cap,
                "replicas": replicas, "seed": seed,
            });
            match args.mode {
                BmcMode::Expected => {
                    let counts: Vec<f64> = (0..=args.horizon)
                        .map(|n| bmc::expected_counts(&spec, start, n, args.state_cap))
                        .collect::<Result<_, _>>()?;
                    write_csv(
                        &cli.out,
                        "bmc_expected.csv",
                        "generation,expected_count",
                        &counts
                            .iter()
                            .enumerate()
                            .map(|(n, c)| format!("{n},{c}"))
                            .collect::<Vec<_>>(),
                    )?;
                    write_json(&cli.out, "bmc.json", seed, &config, json!({"expected": counts}))?;
                }
                BmcMode::Simulate => {
                    let mut rows = Vec::new();
                    for r in 0..replicas {
                        let mut gen_rng = rng.offset(r as u64).rng();
                        let trace =
                            bmc::simulate(&spec, start, args.horizon, args.cap, &mut gen_rng);
                        for (t, c) in trace.times.iter().zip(&trace.counts) {
                            rows.push(format!("{r},{t},{c}"));
                        }
                    }
                    write_csv(&cli.out, "bmc_trace.csv", "replica,generation,count", &rows)?;
                    write_json(&cli.out, "bmc.json", seed, &config, json!({"replicas": replicas}))?;
                }
                BmcMode::Survival => {
                    let est = bmc::survival_probability_mc(
                        &spec,
                        start,
                        args.horizon,
                        args.cap,
                        replicas,
                        rng,
                    );
                    write_json(
                        &cli.out,
                        "bmc.json",
                        seed,
                        &config,
                        serde_json::to_value(&est).unwrap(),
                    )?;
                }
            }
            Ok(())
        }
        Command::Spectral(args) => {
            let text = std::fs::read_to_string(&args.kernel)?;
            let kernel = BmcFileSpec::parse(&text)?.kernel(args.kernel.parent())?;
            let root = StateIndex(args.root);
            let config = json!({
                "cmd": "spectral", "kernel": text, "mode": format!("{:?}", args.mode),
                "root": args.root, "sizes": args.sizes, "n_max": args.n_max, "seed": seed,
            });
            let result = match args.mode {
                SpectralMode::Trunc => {
                    let report = spectral_radius_truncation(&kernel, root, &args.sizes)?;
                    serde_json::to_value(&report).unwrap()
                }
                SpectralMode::Growth => {
                    let est =
                        rho_double_prime_growth(&kernel, root, args.n_max, args.state_cap)?;
                    serde_json::to_value(&est).unwrap()
                }
                SpectralMode::Certify => {
                    let size = args.sizes.last().copied().unwrap_or(33);
                    let (cert, perron) = perron_certificate(&kernel, root, size)?;
                    json!({
                        "certificate": cert,
                        "perron_value": perron.rho,
                        "used_shift": perron.used_shift,
                    })
                }
                SpectralMode::Reversible => {
                    let opts = ReversibleOptions {
                        n_max: args.n_max,
                        state_cap: args.state_cap,
                        ..Default::default()
                    };
                    let report = reversible_criterion_check(&kernel, root, &opts)?;
                    serde_json::to_value(&report).unwrap()
                }
            };
            write_json(&cli.out, "spectral.json", seed, &config, result)?;
            Ok(())
        }
        Command::Bmp(args) => {
            let text = std::fs::read_to_string(&args.spec)?;
            let file_spec = BmpFileSpec::parse(&text)?;
            let motion = file_spec.motion.build()?;
            let branch = file_spec.branch.build()?;
            let mut cfg: BmpConfig = file_spec.config;
            if let Some(r) = cli.replicas {
                cfg.replicas = r;
            }
            let start = file_spec.start.unwrap_or(0.0);
            let config = json!({
                "cmd": "bmp", "spec": text, "mode": format!("{:?}", args.mode),
                "t": args.t, "seed": seed, "replicas": cfg.replicas,
            });
            let result = match args.mode {
                BmpMode::Simulate => {
                    let mut one_rng = rng.rng();
                    let run = simulate_bmp(&motion, &branch, start, &cfg, &mut one_rng)?;
                    let rows: Vec<String> = run
                        .trace
                        .times
                        .iter()
                        .zip(&run.trace.counts)
                        .map(|(t, c)| format!("{t},{c}"))
                        .collect();
                    write_csv(&cli.out, "bmp_trace.csv", "time,count", &rows)?;
                    json!({
                        "terminator": run.trace.terminator,
                        "final_count": run.trace.final_count(),
                    })
                }
                BmpMode::Mass => {
                    let v = expected_mass_pde(&motion, &branch, start, args.t, &PdeOptions::default())?;
                    json!({"t": args.t, "expected_mass": v})
                }
                BmpMode::Lambda => {
                    let est = lambda_double_prime_estimate(
                        &motion,
                        &branch,
                        start,
                        args.t,
                        rng,
                        &LambdaOptions::default(),
                    )?;
                    serde_json::to_value(&est).unwrap()
                }
                BmpMode::Survival => {
                    let est = bmp_survival(&motion, &branch, start, &cfg, rng)?;
                    serde_json::to_value(&est).unwrap()
                }
                BmpMode::Local => {
                    let w = args
                        .window
                        .as_ref()
                        .ok_or_else(|| Error::Config("local mode needs --window lo,hi".into()))?;
                    let est = local_survival_mc(&motion, &branch, start, (w[0], w[1]), &cfg, rng)?;
                    serde_json::to_value(&est).unwrap()
                }
                BmpMode::Totalmass => {
                    let est = total_mass_estimate(&motion, &branch, start, &cfg, rng)?;
                    serde_json::to_value(&est).unwrap()
                }
                BmpMode::Skeleton => {
                    let skel = SkeletonSpec::new(&branch, args.epsilon)?;
                    let mut one_rng = rng.rng();
                    let run = simulate_coupled(
                        &motion,
                        &branch,
                        &skel,
                        start,
                        cfg.horizon.round() as usize,
                        &cfg,
                        &mut one_rng,
                    )?;
                    let (mean, stderr) =
                        skeleton_mean_mass(&motion, &branch, &skel, start, cfg.replicas, cfg.dt, rng);
                    json!({
                        "spec": skel,
                        "coupled": run,
                        "violations": run.domination_violations(),
                        "mean_mass": mean,
                        "mean_mass_stderr": stderr,
                    })
                }
            };
            write_json(&cli.out, "bmp.json", seed, &config, result)?;
            Ok(())
        }
        Command::Fkpp(args) => {
            let text = std::fs::read_to_string(&args.problem)?;
            let problem = FkppFileSpec::parse(&text)?.build()?;
            let config = json!({
                "cmd": "fkpp", "problem": text, "mode": format!("{:?}", args.mode),
                "t_end": args.t_end, "dt": args.dt, "seed": seed,
            });
            let grid = problem.grid;
            let field_rows = |nodes: &[f64]| -> Vec<String> {
                nodes
                    .iter()
                    .enumerate()
                    .map(|(i, v)| format!("{},{v}", grid.node_x(i)))
                    .collect()
            };
            let result = match args.mode {
                FkppMode::Parabolic => {
                    let traj = solve_parabolic(&problem, args.t_end, args.dt, usize::MAX)?;
                    write_csv(&cli.out, "fkpp_field.csv", "x,value", &field_rows(traj.final_field()))?;
                    json!({"t_end": args.t_end, "clamp_max": traj.clamp_max})
                }
                FkppMode::Stationary => {
                    let st = stationary_monotone(&problem, None, args.tol)?;
                    write_csv(&cli.out, "fkpp_field.csv", "x,value", &field_rows(&st.field))?;
                    json!({
                        "iterations": st.iterations,
                        "residual": st.residual,
                        "lifted": st.lifted,
                        "lambda": st.lambda,
                    })
                }
                FkppMode::Longtime => {
                    let lt = maximal_stationary_via_longtime(&problem, args.t_end, args.dt, args.tol)?;
                    write_csv(&cli.out, "fkpp_field.csv", "x,value", &field_rows(&lt.field))?;
                    json!({"settled": lt.settled, "delta": lt.delta})
                }
                FkppMode::Duality => {
                    let opts = DualityOptions {
                        replicas: cli.replicas.unwrap_or(20_000),
                        ..Default::default()
                    };
                    let report = mckean_duality_check(&problem, args.t_end, &opts, rng)?;
                    serde_json::to_value(&report).unwrap()
                }
                FkppMode::Eigen => {
                    let eig = principal_eigenvalue_1d(&problem, &EigenOptions::default())?;
                    serde_json::to_value(&eig.estimate).unwrap()
                }
            };
            write_json(&cli.out, "fkpp.json", seed, &config, result)?;
            Ok(())
        }
        Command::Repro(args) => {
            let config = json!({
                "cmd": "repro", "example": format!("{:?}", args.example), "n": args.n,
                "horizons": args.horizons, "mode": args.mode, "sigma": args.sigma,
                "kappa": args.kappa, "eps": args.eps, "seed": seed,
            });
            let replicas = cli.replicas.unwrap_or(10_000);
            let result = match args.example {
                ReproExample::Mutation => {
                    let n_max = 4usize.pow(args.n as u32);
                    let counts = mutation::expected_counts(n_max)?;
                    let (window_min, window_max) = counts.window();
                    let rows: Vec<String> = counts
                        .exponents
                        .iter()
                        .enumerate()
                        .map(|(i, e)| format!("{},{e}", i + 1))
                        .collect();
                    write_csv(&cli.out, "mutation_exponents.csv", "n,exponent", &rows)?;
                    let horizons: Vec<u64> = args
                        .horizons
                        .clone()
                        .map(|h| h.iter().map(|&x| x as u64).collect())
                        .unwrap_or_else(|| vec![16, 64, 256]);
                    let sweep = mutation::survival_sweep(&horizons, replicas, rng)?;
                    json!({
                        "n_max": n_max,
                        "window_min": window_min,
                        "window_max": window_max,
                        "survival": sweep.per_horizon,
                        "horizons": sweep.horizons,
                        "switch_stats": sweep.switch_stats,
                    })
                }
                ReproExample::Intervals => {
                    let iv = intervals::IntervalConstruction::build(args.n.max(2) + 1);
                    let (at_s, at_mid) = iv.time_averages(args.n.max(1))?;
                    let fk = intervals::feynman_kac_mc(
                        args.sigma,
                        args.kappa,
                        args.n.clamp(1, 3),
                        intervals::ProbeTime::AtSPlusA,
                        replicas.min(5000),
                        0.02,
                        rng,
                    )?;
                    json!({
                        "closed_forms_hold": iv.closed_forms_hold(),
                        "avg_at_s": at_s.to_string(),
                        "avg_at_s_plus_a": at_mid.to_string(),
                        "rescaled_measure": intervals::rescaled_measure_limit().to_string(),
                        "feynman_kac": fk,
                    })
                }
                ReproExample::Criticality => {
                    let mode = match args.mode.as_deref() {
                        None | Some("branching_g") => criticality::Mode::BranchingG,
                        Some("killing_g") => criticality::Mode::KillingG,
                        Some("branching_g_minus_eps") => criticality::Mode::BranchingGMinusEps,
                        Some("killing_g_plus_eps") => criticality::Mode::KillingGPlusEps,
                        Some(other) => {
                            return Err(Error::Config(format!("unknown criticality mode {other}")))
                        }
                    };
                    let horizons =
                        args.horizons.clone().unwrap_or_else(|| vec![100.0, 200.0, 400.0]);
                    let report = criticality::survival_report(
                        mode,
                        args.eps,
                        100.0,
                        &horizons,
                        replicas.min(2000),
                        0.01,
                        2000,
                        rng,
                    )?;
                    let rows: Vec<String> = report
                        .horizons
                        .iter()
                        .zip(&report.frequencies)
                        .map(|(h, (p, se))| format!("{h},{p},{se}"))
                        .collect();
                    write_csv(&cli.out, "criticality.csv", "horizon,frequency,stderr", &rows)?;
                    serde_json::to_value(&report).unwrap()
                }
            };
            write_json(&cli.out, "repro.json", seed, &config, result)?;
            Ok(())
        }
    }
}
