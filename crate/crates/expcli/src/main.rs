//! Command-line surface: run experiments from flat configs, render field
//! snapshots and exit sets, summarize records, and self-check the fast
//! oracles. Exit codes: 0 success, 2 configuration error, 3 runtime
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use expcli::config::{self, Config};
use expcli::records;
use expcli::render::{overlay_exit_set, render_angles};
use expcli::report::write_report;
use expcli::runner::{resolve_workers, run};
use gfflab::exploration::ExitSet;
use gfflab::gff::{FieldSampler, VectorField};
use gfflab::rngutil::stream_rng;

#[derive(Parser)]
#[command(name = "expcli", about = "lattice field experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a key=value config file.
    Run(RunArgs),
    /// Render a field snapshot (or a freshly generated one) as a hue map.
    Render(RenderArgs),
    /// Summarize persisted records into tables and plots.
    Report(ReportArgs),
    /// Quick oracle and determinism checks.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow very large windows.
    #[arg(long)]
    huge: bool,
}

#[derive(Args)]
struct RenderArgs {
    /// Existing field snapshot to render.
    #[arg(long, conflicts_with = "generate")]
    input: Option<PathBuf>,
    /// Generate a fresh field instead: "torus" or "rooted-window".
    #[arg(long)]
    generate: Option<String>,
    #[arg(long, default_value_t = 256)]
    side: i32,
    #[arg(long, default_value_t = 0.0)]
    mass: f64,
    #[arg(long, default_value_t = 2)]
    ncomp: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Two components defining the rendered angle plane, e.g. "0,1".
    #[arg(long, default_value = "0,1")]
    comps: String,
    /// Overlay a saved exit set.
    #[arg(long)]
    overlay: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Allow windows above 4096 per side (prints a memory estimate).
    #[arg(long)]
    huge: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => match load_run_config(&args) {
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
            Ok(cfg) => {
                let workers = resolve_workers(cfg.workers, args.workers);
                if !args.huge && is_huge_run(&cfg) {
                    eprintln!(
                        "window above 2048 per side: pass --huge to confirm (estimated field \
                         memory {:.1} GiB)",
                        huge_run_bytes(&cfg) as f64 / (1u64 << 30) as f64
                    );
                    return ExitCode::from(2);
                }
                match run(&cfg, workers) {
                    Ok((recs, path)) => {
                        println!(
                            "{} records appended to {} ({} workers)",
                            recs.len(),
                            path.display(),
                            workers
                        );
                        ExitCode::SUCCESS
                    }
                    Err(e) => {
                        eprintln!("runtime failure: {e:#}");
                        ExitCode::from(3)
                    }
                }
            }
        },
        Command::Render(args) => match render_cmd(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(RunError::Config(e)) => {
                eprintln!("{e}");
                ExitCode::from(2)
            }
            Err(RunError::Runtime(e)) => {
                eprintln!("runtime failure: {e:#}");
                ExitCode::from(3)
            }
        },
        Command::Report(args) => {
            let recs = match records::load(&args.records) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("cannot load records: {e}");
                    return ExitCode::from(2);
                }
            };
            match write_report(&recs, &args.out) {
                Ok(written) => {
                    for w in written {
                        println!("wrote {w}");
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("runtime failure: {e:#}");
                    ExitCode::from(3)
                }
            }
        }
        Command::Selftest => selftest(),
    }
}

fn load_run_config(args: &RunArgs) -> Result<Config, config::ConfigError> {
    let mut cfg = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(out) = &args.out {
        cfg.out = out.display().to_string();
    }
    Ok(cfg)
}

fn is_huge_run(cfg: &Config) -> bool {
    let side = cfg
        .extra
        .get("side")
        .and_then(|v| v.parse::<i64>().ok())
        .unwrap_or(0);
    side > 2048
}

fn huge_run_bytes(cfg: &Config) -> u64 {
    let side = cfg
        .extra
        .get("side")
        .and_then(|v| v.parse::<u64>().ok())
        .unwrap_or(0);
    // basis, coefficients, scratch and two field components
    side * side * 8 * 5
}

enum RunError {
    Config(String),
    Runtime(anyhow::Error),
}

fn render_cmd(args: &RenderArgs) -> Result<(), RunError> {
    let comps: Vec<usize> = args
        .comps
        .split(',')
        .filter_map(|s| s.trim().parse().ok())
        .collect();
    if comps.len() != 2 {
        return Err(RunError::Config(format!(
            "--comps must name two components, got {:?}",
            args.comps
        )));
    }
    let field: VectorField = if let Some(input) = &args.input {
        VectorField::load(input)
            .map_err(|e| RunError::Config(format!("cannot load snapshot: {e}")))?
            .0
    } else {
        let kind = args
            .generate
            .as_deref()
            .ok_or_else(|| RunError::Config("need --input or --generate".into()))?;
        if args.side > 4096 && !args.huge {
            let bytes = args.side as u64 * args.side as u64 * 8 * 5;
            return Err(RunError::Config(format!(
                "side {} needs --huge (estimated working memory {:.1} GiB)",
                args.side,
                bytes as f64 / (1u64 << 30) as f64
            )));
        }
        if args.side > 4096 {
            eprintln!(
                "large window: estimated working memory {:.1} GiB",
                (args.side as u64 * args.side as u64 * 8 * 5) as f64 / (1u64 << 30) as f64
            );
        }
        let sampler = match kind {
            "torus" => FieldSampler::massive_torus(args.side, args.mass),
            "rooted-window" => FieldSampler::rooted_window(args.side),
            other => {
                return Err(RunError::Config(format!(
                    "unknown generator {other:?}; use torus or rooted-window"
                )))
            }
        }
        .map_err(|e| RunError::Config(e.to_string()))?;
        let mut rng = stream_rng(args.seed, 0);
        sampler.sample(args.ncomp, &mut rng)
    };
    let mut raster = render_angles(&field, (comps[0], comps[1])).map_err(RunError::Runtime)?;
    if let Some(overlay) = &args.overlay {
        let set = ExitSet::load(overlay)
            .map_err(|e| RunError::Config(format!("cannot load exit set: {e}")))?;
        overlay_exit_set(&mut raster, &set).map_err(RunError::Runtime)?;
    }
    raster.save_ppm(&args.out).map_err(RunError::Runtime)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn selftest() -> ExitCode {
    let mut ok = true;
    let mut check = |name: &str, pass: bool, detail: String| {
        println!(
            "selftest {name}: {} {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        ok &= pass;
    };

    let g = gfflab::lattice::build_box(1).unwrap();
    let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
    let kernel = gfflab::harmonic::green(&g, &zs, 0.0).unwrap();
    let center = g.site((0, 0)).unwrap();
    let gv = kernel.value(center, center).unwrap();
    check(
        "green-unit-box",
        (gv - 0.25).abs() < 1e-10,
        format!("G(0,0) = {gv}"),
    );

    let exact = 1.0 - (-2.0f64).exp();
    let disc = gfflab::cable::bridge_hit_probability_discretized(1.0, 1.0, 1 << 10);
    check(
        "bridge-oracle",
        (disc - exact).abs() < 1e-3,
        format!("discretized {disc:.6} closed-form {exact:.6}"),
    );

    let q = gfflab::spin::two_spin_correlation_quadrature(1.0, 3);
    let closed = 1.0 / 1.0f64.tanh() - 1.0;
    check(
        "two-spin-quadrature",
        (q - closed).abs() < 1e-9,
        format!("quadrature {q:.9} closed-form {closed:.9}"),
    );

    let p = gfflab::spin::fk_domination_p(1.0);
    check(
        "fk-domination",
        (p - 0.761594).abs() < 1e-6,
        format!("p = {p:.6}"),
    );

    let dir = std::env::temp_dir().join("expcli_selftest");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = config::parse(&format!(
        "experiment = corr-sandwich\nseed = 5\nwindow = 3\ndistances = 1\nburnin = 30\n\
         measurements = 200\nthin = 1\nout = {}\n",
        dir.display()
    ))
    .unwrap();
    let det = match (run(&cfg, 1), run(&cfg, 3)) {
        (Ok((a, _)), Ok((b, _))) => {
            a.iter().map(|r| r.canonical_line()).collect::<Vec<_>>()
                == b.iter().map(|r| r.canonical_line()).collect::<Vec<_>>()
        }
        _ => false,
    };
    check("determinism", det, "1 vs 3 workers".into());

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
