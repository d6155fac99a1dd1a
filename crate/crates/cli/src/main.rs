//! `qdos`: analyze, simulate, sweep and reproduce from a TOML configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qdos_core::analysis::{
    classify_run, frontier_line, sweep_frontier, verdict, FrontierLine, RunClass, StabilityVerdict,
};
use qdos_core::coder::SchemeVariant;
use qdos_core::config::{AttackSpec, AxisSpec, BudgetSpec, Config, Setup, SweepSpec};
use qdos_core::numerics::spectral_radius;
use qdos_core::plantloop::{run_closed_loop, SimTrace};
use qdos_core::zoomout::{check_prop45, check_thm44, observability_index, periodic_eig_analysis};
use thiserror::Error;

const EXIT_INFEASIBLE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "qdos",
    version,
    about = "Quantized output-feedback control over a DoS-attacked channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the stability conditions; exit 0 iff feasible.
    Analyze(Common),
    /// Run zoom-out + zoom-in and write the trace CSV and a run report.
    Simulate(Common),
    /// Minimum N over the configured (nu_d, nu_f) grid.
    Sweep(Common),
    /// Regenerate every batch-reactor artifact and check the reported thresholds.
    Reproduce(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Embedded preset (batch-reactor, fig5, fig6, fig7, fig8); default batch-reactor.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Override the configured scheme variant.
    #[arg(long, value_name = "VARIANT")]
    scheme: Option<SchemeVariant>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] qdos_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(
                qdos_core::Error::InvariantBreach { .. }
                | qdos_core::Error::NumericRange { .. }
                | qdos_core::Error::QuantizerOverflow { .. }
                | qdos_core::Error::IndexOutOfRange { .. },
            ) => EXIT_RUNTIME,
            _ => EXIT_CONFIG,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

impl Common {
    fn load(&self) -> CliResult<Config> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = fs::read_to_string(path).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
                Config::from_toml(&text)?
            }
            (None, Some(name)) => Config::preset(name)?,
            (None, None) => Config::preset("batch-reactor")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.scheme {
            cfg = cfg.with_variant(v);
        }
        Ok(cfg)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn build(cfg: &Config) -> CliResult<Setup> {
    let setup = cfg.build()?;
    for w in &setup.warnings {
        eprintln!("warning: {w}");
    }
    Ok(setup)
}

fn describe_line(line: &FrontierLine, full: bool) -> String {
    if full {
        format!(
            "nu_d < {} {} {}*nu_f",
            line.intercept,
            if line.slope < 0.0 { "-" } else { "+" },
            line.slope.abs()
        )
    } else {
        format!("nu_d < {}", line.intercept)
    }
}

fn verdict_block(cfg: &Config, setup: &Setup) -> CliResult<(StabilityVerdict, String)> {
    let v = verdict(&setup.scheme.consts, &setup.budget);
    let mut s = format!("config_sha256={}\n", cfg.hash());
    s.push_str(&v.to_kv());
    let full = cfg.scheme.variant.is_full();
    let _ = writeln!(s, "frontier={}", describe_line(&v.line, full));
    let _ = writeln!(s, "frontier_limit={}", describe_line(&v.asymptote, full));
    let _ = writeln!(s, "spectral_radius_A={}", spectral_radius(&setup.model.a)?);
    match observability_index(&setup.model.c, &setup.model.a) {
        Ok(eta) => {
            let _ = writeln!(s, "observability_index={eta}");
            s.push_str(&check_thm44(eta, &setup.budget).to_kv());
            s.push_str(&check_prop45(eta, &setup.budget).to_kv());
        }
        Err(e) => {
            let _ = writeln!(s, "observability_index=none ({e})");
        }
    }
    match periodic_eig_analysis(&setup.model.a, &setup.model.c, &setup.budget) {
        Ok(p) => s.push_str(&p.to_kv()),
        Err(e) => {
            let _ = writeln!(s, "periodic_analysis=unavailable ({e})");
        }
    }
    Ok((v, s))
}

fn cmd_analyze(args: &Common) -> CliResult<u8> {
    let cfg = args.load()?;
    let setup = build(&cfg)?;
    let (v, text) = verdict_block(&cfg, &setup)?;
    let path = write(&args.out, "analyze.txt", &text)?;
    print!("{text}");
    println!("report={}", path.display());
    Ok(if v.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn simulate(cfg: &Config, setup: &Setup) -> CliResult<SimTrace> {
    let mut attacker = cfg.attacker()?;
    Ok(run_closed_loop(
        &setup.model,
        &setup.gains,
        &setup.scheme,
        attacker.as_mut(),
        &setup.x0,
        cfg.initial,
        cfg.horizon,
    )?)
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn run_report(cfg: &Config, setup: &Setup, trace: &SimTrace, csv: &Path) -> String {
    let s = &trace.summary;
    let c = classify_run(trace, 50);
    let v = verdict(&setup.scheme.consts, &setup.budget);
    let mut r = String::new();
    let _ = writeln!(r, "config_sha256={}", cfg.hash());
    let _ = writeln!(r, "name={}", cfg.name);
    let _ = writeln!(r, "scheme={}", cfg.scheme.variant);
    let _ = writeln!(r, "N={}", cfg.scheme.levels);
    let _ = writeln!(r, "seed={}", cfg.seed);
    let _ = writeln!(r, "horizon={}", cfg.horizon);
    let _ = writeln!(r, "verdict_feasible={}", v.feasible);
    let _ = writeln!(r, "verdict_product={}", v.product);
    let _ = writeln!(r, "capture_time={}", opt(s.capture_time));
    let _ = writeln!(r, "acquisition_time={}", opt(s.acquisition_time));
    let _ = writeln!(r, "acquired_bound={}", opt(s.acquired_bound));
    let _ = writeln!(r, "zoom_in_initial_bound={}", opt(s.zoom_in_initial_bound));
    let _ = writeln!(r, "final_bound={}", s.final_bound);
    let _ = writeln!(r, "bound_log_slope={}", opt(s.bound_log_slope));
    let _ = writeln!(r, "tail50_log_slope={}", c.tail_slope);
    let _ = writeln!(r, "max_state={}", s.max_state);
    let _ = writeln!(r, "terminal_state={}", s.terminal_state);
    let _ = writeln!(r, "attacked_steps={}", s.attacks);
    let _ = writeln!(r, "attack_runs={}", s.attack_runs);
    let _ = writeln!(r, "classification={:?}", c.class);
    let _ = writeln!(
        r,
        "trace_csv={}",
        csv.file_name().unwrap_or_default().to_string_lossy()
    );
    r
}

fn cmd_simulate(args: &Common) -> CliResult<u8> {
    let cfg = args.load()?;
    let setup = build(&cfg)?;
    let trace = simulate(&cfg, &setup)?;
    let hash = cfg.hash();
    let csv = write(
        &args.out,
        &format!("{}.csv", cfg.name),
        &trace.to_csv(Some(&hash)),
    )?;
    let report = run_report(&cfg, &setup, &trace, &csv);
    write(&args.out, &format!("{}.report.txt", cfg.name), &report)?;
    print!("{report}");
    Ok(0)
}

fn default_sweep() -> SweepSpec {
    SweepSpec {
        nu_d: AxisSpec {
            start: 0.0,
            stop: 0.3,
            step: 0.01,
        },
        nu_f: AxisSpec {
            start: 0.0,
            stop: 0.0,
            step: 0.01,
        },
    }
}

fn sweep_files(
    cfg: &Config,
    setup: &Setup,
    grid: &SweepSpec,
    out: &Path,
    stem: &str,
) -> CliResult<(usize, FrontierLine)> {
    let nu_f = if cfg.scheme.variant.is_full() {
        grid.nu_f.values()?
    } else {
        vec![0.0]
    };
    let frontier = sweep_frontier(
        &setup.scheme.consts,
        &grid.nu_d.values()?,
        &nu_f,
        cfg.scheme.parity,
    );
    write(
        out,
        &format!("{stem}.csv"),
        &frontier.to_csv(Some(&cfg.hash())),
    )?;
    write(out, &format!("{stem}.json"), &frontier.sidecar_json())?;
    Ok((frontier.rows.len(), frontier.asymptote))
}

fn cmd_sweep(args: &Common) -> CliResult<u8> {
    let cfg = args.load()?;
    let setup = build(&cfg)?;
    let grid = cfg.sweep.unwrap_or_else(default_sweep);
    let stem = format!("{}-{}-frontier", cfg.name, cfg.scheme.variant);
    let (rows, asym) = sweep_files(&cfg, &setup, &grid, &args.out, &stem)?;
    println!("config_sha256={}", cfg.hash());
    println!("scheme={}", cfg.scheme.variant);
    println!("rows={rows}");
    println!(
        "asymptote={}",
        describe_line(&asym, cfg.scheme.variant.is_full())
    );
    println!(
        "frontier_csv={}",
        args.out.join(format!("{stem}.csv")).display()
    );
    Ok(0)
}

struct Check {
    name: &'static str,
    value: String,
    target: &'static str,
    pass: bool,
}

fn figure_config(base: &Config, name: &str, variant: SchemeVariant, budget: BudgetSpec) -> Config {
    let mut cfg = base.with_variant(variant);
    cfg.name = name.to_string();
    cfg.sweep = None;
    cfg.attack = AttackSpec::Greedy {
        budget,
        alpha1: 1.0,
        alpha2: 0.5,
        zoom_out: qdos_core::attack::ZoomOutPolicy::Saturate,
    };
    cfg
}

fn cmd_reproduce(args: &Common) -> CliResult<u8> {
    if args.scheme.is_some() {
        eprintln!("warning: --scheme is ignored by reproduce; every variant is evaluated");
    }
    let base = args.load()?;
    let setup_for = |v: SchemeVariant| build(&base.with_variant(v));
    let simple = setup_for(SchemeVariant::EstimateSimple)?;
    let full = setup_for(SchemeVariant::EstimateFull)?;
    let origin = setup_for(SchemeVariant::OriginSimple)?;
    let mut checks = Vec::new();
    let within = |v: f64, t: f64, tol: f64| (v - t).abs() <= tol;
    let rel = |v: f64, t: f64, r: f64| (v - t).abs() <= r * t.abs();

    let theta_a = full.scheme.consts.growth_attack;
    checks.push(Check {
        name: "theta_a",
        value: format!("{theta_a:.5}"),
        target: "1.489 ± 0.005",
        pass: within(theta_a, 1.489, 0.005),
    });
    let vartheta_a = simple.scheme.consts.growth_attack;
    checks.push(Check {
        name: "vartheta_a",
        value: format!("{vartheta_a:.5}"),
        target: "2.901 ± 0.03",
        pass: within(vartheta_a, 2.901, 0.03),
    });

    let a_simple = qdos_core::analysis::asymptote(&simple.scheme.consts);
    let a_full = qdos_core::analysis::asymptote(&full.scheme.consts);
    let a_origin = qdos_core::analysis::asymptote(&origin.scheme.consts);
    checks.push(Check {
        name: "asymptote_estimate_simple",
        value: format!("{:.5}", a_simple.intercept),
        target: "0.1405 ± 0.003",
        pass: within(a_simple.intercept, 0.1405, 0.003),
    });
    checks.push(Check {
        name: "asymptote_full_line",
        value: format!("{:.5} {:+.5}·nu_f", a_full.intercept, a_full.slope),
        target: "0.3042 − 1.9080·nu_f within 10%",
        pass: rel(a_full.intercept, 0.3042, 0.10) && rel(a_full.slope, -1.9080, 0.10),
    });
    checks.push(Check {
        name: "asymptote_origin_simple",
        value: format!("{:.5}", a_origin.intercept),
        target: "0.0736 ± 0.003",
        pass: within(a_origin.intercept, 0.0736, 0.003),
    });
    let n71_simple = frontier_line(&simple.scheme.consts);
    let n71_full = frontier_line(&full.scheme.consts);
    checks.push(Check {
        name: "n71_estimate_simple",
        value: format!("{:.5}", n71_simple.intercept),
        target: "0.106 ± 0.003",
        pass: within(n71_simple.intercept, 0.106, 0.003),
    });
    checks.push(Check {
        name: "n71_full_line",
        value: format!("{:.5} {:+.5}·nu_f", n71_full.intercept, n71_full.slope),
        target: "0.230 (5%) − 2.041·nu_f (10%)",
        pass: rel(n71_full.intercept, 0.230, 0.05) && rel(n71_full.slope, -2.041, 0.10),
    });

    let out = &args.out;
    let fig2 = SweepSpec {
        nu_d: AxisSpec {
            start: 0.0,
            stop: 0.14,
            step: 0.002,
        },
        nu_f: AxisSpec {
            start: 0.0,
            stop: 0.0,
            step: 1.0,
        },
    };
    let fig3 = SweepSpec {
        nu_d: AxisSpec {
            start: 0.0,
            stop: 0.3,
            step: 0.01,
        },
        nu_f: AxisSpec {
            start: 0.0,
            stop: 0.16,
            step: 0.01,
        },
    };
    let fig4 = SweepSpec {
        nu_d: AxisSpec {
            start: 0.0,
            stop: 0.072,
            step: 0.001,
        },
        nu_f: AxisSpec {
            start: 0.0,
            stop: 0.0,
            step: 1.0,
        },
    };
    let mut files = Vec::new();
    for (stem, variant, setup, grid) in [
        (
            "fig2-estimate-simple",
            SchemeVariant::EstimateSimple,
            &simple,
            &fig2,
        ),
        (
            "fig3-estimate-full",
            SchemeVariant::EstimateFull,
            &full,
            &fig3,
        ),
        (
            "fig4-origin-simple",
            SchemeVariant::OriginSimple,
            &origin,
            &fig4,
        ),
    ] {
        sweep_files(&base.with_variant(variant), setup, grid, out, stem)?;
        files.push(format!("{stem}.csv"));
    }

    let duration = |nu_d| BudgetSpec {
        pi_d: 2.0,
        nu_d,
        pi_f: None,
        nu_f: None,
    };
    let with_freq = |nu_f| BudgetSpec {
        pi_d: 2.0,
        nu_d: 0.15,
        pi_f: Some(1.0),
        nu_f: Some(nu_f),
    };
    for (name, variant, budget, expected) in [
        (
            "fig5",
            SchemeVariant::EstimateSimple,
            duration(0.10),
            RunClass::Stable,
        ),
        (
            "fig6",
            SchemeVariant::EstimateSimple,
            duration(0.11),
            RunClass::Unstable,
        ),
        (
            "fig7",
            SchemeVariant::EstimateFull,
            with_freq(0.035),
            RunClass::Stable,
        ),
        (
            "fig8",
            SchemeVariant::EstimateFull,
            with_freq(0.045),
            RunClass::Unstable,
        ),
    ] {
        let cfg = figure_config(&base, name, variant, budget);
        let setup = build(&cfg)?;
        let trace = simulate(&cfg, &setup)?;
        write(
            out,
            &format!("{name}.csv"),
            &trace.to_csv(Some(&cfg.hash())),
        )?;
        files.push(format!("{name}.csv"));
        let c = classify_run(&trace, 50);
        checks.push(Check {
            name: match name {
                "fig5" => "fig5_classification",
                "fig6" => "fig6_classification",
                "fig7" => "fig7_classification",
                _ => "fig8_classification",
            },
            value: format!(
                "{:?} (E_R {:.3e} → {:.3e})",
                c.class, c.post_acquisition, c.final_bound
            ),
            target: match expected {
                RunClass::Stable => "Stable",
                _ => "Unstable",
            },
            pass: c.class == expected,
        });
    }

    let mut summary = format!("config_sha256={}\n", base.hash());
    for c in &checks {
        let _ = writeln!(
            summary,
            "{}={} target={} {}",
            c.name,
            c.value,
            c.target,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    for f in &files {
        let _ = writeln!(summary, "artifact={f}");
    }
    write(out, "summary.txt", &summary)?;
    print!("{summary}");
    Ok(if checks.iter().all(|c| c.pass) {
        0
    } else {
        EXIT_INFEASIBLE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
