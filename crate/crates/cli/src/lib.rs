//! Command-line driver: argument handling, config resolution, task
//! execution, and artifact emission.
//!
//! Every run goes through the same pipeline: load a config (from `--config`
//! or a `--benchmark` preset), apply flag overrides, validate and build it,
//! then either print the execution plan (`--dry-run`) or run the task and
//! write its artifacts.  Artifacts are CSV (LF line endings, `.` decimals),
//! the binary field format for value functions, a resolved `config.json`,
//! and a `summary.txt` of `key=value` lines ending in `status=pass|fail`.
//!
//! Exit codes: `0` when the run finishes and every configured assertion
//! holds, `1` when it finishes but an assertion fails, `2` for schema or
//! validation problems, `3` for solver failures.  Outputs carry no
//! timestamps, and all randomness flows from the config seed, so a fixed
//! config produces byte-identical artifacts.

use std::fmt::Display;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ergodic_hjb::config::{self, BuiltExperiment, ExperimentConfig, TaskConfig};
use ergodic_hjb::lagrangian::{validate_assumptions, BetaBound, LagrangianSpec, SampleBox};
use ergodic_hjb::srgeometry::{ball_box_audit, sr_energy_path, SrOptions};
use ergodic_hjb::systems::state_vars;
use ergodic_hjb::{ergodic, hjb, Error, Result};

#[derive(Parser)]
#[command(
    name = "ergodic-hjb",
    about = "Grid solvers and geometry audits for ergodic Hamilton-Jacobi-Bellman problems",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.  `--config`/`--benchmark` supply the
/// experiment; the remaining flags override individual config fields.
#[derive(Args, Debug, Clone, Default)]
struct CommonOpts {
    /// JSON experiment config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Built-in scenario supplying system, Lagrangian, grid, and solver.
    #[arg(long, value_name = "NAME")]
    benchmark: Option<String>,

    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Artifact directory override.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Time-step override.
    #[arg(long)]
    dt: Option<f64>,

    /// Sweep-convergence tolerance override.
    #[arg(long)]
    tolerance: Option<f64>,

    /// Iteration-budget override.
    #[arg(long)]
    max_iterations: Option<usize>,

    /// Validate the config, print the execution plan, and write nothing.
    #[arg(long)]
    dry_run: bool,

    /// Worker threads (default: ERGODIC_HJB_THREADS, else all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the declared assumption clauses; no solver runs.
    Validate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Finite-horizon value function with checkpoint snapshots.
    SolveVt {
        #[command(flatten)]
        common: CommonOpts,
        /// Horizon T.
        #[arg(long)]
        horizon: Option<f64>,
        /// Comma-separated checkpoint times (default: just T).
        #[arg(long, value_delimiter = ',')]
        checkpoints: Option<Vec<f64>>,
    },
    /// Discounted value functions along a decreasing rate chain.
    SolveDiscounted {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated discount rates, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Point-to-point sub-Riemannian distance with the connecting path.
    SrDistance {
        #[command(flatten)]
        common: CommonOpts,
        /// Start point, comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        /// End point, comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        /// Control intervals in the path discretization.
        #[arg(long)]
        n_intervals: Option<usize>,
        /// Multistart count.
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Hölder-equivalence audit over sampled pairs.
    BallBox {
        #[command(flatten)]
        common: CommonOpts,
        /// Sampling ball radius.
        #[arg(long)]
        radius: Option<f64>,
        /// Number of sampled pairs.
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Critical constant by the horizon and discounted routes.
    ErgodicEstimate {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated horizons, strictly increasing.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
        /// Comma-separated discount rates, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Probe ball radius (default: half the distance to the boundary).
        #[arg(long)]
        probe_radius: Option<f64>,
    },
    /// Vanishing-discount corrector extraction.
    Corrector {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated discount rates, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Corrector extraction followed by the fixed-point refinement.
    LaxOleinik {
        #[command(flatten)]
        common: CommonOpts,
        /// Semigroup step per iterate.
        #[arg(long)]
        t_step: Option<f64>,
        /// Total iteration time budget.
        #[arg(long)]
        max_time: Option<f64>,
    },
    /// Print the built-in scenario catalogue.
    ListBenchmarks {
        #[command(flatten)]
        common: CommonOpts,
    },
}

impl Command {
    fn common(&self) -> &CommonOpts {
        match self {
            Command::Validate { common }
            | Command::SolveVt { common, .. }
            | Command::SolveDiscounted { common, .. }
            | Command::SrDistance { common, .. }
            | Command::BallBox { common, .. }
            | Command::ErgodicEstimate { common, .. }
            | Command::Corrector { common, .. }
            | Command::LaxOleinik { common, .. }
            | Command::ListBenchmarks { common } => common,
        }
    }
}

/// Entry point shared by the binary and the tests; returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads(cli.command.common().threads);

    if let Command::ListBenchmarks { common } = &cli.command {
        if common.dry_run {
            println!("plan.task=list-benchmarks");
            return 0;
        }
        for b in config::benchmarks() {
            println!("{}\t{}", b.name, b.summary);
        }
        return 0;
    }

    match dispatch(&cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::Expr(_) | Error::Dimension { .. } => 2,
                _ => 3,
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let n = flag.or_else(|| {
        std::env::var("ERGODIC_HJB_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(n) = n.filter(|&n| n > 0) {
        // Errors only if a pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cmd: &Command) -> Result<bool> {
    let common = cmd.common();
    let mut cfg = load_base_config(common)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if common.dt.is_some() {
        cfg.solver.dt = common.dt;
    }
    if let Some(tol) = common.tolerance {
        cfg.solver.tolerance = tol;
    }
    if let Some(cap) = common.max_iterations {
        cfg.solver.max_iterations = cap;
    }
    cfg.task = merge_task(cmd, &cfg.task)?;

    let built = cfg.build()?;
    if common.dry_run {
        print_plan(&cfg, &built);
        return Ok(true);
    }
    let summary = run_task(&cfg, &built)?;
    let out = cfg.output_dir.clone();
    write_text(&out.join("summary.txt"), &summary.render())?;
    print!("{}", summary.render());
    Ok(summary.pass)
}

fn load_base_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    match (&common.config, &common.benchmark) {
        (Some(_), Some(_)) => Err(Error::Config {
            path: "--config".into(),
            message: "pass either --config or --benchmark, not both".into(),
        }),
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            ExperimentConfig::from_json(&text)
        }
        (None, Some(name)) => config::benchmark(name).ok_or_else(|| Error::Config {
            path: "--benchmark".into(),
            message: format!("unknown scenario `{name}`; see list-benchmarks"),
        }),
        (None, None) => Err(Error::Config {
            path: "--config".into(),
            message: "need --config FILE or --benchmark NAME".into(),
        }),
    }
}

fn missing(cmd: &str, flag: &str) -> Error {
    Error::Config {
        path: "task".into(),
        message: format!("{cmd} needs {flag} (no matching task in the config)"),
    }
}

/// The subcommand decides the task; explicit flags beat config task
/// parameters, which beat built-in defaults.
fn merge_task(cmd: &Command, from_config: &TaskConfig) -> Result<TaskConfig> {
    use TaskConfig as T;
    Ok(match cmd {
        Command::Validate { .. } => T::Validate,
        Command::ListBenchmarks { .. } => T::Validate,
        Command::SolveVt {
            horizon,
            checkpoints,
            ..
        } => {
            let (ch, cc) = match from_config {
                T::SolveVt {
                    horizon,
                    checkpoints,
                } => (Some(*horizon), Some(checkpoints.clone())),
                _ => (None, None),
            };
            let horizon = horizon.or(ch).ok_or_else(|| missing("solve-vt", "--horizon"))?;
            let mut checkpoints = checkpoints.clone().or(cc).unwrap_or_default();
            if checkpoints.is_empty() {
                checkpoints = vec![horizon];
            }
            T::SolveVt {
                horizon,
                checkpoints,
            }
        }
        Command::SolveDiscounted { lambdas, .. } => {
            let cl = match from_config {
                T::SolveDiscounted { lambdas } => Some(lambdas.clone()),
                _ => None,
            };
            let lambdas = lambdas
                .clone()
                .or(cl)
                .ok_or_else(|| missing("solve-discounted", "--lambdas"))?;
            T::SolveDiscounted { lambdas }
        }
        Command::SrDistance {
            from,
            to,
            n_intervals,
            restarts,
            ..
        } => {
            let (cf, ct, cn, cr) = match from_config {
                T::SrDistance {
                    from,
                    to,
                    n_intervals,
                    restarts,
                } => (
                    Some(from.clone()),
                    Some(to.clone()),
                    *n_intervals,
                    *restarts,
                ),
                _ => (None, None, None, None),
            };
            T::SrDistance {
                from: from.clone().or(cf).ok_or_else(|| missing("sr-distance", "--from"))?,
                to: to.clone().or(ct).ok_or_else(|| missing("sr-distance", "--to"))?,
                n_intervals: n_intervals.or(cn),
                restarts: restarts.or(cr),
            }
        }
        Command::BallBox { radius, pairs, .. } => {
            let (cr, cp) = match from_config {
                T::BallBox { radius, pairs } => (Some(*radius), Some(*pairs)),
                _ => (None, None),
            };
            T::BallBox {
                radius: radius.or(cr).ok_or_else(|| missing("ball-box", "--radius"))?,
                pairs: pairs.or(cp).ok_or_else(|| missing("ball-box", "--pairs"))?,
            }
        }
        Command::ErgodicEstimate {
            horizons,
            lambdas,
            probe_radius,
            ..
        } => {
            let (ch, cl, cp) = match from_config {
                T::ErgodicEstimate {
                    horizons,
                    lambdas,
                    probe_radius,
                } => (Some(horizons.clone()), Some(lambdas.clone()), *probe_radius),
                _ => (None, None, None),
            };
            let horizons = horizons
                .clone()
                .or(ch)
                .filter(|v| !v.is_empty())
                .unwrap_or_else(|| vec![5.0, 10.0, 20.0]);
            let lambdas = lambdas
                .clone()
                .or(cl)
                .filter(|v| !v.is_empty())
                .unwrap_or_else(|| horizons.iter().map(|t| 1.0 / t).collect());
            T::ErgodicEstimate {
                horizons,
                lambdas,
                probe_radius: probe_radius.or(cp),
            }
        }
        Command::Corrector { lambdas, .. } => {
            let cl = match from_config {
                T::Corrector { lambdas } => Some(lambdas.clone()),
                _ => None,
            };
            let lambdas = lambdas
                .clone()
                .or(cl)
                .filter(|v| !v.is_empty())
                .unwrap_or_else(ergodic::default_lambda_sequence);
            T::Corrector { lambdas }
        }
        Command::LaxOleinik {
            t_step, max_time, ..
        } => {
            let (cs, cm) = match from_config {
                T::LaxOleinik { t_step, max_time } => (Some(*t_step), Some(*max_time)),
                _ => (None, None),
            };
            T::LaxOleinik {
                t_step: t_step.or(cs).unwrap_or(0.5),
                max_time: max_time.or(cm).unwrap_or(40.0),
            }
        }
    })
}

// --- plan -----------------------------------------------------------------

/// Artifact names a task will produce, `config.json` and `summary.txt`
/// first.  The plan prints this list and the runner follows it.
fn artifact_names(task: &TaskConfig) -> Vec<String> {
    let mut names = vec!["config.json".to_string(), "summary.txt".to_string()];
    match task {
        TaskConfig::Validate => names.push("assumptions.csv".into()),
        TaskConfig::SolveVt { checkpoints, .. } => {
            for t in checkpoints {
                names.push(format!("vt_t{t}.csv"));
                names.push(format!("vt_t{t}.bin"));
            }
        }
        TaskConfig::SolveDiscounted { lambdas } => {
            for l in lambdas {
                names.push(format!("vlambda_{l}.csv"));
                names.push(format!("vlambda_{l}.bin"));
            }
        }
        TaskConfig::SrDistance { .. } => names.push("sr_path.csv".into()),
        TaskConfig::BallBox { .. } => names.push("ballbox.csv".into()),
        TaskConfig::ErgodicEstimate { .. } => names.push("ergodic_probes.csv".into()),
        TaskConfig::Corrector { .. } => {
            names.push("chi.csv".into());
            names.push("chi.bin".into());
        }
        TaskConfig::LaxOleinik { .. } => {
            for n in ["chi", "chi_bar"] {
                names.push(format!("{n}.csv"));
                names.push(format!("{n}.bin"));
            }
            names.push("lax_residuals.csv".into());
        }
    }
    names
}

fn print_plan(cfg: &ExperimentConfig, built: &BuiltExperiment) {
    let grid_shape = built
        .grid
        .nodes()
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("x");
    println!("plan.task={}", cfg.task.name());
    println!("plan.system={}", built.system.name());
    println!("plan.state_dim={}", built.system.state_dim());
    println!("plan.control_dim={}", built.system.control_dim());
    println!("plan.grid={grid_shape}");
    println!("plan.dt={}", built.solver.dt);
    println!("plan.mesh_radius={}", built.solver.control_mesh.radius);
    println!(
        "plan.mesh_points_per_axis={}",
        built.solver.control_mesh.points_per_axis
    );
    println!("plan.tolerance={}", built.solver.tolerance);
    println!("plan.seed={}", cfg.seed);
    println!("plan.output_dir={}", cfg.output_dir.display());
    println!("plan.artifacts={}", artifact_names(&cfg.task).join(","));
}

// --- execution ------------------------------------------------------------

struct Summary {
    lines: Vec<(String, String)>,
    pass: bool,
}

impl Summary {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut s = Summary {
            lines: Vec::new(),
            pass: true,
        };
        s.push("task", cfg.task.name());
        s.push("seed", cfg.seed);
        s
    }

    fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    /// Records a toleranced assertion as three lines and folds it into the
    /// final status.
    fn check(&mut self, key: &str, value: f64, tolerance: f64, ok: bool) {
        self.push(key, value);
        self.push(format!("{key}_tolerance"), tolerance);
        self.push(format!("{key}_ok"), ok);
        self.pass &= ok;
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.lines {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out.push_str(if self.pass { "status=pass\n" } else { "status=fail\n" });
        out
    }
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)?;
    Ok(())
}

fn create<'a>(out: &Path, name: &'a str) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(out.join(name))?))
}

fn write_field(out: &Path, stem: &str, field: &hjb::ValueField) -> Result<()> {
    let mut csv = create(out, &format!("{stem}.csv"))?;
    field.write_csv(&mut csv)?;
    let mut bin = create(out, &format!("{stem}.bin"))?;
    field.write_binary(&mut bin)?;
    Ok(())
}

fn run_task(cfg: &ExperimentConfig, built: &BuiltExperiment) -> Result<Summary> {
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out)?;
    write_text(&out.join("config.json"), &cfg.to_json())?;

    let mut summary = Summary::new(cfg);
    match &cfg.task {
        TaskConfig::Validate => run_validate(cfg, built, &out, &mut summary)?,
        TaskConfig::SolveVt {
            horizon,
            checkpoints,
        } => {
            let sol = hjb::solve_finite_horizon(
                &built.system,
                &built.lagrangian,
                &built.grid,
                *horizon,
                checkpoints,
                &built.solver,
            )?;
            summary.push("horizon", horizon);
            summary.push("dt", sol.dt);
            summary.push("steps", sol.steps);
            for (t, field) in &sol.checkpoints {
                write_field(&out, &format!("vt_t{t}"), field)?;
                summary.push(format!("vt_t{t}_min"), field.min());
                summary.push(format!("vt_t{t}_sup"), field.max());
            }
        }
        TaskConfig::SolveDiscounted { lambdas } => {
            let mut warm: Option<hjb::ValueField> = None;
            for l in lambdas {
                let sol = hjb::solve_discounted(
                    &built.system,
                    &built.lagrangian,
                    &built.grid,
                    *l,
                    &built.solver,
                    warm.as_ref(),
                )?;
                write_field(&out, &format!("vlambda_{l}"), &sol.field)?;
                summary.push(format!("vlambda_{l}_iterations"), sol.iterations);
                summary.push(format!("vlambda_{l}_residual"), sol.residual);
                summary.push(format!("vlambda_{l}_sup"), sol.field.max());
                warm = Some(sol.field);
            }
        }
        TaskConfig::SrDistance {
            from,
            to,
            n_intervals,
            restarts,
        } => {
            let n = n_intervals.unwrap_or(SrOptions::default().n_intervals);
            let r = restarts.unwrap_or(SrOptions::default().restarts);
            let (energy, traj) =
                sr_energy_path(&built.system, from, to, 1.0, n, r, cfg.seed)?;
            let half_norm = LagrangianSpec::quadratic(
                "0",
                built.system.state_dim(),
                built.system.control_dim(),
                BetaBound::closed_form("1")?,
            )?;
            let mut w = create(&out, "sr_path.csv")?;
            traj.write_csv(&half_norm, &mut w)?;
            summary.push("energy", energy);
            summary.push("distance", energy.sqrt());
        }
        TaskConfig::BallBox { radius, pairs } => {
            let report = ball_box_audit(&built.system, *radius, *pairs, cfg.seed)?;
            let mut w = create(&out, "ballbox.csv")?;
            writeln!(w, "degree,c1,c2,fitted_exponent,worst_violation")?;
            writeln!(
                w,
                "{},{},{},{},{}",
                report.degree, report.c1, report.c2, report.fitted_exponent, report.worst_violation
            )?;
            summary.push("degree", report.degree);
            summary.push("c1", report.c1);
            summary.push("c2", report.c2);
            summary.push("fitted_exponent", report.fitted_exponent);
            summary.check(
                "worst_violation",
                report.worst_violation,
                BALL_BOX_VIOLATION_TOL,
                report.worst_violation <= BALL_BOX_VIOLATION_TOL,
            );
        }
        TaskConfig::ErgodicEstimate {
            horizons,
            lambdas,
            probe_radius,
        } => run_ergodic_estimate(
            cfg, built, &out, horizons, lambdas, *probe_radius, &mut summary,
        )?,
        TaskConfig::Corrector { lambdas } => {
            let ex = ergodic::extract_corrector(
                &built.system,
                &built.lagrangian,
                &built.grid,
                lambdas,
                &built.solver,
            )?;
            write_field(&out, "chi", &ex.chi)?;
            summary.push("mane", ex.mane);
            summary.push("chi_sup", ex.chi.max());
            for (l, gap) in ex.lambdas.iter().skip(1).zip(&ex.cauchy_gaps) {
                summary.push(format!("cauchy_gap_{l}"), gap);
            }
            summary.push("cauchy_decreasing", ex.cauchy_decreasing);
            summary.push("sr_samples", ex.sr_lipschitz_samples.len());
            summary.push("lipschitz_constant", ex.lipschitz_constant);
            summary.push("holder_exponent", ex.holder_exponent);
            let chi_min = ex.chi.min();
            summary.check("chi_min", chi_min, -CHI_MIN_TOL, chi_min >= -CHI_MIN_TOL);
        }
        TaskConfig::LaxOleinik { t_step, max_time } => {
            let ex = ergodic::extract_corrector(
                &built.system,
                &built.lagrangian,
                &built.grid,
                &ergodic::default_lambda_sequence(),
                &built.solver,
            )?;
            write_field(&out, "chi", &ex.chi)?;
            let report = ergodic::lax_oleinik_fixed_point(
                &built.system,
                &built.lagrangian,
                &ex.chi,
                &built.solver,
                *t_step,
                *max_time,
            )?;
            write_field(&out, "chi_bar", &report.chi_bar)?;
            let mut w = create(&out, "lax_residuals.csv")?;
            writeln!(w, "iterate,residual")?;
            for (i, r) in report.residuals.iter().enumerate() {
                writeln!(w, "{},{}", i + 1, r)?;
            }
            summary.push("mane", ex.mane);
            summary.push("iterates", report.residuals.len());
            summary.push("iterate_sup", report.iterate_sup);
            let bar_min = report.chi_bar.min();
            summary.check("chi_bar_min", bar_min, -CHI_MIN_TOL, bar_min >= -CHI_MIN_TOL);
            summary.check(
                "fixed_point_gap",
                report.fixed_point_gap,
                built.solver.tolerance,
                report.fixed_point_gap <= built.solver.tolerance,
            );
            summary.check(
                "domination_violations",
                report.domination_violations as f64,
                0.0,
                report.domination_violations == 0,
            );
        }
    }
    Ok(summary)
}

const BALL_BOX_VIOLATION_TOL: f64 = 3e-6;
const CHI_MIN_TOL: f64 = 1e-6;
const TAUBERIAN_GAP_TOL: f64 = 0.1;

fn run_validate(
    cfg: &ExperimentConfig,
    built: &BuiltExperiment,
    out: &Path,
    summary: &mut Summary,
) -> Result<()> {
    let sample_box = SampleBox {
        lower: built.grid.lower().to_vec(),
        upper: built.grid.upper().to_vec(),
        control_radius: built.solver.control_mesh.radius,
    };
    let report = validate_assumptions(
        &built.lagrangian,
        &built.system,
        &sample_box,
        4096,
        cfg.seed,
    );
    let mut w = create(out, "assumptions.csv")?;
    writeln!(w, "clause,pass,margin")?;
    for c in &report.clauses {
        writeln!(w, "{},{},{}", c.name, c.pass, c.margin)?;
    }
    for c in &report.clauses {
        summary.push(format!("clause_{}", c.name), if c.pass { "pass" } else { "fail" });
    }
    let radius = built
        .grid
        .lower()
        .iter()
        .chain(built.grid.upper())
        .fold(0.0f64, |a, b| a.max(b.abs()));
    let audit = built.system.audit_f_bounds(radius, 2048, cfg.seed);
    summary.push("f_lipschitz", audit.lipschitz);
    summary.push("f_growth", audit.growth);
    summary.push("c_f", built.system.c_f());
    summary.push("samples", report.samples);
    summary.pass &= report.all_pass();
    Ok(())
}

fn run_ergodic_estimate(
    cfg: &ExperimentConfig,
    built: &BuiltExperiment,
    out: &Path,
    horizons: &[f64],
    lambdas: &[f64],
    probe_radius: Option<f64>,
    summary: &mut Summary,
) -> Result<()> {
    let grid = &built.grid;
    let d = grid.dim();
    let radius = match probe_radius {
        Some(r) => r,
        None => {
            let face = (0..d)
                .map(|i| grid.upper()[i].min(-grid.lower()[i]))
                .fold(f64::INFINITY, f64::min);
            if !(face > 0.0) {
                return Err(Error::Config {
                    path: "task.probe_radius".into(),
                    message: "origin-centered probes need the origin inside the grid; \
                              set an explicit probe radius"
                        .into(),
                });
            }
            0.5 * face
        }
    };
    let probes = ergodic::default_probes(radius, d);
    let sample_box = SampleBox {
        lower: grid.lower().to_vec(),
        upper: grid.upper().to_vec(),
        control_radius: built.solver.control_mesh.radius,
    };
    let mane = ergodic::mane_closed_form(&built.lagrangian, &sample_box, 512, cfg.seed);
    let mut est = ergodic::ErgodicEstimate::new(probes.clone(), mane);
    if !horizons.is_empty() {
        est.mane_horizon = ergodic::estimate_mane_horizon(
            &built.system,
            &built.lagrangian,
            grid,
            &probes,
            horizons,
            &built.solver,
        )?;
    }
    if !lambdas.is_empty() {
        est.mane_discounted = ergodic::estimate_mane_discounted(
            &built.system,
            &built.lagrangian,
            grid,
            &probes,
            lambdas,
            &built.solver,
        )?;
    }

    let names = state_vars(d);
    let mut w = create(out, "ergodic_probes.csv")?;
    writeln!(w, "route,parameter,probe,{},value", names.join(","))?;
    for (route, sweeps) in [("horizon", &est.mane_horizon), ("discounted", &est.mane_discounted)] {
        for sweep in sweeps.iter() {
            for (i, (p, v)) in probes.iter().zip(&sweep.per_probe).enumerate() {
                let coords = p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
                writeln!(w, "{route},{},{i},{coords},{v}", sweep.parameter)?;
            }
        }
    }

    summary.push("probe_radius", radius);
    summary.push("probes", probes.len());
    summary.push("mane", est.mane_closed_form);
    for sweep in &est.mane_horizon {
        summary.push(format!("vt_over_t_T{}_sup", sweep.parameter), sweep.sup);
        summary.push(format!("vt_over_t_T{}_inf", sweep.parameter), sweep.inf);
    }
    for sweep in &est.mane_discounted {
        summary.push(format!("lambda_v_l{}_sup", sweep.parameter), sweep.sup);
        summary.push(format!("lambda_v_l{}_inf", sweep.parameter), sweep.inf);
    }

    let matched = est.mane_horizon.iter().any(|h| {
        est.mane_discounted
            .iter()
            .any(|l| (h.parameter * l.parameter - 1.0).abs() <= 1e-9)
    });
    if matched {
        let gap = ergodic::tauberian_check(&mut est);
        summary.check(
            "tauberian_gap_max",
            gap,
            TAUBERIAN_GAP_TOL,
            gap <= TAUBERIAN_GAP_TOL,
        );
    }
    Ok(())
}
