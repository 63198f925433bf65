//! Batch front end: limit-experiment quantities, prior-vs-rule games, Monte
//! Carlo convergence studies, and reference-parameter sweeps, emitted as flat
//! CSV/JSON tables for external plotting.
//!
//! Exit codes are a stable contract: 0 success, 2 usage, 3 numeric failure,
//! 4 non-convergence (partial output still emitted), 5 unknown identifier.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tiltrisk::finite_sample::{convergence_study, EstimatorSpec, ExperimentModel, Family};
use tiltrisk::game::{solve_treatment_game, verify_saddle_point, Direction};
use tiltrisk::limit_exp::{
    estimation_minimax_value_for_sigma, linex_minimax_value, linex_optimal_shift,
    reference_value_profile, treatment_minimax_value, LimitSpec,
};
use tiltrisk::numeric::{SpdMatrix, StreamSeed};
use tiltrisk::tilt::TiltedLossSpec;
use tiltrisk::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_NO_CONVERGE: u8 = 4;
const EXIT_UNKNOWN_NAME: u8 = 5;

#[derive(Parser)]
#[command(name = "tiltrisk", version, about = "Minimax tilted-risk decision tool")]
struct Cli {
    /// Worker threads for Monte Carlo commands (default: machine
    /// parallelism). Output is independent of this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form limit-experiment values and optimal-rule parameters.
    Limit(LimitArgs),
    /// Solve the prior-vs-rule treatment game and verify the saddle point.
    Game(GameArgs),
    /// Monte Carlo worst-case risk of plug-in rules across sample sizes.
    Mc(McArgs),
    /// Sweep the minimax value over a grid of reference parameters.
    Profile(ProfileArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    Estimation,
    Treatment,
    Linex,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bernoulli,
    Gaussian,
    Gmm,
}

#[derive(Args)]
struct LimitArgs {
    #[arg(long, value_enum)]
    loss: LossArg,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    sigma: f64,
    /// Bound of the estimation loss min(z^2, c).
    #[arg(long, default_value_t = 25.0)]
    bound_c: f64,
    /// Truncation level of the linex loss.
    #[arg(long, default_value_t = 20.0)]
    linex_m: f64,
    /// Sweep lambda over LO:HI:STEPS instead of the single --lambda value.
    #[arg(long)]
    sweep_lambda: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct GameArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    sigma: f64,
    /// Effect budget: nature picks |effect| <= budget.
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, default_value_t = 0.5)]
    theta0: f64,
    /// Row-major 2x2 moment covariance for the gmm model.
    #[arg(long, default_value = "1,0,0,4")]
    omega: String,
    #[arg(long, value_enum)]
    loss: LossArg,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 25.0)]
    bound_c: f64,
    #[arg(long, default_value_t = 25.0)]
    trunc_k: f64,
    /// Comma-separated sample sizes, strictly increasing.
    #[arg(long)]
    n_list: String,
    #[arg(long)]
    reps: usize,
    /// Effect budget in sigma-units for the worst-case grid.
    #[arg(long, default_value_t = 3.0)]
    budget_m: f64,
    /// Coarse grid points over [-M, M].
    #[arg(long, default_value_t = 25)]
    grid: usize,
    /// Comma-separated estimator names.
    #[arg(long)]
    rules: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, value_enum, default_value = "bernoulli")]
    model: ModelArg,
    #[arg(long, value_enum)]
    loss: LossArg,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 25.0)]
    bound_c: f64,
    #[arg(long, default_value_t = 25.0)]
    trunc_k: f64,
    /// Reference-parameter grid LO:HI:STEPS.
    #[arg(long)]
    theta_grid: String,
    /// Structural shift: mu(theta) = theta - mu_shift.
    #[arg(long, default_value_t = 0.0)]
    mu_shift: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

// ---------------------------------------------------------------------------
// Output plumbing.

#[derive(Clone)]
enum Cell {
    F(f64),
    U(u64),
    S(String),
    Empty,
}

struct Table {
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

struct Manifest {
    command: &'static str,
    parameters: BTreeMap<String, String>,
    root_seed: u64,
}

/// Round-trip float formatting (17 significant digits).
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::F(v) => fmt_f64(*v),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            // Encode floats as 17-digit strings so CSV and JSON carry
            // identical numerals.
            Cell::F(v) => serde_json::Value::String(fmt_f64(*v)),
            Cell::U(v) => serde_json::Value::from(*v),
            Cell::S(s) => serde_json::Value::String(s.clone()),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

fn render(manifest: &Manifest, table: &Table, format: FormatArg, wall_time_ms: u128) -> String {
    match format {
        FormatArg::Csv => {
            let mut out = String::new();
            out.push_str(&format!("# command={}\n", manifest.command));
            for (k, v) in &manifest.parameters {
                out.push_str(&format!("# {k}={v}\n"));
            }
            out.push_str(&format!("# root_seed={}\n", manifest.root_seed));
            out.push_str(&format!("# tool_version={}\n", env!("CARGO_PKG_VERSION")));
            out.push_str(&format!("# wall_time_ms={wall_time_ms}\n"));
            out.push_str(&table.columns.join(","));
            out.push('\n');
            for row in &table.rows {
                let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            out
        }
        FormatArg::Json => {
            let params: serde_json::Map<String, serde_json::Value> = manifest
                .parameters
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            let rows: Vec<serde_json::Value> = table
                .rows
                .iter()
                .map(|row| {
                    let obj: serde_json::Map<String, serde_json::Value> = table
                        .columns
                        .iter()
                        .zip(row)
                        .map(|(c, cell)| (c.to_string(), cell.json()))
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            let doc = serde_json::json!({
                "manifest": {
                    "command": manifest.command,
                    "parameters": params,
                    "root_seed": manifest.root_seed,
                    "tool_version": env!("CARGO_PKG_VERSION"),
                    "wall_time_ms": wall_time_ms,
                },
                "rows": rows,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("serializable");
            s.push('\n');
            s
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownName(_) => EXIT_UNKNOWN_NAME,
            Error::DidNotConverge { .. } => EXIT_NO_CONVERGE,
            Error::InvalidArgument(_) | Error::NotSpd(_) => EXIT_USAGE,
            _ => EXIT_NUMERIC,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

// Each command returns its rendered table plus a final exit code (games may
// emit partial output and still exit 4).
struct Outcome {
    manifest: Manifest,
    table: Table,
    exit: u8,
    out: Option<PathBuf>,
    format: FormatArg,
}

fn parse_range(s: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let err = || Failure::usage(format!("{flag}: expected LO:HI:STEPS, got '{s}'"));
    if parts.len() != 3 {
        return Err(err());
    }
    let lo: f64 = parts[0].parse().map_err(|_| err())?;
    let hi: f64 = parts[1].parse().map_err(|_| err())?;
    let steps: usize = parts[2].parse().map_err(|_| err())?;
    if steps == 0 || !(hi >= lo) {
        return Err(err());
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect())
}

fn parse_f64_list(s: &str, flag: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Failure::usage(format!("{flag}: bad number '{t}'")))
        })
        .collect()
}

fn loss_spec(
    loss: LossArg,
    lambda: f64,
    bound_c: f64,
    trunc_k: f64,
    linex_m: f64,
) -> Result<TiltedLossSpec, Failure> {
    Ok(match loss {
        LossArg::Estimation => TiltedLossSpec::estimation(lambda, bound_c)?,
        LossArg::Treatment => TiltedLossSpec::treatment(lambda, Some(trunc_k))?,
        LossArg::Linex => TiltedLossSpec::linex(lambda, linex_m)?,
    })
}

// ---------------------------------------------------------------------------
// Commands.

fn cmd_limit(args: &LimitArgs) -> Result<Outcome, Failure> {
    let mut parameters = BTreeMap::new();
    parameters.insert("loss".into(), format!("{:?}", loss_name(args.loss)));
    parameters.insert("lambda".into(), fmt_f64(args.lambda));
    parameters.insert("sigma".into(), fmt_f64(args.sigma));

    let table = if let Some(sweep) = &args.sweep_lambda {
        parameters.insert("sweep_lambda".into(), sweep.clone());
        let lambdas = parse_range(sweep, "--sweep-lambda")?;
        match args.loss {
            LossArg::Treatment => {
                let mut rows = Vec::new();
                for &l in &lambdas {
                    let v = treatment_minimax_value(l, args.sigma)?;
                    rows.push(vec![
                        Cell::F(l),
                        Cell::F(v.delta_star.expect("treatment value carries delta_star")),
                        Cell::F(v.value),
                    ]);
                }
                Table {
                    columns: vec!["lambda", "delta_star", "v_star"],
                    rows,
                }
            }
            LossArg::Estimation => {
                parameters.insert("bound_c".into(), fmt_f64(args.bound_c));
                let mut rows = Vec::new();
                for &l in &lambdas {
                    let loss = TiltedLossSpec::estimation(l, args.bound_c)?;
                    let v = estimation_minimax_value_for_sigma(args.sigma, &loss)?;
                    rows.push(vec![Cell::F(l), Cell::F(v.value)]);
                }
                Table {
                    columns: vec!["lambda", "v_star"],
                    rows,
                }
            }
            LossArg::Linex => {
                parameters.insert("linex_m".into(), fmt_f64(args.linex_m));
                let mut rows = Vec::new();
                for &l in &lambdas {
                    let shift =
                        linex_optimal_shift(l, args.linex_m, args.sigma * args.sigma)?;
                    rows.push(vec![Cell::F(l), Cell::F(shift)]);
                }
                Table {
                    columns: vec!["lambda", "linex_shift"],
                    rows,
                }
            }
        }
    } else {
        match args.loss {
            LossArg::Treatment => {
                let v = treatment_minimax_value(args.lambda, args.sigma)?;
                Table {
                    columns: vec!["lambda", "sigma", "delta_star", "v_star"],
                    rows: vec![vec![
                        Cell::F(args.lambda),
                        Cell::F(args.sigma),
                        Cell::F(v.delta_star.expect("treatment value carries delta_star")),
                        Cell::F(v.value),
                    ]],
                }
            }
            LossArg::Estimation => {
                parameters.insert("bound_c".into(), fmt_f64(args.bound_c));
                let loss = TiltedLossSpec::estimation(args.lambda, args.bound_c)?;
                let v = estimation_minimax_value_for_sigma(args.sigma, &loss)?;
                Table {
                    columns: vec!["lambda", "sigma", "v_star"],
                    rows: vec![vec![
                        Cell::F(args.lambda),
                        Cell::F(args.sigma),
                        Cell::F(v.value),
                    ]],
                }
            }
            LossArg::Linex => {
                parameters.insert("linex_m".into(), fmt_f64(args.linex_m));
                let sigma2 = args.sigma * args.sigma;
                let shift = linex_optimal_shift(args.lambda, args.linex_m, sigma2)?;
                let value = linex_minimax_value(args.lambda, args.linex_m, sigma2)?;
                Table {
                    columns: vec!["lambda", "sigma", "linex_shift", "v_star"],
                    rows: vec![vec![
                        Cell::F(args.lambda),
                        Cell::F(args.sigma),
                        Cell::F(shift),
                        Cell::F(value),
                    ]],
                }
            }
        }
    };
    Ok(Outcome {
        manifest: Manifest {
            command: "limit",
            parameters,
            root_seed: 0,
        },
        table,
        exit: 0,
        out: args.out.clone(),
        format: args.format,
    })
}

fn cmd_game(args: &GameArgs) -> Result<Outcome, Failure> {
    let spec = LimitSpec::scalar(1.0, args.sigma)?;
    let sol = solve_treatment_game(&spec, args.lambda, args.budget, args.max_iters, args.tol)?;
    let report = verify_saddle_point(&sol.rule, &sol.prior, &spec, args.lambda, 1e-6)?;

    let mut parameters = BTreeMap::new();
    parameters.insert("lambda".into(), fmt_f64(args.lambda));
    parameters.insert("sigma".into(), fmt_f64(args.sigma));
    parameters.insert("budget".into(), fmt_f64(args.budget));
    parameters.insert("tol".into(), fmt_f64(args.tol));
    parameters.insert("max_iters".into(), args.max_iters.to_string());

    let columns = vec![
        "row",
        "effect",
        "weight",
        "threshold",
        "direction",
        "lower_value",
        "upper_value",
        "gap",
        "iterations",
        "converged",
        "bayes_ok",
        "equalizer_ok",
    ];
    let dir = match sol.rule.direction {
        Direction::Geq => "geq",
        Direction::Leq => "leq",
    };
    let mut rows = vec![vec![
        Cell::S("solution".into()),
        Cell::Empty,
        Cell::Empty,
        Cell::F(sol.rule.threshold),
        Cell::S(dir.into()),
        Cell::F(sol.lower_value),
        Cell::F(sol.upper_value),
        Cell::F(sol.gap),
        Cell::U(sol.iterations as u64),
        Cell::S(sol.converged.to_string()),
        Cell::S(report.bayes_ok.to_string()),
        Cell::S(report.equalizer_ok.to_string()),
    ]];
    for (atom, &w) in sol.prior.support.iter().zip(&sol.prior.weights) {
        rows.push(vec![
            Cell::S("atom".into()),
            Cell::F(spec.effect_of(atom)?),
            Cell::F(w),
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
            Cell::Empty,
        ]);
    }
    Ok(Outcome {
        manifest: Manifest {
            command: "game",
            parameters,
            root_seed: 0,
        },
        table: Table { columns, rows },
        exit: if sol.converged { 0 } else { EXIT_NO_CONVERGE },
        out: args.out.clone(),
        format: args.format,
    })
}

fn cmd_mc(args: &McArgs) -> Result<Outcome, Failure> {
    if matches!(args.loss, LossArg::Linex) {
        return Err(Failure::usage("mc: --loss must be estimation or treatment"));
    }
    let n_list: Vec<usize> = args
        .n_list
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Failure::usage(format!("--n-list: bad size '{t}'")))
        })
        .collect::<Result<_, _>>()?;
    let rules: Vec<EstimatorSpec> = args
        .rules
        .split(',')
        .map(|name| EstimatorSpec::by_name(name.trim()))
        .collect::<Result<_, _>>()
        .map_err(Failure::from)?;
    let loss = loss_spec(args.loss, args.lambda, args.bound_c, args.trunc_k, 20.0)?;
    // The treatment loss is only meaningful at the decision boundary
    // mu(theta0) = 0, so center the structural functional there.
    let mu_shift = if matches!(args.loss, LossArg::Treatment) {
        args.theta0
    } else {
        0.0
    };
    let omega_entries = parse_f64_list(&args.omega, "--omega")?;
    if matches!(args.model, ModelArg::Gmm) && omega_entries.len() != 4 {
        return Err(Failure::usage("--omega: expected 4 row-major entries"));
    }
    let model_at = |n: usize| -> tiltrisk::Result<ExperimentModel> {
        let family = match args.model {
            ModelArg::Bernoulli => Family::Bernoulli {
                theta0: args.theta0,
            },
            ModelArg::Gaussian => Family::GaussianLocation {
                theta0: args.theta0,
                noise_sd: 1.0,
            },
            ModelArg::Gmm => Family::OveridMean {
                mu0: 0.0,
                omega: SpdMatrix::from_rows(2, &omega_entries)?,
            },
        };
        let shift = if matches!(args.model, ModelArg::Gmm) {
            0.0
        } else {
            mu_shift
        };
        ExperimentModel::new(family, n, shift)
    };
    // Validate omega early so a bad matrix is a usage error, not a numeric
    // failure mid-run.
    model_at(n_list.first().copied().unwrap_or(100).max(4))?;

    let mut parameters = BTreeMap::new();
    parameters.insert("model".into(), model_name(args.model).into());
    parameters.insert("theta0".into(), fmt_f64(args.theta0));
    parameters.insert("omega".into(), args.omega.clone());
    parameters.insert("loss".into(), loss_name(args.loss).into());
    parameters.insert("lambda".into(), fmt_f64(args.lambda));
    parameters.insert("n_list".into(), args.n_list.clone());
    parameters.insert("reps".into(), args.reps.to_string());
    parameters.insert("budget_m".into(), fmt_f64(args.budget_m));
    parameters.insert("grid".into(), args.grid.to_string());
    parameters.insert("rules".into(), args.rules.clone());

    let seed = StreamSeed::new(args.seed, 0);
    let mut rows = Vec::new();
    for rule in &rules {
        let study = convergence_study(
            &model_at,
            rule,
            &loss,
            args.budget_m,
            args.grid,
            &n_list,
            args.reps,
            seed,
        )?;
        for r in study {
            rows.push(vec![
                Cell::S(rule.kind.name().into()),
                Cell::U(r.n as u64),
                Cell::F(r.value),
                Cell::F(r.stderr),
                Cell::F(r.worst_h),
                Cell::F(r.v_star),
                Cell::F(r.ratio),
            ]);
        }
    }
    Ok(Outcome {
        manifest: Manifest {
            command: "mc",
            parameters,
            root_seed: args.seed,
        },
        table: Table {
            columns: vec![
                "rule",
                "n",
                "worst_risk",
                "stderr",
                "argmax_h",
                "v_star",
                "ratio",
            ],
            rows,
        },
        exit: 0,
        out: args.out.clone(),
        format: args.format,
    })
}

fn cmd_profile(args: &ProfileArgs) -> Result<Outcome, Failure> {
    if !matches!(args.model, ModelArg::Bernoulli) {
        return Err(Failure::usage("profile: only --model bernoulli is supported"));
    }
    let grid = parse_range(&args.theta_grid, "--theta-grid")?;
    let loss = loss_spec(args.loss, args.lambda, args.bound_c, args.trunc_k, 20.0)?;
    let shift = args.mu_shift;
    let profile = reference_value_profile(
        &grid,
        &|theta| 1.0 / (theta * (1.0 - theta)),
        &move |theta| theta - shift,
        &|_theta| 1.0,
        &loss,
    )?;

    let mut parameters = BTreeMap::new();
    parameters.insert("model".into(), "bernoulli".into());
    parameters.insert("loss".into(), loss_name(args.loss).into());
    parameters.insert("lambda".into(), fmt_f64(args.lambda));
    parameters.insert("theta_grid".into(), args.theta_grid.clone());
    parameters.insert("mu_shift".into(), fmt_f64(args.mu_shift));

    let mut rows: Vec<Vec<Cell>> = profile
        .rows
        .iter()
        .map(|r| {
            vec![
                Cell::S("theta".into()),
                Cell::F(r.theta),
                Cell::F(r.sigma),
                r.value.map_or(Cell::Empty, Cell::F),
            ]
        })
        .collect();
    rows.push(vec![
        Cell::S("sup".into()),
        Cell::F(profile.arg_sup),
        Cell::Empty,
        Cell::F(profile.sup_value),
    ]);
    Ok(Outcome {
        manifest: Manifest {
            command: "profile",
            parameters,
            root_seed: 0,
        },
        table: Table {
            columns: vec!["row", "theta", "sigma_theta", "v_star_theta"],
            rows,
        },
        exit: 0,
        out: args.out.clone(),
        format: args.format,
    })
}

fn loss_name(loss: LossArg) -> &'static str {
    match loss {
        LossArg::Estimation => "estimation",
        LossArg::Treatment => "treatment",
        LossArg::Linex => "linex",
    }
}

fn model_name(model: ModelArg) -> &'static str {
    match model {
        ModelArg::Bernoulli => "bernoulli",
        ModelArg::Gaussian => "gaussian",
        ModelArg::Gmm => "gmm",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Errors only if a global pool already exists, which is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let start = Instant::now();
    let result = match &cli.command {
        Command::Limit(args) => cmd_limit(args),
        Command::Game(args) => cmd_game(args),
        Command::Mc(args) => cmd_mc(args),
        Command::Profile(args) => cmd_profile(args),
    };
    match result {
        Ok(outcome) => {
            let text = render(
                &outcome.manifest,
                &outcome.table,
                outcome.format,
                start.elapsed().as_millis(),
            );
            if let Some(path) = &outcome.out {
                if let Err(e) = std::fs::write(path, &text) {
                    eprintln!("error: cannot write {}: {e}", path.display());
                    return ExitCode::from(EXIT_NUMERIC);
                }
            } else {
                let mut stdout = std::io::stdout().lock();
                let _ = stdout.write_all(text.as_bytes());
            }
            if outcome.exit == EXIT_NO_CONVERGE {
                eprintln!("error: did not converge (partial solution emitted)");
            }
            ExitCode::from(outcome.exit)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
