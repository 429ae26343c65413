//! `tarnet` command line: simulate synthetic sequences, fit estimators and
//! networks, run rolling forecasts, apply stationarity transforms, drive the
//! experiment harness, and inspect saved models.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tarnet::error::Error as LibError;
use tarnet::estimators::{
    build_design, fit_lr, fit_ltr, fit_ols, parameter_count, FitReport, ModelKind, TrainConfig,
};
use tarnet::experiments::{
    config::{parse_ranks, training_from_config, ConfigFile, TRAINING_KEYS},
    report, run_dgp_comparison, run_macro_benchmark, run_sample_complexity,
    DgpComparisonConfig, EstimatorSel, ExperimentGrid, MacroConfig, MacroInput,
    DGP_COMPARISON_ID, MACRO_ID, SAMPLE_COMPLEXITY_ID,
};
use tarnet::matrix::Matrix;
use tarnet::model::Model;
use tarnet::pipeline::{
    evaluate, load_series_csv, rolling_forecast, save_series_csv, standardize, transform_series,
    Forecaster, Series, TransformCode,
};
use tarnet::rng::derive_seed;
use tarnet::tar::{train_tar, Activation, TarArch};
use tarnet::var::{
    generate_low_tucker_weights, generate_nl_dgp_with_truth, simulate_var, spectral_summary,
    NoiseSpec, DEFAULT_BURN_IN, DEFAULT_MU_GRID,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<LibError> for Failure {
    fn from(e: LibError) -> Self {
        let code = match &e {
            LibError::NonFinite(_) | LibError::Numerical(_) | LibError::Diverged(_) => {
                EXIT_NUMERICAL
            }
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "tarnet",
    version,
    about = "Low-Tucker-rank autoregressive modeling: simulation, estimation, forecasting and experiments"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a synthetic sequence and write it as CSV plus a truth sidecar.
    Simulate(SimulateArgs),
    /// Fit an estimator or network to a series CSV and save the model.
    Fit(FitArgs),
    /// Rolling one-step-ahead forecasts from a saved model.
    Forecast(ForecastArgs),
    /// Apply stationarity transform codes and/or standardization to a CSV.
    Transform(TransformArgs),
    /// Run an experiment from a config file and emit reports.
    Experiment(ExperimentArgs),
    /// Print a saved model's structure and training summary.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpKind {
    /// Linear low-Tucker-rank VAR.
    Ltr,
    /// Nonlinear cosine-encoder recursion.
    Nl,
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of variables N.
    #[arg(long)]
    n: usize,
    /// Lag order P.
    #[arg(long)]
    p: usize,
    /// Tucker ranks r1,r2,r3.
    #[arg(long)]
    ranks: String,
    /// Effective sample size T (the CSV gets T + P rows).
    #[arg(long)]
    t: usize,
    /// Points discarded before recording.
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Data generating process.
    #[arg(long, value_enum, default_value = "ltr")]
    dgp: DgpKind,
    /// Output CSV path; the truth sidecar lands next to it as *.truth.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Ols,
    Lr,
    Ltr,
    Tar,
    Tar2,
}

#[derive(Args)]
struct TrainingFlags {
    #[arg(long, default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Stop once the loss change per epoch is below this.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 10_000)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
}

impl TrainingFlags {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            loss_drop_tolerance: self.tolerance,
            max_epochs: self.max_epochs,
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: FitMethod,
    /// Tucker ranks r1,r2,r3 (ltr, tar, tar2).
    #[arg(long)]
    ranks: Option<String>,
    /// Matrix rank (lr).
    #[arg(long)]
    r: Option<usize>,
    /// Lag order P.
    #[arg(long)]
    lags: usize,
    /// Input series CSV.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the model JSON.
    #[arg(long)]
    model_out: PathBuf,
    /// Add an output bias vector (tar, tar2).
    #[arg(long)]
    bias: bool,
    /// Activation for tar/tar2: relu, sigmoid or identity.
    #[arg(long)]
    activation: Option<String>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Rows the model was trained on (forecasting starts after them).
    #[arg(long)]
    train_len: usize,
    #[arg(long)]
    test_len: usize,
    /// Also write a truth-vs-prediction trace for this variable.
    #[arg(long)]
    per_variable: Option<String>,
    /// Output directory for predictions.csv / metrics.json / traces.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// The input CSV carries a transform-code row after the header.
    #[arg(long)]
    codes_row: bool,
    /// Comma-separated per-variable codes 1..6, overriding any embedded row.
    #[arg(long)]
    codes: Option<String>,
    /// Standardize to zero mean and unit variance after transforming.
    #[arg(long)]
    standardize: bool,
    /// Number of leading rows used for the standardization statistics
    /// (default: all rows).
    #[arg(long)]
    stats_len: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentKind {
    SampleComplexity,
    DgpComparison,
    Macro,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    kind: ExperimentKind,
    #[arg(long)]
    config: PathBuf,
    /// Input CSV for the macro benchmark; absent runs the synthetic stand-in.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_USAGE)
            };
        }
    };
    init_thread_pool();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// `TARNET_THREADS` caps worker parallelism (0 or unset = automatic).
fn init_thread_pool() {
    if let Ok(v) = std::env::var("TARNET_THREADS") {
        if let Ok(threads) = v.trim().parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::Forecast(args) => cmd_forecast(args),
        Cmd::Transform(args) => cmd_transform(args),
        Cmd::Experiment(args) => cmd_experiment(args),
        Cmd::Inspect(args) => cmd_inspect(args),
    }
}

fn parse_ranks_flag(text: &str, n: usize, p: usize) -> Result<(usize, usize, usize), Failure> {
    let ranks = parse_ranks(text).map_err(|e| Failure::usage(e.to_string()))?;
    let (r1, r2, r3) = ranks;
    if r1 == 0 || r1 > n || r2 == 0 || r2 > n || r3 == 0 || r3 > p {
        return Err(Failure::usage(format!(
            "ranks {r1},{r2},{r3} are infeasible: need 1 <= r1,r2 <= N = {n} and 1 <= r3 <= P = {p}"
        )));
    }
    Ok(ranks)
}

fn cmd_simulate(args: SimulateArgs) -> CliResult {
    if args.n == 0 || args.p == 0 || args.t == 0 {
        return Err(Failure::usage("--n, --p and --t must be positive"));
    }
    let ranks = parse_ranks_flag(&args.ranks, args.n, args.p)?;
    let (series, truth) = match args.dgp {
        DgpKind::Ltr => {
            let w = generate_low_tucker_weights(args.n, args.p, ranks, 0.9, args.seed)?;
            let noise = NoiseSpec::identity(args.n, derive_seed(args.seed, &[1]));
            let s = simulate_var(&w, &noise, args.t, args.burn_in)?;
            (s, w)
        }
        DgpKind::Nl => generate_nl_dgp_with_truth(
            args.n,
            args.p,
            ranks,
            args.t,
            args.burn_in,
            args.seed,
        )?,
    };
    save_series_csv(&args.out, &series, false)?;

    let spectral = spectral_summary(&truth, &Matrix::identity(args.n), DEFAULT_MU_GRID)?;
    let tensor = truth.tensor();
    let (d1, d2, d3) = tensor.dims();
    let mut row_major = Vec::with_capacity(d1 * d2 * d3);
    for i1 in 0..d1 {
        for i2 in 0..d2 {
            for i3 in 0..d3 {
                row_major.push(tensor.get(i1, i2, i3));
            }
        }
    }
    let sidecar = serde_json::json!({
        "format_version": 1,
        "kind": "truth",
        "dgp": match args.dgp { DgpKind::Ltr => "ltr", DgpKind::Nl => "nl" },
        "n": args.n,
        "p": args.p,
        "ranks": [ranks.0, ranks.1, ranks.2],
        "seed": args.seed,
        "weights": { "dims": [d1, d2, d3], "data": row_major },
        "spectral": spectral,
    });
    let sidecar_path = truth_sidecar_path(&args.out);
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).map_err(LibError::from)?)
        .map_err(LibError::from)?;

    println!(
        "wrote {} rows x {} variables to {} (truth sidecar: {})",
        series.len(),
        series.n_vars(),
        args.out.display(),
        sidecar_path.display()
    );
    println!(
        "spectral: mu_min {:.4} mu_max {:.4} M {:.4}",
        spectral.mu_min, spectral.mu_max, spectral.m_constant
    );
    Ok(())
}

fn truth_sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

fn cmd_fit(args: FitArgs) -> CliResult {
    // Flag compatibility first: these are usage errors.
    match args.method {
        FitMethod::Ols => {
            if args.ranks.is_some() || args.r.is_some() {
                return Err(Failure::usage("--method ols takes neither --ranks nor --r"));
            }
        }
        FitMethod::Lr => {
            if args.r.is_none() || args.ranks.is_some() {
                return Err(Failure::usage("--method lr needs --r (and not --ranks)"));
            }
        }
        FitMethod::Ltr | FitMethod::Tar | FitMethod::Tar2 => {
            if args.ranks.is_none() || args.r.is_some() {
                return Err(Failure::usage(
                    "--method ltr/tar/tar2 needs --ranks r1,r2,r3 (and not --r)",
                ));
            }
        }
    }
    let activation = match (&args.method, &args.activation) {
        (FitMethod::Tar | FitMethod::Tar2, Some(name)) => {
            Activation::from_name(name).map_err(|e| Failure::usage(e.to_string()))?
        }
        (FitMethod::Tar | FitMethod::Tar2, None) => Activation::Relu,
        (_, Some(_)) => {
            return Err(Failure::usage("--activation only applies to tar/tar2"));
        }
        (_, None) => Activation::Identity,
    };
    if args.bias && !matches!(args.method, FitMethod::Tar | FitMethod::Tar2) {
        return Err(Failure::usage(
            "--bias only applies to tar/tar2 (linear fits train on centered data)",
        ));
    }
    if args.lags == 0 {
        return Err(Failure::usage("--lags must be positive"));
    }

    let series = load_series_csv(&args.input, false)?;
    let d = build_design(&series, args.lags, true)?;
    let cfg = args.training.to_config();
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;

    let fit: FitReport = match args.method {
        FitMethod::Ols => fit_ols(&d)?,
        FitMethod::Lr => fit_lr(&d, args.r.unwrap(), &cfg)?,
        FitMethod::Ltr => fit_ltr(&d, parse_ranks(args.ranks.as_deref().unwrap())?, &cfg)?,
        FitMethod::Tar => train_tar(
            &d,
            TarArch::Tar(activation),
            parse_ranks(args.ranks.as_deref().unwrap())?,
            &cfg,
            args.bias,
        )?,
        FitMethod::Tar2 => train_tar(
            &d,
            TarArch::Tar2(activation),
            parse_ranks(args.ranks.as_deref().unwrap())?,
            &cfg,
            args.bias,
        )?,
    };
    if !fit.final_loss.is_finite() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("training ended with non-finite loss {}", fit.final_loss),
        });
    }
    let model = Model::from_fit(&fit, d.means().to_vec(), cfg.seed)?;
    model.save(&args.model_out)?;

    println!("method: {}", model.kind());
    println!("data: N = {}, P = {}, T = {}", d.n(), d.p(), d.t());
    println!("parameters: {}", model.parameter_count());
    println!("epochs: {}", fit.epochs_run);
    println!("final loss: {:.4e}", fit.final_loss);
    println!("converged: {}", fit.converged);
    if fit.lr_halvings > 0 {
        println!("learning-rate halvings: {}", fit.lr_halvings);
    }
    println!("wall seconds: {:.3}", fit.wall_seconds);
    println!("model written to {}", args.model_out.display());
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> CliResult {
    let model = Model::load(&args.model)?;
    let series = load_series_csv(&args.input, false)?;
    if series.n_vars() != model.n_vars() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "model expects N = {} (P = {}), input has {} variables",
                model.n_vars(),
                model.lag_order(),
                series.n_vars()
            ),
        });
    }
    let preds = rolling_forecast(&model, &series, args.train_len, args.test_len)?;
    let n = series.n_vars();
    let truth = Matrix::from_fn(n, args.test_len, |i, t| {
        series.values().get(args.train_len + t, i)
    });
    let metrics = evaluate(&preds, &truth)?;

    std::fs::create_dir_all(&args.out).map_err(LibError::from)?;
    // Predictions as time-major CSV, loader-compatible.
    let pred_rows = Matrix::from_fn(args.test_len, n, |t, i| preds.get(i, t));
    let pred_series = Series::new(series.names().to_vec(), pred_rows)?;
    let pred_path = args.out.join("predictions.csv");
    save_series_csv(&pred_path, &pred_series, false)?;

    let metrics_path = args.out.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics).map_err(LibError::from)?,
    )
    .map_err(LibError::from)?;

    if let Some(name) = &args.per_variable {
        let idx = series.column_index(name).ok_or_else(|| Failure {
            code: EXIT_DATA,
            message: format!("variable {name:?} not found in the input header"),
        })?;
        let mut text = String::from("step,truth,prediction\n");
        for t in 0..args.test_len {
            text.push_str(&format!(
                "{},{:.16e},{:.16e}\n",
                t + 1,
                truth.get(idx, t),
                preds.get(idx, t)
            ));
        }
        let trace_path = args.out.join(format!("trace_{name}.csv"));
        std::fs::write(&trace_path, text).map_err(LibError::from)?;
        println!("trace written to {}", trace_path.display());
    }

    println!(
        "l2 {:.4}  rmse {:.4}  mae {:.4}",
        metrics.l2_norm, metrics.rmse, metrics.mae
    );
    println!("predictions written to {}", pred_path.display());
    println!("metrics written to {}", metrics_path.display());
    Ok(())
}

fn cmd_transform(args: TransformArgs) -> CliResult {
    let series = load_series_csv(&args.input, args.codes_row)?;
    let codes: Option<Vec<TransformCode>> = match &args.codes {
        Some(text) => {
            let mut parsed = Vec::new();
            for part in text.split(',') {
                let raw: u8 = part.trim().parse().map_err(|_| {
                    Failure::usage(format!("invalid transform code {part:?} in --codes"))
                })?;
                parsed.push(TransformCode::new(raw).map_err(|e| Failure::usage(e.to_string()))?);
            }
            Some(parsed)
        }
        None => series.codes().map(|c| c.to_vec()),
    };
    if codes.is_none() && !args.standardize {
        return Err(Failure::usage(
            "nothing to do: pass --codes/--codes-row and/or --standardize",
        ));
    }

    let mut out = series.clone();
    if let Some(codes) = &codes {
        out = transform_series(&out, codes)?;
        println!(
            "transformed {} variables; rows {} -> {}",
            out.n_vars(),
            series.len(),
            out.len()
        );
    }
    if args.standardize {
        let end = args.stats_len.unwrap_or(out.len()).min(out.len());
        let (standardized, stats) = standardize(&out, 0..end)?;
        out = standardized;
        println!(
            "standardized with statistics from rows 0..{end} (population convention); first sd {:.4}",
            stats.sds.first().copied().unwrap_or(f64::NAN)
        );
    }
    save_series_csv(&args.out, &out, false)?;
    println!("wrote {} rows to {}", out.len(), args.out.display());
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Failure::usage(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let cfg = ConfigFile::parse(&text).map_err(|e| Failure::usage(e.to_string()))?;

    match args.kind {
        ExperimentKind::SampleComplexity => run_sample_complexity_cmd(&cfg),
        ExperimentKind::DgpComparison => run_dgp_comparison_cmd(&cfg),
        ExperimentKind::Macro => run_macro_cmd(&cfg, args.data.as_deref()),
    }
}

fn output_params(cfg: &ConfigFile, default_id: &str) -> Result<(PathBuf, String), Failure> {
    let out = cfg.section("output");
    let dir: String = out
        .get_or("dir", ".".to_string())
        .map_err(|e| Failure::usage(e.to_string()))?;
    let id: String = out
        .get_or("id", default_id.to_string())
        .map_err(|e| Failure::usage(e.to_string()))?;
    Ok((PathBuf::from(dir), id))
}

fn run_sample_complexity_cmd(cfg: &ConfigFile) -> CliResult {
    cfg.check_known(&[
        (
            "grid",
            &[
                "ranks",
                "n",
                "p",
                "ratios",
                "replications",
                "master_seed",
                "estimators",
            ],
        ),
        ("training", TRAINING_KEYS),
        ("output", &["dir", "id"]),
    ])
    .map_err(|e| Failure::usage(e.to_string()))?;

    let g = cfg.section("grid");
    let defaults = ExperimentGrid::default();
    let estimators = match g
        .get_list::<String>("estimators")
        .map_err(|e| Failure::usage(e.to_string()))?
    {
        Some(names) => names
            .iter()
            .map(|n| EstimatorSel::from_name(n))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::usage(e.to_string()))?,
        None => defaults.estimators.clone(),
    };
    let grid = ExperimentGrid {
        ranks: g
            .get_ranks_list("ranks")
            .map_err(|e| Failure::usage(e.to_string()))?
            .unwrap_or(defaults.ranks),
        n: g.get_list("n")
            .map_err(|e| Failure::usage(e.to_string()))?
            .unwrap_or(defaults.n),
        p: g.get_list("p")
            .map_err(|e| Failure::usage(e.to_string()))?
            .unwrap_or(defaults.p),
        ratios: g
            .get_list("ratios")
            .map_err(|e| Failure::usage(e.to_string()))?
            .unwrap_or(defaults.ratios),
        replications: g
            .get_or("replications", defaults.replications)
            .map_err(|e| Failure::usage(e.to_string()))?,
        master_seed: g
            .get_or("master_seed", defaults.master_seed)
            .map_err(|e| Failure::usage(e.to_string()))?,
        estimators,
    };
    let training = training_from_config(cfg, TrainConfig::default())
        .map_err(|e| Failure::usage(e.to_string()))?;
    let (dir, id) = output_params(cfg, SAMPLE_COMPLEXITY_ID)?;

    let records = run_sample_complexity(&grid, &training)?;
    let files = report::emit_report(&records, &dir, &id, grid.master_seed)?;
    print!("{}", report::format_aggregate_table(&records));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run_dgp_comparison_cmd(cfg: &ConfigFile) -> CliResult {
    cfg.check_known(&[
        (
            "grid",
            &[
                "n",
                "p",
                "ranks",
                "sequences",
                "seq_lengths",
                "master_seed",
                "activation",
                "with_bias",
            ],
        ),
        ("training", TRAINING_KEYS),
        ("output", &["dir", "id"]),
    ])
    .map_err(|e| Failure::usage(e.to_string()))?;

    let g = cfg.section("grid");
    let defaults = DgpComparisonConfig::default();
    let activation = match g.raw("activation") {
        Some(name) => Activation::from_name(name).map_err(|e| Failure::usage(e.to_string()))?,
        None => defaults.activation,
    };
    let run_cfg = DgpComparisonConfig {
        n: g.get_or("n", defaults.n)
            .map_err(|e| Failure::usage(e.to_string()))?,
        p: g.get_or("p", defaults.p)
            .map_err(|e| Failure::usage(e.to_string()))?,
        ranks: g
            .get_ranks_list("ranks")
            .map_err(|e| Failure::usage(e.to_string()))?
            .map(|v| v[0])
            .unwrap_or(defaults.ranks),
        sequences: g
            .get_or("sequences", defaults.sequences)
            .map_err(|e| Failure::usage(e.to_string()))?,
        seq_lengths: g
            .get_list("seq_lengths")
            .map_err(|e| Failure::usage(e.to_string()))?
            .unwrap_or(defaults.seq_lengths),
        master_seed: g
            .get_or("master_seed", defaults.master_seed)
            .map_err(|e| Failure::usage(e.to_string()))?,
        activation,
        training: training_from_config(cfg, defaults.training.clone())
            .map_err(|e| Failure::usage(e.to_string()))?,
        with_bias: g
            .get_or("with_bias", defaults.with_bias)
            .map_err(|e| Failure::usage(e.to_string()))?,
    };
    let (dir, id) = output_params(cfg, DGP_COMPARISON_ID)?;

    let records = run_dgp_comparison(&run_cfg)?;
    let files = report::emit_report(&records, &dir, &id, run_cfg.master_seed)?;
    print!("{}", report::format_aggregate_table(&records));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run_macro_cmd(cfg: &ConfigFile, data: Option<&Path>) -> CliResult {
    cfg.check_known(&[
        (
            "grid",
            &[
                "lags",
                "ranks",
                "hidden",
                "train_len",
                "test_len",
                "master_seed",
                "activation",
                "standardize",
                "codes_row",
                "synthetic_n",
                "synthetic_rows",
            ],
        ),
        ("training", TRAINING_KEYS),
        ("output", &["dir", "id", "trace_variable"]),
    ])
    .map_err(|e| Failure::usage(e.to_string()))?;

    let g = cfg.section("grid");
    let defaults = MacroConfig::default();
    let activation = match g.raw("activation") {
        Some(name) => Activation::from_name(name).map_err(|e| Failure::usage(e.to_string()))?,
        None => defaults.activation,
    };
    let run_cfg = MacroConfig {
        lags: g
            .get_or("lags", defaults.lags)
            .map_err(|e| Failure::usage(e.to_string()))?,
        ranks: g
            .get_ranks_list("ranks")
            .map_err(|e| Failure::usage(e.to_string()))?
            .map(|v| v[0])
            .unwrap_or(defaults.ranks),
        hidden: g
            .get_or("hidden", defaults.hidden)
            .map_err(|e| Failure::usage(e.to_string()))?,
        train_len: g
            .get_or("train_len", defaults.train_len)
            .map_err(|e| Failure::usage(e.to_string()))?,
        test_len: g
            .get_or("test_len", defaults.test_len)
            .map_err(|e| Failure::usage(e.to_string()))?,
        master_seed: g
            .get_or("master_seed", defaults.master_seed)
            .map_err(|e| Failure::usage(e.to_string()))?,
        activation,
        training: training_from_config(cfg, defaults.training.clone())
            .map_err(|e| Failure::usage(e.to_string()))?,
        standardize: g
            .get_or("standardize", defaults.standardize)
            .map_err(|e| Failure::usage(e.to_string()))?,
    };
    let codes_row: bool = g
        .get_or("codes_row", false)
        .map_err(|e| Failure::usage(e.to_string()))?;
    let (dir, id) = output_params(cfg, MACRO_ID)?;

    let input = match data {
        Some(path) => MacroInput::Series(load_series_csv(path, codes_row)?),
        None => {
            let n = g
                .get_or("synthetic_n", 40usize)
                .map_err(|e| Failure::usage(e.to_string()))?;
            let rows = g
                .get_or("synthetic_rows", 194usize)
                .map_err(|e| Failure::usage(e.to_string()))?;
            println!("no --data given: running the synthetic stand-in ({n} variables, {rows} rows)");
            MacroInput::Synthetic { n, rows }
        }
    };
    let (records, artifacts) = run_macro_benchmark(input, &run_cfg)?;
    let mut files = report::emit_report(&records, &dir, &id, run_cfg.master_seed)?;

    // Per-model prediction traces (time-major CSVs).
    for (model, preds) in &artifacts.predictions {
        let rows = Matrix::from_fn(preds.cols(), preds.rows(), |t, i| preds.get(i, t));
        let series = Series::new(artifacts.names.clone(), rows)?;
        let path = dir.join(format!("{id}_seed{}_pred_{model}.csv", run_cfg.master_seed));
        save_series_csv(&path, &series, false)?;
        files.push(path);
    }
    if let Some(var) = cfg.section("output").raw("trace_variable") {
        let idx = artifacts
            .names
            .iter()
            .position(|n| n == var)
            .ok_or_else(|| Failure {
                code: EXIT_DATA,
                message: format!("trace variable {var:?} not found in the data header"),
            })?;
        for (model, preds) in &artifacts.predictions {
            let mut text = String::from("step,truth,prediction\n");
            for t in 0..preds.cols() {
                text.push_str(&format!(
                    "{},{:.16e},{:.16e}\n",
                    t + 1,
                    artifacts.truth.get(idx, t),
                    preds.get(idx, t)
                ));
            }
            let path = dir.join(format!(
                "{id}_seed{}_trace_{model}_{var}.csv",
                run_cfg.master_seed
            ));
            std::fs::write(&path, text).map_err(LibError::from)?;
            files.push(path);
        }
    }
    print!("{}", report::format_aggregate_table(&records));
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CliResult {
    let model = Model::load(&args.model)?;
    println!("kind: {}", model.kind());
    println!("n: {}", model.n());
    println!("p: {}", model.p());
    match model.model_kind() {
        ModelKind::Lr { r } => println!("r: {r}"),
        ModelKind::Ltr { ranks } | ModelKind::Tar { ranks, .. } | ModelKind::Tar2 { ranks, .. } => {
            println!("ranks: {},{},{}", ranks.0, ranks.1, ranks.2)
        }
        ModelKind::Ols => {}
    }
    if let Some(act) = model.activation() {
        println!("activation: {}", act.name());
    }
    println!(
        "parameters: {}",
        parameter_count(&model.model_kind(), model.n(), model.p())
    );
    let t = model.training();
    println!("training: epochs {}, final loss {:.4e}, seed {}", t.epochs, t.final_loss, t.seed);
    Ok(())
}
