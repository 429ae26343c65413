//! Experiment harness: the sample-complexity scaling study, the linear /
//! nonlinear DGP comparison, and the macro rolling-forecast benchmark, with
//! deterministic replication seeding and report emission.
//!
//! Every randomized step derives its seed from the master seed and the
//! integer coordinates of the work item, so sequential and parallel runs
//! produce identical records.
//!
//! Gradient-descent fits run on per-variable standardized data (statistics
//! from the training rows); fitted weight matrices are mapped back to the
//! raw scale before errors are reported. The rescaling multiplies mode 1 by
//! `diag(sd)` and mode 2 by `diag(1/sd)`, which changes no matrix or Tucker
//! rank.

pub mod config;
pub mod report;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{
    build_design, estimation_error, fit_lr, fit_ltr, fit_ols, FitReport, TrainConfig,
};
use crate::matrix::Matrix;
use crate::model::Model;
use crate::pipeline::{
    evaluate, rolling_forecast, standardize, Series, Standardization, TransformCode,
};
use crate::rng::derive_seed;
use crate::tar::{train_tar, Activation, TarArch};
use crate::tensor::Tensor3;
use crate::var::{
    generate_low_tucker_weights, generate_nl_dgp_with_truth, simulate_var, NoiseSpec, VarWeights,
    DEFAULT_BURN_IN,
};

/// Grid for the sample-complexity study.
#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub ranks: Vec<(usize, usize, usize)>,
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    /// Target values of `sqrt(N/T)`; `T = round(N / ratio^2)`.
    pub ratios: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorSel>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            ranks: vec![(2, 2, 2)],
            n: vec![9],
            p: vec![3],
            ratios: vec![0.15, 0.25, 0.35, 0.45],
            replications: 50,
            master_seed: 0,
            estimators: vec![EstimatorSel::Ols, EstimatorSel::Lr, EstimatorSel::Ltr],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSel {
    Ols,
    Lr,
    Ltr,
}

impl EstimatorSel {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorSel::Ols => "ols",
            EstimatorSel::Lr => "lr",
            EstimatorSel::Ltr => "ltr",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ols" => Ok(EstimatorSel::Ols),
            "lr" => Ok(EstimatorSel::Lr),
            "ltr" => Ok(EstimatorSel::Ltr),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator {other:?} (expected ols, lr, ltr)"
            ))),
        }
    }
}

/// One row of experiment output. `wall_seconds` is in-memory diagnostics
/// only; report files omit it so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub experiment: String,
    pub n: usize,
    pub p: usize,
    pub ranks: (usize, usize, usize),
    pub ratio: Option<f64>,
    pub t: usize,
    pub replication: usize,
    pub estimator: String,
    pub frob_error: Option<f64>,
    pub l2: Option<f64>,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub epochs: usize,
    pub converged: bool,
    pub non_unique: bool,
    pub skipped: Option<String>,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl ResultRecord {
    fn skipped(experiment: &str, n: usize, p: usize, ranks: (usize, usize, usize), ratio: Option<f64>, t: usize, reason: String) -> Self {
        ResultRecord {
            experiment: experiment.to_string(),
            n,
            p,
            ranks,
            ratio,
            t,
            replication: 0,
            estimator: "-".to_string(),
            frob_error: None,
            l2: None,
            rmse: None,
            mae: None,
            epochs: 0,
            converged: false,
            non_unique: false,
            skipped: Some(reason),
            seed: 0,
            wall_seconds: 0.0,
        }
    }
}

/// Maps a weight matrix fitted on standardized data back to the raw scale:
/// `W_raw(i, (j,k)) = sd_i W_std(i, (j,k)) / sd_j`.
fn unscale_weights(w_std: &Matrix, stats: &Standardization, n: usize, p: usize) -> Result<VarWeights> {
    let mut t = Tensor3::zeros((n, n, p));
    for k in 0..p {
        for j in 0..n {
            for i in 0..n {
                t.set(i, j, k, stats.sds[i] * w_std.get(i, k * n + j) / stats.sds[j]);
            }
        }
    }
    VarWeights::new(t)
}

/// Predictions made in standardized space, mapped back to raw units.
fn unscale_predictions(preds_std: &Matrix, stats: &Standardization) -> Matrix {
    Matrix::from_fn(preds_std.rows(), preds_std.cols(), |i, t| {
        stats.means[i] + stats.sds[i] * preds_std.get(i, t)
    })
}

// ---------------------------------------------------------------------------
// Sample complexity
// ---------------------------------------------------------------------------

pub const SAMPLE_COMPLEXITY_ID: &str = "sample_complexity";

/// Per grid cell: one weight draw shared by all replications (matching the
/// generation protocol), fresh noise per replication, estimation error in
/// Frobenius norm against the known tensor.
pub fn run_sample_complexity(
    grid: &ExperimentGrid,
    training: &TrainConfig,
) -> Result<Vec<ResultRecord>> {
    if grid.replications == 0 {
        return Err(Error::InvalidArgument("replications must be >= 1".into()));
    }
    if grid.estimators.is_empty() {
        return Err(Error::InvalidArgument("select at least one estimator".into()));
    }
    for &ratio in &grid.ratios {
        if !(ratio > 0.0) {
            return Err(Error::InvalidArgument(format!("ratio {ratio} must be positive")));
        }
    }
    let master = grid.master_seed;
    let mut records = Vec::new();
    for (ri, &ranks) in grid.ranks.iter().enumerate() {
        for &n in &grid.n {
            for &p in &grid.p {
                let cell_seed = derive_seed(master, &[1, ri as u64, n as u64, p as u64]);
                let w0 = match generate_low_tucker_weights(n, p, ranks, 0.9, cell_seed) {
                    Ok(w) => w,
                    Err(e) => {
                        records.push(ResultRecord::skipped(
                            SAMPLE_COMPLEXITY_ID,
                            n,
                            p,
                            ranks,
                            None,
                            0,
                            format!("weight generation failed: {e}"),
                        ));
                        continue;
                    }
                };
                for &ratio in &grid.ratios {
                    let t = (n as f64 / (ratio * ratio)).round() as usize;
                    if t < p + 1 {
                        records.push(ResultRecord::skipped(
                            SAMPLE_COMPLEXITY_ID,
                            n,
                            p,
                            ranks,
                            Some(ratio),
                            t,
                            format!("T = {t} is below P + 1 = {}", p + 1),
                        ));
                        continue;
                    }
                    let cell: Vec<Vec<ResultRecord>> = (0..grid.replications)
                        .into_par_iter()
                        .map(|rep| {
                            run_sc_replication(grid, training, &w0, ranks, ri, n, p, ratio, t, rep)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    records.extend(cell.into_iter().flatten());
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("the grid produced no work".into()));
    }
    Ok(records)
}

#[allow(clippy::too_many_arguments)]
fn run_sc_replication(
    grid: &ExperimentGrid,
    training: &TrainConfig,
    w0: &VarWeights,
    ranks: (usize, usize, usize),
    ri: usize,
    n: usize,
    p: usize,
    ratio: f64,
    t: usize,
    rep: usize,
) -> Result<Vec<ResultRecord>> {
    let master = grid.master_seed;
    let coords = [2u64, ri as u64, n as u64, p as u64, ratio.to_bits(), rep as u64];
    let sim_seed = derive_seed(master, &coords);
    let series = simulate_var(w0, &NoiseSpec::identity(n, sim_seed), t, DEFAULT_BURN_IN)?;
    let (std_series, stats) = standardize(&series, 0..series.len())?;
    let d = build_design(&std_series, p, true)?;

    let mut out = Vec::with_capacity(grid.estimators.len());
    for (ei, &est) in grid.estimators.iter().enumerate() {
        let fit_seed = derive_seed(
            master,
            &[3, ri as u64, n as u64, p as u64, ratio.to_bits(), rep as u64, ei as u64],
        );
        let cfg = TrainConfig {
            seed: fit_seed,
            ..training.clone()
        };
        let fit = match est {
            EstimatorSel::Ols => fit_ols(&d)?,
            EstimatorSel::Lr => fit_lr(&d, ranks.0, &cfg)?,
            EstimatorSel::Ltr => fit_ltr(&d, ranks, &cfg)?,
        };
        let raw = unscale_weights(&fit.weights.unfolded(), &stats, n, p)?;
        let raw_fit = FitReport {
            weights: raw,
            ..fit.clone()
        };
        let err = estimation_error(&raw_fit, w0)?;
        out.push(ResultRecord {
            experiment: SAMPLE_COMPLEXITY_ID.to_string(),
            n,
            p,
            ranks,
            ratio: Some(ratio),
            t,
            replication: rep,
            estimator: est.name().to_string(),
            frob_error: Some(err),
            l2: None,
            rmse: None,
            mae: None,
            epochs: fit.epochs_run,
            converged: fit.converged,
            non_unique: fit.non_unique,
            skipped: None,
            seed: fit_seed,
            wall_seconds: fit.wall_seconds,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// DGP comparison
// ---------------------------------------------------------------------------

pub const DGP_COMPARISON_ID: &str = "dgp_comparison";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dgp {
    Linear,
    Nonlinear,
}

impl Dgp {
    pub fn name(self) -> &'static str {
        match self {
            Dgp::Linear => "ldgp",
            Dgp::Nonlinear => "nldgp",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Dgp::Linear => 0,
            Dgp::Nonlinear => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpComparisonConfig {
    pub n: usize,
    pub p: usize,
    pub ranks: (usize, usize, usize),
    pub sequences: usize,
    /// Total sequence lengths; the last row of each sequence is the test
    /// point, the rest train the networks.
    pub seq_lengths: Vec<usize>,
    pub master_seed: u64,
    pub activation: Activation,
    pub training: TrainConfig,
    pub with_bias: bool,
}

impl Default for DgpComparisonConfig {
    fn default() -> Self {
        DgpComparisonConfig {
            n: 25,
            p: 3,
            ranks: (2, 2, 2),
            sequences: 50,
            seq_lengths: vec![501],
            master_seed: 0,
            activation: Activation::Sigmoid,
            training: TrainConfig::default(),
            with_bias: true,
        }
    }
}

const DGP_NETWORKS: [(&str, u64); 3] = [("tar2", 0), ("tar", 1), ("ltar", 2)];

/// Per sequence: generate, fit TAR-2 / TAR / LTAR, forecast the held-out
/// last observation, record the three metrics.
pub fn run_dgp_comparison(cfg: &DgpComparisonConfig) -> Result<Vec<ResultRecord>> {
    if cfg.sequences == 0 {
        return Err(Error::InvalidArgument("sequences must be >= 1".into()));
    }
    let mut records = Vec::new();
    for dgp in [Dgp::Linear, Dgp::Nonlinear] {
        for &len in &cfg.seq_lengths {
            if len < cfg.p + 3 {
                records.push(ResultRecord::skipped(
                    DGP_COMPARISON_ID,
                    cfg.n,
                    cfg.p,
                    cfg.ranks,
                    None,
                    len,
                    format!("sequence length {len} is too short"),
                ));
                continue;
            }
            let batch: Vec<Vec<ResultRecord>> = (0..cfg.sequences)
                .into_par_iter()
                .map(|i| run_dgp_sequence(cfg, dgp, len, i))
                .collect::<Result<Vec<_>>>()?;
            records.extend(batch.into_iter().flatten());
        }
    }
    Ok(records)
}

fn run_dgp_sequence(
    cfg: &DgpComparisonConfig,
    dgp: Dgp,
    len: usize,
    index: usize,
) -> Result<Vec<ResultRecord>> {
    let master = cfg.master_seed;
    let t_eff = len - cfg.p;
    let data_seed = derive_seed(master, &[10, dgp.tag(), len as u64, index as u64]);
    let series = match dgp {
        Dgp::Linear => {
            let w = generate_low_tucker_weights(cfg.n, cfg.p, cfg.ranks, 0.9, data_seed)?;
            let sim_seed = derive_seed(master, &[11, dgp.tag(), len as u64, index as u64]);
            simulate_var(&w, &NoiseSpec::identity(cfg.n, sim_seed), t_eff, DEFAULT_BURN_IN)?
        }
        Dgp::Nonlinear => {
            generate_nl_dgp_with_truth(cfg.n, cfg.p, cfg.ranks, t_eff, DEFAULT_BURN_IN, data_seed)?
                .0
        }
    };
    debug_assert_eq!(series.len(), len);

    let train_rows = len - 1;
    let (std_series, stats) = standardize(&series, 0..train_rows)?;
    let train = std_series.slice_rows(0, train_rows)?;
    let d = build_design(&train, cfg.p, true)?;
    let truth = Matrix::from_fn(cfg.n, 1, |i, _| series.values().get(train_rows, i));

    let mut out = Vec::with_capacity(DGP_NETWORKS.len());
    for (net, net_tag) in DGP_NETWORKS {
        let fit_seed = derive_seed(master, &[12, dgp.tag(), len as u64, index as u64, net_tag]);
        let train_cfg = TrainConfig {
            seed: fit_seed,
            ..cfg.training.clone()
        };
        let arch = match net {
            "tar2" => TarArch::Tar2(cfg.activation),
            "tar" => TarArch::Tar(cfg.activation),
            "ltar" => TarArch::Ltar,
            _ => unreachable!(),
        };
        let fit = train_tar(&d, arch, cfg.ranks, &train_cfg, cfg.with_bias)?;
        let model = Model::from_fit(&fit, d.means().to_vec(), fit_seed)?;
        let preds_std = rolling_forecast(&model, &std_series, train_rows, 1)?;
        let preds = unscale_predictions(&preds_std, &stats);
        let metrics = evaluate(&preds, &truth)?;
        out.push(ResultRecord {
            experiment: DGP_COMPARISON_ID.to_string(),
            n: cfg.n,
            p: cfg.p,
            ranks: cfg.ranks,
            ratio: None,
            t: len,
            replication: index,
            estimator: format!("{}_{}", dgp.name(), net),
            frob_error: None,
            l2: Some(metrics.l2_norm),
            rmse: Some(metrics.rmse),
            mae: Some(metrics.mae),
            epochs: fit.epochs_run,
            converged: fit.converged,
            non_unique: false,
            skipped: None,
            seed: fit_seed,
            wall_seconds: fit.wall_seconds,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Macro benchmark
// ---------------------------------------------------------------------------

pub const MACRO_ID: &str = "macro";

#[derive(Debug, Clone)]
pub struct MacroConfig {
    pub lags: usize,
    pub ranks: (usize, usize, usize),
    /// Hidden size of the MLP-1 (low-rank) baseline.
    pub hidden: usize,
    pub train_len: usize,
    pub test_len: usize,
    pub master_seed: u64,
    pub activation: Activation,
    pub training: TrainConfig,
    /// Standardize the series (statistics over all rows) before fitting.
    pub standardize: bool,
}

impl Default for MacroConfig {
    fn default() -> Self {
        MacroConfig {
            lags: 4,
            ranks: (4, 3, 2),
            hidden: 4,
            train_len: 104,
            test_len: 90,
            master_seed: 0,
            activation: Activation::Sigmoid,
            training: TrainConfig::default(),
            standardize: true,
        }
    }
}

/// The data a macro run consumes: a prepared series (already transformed to
/// stationarity if transform codes were attached) or a synthetic stand-in.
pub enum MacroInput {
    Series(Series),
    Synthetic { n: usize, rows: usize },
}

/// Per-model predictions and the truth slice, for trace emission.
#[derive(Debug)]
pub struct MacroArtifacts {
    pub names: Vec<String>,
    /// `N x test_len`, raw scale.
    pub truth: Matrix,
    /// Model name -> `N x test_len` predictions, raw scale.
    pub predictions: Vec<(String, Matrix)>,
}

const MACRO_MODELS: [&str; 5] = ["mlp0", "mlp1", "ltar", "tar", "tar2"];

/// Trains MLP-0 (= OLS), MLP-1 (= LR), LTAR, TAR and TAR-2 on the first
/// `train_len` rows and rolls one-step-ahead forecasts over the next
/// `test_len` rows without refitting.
pub fn run_macro_benchmark(
    input: MacroInput,
    cfg: &MacroConfig,
) -> Result<(Vec<ResultRecord>, MacroArtifacts)> {
    let series = match input {
        MacroInput::Series(s) => prepare_macro_series(s)?,
        MacroInput::Synthetic { n, rows } => synthetic_macro_series(n, rows, cfg)?,
    };
    let needed = cfg.train_len + cfg.test_len;
    if series.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "need at least {needed} rows after preprocessing (train {} + test {}), got {}; \
             expected schema: header row of names, optional transform-code row, >= {needed} data rows",
            cfg.train_len,
            cfg.test_len,
            series.len()
        )));
    }
    if cfg.train_len <= cfg.lags {
        return Err(Error::InvalidArgument(
            "train_len must exceed the lag order".into(),
        ));
    }
    let n = series.n_vars();

    let (work_series, stats) = if cfg.standardize {
        let (s, st) = standardize(&series, 0..series.len())?;
        (s, Some(st))
    } else {
        (series.clone(), None)
    };
    let train = work_series.slice_rows(0, cfg.train_len)?;
    let d = build_design(&train, cfg.lags, true)?;

    let truth = Matrix::from_fn(n, cfg.test_len, |i, t| {
        series.values().get(cfg.train_len + t, i)
    });

    let fits: Vec<(String, FitReport, u64)> = MACRO_MODELS
        .par_iter()
        .enumerate()
        .map(|(mi, &name)| -> Result<(String, FitReport, u64)> {
            let fit_seed = derive_seed(cfg.master_seed, &[30, mi as u64]);
            let train_cfg = TrainConfig {
                seed: fit_seed,
                ..cfg.training.clone()
            };
            let fit = match name {
                "mlp0" => fit_ols(&d)?,
                "mlp1" => fit_lr(&d, cfg.hidden, &train_cfg)?,
                "ltar" => train_tar(&d, TarArch::Ltar, cfg.ranks, &train_cfg, true)?,
                "tar" => train_tar(&d, TarArch::Tar(cfg.activation), cfg.ranks, &train_cfg, true)?,
                "tar2" => {
                    train_tar(&d, TarArch::Tar2(cfg.activation), cfg.ranks, &train_cfg, true)?
                }
                _ => unreachable!(),
            };
            Ok((name.to_string(), fit, fit_seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut predictions = Vec::new();
    for (name, fit, fit_seed) in &fits {
        let model = Model::from_fit(fit, d.means().to_vec(), *fit_seed)?;
        let preds_work = rolling_forecast(&model, &work_series, cfg.train_len, cfg.test_len)?;
        let preds = match &stats {
            Some(st) => unscale_predictions(&preds_work, st),
            None => preds_work,
        };
        let metrics = evaluate(&preds, &truth)?;
        records.push(ResultRecord {
            experiment: MACRO_ID.to_string(),
            n,
            p: cfg.lags,
            ranks: cfg.ranks,
            ratio: None,
            t: cfg.train_len,
            replication: 0,
            estimator: name.clone(),
            frob_error: None,
            l2: Some(metrics.l2_norm),
            rmse: Some(metrics.rmse),
            mae: Some(metrics.mae),
            epochs: fit.epochs_run,
            converged: fit.converged,
            non_unique: fit.non_unique,
            skipped: None,
            seed: *fit_seed,
            wall_seconds: fit.wall_seconds,
        });
        predictions.push((name.clone(), preds));
    }
    Ok((
        records,
        MacroArtifacts {
            names: series.names().to_vec(),
            truth,
            predictions,
        },
    ))
}

/// Applies the attached transform codes, if any.
fn prepare_macro_series(s: Series) -> Result<Series> {
    match s.codes() {
        Some(codes) => {
            let codes: Vec<TransformCode> = codes.to_vec();
            crate::pipeline::transform_series(&s, &codes)
        }
        None => Ok(s),
    }
}

/// Schema-compatible stand-in: a low-Tucker-rank VAR with the benchmark
/// geometry.
fn synthetic_macro_series(n: usize, rows: usize, cfg: &MacroConfig) -> Result<Series> {
    let seed = derive_seed(cfg.master_seed, &[20]);
    let w = generate_low_tucker_weights(n, cfg.lags, cfg.ranks, 0.9, seed)?;
    let noise_seed = derive_seed(cfg.master_seed, &[21]);
    simulate_var(
        &w,
        &NoiseSpec::identity(n, noise_seed),
        rows - cfg.lags,
        DEFAULT_BURN_IN,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_grid() -> ExperimentGrid {
        ExperimentGrid {
            ranks: vec![(2, 2, 2)],
            n: vec![6],
            p: vec![2],
            ratios: vec![0.35],
            replications: 3,
            master_seed: 11,
            estimators: vec![EstimatorSel::Ols, EstimatorSel::Lr, EstimatorSel::Ltr],
        }
    }

    #[test]
    fn sample_complexity_produces_expected_records() {
        let training = TrainConfig {
            max_epochs: 300,
            ..TrainConfig::default()
        };
        let records = run_sample_complexity(&tiny_grid(), &training).unwrap();
        assert_eq!(records.len(), 9);
        assert!(records.iter().all(|r| r.frob_error.unwrap().is_finite()));
        // T = round(6 / 0.35^2) = 49 >= NP = 12: unique solve.
        assert!(records.iter().all(|r| !r.non_unique));

        // Determinism: report bytes (wall clock excluded) are identical.
        let again = run_sample_complexity(&tiny_grid(), &training).unwrap();
        assert_eq!(
            crate::experiments::report::records_to_csv(&records),
            crate::experiments::report::records_to_csv(&again)
        );
    }

    #[test]
    fn sample_complexity_flags_infeasible_and_deficient_cells() {
        let mut grid = tiny_grid();
        grid.ratios = vec![3.0]; // T = round(6/9) = 1 < p + 1
        let training = TrainConfig::default();
        let records = run_sample_complexity(&grid, &training).unwrap();
        assert_eq!(records.len(), 1);
        assert!(records[0].skipped.is_some());

        // T < NP sets the non-uniqueness flag on OLS.
        let mut grid = tiny_grid();
        grid.ratios = vec![0.8]; // T = round(6/0.64) = 9 < NP = 12
        grid.estimators = vec![EstimatorSel::Ols];
        grid.replications = 2;
        let records = run_sample_complexity(&grid, &training).unwrap();
        assert!(records.iter().all(|r| r.non_unique));
    }

    #[test]
    fn dgp_comparison_emits_per_sequence_records() {
        let cfg = DgpComparisonConfig {
            n: 6,
            p: 2,
            ranks: (2, 2, 1),
            sequences: 2,
            seq_lengths: vec![61],
            master_seed: 5,
            training: TrainConfig {
                max_epochs: 200,
                ..TrainConfig::default()
            },
            ..DgpComparisonConfig::default()
        };
        let records = run_dgp_comparison(&cfg).unwrap();
        // 2 dgps x 2 sequences x 3 networks.
        assert_eq!(records.len(), 12);
        assert!(records.iter().all(|r| r.l2.unwrap().is_finite()));
        let again = run_dgp_comparison(&cfg).unwrap();
        assert_eq!(
            crate::experiments::report::records_to_csv(&records),
            crate::experiments::report::records_to_csv(&again)
        );
    }

    #[test]
    fn macro_smoke_run_completes() {
        let cfg = MacroConfig {
            train_len: 30,
            test_len: 10,
            lags: 2,
            ranks: (2, 2, 2),
            hidden: 2,
            master_seed: 3,
            training: TrainConfig {
                max_epochs: 150,
                ..TrainConfig::default()
            },
            ..MacroConfig::default()
        };
        let (records, artifacts) =
            run_macro_benchmark(MacroInput::Synthetic { n: 8, rows: 45 }, &cfg).unwrap();
        assert_eq!(records.len(), 5);
        assert_eq!(artifacts.predictions.len(), 5);
        for (_, preds) in &artifacts.predictions {
            assert_eq!(preds.shape(), (8, 10));
        }
        assert_eq!(artifacts.truth.shape(), (8, 10));

        // Too-short input is rejected with the schema in the message.
        let err =
            run_macro_benchmark(MacroInput::Synthetic { n: 8, rows: 35 }, &cfg).unwrap_err();
        assert!(err.to_string().contains("rows"));
    }
}
