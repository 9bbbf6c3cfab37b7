use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::analysis::{cv_dpe, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::linalg::{noisy_low_rank, randomized_svd, svd_exact, RngSeed};
use crate::model::{Dataset, ModelParams, PenaltyPair};
use crate::predict::{predict_batch, FittedModel, DEFAULT_NEIGHBORS};
use crate::solver::{fit_fapgar, zero_init, SolverConfig, TraceSummary};
use crate::synth::{generate, Scenario, SynthSpec};
use crate::tuning::{
    greedy_local_continuation, seed_lambda1, PenaltyGrid, SearchOptions, SearchTrace, DEFAULT_GRID_POINTS,
};

use super::config::FileConfig;
use super::data::{read_dataset, read_table, write_dataset};
use super::{
    BenchArgs, Command, ElasticityArgs, FitArgs, GenArgs, PredictArgs, ScenarioKind, SearchArgs, Status,
};

pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

pub fn run(command: &Command) -> Result<Status> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Search(a) => cmd_search(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Elasticity(a) => cmd_elasticity(a),
        Command::Gen(a) => cmd_gen(a),
        Command::BenchSvd(a) => cmd_bench_svd(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidInput(format!(
            "{} is not a readable file",
            path.display()
        )));
    }
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn required(value: Option<f64>, name: &str) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidInput(format!("--{name} is required (flag or config file)")))
}

fn penalties(flag1: Option<f64>, flag2: Option<f64>, file: &FileConfig) -> Result<PenaltyPair> {
    PenaltyPair::new(
        required(flag1.or(file.lambda1), "lambda1")?,
        required(flag2.or(file.lambda2), "lambda2")?,
    )
}

fn neighbors(flag: Option<usize>, file: &FileConfig, n: usize) -> Result<usize> {
    let k = flag.or(file.k).unwrap_or(DEFAULT_NEIGHBORS);
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    Ok(k.min(n))
}

#[derive(Serialize)]
struct FitReport {
    penalties: PenaltyPair,
    solver: SolverConfig,
    summary: TraceSummary,
}

fn cmd_fit(args: &FitArgs) -> Result<Status> {
    let file = FileConfig::from_args(&args.solver)?;
    let solver = file.solver(&args.solver)?;
    let pen = penalties(args.lambda1, args.lambda2, &file)?;
    let out_dir = file.out_dir(&args.out_dir);
    require_file(&args.data)?;
    prepare_dir(&out_dir)?;

    let dataset = read_dataset(&args.data)?;
    let k = neighbors(args.k, &file, dataset.n_samples())?;
    let (params, trace) = fit_fapgar(&dataset, pen, &solver, &zero_init(&dataset))?;
    FittedModel::from_fit(&dataset, params, k)?.save(&out_dir.join("model.json"))?;
    let mut csv = create(&out_dir.join("trace.csv"))?;
    trace.write_csv(&mut csv)?;
    csv.flush()?;
    write_json(
        &out_dir.join("trace.json"),
        &FitReport {
            penalties: pen,
            solver,
            summary: trace.summary(),
        },
    )?;
    if trace.converged() {
        Ok(Status::Ok)
    } else {
        eprintln!("warning: no convergence within {} iterations", solver.max_iters);
        Ok(Status::NotConverged)
    }
}

/// Seeded split into (train, validation) with `fraction` of the rows held
/// out (at least one row on each side).
pub fn validation_split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.n_samples();
    if !(fraction > 0.0 && fraction < 1.0) || n < 2 {
        return Err(Error::InvalidInput(format!(
            "validation fraction {fraction} needs to lie in (0, 1) with at least 2 rows"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngSeed(seed).child(1000).rng());
    let held = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let (val, train) = order.split_at(held);
    Ok((dataset.subset(train)?, dataset.subset(val)?))
}

#[derive(Serialize)]
struct SearchReport<'a> {
    train_size: usize,
    val_size: usize,
    seed_lambda1: f64,
    options: SearchOptions,
    #[serde(flatten)]
    trace: &'a SearchTrace,
}

fn cmd_search(args: &SearchArgs) -> Result<Status> {
    let file = FileConfig::from_args(&args.solver)?;
    let solver = file.solver(&args.solver)?;
    let out_dir = file.out_dir(&args.out_dir);
    require_file(&args.data)?;
    if let Some(v) = &args.val {
        require_file(v)?;
    }
    prepare_dir(&out_dir)?;

    let data = read_dataset(&args.data)?;
    let (train, val) = match &args.val {
        Some(path) => (data, read_dataset(path)?),
        None => {
            let fraction = args
                .val_fraction
                .or(file.val_fraction)
                .unwrap_or(DEFAULT_VAL_FRACTION);
            validation_split(&data, fraction, solver.seed)?
        }
    };
    if val.feature_names() != train.feature_names() {
        return Err(Error::InvalidInput(
            "validation columns differ from training columns".into(),
        ));
    }
    let grid = match (&args.lambda1_grid, &args.lambda2_grid) {
        (Some(l1), Some(l2)) => PenaltyGrid::new(l1.clone(), l2.clone())?,
        (None, None) => {
            let points = args
                .grid_points
                .or(file.grid_points)
                .unwrap_or(DEFAULT_GRID_POINTS);
            PenaltyGrid::default_for(&train, points)?
        }
        _ => {
            return Err(Error::InvalidInput(
                "give both --lambda1-grid and --lambda2-grid or neither".into(),
            ))
        }
    };
    let options = SearchOptions {
        solver,
        k: neighbors(args.k, &file, train.n_samples())?,
    };
    let init = seed_lambda1(&train, &val, &grid, &options)?;
    let result = greedy_local_continuation(&train, &val, &grid, init, &options)?;
    let trace = &result.trace;

    write_json(
        &out_dir.join("search.json"),
        &SearchReport {
            train_size: train.n_samples(),
            val_size: val.n_samples(),
            seed_lambda1: init,
            options,
            trace,
        },
    )?;
    let mut visited = create(&out_dir.join("visited.csv"))?;
    trace.write_visited_csv(&mut visited)?;
    FittedModel::from_fit(&train, result.params, options.k)?.save(&out_dir.join("model.json"))?;

    let selected_converged = trace
        .evaluations
        .iter()
        .rev()
        .find(|e| e.lambda1 == trace.selected.lambda1 && e.lambda2 == trace.selected.lambda2)
        .is_none_or(|e| e.converged);
    Ok(if selected_converged {
        Status::Ok
    } else {
        Status::NotConverged
    })
}

fn cmd_predict(args: &PredictArgs) -> Result<Status> {
    require_file(&args.model)?;
    require_file(&args.data)?;
    let mut model = FittedModel::load(&args.model)?;
    if let Some(k) = args.k {
        model = model.with_k(k)?;
    }
    let table = read_table(&args.data, false)?;
    if table.feature_names != model.feature_names() {
        return Err(Error::InvalidInput(format!(
            "feature columns {:?} do not match the model's {:?}",
            table.feature_names,
            model.feature_names()
        )));
    }
    let predictions = predict_batch(&table.features, &model)?;
    let warned = predictions.iter().filter(|p| p.warning.is_some()).count();
    if warned > 0 {
        eprintln!("warning: {warned} rows used a fallback neighbor estimate");
    }
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    let mut header = vec!["label".to_string()];
    header.extend((1..=model.num_classes()).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for p in &predictions {
        let mut record = vec![(p.label + 1).to_string()];
        record.extend(p.probabilities.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}

fn cmd_elasticity(args: &ElasticityArgs) -> Result<Status> {
    let file = FileConfig::from_args(&args.solver)?;
    let solver = file.solver(&args.solver)?;
    let pen = penalties(args.lambda1, args.lambda2, &file)?;
    let out_dir = file.out_dir(&args.out_dir);
    require_file(&args.data)?;
    prepare_dir(&out_dir)?;

    let dataset = read_dataset(&args.data)?;
    let folds = args.folds.or(file.folds).unwrap_or(DEFAULT_FOLDS);
    let k = args.k.or(file.k).unwrap_or(DEFAULT_NEIGHBORS);
    let report = cv_dpe(&dataset, folds, pen, &solver, solver.seed, k)?;
    for f in report.fold_results.iter().filter(|f| f.excluded.is_some()) {
        eprintln!(
            "warning: fold {} excluded: {}",
            f.fold + 1,
            f.excluded.as_deref().unwrap_or("")
        );
    }
    write_json(&out_dir.join("elasticity.json"), &report)?;
    let mut csv = create(&out_dir.join("elasticity.csv"))?;
    report.write_csv(&mut csv)?;
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct TruthDoc<'a> {
    spec: &'a SynthSpec,
    alpha: Vec<f64>,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    upsilon: Vec<Vec<f64>>,
    clusters: &'a Option<Vec<usize>>,
}

fn rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn cmd_gen(args: &GenArgs) -> Result<Status> {
    let scenario = match args.scenario {
        ScenarioKind::GaussianLowRank => Scenario::GaussianLowRank {
            rank: args.rank,
            scale: args.scale,
        },
        ScenarioKind::Clustered => Scenario::Clustered {
            clusters: args.rank,
            jitter: args.jitter,
            scale: args.scale,
        },
        ScenarioKind::Factorized => Scenario::Factorized {
            rank: args.rank,
            scale: args.scale,
        },
    };
    let mut spec = SynthSpec::new(args.samples, args.features, args.classes, scenario).with_seed(args.seed);
    spec.zero_row_fraction = args.zero_row_fraction;
    spec.binary_features = !args.gaussian_features;
    prepare_dir(&args.out_dir)?;
    let inst = generate(&spec)?;

    let mut data = create(&args.out_dir.join("data.csv"))?;
    write_dataset(&inst.dataset, &mut data)?;
    data.flush()?;
    write_truth(
        &args.out_dir.join("truth.json"),
        &spec,
        &inst.truth,
        &inst.clusters,
    )?;
    Ok(Status::Ok)
}

fn write_truth(
    path: &PathBuf,
    spec: &SynthSpec,
    truth: &ModelParams,
    clusters: &Option<Vec<usize>>,
) -> Result<()> {
    write_json(
        path,
        &TruthDoc {
            spec,
            alpha: truth.alpha.to_vec(),
            u: rows(&truth.u),
            upsilon: rows(&truth.upsilon.to_dense()),
            clusters,
        },
    )
}

/// One row of the SVD benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub rows: usize,
    pub cols: usize,
    pub k: usize,
    pub randomized_seconds: f64,
    pub deterministic_seconds: f64,
    pub speedup: f64,
    /// `‖s_rand − s_exact[..k]‖ / ‖s_exact[..k]‖`.
    pub relative_error: f64,
}

/// Times [`randomized_svd`] against [`svd_exact`] on noisy low-rank
/// matrices, one matrix per column count.
pub fn bench_svd(
    rows: usize,
    cols: &[usize],
    ks: &[usize],
    signal_rank: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut out = Vec::new();
    for &c in cols {
        let a = noisy_low_rank(rows, c, signal_rank, noise, RngSeed(seed).child(c as u64));
        let clock = Instant::now();
        let exact = svd_exact(&a)?;
        let deterministic_seconds = clock.elapsed().as_secs_f64();
        for &k in ks {
            if k == 0 || k > rows.min(c) {
                return Err(Error::InvalidInput(format!(
                    "k = {k} out of range for {rows}x{c}"
                )));
            }
            let clock = Instant::now();
            let approx = randomized_svd(&a, k, RngSeed(seed).child(c as u64 + 1))?;
            let randomized_seconds = clock.elapsed().as_secs_f64();
            let reference = exact.s.slice(ndarray::s![..k]);
            let diff = (&approx.s - &reference).mapv(|v| v * v).sum().sqrt();
            let norm = reference.mapv(|v| v * v).sum().sqrt();
            out.push(BenchRow {
                rows,
                cols: c,
                k,
                randomized_seconds,
                deterministic_seconds,
                speedup: deterministic_seconds / randomized_seconds,
                relative_error: diff / norm,
            });
        }
    }
    Ok(out)
}

fn cmd_bench_svd(args: &BenchArgs) -> Result<Status> {
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_dir(dir)?;
    }
    let results = bench_svd(
        args.rows,
        &args.cols,
        &args.k,
        args.signal_rank,
        args.noise,
        args.seed,
    )?;
    let mut w = csv::Writer::from_writer(create(&args.out)?);
    for r in &results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(Status::Ok)
}
