//! `cqrjma`: command-line front end for jackknife model averaging of
//! composite quantile regressions.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cqr_jma::averaging::{predict_averaged, prediction_error, EvaluationReport};
use cqr_jma::io::{emit_outputs, load_csv, write_json_file};
use cqr_jma::methods::{fit_methods, Method, MethodOptions};
use cqr_jma::models::{build_nested_models, fit_all, ColumnOrdering};
use cqr_jma::sim::{run_study, ErrorScheme, Setting, SimulationConfig};
use cqr_jma::workflows::{rolling_forecast, rolling_report, split_evaluation, WorkflowOptions};
use cqr_jma::{Dataset, Error, QuantileGrid, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "cqrjma", version, about = "Jackknife model averaging for composite quantile regression")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit nested candidate models and write their coefficients.
    Fit(FitArgs),
    /// Fit the averaging and selection methods on one dataset.
    Average(AverageArgs),
    /// Run a simulation study and write CPE tables.
    Simulate(SimulateArgs),
    /// Rolling one-step-ahead quantile forecasts over a time-ordered file.
    RealdataRolling(RollingArgs),
    /// Repeated random train/evaluation splits.
    RealdataSplits(SplitArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Headed numeric CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Name of the response column; every other column is a regressor.
    #[arg(long, default_value = "y")]
    response: String,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.05,0.5,0.95")]
    taus: String,
    /// Number of nested candidate models (default: one per regressor).
    #[arg(long)]
    models: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Nest regressors in file order instead of by |correlation| with y.
    #[arg(long)]
    given_order: bool,
}

#[derive(Args)]
struct AverageArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "mcvc,mcv0,cvc,aicc,sicc,saicc,ssicc")]
    methods: String,
    #[arg(long)]
    given_order: bool,
    /// Score every method on this file (same columns as --input).
    #[arg(long)]
    holdout: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design 1-4.
    #[arg(long)]
    setting: u8,
    /// homoscedastic, heteroscedastic (settings 1-3) or case1, case2, case3 (setting 4).
    #[arg(long)]
    scheme: String,
    #[arg(long)]
    n: usize,
    /// Comma-separated R^2 targets.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
    r2: String,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "mcvc,mcv0,cvc,aicc,sicc,saicc,ssicc")]
    methods: String,
    /// Candidate count (default: the design's rule).
    #[arg(long)]
    models: Option<usize>,
    /// Quantile levels (default: the design's grid).
    #[arg(long)]
    taus: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RollingArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated window lengths.
    #[arg(long)]
    t1: String,
    #[arg(long, default_value = "mcvc,mcv0,cvc,aicc,sicc,saicc,ssicc")]
    methods: String,
    /// Rank regressors once on the whole series instead of per window.
    #[arg(long)]
    sort_full_sample: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated training sizes.
    #[arg(long)]
    n1: String,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "mcvc,mcv0,cvc,aicc,sicc,saicc,ssicc")]
    methods: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Domain("--threads must be positive".into()));
        }
        // only fails if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Average(a) => average(a),
        Command::Simulate(a) => simulate(a),
        Command::RealdataRolling(a) => rolling(a),
        Command::RealdataSplits(a) => splits(a),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Domain(format!("invalid {what} '{s}'"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Domain(format!("empty {what} list")));
    }
    Ok(items)
}

struct Loaded {
    data: Dataset,
    grid: QuantileGrid,
    models: usize,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let data = load_csv(&args.input, &args.response)?;
    let grid = QuantileGrid::parse(&args.taus)?;
    let models = args.models.unwrap_or(data.p());
    Ok(Loaded { data, grid, models })
}

fn ordering(given: bool) -> ColumnOrdering {
    if given {
        ColumnOrdering::Given
    } else {
        ColumnOrdering::CorrelationSorted
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish(mut w: csv::Writer<BufWriter<fs::File>>, path: &Path) -> Result<()> {
    use std::io::Write;
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut inner = w.into_inner().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    inner.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn fit(args: FitArgs) -> Result<()> {
    let Loaded { data, grid, models } = load(&args.data)?;
    let candidates = build_nested_models(&data, models, ordering(args.given_order))?;
    let fits = fit_all(&data, &candidates, &grid)?;
    create_dir(&args.data.out)?;
    let path = args.data.out.join("coefficients.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["model", "term", "tau", "estimate"])?;
    for (model, f) in candidates.iter().zip(&fits) {
        for (k, b) in f.intercepts.iter().enumerate() {
            w.write_record([model.id.to_string(), "intercept".into(), grid.tau(k).to_string(), b.to_string()])?;
        }
        for (&j, b) in f.columns.iter().zip(&f.slopes) {
            w.write_record([model.id.to_string(), data.names()[j].clone(), String::new(), b.to_string()])?;
        }
    }
    finish(w, &path)?;
    write_json_file(args.data.out.join("fits.json"), &fits)?;
    for (model, f) in candidates.iter().zip(&fits) {
        let names: Vec<&str> = f.columns.iter().map(|&j| data.names()[j].as_str()).collect();
        println!("model {}: [{}] objective {}", model.id, names.join(", "), f.objective);
    }
    Ok(())
}

fn average(args: AverageArgs) -> Result<()> {
    let Loaded { data, grid, models } = load(&args.data)?;
    let methods = Method::parse_list(&args.methods)?;
    let candidates = build_nested_models(&data, models, ordering(args.given_order))?;
    let fitted = fit_methods(&data, &candidates, &grid, &methods, &MethodOptions::default())?;
    let out = &args.data.out;
    create_dir(out)?;

    let path = out.join("weights.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "tau", "model", "weight"])?;
    for f in &fitted.fits {
        for k in 0..grid.len() {
            for (m, wm) in f.predictor.weights(k).as_slice().iter().enumerate() {
                w.write_record([
                    f.method.name().to_string(),
                    grid.tau(k).to_string(),
                    candidates[m].id.to_string(),
                    wm.to_string(),
                ])?;
            }
        }
    }
    finish(w, &path)?;

    if let Some(table) = &fitted.criteria {
        let path = out.join("criteria.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["model", "size", "cv", "aic", "sic"])?;
        for e in &table.entries {
            w.write_record([e.id.to_string(), e.size.to_string(), e.cv.to_string(), e.aic.to_string(), e.sic.to_string()])?;
        }
        finish(w, &path)?;
    }

    let models_json: Vec<_> = candidates
        .iter()
        .map(|m| json!({ "id": m.id, "columns": m.columns.iter().map(|&j| data.names()[j].clone()).collect::<Vec<_>>() }))
        .collect();
    let methods_json: Vec<_> = fitted
        .fits
        .iter()
        .map(|f| {
            let weights: Vec<&[f64]> = (0..grid.len()).map(|k| f.predictor.weights(k).as_slice()).collect();
            json!({ "method": f.method, "selected": f.selected, "weights": weights })
        })
        .collect();
    write_json_file(
        out.join("average.json"),
        &json!({ "taus": grid.levels(), "models": models_json, "methods": methods_json }),
    )?;

    if let Some(holdout) = &args.holdout {
        let eval = load_csv(holdout, &args.data.response)?;
        if eval.names() != data.names() {
            return Err(Error::Domain(format!(
                "holdout columns [{}] differ from training columns [{}]",
                eval.names().join(", "),
                data.names().join(", ")
            )));
        }
        let path = out.join("holdout.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["method", "row", "tau", "y", "prediction"])?;
        for f in &fitted.fits {
            for i in 0..eval.n() {
                for k in 0..grid.len() {
                    let p = predict_averaged(&f.predictor, eval.row(i), k)?;
                    w.write_record([
                        f.method.name().to_string(),
                        (i + 1).to_string(),
                        grid.tau(k).to_string(),
                        eval.y()[i].to_string(),
                        p.to_string(),
                    ])?;
                }
            }
            println!("{}: holdout PE {}", f.method.label(), prediction_error(&f.predictor, &eval, &grid)?);
        }
        finish(w, &path)?;
    } else {
        for f in &fitted.fits {
            let w = f.predictor.weights(0).as_slice();
            let text: Vec<String> = w.iter().map(|v| format!("{v:.4}")).collect();
            println!("{}: weights [{}]", f.method.label(), text.join(", "));
        }
    }
    Ok(())
}

fn print_report(report: &EvaluationReport) {
    for c in &report.cells {
        println!("{} {} {}: CPE {}", report.axis, c.axis_value, c.method.label(), c.cpe);
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let setting = Setting::try_from(args.setting)?;
    let scheme: ErrorScheme = args.scheme.parse()?;
    let mut config = SimulationConfig::new(setting, scheme, args.n);
    config.r2 = parse_list(&args.r2, "R^2 target")?;
    config.replications = args.reps;
    config.seed = args.seed;
    config.methods = Method::parse_list(&args.methods)?;
    config.models = args.models;
    config.grid = args.taus.as_deref().map(QuantileGrid::parse).transpose()?;
    let report = run_study(&config)?;
    emit_outputs(&report, &args.out)?;
    write_json_file(args.out.join("config.json"), &config)?;
    print_report(&report);
    Ok(())
}

fn rolling(args: RollingArgs) -> Result<()> {
    let Loaded { data, grid, models } = load(&args.data)?;
    let methods = Method::parse_list(&args.methods)?;
    let t1s: Vec<usize> = parse_list(&args.t1, "window length")?;
    let options = WorkflowOptions {
        sort_full_sample: args.sort_full_sample,
        ..Default::default()
    };
    let results = t1s
        .iter()
        .map(|&t1| {
            rolling_forecast(&data, t1, &methods, &grid, models, &options)
                .map_err(|e| e.context(format!("window length {t1}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = rolling_report(&results)?;
    emit_outputs(&report, &args.data.out)?;
    let path = args.data.out.join("predictions.csv");
    let file = fs::File::create(&path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let mut buf = BufWriter::new(file);
    for (i, r) in results.iter().enumerate() {
        // one header for the whole file
        let mut part = Vec::new();
        r.write_predictions(&mut part)?;
        let text = String::from_utf8(part).expect("csv output is utf-8");
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |(_, b)| b) };
        std::io::Write::write_all(&mut buf, body.as_bytes()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    std::io::Write::flush(&mut buf).map_err(|e| Error::Io { path, source: e })?;
    print_report(&report);
    Ok(())
}

fn splits(args: SplitArgs) -> Result<()> {
    let Loaded { data, grid, models } = load(&args.data)?;
    let methods = Method::parse_list(&args.methods)?;
    let n1s: Vec<usize> = parse_list(&args.n1, "training size")?;
    let mut report: Option<EvaluationReport> = None;
    for &n1 in &n1s {
        let r = split_evaluation(&data, n1, args.splits, &methods, &grid, models, args.seed, &Default::default())
            .map_err(|e| e.context(format!("training size {n1}")))?;
        match &mut report {
            Some(all) => all.cells.extend(r.cells),
            None => report = Some(r),
        }
    }
    let report = report.expect("at least one training size");
    emit_outputs(&report, &args.data.out)?;
    print_report(&report);
    Ok(())
}
