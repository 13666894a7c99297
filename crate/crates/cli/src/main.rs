use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use dfmvarma::forecast::{ForecastOptions, DEFAULT_WINDOW};
use dfmvarma::innovations::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use dfmvarma::linalg::json::MatrixJson;
use dfmvarma::nme::{self, NmeMethod, NmeProblem};
use dfmvarma::simulate::{read_series_csv, SimulationOptions, DEFAULT_BURN_IN};
use dfmvarma::varma::{self, Method, DEFAULT_THRESHOLD};
use dfmvarma::{DfmModel, Error, VarmaModel};

/// Exit status when a check or residual test fails.
const EXIT_CHECK: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "dfmvarma", version, about = "VARMA representations of dynamic factor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model and print its standardized form.
    Standardize {
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a model to its VARMA(p, p) representation.
    Convert {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Reduced)]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve X + AᵀX⁻¹A = Q for its maximal solution.
    SolveNme {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = NmeMethodArg::Engwerda)]
        method: NmeMethodArg,
        #[arg(long, default_value_t = nme::DEFAULT_TOL)]
        tol: f64,
        /// Defaults to 100000 for engwerda and 10000 for chiang.
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long, default_value_t = nme::DEFAULT_GRID)]
        grid_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a VARMA model against the moment equations of a factor model.
    Verify {
        model: PathBuf,
        varma: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a sample path as CSV.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_BURN_IN)]
        burn_in: usize,
        /// Start the factors from their stationary distribution.
        #[arg(long)]
        stationary_init: bool,
        /// Append the latent factors as f_1.. columns.
        #[arg(long)]
        with_factors: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-step-ahead predictions for an observed series.
    Forecast {
        model: PathBuf,
        series: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Reduced)]
        method: MethodArg,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Never cap the recursion depth.
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form one-factor solution and correlation matrices.
    DemoOnefactor {
        #[arg(long)]
        phi: f64,
        #[arg(long)]
        sigma_eta2: f64,
        #[arg(long)]
        d: usize,
        /// Include the full d×d correlation matrices.
        #[arg(long)]
        matrices: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Reduced,
    Full,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Reduced => Method::Reduced,
            MethodArg::Full => Method::Full,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum NmeMethodArg {
    Engwerda,
    Chiang,
}

impl From<NmeMethodArg> for NmeMethod {
    fn from(m: NmeMethodArg) -> Self {
        match m {
            NmeMethodArg::Engwerda => NmeMethod::Engwerda,
            NmeMethodArg::Chiang => NmeMethod::Chiang,
        }
    }
}

/// A command's output and whether its checks passed.
struct Report {
    body: Value,
    passed: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(err) => {
            let (code, kind) = classify(&err);
            let body = json!({
                "error": {
                    "kind": kind,
                    "message": format!("{err:#}"),
                    "exit_code": code,
                }
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}

fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    match err.downcast_ref::<Error>() {
        Some(e @ Error::NoConvergence { .. }) => (EXIT_NO_CONVERGENCE, e.kind()),
        Some(e @ (Error::NotSolvable { .. } | Error::SingularInnovationCovariance { .. })) => (EXIT_CHECK, e.kind()),
        Some(e) => (EXIT_INPUT, e.kind()),
        None if err.downcast_ref::<io::Error>().is_some() => (EXIT_INPUT, "Io"),
        None => (EXIT_INPUT, "InvalidInput"),
    }
}

fn run(command: Command) -> Result<bool> {
    let (report, out) = match command {
        Command::Standardize { model, out } => (standardize(&model)?, out),
        Command::Convert {
            model,
            method,
            tol,
            max_iter,
            out,
        } => (convert(&model, method, tol, max_iter)?, out),
        Command::SolveNme {
            problem,
            method,
            tol,
            max_iter,
            grid_size,
            out,
        } => (solve_nme(&problem, method, tol, max_iter, grid_size)?, out),
        Command::Verify {
            model,
            varma,
            threshold,
            out,
        } => (verify(&model, &varma, threshold)?, out),
        Command::Simulate {
            model,
            n,
            seed,
            burn_in,
            stationary_init,
            with_factors,
            out,
        } => {
            let model = read_model(&model)?;
            let options = SimulationOptions {
                burn_in,
                stationary_init,
            };
            let sample = dfmvarma::simulate(&model, n, options, seed)?;
            match out {
                Some(path) => {
                    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    sample.write_csv(BufWriter::new(file), with_factors)?;
                }
                None => sample.write_csv(io::stdout().lock(), with_factors)?,
            }
            return Ok(true);
        }
        Command::Forecast {
            model,
            series,
            method,
            window,
            exact,
            out,
        } => (forecast(&model, &series, method, window, exact)?, out),
        Command::DemoOnefactor {
            phi,
            sigma_eta2,
            d,
            matrices,
            out,
        } => (demo_onefactor(phi, sigma_eta2, d, matrices)?, out),
    };
    write_json(&report.body, out.as_deref())?;
    Ok(report.passed)
}

fn write_json(body: &Value, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(body)?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_model(path: &Path) -> Result<DfmModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(DfmModel::from_json(&text)?)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tolerance must be positive, got {tol}")).into())
    }
}

fn standardize(path: &Path) -> Result<Report> {
    let model = read_model(path)?;
    let validation = model.validate();
    let std = dfmvarma::standardize(&model)?;
    let t = &std.transform;
    let body = json!({
        "config": { "command": "standardize", "model": path },
        "validation": validation,
        "model": std.model,
        "transform": {
            "sigma_eps_half": MatrixJson(t.sigma_eps_half.clone()),
            "rotation": MatrixJson(t.rotation.clone()),
            "scale": MatrixJson(t.scale.clone()),
            "identity": t.is_identity(),
        },
    });
    Ok(Report { body, passed: true })
}

fn convert(path: &Path, method: MethodArg, tol: f64, max_iter: usize) -> Result<Report> {
    check_tol(tol)?;
    let model = read_model(path)?;
    let conv = varma::build_varma(&model, method.into(), tol, max_iter)?;
    let passed = conv.report.pass && conv.invertibility.is_acceptable();
    let body = json!({
        "config": {
            "command": "convert",
            "model": path,
            "method": method,
            "tol": tol,
            "max_iter": max_iter,
        },
        "varma": conv.varma,
        "reduced": conv.reduced,
        "report": conv.report,
        "invertibility": conv.invertibility,
    });
    Ok(Report { body, passed })
}

fn solve_nme(path: &Path, method: NmeMethodArg, tol: f64, max_iter: Option<usize>, grid_size: usize) -> Result<Report> {
    check_tol(tol)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let problem: NmeProblem = serde_json::from_str(&text).map_err(Error::from)?;
    problem.check()?;
    let max_iter = max_iter.unwrap_or(match method {
        NmeMethodArg::Engwerda => nme::ENGWERDA_MAX_ITER,
        NmeMethodArg::Chiang => nme::CHIANG_MAX_ITER,
    });
    let psi = nme::psi_check(&problem, grid_size)?;
    let sol = nme::solve(&problem, method.into(), tol, max_iter)?;
    let factorization = nme::verify_factorization(&problem, &sol.x, grid_size)?;
    let mut body = serde_json::to_value(&sol)?;
    let extra = json!({
        "config": {
            "command": "solve-nme",
            "problem": path,
            "method": method,
            "tol": tol,
            "max_iter": max_iter,
            "grid_size": grid_size,
        },
        "psi_min_eigenvalue": psi.min(),
        "factorization_residual": factorization,
    });
    merge(&mut body, extra);
    Ok(Report { body, passed: true })
}

fn read_varma(path: &Path) -> Result<VarmaModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    // accept either a bare VARMA document or the output of `convert`
    let mut value: Value = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(inner) = value.get_mut("varma") {
        value = inner.take();
    }
    let varma: VarmaModel = serde_json::from_value(value).map_err(Error::from)?;
    varma.check()?;
    Ok(varma)
}

fn verify(model_path: &Path, varma_path: &Path, threshold: f64) -> Result<Report> {
    check_tol(threshold)?;
    let model = read_model(model_path)?;
    let varma = read_varma(varma_path)?;
    let report = varma::verify_varma(&model, &varma, threshold)?;
    let invertibility = varma.invertibility();
    let passed = report.pass && invertibility.is_acceptable();
    let mut body = serde_json::to_value(&report)?;
    merge(
        &mut body,
        json!({
            "config": {
                "command": "verify",
                "model": model_path,
                "varma": varma_path,
                "threshold": threshold,
            },
            "invertibility": invertibility,
        }),
    );
    Ok(Report { body, passed })
}

fn forecast(model_path: &Path, series_path: &Path, method: MethodArg, window: usize, exact: bool) -> Result<Report> {
    let model = read_model(model_path)?;
    let file = File::open(series_path).with_context(|| format!("reading {}", series_path.display()))?;
    let series = read_series_csv(BufReader::new(file))?;
    let std = dfmvarma::standardize(&model)?;
    let options = ForecastOptions {
        window: (!exact).then_some(window),
    };
    let result = match method {
        MethodArg::Reduced => dfmvarma::forecast_reduced(&std, &series.x, options)?,
        MethodArg::Full => dfmvarma::forecast_full(&std, &series.x, options)?,
    };
    let mut body = serde_json::to_value(result.summary())?;
    merge(
        &mut body,
        json!({
            "config": {
                "command": "forecast",
                "model": model_path,
                "series": series_path,
                "method": method,
                "window": if exact { Value::Null } else { json!(window) },
            },
        }),
    );
    Ok(Report { body, passed: true })
}

fn demo_onefactor(phi: f64, sigma_eta2: f64, d: usize, matrices: bool) -> Result<Report> {
    let sol = varma::onefactor_closed_form(phi, sigma_eta2, d)?;
    let (r_x, r_y) = varma::onefactor_correlation_demo(phi, sigma_eta2, d)?;
    let off = |m: &dfmvarma::Matrix| if d > 1 { json!(m[(0, 1)]) } else { Value::Null };
    let mut body = json!({
        "config": {
            "command": "demo-onefactor",
            "phi": phi,
            "sigma_eta2": sigma_eta2,
            "d": d,
        },
        "u": sol.u,
        "v": sol.v,
        "discriminant": sol.discriminant,
        "reduced_u": d as f64 * sol.u,
        "reduced_v": d as f64 * sol.v,
        "r_x_offdiag": off(&r_x),
        "r_y_offdiag": off(&r_y),
    });
    if matrices {
        merge(&mut body, json!({ "r_x": MatrixJson(r_x), "r_y": MatrixJson(r_y) }));
    }
    Ok(Report { body, passed: true })
}

fn merge(target: &mut Value, extra: Value) {
    if let (Value::Object(t), Value::Object(e)) = (target, extra) {
        t.extend(e);
    }
}
