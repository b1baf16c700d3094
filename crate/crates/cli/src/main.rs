//! capture-mse: population-size estimation on stratified capture-recapture
//! tables, scenario simulation, variance calibration and report building.

mod config;
mod report;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use capture_mse::estimators::{stratified_estimate, stratified_fienberg, ClosedForm, PopulationEstimate};
use capture_mse::scenario::{run_scenario, ScenarioResult};
use capture_mse::simgen::{calibrate_variances, CalibrationSettings};
use capture_mse::table_io::read_table;
use capture_mse::{fit_fixed, fit_mixed, nhat_from_fixed_fit, nhat_from_mixed_fit, FixedFit, MixedFit, Error, Lists, ModelSpec, Parameterization, Table};
use clap::{Parser, Subcommand};

use crate::config::{parse_methods, ConfigFile};
use crate::report::{csv_files, read_records, sort_records, write_report, ReportError, SUMMARY_HEADER};

const SEED_ENV: &str = "CAPTURE_MSE_SEED";

#[derive(Parser)]
#[command(name = "capture-mse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate stratum and total population sizes from a table CSV
    Estimate {
        /// Table file, or `-` for standard input
        table: PathBuf,
        /// lp, chapman, fixed, mixed or fienberg; repeat or separate by commas
        #[arg(short, long = "method", value_delimiter = ',', default_value = "chapman")]
        methods: Vec<String>,
        /// Output file (default: standard output)
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Write the fitted model parameters as JSON
        #[arg(long)]
        fits: Option<PathBuf>,
    },
    /// Run a scenario study
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Worker threads (default: all cores)
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Overrides the configured seed and the environment
        #[arg(long)]
        seed: Option<u64>,
        /// Also write every replicate estimate
        #[arg(long)]
        replicate_log: bool,
        /// Comma-separated subset of FixedLP, FixedChapman, Mixed
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Estimate random-effect variances from repeated samples of one population
    Calibrate {
        #[arg(long, default_value_t = 20_190_101)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Directory for `calibration.toml`
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(short, long)]
        jobs: Option<usize>,
    },
    /// Combine summary CSVs into one long-format report
    Report {
        /// Directory of summary or report CSVs
        #[arg(long = "in")]
        input: PathBuf,
        /// Output file (default: standard output)
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Input(String),
    Schema(String),
    NoInput(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Input(_) => 2,
            Failure::Usage(_) => 64,
            Failure::Schema(_) => 65,
            Failure::NoInput(_) => 66,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Input(m) | Failure::Schema(m) | Failure::NoInput(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Input { .. } => Failure::Input(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    if jobs == Some(0) {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        x.to_string()
    }
}

// ---------------------------------------------------------------------------
// estimate

#[derive(Clone, Copy, PartialEq)]
enum EstimateMethod {
    Lp,
    Chapman,
    Fixed,
    Mixed,
    Fienberg,
}

fn parse_estimate_method(s: &str) -> Option<EstimateMethod> {
    Some(match s.trim().to_ascii_lowercase().as_str() {
        "lp" | "lincoln-petersen" => EstimateMethod::Lp,
        "chapman" => EstimateMethod::Chapman,
        "fixed" => EstimateMethod::Fixed,
        "mixed" => EstimateMethod::Mixed,
        "fienberg" => EstimateMethod::Fienberg,
        _ => return None,
    })
}

fn fixed_json(fit: &FixedFit<f64>) -> serde_json::Value {
    let coef: serde_json::Map<_, _> =
        fit.column_labels.iter().zip(&fit.coefficients).map(|(k, v)| (k.clone(), (*v).into())).collect();
    serde_json::json!({ "model": "fixed", "coefficients": coef, "deviance": fit.deviance, "iterations": fit.iterations })
}

fn mixed_json(fit: &MixedFit<f64>) -> serde_json::Value {
    let coef: serde_json::Map<_, _> =
        fit.fixed_labels.iter().zip(&fit.fixed_coefficients).map(|(k, v)| (k.clone(), (*v).into())).collect();
    let terms = &fit.variance.terms;
    let modes: serde_json::Map<_, _> = terms.iter().zip(&fit.random_modes).map(|(t, u)| (t.name().to_string(), u.clone().into())).collect();
    let var: serde_json::Map<_, _> = terms.iter().zip(&fit.variance.sigma2).map(|(t, v)| (t.name().to_string(), (*v).into())).collect();
    serde_json::json!({
        "model": "mixed",
        "coefficients": coef,
        "random_modes": modes,
        "variances": var,
        "laplace_deviance": fit.laplace_deviance,
        "warnings": fit.convergence_warnings,
    })
}

fn estimate_with(
    table: &Table,
    m: EstimateMethod,
    fits: &mut Vec<serde_json::Value>,
) -> Result<PopulationEstimate<f64>, Failure> {
    let lists = table.lists();
    let needs = |want: Lists, name: &str| {
        if lists == want {
            Ok(())
        } else {
            Err(Failure::Usage(format!("method {name} does not apply to a {}-list table", lists.count())))
        }
    };
    Ok(match m {
        EstimateMethod::Lp => {
            needs(Lists::Two, "lp")?;
            stratified_estimate(table, ClosedForm::LP)?
        }
        EstimateMethod::Chapman => {
            needs(Lists::Two, "chapman")?;
            stratified_estimate(table, ClosedForm::Chapman)?
        }
        EstimateMethod::Fienberg => {
            needs(Lists::Three, "fienberg")?;
            stratified_fienberg(table)?
        }
        EstimateMethod::Fixed => {
            let spec = match lists {
                Lists::Two => ModelSpec::conditional_independence(Parameterization::CornerPoint),
                Lists::Three => ModelSpec::maximal_triple(Parameterization::CornerPoint),
            };
            let fit = fit_fixed(table, &spec)?;
            fits.push(fixed_json(&fit));
            nhat_from_fixed_fit(&fit, table)?
        }
        EstimateMethod::Mixed => {
            let spec = match lists {
                Lists::Two => ModelSpec::mixed_dual(),
                Lists::Three => ModelSpec::mixed_triple(),
            };
            let fit = fit_mixed(table, &spec)?;
            for w in &fit.convergence_warnings {
                eprintln!("warning: mixed fit: {w}");
            }
            fits.push(mixed_json(&fit));
            nhat_from_mixed_fit(&fit, table)?
        }
    })
}

fn cmd_estimate(path: &Path, methods: &[String], out: Option<&Path>, fits_out: Option<&Path>) -> Outcome {
    let methods = methods
        .iter()
        .map(|s| parse_estimate_method(s).ok_or_else(|| Failure::Usage(format!("unknown method {s:?}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let table: Table = if path == Path::new("-") {
        let mut text = String::new();
        io::stdin().read_to_string(&mut text)?;
        read_table(text.as_bytes())?
    } else {
        let file = File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        read_table(file).map_err(|e| match e {
            Error::Input { .. } => Failure::Input(format!("{}: {e}", path.display())),
            e => e.into(),
        })?
    };
    let mut fits = Vec::new();
    let estimates = methods.iter().map(|&m| estimate_with(&table, m, &mut fits)).collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = fits_out {
        let mut w = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(&mut w, &fits).map_err(|e| Failure::Runtime(e.to_string()))?;
        writeln!(w)?;
    }

    let mut w = csv::Writer::from_writer(output(out)?);
    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    w.write_record(["stratum", "method", "mu00_hat", "nhat_l", "is_infinite"]).map_err(csv_err)?;
    for est in &estimates {
        for (label, s) in table.labels().iter().zip(&est.per_stratum) {
            w.write_record([label.as_str(), est.method.name(), &num(s.mu00_hat), &num(s.nhat_l), &s.is_infinite().to_string()])
                .map_err(csv_err)?;
        }
        w.write_record(["total", est.method.name(), &num(est.mu00_total()), &num(est.nhat_total), &est.is_infinite().to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

fn summary_rows(res: &ScenarioResult) -> Vec<[String; 11]> {
    let sc = &res.scenario;
    res.summaries
        .iter()
        .map(|s| {
            let m = &s.metrics;
            [
                sc.id.to_string(),
                s.method.name().to_string(),
                sc.distribution.name().to_string(),
                sc.n.to_string(),
                sc.regions.to_string(),
                sc.pi_a.to_string(),
                sc.pi_b.to_string(),
                num(m.marb_percent),
                num(m.cv_percent),
                num(m.mse),
                m.infinite_count.to_string(),
            ]
        })
        .collect()
}

fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(configured),
    }
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    jobs: Option<usize>,
    seed: Option<u64>,
    replicate_log: bool,
    methods: Option<&[String]>,
) -> Outcome {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    let file = ConfigFile::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    let mut cfg = file.into_config().map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    if let Some(m) = methods {
        cfg.methods = parse_methods(m).map_err(Failure::Usage)?;
    }
    cfg.base_seed = resolve_seed(seed, cfg.base_seed)?;
    let pool = thread_pool(jobs)?;
    std::fs::create_dir_all(out)?;

    let csv_err = |e: csv::Error| Failure::Runtime(e.to_string());
    let mut summary = csv::Writer::from_path(out.join("summary.csv")).map_err(csv_err)?;
    summary.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    let mut log = if replicate_log {
        let mut w = csv::Writer::from_path(out.join("replicates.csv")).map_err(csv_err)?;
        w.write_record(["scenario_id", "population", "sample", "stratum", "method", "estimate", "truth"]).map_err(csv_err)?;
        Some(w)
    } else {
        None
    };

    let scenarios = cfg.scenarios();
    for sc in &scenarios {
        let start = Instant::now();
        let res = pool.install(|| {
            run_scenario(sc, &cfg.methods, cfg.populations, cfg.samples_per_population, cfg.base_seed)
        })?;
        for row in summary_rows(&res) {
            summary.write_record(&row).map_err(csv_err)?;
        }
        summary.flush()?;
        if let Some(w) = log.as_mut() {
            for rep in &res.replicates {
                for (k, m) in cfg.methods.iter().enumerate() {
                    for (l, (est, truth)) in rep.estimates[k].iter().zip(&rep.truths).enumerate() {
                        w.write_record([
                            sc.id.to_string(),
                            rep.population.to_string(),
                            rep.sample.to_string(),
                            l.to_string(),
                            m.name().to_string(),
                            num(*est),
                            truth.to_string(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
        }
        eprintln!(
            "scenario {}/{} {} N={} regions={} piA={} piB={}: {} mixed fits with warnings, {} failed [{:.1}s]",
            sc.id + 1,
            scenarios.len(),
            sc.distribution.name(),
            sc.n,
            sc.regions,
            sc.pi_a,
            sc.pi_b,
            res.mixed_warning_fits,
            res.mixed_failures,
            start.elapsed().as_secs_f64()
        );
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

fn cmd_calibrate(seed: u64, replicates: usize, out: Option<&Path>, jobs: Option<usize>) -> Outcome {
    if replicates == 0 {
        return Err(Failure::Usage("--replicates must be at least 1".into()));
    }
    let settings = CalibrationSettings {
        replicates,
        min_clean_fits: CalibrationSettings::default().min_clean_fits.min(replicates),
        ..CalibrationSettings::default()
    };
    let res = thread_pool(jobs)?.install(|| calibrate_variances(seed, &settings))?;
    let [u0, u1, u2] = res.sigma2;
    println!("sigma2_u0 = {u0}\nsigma2_u1 = {u1}\nsigma2_u2 = {u2}");
    eprintln!("{} clean fits, {} with warnings, {} failed", res.clean_fits, res.warned_fits, res.failed_fits);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let fragment = format!(
            "# calibration seed {seed}, {} of {replicates} fits without warnings\nvariances = [{u0}, {u1}, {u2}]\n",
            res.clean_fits
        );
        std::fs::write(dir.join("calibration.toml"), fragment)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report

fn cmd_report(input: &Path, out: Option<&Path>) -> Outcome {
    let to_failure = |e: ReportError| match e {
        ReportError::Schema { .. } => Failure::Schema(e.to_string()),
        ReportError::NoInput(_) => Failure::NoInput(e.to_string()),
        ReportError::Io(e) => Failure::Runtime(e.to_string()),
    };
    let files = csv_files(input).map_err(to_failure)?;
    let mut records = Vec::new();
    for f in &files {
        records.extend(read_records(f).map_err(to_failure)?);
    }
    sort_records(&mut records);
    write_report(&records, output(out)?)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Estimate { table, methods, out, fits } => cmd_estimate(table, methods, out.as_deref(), fits.as_deref()),
        Command::Simulate { config, out, jobs, seed, replicate_log, methods } => {
            cmd_simulate(config, out, *jobs, *seed, *replicate_log, methods.as_deref())
        }
        Command::Calibrate { seed, replicates, out, jobs } => cmd_calibrate(*seed, *replicates, out.as_deref(), *jobs),
        Command::Report { input, out } => cmd_report(input, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
