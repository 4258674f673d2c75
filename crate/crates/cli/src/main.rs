use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpcox::cox::concordance;
use dpcox::mechanisms::Epsilon;
use dpcox::perturbation::{self, PerturbationMethod};
use dpcox::sim::{self, DatasetContext, Manifest, SeedContext, SimulationPlan};
use dpcox::{fit_cox, Error, FitOptions};

#[derive(Parser)]
#[command(name = "dpcox", version, about = "Cox regression under differential-privacy perturbation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the clean Cox model and print the coefficient table.
    Fit(FitArgs),
    /// Write one perturbed release (or perturbed fit for `output`).
    Perturb(PerturbArgs),
    /// Run the simulation grid and write record files.
    Simulate(SimulateArgs),
    /// Print per-condition metrics from a record directory.
    Summarize(RecordArgs),
    /// Write the epsilon threshold table from a record directory.
    Thresholds(RecordArgs),
    /// Write summary tables and plot data from a record directory.
    Report(RecordArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Registry name or path to a CSV with a `.json` sidecar.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    method: PerturbationMethod,
    /// Total budget; `inf` disables noise.
    #[arg(long)]
    eps: Epsilon,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Iteration index selecting the random stream.
    #[arg(long, default_value_t = 0)]
    iter: u64,
    /// Output CSV (a `.json` sidecar is written next to it); stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Datasets (comma separated or repeated); all registry datasets if absent.
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<String>,
    /// Methods (comma separated or repeated); all four if absent.
    #[arg(long, value_delimiter = ',')]
    method: Vec<PerturbationMethod>,
    /// `all` for the default grid, or a comma separated list such as `1,10,inf`.
    #[arg(long, default_value = "all")]
    eps: String,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.7)]
    train_fraction: f64,
    #[arg(long, env = "DPCOX_OUT", default_value = "dpcox-out")]
    out: PathBuf,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct RecordArgs {
    /// Directory written by `simulate`.
    #[arg(long, env = "DPCOX_OUT", default_value = "dpcox-out")]
    records: PathBuf,
    /// Output file or directory; defaults depend on the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::NoEvents
        | Error::SingularInformation
        | Error::NumericOverflow(_)
        | Error::NotConverged
        | Error::NoComparablePairs
        | Error::InvalidSe(_)
        | Error::NoSignificantBaseline => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Perturb(a) => cmd_perturb(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Summarize(a) => cmd_summarize(&a),
        Command::Thresholds(a) => cmd_thresholds(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let ds = sim::load_dataset(&args.dataset)?;
    let fit = fit_cox(&ds, &FitOptions::default())?;
    if !fit.converged {
        return Err(Error::NotConverged.into());
    }
    let c = concordance(ds.time(), ds.status(), &fit.risk_scores(&ds.design()))?;
    if args.json {
        let value = serde_json::json!({ "dataset": ds.name, "c_index": c, "fit": fit });
        println!("{}", serde_json::to_string_pretty(&value).map_err(Error::from)?);
        return Ok(());
    }
    println!("{}: n={} events={} q={}", ds.name, ds.n(), ds.events(), ds.q());
    println!("{:<14} {:>11} {:>10} {:>11} {:>10}", "variable", "coef", "se", "p", "hr");
    let mut significant = Vec::new();
    for j in 0..fit.p() {
        let sig = fit.p_value[j] < 0.05;
        if sig {
            significant.push(fit.names[j].as_str());
        }
        println!(
            "{:<14} {:>11.5} {:>10.5} {:>11.4e} {:>10.4} {}",
            fit.names[j],
            fit.beta[j],
            fit.se[j],
            fit.p_value[j],
            fit.hr[j],
            if sig { "*" } else { "" }
        );
    }
    println!("C-index {c:.3}");
    println!("significant {}/{} ({})", significant.len(), fit.p(), significant.join(", "));
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> Result<(), Failure> {
    let ds = sim::load_dataset(&args.dataset)?;
    let mut rng = SeedContext {
        base_seed: args.seed,
        dataset: sim::dataset_key(&ds.name),
        method: args.method.index(),
        epsilon: args.eps.key(),
        iteration: args.iter,
    }
    .rng("perturb");
    let released = match args.method {
        PerturbationMethod::Phase1 => perturbation::phase1(&ds, args.eps, &mut rng)?,
        PerturbationMethod::Phase2 => perturbation::phase2(&ds, args.eps, &mut rng)?,
        PerturbationMethod::Phase3 => {
            let intervals = perturbation::sturges_intervals(&ds)?;
            perturbation::phase3_release(&ds, &intervals, args.eps, &mut rng)?.data
        }
        PerturbationMethod::OutputDfbeta => {
            let fit = fit_cox(&ds, &FitOptions::default())?;
            let noisy = perturbation::output_dfbeta(&fit, args.eps, &mut rng)?;
            let text = serde_json::to_string_pretty(&noisy).map_err(Error::from)? + "\n";
            return write_or_print(args.out.as_deref(), &text);
        }
    };
    match &args.out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Failure::Usage(format!("bad output path {}", path.display())))?;
            released.write_fixture(dir, stem)?;
            Ok(())
        }
        None => write_or_print(None, &released.to_csv_string()),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<Epsilon>, Failure> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(sim::default_grid());
    }
    let mut grid = spec
        .split(',')
        .map(|s| s.parse::<Epsilon>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    grid.sort_by(|a, b| a.value().total_cmp(&b.value()));
    grid.dedup();
    Ok(grid)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let defaults = SimulationPlan::default();
    let plan = SimulationPlan {
        datasets: if args.dataset.is_empty() { defaults.datasets } else { args.dataset.clone() },
        methods: if args.method.is_empty() { defaults.methods } else { args.method.clone() },
        epsilons: parse_grid(&args.eps)?,
        iterations: args.iters,
        base_seed: args.seed,
        train_fraction: args.train_fraction,
    };
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Failure::Usage(e.to_string()))?;
    let contexts = sim::load_plan_datasets(&plan)?
        .into_iter()
        .map(DatasetContext::new)
        .collect::<Result<Vec<_>, _>>()?;
    let records = pool.install(|| {
        sim::run(&plan, &contexts, &mut |p| {
            eprintln!(
                "[{}/{}] {} {} eps={}: {} records, {} non-converged",
                p.done, p.total, p.dataset, p.method, p.epsilon, p.iterations, p.nonconverged
            )
        })
    })?;
    let manifest = Manifest::new(&plan, &contexts);
    for path in sim::write_run(&args.out, &manifest, &records)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_summarize(args: &RecordArgs) -> Result<(), Failure> {
    let (manifest, records) = sim::read_run(&args.records)?;
    let sums = sim::summaries(&manifest, &records)?;
    if args.json {
        let text = serde_json::to_string_pretty(&sums).map_err(Error::from)? + "\n";
        return write_or_print(args.out.as_deref(), &text);
    }
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.3}"));
    let mut text = format!(
        "{:<10} {:<7} {:>6} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "dataset", "method", "eps", "B", "lsr", "fpr", "test_c", "delta_c", "nonconv"
    );
    for s in &sums {
        let m = &s.metrics;
        text += &format!(
            "{:<10} {:<7} {:>6} {:>5} {:>7} {:>7} {:>7} {:>7} {:>7.3}\n",
            s.dataset,
            s.method.name(),
            s.epsilon.to_string(),
            m.iterations,
            fmt(m.mean_lsr),
            fmt(m.mean_fpr),
            fmt(m.test_c.map(|c| c.mean)),
            fmt(s.delta_c),
            m.nonconverged_rate
        );
    }
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_thresholds(args: &RecordArgs) -> Result<(), Failure> {
    let (manifest, records) = sim::read_run(&args.records)?;
    let sums = sim::summaries(&manifest, &records)?;
    let rows = sim::thresholds(&sums, &sim::default_grid())?;
    let text = if args.json {
        serde_json::to_string_pretty(&rows).map_err(Error::from)? + "\n"
    } else {
        sim::thresholds_to_csv(&rows)?
    };
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_report(args: &RecordArgs) -> Result<(), Failure> {
    let (manifest, records) = sim::read_run(&args.records)?;
    let dir = args.out.clone().unwrap_or_else(|| args.records.join("report"));
    for path in sim::emit_report(&dir, &manifest, &records)? {
        println!("{}", path.display());
    }
    Ok(())
}
