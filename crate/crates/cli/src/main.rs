use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use selclust::bootstrap::{bootstrap_from_fit, BootstrapConfig, BootstrapMode, Refit};
use selclust::estimation::{fit_mixture, Constraint, EmConfig};
use selclust::evaluation::{default_t_grid, oracle_curve};
use selclust::harness::{
    builtin_scenario, builtin_scenarios, config_hash, emit_outputs, run_real_data, run_scenario, Procedure,
    RealDataConfig, ScenarioConfig,
};
use selclust::io::read_numeric_csv;
use selclust::model::{posterior_matrix, CovarianceStructure, DataMatrix, Family, MixtureParams, DEFAULT_DOF};
use selclust::rng;
use selclust::selection::{select_and_label, SelectionRule};

#[derive(Parser)]
#[command(
    name = "selclust",
    version,
    about = "Mixture-model clustering with abstention and false clustering rate control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation scenario (built-in name or JSON file) and write tables and charts.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap resamples per calibration.
        #[arg(long)]
        b: Option<usize>,
    },
    /// List the built-in scenarios, or print one as JSON.
    Scenarios { name: Option<String> },
    /// Fit a mixture model by EM and write its parameters as JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        q: usize,
        #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
        family: FamilyArg,
        #[arg(long, value_enum, default_value_t = StructureArg::Full)]
        structure: StructureArg,
        /// Parameters supplying the fixed weights and covariances for `--structure known`.
        #[arg(long)]
        known: Option<PathBuf>,
        #[command(flatten)]
        common: FitArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the log-likelihood trace of the selected start.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Label the items of a data set under given parameters, abstaining on uncertain ones.
    Cluster {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = RuleArg::Cumulative)]
        rule: RuleArg,
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit, calibrate the level by bootstrap, and write the calibrated clustering.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Parametric)]
        mode: ModeArg,
        #[arg(long, default_value_t = 1000)]
        b: usize,
        #[arg(long, value_enum, default_value_t = FamilyArg::Gaussian)]
        family: FamilyArg,
        #[arg(long, value_enum, default_value_t = StructureArg::Full)]
        structure: StructureArg,
        /// Warm-start EM iterations per resample; `--full-refit` refits from scratch instead.
        #[arg(long, default_value_t = 20)]
        warm_iters: usize,
        #[arg(long)]
        full_refit: bool,
        #[command(flatten)]
        common: FitArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Student-t mixture workflow on a table with an optional ground-truth column.
    RealData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        columns: Vec<String>,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value = "boot_param")]
        procedure: String,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long, default_value_t = 1000)]
        b: usize,
        #[arg(long)]
        standardize: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo oracle mFCR curve and optimal threshold for known parameters.
    OracleCurve {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        mc_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the curve as CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Student-t degrees of freedom.
    #[arg(long, default_value_t = DEFAULT_DOF)]
    dof: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Student,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Known,
    Spherical,
    Diagonal,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Cumulative,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Parametric,
    Nonparametric,
}

impl StructureArg {
    fn structure(self) -> CovarianceStructure {
        match self {
            StructureArg::Known => CovarianceStructure::Known,
            StructureArg::Spherical => CovarianceStructure::Spherical,
            StructureArg::Diagonal => CovarianceStructure::Diagonal,
            StructureArg::Full => CovarianceStructure::Full,
        }
    }
}

fn em_config(family: FamilyArg, structure: StructureArg, known: Option<&Path>, args: &FitArgs) -> Result<EmConfig> {
    let constraint = match (structure, known) {
        (StructureArg::Known, Some(path)) => Constraint::known_from(&MixtureParams::read_json(path)?),
        (StructureArg::Known, None) => bail!("--structure known needs --known <params.json>"),
        (s, _) => Constraint::new(s.structure()),
    };
    Ok(EmConfig {
        max_iter: args.iters,
        n_starts: args.starts,
        family: match family {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Student => Family::StudentT { dof: args.dof },
        },
        constraint,
        seed: args.seed,
        ..EmConfig::default()
    })
}

fn load(path: &Path, columns: Option<&[String]>) -> Result<DataMatrix> {
    let (data, _) = read_numeric_csv(path, columns).with_context(|| format!("reading {}", path.display()))?;
    info!("loaded {} rows x {} columns from {}", data.n(), data.d(), path.display());
    Ok(data)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn simulate(scenario: &str, out: &Path, reps: Option<usize>, seed: Option<u64>, b: Option<usize>) -> Result<()> {
    let mut cfg = match builtin_scenario(scenario) {
        Some(cfg) => cfg,
        None if Path::new(scenario).exists() => ScenarioConfig::read_json(Path::new(scenario))?,
        None => bail!("unknown scenario {scenario:?} (not a built-in name or an existing file)"),
    };
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(b) = b {
        cfg.boot.b = b;
    }
    let result = run_scenario(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), &cfg)?;
    let files = emit_outputs(&result, cfg.seed, &config_hash(&cfg), out)?;
    for f in &files {
        println!("{}", f.display());
    }
    if result.is_partial() {
        bail!("some replications failed; see replications.csv");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out, reps, seed, b } => simulate(&scenario, &out, reps, seed, b)?,
        Command::Scenarios { name: None } => {
            for s in builtin_scenarios() {
                let sweeps: Vec<&str> = s.sweeps.iter().map(|w| w.label.as_str()).collect();
                println!("{:<16} n={:<5} reps={:<4} sweeps: {}", s.name, s.n, s.reps, sweeps.join(", "));
            }
        }
        Command::Scenarios { name: Some(name) } => {
            let cfg = builtin_scenario(&name).with_context(|| format!("unknown scenario {name:?}"))?;
            println!("{}", cfg.to_json());
        }
        Command::Fit { data, q, family, structure, known, common, out, trace } => {
            let x = load(&data, common.columns.as_deref())?;
            let cfg = em_config(family, structure, known.as_deref(), &common)?;
            let fit = fit_mixture(&x, q, &cfg)?;
            info!("best start {} with log-likelihood {}", fit.best_start, fit.loglik());
            fit.params.write_json(&out)?;
            if let Some(path) = trace {
                fit.write_trace_csv(&path)?;
            }
        }
        Command::Cluster { data, params, alpha, rule, columns, out } => {
            let theta = MixtureParams::read_json(&params)?;
            let x = load(&data, columns.as_deref())?;
            let post = posterior_matrix(&theta, &x)?;
            let rule = match rule {
                RuleArg::Cumulative => SelectionRule::Cumulative,
                RuleArg::Fixed => SelectionRule::Fixed,
            };
            let clustering = select_and_label(&post, alpha, rule)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            clustering.write_csv(post.t_values(), file)?;
            eprintln!("selected {} of {} items", clustering.selection.selected.len(), clustering.n());
        }
        Command::Calibrate { data, q, alpha, mode, b, family, structure, warm_iters, full_refit, common, out } => {
            let x = load(&data, common.columns.as_deref())?;
            let em = em_config(family, structure, None, &common)?;
            let boot = BootstrapConfig {
                mode: match mode {
                    ModeArg::Parametric => BootstrapMode::Parametric,
                    ModeArg::Nonparametric => BootstrapMode::NonParametric,
                },
                b,
                refit: if full_refit { Refit::FullRefit(em.clone()) } else { Refit::WarmStart { iters: warm_iters } },
                seed: rng::derive_seed(common.seed, &[1]),
                ..BootstrapConfig::default()
            };
            let fit = fit_mixture(&x, q, &em)?;
            let outcome = bootstrap_from_fit(&x, fit, alpha, &boot)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            outcome.fit.params.write_json(out.join("params.json"))?;
            outcome.curve.write_csv_file(&out.join("curve.csv"))?;
            let post = posterior_matrix(&outcome.fit.params, &x)?;
            outcome.clustering.write_csv(post.t_values(), File::create(out.join("labels.csv"))?)?;
            let mut report = outcome.curve.report();
            report.push_str(&format!(
                "selected: {} of {} items\n",
                outcome.clustering.selection.selected.len(),
                outcome.clustering.n()
            ));
            fs::write(out.join("report.txt"), &report)?;
            print!("{report}");
        }
        Command::RealData { data, columns, q, alpha, procedure, label_column, b, standardize, seed, out } => {
            let procedure = Procedure::parse(&procedure).with_context(|| format!("unknown procedure {procedure:?}"))?;
            let cfg = RealDataConfig {
                path: data,
                columns,
                q,
                alpha,
                procedure,
                em: EmConfig { family: Family::StudentT { dof: DEFAULT_DOF }, seed, ..EmConfig::default() },
                boot: BootstrapConfig { b, seed: rng::derive_seed(seed, &[1]), ..BootstrapConfig::default() },
                ground_truth_column: label_column,
                standardize,
            };
            let outcome = run_real_data(&cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            outcome.write_labels_csv(&out.join("labels.csv"))?;
            outcome.fit.params.write_json(out.join("params.json"))?;
            write_json(&out.join("summary.json"), &outcome)?;
            println!("selected {} of {} items", outcome.clustering.selection.selected.len(), outcome.clustering.n());
            if let (Some(r), Some(m)) = (&outcome.report, &outcome.map_report) {
                println!("sample FCR with abstention: {:.4}", r.sample_fcr);
                println!("sample FCR of MAP without abstention: {:.4}", m.sample_fcr);
            }
        }
        Command::OracleCurve { params, alpha, mc_size, seed, out } => {
            let theta = MixtureParams::read_json(&params)?;
            let curve = oracle_curve(&theta, alpha, &default_t_grid(), mc_size, &mut rng::stream(seed, &[]))?;
            match &out {
                Some(path) => {
                    curve.write_csv(File::create(path).with_context(|| format!("creating {}", path.display()))?)?
                }
                None => curve.write_csv(std::io::stdout().lock())?,
            }
            eprintln!("alpha_c ~ {}, alpha_bar ~ {}", curve.alpha_c, curve.alpha_bar);
            match curve.t_star {
                Some(t) => eprintln!("t*({alpha}) ~ {t}"),
                None => bail!("level {alpha} is at or below alpha_c ~ {}", curve.alpha_c),
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
