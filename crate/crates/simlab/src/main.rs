#![allow(clippy::neg_cmp_op_on_partial_ord)]
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ope_core::complexity::shatter::{hadamard_glm_shatter, sparse_packing_shatter, verify_certificate, Link};
use ope_core::complexity::{
    complexity_profile, critical_radius, population_gram, profile_to_csv, ComplexitySource, LocalizedClass, Multiplier, RadiusKind,
};
use ope_core::dataset::Dataset;
use ope_core::estimators::{run_estimator, EstimatorId, CSV_HEADER};
use ope_core::instance::{ProblemInstance, StateActionFunction};
use ope_core::lowerbounds::{
    delta_mixture, random_conditional_tv_cases, random_truncation_cases, sigma_perturbed_pair, tilted_instance,
};
use ope_core::regression::{FeatureMap, FirstStageSpec};
use ope_lab::report::elbow_text;
use ope_lab::{elbow_report, run_experiment, write_results_csv, ExperimentConfig, LabError, Result};

#[derive(Parser)]
#[command(name = "ope-lab", version, about = "Off-policy linear functional estimation: simulations and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study and write the results table.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Also print the elbow summary.
        #[arg(long)]
        elbow: bool,
    },
    /// Estimate the functional from a data file.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Complexity diagnostics.
    Diagnose {
        #[command(subcommand)]
        what: Diagnose,
    },
    /// Local minimax lower-bound constructions.
    Lowerbound {
        #[command(subcommand)]
        what: Lowerbound,
    },
}

#[derive(Subcommand)]
enum Diagnose {
    /// Closed-form critical radius of a d-dimensional linear class.
    CriticalRadius {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        /// tr(Σ⁻¹Γ_σ); used for the squared radius.
        #[arg(long, default_value_t = 1.0)]
        trace: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha1: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha2: f64,
        #[arg(long)]
        squared: bool,
    },
    /// Monte Carlo profile of the localized complexity of a linear ellipsoid class.
    Profile {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10")]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 2000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        squared: bool,
    },
    /// Build and verify a strong-shattering certificate.
    Shatter {
        #[arg(long, value_enum)]
        witness: WitnessKind,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 2)]
        s: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WitnessKind {
    Hadamard,
    Sparse,
}

#[derive(Subcommand)]
enum Lowerbound {
    Tilted {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        n: usize,
    },
    SigmaPair {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        n: usize,
        /// Constant neighbourhood size to check the perturbation against.
        #[arg(long)]
        delta: Option<f64>,
    },
    DeltaMixture {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        tweak: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random-case checks of the truncation and conditional-TV lemmas.
    Lemmas {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_instance(path: &PathBuf) -> Result<ProblemInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Io { path: path.display().to_string(), source: e })?;
    Ok(ProblemInstance::from_toml(&text)?)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { config, seed, reps, out, threads, elbow } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.master_seed = seed.unwrap_or(cfg.master_seed);
            cfg.reps = reps.unwrap_or(cfg.reps);
            cfg.threads = threads.unwrap_or(cfg.threads);
            if out.is_some() {
                cfg.output = out;
            }
            let table = run_experiment(&cfg)?;
            let mut text = String::new();
            match &cfg.output {
                Some(path) => write_results_csv(&table, path)?,
                None => text.push_str(&table.to_csv()),
            }
            if elbow {
                text.push_str(&elbow_text(&elbow_report(&table)?));
            }
            Ok(text)
        }
        Command::Estimate { data, instance, estimator, seed, folds } => {
            let inst = load_instance(&instance)?;
            let data = Dataset::read_csv(&data)?;
            let id: EstimatorId = estimator.parse()?;
            let mut template = FirstStageSpec::weighted_krr();
            template.folds = folds;
            let report = run_estimator(id, &data, &inst, &template, seed)?;
            Ok(format!("{CSV_HEADER}\n{}\n", report.to_csv_row()))
        }
        Command::Diagnose { what } => diagnose(what),
        Command::Lowerbound { what } => lowerbound(what),
    }
}

fn diagnose(what: Diagnose) -> Result<String> {
    match what {
        Diagnose::CriticalRadius { d, m, trace, alpha1, alpha2, squared } => {
            let kind = if squared { RadiusKind::Squared } else { RadiusKind::Plain { alpha1, alpha2 } };
            let r = critical_radius(&ComplexitySource::ClosedFormLinear { d, trace }, kind, m, ope_core::complexity::DEFAULT_TOLERANCE)?;
            Ok(format!("critical_radius = {r}\n"))
        }
        Diagnose::Profile { instance, m, degree, radii, reps, seed, squared } => {
            let inst = load_instance(&instance)?;
            let features = FeatureMap::ActionPolynomial { degree };
            let gram = population_gram(&inst, features)?;
            let source = ComplexitySource::MonteCarlo {
                instance: &inst,
                class: LocalizedClass::LinearEllipsoid { features, gram },
                multiplier: Multiplier::OutcomeNoise,
                reps,
                seed,
            };
            let kind = if squared { RadiusKind::Squared } else { RadiusKind::Plain { alpha1: 1.0, alpha2: 1.0 } };
            Ok(profile_to_csv(&complexity_profile(&source, kind, m, &radii)?))
        }
        Diagnose::Shatter { witness, p, s, seed } => {
            let cert = match witness {
                WitnessKind::Hadamard => hadamard_glm_shatter(p, Link::Identity, 1.0, 1.0)?,
                WitnessKind::Sparse => sparse_packing_shatter(p, s)?,
            };
            let v = verify_certificate(&cert, seed)?;
            Ok(format!(
                "dimension = {}\npatterns_checked = {}\nexhaustive = {}\nmax_error = {:e}\nmax_l2_norm = {}\nmax_abs_coefficient = {}\nmax_support = {}\n",
                cert.dimension(),
                v.patterns_checked,
                v.exhaustive,
                v.max_error,
                v.max_l2_norm,
                v.max_abs_coefficient,
                v.max_support
            ))
        }
    }
}

fn lowerbound(what: Lowerbound) -> Result<String> {
    match what {
        Lowerbound::Tilted { instance, n } => Ok(tilted_instance(&load_instance(&instance)?, n)?.to_text()),
        Lowerbound::SigmaPair { instance, n, delta } => {
            let delta = delta.map(StateActionFunction::constant);
            Ok(sigma_perturbed_pair(&load_instance(&instance)?, n, delta.as_ref())?.to_text())
        }
        Lowerbound::DeltaMixture { instance, delta, tweak, reps, seed } => {
            let (report, mc) = delta_mixture(&load_instance(&instance)?, &StateActionFunction::constant(delta), tweak, reps, seed)?;
            Ok(format!("{}mc_gap = {} +- {}\n", report.to_text(), mc.estimate, mc.stderr))
        }
        Lowerbound::Lemmas { cases, seed } => {
            let trunc = random_truncation_cases(cases, seed)?;
            let tv = random_conditional_tv_cases(cases, seed)?;
            Ok(format!("truncation_passed = {trunc}/{cases}\nconditional_tv_passed = {tv}/{cases}\n"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{line}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
