//! `trustlab` command-line front end.
//!
//! Artifacts are written under the output root (`TRUSTLAB_OUT`, default the
//! current directory). Results go to stdout as `key=value` lines, one
//! `artifact=<path>` line per file written; diagnostics go to stderr.
//!
//! Exit codes: 2 invalid input or config, 3 infeasible request, 4 training
//! diverged, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use trustlab::bounds::{bound_sweep, default_grid};
use trustlab::data::{corrupt, load_dataset, save_dataset, split_trusted};
use trustlab::experiment::{prepare_data, run_to_dir, ExperimentConfig};
use trustlab::noise::{
    build_transition, load_transition, noise_ratio, rescale_transition, save_transition, ClassPrior, NoiseSpec,
};
use trustlab::training::Method;
use trustlab::Error;

#[derive(Parser)]
#[command(name = "trustlab", version, about = "Label-noise laboratory")]
struct Cli {
    /// Root directory for every artifact.
    #[arg(long, env = "TRUSTLAB_OUT", default_value = ".", global = true)]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a transition matrix from a noise pattern.
    GenNoise {
        #[command(flatten)]
        pattern: PatternArgs,
        /// Output file, relative to the output root.
        #[arg(long, default_value = "transition.csv")]
        out: PathBuf,
    },
    /// Theoretical accuracy of a fully fitted network over a noise grid.
    Bound {
        #[command(flatten)]
        pattern: OptionalPattern,
        /// Comma-separated noise ratios; defaults to 0, 0.1, ..., 1.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long, default_value = "bound.csv")]
        out: PathBuf,
    },
    /// Rescale a matrix to a target noise ratio.
    Rescale {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value = "rescaled.csv")]
        out: PathBuf,
    },
    /// Corrupt a dataset file, or generate and corrupt the data of a config.
    Corrupt {
        /// Experiment config; writes its corrupted train and test sets.
        #[arg(long, conflicts_with_all = ["data", "matrix"])]
        config: Option<PathBuf>,
        /// Dataset CSV to corrupt (needs true labels).
        #[arg(long, requires = "matrix", requires = "classes")]
        data: Option<PathBuf>,
        /// Transition matrix CSV.
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        /// Noise ratio (config mode; defaults to the config's first).
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (dataset mode) or directory (config mode).
        #[arg(long, default_value = "corrupted")]
        out: PathBuf,
    },
    /// Stratified trusted/untrusted split of a dataset file.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trusted.csv and untrusted.csv.
        #[arg(long, default_value = "split")]
        out: PathBuf,
    },
    /// Train and score the configured methods at one noise ratio.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Noise ratio; defaults to the config's first.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Train and score every method at every noise ratio of the config.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated noise ratios overriding the config.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Symmetric,
    TruncatedNormal,
    Bimodal,
    PartialTargeted,
}

#[derive(Args)]
struct PatternArgs {
    #[arg(long, value_enum)]
    pattern: Pattern,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    mu: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    mu1: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0)]
    mu2: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    mix: f64,
    /// Partial targeted pairs as `source:target`, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    mapping: Vec<(usize, usize)>,
}

#[derive(Args)]
struct OptionalPattern {
    #[arg(long, value_enum, required_unless_present = "matrix")]
    pattern: Option<Pattern>,
    /// Matrix CSV instead of a pattern.
    #[arg(long, conflicts_with = "pattern")]
    matrix: Option<PathBuf>,
    #[arg(long, required_unless_present = "matrix")]
    classes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    mu: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    mu1: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma1: f64,
    #[arg(long, default_value_t = 0)]
    mu2: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    mix: f64,
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    mapping: Vec<(usize, usize)>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Record wall-clock seconds in the report.
    #[arg(long)]
    timing: bool,
    /// Output directory relative to the root, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected source:target, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad class index `{a}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad class index `{b}`"))?;
    Ok((a, b))
}

fn spec_from(
    pattern: Pattern,
    epsilon: f64,
    (mu, sigma): (usize, f64),
    (mu1, sigma1, mu2, sigma2, mix): (usize, f64, usize, f64, f64),
    mapping: &[(usize, usize)],
) -> NoiseSpec {
    match pattern {
        Pattern::Symmetric => NoiseSpec::Symmetric { epsilon },
        Pattern::TruncatedNormal => NoiseSpec::TruncatedNormal { epsilon, mu, sigma },
        Pattern::Bimodal => NoiseSpec::Bimodal {
            epsilon,
            mu1,
            sigma1,
            mu2,
            sigma2,
            mix,
        },
        Pattern::PartialTargeted => NoiseSpec::PartialTargeted {
            epsilon,
            mapping: mapping.to_vec(),
        },
    }
}

impl PatternArgs {
    fn spec(&self) -> NoiseSpec {
        spec_from(
            self.pattern,
            self.epsilon,
            (self.mu, self.sigma),
            (self.mu1, self.sigma1, self.mu2, self.sigma2, self.mix),
            &self.mapping,
        )
    }
}

fn emit_artifact(path: &Path) {
    println!("artifact={}", path.display());
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn gen_noise(root: &Path, pattern: &PatternArgs, out: &Path) -> anyhow::Result<()> {
    let t = build_transition(&pattern.spec(), pattern.classes)?;
    let ratio = noise_ratio(&t, &ClassPrior::uniform(pattern.classes))?;
    let path = root.join(out);
    ensure_parent(&path)?;
    save_transition(&t, &path)?;
    println!("noise_ratio={ratio}");
    emit_artifact(&path);
    Ok(())
}

fn bound(root: &Path, p: &OptionalPattern, grid: Option<Vec<f64>>, out: &Path) -> anyhow::Result<()> {
    let (spec, c) = match (&p.matrix, p.pattern) {
        (Some(m), _) => {
            let matrix = load_transition(m)?;
            let c = matrix.num_classes();
            (NoiseSpec::Custom { matrix }, c)
        }
        (None, Some(pattern)) => {
            let c = p.classes.expect("clap requires classes with a pattern");
            let spec = spec_from(
                pattern,
                0.0,
                (p.mu, p.sigma),
                (p.mu1, p.sigma1, p.mu2, p.sigma2, p.mix),
                &p.mapping,
            );
            (spec, c)
        }
        (None, None) => bail!(Error::Validation("a pattern or a matrix is required".into())),
    };
    let grid = grid.unwrap_or_else(default_grid);
    let sweep = bound_sweep(&spec, &grid, c, &ClassPrior::uniform(c))?;
    for (eps, why) in &sweep.infeasible {
        eprintln!("infeasible epsilon={eps}: {why}");
    }
    let path = root.join(out);
    ensure_parent(&path)?;
    sweep.curve.save_csv(&path)?;
    emit_artifact(&path);
    Ok(())
}

fn rescale(root: &Path, matrix: &Path, epsilon: f64, out: &Path) -> anyhow::Result<()> {
    let t = load_transition(matrix)?;
    let prior = ClassPrior::uniform(t.num_classes());
    let scaled = rescale_transition(&t, &prior, epsilon)?;
    let path = root.join(out);
    ensure_parent(&path)?;
    save_transition(&scaled, &path)?;
    println!("noise_ratio={}", noise_ratio(&scaled, &prior)?);
    emit_artifact(&path);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn corrupt_cmd(
    root: &Path,
    config: Option<&Path>,
    data: Option<&Path>,
    matrix: Option<&Path>,
    classes: Option<usize>,
    epsilon: Option<f64>,
    seed: u64,
    out: &Path,
) -> anyhow::Result<()> {
    if let Some(config) = config {
        let cfg = ExperimentConfig::load(config)?;
        let eps = match epsilon {
            Some(e) => e,
            None => cfg.epsilon_grid()?[0],
        };
        let prepared = prepare_data(&cfg, eps, seed)?;
        let dir = root.join(out);
        std::fs::create_dir_all(&dir)?;
        for (name, ds) in [
            ("trusted.csv", prepared.trusted.dataset()),
            ("untrusted.csv", &prepared.untrusted),
            ("test.csv", &prepared.test),
        ] {
            let path = dir.join(name);
            save_dataset(ds, &path)?;
            emit_artifact(&path);
        }
        let path = dir.join("transition.csv");
        save_transition(&prepared.transition, &path)?;
        emit_artifact(&path);
        return Ok(());
    }
    let (Some(data), Some(matrix), Some(classes)) = (data, matrix, classes) else {
        bail!(Error::Validation("either --config or --data with --matrix and --classes is required".into()));
    };
    let ds = load_dataset(data, classes)?;
    let t = load_transition(matrix)?;
    let noisy = corrupt(&ds, &t, seed)?;
    let path = root.join(out);
    ensure_parent(&path)?;
    save_dataset(&noisy, &path)?;
    emit_artifact(&path);
    Ok(())
}

fn split(root: &Path, data: &Path, classes: usize, fraction: f64, seed: u64, out: &Path) -> anyhow::Result<()> {
    let ds = load_dataset(data, classes)?;
    let (trusted, untrusted) = split_trusted(&ds, fraction, seed)?;
    let dir = root.join(out);
    std::fs::create_dir_all(&dir)?;
    for (name, ds) in [("trusted.csv", trusted.dataset()), ("untrusted.csv", &untrusted)] {
        let path = dir.join(name);
        save_dataset(ds, &path)?;
        emit_artifact(&path);
    }
    Ok(())
}

fn load_run_config(run: &RunArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(seeds) = &run.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(methods) = &run.methods {
        cfg.methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    if let Some(epochs) = run.epochs {
        cfg.classifier.train.epochs = epochs;
    }
    if let Some(workers) = run.workers {
        cfg.workers = workers;
    }
    if run.timing {
        cfg.timing = true;
    }
    if let Some(out) = &run.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run_experiment(root: &Path, mut cfg: ExperimentConfig, stem: &str, with_epsilon: bool) -> anyhow::Result<()> {
    cfg.validate()?;
    let dir = root.join(&cfg.output_dir);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, cfg.to_toml()?)?;
    emit_artifact(&config_path);
    cfg.epsilons = cfg.epsilon_grid()?;
    let (rows, artifacts) = run_to_dir(&cfg, &dir, stem, with_epsilon)?;
    for r in &rows {
        eprintln!(
            "epsilon={} method={} seed={} clean_acc={} noisy_acc={}",
            r.epsilon, r.method, r.seed, r.clean_acc, r.noisy_acc
        );
    }
    for p in &artifacts.cells {
        emit_artifact(p);
    }
    emit_artifact(&artifacts.report);
    emit_artifact(&artifacts.summary);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let root = cli.out_root.as_path();
    match cli.command {
        Command::GenNoise { pattern, out } => gen_noise(root, &pattern, &out),
        Command::Bound { pattern, grid, out } => bound(root, &pattern, grid, &out),
        Command::Rescale { matrix, epsilon, out } => rescale(root, &matrix, epsilon, &out),
        Command::Corrupt {
            config,
            data,
            matrix,
            classes,
            epsilon,
            seed,
            out,
        } => corrupt_cmd(
            root,
            config.as_deref(),
            data.as_deref(),
            matrix.as_deref(),
            classes,
            epsilon,
            seed,
            &out,
        ),
        Command::Split {
            data,
            classes,
            fraction,
            seed,
            out,
        } => split(root, &data, classes, fraction, seed, &out),
        Command::Train { run, epsilon } => {
            let mut cfg = load_run_config(&run)?;
            let eps = match epsilon {
                Some(e) => e,
                None => cfg.epsilon_grid()?[0],
            };
            cfg.epsilons = vec![eps];
            run_experiment(root, cfg, "report", false)
        }
        Command::Sweep { run, epsilons } => {
            let mut cfg = load_run_config(&run)?;
            if let Some(e) = epsilons {
                cfg.epsilons = e;
            }
            run_experiment(root, cfg, "sweep", true)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 4,
        Some(Error::InfeasibleScale(_) | Error::ZeroNoise | Error::EmptyFeasibleSet) => 3,
        Some(Error::Io(_)) => 1,
        Some(_) => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
