use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pgd_multitarget::analysis::{
    basin_map, logit_landscape, linearity_spectrum, write_basin_csv, write_landscape_csv,
    write_spectrum_csv, DEFAULT_LANDSCAPE_RESOLUTION,
};
use pgd_multitarget::engine::AscentSpec;
use pgd_multitarget::harness::{
    aggregate_command, attack_command, mc_linear_experiment, nonconvex_experiment, toy_experiment,
    write_nonconvex_csv, write_report_csv, write_summary_csv, write_toy_csv, McLinearConfig,
    ThreatSpec,
};
use pgd_multitarget::models::load_model;
use pgd_multitarget::{
    AttackConfig, Error, OptimizerKind, Result, StepSchedule, Strategy, SurrogateLoss, TargetCount,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "pgdmt", version, about = "PGD and MultiTargeted adversarial testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run attacks on a model and aggregate their results.
    #[command(subcommand)]
    Attack(AttackCommand),
    /// Built-in experiments on synthetic linear problems.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
    /// Diagnostics around a single input.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand)]
enum AttackCommand {
    /// Attack every example of a JSONL file and write one result per line.
    Run {
        #[arg(long)]
        model: PathBuf,
        /// JSONL with {"example_id", "input", "label"} per line.
        #[arg(long)]
        examples: PathBuf,
        #[command(flatten)]
        threat: ThreatArgs,
        #[command(flatten)]
        attack: Box<AttackArgs>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Per-example worst case over several result files.
    Aggregate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Margin-loss PGD vs MultiTargeted on random linear classifiers.
    McLinear {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// PGD restarts (default: classes - 1).
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long, default_value_t = 64)]
        steps: usize,
        #[arg(long, default_value = "sign")]
        optimizer: OptimizerKind,
        /// Constant step size (default: epsilon / 16).
        #[arg(long)]
        step: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-dimensional problem with a margin basin of chosen size.
    Toy {
        /// Fraction of the threat set from which margin ascent succeeds.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The two built-in problems over non-convex threat sets.
    Nonconvex {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Normalized singular values of per-logit input gradients.
    Linearity {
        #[command(flatten)]
        point: PointArgs,
        #[command(flatten)]
        threat: ThreatArgs,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Logits on the plane of the attack direction and a random direction.
    Landscape {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        label: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = DEFAULT_LANDSCAPE_RESOLUTION)]
        resolution: usize,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success of a single deterministic ascent from every grid point.
    Basin {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        label: usize,
        #[command(flatten)]
        threat: ThreatArgs,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PointArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated coordinates of the nominal input.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    input: Vec<f64>,
}

#[derive(Args)]
struct ThreatArgs {
    #[arg(long)]
    epsilon: f64,
    /// Clip every coordinate to LO,HI.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    clip: Option<Vec<f64>>,
}

impl ThreatArgs {
    fn spec(&self) -> Result<ThreatSpec> {
        let clip = match self.clip.as_deref() {
            None => None,
            Some([lo, hi]) => Some((*lo, *hi)),
            Some(_) => return Err(Error::Config("--clip expects LO,HI".into())),
        };
        Ok(ThreatSpec {
            epsilon: self.epsilon,
            clip,
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    Pgd,
    Mt,
    PgdMt,
}

/// Attack settings; flags override the `--config` file, which overrides
/// the defaults (Adam, 0.1 decayed 10× at K/2 and 3K/4, margin loss).
#[derive(Args)]
struct AttackArgs {
    /// JSON file with AttackConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    attack: Option<AttackKind>,
    /// xent, margin or logit_diff:<class> (pgd only).
    #[arg(long)]
    loss: Option<SurrogateLoss>,
    /// Number of target classes, or "all" (mt only).
    #[arg(long)]
    targets: Option<TargetCount>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// A constant step, "default", or {"initial": .., "decay": [[frac, mult], ..]}.
    #[arg(long)]
    schedule: Option<StepSchedule>,
    #[arg(long)]
    steps: Option<usize>,
    /// Restarts (pgd) or restarts per target (mt, pgd-mt).
    #[arg(long)]
    restarts: Option<usize>,
    /// Total restart budget split evenly across targets (mt, pgd-mt).
    #[arg(long)]
    total_restarts: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, action = clap::ArgAction::Set)]
    early_stop: Option<bool>,
}

impl AttackArgs {
    fn build(&self) -> Result<AttackConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Parse {
                    location: path.display().to_string(),
                    message: e.to_string(),
                })?
            }
            None => AttackConfig::pgd_default(100, 1, 0),
        };
        if let Some(kind) = self.attack {
            cfg.strategy = match kind {
                AttackKind::Pgd => Strategy::FixedLoss {
                    loss: SurrogateLoss::Margin,
                },
                AttackKind::Mt => Strategy::Multitargeted {
                    targets: TargetCount::All,
                },
                AttackKind::PgdMt => Strategy::PgdPlusMt,
            };
        }
        if let Some(loss) = self.loss {
            match &mut cfg.strategy {
                Strategy::FixedLoss { loss: l } => *l = loss,
                _ => return Err(Error::Config("--loss applies to the pgd attack only".into())),
            }
        }
        if let Some(t) = self.targets {
            match &mut cfg.strategy {
                Strategy::Multitargeted { targets } => *targets = t,
                _ => return Err(Error::Config("--targets applies to the mt attack only".into())),
            }
        }
        if let Some(o) = self.optimizer {
            cfg.optimizer = o;
        }
        if let Some(s) = &self.schedule {
            cfg.schedule = s.clone();
        }
        if let Some(k) = self.steps {
            cfg.steps = k;
        }
        if let Some(r) = self.restarts {
            cfg.restarts = r;
        }
        if self.total_restarts.is_some() {
            cfg.total_restarts = self.total_restarts;
        }
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(e) = self.early_stop {
            cfg.early_stop = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes CSV produced by `f` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            f(&mut buf).map_err(|e| io_error(path, e))?;
            fs::write(path, buf).map_err(|e| io_error(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| io_error(Path::new("<stdout>"), e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Attack(AttackCommand::Run {
            model,
            examples,
            threat,
            attack,
            out,
            threads,
        }) => {
            let cfg = attack.build()?;
            let summary = attack_command(&model, &examples, &threat.spec()?, &cfg, threads, &out)?;
            emit(None, |w| write_summary_csv(&[summary], w))
        }
        Command::Attack(AttackCommand::Aggregate { inputs, out }) => {
            let summary = aggregate_command(&inputs, out.as_deref())?;
            emit(None, |w| write_summary_csv(&[summary], w))
        }
        Command::Experiment(ExperimentCommand::McLinear {
            classes,
            dim,
            epsilon,
            samples,
            restarts,
            steps,
            optimizer,
            step,
            seed,
            threads,
            out,
        }) => {
            let cfg = McLinearConfig {
                num_classes: classes,
                input_dim: dim,
                epsilon,
                samples,
                pgd_restarts: restarts,
                steps,
                optimizer,
                step,
                master_seed: seed,
            };
            let report = mc_linear_experiment(&cfg, threads)?;
            emit(out.as_deref(), |w| write_report_csv(&report, w))
        }
        Command::Experiment(ExperimentCommand::Toy {
            rho,
            trials,
            restarts,
            seed,
            threads,
            out,
        }) => {
            let reports = rho
                .iter()
                .map(|&r| toy_experiment(r, trials, restarts, seed, threads))
                .collect::<Result<Vec<_>>>()?;
            emit(out.as_deref(), |w| write_toy_csv(&reports, w))
        }
        Command::Experiment(ExperimentCommand::Nonconvex { out }) => {
            let outcomes = nonconvex_experiment()?;
            emit(out.as_deref(), |w| write_nonconvex_csv(&outcomes, w))
        }
        Command::Analyze(AnalyzeCommand::Linearity {
            point,
            threat,
            samples,
            seed,
            out,
        }) => {
            let model = load_model(&point.model)?;
            let set = threat.spec()?.build(&point.input)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = linearity_spectrum(&model, &set, samples, &mut rng)?;
            emit(out.as_deref(), |w| write_spectrum_csv(&report, w))
        }
        Command::Analyze(AnalyzeCommand::Landscape {
            point,
            label,
            epsilon,
            resolution,
            attack,
            out,
        }) => {
            let model = load_model(&point.model)?;
            let cfg = attack.build()?;
            let l = logit_landscape(
                &model,
                &point.input,
                label,
                epsilon,
                resolution,
                &cfg,
                cfg.master_seed,
            )?;
            if let Some(e) = &l.attack_error {
                eprintln!("warning: attack failed, landscape uses a zero attack direction: {e}");
            }
            emit(out.as_deref(), |w| write_landscape_csv(&l, w))
        }
        Command::Analyze(AnalyzeCommand::Basin {
            point,
            label,
            threat,
            resolution,
            attack,
            out,
        }) => {
            let model = load_model(&point.model)?;
            let cfg = attack.build()?;
            let Strategy::FixedLoss { loss } = cfg.strategy else {
                return Err(Error::Config("basin maps need a single fixed loss (--attack pgd)".into()));
            };
            let set = threat.spec()?.build(&point.input)?;
            let spec = AscentSpec::from_config(&cfg, loss);
            let map = basin_map(&model, &set, label, &spec, resolution)?;
            eprintln!("success fraction {} ({}/{})", map.fraction, map.successes, map.total);
            emit(out.as_deref(), |w| write_basin_csv(&map, w))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
