//! Experiment drivers and the file formats behind the command line.
//!
//! All parallel work runs on an explicitly sized rayon pool; every job
//! derives its own seed from the master seed and its index, and results
//! are assembled in index order, so outputs do not depend on the thread
//! count.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{basin_map, basin_map_union};
use crate::engine::{
    derive_seed, run_attack, run_multitargeted, run_untargeted, AscentSpec, AttackConfig,
    Strategy, TargetCount,
};
use crate::error::{Error, Result};
use crate::losses::{argmax, SurrogateLoss};
use crate::models::{load_model, Model};
use crate::numerics::Mat;
use crate::optim::{AdamParams, OptimizerKind, StepSchedule};
use crate::oracle::{affine_margin_lipschitz, analyze_affine, grid_oracle, DEFAULT_GRID_RESOLUTION};
use crate::threat::{Aabb, BoxUnion, LinfBall, ThreatSet};

/// A pool with `threads` workers; 0 lets rayon pick.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))
}

/// Runs `job(i)` for `i in 0..n` on the pool and returns the results in
/// index order; the first error by index wins.
fn par_indexed<T: Send>(
    threads: usize,
    n: usize,
    job: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let out: Vec<Result<T>> =
        thread_pool(threads)?.install(|| (0..n).into_par_iter().map(&job).collect());
    out.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub samples: usize,
    pub successes: usize,
    pub rate: f64,
    /// 95% normal-approximation half-width, `1.96 √(p(1−p)/n)`.
    pub half_width: f64,
}

impl RateEstimate {
    pub fn new(successes: usize, samples: usize) -> Self {
        if samples == 0 {
            return Self {
                samples,
                successes,
                rate: 0.0,
                half_width: 0.0,
            };
        }
        let p = successes as f64 / samples as f64;
        Self {
            samples,
            successes,
            rate: p,
            half_width: 1.96 * (p * (1.0 - p) / samples as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McLinearConfig {
    pub num_classes: usize,
    pub input_dim: usize,
    pub epsilon: f64,
    pub samples: usize,
    /// PGD restarts; `None` means `C − 1`.
    pub pgd_restarts: Option<usize>,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    /// Constant step size; `None` means `ε / 16`.
    pub step: Option<f64>,
    pub master_seed: u64,
}

impl McLinearConfig {
    /// `d = 1`, `ε = 1`, sign steps of `ε/16`, `K = 64`, `C − 1` restarts.
    pub fn new(num_classes: usize, samples: usize, master_seed: u64) -> Self {
        Self {
            num_classes,
            input_dim: 1,
            epsilon: 1.0,
            samples,
            pgd_restarts: None,
            steps: 64,
            optimizer: OptimizerKind::Sign,
            step: None,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if self.input_dim == 0 || self.samples == 0 || self.steps == 0 {
            return Err(Error::config("input dimension, samples and steps must be >= 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.pgd_restarts == Some(0) {
            return Err(Error::config("restarts must be >= 1"));
        }
        Ok(())
    }

    pub fn restarts(&self) -> usize {
        self.pgd_restarts.unwrap_or(self.num_classes - 1)
    }

    pub fn step_size(&self) -> f64 {
        self.step.unwrap_or(self.epsilon / 16.0)
    }

    fn attack(&self, strategy: Strategy, restarts: usize, seed: u64) -> AttackConfig {
        AttackConfig {
            optimizer: self.optimizer,
            early_stop: true,
            ..AttackConfig::sign_constant(strategy, self.step_size(), self.steps, restarts, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub attack: String,
    /// `None` for the unconditioned rate.
    pub confusing_classes: Option<usize>,
    pub estimate: RateEstimate,
}

/// Success rates on attackable samples, overall and by confusing-class
/// count. Counts with no samples are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub total_samples: usize,
    pub attackable: usize,
    pub rows: Vec<ConditionRow>,
}

impl ExperimentReport {
    pub fn rate(&self, attack: &str, confusing_classes: Option<usize>) -> Option<&RateEstimate> {
        self.rows
            .iter()
            .find(|r| r.attack == attack && r.confusing_classes == confusing_classes)
            .map(|r| &r.estimate)
    }
}

pub fn write_report_csv(report: &ExperimentReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "attack,confusing_classes,samples,successes,rate,half_width")?;
    for r in &report.rows {
        let k = r
            .confusing_classes
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        let e = &r.estimate;
        writeln!(w, "{},{k},{},{},{},{}", r.attack, e.samples, e.successes, e.rate, e.half_width)?;
    }
    Ok(())
}

struct McOutcome {
    confusing: usize,
    pgd: bool,
    mt: bool,
}

fn mc_sample(cfg: &McLinearConfig, i: usize) -> Result<Option<McOutcome>> {
    let (c, d) = (cfg.num_classes, cfg.input_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.master_seed, i as u64, 0));
    let w: Vec<f64> = (0..c * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let b: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let w = Mat::new(c, d, w)?;
    let y = argmax(&b);
    let x = vec![0.0; d];
    let report = analyze_affine(&w, &b, &x, y, cfg.epsilon)?;
    if !report.attackable {
        return Ok(None);
    }
    let model = Model::linear(w, b)?;
    let set: ThreatSet = LinfBall::new(x.clone(), cfg.epsilon)?.into();
    let seed = derive_seed(cfg.master_seed, i as u64, 1);
    let pgd_cfg = cfg.attack(
        Strategy::FixedLoss { loss: SurrogateLoss::Margin },
        cfg.restarts(),
        seed,
    );
    let mt_cfg = cfg.attack(Strategy::Multitargeted { targets: TargetCount::All }, 1, seed);
    Ok(Some(McOutcome {
        confusing: report.confusing_classes.len(),
        pgd: run_untargeted(&model, &x, y, &set, &pgd_cfg)?.success,
        mt: run_multitargeted(&model, &x, y, &set, &mt_cfg)?.success,
    }))
}

/// Random affine classifiers with `W, b ~ U[−1, 1]`, `x = 0` and
/// `y = argmax b`; non-attackable draws are skipped. Compares margin-loss
/// PGD with one MultiTargeted round over all targets.
pub fn mc_linear_experiment(cfg: &McLinearConfig, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let outcomes = par_indexed(threads, cfg.samples, |i| mc_sample(cfg, i))?;
    let hits: Vec<McOutcome> = outcomes.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for (attack, pick) in [("pgd", (|o: &McOutcome| o.pgd) as fn(&McOutcome) -> bool), ("mt", |o| o.mt)] {
        let n = hits.len();
        let s = hits.iter().filter(|o| pick(o)).count();
        rows.push(ConditionRow {
            attack: attack.into(),
            confusing_classes: None,
            estimate: RateEstimate::new(s, n),
        });
        for k in 1..cfg.num_classes {
            let group: Vec<&McOutcome> = hits.iter().filter(|o| o.confusing == k).collect();
            if group.is_empty() {
                continue;
            }
            let s = group.iter().filter(|o| pick(o)).count();
            rows.push(ConditionRow {
                attack: attack.into(),
                confusing_classes: Some(k),
                estimate: RateEstimate::new(s, group.len()),
            });
        }
    }
    Ok(ExperimentReport {
        total_samples: cfg.samples,
        attackable: hits.len(),
        rows,
    })
}

/// A 1-D, 3-class affine model over `[−1, 1]` (`x = 0`, `y = 0`) on which
/// margin ascent ends on the adversarial side exactly from initializations
/// right of `1 − 2ρ`, a fraction `ρ` of the interval.
///
/// Class 2 is the only confusing class (`z₂ − z₀ = ρ` at `+1`); class 1 is
/// never adversarial and has slope `−ρ/(4(1−ρ))`, meeting class 2 at the
/// crossover.
pub fn toy_model(rho: f64) -> Result<Model> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("basin fraction must be in (0, 1), got {rho}")));
    }
    let crossover = 1.0 - 2.0 * rho;
    let slope = rho / (4.0 * (1.0 - rho));
    let b2 = -(1.0 - rho);
    let b1 = crossover + b2 + slope * crossover;
    Model::linear(
        Mat::from_rows(&[vec![0.0], vec![-slope], vec![1.0]])?,
        vec![0.0, b1, b2],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    pub rho: f64,
    pub restarts: usize,
    pub trials: usize,
    pub pgd: RateEstimate,
    /// `1 − (1 − ρ)^restarts`
    pub expected_pgd: f64,
    pub mt: RateEstimate,
}

/// Repeated margin-loss PGD and MultiTargeted on [`toy_model`]`(ρ)` with
/// sign steps of 1/16 for 64 steps.
pub fn toy_experiment(
    rho: f64,
    trials: usize,
    restarts: usize,
    seed: u64,
    threads: usize,
) -> Result<ToyReport> {
    let model = toy_model(rho)?;
    if trials == 0 || restarts == 0 {
        return Err(Error::config("trials and restarts must be >= 1"));
    }
    let set: ThreatSet = LinfBall::new(vec![0.0], 1.0)?.into();
    let attack = |strategy, restarts, seed| AttackConfig {
        early_stop: true,
        ..AttackConfig::sign_constant(strategy, 1.0 / 16.0, 64, restarts, seed)
    };
    let outcomes = par_indexed(threads, trials, |t| {
        let pgd = attack(
            Strategy::FixedLoss { loss: SurrogateLoss::Margin },
            restarts,
            derive_seed(seed, t as u64, 0),
        );
        let mt = attack(
            Strategy::Multitargeted { targets: TargetCount::All },
            1,
            derive_seed(seed, t as u64, 1),
        );
        Ok((
            run_untargeted(&model, &[0.0], 0, &set, &pgd)?.success,
            run_multitargeted(&model, &[0.0], 0, &set, &mt)?.success,
        ))
    })?;
    let pgd = outcomes.iter().filter(|o| o.0).count();
    let mt = outcomes.iter().filter(|o| o.1).count();
    Ok(ToyReport {
        rho,
        restarts,
        trials,
        pgd: RateEstimate::new(pgd, trials),
        expected_pgd: 1.0 - (1.0 - rho).powi(restarts as i32),
        mt: RateEstimate::new(mt, trials),
    })
}

pub fn write_toy_csv(reports: &[ToyReport], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "rho,restarts,trials,pgd_successes,pgd_rate,pgd_half_width,expected_pgd_rate,mt_successes,mt_rate"
    )?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.rho,
            r.restarts,
            r.trials,
            r.pgd.successes,
            r.pgd.rate,
            r.pgd.half_width,
            r.expected_pgd,
            r.mt.successes,
            r.mt.rate
        )?;
    }
    Ok(())
}

/// A 2-D, 3-class affine problem over a non-convex set.
#[derive(Debug, Clone)]
pub struct NonconvexDemo {
    pub name: String,
    pub model: Model,
    pub set: ThreatSet,
    pub nominal: Vec<f64>,
    pub label: usize,
}

/// The L-shaped set `[0,1]×[0,0.2] ∪ [0.8,1]×[0,1]`.
fn l_shape() -> Result<ThreatSet> {
    Ok(BoxUnion::new(vec![
        Aabb::new(vec![0.0, 0.0], vec![1.0, 0.2])?,
        Aabb::new(vec![0.8, 0.0], vec![1.0, 1.0])?,
    ])?
    .into())
}

/// Two demos on the L-shaped set with `z₀ ≡ 0` and `y = 0`; class 2 is the
/// only confusing class in both.
///
/// 1. `pgd_wins`: class 2 is adversarial only in a sliver at `(0.8, 1)`,
///    and its direction `(−, +)` traps targeted ascent from the horizontal
///    arm at `(0, 0.2)`. Class-1 ascent ends at the harmless corner
///    `(1, 1)`, but under the margin the class-1 term carries most of the
///    horizontal arm up the vertical one until class 2 takes over.
/// 2. `mt_wins`: the class-2 direction `(+, +)` reaches the adversarial
///    corner from everywhere, but the class-1 term dominates the margin
///    near the origin and pulls ascent there.
pub fn nonconvex_demos() -> Result<Vec<NonconvexDemo>> {
    let demo = |name: &str, w: [[f64; 2]; 2], b: [f64; 2]| -> Result<NonconvexDemo> {
        Ok(NonconvexDemo {
            name: name.into(),
            model: Model::linear(
                Mat::from_rows(&[vec![0.0, 0.0], w[0].to_vec(), w[1].to_vec()])?,
                vec![0.0, b[0], b[1]],
            )?,
            set: l_shape()?,
            nominal: vec![0.4, 0.1],
            label: 0,
        })
    };
    Ok(vec![
        demo("pgd_wins", [[0.1, 0.1], [-0.8, 1.0]], [-0.4, -0.3])?,
        demo("mt_wins", [[-0.3, -0.3], [0.5, 0.5]], [-0.1, -0.8])?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconvexSettings {
    pub step: f64,
    pub steps: usize,
    pub basin_resolution: usize,
    pub grid_resolution: usize,
}

impl Default for NonconvexSettings {
    fn default() -> Self {
        Self {
            step: 1.0 / 64.0,
            steps: 256,
            basin_resolution: 51,
            grid_resolution: DEFAULT_GRID_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonconvexOutcome {
    pub name: String,
    pub pgd_fraction: f64,
    pub mt_fraction: f64,
    /// MultiTargeted basin fraction on the bounding box of the set.
    pub convex_mt_fraction: f64,
    pub grid_optimum: f64,
    pub grid_witness: Vec<f64>,
    /// Slack `L · h / 2` of the grid optimum.
    pub grid_bound: f64,
    /// Best end-point margins reached by any basin ascent.
    pub pgd_best_margin: f64,
    pub mt_best_margin: f64,
    pub winner: String,
}

/// Basin fractions of margin-loss PGD and MultiTargeted on one demo,
/// certified against the grid oracle.
pub fn run_nonconvex_demo(demo: &NonconvexDemo, settings: &NonconvexSettings) -> Result<NonconvexOutcome> {
    let schedule = StepSchedule::Constant(settings.step);
    let spec = |loss| AscentSpec {
        loss,
        optimizer: OptimizerKind::Sign,
        adam: AdamParams::default(),
        schedule: &schedule,
        steps: settings.steps,
        early_stop: false,
    };
    let y = demo.label;
    let mt_specs: Vec<AscentSpec<'_>> = (0..demo.model.num_classes())
        .filter(|&t| t != y)
        .map(|t| spec(SurrogateLoss::LogitDiff { target: t }))
        .collect();
    let res = settings.basin_resolution;
    let pgd = basin_map(&demo.model, &demo.set, y, &spec(SurrogateLoss::Margin), res)?;
    let mt = basin_map_union(&demo.model, &demo.set, y, &mt_specs, res)?;
    let hull: ThreatSet = BoxUnion::new(vec![demo.set.bounding_box()])?.into();
    let convex_mt = basin_map_union(&demo.model, &hull, y, &mt_specs, res)?;
    let grid = grid_oracle(&demo.model, &demo.set, y, settings.grid_resolution)?;
    let (w, _) = demo
        .model
        .affine_parts()
        .ok_or_else(|| Error::invalid("demo model must be affine"))?;
    let best = |m: &[f64]| m.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winner = if pgd.fraction > mt.fraction {
        "pgd"
    } else if mt.fraction > pgd.fraction {
        "mt"
    } else {
        "tie"
    };
    Ok(NonconvexOutcome {
        name: demo.name.clone(),
        pgd_fraction: pgd.fraction,
        mt_fraction: mt.fraction,
        convex_mt_fraction: convex_mt.fraction,
        grid_optimum: grid.margin,
        grid_witness: grid.witness,
        grid_bound: affine_margin_lipschitz(w, y) * grid.spacing / 2.0,
        pgd_best_margin: best(&pgd.margins),
        mt_best_margin: best(&mt.margins),
        winner: winner.into(),
    })
}

pub fn nonconvex_experiment() -> Result<Vec<NonconvexOutcome>> {
    let settings = NonconvexSettings::default();
    nonconvex_demos()?
        .iter()
        .map(|d| run_nonconvex_demo(d, &settings))
        .collect()
}

pub fn write_nonconvex_csv(outcomes: &[NonconvexOutcome], mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "demo,pgd_fraction,mt_fraction,convex_mt_fraction,grid_optimum,pgd_best_margin,mt_best_margin,winner"
    )?;
    for o in outcomes {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            o.name,
            o.pgd_fraction,
            o.mt_fraction,
            o.convex_mt_fraction,
            o.grid_optimum,
            o.pgd_best_margin,
            o.mt_best_margin,
            o.winner
        )?;
    }
    Ok(())
}

/// One line of an examples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub example_id: String,
    pub input: Vec<f64>,
    pub label: usize,
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub example_id: String,
    pub attack: String,
    pub seed: u64,
    pub success: bool,
    pub best_margin: f64,
    pub best_input: Vec<f64>,
    pub grad_evals: u64,
    pub restarts_run: usize,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), i + 1),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<ExampleRecord>> {
    read_jsonl(path.as_ref())
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    read_jsonl(path.as_ref())
}

pub fn write_results(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    write_jsonl(path.as_ref(), records)
}

/// An ℓ∞ ball of radius `epsilon` around each example, optionally clipped
/// to `[lo, hi]` in every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatSpec {
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<(f64, f64)>,
}

impl ThreatSpec {
    pub fn build(&self, x: &[f64]) -> Result<ThreatSet> {
        let ball = match self.clip {
            None => LinfBall::new(x.to_vec(), self.epsilon)?,
            Some((lo, hi)) => LinfBall::with_box(
                x.to_vec(),
                self.epsilon,
                Aabb::new(vec![lo; x.len()], vec![hi; x.len()])?,
            )?,
        };
        Ok(ball.into())
    }
}

/// Attacks every example; example `i` uses the master seed
/// `derive_seed(config.master_seed, i, 0)`.
pub fn attack_examples(
    model: &Model,
    examples: &[ExampleRecord],
    threat: &ThreatSpec,
    config: &AttackConfig,
    threads: usize,
) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    let label = config.label();
    par_indexed(threads, examples.len(), |i| {
        let ex = &examples[i];
        let set = threat.build(&ex.input).map_err(|e| in_example(ex, e))?;
        let seed = derive_seed(config.master_seed, i as u64, 0);
        let cfg = AttackConfig {
            master_seed: seed,
            ..config.clone()
        };
        let r = run_attack(model, &ex.input, ex.label, &set, &cfg).map_err(|e| in_example(ex, e))?;
        Ok(ResultRecord {
            example_id: ex.example_id.clone(),
            attack: label.clone(),
            seed,
            success: r.success,
            best_margin: r.best_margin,
            best_input: r.best_input,
            grad_evals: r.grad_evals,
            restarts_run: r.restarts.len(),
        })
    })
}

fn in_example(ex: &ExampleRecord, e: Error) -> Error {
    let ctx = |m: String| format!("example '{}': {m}", ex.example_id);
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(ctx(m)),
        Error::Numerical(m) => Error::Numerical(ctx(m)),
        Error::Config(m) => Error::Config(ctx(m)),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub attack: String,
    pub examples: usize,
    /// Examples on which no misclassified feasible input was found.
    pub robust: usize,
    pub accuracy_under_attack: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_accuracy: Option<f64>,
}

pub fn summarize(records: &[ResultRecord]) -> AttackSummary {
    let robust = records.iter().filter(|r| !r.success).count();
    let mut attacks: Vec<&str> = Vec::new();
    for r in records {
        if !attacks.contains(&r.attack.as_str()) {
            attacks.push(&r.attack);
        }
    }
    AttackSummary {
        attack: attacks.join(","),
        examples: records.len(),
        robust,
        accuracy_under_attack: if records.is_empty() {
            0.0
        } else {
            robust as f64 / records.len() as f64
        },
        clean_accuracy: None,
    }
}

pub fn clean_accuracy(model: &Model, examples: &[ExampleRecord]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for ex in examples {
        if argmax(&model.forward(&ex.input).map_err(|e| in_example(ex, e))?) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunMetadata<'a> {
    model: &'a Path,
    examples: &'a Path,
    threat: &'a ThreatSpec,
    config: &'a AttackConfig,
    summary: &'a AttackSummary,
}

/// Path of the metadata written next to a results file.
pub fn metadata_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    out.with_file_name(name)
}

/// Loads a model and an examples file, attacks every example and writes
/// one JSONL record per example plus a `.meta.json` sidecar recording the
/// threat model and configuration.
pub fn attack_command(
    model_path: &Path,
    examples_path: &Path,
    threat: &ThreatSpec,
    config: &AttackConfig,
    threads: usize,
    out: &Path,
) -> Result<AttackSummary> {
    let model = load_model(model_path)?;
    let examples = read_examples(examples_path)?;
    let records = attack_examples(&model, &examples, threat, config, threads)?;
    write_results(out, &records)?;
    let mut summary = summarize(&records);
    summary.attack = config.label();
    summary.clean_accuracy = Some(clean_accuracy(&model, &examples)?);
    let meta = RunMetadata {
        model: model_path,
        examples: examples_path,
        threat,
        config,
        summary: &summary,
    };
    let meta_path = metadata_path(out);
    fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta).expect("metadata serializes"),
    )
    .map_err(|e| Error::io(&meta_path, e))?;
    Ok(summary)
}

/// Per-example worst case over several attacks' results: the record with
/// the highest `(success, margin)`, first on ties, with budgets summed.
/// Every set must cover the same examples in the same order.
pub fn aggregate_results(sets: &[Vec<ResultRecord>]) -> Result<Vec<ResultRecord>> {
    let first = sets
        .first()
        .ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    for (k, s) in sets.iter().enumerate().skip(1) {
        if s.len() != first.len() {
            return Err(Error::invalid(format!(
                "result set {k} has {} records, expected {}",
                s.len(),
                first.len()
            )));
        }
    }
    let attack = format!(
        "aggregate[{}]",
        sets.iter()
            .map(|s| s.first().map_or("", |r| r.attack.as_str()))
            .collect::<Vec<_>>()
            .join("+")
    );
    (0..first.len())
        .map(|i| {
            let mut best = &first[i];
            let mut grad_evals = 0;
            let mut restarts_run = 0;
            for s in sets {
                let r = &s[i];
                if r.example_id != best.example_id {
                    return Err(Error::invalid(format!(
                        "record {} pairs example '{}' with '{}'",
                        i + 1,
                        best.example_id,
                        r.example_id
                    )));
                }
                grad_evals += r.grad_evals;
                restarts_run += r.restarts_run;
                let ord = r
                    .success
                    .cmp(&best.success)
                    .then(r.best_margin.total_cmp(&best.best_margin));
                if ord == std::cmp::Ordering::Greater {
                    best = r;
                }
            }
            Ok(ResultRecord {
                attack: attack.clone(),
                grad_evals,
                restarts_run,
                ..best.clone()
            })
        })
        .collect()
}

/// Aggregates result files and optionally writes the combined records.
pub fn aggregate_command(inputs: &[PathBuf], out: Option<&Path>) -> Result<AttackSummary> {
    let sets = inputs
        .iter()
        .map(read_results)
        .collect::<Result<Vec<_>>>()?;
    let combined = aggregate_results(&sets)?;
    if let Some(out) = out {
        write_results(out, &combined)?;
    }
    Ok(summarize(&combined))
}

pub fn write_summary_csv(summaries: &[AttackSummary], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "attack,examples,robust,accuracy_under_attack,clean_accuracy")?;
    for s in summaries {
        let clean = s.clean_accuracy.map(|c| c.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{clean}",
            s.attack, s.examples, s.robust, s.accuracy_under_attack
        )?;
    }
    Ok(())
}
