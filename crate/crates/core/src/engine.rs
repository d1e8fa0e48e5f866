//! Attack drivers: restarted PGD with a fixed surrogate loss, MultiTargeted,
//! and the combined PGD+MT schedule, plus cross-attack aggregation.
//!
//! Every restart draws its initial point from its own RNG, seeded by
//! [`derive_seed`] from the master seed, the restart index and the target
//! class. Results therefore do not depend on execution order.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::{argmax, margin_unchecked, SurrogateLoss};
use crate::models::Model;
use crate::numerics::ensure_finite;
use crate::optim::{AdamParams, Optimizer, OptimizerKind, StepSchedule};
use crate::threat::ThreatSet;

/// How many target classes MultiTargeted cycles through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetCount {
    All,
    Top(usize),
}

impl fmt::Display for TargetCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetCount::All => f.write_str("all"),
            TargetCount::Top(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for TargetCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TargetCount::All);
        }
        s.parse()
            .map(TargetCount::Top)
            .map_err(|_| Error::config(format!("targets must be an integer or 'all', got '{s}'")))
    }
}

impl Serialize for TargetCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetCount::All => s.serialize_str("all"),
            TargetCount::Top(t) => s.serialize_u64(*t as u64),
        }
    }
}

impl<'de> Deserialize<'de> for TargetCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(usize),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(t) => Ok(TargetCount::Top(t)),
            Repr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    FixedLoss { loss: SurrogateLoss },
    Multitargeted { targets: TargetCount },
    PgdPlusMt,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamParams,
    pub schedule: StepSchedule,
    #[serde(flatten)]
    pub strategy: Strategy,
    /// K, projected ascent steps per restart.
    pub steps: usize,
    /// N_r for a fixed loss, N_i (restarts per target) otherwise.
    pub restarts: usize,
    /// A total budget N_r for the targeted strategies; when set, the number
    /// of restarts per target becomes `⌊N_r / #losses⌋`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_restarts: Option<usize>,
    pub master_seed: u64,
    #[serde(default = "default_true")]
    pub early_stop: bool,
}

impl AttackConfig {
    /// Adam, 0.1 with 10× decay at K/2 and 3K/4, margin loss.
    pub fn pgd_default(steps: usize, restarts: usize, master_seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            schedule: StepSchedule::default_piecewise(),
            strategy: Strategy::FixedLoss {
                loss: SurrogateLoss::Margin,
            },
            steps,
            restarts,
            total_restarts: None,
            master_seed,
            early_stop: true,
        }
    }

    pub fn multitargeted_default(steps: usize, restarts: usize, master_seed: u64) -> Self {
        Self {
            strategy: Strategy::Multitargeted {
                targets: TargetCount::All,
            },
            ..Self::pgd_default(steps, restarts, master_seed)
        }
    }

    /// Sign steps of a fixed size, the setting used by the linear-model checks.
    pub fn sign_constant(strategy: Strategy, step: f64, steps: usize, restarts: usize, seed: u64) -> Self {
        Self {
            optimizer: OptimizerKind::Sign,
            adam: AdamParams::default(),
            schedule: StepSchedule::Constant(step),
            strategy,
            steps,
            restarts,
            total_restarts: None,
            master_seed: seed,
            early_stop: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps (K) must be at least 1"));
        }
        if self.restarts == 0 && self.total_restarts.is_none() {
            return Err(Error::config("restarts must be at least 1"));
        }
        if let Strategy::Multitargeted { targets: TargetCount::Top(0) } = self.strategy {
            return Err(Error::config("targets must be at least 1"));
        }
        self.schedule.validate()
    }

    /// Short label such as `pgd[margin]`, `mt[all]` or `pgd+mt`.
    pub fn label(&self) -> String {
        match &self.strategy {
            Strategy::FixedLoss { loss } => format!("pgd[{loss}]"),
            Strategy::Multitargeted { targets } => format!("mt[{targets}]"),
            Strategy::PgdPlusMt => "pgd+mt".into(),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `seed = h(h(h(master) ^ index) ^ code)` with `h` the splitmix64 finalizer.
///
/// For restarts, `code` is `target + 1`, or 0 for untargeted losses.
pub fn derive_seed(master: u64, index: u64, code: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ index) ^ code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart_index: usize,
    pub target: Option<usize>,
    pub loss: SurrogateLoss,
    pub seed: u64,
    pub init: Vec<f64>,
    pub final_point: Vec<f64>,
    pub best_point: Vec<f64>,
    pub best_margin: f64,
    /// 0–1 loss at `best_point`.
    pub best_zero_one: u8,
    pub success: bool,
    /// Gradient evaluations actually performed.
    pub steps: usize,
    /// Set when the restart hit a non-finite value; such restarts are
    /// excluded from best-of selection.
    pub failure: Option<String>,
}

impl RestartRecord {
    fn target_code(&self) -> usize {
        self.target.map_or(0, |t| t + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub example_id: String,
    pub best_input: Vec<f64>,
    pub best_margin: f64,
    pub success: bool,
    pub restarts: Vec<RestartRecord>,
    pub grad_evals: u64,
}

/// Order on candidate points: 0–1 loss first, then margin.
fn candidate_cmp(l1: u8, m1: f64, l2: u8, m2: f64) -> Ordering {
    l1.cmp(&l2).then(m1.total_cmp(&m2))
}

/// Best-of order across restarts; exact ties go to the lower
/// `(restart index, target)` pair.
fn record_better(a: &RestartRecord, b: &RestartRecord) -> bool {
    match candidate_cmp(a.best_zero_one, a.best_margin, b.best_zero_one, b.best_margin) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            (a.restart_index, a.target_code()) < (b.restart_index, b.target_code())
        }
    }
}

/// Top-`T` classes other than `y` by nominal logit, descending, ties to the
/// lowest index. When `T = C − 1` every other class is returned in index
/// order.
pub fn select_targets(z: &[f64], y: usize, count: TargetCount) -> Result<Vec<usize>> {
    let c = z.len();
    if y >= c {
        return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
    }
    let t = match count {
        TargetCount::All => c - 1,
        TargetCount::Top(t) => t,
    };
    if t == 0 || t > c - 1 {
        return Err(Error::config(format!(
            "target count {t} outside 1..={} for {c} classes",
            c - 1
        )));
    }
    let mut others: Vec<usize> = (0..c).filter(|&i| i != y).collect();
    if t == c - 1 {
        return Ok(others);
    }
    others.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    others.truncate(t);
    Ok(others)
}

/// Everything a single restart needs besides its initial point.
#[derive(Debug, Clone, Copy)]
pub struct AscentSpec<'a> {
    pub loss: SurrogateLoss,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub schedule: &'a StepSchedule,
    pub steps: usize,
    pub early_stop: bool,
}

impl<'a> AscentSpec<'a> {
    pub fn from_config(config: &'a AttackConfig, loss: SurrogateLoss) -> Self {
        Self {
            loss,
            optimizer: config.optimizer,
            adam: config.adam,
            schedule: &config.schedule,
            steps: config.steps,
            early_stop: config.early_stop,
        }
    }
}

/// Projected ascent from a given initial point.
///
/// Each iterate, including the initial point, is a candidate for the
/// best-so-far point.
pub fn ascend_from(
    model: &Model,
    set: &ThreatSet,
    y: usize,
    spec: &AscentSpec<'_>,
    init: Vec<f64>,
) -> RestartRecord {
    let target = match spec.loss {
        SurrogateLoss::LogitDiff { target } => Some(target),
        _ => None,
    };
    let mut rec = RestartRecord {
        restart_index: 0,
        target,
        loss: spec.loss,
        seed: 0,
        init: init.clone(),
        final_point: init.clone(),
        best_point: init.clone(),
        best_margin: f64::NEG_INFINITY,
        best_zero_one: 0,
        success: false,
        steps: 0,
        failure: None,
    };
    let mut opt = Optimizer::new(spec.optimizer, spec.adam, init.len());
    let mut xi = init;

    let consider = |rec: &mut RestartRecord, xi: &[f64], z: &[f64]| -> bool {
        let m = margin_unchecked(z, y);
        let l = u8::from(argmax(z) != y);
        if candidate_cmp(l, m, rec.best_zero_one, rec.best_margin) == Ordering::Greater {
            rec.best_margin = m;
            rec.best_zero_one = l;
            rec.best_point = xi.to_vec();
        }
        m > 0.0
    };

    for k in 1..=spec.steps {
        let (z, grad) =
            model.forward_and_gradient(&xi, |z| spec.loss.logit_gradient_unchecked(z, y));
        if z.iter().any(|v| !v.is_finite()) {
            rec.failure = Some(format!("non-finite logits at step {}", k - 1));
            break;
        }
        if consider(&mut rec, &xi, &z) && spec.early_stop {
            break;
        }
        rec.steps += 1;
        let dir = match opt.update_direction(&grad) {
            Ok(d) => d,
            Err(e) => {
                rec.failure = Some(format!("step {k}: {e}"));
                break;
            }
        };
        let alpha = spec
            .schedule
            .step_size(k, spec.steps)
            .expect("k within 1..=steps");
        let moved: Vec<f64> = xi.iter().zip(&dir).map(|(x, d)| x + alpha * d).collect();
        xi = set.project_unchecked(&moved);
        if xi.iter().any(|v| !v.is_finite()) {
            rec.failure = Some(format!("non-finite iterate at step {k}"));
            break;
        }
        if k == spec.steps {
            let z = model.forward_unchecked(&xi);
            if z.iter().any(|v| !v.is_finite()) {
                rec.failure = Some(format!("non-finite logits at step {k}"));
            } else {
                consider(&mut rec, &xi, &z);
            }
        }
    }
    rec.final_point = xi;
    rec.success = rec.failure.is_none() && rec.best_margin > 0.0;
    rec
}

/// One restart: draws `ξ⁽⁰⁾` uniformly from the set using `seed`, then runs
/// [`ascend_from`].
pub fn run_pgd_restart(
    model: &Model,
    set: &ThreatSet,
    y: usize,
    spec: &AscentSpec<'_>,
    seed: u64,
) -> RestartRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = set.sample_uniform(&mut rng);
    let mut rec = ascend_from(model, set, y, spec, init);
    rec.seed = seed;
    rec
}

fn check_problem(model: &Model, x: &[f64], y: usize, set: &ThreatSet) -> Result<()> {
    check_len("input", x.len(), model.input_dim())?;
    check_len("threat set", set.dim(), model.input_dim())?;
    ensure_finite("input", x)?;
    if y >= model.num_classes() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// A planned restart: its surrogate loss and seed coordinates.
#[derive(Debug, Clone, Copy)]
struct Job {
    restart_index: usize,
    loss: SurrogateLoss,
}

impl Job {
    fn seed(&self, master: u64) -> u64 {
        let code = match self.loss {
            SurrogateLoss::LogitDiff { target } => target as u64 + 1,
            _ => 0,
        };
        derive_seed(master, self.restart_index as u64, code)
    }
}

fn execute(
    model: &Model,
    set: &ThreatSet,
    y: usize,
    config: &AttackConfig,
    jobs: &[Job],
) -> Result<AttackResult> {
    let mut records = Vec::with_capacity(jobs.len());
    let mut grad_evals = 0u64;
    for job in jobs {
        let spec = AscentSpec::from_config(config, job.loss);
        let mut rec = run_pgd_restart(model, set, y, &spec, job.seed(config.master_seed));
        rec.restart_index = job.restart_index;
        grad_evals += if rec.failure.is_some() {
            config.steps as u64
        } else {
            rec.steps as u64
        };
        let stop = config.early_stop && rec.success;
        records.push(rec);
        if stop {
            break;
        }
    }
    let best = records
        .iter()
        .filter(|r| r.failure.is_none())
        .fold(None::<&RestartRecord>, |acc, r| match acc {
            Some(b) if !record_better(r, b) => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| {
            Error::Numerical(format!(
                "all {} restarts failed numerically: {}",
                records.len(),
                records
                    .first()
                    .and_then(|r| r.failure.clone())
                    .unwrap_or_default()
            ))
        })?;
    Ok(AttackResult {
        example_id: String::new(),
        best_input: best.best_point.clone(),
        best_margin: best.best_margin,
        success: best.best_margin > 0.0,
        grad_evals,
        restarts: records,
    })
}

/// Regular PGD: `N_r` restarts on one fixed surrogate loss.
pub fn run_untargeted(
    model: &Model,
    x: &[f64],
    y: usize,
    set: &ThreatSet,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_problem(model, x, y, set)?;
    let Strategy::FixedLoss { loss } = config.strategy else {
        return Err(Error::config("run_untargeted needs a fixed_loss strategy"));
    };
    // validates a logit_diff target against the label
    loss.value(&vec![0.0; model.num_classes()], y)?;
    let n = config.total_restarts.unwrap_or(config.restarts);
    if n == 0 {
        return Err(Error::config("restarts must be at least 1"));
    }
    let jobs: Vec<Job> = (0..n).map(|r| Job { restart_index: r, loss }).collect();
    execute(model, set, y, config, &jobs)
}

fn per_target_restarts(config: &AttackConfig, losses: usize) -> Result<usize> {
    match config.total_restarts {
        Some(total) => {
            let n = total / losses;
            if n == 0 {
                return Err(Error::config(format!(
                    "restart budget {total} is smaller than the {losses} surrogate losses \
                     (|targets| = {losses}); no full round fits"
                )));
            }
            Ok(n)
        }
        None => Ok(config.restarts),
    }
}

/// MultiTargeted: for each of `N_i` rounds, one restart per selected target
/// class on the logit difference `z_t − z_y`.
pub fn run_multitargeted(
    model: &Model,
    x: &[f64],
    y: usize,
    set: &ThreatSet,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_problem(model, x, y, set)?;
    let Strategy::Multitargeted { targets } = config.strategy else {
        return Err(Error::config("run_multitargeted needs a multitargeted strategy"));
    };
    let z = model.forward(x)?;
    let targets = select_targets(&z, y, targets)?;
    let rounds = per_target_restarts(config, targets.len())?;
    let jobs: Vec<Job> = (0..rounds)
        .flat_map(|i| {
            targets.iter().map(move |&t| Job {
                restart_index: i,
                loss: SurrogateLoss::LogitDiff { target: t },
            })
        })
        .collect();
    execute(model, set, y, config, &jobs)
}

/// PGD+MT: each round runs every logit difference and then the margin loss,
/// `C` restarts per round.
pub fn run_pgd_mt(
    model: &Model,
    x: &[f64],
    y: usize,
    set: &ThreatSet,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    check_problem(model, x, y, set)?;
    if config.strategy != Strategy::PgdPlusMt {
        return Err(Error::config("run_pgd_mt needs the pgd_plus_mt strategy"));
    }
    let c = model.num_classes();
    let rounds = per_target_restarts(config, c)?;
    let mut jobs = Vec::with_capacity(rounds * c);
    for i in 0..rounds {
        for t in (0..c).filter(|&t| t != y) {
            jobs.push(Job {
                restart_index: i,
                loss: SurrogateLoss::LogitDiff { target: t },
            });
        }
        jobs.push(Job {
            restart_index: i,
            loss: SurrogateLoss::Margin,
        });
    }
    execute(model, set, y, config, &jobs)
}

/// Dispatches on `config.strategy`.
pub fn run_attack(
    model: &Model,
    x: &[f64],
    y: usize,
    set: &ThreatSet,
    config: &AttackConfig,
) -> Result<AttackResult> {
    match config.strategy {
        Strategy::FixedLoss { .. } => run_untargeted(model, x, y, set, config),
        Strategy::Multitargeted { .. } => run_multitargeted(model, x, y, set, config),
        Strategy::PgdPlusMt => run_pgd_mt(model, x, y, set, config),
    }
}

/// Worst case across attacks on the same example: highest
/// `(success, margin)`, first one on exact ties.
pub fn aggregate(results: &[AttackResult]) -> Result<AttackResult> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("aggregate of an empty result list"))?;
    if let Some(r) = results.iter().find(|r| r.example_id != first.example_id) {
        return Err(Error::invalid(format!(
            "aggregate over mismatched examples '{}' and '{}'",
            first.example_id, r.example_id
        )));
    }
    let mut best = first;
    for r in &results[1..] {
        let ord = r
            .success
            .cmp(&best.success)
            .then(r.best_margin.total_cmp(&best.best_margin));
        if ord == Ordering::Greater {
            best = r;
        }
    }
    Ok(best.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Mat;
    use crate::threat::LinfBall;

    fn toy() -> Model {
        Model::linear(
            Mat::from_rows(&[vec![0.0], vec![0.5], vec![-2.0]]).unwrap(),
            vec![1.0, -0.7, 0.0],
        )
        .unwrap()
    }

    fn unit_ball() -> ThreatSet {
        LinfBall::new(vec![0.0], 1.0).unwrap().into()
    }

    fn sign_spec(loss: SurrogateLoss, schedule: &StepSchedule) -> AscentSpec<'_> {
        AscentSpec {
            loss,
            optimizer: OptimizerKind::Sign,
            adam: AdamParams::default(),
            schedule,
            steps: 64,
            early_stop: false,
        }
    }

    #[test]
    fn select_targets_examples() {
        let z = [5.0, 1.0, 4.0, 3.0];
        assert_eq!(select_targets(&z, 0, TargetCount::Top(2)).unwrap(), vec![2, 3]);
        assert_eq!(
            select_targets(&[0.0, 9.0, 1.0], 1, TargetCount::Top(2)).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            select_targets(&[9.0, 0.0, 2.0, 2.0], 0, TargetCount::Top(1)).unwrap(),
            vec![2]
        );
        assert!(select_targets(&z, 0, TargetCount::Top(4)).is_err());
        assert!(select_targets(&z, 0, TargetCount::Top(0)).is_err());
    }

    #[test]
    fn toy_basins() {
        let sched = StepSchedule::Constant(1.0 / 16.0);
        let spec = sign_spec(SurrogateLoss::Margin, &sched);
        let right = ascend_from(&toy(), &unit_ball(), 0, &spec, vec![0.5]);
        assert_eq!(right.final_point, vec![1.0]);
        assert!(!right.success);
        let m = margin_unchecked(&toy().forward(&[1.0]).unwrap(), 0);
        assert!((m + 1.2).abs() < 1e-12);

        let left = ascend_from(&toy(), &unit_ball(), 0, &spec, vec![-0.5]);
        assert_eq!(left.final_point, vec![-1.0]);
        assert!(left.success);
        assert!((left.best_margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_radius_returns_input() {
        let set: ThreatSet = LinfBall::new(vec![0.2], 0.0).unwrap().into();
        let cfg = AttackConfig::sign_constant(
            Strategy::FixedLoss { loss: SurrogateLoss::Margin },
            0.1,
            10,
            3,
            7,
        );
        let r = run_untargeted(&toy(), &[0.2], 0, &set, &cfg).unwrap();
        assert_eq!(r.best_input, vec![0.2]);
        let nominal = margin_unchecked(&toy().forward(&[0.2]).unwrap(), 0);
        assert_eq!(r.best_margin, nominal);
    }

    #[test]
    fn multitargeted_solves_toy() {
        let cfg = AttackConfig::sign_constant(
            Strategy::Multitargeted { targets: TargetCount::All },
            1.0 / 16.0,
            40,
            1,
            3,
        );
        for seed in 0..50 {
            let cfg = AttackConfig { master_seed: seed, ..cfg.clone() };
            let r = run_multitargeted(&toy(), &[0.0], 0, &unit_ball(), &cfg).unwrap();
            assert!(r.success);
            assert_eq!(r.best_input, vec![-1.0]);
            assert_eq!(r.grad_evals, 80);
        }
    }

    #[test]
    fn budget_floors_per_target() {
        // 10 classes, 9 targets, N_r = 20 -> 2 rounds of 9
        let w = Mat::new(10, 1, (0..10).map(|i| i as f64 * 0.01).collect()).unwrap();
        let mut b = vec![0.0; 10];
        b[0] = 5.0;
        let model = Model::linear(w, b).unwrap();
        let set: ThreatSet = LinfBall::new(vec![0.0], 0.1).unwrap().into();
        let mut cfg = AttackConfig::sign_constant(
            Strategy::Multitargeted { targets: TargetCount::All },
            0.01,
            5,
            0,
            1,
        );
        cfg.total_restarts = Some(20);
        let r = run_multitargeted(&model, &[0.0], 0, &set, &cfg).unwrap();
        assert_eq!(r.restarts.len(), 18);
        assert_eq!(r.grad_evals, 5 * 18);

        cfg.total_restarts = Some(8);
        let err = run_multitargeted(&model, &[0.0], 0, &set, &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("|targets| = 9"), "{err}");

        let mut pm = cfg.clone();
        pm.strategy = Strategy::PgdPlusMt;
        pm.total_restarts = None;
        pm.restarts = 1;
        let r = run_pgd_mt(&model, &[0.0], 0, &set, &pm).unwrap();
        assert_eq!(r.restarts.len(), 10);
        let margins = r
            .restarts
            .iter()
            .filter(|x| x.loss == SurrogateLoss::Margin)
            .count();
        assert_eq!(margins, 1);
        assert_eq!(r.grad_evals, 5 * 10);
    }

    #[test]
    fn wrong_strategy_rejected() {
        let cfg = AttackConfig::multitargeted_default(10, 1, 0);
        assert!(run_untargeted(&toy(), &[0.0], 0, &unit_ball(), &cfg).is_err());
        let cfg = AttackConfig::pgd_default(10, 1, 0);
        assert!(run_multitargeted(&toy(), &[0.0], 0, &unit_ball(), &cfg).is_err());
        assert!(run_pgd_mt(&toy(), &[0.0], 0, &unit_ball(), &cfg).is_err());
    }

    #[test]
    fn nan_model_fails_every_restart() {
        let model = Model::new(
            1,
            vec![crate::models::Layer::Linear {
                weights: Mat::from_rows(&[vec![1e308], vec![-1e308]]).unwrap(),
                bias: vec![0.0, 0.0],
            }],
        )
        .unwrap();
        // 1e308 * 10 overflows to inf and inf - inf is NaN in the margin
        let set: ThreatSet = LinfBall::new(vec![10.0], 0.0).unwrap().into();
        let cfg = AttackConfig::pgd_default(4, 2, 0);
        let err = run_untargeted(&model, &[10.0], 0, &set, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn sign_ascent_reaches_vertex_in_ceil_steps() {
        let w = Mat::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.3, -1.2, 2.0]]).unwrap();
        let model = Model::linear(w, vec![1.0, 0.0]).unwrap();
        let eps = 0.5;
        let alpha = 0.07;
        let set: ThreatSet = LinfBall::new(vec![0.1, 0.2, -0.3], eps).unwrap().into();
        let sched = StepSchedule::Constant(alpha);
        let mut spec = sign_spec(SurrogateLoss::LogitDiff { target: 1 }, &sched);
        let n = (eps / alpha).ceil() as usize;
        spec.steps = n;
        let r = ascend_from(&model, &set, 0, &spec, vec![0.1, 0.2, -0.3]);
        assert_eq!(r.final_point, vec![0.1 + eps, 0.2 - eps, -0.3 + eps]);
    }

    #[test]
    fn aggregate_picks_worst_case() {
        let mk = |success, m: f64| AttackResult {
            example_id: "a".into(),
            best_input: vec![m],
            best_margin: m,
            success,
            restarts: vec![],
            grad_evals: 1,
        };
        let a = mk(false, -0.2);
        let b = mk(true, 0.1);
        assert_eq!(aggregate(&[a.clone(), b.clone()]).unwrap(), b);
        assert_eq!(aggregate(std::slice::from_ref(&a)).unwrap(), a);
        let c = mk(false, -0.1);
        assert_eq!(aggregate(&[a.clone(), c.clone()]).unwrap().best_margin, -0.1);
        assert!(aggregate(&[]).is_err());
        let mut other = c;
        other.example_id = "b".into();
        assert!(aggregate(&[a, other]).is_err());
    }

    #[test]
    fn config_json_shape() {
        let cfg = AttackConfig::multitargeted_default(200, 20, 9);
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains(r#""strategy":"multitargeted""#), "{text}");
        assert!(text.contains(r#""targets":"all""#), "{text}");
        let back: AttackConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);

        let parsed: AttackConfig = serde_json::from_str(
            r#"{"optimizer": "sign", "schedule": 0.0625, "strategy": "fixed_loss",
                "loss": "margin", "steps": 64, "restarts": 2, "master_seed": 1}"#,
        )
        .unwrap();
        assert_eq!(parsed.schedule, StepSchedule::Constant(0.0625));
        assert!(parsed.early_stop);
    }

    #[test]
    fn derive_seed_separates_coordinates() {
        let s = [
            derive_seed(1, 0, 0),
            derive_seed(1, 1, 0),
            derive_seed(1, 0, 1),
            derive_seed(2, 0, 0),
        ];
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
    }
}
