//! Update-direction rules and step-size schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::norm_l2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sign,
    Plain,
    L2norm,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sign => "sign",
            OptimizerKind::Plain => "plain",
            OptimizerKind::L2norm => "l2norm",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign" => Ok(OptimizerKind::Sign),
            "plain" => Ok(OptimizerKind::Plain),
            "l2norm" => Ok(OptimizerKind::L2norm),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::config(format!(
                "unknown optimizer '{s}' (expected sign, plain, l2norm or adam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-9,
        }
    }
}

/// An optimizer with its per-restart state. Only Adam carries state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    adam: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, adam: AdamParams, dim: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { dim } else { 0 };
        Self {
            kind,
            adam,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Turns a gradient into an ascent direction (before step-size scaling).
    pub fn update_direction(&mut self, gradient: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient entry at index {i}"
            )));
        }
        Ok(match self.kind {
            OptimizerKind::Sign => gradient.iter().map(|&g| sign(g)).collect(),
            OptimizerKind::Plain => gradient.to_vec(),
            OptimizerKind::L2norm => {
                let n = norm_l2(gradient);
                if n == 0.0 {
                    gradient.to_vec()
                } else {
                    gradient.iter().map(|g| g / n).collect()
                }
            }
            OptimizerKind::Adam => {
                check_len("adam gradient", gradient.len(), self.m.len())?;
                let AdamParams { beta1, beta2, eps } = self.adam;
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                let mut out = Vec::with_capacity(gradient.len());
                for ((m, v), &g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(gradient) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    out.push(m_hat / (v_hat.sqrt() + eps));
                }
                out
            }
        })
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Step size `α(k)` for steps `k = 1..=K`.
///
/// Piecewise schedules multiply the initial step by `multiplier` for every
/// breakpoint whose boundary `⌈fraction · K⌉` lies strictly before `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    Piecewise { initial: f64, decay: Vec<(f64, f64)> },
}

impl StepSchedule {
    /// Start at 0.1 and decay 10× at K/2 and 3K/4.
    pub fn default_piecewise() -> Self {
        StepSchedule::Piecewise {
            initial: 0.1,
            decay: vec![(0.5, 0.1), (0.75, 0.1)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StepSchedule::Constant(a) => {
                if !a.is_finite() || *a < 0.0 {
                    return Err(Error::config(format!("step size must be >= 0, got {a}")));
                }
            }
            StepSchedule::Piecewise { initial, decay } => {
                if !initial.is_finite() || *initial < 0.0 {
                    return Err(Error::config(format!(
                        "initial step size must be >= 0, got {initial}"
                    )));
                }
                let mut prev = 0.0;
                for &(frac, mult) in decay {
                    if !(frac > prev && frac <= 1.0) {
                        return Err(Error::config(
                            "decay fractions must be strictly increasing in (0, 1]",
                        ));
                    }
                    if !(mult > 0.0 && mult.is_finite()) {
                        return Err(Error::config("decay multipliers must be positive"));
                    }
                    prev = frac;
                }
            }
        }
        Ok(())
    }

    pub fn step_size(&self, k: usize, total: usize) -> Result<f64> {
        if k == 0 || k > total {
            return Err(Error::invalid(format!(
                "step index {k} outside 1..={total}"
            )));
        }
        Ok(match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::Piecewise { initial, decay } => {
                decay
                    .iter()
                    .filter(|(frac, _)| k as f64 > (frac * total as f64).ceil())
                    .fold(*initial, |a, (_, mult)| a * mult)
            }
        })
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    /// A bare number is a constant step; anything else is parsed as the JSON
    /// object form `{"initial": .., "decay": [[fraction, multiplier], ..]}`.
    /// `default` selects the 0.1 / K/2 / 3K/4 schedule.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "default" {
            return Ok(Self::default_piecewise());
        }
        let sched: StepSchedule = if let Ok(a) = s.parse::<f64>() {
            StepSchedule::Constant(a)
        } else {
            serde_json::from_str(s)
                .map_err(|e| Error::config(format!("bad schedule '{s}': {e}")))?
        };
        sched.validate()?;
        Ok(sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn opt(kind: OptimizerKind, dim: usize) -> Optimizer {
        Optimizer::new(kind, AdamParams::default(), dim)
    }

    #[test]
    fn sign_direction() {
        let d = opt(OptimizerKind::Sign, 3)
            .update_direction(&[0.3, -0.2, 0.0])
            .unwrap();
        assert_eq!(d, vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn adam_first_step_is_normalized_gradient() {
        let mut a = opt(OptimizerKind::Adam, 2);
        let d = a.update_direction(&[4.0, -1.0]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-6 && (d[1] + 1.0).abs() < 1e-6);
        assert!(d.iter().all(|x| x.abs() < 1.0 + 1e-9));
    }

    #[test]
    fn l2norm_direction() {
        let mut o = opt(OptimizerKind::L2norm, 2);
        assert_eq!(o.update_direction(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(o.update_direction(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn nan_gradient_is_numerical_error() {
        let mut o = opt(OptimizerKind::Plain, 2);
        assert!(matches!(
            o.update_direction(&[1.0, f64::NAN]),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn adam_reset_matches_fresh() {
        let mut a = opt(OptimizerKind::Adam, 3);
        for i in 0..5 {
            a.update_direction(&[i as f64, -1.0, 0.5]).unwrap();
        }
        a.reset();
        assert_eq!(a.steps_taken(), 0);
        let g = [0.7, -2.0, 0.0];
        let fresh = opt(OptimizerKind::Adam, 3).update_direction(&g).unwrap();
        assert_eq!(a.update_direction(&g).unwrap(), fresh);
    }

    #[test]
    fn reset_stateless_is_noop() {
        let mut s = opt(OptimizerKind::Sign, 2);
        s.reset();
        assert_eq!(s.update_direction(&[-3.0, 2.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn schedules() {
        assert_eq!(StepSchedule::Constant(0.01).step_size(37, 100).unwrap(), 0.01);
        let s = StepSchedule::default_piecewise();
        let at = |k| s.step_size(k, 100).unwrap();
        assert_eq!(at(1), 0.1);
        assert_eq!(at(50), 0.1);
        assert!((at(51) - 0.01).abs() < 1e-15);
        assert!((at(60) - 0.01).abs() < 1e-15);
        assert!((at(75) - 0.01).abs() < 1e-15);
        assert!((at(76) - 0.001).abs() < 1e-15);
        assert!((at(80) - 0.001).abs() < 1e-15);
        assert!((at(100) - 0.001).abs() < 1e-15);
        assert!(s.step_size(0, 100).is_err());
        assert!(s.step_size(101, 100).is_err());
    }

    #[test]
    fn odd_totals_round_boundaries_up() {
        // ⌈0.5 · 7⌉ = 4, ⌈0.75 · 7⌉ = 6
        let s = StepSchedule::default_piecewise();
        let v: Vec<f64> = (1..=7).map(|k| s.step_size(k, 7).unwrap()).collect();
        assert_eq!(v[3], 0.1);
        assert!((v[4] - 0.01).abs() < 1e-15);
        assert!((v[5] - 0.01).abs() < 1e-15);
        assert!((v[6] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn schedule_parsing() {
        assert_eq!("0.25".parse::<StepSchedule>().unwrap(), StepSchedule::Constant(0.25));
        let s: StepSchedule = r#"{"initial": 0.1, "decay": [[0.5, 0.1], [0.75, 0.1]]}"#
            .parse()
            .unwrap();
        assert_eq!(s, StepSchedule::default_piecewise());
        assert!(r#"{"initial": 0.1, "decay": [[0.75, 0.1], [0.5, 0.1]]}"#
            .parse::<StepSchedule>()
            .is_err());
    }

    proptest! {
        #[test]
        fn normalized_directions_are_bounded(g in prop::collection::vec(-1e3f64..1e3, 1..10)) {
            let s = opt(OptimizerKind::Sign, g.len()).update_direction(&g).unwrap();
            prop_assert!(s.iter().all(|x| x.abs() <= 1.0));
            let l = opt(OptimizerKind::L2norm, g.len()).update_direction(&g).unwrap();
            prop_assert!(norm_l2(&l) <= 1.0 + 1e-12);
            let a = opt(OptimizerKind::Adam, g.len()).update_direction(&g).unwrap();
            prop_assert!(a.iter().all(|x| x.abs() < 1.0 + 1e-9));
        }
    }
}
