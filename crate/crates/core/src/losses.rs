//! Surrogate losses on logits and the 0–1 loss.
//!
//! Every argmax in this crate resolves ties to the lowest class index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SurrogateLoss {
    /// `−z_y + log Σ exp(z_i)`
    CrossEntropy,
    /// `−z_y + max_{i≠y} z_i`
    Margin,
    /// `−z_y + z_t`
    LogitDiff { target: usize },
}

impl fmt::Display for SurrogateLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurrogateLoss::CrossEntropy => write!(f, "xent"),
            SurrogateLoss::Margin => write!(f, "margin"),
            SurrogateLoss::LogitDiff { target } => write!(f, "logit_diff:{target}"),
        }
    }
}

impl From<SurrogateLoss> for String {
    fn from(l: SurrogateLoss) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for SurrogateLoss {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SurrogateLoss {
    type Err = Error;

    /// Accepts `xent`, `margin` and `logit_diff:<t>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xent" => Ok(SurrogateLoss::CrossEntropy),
            "margin" => Ok(SurrogateLoss::Margin),
            _ => {
                let t = s
                    .strip_prefix("logit_diff:")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| {
                        Error::config(format!(
                            "unknown loss '{s}' (expected xent, margin or logit_diff:<class>)"
                        ))
                    })?;
                Ok(SurrogateLoss::LogitDiff { target: t })
            }
        }
    }
}

fn check_label(z: &[f64], y: usize) -> Result<()> {
    if z.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 logits, got {}", z.len())));
    }
    if y >= z.len() {
        return Err(Error::invalid(format!(
            "label {y} out of range for {} classes",
            z.len()
        )));
    }
    Ok(())
}

impl SurrogateLoss {
    fn check(&self, z: &[f64], y: usize) -> Result<()> {
        check_label(z, y)?;
        if let SurrogateLoss::LogitDiff { target } = *self {
            if target >= z.len() {
                return Err(Error::invalid(format!(
                    "target {target} out of range for {} classes",
                    z.len()
                )));
            }
            if target == y {
                return Err(Error::invalid(format!("target class equals label {y}")));
            }
        }
        Ok(())
    }

    pub fn value(&self, z: &[f64], y: usize) -> Result<f64> {
        self.check(z, y)?;
        Ok(self.value_unchecked(z, y))
    }

    pub fn logit_gradient(&self, z: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check(z, y)?;
        Ok(self.logit_gradient_unchecked(z, y))
    }

    pub(crate) fn value_unchecked(&self, z: &[f64], y: usize) -> f64 {
        match *self {
            SurrogateLoss::CrossEntropy => log_sum_exp(z) - z[y],
            SurrogateLoss::Margin => margin_unchecked(z, y),
            SurrogateLoss::LogitDiff { target } => z[target] - z[y],
        }
    }

    pub(crate) fn logit_gradient_unchecked(&self, z: &[f64], y: usize) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        match *self {
            SurrogateLoss::CrossEntropy => {
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (gi, &zi) in g.iter_mut().zip(z) {
                    *gi = (zi - m).exp();
                    s += *gi;
                }
                for gi in &mut g {
                    *gi /= s;
                }
            }
            SurrogateLoss::Margin => g[runner_up(z, y)] = 1.0,
            SurrogateLoss::LogitDiff { target } => g[target] = 1.0,
        }
        g[y] -= 1.0;
        g
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&zi| (zi - m).exp()).sum::<f64>().ln()
}

/// Index of the largest logit other than `y`.
pub(crate) fn runner_up(z: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (i, &zi) in z.iter().enumerate() {
        if i != y && (best == usize::MAX || zi > z[best]) {
            best = i;
        }
    }
    best
}

pub(crate) fn margin_unchecked(z: &[f64], y: usize) -> f64 {
    z[runner_up(z, y)] - z[y]
}

/// `max_{i≠y} z_i − z_y`; positive iff some other class strictly beats `y`.
pub fn margin(z: &[f64], y: usize) -> Result<f64> {
    check_label(z, y)?;
    Ok(margin_unchecked(z, y))
}

/// Lowest index among the maximal logits.
pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &zi) in z.iter().enumerate().skip(1) {
        if zi > z[best] {
            best = i;
        }
    }
    best
}

pub fn zero_one_loss(z: &[f64], y: usize) -> Result<u8> {
    check_label(z, y)?;
    Ok(u8::from(argmax(z) != y))
}
