//! Ground truth for attack values.
//!
//! For an affine classifier over a pure ℓ∞ ball each logit difference is
//! maximised at a vertex, in closed form:
//!
//! ```text
//! max_{‖δ‖∞≤ε} (W_t − W_y)·(x + δ) + (b_t − b_y)
//!     = (W_t − W_y)·x + (b_t − b_y) + ε ‖W_t − W_y‖₁,   δ = ε · sign(W_t − W_y)
//! ```
//!
//! and the best achievable margin is the largest of these. Low-dimensional
//! nonlinear problems and box unions are handled by exhaustive grid search.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::losses::margin_unchecked;
use crate::models::Model;
use crate::numerics::{dot, norm_l1, Mat};
use crate::threat::{Aabb, ThreatSet};

pub const DEFAULT_GRID_RESOLUTION: usize = 513;

/// Maximum of `z_t − z_y` over the ball and a point attaining it.
pub fn linear_diff_max(
    weights: &Mat,
    bias: &[f64],
    x: &[f64],
    y: usize,
    t: usize,
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    check_len("bias", bias.len(), weights.rows())?;
    check_len("input", x.len(), weights.cols())?;
    let c = weights.rows();
    if y >= c || t >= c {
        return Err(Error::invalid(format!("class index out of range for {c} classes")));
    }
    if t == y {
        return Err(Error::invalid("target equals label"));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let diff: Vec<f64> = weights
        .row(t)
        .iter()
        .zip(weights.row(y))
        .map(|(a, b)| a - b)
        .collect();
    let value = dot(&diff, x) + (bias[t] - bias[y]) + epsilon * norm_l1(&diff);
    let witness = x
        .iter()
        .zip(&diff)
        .map(|(&xi, &d)| {
            if d > 0.0 {
                xi + epsilon
            } else if d < 0.0 {
                xi - epsilon
            } else {
                xi
            }
        })
        .collect();
    Ok((value, witness))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearOracleReport {
    pub attackable: bool,
    pub confusing_classes: Vec<usize>,
    pub optimal_margin: f64,
    pub witness: Vec<f64>,
    pub per_target_max: BTreeMap<usize, f64>,
}

/// Exact attack analysis of `W ξ + b` over `‖ξ − x‖∞ ≤ ε`.
pub fn analyze_affine(
    weights: &Mat,
    bias: &[f64],
    x: &[f64],
    y: usize,
    epsilon: f64,
) -> Result<LinearOracleReport> {
    let c = weights.rows();
    if y >= c {
        return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
    }
    let mut per_target_max = BTreeMap::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for t in (0..c).filter(|&t| t != y) {
        let (v, w) = linear_diff_max(weights, bias, x, y, t, epsilon)?;
        per_target_max.insert(t, v);
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, w));
        }
    }
    let (optimal_margin, witness) = best.ok_or_else(|| Error::invalid("need at least 2 classes"))?;
    let confusing_classes: Vec<usize> = per_target_max
        .iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, _)| t)
        .collect();
    Ok(LinearOracleReport {
        attackable: !confusing_classes.is_empty(),
        confusing_classes,
        optimal_margin,
        witness,
        per_target_max,
    })
}

/// [`analyze_affine`] for a model that is structurally globally linear.
pub fn analyze_linear(model: &Model, x: &[f64], y: usize, epsilon: f64) -> Result<LinearOracleReport> {
    let (w, b) = model.affine_parts().ok_or_else(|| {
        Error::invalid("analyze_linear requires a globally-linear model (one linear layer, no activations)")
    })?;
    analyze_affine(w, b, x, y, epsilon)
}

/// ℓ∞-Lipschitz constant of the margin of an affine model:
/// `max_t ‖W_t − W_y‖₁`.
pub fn affine_margin_lipschitz(weights: &Mat, y: usize) -> f64 {
    (0..weights.rows())
        .filter(|&t| t != y)
        .map(|t| {
            weights
                .row(t)
                .iter()
                .zip(weights.row(y))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub margin: f64,
    pub witness: Vec<f64>,
    /// Largest per-axis grid spacing over the gridded boxes. Every point of
    /// the set is within `spacing / 2` (ℓ∞) of a grid point, so for an
    /// ℓ∞-Lipschitz margin with constant `L` the true optimum exceeds
    /// `margin` by at most `L · spacing / 2`.
    pub spacing: f64,
    pub evaluations: usize,
}

/// Grid points of a box with `resolution` points per non-degenerate axis.
pub(crate) fn box_grid(b: &Aabb, resolution: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = b
        .lo
        .iter()
        .zip(&b.hi)
        .map(|(&lo, &hi)| {
            if hi > lo {
                (0..resolution)
                    .map(|i| {
                        if i + 1 == resolution {
                            hi
                        } else {
                            lo + (hi - lo) * i as f64 / (resolution - 1) as f64
                        }
                    })
                    .collect()
            } else {
                vec![lo]
            }
        })
        .collect();
    let mut points = vec![vec![]];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    points
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            _ => {}
        }
    }
    false
}

/// Exhaustive maximum of the margin over a grid of the set (input
/// dimension at most 2). Ties go to the lexicographically smallest point.
pub fn grid_oracle(model: &Model, set: &ThreatSet, y: usize, resolution: usize) -> Result<GridOptimum> {
    let d = model.input_dim();
    check_len("threat set", set.dim(), d)?;
    if d > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle supports input dimension <= 2, got {d}"
        )));
    }
    if resolution < 16 {
        return Err(Error::invalid(format!("grid resolution must be >= 16, got {resolution}")));
    }
    if y >= model.num_classes() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let boxes: Vec<Aabb> = match set {
        ThreatSet::Linf(b) => vec![b.bounds().clone()],
        ThreatSet::Boxes(u) => u.boxes().to_vec(),
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut spacing = 0.0f64;
    let mut evaluations = 0;
    for b in &boxes {
        for (lo, hi) in b.lo.iter().zip(&b.hi) {
            spacing = spacing.max((hi - lo) / (resolution - 1) as f64);
        }
        for p in box_grid(b, resolution) {
            let m = margin_unchecked(&model.forward_unchecked(&p), y);
            evaluations += 1;
            let better = match &best {
                None => true,
                Some((bm, bp)) => m > *bm || (m == *bm && lex_less(&p, bp)),
            };
            if better {
                best = Some((m, p));
            }
        }
    }
    let (margin, witness) = best.expect("at least one grid point");
    Ok(GridOptimum {
        margin,
        witness,
        spacing,
        evaluations,
    })
}
