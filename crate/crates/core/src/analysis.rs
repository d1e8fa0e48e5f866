//! Diagnostics: basins of attraction, gradient spectra and logit landscapes.
//!
//! CSV headers are fixed:
//!
//! | output    | header                      |
//! |-----------|-----------------------------|
//! | basin     | `index,coord0,coord1,success` |
//! | spectrum  | `logit,index,value`         |
//! | landscape | `a,b,logit,value,inside`    |
//!
//! `coord1` is empty for one-dimensional inputs; the spectrum's average
//! over logits uses `mean` in the `logit` column.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ascend_from, run_attack, AscentSpec, AttackConfig};
use crate::error::{check_len, Error, Result};
use crate::losses::{margin_unchecked, SurrogateLoss};
use crate::models::Model;
use crate::numerics::{ensure_finite, norm_linf, singular_values, Mat};
use crate::oracle::box_grid;
use crate::threat::{LinfBall, ThreatSet, CONTAINS_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinMap {
    /// Grid initializations inside the set, in row-major grid order.
    pub points: Vec<Vec<f64>>,
    pub success: Vec<bool>,
    /// Margin at the end point, maximised over the ascents of a union map
    /// (`-inf` when every ascent failed numerically).
    pub margins: Vec<f64>,
    pub successes: usize,
    pub total: usize,
    pub fraction: f64,
}

fn check_low_dim(model: &Model, set: &ThreatSet, y: usize) -> Result<()> {
    check_len("threat set", set.dim(), model.input_dim())?;
    if model.input_dim() > 2 {
        return Err(Error::Unsupported(format!(
            "basin maps support input dimension <= 2, got {}",
            model.input_dim()
        )));
    }
    if y >= model.num_classes() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    Ok(())
}

/// Grid points of the set's bounding box that lie inside the set.
fn set_grid(set: &ThreatSet, resolution: usize) -> Vec<Vec<f64>> {
    box_grid(&set.bounding_box(), resolution)
        .into_iter()
        .filter(|p| set.contains(p).unwrap_or(false))
        .collect()
}

/// Runs one deterministic ascent per grid initialization and records
/// whether it ends at a misclassified point.
///
/// Every ascent runs its full `K` steps (`early_stop` is ignored), so an
/// initialization that is already misclassified but is carried away from
/// the adversarial region does not count.
pub fn basin_map(
    model: &Model,
    set: &ThreatSet,
    y: usize,
    spec: &AscentSpec<'_>,
    resolution: usize,
) -> Result<BasinMap> {
    basin_map_union(model, set, y, std::slice::from_ref(spec), resolution)
}

/// Like [`basin_map`], but an initialization counts as a success if any of
/// the given ascents succeeds from it. With one logit-difference spec per
/// target this is the MultiTargeted basin.
pub fn basin_map_union(
    model: &Model,
    set: &ThreatSet,
    y: usize,
    specs: &[AscentSpec<'_>],
    resolution: usize,
) -> Result<BasinMap> {
    check_low_dim(model, set, y)?;
    if resolution < 2 {
        return Err(Error::invalid("basin grid resolution must be >= 2"));
    }
    if specs.is_empty() {
        return Err(Error::invalid("basin map needs at least one ascent"));
    }
    for spec in specs {
        spec.schedule.validate()?;
        if let SurrogateLoss::LogitDiff { target } = spec.loss {
            if target == y || target >= model.num_classes() {
                return Err(Error::invalid(format!("invalid target {target} for label {y}")));
            }
        }
    }
    let full: Vec<AscentSpec<'_>> = specs
        .iter()
        .map(|s| AscentSpec { early_stop: false, ..*s })
        .collect();
    let points = set_grid(set, resolution);
    let margins: Vec<f64> = points
        .par_iter()
        .map(|p| {
            full.iter()
                .map(|spec| {
                    let rec = ascend_from(model, set, y, spec, p.clone());
                    if rec.failure.is_some() {
                        f64::NEG_INFINITY
                    } else {
                        margin_unchecked(&model.forward_unchecked(&rec.final_point), y)
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let success: Vec<bool> = margins.iter().map(|&m| m > 0.0).collect();
    let successes = success.iter().filter(|&&s| s).count();
    let total = points.len();
    Ok(BasinMap {
        points,
        success,
        margins,
        successes,
        total,
        fraction: successes as f64 / total as f64,
    })
}

pub fn write_basin_csv(map: &BasinMap, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "index,coord0,coord1,success")?;
    for (i, (p, s)) in map.points.iter().zip(&map.success).enumerate() {
        let c1 = p.get(1).map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{i},{},{c1},{}", p[0], u8::from(*s))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Normalized singular values per logit, descending.
    pub per_logit: Vec<Vec<f64>>,
    /// Per-index average of `per_logit`.
    pub mean: Vec<f64>,
    pub n_samples: usize,
}

/// Singular values of the stacked input gradients of each logit over
/// `n_samples` uniform draws from the set, normalized by the largest.
///
/// A single sample set is shared across logits.
pub fn linearity_spectrum(
    model: &Model,
    set: &ThreatSet,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<SpectrumReport> {
    check_len("threat set", set.dim(), model.input_dim())?;
    if n_samples < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n_samples}")));
    }
    let samples: Vec<Vec<f64>> = (0..n_samples).map(|_| set.sample_uniform(rng)).collect();
    let c = model.num_classes();
    let d = model.input_dim();
    let per_logit = (0..c)
        .into_par_iter()
        .map(|logit| {
            let mut e = vec![0.0; c];
            e[logit] = 1.0;
            let mut data = Vec::with_capacity(n_samples * d);
            for s in &samples {
                data.extend(model.input_gradient(s, &e)?);
            }
            ensure_finite("gradient", &data)
                .map_err(|_| Error::Numerical(format!("non-finite gradient of logit {logit}")))?;
            let sv = singular_values(&Mat::new(n_samples, d, data)?)?;
            let top = sv[0];
            Ok(if top > 0.0 {
                let mut out: Vec<f64> = sv.iter().map(|s| s / top).collect();
                out[0] = 1.0;
                out
            } else {
                vec![0.0; sv.len()]
            })
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let k = per_logit[0].len();
    let mean = (0..k)
        .map(|i| per_logit.iter().map(|v| v[i]).sum::<f64>() / c as f64)
        .collect();
    Ok(SpectrumReport {
        per_logit,
        mean,
        n_samples,
    })
}

pub fn write_spectrum_csv(report: &SpectrumReport, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "logit,index,value")?;
    for (c, vals) in report.per_logit.iter().enumerate() {
        for (i, v) in vals.iter().enumerate() {
            writeln!(w, "{c},{i},{v}")?;
        }
    }
    for (i, v) in report.mean.iter().enumerate() {
        writeln!(w, "mean,{i},{v}")?;
    }
    Ok(())
}

pub const DEFAULT_LANDSCAPE_RESOLUTION: usize = 51;
pub const LANDSCAPE_EXTENT: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub epsilon: f64,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
    /// Attack direction, scaled to ℓ∞ norm `ε` (zero if the attack did not move).
    pub u: Vec<f64>,
    /// `ε` times a Rademacher vector.
    pub v: Vec<f64>,
    /// `values[c][i * resolution + j]` is logit `c` at `(a_values[i], b_values[j])`.
    pub values: Vec<Vec<f64>>,
    /// Whether `x + (a u + b v) / ε` lies in the ε-ball.
    pub inside: Vec<bool>,
    pub attack_margin: Option<f64>,
    pub attack_error: Option<String>,
}

impl Landscape {
    pub fn resolution(&self) -> usize {
        self.a_values.len()
    }

    pub fn point(&self, x: &[f64], a: f64, b: f64) -> Vec<f64> {
        landscape_point(x, &self.u, &self.v, self.epsilon, a, b)
    }
}

fn landscape_point(x: &[f64], u: &[f64], v: &[f64], eps: f64, a: f64, b: f64) -> Vec<f64> {
    x.iter()
        .zip(u.iter().zip(v))
        .map(|(&xi, (&ui, &vi))| xi + (a * ui + b * vi) / eps)
        .collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Logits on the plane spanned by the attack direction and a random
/// Rademacher direction, over `[−1.2ε, 1.2ε]²`.
///
/// The attack runs with `config` on the pure ℓ∞ ball around `x`; `seed`
/// draws the Rademacher direction.
pub fn logit_landscape(
    model: &Model,
    x: &[f64],
    y: usize,
    epsilon: f64,
    resolution: usize,
    config: &AttackConfig,
    seed: u64,
) -> Result<Landscape> {
    check_len("input", x.len(), model.input_dim())?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("landscape epsilon must be > 0, got {epsilon}")));
    }
    if resolution < 2 {
        return Err(Error::invalid("landscape resolution must be >= 2"));
    }
    let set: ThreatSet = LinfBall::new(x.to_vec(), epsilon)?.into();
    let (best, attack_margin, attack_error) = match run_attack(model, x, y, &set, config) {
        Ok(r) => (r.best_input, Some(r.best_margin), None),
        Err(e @ Error::Numerical(_)) => (x.to_vec(), None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    let diff: Vec<f64> = best.iter().zip(x).map(|(b, xi)| b - xi).collect();
    let n = norm_linf(&diff);
    let u: Vec<f64> = if n > 0.0 {
        diff.iter().map(|d| d * epsilon / n).collect()
    } else {
        vec![0.0; x.len()]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..x.len())
        .map(|_| if rng.gen::<bool>() { epsilon } else { -epsilon })
        .collect();

    let extent = LANDSCAPE_EXTENT * epsilon;
    let a_values = linspace(-extent, extent, resolution);
    let b_values = a_values.clone();
    let cells: Vec<(f64, f64)> = a_values
        .iter()
        .flat_map(|&a| b_values.iter().map(move |&b| (a, b)))
        .collect();
    let evaluated: Vec<(Vec<f64>, bool)> = cells
        .par_iter()
        .map(|&(a, b)| {
            let p = landscape_point(x, &u, &v, epsilon, a, b);
            let offset = p
                .iter()
                .zip(x)
                .map(|(pi, xi)| (pi - xi).abs())
                .fold(0.0, f64::max);
            (model.forward_unchecked(&p), offset <= epsilon + CONTAINS_TOL)
        })
        .collect();
    let c = model.num_classes();
    let mut values = vec![Vec::with_capacity(cells.len()); c];
    let mut inside = Vec::with_capacity(cells.len());
    for (z, ins) in evaluated {
        for (vals, zc) in values.iter_mut().zip(z) {
            vals.push(zc);
        }
        inside.push(ins);
    }
    Ok(Landscape {
        epsilon,
        a_values,
        b_values,
        u,
        v,
        values,
        inside,
        attack_margin,
        attack_error,
    })
}

pub fn write_landscape_csv(l: &Landscape, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "a,b,logit,value,inside")?;
    let r = l.resolution();
    for (i, a) in l.a_values.iter().enumerate() {
        for (j, b) in l.b_values.iter().enumerate() {
            let cell = i * r + j;
            for (c, vals) in l.values.iter().enumerate() {
                writeln!(w, "{a},{b},{c},{},{}", vals[cell], u8::from(l.inside[cell]))?;
            }
        }
    }
    Ok(())
}
