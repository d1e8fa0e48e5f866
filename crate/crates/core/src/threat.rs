//! Adversarial input sets: an ℓ∞ ball (optionally clipped to a coordinate
//! box) and unions of axis-aligned boxes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::ensure_finite;

/// Boundary tolerance for membership tests.
pub const CONTAINS_TOL: f64 = 1e-12;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len("box hi", hi.len(), lo.len())?;
        if lo.is_empty() {
            return Err(Error::invalid("box must have at least one dimension"));
        }
        ensure_finite("box lo", &lo)?;
        ensure_finite("box hi", &hi)?;
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(Error::invalid(format!(
                "box lo > hi in coordinate {i} ({} > {})",
                lo[i], hi[i]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn clamp(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&x, (&l, &h))| x.max(l).min(h))
            .collect()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&x, (&l, &h))| x >= l - CONTAINS_TOL && x <= h + CONTAINS_TOL)
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| if h > l { l + (h - l) * rng.gen::<f64>() } else { l })
            .collect()
    }
}

/// `{ξ : ‖ξ − center‖∞ ≤ ε}`, optionally intersected with a box.
#[derive(Debug, Clone, PartialEq)]
pub struct LinfBall {
    center: Vec<f64>,
    epsilon: f64,
    clip: Option<Aabb>,
    // per-coordinate bounds of the (clipped) ball
    bounds: Aabb,
}

impl LinfBall {
    pub fn new(center: Vec<f64>, epsilon: f64) -> Result<Self> {
        Self::build(center, epsilon, None)
    }

    pub fn with_box(center: Vec<f64>, epsilon: f64, clip: Aabb) -> Result<Self> {
        Self::build(center, epsilon, Some(clip))
    }

    fn build(center: Vec<f64>, epsilon: f64, clip: Option<Aabb>) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::invalid("ball center must be non-empty"));
        }
        ensure_finite("ball center", &center)?;
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        // ball first, then box
        let mut lo: Vec<f64> = center.iter().map(|c| c - epsilon).collect();
        let mut hi: Vec<f64> = center.iter().map(|c| c + epsilon).collect();
        if let Some(b) = &clip {
            check_len("clip box", b.dim(), center.len())?;
            for i in 0..center.len() {
                lo[i] = lo[i].max(b.lo[i]);
                hi[i] = hi[i].min(b.hi[i]);
                if lo[i] > hi[i] {
                    return Err(Error::invalid(format!(
                        "clip box does not intersect the ball in coordinate {i}"
                    )));
                }
            }
        }
        Ok(Self {
            center,
            epsilon,
            clip,
            bounds: Aabb { lo, hi },
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn clip(&self) -> Option<&Aabb> {
        self.clip.as_ref()
    }

    /// The hyperrectangle this set actually occupies.
    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }
}

/// Union of axis-aligned boxes of a common dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxUnion {
    boxes: Vec<Aabb>,
}

impl BoxUnion {
    pub fn new(boxes: Vec<Aabb>) -> Result<Self> {
        let first = boxes
            .first()
            .ok_or_else(|| Error::invalid("box union needs at least one box"))?;
        let d = first.dim();
        for (i, b) in boxes.iter().enumerate() {
            if b.dim() != d {
                return Err(Error::invalid(format!(
                    "box {i} has dimension {}, expected {d}",
                    b.dim()
                )));
            }
        }
        Ok(Self { boxes })
    }

    pub fn boxes(&self) -> &[Aabb] {
        &self.boxes
    }

    pub fn bounding_box(&self) -> Aabb {
        let d = self.boxes[0].dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for b in &self.boxes {
            for i in 0..d {
                lo[i] = lo[i].min(b.lo[i]);
                hi[i] = hi[i].max(b.hi[i]);
            }
        }
        Aabb { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThreatSet {
    Linf(LinfBall),
    Boxes(BoxUnion),
}

impl From<LinfBall> for ThreatSet {
    fn from(b: LinfBall) -> Self {
        ThreatSet::Linf(b)
    }
}

impl From<BoxUnion> for ThreatSet {
    fn from(b: BoxUnion) -> Self {
        ThreatSet::Boxes(b)
    }
}

impl ThreatSet {
    pub fn dim(&self) -> usize {
        match self {
            ThreatSet::Linf(b) => b.center.len(),
            ThreatSet::Boxes(u) => u.boxes[0].dim(),
        }
    }

    /// Smallest box enclosing the set.
    pub fn bounding_box(&self) -> Aabb {
        match self {
            ThreatSet::Linf(b) => b.bounds.clone(),
            ThreatSet::Boxes(u) => u.bounding_box(),
        }
    }

    /// Euclidean projection onto the set. For box unions the nearest box
    /// wins, ties going to the lowest box index.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_len("point", point.len(), self.dim())?;
        Ok(self.project_unchecked(point))
    }

    pub(crate) fn project_unchecked(&self, point: &[f64]) -> Vec<f64> {
        match self {
            ThreatSet::Linf(b) => b.bounds.clamp(point),
            ThreatSet::Boxes(u) => {
                let mut best: Option<(f64, Vec<f64>)> = None;
                for b in &u.boxes {
                    let q = b.clamp(point);
                    let d2: f64 = q.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.as_ref().is_none_or(|(bd, _)| d2 < *bd) {
                        best = Some((d2, q));
                    }
                }
                best.expect("non-empty union").1
            }
        }
    }

    pub fn contains(&self, point: &[f64]) -> Result<bool> {
        check_len("point", point.len(), self.dim())?;
        Ok(match self {
            ThreatSet::Linf(b) => b.bounds.contains(point),
            ThreatSet::Boxes(u) => u.boxes.iter().any(|b| b.contains(point)),
        })
    }

    /// Uniform sample from the set.
    ///
    /// Box unions pick a box with probability proportional to its volume and
    /// then accept the point with probability `1 / (boxes covering it)`, which
    /// makes overlapping regions uniform as well. Zero-volume boxes are only
    /// drawn (uniformly by index) when every box has zero volume.
    pub fn sample_uniform(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self {
            ThreatSet::Linf(b) => b.bounds.sample(rng),
            ThreatSet::Boxes(u) => {
                let vols: Vec<f64> = u.boxes.iter().map(Aabb::volume).collect();
                let total: f64 = vols.iter().sum();
                if total <= 0.0 {
                    let i = rng.gen_range(0..u.boxes.len());
                    return u.boxes[i].sample(rng);
                }
                loop {
                    let mut pick = rng.gen::<f64>() * total;
                    let mut idx = vols.len() - 1;
                    for (i, v) in vols.iter().enumerate() {
                        if pick < *v {
                            idx = i;
                            break;
                        }
                        pick -= v;
                    }
                    if vols[idx] == 0.0 {
                        continue;
                    }
                    let p = u.boxes[idx].sample(rng);
                    let cover = u
                        .boxes
                        .iter()
                        .zip(&vols)
                        .filter(|(b, v)| **v > 0.0 && b.contains(&p))
                        .count()
                        .max(1);
                    if cover == 1 || rng.gen::<f64>() * (cover as f64) < 1.0 {
                        return p;
                    }
                }
            }
        }
    }
}
