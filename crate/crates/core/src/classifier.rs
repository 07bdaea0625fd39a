//! Online intention classification and the likely-intention set.
//!
//! Each update scores the surviving intentions by the mean squared distance
//! of the observation window to their prototype paths, normalises
//! `exp(-D_i / 2λ²)` over the survivors and prunes everything below `ε_P`.
//! Pruned intentions never return; their pre-pruning probability is frozen
//! into `pruned_mass`, which bounds the safety certificate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::driver::{Intention, ModelSet, TimedPosition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Pruning threshold ε_P.
    pub epsilon: f64,
    /// Distance scale λ in meters.
    pub lambda: f64,
    /// Observation window length W in samples.
    pub window: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.15,
            lambda: 1.0,
            window: 25,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        check_epsilon(self.epsilon)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must hold at least one sample".into()));
        }
        Ok(())
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Usage(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// Current classification state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionBelief {
    /// Indexed by [`Intention::index`]; zero for pruned intentions.
    probabilities: [f64; 3],
    likely: [bool; 3],
    /// Probability each pruned intention had when it was pruned.
    frozen: [f64; 3],
    epsilon: f64,
    pruned_mass: f64,
    updates: usize,
}

impl IntentionBelief {
    pub fn probability(&self, i: Intention) -> f64 {
        self.probabilities[i.index()]
    }

    pub fn probabilities(&self) -> [f64; 3] {
        self.probabilities
    }

    pub fn is_likely(&self, i: Intention) -> bool {
        self.likely[i.index()]
    }

    pub fn likely_set(&self) -> Vec<Intention> {
        Intention::ALL
            .into_iter()
            .filter(|i| self.is_likely(*i))
            .collect()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn pruned_mass(&self) -> f64 {
        self.pruned_mass
    }

    /// Probability frozen at pruning time, `None` while still likely.
    pub fn pruned_probability(&self, i: Intention) -> Option<f64> {
        (!self.is_likely(i)).then(|| self.frozen[i.index()])
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Survivors joined by `|`, e.g. `turn_right|straight_on`.
    pub fn likely_label(&self) -> String {
        self.likely_set()
            .iter()
            .map(|i| i.as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Sliding window of the most recent target observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    capacity: usize,
    samples: VecDeque<TimedPosition>,
}

impl ObservationWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Usage("observation window needs capacity ≥ 1".into()));
        }
        Ok(Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        })
    }

    /// Appends an observation, dropping the oldest beyond capacity.
    pub fn push(&mut self, sample: TimedPosition) -> Result<()> {
        if let Some(last) = self.samples.back() {
            if !(sample.t > last.t) {
                return Err(Error::Data(format!(
                    "observation at t = {} is not after t = {}",
                    sample.t, last.t
                )));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &TimedPosition> {
        self.samples.iter()
    }
}

/// Uniform belief over all three intentions.
pub fn init_belief(epsilon: f64) -> Result<IntentionBelief> {
    check_epsilon(epsilon)?;
    Ok(IntentionBelief {
        probabilities: [1.0 / 3.0; 3],
        likely: [true; 3],
        frozen: [0.0; 3],
        epsilon,
        pruned_mass: 0.0,
        updates: 0,
    })
}

/// Squared distance from `p` to the closest point of the polyline.
pub fn squared_distance_to_path(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    if path.len() == 1 {
        return (p[0] - path[0][0]).powi(2) + (p[1] - path[0][1]).powi(2);
    }
    let mut best = f64::INFINITY;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 > 0.0 {
            (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
        best = best.min(q[0] * q[0] + q[1] * q[1]);
    }
    best
}

/// Mean squared prototype distance of the window, per intention.
pub fn distance_scores(window: &ObservationWindow, models: &ModelSet) -> [f64; 3] {
    let mut d = [0.0; 3];
    for i in Intention::ALL {
        let path = &models.get(i).prototype_path;
        let sum: f64 = window
            .iter()
            .map(|s| squared_distance_to_path(s.position(), path))
            .sum();
        d[i.index()] = sum / window.len().max(1) as f64;
    }
    d
}

/// One classification step; the previous belief is left untouched.
pub fn update_belief(
    belief: &IntentionBelief,
    window: &ObservationWindow,
    models: &ModelSet,
    lambda: f64,
) -> IntentionBelief {
    if window.is_empty() {
        return belief.clone();
    }
    update_from_scores(belief, distance_scores(window, models), lambda)
}

/// Update given precomputed distance scores.
pub fn update_from_scores(
    belief: &IntentionBelief,
    scores: [f64; 3],
    lambda: f64,
) -> IntentionBelief {
    let mut next = belief.clone();
    next.updates += 1;

    // Softmax over survivors, shifted by the smallest score for stability.
    let min = Intention::ALL
        .iter()
        .filter(|i| belief.is_likely(**i))
        .map(|i| scores[i.index()])
        .fold(f64::INFINITY, f64::min);
    let mut w = [0.0; 3];
    for i in Intention::ALL {
        if belief.is_likely(i) {
            w[i.index()] = (-(scores[i.index()] - min) / (2.0 * lambda * lambda)).exp();
        }
    }
    let total: f64 = w.iter().sum();
    let p: [f64; 3] = std::array::from_fn(|k| w[k] / total);

    let mut survivors = [false; 3];
    for k in 0..3 {
        survivors[k] = belief.likely[k] && p[k] >= belief.epsilon;
    }
    if !survivors.iter().any(|s| *s) {
        // Keep the most probable; ties go to the lowest index.
        let best = (0..3)
            .filter(|&k| belief.likely[k])
            .fold(None, |acc: Option<usize>, k| match acc {
                Some(b) if p[b] >= p[k] => Some(b),
                _ => Some(k),
            })
            .expect("belief always has a survivor");
        survivors[best] = true;
    }
    for k in 0..3 {
        if belief.likely[k] && !survivors[k] {
            next.frozen[k] = p[k];
            next.pruned_mass += p[k];
        }
    }
    let kept: f64 = (0..3).filter(|&k| survivors[k]).map(|k| p[k]).sum();
    for k in 0..3 {
        next.probabilities[k] = if survivors[k] { p[k] / kept } else { 0.0 };
    }
    next.likely = survivors;
    next
}

/// Lower bound `1 - ω - pruned_mass` on the per-step constraint-satisfaction probability, clamped to `[0, 1]`.
pub fn safety_certificate(belief: &IntentionBelief, omega: f64) -> f64 {
    (1.0 - omega - belief.pruned_mass).clamp(0.0, 1.0)
}
