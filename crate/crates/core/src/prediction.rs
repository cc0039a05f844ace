//! Human trajectory forecasting.
//!
//! The default predictor propagates the last observed position with a
//! constant speed and heading estimated from the track, and grows the
//! covariance additively at every step of the horizon.

use std::collections::VecDeque;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::registry::Registry;
use crate::Vec2;

/// Displacements shorter than this do not define a heading.
const HEADING_EPSILON: f64 = 1e-9;

/// Recent observations of one human.
#[derive(Debug, Clone, PartialEq)]
pub struct HumanTrack {
    pub id: usize,
    capacity: usize,
    history: VecDeque<(f64, Vec2)>,
    last_heading: f64,
}

impl HumanTrack {
    pub fn new(id: usize, capacity: usize) -> Self {
        let capacity = capacity.max(2);
        Self {
            id,
            capacity,
            history: VecDeque::with_capacity(capacity),
            last_heading: 0.0,
        }
    }

    /// Appends an observation, dropping the oldest beyond capacity.
    pub fn push(&mut self, t: f64, position: Vec2) {
        if let Some(&(_, prev)) = self.history.back() {
            let d = position - prev;
            if d.norm() >= HEADING_EPSILON {
                self.last_heading = d.y.atan2(d.x);
            }
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back((t, position));
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn last_position(&self) -> Option<Vec2> {
        self.history.back().map(|&(_, p)| p)
    }

    pub fn history(&self) -> impl Iterator<Item = &(f64, Vec2)> {
        self.history.iter()
    }

    /// Oldest and newest positions of the last `window` samples.
    fn window_ends(&self, window: usize) -> Option<(Vec2, Vec2, usize)> {
        let w = window.min(self.history.len());
        if w < 2 {
            return None;
        }
        let first = self.history[self.history.len() - w].1;
        let last = self.history.back()?.1;
        Some((first, last, w))
    }
}

/// Speed from the chord over the last `past_steps` samples (fewer if the
/// track is shorter; zero with under two samples).
pub fn estimate_velocity(track: &HumanTrack, past_steps: usize, dt: f64) -> f64 {
    match track.window_ends(past_steps) {
        Some((first, last, w)) => (last - first).norm() / ((w - 1) as f64 * dt),
        None => 0.0,
    }
}

/// Direction of the chord over the last `past_steps` samples; falls back to
/// the last valid heading (initially 0) when the chord is degenerate.
pub fn estimate_heading(track: &HumanTrack, past_steps: usize) -> f64 {
    match track.window_ends(past_steps) {
        Some((first, last, _)) if (last - first).norm() >= HEADING_EPSILON => {
            let d = last - first;
            d.y.atan2(d.x)
        }
        _ => track.last_heading,
    }
}

/// Gaussian forecast for steps `k = 0..T-1`, with `k = 0` the current time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPrediction {
    pub means: Vec<Vec2>,
    pub covariances: Vec<Matrix2<f64>>,
}

impl HumanPrediction {
    pub fn horizon(&self) -> usize {
        self.means.len()
    }
}

/// Parameters of the constant-velocity predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionParams {
    /// Number of past samples used for speed and heading.
    pub past_steps: usize,
    pub initial_covariance: Matrix2<f64>,
    pub process_noise: Matrix2<f64>,
}

impl Default for PredictionParams {
    fn default() -> Self {
        Self {
            past_steps: 8,
            initial_covariance: Matrix2::identity() * 0.01,
            process_noise: Matrix2::identity() * 0.01,
        }
    }
}

/// Constant-velocity roll-out with additive covariance growth.
pub fn predict(
    track: &HumanTrack,
    horizon: usize,
    dt: f64,
    past_steps: usize,
    initial_covariance: &Matrix2<f64>,
    process_noise: &Matrix2<f64>,
) -> HumanPrediction {
    let horizon = horizon.max(1);
    let speed = estimate_velocity(track, past_steps, dt);
    let heading = estimate_heading(track, past_steps);
    let step = Vec2::new(heading.cos(), heading.sin()) * speed * dt;
    let mut mean = track.last_position().unwrap_or_else(Vec2::zeros);
    let mut cov = *initial_covariance;
    let mut means = Vec::with_capacity(horizon);
    let mut covariances = Vec::with_capacity(horizon);
    for k in 0..horizon {
        if k > 0 {
            mean += step;
            cov += process_noise;
        }
        means.push(mean);
        covariances.push(cov);
    }
    HumanPrediction { means, covariances }
}

/// A forecaster mapping a track to a Gaussian sequence over the horizon.
pub trait HumanPredictor: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, track: &HumanTrack, horizon: usize, dt: f64) -> HumanPrediction;
}

#[derive(Debug, Clone, Default)]
pub struct ConstantVelocityPredictor {
    pub params: PredictionParams,
}

impl HumanPredictor for ConstantVelocityPredictor {
    fn name(&self) -> &str {
        "constant_velocity"
    }

    fn predict(&self, track: &HumanTrack, horizon: usize, dt: f64) -> HumanPrediction {
        predict(
            track,
            horizon,
            dt,
            self.params.past_steps,
            &self.params.initial_covariance,
            &self.params.process_noise,
        )
    }
}

pub type PredictorRegistry = Registry<PredictionParams, Box<dyn HumanPredictor>>;

/// Registry with the built-in predictors.
pub fn default_predictors() -> PredictorRegistry {
    let mut r = PredictorRegistry::new("predictor");
    r.register("constant_velocity", |p: &PredictionParams| {
        Box::new(ConstantVelocityPredictor { params: *p }) as Box<dyn HumanPredictor>
    });
    r
}
