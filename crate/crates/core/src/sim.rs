//! Deterministic closed-loop simulation of robots and humans.
//!
//! Each step: humans move, tracks are updated, every robot senses a frozen
//! snapshot and picks an input, inputs are applied, then metrics and
//! failure events are recorded. Humans use one random stream each, derived
//! from the scenario seed, so the robot team never changes human motion.

use std::sync::Arc;

use nalgebra::{DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::BaselineParams;
use crate::controller::{
    default_controllers, Controller, ControllerContext, ControllerRegistry, RobotView,
    SolveDiagnostics,
};
use crate::density::GaussianMixture;
use crate::dynamics::{wrap_angle, DynamicsModel};
use crate::geometry::{segment_distance, Aabb, Environment, Polygon};
use crate::metrics::MetricSample;
use crate::mpc::{MpcConfig, SolveStatus};
use crate::prediction::{
    default_predictors, HumanPrediction, HumanPredictor, HumanTrack, PredictionParams,
    PredictorRegistry,
};
use crate::registry::UnknownStrategy;
use crate::Vec2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    UnknownStrategy(#[from] UnknownStrategy),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanSpec {
    pub position: Vec2,
    pub heading: f64,
    pub speed: f64,
    /// Std of the angular-velocity noise, rad/s.
    pub sigma: f64,
}

/// Failure thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionRadii {
    /// Robot to obstacle surface.
    pub obstacle: f64,
    /// Robot to human center.
    pub human: f64,
}

impl Default for CollisionRadii {
    fn default() -> Self {
        Self {
            obstacle: 0.2,
            human: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub environment: Environment,
    pub density: GaussianMixture,
    pub model: DynamicsModel,
    pub robots: Vec<DVector<f64>>,
    pub humans: Vec<HumanSpec>,
    pub controller: String,
    pub predictor: String,
    pub mpc: MpcConfig,
    pub baseline: BaselineParams,
    pub prediction: PredictionParams,
    /// Sensing range `R`; cells are limited to `R/2`.
    pub sensing_range: f64,
    pub duration: f64,
    pub seed: u64,
    pub collision: CollisionRadii,
    pub metrics_grid_res: f64,
}

impl Scenario {
    /// Scenario with the given world and defaults everywhere else.
    pub fn new(
        environment: Environment,
        density: GaussianMixture,
        model: DynamicsModel,
        robots: Vec<DVector<f64>>,
    ) -> Self {
        Self {
            environment,
            density,
            model,
            robots,
            humans: Vec::new(),
            controller: "hmpcc".into(),
            predictor: "constant_velocity".into(),
            mpc: MpcConfig::default(),
            baseline: BaselineParams::default(),
            prediction: PredictionParams::default(),
            sensing_range: 4.0,
            duration: 10.0,
            seed: 0,
            collision: CollisionRadii::default(),
            metrics_grid_res: 0.1,
        }
    }

    pub fn dt(&self) -> f64 {
        self.mpc.dt
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt() + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if let Err(e) = self.mpc.validate() {
            return bad(e.to_string());
        }
        if !(self.duration >= self.dt()) {
            return bad(format!(
                "duration {} is shorter than dt {}",
                self.duration,
                self.dt()
            ));
        }
        if !(self.sensing_range > 0.0) {
            return bad("sensing range must be positive".into());
        }
        if !(self.metrics_grid_res > 0.0) {
            return bad("metrics grid_res must be positive".into());
        }
        for (i, x) in self.robots.iter().enumerate() {
            if let Err(e) = self.model.check_state(x) {
                return bad(format!("robot {i}: {e}"));
            }
            if !self.environment.contains(&self.model.position_of(x)) {
                return bad(format!("robot {i} starts outside the boundary"));
            }
        }
        for (j, h) in self.humans.iter().enumerate() {
            if !self.environment.contains(&h.position) {
                return bad(format!("human {j} starts outside the boundary"));
            }
            if !(h.speed >= 0.0 && h.sigma >= 0.0) {
                return bad(format!("human {j} needs non-negative speed and sigma"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub position: Vec2,
    pub heading: f64,
}

/// One human motion step with boundary reflection.
pub fn human_step<R: Rng>(
    state: &HumanState,
    speed: f64,
    sigma: f64,
    dt: f64,
    boundary: &Polygon,
    rng: &mut R,
) -> HumanState {
    let psi = Normal::new(0.0, sigma)
        .map(|n| n.sample(rng))
        .unwrap_or(0.0);
    let dir = Vec2::new(state.heading.cos(), state.heading.sin());
    let moved = state.position + dir * speed * dt;
    let heading = wrap_angle(state.heading + psi * dt);
    if boundary.contains(&moved) {
        return HumanState {
            position: moved,
            heading,
        };
    }
    // mirror about the nearest edge
    let v = boundary.vertices();
    let n = v.len();
    let (a, b) = (0..n)
        .map(|i| (v[i], v[(i + 1) % n]))
        .min_by(|x, y| {
            segment_distance(&moved, &x.0, &x.1).total_cmp(&segment_distance(&moved, &y.0, &y.1))
        })
        .expect("boundary has vertices");
    let edge = (b - a).normalize();
    let normal = Vec2::new(edge.y, -edge.x);
    let reflect = |d: Vec2| d - 2.0 * d.dot(&normal) * normal;
    let mirrored = a + reflect(moved - a);
    let new_dir = reflect(Vec2::new(heading.cos(), heading.sin()));
    let position = if boundary.contains(&mirrored) {
        mirrored
    } else {
        state.position
    };
    HumanState {
        position,
        heading: new_dir.y.atan2(new_dir.x),
    }
}

/// Stream-separated generator for entity `index` of `kind`.
fn stream(seed: u64, kind: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | index as u64);
    rng
}

const STREAM_HUMAN: u64 = 1;
const STREAM_ROBOT: u64 = 2;
const STREAM_SPAWN_ROBOTS: u64 = 3;
const STREAM_SPAWN_HUMANS: u64 = 4;

/// Robot states drawn uniformly in `region`, at least `min_separation`
/// apart and `clearance` from every obstacle surface. Headings are uniform.
pub fn random_robot_states(
    seed: u64,
    count: usize,
    model: DynamicsModel,
    region: &Aabb,
    env: &Environment,
    min_separation: f64,
    clearance: f64,
) -> Result<Vec<DVector<f64>>, SimError> {
    let mut rng = stream(seed, STREAM_SPAWN_ROBOTS, 0);
    let mut placed: Vec<Vec2> = Vec::new();
    let mut states = Vec::new();
    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(SimError::InvalidScenario(format!(
                "could not place {count} robots in the spawn region"
            )));
        }
        let p = Vec2::new(
            rng.gen_range(region.min.x..=region.max.x),
            rng.gen_range(region.min.y..=region.max.y),
        );
        let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let ok = env.contains(&p)
            && env.boundary().distance_to_boundary(&p)
                >= 0.5 * min_separation.min(clearance.max(0.1))
            && env
                .obstacles()
                .iter()
                .all(|o| o.surface_distance(&p) >= clearance)
            && placed.iter().all(|q| (p - q).norm() >= min_separation);
        if ok {
            placed.push(p);
            states.push(model.state_at(p, theta));
        }
    }
    Ok(states)
}

/// Parameters for drawing random humans.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanSpawn {
    pub count: usize,
    pub region: Aabb,
    pub speed: f64,
    pub sigma: f64,
    /// Minimum distance to obstacle surfaces.
    pub obstacle_clearance: f64,
    /// Minimum distance to any robot start position.
    pub robot_clearance: f64,
}

/// Humans with uniform positions and headings, away from obstacles and
/// from the robots' start positions.
pub fn random_humans(
    seed: u64,
    spawn: &HumanSpawn,
    env: &Environment,
    robots: &[Vec2],
) -> Result<Vec<HumanSpec>, SimError> {
    let mut rng = stream(seed, STREAM_SPAWN_HUMANS, 0);
    let region = spawn.region;
    let mut out = Vec::new();
    let mut attempts = 0;
    while out.len() < spawn.count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(SimError::InvalidScenario(format!(
                "could not place {} humans",
                spawn.count
            )));
        }
        let p = Vec2::new(
            rng.gen_range(region.min.x..=region.max.x),
            rng.gen_range(region.min.y..=region.max.y),
        );
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        if env.contains(&p)
            && env
                .obstacles()
                .iter()
                .all(|o| o.surface_distance(&p) >= spawn.obstacle_clearance)
            && robots
                .iter()
                .all(|q| (p - q).norm() >= spawn.robot_clearance)
        {
            out.push(HumanSpec {
                position: p,
                heading,
                speed: spawn.speed,
                sigma: spawn.sigma,
            });
        }
    }
    Ok(out)
}

/// What robot `i` perceives: neighbors within `R` (closed), obstacles
/// within `R + D_infl` of their surface, and tracks of humans within `R`.
#[allow(clippy::too_many_arguments)]
pub fn sense<'a>(
    i: usize,
    time: f64,
    model: DynamicsModel,
    states: &[DVector<f64>],
    tracks: &[HumanTrack],
    env: &'a Environment,
    density: &'a GaussianMixture,
    sensing_range: f64,
    obstacle_margin: f64,
) -> RobotView<'a> {
    let p = model.position_of(&states[i]);
    let neighbors = states
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, x)| model.position_of(x))
        .filter(|q| (q - p).norm() <= sensing_range)
        .collect();
    let obstacles = env
        .obstacles()
        .iter()
        .filter(|o| o.surface_distance(&p) <= sensing_range + obstacle_margin)
        .copied()
        .collect();
    let humans = tracks
        .iter()
        .filter(|t| {
            t.last_position()
                .is_some_and(|h| (h - p).norm() <= sensing_range)
        })
        .cloned()
        .collect();
    RobotView {
        index: i,
        time,
        model,
        state: states[i].clone(),
        boundary: env.boundary(),
        density,
        sensing_range,
        neighbors,
        obstacles,
        humans,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollisionTarget {
    Obstacle { index: usize },
    Human { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision {
        robot: usize,
        with: CollisionTarget,
        t: f64,
    },
    Exited {
        robot: usize,
        t: f64,
    },
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub state: Vec<f64>,
    pub input: Vec2,
    pub planned: Vec<Vec2>,
    pub diagnostics: Option<SolveDiagnostics>,
    pub failed: bool,
    /// Stopped after colliding or leaving the boundary.
    #[serde(default)]
    pub halted: bool,
}

impl RobotRecord {
    /// Short status label: the solver status, "halted", "failed", or "ok".
    pub fn status(&self) -> &'static str {
        if self.halted {
            return "halted";
        }
        if self.failed {
            return "failed";
        }
        match self.diagnostics.as_ref().map(|d| d.status) {
            Some(SolveStatus::Solved) => "solved",
            Some(SolveStatus::MaxIters) => "max_iters",
            Some(SolveStatus::Degraded) => "degraded",
            None => "ok",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub robots: Vec<RobotRecord>,
    pub humans: Vec<HumanState>,
    /// Forecast of every human from its track, as used by the controllers.
    pub predictions: Vec<HumanPrediction>,
    pub metrics: MetricSample,
    /// Smallest robot-to-obstacle-surface distance this frame, if any pair exists.
    pub min_obstacle_distance: Option<f64>,
    /// Smallest robot-to-human distance this frame, if any pair exists.
    pub min_human_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t: f64,
    pub robot: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimLog {
    pub scenario: Scenario,
    /// Frame 0 is the initial configuration; then one frame per step.
    pub frames: Vec<Frame>,
    pub outcome: Outcome,
    pub events: Vec<SimEvent>,
}

impl SimLog {
    pub fn metric_series(&self) -> Vec<(f64, MetricSample)> {
        self.frames.iter().map(|f| (f.t, f.metrics)).collect()
    }

    pub fn final_metrics(&self) -> Option<MetricSample> {
        self.frames.last().map(|f| f.metrics)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log is serializable")
    }

    /// SHA-256 of the JSON encoding, hex.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    /// Hash of the human trajectories alone.
    pub fn human_hash(&self) -> String {
        let humans: Vec<&Vec<HumanState>> = self.frames.iter().map(|f| &f.humans).collect();
        hex_digest(
            serde_json::to_string(&humans)
                .expect("serializable")
                .as_bytes(),
        )
    }

    pub fn steps(&self) -> usize {
        self.frames.len().saturating_sub(1)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn finite(d: f64) -> Option<f64> {
    d.is_finite().then_some(d)
}

struct Checks {
    min_obstacle: f64,
    min_human: f64,
    event: Option<Outcome>,
    /// Robots in collision or outside the boundary.
    hit: Vec<bool>,
}

fn check(scenario: &Scenario, t: f64, states: &[DVector<f64>], humans: &[HumanState]) -> Checks {
    let env = &scenario.environment;
    let mut c = Checks {
        min_obstacle: f64::INFINITY,
        min_human: f64::INFINITY,
        event: None,
        hit: vec![false; states.len()],
    };
    for (i, x) in states.iter().enumerate() {
        let p = scenario.model.position_of(x);
        for (j, o) in env.obstacles().iter().enumerate() {
            let d = o.surface_distance(&p);
            c.min_obstacle = c.min_obstacle.min(d);
            c.hit[i] |= d < scenario.collision.obstacle;
            if d < scenario.collision.obstacle && c.event.is_none() {
                c.event = Some(Outcome::Collision {
                    robot: i,
                    with: CollisionTarget::Obstacle { index: j },
                    t,
                });
            }
        }
        for (j, h) in humans.iter().enumerate() {
            let d = (p - h.position).norm();
            c.min_human = c.min_human.min(d);
            c.hit[i] |= d < scenario.collision.human;
            if d < scenario.collision.human && c.event.is_none() {
                c.event = Some(Outcome::Collision {
                    robot: i,
                    with: CollisionTarget::Human { index: j },
                    t,
                });
            }
        }
        c.hit[i] |= !env.contains(&p);
        if !env.contains(&p) && c.event.is_none() {
            c.event = Some(Outcome::Exited { robot: i, t });
        }
    }
    c
}

/// Runs a scenario with the built-in controllers and predictors.
pub fn run(scenario: &Scenario) -> Result<SimLog, SimError> {
    run_with(scenario, &default_controllers(), &default_predictors())
}

/// Runs a scenario, resolving strategy names in the given registries.
pub fn run_with(
    scenario: &Scenario,
    controllers: &ControllerRegistry,
    predictors: &PredictorRegistry,
) -> Result<SimLog, SimError> {
    scenario.validate()?;
    let dt = scenario.dt();
    let model = scenario.model;
    let env = &scenario.environment;
    let boundary = env.boundary();
    let r = 0.5 * scenario.sensing_range;
    let grid = scenario.metrics_grid_res;

    let predictor: Arc<dyn HumanPredictor> =
        Arc::from(predictors.build(&scenario.predictor, &scenario.prediction)?);
    let mut robots: Vec<Box<dyn Controller>> = (0..scenario.robots.len())
        .map(|i| {
            controllers.build(
                &scenario.controller,
                &ControllerContext {
                    robot: i,
                    model,
                    mpc: scenario.mpc.clone(),
                    baseline: scenario.baseline,
                    predictor: predictor.clone(),
                    seed: stream(scenario.seed, STREAM_ROBOT, i).gen(),
                },
            )
        })
        .collect::<Result<_, _>>()?;

    let mut states = scenario.robots.clone();
    let mut humans: Vec<HumanState> = scenario
        .humans
        .iter()
        .map(|h| HumanState {
            position: h.position,
            heading: h.heading,
        })
        .collect();
    let mut human_rngs: Vec<ChaCha8Rng> = (0..humans.len())
        .map(|j| stream(scenario.seed, STREAM_HUMAN, j))
        .collect();
    let capacity = scenario.prediction.past_steps.max(2);
    let mut tracks: Vec<HumanTrack> = humans
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let mut t = HumanTrack::new(j, capacity);
            t.push(0.0, h.position);
            t
        })
        .collect();
    let horizon = scenario.mpc.horizon;
    let forecast = |tracks: &[HumanTrack]| -> Vec<HumanPrediction> {
        tracks
            .iter()
            .map(|t| predictor.predict(t, horizon, dt))
            .collect()
    };
    let positions = |states: &[DVector<f64>]| -> Vec<Vec2> {
        states.iter().map(|x| model.position_of(x)).collect()
    };

    let mut outcome = Outcome::Success;
    let mut events = Vec::new();
    let c0 = check(scenario, 0.0, &states, &humans);
    if let Some(e) = c0.event {
        outcome = e;
    }
    let mut halted = c0.hit.clone();
    let mut frames = vec![Frame {
        t: 0.0,
        robots: states
            .iter()
            .map(|x| RobotRecord {
                state: x.iter().copied().collect(),
                input: Vec2::zeros(),
                planned: Vec::new(),
                diagnostics: None,
                failed: false,
                halted: false,
            })
            .collect(),
        humans: humans.clone(),
        predictions: forecast(&tracks),
        metrics: MetricSample::compute(&positions(&states), boundary, &scenario.density, r, grid),
        min_obstacle_distance: finite(c0.min_obstacle),
        min_human_distance: finite(c0.min_human),
    }];

    let obstacle_margin = scenario.baseline.d_infl;
    for step in 1..=scenario.steps() {
        let t = step as f64 * dt;
        for (j, h) in humans.iter_mut().enumerate() {
            let spec = &scenario.humans[j];
            *h = human_step(h, spec.speed, spec.sigma, dt, boundary, &mut human_rngs[j]);
            tracks[j].push(t, h.position);
        }

        let snapshot = states.clone();
        let mut records = Vec::with_capacity(robots.len());
        for (i, ctrl) in robots.iter_mut().enumerate() {
            if halted[i] {
                records.push(RobotRecord {
                    state: Vec::new(),
                    input: Vec2::zeros(),
                    planned: Vec::new(),
                    diagnostics: None,
                    failed: false,
                    halted: true,
                });
                continue;
            }
            let view = sense(
                i,
                t,
                model,
                &snapshot,
                &tracks,
                env,
                &scenario.density,
                scenario.sensing_range,
                obstacle_margin,
            );
            let record = match ctrl.control(&view) {
                Ok(out) => RobotRecord {
                    state: Vec::new(),
                    input: out.input,
                    planned: out.planned,
                    diagnostics: out.diagnostics,
                    failed: false,
                    halted: false,
                },
                Err(e) => {
                    log::warn!("robot {i} at t={t}: {e}; applying zero input");
                    events.push(SimEvent {
                        t,
                        robot: i,
                        message: e.to_string(),
                    });
                    RobotRecord {
                        state: Vec::new(),
                        input: Vec2::zeros(),
                        planned: Vec::new(),
                        diagnostics: None,
                        failed: true,
                        halted: false,
                    }
                }
            };
            if record
                .diagnostics
                .as_ref()
                .is_some_and(|d| d.status == SolveStatus::Degraded)
            {
                events.push(SimEvent {
                    t,
                    robot: i,
                    message: "degraded solve".into(),
                });
            }
            records.push(record);
        }
        for (x, rec) in states.iter_mut().zip(records.iter_mut()) {
            if !rec.halted {
                *x = model.step(x, &rec.input, dt);
            }
            rec.state = x.iter().copied().collect();
        }

        let c = check(scenario, t, &states, &humans);
        if outcome.is_success() {
            if let Some(e) = c.event {
                outcome = e;
            }
        }
        for (h, now) in halted.iter_mut().zip(&c.hit) {
            *h |= *now;
        }
        frames.push(Frame {
            t,
            robots: records,
            humans: humans.clone(),
            predictions: forecast(&tracks),
            metrics: MetricSample::compute(
                &positions(&states),
                boundary,
                &scenario.density,
                r,
                grid,
            ),
            min_obstacle_distance: finite(c.min_obstacle),
            min_human_distance: finite(c.min_human),
        });
    }

    Ok(SimLog {
        scenario: scenario.clone(),
        frames,
        outcome,
        events,
    })
}

/// Half-axes and orientation of the ellipse `d_M²(q; μ, Σ) = level`.
pub fn confidence_ellipse(covariance: &Matrix2<f64>, level: f64) -> (f64, f64, f64) {
    let eig = covariance.symmetric_eigen();
    let (i, j) = if eig.eigenvalues[0] >= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let level = level.max(0.0);
    let a = (eig.eigenvalues[i].max(0.0) * level).sqrt();
    let b = (eig.eigenvalues[j].max(0.0) * level).sqrt();
    let v = eig.eigenvectors.column(i);
    (a, b, v[1].atan2(v[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianComponent;
    use crate::geometry::Obstacle;

    fn arena() -> Environment {
        Environment::rectangle(Vec2::zeros(), Vec2::new(10.0, 10.0))
    }

    #[test]
    fn straight_human_step() {
        let s = HumanState {
            position: Vec2::new(1.0, 1.0),
            heading: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = human_step(&s, 1.0, 0.0, 0.1, arena().boundary(), &mut rng);
        assert!((n.position - Vec2::new(1.1, 1.0)).norm() < 1e-12);
        let still = human_step(&s, 0.0, 0.0, 0.1, arena().boundary(), &mut rng);
        assert_eq!(still.position, s.position);
    }

    #[test]
    fn angular_noise_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.3;
        let dist = Normal::new(0.0, sigma).unwrap();
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| dist.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * sigma / 100.0);
    }

    #[test]
    fn reflection_keeps_humans_inside() {
        let env = arena();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = HumanState {
            position: Vec2::new(9.95, 5.0),
            heading: 0.1,
        };
        for _ in 0..2000 {
            s = human_step(&s, 1.5, 1.0, 0.1, env.boundary(), &mut rng);
            assert!(env.contains(&s.position));
        }
        // heading mirrored off the right wall
        let s = human_step(
            &HumanState {
                position: Vec2::new(9.95, 5.0),
                heading: 0.0,
            },
            1.0,
            0.0,
            0.1,
            env.boundary(),
            &mut rng,
        );
        assert!((s.heading.abs() - std::f64::consts::PI).abs() < 1e-12);
        assert!((s.position - Vec2::new(9.95, 5.0)).norm() < 1e-9);
    }

    #[test]
    fn sensing_is_a_closed_ball() {
        let env = arena();
        let phi = GaussianMixture::new(vec![GaussianComponent::isotropic(
            1.0,
            Vec2::new(5.0, 5.0),
            1.0,
        )
        .unwrap()])
        .unwrap();
        let m = DynamicsModel::SingleIntegrator;
        let states = vec![
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![3.0, 1.0]),
            DVector::from_vec(vec![1.0, 3.5]),
        ];
        let v = sense(0, 0.0, m, &states, &[], &env, &phi, 2.0, 1.0);
        assert_eq!(v.neighbors, vec![Vec2::new(3.0, 1.0)]);
        let v = sense(0, 0.0, m, &states, &[], &env, &phi, 1.0, 1.0);
        assert!(v.neighbors.is_empty());
    }

    #[test]
    fn zero_robots_is_a_success() {
        let phi = GaussianMixture::new(vec![GaussianComponent::isotropic(
            1.0,
            Vec2::new(5.0, 5.0),
            1.0,
        )
        .unwrap()])
        .unwrap();
        let mut sc = Scenario::new(arena(), phi, DynamicsModel::SingleIntegrator, vec![]);
        sc.duration = 1.0;
        let spawn = HumanSpawn {
            count: 2,
            region: Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0)),
            speed: 0.5,
            sigma: 0.3,
            obstacle_clearance: 0.0,
            robot_clearance: 0.0,
        };
        sc.humans = random_humans(1, &spawn, &sc.environment, &[]).unwrap();
        let log = run(&sc).unwrap();
        assert_eq!(log.outcome, Outcome::Success);
        assert_eq!(log.steps(), 10);
        assert!(log
            .frames
            .iter()
            .all(|f| f.robots.is_empty() && f.humans.len() == 2));
    }

    #[test]
    fn colliding_robot_halts() {
        let phi = GaussianMixture::new(vec![GaussianComponent::isotropic(
            1.0,
            Vec2::new(8.0, 5.0),
            1.0,
        )
        .unwrap()])
        .unwrap();
        let env = arena()
            .with_obstacles(vec![Obstacle::new(Vec2::new(5.0, 5.0), 0.3)])
            .unwrap();
        let mut sc = Scenario::new(
            env,
            phi,
            DynamicsModel::SingleIntegrator,
            vec![DVector::from_vec(vec![4.6, 5.0])],
        );
        sc.controller = "baseline".into();
        sc.duration = 1.0;
        let log = run(&sc).unwrap();
        let Outcome::Collision { t, .. } = log.outcome else {
            panic!("expected a collision, got {:?}", log.outcome);
        };
        assert_eq!(t, 0.0);
        assert!(log.frames[1..]
            .iter()
            .all(|f| f.robots[0].halted && f.robots[0].state == vec![4.6, 5.0]));
        assert_eq!(log.frames.len(), 11);
    }

    #[test]
    fn ellipse_of_isotropic_covariance() {
        let (a, b, _) = confidence_ellipse(&(Matrix2::identity() * 0.04), 9.0);
        assert!((a - 0.6).abs() < 1e-12 && (b - 0.6).abs() < 1e-12);
    }
}
