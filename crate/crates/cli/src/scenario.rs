//! TOML scenario files.
//!
//! A file describes a family of runs: random parts (density, spawn
//! positions) are drawn per seed when not given explicitly.

use std::path::Path;

use hmpcc_core::baseline::BaselineParams;
use hmpcc_core::density::{GaussianComponent, GaussianMixture};
use hmpcc_core::dynamics::DynamicsModel;
use hmpcc_core::geometry::{Aabb, Environment, Obstacle};
use hmpcc_core::mpc::MpcConfig;
use hmpcc_core::prediction::PredictionParams;
use hmpcc_core::sim::{
    random_humans, random_robot_states, CollisionRadii, HumanSpawn, HumanSpec, Scenario,
};
use hmpcc_core::Vec2;
use nalgebra::{DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

type P2 = [f64; 2];

fn v(p: P2) -> Vec2 {
    Vec2::new(p[0], p[1])
}

fn p(v: &Vec2) -> P2 {
    [v.x, v.y]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub environment: EnvironmentSection,
    pub density: DensitySection,
    pub robots: RobotsSection,
    #[serde(default)]
    pub humans: HumansSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub boundary: Vec<P2>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub center: P2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<ComponentEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomDensity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentEntry {
    pub weight: f64,
    pub mean: P2,
    /// Isotropic standard deviation; exclusive with `covariance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<[P2; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDensity {
    /// Fixed mixture seed; the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub k: usize,
    pub sigma_range: P2,
    /// Region for the means; the boundary's bounding box when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[P2; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotsSection {
    pub model: DynamicsModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<Vec<f64>>,
    #[serde(default = "default_sensing_range")]
    pub sensing_range: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn_region: Option<[P2; 2]>,
    #[serde(default = "default_min_separation")]
    pub min_separation: f64,
    #[serde(default = "default_obstacle_clearance")]
    pub obstacle_clearance: f64,
}

fn default_sensing_range() -> f64 {
    4.0
}
fn default_min_separation() -> f64 {
    1.0
}
fn default_obstacle_clearance() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumansSection {
    #[serde(default)]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<HumanEntry>,
    #[serde(default = "default_human_speed")]
    pub speed: f64,
    #[serde(default = "default_human_sigma")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spawn_region: Option<[P2; 2]>,
    #[serde(default = "default_robot_clearance")]
    pub robot_clearance: f64,
    #[serde(default = "default_obstacle_clearance")]
    pub obstacle_clearance: f64,
}

fn default_human_speed() -> f64 {
    0.5
}
fn default_human_sigma() -> f64 {
    0.3
}
fn default_robot_clearance() -> f64 {
    1.5
}

impl Default for HumansSection {
    fn default() -> Self {
        Self {
            count: 0,
            agents: Vec::new(),
            speed: default_human_speed(),
            sigma: default_human_sigma(),
            spawn_region: None,
            robot_clearance: default_robot_clearance(),
            obstacle_clearance: default_obstacle_clearance(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanEntry {
    pub position: P2,
    pub heading: f64,
    pub speed: f64,
    /// Per-human angular noise; the section's `sigma` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(rename = "type", default = "default_controller")]
    pub kind: String,
    #[serde(default = "default_predictor")]
    pub predictor: String,
    #[serde(default)]
    pub mpc: MpcSection,
    #[serde(default)]
    pub baseline: BaselineParams,
    #[serde(default)]
    pub prediction: PredictionSection,
}

fn default_controller() -> String {
    "hmpcc".into()
}
fn default_predictor() -> String {
    "constant_velocity".into()
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: default_controller(),
            predictor: default_predictor(),
            mpc: MpcSection::default(),
            baseline: BaselineParams::default(),
            prediction: PredictionSection::default(),
        }
    }
}

/// MPC settings; `input_cost`, `initial_covariance` and `process_noise`
/// are diagonals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcSection {
    pub horizon: usize,
    pub dt: f64,
    pub input_cost: P2,
    pub safety_distance: f64,
    pub alpha: f64,
    pub omega: f64,
    pub emergency_factor: f64,
    pub u_min: P2,
    pub u_max: P2,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_bounds: Option<[P2; 2]>,
    pub position_margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_limit: Option<f64>,
    pub sqp_iters: usize,
    pub sqp_tol: f64,
    pub grid_res: f64,
    pub k_gain: f64,
    pub ball_sides: usize,
    pub avoid_neighbors: bool,
    pub trust_region: P2,
    pub normalize_coverage: bool,
    pub detour_starts: bool,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self::from_config(&MpcConfig::default())
    }
}

impl MpcSection {
    fn from_config(c: &MpcConfig) -> Self {
        Self {
            horizon: c.horizon,
            dt: c.dt,
            input_cost: [c.input_cost[(0, 0)], c.input_cost[(1, 1)]],
            safety_distance: c.safety_distance,
            alpha: c.alpha,
            omega: c.slack_weight,
            emergency_factor: c.emergency_factor,
            u_min: p(&c.u_min),
            u_max: p(&c.u_max),
            position_bounds: c.position_bounds.map(|b| [p(&b.min), p(&b.max)]),
            position_margin: c.position_margin,
            speed_limit: c.speed_limit,
            sqp_iters: c.sqp_iters,
            sqp_tol: c.sqp_tol,
            grid_res: c.grid_res,
            k_gain: c.k_gain,
            ball_sides: c.ball_sides,
            avoid_neighbors: c.avoid_neighbors,
            trust_region: p(&c.trust_region),
            normalize_coverage: c.normalize_coverage,
            detour_starts: c.detour_starts,
        }
    }

    fn to_config(&self) -> MpcConfig {
        MpcConfig {
            horizon: self.horizon,
            dt: self.dt,
            input_cost: Matrix2::new(self.input_cost[0], 0.0, 0.0, self.input_cost[1]),
            safety_distance: self.safety_distance,
            alpha: self.alpha,
            slack_weight: self.omega,
            emergency_factor: self.emergency_factor,
            u_min: v(self.u_min),
            u_max: v(self.u_max),
            position_bounds: self.position_bounds.map(|b| Aabb::new(v(b[0]), v(b[1]))),
            position_margin: self.position_margin,
            speed_limit: self.speed_limit,
            sqp_iters: self.sqp_iters,
            sqp_tol: self.sqp_tol,
            grid_res: self.grid_res,
            k_gain: self.k_gain,
            ball_sides: self.ball_sides,
            avoid_neighbors: self.avoid_neighbors,
            trust_region: v(self.trust_region),
            normalize_coverage: self.normalize_coverage,
            detour_starts: self.detour_starts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionSection {
    pub past_steps: usize,
    pub initial_covariance: P2,
    pub process_noise: P2,
}

impl Default for PredictionSection {
    fn default() -> Self {
        let d = PredictionParams::default();
        Self {
            past_steps: d.past_steps,
            initial_covariance: [d.initial_covariance[(0, 0)], d.initial_covariance[(1, 1)]],
            process_noise: [d.process_noise[(0, 0)], d.process_noise[(1, 1)]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub duration: f64,
    pub seeds: Vec<u64>,
    /// Any of "log", "trajectory", "summary".
    pub outputs: Vec<String>,
    pub collision_obstacle: f64,
    pub collision_human: f64,
    pub metrics_grid_res: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        let c = CollisionRadii::default();
        Self {
            duration: 10.0,
            seeds: vec![0],
            outputs: vec!["log".into(), "trajectory".into(), "summary".into()],
            collision_obstacle: c.obstacle,
            collision_human: c.human,
            metrics_grid_res: 0.1,
        }
    }
}

pub const OUTPUT_KINDS: [&str; 3] = ["log", "trajectory", "summary"];

impl RunSection {
    pub fn wants(&self, kind: &str) -> bool {
        self.outputs.iter().any(|o| o == kind)
    }
}

fn aabb(b: &[P2; 2]) -> Aabb {
    Aabb::new(v(b[0]), v(b[1]))
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        file.check()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file is serializable")
    }

    /// Static checks that do not depend on the seed.
    pub fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.density.components.is_empty() == self.density.random.is_none() {
            return bad("[density] needs exactly one of `components` or `random`".into());
        }
        for (i, c) in self.density.components.iter().enumerate() {
            if c.sigma.is_some() == c.covariance.is_some() {
                return bad(format!(
                    "density component {i} needs exactly one of `sigma` or `covariance`"
                ));
            }
        }
        if self.robots.count.is_some() && !self.robots.states.is_empty() {
            return bad("[robots] takes `count` or `states`, not both".into());
        }
        if self.humans.count > 0 && !self.humans.agents.is_empty() {
            return bad("[humans] takes `count` or `agents`, not both".into());
        }
        for o in &self.run.outputs {
            if !OUTPUT_KINDS.contains(&o.as_str()) {
                return bad(format!(
                    "unknown output `{o}` (expected one of {})",
                    OUTPUT_KINDS.join(", ")
                ));
            }
        }
        if self.run.seeds.is_empty() {
            return bad("[run] seeds must not be empty".into());
        }
        Environment::new(
            self.environment.boundary.iter().copied().map(v).collect(),
            self.environment
                .obstacles
                .iter()
                .map(|o| Obstacle::new(v(o.center), o.radius))
                .collect(),
        )
        .map_err(|e| CliError::Invalid(format!("[environment] {e}")))?;
        self.controller
            .mpc
            .to_config()
            .validate()
            .map_err(|e| CliError::Invalid(format!("[controller.mpc] {e}")))?;
        Ok(())
    }

    /// Concrete scenario for one seed.
    pub fn resolve(&self, seed: u64) -> Result<Scenario, CliError> {
        let invalid = |e: hmpcc_core::sim::SimError| CliError::Invalid(e.to_string());
        let env = Environment::new(
            self.environment.boundary.iter().copied().map(v).collect(),
            self.environment
                .obstacles
                .iter()
                .map(|o| Obstacle::new(v(o.center), o.radius))
                .collect(),
        )
        .map_err(|e| CliError::Invalid(format!("[environment] {e}")))?;
        let bbox = env.boundary().aabb();

        let density = if let Some(r) = &self.density.random {
            let bounds = r.bounds.as_ref().map(aabb).unwrap_or(bbox);
            GaussianMixture::random(
                r.seed.unwrap_or(seed),
                r.k.max(1),
                &bounds,
                (r.sigma_range[0], r.sigma_range[1]),
            )
        } else {
            let comps = self
                .density
                .components
                .iter()
                .map(|c| match (c.sigma, c.covariance) {
                    (Some(s), _) => GaussianComponent::isotropic(c.weight, v(c.mean), s),
                    (None, Some(m)) => GaussianComponent::new(
                        c.weight,
                        v(c.mean),
                        Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1]),
                    ),
                    (None, None) => unreachable!("checked"),
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Invalid(format!("[density] {e}")))?;
            GaussianMixture::new(comps).map_err(|e| CliError::Invalid(format!("[density] {e}")))?
        };

        let model = self.robots.model;
        let robots = if let Some(n) = self.robots.count {
            let region = self
                .robots
                .spawn_region
                .as_ref()
                .map(aabb)
                .unwrap_or_else(|| bbox.shrink(0.5));
            random_robot_states(
                seed,
                n,
                model,
                &region,
                &env,
                self.robots.min_separation,
                self.robots.obstacle_clearance,
            )
            .map_err(invalid)?
        } else {
            self.robots
                .states
                .iter()
                .map(|s| DVector::from_vec(s.clone()))
                .collect()
        };
        let robot_positions: Vec<Vec2> = robots
            .iter()
            .filter(|x| model.check_state(x).is_ok())
            .map(|x| model.position_of(x))
            .collect();

        let h = &self.humans;
        let humans = if h.count > 0 {
            let spawn = HumanSpawn {
                count: h.count,
                region: h
                    .spawn_region
                    .as_ref()
                    .map(aabb)
                    .unwrap_or_else(|| bbox.shrink(0.5)),
                speed: h.speed,
                sigma: h.sigma,
                obstacle_clearance: h.obstacle_clearance,
                robot_clearance: h.robot_clearance,
            };
            random_humans(seed, &spawn, &env, &robot_positions).map_err(invalid)?
        } else {
            h.agents
                .iter()
                .map(|a| HumanSpec {
                    position: v(a.position),
                    heading: a.heading,
                    speed: a.speed,
                    sigma: a.sigma.unwrap_or(h.sigma),
                })
                .collect()
        };

        let pr = &self.controller.prediction;
        let scenario = Scenario {
            environment: env,
            density,
            model,
            robots,
            humans,
            controller: self.controller.kind.clone(),
            predictor: self.controller.predictor.clone(),
            mpc: self.controller.mpc.to_config(),
            baseline: self.controller.baseline,
            prediction: PredictionParams {
                past_steps: pr.past_steps,
                initial_covariance: Matrix2::new(
                    pr.initial_covariance[0],
                    0.0,
                    0.0,
                    pr.initial_covariance[1],
                ),
                process_noise: Matrix2::new(pr.process_noise[0], 0.0, 0.0, pr.process_noise[1]),
            },
            sensing_range: self.robots.sensing_range,
            duration: self.run.duration,
            seed,
            collision: CollisionRadii {
                obstacle: self.run.collision_obstacle,
                human: self.run.collision_human,
            },
            metrics_grid_res: self.run.metrics_grid_res,
        };
        scenario.validate().map_err(invalid)?;
        Ok(scenario)
    }

    /// Fully explicit file reproducing `s`. Matrices that are not diagonal
    /// (input cost, prediction covariances) cannot be expressed and are
    /// reduced to their diagonals.
    pub fn from_scenario(s: &Scenario) -> Self {
        let pr = &s.prediction;
        Self {
            environment: EnvironmentSection {
                boundary: s.environment.boundary().vertices().iter().map(p).collect(),
                obstacles: s
                    .environment
                    .obstacles()
                    .iter()
                    .map(|o| ObstacleEntry {
                        center: p(&o.center),
                        radius: o.radius,
                    })
                    .collect(),
            },
            density: DensitySection {
                components: s
                    .density
                    .components()
                    .iter()
                    .map(|c| {
                        let m = c.covariance();
                        ComponentEntry {
                            weight: c.weight(),
                            mean: p(&c.mean()),
                            sigma: None,
                            covariance: Some([[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]),
                        }
                    })
                    .collect(),
                random: None,
            },
            robots: RobotsSection {
                model: s.model,
                count: None,
                states: s
                    .robots
                    .iter()
                    .map(|x| x.iter().copied().collect())
                    .collect(),
                sensing_range: s.sensing_range,
                spawn_region: None,
                min_separation: default_min_separation(),
                obstacle_clearance: default_obstacle_clearance(),
            },
            humans: HumansSection {
                agents: s
                    .humans
                    .iter()
                    .map(|h| HumanEntry {
                        position: p(&h.position),
                        heading: h.heading,
                        speed: h.speed,
                        sigma: Some(h.sigma),
                    })
                    .collect(),
                ..HumansSection::default()
            },
            controller: ControllerSection {
                kind: s.controller.clone(),
                predictor: s.predictor.clone(),
                mpc: MpcSection::from_config(&s.mpc),
                baseline: s.baseline,
                prediction: PredictionSection {
                    past_steps: pr.past_steps,
                    initial_covariance: [
                        pr.initial_covariance[(0, 0)],
                        pr.initial_covariance[(1, 1)],
                    ],
                    process_noise: [pr.process_noise[(0, 0)], pr.process_noise[(1, 1)]],
                },
            },
            run: RunSection {
                duration: s.duration,
                seeds: vec![s.seed],
                collision_obstacle: s.collision.obstacle,
                collision_human: s.collision.human,
                metrics_grid_res: s.metrics_grid_res,
                ..RunSection::default()
            },
        }
    }
}

/// Parses `a..b` (inclusive) or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "invalid seed list `{text}` (expected a..b or a,b,c)"
        ))
    };
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        Ok((a..=b).collect())
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect()
    }
}
