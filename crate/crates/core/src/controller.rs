//! Controller strategy interface and the robot's local view of the world.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{BaselineController, BaselineParams};
use crate::density::GaussianMixture;
use crate::dynamics::DynamicsModel;
use crate::geometry::{Obstacle, Polygon};
use crate::mpc::{CostTerms, HmpccController, MpcConfig, SolveStatus};
use crate::prediction::{HumanPredictor, HumanTrack};
use crate::registry::Registry;
use crate::Vec2;

/// Everything a robot may know when choosing its input: its own state, the
/// static map (boundary and density), and what lies within sensing range.
#[derive(Debug, Clone)]
pub struct RobotView<'a> {
    pub index: usize,
    pub time: f64,
    pub model: DynamicsModel,
    pub state: DVector<f64>,
    pub boundary: &'a Polygon,
    pub density: &'a GaussianMixture,
    pub sensing_range: f64,
    pub neighbors: Vec<Vec2>,
    pub obstacles: Vec<Obstacle>,
    pub humans: Vec<HumanTrack>,
}

impl RobotView<'_> {
    pub fn position(&self) -> Vec2 {
        self.model.position_of(&self.state)
    }
}

/// Per-call solver report, logged by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub cost: CostTerms,
    pub status: SolveStatus,
    pub emergency_slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub input: Vec2,
    /// Planned future positions, if the controller plans.
    pub planned: Vec<Vec2>,
    pub diagnostics: Option<SolveDiagnostics>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("controller failed: {0}")]
    Failed(String),
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    fn control(&mut self, view: &RobotView<'_>) -> Result<ControlOutput, ControlError>;
}

/// Inputs available to a controller factory.
#[derive(Clone)]
pub struct ControllerContext {
    pub robot: usize,
    pub model: DynamicsModel,
    pub mpc: MpcConfig,
    pub baseline: BaselineParams,
    pub predictor: Arc<dyn HumanPredictor>,
    pub seed: u64,
}

pub type ControllerRegistry = Registry<ControllerContext, Box<dyn Controller>>;

/// Registry holding `hmpcc` and `baseline`.
pub fn default_controllers() -> ControllerRegistry {
    let mut r = ControllerRegistry::new("controller");
    r.register("hmpcc", |ctx: &ControllerContext| {
        Box::new(HmpccController::new(
            ctx.model,
            ctx.mpc.clone(),
            ctx.predictor.clone(),
        )) as Box<dyn Controller>
    });
    r.register("baseline", |ctx: &ControllerContext| {
        Box::new(BaselineController::new(
            ctx.model,
            ctx.baseline,
            ctx.mpc.clone(),
            ctx.seed,
        )) as Box<dyn Controller>
    });
    r
}
