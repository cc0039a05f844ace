//! Limited-range Lloyd coverage with potential-field repulsion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{ControlError, ControlOutput, Controller, RobotView};
use crate::dynamics::{wrap_angle, DynamicsModel};
use crate::geometry::{cell_moments, limited_voronoi_cell, CellMoments, Obstacle};
use crate::mpc::MpcConfig;
use crate::Vec2;

/// Distances below this leave the repulsion direction undefined.
const COINCIDENT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Lloyd proportional gain.
    pub k: f64,
    pub k_rep: f64,
    /// Influence radius of the repulsive potential.
    pub d_infl: f64,
    /// Heading gain of the unicycle adapter.
    pub k_theta: f64,
    /// Velocity-tracking gain of the double-integrator adapter.
    pub k_v: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            k: 1.0,
            k_rep: 0.05,
            d_infl: 1.0,
            k_theta: 2.0,
            k_v: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepellerKind {
    Obstacle,
    Human,
    Robot,
}

/// A point that pushes the robot away. Distances are measured to `center`
/// minus `radius` (the surface for obstacles, the center otherwise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Repeller {
    pub center: Vec2,
    pub radius: f64,
    pub kind: RepellerKind,
}

impl Repeller {
    pub fn point(center: Vec2, kind: RepellerKind) -> Self {
        Self {
            center,
            radius: 0.0,
            kind,
        }
    }

    pub fn obstacle(o: &Obstacle) -> Self {
        Self {
            center: o.center,
            radius: o.radius,
            kind: RepellerKind::Obstacle,
        }
    }
}

pub fn lloyd_input(p: &Vec2, centroid: &Vec2, k: f64) -> Vec2 {
    k * (centroid - p)
}

fn lloyd_for(p: &Vec2, m: &CellMoments, k: f64) -> Vec2 {
    if m.empty {
        Vec2::zeros()
    } else {
        lloyd_input(p, &m.centroid, k)
    }
}

/// Sum of inverse-square potential gradients with cutoff at `d_infl`.
///
/// `saturation` caps the magnitude of a single term; a repeller closer than
/// 1 µm pushes at the cap in a direction drawn from `rng`.
pub fn repulsive_input<R: Rng>(
    p: &Vec2,
    repellers: &[Repeller],
    params: &BaselineParams,
    saturation: f64,
    rng: &mut R,
) -> Vec2 {
    let mut u = Vec2::zeros();
    for r in repellers {
        let offset = p - r.center;
        let center_dist = offset.norm();
        let d = center_dist - r.radius;
        if d >= params.d_infl {
            continue;
        }
        let dir = if center_dist > COINCIDENT {
            offset / center_dist
        } else {
            let a = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            Vec2::new(a.cos(), a.sin())
        };
        let mag = if d < COINCIDENT {
            saturation
        } else {
            (params.k_rep * (1.0 / d - 1.0 / params.d_infl) / (d * d)).min(saturation)
        };
        u += mag * dir;
    }
    u
}

fn clamp_box(u: &Vec2, lo: &Vec2, hi: &Vec2) -> Vec2 {
    Vec2::new(u.x.clamp(lo.x, hi.x), u.y.clamp(lo.y, hi.y))
}

/// Velocity command for a robot whose view and cell moments are known,
/// mapped to the model's inputs and clamped to `[u_min, u_max]`.
pub fn baseline_step<R: Rng>(
    view: &RobotView<'_>,
    moments: &CellMoments,
    params: &BaselineParams,
    u_min: &Vec2,
    u_max: &Vec2,
    rng: &mut R,
) -> Vec2 {
    let p = view.position();
    let mut repellers: Vec<Repeller> = view.obstacles.iter().map(Repeller::obstacle).collect();
    repellers.extend(
        view.humans
            .iter()
            .filter_map(|h| h.last_position())
            .map(|c| Repeller::point(c, RepellerKind::Human)),
    );
    repellers.extend(
        view.neighbors
            .iter()
            .map(|c| Repeller::point(*c, RepellerKind::Robot)),
    );
    let saturation = u_max.amax().max(u_min.amax());
    let desired =
        lloyd_for(&p, moments, params.k) + repulsive_input(&p, &repellers, params, saturation, rng);

    let u = match view.model {
        DynamicsModel::SingleIntegrator => desired,
        DynamicsModel::DoubleIntegrator => {
            let v = view
                .model
                .velocity_of(&view.state)
                .unwrap_or_else(Vec2::zeros);
            params.k_v * (desired - v)
        }
        DynamicsModel::Unicycle => {
            if desired.norm() < 1e-12 {
                Vec2::zeros()
            } else {
                let theta = view.state[2];
                let err = wrap_angle(desired.y.atan2(desired.x) - theta);
                Vec2::new((desired.norm() * err.cos()).max(0.0), params.k_theta * err)
            }
        }
    };
    clamp_box(&u, u_min, u_max)
}

pub struct BaselineController {
    model: DynamicsModel,
    params: BaselineParams,
    cfg: MpcConfig,
    rng: ChaCha8Rng,
}

impl BaselineController {
    pub fn new(model: DynamicsModel, params: BaselineParams, cfg: MpcConfig, seed: u64) -> Self {
        Self {
            model,
            params,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for BaselineController {
    fn name(&self) -> &str {
        "baseline"
    }

    fn control(&mut self, view: &RobotView<'_>) -> Result<ControlOutput, ControlError> {
        debug_assert_eq!(view.model, self.model);
        let p = view.position();
        let cell = limited_voronoi_cell(
            &p,
            &view.neighbors,
            view.boundary,
            0.5 * view.sensing_range,
            self.cfg.ball_sides,
        );
        let m = cell_moments(&cell, view.density, self.cfg.grid_res);
        let input = baseline_step(
            view,
            &m,
            &self.params,
            &self.cfg.u_min,
            &self.cfg.u_max,
            &mut self.rng,
        );
        Ok(ControlOutput {
            input,
            planned: Vec::new(),
            diagnostics: None,
        })
    }
}
