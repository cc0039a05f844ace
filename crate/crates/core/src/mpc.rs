//! Receding-horizon coverage controller with probabilistic human avoidance.
//!
//! Each control step solves
//!
//! ```text
//! min  Σ_k ∫_{V(t₀)} ‖q − p^k‖² φ(q) dq + Σ_k u_kᵀ R u_k + Σ_k w_k δ_k
//! s.t. x^{k+1} = step(x^k, u^k)
//!      ‖p^k − ρ_j‖² ≥ (D_s + r_j)²               (obstacles)
//!      d_M²(p^k; μ^k, Σ^k) ≥ rhs(Σ^k) − δ_k, δ_k ≥ 0   (humans)
//!      p^k ∈ 𝒳,  u_min ≤ u^k ≤ u_max
//! ```
//!
//! by successive linearization: the dynamics and the (non-convex) avoidance
//! constraints are linearized along a nominal trajectory and the resulting
//! convex QP is solved in the input sequence. Avoidance rows carry an
//! emergency slack with a large weight so every subproblem is feasible.
//!
//! Timing: input `u^k` moves the robot to `p^{k+1}`. The simulator advances
//! humans before robots, so at collision-check time the robot's `p^{k+1}` is
//! compared against the human's `k`-step prediction; rows pair them that way.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlError, ControlOutput, Controller, RobotView, SolveDiagnostics};
use crate::dynamics::{DynamicsModel, INPUT_DIM};
use crate::geometry::{
    cell_moments, limited_voronoi_cell, Aabb, CellMoments, Obstacle, DEFAULT_BALL_SIDES,
};
use crate::prediction::{HumanPrediction, HumanPredictor};
use crate::qp::QpProblem;
use crate::Vec2;

/// Emergency slack above this marks a solve as degraded.
pub const EMERGENCY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Input weight `R` (symmetric positive definite).
    pub input_cost: Matrix2<f64>,
    pub safety_distance: f64,
    /// Risk level α of the human chance constraint.
    pub alpha: f64,
    /// Initial slack weight Ω; step `k` uses Ω(1 − k/T).
    pub slack_weight: f64,
    /// Emergency slack weight as a multiple of Ω.
    pub emergency_factor: f64,
    pub u_min: Vec2,
    pub u_max: Vec2,
    /// Admissible positions; `None` uses the boundary's bounding box shrunk
    /// by `position_margin`.
    pub position_bounds: Option<Aabb>,
    pub position_margin: f64,
    /// Per-axis speed bound for models with a velocity state.
    pub speed_limit: Option<f64>,
    pub sqp_iters: usize,
    /// Input change (∞-norm) below which the SQP is considered converged.
    pub sqp_tol: f64,
    pub grid_res: f64,
    /// Proportional gain of the equivalent Lloyd law (diagnostics only).
    pub k_gain: f64,
    pub ball_sides: usize,
    /// Keep `safety_distance` from the current positions of sensed robots.
    pub avoid_neighbors: bool,
    /// Per-SQP-iteration bound on the input change, for nonlinear models.
    pub trust_region: Vec2,
    /// Divide the coverage term by the cell mass, so the pull towards the
    /// centroid does not fade in sparse regions.
    #[serde(default = "default_true")]
    pub normalize_coverage: bool,
    /// Extra SQP passes from sideways nominals when obstacles block progress.
    #[serde(default = "default_true")]
    pub detour_starts: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            dt: 0.1,
            input_cost: Matrix2::identity() * 1e-3,
            safety_distance: 0.5,
            alpha: 0.1,
            slack_weight: 100.0,
            emergency_factor: 1e3,
            u_min: Vec2::new(-1.0, -1.0),
            u_max: Vec2::new(1.0, 1.0),
            position_bounds: None,
            position_margin: 0.25,
            speed_limit: None,
            sqp_iters: 3,
            sqp_tol: 1e-6,
            grid_res: 0.1,
            k_gain: 1.0,
            ball_sides: DEFAULT_BALL_SIDES,
            avoid_neighbors: true,
            trust_region: Vec2::new(0.5, 1.0),
            normalize_coverage: true,
            detour_starts: true,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), MpcError> {
        let bad = |m: &str| Err(MpcError::InvalidConfig(m.to_string()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in [0, 1)");
        }
        if !(self.safety_distance > 0.0) {
            return bad("safety distance must be positive");
        }
        if !crate::density::is_spd(&self.input_cost) {
            return bad("input cost must be symmetric positive definite");
        }
        if self.u_min.x > self.u_max.x || self.u_min.y > self.u_max.y {
            return bad("u_min must not exceed u_max");
        }
        if !(self.grid_res > 0.0) {
            return bad("grid_res must be positive");
        }
        if self.sqp_iters < 1 {
            return bad("sqp_iters must be at least 1");
        }
        Ok(())
    }

    pub fn emergency_weight(&self) -> f64 {
        self.emergency_factor * self.slack_weight
    }

    /// Linearly decaying slack weight `Ω(1 − k/T)`.
    pub fn slack_weight_at(&self, k: usize) -> f64 {
        self.slack_weight * (1.0 - k as f64 / self.horizon as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    MaxIters,
    Degraded,
}

/// Cost breakdown, evaluated on the true (nonlinear) roll-out.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostTerms {
    pub coverage: f64,
    pub input: f64,
    pub slack: f64,
    pub emergency: f64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.coverage + self.input + self.slack + self.emergency
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub inputs: Vec<Vec2>,
    /// Predicted states `x^1..x^T`.
    pub states: Vec<DVector<f64>>,
    /// `slacks[h][k]`: relaxation of human `h`'s constraint at step `k`.
    pub slacks: Vec<Vec<f64>>,
    pub emergency_slack: f64,
    pub cost: CostTerms,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl MpcSolution {
    /// Inputs advanced one step, last input repeated.
    pub fn shifted_inputs(&self) -> Vec<Vec2> {
        let mut v: Vec<Vec2> = self.inputs.iter().skip(1).copied().collect();
        if let Some(last) = self.inputs.last() {
            v.push(*last);
        }
        v
    }

    pub fn planned_positions(&self, model: DynamicsModel) -> Vec<Vec2> {
        self.states.iter().map(|x| model.position_of(x)).collect()
    }

    pub fn diagnostics(&self) -> SolveDiagnostics {
        SolveDiagnostics {
            iterations: self.iterations,
            kkt_residual: self.kkt_residual,
            cost: self.cost,
            status: self.status,
            emergency_slack: self.emergency_slack,
        }
    }
}

/// Per-step quadratic `c0 − 2 S·p + M‖p‖²` summed over the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageCost {
    pub mass: f64,
    pub first_moment: Vec2,
    pub constant: f64,
    pub steps: usize,
}

impl CoverageCost {
    /// Hessian of one step's term with respect to `p` is `2M·I`.
    pub fn hessian_scale(&self) -> f64 {
        2.0 * self.mass
    }

    pub fn linear_term(&self) -> Vec2 {
        -2.0 * self.first_moment
    }

    pub fn step_value(&self, p: &Vec2) -> f64 {
        self.constant - 2.0 * self.first_moment.dot(p) + self.mass * p.norm_squared()
    }

    pub fn value(&self, positions: &[Vec2]) -> f64 {
        positions.iter().map(|p| self.step_value(p)).sum()
    }

    /// Same minimizer with unit mass: `‖p − C‖²` plus a constant.
    pub fn normalized(&self) -> Self {
        if self.mass <= 0.0 {
            return *self;
        }
        Self {
            mass: 1.0,
            first_moment: self.first_moment / self.mass,
            constant: self.constant / self.mass,
            steps: self.steps,
        }
    }
}

/// Coverage cost over a horizon of `steps` positions; zero for empty cells.
pub fn coverage_cost_terms(moments: &CellMoments, steps: usize) -> CoverageCost {
    if moments.empty {
        CoverageCost {
            mass: 0.0,
            first_moment: Vec2::zeros(),
            constant: 0.0,
            steps,
        }
    } else {
        CoverageCost {
            mass: moments.mass,
            first_moment: moments.first_moment,
            constant: moments.second_moment,
            steps,
        }
    }
}

fn coverage_term(moments: &CellMoments, steps: usize, cfg: &MpcConfig) -> CoverageCost {
    let c = coverage_cost_terms(moments, steps);
    if cfg.normalize_coverage {
        c.normalized()
    } else {
        c
    }
}

/// Right-hand side of the Gaussian chance constraint on `d_M²`.
///
/// Non-positive values mean the constraint is vacuous.
pub fn chance_constraint_rhs(covariance: &Matrix2<f64>, alpha: f64, safety_distance: f64) -> f64 {
    let det = (std::f64::consts::TAU * covariance).determinant();
    -2.0 * (det.sqrt() * alpha / (std::f64::consts::PI * safety_distance * safety_distance)).ln()
}

pub fn mahalanobis_sq(p: &Vec2, mean: &Vec2, covariance: &Matrix2<f64>) -> f64 {
    let d = p - mean;
    let inv = covariance.try_inverse().unwrap_or_else(Matrix2::zeros);
    d.dot(&(inv * d))
}

/// Problem data for one robot at one control step.
#[derive(Debug, Clone, Copy)]
pub struct MpcInputs<'a> {
    pub x0: &'a DVector<f64>,
    pub model: DynamicsModel,
    pub moments: &'a CellMoments,
    pub obstacles: &'a [Obstacle],
    pub neighbors: &'a [Vec2],
    pub predictions: &'a [HumanPrediction],
    pub position_bounds: Aabb,
}

/// Index bookkeeping for the QP variables `[u | δ | ε]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub inputs: usize,
    /// (human, step, variable index) of every active human slack.
    pub human_slacks: Vec<(usize, usize, usize)>,
    pub emergency: std::ops::Range<usize>,
}

/// Convex subproblem linearized about a nominal input sequence.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub qp: QpProblem,
    pub layout: VariableLayout,
    pub nominal_inputs: Vec<Vec2>,
    pub nominal_states: Vec<DVector<f64>>,
    /// Affine position maps `p^{k+1} ≈ offset_k + sens_k · U`.
    pub position_offsets: Vec<Vec2>,
    pub position_sensitivities: Vec<DMatrix<f64>>,
}

pub fn rollout(
    model: DynamicsModel,
    x0: &DVector<f64>,
    inputs: &[Vec2],
    dt: f64,
) -> Vec<DVector<f64>> {
    let mut x = x0.clone();
    inputs
        .iter()
        .map(|u| {
            x = model.step(&x, u, dt);
            x.clone()
        })
        .collect()
}

fn clamp_input(u: &Vec2, lo: &Vec2, hi: &Vec2) -> Vec2 {
    Vec2::new(u.x.clamp(lo.x, hi.x), u.y.clamp(lo.y, hi.y))
}

/// Unit-ish direction for linearizing a distance about a degenerate point.
fn safe_direction(d: Vec2, fallback: Vec2) -> Vec2 {
    if d.norm() > 1e-9 {
        d
    } else if fallback.norm() > 1e-9 {
        fallback.normalize() * 1e-9
    } else {
        Vec2::new(1e-9, 0.0)
    }
}

struct RowBuilder<'a> {
    qp: &'a mut QpProblem,
    nu: usize,
}

impl RowBuilder<'_> {
    /// Adds `grad · p^{k+1}(U) − slack ≥ rhs` as a `≤` row.
    fn lower_bound_on_position(
        &mut self,
        grad: &Vec2,
        sens: &DMatrix<f64>,
        offset: &Vec2,
        rhs: f64,
        slack: Option<usize>,
    ) {
        let mut coeffs: Vec<(usize, f64)> = (0..self.nu)
            .filter_map(|j| {
                let c = -(grad.x * sens[(0, j)] + grad.y * sens[(1, j)]);
                (c != 0.0).then_some((j, c))
            })
            .collect();
        if let Some(s) = slack {
            coeffs.push((s, -1.0));
        }
        self.qp.push(coeffs, grad.dot(offset) - rhs);
    }
}

/// Linearizes the problem about `nominal` and assembles the QP.
pub fn build_problem(inputs: &MpcInputs<'_>, nominal: &[Vec2], cfg: &MpcConfig) -> Subproblem {
    let t = cfg.horizon;
    let model = inputs.model;
    let n = model.state_dim();
    let nu = INPUT_DIM * t;
    let dt = cfg.dt;
    let mut nominal: Vec<Vec2> = nominal.to_vec();
    nominal.resize(t, nominal.last().copied().unwrap_or_else(Vec2::zeros));

    let states = rollout(model, inputs.x0, &nominal, dt);
    let u_bar = DVector::from_iterator(nu, nominal.iter().flat_map(|u| [u.x, u.y]));

    // state sensitivities x^{k+1} − x̄^{k+1} ≈ G_{k+1} (U − Ū)
    let mut g = DMatrix::<f64>::zeros(n, nu);
    let mut sens = Vec::with_capacity(t);
    let mut vel_sens = Vec::new();
    let mut offsets = Vec::with_capacity(t);
    let mut vel_offsets = Vec::new();
    let mut x_prev = inputs.x0.clone();
    for k in 0..t {
        let lin = model.linearize(&x_prev, &nominal[k], dt);
        g = &lin.a * &g;
        for r in 0..n {
            for c in 0..INPUT_DIM {
                g[(r, INPUT_DIM * k + c)] += lin.b[(r, c)];
            }
        }
        let s = g.rows(0, 2).into_owned();
        let p_bar = model.position_of(&states[k]);
        let su = &s * &u_bar;
        offsets.push(p_bar - Vec2::new(su[0], su[1]));
        sens.push(s);
        if let Some(v_bar) = model.velocity_of(&states[k]) {
            let s = g.rows(2, 2).into_owned();
            let su = &s * &u_bar;
            vel_offsets.push(v_bar - Vec2::new(su[0], su[1]));
            vel_sens.push(s);
        }
        x_prev = states[k].clone();
    }

    // which human constraints are active, and their slack indices
    let mut human_slacks = Vec::new();
    let mut next = nu;
    let mut human_rows = Vec::new();
    for (h, pred) in inputs.predictions.iter().enumerate() {
        if pred.horizon() == 0 {
            continue;
        }
        for k in 0..t {
            let idx = k.min(pred.horizon() - 1);
            let rhs = chance_constraint_rhs(&pred.covariances[idx], cfg.alpha, cfg.safety_distance);
            if rhs > 0.0 {
                human_slacks.push((h, k, next));
                human_rows.push((h, k, idx, rhs, next));
                next += 1;
            }
        }
    }
    let n_emergency_obstacles = (inputs.obstacles.len()
        + if cfg.avoid_neighbors {
            inputs.neighbors.len()
        } else {
            0
        })
        * t;
    let n_emergency_box = 4 * t
        + if vel_sens.is_empty() || cfg.speed_limit.is_none() {
            0
        } else {
            4 * t
        };
    let emergency = next..next + n_emergency_obstacles + n_emergency_box;
    let nvar = emergency.end;

    let mut qp = QpProblem::new(nvar);

    // coverage
    let cov = coverage_term(inputs.moments, t, cfg);
    if cov.mass > 0.0 {
        for k in 0..t {
            let s = &sens[k];
            let h = s.transpose() * s * cov.hessian_scale();
            let mut sub = qp.hessian.view_mut((0, 0), (nu, nu));
            sub += &h;
            let lin = offsets[k] * cov.hessian_scale() + cov.linear_term();
            let grad = s.transpose() * DVector::from_vec(vec![lin.x, lin.y]);
            let mut gsub = qp.gradient.rows_mut(0, nu);
            gsub += &grad;
        }
    }
    // input effort
    let r = 0.5 * (cfg.input_cost + cfg.input_cost.transpose());
    for k in 0..t {
        for a in 0..2 {
            for b in 0..2 {
                qp.hessian[(2 * k + a, 2 * k + b)] += 2.0 * r[(a, b)];
            }
        }
    }
    for &(_, k, _, _, var) in &human_rows {
        qp.gradient[var] = cfg.slack_weight_at(k);
    }
    // L1 + L2 so that symmetric infeasibility has a unique, central minimizer
    for var in emergency.clone() {
        qp.gradient[var] = cfg.emergency_weight();
        qp.hessian[(var, var)] = 2.0 * cfg.emergency_weight();
    }

    // input bounds, tightened by the trust region for nonlinear models
    for (k, u) in nominal.iter().enumerate() {
        let (mut lo, mut hi) = (cfg.u_min, cfg.u_max);
        if !model.is_linear() {
            lo = lo.sup(&(u - cfg.trust_region));
            hi = hi.inf(&(u + cfg.trust_region));
        }
        for c in 0..2 {
            qp.push(vec![(2 * k + c, 1.0)], hi[c]);
            qp.push(vec![(2 * k + c, -1.0)], -lo[c]);
        }
    }
    for var in nu..nvar {
        qp.push(vec![(var, -1.0)], 0.0);
    }

    let p0 = model.position_of(inputs.x0);
    let mut eps = emergency.clone();
    let mut rows = RowBuilder { qp: &mut qp, nu };

    // obstacle and neighbor keep-out, linearized squared distance
    let mut discs: Vec<(Vec2, f64)> = inputs
        .obstacles
        .iter()
        .map(|o| (o.center, cfg.safety_distance + o.radius))
        .collect();
    if cfg.avoid_neighbors {
        discs.extend(inputs.neighbors.iter().map(|q| (*q, cfg.safety_distance)));
    }
    for (center, clearance) in &discs {
        for k in 0..t {
            let p_bar = model.position_of(&states[k]);
            let d = safe_direction(p_bar - center, p0 - center);
            let g_bar = (p_bar - center).norm_squared() - clearance * clearance;
            let grad = 2.0 * d;
            // g_bar + grad·(p − p̄) ≥ 0
            let rhs = grad.dot(&p_bar) - g_bar;
            rows.lower_bound_on_position(&grad, &sens[k], &offsets[k], rhs, eps.next());
        }
    }

    // admissible position box
    let bx = inputs.position_bounds;
    for k in 0..t {
        for axis in 0..2 {
            let mut e = Vec2::zeros();
            e[axis] = 1.0;
            rows.lower_bound_on_position(&e, &sens[k], &offsets[k], bx.min[axis], eps.next());
            rows.lower_bound_on_position(&-e, &sens[k], &offsets[k], -bx.max[axis], eps.next());
        }
    }
    if let (Some(limit), false) = (cfg.speed_limit, vel_sens.is_empty()) {
        for k in 0..t {
            for axis in 0..2 {
                let mut e = Vec2::zeros();
                e[axis] = 1.0;
                rows.lower_bound_on_position(&e, &vel_sens[k], &vel_offsets[k], -limit, eps.next());
                rows.lower_bound_on_position(
                    &-e,
                    &vel_sens[k],
                    &vel_offsets[k],
                    -limit,
                    eps.next(),
                );
            }
        }
    }
    debug_assert!(eps.next().is_none());

    // human chance constraints: d̄ + ∇d·(p − p̄) ≥ rhs − δ
    for &(h, k, idx, rhs, var) in &human_rows {
        let pred = &inputs.predictions[h];
        let mu = pred.means[idx];
        let inv = pred.covariances[idx]
            .try_inverse()
            .unwrap_or_else(Matrix2::zeros);
        let p_bar = model.position_of(&states[k]);
        let d = safe_direction(p_bar - mu, p0 - mu);
        let d_bar = mahalanobis_sq(&p_bar, &mu, &pred.covariances[idx]);
        let grad = 2.0 * inv * d;
        rows.lower_bound_on_position(
            &grad,
            &sens[k],
            &offsets[k],
            rhs - d_bar + grad.dot(&p_bar),
            Some(var),
        );
    }

    Subproblem {
        qp,
        layout: VariableLayout {
            inputs: nu,
            human_slacks,
            emergency,
        },
        nominal_inputs: nominal,
        nominal_states: states,
        position_offsets: offsets,
        position_sensitivities: sens,
    }
}

/// True cost of an input sequence, with constraint violations priced at the
/// slack weights.
pub fn evaluate(
    inputs: &MpcInputs<'_>,
    u: &[Vec2],
    cfg: &MpcConfig,
) -> (CostTerms, Vec<DVector<f64>>) {
    let model = inputs.model;
    let states = rollout(model, inputs.x0, u, cfg.dt);
    let positions: Vec<Vec2> = states.iter().map(|x| model.position_of(x)).collect();
    let cov = coverage_term(inputs.moments, cfg.horizon, cfg);
    let coverage = if cov.mass > 0.0 {
        cov.value(&positions)
    } else {
        0.0
    };
    let input = u.iter().map(|v| v.dot(&(cfg.input_cost * v))).sum();
    let mut slack = 0.0;
    for pred in inputs.predictions {
        if pred.horizon() == 0 {
            continue;
        }
        for (k, p) in positions.iter().enumerate() {
            let idx = k.min(pred.horizon() - 1);
            let rhs = chance_constraint_rhs(&pred.covariances[idx], cfg.alpha, cfg.safety_distance);
            if rhs > 0.0 {
                let viol = rhs - mahalanobis_sq(p, &pred.means[idx], &pred.covariances[idx]);
                slack += cfg.slack_weight_at(k) * viol.max(0.0);
            }
        }
    }
    let mut viol = Vec::new();
    let clear = |c: &Vec2, r: f64, p: &Vec2| r * r - (p - c).norm_squared();
    for p in &positions {
        for o in inputs.obstacles {
            viol.push(clear(&o.center, cfg.safety_distance + o.radius, p));
        }
        if cfg.avoid_neighbors {
            for q in inputs.neighbors {
                viol.push(clear(q, cfg.safety_distance, p));
            }
        }
        let b = inputs.position_bounds;
        for axis in 0..2 {
            viol.push(b.min[axis] - p[axis]);
            viol.push(p[axis] - b.max[axis]);
        }
    }
    if let Some(limit) = cfg.speed_limit {
        for x in &states {
            if let Some(v) = model.velocity_of(x) {
                viol.extend([v.x.abs() - limit, v.y.abs() - limit]);
            }
        }
    }
    let emergency: f64 = viol.iter().map(|v| v.max(0.0)).map(|v| v + v * v).sum();
    (
        CostTerms {
            coverage,
            input,
            slack,
            emergency: cfg.emergency_weight() * emergency,
        },
        states,
    )
}

/// Nominal inputs that steer a unicycle toward the cell centroid with a
/// heading P-controller. Linearizing about a moving, turning nominal lets the
/// first subproblem see the effect of the angular rate, which is invisible
/// about a standstill.
pub fn pursuit_nominal(inputs: &MpcInputs<'_>, cfg: &MpcConfig) -> Option<Vec<Vec2>> {
    if inputs.model != DynamicsModel::Unicycle || inputs.moments.empty {
        return None;
    }
    Some(steer_toward(inputs, cfg, &inputs.moments.centroid))
}

/// Roll-out of a simple tracking law heading for `goal`: full speed for the
/// single integrator, velocity tracking for the double integrator, heading
/// P-control for the unicycle.
pub fn steer_toward(inputs: &MpcInputs<'_>, cfg: &MpcConfig, goal: &Vec2) -> Vec<Vec2> {
    let model = inputs.model;
    let speed = cfg
        .u_max
        .x
        .abs()
        .min(cfg.u_max.y.abs())
        .min(cfg.u_min.x.abs())
        .min(cfg.u_min.y.abs());
    let mut x = inputs.x0.clone();
    let mut out = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        let d = goal - model.position_of(&x);
        let dir = if d.norm() > 1e-12 {
            d / d.norm()
        } else {
            Vec2::zeros()
        };
        let raw = match model {
            DynamicsModel::SingleIntegrator => dir * speed,
            DynamicsModel::DoubleIntegrator => {
                let target = dir * cfg.speed_limit.unwrap_or(1.0).min(d.norm());
                (target - model.velocity_of(&x).unwrap_or_default()) / cfg.dt
            }
            DynamicsModel::Unicycle => {
                let err = crate::dynamics::wrap_angle(d.y.atan2(d.x) - x[2]);
                Vec2::new((cfg.k_gain * d.norm() * err.cos()).max(0.0), 2.0 * err)
            }
        };
        let u = clamp_input(&raw, &cfg.u_min, &cfg.u_max);
        x = model.step(&x, &u, cfg.dt);
        out.push(u);
    }
    out
}

/// Rotations of the centroid direction tried when the robot is blocked.
const DETOUR_ANGLES: [f64; 4] = [
    std::f64::consts::FRAC_PI_4,
    -std::f64::consts::FRAC_PI_4,
    std::f64::consts::FRAC_PI_2,
    -std::f64::consts::FRAC_PI_2,
];

/// Goals to the side of the centroid, for robots whose best plan is
/// feasible but makes little progress while an obstacle or neighbor is
/// within reach.
fn detour_goals(inputs: &MpcInputs<'_>, cfg: &MpcConfig, best: &MpcSolution) -> Vec<Vec2> {
    if !cfg.detour_starts || inputs.moments.empty || best.emergency_slack > EMERGENCY_TOLERANCE {
        return Vec::new();
    }
    let model = inputs.model;
    let p0 = model.position_of(inputs.x0);
    let to_c = inputs.moments.centroid - p0;
    let reach = cfg.horizon as f64 * cfg.dt * cfg.u_max.amax().max(cfg.u_min.amax());
    let wanted = to_c.norm().min(reach);
    if wanted < 0.1 * reach {
        return Vec::new();
    }
    let end = best
        .states
        .last()
        .map(|x| model.position_of(x))
        .unwrap_or(p0);
    if (end - p0).dot(&to_c) / to_c.norm() > 0.5 * wanted {
        return Vec::new();
    }
    let near = |c: &Vec2, clearance: f64| (c - p0).norm() <= clearance + reach;
    let blocked = inputs
        .obstacles
        .iter()
        .any(|o| near(&o.center, cfg.safety_distance + o.radius))
        || (cfg.avoid_neighbors
            && inputs
                .neighbors
                .iter()
                .any(|q| near(q, cfg.safety_distance)));
    if !blocked {
        return Vec::new();
    }
    let dir = to_c / to_c.norm() * reach.max(to_c.norm());
    DETOUR_ANGLES
        .iter()
        .map(|a| p0 + nalgebra::Rotation2::new(*a) * dir)
        .collect()
}

struct SqpRun {
    best: Option<(f64, MpcSolution)>,
    converged: bool,
    iterations: usize,
}

fn sqp(inputs: &MpcInputs<'_>, mut nominal: Vec<Vec2>, cfg: &MpcConfig, exact: bool) -> SqpRun {
    let t = cfg.horizon;
    let mut run = SqpRun {
        best: None,
        converged: false,
        iterations: 0,
    };
    for _ in 0..cfg.sqp_iters {
        let sub = build_problem(inputs, &nominal, cfg);
        let sol = match sub.qp.solve() {
            Ok(s) => s,
            Err(e) => {
                log::warn!("QP subproblem failed: {e}");
                break;
            }
        };
        run.iterations += 1;
        let u: Vec<Vec2> = (0..t)
            .map(|k| {
                clamp_input(
                    &Vec2::new(sol.x[2 * k], sol.x[2 * k + 1]),
                    &cfg.u_min,
                    &cfg.u_max,
                )
            })
            .collect();
        let (cost, states) = evaluate(inputs, &u, cfg);
        let mut slacks = vec![vec![0.0; t]; inputs.predictions.len()];
        for &(h, k, var) in &sub.layout.human_slacks {
            slacks[h][k] = sol.x[var].max(0.0);
        }
        let emergency_slack = sub
            .layout
            .emergency
            .clone()
            .map(|i| sol.x[i])
            .fold(0.0, f64::max);
        let step = u
            .iter()
            .zip(&nominal)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let merit = cost.total();
        if run.best.as_ref().is_none_or(|(m, _)| merit <= *m) {
            run.best = Some((
                merit,
                MpcSolution {
                    inputs: u.clone(),
                    states,
                    slacks,
                    emergency_slack,
                    cost,
                    status: SolveStatus::MaxIters,
                    iterations: 0,
                    kkt_residual: sol.kkt_residual,
                },
            ));
        }
        nominal = u;
        if exact || step <= cfg.sqp_tol {
            run.converged = true;
            break;
        }
    }
    run
}

/// Successive-linearization solve. `warm` is the nominal input sequence to
/// start from (already time-shifted by the caller); zero inputs otherwise.
/// Unicycles additionally start a second pass from [`pursuit_nominal`], and a
/// blocked robot tries passes heading to either side of its centroid; the
/// iterate with the lowest true cost wins.
pub fn solve(inputs: &MpcInputs<'_>, warm: Option<&[Vec2]>, cfg: &MpcConfig) -> MpcSolution {
    let t = cfg.horizon;
    let mut nominal: Vec<Vec2> = match warm {
        Some(w) if !w.is_empty() => w
            .iter()
            .map(|u| clamp_input(u, &cfg.u_min, &cfg.u_max))
            .collect(),
        _ => vec![clamp_input(&Vec2::zeros(), &cfg.u_min, &cfg.u_max); t],
    };
    nominal.resize(t, *nominal.last().expect("horizon ≥ 1"));

    let exact = inputs.model.is_linear()
        && inputs.obstacles.is_empty()
        && inputs.predictions.is_empty()
        && (!cfg.avoid_neighbors || inputs.neighbors.is_empty());

    // Nothing to cover and nothing to avoid: holding still is optimal.
    let zero = clamp_input(&Vec2::zeros(), &cfg.u_min, &cfg.u_max);
    if exact
        && inputs.moments.empty
        && inputs.model == DynamicsModel::SingleIntegrator
        && zero == Vec2::zeros()
    {
        let u = vec![zero; t];
        let (cost, states) = evaluate(inputs, &u, cfg);
        return MpcSolution {
            inputs: u,
            states,
            slacks: Vec::new(),
            emergency_slack: 0.0,
            cost,
            status: SolveStatus::Solved,
            iterations: 0,
            kkt_residual: 0.0,
        };
    }

    let mut runs = vec![sqp(inputs, nominal, cfg, exact)];
    if let Some(p) = pursuit_nominal(inputs, cfg) {
        runs.push(sqp(inputs, p, cfg, exact));
    }
    let incumbent = runs
        .iter()
        .filter_map(|r| r.best.as_ref())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s);
    if let Some(best) = incumbent {
        for goal in detour_goals(inputs, cfg, best) {
            runs.push(sqp(inputs, steer_toward(inputs, cfg, &goal), cfg, false));
        }
    }
    let iterations: usize = runs.iter().map(|r| r.iterations).sum();
    let chosen = runs
        .into_iter()
        .filter(|r| r.best.is_some())
        .min_by(|a, b| {
            a.best
                .as_ref()
                .unwrap()
                .0
                .total_cmp(&b.best.as_ref().unwrap().0)
        });

    match chosen {
        Some(SqpRun {
            best: Some((_, mut s)),
            converged,
            ..
        }) => {
            s.iterations = iterations;
            s.status = if s.emergency_slack > EMERGENCY_TOLERANCE {
                SolveStatus::Degraded
            } else if converged {
                SolveStatus::Solved
            } else {
                SolveStatus::MaxIters
            };
            s
        }
        _ => {
            log::warn!("falling back to zero input");
            let u = vec![Vec2::zeros(); t];
            let (cost, states) = evaluate(inputs, &u, cfg);
            MpcSolution {
                inputs: u,
                states,
                slacks: vec![vec![0.0; t]; inputs.predictions.len()],
                emergency_slack: f64::INFINITY,
                cost,
                status: SolveStatus::Degraded,
                iterations,
                kkt_residual: f64::INFINITY,
            }
        }
    }
}

/// Position box for a robot: explicit bounds, or the boundary's bounding box
/// shrunk by the configured margin.
pub fn position_bounds(cfg: &MpcConfig, boundary: &crate::geometry::Polygon) -> Aabb {
    cfg.position_bounds
        .unwrap_or_else(|| boundary.aabb().shrink(cfg.position_margin))
}

/// Per-robot controller with a private warm-start cache.
pub struct HmpccController {
    model: DynamicsModel,
    cfg: MpcConfig,
    predictor: Arc<dyn HumanPredictor>,
    warm: Option<Vec<Vec2>>,
    last: Option<MpcSolution>,
}

impl HmpccController {
    pub fn new(model: DynamicsModel, cfg: MpcConfig, predictor: Arc<dyn HumanPredictor>) -> Self {
        Self {
            model,
            cfg,
            predictor,
            warm: None,
            last: None,
        }
    }

    pub fn last_solution(&self) -> Option<&MpcSolution> {
        self.last.as_ref()
    }

    /// Cell, moments, predictions, solve; returns the first input.
    pub fn control_step(&mut self, view: &RobotView<'_>) -> MpcSolution {
        let p = view.position();
        let cell = limited_voronoi_cell(
            &p,
            &view.neighbors,
            view.boundary,
            0.5 * view.sensing_range,
            self.cfg.ball_sides,
        );
        let moments = cell_moments(&cell, view.density, self.cfg.grid_res);
        let predictions: Vec<HumanPrediction> = view
            .humans
            .iter()
            .map(|h| self.predictor.predict(h, self.cfg.horizon, self.cfg.dt))
            .collect();
        let inputs = MpcInputs {
            x0: &view.state,
            model: self.model,
            moments: &moments,
            obstacles: &view.obstacles,
            neighbors: &view.neighbors,
            predictions: &predictions,
            position_bounds: position_bounds(&self.cfg, view.boundary),
        };
        let sol = solve(&inputs, self.warm.as_deref(), &self.cfg);
        self.warm = Some(sol.shifted_inputs());
        self.last = Some(sol.clone());
        sol
    }
}

impl Controller for HmpccController {
    fn name(&self) -> &str {
        "hmpcc"
    }

    fn control(&mut self, view: &RobotView<'_>) -> Result<ControlOutput, ControlError> {
        let sol = self.control_step(view);
        if sol.kkt_residual.is_infinite() {
            self.warm = None;
        }
        Ok(ControlOutput {
            input: sol.inputs[0],
            planned: sol.planned_positions(self.model),
            diagnostics: Some(sol.diagnostics()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{GaussianComponent, GaussianMixture};
    use crate::geometry::{cell_quadratic_cost, Polygon, VoronoiCell};
    use approx::assert_relative_eq;

    fn arena() -> Polygon {
        Polygon::rectangle(&Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0)))
    }

    fn moments_at(center: Vec2, owner: Vec2, sigma: f64) -> CellMoments {
        let phi = GaussianMixture::new(vec![
            GaussianComponent::isotropic(1.0, center, sigma).unwrap()
        ])
        .unwrap();
        let cell = limited_voronoi_cell(&owner, &[], &arena(), 2.5, 32);
        cell_moments(&cell, &phi, 0.05)
    }

    fn free_inputs<'a>(
        x0: &'a DVector<f64>,
        m: &'a CellMoments,
        model: DynamicsModel,
    ) -> MpcInputs<'a> {
        MpcInputs {
            x0,
            model,
            moments: m,
            obstacles: &[],
            neighbors: &[],
            predictions: &[],
            position_bounds: Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0)),
        }
    }

    #[test]
    fn rhs_reference_value() {
        let rhs = chance_constraint_rhs(&(Matrix2::identity() * 0.01), 0.1, 0.5);
        // sqrt(det(2πΣ)) = 2π·0.01; ·0.1/(π·0.25) = 0.008
        assert_relative_eq!(rhs, -2.0 * 0.008f64.ln(), max_relative = 1e-12);
        assert!((rhs - 9.6566).abs() < 1e-3);
    }

    #[test]
    fn rhs_alpha_doubling_and_vacuity() {
        let s = Matrix2::new(0.03, 0.01, 0.01, 0.02);
        let a = chance_constraint_rhs(&s, 0.1, 0.5);
        let b = chance_constraint_rhs(&s, 0.2, 0.5);
        assert_relative_eq!(a - b, 2.0 * 2f64.ln(), epsilon = 1e-12);
        let mut prev = f64::INFINITY;
        for scale in [0.01, 0.1, 1.0, 10.0] {
            let r = chance_constraint_rhs(&(Matrix2::identity() * scale), 0.1, 0.5);
            assert!(r < prev);
            prev = r;
        }
        assert!(prev <= 0.0);
    }

    #[test]
    fn mahalanobis_examples() {
        let p = Vec2::new(3.0, 4.0);
        assert_relative_eq!(
            mahalanobis_sq(&p, &Vec2::zeros(), &Matrix2::identity()),
            25.0
        );
        assert_eq!(mahalanobis_sq(&p, &p, &Matrix2::identity()), 0.0);
        assert_relative_eq!(
            mahalanobis_sq(
                &Vec2::new(2.0, 0.0),
                &Vec2::zeros(),
                &Matrix2::new(4.0, 0.0, 0.0, 1.0)
            ),
            1.0
        );
    }

    #[test]
    fn coverage_minimum_at_centroid_and_plug_in() {
        let m = moments_at(Vec2::new(5.0, 5.0), Vec2::new(5.5, 4.5), 0.8);
        let c = coverage_cost_terms(&m, 4);
        let at_c = c.value(&[m.centroid; 4]);
        assert_relative_eq!(
            at_c,
            4.0 * (m.second_moment - m.mass * m.centroid.norm_squared()),
            max_relative = 1e-9
        );
        assert!(c.value(&[m.centroid + Vec2::new(0.1, 0.0); 4]) > at_c);

        let unit = CellMoments {
            mass: 1.0,
            first_moment: Vec2::new(0.5, 0.5),
            second_moment: 2.0 / 3.0,
            centroid: Vec2::new(0.5, 0.5),
            empty: false,
        };
        assert_eq!(
            coverage_cost_terms(&unit, 1).value(&[Vec2::zeros()]),
            2.0 / 3.0
        );
    }

    #[test]
    fn empty_cell_has_no_coverage_cost() {
        let m = moments_at(Vec2::new(100.0, 100.0), Vec2::new(5.0, 5.0), 0.2);
        assert!(m.empty);
        let c = coverage_cost_terms(&m, 10);
        assert_eq!(c.value(&[Vec2::new(1.0, 2.0)]), 0.0);
    }

    #[test]
    fn moment_form_matches_direct_quadrature() {
        let phi = GaussianMixture::random(
            3,
            3,
            &Aabb::new(Vec2::new(2.0, 2.0), Vec2::new(8.0, 8.0)),
            (0.5, 1.5),
        );
        let cell: VoronoiCell = limited_voronoi_cell(
            &Vec2::new(4.0, 5.0),
            &[Vec2::new(6.0, 6.0)],
            &arena(),
            2.0,
            32,
        );
        let m = cell_moments(&cell, &phi, 0.1);
        let p = Vec2::new(3.3, 6.1);
        let direct = cell_quadratic_cost(&cell, &phi, 0.1, &p);
        assert_relative_eq!(
            coverage_cost_terms(&m, 1).step_value(&p),
            direct,
            max_relative = 1e-9
        );
    }

    #[test]
    fn slack_weights_decay_to_omega_over_t() {
        let cfg = MpcConfig::default();
        for k in 1..cfg.horizon {
            assert!(cfg.slack_weight_at(k) < cfg.slack_weight_at(k - 1));
        }
        assert_relative_eq!(
            cfg.slack_weight_at(cfg.horizon - 1),
            cfg.slack_weight / cfg.horizon as f64,
            epsilon = 1e-12
        );
    }

    #[test]
    fn free_single_integrator_heads_to_centroid() {
        let m = moments_at(Vec2::new(6.0, 5.5), Vec2::new(5.0, 5.0), 0.7);
        let x0 = DVector::from_vec(vec![5.0, 5.0]);
        let cfg = MpcConfig {
            input_cost: Matrix2::identity() * 1e-6,
            u_min: Vec2::new(-100.0, -100.0),
            u_max: Vec2::new(100.0, 100.0),
            ..MpcConfig::default()
        };
        let sol = solve(
            &free_inputs(&x0, &m, DynamicsModel::SingleIntegrator),
            None,
            &cfg,
        );
        assert_eq!(sol.status, SolveStatus::Solved);
        let dir = m.centroid - Vec2::new(5.0, 5.0);
        let cos = sol.inputs[0].dot(&dir) / (sol.inputs[0].norm() * dir.norm());
        assert!(cos >= 0.999, "cos {cos}");
        // with a negligible input cost the first step lands on the centroid
        let p1 = DynamicsModel::SingleIntegrator.position_of(&sol.states[0]);
        assert!((p1 - m.centroid).norm() < 1e-3);
    }

    #[test]
    fn at_centroid_input_vanishes() {
        let m = moments_at(Vec2::new(5.0, 5.0), Vec2::new(5.0, 5.0), 0.7);
        let x0 = DVector::from_vec(vec![m.centroid.x, m.centroid.y]);
        let sol = solve(
            &free_inputs(&x0, &m, DynamicsModel::SingleIntegrator),
            None,
            &MpcConfig::default(),
        );
        assert!(sol.inputs[0].norm() <= 1e-6, "{}", sol.inputs[0].norm());
    }

    #[test]
    fn vacuous_human_constraint_changes_nothing() {
        let m = moments_at(Vec2::new(6.0, 5.0), Vec2::new(5.0, 5.0), 0.7);
        let x0 = DVector::from_vec(vec![5.0, 5.0]);
        let huge = HumanPrediction {
            means: vec![Vec2::new(5.5, 5.0); 10],
            covariances: vec![Matrix2::identity() * 10.0; 10],
        };
        assert!(chance_constraint_rhs(&huge.covariances[0], 0.1, 0.5) <= 0.0);
        let cfg = MpcConfig::default();
        let base = solve(
            &free_inputs(&x0, &m, DynamicsModel::SingleIntegrator),
            None,
            &cfg,
        );
        let preds = [huge];
        let with = solve(
            &MpcInputs {
                predictions: &preds,
                ..free_inputs(&x0, &m, DynamicsModel::SingleIntegrator)
            },
            None,
            &cfg,
        );
        for (a, b) in base.inputs.iter().zip(&with.inputs) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn obstacle_on_the_way_deflects_first_input() {
        let owner = Vec2::new(3.0, 5.0);
        let m = moments_at(Vec2::new(5.0, 5.0), owner, 0.6);
        let x0 = DVector::from_vec(vec![owner.x, owner.y]);
        // slightly off the straight line so the side to pass on is defined
        let obstacles = [Obstacle::new(Vec2::new(3.4, 4.95), 0.1)];
        let inputs = MpcInputs {
            obstacles: &obstacles,
            ..free_inputs(&x0, &m, DynamicsModel::SingleIntegrator)
        };
        let sol = solve(&inputs, None, &MpcConfig::default());
        let normal = (owner - obstacles[0].center).normalize();
        assert!(sol.inputs[0].dot(&normal) >= -1e-9);
        let lateral = Vec2::new(-normal.y, normal.x);
        assert!(sol.inputs[0].dot(&lateral).abs() > 1e-3);
    }

    #[test]
    fn boxed_in_robot_is_degraded_and_holds() {
        let owner = Vec2::new(5.0, 5.0);
        let m = moments_at(Vec2::new(7.0, 5.0), owner, 0.6);
        let x0 = DVector::from_vec(vec![owner.x, owner.y]);
        let obstacles: Vec<Obstacle> = (0..8)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 8.0;
                Obstacle::new(owner + Vec2::new(a.cos(), a.sin()) * 0.55, 0.1)
            })
            .collect();
        let inputs = MpcInputs {
            obstacles: &obstacles,
            ..free_inputs(&x0, &m, DynamicsModel::SingleIntegrator)
        };
        let sol = solve(&inputs, None, &MpcConfig::default());
        assert_eq!(sol.status, SolveStatus::Degraded);
        assert!(sol.emergency_slack > EMERGENCY_TOLERANCE);
        assert!(
            sol.inputs[0].norm() * 0.1 < 0.05,
            "moved {}",
            sol.inputs[0].norm() * 0.1
        );
    }

    #[test]
    fn normalized_cost_is_squared_distance_to_centroid() {
        let m = moments_at(Vec2::new(6.0, 5.5), Vec2::new(5.0, 5.0), 0.7);
        let c = coverage_cost_terms(&m, 1).normalized();
        let p = Vec2::new(4.2, 6.1);
        let offset = c.step_value(&m.centroid);
        assert_relative_eq!(
            c.step_value(&p) - offset,
            (p - m.centroid).norm_squared(),
            max_relative = 1e-9
        );
        assert!(offset >= -1e-12);
    }

    #[test]
    fn detour_leaves_a_pocket_between_obstacles() {
        let owner = Vec2::new(5.0 - 0.5f64.sqrt(), 6.0);
        let m = moments_at(Vec2::new(7.5, 6.5), owner, 0.6);
        let x0 = DVector::from_vec(vec![owner.x, owner.y]);
        let obstacles: Vec<Obstacle> = (0..8)
            .map(|i| Obstacle::new(Vec2::new(5.0, 4.25 + 0.5 * i as f64), 0.25))
            .collect();
        let inputs = MpcInputs {
            obstacles: &obstacles,
            ..free_inputs(&x0, &m, DynamicsModel::SingleIntegrator)
        };
        let plain = MpcConfig {
            detour_starts: false,
            ..MpcConfig::default()
        };
        let stuck = solve(&inputs, None, &plain);
        let free = solve(&inputs, None, &MpcConfig::default());
        assert!(stuck.inputs[0].norm() < 1e-3, "{}", stuck.inputs[0]);
        assert!(free.inputs[0].y > 0.1, "{}", free.inputs[0]);
        assert!(free.cost.total() < stuck.cost.total());
        assert!(free.emergency_slack <= EMERGENCY_TOLERANCE);
    }

    #[test]
    fn shifted_warm_start_repeats_last() {
        let s = MpcSolution {
            inputs: vec![
                Vec2::new(1.0, 0.0),
                Vec2::new(2.0, 0.0),
                Vec2::new(3.0, 0.0),
            ],
            states: vec![],
            slacks: vec![],
            emergency_slack: 0.0,
            cost: CostTerms::default(),
            status: SolveStatus::Solved,
            iterations: 1,
            kkt_residual: 0.0,
        };
        assert_eq!(
            s.shifted_inputs(),
            vec![
                Vec2::new(2.0, 0.0),
                Vec2::new(3.0, 0.0),
                Vec2::new(3.0, 0.0)
            ]
        );
    }

    #[test]
    fn config_validation() {
        assert!(MpcConfig::default().validate().is_ok());
        assert!(MpcConfig {
            alpha: 1.0,
            ..MpcConfig::default()
        }
        .validate()
        .is_err());
        assert!(MpcConfig {
            horizon: 0,
            ..MpcConfig::default()
        }
        .validate()
        .is_err());
        assert!(MpcConfig {
            u_min: Vec2::new(2.0, 0.0),
            ..MpcConfig::default()
        }
        .validate()
        .is_err());
    }
}
