//! Coverage metrics and aggregation over runs.
//!
//! All integrals use the same midpoint lattice as the controllers, so values
//! from different formulations agree to rounding.

use serde::{Deserialize, Serialize};

use crate::density::GaussianMixture;
use crate::geometry::{
    cell_moments, limited_voronoi_cell, separate_coincident, unlimited_voronoi_partition, Polygon,
    DEFAULT_BALL_SIDES,
};
use crate::sim::SimLog;
use crate::Vec2;

fn nearest_sq(q: &Vec2, positions: &[Vec2]) -> f64 {
    positions
        .iter()
        .map(|p| (q - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

/// `−∫_Q min_i ‖q − p_i‖² φ`.
pub fn coverage_h(
    positions: &[Vec2],
    boundary: &Polygon,
    phi: &GaussianMixture,
    grid_res: f64,
) -> f64 {
    if positions.is_empty() {
        return 0.0;
    }
    let area = grid_res * grid_res;
    let mut total = 0.0;
    boundary.for_each_lattice_point(grid_res, |q| {
        total += nearest_sq(&q, positions) * phi.eval(&q) * area;
    });
    -total
}

/// Same quantity as [`coverage_h`], summed cell by cell over the bounded
/// Voronoi partition. Lattice points on a shared edge (within 1e-9) go to
/// the lowest-index nearest site, so every point is counted once.
pub fn coverage_h_partition(
    positions: &[Vec2],
    boundary: &Polygon,
    phi: &GaussianMixture,
    grid_res: f64,
) -> f64 {
    let cells = unlimited_voronoi_partition(positions, boundary, 0);
    let sites: Vec<Vec2> = cells.iter().map(|c| c.owner).collect();
    let area = grid_res * grid_res;
    let mut total = 0.0;
    for (i, cell) in cells.iter().enumerate() {
        if cell.polygon.is_empty() {
            continue;
        }
        let bb = cell.polygon.aabb();
        let lattice = |lo: f64, hi: f64| {
            ((lo / grid_res - 0.5).floor() as i64)..=((hi / grid_res - 0.5).ceil() as i64)
        };
        for jy in lattice(bb.min.y, bb.max.y) {
            for ix in lattice(bb.min.x, bb.max.x) {
                let q = Vec2::new((ix as f64 + 0.5) * grid_res, (jy as f64 + 0.5) * grid_res);
                let inside =
                    cell.polygon.contains(&q) || cell.polygon.distance_to_boundary(&q) < 1e-9;
                if !inside || !boundary.contains(&q) {
                    continue;
                }
                let owner = (0..sites.len())
                    .min_by(|&a, &b| {
                        (q - sites[a])
                            .norm_squared()
                            .total_cmp(&(q - sites[b]).norm_squared())
                    })
                    .expect("non-empty");
                if owner == i {
                    total += (q - sites[i]).norm_squared() * phi.eval(&q) * area;
                }
            }
        }
    }
    -total
}

/// `−∫_Q min(min_i ‖q − p_i‖², r²) φ`.
pub fn coverage_hr(
    positions: &[Vec2],
    boundary: &Polygon,
    phi: &GaussianMixture,
    r: f64,
    grid_res: f64,
) -> f64 {
    let area = grid_res * grid_res;
    let cap = r * r;
    let mut total = 0.0;
    boundary.for_each_lattice_point(grid_res, |q| {
        total += nearest_sq(&q, positions).min(cap) * phi.eval(&q) * area;
    });
    -total
}

/// Fraction of the density mass inside the robots' limited-range cells.
pub fn coverage_e(
    positions: &[Vec2],
    boundary: &Polygon,
    phi: &GaussianMixture,
    r: f64,
    grid_res: f64,
) -> f64 {
    let area = grid_res * grid_res;
    let mut whole = 0.0;
    boundary.for_each_lattice_point(grid_res, |q| whole += phi.eval(&q) * area);
    if whole <= 0.0 || positions.is_empty() {
        return 0.0;
    }
    let sites = separate_coincident(positions, 0);
    let covered: f64 = sites
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let others: Vec<Vec2> = sites
                .iter()
                .enumerate()
                .filter(|&(j, q)| j != i && (q - p).norm() <= 2.0 * r)
                .map(|(_, q)| *q)
                .collect();
            let cell = limited_voronoi_cell(p, &others, boundary, r, DEFAULT_BALL_SIDES);
            cell_moments(&cell, phi, grid_res).mass
        })
        .sum();
    (covered / whole).clamp(0.0, 1.0)
}

/// One metric sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub h: f64,
    pub e: f64,
    pub hr: f64,
}

impl MetricSample {
    pub fn compute(
        positions: &[Vec2],
        boundary: &Polygon,
        phi: &GaussianMixture,
        r: f64,
        grid_res: f64,
    ) -> Self {
        Self {
            h: coverage_h(positions, boundary, phi, grid_res),
            e: coverage_e(positions, boundary, phi, r, grid_res),
            hr: coverage_hr(positions, boundary, phi, r, grid_res),
        }
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub h: Stat,
    pub e: Stat,
    pub hr: Stat,
}

/// Final metric values over successful runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalValues {
    pub e: Stat,
    pub h: Stat,
    pub hr: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub successes: usize,
    /// Percentage in [0, 100].
    pub success_rate: f64,
    /// Mean/std per time step over all runs, starting at t = 0.
    pub curves: Vec<CurvePoint>,
    /// `None` when fewer than [`MIN_SUCCESSES_FOR_FINAL`] runs succeeded.
    pub final_values: Option<FinalValues>,
}

pub const MIN_SUCCESSES_FOR_FINAL: usize = 3;

/// Per-step statistics, success rate and final-value table.
pub fn aggregate(runs: &[SimLog]) -> Summary {
    let series: Vec<Vec<(f64, MetricSample)>> = runs.iter().map(|r| r.metric_series()).collect();
    let len = series.iter().map(Vec::len).min().unwrap_or(0);
    let curves = (0..len)
        .map(|k| {
            let pick = |f: fn(&MetricSample) -> f64| {
                Stat::of(&series.iter().map(|s| f(&s[k].1)).collect::<Vec<_>>())
            };
            CurvePoint {
                t: series[0][k].0,
                h: pick(|m| m.h),
                e: pick(|m| m.e),
                hr: pick(|m| m.hr),
            }
        })
        .collect();
    let finals: Vec<MetricSample> = runs
        .iter()
        .filter(|r| r.outcome.is_success())
        .filter_map(|r| r.final_metrics())
        .collect();
    let successes = runs.iter().filter(|r| r.outcome.is_success()).count();
    let final_values = (finals.len() >= MIN_SUCCESSES_FOR_FINAL).then(|| FinalValues {
        e: Stat::of(&finals.iter().map(|m| m.e).collect::<Vec<_>>()),
        h: Stat::of(&finals.iter().map(|m| m.h).collect::<Vec<_>>()),
        hr: Stat::of(&finals.iter().map(|m| m.hr).collect::<Vec<_>>()),
    });
    Summary {
        runs: runs.len(),
        successes,
        success_rate: if runs.is_empty() {
            0.0
        } else {
            100.0 * successes as f64 / runs.len() as f64
        },
        curves,
        final_values,
    }
}

/// First time a series reaches `fraction` of its final value (for rising
/// series such as E).
pub fn time_to_fraction(series: &[(f64, f64)], fraction: f64) -> Option<f64> {
    let last = series.last()?.1;
    let target = fraction * last;
    series.iter().find(|(_, v)| *v >= target).map(|(t, _)| *t)
}
