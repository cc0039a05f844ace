//! Static SVG frame of a simulation log.

use std::fmt::Write as _;

use hmpcc_core::density::GaussianMixture;
use hmpcc_core::geometry::Aabb;
use hmpcc_core::mpc::chance_constraint_rhs;
use hmpcc_core::sim::{confidence_ellipse, Frame, SimLog};
use hmpcc_core::Vec2;

use crate::error::CliError;
use crate::output::fmt_num;

const CONTOUR_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const CONTOUR_CELLS: usize = 120;
const ROBOT_RADIUS: f64 = 0.12;
const HUMAN_RADIUS: f64 = 0.12;

/// Frame closest to `t`; errors when `t` lies outside the logged span.
pub fn frame_at(log: &SimLog, t: f64) -> Result<&Frame, CliError> {
    let last = log
        .frames
        .last()
        .ok_or_else(|| CliError::Invalid("log has no frames".into()))?;
    let half = 0.5 * log.scenario.dt();
    if !(t >= -half && t <= last.t + half) {
        return Err(CliError::Usage(format!(
            "time {t} is outside the logged span [0, {}]",
            last.t
        )));
    }
    Ok(log
        .frames
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .expect("non-empty"))
}

struct View {
    bbox: Aabb,
}

impl View {
    fn x(&self, x: f64) -> String {
        fmt_num(x - self.bbox.min.x)
    }
    fn y(&self, y: f64) -> String {
        fmt_num(self.bbox.max.y - y)
    }
    fn pt(&self, p: &Vec2) -> String {
        format!("{},{}", self.x(p.x), self.y(p.y))
    }
}

/// Line segments of `phi = level` by marching squares over `bbox`.
pub fn contour_segments(
    phi: &GaussianMixture,
    bbox: &Aabb,
    cells: usize,
    level: f64,
) -> Vec<(Vec2, Vec2)> {
    let n = cells.max(2);
    let (dx, dy) = (bbox.width() / n as f64, bbox.height() / n as f64);
    let at = |i: usize, j: usize| Vec2::new(bbox.min.x + i as f64 * dx, bbox.min.y + j as f64 * dy);
    let values: Vec<Vec<f64>> = (0..=n)
        .map(|i| (0..=n).map(|j| phi.eval(&at(i, j))).collect())
        .collect();
    let lerp = |a: Vec2, fa: f64, b: Vec2, fb: f64| a + (b - a) * ((level - fa) / (fb - fa));
    let mut segments = Vec::new();
    for i in 0..n {
        for j in 0..n {
            // Corners counter-clockwise from the lower left.
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let f = [
                values[i][j],
                values[i + 1][j],
                values[i + 1][j + 1],
                values[i][j + 1],
            ];
            let mut crossings = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                if (f[a] >= level) != (f[b] >= level) {
                    crossings.push(lerp(c[a], f[a], c[b], f[b]));
                }
            }
            // Two crossings form one segment; saddles (four) pair edges in order.
            for pair in crossings.chunks_exact(2) {
                segments.push((pair[0], pair[1]));
            }
        }
    }
    segments
}

pub fn render(log: &SimLog, frame: &Frame) -> String {
    let s = &log.scenario;
    let boundary = s.environment.boundary();
    let bbox = boundary.aabb();
    let view = View { bbox };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.5 -0.5 {} {}" data-t="{}">"#,
        fmt_num(bbox.width() + 1.0),
        fmt_num(bbox.height() + 1.0),
        fmt_num(frame.t)
    );
    let pts: Vec<String> = boundary.vertices().iter().map(|p| view.pt(p)).collect();
    let _ = writeln!(
        out,
        r#"<polygon class="boundary" points="{}" fill="none" stroke="black" stroke-width="0.05"/>"#,
        pts.join(" ")
    );

    let peak = s
        .density
        .components()
        .iter()
        .map(|c| s.density.eval(&c.mean()))
        .fold(0.0, f64::max);
    if peak > 0.0 {
        for frac in CONTOUR_LEVELS {
            let segs = contour_segments(&s.density, &bbox, CONTOUR_CELLS, frac * peak);
            if segs.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (a, b) in segs {
                let _ = write!(d, "M{}L{}", view.pt(&a), view.pt(&b));
            }
            let _ = writeln!(
                out,
                r#"<path class="contour" data-level="{}" d="{d}" fill="none" stroke="steelblue" stroke-width="0.02"/>"#,
                fmt_num(frac)
            );
        }
    }

    for o in s.environment.obstacles() {
        let _ = writeln!(
            out,
            r#"<circle class="obstacle" cx="{}" cy="{}" r="{}" fill="dimgray"/>"#,
            view.x(o.center.x),
            view.y(o.center.y),
            fmt_num(o.radius)
        );
    }

    for (j, (h, pred)) in frame.humans.iter().zip(&frame.predictions).enumerate() {
        for (k, (mu, cov)) in pred.means.iter().zip(&pred.covariances).enumerate() {
            let level = chance_constraint_rhs(cov, s.mpc.alpha, s.mpc.safety_distance);
            if level.is_nan() || level <= 0.0 {
                continue;
            }
            let (a, b, angle) = confidence_ellipse(cov, level);
            let _ = writeln!(
                out,
                r#"<ellipse class="prediction" data-human="{j}" data-k="{k}" cx="{cx}" cy="{cy}" rx="{}" ry="{}" transform="rotate({} {cx} {cy})" fill="none" stroke="orange" stroke-width="0.02"/>"#,
                fmt_num(a),
                fmt_num(b),
                fmt_num(-angle.to_degrees()),
                cx = view.x(mu.x),
                cy = view.y(mu.y),
            );
        }
        let _ = writeln!(
            out,
            r#"<circle class="human" data-id="{j}" cx="{}" cy="{}" r="{}" fill="orangered"/>"#,
            view.x(h.position.x),
            view.y(h.position.y),
            fmt_num(HUMAN_RADIUS)
        );
    }

    for (i, r) in frame.robots.iter().enumerate() {
        let p = Vec2::new(r.state[0], r.state[1]);
        if !r.planned.is_empty() {
            let path: Vec<String> = std::iter::once(&p)
                .chain(r.planned.iter())
                .map(|q| view.pt(q))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="plan" data-id="{i}" points="{}" fill="none" stroke="seagreen" stroke-width="0.03"/>"#,
                path.join(" ")
            );
        }
        let _ = writeln!(
            out,
            r#"<circle class="robot" data-id="{i}" cx="{}" cy="{}" r="{}" fill="navy"/>"#,
            view.x(p.x),
            view.y(p.y),
            fmt_num(ROBOT_RADIUS)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmpcc_core::density::GaussianComponent;

    #[test]
    fn contour_of_isotropic_gaussian_is_a_circle() {
        let phi = GaussianMixture::new(vec![GaussianComponent::isotropic(
            1.0,
            Vec2::new(5.0, 5.0),
            1.0,
        )
        .unwrap()])
        .unwrap();
        let peak = phi.eval(&Vec2::new(5.0, 5.0));
        let bbox = Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0));
        let segs = contour_segments(&phi, &bbox, 100, 0.5 * peak);
        assert!(!segs.is_empty());
        // exp(-r²/2) = 1/2
        let radius = (2.0 * 2f64.ln()).sqrt();
        for (a, _) in segs {
            assert!(((a - Vec2::new(5.0, 5.0)).norm() - radius).abs() < 0.02);
        }
    }
}
