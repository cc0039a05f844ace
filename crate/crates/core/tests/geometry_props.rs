use hmpcc_core::density::GaussianMixture;
use hmpcc_core::geometry::{
    cell_moments, limited_voronoi_cell, unlimited_voronoi_partition, Aabb, Polygon,
};
use hmpcc_core::Vec2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arena() -> Polygon {
    Polygon::rectangle(&Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0)))
}

/// Random convex boundary: hull-free construction from sorted angles.
fn convex_boundary(rng: &mut ChaCha8Rng) -> Polygon {
    let n = rng.gen_range(3..9);
    let mut angles: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    angles.sort_by(f64::total_cmp);
    let c = Vec2::new(5.0, 5.0);
    let verts = angles
        .iter()
        .map(|a| c + Vec2::new(a.cos(), a.sin()) * 4.5)
        .collect();
    Polygon::new(verts).unwrap_or_else(|_| arena())
}

fn sites(rng: &mut ChaCha8Rng, n: usize, boundary: &Polygon) -> Vec<Vec2> {
    let b = boundary.aabb();
    let mut out = Vec::new();
    while out.len() < n {
        let p = Vec2::new(
            rng.gen_range(b.min.x..b.max.x),
            rng.gen_range(b.min.y..b.max.y),
        );
        if boundary.contains(&p) {
            out.push(p);
        }
    }
    out
}

/// Random point of a convex polygon by a Dirichlet-like vertex weighting.
fn point_in(poly: &Polygon, rng: &mut ChaCha8Rng) -> Vec2 {
    let w: Vec<f64> = poly
        .vertices()
        .iter()
        .map(|_| rng.gen_range(0.01..1.0))
        .collect();
    let s: f64 = w.iter().sum();
    poly.vertices()
        .iter()
        .zip(&w)
        .map(|(v, w)| v * (*w / s))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn partition_tiles_the_boundary(seed in any::<u64>(), n in 1usize..10, convex in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boundary = if convex { convex_boundary(&mut rng) } else { arena() };
        let ps = sites(&mut rng, n, &boundary);
        let cells = unlimited_voronoi_partition(&ps, &boundary, seed);
        let total: f64 = cells.iter().map(|c| c.polygon.area()).sum();
        prop_assert!((total - boundary.area()).abs() <= 1e-6 * boundary.area());
    }

    #[test]
    fn points_belong_to_their_nearest_site(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = sites(&mut rng, n, &arena());
        for (i, cell) in unlimited_voronoi_partition(&ps, &arena(), seed).iter().enumerate() {
            if cell.polygon.is_empty() {
                continue;
            }
            for _ in 0..5 {
                let q = point_in(&cell.polygon, &mut rng);
                let own = (q - ps[i]).norm();
                for p in &ps {
                    prop_assert!(own <= (q - p).norm() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn limited_cell_lies_in_ball_and_boundary(seed in any::<u64>(), n in 1usize..8, r in 0.3f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ps = sites(&mut rng, n, &arena());
        let cell = limited_voronoi_cell(&ps[0], &ps[1..], &arena(), r, 32);
        for v in cell.polygon.vertices() {
            prop_assert!((v - ps[0]).norm() <= r + 1e-9);
            prop_assert!(arena().contains(v) || arena().distance_to_boundary(v) < 1e-9);
            for q in &ps[1..] {
                prop_assert!((v - ps[0]).norm() <= (v - q).norm() + 1e-9);
            }
        }
    }
}

/// Monte-Carlo area of the limited cell, bracketed by the inscribed and
/// circumscribed discs of the 32-gon.
#[test]
fn limited_cell_area_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples = 200_000;
    for case in 0..10 {
        let ps = sites(&mut rng, 4, &arena());
        let r = 2.0;
        let cell = limited_voronoi_cell(&ps[0], &ps[1..], &arena(), r, 32);
        let inner_r = r * (std::f64::consts::PI / 32.0).cos();
        let (mut inner, mut outer) = (0usize, 0usize);
        for _ in 0..samples {
            let q = ps[0] + Vec2::new(rng.gen_range(-r..r), rng.gen_range(-r..r));
            let in_region = (0.0..=10.0).contains(&q.x)
                && (0.0..=10.0).contains(&q.y)
                && ps[1..].iter().all(|p| (q - ps[0]).norm() <= (q - p).norm());
            let d = (q - ps[0]).norm();
            inner += (in_region && d <= inner_r) as usize;
            outer += (in_region && d <= r) as usize;
        }
        let scale = 4.0 * r * r / samples as f64;
        let tol = 4.0 * scale * (samples as f64).sqrt() * 0.5;
        let area = cell.polygon.area();
        assert!(
            area >= inner as f64 * scale - tol,
            "case {case}: {area} < inner {}",
            inner as f64 * scale
        );
        assert!(
            area <= outer as f64 * scale + tol,
            "case {case}: {area} > outer {}",
            outer as f64 * scale
        );
    }
}

/// Lattice mass of each unlimited cell against Monte-Carlo integration with
/// nearest-site membership.
#[test]
fn cell_mass_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0));
    for case in 0..5 {
        let phi = GaussianMixture::random(case, 3, &b, (0.8, 1.5));
        let ps = sites(&mut rng, 5, &arena());
        let cells = unlimited_voronoi_partition(&ps, &arena(), case);
        let samples = 400_000;
        let mut mass = [0.0; 5];
        let mut sq = [0.0; 5];
        for _ in 0..samples {
            let q = Vec2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
            let owner = (0..5)
                .min_by(|&i, &j| (q - ps[i]).norm().total_cmp(&(q - ps[j]).norm()))
                .unwrap();
            let f = phi.eval(&q) * 100.0;
            mass[owner] += f / samples as f64;
            sq[owner] += f * f / samples as f64;
        }
        for i in 0..5 {
            let m = cell_moments(&cells[i], &phi, 0.02).mass;
            let stderr = ((sq[i] - mass[i] * mass[i]) / samples as f64).sqrt();
            assert!(
                (m - mass[i]).abs() <= 4.0 * stderr + 2e-3 * mass[i] + 1e-6,
                "case {case} cell {i}: {m} vs {}",
                mass[i]
            );
        }
    }
}
