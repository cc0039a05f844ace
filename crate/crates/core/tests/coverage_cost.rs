use hmpcc_core::density::GaussianMixture;
use hmpcc_core::geometry::{
    cell_moments, cell_quadratic_cost, limited_voronoi_cell, Aabb, Polygon,
};
use hmpcc_core::mpc::coverage_cost_terms;
use hmpcc_core::Vec2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arena() -> Polygon {
    Polygon::rectangle(&Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0)))
}

struct Instance {
    cell: hmpcc_core::geometry::VoronoiCell,
    phi: GaussianMixture,
}

fn instance(rng: &mut ChaCha8Rng, seed: u64) -> Instance {
    let b = Aabb::new(Vec2::zeros(), Vec2::new(10.0, 10.0));
    let phi = GaussianMixture::random(seed, rng.gen_range(1..5), &b, (0.5, 2.0));
    let mean = phi.components()[0].mean();
    let owner = Vec2::new(
        (mean.x + rng.gen_range(-1.5..1.5)).clamp(0.5, 9.5),
        (mean.y + rng.gen_range(-1.5..1.5)).clamp(0.5, 9.5),
    );
    let mut pick = || Vec2::new(rng.gen_range(0.5..9.5), rng.gen_range(0.5..9.5));
    let neighbors: Vec<Vec2> = (0..3)
        .map(|_| pick())
        .filter(|q| (q - owner).norm() < 4.0)
        .collect();
    Instance {
        cell: limited_voronoi_cell(&owner, &neighbors, &arena(), 2.0, 32),
        phi,
    }
}

#[test]
fn gradient_matches_central_differences_of_direct_integral() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let grid = 0.05;
    let mut checked = 0;
    for seed in 0..100 {
        let inst = instance(&mut rng, seed);
        let m = cell_moments(&inst.cell, &inst.phi, grid);
        if m.empty {
            continue;
        }
        let p = inst.cell.owner + Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let analytic = -2.0 * m.mass * (m.centroid - p);
        let h = 1e-3;
        let fd = Vec2::new(
            (cell_quadratic_cost(&inst.cell, &inst.phi, grid, &(p + Vec2::x() * h))
                - cell_quadratic_cost(&inst.cell, &inst.phi, grid, &(p - Vec2::x() * h)))
                / (2.0 * h),
            (cell_quadratic_cost(&inst.cell, &inst.phi, grid, &(p + Vec2::y() * h))
                - cell_quadratic_cost(&inst.cell, &inst.phi, grid, &(p - Vec2::y() * h)))
                / (2.0 * h),
        );
        let scale = analytic.norm().max(fd.norm()).max(1e-3 * m.mass);
        assert!(
            (analytic - fd).norm() <= 1e-5 * scale,
            "seed {seed}: {analytic} vs {fd}"
        );
        checked += 1;
    }
    assert!(checked >= 95, "only {checked} non-degenerate instances");
}

#[test]
fn moment_form_equals_direct_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = 0.05;
    for seed in 0..100 {
        let inst = instance(&mut rng, seed);
        let m = cell_moments(&inst.cell, &inst.phi, grid);
        let steps = 10;
        let traj: Vec<Vec2> = (0..steps)
            .map(|_| {
                inst.cell.owner + Vec2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5))
            })
            .collect();
        let moment = coverage_cost_terms(&m, steps).value(&traj);
        let direct: f64 = traj
            .iter()
            .map(|p| cell_quadratic_cost(&inst.cell, &inst.phi, grid, p))
            .sum();
        if m.empty {
            assert_eq!(moment, 0.0);
            continue;
        }
        assert!(
            (moment - direct).abs() <= 1e-9 * direct.abs(),
            "seed {seed}: {moment} vs {direct}"
        );
    }
}
