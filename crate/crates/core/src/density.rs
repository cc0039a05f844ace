//! Gaussian mixture density over the workspace.

use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Aabb;
use crate::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("component weight must be finite and non-negative, got {0}")]
    BadWeight(f64),
    #[error("covariance must be symmetric positive definite")]
    NotPositiveDefinite,
    #[error("mixture needs at least one component")]
    Empty,
}

/// One weighted 2-D Gaussian. Inverse and normalization are cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentRepr", into = "ComponentRepr")]
pub struct GaussianComponent {
    weight: f64,
    mean: Vec2,
    covariance: Matrix2<f64>,
    precision: Matrix2<f64>,
    scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ComponentRepr {
    weight: f64,
    mean: [f64; 2],
    covariance: [[f64; 2]; 2],
}

impl TryFrom<ComponentRepr> for GaussianComponent {
    type Error = DensityError;

    fn try_from(r: ComponentRepr) -> Result<Self, Self::Error> {
        let c = r.covariance;
        GaussianComponent::new(
            r.weight,
            Vec2::new(r.mean[0], r.mean[1]),
            Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]),
        )
    }
}

impl From<GaussianComponent> for ComponentRepr {
    fn from(g: GaussianComponent) -> Self {
        let c = g.covariance;
        ComponentRepr {
            weight: g.weight,
            mean: [g.mean.x, g.mean.y],
            covariance: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
        }
    }
}

/// True when `m` is symmetric with strictly positive eigenvalues.
pub fn is_spd(m: &Matrix2<f64>) -> bool {
    let sym = (m[(0, 1)] - m[(1, 0)]).abs() <= 1e-12 * (1.0 + m[(0, 1)].abs());
    sym && m[(0, 0)] > 0.0 && m.determinant() > 0.0 && m.iter().all(|v| v.is_finite())
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: Vec2, covariance: Matrix2<f64>) -> Result<Self, DensityError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(DensityError::BadWeight(weight));
        }
        if !is_spd(&covariance) {
            return Err(DensityError::NotPositiveDefinite);
        }
        let det = covariance.determinant();
        let precision = covariance
            .try_inverse()
            .ok_or(DensityError::NotPositiveDefinite)?;
        Ok(Self {
            weight,
            mean,
            covariance,
            precision,
            scale: weight / (std::f64::consts::TAU * det.sqrt()),
        })
    }

    pub fn isotropic(weight: f64, mean: Vec2, sigma: f64) -> Result<Self, DensityError> {
        Self::new(weight, mean, Matrix2::identity() * (sigma * sigma))
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> Vec2 {
        self.mean
    }

    pub fn covariance(&self) -> &Matrix2<f64> {
        &self.covariance
    }

    /// Weighted pdf at `q`.
    pub fn eval(&self, q: &Vec2) -> f64 {
        let d = q - self.mean;
        let m = d.dot(&(self.precision * d));
        self.scale * (-0.5 * m).exp()
    }

    fn scaled(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.weight *= factor;
        c.scale *= factor;
        c
    }
}

/// Non-empty weighted sum of Gaussians; not normalized over the workspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GaussianComponent>", into = "Vec<GaussianComponent>")]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl TryFrom<Vec<GaussianComponent>> for GaussianMixture {
    type Error = DensityError;

    fn try_from(v: Vec<GaussianComponent>) -> Result<Self, Self::Error> {
        GaussianMixture::new(v)
    }
}

impl From<GaussianMixture> for Vec<GaussianComponent> {
    fn from(g: GaussianMixture) -> Self {
        g.components
    }
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, DensityError> {
        if components.is_empty() {
            return Err(DensityError::Empty);
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn eval(&self, q: &Vec2) -> f64 {
        let v: f64 = self.components.iter().map(|c| c.eval(q)).sum();
        if v < 1e-300 {
            0.0
        } else {
            v
        }
    }

    /// Multiplies every weight by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            components: self.components.iter().map(|c| c.scaled(factor)).collect(),
        }
    }

    /// `k` isotropic components with means uniform in `bounds`, σ uniform in
    /// `sigma_range` and weights uniform in [0.5, 1].
    pub fn random(seed: u64, k: usize, bounds: &Aabb, sigma_range: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = (0..k.max(1))
            .map(|_| {
                let mean = Vec2::new(
                    rng.gen_range(bounds.min.x..=bounds.max.x),
                    rng.gen_range(bounds.min.y..=bounds.max.y),
                );
                let sigma = if sigma_range.1 > sigma_range.0 {
                    rng.gen_range(sigma_range.0..=sigma_range.1)
                } else {
                    sigma_range.0
                };
                let weight = rng.gen_range(0.5..=1.0);
                GaussianComponent::isotropic(weight, mean, sigma)
                    .expect("positive sigma yields a valid component")
            })
            .collect();
        Self { components }
    }
}
