//! Convex QP with linear inequality constraints, solved with Clarabel.
//!
//! ```text
//! minimize    ½ xᵀ H x + gᵀ x
//! subject to  aᵢᵀ x ≤ bᵢ
//! ```

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("QP is infeasible")]
    Infeasible,
    #[error("QP solver failed: {0}")]
    Solver(String),
}

/// Sparse row `coeffs · x ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality {
    pub coeffs: Vec<(usize, f64)>,
    pub bound: f64,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub constraints: Vec<Inequality>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub objective: f64,
    /// Scaled max of stationarity, primal/dual feasibility and
    /// complementarity violations.
    pub kkt_residual: f64,
    pub iterations: u32,
}

impl QpProblem {
    pub fn new(n: usize) -> Self {
        Self {
            hessian: DMatrix::zeros(n, n),
            gradient: DVector::zeros(n),
            constraints: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn push(&mut self, coeffs: Vec<(usize, f64)>, bound: f64) {
        self.constraints.push(Inequality { coeffs, bound });
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.gradient.dot(x)
    }

    fn row_value(row: &Inequality, x: &DVector<f64>) -> f64 {
        row.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        self.constraints
            .iter()
            .map(|r| (Self::row_value(r, x) - r.bound).max(0.0))
            .fold(0.0, f64::max)
    }

    /// KKT residual of a primal-dual pair, scaled by the problem magnitude.
    pub fn kkt_residual(&self, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let hx = &self.hessian * x;
        let mut atz = DVector::zeros(self.dim());
        let mut primal: f64 = 0.0;
        let mut comp: f64 = 0.0;
        let mut dual: f64 = 0.0;
        for (i, r) in self.constraints.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                atz[j] += a * z[i];
            }
            let slack = r.bound - Self::row_value(r, x);
            primal = primal.max(-slack);
            comp = comp.max((z[i] * slack).abs());
            dual = dual.max(-z[i]);
        }
        let stat = (&hx + &self.gradient + &atz).amax();
        let scale = 1.0_f64
            .max(hx.amax())
            .max(self.gradient.amax())
            .max(atz.amax());
        let bscale = 1.0_f64.max(
            self.constraints
                .iter()
                .map(|r| r.bound.abs())
                .fold(0.0, f64::max),
        );
        (stat / scale)
            .max(primal / bscale)
            .max(comp / (scale * bscale))
            .max(dual)
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.dim();
        let m = self.constraints.len();

        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..n {
            for i in 0..=j {
                let v = 0.5 * (self.hessian[(i, j)] + self.hessian[(j, i)]);
                if v != 0.0 {
                    pi.push(i);
                    pj.push(j);
                    pv.push(v);
                }
            }
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        for (i, r) in self.constraints.iter().enumerate() {
            for &(j, a) in &r.coeffs {
                ai.push(i);
                aj.push(j);
                av.push(a);
            }
            b.push(r.bound);
        }
        let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
        let cones = [SupportedConeT::NonnegativeConeT(m)];
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(200)
            .tol_gap_abs(1e-10)
            .tol_gap_rel(1e-10)
            .tol_feas(1e-10)
            .tol_ktratio(1e-8)
            .build()
            .map_err(|e| QpError::Solver(format!("{e:?}")))?;
        let q: Vec<f64> = self.gradient.iter().copied().collect();
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| QpError::Solver(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {}
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                return Err(QpError::Infeasible)
            }
            other => {
                // accept an iterate that is good enough despite the status
                let x = DVector::from_column_slice(&sol.x);
                let z = DVector::from_column_slice(&sol.z);
                if !(x.iter().all(|v| v.is_finite()) && self.kkt_residual(&x, &z) <= 1e-6) {
                    return Err(QpError::Solver(format!("{other:?}")));
                }
            }
        }
        let x = DVector::from_column_slice(&sol.x);
        let z = DVector::from_column_slice(&sol.z);
        Ok(QpSolution {
            objective: self.objective(&x),
            kkt_residual: self.kkt_residual(&x, &z),
            iterations: sol.iterations,
            x,
            multipliers: z,
        })
    }
}
