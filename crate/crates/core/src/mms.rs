//! Manufactured-solution convergence studies.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{classify_degenerate_boundary, ClassifyOptions, DomainSpec};
use crate::grid::{build_grid, Resolution};
use crate::operator::{ParabolicOperator, SpaceTimePoint};
use crate::solver::{solve_terminal_value_problem, ProblemData, SolverConfig};

type Field<T> = Arc<dyn Fn(f64, &[f64]) -> T + Send + Sync>;

/// A smooth function with its analytic derivatives.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: Field<f64>,
    pub u_t: Field<f64>,
    pub grad: Field<DVector<f64>>,
    pub hess: Field<DMatrix<f64>>,
}

impl ExactSolution {
    /// `f = L u` evaluated from the analytic derivatives.
    pub fn source(&self, op: &ParabolicOperator) -> impl Fn(f64, &[f64]) -> f64 + Send + Sync {
        let op = op.clone();
        let s = self.clone();
        move |t, x| {
            let p = SpaceTimePoint::new(t, x.to_vec());
            op.apply_pointwise(&p, (s.u)(t, x), (s.u_t)(t, x), &(s.grad)(t, x), &(s.hess)(t, x))
                .unwrap_or(f64::NAN)
        }
    }

    pub fn problem(&self, op: &ParabolicOperator) -> ProblemData {
        let u = self.u.clone();
        ProblemData::new(self.source(op), move |t, x| u(t, x))
    }
}

/// `e^{-t} (1 + x1 + x2^2)` in two dimensions.
pub fn quadratic_exact() -> ExactSolution {
    ExactSolution {
        u: Arc::new(|t, x| (-t).exp() * (1.0 + x[0] + x[1] * x[1])),
        u_t: Arc::new(|t, x| -(-t).exp() * (1.0 + x[0] + x[1] * x[1])),
        grad: Arc::new(|t, x| DVector::from_column_slice(&[(-t).exp(), 2.0 * x[1] * (-t).exp()])),
        hess: Arc::new(|t, _x| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0 * (-t).exp()])),
    }
}

/// `e^{-t}`, constant in space.
pub fn time_only_exact(dim: usize) -> ExactSolution {
    ExactSolution {
        u: Arc::new(|t, _| (-t).exp()),
        u_t: Arc::new(|t, _| -(-t).exp()),
        grad: Arc::new(move |_, _| DVector::zeros(dim)),
        hess: Arc::new(move |_, _| DMatrix::zeros(dim, dim)),
    }
}

/// `c0 + ct t + sum_i g_i x_i`.
pub fn affine_exact(c0: f64, ct: f64, g: Vec<f64>) -> ExactSolution {
    let g1 = g.clone();
    let g2 = g.clone();
    let d = g.len();
    ExactSolution {
        u: Arc::new(move |t, x| c0 + ct * t + g1.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()),
        u_t: Arc::new(move |_, _| ct),
        grad: Arc::new(move |_, _| DVector::from_column_slice(&g2)),
        hess: Arc::new(move |_, _| DMatrix::zeros(d, d)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Refinement {
    Space,
    Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub h: f64,
    pub dt: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub refinement: Refinement,
    pub entries: Vec<LadderEntry>,
    /// Observed order between consecutive entries.
    pub orders: Vec<f64>,
    pub errors_decrease: bool,
}

impl ConvergenceReport {
    pub fn min_order(&self) -> f64 {
        self.orders.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.error).fold(0.0, f64::max)
    }
}

/// Solves against `exact` on each resolution and reports sup-norm errors
/// over all nodes and levels, plus observed orders in `h` (largest spacing)
/// or `dt`. A non-decreasing error sequence is reported, not an error.
pub fn manufactured_convergence(
    op: &ParabolicOperator,
    dom: &DomainSpec,
    exact: &ExactSolution,
    ladder: &[Resolution],
    refinement: Refinement,
    cfg: &SolverConfig,
) -> Result<ConvergenceReport> {
    if ladder.len() < 2 {
        return Err(Error::InvalidParameter("ladder needs at least two resolutions".into()));
    }
    let part = classify_degenerate_boundary(op, dom, &ClassifyOptions::default())?;
    let data = exact.problem(op);
    let mut entries = Vec::with_capacity(ladder.len());
    for res in ladder {
        let grid = build_grid(dom, &part, res)?;
        let sol = solve_terminal_value_problem(op, &grid, &data, cfg)?;
        let mut err: f64 = 0.0;
        for k in 0..grid.num_levels() {
            let e = grid.sample(k, |t, x| (exact.u)(t, x));
            err = err.max(sol.trajectory.level(k).max_abs_diff(&e));
        }
        entries.push(LadderEntry {
            h: grid.spacing().iter().copied().fold(0.0, f64::max),
            dt: grid.dt(),
            error: err,
        });
    }
    let orders = entries
        .windows(2)
        .map(|w| {
            let (s0, s1) = match refinement {
                Refinement::Space => (w[0].h, w[1].h),
                Refinement::Time => (w[0].dt, w[1].dt),
            };
            (w[0].error / w[1].error).ln() / (s0 / s1).ln()
        })
        .collect();
    let errors_decrease = entries.windows(2).all(|w| w[1].error < w[0].error);
    Ok(ConvergenceReport {
        refinement,
        entries,
        orders,
        errors_decrease,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{make_heston, HestonParams};

    fn heston() -> (ParabolicOperator, f64) {
        let p = HestonParams {
            sigma: 0.5,
            rho: -0.5,
            kappa: 2.0,
            theta: 0.1,
            r: 0.05,
            q: 0.0,
        };
        (make_heston(p).unwrap(), p.sigma)
    }

    #[test]
    fn source_matches_hand_derivation() {
        let (op, sigma) = heston();
        let ex = quadratic_exact();
        let f = ex.source(&op);
        let (t, x1, x2) = (0.3_f64, 0.2, 0.4);
        let e = (-t).exp();
        let u = e * (1.0 + x1 + x2 * x2);
        // -u_t - (x2/2) sigma^2 * u_x2x2 - b1 u_x1 - b2 u_x2 + r u
        let hand = u - 0.5 * x2 * sigma * sigma * 2.0 * e
            - (0.05 - 0.5 * x2) * e
            - 2.0 * (0.1 - x2) * 2.0 * x2 * e
            + 0.05 * u;
        assert!((f(t, &[x1, x2]) - hand).abs() < 1e-14);
    }

    #[test]
    fn affine_ladder_is_exact() {
        let (op, sigma) = heston();
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 2.0 * sigma)]).unwrap();
        let ladder: Vec<Resolution> = [8, 16]
            .iter()
            .map(|&n| Resolution::new(vec![n + 1, n + 1], n / 2 + 1))
            .collect();
        let rep = manufactured_convergence(
            &op,
            &dom,
            &affine_exact(1.0, 0.5, vec![1.0, 2.0]),
            &ladder,
            Refinement::Space,
            &Default::default(),
        )
        .unwrap();
        assert!(rep.max_error() < 1e-10, "{rep:?}");
    }

    #[test]
    fn short_ladder_rejected() {
        let (op, _) = heston();
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        assert!(manufactured_convergence(
            &op,
            &dom,
            &time_only_exact(2),
            &[Resolution::new(vec![5, 5], 3)],
            Refinement::Time,
            &Default::default()
        )
        .is_err());
    }
}
