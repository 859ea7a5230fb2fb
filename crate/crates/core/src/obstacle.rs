//! Obstacle problem `min{Lu - f, u - psi} = 0` with partial Dirichlet data,
//! solved level by level as a linear complementarity problem by projected SOR.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{MonotonicityReport, RowKind};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Trajectory};
use crate::operator::{ParabolicOperator, ScalarField};
use crate::solver::{worse, ProblemData, SolverConfig, Stepper};

#[derive(Clone)]
pub struct ObstacleData {
    pub f: ScalarField,
    pub g: ScalarField,
    pub psi: ScalarField,
}

impl std::fmt::Debug for ObstacleData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ObstacleData { .. }")
    }
}

impl ObstacleData {
    pub fn new(
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        psi: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            g: Arc::new(g),
            psi: Arc::new(psi),
        }
    }

    pub fn problem(&self) -> ProblemData {
        ProblemData {
            f: self.f.clone(),
            g: self.g.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsorConfig {
    pub omega: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PsorConfig {
    fn default() -> Self {
        Self {
            omega: 1.2,
            tol: 1e-10,
            max_iters: 20_000,
        }
    }
}

impl PsorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega < 2.0) || !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(Error::InvalidParameter(format!(
                "PSOR needs omega in (0,2), tol > 0, max_iters > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub trajectory: Trajectory,
    /// PSOR sweeps per level (index = level; the top level has none).
    pub iterations: Vec<usize>,
    /// Largest final LCP residual over levels.
    pub max_residual: f64,
    pub monotonicity: MonotonicityReport,
}

impl ObstacleSolution {
    /// Nodes where `u` touches the obstacle at a level, as a 0/1 grid function.
    pub fn contact_mask(&self, grid: &Grid, data: &ObstacleData, level: usize, tol: f64) -> GridFunction {
        let t = grid.time(level);
        let u = self.trajectory.level(level);
        GridFunction::from_vec(
            grid.shape().to_vec(),
            (0..grid.num_nodes())
                .map(|n| {
                    let psi = (data.psi)(t, &grid.coords(n));
                    if !grid.is_dirichlet(level, n) && u[n] - psi <= tol {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityVerdict {
    pub pass: bool,
    /// `max (psi - g)` over Dirichlet nodes; non-positive when compatible.
    pub worst_margin: f64,
    pub witness: Option<(usize, usize)>,
}

/// Checks `psi <= g` on every Dirichlet node of every level.
pub fn check_compatibility(data: &ObstacleData, grid: &Grid) -> CompatibilityVerdict {
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for level in 0..grid.num_levels() {
        let t = grid.time(level);
        for n in 0..grid.num_nodes() {
            if !grid.is_dirichlet(level, n) {
                continue;
            }
            let x = grid.coords(n);
            let m = (data.psi)(t, &x) - (data.g)(t, &x);
            if m > worst {
                worst = m;
                witness = Some((level, n));
            }
        }
    }
    CompatibilityVerdict {
        pass: worst <= 0.0,
        worst_margin: worst,
        witness: if worst > 0.0 { witness } else { None },
    }
}

fn psi_level(grid: &Grid, level: usize, psi: &ScalarField) -> Result<Vec<f64>> {
    let t = grid.time(level);
    (0..grid.num_nodes())
        .map(|n| {
            let x = grid.coords(n);
            let v = psi(t, &x);
            if v.is_nan() || v == f64::INFINITY {
                Err(Error::NonFinite {
                    what: "obstacle psi".into(),
                    location: format!("t={t}, x={x:?}"),
                })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// Backward march; each level solves the LCP
/// `u >= psi, M u - rhs >= 0, (u - psi)(M u - rhs) = 0` on equation rows with
/// Dirichlet rows pinned. `M u - rhs` is the discrete `Lu - f`.
pub fn solve_obstacle_problem(
    op: &ParabolicOperator,
    grid: &Grid,
    data: &ObstacleData,
    cfg: &SolverConfig,
    psor: &PsorConfig,
) -> Result<ObstacleSolution> {
    psor.validate()?;
    let compat = check_compatibility(data, grid);
    if !compat.pass {
        let (level, node) = compat.witness.expect("failing verdict has a witness");
        return Err(Error::Incompatible(format!(
            "psi - g = {:e} at level {level}, x = {:?}",
            compat.worst_margin,
            grid.coords(node)
        )));
    }
    let mut st = Stepper::new(op, grid, cfg)?;
    let top = grid.top_level();
    let problem = data.problem();
    let mut levels = vec![GridFunction::zeros(grid); top + 1];
    let mut u_next = st.terminal(&problem.g)?;
    let mut f_next = st.source(top, &problem.f)?;
    levels[top] = GridFunction::from_vec(grid.shape().to_vec(), u_next.clone());
    let mut iterations = vec![0; top + 1];
    let mut max_residual: f64 = 0.0;
    let mut monotonicity: Option<MonotonicityReport> = None;
    for k in (0..top).rev() {
        let f_k = st.source(k, &problem.f)?;
        let rhs = st.rhs(k, &u_next, &f_k, &f_next, &problem.g)?;
        let sys = st.system(k)?;
        monotonicity = Some(match monotonicity {
            None => sys.monotonicity.clone(),
            Some(m) => worse(m, &sys.monotonicity),
        });
        let psi = psi_level(grid, k, &data.psi)?;
        // warm start: projected unconstrained solution
        let mut u = u_next.clone();
        st.linear_solve(&sys, &rhs, &mut u)?;
        let rows = &sys.m.rows;
        let diag: Vec<f64> = rows.iter().enumerate().map(|(i, r)| r.diagonal(i)).collect();
        for i in 0..u.len() {
            if rows[i].kind != RowKind::Dirichlet {
                u[i] = u[i].max(psi[i]);
            }
        }
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for it in 1..=psor.max_iters {
            for (i, r) in rows.iter().enumerate() {
                if r.kind == RowKind::Dirichlet {
                    continue;
                }
                let res = rhs[i] - r.dot(&u);
                u[i] = psi[i].max(u[i] + psor.omega * res / diag[i]);
            }
            residual = lcp_residual(rows, &u, &rhs, &psi);
            if residual <= psor.tol {
                iterations[k] = it;
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PsorNonConvergence {
                iterations: psor.max_iters,
                residual,
            });
        }
        max_residual = max_residual.max(residual);
        levels[k] = GridFunction::from_vec(grid.shape().to_vec(), u.clone());
        u_next = u;
        f_next = f_k;
    }
    Ok(ObstacleSolution {
        trajectory: Trajectory {
            times: grid.times().to_vec(),
            levels,
        },
        iterations,
        max_residual,
        monotonicity: monotonicity.expect("at least one step"),
    })
}

fn lcp_residual(rows: &[crate::assembly::Row], u: &[f64], rhs: &[f64], psi: &[f64]) -> f64 {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.kind != RowKind::Dirichlet)
        .map(|(i, r)| (u[i] - psi[i]).min(r.dot(u) - rhs[i]).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityDiagnostics {
    /// `max (psi - u)^+`
    pub obstacle_violation: f64,
    /// `max (f - Lu)^+` with the discrete `Lu`
    pub equation_violation: f64,
    /// `max |min(Lu - f, u - psi)|`
    pub complementarity: f64,
}

/// Sup-norm diagnostics of a trajectory against the obstacle system over
/// interior and degenerate-boundary nodes of every level below the top.
pub fn complementarity_residual(
    op: &ParabolicOperator,
    grid: &Grid,
    trajectory: &Trajectory,
    data: &ObstacleData,
    cfg: &SolverConfig,
) -> Result<ComplementarityDiagnostics> {
    if trajectory.num_levels() != grid.num_levels() {
        return Err(Error::GridMismatch("trajectory level count differs".into()));
    }
    let mut st = Stepper::new(op, grid, cfg)?;
    let problem = data.problem();
    let mut out = ComplementarityDiagnostics {
        obstacle_violation: 0.0,
        equation_violation: 0.0,
        complementarity: 0.0,
    };
    let top = grid.top_level();
    let mut f_next = st.source(top, &problem.f)?;
    for k in (0..top).rev() {
        let f_k = st.source(k, &problem.f)?;
        let u_next = trajectory.level(k + 1).values();
        let rhs = st.rhs(k, u_next, &f_k, &f_next, &problem.g)?;
        let sys = st.system(k)?;
        let u = trajectory.level(k).values();
        let psi = psi_level(grid, k, &data.psi)?;
        for (i, r) in sys.m.rows.iter().enumerate() {
            if r.kind == RowKind::Dirichlet {
                continue;
            }
            let lu_minus_f = r.dot(u) - rhs[i];
            let gap = u[i] - psi[i];
            out.obstacle_violation = out.obstacle_violation.max(-gap);
            out.equation_violation = out.equation_violation.max(-lu_minus_f);
            out.complementarity = out.complementarity.max(lu_minus_f.min(gap).abs());
        }
        f_next = f_k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_degenerate_boundary, DomainSpec};
    use crate::grid::{build_grid, Resolution};
    use crate::operator::{make_heston, HestonParams};
    use crate::solver::solve_terminal_value_problem;

    fn setup(r: f64) -> (ParabolicOperator, Grid) {
        let p = HestonParams {
            sigma: 0.3,
            rho: -0.5,
            kappa: 1.5,
            theta: 0.04,
            r,
            q: 0.0,
        };
        let op = make_heston(p).unwrap();
        let (n1, n2) = (21, 11);
        let h1 = 3.0 / (n1 - 1) as f64;
        let dom = DomainSpec::new(0.5, vec![(-1.5, 1.5), (0.0, p.sigma * h1 * (n2 - 1) as f64)])
            .unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
        let g = build_grid(&dom, &part, &Resolution::new(vec![n1, n2], 11)).unwrap();
        (op, g)
    }

    fn put(_t: f64, x: &[f64]) -> f64 {
        (1.0 - x[0].exp()).max(0.0)
    }

    #[test]
    fn inactive_obstacle_matches_linear_solve() {
        let (op, g) = setup(0.05);
        let data = ObstacleData::new(|_, x| x[1] - 0.5, |t, x| x[0] * (1.0 - t), |_, _| -1e6);
        let cfg = SolverConfig::default();
        let obs = solve_obstacle_problem(&op, &g, &data, &cfg, &Default::default()).unwrap();
        let lin = solve_terminal_value_problem(&op, &g, &data.problem(), &cfg).unwrap();
        assert!(obs.trajectory.max_abs_diff(&lin.trajectory) < 1e-8);
    }

    #[test]
    fn constant_obstacle_is_fully_active() {
        let (op, g) = setup(0.0);
        let data = ObstacleData::new(|_, _| 0.0, |_, _| 0.7, |_, _| 0.7);
        let obs = solve_obstacle_problem(&op, &g, &data, &Default::default(), &Default::default())
            .unwrap();
        for l in &obs.trajectory.levels {
            assert!(l.values().iter().all(|v| (v - 0.7).abs() < 1e-10));
        }
    }

    #[test]
    fn american_put_has_exercise_region() {
        let (op, g) = setup(0.08);
        let data = ObstacleData::new(|_, _| 0.0, put, put);
        let cfg = SolverConfig::default();
        let obs = solve_obstacle_problem(&op, &g, &data, &cfg, &Default::default()).unwrap();
        for k in 0..g.num_levels() {
            let l = obs.trajectory.level(k);
            for n in 0..g.num_nodes() {
                assert!(l[n] >= put(0.0, &g.coords(n)) - 1e-15 || g.is_dirichlet(k, n));
            }
        }
        let mask = obs.contact_mask(&g, &data, 0, 1e-12);
        assert!(mask.values().iter().sum::<f64>() > 0.0);
        let diag = complementarity_residual(&op, &g, &obs.trajectory, &data, &cfg).unwrap();
        assert_eq!(diag.obstacle_violation, 0.0);
        assert!(diag.complementarity <= 1e-8, "{diag:?}");
        assert!(diag.equation_violation <= 1e-8);
        let lin = solve_terminal_value_problem(&op, &g, &data.problem(), &cfg).unwrap();
        let lin_diag = complementarity_residual(&op, &g, &lin.trajectory, &data, &cfg).unwrap();
        assert!(lin_diag.obstacle_violation > 0.0);
    }

    #[test]
    fn constructed_obstacle_violation_is_measured() {
        let (op, g) = setup(0.05);
        let data = ObstacleData::new(|_, _| 0.0, put, put);
        let cfg = SolverConfig::default();
        let mut obs = solve_obstacle_problem(&op, &g, &data, &cfg, &Default::default())
            .unwrap()
            .trajectory;
        let n = g.node_at(&[5, 4]);
        obs.levels[2][n] = put(0.0, &g.coords(n)) - 0.1;
        let diag = complementarity_residual(&op, &g, &obs, &data, &cfg).unwrap();
        assert!((diag.obstacle_violation - 0.1).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_solution_under_active_obstacle_violates_equation_side() {
        let (op, g) = setup(0.05);
        // strongly negative source drags the linear solution below psi = 0
        let data = ObstacleData::new(|_, _| -5.0, |_, _| 0.0, |_, _| 0.0);
        let cfg = SolverConfig::default();
        let lin = solve_terminal_value_problem(&op, &g, &data.problem(), &cfg).unwrap();
        let diag = complementarity_residual(&op, &g, &lin.trajectory, &data, &cfg).unwrap();
        assert!(diag.obstacle_violation > 0.0);
        assert!(diag.complementarity > 0.0);
    }

    #[test]
    fn compatibility() {
        let (_, g) = setup(0.05);
        let ok = ObstacleData::new(|_, _| 0.0, put, put);
        let v = check_compatibility(&ok, &g);
        assert!(v.pass);
        assert_eq!(v.worst_margin, 0.0);
        let bad = ObstacleData::new(|_, _| 0.0, put, |t, x| put(t, x) + if x[0] >= 1.5 { 1.0 } else { 0.0 });
        let v = check_compatibility(&bad, &g);
        assert!(!v.pass);
        assert!((v.worst_margin - 1.0).abs() < 1e-12);
        let (_, node) = v.witness.unwrap();
        assert_eq!(g.coords(node)[0], 1.5);
        let (op, _) = setup(0.05);
        assert!(matches!(
            solve_obstacle_problem(&op, &g, &bad, &Default::default(), &Default::default()),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn raising_the_obstacle_never_lowers_the_solution() {
        let (op, g) = setup(0.05);
        let cfg = SolverConfig::default();
        let lo = ObstacleData::new(|_, _| 0.0, |_, _| 1.0, |_, x| 0.5 + 0.2 * x[0]);
        let hi = ObstacleData::new(|_, _| 0.0, |_, _| 1.0, |_, x| 0.6 + 0.2 * x[0]);
        let a = solve_obstacle_problem(&op, &g, &lo, &cfg, &Default::default()).unwrap();
        let b = solve_obstacle_problem(&op, &g, &hi, &cfg, &Default::default()).unwrap();
        for k in 0..g.num_levels() {
            for n in 0..g.num_nodes() {
                assert!(b.trajectory.value(k, n) >= a.trajectory.value(k, n) - 1e-9);
            }
        }
    }
}
