//! Backward time marching for `Lu = f` on `Q`, `u = g` on the
//! non-degenerate parabolic boundary, with the first-order equation imposed
//! on degenerate boundary nodes.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_spatial_operator, verify_discrete_monotonicity, AssemblyOptions, DegenerateRows,
    MonotonicityReport,
    RowKind, SparseMatrix,
};
use crate::banded::{sor_solve, BandedLu};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, NodeClass, Trajectory};
use crate::operator::{ParabolicOperator, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LinearSolver {
    Banded,
    Sor { omega: f64, max_iters: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// 1 is implicit Euler, 0.5 Crank-Nicolson.
    pub theta: f64,
    pub linear: LinearSolver,
    pub tol_lin: f64,
    pub assembly: AssemblyOptions,
    /// Solve even when the stepping matrix fails the M-matrix check.
    pub allow_nonmonotone: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            linear: LinearSolver::Banded,
            tol_lin: 1e-10,
            assembly: AssemblyOptions::default(),
            allow_nonmonotone: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter(format!(
                "theta = {} outside [0, 1]",
                self.theta
            )));
        }
        if !(self.tol_lin > 0.0) {
            return Err(Error::InvalidParameter("tol_lin must be positive".into()));
        }
        if let LinearSolver::Sor { omega, max_iters } = self.linear {
            if !(omega > 0.0 && omega < 2.0) || max_iters == 0 {
                return Err(Error::InvalidParameter(format!(
                    "SOR needs omega in (0,2) and max_iters > 0, got {omega}, {max_iters}"
                )));
            }
        }
        Ok(())
    }
}

/// Source `f` and boundary/terminal data `g`, both functions of `(t, x)`.
#[derive(Clone)]
pub struct ProblemData {
    pub f: ScalarField,
    pub g: ScalarField,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ProblemData { .. }")
    }
}

impl ProblemData {
    pub fn new(
        f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            g: Arc::new(g),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub monotonicity: MonotonicityReport,
    pub linear_iterations: usize,
}

pub(crate) struct LevelSystem {
    pub a: SparseMatrix,
    pub m: SparseMatrix,
    pub lu: Option<BandedLu>,
    pub monotonicity: MonotonicityReport,
}

/// Assembles and factors the per-level systems, reusing them when the
/// operator does not depend on time.
pub(crate) struct Stepper<'a> {
    pub op: &'a ParabolicOperator,
    pub grid: &'a Grid,
    pub cfg: &'a SolverConfig,
    cache: Vec<Option<Arc<LevelSystem>>>,
}

impl<'a> Stepper<'a> {
    pub fn new(op: &'a ParabolicOperator, grid: &'a Grid, cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if op.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: op.dim(),
            });
        }
        Ok(Self {
            op,
            grid,
            cfg,
            cache: vec![None; grid.num_levels()],
        })
    }

    pub fn system(&mut self, level: usize) -> Result<Arc<LevelSystem>> {
        let slot = if self.op.is_time_homogeneous() { 0 } else { level };
        if let Some(s) = &self.cache[slot] {
            return Ok(s.clone());
        }
        let a = assemble_spatial_operator(
            self.op,
            self.grid,
            self.grid.time(level),
            &self.cfg.assembly,
        )?;
        let m = a.stepping(self.grid.dt(), self.cfg.theta);
        let monotonicity = verify_discrete_monotonicity(&m);
        if !monotonicity.pass && !self.cfg.allow_nonmonotone {
            return Err(Error::NotMonotone(format!(
                "level {level}: positive off-diagonal {:?}, worst dominance {:?}",
                monotonicity.positive_offdiag, monotonicity.worst_dominance
            )));
        }
        let lu = match self.cfg.linear {
            LinearSolver::Banded => Some(BandedLu::factor(&m)?),
            LinearSolver::Sor { .. } => None,
        };
        let sys = Arc::new(LevelSystem {
            a,
            m,
            lu,
            monotonicity,
        });
        if !self.op.is_time_homogeneous() {
            // only the neighbouring level is ever needed again
            if level + 2 < self.cache.len() {
                self.cache[level + 2] = None;
            }
        }
        self.cache[slot] = Some(sys.clone());
        Ok(sys)
    }

    /// Source values at equation rows of a level (zero at Dirichlet rows).
    pub fn source(&self, level: usize, f: &ScalarField) -> Result<Vec<f64>> {
        let t = self.grid.time(level);
        (0..self.grid.num_nodes())
            .map(|n| {
                if self.grid.is_dirichlet(level, n)
                    || crate::assembly::row_kind(self.grid, n, &self.cfg.assembly)
                        == RowKind::Dirichlet
                {
                    return Ok(0.0);
                }
                let x = self.grid.coords(n);
                let v = f(t, &x);
                finite(v, "source f", t, &x)
            })
            .collect()
    }

    /// Terminal values at the top level.
    pub fn terminal(&self, g: &ScalarField) -> Result<Vec<f64>> {
        let t = self.grid.time(self.grid.top_level());
        (0..self.grid.num_nodes())
            .map(|n| {
                let x = self.grid.coords(n);
                finite(g(t, &x), "terminal data g", t, &x)
            })
            .collect()
    }

    /// Right-hand side of the level-`k` system given the solution and source
    /// at level `k + 1`. Dirichlet rows carry `g`.
    pub fn rhs(
        &mut self,
        level: usize,
        u_next: &[f64],
        f_level: &[f64],
        f_next: &[f64],
        g: &ScalarField,
    ) -> Result<Vec<f64>> {
        let theta = self.cfg.theta;
        let dt = self.grid.dt();
        let sys = self.system(level)?;
        let explicit = if theta < 1.0 {
            Some(self.system(level + 1)?.a.mul_vec(u_next))
        } else {
            None
        };
        let t = self.grid.time(level);
        let mut rhs = vec![0.0; u_next.len()];
        for (i, r) in sys.m.rows.iter().enumerate() {
            if r.kind == RowKind::Dirichlet {
                let x = self.grid.coords(i);
                rhs[i] = finite(g(t, &x), "boundary data g", t, &x)?;
            } else {
                let mut v = u_next[i] / dt + theta * f_level[i];
                if let Some(e) = &explicit {
                    v += (1.0 - theta) * (f_next[i] - e[i]);
                }
                rhs[i] = v;
            }
        }
        Ok(rhs)
    }

    pub fn linear_solve(&self, sys: &LevelSystem, rhs: &[f64], x: &mut Vec<f64>) -> Result<usize> {
        match self.cfg.linear {
            LinearSolver::Banded => {
                x.copy_from_slice(rhs);
                sys.lu.as_ref().expect("banded factor present").solve(x)?;
                Ok(1)
            }
            LinearSolver::Sor { omega, max_iters } => {
                sor_solve(&sys.m, rhs, x, omega, self.cfg.tol_lin * 1e-2, max_iters)
            }
        }
    }
}

fn finite(v: f64, what: &str, t: f64, x: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            location: format!("t={t}, x={x:?}"),
        })
    }
}

pub(crate) fn worse(a: MonotonicityReport, b: &MonotonicityReport) -> MonotonicityReport {
    if !a.pass || b.pass {
        a
    } else {
        b.clone()
    }
}

/// Marches backward from `u(T) = g(T, .)`. Each step solves
/// `(I/dt + theta A_k) u^k = u^{k+1}/dt - (1-theta) A_{k+1} u^{k+1}
/// + theta f_k + (1-theta) f_{k+1}` with Dirichlet rows pinned to `g`.
/// `g` is only evaluated at Dirichlet nodes.
pub fn solve_terminal_value_problem(
    op: &ParabolicOperator,
    grid: &Grid,
    data: &ProblemData,
    cfg: &SolverConfig,
) -> Result<Solution> {
    let mut st = Stepper::new(op, grid, cfg)?;
    let top = grid.top_level();
    let mut levels = vec![GridFunction::zeros(grid); top + 1];
    let mut u_next = st.terminal(&data.g)?;
    let mut f_next = st.source(top, &data.f)?;
    levels[top] = GridFunction::from_vec(grid.shape().to_vec(), u_next.clone());
    let mut monotonicity: Option<MonotonicityReport> = None;
    let mut iterations = 0;
    for k in (0..top).rev() {
        let f_k = st.source(k, &data.f)?;
        let rhs = st.rhs(k, &u_next, &f_k, &f_next, &data.g)?;
        let sys = st.system(k)?;
        monotonicity = Some(match monotonicity {
            None => sys.monotonicity.clone(),
            Some(m) => worse(m, &sys.monotonicity),
        });
        let mut u = u_next.clone();
        iterations += st.linear_solve(&sys, &rhs, &mut u)?;
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "solution".into(),
                location: format!("level {k}, node {i}"),
            });
        }
        levels[k] = GridFunction::from_vec(grid.shape().to_vec(), u.clone());
        u_next = u;
        f_next = f_k;
    }
    Ok(Solution {
        trajectory: Trajectory {
            times: grid.times().to_vec(),
            levels,
        },
        monotonicity: monotonicity.expect("at least one step"),
        linear_iterations: iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// Sup difference over shared nodes in the inner half of the small box.
    pub max_diff_inner: f64,
    pub compared_nodes: usize,
}

/// Solves on two nested truncations with equal spacing and compares the
/// solutions on the inner half of the smaller box at every level.
pub fn truncation_sensitivity(
    op: &ParabolicOperator,
    small: &Grid,
    large: &Grid,
    data: &ProblemData,
    cfg: &SolverConfig,
) -> Result<TruncationReport> {
    if small.times() != large.times() || small.dim() != large.dim() {
        return Err(Error::GridMismatch("time levels or dimension differ".into()));
    }
    for a in 0..small.dim() {
        if (small.spacing()[a] - large.spacing()[a]).abs() > 1e-12 * small.spacing()[a] {
            return Err(Error::GridMismatch(format!("spacing differs on axis x{}", a + 1)));
        }
    }
    let us = solve_terminal_value_problem(op, small, data, cfg)?;
    let ul = solve_terminal_value_problem(op, large, data, cfg)?;
    let mut pairs = Vec::new();
    'nodes: for n in 0..small.num_nodes() {
        let x = small.coords(n);
        let mut idx = Vec::with_capacity(x.len());
        for (a, &xa) in x.iter().enumerate() {
            let (lo, hi) = small.domain().bounds[a];
            let q = 0.25 * (hi - lo);
            if xa < lo + q || xa > hi - q {
                continue 'nodes;
            }
            let (llo, _) = large.domain().bounds[a];
            let s = (xa - llo) / large.spacing()[a];
            let i = s.round();
            if (s - i).abs() > 1e-6 || i < 0.0 || i as usize >= large.shape()[a] {
                continue 'nodes;
            }
            idx.push(i as usize);
        }
        pairs.push((n, large.node_at(&idx)));
    }
    let mut max_diff: f64 = 0.0;
    for k in 0..small.num_levels() {
        for &(a, b) in &pairs {
            max_diff = max_diff.max((us.trajectory.value(k, a) - ul.trajectory.value(k, b)).abs());
        }
    }
    Ok(TruncationReport {
        max_diff_inner: max_diff,
        compared_nodes: pairs.len(),
    })
}

#[derive(Debug, Clone)]
pub struct ForcedBoundaryReport {
    /// Solution with first-order rows on the degenerate boundary.
    pub natural: Trajectory,
    /// Solution with Dirichlet rows there, pinned to the natural trace plus
    /// the offset.
    pub forced: Trajectory,
    /// `max |forced - natural|` over all nodes (at least `|offset|`).
    pub sup_diff: f64,
    /// The same maximum away from the degenerate boundary.
    pub interior_diff: f64,
    /// `| max|forced| - max|natural| |`.
    pub norm_change: f64,
}

/// Measures how much an extra Dirichlet condition on the degenerate
/// boundary changes the solution: solves with first-order boundary rows,
/// then again with Dirichlet rows on the degenerate nodes carrying that
/// solution's trace shifted by `offset`.
pub fn forced_degenerate_dirichlet(
    op: &ParabolicOperator,
    grid: &Grid,
    data: &ProblemData,
    cfg: &SolverConfig,
    offset: f64,
) -> Result<ForcedBoundaryReport> {
    let mut natural_cfg = cfg.clone();
    natural_cfg.assembly.degenerate_rows = DegenerateRows::FirstOrder;
    let natural = solve_terminal_value_problem(op, grid, data, &natural_cfg)?.trajectory;
    let mut forced_cfg = cfg.clone();
    forced_cfg.assembly.degenerate_rows = DegenerateRows::Dirichlet;
    let g = data.g.clone();
    let trace = Arc::new(natural.clone());
    let shared = Arc::new(grid.clone());
    let forced_g: ScalarField = Arc::new(move |t, x| {
        let grid = &shared;
        let k = ((t - grid.time(0)) / grid.dt()).round() as usize;
        let idx: Vec<usize> = (0..grid.dim())
            .map(|a| ((x[a] - grid.domain().bounds[a].0) / grid.spacing()[a]).round() as usize)
            .collect();
        let n = grid.node_at(&idx);
        if k < grid.top_level() && grid.class(n) == NodeClass::Degenerate {
            trace.value(k, n) + offset
        } else {
            g(t, x)
        }
    });
    let forced_data = ProblemData {
        f: data.f.clone(),
        g: forced_g,
    };
    let forced = solve_terminal_value_problem(op, grid, &forced_data, &forced_cfg)?.trajectory;
    let sup_diff = natural.max_abs_diff(&forced);
    let mut interior_diff: f64 = 0.0;
    for k in 0..grid.num_levels() {
        for n in 0..grid.num_nodes() {
            if grid.class(n) != NodeClass::Degenerate {
                interior_diff = interior_diff.max((forced.value(k, n) - natural.value(k, n)).abs());
            }
        }
    }
    let norm = |tr: &Trajectory| {
        tr.levels
            .iter()
            .flat_map(|l| l.values().iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    };
    let norm_change = (norm(&forced) - norm(&natural)).abs();
    Ok(ForcedBoundaryReport {
        natural,
        forced,
        sup_diff,
        interior_diff,
        norm_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_degenerate_boundary, DomainSpec};
    use crate::grid::{build_grid, NodeClass, Resolution};
    use crate::operator::{make_heston, HestonParams};

    fn params(r: f64) -> HestonParams {
        HestonParams {
            sigma: 0.3,
            rho: -0.5,
            kappa: 1.5,
            theta: 0.04,
            r,
            q: 0.0,
        }
    }

    /// Heston box with h2 = sigma h1 so that the cross stencil is monotone.
    fn setup(r: f64, n1: usize, n2: usize, levels: usize) -> (ParabolicOperator, Grid) {
        let p = params(r);
        let op = make_heston(p).unwrap();
        let h1 = 2.0 / (n1 - 1) as f64;
        let x2max = p.sigma * h1 * (n2 - 1) as f64;
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, x2max)]).unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
        let g = build_grid(&dom, &part, &Resolution::new(vec![n1, n2], levels)).unwrap();
        (op, g)
    }

    #[test]
    fn zero_data_gives_zero() {
        let (op, g) = setup(0.05, 11, 9, 6);
        let sol = solve_terminal_value_problem(&op, &g, &ProblemData::new(|_, _| 0.0, |_, _| 0.0), &Default::default())
            .unwrap();
        assert!(sol.monotonicity.pass);
        for l in &sol.trajectory.levels {
            assert!(l.values().iter().all(|v| v.abs() <= 1e-10));
        }
    }

    #[test]
    fn constants_solve_when_c_vanishes() {
        let (op, g) = setup(0.0, 11, 9, 6);
        let sol = solve_terminal_value_problem(&op, &g, &ProblemData::new(|_, _| 0.0, |_, _| 2.5), &Default::default())
            .unwrap();
        for l in &sol.trajectory.levels {
            assert!(l.values().iter().all(|v| (v - 2.5).abs() <= 1e-10));
        }
    }

    #[test]
    fn affine_solution_is_exact() {
        let (op, g) = setup(0.05, 11, 9, 6);
        let exact = |t: f64, x: &[f64]| 1.0 + 0.5 * t + x[0] + 2.0 * x[1];
        let op2 = op.clone();
        let f = move |t: f64, x: &[f64]| {
            let b = op2.b_at(t, x);
            let c = op2.c_at(t, x);
            -0.5 - b[0] - 2.0 * b[1] + c * exact(t, x)
        };
        let sol = solve_terminal_value_problem(&op, &g, &ProblemData::new(f, exact), &Default::default())
            .unwrap();
        for (k, l) in sol.trajectory.levels.iter().enumerate() {
            let e = g.sample(k, exact);
            assert!(l.max_abs_diff(&e) < 1e-10, "level {k}: {}", l.max_abs_diff(&e));
        }
    }

    #[test]
    fn sor_matches_banded() {
        let (op, g) = setup(0.05, 11, 9, 6);
        let data = ProblemData::new(|t, x| -(x[0] * x[0]) - t, |t, x| (x[0] + x[1]).sin() * (1.0 - t));
        let a = solve_terminal_value_problem(&op, &g, &data, &Default::default()).unwrap();
        let cfg = SolverConfig {
            linear: LinearSolver::Sor {
                omega: 1.3,
                max_iters: 100_000,
            },
            ..Default::default()
        };
        let b = solve_terminal_value_problem(&op, &g, &data, &cfg).unwrap();
        assert!(a.trajectory.max_abs_diff(&b.trajectory) < 1e-9);
        assert!(b.linear_iterations > 5);
    }

    #[test]
    fn time_dependent_path_matches_cached_path() {
        let (op, g) = setup(0.05, 9, 7, 5);
        let data = ProblemData::new(|_, x| x[1], |_, x| x[0]);
        let a = solve_terminal_value_problem(&op, &g, &data, &Default::default()).unwrap();
        let op_t = op.clone().time_homogeneous(false);
        let b = solve_terminal_value_problem(&op_t, &g, &data, &Default::default()).unwrap();
        assert!(a.trajectory.max_abs_diff(&b.trajectory) < 1e-13);
        let cn = SolverConfig {
            theta: 0.5,
            ..Default::default()
        };
        let c = solve_terminal_value_problem(&op_t, &g, &data, &cn).unwrap();
        assert!(a.trajectory.max_abs_diff(&c.trajectory) < 0.1);
    }

    #[test]
    fn g_is_never_read_on_degenerate_nodes_below_top() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let (op, g) = setup(0.05, 11, 9, 6);
        let reads = Arc::new(AtomicUsize::new(0));
        let r2 = reads.clone();
        let tf = g.domain().t_final;
        let data = ProblemData::new(|_, _| 0.0, move |t, x| {
            if x[1] == 0.0 && x[0] > -1.0 && x[0] < 1.0 && t < tf {
                r2.fetch_add(1, Ordering::SeqCst);
            }
            1.0
        });
        solve_terminal_value_problem(&op, &g, &data, &Default::default()).unwrap();
        assert_eq!(reads.load(Ordering::SeqCst), 0);
        assert_eq!(g.count(NodeClass::Degenerate), 9);
    }

    #[test]
    fn nonmonotone_refused_unless_allowed() {
        let p = params(0.05);
        let op = make_heston(p).unwrap();
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
        let g = build_grid(&dom, &part, &Resolution::new(vec![41, 5], 4)).unwrap();
        let data = ProblemData::new(|_, _| 0.0, |_, _| 1.0);
        assert!(matches!(
            solve_terminal_value_problem(&op, &g, &data, &Default::default()),
            Err(Error::NotMonotone(_))
        ));
        let cfg = SolverConfig {
            allow_nonmonotone: true,
            ..Default::default()
        };
        let sol = solve_terminal_value_problem(&op, &g, &data, &cfg).unwrap();
        assert!(!sol.monotonicity.pass);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = SolverConfig {
            theta: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            tol_lin: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn truncation_report_on_nested_boxes() {
        let p = params(0.05);
        let op = make_heston(p).unwrap();
        let h1 = 0.1;
        let h2 = p.sigma * h1;
        let mk = |half: f64, n1: usize, n2: usize| {
            let dom = DomainSpec::new(0.5, vec![(-half, half), (0.0, h2 * (n2 - 1) as f64)]).unwrap();
            let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
            build_grid(&dom, &part, &Resolution::new(vec![n1, n2], 6)).unwrap()
        };
        let small = mk(1.0, 21, 11);
        let large = mk(2.0, 41, 21);
        let data = ProblemData::new(|_, _| 0.0, |_, x: &[f64]| (1.0 - x[0].exp()).max(0.0));
        let rep = truncation_sensitivity(&op, &small, &large, &data, &Default::default()).unwrap();
        assert!(rep.compared_nodes > 0);
        assert!(rep.max_diff_inner.is_finite());
    }
}
