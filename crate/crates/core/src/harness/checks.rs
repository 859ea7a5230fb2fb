//! Discrete maximum-principle checks on solved instances.
//!
//! Suprema of `f` and `psi` are grid maxima over interior and
//! degenerate-boundary nodes below the top level; suprema of `g` are grid
//! maxima over Dirichlet nodes of every level.

use crate::error::{Error, Result};
use crate::geometry::{reachable_set, NodeRef};
use crate::grid::{Grid, Trajectory};
use crate::operator::ScalarField;

use super::instance::ProblemInstance;
use super::report::{Verdict, Witness};

/// Grid suprema of the data of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataBounds {
    pub sup_f: f64,
    pub inf_f: f64,
    pub sup_g: f64,
    pub inf_g: f64,
    pub sup_psi: Option<f64>,
}

impl DataBounds {
    pub fn sup_abs_f(&self) -> f64 {
        self.sup_f.abs().max(self.inf_f.abs())
    }

    pub fn sup_abs_g(&self) -> f64 {
        self.sup_g.abs().max(self.inf_g.abs())
    }
}

fn equation_nodes(grid: &Grid) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..grid.top_level()).flat_map(move |k| {
        (0..grid.num_nodes())
            .filter(move |&n| !grid.is_dirichlet(k, n))
            .map(move |n| (k, n))
    })
}

fn dirichlet_nodes(grid: &Grid) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..grid.num_levels()).flat_map(move |k| {
        (0..grid.num_nodes())
            .filter(move |&n| grid.is_dirichlet(k, n))
            .map(move |n| (k, n))
    })
}

fn extrema(grid: &Grid, nodes: impl Iterator<Item = (usize, usize)>, h: &ScalarField) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, n) in nodes {
        let v = h(grid.time(k), &grid.coords(n));
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

pub fn data_bounds(grid: &Grid, f: &ScalarField, g: &ScalarField, psi: Option<&ScalarField>) -> DataBounds {
    let (inf_f, sup_f) = extrema(grid, equation_nodes(grid), f);
    let (inf_g, sup_g) = extrema(grid, dirichlet_nodes(grid), g);
    DataBounds {
        sup_f,
        inf_f,
        sup_g,
        inf_g,
        sup_psi: psi.map(|p| extrema(grid, equation_nodes(grid), p).1),
    }
}

/// Per-difference bounds between the data of two instances on one grid.
fn data_diff(grid: &Grid, a: &ProblemInstance, b: &ProblemInstance) -> (f64, f64, f64) {
    let diff = |x: &ScalarField, y: &ScalarField, nodes: &mut dyn Iterator<Item = (usize, usize)>| {
        nodes
            .map(|(k, n)| {
                let (t, p) = (grid.time(k), grid.coords(n));
                (x(t, &p) - y(t, &p)).abs()
            })
            .fold(0.0, f64::max)
    };
    let df = diff(&a.f, &b.f, &mut equation_nodes(grid));
    let dg = diff(&a.g, &b.g, &mut dirichlet_nodes(grid));
    let dpsi = match (&a.psi, &b.psi) {
        (Some(p), Some(q)) => diff(p, q, &mut equation_nodes(grid)),
        _ => 0.0,
    };
    (df, dg, dpsi)
}

fn witness(grid: &Grid, level: usize, node: usize, note: String) -> Witness {
    Witness {
        level,
        node,
        t: grid.time(level),
        x: grid.coords(node),
        note,
    }
}

/// Worst of `excess(level, node, u)` over every node of every level.
fn nodewise(
    grid: &Grid,
    traj: &Trajectory,
    property: &str,
    statement: String,
    tol: f64,
    excess: impl Fn(usize, usize, f64) -> f64,
) -> Verdict {
    let mut worst = 0.0_f64;
    let mut at = None;
    for k in 0..grid.num_levels() {
        for n in 0..grid.num_nodes() {
            let u = traj.value(k, n);
            let e = excess(k, n, u);
            if e > worst || e.is_nan() {
                worst = if e.is_nan() { f64::INFINITY } else { e };
                at = Some((k, n, u));
            }
        }
    }
    let w = at.map(|(k, n, u)| witness(grid, k, n, format!("u = {u:.6e}, excess {worst:.3e}")));
    Verdict::measured(property, statement, worst, tol, w)
}

fn check_layout(grid: &Grid, traj: &Trajectory) -> Result<()> {
    if traj.num_levels() != grid.num_levels()
        || traj.levels.iter().any(|l| l.len() != grid.num_nodes())
    {
        return Err(Error::GridMismatch("trajectory does not match the instance grid".into()));
    }
    Ok(())
}

/// The six a-priori estimates for sub-, super- and solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeakMaxItem {
    /// `c >= 0`, `Lu <= 0`: `u <= 0 v sup g`.
    SubsolutionNonneg,
    /// `c >= c0`: `u <= 0 v sup f / c0 v sup g`.
    SubsolutionCoercive,
    /// `c >= 0`, `Lv >= 0`: `v >= 0 ^ inf g`.
    SupersolutionNonneg,
    /// `c >= c0`: `v >= 0 ^ inf f / c0 ^ inf g`.
    SupersolutionCoercive,
    /// `c >= 0`, `Lu = 0`: `|u| <= sup |g|`.
    SolutionNonneg,
    /// `c >= c0`: `|u| <= sup |f| / c0 v sup |g|`.
    SolutionCoercive,
}

impl WeakMaxItem {
    pub const ALL: [WeakMaxItem; 6] = [
        WeakMaxItem::SubsolutionNonneg,
        WeakMaxItem::SubsolutionCoercive,
        WeakMaxItem::SupersolutionNonneg,
        WeakMaxItem::SupersolutionCoercive,
        WeakMaxItem::SolutionNonneg,
        WeakMaxItem::SolutionCoercive,
    ];

    pub fn id(self) -> &'static str {
        match self {
            WeakMaxItem::SubsolutionNonneg => "weak-max/sub-c-nonneg",
            WeakMaxItem::SubsolutionCoercive => "weak-max/sub-c-coercive",
            WeakMaxItem::SupersolutionNonneg => "weak-max/super-c-nonneg",
            WeakMaxItem::SupersolutionCoercive => "weak-max/super-c-coercive",
            WeakMaxItem::SolutionNonneg => "weak-max/solution-c-nonneg",
            WeakMaxItem::SolutionCoercive => "weak-max/solution-c-coercive",
        }
    }

    fn needs_c0(self) -> bool {
        matches!(
            self,
            WeakMaxItem::SubsolutionCoercive
                | WeakMaxItem::SupersolutionCoercive
                | WeakMaxItem::SolutionCoercive
        )
    }

    /// Whether the instance satisfies the item's hypotheses.
    pub fn applies(self, inst: &ProblemInstance, b: &DataBounds) -> std::result::Result<(), String> {
        if self.needs_c0() {
            match inst.tags.c0 {
                Some(c0) if inst.tags.c_min >= c0 => {}
                _ => return Err(format!("{} needs c >= c0 > 0", self.id())),
            }
        } else if !inst.tags.c_nonnegative() {
            return Err(format!("{} needs c >= 0, sampled min {}", self.id(), inst.tags.c_min));
        }
        match self {
            WeakMaxItem::SubsolutionNonneg if b.sup_f > 0.0 => {
                Err(format!("{} needs f <= 0, sup f = {}", self.id(), b.sup_f))
            }
            WeakMaxItem::SupersolutionNonneg if b.inf_f < 0.0 => {
                Err(format!("{} needs f >= 0, inf f = {}", self.id(), b.inf_f))
            }
            WeakMaxItem::SolutionNonneg if b.sup_abs_f() != 0.0 => {
                Err(format!("{} needs f = 0", self.id()))
            }
            _ => Ok(()),
        }
    }
}

/// Checks one a-priori estimate on a solution of `Lu = f`, `u = g` on the
/// Dirichlet nodes. A solution is both a sub- and a supersolution, so every
/// item applies once its hypotheses on `c` and `f` hold.
pub fn check_weak_max_bound(
    inst: &ProblemInstance,
    traj: &Trajectory,
    item: WeakMaxItem,
    slack: f64,
) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let b = data_bounds(grid, &inst.f, &inst.g, None);
    item.applies(inst, &b).map_err(Error::RegimeMismatch)?;
    let c0 = inst.tags.c0.unwrap_or(f64::NAN);
    let v = match item {
        WeakMaxItem::SubsolutionNonneg => {
            let m = b.sup_g.max(0.0);
            nodewise(grid, traj, item.id(), format!("u <= 0 v sup g = {m:.6e}"), slack, |_, _, u| u - m)
        }
        WeakMaxItem::SubsolutionCoercive => {
            let m = 0.0_f64.max(b.sup_f / c0).max(b.sup_g);
            nodewise(
                grid,
                traj,
                item.id(),
                format!("u <= 0 v sup f/c0 v sup g = {m:.6e}"),
                slack,
                |_, _, u| u - m,
            )
        }
        WeakMaxItem::SupersolutionNonneg => {
            let m = b.inf_g.min(0.0);
            nodewise(grid, traj, item.id(), format!("u >= 0 ^ inf g = {m:.6e}"), slack, |_, _, u| m - u)
        }
        WeakMaxItem::SupersolutionCoercive => {
            let m = 0.0_f64.min(b.inf_f / c0).min(b.inf_g);
            nodewise(
                grid,
                traj,
                item.id(),
                format!("u >= 0 ^ inf f/c0 ^ inf g = {m:.6e}"),
                slack,
                |_, _, u| m - u,
            )
        }
        WeakMaxItem::SolutionNonneg => {
            let m = b.sup_abs_g();
            nodewise(grid, traj, item.id(), format!("|u| <= sup|g| = {m:.6e}"), slack, |_, _, u| u.abs() - m)
        }
        WeakMaxItem::SolutionCoercive => {
            let m = (b.sup_abs_f() / c0).max(b.sup_abs_g());
            nodewise(
                grid,
                traj,
                item.id(),
                format!("|u| <= sup|f|/c0 v sup|g| = {m:.6e}"),
                slack,
                |_, _, u| u.abs() - m,
            )
        }
    };
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightedBound {
    Upper,
    Lower,
    Abs,
}

impl WeightedBound {
    pub const ALL: [WeightedBound; 3] = [WeightedBound::Upper, WeightedBound::Lower, WeightedBound::Abs];

    pub fn id(self) -> &'static str {
        match self {
            WeightedBound::Upper => "time-weighted/upper",
            WeightedBound::Lower => "time-weighted/lower",
            WeightedBound::Abs => "time-weighted/abs",
        }
    }
}

/// `e^{(K0 + 1)(T - t)}` at a level.
pub fn time_weight(grid: &Grid, k0: f64, level: usize) -> f64 {
    ((k0 + 1.0) * (grid.domain().t_final - grid.time(level))).exp()
}

/// Time-weighted estimate for `c >= -K0` on a finite horizon, with `K0` the
/// sampled `max(0, -min c)`. The weight multiplies the whole right-hand
/// side: `u <= e^{(K0+1)(T-t)} max(0, sup f, sup g)` and the matching lower
/// and two-sided forms. Weighting only the `f` term is not valid when `c < 0`
/// (see the `weight_on_source_only_is_too_weak` test).
pub fn check_time_weighted_bound(
    inst: &ProblemInstance,
    traj: &Trajectory,
    which: WeightedBound,
    slack: f64,
) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    if inst.tags.c_min < -inst.tags.k0 {
        return Err(Error::RegimeMismatch("c below -K0".into()));
    }
    let k0 = inst.tags.k0;
    let b = data_bounds(grid, &inst.f, &inst.g, None);
    let w: Vec<f64> = (0..grid.num_levels()).map(|k| time_weight(grid, k0, k)).collect();
    let v = match which {
        WeightedBound::Upper => {
            let m = 0.0_f64.max(b.sup_f).max(b.sup_g);
            nodewise(
                grid,
                traj,
                which.id(),
                format!("u <= e^((K0+1)(T-t)) max(0, sup f, sup g), K0 = {k0:.4e}, max = {m:.6e}"),
                slack,
                |k, _, u| u - w[k] * m,
            )
        }
        WeightedBound::Lower => {
            let m = 0.0_f64.min(b.inf_f).min(b.inf_g);
            nodewise(
                grid,
                traj,
                which.id(),
                format!("u >= e^((K0+1)(T-t)) min(0, inf f, inf g), K0 = {k0:.4e}, min = {m:.6e}"),
                slack,
                |k, _, u| w[k] * m - u,
            )
        }
        WeightedBound::Abs => {
            let m = b.sup_abs_f().max(b.sup_abs_g());
            nodewise(
                grid,
                traj,
                which.id(),
                format!("|u| <= e^((K0+1)(T-t)) max(sup|f|, sup|g|), K0 = {k0:.4e}, max = {m:.6e}"),
                slack,
                |k, _, u| u.abs() - w[k] * m,
            )
        }
    };
    Ok(v)
}

/// Largest `a - b` of the data over the relevant nodes: `(f, g, psi)`.
fn data_excess(grid: &Grid, a: &ProblemInstance, b: &ProblemInstance) -> (f64, f64, f64) {
    let excess = |x: &ScalarField, y: &ScalarField, nodes: &mut dyn Iterator<Item = (usize, usize)>| {
        nodes
            .map(|(k, n)| {
                let (t, p) = (grid.time(k), grid.coords(n));
                x(t, &p) - y(t, &p)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let f = excess(&a.f, &b.f, &mut equation_nodes(grid));
    let g = excess(&a.g, &b.g, &mut dirichlet_nodes(grid));
    let psi = match (&a.psi, &b.psi) {
        (Some(p), Some(q)) => excess(p, q, &mut equation_nodes(grid)),
        _ => f64::NEG_INFINITY,
    };
    (f, g, psi)
}

fn same_problem_grid(a: &ProblemInstance, b: &ProblemInstance) -> Result<()> {
    if !a.grid.same_layout(&b.grid) {
        return Err(Error::GridMismatch("paired instances use different grids".into()));
    }
    Ok(())
}

/// `u <= v` for solutions with `f_u <= f_v` and `g_u <= g_v` (and
/// `psi_u <= psi_v` when both carry obstacles).
pub fn check_comparison(
    lo: &ProblemInstance,
    u: &Trajectory,
    hi: &ProblemInstance,
    v: &Trajectory,
    tol: f64,
) -> Result<Verdict> {
    same_problem_grid(lo, hi)?;
    check_layout(&lo.grid, u)?;
    check_layout(&hi.grid, v)?;
    let (df, dg, dpsi) = data_excess(&lo.grid, lo, hi);
    if df > 0.0 || dg > 0.0 || dpsi > 0.0 {
        return Err(Error::RegimeMismatch(format!(
            "data not ordered: max(f_u - f_v) = {df:e}, max(g_u - g_v) = {dg:e}, max(psi_u - psi_v) = {dpsi:e}"
        )));
    }
    Ok(nodewise(
        &lo.grid,
        u,
        "comparison",
        "u <= v for ordered data".into(),
        tol,
        |k, n, uu| uu - v.value(k, n),
    ))
}

/// `|u - v|` for two solves of the same problem.
pub fn check_uniqueness(grid: &Grid, u: &Trajectory, v: &Trajectory, tol: f64) -> Result<Verdict> {
    check_layout(grid, u)?;
    check_layout(grid, v)?;
    Ok(nodewise(grid, u, "uniqueness", "u = v for identical data".into(), tol, |k, n, uu| {
        (uu - v.value(k, n)).abs()
    }))
}

/// Single-solution estimates for the obstacle problem
/// `min(Lu - f, u - psi) = 0`, `u = g` on the Dirichlet nodes.
pub fn check_obstacle_estimates(inst: &ProblemInstance, traj: &Trajectory, slack: f64) -> Result<Vec<Verdict>> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let psi = inst
        .psi
        .as_ref()
        .ok_or_else(|| Error::RegimeMismatch("instance has no obstacle".into()))?;
    let b = data_bounds(grid, &inst.f, &inst.g, Some(psi));
    let sup_psi = b.sup_psi.expect("obstacle present");
    let mut out = Vec::new();
    out.push(nodewise(
        grid,
        traj,
        "obstacle/feasible",
        "u >= psi".into(),
        0.0,
        |k, n, u| {
            if grid.is_dirichlet(k, n) {
                0.0
            } else {
                psi(grid.time(k), &grid.coords(n)) - u
            }
        },
    ));
    let c_nonneg = inst.tags.c_nonnegative();
    let c0 = inst.tags.c0.filter(|&c0| inst.tags.c_min >= c0);
    if c_nonneg && b.inf_f >= 0.0 {
        let m = b.inf_g.min(0.0);
        out.push(nodewise(
            grid,
            traj,
            "obstacle/super-c-nonneg",
            format!("u >= 0 ^ inf g = {m:.6e}"),
            slack,
            |_, _, u| m - u,
        ));
    }
    if let Some(c0) = c0 {
        let m = 0.0_f64.min(b.inf_f / c0).min(b.inf_g);
        out.push(nodewise(
            grid,
            traj,
            "obstacle/super-c-coercive",
            format!("u >= 0 ^ inf f/c0 ^ inf g = {m:.6e}"),
            slack,
            |_, _, u| m - u,
        ));
    }
    if c_nonneg && b.sup_f <= 0.0 {
        let m = 0.0_f64.max(b.sup_g).max(sup_psi);
        out.push(nodewise(
            grid,
            traj,
            "obstacle/sub-c-nonneg",
            format!("u <= 0 v sup g v sup psi = {m:.6e}"),
            slack,
            |_, _, u| u - m,
        ));
    }
    if let Some(c0) = c0 {
        let m = 0.0_f64.max(b.sup_f / c0).max(b.sup_g).max(sup_psi);
        out.push(nodewise(
            grid,
            traj,
            "obstacle/sub-c-coercive",
            format!("u <= 0 v sup f/c0 v sup g v sup psi = {m:.6e}"),
            slack,
            |_, _, u| u - m,
        ));
    }
    let k0 = inst.tags.k0;
    let w: Vec<f64> = (0..grid.num_levels()).map(|k| time_weight(grid, k0, k)).collect();
    let hi = 0.0_f64.max(b.sup_f).max(b.sup_g).max(sup_psi);
    out.push(nodewise(
        grid,
        traj,
        "obstacle/time-weighted-upper",
        format!("u <= e^((K0+1)(T-t)) max(0, sup f, sup g, sup psi), K0 = {k0:.4e}"),
        slack,
        |k, _, u| u - w[k] * hi,
    ));
    let lo = 0.0_f64.min(b.inf_f).min(b.inf_g);
    out.push(nodewise(
        grid,
        traj,
        "obstacle/time-weighted-lower",
        format!("u >= e^((K0+1)(T-t)) min(0, inf f, inf g), K0 = {k0:.4e}"),
        slack,
        |k, _, u| w[k] * lo - u,
    ));
    Ok(out)
}

/// Pair estimates for two obstacle solutions on one grid: comparison when the
/// data are ordered (either way round) and the stability bounds whose
/// hypotheses hold.
pub fn check_obstacle_pair(
    a: &ProblemInstance,
    ua: &Trajectory,
    b: &ProblemInstance,
    ub: &Trajectory,
    slack: f64,
) -> Result<Vec<Verdict>> {
    same_problem_grid(a, b)?;
    let grid = &a.grid;
    check_layout(grid, ua)?;
    check_layout(grid, ub)?;
    if a.psi.is_none() || b.psi.is_none() {
        return Err(Error::RegimeMismatch("pair needs obstacles on both sides".into()));
    }
    let mut out = Vec::new();
    let (ef, eg, ep) = data_excess(grid, a, b);
    let (ff, fg, fp) = data_excess(grid, b, a);
    if ef <= 0.0 && eg <= 0.0 && ep <= 0.0 {
        out.push(check_comparison(a, ua, b, ub, slack)?);
        out.last_mut().expect("pushed").property = "obstacle/comparison".into();
    } else if ff <= 0.0 && fg <= 0.0 && fp <= 0.0 {
        out.push(check_comparison(b, ub, a, ua, slack)?);
        out.last_mut().expect("pushed").property = "obstacle/comparison".into();
    }
    let (df, dg, dpsi) = data_diff(grid, a, b);
    let diff = |k: usize, n: usize, u: f64| (u - ub.value(k, n)).abs();
    // both instances share the operator, so their tags agree
    let tags = &a.tags;
    if let Some(c0) = tags.c0.filter(|&c0| tags.c_min >= c0) {
        let m = (df / c0).max(dg).max(dpsi);
        out.push(nodewise(
            grid,
            ua,
            "obstacle/stability-coercive",
            format!("|u1 - u2| <= |df|/c0 v |dg| v |dpsi| = {m:.6e}"),
            slack,
            |k, n, u| diff(k, n, u) - m,
        ));
    }
    if df == 0.0 && tags.c_nonnegative() {
        let m = dg.max(dpsi);
        out.push(nodewise(
            grid,
            ua,
            "obstacle/stability-same-source",
            format!("|u1 - u2| <= |dg| v |dpsi| = {m:.6e}"),
            slack,
            |k, n, u| diff(k, n, u) - m,
        ));
    }
    let k0 = tags.k0;
    let m = df.max(dg).max(dpsi);
    let w: Vec<f64> = (0..grid.num_levels()).map(|k| time_weight(grid, k0, k)).collect();
    out.push(nodewise(
        grid,
        ua,
        "obstacle/stability-time-weighted",
        format!("|u1 - u2| <= e^((K0+1)(T-t)) max(|df|, |dg|, |dpsi|) = e^.. {m:.6e}"),
        slack,
        |k, n, u| diff(k, n, u) - w[k] * m,
    ));
    Ok(out)
}

/// Direct strong-maximum check: if `u` attains its global maximum over the
/// grid at `p0` (an interior or degenerate-boundary node), then `u` equals
/// `u(p0)` on the reachable set `S(p0)`.
///
/// Inconclusive when `p0` is not a global maximizer or the sign hypotheses
/// (`c >= 0`, `f <= 0`, `u(p0) >= 0`) fail.
pub fn check_strong_max_constancy(
    inst: &ProblemInstance,
    traj: &Trajectory,
    p0: NodeRef,
    tol: f64,
) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let set = reachable_set(grid, p0)?;
    let id = "strong-max/constancy";
    let stmt = "u = u(P0) on S(P0)";
    let b = data_bounds(grid, &inst.f, &inst.g, None);
    if !inst.tags.c_nonnegative() || b.sup_f > 0.0 {
        return Ok(Verdict::inconclusive(id, stmt, "needs c >= 0 and f <= 0"));
    }
    let u0 = traj.value(p0.level, p0.node);
    let global = traj.levels.iter().map(|l| l.max()).fold(f64::NEG_INFINITY, f64::max);
    if u0 < global - tol {
        return Ok(Verdict::inconclusive(id, stmt, "P0 is not a global maximizer"));
    }
    if u0 < -tol {
        return Ok(Verdict::inconclusive(id, stmt, "maximum is negative"));
    }
    Ok(max_deviation(grid, traj, set.reachable.iter().copied(), u0, id, stmt, tol))
}

/// Zero-maximum variant: if `u <= 0` and `u(p0) = 0`, then `u = 0` on the
/// slice component `C(p0)`. No sign condition on `c` is needed.
pub fn check_zero_max_slice(
    inst: &ProblemInstance,
    traj: &Trajectory,
    p0: NodeRef,
    tol: f64,
) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let set = reachable_set(grid, p0)?;
    let id = "strong-max/zero-slice";
    let stmt = "u = 0 on C(P0)";
    let b = data_bounds(grid, &inst.f, &inst.g, None);
    if b.sup_f > 0.0 {
        return Ok(Verdict::inconclusive(id, stmt, "needs f <= 0"));
    }
    let global = traj.levels.iter().map(|l| l.max()).fold(f64::NEG_INFINITY, f64::max);
    let u0 = traj.value(p0.level, p0.node);
    if global > tol || u0.abs() > tol {
        return Ok(Verdict::inconclusive(id, stmt, "needs u <= 0 and u(P0) = 0"));
    }
    let nodes = set.slice_component.iter().map(|&n| NodeRef {
        level: p0.level,
        node: n,
    });
    Ok(max_deviation(grid, traj, nodes, 0.0, id, stmt, tol))
}

fn max_deviation(
    grid: &Grid,
    traj: &Trajectory,
    nodes: impl Iterator<Item = NodeRef>,
    target: f64,
    id: &str,
    stmt: &str,
    tol: f64,
) -> Verdict {
    let mut worst = 0.0_f64;
    let mut at = None;
    for r in nodes {
        let d = (traj.value(r.level, r.node) - target).abs();
        if d > worst {
            worst = d;
            at = Some(r);
        }
    }
    let w = at.map(|r| witness(grid, r.level, r.node, format!("|u - {target:.6e}| = {worst:.3e}")));
    Verdict::measured(id, stmt, worst, tol, w)
}

/// Contrapositive form: with `c >= 0` and `f <= 0`, every node attaining the
/// global positive maximum (within `tie_tol`) is a Dirichlet node.
/// Violation = number of offending nodes.
pub fn check_argmax_on_dirichlet(inst: &ProblemInstance, traj: &Trajectory, tie_tol: f64) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let id = "strong-max/argmax-on-dirichlet";
    let stmt = "global positive maximum attained only on Dirichlet nodes";
    let b = data_bounds(grid, &inst.f, &inst.g, None);
    if !inst.tags.c_nonnegative() || b.sup_f > 0.0 {
        return Err(Error::RegimeMismatch("needs c >= 0 and f <= 0".into()));
    }
    let global = traj.levels.iter().map(|l| l.max()).fold(f64::NEG_INFINITY, f64::max);
    if global <= 0.0 {
        return Ok(Verdict::inconclusive(id, stmt, "no positive maximum"));
    }
    let mut bad = 0usize;
    let mut first = None;
    for k in 0..grid.num_levels() {
        for n in 0..grid.num_nodes() {
            if traj.value(k, n) >= global - tie_tol && !grid.is_dirichlet(k, n) {
                bad += 1;
                first.get_or_insert((k, n));
            }
        }
    }
    let w = first.map(|(k, n)| witness(grid, k, n, format!("u = {:.6e} = max", traj.value(k, n))));
    Ok(Verdict::measured(id, stmt, bad as f64, 0.0, w))
}

/// Boundary-point sign check at a boundary node `pbar` lying on exactly one
/// side face: the one-sided quotient `(u(pbar + h n) - u(pbar)) / h` along the
/// inward normal must be `<= -delta`.
///
/// Inconclusive unless `u(pbar)` is a strict maximum over the nodes of its
/// level within two steps along every axis, and one of: `c >= 0` with
/// `u(pbar) >= 0`, or `u(pbar) = 0`. At a degenerate-boundary node the normal
/// drift must be positive.
pub fn check_hopf_sign(inst: &ProblemInstance, traj: &Trajectory, pbar: NodeRef, delta: f64) -> Result<Verdict> {
    let grid = &inst.grid;
    check_layout(grid, traj)?;
    let id = "hopf/inward-quotient";
    let stmt = format!("(u(P + h n) - u(P))/h <= -{delta:e}");
    let sides = grid.sides_of(pbar.node);
    if sides.len() != 1 || pbar.level >= grid.top_level() {
        return Err(Error::InvalidParameter(format!(
            "node {} at level {} is not on exactly one side face below the top",
            pbar.node, pbar.level
        )));
    }
    let (axis, upper) = sides[0];
    let u0 = traj.value(pbar.level, pbar.node);
    let c_nonneg = inst.tags.c_nonnegative();
    if !((c_nonneg && u0 >= 0.0) || u0 == 0.0) {
        return Ok(Verdict::inconclusive(id, stmt, "needs c >= 0 and u >= 0, or u = 0 at P"));
    }
    if grid.class(pbar.node) == crate::grid::NodeClass::Degenerate {
        let x = grid.coords(pbar.node);
        let bn = inst.op.b_at(grid.time(pbar.level), &x)[axis] * if upper { -1.0 } else { 1.0 };
        if !(bn > 0.0) {
            return Ok(Verdict::inconclusive(id, stmt, "normal drift is not positive"));
        }
    }
    let idx = grid.multi_index(pbar.node);
    let shape = grid.shape();
    let mut strict = true;
    for n in 0..grid.num_nodes() {
        if n == pbar.node {
            continue;
        }
        let j = grid.multi_index(n);
        let near = j.iter().zip(&idx).all(|(a, b)| a.abs_diff(*b) <= 2);
        if near && traj.value(pbar.level, n) >= u0 - 1e-12 * u0.abs().max(1.0) {
            strict = false;
            break;
        }
    }
    if !strict {
        return Ok(Verdict::inconclusive(id, stmt, "no strict local maximum at P"));
    }
    debug_assert!(shape[axis] >= 3);
    let inner = grid
        .neighbor(pbar.node, axis, !upper)
        .expect("grid has at least three nodes per axis");
    let h = grid.spacing()[axis];
    let q = (traj.value(pbar.level, inner) - u0) / h;
    let w = witness(grid, pbar.level, pbar.node, format!("quotient {q:.6e}"));
    Ok(Verdict::measured(id, stmt, (q + delta).max(0.0), 0.0, Some(w)))
}
