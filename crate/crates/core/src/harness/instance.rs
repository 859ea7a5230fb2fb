//! Seeded problem instances for the verification harness.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{classify_degenerate_boundary, ClassifyOptions, DomainSpec, FaceId};
use crate::grid::{build_grid, Grid, NodeClass};
use crate::obstacle::ObstacleData;
use crate::operator::{identity_laplacian, make_heston, HestonParams, ParabolicOperator, ScalarField};
use crate::solver::ProblemData;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Regime {
    /// `c >= c0 > 0`
    Coercive { c0: f64 },
    /// `c >= 0`
    NonNegative,
    /// `c >= -k0` on a finite time horizon
    BoundedBelow { k0: f64 },
}

impl Regime {
    pub fn label(&self) -> String {
        match self {
            Regime::Coercive { c0 } => format!("c>=c0={c0}"),
            Regime::NonNegative => "c>=0".into(),
            Regime::BoundedBelow { k0 } => format!("c>=-K0, K0<={k0}"),
        }
    }
}

/// Regime facts measured on the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeTags {
    pub regime: Regime,
    /// Minimum of `c` over grid nodes.
    pub c_min: f64,
    pub c0: Option<f64>,
    /// `max(0, -c_min)`
    pub k0: f64,
    pub t_final: f64,
}

impl RegimeTags {
    pub fn c_nonnegative(&self) -> bool {
        self.c_min >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSign {
    NonPositive,
    NonNegative,
    Mixed,
    Zero,
}

/// `offset + sum amp sin(k . x + omega t + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothField {
    pub offset: f64,
    pub waves: Vec<Wave>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amp: f64,
    pub k: Vec<f64>,
    pub omega: f64,
    pub phase: f64,
}

impl SmoothField {
    pub fn constant(v: f64) -> Self {
        Self {
            offset: v,
            waves: Vec::new(),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.offset
            + self
                .waves
                .iter()
                .map(|w| {
                    let arg: f64 = w.k.iter().zip(x).map(|(k, x)| k * x).sum::<f64>()
                        + w.omega * t
                        + w.phase;
                    w.amp * arg.sin()
                })
                .sum::<f64>()
    }

    pub fn amplitude(&self) -> f64 {
        self.waves.iter().map(|w| w.amp.abs()).sum()
    }

    pub fn random(rng: &mut ChaCha8Rng, dim: usize, sign: DataSign, scale: f64) -> Self {
        if sign == DataSign::Zero {
            return Self::constant(0.0);
        }
        let waves: Vec<Wave> = (0..3)
            .map(|_| Wave {
                amp: scale * rng.gen_range(0.05..0.5),
                k: (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect(),
                omega: rng.gen_range(-2.0..2.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let amp: f64 = waves.iter().map(|w| w.amp).sum();
        let margin = scale * rng.gen_range(0.01..0.3);
        let offset = match sign {
            DataSign::NonPositive => -(amp + margin),
            DataSign::NonNegative => amp + margin,
            DataSign::Mixed => rng.gen_range(-0.5..0.5) * amp,
            DataSign::Zero => unreachable!(),
        };
        Self { offset, waves }
    }

    pub fn into_field(self) -> ScalarField {
        Arc::new(move |t, x| self.eval(t, x))
    }
}

/// Coefficient families used by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// Heston operator on `(-1,1) x (0, X2)`, constant `c = r`.
    Heston { params: HestonParams },
    /// `a = x2 [[p,s],[s,q]]`, `b = (b10 + b11 sin(x1) - x2/2, b20 - b21 x2)`,
    /// `c = c(x)`, on `(-1,1) x (0, X2)`.
    Scaled2d {
        p: f64,
        q: f64,
        s: f64,
        b10: f64,
        b11: f64,
        b20: f64,
        b21: f64,
        c: SmoothField,
    },
    /// `a = I`, `b = 0`, `c = 0`.
    Laplacian { dim: usize },
    /// `a = alpha x`, `b = beta0 + beta1 x`, `c = c(x)` on `(0, 1)`.
    Linear1d {
        alpha: f64,
        beta0: f64,
        beta1: f64,
        c: SmoothField,
    },
}

impl Family {
    pub fn dim(&self) -> usize {
        match self {
            Family::Linear1d { .. } => 1,
            Family::Laplacian { dim } => *dim,
            _ => 2,
        }
    }

    /// `h2 / h1` that makes the mixed-derivative stencil monotone.
    pub fn aspect(&self) -> f64 {
        match self {
            Family::Heston { params } => params.sigma,
            Family::Scaled2d { p, q, .. } => (q / p).sqrt(),
            Family::Linear1d { .. } | Family::Laplacian { .. } => 1.0,
        }
    }

    pub fn operator(&self) -> Result<ParabolicOperator> {
        let c_static = match self {
            Family::Scaled2d { c, .. } | Family::Linear1d { c, .. } => {
                c.waves.iter().all(|w| w.omega == 0.0)
            }
            Family::Heston { .. } | Family::Laplacian { .. } => true,
        };
        match self.clone() {
            Family::Heston { params } => make_heston(params),
            Family::Laplacian { dim } => Ok(identity_laplacian(dim)),
            Family::Scaled2d {
                p,
                q,
                s,
                b10,
                b11,
                b20,
                b21,
                c,
            } => {
                if !(p > 0.0 && q > 0.0 && s * s < p * q) {
                    return Err(Error::InvalidParameter(format!(
                        "need p, q > 0 and s^2 < pq, got p={p}, q={q}, s={s}"
                    )));
                }
                let shape = DMatrix::from_row_slice(2, 2, &[p, s, s, q]);
                let shape_da = shape.clone();
                Ok(ParabolicOperator::new(
                    2,
                    Arc::new(move |_t, x: &[f64]| &shape * x[1]),
                    Arc::new(move |_t, x: &[f64]| {
                        DVector::from_column_slice(&[
                            b10 + b11 * x[0].sin() - 0.5 * x[1],
                            b20 - b21 * x[1],
                        ])
                    }),
                    Arc::new(move |t, x| c.eval(t, x)),
                )
                .with_derivatives(Arc::new(move |_t, _x| {
                    vec![DMatrix::zeros(2, 2), shape_da.clone()]
                }))
                .time_homogeneous(c_static)
                .named("scaled-2d"))
            }
            Family::Linear1d {
                alpha,
                beta0,
                beta1,
                c,
            } => Ok(ParabolicOperator::new(
                1,
                Arc::new(move |_t, x: &[f64]| DMatrix::from_element(1, 1, alpha * x[0])),
                Arc::new(move |_t, x: &[f64]| DVector::from_element(1, beta0 + beta1 * x[0])),
                Arc::new(move |t, x| c.eval(t, x)),
            )
            .with_derivatives(Arc::new(move |_t, _x| {
                vec![DMatrix::from_element(1, 1, alpha)]
            }))
            .time_homogeneous(c_static)
            .named("linear-1d")),
        }
    }

    /// Box with `n` nodes per axis and the monotone aspect ratio.
    pub fn domain(&self, t_final: f64, nodes: &[usize]) -> Result<DomainSpec> {
        match self {
            Family::Linear1d { .. } => DomainSpec::new(t_final, vec![(0.0, 1.0)]),
            Family::Laplacian { dim } => DomainSpec::new(t_final, vec![(0.0, 1.0); *dim]),
            _ => {
                let h1 = 2.0 / (nodes[0] - 1) as f64;
                let x2max = self.aspect() * h1 * (nodes[1] - 1) as f64;
                DomainSpec::new(t_final, vec![(-1.0, 1.0), (0.0, x2max)])
            }
        }
    }
}

/// Counts reads of `g` at points of the degenerate boundary below the top.
#[derive(Debug, Default)]
pub struct ReadCounter {
    reads: AtomicUsize,
}

impl ReadCounter {
    pub fn count(&self) -> usize {
        self.reads.load(Ordering::SeqCst)
    }
}

/// Wraps `g` so that reads on the relative interior of degenerate faces with
/// `t < T` are counted and answered with `ghost` when given.
pub fn instrument_boundary_data(
    g: ScalarField,
    grid: &Grid,
    ghost: Option<ScalarField>,
) -> (ScalarField, Arc<ReadCounter>) {
    let counter = Arc::new(ReadCounter::default());
    let c2 = counter.clone();
    let dom = grid.domain().clone();
    let deg: Vec<(usize, bool)> = dom
        .side_faces()
        .filter_map(|f| match f {
            FaceId::Side { axis, upper } if grid.partition().is_degenerate(f) => Some((axis, upper)),
            _ => None,
        })
        .collect();
    let nondeg: Vec<(usize, bool)> = dom
        .side_faces()
        .filter_map(|f| match f {
            FaceId::Side { axis, upper } if !grid.partition().is_degenerate(f) => {
                Some((axis, upper))
            }
            _ => None,
        })
        .collect();
    let on = move |x: &[f64], (axis, upper): (usize, bool)| {
        let (lo, hi) = dom.bounds[axis];
        let v = if upper { hi } else { lo };
        (x[axis] - v).abs() <= 1e-12 * (hi - lo)
    };
    let tf = grid.domain().t_final;
    let wrapped: ScalarField = Arc::new(move |t, x| {
        let degenerate = t < tf
            && deg.iter().any(|&f| on(x, f))
            && !nondeg.iter().any(|&f| on(x, f));
        if degenerate {
            c2.reads.fetch_add(1, Ordering::SeqCst);
            if let Some(gh) = &ghost {
                return gh(t, x);
            }
        }
        g(t, x)
    });
    (wrapped, counter)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecipe {
    pub regime: Regime,
    pub dim: usize,
    /// Nodes per axis.
    pub nodes: usize,
    pub time_levels: usize,
    pub f_sign: DataSign,
    pub g_sign: DataSign,
    pub with_obstacle: bool,
}

impl InstanceRecipe {
    pub fn new(regime: Regime, dim: usize) -> Self {
        Self {
            regime,
            dim,
            nodes: if dim == 1 { 33 } else { 17 },
            time_levels: 11,
            f_sign: DataSign::Mixed,
            g_sign: DataSign::Mixed,
            with_obstacle: false,
        }
    }

    pub fn signs(mut self, f: DataSign, g: DataSign) -> Self {
        self.f_sign = f;
        self.g_sign = g;
        self
    }

    pub fn obstacle(mut self, yes: bool) -> Self {
        self.with_obstacle = yes;
        self
    }

    pub fn resolution(mut self, nodes: usize, time_levels: usize) -> Self {
        self.nodes = nodes;
        self.time_levels = time_levels;
        self
    }
}

#[derive(Clone)]
pub struct ProblemInstance {
    pub seed: u64,
    pub family: Family,
    pub op: ParabolicOperator,
    pub grid: Grid,
    pub f: ScalarField,
    pub g: ScalarField,
    pub psi: Option<ScalarField>,
    pub tags: RegimeTags,
    pub description: String,
}

impl std::fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("seed", &self.seed)
            .field("family", &self.family)
            .field("tags", &self.tags)
            .field("description", &self.description)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub seed: u64,
    pub family: Family,
    pub tags: RegimeTags,
    pub shape: Vec<usize>,
    pub time_levels: usize,
    pub description: String,
}

impl ProblemInstance {
    /// Builds an instance from explicit parts and measures its regime tags.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        seed: u64,
        family: Family,
        regime: Regime,
        t_final: f64,
        nodes: &[usize],
        time_levels: usize,
        f: ScalarField,
        g: ScalarField,
        psi: Option<ScalarField>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let op = family.operator()?;
        let dom = family.domain(t_final, nodes)?;
        let part = classify_degenerate_boundary(&op, &dom, &ClassifyOptions::default())?;
        let grid = build_grid(&dom, &part, &crate::grid::Resolution::new(nodes.to_vec(), time_levels))?;
        Self::on_grid(seed, family, op, grid, regime, f, g, psi, description)
    }

    /// Builds an instance on an existing grid and measures its regime tags.
    #[allow(clippy::too_many_arguments)]
    pub fn on_grid(
        seed: u64,
        family: Family,
        op: ParabolicOperator,
        grid: Grid,
        regime: Regime,
        f: ScalarField,
        g: ScalarField,
        psi: Option<ScalarField>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let t_final = grid.domain().t_final;
        let mut c_min = f64::INFINITY;
        for k in 0..grid.num_levels() {
            for n in 0..grid.num_nodes() {
                c_min = c_min.min(op.c_at(grid.time(k), &grid.coords(n)));
            }
        }
        let c0 = match regime {
            Regime::Coercive { c0 } => Some(c0),
            _ => None,
        };
        let ok = match regime {
            Regime::Coercive { c0 } => c_min >= c0,
            Regime::NonNegative => c_min >= 0.0,
            Regime::BoundedBelow { k0 } => c_min >= -k0,
        };
        if !ok {
            return Err(Error::RegimeMismatch(format!(
                "sampled min c = {c_min} violates {}",
                regime.label()
            )));
        }
        Ok(Self {
            seed,
            family,
            op,
            grid,
            f,
            g,
            psi,
            tags: RegimeTags {
                regime,
                c_min,
                c0,
                k0: (-c_min).max(0.0),
                t_final,
            },
            description: description.into(),
        })
    }

    pub fn summary(&self) -> InstanceSummary {
        InstanceSummary {
            seed: self.seed,
            family: self.family.clone(),
            tags: self.tags.clone(),
            shape: self.grid.shape().to_vec(),
            time_levels: self.grid.num_levels(),
            description: self.description.clone(),
        }
    }

    pub fn data(&self) -> ProblemData {
        ProblemData {
            f: self.f.clone(),
            g: self.g.clone(),
        }
    }

    pub fn obstacle_data(&self) -> Option<ObstacleData> {
        self.psi.as_ref().map(|psi| ObstacleData {
            f: self.f.clone(),
            g: self.g.clone(),
            psi: psi.clone(),
        })
    }

    /// Same operator and grid, new data.
    pub fn with_data(&self, f: ScalarField, g: ScalarField, psi: Option<ScalarField>) -> Self {
        Self {
            f,
            g,
            psi,
            ..self.clone()
        }
    }
}

fn draw_c(rng: &mut ChaCha8Rng, dim: usize, regime: Regime) -> SmoothField {
    let mut c = SmoothField::random(rng, dim, DataSign::Mixed, 0.2);
    for w in &mut c.waves {
        w.omega = 0.0;
    }
    let amp = c.amplitude();
    c.offset = match regime {
        Regime::Coercive { c0 } => c0 + amp + rng.gen_range(0.0..0.2),
        // occasionally touch zero exactly
        Regime::NonNegative => {
            if rng.gen_bool(0.3) {
                c.waves.clear();
                0.0
            } else {
                amp + rng.gen_range(0.0..0.1)
            }
        }
        Regime::BoundedBelow { k0 } => -k0 + amp + rng.gen_range(0.0..0.5 * k0),
    };
    c
}

fn draw_family(rng: &mut ChaCha8Rng, dim: usize, regime: Regime) -> Family {
    if dim == 1 {
        return Family::Linear1d {
            alpha: rng.gen_range(0.2..1.0),
            beta0: rng.gen_range(0.1..1.0),
            beta1: rng.gen_range(-0.5..0.5),
            c: draw_c(rng, 1, regime),
        };
    }
    if rng.gen_bool(0.5) {
        let r = match regime {
            Regime::Coercive { c0 } => c0 + rng.gen_range(0.0..0.1),
            Regime::NonNegative => {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(0.0..0.1)
                }
            }
            Regime::BoundedBelow { k0 } => -rng.gen_range(0.0..k0),
        };
        Family::Heston {
            params: HestonParams {
                sigma: rng.gen_range(0.25..0.6),
                rho: rng.gen_range(-0.8..0.8),
                kappa: rng.gen_range(0.5..3.0),
                theta: rng.gen_range(0.02..0.2),
                r,
                q: rng.gen_range(0.0..0.05),
            },
        }
    } else {
        let p: f64 = rng.gen_range(0.2..1.0);
        let q = rng.gen_range(0.05..0.5);
        let s = rng.gen_range(-0.8..0.8) * (p * q).sqrt();
        Family::Scaled2d {
            p,
            q,
            s,
            b10: rng.gen_range(-0.3..0.3),
            b11: rng.gen_range(-0.3..0.3),
            b20: rng.gen_range(0.05..0.5),
            b21: rng.gen_range(0.0..1.0),
            c: draw_c(rng, 2, regime),
        }
    }
}

/// Reproducible random instance; the data signs and obstacle presence come
/// from the recipe.
pub fn random_instance(seed: u64, recipe: &InstanceRecipe) -> Result<ProblemInstance> {
    if !(1..=2).contains(&recipe.dim) {
        return Err(Error::Unsupported(format!("dimension {}", recipe.dim)));
    }
    match recipe.regime {
        Regime::Coercive { c0 } if !(c0 > 0.0) => {
            return Err(Error::InvalidParameter("c0 must be positive".into()))
        }
        Regime::BoundedBelow { k0 } if !(k0 > 0.0) || k0 > 1.0 => {
            return Err(Error::InvalidParameter("K0 must lie in (0, 1]".into()))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = draw_family(&mut rng, recipe.dim, recipe.regime);
    let t_final = rng.gen_range(0.5..1.5);
    let f = SmoothField::random(&mut rng, recipe.dim, recipe.f_sign, 1.0);
    let g = SmoothField::random(&mut rng, recipe.dim, recipe.g_sign, 1.0);
    let psi = if recipe.with_obstacle {
        // an obstacle that pokes above the data in places, capped by g
        let mut s = SmoothField::random(&mut rng, recipe.dim, DataSign::Mixed, 1.0);
        s.offset = g.offset + rng.gen_range(-0.3..0.3) * (g.amplitude() + 0.1);
        let (gs, ss) = (g.clone(), s);
        let cap: ScalarField = Arc::new(move |t, x| ss.eval(t, x).min(gs.eval(t, x)));
        Some(cap)
    } else {
        None
    };
    let desc = format!(
        "f: {:?} field, g: {:?} field{}",
        recipe.f_sign,
        recipe.g_sign,
        if recipe.with_obstacle { ", obstacle min(s, g)" } else { "" }
    );
    let nodes = vec![recipe.nodes; recipe.dim];
    ProblemInstance::from_parts(
        seed,
        family,
        recipe.regime,
        t_final,
        &nodes,
        recipe.time_levels,
        f.into_field(),
        g.into_field(),
        psi,
        desc,
    )
}

/// Degenerate-boundary nodes of an instance grid.
pub fn degenerate_nodes(inst: &ProblemInstance) -> Vec<usize> {
    inst.grid.nodes_of(NodeClass::Degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_spatial_operator, verify_discrete_monotonicity};

    #[test]
    fn coercive_instance_respects_c0() {
        let r = InstanceRecipe::new(Regime::Coercive { c0: 0.05 }, 2);
        let inst = random_instance(1, &r).unwrap();
        assert!(inst.tags.c_min >= 0.05);
        assert_eq!(inst.tags.c0, Some(0.05));
    }

    #[test]
    fn instances_are_deterministic() {
        let r = InstanceRecipe::new(Regime::NonNegative, 2).obstacle(true);
        let a = random_instance(1, &r).unwrap();
        let b = random_instance(1, &r).unwrap();
        assert_eq!(a.summary(), b.summary());
        let x = [0.3, 0.2];
        assert_eq!((a.f)(0.4, &x), (b.f)(0.4, &x));
        assert_eq!((a.psi.as_ref().unwrap())(0.4, &x), (b.psi.as_ref().unwrap())(0.4, &x));
    }

    #[test]
    fn bounded_below_tags_carry_k0_and_t() {
        let r = InstanceRecipe::new(Regime::BoundedBelow { k0: 0.3 }, 1);
        let inst = random_instance(7, &r).unwrap();
        assert!(inst.tags.k0 <= 0.3);
        assert!(inst.tags.t_final >= 0.5 && inst.tags.t_final <= 1.5);
    }

    #[test]
    fn generated_assemblies_are_monotone() {
        for seed in 0..40 {
            for dim in [1, 2] {
                let r = InstanceRecipe::new(Regime::NonNegative, dim);
                let inst = random_instance(seed, &r).unwrap();
                let m = assemble_spatial_operator(&inst.op, &inst.grid, 0.0, &Default::default())
                    .unwrap()
                    .stepping(inst.grid.dt(), 1.0);
                assert!(verify_discrete_monotonicity(&m).pass, "seed {seed} dim {dim}");
                assert!(!degenerate_nodes(&inst).is_empty());
            }
        }
    }

    #[test]
    fn data_signs_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let neg = SmoothField::random(&mut rng, 2, DataSign::NonPositive, 1.0);
            let pos = SmoothField::random(&mut rng, 2, DataSign::NonNegative, 1.0);
            for i in 0..50 {
                let x = [i as f64 * 0.37 - 3.0, i as f64 * 0.11];
                assert!(neg.eval(i as f64 * 0.1, &x) < 0.0);
                assert!(pos.eval(i as f64 * 0.1, &x) > 0.0);
            }
        }
    }

    #[test]
    fn instrumented_accessor_counts_floor_reads() {
        let r = InstanceRecipe::new(Regime::NonNegative, 2);
        let inst = random_instance(2, &r).unwrap();
        let (g, counter) = instrument_boundary_data(inst.g.clone(), &inst.grid, None);
        let x2max = inst.grid.domain().bounds[1].1;
        g(0.1, &[0.0, 0.0]);
        g(0.1, &[-1.0, 0.0]);
        g(inst.tags.t_final, &[0.0, 0.0]);
        g(0.1, &[0.0, x2max]);
        assert_eq!(counter.count(), 1);
    }
}
