//! Monotone finite-difference assembly of the spatial part
//! `-tr(a D^2 u) - <b, Du> + c u` on a tensor grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, NodeClass};
use crate::operator::{GridApplier, ParabolicOperator, SpaceTimePoint};

/// How nodes on the degenerate boundary are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegenerateRows {
    /// The equation restricted to the boundary, `-u_t - <b,Du> + cu = f`.
    #[default]
    FirstOrder,
    /// Prescribe Dirichlet data there (the classical Fichera setting when
    /// the boundary is outflow-like).
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyOptions {
    pub degenerate_rows: DegenerateRows,
    /// Upwind first-order terms; central differences otherwise.
    pub upwind: bool,
    /// Slack for `b_perp >= 0` on degenerate nodes.
    pub inflow_tol: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            degenerate_rows: DegenerateRows::FirstOrder,
            upwind: true,
            inflow_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    Interior,
    Degenerate,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub kind: RowKind,
    /// `(column, value)` sorted by column, diagonal included.
    pub entries: Vec<(usize, f64)>,
    /// Sum of absolute contributions from the second-order stencil.
    pub diffusion_weight: f64,
}

impl Row {
    pub fn diagonal(&self, i: usize) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == i)
            .map_or(0.0, |&(_, v)| v)
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.entries.iter().map(|&(c, a)| a * v[c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: Vec<Row>,
}

impl SparseMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(v)).collect()
    }

    /// `I/dt + theta A` on equation rows; Dirichlet rows stay identity.
    pub fn stepping(&self, dt: f64, theta: f64) -> SparseMatrix {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                if r.kind == RowKind::Dirichlet {
                    return r.clone();
                }
                let mut entries: Vec<(usize, f64)> =
                    r.entries.iter().map(|&(c, v)| (c, theta * v)).collect();
                match entries.iter_mut().find(|(c, _)| *c == i) {
                    Some(e) => e.1 += 1.0 / dt,
                    None => {
                        entries.push((i, 1.0 / dt));
                        entries.sort_by_key(|e| e.0);
                    }
                }
                Row {
                    kind: r.kind,
                    entries,
                    diffusion_weight: theta * r.diffusion_weight,
                }
            })
            .collect();
        SparseMatrix { rows }
    }

    /// Largest `|i - j|` over nonzero entries.
    pub fn bandwidth(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.entries.iter().map(move |&(c, _)| c.abs_diff(i)))
            .max()
            .unwrap_or(0)
    }
}

/// Spatial operator at one time together with the grid it lives on; applies
/// to grid functions with Dirichlet rows acting as the identity.
pub struct AssembledOperator<'a> {
    pub grid: &'a Grid,
    pub matrix: SparseMatrix,
}

impl GridApplier for AssembledOperator<'_> {
    fn apply(&self, v: &GridFunction) -> Result<GridFunction> {
        if v.len() != self.grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.num_nodes(),
                got: v.len(),
            });
        }
        Ok(GridFunction::from_vec(
            v.shape().to_vec(),
            self.matrix.mul_vec(v.values()),
        ))
    }
}

struct RowBuilder {
    entries: Vec<(usize, f64)>,
    diffusion_weight: f64,
}

impl RowBuilder {
    fn add(&mut self, col: usize, v: f64) {
        self.entries.push((col, v));
    }

    fn add_diffusion(&mut self, col: usize, v: f64) {
        self.diffusion_weight += v.abs();
        self.entries.push((col, v));
    }

    fn finish(mut self, kind: RowKind) -> Row {
        self.entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.entries.len());
        for (c, v) in self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        Row {
            kind,
            entries: merged,
            diffusion_weight: self.diffusion_weight,
        }
    }
}

/// Row kind of a node under the given options.
pub fn row_kind(grid: &Grid, node: usize, opts: &AssemblyOptions) -> RowKind {
    match grid.class(node) {
        NodeClass::Interior => RowKind::Interior,
        NodeClass::Degenerate => match opts.degenerate_rows {
            DegenerateRows::FirstOrder => RowKind::Degenerate,
            DegenerateRows::Dirichlet => RowKind::Dirichlet,
        },
        NodeClass::Nondegenerate | NodeClass::Corner => RowKind::Dirichlet,
    }
}

/// Assembles the spatial operator at time `t`.
///
/// Interior rows use central second differences, the sign-split 7-point
/// stencil for mixed derivatives and upwinded first-order terms. Rows on the
/// degenerate boundary drop the second-order part and take one-sided inward
/// differences along the normal, which requires `b . n >= 0`.
pub fn assemble_spatial_operator(
    op: &ParabolicOperator,
    grid: &Grid,
    t: f64,
    opts: &AssemblyOptions,
) -> Result<SparseMatrix> {
    if op.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: op.dim(),
        });
    }
    let d = grid.dim();
    let h = grid.spacing().to_vec();
    let mut rows = Vec::with_capacity(grid.num_nodes());
    for node in 0..grid.num_nodes() {
        let kind = row_kind(grid, node, opts);
        if kind == RowKind::Dirichlet {
            rows.push(Row {
                kind,
                entries: vec![(node, 1.0)],
                diffusion_weight: 0.0,
            });
            continue;
        }
        let p = SpaceTimePoint::new(t, grid.coords(node));
        let co = op.eval_coefficients(&p)?;
        let mut rb = RowBuilder {
            entries: Vec::with_capacity(1 + 2 * d + 2 * d * d),
            diffusion_weight: 0.0,
        };
        rb.add(node, co.c);
        let nb = |n: usize, axis: usize, upper: bool| {
            grid.neighbor(n, axis, upper)
                .expect("equation rows have neighbors on non-boundary axes")
        };
        let sides = grid.sides_of(node);
        if kind == RowKind::Interior {
            for i in 0..d {
                let w = co.a[(i, i)] / (h[i] * h[i]);
                rb.add_diffusion(node, 2.0 * w);
                rb.add_diffusion(nb(node, i, false), -w);
                rb.add_diffusion(nb(node, i, true), -w);
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    let aij = co.a[(i, j)];
                    if aij == 0.0 {
                        continue;
                    }
                    let w = aij.abs() / (h[i] * h[j]);
                    // diagonal pair along the direction that keeps weights <= 0
                    let (pi, pj) = if aij > 0.0 { (true, true) } else { (false, true) };
                    let d1 = nb(nb(node, i, pi), j, pj);
                    let d2 = nb(nb(node, i, !pi), j, !pj);
                    rb.add_diffusion(d1, -w);
                    rb.add_diffusion(d2, -w);
                    for (ax, up) in [(i, false), (i, true), (j, false), (j, true)] {
                        rb.add_diffusion(nb(node, ax, up), w);
                    }
                    rb.add_diffusion(node, -2.0 * w);
                }
            }
        }
        for i in 0..d {
            let bi = co.b[i];
            let on_face = sides.iter().find(|&&(ax, _)| ax == i).copied();
            if let Some((_, upper)) = on_face {
                let inward = if upper { -1.0 } else { 1.0 };
                let b_perp = bi * inward;
                if b_perp < -opts.inflow_tol {
                    return Err(Error::DegenerateOutflow {
                        node: format!("{node} at {p}"),
                        b_perp,
                    });
                }
                let w = b_perp.max(0.0) / h[i];
                rb.add(node, w);
                rb.add(nb(node, i, !upper), -w);
            } else if opts.upwind {
                let w = bi.abs() / h[i];
                rb.add(node, w);
                rb.add(nb(node, i, bi > 0.0), -w);
            } else {
                let w = bi / (2.0 * h[i]);
                rb.add(nb(node, i, true), -w);
                rb.add(nb(node, i, false), w);
            }
        }
        rows.push(rb.finish(kind));
    }
    Ok(SparseMatrix { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pass: bool,
    /// Largest positive off-diagonal entry `(row, col, value)`, if any.
    pub positive_offdiag: Option<(usize, usize, f64)>,
    /// Row with the worst `diag - sum |offdiag|`, and that margin.
    pub worst_dominance: Option<(usize, f64)>,
    pub nonpositive_diag: Option<(usize, f64)>,
}

/// M-matrix check: positive diagonal, non-positive off-diagonals and weak
/// row diagonal dominance, all up to a relative rounding slack.
pub fn verify_discrete_monotonicity(m: &SparseMatrix) -> MonotonicityReport {
    let mut positive_offdiag: Option<(usize, usize, f64)> = None;
    let mut worst_dominance: Option<(usize, f64)> = None;
    let mut nonpositive_diag: Option<(usize, f64)> = None;
    let mut pass = true;
    for (i, r) in m.rows.iter().enumerate() {
        let diag = r.diagonal(i);
        let scale = r.entries.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
        let slack = 1e-12 * scale.max(1e-300);
        if !(diag > 0.0) {
            pass = false;
            if nonpositive_diag.is_none_or(|(_, v)| diag < v) {
                nonpositive_diag = Some((i, diag));
            }
        }
        let mut off_sum = 0.0;
        for &(c, v) in &r.entries {
            if c == i {
                continue;
            }
            off_sum += v.abs();
            if v > slack {
                pass = false;
                if positive_offdiag.is_none_or(|(_, _, w)| v > w) {
                    positive_offdiag = Some((i, c, v));
                }
            }
        }
        let margin = diag - off_sum;
        if worst_dominance.is_none_or(|(_, w)| margin < w) {
            worst_dominance = Some((i, margin));
        }
        if margin < -slack * r.entries.len() as f64 {
            pass = false;
        }
    }
    MonotonicityReport {
        pass,
        positive_offdiag,
        worst_dominance,
        nonpositive_diag,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_degenerate_boundary, BoundaryPartition, DomainSpec, FaceId};
    use crate::grid::{build_grid, Resolution};
    use crate::operator::{make_heston, HestonParams};
    use nalgebra::{DMatrix, DVector};
    use std::sync::Arc;

    fn hp() -> HestonParams {
        HestonParams {
            sigma: 0.3,
            rho: -0.6,
            kappa: 1.5,
            theta: 0.04,
            r: 0.05,
            q: 0.02,
        }
    }

    fn heston_grid(n1: usize, n2: usize) -> (ParabolicOperator, Grid) {
        let op = make_heston(hp()).unwrap();
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 0.6)]).unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
        let g = build_grid(&dom, &part, &Resolution::new(vec![n1, n2], 5)).unwrap();
        (op, g)
    }

    fn one_d(a: f64, b: f64, bounds: (f64, f64), n: usize, deg_left: bool) -> (ParabolicOperator, Grid) {
        let op = ParabolicOperator::new(
            1,
            Arc::new(move |_t, _x| DMatrix::from_element(1, 1, a)),
            Arc::new(move |_t, _x| DVector::from_element(1, b)),
            Arc::new(|_t, _x| 0.0),
        );
        let dom = DomainSpec::new(1.0, vec![bounds]).unwrap();
        let mut part = BoundaryPartition::all_nondegenerate(&dom);
        if deg_left {
            let f = part
                .faces
                .iter_mut()
                .find(|f| f.id == FaceId::Side { axis: 0, upper: false })
                .unwrap();
            f.labels.clear();
            f.labels.insert(crate::geometry::FaceLabel::Degenerate);
        }
        let g = build_grid(&dom, &part, &Resolution::new(vec![n], 3)).unwrap();
        (op, g)
    }

    #[test]
    fn toy_forward_difference_at_degenerate_left_end() {
        let (op, g) = one_d(0.0, 1.0, (0.0, 1.0), 3, true);
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        let h = 0.5;
        assert_eq!(m.rows[0].kind, RowKind::Degenerate);
        assert_eq!(m.rows[0].entries, vec![(0, 1.0 / h), (1, -1.0 / h)]);
        assert_eq!(m.rows[0].diffusion_weight, 0.0);
        assert_eq!(m.rows[2].kind, RowKind::Dirichlet);
    }

    #[test]
    fn heston_floor_row_matches_hand_assembly() {
        let (op, g) = heston_grid(9, 7);
        let p = hp();
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        let node = g.node_at(&[4, 0]);
        let row = &m.rows[node];
        assert_eq!(row.kind, RowKind::Degenerate);
        assert_eq!(row.diffusion_weight, 0.0);
        let (h1, h2) = (g.spacing()[0], g.spacing()[1]);
        // b1 = r - q - x2/2 = r - q > 0 at x2 = 0: forward difference in x1
        let b1 = p.r - p.q;
        let b2 = p.kappa * p.theta;
        let mut expected = vec![
            (node, p.r + b1 / h1 + b2 / h2),
            (node + 1, -b1 / h1),
            (node + g.stride(1), -b2 / h2),
        ];
        expected.sort_by_key(|e| e.0);
        assert_eq!(row.entries.len(), expected.len());
        for ((c, v), (ce, ve)) in row.entries.iter().zip(&expected) {
            assert_eq!(c, ce);
            assert!((v - ve).abs() < 1e-12 * ve.abs().max(1.0), "{v} vs {ve}");
        }
    }

    #[test]
    fn degenerate_rows_have_no_diffusion() {
        let (op, g) = heston_grid(11, 9);
        let m = assemble_spatial_operator(&op, &g, 0.3, &Default::default()).unwrap();
        for (i, r) in m.rows.iter().enumerate() {
            if g.class(i) == NodeClass::Degenerate {
                assert_eq!(r.diffusion_weight, 0.0);
            }
            if g.class(i) == NodeClass::Interior {
                assert!(r.diffusion_weight > 0.0);
            }
        }
    }

    #[test]
    fn heston_assembly_is_monotone_on_matched_aspect() {
        let sigma = hp().sigma;
        let op = make_heston(hp()).unwrap();
        let n1 = 11;
        let h1 = 2.0 / (n1 - 1) as f64;
        let h2 = sigma * h1;
        let n2 = 9;
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, h2 * (n2 - 1) as f64)]).unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap();
        let g = build_grid(&dom, &part, &Resolution::new(vec![n1, n2], 5)).unwrap();
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        let rep = verify_discrete_monotonicity(&m);
        assert!(rep.pass, "{rep:?}");
        assert!(verify_discrete_monotonicity(&m.stepping(0.1, 1.0)).pass);
    }

    #[test]
    fn heston_with_mismatched_aspect_is_flagged() {
        // h2 far larger than sigma*h1 breaks the cross-stencil sign condition
        let (op, g) = heston_grid(41, 5);
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        let rep = verify_discrete_monotonicity(&m);
        assert!(!rep.pass);
        assert!(rep.positive_offdiag.is_some());
    }

    #[test]
    fn central_drift_with_large_peclet_fails() {
        // b h / (2a) = 10 * 0.25 / 0.2 > 1
        let (op, g) = one_d(0.1, 10.0, (0.0, 1.0), 5, false);
        let opts = AssemblyOptions {
            upwind: false,
            ..Default::default()
        };
        let m = assemble_spatial_operator(&op, &g, 0.0, &opts).unwrap();
        let rep = verify_discrete_monotonicity(&m);
        assert!(!rep.pass);
        let (row, col, v) = rep.positive_offdiag.unwrap();
        assert_eq!(col + 1, row);
        assert!(v > 0.0);
        let up = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        assert!(verify_discrete_monotonicity(&up).pass);
    }

    #[test]
    fn identity_rows_pass() {
        let m = SparseMatrix {
            rows: (0..4)
                .map(|i| Row {
                    kind: RowKind::Dirichlet,
                    entries: vec![(i, 1.0)],
                    diffusion_weight: 0.0,
                })
                .collect(),
        };
        assert!(verify_discrete_monotonicity(&m).pass);
    }

    #[test]
    fn outflow_on_degenerate_face_refused() {
        let (op, g) = one_d(0.0, -1.0, (0.0, 1.0), 4, true);
        let err = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateOutflow { b_perp, .. } if b_perp == -1.0));
    }

    #[test]
    fn affine_functions_are_reproduced() {
        // constant coefficients, L(1 + x1 + 2 x2) = -b.(1,2) + c (1 + x1 + 2 x2)
        let (op, g) = heston_grid(9, 7);
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        let u: Vec<f64> = (0..g.num_nodes())
            .map(|n| {
                let x = g.coords(n);
                1.0 + x[0] + 2.0 * x[1]
            })
            .collect();
        let au = m.mul_vec(&u);
        for n in 0..g.num_nodes() {
            if m.rows[n].kind == RowKind::Dirichlet {
                continue;
            }
            let x = g.coords(n);
            let co = op.eval_coefficients(&SpaceTimePoint::new(0.0, x.clone())).unwrap();
            let exact = -(co.b[0] + 2.0 * co.b[1]) + co.c * u[n];
            assert!((au[n] - exact).abs() < 1e-10, "node {n}: {} vs {exact}", au[n]);
        }
    }

    #[test]
    fn dirichlet_option_pins_degenerate_nodes() {
        let (op, g) = heston_grid(9, 7);
        let opts = AssemblyOptions {
            degenerate_rows: DegenerateRows::Dirichlet,
            ..Default::default()
        };
        let m = assemble_spatial_operator(&op, &g, 0.0, &opts).unwrap();
        for n in g.nodes_of(NodeClass::Degenerate) {
            assert_eq!(m.rows[n].kind, RowKind::Dirichlet);
        }
    }

    #[test]
    fn bandwidth_is_one_row_plus_one() {
        // rho < 0 selects the NW/SE diagonal, so the widest reach is N/S
        let (op, g) = heston_grid(9, 7);
        let m = assemble_spatial_operator(&op, &g, 0.0, &Default::default()).unwrap();
        assert_eq!(m.bandwidth(), 9);
    }
}
