//! Parabolic boundary of a box cylinder `(0,T) x O` and its split into the
//! degenerate portion (no data) and the non-degenerate portion (Dirichlet
//! data), plus the connectivity sets used by strong maximum principles.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, NodeClass};
use crate::operator::{ParabolicOperator, SpaceTimePoint};

const ON_FACE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaceId {
    /// `{T} x O`
    Top,
    /// `(0,T) x {x_axis = lo}` (`upper == false`) or `{x_axis = hi}`.
    Side { axis: usize, upper: bool },
    /// `{T} x F` where `F` is the spatial face of the matching side.
    Corner { axis: usize, upper: bool },
}

impl fmt::Display for FaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaceId::Top => write!(f, "top"),
            FaceId::Side { axis, upper } => {
                write!(f, "x{}{}", axis + 1, if *upper { '+' } else { '-' })
            }
            FaceId::Corner { axis, upper } => {
                write!(f, "corner:x{}{}", axis + 1, if *upper { '+' } else { '-' })
            }
        }
    }
}

impl FromStr for FaceId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "top" {
            return Ok(FaceId::Top);
        }
        let (corner, rest) = match s.strip_prefix("corner:") {
            Some(r) => (true, r),
            None => (false, s),
        };
        let bad = || Error::Config(format!("bad face label `{s}` (expected top, x1-, x2+, ...)"));
        let rest = rest.strip_prefix('x').ok_or_else(bad)?;
        let (num, sign) = rest.split_at(rest.len().saturating_sub(1));
        let axis: usize = num.parse().map_err(|_| bad())?;
        if axis == 0 {
            return Err(bad());
        }
        let upper = match sign {
            "+" => true,
            "-" => false,
            _ => return Err(bad()),
        };
        Ok(if corner {
            FaceId::Corner { axis: axis - 1, upper }
        } else {
            FaceId::Side { axis: axis - 1, upper }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub t_final: f64,
    pub bounds: Vec<(f64, f64)>,
    /// Side faces that are artificial truncations of an unbounded domain.
    #[serde(default)]
    pub truncated: BTreeSet<FaceId>,
}

impl DomainSpec {
    pub fn new(t_final: f64, bounds: Vec<(f64, f64)>) -> Result<Self> {
        let dom = Self {
            t_final,
            bounds,
            truncated: BTreeSet::new(),
        };
        dom.validate()?;
        Ok(dom)
    }

    pub fn with_truncated(mut self, faces: impl IntoIterator<Item = FaceId>) -> Result<Self> {
        self.truncated.extend(faces);
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) || !self.t_final.is_finite() {
            return Err(Error::InvalidDomain(format!("T = {} must be positive", self.t_final)));
        }
        if self.bounds.is_empty() {
            return Err(Error::InvalidDomain("spatial dimension must be at least 1".into()));
        }
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidDomain(format!(
                    "axis x{} has degenerate range ({lo}, {hi})",
                    i + 1
                )));
            }
        }
        for f in &self.truncated {
            match f {
                FaceId::Side { axis, .. } if *axis < self.dim() => {}
                other => {
                    return Err(Error::InvalidDomain(format!(
                        "truncated face {other} is not a side face of this box"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn side_faces(&self) -> impl Iterator<Item = FaceId> + '_ {
        (0..self.dim()).flat_map(|axis| {
            [false, true]
                .into_iter()
                .map(move |upper| FaceId::Side { axis, upper })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceKind {
    Top,
    Side,
    Corner,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaceLabel {
    Degenerate,
    Nondegenerate,
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InwardNormal {
    pub n0: f64,
    pub n: Vec<f64>,
}

/// Time range and per-axis ranges; a fixed coordinate has `lo == hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub time: (f64, f64),
    pub space: Vec<(f64, f64)>,
}

impl fmt::Display for FaceGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_range = |(lo, hi): (f64, f64)| {
            if lo == hi {
                format!("{{{lo}}}")
            } else {
                format!("({lo},{hi})")
            }
        };
        write!(f, "t{}", fmt_range(self.time))?;
        for (i, r) in self.space.iter().enumerate() {
            write!(f, " x{}{}", i + 1, fmt_range(*r))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFace {
    pub id: FaceId,
    pub kind: FaceKind,
    pub geometry: FaceGeometry,
    pub normal: Option<InwardNormal>,
    pub labels: BTreeSet<FaceLabel>,
}

/// Top, sides and corners of the parabolic boundary of `(0,T) x O`. The
/// initial slice `{0} x O` is not part of it.
pub fn parabolic_boundary(dom: &DomainSpec) -> Vec<BoundaryFace> {
    let d = dom.dim();
    let tf = dom.t_final;
    let mut faces = vec![BoundaryFace {
        id: FaceId::Top,
        kind: FaceKind::Top,
        geometry: FaceGeometry {
            time: (tf, tf),
            space: dom.bounds.clone(),
        },
        normal: Some(InwardNormal {
            n0: -1.0,
            n: vec![0.0; d],
        }),
        labels: BTreeSet::new(),
    }];
    for id in dom.side_faces().collect::<Vec<_>>() {
        let FaceId::Side { axis, upper } = id else {
            unreachable!()
        };
        let mut space = dom.bounds.clone();
        let v = if upper { dom.bounds[axis].1 } else { dom.bounds[axis].0 };
        space[axis] = (v, v);
        let mut n = vec![0.0; d];
        n[axis] = if upper { -1.0 } else { 1.0 };
        let mut labels = BTreeSet::new();
        if dom.truncated.contains(&id) {
            labels.insert(FaceLabel::Truncation);
        }
        faces.push(BoundaryFace {
            id,
            kind: FaceKind::Side,
            geometry: FaceGeometry {
                time: (0.0, tf),
                space: space.clone(),
            },
            normal: Some(InwardNormal { n0: 0.0, n }),
            labels: labels.clone(),
        });
        faces.push(BoundaryFace {
            id: FaceId::Corner { axis, upper },
            kind: FaceKind::Corner,
            geometry: FaceGeometry {
                time: (tf, tf),
                space,
            },
            normal: None,
            labels,
        });
    }
    faces
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyOptions {
    pub eps_a: f64,
    /// Inward probe distances, decreasing towards zero.
    pub probe_offsets: Vec<f64>,
    /// Face sample points per tangential axis (and in time).
    pub samples_per_axis: usize,
    /// When false, a face with mixed probe verdicts is labeled non-degenerate
    /// and listed in [`BoundaryPartition::ambiguous`] instead of failing.
    pub strict: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            eps_a: 1e-10,
            probe_offsets: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            samples_per_axis: 7,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPartition {
    pub dim: usize,
    pub faces: Vec<BoundaryFace>,
    pub ambiguous: Vec<FaceId>,
}

impl BoundaryPartition {
    /// Every side is non-degenerate: the classical full Dirichlet setting.
    pub fn all_nondegenerate(dom: &DomainSpec) -> Self {
        let mut faces = parabolic_boundary(dom);
        for f in faces.iter_mut().filter(|f| f.kind != FaceKind::Corner) {
            f.labels.insert(FaceLabel::Nondegenerate);
        }
        Self {
            dim: dom.dim(),
            faces,
            ambiguous: Vec::new(),
        }
    }

    pub fn face(&self, id: FaceId) -> Option<&BoundaryFace> {
        self.faces.iter().find(|f| f.id == id)
    }

    pub fn is_degenerate(&self, id: FaceId) -> bool {
        self.face(id)
            .is_some_and(|f| f.labels.contains(&FaceLabel::Degenerate))
    }

    pub fn degenerate(&self) -> Vec<FaceId> {
        self.with_label(FaceLabel::Degenerate)
    }

    pub fn nondegenerate(&self) -> Vec<FaceId> {
        self.with_label(FaceLabel::Nondegenerate)
    }

    fn with_label(&self, label: FaceLabel) -> Vec<FaceId> {
        self.faces
            .iter()
            .filter(|f| f.labels.contains(&label))
            .map(|f| f.id)
            .collect()
    }

    /// Labeled face table as CSV: `face_id,kind,label,geometry,normal`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("face_id,kind,label,geometry,normal\n");
        for f in &self.faces {
            let label = if f.labels.contains(&FaceLabel::Degenerate) {
                "DEG"
            } else if f.labels.contains(&FaceLabel::Nondegenerate) {
                "NONDEG"
            } else {
                "CLOSURE"
            };
            let label = if f.labels.contains(&FaceLabel::Truncation) {
                format!("{label}+TRUNCATION")
            } else {
                label.to_string()
            };
            let normal = match &f.normal {
                Some(n) => {
                    let mut s = format!("({}", n.n0);
                    for v in &n.n {
                        s.push_str(&format!(";{v}"));
                    }
                    s.push(')');
                    s
                }
                None => "none".to_string(),
            };
            let kind = match f.kind {
                FaceKind::Top => "top",
                FaceKind::Side => "side",
                FaceKind::Corner => "corner",
            };
            out.push_str(&format!(
                "{},{},{},\"{}\",\"{}\"\n",
                f.id, kind, label, f.geometry, normal
            ));
        }
        out
    }
}

/// Sample points in the relative interior of a side face, over `(0,T)`.
pub(crate) fn side_face_samples(
    dom: &DomainSpec,
    axis: usize,
    upper: bool,
    per_axis: usize,
) -> Vec<SpaceTimePoint> {
    let m = per_axis.max(1);
    let frac = |j: usize| (j as f64 + 0.5) / m as f64;
    let d = dom.dim();
    let fixed = if upper { dom.bounds[axis].1 } else { dom.bounds[axis].0 };
    let tangential: Vec<usize> = (0..d).filter(|&i| i != axis).collect();
    let count = m.pow(tangential.len() as u32);
    let mut out = Vec::with_capacity(count * m);
    for it in 0..m {
        let t = dom.t_final * frac(it);
        for idx in 0..count {
            let mut x = vec![0.0; d];
            x[axis] = fixed;
            let mut rem = idx;
            for &ax in &tangential {
                let j = rem % m;
                rem /= m;
                let (lo, hi) = dom.bounds[ax];
                x[ax] = lo + (hi - lo) * frac(j);
            }
            out.push(SpaceTimePoint::new(t, x));
        }
    }
    out
}

/// Estimates `lim ||a||` along inward probes by linear extrapolation of the
/// two smallest offsets (clamped at zero).
fn probe_limit(
    op: &ParabolicOperator,
    p: &SpaceTimePoint,
    axis: usize,
    inward: f64,
    offsets: &[f64],
) -> f64 {
    let norm_at = |delta: f64| {
        let mut x = p.x.clone();
        x[axis] += inward * delta;
        op.a_at(p.t, &x).amax()
    };
    match offsets {
        [] => op.a_at(p.t, &p.x).amax(),
        [only] => norm_at(*only),
        _ => {
            let d1 = offsets[offsets.len() - 2];
            let d2 = offsets[offsets.len() - 1];
            let v1 = norm_at(d1);
            let v2 = norm_at(d2);
            let extrapolated = v2 - d2 * (v1 - v2) / (d1 - d2);
            extrapolated.max(0.0)
        }
    }
}

/// Labels each side face degenerate or non-degenerate by probing `a`
/// inward from sampled face points. The top is always non-degenerate since
/// `n0 = -1` there; truncation faces are forced non-degenerate.
pub fn classify_degenerate_boundary(
    op: &ParabolicOperator,
    dom: &DomainSpec,
    opts: &ClassifyOptions,
) -> Result<BoundaryPartition> {
    dom.validate()?;
    if op.dim() != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: op.dim(),
        });
    }
    if !(opts.eps_a > 0.0) {
        return Err(Error::InvalidParameter("eps_a must be positive".into()));
    }
    if opts.probe_offsets.iter().any(|&d| !(d > 0.0))
        || opts.probe_offsets.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::InvalidParameter(
            "probe offsets must be positive and strictly decreasing".into(),
        ));
    }
    let mut faces = parabolic_boundary(dom);
    let mut ambiguous = Vec::new();
    for face in faces.iter_mut() {
        match face.id {
            FaceId::Top => {
                face.labels.insert(FaceLabel::Nondegenerate);
            }
            FaceId::Corner { .. } => {}
            FaceId::Side { axis, upper } => {
                if face.labels.contains(&FaceLabel::Truncation) {
                    face.labels.insert(FaceLabel::Nondegenerate);
                    continue;
                }
                let (lo, hi) = dom.bounds[axis];
                let offsets: Vec<f64> = opts
                    .probe_offsets
                    .iter()
                    .copied()
                    .filter(|&d| d < hi - lo)
                    .collect();
                let inward = if upper { -1.0 } else { 1.0 };
                let samples = side_face_samples(dom, axis, upper, opts.samples_per_axis);
                let mut n_deg = 0usize;
                let mut witness = None;
                for p in &samples {
                    let est = probe_limit(op, p, axis, inward, &offsets);
                    if est <= opts.eps_a {
                        n_deg += 1;
                    } else if witness.is_none() {
                        witness = Some((p.clone(), est));
                    }
                }
                let label = if n_deg == samples.len() {
                    FaceLabel::Degenerate
                } else if n_deg == 0 {
                    FaceLabel::Nondegenerate
                } else {
                    let (wp, west) = witness.expect("mixed face has a witness");
                    if opts.strict {
                        return Err(Error::AmbiguousFace {
                            face: face.id.to_string(),
                            detail: format!(
                                "{n_deg} of {} samples degenerate; non-degenerate witness {wp} with limit {west:e}",
                                samples.len()
                            ),
                        });
                    }
                    ambiguous.push(face.id);
                    FaceLabel::Nondegenerate
                };
                face.labels.insert(label);
            }
        }
    }
    Ok(BoundaryPartition {
        dim: dom.dim(),
        faces,
        ambiguous,
    })
}

/// Inward unit normal `(n0, n)` of a top or side face at `p`.
pub fn inward_normal(face: &BoundaryFace, p: &SpaceTimePoint) -> Result<InwardNormal> {
    let g = &face.geometry;
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo - ON_FACE_TOL && v <= hi + ON_FACE_TOL;
    let on = p.dim() == g.space.len()
        && within(p.t, g.time)
        && p.x.iter().zip(&g.space).all(|(&v, &r)| within(v, r));
    if !on {
        return Err(Error::NotOnFace {
            face: face.id.to_string(),
            point: p.to_string(),
        });
    }
    face.normal
        .clone()
        .ok_or_else(|| Error::CornerNormal(face.id.to_string()))
}

/// A node of the space-time grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub level: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachableSet {
    /// `S(P0)`: nodes joined to `P0` by paths with non-increasing time.
    pub reachable: BTreeSet<NodeRef>,
    /// `C(P0)`: connected component of the `t = t0` slice containing `P0`.
    pub slice_component: BTreeSet<usize>,
}

/// `S(P0)` and `C(P0)` over grid nodes of `Q` together with the degenerate
/// boundary. Level 0 (`t = 0`) and the top level are outside `Q`.
pub fn reachable_set(grid: &Grid, p0: NodeRef) -> Result<ReachableSet> {
    reachable_set_in(grid, p0, |n| {
        matches!(grid.class(n), NodeClass::Interior | NodeClass::Degenerate)
    })
}

/// Same as [`reachable_set`] but over an arbitrary active-node mask, e.g. a
/// union of boxes embedded in the grid.
pub fn reachable_set_in(
    grid: &Grid,
    p0: NodeRef,
    active: impl Fn(usize) -> bool,
) -> Result<ReachableSet> {
    let top = grid.top_level();
    if p0.node >= grid.num_nodes() || p0.level > top {
        return Err(Error::InvalidParameter(format!("node {p0:?} outside grid")));
    }
    if p0.level == top || !active(p0.node) {
        return Err(Error::NodeOnNondegenerateBoundary(format!(
            "level {} node {}",
            p0.level, p0.node
        )));
    }
    if p0.level == 0 {
        return Err(Error::InvalidParameter(
            "t = 0 is outside the open cylinder".into(),
        ));
    }
    let n = grid.num_nodes();
    let mut seen = vec![false; n * (top + 1)];
    let key = |r: NodeRef| r.level * n + r.node;
    let mut queue = VecDeque::from([p0]);
    seen[key(p0)] = true;
    let mut reachable = BTreeSet::new();
    let mut slice_component = BTreeSet::new();
    while let Some(cur) = queue.pop_front() {
        reachable.insert(cur);
        if cur.level == p0.level {
            slice_component.insert(cur.node);
        }
        let mut push = |r: NodeRef, queue: &mut VecDeque<NodeRef>| {
            if !seen[key(r)] {
                seen[key(r)] = true;
                queue.push_back(r);
            }
        };
        for nb in grid.axis_neighbors(cur.node) {
            if active(nb) {
                push(NodeRef { level: cur.level, node: nb }, &mut queue);
            }
        }
        if cur.level > 1 {
            push(
                NodeRef {
                    level: cur.level - 1,
                    node: cur.node,
                },
                &mut queue,
            );
        }
    }
    Ok(ReachableSet {
        reachable,
        slice_component,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, Resolution};
    use crate::operator::{identity_laplacian, make_heston, HestonParams};

    fn heston() -> ParabolicOperator {
        make_heston(HestonParams {
            sigma: 0.2,
            rho: -0.5,
            kappa: 1.5,
            theta: 0.04,
            r: 0.05,
            q: 0.0,
        })
        .unwrap()
    }

    #[test]
    fn one_dimensional_boundary_faces() {
        let dom = DomainSpec::new(1.0, vec![(0.0, 1.0)]).unwrap();
        let faces = parabolic_boundary(&dom);
        let ids: Vec<String> = faces.iter().map(|f| f.id.to_string()).collect();
        assert_eq!(ids, ["top", "x1-", "corner:x1-", "x1+", "corner:x1+"]);
        let top = &faces[0];
        assert_eq!(top.geometry.time, (1.0, 1.0));
        assert_eq!(top.geometry.space, vec![(0.0, 1.0)]);
        let corner = faces.iter().find(|f| f.id.to_string() == "corner:x1+").unwrap();
        assert_eq!(corner.geometry.time, (1.0, 1.0));
        assert_eq!(corner.geometry.space, vec![(1.0, 1.0)]);
        assert!(faces.iter().all(|f| {
            f.kind != FaceKind::Side || f.normal.as_ref().unwrap().n0 == 0.0
        }));
    }

    #[test]
    fn two_dimensional_box_face_counts() {
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let faces = parabolic_boundary(&dom);
        let count = |k| faces.iter().filter(|f| f.kind == k).count();
        assert_eq!(count(FaceKind::Top), 1);
        assert_eq!(count(FaceKind::Side), 4);
        assert_eq!(count(FaceKind::Corner), 4);
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(DomainSpec::new(1.0, vec![(0.5, 0.5)]).is_err());
        assert!(DomainSpec::new(0.0, vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn heston_floor_is_the_only_degenerate_face() {
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let part = classify_degenerate_boundary(&heston(), &dom, &ClassifyOptions::default())
            .unwrap();
        assert_eq!(part.degenerate(), vec![FaceId::Side { axis: 1, upper: false }]);
        let nondeg: BTreeSet<_> = part.nondegenerate().into_iter().collect();
        let expected: BTreeSet<_> = [
            FaceId::Top,
            FaceId::Side { axis: 0, upper: false },
            FaceId::Side { axis: 0, upper: true },
            FaceId::Side { axis: 1, upper: true },
        ]
        .into_iter()
        .collect();
        assert_eq!(nondeg, expected);
        for f in &part.faces {
            assert!(!(f.labels.contains(&FaceLabel::Degenerate)
                && f.labels.contains(&FaceLabel::Nondegenerate)));
        }
    }

    #[test]
    fn uniformly_parabolic_has_no_degenerate_face() {
        let dom = DomainSpec::new(1.0, vec![(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let part = classify_degenerate_boundary(&identity_laplacian(2), &dom, &Default::default())
            .unwrap();
        assert!(part.degenerate().is_empty());
        assert_eq!(part.nondegenerate().len(), 5);
    }

    #[test]
    fn truncated_face_forced_nondegenerate() {
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)])
            .unwrap()
            .with_truncated([FaceId::Side { axis: 1, upper: false }])
            .unwrap();
        let part = classify_degenerate_boundary(&heston(), &dom, &Default::default()).unwrap();
        assert!(part.degenerate().is_empty());
    }

    #[test]
    fn mixed_face_is_ambiguous() {
        use nalgebra::{DMatrix, DVector};
        use std::sync::Arc;
        // a vanishes on x2 = 0 only where x1 < 0
        let op = ParabolicOperator::new(
            2,
            Arc::new(|_t, x: &[f64]| {
                let s = if x[0] < 0.0 { x[1] } else { 1.0 };
                DMatrix::identity(2, 2) * s
            }),
            Arc::new(|_t, _x| DVector::from_column_slice(&[0.0, 1.0])),
            Arc::new(|_t, _x| 0.0),
        );
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let err = classify_degenerate_boundary(&op, &dom, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::AmbiguousFace { ref face, .. } if face == "x2-"));
        let lenient = ClassifyOptions {
            strict: false,
            ..Default::default()
        };
        let part = classify_degenerate_boundary(&op, &dom, &lenient).unwrap();
        assert_eq!(part.ambiguous, vec![FaceId::Side { axis: 1, upper: false }]);
        assert!(part.degenerate().is_empty());
    }

    #[test]
    fn degenerate_set_stable_under_probe_refinement() {
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let op = heston();
        let mut offsets = vec![0.09, 0.05];
        let mut prev = None;
        for _ in 0..6 {
            let opts = ClassifyOptions {
                probe_offsets: offsets.clone(),
                ..Default::default()
            };
            let deg = classify_degenerate_boundary(&op, &dom, &opts).unwrap().degenerate();
            if let Some(p) = &prev {
                assert_eq!(p, &deg);
            }
            prev = Some(deg);
            let last = *offsets.last().unwrap();
            offsets.push(last / 10.0);
        }
    }

    #[test]
    fn normals() {
        let dom = DomainSpec::new(2.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let faces = parabolic_boundary(&dom);
        let get = |s: &str| faces.iter().find(|f| f.id.to_string() == s).unwrap();
        let top = inward_normal(get("top"), &SpaceTimePoint::new(2.0, vec![0.3, 0.4])).unwrap();
        assert_eq!((top.n0, top.n.clone()), (-1.0, vec![0.0, 0.0]));
        let floor = inward_normal(get("x2-"), &SpaceTimePoint::new(0.5, vec![0.3, 0.0])).unwrap();
        assert_eq!((floor.n0, floor.n.clone()), (0.0, vec![0.0, 1.0]));
        let left = inward_normal(get("x1-"), &SpaceTimePoint::new(0.5, vec![-1.0, 0.2])).unwrap();
        assert_eq!(left.n, vec![1.0, 0.0]);
        assert!(matches!(
            inward_normal(get("x1-"), &SpaceTimePoint::new(0.5, vec![0.0, 0.2])),
            Err(Error::NotOnFace { .. })
        ));
        assert!(matches!(
            inward_normal(get("corner:x1-"), &SpaceTimePoint::new(2.0, vec![-1.0, 0.2])),
            Err(Error::CornerNormal(_))
        ));
    }

    #[test]
    fn face_labels_round_trip() {
        for s in ["top", "x1-", "x2+", "corner:x3-"] {
            assert_eq!(s.parse::<FaceId>().unwrap().to_string(), s);
        }
        assert!("x0+".parse::<FaceId>().is_err());
        assert!("y1+".parse::<FaceId>().is_err());
    }

    fn heston_grid() -> Grid {
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let part = classify_degenerate_boundary(&heston(), &dom, &Default::default()).unwrap();
        build_grid(&dom, &part, &Resolution::new(vec![9, 9], 6)).unwrap()
    }

    #[test]
    fn reachable_set_of_box_is_lower_time_slab() {
        let grid = heston_grid();
        let node = grid.node_at(&[4, 3]);
        let rs = reachable_set(&grid, NodeRef { level: 3, node }).unwrap();
        let underline_q: Vec<usize> = (0..grid.num_nodes())
            .filter(|&n| matches!(grid.class(n), NodeClass::Interior | NodeClass::Degenerate))
            .collect();
        let expected: BTreeSet<NodeRef> = (1..=3)
            .flat_map(|level| underline_q.iter().map(move |&node| NodeRef { level, node }))
            .collect();
        assert_eq!(rs.reachable, expected);
        assert_eq!(rs.slice_component.len(), underline_q.len());
        assert!(rs.reachable.iter().all(|r| grid.time(r.level) <= grid.time(3)));
    }

    #[test]
    fn reachable_set_at_first_level_is_one_slice() {
        let grid = heston_grid();
        let node = grid.node_at(&[4, 0]);
        let rs = reachable_set(&grid, NodeRef { level: 1, node }).unwrap();
        assert!(rs.reachable.iter().all(|r| r.level == 1));
    }

    #[test]
    fn reachable_set_rejects_dirichlet_nodes() {
        let grid = heston_grid();
        let node = grid.node_at(&[0, 4]);
        assert!(reachable_set(&grid, NodeRef { level: 2, node }).is_err());
        let node = grid.node_at(&[4, 4]);
        assert!(reachable_set(&grid, NodeRef { level: grid.top_level(), node }).is_err());
    }

    #[test]
    fn disjoint_boxes_keep_components_apart() {
        let dom = DomainSpec::new(1.0, vec![(0.0, 3.0), (0.0, 1.0)]).unwrap();
        let part = BoundaryPartition::all_nondegenerate(&dom);
        let grid = build_grid(&dom, &part, &Resolution::new(vec![13, 5], 4)).unwrap();
        let boxes = [((0.0, 1.0), (0.0, 1.0)), ((2.0, 3.0), (0.0, 1.0))];
        let active = |n: usize| {
            let x = grid.coords(n);
            boxes.iter().any(|&((a0, a1), (b0, b1))| {
                x[0] > a0 && x[0] < a1 && x[1] > b0 && x[1] < b1
            })
        };
        let p0 = grid.node_at(&[2, 2]);
        let rs = reachable_set_in(&grid, NodeRef { level: 2, node: p0 }, active).unwrap();
        // flood-fill oracle on the slice graph
        let mut oracle = BTreeSet::new();
        let mut stack = vec![p0];
        while let Some(n) = stack.pop() {
            if oracle.insert(n) {
                stack.extend(grid.axis_neighbors(n).into_iter().filter(|&m| active(m)));
            }
        }
        assert_eq!(rs.slice_component, oracle);
        assert!(rs.slice_component.iter().all(|&n| grid.coords(n)[0] < 1.0));
    }

    #[test]
    fn reachable_sets_are_monotone_in_time() {
        let grid = heston_grid();
        let node = grid.node_at(&[3, 2]);
        let lower = reachable_set(&grid, NodeRef { level: 2, node }).unwrap();
        let upper = reachable_set(&grid, NodeRef { level: 4, node }).unwrap();
        assert!(lower.reachable.is_subset(&upper.reachable));
    }
}
