//! Tensor-product space-time grids, node classes and grid functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPartition, DomainSpec, FaceId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    /// Nodes per spatial axis, boundary nodes included.
    pub nodes: Vec<usize>,
    /// Time levels including `t = 0` and `t = T`.
    pub time_levels: usize,
}

impl Resolution {
    pub fn new(nodes: Vec<usize>, time_levels: usize) -> Self {
        Self { nodes, time_levels }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    /// Lies only on degenerate faces: no data, the equation is imposed.
    Degenerate,
    /// Lies on exactly one non-degenerate face: Dirichlet data.
    Nondegenerate,
    /// Lies on two or more faces, at least one non-degenerate: Dirichlet
    /// data by continuity.
    Corner,
}

impl NodeClass {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, NodeClass::Nondegenerate | NodeClass::Corner)
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Degenerate => "degenerate",
            NodeClass::Nondegenerate => "nondegenerate",
            NodeClass::Corner => "corner",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Grid {
    domain: DomainSpec,
    partition: BoundaryPartition,
    shape: Vec<usize>,
    strides: Vec<usize>,
    spacing: Vec<f64>,
    times: Vec<f64>,
    classes: Vec<NodeClass>,
}

pub fn build_grid(
    dom: &DomainSpec,
    partition: &BoundaryPartition,
    res: &Resolution,
) -> Result<Grid> {
    dom.validate()?;
    if res.nodes.len() != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: res.nodes.len(),
        });
    }
    if partition.dim != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: partition.dim,
        });
    }
    if let Some((i, &n)) = res.nodes.iter().enumerate().find(|(_, &n)| n < 3) {
        return Err(Error::ResolutionTooCoarse(format!(
            "axis x{} has {n} nodes; at least 3 are needed",
            i + 1
        )));
    }
    if res.time_levels < 2 {
        return Err(Error::ResolutionTooCoarse(format!(
            "{} time levels; at least 2 are needed",
            res.time_levels
        )));
    }
    let shape = res.nodes.clone();
    let mut strides = Vec::with_capacity(shape.len());
    let mut s = 1;
    for &n in &shape {
        strides.push(s);
        s *= n;
    }
    let spacing: Vec<f64> = dom
        .bounds
        .iter()
        .zip(&shape)
        .map(|(&(lo, hi), &n)| (hi - lo) / (n - 1) as f64)
        .collect();
    let nl = res.time_levels;
    let times: Vec<f64> = (0..nl)
        .map(|k| {
            if k == nl - 1 {
                dom.t_final
            } else {
                dom.t_final * k as f64 / (nl - 1) as f64
            }
        })
        .collect();
    let mut grid = Grid {
        domain: dom.clone(),
        partition: partition.clone(),
        shape,
        strides,
        spacing,
        times,
        classes: Vec::new(),
    };
    grid.classes = (0..grid.num_nodes())
        .map(|n| {
            let sides = grid.sides_of(n);
            if sides.is_empty() {
                return NodeClass::Interior;
            }
            let deg = sides
                .iter()
                .filter(|&&(axis, upper)| partition.is_degenerate(FaceId::Side { axis, upper }))
                .count();
            if deg == sides.len() {
                NodeClass::Degenerate
            } else if sides.len() == 1 {
                NodeClass::Nondegenerate
            } else {
                NodeClass::Corner
            }
        })
        .collect();
    Ok(grid)
}

impl Grid {
    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn partition(&self) -> &BoundaryPartition {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_nodes(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn num_levels(&self) -> usize {
        self.times.len()
    }

    pub fn top_level(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, level: usize) -> f64 {
        self.times[level]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dt(&self) -> f64 {
        self.domain.t_final / self.top_level() as f64
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        let mut rem = node;
        self.shape
            .iter()
            .map(|&n| {
                let i = rem % n;
                rem /= n;
                i
            })
            .collect()
    }

    pub fn node_at(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord(&self, node: usize, axis: usize) -> f64 {
        let i = (node / self.strides[axis]) % self.shape[axis];
        self.axis_coord(axis, i)
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.domain.bounds[axis];
        if i + 1 == self.shape[axis] {
            hi
        } else {
            lo + i as f64 * self.spacing[axis]
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim()).map(|a| self.coord(node, a)).collect()
    }

    /// Neighbor one step along `axis`, `upper` selecting the `+` direction.
    pub fn neighbor(&self, node: usize, axis: usize, upper: bool) -> Option<usize> {
        let i = (node / self.strides[axis]) % self.shape[axis];
        if upper {
            (i + 1 < self.shape[axis]).then(|| node + self.strides[axis])
        } else {
            (i > 0).then(|| node - self.strides[axis])
        }
    }

    pub fn axis_neighbors(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.dim());
        for axis in 0..self.dim() {
            for upper in [false, true] {
                if let Some(nb) = self.neighbor(node, axis, upper) {
                    out.push(nb);
                }
            }
        }
        out
    }

    /// Side faces `(axis, upper)` the node lies on.
    pub fn sides_of(&self, node: usize) -> Vec<(usize, bool)> {
        let mut out = Vec::new();
        for axis in 0..self.dim() {
            let i = (node / self.strides[axis]) % self.shape[axis];
            if i == 0 {
                out.push((axis, false));
            }
            if i + 1 == self.shape[axis] {
                out.push((axis, true));
            }
        }
        out
    }

    pub fn class(&self, node: usize) -> NodeClass {
        self.classes[node]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    /// Dirichlet nodes: the whole top level plus non-degenerate side nodes.
    pub fn is_dirichlet(&self, level: usize, node: usize) -> bool {
        level == self.top_level() || self.classes[node].is_dirichlet()
    }

    pub fn nodes_of(&self, class: NodeClass) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| self.classes[n] == class)
            .collect()
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Same geometry and resolution (partitions may differ).
    pub fn same_layout(&self, other: &Grid) -> bool {
        self.shape == other.shape
            && self.times == other.times
            && self.domain.bounds == other.domain.bounds
    }

    pub fn sample(&self, level: usize, f: impl Fn(f64, &[f64]) -> f64) -> GridFunction {
        let t = self.time(level);
        GridFunction::from_vec(
            self.shape.clone(),
            (0..self.num_nodes()).map(|n| f(t, &self.coords(n))).collect(),
        )
    }

    /// Node class table as CSV: `node,x1,..,xd,class`.
    pub fn classes_csv(&self) -> String {
        let mut out = String::from("node");
        for a in 0..self.dim() {
            out.push_str(&format!(",x{}", a + 1));
        }
        out.push_str(",class\n");
        for n in 0..self.num_nodes() {
            out.push_str(&n.to_string());
            for x in self.coords(n) {
                out.push_str(&format!(",{x}"));
            }
            out.push_str(&format!(",{}\n", self.classes[n].label()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, v: f64) -> Self {
        Self {
            shape: grid.shape.clone(),
            values: vec![v; grid.num_nodes()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for GridFunction {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl std::ops::IndexMut<usize> for GridFunction {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.values[i]
    }
}

/// Solution values at every time level, index 0 at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub levels: Vec<GridFunction>,
}

const TRAJECTORY_MAGIC: &[u8; 8] = b"DPTRAJ01";

impl Trajectory {
    pub fn level(&self, k: usize) -> &GridFunction {
        &self.levels[k]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn value(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// Little-endian layout: magic, `d` (u64), shape (u64 each), level count
    /// (u64), times (f64), then values level by level.
    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.levels.first().map(|l| l.shape().to_vec()).unwrap_or_default();
        let mut out = Vec::new();
        out.extend_from_slice(TRAJECTORY_MAGIC);
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &n in &shape {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.levels.len() as u64).to_le_bytes());
        for t in &self.times {
            out.extend_from_slice(&t.to_le_bytes());
        }
        for l in &self.levels {
            for v in l.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Io(format!("malformed trajectory: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != TRAJECTORY_MAGIC {
            return Err(bad("magic"));
        }
        let rd_u64 = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());
        let rd_f64 = |s: &[u8]| f64::from_le_bytes(s.try_into().unwrap());
        let d = rd_u64(take(8)?) as usize;
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            shape.push(rd_u64(take(8)?) as usize);
        }
        let nl = rd_u64(take(8)?) as usize;
        let mut times = Vec::with_capacity(nl);
        for _ in 0..nl {
            times.push(rd_f64(take(8)?));
        }
        let n: usize = shape.iter().product();
        let mut levels = Vec::with_capacity(nl);
        for _ in 0..nl {
            let vals = (0..n)
                .map(|_| take(8).map(rd_f64))
                .collect::<Result<Vec<_>>>()?;
            levels.push(GridFunction::from_vec(shape.clone(), vals));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { times, levels })
    }

    /// One level as CSV: `x1,..,xd,u`.
    pub fn level_csv(&self, grid: &Grid, level: usize) -> String {
        let mut out = String::new();
        for a in 0..grid.dim() {
            out.push_str(&format!("x{},", a + 1));
        }
        out.push_str("u\n");
        for n in 0..grid.num_nodes() {
            for x in grid.coords(n) {
                out.push_str(&format!("{x},"));
            }
            out.push_str(&format!("{:.17e}\n", self.levels[level][n]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify_degenerate_boundary, ClassifyOptions};
    use crate::operator::{make_heston, HestonParams};

    fn heston_grid(n: usize) -> Grid {
        let op = make_heston(HestonParams {
            sigma: 0.2,
            rho: -0.5,
            kappa: 1.5,
            theta: 0.04,
            r: 0.05,
            q: 0.0,
        })
        .unwrap();
        let dom = DomainSpec::new(1.0, vec![(-1.0, 1.0), (0.0, 1.0)]).unwrap();
        let part = classify_degenerate_boundary(&op, &dom, &ClassifyOptions::default()).unwrap();
        build_grid(&dom, &part, &Resolution::new(vec![n, n], 5)).unwrap()
    }

    #[test]
    fn heston_floor_nodes() {
        let g = heston_grid(21);
        let floor: Vec<usize> = (0..21).map(|i| g.node_at(&[i, 0])).collect();
        let deg = floor.iter().filter(|&&n| g.class(n) == NodeClass::Degenerate).count();
        let corner = floor.iter().filter(|&&n| g.class(n) == NodeClass::Corner).count();
        assert_eq!(deg, 19);
        assert_eq!(corner, 2);
        assert_eq!(g.count(NodeClass::Degenerate), 19);
        assert_eq!(g.count(NodeClass::Interior), 19 * 19);
        assert_eq!(g.count(NodeClass::Corner), 4);
        assert_eq!(g.count(NodeClass::Nondegenerate), 3 * 19);
        let total: usize = [
            NodeClass::Interior,
            NodeClass::Degenerate,
            NodeClass::Nondegenerate,
            NodeClass::Corner,
        ]
        .iter()
        .map(|&c| g.count(c))
        .sum();
        assert_eq!(total, g.num_nodes());
    }

    #[test]
    fn coordinates_and_neighbors() {
        let g = heston_grid(5);
        let n = g.node_at(&[2, 3]);
        assert_eq!(g.multi_index(n), vec![2, 3]);
        assert_eq!(g.coords(n), vec![0.0, 0.75]);
        assert_eq!(g.neighbor(n, 0, true), Some(g.node_at(&[3, 3])));
        assert_eq!(g.neighbor(g.node_at(&[0, 0]), 0, false), None);
        assert_eq!(g.axis_neighbors(g.node_at(&[0, 0])).len(), 2);
        assert_eq!(g.time(g.top_level()), 1.0);
        assert!((g.dt() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn too_coarse_rejected() {
        let g = heston_grid(5);
        assert!(matches!(
            build_grid(g.domain(), g.partition(), &Resolution::new(vec![2, 5], 4)),
            Err(Error::ResolutionTooCoarse(_))
        ));
        assert!(build_grid(g.domain(), g.partition(), &Resolution::new(vec![5, 5], 1)).is_err());
    }

    #[test]
    fn trajectory_bytes_round_trip() {
        let g = heston_grid(4);
        let traj = Trajectory {
            times: g.times().to_vec(),
            levels: (0..g.num_levels())
                .map(|k| g.sample(k, |t, x| t + x[0] * x[1]))
                .collect(),
        };
        let back = Trajectory::from_bytes(&traj.to_bytes()).unwrap();
        assert_eq!(back, traj);
        let mut bytes = traj.to_bytes();
        bytes.pop();
        assert!(Trajectory::from_bytes(&bytes).is_err());
    }
}
