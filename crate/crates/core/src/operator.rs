//! Linear parabolic operators `Lu = -u_t - tr(a D^2 u) - <b, Du> + c u`.
//!
//! Coefficients are stored as callable fields over `(t, x)`. The spatial
//! partials of `a` are optional; when absent they are approximated by central
//! differences with step [`ParabolicOperator::deriv_step`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Symmetry tolerance for `a(P)`.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Least-eigenvalue floor accepted as positive semi-definite.
pub const PSD_TOL: f64 = -1e-10;
/// Default central-difference step for the partials of `a`.
pub const DEFAULT_DERIV_STEP: f64 = 1e-5;

pub type MatrixField = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type VectorField = Arc<dyn Fn(f64, &[f64]) -> DVector<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Returns `[da/dx_1, ..., da/dx_d]`, each a `d x d` matrix.
pub type DerivativeField = Arc<dyn Fn(f64, &[f64]) -> Vec<DMatrix<f64>> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub t: f64,
    pub x: Vec<f64>,
}

impl SpaceTimePoint {
    pub fn new(t: f64, x: impl Into<Vec<f64>>) -> Self {
        Self { t, x: x.into() }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for SpaceTimePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}", self.t)?;
        for (i, v) in self.x.iter().enumerate() {
            write!(f, ", x{}={}", i + 1, v)?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTriple {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

#[derive(Clone)]
pub struct ParabolicOperator {
    name: String,
    dim: usize,
    a: MatrixField,
    b: VectorField,
    c: ScalarField,
    da: Option<DerivativeField>,
    deriv_step: f64,
    time_homogeneous: bool,
}

impl fmt::Debug for ParabolicOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParabolicOperator")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_da", &self.da.is_some())
            .field("deriv_step", &self.deriv_step)
            .field("time_homogeneous", &self.time_homogeneous)
            .finish()
    }
}

impl ParabolicOperator {
    pub fn new(dim: usize, a: MatrixField, b: VectorField, c: ScalarField) -> Self {
        Self {
            name: "custom".to_string(),
            dim,
            a,
            b,
            c,
            da: None,
            deriv_step: DEFAULT_DERIV_STEP,
            time_homogeneous: false,
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_derivatives(mut self, da: DerivativeField) -> Self {
        self.da = Some(da);
        self
    }

    /// Drops analytic partials so that finite differences are used instead.
    pub fn without_derivatives(mut self) -> Self {
        self.da = None;
        self
    }

    pub fn with_deriv_step(mut self, h: f64) -> Self {
        self.deriv_step = h;
        self
    }

    /// Marks the coefficients as independent of `t`, which lets solvers reuse
    /// one factorization across time steps.
    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.time_homogeneous = yes;
        self
    }

    /// Adds a constant to the zeroth-order coefficient.
    pub fn shifted(&self, dc: f64) -> Self {
        let c = self.c.clone();
        let mut out = self.clone();
        out.c = Arc::new(move |t, x| c(t, x) + dc);
        out
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn deriv_step(&self) -> f64 {
        self.deriv_step
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.da.is_some()
    }

    pub fn is_time_homogeneous(&self) -> bool {
        self.time_homogeneous
    }

    fn check_point(&self, p: &SpaceTimePoint) -> Result<()> {
        if p.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: p.dim(),
            });
        }
        if !p.is_finite() {
            return Err(Error::NonFinite {
                what: "coordinate".into(),
                location: p.to_string(),
            });
        }
        Ok(())
    }

    /// Raw diffusion matrix without validation.
    pub fn a_at(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.a)(t, x)
    }

    pub fn b_at(&self, t: f64, x: &[f64]) -> DVector<f64> {
        (self.b)(t, x)
    }

    pub fn c_at(&self, t: f64, x: &[f64]) -> f64 {
        (self.c)(t, x)
    }

    /// Evaluates `(a, b, c)` at `p`, checking finiteness, symmetry and
    /// positive semi-definiteness of `a`.
    pub fn eval_coefficients(&self, p: &SpaceTimePoint) -> Result<CoefficientTriple> {
        self.check_point(p)?;
        let a = (self.a)(p.t, &p.x);
        let b = (self.b)(p.t, &p.x);
        let c = (self.c)(p.t, &p.x);
        if a.nrows() != self.dim || a.ncols() != self.dim || b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::NonFinite {
                what: "coefficient".into(),
                location: p.to_string(),
            });
        }
        let lambda = least_eigenvalue_of(&a).map_err(|e| match e {
            Error::NotSymmetric { asymmetry, .. } => Error::NotSymmetric {
                location: p.to_string(),
                asymmetry,
            },
            other => other,
        })?;
        if lambda < PSD_TOL {
            return Err(Error::InvalidParameter(format!(
                "diffusion matrix not positive semi-definite at {p}: least eigenvalue {lambda:e}"
            )));
        }
        Ok(CoefficientTriple { a, b, c })
    }

    pub fn least_eigenvalue(&self, p: &SpaceTimePoint) -> Result<f64> {
        self.check_point(p)?;
        least_eigenvalue_of(&(self.a)(p.t, &p.x))
    }

    /// Spatial partials `[da/dx_1, ..., da/dx_d]` at `p`.
    pub fn a_derivatives(&self, p: &SpaceTimePoint) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(p)?;
        let out = match &self.da {
            Some(da) => da(p.t, &p.x),
            None => {
                let h = self.deriv_step;
                (0..self.dim)
                    .map(|l| {
                        let mut xp = p.x.clone();
                        let mut xm = p.x.clone();
                        xp[l] += h;
                        xm[l] -= h;
                        ((self.a)(p.t, &xp) - (self.a)(p.t, &xm)) / (2.0 * h)
                    })
                    .collect()
            }
        };
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: out.len(),
            });
        }
        if out.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                what: "derivative of a".into(),
                location: p.to_string(),
            });
        }
        Ok(out)
    }

    /// `sum_j d a^{kj} / d x_j` for each `k`.
    pub fn a_divergence(&self, p: &SpaceTimePoint) -> Result<DVector<f64>> {
        let da = self.a_derivatives(p)?;
        Ok(DVector::from_fn(self.dim, |k, _| {
            (0..self.dim).map(|j| da[j][(k, j)]).sum()
        }))
    }

    /// Applies `L` at a point to a function given through its derivatives.
    pub fn apply_pointwise(
        &self,
        p: &SpaceTimePoint,
        u: f64,
        u_t: f64,
        grad: &DVector<f64>,
        hess: &DMatrix<f64>,
    ) -> Result<f64> {
        let co = self.eval_coefficients(p)?;
        let trace = co.a.component_mul(hess).sum();
        Ok(-u_t - trace - co.b.dot(grad) + co.c * u)
    }
}

/// Smallest eigenvalue of a symmetric matrix: closed form for `d <= 2`,
/// symmetric eigensolve otherwise.
pub fn least_eigenvalue_of(a: &DMatrix<f64>) -> Result<f64> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            location: "matrix".into(),
            asymmetry: asym,
        });
    }
    Ok(match n {
        0 => 0.0,
        1 => a[(0, 0)],
        2 => {
            let (p, q, r) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
            let half_tr = 0.5 * (p + r);
            let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            half_tr - disc
        }
        _ => a.clone().symmetric_eigen().eigenvalues.min(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthVerdict {
    pub pass: bool,
    pub bound: f64,
    /// Largest observed `(tr a + <b, x>) / (1 + |x|^2)`.
    pub worst_ratio: f64,
    pub worst_point: Option<SpaceTimePoint>,
}

/// Scans `tr a + <b, x> <= K (1 + |x|^2)` over the samples.
pub fn check_quadratic_growth(
    op: &ParabolicOperator,
    samples: &[SpaceTimePoint],
    k: f64,
) -> GrowthVerdict {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_point = None;
    for p in samples {
        let a = op.a_at(p.t, &p.x);
        let b = op.b_at(p.t, &p.x);
        let x2: f64 = p.x.iter().map(|v| v * v).sum();
        let lhs = a.trace() + p.x.iter().zip(b.iter()).map(|(x, b)| x * b).sum::<f64>();
        let ratio = lhs / (1.0 + x2);
        if ratio > worst || ratio.is_nan() {
            worst = ratio;
            worst_point = Some(p.clone());
        }
    }
    GrowthVerdict {
        pass: !samples.is_empty() && worst <= k,
        bound: k,
        worst_ratio: worst,
        worst_point,
    }
}

/// Something that applies a discrete spatial operator to a grid function.
pub trait GridApplier {
    fn apply(&self, v: &GridFunction) -> Result<GridFunction>;
}

/// Computes `phi * A(v / phi)` node by node, the discrete form of the
/// conjugated operator `(L + N) v` with `N v = -[L, phi](phi^{-1} v)`.
pub fn conjugate_apply<A: GridApplier + ?Sized>(
    phi: &GridFunction,
    v: &GridFunction,
    applier: &A,
) -> Result<GridFunction> {
    if phi.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            got: v.len(),
        });
    }
    if let Some((node, &value)) = phi
        .values()
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > 0.0) || !p.is_finite())
    {
        return Err(Error::NonPositiveWeight { node, value });
    }
    let w = v.zip_map(phi, |v, p| v / p);
    let lw = applier.apply(&w)?;
    Ok(lw.zip_map(phi, |l, p| l * p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub sigma: f64,
    pub rho: f64,
    pub kappa: f64,
    pub theta: f64,
    pub r: f64,
    pub q: f64,
}

impl HestonParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma, self.rho, self.kappa, self.theta, self.r, self.q];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("Heston parameters must be finite".into()));
        }
        if self.sigma == 0.0 {
            return Err(Error::InvalidParameter("sigma must be non-zero".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho = {} outside (-1, 1)",
                self.rho
            )));
        }
        if self.kappa <= 0.0 {
            return Err(Error::InvalidParameter("kappa must be positive".into()));
        }
        if self.theta <= 0.0 {
            return Err(Error::InvalidParameter("theta must be positive".into()));
        }
        Ok(())
    }

    /// `2 kappa theta / sigma^2`.
    pub fn beta(&self) -> f64 {
        2.0 * self.kappa * self.theta / (self.sigma * self.sigma)
    }
}

/// The parabolic Heston operator in log-price `x1` and variance `x2`:
/// `a = (x2/2) [[1, rho sigma], [rho sigma, sigma^2]]`,
/// `b = (r - q - x2/2, kappa (theta - x2))`, `c = r`.
pub fn make_heston(params: HestonParams) -> Result<ParabolicOperator> {
    params.validate()?;
    let HestonParams {
        sigma,
        rho,
        kappa,
        theta,
        r,
        q,
    } = params;
    let shape = DMatrix::from_row_slice(2, 2, &[1.0, rho * sigma, rho * sigma, sigma * sigma]);
    let shape_a = shape.clone();
    let a: MatrixField = Arc::new(move |_t, x| &shape_a * (0.5 * x[1]));
    let b: VectorField = Arc::new(move |_t, x| {
        DVector::from_column_slice(&[r - q - 0.5 * x[1], kappa * (theta - x[1])])
    });
    let c: ScalarField = Arc::new(move |_t, _x| r);
    let da: DerivativeField =
        Arc::new(move |_t, _x| vec![DMatrix::zeros(2, 2), &shape * 0.5]);
    Ok(ParabolicOperator::new(2, a, b, c)
        .with_derivatives(da)
        .time_homogeneous(true)
        .named("heston"))
}

/// `a = I`, `b = 0`, `c = 0` in dimension `dim`.
pub fn identity_laplacian(dim: usize) -> ParabolicOperator {
    let a: MatrixField = Arc::new(move |_t, _x| DMatrix::identity(dim, dim));
    let b: VectorField = Arc::new(move |_t, _x| DVector::zeros(dim));
    let c: ScalarField = Arc::new(|_t, _x| 0.0);
    let da: DerivativeField = Arc::new(move |_t, _x| vec![DMatrix::zeros(dim, dim); dim]);
    ParabolicOperator::new(dim, a, b, c)
        .with_derivatives(da)
        .time_homogeneous(true)
        .named("identity-laplacian")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example_params() -> HestonParams {
        HestonParams {
            sigma: 0.2,
            rho: -0.5,
            kappa: 1.5,
            theta: 0.04,
            r: 0.05,
            q: 0.0,
        }
    }

    #[test]
    fn heston_coefficients_at_long_run_variance() {
        let op = make_heston(example_params()).unwrap();
        let co = op
            .eval_coefficients(&SpaceTimePoint::new(0.3, vec![0.1, 0.04]))
            .unwrap();
        let expected = [[0.02, -0.002], [-0.002, 0.0008]];
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(co.a[(i, j)], expected[i][j], epsilon = 1e-15);
            }
        }
        assert_abs_diff_eq!(co.b[0], 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(co.b[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(co.c, 0.05, epsilon = 1e-15);
    }

    #[test]
    fn heston_vanishes_on_variance_floor() {
        let p = example_params();
        let op = make_heston(p).unwrap();
        let co = op
            .eval_coefficients(&SpaceTimePoint::new(0.0, vec![-0.7, 0.0]))
            .unwrap();
        assert!(co.a.iter().all(|&v| v == 0.0));
        assert_abs_diff_eq!(co.b[0], p.r - p.q);
        assert_abs_diff_eq!(co.b[1], p.kappa * p.theta);
        assert_eq!(co.c, p.r);
        assert_eq!(op.least_eigenvalue(&SpaceTimePoint::new(0.0, vec![0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn identity_coefficients() {
        let op = identity_laplacian(3);
        let co = op
            .eval_coefficients(&SpaceTimePoint::new(1.0, vec![0.2, -3.0, 5.0]))
            .unwrap();
        assert_eq!(co.a, DMatrix::identity(3, 3));
        assert_eq!(co.b, DVector::zeros(3));
        assert_eq!(co.c, 0.0);
    }

    #[test]
    fn eval_rejects_wrong_dimension_and_nan() {
        let op = make_heston(example_params()).unwrap();
        assert!(matches!(
            op.eval_coefficients(&SpaceTimePoint::new(0.0, vec![0.1])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            op.eval_coefficients(&SpaceTimePoint::new(0.0, vec![f64::NAN, 0.1])),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn least_eigenvalue_closed_form_against_trace_determinant() {
        let a = DMatrix::from_row_slice(2, 2, &[0.02, -0.002, -0.002, 0.0008]);
        // trace/determinant oracle
        let tr: f64 = 0.0208;
        let det: f64 = 0.02 * 0.0008 - 0.002 * 0.002;
        let oracle = 0.5 * (tr - (tr * tr - 4.0 * det).sqrt());
        let got = least_eigenvalue_of(&a).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(got, 5.93879462294989e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(
            least_eigenvalue_of(&(DMatrix::identity(2, 2) * 3.0)).unwrap(),
            3.0
        );
        assert_abs_diff_eq!(
            least_eigenvalue_of(&(DMatrix::identity(4, 4) * 3.0)).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn least_eigenvalue_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(least_eigenvalue_of(&a), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn heston_degenerate_exactly_on_floor() {
        let op = make_heston(example_params()).unwrap();
        for &x2 in &[0.0, 1e-8, 0.01, 0.5, 2.0] {
            let lam = op.least_eigenvalue(&SpaceTimePoint::new(0.0, vec![0.3, x2])).unwrap();
            if x2 == 0.0 {
                assert_eq!(lam, 0.0);
            } else {
                assert!(lam > 0.0, "x2={x2} lambda={lam}");
            }
        }
    }

    #[test]
    fn heston_rejects_invalid_params() {
        let mut p = example_params();
        p.rho = 1.0;
        assert!(make_heston(p).is_err());
        let mut p = example_params();
        p.sigma = 0.0;
        assert!(make_heston(p).is_err());
        let mut p = example_params();
        p.kappa = -1.0;
        assert!(make_heston(p).is_err());
    }

    #[test]
    fn analytic_da_matches_central_differences() {
        let op = make_heston(example_params()).unwrap();
        let fd = op.clone().without_derivatives().with_deriv_step(1e-4);
        for &(x1, x2) in &[(0.0, 0.0), (-0.4, 0.3), (0.9, 1.7)] {
            let p = SpaceTimePoint::new(0.5, vec![x1, x2]);
            let exact = op.a_derivatives(&p).unwrap();
            let approx = fd.a_derivatives(&p).unwrap();
            for l in 0..2 {
                assert!((&exact[l] - &approx[l]).amax() < 1e-6);
            }
        }
    }

    #[test]
    fn quadratic_growth_heston_pass() {
        let p = example_params();
        let op = make_heston(p).unwrap();
        let k = (1.0 + p.sigma * p.sigma) / 2.0 + (p.r - p.q).abs() + p.kappa * p.theta + p.kappa;
        let mut samples = Vec::new();
        for i in 0..41 {
            for j in 0..41 {
                let x1 = -10.0 + 0.5 * i as f64;
                let x2 = 0.5 * j as f64;
                samples.push(SpaceTimePoint::new(0.0, vec![x1, x2]));
            }
        }
        let v = check_quadratic_growth(&op, &samples, k);
        assert!(v.pass, "worst ratio {}", v.worst_ratio);
    }

    #[test]
    fn quadratic_growth_cubic_drift_fails() {
        let a: MatrixField = Arc::new(|_t, _x| DMatrix::zeros(1, 1));
        let b: VectorField = Arc::new(|_t, x| DVector::from_element(1, x[0] * x[0] * x[0]));
        let c: ScalarField = Arc::new(|_t, _x| 0.0);
        let op = ParabolicOperator::new(1, a, b, c);
        let samples: Vec<_> = (0..50)
            .map(|i| SpaceTimePoint::new(0.0, vec![i as f64]))
            .collect();
        let v = check_quadratic_growth(&op, &samples, 100.0);
        assert!(!v.pass);
        assert_eq!(v.worst_point.unwrap().x[0], 49.0);
    }

    #[test]
    fn quadratic_growth_zero_coefficients() {
        let a: MatrixField = Arc::new(|_t, _x| DMatrix::zeros(2, 2));
        let b: VectorField = Arc::new(|_t, _x| DVector::zeros(2));
        let c: ScalarField = Arc::new(|_t, _x| 0.0);
        let op = ParabolicOperator::new(2, a, b, c);
        let samples = vec![SpaceTimePoint::new(0.0, vec![3.0, -4.0])];
        assert!(check_quadratic_growth(&op, &samples, 0.0).pass);
    }
}
