//! Fichera function and the induced partition of the boundary of the
//! space-time box, viewing `L` as degenerate elliptic in `(t, x)`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    parabolic_boundary, side_face_samples, BoundaryPartition, DomainSpec, FaceId, FaceKind,
    InwardNormal,
};
use crate::operator::{HestonParams, ParabolicOperator, SpaceTimePoint};

pub const DEFAULT_EPS_CHAR: f64 = 1e-10;
pub const DEFAULT_EPS_FB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SigmaClass {
    /// Characteristic, `fb = 0`.
    Sigma0,
    /// Characteristic, `fb > 0`.
    Sigma1,
    /// Characteristic, `fb < 0`.
    Sigma2,
    /// Non-characteristic: `a n . n > 0`.
    Sigma3,
}

impl fmt::Display for SigmaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SigmaClass::Sigma0 => "Sigma0",
            SigmaClass::Sigma1 => "Sigma1",
            SigmaClass::Sigma2 => "Sigma2",
            SigmaClass::Sigma3 => "Sigma3",
        };
        f.write_str(s)
    }
}

/// A face of the full boundary of `(0,T) x O`, including `{0} x O`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FicheraFace {
    Initial,
    Face(FaceId),
}

impl fmt::Display for FicheraFace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FicheraFace::Initial => f.write_str("initial"),
            FicheraFace::Face(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FicheraSample {
    pub point: SpaceTimePoint,
    pub fb: f64,
    pub sigma_class: SigmaClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSigma {
    pub face: FicheraFace,
    pub class: SigmaClass,
    pub fb_min: f64,
    pub fb_max: f64,
    pub samples: Vec<FicheraSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaPartition {
    pub faces: Vec<FaceSigma>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FicheraOptions {
    pub eps_char: f64,
    pub eps_fb: f64,
    pub samples_per_axis: usize,
}

impl Default for FicheraOptions {
    fn default() -> Self {
        Self {
            eps_char: DEFAULT_EPS_CHAR,
            eps_fb: DEFAULT_EPS_FB,
            samples_per_axis: 5,
        }
    }
}

/// `fb(p) = sum_k (b^k - sum_j d_j a^{kj}) n_k + n0` for the inward normal
/// `(n0, n)`.
pub fn fichera_function(
    op: &ParabolicOperator,
    dom: &DomainSpec,
    p: &SpaceTimePoint,
    normal: &InwardNormal,
) -> Result<f64> {
    if p.dim() != dom.dim() || normal.n.len() != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: if p.dim() != dom.dim() { p.dim() } else { normal.n.len() },
        });
    }
    let norm2 = normal.n0 * normal.n0 + normal.n.iter().map(|v| v * v).sum::<f64>();
    if (norm2 - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "normal has squared length {norm2}, expected 1"
        )));
    }
    let co = op.eval_coefficients(p)?;
    let div = op.a_divergence(p)?;
    let spatial: f64 = (0..dom.dim())
        .map(|k| (co.b[k] - div[k]) * normal.n[k])
        .sum();
    Ok(spatial + normal.n0)
}

fn classify_sample(
    op: &ParabolicOperator,
    dom: &DomainSpec,
    p: SpaceTimePoint,
    normal: &InwardNormal,
    opts: &FicheraOptions,
) -> Result<FicheraSample> {
    let a = op.eval_coefficients(&p)?.a;
    let n = nalgebra::DVector::from_column_slice(&normal.n);
    let ann = n.dot(&(&a * &n));
    let fb = fichera_function(op, dom, &p, normal)?;
    let sigma_class = if ann > opts.eps_char {
        SigmaClass::Sigma3
    } else if fb > opts.eps_fb {
        SigmaClass::Sigma1
    } else if fb < -opts.eps_fb {
        SigmaClass::Sigma2
    } else {
        SigmaClass::Sigma0
    };
    Ok(FicheraSample {
        point: p,
        fb,
        sigma_class,
    })
}

fn slice_samples(dom: &DomainSpec, t: f64, per_axis: usize) -> Vec<SpaceTimePoint> {
    let m = per_axis.max(1);
    let d = dom.dim();
    (0..m.pow(d as u32))
        .map(|idx| {
            let mut rem = idx;
            let x = dom
                .bounds
                .iter()
                .map(|&(lo, hi)| {
                    let j = rem % m;
                    rem /= m;
                    lo + (hi - lo) * (j as f64 + 0.5) / m as f64
                })
                .collect::<Vec<_>>();
            SpaceTimePoint::new(t, x)
        })
        .collect()
}

/// Classifies sampled points of every face (initial slice, top, sides) and
/// aggregates per face; a face whose samples disagree is an error.
pub fn sigma_partition(
    op: &ParabolicOperator,
    dom: &DomainSpec,
    opts: &FicheraOptions,
) -> Result<SigmaPartition> {
    dom.validate()?;
    if !(opts.eps_char > 0.0) || !(opts.eps_fb > 0.0) {
        return Err(Error::InvalidParameter("tolerances must be positive".into()));
    }
    if op.dim() != dom.dim() {
        return Err(Error::DimensionMismatch {
            expected: dom.dim(),
            got: op.dim(),
        });
    }
    let d = dom.dim();
    let mut groups: Vec<(FicheraFace, InwardNormal, Vec<SpaceTimePoint>)> = vec![(
        FicheraFace::Initial,
        InwardNormal {
            n0: 1.0,
            n: vec![0.0; d],
        },
        slice_samples(dom, 0.0, opts.samples_per_axis),
    )];
    for face in parabolic_boundary(dom) {
        match face.id {
            FaceId::Top => groups.push((
                FicheraFace::Face(FaceId::Top),
                face.normal.clone().expect("top has a normal"),
                slice_samples(dom, dom.t_final, opts.samples_per_axis),
            )),
            FaceId::Side { axis, upper } => groups.push((
                FicheraFace::Face(face.id),
                face.normal.clone().expect("side has a normal"),
                side_face_samples(dom, axis, upper, opts.samples_per_axis),
            )),
            FaceId::Corner { .. } => {}
        }
    }
    let mut faces = Vec::with_capacity(groups.len());
    for (face, normal, points) in groups {
        let samples = points
            .into_iter()
            .map(|p| classify_sample(op, dom, p, &normal, opts))
            .collect::<Result<Vec<_>>>()?;
        let classes: BTreeSet<SigmaClass> = samples.iter().map(|s| s.sigma_class).collect();
        if classes.len() != 1 {
            return Err(Error::AmbiguousFace {
                face: face.to_string(),
                detail: format!("mixed Fichera classes {classes:?}"),
            });
        }
        let fb_min = samples.iter().map(|s| s.fb).fold(f64::INFINITY, f64::min);
        let fb_max = samples.iter().map(|s| s.fb).fold(f64::NEG_INFINITY, f64::max);
        faces.push(FaceSigma {
            face,
            class: *classes.iter().next().unwrap(),
            fb_min,
            fb_max,
            samples,
        });
    }
    Ok(SigmaPartition { faces })
}

impl SigmaPartition {
    pub fn class_of(&self, face: FicheraFace) -> Option<SigmaClass> {
        self.faces.iter().find(|f| f.face == face).map(|f| f.class)
    }

    pub fn faces_in(&self, class: SigmaClass) -> BTreeSet<FicheraFace> {
        self.faces
            .iter()
            .filter(|f| f.class == class)
            .map(|f| f.face)
            .collect()
    }

    /// Face table as CSV: `face,class,fb_min,fb_max,samples`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("face,class,fb_min,fb_max,samples\n");
        for f in &self.faces {
            out.push_str(&format!(
                "{},{},{:e},{:e},{}\n",
                f.face,
                f.class,
                f.fb_min,
                f.fb_max,
                f.samples.len()
            ));
        }
        out
    }

    /// Side-by-side table of the Fichera data locus and the locus of
    /// Dirichlet data in the partial-Dirichlet formulation.
    pub fn comparison_table(&self, partition: &BoundaryPartition) -> String {
        let fichera = fichera_dirichlet_locus(self);
        let mut out = format!(
            "{:<10} {:<8} {:>13} {:>15} {:>17} {:>6}\n",
            "face", "class", "fb", "fichera_data", "dirichlet_data", "agree"
        );
        for f in &self.faces {
            let in_fichera = fichera.contains(&f.face);
            let in_ours = match f.face {
                FicheraFace::Initial => false,
                FicheraFace::Face(id) => partition
                    .face(id)
                    .is_some_and(|bf| bf.kind != FaceKind::Corner && !partition.is_degenerate(id)),
            };
            let fb = if (f.fb_max - f.fb_min).abs() <= 1e-12 {
                format!("{:.6e}", f.fb_min)
            } else {
                "varies".to_string()
            };
            out.push_str(&format!(
                "{:<10} {:<8} {:>13} {:>15} {:>17} {:>6}\n",
                f.face.to_string(),
                f.class.to_string(),
                fb,
                if in_fichera { "yes" } else { "no" },
                if in_ours { "yes" } else { "no" },
                if in_fichera == in_ours { "yes" } else { "NO" }
            ));
        }
        out
    }
}

/// `Sigma2 ∪ Sigma3`: where the classical Fichera problem prescribes data.
pub fn fichera_dirichlet_locus(partition: &SigmaPartition) -> BTreeSet<FicheraFace> {
    partition
        .faces
        .iter()
        .filter(|f| matches!(f.class, SigmaClass::Sigma2 | SigmaClass::Sigma3))
        .map(|f| f.face)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaReport {
    pub beta: f64,
    /// Fichera function on the `x2 = 0` face, `sigma^2 (beta - 1) / 2`.
    pub fb_floor: f64,
    pub floor_class: SigmaClass,
    pub dirichlet_locus_fichera: BTreeSet<FaceId>,
    pub dirichlet_locus_nondeg: BTreeSet<FaceId>,
    pub loci_agree: bool,
}

/// Classification of the variance floor for the Heston operator on a box
/// `(x1_lo, x1_hi) x (0, x2_hi)`.
pub fn heston_beta(params: &HestonParams) -> Result<BetaReport> {
    params.validate()?;
    let beta = params.beta();
    // kappa*theta - sigma^2/2 avoids the cancellation in beta - 1
    let fb_floor = params.kappa * params.theta - 0.5 * params.sigma * params.sigma;
    let floor_class = if fb_floor > DEFAULT_EPS_FB {
        SigmaClass::Sigma1
    } else if fb_floor < -DEFAULT_EPS_FB {
        SigmaClass::Sigma2
    } else {
        SigmaClass::Sigma0
    };
    let floor = FaceId::Side {
        axis: 1,
        upper: false,
    };
    let nondeg: BTreeSet<FaceId> = [
        FaceId::Top,
        FaceId::Side { axis: 0, upper: false },
        FaceId::Side { axis: 0, upper: true },
        FaceId::Side { axis: 1, upper: true },
    ]
    .into_iter()
    .collect();
    let mut fichera = nondeg.clone();
    if floor_class == SigmaClass::Sigma2 {
        fichera.insert(floor);
    }
    Ok(BetaReport {
        beta,
        fb_floor,
        floor_class,
        loci_agree: fichera == nondeg,
        dirichlet_locus_fichera: fichera,
        dirichlet_locus_nondeg: nondeg,
    })
}

impl BetaReport {
    pub fn to_text(&self) -> String {
        let list = |s: &BTreeSet<FaceId>| {
            s.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(", ")
        };
        format!(
            "beta = {:.6}\nfb on x2 = 0: {:.6e} ({})\nFichera data locus: {}\nDirichlet data locus: {}\nloci agree: {}\n",
            self.beta,
            self.fb_floor,
            self.floor_class,
            list(&self.dirichlet_locus_fichera),
            list(&self.dirichlet_locus_nondeg),
            if self.loci_agree { "yes" } else { "NO (floor needs data in the Fichera setting)" }
        )
    }
}
