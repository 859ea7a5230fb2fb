//! TOML suite configuration.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{DomainSpec, FaceId};
use crate::harness::instance::{DataSign, Family, SmoothField};
use crate::harness::Regime;
use crate::obstacle::PsorConfig;
use crate::operator::{HestonParams, ParabolicOperator};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    /// Runs executed concurrently; defaults to the number of cores.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default, rename = "run")]
    pub runs: Vec<RunConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub psor: PsorConfig,
    #[serde(default)]
    pub harness: Option<HarnessRun>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// Boundary partition and node classes.
    Partition,
    /// Fichera classification (and the floor report for Heston).
    Fichera,
    /// Terminal-value solve with per-level output.
    Solve,
    /// Obstacle solve; needs `data.psi`.
    Obstacle,
    /// Every applicable maximum-principle check on the solve.
    Verify,
    /// Extra Dirichlet data on the degenerate boundary, offset by 1.
    ForcedBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builtin", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSpec {
    Heston {
        sigma: f64,
        rho: f64,
        kappa: f64,
        theta: f64,
        r: f64,
        #[serde(default)]
        q: f64,
    },
    IdentityLaplacian {
        dim: usize,
    },
    Linear1d {
        alpha: f64,
        beta0: f64,
        #[serde(default)]
        beta1: f64,
        #[serde(default)]
        c: f64,
    },
    Scaled2d {
        p: f64,
        q: f64,
        s: f64,
        #[serde(default)]
        b10: f64,
        #[serde(default)]
        b11: f64,
        b20: f64,
        #[serde(default)]
        b21: f64,
        #[serde(default)]
        c: f64,
    },
}

pub const BUILTINS: [&str; 4] = ["heston", "identity-laplacian", "linear-1d", "scaled-2d"];

impl OperatorSpec {
    pub fn family(&self) -> Family {
        match *self {
            OperatorSpec::Heston {
                sigma,
                rho,
                kappa,
                theta,
                r,
                q,
            } => Family::Heston {
                params: HestonParams {
                    sigma,
                    rho,
                    kappa,
                    theta,
                    r,
                    q,
                },
            },
            OperatorSpec::IdentityLaplacian { dim } => Family::Laplacian { dim },
            OperatorSpec::Linear1d {
                alpha,
                beta0,
                beta1,
                c,
            } => Family::Linear1d {
                alpha,
                beta0,
                beta1,
                c: SmoothField::constant(c),
            },
            OperatorSpec::Scaled2d {
                p,
                q,
                s,
                b10,
                b11,
                b20,
                b21,
                c,
            } => Family::Scaled2d {
                p,
                q,
                s,
                b10,
                b11,
                b20,
                b21,
                c: SmoothField::constant(c),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.family().dim()
    }

    pub fn build(&self) -> Result<ParabolicOperator> {
        self.family().operator()
    }

    pub fn heston_params(&self) -> Option<HestonParams> {
        match self.family() {
            Family::Heston { params } => Some(params),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub t_final: f64,
    /// `[lo, hi]` per axis.
    pub bounds: Vec<[f64; 2]>,
    /// Artificial faces, e.g. `["x1-", "x1+", "x2+"]`.
    #[serde(default)]
    pub truncated: Vec<String>,
}

impl DomainConfig {
    pub fn build(&self) -> Result<DomainSpec> {
        let dom = DomainSpec::new(self.t_final, self.bounds.iter().map(|b| (b[0], b[1])).collect())?;
        let faces = self
            .truncated
            .iter()
            .map(|s| s.parse::<FaceId>())
            .collect::<Result<Vec<_>>>()?;
        dom.with_truncated(faces)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nodes: Vec<usize>,
    pub time_levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "zero")]
    pub f: String,
    pub g: String,
    #[serde(default)]
    pub psi: Option<String>,
}

fn zero() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessRun {
    pub regime: Regime,
    pub seeds: SeedRange,
    /// Fixed data signs; when absent the signs and dimension cycle with the
    /// seed.
    #[serde(default)]
    pub f_sign: Option<DataSign>,
    #[serde(default)]
    pub g_sign: Option<DataSign>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub obstacle: bool,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default)]
    pub time_levels: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

/// Parsed data expressions of a run.
#[derive(Debug, Clone)]
pub struct ParsedData {
    pub f: Expr,
    pub g: Expr,
    pub psi: Option<Expr>,
}

impl DataConfig {
    pub fn parse(&self, dim: usize) -> Result<ParsedData> {
        let p = |what: &str, s: &str| {
            Expr::parse(s, dim).map_err(|e| Error::Config(format!("data.{what}: {e}")))
        };
        Ok(ParsedData {
            f: p("f", &self.f)?,
            g: p("g", &self.g)?,
            psi: self.psi.as_deref().map(|s| p("psi", s)).transpose()?,
        })
    }
}

impl SuiteConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SuiteConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Config("suite has no runs".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for run in &self.runs {
            if !names.insert(run.name.as_str()) {
                return Err(Error::Config(format!("duplicate run name '{}'", run.name)));
            }
            run.validate()?;
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let ctx = |m: String| Error::Config(format!("run '{}': {m}", self.name));
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.name.starts_with('.')
        {
            return Err(ctx("name must be non-empty and use [A-Za-z0-9._-]".into()));
        }
        self.solver.validate().map_err(|e| ctx(e.to_string()))?;
        self.psor.validate().map_err(|e| ctx(e.to_string()))?;
        if let Some(h) = &self.harness {
            if self.operator.is_some() || self.data.is_some() || !self.checks.is_empty() {
                return Err(ctx("harness runs take no operator, data or checks".into()));
            }
            if h.seeds.count == 0 {
                return Err(ctx("harness needs at least one seed".into()));
            }
            if let Some(d) = h.dim {
                if !(1..=2).contains(&d) {
                    return Err(ctx(format!("harness dimension {d} not supported")));
                }
            }
            if h.f_sign.is_some() != h.g_sign.is_some() {
                return Err(ctx("give both f_sign and g_sign or neither".into()));
            }
            return Ok(());
        }
        let op = self
            .operator
            .as_ref()
            .ok_or_else(|| ctx("missing [run.operator] (or [run.harness])".into()))?;
        let dom = self
            .domain
            .as_ref()
            .ok_or_else(|| ctx("missing [run.domain]".into()))?
            .build()
            .map_err(|e| ctx(e.to_string()))?;
        if dom.dim() != op.dim() {
            return Err(ctx(format!(
                "domain has {} axes, operator dimension is {}",
                dom.dim(),
                op.dim()
            )));
        }
        op.build().map_err(|e| ctx(e.to_string()))?;
        if self.checks.is_empty() {
            return Err(ctx("no checks requested".into()));
        }
        let needs_solve = self
            .checks
            .iter()
            .any(|c| matches!(c, Check::Solve | Check::Obstacle | Check::Verify | Check::ForcedBoundary));
        if needs_solve {
            let g = self.grid.as_ref().ok_or_else(|| ctx("missing [run.grid]".into()))?;
            if g.nodes.len() != op.dim() {
                return Err(ctx("grid.nodes length differs from the dimension".into()));
            }
            let data = self.data.as_ref().ok_or_else(|| ctx("missing [run.data]".into()))?;
            let parsed = data.parse(op.dim()).map_err(|e| ctx(e.to_string()))?;
            if self.checks.contains(&Check::Obstacle) && parsed.psi.is_none() {
                return Err(ctx("obstacle check needs data.psi".into()));
            }
        }
        Ok(())
    }
}

/// Coefficients of a builtin operator.
pub fn describe(name: &str) -> Result<String> {
    let text = match name {
        "heston" => "heston: log-price x1, variance x2 >= 0\n\
            \x20 a(x) = (x2/2) [[1, rho sigma], [rho sigma, sigma^2]]\n\
            \x20 b(x) = (r - q - x2/2, kappa (theta - x2))\n\
            \x20 c    = r\n\
            \x20 parameters: sigma != 0, -1 < rho < 1, kappa > 0, theta > 0, r, q\n\
            \x20 beta = 2 kappa theta / sigma^2; x2 = 0 is a degenerate boundary\n\
            \x20 Lu = -u_t - tr(a D^2 u) - <b, Du> + c u\n"
            .to_string(),
        "identity-laplacian" => "identity-laplacian: a = I, b = 0, c = 0 in dimension `dim`\n\
            \x20 Lu = -u_t - Laplacian u\n"
            .to_string(),
        "linear-1d" => "linear-1d: x in (0, 1)\n\
            \x20 a(x) = alpha x, b(x) = beta0 + beta1 x, c = const\n\
            \x20 x = 0 is degenerate; beta0 >= 0 makes it an inflow boundary\n"
            .to_string(),
        "scaled-2d" => "scaled-2d: x2 >= 0\n\
            \x20 a(x) = x2 [[p, s], [s, q]] with p, q > 0, s^2 < pq\n\
            \x20 b(x) = (b10 + b11 sin(x1) - x2/2, b20 - b21 x2), c = const\n\
            \x20 x2 = 0 is degenerate; b20 >= 0 keeps the normal drift non-negative\n"
            .to_string(),
        other => {
            return Err(Error::UnknownBuiltin(format!(
                "'{other}' (known: {})",
                BUILTINS.join(", ")
            )))
        }
    };
    Ok(text)
}
