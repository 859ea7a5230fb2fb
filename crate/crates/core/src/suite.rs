//! Suite execution and on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Check, HarnessRun, RunConfig, SuiteConfig};
use crate::error::{Error, Result};
use crate::fichera::{heston_beta, sigma_partition, FicheraFace, FicheraOptions};
use crate::geometry::{classify_degenerate_boundary, BoundaryPartition, ClassifyOptions, FaceId};
use crate::grid::{build_grid, Grid, Resolution, Trajectory};
use crate::harness::checks::check_obstacle_estimates;
use crate::harness::instance::{instrument_boundary_data, ProblemInstance};
use crate::harness::{
    cycling_recipe, random_instance, verify_instance, HarnessConfig, InstanceRecipe, Regime, Status,
    Verdict, VerificationReport,
};
use crate::obstacle::{complementarity_residual, solve_obstacle_problem, ObstacleData};
use crate::solver::{forced_degenerate_dirichlet, solve_terminal_value_problem, ProblemData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Everything the config asks for.
    Full,
    /// Boundary partition and Fichera report only.
    ClassifyOnly,
    /// Partition and solves, no maximum-principle checks.
    SolveOnly,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides every run seed (the first seed for harness runs).
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    /// Ambiguous boundary classification is an error.
    pub strict: bool,
    pub mode: Mode,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            seed: None,
            jobs: None,
            strict: false,
            mode: Mode::Full,
        }
    }
}

/// Everything a run reports, serialized to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    /// Run-level verdicts (classification, solves).
    pub verdicts: Vec<Verdict>,
    /// Per-instance verification reports.
    pub instances: Vec<VerificationReport>,
}

impl RunReport {
    pub fn all_verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts
            .iter()
            .chain(self.instances.iter().flat_map(|r| r.verdicts.iter()))
    }

    pub fn failures(&self) -> usize {
        self.all_verdicts().filter(|v| v.status == Status::Fail).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("run {} (seed {})\n", self.name, self.seed);
        for v in &self.verdicts {
            let tag = match v.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Inconclusive => "INCONCLUSIVE",
            };
            let _ = writeln!(
                s,
                "  {tag:<12} {:<34} violation={:.3e} tol={:.1e}  {}",
                v.property, v.violation, v.tolerance, v.statement
            );
        }
        for r in &self.instances {
            s.push_str(&r.to_text());
        }
        let total = self.all_verdicts().count();
        let _ = writeln!(s, "{} verdicts, {} failed", total, self.failures());
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub verdicts: usize,
    pub failures: usize,
    pub inconclusive: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub runs: Vec<RunOutcome>,
}

impl SuiteOutcome {
    pub fn all_pass(&self) -> bool {
        self.runs.iter().all(|r| r.failures == 0)
    }

    /// 0 when no verdict failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_pass() {
            0
        } else {
            1
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{:<6} {:<28} verdicts={:<5} failed={:<4} inconclusive={}",
                if r.failures == 0 { "PASS" } else { "FAIL" },
                r.name,
                r.verdicts,
                r.failures,
                r.inconclusive
            );
        }
        s
    }
}

/// Collects artifacts of one run directory and writes the checksum manifest.
struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    fn new(dir: PathBuf) -> Result<Self> {
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        let mut manifest = String::new();
        for rel in &self.files {
            let bytes = fs::read(self.dir.join(rel))?;
            let _ = writeln!(manifest, "{}  {rel}", hex(&Sha256::digest(&bytes)));
        }
        fs::write(self.dir.join("MANIFEST.sha256"), manifest)?;
        Ok(self.dir)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks a directory against its `MANIFEST.sha256`; returns mismatching
/// paths.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(dir.join("MANIFEST.sha256"))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let (sum, rel) = line
            .split_once("  ")
            .ok_or_else(|| Error::Io(format!("malformed manifest line '{line}'")))?;
        match fs::read(dir.join(rel)) {
            Ok(bytes) if hex(&Sha256::digest(&bytes)) == sum => {}
            _ => bad.push(rel.to_string()),
        }
    }
    Ok(bad)
}

fn trajectory_artifacts(art: &mut Artifacts, prefix: &str, grid: &Grid, traj: &Trajectory) -> Result<()> {
    for k in 0..grid.num_levels() {
        art.write(&format!("{prefix}/level_{k:04}.csv"), traj.level_csv(grid, k).as_bytes())?;
    }
    art.write(&format!("{prefix}/trajectory.bin"), &traj.to_bytes())
}

fn classify_opts(strict: bool) -> ClassifyOptions {
    ClassifyOptions {
        strict,
        ..ClassifyOptions::default()
    }
}

fn regime_from_c_min(c_min: f64) -> Regime {
    if c_min > 0.0 {
        Regime::Coercive { c0: c_min }
    } else if c_min == 0.0 {
        Regime::NonNegative
    } else {
        Regime::BoundedBelow { k0: -c_min }
    }
}

fn sampled_c_min(inst_op: &crate::operator::ParabolicOperator, grid: &Grid) -> f64 {
    let mut m = f64::INFINITY;
    for k in 0..grid.num_levels() {
        for n in 0..grid.num_nodes() {
            m = m.min(inst_op.c_at(grid.time(k), &grid.coords(n)));
        }
    }
    m
}

fn fichera_artifacts(
    run: &RunConfig,
    part: &BoundaryPartition,
    dom: &crate::geometry::DomainSpec,
    op: &crate::operator::ParabolicOperator,
    art: &mut Artifacts,
    verdicts: &mut Vec<Verdict>,
) -> Result<()> {
    let sigma = sigma_partition(op, dom, &FicheraOptions::default())?;
    art.write("fichera.csv", sigma.to_csv().as_bytes())?;
    let mut text = sigma.comparison_table(part);
    let spec = run.operator.as_ref().expect("validated");
    if let Some(params) = spec.heston_params() {
        let rep = heston_beta(&params)?;
        text.push('\n');
        text.push_str(&rep.to_text());
        let floor = FicheraFace::Face(FaceId::Side {
            axis: 1,
            upper: false,
        });
        if dom.bounds[1].0 == 0.0 {
            if let Some(face) = sigma.faces.iter().find(|f| f.face == floor) {
                let expected = 0.5 * params.sigma * params.sigma * (params.beta() - 1.0);
                let dev = (face.fb_min - expected).abs().max((face.fb_max - expected).abs());
                verdicts.push(Verdict::measured(
                    "fichera/floor-value",
                    format!("fb on x2 = 0 equals sigma^2 (beta - 1)/2 = {expected:.6e}"),
                    dev,
                    1e-10,
                    None,
                ));
                verdicts.push(Verdict::measured(
                    "fichera/floor-class",
                    format!("sampled class {} matches the closed form {}", face.class, rep.floor_class),
                    if face.class == rep.floor_class { 0.0 } else { 1.0 },
                    0.0,
                    None,
                ));
            }
        }
    }
    art.write("fichera.txt", text.as_bytes())
}

fn run_problem(run: &RunConfig, opts: &RunOptions, art: &mut Artifacts) -> Result<RunReport> {
    let seed = opts.seed.unwrap_or(run.seed);
    let spec = run.operator.as_ref().expect("validated");
    let op = spec.build()?;
    let dom = run.domain.as_ref().expect("validated").build()?;
    let part = classify_degenerate_boundary(&op, &dom, &classify_opts(opts.strict))?;
    art.write("partition.csv", part.to_csv().as_bytes())?;
    let mut verdicts = Vec::new();
    let mut instances = Vec::new();
    let wants = |c: Check| run.checks.contains(&c);
    if wants(Check::Fichera) || opts.mode == Mode::ClassifyOnly {
        fichera_artifacts(run, &part, &dom, &op, art, &mut verdicts)?;
    }
    let solving = [Check::Solve, Check::Obstacle, Check::Verify, Check::ForcedBoundary]
        .iter()
        .any(|&c| wants(c));
    if opts.mode == Mode::ClassifyOnly || !solving {
        return Ok(RunReport {
            name: run.name.clone(),
            seed,
            verdicts,
            instances,
        });
    }
    let gc = run.grid.as_ref().expect("validated");
    let grid = build_grid(&dom, &part, &Resolution::new(gc.nodes.clone(), gc.time_levels))?;
    art.write("classes.csv", grid.classes_csv().as_bytes())?;
    let parsed = run.data.as_ref().expect("validated").parse(op.dim())?;
    let f = parsed.f.clone().into_field();
    let g = parsed.g.clone().into_field();
    let psi = parsed.psi.clone().map(|p| p.into_field());
    let (g_watched, counter) = instrument_boundary_data(g.clone(), &grid, None);
    let data = ProblemData {
        f: f.clone(),
        g: g_watched,
    };
    let sol = solve_terminal_value_problem(&op, &grid, &data, &run.solver)?;
    trajectory_artifacts(art, "solution", &grid, &sol.trajectory)?;
    verdicts.push(Verdict::measured(
        "scheme/monotone",
        "stepping matrices are M-matrices",
        if sol.monotonicity.pass { 0.0 } else { 1.0 },
        0.0,
        None,
    ));
    let hcfg = HarnessConfig {
        solver: run.solver.clone(),
        psor: run.psor,
        ..HarnessConfig::default()
    };
    if wants(Check::Obstacle) {
        let od = ObstacleData {
            f: f.clone(),
            g: g.clone(),
            psi: psi.clone().expect("validated"),
        };
        let obs = solve_obstacle_problem(&op, &grid, &od, &run.solver, &run.psor)?;
        trajectory_artifacts(art, "obstacle", &grid, &obs.trajectory)?;
        if opts.mode == Mode::Full {
            let diag = complementarity_residual(&op, &grid, &obs.trajectory, &od, &run.solver)?;
            verdicts.push(Verdict::measured(
                "obstacle/complementarity",
                "max |min(Lu - f, u - psi)| over equation nodes",
                diag.complementarity.max(diag.equation_violation),
                hcfg.slack(),
                None,
            ));
        }
    }
    if opts.mode == Mode::Full {
        let c_min = sampled_c_min(&op, &grid);
        let inst = ProblemInstance::on_grid(
            seed,
            spec.family(),
            op.clone(),
            grid.clone(),
            regime_from_c_min(c_min),
            f.clone(),
            g.clone(),
            psi.clone(),
            format!("f = {}, g = {}", parsed.f.source(), parsed.g.source()),
        )?;
        if wants(Check::Verify) {
            instances.push(verify_instance(&inst, &hcfg)?);
        } else if wants(Check::Obstacle) {
            let od = inst.obstacle_data().expect("obstacle");
            let obs = solve_obstacle_problem(&op, &grid, &od, &run.solver, &run.psor)?;
            verdicts.extend(check_obstacle_estimates(&inst, &obs.trajectory, hcfg.slack())?);
        }
        if wants(Check::ForcedBoundary) {
            let rep = forced_degenerate_dirichlet(&op, &grid, &inst.data(), &run.solver, 1.0)?;
            trajectory_artifacts(art, "forced", &grid, &rep.forced)?;
            verdicts.push(Verdict::measured(
                "boundary/forced-dirichlet-differs",
                format!(
                    "Dirichlet data on the degenerate boundary (trace + 1) moves interior values by >= 0.1; \
                     interior diff = {:.6e}, sup-norm change = {:.6e}",
                    rep.interior_diff, rep.norm_change
                ),
                (0.1 - rep.interior_diff).max(0.0),
                0.0,
                None,
            ));
        }
        verdicts.push(Verdict::measured(
            "data/no-degenerate-reads",
            "boundary data never read on the degenerate boundary",
            counter.count() as f64,
            0.0,
            None,
        ));
    }
    Ok(RunReport {
        name: run.name.clone(),
        seed,
        verdicts,
        instances,
    })
}

fn harness_recipe(h: &HarnessRun, seed: u64) -> InstanceRecipe {
    let mut r = match (h.f_sign, h.g_sign) {
        (Some(f), Some(g)) => InstanceRecipe::new(h.regime, h.dim.unwrap_or(2)).signs(f, g),
        _ => {
            let mut r = cycling_recipe(h.regime, seed);
            if let Some(d) = h.dim {
                r = InstanceRecipe::new(h.regime, d).signs(r.f_sign, r.g_sign);
            }
            r
        }
    };
    r = r.obstacle(h.obstacle);
    let nodes = h.nodes.unwrap_or(r.nodes);
    let levels = h.time_levels.unwrap_or(r.time_levels);
    r.resolution(nodes, levels)
}

fn run_harness(run: &RunConfig, h: &HarnessRun, opts: &RunOptions) -> Result<RunReport> {
    let start = opts.seed.unwrap_or(h.seeds.start);
    let hcfg = HarnessConfig {
        solver: run.solver.clone(),
        psor: run.psor,
        ..HarnessConfig::default()
    };
    let seeds: Vec<u64> = (start..start + h.seeds.count).collect();
    let instances = seeds
        .par_iter()
        .map(|&s| {
            let inst = random_instance(s, &harness_recipe(h, s))?;
            if opts.mode == Mode::SolveOnly {
                let sol = solve_terminal_value_problem(&inst.op, &inst.grid, &inst.data(), &hcfg.solver)?;
                return Ok(VerificationReport {
                    instance: inst.summary(),
                    verdicts: vec![Verdict::measured(
                        "scheme/monotone",
                        "stepping matrices are M-matrices",
                        if sol.monotonicity.pass { 0.0 } else { 1.0 },
                        0.0,
                        None,
                    )],
                    monotone: sol.monotonicity.pass,
                    degenerate_reads: 0,
                    runtime_ms: 0.0,
                });
            }
            verify_instance(&inst, &hcfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport {
        name: run.name.clone(),
        seed: start,
        verdicts: Vec::new(),
        instances,
    })
}

fn execute_run(run: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let mut art = Artifacts::new(opts.out.join(&run.name))?;
    let report = match &run.harness {
        Some(h) if opts.mode != Mode::ClassifyOnly => run_harness(run, h, opts)?,
        Some(_) => RunReport {
            name: run.name.clone(),
            seed: opts.seed.unwrap_or(run.seed),
            verdicts: Vec::new(),
            instances: Vec::new(),
        },
        None => run_problem(run, opts, &mut art)?,
    };
    art.write(
        "report.json",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Io(e.to_string()))?
            .as_bytes(),
    )?;
    art.write("report.txt", report.to_text().as_bytes())?;
    let dir = art.finish()?;
    let all: Vec<&Verdict> = report.all_verdicts().collect();
    Ok(RunOutcome {
        name: run.name.clone(),
        dir,
        verdicts: all.len(),
        failures: report.failures(),
        inconclusive: all.iter().filter(|v| v.status == Status::Inconclusive).count(),
    })
}

/// Runs every entry of a suite, writing `<out>/<run name>/...` and
/// `<out>/summary.txt`.
pub fn run_suite(cfg: &SuiteConfig, opts: &RunOptions) -> Result<SuiteOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&opts.out)?;
    let jobs = opts.jobs.or(cfg.jobs);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::Config(e.to_string()))?;
    let runs = pool.install(|| {
        cfg.runs
            .par_iter()
            .map(|r| execute_run(r, opts))
            .collect::<Result<Vec<_>>>()
    })?;
    let outcome = SuiteOutcome { runs };
    fs::write(opts.out.join("summary.txt"), outcome.summary())?;
    Ok(outcome)
}
