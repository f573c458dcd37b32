//! Command-line experiments: configuration, the ε-sweeps, and the files they leave behind.
//!
//! Every subcommand reads one TOML file. Output goes to `--out` (or `out` in the file);
//! each ε gets its own directory `eps<value>/` holding the field files and a `meta.toml`
//! sidecar, and the summary tables are merged in ε order once all workers finish.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ansatz::{multi_peak_sum, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{norm_linf, Field, Grid};
use crate::io::{read_field, write_field};
use crate::linop::{probe_for, LinearSolveConfig};
use crate::oracle::{newton_solve, pde_residual, standard_battery, uniqueness_experiment, NewtonConfig, Perturbation, SolutionView, Verdict};
use crate::peaksolve::{certify_field, certify_peak_solution, solve_peaks, CertifyConfig, ConstructedSolution, OuterConfig};
use crate::potential::{Family, PotentialModel};
use crate::reduction::ReductionConfig;
use crate::verify::{decay_profile, log_sobolev_check, pohozaev_residual, spectrum_sweep};

pub const EXIT_CONSTRUCTION: u8 = 2;
pub const EXIT_VERIFICATION: u8 = 3;
pub const EXIT_INCONCLUSIVE: u8 = 4;
/// Configuration and I/O problems that stop a run before any experiment.
pub const EXIT_USAGE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Construct,
    Verify,
    Uniqueness,
    Spectrum,
    OracleCrossCheck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: Family,
    pub params: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSpec {
    /// Newton seeds for the critical-point search; every accepted point becomes a peak.
    #[serde(default)]
    pub seeds: Vec<Vec<f64>>,
    /// Centres used as given, skipping the search (constant V has no isolated critical points).
    #[serde(default)]
    pub centres: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub eps: Vec<f64>,
    /// Points per axis; omitted means the per-ε rule `h ≤ eps/6`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    /// Run the dense coercivity probe for the `rho_hat` column.
    #[serde(default = "yes")]
    pub probe: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReductionSpec {
    pub theta: f64,
    pub tau: f64,
    pub tol_fix: f64,
    pub max_fix: usize,
    pub core_radius: f64,
    pub enforce_membership: bool,
    pub tol_lin: f64,
}

impl Default for ReductionSpec {
    fn default() -> Self {
        let r = ReductionConfig::default();
        Self {
            theta: r.theta,
            tau: r.tau,
            tol_fix: r.tol_fix,
            max_fix: r.max_fix,
            core_radius: r.core_radius,
            enforce_membership: r.enforce_membership,
            tol_lin: r.linear.tol_lin,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol_outer: Option<f64>,
    pub fd_step: f64,
    pub max_outer: usize,
}

impl Default for OuterSpec {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self { tol_outer: o.tol_outer, fd_step: o.fd_step, max_outer: o.max_outer }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub tol_newton: f64,
    pub u_floor: f64,
    pub max_newton: usize,
    pub damping: bool,
}

impl Default for OracleSpec {
    fn default() -> Self {
        let n = NewtonConfig::default();
        Self { tol_newton: n.tol_newton, u_floor: n.u_floor, max_newton: n.max_newton, damping: n.damping }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub tol_poho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pohozaev_delta: Option<f64>,
    pub r_factor: f64,
    pub tau_small: f64,
    pub energy_factor: f64,
    /// Scale parameter of the logarithmic Sobolev check.
    pub lsi_a: f64,
    /// Radii, in units of ε, of the decay table.
    pub decay_radii: Vec<f64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let c = CertifyConfig::default();
        Self {
            tol_poho: 0.1,
            pohozaev_delta: None,
            r_factor: c.r_factor,
            tau_small: c.tau_small,
            energy_factor: c.energy_factor,
            lsi_a: 1.0,
            decay_radii: (0..=20).map(|r| 0.5 * r as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessSpec {
    /// Include the standard perturbation battery.
    pub battery: bool,
    /// Extra initializers: the ansatz centred at each of these points, one run per point.
    pub cross_well: Vec<Vec<f64>>,
}

impl Default for UniquenessSpec {
    fn default() -> Self {
        Self { battery: true, cross_well: vec![] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    pub omega: f64,
    pub half_width: f64,
    pub ns: Vec<usize>,
    pub min_rate: f64,
    pub min_cosine: f64,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self { omega: 1.0, half_width: 5.0, ns: vec![21, 31, 41], min_rate: 1.9, min_cosine: 0.99 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub potential: PotentialSpec,
    pub peaks: PeakSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub reduction: ReductionSpec,
    #[serde(default)]
    pub outer: OuterSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub uniqueness: UniquenessSpec,
    #[serde(default)]
    pub spectrum: SpectrumSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let dim = self.potential.dim;
        if !(1..=3).contains(&dim) {
            return bad(format!("dimension {dim} is outside 1..=3"));
        }
        if self.sweep.eps.is_empty() {
            return bad("the eps list is empty".into());
        }
        if self.sweep.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("every eps must be positive".into());
        }
        if self.sweep.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("the eps list must be strictly decreasing".into());
        }
        if let Some(n) = self.sweep.n {
            if n % 2 == 0 || n < 9 {
                return bad(format!("n = {n} must be odd and at least 9"));
            }
        }
        let p = &self.peaks;
        if p.seeds.is_empty() == p.centres.is_empty() {
            return bad("give exactly one of peaks.seeds and peaks.centres".into());
        }
        if p.seeds.iter().chain(&p.centres).any(|s| s.len() != dim) {
            return bad(format!("peaks.seeds and peaks.centres must hold {dim}-vectors"));
        }
        if self.uniqueness.cross_well.iter().any(|s| s.len() != dim) {
            return bad(format!("uniqueness.cross_well entries must be {dim}-vectors"));
        }
        let r = &self.reduction;
        let o = &self.oracle;
        let positive = [
            ("peaks.delta", self.peaks.delta),
            ("reduction.tau", r.tau),
            ("reduction.tol_fix", r.tol_fix),
            ("reduction.tol_lin", r.tol_lin),
            ("reduction.core_radius", r.core_radius),
            ("outer.fd_step", self.outer.fd_step),
            ("oracle.tol_newton", o.tol_newton),
            ("verify.tol_poho", self.verify.tol_poho),
            ("verify.tau_small", self.verify.tau_small),
            ("verify.lsi_a", self.verify.lsi_a),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return bad(format!("{name} = {v} must be positive"));
        }
        if self.outer.tol_outer.is_some_and(|t| !(t > 0.0)) {
            return bad("outer.tol_outer must be positive".into());
        }
        if !(0.0..1.0).contains(&r.theta) {
            return bad(format!("reduction.theta = {} must lie in [0, 1)", r.theta));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.newton().validate()
    }

    pub fn model(&self) -> Result<PotentialModel> {
        PotentialModel::new(self.potential.family, self.potential.params.clone(), self.potential.dim)
    }

    /// First 16 hex digits of the SHA-256 of the canonical (re-serialised) configuration,
    /// leaving out the output directory and the worker count.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        c.workers = None;
        let canon = toml::to_string(&c).expect("configuration serialises");
        let digest = Sha256::digest(canon.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn outer(&self) -> OuterConfig {
        let r = &self.reduction;
        OuterConfig {
            tol_outer: self.outer.tol_outer,
            fd_step: self.outer.fd_step,
            max_outer: self.outer.max_outer,
            reduction: ReductionConfig {
                theta: r.theta,
                tau: r.tau,
                tol_fix: r.tol_fix,
                max_fix: r.max_fix,
                core_radius: r.core_radius,
                enforce_membership: r.enforce_membership,
                linear: LinearSolveConfig { tol_lin: r.tol_lin, ..Default::default() },
            },
            ..Default::default()
        }
    }

    pub fn newton(&self) -> NewtonConfig {
        let o = &self.oracle;
        NewtonConfig { tol_newton: o.tol_newton, u_floor: o.u_floor, max_newton: o.max_newton, damping: o.damping, ..Default::default() }
    }

    pub fn certify(&self) -> CertifyConfig {
        let v = &self.verify;
        CertifyConfig { r_factor: v.r_factor, tau_small: v.tau_small, energy_factor: v.energy_factor, ..Default::default() }
    }

    pub fn grid_for(&self, eps: f64, xi: &[Vec<f64>]) -> Result<Grid> {
        match (self.sweep.n, self.sweep.half_width) {
            (Some(n), Some(l)) => Grid::new(self.potential.dim, n, l),
            (None, None) => Grid::for_peaks(self.potential.dim, eps, xi),
            (n, l) => {
                let auto = Grid::for_peaks(self.potential.dim, eps, xi)?;
                Grid::new(self.potential.dim, n.unwrap_or(auto.n()), l.unwrap_or(auto.half_width()))
            }
        }
    }

    /// Accepted critical points, checked against `peaks.k` when it is given.
    pub fn critical_points(&self, model: &PotentialModel) -> Result<Vec<Vec<f64>>> {
        let xi: Vec<Vec<f64>> = if self.peaks.centres.is_empty() {
            model.find_critical_points(&self.peaks.seeds)?.points.into_iter().map(|p| p.location).collect()
        } else {
            self.peaks.centres.clone()
        };
        if let Some(k) = self.peaks.k {
            if k != xi.len() {
                return Err(Error::Config(format!("peaks.k = {k} but the seeds gave {} critical points", xi.len())));
            }
        }
        Ok(xi)
    }
}

/// Everything needed to rebuild the peak set of a stored solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub config_hash: String,
    pub eps: f64,
    pub delta: f64,
    pub xi: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub outer_iterations: usize,
    pub max_multiplier: f64,
    pub certified: bool,
}

impl Sidecar {
    pub fn peaks(&self) -> Result<PeakSet> {
        PeakSet::new(self.eps, self.y.clone(), self.xi.clone(), self.delta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        toml::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn eps_dir(out: &Path, eps: f64) -> PathBuf {
    out.join(format!("eps{eps}"))
}

#[derive(Parser, Debug)]
#[command(name = "gausson", version, about = "Multi-peak solutions of -eps^2 Δu + V u = u log u^2")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Construct solutions for every eps and write the summary table.
    Construct,
    /// Pohozaev, decay, certification and log-Sobolev checks on stored solutions.
    Verify {
        /// Solution directories or field files; default: every `eps*/` under the output directory.
        solutions: Vec<PathBuf>,
    },
    /// Newton runs from perturbed initializers around stored solutions.
    Uniqueness { solutions: Vec<PathBuf> },
    /// Spectrum of the discretised limiting operator over an h-sweep.
    Spectrum,
    /// Construct, then refine with the Newton oracle and compare.
    OracleCrossCheck,
}

/// Outcome of one subcommand: the files it wrote and the exit status it asks for.
#[derive(Debug, Clone)]
pub struct Report {
    pub code: u8,
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl Report {
    fn new() -> Self {
        Self { code: 0, files: vec![], lines: vec![] }
    }

    fn raise(&mut self, code: u8) {
        self.code = self.code.max(code);
    }
}

pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(rep) => {
            for l in &rep.lines {
                println!("{l}");
            }
            ExitCode::from(rep.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Report> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let which = match &cli.command {
        Some(Command::Construct) => Experiment::Construct,
        Some(Command::Verify { .. }) => Experiment::Verify,
        Some(Command::Uniqueness { .. }) => Experiment::Uniqueness,
        Some(Command::Spectrum) => Experiment::Spectrum,
        Some(Command::OracleCrossCheck) => Experiment::OracleCrossCheck,
        None => cfg.experiment.ok_or_else(|| Error::Config("no subcommand and no `experiment` in the config".into()))?,
    };
    let given: &[PathBuf] = match &cli.command {
        Some(Command::Verify { solutions }) | Some(Command::Uniqueness { solutions }) => solutions,
        _ => &[],
    };
    pool.install(|| match which {
        Experiment::Construct => run_construct(&cfg, &out),
        Experiment::Verify => run_verify(&cfg, &out, given),
        Experiment::Uniqueness => run_uniqueness(&cfg, &out, given),
        Experiment::Spectrum => run_spectrum(&cfg, &out),
        Experiment::OracleCrossCheck => run_oracle_cross_check(&cfg, &out),
    })
}

fn csv_text(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

pub fn construct_one(cfg: &RunConfig, model: &PotentialModel, xi: &[Vec<f64>], eps: f64) -> Result<ConstructedSolution> {
    let grid = cfg.grid_for(eps, xi)?;
    let peaks = PeakSet::at_critical_points(eps, xi.to_vec(), cfg.peaks.delta)?;
    solve_peaks(&peaks, model, &grid, &cfg.outer())
}

pub const SUMMARY_HEADER: &str = "config_hash,eps,j,y_err,y_err_over_eps,phi_eps_norm,phi_eps_norm_over_eps_pow,phi_star_norm,phi_star_norm_times_log,residual_inf,rho_hat,outer_iters,certified,status";

/// Construct at every ε, write fields, sidecars and histories, and merge `summary.csv`.
pub fn run_construct(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let model = cfg.model()?;
    let xi = cfg.critical_points(&model)?;
    let tag = cfg.hash();
    let dim = cfg.potential.dim;
    let blocks: Vec<(String, bool)> = cfg
        .sweep
        .eps
        .par_iter()
        .map(|&eps| {
            let dir = eps_dir(out, eps);
            let outcome = construct_one(cfg, &model, &xi, eps).and_then(|sol| {
                fs::create_dir_all(&dir)?;
                let cert = certify_peak_solution(&sol, &cfg.certify());
                write_field(&dir.join("u.gfld"), &sol.u)?;
                write_field(&dir.join("phi.gfld"), &sol.reduction.phi)?;
                sol.reduction.write_history_csv(&dir.join("history.csv"), &tag)?;
                Sidecar {
                    config_hash: tag.clone(),
                    eps,
                    delta: sol.peaks.delta,
                    xi: sol.peaks.xi.clone(),
                    y: sol.peaks.y.clone(),
                    outer_iterations: sol.outer_iterations,
                    max_multiplier: sol.max_multiplier(),
                    certified: cert.passed(),
                }
                .write(&dir.join("meta.toml"))?;
                let rho = if cfg.sweep.probe { probe_for(&sol.peaks, &model).map(|p| p.rho_hat).unwrap_or(f64::NAN) } else { f64::NAN };
                let resid = norm_linf(&pde_residual(&sol.u, eps, &model, cfg.oracle.u_floor));
                Ok((sol, cert.passed(), rho, resid))
            });
            let mut rows = String::new();
            let ok = match outcome {
                Ok((sol, certified, rho, resid)) => {
                    let n = sol.reduction.norms;
                    let scale = eps.powf(dim as f64 / 2.0 + 2.0);
                    let log_w = eps.ln().abs().powf(1.0 - cfg.reduction.theta);
                    for j in 0..sol.peaks.k() {
                        let err = crate::math::dist2(&sol.peaks.y[j], &sol.peaks.xi[j]).sqrt();
                        let _ = writeln!(
                            rows,
                            "{tag},{eps},{j},{err:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{resid:.6e},{rho:.6e},{},{certified},{}",
                            err / eps,
                            n.eps_norm,
                            n.eps_norm / scale,
                            n.star_norm,
                            n.star_norm * log_w,
                            sol.outer_iterations,
                            if certified { "ok" } else { "not-certified" }
                        );
                    }
                    certified
                }
                Err(e) => {
                    let _ = writeln!(rows, "{tag},{eps},,,,,,,,,,,false,{}", csv_text(&e.to_string()));
                    false
                }
            };
            (rows, ok)
        })
        .collect();
    let mut text = format!("{SUMMARY_HEADER}\n");
    let mut rep = Report::new();
    for ((rows, ok), eps) in blocks.iter().zip(&cfg.sweep.eps) {
        text.push_str(rows);
        rep.lines.push(format!("construct eps={eps}: {}", if *ok { "ok" } else { "FAILED" }));
        if !ok {
            rep.raise(EXIT_CONSTRUCTION);
        }
    }
    let path = out.join("summary.csv");
    fs::write(&path, text)?;
    rep.files.push(path);
    Ok(rep)
}

/// Field file and sidecar for each requested solution (directories or `.gfld` paths).
fn solution_paths(out: &Path, given: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    let dirs: Vec<PathBuf> = if given.is_empty() {
        let mut v: Vec<PathBuf> = fs::read_dir(out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("eps")))
            .collect();
        v.sort();
        v
    } else {
        given.to_vec()
    };
    Ok(dirs
        .into_iter()
        .map(|p| {
            if p.is_dir() {
                (p.join("u.gfld"), p.join("meta.toml"))
            } else {
                let meta = p.with_file_name("meta.toml");
                (p, meta)
            }
        })
        .collect())
}

fn label_of(field: &Path) -> String {
    field
        .parent()
        .and_then(|d| d.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| field.display().to_string())
}

pub const VERIFY_HEADER: &str = "config_hash,solution,eps,pohozaev_worst_ratio,pohozaev_pass,certified,core_min,min_u,outside_sup,lsi_lhs,lsi_rhs,lsi_pass,status";

pub fn run_verify(cfg: &RunConfig, out: &Path, given: &[PathBuf]) -> Result<Report> {
    let model = cfg.model()?;
    let tag = cfg.hash();
    let mut rep = Report::new();
    let mut text = format!("{VERIFY_HEADER}\n");
    for (field, meta) in solution_paths(out, given)? {
        let label = label_of(&field);
        let checked = (|| -> Result<String> {
            let u = read_field(&field)?;
            let side = Sidecar::read(&meta)?;
            let peaks = side.peaks()?;
            let poho = pohozaev_residual(&u, &peaks, &model, cfg.verify.pohozaev_delta)?;
            let poho_ok = poho.passes(cfg.verify.tol_poho, side.eps, u.grid().dim());
            let cert = certify_field(&u, &peaks, &model, &cfg.certify());
            let (lhs, rhs) = log_sobolev_check(&u, cfg.verify.lsi_a);
            let lsi_ok = lhs <= rhs;
            poho.write_csv(&out.join(format!("pohozaev_{label}.csv")), &tag)?;
            let mut decay = String::from("config_hash,radius_over_eps,sup_outside\n");
            for (r, s) in decay_profile(&u, &peaks, &cfg.verify.decay_radii) {
                let _ = writeln!(decay, "{tag},{r},{s:.12e}");
            }
            fs::write(out.join(format!("decay_{label}.csv")), decay)?;
            let pass = poho_ok && cert.passed() && cert.core_min > 0.0 && lsi_ok;
            Ok(format!(
                "{tag},{label},{},{:.6e},{poho_ok},{},{:.6e},{:.6e},{:.6e},{lhs:.12e},{rhs:.12e},{lsi_ok},{}",
                side.eps,
                poho.worst_ratio(side.eps, u.grid().dim()),
                cert.passed(),
                cert.core_min,
                cert.min_u,
                cert.outside_sup,
                if pass { "PASS" } else { "FAIL" }
            ))
        })();
        match checked {
            Ok(row) => {
                let pass = row.ends_with("PASS");
                rep.lines.push(format!("verify {label}: {}", if pass { "PASS" } else { "FAIL" }));
                if !pass {
                    rep.raise(EXIT_VERIFICATION);
                }
                text.push_str(&row);
                text.push('\n');
            }
            Err(e) => {
                rep.lines.push(format!("verify {label}: ERROR {e}"));
                rep.raise(EXIT_VERIFICATION);
                let _ = writeln!(text, "{tag},{label},,,,,,,,,,,{}", csv_text(&format!("ERROR {e}")));
            }
        }
    }
    let path = out.join("verify_summary.csv");
    fs::write(&path, text)?;
    rep.files.push(path);
    Ok(rep)
}

pub const UNIQUENESS_HEADER: &str = "config_hash,solution,eps,runs,distinct_pairs,max_same_gap,threshold,verdict";

pub fn run_uniqueness(cfg: &RunConfig, out: &Path, given: &[PathBuf]) -> Result<Report> {
    let model = cfg.model()?;
    let tag = cfg.hash();
    let newton = cfg.newton();
    let mut rep = Report::new();
    let mut text = format!("{UNIQUENESS_HEADER}\n");
    let mut smallest_pass: Option<f64> = None;
    for (field, meta) in solution_paths(out, given)? {
        let label = label_of(&field);
        let u = read_field(&field)?;
        let side = Sidecar::read(&meta)?;
        let peaks = side.peaks()?;
        let view = SolutionView { u: &u, peaks: &peaks, model: &model };
        let mut battery: Vec<Perturbation> = if cfg.uniqueness.battery { standard_battery(view, cfg.seed)? } else { vec![] };
        for (m, c) in cfg.uniqueness.cross_well.iter().enumerate() {
            let other = PeakSet::at_critical_points(side.eps, vec![c.clone()], cfg.peaks.delta)?;
            battery.push(Perturbation { label: format!("cross-well{m}"), initial: multi_peak_sum(&other, &model, u.grid()) });
        }
        let r = uniqueness_experiment(view, &battery, &newton);
        let mut runs = String::from("config_hash,run,label,converged,newton_iterations,final_residual,maxima,error\n");
        for (i, run) in r.runs.iter().enumerate() {
            let maxima: Vec<String> = run.concentration.iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(
                runs,
                "{tag},{i},{},{},{},{:.6e},{},{}",
                run.label,
                run.converged,
                run.newton_iterations,
                run.final_residual,
                csv_text(&maxima.join(" ")),
                csv_text(run.error.as_deref().unwrap_or(""))
            );
        }
        let mut pairs = String::from("config_hash,a,b,relative_gap,kind\n");
        for p in &r.pairs {
            let _ = writeln!(pairs, "{tag},{},{},{:.6e},{:?}", p.a, p.b, p.relative_gap, p.kind);
        }
        fs::write(out.join(format!("uniqueness_runs_{label}.csv")), runs)?;
        fs::write(out.join(format!("uniqueness_pairs_{label}.csv")), pairs)?;
        let verdict = match r.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        };
        let _ = writeln!(
            text,
            "{tag},{label},{},{},{},{:.6e},{:.1e},{verdict}",
            side.eps,
            r.runs.len(),
            r.distinct_pairs(),
            r.max_same_gap(),
            r.threshold
        );
        rep.lines.push(format!("uniqueness {label}: {verdict} ({} distinct-concentration pairs)", r.distinct_pairs()));
        match r.verdict {
            Verdict::Pass => smallest_pass = Some(smallest_pass.map_or(side.eps, |s| s.min(side.eps))),
            Verdict::Fail => rep.raise(EXIT_VERIFICATION),
            Verdict::Inconclusive => rep.raise(EXIT_INCONCLUSIVE),
        }
    }
    if let Some(e) = smallest_pass {
        rep.lines.push(format!("uniqueness: smallest eps with PASS = {e}"));
    }
    let path = out.join("uniqueness_summary.csv");
    fs::write(&path, text)?;
    rep.files.push(path);
    Ok(rep)
}

pub fn run_spectrum(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let s = &cfg.spectrum;
    let dim = cfg.potential.dim;
    let tag = cfg.hash();
    let sweep = spectrum_sweep(s.omega, dim, s.half_width, &s.ns)?;
    let mut text = String::from("config_hash,n,h,near_zero,kernel_magnitude,kernel_cosine,eigenvalues\n");
    for l in &sweep.levels {
        let ev: Vec<String> = l.eigenvalues.iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(text, "{tag},{},{:.6e},{},{:.12e},{:.12e},{}", l.n, l.h, l.near_zero, l.kernel_magnitude, l.kernel_cosine, ev.join(" "));
    }
    let _ = writeln!(text, "{tag},rate,,,{:.6e},,", sweep.rate);
    let path = out.join("spectrum.csv");
    fs::write(&path, text)?;
    let pass = sweep.rate >= s.min_rate && sweep.levels.iter().all(|l| l.near_zero == dim && l.kernel_cosine >= s.min_cosine);
    let mut rep = Report::new();
    rep.files.push(path);
    rep.lines.push(format!("spectrum: rate {:.3}, {}", sweep.rate, if pass { "PASS" } else { "FAIL" }));
    if !pass {
        rep.raise(EXIT_VERIFICATION);
    }
    Ok(rep)
}

pub const CROSS_CHECK_HEADER: &str = "config_hash,eps,h2_level,tol_newton,oracle_gap,bound,newton_iterations,status";

pub fn run_oracle_cross_check(cfg: &RunConfig, out: &Path) -> Result<Report> {
    let model = cfg.model()?;
    let xi = cfg.critical_points(&model)?;
    let tag = cfg.hash();
    let newton = cfg.newton();
    let rows: Vec<(String, u8)> = cfg
        .sweep
        .eps
        .par_iter()
        .map(|&eps| {
            let sol = match construct_one(cfg, &model, &xi, eps) {
                Ok(s) => s,
                Err(e) => return (format!("{tag},{eps},,,,,,{}", csv_text(&format!("construction failed: {e}"))), EXIT_CONSTRUCTION),
            };
            let h2 = norm_linf(&pde_residual(&sol.u, eps, &model, newton.u_floor));
            match newton_solve(&sol.u, eps, &model, &newton) {
                Ok(o) => {
                    let gap = norm_linf(&o.u.combine(1.0, &sol.u, -1.0).expect("same grid"));
                    let bound = 10.0 * h2.max(newton.tol_newton);
                    let ok = gap <= bound;
                    (
                        format!("{tag},{eps},{h2:.6e},{:.1e},{gap:.6e},{bound:.6e},{},{}", newton.tol_newton, o.iterations, if ok { "PASS" } else { "FAIL" }),
                        if ok { 0 } else { EXIT_VERIFICATION },
                    )
                }
                Err(e) => (format!("{tag},{eps},{h2:.6e},,,,,{}", csv_text(&format!("oracle failed: {e}"))), EXIT_VERIFICATION),
            }
        })
        .collect();
    let mut rep = Report::new();
    let mut text = format!("{CROSS_CHECK_HEADER}\n");
    for ((row, code), eps) in rows.iter().zip(&cfg.sweep.eps) {
        text.push_str(row);
        text.push('\n');
        rep.raise(*code);
        rep.lines.push(format!("oracle-cross-check eps={eps}: {}", if *code == 0 { "PASS" } else { "FAIL" }));
    }
    let path = out.join("oracle_cross_check.csv");
    fs::write(&path, text)?;
    rep.files.push(path);
    Ok(rep)
}

/// Reads a stored solution back as a field plus its peak set.
pub fn load_solution(dir: &Path) -> Result<(Field, PeakSet, Sidecar)> {
    let u = read_field(&dir.join("u.gfld"))?;
    let side = Sidecar::read(&dir.join("meta.toml"))?;
    Ok((u, side.peaks()?, side))
}
