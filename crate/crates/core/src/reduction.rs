//! The error terms of the expansion around `G`, and the fixed-point iteration for the
//! correction `φ` on the complement of the kernel.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::ansatz::{kernel_basis, log_multi_peak, KernelBasis, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{norm_star, norm_star_core, Field, Grid, NormPair};
use crate::linop::{project_e, solve_bordered, LinearSolveConfig, LinearizedOperator};
use crate::math::{dist2, logsumexp};
use crate::nonlinearity::{df_from_log, f, f_from_log, LOG_FLOOR};
use crate::potential::PotentialModel;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ReductionConfig {
    pub theta: f64,
    pub tau: f64,
    pub tol_fix: f64,
    pub max_fix: usize,
    /// Radius, in units of `eps`, of the balls around the centres on which the star
    /// norm and the positivity guard are evaluated.
    pub core_radius: f64,
    /// Turn the two trust-region bounds into hard errors instead of recorded flags.
    pub enforce_membership: bool,
    #[serde(skip)]
    pub linear: LinearSolveConfig,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            tau: 0.1,
            tol_fix: 1e-8,
            max_fix: 50,
            core_radius: 5.0,
            enforce_membership: false,
            linear: LinearSolveConfig::default(),
        }
    }
}

/// The two trust-region bounds and whether the final iterate met them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Membership {
    /// `1 / |ln eps|^{1 - theta}`
    pub star_bound: f64,
    /// `eps^{N/2 + 1 - tau}`
    pub eps_bound: f64,
    pub star_ok: bool,
    pub eps_ok: bool,
}

impl Membership {
    pub fn evaluate(eps: f64, dim: usize, cfg: &ReductionConfig, norms: NormPair) -> Self {
        let star_bound = 1.0 / eps.ln().abs().powf(1.0 - cfg.theta);
        let eps_bound = eps.powf(0.5 * dim as f64 + 1.0 - cfg.tau);
        Self {
            star_bound,
            eps_bound,
            star_ok: norms.star_norm <= star_bound,
            eps_ok: norms.eps_norm <= eps_bound,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub norms: NormPair,
    /// Norms of `φ^{(m)} - φ^{(m-1)}`.
    pub step: NormPair,
    /// Relative residual of the bordered solve.
    pub residual: f64,
    pub krylov_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ReductionResult {
    pub phi: Field,
    /// Kernel multipliers in the convention `L φ = l + R(φ) + Σ_m a_m b_m`.
    pub a: Vec<f64>,
    /// Final norms; the star norm is the core value.
    pub norms: NormPair,
    /// Star norm over the whole grid, when it is representable.
    pub star_norm_full: Option<f64>,
    pub l_eps_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<IterationRecord>,
    pub membership: Membership,
}

impl ReductionResult {
    /// `|φ^{(m+1)} - φ^{(m)}|_* / |φ^{(m)} - φ^{(m-1)}|_*` for every `m >= 1`.
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.history
            .windows(2)
            .filter(|w| w[0].step.star_norm > 0.0)
            .map(|w| w[1].step.star_norm / w[0].step.star_norm)
            .collect()
    }

    pub fn write_history_csv(&self, path: &Path, tag: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "config_hash,iteration,eps_norm,star_norm,step_eps_norm,step_star_norm,residual")?;
        for r in &self.history {
            writeln!(
                f,
                "{tag},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
                r.iteration, r.norms.eps_norm, r.norms.star_norm, r.step.eps_norm, r.step.star_norm, r.residual
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// The two parts of `l_eps`: `Σ_j (V(y_j) - V) U_j` and `2 Σ_j U_j (log G - log U_j)`.
pub fn l_eps_parts(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> (Field, Field) {
    let heights = peaks.heights(model);
    let mut logs = vec![0.0; peaks.k()];
    let mut potential = Field::zeros(grid);
    let mut interaction = Field::zeros(grid);
    let mut x = vec![0.0; grid.dim()];
    for flat in 0..grid.len() {
        grid.point_into(flat, &mut x);
        peaks.log_profiles(&heights, &x, &mut logs);
        let log_g = logsumexp(&logs);
        let vx = model.value(&x);
        let (mut p, mut q) = (0.0, 0.0);
        for (j, (lu, vy)) in logs.iter().zip(&heights).enumerate() {
            let u = lu.exp();
            p += (vy - vx) * u;
            q += 2.0 * u * log_excess(&logs, j, log_g);
        }
        potential.values[flat] = p;
        interaction.values[flat] = q;
    }
    (potential, interaction)
}

/// `log G - log U_j` without cancellation when the other peaks are negligible at `x`.
fn log_excess(logs: &[f64], j: usize, log_g: f64) -> f64 {
    let d = log_g - logs[j];
    if d > 1.0 {
        return d;
    }
    let rest: f64 = logs.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, l)| (l - logs[j]).exp()).sum();
    rest.ln_1p()
}

pub fn compute_l_eps(peaks: &PeakSet, model: &PotentialModel, grid: &Grid) -> Field {
    let (p, q) = l_eps_parts(peaks, model, grid);
    p.combine(1.0, &q, 1.0).expect("same grid")
}

/// `(1 + t) log(1 + t) - t`, accurate for small `t`.
fn quadratic_log_remainder(t: f64) -> f64 {
    if t.abs() < 1e-4 {
        t * t * (0.5 - t / 6.0 + t * t / 12.0)
    } else {
        (1.0 + t) * t.ln_1p() - t
    }
}

fn remainder_at(g: f64, log_g: f64, p: f64) -> f64 {
    let u = g + p;
    if u > 0.0 && log_g > LOG_FLOOR && u.ln() > LOG_FLOOR {
        2.0 * g * quadratic_log_remainder(p / g)
    } else {
        f(u, LOG_FLOOR) - f_from_log(g, log_g, LOG_FLOOR) - df_from_log(log_g, LOG_FLOOR) * p
    }
}

fn core_mask(peaks: &PeakSet, grid: &Grid, core_radius: f64) -> Vec<bool> {
    let r2 = (core_radius * peaks.eps).powi(2);
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|flat| {
            grid.point_into(flat, &mut x);
            peaks.y.iter().any(|y| dist2(&x, y) <= r2)
        })
        .collect()
}

/// Precomputed `G`, `log G` and the core mask for repeated remainder evaluations.
struct Background {
    g: Vec<f64>,
    log_g: Vec<f64>,
    core: Vec<bool>,
}

impl Background {
    fn new(peaks: &PeakSet, model: &PotentialModel, grid: &Grid, core_radius: f64) -> Self {
        let log_g = log_multi_peak(peaks, model, grid);
        let g = log_g.iter().map(|l| l.exp()).collect();
        Self { g, log_g, core: core_mask(peaks, grid, core_radius) }
    }

    fn remainder(&self, phi: &Field) -> Result<Field> {
        let mut out = Field::zeros(phi.grid());
        for (flat, o) in out.values.iter_mut().enumerate() {
            let p = phi.values[flat];
            if self.core[flat] && self.g[flat] + p <= 0.0 {
                return Err(Error::TrustRegion(format!(
                    "G + phi = {:.3e} at core node {flat}",
                    self.g[flat] + p
                )));
            }
            *o = remainder_at(self.g[flat], self.log_g[flat], p);
        }
        Ok(out)
    }
}

/// `R(φ) = f(G + φ) - f(G) - f'(G) φ`. Fails if `G + φ <= 0` inside the peak cores.
pub fn compute_r_eps(phi: &Field, peaks: &PeakSet, model: &PotentialModel, core_radius: f64) -> Result<Field> {
    Background::new(peaks, model, phi.grid(), core_radius).remainder(phi)
}

/// Iterates `φ ← (P L)^{-1} (l + R(φ))` from `φ = 0`.
pub fn contraction_solve(
    peaks: &PeakSet,
    model: &PotentialModel,
    grid: &Grid,
    cfg: &ReductionConfig,
) -> Result<ReductionResult> {
    let op = LinearizedOperator::new(peaks, model, grid);
    let basis = kernel_basis(peaks, model, grid)?;
    contraction_with(peaks, model, grid, cfg, &op, &basis)
}

pub fn contraction_with(
    peaks: &PeakSet,
    model: &PotentialModel,
    grid: &Grid,
    cfg: &ReductionConfig,
    op: &LinearizedOperator,
    basis: &KernelBasis,
) -> Result<ReductionResult> {
    let eps = peaks.eps;
    let dim = grid.dim();
    let floor = eps.powf(0.5 * dim as f64 + 2.0);
    let metric = &basis.metric;
    let l_eps = compute_l_eps(peaks, model, grid);
    let l_eps_norm = metric.norm(&l_eps.values);
    let bg = Background::new(peaks, model, grid, cfg.core_radius);

    let mut phi = Field::zeros(grid);
    let mut phi_norm = 0.0f64;
    let mut history = Vec::new();
    let mut a = vec![0.0; basis.len()];
    for m in 1..=cfg.max_fix {
        let r = bg.remainder(&phi)?;
        let rhs = l_eps.combine(1.0, &r, 1.0)?;
        let sol = solve_bordered(op, &rhs, basis, &cfg.linear)?;
        let next = project_e(&sol.phi, basis)?;
        let step = next.combine(1.0, &phi, -1.0)?;
        let step_norms = NormPair {
            eps_norm: metric.norm(&step.values),
            star_norm: norm_star_core(&step, peaks, cfg.core_radius),
        };
        let norms = NormPair {
            eps_norm: metric.norm(&next.values),
            star_norm: norm_star_core(&next, peaks, cfg.core_radius),
        };
        history.push(IterationRecord {
            iteration: m,
            norms,
            step: step_norms,
            residual: sol.residual,
            krylov_iterations: sol.iterations,
        });
        if cfg.enforce_membership {
            let mem = Membership::evaluate(eps, dim, cfg, norms);
            if !(mem.star_ok && mem.eps_ok) {
                return Err(Error::TrustRegion(format!(
                    "iterate {m} left the trust region (|φ|_* = {:.3e} vs {:.3e}, |φ|_eps = {:.3e} vs {:.3e})",
                    norms.star_norm, mem.star_bound, norms.eps_norm, mem.eps_bound
                )));
            }
        }
        a = sol.a.iter().map(|v| -v).collect();
        let done = step_norms.eps_norm <= cfg.tol_fix * phi_norm.max(floor);
        phi = next;
        phi_norm = norms.eps_norm;
        if done {
            let norms = history.last().map(|h| h.norms).unwrap_or(NormPair { eps_norm: 0.0, star_norm: 0.0 });
            return Ok(ReductionResult {
                star_norm_full: norm_star(&phi, peaks).ok(),
                phi,
                a,
                norms,
                l_eps_norm,
                iterations: m,
                converged: true,
                membership: Membership::evaluate(eps, dim, cfg, norms),
                history,
            });
        }
    }
    Err(Error::NonContraction {
        iterations: cfg.max_fix,
        history: history.iter().map(|h| h.norms).collect(),
    })
}
