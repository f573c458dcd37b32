//! The outer solve for the peak centres: find `y` with every kernel multiplier
//! `a(y)` zero, then assemble `u = G + φ` and certify its concentration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::ansatz::{gausson_energy, multi_peak_sum, PeakSet};
use crate::error::{Error, Result};
use crate::grid::{EpsMetric, Field, Grid};
use crate::math::dist2;
use crate::potential::PotentialModel;
use crate::reduction::{contraction_solve, ReductionConfig, ReductionResult};

#[derive(Debug, Clone, Copy)]
pub struct OuterConfig {
    /// `None` means `eps^N * 1e-6`.
    pub tol_outer: Option<f64>,
    /// Forward-difference step as a fraction of `delta`.
    pub fd_step: f64,
    pub max_outer: usize,
    pub max_jacobian_condition: f64,
    pub reduction: ReductionConfig,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            tol_outer: None,
            fd_step: 1e-4,
            max_outer: 25,
            max_jacobian_condition: 1e12,
            reduction: ReductionConfig::default(),
        }
    }
}

impl OuterConfig {
    pub fn tolerance(&self, eps: f64, dim: usize) -> f64 {
        self.tol_outer.unwrap_or_else(|| eps.powi(dim as i32) * 1e-6)
    }
}

/// Everything `a(y)` depends on besides `y`.
#[derive(Debug, Clone)]
pub struct PeakContext<'a> {
    pub base: &'a PeakSet,
    pub model: &'a PotentialModel,
    pub grid: &'a Grid,
    pub reduction: &'a ReductionConfig,
}

fn unflatten(y: &[f64], dim: usize) -> Vec<Vec<f64>> {
    y.chunks(dim).map(|c| c.to_vec()).collect()
}

fn flatten(y: &[Vec<f64>]) -> Vec<f64> {
    y.iter().flatten().copied().collect()
}

fn reduce_at(y: &[Vec<f64>], ctx: &PeakContext) -> Result<(PeakSet, ReductionResult)> {
    let peaks = ctx.base.with_centres(y.to_vec())?;
    let red = contraction_solve(&peaks, ctx.model, ctx.grid, ctx.reduction)?;
    Ok((peaks, red))
}

/// The multiplier vector `a(y)`, ordered `j N + i`.
pub fn multiplier_map(y: &[Vec<f64>], ctx: &PeakContext) -> Result<Vec<f64>> {
    Ok(reduce_at(y, ctx)?.1.a)
}

#[derive(Debug, Clone)]
pub struct ConstructedSolution {
    pub peaks: PeakSet,
    pub model: PotentialModel,
    pub u: Field,
    pub reduction: ReductionResult,
    pub outer_iterations: usize,
    /// `max |a|` after every outer iterate, starting with `y = ξ`.
    pub multiplier_history: Vec<f64>,
}

impl ConstructedSolution {
    pub fn max_multiplier(&self) -> f64 {
        max_abs(&self.reduction.a)
    }

    pub fn assemble(peaks: PeakSet, model: &PotentialModel, grid: &Grid, reduction: ReductionResult, outer_iterations: usize, multiplier_history: Vec<f64>) -> Result<Self> {
        let u = multi_peak_sum(&peaks, model, grid).combine(1.0, &reduction.phi, 1.0)?;
        Ok(Self { peaks, model: model.clone(), u, reduction, outer_iterations, multiplier_history })
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn jacobian(y: &[f64], a0: &[f64], step: f64, ctx: &PeakContext) -> Result<DMatrix<f64>> {
    let dim = ctx.base.dim();
    let cols: Vec<Result<Vec<f64>>> = (0..y.len())
        .into_par_iter()
        .map(|c| {
            let mut yp = y.to_vec();
            yp[c] += step;
            let a = multiplier_map(&unflatten(&yp, dim), ctx)?;
            Ok(a.iter().zip(a0).map(|(p, q)| (p - q) / step).collect())
        })
        .collect();
    let mut j = DMatrix::zeros(a0.len(), y.len());
    for (c, col) in cols.into_iter().enumerate() {
        j.column_mut(c).copy_from_slice(&col?);
    }
    Ok(j)
}

fn condition(j: &DMatrix<f64>) -> f64 {
    let sv = j.clone().svd(false, false).singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Quasi-Newton on `y -> a(y)` from `y = peaks0.y`: one forward-difference Jacobian,
/// then Broyden updates.
pub fn solve_peaks(peaks0: &PeakSet, model: &PotentialModel, grid: &Grid, cfg: &OuterConfig) -> Result<ConstructedSolution> {
    let ctx = PeakContext { base: peaks0, model, grid, reduction: &cfg.reduction };
    let dim = peaks0.dim();
    let tol = cfg.tolerance(peaks0.eps, dim);
    let mut y = flatten(&peaks0.y);
    let (mut peaks, mut red) = reduce_at(&peaks0.y, &ctx)?;
    let mut history = vec![max_abs(&red.a)];
    if history[0] <= tol {
        return ConstructedSolution::assemble(peaks, model, grid, red, 0, history);
    }
    let mut jac = jacobian(&y, &red.a, cfg.fd_step * peaks0.delta, &ctx)?;
    for it in 1..=cfg.max_outer {
        let cond = condition(&jac);
        if cond > cfg.max_jacobian_condition {
            return Err(Error::DegenerateOuter { condition: cond });
        }
        let rhs = DVector::from_iterator(red.a.len(), red.a.iter().map(|v| -v));
        let step = jac
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateOuter { condition: f64::INFINITY })?;
        let y_new: Vec<f64> = y.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let (p_new, r_new) = reduce_at(&unflatten(&y_new, dim), &ctx)?;
        let da = DVector::from_iterator(red.a.len(), r_new.a.iter().zip(&red.a).map(|(p, q)| p - q));
        let ss = step.dot(&step);
        if ss > 0.0 {
            let corr = (da - &jac * &step) / ss;
            jac += corr * step.transpose();
        }
        y = y_new;
        peaks = p_new;
        red = r_new;
        history.push(max_abs(&red.a));
        if history[it] <= tol {
            return ConstructedSolution::assemble(peaks, model, grid, red, it, history);
        }
    }
    let _ = peaks;
    Err(Error::OuterNonConvergence { iterations: cfg.max_outer, max_multiplier: max_abs(&red.a) })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifyConfig {
    /// Radius factor `R` of clause (ii).
    pub r_factor: f64,
    pub tau_small: f64,
    /// Clause (iii) passes when the energy is at most this multiple of the summed
    /// closed-form single-peak energies.
    pub energy_factor: f64,
    /// Largest accepted distance from a maximum to its critical point, in units of `eps`.
    pub max_offset: f64,
    /// Radius, in units of `eps`, of the peak region on which `u > 0` is required.
    pub positivity_radius: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self { r_factor: 6.0, tau_small: 1e-6, energy_factor: 2.0, max_offset: 1.0, positivity_radius: 5.0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certification {
    pub maxima: Vec<Vec<f64>>,
    /// Distance from each critical point to its nearest maximum, if any.
    pub offsets: Vec<Option<f64>>,
    pub clause_maxima: bool,
    pub outside_sup: f64,
    pub clause_smallness: bool,
    pub energy: f64,
    /// `energy / eps^N`
    pub energy_constant: f64,
    pub energy_reference: f64,
    pub clause_energy: bool,
    pub min_u: f64,
    /// Smallest value within `positivity_radius * eps` of the centres.
    pub core_min: f64,
}

impl Certification {
    pub fn passed(&self) -> bool {
        self.clause_maxima && self.clause_smallness && self.clause_energy
    }
}

/// Strict interior local maxima of `u` with value at least `floor`.
pub fn local_maxima(u: &Field, floor: f64) -> Vec<usize> {
    let g = u.grid();
    let mut out = Vec::new();
    for flat in 0..g.len() {
        let v = u.values[flat];
        if v < floor || g.depth(flat) == 0 {
            continue;
        }
        let is_max = (0..g.dim()).all(|a| {
            let s = g.stride(a);
            v > u.values[flat - s] && v > u.values[flat + s]
        });
        if is_max {
            out.push(flat);
        }
    }
    out
}

/// The three concentration clauses for a field `u` with centres `peaks.y`.
pub fn certify_field(u: &Field, peaks: &PeakSet, model: &PotentialModel, cfg: &CertifyConfig) -> Certification {
    let g = u.grid();
    let eps = peaks.eps;
    let maxima: Vec<Vec<f64>> = local_maxima(u, cfg.tau_small).into_iter().map(|f| g.point(f)).collect();
    let offsets: Vec<Option<f64>> = peaks
        .xi
        .iter()
        .map(|xi| maxima.iter().map(|m| dist2(m, xi).sqrt()).fold(None, |b: Option<f64>, d| Some(b.map_or(d, |b| b.min(d)))))
        .collect();
    let clause_maxima = maxima.len() == peaks.k()
        && offsets.iter().all(|o| o.is_some_and(|d| d <= cfg.max_offset * eps))
        && maxima.iter().all(|m| {
            // every maximum is claimed by a distinct critical point
            peaks.xi.iter().filter(|xi| dist2(m, xi).sqrt() <= cfg.max_offset * eps).count() == 1
        });

    let r2 = (cfg.r_factor * eps).powi(2);
    let mut x = vec![0.0; g.dim()];
    let p2 = (cfg.positivity_radius * eps).powi(2);
    let mut outside_sup = 0.0f64;
    let mut core_min = f64::INFINITY;
    for flat in 0..g.len() {
        g.point_into(flat, &mut x);
        let d2 = peaks.y.iter().map(|y| dist2(&x, y)).fold(f64::INFINITY, f64::min);
        if d2 > r2 {
            outside_sup = outside_sup.max(u.values[flat].abs());
        }
        if d2 <= p2 {
            core_min = core_min.min(u.values[flat]);
        }
    }

    let metric = EpsMetric::new(g, eps, &PotentialModel::constant(0.0, g.dim()).expect("valid"));
    let energy = metric.inner(&u.values, &u.values);
    let energy_reference: f64 = peaks.heights(model).iter().map(|&vy| gausson_energy(eps, vy, g.dim())).sum();
    Certification {
        maxima,
        offsets,
        clause_maxima,
        outside_sup,
        clause_smallness: outside_sup <= cfg.tau_small,
        energy,
        energy_constant: energy / eps.powi(g.dim() as i32),
        energy_reference,
        clause_energy: energy <= cfg.energy_factor * energy_reference,
        min_u: u.values.iter().cloned().fold(f64::INFINITY, f64::min),
        core_min,
    }
}

pub fn certify_peak_solution(sol: &ConstructedSolution, cfg: &CertifyConfig) -> Certification {
    certify_field(&sol.u, &sol.peaks, &sol.model, cfg)
}
